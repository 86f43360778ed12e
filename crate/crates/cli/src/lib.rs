//! Subcommands of the `gvcsr` binary.
//!
//! Exit codes: 0 success, 2 usage, 3 data integrity, 4 internal.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;

use gvcsr_core::admm::{sparse_code, Finish, SparseCodingParams};
use gvcsr_core::assets::global_dictionary;
use gvcsr_core::codec::{
    decode_image, encode_image, psnr, to_patches, Bitstream, Coder, GrayImage, QuantizerConfig, DEFAULT_PATCH_SIZE,
};
use gvcsr_core::dict_learn::{learn, LearnParams, PenaltyRestart};
use gvcsr_core::dictionary::Dictionary;
use gvcsr_core::experiments::{fig1, log_grid, rd_sweep, write_fig1_csv, write_rd_csv};
use gvcsr_core::pursuit::PursuitStop;
use gvcsr_core::setcoder::{decode_set, encode_set, ReferenceTransform, SetArchive, SetParams, TrainingConfig};
use gvcsr_core::synth::synthetic_image;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INTEGRITY: i32 = 3;
pub const EXIT_INTERNAL: i32 = 4;

/// Rate-increase factor used for coding unless overridden. Slower penalty
/// growth lets the solver settle on sparser, lower-objective supports.
pub const CODEC_RHO: f64 = 1.02;

/// Invalid invocation detected after argument parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Maps an error chain to the process exit code.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<gvcsr_core::Error>() {
            return match e {
                e if e.is_integrity() => EXIT_INTEGRITY,
                gvcsr_core::Error::InvalidArgument(_) | gvcsr_core::Error::ShapeMismatch(_) => EXIT_USAGE,
                _ => EXIT_INTERNAL,
            };
        }
    }
    EXIT_INTERNAL
}

#[derive(Debug, Parser)]
#[command(
    name = "gvcsr",
    version,
    about = "Variance-constrained sparse coding codec and experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn a dictionary from a corpus of PGM/PPM images.
    Train(TrainArgs),
    /// Encode one image into a GVCB bitstream.
    Encode(EncodeArgs),
    /// Decode a GVCB bitstream into a PGM image.
    Decode(DecodeArgs),
    /// Rate-distortion sweep over coder parameters and quantizer steps (CSV).
    RdSweep(RdSweepArgs),
    /// Per-iteration objective trace of sparse coding one image (CSV).
    Trace(TraceArgs),
    /// Coded bits per sample versus variance for Laplacian sources (CSV).
    Fig1(Fig1Args),
    /// Encode an image set into a GVCS archive.
    SetEncode(SetEncodeArgs),
    /// Decode a GVCS archive into PGM images.
    SetDecode(SetDecodeArgs),
    /// Write deterministic synthetic test images.
    Synth(SynthArgs),
}

/// Sparse-coding solver settings.
#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    /// Sparsity weight α.
    #[arg(long, default_value_t = 50.0)]
    pub alpha: f64,
    /// Variance weight β.
    #[arg(long, default_value_t = 1e-4)]
    pub beta: f64,
    /// Penalty growth factor ρ (default: 1.2 for training and traces, 1.02 for coding).
    #[arg(long)]
    pub rho: Option<f64>,
    /// Iteration cap of the sparse-coding solver.
    #[arg(long = "max-iters", default_value_t = SparseCodingParams::DEFAULT_MAX_ITERS)]
    pub max_iters: usize,
}

impl SolverArgs {
    fn params(&self, default_rho: f64) -> Result<SparseCodingParams> {
        let mut p = SparseCodingParams::new(self.alpha, self.beta).with_max_iters(self.max_iters);
        p.rho = self.rho.unwrap_or(default_rho);
        p.validate().map_err(|e| usage(e.to_string()))?;
        Ok(p)
    }
}

/// Penalty restart after each dictionary update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum RestartArg {
    /// κα / min|A_nz| of the previous round.
    Rescheduled,
    /// Restart from μ₀.
    Initial,
}

impl From<RestartArg> for PenaltyRestart {
    fn from(r: RestartArg) -> Self {
        match r {
            RestartArg::Rescheduled => PenaltyRestart::Rescheduled,
            RestartArg::Initial => PenaltyRestart::Initial,
        }
    }
}

/// Coder selector: `gvcsr`, `omp-l:L` or `omp-e:ε`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CoderSpec {
    Gvcsr,
    OmpL(usize),
    OmpE(f64),
}

impl FromStr for CoderSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let bad = || format!("invalid coder {s:?}; expected gvcsr, omp-l:L or omp-e:EPS");
        match s.split_once(':') {
            None if s == "gvcsr" => Ok(CoderSpec::Gvcsr),
            Some(("omp-l", v)) => v.parse().ok().filter(|&l| l > 0).map(CoderSpec::OmpL).ok_or_else(bad),
            Some(("omp-e", v)) => v
                .parse()
                .ok()
                .filter(|e: &f64| *e >= 0.0 && e.is_finite())
                .map(CoderSpec::OmpE)
                .ok_or_else(bad),
            _ => Err(bad()),
        }
    }
}

impl CoderSpec {
    fn coder(self, solver: &SolverArgs) -> Result<Coder> {
        Ok(match self {
            CoderSpec::Gvcsr => Coder::Gvcsr(solver.params(CODEC_RHO)?),
            CoderSpec::OmpL(l) => Coder::Omp(PursuitStop::SparsityLimit(l)),
            CoderSpec::OmpE(e) => Coder::Omp(PursuitStop::ErrorEnergy(e)),
        })
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training images.
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Completeness γ = M/N.
    #[arg(long, default_value_t = 4.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = DEFAULT_PATCH_SIZE)]
    pub patch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long = "outer-iters", default_value_t = LearnParams::DEFAULT_OUTER_ITERS)]
    pub outer_iters: usize,
    #[arg(long, value_enum, default_value_t = RestartArg::Initial)]
    pub restart: RestartArg,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct DictArg {
    /// Dictionary file; the shipped global dictionary when omitted.
    #[arg(long)]
    pub dict: Option<PathBuf>,
}

impl DictArg {
    fn load(&self) -> Result<Dictionary> {
        match &self.dict {
            Some(p) => {
                require_file(p)?;
                Dictionary::load(p).with_context(|| format!("loading dictionary {}", p.display()))
            }
            None => Ok(global_dictionary()?),
        }
    }
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub dict: DictArg,
    #[arg(long, default_value = "gvcsr")]
    pub coder: CoderSpec,
    /// Quantizer step Δ.
    #[arg(long, default_value_t = 10.0)]
    pub quant: f64,
    #[arg(long, default_value_t = DEFAULT_PATCH_SIZE)]
    pub patch: usize,
    /// Also write the encoder-side reconstruction as PGM.
    #[arg(long)]
    pub recon: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub dict: DictArg,
    /// Original image, for a PSNR report.
    #[arg(long)]
    pub reference: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RdSweepArgs {
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub dict: DictArg,
    /// α values for the variance-constrained coder.
    #[arg(long = "alpha", value_delimiter = ',', num_args = 1..)]
    pub alphas: Vec<f64>,
    /// β values for the variance-constrained coder.
    #[arg(long = "beta", value_delimiter = ',', num_args = 1.., default_value = "0.0001")]
    pub betas: Vec<f64>,
    /// Sparsity limits for OMP.
    #[arg(long = "omp-l", value_delimiter = ',', num_args = 1..)]
    pub omp_l: Vec<usize>,
    /// Error-energy targets for OMP.
    #[arg(long = "omp-e", value_delimiter = ',', num_args = 1..)]
    pub omp_e: Vec<f64>,
    #[arg(long = "quant", value_delimiter = ',', num_args = 1.., default_value = "10")]
    pub quant: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_PATCH_SIZE)]
    pub patch: usize,
    #[arg(long, default_value_t = CODEC_RHO)]
    pub rho: f64,
    #[arg(long = "max-iters", default_value_t = SparseCodingParams::DEFAULT_MAX_ITERS)]
    pub max_iters: usize,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub dict: DictArg,
    #[arg(long, default_value_t = DEFAULT_PATCH_SIZE)]
    pub patch: usize,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct Fig1Args {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Samples per variance.
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 10)]
    pub points: usize,
    #[arg(long = "min-var", default_value_t = 1.0)]
    pub min_var: f64,
    #[arg(long = "max-var", default_value_t = 1000.0)]
    pub max_var: f64,
}

#[derive(Debug, Args)]
pub struct SetEncodeArgs {
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Root dictionary; the shipped global dictionary when omitted.
    #[command(flatten)]
    pub dict: DictArg,
    #[arg(long, default_value = "gvcsr")]
    pub coder: CoderSpec,
    #[arg(long, default_value_t = 10.0)]
    pub quant: f64,
    /// Completeness of the reference-trained dictionaries.
    #[arg(long, default_value_t = 14.0)]
    pub gamma: f64,
    #[arg(long = "outer-iters", default_value_t = LearnParams::DEFAULT_OUTER_ITERS)]
    pub outer_iters: usize,
    /// Sparsity weight for reference training (defaults to --alpha).
    #[arg(long = "train-alpha")]
    pub train_alpha: Option<f64>,
    /// Variance weight for reference training (defaults to --beta).
    #[arg(long = "train-beta")]
    pub train_beta: Option<f64>,
    #[arg(long, value_enum, default_value_t = RestartArg::Initial)]
    pub restart: RestartArg,
    /// Directory for the encoder-side reconstructions.
    #[arg(long = "recon-dir")]
    pub recon_dir: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct SetDecodeArgs {
    pub input: PathBuf,
    /// Output directory; images are written as `img_<id>.pgm`.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub dict: DictArg,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long, default_value_t = 128)]
    pub width: usize,
    #[arg(long, default_value_t = 128)]
    pub height: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn require_file(p: &Path) -> Result<()> {
    if !p.is_file() {
        return Err(usage(format!("no such file: {}", p.display())));
    }
    Ok(())
}

fn load_image(p: &Path) -> Result<GrayImage> {
    require_file(p)?;
    GrayImage::load(p).with_context(|| format!("reading image {}", p.display()))
}

fn atoms_for(gamma: f64, patch: usize) -> Result<usize> {
    let m = (gamma * (patch * patch) as f64).round();
    if !(m >= 1.0) || !m.is_finite() {
        return Err(usage(format!("completeness {gamma} gives no atoms")));
    }
    Ok(m as usize)
}

fn check_patch(patch: usize) -> Result<()> {
    if patch == 0 {
        return Err(usage("patch size must be positive"));
    }
    Ok(())
}

fn quantizer(step: f64) -> Result<QuantizerConfig> {
    QuantizerConfig::new(step).map_err(|e| usage(e.to_string()))
}

/// Writes via a temporary sibling so failed commands leave no partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn file_stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(a, out),
        Command::Encode(a) => cmd_encode(a, out),
        Command::Decode(a) => cmd_decode(a, out),
        Command::RdSweep(a) => cmd_rd_sweep(a, out),
        Command::Trace(a) => cmd_trace(a, out),
        Command::Fig1(a) => cmd_fig1(a, out),
        Command::SetEncode(a) => cmd_set_encode(a, out),
        Command::SetDecode(a) => cmd_set_decode(a, out),
        Command::Synth(a) => cmd_synth(a, out),
    }
}

fn cmd_train(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    if a.inputs.is_empty() {
        return Err(usage("training corpus is empty"));
    }
    check_patch(a.patch)?;
    let m = atoms_for(a.gamma, a.patch)?;
    let images = a.inputs.iter().map(|p| load_image(p)).collect::<Result<Vec<_>>>()?;
    let mut columns = Vec::new();
    for img in &images {
        let grid = to_patches(img, a.patch)?;
        columns.extend(grid.residuals.column_iter().map(|c| c.clone_owned()));
    }
    let s = DMatrix::from_columns(&columns);
    let params = LearnParams::new(a.solver.params(SparseCodingParams::DEFAULT_RHO)?, a.seed)
        .with_outer_iters(a.outer_iters)
        .with_restart(a.restart.into());
    writeln!(out, "training n={} m={} samples={}", a.patch * a.patch, m, s.ncols())?;
    let (d, _, report) = learn(&s, m, &params)?;
    for r in &report.rounds {
        writeln!(
            out,
            "round {} fidelity={:.6e} nonzeros={} variance={:.6e} objective={:.6e} iters={} converged={} mu_start={:.3e} mu_above_bound={}",
            r.round,
            r.terms.fidelity,
            r.terms.nonzeros,
            r.terms.variance,
            r.terms.objective,
            r.inner_iterations,
            r.converged,
            r.mu_start,
            r.mu_exceeds_bound()
        )?;
    }
    write_atomic(&a.out, &d.to_bytes())?;
    writeln!(
        out,
        "wrote {} n={} m={} hash={}",
        a.out.display(),
        d.n(),
        d.m(),
        d.hash()
    )?;
    Ok(())
}

fn cmd_encode(a: EncodeArgs, out: &mut dyn Write) -> Result<()> {
    check_patch(a.patch)?;
    let img = load_image(&a.input)?;
    let d = a.dict.load()?;
    let coder = a.coder.coder(&a.solver)?;
    let enc = encode_image(&img, &d, &coder, quantizer(a.quant)?, a.patch)?;
    write_atomic(&a.out, &enc.bitstream.to_bytes())?;
    if let Some(r) = &a.recon {
        write_atomic(r, &enc.reconstruction.to_pgm())?;
    }
    let bpp = enc.stats.total_bits as f64 / img.pixel_count() as f64;
    writeln!(
        out,
        "bits={} bpp={:.6} psnr={:.4} mean_l0={:.4} dict={}",
        enc.stats.total_bits,
        bpp,
        psnr(&img, &enc.reconstruction)?,
        enc.stats.mean_coded_l0(),
        d.hash()
    )?;
    if let Some(report) = &enc.solve {
        writeln!(out, "solver {}", report.summary())?;
    }
    Ok(())
}

fn cmd_decode(a: DecodeArgs, out: &mut dyn Write) -> Result<()> {
    require_file(&a.input)?;
    let d = a.dict.load()?;
    let bs = Bitstream::load(&a.input)?;
    let img = decode_image(&bs, &d)?;
    let reference = a.reference.as_deref().map(load_image).transpose()?;
    write_atomic(&a.out, &img.to_pgm())?;
    let bpp = bs.total_bits() as f64 / img.pixel_count() as f64;
    match reference {
        Some(r) => writeln!(
            out,
            "{}x{} bpp={:.6} psnr={:.4}",
            img.width(),
            img.height(),
            bpp,
            psnr(&r, &img)?
        )?,
        None => writeln!(out, "{}x{} bpp={:.6}", img.width(), img.height(), bpp)?,
    }
    Ok(())
}

fn cmd_rd_sweep(a: RdSweepArgs, out: &mut dyn Write) -> Result<()> {
    if a.inputs.is_empty() {
        return Err(usage("no input images"));
    }
    check_patch(a.patch)?;
    let mut coders = Vec::new();
    for &alpha in &a.alphas {
        for &beta in &a.betas {
            let mut p = SparseCodingParams::new(alpha, beta).with_max_iters(a.max_iters);
            p.rho = a.rho;
            p.validate().map_err(|e| usage(e.to_string()))?;
            coders.push(Coder::Gvcsr(p));
        }
    }
    coders.extend(a.omp_l.iter().map(|&l| Coder::Omp(PursuitStop::SparsityLimit(l))));
    coders.extend(a.omp_e.iter().map(|&e| Coder::Omp(PursuitStop::ErrorEnergy(e))));
    if coders.is_empty() {
        return Err(usage("no coder parameters given (--alpha, --omp-l or --omp-e)"));
    }
    for &q in &a.quant {
        quantizer(q)?;
    }
    let images = a
        .inputs
        .iter()
        .map(|p| Ok((file_stem(p), load_image(p)?)))
        .collect::<Result<Vec<_>>>()?;
    let d = a.dict.load()?;
    let rows = rd_sweep(&images, &d, &coders, &a.quant, a.patch)?;
    let mut csv = Vec::new();
    write_rd_csv(&rows, &mut csv)?;
    write_atomic(&a.out, &csv)?;
    writeln!(out, "wrote {} rows to {}", rows.len(), a.out.display())?;
    Ok(())
}

fn cmd_trace(a: TraceArgs, out: &mut dyn Write) -> Result<()> {
    check_patch(a.patch)?;
    let img = load_image(&a.input)?;
    let d = a.dict.load()?;
    let grid = to_patches(&img, a.patch)?;
    let params = a
        .solver
        .params(SparseCodingParams::DEFAULT_RHO)?
        .with_trajectory(true)
        .with_finish(Finish::None);
    let (_, report) = sparse_code(&grid.residuals, d.atoms(), &params)?;
    let mut csv = Vec::new();
    report.write_trace(&mut csv)?;
    write_atomic(&a.out, &csv)?;
    writeln!(out, "{}", report.summary())?;
    Ok(())
}

fn cmd_fig1(a: Fig1Args, out: &mut dyn Write) -> Result<()> {
    if a.points == 0 || !(a.min_var > 0.0) || !(a.max_var >= a.min_var) {
        return Err(usage("need points >= 1 and 0 < min-var <= max-var"));
    }
    let rows = fig1(&log_grid(a.min_var, a.max_var, a.points), a.samples, a.seed).map_err(|e| usage(e.to_string()))?;
    let mut csv = Vec::new();
    write_fig1_csv(&rows, &mut csv)?;
    write_atomic(&a.out, &csv)?;
    writeln!(out, "wrote {} rows to {}", rows.len(), a.out.display())?;
    Ok(())
}

fn set_params(a: &SetEncodeArgs, patch: usize) -> Result<SetParams> {
    let coder = a.coder.coder(&a.solver)?;
    let mut sparse = SparseCodingParams::new(
        a.train_alpha.unwrap_or(a.solver.alpha),
        a.train_beta.unwrap_or(a.solver.beta),
    )
    .with_max_iters(a.solver.max_iters);
    sparse.rho = a.solver.rho.unwrap_or(SparseCodingParams::DEFAULT_RHO);
    let learn = LearnParams::new(sparse, 0)
        .with_outer_iters(a.outer_iters)
        .with_restart(a.restart.into());
    learn.validate().map_err(|e| usage(e.to_string()))?;
    Ok(SetParams {
        coder,
        quant: quantizer(a.quant)?,
        patch_size: patch,
        training: TrainingConfig {
            child_atoms: atoms_for(a.gamma, patch)?,
            learn,
            transform: ReferenceTransform::Identity,
        },
    })
}

fn cmd_set_encode(a: SetEncodeArgs, out: &mut dyn Write) -> Result<()> {
    if a.inputs.is_empty() {
        return Err(usage("image set is empty"));
    }
    let images = a.inputs.iter().map(|p| load_image(p)).collect::<Result<Vec<_>>>()?;
    let global = a.dict.load()?;
    let patch = (global.n() as f64).sqrt().round() as usize;
    if patch * patch != global.n() {
        return Err(usage("root dictionary atoms are not square patches"));
    }
    let params = set_params(&a, patch)?;
    let enc = encode_set(&images, &global, &params)?;
    write_atomic(&a.out, &enc.archive)?;
    let (mut sum_bpp, mut sum_psnr) = (0.0, 0.0);
    for (i, e) in enc.manifest.entries.iter().enumerate() {
        let bpp = enc.stream_bits[i] as f64 / images[i].pixel_count() as f64;
        let p = psnr(&images[i], &enc.reconstructions[i])?;
        sum_bpp += bpp;
        sum_psnr += p;
        let parent = e.parent.map_or("-".to_string(), |p| p.to_string());
        writeln!(
            out,
            "image {} ({}) parent={} dict={} bpp={:.6} psnr={:.4}",
            i,
            file_stem(&a.inputs[i]),
            parent,
            e.dict_hash,
            bpp,
            p
        )?;
    }
    let k = images.len() as f64;
    writeln!(
        out,
        "average bpp={:.6} psnr={:.4} archive_bytes={}",
        sum_bpp / k,
        sum_psnr / k,
        enc.archive.len()
    )?;
    if let Some(dir) = &a.recon_dir {
        fs::create_dir_all(dir)?;
        for (i, r) in enc.reconstructions.iter().enumerate() {
            write_atomic(&dir.join(format!("img_{i}.pgm")), &r.to_pgm())?;
        }
    }
    Ok(())
}

fn cmd_set_decode(a: SetDecodeArgs, out: &mut dyn Write) -> Result<()> {
    require_file(&a.input)?;
    let bytes = fs::read(&a.input)?;
    let global = a.dict.load()?;
    let set = decode_set(&bytes, &global)?;
    fs::create_dir_all(&a.out)?;
    for (i, img) in set.images.iter().enumerate() {
        let e = &set.manifest.entries[i];
        write_atomic(&a.out.join(format!("img_{i}.pgm")), &img.to_pgm())?;
        writeln!(
            out,
            "image {} parent={} dict={} bpp={:.6}",
            i,
            e.parent.map_or("-".to_string(), |p| p.to_string()),
            set.dict_hashes[i],
            (e.length * 8) as f64 / img.pixel_count() as f64
        )?;
    }
    // the parse already happened inside decode_set; re-parse only for the summary
    let parsed = SetArchive::parse(&bytes)?;
    writeln!(
        out,
        "decoded {} images, child atoms={}",
        set.images.len(),
        parsed.training.child_atoms
    )?;
    Ok(())
}

fn cmd_synth(a: SynthArgs, out: &mut dyn Write) -> Result<()> {
    if a.width == 0 || a.height == 0 || a.count == 0 {
        return Err(usage("count, width and height must be positive"));
    }
    fs::create_dir_all(&a.out)?;
    for i in 0..a.count {
        let seed = a.seed + i as u64;
        let img = synthetic_image(a.width, a.height, seed)?;
        let path = a.out.join(format!("synth_{seed}.pgm"));
        write_atomic(&path, &img.to_pgm())?;
        writeln!(out, "{}", path.display())?;
    }
    Ok(())
}

/// Sizes the global worker pool from `GVCSR_THREADS` when set.
pub fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("GVCSR_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| usage(format!("GVCSR_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    Ok(())
}
