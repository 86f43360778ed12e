//! Experiment drivers that emit CSV for external plotting.
//!
//! Every CSV starts with a `# schema: <id>` comment line followed by a
//! header row; the ids are versioned and bumped on any column change.

use std::collections::BTreeMap;
use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::{code_patches, encode_coded, psnr, Coder, GrayImage, HuffmanCode, QuantizerConfig};
use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::pursuit::PursuitStop;
use crate::rate_model::gaussian_entropy_bound;

pub const FIG1_SCHEMA: &str = "gvcsr-fig1/1";
pub const RD_SCHEMA: &str = "gvcsr-rd/1";

/// Draws `n` zero-mean Laplacian samples of the given variance by inverse
/// CDF. Zero variance gives all zeros.
pub fn laplacian_samples(variance: f64, n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let b = (variance / 2.0).sqrt();
    (0..n)
        .map(|_| {
            let u: f64 = rng.gen_range(-0.5..0.5);
            -b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fig1Row {
    pub variance: f64,
    pub bits_per_sample: f64,
    /// `½·log₂(2πe·σ²)`; `-∞` at zero variance.
    pub gaussian_bound: f64,
}

/// `count` variances spaced evenly in log scale from `lo` to `hi`.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    (0..count)
        .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

/// For each variance: draw Laplacian samples, quantize with unit step,
/// build a Huffman code from the empirical level counts and report the
/// coded bits per sample.
pub fn fig1(variances: &[f64], samples: usize, seed: u64) -> Result<Vec<Fig1Row>> {
    if samples == 0 {
        return Err(Error::invalid("need at least one sample"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    variances
        .iter()
        .map(|&variance| {
            if !(variance >= 0.0) || !variance.is_finite() {
                return Err(Error::invalid(format!("bad variance {variance}")));
            }
            let mut counts: BTreeMap<i64, u64> = BTreeMap::new();
            for x in laplacian_samples(variance, samples, &mut rng) {
                *counts.entry(x.round() as i64).or_default() += 1;
            }
            let counts: Vec<u64> = counts.into_values().collect();
            let code = HuffmanCode::from_counts(&counts)?;
            Ok(Fig1Row {
                variance,
                bits_per_sample: code.cost(&counts) as f64 / samples as f64,
                gaussian_bound: gaussian_entropy_bound(variance)?,
            })
        })
        .collect()
}

pub fn write_fig1_csv<W: Write>(rows: &[Fig1Row], mut out: W) -> io::Result<()> {
    writeln!(out, "# schema: {FIG1_SCHEMA}")?;
    writeln!(out, "variance,bits_per_sample,gaussian_bound")?;
    for r in rows {
        writeln!(
            out,
            "{:.6e},{:.6},{:.6}",
            r.variance, r.bits_per_sample, r.gaussian_bound
        )?;
    }
    Ok(())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &t in &idx[i..=j] {
            out[t] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    cov / (vx * vy).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RdRow {
    pub image: String,
    pub coder: &'static str,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    /// Sparsity limit or error target for the pursuit coders.
    pub omp_param: Option<f64>,
    pub quant: f64,
    pub bpp: f64,
    pub psnr: f64,
    pub mean_l0: f64,
}

/// Codes every image with every coder at every quantizer step. The sparse
/// code of an (image, coder) pair is computed once and reused across steps.
pub fn rd_sweep(
    images: &[(String, GrayImage)],
    d: &Dictionary,
    coders: &[Coder],
    steps: &[f64],
    patch_size: usize,
) -> Result<Vec<RdRow>> {
    if coders.is_empty() || steps.is_empty() {
        return Err(Error::invalid("sweep lists must be nonempty"));
    }
    let quantizers = steps
        .iter()
        .map(|&s| QuantizerConfig::new(s))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (name, img) in images {
        for coder in coders {
            let coded = code_patches(img, d, coder, patch_size)?;
            let (alpha, beta, omp_param) = match coder {
                Coder::Gvcsr(p) => (Some(p.alpha), Some(p.beta), None),
                Coder::Omp(PursuitStop::SparsityLimit(l)) => (None, None, Some(*l as f64)),
                Coder::Omp(PursuitStop::ErrorEnergy(e)) => (None, None, Some(*e)),
            };
            for &q in &quantizers {
                let enc = encode_coded(&coded, d, q)?;
                rows.push(RdRow {
                    image: name.clone(),
                    coder: coder.tag(),
                    alpha,
                    beta,
                    omp_param,
                    quant: q.step(),
                    bpp: enc.stats.total_bits as f64 / img.pixel_count() as f64,
                    psnr: psnr(img, &enc.reconstruction)?,
                    mean_l0: enc.stats.mean_coded_l0(),
                });
            }
        }
    }
    Ok(rows)
}

pub fn write_rd_csv<W: Write>(rows: &[RdRow], mut out: W) -> io::Result<()> {
    let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    writeln!(out, "# schema: {RD_SCHEMA}")?;
    writeln!(out, "image,coder,alpha,beta,omp_param,quant,bpp,psnr,mean_l0")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{:.6},{:.4},{:.4}",
            r.image,
            r.coder,
            opt(r.alpha),
            opt(r.beta),
            opt(r.omp_param),
            r.quant,
            r.bpp,
            r.psnr,
            r.mean_l0
        )?;
    }
    Ok(())
}
