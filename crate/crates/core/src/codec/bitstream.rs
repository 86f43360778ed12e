//! Single-image bitstream: layout, encoder and decoder.
//!
//! Layout (integers little-endian):
//!
//! | bytes | field |
//! |-------|-------|
//! | 4 | magic `GVCB` |
//! | 2 | version |
//! | 4 | width |
//! | 4 | height |
//! | 2 | patch size |
//! | 8 | dictionary hash |
//! | 8 | quantizer step (f64) |
//! | 4 | coefficient count M |
//! | 8 | DC stream length in bits |
//! | 8 | coefficient stream length in bits |
//! | … | DC stream, zero-padded to a byte |
//! | … | coefficient stream, zero-padded to a byte |
//!
//! The DC stream holds one signed Exp-Golomb DPCM residual per block in
//! raster order; the coefficient stream holds one run-length block per
//! block, in the same order.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::dpcm::{dc_dpcm_decode, dc_levels, dpcm_encode_levels};
use super::entropy::{read_block, write_block, BitReader, BitWriter};
use super::image::GrayImage;
use super::patches::{assemble, grid_shape, to_patches, PatchGrid};
use super::quant::{quantize, QuantizerConfig};
use super::runlength::{runlength_decode, runlength_encode, RunSymbol};
use crate::admm::{sparse_code, SolveReport, SparseCodingParams};
use crate::dictionary::{DictHash, Dictionary};
use crate::error::{Error, Result};
use crate::pursuit::{omp_batch, PursuitStop};

pub const MAGIC: &[u8; 4] = b"GVCB";
pub const VERSION: u16 = 1;
pub const HEADER_BYTES: usize = 52;

#[derive(Debug, Clone, PartialEq)]
pub struct BitstreamHeader {
    pub width: u32,
    pub height: u32,
    pub patch_size: u16,
    pub dict_hash: DictHash,
    pub step: f64,
    pub m: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bitstream {
    pub header: BitstreamHeader,
    pub dc_stream: Vec<u8>,
    pub dc_bits: u64,
    pub coef_stream: Vec<u8>,
    pub coef_bits: u64,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(Error::Truncated)?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const L: usize>(&mut self) -> Result<[u8; L]> {
        Ok(self.take(L)?.try_into().unwrap())
    }
}

impl Bitstream {
    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let mut out = Vec::with_capacity(self.byte_len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&h.width.to_le_bytes());
        out.extend_from_slice(&h.height.to_le_bytes());
        out.extend_from_slice(&h.patch_size.to_le_bytes());
        out.extend_from_slice(&h.dict_hash.0);
        out.extend_from_slice(&h.step.to_le_bytes());
        out.extend_from_slice(&h.m.to_le_bytes());
        out.extend_from_slice(&self.dc_bits.to_le_bytes());
        out.extend_from_slice(&self.coef_bits.to_le_bytes());
        debug_assert_eq!(out.len(), HEADER_BYTES);
        out.extend_from_slice(&self.dc_stream);
        out.extend_from_slice(&self.coef_stream);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut c = Cursor { bytes, pos: 0 };
        if &c.array::<4>()? != MAGIC {
            return Err(Error::malformed("not a GVCB bitstream"));
        }
        let version = u16::from_le_bytes(c.array()?);
        if version != VERSION {
            return Err(Error::malformed(format!("unsupported bitstream version {version}")));
        }
        let width = u32::from_le_bytes(c.array()?);
        let height = u32::from_le_bytes(c.array()?);
        let patch_size = u16::from_le_bytes(c.array()?);
        let dict_hash = DictHash(c.array()?);
        let step = f64::from_le_bytes(c.array()?);
        let m = u32::from_le_bytes(c.array()?);
        let dc_bits = u64::from_le_bytes(c.array()?);
        let coef_bits = u64::from_le_bytes(c.array()?);
        if width == 0 || height == 0 || patch_size == 0 || m == 0 {
            return Err(Error::malformed("zero dimension in header"));
        }
        QuantizerConfig::new(step).map_err(|_| Error::malformed("invalid quantizer step"))?;
        let dc_len = usize::try_from(dc_bits.div_ceil(8)).map_err(|_| Error::Truncated)?;
        let coef_len = usize::try_from(coef_bits.div_ceil(8)).map_err(|_| Error::Truncated)?;
        let dc_stream = c.take(dc_len)?.to_vec();
        let coef_stream = c.take(coef_len)?.to_vec();
        if c.pos != bytes.len() {
            return Err(Error::malformed("trailing bytes after coefficient stream"));
        }
        Ok(Self {
            header: BitstreamHeader {
                width,
                height,
                patch_size,
                dict_hash,
                step,
                m,
            },
            dc_stream,
            dc_bits,
            coef_stream,
            coef_bits,
        })
    }

    pub fn byte_len(&self) -> usize {
        HEADER_BYTES + self.dc_stream.len() + self.coef_stream.len()
    }

    /// Serialized size in bits, including header and padding.
    pub fn total_bits(&self) -> u64 {
        self.byte_len() as u64 * 8
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// How block residuals are sparse-coded.
#[derive(Debug, Clone, PartialEq)]
pub enum Coder {
    /// Joint variance-constrained coding of all blocks of the image.
    Gvcsr(SparseCodingParams),
    /// Independent orthogonal matching pursuit per block.
    Omp(PursuitStop),
}

impl Coder {
    pub fn tag(&self) -> &'static str {
        match self {
            Coder::Gvcsr(_) => "gvcsr",
            Coder::Omp(PursuitStop::SparsityLimit(_)) => "omp-l",
            Coder::Omp(PursuitStop::ErrorEnergy(_)) => "omp-e",
        }
    }
}

/// Unquantized coefficients of every block of an image.
#[derive(Debug, Clone)]
pub struct CodedPatches {
    pub grid: PatchGrid,
    /// M×P
    pub coefficients: DMatrix<f64>,
    /// Present for the variance-constrained coder.
    pub solve: Option<SolveReport>,
}

fn check_dictionary(d: &Dictionary, patch_size: usize) -> Result<()> {
    if d.n() != patch_size * patch_size {
        return Err(Error::shape(format!(
            "dictionary atoms have length {}, patch size {patch_size} needs {}",
            d.n(),
            patch_size * patch_size
        )));
    }
    Ok(())
}

/// Splits the image into blocks and sparse-codes their residuals.
pub fn code_patches(img: &GrayImage, d: &Dictionary, coder: &Coder, patch_size: usize) -> Result<CodedPatches> {
    check_dictionary(d, patch_size)?;
    let grid = to_patches(img, patch_size)?;
    let (coefficients, solve) = match coder {
        Coder::Gvcsr(params) => {
            let (a, report) = sparse_code(&grid.residuals, d.atoms(), params)?;
            (a, Some(report))
        }
        Coder::Omp(stop) => (omp_batch(&grid.residuals, d.atoms(), *stop)?.coefficients, None),
    };
    Ok(CodedPatches {
        grid,
        coefficients,
        solve,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodeStats {
    pub patches: usize,
    /// Nonzero coefficients before quantization.
    pub nonzeros: usize,
    /// Nonzero quantized levels actually transmitted.
    pub coded_nonzeros: usize,
    pub dc_bits: u64,
    pub coef_bits: u64,
    pub total_bits: u64,
}

impl EncodeStats {
    pub fn mean_coded_l0(&self) -> f64 {
        self.coded_nonzeros as f64 / self.patches as f64
    }
}

#[derive(Debug, Clone)]
pub struct Encoded {
    pub bitstream: Bitstream,
    /// What the decoder will reconstruct, computed on the encoder side.
    pub reconstruction: GrayImage,
    pub stats: EncodeStats,
    pub solve: Option<SolveReport>,
}

/// Dequantizes `levels` (M×P), synthesizes every block from the dictionary
/// and adds the block's DC level. Shared by encoder and decoder so both
/// produce identical pixels.
pub fn reconstruct(
    d: &Dictionary,
    levels: &DMatrix<i32>,
    dc: &[i32],
    step: f64,
    patch_size: usize,
    width: usize,
    height: usize,
) -> Result<GrayImage> {
    let coeffs = levels.map(|l| l as f64 * step);
    let blocks = d.atoms() * coeffs;
    let offsets: Vec<f64> = dc.iter().map(|&v| v as f64).collect();
    assemble(&blocks, &offsets, patch_size, width, height)
}

/// Quantizes and entropy-codes already computed coefficients.
pub fn encode_coded(coded: &CodedPatches, d: &Dictionary, q: QuantizerConfig) -> Result<Encoded> {
    let grid = &coded.grid;
    check_dictionary(d, grid.patch_size)?;
    if coded.coefficients.shape() != (d.m(), grid.patch_count()) {
        return Err(Error::shape("coefficient matrix does not match dictionary and grid"));
    }
    let m = d.m();
    let level_cols: Vec<Vec<i32>> = coded
        .coefficients
        .column_iter()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|c| quantize(c.as_slice(), q))
        .collect();
    let symbols: Vec<Vec<RunSymbol>> = level_cols.par_iter().map(|l| runlength_encode(l)).collect();

    let dc = dc_levels(grid);
    let mut dc_writer = BitWriter::new();
    for r in dpcm_encode_levels(&dc, grid.cols) {
        dc_writer.write_se(r as i64);
    }
    let mut coef_writer = BitWriter::new();
    for block in &symbols {
        write_block(&mut coef_writer, block);
    }
    let (dc_stream, dc_bits) = dc_writer.finish();
    let (coef_stream, coef_bits) = coef_writer.finish();

    let levels = DMatrix::from_fn(m, grid.patch_count(), |i, p| level_cols[p][i]);
    let reconstruction = reconstruct(d, &levels, &dc, q.step(), grid.patch_size, grid.width, grid.height)?;
    let to_u32 = |v: usize, what: &str| u32::try_from(v).map_err(|_| Error::invalid(format!("{what} too large")));
    let bitstream = Bitstream {
        header: BitstreamHeader {
            width: to_u32(grid.width, "width")?,
            height: to_u32(grid.height, "height")?,
            patch_size: u16::try_from(grid.patch_size).map_err(|_| Error::invalid("patch size too large"))?,
            dict_hash: d.hash(),
            step: q.step(),
            m: to_u32(m, "atom count")?,
        },
        dc_stream,
        dc_bits,
        coef_stream,
        coef_bits,
    };
    let stats = EncodeStats {
        patches: grid.patch_count(),
        nonzeros: coded.coefficients.iter().filter(|v| **v != 0.0).count(),
        coded_nonzeros: level_cols.iter().flatten().filter(|l| **l != 0).count(),
        dc_bits,
        coef_bits,
        total_bits: bitstream.total_bits(),
    };
    Ok(Encoded {
        bitstream,
        reconstruction,
        stats,
        solve: coded.solve.clone(),
    })
}

pub fn encode_image(
    img: &GrayImage,
    d: &Dictionary,
    coder: &Coder,
    q: QuantizerConfig,
    patch_size: usize,
) -> Result<Encoded> {
    let coded = code_patches(img, d, coder, patch_size)?;
    encode_coded(&coded, d, q)
}

pub fn decode_image(bs: &Bitstream, d: &Dictionary) -> Result<GrayImage> {
    let h = &bs.header;
    let found = d.hash();
    if found != h.dict_hash {
        return Err(Error::HashMismatch {
            expected: h.dict_hash.to_string(),
            found: found.to_string(),
        });
    }
    let patch_size = h.patch_size as usize;
    if d.n() != patch_size * patch_size || d.m() != h.m as usize {
        return Err(Error::malformed("header dimensions disagree with the dictionary"));
    }
    let (width, height) = (h.width as usize, h.height as usize);
    let (cols, rows) = grid_shape(width, height, patch_size);
    let patches = cols
        .checked_mul(rows)
        .filter(|&p| (p as u64) <= bs.dc_bits && (p as u64) <= bs.coef_bits)
        .ok_or(Error::Truncated)?;
    let q = QuantizerConfig::new(h.step).map_err(|_| Error::malformed("invalid quantizer step"))?;

    let mut dc_reader = BitReader::new(&bs.dc_stream, bs.dc_bits)?;
    let residuals = (0..patches)
        .map(|_| {
            let v = dc_reader.read_se()?;
            i32::try_from(v).map_err(|_| Error::malformed("DC residual out of range"))
        })
        .collect::<Result<Vec<i32>>>()?;
    if dc_reader.remaining() != 0 {
        return Err(Error::malformed("unused bits in DC stream"));
    }
    let dc = dc_dpcm_decode(&residuals, cols)?;
    if dc.iter().any(|v| !(0..=255).contains(v)) {
        return Err(Error::malformed("DC level outside 0..=255"));
    }

    let m = d.m();
    let mut coef_reader = BitReader::new(&bs.coef_stream, bs.coef_bits)?;
    let mut levels = DMatrix::<i32>::zeros(m, patches);
    for p in 0..patches {
        let symbols = read_block(&mut coef_reader, m)?;
        let col = runlength_decode(&symbols, m)?;
        levels.column_mut(p).copy_from_slice(&col);
    }
    if coef_reader.remaining() != 0 {
        return Err(Error::malformed("unused bits in coefficient stream"));
    }
    reconstruct(d, &levels, &dc, q.step(), patch_size, width, height)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::metrics::psnr;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dct_dictionary(p: usize) -> Dictionary {
        let n = p * p;
        let basis = |k: usize, x: usize| {
            let c = if k == 0 {
                (1.0 / p as f64).sqrt()
            } else {
                (2.0 / p as f64).sqrt()
            };
            c * ((std::f64::consts::PI * (2 * x + 1) as f64 * k as f64) / (2 * p) as f64).cos()
        };
        Dictionary::new(DMatrix::from_fn(n, n, |i, j| {
            let (x, y) = (i / p, i % p);
            let (u, v) = (j / p, j % p);
            basis(u, x) * basis(v, y)
        }))
        .unwrap()
    }

    fn textured(w: usize, h: usize, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GrayImage::from_fn(w, h, |x, y| {
            let base = 100.0 + 60.0 * ((x as f64) / 7.0).sin() * ((y as f64) / 11.0).cos();
            (base + rng.gen_range(-10.0..10.0)).round().clamp(0.0, 255.0) as u8
        })
        .unwrap()
    }

    #[test]
    fn flat_image_is_all_eob() {
        let d = dct_dictionary(8);
        let img = GrayImage::filled(256, 256, 90).unwrap();
        let q = QuantizerConfig::new(8.0).unwrap();
        let enc = encode_image(&img, &d, &Coder::Omp(PursuitStop::SparsityLimit(4)), q, 8).unwrap();
        assert_eq!(enc.stats.coef_bits, 1024);
        assert_eq!(enc.reconstruction, img);
        let bpp = enc.bitstream.total_bits() as f64 / img.pixel_count() as f64;
        assert!(bpp < 0.05, "bpp {bpp}");
    }

    #[test]
    fn round_trip_matches_encoder_reconstruction() {
        let d = dct_dictionary(8);
        let img = textured(37, 29, 1);
        for coder in [
            Coder::Omp(PursuitStop::SparsityLimit(6)),
            Coder::Gvcsr(SparseCodingParams::new(20.0, 0.01)),
        ] {
            for step in [2.0, 7.5, 30.0] {
                let q = QuantizerConfig::new(step).unwrap();
                let enc = encode_image(&img, &d, &coder, q, 8).unwrap();
                let bytes = enc.bitstream.to_bytes();
                let parsed = Bitstream::from_bytes(&bytes).unwrap();
                assert_eq!(parsed, enc.bitstream);
                let dec = decode_image(&parsed, &d).unwrap();
                assert_eq!(dec, enc.reconstruction);
                assert!(psnr(&img, &dec).unwrap() > 20.0);
            }
        }
    }

    #[test]
    fn wrong_dictionary_rejected() {
        let d = dct_dictionary(8);
        let img = textured(16, 16, 2);
        let q = QuantizerConfig::new(4.0).unwrap();
        let enc = encode_image(&img, &d, &Coder::Omp(PursuitStop::SparsityLimit(3)), q, 8).unwrap();
        let mut atoms = d.atoms().clone();
        atoms.swap_columns(0, 1);
        let other = Dictionary::new(atoms).unwrap();
        let err = decode_image(&enc.bitstream, &other).unwrap_err();
        assert!(matches!(err, Error::HashMismatch { .. }));
    }

    #[test]
    fn truncation_and_garbage_rejected() {
        let d = dct_dictionary(4);
        let img = textured(16, 12, 3);
        let q = QuantizerConfig::new(3.0).unwrap();
        let enc = encode_image(&img, &d, &Coder::Omp(PursuitStop::SparsityLimit(3)), q, 4).unwrap();
        let bytes = enc.bitstream.to_bytes();
        for cut in [0, 10, HEADER_BYTES, bytes.len() - 1] {
            assert!(Bitstream::from_bytes(&bytes[..cut]).is_err());
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Bitstream::from_bytes(&extra).is_err());
        let mut bad = enc.bitstream.clone();
        bad.coef_bits -= 3;
        assert!(decode_image(&bad, &d).unwrap_err().is_integrity());
    }

    #[test]
    fn patch_mismatch_rejected() {
        let d = dct_dictionary(4);
        let img = textured(16, 16, 4);
        let q = QuantizerConfig::new(3.0).unwrap();
        assert!(encode_image(&img, &d, &Coder::Omp(PursuitStop::SparsityLimit(3)), q, 8).is_err());
    }

    #[test]
    fn rate_and_distortion_monotone_in_step() {
        let d = dct_dictionary(8);
        let img = textured(64, 64, 5);
        let coded = code_patches(&img, &d, &Coder::Omp(PursuitStop::SparsityLimit(16)), 8).unwrap();
        let mut prev_bits = u64::MAX;
        let mut prev_mse = -1.0;
        for step in [1.0, 2.0, 4.0, 8.0, 16.0, 32.0] {
            let enc = encode_coded(&coded, &d, QuantizerConfig::new(step).unwrap()).unwrap();
            let mse = crate::codec::metrics::mse(&img, &enc.reconstruction).unwrap();
            assert!(enc.stats.total_bits <= prev_bits);
            assert!(mse >= prev_mse);
            prev_bits = enc.stats.total_bits;
            prev_mse = mse;
        }
    }
}
