//! Image-set compression with reference-trained dictionaries.
//!
//! Images are linked by a minimum spanning tree over a similarity graph.
//! The root is coded with a fixed global dictionary; every other image is
//! coded with a dictionary learned from its parent's *decoded* pixels. The
//! decoder repeats that training bit-for-bit, so no dictionary is ever
//! transmitted.
//!
//! Archive layout (integers little-endian):
//!
//! ```text
//! "GVCS"  magic
//! u16     version
//! u32     image count
//! training block (see TrainingConfig::write)
//! count × { u32 id, u32 parent (0xFFFFFFFF for the root),
//!           u64 stream offset, u64 stream length, 8-byte dictionary hash }
//! concatenated single-image bitstreams
//! ```
//!
//! Offsets are relative to the first byte after the entry table.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::admm::{Finish, SparseCodingParams};
use crate::codec::{decode_image, encode_image, to_patches, Bitstream, Coder, GrayImage, QuantizerConfig};
use crate::dict_learn::{learn, LearnParams, PenaltyRestart};
use crate::dictionary::{DictHash, Dictionary};
use crate::error::{Error, Result};

pub const SET_MAGIC: &[u8; 4] = b"GVCS";
pub const SET_VERSION: u16 = 1;
const NO_PARENT: u32 = u32::MAX;

/// Side length of the thumbnails compared by [`similarity`].
pub const THUMBNAIL: usize = 64;

fn thumbnail(img: &GrayImage) -> Vec<f64> {
    let (w, h) = (img.width(), img.height());
    let range = |i: usize, len: usize| {
        let start = i * len / THUMBNAIL;
        let end = ((i + 1) * len / THUMBNAIL).max(start + 1).min(len);
        (start.min(len - 1), end)
    };
    let mut out = Vec::with_capacity(THUMBNAIL * THUMBNAIL);
    for ty in 0..THUMBNAIL {
        let (y0, y1) = range(ty, h);
        for tx in 0..THUMBNAIL {
            let (x0, x1) = range(tx, w);
            let mut sum = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    sum += img.get(x, y) as f64;
                }
            }
            out.push(sum / ((y1 - y0) * (x1 - x0)) as f64);
        }
    }
    out
}

/// Mean squared difference of the two images after box-averaging each to
/// 64×64. Symmetric, zero for identical images.
pub fn similarity(a: &GrayImage, b: &GrayImage) -> f64 {
    let (ta, tb) = (thumbnail(a), thumbnail(b));
    ta.iter().zip(&tb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / ta.len() as f64
}

pub fn distance_matrix(images: &[GrayImage]) -> DMatrix<f64> {
    let thumbs: Vec<Vec<f64>> = images.par_iter().map(thumbnail).collect();
    let k = images.len();
    DMatrix::from_fn(k, k, |i, j| {
        thumbs[i]
            .iter()
            .zip(&thumbs[j])
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / (THUMBNAIL * THUMBNAIL) as f64
    })
}

/// Prim's algorithm. The root is the image with the smallest total
/// distance to all others; ties (root choice, edge weight, attachment
/// point) go to the lowest index. Returns the parent of every image.
pub fn build_mst(distances: &DMatrix<f64>) -> Result<Vec<Option<usize>>> {
    let k = distances.nrows();
    if k == 0 || distances.ncols() != k {
        return Err(Error::invalid("distance matrix must be square and nonempty"));
    }
    if distances.iter().any(|d| !d.is_finite() || *d < 0.0) {
        return Err(Error::invalid("distances must be finite and nonnegative"));
    }
    let sums: Vec<f64> = (0..k).map(|i| distances.row(i).sum()).collect();
    let root = (0..k).fold(0, |best, i| if sums[i] < sums[best] { i } else { best });

    let mut parent = vec![None; k];
    let mut in_tree = vec![false; k];
    let mut best: Vec<(f64, usize)> = vec![(f64::INFINITY, usize::MAX); k];
    in_tree[root] = true;
    let mut last = root;
    for _ in 1..k {
        for v in 0..k {
            if in_tree[v] {
                continue;
            }
            let cand = (distances[(last, v)], last);
            if cand.0 < best[v].0 || (cand.0 == best[v].0 && cand.1 < best[v].1) {
                best[v] = cand;
            }
        }
        let next = (0..k)
            .filter(|&v| !in_tree[v])
            .min_by(|&a, &b| best[a].0.total_cmp(&best[b].0).then(a.cmp(&b)))
            .unwrap();
        in_tree[next] = true;
        parent[next] = Some(best[next].1);
        last = next;
    }
    Ok(parent)
}

/// Sum of edge weights of a parent map.
pub fn tree_weight(distances: &DMatrix<f64>, parent: &[Option<usize>]) -> f64 {
    parent
        .iter()
        .enumerate()
        .filter_map(|(v, p)| p.map(|p| distances[(v, p)]))
        .sum()
}

/// Parent-before-child order: breadth-first from the root, children in
/// index order. Fails unless the map is a single spanning tree.
pub fn decode_order(parent: &[Option<usize>]) -> Result<Vec<usize>> {
    let k = parent.len();
    let roots: Vec<usize> = (0..k).filter(|&i| parent[i].is_none()).collect();
    if roots.len() != 1 {
        return Err(Error::InvalidSet(format!("expected one root, found {}", roots.len())));
    }
    let mut children = vec![Vec::new(); k];
    for (v, p) in parent.iter().enumerate() {
        if let Some(p) = *p {
            if p >= k {
                return Err(Error::InvalidSet(format!("image {v} has unknown parent {p}")));
            }
            children[p].push(v);
        }
    }
    let mut order = Vec::with_capacity(k);
    let mut queue = VecDeque::from([roots[0]]);
    while let Some(v) = queue.pop_front() {
        order.push(v);
        queue.extend(children[v].iter().copied());
    }
    if order.len() != k {
        return Err(Error::InvalidSet("parent map contains a cycle".into()));
    }
    Ok(order)
}

/// Geometric alignment of a decoded reference before training. Only the
/// identity is implemented; the id is recorded in the archive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceTransform {
    Identity,
}

impl ReferenceTransform {
    pub fn id(self) -> u8 {
        match self {
            ReferenceTransform::Identity => 0,
        }
    }

    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            0 => Ok(ReferenceTransform::Identity),
            _ => Err(Error::malformed(format!("unknown reference transform {id}"))),
        }
    }

    pub fn apply(self, reference: &GrayImage) -> GrayImage {
        match self {
            ReferenceTransform::Identity => reference.clone(),
        }
    }
}

/// Similarity measures; only thumbnail MSE exists.
pub const SIMILARITY_THUMBNAIL_MSE: u8 = 0;

/// Everything the decoder needs to retrain child dictionaries.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    /// Atoms per child dictionary.
    pub child_atoms: usize,
    pub learn: LearnParams,
    pub transform: ReferenceTransform,
}

const TRAINING_BYTES: usize = 1 + 1 + 4 + 8 * 6 + 4 + 1 + 4 + 8 + 1;

impl TrainingConfig {
    fn write(&self, out: &mut Vec<u8>) {
        let s = &self.learn.sparse;
        out.push(SIMILARITY_THUMBNAIL_MSE);
        out.push(self.transform.id());
        out.extend_from_slice(&(self.child_atoms as u32).to_le_bytes());
        for v in [s.alpha, s.beta, s.mu0, s.mu_max, s.rho, s.eps] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(s.max_iters as u32).to_le_bytes());
        out.push(s.finish.id());
        out.extend_from_slice(&(self.learn.outer_iters as u32).to_le_bytes());
        out.extend_from_slice(&self.learn.kappa.to_le_bytes());
        out.push(self.learn.restart.id());
    }

    fn read(b: &[u8]) -> Result<Self> {
        if b.len() < TRAINING_BYTES {
            return Err(Error::Truncated);
        }
        if b[0] != SIMILARITY_THUMBNAIL_MSE {
            return Err(Error::malformed(format!("unknown similarity method {}", b[0])));
        }
        let transform = ReferenceTransform::from_id(b[1])?;
        let u32_at = |o: usize| u32::from_le_bytes(b[o..o + 4].try_into().unwrap());
        let f64_at = |o: usize| f64::from_le_bytes(b[o..o + 8].try_into().unwrap());
        let child_atoms = u32_at(2) as usize;
        let mut sparse = SparseCodingParams::new(f64_at(6), f64_at(14));
        sparse.mu0 = f64_at(22);
        sparse.mu_max = f64_at(30);
        sparse.rho = f64_at(38);
        sparse.eps = f64_at(46);
        sparse.max_iters = u32_at(54) as usize;
        sparse.finish = Finish::from_id(b[58]).ok_or_else(|| Error::malformed("unknown finishing step"))?;
        let mut learn = LearnParams::new(sparse, 0).with_outer_iters(u32_at(59) as usize);
        learn.kappa = f64_at(63);
        learn.restart =
            PenaltyRestart::from_id(b[71]).ok_or_else(|| Error::malformed("unknown penalty restart rule"))?;
        learn
            .validate()
            .map_err(|e| Error::malformed(format!("training parameters: {e}")))?;
        if child_atoms == 0 {
            return Err(Error::malformed("zero child atoms"));
        }
        Ok(Self {
            child_atoms,
            learn,
            transform,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SetParams {
    pub coder: Coder,
    pub quant: QuantizerConfig,
    pub patch_size: usize,
    pub training: TrainingConfig,
}

/// Seed for a child's dictionary training, derived from the decoded
/// parent so the decoder can reproduce it.
pub fn training_seed(parent: &GrayImage) -> u64 {
    let mut h = Sha256::new();
    h.update((parent.width() as u64).to_le_bytes());
    h.update((parent.height() as u64).to_le_bytes());
    h.update(parent.pixels());
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

/// Learns the dictionary a child is coded with from its decoded parent.
pub fn train_from_reference(reference: &GrayImage, patch_size: usize, training: &TrainingConfig) -> Result<Dictionary> {
    let aligned = training.transform.apply(reference);
    let grid = to_patches(&aligned, patch_size)?;
    let mut params = training.learn.clone();
    params.seed = training_seed(reference);
    let (d, _, _) = learn(&grid.residuals, training.child_atoms, &params)?;
    Ok(d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: u32,
    pub parent: Option<u32>,
    pub offset: u64,
    pub length: u64,
    pub dict_hash: DictHash,
}

/// In-memory description of a coded set.
#[derive(Debug, Clone, PartialEq)]
pub struct SetManifest {
    pub entries: Vec<ManifestEntry>,
    /// Pairwise thumbnail distances (encoder side only; not serialized).
    pub distances: Option<DMatrix<f64>>,
}

impl SetManifest {
    pub fn parents(&self) -> Vec<Option<usize>> {
        self.entries.iter().map(|e| e.parent.map(|p| p as usize)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct EncodedSet {
    pub archive: Vec<u8>,
    pub manifest: SetManifest,
    /// Encoder-side reconstructions, by image id.
    pub reconstructions: Vec<GrayImage>,
    /// Serialized bits of each image's bitstream.
    pub stream_bits: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct DecodedSet {
    pub images: Vec<GrayImage>,
    /// Dictionary each image was decoded with, by image id.
    pub dict_hashes: Vec<DictHash>,
    pub manifest: SetManifest,
}

/// Groups a topological order into generations; siblings within one
/// generation only depend on earlier generations.
fn generations(order: &[usize], parent: &[Option<usize>]) -> Vec<Vec<usize>> {
    let mut depth = vec![0usize; parent.len()];
    let mut out: Vec<Vec<usize>> = Vec::new();
    for &v in order {
        depth[v] = parent[v].map_or(0, |p| depth[p] + 1);
        if out.len() <= depth[v] {
            out.push(Vec::new());
        }
        out[depth[v]].push(v);
    }
    out
}

pub fn encode_set(images: &[GrayImage], global: &Dictionary, params: &SetParams) -> Result<EncodedSet> {
    if images.is_empty() {
        return Err(Error::invalid("image set is empty"));
    }
    if images.len() >= NO_PARENT as usize {
        return Err(Error::invalid("too many images"));
    }
    params.training.learn.validate()?;
    let distances = distance_matrix(images);
    let parent = build_mst(&distances)?;
    let order = decode_order(&parent)?;

    let k = images.len();
    let mut recon: Vec<Option<GrayImage>> = vec![None; k];
    let mut streams: Vec<Option<(Bitstream, DictHash)>> = vec![None; k];
    for generation in generations(&order, &parent) {
        let coded: Vec<(usize, GrayImage, Bitstream, DictHash)> = generation
            .par_iter()
            .map(|&v| {
                let dict = match parent[v] {
                    None => global.clone(),
                    Some(p) => {
                        let reference = recon[p].as_ref().expect("parent coded first");
                        train_from_reference(reference, params.patch_size, &params.training)?
                    }
                };
                let enc = encode_image(&images[v], &dict, &params.coder, params.quant, params.patch_size)?;
                Ok((v, enc.reconstruction, enc.bitstream, dict.hash()))
            })
            .collect::<Result<_>>()?;
        for (v, r, bs, hash) in coded {
            recon[v] = Some(r);
            streams[v] = Some((bs, hash));
        }
    }

    let streams: Vec<(Vec<u8>, DictHash)> = streams
        .into_iter()
        .map(|s| {
            let (bs, hash) = s.unwrap();
            (bs.to_bytes(), hash)
        })
        .collect();
    let mut entries = Vec::with_capacity(k);
    let mut offset = 0u64;
    for (v, (bytes, hash)) in streams.iter().enumerate() {
        entries.push(ManifestEntry {
            id: v as u32,
            parent: parent[v].map(|p| p as u32),
            offset,
            length: bytes.len() as u64,
            dict_hash: *hash,
        });
        offset += bytes.len() as u64;
    }
    let mut archive = Vec::new();
    archive.extend_from_slice(SET_MAGIC);
    archive.extend_from_slice(&SET_VERSION.to_le_bytes());
    archive.extend_from_slice(&(k as u32).to_le_bytes());
    params.training.write(&mut archive);
    for e in &entries {
        archive.extend_from_slice(&e.id.to_le_bytes());
        archive.extend_from_slice(&e.parent.unwrap_or(NO_PARENT).to_le_bytes());
        archive.extend_from_slice(&e.offset.to_le_bytes());
        archive.extend_from_slice(&e.length.to_le_bytes());
        archive.extend_from_slice(&e.dict_hash.0);
    }
    for (bytes, _) in &streams {
        archive.extend_from_slice(bytes);
    }
    Ok(EncodedSet {
        archive,
        manifest: SetManifest {
            entries,
            distances: Some(distances),
        },
        reconstructions: recon.into_iter().map(Option::unwrap).collect(),
        stream_bits: streams.iter().map(|(b, _)| b.len() as u64 * 8).collect(),
    })
}

const ENTRY_BYTES: usize = 4 + 4 + 8 + 8 + 8;

/// Parsed archive: training settings, manifest and the stream region.
pub struct SetArchive<'a> {
    pub training: TrainingConfig,
    pub manifest: SetManifest,
    streams: &'a [u8],
}

impl<'a> SetArchive<'a> {
    pub fn parse(bytes: &'a [u8]) -> Result<Self> {
        if bytes.len() < 10 {
            return Err(Error::Truncated);
        }
        if &bytes[..4] != SET_MAGIC {
            return Err(Error::malformed("not a GVCS archive"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != SET_VERSION {
            return Err(Error::malformed(format!("unsupported archive version {version}")));
        }
        let count = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        if count == 0 {
            return Err(Error::InvalidSet("archive holds no images".into()));
        }
        let training = TrainingConfig::read(&bytes[10..])?;
        let table = 10 + TRAINING_BYTES;
        let streams_at = count
            .checked_mul(ENTRY_BYTES)
            .and_then(|t| t.checked_add(table))
            .filter(|&end| end <= bytes.len())
            .ok_or(Error::Truncated)?;
        let streams = &bytes[streams_at..];
        let mut entries = Vec::with_capacity(count);
        let mut expected_offset = 0u64;
        for i in 0..count {
            let e = &bytes[table + i * ENTRY_BYTES..table + (i + 1) * ENTRY_BYTES];
            let id = u32::from_le_bytes(e[0..4].try_into().unwrap());
            let parent = u32::from_le_bytes(e[4..8].try_into().unwrap());
            let offset = u64::from_le_bytes(e[8..16].try_into().unwrap());
            let length = u64::from_le_bytes(e[16..24].try_into().unwrap());
            if id as usize != i {
                return Err(Error::InvalidSet(format!("entry {i} carries id {id}")));
            }
            if parent != NO_PARENT && parent as usize >= count {
                return Err(Error::InvalidSet(format!(
                    "image {i} references missing parent {parent}"
                )));
            }
            if offset != expected_offset {
                return Err(Error::malformed(format!("stream {i} is not contiguous")));
            }
            expected_offset = offset.checked_add(length).ok_or(Error::Truncated)?;
            entries.push(ManifestEntry {
                id,
                parent: (parent != NO_PARENT).then_some(parent),
                offset,
                length,
                dict_hash: DictHash(e[24..32].try_into().unwrap()),
            });
        }
        if expected_offset != streams.len() as u64 {
            return Err(if expected_offset > streams.len() as u64 {
                Error::Truncated
            } else {
                Error::malformed("trailing bytes after last stream")
            });
        }
        Ok(Self {
            training,
            manifest: SetManifest {
                entries,
                distances: None,
            },
            streams,
        })
    }

    pub fn stream(&self, id: usize) -> Result<Bitstream> {
        let e = self
            .manifest
            .entries
            .get(id)
            .ok_or_else(|| Error::InvalidSet(format!("no stream for image {id}")))?;
        if e.length == 0 {
            return Err(Error::InvalidSet(format!("missing stream for image {id}")));
        }
        let start = e.offset as usize;
        Bitstream::from_bytes(&self.streams[start..start + e.length as usize])
    }
}

pub fn decode_set(archive: &[u8], global: &Dictionary) -> Result<DecodedSet> {
    let parsed = SetArchive::parse(archive)?;
    let parent = parsed.manifest.parents();
    let order = decode_order(&parent)?;
    let k = parent.len();
    let mut images: Vec<Option<GrayImage>> = vec![None; k];
    let mut hashes: Vec<Option<DictHash>> = vec![None; k];
    for generation in generations(&order, &parent) {
        let decoded: Vec<(usize, GrayImage, DictHash)> = generation
            .par_iter()
            .map(|&v| {
                let bs = parsed.stream(v)?;
                let dict = match parent[v] {
                    None => global.clone(),
                    Some(p) => {
                        let reference = images[p].as_ref().expect("parent decoded first");
                        train_from_reference(reference, bs.header.patch_size as usize, &parsed.training)?
                    }
                };
                let hash = dict.hash();
                let listed = parsed.manifest.entries[v].dict_hash;
                if hash != listed {
                    return Err(Error::HashMismatch {
                        expected: listed.to_string(),
                        found: hash.to_string(),
                    });
                }
                Ok((v, decode_image(&bs, &dict)?, hash))
            })
            .collect::<Result<_>>()?;
        for (v, img, hash) in decoded {
            images[v] = Some(img);
            hashes[v] = Some(hash);
        }
    }
    Ok(DecodedSet {
        images: images.into_iter().map(Option::unwrap).collect(),
        dict_hashes: hashes.into_iter().map(Option::unwrap).collect(),
        manifest: parsed.manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::synthetic_image;

    fn brute_force_weight(d: &DMatrix<f64>) -> f64 {
        // enumerate every parent map with node 0 as root; keep the trees
        let k = d.nrows();
        let mut best = f64::INFINITY;
        let total = k.pow((k - 1) as u32);
        for code in 0..total {
            let mut parent = vec![None; k];
            let mut c = code;
            for slot in parent.iter_mut().skip(1) {
                *slot = Some(c % k);
                c /= k;
            }
            if decode_order(&parent).is_ok() {
                best = best.min(tree_weight(d, &parent));
            }
        }
        best
    }

    #[test]
    fn similarity_examples() {
        let a = synthetic_image(80, 70, 1).unwrap().map_pixels(|v| v.min(239));
        let b = a.map_pixels(|v| v + 16);
        assert_eq!(similarity(&a, &a), 0.0);
        assert!((similarity(&a, &b) - 256.0).abs() < 1e-9);
        let c = synthetic_image(80, 70, 2).unwrap();
        assert_eq!(similarity(&a, &c), similarity(&c, &a));
    }

    #[test]
    fn mst_examples() {
        assert_eq!(build_mst(&DMatrix::zeros(1, 1)).unwrap(), vec![None]);
        let d = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 5.0, 1.0, 0.0, 2.0, 5.0, 2.0, 0.0]);
        let parent = build_mst(&d).unwrap();
        // root is image 2 (index 1): row sums 6, 3, 7
        assert_eq!(parent, vec![Some(1), None, Some(1)]);
        assert_eq!(tree_weight(&d, &parent), 3.0);
    }

    #[test]
    fn mst_chain() {
        let k = 5;
        let d = DMatrix::from_fn(k, k, |i, j| (i as f64 - j as f64).abs().powi(2));
        let parent = build_mst(&d).unwrap();
        assert_eq!(parent, vec![Some(1), Some(2), None, Some(2), Some(3)]);
    }

    #[test]
    fn mst_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for k in 2..=5 {
            for _ in 0..20 {
                let mut d = DMatrix::zeros(k, k);
                for i in 0..k {
                    for j in i + 1..k {
                        let v = rng.gen_range(0..6) as f64;
                        d[(i, j)] = v;
                        d[(j, i)] = v;
                    }
                }
                let parent = build_mst(&d).unwrap();
                assert!(decode_order(&parent).is_ok());
                assert_eq!(tree_weight(&d, &parent), brute_force_weight(&d));
            }
        }
    }

    #[test]
    fn order_rejects_bad_maps() {
        assert!(decode_order(&[None, None]).is_err());
        assert!(decode_order(&[Some(1), Some(0)]).is_err());
        assert!(decode_order(&[None, Some(2), Some(1)]).is_err());
        assert_eq!(decode_order(&[Some(2), Some(2), None]).unwrap(), vec![2, 0, 1]);
    }

    #[test]
    fn training_block_round_trip() {
        let mut sparse = SparseCodingParams::new(12.5, 3e-4)
            .with_max_iters(321)
            .with_finish(Finish::Refit);
        sparse.rho = 1.1;
        let mut learn = LearnParams::new(sparse, 0).with_outer_iters(3);
        learn.kappa = 5.0;
        learn.restart = PenaltyRestart::Initial;
        let cfg = TrainingConfig {
            child_atoms: 96,
            learn,
            transform: ReferenceTransform::Identity,
        };
        let mut bytes = Vec::new();
        cfg.write(&mut bytes);
        assert_eq!(bytes.len(), TRAINING_BYTES);
        assert_eq!(TrainingConfig::read(&bytes).unwrap(), cfg);
    }
}
