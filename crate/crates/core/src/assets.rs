//! The shipped global dictionary.
//!
//! Set coding codes the root image of every set with this fixed dictionary.
//! It was trained once on a synthetic corpus that shares no seeds with any
//! test image; [`train_global_dictionary`] reproduces it byte-for-byte
//! (see `examples/train_global.rs`).

use nalgebra::DMatrix;

use crate::admm::SparseCodingParams;
use crate::codec::to_patches;
use crate::dict_learn::{learn, LearnParams, PenaltyRestart};
use crate::dictionary::Dictionary;
use crate::error::Result;
use crate::synth::synthetic_corpus;

/// Serialized GVCD file: 8×8 patches (N = 64), 256 atoms (γ = 4).
pub const GLOBAL_DICTIONARY_BYTES: &[u8] = include_bytes!("../assets/global_p8_m256.gvcd");

/// Hex hash of [`GLOBAL_DICTIONARY_BYTES`].
pub const GLOBAL_DICTIONARY_HASH: &str = "39b6afd67d7c25a5";

pub const GLOBAL_PATCH_SIZE: usize = 8;
pub const GLOBAL_ATOMS: usize = 256;

/// First seed of the training corpus. Test corpora use seeds below 10⁶.
pub const GLOBAL_CORPUS_SEED: u64 = 7_000_000;
pub const GLOBAL_CORPUS_IMAGES: usize = 16;
pub const GLOBAL_CORPUS_SIZE: usize = 128;

pub fn global_dictionary() -> Result<Dictionary> {
    Dictionary::from_bytes(GLOBAL_DICTIONARY_BYTES)
}

pub fn global_learn_params() -> LearnParams {
    LearnParams::new(SparseCodingParams::new(25.0, 2.5e-5), GLOBAL_CORPUS_SEED)
        .with_outer_iters(10)
        .with_restart(PenaltyRestart::Initial)
}

/// Block residuals of the training corpus, image by image in raster order.
pub fn global_training_signals() -> Result<DMatrix<f64>> {
    let images = synthetic_corpus(
        GLOBAL_CORPUS_IMAGES,
        GLOBAL_CORPUS_SIZE,
        GLOBAL_CORPUS_SIZE,
        GLOBAL_CORPUS_SEED,
    )?;
    let mut columns = Vec::new();
    for img in &images {
        let grid = to_patches(img, GLOBAL_PATCH_SIZE)?;
        columns.extend(grid.residuals.column_iter().map(|c| c.clone_owned()));
    }
    Ok(DMatrix::from_columns(&columns))
}

pub fn train_global_dictionary() -> Result<Dictionary> {
    let s = global_training_signals()?;
    let (d, _, _) = learn(&s, GLOBAL_ATOMS, &global_learn_params())?;
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_dictionary_matches_its_hash() {
        let d = global_dictionary().unwrap();
        assert_eq!((d.n(), d.m()), (GLOBAL_PATCH_SIZE * GLOBAL_PATCH_SIZE, GLOBAL_ATOMS));
        assert_eq!(d.hash().to_string(), GLOBAL_DICTIONARY_HASH);
        assert_eq!(d.to_bytes(), GLOBAL_DICTIONARY_BYTES);
        for col in d.atoms().column_iter() {
            assert!((col.norm() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    #[ignore = "retrains the shipped dictionary (minutes)"]
    fn shipped_dictionary_is_reproducible() {
        assert_eq!(train_global_dictionary().unwrap().to_bytes(), GLOBAL_DICTIONARY_BYTES);
    }
}
