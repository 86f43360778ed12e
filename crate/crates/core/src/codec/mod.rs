//! Block-based image codec built on sparse coding of mean-removed blocks.

pub mod bitstream;
pub mod dpcm;
pub mod entropy;
pub mod huffman;
pub mod image;
pub mod metrics;
pub mod patches;
pub mod quant;
pub mod runlength;

pub use bitstream::{
    code_patches, decode_image, encode_coded, encode_image, reconstruct, Bitstream, BitstreamHeader, CodedPatches,
    Coder, EncodeStats, Encoded,
};
pub use dpcm::{dc_dpcm_decode, dc_dpcm_encode};
pub use huffman::HuffmanCode;
pub use image::GrayImage;
pub use metrics::{bpp, mse, psnr};
pub use patches::{from_patches, to_patches, PatchGrid};
pub use quant::{dequantize, quantize, QuantizerConfig};
pub use runlength::{runlength_decode, runlength_encode, RunSymbol};

/// Default block size.
pub const DEFAULT_PATCH_SIZE: usize = 8;
