//! Dictionary matrix and its on-disk format.
//!
//! Layout (little-endian):
//!
//! ```text
//! "GVCD"  magic
//! u16     format version (1)
//! u32     n, patch dimension
//! u32     m, atom count
//! f64     n·m atom entries, column-major
//! u32     CRC-32 of the atom bytes
//! ```

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const DICT_MAGIC: &[u8; 4] = b"GVCD";
pub const DICT_VERSION: u16 = 1;

/// 64-bit identifier of a dictionary: the leading bytes of the SHA-256 of
/// its serialized form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DictHash(pub [u8; 8]);

impl DictHash {
    pub fn of_bytes(bytes: &[u8]) -> Self {
        let digest = Sha256::digest(bytes);
        let mut out = [0u8; 8];
        out.copy_from_slice(&digest[..8]);
        DictHash(out)
    }
}

impl fmt::Display for DictHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

/// N×M atom matrix with columns of norm at most one.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    atoms: DMatrix<f64>,
}

impl Dictionary {
    pub fn new(atoms: DMatrix<f64>) -> Result<Self> {
        if atoms.nrows() == 0 || atoms.ncols() == 0 {
            return Err(Error::invalid("dictionary must have at least one atom"));
        }
        if atoms.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("dictionary has non-finite entries"));
        }
        for (j, col) in atoms.column_iter().enumerate() {
            if col.norm_squared() > 1.0 + 1e-9 {
                return Err(Error::invalid(format!("atom {j} has norm above 1")));
            }
        }
        Ok(Self { atoms })
    }

    /// Normalizes every nonzero column to unit norm.
    pub fn from_unnormalized(mut atoms: DMatrix<f64>) -> Result<Self> {
        for mut col in atoms.column_iter_mut() {
            let norm = col.norm();
            if norm > 0.0 {
                col /= norm;
            }
        }
        Self::new(atoms)
    }

    pub fn atoms(&self) -> &DMatrix<f64> {
        &self.atoms
    }

    pub fn into_atoms(self) -> DMatrix<f64> {
        self.atoms
    }

    pub fn n(&self) -> usize {
        self.atoms.nrows()
    }

    pub fn m(&self) -> usize {
        self.atoms.ncols()
    }

    /// Completeness `γ = M/N`.
    pub fn completeness(&self) -> f64 {
        self.m() as f64 / self.n() as f64
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(18 + 8 * self.atoms.len() + 4);
        out.extend_from_slice(DICT_MAGIC);
        out.extend_from_slice(&DICT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.n() as u32).to_le_bytes());
        out.extend_from_slice(&(self.m() as u32).to_le_bytes());
        let payload_start = out.len();
        for v in self.atoms.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let crc = crc32fast::hash(&out[payload_start..]);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 14 {
            return Err(Error::Truncated);
        }
        if &bytes[..4] != DICT_MAGIC {
            return Err(Error::malformed("not a dictionary file"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != DICT_VERSION {
            return Err(Error::malformed(format!("unsupported dictionary version {version}")));
        }
        let n = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        let m = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
        let count = n
            .checked_mul(m)
            .ok_or_else(|| Error::malformed("dictionary size overflows"))?;
        let payload_len = count
            .checked_mul(8)
            .ok_or_else(|| Error::malformed("dictionary size overflows"))?;
        let expected = 14 + payload_len + 4;
        if bytes.len() < expected {
            return Err(Error::Truncated);
        }
        if bytes.len() > expected {
            return Err(Error::malformed("trailing bytes after dictionary"));
        }
        let payload = &bytes[14..14 + payload_len];
        let stored = u32::from_le_bytes(bytes[14 + payload_len..].try_into().unwrap());
        let computed = crc32fast::hash(payload);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(DMatrix::from_vec(n, m, values)).map_err(|e| Error::malformed(e.to_string()))
    }

    pub fn hash(&self) -> DictHash {
        DictHash::of_bytes(&self.to_bytes())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Dictionary {
        Dictionary::from_unnormalized(DMatrix::from_fn(3, 4, |i, j| (i * 4 + j) as f64 - 5.5)).unwrap()
    }

    #[test]
    fn layout_is_fixed() {
        let d = Dictionary::new(DMatrix::from_column_slice(1, 2, &[1.0, -0.5])).unwrap();
        let bytes = d.to_bytes();
        assert_eq!(&bytes[..4], b"GVCD");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(&bytes[6..10], &[1, 0, 0, 0]);
        assert_eq!(&bytes[10..14], &[2, 0, 0, 0]);
        assert_eq!(&bytes[14..22], &1.0f64.to_le_bytes());
        assert_eq!(&bytes[22..30], &(-0.5f64).to_le_bytes());
        assert_eq!(bytes.len(), 34);
        let crc = crc32fast::hash(&bytes[14..30]);
        assert_eq!(&bytes[30..], &crc.to_le_bytes());
    }

    #[test]
    fn round_trip() {
        let d = sample();
        let back = Dictionary::from_bytes(&d.to_bytes()).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.hash(), d.hash());
    }

    #[test]
    fn corruption_is_detected() {
        let d = sample();
        let mut bytes = d.to_bytes();
        bytes[20] ^= 0x01;
        assert!(matches!(Dictionary::from_bytes(&bytes), Err(Error::Checksum { .. })));
        let bytes = d.to_bytes();
        assert!(matches!(
            Dictionary::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Truncated)
        ));
        let mut bytes = d.to_bytes();
        bytes[0] = b'X';
        assert!(matches!(Dictionary::from_bytes(&bytes), Err(Error::Malformed(_))));
    }

    #[test]
    fn rejects_long_atoms() {
        assert!(Dictionary::new(DMatrix::from_element(2, 1, 1.0)).is_err());
    }

    #[test]
    fn completeness_ratio() {
        let d = Dictionary::from_unnormalized(DMatrix::from_element(4, 16, 1.0)).unwrap();
        assert_eq!(d.completeness(), 4.0);
    }
}
