//! Canonical Huffman codes built from symbol counts.
//!
//! Not used by the bitstream; it measures the actual coding cost of
//! quantized sources in the rate experiments.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::entropy::{BitReader, BitWriter};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HuffmanCode {
    /// Code length per symbol; 0 for symbols with zero count.
    lengths: Vec<u32>,
    codes: Vec<u64>,
}

impl HuffmanCode {
    /// Builds an optimal prefix code. A lone used symbol gets a 1-bit code.
    /// Ties are broken by the smallest symbol index, so the code is a pure
    /// function of the counts.
    pub fn from_counts(counts: &[u64]) -> Result<Self> {
        let used: Vec<usize> = (0..counts.len()).filter(|&i| counts[i] > 0).collect();
        if used.is_empty() {
            return Err(Error::invalid("no symbols with nonzero count"));
        }
        let mut lengths = vec![0u32; counts.len()];
        if used.len() == 1 {
            lengths[used[0]] = 1;
        } else {
            // nodes: leaves first, then merged nodes; parent links give depths
            let mut parent: Vec<usize> = vec![usize::MAX; used.len()];
            let mut heap: BinaryHeap<Reverse<(u64, usize)>> = used
                .iter()
                .enumerate()
                .map(|(node, &sym)| Reverse((counts[sym], node)))
                .collect();
            while heap.len() > 1 {
                let Reverse((w1, n1)) = heap.pop().unwrap();
                let Reverse((w2, n2)) = heap.pop().unwrap();
                let node = parent.len();
                parent.push(usize::MAX);
                parent[n1] = node;
                parent[n2] = node;
                heap.push(Reverse((w1 + w2, node)));
            }
            for (leaf, &sym) in used.iter().enumerate() {
                let mut depth = 0;
                let mut n = leaf;
                while parent[n] != usize::MAX {
                    n = parent[n];
                    depth += 1;
                }
                lengths[sym] = depth;
            }
        }
        if lengths.iter().any(|&l| l > 63) {
            return Err(Error::invalid("code length exceeds 63 bits"));
        }
        let mut order: Vec<usize> = used;
        order.sort_by_key(|&s| (lengths[s], s));
        let mut codes = vec![0u64; counts.len()];
        let mut code = 0u64;
        let mut prev_len = lengths[order[0]];
        for (i, &s) in order.iter().enumerate() {
            if i > 0 {
                code = (code + 1) << (lengths[s] - prev_len);
            }
            prev_len = lengths[s];
            codes[s] = code;
        }
        Ok(Self { lengths, codes })
    }

    pub fn lengths(&self) -> &[u32] {
        &self.lengths
    }

    /// Total bits to code a source with the given counts.
    pub fn cost(&self, counts: &[u64]) -> u64 {
        counts.iter().zip(&self.lengths).map(|(&c, &l)| c * l as u64).sum()
    }

    pub fn encode(&self, symbols: &[usize], w: &mut BitWriter) -> Result<()> {
        for &s in symbols {
            match self.lengths.get(s) {
                Some(&l) if l > 0 => w.write_bits(self.codes[s], l),
                _ => return Err(Error::invalid(format!("symbol {s} has no codeword"))),
            }
        }
        Ok(())
    }

    pub fn decode(&self, r: &mut BitReader<'_>, count: usize) -> Result<Vec<usize>> {
        let max_len = self.lengths.iter().copied().max().unwrap_or(0);
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let mut code = 0u64;
            let mut len = 0u32;
            let sym = loop {
                code = (code << 1) | r.read_bit()? as u64;
                len += 1;
                if let Some(s) = (0..self.lengths.len()).find(|&s| self.lengths[s] == len && self.codes[s] == code) {
                    break s;
                }
                if len >= max_len {
                    return Err(Error::malformed("invalid Huffman codeword"));
                }
            };
            out.push(sym);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dyadic_source_is_exact() {
        let code = HuffmanCode::from_counts(&[8, 4, 2, 2]).unwrap();
        assert_eq!(code.lengths(), &[1, 2, 3, 3]);
        assert_eq!(code.cost(&[8, 4, 2, 2]), 8 + 8 + 6 + 6);
    }

    #[test]
    fn single_symbol() {
        let code = HuffmanCode::from_counts(&[0, 0, 5]).unwrap();
        assert_eq!(code.lengths(), &[0, 0, 1]);
        assert!(HuffmanCode::from_counts(&[0, 0]).is_err());
    }

    #[test]
    fn kraft_equality_and_round_trip() {
        let counts = [50u64, 3, 0, 17, 1, 1, 9, 30, 2];
        let code = HuffmanCode::from_counts(&counts).unwrap();
        let kraft: f64 = code
            .lengths()
            .iter()
            .filter(|&&l| l > 0)
            .map(|&l| 0.5f64.powi(l as i32))
            .sum();
        assert!((kraft - 1.0).abs() < 1e-12);
        let symbols: Vec<usize> = (0..counts.len())
            .flat_map(|s| std::iter::repeat_n(s, counts[s] as usize))
            .collect();
        let mut w = BitWriter::new();
        code.encode(&symbols, &mut w).unwrap();
        assert_eq!(w.bit_len(), code.cost(&counts));
        let (bytes, len) = w.finish();
        let back = code
            .decode(&mut BitReader::new(&bytes, len).unwrap(), symbols.len())
            .unwrap();
        assert_eq!(back, symbols);
    }
}
