//! (zero-run, level) coding of quantized coefficient vectors.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunSymbol {
    Pair { run: u32, level: i32 },
    EndOfBlock,
}

/// Scans the vector in index order; every nonzero level is emitted with the
/// number of zeros before it, and the block is closed with an end-of-block
/// symbol.
pub fn runlength_encode(levels: &[i32]) -> Vec<RunSymbol> {
    let mut out = Vec::new();
    let mut run = 0u32;
    for &level in levels {
        if level == 0 {
            run += 1;
        } else {
            out.push(RunSymbol::Pair { run, level });
            run = 0;
        }
    }
    out.push(RunSymbol::EndOfBlock);
    out
}

/// Inverse of [`runlength_encode`] for a block of `m` coefficients. The
/// symbols must end at the first end-of-block.
pub fn runlength_decode(symbols: &[RunSymbol], m: usize) -> Result<Vec<i32>> {
    let mut out = vec![0i32; m];
    let mut pos = 0usize;
    for (i, sym) in symbols.iter().enumerate() {
        match *sym {
            RunSymbol::Pair { run, level } => {
                if level == 0 {
                    return Err(Error::malformed("zero level in run-length pair"));
                }
                let at = pos
                    .checked_add(run as usize)
                    .filter(|&at| at < m)
                    .ok_or_else(|| Error::malformed("run overflows block"))?;
                out[at] = level;
                pos = at + 1;
            }
            RunSymbol::EndOfBlock => {
                if i + 1 != symbols.len() {
                    return Err(Error::malformed("symbols after end-of-block"));
                }
                return Ok(out);
            }
        }
    }
    Err(Error::malformed("missing end-of-block"))
}
