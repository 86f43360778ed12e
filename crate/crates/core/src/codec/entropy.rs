//! Bit-level I/O and Exp-Golomb codes.
//!
//! Bits are packed MSB first. Signed values are zigzag-mapped
//! (0, −1, 1, −2, … → 0, 1, 2, 3, …) before unsigned order-0 Exp-Golomb.
//! In the coefficient stream the end-of-block symbol takes run code 0 and
//! a run of `r` zeros takes code `r + 1`.

use super::runlength::RunSymbol;
use crate::error::{Error, Result};

#[derive(Debug, Default, Clone)]
pub struct BitWriter {
    bytes: Vec<u8>,
    bit_len: u64,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn write_bit(&mut self, bit: bool) {
        let offset = (self.bit_len % 8) as u8;
        if offset == 0 {
            self.bytes.push(0);
        }
        if bit {
            *self.bytes.last_mut().unwrap() |= 0x80 >> offset;
        }
        self.bit_len += 1;
    }

    /// Writes the low `count` bits of `value`, most significant first.
    pub fn write_bits(&mut self, value: u64, count: u32) {
        for i in (0..count).rev() {
            self.write_bit((value >> i) & 1 == 1);
        }
    }

    pub fn write_ue(&mut self, value: u64) {
        let v = value + 1;
        let bits = 64 - v.leading_zeros();
        self.write_bits(0, bits - 1);
        self.write_bits(v, bits);
    }

    pub fn write_se(&mut self, value: i64) {
        self.write_ue(zigzag(value));
    }

    pub fn bit_len(&self) -> u64 {
        self.bit_len
    }

    /// Zero-padded to a byte boundary.
    pub fn finish(self) -> (Vec<u8>, u64) {
        (self.bytes, self.bit_len)
    }
}

#[derive(Debug, Clone)]
pub struct BitReader<'a> {
    bytes: &'a [u8],
    bit_len: u64,
    pos: u64,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8], bit_len: u64) -> Result<Self> {
        if bit_len > bytes.len() as u64 * 8 {
            return Err(Error::Truncated);
        }
        Ok(Self { bytes, bit_len, pos: 0 })
    }

    pub fn read_bit(&mut self) -> Result<bool> {
        if self.pos >= self.bit_len {
            return Err(Error::Truncated);
        }
        let byte = self.bytes[(self.pos / 8) as usize];
        let bit = (byte >> (7 - (self.pos % 8))) & 1 == 1;
        self.pos += 1;
        Ok(bit)
    }

    pub fn read_bits(&mut self, count: u32) -> Result<u64> {
        let mut v = 0u64;
        for _ in 0..count {
            v = (v << 1) | self.read_bit()? as u64;
        }
        Ok(v)
    }

    pub fn read_ue(&mut self) -> Result<u64> {
        let mut zeros = 0u32;
        while !self.read_bit()? {
            zeros += 1;
            if zeros > 63 {
                return Err(Error::malformed("Exp-Golomb prefix too long"));
            }
        }
        let rest = self.read_bits(zeros)?;
        Ok(((1u64 << zeros) | rest) - 1)
    }

    pub fn read_se(&mut self) -> Result<i64> {
        Ok(unzigzag(self.read_ue()?))
    }

    pub fn remaining(&self) -> u64 {
        self.bit_len - self.pos
    }
}

pub fn zigzag(v: i64) -> u64 {
    ((v << 1) ^ (v >> 63)) as u64
}

pub fn unzigzag(u: u64) -> i64 {
    ((u >> 1) as i64) ^ -((u & 1) as i64)
}

/// Length of the unsigned order-0 Exp-Golomb codeword for `v`.
pub fn ue_len(v: u64) -> u64 {
    2 * (63 - (v + 1).leading_zeros() as u64) + 1
}

pub fn se_len(v: i64) -> u64 {
    ue_len(zigzag(v))
}

pub fn write_block(w: &mut BitWriter, symbols: &[RunSymbol]) {
    for sym in symbols {
        match *sym {
            RunSymbol::EndOfBlock => w.write_ue(0),
            RunSymbol::Pair { run, level } => {
                w.write_ue(run as u64 + 1);
                w.write_se(level as i64);
            }
        }
    }
}

/// Reads one block of `m` coefficients up to and including its end-of-block.
pub fn read_block(r: &mut BitReader<'_>, m: usize) -> Result<Vec<RunSymbol>> {
    let mut symbols = Vec::new();
    let mut filled = 0usize;
    loop {
        let code = r.read_ue()?;
        if code == 0 {
            symbols.push(RunSymbol::EndOfBlock);
            return Ok(symbols);
        }
        let run = code - 1;
        filled = filled
            .checked_add(run as usize + 1)
            .filter(|&f| f <= m)
            .ok_or_else(|| Error::malformed("run overflows block"))?;
        let level = r.read_se()?;
        if level == 0 || level < i32::MIN as i64 || level > i32::MAX as i64 {
            return Err(Error::malformed("invalid coefficient level"));
        }
        symbols.push(RunSymbol::Pair {
            run: run as u32,
            level: level as i32,
        });
    }
}

pub fn block_bits(symbols: &[RunSymbol]) -> u64 {
    symbols
        .iter()
        .map(|s| match *s {
            RunSymbol::EndOfBlock => ue_len(0),
            RunSymbol::Pair { run, level } => ue_len(run as u64 + 1) + se_len(level as i64),
        })
        .sum()
}
