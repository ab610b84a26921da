//! Fixed-width words used throughout the cipher.
//!
//! Every cipher quantity is an `n`-bit residue stored in a `u64`; the helpers
//! here keep arithmetic inside `[0, 2^n)`.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;

pub const MIN_WORD_BITS: u32 = 2;
pub const MAX_WORD_BITS: u32 = 64;

/// Word size `n` in bits, `2 <= n <= 64`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct WordSize(u32);

impl WordSize {
    pub fn new(bits: u32) -> Result<Self> {
        if !(MIN_WORD_BITS..=MAX_WORD_BITS).contains(&bits) {
            return Err(Error::invalid(format!(
                "word size must be in [{MIN_WORD_BITS}, {MAX_WORD_BITS}], got {bits}"
            )));
        }
        Ok(WordSize(bits))
    }

    #[inline]
    pub fn bits(self) -> u32 {
        self.0
    }

    /// `2^n - 1`.
    #[inline]
    pub fn mask(self) -> u64 {
        u64::MAX >> (64 - self.0)
    }

    /// Mask of the `n - 1` low bits, the part of a key the attacks can recover.
    #[inline]
    pub fn low_mask(self) -> u64 {
        self.mask() >> 1
    }

    /// `2^(n-1)`.
    #[inline]
    pub fn msb(self) -> u64 {
        1u64 << (self.0 - 1)
    }

    #[inline]
    pub fn add(self, a: u64, b: u64) -> u64 {
        a.wrapping_add(b) & self.mask()
    }

    #[inline]
    pub fn sub(self, a: u64, b: u64) -> u64 {
        a.wrapping_sub(b) & self.mask()
    }

    /// XNOR truncated to `n` bits.
    #[inline]
    pub fn xnor(self, a: u64, b: u64) -> u64 {
        !(a ^ b) & self.mask()
    }

    #[inline]
    pub fn not(self, a: u64) -> u64 {
        !a & self.mask()
    }

    #[inline]
    pub fn contains(self, w: u64) -> bool {
        w & !self.mask() == 0
    }

    pub(crate) fn check(self, w: u64, what: &str) -> Result<()> {
        if self.contains(w) {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "{what} = {w:#x} does not fit in {} bits",
                self.0
            )))
        }
    }

    /// Number of `n`-bit words needed to hold `bit_len` bits.
    #[inline]
    pub fn words_for_bits(self, bit_len: usize) -> usize {
        bit_len.div_ceil(self.0 as usize)
    }
}

impl TryFrom<u32> for WordSize {
    type Error = Error;
    fn try_from(bits: u32) -> Result<Self> {
        WordSize::new(bits)
    }
}

impl From<WordSize> for u32 {
    fn from(w: WordSize) -> u32 {
        w.0
    }
}

impl fmt::Display for WordSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[inline]
pub(crate) fn bit(w: u64, i: u32) -> bool {
    (w >> i) & 1 == 1
}
