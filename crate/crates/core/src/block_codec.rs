//! Packing of 8-bit pixels into `n`-bit words.
//!
//! The image is read as one long bitstring: bit `l` is bit `l mod 8` of pixel
//! `l / 8` (LSB first), and word `k` takes bits `n*k .. n*k + n - 1` with bit
//! `n*k + j` at weight `2^j`. A tail that does not fill a whole word is padded
//! with zero bits.

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::word::WordSize;

/// An image rendered as a sequence of `n`-bit words.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockStream {
    word_size: WordSize,
    words: Vec<u64>,
    pad_bits: usize,
    source_dims: (usize, usize),
}

impl BlockStream {
    /// Builds a stream from raw words, checking every invariant.
    pub fn new(
        word_size: WordSize,
        words: Vec<u64>,
        pad_bits: usize,
        source_dims: (usize, usize),
    ) -> Result<Self> {
        let (w, h) = source_dims;
        if w == 0 || h == 0 {
            return Err(Error::invalid("source dimensions must be positive"));
        }
        let data_bits = 8 * w * h;
        let n = word_size.bits() as usize;
        if words.len() != word_size.words_for_bits(data_bits) {
            return Err(Error::invalid(format!(
                "{w}x{h} image at n = {n} needs {} words, got {}",
                word_size.words_for_bits(data_bits),
                words.len()
            )));
        }
        if pad_bits != n * words.len() - data_bits {
            return Err(Error::invalid(format!(
                "pad_bits = {pad_bits} inconsistent with dimensions (expected {})",
                n * words.len() - data_bits
            )));
        }
        if let Some(bad) = words.iter().find(|&&v| !word_size.contains(v)) {
            return Err(Error::invalid(format!("word {bad:#x} exceeds {n} bits")));
        }
        Ok(BlockStream {
            word_size,
            words,
            pad_bits,
            source_dims,
        })
    }

    /// Same layout, different word contents.
    pub fn with_words(&self, words: Vec<u64>) -> Result<Self> {
        Self::new(self.word_size, words, self.pad_bits, self.source_dims)
    }

    pub fn word_size(&self) -> WordSize {
        self.word_size
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn pad_bits(&self) -> usize {
        self.pad_bits
    }

    pub fn source_dims(&self) -> (usize, usize) {
        self.source_dims
    }
}

/// Number of words an image of the given size occupies at word size `n`.
pub fn block_count(width: usize, height: usize, word_size: WordSize) -> usize {
    word_size.words_for_bits(8 * width * height)
}

pub fn image_to_blocks(image: &GrayImage, word_size: WordSize) -> BlockStream {
    let n = word_size.bits();
    let count = block_count(image.width(), image.height(), word_size);
    let mut words = Vec::with_capacity(count);
    // Holds at most n + 7 pending bits, so u128 never overflows for n <= 64.
    let mut acc: u128 = 0;
    let mut fill = 0u32;
    for &px in image.pixels() {
        acc |= (px as u128) << fill;
        fill += 8;
        while fill >= n {
            words.push((acc as u64) & word_size.mask());
            acc >>= n;
            fill -= n;
        }
    }
    if fill > 0 {
        words.push(acc as u64);
    }
    debug_assert_eq!(words.len(), count);
    let pad_bits = n as usize * count - 8 * image.pixels().len();
    BlockStream {
        word_size,
        words,
        pad_bits,
        source_dims: image.dims(),
    }
}

/// Inverse of [`image_to_blocks`]; padding bits are discarded whatever their value.
pub fn blocks_to_image(blocks: &BlockStream) -> Result<GrayImage> {
    let (w, h) = blocks.source_dims;
    let n = blocks.word_size.bits();
    let total = w * h;
    let mut pixels = Vec::with_capacity(total);
    let mut acc: u128 = 0;
    let mut fill = 0u32;
    for &word in &blocks.words {
        acc |= (word as u128) << fill;
        fill += n;
        while fill >= 8 && pixels.len() < total {
            pixels.push(acc as u8);
            acc >>= 8;
            fill -= 8;
        }
    }
    if pixels.len() != total {
        return Err(Error::invalid("block stream too short for its dimensions"));
    }
    GrayImage::new(w, h, pixels)
}
