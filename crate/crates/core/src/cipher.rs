//! MCKBA block and image encryption.
//!
//! Each `n`-bit word is added to one of the two sub-keys and then XORed or
//! XNORed with the same sub-key; the selector `B(k)` picks which.

use crate::block_codec::{blocks_to_image, image_to_blocks, BlockStream};
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::keystream::{selectors_from, BitGenerator, LogisticBits, SecretKey, SelectorSequence};
use crate::word::WordSize;
use serde::{Deserialize, Serialize};

/// Which sub-key a block is encrypted under.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KeyClass {
    /// `B(k) in {2, 3}`
    Key1,
    /// `B(k) in {0, 1}`
    Key2,
}

impl KeyClass {
    pub fn other(self) -> KeyClass {
        match self {
            KeyClass::Key1 => KeyClass::Key2,
            KeyClass::Key2 => KeyClass::Key1,
        }
    }
}

/// Whether the final mixing step is XOR (`B(k) in {1, 3}`) or XNOR (`{0, 2}`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParityClass {
    Xor,
    Xnor,
}

impl ParityClass {
    /// XOR-mode blocks leave `J' ^ J` even, XNOR-mode blocks make it odd.
    pub fn from_pair(plain: u64, cipher: u64) -> ParityClass {
        if (plain ^ cipher) & 1 == 0 {
            ParityClass::Xor
        } else {
            ParityClass::Xnor
        }
    }
}

/// Operation selector `B(k) in {0, 1, 2, 3}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Selector {
    Key2Xnor = 0,
    Key2Xor = 1,
    Key1Xnor = 2,
    Key1Xor = 3,
}

impl Selector {
    pub const ALL: [Selector; 4] = [
        Selector::Key2Xnor,
        Selector::Key2Xor,
        Selector::Key1Xnor,
        Selector::Key1Xor,
    ];

    /// `B = 2 * high + low`.
    pub fn from_bits(high: bool, low: bool) -> Selector {
        Selector::ALL[2 * high as usize + low as usize]
    }

    pub fn from_parts(class: KeyClass, parity: ParityClass) -> Selector {
        match (class, parity) {
            (KeyClass::Key1, ParityClass::Xor) => Selector::Key1Xor,
            (KeyClass::Key1, ParityClass::Xnor) => Selector::Key1Xnor,
            (KeyClass::Key2, ParityClass::Xor) => Selector::Key2Xor,
            (KeyClass::Key2, ParityClass::Xnor) => Selector::Key2Xnor,
        }
    }

    pub fn value(self) -> u8 {
        self as u8
    }

    pub fn key_class(self) -> KeyClass {
        if self.value() >= 2 {
            KeyClass::Key1
        } else {
            KeyClass::Key2
        }
    }

    pub fn parity(self) -> ParityClass {
        if self.value() & 1 == 1 {
            ParityClass::Xor
        } else {
            ParityClass::Xnor
        }
    }

    /// `(B + 2) mod 4`: the same operation with the sub-keys swapped.
    pub fn swapped(self) -> Selector {
        Selector::ALL[(self.value() as usize + 2) % 4]
    }
}

impl TryFrom<u8> for Selector {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        Selector::ALL
            .get(v as usize)
            .copied()
            .ok_or_else(|| Error::invalid(format!("selector {v} not in 0..=3")))
    }
}

impl From<Selector> for u8 {
    fn from(s: Selector) -> u8 {
        s.value()
    }
}

#[inline]
fn subkey(key1: u64, key2: u64, selector: Selector) -> u64 {
    match selector.key_class() {
        KeyClass::Key1 => key1,
        KeyClass::Key2 => key2,
    }
}

/// Encrypts one word under explicit sub-keys; the `x0` part of the key is irrelevant here.
#[inline]
pub fn encrypt_word(ws: WordSize, word: u64, key1: u64, key2: u64, selector: Selector) -> u64 {
    let k = subkey(key1, key2, selector);
    let sum = ws.add(word, k);
    match selector.parity() {
        ParityClass::Xor => sum ^ k,
        ParityClass::Xnor => ws.xnor(sum, k),
    }
}

#[inline]
pub fn decrypt_word(ws: WordSize, word: u64, key1: u64, key2: u64, selector: Selector) -> u64 {
    let k = subkey(key1, key2, selector);
    let unmixed = match selector.parity() {
        ParityClass::Xor => word ^ k,
        ParityClass::Xnor => word ^ ws.not(k),
    };
    ws.sub(unmixed, k)
}

pub fn encrypt_block(word: u64, key: &SecretKey, selector: Selector) -> u64 {
    encrypt_word(key.word_size, word, key.key1, key.key2, selector)
}

pub fn decrypt_block(word: u64, key: &SecretKey, selector: Selector) -> u64 {
    decrypt_word(key.word_size, word, key.key1, key.key2, selector)
}

fn check_lengths(blocks: &BlockStream, selectors: &SelectorSequence) -> Result<()> {
    if blocks.len() != selectors.len() {
        return Err(Error::invalid(format!(
            "{} blocks but {} selectors",
            blocks.len(),
            selectors.len()
        )));
    }
    Ok(())
}

pub fn encrypt_blocks(
    blocks: &BlockStream,
    key: &SecretKey,
    selectors: &SelectorSequence,
) -> Result<BlockStream> {
    check_word_size(blocks, key)?;
    check_lengths(blocks, selectors)?;
    let words = blocks
        .words()
        .iter()
        .zip(selectors.as_slice())
        .map(|(&w, &s)| encrypt_block(w, key, s))
        .collect();
    blocks.with_words(words)
}

pub fn decrypt_blocks(
    blocks: &BlockStream,
    key: &SecretKey,
    selectors: &SelectorSequence,
) -> Result<BlockStream> {
    check_word_size(blocks, key)?;
    check_lengths(blocks, selectors)?;
    let words = blocks
        .words()
        .iter()
        .zip(selectors.as_slice())
        .map(|(&w, &s)| decrypt_block(w, key, s))
        .collect();
    blocks.with_words(words)
}

fn check_word_size(blocks: &BlockStream, key: &SecretKey) -> Result<()> {
    if blocks.word_size() != key.word_size {
        return Err(Error::invalid(format!(
            "block stream uses n = {} but key uses n = {}",
            blocks.word_size(),
            key.word_size
        )));
    }
    Ok(())
}

/// Encrypts with selector bits drawn from an arbitrary generator (e.g. an HCKBA source).
pub fn encrypt_image_with<G: BitGenerator>(
    image: &GrayImage,
    key: &SecretKey,
    gen: &mut G,
) -> Result<GrayImage> {
    let blocks = image_to_blocks(image, key.word_size);
    let selectors = selectors_from(gen, blocks.len())?;
    blocks_to_image(&encrypt_blocks(&blocks, key, &selectors)?)
}

pub fn decrypt_image_with<G: BitGenerator>(
    image: &GrayImage,
    key: &SecretKey,
    gen: &mut G,
) -> Result<GrayImage> {
    let blocks = image_to_blocks(image, key.word_size);
    let selectors = selectors_from(gen, blocks.len())?;
    blocks_to_image(&decrypt_blocks(&blocks, key, &selectors)?)
}

/// MCKBA image encryption with the logistic-map selector source.
pub fn encrypt_image(image: &GrayImage, key: &SecretKey) -> Result<GrayImage> {
    encrypt_image_with(image, key, &mut LogisticBits::new(key.x0)?)
}

pub fn decrypt_image(image: &GrayImage, key: &SecretKey) -> Result<GrayImage> {
    decrypt_image_with(image, key, &mut LogisticBits::new(key.x0)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keystream::keygen;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ws(n: u32) -> WordSize {
        WordSize::new(n).unwrap()
    }

    #[test]
    fn selector_layout() {
        for s in Selector::ALL {
            assert_eq!(Selector::from_parts(s.key_class(), s.parity()), s);
            assert_eq!(s.swapped().swapped(), s);
            assert_eq!(s.swapped().parity(), s.parity());
            assert_ne!(s.swapped().key_class(), s.key_class());
        }
        assert_eq!(Selector::from_bits(true, true), Selector::Key1Xor);
        assert_eq!(Selector::from_bits(false, false), Selector::Key2Xnor);
        assert!(Selector::try_from(4u8).is_err());
    }

    #[test]
    fn block_examples() {
        let key = SecretKey::new(ws(8), 0x5a, 0x3c, 0.5).unwrap();
        assert_eq!(encrypt_block(0, &key, Selector::Key1Xor), 0);
        assert_eq!(encrypt_block(0, &key, Selector::Key1Xnor), 0xff);
        assert_eq!(decrypt_block(0, &key, Selector::Key1Xor), 0);
        assert_eq!(decrypt_block(0xff, &key, Selector::Key1Xnor), 0);

        let zero_key2 = SecretKey::new(ws(8), 0x5a, 0, 0.5).unwrap();
        for j in 0..=255 {
            assert_eq!(encrypt_block(j, &zero_key2, Selector::Key2Xor), j);
        }
    }

    #[test]
    fn block_round_trip_exhaustive_n6() {
        let w = ws(6);
        for k1 in 0..64 {
            for k2 in 0..64 {
                for j in 0..64 {
                    for s in Selector::ALL {
                        let c = encrypt_word(w, j, k1, k2, s);
                        assert_eq!(decrypt_word(w, c, k1, k2, s), j);
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn block_round_trip(n in 2u32..=64, j in any::<u64>(), k1 in any::<u64>(), k2 in any::<u64>(), s in 0u8..4) {
            let w = ws(n);
            let (j, k1, k2) = (j & w.mask(), k1 & w.mask(), k2 & w.mask());
            let s = Selector::try_from(s).unwrap();
            prop_assert_eq!(decrypt_word(w, encrypt_word(w, j, k1, k2, s), k1, k2, s), j);
        }

        #[test]
        fn parity_law(n in 2u32..=64, j in any::<u64>(), k1 in any::<u64>(), k2 in any::<u64>(), s in 0u8..4) {
            let w = ws(n);
            let (j, k1, k2) = (j & w.mask(), k1 & w.mask(), k2 & w.mask());
            let s = Selector::try_from(s).unwrap();
            let c = encrypt_word(w, j, k1, k2, s);
            prop_assert_eq!(ParityClass::from_pair(j, c), s.parity());
        }

        #[test]
        fn msb_of_key_is_irrelevant(n in 2u32..=64, c in any::<u64>(), k1 in any::<u64>(), k2 in any::<u64>(), s in 0u8..4) {
            let w = ws(n);
            let (c, k1, k2) = (c & w.mask(), k1 & w.mask(), k2 & w.mask());
            let s = Selector::try_from(s).unwrap();
            let base = decrypt_word(w, c, k1, k2, s);
            prop_assert_eq!(decrypt_word(w, c, k1 ^ w.msb(), k2, s), base);
            prop_assert_eq!(decrypt_word(w, c, k1, k2 ^ w.msb(), s), base);
        }

        #[test]
        fn key_swap_equivalence(n in 2u32..=64, j in any::<u64>(), k1 in any::<u64>(), k2 in any::<u64>(), s in 0u8..4) {
            let w = ws(n);
            let (j, k1, k2) = (j & w.mask(), k1 & w.mask(), k2 & w.mask());
            let s = Selector::try_from(s).unwrap();
            prop_assert_eq!(encrypt_word(w, j, k1, k2, s), encrypt_word(w, j, k2, k1, s.swapped()));
        }
    }

    #[test]
    fn all_zero_image_encrypts_to_extremes() {
        let img = GrayImage::filled(8, 8, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let key = keygen(ws(8), &mut rng);
        let enc = encrypt_image(&img, &key).unwrap();
        let sels = key.selectors(64).unwrap();
        for (px, s) in enc.pixels().iter().zip(sels.as_slice()) {
            let expected = match s.parity() {
                ParityClass::Xor => 0,
                ParityClass::Xnor => 255,
            };
            assert_eq!(*px, expected);
        }
    }

    #[test]
    fn image_round_trip_all_word_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [2, 3, 5, 8, 13, 16, 24, 31, 32, 33, 64] {
            let key = keygen(ws(n), &mut rng);
            let (w, h) = (rng.gen_range(1..12), rng.gen_range(1..12));
            let pixels = (0..w * h).map(|_| rng.gen()).collect();
            let img = GrayImage::new(w, h, pixels).unwrap();
            let enc = encrypt_image(&img, &key).unwrap();
            assert_eq!(enc.dims(), img.dims());
            assert_eq!(decrypt_image(&enc, &key).unwrap(), img, "n = {n}");
        }
    }

    #[test]
    fn rejects_mismatched_word_size() {
        let key = SecretKey::new(ws(16), 1, 2, 0.3).unwrap();
        let img = GrayImage::filled(4, 4, 7).unwrap();
        let blocks = image_to_blocks(&img, ws(8));
        let sels = key.selectors(blocks.len()).unwrap();
        assert!(encrypt_blocks(&blocks, &key, &sels).is_err());
    }
}
