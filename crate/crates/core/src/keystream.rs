//! Pseudo-random bit generation and per-block operation selectors.
//!
//! MCKBA draws its selector bits from the logistic map `x -> 3.9 x (1 - x)`,
//! taking the 32 most significant fractional bits of every iterate. HCKBA only
//! swaps the bit source, so generation sits behind [`BitGenerator`].

use crate::cipher::Selector;
use crate::error::{Error, Result};
use crate::word::WordSize;
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

const LOGISTIC_R: f64 = 3.9;
const BITS_PER_ITERATE: u32 = 32;

/// One step of the logistic map, evaluated as `(3.9 * x) * (1 - x)` in binary64.
pub fn logistic_iterate(x: f64) -> Result<f64> {
    if !(x > 0.0 && x < 1.0) {
        return Err(Error::Domain(x));
    }
    Ok(LOGISTIC_R * x * (1.0 - x))
}

/// A source of pseudo-random bits for the selector sequence.
pub trait BitGenerator {
    fn next_bit(&mut self) -> Result<bool>;

    fn take_bits(&mut self, count: usize) -> Result<Vec<bool>> {
        (0..count).map(|_| self.next_bit()).collect()
    }
}

/// Logistic-map bit source. The first 32 bits come from `x(1)`, the first
/// iterate after the initial condition.
#[derive(Clone, Debug)]
pub struct LogisticBits {
    state: f64,
    chunk: u32,
    left: u32,
}

impl LogisticBits {
    pub fn new(x0: f64) -> Result<Self> {
        if !(x0 > 0.0 && x0 < 1.0) {
            return Err(Error::Domain(x0));
        }
        Ok(LogisticBits {
            state: x0,
            chunk: 0,
            left: 0,
        })
    }

    /// Fractional bits of an iterate, most significant first: `floor(x * 2^32)`.
    pub fn quantize(x: f64) -> u32 {
        (x * 4294967296.0).floor() as u32
    }
}

impl BitGenerator for LogisticBits {
    fn next_bit(&mut self) -> Result<bool> {
        if self.left == 0 {
            self.state = logistic_iterate(self.state)?;
            self.chunk = Self::quantize(self.state);
            self.left = BITS_PER_ITERATE;
        }
        self.left -= 1;
        Ok((self.chunk >> self.left) & 1 == 1)
    }
}

/// The first `bit_count` bits of the logistic PRBS seeded with `x0`.
pub fn derive_bits(x0: f64, bit_count: usize) -> Result<Vec<bool>> {
    LogisticBits::new(x0)?.take_bits(bit_count)
}

/// Per-block selectors `B(k) = 2 b(2k) + b(2k+1)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SelectorSequence(Vec<Selector>);

impl SelectorSequence {
    pub fn from_selectors(selectors: Vec<Selector>) -> Self {
        SelectorSequence(selectors)
    }

    pub fn as_slice(&self) -> &[Selector] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<Selector> {
        self.0
    }
}

pub fn selector_sequence(bits: &[bool], block_count: usize) -> Result<SelectorSequence> {
    if bits.len() < 2 * block_count {
        return Err(Error::invalid(format!(
            "{block_count} blocks need {} selector bits, got {}",
            2 * block_count,
            bits.len()
        )));
    }
    Ok(SelectorSequence(
        bits.chunks_exact(2)
            .take(block_count)
            .map(|pair| Selector::from_bits(pair[0], pair[1]))
            .collect(),
    ))
}

/// Draws `block_count` selectors from any bit generator.
pub fn selectors_from<G: BitGenerator>(
    gen: &mut G,
    block_count: usize,
) -> Result<SelectorSequence> {
    let bits = gen.take_bits(2 * block_count)?;
    selector_sequence(&bits, block_count)
}

/// The cipher key: two sub-keys plus the logistic-map initial condition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SecretKey {
    pub word_size: WordSize,
    pub key1: u64,
    pub key2: u64,
    pub x0: f64,
}

impl SecretKey {
    /// Accepts any `key1 != key2`; the Hamming-distance rule is only enforced by [`keygen`].
    pub fn new(word_size: WordSize, key1: u64, key2: u64, x0: f64) -> Result<Self> {
        word_size.check(key1, "key1")?;
        word_size.check(key2, "key2")?;
        if key1 == key2 {
            return Err(Error::invalid("key1 and key2 must differ"));
        }
        if !(x0 > 0.0 && x0 < 1.0) {
            return Err(Error::Domain(x0));
        }
        Ok(SecretKey {
            word_size,
            key1,
            key2,
            x0,
        })
    }

    /// Required Hamming distance between the sub-keys: `ceil(n / 2)`.
    pub fn required_distance(word_size: WordSize) -> u32 {
        word_size.bits().div_ceil(2)
    }

    pub fn satisfies_distance_rule(&self) -> bool {
        (self.key1 ^ self.key2).count_ones() == Self::required_distance(self.word_size)
    }

    pub fn selectors(&self, block_count: usize) -> Result<SelectorSequence> {
        selectors_from(&mut LogisticBits::new(self.x0)?, block_count)
    }
}

/// Random key with `popcount(key1 ^ key2) = ceil(n / 2)`.
pub fn keygen<R: Rng + ?Sized>(word_size: WordSize, rng: &mut R) -> SecretKey {
    let n = word_size.bits() as usize;
    let key1 = rng.gen::<u64>() & word_size.mask();
    let diff = sample(rng, n, SecretKey::required_distance(word_size) as usize)
        .into_iter()
        .fold(0u64, |d, pos| d | (1u64 << pos));
    let x0 = loop {
        let x: f64 = rng.gen();
        if x > 0.0 {
            break x;
        }
    };
    SecretKey {
        word_size,
        key1,
        key2: key1 ^ diff,
        x0,
    }
}

/// Parses an initial condition written as a decimal (`0.0744`), a fraction
/// (`319684607/4294967296`) or a power-of-two fraction (`319684607/2^32`).
pub fn parse_x0(text: &str) -> Result<f64> {
    let text = text.trim();
    let bad = || Error::invalid(format!("cannot parse x0 from {text:?}"));
    let value = match text.split_once('/') {
        Some((num, den)) => {
            let num: f64 = num.trim().parse::<u64>().map_err(|_| bad())? as f64;
            let den = den.trim();
            let den = match den.split_once('^') {
                Some((base, exp)) => {
                    let base: u64 = base.trim().parse().map_err(|_| bad())?;
                    let exp: i32 = exp.trim().parse().map_err(|_| bad())?;
                    if base != 2 {
                        return Err(bad());
                    }
                    2f64.powi(exp)
                }
                None => den.parse::<u64>().map_err(|_| bad())? as f64,
            };
            num / den
        }
        None => text.parse::<f64>().map_err(|_| bad())?,
    };
    if !(value > 0.0 && value < 1.0) {
        return Err(Error::Domain(value));
    }
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn logistic_values() {
        assert_eq!(logistic_iterate(0.5).unwrap(), 0.975);
        // Reference value computed exactly: 3.9 * 0.975 * 0.025 = 0.0950625.
        assert!((logistic_iterate(0.975).unwrap() - 0.0950625).abs() < 1e-15);
        assert!(logistic_iterate(0.0).is_err());
        assert!(logistic_iterate(1.0).is_err());
        assert!(logistic_iterate(f64::NAN).is_err());
    }

    proptest! {
        #[test]
        fn logistic_range(x in 1e-12f64..(1.0 - 1e-12)) {
            let y = logistic_iterate(x).unwrap();
            prop_assert!(y > 0.0 && y <= 0.975);
        }
    }

    #[test]
    fn quantize_msb_first() {
        let bits = |x: f64| {
            let q = LogisticBits::quantize(x);
            (0..32)
                .rev()
                .map(move |s| (q >> s) & 1 == 1)
                .collect::<Vec<_>>()
        };
        let half = bits(0.5);
        assert!(half[0] && half[1..].iter().all(|b| !b));
        let three_quarters = bits(0.75);
        assert!(three_quarters[0] && three_quarters[1]);
        assert!(three_quarters[2..].iter().all(|b| !b));
    }

    #[test]
    fn first_chunk_comes_from_first_iterate() {
        // x0 = 0.5 -> x(1) = 0.975 -> floor(0.975 * 2^32) = 0xF9999999
        let bits = derive_bits(0.5, 32).unwrap();
        let word = bits.iter().fold(0u32, |acc, &b| (acc << 1) | b as u32);
        assert_eq!(word, LogisticBits::quantize(0.975));
        assert_eq!(word, 0xF999_9999);
        assert!(derive_bits(0.5, 0).unwrap().is_empty());
    }

    #[test]
    fn derive_bits_is_deterministic() {
        let a = derive_bits(0.123456789, 1000).unwrap();
        let b = derive_bits(0.123456789, 1000).unwrap();
        assert_eq!(a, b);
        // A partial chunk is a prefix of the full one.
        assert_eq!(&derive_bits(0.123456789, 40).unwrap()[..], &a[..40]);
    }

    #[test]
    fn selector_examples() {
        let b = |v: &[u8]| v.iter().map(|&x| x == 1).collect::<Vec<_>>();
        let s = selector_sequence(&b(&[1, 1]), 1).unwrap();
        assert_eq!(s.as_slice()[0].value(), 3);
        let s = selector_sequence(&b(&[0, 1]), 1).unwrap();
        assert_eq!(s.as_slice()[0].value(), 1);
        let s = selector_sequence(&b(&[1, 0, 0, 0]), 2).unwrap();
        let v: Vec<u8> = s.as_slice().iter().map(|s| s.value()).collect();
        assert_eq!(v, [2, 0]);
        assert!(selector_sequence(&b(&[1, 0, 0]), 2).is_err());
    }

    #[test]
    fn bit_budget_matches_block_count() {
        // 512x512 at n = 32: 65536 blocks, 131072 bits, 4096 iterates.
        let blocks = 8 * 512 * 512 / 32;
        let mut gen = LogisticBits::new(0.3).unwrap();
        let _ = selectors_from(&mut gen, blocks).unwrap();
        assert_eq!(gen.left, 0);
        let mut reference = 0.3;
        for _ in 0..512 * 512 / (2 * 32) {
            reference = logistic_iterate(reference).unwrap();
        }
        assert_eq!(gen.state, reference);
    }

    #[test]
    fn keygen_distance_and_determinism() {
        for n in [2, 3, 8, 17, 32, 63, 64] {
            let ws = WordSize::new(n).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
            for _ in 0..50 {
                let k = keygen(ws, &mut rng);
                assert!(k.satisfies_distance_rule());
                assert!(ws.contains(k.key1) && ws.contains(k.key2));
                assert!(k.x0 > 0.0 && k.x0 < 1.0);
            }
        }
        let ws = WordSize::new(32).unwrap();
        let a = keygen(ws, &mut ChaCha8Rng::seed_from_u64(9));
        let b = keygen(ws, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn example_key_meets_distance_rule() {
        assert_eq!((3835288501u64 ^ 1437224678u64).count_ones(), 16);
        let k = SecretKey::new(WordSize::new(32).unwrap(), 3835288501, 1437224678, 0.5).unwrap();
        assert!(k.satisfies_distance_rule());
    }

    #[test]
    fn key_validation() {
        let ws = WordSize::new(8).unwrap();
        assert!(SecretKey::new(ws, 5, 5, 0.5).is_err());
        assert!(SecretKey::new(ws, 256, 5, 0.5).is_err());
        assert!(SecretKey::new(ws, 1, 5, 1.0).is_err());
    }

    #[test]
    fn parse_x0_forms() {
        assert_eq!(
            parse_x0("319684607/2^32").unwrap(),
            319684607.0 / 4294967296.0
        );
        assert_eq!(
            parse_x0("319684607/4294967296").unwrap(),
            319684607.0 / 4294967296.0
        );
        assert_eq!(parse_x0("0.25").unwrap(), 0.25);
        assert!(parse_x0("1.5").is_err());
        assert!(parse_x0("3/3^2").is_err());
        assert!(parse_x0("abc").is_err());
    }
}
