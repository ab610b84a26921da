//! Known-plaintext attack with two plain/cipher image pairs.
//!
//! For every block the two encryptions share a sub-key, so the ciphertext
//! difference is a kernel observation `J1' ^ J2' = (J1 + key) ^ (J2 + key)`
//! whichever selector was used. Solving each block yields some confirmed bits
//! of either `key1` or `key2`; seed merging sorts these partial keys into the
//! two sub-keys by their confirmed-bit conflicts. The selector of every block
//! then follows from which sub-key its bits match and from the parity of
//! `J1' ^ J1`.

use crate::block_codec::{image_to_blocks, BlockStream};
use crate::cipher::{decrypt_word, KeyClass, ParityClass, Selector};
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::kernel::{solve_single_query, KernelInstance, PartialKeyObservation};
use crate::word::WordSize;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::cmp::Reverse;

/// Word streams of the two known plain/cipher pairs.
#[derive(Clone, Debug)]
pub struct KnownBlocks {
    pub plain1: BlockStream,
    pub cipher1: BlockStream,
    pub plain2: BlockStream,
    pub cipher2: BlockStream,
}

impl KnownBlocks {
    pub fn from_images(
        plain1: &GrayImage,
        cipher1: &GrayImage,
        plain2: &GrayImage,
        cipher2: &GrayImage,
        word_size: WordSize,
    ) -> Result<Self> {
        let dims = plain1.dims();
        for (name, img) in [("c1", cipher1), ("p2", plain2), ("c2", cipher2)] {
            if img.dims() != dims {
                return Err(Error::invalid(format!(
                    "{name} is {}x{} but p1 is {}x{}",
                    img.width(),
                    img.height(),
                    dims.0,
                    dims.1
                )));
            }
        }
        Ok(KnownBlocks {
            plain1: image_to_blocks(plain1, word_size),
            cipher1: image_to_blocks(cipher1, word_size),
            plain2: image_to_blocks(plain2, word_size),
            cipher2: image_to_blocks(cipher2, word_size),
        })
    }

    pub fn word_size(&self) -> WordSize {
        self.plain1.word_size()
    }

    pub fn len(&self) -> usize {
        self.plain1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.plain1.is_empty()
    }

    /// Bits of block `k` that survive the round trip through an image; only
    /// the last block can be shorter than the word size.
    pub fn valid_bits(&self, k: usize) -> u32 {
        let n = self.word_size().bits();
        if k + 1 == self.len() {
            n - self.plain1.pad_bits() as u32
        } else {
            n
        }
    }

    /// Kernel observation of block `k`: `alpha = J1`, `beta = J2`, `y = J1' ^ J2'`.
    ///
    /// A padded last block lost the high cipher bits when the cipher image was
    /// written, so it is observed at its reduced width (or not at all when
    /// fewer than two bits remain).
    pub fn instance(&self, k: usize) -> KernelInstance {
        let (p1, p2) = (self.plain1.words()[k], self.plain2.words()[k]);
        let y = self.cipher1.words()[k] ^ self.cipher2.words()[k];
        match WordSize::new(self.valid_bits(k)) {
            Ok(ws) => KernelInstance {
                word_size: ws,
                alpha: p1 & ws.mask(),
                beta: p2 & ws.mask(),
                y: y & ws.mask(),
            },
            Err(_) => KernelInstance {
                word_size: self.word_size(),
                alpha: 0,
                beta: 0,
                y: 0,
            },
        }
    }

    /// True when decrypting both cipher words of block `k` with the given
    /// sub-key and selector reproduces both plain words.
    pub fn explains(&self, k: usize, subkey: u64, selector: Selector) -> bool {
        let ws = self.word_size();
        let valid = low_bits(self.valid_bits(k));
        let check = |plain: &BlockStream, cipher: &BlockStream| {
            let d = decrypt_word(ws, cipher.words()[k], subkey, subkey, selector);
            (d ^ plain.words()[k]) & valid == 0
        };
        check(&self.plain1, &self.cipher1) && check(&self.plain2, &self.cipher2)
    }

    pub fn instances(&self) -> Vec<KernelInstance> {
        (0..self.len()).map(|k| self.instance(k)).collect()
    }
}

fn low_bits(bits: u32) -> u64 {
    if bits >= 64 {
        u64::MAX
    } else {
        (1u64 << bits) - 1
    }
}

pub fn differential_observations(
    plain1: &GrayImage,
    plain2: &GrayImage,
    cipher1: &GrayImage,
    cipher2: &GrayImage,
    word_size: WordSize,
) -> Result<Vec<KernelInstance>> {
    Ok(KnownBlocks::from_images(plain1, cipher1, plain2, cipher2, word_size)?.instances())
}

/// Solves every block independently; unknown bits are zero in each result.
pub fn solve_blocks(instances: &[KernelInstance]) -> Result<Vec<PartialKeyObservation>> {
    instances
        .par_iter()
        .enumerate()
        .map(|(k, inst)| solve_single_query(inst, k).map_err(|e| e.at_block(k)))
        .collect()
}

/// Which seed a partial key was merged into.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Membership {
    Seed0,
    Seed1,
    Unassigned,
}

/// A growing partial key assembled from compatible observations.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Seed {
    pub value: u64,
    pub mask: u64,
    pub members: Vec<usize>,
}

impl Seed {
    fn from_observation(obs: &PartialKeyObservation, index: usize) -> Self {
        Seed {
            value: obs.value,
            mask: obs.mask,
            members: vec![index],
        }
    }

    fn conflicts(&self, value: u64, mask: u64) -> bool {
        (self.value ^ value) & self.mask & mask != 0
    }

    /// Union of confirmed bits; returns whether the seed grew.
    fn absorb(&mut self, value: u64, mask: u64) -> bool {
        let new = mask & !self.mask;
        self.value |= value & new;
        self.mask |= mask;
        new != 0
    }

    pub fn confirmed(&self) -> u32 {
        self.mask.count_ones()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeStats {
    /// Seed pairs drawn (the first plus any restarts).
    pub rounds: usize,
    /// Absorption passes over the pool across all rounds.
    pub passes: usize,
    /// Observations merged into each seed, the seeds themselves included.
    pub members: [usize; 2],
    /// Seed pairs from restarts that never linked to the main pair.
    pub unlinked_pairs: usize,
    pub unassigned: usize,
    pub seeds_complete: bool,
}

#[derive(Clone, Debug)]
pub struct MergeOutcome {
    pub seeds: [Seed; 2],
    pub membership: Vec<Membership>,
    pub stats: MergeStats,
}

fn pick_seed_pair(obs: &[PartialKeyObservation], pool: &[usize]) -> Option<(usize, usize)> {
    let mut order = pool.to_vec();
    order.sort_by_key(|&k| (Reverse(obs[k].confirmed()), k));
    for (pos, &a) in order.iter().enumerate() {
        if let Some(&b) = order[pos + 1..]
            .iter()
            .find(|&&b| obs[a].conflicts(obs[b].value, obs[b].mask))
        {
            return Some((a, b));
        }
    }
    None
}

fn is_full(pair: &[Seed; 2], full: u64) -> bool {
    pair.iter().all(|s| s.mask & full == full)
}

/// Repeated absorption passes until neither seed gains a confirmed bit.
fn absorb_pool(
    pair: &mut [Seed; 2],
    pool: &mut Vec<usize>,
    obs: &[PartialKeyObservation],
    full: u64,
    stats: &mut MergeStats,
) -> Result<()> {
    loop {
        stats.passes += 1;
        let mut grew = false;
        let mut failure = None;
        pool.retain(|&k| {
            let o = &obs[k];
            let against0 = pair[0].conflicts(o.value, o.mask);
            let against1 = pair[1].conflicts(o.value, o.mask);
            let target = match (against0, against1) {
                (false, false) => return true,
                (true, true) => {
                    failure.get_or_insert(k);
                    return true;
                }
                (true, false) => 1,
                (false, true) => 0,
            };
            grew |= pair[target].absorb(o.value, o.mask);
            pair[target].members.push(k);
            false
        });
        if let Some(k) = failure {
            return Err(Error::InternalConsistency(format!(
                "block {k} conflicts with both seeds"
            )));
        }
        if !grew || is_full(pair, full) {
            return Ok(());
        }
    }
}

fn join(into: &mut Seed, from: Seed) -> Result<()> {
    if into.conflicts(from.value, from.mask) {
        return Err(Error::InternalConsistency(
            "linked seeds disagree on a confirmed bit".into(),
        ));
    }
    into.absorb(from.value, from.mask);
    into.members.extend(from.members);
    Ok(())
}

/// Links a later seed pair to the main one when a conflict reveals their relative
/// orientation. Returns the pair back if no conflict exists yet.
fn link(main: &mut [Seed; 2], pair: [Seed; 2]) -> Result<Option<[Seed; 2]>> {
    let c = |a: &Seed, b: &Seed| a.conflicts(b.value, b.mask);
    let crossed = c(&pair[0], &main[0]) || c(&pair[1], &main[1]);
    let straight = c(&pair[0], &main[1]) || c(&pair[1], &main[0]);
    let [p0, p1] = pair;
    match (straight, crossed) {
        (false, false) => Ok(Some([p0, p1])),
        (true, true) => Err(Error::InternalConsistency(
            "seed pair conflicts with both orientations".into(),
        )),
        (true, false) => {
            join(&mut main[0], p0)?;
            join(&mut main[1], p1)?;
            Ok(None)
        }
        (false, true) => {
            join(&mut main[0], p1)?;
            join(&mut main[1], p0)?;
            Ok(None)
        }
    }
}

/// Clusters per-block partial keys into the two sub-keys.
///
/// Seeds are the two observations with the most confirmed bits that disagree
/// somewhere (lowest block index wins ties). Any observation that conflicts
/// with one seed belongs to the other and is merged into it; passes repeat
/// until the seeds stop growing or both cover bits `0..n-2`. If they are still
/// incomplete, a fresh pair is drawn from the leftovers and grown the same way,
/// then linked to the first pair as soon as a conflict fixes its orientation.
pub fn merge_seeds(obs: &[PartialKeyObservation], word_size: WordSize) -> Result<MergeOutcome> {
    let full = word_size.low_mask();
    let mut stats = MergeStats::default();
    let mut pool: Vec<usize> = (0..obs.len()).filter(|&k| obs[k].mask != 0).collect();
    let mut main: Option<[Seed; 2]> = None;
    let mut parked: Vec<[Seed; 2]> = Vec::new();

    loop {
        if main.as_ref().is_some_and(|m| is_full(m, full)) || pool.len() < 2 {
            break;
        }
        let Some((a, b)) = pick_seed_pair(obs, &pool) else {
            break;
        };
        pool.retain(|&k| k != a && k != b);
        let mut pair = [
            Seed::from_observation(&obs[a], a),
            Seed::from_observation(&obs[b], b),
        ];
        stats.rounds += 1;
        absorb_pool(&mut pair, &mut pool, obs, full, &mut stats)?;

        match main.as_mut() {
            None => main = Some(pair),
            Some(m) => {
                if let Some(unlinked) = link(m, pair)? {
                    parked.push(unlinked);
                }
            }
        }
        // Growth of the main pair may absorb more of the pool or link parked pairs.
        let m = main.as_mut().expect("main pair set above");
        loop {
            absorb_pool(m, &mut pool, obs, full, &mut stats)?;
            let before = parked.len();
            let mut still = Vec::with_capacity(before);
            for p in parked.drain(..) {
                if let Some(p) = link(m, p)? {
                    still.push(p);
                }
            }
            parked = still;
            if parked.len() == before {
                break;
            }
        }
    }

    let seeds = main.ok_or_else(|| {
        Error::MergeFailure("no two observations disagree on a confirmed bit".into())
    })?;
    let mut membership = vec![Membership::Unassigned; obs.len()];
    for (seed, tag) in seeds.iter().zip([Membership::Seed0, Membership::Seed1]) {
        for &k in &seed.members {
            membership[k] = tag;
        }
    }
    stats.members = [seeds[0].members.len(), seeds[1].members.len()];
    stats.unlinked_pairs = parked.len();
    stats.unassigned = membership
        .iter()
        .filter(|&&m| m == Membership::Unassigned)
        .count();
    stats.seeds_complete = is_full(&seeds, full);
    Ok(MergeOutcome {
        seeds,
        membership,
        stats,
    })
}

/// Recovered selector of one block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SelectorEstimate {
    Known(Selector),
    /// The key class could not be decided; only the XOR/XNOR mode is known.
    AmbiguousKeyClass(ParityClass),
}

impl SelectorEstimate {
    pub fn known(self) -> Option<Selector> {
        match self {
            SelectorEstimate::Known(s) => Some(s),
            SelectorEstimate::AmbiguousKeyClass(_) => None,
        }
    }

    pub fn parity(self) -> ParityClass {
        match self {
            SelectorEstimate::Known(s) => s.parity(),
            SelectorEstimate::AmbiguousKeyClass(p) => p,
        }
    }
}

/// `(key1*, key2*, B*(k))`: enough to decrypt anything under the original key.
/// Bit `n - 1` of both sub-keys is always zero.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EquivalentKey {
    pub word_size: WordSize,
    pub key1: u64,
    pub key2: u64,
    pub key1_mask: u64,
    pub key2_mask: u64,
    pub selectors: Vec<SelectorEstimate>,
}

impl EquivalentKey {
    pub fn is_complete(&self) -> bool {
        let full = self.word_size.low_mask();
        self.key1_mask == full && self.key2_mask == full
    }

    pub fn ambiguous_blocks(&self) -> Vec<usize> {
        self.selectors
            .iter()
            .enumerate()
            .filter(|(_, s)| s.known().is_none())
            .map(|(k, _)| k)
            .collect()
    }

    pub fn subkey(&self, class: KeyClass) -> u64 {
        match class {
            KeyClass::Key1 => self.key1,
            KeyClass::Key2 => self.key2,
        }
    }

    /// The same key with the sub-keys exchanged and every selector shifted by 2.
    pub fn swapped(&self) -> EquivalentKey {
        EquivalentKey {
            word_size: self.word_size,
            key1: self.key2,
            key2: self.key1,
            key1_mask: self.key2_mask,
            key2_mask: self.key1_mask,
            selectors: self
                .selectors
                .iter()
                .map(|s| match s {
                    SelectorEstimate::Known(sel) => SelectorEstimate::Known(sel.swapped()),
                    other => *other,
                })
                .collect(),
        }
    }
}

/// How the key class of each block was settled.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectorStats {
    /// Blocks merged into a seed.
    pub from_seed: usize,
    /// Blocks with a confirmed bit where the two sub-keys differ.
    pub from_confirmed_bit: usize,
    /// Blocks whose known pairs only one sub-key explains.
    pub from_pair_check: usize,
    pub ambiguous: usize,
    /// Blocks per recovered key class.
    pub key1_blocks: usize,
    pub key2_blocks: usize,
    /// Blocks in XOR mode (`B in {1, 3}`) and XNOR mode (`B in {0, 2}`).
    pub xor_blocks: usize,
    pub xnor_blocks: usize,
}

fn class_from_bits(obs: &PartialKeyObservation, key: &StarredKeys) -> Result<Option<KeyClass>> {
    let window = obs.mask & key.key1_mask & key.key2_mask & (key.key1 ^ key.key2);
    if window == 0 {
        return Ok(None);
    }
    let agree1 = !(obs.value ^ key.key1) & window;
    if agree1 == window {
        Ok(Some(KeyClass::Key1))
    } else if agree1 == 0 {
        Ok(Some(KeyClass::Key2))
    } else {
        Err(Error::InternalConsistency(format!(
            "block {} matches key1* on some bits and key2* on others",
            obs.block_index
        )))
    }
}

/// Sub-key estimates with their confirmed-bit masks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StarredKeys {
    pub key1: u64,
    pub key1_mask: u64,
    pub key2: u64,
    pub key2_mask: u64,
}

impl StarredKeys {
    pub fn from_seeds(seeds: &[Seed; 2], word_size: WordSize) -> Self {
        let low = word_size.low_mask();
        StarredKeys {
            key1: seeds[0].value & low,
            key1_mask: seeds[0].mask & low,
            key2: seeds[1].value & low,
            key2_mask: seeds[1].mask & low,
        }
    }

    fn complete(&self, word_size: WordSize) -> bool {
        let full = word_size.low_mask();
        self.key1_mask == full && self.key2_mask == full
    }
}

/// Estimates `B*(k)` for every block.
///
/// The key class comes from seed membership or from a confirmed bit where
/// `key1*` and `key2*` differ; the XOR/XNOR mode comes from the parity of
/// `J1' ^ J1`. When both sub-keys are fully confirmed, blocks still undecided
/// are settled by checking which sub-key reproduces both known plain words,
/// and decided blocks are cross-checked the same way.
pub fn recover_selectors(
    known: &KnownBlocks,
    membership: &[Membership],
    keys: &StarredKeys,
    observations: &[PartialKeyObservation],
) -> Result<(Vec<SelectorEstimate>, SelectorStats)> {
    let ws = known.word_size();
    if membership.len() != known.len() || observations.len() != known.len() {
        return Err(Error::invalid("block counts of inputs differ"));
    }
    let complete = keys.complete(ws);
    let mut stats = SelectorStats::default();
    let mut out = Vec::with_capacity(known.len());

    for k in 0..known.len() {
        let parity = ParityClass::from_pair(known.plain1.words()[k], known.cipher1.words()[k]);
        if ParityClass::from_pair(known.plain2.words()[k], known.cipher2.words()[k]) != parity {
            return Err(Error::Inconsistent {
                block: Some(k),
                reason: "the two known pairs imply different XOR/XNOR modes".into(),
            });
        }
        let by_seed = match membership[k] {
            Membership::Seed0 => Some(KeyClass::Key1),
            Membership::Seed1 => Some(KeyClass::Key2),
            Membership::Unassigned => None,
        };
        let by_bits = class_from_bits(&observations[k], keys)?;
        if let (Some(a), Some(b)) = (by_seed, by_bits) {
            if a != b {
                return Err(Error::InternalConsistency(format!(
                    "block {k}: seed membership and confirmed bits disagree"
                )));
            }
        }
        let by_pairs = if complete {
            let fits = |class| {
                known.explains(
                    k,
                    match class {
                        KeyClass::Key1 => keys.key1,
                        KeyClass::Key2 => keys.key2,
                    },
                    Selector::from_parts(class, parity),
                )
            };
            match (fits(KeyClass::Key1), fits(KeyClass::Key2)) {
                (true, false) => Some(Some(KeyClass::Key1)),
                (false, true) => Some(Some(KeyClass::Key2)),
                (true, true) => Some(None),
                (false, false) => {
                    return Err(Error::InternalConsistency(format!(
                        "block {k}: neither recovered sub-key explains the known pairs"
                    )))
                }
            }
        } else {
            None
        };

        let class = if let Some(c) = by_seed {
            stats.from_seed += 1;
            Some(c)
        } else if let Some(c) = by_bits {
            stats.from_confirmed_bit += 1;
            Some(c)
        } else if let Some(Some(c)) = by_pairs {
            stats.from_pair_check += 1;
            Some(c)
        } else {
            None
        };
        if let (Some(c), Some(Some(p))) = (class, by_pairs) {
            if c != p {
                return Err(Error::InternalConsistency(format!(
                    "block {k}: key class contradicts the known pairs"
                )));
            }
        }

        match parity {
            ParityClass::Xor => stats.xor_blocks += 1,
            ParityClass::Xnor => stats.xnor_blocks += 1,
        }
        out.push(match class {
            Some(c) => {
                match c {
                    KeyClass::Key1 => stats.key1_blocks += 1,
                    KeyClass::Key2 => stats.key2_blocks += 1,
                }
                SelectorEstimate::Known(Selector::from_parts(c, parity))
            }
            None => {
                stats.ambiguous += 1;
                SelectorEstimate::AmbiguousKeyClass(parity)
            }
        });
    }
    Ok((out, stats))
}

/// Everything the attack learned, for reporting.
#[derive(Clone, Debug)]
pub struct KpaOutcome {
    pub key: EquivalentKey,
    pub merge: MergeStats,
    pub selectors: SelectorStats,
    /// Mean confirmed bits per block.
    pub mean_confirmed: f64,
}

pub fn kpa_attack(
    plain1: &GrayImage,
    cipher1: &GrayImage,
    plain2: &GrayImage,
    cipher2: &GrayImage,
    word_size: WordSize,
) -> Result<KpaOutcome> {
    let known = KnownBlocks::from_images(plain1, cipher1, plain2, cipher2, word_size)?;
    attack_known_blocks(&known)
}

pub fn attack_known_blocks(known: &KnownBlocks) -> Result<KpaOutcome> {
    let ws = known.word_size();
    let observations = solve_blocks(&known.instances())?;
    let merge = merge_seeds(&observations, ws)?;
    let keys = StarredKeys::from_seeds(&merge.seeds, ws);
    let (selectors, stats) = recover_selectors(known, &merge.membership, &keys, &observations)?;
    let mean_confirmed = observations
        .iter()
        .map(|o| o.confirmed() as f64)
        .sum::<f64>()
        / observations.len().max(1) as f64;
    Ok(KpaOutcome {
        key: EquivalentKey {
            word_size: ws,
            key1: keys.key1,
            key2: keys.key2,
            key1_mask: keys.key1_mask,
            key2_mask: keys.key2_mask,
            selectors,
        },
        merge: merge.stats,
        selectors: stats,
        mean_confirmed,
    })
}

/// Key class assumed for blocks whose class is unknown.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum AmbiguityPolicy {
    #[default]
    AssumeKey1,
    AssumeKey2,
}

/// Decrypts with an equivalent key. Blocks with an unknown key class are
/// decrypted per `policy` and listed in the returned index vector.
pub fn decrypt_with_equivalent(
    cipher: &GrayImage,
    key: &EquivalentKey,
    policy: AmbiguityPolicy,
) -> Result<(GrayImage, Vec<usize>)> {
    let ws = key.word_size;
    let blocks = image_to_blocks(cipher, ws);
    if blocks.len() != key.selectors.len() {
        return Err(Error::invalid(format!(
            "image has {} blocks but the key covers {}",
            blocks.len(),
            key.selectors.len()
        )));
    }
    let fallback = match policy {
        AmbiguityPolicy::AssumeKey1 => KeyClass::Key1,
        AmbiguityPolicy::AssumeKey2 => KeyClass::Key2,
    };
    let mut flagged = Vec::new();
    let words = blocks
        .words()
        .iter()
        .zip(&key.selectors)
        .enumerate()
        .map(|(k, (&w, est))| {
            let sel = match *est {
                SelectorEstimate::Known(s) => s,
                SelectorEstimate::AmbiguousKeyClass(p) => {
                    flagged.push(k);
                    Selector::from_parts(fallback, p)
                }
            };
            decrypt_word(ws, w, key.key1, key.key2, sel)
        })
        .collect();
    let image = crate::block_codec::blocks_to_image(&blocks.with_words(words)?)?;
    Ok((image, flagged))
}
