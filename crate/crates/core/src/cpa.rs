//! Chosen-plaintext attack with two crafted images.
//!
//! Each block of the chosen pair carries one of two fixed `(alpha, beta)`
//! queries. Observed together against the same sub-key, the two queries pin
//! down every bit below the MSB, so each key class needs only one block of
//! each kind.

use crate::block_codec::{block_count, blocks_to_image, BlockStream};
use crate::cipher::{KeyClass, ParityClass, Selector};
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::kernel::{next_row, KernelInstance};
use crate::kpa::{
    merge_seeds, recover_selectors, solve_blocks, EquivalentKey, KnownBlocks, Membership,
    MergeOutcome, MergeStats, SelectorStats, StarredKeys,
};
use crate::word::{bit, WordSize};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QueryTag {
    PairA,
    PairB,
}

impl QueryTag {
    pub fn letter(self) -> char {
        match self {
            QueryTag::PairA => 'A',
            QueryTag::PairB => 'B',
        }
    }

    pub fn from_letter(c: char) -> Option<QueryTag> {
        match c {
            'A' => Some(QueryTag::PairA),
            'B' => Some(QueryTag::PairB),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QueryPair {
    pub alpha: u64,
    pub beta: u64,
    pub tag: QueryTag,
}

/// `...1010` and `...0101` truncated to `n` bits.
fn alternating(ws: WordSize) -> (u64, u64) {
    let a = 0xAAAA_AAAA_AAAA_AAAAu64 & ws.mask();
    let s = 0x5555_5555_5555_5555u64 & ws.mask();
    (a, s)
}

/// `(0, A)` and `(A, S)` with `A = ...1010`, `S = ...0101`.
pub fn query_pairs(ws: WordSize) -> (QueryPair, QueryPair) {
    let (a, s) = alternating(ws);
    (
        QueryPair {
            alpha: 0,
            beta: a,
            tag: QueryTag::PairA,
        },
        QueryPair {
            alpha: a,
            beta: s,
            tag: QueryTag::PairB,
        },
    )
}

pub fn query_for(ws: WordSize, tag: QueryTag) -> QueryPair {
    let (a, b) = query_pairs(ws);
    match tag {
        QueryTag::PairA => a,
        QueryTag::PairB => b,
    }
}

/// Which query each block of a chosen image pair carries.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagRecord {
    #[serde(rename = "n")]
    pub word_size: WordSize,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    #[serde(with = "tag_letters")]
    pub tags: Vec<QueryTag>,
}

mod tag_letters {
    use super::QueryTag;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(tags: &[QueryTag], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&tags.iter().map(|t| t.letter()).collect::<String>())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<QueryTag>, D::Error> {
        let text = String::deserialize(d)?;
        text.chars()
            .map(|c| {
                QueryTag::from_letter(c).ok_or_else(|| D::Error::custom(format!("bad tag {c:?}")))
            })
            .collect()
    }
}

impl TagRecord {
    pub fn count(&self, tag: QueryTag) -> usize {
        self.tags.iter().filter(|&&t| t == tag).count()
    }
}

/// Builds the chosen plain images; the query of every block is drawn uniformly
/// from a generator seeded with `seed`.
pub fn build_chosen_images(
    width: usize,
    height: usize,
    ws: WordSize,
    seed: u64,
) -> Result<(GrayImage, GrayImage, TagRecord)> {
    if width == 0 || height == 0 {
        return Err(Error::invalid("image dimensions must be positive"));
    }
    let count = block_count(width, height, ws);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tags: Vec<QueryTag> = (0..count)
        .map(|_| {
            if rng.gen::<bool>() {
                QueryTag::PairB
            } else {
                QueryTag::PairA
            }
        })
        .collect();
    let pad = ws.bits() as usize * count - 8 * width * height;
    let build = |pick: fn(&QueryPair) -> u64| -> Result<GrayImage> {
        let mut words: Vec<u64> = tags.iter().map(|&t| pick(&query_for(ws, t))).collect();
        // The padding bits of the last word are not part of the image.
        if let Some(last) = words.last_mut() {
            *last &= ws.mask() >> pad;
        }
        blocks_to_image(&BlockStream::new(ws, words, pad, (width, height))?)
    };
    let p1 = build(|q| q.alpha)?;
    let p2 = build(|q| q.beta)?;
    Ok((
        p1,
        p2,
        TagRecord {
            word_size: ws,
            width,
            height,
            seed,
            tags,
        },
    ))
}

/// Finds `x mod 2^(n-1)` from several observations against the same `x`.
///
/// Walks the bit planes carrying, for every reachable joint carry state, the
/// common prefix of the `x` values that reach it: bits on which the prefixes
/// disagree are marked undetermined. Since the future only depends on the
/// state, the bits left determined at the end are exactly those shared by
/// every solution.
pub fn solve_joint(queries: &[KernelInstance]) -> Result<u64> {
    let Some(first) = queries.first() else {
        return Err(Error::invalid("no queries"));
    };
    let ws = first.word_size;
    if queries.iter().any(|q| q.word_size != ws) {
        return Err(Error::invalid("queries use different word sizes"));
    }
    if queries.len() > 32 {
        return Err(Error::invalid("at most 32 joint queries are supported"));
    }
    let tildes: Vec<u64> = queries.iter().map(|q| q.y_tilde()).collect();
    if tildes.iter().any(|t| t & 1 != 0) {
        return Err(Error::inconsistent("yt[0] must be 0"));
    }

    // state bit 2j = carry of query j, bit 2j+1 = its tilde carry
    // value -> (x prefix, undetermined bits)
    let mut states: BTreeMap<u64, (u64, u64)> = BTreeMap::new();
    states.insert(0, (0, 0));
    for i in 0..ws.bits() - 1 {
        let mut next: BTreeMap<u64, (u64, u64)> = BTreeMap::new();
        for (&state, &(value, undet)) in &states {
            'x: for x in [false, true] {
                let mut to = 0u64;
                for (j, q) in queries.iter().enumerate() {
                    let row = next_row(
                        x,
                        state >> (2 * j) & 1 == 1,
                        state >> (2 * j + 1) & 1 == 1,
                        bit(q.alpha, i),
                        bit(q.beta, i),
                    );
                    if row.y_tilde != bit(tildes[j], i + 1) {
                        continue 'x;
                    }
                    to |= (row.carry as u64) << (2 * j) | (row.carry_tilde as u64) << (2 * j + 1);
                }
                let v = value | (x as u64) << i;
                next.entry(to)
                    .and_modify(|(pv, pu)| {
                        *pu |= undet | (*pv ^ v);
                    })
                    .or_insert((v, undet));
            }
        }
        if next.is_empty() {
            return Err(Error::Inconsistent {
                block: None,
                reason: format!("no x explains the queries beyond bit plane {i}"),
            });
        }
        states = next;
    }
    let mut iter = states.values();
    let &(value, mut undet) = iter.next().expect("non-empty state set");
    for &(v, u) in iter {
        undet |= u | (v ^ value);
    }
    if undet != 0 {
        return Err(Error::Underdetermined { mask: undet });
    }
    Ok(value)
}

/// Solves the two-query system from the masked outputs of the two chosen pairs.
pub fn joint_query_solver(yt_a: u64, yt_b: u64, ws: WordSize) -> Result<u64> {
    let (a, b) = query_pairs(ws);
    let inst =
        |q: QueryPair, yt: u64| KernelInstance::new(ws, q.alpha, q.beta, yt ^ q.alpha ^ q.beta);
    solve_joint(&[inst(a, yt_a)?, inst(b, yt_b)?])
}

/// Where a recovered sub-key came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum KeySource {
    /// Single-query confirmations merged into a complete seed.
    Seed,
    /// A pair of blocks with different queries solved jointly.
    Joint,
}

#[derive(Clone, Debug)]
pub struct CpaOutcome {
    pub key: EquivalentKey,
    pub merge: Option<MergeStats>,
    pub selectors: SelectorStats,
    pub key_sources: [KeySource; 2],
    /// Distinct query outputs `(tag, y)` seen on full-width blocks.
    pub distinct_outputs: usize,
    pub joint_solves: usize,
}

fn check_tags(known: &KnownBlocks, record: &TagRecord) -> Result<()> {
    let ws = known.word_size();
    if record.word_size != ws {
        return Err(Error::invalid(format!(
            "tag record is for n = {}, attack uses n = {}",
            record.word_size.bits(),
            ws.bits()
        )));
    }
    if record.tags.len() != known.len() {
        return Err(Error::invalid(format!(
            "tag record has {} entries for {} blocks",
            record.tags.len(),
            known.len()
        )));
    }
    for (k, &tag) in record.tags.iter().enumerate() {
        let q = query_for(ws, tag);
        let valid = ws.mask() >> (ws.bits() - known.valid_bits(k));
        if (known.plain1.words()[k] ^ q.alpha) & valid != 0
            || (known.plain2.words()[k] ^ q.beta) & valid != 0
        {
            return Err(Error::invalid(format!(
                "block {k} does not carry query {}",
                tag.letter()
            )));
        }
    }
    Ok(())
}

/// Whether every block is explained by one of the two sub-keys, and each
/// sub-key is the only explanation for at least one block.
fn explains_all(known: &KnownBlocks, key1: u64, key2: u64) -> bool {
    let (mut only1, mut only2) = (false, false);
    for k in 0..known.len() {
        let parity = ParityClass::from_pair(known.plain1.words()[k], known.cipher1.words()[k]);
        let fits1 = known.explains(k, key1, Selector::from_parts(KeyClass::Key1, parity));
        let fits2 = known.explains(k, key2, Selector::from_parts(KeyClass::Key2, parity));
        if !(fits1 || fits2) {
            return false;
        }
        only1 |= fits1 && !fits2;
        only2 |= fits2 && !fits1;
    }
    only1 && only2
}

/// Names the class that lacks a query kind, for the coverage error.
fn coverage_error(merge: Option<&MergeOutcome>, record: &TagRecord, known: &KnownBlocks) -> Error {
    let n = known.word_size().bits();
    if let Some(m) = merge {
        for (seed, class) in m.seeds.iter().zip([KeyClass::Key1, KeyClass::Key2]) {
            let tags: BTreeSet<QueryTag> = seed
                .members
                .iter()
                .filter(|&&k| known.valid_bits(k) == n)
                .map(|&k| record.tags[k])
                .collect();
            if tags.len() < 2 {
                return Error::Coverage {
                    class,
                    reason: format!(
                        "its blocks carry only queries {:?} and single-query bits are incomplete",
                        tags.iter().map(|t| t.letter()).collect::<String>()
                    ),
                };
            }
        }
    }
    let missing: Vec<char> = [QueryTag::PairA, QueryTag::PairB]
        .into_iter()
        .filter(|&t| (0..known.len()).all(|k| record.tags[k] != t || known.valid_bits(k) != n))
        .map(|t| t.letter())
        .collect();
    Error::Coverage {
        class: KeyClass::Key1,
        reason: if missing.is_empty() {
            "no pair of sub-keys found that explains every block and needs both sub-keys".into()
        } else {
            format!("no full-width block carries query {missing:?}")
        },
    }
}

/// Recovers an equivalent key from the encryptions of a chosen image pair.
pub fn cpa_recover(
    plain1: &GrayImage,
    cipher1: &GrayImage,
    plain2: &GrayImage,
    cipher2: &GrayImage,
    record: &TagRecord,
) -> Result<CpaOutcome> {
    let ws = record.word_size;
    let full = ws.low_mask();
    let n = ws.bits();
    let known = KnownBlocks::from_images(plain1, cipher1, plain2, cipher2, ws)?;
    check_tags(&known, record)?;

    let observations = solve_blocks(&known.instances())?;
    let merge = match merge_seeds(&observations, ws) {
        Ok(m) => Some(m),
        Err(Error::MergeFailure(_)) => None,
        Err(e) => return Err(e),
    };

    let mut candidates: Vec<(u64, KeySource)> = Vec::new();
    if let Some(m) = &merge {
        for seed in &m.seeds {
            if seed.mask & full == full {
                candidates.push((seed.value & full, KeySource::Seed));
            }
        }
    }
    let mut outputs: BTreeMap<QueryTag, BTreeSet<u64>> = BTreeMap::new();
    for k in (0..known.len()).filter(|&k| known.valid_bits(k) == n) {
        let y = known.cipher1.words()[k] ^ known.cipher2.words()[k];
        outputs.entry(record.tags[k]).or_default().insert(y);
    }
    for (tag, ys) in &outputs {
        if ys.len() > 2 {
            return Err(Error::Inconsistent {
                block: None,
                reason: format!(
                    "query {} produced {} distinct outputs",
                    tag.letter(),
                    ys.len()
                ),
            });
        }
    }
    let distinct_outputs = outputs.values().map(BTreeSet::len).sum();
    let mut joint_solves = 0;
    let (qa, qb) = query_pairs(ws);
    let empty = BTreeSet::new();
    for &ya in outputs.get(&QueryTag::PairA).unwrap_or(&empty) {
        for &yb in outputs.get(&QueryTag::PairB).unwrap_or(&empty) {
            joint_solves += 1;
            let a = KernelInstance::new(ws, qa.alpha, qa.beta, ya)?;
            let b = KernelInstance::new(ws, qb.alpha, qb.beta, yb)?;
            match solve_joint(&[a, b]) {
                Ok(x) => candidates.push((x, KeySource::Joint)),
                Err(Error::Inconsistent { .. }) => {}
                Err(e) => return Err(e),
            }
        }
    }
    let mut seen = BTreeSet::new();
    candidates.retain(|&(x, _)| seen.insert(x));

    let mut working = Vec::new();
    for i in 0..candidates.len() {
        for j in i + 1..candidates.len() {
            if explains_all(&known, candidates[i].0, candidates[j].0) {
                working.push((candidates[i], candidates[j]));
            }
        }
    }
    let ((mut k1, mut s1), (mut k2, mut s2)) = match working.as_slice() {
        [] => return Err(coverage_error(merge.as_ref(), record, &known)),
        [one] => *one,
        _ => {
            return Err(Error::Inconsistent {
                block: None,
                reason: format!("{} different key pairs explain every block", working.len()),
            })
        }
    };

    // Keep key1* on the seed-0 side, as in the known-plaintext attack.
    let membership = match &merge {
        Some(m) => {
            let agrees =
                |key: u64, s: usize| (key ^ m.seeds[s].value) & m.seeds[s].mask & full == 0;
            if !(agrees(k1, 0) && agrees(k2, 1)) {
                std::mem::swap(&mut k1, &mut k2);
                std::mem::swap(&mut s1, &mut s2);
            }
            if !(agrees(k1, 0) && agrees(k2, 1)) {
                return Err(Error::InternalConsistency(
                    "recovered sub-keys disagree with the merged seeds".into(),
                ));
            }
            m.membership.clone()
        }
        None => vec![Membership::Unassigned; known.len()],
    };
    let keys = StarredKeys {
        key1: k1,
        key1_mask: full,
        key2: k2,
        key2_mask: full,
    };
    let (selectors, stats) = recover_selectors(&known, &membership, &keys, &observations)?;
    Ok(CpaOutcome {
        key: EquivalentKey {
            word_size: ws,
            key1: k1,
            key2: k2,
            key1_mask: full,
            key2_mask: full,
            selectors,
        },
        merge: merge.map(|m| m.stats),
        selectors: stats,
        key_sources: [s1, s2],
        distinct_outputs,
        joint_solves,
    })
}
