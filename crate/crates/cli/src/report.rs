//! JSON reports written by the attack subcommands. Key material is hex.

use mckba_core::cipher::ParityClass;
use mckba_core::cpa::KeySource;
use mckba_core::kpa::{EquivalentKey, MergeStats, SelectorEstimate, SelectorStats};
use mckba_core::prob::ConfirmationProfile;
use mckba_core::{SecretKey, WordSize};
use serde::{Deserialize, Serialize};

pub fn hex(ws: WordSize, v: u64) -> String {
    format!(
        "{:#0width$x}",
        v,
        width = 2 + ws.bits().div_ceil(4) as usize
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeyFile {
    pub n: u32,
    pub key1: String,
    pub key2: String,
    pub x0: f64,
    pub distance: u32,
}

impl KeyFile {
    pub fn new(key: &SecretKey) -> Self {
        KeyFile {
            n: key.word_size.bits(),
            key1: hex(key.word_size, key.key1),
            key2: hex(key.word_size, key.key2),
            x0: key.x0,
            distance: (key.key1 ^ key.key2).count_ones(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunInfo {
    pub command: String,
    pub n: u32,
    pub width: usize,
    pub height: usize,
    pub blocks: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveredKey {
    pub key1: String,
    pub key1_mask: String,
    pub key2: String,
    pub key2_mask: String,
    pub complete: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockCounts {
    pub key1: usize,
    pub key2: usize,
    pub ambiguous: usize,
    pub xor: usize,
    pub xnor: usize,
    pub from_seed: usize,
    pub from_confirmed_bit: usize,
    pub from_pair_check: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetInfo {
    pub path: String,
    pub out: String,
    /// Blocks decrypted with a guessed key class.
    pub guessed_blocks: usize,
}

/// Result of `kpa` or `cpa-recover`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub run: RunInfo,
    pub key: RecoveredKey,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merge: Option<MergeStats>,
    pub blocks: BlockCounts,
    pub ambiguous_blocks: Vec<usize>,
    /// One character per block: `0`-`3` for a recovered selector, `x`/`n`
    /// for an XOR/XNOR block whose key class is unknown.
    pub selectors: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_sources: Option<[KeySource; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_confirmed_bits: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<TargetInfo>,
}

impl AttackReport {
    pub fn new(
        run: RunInfo,
        key: &EquivalentKey,
        merge: Option<MergeStats>,
        stats: &SelectorStats,
    ) -> Self {
        let ws = key.word_size;
        AttackReport {
            run,
            key: RecoveredKey {
                key1: hex(ws, key.key1),
                key1_mask: hex(ws, key.key1_mask),
                key2: hex(ws, key.key2),
                key2_mask: hex(ws, key.key2_mask),
                complete: key.is_complete(),
            },
            merge,
            blocks: BlockCounts {
                key1: stats.key1_blocks,
                key2: stats.key2_blocks,
                ambiguous: stats.ambiguous,
                xor: stats.xor_blocks,
                xnor: stats.xnor_blocks,
                from_seed: stats.from_seed,
                from_confirmed_bit: stats.from_confirmed_bit,
                from_pair_check: stats.from_pair_check,
            },
            ambiguous_blocks: key.ambiguous_blocks(),
            selectors: key
                .selectors
                .iter()
                .map(|s| match s {
                    SelectorEstimate::Known(sel) => char::from(b'0' + sel.value()),
                    SelectorEstimate::AmbiguousKeyClass(ParityClass::Xor) => 'x',
                    SelectorEstimate::AmbiguousKeyClass(ParityClass::Xnor) => 'n',
                })
                .collect(),
            key_sources: None,
            mean_confirmed_bits: None,
            target: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneRow {
    pub bit: u32,
    pub model_y_zero: f64,
    pub measured_y_zero: f64,
    pub model_carry: f64,
    pub measured_carry: f64,
    pub model_x: f64,
    pub measured_x: f64,
    pub abs_diff_x: f64,
    /// Exact rate reachable by any sound solver; bit `n - 1` is never determined.
    pub optimal_x: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub command: String,
    pub n: u32,
    pub trials: u64,
    pub seed: u64,
    pub exhaustive: bool,
    pub planes: Vec<PlaneRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<u64>,
}

impl AnalysisReport {
    pub fn new(profile: &ConfirmationProfile, seed: u64) -> Self {
        let n = profile.word_size.bits();
        let planes = profile
            .planes
            .iter()
            .enumerate()
            .map(|(i, p)| PlaneRow {
                bit: p.bit,
                model_y_zero: p.model_y_zero,
                measured_y_zero: profile.y_zero_rate(i),
                model_carry: p.model_carry,
                measured_carry: profile.carry_rate(i),
                model_x: p.model_x,
                measured_x: profile.x_rate(i),
                abs_diff_x: (p.model_x - profile.x_rate(i)).abs(),
                optimal_x: if p.bit + 1 < n {
                    mckba_core::prob::optimal_x_rate(p.bit)
                } else {
                    0.0
                },
            })
            .collect();
        AnalysisReport {
            command: "analyze".into(),
            n,
            trials: profile.trials,
            seed,
            exhaustive: profile.exhaustive,
            planes,
            elapsed_ms: None,
        }
    }
}
