//! How often a single observation confirms a key bit: the analytical model
//! and its measured counterpart.
//!
//! The model treats the output bits and carry knowledge of neighbouring planes
//! as independent. Measurements count what [`solve_state`] actually confirms on
//! uniform `(alpha, beta, x)`; the solver confirms every bit shared by all
//! solutions, so the measured rate is the best any sound solver can reach.

use crate::error::{Error, Result};
use crate::kernel::{solve_state, KernelInstance};
use crate::word::{bit, WordSize};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// `Prob(yt[i] = 0) = 2/3 + 1/(3 * 4^i)`.
pub fn prob_y_zero(i: u32) -> f64 {
    2.0 / 3.0 + 1.0 / (3.0 * 4f64.powi(i as i32))
}

/// Probability that `c[i]` is known: 1 at plane 0, then
/// `P[c_i] = P[c_{i-1}] (7/12 + 1/(6 * 4^(i-1))) + 1/4 - 1/4^i`.
pub fn prob_carry_confirmed(i: u32) -> f64 {
    let mut p = 1.0;
    for j in 1..=i {
        p = p * (7.0 / 12.0 + 1.0 / (6.0 * 4f64.powi(j as i32 - 1))) + 0.25
            - 1.0 / 4f64.powi(j as i32);
    }
    p
}

/// Modelled probability that `x[i]` is confirmed.
pub fn prob_x_confirmed(i: u32) -> f64 {
    if i == 0 {
        return 0.5;
    }
    let a = prob_y_zero(i);
    let c = prob_carry_confirmed(i);
    let direct = 0.5 * a + 0.5 * a * c;
    direct + 0.5 * (1.0 - prob_y_zero(i + 1)) * (1.0 - direct) * c * 0.5
}

/// Exact rate at which the bits shared by all solutions include `x[i]`, for
/// uniform inputs and `i < n - 1`: `1/4 + 2^-(i+2)`.
pub fn optimal_x_rate(i: u32) -> f64 {
    0.25 + 0.5f64.powi(i as i32 + 2)
}

/// Model and measurement for one bit plane.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneProfile {
    pub bit: u32,
    pub model_y_zero: f64,
    pub model_carry: f64,
    pub model_x: f64,
    pub y_zero_count: u64,
    pub carry_count: u64,
    pub x_count: u64,
}

impl PlaneProfile {
    fn rate(&self, count: u64, trials: u64) -> f64 {
        count as f64 / trials as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfirmationProfile {
    pub word_size: WordSize,
    pub trials: u64,
    /// True when every `(alpha, beta, x)` was enumerated.
    pub exhaustive: bool,
    pub planes: Vec<PlaneProfile>,
}

impl ConfirmationProfile {
    pub fn y_zero_rate(&self, i: usize) -> f64 {
        let p = &self.planes[i];
        p.rate(p.y_zero_count, self.trials)
    }

    pub fn carry_rate(&self, i: usize) -> f64 {
        let p = &self.planes[i];
        p.rate(p.carry_count, self.trials)
    }

    pub fn x_rate(&self, i: usize) -> f64 {
        let p = &self.planes[i];
        p.rate(p.x_count, self.trials)
    }
}

#[derive(Clone)]
struct Tally {
    y_zero: Vec<u64>,
    carry: Vec<u64>,
    x: Vec<u64>,
    trials: u64,
}

impl Tally {
    fn new(n: usize) -> Self {
        Tally {
            y_zero: vec![0; n],
            carry: vec![0; n],
            x: vec![0; n],
            trials: 0,
        }
    }

    fn record(&mut self, ws: WordSize, alpha: u64, beta: u64, x: u64) -> Result<()> {
        let inst = KernelInstance::observe(ws, alpha, beta, x);
        let state = solve_state(&inst).map_err(|e| {
            Error::InternalConsistency(format!(
                "solver rejected a genuine observation ({alpha:#x}, {beta:#x}, {x:#x}): {e}"
            ))
        })?;
        let yt = inst.y_tilde();
        for i in 0..ws.bits() {
            let k = i as usize;
            self.y_zero[k] += !bit(yt, i) as u64;
            self.carry[k] += bit(state.carry.known, i) as u64;
            self.x[k] += bit(state.confirmed().1, i) as u64;
        }
        self.trials += 1;
        Ok(())
    }

    fn merge(mut self, other: Tally) -> Tally {
        for (a, b) in [
            (&mut self.y_zero, &other.y_zero),
            (&mut self.carry, &other.carry),
            (&mut self.x, &other.x),
        ] {
            a.iter_mut().zip(b).for_each(|(a, b)| *a += b);
        }
        self.trials += other.trials;
        self
    }
}

const CHUNK: u64 = 1 << 14;

/// Measures confirmation rates at word size `n`. For `n <= 8` all `2^(3n)`
/// inputs are enumerated and `trials` is ignored; otherwise `trials` uniform
/// samples are drawn in fixed chunks, each from its own stream of a generator
/// seeded with `seed`, so the result does not depend on the thread count.
pub fn empirical_profile(ws: WordSize, trials: u64, seed: u64) -> Result<ConfirmationProfile> {
    let n = ws.bits();
    let exhaustive = n <= 8;
    if !exhaustive && trials == 0 {
        return Err(Error::invalid("trials must be at least 1"));
    }
    let width = n as usize;
    let tally = if exhaustive {
        let side = 1u64 << n;
        (0..side * side)
            .into_par_iter()
            .try_fold(
                || Tally::new(width),
                |mut t, ab| {
                    let (alpha, beta) = (ab / side, ab % side);
                    for x in 0..side {
                        t.record(ws, alpha, beta, x)?;
                    }
                    Ok(t)
                },
            )
            .try_reduce(|| Tally::new(width), |a, b| Ok(a.merge(b)))?
    } else {
        let chunks = trials.div_ceil(CHUNK);
        (0..chunks)
            .into_par_iter()
            .map(|chunk| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(chunk);
                let mut t = Tally::new(width);
                let count = CHUNK.min(trials - chunk * CHUNK);
                for _ in 0..count {
                    let mask = ws.mask();
                    let (a, b, x) = (
                        rng.gen::<u64>() & mask,
                        rng.gen::<u64>() & mask,
                        rng.gen::<u64>() & mask,
                    );
                    t.record(ws, a, b, x)?;
                }
                Ok(t)
            })
            .try_reduce(|| Tally::new(width), |a, b| Ok(a.merge(b)))?
    };
    let planes = (0..n)
        .map(|i| {
            let k = i as usize;
            PlaneProfile {
                bit: i,
                model_y_zero: prob_y_zero(i),
                model_carry: prob_carry_confirmed(i),
                model_x: prob_x_confirmed(i),
                y_zero_count: tally.y_zero[k],
                carry_count: tally.carry[k],
                x_count: tally.x[k],
            }
        })
        .collect();
    Ok(ConfirmationProfile {
        word_size: ws,
        trials: tally.trials,
        exhaustive,
        planes,
    })
}
