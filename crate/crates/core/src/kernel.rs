//! Partial inversion of the kernel `y = (alpha + x) ^ (beta + x) mod 2^n`.
//!
//! Writing `yt = y ^ alpha ^ beta`, every bit plane of the kernel reduces to
//! the carry recurrences
//!
//! ```text
//! yt[i+1] = c[i+1] ^ ct[i+1]
//! c[i+1]  = maj(x[i], alpha[i], c[i])
//! ct[i+1] = maj(x[i], beta[i],  ct[i])
//! ```
//!
//! with `c[0] = ct[0] = 0`, so `yt[0]` is always zero and `ct[i] = c[i] ^ yt[i]`.
//! The solver walks the planes from the least significant upward, keeping
//! three-valued knowledge of `x[i]`, `c[i]` and `ct[i]`, and marks a bit of `x`
//! confirmed only when the observation forces it. Bit `n - 1` of `x` never
//! influences `y`, so solutions are residues modulo `2^(n-1)`.

use crate::error::{Error, Result};
use crate::word::{bit, WordSize};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;

/// `((alpha + x) mod 2^n) ^ ((beta + x) mod 2^n)`.
#[inline]
pub fn eval_kernel(ws: WordSize, alpha: u64, beta: u64, x: u64) -> u64 {
    ws.add(alpha, x) ^ ws.add(beta, x)
}

#[inline]
fn maj(a: bool, b: bool, c: bool) -> bool {
    (a & b) ^ (a & c) ^ (b & c)
}

/// Carries and masked output produced by one bit plane.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RowOutput {
    pub carry: bool,
    pub carry_tilde: bool,
    pub y_tilde: bool,
}

/// One step of the carry recurrence.
pub fn next_row(x: bool, carry: bool, carry_tilde: bool, alpha: bool, beta: bool) -> RowOutput {
    let c = maj(x, alpha, carry);
    let ct = maj(x, beta, carry_tilde);
    RowOutput {
        carry: c,
        carry_tilde: ct,
        y_tilde: c ^ ct,
    }
}

/// What a bit plane can reveal, keyed by `4 alpha[i] + 2 beta[i] + yt[i]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CaseTag {
    /// Keys 0 and 6: the next output bit is always 0.
    NoInfo,
    /// Keys 1 and 7: `x[i] = alpha[i] ^ yt[i+1]`.
    DirectX,
    /// Keys 2 and 4: `x[i] ^ c[i] = yt[i+1]`.
    LinkedPair,
    /// Keys 3 and 5: `c[i] = beta[i] ^ yt[i+1]`.
    CarryReveal,
}

pub fn classify_case(alpha: bool, beta: bool, y_tilde: bool) -> CaseTag {
    match 4 * alpha as u8 + 2 * beta as u8 + y_tilde as u8 {
        0 | 6 => CaseTag::NoInfo,
        1 | 7 => CaseTag::DirectX,
        2 | 4 => CaseTag::LinkedPair,
        _ => CaseTag::CarryReveal,
    }
}

impl fmt::Display for CaseTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CaseTag::NoInfo => "no-info",
            CaseTag::DirectX => "direct-x",
            CaseTag::LinkedPair => "linked-pair",
            CaseTag::CarryReveal => "carry-reveal",
        };
        f.write_str(s)
    }
}

/// One kernel observation: known `alpha`, `beta` and output `y`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelInstance {
    pub word_size: WordSize,
    pub alpha: u64,
    pub beta: u64,
    pub y: u64,
}

impl KernelInstance {
    pub fn new(word_size: WordSize, alpha: u64, beta: u64, y: u64) -> Result<Self> {
        word_size.check(alpha, "alpha")?;
        word_size.check(beta, "beta")?;
        word_size.check(y, "y")?;
        Ok(KernelInstance {
            word_size,
            alpha,
            beta,
            y,
        })
    }

    /// The instance a secret `x` produces.
    pub fn observe(word_size: WordSize, alpha: u64, beta: u64, x: u64) -> Self {
        let mask = word_size.mask();
        let (alpha, beta) = (alpha & mask, beta & mask);
        KernelInstance {
            word_size,
            alpha,
            beta,
            y: eval_kernel(word_size, alpha, beta, x & mask),
        }
    }

    pub fn y_tilde(&self) -> u64 {
        self.y ^ self.alpha ^ self.beta
    }

    /// Exact feasibility test: is there any `x` with `eval_kernel(alpha, beta, x) = y`?
    ///
    /// Tracks the set of reachable `c[i]` values (at most two) plane by plane.
    pub fn is_consistent(&self) -> bool {
        let yt = self.y_tilde();
        if yt & 1 != 0 {
            return false;
        }
        let n = self.word_size.bits();
        // bit 0: c = 0 reachable, bit 1: c = 1 reachable
        let mut reach = 0b01u8;
        for i in 0..n - 1 {
            let (a, b, yi, yn) = (
                bit(self.alpha, i),
                bit(self.beta, i),
                bit(yt, i),
                bit(yt, i + 1),
            );
            let mut next = 0u8;
            for c in [false, true] {
                if reach & (1 << c as u8) == 0 {
                    continue;
                }
                for x in [false, true] {
                    let row = next_row(x, c, c ^ yi, a, b);
                    if row.y_tilde == yn {
                        next |= 1 << row.carry as u8;
                    }
                }
            }
            if next == 0 {
                return false;
            }
            reach = next;
        }
        true
    }
}

/// Bits of `x` recovered from one block, with unknown bits zeroed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartialKeyObservation {
    pub value: u64,
    pub mask: u64,
    pub block_index: usize,
}

impl PartialKeyObservation {
    pub fn new(word_size: WordSize, value: u64, mask: u64, block_index: usize) -> Result<Self> {
        if value & !mask != 0 {
            return Err(Error::invalid(
                "observation has value bits outside its mask",
            ));
        }
        if mask & !word_size.low_mask() != 0 {
            return Err(Error::invalid(
                "observation mask may only cover bits 0..n-2",
            ));
        }
        Ok(PartialKeyObservation {
            value,
            mask,
            block_index,
        })
    }

    pub fn confirmed(&self) -> u32 {
        self.mask.count_ones()
    }

    /// True when the two disagree on some bit both have confirmed.
    #[inline]
    pub fn conflicts(&self, value: u64, mask: u64) -> bool {
        (self.value ^ value) & self.mask & mask != 0
    }
}

/// Three-valued bit vector: `known` marks determined bits, `value` holds them.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TritWord {
    pub known: u64,
    pub value: u64,
}

impl TritWord {
    #[inline]
    pub fn get(&self, i: u32) -> Option<bool> {
        bit(self.known, i).then(|| bit(self.value, i))
    }

    #[inline]
    fn set(&mut self, i: u32, v: bool, what: &str) -> Result<bool> {
        match self.get(i) {
            Some(old) if old == v => Ok(false),
            Some(_) => Err(Error::inconsistent(format!(
                "conflicting deductions for {what}[{i}]"
            ))),
            None => {
                self.known |= 1 << i;
                self.value |= (v as u64) << i;
                Ok(true)
            }
        }
    }
}

/// Which rule confirmed a bit of `x`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Deduction {
    /// `x[i] = alpha[i] ^ yt[i+1]`
    DirectX,
    /// `x[i] = yt[i+1] ^ c[i]` once `c[i]` is known
    LinkedPair,
    /// `x[i-1] = c[i]` once `c[i]` is revealed and `alpha[i-1] + c[i-1] = 1`
    Retroactive,
}

/// Knowledge about `x`, `c` and `ct` after solving one instance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SolveState {
    pub word_size: WordSize,
    pub x: TritWord,
    pub carry: TritWord,
    pub carry_tilde: TritWord,
    deductions: [Option<Deduction>; 64],
    cases: [Option<CaseTag>; 64],
}

impl SolveState {
    fn new(word_size: WordSize) -> Self {
        let mut s = SolveState {
            word_size,
            x: TritWord::default(),
            carry: TritWord::default(),
            carry_tilde: TritWord::default(),
            deductions: [None; 64],
            cases: [None; 64],
        };
        s.carry.known = 1;
        s.carry_tilde.known = 1;
        s
    }

    pub fn deduction(&self, i: u32) -> Option<Deduction> {
        self.deductions[i as usize]
    }

    pub fn case(&self, i: u32) -> Option<CaseTag> {
        self.cases[i as usize]
    }

    /// Confirmed bits of `x` as a `(value, mask)` pair; bit `n - 1` is never included.
    pub fn confirmed(&self) -> (u64, u64) {
        let mask = self.x.known & self.word_size.low_mask();
        (self.x.value & mask, mask)
    }

    fn set_x(&mut self, i: u32, v: bool, why: Deduction) -> Result<bool> {
        let changed = self.x.set(i, v, "x")?;
        if changed {
            self.deductions[i as usize] = Some(why);
        }
        Ok(changed)
    }

    /// `ct[i] = c[i] ^ yt[i]`, in whichever direction is possible.
    fn couple(&mut self, i: u32, yt_i: bool) -> Result<()> {
        if let Some(c) = self.carry.get(i) {
            self.carry_tilde.set(i, c ^ yt_i, "ct")?;
        } else if let Some(ct) = self.carry_tilde.get(i) {
            self.carry.set(i, ct ^ yt_i, "c")?;
        }
        Ok(())
    }
}

/// Majority with unknowns: defined when all three inputs are known or two known ones agree.
fn maj_partial(a: Option<bool>, b: Option<bool>, c: Option<bool>) -> Option<bool> {
    match (a, b, c) {
        (Some(a), Some(b), Some(c)) => Some(maj(a, b, c)),
        (Some(a), Some(b), None) | (Some(a), None, Some(b)) | (None, Some(a), Some(b))
            if a == b =>
        {
            Some(a)
        }
        _ => None,
    }
}

const SWEEPS: usize = 2;

/// Runs the plane-by-plane deduction rules and returns everything learned.
pub fn solve_state(inst: &KernelInstance) -> Result<SolveState> {
    let yt = inst.y_tilde();
    if yt & 1 != 0 {
        return Err(Error::inconsistent("bit 0 of y ^ alpha ^ beta must be 0"));
    }
    if !inst.is_consistent() {
        return Err(Error::inconsistent("no x satisfies the observation"));
    }
    let n = inst.word_size.bits();
    let mut st = SolveState::new(inst.word_size);

    for _ in 0..SWEEPS {
        for i in 0..n - 1 {
            let a = bit(inst.alpha, i);
            let b = bit(inst.beta, i);
            let yi = bit(yt, i);
            let yn = bit(yt, i + 1);
            st.couple(i, yi)?;

            let case = classify_case(a, b, yi);
            st.cases[i as usize] = Some(case);
            match case {
                CaseTag::NoInfo => {
                    if yn {
                        return Err(Error::inconsistent(format!(
                            "plane {i} cannot produce a carry difference"
                        )));
                    }
                }
                CaseTag::DirectX => {
                    st.set_x(i, a ^ yn, Deduction::DirectX)?;
                }
                CaseTag::LinkedPair => match st.carry.get(i) {
                    Some(c) => {
                        st.set_x(i, yn ^ c, Deduction::LinkedPair)?;
                    }
                    // x != c: each carry out equals its addend bit.
                    None if yn => {
                        st.carry.set(i + 1, a, "c")?;
                        st.carry_tilde.set(i + 1, b, "ct")?;
                    }
                    None => {}
                },
                CaseTag::CarryReveal => {
                    st.carry.set(i, b ^ yn, "c")?;
                    st.couple(i, yi)?;
                }
            }

            // Carry forwarding.
            let x = st.x.get(i);
            if let Some(c) = maj_partial(x, Some(a), st.carry.get(i)) {
                st.carry.set(i + 1, c, "c")?;
            }
            if let Some(ct) = maj_partial(x, Some(b), st.carry_tilde.get(i)) {
                st.carry_tilde.set(i + 1, ct, "ct")?;
            }
            st.couple(i + 1, yn)?;

            // Retroactive: c[i] = x[i-1] when exactly one of alpha[i-1], c[i-1] is set.
            if i > 0 && st.x.get(i - 1).is_none() {
                let p = i - 1;
                let via_c = match (st.carry.get(p), st.carry.get(i)) {
                    (Some(cp), Some(ci)) if bit(inst.alpha, p) != cp => Some(ci),
                    _ => None,
                };
                let via_ct = match (st.carry_tilde.get(p), st.carry_tilde.get(i)) {
                    (Some(cp), Some(ci)) if bit(inst.beta, p) != cp => Some(ci),
                    _ => None,
                };
                if let Some(v) = via_c.or(via_ct) {
                    st.set_x(p, v, Deduction::Retroactive)?;
                }
            }
        }
    }
    Ok(st)
}

/// Confirmed bits of `x` for one block. Every confirmed bit is guaranteed correct.
pub fn solve_single_query(
    inst: &KernelInstance,
    block_index: usize,
) -> Result<PartialKeyObservation> {
    let (value, mask) = solve_state(inst)?.confirmed();
    Ok(PartialKeyObservation {
        value,
        mask,
        block_index,
    })
}

pub const BRUTE_FORCE_LIMIT: u32 = 16;

/// Every solution residue `x mod 2^(n-1)`, by exhaustive search.
pub fn brute_force_solutions(inst: &KernelInstance) -> Result<BTreeSet<u64>> {
    let n = inst.word_size.bits();
    if n > BRUTE_FORCE_LIMIT {
        return Err(Error::Intractable(n));
    }
    let low = inst.word_size.low_mask();
    Ok((0..=inst.word_size.mask())
        .filter(|&x| eval_kernel(inst.word_size, inst.alpha, inst.beta, x) == inst.y)
        .map(|x| x & low)
        .collect())
}

/// Bits shared by every member of a non-empty solution set, as `(value, mask)`.
pub fn common_bits(ws: WordSize, solutions: &BTreeSet<u64>) -> Option<(u64, u64)> {
    let first = *solutions.iter().next()?;
    let differ = solutions.iter().fold(0u64, |acc, &s| acc | (s ^ first));
    let mask = ws.low_mask() & !differ;
    Some((first & mask, mask))
}
