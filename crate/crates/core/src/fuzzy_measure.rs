//! Fuzzy measures, the data-driven measure of agreement, and the Choquet integral.
//!
//! The Choquet integral only evaluates a measure on the nested sets
//! `A_i = {x_π(1), …, x_π(i)}` induced by sorting the inputs in descending
//! order, so fusion works with [`ChainMeasure`]. The full lattice
//! ([`FuzzyMeasure`]) exists for validation and diagnostics.
//!
//! Measure of agreement over interval evidence `h_1..h_n`: for a coalition
//! `S` the unnormalized worth is
//!
//! ```text
//! w(S) = Σ_{k=2..|S|} |⋃ { h_j1 ∩ … ∩ h_jk : j1 < … < jk in S }| · k / n
//! ```
//!
//! and `g(S) = w(S) / w(X)`. Singletons and the empty set have worth zero.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{cmp_f64, union_length, Interval};

/// Largest input count for which the agreement worth is computed by exact
/// subset enumeration.
pub const DEFAULT_MAX_INPUTS: usize = 12;

/// Largest lattice a [`FuzzyMeasure`] will hold.
const MAX_LATTICE_INPUTS: usize = 20;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeasureError {
    #[error("need at least {min} inputs, got {got}")]
    TooFewInputs { min: usize, got: usize },
    #[error("{n} inputs exceeds the enumeration cap of {cap}")]
    TooManyInputs { n: usize, cap: usize },
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("not a permutation of 0..{n}: {perm:?}")]
    InvalidPermutation { n: usize, perm: Vec<usize> },
    #[error("chain permutation does not sort the inputs in descending order")]
    PermutationMismatch,
    #[error("inputs have zero total agreement (pairwise disjoint evidence)")]
    ZeroAgreement,
}

/// The first violated axiom found while validating a measure.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeasureViolation {
    #[error("normality: g(empty) = {value}, expected 0")]
    Normality { value: f64 },
    #[error("monotonicity: g({subset:#b}) = {lower} > g({superset:#b}) = {upper}")]
    Monotonicity {
        subset: u64,
        superset: u64,
        lower: f64,
        upper: f64,
    },
    #[error("range: g({set:#b}) = {value} outside [0, 1]")]
    Range { set: u64, value: f64 },
}

/// Set function on all subsets of `n` inputs, indexed by bitmask (bit `i` = input `i`).
#[derive(Debug, Clone, PartialEq)]
pub struct FuzzyMeasure {
    n: usize,
    values: Vec<f64>,
}

impl FuzzyMeasure {
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self, MeasureError> {
        if n == 0 {
            return Err(MeasureError::TooFewInputs { min: 1, got: 0 });
        }
        if n > MAX_LATTICE_INPUTS {
            return Err(MeasureError::TooManyInputs {
                n,
                cap: MAX_LATTICE_INPUTS,
            });
        }
        if values.len() != 1 << n {
            return Err(MeasureError::LengthMismatch {
                expected: 1 << n,
                got: values.len(),
            });
        }
        Ok(Self { n, values })
    }

    pub fn from_fn(n: usize, f: impl Fn(u64) -> f64) -> Result<Self, MeasureError> {
        let size = 1u64.checked_shl(n as u32).unwrap_or(0) as usize;
        Self::new(n, (0..size as u64).map(f).collect())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, set: u64) -> f64 {
        self.values[set as usize]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Checks normality, range and monotonicity over the whole lattice.
    ///
    /// Monotonicity is checked on covering pairs `A ⊂ A ∪ {i}`, which implies
    /// it for every `A ⊆ B`.
    pub fn validate(&self) -> Result<(), MeasureViolation> {
        let empty = self.values[0];
        if empty != 0.0 {
            return Err(MeasureViolation::Normality { value: empty });
        }
        for (set, &value) in self.values.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(MeasureViolation::Range {
                    set: set as u64,
                    value,
                });
            }
        }
        for set in 0..self.values.len() as u64 {
            for i in 0..self.n {
                let bit = 1u64 << i;
                if set & bit != 0 {
                    continue;
                }
                let superset = set | bit;
                let (lower, upper) = (self.get(set), self.get(superset));
                if lower > upper {
                    return Err(MeasureViolation::Monotonicity {
                        subset: set,
                        superset,
                        lower,
                        upper,
                    });
                }
            }
        }
        Ok(())
    }

    /// The chain of nested sets induced by `perm`.
    pub fn chain(&self, perm: &[usize]) -> Result<ChainMeasure, MeasureError> {
        check_permutation(perm, self.n)?;
        let mut set = 0u64;
        let values = perm
            .iter()
            .map(|&i| {
                set |= 1 << i;
                self.get(set)
            })
            .collect();
        Ok(ChainMeasure {
            permutation: perm.to_vec(),
            values,
        })
    }

    pub fn to_lattice(&self) -> Lattice {
        Lattice {
            n: self.n,
            values: self
                .values
                .iter()
                .enumerate()
                .map(|(set, &v)| (subset_key(set as u64, self.n), v))
                .collect(),
        }
    }
}

/// Measure values on the chain `A_1 ⊂ A_2 ⊂ … ⊂ A_n`, where
/// `A_i` holds the first `i` entries of `permutation`. `g(A_0) = 0` is implicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainMeasure {
    permutation: Vec<usize>,
    values: Vec<f64>,
}

impl ChainMeasure {
    pub fn new(permutation: Vec<usize>, values: Vec<f64>) -> Result<Self, MeasureError> {
        check_permutation(&permutation, values.len())?;
        Ok(Self {
            permutation,
            values,
        })
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    /// `g(A_1), …, g(A_n)`
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Bitmask of `A_i` (1-based; `A_0` is empty).
    pub fn set(&self, i: usize) -> u64 {
        self.permutation[..i].iter().fold(0, |acc, &j| acc | 1 << j)
    }

    pub fn validate(&self) -> Result<(), MeasureViolation> {
        let mut prev = (0u64, 0.0);
        for i in 1..=self.n() {
            let value = self.values[i - 1];
            let set = self.set(i);
            if !(0.0..=1.0).contains(&value) {
                return Err(MeasureViolation::Range { set, value });
            }
            if prev.1 > value {
                return Err(MeasureViolation::Monotonicity {
                    subset: prev.0,
                    superset: set,
                    lower: prev.1,
                    upper: value,
                });
            }
            prev = (set, value);
        }
        Ok(())
    }

    pub fn to_lattice(&self) -> Lattice {
        let n = self.n();
        let mut values = BTreeMap::new();
        values.insert(subset_key(0, n), 0.0);
        for i in 1..=n {
            values.insert(subset_key(self.set(i), n), self.values[i - 1]);
        }
        Lattice { n, values }
    }
}

/// JSON-friendly lattice dump: subset label (e.g. `"101:{x1,x3}"`) to measure value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub n: usize,
    pub values: BTreeMap<String, f64>,
}

/// `101:{x1,x3}` style label, members 1-based. The zero-padded bitmask prefix
/// keeps the map ordered by bitmask.
fn subset_key(set: u64, n: usize) -> String {
    let members: Vec<String> = (0..n)
        .filter(|i| set & (1 << i) != 0)
        .map(|i| format!("x{}", i + 1))
        .collect();
    format!("{:0width$b}:{{{}}}", set, members.join(","), width = n)
}

fn check_permutation(perm: &[usize], n: usize) -> Result<(), MeasureError> {
    let mut seen = vec![false; n];
    let ok = perm.len() == n
        && perm
            .iter()
            .all(|&i| i < n && !std::mem::replace(&mut seen[i], true));
    if ok {
        Ok(())
    } else {
        Err(MeasureError::InvalidPermutation {
            n,
            perm: perm.to_vec(),
        })
    }
}

/// Indices ordering `values` descending; ties keep ascending index.
pub fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| cmp_f64(values[b], values[a]));
    idx
}

/// Unnormalized agreement worth of every prefix of `ordered`, with weights
/// `k / total` for `k`-wise intersections.
///
/// Subset intersections are built incrementally by bitmask: the meet of a
/// set is the meet of the set without its highest member with that member.
/// Prefix `i` owns exactly the masks below `2^i`.
fn prefix_worths(ordered: &[Interval], total: usize) -> Vec<f64> {
    let n = ordered.len();
    let mut meets: Vec<Option<Interval>> = vec![None; 1 << n];
    // by_size[k] collects k-wise intersections of the current prefix
    let mut by_size: Vec<Vec<Option<Interval>>> = vec![Vec::new(); n + 1];
    let mut worths = Vec::with_capacity(n);

    for (i, iv) in ordered.iter().enumerate() {
        let top = 1usize << i;
        meets[top] = Some(*iv);
        for rest in 1..top {
            let meet = meets[rest].and_then(|m| m.intersect(iv));
            meets[top | rest] = meet;
            by_size[(rest.count_ones() + 1) as usize].push(meet);
        }
        let worth = (2..=i + 1)
            .map(|k| union_length(by_size[k].iter().copied()) * k as f64 / total as f64)
            .fold(0.0, |a, b| a + b);
        worths.push(worth);
    }
    worths
}

/// Agreement measure on the chain induced by `perm`, with the default input cap.
pub fn agreement_chain(evidence: &[Interval], perm: &[usize]) -> Result<ChainMeasure, MeasureError> {
    agreement_chain_capped(evidence, perm, DEFAULT_MAX_INPUTS)
}

pub fn agreement_chain_capped(
    evidence: &[Interval],
    perm: &[usize],
    cap: usize,
) -> Result<ChainMeasure, MeasureError> {
    let n = evidence.len();
    if n < 2 {
        return Err(MeasureError::TooFewInputs { min: 2, got: n });
    }
    if n > cap {
        return Err(MeasureError::TooManyInputs { n, cap });
    }
    check_permutation(perm, n)?;

    let ordered: Vec<Interval> = perm.iter().map(|&i| evidence[i]).collect();
    let worths = prefix_worths(&ordered, n);
    let normalizer = worths[n - 1];
    if normalizer <= 0.0 {
        return Err(MeasureError::ZeroAgreement);
    }
    let values = worths.iter().map(|w| w / normalizer).collect();
    Ok(ChainMeasure {
        permutation: perm.to_vec(),
        values,
    })
}

/// Agreement measure on the full lattice of `evidence`.
pub fn agreement_measure(evidence: &[Interval]) -> Result<FuzzyMeasure, MeasureError> {
    let n = evidence.len();
    if n < 2 {
        return Err(MeasureError::TooFewInputs { min: 2, got: n });
    }
    if n > DEFAULT_MAX_INPUTS {
        return Err(MeasureError::TooManyInputs {
            n,
            cap: DEFAULT_MAX_INPUTS,
        });
    }
    let worth = |set: u64| {
        let members: Vec<Interval> = (0..n)
            .filter(|i| set & (1 << i) != 0)
            .map(|i| evidence[i])
            .collect();
        if members.len() < 2 {
            0.0
        } else {
            *prefix_worths(&members, n).last().unwrap()
        }
    };
    let normalizer = worth((1u64 << n) - 1);
    if normalizer <= 0.0 {
        return Err(MeasureError::ZeroAgreement);
    }
    FuzzyMeasure::from_fn(n, |set| worth(set) / normalizer)
}

/// Discrete Choquet integral `Σ h_π(i) · (g(A_i) − g(A_{i−1}))`.
///
/// The chain's permutation must order `h` descending.
pub fn choquet(h: &[f64], chain: &ChainMeasure) -> Result<f64, MeasureError> {
    if h.len() != chain.n() {
        return Err(MeasureError::LengthMismatch {
            expected: chain.n(),
            got: h.len(),
        });
    }
    if h.is_empty() {
        return Err(MeasureError::TooFewInputs { min: 1, got: 0 });
    }
    let sorted = chain
        .permutation
        .windows(2)
        .all(|w| h[w[0]] >= h[w[1]]);
    if !sorted {
        return Err(MeasureError::PermutationMismatch);
    }
    // summed by parts, Σ (h_π(i) − h_π(i+1)) · g(A_i), so equal inputs come back exactly
    let p = &chain.permutation;
    let n = p.len();
    let mut acc = h[p[n - 1]] * chain.values[n - 1];
    for k in 0..n - 1 {
        acc += (h[p[k]] - h[p[k + 1]]) * chain.values[k];
    }
    Ok(acc)
}

/// Result of an interval-valued integral. `repaired` is set when the two
/// endpoint integrals came out inverted and were swapped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalIntegral {
    pub value: Interval,
    pub repaired: bool,
}

/// Interval-valued Choquet integral: the left endpoints integrated against
/// `g_lo`, the right endpoints against `g_hi`.
pub fn choquet_interval(
    evidence: &[Interval],
    g_lo: &ChainMeasure,
    g_hi: &ChainMeasure,
) -> Result<IntervalIntegral, MeasureError> {
    let lefts: Vec<f64> = evidence.iter().map(Interval::lo).collect();
    let rights: Vec<f64> = evidence.iter().map(Interval::hi).collect();
    let lo = choquet(&lefts, g_lo)?;
    let hi = choquet(&rights, g_hi)?;
    let (lo, hi, repaired) = if lo <= hi {
        (lo, hi, false)
    } else {
        (hi, lo, true)
    };
    Ok(IntervalIntegral {
        value: Interval::new(lo, hi).expect("choquet of finite evidence is finite"),
        repaired,
    })
}

/// Endpoint chains for interval evidence: one sorted by left endpoints and
/// one by right endpoints, each carrying the agreement measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointChains {
    pub lower: ChainMeasure,
    pub upper: ChainMeasure,
}

pub fn agreement_endpoint_chains(evidence: &[Interval]) -> Result<EndpointChains, MeasureError> {
    let lefts: Vec<f64> = evidence.iter().map(Interval::lo).collect();
    let rights: Vec<f64> = evidence.iter().map(Interval::hi).collect();
    Ok(EndpointChains {
        lower: agreement_chain(evidence, &descending_order(&lefts))?,
        upper: agreement_chain(evidence, &descending_order(&rights))?,
    })
}

/// Interval-valued integral of `evidence` w.r.t. its own measure of agreement.
pub fn agreement_integral(evidence: &[Interval]) -> Result<IntervalIntegral, MeasureError> {
    let chains = agreement_endpoint_chains(evidence)?;
    choquet_interval(evidence, &chains.lower, &chains.upper)
}
