//! Shapley and leave-one-out values over a coalition-score function, plus
//! the evaluation metrics used to judge a valuation.
//!
//! A game is any `FnMut(&[usize]) -> f64` taking sorted owner indices. The
//! exact computation enumerates all `2^N` coalitions and groups marginal
//! contributions by coalition size before applying the combinatorial
//! weights, which keeps the floating-point error well under the 1e-12
//! efficiency tolerance. The Monte Carlo estimator samples uniform
//! permutations and accumulates per-owner marginals with Welford's method,
//! memoizing coalition scores by bitmask.

use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha20Rng;
use std::collections::HashMap;
use std::str::FromStr;

/// Largest owner count the exact enumeration accepts (4096 coalitions).
pub const EXACT_SHAPLEY_CAP: usize = 12;

fn mask_indices(mask: u64) -> Vec<usize> {
    (0..64).filter(|i| mask >> i & 1 == 1).collect()
}

fn binom(n: usize, k: usize) -> f64 {
    let mut out = 1.0;
    for j in 0..k.min(n - k) {
        out = out * (n - j) as f64 / (j + 1) as f64;
    }
    out
}

/// Exact Shapley values plus the full coalition-utility table.
#[derive(Debug, Clone)]
pub struct ExactShapley {
    pub values: Vec<f64>,
    /// Utility of every coalition, indexed by owner bitmask.
    pub utilities: Vec<f64>,
}

impl ExactShapley {
    pub fn empty_utility(&self) -> f64 {
        self.utilities[0]
    }

    pub fn grand_utility(&self) -> f64 {
        *self.utilities.last().unwrap()
    }

    /// Signed gap between Σ values and u(I) − u(∅); zero for a correct
    /// computation up to rounding.
    pub fn efficiency_gap(&self) -> f64 {
        self.values.iter().sum::<f64>() - (self.grand_utility() - self.empty_utility())
    }

    /// The table as (sorted owner indices, utility) rows.
    pub fn coalition_table(&self) -> Vec<(Vec<usize>, f64)> {
        self.utilities
            .iter()
            .enumerate()
            .map(|(mask, &u)| (mask_indices(mask as u64), u))
            .collect()
    }
}

/// Enumerate all coalitions and average the weighted marginal contribution
/// of each owner.
pub fn shapley_exact<F>(n: usize, mut u: F) -> Result<ExactShapley>
where
    F: FnMut(&[usize]) -> f64,
{
    if n == 0 {
        return Err(Error::InvalidParameter("no owners to value".into()));
    }
    if n > EXACT_SHAPLEY_CAP {
        return Err(Error::InvalidParameter(format!(
            "{n} owners exceed the exact cap of {EXACT_SHAPLEY_CAP}; use shapley_mc"
        )));
    }
    let utilities: Vec<f64> =
        (0..1u64 << n).map(|mask| u(&mask_indices(mask))).collect();
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        let bit = 1u64 << i;
        // Marginal sums grouped by |C|, combined with one weight per size.
        let mut by_size = vec![0.0; n];
        for mask in 0..1u64 << n {
            if mask & bit == 0 {
                let s = mask.count_ones() as usize;
                by_size[s] += utilities[(mask | bit) as usize] - utilities[mask as usize];
            }
        }
        let v: f64 =
            (0..n).map(|s| by_size[s] / binom(n - 1, s)).sum::<f64>() / n as f64;
        values.push(v);
    }
    Ok(ExactShapley { values, utilities })
}

/// Monte Carlo Shapley estimates with per-owner standard errors.
#[derive(Debug, Clone)]
pub struct McShapley {
    pub values: Vec<f64>,
    /// Standard error of each estimate (infinite for a single permutation).
    pub stderr: Vec<f64>,
    pub permutations: u64,
    /// Distinct coalitions actually scored (memo misses).
    pub evaluations: u64,
}

/// Default permutation count honoring the O(N log N) sample bound with an
/// explicit constant of 10.
pub fn default_mc_samples(n: usize) -> u64 {
    ((10.0 * n as f64 * (n as f64).ln()).ceil() as u64).max(1)
}

/// Estimate Shapley values from `m` uniformly random permutations: each
/// permutation contributes one marginal per owner as the prefix grows.
pub fn shapley_mc<F>(n: usize, m: u64, mut u: F, rng: &mut ChaCha20Rng) -> Result<McShapley>
where
    F: FnMut(&[usize]) -> f64,
{
    if n == 0 || n > 63 {
        return Err(Error::InvalidParameter(format!(
            "owner count {n} outside the supported 1..=63"
        )));
    }
    if m == 0 {
        return Err(Error::InvalidParameter("at least one permutation required".into()));
    }
    let mut memo: HashMap<u64, f64> = HashMap::new();
    let mut score = |mask: u64, u: &mut F| -> f64 {
        *memo.entry(mask).or_insert_with(|| u(&mask_indices(mask)))
    };
    let mut order: Vec<usize> = (0..n).collect();
    let mut mean = vec![0.0; n];
    let mut m2 = vec![0.0; n];
    for t in 1..=m {
        order.shuffle(rng);
        let mut mask = 0u64;
        let mut prev = score(mask, &mut u);
        for &i in &order {
            mask |= 1 << i;
            let cur = score(mask, &mut u);
            let x = cur - prev;
            let delta = x - mean[i];
            mean[i] += delta / t as f64;
            m2[i] += delta * (x - mean[i]);
            prev = cur;
        }
    }
    let stderr = m2
        .iter()
        .map(|&s| if m > 1 { (s / (m - 1) as f64 / m as f64).sqrt() } else { f64::INFINITY })
        .collect();
    Ok(McShapley { values: mean, stderr, permutations: m, evaluations: memo.len() as u64 })
}

/// Leave-one-out values: u(I) − u(I∖{i}) per owner.
pub fn loo_values<F>(n: usize, mut u: F) -> Result<Vec<f64>>
where
    F: FnMut(&[usize]) -> f64,
{
    if n == 0 {
        return Err(Error::InvalidParameter("no owners to value".into()));
    }
    let full: Vec<usize> = (0..n).collect();
    let grand = u(&full);
    Ok((0..n)
        .map(|i| {
            let rest: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            grand - u(&rest)
        })
        .collect())
}

/// Which end of the valuation a removal experiment deletes first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RemovalMode {
    Low,
    High,
}

impl FromStr for RemovalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low" => Ok(RemovalMode::Low),
            "high" => Ok(RemovalMode::High),
            other => Err(Error::Config(format!("removal mode {other:?} (expected low or high)"))),
        }
    }
}

impl std::fmt::Display for RemovalMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RemovalMode::Low => "low",
            RemovalMode::High => "high",
        })
    }
}

/// Mean gap between the valuation-guided removal curve and the random one:
/// low mode averages `acc_low − acc_rand`, high mode `acc_rand − acc_high`.
/// Positive scores mean the valuation ordered the data usefully.
pub fn effectiveness_score(
    acc_low: &[f64],
    acc_rand: &[f64],
    acc_high: &[f64],
    mode: RemovalMode,
) -> Result<f64> {
    let t = acc_rand.len();
    if t == 0 || acc_low.len() != t || acc_high.len() != t {
        return Err(Error::ShapeMismatch(format!(
            "curve lengths {}/{}/{} must match and be positive",
            acc_low.len(),
            t,
            acc_high.len()
        )));
    }
    let gap: f64 = match mode {
        RemovalMode::Low => acc_low.iter().zip(acc_rand).map(|(l, r)| l - r).sum(),
        RemovalMode::High => acc_rand.iter().zip(acc_high).map(|(r, h)| r - h).sum(),
    };
    Ok(gap / t as f64)
}

/// Average ranks (1-based), ties sharing the mean of their positions.
fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let shared = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = shared;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average-rank tie handling. A constant
/// input has no defined ranking and is rejected.
pub fn spearman_rank(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::ShapeMismatch(format!(
            "rank correlation needs two equal-length lists, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - mean) * (y - mean);
        va += (x - mean).powi(2);
        vb += (y - mean).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::DegenerateRanks(
            "constant values have no rank ordering to correlate".into(),
        ));
    }
    Ok(cov / (va * vb).sqrt())
}
