//! Synthetic market generation: N owner datasets with a controlled
//! per-owner noise schedule, a clean validation set, and pre-shared
//! fractions for training the utility model.
//!
//! Base data are isotropic Gaussian blobs around distinct class centers
//! (or distinct binary prototypes in flip mode), so the proxy learner has
//! real signal to find and the recorded noise levels are the ground truth
//! a valuation should recover.

use super::LabeledSet;
use crate::error::{Error, Result};
use crate::ring::derive_rng;
use rand::seq::index::sample as index_sample;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Dirichlet, Distribution, StandardNormal};
use std::str::FromStr;

/// Per-owner corruption applied to the synthetic market.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    /// Binary features; owner `i` keeps each feature with probability
    /// `i/N` (0-based), otherwise it is flipped.
    Flip,
    /// Additive Gaussian feature noise with scale `1 + 9·(i+1)/N`.
    Gaussian,
    /// Labels kept with probability `1 − i/N`, otherwise moved to a
    /// uniformly random other class.
    LabelFlip,
    /// No corruption; per-class owner shares drawn from a Dirichlet
    /// distribution so owners differ by class imbalance instead.
    Dirichlet,
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flip" => Ok(NoiseKind::Flip),
            "gaussian" => Ok(NoiseKind::Gaussian),
            "label-flip" => Ok(NoiseKind::LabelFlip),
            "dirichlet" => Ok(NoiseKind::Dirichlet),
            other => Err(Error::Config(format!(
                "noise kind {other:?} (expected flip, gaussian, label-flip or dirichlet)"
            ))),
        }
    }
}

impl std::fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NoiseKind::Flip => "flip",
            NoiseKind::Gaussian => "gaussian",
            NoiseKind::LabelFlip => "label-flip",
            NoiseKind::Dirichlet => "dirichlet",
        })
    }
}

/// Parameters of a synthetic market.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketSpec {
    pub owners: usize,
    /// Samples per owner (per-owner totals vary slightly in dirichlet mode).
    pub group_size: usize,
    pub noise: NoiseKind,
    pub classes: usize,
    pub feature_dim: usize,
    /// Size of the clean validation set.
    pub val_size: usize,
    /// Fraction of each owner's data pre-shared with the buyer, in (0, 1].
    pub pre_share: f64,
    pub seed: u64,
}

impl Default for MarketSpec {
    fn default() -> Self {
        MarketSpec {
            owners: 8,
            group_size: 40,
            noise: NoiseKind::Gaussian,
            classes: 2,
            feature_dim: 8,
            val_size: 100,
            pre_share: 0.1,
            seed: 7,
        }
    }
}

impl MarketSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParameter(msg.into()));
        if self.owners == 0 {
            return bad("at least one owner required");
        }
        if self.group_size == 0 {
            return bad("owners need at least one sample");
        }
        if self.classes < 2 {
            return bad("at least two classes required");
        }
        if self.feature_dim == 0 {
            return bad("features must have positive dimension");
        }
        if self.val_size == 0 {
            return bad("validation set must be non-empty");
        }
        if !(self.pre_share > 0.0 && self.pre_share <= 1.0) {
            return bad("pre-share fraction must lie in (0, 1]");
        }
        Ok(())
    }
}

/// A generated market: owner datasets, their pre-shared fractions, a clean
/// validation set, and the ground-truth noise level per owner.
#[derive(Debug, Clone)]
pub struct MarketScenario {
    pub spec: MarketSpec,
    pub owners: Vec<LabeledSet>,
    /// Pre-shared subset of each owner's data, in owner order.
    pub pre_shared: Vec<LabeledSet>,
    pub validation: LabeledSet,
    /// Ground-truth corruption magnitude per owner (σ, flip probability,
    /// label-flip probability, or class imbalance for dirichlet).
    pub noise_level: Vec<f64>,
    /// Dirichlet mode only: per class, the sampled owner proportions.
    pub class_proportions: Option<Vec<Vec<f64>>>,
}

impl MarketScenario {
    pub fn owner_count(&self) -> usize {
        self.owners.len()
    }

    /// Everything the buyer may train on: the union of pre-shared sets.
    pub fn buyer_pool(&self) -> Result<LabeledSet> {
        let refs: Vec<&LabeledSet> = self.pre_shared.iter().collect();
        LabeledSet::union(&refs)
    }

    /// The combined dataset of a coalition of owners.
    pub fn coalition_set(&self, coalition: &[usize]) -> Result<LabeledSet> {
        let parts: Vec<&LabeledSet> = coalition
            .iter()
            .map(|&i| {
                self.owners
                    .get(i)
                    .ok_or_else(|| Error::InvalidParameter(format!("owner {i} out of range")))
            })
            .collect::<Result<_>>()?;
        LabeledSet::union(&parts)
    }
}

/// Distinct random class prototypes: hypercube corners at ±`scale` for
/// continuous data, or 0/1 bit patterns for flip mode.
fn class_prototypes(
    classes: usize,
    dim: usize,
    scale: f64,
    rng: &mut ChaCha20Rng,
) -> Vec<Vec<f64>> {
    let mut protos: Vec<Vec<f64>> = Vec::with_capacity(classes);
    while protos.len() < classes {
        let p: Vec<f64> =
            (0..dim).map(|_| if rng.gen_bool(0.5) { scale } else { -scale }).collect();
        if !protos.contains(&p) {
            protos.push(p);
        }
    }
    protos
}

fn gaussian_sample(proto: &[f64], rng: &mut ChaCha20Rng) -> Vec<f64> {
    proto
        .iter()
        .map(|&m| m + <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect()
}

/// Binary sample: the class prototype with a 10% base flip per bit.
fn binary_sample(proto: &[f64], rng: &mut ChaCha20Rng) -> Vec<f64> {
    proto
        .iter()
        .map(|&b| {
            let bit = b > 0.0;
            f64::from(u8::from(bit != rng.gen_bool(0.1)))
        })
        .collect()
}

/// Split `total` into `weights.len()` integer counts proportional to the
/// weights (largest-remainder method, exact total).
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let short = total - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor()))
    });
    for k in 0..short {
        counts[order[k % order.len()]] += 1;
    }
    counts
}

/// Generate a market scenario per the spec's noise schedule.
pub fn gen_market(spec: &MarketSpec) -> Result<MarketScenario> {
    spec.validate()?;
    let mut rng = derive_rng(spec.seed, "market generation");
    let n = spec.owners;
    let binary = spec.noise == NoiseKind::Flip;
    let protos = if binary {
        class_prototypes(spec.classes, spec.feature_dim, 1.0, &mut rng)
    } else {
        // Corner scale 2/√d keeps the expected distance between class
        // centers near 2.8 whatever the width: clean data are learnable,
        // yet close enough to the boundary that the noise schedule visibly
        // erodes a classifier fit on a noisy owner's data. A wide margin
        // here would let every owner reach ceiling validation accuracy and
        // leave nothing for a valuation to rank.
        let scale = 2.0 / (spec.feature_dim as f64).sqrt();
        class_prototypes(spec.classes, spec.feature_dim, scale, &mut rng)
    };
    let draw = |class: usize, rng: &mut ChaCha20Rng| -> Vec<f64> {
        if binary {
            binary_sample(&protos[class], rng)
        } else {
            gaussian_sample(&protos[class], rng)
        }
    };

    // Per-owner class counts: balanced rotation, except dirichlet mode
    // where per-class owner shares come from the sampled proportions.
    let mut class_proportions = None;
    let mut owner_class_counts: Vec<Vec<usize>> = if spec.noise == NoiseKind::Dirichlet {
        let total = n * spec.group_size;
        let class_totals = apportion(total, &vec![1.0; spec.classes]);
        let mut per_class = Vec::with_capacity(spec.classes);
        let mut counts = vec![vec![0usize; spec.classes]; n];
        for (c, &class_total) in class_totals.iter().enumerate() {
            let lo = if rng.gen_bool(0.2) { 20.0 } else { 80.0 };
            let alpha: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..100.0)).collect();
            let p = Dirichlet::new(&alpha)
                .map_err(|e| Error::InvalidParameter(format!("dirichlet setup: {e}")))?
                .sample(&mut rng);
            for (i, &cnt) in apportion(class_total, &p).iter().enumerate() {
                counts[i][c] = cnt;
            }
            per_class.push(p);
        }
        class_proportions = Some(per_class);
        counts
    } else {
        (0..n)
            .map(|_| {
                let mut c = vec![spec.group_size / spec.classes; spec.classes];
                (0..spec.group_size % spec.classes).for_each(|k| c[k] += 1);
                c
            })
            .collect()
    };
    // Dirichlet apportionment can strand an owner with nothing; give such
    // an owner one sample from the best-stocked one so every dataset is
    // usable downstream.
    for i in 0..n {
        if owner_class_counts[i].iter().sum::<usize>() == 0 {
            let donor = (0..n)
                .max_by_key(|&j| owner_class_counts[j].iter().sum::<usize>())
                .unwrap();
            let c = (0..spec.classes).max_by_key(|&c| owner_class_counts[donor][c]).unwrap();
            owner_class_counts[donor][c] -= 1;
            owner_class_counts[i][c] += 1;
        }
    }

    let mut owners = Vec::with_capacity(n);
    let mut noise_level = Vec::with_capacity(n);
    for (i, class_counts) in owner_class_counts.iter().enumerate() {
        let mut set = LabeledSet::empty(spec.feature_dim, spec.classes);
        for (c, &count) in class_counts.iter().enumerate() {
            for _ in 0..count {
                set.push(draw(c, &mut rng), c)?;
            }
        }
        let level = match spec.noise {
            NoiseKind::Gaussian => {
                let sigma = 1.0 + 9.0 * (i + 1) as f64 / n as f64;
                let mut noisy = LabeledSet::empty(spec.feature_dim, spec.classes);
                for (row, &label) in set.features().iter().zip(set.labels()) {
                    noisy.push(
                        row.iter()
                            .map(|&v| {
                                v + sigma
                                    * <StandardNormal as Distribution<f64>>::sample(
                                        &StandardNormal,
                                        &mut rng,
                                    )
                            })
                            .collect(),
                        label,
                    )?;
                }
                set = noisy;
                sigma
            }
            NoiseKind::Flip => {
                let keep = i as f64 / n as f64;
                let mut noisy = LabeledSet::empty(spec.feature_dim, spec.classes);
                for (row, &label) in set.features().iter().zip(set.labels()) {
                    noisy.push(
                        row.iter()
                            .map(|&v| if rng.gen_bool(keep) { v } else { 1.0 - v })
                            .collect(),
                        label,
                    )?;
                }
                set = noisy;
                1.0 - keep
            }
            NoiseKind::LabelFlip => {
                let flip = i as f64 / n as f64;
                let mut noisy = LabeledSet::empty(spec.feature_dim, spec.classes);
                for (row, &label) in set.features().iter().zip(set.labels()) {
                    let label = if rng.gen_bool(flip) {
                        let other = rng.gen_range(0..spec.classes - 1);
                        other + usize::from(other >= label)
                    } else {
                        label
                    };
                    noisy.push(row.clone(), label)?;
                }
                set = noisy;
                flip
            }
            NoiseKind::Dirichlet => {
                let total: usize = class_counts.iter().sum();
                let uniform = 1.0 / spec.classes as f64;
                class_counts
                    .iter()
                    .map(|&c| (c as f64 / total as f64 - uniform).abs())
                    .sum::<f64>()
                    / 2.0
            }
        };
        owners.push(set);
        noise_level.push(level);
    }

    let pre_shared = owners
        .iter()
        .map(|set| {
            let k = ((spec.pre_share * set.len() as f64).ceil() as usize).clamp(1, set.len());
            let mut idx = index_sample(&mut rng, set.len(), k).into_vec();
            idx.sort_unstable();
            set.subset(&idx)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut validation = LabeledSet::empty(spec.feature_dim, spec.classes);
    for t in 0..spec.val_size {
        let c = t % spec.classes;
        validation.push(draw(c, &mut rng), c)?;
    }

    Ok(MarketScenario { spec: spec.clone(), owners, pre_shared, validation, noise_level, class_proportions })
}
