//! The marketplace glued together end to end.
//!
//! A run has five stages: generate (or load) the owner datasets, train the
//! buyer's utility model on proxy-scored coalitions of the pre-shared pool,
//! value every owner by Shapley value over the model's coalition scores,
//! price the offers from a budget, and settle payment against hash locks
//! whose keys decrypt the delivered data.
//!
//! [`run_plaintext_pipeline`] is the cleartext reference: same data flow,
//! no shares, no payment. [`run_protocol`](protocol::run_protocol) is the
//! real thing — owner data enters as shares, coalition scores come out of
//! the joint computation, and delivery happens through the ledger.

mod protocol;

pub use protocol::{
    bench_grid, build_secure_valuation, run_protocol, run_secure_valuation, BenchRow,
    OwnerArtifacts, OwnerOutcome, ProtocolReport, SecureValuation, ValuedMarket,
};

use std::cell::RefCell;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand_chacha::ChaCha20Rng;

use crate::engine::TruncMode;
use crate::error::{Error, Result};
use crate::model::{
    build_preset, read_model, sigmoid, train_utility, TrainConfig, UtilityModel,
};
use crate::net::NetConfig;
use crate::ring::derive_rng;
use crate::valuation::{
    build_utility_dataset_blocks, default_mc_samples, effectiveness_score, gen_market, loo_values,
    shapley_exact, shapley_mc, spearman_rank, train_proxy, LabeledSet, MarketScenario, MarketSpec,
    RemovalMode, UtilityDataset, ValuationReport, EXACT_SHAPLEY_CAP,
};

/// Everything a full run needs, parseable from a `key = value` text file.
#[derive(Debug, Clone)]
pub struct ProtocolConfig {
    /// Synthetic market shape (ignored size-wise when `owner_files` is set).
    pub market: MarketSpec,
    /// Architecture preset for the utility model.
    pub preset: String,
    /// Concatenate one-hot labels to the extractor output.
    pub label_aware: bool,
    /// Coalitions sampled to build the utility training set.
    pub sds_samples: usize,
    /// Utility model training schedule; its seed follows the market seed.
    pub train: TrainConfig,
    /// Exact Shapley enumeration (owners ≤ [`EXACT_SHAPLEY_CAP`]) or
    /// permutation sampling.
    pub exact: bool,
    /// Permutation count for sampling; `None` picks the default heuristic.
    pub mc_samples: Option<u64>,
    pub net: NetConfig,
    pub trunc: TruncMode,
    /// Total buyer budget split across owners in proportion to value.
    pub budget: u64,
    /// Blocks between escrow submission and refund eligibility.
    pub deadline_blocks: u64,
    /// Owners that never redeem (for exercising the refund path).
    pub refusing_owners: Vec<usize>,
    /// Load a pre-trained utility model instead of training one.
    pub model_file: Option<PathBuf>,
    /// Per-owner CSV datasets; replaces synthetic generation when non-empty.
    pub owner_files: Vec<PathBuf>,
    /// Validation CSV, required alongside `owner_files`.
    pub validation_file: Option<PathBuf>,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            market: MarketSpec::default(),
            preset: "mlp-synthetic".into(),
            label_aware: false,
            sds_samples: 120,
            train: TrainConfig::default(),
            exact: true,
            mc_samples: None,
            net: NetConfig::domestic(),
            trunc: TruncMode::Exact,
            budget: 1_000_000,
            deadline_blocks: 10,
            refusing_owners: Vec::new(),
            model_file: None,
            owner_files: Vec::new(),
            validation_file: None,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        self.market.validate()?;
        let owners =
            if self.owner_files.is_empty() { self.market.owners } else { self.owner_files.len() };
        if self.exact && owners > EXACT_SHAPLEY_CAP {
            return Err(Error::Config(format!(
                "exact valuation enumerates 2^{owners} coalitions; use mc above \
                 {EXACT_SHAPLEY_CAP} owners"
            )));
        }
        if self.sds_samples == 0 {
            return Err(Error::Config("sds_samples must be positive".into()));
        }
        if self.deadline_blocks == 0 {
            return Err(Error::Config("deadline_blocks must be positive".into()));
        }
        if let Some(&bad) = self.refusing_owners.iter().find(|&&i| i >= owners) {
            return Err(Error::Config(format!(
                "refusing owner {bad} out of range for {owners} owners"
            )));
        }
        if !self.owner_files.is_empty() && self.validation_file.is_none() {
            return Err(Error::Config("owner_files needs a validation_file".into()));
        }
        Ok(())
    }

    /// Parse `key = value` lines; `#` starts a comment, blank lines are
    /// skipped, unknown keys are errors. Unset keys keep their defaults.
    pub fn from_text(text: &str) -> Result<ProtocolConfig> {
        let mut cfg = ProtocolConfig::default();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got {raw:?}", ln + 1))
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", ln + 1)))?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<ProtocolConfig> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// Apply one `key = value` override, same keys as the config file.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        self.set(key, value)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))
        }
        match key {
            "owners" => self.market.owners = num(key, value)?,
            "group_size" => self.market.group_size = num(key, value)?,
            "noise" => self.market.noise = value.parse()?,
            "classes" => self.market.classes = num(key, value)?,
            "feature_dim" => self.market.feature_dim = num(key, value)?,
            "val_size" => self.market.val_size = num(key, value)?,
            "pre_share" => self.market.pre_share = num(key, value)?,
            "seed" => {
                self.market.seed = num(key, value)?;
                self.train.seed = self.market.seed;
            }
            "preset" => self.preset = value.into(),
            "label_aware" => self.label_aware = num(key, value)?,
            "sds_samples" => self.sds_samples = num(key, value)?,
            "epochs" => self.train.epochs = num(key, value)?,
            "inner_steps" => self.train.inner_steps = num(key, value)?,
            "lr_head" => self.train.lr_head = num(key, value)?,
            "lr_extractor" => self.train.lr_extractor = num(key, value)?,
            "batch_size" => self.train.batch_size = num(key, value)?,
            "valuation" => match value {
                "exact" => self.exact = true,
                "mc" => self.exact = false,
                other => return Err(Error::Config(format!("unknown valuation {other:?}"))),
            },
            "mc_samples" => self.mc_samples = Some(num(key, value)?),
            "net" => match value {
                "domestic" => self.net = NetConfig::domestic(),
                "cross-border" => self.net = NetConfig::cross_border(),
                other => return Err(Error::Config(format!("unknown net profile {other:?}"))),
            },
            "trunc" => match value {
                "exact" => self.trunc = TruncMode::Exact,
                "local" => self.trunc = TruncMode::Local,
                other => return Err(Error::Config(format!("unknown trunc mode {other:?}"))),
            },
            "budget" => self.budget = num(key, value)?,
            "deadline_blocks" => self.deadline_blocks = num(key, value)?,
            "refusing_owners" => {
                self.refusing_owners = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| num("refusing_owners", s.trim()))
                    .collect::<Result<_>>()?;
            }
            "model_file" => self.model_file = Some(value.into()),
            "owner_files" => {
                self.owner_files =
                    value.split(',').map(|s| PathBuf::from(s.trim())).collect();
            }
            "validation_file" => self.validation_file = Some(value.into()),
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }
}

/// Build the market: synthesize one from the spec, or load per-owner CSVs.
///
/// Loaded sets are re-labeled onto a common class count and get pre-shared
/// subsets sampled at the configured rate; their noise levels are unknown
/// and reported as zero.
pub fn prepare_scenario(cfg: &ProtocolConfig) -> Result<MarketScenario> {
    if cfg.owner_files.is_empty() {
        return gen_market(&cfg.market);
    }
    let vpath = cfg
        .validation_file
        .as_ref()
        .ok_or_else(|| Error::Config("owner_files needs a validation_file".into()))?;
    let mut owners: Vec<LabeledSet> =
        cfg.owner_files.iter().map(|p| LabeledSet::load_csv(p)).collect::<Result<_>>()?;
    let validation = LabeledSet::load_csv(vpath)?;
    let d = validation.feature_dim();
    if let Some(bad) = owners.iter().position(|s| s.feature_dim() != d) {
        return Err(Error::Config(format!(
            "owner file {} has {} features, validation has {d}",
            cfg.owner_files[bad].display(),
            owners[bad].feature_dim()
        )));
    }
    if owners.iter().any(|s| s.is_empty()) || validation.is_empty() {
        return Err(Error::Config("owner and validation files must be non-empty".into()));
    }
    let classes =
        owners.iter().chain([&validation]).map(|s| s.classes()).max().expect("non-empty");
    let widen = |s: &LabeledSet| {
        LabeledSet::new(s.features().to_vec(), s.labels().to_vec(), classes)
    };
    owners = owners.iter().map(&widen).collect::<Result<_>>()?;
    let validation = widen(&validation)?;

    let mut rng = derive_rng(cfg.market.seed, "pre-share");
    let pre_shared = owners
        .iter()
        .map(|set| {
            let k = ((cfg.market.pre_share * set.len() as f64).ceil() as usize)
                .clamp(1, set.len());
            let mut idx = index::sample(&mut rng, set.len(), k).into_vec();
            idx.sort_unstable();
            set.subset(&idx)
        })
        .collect::<Result<Vec<_>>>()?;

    let spec = MarketSpec {
        owners: owners.len(),
        group_size: owners.iter().map(|s| s.len()).max().expect("non-empty"),
        classes,
        feature_dim: d,
        val_size: validation.len(),
        ..cfg.market.clone()
    };
    let noise_level = vec![0.0; owners.len()];
    Ok(MarketScenario { spec, owners, pre_shared, validation, noise_level, class_proportions: None })
}

/// The buyer's trained utility model plus the coalition data behind it.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: UtilityModel,
    /// Per-epoch training loss (empty when loaded from a file).
    pub loss: Vec<f64>,
    /// The proxy-scored coalitions the model was fit to.
    pub sds: UtilityDataset,
}

/// Train the utility model on proxy-scored coalitions of the pre-shared
/// pool, or load a pre-trained one when the config points at a file.
pub fn train_buyer_model(cfg: &ProtocolConfig, scenario: &MarketScenario) -> Result<TrainedModel> {
    if let Some(path) = &cfg.model_file {
        let model = read_model(path)?;
        let d = scenario.validation.feature_dim();
        let flat: usize = model.input_shape.iter().product();
        if flat != d {
            return Err(Error::Config(format!(
                "model file expects {flat} features, market data has {d}"
            )));
        }
        return Ok(TrainedModel {
            model,
            loss: Vec::new(),
            sds: UtilityDataset { entries: Vec::new(), train_len: 0 },
        });
    }
    let pool = scenario.buyer_pool()?;
    let classes = pool.classes().max(scenario.validation.classes());
    let mut model = build_preset(&cfg.preset, pool.feature_dim(), classes, cfg.market.seed)?;
    if cfg.label_aware {
        model.enable_label_awareness(cfg.market.seed)?;
    }
    let mut rng = derive_rng(cfg.market.seed, "utility dataset");
    let sds = build_utility_dataset_blocks(
        &scenario.pre_shared,
        &scenario.validation,
        cfg.sds_samples,
        &mut rng,
    )?;
    let examples = sds.to_set_examples(&pool)?;
    let mut tc = cfg.train;
    tc.seed = cfg.market.seed;
    let loss = train_utility(&mut model, &examples, &tc)?;
    Ok(TrainedModel { model, loss, sds })
}

/// Per-owner summed representations and sample counts. Coalition scores
/// only need these: the mean over a union of owners is the ratio of summed
/// sums to summed counts, so each owner's data is touched exactly once.
pub(crate) fn owner_repr_sums(
    model: &UtilityModel,
    scenario: &MarketScenario,
) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let mut sums = Vec::with_capacity(scenario.owner_count());
    let mut counts = Vec::with_capacity(scenario.owner_count());
    for set in &scenario.owners {
        let mut acc: Option<Vec<f64>> = None;
        for sample in set.to_set_samples() {
            let r = model.forward_repr(&sample)?;
            match &mut acc {
                None => acc = Some(r),
                Some(a) => a.iter_mut().zip(&r).for_each(|(a, b)| *a += b),
            }
        }
        sums.push(acc.ok_or_else(|| {
            Error::InvalidParameter("owner with no samples cannot be scored".into())
        })?);
        counts.push(set.len());
    }
    Ok((sums, counts))
}

fn coalition_mask(coalition: &[usize]) -> usize {
    coalition.iter().fold(0, |m, &i| m | (1 << i))
}

fn mask_members(mask: usize) -> Vec<usize> {
    (0..usize::BITS).filter(|&i| mask & (1 << i) != 0).map(|i| i as usize).collect()
}

/// Run the configured Shapley computation over any coalition scorer,
/// collecting leave-one-out values and the coalition table alongside.
///
/// The scorer is fallible (the secure one talks to an engine); errors are
/// stashed and re-raised after the combinatorics, which see a plain
/// `f64` function.
pub(crate) fn valuation_from_scorer<S>(
    n: usize,
    mut utility: S,
    cfg: &ProtocolConfig,
) -> Result<ValuationReport>
where
    S: FnMut(&[usize]) -> Result<f64>,
{
    let seed = cfg.market.seed;
    if cfg.exact {
        let mut table = Vec::with_capacity(1usize << n);
        for mask in 0..(1usize << n) {
            table.push(utility(&mask_members(mask))?);
        }
        let exact = shapley_exact(n, |s| table[coalition_mask(s)])?;
        let loo = loo_values(n, |s| table[coalition_mask(s)])?;
        return Ok(ValuationReport {
            shapley: exact.values.clone(),
            stderr: None,
            loo,
            coalitions: exact.coalition_table(),
            exact: true,
            samples: 0,
            seed,
        });
    }

    // Memoize across the sampler and the leave-one-out pass, and surface
    // scorer errors through a side channel.
    let memo = RefCell::new(std::collections::HashMap::<usize, f64>::new());
    let failure = RefCell::new(None::<Error>);
    let mut u = |s: &[usize]| -> f64 {
        let mask = coalition_mask(s);
        if let Some(&v) = memo.borrow().get(&mask) {
            return v;
        }
        if failure.borrow().is_some() {
            return 0.0;
        }
        match utility(s) {
            Ok(v) => {
                memo.borrow_mut().insert(mask, v);
                v
            }
            Err(e) => {
                *failure.borrow_mut() = Some(e);
                0.0
            }
        }
    };
    let m = cfg.mc_samples.unwrap_or_else(|| default_mc_samples(n));
    let mut rng = derive_rng(seed, "shapley sampling");
    let mc = shapley_mc(n, m, &mut u, &mut rng)?;
    let loo = loo_values(n, &mut u)?;
    // Report the benchmark coalitions; the full memo can run to thousands.
    let grand: Vec<usize> = (0..n).collect();
    let mut coalitions = vec![(Vec::new(), u(&[]))];
    for i in 0..n {
        let rest: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        coalitions.push((rest.clone(), u(&rest)));
    }
    coalitions.push((grand.clone(), u(&grand)));
    drop(u);
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    Ok(ValuationReport {
        shapley: mc.values,
        stderr: Some(mc.stderr),
        loo,
        coalitions,
        exact: false,
        samples: mc.permutations,
        seed,
    })
}

/// Value every owner with the trained model, entirely in the clear. This is
/// the reference the secure protocol is checked against.
pub fn value_owners(
    model: &UtilityModel,
    scenario: &MarketScenario,
    cfg: &ProtocolConfig,
) -> Result<ValuationReport> {
    let (sums, counts) = owner_repr_sums(model, scenario)?;
    let dim = sums[0].len();
    let scorer = |coalition: &[usize]| -> Result<f64> {
        if coalition.is_empty() {
            return Ok(model.empty_utility);
        }
        let total: usize = coalition.iter().map(|&i| counts[i]).sum();
        let mut mean = vec![0.0; dim];
        for &i in coalition {
            mean.iter_mut().zip(&sums[i]).for_each(|(m, s)| *m += s);
        }
        mean.iter_mut().for_each(|m| *m /= total as f64);
        Ok(sigmoid(model.network_forward(&mean)?))
    };
    valuation_from_scorer(scenario.owner_count(), scorer, cfg)
}

/// A full cleartext run: scenario, trained model, owner values.
#[derive(Debug, Clone)]
pub struct MarketRun {
    pub scenario: MarketScenario,
    pub model: UtilityModel,
    pub training_loss: Vec<f64>,
    pub report: ValuationReport,
}

impl MarketRun {
    /// Rank agreement between how noisy an owner's data is and how little
    /// it is worth. Positive and large when valuation finds the noise.
    pub fn noise_rank_correlation(&self) -> Result<f64> {
        let negated: Vec<f64> = self.report.shapley.iter().map(|v| -v).collect();
        spearman_rank(&self.scenario.noise_level, &negated)
    }
}

/// Generate, train, and value — no shares, no ledger.
pub fn run_plaintext_pipeline(cfg: &ProtocolConfig) -> Result<MarketRun> {
    cfg.validate()?;
    let scenario = prepare_scenario(cfg)?;
    let trained = train_buyer_model(cfg, &scenario)?;
    let report = value_owners(&trained.model, &scenario, cfg)?;
    Ok(MarketRun { scenario, model: trained.model, training_loss: trained.loss, report })
}

/// Validation accuracy as owners are removed in value order versus at
/// random — the removal experiment that checks values mean something.
#[derive(Debug, Clone)]
pub struct RemovalReport {
    /// Owners removed at each step (`1..n`).
    pub removed: Vec<usize>,
    /// Accuracy after removing the lowest-valued owners first.
    pub low_first: Vec<f64>,
    /// Accuracy after removing the highest-valued owners first.
    pub high_first: Vec<f64>,
    /// Accuracy under random removal, averaged over several orders.
    pub random: Vec<f64>,
    /// Mean accuracy retained over random by dropping low values first.
    pub low_effect: f64,
    /// Mean accuracy lost against random by dropping high values first.
    pub high_effect: f64,
}

/// Remove owners one at a time in three orders (value-ascending,
/// value-descending, random) and track a proxy learner's validation
/// accuracy on the remaining union.
pub fn removal_curves(
    scenario: &MarketScenario,
    values: &[f64],
    random_rounds: usize,
    seed: u64,
) -> Result<RemovalReport> {
    let n = scenario.owner_count();
    if values.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} values for {n} owners",
            values.len()
        )));
    }
    if n < 2 {
        return Err(Error::InvalidParameter("removal needs at least two owners".into()));
    }
    if random_rounds == 0 {
        return Err(Error::InvalidParameter("at least one random order required".into()));
    }
    let classes = scenario
        .owners
        .iter()
        .map(|s| s.classes())
        .chain([scenario.validation.classes()])
        .max()
        .expect("non-empty");

    let accuracy_after = |order: &[usize], t: usize| -> Result<f64> {
        let keep: Vec<usize> = order[t..].to_vec();
        let train = scenario.coalition_set(&keep)?;
        train_proxy(&train, classes)?.accuracy(&scenario.validation)
    };

    let mut ascending: Vec<usize> = (0..n).collect();
    ascending.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let descending: Vec<usize> = ascending.iter().rev().copied().collect();

    let mut rng: ChaCha20Rng = derive_rng(seed, "removal orders");
    let random_orders: Vec<Vec<usize>> = (0..random_rounds)
        .map(|_| index::sample(&mut rng, n, n).into_vec())
        .collect();

    let steps: Vec<usize> = (1..n).collect();
    let mut low_first = Vec::with_capacity(steps.len());
    let mut high_first = Vec::with_capacity(steps.len());
    let mut random = Vec::with_capacity(steps.len());
    for &t in &steps {
        low_first.push(accuracy_after(&ascending, t)?);
        high_first.push(accuracy_after(&descending, t)?);
        let mut acc = 0.0;
        for order in &random_orders {
            acc += accuracy_after(order, t)?;
        }
        random.push(acc / random_rounds as f64);
    }
    let low_effect = effectiveness_score(&low_first, &random, &high_first, RemovalMode::Low)?;
    let high_effect = effectiveness_score(&low_first, &random, &high_first, RemovalMode::High)?;
    Ok(RemovalReport { removed: steps, low_first, high_first, random, low_effect, high_effect })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SetSample;
    use crate::ring::seeded_rng;
    use rand_distr::{Distribution, StandardNormal};

    fn tiny_config() -> ProtocolConfig {
        let mut cfg = ProtocolConfig::default();
        cfg.market.owners = 3;
        cfg.market.group_size = 8;
        cfg.market.feature_dim = 4;
        cfg.market.val_size = 24;
        cfg.market.seed = 11;
        cfg.train.seed = 11;
        cfg.sds_samples = 20;
        cfg.train.epochs = 6;
        cfg.budget = 1000;
        cfg
    }

    #[test]
    fn config_text_overrides_defaults_and_rejects_junk() {
        let cfg = ProtocolConfig::from_text(
            "# comment\n\
             owners = 5\n\
             noise = flip   # trailing comment\n\
             valuation = mc\n\
             mc_samples = 777\n\
             refusing_owners = 1, 3\n\
             seed = 99\n",
        )
        .unwrap();
        assert_eq!(cfg.market.owners, 5);
        assert_eq!(cfg.market.noise.to_string(), "flip");
        assert!(!cfg.exact);
        assert_eq!(cfg.mc_samples, Some(777));
        assert_eq!(cfg.refusing_owners, vec![1, 3]);
        assert_eq!(cfg.market.seed, 99);
        assert_eq!(cfg.train.seed, 99, "training follows the market seed");

        let unknown = ProtocolConfig::from_text("owner = 5\n").unwrap_err();
        assert!(unknown.to_string().contains("unknown key"), "{unknown}");
        let bad = ProtocolConfig::from_text("owners = many\n").unwrap_err();
        assert!(bad.to_string().contains("bad value"), "{bad}");
        let shapeless = ProtocolConfig::from_text("owners\n").unwrap_err();
        assert!(shapeless.to_string().contains("key = value"), "{shapeless}");
    }

    #[test]
    fn validate_catches_inconsistent_settings() {
        let mut cfg = ProtocolConfig::default();
        cfg.market.owners = 20;
        cfg.exact = true;
        assert!(cfg.validate().is_err(), "exact enumeration above the cap");
        cfg.exact = false;
        cfg.validate().unwrap();

        let mut cfg = ProtocolConfig::default();
        cfg.refusing_owners = vec![8];
        assert!(cfg.validate().is_err(), "refusing owner out of range");

        let mut cfg = ProtocolConfig::default();
        cfg.owner_files = vec!["a.csv".into()];
        assert!(cfg.validate().is_err(), "owner files without validation");
    }

    #[test]
    fn plaintext_pipeline_is_deterministic() {
        let cfg = tiny_config();
        let a = run_plaintext_pipeline(&cfg).unwrap();
        let b = run_plaintext_pipeline(&cfg).unwrap();
        assert_eq!(a.report.shapley, b.report.shapley);
        assert_eq!(a.report.loo, b.report.loo);
        assert_eq!(a.training_loss, b.training_loss);

        let mut other = cfg.clone();
        other.market.seed = 12;
        other.train.seed = 12;
        let c = run_plaintext_pipeline(&other).unwrap();
        assert_ne!(a.report.shapley, c.report.shapley, "seed must matter");
    }

    #[test]
    fn exact_valuation_matches_direct_coalition_scoring() {
        let cfg = tiny_config();
        let run = run_plaintext_pipeline(&cfg).unwrap();
        // The reported coalition table must agree with scoring the union
        // of owner sets directly through the model.
        for (coalition, utility) in &run.report.coalitions {
            let expected = if coalition.is_empty() {
                run.model.empty_utility
            } else {
                let set = run.scenario.coalition_set(coalition).unwrap();
                run.model.score_coalition(&set.to_set_samples()).unwrap().1
            };
            assert!(
                (utility - expected).abs() < 1e-9,
                "coalition {coalition:?}: {utility} vs {expected}"
            );
        }
        // Efficiency: values sum to u(I) − u(∅).
        let grand = run.report.coalitions.last().unwrap().1;
        let total: f64 = run.report.shapley.iter().sum();
        assert!((total - (grand - run.model.empty_utility)).abs() < 1e-9);
    }

    #[test]
    fn sampled_valuation_tracks_exact_on_the_same_market() {
        let mut cfg = tiny_config();
        let exact = run_plaintext_pipeline(&cfg).unwrap();
        cfg.exact = false;
        cfg.mc_samples = Some(4000);
        let sampled = run_plaintext_pipeline(&cfg).unwrap();
        assert_eq!(sampled.report.samples, 4000);
        let stderr = sampled.report.stderr.as_ref().unwrap();
        for i in 0..3 {
            let gap = (sampled.report.shapley[i] - exact.report.shapley[i]).abs();
            assert!(
                gap < 0.05 && gap < 4.0 * stderr[i] + 1e-3,
                "owner {i}: mc {} vs exact {} (stderr {})",
                sampled.report.shapley[i],
                exact.report.shapley[i],
                stderr[i]
            );
        }
    }

    #[test]
    fn external_owner_files_replace_generation() {
        let dir = tempfile::tempdir().unwrap();
        let gen = gen_market(&tiny_config().market).unwrap();
        let mut owner_files = Vec::new();
        for (i, set) in gen.owners.iter().enumerate() {
            let p = dir.path().join(format!("owner{i}.csv"));
            set.save_csv(&p).unwrap();
            owner_files.push(p);
        }
        let vpath = dir.path().join("val.csv");
        gen.validation.save_csv(&vpath).unwrap();

        let mut cfg = tiny_config();
        cfg.owner_files = owner_files;
        cfg.validation_file = Some(vpath);
        let scenario = prepare_scenario(&cfg).unwrap();
        assert_eq!(scenario.owner_count(), 3);
        assert_eq!(scenario.noise_level, vec![0.0; 3], "file noise is unknown");
        for (loaded, original) in scenario.owners.iter().zip(&gen.owners) {
            assert_eq!(loaded.features(), original.features());
            assert_eq!(loaded.labels(), original.labels());
        }
        for (pre, owner) in scenario.pre_shared.iter().zip(&scenario.owners) {
            assert!(!pre.is_empty() && pre.len() <= owner.len());
        }
    }

    #[test]
    fn removal_curves_have_expected_shape() {
        let gen = gen_market(&tiny_config().market).unwrap();
        let values = vec![0.02, -0.01, 0.05];
        let rep = removal_curves(&gen, &values, 2, 5).unwrap();
        assert_eq!(rep.removed, vec![1, 2]);
        assert_eq!(rep.low_first.len(), 2);
        for acc in rep.low_first.iter().chain(&rep.high_first).chain(&rep.random) {
            assert!((0.0..=1.0).contains(acc), "accuracy {acc} out of range");
        }
        assert!(
            removal_curves(&gen, &values[..2], 2, 5).is_err(),
            "value count must match owners"
        );
    }

    #[test]
    fn trained_model_ranks_clean_data_above_heavily_noised_data() {
        // A trained model has to react to data quality: swamping a good
        // subset's features with noise far past the class separation must
        // drop its predicted utility below the clean score.
        let mut cfg = ProtocolConfig::default();
        cfg.market.owners = 4;
        cfg.market.group_size = 60;
        cfg.market.feature_dim = 8;
        cfg.market.val_size = 150;
        cfg.market.pre_share = 0.4;
        cfg.market.seed = 3;
        cfg.train.seed = 3;
        cfg.train.epochs = 30;
        cfg.sds_samples = 80;
        let scenario = prepare_scenario(&cfg).unwrap();
        let trained = train_buyer_model(&cfg, &scenario).unwrap();

        let clean = scenario.validation.to_set_samples();
        let (_, clean_score) = trained.model.score_coalition(&clean).unwrap();

        let mut rng = seeded_rng(99);
        let noised: Vec<SetSample> = clean
            .iter()
            .map(|s| {
                let f = s
                    .features
                    .iter()
                    .map(|v| {
                        v + 10.0
                            * <StandardNormal as Distribution<f64>>::sample(
                                &StandardNormal,
                                &mut rng,
                            )
                    })
                    .collect();
                SetSample::new(f, s.label)
            })
            .collect();
        let (_, noised_score) = trained.model.score_coalition(&noised).unwrap();

        assert!(
            clean_score > noised_score,
            "clean {clean_score:.4} should beat heavily noised {noised_score:.4}"
        );
    }
}
