//! Data valuation: utility-dataset construction with a logistic-regression
//! proxy, exact and Monte Carlo Shapley values, leave-one-out values,
//! evaluation metrics, and synthetic market generation.

mod gen;
mod proxy;
mod shapley;

pub use gen::{gen_market, MarketScenario, MarketSpec, NoiseKind};
pub use proxy::{train_proxy, train_proxy_eval, ProxyModel};
pub use shapley::{
    default_mc_samples, effectiveness_score, loo_values, shapley_exact, shapley_mc,
    spearman_rank, ExactShapley, McShapley, RemovalMode, EXACT_SHAPLEY_CAP,
};

use crate::error::{Error, Result};
use crate::model::{SetExample, SetSample};
use rand::seq::index::sample as index_sample;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use std::path::Path;

/// A labeled dataset: dense feature rows plus integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    features: Vec<Vec<f64>>,
    labels: Vec<usize>,
    classes: usize,
}

impl LabeledSet {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature rows but {} labels",
                features.len(),
                labels.len()
            )));
        }
        if classes == 0 {
            return Err(Error::InvalidParameter("class count must be positive".into()));
        }
        if let Some(first) = features.first() {
            let d = first.len();
            if d == 0 {
                return Err(Error::InvalidParameter("zero-width feature rows".into()));
            }
            if let Some(row) = features.iter().find(|r| r.len() != d) {
                return Err(Error::ShapeMismatch(format!(
                    "ragged feature rows ({} vs {d})",
                    row.len()
                )));
            }
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidParameter(format!(
                "label {l} outside the {classes}-class range"
            )));
        }
        Ok(LabeledSet { features, labels, classes })
    }

    pub fn empty(feature_dim: usize, classes: usize) -> Self {
        let _ = feature_dim;
        LabeledSet { features: Vec::new(), labels: Vec::new(), classes }
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn push(&mut self, row: Vec<f64>, label: usize) -> Result<()> {
        if !self.features.is_empty() && row.len() != self.feature_dim() {
            return Err(Error::ShapeMismatch(format!(
                "row width {} vs set width {}",
                row.len(),
                self.feature_dim()
            )));
        }
        if label >= self.classes {
            return Err(Error::InvalidParameter(format!(
                "label {label} outside the {}-class range",
                self.classes
            )));
        }
        self.features.push(row);
        self.labels.push(label);
        Ok(())
    }

    /// Rows selected by index, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<LabeledSet> {
        let mut features = Vec::with_capacity(indices.len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let row = self
                .features
                .get(i)
                .ok_or_else(|| Error::InvalidParameter(format!("sample index {i} out of range")))?;
            features.push(row.clone());
            labels.push(self.labels[i]);
        }
        Ok(LabeledSet { features, labels, classes: self.classes })
    }

    /// Concatenate several sets (same width and class count).
    pub fn union(parts: &[&LabeledSet]) -> Result<LabeledSet> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidParameter("union of no sets".into()))?;
        let mut out = LabeledSet::empty(first.feature_dim(), first.classes);
        for p in parts {
            if p.classes != out.classes {
                return Err(Error::ShapeMismatch(format!(
                    "class counts differ ({} vs {})",
                    p.classes, out.classes
                )));
            }
            for (row, &label) in p.features.iter().zip(&p.labels) {
                out.push(row.clone(), label)?;
            }
        }
        Ok(out)
    }

    /// View as model samples (features plus label).
    pub fn to_set_samples(&self) -> Vec<SetSample> {
        self.features
            .iter()
            .zip(&self.labels)
            .map(|(f, &l)| SetSample::new(f.clone(), Some(l)))
            .collect()
    }

    /// How many distinct labels actually occur.
    pub fn distinct_labels(&self) -> usize {
        let mut seen = vec![false; self.classes];
        self.labels.iter().for_each(|&l| seen[l] = true);
        seen.iter().filter(|&&s| s).count()
    }

    /// The set as CSV bytes: header `f0,...,f{d-1},label`, one row per
    /// sample. This is the canonical serialization — the data payload a
    /// seller delivers is exactly these bytes.
    pub fn csv_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let d = self.feature_dim();
        let mut header: Vec<String> = (0..d).map(|i| format!("f{i}")).collect();
        header.push("label".into());
        w.write_record(&header)?;
        for (row, &label) in self.features.iter().zip(&self.labels) {
            let mut rec: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            rec.push(label.to_string());
            w.write_record(&rec)?;
        }
        w.into_inner()
            .map_err(|e| Error::BadPayload(format!("CSV serialization failed: {e}")))
    }

    /// Write [`csv_bytes`](Self::csv_bytes) to a file.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.csv_bytes()?)?;
        Ok(())
    }

    /// Read a CSV written by [`save_csv`](Self::save_csv), or any file with a
    /// header row of feature columns and an optional final `label` column.
    /// Without a label column every row gets label 0 and one class.
    pub fn load_csv(path: &Path) -> Result<LabeledSet> {
        let mut r = csv::Reader::from_path(path)?;
        let headers = r.headers()?.clone();
        let has_label = headers.iter().last() == Some("label");
        let width = headers.len();
        if width == 0 || (has_label && width == 1) {
            return Err(Error::BadPayload("CSV has no feature columns".into()));
        }
        let d = if has_label { width - 1 } else { width };
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            if rec.len() != width {
                return Err(Error::BadPayload(format!(
                    "CSV row {} has {} fields, expected {width}",
                    i + 2,
                    rec.len()
                )));
            }
            let row: Vec<f64> = rec
                .iter()
                .take(d)
                .map(|f| {
                    f.parse().map_err(|_| {
                        Error::BadPayload(format!("bad feature {f:?} on CSV row {}", i + 2))
                    })
                })
                .collect::<Result<_>>()?;
            let label = if has_label {
                rec[d].parse().map_err(|_| {
                    Error::BadPayload(format!("bad label {:?} on CSV row {}", &rec[d], i + 2))
                })?
            } else {
                0
            };
            features.push(row);
            labels.push(label);
        }
        let classes = labels.iter().max().map_or(1, |&m| m + 1);
        LabeledSet::new(features, labels, classes)
    }
}

/// One sampled coalition of training indices and its measured utility.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilityEntry {
    pub indices: Vec<usize>,
    pub utility: f64,
}

/// The training set for the data-utility model: sampled subsets of a labeled
/// pool, each labeled with the validation accuracy of a proxy classifier
/// trained on it.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilityDataset {
    pub entries: Vec<UtilityEntry>,
    /// Size of the pool the indices refer to.
    pub train_len: usize,
}

impl UtilityDataset {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Materialize model training examples against the pool the indices
    /// were sampled from.
    pub fn to_set_examples(&self, pool: &LabeledSet) -> Result<Vec<SetExample>> {
        if pool.len() != self.train_len {
            return Err(Error::ShapeMismatch(format!(
                "pool has {} samples but the dataset was built over {}",
                pool.len(),
                self.train_len
            )));
        }
        self.entries
            .iter()
            .map(|e| {
                Ok(SetExample {
                    samples: pool.subset(&e.indices)?.to_set_samples(),
                    utility: e.utility,
                })
            })
            .collect()
    }

    /// Write as CSV with columns `utility,indices` (indices space-separated).
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["utility", "indices"])?;
        for e in &self.entries {
            let idx: Vec<String> = e.indices.iter().map(|i| i.to_string()).collect();
            w.write_record([format!("{:?}", e.utility), idx.join(" ")])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load_csv(path: &Path, train_len: usize) -> Result<UtilityDataset> {
        let mut r = csv::Reader::from_path(path)?;
        let mut entries = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            if rec.len() != 2 {
                return Err(Error::BadPayload(format!(
                    "utility CSV row {} has {} fields, expected 2",
                    i + 2,
                    rec.len()
                )));
            }
            let utility: f64 = rec[0].parse().map_err(|_| {
                Error::BadPayload(format!("bad utility {:?} on row {}", &rec[0], i + 2))
            })?;
            let indices: Vec<usize> = rec[1]
                .split_whitespace()
                .map(|f| {
                    f.parse().map_err(|_| {
                        Error::BadPayload(format!("bad index {f:?} on row {}", i + 2))
                    })
                })
                .collect::<Result<_>>()?;
            if indices.iter().any(|&j| j >= train_len) {
                return Err(Error::BadPayload(format!(
                    "index out of range on row {} for a pool of {train_len}",
                    i + 2
                )));
            }
            entries.push(UtilityEntry { indices, utility });
        }
        Ok(UtilityDataset { entries, train_len })
    }
}

/// Sample `m` coalitions of the pool, score each with the proxy learner on
/// the validation set, and return the resulting utility dataset.
///
/// Subset law: size uniform on `[1, |pool|]`, then membership uniform
/// without replacement. A single-class validation set is suspicious but not
/// fatal; it only flattens the accuracy signal, so it logs a warning.
pub fn build_utility_dataset(
    pool: &LabeledSet,
    validation: &LabeledSet,
    m: usize,
    rng: &mut ChaCha20Rng,
) -> Result<UtilityDataset> {
    if pool.is_empty() || validation.is_empty() {
        return Err(Error::InvalidParameter(
            "utility dataset needs non-empty pool and validation sets".into(),
        ));
    }
    if m == 0 {
        return Err(Error::InvalidParameter("at least one coalition sample required".into()));
    }
    if validation.distinct_labels() < 2 {
        log::warn!("validation set has a single class; proxy accuracies will be degenerate");
    }
    let n = pool.len();
    let mut entries = Vec::with_capacity(m);
    for _ in 0..m {
        let size = rng.gen_range(1..=n);
        let mut indices = index_sample(rng, n, size).into_vec();
        indices.sort_unstable();
        let utility = train_proxy_eval(&pool.subset(&indices)?, validation)?;
        entries.push(UtilityEntry { indices, utility });
    }
    Ok(UtilityDataset { entries, train_len: n })
}

/// Like [`build_utility_dataset`], but every sampled subset is a union of
/// whole blocks — one block per owner's pre-shared slice, concatenated in
/// owner order exactly as [`MarketScenario::buyer_pool`] lays them out.
///
/// A valuation only ever scores unions of whole owner datasets, so training
/// the utility model on the same family keeps it interpolating between
/// compositions it has seen. Free-form subsets instead let the model tie
/// high utility to feature statistics that only large random mixtures
/// reach, and owner unions sit outside that cloud, where the extrapolated
/// fit can invert the ranking entirely.
pub fn build_utility_dataset_blocks(
    blocks: &[LabeledSet],
    validation: &LabeledSet,
    m: usize,
    rng: &mut ChaCha20Rng,
) -> Result<UtilityDataset> {
    if blocks.is_empty() || blocks.iter().any(LabeledSet::is_empty) {
        return Err(Error::InvalidParameter(
            "utility dataset needs at least one non-empty pool block".into(),
        ));
    }
    if validation.is_empty() {
        return Err(Error::InvalidParameter("validation set is empty".into()));
    }
    if m == 0 {
        return Err(Error::InvalidParameter("at least one coalition sample required".into()));
    }
    if validation.distinct_labels() < 2 {
        log::warn!("validation set has a single class; proxy accuracies will be degenerate");
    }
    let refs: Vec<&LabeledSet> = blocks.iter().collect();
    let pool = LabeledSet::union(&refs)?;
    let offsets: Vec<usize> = blocks
        .iter()
        .scan(0, |acc, b| {
            let start = *acc;
            *acc += b.len();
            Some(start)
        })
        .collect();
    let mut entries = Vec::with_capacity(m);
    for _ in 0..m {
        let k = rng.gen_range(1..=blocks.len());
        let mut chosen = index_sample(rng, blocks.len(), k).into_vec();
        chosen.sort_unstable();
        let indices: Vec<usize> = chosen
            .iter()
            .flat_map(|&b| offsets[b]..offsets[b] + blocks[b].len())
            .collect();
        let utility = train_proxy_eval(&pool.subset(&indices)?, validation)?;
        entries.push(UtilityEntry { indices, utility });
    }
    Ok(UtilityDataset { entries, train_len: pool.len() })
}

/// Per-owner valuation results plus the coalition table they came from.
#[derive(Debug, Clone)]
pub struct ValuationReport {
    pub shapley: Vec<f64>,
    /// Standard errors when Monte Carlo sampling was used.
    pub stderr: Option<Vec<f64>>,
    pub loo: Vec<f64>,
    /// Every coalition that was scored, as (sorted owner indices, utility).
    pub coalitions: Vec<(Vec<usize>, f64)>,
    pub exact: bool,
    /// Permutations drawn (Monte Carlo) or coalitions enumerated (exact).
    pub samples: u64,
    pub seed: u64,
}

impl ValuationReport {
    /// Per-owner CSV with columns `owner,shapley,stderr,loo` (stderr empty
    /// for exact runs).
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["owner", "shapley", "stderr", "loo"])?;
        for i in 0..self.shapley.len() {
            let se = self.stderr.as_ref().map_or(String::new(), |s| format!("{:?}", s[i]));
            w.write_record([
                i.to_string(),
                format!("{:?}", self.shapley[i]),
                se,
                format!("{:?}", self.loo[i]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Coalition-utility table as CSV with columns `owners,utility`.
    pub fn save_coalitions_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["owners", "utility"])?;
        for (idx, u) in &self.coalitions {
            let owners: Vec<String> = idx.iter().map(|i| i.to_string()).collect();
            w.write_record([owners.join(" "), format!("{u:?}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ring::seeded_rng;

    /// Two well-separated Gaussian blobs.
    pub(super) fn blobs(n_per_class: usize, dim: usize, gap: f64, seed: u64) -> LabeledSet {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = seeded_rng(seed);
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for c in 0..2 {
            let center = if c == 0 { -gap / 2.0 } else { gap / 2.0 };
            for _ in 0..n_per_class {
                let row: Vec<f64> = (0..dim)
                    .map(|_| center + <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                    .collect();
                features.push(row);
                labels.push(c);
            }
        }
        LabeledSet::new(features, labels, 2).unwrap()
    }

    #[test]
    fn labeled_set_checks_shapes_and_labels() {
        assert!(LabeledSet::new(vec![vec![1.0], vec![2.0, 3.0]], vec![0, 0], 1).is_err());
        assert!(LabeledSet::new(vec![vec![1.0]], vec![1], 1).is_err());
        assert!(LabeledSet::new(vec![vec![1.0]], vec![0, 1], 2).is_err());
        let s = LabeledSet::new(vec![vec![1.0], vec![2.0]], vec![0, 1], 2).unwrap();
        assert_eq!(s.subset(&[1]).unwrap().labels(), &[1]);
        assert!(s.subset(&[2]).is_err());
        assert_eq!(s.distinct_labels(), 2);
    }

    #[test]
    fn csv_roundtrip_preserves_the_set() {
        let s = blobs(10, 3, 4.0, 11);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.csv");
        s.save_csv(&path).unwrap();
        let back = LabeledSet::load_csv(&path).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn csv_without_label_column_defaults_to_one_class() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plain.csv");
        std::fs::write(&path, "f0,f1\n0.5,1.5\n2.5,3.5\n").unwrap();
        let s = LabeledSet::load_csv(&path).unwrap();
        assert_eq!(s.classes(), 1);
        assert_eq!(s.labels(), &[0, 0]);
        assert_eq!(s.features()[1], vec![2.5, 3.5]);
    }

    #[test]
    fn single_sample_pool_reproduces_full_set_accuracy() {
        let val = blobs(20, 2, 4.0, 12);
        let pool = val.subset(&[0, 25]).unwrap();
        let mut rng = seeded_rng(13);
        let ds = build_utility_dataset(&pool, &val, 1, &mut rng).unwrap();
        // With a pool of two samples the size draw is in [1,2]; force the
        // deterministic single-entry case with a pool of one.
        let one = val.subset(&[0]).unwrap();
        let ds1 = build_utility_dataset(&one, &val, 1, &mut rng).unwrap();
        assert_eq!(ds1.entries[0].indices, vec![0]);
        let want = train_proxy_eval(&one, &val).unwrap();
        assert_eq!(ds1.entries[0].utility, want);
        assert!(ds.entries[0].utility >= 0.0 && ds.entries[0].utility <= 1.0);
    }

    #[test]
    fn utilities_are_probabilities_and_separable_subsets_score_high() {
        let tr = blobs(40, 3, 6.0, 14);
        let val = blobs(30, 3, 6.0, 15);
        let mut rng = seeded_rng(16);
        let ds = build_utility_dataset(&tr, &val, 40, &mut rng).unwrap();
        assert!(ds.entries.iter().all(|e| (0.0..=1.0).contains(&e.utility)));
        let big: Vec<&UtilityEntry> =
            ds.entries.iter().filter(|e| e.indices.len() >= 20).collect();
        assert!(!big.is_empty());
        let mean: f64 = big.iter().map(|e| e.utility).sum::<f64>() / big.len() as f64;
        assert!(mean > 0.9, "separable blobs scored {mean}");
    }

    #[test]
    fn block_subsets_are_unions_of_whole_blocks() {
        let blocks: Vec<LabeledSet> =
            (0..4).map(|i| blobs(6 + i, 2, 5.0, 60 + i as u64)).collect();
        let val = blobs(20, 2, 5.0, 70);
        let mut rng = seeded_rng(71);
        let ds = build_utility_dataset_blocks(&blocks, &val, 30, &mut rng).unwrap();
        let total: usize = blocks.iter().map(LabeledSet::len).sum();
        assert_eq!(ds.train_len, total);
        // Block b occupies a contiguous index range; every entry must be a
        // concatenation of complete ranges.
        let mut ranges = Vec::new();
        let mut start = 0;
        for b in &blocks {
            ranges.push((start..start + b.len()).collect::<Vec<usize>>());
            start += b.len();
        }
        for e in &ds.entries {
            assert!((0.0..=1.0).contains(&e.utility));
            let mut rest: &[usize] = &e.indices;
            while !rest.is_empty() {
                let range = ranges
                    .iter()
                    .find(|r| r[0] == rest[0])
                    .expect("entry starts mid-block");
                assert_eq!(&rest[..range.len()], &range[..], "block split apart");
                rest = &rest[range.len()..];
            }
        }
        // Both extremes of the coalition lattice show up in 30 draws.
        assert!(ds.entries.iter().any(|e| e.indices.len() == total), "full union never drawn");
        assert!(
            ds.entries.iter().any(|e| ranges.iter().any(|r| &e.indices == r)),
            "single block never drawn"
        );
        assert!(build_utility_dataset_blocks(&[], &val, 5, &mut rng).is_err());
    }

    #[test]
    fn utility_dataset_csv_roundtrip() {
        let tr = blobs(15, 2, 5.0, 17);
        let val = blobs(10, 2, 5.0, 18);
        let mut rng = seeded_rng(19);
        let ds = build_utility_dataset(&tr, &val, 8, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sds.csv");
        ds.save_csv(&path).unwrap();
        let back = UtilityDataset::load_csv(&path, tr.len()).unwrap();
        assert_eq!(ds, back);
        assert!(UtilityDataset::load_csv(&path, 3).is_err(), "indices out of range");
        let examples = ds.to_set_examples(&tr).unwrap();
        assert_eq!(examples.len(), 8);
        assert_eq!(examples[0].samples.len(), ds.entries[0].indices.len());
    }
}
