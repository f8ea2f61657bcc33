//! KNN regression ensembles.
//!
//! Each baselearner is a [`KnnRegressor`] fitted on a [`Bag`]: a subset of
//! the training rows, a subset of the feature columns and its own neighbor
//! count. Predictions are the unweighted mean of the learners.
//!
//! Learner `i` draws everything from a stream derived from `(seed, i)`, so a
//! fitted model does not depend on the order or thread in which learners
//! were built.

mod persist;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Dataset, Standardizer};
use crate::exec::Execution;
use crate::knn::{self, running_mean, IndexKind, KnnError, KnnRegressor, NeighborIndex, TuneResult};
use crate::rng;

pub use persist::{load_model, read_model, save_model, write_model, FORMAT_VERSION, MAGIC};

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("unknown preset {0:?} (expected v1..v7 or single)")]
    UnknownPreset(String),
    #[error("invalid ensemble spec: {0}")]
    BadSpec(String),
    #[error("need at least 2 training rows, got {0}")]
    TooFewRows(usize),
    #[error("need at least 1 feature column")]
    NoFeatures,
    #[error("a tuned k policy can only be resolved while fitting")]
    TunedPolicy,
    #[error("input has {found} feature columns, model expects {expected}")]
    SchemaMismatch { expected: usize, found: usize },
    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt model file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Knn(#[from] KnnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = EnsembleError> = std::result::Result<T, E>;

/// Candidate neighbor counts for the tuned single-KNN baseline.
pub const DEFAULT_TUNE_CANDIDATES: [usize; 13] = [1, 3, 5, 7, 9, 11, 13, 15, 17, 19, 21, 23, 25];
pub const DEFAULT_TUNE_FOLDS: usize = 5;
pub const DEFAULT_LEARNERS: usize = 10;

/// How each learner's neighbor count is chosen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum KPolicy {
    Fixed { k: usize },
    /// Uniform integer on `min..=max`.
    Uniform { min: usize, max: usize },
    /// Cross-validated over `candidates` on the learner's own bag.
    Tuned { candidates: Vec<usize>, folds: usize },
}

impl KPolicy {
    pub fn validate(&self) -> Result<()> {
        match self {
            KPolicy::Fixed { k } if *k == 0 => Err(EnsembleError::BadSpec("fixed k must be >= 1".into())),
            KPolicy::Uniform { min, max } if *min == 0 || min > max => Err(EnsembleError::BadSpec(format!(
                "uniform k range must satisfy 1 <= min <= max, got {min}..={max}"
            ))),
            KPolicy::Tuned { candidates, folds } if candidates.is_empty() || candidates.contains(&0) || *folds < 2 => {
                Err(EnsembleError::BadSpec("tuned k needs positive candidates and >= 2 folds".into()))
            }
            _ => Ok(()),
        }
    }

    /// Draws k for one learner; `None` for the tuned policy.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<usize> {
        match *self {
            KPolicy::Fixed { k } => Some(k),
            KPolicy::Uniform { min, max } => Some(rng.random_range(min..=max)),
            KPolicy::Tuned { .. } => None,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            KPolicy::Fixed { k } => format!("fixed {k}"),
            KPolicy::Uniform { min, max } => format!("uniform {min}..={max}"),
            KPolicy::Tuned { candidates, folds } => {
                format!("tuned over {candidates:?} by {folds}-fold CV")
            }
        }
    }
}

/// Configuration of one ensemble construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub variant_name: String,
    /// Fraction of training rows per learner, in (0, 1].
    pub obs_fraction: f64,
    /// Fraction of feature columns per learner, in (0, 1].
    pub feat_fraction: f64,
    pub k_policy: KPolicy,
    pub n_learners: usize,
    /// Sample rows with replacement. Off for every preset.
    #[serde(default)]
    pub replacement: bool,
    #[serde(default)]
    pub index_kind: IndexKind,
}

impl EnsembleSpec {
    pub fn new(variant_name: impl Into<String>, obs_fraction: f64, feat_fraction: f64, k_policy: KPolicy) -> Self {
        Self {
            variant_name: variant_name.into(),
            obs_fraction,
            feat_fraction,
            k_policy,
            n_learners: DEFAULT_LEARNERS,
            replacement: false,
            index_kind: IndexKind::Auto,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |f: f64| f > 0.0 && f <= 1.0;
        if !ok(self.obs_fraction) || !ok(self.feat_fraction) {
            return Err(EnsembleError::BadSpec(format!(
                "fractions must lie in (0, 1], got obs {} feat {}",
                self.obs_fraction, self.feat_fraction
            )));
        }
        if self.n_learners == 0 {
            return Err(EnsembleError::BadSpec("n_learners must be >= 1".into()));
        }
        self.k_policy.validate()
    }

    pub fn with_learners(mut self, n: usize) -> Self {
        self.n_learners = n;
        self
    }
}

/// The named presets: `v1`..`v7` and `single`.
pub const PRESET_NAMES: [&str; 8] = ["v1", "v2", "v3", "v4", "v5", "v6", "v7", "single"];

/// The fixed configuration for a preset id (`v1`..`v7`, `1`..`7`, `single`).
pub fn preset(id: &str) -> Result<EnsembleSpec> {
    const FIXED: KPolicy = KPolicy::Fixed { k: 10 };
    const RANDOM: KPolicy = KPolicy::Uniform { min: 5, max: 15 };
    let key = id.trim().to_ascii_lowercase();
    let key = key.strip_prefix('v').unwrap_or(&key);
    let (obs, feat, policy) = match key {
        "1" => (0.30, 0.90, FIXED),
        "2" => (0.30, 0.90, RANDOM),
        "3" => (1.0, 0.30, FIXED),
        "4" => (1.0, 1.0, RANDOM),
        "5" => (0.30, 1.0, RANDOM),
        "6" => (0.30, 1.0, FIXED),
        "7" => (1.0, 0.30, RANDOM),
        "single" => {
            let policy = KPolicy::Tuned {
                candidates: DEFAULT_TUNE_CANDIDATES.to_vec(),
                folds: DEFAULT_TUNE_FOLDS,
            };
            return Ok(EnsembleSpec::new("single", 1.0, 1.0, policy).with_learners(1));
        }
        _ => return Err(EnsembleError::UnknownPreset(id.to_string())),
    };
    Ok(EnsembleSpec::new(format!("v{key}"), obs, feat, policy))
}

/// One learner's view of the training data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bag {
    /// Training-row indices, ascending.
    pub row_indices: Vec<usize>,
    /// Feature-column indices, ascending and distinct.
    pub feature_indices: Vec<usize>,
    /// k as drawn (or tuned) before clamping.
    pub k_drawn: usize,
    /// k after clamping to the number of bagged rows.
    pub k: usize,
}

fn bag_size(fraction: f64, n: usize, floor: usize) -> usize {
    ((fraction * n as f64).round() as usize).max(floor).min(n)
}

fn draw_subsets<R: Rng + ?Sized>(
    spec: &EnsembleSpec,
    n_rows: usize,
    n_features: usize,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if n_rows < 2 {
        return Err(EnsembleError::TooFewRows(n_rows));
    }
    if n_features == 0 {
        return Err(EnsembleError::NoFeatures);
    }
    let m = bag_size(spec.obs_fraction, n_rows, 2);
    let mut rows = if spec.replacement {
        (0..m).map(|_| rng.random_range(0..n_rows)).collect()
    } else {
        index::sample(rng, n_rows, m).into_vec()
    };
    rows.sort_unstable();
    let q = bag_size(spec.feat_fraction, n_features, 1);
    let mut feats = index::sample(rng, n_features, q).into_vec();
    feats.sort_unstable();
    Ok((rows, feats))
}

/// Draws one learner's bag: `max(2, round(obs_fraction * n_rows))` rows,
/// `max(1, round(feat_fraction * n_features))` features, then k from the
/// policy clamped to the row count.
pub fn draw_bag<R: Rng + ?Sized>(spec: &EnsembleSpec, n_rows: usize, n_features: usize, rng: &mut R) -> Result<Bag> {
    spec.validate()?;
    let (row_indices, feature_indices) = draw_subsets(spec, n_rows, n_features, rng)?;
    let k_drawn = spec.k_policy.draw(rng).ok_or(EnsembleError::TunedPolicy)?;
    Ok(Bag {
        k: k_drawn.min(row_indices.len()),
        k_drawn,
        row_indices,
        feature_indices,
    })
}

/// A fitted baselearner.
#[derive(Debug, Clone)]
pub struct Learner {
    pub bag: Bag,
    pub regressor: KnnRegressor,
    /// Cross-validation trace when the k policy is tuned.
    pub tuning: Option<TuneResult>,
}

impl Learner {
    fn project(&self, standardized_row: &[f64], buf: &mut Vec<f64>) {
        buf.clear();
        buf.extend(self.bag.feature_indices.iter().map(|&j| standardized_row[j]));
    }
}

/// A fitted ensemble. Immutable and shareable across threads.
#[derive(Debug, Clone)]
pub struct EnsembleModel {
    pub spec: EnsembleSpec,
    pub seed: u64,
    pub standardizer: Standardizer,
    pub feature_names: Vec<String>,
    pub target_name: String,
    pub learners: Vec<Learner>,
}

/// Builds learner `i` from the standardized training data.
fn fit_learner(spec: &EnsembleSpec, z: &Dataset, seed: u64, i: usize) -> Result<Learner> {
    let mut stream = rng::derive_stream(seed, i as u64);
    let (rows, feats) = draw_subsets(spec, z.n_rows(), z.n_cols(), &mut stream)?;

    let mut points = Vec::with_capacity(rows.len() * feats.len());
    for &r in &rows {
        let row = z.row(r);
        points.extend(feats.iter().map(|&j| row[j]));
    }
    let targets: Vec<f64> = rows.iter().map(|&r| z.target()[r]).collect();

    let (k_drawn, tuning) = match &spec.k_policy {
        KPolicy::Tuned { candidates, folds } => {
            let names = feats.iter().map(|&j| z.feature_names()[j].clone()).collect();
            let view = Dataset::from_flat(points.clone(), feats.len(), targets.clone(), names, z.target_name())?;
            let t = knn::tune_k(&view, candidates, *folds, &mut stream)?;
            (t.best_k, Some(t))
        }
        policy => (policy.draw(&mut stream).expect("non-tuned policy"), None),
    };
    let k = k_drawn.min(rows.len());

    // index labels are bag positions; rows are ascending so ties still
    // resolve by original row index
    let index = NeighborIndex::build(points, feats.len(), (0..rows.len()).collect(), spec.index_kind)?;
    let regressor = KnnRegressor::new(index, targets, k)?;
    Ok(Learner {
        bag: Bag {
            row_indices: rows,
            feature_indices: feats,
            k_drawn,
            k,
        },
        regressor,
        tuning,
    })
}

/// Fits an ensemble on `train`. The standardizer is fitted on all training
/// rows; learners are fitted under `exec` and the result is identical for
/// every execution mode and thread count.
pub fn fit_ensemble(spec: &EnsembleSpec, train: &Dataset, seed: u64, exec: Execution) -> Result<EnsembleModel> {
    spec.validate()?;
    if train.n_rows() < 2 {
        return Err(EnsembleError::TooFewRows(train.n_rows()));
    }
    if train.n_cols() == 0 {
        return Err(EnsembleError::NoFeatures);
    }
    let standardizer = Standardizer::fit_all(train)?;
    let z = standardizer.apply(train)?;
    let learners = exec
        .map_range(spec.n_learners, |i| fit_learner(spec, &z, seed, i))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(EnsembleModel {
        spec: spec.clone(),
        seed,
        standardizer,
        feature_names: train.feature_names().to_vec(),
        target_name: train.target_name().to_string(),
        learners,
    })
}

impl EnsembleModel {
    pub fn n_features(&self) -> usize {
        self.standardizer.n_cols()
    }

    /// Effective k of every learner.
    pub fn effective_ks(&self) -> Vec<usize> {
        self.learners.iter().map(|l| l.bag.k).collect()
    }

    /// Prediction for one raw (unstandardized) feature row.
    pub fn predict_row(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.n_features() {
            return Err(EnsembleError::SchemaMismatch {
                expected: self.n_features(),
                found: row.len(),
            });
        }
        let mut z = vec![0.0; row.len()];
        self.standardizer.transform_row(row, &mut z);
        let mut buf = Vec::new();
        let mut preds = Vec::with_capacity(self.learners.len());
        for learner in &self.learners {
            learner.project(&z, &mut buf);
            preds.push(learner.regressor.predict(&buf)?);
        }
        Ok(running_mean(preds.into_iter()))
    }

    /// Predictions for a row-major raw feature matrix.
    pub fn predict_matrix(&self, rows: &[f64], exec: Execution) -> Result<Vec<f64>> {
        let p = self.n_features();
        if p == 0 || !rows.len().is_multiple_of(p) {
            return Err(EnsembleError::SchemaMismatch {
                expected: p,
                found: rows.len(),
            });
        }
        exec.map_range(rows.len() / p, |i| self.predict_row(&rows[i * p..(i + 1) * p]))
            .into_iter()
            .collect()
    }

    /// Predictions for every row of `x` (target ignored).
    pub fn predict(&self, x: &Dataset, exec: Execution) -> Result<Vec<f64>> {
        if x.n_cols() != self.n_features() {
            return Err(EnsembleError::SchemaMismatch {
                expected: self.n_features(),
                found: x.n_cols(),
            });
        }
        self.predict_matrix(x.features(), exec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tweedie::{generate_sim_dataset, Relationship, SimScenario};
    use proptest::prelude::*;

    fn sim(n: usize, seed: u64) -> Dataset {
        let s = SimScenario {
            relationship: Relationship::Mixed,
            xi: 1.5,
            phi: 2.0,
            n_rows: n,
            n_noise: 6,
        };
        generate_sim_dataset(&s, seed).unwrap()
    }

    #[test]
    fn preset_table() {
        let expect = [
            ("v1", 0.30, 0.90, KPolicy::Fixed { k: 10 }),
            ("v2", 0.30, 0.90, KPolicy::Uniform { min: 5, max: 15 }),
            ("v3", 1.0, 0.30, KPolicy::Fixed { k: 10 }),
            ("v4", 1.0, 1.0, KPolicy::Uniform { min: 5, max: 15 }),
            ("v5", 0.30, 1.0, KPolicy::Uniform { min: 5, max: 15 }),
            ("v6", 0.30, 1.0, KPolicy::Fixed { k: 10 }),
            ("v7", 1.0, 0.30, KPolicy::Uniform { min: 5, max: 15 }),
        ];
        for (i, (name, obs, feat, policy)) in expect.into_iter().enumerate() {
            let s = preset(name).unwrap();
            assert_eq!(s, preset(&(i + 1).to_string()).unwrap());
            assert_eq!(s.variant_name, name);
            assert_eq!((s.obs_fraction, s.feat_fraction), (obs, feat));
            assert_eq!(s.k_policy, policy);
            assert_eq!(s.n_learners, 10);
            assert!(!s.replacement);
        }
        let single = preset("single").unwrap();
        assert_eq!(single.n_learners, 1);
        assert_eq!((single.obs_fraction, single.feat_fraction), (1.0, 1.0));
        assert!(matches!(single.k_policy, KPolicy::Tuned { .. }));
        assert!(matches!(preset("v8"), Err(EnsembleError::UnknownPreset(_))));
    }

    #[test]
    fn bag_sizes() {
        let mut s = rng::stream(1);
        let b = draw_bag(&preset("v6").unwrap(), 1000, 10, &mut s).unwrap();
        assert_eq!((b.row_indices.len(), b.feature_indices.len(), b.k), (300, 10, 10));
        let b = draw_bag(&preset("v3").unwrap(), 100, 2, &mut s).unwrap();
        assert_eq!(b.feature_indices.len(), 1);
        let b = draw_bag(&preset("v1").unwrap(), 3, 1, &mut s).unwrap();
        assert_eq!(b.row_indices.len(), 2);
        assert_eq!((b.k_drawn, b.k), (10, 2));
        assert!(matches!(
            draw_bag(&preset("v1").unwrap(), 1, 3, &mut s),
            Err(EnsembleError::TooFewRows(1))
        ));
        assert!(matches!(
            draw_bag(&preset("single").unwrap(), 10, 3, &mut s),
            Err(EnsembleError::TunedPolicy)
        ));
    }

    #[test]
    fn bag_invariants() {
        let mut s = rng::stream(2);
        for id in ["v1", "v2", "v3", "v5", "v7"] {
            let b = draw_bag(&preset(id).unwrap(), 57, 13, &mut s).unwrap();
            assert!(b.row_indices.windows(2).all(|w| w[0] < w[1]));
            assert!(b.feature_indices.windows(2).all(|w| w[0] < w[1]));
            assert!(*b.row_indices.last().unwrap() < 57);
            assert!(*b.feature_indices.last().unwrap() < 13);
        }
    }

    #[test]
    fn replacement_switch_allows_duplicates() {
        let mut spec = preset("v4").unwrap();
        spec.replacement = true;
        let b = draw_bag(&spec, 50, 3, &mut rng::stream(3)).unwrap();
        assert_eq!(b.row_indices.len(), 50);
        assert!(b.row_indices.windows(2).any(|w| w[0] == w[1]));
        let model = fit_ensemble(&spec, &sim(60, 1), 4, Execution::Sequential).unwrap();
        assert_eq!(model.learners.len(), 10);
    }

    #[test]
    fn uniform_k_frequencies() {
        let spec = preset("v4").unwrap();
        let mut s = rng::stream(4);
        let mut counts = [0usize; 16];
        for _ in 0..10_000 {
            counts[draw_bag(&spec, 100, 2, &mut s).unwrap().k] += 1;
        }
        for (k, &c) in counts.iter().enumerate().skip(5) {
            let f = c as f64 / 10_000.0;
            assert!((f - 1.0 / 11.0).abs() <= 0.01, "k={k} f={f}");
        }
        assert_eq!(counts[..5].iter().sum::<usize>(), 0);
    }

    #[test]
    fn spec_validation() {
        let mut s = preset("v1").unwrap();
        s.obs_fraction = 0.0;
        assert!(s.validate().is_err());
        let s = EnsembleSpec::new("x", 0.5, 0.5, KPolicy::Uniform { min: 6, max: 5 });
        assert!(s.validate().is_err());
        let s = EnsembleSpec::new("x", 0.5, 0.5, KPolicy::Fixed { k: 0 });
        assert!(s.validate().is_err());
        assert!(preset("v2").unwrap().with_learners(0).validate().is_err());
    }

    #[test]
    fn preset_two_on_simulation() {
        let ds = sim(1000, 5);
        let m = fit_ensemble(&preset("v2").unwrap(), &ds, 9, Execution::Parallel).unwrap();
        assert_eq!(m.learners.len(), 10);
        for l in &m.learners {
            assert_eq!(l.bag.row_indices.len(), 300);
            assert_eq!(l.bag.feature_indices.len(), 9);
            assert!((5..=15).contains(&l.bag.k));
            assert_eq!(l.regressor.k(), l.bag.k);
        }
    }

    #[test]
    fn fit_is_deterministic_across_modes() {
        let ds = sim(300, 6);
        let spec = preset("v2").unwrap();
        let a = fit_ensemble(&spec, &ds, 11, Execution::Sequential).unwrap();
        let b = fit_ensemble(&spec, &ds, 11, Execution::Parallel).unwrap();
        let bags = |m: &EnsembleModel| m.learners.iter().map(|l| l.bag.clone()).collect::<Vec<_>>();
        assert_eq!(bags(&a), bags(&b));
        let x = sim(50, 7);
        assert_eq!(
            a.predict(&x, Execution::Sequential).unwrap(),
            b.predict(&x, Execution::Parallel).unwrap()
        );
    }

    #[test]
    fn learners_are_independent_of_siblings() {
        let ds = sim(200, 8);
        let spec = preset("v5").unwrap();
        let full = fit_ensemble(&spec, &ds, 3, Execution::Sequential).unwrap();
        let fewer = fit_ensemble(&spec.clone().with_learners(4), &ds, 3, Execution::Sequential).unwrap();
        for (a, b) in full.learners.iter().zip(&fewer.learners) {
            assert_eq!(a.bag, b.bag);
        }
    }

    #[test]
    fn collapse_to_single_knn() {
        let ds = sim(150, 9);
        let test = sim(40, 10);
        let spec = EnsembleSpec::new("collapse", 1.0, 1.0, KPolicy::Fixed { k: 7 });
        let m = fit_ensemble(&spec, &ds, 1, Execution::Parallel).unwrap();

        let st = Standardizer::fit_all(&ds).unwrap();
        let z = st.apply(&ds).unwrap();
        let index = NeighborIndex::build(z.features().to_vec(), z.n_cols(), (0..z.n_rows()).collect(), IndexKind::Brute)
            .unwrap();
        let single = KnnRegressor::new(index, z.target().to_vec(), 7).unwrap();
        let zt = st.apply(&test).unwrap();
        let want: Vec<f64> = zt.rows().map(|r| single.predict(r).unwrap()).collect();
        assert_eq!(m.predict(&test, Execution::Parallel).unwrap(), want);
    }

    #[test]
    fn single_preset_tunes_k() {
        let ds = sim(120, 11);
        let m = fit_ensemble(&preset("single").unwrap(), &ds, 2, Execution::Sequential).unwrap();
        assert_eq!(m.learners.len(), 1);
        let l = &m.learners[0];
        let t = l.tuning.as_ref().unwrap();
        assert_eq!(l.bag.k, t.best_k);
        assert!(DEFAULT_TUNE_CANDIDATES.contains(&t.best_k));
    }

    #[test]
    fn mean_of_learner_predictions() {
        // three one-point learners predicting 1, 2 and 6
        let ds = sim(10, 12);
        let mut m = fit_ensemble(&preset("v4").unwrap().with_learners(3), &ds, 0, Execution::Sequential).unwrap();
        for (l, y) in m.learners.iter_mut().zip([1.0, 2.0, 6.0]) {
            let idx = NeighborIndex::build(vec![0.0], 1, vec![0], IndexKind::Brute).unwrap();
            l.bag.feature_indices = vec![0];
            l.regressor = KnnRegressor::new(idx, vec![y], 1).unwrap();
        }
        assert_eq!(m.predict_row(ds.row(0)).unwrap(), 3.0);
    }

    #[test]
    fn schema_mismatch() {
        let ds = sim(30, 13);
        let m = fit_ensemble(&preset("v1").unwrap(), &ds, 0, Execution::Sequential).unwrap();
        assert!(matches!(
            m.predict_row(&[0.0; 3]),
            Err(EnsembleError::SchemaMismatch { expected: 10, found: 3 })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn predictions_within_training_range(seed in any::<u64>(), v in 1usize..8) {
            let ds = sim(60, seed);
            let test = sim(20, seed ^ 1);
            let m = fit_ensemble(&preset(&v.to_string()).unwrap(), &ds, seed, Execution::Sequential).unwrap();
            let lo = ds.target().iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = ds.target().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for p in m.predict(&test, Execution::Sequential).unwrap() {
                prop_assert!(p >= lo && p <= hi);
            }
        }
    }
}
