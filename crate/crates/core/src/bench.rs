//! Simulated debugging corpora with known bugs.
//!
//! Every generator is a pure function of its seed and parameters. Randomness
//! comes from ChaCha8 seeded with the caller's seed, on a stream reserved for
//! that generator (see the `STREAM_*` constants).

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{DutiError, Result};
use crate::kernel::{median_heuristic_bandwidth, rbf_kernel_matrix, KernelMatrix};
use crate::learners::{predict_klr, train_klr, LearnerConfig};
use crate::types::{Dataset, Labels, TrustedSet};

pub const STREAM_HARRY_POTTER: u64 = 1;
pub const STREAM_SINE: u64 = 2;
pub const STREAM_FAIRNESS: u64 = 3;
pub const STREAM_MULTICLASS: u64 = 4;
pub const STREAM_LOAN_TABLE: u64 = 5;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: String,
    pub seed: u64,
    pub params: BTreeMap<String, Value>,
}

/// A training set with known true labels, trusted items, and the bug list.
#[derive(Debug, Clone)]
pub struct SimulatedCorpus {
    pub dataset: Dataset,
    pub trusted: TrustedSet,
    pub bug_indices: Vec<usize>,
    pub provenance: Provenance,
}

impl SimulatedCorpus {
    /// Derives the bug list from the dataset's true labels.
    pub fn new(dataset: Dataset, trusted: TrustedSet, provenance: Provenance) -> Result<Self> {
        let truth = dataset
            .true_labels()
            .ok_or_else(|| DutiError::InvalidData("simulated corpus needs true labels".into()))?;
        trusted.check_compatible(&dataset)?;
        let bug_indices = (0..dataset.len())
            .filter(|&i| dataset.labels().value(i) != truth.value(i))
            .collect();
        Ok(Self {
            dataset,
            trusted,
            bug_indices,
            provenance,
        })
    }

    pub fn is_bug(&self, i: usize) -> bool {
        self.bug_indices.binary_search(&i).is_ok()
    }

    /// Number of bugs whose stored label is 1 and 0 (binary tasks).
    pub fn bug_counts_by_label(&self) -> (usize, usize) {
        let pos = self
            .bug_indices
            .iter()
            .filter(|&&i| self.dataset.labels().value(i) == 1.0)
            .count();
        (pos, self.bug_indices.len() - pos)
    }
}

fn provenance(generator: &str, seed: u64, params: Value) -> Provenance {
    let params = match params {
        Value::Object(map) => map.into_iter().collect(),
        _ => BTreeMap::new(),
    };
    Provenance {
        generator: generator.into(),
        seed,
        params,
    }
}

/// Biased hiring toy: features `(heritage, education)` in the unit square,
/// true label `hired = education >= 0.5`. A cluster of 12% of the points
/// sits in `[0, 0.3] x [0.6, 1]` (low heritage, high education) and is
/// labeled "not hired"; those are the bugs.
///
/// Trusted items: `(0.2, 0.7)` hired and `(0.8, 0.3)` not hired.
pub fn gen_harry_potter(seed: u64, n: usize) -> Result<SimulatedCorpus> {
    if n < 20 {
        return Err(DutiError::InvalidConfig(format!("need n >= 20, got {n}")));
    }
    let mut rng = rng_for(seed, STREAM_HARRY_POTTER);
    let n_bugs = ((n as f64) * 0.12).round() as usize;
    let in_box = |h: f64, e: f64| h <= 0.3 && e >= 0.6;
    let mut points = Vec::with_capacity(n);
    while points.len() < n - n_bugs {
        let (h, e): (f64, f64) = (rng.random(), rng.random());
        if !in_box(h, e) {
            points.push((h, e, false));
        }
    }
    for _ in 0..n_bugs {
        points.push((rng.random_range(0.0..0.3), rng.random_range(0.6..1.0), true));
    }
    points.shuffle(&mut rng);
    let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { points[i].0 } else { points[i].1 });
    let truth: Vec<usize> = points.iter().map(|p| usize::from(p.1 >= 0.5)).collect();
    let labels: Vec<usize> = points
        .iter()
        .zip(&truth)
        .map(|(p, &t)| if p.2 { 0 } else { t })
        .collect();
    let dataset = Dataset::new(x, Labels::classification(labels, 2)?)?
        .with_true_labels(Labels::classification(truth, 2)?)?;
    let trusted = TrustedSet::with_default_confidence(
        DMatrix::from_row_slice(2, 2, &[0.2, 0.7, 0.8, 0.3]),
        Labels::classification(vec![1, 0], 2)?,
    )?;
    SimulatedCorpus::new(
        dataset,
        trusted,
        provenance("harry_potter", seed, json!({ "n": n, "bugs": n_bugs })),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct SineParams {
    pub n: usize,
    pub bugs: usize,
    pub noise_sd: f64,
    /// The flipped peak `(lo, hi)`.
    pub peak: (f64, f64),
    pub trusted_x: Vec<f64>,
}

impl Default for SineParams {
    fn default() -> Self {
        Self {
            n: 100,
            bugs: 24,
            noise_sd: 0.1,
            peak: (1.0, 1.5),
            trusted_x: vec![1.10, 1.15, 1.20],
        }
    }
}

/// `y = sin(2 pi x) + noise` on `[0, 2]` with the second positive peak
/// negated. Exactly `bugs` points are drawn inside the peak and the rest
/// outside it, then shuffled. Trusted items are noiseless.
pub fn gen_sine_regression(seed: u64) -> Result<SimulatedCorpus> {
    gen_sine_regression_with(seed, &SineParams::default())
}

pub fn gen_sine_regression_with(seed: u64, p: &SineParams) -> Result<SimulatedCorpus> {
    let (lo, hi) = p.peak;
    if !(0.0 <= lo && lo < hi && hi <= 2.0) || p.bugs > p.n || p.trusted_x.is_empty() {
        return Err(DutiError::InvalidConfig("invalid sine generator parameters".into()));
    }
    let mut rng = rng_for(seed, STREAM_SINE);
    let noise = Normal::new(0.0, p.noise_sd)
        .map_err(|e| DutiError::InvalidConfig(format!("noise: {e}")))?;
    let outside = 2.0 - (hi - lo);
    let mut points: Vec<(f64, bool)> = Vec::with_capacity(p.n);
    for _ in 0..(p.n - p.bugs) {
        let u = rng.random_range(0.0..outside);
        points.push((if u < lo { u } else { u + (hi - lo) }, false));
    }
    for _ in 0..p.bugs {
        points.push((rng.random_range(lo..hi), true));
    }
    points.shuffle(&mut rng);
    let f = |x: f64| (2.0 * std::f64::consts::PI * x).sin();
    let truth: Vec<f64> = points.iter().map(|&(x, _)| f(x) + noise.sample(&mut rng)).collect();
    let labels: Vec<f64> = points
        .iter()
        .zip(&truth)
        .map(|(&(_, bug), &t)| if bug { -t } else { t })
        .collect();
    let x = DMatrix::from_iterator(p.n, 1, points.iter().map(|q| q.0));
    let dataset = Dataset::new(x, Labels::regression(labels)?)?.with_true_labels(Labels::regression(truth)?)?;
    let m = p.trusted_x.len();
    let trusted = TrustedSet::with_default_confidence(
        DMatrix::from_column_slice(m, 1, &p.trusted_x),
        Labels::regression(p.trusted_x.iter().map(|&x| f(x)).collect())?,
    )?;
    SimulatedCorpus::new(
        dataset,
        trusted,
        provenance(
            "sine",
            seed,
            json!({
                "n": p.n, "bugs": p.bugs, "noise_sd": p.noise_sd,
                "peak": [lo, hi], "trusted_x": p.trusted_x,
            }),
        ),
    )
}

/// A binary-labeled table with one protected attribute column.
#[derive(Debug, Clone)]
pub struct TabularBinary {
    pub features: DMatrix<f64>,
    pub labels: Vec<usize>,
    pub protected_column: usize,
    /// Rows whose protected value is `<=` this form the protected group.
    pub protected_max: f64,
}

/// Group sizes `(protected, other)` for the trusted group A and the training
/// group B; the reference group C takes `c_other` further unprotected rows
/// (all remaining ones when `None`).
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionSizes {
    pub a: (usize, usize),
    pub b: (usize, usize),
    pub c_other: Option<usize>,
}

impl PartitionSizes {
    /// 20+20 trusted, 170+170 training, rest as reference.
    pub fn german_loan() -> Self {
        Self {
            a: (20, 20),
            b: (170, 170),
            c_other: None,
        }
    }
}

/// Learner settings of the reference classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceModel {
    pub lambda: f64,
    /// `None` uses the median heuristic on group C.
    pub bandwidth: Option<f64>,
}

impl Default for ReferenceModel {
    fn default() -> Self {
        Self {
            lambda: 1e-3,
            bandwidth: None,
        }
    }
}

/// Fairness-bias pipeline.
///
/// Features are standardized over the whole table and the protected column
/// is dropped. Group C (unprotected only) trains the reference classifier,
/// which relabels group A into trusted items and defines the true labels of
/// the training group B; B keeps its stored labels.
pub fn gen_fairness_bias(
    table: &TabularBinary,
    sizes: &PartitionSizes,
    reference: &ReferenceModel,
    seed: u64,
) -> Result<SimulatedCorpus> {
    let (rows, d) = table.features.shape();
    if table.labels.len() != rows {
        return Err(DutiError::DimensionMismatch(format!(
            "{rows} feature rows but {} labels",
            table.labels.len()
        )));
    }
    if table.protected_column >= d || d < 2 {
        return Err(DutiError::InvalidConfig(format!(
            "protected column {} invalid for {d} columns",
            table.protected_column
        )));
    }
    if let Some((index, &label)) = table.labels.iter().enumerate().find(|(_, &y)| y > 1) {
        return Err(DutiError::LabelOutOfRange {
            index,
            label,
            classes: 2,
        });
    }
    let mut rng = rng_for(seed, STREAM_FAIRNESS);
    let (mut prot, mut other): (Vec<usize>, Vec<usize>) =
        (0..rows).partition(|&i| table.features[(i, table.protected_column)] <= table.protected_max);
    prot.shuffle(&mut rng);
    other.shuffle(&mut rng);
    let need_prot = sizes.a.0 + sizes.b.0;
    let need_other = sizes.a.1 + sizes.b.1 + sizes.c_other.unwrap_or(1);
    if prot.len() < need_prot || other.len() < need_other {
        return Err(DutiError::InvalidData(format!(
            "insufficient group sizes: {} protected / {} other rows, need {need_prot} / {need_other}",
            prot.len(),
            other.len()
        )));
    }
    let a: Vec<usize> = prot[..sizes.a.0].iter().chain(&other[..sizes.a.1]).copied().collect();
    let mut b: Vec<usize> = prot[sizes.a.0..need_prot]
        .iter()
        .chain(&other[sizes.a.1..sizes.a.1 + sizes.b.1])
        .copied()
        .collect();
    b.shuffle(&mut rng);
    let c_start = sizes.a.1 + sizes.b.1;
    let c_end = sizes.c_other.map_or(other.len(), |c| c_start + c);
    let c: Vec<usize> = other[c_start..c_end].to_vec();

    // standardize over the full table, then drop the protected column
    let keep: Vec<usize> = (0..d).filter(|&j| j != table.protected_column).collect();
    let stats: Vec<(f64, f64)> = keep
        .iter()
        .map(|&j| {
            let col = table.features.column(j);
            let mean = col.mean();
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / rows as f64).sqrt();
            (mean, if sd > 0.0 { sd } else { 1.0 })
        })
        .collect();
    let select = |idx: &[usize]| {
        DMatrix::from_fn(idx.len(), keep.len(), |r, j| {
            (table.features[(idx[r], keep[j])] - stats[j].0) / stats[j].1
        })
    };
    let (xa, xb, xc) = (select(&a), select(&b), select(&c));
    let yc: Vec<usize> = c.iter().map(|&i| table.labels[i]).collect();
    let sigma = match reference.bandwidth {
        Some(s) => s,
        None => median_heuristic_bandwidth(&xc)?,
    };
    let cfg = LearnerConfig::new(reference.lambda, sigma)?;
    let kc = KernelMatrix::build(&xc, &cfg.kernel)?;
    let model = train_klr(&kc, &yc, 2, &cfg, None)?.params;
    let predict = |x: &DMatrix<f64>| -> Result<Vec<usize>> {
        let p = predict_klr(&model, &rbf_kernel_matrix(x, &xc, &cfg.kernel)?)?;
        Ok((0..x.nrows()).map(|r| usize::from(p[(r, 1)] > p[(r, 0)])).collect())
    };
    let ya = predict(&xa)?;
    let truth_b = predict(&xb)?;
    let yb: Vec<usize> = b.iter().map(|&i| table.labels[i]).collect();
    let dataset = Dataset::new(xb, Labels::classification(yb, 2)?)?.with_true_labels(Labels::classification(truth_b, 2)?)?;
    let trusted = TrustedSet::with_default_confidence(xa, Labels::classification(ya, 2)?)?;
    SimulatedCorpus::new(
        dataset,
        trusted,
        provenance(
            "fairness",
            seed,
            json!({
                "a": [sizes.a.0, sizes.a.1], "b": [sizes.b.0, sizes.b.1], "c": c.len(),
                "protected_column": table.protected_column, "protected_max": table.protected_max,
                "reference_lambda": reference.lambda, "reference_bandwidth": sigma,
            }),
        ),
    )
}

/// A synthetic table shaped like the German loan data: 1000 applicants, 190
/// of them aged 25 or younger, six credit features and a 0/1 "good credit"
/// label that depends on the features only. Young applicants with good
/// credit are recorded as bad with probability 0.45 and every label is
/// flipped with probability 0.05.
///
/// Columns: six features, then age (column 6).
pub fn synthetic_loan_table(seed: u64) -> TabularBinary {
    let mut rng = rng_for(seed, STREAM_LOAN_TABLE);
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let rows = 1000;
    let young = 190;
    let weights = [1.0, -0.8, 0.6, 0.0, 0.5, -0.4];
    let mut features = DMatrix::zeros(rows, 7);
    let mut labels = Vec::with_capacity(rows);
    let mut order: Vec<usize> = (0..rows).collect();
    order.shuffle(&mut rng);
    for (pos, &r) in order.iter().enumerate() {
        let is_young = pos < young;
        let mut score = 0.8;
        for (j, w) in weights.iter().enumerate() {
            let v = std_normal.sample(&mut rng);
            features[(r, j)] = v;
            score += w * v;
        }
        // a mild nonlinearity so that the kernel learner has something to do
        score += 0.4 * features[(r, 3)] * features[(r, 0)];
        let age = if is_young {
            rng.random_range(19.0..=25.0f64).floor()
        } else {
            rng.random_range(26.0..=70.0f64).floor()
        };
        features[(r, 6)] = age;
        let mut good = score + 0.3 * std_normal.sample(&mut rng) > 0.0;
        if is_young && good && rng.random_bool(0.45) {
            good = false;
        }
        if rng.random_bool(0.05) {
            good = !good;
        }
        labels.push(usize::from(good));
    }
    // restore row order so that `labels[r]` matches row `r`
    let mut by_row = vec![0; rows];
    for (pos, &r) in order.iter().enumerate() {
        by_row[r] = labels[pos];
    }
    TabularBinary {
        features,
        labels: by_row,
        protected_column: 6,
        protected_max: 25.0,
    }
}

/// Blurred-relabeling simulation on a `k`-class Gaussian mixture in 2-D.
///
/// A reference classifier is trained on a clean held-out split. The `n`
/// training points keep clean features but are labeled by the reference
/// classifier applied to noise-corrupted copies of them; their true labels
/// are their mixture components. Trusted items are a further clean sample,
/// 40% of the per-class training size for each class.
pub fn gen_noisy_relabel_multiclass(seed: u64, k: usize, n: usize, noise_level: f64) -> Result<SimulatedCorpus> {
    if k < 3 {
        return Err(DutiError::InvalidConfig(format!("need k >= 3 classes, got {k}")));
    }
    if n < k || !(noise_level.is_finite() && noise_level >= 0.0) {
        return Err(DutiError::InvalidConfig("need n >= k and a non-negative noise level".into()));
    }
    let mut rng = rng_for(seed, STREAM_MULTICLASS);
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let centers: Vec<(f64, f64)> = (0..k)
        .map(|c| {
            let t = 2.0 * std::f64::consts::PI * c as f64 / k as f64;
            (2.5 * t.cos(), 2.5 * t.sin())
        })
        .collect();
    let draw = |count: usize, rng: &mut ChaCha8Rng| -> (DMatrix<f64>, Vec<usize>) {
        let labels: Vec<usize> = (0..count).map(|i| i % k).collect();
        let mut x = DMatrix::zeros(count, 2);
        for (i, &c) in labels.iter().enumerate() {
            x[(i, 0)] = centers[c].0 + 0.8 * std_normal.sample(rng);
            x[(i, 1)] = centers[c].1 + 0.8 * std_normal.sample(rng);
        }
        (x, labels)
    };
    let per_class = n.div_ceil(k);
    let (x_ref, y_ref) = draw(50 * k, &mut rng);
    let (x, truth) = draw(n, &mut rng);
    let m_per = ((per_class as f64) * 0.4).round().max(1.0) as usize;
    let (xt, yt) = draw(m_per * k, &mut rng);

    let sigma = median_heuristic_bandwidth(&x_ref)?;
    let cfg = LearnerConfig::new(1e-3, sigma)?;
    let model = train_klr(&KernelMatrix::build(&x_ref, &cfg.kernel)?, &y_ref, k, &cfg, None)?.params;
    let corrupted = DMatrix::from_fn(n, 2, |i, j| x[(i, j)] + noise_level * std_normal.sample(&mut rng));
    let probs = predict_klr(&model, &rbf_kernel_matrix(&corrupted, &x_ref, &cfg.kernel)?)?;
    let labels: Vec<usize> = (0..n)
        .map(|i| {
            (0..k)
                .max_by(|&a, &b| probs[(i, a)].total_cmp(&probs[(i, b)]).then(b.cmp(&a)))
                .expect("k >= 3")
        })
        .collect();
    let dataset = Dataset::new(x, Labels::classification(labels, k)?)?.with_true_labels(Labels::classification(truth, k)?)?;
    let trusted = TrustedSet::with_default_confidence(xt, Labels::classification(yt, k)?)?;
    SimulatedCorpus::new(
        dataset,
        trusted,
        provenance(
            "multiclass",
            seed,
            json!({ "k": k, "n": n, "noise_level": noise_level, "reference_bandwidth": sigma }),
        ),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harry_potter_bugs_are_the_biased_cluster() {
        for seed in 0..5 {
            let c = gen_harry_potter(seed, 100).unwrap();
            assert_eq!(c.bug_indices.len(), 12);
            let x = c.dataset.features();
            for &i in &c.bug_indices {
                assert!(x[(i, 1)] >= 0.5);
                assert_eq!(c.dataset.labels().value(i), 0.0);
                assert!(x[(i, 0)] <= 0.3 && x[(i, 1)] >= 0.6);
            }
            let t = c.trusted.features();
            assert!(t[(0, 1)] >= 0.5 && t[(1, 1)] < 0.5);
        }
    }

    #[test]
    fn generators_are_deterministic() {
        let a = gen_harry_potter(7, 60).unwrap();
        let b = gen_harry_potter(7, 60).unwrap();
        assert_eq!(a.dataset, b.dataset);
        let a = gen_sine_regression(3).unwrap();
        let b = gen_sine_regression(3).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_ne!(a.dataset, gen_sine_regression(4).unwrap().dataset);
    }

    #[test]
    fn sine_shape() {
        let c = gen_sine_regression(0).unwrap();
        assert_eq!(c.dataset.len(), 100);
        assert_eq!(c.trusted.len(), 3);
        assert_eq!(c.bug_indices.len(), 24);
        for &i in &c.bug_indices {
            let x = c.dataset.features()[(i, 0)];
            assert!(x > 1.0 && x < 1.5);
        }
        let t = c.trusted.labels().as_real().unwrap();
        for (l, &x) in c.trusted.features().column(0).iter().enumerate() {
            assert_eq!(t[l], (2.0 * std::f64::consts::PI * x).sin());
        }
    }

    #[test]
    fn fairness_pipeline_on_loan_shaped_table() {
        let table = synthetic_loan_table(0);
        let c = gen_fairness_bias(&table, &PartitionSizes::german_loan(), &ReferenceModel::default(), 0).unwrap();
        assert_eq!(c.dataset.len(), 340);
        assert_eq!(c.trusted.len(), 40);
        assert_eq!(c.dataset.dim(), 6);
        let bugs = c.bug_indices.len();
        assert!((66..=126).contains(&bugs), "{bugs} bugs");
    }

    #[test]
    fn fairness_rejects_small_groups() {
        let table = synthetic_loan_table(1);
        let sizes = PartitionSizes {
            a: (100, 20),
            b: (170, 170),
            c_other: None,
        };
        assert!(matches!(
            gen_fairness_bias(&table, &sizes, &ReferenceModel::default(), 0),
            Err(DutiError::InvalidData(_))
        ));
    }

    #[test]
    fn multiclass_noise_free_labels_follow_reference() {
        let c = gen_noisy_relabel_multiclass(2, 4, 80, 0.0).unwrap();
        assert_eq!(c.trusted.len(), 4 * 8);
        // components are well separated, so noise-free relabeling is nearly clean
        assert!(c.bug_indices.len() <= 8, "{}", c.bug_indices.len());
    }

    #[test]
    fn multiclass_bugs_grow_with_noise() {
        let count = |noise: f64| -> usize {
            (0..10)
                .map(|s| gen_noisy_relabel_multiclass(s, 3, 60, noise).unwrap().bug_indices.len())
                .sum()
        };
        let (a, b, c) = (count(0.0), count(1.0), count(3.0));
        assert!(a < b && b < c, "{a} {b} {c}");
    }
}
