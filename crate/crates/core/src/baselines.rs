//! Comparison debuggers: influence functions, nearest trusted neighbour, and
//! label-noise detection with oracle flip counts.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DutiError, Result};
use crate::kernel::{median_heuristic_bandwidth, rbf_kernel_matrix, KernelConfig, KernelMatrix};
use crate::learners::{softmax_rows, train_klr, LearnerConfig, RidgeSystem, SoftmaxSystem};
use crate::types::{one_hot, Dataset, Fix, Labels, Task, TrustedSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineEntry {
    pub index: usize,
    pub score: f64,
    pub fix: Option<Fix>,
}

/// Ordered flags produced by a baseline.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BaselineRanking {
    pub entries: Vec<BaselineEntry>,
}

impl BaselineRanking {
    pub fn indices(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.index).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Per-item influence of the training labels on the (unweighted) trusted
/// loss: the gradient of that loss with respect to the labels through the
/// retrained model. Length n for regression, n x k for classification.
pub fn influence_values(data: &Dataset, trusted: &TrustedSet, cfg: &LearnerConfig) -> Result<DMatrix<f64>> {
    cfg.validate()?;
    trusted.check_compatible(data)?;
    let n = data.len();
    let m = trusted.len() as f64;
    let k = KernelMatrix::build(data.features(), &cfg.kernel)?;
    let kt = rbf_kernel_matrix(trusted.features(), data.features(), &cfg.kernel)?;
    match (data.labels(), trusted.labels()) {
        (Labels::Regression(y), Labels::Regression(yt)) => {
            let ridge = RidgeSystem::new(&k, cfg.lambda)?;
            let alpha = ridge.solve(y);
            let grad = kt.transpose() * (yt - &kt * alpha) * (-2.0 / m);
            let infl = ridge.solve(&grad);
            Ok(DMatrix::from_column_slice(n, 1, infl.as_slice()))
        }
        (
            Labels::Classification { classes, labels },
            Labels::Classification { labels: yt, .. },
        ) => {
            let fit = train_klr(&k, labels, *classes, cfg, None)?;
            let alpha = fit.params.alpha;
            let probs = softmax_rows(&(k.values() * &alpha));
            let resid = softmax_rows(&(&kt * &alpha)) - one_hot(yt, *classes)?;
            let v = kt.transpose() * resid / m;
            let system = SoftmaxSystem::new(k.values(), &probs, cfg.lambda);
            Ok(system.solve_transpose(&v)? / n as f64)
        }
        _ => Err(DutiError::InvalidData(
            "training and trusted labels are of different kinds".into(),
        )),
    }
}

fn sort_entries(entries: &mut [BaselineEntry], descending: bool) {
    entries.sort_by(|a, b| {
        let ord = if descending {
            b.score.total_cmp(&a.score)
        } else {
            a.score.total_cmp(&b.score)
        };
        ord.then(a.index.cmp(&b.index))
    });
}

/// Influence-function ranking.
///
/// Regression ranks every item with non-zero influence by its magnitude.
/// Classification flags items whose influence on their own label is
/// positive and suggests the label with the most negative influence.
pub fn influence_rank(data: &Dataset, trusted: &TrustedSet, cfg: &LearnerConfig) -> Result<BaselineRanking> {
    let infl = influence_values(data, trusted, cfg)?;
    let mut entries: Vec<BaselineEntry> = match data.labels() {
        Labels::Regression(_) => (0..data.len())
            .filter(|&i| infl[(i, 0)] != 0.0)
            .map(|i| BaselineEntry {
                index: i,
                score: infl[(i, 0)].abs(),
                fix: None,
            })
            .collect(),
        Labels::Classification { labels, classes } => labels
            .iter()
            .enumerate()
            .filter(|&(i, &y)| infl[(i, y)] > 0.0)
            .map(|(i, &y)| {
                let fix = (0..*classes)
                    .filter(|&j| j != y)
                    .min_by(|&a, &b| infl[(i, a)].total_cmp(&infl[(i, b)]).then(a.cmp(&b)))
                    .expect("at least two classes");
                BaselineEntry {
                    index: i,
                    score: infl[(i, y)],
                    fix: Some(Fix::Class(fix)),
                }
            })
            .collect(),
    };
    sort_entries(&mut entries, true);
    Ok(BaselineRanking { entries })
}

/// Standardizes both matrices with the training mean and population standard
/// deviation, dropping columns that are constant on the training set.
pub fn standardize(train: &DMatrix<f64>, other: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = train.nrows() as f64;
    let keep: Vec<(usize, f64, f64)> = (0..train.ncols())
        .filter_map(|c| {
            let col = train.column(c);
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            (var > 0.0).then(|| (c, mean, var.sqrt()))
        })
        .collect();
    let apply = |m: &DMatrix<f64>| {
        DMatrix::from_fn(m.nrows(), keep.len(), |r, j| {
            let (c, mean, sd) = keep[j];
            (m[(r, c)] - mean) / sd
        })
    };
    (apply(train), apply(other))
}

/// Nearest-trusted-item ranking on standardized features.
pub fn nn_rank(data: &Dataset, trusted: &TrustedSet) -> Result<BaselineRanking> {
    trusted.check_compatible(data)?;
    let (x, xt) = standardize(data.features(), trusted.features());
    let nearest: Vec<(usize, f64)> = (0..x.nrows())
        .map(|i| {
            (0..xt.nrows())
                .map(|l| (l, (x.row(i) - xt.row(l)).norm()))
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
                .expect("trusted set is non-empty")
        })
        .collect();
    let mut entries: Vec<BaselineEntry> = match (data.labels(), trusted.labels()) {
        (Labels::Regression(_), _) => nearest
            .iter()
            .enumerate()
            .map(|(i, &(_, d))| BaselineEntry {
                index: i,
                score: d,
                fix: None,
            })
            .collect(),
        (Labels::Classification { labels, .. }, Labels::Classification { labels: yt, .. }) => nearest
            .iter()
            .enumerate()
            .filter(|&(i, &(l, _))| labels[i] != yt[l])
            .map(|(i, &(l, d))| BaselineEntry {
                index: i,
                score: d,
                fix: Some(Fix::Class(yt[l])),
            })
            .collect(),
        _ => {
            return Err(DutiError::InvalidData(
                "training and trusted labels are of different kinds".into(),
            ))
        }
    };
    sort_entries(&mut entries, false);
    Ok(BaselineRanking { entries })
}

/// Number of random restarts of the swap local search.
pub const LND_RESTARTS: usize = 10;

/// Constrained maximization of `eta' Q eta` with `Q_ij = y_i y_j K(x_i, x_j)`,
/// where `eta_i = -1` flips item `i`.
///
/// Items are partitioned into positive (`y = +1`) and negative ones; exactly
/// `flips[c]` free items of each sign are flipped. `pinned[i] = Some(e)`
/// fixes `eta_i = e` and those items never move; pinned flips count against
/// the budget of their sign.
#[derive(Debug, Clone)]
pub struct FlipProblem {
    pub q: DMatrix<f64>,
    pub positive: Vec<bool>,
    pub pinned: Vec<Option<f64>>,
    pub flips_pos: usize,
    pub flips_neg: usize,
}

impl FlipProblem {
    pub fn value(&self, eta: &[f64]) -> f64 {
        let e = DVector::from_column_slice(eta);
        e.dot(&(&self.q * &e))
    }

    fn free_of(&self, positive: bool) -> Vec<usize> {
        (0..self.q.nrows())
            .filter(|&i| self.pinned[i].is_none() && self.positive[i] == positive)
            .collect()
    }

    fn pinned_flips(&self, positive: bool) -> usize {
        (0..self.q.nrows())
            .filter(|&i| self.positive[i] == positive && self.pinned[i] == Some(-1.0))
            .count()
    }

    fn free_flip_counts(&self) -> Result<(usize, usize)> {
        let need = |flips: usize, positive: bool| {
            let pinned = self.pinned_flips(positive);
            let free = self.free_of(positive).len();
            if pinned > flips || flips - pinned > free {
                Err(DutiError::InvalidConfig(format!(
                    "cannot flip exactly {flips} {} items ({pinned} forced, {free} free)",
                    if positive { "positive" } else { "negative" }
                )))
            } else {
                Ok(flips - pinned)
            }
        };
        Ok((need(self.flips_pos, true)?, need(self.flips_neg, false)?))
    }

    /// Best-improvement pair-swap search from a random feasible start.
    fn local_search(&self, seed: u64) -> Result<Vec<f64>> {
        let (fp, fneg) = self.free_flip_counts()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.q.nrows();
        let mut eta: Vec<f64> = (0..n).map(|i| self.pinned[i].unwrap_or(1.0)).collect();
        let groups = [self.free_of(true), self.free_of(false)];
        for (group, count) in groups.iter().zip([fp, fneg]) {
            let mut g = group.clone();
            g.shuffle(&mut rng);
            for &i in g.iter().take(count) {
                eta[i] = -1.0;
            }
        }
        let mut h: Vec<f64> = (0..n).map(|i| (0..n).map(|j| self.q[(i, j)] * eta[j]).sum()).collect();
        loop {
            let mut best = (1e-12, usize::MAX, usize::MAX);
            for group in &groups {
                for &i in group.iter().filter(|&&i| eta[i] < 0.0) {
                    for &j in group.iter().filter(|&&j| eta[j] > 0.0) {
                        let gain = -4.0 * eta[i] * h[i] - 4.0 * eta[j] * h[j]
                            + 4.0 * self.q[(i, i)]
                            + 4.0 * self.q[(j, j)]
                            + 8.0 * self.q[(i, j)] * eta[i] * eta[j];
                        if gain > best.0 {
                            best = (gain, i, j);
                        }
                    }
                }
            }
            if best.1 == usize::MAX {
                return Ok(eta);
            }
            for idx in [best.1, best.2] {
                let old = eta[idx];
                eta[idx] = -old;
                for (r, hr) in h.iter_mut().enumerate() {
                    *hr -= 2.0 * old * self.q[(r, idx)];
                }
            }
        }
    }

    /// Best of [`LND_RESTARTS`] local searches; ties go to the
    /// lexicographically smaller `eta`.
    pub fn solve(&self, seed: u64) -> Result<Vec<f64>> {
        let runs: Vec<Result<Vec<f64>>> = (0..LND_RESTARTS as u64)
            .into_par_iter()
            .map(|r| self.local_search(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(r)))
            .collect();
        let mut best: Option<(f64, Vec<f64>)> = None;
        for run in runs {
            let eta = run?;
            let v = self.value(&eta);
            let better = match &best {
                None => true,
                Some((bv, be)) => v > *bv || (v == *bv && eta.iter().zip(be).find(|(a, b)| a != b).is_some_and(|(a, b)| a < b)),
            };
            if better {
                best = Some((v, eta));
            }
        }
        Ok(best.expect("at least one restart").1)
    }

    /// Exhaustive optimum over all feasible flip sets (small instances only).
    pub fn brute_force(&self) -> Result<(f64, Vec<f64>)> {
        let (fp, fneg) = self.free_flip_counts()?;
        let n = self.q.nrows();
        let free: Vec<usize> = (0..n).filter(|&i| self.pinned[i].is_none()).collect();
        if free.len() > 20 {
            return Err(DutiError::InvalidConfig("brute force limited to 20 free items".into()));
        }
        let mut best: Option<(f64, Vec<f64>)> = None;
        for mask in 0u32..(1 << free.len()) {
            let mut eta: Vec<f64> = (0..n).map(|i| self.pinned[i].unwrap_or(1.0)).collect();
            let (mut cp, mut cn) = (0, 0);
            for (b, &i) in free.iter().enumerate() {
                if mask >> b & 1 == 1 {
                    eta[i] = -1.0;
                    if self.positive[i] {
                        cp += 1;
                    } else {
                        cn += 1;
                    }
                }
            }
            if cp != fp || cn != fneg {
                continue;
            }
            let v = self.value(&eta);
            if best.as_ref().is_none_or(|(bv, _)| v > *bv) {
                best = Some((v, eta));
            }
        }
        best.ok_or_else(|| DutiError::InvalidConfig("no feasible flip set".into()))
    }
}

/// Label-noise detection given the true numbers of flipped positive
/// (`n_pos`, stored label 1) and negative (`n_neg`, stored label 0) items.
///
/// Trusted items join the objective as extra points whose labels cannot
/// flip. Training items that coincide with a trusted item take the trusted
/// label. `bandwidth = None` uses the median heuristic on standardized
/// features.
pub fn lnd_oracle(
    data: &Dataset,
    trusted: &TrustedSet,
    n_pos: usize,
    n_neg: usize,
    bandwidth: Option<f64>,
    seed: u64,
) -> Result<BaselineRanking> {
    trusted.check_compatible(data)?;
    if data.task() != (Task::Classification { classes: 2 }) {
        return Err(DutiError::UnsupportedTask(
            "label-noise detection needs a binary classification task".into(),
        ));
    }
    let n = data.len();
    if n_pos + n_neg > n {
        return Err(DutiError::InvalidConfig(format!(
            "{} flips requested for {n} items",
            n_pos + n_neg
        )));
    }
    let labels = data.labels().as_classes().expect("classification task");
    let yt = trusted.labels().as_classes().ok_or_else(|| {
        DutiError::InvalidData("trusted items need class labels".into())
    })?;
    let (x, xt) = standardize(data.features(), trusted.features());
    let h = match bandwidth {
        Some(h) => h,
        None => median_heuristic_bandwidth(&x).unwrap_or(1.0),
    };
    let kcfg = KernelConfig::new(h)?;
    let m = xt.nrows();
    let mut all = DMatrix::zeros(n + m, x.ncols());
    all.rows_mut(0, n).copy_from(&x);
    all.rows_mut(n, m).copy_from(&xt);
    let kern = rbf_kernel_matrix(&all, &all, &kcfg)?;
    let sign = |c: usize| if c == 1 { 1.0 } else { -1.0 };
    let y: Vec<f64> = labels.iter().chain(yt.iter()).map(|&c| sign(c)).collect();
    let q = DMatrix::from_fn(n + m, n + m, |i, j| y[i] * y[j] * kern[(i, j)]);

    let mut pinned: Vec<Option<f64>> = vec![None; n + m];
    for p in pinned.iter_mut().skip(n) {
        *p = Some(1.0);
    }
    for i in 0..n {
        if let Some(l) = (0..m).find(|&l| data.features().row(i) == trusted.features().row(l)) {
            pinned[i] = Some(if labels[i] == yt[l] { 1.0 } else { -1.0 });
        }
    }
    let mut positive: Vec<bool> = y.iter().map(|&v| v > 0.0).collect();
    // trusted points never count against the flip budget
    for (i, p) in positive.iter_mut().enumerate().skip(n) {
        *p = yt[i - n] == 1;
    }
    let problem = FlipProblem {
        q,
        positive,
        pinned,
        flips_pos: n_pos,
        flips_neg: n_neg,
    };
    let eta = problem.solve(seed)?;
    let hq = &problem.q * DVector::from_column_slice(&eta);
    let mut entries: Vec<BaselineEntry> = (0..n)
        .filter(|&i| eta[i] < 0.0)
        .map(|i| BaselineEntry {
            index: i,
            // how strongly the flipped label agrees with its neighbourhood
            score: eta[i] * hq[i],
            fix: Some(Fix::Class(1 - labels[i])),
        })
        .collect();
    sort_entries(&mut entries, true);
    Ok(BaselineRanking { entries })
}
