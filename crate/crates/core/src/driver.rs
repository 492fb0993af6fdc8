//! The debugging loop: start at the largest useful sparsity weight, halve it
//! each round, warm-start from the previous solution, and accumulate flagged
//! items until the examination budget is exceeded.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};

use crate::classification::{ClassificationProblem, PgdOptions};
use crate::error::{DutiError, Result};
use crate::learners::LearnerConfig;
use crate::regression::{solve_weighted_lasso, LassoSystem, RegressionProblem};
use crate::types::{DebugReport, DeltaState, Dataset, Fix, FlagSet, Labels, RankedFlag, Round, RoundStatus, Task, TrustedSet};

/// A regression item counts as flagged when `|delta_i|` exceeds this.
pub const REGRESSION_FLAG_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct DriverConfig {
    /// Examination budget `b`; the loop stops once more than `b` items are flagged.
    pub budget: usize,
    /// Minimum sparsity weight; `None` means `gamma0 * 2^-30`.
    pub gamma_floor: Option<f64>,
    pub max_rounds: usize,
    /// Outer optimizer settings for classification rounds.
    pub pgd: PgdOptions,
}

impl DriverConfig {
    pub const DEFAULT_MAX_ROUNDS: usize = 40;
    pub const DEFAULT_FLOOR_HALVINGS: i32 = 30;

    pub fn new(budget: usize) -> Result<Self> {
        let cfg = Self {
            budget,
            gamma_floor: None,
            max_rounds: Self::DEFAULT_MAX_ROUNDS,
            pgd: PgdOptions::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(DutiError::InvalidConfig("budget must be at least 1".into()));
        }
        if let Some(f) = self.gamma_floor {
            if !(f.is_finite() && f > 0.0) {
                return Err(DutiError::InvalidConfig(format!("gamma floor must be positive, got {f}")));
            }
        }
        if self.max_rounds == 0 {
            return Err(DutiError::InvalidConfig("max_rounds must be at least 1".into()));
        }
        Ok(())
    }

    fn floor_for(&self, gamma0: f64) -> f64 {
        self.gamma_floor
            .unwrap_or(gamma0 * 2f64.powi(-Self::DEFAULT_FLOOR_HALVINGS))
    }
}

/// Largest sparsity weight for which the unchanged labels are optimal.
///
/// Zero means there is nothing to debug: no label change decreases the
/// objective at any positive sparsity weight.
pub fn initial_gamma(data: &Dataset, trusted: &TrustedSet, cfg: &LearnerConfig) -> Result<f64> {
    match data.task() {
        Task::Regression => Ok(RegressionProblem::new(data, trusted, cfg)?.lasso_system().zero_threshold()),
        Task::Classification { .. } => Ok(ClassificationProblem::new(data, trusted, cfg)?
            .initial_gamma()?
            .unwrap_or(0.0)),
    }
}

/// Indices whose soft label no longer puts the most mass on the original
/// label; ties keep the original label.
pub fn classification_flags(delta: &DMatrix<f64>, labels: &[usize]) -> Vec<usize> {
    labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| (0..delta.ncols()).any(|j| j != y && delta[(i, j)] > delta[(i, y)]))
        .map(|(i, _)| i)
        .collect()
}

/// Most likely class of a soft label, preferring `original` on ties and then
/// the lower class index.
pub fn suggested_class(row: &[f64], original: usize) -> usize {
    let mut best = original;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] || (v == row[best] && best != original && j < best) {
            best = j;
        }
    }
    best
}

pub fn regression_flags(delta: &DVector<f64>) -> Vec<usize> {
    (0..delta.len())
        .filter(|&i| delta[i].abs() > REGRESSION_FLAG_TOL)
        .collect()
}

fn deviation(delta: &DeltaState, labels: &Labels, i: usize) -> f64 {
    match (delta, labels) {
        (DeltaState::Regression(d), _) => d[i].abs(),
        (DeltaState::Classification(d), Labels::Classification { labels, .. }) => 1.0 - d[(i, labels[i])],
        (DeltaState::Classification(_), Labels::Regression(_)) => f64::NAN,
    }
}

fn fix_from(delta: &DeltaState, labels: &Labels, i: usize) -> Fix {
    match (delta, labels) {
        (DeltaState::Regression(d), _) => Fix::Value(labels.value(i) + d[i]),
        (DeltaState::Classification(d), Labels::Classification { labels, .. }) => {
            let row: Vec<f64> = d.row(i).iter().copied().collect();
            Fix::Class(suggested_class(&row, labels[i]))
        }
        (DeltaState::Classification(_), Labels::Regression(_)) => Fix::Value(f64::NAN),
    }
}

/// Global ranking of every flagged item in `trajectory`.
///
/// Items flagged earlier come first; within a round, larger deviation from
/// the original label first; then lower index. The suggested fix comes from
/// the last round in which the item was flagged.
pub fn rank_flags(trajectory: &[Round], labels: &Labels) -> Result<Vec<RankedFlag>> {
    let n = labels.len();
    // index -> (first round position, last round position)
    let mut seen: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (pos, round) in trajectory.iter().enumerate() {
        if round.delta.len() != n {
            return Err(DutiError::DimensionMismatch(format!(
                "round {} has {} items, labels have {n}",
                round.iteration,
                round.delta.len()
            )));
        }
        for &i in round.flags.indices() {
            seen.entry(i).and_modify(|e| e.1 = pos).or_insert((pos, pos));
        }
    }
    let mut entries: Vec<RankedFlag> = seen
        .into_iter()
        .map(|(i, (first, last))| {
            let r = &trajectory[first];
            RankedFlag {
                index: i,
                rank: 0,
                first_iteration: r.iteration,
                first_gamma: r.gamma,
                deviation: deviation(&r.delta, labels, i),
                original_label: labels.value(i),
                fix: fix_from(&trajectory[last].delta, labels, i),
            }
        })
        .collect();
    entries.sort_by(|a, b| {
        a.first_iteration
            .cmp(&b.first_iteration)
            .then(b.deviation.total_cmp(&a.deviation))
            .then(a.index.cmp(&b.index))
    });
    for (pos, e) in entries.iter_mut().enumerate() {
        e.rank = pos + 1;
    }
    Ok(entries)
}

enum Session {
    Regression {
        system: LassoSystem,
    },
    Classification {
        problem: ClassificationProblem,
        alpha: Option<DMatrix<f64>>,
    },
}

/// Runs the full debugging loop.
pub fn run_duti(
    data: &Dataset,
    trusted: &TrustedSet,
    cfg: &LearnerConfig,
    driver: &DriverConfig,
) -> Result<DebugReport> {
    driver.validate()?;
    let n = data.len();
    if driver.budget > n {
        return Err(DutiError::InvalidConfig(format!(
            "budget {} exceeds the number of training items {n}",
            driver.budget
        )));
    }
    let task = data.task();
    let (mut session, gamma0, mut delta) = match task {
        Task::Regression => {
            let system = RegressionProblem::new(data, trusted, cfg)?.lasso_system();
            let g0 = system.zero_threshold();
            (
                Session::Regression { system },
                g0,
                DeltaState::Regression(DVector::zeros(n)),
            )
        }
        Task::Classification { .. } => {
            let problem = ClassificationProblem::new(data, trusted, cfg)?;
            let start = problem.initial_delta();
            let (g0, alpha) = problem.initial_state()?;
            let g0 = g0.unwrap_or(0.0);
            (
                Session::Classification {
                    problem,
                    alpha: Some(alpha),
                },
                g0,
                DeltaState::Classification(start),
            )
        }
    };
    if !(gamma0 > 0.0) {
        return Ok(DebugReport::empty(task, n, 0.0));
    }

    let floor = driver.floor_for(gamma0);
    let mut gamma = gamma0;
    let mut trajectory = Vec::new();
    let mut union: BTreeSet<usize> = BTreeSet::new();
    let mut t = 0;
    while union.len() <= driver.budget && t < driver.max_rounds {
        t += 1;
        gamma /= 2.0;
        if gamma < floor {
            break;
        }
        let (next, status) = match &mut session {
            Session::Regression { system, .. } => {
                let DeltaState::Regression(prev) = &delta else { unreachable!() };
                match solve_weighted_lasso(system, gamma, prev) {
                    Ok(sol) => {
                        let status = if sol.converged {
                            RoundStatus::Converged
                        } else {
                            RoundStatus::NotConverged
                        };
                        (Some(DeltaState::Regression(sol.delta)), status)
                    }
                    Err(e) => (None, RoundStatus::Failed(e.to_string())),
                }
            }
            Session::Classification { problem, alpha } => {
                let DeltaState::Classification(prev) = &delta else { unreachable!() };
                match problem.projected_gradient_descent(prev, alpha.as_ref(), gamma, &driver.pgd) {
                    Ok(out) => {
                        *alpha = Some(out.alpha);
                        let status = if out.converged {
                            RoundStatus::Converged
                        } else {
                            RoundStatus::NotConverged
                        };
                        (Some(DeltaState::Classification(out.delta)), status)
                    }
                    Err(e) => (None, RoundStatus::Failed(e.to_string())),
                }
            }
        };
        let flags = match &next {
            Some(DeltaState::Regression(d)) => regression_flags(d),
            Some(DeltaState::Classification(d)) => {
                let Session::Classification { problem, .. } = &session else { unreachable!() };
                classification_flags(d, problem.labels())
            }
            None => Vec::new(),
        };
        if let Some(d) = next {
            delta = d;
        }
        union.extend(flags.iter().copied());
        trajectory.push(Round {
            iteration: t,
            gamma,
            delta: delta.clone(),
            flags: FlagSet::new(t, gamma, flags, n)?,
            status,
        });
    }
    let ranking = rank_flags(&trajectory, data.labels())?;
    Ok(DebugReport {
        task,
        n,
        gamma0,
        trajectory,
        ranking,
    })
}
