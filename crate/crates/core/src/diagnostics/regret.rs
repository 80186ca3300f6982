//! Prefix-hindsight regret curves.

use serde::Serialize;

use super::{lemma, LemmaCheckRecord};
use crate::error::{Error, Result};
use crate::instance::ItemSequence;
use crate::online::{AlgorithmKind, AllocationTrajectory};
use crate::solver::{solve_hindsight, SolverOptions};
use crate::welfare::WelfareSpec;

/// `{n, 2n, 4n, …} ∩ [n, T]`, plus `T` and any `extra` points in range,
/// sorted and deduplicated.
pub fn geometric_checkpoints(n: usize, t_total: usize, extra: &[usize]) -> Vec<usize> {
    let start = n.max(1);
    let mut points = Vec::new();
    let mut t = start;
    while t < t_total {
        points.push(t);
        t = t.saturating_mul(2);
    }
    if t_total >= start {
        points.push(t_total);
    }
    points.extend(extra.iter().copied().filter(|&e| e >= start && e <= t_total));
    points.sort_unstable();
    points.dedup();
    points
}

/// `OPT · r_log`, the bound on welfare regret implied by a log-welfare
/// regret `r_log`.
pub fn regret_conversion_bound(opt: f64, r_log: f64) -> f64 {
    opt * r_log
}

/// Certified prefix optima of one online sequence.
#[derive(Debug, Clone)]
pub struct PrefixOptima {
    /// `(t, outcome)` for every checkpoint.
    pub points: Vec<(usize, std::result::Result<PrefixOptimum, String>)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrefixOptimum {
    /// `log OPT_t` (the certified primal value).
    pub log_opt: f64,
    /// Certified absolute gap of the solve.
    pub gap: f64,
    /// `max_i β*_i`.
    pub beta_max: f64,
}

impl PrefixOptima {
    /// Solves the prefix hindsight program `1..t` with divisor `t` at every
    /// checkpoint. Checkpoints must be strictly increasing within `[n, T]`.
    pub fn compute(
        spec: &WelfareSpec,
        online: &ItemSequence,
        checkpoints: &[usize],
        options: SolverOptions,
    ) -> Result<Self> {
        let (n, t_total) = (online.n(), online.len());
        if checkpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter("checkpoints must be strictly increasing".into()));
        }
        if let Some(&bad) = checkpoints.iter().find(|&&t| t < n || t > t_total || t == 0) {
            return Err(Error::InvalidParameter(format!(
                "checkpoint {bad} outside [{n}, {t_total}]"
            )));
        }
        let points = checkpoints
            .iter()
            .map(|&t| {
                let r = solve_hindsight(spec, &online.prefix(t), options).map(|r| PrefixOptimum {
                    log_opt: r.primal,
                    gap: r.gap,
                    beta_max: r.beta_max(),
                });
                (t, r.map_err(|e| e.to_string()))
            })
            .collect();
        Ok(Self { points })
    }

    pub fn at(&self, t: usize) -> Option<&PrefixOptimum> {
        self.points.iter().find(|(s, _)| *s == t).and_then(|(_, r)| r.as_ref().ok())
    }
}

/// One checkpoint of a regret curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegretPoint {
    pub t: usize,
    /// Prefix hindsight optimum `OPT_t`.
    pub opt: f64,
    /// `f(W_t / t)`.
    pub welfare: f64,
    /// `opt − welfare`.
    pub regret: f64,
    /// `regret / opt`.
    pub normalized_regret: f64,
    /// `log opt − log welfare`; `+∞` when the welfare is zero.
    pub log_regret: f64,
    /// Certified gap of the prefix solve.
    pub opt_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegretReport {
    pub algorithm: AlgorithmKind,
    pub points: Vec<RegretPoint>,
    /// Checkpoints whose prefix solve failed, with the reason.
    pub failures: Vec<(usize, String)>,
}

impl RegretReport {
    pub fn final_point(&self) -> Option<&RegretPoint> {
        self.points.last()
    }

    pub fn at(&self, t: usize) -> Option<&RegretPoint> {
        self.points.iter().find(|p| p.t == t)
    }

    /// `R_f ≤ OPT · R_log f + 1e-8` at every checkpoint.
    pub fn conversion_checks(&self) -> Vec<LemmaCheckRecord> {
        self.points
            .iter()
            .map(|p| {
                let case = format!("algorithm={} t={}", self.algorithm, p.t);
                LemmaCheckRecord::checked(
                    lemma::REGRET_CONVERSION,
                    case,
                    p.regret,
                    regret_conversion_bound(p.opt, p.log_regret),
                    1e-8,
                )
            })
            .collect()
    }
}

/// Regret of `trajectory` at each checkpoint against the prefix optima.
pub fn regret_curve(
    spec: &WelfareSpec,
    trajectory: &AllocationTrajectory,
    online: &ItemSequence,
    checkpoints: &[usize],
    options: SolverOptions,
) -> Result<RegretReport> {
    if trajectory.len() != online.len() {
        return Err(Error::DimensionMismatch {
            expected: online.len(),
            found: trajectory.len(),
        });
    }
    let optima = PrefixOptima::compute(spec, online, checkpoints, options)?;
    Ok(regret_curve_from(spec, trajectory, &optima))
}

/// As [`regret_curve`] with the prefix optima already solved, so that
/// several algorithms on one sequence share them.
pub fn regret_curve_from(spec: &WelfareSpec, trajectory: &AllocationTrajectory, optima: &PrefixOptima) -> RegretReport {
    let mut points = Vec::with_capacity(optima.points.len());
    let mut failures = Vec::new();
    for (t, outcome) in &optima.points {
        let t = *t;
        match outcome {
            Ok(o) => {
                let u: Vec<f64> = trajectory.w(t).iter().map(|w| w / t as f64).collect();
                let log_welfare = spec.log_welfare_unchecked(&u);
                let opt = o.log_opt.exp();
                let welfare = log_welfare.exp();
                let regret = opt - welfare;
                points.push(RegretPoint {
                    t,
                    opt,
                    welfare,
                    regret,
                    normalized_regret: regret / opt,
                    log_regret: o.log_opt - log_welfare,
                    opt_gap: o.gap,
                });
            }
            Err(e) => failures.push((t, e.clone())),
        }
    }
    RegretReport {
        algorithm: trajectory.kind,
        points,
        failures,
    }
}
