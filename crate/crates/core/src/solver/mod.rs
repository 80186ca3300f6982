//! Hindsight and hybrid log-welfare programs.
//!
//! The hybrid program with past utility `W` (absolute units), remaining items
//! `v_1..v_m` and divisor `T` is
//!
//! ```text
//! maximize  log f(u)   subject to  u = (W + Σ_τ v_τ ⊙ x_τ) / T,  x_τ ≥ 0,  Σ_i x_τi ≤ 1
//! ```
//!
//! with dual `D(β) = (⟨β, W⟩ + Σ_τ max_i β_i v_τi) / T + ψ(β)`, `ψ` the
//! conjugate from [`crate::welfare`]. Every result carries a certificate:
//! `β* = ∇log f(u*)` evaluated at the returned primal point, and
//! `gap = D(β*) − log f(u*)`, which is nonnegative by weak duality and equals
//! `(1/T) Σ_τ (max_i β*_i v_τi − Σ_i β*_i v_τi x_τi)`.
//!
//! Agents that can never receive utility (zero past utility and zero value
//! for every item) make the program infeasible for `p ≤ 0`. For `p > 0` they
//! are pinned at zero utility and reported with `β_i = +∞`.

mod brute;
mod crossover;
mod frank_wolfe;
mod local;
mod newton;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{AllocationPlan, ItemSequence, ValueRows};
use crate::welfare::WelfareSpec;

pub use brute::{brute_force_oracle, BRUTE_FORCE_MAX_AGENTS, BRUTE_FORCE_MAX_GRID, BRUTE_FORCE_MAX_ITEMS};

/// Relative KKT tolerance: plan entries may sit at most
/// `KKT_TOL · v̄ · ‖β*‖∞` below the row maximum of `β*_i v_τi`.
pub const KKT_TOL: f64 = 1e-7;

/// Which algorithm runs the solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    /// Damped Newton on an entropy-smoothed dual along a decreasing
    /// smoothing path, with primal recovery after every stage.
    #[default]
    SmoothedNewton,
    /// Conditional gradient on the utility polytope with exact line search.
    ConditionalGradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Relative duality-gap target.
    pub tol: f64,
    pub max_iters: usize,
    pub method: SolveMethod,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iters: 20_000,
            method: SolveMethod::SmoothedNewton,
        }
    }
}

impl SolverOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }
}

/// Data of a hybrid program.
#[derive(Debug, Clone, Copy)]
pub struct SolveRequest<'a> {
    pub spec: &'a WelfareSpec,
    /// Past cumulative utility `W`, absolute units.
    pub past: &'a [f64],
    /// Remaining items.
    pub items: ValueRows<'a>,
    /// The divisor `T`; at least the number of items.
    pub t_total: usize,
    pub options: SolverOptions,
    /// Dual prices of a nearby program, used as the starting point.
    pub warm_start: Option<&'a [f64]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    /// Optimal time-averaged utilities.
    pub u_star: Vec<f64>,
    /// `∇log f(u_star)`; `+∞` for agents pinned at zero.
    pub beta_star: Vec<f64>,
    /// Allocation of the remaining items.
    pub plan: AllocationPlan,
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
    pub iters: usize,
    /// True when the gap and KKT targets were met.
    pub certified: bool,
}

impl SolveResult {
    /// `max_i β*_i`, ignoring pinned agents.
    pub fn beta_max(&self) -> f64 {
        self.beta_star.iter().cloned().filter(|b| b.is_finite()).fold(0.0, f64::max)
    }

    /// Relative gap `gap / max(1, |primal|)`.
    pub fn relative_gap(&self) -> f64 {
        self.gap / self.primal.abs().max(1.0)
    }
}

/// Solves the hybrid program.
pub fn solve_hybrid(req: &SolveRequest<'_>) -> Result<SolveResult> {
    let spec = req.spec;
    let n = spec.n();
    if req.past.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: req.past.len(),
        });
    }
    if let Some((index, &value)) = req.past.iter().enumerate().find(|(_, w)| !(**w >= 0.0) || !w.is_finite()) {
        return Err(Error::NegativeEntry { index, value });
    }
    if req.items.n() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: req.items.n(),
        });
    }
    if let Some((k, &value)) = req.items.as_flat().iter().enumerate().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::BadRow {
            row: k / n,
            message: format!("item value {value} must be finite and nonnegative"),
        });
    }
    let m = req.items.len();
    if req.t_total == 0 || req.t_total < m {
        return Err(Error::InvalidParameter(format!(
            "t_total ({}) must be positive and at least the number of items ({m})",
            req.t_total
        )));
    }
    if !(req.options.tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "solver tolerance must be positive, got {}",
            req.options.tol
        )));
    }
    if let Some(w) = req.warm_start {
        if w.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: w.len(),
            });
        }
    }

    let mut reachable = vec![false; n];
    for (i, r) in reachable.iter_mut().enumerate() {
        *r = req.past[i] > 0.0 || req.items.rows().any(|row| row[i] > 0.0);
    }
    if spec.p() <= 0.0 {
        if let Some(agent) = reachable.iter().position(|r| !r) {
            return Err(Error::UnreachableAgent { agent });
        }
    }
    let active: Vec<usize> = (0..n).filter(|&i| reachable[i]).collect();
    let t_total = req.t_total as f64;

    if active.is_empty() {
        return Ok(SolveResult {
            u_star: vec![0.0; n],
            beta_star: vec![f64::INFINITY; n],
            plan: AllocationPlan::zeros(m, n),
            primal: f64::NEG_INFINITY,
            dual: f64::NEG_INFINITY,
            gap: 0.0,
            iters: 0,
            certified: true,
        });
    }

    // Reduced program over active agents and nonzero items.
    let reduced_spec = if active.len() == n {
        spec.clone()
    } else {
        spec.restrict(&active)?
    };
    // log f over all agents equals ln(Σ_{active} B_i)/p + log f over the
    // active ones when the others sit at zero (only reachable for p > 0).
    let offset = if active.len() == n {
        0.0
    } else {
        active.iter().map(|&i| spec.weights()[i]).sum::<f64>().ln() / spec.p()
    };
    let na = active.len();
    let mut rows = Vec::new();
    let mut kept = Vec::new();
    for (t, row) in req.items.rows().enumerate() {
        if row.iter().any(|&v| v > 0.0) {
            kept.push(t);
            rows.extend(active.iter().map(|&i| row[i]));
        }
    }
    let program = Program {
        spec: reduced_spec,
        past: active.iter().map(|&i| req.past[i]).collect(),
        rows,
        n: na,
        t_total,
        vbar: req.items.max_value(),
    };
    let warm: Option<Vec<f64>> = req.warm_start.and_then(|w| {
        let sub: Vec<f64> = active.iter().map(|&i| w[i]).collect();
        sub.iter().all(|b| b.is_finite() && *b > 0.0).then_some(sub)
    });

    let out = match req.options.method {
        SolveMethod::SmoothedNewton => newton::solve(&program, &req.options, warm.as_deref()),
        SolveMethod::ConditionalGradient => frank_wolfe::solve(&program, &req.options),
    };

    let mut u_star = vec![0.0; n];
    let mut beta_star = vec![f64::INFINITY; n];
    for (k, &i) in active.iter().enumerate() {
        u_star[i] = out.cert.u[k];
        beta_star[i] = out.cert.beta[k];
    }
    let mut x = vec![0.0; m * n];
    for (r, &t) in kept.iter().enumerate() {
        for (k, &i) in active.iter().enumerate() {
            x[t * n + i] = out.x[r * na + k];
        }
    }
    let primal = out.cert.primal + offset;
    let dual = out.cert.dual + offset;
    let gap = dual - primal;
    debug_assert!(
        !(gap < -1e-9 * primal.abs().max(1.0)),
        "weak duality violated: dual {dual} < primal {primal}"
    );
    Ok(SolveResult {
        u_star,
        beta_star,
        plan: AllocationPlan::from_flat_unchecked(x, n),
        primal,
        dual,
        gap,
        iters: out.iters,
        certified: out.cert.certified(req.options.tol),
    })
}

/// Solves the hindsight program: no past utility, divisor `T`.
pub fn solve_hindsight(spec: &WelfareSpec, items: &ItemSequence, options: SolverOptions) -> Result<SolveResult> {
    let past = vec![0.0; spec.n()];
    solve_hybrid(&SolveRequest {
        spec,
        past: &past,
        items: items.view(),
        t_total: items.len().max(1),
        options,
        warm_start: None,
    })
}

/// Hindsight optimal welfare `OPT = exp(P*)`.
pub fn opt_welfare(spec: &WelfareSpec, items: &ItemSequence, options: SolverOptions) -> Result<f64> {
    Ok(solve_hindsight(spec, items, options)?.primal.exp())
}

/// Reduced program: every agent reachable, every item nonzero.
pub(crate) struct Program {
    pub spec: WelfareSpec,
    pub past: Vec<f64>,
    /// Row-major `m × n` item values.
    pub rows: Vec<f64>,
    pub n: usize,
    pub t_total: f64,
    pub vbar: f64,
}

impl Program {
    pub fn m(&self) -> usize {
        self.rows.len() / self.n
    }

    /// `(W + Σ v ⊙ x) / T`.
    pub fn utilities(&self, x: &[f64]) -> Vec<f64> {
        let mut u = self.past.clone();
        for (v, xr) in self.rows.chunks_exact(self.n).zip(x.chunks_exact(self.n)) {
            for i in 0..self.n {
                u[i] += v[i] * xr[i];
            }
        }
        for ui in u.iter_mut() {
            *ui /= self.t_total;
        }
        u
    }

    /// Certificate of a feasible plan.
    pub fn certificate(&self, x: &[f64]) -> Certificate {
        let u = self.utilities(x);
        let primal = self.spec.log_welfare_unchecked(&u);
        if !primal.is_finite() || u.iter().any(|&ui| ui <= 0.0) {
            return Certificate {
                u,
                beta: vec![f64::INFINITY; self.n],
                primal,
                dual: f64::INFINITY,
                kkt_ok: false,
            };
        }
        let mut beta = vec![0.0; self.n];
        self.spec.grad_log_unchecked(&u, &mut beta);
        let dual = crate::welfare::dual_objective_unchecked(&self.spec, &beta, &self.past, &self.rows, self.t_total);
        let kkt_ok = self.support_violations(x, &beta, self.kkt_threshold(&beta)) == 0;
        Certificate {
            u,
            beta,
            primal,
            dual,
            kkt_ok,
        }
    }

    pub fn kkt_threshold(&self, beta: &[f64]) -> f64 {
        let bmax = beta.iter().cloned().fold(0.0, f64::max);
        KKT_TOL * self.vbar * bmax
    }

    /// Number of plan entries more than `thr` below their row maximum.
    fn support_violations(&self, x: &[f64], beta: &[f64], thr: f64) -> usize {
        let mut count = 0;
        for (v, xr) in self.rows.chunks_exact(self.n).zip(x.chunks_exact(self.n)) {
            let mx = crate::welfare::max_scaled(beta, v);
            for i in 0..self.n {
                if xr[i] > 0.0 && mx - beta[i] * v[i] > thr {
                    count += 1;
                }
            }
        }
        count
    }

    /// Moves plan mass sitting well below its row maximum (under the
    /// plan's own gradient) onto the lowest-index row maximizer, and
    /// returns the certificate of the better of the two plans.
    pub fn polish(&self, x: &mut Vec<f64>) -> Certificate {
        let first = self.certificate(x);
        if first.kkt_ok || !first.beta.iter().all(|b| b.is_finite()) {
            return first;
        }
        let original = x.clone();
        let mut cert = first.clone();
        for _ in 0..3 {
            let thr = 0.5 * self.kkt_threshold(&cert.beta);
            let mut moved = false;
            for (v, xr) in self.rows.chunks_exact(self.n).zip(x.chunks_exact_mut(self.n)) {
                let (best, mx) = argmax_scaled(&cert.beta, v);
                for i in 0..self.n {
                    if i != best && xr[i] > 0.0 && mx - cert.beta[i] * v[i] > thr {
                        xr[best] += xr[i];
                        xr[i] = 0.0;
                        moved = true;
                    }
                }
            }
            if !moved {
                break;
            }
            cert = self.certificate(x);
            if cert.kkt_ok || !cert.beta.iter().all(|b| b.is_finite()) {
                break;
            }
        }
        if cert.kkt_ok || cert.gap() <= first.gap() {
            cert
        } else {
            *x = original;
            first
        }
    }
}

/// Lowest-index maximizer of `β_i v_i` and the maximum.
pub(crate) fn argmax_scaled(beta: &[f64], v: &[f64]) -> (usize, f64) {
    let mut best = 0;
    let mut mx = f64::NEG_INFINITY;
    for (i, (b, x)) in beta.iter().zip(v).enumerate() {
        let s = b * x;
        if s > mx {
            mx = s;
            best = i;
        }
    }
    (best, mx)
}

#[derive(Debug, Clone)]
pub(crate) struct Certificate {
    pub u: Vec<f64>,
    pub beta: Vec<f64>,
    pub primal: f64,
    pub dual: f64,
    pub kkt_ok: bool,
}

impl Certificate {
    pub fn gap(&self) -> f64 {
        if self.primal.is_finite() && self.dual.is_finite() {
            self.dual - self.primal
        } else {
            f64::INFINITY
        }
    }

    pub fn relative_gap(&self) -> f64 {
        self.gap() / self.primal.abs().max(1.0)
    }

    pub fn certified(&self, tol: f64) -> bool {
        self.kkt_ok && self.relative_gap() <= tol
    }
}

pub(crate) struct Outcome {
    pub x: Vec<f64>,
    pub cert: Certificate,
    pub iters: usize,
}

/// Starting plan: one round-robin pass in which every agent in turn takes
/// half of its most valuable remaining item (lowest index on ties); all
/// other mass is split uniformly. Every agent with a positive value
/// somewhere ends up with positive utility.
pub(crate) fn initial_plan(program: &Program) -> Vec<f64> {
    let n = program.n;
    let m = program.m();
    let mut x = vec![0.5 / n as f64; m * n];
    let mut taken = vec![false; m];
    for i in 0..n {
        let mut best: Option<(usize, f64)> = None;
        for t in (0..m).filter(|&t| !taken[t]) {
            let v = program.rows[t * n + i];
            if best.map_or(true, |(_, b)| v > b) {
                best = Some((t, v));
            }
        }
        let Some((t, _)) = best else { break };
        taken[t] = true;
        x[t * n + i] += 0.5;
    }
    for t in (0..m).filter(|&t| !taken[t]) {
        for i in 0..n {
            x[t * n + i] += 0.5 / n as f64;
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn seq(rows: &[&[f64]]) -> ItemSequence {
        let vbar = rows.iter().flat_map(|r| r.iter()).cloned().fold(1.0, f64::max);
        ItemSequence::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>(), vbar).unwrap()
    }

    fn both_methods() -> [SolverOptions; 2] {
        [
            SolverOptions::default(),
            SolverOptions {
                method: SolveMethod::ConditionalGradient,
                tol: 1e-7,
                ..SolverOptions::default()
            },
        ]
    }

    #[test]
    fn symmetric_two_items() {
        let spec = WelfareSpec::symmetric(0.0, 2).unwrap();
        for opts in both_methods() {
            let r = solve_hindsight(&spec, &seq(&[&[1.0, 1.0], &[1.0, 1.0]]), opts).unwrap();
            assert!(r.certified, "{opts:?}");
            assert_relative_eq!(r.u_star[0], 0.5, epsilon = 1e-6);
            assert_relative_eq!(r.u_star[1], 0.5, epsilon = 1e-6);
            assert_relative_eq!(r.primal, 0.5f64.ln(), epsilon = 1e-7);
            assert_relative_eq!(r.beta_star[0], 1.0, epsilon = 1e-5);
            assert_relative_eq!(r.beta_star[1], 1.0, epsilon = 1e-5);
        }
    }

    #[test]
    fn single_agent_gets_the_mean() {
        for p in [-2.0, 0.0, 0.5] {
            let spec = WelfareSpec::symmetric(p, 1).unwrap();
            let s = seq(&[&[1.0], &[3.0]]);
            let r = solve_hindsight(&spec, &s, SolverOptions::default()).unwrap();
            assert!(r.certified);
            assert_relative_eq!(r.u_star[0], 2.0, epsilon = 1e-12);
            assert_relative_eq!(opt_welfare(&spec, &s, SolverOptions::default()).unwrap(), 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn past_only_with_pinned_agent() {
        let spec = WelfareSpec::symmetric(0.5, 2).unwrap();
        let r = solve_hybrid(&SolveRequest {
            spec: &spec,
            past: &[1.0, 0.0],
            items: ValueRows::empty(2),
            t_total: 1,
            options: SolverOptions::default(),
            warm_start: None,
        })
        .unwrap();
        assert_eq!(r.u_star, vec![1.0, 0.0]);
        assert_relative_eq!(r.primal, 0.25f64.ln(), epsilon = 1e-14);
        assert!(r.beta_star[1].is_infinite());
        assert!(r.certified);
    }

    #[test]
    fn unreachable_agent_is_an_error_for_nonpositive_p() {
        let spec = WelfareSpec::symmetric(-1.0, 2).unwrap();
        let err = solve_hindsight(&spec, &seq(&[&[1.0, 0.0], &[2.0, 0.0]]), SolverOptions::default()).unwrap_err();
        assert!(matches!(err, Error::UnreachableAgent { agent: 1 }));
    }

    #[test]
    fn identical_items_split_evenly() {
        let spec = WelfareSpec::symmetric(0.0, 2).unwrap();
        let s = seq(&[&[0.3, 0.9], &[0.3, 0.9], &[0.3, 0.9]]);
        let r = solve_hindsight(&spec, &s, SolverOptions::default()).unwrap();
        assert!(r.certified);
        assert_relative_eq!(r.u_star[0], 0.15, epsilon = 1e-9);
        assert_relative_eq!(r.u_star[1], 0.45, epsilon = 1e-9);
    }

    #[test]
    fn one_hot_items() {
        for p in [-1.0, 0.0, 0.7] {
            let spec = WelfareSpec::symmetric(p, 3).unwrap();
            let c = 0.6;
            let s = seq(&[&[c, 0.0, 0.0], &[0.0, c, 0.0], &[0.0, 0.0, c]]);
            let r = solve_hindsight(&spec, &s, SolverOptions::default()).unwrap();
            for u in &r.u_star {
                assert_relative_eq!(*u, c / 3.0, epsilon = 1e-12);
            }
            assert_relative_eq!(r.primal.exp(), c / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_items_are_left_unallocated() {
        let spec = WelfareSpec::symmetric(0.0, 2).unwrap();
        let s = seq(&[&[1.0, 0.5], &[0.0, 0.0], &[0.2, 1.0]]);
        let r = solve_hindsight(&spec, &s, SolverOptions::default()).unwrap();
        assert_eq!(r.plan.row(1), &[0.0, 0.0]);
        assert!(r.certified);
    }

    #[test]
    fn initial_plan_reaches_every_agent() {
        let program = Program {
            spec: WelfareSpec::symmetric(0.0, 3).unwrap(),
            past: vec![0.0; 3],
            rows: vec![1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.5, 0.5, 0.5],
            n: 3,
            t_total: 3.0,
            vbar: 1.0,
        };
        let x = initial_plan(&program);
        for row in x.chunks(3) {
            assert_relative_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
        }
        assert!(program.utilities(&x).iter().all(|&u| u > 0.0));
    }
}
