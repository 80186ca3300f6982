//! Online allocation rules: greedy, dual and primal re-solving, and two
//! sanity baselines.
//!
//! Every rule sees the items one at a time and commits before the next one
//! arrives. Cumulative utility `W` is kept in absolute units; the divisor
//! `T` only appears inside the hybrid programs solved by the re-solving
//! rules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{AllocationPlan, CumulativeUtility, ItemSequence, ValueRows};
use crate::solver::{solve_hybrid, SolveRequest, SolveResult, SolverOptions};
use crate::welfare::WelfareSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmKind {
    Greedy,
    DualResolve,
    PrimalResolve,
    RoundRobin,
    UtilitarianGreedy,
}

impl AlgorithmKind {
    pub fn needs_history(self) -> bool {
        matches!(self, AlgorithmKind::DualResolve | AlgorithmKind::PrimalResolve)
    }

    pub fn name(self) -> &'static str {
        match self {
            AlgorithmKind::Greedy => "greedy",
            AlgorithmKind::DualResolve => "dual_resolve",
            AlgorithmKind::PrimalResolve => "primal_resolve",
            AlgorithmKind::RoundRobin => "round_robin",
            AlgorithmKind::UtilitarianGreedy => "utilitarian_greedy",
        }
    }
}

impl std::fmt::Display for AlgorithmKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OnlineOptions {
    /// Options of every per-step hybrid solve.
    pub solver: SolverOptions,
    /// Start each re-solve from the previous step's prices.
    pub warm_start: bool,
    /// Apply the zero-utility safeguard at `p = 0` as well as `p < 0`.
    pub safeguard_p0: bool,
}

impl Default for OnlineOptions {
    fn default() -> Self {
        Self {
            solver: SolverOptions::with_tol(1e-6),
            warm_start: true,
            safeguard_p0: true,
        }
    }
}

/// Everything an online run decided.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationTrajectory {
    pub kind: AlgorithmKind,
    /// Row `t` is the allocation of item `t`.
    pub choices: AllocationPlan,
    /// Winner of each item; `None` when the item was left unallocated. For
    /// primal re-solving this is the agent with the largest fraction.
    pub winners: Vec<Option<usize>>,
    /// `W_0 = 0, W_1, …, W_T`, flattened `(T + 1) × n`.
    w_path: Vec<f64>,
    /// Prices used at each step, flattened `T × n` (re-solving only).
    beta_path: Option<Vec<f64>>,
    /// Certified duality gap of each per-step solve (re-solving only).
    pub solve_gaps: Option<Vec<f64>>,
    /// `W_T / T`.
    pub final_u: Vec<f64>,
}

impl AllocationTrajectory {
    pub fn n(&self) -> usize {
        self.final_u.len()
    }

    pub fn len(&self) -> usize {
        self.choices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.choices.is_empty()
    }

    /// Cumulative utility after `t` steps, `0 ≤ t ≤ T`.
    pub fn w(&self, t: usize) -> &[f64] {
        let n = self.n();
        &self.w_path[t * n..(t + 1) * n]
    }

    /// Prices used when deciding item `t` (0-based).
    pub fn beta(&self, t: usize) -> Option<&[f64]> {
        let n = self.n();
        self.beta_path.as_ref().map(|b| &b[t * n..(t + 1) * n])
    }

    pub fn has_prices(&self) -> bool {
        self.beta_path.is_some()
    }

    /// Rebuilds a trajectory from explicit per-step winners, recomputing the
    /// utility path. Useful for replaying or corrupting a run.
    pub fn from_winners(kind: AlgorithmKind, seq: &ItemSequence, winners: Vec<Option<usize>>) -> Result<Self> {
        if winners.len() != seq.len() {
            return Err(Error::DimensionMismatch {
                expected: seq.len(),
                found: winners.len(),
            });
        }
        let n = seq.n();
        if let Some(&Some(i)) = winners.iter().find(|w| matches!(w, Some(i) if *i >= n)) {
            return Err(Error::InvalidParameter(format!("winner {i} out of range for {n} agents")));
        }
        let mut rec = Recorder::new(kind, seq.len(), n, false);
        for (t, w) in winners.iter().enumerate() {
            rec.integral(seq.row(t), *w);
        }
        Ok(rec.finish())
    }
}

struct Recorder {
    kind: AlgorithmKind,
    n: usize,
    w: CumulativeUtility,
    x: Vec<f64>,
    winners: Vec<Option<usize>>,
    w_path: Vec<f64>,
    beta_path: Option<Vec<f64>>,
    gaps: Option<Vec<f64>>,
}

impl Recorder {
    fn new(kind: AlgorithmKind, t: usize, n: usize, prices: bool) -> Self {
        let mut w_path = Vec::with_capacity((t + 1) * n);
        w_path.extend(std::iter::repeat(0.0).take(n));
        Self {
            kind,
            n,
            w: CumulativeUtility::zeros(n),
            x: Vec::with_capacity(t * n),
            winners: Vec::with_capacity(t),
            w_path,
            beta_path: prices.then(|| Vec::with_capacity(t * n)),
            gaps: prices.then(|| Vec::with_capacity(t)),
        }
    }

    fn integral(&mut self, v: &[f64], winner: Option<usize>) {
        let start = self.x.len();
        self.x.extend(std::iter::repeat(0.0).take(self.n));
        if let Some(i) = winner {
            self.x[start + i] = 1.0;
            self.w.add_to(i, v);
        }
        self.winners.push(winner);
        self.w_path.extend_from_slice(self.w.as_slice());
    }

    fn fractional(&mut self, v: &[f64], row: &[f64]) {
        self.x.extend_from_slice(row);
        self.w.add(v, row);
        let top = (0..self.n).filter(|&i| row[i] > 0.0).fold(None, |best: Option<usize>, i| match best {
            Some(b) if row[b] >= row[i] => Some(b),
            _ => Some(i),
        });
        self.winners.push(top);
        self.w_path.extend_from_slice(self.w.as_slice());
    }

    fn prices(&mut self, result: &SolveResult) {
        if let Some(b) = self.beta_path.as_mut() {
            b.extend_from_slice(&result.beta_star);
        }
        if let Some(g) = self.gaps.as_mut() {
            g.push(result.gap);
        }
    }

    fn finish(self) -> AllocationTrajectory {
        let t = self.winners.len();
        AllocationTrajectory {
            kind: self.kind,
            choices: AllocationPlan::from_flat_unchecked(self.x, self.n),
            winners: self.winners,
            final_u: self.w.averaged(t.max(1)),
            w_path: self.w_path,
            beta_path: self.beta_path,
            solve_gaps: self.gaps,
        }
    }
}

/// The greedy choice `argmax_i f(W + v_i e_i)` (lowest index on ties).
///
/// Returns `None` for an all-zero item. For `p < 0` (and `p = 0` when
/// `safeguard_p0` is set) an agent with `W_i = 0` and `v_i > 0` is served
/// first, lowest index. When some agent still has zero utility under
/// `p ≤ 0`, every choice has welfare zero; the tie is broken by the number
/// of zero-utility agents left and then by welfare over the others.
pub fn greedy_step(spec: &WelfareSpec, w: &[f64], v: &[f64], safeguard_p0: bool) -> Option<usize> {
    let n = spec.n();
    debug_assert_eq!(w.len(), n);
    debug_assert_eq!(v.len(), n);
    if v.iter().all(|&x| !(x > 0.0)) {
        return None;
    }
    let p = spec.p();
    let nash = spec.is_nash();
    if (p < 0.0 && !nash) || (nash && safeguard_p0) {
        if let Some(i) = (0..n).find(|&i| w[i] == 0.0 && v[i] > 0.0) {
            return Some(i);
        }
    }

    let b = spec.weights();
    if p > 0.0 && !nash {
        // f ordering equals the ordering of B_i ((W_i + v_i)^p − W_i^p) / p.
        let keys = (0..n).map(|i| {
            if v[i] <= 0.0 {
                0.0
            } else if w[i] == 0.0 {
                b[i] * v[i].powf(p) / p
            } else {
                b[i] * w[i].powf(p) * (p * (v[i] / w[i]).ln_1p()).exp_m1() / p
            }
        });
        return Some(first_max(keys));
    }

    // p ≤ 0: zero-utility agents make f vanish; rank choices by the zero
    // agents they leave, then by welfare restricted to the positive agents.
    let zeros = w.iter().filter(|&&x| x == 0.0).count();
    let fills = |i: usize| w[i] == 0.0 && v[i] > 0.0;
    if zeros > 0 && (0..n).any(fills) {
        let keys = (0..n).map(|i| {
            if fills(i) {
                let mut after = w.to_vec();
                after[i] += v[i];
                restricted_log_welfare(spec, &after)
            } else {
                f64::NEG_INFINITY
            }
        });
        return Some(first_max(keys));
    }
    let keys = (0..n).map(|i| {
        if v[i] <= 0.0 || w[i] == 0.0 {
            0.0
        } else {
            let growth = (v[i] / w[i]).ln_1p();
            if nash {
                b[i] * growth
            } else {
                // For p < 0, ΣB W^p falls as f rises; dividing by p flips it.
                b[i] * w[i].powf(p) * (p * growth).exp_m1() / p
            }
        }
    });
    Some(first_max(keys))
}

fn first_max(keys: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut top = f64::NEG_INFINITY;
    for (i, k) in keys.enumerate() {
        if k > top {
            top = k;
            best = i;
        }
    }
    best
}

/// `log f` over the agents with positive entries, weights renormalized.
fn restricted_log_welfare(spec: &WelfareSpec, u: &[f64]) -> f64 {
    let keep: Vec<usize> = (0..u.len()).filter(|&i| u[i] > 0.0).collect();
    if keep.is_empty() {
        return f64::NEG_INFINITY;
    }
    let sub: Vec<f64> = keep.iter().map(|&i| u[i]).collect();
    match spec.restrict(&keep) {
        Ok(s) => s.log_welfare_unchecked(&sub),
        Err(_) => f64::NEG_INFINITY,
    }
}

pub fn run_greedy(spec: &WelfareSpec, online: &ItemSequence, safeguard_p0: bool) -> Result<AllocationTrajectory> {
    check_shape(spec, online)?;
    let mut rec = Recorder::new(AlgorithmKind::Greedy, online.len(), spec.n(), false);
    for v in online.rows() {
        let choice = greedy_step(spec, rec.w.as_slice(), v, safeguard_p0);
        rec.integral(v, choice);
    }
    Ok(rec.finish())
}

/// Hybrid program of step `t`: current item first, then the forecast tail.
fn hybrid_items(v: &[f64], tail: ValueRows<'_>) -> Vec<f64> {
    let mut items = Vec::with_capacity(v.len() + tail.as_flat().len());
    items.extend_from_slice(v);
    items.extend_from_slice(tail.as_flat());
    items
}

/// One step of dual re-solving: solve the hybrid program on the current
/// item plus the forecast tail, then give the item to
/// `argmax_i β_i v_i` (lowest index; `None` for an all-zero item).
pub fn dual_resolve_step(
    spec: &WelfareSpec,
    w: &[f64],
    v: &[f64],
    tail: ValueRows<'_>,
    t_total: usize,
    options: SolverOptions,
    warm_start: Option<&[f64]>,
) -> Result<(Option<usize>, SolveResult)> {
    let items = hybrid_items(v, tail);
    let result = solve_hybrid(&SolveRequest {
        spec,
        past: w,
        items: ValueRows::new(&items, spec.n())?,
        t_total,
        options,
        warm_start,
    })?;
    Ok((price_winner(&result.beta_star, v), result))
}

/// Lowest-index maximizer of `β_i v_i` over agents with `v_i > 0`.
pub fn price_winner(beta: &[f64], v: &[f64]) -> Option<usize> {
    let mut best = None;
    let mut top = f64::NEG_INFINITY;
    for i in 0..v.len() {
        if v[i] > 0.0 && beta[i] * v[i] > top {
            top = beta[i] * v[i];
            best = Some(i);
        }
    }
    best
}

/// One step of primal re-solving: the same hybrid solve, returning the
/// optimal plan's row for the current item.
pub fn primal_resolve_step(
    spec: &WelfareSpec,
    w: &[f64],
    v: &[f64],
    tail: ValueRows<'_>,
    t_total: usize,
    options: SolverOptions,
    warm_start: Option<&[f64]>,
) -> Result<(Vec<f64>, SolveResult)> {
    let items = hybrid_items(v, tail);
    let result = solve_hybrid(&SolveRequest {
        spec,
        past: w,
        items: ValueRows::new(&items, spec.n())?,
        t_total,
        options,
        warm_start,
    })?;
    let row = result.plan.row(0).to_vec();
    Ok((row, result))
}

fn check_shape(spec: &WelfareSpec, seq: &ItemSequence) -> Result<()> {
    if seq.n() != spec.n() {
        return Err(Error::DimensionMismatch {
            expected: spec.n(),
            found: seq.n(),
        });
    }
    Ok(())
}

/// Runs one online algorithm over `online`. Re-solving kinds read their
/// forecast tail from `history`, which must have the same shape.
pub fn run_online(
    kind: AlgorithmKind,
    spec: &WelfareSpec,
    online: &ItemSequence,
    history: Option<&ItemSequence>,
    options: &OnlineOptions,
) -> Result<AllocationTrajectory> {
    check_shape(spec, online)?;
    let n = spec.n();
    let t_total = online.len();
    match kind {
        AlgorithmKind::Greedy => run_greedy(spec, online, options.safeguard_p0),
        AlgorithmKind::RoundRobin => {
            let mut rec = Recorder::new(kind, t_total, n, false);
            for (t, v) in online.rows().enumerate() {
                let i = t % n;
                rec.integral(v, (v[i] > 0.0).then_some(i));
            }
            Ok(rec.finish())
        }
        AlgorithmKind::UtilitarianGreedy => {
            let mut rec = Recorder::new(kind, t_total, n, false);
            for v in online.rows() {
                let choice = v.iter().any(|&x| x > 0.0).then(|| first_max(v.iter().cloned()));
                rec.integral(v, choice);
            }
            Ok(rec.finish())
        }
        AlgorithmKind::DualResolve | AlgorithmKind::PrimalResolve => {
            let history = history.ok_or_else(|| Error::InvalidParameter(format!("{kind} needs a history sequence")))?;
            if history.n() != n || history.len() != t_total {
                return Err(Error::InvalidParameter(format!(
                    "history is {}x{} but the online sequence is {t_total}x{n}",
                    history.len(),
                    history.n()
                )));
            }
            let mut rec = Recorder::new(kind, t_total, n, true);
            let mut warm: Option<Vec<f64>> = None;
            for (t, v) in online.rows().enumerate() {
                let tail = history.tail(t + 1);
                let w = rec.w.as_slice().to_vec();
                let start = if options.warm_start { warm.as_deref() } else { None };
                let result = if kind == AlgorithmKind::DualResolve {
                    let (choice, result) = dual_resolve_step(spec, &w, v, tail, t_total, options.solver, start)?;
                    rec.integral(v, choice);
                    result
                } else {
                    let (row, result) = primal_resolve_step(spec, &w, v, tail, t_total, options.solver, start)?;
                    rec.fractional(v, &row);
                    result
                };
                rec.prices(&result);
                warm = Some(result.beta_star);
            }
            Ok(rec.finish())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(rows: &[&[f64]], vbar: f64) -> ItemSequence {
        ItemSequence::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>(), vbar).unwrap()
    }

    #[test]
    fn greedy_step_examples() {
        let nash = WelfareSpec::symmetric(0.0, 2).unwrap();
        assert_eq!(greedy_step(&nash, &[1.0, 1.0], &[2.0, 1.0], true), Some(0));
        assert_eq!(greedy_step(&nash, &[0.0, 5.0], &[1.0, 1.0], true), Some(0));
        assert_eq!(greedy_step(&nash, &[1.0, 1.0], &[0.0, 0.0], true), None);
    }

    #[test]
    fn greedy_hand_instance() {
        let spec = WelfareSpec::symmetric(0.0, 2).unwrap();
        let s = seq(&[&[1.0, 0.0], &[0.0, 1.0], &[2.0, 1.0]], 2.0);
        let traj = run_greedy(&spec, &s, true).unwrap();
        assert_eq!(traj.winners, vec![Some(0), Some(1), Some(0)]);
        assert_eq!(traj.final_u, vec![1.0, 1.0 / 3.0]);
        assert_eq!(traj.w(0), &[0.0, 0.0]);
        assert_eq!(traj.w(3), &[3.0, 1.0]);
    }

    #[test]
    fn zero_ties_prefer_useful_agents() {
        // Agent 2 is stuck at zero and values nothing here; the item should
        // still go to whoever gains most among the others.
        let spec = WelfareSpec::symmetric(-1.0, 3).unwrap();
        assert_eq!(greedy_step(&spec, &[5.0, 1.0, 0.0], &[1.0, 1.0, 0.0], true), Some(1));
    }

    #[test]
    fn utilitarian_is_unfair() {
        let spec = WelfareSpec::symmetric(0.0, 2).unwrap();
        let s = seq(&[&[1.0, 0.9], &[1.0, 0.9]], 1.0);
        let traj = run_online(AlgorithmKind::UtilitarianGreedy, &spec, &s, None, &OnlineOptions::default()).unwrap();
        assert_eq!(traj.final_u, vec![1.0, 0.0]);
        assert_eq!(crate::welfare::eval_welfare(&spec, &traj.final_u).unwrap(), 0.0);
    }

    #[test]
    fn round_robin_matches_greedy_on_aligned_one_hot() {
        let spec = WelfareSpec::symmetric(-0.5, 3).unwrap();
        let s = seq(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]], 1.0);
        let rr = run_online(AlgorithmKind::RoundRobin, &spec, &s, None, &OnlineOptions::default()).unwrap();
        let gr = run_greedy(&spec, &s, true).unwrap();
        assert_eq!(rr.winners, gr.winners);
    }

    #[test]
    fn last_step_resolve_is_myopic() {
        let spec = WelfareSpec::symmetric(0.0, 2).unwrap();
        let (choice, result) =
            dual_resolve_step(&spec, &[1.0, 1.0], &[2.0, 1.0], ValueRows::empty(2), 3, SolverOptions::default(), None)
                .unwrap();
        assert!(result.certified);
        assert_eq!(choice, greedy_step(&spec, &[1.0, 1.0], &[2.0, 1.0], true));
    }

    #[test]
    fn resolve_needs_history() {
        let spec = WelfareSpec::symmetric(0.0, 2).unwrap();
        let s = seq(&[&[1.0, 0.5], &[0.5, 1.0]], 1.0);
        assert!(run_online(AlgorithmKind::DualResolve, &spec, &s, None, &OnlineOptions::default()).is_err());
    }
}
