//! Damped Newton on the entropy-smoothed dual.
//!
//! The nonsmooth term `max_i β_i v_τi` of the dual is replaced by
//! `μ · log Σ_i exp(β_i v_τi / μ)`, which overestimates it by at most
//! `μ ln n`. The smoothed dual
//!
//! ```text
//! F_μ(β) = (⟨β, W⟩ + Σ_τ μ LSE(β ⊙ v_τ / μ)) / T + ψ(β)
//! ```
//!
//! is smooth and strictly convex on `β > 0`. Its minimizer is tracked while
//! `μ` shrinks geometrically. The softmax weights at the current `β` form a
//! feasible plan; after every stage that plan is polished and certified by
//! [`Program::polish`], and the loop ends as soon as the certificate meets
//! the tolerance.

use nalgebra::{DMatrix, DVector};

use super::crossover::crossover;
use super::{initial_plan, Certificate, Outcome, Program, SolverOptions};

/// Initial smoothing relative to the typical row maximum `β_i v_τi`.
const MU_COLD: f64 = 0.1;
const MU_WARM: f64 = 1e-3;
/// Where a cold solve of a large program hands over to the local finish.
const MU_COARSE: f64 = 1e-3;
/// Smoothing shrink factor between stages.
const MU_SHRINK: f64 = 0.1;
/// Smallest smoothing tried, relative to the typical row maximum.
const MU_FLOOR: f64 = 1e-15;
/// Inner iterations stop once the utility residual `‖∇F_μ‖∞` is below this
/// fraction of the largest utility.
const GRAD_TOL: f64 = 1e-12;
/// Entries more than this many `μ` below their row maximum get zero weight.
const PRUNE: f64 = 40.0;
const MAX_INNER: usize = 100;
/// Relative gap below which the exact finish is attempted.
const CROSSOVER_GAP: f64 = 1e-3;
const LINE_STEPS: usize = 30;
/// Inner iterations without halving the residual before giving up on a stage.
const STALL: usize = 4;

pub(crate) fn solve(program: &Program, options: &SolverOptions, warm: Option<&[f64]>) -> Outcome {
    if program.m() <= super::local::MIN_ROWS {
        return path_solve(program, options, warm, None).0;
    }
    let (beta, spent) = match warm {
        Some(w) => (w.to_vec(), 0),
        None => {
            let (out, beta) = path_solve(program, options, None, Some(MU_COARSE));
            if out.cert.certified(options.tol) {
                return out;
            }
            (beta, out.iters)
        }
    };
    match super::local::solve(program, options, &beta) {
        Some(mut out) if out.cert.certified(options.tol) => {
            out.iters += spent;
            out
        }
        _ => {
            let mut out = path_solve(program, options, Some(&beta), None).0;
            out.iters += spent;
            out
        }
    }
}

/// Follows the smoothing path from `warm` (or the initial plan) until the
/// certificate meets the tolerance, or until `μ` falls below `stop` times
/// the value scale. Returns the best plan found and the last `β`.
pub(crate) fn path_solve(
    program: &Program,
    options: &SolverOptions,
    warm: Option<&[f64]>,
    stop: Option<f64>,
) -> (Outcome, Vec<f64>) {
    let n = program.n;
    let m = program.m();
    let x0 = initial_plan(program);
    let start = program.certificate(&x0);
    if m == 0 {
        let beta = start.beta.clone();
        let out = Outcome {
            x: x0,
            cert: start,
            iters: 0,
        };
        return (out, beta);
    }

    let mut beta = match warm {
        Some(w) => w.to_vec(),
        None => start.beta.clone(),
    };
    let mut best = (x0, start);
    let scale = {
        let total: f64 = program
            .rows
            .chunks_exact(n)
            .map(|v| crate::welfare::max_scaled(&beta, v))
            .sum();
        (total / m as f64).max(f64::MIN_POSITIVE)
    };
    let mut mu = scale * if warm.is_some() { MU_WARM } else { MU_COLD };
    let mut iters = 0;
    let mut work = Workspace::new(n);
    loop {
        let mut ev = evaluate(program, &beta, mu, &mut work);
        let mut best_norm = inf_norm(&ev.grad);
        let mut stalled = 0;
        for _ in 0..MAX_INNER {
            if inf_norm(&ev.grad) <= ev.gtol || iters >= options.max_iters || stalled >= STALL {
                break;
            }
            iters += 1;
            let d = newton_direction(&ev, n);
            // Keep β positive: never shrink a coordinate by more than half.
            let mut alpha: f64 = 1.0;
            for (b, di) in beta.iter().zip(&d) {
                if *di < 0.0 {
                    alpha = alpha.min(0.5 * b / -di);
                }
            }
            let Some((next, nev)) = line_search(program, &beta, &d, alpha, mu, &mut work) else {
                break;
            };
            beta = next;
            ev = nev;
            let norm = inf_norm(&ev.grad);
            if norm < 0.5 * best_norm {
                best_norm = norm;
                stalled = 0;
            } else {
                best_norm = best_norm.min(norm);
                stalled += 1;
            }
        }

        let mut x = smoothed_plan(program, &beta, mu);
        let smoothed = x.clone();
        let cert = program.polish(&mut x);
        if better(&cert, &best.1) {
            best = (x, cert);
        }
        if !best.1.certified(options.tol) && best.1.relative_gap() <= CROSSOVER_GAP {
            if let Some((x, cert)) = crossover(program, &smoothed, &beta) {
                if better(&cert, &best.1) {
                    best = (x, cert);
                }
            }
        }
        if best.1.certified(options.tol) || iters >= options.max_iters || mu <= scale * stop.unwrap_or(MU_FLOOR) {
            break;
        }
        mu *= MU_SHRINK;
    }

    let out = Outcome {
        x: best.0,
        cert: best.1,
        iters,
    };
    (out, beta)
}

/// Prefers KKT-consistent certificates, then smaller gaps.
fn better(a: &Certificate, b: &Certificate) -> bool {
    let ok = |c: &Certificate| c.kkt_ok && c.gap().is_finite();
    match (ok(a), ok(b)) {
        (true, false) => true,
        (false, true) => false,
        _ => a.gap() < b.gap(),
    }
}

struct Workspace {
    shares: Vec<f64>,
    e: Vec<f64>,
}

impl Workspace {
    fn new(n: usize) -> Self {
        Self {
            shares: vec![0.0; n],
            e: vec![0.0; n],
        }
    }
}

struct Eval {
    grad: Vec<f64>,
    hess: Vec<f64>,
    /// Gradient tolerance: a small multiple of the utility scale.
    gtol: f64,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

/// Backtracks along `d` until the directional derivative is no longer
/// positive. For a convex function that guarantees descent, and unlike
/// function values the derivative stays accurate near the minimizer.
fn line_search(
    program: &Program,
    beta: &[f64],
    d: &[f64],
    alpha_max: f64,
    mu: f64,
    work: &mut Workspace,
) -> Option<(Vec<f64>, Eval)> {
    let mut alpha = alpha_max;
    for _ in 0..LINE_STEPS {
        let trial: Vec<f64> = beta.iter().zip(d).map(|(b, di)| b + alpha * di).collect();
        let ev = evaluate(program, &trial, mu, work);
        let slope: f64 = ev.grad.iter().zip(d).map(|(g, d)| g * d).sum();
        if slope <= 0.0 {
            return Some((trial, ev));
        }
        alpha *= 0.5;
    }
    None
}

fn evaluate(program: &Program, beta: &[f64], mu: f64, work: &mut Workspace) -> Eval {
    let n = program.n;
    let inv_t = 1.0 / program.t_total;
    let cut = PRUNE * mu;
    let mut grad = program.past.clone();
    let mut hess = vec![0.0; n * n];
    let hscale = inv_t / mu;
    for v in program.rows.chunks_exact(n) {
        let mut mx = f64::NEG_INFINITY;
        for i in 0..n {
            mx = mx.max(beta[i] * v[i]);
        }
        let mut se = 0.0;
        let mut live = 0;
        for i in 0..n {
            let gap = mx - beta[i] * v[i];
            work.e[i] = if gap <= cut {
                live += 1;
                (-gap / mu).exp()
            } else {
                0.0
            };
            se += work.e[i];
        }
        if live == 1 {
            for i in 0..n {
                if work.e[i] > 0.0 {
                    grad[i] += v[i];
                }
            }
            continue;
        }
        for i in 0..n {
            let s = work.e[i] / se;
            work.e[i] = v[i] * s;
            grad[i] += work.e[i];
        }
        for i in 0..n {
            let a = work.e[i];
            if a == 0.0 {
                continue;
            }
            hess[i * n + i] += hscale * v[i] * a;
            for j in 0..n {
                hess[i * n + j] -= hscale * a * work.e[j];
            }
        }
    }
    program.spec.conjugate_shares(beta, &mut work.shares);
    for i in 0..n {
        grad[i] = grad[i] * inv_t - work.shares[i] / beta[i];
    }
    program.spec.add_conjugate_hessian(beta, &work.shares, &mut hess);
    let u_scale = work.shares.iter().zip(beta).fold(0.0, |a: f64, (w, b)| a.max(w / b));
    Eval {
        grad,
        hess,
        gtol: GRAD_TOL * u_scale,
    }
}

fn newton_direction(ev: &Eval, n: usize) -> Vec<f64> {
    let g = DVector::from_column_slice(&ev.grad);
    let mut h = DMatrix::from_row_slice(n, n, &ev.hess);
    let mut ridge = 0.0;
    for _ in 0..8 {
        if let Some(chol) = h.clone().cholesky() {
            return (-chol.solve(&g)).as_slice().to_vec();
        }
        let diag_max = (0..n).map(|i| h[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
        ridge = if ridge == 0.0 { 1e-12 * diag_max } else { ridge * 100.0 };
        for i in 0..n {
            h[(i, i)] += ridge;
        }
    }
    // Gradient step as a last resort.
    ev.grad.iter().map(|g| -g).collect()
}

/// Softmax plan at `(β, μ)`, negligible weights dropped.
fn smoothed_plan(program: &Program, beta: &[f64], mu: f64) -> Vec<f64> {
    let n = program.n;
    let cut = PRUNE * mu;
    let mut x = vec![0.0; program.rows.len()];
    for (v, xr) in program.rows.chunks_exact(n).zip(x.chunks_exact_mut(n)) {
        let mx = (0..n).map(|i| beta[i] * v[i]).fold(f64::NEG_INFINITY, f64::max);
        let mut se = 0.0;
        for i in 0..n {
            let gap = mx - beta[i] * v[i];
            if gap <= cut && v[i] > 0.0 {
                xr[i] = (-gap / mu).exp();
                se += xr[i];
            }
        }
        for xi in xr.iter_mut() {
            *xi /= se;
        }
    }
    x
}
