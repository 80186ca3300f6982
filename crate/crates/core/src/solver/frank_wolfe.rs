//! Conditional gradient on the utility polytope.
//!
//! At iterate `u` with `g = ∇log f(u)`, the linear oracle gives every item to
//! `argmax_i g_i v_τi`. The step toward that vertex uses an exact line search
//! (bisection on the directional derivative, which is monotone because
//! `log f` is concave). The plan is the running convex combination of the
//! visited vertices. `⟨g, s − u⟩` is the duality gap at `β = g`.

use super::{argmax_scaled, initial_plan, Outcome, Program, SolverOptions};

const BISECTION_STEPS: usize = 60;

pub(crate) fn solve(program: &Program, options: &SolverOptions) -> Outcome {
    let n = program.n;
    let m = program.m();
    let mut x = initial_plan(program);
    let mut u = program.utilities(&x);
    let mut g = vec![0.0; n];
    let mut iters = 0;
    if m > 0 {
        let mut vertex = vec![0usize; m];
        let mut s = vec![0.0; n];
        while iters < options.max_iters {
            program.spec.grad_log_unchecked(&u, &mut g);
            s.copy_from_slice(&program.past);
            for (t, v) in program.rows.chunks_exact(n).enumerate() {
                let (best, _) = argmax_scaled(&g, v);
                vertex[t] = best;
                s[best] += v[best];
            }
            for si in s.iter_mut() {
                *si /= program.t_total;
            }
            let d: Vec<f64> = s.iter().zip(&u).map(|(s, u)| s - u).collect();
            let fw_gap: f64 = g.iter().zip(&d).map(|(g, d)| g * d).sum();
            let primal = program.spec.log_welfare_unchecked(&u);
            if fw_gap <= options.tol * primal.abs().max(1.0) {
                break;
            }
            iters += 1;
            let gamma = line_search(program, &u, &d);
            if gamma <= 0.0 {
                break;
            }
            for (t, xr) in x.chunks_exact_mut(n).enumerate() {
                for xi in xr.iter_mut() {
                    *xi *= 1.0 - gamma;
                }
                xr[vertex[t]] += gamma;
            }
            for (ui, di) in u.iter_mut().zip(&d) {
                *ui += gamma * di;
            }
        }
        // Drop round-off mass so the plan stays in the capped simplex.
        for xr in x.chunks_exact_mut(n) {
            let total: f64 = xr.iter().sum();
            if total > 1.0 {
                for xi in xr.iter_mut() {
                    *xi /= total;
                }
            }
        }
    }
    let cert = program.polish(&mut x);
    Outcome { x, cert, iters }
}

/// Maximizes `log f(u + γ d)` over `γ ∈ [0, 1]`.
fn line_search(program: &Program, u: &[f64], d: &[f64]) -> f64 {
    let n = program.n;
    let mut point = vec![0.0; n];
    let mut grad = vec![0.0; n];
    let mut slope = |gamma: f64| -> f64 {
        for i in 0..n {
            point[i] = u[i] + gamma * d[i];
        }
        if point.iter().any(|&p| p <= 0.0) {
            // Leaving the positive orthant only happens at γ = 1 with a
            // vertex that starves some agent; log f falls to −∞ there.
            return f64::NEG_INFINITY;
        }
        program.spec.grad_log_unchecked(&point, &mut grad);
        grad.iter().zip(d).map(|(g, d)| g * d).sum()
    };
    if slope(1.0) >= 0.0 {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if slope(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}
