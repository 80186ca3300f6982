//! Trust-region finish for programs with many rows.
//!
//! Inside the box `|ln β_i − ln c_i| ≤ ρ` around a center `c`, a row whose
//! top scaled value beats the runner-up by a log margin above `2ρ` keeps
//! its maximizer, so its max term is linear there. Folding those rows into
//! the past utility leaves a small program that agrees with the full dual
//! on the box. Its exact solution is the global optimum when it lands
//! inside the box; otherwise the center moves to the box boundary along the
//! segment toward it, which lowers the dual, and the box is rebuilt.

use super::newton::path_solve;
use super::{Outcome, Program, SolverOptions};

/// Programs with at most this many rows are solved directly.
pub(crate) const MIN_ROWS: usize = 96;
/// Most rows kept free in the local program, not counting tied rows.
const MAX_NEAR: usize = 64;
/// Rows whose top two scaled values differ by at most this log margin are
/// treated as tied: they always stay free and do not shrink the box.
const TIE_MARGIN: f64 = 1e-8;
/// Give up when more rows than this are tied.
const MAX_TIED: usize = 1024;
const RHO_START: f64 = 1e-2;
const RHO_MAX: f64 = 0.5;
const MAX_ROUNDS: usize = 40;

pub(crate) fn solve(program: &Program, options: &SolverOptions, beta0: &[f64]) -> Option<Outcome> {
    let n = program.n;
    let m = program.m();
    let mut center = beta0.to_vec();
    let mut rho = RHO_START;
    let mut iters = 0;
    let mut top = vec![0usize; m];
    let mut margin = vec![0.0; m];
    for _ in 0..MAX_ROUNDS {
        for (t, v) in program.rows.chunks_exact(n).enumerate() {
            let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for i in 0..n {
                let s = (center[i] * v[i]).ln();
                if s > first {
                    second = first;
                    first = s;
                    top[t] = i;
                } else if s > second {
                    second = s;
                }
            }
            margin[t] = first - second;
        }
        let mut loose: Vec<f64> = margin.iter().copied().filter(|&g| g > TIE_MARGIN).collect();
        if m - loose.len() > MAX_TIED {
            return None;
        }
        if loose.len() > MAX_NEAR {
            loose.select_nth_unstable_by(MAX_NEAR, f64::total_cmp);
            rho = rho.min(0.5 * loose[MAX_NEAR] * (1.0 - 1e-9));
        }
        if !(rho > TIE_MARGIN) {
            return None;
        }

        let mut past = program.past.clone();
        let mut rows = Vec::new();
        let mut near = Vec::new();
        for (t, v) in program.rows.chunks_exact(n).enumerate() {
            if margin[t] > 2.0 * rho {
                past[top[t]] += v[top[t]];
            } else {
                near.push(t);
                rows.extend_from_slice(v);
            }
        }
        let sub = Program {
            spec: program.spec.clone(),
            past,
            rows,
            n,
            t_total: program.t_total,
            vbar: program.vbar,
        };
        let (out, _) = path_solve(&sub, options, Some(&center), None);
        iters += out.iters;
        if !out.cert.certified(options.tol) {
            return None;
        }
        let beta = &out.cert.beta;
        let dev = beta.iter().zip(&center).fold(0.0, |a: f64, (b, c)| a.max((b / c).ln().abs()));
        if dev <= rho {
            let mut x = vec![0.0; m * n];
            for (t, xr) in x.chunks_exact_mut(n).enumerate() {
                xr[top[t]] = 1.0;
            }
            for (k, &t) in near.iter().enumerate() {
                x[t * n..(t + 1) * n].copy_from_slice(&out.x[k * n..(k + 1) * n]);
            }
            let cert = program.certificate(&x);
            return Some(Outcome { x, cert, iters });
        }
        // Largest step along the segment that stays in the box.
        let mut alpha: f64 = 1.0;
        for (b, c) in beta.iter().zip(&center) {
            if b > c {
                alpha = alpha.min(c * (rho.exp() - 1.0) / (b - c));
            } else if b < c {
                alpha = alpha.min(c * (1.0 - (-rho).exp()) / (c - b));
            }
        }
        for (c, b) in center.iter_mut().zip(beta) {
            *c += alpha * (b - *c);
        }
        rho = (2.0 * rho).min(RHO_MAX);
    }
    None
}
