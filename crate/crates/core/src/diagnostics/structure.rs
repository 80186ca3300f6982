//! Checks on the offline program: monotonicity and stability under dropped
//! items, the safe-volume bound, and sensitivity of the optimum to a
//! coupled reference sequence.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{gap_slack, lemma, utility_error, LemmaCheckRecord};
use crate::arrivals::measure_l1_discrepancy;
use crate::error::{Error, Result};
use crate::instance::{check_general_position, ItemSequence};
use crate::solver::{solve_hindsight, solve_hybrid, SolveRequest, SolverOptions};
use crate::welfare::{smoothness_constants, WelfareSpec};

/// Drops `k` random items `trials` times and compares the optima.
///
/// The reduced program keeps the divisor `T` of the full one. Each trial
/// yields a monotonicity record (largest increase of any `u*_i`, which must
/// be nonpositive) and a stability record for the agent closest to its
/// bound `|Δu*_i| ≤ (K v̄ / T) · max_j β*_j / β*_i`, with `β*` from the full
/// instance. Stability needs general position; without it those records
/// are skipped. Slack is the utility error implied by the two certified
/// gaps (see [`utility_error`]).
pub fn check_stability<R: Rng + ?Sized>(
    spec: &WelfareSpec,
    seq: &ItemSequence,
    k: usize,
    trials: usize,
    rng: &mut R,
    options: SolverOptions,
) -> Result<Vec<LemmaCheckRecord>> {
    let t_total = seq.len();
    if k == 0 || k > t_total {
        return Err(Error::InvalidParameter(format!("drop count must be in 1..={t_total}, got {k}")));
    }
    let vbar = seq.vbar();
    let n = spec.n();
    let full = solve_hindsight(spec, seq, options)?;
    let general = check_general_position(seq, 0.0);
    let beta_max = full.beta_max();
    let zeros = vec![0.0; n];
    let mut records = Vec::with_capacity(2 * trials);
    for trial in 0..trials {
        let dropped = sample(rng, t_total, k).into_vec();
        let mut keep = vec![true; t_total];
        for d in &dropped {
            keep[*d] = false;
        }
        let reduced = seq.filter_rows(|t| keep[t]);
        let case = format!("trial={trial} k={k}");
        let small = match solve_hybrid(&SolveRequest {
            spec,
            past: &zeros,
            items: reduced.view(),
            t_total,
            options,
            warm_start: None,
        }) {
            Ok(r) => r,
            Err(_) => {
                // Some agent lost every valued item: outside the lemma.
                records.push(LemmaCheckRecord::skipped(lemma::MONOTONICITY, case.clone(), f64::NAN, 0.0));
                records.push(LemmaCheckRecord::skipped(lemma::STABILITY, case, f64::NAN, f64::NAN));
                continue;
            }
        };
        let slack = utility_error(spec, full.gap, vbar) + utility_error(spec, small.gap, vbar);

        let (worst, rise) = (0..n)
            .map(|i| (i, small.u_star[i] - full.u_star[i]))
            .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
        records.push(LemmaCheckRecord::checked(
            lemma::MONOTONICITY,
            format!("{case} agent={worst}"),
            rise,
            0.0,
            slack,
        ));

        let scale = k as f64 * vbar / t_total as f64;
        let mut pick: Option<(usize, f64, f64)> = None;
        for i in 0..n {
            let lhs = (full.u_star[i] - small.u_star[i]).abs();
            let rhs = scale * beta_max / full.beta_star[i];
            let rhs = if rhs.is_nan() { f64::INFINITY } else { rhs };
            if pick.map_or(true, |(_, l, r)| rhs - lhs < r - l) {
                pick = Some((i, lhs, rhs));
            }
        }
        if let Some((i, lhs, rhs)) = pick {
            let case = format!("{case} agent={i}");
            records.push(if general {
                LemmaCheckRecord::checked(lemma::STABILITY, case, lhs, rhs, slack)
            } else {
                LemmaCheckRecord::skipped(lemma::STABILITY, case, lhs, rhs)
            });
        }
    }
    Ok(records)
}

/// Monte Carlo check of the safe-volume bound for prices `beta`.
///
/// A uniform draw `v ∈ [0, v̄]^n` counts as safe when the top two of
/// `β_i v_i` differ by more than `2 v̄ ι`, which rules out any winner change
/// under an `ι`-perturbation of `β`. The certified fraction must reach
/// `1 − 2nι/β̲` minus four binomial standard deviations at `p = ½`. A
/// nonpositive bound is vacuous and the record is skipped.
pub fn check_safe_volume<R: Rng + ?Sized>(
    beta: &[f64],
    iota: f64,
    vbar: f64,
    samples: usize,
    rng: &mut R,
) -> Result<LemmaCheckRecord> {
    let n = beta.len();
    if n == 0 || beta.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
        return Err(Error::InvalidParameter("safe volume needs finite positive prices".into()));
    }
    if !(iota > 0.0) || !(vbar > 0.0) || samples == 0 {
        return Err(Error::InvalidParameter(format!(
            "safe volume needs iota > 0, vbar > 0 and samples > 0 (iota={iota}, vbar={vbar}, samples={samples})"
        )));
    }
    let beta_min = beta.iter().cloned().fold(f64::INFINITY, f64::min);
    let bound = 1.0 - 2.0 * n as f64 * iota / beta_min;
    let lhs = bound - 4.0 * (0.25 / samples as f64).sqrt();
    let case = format!("n={n} iota={iota} samples={samples}");
    if bound <= 0.0 {
        return Ok(LemmaCheckRecord::skipped(lemma::SAFE_VOLUME, case, lhs, f64::NAN));
    }
    let threshold = 2.0 * vbar * iota;
    let mut safe = 0usize;
    for _ in 0..samples {
        let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for b in beta {
            let s = b * vbar * rng.random::<f64>();
            if s > first {
                second = first;
                first = s;
            } else if s > second {
                second = s;
            }
        }
        if first - second > threshold {
            safe += 1;
        }
    }
    let fraction = safe as f64 / samples as f64;
    Ok(LemmaCheckRecord::checked(lemma::SAFE_VOLUME, case, lhs, fraction, 0.0))
}

/// Box assumed to contain the hindsight optima, `[u_lo, u_hi]^n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivityBox {
    pub u_lo: f64,
    pub u_hi: f64,
}

/// `P*(a) − P*(b) ≤ L′ δ` with `δ` the mean per-step ℓ1 distance and `L′`
/// the ℓ1-Lipschitz constant of `log f` on
/// `[u_lo − δ, min(v̄, u_hi + δ)]^n`.
///
/// The premise is `δ < u_lo` and both optima inside the box.
pub fn check_r3_sensitivity(
    spec: &WelfareSpec,
    seq_a: &ItemSequence,
    seq_b: &ItemSequence,
    bounds: SensitivityBox,
    options: SolverOptions,
) -> Result<LemmaCheckRecord> {
    let delta = measure_l1_discrepancy(seq_a, seq_b)?.delta_avg;
    let vbar = seq_a.vbar().max(seq_b.vbar());
    let a = solve_hindsight(spec, seq_a, options)?;
    let b = solve_hindsight(spec, seq_b, options)?;
    let lhs = a.primal - b.primal;
    let case = format!("delta={delta}");
    let inside = |u: &[f64]| u.iter().all(|&x| x >= bounds.u_lo && x <= bounds.u_hi);
    if !(delta < bounds.u_lo) || !inside(&a.u_star) || !inside(&b.u_star) {
        return Ok(LemmaCheckRecord::skipped(lemma::R3_SENSITIVITY, case, lhs, f64::NAN));
    }
    let lip1 = if delta > 0.0 {
        smoothness_constants(spec, bounds.u_lo - delta, vbar.min(bounds.u_hi + delta).max(bounds.u_lo))?.lip1
    } else {
        0.0
    };
    Ok(LemmaCheckRecord::checked(
        lemma::R3_SENSITIVITY,
        case,
        lhs,
        lip1 * delta,
        gap_slack(&[a.gap, b.gap]),
    ))
}
