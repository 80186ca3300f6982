//! CES (generalized-mean) welfare and the calculus of its logarithm.
//!
//! For exponent `p < 1` and weights `B` summing to one,
//! `f(u) = (Σ B_i u_i^p)^(1/p)` for `p != 0` and `f(u) = Π u_i^B_i` for `p = 0`.
//! Everything here works with `log f`, evaluated through log-sum-exp so the
//! `p -> 0` limit is continuous. Exponents with `|p| < 1e-9` are treated as
//! exactly zero.

use crate::error::{Error, Result};

/// Exponents closer to zero than this are treated as the Nash (`p = 0`) case.
pub const P_ZERO_BAND: f64 = 1e-9;

/// Points per axis of the grid used by [`smoothness_constants`].
pub const SMOOTHNESS_GRID: usize = 17;

/// Multiplier applied to grid maxima in [`smoothness_constants`].
pub const SMOOTHNESS_MARGIN: f64 = 1.1;

/// The CES objective: exponent `p` and normalized positive weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WelfareSpec {
    p: f64,
    weights: Vec<f64>,
    log_weights: Vec<f64>,
}

impl WelfareSpec {
    /// Builds a spec, rescaling the weights to sum to one.
    pub fn new(p: f64, weights: Vec<f64>) -> Result<Self> {
        if !p.is_finite() || p >= 1.0 {
            return Err(Error::InvalidParameter(format!(
                "welfare exponent p must be finite and < 1, got {p}"
            )));
        }
        if weights.is_empty() {
            return Err(Error::InvalidParameter("at least one agent is required".into()));
        }
        for (index, &value) in weights.iter().enumerate() {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::NonPositive {
                    what: "weights",
                    index,
                    value,
                });
            }
        }
        let total: f64 = weights.iter().sum();
        let weights: Vec<f64> = weights.iter().map(|b| b / total).collect();
        let log_weights = weights.iter().map(|b| b.ln()).collect();
        let p = if p.abs() < P_ZERO_BAND { 0.0 } else { p };
        Ok(Self {
            p,
            weights,
            log_weights,
        })
    }

    /// Equal weights `1/n`: the generalized p-mean.
    pub fn symmetric(p: f64, n: usize) -> Result<Self> {
        Self::new(p, vec![1.0; n])
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn n(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    /// True in the Nash case.
    pub fn is_nash(&self) -> bool {
        self.p == 0.0
    }

    pub fn is_symmetric(&self) -> bool {
        let b0 = self.weights[0];
        self.weights.iter().all(|&b| (b - b0).abs() <= 1e-15 * b0.max(1.0))
    }

    /// Restriction to a subset of agents, weights renormalized.
    pub fn restrict(&self, agents: &[usize]) -> Result<Self> {
        Self::new(self.p, agents.iter().map(|&i| self.weights[i]).collect())
    }

    fn check_dim(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                found: v.len(),
            });
        }
        Ok(())
    }

    fn check_nonneg(&self, u: &[f64]) -> Result<()> {
        self.check_dim(u)?;
        for (index, &value) in u.iter().enumerate() {
            if !(value >= 0.0) {
                return Err(Error::NegativeEntry { index, value });
            }
        }
        Ok(())
    }

    fn check_positive(&self, what: &'static str, v: &[f64]) -> Result<()> {
        self.check_dim(v)?;
        for (index, &value) in v.iter().enumerate() {
            if !(value > 0.0) {
                return Err(Error::NonPositive { what, index, value });
            }
        }
        Ok(())
    }

    /// `log f(u)` without validation. `u` must be nonnegative with length `n`.
    pub fn log_welfare_unchecked(&self, u: &[f64]) -> f64 {
        if self.p == 0.0 {
            let mut acc = 0.0;
            for (b, &x) in self.weights.iter().zip(u) {
                if x <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                acc += b * x.ln();
            }
            acc
        } else if self.p < 0.0 && u.iter().any(|&x| x <= 0.0) {
            f64::NEG_INFINITY
        } else {
            let p = self.p;
            let lse = log_sum_exp(
                self.log_weights
                    .iter()
                    .zip(u)
                    .map(|(lb, &x)| if x > 0.0 { lb + p * x.ln() } else { f64::NEG_INFINITY }),
            );
            lse / p
        }
    }

    /// Softmax weights `w_i ∝ B_i u_i^p`, the shares of `∇log f` in `⟨∇log f, u⟩ = 1`.
    /// `u` must be strictly positive.
    pub fn gradient_shares(&self, u: &[f64], out: &mut [f64]) {
        if self.p == 0.0 {
            out.copy_from_slice(&self.weights);
            return;
        }
        let p = self.p;
        for ((o, lb), &x) in out.iter_mut().zip(&self.log_weights).zip(u) {
            *o = lb + p * x.ln();
        }
        softmax_in_place(out);
    }

    /// `∇log f(u)` without validation. `u` must be strictly positive.
    pub fn grad_log_unchecked(&self, u: &[f64], out: &mut [f64]) {
        self.gradient_shares(u, out);
        for (g, &x) in out.iter_mut().zip(u) {
            *g /= x;
        }
    }

    /// Hessian of `log f` at a strictly positive `u`, row-major `n × n`.
    pub fn hessian_log(&self, u: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut w = vec![0.0; n];
        self.gradient_shares(u, &mut w);
        let g: Vec<f64> = w.iter().zip(u).map(|(w, x)| w / x).collect();
        let p = self.p;
        let mut h = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut v = -p * g[i] * g[j];
                if i == j {
                    v += (p - 1.0) * w[i] / (u[i] * u[i]);
                }
                h[i * n + j] = v;
            }
        }
        h
    }

    /// The conjugate `ψ(β) = max_{u ≥ 0} log f(u) − ⟨β, u⟩` without validation.
    pub fn conjugate_unchecked(&self, beta: &[f64]) -> f64 {
        if self.p == 0.0 {
            self.weights
                .iter()
                .zip(&self.log_weights)
                .zip(beta)
                .map(|((b, lb), bt)| b * (lb - bt.ln()))
                .sum::<f64>()
                - 1.0
        } else {
            -1.0 - self.log_dual_mean(beta)
        }
    }

    /// `log m(β)` with `m(β) = (Σ c_i β_i^q)^(1/q)`, `c_i = B_i^(1/(1−p))`, `q = p/(p−1)`.
    fn log_dual_mean(&self, beta: &[f64]) -> f64 {
        let p = self.p;
        let q = p / (p - 1.0);
        let lse = log_sum_exp(
            self.log_weights
                .iter()
                .zip(beta)
                .map(|(lb, bt)| lb / (1.0 - p) + q * bt.ln()),
        );
        lse / q
    }

    /// Shares `ω` of the conjugate maximizer, `u_ψ(β)_i = ω_i / β_i`.
    pub fn conjugate_shares(&self, beta: &[f64], out: &mut [f64]) {
        if self.p == 0.0 {
            out.copy_from_slice(&self.weights);
            return;
        }
        let p = self.p;
        let q = p / (p - 1.0);
        for ((o, lb), bt) in out.iter_mut().zip(&self.log_weights).zip(beta) {
            *o = lb / (1.0 - p) + q * bt.ln();
        }
        softmax_in_place(out);
    }

    /// The maximizer of `log f(u) − ⟨β, u⟩`, which is `−∇ψ(β)`.
    pub fn conjugate_argmax(&self, beta: &[f64]) -> Result<Vec<f64>> {
        self.check_positive("beta", beta)?;
        let mut out = vec![0.0; self.n()];
        self.conjugate_shares(beta, &mut out);
        for (o, b) in out.iter_mut().zip(beta) {
            *o /= b;
        }
        Ok(out)
    }

    /// Hessian of the conjugate `ψ` at `β`, row-major `n × n`, added into `out`.
    pub(crate) fn add_conjugate_hessian(&self, beta: &[f64], shares: &[f64], out: &mut [f64]) {
        let n = self.n();
        let p = self.p;
        let q = if p == 0.0 { 0.0 } else { p / (p - 1.0) };
        for i in 0..n {
            let ai = shares[i] / beta[i];
            out[i * n + i] += (1.0 - q) * ai / beta[i];
            if q != 0.0 {
                for j in 0..n {
                    out[i * n + j] += q * ai * shares[j] / beta[j];
                }
            }
        }
    }
}

/// `f(u)`; zero when `p ≤ 0` and some `u_i = 0`.
pub fn eval_welfare(spec: &WelfareSpec, u: &[f64]) -> Result<f64> {
    spec.check_nonneg(u)?;
    Ok(spec.log_welfare_unchecked(u).exp())
}

/// `log f(u)`; `−∞` when the welfare is zero.
pub fn eval_log_welfare(spec: &WelfareSpec, u: &[f64]) -> Result<f64> {
    spec.check_nonneg(u)?;
    Ok(spec.log_welfare_unchecked(u))
}

/// `∇log f(u)` at a strictly positive `u`. Satisfies `⟨∇log f(u), u⟩ = 1`.
pub fn grad_log_welfare(spec: &WelfareSpec, u: &[f64]) -> Result<Vec<f64>> {
    spec.check_positive("u", u)?;
    let mut out = vec![0.0; spec.n()];
    spec.grad_log_unchecked(u, &mut out);
    Ok(out)
}

/// `max_{u ≥ 0} log f(u) − ⟨β, u⟩` in closed form.
pub fn conjugate(spec: &WelfareSpec, beta: &[f64]) -> Result<f64> {
    spec.check_positive("beta", beta)?;
    Ok(spec.conjugate_unchecked(beta))
}

/// Dual objective of the hybrid program with past utility `past` (absolute
/// units), remaining `items` (row-major, `n` columns) and divisor `t_total`:
/// `(⟨β, W⟩ + Σ_τ max_i β_i v_τi) / T + ψ(β)`.
pub fn dual_objective(
    spec: &WelfareSpec,
    beta: &[f64],
    past: &[f64],
    items: &[f64],
    t_total: usize,
) -> Result<f64> {
    spec.check_positive("beta", beta)?;
    spec.check_nonneg(past)?;
    let n = spec.n();
    if items.len() % n != 0 {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: items.len() % n,
        });
    }
    let rows = items.len() / n;
    if t_total == 0 || t_total < rows {
        return Err(Error::InvalidParameter(format!(
            "t_total ({t_total}) must be positive and at least the number of items ({rows})"
        )));
    }
    Ok(dual_objective_unchecked(spec, beta, past, items, t_total as f64))
}

pub(crate) fn dual_objective_unchecked(
    spec: &WelfareSpec,
    beta: &[f64],
    past: &[f64],
    items: &[f64],
    t_total: f64,
) -> f64 {
    let mut linear: f64 = beta.iter().zip(past).map(|(b, w)| b * w).sum();
    for row in items.chunks_exact(spec.n()) {
        linear += max_scaled(beta, row);
    }
    linear / t_total + spec.conjugate_unchecked(beta)
}

/// `max_i β_i v_i`, ignoring agents with zero value.
pub(crate) fn max_scaled(beta: &[f64], row: &[f64]) -> f64 {
    let mut best = 0.0;
    for (b, v) in beta.iter().zip(row) {
        if *v > 0.0 {
            let s = b * v;
            if s > best {
                best = s;
            }
        }
    }
    best
}

/// Box-restricted regularity constants of `log f` on `[lo, hi]^n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothnessBox {
    pub lo: f64,
    pub hi: f64,
    /// Smoothness of `log f` with respect to `ℓ∞` (grid estimate).
    pub lambda: f64,
    /// Largest ratio `∂_i f / ∂_j f` (closed form).
    pub kappa: f64,
    /// Lipschitz constant of `log f` with respect to `ℓ1` (grid estimate).
    pub lip1: f64,
}

/// Computes [`SmoothnessBox`] for `[lo, hi]^n`.
///
/// `kappa = max(1, max_{i≠j} B_i/B_j · (hi/lo)^(1−p))` is exact. `lambda` is
/// the largest `max_{‖d‖∞ ≤ 1} dᵀ(−∇²log f)d` and `lip1` the largest
/// `‖∇log f‖∞` over a grid with [`SMOOTHNESS_GRID`] points per axis, both
/// multiplied by [`SMOOTHNESS_MARGIN`]. With symmetric weights the grid is
/// over vectors with two distinct coordinate values (any count of each),
/// which contains every corner of the box up to permutation. Asymmetric
/// weights use the full grid and are limited to `n ≤ 6`.
pub fn smoothness_constants(spec: &WelfareSpec, lo: f64, hi: f64) -> Result<SmoothnessBox> {
    if !(lo > 0.0) || !lo.is_finite() {
        return Err(Error::InvalidParameter(format!("box floor must be positive, got {lo}")));
    }
    if !(hi >= lo) || !hi.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "box ceiling {hi} must be finite and at least the floor {lo}"
        )));
    }
    let n = spec.n();
    let symmetric = spec.is_symmetric();
    if !symmetric && n > 6 {
        return Err(Error::TooLarge(format!(
            "smoothness grid for asymmetric weights supports n <= 6, got {n}"
        )));
    }

    let ratio = hi / lo;
    let bmax = spec.weights.iter().cloned().fold(f64::MIN, f64::max);
    let bmin = spec.weights.iter().cloned().fold(f64::MAX, f64::min);
    let kappa = if n == 1 {
        1.0
    } else {
        (bmax / bmin * ratio.powf(1.0 - spec.p)).max(1.0)
    };

    let axis: Vec<f64> = if hi == lo {
        vec![lo]
    } else {
        (0..SMOOTHNESS_GRID)
            .map(|k| lo + (hi - lo) * k as f64 / (SMOOTHNESS_GRID - 1) as f64)
            .collect()
    };

    let mut lambda: f64 = 0.0;
    let mut lip1: f64 = 0.0;
    let mut grad = vec![0.0; n];
    let mut visit = |u: &[f64]| {
        spec.grad_log_unchecked(u, &mut grad);
        lip1 = lip1.max(grad.iter().cloned().fold(0.0, f64::max));
        let h = spec.hessian_log(u);
        lambda = lambda.max(inf_to_one_norm(&h, n));
    };

    let mut u = vec![0.0; n];
    if symmetric {
        for &a in &axis {
            for &b in &axis {
                for k in 0..=n {
                    for (i, x) in u.iter_mut().enumerate() {
                        *x = if i < k { a } else { b };
                    }
                    visit(&u);
                }
            }
        }
    } else {
        let m = axis.len();
        let mut idx = vec![0usize; n];
        loop {
            for (x, &k) in u.iter_mut().zip(&idx) {
                *x = axis[k];
            }
            visit(&u);
            let mut d = 0;
            loop {
                if d == n {
                    break;
                }
                idx[d] += 1;
                if idx[d] < m {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
            if d == n {
                break;
            }
        }
    }

    Ok(SmoothnessBox {
        lo,
        hi,
        lambda: lambda * SMOOTHNESS_MARGIN,
        kappa,
        lip1: lip1 * SMOOTHNESS_MARGIN,
    })
}

/// `max_{‖d‖∞ ≤ 1} |dᵀHd|` for a symmetric matrix: exact by sign enumeration
/// up to 10 dimensions, otherwise the entrywise bound `Σ|H_ij|`.
fn inf_to_one_norm(h: &[f64], n: usize) -> f64 {
    if n > 10 {
        return h.iter().map(|x| x.abs()).sum();
    }
    let mut best: f64 = 0.0;
    // d and -d give the same value, so fix the sign of the last coordinate.
    let half = 1usize << (n - 1);
    for mask in 0..half {
        let sign = |i: usize| if mask >> i & 1 == 1 { -1.0 } else { 1.0 };
        let mut acc = 0.0;
        for i in 0..n {
            let si = sign(i);
            for j in 0..n {
                acc += si * sign(j) * h[i * n + j];
            }
        }
        best = best.max(acc.abs());
    }
    best
}

/// Numerically stable `log Σ exp(x_i)`; `−∞` for an empty or all-`−∞` input.
pub fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if m == f64::INFINITY {
        return f64::INFINITY;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_in_place(xs: &mut [f64]) {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - m).exp();
        total += *x;
    }
    for x in xs.iter_mut() {
        *x /= total;
    }
}
