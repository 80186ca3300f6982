//! Arrival models for the online sequence, history generation with optional
//! shift, and the realized ℓ1 discrepancy between two sequences.
//!
//! Randomness comes from ChaCha8 streams keyed by `(base_seed, replication,
//! role)`, so the online draw, the history draw and any algorithmic
//! randomness of one replication are independent and reproducible on every
//! platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::ItemSequence;

/// What a random stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamRole {
    Online = 0,
    History = 1,
    Algorithm = 2,
    Generate = 3,
    Diagnostics = 4,
    /// Noise that puts sampled sequences in general position.
    Perturb = 5,
}

/// The stream of `role` in `replication`.
pub fn stream_rng(base_seed: u64, replication: u64, role: StreamRole) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream((replication << 8) | role as u64);
    rng
}

/// Distribution of a single item value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ValueLaw {
    Uniform { lo: f64, hi: f64 },
    /// `v̄ · Beta(a, b)`.
    Beta { a: f64, b: f64 },
}

impl ValueLaw {
    fn validate(&self, vbar: f64) -> Result<()> {
        match *self {
            ValueLaw::Uniform { lo, hi } => {
                if !(0.0 <= lo && lo <= hi && hi <= vbar) {
                    return Err(Error::InvalidParameter(format!(
                        "uniform law needs 0 <= lo <= hi <= vbar, got lo={lo}, hi={hi}, vbar={vbar}"
                    )));
                }
            }
            ValueLaw::Beta { a, b } => {
                if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
                    return Err(Error::InvalidParameter(format!("beta law needs a, b > 0, got a={a}, b={b}")));
                }
            }
        }
        Ok(())
    }

    fn sample<R: Rng + ?Sized>(&self, vbar: f64, rng: &mut R) -> f64 {
        match *self {
            ValueLaw::Uniform { lo, hi } => (lo + (hi - lo) * rng.random::<f64>()).min(vbar),
            ValueLaw::Beta { a, b } => {
                // Parameters were validated, so construction cannot fail.
                let d = Beta::new(a, b).expect("validated beta parameters");
                (vbar * d.sample(rng)).min(vbar)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArrivalModel {
    /// Rows drawn uniformly with replacement from a pool.
    IidEmpirical { pool: ItemSequence },
    /// As `IidEmpirical`, then during period `q` of `Q` balanced blocks of
    /// steps the values of agent group `q` are multiplied by `factor`
    /// (clamped to `v̄`).
    PeriodicBoost { pool: ItemSequence, q: usize, factor: f64 },
    /// A fixed sequence replayed verbatim.
    TraceReplay { seq: ItemSequence },
    /// Independent draws from `law` for every entry.
    Synthetic { law: ValueLaw, n: usize, vbar: f64 },
}

impl ArrivalModel {
    pub fn n(&self) -> usize {
        match self {
            ArrivalModel::IidEmpirical { pool } | ArrivalModel::PeriodicBoost { pool, .. } => pool.n(),
            ArrivalModel::TraceReplay { seq } => seq.n(),
            ArrivalModel::Synthetic { n, .. } => *n,
        }
    }

    pub fn vbar(&self) -> f64 {
        match self {
            ArrivalModel::IidEmpirical { pool } | ArrivalModel::PeriodicBoost { pool, .. } => pool.vbar(),
            ArrivalModel::TraceReplay { seq } => seq.vbar(),
            ArrivalModel::Synthetic { vbar, .. } => *vbar,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ArrivalModel::IidEmpirical { pool } => nonempty(pool),
            ArrivalModel::PeriodicBoost { pool, q, factor } => {
                nonempty(pool)?;
                if *q == 0 || *q > pool.n() {
                    return Err(Error::InvalidParameter(format!(
                        "periodic boost needs 1 <= Q <= n, got Q={q} with n={}",
                        pool.n()
                    )));
                }
                if !(*factor >= 0.0 && factor.is_finite()) {
                    return Err(Error::InvalidParameter(format!("boost factor must be finite and >= 0, got {factor}")));
                }
                Ok(())
            }
            ArrivalModel::TraceReplay { seq } => nonempty(seq),
            ArrivalModel::Synthetic { law, n, vbar } => {
                if *n == 0 {
                    return Err(Error::InvalidParameter("need at least one agent".into()));
                }
                if !(*vbar > 0.0 && vbar.is_finite()) {
                    return Err(Error::InvalidParameter(format!("vbar must be positive, got {vbar}")));
                }
                law.validate(*vbar)
            }
        }
    }
}

fn nonempty(seq: &ItemSequence) -> Result<()> {
    if seq.is_empty() {
        Err(Error::NoRows)
    } else {
        Ok(())
    }
}

/// Block of `index` when `total` items are cut into `parts` contiguous
/// blocks whose sizes differ by at most one (larger blocks first).
pub fn balanced_block(index: usize, total: usize, parts: usize) -> usize {
    let base = total / parts;
    let big = total % parts;
    let cut = big * (base + 1);
    if index < cut {
        index / (base + 1)
    } else {
        big + (index - cut) / base.max(1)
    }
}

/// How the historical forecast relates to the online sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum HistoryMode {
    /// A fresh draw from the online model (for a replayed trace: the trace).
    Matched,
    /// The online values plus Gaussian noise with variance
    /// `variance_scale · v`, clamped to `[0, v̄]`.
    GaussianNoise {
        #[serde(default = "default_variance_scale")]
        variance_scale: f64,
    },
    /// A fresh draw from the online model; a replayed trace is resampled
    /// with replacement instead of copied.
    IndependentRedraw,
}

fn default_variance_scale() -> f64 {
    0.5
}

/// Per-step ℓ1 distances between two sequences and their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    pub per_step_l1: Vec<f64>,
    pub delta_avg: f64,
}

/// Draws an online sequence of length `t`.
pub fn sample_online<R: Rng + ?Sized>(model: &ArrivalModel, t: usize, rng: &mut R) -> Result<ItemSequence> {
    model.validate()?;
    match model {
        ArrivalModel::IidEmpirical { pool } => Ok(resample(pool, t, rng)),
        ArrivalModel::PeriodicBoost { pool, q, factor } => {
            let base = resample(pool, t, rng);
            Ok(boost(&base, *q, *factor))
        }
        ArrivalModel::TraceReplay { seq } => {
            if seq.len() != t {
                return Err(Error::InvalidParameter(format!(
                    "trace has {} rows but T = {t}",
                    seq.len()
                )));
            }
            Ok(seq.clone())
        }
        ArrivalModel::Synthetic { law, n, vbar } => {
            let values = (0..t * n).map(|_| law.sample(*vbar, rng)).collect();
            ItemSequence::from_flat(values, *n, *vbar)
        }
    }
}

fn resample<R: Rng + ?Sized>(pool: &ItemSequence, t: usize, rng: &mut R) -> ItemSequence {
    let mut values = Vec::with_capacity(t * pool.n());
    let size = pool.len() as u64;
    for _ in 0..t {
        // Draw in u64 so the index does not depend on the pointer width.
        let k = rng.random_range(0..size) as usize;
        values.extend_from_slice(pool.row(k));
    }
    ItemSequence::from_flat(values, pool.n(), pool.vbar()).expect("pool rows are valid")
}

fn boost(seq: &ItemSequence, q: usize, factor: f64) -> ItemSequence {
    let (t, n, vbar) = (seq.len(), seq.n(), seq.vbar());
    let mut values = seq.as_flat().to_vec();
    for (s, row) in values.chunks_exact_mut(n).enumerate() {
        let period = balanced_block(s, t, q);
        for (i, x) in row.iter_mut().enumerate() {
            if balanced_block(i, n, q) == period {
                *x = (*x * factor).min(vbar);
            }
        }
    }
    ItemSequence::from_flat(values, n, vbar).expect("boosted values stay in range")
}

/// Draws the history for `online` and measures its shift.
pub fn sample_history<R: Rng + ?Sized>(
    model: &ArrivalModel,
    mode: HistoryMode,
    online: &ItemSequence,
    rng: &mut R,
) -> Result<(ItemSequence, ShiftReport)> {
    if online.n() != model.n() {
        return Err(Error::DimensionMismatch {
            expected: model.n(),
            found: online.n(),
        });
    }
    let t = online.len();
    let history = match (mode, model) {
        (HistoryMode::GaussianNoise { variance_scale }, _) => {
            if !(variance_scale >= 0.0 && variance_scale.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "variance_scale must be finite and >= 0, got {variance_scale}"
                )));
            }
            let vbar = online.vbar();
            let values = online
                .as_flat()
                .iter()
                .map(|&v| {
                    let z: f64 = StandardNormal.sample(rng);
                    (v + (variance_scale * v).sqrt() * z).clamp(0.0, vbar)
                })
                .collect();
            ItemSequence::from_flat(values, online.n(), vbar)?
        }
        (HistoryMode::Matched, ArrivalModel::TraceReplay { seq }) => seq.clone(),
        (HistoryMode::IndependentRedraw, ArrivalModel::TraceReplay { seq }) => resample(seq, t, rng),
        (HistoryMode::Matched | HistoryMode::IndependentRedraw, _) => sample_online(model, t, rng)?,
    };
    let report = measure_l1_discrepancy(online, &history)?;
    Ok((history, report))
}

pub fn measure_l1_discrepancy(a: &ItemSequence, b: &ItemSequence) -> Result<ShiftReport> {
    if a.n() != b.n() || a.len() != b.len() {
        return Err(Error::InvalidParameter(format!(
            "shape mismatch: {}x{} vs {}x{}",
            a.len(),
            a.n(),
            b.len(),
            b.n()
        )));
    }
    let per_step_l1: Vec<f64> = a
        .rows()
        .zip(b.rows())
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()).sum())
        .collect();
    let delta_avg = if per_step_l1.is_empty() {
        0.0
    } else {
        per_step_l1.iter().sum::<f64>() / per_step_l1.len() as f64
    };
    Ok(ShiftReport { per_step_l1, delta_avg })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(rows: &[&[f64]], vbar: f64) -> ItemSequence {
        ItemSequence::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>(), vbar).unwrap()
    }

    #[test]
    fn balanced_blocks() {
        let sizes = |total, parts| {
            let mut c = vec![0; parts];
            for i in 0..total {
                c[balanced_block(i, total, parts)] += 1;
            }
            c
        };
        assert_eq!(sizes(10, 4), vec![3, 3, 2, 2]);
        assert_eq!(sizes(8, 4), vec![2, 2, 2, 2]);
        assert_eq!(sizes(3, 3), vec![1, 1, 1]);
    }

    #[test]
    fn singleton_pool_repeats() {
        let pool = seq(&[&[0.3, 0.7]], 1.0);
        let mut rng = stream_rng(1, 0, StreamRole::Online);
        let s = sample_online(&ArrivalModel::IidEmpirical { pool }, 50, &mut rng).unwrap();
        assert!(s.rows().all(|r| r == [0.3, 0.7]));
    }

    #[test]
    fn periodic_boost_doubles_the_active_group() {
        let pool = seq(&[&[0.4, 0.4, 0.4, 0.4]], 1.0);
        let model = ArrivalModel::PeriodicBoost { pool, q: 4, factor: 2.0 };
        let mut rng = stream_rng(1, 0, StreamRole::Online);
        let s = sample_online(&model, 20, &mut rng).unwrap();
        for (t, row) in s.rows().enumerate() {
            for (i, &x) in row.iter().enumerate() {
                assert_eq!(x, if i == t / 5 { 0.8 } else { 0.4 });
            }
        }
    }

    #[test]
    fn periodic_boost_rejects_empty_groups() {
        let pool = seq(&[&[0.4, 0.4]], 1.0);
        assert!(ArrivalModel::PeriodicBoost { pool, q: 3, factor: 2.0 }.validate().is_err());
    }

    #[test]
    fn trace_replay_is_identity() {
        let s = seq(&[&[0.1, 0.2], &[0.3, 0.4]], 1.0);
        let model = ArrivalModel::TraceReplay { seq: s.clone() };
        let mut rng = stream_rng(1, 0, StreamRole::Online);
        assert_eq!(sample_online(&model, 2, &mut rng).unwrap(), s);
        assert!(sample_online(&model, 3, &mut rng).is_err());
    }

    #[test]
    fn zero_noise_history_is_the_online_sequence() {
        let model = ArrivalModel::Synthetic { law: ValueLaw::Uniform { lo: 0.0, hi: 1.0 }, n: 3, vbar: 1.0 };
        let mut rng = stream_rng(7, 0, StreamRole::Online);
        let online = sample_online(&model, 100, &mut rng).unwrap();
        let (h, report) =
            sample_history(&model, HistoryMode::GaussianNoise { variance_scale: 0.0 }, &online, &mut rng).unwrap();
        assert_eq!(h, online);
        assert_eq!(report.delta_avg, 0.0);
    }

    #[test]
    fn l1_examples() {
        let a = seq(&[&[1.0, 0.0]], 1.0);
        let b = seq(&[&[0.0, 1.0]], 1.0);
        let r = measure_l1_discrepancy(&a, &b).unwrap();
        assert_eq!(r.per_step_l1, vec![2.0]);
        assert_eq!(r.delta_avg, 2.0);
        assert_eq!(measure_l1_discrepancy(&a, &a).unwrap().delta_avg, 0.0);
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let draw = |seed, rep, role| stream_rng(seed, rep, role).random::<u64>();
        assert_eq!(draw(3, 1, StreamRole::Online), draw(3, 1, StreamRole::Online));
        assert_ne!(draw(3, 1, StreamRole::Online), draw(3, 1, StreamRole::History));
        assert_ne!(draw(3, 1, StreamRole::Online), draw(3, 2, StreamRole::Online));
    }
}
