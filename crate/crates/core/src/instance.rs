//! Item sequences, allocation plans and the utilities they induce.

use std::io::Write;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};

/// Borrowed row-major value matrix with `n` columns.
#[derive(Debug, Clone, Copy)]
pub struct ValueRows<'a> {
    data: &'a [f64],
    n: usize,
}

impl<'a> ValueRows<'a> {
    pub fn new(data: &'a [f64], n: usize) -> Result<Self> {
        if n == 0 || data.len() % n != 0 {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: if n == 0 { 0 } else { data.len() % n },
            });
        }
        Ok(Self { data, n })
    }

    pub fn empty(n: usize) -> Self {
        Self { data: &[], n }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.n
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, t: usize) -> &'a [f64] {
        &self.data[t * self.n..(t + 1) * self.n]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'a, f64> {
        self.data.chunks_exact(self.n)
    }

    pub fn as_flat(&self) -> &'a [f64] {
        self.data
    }

    /// Rows `from..to`.
    pub fn slice(&self, from: usize, to: usize) -> ValueRows<'a> {
        ValueRows {
            data: &self.data[from * self.n..to * self.n],
            n: self.n,
        }
    }

    /// Largest entry, zero when empty.
    pub fn max_value(&self) -> f64 {
        self.data.iter().cloned().fold(0.0, f64::max)
    }
}

/// A `T × n` matrix of nonnegative item values bounded by `vbar`.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemSequence {
    values: Vec<f64>,
    n: usize,
    vbar: f64,
}

impl ItemSequence {
    /// Builds a sequence from rows. Every row must have the same length and
    /// every value must lie in `[0, vbar]`.
    pub fn from_rows(rows: &[Vec<f64>], vbar: f64) -> Result<Self> {
        let n = rows.first().map(|r| r.len()).ok_or(Error::NoRows)?;
        let mut values = Vec::with_capacity(rows.len() * n);
        for (t, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::BadRow {
                    row: t,
                    message: format!("expected {n} values, found {}", row.len()),
                });
            }
            values.extend_from_slice(row);
        }
        Self::from_flat(values, n, vbar)
    }

    /// Builds a sequence from row-major data with `n` columns.
    pub fn from_flat(values: Vec<f64>, n: usize, vbar: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("at least one agent is required".into()));
        }
        if !(vbar > 0.0) || !vbar.is_finite() {
            return Err(Error::InvalidParameter(format!("vbar must be positive, got {vbar}")));
        }
        if values.len() % n != 0 {
            return Err(Error::BadRow {
                row: values.len() / n,
                message: format!("expected {n} values per row"),
            });
        }
        for (k, &v) in values.iter().enumerate() {
            if !(0.0..=vbar).contains(&v) {
                return Err(Error::BadRow {
                    row: k / n,
                    message: format!("value {v} for agent {} outside [0, {vbar}]", k % n),
                });
            }
        }
        Ok(Self { values, n, vbar })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// The horizon `T`.
    pub fn len(&self) -> usize {
        self.values.len() / self.n
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn vbar(&self) -> f64 {
        self.vbar
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.n..(t + 1) * self.n]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.n)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.values
    }

    pub fn view(&self) -> ValueRows<'_> {
        ValueRows {
            data: &self.values,
            n: self.n,
        }
    }

    /// Rows `from..` as a view.
    pub fn tail(&self, from: usize) -> ValueRows<'_> {
        self.view().slice(from, self.len())
    }

    /// Rows `..to` as a new sequence with the same `vbar`.
    pub fn prefix(&self, to: usize) -> ItemSequence {
        Self {
            values: self.values[..to * self.n].to_vec(),
            n: self.n,
            vbar: self.vbar,
        }
    }

    /// Keeps the rows whose index satisfies `keep`.
    pub fn filter_rows(&self, mut keep: impl FnMut(usize) -> bool) -> ItemSequence {
        let mut values = Vec::new();
        for (t, row) in self.rows().enumerate() {
            if keep(t) {
                values.extend_from_slice(row);
            }
        }
        Self {
            values,
            n: self.n,
            vbar: self.vbar,
        }
    }

    /// Multiplies every value (and `vbar`) by `alpha > 0`.
    pub fn scaled(&self, alpha: f64) -> Result<ItemSequence> {
        if !(alpha > 0.0) {
            return Err(Error::InvalidParameter(format!("scale must be positive, got {alpha}")));
        }
        Ok(Self {
            values: self.values.iter().map(|v| v * alpha).collect(),
            n: self.n,
            vbar: self.vbar * alpha,
        })
    }

    /// Same values under a different bound.
    pub fn with_vbar(&self, vbar: f64) -> Result<ItemSequence> {
        Self::from_flat(self.values.clone(), self.n, vbar)
    }
}

/// Per-item allocation fractions, `T × n`, each row in the capped simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationPlan {
    x: Vec<f64>,
    n: usize,
}

/// Slack allowed on the row sums of an [`AllocationPlan`].
pub const PLAN_ROW_SLACK: f64 = 1e-12;

impl AllocationPlan {
    pub fn from_flat(x: Vec<f64>, n: usize) -> Result<Self> {
        if n == 0 || x.len() % n != 0 {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: if n == 0 { 0 } else { x.len() % n },
            });
        }
        for (t, row) in x.chunks_exact(n).enumerate() {
            if let Some(v) = row.iter().find(|v| !(**v >= 0.0)) {
                return Err(Error::BadRow {
                    row: t,
                    message: format!("allocation fraction {v} is negative"),
                });
            }
            let s: f64 = row.iter().sum();
            if s > 1.0 + PLAN_ROW_SLACK {
                return Err(Error::BadRow {
                    row: t,
                    message: format!("allocation fractions sum to {s} > 1"),
                });
            }
        }
        Ok(Self { x, n })
    }

    pub fn zeros(rows: usize, n: usize) -> Self {
        Self {
            x: vec![0.0; rows * n],
            n,
        }
    }

    /// Integral plan: row `t` goes wholly to `winners[t]`, or to nobody.
    pub fn integral(winners: &[Option<usize>], n: usize) -> Self {
        let mut plan = Self::zeros(winners.len(), n);
        for (t, w) in winners.iter().enumerate() {
            if let Some(i) = *w {
                plan.x[t * n + i] = 1.0;
            }
        }
        plan
    }

    pub(crate) fn from_flat_unchecked(x: Vec<f64>, n: usize) -> Self {
        Self { x, n }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.x.len() / self.n
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.x[t * self.n..(t + 1) * self.n]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.x.chunks_exact(self.n)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.x
    }
}

/// Cumulative utility `W` in absolute units (not divided by the horizon).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CumulativeUtility(pub Vec<f64>);

impl CumulativeUtility {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    /// Adds `v ⊙ x`.
    pub fn add(&mut self, values: &[f64], fractions: &[f64]) {
        for ((w, v), x) in self.0.iter_mut().zip(values).zip(fractions) {
            *w += v * x;
        }
    }

    /// Adds the whole item to one agent.
    pub fn add_to(&mut self, agent: usize, values: &[f64]) {
        self.0[agent] += values[agent];
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// `W / t`.
    pub fn averaged(&self, t: usize) -> Vec<f64> {
        self.0.iter().map(|w| w / t as f64).collect()
    }
}

/// Time-averaged utilities `u_i = (1/T) Σ_t v_ti x_ti`.
pub fn utilities_of(seq: &ItemSequence, plan: &AllocationPlan) -> Result<Vec<f64>> {
    if seq.n() != plan.n() {
        return Err(Error::DimensionMismatch {
            expected: seq.n(),
            found: plan.n(),
        });
    }
    if seq.len() != plan.len() {
        return Err(Error::DimensionMismatch {
            expected: seq.len(),
            found: plan.len(),
        });
    }
    let mut w = CumulativeUtility::zeros(seq.n());
    for (v, x) in seq.rows().zip(plan.rows()) {
        w.add(v, x);
    }
    Ok(w.averaged(seq.len().max(1)))
}

/// Reads the instance CSV (`t,a0,...,a{n-1}`). When `vbar` is `None` the
/// bound is the largest value in the file (or 1 for an all-zero file).
pub fn load_csv(path: impl AsRef<Path>, vbar: Option<f64>) -> Result<ItemSequence> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, vbar)
}

/// Agent column names from a CSV header, in order.
pub fn csv_agent_names(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    Ok(reader.headers()?.iter().skip(1).map(str::to_string).collect())
}

/// Parses the instance CSV from any reader.
pub fn read_csv(input: impl std::io::Read, vbar: Option<f64>) -> Result<ItemSequence> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(input);
    let header = reader.headers()?.clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(Error::NoRows);
    }
    if &header[0] != "t" || header.len() < 2 {
        return Err(Error::BadRow {
            row: 0,
            message: format!("header must be `t,a0,...`, found `{}`", header.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let n = header.len() - 1;
    let mut values = Vec::new();
    let mut rows = 0usize;
    for record in reader.records() {
        let record = record?;
        if record.len() != n + 1 {
            return Err(Error::BadRow {
                row: rows,
                message: format!("expected {} fields, found {}", n + 1, record.len()),
            });
        }
        let t: usize = record[0].trim().parse().map_err(|_| Error::BadRow {
            row: rows,
            message: format!("step index `{}` is not a nonnegative integer", &record[0]),
        })?;
        if t != rows {
            return Err(Error::BadRow {
                row: rows,
                message: format!("step index {t} out of order"),
            });
        }
        for field in record.iter().skip(1) {
            let v: f64 = field.trim().parse().map_err(|_| Error::BadRow {
                row: rows,
                message: format!("`{field}` is not a number"),
            })?;
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::NoRows);
    }
    let vbar = match vbar {
        Some(v) => v,
        None => {
            let m = values.iter().cloned().fold(0.0, f64::max);
            if m > 0.0 && m.is_finite() {
                m
            } else {
                1.0
            }
        }
    };
    ItemSequence::from_flat(values, n, vbar)
}

/// Writes the instance CSV with shortest round-trip float formatting.
pub fn save_csv(seq: &ItemSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    write_csv(seq, &mut out).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

/// Writes the instance CSV to any writer.
pub fn write_csv(seq: &ItemSequence, out: &mut impl Write) -> std::io::Result<()> {
    write!(out, "t")?;
    for i in 0..seq.n() {
        write!(out, ",a{i}")?;
    }
    writeln!(out)?;
    for (t, row) in seq.rows().enumerate() {
        write!(out, "{t}")?;
        for v in row {
            write!(out, ",{v:?}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// True when no two items have the same value ratio on any agent pair whose
/// four values are all positive, up to an absolute tolerance `tol`.
pub fn check_general_position(seq: &ItemSequence, tol: f64) -> bool {
    let n = seq.n();
    let mut ratios = Vec::with_capacity(seq.len());
    for i in 0..n {
        for j in (i + 1)..n {
            ratios.clear();
            for row in seq.rows() {
                if row[i] > 0.0 && row[j] > 0.0 {
                    ratios.push(row[i] / row[j]);
                }
            }
            ratios.sort_by(f64::total_cmp);
            // The definition ranges over ordered pairs, so check (j, i) too.
            if ratios.windows(2).any(|w| (w[1] - w[0]).abs() <= tol) {
                return false;
            }
            let mut inv: Vec<f64> = ratios.iter().map(|r| 1.0 / r).collect();
            inv.sort_by(f64::total_cmp);
            if inv.windows(2).any(|w| (w[1] - w[0]).abs() <= tol) {
                return false;
            }
        }
    }
    true
}

/// Attempts made by [`perturb_general_position`] before giving up.
pub const PERTURB_ATTEMPTS: usize = 8;

/// Adds independent noise of size in `(0, scale]` to every positive value.
/// Values that would exceed `vbar` move down by the same amount instead, so
/// every value changes by at most `scale` and stays in `[0, vbar]`.
pub fn perturb_general_position<R: Rng + ?Sized>(
    seq: &ItemSequence,
    scale: f64,
    rng: &mut R,
) -> Result<ItemSequence> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "perturbation scale must be positive, got {scale}"
        )));
    }
    let vbar = seq.vbar();
    for _ in 0..PERTURB_ATTEMPTS {
        let values: Vec<f64> = seq
            .as_flat()
            .iter()
            .map(|&v| {
                if v <= 0.0 {
                    return 0.0;
                }
                // (0, scale]: 1 − U[0,1) lies in (0, 1].
                let eps = scale * (1.0 - rng.random::<f64>());
                if v + eps <= vbar {
                    v + eps
                } else {
                    (v - eps).max(0.0)
                }
            })
            .collect();
        let out = ItemSequence::from_flat(values, seq.n(), vbar)?;
        if check_general_position(&out, 0.0) {
            return Ok(out);
        }
    }
    Err(Error::RetriesExhausted(PERTURB_ATTEMPTS))
}
