use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::{create_dir, create_file, sample_replication, with_threads, write_effective_config, ExperimentConfig};
use crate::arrivals::ArrivalModel;
use crate::diagnostics::{regret_curve_from, write_lemma_checks, write_regret_csv, LemmaCheckRecord, PrefixOptima, RegretReport};
use crate::error::{Error, Result};
use crate::online::{run_online, AlgorithmKind, AllocationTrajectory};
use crate::welfare::WelfareSpec;

/// Something that went wrong inside one replication; the run goes on.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub replication: u64,
    pub algorithm: Option<AlgorithmKind>,
    /// Checkpoint of a failed prefix solve.
    pub t: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct ReplicationOutput {
    pub replication: u64,
    /// Realized mean ℓ1 distance between history and online sequence.
    pub delta_avg: f64,
    /// Hindsight optimum of the whole sequence.
    pub opt: Option<f64>,
    /// `max_i β*_i` of the whole-sequence hindsight solve.
    pub beta_bar: Option<f64>,
    /// One report per configured algorithm that ran, in config order.
    pub reports: Vec<RegretReport>,
    /// Kept only when `outputs.trajectories` is set.
    pub trajectories: Vec<AllocationTrajectory>,
    pub failures: Vec<Failure>,
}

impl ReplicationOutput {
    pub fn report(&self, kind: AlgorithmKind) -> Option<&RegretReport> {
        self.reports.iter().find(|r| r.algorithm == kind)
    }
}

/// Across-replication means at one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub algorithm: AlgorithmKind,
    pub t: usize,
    pub runs: usize,
    pub opt: f64,
    pub welfare: f64,
    pub regret: f64,
    pub normalized_regret: f64,
}

#[derive(Debug, Clone)]
pub struct SimulationOutput {
    pub config: ExperimentConfig,
    pub checkpoints: Vec<usize>,
    pub replications: Vec<ReplicationOutput>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, count) = xs.fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    (count > 0).then(|| sum / count as f64)
}

impl SimulationOutput {
    pub fn failures(&self) -> impl Iterator<Item = &Failure> {
        self.replications.iter().flat_map(|r| &r.failures)
    }

    /// Mean of `f` over the replications with a point of `kind` at `t`.
    pub fn mean_at(&self, kind: AlgorithmKind, t: usize, f: impl Fn(&crate::diagnostics::RegretPoint) -> f64) -> Option<f64> {
        mean(self.replications.iter().filter_map(|r| r.report(kind)?.at(t)).map(f))
    }

    pub fn mean_normalized_regret(&self, kind: AlgorithmKind, t: usize) -> Option<f64> {
        self.mean_at(kind, t, |p| p.normalized_regret)
    }

    /// Mean `welfare / opt` at `T`.
    pub fn mean_final_ratio(&self, kind: AlgorithmKind) -> Option<f64> {
        self.mean_at(kind, self.config.horizon, |p| p.welfare / p.opt)
    }

    pub fn mean_delta_avg(&self) -> f64 {
        mean(self.replications.iter().map(|r| r.delta_avg)).unwrap_or(0.0)
    }

    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut rows = Vec::new();
        for &kind in &self.config.algorithms {
            for &t in &self.checkpoints {
                let points: Vec<_> = self.replications.iter().filter_map(|r| r.report(kind)?.at(t)).collect();
                if points.is_empty() {
                    continue;
                }
                let m = |f: fn(&crate::diagnostics::RegretPoint) -> f64| {
                    points.iter().map(|p| f(p)).sum::<f64>() / points.len() as f64
                };
                rows.push(SummaryRow {
                    algorithm: kind,
                    t,
                    runs: points.len(),
                    opt: m(|p| p.opt),
                    welfare: m(|p| p.welfare),
                    regret: m(|p| p.regret),
                    normalized_regret: m(|p| p.normalized_regret),
                });
            }
        }
        rows
    }

    /// The welfare-to-log-welfare regret conversion at every point.
    pub fn conversion_checks(&self) -> Vec<LemmaCheckRecord> {
        self.replications
            .iter()
            .flat_map(|r| {
                let context = format!("seed={}", r.replication);
                r.reports
                    .iter()
                    .flat_map(|rep| rep.conversion_checks())
                    .map(move |c| c.with_context(&context))
            })
            .collect()
    }

    pub fn write_regret_csv(&self, out: impl Write) -> Result<()> {
        let rows = self
            .replications
            .iter()
            .flat_map(|r| r.reports.iter().map(move |rep| (r.replication, rep)));
        write_regret_csv(rows, out)?;
        Ok(())
    }

    pub fn write_summary_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["algorithm", "t", "runs", "opt", "welfare", "regret", "normalized_regret"])?;
        for s in self.summary() {
            w.write_record([
                s.algorithm.name().to_string(),
                s.t.to_string(),
                s.runs.to_string(),
                s.opt.to_string(),
                s.welfare.to_string(),
                s.regret.to_string(),
                s.normalized_regret.to_string(),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn write_runs_csv(&self, out: impl Write) -> Result<()> {
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["replication", "delta_avg", "beta_bar", "opt"])?;
        for r in &self.replications {
            w.write_record([r.replication.to_string(), r.delta_avg.to_string(), opt(r.beta_bar), opt(r.opt)])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn write_failures_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["replication", "algorithm", "t", "message"])?;
        for f in self.failures() {
            w.write_record([
                f.replication.to_string(),
                f.algorithm.map(|a| a.name().to_string()).unwrap_or_default(),
                f.t.map(|t| t.to_string()).unwrap_or_default(),
                f.message.clone(),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn write_trajectories_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["algorithm", "seed", "t", "winner"])?;
        for r in &self.replications {
            for traj in &r.trajectories {
                for (t, winner) in traj.winners.iter().enumerate() {
                    w.write_record([
                        traj.kind.name().to_string(),
                        r.replication.to_string(),
                        (t + 1).to_string(),
                        winner.map(|i| i.to_string()).unwrap_or_default(),
                    ])?;
                }
            }
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Writes every artifact into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        create_dir(dir)?;
        self.write_regret_csv(create_file(&dir.join("regret.csv"))?)?;
        self.write_summary_csv(create_file(&dir.join("regret_summary.csv"))?)?;
        self.write_runs_csv(create_file(&dir.join("runs.csv"))?)?;
        self.write_failures_csv(create_file(&dir.join("failures.csv"))?)?;
        write_lemma_checks(&self.conversion_checks(), create_file(&dir.join("lemma_checks.csv"))?)?;
        if self.config.outputs.trajectories {
            self.write_trajectories_csv(create_file(&dir.join("trajectories.csv"))?)?;
        }
        let mut effective = self.config.clone();
        effective.outputs.dir = dir.to_path_buf();
        write_effective_config(&effective, dir)
    }
}

fn run_replication(
    config: &ExperimentConfig,
    spec: &WelfareSpec,
    model: &ArrivalModel,
    checkpoints: &[usize],
    replication: u64,
) -> ReplicationOutput {
    let mut out = ReplicationOutput {
        replication,
        delta_avg: f64::NAN,
        opt: None,
        beta_bar: None,
        reports: Vec::new(),
        trajectories: Vec::new(),
        failures: Vec::new(),
    };
    let fail = |algorithm, t, e: Error| Failure {
        replication,
        algorithm,
        t,
        message: e.to_string(),
    };
    let data = match sample_replication(config, model, replication) {
        Ok(d) => d,
        Err(e) => {
            out.failures.push(fail(None, None, e));
            return out;
        }
    };
    out.delta_avg = data.shift.delta_avg;
    let optima = match PrefixOptima::compute(spec, &data.online, checkpoints, config.solver.hindsight_options()) {
        Ok(o) => o,
        Err(e) => {
            out.failures.push(fail(None, None, e));
            return out;
        }
    };
    if let Some(o) = optima.at(config.horizon) {
        out.opt = Some(o.log_opt.exp());
        out.beta_bar = Some(o.beta_max);
    }
    let options = config.solver.online_options();
    for &kind in &config.algorithms {
        match run_online(kind, spec, &data.online, Some(&data.history), &options) {
            Ok(traj) => {
                let report = regret_curve_from(spec, &traj, &optima);
                for (t, message) in &report.failures {
                    out.failures.push(Failure {
                        replication,
                        algorithm: Some(kind),
                        t: Some(*t),
                        message: message.clone(),
                    });
                }
                out.reports.push(report);
                if config.outputs.trajectories {
                    out.trajectories.push(traj);
                }
            }
            Err(e) => out.failures.push(fail(Some(kind), None, e)),
        }
    }
    out
}

/// Runs every replication and algorithm in memory.
pub fn simulate(config: &ExperimentConfig) -> Result<SimulationOutput> {
    config.validate()?;
    let spec = config.spec()?;
    let model = config.arrival_model()?;
    let checkpoints = config.checkpoints();
    let replications = with_threads(config.threads, || {
        (0..config.replications)
            .into_par_iter()
            .map(|r| run_replication(config, &spec, &model, &checkpoints, r))
            .collect::<Vec<_>>()
    })?;
    Ok(SimulationOutput {
        config: config.clone(),
        checkpoints,
        replications,
    })
}

/// [`simulate`], then writes `regret.csv`, `regret_summary.csv`,
/// `runs.csv`, `failures.csv`, `lemma_checks.csv` (regret conversion) and
/// `effective_config.json` into `outputs.dir`.
pub fn cmd_simulate(config: &ExperimentConfig) -> Result<SimulationOutput> {
    let output = simulate(config)?;
    output.write_to(&config.outputs.dir)?;
    Ok(output)
}
