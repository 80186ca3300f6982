use std::path::Path;

use rayon::prelude::*;

use super::{
    create_dir, create_file, suite_history, suite_model, suite_sample, with_threads, write_effective_config, CheckKind,
    ExperimentConfig,
};
use crate::arrivals::{stream_rng, ArrivalModel, HistoryMode, StreamRole};
use crate::diagnostics::{
    check_boundedness, check_greedy_one_step, check_greedy_per_step, check_greedy_rule_implication,
    check_r3_sensitivity, check_safe_volume, check_stability, coupling_diagnostic, lemma, resolve_utility_spread,
    write_lemma_checks, LemmaCheckRecord,
};
use crate::error::{Error, Result};
use crate::instance::ItemSequence;
use crate::online::{run_greedy, run_online, AlgorithmKind, AllocationTrajectory};
use crate::welfare::WelfareSpec;

// Stream families, so that no two checks share a draw.
const GREEDY: u64 = 1;
const COUPLING: u64 = 2;
const SENSITIVITY: u64 = 3;
const STABILITY: u64 = 4;
const SAFE_VOLUME: u64 = 5;

#[derive(Debug, Clone, Default)]
pub struct VerifyOutput {
    /// Lemma checks, written to `lemma_checks.csv`.
    pub records: Vec<LemmaCheckRecord>,
    /// Boundedness and re-solve spread, written to `monitors.csv`. They
    /// describe the runs and never fail the suite.
    pub monitors: Vec<LemmaCheckRecord>,
}

impl VerifyOutput {
    /// Checks whose premise held and whose inequality failed.
    pub fn violations(&self) -> impl Iterator<Item = &LemmaCheckRecord> {
        self.records.iter().filter(|r| r.failed())
    }

    pub fn passed(&self) -> bool {
        self.violations().next().is_none()
    }

    /// `(checked, skipped, failed)` counts for one lemma.
    pub fn counts(&self, lemma: &str) -> (usize, usize, usize) {
        let of = self.records.iter().filter(|r| r.lemma == lemma);
        of.fold((0, 0, 0), |(c, s, f), r| {
            if !r.premise_held {
                (c, s + 1, f)
            } else if r.pass {
                (c + 1, s, f)
            } else {
                (c + 1, s, f + 1)
            }
        })
    }

    pub fn write_to(&self, dir: &Path) -> Result<()> {
        create_dir(dir)?;
        write_lemma_checks(&self.records, create_file(&dir.join("lemma_checks.csv"))?)?;
        write_lemma_checks(&self.monitors, create_file(&dir.join("monitors.csv"))?)?;
        Ok(())
    }
}

/// Moves the choice at 1-based `step` to the agent with a positive value
/// whose gain in `log f` is smallest.
fn swap_choice(spec: &WelfareSpec, traj: &AllocationTrajectory, online: &ItemSequence, step: usize) -> Result<AllocationTrajectory> {
    let w = traj.w(step - 1);
    let v = online.row(step - 1);
    let chosen = traj.winners[step - 1];
    let mut trial = w.to_vec();
    let worst = (0..spec.n())
        .filter(|&i| Some(i) != chosen && v[i] > 0.0)
        .map(|i| {
            trial.copy_from_slice(w);
            trial[i] += v[i];
            (i, spec.log_welfare_unchecked(&trial))
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or_else(|| Error::InvalidParameter(format!("no other agent values item {step}")))?;
    let mut winners = traj.winners.clone();
    winners[step - 1] = Some(worst.0);
    AllocationTrajectory::from_winners(traj.kind, online, winners)
}

fn greedy_suite(config: &ExperimentConfig, spec: &WelfareSpec, model: &ArrivalModel, out: &mut VerifyOutput) -> Result<()> {
    let v = &config.verify;
    let wants = |k| v.checks.contains(&k);
    let lo = config.box_floor();
    let runs: Vec<Result<(Vec<LemmaCheckRecord>, LemmaCheckRecord)>> = (0..v.greedy_seeds)
        .into_par_iter()
        .map(|s| {
            let online = suite_sample(config, model, GREEDY, s, config.horizon)?;
            let mut traj = run_greedy(spec, &online, config.solver.safeguard_p0)?;
            if let (0, Some(step)) = (s, v.inject_greedy_swap) {
                traj = swap_choice(spec, &traj, &online, step)?;
            }
            let mut recs = Vec::new();
            if wants(CheckKind::GreedyPerStep) {
                recs.extend(check_greedy_per_step(spec, &traj, &online, lo)?);
            }
            if wants(CheckKind::GreedyOneStep) {
                recs.extend(check_greedy_one_step(spec, &traj, &online, config.solver.safeguard_p0)?);
            }
            if wants(CheckKind::GreedyRule) {
                recs.extend(check_greedy_rule_implication(spec, &traj, &online)?);
            }
            let context = format!("seed={s}");
            let recs = recs.into_iter().map(|r| r.with_context(&context)).collect();
            let bounded = check_boundedness(&traj, lo, v.burn_in).with_context(&context);
            Ok((recs, bounded))
        })
        .collect();
    for run in runs {
        let (recs, bounded) = run?;
        out.records.extend(recs);
        if wants(CheckKind::Boundedness) {
            out.monitors.push(bounded);
        }
    }
    Ok(())
}

fn coupling_suite(config: &ExperimentConfig, spec: &WelfareSpec, model: &ArrivalModel, out: &mut VerifyOutput) -> Result<()> {
    let v = &config.verify;
    let horizon = v.coupling_horizon;
    let options = config.solver.online_options();
    let hindsight = config.solver.hindsight_options();
    let runs: Vec<Result<(Vec<LemmaCheckRecord>, AllocationTrajectory)>> = (0..v.coupling_seeds)
        .into_par_iter()
        .map(|s| {
            let online = suite_sample(config, model, COUPLING, s, horizon)?;
            let (history, _) = suite_history(config, model, config.history, COUPLING, s, &online)?;
            let traj = run_online(AlgorithmKind::DualResolve, spec, &online, Some(&history), &options)?;
            let mut recs = Vec::new();
            if v.checks.contains(&CheckKind::Coupling) {
                for (name, coupling) in [("online", &online), ("history", &history)] {
                    let report = coupling_diagnostic(spec, &traj, coupling, &online, hindsight)?;
                    let context = format!("seed={s} coupling={name}");
                    recs.extend(report.records.into_iter().map(|r| r.with_context(&context)));
                }
            }
            Ok((recs, traj))
        })
        .collect();
    let mut trajectories = Vec::new();
    for run in runs {
        let (recs, traj) = run?;
        out.records.extend(recs);
        trajectories.push(traj);
    }
    if v.checks.contains(&CheckKind::ResolveSpread) && !trajectories.is_empty() {
        let mut steps: Vec<usize> = [1, horizon / 4, horizon / 2, 3 * horizon / 4, horizon]
            .into_iter()
            .filter(|&t| t >= 1)
            .collect();
        steps.dedup();
        let refs: Vec<&AllocationTrajectory> = trajectories.iter().collect();
        for (t, dev) in resolve_utility_spread(spec, &refs, &steps)? {
            out.monitors.push(LemmaCheckRecord::checked(
                lemma::RESOLVE_SPREAD,
                format!("t={t} runs={}", refs.len()),
                dev,
                f64::INFINITY,
                0.0,
            ));
        }
    }
    Ok(())
}

fn sensitivity_suite(config: &ExperimentConfig, spec: &WelfareSpec, model: &ArrivalModel, out: &mut VerifyOutput) -> Result<()> {
    let v = &config.verify;
    let bounds = config.sensitivity_box();
    let hindsight = config.solver.hindsight_options();
    let noise = HistoryMode::GaussianNoise {
        variance_scale: v.sensitivity_noise,
    };
    let pairs: Vec<Result<Vec<LemmaCheckRecord>>> = (0..v.sensitivity_pairs as u64)
        .into_par_iter()
        .map(|s| {
            let a = suite_sample(config, model, SENSITIVITY, s, v.sensitivity_horizon)?;
            let (b, _) = suite_history(config, model, noise, SENSITIVITY, s, &a)?;
            let context = format!("pair={s}");
            Ok(vec![
                check_r3_sensitivity(spec, &a, &b, bounds, hindsight)?.with_context(&format!("{context} order=ab")),
                check_r3_sensitivity(spec, &b, &a, bounds, hindsight)?.with_context(&format!("{context} order=ba")),
            ])
        })
        .collect();
    for p in pairs {
        out.records.extend(p?);
    }
    Ok(())
}

fn stability_suite(config: &ExperimentConfig, spec: &WelfareSpec, model: &ArrivalModel, out: &mut VerifyOutput) -> Result<()> {
    let v = &config.verify;
    let per = v.stability_trials_per_instance;
    let instances = v.stability_trials.div_ceil(per);
    let hindsight = config.solver.hindsight_options();
    let results: Vec<Result<Vec<LemmaCheckRecord>>> = (0..instances)
        .into_par_iter()
        .map(|idx| {
            let seq = suite_sample(config, model, STABILITY, idx as u64, v.stability_horizon)?;
            let k = 1 + idx % v.stability_max_drop;
            let trials = per.min(v.stability_trials - idx * per);
            let mut rng = stream_rng(config.base_seed, (STABILITY << 32) | idx as u64, StreamRole::Diagnostics);
            let context = format!("instance={idx}");
            Ok(match check_stability(spec, &seq, k, trials, &mut rng, hindsight) {
                Ok(recs) => recs.into_iter().map(|r| r.with_context(&context)).collect(),
                // The full instance itself left some agent without value.
                Err(Error::UnreachableAgent { .. }) => vec![
                    LemmaCheckRecord::skipped(lemma::MONOTONICITY, context.clone(), f64::NAN, 0.0),
                    LemmaCheckRecord::skipped(lemma::STABILITY, context, f64::NAN, f64::NAN),
                ],
                Err(e) => return Err(e),
            })
        })
        .collect();
    for r in results {
        out.records.extend(r?);
    }
    Ok(())
}

fn safe_volume_suite(config: &ExperimentConfig, out: &mut VerifyOutput) -> Result<()> {
    let v = &config.verify;
    let results: Vec<Result<LemmaCheckRecord>> = v
        .safe_volume
        .par_iter()
        .enumerate()
        .map(|(idx, case)| {
            let mut rng = stream_rng(config.base_seed, (SAFE_VOLUME << 32) | idx as u64, StreamRole::Diagnostics);
            let rec = check_safe_volume(&case.beta, case.iota, config.vbar, v.safe_volume_samples, &mut rng)?;
            Ok(rec.with_context(&format!("case={idx}")))
        })
        .collect();
    for r in results {
        out.records.push(r?);
    }
    Ok(())
}

/// Runs the configured subset of the lemma suite.
pub fn verify(config: &ExperimentConfig) -> Result<VerifyOutput> {
    config.validate()?;
    let spec = config.spec()?;
    let model = suite_model(&config.arrival_model()?);
    let checks = &config.verify.checks;
    let wants = |k| checks.contains(&k);
    let mut out = VerifyOutput::default();
    with_threads(config.threads, || -> Result<()> {
        if wants(CheckKind::Stability) {
            stability_suite(config, &spec, &model, &mut out)?;
        }
        if wants(CheckKind::SafeVolume) {
            safe_volume_suite(config, &mut out)?;
        }
        if [CheckKind::GreedyPerStep, CheckKind::GreedyOneStep, CheckKind::GreedyRule, CheckKind::Boundedness]
            .into_iter()
            .any(wants)
        {
            greedy_suite(config, &spec, &model, &mut out)?;
        }
        if wants(CheckKind::Coupling) || wants(CheckKind::ResolveSpread) {
            coupling_suite(config, &spec, &model, &mut out)?;
        }
        if wants(CheckKind::R3Sensitivity) {
            sensitivity_suite(config, &spec, &model, &mut out)?;
        }
        Ok(())
    })??;
    Ok(out)
}

/// [`verify`], then writes `lemma_checks.csv`, `monitors.csv` and
/// `effective_config.json` into `outputs.dir`.
pub fn cmd_verify(config: &ExperimentConfig) -> Result<VerifyOutput> {
    let out = verify(config)?;
    let dir = &config.outputs.dir;
    out.write_to(dir)?;
    write_effective_config(config, dir)?;
    Ok(out)
}
