//! The JSON experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::arrivals::{stream_rng, ArrivalModel, HistoryMode, StreamRole, ValueLaw};
use crate::diagnostics::{geometric_checkpoints, SensitivityBox};
use crate::error::{Error, Result};
use crate::instance::{load_csv, perturb_general_position, ItemSequence};
use crate::online::{AlgorithmKind, OnlineOptions};
use crate::solver::{SolveMethod, SolverOptions};
use crate::welfare::WelfareSpec;

/// The only schema version this build reads.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub welfare: WelfareConfig,
    pub n: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    #[serde(default = "one")]
    pub vbar: f64,
    pub arrivals: ArrivalConfig,
    #[serde(default = "matched")]
    pub history: HistoryMode,
    #[serde(default = "default_algorithms")]
    pub algorithms: Vec<AlgorithmKind>,
    #[serde(default = "one_u64")]
    pub replications: u64,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub checkpoints: CheckpointPolicy,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub general_position: GeneralPosition,
    #[serde(default)]
    pub outputs: OutputConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    /// Worker threads for replications; the rayon default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

fn one() -> f64 {
    1.0
}

fn one_u64() -> u64 {
    1
}

fn matched() -> HistoryMode {
    HistoryMode::Matched
}

fn default_algorithms() -> Vec<AlgorithmKind> {
    vec![AlgorithmKind::Greedy]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WelfareConfig {
    pub p: f64,
    #[serde(default)]
    pub weights: Weights,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "RawWeights", into = "RawWeights")]
pub enum Weights {
    /// `"symmetric"`: every `B_i = 1/n`.
    #[default]
    Symmetric,
    Explicit(Vec<f64>),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RawWeights {
    Name(String),
    List(Vec<f64>),
}

impl TryFrom<RawWeights> for Weights {
    type Error = String;

    fn try_from(raw: RawWeights) -> std::result::Result<Self, String> {
        match raw {
            RawWeights::Name(s) if s == "symmetric" => Ok(Weights::Symmetric),
            RawWeights::Name(s) => Err(format!("expected \"symmetric\" or a list of weights, got \"{s}\"")),
            RawWeights::List(w) => Ok(Weights::Explicit(w)),
        }
    }
}

impl From<Weights> for RawWeights {
    fn from(w: Weights) -> Self {
        match w {
            Weights::Symmetric => RawWeights::Name("symmetric".into()),
            Weights::Explicit(w) => RawWeights::List(w),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum ArrivalConfig {
    /// Every entry drawn independently; uniform on `[0, v̄]` by default.
    Synthetic {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        law: Option<ValueLaw>,
    },
    IidEmpirical { pool: PoolConfig },
    PeriodicBoost {
        pool: PoolConfig,
        q: usize,
        #[serde(default = "two")]
        factor: f64,
    },
    /// An instance CSV with exactly `T` rows.
    TraceReplay { path: PathBuf },
}

fn two() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum PoolConfig {
    Csv {
        path: PathBuf,
    },
    /// Drawn once per experiment from the generation stream.
    Synthetic {
        rows: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        law: Option<ValueLaw>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case", deny_unknown_fields)]
pub enum CheckpointPolicy {
    /// `n, 2n, 4n, …` below `T`, then `T`, plus `extra`.
    Geometric {
        #[serde(default)]
        extra: Vec<usize>,
    },
    /// Exactly these points (`T` is always added).
    Explicit { points: Vec<usize> },
}

impl Default for CheckpointPolicy {
    fn default() -> Self {
        CheckpointPolicy::Geometric { extra: Vec::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Relative gap target of each per-step re-solve.
    pub tol: f64,
    pub max_iters: usize,
    pub warm_start: bool,
    pub safeguard_p0: bool,
    pub method: SolveMethod,
    /// Relative gap target of the hindsight and diagnostic solves.
    pub hindsight_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iters: 20_000,
            warm_start: true,
            safeguard_p0: true,
            method: SolveMethod::SmoothedNewton,
            hindsight_tol: 1e-8,
        }
    }
}

impl SolverConfig {
    pub fn online_options(&self) -> OnlineOptions {
        OnlineOptions {
            solver: SolverOptions {
                tol: self.tol,
                max_iters: self.max_iters,
                method: self.method,
            },
            warm_start: self.warm_start,
            safeguard_p0: self.safeguard_p0,
        }
    }

    pub fn hindsight_options(&self) -> SolverOptions {
        SolverOptions {
            tol: self.hindsight_tol,
            max_iters: self.max_iters,
            method: self.method,
        }
    }
}

/// Tiny noise on sampled sequences so that no two items share a value
/// ratio. Resampled pools repeat rows, which breaks general position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneralPosition {
    pub enabled: bool,
    /// Largest change of any value; `1e-9 · v̄` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
}

impl Default for GeneralPosition {
    fn default() -> Self {
        Self {
            enabled: true,
            scale: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Also write `trajectories.csv` with every winner.
    pub trajectories: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            trajectories: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    Stability,
    SafeVolume,
    GreedyPerStep,
    GreedyOneStep,
    GreedyRule,
    Boundedness,
    Coupling,
    R3Sensitivity,
    ResolveSpread,
}

impl CheckKind {
    pub const ALL: [CheckKind; 9] = [
        CheckKind::Stability,
        CheckKind::SafeVolume,
        CheckKind::GreedyPerStep,
        CheckKind::GreedyOneStep,
        CheckKind::GreedyRule,
        CheckKind::Boundedness,
        CheckKind::Coupling,
        CheckKind::R3Sensitivity,
        CheckKind::ResolveSpread,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafeVolumeCase {
    pub beta: Vec<f64>,
    pub iota: f64,
}

/// The lemma suite run by `verify`. Sequences come from the configured
/// arrival model (a replayed trace is resampled with replacement).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub checks: Vec<CheckKind>,
    /// Greedy runs of length `T`.
    pub greedy_seeds: u64,
    /// Floor of the averaged-utility box; `0.05 · v̄` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub box_floor: Option<f64>,
    pub burn_in: usize,
    pub stability_trials: usize,
    pub stability_horizon: usize,
    pub stability_trials_per_instance: usize,
    /// Drop counts cycle through `1..=stability_max_drop`.
    pub stability_max_drop: usize,
    pub safe_volume: Vec<SafeVolumeCase>,
    pub safe_volume_samples: usize,
    pub coupling_seeds: u64,
    pub coupling_horizon: usize,
    pub sensitivity_pairs: usize,
    pub sensitivity_horizon: usize,
    /// Variance scale of the Gaussian noise defining each coupled pair.
    pub sensitivity_noise: f64,
    /// `[0.05 v̄, v̄]` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sensitivity_box: Option<SensitivityBox>,
    /// Moves the greedy choice at this 1-based step of the first greedy
    /// run to a worse agent, to exercise the failure path.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inject_greedy_swap: Option<usize>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            checks: CheckKind::ALL.to_vec(),
            greedy_seeds: 20,
            box_floor: None,
            burn_in: 200,
            stability_trials: 1000,
            stability_horizon: 40,
            stability_trials_per_instance: 50,
            stability_max_drop: 3,
            safe_volume: vec![
                SafeVolumeCase {
                    beta: vec![1.0, 1.0],
                    iota: 0.05,
                },
                SafeVolumeCase {
                    beta: vec![0.5, 1.0, 2.0],
                    iota: 0.02,
                },
                SafeVolumeCase {
                    beta: vec![1.0, 1.5, 2.0, 3.0],
                    iota: 0.01,
                },
            ],
            safe_volume_samples: 1_000_000,
            coupling_seeds: 10,
            coupling_horizon: 200,
            sensitivity_pairs: 50,
            sensitivity_horizon: 200,
            sensitivity_noise: 1e-4,
            sensitivity_box: None,
            inject_greedy_swap: None,
        }
    }
}

fn config_err(path: &str, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.to_string(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    /// Parses and validates a config. Relative paths inside it are
    /// resolved against `base_dir`.
    pub fn from_json_str(text: &str, base_dir: &Path) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut config: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config_err(&path, e.into_inner().to_string())
        })?;
        config.resolve_paths(base_dir);
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let dir = if dir.as_os_str().is_empty() { PathBuf::from(".") } else { dir };
        Self::from_json_str(&text, &dir)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let base = if base.is_absolute() {
            base.to_path_buf()
        } else {
            std::env::current_dir().map(|d| d.join(base)).unwrap_or_else(|_| base.to_path_buf())
        };
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.arrivals {
            ArrivalConfig::IidEmpirical {
                pool: PoolConfig::Csv { path },
            }
            | ArrivalConfig::PeriodicBoost {
                pool: PoolConfig::Csv { path },
                ..
            }
            | ArrivalConfig::TraceReplay { path } => fix(path),
            _ => {}
        }
        fix(&mut self.outputs.dir);
    }

    /// Checks every invariant that does not need to read files.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(config_err(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            ));
        }
        let p = self.welfare.p;
        if !(p.is_finite() && p < 1.0) {
            return Err(config_err("welfare.p", format!("must be finite and < 1, got {p}")));
        }
        if self.n == 0 {
            return Err(config_err("n", "need at least one agent"));
        }
        if let Weights::Explicit(w) = &self.welfare.weights {
            if w.len() != self.n {
                return Err(config_err(
                    "welfare.weights",
                    format!("{} weights for n = {}", w.len(), self.n),
                ));
            }
        }
        self.spec().map_err(|e| config_err("welfare.weights", e.to_string()))?;
        if self.horizon < self.n {
            return Err(config_err("T", format!("T = {} must be at least n = {}", self.horizon, self.n)));
        }
        if !(self.vbar > 0.0 && self.vbar.is_finite()) {
            return Err(config_err("vbar", format!("must be positive, got {}", self.vbar)));
        }
        if self.replications == 0 {
            return Err(config_err("replications", "must be at least 1"));
        }
        if self.algorithms.is_empty() {
            return Err(config_err("algorithms", "list at least one algorithm"));
        }
        if self.threads == Some(0) {
            return Err(config_err("threads", "must be at least 1"));
        }
        if let HistoryMode::GaussianNoise { variance_scale } = self.history {
            if !(variance_scale >= 0.0 && variance_scale.is_finite()) {
                return Err(config_err("history.variance_scale", "must be finite and >= 0"));
            }
        }
        let s = &self.solver;
        if !(s.tol > 0.0) || !(s.hindsight_tol > 0.0) {
            return Err(config_err("solver", "tolerances must be positive"));
        }
        if s.max_iters == 0 {
            return Err(config_err("solver.max_iters", "must be positive"));
        }
        if let Some(scale) = self.general_position.scale {
            if !(scale > 0.0 && scale.is_finite()) {
                return Err(config_err("general_position.scale", "must be positive"));
            }
        }
        if let CheckpointPolicy::Explicit { points } = &self.checkpoints {
            if let Some(bad) = points.iter().find(|&&t| t < self.n || t > self.horizon) {
                return Err(config_err(
                    "checkpoints.points",
                    format!("{bad} outside [n, T] = [{}, {}]", self.n, self.horizon),
                ));
            }
        }
        let law_check = |law: &Option<ValueLaw>, path: &str| -> Result<()> {
            let law = law.unwrap_or(ValueLaw::Uniform { lo: 0.0, hi: self.vbar });
            ArrivalModel::Synthetic {
                law,
                n: self.n,
                vbar: self.vbar,
            }
            .validate()
            .map_err(|e| config_err(path, e.to_string()))
        };
        match &self.arrivals {
            ArrivalConfig::Synthetic { law } => law_check(law, "arrivals.law")?,
            ArrivalConfig::IidEmpirical { pool } | ArrivalConfig::PeriodicBoost { pool, .. } => match pool {
                PoolConfig::Csv { path } => {
                    if !path.is_file() {
                        return Err(config_err(
                            "arrivals.pool.path",
                            format!("no such file: {}", path.display()),
                        ));
                    }
                }
                PoolConfig::Synthetic { rows, law } => {
                    if *rows == 0 {
                        return Err(config_err("arrivals.pool.rows", "must be positive"));
                    }
                    law_check(law, "arrivals.pool.law")?;
                }
            },
            ArrivalConfig::TraceReplay { path } => {
                if !path.is_file() {
                    return Err(config_err("arrivals.path", format!("no such file: {}", path.display())));
                }
            }
        }
        if let ArrivalConfig::PeriodicBoost { q, factor, .. } = &self.arrivals {
            if *q == 0 || *q > self.n {
                return Err(config_err(
                    "arrivals.q",
                    format!("need 1 <= Q <= n = {}, got {q}; an agent group would be empty", self.n),
                ));
            }
            if !(*factor >= 0.0 && factor.is_finite()) {
                return Err(config_err("arrivals.factor", "must be finite and >= 0"));
            }
        }
        let v = &self.verify;
        if v.stability_horizon < self.n.max(2) || v.stability_max_drop == 0 || v.stability_trials_per_instance == 0 {
            return Err(config_err(
                "verify",
                "stability needs horizon >= max(n, 2), max_drop >= 1 and trials per instance >= 1",
            ));
        }
        if v.stability_max_drop >= v.stability_horizon {
            return Err(config_err("verify.stability_max_drop", "must be below the stability horizon"));
        }
        if v.coupling_horizon < self.n || v.sensitivity_horizon < self.n {
            return Err(config_err("verify", "coupling and sensitivity horizons must be at least n"));
        }
        for (k, case) in v.safe_volume.iter().enumerate() {
            if case.beta.is_empty() || case.beta.iter().any(|b| !(*b > 0.0 && b.is_finite())) || !(case.iota > 0.0) {
                return Err(config_err(
                    &format!("verify.safe_volume[{k}]"),
                    "needs positive prices and iota > 0",
                ));
            }
        }
        if let Some(t) = v.inject_greedy_swap {
            if t == 0 || t > self.horizon {
                return Err(config_err("verify.inject_greedy_swap", format!("step must be in 1..={}", self.horizon)));
            }
        }
        Ok(())
    }

    pub fn spec(&self) -> Result<WelfareSpec> {
        match &self.welfare.weights {
            Weights::Symmetric => WelfareSpec::symmetric(self.welfare.p, self.n),
            Weights::Explicit(w) => WelfareSpec::new(self.welfare.p, w.clone()),
        }
    }

    pub fn checkpoints(&self) -> Vec<usize> {
        match &self.checkpoints {
            CheckpointPolicy::Geometric { extra } => geometric_checkpoints(self.n, self.horizon, extra),
            CheckpointPolicy::Explicit { points } => {
                let mut pts: Vec<usize> = points.iter().copied().chain([self.horizon]).collect();
                pts.sort_unstable();
                pts.dedup();
                pts
            }
        }
    }

    pub fn perturb_scale(&self) -> Option<f64> {
        self.general_position
            .enabled
            .then(|| self.general_position.scale.unwrap_or(1e-9 * self.vbar))
    }

    pub fn box_floor(&self) -> f64 {
        self.verify.box_floor.unwrap_or(0.05 * self.vbar)
    }

    pub fn sensitivity_box(&self) -> SensitivityBox {
        self.verify.sensitivity_box.unwrap_or(SensitivityBox {
            u_lo: 0.05 * self.vbar,
            u_hi: self.vbar,
        })
    }

    /// Builds the arrival model, reading or generating its pool. Pools and
    /// traces are read with this config's `v̄`; a replayed trace is put in
    /// general position once, here, so a matched history equals it.
    pub fn arrival_model(&self) -> Result<ArrivalModel> {
        let default_law = ValueLaw::Uniform { lo: 0.0, hi: self.vbar };
        let load_pool = |pool: &PoolConfig| -> Result<ItemSequence> {
            match pool {
                PoolConfig::Csv { path } => {
                    let seq = load_csv(path, Some(self.vbar)).map_err(|e| config_err("arrivals.pool.path", e.to_string()))?;
                    if seq.n() != self.n {
                        return Err(config_err(
                            "arrivals.pool.path",
                            format!("pool has {} agents but n = {}", seq.n(), self.n),
                        ));
                    }
                    Ok(seq)
                }
                PoolConfig::Synthetic { rows, law } => {
                    let model = ArrivalModel::Synthetic {
                        law: law.unwrap_or(default_law),
                        n: self.n,
                        vbar: self.vbar,
                    };
                    let mut rng = stream_rng(self.base_seed, 0, StreamRole::Generate);
                    crate::arrivals::sample_online(&model, *rows, &mut rng)
                }
            }
        };
        let model = match &self.arrivals {
            ArrivalConfig::Synthetic { law } => ArrivalModel::Synthetic {
                law: law.unwrap_or(default_law),
                n: self.n,
                vbar: self.vbar,
            },
            ArrivalConfig::IidEmpirical { pool } => ArrivalModel::IidEmpirical { pool: load_pool(pool)? },
            ArrivalConfig::PeriodicBoost { pool, q, factor } => ArrivalModel::PeriodicBoost {
                pool: load_pool(pool)?,
                q: *q,
                factor: *factor,
            },
            ArrivalConfig::TraceReplay { path } => {
                let mut seq = load_csv(path, Some(self.vbar)).map_err(|e| config_err("arrivals.path", e.to_string()))?;
                if seq.n() != self.n {
                    return Err(config_err(
                        "arrivals.path",
                        format!("trace has {} agents but n = {}", seq.n(), self.n),
                    ));
                }
                if seq.len() != self.horizon {
                    return Err(config_err(
                        "arrivals.path",
                        format!("trace has {} rows but T = {}", seq.len(), self.horizon),
                    ));
                }
                if let Some(scale) = self.perturb_scale() {
                    let mut rng = stream_rng(self.base_seed, 0, StreamRole::Perturb);
                    seq = perturb_general_position(&seq, scale, &mut rng)?;
                }
                ArrivalModel::TraceReplay { seq }
            }
        };
        model.validate()?;
        Ok(model)
    }
}
