//! Configuration-driven experiments: data generation, regret simulations,
//! the lemma suite and one-off hindsight solves.
//!
//! Every random draw comes from a stream keyed by `(base_seed,
//! replication, role)`, and replications are merged in order, so outputs do
//! not depend on the number of worker threads.

mod config;
mod gen;
mod simulate;
mod solve;
mod verify;

use std::path::Path;

use rand::Rng;

use crate::arrivals::{measure_l1_discrepancy, sample_history, sample_online, stream_rng, ArrivalModel, HistoryMode, ShiftReport, StreamRole};
use crate::error::{Error, Result};
use crate::instance::{perturb_general_position, ItemSequence};

pub use config::{
    ArrivalConfig, CheckKind, CheckpointPolicy, ExperimentConfig, GeneralPosition, OutputConfig, PoolConfig,
    SafeVolumeCase, SolverConfig, VerifyConfig, Weights, SCHEMA_VERSION,
};
pub use gen::cmd_gen;
pub use simulate::{cmd_simulate, simulate, Failure, ReplicationOutput, SimulationOutput, SummaryRow};
pub use solve::{cmd_solve, SolveArgs, SolveSummary};
pub use verify::{cmd_verify, verify, VerifyOutput};

/// The online sequence, history and realized shift of one replication.
#[derive(Debug, Clone)]
pub struct ReplicationData {
    pub online: ItemSequence,
    pub history: ItemSequence,
    pub shift: ShiftReport,
}

/// Draws replication `r`: online sequence, then history from it, each put
/// in general position when enabled. A history identical to the online
/// sequence (perfect foresight) is left untouched.
pub fn sample_replication(config: &ExperimentConfig, model: &ArrivalModel, replication: u64) -> Result<ReplicationData> {
    let seed = config.base_seed;
    let mut perturb = stream_rng(seed, replication, StreamRole::Perturb);
    let mut online = sample_online(model, config.horizon, &mut stream_rng(seed, replication, StreamRole::Online))?;
    let scale = config.perturb_scale();
    if let (Some(scale), false) = (scale, matches!(model, ArrivalModel::TraceReplay { .. })) {
        online = perturb_general_position(&online, scale, &mut perturb)?;
    }
    let mut history_rng = stream_rng(seed, replication, StreamRole::History);
    let (history, shift) = draw_history(model, config.history, &online, scale, &mut history_rng, &mut perturb)?;
    Ok(ReplicationData { online, history, shift })
}

fn draw_history<R: Rng + ?Sized>(
    model: &ArrivalModel,
    mode: HistoryMode,
    online: &ItemSequence,
    scale: Option<f64>,
    rng: &mut R,
    perturb: &mut R,
) -> Result<(ItemSequence, ShiftReport)> {
    let (mut history, mut shift) = sample_history(model, mode, online, rng)?;
    if let Some(scale) = scale {
        if history != *online {
            history = perturb_general_position(&history, scale, perturb)?;
            shift = measure_l1_discrepancy(online, &history)?;
        }
    }
    Ok((history, shift))
}

/// The model the lemma suite samples from: a replayed trace becomes an
/// i.i.d. pool so that sequences of any length can be drawn.
pub(crate) fn suite_model(model: &ArrivalModel) -> ArrivalModel {
    match model {
        ArrivalModel::TraceReplay { seq } => ArrivalModel::IidEmpirical { pool: seq.clone() },
        other => other.clone(),
    }
}

/// A suite sequence of length `len` from stream `index` of the diagnostics
/// family `family`, in general position when enabled.
pub(crate) fn suite_sample(
    config: &ExperimentConfig,
    model: &ArrivalModel,
    family: u64,
    index: u64,
    len: usize,
) -> Result<ItemSequence> {
    let key = (family << 32) | index;
    let mut rng = stream_rng(config.base_seed, key, StreamRole::Online);
    let seq = sample_online(model, len, &mut rng)?;
    match config.perturb_scale() {
        Some(scale) => perturb_general_position(&seq, scale, &mut stream_rng(config.base_seed, key, StreamRole::Perturb)),
        None => Ok(seq),
    }
}

/// History for a suite sequence drawn by [`suite_sample`].
pub(crate) fn suite_history(
    config: &ExperimentConfig,
    model: &ArrivalModel,
    mode: HistoryMode,
    family: u64,
    index: u64,
    online: &ItemSequence,
) -> Result<(ItemSequence, ShiftReport)> {
    let key = (family << 32) | index;
    let mut rng = stream_rng(config.base_seed, key, StreamRole::History);
    // A separate stream from the one that perturbed the online draw.
    let mut perturb = stream_rng(config.base_seed, key, StreamRole::Diagnostics);
    draw_history(model, mode, online, config.perturb_scale(), &mut rng, &mut perturb)
}

/// Runs `f` on a pool of `threads` workers, or on the global pool.
pub(crate) fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| Error::InvalidParameter(format!("cannot start {k} threads: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

pub(crate) fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub(crate) fn create_file(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(std::io::BufWriter::new(file))
}

/// Writes the effective config (defaults filled in, paths absolute).
pub(crate) fn write_effective_config(config: &ExperimentConfig, dir: &Path) -> Result<()> {
    let path = dir.join("effective_config.json");
    let mut text = serde_json::to_string_pretty(config)?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}
