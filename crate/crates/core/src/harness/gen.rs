use std::path::{Path, PathBuf};

use super::{create_dir, sample_replication, write_effective_config, ExperimentConfig};
use crate::arrivals::ArrivalModel;
use crate::error::Result;
use crate::instance::{save_csv, ItemSequence};

/// Writes the pool (or trace) and, for every replication, the online and
/// history sequences exactly as `simulate` would draw them. Returns the
/// files written.
pub fn cmd_gen(config: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    create_dir(out)?;
    let model = config.arrival_model()?;
    let mut written = Vec::new();
    let mut save = |seq: &ItemSequence, name: String| -> Result<()> {
        let path = out.join(name);
        save_csv(seq, &path)?;
        written.push(path);
        Ok(())
    };
    match &model {
        ArrivalModel::IidEmpirical { pool } | ArrivalModel::PeriodicBoost { pool, .. } => {
            save(pool, "pool.csv".into())?
        }
        ArrivalModel::TraceReplay { seq } => save(seq, "trace.csv".into())?,
        ArrivalModel::Synthetic { .. } => {}
    }
    for r in 0..config.replications {
        let data = sample_replication(config, &model, r)?;
        save(&data.online, format!("online_{r}.csv"))?;
        save(&data.history, format!("history_{r}.csv"))?;
    }
    let mut effective = config.clone();
    effective.outputs.dir = out.to_path_buf();
    write_effective_config(&effective, out)?;
    written.push(out.join("effective_config.json"));
    Ok(written)
}
