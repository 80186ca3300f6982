use std::path::PathBuf;

use serde::Serialize;

use super::create_file;
use crate::error::{Error, Result};
use crate::instance::{csv_agent_names, load_csv};
use crate::solver::{solve_hindsight, SolverOptions};
use crate::welfare::WelfareSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct SolveArgs {
    /// Instance CSV.
    pub input: PathBuf,
    pub p: f64,
    /// Symmetric when absent.
    pub weights: Option<Vec<f64>>,
    /// The largest value in the file when absent.
    pub vbar: Option<f64>,
    pub tol: f64,
    /// Where to write the optimal plan.
    pub plan: Option<PathBuf>,
}

/// What `fairalloc solve` prints.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveSummary {
    pub opt: f64,
    pub log_opt: f64,
    pub u_star: Vec<f64>,
    /// `null` for agents pinned at zero (infinite price).
    pub beta_star: Vec<f64>,
    pub gap: f64,
    pub relative_gap: f64,
    pub certified: bool,
    pub iters: usize,
    pub agents: Vec<String>,
}

/// Solves the hindsight program of a CSV instance. Errors about a single
/// agent carry its column name.
pub fn cmd_solve(args: &SolveArgs) -> Result<SolveSummary> {
    let seq = load_csv(&args.input, args.vbar)?;
    let agents = csv_agent_names(&args.input)?;
    let spec = match &args.weights {
        Some(w) => {
            if w.len() != seq.n() {
                return Err(Error::InvalidParameter(format!(
                    "{} weights for {} agents",
                    w.len(),
                    seq.n()
                )));
            }
            WelfareSpec::new(args.p, w.clone())?
        }
        None => WelfareSpec::symmetric(args.p, seq.n())?,
    };
    let name = |i: usize| agents.get(i).cloned().unwrap_or_else(|| format!("#{i}"));
    let result = solve_hindsight(&spec, &seq, SolverOptions::with_tol(args.tol)).map_err(|e| match e {
        Error::UnreachableAgent { agent } => Error::Agent {
            name: name(agent),
            source: Box::new(e),
        },
        other => other,
    })?;
    if let Some(path) = &args.plan {
        let mut w = csv::Writer::from_writer(create_file(path)?);
        let header: Vec<String> = std::iter::once("t".to_string()).chain((0..seq.n()).map(name)).collect();
        w.write_record(&header)?;
        for (t, row) in result.plan.rows().enumerate() {
            let fields = std::iter::once(t.to_string()).chain(row.iter().map(|x| x.to_string()));
            w.write_record(fields)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    Ok(SolveSummary {
        opt: result.primal.exp(),
        log_opt: result.primal,
        relative_gap: result.relative_gap(),
        u_star: result.u_star,
        beta_star: result.beta_star,
        gap: result.gap,
        certified: result.certified,
        iters: result.iters,
        agents: (0..seq.n()).map(name).collect(),
    })
}
