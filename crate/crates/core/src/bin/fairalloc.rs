use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fairalloc::harness::{cmd_gen, cmd_simulate, cmd_solve, cmd_verify, ExperimentConfig, SolveArgs, Weights};
use fairalloc::Error;

#[derive(Parser)]
#[command(name = "fairalloc", version, about = "Online fair allocation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the pool and every replication's online and history sequences.
    Gen(Common),
    /// Run every algorithm on every replication and write regret curves.
    Simulate(Common),
    /// Run the lemma suite; exits with status 1 if any check fails.
    Verify(Common),
    /// Solve the hindsight program of one instance CSV.
    Solve(Solve),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `outputs.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed (overrides `base_seed`).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replications: Option<u64>,
    /// Worker threads (overrides `threads`).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct Solve {
    /// Instance CSV.
    #[arg(long)]
    input: PathBuf,
    /// Read p, weights and vbar from this experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    p: Option<f64>,
    /// Comma-separated weights, or `symmetric`.
    #[arg(long)]
    weights: Option<String>,
    #[arg(long)]
    vbar: Option<f64>,
    /// Write the optimal allocation to this CSV.
    #[arg(long)]
    plan: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
}

fn absolute(path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        std::env::current_dir().map(|d| d.join(path)).unwrap_or_else(|_| path.to_path_buf())
    }
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, Error> {
        let mut config = ExperimentConfig::load(&self.config)?;
        if let Some(out) = &self.out {
            config.outputs.dir = absolute(out);
        }
        if let Some(seed) = self.seed {
            config.base_seed = seed;
        }
        if let Some(r) = self.replications {
            config.replications = r;
        }
        if let Some(t) = self.threads {
            config.threads = Some(t);
        }
        config.validate()?;
        Ok(config)
    }
}

fn parse_weights(text: &str) -> Result<Option<Vec<f64>>, Error> {
    if text.trim() == "symmetric" {
        return Ok(None);
    }
    text.split(',')
        .map(|w| {
            w.trim()
                .parse::<f64>()
                .map_err(|e| Error::InvalidParameter(format!("bad weight `{w}`: {e}")))
        })
        .collect::<Result<Vec<_>, _>>()
        .map(Some)
}

fn solve_args(s: &Solve) -> Result<SolveArgs, Error> {
    let config = s.config.as_ref().map(ExperimentConfig::load).transpose()?;
    let mut args = SolveArgs {
        input: s.input.clone(),
        p: 0.0,
        weights: None,
        vbar: None,
        tol: s.tol,
        plan: s.plan.clone(),
    };
    if let Some(c) = &config {
        args.p = c.welfare.p;
        args.vbar = Some(c.vbar);
        if let Weights::Explicit(w) = &c.welfare.weights {
            args.weights = Some(w.clone());
        }
    }
    if let Some(p) = s.p {
        args.p = p;
    }
    if let Some(w) = &s.weights {
        args.weights = parse_weights(w)?;
    }
    if s.vbar.is_some() {
        args.vbar = s.vbar;
    }
    Ok(args)
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Gen(c) => {
            let config = c.load()?;
            for path in cmd_gen(&config, &config.outputs.dir)? {
                println!("{}", path.display());
            }
        }
        Command::Simulate(c) => {
            let config = c.load()?;
            let out = cmd_simulate(&config)?;
            let failures = out.failures().count();
            eprintln!(
                "{} replications, {} failures; results in {}",
                out.replications.len(),
                failures,
                config.outputs.dir.display()
            );
        }
        Command::Verify(c) => {
            let config = c.load()?;
            let out = cmd_verify(&config)?;
            let bad: Vec<_> = out.violations().collect();
            eprintln!(
                "{} checks, {} violations; results in {}",
                out.records.len(),
                bad.len(),
                config.outputs.dir.display()
            );
            for r in bad.iter().take(20) {
                eprintln!("violated: {} [{}] lhs={} rhs={}", r.lemma, r.case_id, r.lhs, r.rhs);
            }
            if !bad.is_empty() {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Solve(s) => {
            let summary = cmd_solve(&solve_args(&s)?)?;
            println!("{}", serde_json::to_string(&summary)?);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
