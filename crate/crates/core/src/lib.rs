//! Online fair allocation of sequentially arriving items under CES
//! (generalized-mean) welfare.
//!
//! - [`welfare`]: the objective, its logarithmic calculus and Fenchel conjugate.
//! - [`instance`]: item sequences, allocation plans, CSV input and output.
//! - [`solver`]: certified hindsight and hybrid programs, plus a grid oracle.
//! - [`online`]: greedy, primal/dual re-solving and two baselines.
//! - [`arrivals`]: arrival models, history generation, realized shift.
//! - [`diagnostics`]: regret curves and numeric checks of structural lemmas.
//! - [`harness`]: the JSON-configured experiment driver behind the CLI.

pub mod arrivals;
pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod instance;
pub mod online;
pub mod solver;
pub mod welfare;

pub use error::{Error, Result};
pub use instance::{AllocationPlan, CumulativeUtility, ItemSequence, ValueRows};
pub use online::{run_online, AlgorithmKind, AllocationTrajectory, OnlineOptions};
pub use solver::{solve_hindsight, solve_hybrid, SolveMethod, SolveRequest, SolveResult, SolverOptions};
pub use welfare::WelfareSpec;
