//! File-driven entry points: run configurations, bundled presets, the
//! solve/verify/convergence commands and their reproducible reports.
//!
//! Identical config + seed reproduces a report byte for byte; anything
//! nondeterministic (wall-clock timing) stays out of the report.

mod commands;
mod config;
mod presets;
mod report;

pub use commands::{cmd_convergence, cmd_solve, cmd_verify, load_config};
pub use config::{
    CostConfig, DriverConfig, LatticeConfig, OracleConfig, ProblemConfig, ResolvedSetup, RunConfig,
    SolverConfig, StateKind, SCHEMA_VERSION,
};
pub use presets::{preset, PRESET_NAMES};
pub use report::{
    CheckOutcome, ConvergenceRow, ConvergenceTable, DiagnosticsSection, OracleSection,
    ResolvedEcho, SolveReport, ValuesSection,
};
