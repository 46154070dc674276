//! Machine-readable solve/verify reports and the convergence table.
//!
//! Reports are plain serde structs with a fixed field order, so
//! re-running a command with the same config and seed reproduces the
//! output byte for byte. Wall-clock timing is deliberately kept out of
//! the report (it goes to stderr) to preserve that reproducibility.

use serde::{Deserialize, Serialize};

use crate::coupling::CouplingState;
use crate::problem::{CheckStatus, DiscountBound, ValidationReport};
use crate::reflect::PenaltyTraceEntry;
use crate::switching::RepresentationReport;

use super::config::RunConfig;

/// One named check with its outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub status: CheckStatus,
    pub detail: String,
}

impl CheckOutcome {
    pub fn pass(name: impl Into<String>, detail: impl Into<String>) -> Self {
        CheckOutcome {
            name: name.into(),
            status: CheckStatus::Pass,
            detail: detail.into(),
        }
    }

    pub fn warn(name: impl Into<String>, detail: impl Into<String>) -> Self {
        CheckOutcome {
            name: name.into(),
            status: CheckStatus::Warn,
            detail: detail.into(),
        }
    }

    pub fn fail(name: impl Into<String>, detail: impl Into<String>) -> Self {
        CheckOutcome {
            name: name.into(),
            status: CheckStatus::Fail,
            detail: detail.into(),
        }
    }

    pub fn gate(name: impl Into<String>, ok: bool, detail: impl Into<String>) -> Self {
        if ok {
            CheckOutcome::pass(name, detail)
        } else {
            CheckOutcome::fail(name, detail)
        }
    }
}

/// Grid parameters actually used.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolvedEcho {
    pub horizon: f64,
    pub steps: usize,
    pub dt: f64,
    pub coupled: bool,
    pub solver_path: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValuesSection {
    pub y0: Vec<f64>,
    pub z0: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleSection {
    pub value: Vec<f64>,
    pub deltas: Vec<f64>,
    pub stabilized: bool,
    pub budget: u32,
    pub exact_regime: bool,
    pub passes: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosticsSection {
    pub obstacle_max_violation: f64,
    pub skorokhod_residual: Vec<f64>,
    pub k_total: Vec<f64>,
    pub k_min_increment: f64,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub penalty_trace: Vec<PenaltyTraceEntry>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fixed_point: Option<CouplingState>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub oracle: Option<OracleSection>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub representation: Option<RepresentationReport>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub contraction_probe: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub backend_agreement_gap: Option<f64>,
    pub discount_advisory: DiscountBound,
    pub validation: ValidationReport,
}

/// The full report emitted by `solve` and `verify`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub schema_version: u32,
    pub command: String,
    pub config: RunConfig,
    pub resolved: ResolvedEcho,
    pub values: ValuesSection,
    pub diagnostics: DiagnosticsSection,
    pub checks: Vec<CheckOutcome>,
    pub status: String,
}

impl SolveReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }

    pub fn finalize_status(&mut self) {
        self.status = if self.all_passed() {
            "ok".into()
        } else {
            "check-failed".into()
        };
    }

    pub fn to_json_pretty(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        text
    }

    /// Per-mode value table for plotting by external tools.
    pub fn values_csv(&self) -> String {
        let mut out = String::from("mode,y0,z0,k_total,skorokhod_residual\n");
        for mode in 0..self.values.y0.len() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                mode,
                self.values.y0[mode],
                self.values.z0[mode],
                self.diagnostics.k_total[mode],
                self.diagnostics.skorokhod_residual[mode]
            ));
        }
        out
    }

    /// One human-readable line per check.
    pub fn check_summary(&self) -> String {
        self.checks
            .iter()
            .map(|c| {
                let tag = match c.status {
                    CheckStatus::Pass => "PASS",
                    CheckStatus::Warn => "WARN",
                    CheckStatus::Fail => "FAIL",
                };
                format!("[{tag}] {}: {}", c.name, c.detail)
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub level: usize,
    pub steps: usize,
    pub dt: f64,
    pub y0: Vec<f64>,
    pub z0: Vec<f64>,
    /// |y0 - previous level's y0| per mode.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub delta: Option<Vec<f64>>,
    /// log2(previous delta / delta) per mode.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub order: Option<Vec<f64>>,
}

/// Output of the convergence study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub modes: usize,
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceTable {
    pub fn to_csv(&self) -> String {
        let m = self.modes;
        let mut out = String::from("level,steps,dt");
        for i in 0..m {
            out.push_str(&format!(",y0_{i}"));
        }
        for i in 0..m {
            out.push_str(&format!(",z0_{i}"));
        }
        for i in 0..m {
            out.push_str(&format!(",delta_{i}"));
        }
        for i in 0..m {
            out.push_str(&format!(",order_{i}"));
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!("{},{},{}", row.level, row.steps, row.dt));
            for v in &row.y0 {
                out.push_str(&format!(",{v}"));
            }
            for v in &row.z0 {
                out.push_str(&format!(",{v}"));
            }
            for i in 0..m {
                match &row.delta {
                    Some(d) => out.push_str(&format!(",{}", d[i])),
                    None => out.push(','),
                }
            }
            for i in 0..m {
                match &row.order {
                    Some(o) => out.push_str(&format!(",{}", o[i])),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }
}
