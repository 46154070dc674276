//! Run configuration: a JSON schema with documented defaults, a registry
//! of named driver/cost forms, and resolution into a problem + lattice.
//!
//! Evaluators are selected from the registry rather than supplied as
//! code so that a config file fully reproduces a run.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{truncate_horizon, Lattice, StateModel, TimeGrid};
use crate::problem::{
    AssumptionMode, DriverSpec, LipschitzModulus, ModeSet, SwitchingCostSpec, SwitchingProblem,
};
use crate::reflect::{Backend, PenaltySchedule};

pub const SCHEMA_VERSION: u32 = 1;

/// Safety factor on the inner-contraction step bound `dt (L + r) < 1`.
const STEP_SAFETY: f64 = 0.5;
const DEFAULT_DT: f64 = 0.01;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Schema version of this file (currently 1).
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    /// Seed driving every sampled quantity (validation points, probe
    /// pairs, strategy samples). Default 0.
    #[serde(default)]
    pub seed: u64,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub lattice: LatticeConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
}

fn default_schema_version() -> u32 {
    SCHEMA_VERSION
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    /// Number of modes (>= 1).
    pub modes: usize,
    /// Discount rate r > 0.
    pub discount: f64,
    /// Which switching-cost hypothesis the instance claims. Default
    /// "h2-prime".
    #[serde(default = "default_assumption_mode")]
    pub assumption_mode: AssumptionMode,
    /// One driver per mode, from the registry of named forms.
    pub drivers: Vec<DriverConfig>,
    pub costs: CostConfig,
}

fn default_assumption_mode() -> AssumptionMode {
    AssumptionMode::H2Prime
}

/// Registry of driver forms.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DriverConfig {
    /// `f = c`
    Constant { c: f64 },
    /// `f_i = c + weight * exp(-decay t) * y^i`
    DecayOwnY { c: f64, weight: f64, decay: f64 },
    /// `f_i = c + weight * exp(-decay t) * y^{(i+1) mod m}` — the
    /// cyclically coupled form (for two modes, each reads the other).
    DecayCoupling { c: f64, weight: f64, decay: f64 },
    /// `f = c + weight * exp(-decay t) * z`
    DecayZ { c: f64, weight: f64, decay: f64 },
    /// `f = c + slope * x[0]`; `b_f` must bound `|f(t, x, 0, 0)|` over
    /// the lattice's state range.
    LinearState { c: f64, slope: f64, b_f: f64 },
    /// `f = c + slope * tanh(x[0])` — state-dependent but bounded by
    /// `|c| + |slope|` on any state range.
    BoundedState { c: f64, slope: f64 },
}

impl DriverConfig {
    fn build(&self, mode: usize, modes: usize) -> Result<DriverSpec> {
        match *self {
            DriverConfig::Constant { c } => Ok(DriverSpec::constant(c)),
            DriverConfig::DecayOwnY { c, weight, decay } => {
                check_decay(decay)?;
                Ok(DriverSpec::new(
                    move |t: f64, _: &[f64], y: &[f64], _| {
                        c + weight * (-decay * t).exp() * y[mode]
                    },
                    LipschitzModulus::ExponentialDecay {
                        level: weight.abs(),
                        decay,
                    },
                    c.abs(),
                )
                .with_own_y(true))
            }
            DriverConfig::DecayCoupling { c, weight, decay } => {
                check_decay(decay)?;
                let other = (mode + 1) % modes;
                Ok(DriverSpec::new(
                    move |t: f64, _: &[f64], y: &[f64], _| {
                        c + weight * (-decay * t).exp() * y[other]
                    },
                    LipschitzModulus::ExponentialDecay {
                        level: weight.abs(),
                        decay,
                    },
                    c.abs(),
                )
                .with_own_y(false)
                .with_cross_y(other != mode))
            }
            DriverConfig::DecayZ { c, weight, decay } => {
                check_decay(decay)?;
                Ok(DriverSpec::new(
                    move |t: f64, _: &[f64], _: &[f64], z: f64| c + weight * (-decay * t).exp() * z,
                    LipschitzModulus::ExponentialDecay {
                        level: weight.abs(),
                        decay,
                    },
                    c.abs(),
                )
                .with_own_y(false)
                .with_z(true))
            }
            DriverConfig::LinearState { c, slope, b_f } => {
                if b_f < c.abs() {
                    return Err(Error::Config(format!(
                        "linear-state driver declares b_f = {b_f} below |c| = {}",
                        c.abs()
                    )));
                }
                Ok(DriverSpec::new(
                    move |_: f64, x: &[f64], _: &[f64], _| c + slope * x[0],
                    LipschitzModulus::zero(),
                    b_f,
                )
                .with_own_y(false))
            }
            DriverConfig::BoundedState { c, slope } => Ok(DriverSpec::new(
                move |_: f64, x: &[f64], _: &[f64], _| c + slope * x[0].tanh(),
                LipschitzModulus::zero(),
                c.abs() + slope.abs(),
            )
            .with_own_y(false)),
        }
    }
}

fn check_decay(decay: f64) -> Result<()> {
    if !(decay > 0.0) {
        return Err(Error::Config(format!(
            "decay must be positive for integrability, got {decay}"
        )));
    }
    Ok(())
}

/// Registry of switching-cost forms.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CostConfig {
    /// Constant `value` for every off-diagonal pair, zero diagonal.
    Uniform { value: f64 },
    /// Table-driven costs, `values[i][j] = g_ij`.
    Matrix { values: Vec<Vec<f64>> },
}

impl CostConfig {
    fn build(&self, modes: usize) -> Result<SwitchingCostSpec> {
        match self {
            CostConfig::Uniform { value } => Ok(SwitchingCostSpec::uniform(*value)),
            CostConfig::Matrix { values } => {
                if values.len() != modes {
                    return Err(Error::Config(format!(
                        "cost matrix has {} rows for {modes} modes",
                        values.len()
                    )));
                }
                SwitchingCostSpec::from_matrix(values.clone())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StateKind {
    DeterministicPath,
    RecombiningBinomial,
    RecombiningTrinomial,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    /// State chain kind. Default "deterministic-path".
    #[serde(default = "default_state_kind")]
    pub kind: StateKind,
    /// Initial state vector. Default `[0.0]`.
    #[serde(default = "default_x0")]
    pub x0: Vec<f64>,
    /// Constant drift of the first state component. Default 0.
    #[serde(default)]
    pub drift: f64,
    /// Constant volatility (tree kinds). Default 0.
    #[serde(default)]
    pub vol: f64,
    /// Use the geometric state map instead of the arithmetic one.
    #[serde(default)]
    pub geometric: bool,
    /// Number of time steps; computed from `dt` when absent.
    #[serde(default)]
    pub steps: Option<usize>,
    /// Truncation horizon; computed from `tail_tolerance` when absent.
    #[serde(default)]
    pub horizon: Option<f64>,
    /// Discounted-tail tolerance used to truncate the horizon. Default 1e-4.
    #[serde(default = "default_tail_tolerance")]
    pub tail_tolerance: f64,
    /// Target time step for the automatic step count. Default 0.01,
    /// tightened automatically to keep the inner iteration contractive.
    #[serde(default)]
    pub dt: Option<f64>,
}

fn default_state_kind() -> StateKind {
    StateKind::DeterministicPath
}

fn default_x0() -> Vec<f64> {
    vec![0.0]
}

fn default_tail_tolerance() -> f64 {
    1e-4
}

impl Default for LatticeConfig {
    fn default() -> Self {
        LatticeConfig {
            kind: default_state_kind(),
            x0: default_x0(),
            drift: 0.0,
            vol: 0.0,
            geometric: false,
            steps: None,
            horizon: None,
            tail_tolerance: default_tail_tolerance(),
            dt: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    /// Reflected-system backend for uncoupled problems. Default
    /// "projection".
    #[serde(default = "default_backend")]
    pub backend: Backend,
    /// Penalty levels; default the doubling schedule 1..64.
    #[serde(default = "default_penalty_levels")]
    pub penalty_levels: Vec<u32>,
    /// Stopping tolerance of the Picard iteration. Default 1e-8.
    #[serde(default = "default_fixed_point_tol")]
    pub fixed_point_tol: f64,
    /// Maximum Picard iterations. Default 30.
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    /// Cross-validate the fixed point with one penalization run.
    #[serde(default)]
    pub cross_validate: bool,
}

fn default_backend() -> Backend {
    Backend::Projection
}

fn default_penalty_levels() -> Vec<u32> {
    PenaltySchedule::default().levels
}

fn default_fixed_point_tol() -> f64 {
    1e-8
}

fn default_max_iterations() -> usize {
    30
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            backend: default_backend(),
            penalty_levels: default_penalty_levels(),
            fixed_point_tol: default_fixed_point_tol(),
            max_iterations: default_max_iterations(),
            cross_validate: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    /// Switch budget of the dynamic-programming oracle. Default 3.
    #[serde(default = "default_switch_budget")]
    pub switch_budget: u32,
    /// Number of seeded random strategies per start mode. Default 50.
    #[serde(default = "default_strategy_samples")]
    pub strategy_samples: usize,
    /// Profile pairs for the contraction probe. Default 10.
    #[serde(default = "default_probe_pairs")]
    pub probe_pairs: usize,
}

fn default_switch_budget() -> u32 {
    3
}

fn default_strategy_samples() -> usize {
    50
}

fn default_probe_pairs() -> usize {
    10
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            switch_budget: default_switch_budget(),
            strategy_samples: default_strategy_samples(),
            probe_pairs: default_probe_pairs(),
        }
    }
}

/// A problem and lattice built from a config, with the resolved grid
/// parameters echoed.
pub struct ResolvedSetup {
    pub problem: SwitchingProblem,
    pub lattice: Lattice,
    pub horizon: f64,
    pub steps: usize,
    pub dt: f64,
}

impl RunConfig {
    /// Parses a config from JSON text; errors carry line/field context.
    pub fn from_json(text: &str) -> Result<Self> {
        let config: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if config.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                config.schema_version
            )));
        }
        Ok(config)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Builds the problem instance and lattice.
    ///
    /// `include_penalty_constraint` tightens the automatic step size so
    /// the largest configured penalty level stays solvable
    /// (`dt (u + n m + r) < 1` with margin).
    pub fn resolve(&self, include_penalty_constraint: bool) -> Result<ResolvedSetup> {
        let m = self.problem.modes;
        if m == 0 {
            return Err(Error::Config("problem.modes must be >= 1".into()));
        }
        if self.problem.drivers.len() != m {
            return Err(Error::Config(format!(
                "problem.drivers has {} entries for {m} modes",
                self.problem.drivers.len()
            )));
        }
        let drivers: Vec<DriverSpec> = self
            .problem
            .drivers
            .iter()
            .enumerate()
            .map(|(i, d)| d.build(i, m))
            .collect::<Result<_>>()?;
        let costs = self.problem.costs.build(m)?;
        let state = self.state_model()?;
        let problem = SwitchingProblem::new(
            ModeSet::new(m)?,
            drivers,
            costs,
            self.problem.discount,
            state,
            self.problem.assumption_mode,
        )?;

        let r = problem.discount();
        let bound = problem.max_zero_point_bound();
        let horizon = match self.lattice.horizon {
            Some(t) => {
                if !(t > 0.0) {
                    return Err(Error::Config(format!(
                        "lattice.horizon must be positive, got {t}"
                    )));
                }
                t
            }
            None => {
                if bound > 0.0 {
                    truncate_horizon(r, bound, self.lattice.tail_tolerance)?.max(1.0)
                } else {
                    1.0
                }
            }
        };

        let mut rate_bound = problem.lipschitz_sup() + r;
        if include_penalty_constraint {
            let n_max = self
                .solver
                .penalty_levels
                .iter()
                .copied()
                .max()
                .unwrap_or(0) as f64;
            rate_bound += n_max * m as f64;
        }
        let dt_cap = STEP_SAFETY / rate_bound;
        let steps = match self.lattice.steps {
            Some(s) => {
                if s == 0 {
                    return Err(Error::Config("lattice.steps must be >= 1".into()));
                }
                s
            }
            None => {
                let dt_target = self.lattice.dt.unwrap_or(DEFAULT_DT).min(dt_cap);
                if !(dt_target > 0.0) {
                    return Err(Error::Config("lattice.dt must be positive".into()));
                }
                (horizon / dt_target).ceil() as usize
            }
        };
        let grid = TimeGrid::new(horizon, steps, r)?;
        let dt = grid.dt();
        let lattice = Lattice::build(problem.state(), grid)?;
        Ok(ResolvedSetup {
            problem,
            lattice,
            horizon,
            steps,
            dt,
        })
    }

    fn state_model(&self) -> Result<StateModel> {
        let x0 = self.lattice.x0.clone();
        if x0.is_empty() {
            return Err(Error::Config(
                "lattice.x0 must have at least one component".into(),
            ));
        }
        let drift = self.lattice.drift;
        let vol = self.lattice.vol;
        Ok(match self.lattice.kind {
            StateKind::DeterministicPath => StateModel::path(move |t| {
                let mut x = x0.clone();
                x[0] += drift * t;
                x
            }),
            StateKind::RecombiningBinomial => {
                if self.lattice.geometric {
                    StateModel::RecombiningBinomial {
                        x0,
                        map: crate::lattice::StateMap::Geometric {
                            drift: std::sync::Arc::new(move |_| drift),
                            vol: std::sync::Arc::new(move |_| vol),
                        },
                    }
                } else {
                    StateModel::binomial_arithmetic(x0, drift, vol)
                }
            }
            StateKind::RecombiningTrinomial => {
                if self.lattice.geometric {
                    StateModel::RecombiningTrinomial {
                        x0,
                        map: crate::lattice::StateMap::Geometric {
                            drift: std::sync::Arc::new(move |_| drift),
                            vol: std::sync::Arc::new(move |_| vol),
                        },
                    }
                } else {
                    StateModel::trinomial_arithmetic(x0, drift, vol)
                }
            }
        })
    }

    pub fn penalty_schedule(&self) -> PenaltySchedule {
        PenaltySchedule {
            levels: self.solver.penalty_levels.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_json() -> &'static str {
        r#"{
            "problem": {
                "modes": 2,
                "discount": 1.0,
                "drivers": [
                    {"kind": "constant", "c": 2.0},
                    {"kind": "constant", "c": 1.0}
                ],
                "costs": {"kind": "uniform", "value": 0.5}
            }
        }"#
    }

    #[test]
    fn defaults_fill_in() {
        let config = RunConfig::from_json(minimal_json()).unwrap();
        assert_eq!(config.schema_version, SCHEMA_VERSION);
        assert_eq!(config.seed, 0);
        assert_eq!(config.solver.backend, Backend::Projection);
        assert_eq!(config.oracle.switch_budget, 3);
        let setup = config.resolve(false).unwrap();
        assert_eq!(setup.problem.mode_count(), 2);
        assert!(setup.dt <= 0.01 + 1e-12);
    }

    #[test]
    fn missing_discount_names_the_field() {
        let bad = r#"{"problem": {"modes": 1, "drivers": [{"kind": "constant", "c": 1.0}], "costs": {"kind": "uniform", "value": 0.5}}}"#;
        let err = RunConfig::from_json(bad).unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("discount"),
            "message should name the field: {msg}"
        );
    }

    #[test]
    fn penalty_constraint_tightens_steps() {
        let config = RunConfig::from_json(minimal_json()).unwrap();
        let loose = config.resolve(false).unwrap();
        let tight = config.resolve(true).unwrap();
        assert!(tight.steps > loose.steps);
        // tightened dt keeps the largest level solvable
        let n_max = config.solver.penalty_levels.iter().max().unwrap();
        assert!(tight.dt * (*n_max as f64 * 2.0 + 1.0) < 1.0);
    }

    #[test]
    fn config_roundtrips_deterministically() {
        let config = RunConfig::from_json(minimal_json()).unwrap();
        let a = config.to_json_pretty();
        let b = RunConfig::from_json(&a).unwrap().to_json_pretty();
        assert_eq!(a, b);
    }

    #[test]
    fn driver_registry_rejects_bad_decay() {
        let bad = r#"{
            "problem": {
                "modes": 1,
                "discount": 1.0,
                "drivers": [{"kind": "decay-own-y", "c": 1.0, "weight": 0.5, "decay": 0.0}],
                "costs": {"kind": "uniform", "value": 0.5}
            }
        }"#;
        let config = RunConfig::from_json(bad).unwrap();
        assert!(config.resolve(false).is_err());
    }

    #[test]
    fn cost_matrix_shape_checked() {
        let bad = r#"{
            "problem": {
                "modes": 2,
                "discount": 1.0,
                "drivers": [
                    {"kind": "constant", "c": 1.0},
                    {"kind": "constant", "c": 2.0}
                ],
                "costs": {"kind": "matrix", "values": [[0.0, 0.5]]}
            }
        }"#;
        let config = RunConfig::from_json(bad).unwrap();
        assert!(config.resolve(false).is_err());
    }
}
