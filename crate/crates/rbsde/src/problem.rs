//! Switching-problem instances and standing-assumption validation.
//!
//! A problem bundles the mode set, one driver per mode, the switching
//! costs, the discount rate and the state model. Before any solve, the
//! standing hypotheses are checked: integrability of the Lipschitz
//! modulus in closed form, and the Lipschitz inequality, cost positivity
//! and the triangle inequality by seeded sampling (they are universally
//! quantified, so they can only be spot-checked at runtime).

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{StateMap, StateModel};

/// Default slack added to the discount threshold in place of the
/// non-constructive proof constants.
pub const DEFAULT_DISCOUNT_MARGIN: f64 = 0.25;

/// The finite set of operating modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModeSet {
    count: usize,
}

impl ModeSet {
    pub fn new(count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidInput("mode count must be >= 1".into()));
        }
        Ok(ModeSet { count })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Modes other than `mode`.
    pub fn others(&self, mode: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.count).filter(move |&j| j != mode)
    }
}

/// Deterministic bound `u(t)` on the drivers' Lipschitz constant in
/// `(y, z)`. Both supported forms admit closed-form integrals of `u` and
/// `u^2`, which is what the validation gate needs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "kebab-case")]
pub enum LipschitzModulus {
    /// `u(t) = level` for `t <= window_end`, zero afterwards.
    ConstantOnWindow { level: f64, window_end: f64 },
    /// `u(t) = level * exp(-decay * t)`.
    ExponentialDecay { level: f64, decay: f64 },
}

impl LipschitzModulus {
    /// The modulus of a driver with no `(y, z)` dependence.
    pub fn zero() -> Self {
        LipschitzModulus::ConstantOnWindow {
            level: 0.0,
            window_end: 1.0,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            LipschitzModulus::ConstantOnWindow { level, window_end } => {
                if t <= window_end {
                    level
                } else {
                    0.0
                }
            }
            LipschitzModulus::ExponentialDecay { level, decay } => level * (-decay * t).exp(),
        }
    }

    /// `sup_t u(t)`, attained at t = 0 for both forms.
    pub fn sup(&self) -> f64 {
        match *self {
            LipschitzModulus::ConstantOnWindow { level, .. } => level,
            LipschitzModulus::ExponentialDecay { level, .. } => level,
        }
    }

    /// `int_0^inf u(t) dt`, `None` when divergent.
    pub fn integral(&self) -> Option<f64> {
        match *self {
            LipschitzModulus::ConstantOnWindow { level, window_end } => {
                if level == 0.0 {
                    Some(0.0)
                } else if window_end.is_finite() {
                    Some(level * window_end)
                } else {
                    None
                }
            }
            LipschitzModulus::ExponentialDecay { level, decay } => {
                if level == 0.0 {
                    Some(0.0)
                } else if decay > 0.0 {
                    Some(level / decay)
                } else {
                    None
                }
            }
        }
    }

    /// `int_0^inf u(t)^2 dt`, `None` when divergent.
    pub fn integral_squared(&self) -> Option<f64> {
        match *self {
            LipschitzModulus::ConstantOnWindow { level, window_end } => {
                if level == 0.0 {
                    Some(0.0)
                } else if window_end.is_finite() {
                    Some(level * level * window_end)
                } else {
                    None
                }
            }
            LipschitzModulus::ExponentialDecay { level, decay } => {
                if level == 0.0 {
                    Some(0.0)
                } else if decay > 0.0 {
                    Some(level * level / (2.0 * decay))
                } else {
                    None
                }
            }
        }
    }

    fn well_formed(&self) -> Result<()> {
        match *self {
            LipschitzModulus::ConstantOnWindow { level, window_end } => {
                if level < 0.0 || window_end <= 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "window modulus requires level >= 0 and window_end > 0 (got {level}, {window_end})"
                    )));
                }
            }
            LipschitzModulus::ExponentialDecay { level, decay } => {
                // decay <= 0 with a positive level means a non-integrable
                // modulus; representable, flagged by validation.
                if level < 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "modulus level must be nonnegative (got {level})"
                    )));
                }
                let _ = decay;
            }
        }
        Ok(())
    }
}

/// Driver evaluator `f_i(t, x, y, z)`, with `y` the full mode vector.
pub type DriverFn = Arc<dyn Fn(f64, &[f64], &[f64], f64) -> f64 + Send + Sync>;

/// One mode's generator, its declared Lipschitz modulus and bounds.
#[derive(Clone)]
pub struct DriverSpec {
    eval: DriverFn,
    lipschitz: LipschitzModulus,
    /// Bound on `|f(t, x, 0, 0)|` over the state range.
    zero_point_bound: f64,
    /// Whether the driver reads its own component `y^i`.
    pub depends_on_own_y: bool,
    /// Whether the driver reads components `y^j`, `j != i`.
    pub depends_on_cross_y: bool,
    pub depends_on_z: bool,
}

impl DriverSpec {
    pub fn new(
        eval: impl Fn(f64, &[f64], &[f64], f64) -> f64 + Send + Sync + 'static,
        lipschitz: LipschitzModulus,
        zero_point_bound: f64,
    ) -> Self {
        DriverSpec {
            eval: Arc::new(eval),
            lipschitz,
            zero_point_bound,
            depends_on_own_y: true,
            depends_on_cross_y: false,
            depends_on_z: false,
        }
    }

    /// A driver identically equal to `c`.
    pub fn constant(c: f64) -> Self {
        DriverSpec {
            eval: Arc::new(move |_, _, _, _| c),
            lipschitz: LipschitzModulus::zero(),
            zero_point_bound: c.abs(),
            depends_on_own_y: false,
            depends_on_cross_y: false,
            depends_on_z: false,
        }
    }

    pub fn with_own_y(mut self, flag: bool) -> Self {
        self.depends_on_own_y = flag;
        self
    }

    pub fn with_cross_y(mut self, flag: bool) -> Self {
        self.depends_on_cross_y = flag;
        self
    }

    pub fn with_z(mut self, flag: bool) -> Self {
        self.depends_on_z = flag;
        self
    }

    #[inline]
    pub fn eval(&self, t: f64, x: &[f64], y: &[f64], z: f64) -> f64 {
        (self.eval)(t, x, y, z)
    }

    pub fn lipschitz(&self) -> &LipschitzModulus {
        &self.lipschitz
    }

    pub fn zero_point_bound(&self) -> f64 {
        self.zero_point_bound
    }
}

impl fmt::Debug for DriverSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DriverSpec")
            .field("lipschitz", &self.lipschitz)
            .field("zero_point_bound", &self.zero_point_bound)
            .field("depends_on_own_y", &self.depends_on_own_y)
            .field("depends_on_cross_y", &self.depends_on_cross_y)
            .field("depends_on_z", &self.depends_on_z)
            .finish()
    }
}

/// Cost evaluator `g_{ij}(x)` for moving from mode `i` to mode `j`.
pub type CostFn = Arc<dyn Fn(usize, usize, &[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct SwitchingCostSpec {
    eval: CostFn,
    bound: f64,
}

impl SwitchingCostSpec {
    pub fn new(
        eval: impl Fn(usize, usize, &[f64]) -> f64 + Send + Sync + 'static,
        bound: f64,
    ) -> Self {
        SwitchingCostSpec {
            eval: Arc::new(eval),
            bound,
        }
    }

    /// Constant cost `value` for every off-diagonal pair, zero diagonal.
    pub fn uniform(value: f64) -> Self {
        SwitchingCostSpec {
            eval: Arc::new(move |i, j, _| if i == j { 0.0 } else { value }),
            bound: value.abs(),
        }
    }

    /// Table-driven constant costs; `table[i][j]` is `g_{ij}`.
    pub fn from_matrix(table: Vec<Vec<f64>>) -> Result<Self> {
        let m = table.len();
        for row in &table {
            if row.len() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    got: row.len(),
                    context: "cost matrix row",
                });
            }
        }
        let bound = table
            .iter()
            .flat_map(|r| r.iter())
            .fold(0.0_f64, |a, v| a.max(v.abs()));
        Ok(SwitchingCostSpec {
            eval: Arc::new(move |i, j, _| table[i][j]),
            bound,
        })
    }

    #[inline]
    pub fn eval(&self, from: usize, to: usize, x: &[f64]) -> f64 {
        (self.eval)(from, to, x)
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }
}

impl fmt::Debug for SwitchingCostSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SwitchingCostSpec")
            .field("bound", &self.bound)
            .finish()
    }
}

/// Which switching-cost hypothesis the instance claims.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AssumptionMode {
    /// Zero diagonal, non-strict triangle inequality.
    H2,
    /// Nonnegative diagonal, strict triangle inequality.
    H2Prime,
}

/// A full problem instance, immutable after construction.
#[derive(Debug, Clone)]
pub struct SwitchingProblem {
    modes: ModeSet,
    drivers: Vec<DriverSpec>,
    costs: SwitchingCostSpec,
    discount: f64,
    state: StateModel,
    assumption_mode: AssumptionMode,
}

impl SwitchingProblem {
    pub fn new(
        modes: ModeSet,
        drivers: Vec<DriverSpec>,
        costs: SwitchingCostSpec,
        discount: f64,
        state: StateModel,
        assumption_mode: AssumptionMode,
    ) -> Result<Self> {
        if drivers.len() != modes.count() {
            return Err(Error::DimensionMismatch {
                expected: modes.count(),
                got: drivers.len(),
                context: "drivers per mode",
            });
        }
        if !(discount > 0.0) {
            return Err(Error::InvalidInput(format!(
                "discount rate must be positive (got {discount})"
            )));
        }
        for d in &drivers {
            d.lipschitz.well_formed()?;
            if d.zero_point_bound < 0.0 {
                return Err(Error::InvalidInput(
                    "zero-point bound must be nonnegative".into(),
                ));
            }
        }
        Ok(SwitchingProblem {
            modes,
            drivers,
            costs,
            discount,
            state,
            assumption_mode,
        })
    }

    pub fn mode_count(&self) -> usize {
        self.modes.count()
    }

    pub fn modes(&self) -> &ModeSet {
        &self.modes
    }

    pub fn driver(&self, mode: usize) -> &DriverSpec {
        &self.drivers[mode]
    }

    pub fn costs(&self) -> &SwitchingCostSpec {
        &self.costs
    }

    pub fn cost(&self, from: usize, to: usize, x: &[f64]) -> f64 {
        self.costs.eval(from, to, x)
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn state(&self) -> &StateModel {
        &self.state
    }

    pub fn assumption_mode(&self) -> AssumptionMode {
        self.assumption_mode
    }

    /// Whether any driver reads other modes' y components (the fully
    /// coupled regime handled by the fixed-point solver).
    pub fn is_coupled(&self) -> bool {
        self.drivers.iter().any(|d| d.depends_on_cross_y)
    }

    /// Whether no driver reads `(y, z)` at all — the regime in which the
    /// switching oracle is exact.
    pub fn drivers_value_independent(&self) -> bool {
        self.drivers
            .iter()
            .all(|d| !d.depends_on_own_y && !d.depends_on_cross_y && !d.depends_on_z)
    }

    /// Largest declared `|f_i(t, x, 0, 0)|` bound across modes.
    pub fn max_zero_point_bound(&self) -> f64 {
        self.drivers
            .iter()
            .fold(0.0_f64, |a, d| a.max(d.zero_point_bound))
    }

    /// `sup_t u(t)` across modes.
    pub fn lipschitz_sup(&self) -> f64 {
        self.drivers
            .iter()
            .fold(0.0_f64, |a, d| a.max(d.lipschitz.sup()))
    }

    /// Pointwise-in-time maximum of the moduli across modes.
    pub fn lipschitz_at(&self, t: f64) -> f64 {
        self.drivers
            .iter()
            .fold(0.0_f64, |a, d| a.max(d.lipschitz.eval(t)))
    }
}

/// Outcome of one assumption check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckStatus {
    Pass,
    Warn,
    Fail,
}

/// Structured witness for a failed or soft check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ValidationIssue {
    NonIntegrableModulus {
        mode: usize,
        squared: bool,
    },
    LipschitzViolation {
        mode: usize,
        t: f64,
        lhs: f64,
        rhs: f64,
    },
    NonPositiveCost {
        from: usize,
        to: usize,
        value: f64,
        x: Vec<f64>,
    },
    TriangleViolation {
        i: usize,
        j: usize,
        l: usize,
        lhs: f64,
        rhs: f64,
        x: Vec<f64>,
        strict_only: bool,
    },
    DiagonalViolation {
        mode: usize,
        value: f64,
    },
    ZeroPointBoundExceeded {
        mode: usize,
        t: f64,
        value: f64,
        bound: f64,
    },
    TerminalIncompatible {
        from: usize,
        to: usize,
        value: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssumptionCheck {
    pub name: String,
    pub status: CheckStatus,
    pub detail: String,
}

/// Per-assumption pass/fail record with witnesses for failures.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<AssumptionCheck>,
    pub issues: Vec<ValidationIssue>,
    pub seed: u64,
    pub sample_budget: usize,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }

    pub fn has_warnings(&self) -> bool {
        self.checks.iter().any(|c| c.status == CheckStatus::Warn)
    }

    pub fn failure_summary(&self) -> String {
        self.checks
            .iter()
            .filter(|c| c.status == CheckStatus::Fail)
            .map(|c| format!("{}: {}", c.name, c.detail))
            .collect::<Vec<_>>()
            .join("; ")
    }
}

/// Advisory lower thresholds on the discount rate.
///
/// `r_penalization` mirrors the a-priori-estimate regime
/// (`sup(u^2 + u)` plus a configurable margin standing in for the
/// non-constructive constants), `r_contraction` the fixed-point regime
/// (`sup 2 u^2 + 1`). Falling below them is a warning, not a rejection:
/// the theory wants a large discount, the numerics may converge anyway.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscountBound {
    pub r_penalization: f64,
    pub r_contraction: f64,
    pub margin: f64,
    pub meets_penalization: bool,
    pub meets_contraction: bool,
}

pub fn required_discount(problem: &SwitchingProblem) -> DiscountBound {
    required_discount_with_margin(problem, DEFAULT_DISCOUNT_MARGIN)
}

pub fn required_discount_with_margin(problem: &SwitchingProblem, margin: f64) -> DiscountBound {
    let sup = problem.lipschitz_sup();
    let r_penalization = sup * sup + sup + margin;
    let r_contraction = 2.0 * sup * sup + 1.0;
    let r = problem.discount();
    DiscountBound {
        r_penalization,
        r_contraction,
        margin,
        meets_penalization: r >= r_penalization,
        meets_contraction: r >= r_contraction,
    }
}

const LIPSCHITZ_SLACK: f64 = 1e-9;

/// Validates the standing assumptions on a problem instance.
///
/// Integrability of `u` and `u^2` is decided in closed form; the
/// Lipschitz inequality, cost positivity, the triangle inequality and
/// the zero-terminal compatibility are sampled at `sample_budget` seeded
/// points. Deterministic given `(problem, seed)`.
pub fn validate_assumptions(
    problem: &SwitchingProblem,
    sample_budget: usize,
    seed: u64,
) -> Result<ValidationReport> {
    if sample_budget == 0 {
        return Err(Error::InvalidInput("sample budget must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();
    let mut issues = Vec::new();
    let m = problem.mode_count();

    // [H1] integrability of u and u^2, closed form.
    let mut integrable = true;
    for (i, d) in problem.drivers.iter().enumerate() {
        if d.lipschitz.integral().is_none() {
            integrable = false;
            issues.push(ValidationIssue::NonIntegrableModulus {
                mode: i,
                squared: false,
            });
        }
        if d.lipschitz.integral_squared().is_none() {
            integrable = false;
            issues.push(ValidationIssue::NonIntegrableModulus {
                mode: i,
                squared: true,
            });
        }
    }
    checks.push(AssumptionCheck {
        name: "H1 modulus integrability".into(),
        status: if integrable {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        },
        detail: if integrable {
            "int u and int u^2 finite in closed form".into()
        } else {
            "int u or int u^2 diverges".into()
        },
    });

    // Sampling scale: problem-driven magnitudes for y and z probes.
    let y_scale = problem.max_zero_point_bound() / problem.discount() + problem.costs.bound() + 1.0;
    let probe_horizon = probe_horizon(problem);

    let sample_x = |rng: &mut ChaCha8Rng, t: f64| -> Vec<f64> {
        match problem.state() {
            StateModel::DeterministicPath { path } => path(t),
            StateModel::RecombiningBinomial { x0, map }
            | StateModel::RecombiningTrinomial { x0, map } => {
                let spread = 3.0 * t.sqrt().max(1e-3);
                let b = rng.random_range(-spread..=spread);
                apply_map(map, t, b, x0)
            }
        }
    };

    // [H1] Lipschitz inequality, sampled.
    let mut lipschitz_ok = true;
    let mut bound_ok = true;
    'outer: for _ in 0..sample_budget {
        let t = rng.random_range(0.0..=probe_horizon);
        let x = sample_x(&mut rng, t);
        let y1: Vec<f64> = (0..m)
            .map(|_| rng.random_range(-y_scale..=y_scale))
            .collect();
        let y2: Vec<f64> = (0..m)
            .map(|_| rng.random_range(-y_scale..=y_scale))
            .collect();
        let z1 = rng.random_range(-y_scale..=y_scale);
        let z2 = rng.random_range(-y_scale..=y_scale);
        let dy = y1
            .iter()
            .zip(&y2)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let dz = (z1 - z2).abs();
        for (i, d) in problem.drivers.iter().enumerate() {
            let lhs = (d.eval(t, &x, &y1, z1) - d.eval(t, &x, &y2, z2)).abs();
            let rhs = d.lipschitz.eval(t) * (dy + dz);
            if lhs > rhs + LIPSCHITZ_SLACK * (1.0 + rhs) {
                lipschitz_ok = false;
                issues.push(ValidationIssue::LipschitzViolation {
                    mode: i,
                    t,
                    lhs,
                    rhs,
                });
                break 'outer;
            }
            let zero = vec![0.0; m];
            let at_zero = d.eval(t, &x, &zero, 0.0).abs();
            if at_zero > d.zero_point_bound + LIPSCHITZ_SLACK * (1.0 + d.zero_point_bound) {
                bound_ok = false;
                issues.push(ValidationIssue::ZeroPointBoundExceeded {
                    mode: i,
                    t,
                    value: at_zero,
                    bound: d.zero_point_bound,
                });
                break 'outer;
            }
        }
    }
    checks.push(AssumptionCheck {
        name: "H1 Lipschitz inequality (sampled)".into(),
        status: if lipschitz_ok {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        },
        detail: format!("{sample_budget} sampled points"),
    });
    checks.push(AssumptionCheck {
        name: "H1 zero-point bound (sampled)".into(),
        status: if bound_ok {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        },
        detail: "declared |f(t,x,0,0)| bound honored at samples".into(),
    });

    // [H2]/[H2'] switching costs: diagonal convention, positivity,
    // triangle inequality (strict under H2').
    let mut diag_ok = true;
    let mut positive_ok = true;
    let mut triangle_ok = true;
    let mut strict_ok = true;
    for s in 0..sample_budget {
        let t = if s == 0 {
            0.0
        } else {
            rng.random_range(0.0..=probe_horizon)
        };
        let x = sample_x(&mut rng, t);
        for i in 0..m {
            let gii = problem.cost(i, i, &x);
            let diag_bad = match problem.assumption_mode {
                AssumptionMode::H2 => gii != 0.0,
                AssumptionMode::H2Prime => gii < 0.0,
            };
            if diag_bad && diag_ok {
                diag_ok = false;
                issues.push(ValidationIssue::DiagonalViolation {
                    mode: i,
                    value: gii,
                });
            }
            for j in 0..m {
                if i == j {
                    continue;
                }
                let gij = problem.cost(i, j, &x);
                if gij <= 0.0 && positive_ok {
                    positive_ok = false;
                    issues.push(ValidationIssue::NonPositiveCost {
                        from: i,
                        to: j,
                        value: gij,
                        x: x.clone(),
                    });
                }
                for l in 0..m {
                    if l == j {
                        continue;
                    }
                    let gjl = problem.cost(j, l, &x);
                    let gil = problem.cost(i, l, &x);
                    if gij + gjl < gil && triangle_ok {
                        triangle_ok = false;
                        issues.push(ValidationIssue::TriangleViolation {
                            i,
                            j,
                            l,
                            lhs: gij + gjl,
                            rhs: gil,
                            x: x.clone(),
                            strict_only: false,
                        });
                    } else if gij + gjl == gil
                        && strict_ok
                        && problem.assumption_mode == AssumptionMode::H2Prime
                    {
                        strict_ok = false;
                        issues.push(ValidationIssue::TriangleViolation {
                            i,
                            j,
                            l,
                            lhs: gij + gjl,
                            rhs: gil,
                            x: x.clone(),
                            strict_only: true,
                        });
                    }
                }
            }
        }
    }
    checks.push(AssumptionCheck {
        name: "H2 diagonal convention".into(),
        status: if diag_ok {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        },
        detail: match problem.assumption_mode {
            AssumptionMode::H2 => "g_ii = 0".into(),
            AssumptionMode::H2Prime => "g_ii >= 0".into(),
        },
    });
    checks.push(AssumptionCheck {
        name: "H2 cost positivity (sampled)".into(),
        status: if positive_ok {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        },
        detail: "g_ij > 0 for i != j".into(),
    });
    checks.push(AssumptionCheck {
        name: "H2'/H2 triangle inequality (sampled)".into(),
        status: if !triangle_ok {
            CheckStatus::Fail
        } else if !strict_ok {
            // only the non-strict form holds while the instance claims H2'
            CheckStatus::Warn
        } else {
            CheckStatus::Pass
        },
        detail: if triangle_ok && !strict_ok {
            "only the non-strict [H2] triangle holds; assumption mode is H2'".into()
        } else {
            "g_ij + g_jl vs g_il at sampled x".into()
        },
    });

    // [H3] with the discounted-to-zero terminal convention: xi = 0 is
    // compatible iff 0 >= max_j (0 - g_ij), i.e. g_ij >= 0.
    let mut terminal_ok = true;
    {
        let x = sample_x(&mut rng, probe_horizon);
        for i in 0..m {
            for j in 0..m {
                if i == j {
                    continue;
                }
                let g = problem.cost(i, j, &x);
                if g < 0.0 && terminal_ok {
                    terminal_ok = false;
                    issues.push(ValidationIssue::TerminalIncompatible {
                        from: i,
                        to: j,
                        value: g,
                    });
                }
            }
        }
    }
    checks.push(AssumptionCheck {
        name: "H3 zero-terminal compatibility".into(),
        status: if terminal_ok {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        },
        detail: "0 >= max_j (0 - g_ij) at the truncation horizon".into(),
    });

    Ok(ValidationReport {
        checks,
        issues,
        seed,
        sample_budget,
    })
}

fn probe_horizon(problem: &SwitchingProblem) -> f64 {
    let mut horizon: f64 = 1.0;
    for d in &problem.drivers {
        horizon = horizon.max(match *d.lipschitz() {
            LipschitzModulus::ConstantOnWindow { window_end, .. } => {
                if window_end.is_finite() {
                    1.5 * window_end
                } else {
                    10.0
                }
            }
            LipschitzModulus::ExponentialDecay { decay, .. } => {
                if decay > 0.0 {
                    (10.0 / decay).min(1e3)
                } else {
                    10.0
                }
            }
        });
    }
    horizon.max(5.0 / problem.discount()).min(1e4)
}

fn apply_map(map: &StateMap, t: f64, b: f64, x0: &[f64]) -> Vec<f64> {
    match map {
        StateMap::Arithmetic { drift, vol } => {
            let mut x = x0.to_vec();
            x[0] = x0[0] + drift(t) * t + vol(t) * b;
            x
        }
        StateMap::Geometric { drift, vol } => {
            let mut x = x0.to_vec();
            x[0] = x0[0] * (drift(t) * t + vol(t) * b).exp();
            x
        }
        StateMap::Custom(f) => f(t, b, x0),
    }
}
