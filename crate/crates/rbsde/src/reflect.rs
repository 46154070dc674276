//! The decoupled obliquely reflected system, solved by two backends.
//!
//! Penalization replaces the obstacle constraint by the driver term
//! `n * sum_j (y^i - y^j + g_ij(x))^-` and runs a doubling schedule of
//! levels, warm-starting each level from the previous one. Projection
//! performs a single backward sweep and, at every step, lifts each
//! component onto its obstacle `max_{j != i} (Y^j - g_ij)` by iterating
//! the componentwise projection to a fixed point.
//!
//! The two backends cross-validate each other: penalization is the
//! constructive scheme whose a-priori estimates become the decay
//! diagnostics below, projection is the discrete analogue of the
//! reflected system itself and produces exactly-zero obstacle violation
//! and Skorokhod residual.

use serde::{Deserialize, Serialize};

use crate::bsde::{check_step_size, solve_step_nodes, solve_system, BsdeField, StepDriver};
use crate::error::{Error, Result};
use crate::field::ModeField;
use crate::lattice::Lattice;
use crate::problem::SwitchingProblem;

/// Which scheme computes the reflected solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    Penalization,
    Projection,
}

/// Increasing sequence of penalty levels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PenaltySchedule {
    pub levels: Vec<u32>,
}

impl PenaltySchedule {
    /// Doubling schedule `1, 2, 4, ..., max_level`.
    pub fn doubling(max_level: u32) -> Self {
        let mut levels = Vec::new();
        let mut n = 1u32;
        while n <= max_level {
            levels.push(n);
            n *= 2;
        }
        PenaltySchedule { levels }
    }

    pub fn max_level(&self) -> u32 {
        self.levels.iter().copied().max().unwrap_or(0)
    }

    fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::InvalidInput("penalty schedule is empty".into()));
        }
        if self.levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput(
                "penalty schedule must be strictly increasing".into(),
            ));
        }
        Ok(())
    }
}

impl Default for PenaltySchedule {
    fn default() -> Self {
        PenaltySchedule::doubling(64)
    }
}

/// Discrete `(Y, Z, K)` triple.
///
/// `k_increments` holds the reflection increments in discounted units
/// (the form in which `K` enters the discounted equation); the entry at
/// step `k` covers `[t_k, t_{k+1})`, so `K` at time zero is the empty
/// sum. Increments are nonnegative, making `K` nondecreasing along every
/// lattice path.
#[derive(Debug, Clone)]
pub struct SolutionField {
    pub y: ModeField,
    pub z: ModeField,
    pub k_increments: ModeField,
    pub backend: Backend,
}

impl SolutionField {
    pub fn y0(&self) -> Vec<f64> {
        self.y.at_origin()
    }

    pub fn z0(&self) -> Vec<f64> {
        self.z.at_origin()
    }

    pub fn modes(&self) -> usize {
        self.y.modes()
    }

    /// Smallest recorded increment (negative values would signal a
    /// violated monotonicity invariant).
    pub fn k_min_increment(&self) -> f64 {
        let mut min = f64::INFINITY;
        for step in 0..=self.k_increments.steps() {
            for mode in 0..self.modes() {
                for &v in self.k_increments.mode_slice(step, mode) {
                    min = min.min(v);
                }
            }
        }
        min
    }

    /// `E[K_{t_k}]` per mode and step.
    pub fn k_cumulative_expected(&self, lattice: &Lattice) -> Vec<Vec<f64>> {
        let n = self.k_increments.steps();
        (0..self.modes())
            .map(|mode| {
                let mut acc = 0.0;
                let mut out = Vec::with_capacity(n + 1);
                out.push(0.0);
                for k in 0..n {
                    for (node, &v) in self.k_increments.mode_slice(k, mode).iter().enumerate() {
                        acc += lattice.node_prob(k, node) * v;
                    }
                    out.push(acc);
                }
                out
            })
            .collect()
    }

    /// `E[K_T]` per mode.
    pub fn k_total_expected(&self, lattice: &Lattice) -> Vec<f64> {
        self.k_cumulative_expected(lattice)
            .into_iter()
            .map(|per_step| *per_step.last().unwrap())
            .collect()
    }

    /// Expected total variation `E[sum_k |dK_k|]` per mode.
    pub fn k_total_variation(&self, lattice: &Lattice) -> Vec<f64> {
        (0..self.modes())
            .map(|mode| {
                let mut acc = 0.0;
                for k in 0..self.k_increments.steps() {
                    for (node, &v) in self.k_increments.mode_slice(k, mode).iter().enumerate() {
                        acc += lattice.node_prob(k, node) * v.abs();
                    }
                }
                acc
            })
            .collect()
    }

    /// Largest obstacle violation `(max_{j != i}(Y^j - g_ij) - Y^i)^+`
    /// over the whole grid.
    pub fn obstacle_violation(&self, problem: &SwitchingProblem, lattice: &Lattice) -> f64 {
        let m = self.modes();
        let mut worst = 0.0_f64;
        for k in 0..=lattice.grid().steps() {
            for node in 0..lattice.node_count(k) {
                let x = lattice.state(k, node);
                for i in 0..m {
                    let mut obstacle = f64::NEG_INFINITY;
                    for j in 0..m {
                        if j != i {
                            obstacle = obstacle.max(self.y.get(k, node, j) - problem.cost(i, j, x));
                        }
                    }
                    if obstacle.is_finite() {
                        worst = worst.max(obstacle - self.y.get(k, node, i));
                    }
                }
            }
        }
        worst
    }
}

/// Per-level penalty diagnostics.
///
/// `epsilon` is the probability-weighted quadrature of
/// `E int sum_j [(Y^i - Y^j + g_ij(X))^-]^2 ds`; the a-priori estimate
/// says `n^2 * epsilon` stays bounded in `n`, which
/// [`penalty_decay_check`] monitors. `exclusivity_residual` is
/// `max (Y^{ij})^- (Y^{ji})^-`, identically zero whenever
/// `g_ij + g_ji >= 0`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PenaltyDiagnostics {
    pub level: u32,
    pub epsilon_by_mode: Vec<f64>,
    pub epsilon: f64,
    pub scaled: f64,
    pub sup_violation: f64,
    pub exclusivity_residual: f64,
}

/// Result of a single penalized solve.
#[derive(Debug, Clone)]
pub struct PenalizedSolution {
    pub field: SolutionField,
    pub diagnostics: PenaltyDiagnostics,
}

impl PenalizedSolution {
    /// The plain `(Y, Z)` part.
    pub fn bsde_field(&self) -> BsdeField {
        BsdeField {
            y: self.field.y.clone(),
            z: self.field.z.clone(),
        }
    }
}

/// One entry of the penalization schedule trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PenaltyTraceEntry {
    pub diagnostics: PenaltyDiagnostics,
    pub y0: Vec<f64>,
    pub skorokhod: Vec<f64>,
    /// `max(Y^{previous level} - Y^{this level})`; at most a float hair
    /// above zero when the monotone-in-n comparison holds.
    pub monotone_gap: f64,
}

/// Reflected solution plus, for the penalization backend, the full
/// per-level diagnostics trace.
#[derive(Debug, Clone)]
pub struct ReflectedSolution {
    pub field: SolutionField,
    pub penalty_trace: Vec<PenaltyTraceEntry>,
}

#[inline]
pub(crate) fn neg_part(a: f64) -> f64 {
    if a < 0.0 {
        -a
    } else {
        0.0
    }
}

/// The penalized generator
/// `f_i(t, x, y, z) + n * sum_j (y^i - y^j + g_ij(x))^-`.
///
/// The sum includes `j = i`, which contributes nothing under the
/// nonnegative-diagonal convention.
pub fn penalized_driver(
    problem: &SwitchingProblem,
    n: u32,
    mode: usize,
    t: f64,
    x: &[f64],
    y: &[f64],
    z: f64,
) -> f64 {
    problem.driver(mode).eval(t, x, y, z) + n as f64 * penalty_sum(problem, mode, x, y)
}

#[inline]
fn penalty_sum(problem: &SwitchingProblem, mode: usize, x: &[f64], y: &[f64]) -> f64 {
    let mut pen = 0.0;
    for j in 0..problem.mode_count() {
        pen += neg_part(y[mode] - y[j] + problem.cost(mode, j, x));
    }
    pen
}

/// Where the non-penalty part of the generator comes from.
pub(crate) enum DriverSource<'a> {
    /// The problem's own drivers, fed the live mode vector.
    Problem,
    /// Step/node-aware frozen drivers (the contraction operator's case).
    Frozen(&'a [StepDriver<'a>]),
}

impl DriverSource<'_> {
    #[inline]
    #[allow(clippy::too_many_arguments)]
    fn eval(
        &self,
        problem: &SwitchingProblem,
        mode: usize,
        step: usize,
        node: usize,
        t: f64,
        x: &[f64],
        y: &[f64],
        z: f64,
    ) -> f64 {
        match self {
            DriverSource::Problem => problem.driver(mode).eval(t, x, y, z),
            DriverSource::Frozen(drivers) => drivers[mode](step, node, t, x, y[mode], z),
        }
    }
}

/// Solves the coupled penalized system at level `n` and accumulates the
/// discounted reflection increments
/// `dK_k = n * sum_j exp(-r t_k) (Y^i_k - Y^j_k + g_ij(X_k))^- dt`.
pub fn solve_penalized(
    problem: &SwitchingProblem,
    lattice: &Lattice,
    n: u32,
) -> Result<PenalizedSolution> {
    solve_penalized_inner(
        problem,
        lattice,
        &DriverSource::Problem,
        problem.lipschitz_sup(),
        n,
        None,
    )
}

pub(crate) fn solve_penalized_inner(
    problem: &SwitchingProblem,
    lattice: &Lattice,
    source: &DriverSource<'_>,
    base_lipschitz: f64,
    n: u32,
    warm: Option<&ModeField>,
) -> Result<PenalizedSolution> {
    let m = problem.mode_count();
    // The penalty term is Lipschitz in the mode vector with constant n*m.
    let lip = base_lipschitz + n as f64 * m as f64;
    let system =
        |step: usize, node: usize, t: f64, x: &[f64], y: &[f64], z: &[f64], out: &mut [f64]| {
            for i in 0..m {
                out[i] = source.eval(problem, i, step, node, t, x, y, z[i])
                    + n as f64 * penalty_sum(problem, i, x, y);
            }
        };
    let field = solve_system(lattice, problem.discount(), m, &system, lip, None, warm)?;

    let k_increments = penalized_increments(problem, lattice, &field.y, n);
    let diagnostics = penalty_diagnostics(problem, lattice, &field.y, n);
    Ok(PenalizedSolution {
        field: SolutionField {
            y: field.y,
            z: field.z,
            k_increments,
            backend: Backend::Penalization,
        },
        diagnostics,
    })
}

fn penalized_increments(
    problem: &SwitchingProblem,
    lattice: &Lattice,
    y: &ModeField,
    n: u32,
) -> ModeField {
    let m = problem.mode_count();
    let dt = lattice.grid().dt();
    let mut inc = ModeField::zeros(m, lattice);
    let mut yv = vec![0.0; m];
    for k in 0..lattice.grid().steps() {
        let disc = lattice.grid().discount(k);
        for node in 0..lattice.node_count(k) {
            let x = lattice.state(k, node);
            y.gather(k, node, &mut yv);
            for i in 0..m {
                let mut pen = 0.0;
                for j in 0..m {
                    pen += neg_part(yv[i] - yv[j] + problem.cost(i, j, x));
                }
                inc.set(k, node, i, n as f64 * disc * pen * dt);
            }
        }
    }
    inc
}

fn penalty_diagnostics(
    problem: &SwitchingProblem,
    lattice: &Lattice,
    y: &ModeField,
    n: u32,
) -> PenaltyDiagnostics {
    let m = problem.mode_count();
    let dt = lattice.grid().dt();
    let steps = lattice.grid().steps();
    let mut epsilon_by_mode = vec![0.0; m];
    let mut sup_violation = 0.0_f64;
    let mut exclusivity = 0.0_f64;
    let mut yv = vec![0.0; m];
    for k in 0..=steps {
        for node in 0..lattice.node_count(k) {
            let x = lattice.state(k, node);
            let w = lattice.node_prob(k, node);
            y.gather(k, node, &mut yv);
            for i in 0..m {
                for j in 0..m {
                    if i == j {
                        continue;
                    }
                    let v = neg_part(yv[i] - yv[j] + problem.cost(i, j, x));
                    sup_violation = sup_violation.max(v);
                    if k < steps {
                        epsilon_by_mode[i] += w * dt * v * v;
                    }
                    if i < j {
                        let back = neg_part(yv[j] - yv[i] + problem.cost(j, i, x));
                        exclusivity = exclusivity.max(v * back);
                    }
                }
            }
        }
    }
    let epsilon: f64 = epsilon_by_mode.iter().sum();
    let n2 = (n as f64) * (n as f64);
    PenaltyDiagnostics {
        level: n,
        epsilon_by_mode,
        epsilon,
        scaled: n2 * epsilon,
        sup_violation,
        exclusivity_residual: exclusivity,
    }
}

/// Solves the reflected system (drivers may read their own `y`
/// component only; fully coupled drivers go through the fixed-point
/// solver).
///
/// With the penalization backend, runs the schedule with warm starts and
/// returns the final level's field plus the full diagnostics trace; with
/// the projection backend, performs the single reflected sweep.
pub fn solve_reflected(
    problem: &SwitchingProblem,
    lattice: &Lattice,
    backend: Backend,
    schedule: Option<&PenaltySchedule>,
) -> Result<ReflectedSolution> {
    if problem.is_coupled() {
        return Err(Error::CoupledDriversRejected);
    }
    solve_reflected_inner(
        problem,
        lattice,
        &DriverSource::Problem,
        problem.lipschitz_sup(),
        backend,
        schedule,
    )
}

pub(crate) fn solve_reflected_inner(
    problem: &SwitchingProblem,
    lattice: &Lattice,
    source: &DriverSource<'_>,
    base_lipschitz: f64,
    backend: Backend,
    schedule: Option<&PenaltySchedule>,
) -> Result<ReflectedSolution> {
    match backend {
        Backend::Projection => {
            let field = projection_solve(problem, lattice, source, base_lipschitz)?;
            Ok(ReflectedSolution {
                field,
                penalty_trace: Vec::new(),
            })
        }
        Backend::Penalization => {
            let default_schedule;
            let schedule = match schedule {
                Some(s) => s,
                None => {
                    default_schedule = PenaltySchedule::default();
                    &default_schedule
                }
            };
            schedule.validate()?;
            let mut warm: Option<ModeField> = None;
            let mut trace = Vec::with_capacity(schedule.levels.len());
            let mut last: Option<SolutionField> = None;
            for &n in &schedule.levels {
                let sol = solve_penalized_inner(
                    problem,
                    lattice,
                    source,
                    base_lipschitz,
                    n,
                    warm.as_ref(),
                )?;
                let skorokhod = skorokhod_residual(&sol.field, problem, lattice);
                let monotone_gap = match &warm {
                    Some(prev) => prev.max_signed_excess(&sol.field.y)?,
                    None => 0.0,
                };
                trace.push(PenaltyTraceEntry {
                    diagnostics: sol.diagnostics.clone(),
                    y0: sol.field.y0(),
                    skorokhod,
                    monotone_gap,
                });
                warm = Some(sol.field.y.clone());
                last = Some(sol.field);
            }
            Ok(ReflectedSolution {
                field: last.expect("schedule validated nonempty"),
                penalty_trace: trace,
            })
        }
    }
}

/// One backward sweep with per-step oblique projection.
fn projection_solve(
    problem: &SwitchingProblem,
    lattice: &Lattice,
    source: &DriverSource<'_>,
    base_lipschitz: f64,
) -> Result<SolutionField> {
    let m = problem.mode_count();
    let n = lattice.grid().steps();
    let dt = lattice.grid().dt();
    let rate = problem.discount();
    check_step_size(dt, base_lipschitz, rate)?;

    let mut y = ModeField::zeros(m, lattice);
    let mut z = ModeField::zeros(m, lattice);
    let mut k_inc = ModeField::zeros(m, lattice);

    // Candidate step: the modes evolve jointly but without interaction
    // (each driver reads its own component only).
    let decoupled =
        |step: usize, node: usize, t: f64, x: &[f64], yv: &[f64], zv: &[f64], out: &mut [f64]| {
            for i in 0..m {
                out[i] = source.eval(problem, i, step, node, t, x, yv, zv[i]);
            }
        };

    let max_passes = m * m;
    for k in (0..n).rev() {
        let mut cont = Vec::with_capacity(m);
        let mut zrow = Vec::with_capacity(m);
        for i in 0..m {
            cont.push(lattice.cond_expect(k, y.mode_slice(k + 1, i))?);
            zrow.push(lattice.cond_expect_with_increment(k, y.mode_slice(k + 1, i))?);
        }
        let candidates = solve_step_nodes(lattice, rate, m, &decoupled, k, &cont, &zrow, None)?;
        let disc = lattice.grid().discount(k);
        for node in 0..lattice.node_count(k) {
            let x = lattice.state(k, node);
            let unconstrained = &candidates[node * m..(node + 1) * m];
            let mut ys = unconstrained.to_vec();
            let mut passes = 0usize;
            loop {
                let mut changed = false;
                for i in 0..m {
                    let mut obstacle = f64::NEG_INFINITY;
                    for j in 0..m {
                        if j != i {
                            // strict comparison: lowest mode index wins ties
                            let candidate = ys[j] - problem.cost(i, j, x);
                            if candidate > obstacle {
                                obstacle = candidate;
                            }
                        }
                    }
                    let lifted = unconstrained[i].max(obstacle);
                    if lifted > ys[i] {
                        ys[i] = lifted;
                        changed = true;
                    }
                }
                if !changed {
                    break;
                }
                passes += 1;
                if passes > max_passes {
                    return Err(Error::ProjectionNoFixedPoint { step: k, passes });
                }
            }
            for i in 0..m {
                y.set(k, node, i, ys[i]);
                z.set(k, node, i, zrow[i][node]);
                k_inc.set(k, node, i, disc * (ys[i] - unconstrained[i]));
            }
        }
    }

    Ok(SolutionField {
        y,
        z,
        k_increments: k_inc,
        backend: Backend::Projection,
    })
}

/// Quadrature of the minimality condition
/// `int e^{-rs} (Y^i - max_{j != i}(Y^j - g_ij)) dK^i`, per mode.
///
/// Near zero certifies that `K` grows only on the contact set. The
/// projection backend produces exact zeros by construction; the
/// penalization backend's residual shrinks along the schedule.
pub fn skorokhod_residual(
    solution: &SolutionField,
    problem: &SwitchingProblem,
    lattice: &Lattice,
) -> Vec<f64> {
    let m = solution.modes();
    let mut out = vec![0.0; m];
    let mut yv = vec![0.0; m];
    for k in 0..lattice.grid().steps() {
        let disc = lattice.grid().discount(k);
        for node in 0..lattice.node_count(k) {
            let w = lattice.node_prob(k, node);
            let x = lattice.state(k, node);
            solution.y.gather(k, node, &mut yv);
            for i in 0..m {
                let dk = solution.k_increments.get(k, node, i);
                if dk == 0.0 {
                    continue;
                }
                let mut obstacle = f64::NEG_INFINITY;
                for j in 0..m {
                    if j != i {
                        obstacle = obstacle.max(yv[j] - problem.cost(i, j, x));
                    }
                }
                if obstacle.is_finite() {
                    out[i] += w * disc * (yv[i] - obstacle) * dk;
                }
            }
        }
    }
    out
}

/// Verdict of the penalty-decay monitor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayCheck {
    pub pass: bool,
    pub offending_level: Option<u32>,
    pub reason: Option<String>,
    pub scaled_max: f64,
    pub scaled_median: f64,
}

/// Checks the discrete shadow of the a-priori estimate: `epsilon_n`
/// nonincreasing in `n` and `n^2 epsilon_n` bounded (max at most four
/// times the median over the schedule).
pub fn penalty_decay_check(trace: &[PenaltyDiagnostics]) -> Result<DecayCheck> {
    if trace.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "penalty decay check needs at least 3 levels, got {}",
            trace.len()
        )));
    }
    let mut scaled: Vec<f64> = trace.iter().map(|d| d.scaled).collect();
    scaled.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = scaled.len() / 2;
    let median = if scaled.len() % 2 == 1 {
        scaled[mid]
    } else {
        0.5 * (scaled[mid - 1] + scaled[mid])
    };
    let max = *scaled.last().unwrap();

    for pair in trace.windows(2) {
        if pair[1].epsilon > pair[0].epsilon * (1.0 + 1e-12) + 1e-18 {
            return Ok(DecayCheck {
                pass: false,
                offending_level: Some(pair[1].level),
                reason: Some(format!(
                    "epsilon increased from {} (n = {}) to {} (n = {})",
                    pair[0].epsilon, pair[0].level, pair[1].epsilon, pair[1].level
                )),
                scaled_max: max,
                scaled_median: median,
            });
        }
    }
    if median == 0.0 {
        if max > 0.0 {
            return Ok(DecayCheck {
                pass: false,
                offending_level: None,
                reason: Some("median of n^2 epsilon is zero but max is not".into()),
                scaled_max: max,
                scaled_median: median,
            });
        }
    } else if max > 4.0 * median {
        return Ok(DecayCheck {
            pass: false,
            offending_level: None,
            reason: Some(format!(
                "max n^2 epsilon = {max} exceeds 4 x median = {}",
                4.0 * median
            )),
            scaled_max: max,
            scaled_median: median,
        });
    }
    Ok(DecayCheck {
        pass: true,
        offending_level: None,
        reason: None,
        scaled_max: max,
        scaled_median: median,
    })
}
