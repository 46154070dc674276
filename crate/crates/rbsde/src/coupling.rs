//! Fully coupled drivers via the freeze-and-solve operator and Picard
//! iteration.
//!
//! The operator maps a mode-vector profile to the solution of the
//! decoupled reflected system whose drivers are evaluated at that
//! profile (own components stay live only when the driver declares such
//! dependence). For a large enough discount rate the operator contracts
//! in the discounted sup norm, so iterating it from zero converges to
//! the solution of the coupled system; the error trace and an empirical
//! contraction probe are reported because the theoretical constants are
//! not computable.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bsde::StepDriver;
use crate::error::{Error, Result};
use crate::field::ModeField;
use crate::lattice::Lattice;
use crate::problem::{required_discount, SwitchingProblem};
use crate::reflect::{
    solve_reflected_inner, Backend, DriverSource, PenaltySchedule, ReflectedSolution, SolutionField,
};

/// Largest path count for which the sup norm is computed by exact
/// enumeration (covers binomial and trinomial trees up to 12 steps).
const PATH_ENUM_LIMIT: u128 = 600_000;

/// How the discounted sup norm was evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormMode {
    /// Exact `E[sup_k e^{-r t_k} |Y_k|^2]^{1/2}` by path enumeration.
    ExactSup,
    /// Upper proxy `E[sum_k e^{-r t_k} |Y_k|^2]^{1/2}` (dominates the
    /// sup, so tolerance checks stay conservative).
    StepSumProxy,
}

/// Discrete version of the norm `E[sup_t e^{-rt} |Y_t|^2]^{1/2}`, with
/// the Euclidean norm over modes inside.
pub fn weighted_norm(field: &ModeField, lattice: &Lattice) -> f64 {
    weighted_norm_with_mode(field, lattice).0
}

pub fn weighted_norm_with_mode(field: &ModeField, lattice: &Lattice) -> (f64, NormMode) {
    let m = field.modes();
    let n = lattice.grid().steps();
    let enumerable = lattice
        .path_count()
        .map(|c| c <= PATH_ENUM_LIMIT)
        .unwrap_or(false);
    if enumerable {
        let mut total = 0.0;
        lattice.for_each_path(|prob, nodes| {
            let mut sup = 0.0_f64;
            for (k, &node) in nodes.iter().enumerate() {
                let mut sq = 0.0;
                for mode in 0..m {
                    let v = field.get(k, node, mode);
                    sq += v * v;
                }
                sup = sup.max(lattice.grid().discount(k) * sq);
            }
            total += prob * sup;
        });
        (total.sqrt(), NormMode::ExactSup)
    } else {
        let mut total = 0.0;
        for k in 0..=n {
            let disc = lattice.grid().discount(k);
            for node in 0..lattice.node_count(k) {
                let mut sq = 0.0;
                for mode in 0..m {
                    let v = field.get(k, node, mode);
                    sq += v * v;
                }
                total += lattice.node_prob(k, node) * disc * sq;
            }
        }
        (total.sqrt(), NormMode::StepSumProxy)
    }
}

fn frozen_drivers<'a>(problem: &'a SwitchingProblem, gamma: &'a ModeField) -> Vec<StepDriver<'a>> {
    let m = problem.mode_count();
    (0..m)
        .map(|i| {
            let keep_own_live = problem.driver(i).depends_on_own_y;
            let driver: StepDriver<'a> = Box::new(
                move |step: usize, node: usize, t: f64, x: &[f64], y_own: f64, z: f64| {
                    let mut buf = vec![0.0; m];
                    gamma.gather(step, node, &mut buf);
                    if keep_own_live {
                        buf[i] = y_own;
                    }
                    problem.driver(i).eval(t, x, &buf, z)
                },
            );
            driver
        })
        .collect()
}

/// Applies the freeze-and-solve operator: cross-mode driver arguments
/// are frozen at `gamma` (own components stay live when declared) and
/// the resulting decoupled reflected system is solved with the
/// projection backend.
pub fn apply_phi(
    problem: &SwitchingProblem,
    lattice: &Lattice,
    gamma: &ModeField,
) -> Result<SolutionField> {
    if !gamma.is_finite() {
        return Err(Error::InvalidInput("frozen profile must be finite".into()));
    }
    let drivers = frozen_drivers(problem, gamma);
    let sol = solve_reflected_inner(
        problem,
        lattice,
        &DriverSource::Frozen(&drivers),
        problem.lipschitz_sup(),
        Backend::Projection,
        None,
    )?;
    Ok(sol.field)
}

/// Penalization run of the decoupled system frozen at `gamma`, with the
/// full diagnostics trace. Used to cross-validate a fixed point.
pub fn penalization_at(
    problem: &SwitchingProblem,
    lattice: &Lattice,
    gamma: &ModeField,
    schedule: &PenaltySchedule,
) -> Result<ReflectedSolution> {
    let drivers = frozen_drivers(problem, gamma);
    solve_reflected_inner(
        problem,
        lattice,
        &DriverSource::Frozen(&drivers),
        problem.lipschitz_sup(),
        Backend::Penalization,
        Some(schedule),
    )
}

/// Picard-iteration trace and rate estimate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CouplingState {
    pub iterations: usize,
    /// `e_k = || Y^{(k+1)} - Y^{(k)} ||_{2,r}`
    pub errors: Vec<f64>,
    /// Geometric-fit slope of `log e` over the last three iterations.
    pub kappa_hat: Option<f64>,
    pub norm_mode: NormMode,
    pub warnings: Vec<String>,
    /// Origin gap against a penalization cross-check at the fixed point,
    /// when requested.
    pub cross_check_gap: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FixedPointOptions {
    pub tol: f64,
    pub max_iterations: usize,
    /// Run one penalization solve at the fixed point as a cross-check.
    pub cross_validate: Option<PenaltySchedule>,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        FixedPointOptions {
            tol: 1e-8,
            max_iterations: 30,
            cross_validate: None,
        }
    }
}

fn estimate_rate(errors: &[f64]) -> Option<f64> {
    if errors.len() < 2 {
        return None;
    }
    let tail = &errors[errors.len().saturating_sub(3)..];
    if tail.iter().any(|&e| e <= 0.0) {
        return Some(0.0);
    }
    let logs: Vec<f64> = tail.iter().map(|e| e.ln()).collect();
    let n = logs.len() as f64;
    let mean_x = (n - 1.0) / 2.0;
    let mean_y = logs.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &y) in logs.iter().enumerate() {
        let dx = i as f64 - mean_x;
        num += dx * (y - mean_y);
        den += dx * dx;
    }
    Some((num / den).exp())
}

/// Picard iteration `Y^{(k+1)} = phi(Y^{(k)})` from `Y^{(0)} = 0`,
/// stopping when the weighted norm of the update falls below `tol`.
///
/// Emits a warning (not an error) when the estimated rate is at least 1
/// while the discount rate sits below the advisory thresholds.
pub fn fixed_point_solve(
    problem: &SwitchingProblem,
    lattice: &Lattice,
    options: &FixedPointOptions,
) -> Result<(SolutionField, CouplingState)> {
    let m = problem.mode_count();
    let mut gamma = ModeField::zeros(m, lattice);
    let mut errors: Vec<f64> = Vec::new();
    let mut norm_mode = NormMode::ExactSup;
    let mut solution: Option<SolutionField> = None;
    let mut converged = false;

    for _ in 0..options.max_iterations {
        let sol = apply_phi(problem, lattice, &gamma)?;
        let diff = sol.y.difference(&gamma)?;
        let (e, mode) = weighted_norm_with_mode(&diff, lattice);
        norm_mode = mode;
        errors.push(e);
        gamma = sol.y.clone();
        solution = Some(sol);
        if e < options.tol {
            converged = true;
            break;
        }
    }

    if !converged {
        return Err(Error::FixedPointDidNotConverge {
            iterations: errors.len(),
            trace: errors,
        });
    }

    let kappa_hat = estimate_rate(&errors);
    let mut warnings = Vec::new();
    if let Some(kappa) = kappa_hat {
        let bounds = required_discount(problem);
        if kappa >= 1.0 && (!bounds.meets_penalization || !bounds.meets_contraction) {
            warnings.push(format!(
                "estimated rate {kappa:.3} >= 1 while r = {} is below the advisory bounds \
                 (penalization {:.3}, contraction {:.3})",
                problem.discount(),
                bounds.r_penalization,
                bounds.r_contraction
            ));
        }
    }

    let solution = solution.expect("at least one iteration ran");
    let cross_check_gap = match &options.cross_validate {
        Some(schedule) => {
            let pen = penalization_at(problem, lattice, &gamma, schedule)?;
            let gap = solution
                .y0()
                .iter()
                .zip(pen.field.y0())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0_f64, f64::max);
            Some(gap)
        }
        None => None,
    };

    let state = CouplingState {
        iterations: errors.len(),
        errors,
        kappa_hat,
        norm_mode,
        warnings,
        cross_check_gap,
    };
    Ok((solution, state))
}

/// Samples random bounded profiles and returns the largest observed
/// ratio `||phi(G) - phi(G')|| / ||G - G'||`; a value below 1 is
/// empirical evidence of the contraction property on the sampled region.
pub fn contraction_probe(
    problem: &SwitchingProblem,
    lattice: &Lattice,
    pairs: usize,
    seed: u64,
) -> Result<f64> {
    if pairs == 0 {
        return Err(Error::InvalidInput("need at least one probe pair".into()));
    }
    let m = problem.mode_count();
    let scale = problem.max_zero_point_bound() / problem.discount() + problem.costs().bound() + 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let random_field = |rng: &mut ChaCha8Rng| {
        let mut f = ModeField::zeros(m, lattice);
        for k in 0..=lattice.grid().steps() {
            for node in 0..lattice.node_count(k) {
                for mode in 0..m {
                    f.set(k, node, mode, rng.random_range(-scale..=scale));
                }
            }
        }
        f
    };
    let mut max_ratio = 0.0_f64;
    for _ in 0..pairs {
        let g1 = random_field(&mut rng);
        let g2 = random_field(&mut rng);
        let denom = weighted_norm(&g1.difference(&g2)?, lattice);
        if denom == 0.0 {
            // degenerate pair, skip
            continue;
        }
        let y1 = apply_phi(problem, lattice, &g1)?;
        let y2 = apply_phi(problem, lattice, &g2)?;
        let num = weighted_norm(&y1.y.difference(&y2.y)?, lattice);
        max_ratio = max_ratio.max(num / denom);
    }
    Ok(max_ratio)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{truncate_horizon, StateModel, TimeGrid};
    use crate::problem::{
        AssumptionMode, DriverSpec, LipschitzModulus, ModeSet, SwitchingCostSpec, SwitchingProblem,
    };
    use crate::reflect::solve_reflected;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn det_lattice(r: f64, horizon: f64, dt: f64) -> Lattice {
        let steps = (horizon / dt).ceil() as usize;
        let grid = TimeGrid::new(horizon, steps, r).unwrap();
        Lattice::build(&StateModel::constant(vec![0.0]), grid).unwrap()
    }

    /// Two modes, each coupled to the other through a decaying weight.
    fn coupled_problem(r: f64, weight: f64) -> SwitchingProblem {
        let mk = |c: f64, other: usize| {
            DriverSpec::new(
                move |t: f64, _: &[f64], y: &[f64], _| c + weight * (-t).exp() * y[other],
                LipschitzModulus::ExponentialDecay {
                    level: weight,
                    decay: 1.0,
                },
                c,
            )
            .with_own_y(false)
            .with_cross_y(true)
        };
        SwitchingProblem::new(
            ModeSet::new(2).unwrap(),
            vec![mk(2.0, 1), mk(1.0, 0)],
            SwitchingCostSpec::uniform(0.5),
            r,
            StateModel::constant(vec![0.0]),
            AssumptionMode::H2Prime,
        )
        .unwrap()
    }

    fn uncoupled_problem(r: f64) -> SwitchingProblem {
        SwitchingProblem::new(
            ModeSet::new(2).unwrap(),
            vec![DriverSpec::constant(2.0), DriverSpec::constant(1.0)],
            SwitchingCostSpec::uniform(0.5),
            r,
            StateModel::constant(vec![0.0]),
            AssumptionMode::H2Prime,
        )
        .unwrap()
    }

    fn coupled_lattice(r: f64) -> Lattice {
        let horizon = truncate_horizon(r, 2.0, 1e-4).unwrap();
        det_lattice(r, horizon, 0.01)
    }

    #[test]
    fn norm_of_constant_field_is_sqrt_m() {
        let lat = det_lattice(1.0, 2.0, 0.1);
        let mut f = ModeField::zeros(3, &lat);
        for k in 0..=lat.grid().steps() {
            for mode in 0..3 {
                f.set(k, 0, mode, 1.0);
            }
        }
        let (norm, mode) = weighted_norm_with_mode(&f, &lat);
        assert_eq!(mode, NormMode::ExactSup);
        assert_abs_diff_eq!(norm, 3.0_f64.sqrt(), epsilon = 1e-12);
        assert_eq!(weighted_norm(&ModeField::zeros(3, &lat), &lat), 0.0);
    }

    #[test]
    fn norm_ties_cancel_discount_exactly() {
        // Y_k = exp(r t_k / 2) makes e^{-r t_k} |Y_k|^2 = 1 at every step.
        let r = 0.7;
        let lat = det_lattice(r, 3.0, 0.05);
        let mut f = ModeField::zeros(1, &lat);
        for k in 0..=lat.grid().steps() {
            f.set(k, 0, 0, (r * lat.grid().time(k) / 2.0).exp());
        }
        assert_abs_diff_eq!(weighted_norm(&f, &lat), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn proxy_dominates_exact_sup() {
        let grid = TimeGrid::new(1.0, 6, 1.0).unwrap();
        let lat =
            Lattice::build(&StateModel::binomial_arithmetic(vec![0.0], 0.0, 1.0), grid).unwrap();
        let mut f = ModeField::zeros(2, &lat);
        let mut c = 0.3_f64;
        for k in 0..=6 {
            for node in 0..lat.node_count(k) {
                for mode in 0..2 {
                    c = (c * 1.7 + 0.13).fract();
                    f.set(k, node, mode, c - 0.5);
                }
            }
        }
        let (exact, mode) = weighted_norm_with_mode(&f, &lat);
        assert_eq!(mode, NormMode::ExactSup);
        // recompute the proxy by hand
        let mut total = 0.0;
        for k in 0..=6 {
            for node in 0..lat.node_count(k) {
                let sq: f64 = (0..2).map(|m| f.get(k, node, m).powi(2)).sum();
                total += lat.node_prob(k, node) * lat.grid().discount(k) * sq;
            }
        }
        assert!(total.sqrt() >= exact);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn norm_homogeneity_and_triangle(values in proptest::collection::vec(-10.0_f64..10.0, 24), lambda in -4.0_f64..4.0) {
            let lat = det_lattice(1.0, 1.0, 0.1); // 10 steps, 11 slots
            let mut a = ModeField::zeros(1, &lat);
            let mut b = ModeField::zeros(1, &lat);
            for k in 0..=10 {
                a.set(k, 0, 0, values[k]);
                b.set(k, 0, 0, values[k + 11]);
            }
            // absolute homogeneity
            let mut scaled = a.clone();
            scaled.scale(lambda);
            prop_assert!((weighted_norm(&scaled, &lat) - lambda.abs() * weighted_norm(&a, &lat)).abs() < 1e-10);
            // triangle inequality
            let mut sum = ModeField::zeros(1, &lat);
            for k in 0..=10 {
                sum.set(k, 0, 0, values[k] + values[k + 11]);
            }
            prop_assert!(weighted_norm(&sum, &lat) <= weighted_norm(&a, &lat) + weighted_norm(&b, &lat) + 1e-10);
        }
    }

    #[test]
    fn phi_constant_for_uncoupled_drivers() {
        let p = uncoupled_problem(1.0);
        let lat = det_lattice(1.0, 5.0, 0.02);
        let zeros = ModeField::zeros(2, &lat);
        let mut shifted = ModeField::zeros(2, &lat);
        for k in 0..=lat.grid().steps() {
            shifted.set(k, 0, 0, 3.0);
            shifted.set(k, 0, 1, -2.0);
        }
        let a = apply_phi(&p, &lat, &zeros).unwrap();
        let b = apply_phi(&p, &lat, &shifted).unwrap();
        assert_eq!(a.y.max_abs_diff(&b.y).unwrap(), 0.0);
    }

    #[test]
    fn phi_at_zero_equals_decoupled_constants() {
        let p = coupled_problem(2.0, 0.1);
        let lat = coupled_lattice(2.0);
        let from_zero = apply_phi(&p, &lat, &ModeField::zeros(2, &lat)).unwrap();
        let frozen = uncoupled_problem_with_r();
        let direct = solve_reflected(&frozen, &lat, Backend::Projection, None).unwrap();
        assert_eq!(from_zero.y.max_abs_diff(&direct.field.y).unwrap(), 0.0);
    }

    fn uncoupled_problem_with_r() -> SwitchingProblem {
        SwitchingProblem::new(
            ModeSet::new(2).unwrap(),
            vec![DriverSpec::constant(2.0), DriverSpec::constant(1.0)],
            SwitchingCostSpec::uniform(0.5),
            2.0,
            StateModel::constant(vec![0.0]),
            AssumptionMode::H2Prime,
        )
        .unwrap()
    }

    #[test]
    fn fixed_point_uncoupled_two_iterations_and_bitwise_match() {
        let p = uncoupled_problem(1.0);
        let lat = det_lattice(1.0, 7.0, 0.01);
        let (sol, state) = fixed_point_solve(&p, &lat, &FixedPointOptions::default()).unwrap();
        assert_eq!(state.iterations, 2);
        assert_eq!(state.errors[1], 0.0);
        let direct = solve_reflected(&p, &lat, Backend::Projection, None).unwrap();
        assert!(sol.y.max_abs_diff(&direct.field.y).unwrap() <= 1e-12);
    }

    #[test]
    fn fixed_point_coupled_contracts() {
        let p = coupled_problem(2.0, 0.1);
        let lat = coupled_lattice(2.0);
        let (sol, state) = fixed_point_solve(&p, &lat, &FixedPointOptions::default()).unwrap();
        assert!(state.iterations <= 30);
        let kappa = state.kappa_hat.unwrap();
        assert!(kappa < 1.0, "estimated rate {kappa}");
        for pair in state.errors.windows(2) {
            assert!(
                pair[1] < pair[0],
                "errors must decrease: {:?}",
                state.errors
            );
        }
        // fixed-point residual: one more application barely moves
        let again = apply_phi(&p, &lat, &sol.y).unwrap();
        assert!(again.y.max_abs_diff(&sol.y).unwrap() < 1e-7);
        assert!(state.warnings.is_empty());
    }

    #[test]
    fn fixed_point_infinite_tol_single_application() {
        let p = coupled_problem(2.0, 0.1);
        let lat = coupled_lattice(2.0);
        let opts = FixedPointOptions {
            tol: f64::INFINITY,
            ..Default::default()
        };
        let (sol, state) = fixed_point_solve(&p, &lat, &opts).unwrap();
        assert_eq!(state.iterations, 1);
        let direct = apply_phi(&p, &lat, &ModeField::zeros(2, &lat)).unwrap();
        assert_eq!(sol.y.max_abs_diff(&direct.y).unwrap(), 0.0);
    }

    #[test]
    fn fixed_point_exhaustion_reports_trace() {
        let p = coupled_problem(2.0, 0.1);
        let lat = coupled_lattice(2.0);
        let opts = FixedPointOptions {
            tol: 0.0, // unreachable
            max_iterations: 3,
            cross_validate: None,
        };
        match fixed_point_solve(&p, &lat, &opts) {
            Err(Error::FixedPointDidNotConverge { iterations, trace }) => {
                assert_eq!(iterations, 3);
                assert_eq!(trace.len(), 3);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn cross_validation_gap_small() {
        let p = coupled_problem(2.0, 0.1);
        let lat = coupled_lattice(2.0);
        // dt = 0.01 here caps the penalty level at 16 (dt * (n m + r) < 1)
        let opts = FixedPointOptions {
            cross_validate: Some(PenaltySchedule::doubling(16)),
            ..Default::default()
        };
        let (_, state) = fixed_point_solve(&p, &lat, &opts).unwrap();
        let gap = state.cross_check_gap.unwrap();
        assert!(gap < 5e-2, "penalization cross-check gap {gap}");
    }

    #[test]
    fn probe_zero_for_uncoupled_and_contractive_for_coupled() {
        let lat = det_lattice(1.0, 5.0, 0.02);
        let ratio = contraction_probe(&uncoupled_problem(1.0), &lat, 4, 9).unwrap();
        assert_eq!(ratio, 0.0);

        let p = coupled_problem(2.0, 0.1);
        let lat = coupled_lattice(2.0);
        let ratio = contraction_probe(&p, &lat, 6, 17).unwrap();
        assert!(ratio < 1.0, "probe ratio {ratio}");
        assert!(ratio > 0.0);
    }

    #[test]
    fn probe_shift_invariant_for_difference_drivers() {
        // drivers read frozen differences only, so a constant shift of the
        // profile leaves phi unchanged
        let mk = |c: f64, i: usize| {
            DriverSpec::new(
                move |t: f64, _: &[f64], y: &[f64], _| c + 0.1 * (-t).exp() * (y[1 - i] - y[i]),
                LipschitzModulus::ExponentialDecay {
                    level: 0.2,
                    decay: 1.0,
                },
                c,
            )
            .with_own_y(false)
            .with_cross_y(true)
        };
        let p = SwitchingProblem::new(
            ModeSet::new(2).unwrap(),
            vec![mk(2.0, 0), mk(1.0, 1)],
            SwitchingCostSpec::uniform(0.5),
            2.0,
            StateModel::constant(vec![0.0]),
            AssumptionMode::H2Prime,
        )
        .unwrap();
        let lat = coupled_lattice(2.0);
        let mut gamma = ModeField::zeros(2, &lat);
        for k in 0..=lat.grid().steps() {
            gamma.set(k, 0, 0, (k as f64 * 0.01).sin());
            gamma.set(k, 0, 1, (k as f64 * 0.02).cos());
        }
        let base = apply_phi(&p, &lat, &gamma).unwrap();
        for shift in [0.5, -2.0, 10.0] {
            let mut shifted = gamma.clone();
            for k in 0..=lat.grid().steps() {
                for mode in 0..2 {
                    shifted.set(k, 0, mode, gamma.get(k, 0, mode) + shift);
                }
            }
            let moved = apply_phi(&p, &lat, &shifted).unwrap();
            // identical up to cancellation rounding in (G_j + c) - (G_i + c)
            assert!(moved.y.max_abs_diff(&base.y).unwrap() <= 1e-12);
        }
    }
}
