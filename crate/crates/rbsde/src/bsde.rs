//! Plain (non-reflected) backward solves on the lattice.
//!
//! One backward step per node solves the implicit relation
//!
//! ```text
//! Z_k = E_k[Y_{k+1} dB] / dt
//! Y_k = E_k[Y_{k+1}] + dt (f(t_k, X_k, Y_k, Z_k) - r Y_k)
//! ```
//!
//! equivalently `Y_k = (E_k[Y_{k+1}] + dt f(.., Y_k, Z_k)) / (1 + r dt)`,
//! with a per-node Picard iteration over the driver's y dependence. The
//! `-r Y` drift is resolved exactly by the division, so the iteration
//! contracts at rate `dt u / (1 + r dt)`; the precondition
//! `dt (u + r) < 1` is enforced before stepping. Implicit-in-Y is used
//! because the drift is stiff at the large discount rates the theory
//! calls for.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::ModeField;
use crate::lattice::Lattice;
use crate::problem::SwitchingProblem;

pub(crate) const INNER_TOL: f64 = 1e-12;
pub(crate) const INNER_MAX_ITERS: usize = 50;
/// Below this many nodes a step is solved serially.
const PARALLEL_THRESHOLD: usize = 64;

/// Discrete `(Y, Z)` pair produced by a backward solve.
#[derive(Debug, Clone)]
pub struct BsdeField {
    pub y: ModeField,
    pub z: ModeField,
}

impl BsdeField {
    pub fn y0(&self) -> Vec<f64> {
        self.y.at_origin()
    }

    pub fn z0(&self) -> Vec<f64> {
        self.z.at_origin()
    }
}

/// Per-mode scalar driver `(t, x, y_own, z_own) -> f`.
pub type ScalarDriver<'a> = Box<dyn Fn(f64, &[f64], f64, f64) -> f64 + Sync + 'a>;

/// Step- and node-aware scalar driver used internally where the generator
/// must look up frozen fields.
pub(crate) type StepDriver<'a> =
    Box<dyn Fn(usize, usize, f64, &[f64], f64, f64) -> f64 + Sync + 'a>;

pub(crate) fn check_step_size(dt: f64, lipschitz: f64, rate: f64) -> Result<()> {
    let combined = lipschitz + rate;
    if dt * combined >= 1.0 {
        return Err(Error::StepSizeTooLarge { dt, rate: combined });
    }
    Ok(())
}

/// Solves the (possibly mode-coupled) backward system with a vector
/// driver filling `out[mode]` from the live `(y, z)` vectors at a node.
pub(crate) fn solve_system<F>(
    lattice: &Lattice,
    rate: f64,
    modes: usize,
    driver: &F,
    lipschitz_bound: f64,
    terminal: Option<&[Vec<f64>]>,
    warm: Option<&ModeField>,
) -> Result<BsdeField>
where
    F: Fn(usize, usize, f64, &[f64], &[f64], &[f64], &mut [f64]) + Sync,
{
    let n = lattice.grid().steps();
    let dt = lattice.grid().dt();
    check_step_size(dt, lipschitz_bound, rate)?;

    let mut y = ModeField::zeros(modes, lattice);
    let mut z = ModeField::zeros(modes, lattice);

    if let Some(term) = terminal {
        if term.len() != modes {
            return Err(Error::DimensionMismatch {
                expected: modes,
                got: term.len(),
                context: "terminal modes",
            });
        }
        for (mode, row) in term.iter().enumerate() {
            if row.len() != lattice.node_count(n) {
                return Err(Error::DimensionMismatch {
                    expected: lattice.node_count(n),
                    got: row.len(),
                    context: "terminal nodes",
                });
            }
            for (node, &v) in row.iter().enumerate() {
                y.set(n, node, mode, v);
            }
        }
    }

    for k in (0..n).rev() {
        let mut cont = Vec::with_capacity(modes);
        let mut zrow = Vec::with_capacity(modes);
        for i in 0..modes {
            cont.push(lattice.cond_expect(k, y.mode_slice(k + 1, i))?);
            zrow.push(lattice.cond_expect_with_increment(k, y.mode_slice(k + 1, i))?);
        }
        let solved = solve_step_nodes(lattice, rate, modes, driver, k, &cont, &zrow, warm)?;
        for node in 0..lattice.node_count(k) {
            for i in 0..modes {
                y.set(k, node, i, solved[node * modes + i]);
                z.set(k, node, i, zrow[i][node]);
            }
        }
    }
    Ok(BsdeField { y, z })
}

/// Solves all nodes of one time step; returns values node-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn solve_step_nodes<F>(
    lattice: &Lattice,
    rate: f64,
    modes: usize,
    driver: &F,
    step: usize,
    cont: &[Vec<f64>],
    zrow: &[Vec<f64>],
    warm: Option<&ModeField>,
) -> Result<Vec<f64>>
where
    F: Fn(usize, usize, f64, &[f64], &[f64], &[f64], &mut [f64]) + Sync,
{
    let dt = lattice.grid().dt();
    let t = lattice.grid().time(step);
    let nodes = lattice.node_count(step);
    let denom = 1.0 + rate * dt;

    let solve_node = |node: usize| -> Result<Vec<f64>> {
        let x = lattice.state(step, node);
        let mut zv = vec![0.0; modes];
        let mut cv = vec![0.0; modes];
        for i in 0..modes {
            zv[i] = zrow[i][node];
            cv[i] = cont[i][node];
        }
        let mut cur = vec![0.0; modes];
        match warm {
            Some(w) => w.gather(step, node, &mut cur),
            None => cur.copy_from_slice(&cv),
        }
        let mut fv = vec![0.0; modes];
        let mut next = vec![0.0; modes];
        let mut delta = f64::INFINITY;
        for _ in 0..INNER_MAX_ITERS {
            driver(step, node, t, x, &cur, &zv, &mut fv);
            delta = 0.0;
            for i in 0..modes {
                let v = (cv[i] + dt * fv[i]) / denom;
                delta = delta.max((v - cur[i]).abs());
                next[i] = v;
            }
            std::mem::swap(&mut cur, &mut next);
            if delta < INNER_TOL {
                return Ok(cur);
            }
        }
        Err(Error::InnerIterationDiverged {
            step,
            node,
            residual: delta,
        })
    };

    let per_node: Vec<Vec<f64>> = if nodes >= PARALLEL_THRESHOLD {
        (0..nodes)
            .into_par_iter()
            .map(solve_node)
            .collect::<Result<_>>()?
    } else {
        (0..nodes).map(solve_node).collect::<Result<_>>()?
    };

    let mut flat = vec![0.0; nodes * modes];
    for (node, vals) in per_node.into_iter().enumerate() {
        flat[node * modes..(node + 1) * modes].copy_from_slice(&vals);
    }
    Ok(flat)
}

/// Scalar version of the per-node implicit solve, shared with the
/// strategy evaluator so that a never-switch evaluation reproduces the
/// plain solve bit for bit.
pub(crate) fn solve_implicit_scalar(
    step: usize,
    node: usize,
    cont: f64,
    dt: f64,
    rate: f64,
    init: f64,
    f: impl Fn(f64) -> f64,
) -> Result<f64> {
    let denom = 1.0 + rate * dt;
    let mut cur = init;
    let mut delta = f64::INFINITY;
    for _ in 0..INNER_MAX_ITERS {
        let v = (cont + dt * f(cur)) / denom;
        delta = (v - cur).abs();
        cur = v;
        if delta < INNER_TOL {
            return Ok(cur);
        }
    }
    Err(Error::InnerIterationDiverged {
        step,
        node,
        residual: delta,
    })
}

/// Backward solve of the plain BSDE system with one scalar driver per
/// mode and the given terminal field (`None` means zero, the truncation
/// convention). Modes do not interact here.
pub fn solve_bsde(
    problem: &SwitchingProblem,
    lattice: &Lattice,
    drivers: &[ScalarDriver<'_>],
    terminal: Option<&[Vec<f64>]>,
) -> Result<BsdeField> {
    let modes = drivers.len();
    if modes == 0 {
        return Err(Error::InvalidInput("at least one driver required".into()));
    }
    let system =
        |_step: usize, _node: usize, t: f64, x: &[f64], y: &[f64], z: &[f64], out: &mut [f64]| {
            for i in 0..modes {
                out[i] = drivers[i](t, x, y[i], z[i]);
            }
        };
    solve_system(
        lattice,
        problem.discount(),
        modes,
        &system,
        problem.lipschitz_sup(),
        terminal,
        None,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{truncate_horizon, StateModel, TimeGrid};
    use crate::problem::{
        AssumptionMode, DriverSpec, LipschitzModulus, ModeSet, SwitchingCostSpec, SwitchingProblem,
    };
    use approx::assert_abs_diff_eq;

    fn one_mode_problem(r: f64) -> SwitchingProblem {
        SwitchingProblem::new(
            ModeSet::new(1).unwrap(),
            vec![DriverSpec::constant(1.0)],
            SwitchingCostSpec::uniform(1.0),
            r,
            StateModel::constant(vec![0.0]),
            AssumptionMode::H2Prime,
        )
        .unwrap()
    }

    fn det_lattice(r: f64, horizon: f64, dt_target: f64) -> Lattice {
        let steps = (horizon / dt_target).ceil() as usize;
        let grid = TimeGrid::new(horizon, steps, r).unwrap();
        Lattice::build(&StateModel::constant(vec![0.0]), grid).unwrap()
    }

    #[test]
    fn constant_driver_recovers_c_over_r() {
        let r = 0.5;
        let problem = one_mode_problem(r);
        let horizon = truncate_horizon(r, 1.0, 1e-4).unwrap();
        let lattice = det_lattice(r, horizon, 0.01);
        let drivers: Vec<ScalarDriver> = vec![Box::new(|_, _, _, _| 1.0)];
        let field = solve_bsde(&problem, &lattice, &drivers, None).unwrap();
        assert_abs_diff_eq!(field.y0()[0], 2.0, epsilon = 1e-2);
        assert_eq!(field.z0()[0], 0.0);
    }

    #[test]
    fn stationary_affine_driver() {
        // f(y) = 1 - y, r = 1: the bounded stationary solution is 1/(r+1).
        let r = 1.0;
        let problem = SwitchingProblem::new(
            ModeSet::new(1).unwrap(),
            vec![DriverSpec::new(
                |_, _, y: &[f64], _| 1.0 - y[0],
                LipschitzModulus::ConstantOnWindow {
                    level: 1.0,
                    window_end: 20.0,
                },
                1.0,
            )],
            SwitchingCostSpec::uniform(1.0),
            r,
            StateModel::constant(vec![0.0]),
            AssumptionMode::H2Prime,
        )
        .unwrap();
        let lattice = det_lattice(r, 10.0, 0.01);
        let drivers: Vec<ScalarDriver> = vec![Box::new(|_, _, y, _| 1.0 - y)];
        let field = solve_bsde(&problem, &lattice, &drivers, None).unwrap();
        assert_abs_diff_eq!(field.y0()[0], 0.5, epsilon = 1e-2);
    }

    #[test]
    fn zero_driver_zero_terminal_gives_zero() {
        let problem = one_mode_problem(1.0);
        let lattice = det_lattice(1.0, 2.0, 0.05);
        let drivers: Vec<ScalarDriver> = vec![Box::new(|_, _, _, _| 0.0)];
        let field = solve_bsde(&problem, &lattice, &drivers, None).unwrap();
        assert_eq!(field.y.max_abs(), 0.0);
        assert_eq!(field.z.max_abs(), 0.0);
    }

    #[test]
    fn z_vanishes_on_deterministic_lattices() {
        let problem = one_mode_problem(1.0);
        let lattice = det_lattice(1.0, 3.0, 0.05);
        let drivers: Vec<ScalarDriver> = vec![Box::new(|t, _, y, _| (1.0 + t).sin() - 0.1 * y)];
        let field = solve_bsde(&problem, &lattice, &drivers, None).unwrap();
        assert_eq!(field.z.max_abs(), 0.0);
        assert!(field.y.is_finite());
    }

    #[test]
    fn comparison_theorem_on_tree() {
        let r = 1.0;
        let problem = one_mode_problem(r);
        let grid = TimeGrid::new(2.0, 40, r).unwrap();
        let lattice =
            Lattice::build(&StateModel::binomial_arithmetic(vec![0.0], 0.0, 1.0), grid).unwrap();
        let lo: Vec<ScalarDriver> = vec![Box::new(|t: f64, _: &[f64], y: f64, _| {
            1.0 + (-t).exp() * 0.2 * (1.0 - y)
        })];
        let hi: Vec<ScalarDriver> = vec![Box::new(|t: f64, _: &[f64], y: f64, _| {
            1.3 + (-t).exp() * 0.2 * (1.0 - y)
        })];
        let a = solve_bsde(&problem, &lattice, &lo, None).unwrap();
        let b = solve_bsde(&problem, &lattice, &hi, None).unwrap();
        for k in 0..=lattice.grid().steps() {
            for node in 0..lattice.node_count(k) {
                assert!(a.y.get(k, node, 0) <= b.y.get(k, node, 0) + 1e-12);
            }
        }
    }

    #[test]
    fn linearity_for_state_drivers() {
        let r = 1.0;
        let problem = one_mode_problem(r);
        let lattice = det_lattice(r, 4.0, 0.02);
        let f1: Vec<ScalarDriver> = vec![Box::new(|t: f64, _: &[f64], _, _| (t * 0.7).cos())];
        let f2: Vec<ScalarDriver> = vec![Box::new(|t: f64, _: &[f64], _, _| 0.5 * t)];
        let sum: Vec<ScalarDriver> = vec![Box::new(|t: f64, _: &[f64], _, _| {
            (t * 0.7).cos() + 0.5 * t
        })];
        let a = solve_bsde(&problem, &lattice, &f1, None).unwrap();
        let b = solve_bsde(&problem, &lattice, &f2, None).unwrap();
        let c = solve_bsde(&problem, &lattice, &sum, None).unwrap();
        assert_abs_diff_eq!(a.y0()[0] + b.y0()[0], c.y0()[0], epsilon = 1e-10);
    }

    #[test]
    fn refinement_halves_error() {
        // First-order scheme: halving dt roughly halves the distance to the
        // limit, so successive deltas shrink by a factor in [1.5, 3].
        let r = 1.0;
        let problem = one_mode_problem(r);
        let horizon = 6.0;
        let mut values = Vec::new();
        for steps in [150usize, 300, 600, 1200] {
            let grid = TimeGrid::new(horizon, steps, r).unwrap();
            let lattice = Lattice::build(&StateModel::constant(vec![0.0]), grid).unwrap();
            let drivers: Vec<ScalarDriver> = vec![Box::new(|t: f64, _: &[f64], y, _| {
                1.0 + 0.2 * (-t).exp() * y
            })];
            values.push(solve_bsde(&problem, &lattice, &drivers, None).unwrap().y0()[0]);
        }
        let d1 = (values[1] - values[0]).abs();
        let d2 = (values[2] - values[1]).abs();
        let d3 = (values[3] - values[2]).abs();
        for ratio in [d1 / d2, d2 / d3] {
            assert!(
                (1.5..=3.0).contains(&ratio),
                "refinement ratio {ratio} outside [1.5, 3]"
            );
        }
    }

    #[test]
    fn oversized_step_rejected() {
        let problem = one_mode_problem(1.0);
        let grid = TimeGrid::new(10.0, 5, 1.0).unwrap(); // dt = 2
        let lattice = Lattice::build(&StateModel::constant(vec![0.0]), grid).unwrap();
        let drivers: Vec<ScalarDriver> = vec![Box::new(|_, _, _, _| 1.0)];
        assert!(matches!(
            solve_bsde(&problem, &lattice, &drivers, None),
            Err(Error::StepSizeTooLarge { .. })
        ));
    }
}
