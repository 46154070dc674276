//! Truncated time grid and Brownian-driven state chain.
//!
//! All backward solvers run on a recombining lattice carrying, per node,
//! the state value `X`, the outgoing branch probabilities and the Brownian
//! increment realised on each branch. Conditional expectations against the
//! chain are exact probability-weighted averages, which is what makes
//! desk-scale oracle comparisons exact rather than regression-noisy.
//!
//! The single noise source is a one-dimensional Brownian motion; the same
//! branch increments drive both the state transition and the stochastic
//! integral of the backward equations.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Deterministic scalar function of time.
pub type TimeFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Map `(t, b, x0) -> x` placing the state on the Brownian chain.
pub type StateMapFn = Arc<dyn Fn(f64, f64, &[f64]) -> Vec<f64> + Send + Sync>;

/// Smallest horizon `T` with `exp(-r T) * driver_bound / r <= tail_tolerance`.
///
/// Setting the terminal value to zero at `T` then costs at most
/// `tail_tolerance`, since the discounted tail of the driver integral is
/// bounded by `exp(-r T) * driver_bound / r`.
pub fn truncate_horizon(r: f64, driver_bound: f64, tail_tolerance: f64) -> Result<f64> {
    if !(r > 0.0) || !(driver_bound > 0.0) || !(tail_tolerance > 0.0) {
        return Err(Error::InvalidInput(format!(
            "truncate_horizon requires positive inputs, got r = {r}, bound = {driver_bound}, tolerance = {tail_tolerance}"
        )));
    }
    let ratio = driver_bound / (r * tail_tolerance);
    Ok((ratio.ln() / r).max(0.0))
}

/// Uniform time grid on `[0, horizon]` with precomputed discount weights.
#[derive(Debug, Clone)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
    dt: f64,
    rate: f64,
    discounts: Vec<f64>,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize, rate: f64) -> Result<Self> {
        if !(horizon > 0.0) || steps == 0 || !(rate > 0.0) {
            return Err(Error::InvalidInput(format!(
                "time grid requires horizon > 0, steps >= 1, rate > 0 (got {horizon}, {steps}, {rate})"
            )));
        }
        let dt = horizon / steps as f64;
        let discounts = (0..=steps).map(|k| (-rate * dt * k as f64).exp()).collect();
        Ok(TimeGrid {
            horizon,
            steps,
            dt,
            rate,
            discounts,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn time(&self, step: usize) -> f64 {
        self.dt * step as f64
    }

    /// `exp(-r t_k)`.
    pub fn discount(&self, step: usize) -> f64 {
        self.discounts[step]
    }
}

/// How the state `X` is generated on the chain.
///
/// Tree kinds place `X` as a function of `(t, B_t)`, which keeps the
/// lattice recombining even with time-varying coefficients. Deterministic
/// paths carry no noise at all (one node per step, zero Brownian
/// increment), so closed-form ODE cases are exactly representable.
#[derive(Clone)]
pub enum StateModel {
    DeterministicPath {
        path: Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>,
    },
    RecombiningBinomial {
        x0: Vec<f64>,
        map: StateMap,
    },
    RecombiningTrinomial {
        x0: Vec<f64>,
        map: StateMap,
    },
}

/// Map from `(t, B_t)` to the state vector, for tree kinds.
#[derive(Clone)]
pub enum StateMap {
    /// `x[0] = x0[0] + (integrated drift) + vol(t) * b`, other components frozen.
    Arithmetic { drift: TimeFn, vol: TimeFn },
    /// `x[0] = x0[0] * exp((integrated drift) + vol(t) * b)`, other components frozen.
    Geometric { drift: TimeFn, vol: TimeFn },
    /// Arbitrary map `(t, b, x0) -> x`.
    Custom(StateMapFn),
}

impl StateModel {
    /// Deterministic path frozen at a constant state.
    pub fn constant(x: Vec<f64>) -> Self {
        StateModel::DeterministicPath {
            path: Arc::new(move |_| x.clone()),
        }
    }

    pub fn path(f: impl Fn(f64) -> Vec<f64> + Send + Sync + 'static) -> Self {
        StateModel::DeterministicPath { path: Arc::new(f) }
    }

    pub fn binomial_arithmetic(x0: Vec<f64>, drift: f64, vol: f64) -> Self {
        StateModel::RecombiningBinomial {
            x0,
            map: StateMap::Arithmetic {
                drift: Arc::new(move |_| drift),
                vol: Arc::new(move |_| vol),
            },
        }
    }

    pub fn trinomial_arithmetic(x0: Vec<f64>, drift: f64, vol: f64) -> Self {
        StateModel::RecombiningTrinomial {
            x0,
            map: StateMap::Arithmetic {
                drift: Arc::new(move |_| drift),
                vol: Arc::new(move |_| vol),
            },
        }
    }
}

impl fmt::Debug for StateModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StateModel::DeterministicPath { .. } => write!(f, "DeterministicPath"),
            StateModel::RecombiningBinomial { x0, .. } => {
                write!(f, "RecombiningBinomial {{ x0: {x0:?} }}")
            }
            StateModel::RecombiningTrinomial { x0, .. } => {
                write!(f, "RecombiningTrinomial {{ x0: {x0:?} }}")
            }
        }
    }
}

/// One outgoing transition of a lattice node.
#[derive(Debug, Clone, Copy)]
pub struct Branch {
    /// Node index at the next step.
    pub child: usize,
    pub prob: f64,
    /// Brownian increment realised on this branch.
    pub db: f64,
}

/// Recombining chain for `(X, B)` on a truncated time grid.
#[derive(Debug, Clone)]
pub struct Lattice {
    grid: TimeGrid,
    /// `states[step][node]` -> state vector.
    states: Vec<Vec<Vec<f64>>>,
    /// `branches[step][node]` for step in `0..N`.
    branches: Vec<Vec<Vec<Branch>>>,
    /// Forward probability of occupying each node.
    node_probs: Vec<Vec<f64>>,
    branching: usize,
}

const MOMENT_TOL: f64 = 1e-12;

impl Lattice {
    /// Builds the chain, checking branch-probability and Brownian-moment
    /// invariants at every node.
    pub fn build(spec: &StateModel, grid: TimeGrid) -> Result<Self> {
        let n = grid.steps();
        let dt = grid.dt();

        let (states, branches, branching) = match spec {
            StateModel::DeterministicPath { path } => {
                let states: Vec<Vec<Vec<f64>>> =
                    (0..=n).map(|k| vec![path(grid.time(k))]).collect();
                let branches = (0..n)
                    .map(|_| {
                        vec![vec![Branch {
                            child: 0,
                            prob: 1.0,
                            db: 0.0,
                        }]]
                    })
                    .collect();
                (states, branches, 1)
            }
            StateModel::RecombiningBinomial { x0, map } => {
                let sqrt_dt = dt.sqrt();
                // Node j at step k carries B = (2j - k) * sqrt(dt).
                let states = build_tree_states(
                    &grid,
                    x0,
                    map,
                    |k| k + 1,
                    |k, j| (2.0 * j as f64 - k as f64) * sqrt_dt,
                )?;
                let branches = (0..n)
                    .map(|k| {
                        (0..=k)
                            .map(|j| {
                                vec![
                                    Branch {
                                        child: j,
                                        prob: 0.5,
                                        db: -sqrt_dt,
                                    },
                                    Branch {
                                        child: j + 1,
                                        prob: 0.5,
                                        db: sqrt_dt,
                                    },
                                ]
                            })
                            .collect()
                    })
                    .collect();
                (states, branches, 2)
            }
            StateModel::RecombiningTrinomial { x0, map } => {
                let spread = (3.0 * dt).sqrt();
                // Node j at step k carries B = (j - k) * sqrt(3 dt).
                let states = build_tree_states(
                    &grid,
                    x0,
                    map,
                    |k| 2 * k + 1,
                    |k, j| (j as f64 - k as f64) * spread,
                )?;
                let branches = (0..n)
                    .map(|k| {
                        (0..=2 * k)
                            .map(|j| {
                                vec![
                                    Branch {
                                        child: j,
                                        prob: 1.0 / 6.0,
                                        db: -spread,
                                    },
                                    Branch {
                                        child: j + 1,
                                        prob: 2.0 / 3.0,
                                        db: 0.0,
                                    },
                                    Branch {
                                        child: j + 2,
                                        prob: 1.0 / 6.0,
                                        db: spread,
                                    },
                                ]
                            })
                            .collect()
                    })
                    .collect();
                (states, branches, 3)
            }
        };

        let mut lattice = Lattice {
            grid,
            states,
            branches,
            node_probs: Vec::new(),
            branching,
        };
        lattice.check_transition_invariants()?;
        lattice.node_probs = lattice.forward_probabilities();
        Ok(lattice)
    }

    fn check_transition_invariants(&self) -> Result<()> {
        let dt = self.grid.dt();
        for (step, nodes) in self.branches.iter().enumerate() {
            for (node, branches) in nodes.iter().enumerate() {
                let mut psum = 0.0;
                let mut mean = 0.0;
                let mut var = 0.0;
                for b in branches {
                    if b.prob < 0.0 {
                        return Err(Error::InvalidInput(format!(
                            "negative branch probability at step {step}, node {node}"
                        )));
                    }
                    psum += b.prob;
                    mean += b.prob * b.db;
                    var += b.prob * b.db * b.db;
                }
                // On the deterministic kind var = 0 = dt is not required:
                // there is no Brownian increment at all (db identically 0).
                let var_target = if self.branching == 1 { 0.0 } else { dt };
                if (psum - 1.0).abs() > MOMENT_TOL
                    || mean.abs() > MOMENT_TOL
                    || (var - var_target).abs() > MOMENT_TOL
                {
                    return Err(Error::InvalidInput(format!(
                        "branch moments violated at step {step}, node {node}: sum p = {psum}, E[dB] = {mean}, E[dB^2] = {var}"
                    )));
                }
            }
        }
        Ok(())
    }

    fn forward_probabilities(&self) -> Vec<Vec<f64>> {
        let n = self.grid.steps();
        let mut probs: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
        probs.push(vec![1.0]);
        for k in 0..n {
            let mut next = vec![0.0; self.node_count(k + 1)];
            for (node, branches) in self.branches[k].iter().enumerate() {
                let p = probs[k][node];
                for b in branches {
                    next[b.child] += p * b.prob;
                }
            }
            probs.push(next);
        }
        probs
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn node_count(&self, step: usize) -> usize {
        self.states[step].len()
    }

    pub fn state(&self, step: usize, node: usize) -> &[f64] {
        &self.states[step][node]
    }

    pub fn branches(&self, step: usize, node: usize) -> &[Branch] {
        &self.branches[step][node]
    }

    /// Forward probability of occupying (step, node).
    pub fn node_prob(&self, step: usize, node: usize) -> f64 {
        self.node_probs[step][node]
    }

    /// Exact conditional expectation: probability-weighted average of the
    /// children's values, per node at `step`.
    pub fn cond_expect(&self, step: usize, next_values: &[f64]) -> Result<Vec<f64>> {
        self.check_next_len(step, next_values.len())?;
        Ok(self.branches[step]
            .iter()
            .map(|branches| branches.iter().map(|b| b.prob * next_values[b.child]).sum())
            .collect())
    }

    /// Discrete conditional covariance with the Brownian increment:
    /// `sum_b p_b * value_b * dB_b / dt` per node. Used to recover `Z`.
    pub fn cond_expect_with_increment(&self, step: usize, next_values: &[f64]) -> Result<Vec<f64>> {
        self.check_next_len(step, next_values.len())?;
        let dt = self.grid.dt();
        if dt == 0.0 {
            return Err(Error::InvalidInput("dt must be positive".into()));
        }
        Ok(self.branches[step]
            .iter()
            .map(|branches| {
                branches
                    .iter()
                    .map(|b| b.prob * next_values[b.child] * b.db)
                    .sum::<f64>()
                    / dt
            })
            .collect())
    }

    fn check_next_len(&self, step: usize, got: usize) -> Result<()> {
        let expected = self.node_count(step + 1);
        if got != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got,
                context: "values at next step",
            });
        }
        Ok(())
    }

    /// Number of distinct paths through the lattice, if it fits in u128.
    pub fn path_count(&self) -> Option<u128> {
        let n = self.grid.steps() as u32;
        (self.branching as u128).checked_pow(n)
    }

    /// Visits every path as (probability, node index per step 0..=N).
    ///
    /// Intended for desk-scale diagnostics; callers should consult
    /// [`Lattice::path_count`] first.
    pub fn for_each_path(&self, mut visit: impl FnMut(f64, &[usize])) {
        let n = self.grid.steps();
        let mut nodes = vec![0usize; n + 1];
        let mut probs = vec![1.0f64; n + 1];
        // choice[k] = branch index taken at step k
        let mut choice = vec![0usize; n];
        let mut k = 0usize;
        loop {
            if k == n {
                visit(probs[n], &nodes);
                // backtrack to the deepest step with an unexplored branch
                loop {
                    if k == 0 {
                        return;
                    }
                    k -= 1;
                    choice[k] += 1;
                    if choice[k] < self.branches[k][nodes[k]].len() {
                        break;
                    }
                }
            }
            let b = &self.branches[k][nodes[k]][choice[k]];
            nodes[k + 1] = b.child;
            probs[k + 1] = probs[k] * b.prob;
            k += 1;
            if k < n {
                choice[k] = 0;
            }
        }
    }
}

fn build_tree_states(
    grid: &TimeGrid,
    x0: &[f64],
    map: &StateMap,
    count_at: impl Fn(usize) -> usize,
    b_value: impl Fn(usize, usize) -> f64,
) -> Result<Vec<Vec<Vec<f64>>>> {
    if x0.is_empty() {
        return Err(Error::InvalidInput("state dimension must be >= 1".into()));
    }
    let n = grid.steps();
    let dt = grid.dt();
    let mut states = Vec::with_capacity(n + 1);
    let mut cum_drift = 0.0;
    for k in 0..=n {
        let t = grid.time(k);
        let count = count_at(k);
        let mut level = Vec::with_capacity(count);
        for j in 0..count {
            let b = b_value(k, j);
            let x = match map {
                StateMap::Arithmetic { vol, .. } => {
                    let sigma = vol(t);
                    if sigma < 0.0 {
                        return Err(Error::NegativeVolatility { t, value: sigma });
                    }
                    let mut x = x0.to_vec();
                    x[0] = x0[0] + cum_drift + sigma * b;
                    x
                }
                StateMap::Geometric { vol, .. } => {
                    let sigma = vol(t);
                    if sigma < 0.0 {
                        return Err(Error::NegativeVolatility { t, value: sigma });
                    }
                    let mut x = x0.to_vec();
                    x[0] = x0[0] * (cum_drift + sigma * b).exp();
                    x
                }
                StateMap::Custom(f) => f(t, b, x0),
            };
            level.push(x);
        }
        states.push(level);
        if k < n {
            match map {
                StateMap::Arithmetic { drift, .. } | StateMap::Geometric { drift, .. } => {
                    cum_drift += drift(t) * dt;
                }
                StateMap::Custom(_) => {}
            }
        }
    }
    Ok(states)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn truncation_closed_forms() {
        let t = truncate_horizon(1.0, 2.0, 1e-3).unwrap();
        assert_abs_diff_eq!(t, (2000.0_f64).ln(), epsilon = 1e-12);
        let t = truncate_horizon(0.5, 1.0, 1e-4).unwrap();
        assert_abs_diff_eq!(t, 2.0 * (20000.0_f64).ln(), epsilon = 1e-12);
        // degenerate clamp: bound already below tolerance
        let t = truncate_horizon(2.0, 1.0, 1.0).unwrap();
        assert_eq!(t, 0.0);
        assert!(truncate_horizon(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn discounts_strictly_decreasing() {
        let grid = TimeGrid::new(2.0, 10, 0.7).unwrap();
        for k in 1..=10 {
            assert!(grid.discount(k) < grid.discount(k - 1));
        }
        assert_eq!(grid.discount(0), 1.0);
    }

    #[test]
    fn deterministic_path_single_node_zero_db() {
        let grid = TimeGrid::new(1.0, 10, 1.0).unwrap();
        let lat = Lattice::build(&StateModel::path(|t| vec![t * 2.0]), grid).unwrap();
        for k in 0..=10 {
            assert_eq!(lat.node_count(k), 1);
        }
        for k in 0..10 {
            let b = lat.branches(k, 0);
            assert_eq!(b.len(), 1);
            assert_eq!(b[0].db, 0.0);
            assert_eq!(b[0].prob, 1.0);
        }
        assert_abs_diff_eq!(lat.state(5, 0)[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn binomial_recombination_counts() {
        let grid = TimeGrid::new(1.0, 2, 1.0).unwrap();
        let lat =
            Lattice::build(&StateModel::binomial_arithmetic(vec![0.0], 0.0, 1.0), grid).unwrap();
        assert_eq!(
            (0..=2).map(|k| lat.node_count(k)).collect::<Vec<_>>(),
            vec![1, 2, 3]
        );
    }

    #[test]
    fn trinomial_brownian_moments() {
        let grid = TimeGrid::new(1.0, 3, 1.0).unwrap();
        let lat =
            Lattice::build(&StateModel::trinomial_arithmetic(vec![0.0], 0.0, 1.0), grid).unwrap();
        let dt = lat.grid().dt();
        for k in 0..3 {
            for node in 0..lat.node_count(k) {
                let (mut mean, mut var) = (0.0, 0.0);
                for b in lat.branches(k, node) {
                    mean += b.prob * b.db;
                    var += b.prob * b.db * b.db;
                }
                assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-12);
                assert_abs_diff_eq!(var, dt, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn negative_volatility_rejected() {
        let grid = TimeGrid::new(1.0, 2, 1.0).unwrap();
        let spec = StateModel::RecombiningBinomial {
            x0: vec![0.0],
            map: StateMap::Arithmetic {
                drift: Arc::new(|_| 0.0),
                vol: Arc::new(|t| if t > 0.4 { -1.0 } else { 1.0 }),
            },
        };
        assert!(matches!(
            Lattice::build(&spec, grid),
            Err(Error::NegativeVolatility { .. })
        ));
    }

    #[test]
    fn cond_expect_basics() {
        let grid = TimeGrid::new(1.0, 4, 1.0).unwrap();
        let lat =
            Lattice::build(&StateModel::binomial_arithmetic(vec![0.0], 0.0, 1.0), grid).unwrap();
        // constant preserved
        let c = vec![3.5; lat.node_count(1)];
        let e = lat.cond_expect(0, &c).unwrap();
        assert_abs_diff_eq!(e[0], 3.5, epsilon = 1e-15);
        // average of distinct children
        let vals = vec![1.0, 3.0];
        let e = lat.cond_expect(0, &vals).unwrap();
        assert_abs_diff_eq!(e[0], 2.0, epsilon = 1e-15);
        // dimension mismatch caught
        assert!(lat.cond_expect(0, &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn cond_expect_with_increment_formula() {
        // dt = 0.25, children (up, down) = (1, -1): covariance/dt = 2
        let grid = TimeGrid::new(0.25, 1, 1.0).unwrap();
        let lat =
            Lattice::build(&StateModel::binomial_arithmetic(vec![0.0], 0.0, 1.0), grid).unwrap();
        let z = lat.cond_expect_with_increment(0, &[-1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(z[0], 2.0, epsilon = 1e-12);
        // constants have zero covariance with dB
        let z = lat.cond_expect_with_increment(0, &[4.0, 4.0]).unwrap();
        assert_abs_diff_eq!(z[0], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn deterministic_cond_expect_identity_and_zero_z() {
        let grid = TimeGrid::new(1.0, 3, 1.0).unwrap();
        let lat = Lattice::build(&StateModel::constant(vec![0.0]), grid).unwrap();
        let e = lat.cond_expect(1, &[7.0]).unwrap();
        assert_eq!(e, vec![7.0]);
        let z = lat.cond_expect_with_increment(1, &[7.0]).unwrap();
        assert_eq!(z, vec![0.0]);
    }

    #[test]
    fn cond_expect_monotone() {
        let grid = TimeGrid::new(1.0, 5, 1.0).unwrap();
        let lat =
            Lattice::build(&StateModel::trinomial_arithmetic(vec![0.0], 0.1, 0.5), grid).unwrap();
        let lo: Vec<f64> = (0..lat.node_count(3)).map(|j| j as f64).collect();
        let hi: Vec<f64> = lo.iter().map(|v| v + 0.25).collect();
        let elo = lat.cond_expect(2, &lo).unwrap();
        let ehi = lat.cond_expect(2, &hi).unwrap();
        for (a, b) in elo.iter().zip(&ehi) {
            assert!(a < b);
        }
    }

    #[test]
    fn tower_property_by_enumeration() {
        // composing one-step conditional expectations equals the one-shot
        // path-weighted average, N <= 6
        let grid = TimeGrid::new(1.0, 6, 1.0).unwrap();
        let lat =
            Lattice::build(&StateModel::binomial_arithmetic(vec![0.0], 0.0, 1.0), grid).unwrap();
        let n = lat.grid().steps();
        let terminal: Vec<f64> = (0..lat.node_count(n))
            .map(|j| (j as f64).sin() + j as f64)
            .collect();
        let mut rolled = terminal.clone();
        for k in (0..n).rev() {
            rolled = lat.cond_expect(k, &rolled).unwrap();
        }
        let mut by_paths = 0.0;
        lat.for_each_path(|p, nodes| {
            by_paths += p * terminal[nodes[n]];
        });
        assert_abs_diff_eq!(rolled[0], by_paths, epsilon = 1e-12);
        assert_eq!(lat.path_count(), Some(64));
    }

    #[test]
    fn forward_probabilities_sum_to_one() {
        let grid = TimeGrid::new(1.0, 7, 1.0).unwrap();
        let lat =
            Lattice::build(&StateModel::trinomial_arithmetic(vec![1.0], 0.0, 1.0), grid).unwrap();
        for k in 0..=7 {
            let total: f64 = (0..lat.node_count(k)).map(|j| lat.node_prob(k, j)).sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        }
    }
}
