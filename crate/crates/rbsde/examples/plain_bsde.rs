//! Plain backward solves against closed forms: the constant driver
//! (value c / r) and a stationary affine driver.
//!
//! ```bash
//! cargo run --example plain_bsde
//! ```

use rbsde::{
    solve_bsde, truncate_horizon, AssumptionMode, DriverSpec, Lattice, LipschitzModulus, ModeSet,
    ScalarDriver, StateModel, SwitchingCostSpec, SwitchingProblem, TimeGrid,
};

fn main() -> rbsde::Result<()> {
    // f = 1, r = 0.5: the infinite-horizon value is c / r = 2.
    let r = 0.5;
    let problem = SwitchingProblem::new(
        ModeSet::new(1)?,
        vec![DriverSpec::constant(1.0)],
        SwitchingCostSpec::uniform(1.0),
        r,
        StateModel::constant(vec![0.0]),
        AssumptionMode::H2Prime,
    )?;
    let horizon = truncate_horizon(r, 1.0, 1e-4)?;
    let steps = (horizon / 0.01).ceil() as usize;
    let lattice = Lattice::build(problem.state(), TimeGrid::new(horizon, steps, r)?)?;
    let drivers: Vec<ScalarDriver> = vec![Box::new(|_, _, _, _| 1.0)];
    let field = solve_bsde(&problem, &lattice, &drivers, None)?;
    println!(
        "constant driver: Y0 = {:.6} (closed form 2), T = {horizon:.3}, {steps} steps",
        field.y0()[0]
    );
    println!("max |Z| on the deterministic path: {}", field.z.max_abs());

    // f(y) = 1 - y, r = 1: the bounded stationary solution solves
    // r y = 1 - y, i.e. y = 0.5.
    let r = 1.0;
    let problem = SwitchingProblem::new(
        ModeSet::new(1)?,
        vec![DriverSpec::new(
            |_, _, y: &[f64], _| 1.0 - y[0],
            LipschitzModulus::ConstantOnWindow {
                level: 1.0,
                window_end: 12.0,
            },
            1.0,
        )],
        SwitchingCostSpec::uniform(1.0),
        r,
        StateModel::constant(vec![0.0]),
        AssumptionMode::H2Prime,
    )?;
    let lattice = Lattice::build(problem.state(), TimeGrid::new(10.0, 1000, r)?)?;
    let drivers: Vec<ScalarDriver> = vec![Box::new(|_, _, y, _| 1.0 - y)];
    let field = solve_bsde(&problem, &lattice, &drivers, None)?;
    println!(
        "affine driver f(y) = 1 - y: Y0 = {:.6} (stationary value 0.5)",
        field.y0()[0]
    );

    // The same engine runs on a binomial chain; Z picks up the
    // covariation with the Brownian increments.
    let problem = SwitchingProblem::new(
        ModeSet::new(1)?,
        vec![DriverSpec::constant(0.0)],
        SwitchingCostSpec::uniform(1.0),
        r,
        StateModel::binomial_arithmetic(vec![0.0], 0.0, 1.0),
        AssumptionMode::H2Prime,
    )?;
    let lattice = Lattice::build(problem.state(), TimeGrid::new(1.0, 50, r)?)?;
    // terminal payoff x^2 at the horizon
    let n = lattice.grid().steps();
    let terminal = vec![(0..lattice.node_count(n))
        .map(|j| lattice.state(n, j)[0].powi(2))
        .collect::<Vec<f64>>()];
    let drivers: Vec<ScalarDriver> = vec![Box::new(|_, _, _, _| 0.0)];
    let field = solve_bsde(&problem, &lattice, &drivers, Some(&terminal))?;
    println!(
        "binomial chain, terminal x^2: Y0 = {:.6}, Z0 = {:.6}",
        field.y0()[0],
        field.z0()[0]
    );
    Ok(())
}
