//! The penalization scheme level by level: watch the constraint
//! violation decay like 1/n, the scaled quadrature n^2 eps stay
//! bounded, and the Skorokhod residual shrink along the schedule.
//!
//! ```bash
//! cargo run --example penalization_trace
//! ```

use rbsde::{
    penalty_decay_check, solve_reflected, AssumptionMode, Backend, DriverSpec, Lattice, ModeSet,
    PenaltySchedule, StateModel, SwitchingCostSpec, SwitchingProblem, TimeGrid,
};

fn main() -> rbsde::Result<()> {
    // two modes, f = (2, 1), g = 0.5, r = 1: reflected values (2.0, 1.5)
    let problem = SwitchingProblem::new(
        ModeSet::new(2)?,
        vec![DriverSpec::constant(2.0), DriverSpec::constant(1.0)],
        SwitchingCostSpec::uniform(0.5),
        1.0,
        StateModel::constant(vec![0.0]),
        AssumptionMode::H2Prime,
    )?;
    let schedule = PenaltySchedule::doubling(64);
    // dt must keep dt * (n m + r) < 1 at the largest level
    let horizon = 10.0;
    let steps = 2600;
    let lattice = Lattice::build(problem.state(), TimeGrid::new(horizon, steps, 1.0)?)?;

    let solution = solve_reflected(&problem, &lattice, Backend::Penalization, Some(&schedule))?;
    println!(
        "   n        Y0[0]      Y0[1]        eps     n^2 eps   sup viol   skorokhod  monotone gap"
    );
    for entry in &solution.penalty_trace {
        let d = &entry.diagnostics;
        let sk = entry.skorokhod.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        println!(
            "{:4}   {:9.6}  {:9.6}  {:9.2e}  {:9.4}  {:9.2e}  {:10.2e}  {:10.1e}",
            d.level,
            entry.y0[0],
            entry.y0[1],
            d.epsilon,
            d.scaled,
            d.sup_violation,
            sk,
            entry.monotone_gap
        );
    }

    let diags: Vec<_> = solution
        .penalty_trace
        .iter()
        .map(|e| e.diagnostics.clone())
        .collect();
    let check = penalty_decay_check(&diags)?;
    println!(
        "\ndecay check: {} (n^2 eps max {:.4}, median {:.4})",
        if check.pass { "PASS" } else { "FAIL" },
        check.scaled_max,
        check.scaled_median
    );
    println!(
        "final level Y0 = {:?} vs reflected values (2.0, 1.5)",
        solution.field.y0()
    );
    Ok(())
}
