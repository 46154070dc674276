//! Build a switching problem by hand and run the assumption gate.
//!
//! ```bash
//! cargo run --example validate_problem
//! ```

use rbsde::{
    required_discount, validate_assumptions, AssumptionMode, DriverSpec, LipschitzModulus, ModeSet,
    StateModel, SwitchingCostSpec, SwitchingProblem,
};

fn main() -> rbsde::Result<()> {
    // Two modes, drivers with an exponentially decaying y-sensitivity.
    let modulus = LipschitzModulus::ExponentialDecay {
        level: 0.1,
        decay: 1.0,
    };
    let drivers = vec![
        DriverSpec::new(
            |t: f64, _x: &[f64], y: &[f64], _z| 2.0 + 0.1 * (-t).exp() * y[0],
            modulus,
            2.0,
        ),
        DriverSpec::new(
            |t: f64, _x: &[f64], y: &[f64], _z| 1.0 + 0.1 * (-t).exp() * y[1],
            modulus,
            1.0,
        ),
    ];
    let problem = SwitchingProblem::new(
        ModeSet::new(2)?,
        drivers,
        SwitchingCostSpec::uniform(0.5),
        1.5,
        StateModel::constant(vec![0.0]),
        AssumptionMode::H2Prime,
    )?;

    let report = validate_assumptions(&problem, 256, 42)?;
    println!("assumption checks (seed 42, 256 samples):");
    for check in &report.checks {
        println!("  {:?}  {}", check.status, check.name);
    }
    println!("overall: {}", if report.passed() { "PASS" } else { "FAIL" });

    let bounds = required_discount(&problem);
    println!(
        "\ndiscount advisory: r = {} vs penalization threshold {:.4}, contraction threshold {:.4}",
        problem.discount(),
        bounds.r_penalization,
        bounds.r_contraction
    );
    println!(
        "meets both: {}",
        bounds.meets_penalization && bounds.meets_contraction
    );

    // A cost matrix that violates the triangle inequality is caught with
    // a witness naming the offending mode triple.
    let bad = SwitchingProblem::new(
        ModeSet::new(3)?,
        (0..3).map(|_| DriverSpec::constant(1.0)).collect(),
        SwitchingCostSpec::from_matrix(vec![
            vec![0.0, 0.5, 2.0],
            vec![0.5, 0.0, 0.5],
            vec![2.0, 0.5, 0.0],
        ])?,
        1.0,
        StateModel::constant(vec![0.0]),
        AssumptionMode::H2Prime,
    )?;
    let bad_report = validate_assumptions(&bad, 64, 42)?;
    println!(
        "\ntriangle-violating matrix rejected: {}",
        !bad_report.passed()
    );
    for issue in bad_report.issues.iter().take(1) {
        println!("  witness: {issue:?}");
    }
    Ok(())
}
