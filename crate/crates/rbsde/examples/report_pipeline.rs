//! Drive the full file-based pipeline in process: load a preset, run
//! solve and verify, and show the reproducible report.
//!
//! ```bash
//! cargo run --example report_pipeline
//! ```

use rbsde::harness::{cmd_solve, cmd_verify, preset};

fn main() -> rbsde::Result<()> {
    let config = preset("two-mode-constant").expect("bundled preset");
    println!("config:\n{}\n", config.to_json_pretty());

    let solve = cmd_solve(&config)?;
    println!(
        "solve: Y0 = {:?}, status {} ({} steps, dt {:.5})",
        solve.values.y0, solve.status, solve.resolved.steps, solve.resolved.dt
    );

    let verify = cmd_verify(&config)?;
    println!("\nverify battery:");
    println!("{}", verify.check_summary());

    // identical config + seed reproduces the report byte for byte
    let again = cmd_solve(&config)?;
    println!(
        "\nreports byte-identical across runs: {}",
        solve.to_json_pretty() == again.to_json_pretty()
    );
    Ok(())
}
