//! Grid-refinement study through the harness: double the step count per
//! level and tabulate values, deltas and the empirical order.
//!
//! ```bash
//! cargo run --example convergence_study
//! ```

use rbsde::harness::{cmd_convergence, preset};

fn main() -> rbsde::Result<()> {
    let config = preset("two-mode-constant").expect("bundled preset");
    let table = cmd_convergence(&config, 4)?;
    print!("{}", table.to_csv());

    // first-order scheme: deltas shrink by about a factor 2 per level
    if let Some(orders) = table.rows.last().and_then(|r| r.order.as_ref()) {
        println!("\nempirical order at the finest level: {orders:?}");
    }
    Ok(())
}
