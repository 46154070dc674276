//! Horizon truncation and the Brownian chain: build a trinomial
//! lattice, inspect its moments, and watch the tower property hold by
//! path enumeration.
//!
//! ```bash
//! cargo run --example horizon_and_lattice
//! ```

use rbsde::{truncate_horizon, Lattice, StateModel, TimeGrid};

fn main() -> rbsde::Result<()> {
    // How far out must the grid reach before a zero terminal value is
    // harmless? exp(-rT) * B_f / r <= tol.
    for (r, bound, tol) in [(1.0, 2.0, 1e-3), (0.5, 1.0, 1e-4)] {
        let horizon = truncate_horizon(r, bound, tol)?;
        println!("r = {r}, |f| <= {bound}, tail tol {tol:e}  ->  T = {horizon:.4}");
    }

    let horizon = 1.0;
    let grid = TimeGrid::new(horizon, 6, 1.0)?;
    let lattice = Lattice::build(&StateModel::trinomial_arithmetic(vec![0.0], 0.1, 0.8), grid)?;
    println!("\ntrinomial chain, 6 steps:");
    for k in 0..=6 {
        println!("  step {k}: {} nodes", lattice.node_count(k));
    }

    // branch moments at the root
    let dt = lattice.grid().dt();
    let (mut mean, mut var) = (0.0, 0.0);
    for b in lattice.branches(0, 0) {
        mean += b.prob * b.db;
        var += b.prob * b.db * b.db;
    }
    println!(
        "root branch moments: E[dB] = {mean:e}, E[dB^2] - dt = {:e}",
        var - dt
    );

    // tower property: rolling one-step conditional expectations backward
    // equals the one-shot path-weighted average
    let n = lattice.grid().steps();
    let terminal: Vec<f64> = (0..lattice.node_count(n))
        .map(|j| (j as f64 * 0.37).sin())
        .collect();
    let mut rolled = terminal.clone();
    for k in (0..n).rev() {
        rolled = lattice.cond_expect(k, &rolled)?;
    }
    let mut by_paths = 0.0;
    lattice.for_each_path(|prob, nodes| {
        by_paths += prob * terminal[nodes[n]];
    });
    println!(
        "tower property: rolled {:+.12}, path-enumerated {:+.12}, gap {:e} over {} paths",
        rolled[0],
        by_paths,
        (rolled[0] - by_paths).abs(),
        lattice.path_count().unwrap()
    );
    Ok(())
}
