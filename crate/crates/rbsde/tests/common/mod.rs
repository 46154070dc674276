//! Shared helpers for the integration suites, including the independent
//! ODE oracle for penalized systems on deterministic paths.
//!
//! The oracle integrates the backward system with a classical
//! fourth-order Runge-Kutta scheme and shares no code with the lattice
//! solvers it checks.

/// Negative part, written out locally so the oracle stays independent.
fn neg(a: f64) -> f64 {
    if a < 0.0 {
        -a
    } else {
        0.0
    }
}

/// Integrates `y'(t) = r y - f(t) - n * penalty(y)` backward from
/// `y(horizon) = 0` and returns `y(0)`.
///
/// `f(t, i)` is the plain driver of mode `i` (value-independent regime),
/// `costs[i][j]` the constant switching costs. The backward equation is
/// the differential form of the penalized system on a deterministic
/// path, so the lattice solver must reproduce `y(0)` up to its own
/// discretization error.
pub fn penalized_ode_oracle(
    modes: usize,
    f: impl Fn(f64, usize) -> f64,
    costs: &[Vec<f64>],
    r: f64,
    level: u32,
    horizon: f64,
    steps: usize,
) -> Vec<f64> {
    let h = horizon / steps as f64;
    let deriv = |t: f64, y: &[f64]| -> Vec<f64> {
        (0..modes)
            .map(|i| {
                let mut penalty = 0.0;
                for j in 0..modes {
                    penalty += neg(y[i] - y[j] + costs[i][j]);
                }
                r * y[i] - f(t, i) - level as f64 * penalty
            })
            .collect()
    };
    let mut y = vec![0.0; modes];
    // march backward: tau = horizon - s, dy/ds = -y'(horizon - s)
    for k in 0..steps {
        let t = horizon - k as f64 * h;
        let k1 = deriv(t, &y);
        let y2: Vec<f64> = y.iter().zip(&k1).map(|(v, d)| v - 0.5 * h * d).collect();
        let k2 = deriv(t - 0.5 * h, &y2);
        let y3: Vec<f64> = y.iter().zip(&k2).map(|(v, d)| v - 0.5 * h * d).collect();
        let k3 = deriv(t - 0.5 * h, &y3);
        let y4: Vec<f64> = y.iter().zip(&k3).map(|(v, d)| v - h * d).collect();
        let k4 = deriv(t - h, &y4);
        for i in 0..modes {
            y[i] -= h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_reproduces_c_over_r_without_penalty() {
        // single mode, f = 1, r = 0.5: y(0) = 2 (1 - e^{-r T})
        let y = penalized_ode_oracle(1, |_, _| 1.0, &[vec![0.0]], 0.5, 0, 20.0, 4000);
        let expected = 2.0 * (1.0 - (-0.5_f64 * 20.0).exp());
        assert!(
            (y[0] - expected).abs() < 1e-9,
            "got {}, want {expected}",
            y[0]
        );
    }
}
