//! Bundled problem presets, addressable from the CLI as `preset:<name>`.

use super::config::{
    CostConfig, DriverConfig, LatticeConfig, OracleConfig, ProblemConfig, RunConfig, SolverConfig,
    StateKind, SCHEMA_VERSION,
};
use crate::problem::AssumptionMode;
use crate::reflect::Backend;

pub const PRESET_NAMES: &[&str] = &[
    "one-mode-constant",
    "two-mode-constant",
    "three-mode-relay",
    "decoupled",
    "coupled-exp",
    "binomial-two-mode",
];

/// Returns the named preset, if it exists.
pub fn preset(name: &str) -> Option<RunConfig> {
    let base =
        |modes: usize, discount: f64, drivers: Vec<DriverConfig>, costs: CostConfig| RunConfig {
            schema_version: SCHEMA_VERSION,
            seed: 42,
            problem: ProblemConfig {
                modes,
                discount,
                assumption_mode: AssumptionMode::H2Prime,
                drivers,
                costs,
            },
            lattice: LatticeConfig::default(),
            solver: SolverConfig::default(),
            oracle: OracleConfig::default(),
        };

    Some(match name {
        // closed form c/r = 2: the one-mode sanity anchor
        "one-mode-constant" => base(
            1,
            0.5,
            vec![DriverConfig::Constant { c: 1.0 }],
            CostConfig::Uniform { value: 1.0 },
        ),
        // reflected values (2.0, 1.5); the low mode switches immediately
        "two-mode-constant" => base(
            2,
            1.0,
            vec![
                DriverConfig::Constant { c: 2.0 },
                DriverConfig::Constant { c: 1.0 },
            ],
            CostConfig::Uniform { value: 0.5 },
        ),
        // uniform costs make relays strictly suboptimal; one switch each
        "three-mode-relay" => {
            let mut config = base(
                3,
                1.0,
                vec![
                    DriverConfig::Constant { c: 3.0 },
                    DriverConfig::Constant { c: 2.0 },
                    DriverConfig::Constant { c: 1.0 },
                ],
                CostConfig::Uniform { value: 0.8 },
            );
            // the 1.2-wide lift of the lowest mode needs one more level
            // before its penalization residual drops under the gate
            config.solver.penalty_levels = vec![1, 2, 4, 8, 16, 32, 64, 128];
            config
        }
        // costs far above any attainable gain: the constraint never binds
        "decoupled" => base(
            2,
            1.0,
            vec![
                DriverConfig::Constant { c: 2.0 },
                DriverConfig::Constant { c: 1.0 },
            ],
            CostConfig::Uniform { value: 100.0 },
        ),
        // fully coupled drivers in the contraction regime (r = 2)
        "coupled-exp" => base(
            2,
            2.0,
            vec![
                DriverConfig::DecayCoupling {
                    c: 2.0,
                    weight: 0.1,
                    decay: 1.0,
                },
                DriverConfig::DecayCoupling {
                    c: 1.0,
                    weight: 0.1,
                    decay: 1.0,
                },
            ],
            CostConfig::Uniform { value: 0.5 },
        ),
        // state-dependent (bounded) drivers on a binomial chain
        "binomial-two-mode" => {
            let mut config = base(
                2,
                1.0,
                vec![
                    DriverConfig::BoundedState { c: 2.0, slope: 0.2 },
                    DriverConfig::BoundedState {
                        c: 1.0,
                        slope: -0.1,
                    },
                ],
                CostConfig::Uniform { value: 0.3 },
            );
            config.lattice = LatticeConfig {
                kind: StateKind::RecombiningBinomial,
                x0: vec![0.0],
                drift: 0.0,
                vol: 1.0,
                geometric: false,
                steps: None,
                horizon: Some(2.0),
                tail_tolerance: 1e-4,
                dt: None,
            };
            config.solver.backend = Backend::Projection;
            // the n = 1 level still sits in the pre-asymptotic transient
            // on this chain; start the schedule where the decay is clean
            config.solver.penalty_levels = vec![2, 4, 8, 16, 32, 64];
            config
        }
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_presets_resolve() {
        for name in PRESET_NAMES {
            let config = preset(name).unwrap_or_else(|| panic!("missing preset {name}"));
            let setup = config
                .resolve(true)
                .unwrap_or_else(|e| panic!("preset {name} fails to resolve: {e}"));
            assert!(setup.steps >= 1);
            // every preset must stay solvable at its largest penalty level
            let n_max = config
                .solver
                .penalty_levels
                .iter()
                .max()
                .copied()
                .unwrap_or(0);
            let rate = setup.problem.lipschitz_sup()
                + n_max as f64 * setup.problem.mode_count() as f64
                + setup.problem.discount();
            assert!(
                setup.dt * rate < 1.0,
                "preset {name}: dt {} too large for level {n_max}",
                setup.dt
            );
        }
        assert!(preset("nonexistent").is_none());
    }
}
