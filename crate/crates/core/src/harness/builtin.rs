//! Built-in scenarios: the conductor-insulator bar benchmark, its
//! temperature-dependent variant, and a chip package surrogate with a lumped
//! bonding wire.

use crate::field::CouplingMode;
use crate::harness::scenario::{
    BranchSpec, DirichletSpec, Face, GridSpec, PinSpec, ProbeSpec, RegionSpec, Scenario,
    SolverSpec,
};
use crate::mna::Integrator;
use crate::waveform::Waveform;

pub const BUILTIN_NAMES: [&str; 3] = ["benchmark", "benchmark_nonlinear", "chip_surrogate"];

/// Look up a built-in scenario by name.
pub fn builtin(name: &str) -> Option<Scenario> {
    match name {
        "benchmark" => Some(benchmark()),
        "benchmark_nonlinear" => Some(benchmark_nonlinear()),
        "chip_surrogate" => Some(chip_surrogate()),
        _ => None,
    }
}

fn bar_solver() -> SolverSpec {
    SolverSpec {
        dt: 1e-7,
        tstop: 1.2e-4,
        mode: CouplingMode::Lagged,
        integrator: Integrator::Trapezoidal,
        newton_tol: 1e-10,
        max_iter: 25,
        t0: 293.15,
    }
}

/// A 4 mm x 1 mm x 1 mm bar: 3 mm of conductor followed by 1 mm of highly
/// permittive insulator, driven by a 1 kV sine at one end face and grounded
/// at the other. Electrically this is a 1 kOhm resistor in series with a
/// 1 nF capacitor; thermally the bar is adiabatic.
pub fn benchmark() -> Scenario {
    Scenario {
        name: "benchmark".into(),
        title: "conductor-insulator bar, sinusoidal 1 kV drive".into(),
        grid: GridSpec {
            nodes: [5, 3, 3],
            spacing: Some([1e-3, 5e-4, 5e-4]),
            spacings_x: None,
            spacings_y: None,
            spacings_z: None,
        },
        regions: vec![
            RegionSpec {
                extent: [[0.0, 0.0, 0.0], [3e-3, 1e-3, 1e-3]],
                sigma: 3.0,
                eps_r: 1.0,
                lambda: 400.0,
                rho_c: 8000.0,
                alpha: 0.0,
            },
            RegionSpec {
                extent: [[3e-3, 0.0, 0.0], [4e-3, 1e-3, 1e-3]],
                sigma: 0.0,
                eps_r: 1.13e5,
                lambda: 400.0,
                rho_c: 8000.0,
                alpha: 0.0,
            },
        ],
        dirichlet: DirichletSpec {
            electric: vec![
                PinSpec {
                    face: Some(Face::XMin),
                    extent: None,
                    waveform: Waveform::sin(0.0, 1e3, 76.9e3),
                },
                PinSpec {
                    face: Some(Face::XMax),
                    extent: None,
                    waveform: Waveform::dc(0.0),
                },
            ],
            thermal: vec![],
        },
        branches: vec![],
        solver: bar_solver(),
        probes: vec![
            ProbeSpec {
                name: "interface".into(),
                at: [3e-3, 5e-4, 5e-4],
            },
            ProbeSpec {
                name: "conductor_mid".into(),
                at: [1.5e-3, 5e-4, 5e-4],
            },
        ],
    }
}

/// The bar benchmark with a copper-like resistivity temperature coefficient
/// on the conductor, which turns every conducting edge into a behavioral
/// resistor and couples the electrical solve back to the temperatures.
pub fn benchmark_nonlinear() -> Scenario {
    let mut scenario = benchmark();
    scenario.name = "benchmark_nonlinear".into();
    scenario.title = "conductor-insulator bar with temperature-dependent conductivity".into();
    scenario.regions[0].alpha = 3.9e-3;
    scenario.solver.mode = CouplingMode::Monolithic;
    scenario
}

/// Chip package surrogate: an insulating substrate slab, a conducting chip
/// block whose bottom plane is grounded through its solder contacts, a metal
/// contact pad, and one lumped bonding wire (1 S electrical, 1 kW/K thermal)
/// from the pad corner to the chip top center. A saturating-exponential
/// 10 V supply at the pad drives a constant asymptotic current, so the
/// adiabatic package heats linearly once the supply settles.
pub fn chip_surrogate() -> Scenario {
    Scenario {
        name: "chip_surrogate".into(),
        title: "chip package surrogate with a lumped bonding wire".into(),
        grid: GridSpec {
            nodes: [5, 5, 4],
            spacing: Some([1e-3, 1e-3, 1e-3]),
            spacings_x: None,
            spacings_y: None,
            spacings_z: None,
        },
        regions: vec![
            // Mold compound everywhere, overridden below.
            RegionSpec {
                extent: [[0.0, 0.0, 0.0], [4e-3, 4e-3, 3e-3]],
                sigma: 0.0,
                eps_r: 1.0,
                lambda: 1.0,
                rho_c: 2.0e6,
                alpha: 0.0,
            },
            // Insulating substrate slab.
            RegionSpec {
                extent: [[0.0, 0.0, 0.0], [4e-3, 4e-3, 1e-3]],
                sigma: 0.0,
                eps_r: 1.0,
                lambda: 120.0,
                rho_c: 1.7e6,
                alpha: 0.0,
            },
            // Chip block on top of the substrate.
            RegionSpec {
                extent: [[1e-3, 1e-3, 1e-3], [3e-3, 3e-3, 2e-3]],
                sigma: 5.0,
                eps_r: 1.0,
                lambda: 150.0,
                rho_c: 1.7e6,
                alpha: 0.0,
            },
            // Metal contact pad in the corner, reachable only via the wire.
            RegionSpec {
                extent: [[3e-3, 3e-3, 1e-3], [4e-3, 4e-3, 2e-3]],
                sigma: 5e3,
                eps_r: 1.0,
                lambda: 300.0,
                rho_c: 2.5e6,
                alpha: 0.0,
            },
        ],
        dirichlet: DirichletSpec {
            electric: vec![
                // Supply at the pad top corner, where the wire starts.
                PinSpec {
                    face: None,
                    extent: Some([[4e-3, 4e-3, 2e-3], [4e-3, 4e-3, 2e-3]]),
                    waveform: Waveform::exp(0.0, 10.0, 1.0),
                },
                // Grounded solder contacts: the chip bottom plane.
                PinSpec {
                    face: None,
                    extent: Some([[1e-3, 1e-3, 1e-3], [3e-3, 3e-3, 1e-3]]),
                    waveform: Waveform::dc(0.0),
                },
            ],
            thermal: vec![],
        },
        branches: vec![BranchSpec {
            node_a: [4e-3, 4e-3, 2e-3],
            node_b: [2e-3, 2e-3, 2e-3],
            g_el: 1.0,
            g_th: 1000.0,
        }],
        solver: SolverSpec {
            dt: 4e-3,
            tstop: 8.0,
            mode: CouplingMode::Lagged,
            integrator: Integrator::Trapezoidal,
            newton_tol: 1e-10,
            max_iter: 25,
            t0: 293.15,
        },
        probes: vec![
            ProbeSpec {
                name: "wire_attach".into(),
                at: [2e-3, 2e-3, 2e-3],
            },
            ProbeSpec {
                name: "substrate_corner".into(),
                at: [0.0, 0.0, 0.0],
            },
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_builtin_builds_and_round_trips() {
        for name in BUILTIN_NAMES {
            let scenario = builtin(name).unwrap();
            assert_eq!(scenario.name, name);
            scenario.build().unwrap_or_else(|e| panic!("{name}: {e}"));
            let again = Scenario::from_toml(&scenario.to_toml())
                .unwrap_or_else(|e| panic!("{name}: {e}"));
            again.build().unwrap();
        }
        assert!(builtin("nope").is_none());
    }

    #[test]
    fn benchmark_matches_bar_geometry() {
        let built = benchmark().build().unwrap();
        assert_eq!(built.grid.num_nodes(), 45);
        assert_eq!(built.grid.num_cells(), 16);
        // 9 driven nodes on each end face.
        assert_eq!(built.bcs.electric_dirichlet.len(), 18);
        assert!(built.bcs.thermal_dirichlet.is_empty());
        // Conductor resistance 1 kOhm, insulator capacitance about 1 nF.
        let r = 3e-3 / (3.0 * 1e-6);
        assert_eq!(r, 1000.0);
    }

    #[test]
    fn chip_surrogate_wires_pad_to_chip() {
        let built = chip_surrogate().build().unwrap();
        assert_eq!(built.bcs.extra_branches.len(), 1);
        let wire = built.bcs.extra_branches[0];
        assert_eq!(built.grid.node_coords(wire.node_a), [4, 4, 2]);
        assert_eq!(built.grid.node_coords(wire.node_b), [2, 2, 2]);
        assert_eq!(wire.g_el, 1.0);
        assert_eq!(wire.g_th, 1000.0);
        // Supply pin is a single node; ground covers the 3x3 solder plane.
        assert_eq!(built.bcs.electric_dirichlet.len(), 1 + 9);
        // The pad is electrically isolated except for the wire: no
        // conducting cell touches both pad and chip or substrate.
        let sigma = built.materials.sigma_ref();
        for c in 0..built.grid.num_cells() {
            let [i, j, k] = built.grid.cell_coords(c);
            let in_pad = i == 3 && j == 3 && k == 1;
            if in_pad {
                assert_eq!(sigma[c], 5e3);
            } else {
                assert!(sigma[c] == 0.0 || (i >= 1 && i < 3 && j >= 1 && j < 3 && k == 1));
            }
        }
    }
}
