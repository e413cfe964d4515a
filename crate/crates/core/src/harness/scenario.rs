//! Declarative scenario definitions: grid, material regions, boundary
//! conditions, lumped branches, solver settings, and probes.
//!
//! Scenarios serialize as TOML. Regions are axis-aligned boxes carrying one
//! property set each; later regions override earlier ones cell by cell, and
//! every cell must be covered by at least one region.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{BoundaryConditions, CouplingMode, LumpedBranch, SolverOptions};
use crate::grid::StaggeredGrid;
use crate::materials::{MaterialMatrices, MaterialModel, VACUUM_PERMITTIVITY};
use crate::mna::Integrator;
use crate::waveform::Waveform;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Node counts per axis (at least 2 each).
    pub nodes: [usize; 3],
    /// Uniform spacing per axis; shorthand for constant spacing lists.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spacing: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spacings_x: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spacings_y: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spacings_z: Option<Vec<f64>>,
}

fn default_eps_r() -> f64 {
    1.0
}

/// Axis-aligned box with one material property set. `extent` is a pair of
/// opposite corners in meters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSpec {
    #[serde(rename = "box")]
    pub extent: [[f64; 3]; 2],
    /// Electrical conductivity in S/m at the reference temperature.
    #[serde(default)]
    pub sigma: f64,
    /// Relative permittivity.
    #[serde(default = "default_eps_r")]
    pub eps_r: f64,
    /// Thermal conductivity in W/(K m).
    #[serde(default)]
    pub lambda: f64,
    /// Volumetric heat capacity in J/(K m^3).
    #[serde(default)]
    pub rho_c: f64,
    /// Linear resistivity temperature coefficient in 1/K.
    #[serde(default)]
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Face {
    XMin,
    XMax,
    YMin,
    YMax,
    ZMin,
    ZMax,
}

/// Dirichlet pin: either a whole boundary face or a node selection box.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PinSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub face: Option<Face>,
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    pub extent: Option<[[f64; 3]; 2]>,
    pub waveform: Waveform,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirichletSpec {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub electric: Vec<PinSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub thermal: Vec<PinSpec>,
}

/// Lumped two-node branch located by node coordinates (snapped to the
/// nearest grid node).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchSpec {
    pub node_a: [f64; 3],
    pub node_b: [f64; 3],
    #[serde(default)]
    pub g_el: f64,
    #[serde(default)]
    pub g_th: f64,
}

fn default_newton_tol() -> f64 {
    1e-10
}

fn default_max_iter() -> usize {
    25
}

fn default_t0() -> f64 {
    293.15
}

fn default_mode() -> CouplingMode {
    CouplingMode::Lagged
}

fn default_integrator() -> Integrator {
    Integrator::Trapezoidal
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    pub dt: f64,
    pub tstop: f64,
    /// Coupling mode of the field solve.
    #[serde(default = "default_mode")]
    pub mode: CouplingMode,
    /// Time integrator of the circuit solve.
    #[serde(default = "default_integrator")]
    pub integrator: Integrator,
    #[serde(default = "default_newton_tol")]
    pub newton_tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Reference temperature in K; temperatures are rises above it.
    #[serde(default = "default_t0")]
    pub t0: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSpec {
    pub name: String,
    pub at: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub title: String,
    pub grid: GridSpec,
    #[serde(rename = "region")]
    pub regions: Vec<RegionSpec>,
    #[serde(default)]
    pub dirichlet: DirichletSpec,
    #[serde(default, rename = "branch", skip_serializing_if = "Vec::is_empty")]
    pub branches: Vec<BranchSpec>,
    pub solver: SolverSpec,
    #[serde(default, rename = "probe", skip_serializing_if = "Vec::is_empty")]
    pub probes: Vec<ProbeSpec>,
}

/// Everything needed to run either solution path.
pub struct BuiltSystem {
    pub grid: StaggeredGrid,
    pub materials: MaterialModel,
    pub matrices: MaterialMatrices,
    pub bcs: BoundaryConditions,
    pub probes: Vec<(String, usize)>,
}

/// Inclusive point-in-box test with a small absolute tolerance so nodes on
/// box faces are selected reliably.
fn in_box(p: [f64; 3], extent: &[[f64; 3]; 2], tol: f64) -> bool {
    (0..3).all(|a| {
        let (lo, hi) = (
            extent[0][a].min(extent[1][a]),
            extent[0][a].max(extent[1][a]),
        );
        p[a] >= lo - tol && p[a] <= hi + tol
    })
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Scenario> {
        let scenario: Scenario =
            toml::from_str(text).map_err(|e| Error::Scenario(format!("TOML: {e}")))?;
        Ok(scenario)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    fn spacings(&self) -> Result<[Vec<f64>; 3]> {
        let explicit = [
            self.grid.spacings_x.clone(),
            self.grid.spacings_y.clone(),
            self.grid.spacings_z.clone(),
        ];
        let mut out: [Vec<f64>; 3] = Default::default();
        for (a, ex) in explicit.into_iter().enumerate() {
            out[a] = match (ex, self.grid.spacing) {
                (Some(list), _) => list,
                (None, Some(uniform)) => {
                    if self.grid.nodes[a] < 2 {
                        return Err(Error::Scenario(format!(
                            "axis {a} needs at least 2 nodes"
                        )));
                    }
                    vec![uniform[a]; self.grid.nodes[a] - 1]
                }
                (None, None) => {
                    return Err(Error::Scenario(format!(
                        "axis {a} has neither a spacing list nor a uniform spacing"
                    )))
                }
            };
        }
        Ok(out)
    }

    /// Characteristic length for the snap/selection tolerance.
    fn geometric_tolerance(grid: &StaggeredGrid) -> f64 {
        let mut smallest = f64::INFINITY;
        for a in [crate::grid::Axis::X, crate::grid::Axis::Y, crate::grid::Axis::Z] {
            for &h in grid.spacings(a) {
                smallest = smallest.min(h);
            }
        }
        smallest * 1e-6
    }

    fn domain_extent(grid: &StaggeredGrid) -> [[f64; 3]; 2] {
        let counts = grid.node_counts();
        let last = grid.node_position(grid.node_index(
            counts[0] - 1,
            counts[1] - 1,
            counts[2] - 1,
        ));
        [[0.0; 3], last]
    }

    pub fn build(&self) -> Result<BuiltSystem> {
        let grid = StaggeredGrid::new(self.grid.nodes, self.spacings()?)?;
        let tol = Self::geometric_tolerance(&grid);
        let domain = Self::domain_extent(&grid);

        if self.regions.is_empty() {
            return Err(Error::Scenario("scenario defines no regions".into()));
        }
        for (k, region) in self.regions.iter().enumerate() {
            for a in 0..3 {
                let lo = region.extent[0][a].min(region.extent[1][a]);
                let hi = region.extent[0][a].max(region.extent[1][a]);
                if lo < domain[0][a] - tol || hi > domain[1][a] + tol {
                    return Err(Error::Scenario(format!(
                        "region {k} exceeds the domain on axis {a}"
                    )));
                }
            }
        }

        let cells = grid.num_cells();
        let mut assigned: Vec<Option<&RegionSpec>> = vec![None; cells];
        for region in &self.regions {
            for c in 0..cells {
                if in_box(grid.cell_center(c), &region.extent, tol) {
                    assigned[c] = Some(region);
                }
            }
        }
        let mut sigma = Vec::with_capacity(cells);
        let mut eps = Vec::with_capacity(cells);
        let mut lambda = Vec::with_capacity(cells);
        let mut rho_c = Vec::with_capacity(cells);
        let mut alpha = Vec::with_capacity(cells);
        for (c, slot) in assigned.iter().enumerate() {
            let region = slot.ok_or_else(|| {
                let center = grid.cell_center(c);
                Error::Scenario(format!(
                    "cell {c} centered at {center:?} is covered by no region"
                ))
            })?;
            sigma.push(region.sigma);
            eps.push(region.eps_r * VACUUM_PERMITTIVITY);
            lambda.push(region.lambda);
            rho_c.push(region.rho_c);
            alpha.push(region.alpha);
        }
        let materials =
            MaterialModel::new(self.solver.t0, sigma, eps, lambda, rho_c, alpha)?;
        let matrices = MaterialMatrices::assemble(&grid, &materials)?;

        let mut bcs = BoundaryConditions::default();
        for (pins, target) in [
            (&self.dirichlet.electric, 0usize),
            (&self.dirichlet.thermal, 1usize),
        ] {
            for (k, pin) in pins.iter().enumerate() {
                let nodes = self.pin_nodes(&grid, pin, tol)?;
                if nodes.is_empty() {
                    return Err(Error::Scenario(format!(
                        "Dirichlet entry {k} selects no node"
                    )));
                }
                for m in nodes {
                    if target == 0 {
                        bcs.electric_dirichlet.insert(m, pin.waveform.clone());
                    } else {
                        bcs.thermal_dirichlet.insert(m, pin.waveform.clone());
                    }
                }
            }
        }

        for spec in &self.branches {
            let node_a = Self::nearest_node(&grid, spec.node_a);
            let node_b = Self::nearest_node(&grid, spec.node_b);
            if node_a == node_b {
                return Err(Error::Scenario(
                    "lumped branch endpoints snap to the same node".into(),
                ));
            }
            bcs.extra_branches.push(LumpedBranch {
                node_a,
                node_b,
                g_el: spec.g_el,
                g_th: spec.g_th,
            });
        }
        bcs.validate(&grid)?;

        let mut probes = Vec::with_capacity(self.probes.len());
        for p in &self.probes {
            probes.push((p.name.clone(), Self::nearest_node(&grid, p.at)));
        }

        Ok(BuiltSystem {
            grid,
            materials,
            matrices,
            bcs,
            probes,
        })
    }

    fn pin_nodes(&self, grid: &StaggeredGrid, pin: &PinSpec, tol: f64) -> Result<Vec<usize>> {
        match (&pin.face, &pin.extent) {
            (Some(face), None) => Ok(Self::face_nodes(grid, *face)),
            (None, Some(extent)) => {
                let mut out = Vec::new();
                for m in 0..grid.num_nodes() {
                    if in_box(grid.node_position(m), extent, tol) {
                        out.push(m);
                    }
                }
                Ok(out)
            }
            _ => Err(Error::Scenario(
                "Dirichlet entry needs exactly one of `face` or `box`".into(),
            )),
        }
    }

    fn face_nodes(grid: &StaggeredGrid, face: Face) -> Vec<usize> {
        let counts = grid.node_counts();
        let (axis, plane) = match face {
            Face::XMin => (0, 0),
            Face::XMax => (0, counts[0] - 1),
            Face::YMin => (1, 0),
            Face::YMax => (1, counts[1] - 1),
            Face::ZMin => (2, 0),
            Face::ZMax => (2, counts[2] - 1),
        };
        (0..grid.num_nodes())
            .filter(|&m| grid.node_coords(m)[axis] == plane)
            .collect()
    }

    fn nearest_node(grid: &StaggeredGrid, p: [f64; 3]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for m in 0..grid.num_nodes() {
            let q = grid.node_position(m);
            let d = (0..3).map(|a| (p[a] - q[a]).powi(2)).sum::<f64>();
            if d < best_d {
                best_d = d;
                best = m;
            }
        }
        best
    }

    /// Field-solver options from the solver section.
    pub fn solver_options(&self) -> SolverOptions {
        let mut opts = SolverOptions::new(self.solver.dt, self.solver.tstop);
        opts.mode = self.solver.mode;
        opts.newton_tol = self.solver.newton_tol;
        opts.max_iter = self.solver.max_iter;
        opts
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BAR: &str = r#"
name = "bar"

[grid]
nodes = [5, 3, 3]
spacing = [1e-3, 5e-4, 5e-4]

[[region]]
box = [[0.0, 0.0, 0.0], [3e-3, 1e-3, 1e-3]]
sigma = 3.0
eps_r = 1.0
lambda = 400.0
rho_c = 8000.0

[[region]]
box = [[3e-3, 0.0, 0.0], [4e-3, 1e-3, 1e-3]]
eps_r = 1.13e5
lambda = 400.0
rho_c = 8000.0

[[dirichlet.electric]]
face = "x_min"
waveform = { type = "sin", offset = 0.0, amplitude = 1e3, freq_hz = 7.69e4 }

[[dirichlet.electric]]
face = "x_max"
waveform = { type = "dc", value = 0.0 }

[solver]
dt = 1e-7
tstop = 1.2e-4

[[probe]]
name = "interface"
at = [3e-3, 5e-4, 5e-4]
"#;

    #[test]
    fn toml_round_trip_builds() {
        let scenario = Scenario::from_toml(BAR).unwrap();
        let text = scenario.to_toml();
        let again = Scenario::from_toml(&text).unwrap();
        assert_eq!(again.name, "bar");
        let built = again.build().unwrap();
        assert_eq!(built.grid.num_nodes(), 45);
        assert_eq!(built.bcs.electric_dirichlet.len(), 18);
        assert_eq!(built.probes.len(), 1);
        // Probe snapped to the interface plane center node.
        let m = built.probes[0].1;
        assert_eq!(built.grid.node_coords(m), [3, 1, 1]);
    }

    #[test]
    fn region_properties_assign_by_cell_center() {
        let scenario = Scenario::from_toml(BAR).unwrap();
        let built = scenario.build().unwrap();
        // Conductor cells are the x-layers 0..3, insulator is layer 3.
        for c in 0..built.grid.num_cells() {
            let [i, _, _] = built.grid.cell_coords(c);
            let sigma = built.materials.sigma_ref()[c];
            if i < 3 {
                assert_eq!(sigma, 3.0);
            } else {
                assert_eq!(sigma, 0.0);
            }
        }
    }

    #[test]
    fn uncovered_cells_are_rejected() {
        let text = BAR.replace("box = [[0.0, 0.0, 0.0], [3e-3, 1e-3, 1e-3]]",
            "box = [[0.0, 0.0, 0.0], [1e-3, 1e-3, 1e-3]]");
        let scenario = Scenario::from_toml(&text).unwrap();
        match scenario.build() {
            Err(Error::Scenario(msg)) => assert!(msg.contains("covered by no region")),
            Err(other) => panic!("expected coverage error, got {other}"),
            Ok(_) => panic!("expected coverage error, build succeeded"),
        }
    }

    #[test]
    fn region_outside_domain_is_rejected() {
        let text = BAR.replace("[3e-3, 1e-3, 1e-3]", "[9e-3, 1e-3, 1e-3]");
        let scenario = Scenario::from_toml(&text).unwrap();
        assert!(matches!(scenario.build(), Err(Error::Scenario(_))));
    }

    #[test]
    fn branch_snaps_to_nodes() {
        let mut scenario = Scenario::from_toml(BAR).unwrap();
        scenario.branches.push(BranchSpec {
            node_a: [0.1e-3, 0.1e-3, 0.1e-3],
            node_b: [3.9e-3, 0.9e-3, 0.9e-3],
            g_el: 1.0,
            g_th: 2.0,
        });
        let built = scenario.build().unwrap();
        assert_eq!(built.bcs.extra_branches.len(), 1);
        let b = built.bcs.extra_branches[0];
        assert_eq!(built.grid.node_coords(b.node_a), [0, 0, 0]);
        assert_eq!(built.grid.node_coords(b.node_b), [4, 2, 2]);
    }

    #[test]
    fn defaults_fill_solver_section() {
        let scenario = Scenario::from_toml(BAR).unwrap();
        assert_eq!(scenario.solver.mode, CouplingMode::Lagged);
        assert_eq!(scenario.solver.integrator, Integrator::Trapezoidal);
        assert_eq!(scenario.solver.newton_tol, 1e-10);
        assert_eq!(scenario.solver.max_iter, 25);
        assert_eq!(scenario.solver.t0, 293.15);
    }
}
