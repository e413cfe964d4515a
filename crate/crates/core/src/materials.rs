//! Per-cell material data, edge-wise averaging, the diagonal material
//! matrices, and the temperature-dependent conductivity law.
//!
//! Temperatures are handled as rises `dT = T - T0` throughout; the
//! conductivity law is applied to the resistivity,
//! `rho(T) = rho_ref (1 + alpha dT)`, so `sigma(T) = sigma_ref / (1 + alpha dT)`.
//! Perfect insulator cells (`sigma_ref = 0`) stay insulating at every
//! temperature and never produce a branch resistor.

use crate::error::{Error, Result};
use crate::grid::StaggeredGrid;

/// Vacuum permittivity in F/m.
pub const VACUUM_PERMITTIVITY: f64 = 8.8541878128e-12;

/// Per-primary-cell material properties.
#[derive(Debug, Clone)]
pub struct MaterialModel {
    sigma_ref: Vec<f64>,
    eps: Vec<f64>,
    lambda_th: Vec<f64>,
    rho_c: Vec<f64>,
    alpha: Vec<f64>,
    t0: f64,
}

impl MaterialModel {
    /// `eps` is the absolute permittivity (vacuum value times relative
    /// permittivity); all arrays are indexed by primary cell.
    pub fn new(
        t0: f64,
        sigma_ref: Vec<f64>,
        eps: Vec<f64>,
        lambda_th: Vec<f64>,
        rho_c: Vec<f64>,
        alpha: Vec<f64>,
    ) -> Result<Self> {
        let len = sigma_ref.len();
        for (name, arr) in [
            ("eps", &eps),
            ("lambda_th", &lambda_th),
            ("rho_c", &rho_c),
            ("alpha", &alpha),
        ] {
            if arr.len() != len {
                return Err(Error::InvalidMaterial(format!(
                    "{name} has length {}, expected {len}",
                    arr.len()
                )));
            }
        }
        for (name, arr) in [
            ("sigma_ref", &sigma_ref),
            ("eps", &eps),
            ("lambda_th", &lambda_th),
            ("rho_c", &rho_c),
        ] {
            if arr.iter().any(|&v| v < 0.0 || !v.is_finite()) {
                return Err(Error::InvalidMaterial(format!(
                    "{name} contains a negative or non-finite value"
                )));
            }
        }
        if eps.iter().any(|&v| v == 0.0) {
            return Err(Error::InvalidMaterial(
                "eps must be strictly positive everywhere".into(),
            ));
        }
        if alpha.iter().any(|&v| !v.is_finite()) || !t0.is_finite() {
            return Err(Error::InvalidMaterial(
                "alpha and T0 must be finite".into(),
            ));
        }
        Ok(MaterialModel {
            sigma_ref,
            eps,
            lambda_th,
            rho_c,
            alpha,
            t0,
        })
    }

    pub fn num_cells(&self) -> usize {
        self.sigma_ref.len()
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn sigma_ref(&self) -> &[f64] {
        &self.sigma_ref
    }

    pub fn eps(&self) -> &[f64] {
        &self.eps
    }

    pub fn lambda_th(&self) -> &[f64] {
        &self.lambda_th
    }

    pub fn rho_c(&self) -> &[f64] {
        &self.rho_c
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// Conductivity of cell `p` at temperature rise `dT = T_bar - T0`.
    /// Insulator cells return 0 at any temperature.
    pub fn sigma_at(&self, cell: usize, delta_t: f64) -> Result<f64> {
        if self.sigma_ref[cell] == 0.0 {
            return Ok(0.0);
        }
        let factor = 1.0 + self.alpha[cell] * delta_t;
        if factor <= 0.0 {
            return Err(Error::NonphysicalResistivity {
                cell,
                factor,
                delta_t,
            });
        }
        Ok(self.sigma_ref[cell] / factor)
    }

    /// Derivative of `sigma_at` with respect to the edge mean temperature.
    pub fn d_sigma_d_t(&self, cell: usize, delta_t: f64) -> Result<f64> {
        if self.sigma_ref[cell] == 0.0 {
            return Ok(0.0);
        }
        let factor = 1.0 + self.alpha[cell] * delta_t;
        if factor <= 0.0 {
            return Err(Error::NonphysicalResistivity {
                cell,
                factor,
                delta_t,
            });
        }
        Ok(-self.sigma_ref[cell] * self.alpha[cell] / (factor * factor))
    }
}

/// Weighted average of a per-cell property over the cells touching a real
/// edge. Returns the average and the (cell, weight) pairs; the weights are
/// the cross-sectional contributions of each cell to the edge's dual facet
/// and sum to 1.
pub fn average_edge_property(
    grid: &StaggeredGrid,
    per_cell_values: &[f64],
    edge: usize,
) -> Result<(f64, Vec<(usize, f64)>)> {
    if per_cell_values.len() != grid.num_cells() {
        return Err(Error::Shape {
            expected: grid.num_cells(),
            got: per_cell_values.len(),
        });
    }
    let weights = grid.edge_cell_weights(edge)?;
    let avg = weights
        .iter()
        .map(|&(c, w)| w * per_cell_values[c])
        .sum();
    Ok((avg, weights))
}

/// Diagonal material matrices plus the cached per-edge averaging data
/// needed to re-evaluate the conductivity matrix at runtime temperatures.
#[derive(Debug, Clone)]
pub struct MaterialMatrices {
    m_sigma: Vec<f64>,
    m_eps: Vec<f64>,
    m_lambda: Vec<f64>,
    m_rhoc: Vec<f64>,
    /// |A_j| / |L_j| per edge; 0 for phantom edges.
    geom_factor: Vec<f64>,
    sigma_weights: Vec<Vec<(usize, f64)>>,
}

impl MaterialMatrices {
    pub fn assemble(grid: &StaggeredGrid, materials: &MaterialModel) -> Result<Self> {
        if materials.num_cells() != grid.num_cells() {
            return Err(Error::InvalidMaterial(format!(
                "material arrays have {} cells, grid has {}",
                materials.num_cells(),
                grid.num_cells()
            )));
        }
        let ne = grid.num_edges();
        let n = grid.num_nodes();
        let mut mm = MaterialMatrices {
            m_sigma: vec![0.0; ne],
            m_eps: vec![0.0; ne],
            m_lambda: vec![0.0; ne],
            m_rhoc: vec![0.0; n],
            geom_factor: vec![0.0; ne],
            sigma_weights: vec![Vec::new(); ne],
        };
        for e in grid.real_edges() {
            let weights = grid.edge_cell_weights(e)?;
            mm.geom_factor[e] = grid.dual_facet_area(e) / grid.edge_length(e);
            mm.sigma_weights[e] = weights;
            mm.m_sigma[e] = mm.m_sigma_at(materials, e, 0.0)?;
            let (eps_bar, _) = average_edge_property(grid, materials.eps(), e)?;
            mm.m_eps[e] = eps_bar * mm.geom_factor[e];
            let (lambda_bar, _) = average_edge_property(grid, materials.lambda_th(), e)?;
            mm.m_lambda[e] = lambda_bar * mm.geom_factor[e];
        }
        for m in 0..n {
            mm.m_rhoc[m] = grid
                .node_cell_overlaps(m)
                .iter()
                .map(|&(c, vol)| materials.rho_c()[c] * vol)
                .sum();
        }
        Ok(mm)
    }

    /// Conductance diagonal at the reference temperature.
    pub fn m_sigma(&self) -> &[f64] {
        &self.m_sigma
    }

    pub fn m_eps(&self) -> &[f64] {
        &self.m_eps
    }

    pub fn m_lambda(&self) -> &[f64] {
        &self.m_lambda
    }

    pub fn m_rhoc(&self) -> &[f64] {
        &self.m_rhoc
    }

    pub fn sigma_weights(&self, edge: usize) -> &[(usize, f64)] {
        &self.sigma_weights[edge]
    }

    pub fn geom_factor(&self, edge: usize) -> f64 {
        self.geom_factor[edge]
    }

    /// True when the edge carries any conductive material at T0 (and hence
    /// at every physical temperature).
    pub fn edge_conducts(&self, edge: usize) -> bool {
        self.m_sigma[edge] > 0.0
    }

    /// Conductance matrix entry of `edge` at edge mean temperature rise
    /// `dT`. At `dT = 0` this reproduces the assembled diagonal exactly.
    pub fn m_sigma_at(
        &self,
        materials: &MaterialModel,
        edge: usize,
        delta_t: f64,
    ) -> Result<f64> {
        let mut sigma_bar = 0.0;
        for &(c, w) in &self.sigma_weights[edge] {
            sigma_bar += w * materials.sigma_at(c, delta_t)?;
        }
        Ok(sigma_bar * self.geom_factor[edge])
    }

    /// Derivative of the conductance entry with respect to the edge mean
    /// temperature, used by the monolithic Jacobian.
    pub fn d_m_sigma_d_t(
        &self,
        materials: &MaterialModel,
        edge: usize,
        delta_t: f64,
    ) -> Result<f64> {
        let mut d = 0.0;
        for &(c, w) in &self.sigma_weights[edge] {
            d += w * materials.d_sigma_d_t(c, delta_t)?;
        }
        Ok(d * self.geom_factor[edge])
    }

    /// Branch resistance of a real edge at edge mean temperature rise `dT`,
    /// the reciprocal of the conductance entry.
    pub fn edge_resistance(
        &self,
        materials: &MaterialModel,
        edge: usize,
        delta_t: f64,
    ) -> Result<f64> {
        let g = self.m_sigma_at(materials, edge, delta_t)?;
        if g <= 0.0 {
            return Err(Error::OpenBranch(edge));
        }
        Ok(1.0 / g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Axis;

    fn uniform_grid(counts: [usize; 3], h: f64) -> StaggeredGrid {
        let spacings = std::array::from_fn(|a| vec![h; counts[a] - 1]);
        StaggeredGrid::new(counts, spacings).unwrap()
    }

    fn uniform_material(cells: usize, sigma: f64, eps_r: f64, alpha: f64) -> MaterialModel {
        MaterialModel::new(
            293.15,
            vec![sigma; cells],
            vec![VACUUM_PERMITTIVITY * eps_r; cells],
            vec![400.0; cells],
            vec![8000.0; cells],
            vec![alpha; cells],
        )
        .unwrap()
    }

    #[test]
    fn rejects_inconsistent_data() {
        assert!(MaterialModel::new(
            293.15,
            vec![1.0, 1.0],
            vec![1.0],
            vec![1.0, 1.0],
            vec![1.0, 1.0],
            vec![0.0, 0.0],
        )
        .is_err());
        assert!(MaterialModel::new(
            293.15,
            vec![-1.0],
            vec![1.0],
            vec![1.0],
            vec![1.0],
            vec![0.0],
        )
        .is_err());
        assert!(MaterialModel::new(
            293.15,
            vec![1.0],
            vec![0.0],
            vec![1.0],
            vec![1.0],
            vec![0.0],
        )
        .is_err());
    }

    #[test]
    fn interior_average_is_quarter_weighted() {
        let grid = uniform_grid([3, 3, 3], 1e-3);
        let mut sigma = vec![0.0; grid.num_cells()];
        // x-edge from (0,1,1): touches cells (0, jy, jz) for jy, jz in {0,1}.
        let e = grid.edge_index(Axis::X, grid.node_index(0, 1, 1));
        let cells = grid.edge_cell_weights(e).unwrap();
        assert_eq!(cells.len(), 4);
        sigma[cells[0].0] = 3.0;
        sigma[cells[1].0] = 3.0;
        let (avg, w) = average_edge_property(&grid, &sigma, e).unwrap();
        assert!((avg - 1.5).abs() < 1e-15);
        let wsum: f64 = w.iter().map(|&(_, wi)| wi).sum();
        assert!((wsum - 1.0).abs() < 1e-15);
    }

    #[test]
    fn homogeneous_average_is_identity() {
        let grid = uniform_grid([3, 3, 3], 1e-3);
        let sigma = vec![3.0; grid.num_cells()];
        let e = grid.edge_index(Axis::X, grid.node_index(1, 1, 1));
        let (avg, _) = average_edge_property(&grid, &sigma, e).unwrap();
        assert!((avg - 3.0).abs() < 1e-15);
    }

    #[test]
    fn boundary_edge_averages_over_single_cell() {
        // Coarse bar grid: each x-edge touches exactly one cell, so the
        // averaged value is the cell value itself.
        let grid = uniform_grid([5, 2, 2], 1e-3);
        let mut sigma = vec![0.0; grid.num_cells()];
        sigma[grid.cell_index(1, 0, 0)] = 3.0;
        let e = grid.edge_index(Axis::X, grid.node_index(1, 0, 0));
        let (avg, w) = average_edge_property(&grid, &sigma, e).unwrap();
        assert!((avg - 3.0).abs() < 1e-15);
        assert_eq!(w.len(), 1);
    }

    #[test]
    fn conductance_entry_matches_formula() {
        let grid = uniform_grid([3, 3, 3], 1e-3);
        let mats = uniform_material(grid.num_cells(), 3.0, 1.0, 0.0);
        let mm = MaterialMatrices::assemble(&grid, &mats).unwrap();
        // Interior x-edge: |A| = 1e-6, |L| = 1e-3, sigma_bar = 3.
        let e = grid.edge_index(Axis::X, grid.node_index(0, 1, 1));
        assert!((mm.m_sigma()[e] - 3e-3).abs() < 1e-18);
    }

    #[test]
    fn phantom_entries_are_zero() {
        let grid = uniform_grid([3, 3, 3], 1e-3);
        let mats = uniform_material(grid.num_cells(), 3.0, 1.0, 0.0);
        let mm = MaterialMatrices::assemble(&grid, &mats).unwrap();
        for e in 0..grid.num_edges() {
            if grid.is_phantom_edge(e) {
                assert_eq!(mm.m_sigma()[e], 0.0);
                assert_eq!(mm.m_eps()[e], 0.0);
                assert_eq!(mm.m_lambda()[e], 0.0);
            }
        }
    }

    #[test]
    fn parallel_plate_capacitance_oracle() {
        // One 1 mm layer of 1 mm^2 cross-section with eps_r = 1.13e5: the
        // x-edge capacitances across the layer sum to the plate formula
        // C = eps * A / d.
        let grid = StaggeredGrid::new(
            [2, 3, 3],
            [vec![1e-3], vec![0.5e-3, 0.5e-3], vec![0.5e-3, 0.5e-3]],
        )
        .unwrap();
        let mats = uniform_material(grid.num_cells(), 0.0, 1.13e5, 0.0);
        let mm = MaterialMatrices::assemble(&grid, &mats).unwrap();
        let total: f64 = (0..grid.num_nodes())
            .map(|m| mm.m_eps()[grid.edge_index(Axis::X, m)])
            .sum();
        let expected = VACUUM_PERMITTIVITY * 1.13e5 * 1e-6 / 1e-3;
        assert!((total - expected).abs() < 1e-12 * expected);
        assert!((expected - 1.000e-9).abs() < 1e-12); // close to 1 nF
    }

    #[test]
    fn heat_capacity_entry_matches_formula() {
        let grid = uniform_grid([3, 3, 3], 1e-3);
        let mats = uniform_material(grid.num_cells(), 3.0, 1.0, 0.0);
        let mm = MaterialMatrices::assemble(&grid, &mats).unwrap();
        // Interior node: dual volume 1e-9 m^3, rho_c = 8000.
        let m = grid.node_index(1, 1, 1);
        assert!((mm.m_rhoc()[m] - 8e-6).abs() < 1e-18);
    }

    #[test]
    fn sigma_law_examples() {
        let mats = MaterialModel::new(
            293.15,
            vec![3.0, 1.0, 0.0],
            vec![1.0; 3],
            vec![1.0; 3],
            vec![1.0; 3],
            vec![0.0, 4e-3, 4e-3],
        )
        .unwrap();
        // alpha = 0: temperature-independent.
        assert_eq!(mats.sigma_at(0, 500.0).unwrap(), 3.0);
        // rho0 = 1, alpha = 4e-3, dT = 100 K: rho = 1.4, sigma = 1/1.4.
        let s = mats.sigma_at(1, 100.0).unwrap();
        assert!((s - 1.0 / 1.4).abs() < 1e-12);
        assert!((s - 0.7143).abs() < 1e-4);
        // Insulator stays insulating.
        assert_eq!(mats.sigma_at(2, 1e4).unwrap(), 0.0);
        // Resistivity crossing zero is rejected.
        assert!(matches!(
            mats.sigma_at(1, -300.0),
            Err(Error::NonphysicalResistivity { .. })
        ));
    }

    #[test]
    fn resistance_is_reciprocal_conductance() {
        let grid = uniform_grid([3, 3, 3], 1e-3);
        let mats = uniform_material(grid.num_cells(), 3.0, 1.0, 0.0);
        let mm = MaterialMatrices::assemble(&grid, &mats).unwrap();
        let e = grid.edge_index(Axis::X, grid.node_index(0, 1, 1));
        let r = mm.edge_resistance(&mats, e, 0.0).unwrap();
        assert!((r - 1000.0 / 3.0).abs() < 1e-9);
        for edge in grid.real_edges() {
            let r = mm.edge_resistance(&mats, edge, 0.0).unwrap();
            assert!((r * mm.m_sigma()[edge] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn resistance_scales_with_temperature_factor() {
        // Base resistance 1000 ohm (sigma = 1, interior edge), alpha = 4e-3,
        // dT = 250 K: factor 2.
        let grid = uniform_grid([3, 3, 3], 1e-3);
        let mats = uniform_material(grid.num_cells(), 1.0, 1.0, 4e-3);
        let mm = MaterialMatrices::assemble(&grid, &mats).unwrap();
        let e = grid.edge_index(Axis::X, grid.node_index(0, 1, 1));
        let r0 = mm.edge_resistance(&mats, e, 0.0).unwrap();
        assert!((r0 - 1000.0).abs() < 1e-9);
        let r = mm.edge_resistance(&mats, e, 250.0).unwrap();
        assert!((r - 2000.0).abs() < 1e-9);
    }

    #[test]
    fn resistance_of_insulating_edge_is_open() {
        let grid = uniform_grid([3, 3, 3], 1e-3);
        let mats = uniform_material(grid.num_cells(), 0.0, 1.0, 0.0);
        let mm = MaterialMatrices::assemble(&grid, &mats).unwrap();
        let e = grid.edge_index(Axis::X, grid.node_index(0, 1, 1));
        assert!(matches!(
            mm.edge_resistance(&mats, e, 0.0),
            Err(Error::OpenBranch(_))
        ));
    }

    #[test]
    fn resistance_increases_monotonically_for_positive_alpha() {
        let grid = uniform_grid([3, 3, 3], 1e-3);
        let mats = uniform_material(grid.num_cells(), 2.0, 1.0, 3e-3);
        let mm = MaterialMatrices::assemble(&grid, &mats).unwrap();
        let e = grid.edge_index(Axis::X, grid.node_index(0, 1, 1));
        let mut prev = 0.0;
        for step in 0..20 {
            let dt = step as f64 * 25.0;
            let r = mm.edge_resistance(&mats, e, dt).unwrap();
            assert!(r > prev);
            prev = r;
        }
    }

    #[test]
    fn conductance_derivative_matches_finite_difference() {
        let grid = uniform_grid([3, 3, 3], 1e-3);
        let mats = uniform_material(grid.num_cells(), 2.0, 1.0, 3e-3);
        let mm = MaterialMatrices::assemble(&grid, &mats).unwrap();
        let e = grid.edge_index(Axis::X, grid.node_index(0, 1, 1));
        let dt = 40.0;
        let h = 1e-4;
        let fd = (mm.m_sigma_at(&mats, e, dt + h).unwrap()
            - mm.m_sigma_at(&mats, e, dt - h).unwrap())
            / (2.0 * h);
        let an = mm.d_m_sigma_d_t(&mats, e, dt).unwrap();
        assert!((fd - an).abs() < 1e-8 * an.abs().max(1e-12));
    }
}
