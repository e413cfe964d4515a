//! Staggered hexahedral grid pair: canonical node/edge indexing, boundary-
//! clipped dual measures, and the discrete topological operators.
//!
//! Nodes are indexed `m = i + nx*j + nx*ny*k` (zero-based). Edges point in
//! the positive coordinate direction and are indexed `m + n*axis_offset`
//! with offsets 0, n, 2n for x, y, z. Edges whose head would leave the grid
//! are phantom: they stay in every 3n-sized array with zero length, zero
//! dual facet area, and an all-zero operator row, so the index arithmetic
//! never needs compaction.

use crate::error::{Error, Result};
use crate::sparse::{CsrMatrix, TripletBuilder};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X = 0,
    Y = 1,
    Z = 2,
}

pub const AXES: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

impl Axis {
    pub fn index(self) -> usize {
        self as usize
    }

    /// The two axes transverse to `self`, in ascending order.
    pub fn transverse(self) -> [Axis; 2] {
        match self {
            Axis::X => [Axis::Y, Axis::Z],
            Axis::Y => [Axis::X, Axis::Z],
            Axis::Z => [Axis::X, Axis::Y],
        }
    }
}

#[derive(Debug, Clone)]
pub struct StaggeredGrid {
    node_counts: [usize; 3],
    spacings: [Vec<f64>; 3],
    /// Cumulative node positions per axis, starting at 0.
    positions: [Vec<f64>; 3],
    n: usize,
    edge_lengths: Vec<f64>,
    dual_facet_areas: Vec<f64>,
    dual_volumes: Vec<f64>,
    shifted_volumes: Vec<f64>,
    phantom: Vec<bool>,
}

impl StaggeredGrid {
    pub fn new(node_counts: [usize; 3], spacings: [Vec<f64>; 3]) -> Result<Self> {
        for a in 0..3 {
            if node_counts[a] < 2 {
                return Err(Error::InvalidGeometry(format!(
                    "axis {a} has {} nodes, need at least 2",
                    node_counts[a]
                )));
            }
            if spacings[a].len() != node_counts[a] - 1 {
                return Err(Error::InvalidGeometry(format!(
                    "axis {a} has {} nodes but {} spacings",
                    node_counts[a],
                    spacings[a].len()
                )));
            }
            if spacings[a].iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
                return Err(Error::InvalidGeometry(format!(
                    "axis {a} has a non-positive or non-finite spacing"
                )));
            }
        }
        let positions = std::array::from_fn(|a| {
            let mut p = Vec::with_capacity(node_counts[a]);
            let mut acc = 0.0;
            p.push(0.0);
            for &s in &spacings[a] {
                acc += s;
                p.push(acc);
            }
            p
        });
        let n = node_counts.iter().product();
        let mut grid = StaggeredGrid {
            node_counts,
            spacings,
            positions,
            n,
            edge_lengths: vec![0.0; 3 * n],
            dual_facet_areas: vec![0.0; 3 * n],
            dual_volumes: vec![0.0; n],
            shifted_volumes: vec![0.0; 3 * n],
            phantom: vec![false; 3 * n],
        };
        grid.populate_measures();
        Ok(grid)
    }

    fn populate_measures(&mut self) {
        for m in 0..self.n {
            let c = self.node_coords(m);
            self.dual_volumes[m] = (0..3).map(|a| self.half_span(a, c[a])).product();
        }
        for axis in AXES {
            let [u, v] = axis.transverse();
            for m in 0..self.n {
                let e = self.edge_index(axis, m);
                let c = self.node_coords(m);
                if c[axis.index()] + 1 >= self.node_counts[axis.index()] {
                    self.phantom[e] = true;
                    continue;
                }
                self.edge_lengths[e] = self.spacings[axis.index()][c[axis.index()]];
                self.dual_facet_areas[e] =
                    self.half_span(u.index(), c[u.index()]) * self.half_span(v.index(), c[v.index()]);
                self.shifted_volumes[e] = self.dual_facet_areas[e] * self.edge_lengths[e];
            }
        }
    }

    /// Dual span along `axis` around node index `i`: half of each adjacent
    /// spacing, clipped to a single half at the domain boundary.
    fn half_span(&self, axis: usize, i: usize) -> f64 {
        let s = &self.spacings[axis];
        let left = if i > 0 { s[i - 1] / 2.0 } else { 0.0 };
        let right = if i < s.len() { s[i] / 2.0 } else { 0.0 };
        left + right
    }

    pub fn node_counts(&self) -> [usize; 3] {
        self.node_counts
    }

    pub fn spacings(&self, axis: Axis) -> &[f64] {
        &self.spacings[axis.index()]
    }

    /// Total primary node count.
    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn num_edges(&self) -> usize {
        3 * self.n
    }

    pub fn cell_counts(&self) -> [usize; 3] {
        [
            self.node_counts[0] - 1,
            self.node_counts[1] - 1,
            self.node_counts[2] - 1,
        ]
    }

    pub fn num_cells(&self) -> usize {
        self.cell_counts().iter().product()
    }

    pub fn node_index(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert!(i < self.node_counts[0] && j < self.node_counts[1] && k < self.node_counts[2]);
        i + self.node_counts[0] * (j + self.node_counts[1] * k)
    }

    pub fn node_coords(&self, m: usize) -> [usize; 3] {
        let nx = self.node_counts[0];
        let ny = self.node_counts[1];
        [m % nx, (m / nx) % ny, m / (nx * ny)]
    }

    /// Physical position of node `m` in meters.
    pub fn node_position(&self, m: usize) -> [f64; 3] {
        let c = self.node_coords(m);
        [
            self.positions[0][c[0]],
            self.positions[1][c[1]],
            self.positions[2][c[2]],
        ]
    }

    pub fn edge_index(&self, axis: Axis, node: usize) -> usize {
        node + self.n * axis.index()
    }

    pub fn edge_axis(&self, edge: usize) -> Axis {
        AXES[edge / self.n]
    }

    pub fn edge_base_node(&self, edge: usize) -> usize {
        edge % self.n
    }

    pub fn is_phantom_edge(&self, edge: usize) -> bool {
        self.phantom[edge]
    }

    /// Tail and head node of a real edge; `None` for phantom edges.
    pub fn edge_endpoints(&self, edge: usize) -> Option<(usize, usize)> {
        if self.phantom[edge] {
            return None;
        }
        let axis = self.edge_axis(edge);
        let tail = self.edge_base_node(edge);
        let step = match axis {
            Axis::X => 1,
            Axis::Y => self.node_counts[0],
            Axis::Z => self.node_counts[0] * self.node_counts[1],
        };
        Some((tail, tail + step))
    }

    pub fn real_edges(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_edges()).filter(|&e| !self.phantom[e])
    }

    /// Real edges incident to node `m` (3 to 6 of them), ascending.
    pub fn incident_real_edges(&self, m: usize) -> Vec<usize> {
        let c = self.node_coords(m);
        let mut edges = Vec::with_capacity(6);
        for axis in AXES {
            let step = match axis {
                Axis::X => 1,
                Axis::Y => self.node_counts[0],
                Axis::Z => self.node_counts[0] * self.node_counts[1],
            };
            if c[axis.index()] > 0 {
                edges.push(self.edge_index(axis, m - step));
            }
            let e = self.edge_index(axis, m);
            if !self.phantom[e] {
                edges.push(e);
            }
        }
        edges.sort_unstable();
        edges
    }

    pub fn cell_index(&self, i: usize, j: usize, k: usize) -> usize {
        let cc = self.cell_counts();
        debug_assert!(i < cc[0] && j < cc[1] && k < cc[2]);
        i + cc[0] * (j + cc[1] * k)
    }

    pub fn cell_coords(&self, c: usize) -> [usize; 3] {
        let cc = self.cell_counts();
        [c % cc[0], (c / cc[0]) % cc[1], c / (cc[0] * cc[1])]
    }

    /// Geometric center of primary cell `c` in meters.
    pub fn cell_center(&self, c: usize) -> [f64; 3] {
        let cc = self.cell_coords(c);
        std::array::from_fn(|a| {
            (self.positions[a][cc[a]] + self.positions[a][cc[a] + 1]) / 2.0
        })
    }

    pub fn edge_length(&self, edge: usize) -> f64 {
        self.edge_lengths[edge]
    }

    pub fn dual_facet_area(&self, edge: usize) -> f64 {
        self.dual_facet_areas[edge]
    }

    pub fn dual_volume(&self, node: usize) -> f64 {
        self.dual_volumes[node]
    }

    pub fn shifted_volume(&self, edge: usize) -> f64 {
        self.shifted_volumes[edge]
    }

    pub fn dual_volumes(&self) -> &[f64] {
        &self.dual_volumes
    }

    pub fn total_volume(&self) -> f64 {
        (0..3)
            .map(|a| self.spacings[a].iter().sum::<f64>())
            .product()
    }

    /// Cells touching a real edge with their cross-sectional averaging
    /// weights. Weights are non-negative and sum to exactly 1: each touching
    /// cell contributes half of its transverse extents to the dual facet,
    /// and the facet area is the sum of those contributions.
    pub fn edge_cell_weights(&self, edge: usize) -> Result<Vec<(usize, f64)>> {
        if self.phantom[edge] {
            return Err(Error::PhantomEdge(edge));
        }
        let axis = self.edge_axis(edge);
        let [u, v] = axis.transverse();
        let c = self.node_coords(self.edge_base_node(edge));
        let cc = self.cell_counts();
        let area = self.dual_facet_areas[edge];
        let mut out = Vec::with_capacity(4);
        for du in self.adjacent_cell_indices(u.index(), c[u.index()], cc[u.index()]) {
            for dv in self.adjacent_cell_indices(v.index(), c[v.index()], cc[v.index()]) {
                let contribution =
                    (self.spacings[u.index()][du] / 2.0) * (self.spacings[v.index()][dv] / 2.0);
                let mut cell = [0usize; 3];
                cell[axis.index()] = c[axis.index()];
                cell[u.index()] = du;
                cell[v.index()] = dv;
                out.push((
                    self.cell_index(cell[0], cell[1], cell[2]),
                    contribution / area,
                ));
            }
        }
        Ok(out)
    }

    /// Cells overlapping the dual cell of node `m`, with overlap volumes.
    /// The volumes sum to the (clipped) dual volume of the node.
    pub fn node_cell_overlaps(&self, m: usize) -> Vec<(usize, f64)> {
        let c = self.node_coords(m);
        let cc = self.cell_counts();
        let xs = self.adjacent_cell_indices(0, c[0], cc[0]);
        let ys = self.adjacent_cell_indices(1, c[1], cc[1]);
        let zs = self.adjacent_cell_indices(2, c[2], cc[2]);
        let mut out = Vec::with_capacity(8);
        for &ci in &xs {
            for &cj in &ys {
                for &ck in &zs {
                    let vol = (self.spacings[0][ci] / 2.0)
                        * (self.spacings[1][cj] / 2.0)
                        * (self.spacings[2][ck] / 2.0);
                    out.push((self.cell_index(ci, cj, ck), vol));
                }
            }
        }
        out
    }

    /// Cell indices along one axis adjacent to node index `i`.
    fn adjacent_cell_indices(&self, _axis: usize, i: usize, cells: usize) -> Vec<usize> {
        let mut v = Vec::with_capacity(2);
        if i > 0 {
            v.push(i - 1);
        }
        if i < cells {
            v.push(i);
        }
        v
    }
}

/// Discrete gradient, dual divergence, and the node-edge incidence used by
/// the Joule-loss projection.
#[derive(Debug, Clone)]
pub struct IncidenceOperators {
    gradient: CsrMatrix,
    dual_divergence: CsrMatrix,
    loss_incidence: CsrMatrix,
}

impl IncidenceOperators {
    pub fn build(grid: &StaggeredGrid) -> Self {
        let n = grid.num_nodes();
        let ne = grid.num_edges();
        let mut g = TripletBuilder::new(ne, n);
        let mut s = TripletBuilder::new(n, ne);
        let mut p = TripletBuilder::new(n, ne);
        for e in grid.real_edges() {
            let (a, b) = grid.edge_endpoints(e).expect("real edge");
            g.push(e, a, -1.0);
            g.push(e, b, 1.0);
            s.push(a, e, 1.0);
            s.push(b, e, -1.0);
            p.push(a, e, 1.0);
            p.push(b, e, 1.0);
        }
        IncidenceOperators {
            gradient: g.build(),
            dual_divergence: s.build(),
            loss_incidence: p.build(),
        }
    }

    /// G, 3n x n.
    pub fn gradient(&self) -> &CsrMatrix {
        &self.gradient
    }

    /// Dual divergence, n x 3n, equal to -G^T.
    pub fn dual_divergence(&self) -> &CsrMatrix {
        &self.dual_divergence
    }

    /// P_Q, n x 3n: 1 where a real edge is incident to the node.
    pub fn loss_incidence(&self) -> &CsrMatrix {
        &self.loss_incidence
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(counts: [usize; 3], h: f64) -> StaggeredGrid {
        let spacings = std::array::from_fn(|a| vec![h; counts[a] - 1]);
        StaggeredGrid::new(counts, spacings).unwrap()
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(StaggeredGrid::new([1, 2, 2], [vec![], vec![1.0], vec![1.0]]).is_err());
        assert!(StaggeredGrid::new([2, 2, 2], [vec![-1.0], vec![1.0], vec![1.0]]).is_err());
        assert!(StaggeredGrid::new([3, 2, 2], [vec![1.0], vec![1.0], vec![1.0]]).is_err());
    }

    #[test]
    fn unit_cube_dual_volumes_are_octants() {
        // All 8 corner nodes of a single 1 mm cell own one octant each.
        let g = uniform([2, 2, 2], 1e-3);
        assert_eq!(g.num_nodes(), 8);
        for m in 0..8 {
            assert!((g.dual_volume(m) - 1.25e-10).abs() < 1e-24);
        }
    }

    #[test]
    fn corner_x_edge_area_is_quarter_cell_cross_section() {
        // On a (3,2,2) grid every transverse index is a boundary index, so
        // the facet of the central x-edge is clipped to a quarter cell.
        let g = StaggeredGrid::new(
            [3, 2, 2],
            [vec![1e-3, 1e-3], vec![1e-3], vec![1e-3]],
        )
        .unwrap();
        let e = g.edge_index(Axis::X, g.node_index(1, 0, 0));
        assert!((g.dual_facet_area(e) - 2.5e-7).abs() < 1e-20);
    }

    #[test]
    fn coarse_bar_grid_counts() {
        let g = uniform([5, 2, 2], 1e-3);
        assert_eq!(g.num_nodes(), 20);
        assert_eq!(g.cell_counts(), [4, 1, 1]);
        assert_eq!(g.num_cells(), 4);
    }

    #[test]
    fn dual_volumes_partition_the_domain() {
        let g = StaggeredGrid::new(
            [4, 3, 2],
            [vec![1e-3, 2e-3, 0.5e-3], vec![1e-3, 1.5e-3], vec![2e-3]],
        )
        .unwrap();
        let sum: f64 = (0..g.num_nodes()).map(|m| g.dual_volume(m)).sum();
        let total = g.total_volume();
        assert!((sum - total).abs() <= 1e-12 * total);
    }

    #[test]
    fn shifted_volume_is_area_times_length_exactly() {
        let g = StaggeredGrid::new(
            [3, 3, 3],
            [
                vec![1e-3, 2e-3],
                vec![0.5e-3, 1e-3],
                vec![1.5e-3, 2.5e-3],
            ],
        )
        .unwrap();
        for e in 0..g.num_edges() {
            assert_eq!(g.shifted_volume(e), g.dual_facet_area(e) * g.edge_length(e));
        }
    }

    #[test]
    fn edge_indexing_round_trips() {
        let g = uniform([4, 3, 2], 1e-3);
        for axis in AXES {
            for m in 0..g.num_nodes() {
                let e = g.edge_index(axis, m);
                assert_eq!(g.edge_axis(e), axis);
                assert_eq!(g.edge_base_node(e), m);
            }
        }
        // Real x-edge count is (nx-1)*ny*nz, and similarly per axis.
        let real_x = (0..g.num_nodes())
            .filter(|&m| !g.is_phantom_edge(g.edge_index(Axis::X, m)))
            .count();
        assert_eq!(real_x, 3 * 3 * 2);
    }

    #[test]
    fn x_line_gradient_rows_match_super_diagonal_rule() {
        // Along one x-line of a (3,2,2) grid the two real x-edge rows carry
        // (-1, +1) in consecutive node columns; the third is phantom and
        // identically zero.
        let g = StaggeredGrid::new(
            [3, 2, 2],
            [vec![1e-3, 1e-3], vec![1e-3], vec![1e-3]],
        )
        .unwrap();
        let ops = IncidenceOperators::build(&g);
        let n0 = g.node_index(0, 0, 0);
        let n1 = g.node_index(1, 0, 0);
        let n2 = g.node_index(2, 0, 0);
        let grad = ops.gradient();
        assert_eq!(grad.get(g.edge_index(Axis::X, n0), n0), -1.0);
        assert_eq!(grad.get(g.edge_index(Axis::X, n0), n1), 1.0);
        assert_eq!(grad.get(g.edge_index(Axis::X, n1), n1), -1.0);
        assert_eq!(grad.get(g.edge_index(Axis::X, n1), n2), 1.0);
        let phantom_row = g.edge_index(Axis::X, n2);
        assert!(g.is_phantom_edge(phantom_row));
        assert_eq!(grad.row(phantom_row).0.len(), 0);
    }

    #[test]
    fn gradient_is_negative_transposed_divergence() {
        let g = uniform([3, 3, 2], 1e-3);
        let ops = IncidenceOperators::build(&g);
        let minus_st = ops.dual_divergence().transpose().scaled(-1.0);
        assert_eq!(ops.gradient(), &minus_st);
    }

    #[test]
    fn gradient_applies_potential_differences() {
        let g = uniform([3, 3, 3], 1e-3);
        let ops = IncidenceOperators::build(&g);
        let phi: Vec<f64> = (0..g.num_nodes()).map(|m| (m as f64).sin()).collect();
        let gphi = ops.gradient().mul_vec(&phi).unwrap();
        for e in 0..g.num_edges() {
            match g.edge_endpoints(e) {
                Some((a, b)) => assert_eq!(gphi[e], phi[b] - phi[a]),
                None => assert_eq!(gphi[e], 0.0),
            }
        }
    }

    #[test]
    fn interior_gradient_columns_sum_to_zero() {
        let g = uniform([3, 3, 3], 1e-3);
        let ops = IncidenceOperators::build(&g);
        let center = g.node_index(1, 1, 1);
        let col_sum: f64 = ops
            .gradient()
            .iter()
            .filter(|&(_, c, _)| c == center)
            .map(|(_, _, v)| v)
            .sum();
        assert_eq!(col_sum, 0.0);
    }

    #[test]
    fn unit_cube_loss_incidence_rows_have_three_ones() {
        let g = uniform([2, 2, 2], 1e-3);
        let ops = IncidenceOperators::build(&g);
        for m in 0..g.num_nodes() {
            let (cols, vals) = ops.loss_incidence().row(m);
            assert_eq!(cols.len(), 3);
            assert!(vals.iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn loss_incidence_columns_have_two_ones_or_none() {
        let g = uniform([3, 3, 2], 1e-3);
        let ops = IncidenceOperators::build(&g);
        let pt = ops.loss_incidence().transpose();
        for e in 0..g.num_edges() {
            let (cols, _) = pt.row(e);
            if g.is_phantom_edge(e) {
                assert_eq!(cols.len(), 0);
            } else {
                assert_eq!(cols.len(), 2);
                let (a, b) = g.edge_endpoints(e).unwrap();
                assert_eq!(cols, &[a, b]);
            }
        }
    }

    #[test]
    fn incident_edges_match_loss_incidence_rows() {
        let g = uniform([3, 3, 3], 1e-3);
        let ops = IncidenceOperators::build(&g);
        for m in 0..g.num_nodes() {
            let (cols, _) = ops.loss_incidence().row(m);
            assert_eq!(cols, g.incident_real_edges(m).as_slice());
        }
    }

    #[test]
    fn interior_edge_weights_are_quarters() {
        let g = uniform([3, 3, 3], 1e-3);
        // x-edge from (0,1,1) to (1,1,1): transverse indices interior.
        let e = g.edge_index(Axis::X, g.node_index(0, 1, 1));
        let w = g.edge_cell_weights(e).unwrap();
        assert_eq!(w.len(), 4);
        for &(_, wi) in &w {
            assert!((wi - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn boundary_edge_weight_renormalizes_to_single_cell() {
        let g = uniform([5, 2, 2], 1e-3);
        let e = g.edge_index(Axis::X, g.node_index(0, 0, 0));
        let w = g.edge_cell_weights(e).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].0, g.cell_index(0, 0, 0));
        assert!((w[0].1 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn weights_sum_to_one_on_stretched_grids() {
        let g = StaggeredGrid::new(
            [4, 3, 3],
            [
                vec![1e-3, 2e-3, 0.25e-3],
                vec![0.5e-3, 1.5e-3],
                vec![2e-3, 1e-3],
            ],
        )
        .unwrap();
        for e in g.real_edges() {
            let w = g.edge_cell_weights(e).unwrap();
            let sum: f64 = w.iter().map(|&(_, wi)| wi).sum();
            assert!((sum - 1.0).abs() < 1e-14, "edge {e}: sum {sum}");
            assert!(w.iter().all(|&(_, wi)| wi >= 0.0));
        }
        assert!(matches!(
            g.edge_cell_weights(g.edge_index(Axis::X, g.node_index(3, 0, 0))),
            Err(Error::PhantomEdge(_))
        ));
    }

    #[test]
    fn node_overlaps_partition_dual_volume() {
        let g = StaggeredGrid::new(
            [4, 3, 3],
            [
                vec![1e-3, 2e-3, 0.25e-3],
                vec![0.5e-3, 1.5e-3],
                vec![2e-3, 1e-3],
            ],
        )
        .unwrap();
        for m in 0..g.num_nodes() {
            let parts = g.node_cell_overlaps(m);
            let sum: f64 = parts.iter().map(|&(_, v)| v).sum();
            let dv = g.dual_volume(m);
            assert!((sum - dv).abs() <= 1e-15 * dv.max(1e-30));
        }
        // The grid center node overlaps all 8 surrounding cells.
        let center = g.node_index(1, 1, 1);
        assert_eq!(g.node_cell_overlaps(center).len(), 8);
    }
}
