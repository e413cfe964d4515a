//! Reference transient solver for the coupled electrothermal system
//!
//! ```text
//!   S M_eps S^T dPhi/dt + S M_sigma(T) S^T Phi = 0
//!   M_rhoc dT/dt + S M_lambda S^T T = Q_el(Phi, T)
//! ```
//!
//! with backward Euler time stepping, symmetric Dirichlet elimination, and
//! either a lagged (one Gauss-Seidel pass per step, sigma frozen at the
//! previous temperature) or a monolithic (Newton with analytic Jacobian)
//! coupling strategy.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{IncidenceOperators, StaggeredGrid};
use crate::materials::{MaterialMatrices, MaterialModel};
use crate::sparse::{CsrMatrix, TripletBuilder};
use crate::trace::{StepMeta, TransientTrace};
use crate::waveform::Waveform;

/// Lumped two-node branch for non-grid elements such as bonding wires.
/// Carries plain conductances and is loss-free in both solution paths.
#[derive(Debug, Clone, Copy)]
pub struct LumpedBranch {
    pub node_a: usize,
    pub node_b: usize,
    pub g_el: f64,
    pub g_th: f64,
}

/// Dirichlet values and lumped extra branches.
#[derive(Debug, Clone, Default)]
pub struct BoundaryConditions {
    pub electric_dirichlet: BTreeMap<usize, Waveform>,
    pub thermal_dirichlet: BTreeMap<usize, Waveform>,
    pub extra_branches: Vec<LumpedBranch>,
}

impl BoundaryConditions {
    pub fn validate(&self, grid: &StaggeredGrid) -> Result<()> {
        if self.electric_dirichlet.is_empty() {
            return Err(Error::SingularSystem(
                "no electric Dirichlet node fixes the potential reference".into(),
            ));
        }
        let n = grid.num_nodes();
        for &m in self
            .electric_dirichlet
            .keys()
            .chain(self.thermal_dirichlet.keys())
        {
            if m >= n {
                return Err(Error::InvalidGeometry(format!(
                    "Dirichlet node {m} outside grid with {n} nodes"
                )));
            }
        }
        for b in &self.extra_branches {
            if b.node_a >= n || b.node_b >= n || b.node_a == b.node_b {
                return Err(Error::InvalidGeometry(format!(
                    "lumped branch endpoints ({}, {}) invalid",
                    b.node_a, b.node_b
                )));
            }
            if b.g_el < 0.0 || b.g_th < 0.0 {
                return Err(Error::InvalidMaterial(
                    "lumped branch conductances must be non-negative".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingMode {
    /// One Gauss-Seidel pass per step: electrical solve with sigma(T_prev),
    /// losses from the new potentials, then the thermal solve.
    Lagged,
    /// Joint Newton solve of both blocks with the analytic Jacobian.
    Monolithic,
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub dt: f64,
    pub tstop: f64,
    pub mode: CouplingMode,
    /// Relative residual reduction required by the monolithic Newton loop.
    pub newton_tol: f64,
    pub max_iter: usize,
    /// Initial temperature rises; zeros when absent.
    pub initial_temperature: Option<Vec<f64>>,
}

impl SolverOptions {
    pub fn new(dt: f64, tstop: f64) -> Self {
        SolverOptions {
            dt,
            tstop,
            mode: CouplingMode::Lagged,
            newton_tol: 1e-10,
            max_iter: 25,
            initial_temperature: None,
        }
    }
}

/// Branch Joule losses `Q_hat = e (hadamard) j` on the shifted cells.
pub fn compute_branch_losses(e: &[f64], j_current: &[f64]) -> Result<Vec<f64>> {
    if e.len() != j_current.len() {
        return Err(Error::Shape {
            expected: e.len(),
            got: j_current.len(),
        });
    }
    Ok(e.iter().zip(j_current).map(|(&ek, &jk)| ek * jk).collect())
}

/// Project branch losses onto dual cells:
/// `Q_el = 1/2 D_dual P_Q D_shifted^{-1} Q_hat`, where the inverse shifted
/// volume is taken as zero on phantom edges.
pub fn project_losses(
    grid: &StaggeredGrid,
    ops: &IncidenceOperators,
    q_hat: &[f64],
) -> Result<Vec<f64>> {
    if q_hat.len() != grid.num_edges() {
        return Err(Error::Shape {
            expected: grid.num_edges(),
            got: q_hat.len(),
        });
    }
    let mut scaled = vec![0.0; q_hat.len()];
    for e in grid.real_edges() {
        scaled[e] = q_hat[e] / grid.shifted_volume(e);
    }
    let mut q_el = ops.loss_incidence().mul_vec(&scaled)?;
    for (i, q) in q_el.iter_mut().enumerate() {
        *q *= 0.5 * grid.dual_volume(i);
    }
    Ok(q_el)
}

struct State {
    phi: Vec<f64>,
    temp: Vec<f64>,
}

pub struct FieldSolver<'a> {
    grid: &'a StaggeredGrid,
    ops: &'a IncidenceOperators,
    materials: &'a MaterialModel,
    matrices: &'a MaterialMatrices,
    bcs: &'a BoundaryConditions,
    free_el: Vec<usize>,
    free_th: Vec<usize>,
    el_local: Vec<Option<usize>>,
    th_local: Vec<Option<usize>>,
    el_dirichlet: Vec<bool>,
    th_dirichlet: Vec<bool>,
    k_eps: CsrMatrix,
    k_lambda: CsrMatrix,
    /// Per node: incident real edges with loss weights |V_i| / (2 |V_e|).
    loss_weights: Vec<Vec<(usize, f64)>>,
    extra_el: Vec<(usize, usize, f64)>,
}

impl<'a> FieldSolver<'a> {
    pub fn new(
        grid: &'a StaggeredGrid,
        ops: &'a IncidenceOperators,
        materials: &'a MaterialModel,
        matrices: &'a MaterialMatrices,
        bcs: &'a BoundaryConditions,
    ) -> Result<Self> {
        bcs.validate(grid)?;
        let n = grid.num_nodes();
        let mut el_dirichlet = vec![false; n];
        for &m in bcs.electric_dirichlet.keys() {
            el_dirichlet[m] = true;
        }
        let mut th_dirichlet = vec![false; n];
        for &m in bcs.thermal_dirichlet.keys() {
            th_dirichlet[m] = true;
        }
        let free_el: Vec<usize> = (0..n).filter(|&m| !el_dirichlet[m]).collect();
        let free_th: Vec<usize> = (0..n).filter(|&m| !th_dirichlet[m]).collect();
        let mut el_local = vec![None; n];
        for (l, &m) in free_el.iter().enumerate() {
            el_local[m] = Some(l);
        }
        let mut th_local = vec![None; n];
        for (l, &m) in free_th.iter().enumerate() {
            th_local[m] = Some(l);
        }
        let extra_el: Vec<(usize, usize, f64)> = bcs
            .extra_branches
            .iter()
            .filter(|b| b.g_el > 0.0)
            .map(|b| (b.node_a, b.node_b, b.g_el))
            .collect();
        let extra_th: Vec<(usize, usize, f64)> = bcs
            .extra_branches
            .iter()
            .filter(|b| b.g_th > 0.0)
            .map(|b| (b.node_a, b.node_b, b.g_th))
            .collect();
        let k_eps = edge_laplacian(grid, matrices.m_eps(), &[]);
        let k_lambda = edge_laplacian(grid, matrices.m_lambda(), &extra_th);
        let loss_weights = (0..n)
            .map(|m| {
                grid.incident_real_edges(m)
                    .into_iter()
                    .map(|e| (e, grid.dual_volume(m) / (2.0 * grid.shifted_volume(e))))
                    .collect()
            })
            .collect();
        Ok(FieldSolver {
            grid,
            ops,
            materials,
            matrices,
            bcs,
            free_el,
            free_th,
            el_local,
            th_local,
            el_dirichlet,
            th_dirichlet,
            k_eps,
            k_lambda,
            loss_weights,
            extra_el,
        })
    }

    /// Electrical capacitance stiffness `S M_eps S^T` (full, unreduced).
    pub fn capacitance_matrix(&self) -> &CsrMatrix {
        &self.k_eps
    }

    /// Thermal conductance stiffness `S M_lambda S^T` plus lumped thermal
    /// branches (full, unreduced).
    pub fn thermal_conductance_matrix(&self) -> &CsrMatrix {
        &self.k_lambda
    }

    /// Electrical conductance stiffness `S M_sigma(T) S^T` plus lumped
    /// electrical branches at the given temperature rises.
    pub fn conductance_matrix(&self, temp: &[f64]) -> Result<CsrMatrix> {
        let msig = self.msig_at(temp)?;
        Ok(edge_laplacian(self.grid, &msig, &self.extra_el))
    }

    /// Heat capacity diagonal `M_rhoc`.
    pub fn heat_capacity_diagonal(&self) -> &[f64] {
        self.matrices.m_rhoc()
    }

    pub fn free_electrical_nodes(&self) -> &[usize] {
        &self.free_el
    }

    pub fn free_thermal_nodes(&self) -> &[usize] {
        &self.free_th
    }

    /// Restrict a full nodal matrix to free electrical rows and columns.
    pub fn reduce_electrical(&self, m: &CsrMatrix) -> CsrMatrix {
        m.submatrix(&self.free_el, &self.free_el)
    }

    /// Restrict a full nodal matrix to free thermal rows and columns.
    pub fn reduce_thermal(&self, m: &CsrMatrix) -> CsrMatrix {
        m.submatrix(&self.free_th, &self.free_th)
    }

    /// Per-edge conductance entries at the given temperature rises, with
    /// the edge mean temperature taken as the endpoint average.
    fn msig_at(&self, temp: &[f64]) -> Result<Vec<f64>> {
        let mut msig = vec![0.0; self.grid.num_edges()];
        for e in self.grid.real_edges() {
            let (a, b) = self.grid.edge_endpoints(e).expect("real edge");
            let tbar = 0.5 * (temp[a] + temp[b]);
            msig[e] = self.matrices.m_sigma_at(self.materials, e, tbar)?;
        }
        Ok(msig)
    }

    /// Projected nodal losses from branch quantities.
    fn q_el_of(&self, gphi: &[f64], msig: &[f64]) -> Vec<f64> {
        (0..self.grid.num_nodes())
            .map(|m| {
                self.loss_weights[m]
                    .iter()
                    .map(|&(e, w)| w * msig[e] * gphi[e] * gphi[e])
                    .sum()
            })
            .collect()
    }

    fn apply_dirichlet(&self, t: f64, phi: &mut [f64], temp: &mut [f64]) {
        for (&m, w) in &self.bcs.electric_dirichlet {
            phi[m] = w.eval(t);
        }
        for (&m, w) in &self.bcs.thermal_dirichlet {
            temp[m] = w.eval(t);
        }
    }

    pub fn run(&self, opts: &SolverOptions) -> Result<TransientTrace> {
        if !(opts.dt > 0.0) || !(opts.tstop >= opts.dt) {
            return Err(Error::Scenario(format!(
                "need 0 < dt <= tstop, got dt = {}, tstop = {}",
                opts.dt, opts.tstop
            )));
        }
        let n = self.grid.num_nodes();
        let mut phi = vec![0.0; n];
        let mut temp = match &opts.initial_temperature {
            Some(t0) => {
                if t0.len() != n {
                    return Err(Error::Shape {
                        expected: n,
                        got: t0.len(),
                    });
                }
                t0.clone()
            }
            None => vec![0.0; n],
        };
        self.apply_dirichlet(0.0, &mut phi, &mut temp);

        let steps = ((opts.tstop / opts.dt).round() as usize).max(1);
        let mut trace = TransientTrace {
            times: Vec::with_capacity(steps + 1),
            phi: Vec::with_capacity(steps + 1),
            temperature: Vec::with_capacity(steps + 1),
            q_el: Vec::with_capacity(steps + 1),
            step_meta: Vec::with_capacity(steps + 1),
        };
        let msig0 = self.msig_at(&temp)?;
        let gphi0 = self.ops.gradient().mul_vec(&phi)?;
        trace.times.push(0.0);
        trace.phi.push(phi.clone());
        trace.temperature.push(temp.clone());
        trace.q_el.push(self.q_el_of(&gphi0, &msig0));
        trace.step_meta.push(StepMeta::default());

        let mut state = State { phi, temp };
        for k in 1..=steps {
            let t_new = k as f64 * opts.dt;
            let (next, q_el, meta) = match opts.mode {
                CouplingMode::Lagged => self.step_lagged(&state, t_new, opts.dt)?,
                CouplingMode::Monolithic => {
                    self.step_monolithic(&state, t_new, opts.dt, opts.newton_tol, opts.max_iter)?
                }
            };
            trace.times.push(t_new);
            trace.phi.push(next.phi.clone());
            trace.temperature.push(next.temp.clone());
            trace.q_el.push(q_el);
            trace.step_meta.push(meta);
            state = next;
        }
        Ok(trace)
    }

    fn step_lagged(
        &self,
        state: &State,
        t_new: f64,
        dt: f64,
    ) -> Result<(State, Vec<f64>, StepMeta)> {
        let n = self.grid.num_nodes();
        let mut phi = vec![0.0; n];
        let mut temp = vec![0.0; n];
        self.apply_dirichlet(t_new, &mut phi, &mut temp);

        // Electrical backward Euler with sigma frozen at T_prev.
        let msig = self.msig_at(&state.temp)?;
        let mut a_el_diag = msig.clone();
        for (d, &me) in a_el_diag.iter_mut().zip(self.matrices.m_eps()) {
            *d += me / dt;
        }
        let a_el = edge_laplacian(self.grid, &a_el_diag, &self.extra_el);
        let mut rhs_el = self.k_eps.mul_vec(&state.phi)?;
        for r in &mut rhs_el {
            *r /= dt;
        }
        let res_el = solve_eliminated(&a_el, &self.free_el, &self.el_dirichlet, &rhs_el, &mut phi)?;

        // Losses from the new potentials, conductances still at T_prev.
        let gphi = self.ops.gradient().mul_vec(&phi)?;
        let q_el = self.q_el_of(&gphi, &msig);

        // Thermal backward Euler driven by the projected losses.
        let mrhoc = self.matrices.m_rhoc();
        let mut a_th = TripletBuilder::new(n, n);
        for (i, &c) in mrhoc.iter().enumerate() {
            if c != 0.0 {
                a_th.push(i, i, c / dt);
            }
        }
        for (r, c, v) in self.k_lambda.iter() {
            a_th.push(r, c, v);
        }
        let a_th = a_th.build();
        let rhs_th: Vec<f64> = (0..n)
            .map(|i| mrhoc[i] * state.temp[i] / dt + q_el[i])
            .collect();
        let res_th = solve_eliminated(&a_th, &self.free_th, &self.th_dirichlet, &rhs_th, &mut temp)?;

        let meta = StepMeta {
            newton_iters: 1,
            residual: res_el.max(res_th),
            residual_history: Vec::new(),
        };
        Ok((State { phi, temp }, q_el, meta))
    }

    /// Residual of the fully implicit step at the trial point, restricted
    /// to free unknowns: electrical rows first, thermal rows after.
    #[allow(clippy::too_many_arguments)]
    fn residual(
        &self,
        phi: &[f64],
        temp: &[f64],
        prev: &State,
        dt: f64,
    ) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
        let n = self.grid.num_nodes();
        let msig = self.msig_at(temp)?;
        let gphi = self.ops.gradient().mul_vec(phi)?;

        let mut r_el_full = self.k_eps.mul_vec(phi)?;
        {
            let prev_contrib = self.k_eps.mul_vec(&prev.phi)?;
            for (r, p) in r_el_full.iter_mut().zip(&prev_contrib) {
                *r = (*r - p) / dt;
            }
        }
        for e in self.grid.real_edges() {
            let (a, b) = self.grid.edge_endpoints(e).expect("real edge");
            let i_branch = msig[e] * gphi[e];
            r_el_full[a] -= i_branch;
            r_el_full[b] += i_branch;
        }
        for &(a, b, g) in &self.extra_el {
            let i_branch = g * (phi[b] - phi[a]);
            r_el_full[a] -= i_branch;
            r_el_full[b] += i_branch;
        }

        let q_el = self.q_el_of(&gphi, &msig);
        let mrhoc = self.matrices.m_rhoc();
        let mut r_th_full = self.k_lambda.mul_vec(temp)?;
        for i in 0..n {
            r_th_full[i] += mrhoc[i] * (temp[i] - prev.temp[i]) / dt - q_el[i];
        }

        let r_el: Vec<f64> = self.free_el.iter().map(|&m| r_el_full[m]).collect();
        let r_th: Vec<f64> = self.free_th.iter().map(|&m| r_th_full[m]).collect();
        Ok((r_el, r_th, msig, gphi))
    }

    fn jacobian(
        &self,
        phi: &[f64],
        temp: &[f64],
        msig: &[f64],
        gphi: &[f64],
        dt: f64,
    ) -> Result<CsrMatrix> {
        let nfe = self.free_el.len();
        let nft = self.free_th.len();
        let dim = nfe + nft;
        let mut jac = TripletBuilder::new(dim, dim);

        // d r_el / d phi: K_eps / dt + K_sigma(T).
        for (r, c, v) in self.k_eps.iter() {
            if let (Some(lr), Some(lc)) = (self.el_local[r], self.el_local[c]) {
                jac.push(lr, lc, v / dt);
            }
        }
        let stamp_g = |jac: &mut TripletBuilder, a: usize, b: usize, g: f64| {
            let (la, lb) = (self.el_local[a], self.el_local[b]);
            if let Some(la) = la {
                jac.push(la, la, g);
                if let Some(lb) = lb {
                    jac.push(la, lb, -g);
                }
            }
            if let Some(lb) = lb {
                jac.push(lb, lb, g);
                if let Some(la) = la {
                    jac.push(lb, la, -g);
                }
            }
        };
        for e in self.grid.real_edges() {
            let (a, b) = self.grid.edge_endpoints(e).expect("real edge");
            stamp_g(&mut jac, a, b, msig[e]);
        }
        for &(a, b, g) in &self.extra_el {
            stamp_g(&mut jac, a, b, g);
        }

        // d r_el / d T: the branch current m_sigma(T_bar) (Phi_b - Phi_a)
        // depends on both endpoint temperatures with weight 1/2.
        let _ = phi;
        for e in self.grid.real_edges() {
            let (a, b) = self.grid.edge_endpoints(e).expect("real edge");
            let tbar = 0.5 * (temp[a] + temp[b]);
            let dmsig = self.matrices.d_m_sigma_d_t(self.materials, e, tbar)?;
            if dmsig == 0.0 {
                continue;
            }
            let di = 0.5 * dmsig * gphi[e];
            for (row, sign) in [(a, -1.0), (b, 1.0)] {
                if let Some(lr) = self.el_local[row] {
                    for col in [a, b] {
                        if let Some(lc) = self.th_local[col] {
                            jac.push(lr, nfe + lc, sign * di);
                        }
                    }
                }
            }
        }

        // Thermal rows.
        let mrhoc = self.matrices.m_rhoc();
        for (i, &c) in mrhoc.iter().enumerate() {
            if let Some(li) = self.th_local[i] {
                if c != 0.0 {
                    jac.push(nfe + li, nfe + li, c / dt);
                }
            }
        }
        for (r, c, v) in self.k_lambda.iter() {
            if let (Some(lr), Some(lc)) = (self.th_local[r], self.th_local[c]) {
                jac.push(nfe + lr, nfe + lc, v);
            }
        }

        // Loss derivatives: Q_el,i = sum_e w_ie m_sigma,e (Phi_b - Phi_a)^2.
        for (i, weights) in self.loss_weights.iter().enumerate() {
            let Some(li) = self.th_local[i] else { continue };
            let row = nfe + li;
            for &(e, w) in weights {
                let (a, b) = self.grid.edge_endpoints(e).expect("real edge");
                // d Q_hat / d phi = 2 m_sigma (phi_b - phi_a) times +-1.
                let dq_dphi = 2.0 * msig[e] * gphi[e];
                if dq_dphi != 0.0 {
                    for (col, sign) in [(a, -1.0), (b, 1.0)] {
                        if let Some(lc) = self.el_local[col] {
                            jac.push(row, lc, -w * sign * dq_dphi);
                        }
                    }
                }
                // d Q_hat / d T = (phi_b - phi_a)^2 dmsig/dT_bar / 2.
                let tbar = 0.5 * (temp[a] + temp[b]);
                let dmsig = self.matrices.d_m_sigma_d_t(self.materials, e, tbar)?;
                if dmsig != 0.0 {
                    let dq_dt = 0.5 * dmsig * gphi[e] * gphi[e];
                    for col in [a, b] {
                        if let Some(lc) = self.th_local[col] {
                            jac.push(row, nfe + lc, -w * dq_dt);
                        }
                    }
                }
            }
        }
        Ok(jac.build())
    }

    fn step_monolithic(
        &self,
        state: &State,
        t_new: f64,
        dt: f64,
        newton_tol: f64,
        max_iter: usize,
    ) -> Result<(State, Vec<f64>, StepMeta)> {
        let nfe = self.free_el.len();
        let mut phi = state.phi.clone();
        let mut temp = state.temp.clone();
        self.apply_dirichlet(t_new, &mut phi, &mut temp);

        // The initial residual must be evaluable: the previous accepted
        // state is physical by construction.
        let (mut r_el, mut r_th, mut msig, mut gphi) = self.residual(&phi, &temp, state, dt)?;
        let norm = |a: &[f64]| a.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        let mut history = vec![(norm(&r_el), norm(&r_th))];
        let norm0 = history[0].0.max(history[0].1);
        let target = newton_tol * norm0;

        let mut iters = 0;
        let mut current = norm0;
        // Residual evaluation cancels terms of magnitude |J||x|; below that
        // times machine epsilon (with headroom) only noise remains.
        let mut noise_floor = 0.0;
        while current > target && current > noise_floor {
            if iters >= max_iter {
                return Err(Error::NoConvergence {
                    t: t_new,
                    residual: current,
                    iterations: iters,
                });
            }
            let jac = self.jacobian(&phi, &temp, &msig, &gphi, dt)?;
            let jmax = jac.iter().map(|(_, _, v)| v.abs()).fold(0.0, f64::max);
            let xmax = phi
                .iter()
                .chain(temp.iter())
                .fold(1.0_f64, |a, &b| a.max(b.abs()));
            noise_floor = 100.0 * f64::EPSILON * jmax * xmax;
            let mut rhs: Vec<f64> = r_el.iter().chain(r_th.iter()).map(|&v| -v).collect();
            let delta = jac.lu_solve(&rhs)?;
            rhs.clear();

            // Damped update: halve the step while the resistivity law
            // rejects the trial temperatures.
            let mut scale = 1.0;
            let update = |phi: &mut Vec<f64>, temp: &mut Vec<f64>, s: f64| {
                for (l, &m) in self.free_el.iter().enumerate() {
                    phi[m] += s * delta[l];
                }
                for (l, &m) in self.free_th.iter().enumerate() {
                    temp[m] += s * delta[nfe + l];
                }
            };
            let mut trial_phi = phi.clone();
            let mut trial_temp = temp.clone();
            update(&mut trial_phi, &mut trial_temp, scale);
            let evaluated = loop {
                match self.residual(&trial_phi, &trial_temp, state, dt) {
                    Ok(parts) => break parts,
                    Err(Error::NonphysicalResistivity { .. }) if scale > 1e-12 => {
                        scale /= 2.0;
                        trial_phi.copy_from_slice(&phi);
                        trial_temp.copy_from_slice(&temp);
                        update(&mut trial_phi, &mut trial_temp, scale);
                    }
                    Err(e) => return Err(e),
                }
            };
            phi = trial_phi;
            temp = trial_temp;
            (r_el, r_th, msig, gphi) = evaluated;
            iters += 1;
            history.push((norm(&r_el), norm(&r_th)));
            current = history[iters].0.max(history[iters].1);
        }

        let q_el = self.q_el_of(&gphi, &msig);
        let meta = StepMeta {
            newton_iters: iters,
            residual: if norm0 > 0.0 { current / norm0 } else { 0.0 },
            residual_history: history,
        };
        Ok((State { phi, temp }, q_el, meta))
    }
}

/// Nodal stiffness matrix from per-edge diagonal entries plus lumped
/// two-node stamps: the assembled `S diag S^T` without forming the product.
fn edge_laplacian(
    grid: &StaggeredGrid,
    edge_diag: &[f64],
    extra: &[(usize, usize, f64)],
) -> CsrMatrix {
    let n = grid.num_nodes();
    let mut b = TripletBuilder::new(n, n);
    for e in grid.real_edges() {
        let v = edge_diag[e];
        if v == 0.0 {
            continue;
        }
        let (i, j) = grid.edge_endpoints(e).expect("real edge");
        b.push(i, i, v);
        b.push(j, j, v);
        b.push(i, j, -v);
        b.push(j, i, -v);
    }
    for &(i, j, v) in extra {
        if v == 0.0 {
            continue;
        }
        b.push(i, i, v);
        b.push(j, j, v);
        b.push(i, j, -v);
        b.push(j, i, -v);
    }
    b.build()
}

/// Solve `A x = rhs` with Dirichlet rows eliminated symmetrically: fixed
/// entries of `x` are inputs, free entries are outputs. Returns the relative
/// residual of the reduced solve.
fn solve_eliminated(
    a: &CsrMatrix,
    free: &[usize],
    dirichlet: &[bool],
    rhs: &[f64],
    x: &mut [f64],
) -> Result<f64> {
    let mut b = Vec::with_capacity(free.len());
    for &r in free {
        let (cols, vals) = a.row(r);
        let mut v = rhs[r];
        for (&c, &av) in cols.iter().zip(vals) {
            if dirichlet[c] {
                v -= av * x[c];
            }
        }
        b.push(v);
    }
    let a_ff = a.submatrix(free, free);
    let sol = a_ff.lu_solve(&b)?;
    let mut residual = 0.0f64;
    let mut scale = 0.0f64;
    let ax = a_ff.mul_vec(&sol)?;
    for i in 0..free.len() {
        residual = residual.max((ax[i] - b[i]).abs());
        scale = scale.max(b[i].abs());
    }
    for (l, &m) in free.iter().enumerate() {
        x[m] = sol[l];
    }
    Ok(if scale > 0.0 { residual / scale } else { residual })
}
