//! Modified nodal analysis of parsed netlists.
//!
//! Unknowns are the potentials of every node referenced by a card (ground
//! excluded, ordered by name) followed by one branch current per voltage
//! source (in card order). Each transient step solves the implicit system
//! with damped Newton iterations using the analytic Jacobian, including the
//! voltage-dependent terms of behavioral cards.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netlist::expr::Expression;
use crate::netlist::{Element, Netlist, NodeDomain, GROUND};
use crate::sparse::{CsrMatrix, TripletBuilder};
use crate::trace::{StepMeta, TransientTrace};
use crate::waveform::Waveform;

/// Time integration scheme for the differential (capacitive) part.
/// Constraint rows are always enforced at the new time level, and the
/// first trapezoidal step falls back to backward Euler because the initial
/// source currents are not part of the state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Integrator {
    #[serde(rename = "be")]
    BackwardEuler,
    #[serde(rename = "trap")]
    Trapezoidal,
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: 1e-10,
            max_iter: 25,
        }
    }
}

/// What an unknown of the assembled system represents.
#[derive(Debug, Clone, PartialEq)]
pub enum UnknownMeta {
    Node {
        name: String,
        domain: NodeDomain,
        grid_index: Option<usize>,
    },
    SourceCurrent {
        element: String,
    },
}

/// Expression with node references resolved to unknown indices
/// (`None` = ground). Evaluation also returns the gradient with respect to
/// the unknowns for Jacobian assembly.
#[derive(Debug, Clone)]
enum CompiledExpr {
    Num(f64),
    Voltage(Option<usize>),
    Diff(Option<usize>, Option<usize>),
    Neg(Box<CompiledExpr>),
    Add(Box<CompiledExpr>, Box<CompiledExpr>),
    Sub(Box<CompiledExpr>, Box<CompiledExpr>),
    Mul(Box<CompiledExpr>, Box<CompiledExpr>),
    Div(Box<CompiledExpr>, Box<CompiledExpr>),
}

/// Sparse gradient accumulation: `ca * a + cb * b` with both inputs sorted
/// by unknown index.
fn merge_grads(
    a: &[(usize, f64)],
    ca: f64,
    b: &[(usize, f64)],
    cb: f64,
) -> Vec<(usize, f64)> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        match (a.get(i), b.get(j)) {
            (Some(&(ia, va)), Some(&(ib, vb))) => {
                if ia == ib {
                    out.push((ia, ca * va + cb * vb));
                    i += 1;
                    j += 1;
                } else if ia < ib {
                    out.push((ia, ca * va));
                    i += 1;
                } else {
                    out.push((ib, cb * vb));
                    j += 1;
                }
            }
            (Some(&(ia, va)), None) => {
                out.push((ia, ca * va));
                i += 1;
            }
            (None, Some(&(ib, vb))) => {
                out.push((ib, cb * vb));
                j += 1;
            }
            (None, None) => unreachable!(),
        }
    }
    out
}

impl CompiledExpr {
    fn compile(
        expr: &Expression,
        resolve: &dyn Fn(&str) -> Result<Option<usize>>,
    ) -> Result<CompiledExpr> {
        Ok(match expr {
            Expression::Number(v) => CompiledExpr::Num(*v),
            Expression::NodeVoltage(n) => CompiledExpr::Voltage(resolve(n)?),
            Expression::VoltageDiff(a, b) => CompiledExpr::Diff(resolve(a)?, resolve(b)?),
            Expression::Neg(x) => CompiledExpr::Neg(Box::new(Self::compile(x, resolve)?)),
            Expression::Add(a, b) => CompiledExpr::Add(
                Box::new(Self::compile(a, resolve)?),
                Box::new(Self::compile(b, resolve)?),
            ),
            Expression::Sub(a, b) => CompiledExpr::Sub(
                Box::new(Self::compile(a, resolve)?),
                Box::new(Self::compile(b, resolve)?),
            ),
            Expression::Mul(a, b) => CompiledExpr::Mul(
                Box::new(Self::compile(a, resolve)?),
                Box::new(Self::compile(b, resolve)?),
            ),
            Expression::Div(a, b) => CompiledExpr::Div(
                Box::new(Self::compile(a, resolve)?),
                Box::new(Self::compile(b, resolve)?),
            ),
        })
    }

    fn eval(&self, x: &[f64]) -> f64 {
        match self {
            CompiledExpr::Num(v) => *v,
            CompiledExpr::Voltage(i) => i.map_or(0.0, |i| x[i]),
            CompiledExpr::Diff(a, b) => a.map_or(0.0, |i| x[i]) - b.map_or(0.0, |i| x[i]),
            CompiledExpr::Neg(e) => -e.eval(x),
            CompiledExpr::Add(a, b) => a.eval(x) + b.eval(x),
            CompiledExpr::Sub(a, b) => a.eval(x) - b.eval(x),
            CompiledExpr::Mul(a, b) => a.eval(x) * b.eval(x),
            CompiledExpr::Div(a, b) => a.eval(x) / b.eval(x),
        }
    }

    /// Value and sparse gradient with respect to the unknown vector.
    fn eval_grad(&self, x: &[f64]) -> (f64, Vec<(usize, f64)>) {
        match self {
            CompiledExpr::Num(v) => (*v, Vec::new()),
            CompiledExpr::Voltage(i) => match i {
                Some(i) => (x[*i], vec![(*i, 1.0)]),
                None => (0.0, Vec::new()),
            },
            CompiledExpr::Diff(a, b) => {
                let ga: Vec<(usize, f64)> = a.map_or_else(Vec::new, |i| vec![(i, 1.0)]);
                let gb: Vec<(usize, f64)> = b.map_or_else(Vec::new, |i| vec![(i, 1.0)]);
                let va = a.map_or(0.0, |i| x[i]);
                let vb = b.map_or(0.0, |i| x[i]);
                (va - vb, merge_grads(&ga, 1.0, &gb, -1.0))
            }
            CompiledExpr::Neg(e) => {
                let (v, g) = e.eval_grad(x);
                (-v, merge_grads(&g, -1.0, &[], 0.0))
            }
            CompiledExpr::Add(a, b) => {
                let (va, ga) = a.eval_grad(x);
                let (vb, gb) = b.eval_grad(x);
                (va + vb, merge_grads(&ga, 1.0, &gb, 1.0))
            }
            CompiledExpr::Sub(a, b) => {
                let (va, ga) = a.eval_grad(x);
                let (vb, gb) = b.eval_grad(x);
                (va - vb, merge_grads(&ga, 1.0, &gb, -1.0))
            }
            CompiledExpr::Mul(a, b) => {
                let (va, ga) = a.eval_grad(x);
                let (vb, gb) = b.eval_grad(x);
                (va * vb, merge_grads(&ga, vb, &gb, va))
            }
            CompiledExpr::Div(a, b) => {
                let (va, ga) = a.eval_grad(x);
                let (vb, gb) = b.eval_grad(x);
                (va / vb, merge_grads(&ga, 1.0 / vb, &gb, -va / (vb * vb)))
            }
        }
    }
}

type OptIdx = Option<usize>;

#[derive(Debug, Clone)]
struct BehavioralStamp {
    name: String,
    a: OptIdx,
    b: OptIdx,
    expr: CompiledExpr,
}

/// Assembled MNA system, independent of time step and integrator.
#[derive(Debug, Clone)]
pub struct MnaSystem {
    dim: usize,
    num_node_unknowns: usize,
    node_index: BTreeMap<String, usize>,
    unknown_meta: Vec<UnknownMeta>,
    resistors: Vec<(OptIdx, OptIdx, f64)>,
    vsources: Vec<(OptIdx, OptIdx, usize, Waveform)>,
    isources: Vec<(OptIdx, OptIdx, Waveform)>,
    beh_resistors: Vec<BehavioralStamp>,
    beh_currents: Vec<BehavioralStamp>,
    c_matrix: CsrMatrix,
    warnings: Vec<String>,
    /// Behavioral sources injecting into thermal grid nodes, used to read
    /// back the nodal Joule losses: (grid node, beh_currents index).
    thermal_loss_sources: Vec<(usize, usize)>,
    grid_node_count: usize,
}

/// Raw transient solution: one state vector per time point, including the
/// initial state at t = 0.
#[derive(Debug, Clone)]
pub struct MnaTransient {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub step_meta: Vec<StepMeta>,
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, i: usize) -> usize {
        if self.parent[i] != i {
            let root = self.find(self.parent[i]);
            self.parent[i] = root;
        }
        self.parent[i]
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra] = rb;
        }
    }
}

impl MnaSystem {
    pub fn assemble(netlist: &Netlist) -> Result<MnaSystem> {
        netlist.validate()?;

        let mut referenced: BTreeSet<&str> = BTreeSet::new();
        for el in &netlist.elements {
            let (a, b) = el.terminals();
            referenced.insert(a);
            referenced.insert(b);
        }
        if !referenced.contains(GROUND) {
            return Err(Error::MissingGround);
        }

        let mut node_index: BTreeMap<String, usize> = BTreeMap::new();
        let mut unknown_meta: Vec<UnknownMeta> = Vec::new();
        for name in referenced.iter().filter(|&&n| n != GROUND) {
            let info = netlist
                .node_table
                .get(*name)
                .expect("validated: node in table");
            node_index.insert(name.to_string(), node_index.len());
            unknown_meta.push(UnknownMeta::Node {
                name: name.to_string(),
                domain: info.domain,
                grid_index: info.grid_index,
            });
        }
        let num_node_unknowns = node_index.len();

        let num_vsrc = netlist
            .elements
            .iter()
            .filter(|el| matches!(el, Element::VoltageSource { .. }))
            .count();
        let dim = num_node_unknowns + num_vsrc;

        let lookup = |name: &str| -> OptIdx {
            if name == GROUND {
                None
            } else {
                Some(node_index[name])
            }
        };
        let resolve = |name: &str| -> Result<OptIdx> {
            if name == GROUND {
                Ok(None)
            } else {
                node_index.get(name).map(|&i| Some(i)).ok_or_else(|| {
                    Error::Scenario(format!(
                        "expression references node {name} that no card connects"
                    ))
                })
            }
        };

        let mut resistors = Vec::new();
        let mut vsources = Vec::new();
        let mut isources = Vec::new();
        let mut beh_resistors = Vec::new();
        let mut beh_currents = Vec::new();
        let mut cap_triplets = TripletBuilder::new(dim, dim);
        let mut thermal_loss_sources = Vec::new();
        let mut next_vsrc_row = num_node_unknowns;

        for el in &netlist.elements {
            let (a_name, b_name) = el.terminals();
            let a = lookup(a_name);
            let b = lookup(b_name);
            match el {
                Element::Resistor { name, ohms, .. } => {
                    if !(ohms.is_finite() && *ohms > 0.0) {
                        return Err(Error::NonphysicalBranch {
                            name: name.clone(),
                            value: *ohms,
                        });
                    }
                    resistors.push((a, b, 1.0 / ohms));
                }
                Element::Capacitor { name, farads, .. } => {
                    if !(farads.is_finite() && *farads >= 0.0) {
                        return Err(Error::NonphysicalBranch {
                            name: name.clone(),
                            value: *farads,
                        });
                    }
                    if let Some(i) = a {
                        cap_triplets.push(i, i, *farads);
                    }
                    if let Some(j) = b {
                        cap_triplets.push(j, j, *farads);
                    }
                    if let (Some(i), Some(j)) = (a, b) {
                        cap_triplets.push(i, j, -*farads);
                        cap_triplets.push(j, i, -*farads);
                    }
                }
                Element::VoltageSource { waveform, .. } => {
                    vsources.push((a, b, next_vsrc_row, waveform.clone()));
                    unknown_meta.push(UnknownMeta::SourceCurrent {
                        element: el.name().to_string(),
                    });
                    next_vsrc_row += 1;
                }
                Element::CurrentSource { waveform, .. } => {
                    isources.push((a, b, waveform.clone()));
                }
                Element::BehavioralResistor { name, ohms_expr, .. } => {
                    beh_resistors.push(BehavioralStamp {
                        name: name.clone(),
                        a,
                        b,
                        expr: CompiledExpr::compile(ohms_expr, &resolve)?,
                    });
                }
                Element::BehavioralCurrent { name, amps_expr, .. } => {
                    if a.is_none() {
                        if let Some(info) = netlist.node_table.get(b_name) {
                            if info.domain == NodeDomain::Thermal {
                                if let Some(g) = info.grid_index {
                                    thermal_loss_sources.push((g, beh_currents.len()));
                                }
                            }
                        }
                    }
                    beh_currents.push(BehavioralStamp {
                        name: name.clone(),
                        a,
                        b,
                        expr: CompiledExpr::compile(amps_expr, &resolve)?,
                    });
                }
            }
        }

        // Connectivity check: everything should reach ground through some
        // card, otherwise the potential of that subnetwork is undefined.
        let mut uf = UnionFind::new(num_node_unknowns + 1);
        let ground_id = num_node_unknowns;
        for el in &netlist.elements {
            let (a_name, b_name) = el.terminals();
            let ia = lookup(a_name).unwrap_or(ground_id);
            let ib = lookup(b_name).unwrap_or(ground_id);
            uf.union(ia, ib);
        }
        let ground_root = uf.find(ground_id);
        let mut floating: Vec<&str> = Vec::new();
        for (name, &i) in &node_index {
            if uf.find(i) != ground_root {
                floating.push(name);
            }
        }
        let mut warnings = Vec::new();
        if !floating.is_empty() {
            warnings.push(format!(
                "floating subnetwork with no path to ground: {}",
                floating.join(", ")
            ));
        }

        let grid_node_count = netlist
            .node_table
            .values()
            .filter_map(|info| info.grid_index)
            .map(|i| i + 1)
            .max()
            .unwrap_or(0);

        Ok(MnaSystem {
            dim,
            num_node_unknowns,
            node_index,
            unknown_meta,
            resistors,
            vsources,
            isources,
            beh_resistors,
            beh_currents,
            c_matrix: cap_triplets.build(),
            warnings,
            thermal_loss_sources,
            grid_node_count,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_node_unknowns(&self) -> usize {
        self.num_node_unknowns
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn unknown_meta(&self) -> &[UnknownMeta] {
        &self.unknown_meta
    }

    /// Unknown index of a node by name; `None` for ground or unknown names.
    pub fn node_unknown(&self, name: &str) -> Option<usize> {
        self.node_index.get(name).copied()
    }

    /// Value of a named node at a given time index of a solution.
    pub fn node_value(&self, trans: &MnaTransient, name: &str, step: usize) -> Option<f64> {
        if name == GROUND {
            return Some(0.0);
        }
        let idx = self.node_unknown(name)?;
        trans.states.get(step).map(|x| x[idx])
    }

    /// Branch current of a named voltage source at a given time index.
    pub fn source_current(&self, trans: &MnaTransient, name: &str, step: usize) -> Option<f64> {
        let row = self.unknown_meta.iter().position(
            |m| matches!(m, UnknownMeta::SourceCurrent { element } if element == name),
        )?;
        trans.states.get(step).map(|x| x[row])
    }

    /// Conductance and capacitance matrices of the system linearized at a
    /// frozen state: behavioral resistors contribute their conductance at
    /// `x`, sources contribute only their constraint rows and columns.
    pub fn linear_matrices(&self, x: &[f64]) -> Result<(CsrMatrix, CsrMatrix)> {
        if x.len() != self.dim {
            return Err(Error::Shape {
                expected: self.dim,
                got: x.len(),
            });
        }
        let mut g = TripletBuilder::new(self.dim, self.dim);
        for &(a, b, cond) in &self.resistors {
            stamp_conductance(&mut g, a, b, cond);
        }
        for s in &self.beh_resistors {
            let r = s.expr.eval(x);
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::NonphysicalBranch {
                    name: s.name.clone(),
                    value: r,
                });
            }
            stamp_conductance(&mut g, s.a, s.b, 1.0 / r);
        }
        for &(a, b, row, _) in &self.vsources {
            if let Some(i) = a {
                g.push(row, i, 1.0);
                g.push(i, row, 1.0);
            }
            if let Some(j) = b {
                g.push(row, j, -1.0);
                g.push(j, row, -1.0);
            }
        }
        Ok((g.build(), self.c_matrix.clone()))
    }

    /// Algebraic nodal currents at state `x` and time `t`: the sum of all
    /// branch currents leaving each node (length `dim`, source rows zero).
    pub fn node_currents(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let mut f = vec![0.0; self.dim];
        let add = |a: OptIdx, b: OptIdx, i: f64, f: &mut Vec<f64>| {
            if let Some(n) = a {
                f[n] += i;
            }
            if let Some(n) = b {
                f[n] -= i;
            }
        };
        for &(a, b, g) in &self.resistors {
            let va = a.map_or(0.0, |i| x[i]);
            let vb = b.map_or(0.0, |i| x[i]);
            add(a, b, g * (va - vb), &mut f);
        }
        for s in &self.beh_resistors {
            let r = s.expr.eval(x);
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::NonphysicalBranch {
                    name: s.name.clone(),
                    value: r,
                });
            }
            let va = s.a.map_or(0.0, |i| x[i]);
            let vb = s.b.map_or(0.0, |i| x[i]);
            add(s.a, s.b, (va - vb) / r, &mut f);
        }
        for s in &self.beh_currents {
            let i = s.expr.eval(x);
            if !i.is_finite() {
                return Err(Error::NonphysicalBranch {
                    name: s.name.clone(),
                    value: i,
                });
            }
            add(s.a, s.b, i, &mut f);
        }
        for (a, b, w) in self.isources.iter().map(|(a, b, w)| (*a, *b, w)) {
            add(a, b, w.eval(t), &mut f);
        }
        for &(a, b, row, _) in &self.vsources {
            add(a, b, x[row], &mut f);
        }
        Ok(f)
    }

    /// Source constraint residuals v(a) - v(b) - V(t) on the extension rows.
    fn constraint_residuals(&self, x: &[f64], t: f64, out: &mut [f64]) {
        for &(a, b, row, ref w) in &self.vsources {
            let va = a.map_or(0.0, |i| x[i]);
            let vb = b.map_or(0.0, |i| x[i]);
            out[row] = va - vb - w.eval(t);
        }
    }

    /// Full residual of one implicit step: differential rows use the
    /// theta-weighted algebraic currents, constraint rows are enforced at
    /// the new time level.
    pub fn step_residual(
        &self,
        x: &[f64],
        x_prev: &[f64],
        f_prev: &[f64],
        t: f64,
        dt: f64,
        theta: f64,
    ) -> Result<Vec<f64>> {
        let f_new = self.node_currents(x, t)?;
        let mut r = vec![0.0; self.dim];
        for (row, col, v) in self.c_matrix.iter() {
            r[row] += v * (x[col] - x_prev[col]) / dt;
        }
        for i in 0..self.num_node_unknowns {
            r[i] += theta * f_new[i] + (1.0 - theta) * f_prev[i];
        }
        self.constraint_residuals(x, t, &mut r[..]);
        Ok(r)
    }

    /// Analytic Jacobian of the step residual at `x`.
    pub fn step_jacobian(&self, x: &[f64], dt: f64, theta: f64) -> Result<CsrMatrix> {
        let mut j = TripletBuilder::new(self.dim, self.dim);
        for (row, col, v) in self.c_matrix.iter() {
            j.push(row, col, v / dt);
        }
        for &(a, b, g) in &self.resistors {
            stamp_conductance_scaled(&mut j, a, b, g, theta);
        }
        for s in &self.beh_resistors {
            let (r, grad) = s.expr.eval_grad(x);
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::NonphysicalBranch {
                    name: s.name.clone(),
                    value: r,
                });
            }
            let va = s.a.map_or(0.0, |i| x[i]);
            let vb = s.b.map_or(0.0, |i| x[i]);
            let d = va - vb;
            stamp_conductance_scaled(&mut j, s.a, s.b, 1.0 / r, theta);
            // d(i)/dx_k includes the resistance dependence -d/r^2 dr/dx_k.
            let coeff = -theta * d / (r * r);
            for &(k, dr) in &grad {
                if let Some(n) = s.a {
                    j.push(n, k, coeff * dr);
                }
                if let Some(n) = s.b {
                    j.push(n, k, -coeff * dr);
                }
            }
        }
        for s in &self.beh_currents {
            let (_, grad) = s.expr.eval_grad(x);
            for &(k, di) in &grad {
                if let Some(n) = s.a {
                    j.push(n, k, theta * di);
                }
                if let Some(n) = s.b {
                    j.push(n, k, -theta * di);
                }
            }
        }
        for &(a, b, row, _) in &self.vsources {
            if let Some(i) = a {
                j.push(row, i, 1.0);
                j.push(i, row, theta);
            }
            if let Some(i) = b {
                j.push(row, i, -1.0);
                j.push(i, row, -theta);
            }
        }
        Ok(j.build())
    }

    /// Infinity norms of the node-row and constraint-row parts.
    fn split_norms(&self, r: &[f64]) -> (f64, f64) {
        let node = r[..self.num_node_unknowns]
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let alg = r[self.num_node_unknowns..]
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        (node, alg)
    }

    /// Initial state: source-pinned nodes start on their waveform value at
    /// t = 0, everything else at zero.
    fn initial_state(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.dim];
        for &(a, b, _, ref w) in &self.vsources {
            match (a, b) {
                (Some(i), None) => x[i] = w.eval(0.0),
                (None, Some(j)) => x[j] = -w.eval(0.0),
                _ => {}
            }
        }
        x
    }

    pub fn solve_transient(
        &self,
        dt: f64,
        tstop: f64,
        integrator: Integrator,
        newton: &NewtonOptions,
    ) -> Result<MnaTransient> {
        if !(dt.is_finite() && dt > 0.0 && tstop.is_finite() && tstop > 0.0) {
            return Err(Error::Scenario(
                "transient analysis needs positive dt and tstop".into(),
            ));
        }
        let steps = ((tstop / dt).round() as usize).max(1);
        let mut times = Vec::with_capacity(steps + 1);
        let mut states = Vec::with_capacity(steps + 1);
        let mut step_meta = Vec::with_capacity(steps + 1);

        let mut x = self.initial_state();
        times.push(0.0);
        states.push(x.clone());
        step_meta.push(StepMeta::default());

        // Algebraic currents at the accepted state, reused as the explicit
        // half of the next trapezoidal step.
        let mut f_prev = self.node_currents(&x, 0.0)?;

        for k in 1..=steps {
            let t = k as f64 * dt;
            let theta = match integrator {
                Integrator::BackwardEuler => 1.0,
                Integrator::Trapezoidal if k == 1 => 1.0,
                Integrator::Trapezoidal => 0.5,
            };
            let x_prev = x.clone();

            let mut r = self.step_residual(&x, &x_prev, &f_prev, t, dt, theta)?;
            let (mut rn, mut ra) = self.split_norms(&r);
            let mut norm = rn.max(ra);
            let norm0 = norm.max(f64::MIN_POSITIVE);
            let target = newton.tol * norm0;
            // Residual evaluation cancels terms of magnitude |J||x|, so
            // anything below that times machine epsilon (with headroom) is
            // floating-point noise, not a meaningful defect.
            let mut noise_floor = 0.0;
            let mut history = vec![(rn, ra)];
            let mut iters = 0;

            while norm > target && norm > noise_floor {
                if iters >= newton.max_iter {
                    return Err(Error::NoConvergence {
                        t,
                        residual: norm / norm0,
                        iterations: iters,
                    });
                }
                let jac = self.step_jacobian(&x, dt, theta)?;
                let jmax = jac.iter().map(|(_, _, v)| v.abs()).fold(0.0, f64::max);
                let xmax = x.iter().fold(1.0_f64, |a, &b| a.max(b.abs()));
                noise_floor = 100.0 * f64::EPSILON * jmax * xmax;
                let delta = jac.lu_solve(&r)?;
                let mut lambda = 1.0;
                loop {
                    let x_trial: Vec<f64> = x
                        .iter()
                        .zip(&delta)
                        .map(|(&xi, &di)| xi - lambda * di)
                        .collect();
                    match self.step_residual(&x_trial, &x_prev, &f_prev, t, dt, theta) {
                        Ok(r_trial) => {
                            let (tn, ta) = self.split_norms(&r_trial);
                            let trial_norm = tn.max(ta);
                            if trial_norm.is_finite() {
                                x = x_trial;
                                r = r_trial;
                                rn = tn;
                                ra = ta;
                                norm = trial_norm;
                                break;
                            }
                            lambda *= 0.5;
                        }
                        Err(Error::NonphysicalBranch { .. }) => {
                            lambda *= 0.5;
                        }
                        Err(e) => return Err(e),
                    }
                    if lambda < 1e-12 {
                        return Err(Error::NoConvergence {
                            t,
                            residual: norm / norm0,
                            iterations: iters,
                        });
                    }
                }
                iters += 1;
                history.push((rn, ra));
            }

            f_prev = self.node_currents(&x, t)?;
            times.push(t);
            states.push(x.clone());
            step_meta.push(StepMeta {
                newton_iters: iters,
                residual: norm / norm0,
                residual_history: history,
            });
        }

        Ok(MnaTransient {
            times,
            states,
            step_meta,
        })
    }

    /// Map a solution back onto grid node series. Nodes never referenced by
    /// a card stay at zero.
    pub fn grid_trace(&self, trans: &MnaTransient) -> TransientTrace {
        let n = self.grid_node_count;
        let mut elec: Vec<(usize, usize)> = Vec::new();
        let mut therm: Vec<(usize, usize)> = Vec::new();
        for (idx, meta) in self.unknown_meta.iter().enumerate() {
            if let UnknownMeta::Node {
                domain,
                grid_index: Some(g),
                ..
            } = meta
            {
                match domain {
                    NodeDomain::Electrical => elec.push((idx, *g)),
                    NodeDomain::Thermal => therm.push((idx, *g)),
                    NodeDomain::Ground => {}
                }
            }
        }
        let mut phi = Vec::with_capacity(trans.states.len());
        let mut temperature = Vec::with_capacity(trans.states.len());
        let mut q_el = Vec::with_capacity(trans.states.len());
        for x in &trans.states {
            let mut p = vec![0.0; n];
            let mut tt = vec![0.0; n];
            let mut q = vec![0.0; n];
            for &(idx, g) in &elec {
                p[g] = x[idx];
            }
            for &(idx, g) in &therm {
                tt[g] = x[idx];
            }
            for &(g, k) in &self.thermal_loss_sources {
                q[g] += self.beh_currents[k].expr.eval(x);
            }
            phi.push(p);
            temperature.push(tt);
            q_el.push(q);
        }
        TransientTrace {
            times: trans.times.clone(),
            phi,
            temperature,
            q_el,
            step_meta: trans.step_meta.clone(),
        }
    }
}

fn stamp_conductance(t: &mut TripletBuilder, a: OptIdx, b: OptIdx, g: f64) {
    stamp_conductance_scaled(t, a, b, g, 1.0);
}

fn stamp_conductance_scaled(t: &mut TripletBuilder, a: OptIdx, b: OptIdx, g: f64, scale: f64) {
    let g = g * scale;
    if let Some(i) = a {
        t.push(i, i, g);
    }
    if let Some(j) = b {
        t.push(j, j, g);
    }
    if let (Some(i), Some(j)) = (a, b) {
        t.push(i, j, -g);
        t.push(j, i, -g);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::parse;

    fn solve_text(
        text: &str,
        dt: f64,
        tstop: f64,
        integrator: Integrator,
    ) -> (MnaSystem, MnaTransient) {
        let net = parse(text).unwrap();
        let sys = MnaSystem::assemble(&net).unwrap();
        let trans = sys
            .solve_transient(dt, tstop, integrator, &NewtonOptions::default())
            .unwrap();
        (sys, trans)
    }

    #[test]
    fn resistive_divider_dc() {
        let text = "divider\nV1 in 0 DC 1e0\nR1 in mid 1e3\nR2 mid 0 1e3\n.END\n";
        let (sys, trans) = solve_text(text, 1.0, 1.0, Integrator::BackwardEuler);
        let last = trans.times.len() - 1;
        let v_mid = sys.node_value(&trans, "mid", last).unwrap();
        assert!((v_mid - 0.5).abs() < 1e-12);
        let i_v1 = sys.source_current(&trans, "V1", last).unwrap();
        assert!((i_v1 + 0.5e-3).abs() < 1e-15);
    }

    #[test]
    fn single_resistor_source_current() {
        let text = "one\nV1 a 0 DC 1e0\nR1 a 0 1e3\n.END\n";
        let (sys, trans) = solve_text(text, 1.0, 1.0, Integrator::BackwardEuler);
        let v_a = sys.node_value(&trans, "a", 1).unwrap();
        let i_v1 = sys.source_current(&trans, "V1", 1).unwrap();
        assert!((v_a - 1.0).abs() < 1e-14);
        assert!((i_v1 + 1e-3).abs() < 1e-15, "i_v1 = {i_v1}");
    }

    #[test]
    fn rc_step_response_be_accuracy() {
        // tau = 1 us, charged through 1 kOhm from a 1 V step.
        let text = "rc\nV1 in 0 DC 1e0\nR1 in out 1e3\nC1 out 0 1e-9\n.END\n";
        let (sys, trans) = solve_text(text, 1e-8, 3e-6, Integrator::BackwardEuler);
        let tau = 1e-6;
        let mut max_err = 0.0f64;
        for (k, &t) in trans.times.iter().enumerate().skip(1) {
            let exact = 1.0 - (-t / tau).exp();
            let v = sys.node_value(&trans, "out", k).unwrap();
            max_err = max_err.max((v - exact).abs());
        }
        assert!(max_err < 2e-3, "max error {max_err:.3e}");
    }

    #[test]
    fn trapezoidal_beats_backward_euler_on_rc() {
        let text = "rc\nV1 in 0 DC 1e0\nR1 in out 1e3\nC1 out 0 1e-9\n.END\n";
        let tau = 1e-6;
        let err = |integ: Integrator| {
            let (sys, trans) = solve_text(text, 1e-8, 3e-6, integ);
            let mut max_err = 0.0f64;
            for (k, &t) in trans.times.iter().enumerate().skip(1) {
                let exact = 1.0 - (-t / tau).exp();
                let v = sys.node_value(&trans, "out", k).unwrap();
                max_err = max_err.max((v - exact).abs());
            }
            max_err
        };
        let be = err(Integrator::BackwardEuler);
        let trap = err(Integrator::Trapezoidal);
        assert!(
            trap < be / 10.0,
            "trapezoidal {trap:.3e} not clearly better than backward Euler {be:.3e}"
        );
    }

    #[test]
    fn linear_steps_converge_in_one_iteration() {
        let text = "rc\nV1 in 0 DC 1e0\nR1 in out 1e3\nC1 out 0 1e-9\n.END\n";
        let (_, trans) = solve_text(text, 1e-7, 1e-6, Integrator::BackwardEuler);
        for meta in &trans.step_meta[1..] {
            assert_eq!(meta.newton_iters, 1);
        }
    }

    #[test]
    fn incidence_product_matches_stamps() {
        // For a source-free R/C network the nodal matrices factor through
        // the branch incidence: G = A diag(g) A^T, C likewise.
        let text = "rc\nR1 a b 2e0\nR2 b 0 4e0\nC1 a 0 3e0\nC2 a b 5e0\nI1 0 a DC 1e0\n.END\n";
        let net = parse(text).unwrap();
        let sys = MnaSystem::assemble(&net).unwrap();
        let x = vec![0.0; sys.dim()];
        let (g, c) = sys.linear_matrices(&x).unwrap();
        // Unknowns sorted by name: a = 0, b = 1.
        let a_r = [[1.0, 0.0], [-1.0, 1.0]]; // rows: nodes, cols: R branches
        let g_b = [0.5, 0.25];
        let a_c = [[1.0, 1.0], [0.0, -1.0]];
        let c_b = [3.0, 5.0];
        for i in 0..2 {
            for j in 0..2 {
                let mut gij = 0.0;
                let mut cij = 0.0;
                for k in 0..2 {
                    gij += a_r[i][k] * g_b[k] * a_r[j][k];
                    cij += a_c[i][k] * c_b[k] * a_c[j][k];
                }
                assert!((g.get(i, j) - gij).abs() < 1e-15);
                assert!((c.get(i, j) - cij).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn behavioral_jacobian_matches_finite_differences() {
        let text = "beh\nV1 n1 0 DC 2e0\nBR1 n1 n2 R=1e0+5e-1*V(t1)\nR2 n2 0 2e0\nBI1 0 t1 I=V(n2)*V(n2)\nRT1 t1 0 1e0\nCT1 0 t1 1e-6\n.END\n";
        let net = parse(text).unwrap();
        let sys = MnaSystem::assemble(&net).unwrap();
        let dt = 1e-7;
        let theta = 1.0;
        let x: Vec<f64> = (0..sys.dim())
            .map(|i| 0.3 + 0.1 * i as f64)
            .collect();
        let x_prev = vec![0.0; sys.dim()];
        let f_prev = vec![0.0; sys.dim()];
        let t = dt;
        let jac = sys.step_jacobian(&x, dt, theta).unwrap();
        let h = 1e-7;
        for k in 0..sys.dim() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            let rp = sys.step_residual(&xp, &x_prev, &f_prev, t, dt, theta).unwrap();
            let rm = sys.step_residual(&xm, &x_prev, &f_prev, t, dt, theta).unwrap();
            for i in 0..sys.dim() {
                let fd = (rp[i] - rm[i]) / (2.0 * h);
                let an = jac.get(i, k);
                let scale = 1.0 + fd.abs().max(an.abs());
                assert!(
                    (fd - an).abs() / scale < 1e-5,
                    "J[{i}][{k}]: fd {fd:.6e} vs analytic {an:.6e}"
                );
            }
        }
    }

    #[test]
    fn floating_subnetwork_warns_and_fails_to_solve() {
        let text = "float\nV1 c 0 DC 1e0\nR2 c 0 1e0\nR1 a b 1e0\n.END\n";
        let net = parse(text).unwrap();
        let sys = MnaSystem::assemble(&net).unwrap();
        assert_eq!(sys.warnings().len(), 1);
        assert!(sys.warnings()[0].contains('a'));
        let err = sys
            .solve_transient(1.0, 1.0, Integrator::BackwardEuler, &NewtonOptions::default())
            .unwrap_err();
        assert!(matches!(err, Error::SingularSystem(_)), "got {err:?}");
    }

    #[test]
    fn missing_ground_is_rejected() {
        let text = "no gnd\nV1 a b DC 1e0\nR1 a b 1e0\n.END\n";
        let net = parse(text).unwrap();
        match MnaSystem::assemble(&net) {
            Err(Error::MissingGround) => {}
            other => panic!("expected MissingGround, got {other:?}"),
        }
    }

    #[test]
    fn sin_source_follows_waveform() {
        let text = "sin\nV1 a 0 SIN(0e0 1e0 1e3)\nR1 a 0 1e0\n.END\n";
        let (sys, trans) = solve_text(text, 1e-5, 1e-3, Integrator::BackwardEuler);
        for (k, &t) in trans.times.iter().enumerate() {
            let expected = (2.0 * std::f64::consts::PI * 1e3 * t).sin();
            let v = sys.node_value(&trans, "a", k).unwrap();
            assert!((v - expected).abs() < 1e-12, "t = {t}: {v} vs {expected}");
        }
    }

    #[test]
    fn grid_trace_maps_nodes_and_losses() {
        let text = "map\nV1 E000001 0 DC 1e0\nRE000001 E000001 E000002 1e0\nRE000002 E000002 0 1e0\nBIQ000001 0 T000001 I=V(E000001,E000002)*V(E000001,E000002)/1e0\nRT000001 T000001 0 1e3\nCT000001 0 T000001 1e-3\n.END\n";
        let (sys, trans) = solve_text(text, 1e-2, 1e-1, Integrator::BackwardEuler);
        let trace = sys.grid_trace(&trans);
        assert_eq!(trace.num_nodes(), 2);
        let last = trace.num_steps() - 1;
        assert!((trace.phi[last][0] - 1.0).abs() < 1e-12);
        assert!((trace.phi[last][1] - 0.5).abs() < 1e-12);
        // Loss source injects (0.5)^2 / 1 = 0.25 W into thermal node 1.
        assert!((trace.q_el[last][0] - 0.25).abs() < 1e-9);
        assert!(trace.temperature[last][0] > 0.0);
    }
}
