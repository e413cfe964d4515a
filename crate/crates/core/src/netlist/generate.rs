//! Netlist generation from the assembled field-level system.
//!
//! Cards are generated in a fixed order so that repeated runs produce
//! byte-identical text: per real edge the electrical resistor (plain or
//! behavioral), the edge capacitor, and the thermal resistor; per node the
//! thermal capacitor and the Joule-loss current source; then the Dirichlet
//! voltage pins and the lumped extra branches.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::field::BoundaryConditions;
use crate::grid::StaggeredGrid;
use crate::materials::{MaterialMatrices, MaterialModel};

use super::expr::Expression;
use super::{
    classify_node, electrical_node_name, thermal_node_name, Element, Netlist, Tran, GROUND,
};

/// Half the sum of the two endpoint thermal voltages: the edge mean
/// temperature rise seen by behavioral resistance expressions.
fn mean_temperature_expr(node_a: usize, node_b: usize) -> Expression {
    Expression::number(0.5).mul(
        Expression::voltage(thermal_node_name(node_a))
            .add(Expression::voltage(thermal_node_name(node_b))),
    )
}

/// Conductance expression of a temperature-dependent edge: the sum over
/// touching cells of `w_c sigma_ref_c |A|/|L| / (1 + alpha_c dT)`, with
/// temperature-independent cells folded into one constant term.
fn behavioral_conductance_expr(
    materials: &MaterialModel,
    matrices: &MaterialMatrices,
    edge: usize,
    node_a: usize,
    node_b: usize,
) -> Expression {
    let geom = matrices.geom_factor(edge);
    let mut weights: Vec<(usize, f64)> = matrices
        .sigma_weights(edge)
        .iter()
        .copied()
        .filter(|&(c, _)| materials.sigma_ref()[c] > 0.0)
        .collect();
    weights.sort_by_key(|&(c, _)| c);

    let mut constant = 0.0;
    let mut terms: Vec<Expression> = Vec::new();
    for (c, w) in weights {
        let coeff = w * materials.sigma_ref()[c] * geom;
        let alpha = materials.alpha()[c];
        if alpha == 0.0 {
            constant += coeff;
        } else {
            let tbar = mean_temperature_expr(node_a, node_b);
            let denom = if alpha > 0.0 {
                Expression::number(1.0).add(Expression::number(alpha).mul(tbar))
            } else {
                Expression::number(1.0).sub(Expression::number(-alpha).mul(tbar))
            };
            terms.push(Expression::number(coeff).div(denom));
        }
    }

    let mut iter = terms.into_iter();
    let mut expr = if constant > 0.0 {
        Expression::number(constant)
    } else {
        iter.next().expect("behavioral edge must have a variable term")
    };
    for t in iter {
        expr = expr.add(t);
    }
    expr
}

/// Resistance term of a real conducting edge, shared between the edge card
/// and the loss expressions that divide by it.
enum EdgeResistance {
    Plain(f64),
    Behavioral(Expression),
}

impl EdgeResistance {
    fn as_expression(&self) -> Expression {
        match self {
            EdgeResistance::Plain(ohms) => Expression::number(*ohms),
            EdgeResistance::Behavioral(expr) => expr.clone(),
        }
    }
}

/// Generate the circuit netlist equivalent to the assembled field system.
/// Values are kept at full precision in the returned data model; the 9
/// significant digit quantization happens only at text emission.
pub fn generate_netlist(
    grid: &StaggeredGrid,
    materials: &MaterialModel,
    matrices: &MaterialMatrices,
    bcs: &BoundaryConditions,
    tran: Tran,
    title: &str,
) -> Result<Netlist> {
    bcs.validate(grid)?;
    if bcs.electric_dirichlet.is_empty() {
        return Err(Error::MissingGround);
    }
    if tran.dt <= 0.0 || tran.tstop <= 0.0 || !tran.dt.is_finite() || !tran.tstop.is_finite() {
        return Err(Error::Scenario(
            "transient directive needs positive dt and tstop".into(),
        ));
    }

    let mut elements: Vec<Element> = Vec::new();
    let mut edge_resistance: Vec<Option<EdgeResistance>> = Vec::new();
    edge_resistance.resize_with(grid.num_edges(), || None);

    for e in grid.real_edges() {
        let (a, b) = grid.edge_endpoints(e).expect("real edge has endpoints");
        let ea = electrical_node_name(a);
        let eb = electrical_node_name(b);

        if matrices.edge_conducts(e) {
            let temperature_dependent = matrices
                .sigma_weights(e)
                .iter()
                .any(|&(c, _)| materials.sigma_ref()[c] > 0.0 && materials.alpha()[c] != 0.0);
            if temperature_dependent {
                let g_expr = behavioral_conductance_expr(materials, matrices, e, a, b);
                let r_expr = Expression::number(1.0).div(g_expr);
                elements.push(Element::BehavioralResistor {
                    name: format!("BRE{:06}", e + 1),
                    n_plus: ea.clone(),
                    n_minus: eb.clone(),
                    ohms_expr: r_expr.clone(),
                });
                edge_resistance[e] = Some(EdgeResistance::Behavioral(r_expr));
            } else {
                let ohms = 1.0 / matrices.m_sigma()[e];
                elements.push(Element::Resistor {
                    name: format!("RE{:06}", e + 1),
                    n_plus: ea.clone(),
                    n_minus: eb.clone(),
                    ohms,
                });
                edge_resistance[e] = Some(EdgeResistance::Plain(ohms));
            }
        }

        let farads = matrices.m_eps()[e];
        if farads > 0.0 {
            elements.push(Element::Capacitor {
                name: format!("CE{:06}", e + 1),
                n_plus: ea,
                n_minus: eb,
                farads,
            });
        }

        let g_th = matrices.m_lambda()[e];
        if g_th > 0.0 {
            elements.push(Element::Resistor {
                name: format!("RT{:06}", e + 1),
                n_plus: thermal_node_name(a),
                n_minus: thermal_node_name(b),
                ohms: 1.0 / g_th,
            });
        }
    }

    for m in 0..grid.num_nodes() {
        let c_th = matrices.m_rhoc()[m];
        if c_th > 0.0 {
            elements.push(Element::Capacitor {
                name: format!("CT{:06}", m + 1),
                n_plus: GROUND.to_string(),
                n_minus: thermal_node_name(m),
                farads: c_th,
            });
        }

        // Joule loss injected into the thermal node: half of each incident
        // conducting branch's dissipation, weighted by the dual volume share.
        let mut loss_terms: Vec<Expression> = Vec::new();
        for e in grid.incident_real_edges(m) {
            let Some(resistance) = &edge_resistance[e] else {
                continue;
            };
            let (a, b) = grid.edge_endpoints(e).expect("real edge has endpoints");
            let weight = grid.dual_volume(m) / (2.0 * grid.shifted_volume(e));
            let vd = Expression::voltage_diff(electrical_node_name(a), electrical_node_name(b));
            loss_terms.push(
                vd.clone()
                    .mul(vd)
                    .div(resistance.as_expression())
                    .mul(Expression::number(weight)),
            );
        }
        if !loss_terms.is_empty() {
            let mut iter = loss_terms.into_iter();
            let mut sum = iter.next().expect("non-empty");
            for t in iter {
                sum = sum.add(t);
            }
            elements.push(Element::BehavioralCurrent {
                name: format!("BIQ{:06}", m + 1),
                n_plus: GROUND.to_string(),
                n_minus: thermal_node_name(m),
                amps_expr: sum,
            });
        }
    }

    for (&node, waveform) in &bcs.electric_dirichlet {
        elements.push(Element::VoltageSource {
            name: format!("VE{:06}", node + 1),
            n_plus: electrical_node_name(node),
            n_minus: GROUND.to_string(),
            waveform: waveform.clone(),
        });
    }
    for (&node, waveform) in &bcs.thermal_dirichlet {
        elements.push(Element::VoltageSource {
            name: format!("VT{:06}", node + 1),
            n_plus: thermal_node_name(node),
            n_minus: GROUND.to_string(),
            waveform: waveform.clone(),
        });
    }

    for (k, branch) in bcs.extra_branches.iter().enumerate() {
        if branch.g_el > 0.0 {
            elements.push(Element::Resistor {
                name: format!("RXE{:03}", k + 1),
                n_plus: electrical_node_name(branch.node_a),
                n_minus: electrical_node_name(branch.node_b),
                ohms: 1.0 / branch.g_el,
            });
        }
        if branch.g_th > 0.0 {
            elements.push(Element::Resistor {
                name: format!("RXT{:03}", k + 1),
                n_plus: thermal_node_name(branch.node_a),
                n_minus: thermal_node_name(branch.node_b),
                ohms: 1.0 / branch.g_th,
            });
        }
    }

    let mut node_table = BTreeMap::new();
    node_table.insert(GROUND.to_string(), classify_node(GROUND));
    for m in 0..grid.num_nodes() {
        let e = electrical_node_name(m);
        let t = thermal_node_name(m);
        node_table.insert(e.clone(), classify_node(&e));
        node_table.insert(t.clone(), classify_node(&t));
    }

    let netlist = Netlist {
        title: title.to_string(),
        elements,
        tran: Some(tran),
        options: BTreeMap::new(),
        node_table,
    };
    netlist.validate()?;
    Ok(netlist)
}
