//! Netlist data model, generation from the assembled field system, text
//! emission, and parsing of the same dialect.
//!
//! The dialect is line-oriented SPICE: a title line, `*` comment lines,
//! `+` continuation lines, R/C/V/I cards, behavioral `BR`/`BI` cards with
//! `R=`/`I=` expressions, `.TRAN dt tstop`, and `.END`. Numbers are printed
//! with 9 significant digits in scientific notation; two emissions of the
//! same netlist are byte-identical.

pub mod expr;

mod emit;
mod generate;
mod parse;

pub use emit::{emit, format_number};
pub use generate::generate_netlist;
pub use parse::parse;

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::waveform::Waveform;

use expr::Expression;

#[derive(Debug, Clone, PartialEq)]
pub enum Element {
    Resistor {
        name: String,
        n_plus: String,
        n_minus: String,
        ohms: f64,
    },
    Capacitor {
        name: String,
        n_plus: String,
        n_minus: String,
        farads: f64,
    },
    VoltageSource {
        name: String,
        n_plus: String,
        n_minus: String,
        waveform: Waveform,
    },
    CurrentSource {
        name: String,
        n_plus: String,
        n_minus: String,
        waveform: Waveform,
    },
    BehavioralResistor {
        name: String,
        n_plus: String,
        n_minus: String,
        ohms_expr: Expression,
    },
    /// Current flows from `n_plus` to `n_minus` through the source for
    /// positive expression values.
    BehavioralCurrent {
        name: String,
        n_plus: String,
        n_minus: String,
        amps_expr: Expression,
    },
}

impl Element {
    pub fn name(&self) -> &str {
        match self {
            Element::Resistor { name, .. }
            | Element::Capacitor { name, .. }
            | Element::VoltageSource { name, .. }
            | Element::CurrentSource { name, .. }
            | Element::BehavioralResistor { name, .. }
            | Element::BehavioralCurrent { name, .. } => name,
        }
    }

    pub fn terminals(&self) -> (&str, &str) {
        match self {
            Element::Resistor {
                n_plus, n_minus, ..
            }
            | Element::Capacitor {
                n_plus, n_minus, ..
            }
            | Element::VoltageSource {
                n_plus, n_minus, ..
            }
            | Element::CurrentSource {
                n_plus, n_minus, ..
            }
            | Element::BehavioralResistor {
                n_plus, n_minus, ..
            }
            | Element::BehavioralCurrent {
                n_plus, n_minus, ..
            } => (n_plus, n_minus),
        }
    }

    pub fn expression(&self) -> Option<&Expression> {
        match self {
            Element::BehavioralResistor { ohms_expr, .. } => Some(ohms_expr),
            Element::BehavioralCurrent { amps_expr, .. } => Some(amps_expr),
            _ => None,
        }
    }
}

/// Transient analysis directive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tran {
    pub dt: f64,
    pub tstop: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeDomain {
    Electrical,
    Thermal,
    Ground,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeInfo {
    pub domain: NodeDomain,
    /// Canonical grid node index; `None` for external nodes.
    pub grid_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Netlist {
    pub title: String,
    pub elements: Vec<Element>,
    pub tran: Option<Tran>,
    pub options: BTreeMap<String, String>,
    pub node_table: BTreeMap<String, NodeInfo>,
}

pub const GROUND: &str = "0";

/// Electrical grid node name, 1-based over the canonical index.
pub fn electrical_node_name(node: usize) -> String {
    format!("E{:06}", node + 1)
}

/// Thermal grid node name, 1-based over the canonical index.
pub fn thermal_node_name(node: usize) -> String {
    format!("T{:06}", node + 1)
}

/// Interpret a node name: grid names map back to canonical indices,
/// anything else is external.
pub fn classify_node(name: &str) -> NodeInfo {
    if name == GROUND {
        return NodeInfo {
            domain: NodeDomain::Ground,
            grid_index: None,
        };
    }
    let mut chars = name.chars();
    let head = chars.next();
    let rest: String = chars.collect();
    if !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()) {
        if let Ok(idx) = rest.parse::<usize>() {
            if idx >= 1 {
                match head {
                    Some('E') => {
                        return NodeInfo {
                            domain: NodeDomain::Electrical,
                            grid_index: Some(idx - 1),
                        }
                    }
                    Some('T') => {
                        return NodeInfo {
                            domain: NodeDomain::Thermal,
                            grid_index: Some(idx - 1),
                        }
                    }
                    _ => {}
                }
            }
        }
    }
    NodeInfo {
        domain: NodeDomain::Electrical,
        grid_index: None,
    }
}

pub(crate) fn valid_node_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'_')
}

impl Netlist {
    /// Structural validation: unique element names, referenced nodes known,
    /// expression references resolving against the node table.
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for el in &self.elements {
            if !seen.insert(el.name()) {
                return Err(Error::Scenario(format!(
                    "duplicate element name {}",
                    el.name()
                )));
            }
            let (a, b) = el.terminals();
            for node in [a, b] {
                if !self.node_table.contains_key(node) {
                    return Err(Error::Scenario(format!(
                        "element {} references unknown node {node}",
                        el.name()
                    )));
                }
            }
            if let Some(expr) = el.expression() {
                let mut refs = std::collections::BTreeSet::new();
                expr.node_refs(&mut refs);
                for r in refs {
                    if !self.node_table.contains_key(&r) {
                        return Err(Error::Scenario(format!(
                            "expression of {} references unknown node {r}",
                            el.name()
                        )));
                    }
                }
            }
        }
        if self.title.contains('\n') {
            return Err(Error::Scenario("title must be a single line".into()));
        }
        Ok(())
    }
}
