//! Deterministic netlist text emission.

use crate::waveform::Waveform;

use super::{Element, Netlist};

/// Canonical number format: 9 significant digits, scientific notation.
pub fn format_number(v: f64) -> String {
    format!("{:.8e}", v)
}

fn waveform_text(w: &Waveform) -> String {
    match w {
        Waveform::Dc { value } => format!("DC {}", format_number(*value)),
        Waveform::Sin {
            offset,
            amplitude,
            freq_hz,
        } => format!(
            "SIN({} {} {})",
            format_number(*offset),
            format_number(*amplitude),
            format_number(*freq_hz)
        ),
        Waveform::Exp { v0, v1, tau_s } => format!(
            "EXP({} {} {})",
            format_number(*v0),
            format_number(*v1),
            format_number(*tau_s)
        ),
    }
}

fn element_line(el: &Element) -> String {
    match el {
        Element::Resistor {
            name,
            n_plus,
            n_minus,
            ohms,
        } => format!("{name} {n_plus} {n_minus} {}", format_number(*ohms)),
        Element::Capacitor {
            name,
            n_plus,
            n_minus,
            farads,
        } => format!("{name} {n_plus} {n_minus} {}", format_number(*farads)),
        Element::VoltageSource {
            name,
            n_plus,
            n_minus,
            waveform,
        } => format!("{name} {n_plus} {n_minus} {}", waveform_text(waveform)),
        Element::CurrentSource {
            name,
            n_plus,
            n_minus,
            waveform,
        } => format!("{name} {n_plus} {n_minus} {}", waveform_text(waveform)),
        Element::BehavioralResistor {
            name,
            n_plus,
            n_minus,
            ohms_expr,
        } => format!("{name} {n_plus} {n_minus} R={}", ohms_expr.to_text()),
        Element::BehavioralCurrent {
            name,
            n_plus,
            n_minus,
            amps_expr,
        } => format!("{name} {n_plus} {n_minus} I={}", amps_expr.to_text()),
    }
}

/// Render the netlist as text. Emission is a pure function of the netlist
/// value: equal netlists produce byte-identical text.
pub fn emit(netlist: &Netlist) -> String {
    let mut out = String::new();
    out.push_str(&netlist.title);
    out.push('\n');
    for el in &netlist.elements {
        out.push_str(&element_line(el));
        out.push('\n');
    }
    for (key, value) in &netlist.options {
        out.push_str(&format!(".OPTIONS {key}={value}\n"));
    }
    if let Some(tran) = &netlist.tran {
        out.push_str(&format!(
            ".TRAN {} {}\n",
            format_number(tran.dt),
            format_number(tran.tstop)
        ));
    }
    out.push_str(".END\n");
    out
}
