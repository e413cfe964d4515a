//! Parser for the netlist dialect produced by [`super::emit`].
//!
//! Line-based: the first line is the title, `*` starts a comment line,
//! `+` continues the previous card, keywords are case-insensitive, and
//! every error carries the 1-based line number it was detected on.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::waveform::Waveform;

use super::expr::Expression;
use super::{classify_node, valid_node_name, Element, Netlist, Tran, GROUND};

struct LogicalLine {
    line_no: usize,
    text: String,
}

fn logical_lines(input: &str) -> Result<(String, Vec<LogicalLine>)> {
    let mut physical = input.lines().enumerate();
    let title = match physical.next() {
        Some((_, line)) => line.trim_end_matches('\r').to_string(),
        None => return Err(Error::parse(1, "empty input, expected a title line")),
    };
    let mut lines: Vec<LogicalLine> = Vec::new();
    for (idx, raw) in physical {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        let trimmed = line.trim_start();
        if trimmed.is_empty() || trimmed.starts_with('*') {
            continue;
        }
        if let Some(cont) = trimmed.strip_prefix('+') {
            match lines.last_mut() {
                Some(prev) => {
                    prev.text.push(' ');
                    prev.text.push_str(cont.trim());
                }
                None => {
                    return Err(Error::parse(
                        line_no,
                        "continuation line with nothing to continue",
                    ))
                }
            }
        } else {
            lines.push(LogicalLine {
                line_no,
                text: trimmed.trim_end().to_string(),
            });
        }
    }
    Ok((title, lines))
}

fn parse_value(token: &str, line_no: usize, what: &str) -> Result<f64> {
    let v: f64 = token
        .parse()
        .map_err(|_| Error::parse(line_no, format!("invalid {what} {token:?}")))?;
    if !v.is_finite() {
        return Err(Error::parse(line_no, format!("non-finite {what} {token:?}")));
    }
    Ok(v)
}

fn parse_waveform(text: &str, line_no: usize) -> Result<Waveform> {
    let trimmed = text.trim();
    let upper = trimmed.to_ascii_uppercase();
    if let Some(rest) = upper.strip_prefix("DC") {
        if rest.starts_with(char::is_whitespace) {
            let value_text = trimmed[2..].trim();
            return Ok(Waveform::dc(parse_value(value_text, line_no, "DC value")?));
        }
    }
    for (kind, prefix) in [("SIN", "SIN("), ("EXP", "EXP(")] {
        if upper.starts_with(prefix) {
            if !upper.ends_with(')') {
                return Err(Error::parse(
                    line_no,
                    format!("unterminated {kind}(...) waveform"),
                ));
            }
            let inner = &trimmed[prefix.len()..trimmed.len() - 1];
            let parts: Vec<&str> = inner.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(Error::parse(
                    line_no,
                    format!("{kind}(...) expects 3 parameters, found {}", parts.len()),
                ));
            }
            let a = parse_value(parts[0], line_no, "waveform parameter")?;
            let b = parse_value(parts[1], line_no, "waveform parameter")?;
            let c = parse_value(parts[2], line_no, "waveform parameter")?;
            return Ok(match kind {
                "SIN" => Waveform::sin(a, b, c),
                _ => Waveform::exp(a, b, c),
            });
        }
    }
    Err(Error::parse(
        line_no,
        format!("unrecognized waveform {trimmed:?} (expected DC, SIN(...), or EXP(...))"),
    ))
}

fn check_node(name: &str, line_no: usize) -> Result<String> {
    if valid_node_name(name) {
        Ok(name.to_string())
    } else {
        Err(Error::parse(line_no, format!("invalid node name {name:?}")))
    }
}

fn parse_element(line: &LogicalLine) -> Result<Element> {
    let tokens: Vec<&str> = line.text.split_whitespace().collect();
    if tokens.len() < 4 {
        return Err(Error::parse(
            line.line_no,
            format!("card {:?} needs name, two nodes, and a value", line.text),
        ));
    }
    let name = tokens[0].to_string();
    let n_plus = check_node(tokens[1], line.line_no)?;
    let n_minus = check_node(tokens[2], line.line_no)?;
    let rest = tokens[3..].join(" ");
    let upper = name.to_ascii_uppercase();

    if upper.starts_with("BR") || upper.starts_with("BI") {
        let behavioral_r = upper.starts_with("BR");
        let (param, what) = if behavioral_r { ("R", "R=") } else { ("I", "I=") };
        let rest_trim = rest.trim();
        let prefix_ok = rest_trim.len() >= 2
            && rest_trim[..1].eq_ignore_ascii_case(param)
            && rest_trim[1..2] == *"=";
        if !prefix_ok {
            return Err(Error::parse(
                line.line_no,
                format!("behavioral card {name} expects {what}<expression>"),
            ));
        }
        let expr_text = rest_trim[2..].trim();
        let expr = Expression::parse(expr_text)
            .map_err(|msg| Error::parse(line.line_no, format!("in {name}: {msg}")))?;
        return Ok(if behavioral_r {
            Element::BehavioralResistor {
                name,
                n_plus,
                n_minus,
                ohms_expr: expr,
            }
        } else {
            Element::BehavioralCurrent {
                name,
                n_plus,
                n_minus,
                amps_expr: expr,
            }
        });
    }

    match upper.chars().next() {
        Some('R') => {
            if tokens.len() != 4 {
                return Err(Error::parse(
                    line.line_no,
                    format!("resistor {name} expects exactly one value"),
                ));
            }
            Ok(Element::Resistor {
                name,
                n_plus,
                n_minus,
                ohms: parse_value(tokens[3], line.line_no, "resistance")?,
            })
        }
        Some('C') => {
            if tokens.len() != 4 {
                return Err(Error::parse(
                    line.line_no,
                    format!("capacitor {name} expects exactly one value"),
                ));
            }
            Ok(Element::Capacitor {
                name,
                n_plus,
                n_minus,
                farads: parse_value(tokens[3], line.line_no, "capacitance")?,
            })
        }
        Some('V') => Ok(Element::VoltageSource {
            name,
            n_plus,
            n_minus,
            waveform: parse_waveform(&rest, line.line_no)?,
        }),
        Some('I') => Ok(Element::CurrentSource {
            name,
            n_plus,
            n_minus,
            waveform: parse_waveform(&rest, line.line_no)?,
        }),
        _ => Err(Error::parse(
            line.line_no,
            format!("unknown card type for element {name:?}"),
        )),
    }
}

/// Parse netlist text into the data model. Inverse of [`super::emit`] up to
/// the 9-significant-digit number quantization of emission.
pub fn parse(input: &str) -> Result<Netlist> {
    let (title, lines) = logical_lines(input)?;

    let mut elements: Vec<Element> = Vec::new();
    let mut element_lines: Vec<usize> = Vec::new();
    let mut tran: Option<Tran> = None;
    let mut options = BTreeMap::new();
    let mut seen_names: BTreeSet<String> = BTreeSet::new();
    let mut ended = false;

    for line in &lines {
        let upper = line.text.to_ascii_uppercase();
        if upper == ".END" {
            ended = true;
            break;
        }
        if upper.starts_with('.') {
            let tokens: Vec<&str> = line.text.split_whitespace().collect();
            let directive = tokens[0].to_ascii_uppercase();
            match directive.as_str() {
                ".TRAN" => {
                    if tran.is_some() {
                        return Err(Error::parse(line.line_no, "duplicate .TRAN directive"));
                    }
                    if tokens.len() != 3 {
                        return Err(Error::parse(
                            line.line_no,
                            ".TRAN expects a step and a stop time",
                        ));
                    }
                    let dt = parse_value(tokens[1], line.line_no, "time step")?;
                    let tstop = parse_value(tokens[2], line.line_no, "stop time")?;
                    if dt <= 0.0 || tstop <= 0.0 {
                        return Err(Error::parse(
                            line.line_no,
                            ".TRAN step and stop time must be positive",
                        ));
                    }
                    tran = Some(Tran { dt, tstop });
                }
                ".OPTIONS" => {
                    for pair in &tokens[1..] {
                        match pair.split_once('=') {
                            Some((k, v)) => {
                                options.insert(k.to_string(), v.to_string());
                            }
                            None => {
                                return Err(Error::parse(
                                    line.line_no,
                                    format!(".OPTIONS entry {pair:?} is not key=value"),
                                ))
                            }
                        }
                    }
                }
                other => {
                    return Err(Error::parse(
                        line.line_no,
                        format!("unknown directive {other}"),
                    ))
                }
            }
            continue;
        }
        let element = parse_element(line)?;
        if !seen_names.insert(element.name().to_ascii_uppercase()) {
            return Err(Error::parse(
                line.line_no,
                format!("duplicate element name {}", element.name()),
            ));
        }
        elements.push(element);
        element_lines.push(line.line_no);
    }

    if !ended {
        return Err(Error::parse(
            input.lines().count(),
            "missing .END directive",
        ));
    }

    // Node table from card terminals; expression references must resolve
    // against it (ground is always known).
    let mut node_table = BTreeMap::new();
    for el in &elements {
        let (a, b) = el.terminals();
        for node in [a, b] {
            node_table
                .entry(node.to_string())
                .or_insert_with(|| classify_node(node));
        }
    }
    for (el, line_no) in elements.iter().zip(&element_lines) {
        if let Some(expr) = el.expression() {
            let mut refs = BTreeSet::new();
            expr.node_refs(&mut refs);
            for r in refs {
                if r != GROUND && !node_table.contains_key(&r) {
                    return Err(Error::parse(
                        *line_no,
                        format!(
                            "expression of {} references node {r} that no card connects",
                            el.name()
                        ),
                    ));
                }
            }
            if expr.node_refs_contains_ground() {
                node_table
                    .entry(GROUND.to_string())
                    .or_insert_with(|| classify_node(GROUND));
            }
        }
    }

    let netlist = Netlist {
        title,
        elements,
        tran,
        options,
        node_table,
    };
    netlist.validate()?;
    Ok(netlist)
}

impl Expression {
    fn node_refs_contains_ground(&self) -> bool {
        let mut refs = BTreeSet::new();
        self.node_refs(&mut refs);
        refs.contains(GROUND)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{emit, NodeDomain};
    use super::*;

    #[test]
    fn parses_minimal_resistor_card() {
        let text = "divider\nR1 a 0 1e3\nV1 a 0 DC 1\n.END\n";
        let net = parse(text).unwrap();
        assert_eq!(net.title, "divider");
        assert_eq!(net.elements.len(), 2);
        match &net.elements[0] {
            Element::Resistor {
                name,
                n_plus,
                n_minus,
                ohms,
            } => {
                assert_eq!(name, "R1");
                assert_eq!(n_plus, "a");
                assert_eq!(n_minus, "0");
                assert_eq!(*ohms, 1e3);
            }
            other => panic!("expected resistor, got {other:?}"),
        }
        assert_eq!(net.node_table[GROUND].domain, NodeDomain::Ground);
        assert_eq!(net.node_table["a"].domain, NodeDomain::Electrical);
        assert_eq!(net.node_table["a"].grid_index, None);
    }

    #[test]
    fn grid_names_map_to_indices() {
        let text = "t\nRE000046 E000001 E000002 1e0\nCT000003 0 T000003 1e-6\n.END\n";
        let net = parse(text).unwrap();
        assert_eq!(net.node_table["E000001"].grid_index, Some(0));
        assert_eq!(net.node_table["E000002"].domain, NodeDomain::Electrical);
        assert_eq!(net.node_table["T000003"].domain, NodeDomain::Thermal);
        assert_eq!(net.node_table["T000003"].grid_index, Some(2));
    }

    #[test]
    fn continuation_and_comments() {
        let joined =
            "t\nRE1 E1 E2 1e0\nBI1 0 T1 I=V(E1,E2)*V(E1,E2)/2e0\nRT1 T1 0 1e0\n.END\n";
        let split = "t\nRE1 E1 E2 1e0\n* heat injection\nBI1 0 T1\n+ I=V(E1,E2)*\n* interleaved comment\n+ V(E1,E2)/2e0\nRT1 T1 0 1e0\n.END\n";
        let a = parse(joined).unwrap();
        let b = parse(split).unwrap();
        assert_eq!(a.elements, b.elements);
        // E9 is referenced only in the expression and by no card.
        assert!(parse("t\nBI1 0 T1 I=V(E9)\nRT1 T1 0 1e0\n.END\n").is_err());
    }

    #[test]
    fn waveform_forms() {
        let text = "t\nV1 a 0 SIN(0e0 1e3 7.69e4)\nV2 b 0 EXP(0e0 1e0 1e-3)\nI1 0 a DC 2e-3\nR1 a 0 1e0\nR2 b 0 1e0\n.END\n";
        let net = parse(text).unwrap();
        match &net.elements[0] {
            Element::VoltageSource { waveform, .. } => {
                assert_eq!(*waveform, Waveform::sin(0.0, 1e3, 7.69e4));
            }
            other => panic!("unexpected {other:?}"),
        }
        match &net.elements[1] {
            Element::VoltageSource { waveform, .. } => {
                assert_eq!(*waveform, Waveform::exp(0.0, 1.0, 1e-3));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tran_and_options() {
        let text = "t\nR1 a 0 1e0\n.OPTIONS mode=lagged integrator=be\n.TRAN 1e-7 1.2e-4\n.END\n";
        let net = parse(text).unwrap();
        let tran = net.tran.unwrap();
        assert_eq!(tran.dt, 1e-7);
        assert_eq!(tran.tstop, 1.2e-4);
        assert_eq!(net.options["mode"], "lagged");
        assert_eq!(net.options["integrator"], "be");
    }

    #[test]
    fn errors_carry_line_numbers() {
        let missing_end = "t\nR1 a 0 1e3\n";
        match parse(missing_end) {
            Err(Error::Parse { message, .. }) => assert!(message.contains(".END")),
            other => panic!("expected parse error, got {other:?}"),
        }
        let bad_value = "t\nR1 a 0 abc\n.END\n";
        match parse(bad_value) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        let dup = "t\nR1 a 0 1e0\nR1 a 0 2e0\n.END\n";
        match parse(dup) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("duplicate"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        let unknown = "t\nQ1 a 0 1e0\n.END\n";
        assert!(matches!(parse(unknown), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn emit_parse_round_trip() {
        let text = "round trip\nR1 a 0 1.00000000e3\nC1 a 0 1.00000000e-9\nV1 a 0 SIN(0.00000000e0 1.00000000e3 7.69000000e4)\nBR1 a b R=1.00000000e0/(2.00000000e0+V(T000001))\nBI1 0 T000001 I=V(a,b)*V(a,b)/1.00000000e3\nRT1 T000001 0 1.00000000e0\nRB1 b 0 1.00000000e1\n.TRAN 1.00000000e-7 1.20000000e-4\n.END\n";
        let net = parse(text).unwrap();
        let emitted = emit(&net);
        assert_eq!(emitted, text);
        let reparsed = parse(&emitted).unwrap();
        assert_eq!(reparsed, net);
    }
}
