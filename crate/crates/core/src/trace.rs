//! Transient solution traces and the norms used to compare them.

use std::io::Write;

use crate::error::{Error, Result};

/// Per-step solver diagnostics.
#[derive(Debug, Clone, Default)]
pub struct StepMeta {
    /// Newton iterations taken (1 for plain linear solves).
    pub newton_iters: usize,
    /// Final scaled residual of the accepted step.
    pub residual: f64,
    /// Per-iteration (electrical, thermal) residual infinity norms of the
    /// monolithic Newton loop, starting with the initial residual.
    pub residual_history: Vec<(f64, f64)>,
}

/// Time series of potentials, temperature rises, and projected Joule losses
/// on the grid nodes. Temperatures are rises relative to the reference
/// temperature.
#[derive(Debug, Clone)]
pub struct TransientTrace {
    pub times: Vec<f64>,
    pub phi: Vec<Vec<f64>>,
    pub temperature: Vec<Vec<f64>>,
    pub q_el: Vec<Vec<f64>>,
    pub step_meta: Vec<StepMeta>,
}

impl TransientTrace {
    pub fn num_nodes(&self) -> usize {
        self.phi.first().map_or(0, Vec::len)
    }

    pub fn num_steps(&self) -> usize {
        self.times.len()
    }

    /// Full export: one row per node per time point.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,node_id,phi,T,q_el")?;
        for (k, &t) in self.times.iter().enumerate() {
            for i in 0..self.num_nodes() {
                writeln!(
                    w,
                    "{:.12e},{},{:.12e},{:.12e},{:.12e}",
                    t, i, self.phi[k][i], self.temperature[k][i], self.q_el[k][i]
                )?;
            }
        }
        Ok(())
    }

    /// Compact export with one column pair per named probe node.
    pub fn write_probe_csv<W: Write>(&self, mut w: W, probes: &[(String, usize)]) -> Result<()> {
        write!(w, "t")?;
        for (name, _) in probes {
            write!(w, ",phi_{name},T_{name}")?;
        }
        writeln!(w)?;
        for (k, &t) in self.times.iter().enumerate() {
            write!(w, "{t:.12e}")?;
            for &(_, node) in probes {
                write!(
                    w,
                    ",{:.12e},{:.12e}",
                    self.phi[k][node], self.temperature[k][node]
                )?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    fn check_comparable(&self, other: &TransientTrace) -> Result<()> {
        if self.times.len() != other.times.len() {
            return Err(Error::Shape {
                expected: self.times.len(),
                got: other.times.len(),
            });
        }
        if self.num_nodes() != other.num_nodes() {
            return Err(Error::Shape {
                expected: self.num_nodes(),
                got: other.num_nodes(),
            });
        }
        Ok(())
    }

    /// Max absolute difference of potentials over all nodes and steps,
    /// relative to the largest potential magnitude of `reference`.
    pub fn max_rel_diff_phi(&self, reference: &TransientTrace) -> Result<f64> {
        self.check_comparable(reference)?;
        Ok(max_rel_diff(&self.phi, &reference.phi))
    }

    /// Same norm for temperature rises.
    pub fn max_rel_diff_temperature(&self, reference: &TransientTrace) -> Result<f64> {
        self.check_comparable(reference)?;
        Ok(max_rel_diff(&self.temperature, &reference.temperature))
    }

    /// Transient error norm on temperatures:
    /// `max_k ||T_self(t_k) - T_ref(t_k)||_2 / max_k ||T_ref(t_k)||_2`.
    pub fn error_norm_temperature(&self, reference: &TransientTrace) -> Result<f64> {
        self.check_comparable(reference)?;
        Ok(error_norm(&self.temperature, &reference.temperature))
    }

    /// The same norm applied to potentials.
    pub fn error_norm_phi(&self, reference: &TransientTrace) -> Result<f64> {
        self.check_comparable(reference)?;
        Ok(error_norm(&self.phi, &reference.phi))
    }
}

fn max_rel_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut scale = 0.0f64;
    let mut diff = 0.0f64;
    for (ak, bk) in a.iter().zip(b) {
        for (&av, &bv) in ak.iter().zip(bk) {
            scale = scale.max(bv.abs());
            diff = diff.max((av - bv).abs());
        }
    }
    if scale == 0.0 {
        if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        diff / scale
    }
}

fn error_norm(test: &[Vec<f64>], reference: &[Vec<f64>]) -> f64 {
    let norm2 = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for (tk, rk) in test.iter().zip(reference) {
        let d: Vec<f64> = tk.iter().zip(rk).map(|(a, b)| a - b).collect();
        num = num.max(norm2(&d));
        den = den.max(norm2(rk));
    }
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        num / den
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(vals: &[f64]) -> TransientTrace {
        TransientTrace {
            times: (0..vals.len()).map(|k| k as f64).collect(),
            phi: vals.iter().map(|&v| vec![v, 2.0 * v]).collect(),
            temperature: vals.iter().map(|&v| vec![v / 2.0, v]).collect(),
            q_el: vals.iter().map(|_| vec![0.0, 0.0]).collect(),
            step_meta: Vec::new(),
        }
    }

    #[test]
    fn self_comparison_is_zero() {
        let t = trace(&[0.0, 1.0, 2.0]);
        assert_eq!(t.error_norm_temperature(&t).unwrap(), 0.0);
        assert_eq!(t.max_rel_diff_phi(&t).unwrap(), 0.0);
    }

    #[test]
    fn error_norm_matches_hand_computation() {
        let a = trace(&[0.0, 1.0]);
        let mut b = trace(&[0.0, 1.0]);
        b.temperature[1] = vec![0.5 + 0.1, 1.0];
        // num = 0.1, den = ||(0.5, 1.0)||_2
        let expected = 0.1 / (0.5f64 * 0.5 + 1.0).sqrt();
        let got = b.error_norm_temperature(&a).unwrap();
        assert!((got - expected).abs() < 1e-15);
    }

    #[test]
    fn csv_has_header_and_row_per_node_per_step() {
        let t = trace(&[0.0, 1.0, 2.0]);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,node_id,phi,T,q_el");
        assert_eq!(lines.len(), 1 + 3 * 2);
    }

    #[test]
    fn mismatched_traces_are_rejected() {
        let a = trace(&[0.0, 1.0]);
        let b = trace(&[0.0, 1.0, 2.0]);
        assert!(a.error_norm_temperature(&b).is_err());
    }
}
