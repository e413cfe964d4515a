//! Time-dependent source waveforms shared by Dirichlet boundary values and
//! netlist sources.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Waveform {
    /// Constant value.
    Dc { value: f64 },
    /// `offset + amplitude * sin(2 pi freq_hz t)`.
    Sin {
        offset: f64,
        amplitude: f64,
        freq_hz: f64,
    },
    /// `v0 + (v1 - v0) (1 - exp(-t / tau_s))`, the saturating exponential.
    Exp { v0: f64, v1: f64, tau_s: f64 },
}

impl Waveform {
    pub fn dc(value: f64) -> Self {
        Waveform::Dc { value }
    }

    pub fn sin(offset: f64, amplitude: f64, freq_hz: f64) -> Self {
        Waveform::Sin {
            offset,
            amplitude,
            freq_hz,
        }
    }

    pub fn exp(v0: f64, v1: f64, tau_s: f64) -> Self {
        Waveform::Exp { v0, v1, tau_s }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            Waveform::Dc { value } => value,
            Waveform::Sin {
                offset,
                amplitude,
                freq_hz,
            } => offset + amplitude * (2.0 * std::f64::consts::PI * freq_hz * t).sin(),
            Waveform::Exp { v0, v1, tau_s } => v0 + (v1 - v0) * (1.0 - (-t / tau_s).exp()),
        }
    }
}
