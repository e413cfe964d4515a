//! Coupled electrothermal simulation on staggered hexahedral grids, with
//! extraction of behavioral SPICE netlists that reproduce the field solution.
//!
//! The crate has three layers:
//!
//! * a field layer ([`grid`], [`materials`], [`field`]) that discretizes the
//!   coupled electrokinetic / heat-conduction problem with the finite
//!   integration technique and integrates it in time,
//! * a circuit layer ([`netlist`], [`mna`]) that writes the discrete system
//!   as a SPICE-dialect netlist with behavioral elements and solves that
//!   netlist with modified nodal analysis, and
//! * a harness layer ([`harness`]) with ready-made scenarios and a
//!   field-vs-circuit comparison report.
//!
//! The two solution paths are built from the same matrices, so for matching
//! time integrators they agree to solver precision; this is what the
//! `acceptance` integration suite pins down.

pub mod error;
pub mod field;
pub mod grid;
pub mod harness;
pub mod materials;
pub mod mna;
pub mod netlist;
pub mod sparse;
pub mod trace;
pub mod waveform;

pub use error::{Error, Result};
