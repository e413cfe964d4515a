//! Scenario definitions, built-in benchmarks, and the field-vs-circuit
//! comparison pipeline.

pub mod builtin;
pub mod compare;
pub mod scenario;

pub use builtin::{builtin, BUILTIN_NAMES};
pub use compare::{run_compare, CompareReport};
pub use scenario::{BuiltSystem, Scenario};
