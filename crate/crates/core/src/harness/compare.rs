//! Runs both solution paths of a scenario, the direct field solve and the
//! extract-emit-parse-solve circuit path, and compares the resulting traces.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use crate::error::Result;
use crate::field::{CouplingMode, FieldSolver};
use crate::grid::IncidenceOperators;
use crate::harness::scenario::Scenario;
use crate::mna::{Integrator, MnaSystem, NewtonOptions};
use crate::netlist::{emit, generate_netlist, parse, Tran};
use crate::trace::TransientTrace;

/// Outcome of a full two-path run, including everything needed to write a
/// report directory.
pub struct CompareReport {
    pub scenario_name: String,
    pub dt: f64,
    pub tstop: f64,
    pub fit_mode: CouplingMode,
    pub mna_integrator: Integrator,
    /// Number of element cards in the extracted netlist.
    pub card_count: usize,
    /// Relative max-over-time 2-norm difference of the potentials, with the
    /// field solve as the reference.
    pub phi_error: f64,
    /// The same norm on the temperature rises.
    pub temperature_error: f64,
    /// Newton iterations per accepted step -> number of steps.
    pub fit_newton_histogram: BTreeMap<usize, usize>,
    pub mna_newton_histogram: BTreeMap<usize, usize>,
    /// Wall-clock seconds per pipeline stage, in execution order.
    pub timings: Vec<(String, f64)>,
    pub warnings: Vec<String>,
    pub netlist_text: String,
    pub fit_trace: TransientTrace,
    pub mna_trace: TransientTrace,
    pub probes: Vec<(String, usize)>,
}

struct StageClock {
    timings: Vec<(String, f64)>,
}

impl StageClock {
    fn time<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.timings
            .push((name.to_string(), start.elapsed().as_secs_f64()));
        out
    }
}

fn iteration_histogram(trace: &TransientTrace) -> BTreeMap<usize, usize> {
    let mut hist = BTreeMap::new();
    // Skip the placeholder entry for the initial state.
    for meta in trace.step_meta.iter().skip(1) {
        *hist.entry(meta.newton_iters).or_insert(0) += 1;
    }
    hist
}

/// Run the field solver and the netlist pipeline on the same scenario and
/// time grid, then compare the traces node by node.
pub fn run_compare(scenario: &Scenario) -> Result<CompareReport> {
    let mut clock = StageClock {
        timings: Vec::new(),
    };

    let built = clock.time("build", || scenario.build())?;
    let ops = IncidenceOperators::build(&built.grid);
    let solver = FieldSolver::new(
        &built.grid,
        &ops,
        &built.materials,
        &built.matrices,
        &built.bcs,
    )?;
    let opts = scenario.solver_options();
    let fit_trace = clock.time("field_solve", || solver.run(&opts))?;

    let title = if scenario.title.is_empty() {
        scenario.name.clone()
    } else {
        format!("{}: {}", scenario.name, scenario.title)
    };
    let tran = Tran {
        dt: scenario.solver.dt,
        tstop: scenario.solver.tstop,
    };
    let netlist = clock.time("netlist_generate", || {
        generate_netlist(
            &built.grid,
            &built.materials,
            &built.matrices,
            &built.bcs,
            tran,
            &title,
        )
    })?;
    let netlist_text = clock.time("netlist_emit", || emit(&netlist));
    let parsed = clock.time("netlist_parse", || parse(&netlist_text))?;
    let mna = clock.time("mna_assemble", || MnaSystem::assemble(&parsed))?;
    let newton = NewtonOptions {
        tol: scenario.solver.newton_tol,
        max_iter: scenario.solver.max_iter,
    };
    let transient = clock.time("circuit_solve", || {
        mna.solve_transient(
            scenario.solver.dt,
            scenario.solver.tstop,
            scenario.solver.integrator,
            &newton,
        )
    })?;
    let mna_trace = mna.grid_trace(&transient);

    let phi_error = mna_trace.error_norm_phi(&fit_trace)?;
    let temperature_error = mna_trace.error_norm_temperature(&fit_trace)?;

    Ok(CompareReport {
        scenario_name: scenario.name.clone(),
        dt: scenario.solver.dt,
        tstop: scenario.solver.tstop,
        fit_mode: scenario.solver.mode,
        mna_integrator: scenario.solver.integrator,
        card_count: parsed.elements.len(),
        phi_error,
        temperature_error,
        fit_newton_histogram: iteration_histogram(&fit_trace),
        mna_newton_histogram: iteration_histogram(&mna_trace),
        timings: clock.timings,
        warnings: mna.warnings().to_vec(),
        netlist_text,
        fit_trace,
        mna_trace,
        probes: built.probes,
    })
}

fn histogram_line(hist: &BTreeMap<usize, usize>) -> String {
    if hist.is_empty() {
        return "(no steps)".into();
    }
    hist.iter()
        .map(|(iters, steps)| format!("{iters} iters x {steps} steps"))
        .collect::<Vec<_>>()
        .join(", ")
}

impl CompareReport {
    /// Human-readable report, the content of `report.txt`.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let steps = self.fit_trace.num_steps().saturating_sub(1);
        out.push_str(&format!("scenario:        {}\n", self.scenario_name));
        out.push_str(&format!(
            "time grid:       {} steps of {:.6e} s up to {:.6e} s\n",
            steps, self.dt, self.tstop
        ));
        out.push_str(&format!(
            "field solve:     {:?} coupling, backward Euler\n",
            self.fit_mode
        ));
        out.push_str(&format!(
            "circuit solve:   {:?} integrator, {} cards\n",
            self.mna_integrator, self.card_count
        ));
        out.push_str(&format!(
            "potential error (max-over-time relative 2-norm):    {:.6e}\n",
            self.phi_error
        ));
        out.push_str(&format!(
            "temperature error (max-over-time relative 2-norm):  {:.6e}\n",
            self.temperature_error
        ));
        out.push_str(&format!(
            "newton iterations, field:   {}\n",
            histogram_line(&self.fit_newton_histogram)
        ));
        out.push_str(&format!(
            "newton iterations, circuit: {}\n",
            histogram_line(&self.mna_newton_histogram)
        ));
        out.push_str("wall times:\n");
        for (name, seconds) in &self.timings {
            out.push_str(&format!("  {name:<18} {seconds:.6} s\n"));
        }
        if self.warnings.is_empty() {
            out.push_str("warnings: none\n");
        } else {
            out.push_str("warnings:\n");
            for w in &self.warnings {
                out.push_str(&format!("  {w}\n"));
            }
        }
        out
    }

    /// Write `report.txt`, the netlist, and both traces (plus probe columns
    /// when the scenario defines probes) into `dir`.
    pub fn write_artifacts(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.txt"), self.summary())?;
        fs::write(dir.join("netlist.cir"), &self.netlist_text)?;
        self.fit_trace
            .write_csv(BufWriter::new(File::create(dir.join("field_trace.csv"))?))?;
        self.mna_trace
            .write_csv(BufWriter::new(File::create(dir.join("circuit_trace.csv"))?))?;
        if !self.probes.is_empty() {
            self.fit_trace.write_probe_csv(
                BufWriter::new(File::create(dir.join("field_probes.csv"))?),
                &self.probes,
            )?;
            self.mna_trace.write_probe_csv(
                BufWriter::new(File::create(dir.join("circuit_probes.csv"))?),
                &self.probes,
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::builtin::builtin;

    fn short_benchmark() -> Scenario {
        let mut scenario = builtin("benchmark").unwrap();
        scenario.solver.tstop = 2e-6;
        scenario
    }

    #[test]
    fn benchmark_pipelines_agree() {
        let report = run_compare(&short_benchmark()).unwrap();
        // 75 conducting edges, 96 capacitor and 96 thermal resistor edges,
        // 45 thermal capacitors, 36 loss sources, 18 pinned boundary nodes.
        assert_eq!(report.card_count, 75 + 96 + 96 + 45 + 36 + 18);
        assert!(report.warnings.is_empty());
        // Different integrators (backward Euler vs trapezoidal), so the
        // traces differ by a small but nonzero integration error.
        assert!(report.phi_error > 0.0 && report.phi_error < 0.05);
        assert!(report.temperature_error < 0.05);
        assert_eq!(
            report.fit_newton_histogram.values().sum::<usize>(),
            20
        );
        assert_eq!(report.mna_newton_histogram.values().sum::<usize>(), 20);
        assert_eq!(report.timings.len(), 7);
    }

    #[test]
    fn identical_integrators_collapse_the_gap() {
        let mut scenario = short_benchmark();
        scenario.solver.integrator = Integrator::BackwardEuler;
        scenario.solver.mode = CouplingMode::Monolithic;
        let report = run_compare(&scenario).unwrap();
        assert!(
            report.phi_error < 1e-8,
            "phi error {:.3e}",
            report.phi_error
        );
        assert!(
            report.temperature_error < 1e-8,
            "temperature error {:.3e}",
            report.temperature_error
        );
    }

    #[test]
    fn summary_and_artifacts_are_written() {
        let report = run_compare(&short_benchmark()).unwrap();
        let text = report.summary();
        assert!(text.contains("scenario:        benchmark"));
        assert!(text.contains("wall times:"));
        assert!(text.contains("circuit_solve"));

        let dir = std::env::temp_dir().join(format!("fit2spice_compare_{}", std::process::id()));
        report.write_artifacts(&dir).unwrap();
        for file in [
            "report.txt",
            "netlist.cir",
            "field_trace.csv",
            "circuit_trace.csv",
            "field_probes.csv",
            "circuit_probes.csv",
        ] {
            assert!(dir.join(file).exists(), "missing {file}");
        }
        fs::remove_dir_all(&dir).ok();
    }
}
