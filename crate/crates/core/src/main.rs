//! Command-line interface: netlist extraction, single-path simulation, and
//! the two-path comparison report.
//!
//! Exit codes: 0 on success, 2 when a solver fails to converge, 1 on any
//! other error.

use std::fs::{self, File};
use std::io::{self, BufWriter};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use fit2spice::error::{Error, Result};
use fit2spice::field::{CouplingMode, FieldSolver};
use fit2spice::grid::IncidenceOperators;
use fit2spice::harness::{builtin, run_compare, Scenario, BUILTIN_NAMES};
use fit2spice::mna::{Integrator, MnaSystem, NewtonOptions};
use fit2spice::netlist::{emit, generate_netlist, parse, Tran};
use fit2spice::trace::TransientTrace;

#[derive(Parser)]
#[command(
    name = "fit2spice",
    version,
    about = "Coupled electrothermal field simulation with SPICE netlist extraction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the SPICE netlist for a scenario.
    Extract {
        /// Built-in scenario name or path to a scenario TOML file.
        scenario: String,
        /// Output file; stdout when omitted.
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run one solution path and export the node trace as CSV.
    Simulate {
        /// Which solution path to run.
        engine: Engine,
        /// Built-in scenario name or path to a scenario TOML file.
        scenario: String,
        /// Output CSV file; stdout when omitted.
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run both paths, compare the traces, and write a report directory.
    Compare {
        /// Built-in scenario name or path to a scenario TOML file.
        scenario: String,
        /// Report directory.
        #[arg(short, long, default_value = "compare_out")]
        output: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// List or print the built-in scenarios.
    Scenario {
        #[command(subcommand)]
        action: ScenarioAction,
    },
}

#[derive(Subcommand)]
enum ScenarioAction {
    /// Print the names and titles of the built-in scenarios.
    List,
    /// Print a scenario as TOML.
    Show {
        /// Built-in scenario name or path to a scenario TOML file.
        name: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Engine {
    /// Direct field solve on the staggered grid.
    Fit,
    /// Netlist extraction followed by the circuit solve.
    Mna,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Lagged,
    Monolithic,
}

#[derive(Clone, Copy, ValueEnum)]
enum IntegratorArg {
    Be,
    Trap,
}

/// Solver settings that override the scenario's own values.
#[derive(Args, Clone, Copy)]
struct Overrides {
    /// Time step in seconds.
    #[arg(long)]
    dt: Option<f64>,
    /// End time in seconds.
    #[arg(long)]
    tstop: Option<f64>,
    /// Coupling mode of the field solve.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Time integrator of the circuit solve.
    #[arg(long, value_enum)]
    integrator: Option<IntegratorArg>,
    /// Newton tolerance (relative residual reduction).
    #[arg(long)]
    newton_tol: Option<f64>,
    /// Newton iteration budget per time step.
    #[arg(long)]
    max_iter: Option<usize>,
}

fn load_scenario(spec: &str, overrides: &Overrides) -> Result<Scenario> {
    let mut scenario = match builtin(spec) {
        Some(s) => s,
        None => {
            let text = fs::read_to_string(spec).map_err(|e| {
                Error::Scenario(format!("no built-in scenario or readable file {spec:?}: {e}"))
            })?;
            Scenario::from_toml(&text)?
        }
    };
    if let Some(dt) = overrides.dt {
        scenario.solver.dt = dt;
    }
    if let Some(tstop) = overrides.tstop {
        scenario.solver.tstop = tstop;
    }
    if let Some(mode) = overrides.mode {
        scenario.solver.mode = match mode {
            ModeArg::Lagged => CouplingMode::Lagged,
            ModeArg::Monolithic => CouplingMode::Monolithic,
        };
    }
    if let Some(integrator) = overrides.integrator {
        scenario.solver.integrator = match integrator {
            IntegratorArg::Be => Integrator::BackwardEuler,
            IntegratorArg::Trap => Integrator::Trapezoidal,
        };
    }
    if let Some(tol) = overrides.newton_tol {
        scenario.solver.newton_tol = tol;
    }
    if let Some(max_iter) = overrides.max_iter {
        scenario.solver.max_iter = max_iter;
    }
    Ok(scenario)
}

fn netlist_title(scenario: &Scenario) -> String {
    if scenario.title.is_empty() {
        scenario.name.clone()
    } else {
        format!("{}: {}", scenario.name, scenario.title)
    }
}

fn extract_text(scenario: &Scenario) -> Result<String> {
    let built = scenario.build()?;
    let tran = Tran {
        dt: scenario.solver.dt,
        tstop: scenario.solver.tstop,
    };
    let netlist = generate_netlist(
        &built.grid,
        &built.materials,
        &built.matrices,
        &built.bcs,
        tran,
        &netlist_title(scenario),
    )?;
    Ok(emit(&netlist))
}

fn simulate(engine: Engine, scenario: &Scenario) -> Result<TransientTrace> {
    let built = scenario.build()?;
    match engine {
        Engine::Fit => {
            let ops = IncidenceOperators::build(&built.grid);
            let solver = FieldSolver::new(
                &built.grid,
                &ops,
                &built.materials,
                &built.matrices,
                &built.bcs,
            )?;
            solver.run(&scenario.solver_options())
        }
        Engine::Mna => {
            let text = extract_text(scenario)?;
            let netlist = parse(&text)?;
            let mna = MnaSystem::assemble(&netlist)?;
            for warning in mna.warnings() {
                eprintln!("warning: {warning}");
            }
            let newton = NewtonOptions {
                tol: scenario.solver.newton_tol,
                max_iter: scenario.solver.max_iter,
            };
            let transient = mna.solve_transient(
                scenario.solver.dt,
                scenario.solver.tstop,
                scenario.solver.integrator,
                &newton,
            )?;
            Ok(mna.grid_trace(&transient))
        }
    }
}

fn write_text(output: Option<&PathBuf>, content: &str) -> Result<()> {
    match output {
        Some(path) => fs::write(path, content)?,
        None => print!("{content}"),
    }
    Ok(())
}

fn write_trace(output: Option<&PathBuf>, trace: &TransientTrace) -> Result<()> {
    match output {
        Some(path) => trace.write_csv(BufWriter::new(File::create(path)?)),
        None => trace.write_csv(io::stdout().lock()),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Extract {
            scenario,
            output,
            overrides,
        } => {
            let scenario = load_scenario(&scenario, &overrides)?;
            write_text(output.as_ref(), &extract_text(&scenario)?)
        }
        Command::Simulate {
            engine,
            scenario,
            output,
            overrides,
        } => {
            let scenario = load_scenario(&scenario, &overrides)?;
            let trace = simulate(engine, &scenario)?;
            write_trace(output.as_ref(), &trace)
        }
        Command::Compare {
            scenario,
            output,
            overrides,
        } => {
            let scenario = load_scenario(&scenario, &overrides)?;
            let report = run_compare(&scenario)?;
            report.write_artifacts(&output)?;
            print!("{}", report.summary());
            eprintln!("report written to {}", output.display());
            Ok(())
        }
        Command::Scenario { action } => match action {
            ScenarioAction::List => {
                for name in BUILTIN_NAMES {
                    let scenario = builtin(name).expect("listed scenario exists");
                    println!("{name:<22} {}", scenario.title);
                }
                Ok(())
            }
            ScenarioAction::Show { name } => {
                let scenario = load_scenario(&name, &Overrides::default())?;
                print!("{}", scenario.to_toml());
                Ok(())
            }
        },
    }
}

impl Default for Overrides {
    fn default() -> Self {
        Overrides {
            dt: None,
            tstop: None,
            mode: None,
            integrator: None,
            newton_tol: None,
            max_iter: None,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not errors.
            if e.use_stderr() {
                e.print().ok();
                return ExitCode::from(1);
            }
            e.print().ok();
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::NoConvergence { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

// Keep the derive definitions honest.
#[test]
fn cli_definition_is_consistent() {
    use clap::CommandFactory;
    Cli::command().debug_assert();
}
