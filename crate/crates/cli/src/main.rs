//! `efc`: run, certify and plot emergency frequency control scenarios.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use efc_core::checks::{check_scenario, Outcome};
use efc_core::oracle::{solve_tsoefc, TsoefcProblem};
use efc_core::runner::{emit_oracle, emit_plots, emit_report, emit_timeseries, run, PLOT_SCRIPTS};
use efc_core::scenario::LawMode;
use efc_core::{EfcError, ScenarioF64};

#[derive(Parser)]
#[command(name = "efc", version, about = "Distributed emergency frequency control simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write CSVs, report and plot scripts.
    Run {
        /// Scenario file, or the name of a bundled scenario.
        scenario: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "auto")]
        law: LawArg,
        /// Override the scenario's dead-zone setting.
        #[arg(long, value_enum)]
        dead_zone: Option<Toggle>,
        /// Override the scenario's line-constraint setting.
        #[arg(long, value_enum)]
        constraints: Option<Toggle>,
        /// Override the simulated horizon in seconds.
        #[arg(long)]
        t_end: Option<f64>,
    },
    /// Solve the steady-state optimization problem only.
    Oracle {
        scenario: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the acceptance suite; exit status 0 iff every criterion passes.
    Check { scenario: String },
    /// Write plot scripts for a run directory and render them with python3.
    Plot {
        dir: PathBuf,
        /// Only write the scripts.
        #[arg(long)]
        no_render: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum LawArg {
    Auto,
    Semi,
    Fully,
    Droop,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Toggle {
    On,
    Off,
}

impl From<LawArg> for LawMode {
    fn from(l: LawArg) -> Self {
        match l {
            LawArg::Auto => LawMode::Auto,
            LawArg::Semi => LawMode::Semi,
            LawArg::Fully => LawMode::Fully,
            LawArg::Droop => LawMode::Droop,
        }
    }
}

const DEFAULT_THRESHOLD_HZ: f64 = 49.8;

fn load(source: &str) -> Result<ScenarioF64> {
    ScenarioF64::resolve(source).with_context(|| format!("loading scenario `{source}`"))
}

fn cmd_run(source: &str, out: &Path, law: LawArg, dead_zone: Option<Toggle>, constraints: Option<Toggle>, t_end: Option<f64>) -> Result<()> {
    let mut s = load(source)?.with_law(law.into());
    if let Some(t) = dead_zone {
        let threshold = s.dead_zone.as_ref().map_or(DEFAULT_THRESHOLD_HZ, |d| d.threshold_hz);
        s = s.with_dead_zone((t == Toggle::On).then_some(threshold));
    }
    if let Some(c) = constraints {
        s = s.with_constraints(c == Toggle::On);
    }
    if let Some(t) = t_end {
        if !(t > 0.0) {
            return Err(EfcError::Validation("--t-end must be positive".into()).into());
        }
        s = s.with_t_end(t);
    }
    let result = run(&s)?;
    emit_timeseries(&result, out)?;
    emit_report(&result.report, out)?;
    emit_plots(out)?;
    let r = &result.report;
    println!("scenario {} ({} steps)", r.scenario, r.steps);
    println!("settled: {}  steady frequency: {:.6} Hz", r.settled, r.steady_frequency_hz);
    for (k, v) in &r.lcc_power_mw {
        println!("  {k}: {v:.2} MW");
    }
    for (k, v) in &r.line_flow_mw {
        println!("  {k}: {v:.2} MW");
    }
    if let Some(o) = &r.oracle {
        println!("oracle: primal error {:.3e} p.u., KKT stationarity {:.3e}", o.max_primal_error, o.kkt_stationarity);
    }
    println!("outputs written to {}", out.display());
    Ok(())
}

fn cmd_oracle(source: &str, out: &Path) -> Result<()> {
    let s = load(source)?;
    let grid = s.effective_grid();
    let problem = TsoefcProblem::new(grid.clone(), s.final_injections())?;
    let sol = solve_tsoefc(&problem)?;
    emit_oracle(&grid, &sol, out)?;
    println!("objective {:.6e}, active constraints {}", sol.objective, sol.active.len());
    println!("written {}", out.join("oracle.toml").display());
    Ok(())
}

fn cmd_check(source: &str) -> Result<bool> {
    let s = load(source)?;
    let results = check_scenario(&s)?;
    for r in &results {
        println!("{r}");
    }
    let failed = results.iter().filter(|r| r.outcome == Outcome::Fail).count();
    println!("{} passed, {failed} failed, {} skipped", results.iter().filter(|r| r.outcome == Outcome::Pass).count(), results.iter().filter(|r| r.outcome == Outcome::Skip).count());
    Ok(failed == 0)
}

fn cmd_plot(dir: &Path, no_render: bool) -> Result<()> {
    if !dir.join("plant.csv").exists() {
        return Err(EfcError::Validation(format!("{} holds no plant.csv", dir.display())).into());
    }
    let scripts = emit_plots(dir)?;
    if scripts.is_empty() {
        println!("no samples in {}; nothing to plot", dir.display());
        return Ok(());
    }
    if no_render {
        println!("wrote {}", PLOT_SCRIPTS.join(", "));
        return Ok(());
    }
    for script in &scripts {
        let status = std::process::Command::new("python3").arg(script).arg(dir).status().context("starting python3")?;
        if !status.success() {
            anyhow::bail!("{} exited with {status}", script.display());
        }
    }
    println!("rendered plots into {}", dir.display());
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<EfcError>() {
        Some(e) if e.is_input_error() => 1,
        Some(_) => 2,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Run { scenario, out, law, dead_zone, constraints, t_end } => cmd_run(&scenario, &out, law, dead_zone, constraints, t_end).map(|_| true),
        Command::Oracle { scenario, out } => cmd_oracle(&scenario, &out).map(|_| true),
        Command::Check { scenario } => cmd_check(&scenario),
        Command::Plot { dir, no_render } => cmd_plot(&dir, no_render).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
