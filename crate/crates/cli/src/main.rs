//! Command-line front end: scenario runs, open/closed-loop comparison,
//! parameter sweeps, and the property-validation suite.
//!
//! Exit codes: 0 success, 2 configuration error, 3 solver error,
//! 4 validation failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use trafficwave::runner::{
    self, Policy, RunResult, SweepEntry, SweepParam, TerminalStatus,
};
use trafficwave::scenario::{load_scenario, Scenario};
use trafficwave::validate::validate;
use trafficwave::SimError;

#[derive(Parser)]
#[command(
    name = "trafficwave",
    version,
    about = "Moving-shockwave traffic simulation with bilateral boundary control"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario under one policy; write trace and profile CSVs.
    Run {
        /// Scenario file (TOML); omit for built-in defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Boundary policy: backstepping | open_loop.
        #[arg(long, default_value = "backstepping")]
        policy: String,
        /// Output directory for CSV files.
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Horizon override, seconds.
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// Run both policies on identical initialization; write the aligned
    /// comparison plus both traces.
    Compare {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// Independent runs over a declared sweepable parameter
    /// (amplitude_scale | gain_scale | n_cells | dt_s).
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Parameter name.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long)]
        values: String,
        #[arg(long, default_value = "backstepping")]
        policy: String,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// Execute every module's invariant checks with fixed seeds.
    Validate {
        /// Seed for the randomized property checks.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                SimError::Config(_) | SimError::InfeasibleSetpoint { .. } | SimError::NonPositive { .. } => 2,
                _ => 3,
            }
        }
    };
    ExitCode::from(code)
}

fn dispatch(cli: Cli) -> Result<u8, SimError> {
    match cli.command {
        Command::Run { config, policy, out_dir, horizon } => {
            let scenario = load(config.as_deref(), horizon)?;
            let policy: Policy = policy.parse()?;
            println!("policy: {policy}");
            let result = runner::run(&scenario, policy)?;
            write_run_outputs(&result, &out_dir, "trace.csv")?;
            report_run(&result);
            match result.status {
                TerminalStatus::SolverError(_) => Ok(3),
                _ => Ok(0),
            }
        }
        Command::Compare { config, out_dir, horizon } => {
            let scenario = load(config.as_deref(), horizon)?;
            let (closed, open) = runner::compare(&scenario)?;
            fs::create_dir_all(&out_dir).map_err(io_err)?;
            let mut buf = Vec::new();
            runner::write_compare_csv(&closed, &open, &mut buf).map_err(io_err)?;
            fs::write(out_dir.join("compare.csv"), buf).map_err(io_err)?;
            write_run_outputs(&closed, &out_dir, "trace_backstepping.csv")?;
            write_run_outputs(&open, &out_dir, "trace_open_loop.csv")?;
            println!("— closed loop (backstepping):");
            report_run(&closed);
            println!("— open loop:");
            report_run(&open);
            let solver_error = matches!(closed.status, TerminalStatus::SolverError(_))
                || matches!(open.status, TerminalStatus::SolverError(_));
            Ok(if solver_error { 3 } else { 0 })
        }
        Command::Sweep { config, param, values, policy, out_dir, horizon } => {
            let scenario = load(config.as_deref(), horizon)?;
            let param: SweepParam = param.parse()?;
            let policy: Policy = policy.parse()?;
            let values = parse_values(&values)?;
            let entries = runner::sweep(&scenario, param, &values, policy);
            fs::create_dir_all(&out_dir).map_err(io_err)?;
            write_sweep_summary(&entries, &out_dir)?;
            let mut failures = 0;
            for entry in &entries {
                match &entry.outcome {
                    Ok(result) => {
                        let name = format!("trace_{}.csv", fmt_value(entry.value));
                        write_run_outputs(result, &out_dir, &name)?;
                        println!("value {}: {}", entry.value, result.status);
                    }
                    Err(e) => {
                        failures += 1;
                        println!("value {}: error: {e}", entry.value);
                    }
                }
            }
            Ok(if failures > 0 { 3 } else { 0 })
        }
        Command::Validate { seed } => {
            let report = validate(seed);
            for check in &report.checks {
                let tag = if check.passed { "PASS" } else { "FAIL" };
                println!("{tag} {} — {}", check.name, check.detail);
            }
            let n_pass = report.checks.iter().filter(|c| c.passed).count();
            println!("{n_pass}/{} checks passed", report.checks.len());
            Ok(if report.all_passed() { 0 } else { 4 })
        }
    }
}

fn load(config: Option<&Path>, horizon: Option<f64>) -> Result<Scenario, SimError> {
    let (mut scenario, echoes) = match config {
        Some(path) => load_scenario(path)?,
        None => {
            println!("no --config given; using built-in default scenario");
            Scenario::builtin_default()
        }
    };
    for line in &echoes {
        println!("{line}");
    }
    if let Some(h) = horizon {
        scenario.horizon = h;
        println!("horizon overridden to {h} s");
    }
    scenario.validate()?;
    Ok(scenario)
}

fn parse_values(text: &str) -> Result<Vec<f64>, SimError> {
    let mut values = Vec::new();
    for part in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        values.push(
            part.parse::<f64>()
                .map_err(|_| SimError::Config(format!("sweep value {part:?} is not a number")))?,
        );
    }
    Ok(values)
}

fn fmt_value(v: f64) -> String {
    format!("{v}").replace('.', "p")
}

fn io_err(e: std::io::Error) -> SimError {
    SimError::Config(format!("i/o error: {e}"))
}

fn write_run_outputs(result: &RunResult, out_dir: &Path, trace_name: &str) -> Result<(), SimError> {
    fs::create_dir_all(out_dir).map_err(io_err)?;
    let mut buf = Vec::new();
    runner::write_trace_csv(result, &mut buf).map_err(io_err)?;
    fs::write(out_dir.join(trace_name), buf).map_err(io_err)?;
    for snapshot in &result.snapshots {
        let mut buf = Vec::new();
        runner::write_profile_csv(snapshot, &mut buf).map_err(io_err)?;
        let name = format!("profile_t{}s.csv", fmt_value(snapshot.t));
        fs::write(out_dir.join(name), buf).map_err(io_err)?;
    }
    if let Some(residuals) = &result.residuals {
        let mut buf = Vec::new();
        runner::write_residuals_csv(residuals, &mut buf).map_err(io_err)?;
        fs::write(out_dir.join("residuals.csv"), buf).map_err(io_err)?;
    }
    Ok(())
}

fn report_run(result: &RunResult) {
    println!("status: {}", result.status);
    let saturated = result
        .trace
        .iter()
        .filter(|r| r.events.saturated_in || r.events.saturated_out)
        .count();
    if saturated > 0 {
        println!("saturation events: {saturated} steps clamped");
    }
    if let Some(settle) = result.summary.settle_time {
        println!("front settled within {} m of the setpoint from t = {settle} s", runner::SETTLE_BAND_M);
    }
    if let Some(exit) = result.summary.exit_time {
        println!("front left the segment at t = {exit} s");
    }
    println!("max |input deviation|: {} veh/m", result.summary.max_abs_u);
    if let Some(decay) = &result.summary.decay {
        println!(
            "Lyapunov decay fit over [{}, {}] s: sigma0 = {}, r^2 = {}",
            runner::FIT_WINDOW_S.0, runner::FIT_WINDOW_S.1, decay.sigma0, decay.r_squared
        );
    }
    if let Some(rep) = &result.residuals {
        println!(
            "target-system residuals: boundary {:.3e}/{:.3e}, interior RMS {:.3e}/{:.3e}, ode {:.3e}",
            rep.bc_inlet, rep.bc_outlet, rep.pde_free_rms, rep.pde_congested_rms, rep.ode
        );
    }
}

fn write_sweep_summary(entries: &[SweepEntry], out_dir: &Path) -> Result<(), SimError> {
    let mut buf = Vec::new();
    writeln!(
        buf,
        "value,status,settle_time_s,exit_time_s,max_abs_u_veh_per_m,sigma0,r_squared"
    )
    .map_err(io_err)?;
    for entry in entries {
        match &entry.outcome {
            Ok(r) => {
                let (sigma0, r2) = r
                    .summary
                    .decay
                    .as_ref()
                    .map(|d| (format!("{}", d.sigma0), format!("{}", d.r_squared)))
                    .unwrap_or_default();
                writeln!(
                    buf,
                    "{},{},{},{},{},{},{}",
                    entry.value,
                    r.status,
                    r.summary.settle_time.map(|v| format!("{v}")).unwrap_or_default(),
                    r.summary.exit_time.map(|v| format!("{v}")).unwrap_or_default(),
                    r.summary.max_abs_u,
                    sigma0,
                    r2
                )
                .map_err(io_err)?;
            }
            Err(e) => {
                writeln!(buf, "{},error: {e},,,,,", entry.value).map_err(io_err)?;
            }
        }
    }
    fs::write(out_dir.join("sweep_summary.csv"), buf).map_err(io_err)?;
    Ok(())
}
