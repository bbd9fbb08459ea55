//! Run orchestration: the fixed-step simulation loop, open/closed-loop
//! comparison, parameter sweeps, and the CSV output contract.
//!
//! A single run is strictly sequential and deterministic (identical scenario
//! bytes produce identical output bytes). Sweeps and comparison runs execute
//! independent plant instances and may run them in parallel (`parallel`
//! feature, on by default); results are collected in input order either way.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::control::{
    apply_boundary, backstepping_controls_self_consistent, demand_hold_controls,
};
use crate::diagnostics::{
    decay_rate_fit, h1_norm, lyapunov, z_metric, DecayFit, EventFlags, LyapunovWeights,
    MetricsRecord,
};
use crate::error::{Result, SimError};
use crate::plant::{DomainSide, Plant, PlantState, Validity};
use crate::scenario::{ModeChoice, Scenario};
use crate::transform::{forward_transform, target_residual, ResidualReport};

/// Front-position band (m) around the setpoint that counts as settled.
pub const SETTLE_BAND_M: f64 = 5.0;

/// Decay-fit window used for the run summary, s.
pub const FIT_WINDOW_S: (f64, f64) = (2.0, 40.0);

/// Boundary policy for a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    /// Bilateral backstepping state feedback.
    Backstepping,
    /// No metering: boundary densities hold their initial-profile values.
    OpenLoop,
}

impl FromStr for Policy {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "backstepping" => Ok(Policy::Backstepping),
            "open_loop" => Ok(Policy::OpenLoop),
            other => Err(SimError::Config(format!(
                "policy {other:?} must be \"backstepping\" or \"open_loop\""
            ))),
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::Backstepping => write!(f, "backstepping"),
            Policy::OpenLoop => write!(f, "open_loop"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TerminalStatus {
    Completed,
    DomainExit { side: DomainSide, t: f64 },
    SolverError(String),
}

impl fmt::Display for TerminalStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TerminalStatus::Completed => write!(f, "completed"),
            TerminalStatus::DomainExit { side: DomainSide::Upstream, t } => {
                write!(f, "domain_exit_upstream at t = {t} s")
            }
            TerminalStatus::DomainExit { side: DomainSide::Downstream, t } => {
                write!(f, "domain_exit_downstream at t = {t} s")
            }
            TerminalStatus::SolverError(msg) => write!(f, "solver_error: {msg}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    /// First trace time from which the front stays within the settle band.
    pub settle_time: Option<f64>,
    /// Exit time for runs that left the segment.
    pub exit_time: Option<f64>,
    /// Largest applied input magnitude over the run, veh/m.
    pub max_abs_u: f64,
    /// Exponential decay fit of the Lyapunov trace over [`FIT_WINDOW_S`].
    pub decay: Option<DecayFit>,
}

/// Density profile retained at a configured time.
#[derive(Debug, Clone)]
pub struct ProfileSnapshot {
    pub t: f64,
    pub state: PlantState,
}

/// Vehicle bookkeeping of a finite-volume run.
#[derive(Debug, Clone, Copy)]
pub struct ConservationAudit {
    pub initial_vehicles: f64,
    pub final_vehicles: f64,
    /// Cumulative vehicles through the inlet / outlet faces.
    pub inflow: f64,
    pub outflow: f64,
}

impl ConservationAudit {
    /// Count drift net of boundary throughput, relative to the initial count.
    pub fn relative_drift(&self) -> f64 {
        ((self.final_vehicles - self.initial_vehicles) - (self.inflow - self.outflow)).abs()
            / self.initial_vehicles
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub trace: Vec<MetricsRecord>,
    pub status: TerminalStatus,
    pub summary: RunSummary,
    pub snapshots: Vec<ProfileSnapshot>,
    pub conservation: Option<ConservationAudit>,
    /// Target-system residuals (closed-loop characteristics runs).
    pub residuals: Option<ResidualReport>,
    pub lambda: f64,
}

impl RunResult {
    pub fn completed(&self) -> bool {
        matches!(self.status, TerminalStatus::Completed)
    }
}

/// Runs one scenario under one policy.
pub fn run(scenario: &Scenario, policy: Policy) -> Result<RunResult> {
    let r = scenario.resolve()?;
    let weights = LyapunovWeights::default_for(&r.gains, &r.params);
    let dt = scenario.dt;
    let n_steps = (scenario.horizon / dt).round().max(1.0) as usize;

    let history_horizon = 2.0 * r.sp.length / r.params.u;
    let mut in_h = crate::history::InputHistory::new(history_horizon);
    let mut out_h = crate::history::InputHistory::new(history_horizon);
    let mut plant = Plant::new(r.fd, r.sp, r.params, r.mode, scenario.n_cells, &r.ic)?;
    plant.seed_histories(&r.ic, &mut in_h, &mut out_h, dt);
    plant.materialize(&in_h, &out_h)?;

    let initial_vehicles = plant.exact_vehicle_count();
    let snapshot_times = scenario.snapshot_schedule();
    let mut snapshots: Vec<ProfileSnapshot> = Vec::new();
    let residual_stride = (n_steps / 240).max(1);
    let mut residual_traj: Vec<PlantState> = Vec::new();

    let mut trace: Vec<MetricsRecord> = Vec::with_capacity(n_steps + 1);
    let mut status = TerminalStatus::Completed;

    for k in 0..=n_steps {
        let t = plant.t();
        let input = match policy {
            Policy::Backstepping => {
                backstepping_controls_self_consistent(plant.state(), &r.sp, &r.gains, &r.params)
            }
            Policy::OpenLoop => demand_hold_controls(&r.ic, r.sp.length, t),
        };
        let applied = apply_boundary(
            &input,
            &r.sp,
            &r.fd,
            scenario.saturation_margin_frac,
            &mut in_h,
            &mut out_h,
        );
        plant.materialize(&in_h, &out_h)?;

        let state = plant.state();
        let target = forward_transform(state, &r.sp, &r.gains, &r.params);
        let lc = lyapunov(&target, &weights);
        let (dev_f, dev_c) = state.deviations(&r.sp);
        let record = MetricsRecord {
            t,
            l: state.l,
            x_dev: state.l - r.sp.l_star,
            u_in: applied.u_in,
            u_out: applied.u_out,
            lyapunov: lc,
            h1_free: h1_norm(&dev_f)?,
            h1_congested: h1_norm(&dev_c)?,
            z: z_metric(state, &r.sp)?,
            events: EventFlags {
                saturated_in: applied.saturated_in,
                saturated_out: applied.saturated_out,
                domain_exit: None,
            },
        };
        trace.push(record);

        let wants_snapshot = snapshot_times.iter().any(|&ts| (ts - t).abs() <= 0.5 * dt);
        if wants_snapshot && !snapshots.iter().any(|s| (s.t - t).abs() < 0.25 * dt) {
            snapshots.push(ProfileSnapshot { t, state: state.clone() });
        }
        if k % residual_stride == 0 {
            residual_traj.push(state.clone());
        }

        if k == n_steps {
            break;
        }
        if let Err(e) = plant.step(&in_h, &out_h, dt) {
            status = TerminalStatus::SolverError(e.to_string());
            break;
        }
        if let Validity::Exit { side, t: t_exit } = plant.validity() {
            if let Some(last) = trace.last_mut() {
                last.events.domain_exit = Some(side);
            }
            status = TerminalStatus::DomainExit { side, t: t_exit };
            break;
        }
    }

    let settle_time = settle_time(&trace, r.sp.l_star, matches!(status, TerminalStatus::Completed));
    let exit_time = match status {
        TerminalStatus::DomainExit { t, .. } => Some(t),
        _ => None,
    };
    let max_abs_u =
        trace.iter().map(|rec| rec.u_in.abs().max(rec.u_out.abs())).fold(0.0, f64::max);
    let times: Vec<f64> = trace.iter().map(|rec| rec.t).collect();
    let values: Vec<f64> = trace.iter().map(|rec| rec.lyapunov.v).collect();
    let decay = decay_rate_fit(&times, &values, FIT_WINDOW_S).ok();

    let conservation = initial_vehicles.map(|initial| {
        let (inflow, outflow) = plant.boundary_throughput().unwrap();
        ConservationAudit {
            initial_vehicles: initial,
            final_vehicles: plant.exact_vehicle_count().unwrap(),
            inflow,
            outflow,
        }
    });
    let residuals = if policy == Policy::Backstepping
        && scenario.mode == ModeChoice::Characteristics
        && residual_traj.len() >= 3
        && matches!(status, TerminalStatus::Completed)
    {
        target_residual(&residual_traj, &r.sp, &r.gains, &r.params).ok()
    } else {
        None
    };

    Ok(RunResult {
        trace,
        status,
        summary: RunSummary { settle_time, exit_time, max_abs_u, decay },
        snapshots,
        conservation,
        residuals,
        lambda: weights.lambda,
    })
}

fn settle_time(trace: &[MetricsRecord], l_star: f64, completed: bool) -> Option<f64> {
    if !completed || trace.is_empty() {
        return None;
    }
    let mut settled_from: Option<f64> = None;
    for rec in trace {
        if (rec.l - l_star).abs() <= SETTLE_BAND_M {
            settled_from.get_or_insert(rec.t);
        } else {
            settled_from = None;
        }
    }
    settled_from
}

/// Runs both policies on identical initialization.
pub fn compare(scenario: &Scenario) -> Result<(RunResult, RunResult)> {
    #[cfg(feature = "parallel")]
    {
        let (closed, open) =
            rayon::join(|| run(scenario, Policy::Backstepping), || run(scenario, Policy::OpenLoop));
        Ok((closed?, open?))
    }
    #[cfg(not(feature = "parallel"))]
    {
        Ok((run(scenario, Policy::Backstepping)?, run(scenario, Policy::OpenLoop)?))
    }
}

/// A swept parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    /// Scales both initial deviation amplitudes.
    AmplitudeScale,
    /// Scales both gains.
    GainScale,
    /// Cell count per subdomain.
    NCells,
    /// Master time step, s.
    DtS,
}

impl SweepParam {
    pub const NAMES: [&'static str; 4] = ["amplitude_scale", "gain_scale", "n_cells", "dt_s"];

    pub fn apply(&self, base: &Scenario, value: f64) -> Result<Scenario> {
        let mut s = base.clone();
        match self {
            SweepParam::AmplitudeScale => {
                s.amp_f = base.amp_f * value;
                s.amp_c = base.amp_c * value;
            }
            SweepParam::GainScale => {
                s.k_f = base.k_f * value;
                s.k_c = base.k_c * value;
            }
            SweepParam::NCells => {
                if value < 2.0 || value.fract() != 0.0 {
                    return Err(SimError::Config(format!(
                        "n_cells sweep value {value} must be an integer >= 2"
                    )));
                }
                s.n_cells = value as usize;
            }
            SweepParam::DtS => s.dt = value,
        }
        s.validate()?;
        Ok(s)
    }
}

impl FromStr for SweepParam {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "amplitude_scale" => Ok(SweepParam::AmplitudeScale),
            "gain_scale" => Ok(SweepParam::GainScale),
            "n_cells" => Ok(SweepParam::NCells),
            "dt_s" => Ok(SweepParam::DtS),
            other => Err(SimError::Config(format!(
                "parameter {other:?} is not sweepable; declared keys: {}",
                Self::NAMES.join(", ")
            ))),
        }
    }
}

/// One sweep entry: the parameter value and its isolated run outcome.
pub struct SweepEntry {
    pub value: f64,
    pub outcome: Result<RunResult>,
}

/// Independent runs, one per value, keyed by value and returned in input
/// order. Uses the rayon pool when the `parallel` feature is enabled.
pub fn sweep(scenario: &Scenario, param: SweepParam, values: &[f64], policy: Policy) -> Vec<SweepEntry> {
    run_batch(scenario, param, values, policy, cfg!(feature = "parallel"))
}

/// Sequential fallback with identical results; also the baseline the bench
/// suite compares the parallel path against.
pub fn sweep_sequential(
    scenario: &Scenario,
    param: SweepParam,
    values: &[f64],
    policy: Policy,
) -> Vec<SweepEntry> {
    run_batch(scenario, param, values, policy, false)
}

fn run_one_value(scenario: &Scenario, param: SweepParam, value: f64, policy: Policy) -> SweepEntry {
    let outcome = param.apply(scenario, value).and_then(|s| run(&s, policy));
    SweepEntry { value, outcome }
}

#[cfg(feature = "parallel")]
fn run_batch(
    scenario: &Scenario,
    param: SweepParam,
    values: &[f64],
    policy: Policy,
    parallel: bool,
) -> Vec<SweepEntry> {
    use rayon::prelude::*;
    if parallel {
        values.par_iter().map(|&v| run_one_value(scenario, param, v, policy)).collect()
    } else {
        values.iter().map(|&v| run_one_value(scenario, param, v, policy)).collect()
    }
}

#[cfg(not(feature = "parallel"))]
fn run_batch(
    scenario: &Scenario,
    param: SweepParam,
    values: &[f64],
    policy: Policy,
    _parallel: bool,
) -> Vec<SweepEntry> {
    values.iter().map(|&v| run_one_value(scenario, param, v, policy)).collect()
}

// ---------------------------------------------------------------------------
// CSV contract
// ---------------------------------------------------------------------------

pub const TRACE_HEADER: &str =
    "t_s,l_m,X_m,u_in_veh_per_m,u_out_veh_per_m,V,V1,V2,V3,V4,V5,h1_free,h1_congested,Z,event";

/// One row per master step, unit-suffixed self-describing columns.
pub fn write_trace_csv(result: &RunResult, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for r in &result.trace {
        let lc = &r.lyapunov;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.t,
            r.l,
            r.x_dev,
            r.u_in,
            r.u_out,
            lc.v,
            lc.v1,
            lc.v2,
            lc.v3,
            lc.v4,
            lc.v5,
            r.h1_free,
            r.h1_congested,
            r.z,
            r.events
        )?;
    }
    Ok(())
}

/// Density profile snapshot: `x_m, rho_veh_per_km, regime`, free rows first.
/// The front position appears once per regime, exposing the one-sided pair.
pub fn write_profile_csv(snapshot: &ProfileSnapshot, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "x_m,rho_veh_per_km,regime")?;
    let s = &snapshot.state;
    for (i, &v) in s.free.samples().iter().enumerate() {
        writeln!(out, "{},{},free", s.free.node(i), v * 1000.0)?;
    }
    for (i, &v) in s.congested.samples().iter().enumerate() {
        writeln!(out, "{},{},congested", s.congested.node(i), v * 1000.0)?;
    }
    Ok(())
}

/// Aligned open/closed comparison; the row count is the shorter trace length.
pub fn write_compare_csv(
    closed: &RunResult,
    open: &RunResult,
    out: &mut dyn Write,
) -> std::io::Result<()> {
    writeln!(
        out,
        "t_s,l_closed_m,l_open_m,u_in_closed_veh_per_m,u_out_closed_veh_per_m,u_in_open_veh_per_m,u_out_open_veh_per_m,V_closed,V_open"
    )?;
    for (c, o) in closed.trace.iter().zip(open.trace.iter()) {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            c.t, c.l, o.l, c.u_in, c.u_out, o.u_in, o.u_out, c.lyapunov.v, o.lyapunov.v
        )?;
    }
    Ok(())
}

/// Single-row residual report.
pub fn write_residuals_csv(report: &ResidualReport, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(
        out,
        "pde_free_max,pde_congested_max,pde_free_rms,pde_congested_rms,bc_inlet,bc_outlet,ode"
    )?;
    writeln!(
        out,
        "{},{},{},{},{},{},{}",
        report.pde_free,
        report.pde_congested,
        report.pde_free_rms,
        report.pde_congested_rms,
        report.bc_inlet,
        report.bc_outlet,
        report.ode
    )
}
