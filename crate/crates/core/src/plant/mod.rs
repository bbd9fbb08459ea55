//! Coupled PDE–ODE plant: two density fields on moving subdomains joined by
//! the tracked shock front `l(t)`.
//!
//! Two backends advance the same state: an exact linearized solver that reads
//! the fields off the boundary-input histories along characteristics, and a
//! nonlinear Godunov finite-volume solver on meshes that stretch with the
//! front.

mod characteristics;
mod finite_volume;

pub use characteristics::free_lookup_time;

use crate::error::{Result, SimError};
use crate::field::DensityField;
use crate::fundamental::{DerivedParams, FundamentalDiagram, Setpoint};
use crate::history::InputHistory;

use characteristics::CharBackend;
use finite_volume::FvBackend;

/// Numerical realization of the plant dynamics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PlantMode {
    /// Exact transport of deviations along characteristics, RK4 on the front.
    LinearizedCharacteristics,
    /// Conservative first-order Godunov scheme with front tracking.
    NonlinearFiniteVolume { cfl: f64 },
}

/// Snapshot of the full plant state at one instant.
#[derive(Debug, Clone)]
pub struct PlantState {
    /// Absolute density on `[0, l]`, veh/m.
    pub free: DensityField,
    /// Absolute density on `[l, L]`, veh/m.
    pub congested: DensityField,
    /// Interface position, m.
    pub l: f64,
    /// Time, s.
    pub t: f64,
}

impl PlantState {
    pub fn length(&self) -> f64 {
        self.congested.right()
    }

    /// Deviation fields relative to a setpoint (same lattices).
    pub fn deviations(&self, sp: &Setpoint) -> (DensityField, DensityField) {
        (
            self.free.map(|v| v - sp.rho_f_star),
            self.congested.map(|v| v - sp.rho_c_star),
        )
    }
}

/// Which end of the segment the front left through.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainSide {
    Upstream,
    Downstream,
}

/// Model-validity status of a state: the front must stay strictly inside the
/// segment with at least one nominal cell width to spare.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Validity {
    Valid,
    Exit { side: DomainSide, t: f64 },
}

/// Front speed from the one-sided densities at the interface:
/// `v_m - (v_m/rho_m)(rho_c + rho_f)`.
///
/// For the quadratic flux this equals the Rankine–Hugoniot quotient
/// `(Q(rho_c) - Q(rho_f)) / (rho_c - rho_f)` identically whenever the
/// densities differ, and extends it continuously when they coincide.
pub fn interface_speed(rho_f_at_l: f64, rho_c_at_l: f64, fd: &FundamentalDiagram) -> f64 {
    fd.v_m() - (fd.v_m() / fd.rho_m()) * (rho_c_at_l + rho_f_at_l)
}

/// Density at position `x`, interpolated within the owning subdomain. At the
/// interface itself this returns the free-side (upstream) value; use
/// [`sample_interface_pair`] for both one-sided values.
pub fn sample_density(state: &PlantState, x: f64) -> Result<f64> {
    let length = state.length();
    if !(0.0..=length).contains(&x) {
        return Err(SimError::PositionOutOfRange { x, length });
    }
    if x <= state.l {
        state.free.sample(x)
    } else {
        state.congested.sample(x)
    }
}

/// One-sided density pair `(free side, congested side)` at the front.
pub fn sample_interface_pair(state: &PlantState) -> (f64, f64) {
    let f = *state.free.samples().last().unwrap();
    let c = state.congested.samples()[0];
    (f, c)
}

/// Trapezoidal vehicle count over the whole segment.
pub fn total_vehicles(state: &PlantState) -> f64 {
    state.free.total() + state.congested.total()
}

/// Checks `margin <= l <= L - margin`; outside that band the state reports a
/// domain exit stamped with the state's own time.
pub fn check_validity(state_l: f64, length: f64, t: f64, margin: f64) -> Validity {
    if state_l <= margin {
        Validity::Exit { side: DomainSide::Upstream, t }
    } else if state_l >= length - margin {
        Validity::Exit { side: DomainSide::Downstream, t }
    } else {
        Validity::Valid
    }
}

/// Initial profile: each deviation field is an amplitude times a tanh ramp
/// anchored at the front, on top of the setpoint step at `l0`.
#[derive(Debug, Clone, Copy)]
pub struct InitialCondition {
    pub l0: f64,
    /// Free-side deviation amplitude, veh/m (value far upstream of the front).
    pub amp_f: f64,
    /// Congested-side deviation amplitude, veh/m (value far downstream).
    pub amp_c: f64,
    /// Ramp width of the soft front, m.
    pub ramp_width: f64,
}

fn ramp(s: f64) -> f64 {
    0.5 * (1.0 + s.tanh())
}

impl InitialCondition {
    /// Free-side deviation at `x`, zero beyond the initial front.
    pub fn dev_f(&self, x: f64) -> f64 {
        if x > self.l0 {
            0.0
        } else {
            self.amp_f * ramp((self.l0 - x) / self.ramp_width)
        }
    }

    /// Congested-side deviation at `x`, zero upstream of the initial front.
    pub fn dev_c(&self, x: f64) -> f64 {
        if x < self.l0 {
            0.0
        } else {
            self.amp_c * ramp((x - self.l0) / self.ramp_width)
        }
    }
}

enum Backend {
    Char(CharBackend),
    Fv(FvBackend),
}

/// A plant instance: one backend plus the materialized state snapshot.
///
/// Single-owner mutable; distinct instances are fully independent and may run
/// on distinct threads.
pub struct Plant {
    fd: FundamentalDiagram,
    sp: Setpoint,
    params: DerivedParams,
    n_cells: usize,
    backend: Backend,
    state: PlantState,
}

impl Plant {
    pub fn new(
        fd: FundamentalDiagram,
        sp: Setpoint,
        params: DerivedParams,
        mode: PlantMode,
        n_cells: usize,
        ic: &InitialCondition,
    ) -> Result<Self> {
        if n_cells < 2 {
            return Err(SimError::Config("n_cells must be at least 2".into()));
        }
        if !(ic.l0 > 0.0 && ic.l0 < sp.length) {
            return Err(SimError::Config(format!(
                "initial front l0 = {} m must lie strictly inside (0, {})",
                ic.l0, sp.length
            )));
        }
        let backend = match mode {
            PlantMode::LinearizedCharacteristics => Backend::Char(CharBackend::new(ic.l0)),
            PlantMode::NonlinearFiniteVolume { cfl } => {
                if !(cfl > 0.0 && cfl <= 1.0) {
                    return Err(SimError::Config(format!("cfl must lie in (0, 1], got {cfl}")));
                }
                Backend::Fv(FvBackend::new(&fd, &sp, n_cells, cfl, ic)?)
            }
        };
        let state = match &backend {
            Backend::Char(_) => {
                // Placeholder until histories are seeded; `materialize` makes
                // it consistent before the first use.
                PlantState {
                    free: DensityField::uniform(0.0, ic.l0, n_cells, sp.rho_f_star),
                    congested: DensityField::uniform(ic.l0, sp.length, n_cells, sp.rho_c_star),
                    l: ic.l0,
                    t: 0.0,
                }
            }
            Backend::Fv(fv) => fv.materialize(&sp),
        };
        Ok(Self { fd, sp, params, n_cells, backend, state })
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn state(&self) -> &PlantState {
        &self.state
    }

    pub fn t(&self) -> f64 {
        match &self.backend {
            Backend::Char(c) => c.t(),
            Backend::Fv(f) => f.t(),
        }
    }

    pub fn l(&self) -> f64 {
        match &self.backend {
            Backend::Char(c) => c.l(),
            Backend::Fv(f) => f.l(),
        }
    }

    /// Validity margin: one nominal cell width of the segment-scale lattice.
    pub fn validity_margin(&self) -> f64 {
        self.sp.length / self.n_cells as f64
    }

    pub fn validity(&self) -> Validity {
        check_validity(self.l(), self.sp.length, self.t(), self.validity_margin())
    }

    /// Pre-loads the boundary-input histories with the initial deviation
    /// fields expressed along characteristics, so the linearized backend's
    /// lookups reproduce the initial profile. Times beyond the initial field
    /// extent seed as zero. No-op for the finite-volume backend, whose cells
    /// carry the initial data directly.
    pub fn seed_histories(
        &self,
        ic: &InitialCondition,
        in_h: &mut InputHistory,
        out_h: &mut InputHistory,
        t_step: f64,
    ) {
        if !matches!(self.backend, Backend::Char(_)) {
            return;
        }
        let u = self.params.u;
        let length = self.sp.length;
        let n_seed = (length / u / t_step).ceil() as usize + 2;
        for k in (1..=n_seed).rev() {
            let tau = -(k as f64) * t_step;
            in_h.record(tau, ic.dev_f(-u * tau));
            let x_c = length + u * tau;
            out_h.record(tau, if x_c >= 0.0 { ic.dev_c(x_c) } else { 0.0 });
        }
    }

    /// Advances one master step. The characteristics backend integrates the
    /// front ODE with RK4, sampling the delayed inputs at stage times; the
    /// finite-volume backend sub-steps under its CFL bound with the newest
    /// recorded boundary densities held over the step.
    pub fn step(&mut self, in_h: &InputHistory, out_h: &InputHistory, dt: f64) -> Result<()> {
        match &mut self.backend {
            Backend::Char(c) => {
                c.step(in_h, out_h, &self.sp, &self.params, dt)?;
            }
            Backend::Fv(f) => {
                let bc_in = self.sp.rho_f_star + in_h.eval(f.t())?;
                let bc_out = self.sp.rho_c_star + out_h.eval(f.t())?;
                f.step(&self.fd, bc_in, bc_out, dt)?;
            }
        }
        if matches!(self.validity(), Validity::Valid) {
            self.materialize(in_h, out_h)?;
        }
        Ok(())
    }

    /// Rebuilds the state snapshot from the backend. For the characteristics
    /// backend this re-reads the histories, so freshly recorded boundary
    /// inputs become the boundary node values.
    pub fn materialize(&mut self, in_h: &InputHistory, out_h: &InputHistory) -> Result<()> {
        self.state = match &self.backend {
            Backend::Char(c) => c.materialize(in_h, out_h, &self.sp, &self.params, self.n_cells)?,
            Backend::Fv(f) => f.materialize(&self.sp),
        };
        Ok(())
    }

    /// Cumulative vehicles through the inlet and outlet faces (exact
    /// discrete bookkeeping); available on the finite-volume backend only.
    pub fn boundary_throughput(&self) -> Option<(f64, f64)> {
        match &self.backend {
            Backend::Fv(f) => Some(f.throughput()),
            Backend::Char(_) => None,
        }
    }

    /// Exact discrete vehicle count from the finite-volume cell masses.
    pub fn exact_vehicle_count(&self) -> Option<f64> {
        match &self.backend {
            Backend::Fv(f) => Some(f.vehicle_count()),
            Backend::Char(_) => None,
        }
    }
}
