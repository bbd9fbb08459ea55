//! Exact linearized backend.
//!
//! Around a flux-matched setpoint the deviation fields obey pure transport at
//! speed `u`: the free-side deviation at `(x, t)` equals the inlet input at
//! `t - x/u`, the congested-side deviation equals the outlet input at
//! `t - (L - x)/u`. The fields are therefore read straight off the input
//! histories and only the front ODE needs integrating, which RK4 does with
//! delayed-input sampling at its stage times.

use crate::error::Result;
use crate::field::DensityField;
use crate::fundamental::{DerivedParams, Setpoint};
use crate::history::InputHistory;
use crate::plant::PlantState;

/// Lookup time on the inlet history for the free-side deviation at `(x, t)`.
pub fn free_lookup_time(x: f64, t: f64, u: f64) -> f64 {
    t - x / u
}

#[derive(Debug, Clone)]
pub(crate) struct CharBackend {
    l: f64,
    t: f64,
}

impl CharBackend {
    pub fn new(l0: f64) -> Self {
        Self { l: l0, t: 0.0 }
    }

    pub fn l(&self) -> f64 {
        self.l
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    fn x_dot(
        in_h: &InputHistory,
        out_h: &InputHistory,
        sp: &Setpoint,
        params: &DerivedParams,
        t_q: f64,
        x_q: f64,
    ) -> Result<f64> {
        let l_q = (sp.l_star + x_q).clamp(0.0, sp.length);
        let dev_f = in_h.eval(t_q - l_q / params.u)?;
        let dev_c = out_h.eval(t_q - (sp.length - l_q) / params.u)?;
        Ok(-params.b * (dev_f + dev_c))
    }

    pub fn step(
        &mut self,
        in_h: &InputHistory,
        out_h: &InputHistory,
        sp: &Setpoint,
        params: &DerivedParams,
        dt: f64,
    ) -> Result<()> {
        let t = self.t;
        let x0 = self.l - sp.l_star;
        let k1 = Self::x_dot(in_h, out_h, sp, params, t, x0)?;
        let k2 = Self::x_dot(in_h, out_h, sp, params, t + 0.5 * dt, x0 + 0.5 * dt * k1)?;
        let k3 = Self::x_dot(in_h, out_h, sp, params, t + 0.5 * dt, x0 + 0.5 * dt * k2)?;
        let k4 = Self::x_dot(in_h, out_h, sp, params, t + dt, x0 + dt * k3)?;
        let x1 = x0 + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        self.l = sp.l_star + x1;
        self.t += dt;
        Ok(())
    }

    pub fn materialize(
        &self,
        in_h: &InputHistory,
        out_h: &InputHistory,
        sp: &Setpoint,
        params: &DerivedParams,
        n_cells: usize,
    ) -> Result<PlantState> {
        let t = self.t;
        let u = params.u;
        let mut free = Vec::with_capacity(n_cells + 1);
        for i in 0..=n_cells {
            let x = crate::field::node_position(0.0, self.l, i, n_cells);
            free.push(sp.rho_f_star + in_h.eval(free_lookup_time(x, t, u))?);
        }
        let mut congested = Vec::with_capacity(n_cells + 1);
        for i in 0..=n_cells {
            let x = crate::field::node_position(self.l, sp.length, i, n_cells);
            congested.push(sp.rho_c_star + out_h.eval(t - (sp.length - x) / u)?);
        }
        Ok(PlantState {
            free: DensityField::from_samples(0.0, self.l, free),
            congested: DensityField::from_samples(self.l, sp.length, congested),
            l: self.l,
            t,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fundamental::{derived_params, matched_setpoint, FundamentalDiagram};
    use crate::plant::{InitialCondition, Plant, PlantMode};
    use approx::assert_relative_eq;

    fn plant_with_zero_ic() -> (Plant, InputHistory, InputHistory) {
        let fd = FundamentalDiagram::new(40.0, 0.160).unwrap();
        let sp = matched_setpoint(0.032, 200.0, 500.0, &fd).unwrap();
        let dp = derived_params(&sp, &fd);
        let ic = InitialCondition { l0: 200.0, amp_f: 0.0, amp_c: 0.0, ramp_width: 50.0 };
        let plant = Plant::new(fd, sp, dp, PlantMode::LinearizedCharacteristics, 100, &ic).unwrap();
        let horizon = 2.0 * sp.length / dp.u;
        (plant, InputHistory::new(horizon), InputHistory::new(horizon))
    }

    #[test]
    fn equilibrium_is_a_fixed_point() {
        let (mut plant, mut in_h, mut out_h) = plant_with_zero_ic();
        let dt = 0.01;
        for k in 0..500 {
            in_h.record(k as f64 * dt, 0.0);
            out_h.record(k as f64 * dt, 0.0);
            plant.step(&in_h, &out_h, dt).unwrap();
        }
        assert_eq!(plant.l(), 200.0);
        let state = plant.state();
        for &v in state.free.samples() {
            assert_eq!(v, 0.032);
        }
        for &v in state.congested.samples() {
            assert_eq!(v, 0.128);
        }
    }

    #[test]
    fn constant_inlet_input_transports_a_step() {
        let (mut plant, mut in_h, mut out_h) = plant_with_zero_ic();
        let dt = 0.01;
        let eps = 1e-4;
        let n_steps = 400; // t = 4 s, front of the step at u t = 96 m
        for k in 0..n_steps {
            in_h.record(k as f64 * dt, eps);
            out_h.record(k as f64 * dt, 0.0);
            plant.step(&in_h, &out_h, dt).unwrap();
        }
        let t = plant.t();
        let u = 24.0;
        let state = plant.state();
        for (i, &v) in state.free.samples().iter().enumerate() {
            let x = state.free.node(i);
            let dev = v - 0.032;
            if x < u * t - u * dt {
                assert_relative_eq!(dev, eps, max_relative = 1e-12);
            } else if x > u * t + u * dt {
                assert_relative_eq!(dev, 0.0, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn seeded_initial_profile_is_reproduced_at_t0() {
        let fd = FundamentalDiagram::new(40.0, 0.160).unwrap();
        let sp = matched_setpoint(0.032, 200.0, 500.0, &fd).unwrap();
        let dp = derived_params(&sp, &fd);
        let ic = InitialCondition { l0: 330.0, amp_f: 0.012, amp_c: 0.012, ramp_width: 60.0 };
        let mut plant =
            Plant::new(fd, sp, dp, PlantMode::LinearizedCharacteristics, 200, &ic).unwrap();
        let horizon = 2.0 * sp.length / dp.u;
        let mut in_h = InputHistory::new(horizon);
        let mut out_h = InputHistory::new(horizon);
        plant.seed_histories(&ic, &mut in_h, &mut out_h, 0.01);
        plant.materialize(&in_h, &out_h).unwrap();
        let state = plant.state();
        // Interior nodes match the configured ramps to the seed sampling
        // resolution (u * dt = 0.24 m between history knots).
        for (i, &v) in state.free.samples().iter().enumerate() {
            let x = state.free.node(i);
            if x > 1.0 && x < 329.0 {
                assert_relative_eq!(v - 0.032, ic.dev_f(x), epsilon = 3e-7);
            }
        }
        for (i, &v) in state.congested.samples().iter().enumerate() {
            let x = state.congested.node(i);
            if x > 331.0 && x < 499.0 {
                assert_relative_eq!(v - 0.128, ic.dev_c(x), epsilon = 3e-7);
            }
        }
    }

    #[test]
    fn delay_identity_at_the_front() {
        // After stepping with a varying input, the deviation sampled at the
        // front equals the inlet input evaluated one transport delay ago.
        let (mut plant, mut in_h, mut out_h) = plant_with_zero_ic();
        let dt = 0.01;
        for k in 0..800 {
            let t = k as f64 * dt;
            in_h.record(t, 2e-4 * (0.7 * t).sin());
            out_h.record(t, 1e-4 * (0.3 * t).cos());
            plant.step(&in_h, &out_h, dt).unwrap();
        }
        let state = plant.state();
        let dev_at_front = state.free.samples().last().unwrap() - 0.032;
        let expected = in_h.eval(plant.t() - plant.l() / 24.0).unwrap();
        assert_relative_eq!(dev_at_front, expected, epsilon = 1e-12);
    }
}
