//! Greenshields fundamental diagram, setpoints, and linearization constants.
//!
//! Everything downstream (plant, controller, diagnostics) consumes these
//! algebraic primitives. Internal units are SI throughout: meters, seconds,
//! vehicles per meter.

use crate::error::{Result, SimError};

/// Greenshields fundamental diagram: equilibrium velocity linear decreasing
/// in density, so the flux `Q(rho) = rho * V(rho)` is a concave quadratic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FundamentalDiagram {
    /// Maximum (free-flow) speed, m/s.
    v_m: f64,
    /// Maximum (jam) density, veh/m.
    rho_m: f64,
}

impl FundamentalDiagram {
    pub fn new(v_m: f64, rho_m: f64) -> Result<Self> {
        if !(v_m > 0.0) {
            return Err(SimError::NonPositive { name: "v_m", value: v_m });
        }
        if !(rho_m > 0.0) {
            return Err(SimError::NonPositive { name: "rho_m", value: rho_m });
        }
        Ok(Self { v_m, rho_m })
    }

    pub fn v_m(&self) -> f64 {
        self.v_m
    }

    pub fn rho_m(&self) -> f64 {
        self.rho_m
    }

    /// Density at the flux maximum, separating free from congested regime.
    pub fn jump_density(&self) -> f64 {
        self.rho_m / 2.0
    }

    fn check_density(&self, rho: f64) -> Result<()> {
        if !(0.0..=self.rho_m).contains(&rho) {
            return Err(SimError::DensityOutOfRange { rho, rho_m: self.rho_m });
        }
        Ok(())
    }

    /// Equilibrium velocity `V(rho) = v_m (1 - rho / rho_m)`.
    pub fn equilibrium_velocity(&self, rho: f64) -> Result<f64> {
        self.check_density(rho)?;
        Ok(self.v_m * (1.0 - rho / self.rho_m))
    }

    /// Equilibrium flux `Q(rho) = rho * V(rho)`, veh/s.
    pub fn flux(&self, rho: f64) -> Result<f64> {
        self.check_density(rho)?;
        Ok(rho * self.v_m * (1.0 - rho / self.rho_m))
    }

    /// Characteristic speed `Q'(rho) = v_m (1 - 2 rho / rho_m)`.
    ///
    /// Positive below the jump density (free regime, variations move
    /// downstream), negative above it (congested regime, variations move
    /// upstream).
    pub fn characteristic_speed(&self, rho: f64) -> Result<f64> {
        self.check_density(rho)?;
        Ok(self.v_m * (1.0 - 2.0 * rho / self.rho_m))
    }

    /// Flux without the domain check, for solver inner loops that maintain
    /// the density invariant themselves.
    pub(crate) fn flux_unchecked(&self, rho: f64) -> f64 {
        rho * self.v_m * (1.0 - rho / self.rho_m)
    }
}

/// Uniform steady references for both regimes plus the target front position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Setpoint {
    /// Free-regime reference density, veh/m.
    pub rho_f_star: f64,
    /// Congested-regime reference density, veh/m.
    pub rho_c_star: f64,
    /// Target interface position, m.
    pub l_star: f64,
    /// Segment length, m.
    pub length: f64,
}

/// Builds a flux-matched setpoint: `rho_c_star = rho_m - rho_f_star`, which
/// for the quadratic diagram makes the fluxes on both sides of the interface
/// equal exactly, so the front is stationary at the reference.
pub fn matched_setpoint(
    rho_f_star: f64,
    l_star: f64,
    length: f64,
    fd: &FundamentalDiagram,
) -> Result<Setpoint> {
    let rho_jump = fd.jump_density();
    if !(rho_f_star > 0.0) {
        return Err(SimError::InfeasibleSetpoint { constraint: "0 < rho_f_star" });
    }
    if !(rho_f_star < rho_jump) {
        return Err(SimError::InfeasibleSetpoint { constraint: "rho_f_star < rho_jump" });
    }
    if !(l_star > 0.0) {
        return Err(SimError::InfeasibleSetpoint { constraint: "0 < l_star" });
    }
    if !(l_star < length) {
        return Err(SimError::InfeasibleSetpoint { constraint: "l_star < L" });
    }
    let rho_c_star = fd.rho_m() - rho_f_star;
    debug_assert!(rho_c_star > rho_jump && rho_c_star < fd.rho_m());
    Ok(Setpoint { rho_f_star, rho_c_star, l_star, length })
}

impl Setpoint {
    /// Deviation of the free-side density from its reference.
    pub fn dev_f(&self, rho: f64) -> f64 {
        rho - self.rho_f_star
    }

    /// Deviation of the congested-side density from its reference.
    pub fn dev_c(&self, rho: f64) -> f64 {
        rho - self.rho_c_star
    }
}

/// Constants of the model linearized about a matched setpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedParams {
    /// Transport speed of density deviations in both regimes, m/s.
    /// Equals `Q'(rho_f_star)`; under flux matching `Q'(rho_c_star) = -u`.
    pub u: f64,
    /// Interface ODE coefficient `v_m / rho_m`, m^2/(veh s).
    pub b: f64,
}

pub fn derived_params(sp: &Setpoint, fd: &FundamentalDiagram) -> DerivedParams {
    let u = fd.v_m() * (1.0 - 2.0 * sp.rho_f_star / fd.rho_m());
    let b = fd.v_m() / fd.rho_m();
    DerivedParams { u, b }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn fd() -> FundamentalDiagram {
        FundamentalDiagram::new(40.0, 0.160).unwrap()
    }

    #[test]
    fn velocity_limits_and_midpoint() {
        let fd = fd();
        assert_eq!(fd.equilibrium_velocity(0.0).unwrap(), 40.0);
        assert_eq!(fd.equilibrium_velocity(0.160).unwrap(), 0.0);
        assert_relative_eq!(fd.equilibrium_velocity(0.032).unwrap(), 32.0, max_relative = 1e-14);
    }

    #[test]
    fn velocity_rejects_out_of_range() {
        let fd = fd();
        assert!(matches!(
            fd.equilibrium_velocity(-0.01),
            Err(SimError::DensityOutOfRange { .. })
        ));
        assert!(matches!(fd.flux(0.161), Err(SimError::DensityOutOfRange { .. })));
    }

    #[test]
    fn flux_vanishes_at_extremes_and_peaks_at_vertex() {
        let fd = fd();
        assert_eq!(fd.flux(0.0).unwrap(), 0.0);
        assert_eq!(fd.flux(0.160).unwrap(), 0.0);
        let vertex = fd.flux(fd.jump_density()).unwrap();
        assert_relative_eq!(vertex, 40.0 * 0.160 / 4.0, max_relative = 1e-14);
    }

    #[test]
    fn flux_symmetry_about_jump_density() {
        let fd = fd();
        for k in 0..=1000 {
            let rho = fd.rho_m() * k as f64 / 1000.0;
            let mirrored = fd.rho_m() - rho;
            assert_relative_eq!(
                fd.flux(rho).unwrap(),
                fd.flux(mirrored).unwrap(),
                max_relative = 1e-13,
                epsilon = 1e-16
            );
        }
    }

    #[test]
    fn characteristic_speed_signs_and_vertex() {
        let fd = fd();
        assert_eq!(fd.characteristic_speed(fd.jump_density()).unwrap(), 0.0);
        assert!(fd.characteristic_speed(0.03).unwrap() > 0.0);
        assert!(fd.characteristic_speed(0.13).unwrap() < 0.0);
    }

    #[test]
    fn characteristic_speed_matches_transport_speed_at_setpoint() {
        let fd = fd();
        let sp = matched_setpoint(0.032, 200.0, 500.0, &fd).unwrap();
        let dp = derived_params(&sp, &fd);
        assert_relative_eq!(fd.characteristic_speed(sp.rho_f_star).unwrap(), dp.u, max_relative = 1e-14);
        // Flux matching makes the congested-side speed the exact negative.
        assert_relative_eq!(
            fd.characteristic_speed(sp.rho_c_star).unwrap(),
            -dp.u,
            max_relative = 1e-13
        );
    }

    #[test]
    fn characteristic_speed_is_flux_derivative() {
        let fd = fd();
        let h = 1e-5;
        for k in 1..100 {
            let rho = fd.rho_m() * k as f64 / 100.0;
            let fdiff = (fd.flux(rho + h).unwrap() - fd.flux(rho - h).unwrap()) / (2.0 * h);
            assert_relative_eq!(fd.characteristic_speed(rho).unwrap(), fdiff, epsilon = 1e-9);
        }
    }

    #[test]
    fn matched_setpoint_reproduces_reference_values() {
        // 32 veh/km free reference with 160 veh/km jam density.
        let fd = fd();
        let sp = matched_setpoint(32.0 / 1000.0, 200.0, 500.0, &fd).unwrap();
        assert_eq!(sp.rho_c_star * 1000.0, 128.0);
        assert_eq!(fd.jump_density() * 1000.0, 80.0);
    }

    #[test]
    fn matched_setpoint_balances_flux() {
        let fd = fd();
        let sp = matched_setpoint(0.040, 100.0, 500.0, &fd).unwrap();
        assert_eq!(sp.rho_c_star, 0.120);
        assert_relative_eq!(
            fd.flux(sp.rho_f_star).unwrap(),
            fd.flux(sp.rho_c_star).unwrap(),
            max_relative = 1e-13
        );
    }

    #[test]
    fn matched_setpoint_rejects_boundary_cases() {
        let fd = fd();
        assert_eq!(
            matched_setpoint(fd.jump_density(), 200.0, 500.0, &fd),
            Err(SimError::InfeasibleSetpoint { constraint: "rho_f_star < rho_jump" })
        );
        assert_eq!(
            matched_setpoint(0.032, 600.0, 500.0, &fd),
            Err(SimError::InfeasibleSetpoint { constraint: "l_star < L" })
        );
        assert_eq!(
            matched_setpoint(0.032, 0.0, 500.0, &fd),
            Err(SimError::InfeasibleSetpoint { constraint: "0 < l_star" })
        );
    }

    #[test]
    fn derived_params_reference_values() {
        let fd = fd();
        let sp = matched_setpoint(0.032, 200.0, 500.0, &fd).unwrap();
        let dp = derived_params(&sp, &fd);
        assert_relative_eq!(dp.u, 24.0, max_relative = 1e-14);
        assert_relative_eq!(dp.b, 250.0, max_relative = 1e-14);
        assert!(dp.u > 0.0 && dp.u < fd.v_m());
    }

    #[test]
    fn transport_speed_approaches_free_flow_for_light_reference() {
        let fd = fd();
        let sp = matched_setpoint(1e-9, 200.0, 500.0, &fd).unwrap();
        let dp = derived_params(&sp, &fd);
        assert_relative_eq!(dp.u, fd.v_m(), max_relative = 1e-7);
    }
}
