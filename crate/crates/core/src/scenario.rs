//! Scenario configuration: TOML ingestion with unit-suffixed keys, defaults
//! for everything, validation that names the offending key, and an echo of
//! every defaulted parameter for the run log.
//!
//! Config quantities use road-engineering units (veh/km, km/h where offered)
//! and are converted to SI (m, s, veh/m) on ingestion; everything downstream
//! is SI.

use std::path::Path;

use serde::Deserialize;

use crate::control::ControlGains;
use crate::error::{Result, SimError};
use crate::fundamental::{derived_params, matched_setpoint, DerivedParams, FundamentalDiagram, Setpoint};
use crate::plant::{InitialCondition, PlantMode};

/// Plant backend selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeChoice {
    Characteristics,
    FiniteVolume,
}

/// Fully resolved scenario in SI units. Fields are public so sweeps can
/// rescale them; call [`Scenario::resolve`] (or `validate`) afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// Free-flow speed, m/s.
    pub v_m: f64,
    /// Jam density, veh/m.
    pub rho_m: f64,
    /// Segment length, m.
    pub length: f64,
    /// Free-regime reference density, veh/m.
    pub rho_f_star: f64,
    /// Front setpoint, m.
    pub l_star: f64,
    /// Initial front position, m.
    pub l0: f64,
    /// Initial deviation amplitudes, veh/m.
    pub amp_f: f64,
    pub amp_c: f64,
    /// Soft-front ramp width, m.
    pub ramp_width: f64,
    /// Backstepping gains, veh/m^2.
    pub k_f: f64,
    pub k_c: f64,
    pub n_cells: usize,
    /// Master time step, s.
    pub dt: f64,
    pub cfl: f64,
    pub mode: ModeChoice,
    /// Simulation horizon, s.
    pub horizon: f64,
    /// Saturation clamp margin as a fraction of each regime's width.
    pub saturation_margin_frac: f64,
    /// Density profile snapshot times; `None` means start and horizon.
    pub snapshot_times: Option<Vec<f64>>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            v_m: 40.0,
            rho_m: 160.0 / 1000.0,
            length: 500.0,
            rho_f_star: 32.0 / 1000.0,
            l_star: 200.0,
            l0: 330.0,
            amp_f: 12.0 / 1000.0,
            amp_c: 12.0 / 1000.0,
            ramp_width: 60.0,
            k_f: 2.0e-4,
            k_c: 2.0e-4,
            n_cells: 200,
            dt: 0.01,
            cfl: 0.8,
            mode: ModeChoice::Characteristics,
            horizon: 120.0,
            saturation_margin_frac: 0.02,
            snapshot_times: None,
        }
    }
}

/// Scenario resolved into the model objects consumed by the simulation loop.
#[derive(Debug, Clone, Copy)]
pub struct Resolved {
    pub fd: FundamentalDiagram,
    pub sp: Setpoint,
    pub params: DerivedParams,
    pub gains: ControlGains,
    pub ic: InitialCondition,
    pub mode: PlantMode,
}

impl Scenario {
    pub fn resolve(&self) -> Result<Resolved> {
        let fd = FundamentalDiagram::new(self.v_m, self.rho_m)
            .map_err(|e| SimError::Config(format!("physical section invalid: {e}")))?;
        let rho_jump = fd.jump_density();
        if !(self.rho_f_star > 0.0 && self.rho_f_star < rho_jump) {
            return Err(SimError::Config(format!(
                "setpoint.rho_f_star_veh_per_km = {} violates 0 < rho_f_star < rho_jump ({} veh/km)",
                self.rho_f_star * 1000.0,
                rho_jump * 1000.0
            )));
        }
        if !(self.l_star > 0.0 && self.l_star < self.length) {
            return Err(SimError::Config(format!(
                "setpoint.l_star_m = {} violates 0 < l_star < L (physical.length_m = {})",
                self.l_star, self.length
            )));
        }
        let sp = matched_setpoint(self.rho_f_star, self.l_star, self.length, &fd)
            .map_err(|e| SimError::Config(e.to_string()))?;
        let params = derived_params(&sp, &fd);
        let gains = ControlGains::new(self.k_f, self.k_c, &params).map_err(|e| {
            SimError::Config(format!("gains.k_f_veh_per_m2 / gains.k_c_veh_per_m2 invalid: {e}"))
        })?;
        if !(self.l0 > 0.0 && self.l0 < self.length) {
            return Err(SimError::Config(format!(
                "initial.l0_m = {} violates 0 < l0 < L (physical.length_m = {})",
                self.l0, self.length
            )));
        }
        if !(self.ramp_width > 0.0) {
            return Err(SimError::Config(format!(
                "initial.ramp_width_m = {} must be positive",
                self.ramp_width
            )));
        }
        // Initial boundary densities must sit inside their regimes.
        let free_lo = sp.rho_f_star + self.amp_f.min(0.0);
        let free_hi = sp.rho_f_star + self.amp_f.max(0.0);
        if !(free_lo > 0.0 && free_hi < rho_jump) {
            return Err(SimError::Config(format!(
                "initial.amp_f_veh_per_km = {} pushes the free-regime density outside (0, {} veh/km)",
                self.amp_f * 1000.0,
                rho_jump * 1000.0
            )));
        }
        let cong_lo = sp.rho_c_star + self.amp_c.min(0.0);
        let cong_hi = sp.rho_c_star + self.amp_c.max(0.0);
        if !(cong_lo > rho_jump && cong_hi < fd.rho_m()) {
            return Err(SimError::Config(format!(
                "initial.amp_c_veh_per_km = {} pushes the congested-regime density outside ({}, {} veh/km)",
                self.amp_c * 1000.0,
                rho_jump * 1000.0,
                fd.rho_m() * 1000.0
            )));
        }
        if self.n_cells < 3 {
            return Err(SimError::Config(format!(
                "numerics.n_cells = {} must be at least 3 (H1 diagnostics need 3 cells)",
                self.n_cells
            )));
        }
        if !(self.dt > 0.0) {
            return Err(SimError::Config(format!("numerics.dt_s = {} must be positive", self.dt)));
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(SimError::Config(format!(
                "numerics.cfl = {} must lie in (0, 1]",
                self.cfl
            )));
        }
        if !(self.horizon > 0.0) {
            return Err(SimError::Config(format!(
                "run.horizon_s = {} must be positive",
                self.horizon
            )));
        }
        if !(0.0..=0.2).contains(&self.saturation_margin_frac) {
            return Err(SimError::Config(format!(
                "run.saturation_margin_frac = {} must lie in [0, 0.2]",
                self.saturation_margin_frac
            )));
        }
        let ic = InitialCondition {
            l0: self.l0,
            amp_f: self.amp_f,
            amp_c: self.amp_c,
            ramp_width: self.ramp_width,
        };
        let mode = match self.mode {
            ModeChoice::Characteristics => PlantMode::LinearizedCharacteristics,
            ModeChoice::FiniteVolume => PlantMode::NonlinearFiniteVolume { cfl: self.cfl },
        };
        Ok(Resolved { fd, sp, params, gains, ic, mode })
    }

    pub fn validate(&self) -> Result<()> {
        self.resolve().map(|_| ())
    }

    /// Snapshot times, defaulting to start and horizon.
    pub fn snapshot_schedule(&self) -> Vec<f64> {
        self.snapshot_times.clone().unwrap_or_else(|| vec![0.0, self.horizon])
    }

    /// Parses a TOML scenario; returns the scenario and one echo line per
    /// defaulted parameter.
    pub fn from_toml_str(text: &str) -> Result<(Self, Vec<String>)> {
        let raw: RawConfig = toml::from_str(text)
            .map_err(|e| SimError::Config(format!("scenario parse error: {}", e.message())))?;
        raw.into_scenario()
    }

    /// Built-in defaults with a complete echo (every parameter defaulted).
    pub fn builtin_default() -> (Self, Vec<String>) {
        Self::from_toml_str("").expect("empty scenario must parse")
    }
}

/// Loads and validates a scenario file.
pub fn load_scenario(path: &Path) -> Result<(Scenario, Vec<String>)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| SimError::Config(format!("cannot read {}: {e}", path.display())))?;
    let (scenario, echoes) = Scenario::from_toml_str(&text)?;
    scenario.validate()?;
    Ok((scenario, echoes))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    physical: RawPhysical,
    #[serde(default)]
    setpoint: RawSetpoint,
    #[serde(default)]
    initial: RawInitial,
    #[serde(default)]
    gains: RawGains,
    #[serde(default)]
    numerics: RawNumerics,
    #[serde(default)]
    run: RawRun,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPhysical {
    v_m_mps: Option<f64>,
    v_m_kmh: Option<f64>,
    rho_m_veh_per_km: Option<f64>,
    length_m: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSetpoint {
    rho_f_star_veh_per_km: Option<f64>,
    l_star_m: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInitial {
    l0_m: Option<f64>,
    amp_f_veh_per_km: Option<f64>,
    amp_c_veh_per_km: Option<f64>,
    ramp_width_m: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGains {
    k_f_veh_per_m2: Option<f64>,
    k_c_veh_per_m2: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNumerics {
    n_cells: Option<usize>,
    dt_s: Option<f64>,
    cfl: Option<f64>,
    mode: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    horizon_s: Option<f64>,
    saturation_margin_frac: Option<f64>,
    snapshot_times_s: Option<Vec<f64>>,
}

impl RawConfig {
    fn into_scenario(self) -> Result<(Scenario, Vec<String>)> {
        let d = Scenario::default();
        let mut echoes: Vec<String> = Vec::new();
        let mut defaulted = |key: &str, value: String| {
            echoes.push(format!("defaulted {key} = {value}"));
        };

        let v_m = match (self.physical.v_m_mps, self.physical.v_m_kmh) {
            (Some(_), Some(_)) => {
                return Err(SimError::Config(
                    "physical.v_m_mps and physical.v_m_kmh are mutually exclusive".into(),
                ))
            }
            (Some(v), None) => v,
            (None, Some(v)) => v / 3.6,
            (None, None) => {
                defaulted("physical.v_m_mps", format!("{}", d.v_m));
                d.v_m
            }
        };
        let rho_m = match self.physical.rho_m_veh_per_km {
            Some(v) => v / 1000.0,
            None => {
                defaulted("physical.rho_m_veh_per_km", format!("{}", d.rho_m * 1000.0));
                d.rho_m
            }
        };
        let length = match self.physical.length_m {
            Some(v) => v,
            None => {
                defaulted("physical.length_m", format!("{}", d.length));
                d.length
            }
        };
        let rho_f_star = match self.setpoint.rho_f_star_veh_per_km {
            Some(v) => v / 1000.0,
            None => {
                defaulted("setpoint.rho_f_star_veh_per_km", format!("{}", d.rho_f_star * 1000.0));
                d.rho_f_star
            }
        };
        let l_star = match self.setpoint.l_star_m {
            Some(v) => v,
            None => {
                defaulted("setpoint.l_star_m", format!("{}", d.l_star));
                d.l_star
            }
        };
        let l0 = match self.initial.l0_m {
            Some(v) => v,
            None => {
                defaulted("initial.l0_m", format!("{}", d.l0));
                d.l0
            }
        };
        let amp_f = match self.initial.amp_f_veh_per_km {
            Some(v) => v / 1000.0,
            None => {
                defaulted("initial.amp_f_veh_per_km", format!("{}", d.amp_f * 1000.0));
                d.amp_f
            }
        };
        let amp_c = match self.initial.amp_c_veh_per_km {
            Some(v) => v / 1000.0,
            None => {
                defaulted("initial.amp_c_veh_per_km", format!("{}", d.amp_c * 1000.0));
                d.amp_c
            }
        };
        let ramp_width = match self.initial.ramp_width_m {
            Some(v) => v,
            None => {
                defaulted("initial.ramp_width_m", format!("{}", d.ramp_width));
                d.ramp_width
            }
        };
        let k_f = match self.gains.k_f_veh_per_m2 {
            Some(v) => v,
            None => {
                defaulted("gains.k_f_veh_per_m2", format!("{}", d.k_f));
                d.k_f
            }
        };
        let k_c = match self.gains.k_c_veh_per_m2 {
            Some(v) => v,
            None => {
                defaulted("gains.k_c_veh_per_m2", format!("{}", d.k_c));
                d.k_c
            }
        };
        let n_cells = match self.numerics.n_cells {
            Some(v) => v,
            None => {
                defaulted("numerics.n_cells", format!("{}", d.n_cells));
                d.n_cells
            }
        };
        let dt = match self.numerics.dt_s {
            Some(v) => v,
            None => {
                defaulted("numerics.dt_s", format!("{}", d.dt));
                d.dt
            }
        };
        let cfl = match self.numerics.cfl {
            Some(v) => v,
            None => {
                defaulted("numerics.cfl", format!("{}", d.cfl));
                d.cfl
            }
        };
        let mode = match self.numerics.mode.as_deref() {
            Some("characteristics") => ModeChoice::Characteristics,
            Some("finite_volume") => ModeChoice::FiniteVolume,
            Some(other) => {
                return Err(SimError::Config(format!(
                    "numerics.mode = {other:?} must be \"characteristics\" or \"finite_volume\""
                )))
            }
            None => {
                defaulted("numerics.mode", "characteristics".into());
                d.mode
            }
        };
        let horizon = match self.run.horizon_s {
            Some(v) => v,
            None => {
                defaulted("run.horizon_s", format!("{}", d.horizon));
                d.horizon
            }
        };
        let saturation_margin_frac = match self.run.saturation_margin_frac {
            Some(v) => v,
            None => {
                defaulted("run.saturation_margin_frac", format!("{}", d.saturation_margin_frac));
                d.saturation_margin_frac
            }
        };
        let snapshot_times = self.run.snapshot_times_s;
        if snapshot_times.is_none() {
            defaulted("run.snapshot_times_s", "[0, horizon_s]".into());
        }

        Ok((
            Scenario {
                v_m,
                rho_m,
                length,
                rho_f_star,
                l_star,
                l0,
                amp_f,
                amp_c,
                ramp_width,
                k_f,
                k_c,
                n_cells,
                dt,
                cfl,
                mode,
                horizon,
                saturation_margin_frac,
                snapshot_times,
            },
            echoes,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn default_scenario_matches_reference_values() {
        let (s, echoes) = Scenario::builtin_default();
        assert_eq!(s.length, 500.0);
        assert_eq!(s.l_star, 200.0);
        assert_eq!(s.l0, 330.0);
        assert_eq!(s.rho_f_star * 1000.0, 32.0);
        let r = s.resolve().unwrap();
        assert_eq!(r.sp.rho_c_star * 1000.0, 128.0);
        assert_eq!(r.fd.jump_density() * 1000.0, 80.0);
        // Everything was defaulted, each exactly once.
        assert_eq!(echoes.len(), 18);
        let mut sorted = echoes.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), echoes.len());
    }

    #[test]
    fn parses_explicit_values_and_unit_conversions() {
        let text = r#"
            [physical]
            v_m_kmh = 144.0
            rho_m_veh_per_km = 160.0
            [setpoint]
            rho_f_star_veh_per_km = 32.0
            [numerics]
            mode = "finite_volume"
        "#;
        let (s, echoes) = Scenario::from_toml_str(text).unwrap();
        assert_relative_eq!(s.v_m, 40.0, max_relative = 1e-14);
        assert_eq!(s.mode, ModeChoice::FiniteVolume);
        assert!(echoes.iter().all(|e| !e.contains("v_m") && !e.contains("rho_m")));
        assert!(echoes.iter().any(|e| e.contains("gains.k_f_veh_per_m2")));
    }

    #[test]
    fn rejects_unknown_keys_by_name() {
        let err = Scenario::from_toml_str("[physical]\nv_max_mps = 40.0\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("v_max_mps"), "error should name the key: {msg}");
    }

    #[test]
    fn rejects_setpoint_outside_segment() {
        let text = "[setpoint]\nl_star_m = 600.0\n";
        let (s, _) = Scenario::from_toml_str(text).unwrap();
        let err = s.validate().unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("l_star_m") && msg.contains("600"), "{msg}");
    }

    #[test]
    fn rejects_conflicting_speed_keys() {
        let text = "[physical]\nv_m_mps = 40.0\nv_m_kmh = 144.0\n";
        assert!(Scenario::from_toml_str(text).is_err());
    }

    #[test]
    fn rejects_amplitudes_leaving_regime() {
        let (mut s, _) = Scenario::builtin_default();
        s.amp_f = 0.060; // 32 + 60 veh/km crosses the 80 veh/km jump density
        let msg = s.validate().unwrap_err().to_string();
        assert!(msg.contains("amp_f_veh_per_km"), "{msg}");
        let (mut s, _) = Scenario::builtin_default();
        s.amp_c = 0.040; // 128 + 40 crosses the jam density
        assert!(s.validate().is_err());
    }

    #[test]
    fn rejects_infeasible_setpoint_reference() {
        let (mut s, _) = Scenario::builtin_default();
        s.rho_f_star = 0.080; // exactly the jump density
        assert!(s.validate().is_err());
    }
}
