//! Quantitative diagnostics: the weighted Lyapunov functional of the target
//! system, H1 norms, the stability metric `Z(t)`, and empirical decay fits.

use crate::control::ControlGains;
use crate::error::{Result, SimError};
use crate::field::DensityField;
use crate::fundamental::{DerivedParams, Setpoint};
use crate::plant::{DomainSide, PlantState};
use crate::transform::TargetState;

/// Weight of the gradient terms in the Lyapunov functional. Admissible
/// weights satisfy `lambda > 4 b / (a u)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovWeights {
    pub lambda: f64,
}

impl LyapunovWeights {
    pub fn new(lambda: f64, gains: &ControlGains, params: &DerivedParams) -> Result<Self> {
        let bound = 4.0 * params.b / (gains.a * params.u);
        if !(lambda > bound) {
            return Err(SimError::InvalidInput(format!(
                "lambda = {lambda} must exceed 4 b / (a u) = {bound}"
            )));
        }
        Ok(Self { lambda })
    }

    /// Twice the admissibility bound.
    pub fn default_for(gains: &ControlGains, params: &DerivedParams) -> Self {
        Self { lambda: 8.0 * params.b / (gains.a * params.u) }
    }
}

/// The functional and its five components:
/// `V = V1 + V2 + lambda V3 + lambda V4 + V5`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LyapunovComponents {
    pub v: f64,
    /// `∫_0^l e^{-x} w_f^2 dx`
    pub v1: f64,
    /// `∫_l^L e^{x-L} w_c^2 dx`
    pub v2: f64,
    /// `∫_0^l e^{-x} (d_x w_f)^2 dx`
    pub v3: f64,
    /// `∫_l^L e^{x-L} (d_x w_c)^2 dx`
    pub v4: f64,
    /// `X^2`
    pub v5: f64,
}

fn weighted_square_integral(field: &DensityField, values: &[f64], weight: impl Fn(f64) -> f64) -> f64 {
    let dx = field.dx();
    let mut acc = 0.0;
    for i in 0..values.len() - 1 {
        let g0 = weight(field.node(i)) * values[i] * values[i];
        let g1 = weight(field.node(i + 1)) * values[i + 1] * values[i + 1];
        acc += dx * 0.5 * (g0 + g1);
    }
    acc
}

pub fn lyapunov(target: &TargetState, weights: &LyapunovWeights) -> LyapunovComponents {
    let length = target.w_c.right();
    let v1 = weighted_square_integral(&target.w_f, target.w_f.samples(), |x| (-x).exp());
    let v2 = weighted_square_integral(&target.w_c, target.w_c.samples(), |x| (x - length).exp());
    let dwf = target.w_f.node_derivatives();
    let v3 = weighted_square_integral(&target.w_f, &dwf, |x| (-x).exp());
    let dwc = target.w_c.node_derivatives();
    let v4 = weighted_square_integral(&target.w_c, &dwc, |x| (x - length).exp());
    let v5 = target.x_dev * target.x_dev;
    LyapunovComponents { v: v1 + v2 + weights.lambda * (v3 + v4) + v5, v1, v2, v3, v4, v5 }
}

/// `( ∫ f^2 + f_x^2 dx )^{1/2}` with finite-difference `f_x`.
pub fn h1_norm(field: &DensityField) -> Result<f64> {
    if field.n_cells() < 3 {
        return Err(SimError::InvalidInput(format!(
            "H1 norm needs at least 3 cells, got {}",
            field.n_cells()
        )));
    }
    let d = field.node_derivatives();
    let sq = weighted_square_integral(field, field.samples(), |_| 1.0)
        + weighted_square_integral(field, &d, |_| 1.0);
    Ok(sq.sqrt())
}

/// Stability metric: H1 norms of both deviation fields plus the squared
/// front error, `Z = |dev_f|_H1 + |dev_c|_H1 + (l - l_star)^2`.
///
/// The mixed powers (norms unsquared, front error squared) are intentional;
/// this is the exact combination the stability statement bounds.
pub fn z_metric(state: &PlantState, sp: &Setpoint) -> Result<f64> {
    let (dev_f, dev_c) = state.deviations(sp);
    let x = state.l - sp.l_star;
    Ok(h1_norm(&dev_f)? + h1_norm(&dev_c)? + x * x)
}

/// Least-squares exponential decay fit of a positive series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    /// Fitted decay rate of `V(t) ~ exp(-sigma0 t)`, 1/s.
    pub sigma0: f64,
    pub r_squared: f64,
}

/// Fits `ln V` against `t` over `window = (t_lo, t_hi)` inclusive.
pub fn decay_rate_fit(times: &[f64], values: &[f64], window: (f64, f64)) -> Result<DecayFit> {
    if times.len() != values.len() {
        return Err(SimError::InvalidInput("times and values must have equal length".into()));
    }
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for (&t, &v) in times.iter().zip(values) {
        if t >= window.0 && t <= window.1 {
            if !(v > 0.0) {
                return Err(SimError::InvalidInput(format!(
                    "decay fit needs positive values in the window, got {v} at t = {t}"
                )));
            }
            pts.push((t, v.ln()));
        }
    }
    if pts.len() < 3 {
        return Err(SimError::InvalidInput(format!(
            "decay fit needs at least 3 samples in the window, got {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mean_t = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for &(t, y) in &pts {
        sxx += (t - mean_t) * (t - mean_t);
        sxy += (t - mean_t) * (y - mean_y);
        syy += (y - mean_y) * (y - mean_y);
    }
    let slope = sxy / sxx;
    let ss_res = syy - slope * sxy;
    let r_squared = if syy <= 1e-30 { 1.0 } else { 1.0 - (ss_res / syy).max(0.0) };
    Ok(DecayFit { sigma0: -slope, r_squared })
}

/// Events attached to a trace record.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EventFlags {
    pub saturated_in: bool,
    pub saturated_out: bool,
    pub domain_exit: Option<DomainSide>,
}

impl EventFlags {
    pub fn is_empty(&self) -> bool {
        !self.saturated_in && !self.saturated_out && self.domain_exit.is_none()
    }
}

impl std::fmt::Display for EventFlags {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut parts: Vec<&str> = Vec::new();
        if self.saturated_in {
            parts.push("saturation_in");
        }
        if self.saturated_out {
            parts.push("saturation_out");
        }
        match self.domain_exit {
            Some(DomainSide::Upstream) => parts.push("domain_exit_upstream"),
            Some(DomainSide::Downstream) => parts.push("domain_exit_downstream"),
            None => {}
        }
        write!(f, "{}", parts.join("|"))
    }
}

/// One row of the metrics trace.
#[derive(Debug, Clone)]
pub struct MetricsRecord {
    pub t: f64,
    pub l: f64,
    pub x_dev: f64,
    pub u_in: f64,
    pub u_out: f64,
    pub lyapunov: LyapunovComponents,
    pub h1_free: f64,
    pub h1_congested: f64,
    pub z: f64,
    pub events: EventFlags,
}

impl MetricsRecord {
    /// Definition audit: the stored total must equal the recomputed weighted
    /// sum of its components.
    pub fn audit(&self, lambda: f64) -> bool {
        let lc = &self.lyapunov;
        let recomputed = lc.v1 + lc.v2 + lambda * (lc.v3 + lc.v4) + lc.v5;
        (recomputed - lc.v).abs() <= 1e-12 * lc.v.abs().max(1e-300)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fundamental::{derived_params, matched_setpoint, FundamentalDiagram};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn weights() -> (LyapunovWeights, ControlGains, DerivedParams) {
        let fd = FundamentalDiagram::new(40.0, 0.160).unwrap();
        let sp = matched_setpoint(0.032, 200.0, 500.0, &fd).unwrap();
        let dp = derived_params(&sp, &fd);
        let gains = ControlGains::new(2e-4, 2e-4, &dp).unwrap();
        (LyapunovWeights::default_for(&gains, &dp), gains, dp)
    }

    #[test]
    fn weight_guard_rejects_small_lambda() {
        let (_, gains, dp) = weights();
        let bound = 4.0 * dp.b / (gains.a * dp.u);
        assert!(LyapunovWeights::new(bound * 0.99, &gains, &dp).is_err());
        assert!(LyapunovWeights::new(bound, &gains, &dp).is_err());
        assert!(LyapunovWeights::new(bound * 1.01, &gains, &dp).is_ok());
        let w = LyapunovWeights::default_for(&gains, &dp);
        assert_relative_eq!(w.lambda, 2.0 * bound, max_relative = 1e-14);
    }

    #[test]
    fn zero_target_gives_zero_functional() {
        let (w, _, _) = weights();
        let tg = TargetState {
            w_f: DensityField::uniform(0.0, 200.0, 10, 0.0),
            w_c: DensityField::uniform(200.0, 500.0, 10, 0.0),
            x_dev: 0.0,
            t: 0.0,
        };
        let lc = lyapunov(&tg, &w);
        assert_eq!(lc.v, 0.0);
    }

    #[test]
    fn front_offset_only_gives_squared_offset() {
        let (w, _, _) = weights();
        let tg = TargetState {
            w_f: DensityField::uniform(0.0, 200.0, 10, 0.0),
            w_c: DensityField::uniform(200.0, 500.0, 10, 0.0),
            x_dev: 10.0,
            t: 0.0,
        };
        let lc = lyapunov(&tg, &w);
        assert_eq!(lc.v5, 100.0);
        assert_eq!(lc.v, 100.0);
    }

    #[test]
    fn constant_target_field_closed_form() {
        let (w, _, _) = weights();
        let c = 0.004;
        let l = 12.0;
        // Fine grid: the integrand e^{-x} varies on a 1 m scale.
        let tg = TargetState {
            w_f: DensityField::uniform(0.0, l, 24_000, c),
            w_c: DensityField::uniform(l, 500.0, 4, 0.0),
            x_dev: 0.0,
            t: 0.0,
        };
        let lc = lyapunov(&tg, &w);
        assert_relative_eq!(lc.v1, c * c * (1.0 - (-l as f64).exp()), max_relative = 1e-6);
        assert_abs_diff_eq!(lc.v3, 0.0, epsilon = 1e-30);
    }

    #[test]
    fn h1_norm_closed_forms() {
        let zero = DensityField::uniform(0.0, 3.0, 30, 0.0);
        assert_eq!(h1_norm(&zero).unwrap(), 0.0);

        let constant = DensityField::uniform(2.0, 7.0, 50, 1.5);
        assert_relative_eq!(h1_norm(&constant).unwrap(), 1.5 * 5.0f64.sqrt(), max_relative = 1e-12);

        let m = 2.5;
        let ramp = DensityField::from_fn(0.0, 1.0, 400, |x| m * x);
        assert_relative_eq!(
            h1_norm(&ramp).unwrap(),
            (m * m / 3.0 + m * m).sqrt(),
            max_relative = 1e-5
        );

        let tiny = DensityField::uniform(0.0, 1.0, 2, 1.0);
        assert!(h1_norm(&tiny).is_err());
    }

    #[test]
    fn z_metric_vanishes_at_setpoint() {
        let fd = FundamentalDiagram::new(40.0, 0.160).unwrap();
        let sp = matched_setpoint(0.032, 200.0, 500.0, &fd).unwrap();
        let state = PlantState {
            free: DensityField::uniform(0.0, sp.l_star, 20, sp.rho_f_star),
            congested: DensityField::uniform(sp.l_star, sp.length, 20, sp.rho_c_star),
            l: sp.l_star,
            t: 0.0,
        };
        assert_eq!(z_metric(&state, &sp).unwrap(), 0.0);
    }

    #[test]
    fn z_metric_with_front_offset_only() {
        let fd = FundamentalDiagram::new(40.0, 0.160).unwrap();
        let sp = matched_setpoint(0.032, 200.0, 500.0, &fd).unwrap();
        // Shifted front with fields at their own references: the only
        // contribution is the squared front error.
        let l = 230.0;
        let state = PlantState {
            free: DensityField::uniform(0.0, l, 20, sp.rho_f_star),
            congested: DensityField::uniform(l, sp.length, 20, sp.rho_c_star),
            l,
            t: 0.0,
        };
        assert_relative_eq!(z_metric(&state, &sp).unwrap(), 900.0, max_relative = 1e-12);
    }

    #[test]
    fn decay_fit_recovers_exact_exponential() {
        let times: Vec<f64> = (0..100).map(|k| k as f64 * 0.5).collect();
        let values: Vec<f64> = times.iter().map(|&t| 3.0 * (-0.1 * t).exp()).collect();
        let fit = decay_rate_fit(&times, &values, (0.0, 50.0)).unwrap();
        assert_relative_eq!(fit.sigma0, 0.1, max_relative = 1e-10);
        assert_relative_eq!(fit.r_squared, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn decay_fit_constant_series_and_error_paths() {
        let times: Vec<f64> = (0..10).map(|k| k as f64).collect();
        let values = vec![2.0; 10];
        let fit = decay_rate_fit(&times, &values, (0.0, 9.0)).unwrap();
        assert_abs_diff_eq!(fit.sigma0, 0.0, epsilon = 1e-14);

        let bad = vec![1.0, -1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0];
        assert!(decay_rate_fit(&times, &bad, (0.0, 9.0)).is_err());
        assert!(decay_rate_fit(&times, &values, (100.0, 101.0)).is_err());
    }

    #[test]
    fn record_audit_and_event_formatting() {
        let (w, _, _) = weights();
        let tg = TargetState {
            w_f: DensityField::uniform(0.0, 200.0, 10, 0.001),
            w_c: DensityField::uniform(200.0, 500.0, 10, 0.002),
            x_dev: 5.0,
            t: 1.0,
        };
        let lc = lyapunov(&tg, &w);
        let rec = MetricsRecord {
            t: 1.0,
            l: 205.0,
            x_dev: 5.0,
            u_in: 0.0,
            u_out: 0.0,
            lyapunov: lc,
            h1_free: 0.0,
            h1_congested: 0.0,
            z: 0.0,
            events: EventFlags { saturated_in: true, saturated_out: false, domain_exit: None },
        };
        assert!(rec.audit(w.lambda));
        assert_eq!(rec.events.to_string(), "saturation_in");
        let exit = EventFlags { domain_exit: Some(DomainSide::Upstream), ..Default::default() };
        assert_eq!(exit.to_string(), "domain_exit_upstream");
        assert_eq!(EventFlags::default().to_string(), "");
    }
}
