//! Executable property suite: every module's invariants as named checks with
//! fixed seeds, behind the `validate` CLI subcommand.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::control::{backstepping_controls, delays, ControlGains};
use crate::diagnostics::LyapunovWeights;
use crate::error::Result;
use crate::field::DensityField;
use crate::fundamental::{derived_params, matched_setpoint, FundamentalDiagram};
use crate::history::InputHistory;
use crate::plant::{interface_speed, Plant, PlantState};
use crate::runner::{self, Policy, SweepParam};
use crate::scenario::{ModeChoice, Scenario};
use crate::transform::{forward_transform, inverse_transform, target_residual};

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn rng_for(seed: u64, idx: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(idx + 1)))
}

fn default_parts() -> (FundamentalDiagram, crate::fundamental::Setpoint, crate::fundamental::DerivedParams)
{
    let fd = FundamentalDiagram::new(40.0, 0.160).unwrap();
    let sp = matched_setpoint(0.032, 200.0, 500.0, &fd).unwrap();
    let dp = derived_params(&sp, &fd);
    (fd, sp, dp)
}

/// Runs the whole suite with the given seed for the randomized checks.
pub fn validate(seed: u64) -> ValidationReport {
    let mut checks = Vec::new();
    checks.push(flux_symmetry(seed));
    checks.push(characteristic_speed_antisymmetry(seed));
    checks.push(matched_setpoint_feasibility(seed));
    checks.push(flux_derivative_consistency());
    checks.push(equilibrium_fixed_point());
    checks.push(backend_agreement());
    checks.push(finite_volume_conservation());
    checks.push(interface_speed_sign(seed));
    checks.push(characteristics_delay_identity());
    checks.push(control_branch_continuity());
    checks.push(control_linearity(seed));
    checks.push(control_quadrature_convergence());
    checks.push(delay_ordering(seed));
    checks.push(transform_round_trip(seed));
    checks.push(target_boundary_annihilation());
    checks.push(interface_relations(seed));
    checks.push(target_residual_convergence());
    checks.push(lyapunov_definition_audit());
    checks.push(lyapunov_monotone_decay_small_amplitude());
    checks.push(lyapunov_weight_guard());
    checks.push(validity_implication());
    ValidationReport { checks }
}

fn result(name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult { name, passed, detail }
}

fn flux_symmetry(seed: u64) -> CheckResult {
    let (fd, _, _) = default_parts();
    let mut rng = rng_for(seed, 1);
    let q_max = fd.flux(fd.jump_density()).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..2000 {
        let rho = rng.gen_range(0.0..=fd.rho_m());
        let diff = (fd.flux(rho).unwrap() - fd.flux(fd.rho_m() - rho).unwrap()).abs();
        worst = worst.max(diff / q_max);
    }
    result("flux_symmetry", worst <= 1e-12, format!("max relative asymmetry {worst:.3e}"))
}

fn characteristic_speed_antisymmetry(seed: u64) -> CheckResult {
    let (fd, _, _) = default_parts();
    let mut rng = rng_for(seed, 2);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let rho_f = rng.gen_range(1e-6..fd.jump_density());
        let rho_c = fd.rho_m() - rho_f;
        let sum = fd.characteristic_speed(rho_f).unwrap() + fd.characteristic_speed(rho_c).unwrap();
        worst = worst.max(sum.abs() / fd.v_m());
    }
    result(
        "characteristic_speed_antisymmetry",
        worst <= 1e-12,
        format!("max |Q'(rho_f*) + Q'(rho_c*)| / v_m = {worst:.3e}"),
    )
}

fn matched_setpoint_feasibility(seed: u64) -> CheckResult {
    let (fd, _, _) = default_parts();
    let mut rng = rng_for(seed, 3);
    let mut ok = true;
    let mut worst_flux = 0.0f64;
    for _ in 0..500 {
        let rho_f = rng.gen_range(1e-5..fd.jump_density() * 0.999);
        let l_star = rng.gen_range(1.0..499.0);
        let sp = match matched_setpoint(rho_f, l_star, 500.0, &fd) {
            Ok(sp) => sp,
            Err(_) => {
                ok = false;
                continue;
            }
        };
        ok &= sp.rho_f_star > 0.0
            && sp.rho_f_star < fd.jump_density()
            && fd.jump_density() < sp.rho_c_star
            && sp.rho_c_star < fd.rho_m()
            && sp.l_star > 0.0
            && sp.l_star < sp.length
            // Flux matching is exact by construction; the recomposed sum can
            // differ from rho_m by at most one rounding step.
            && sp.rho_c_star == fd.rho_m() - sp.rho_f_star
            && (sp.rho_f_star + sp.rho_c_star - fd.rho_m()).abs() <= f64::EPSILON * fd.rho_m();
        let dq = (fd.flux(sp.rho_f_star).unwrap() - fd.flux(sp.rho_c_star).unwrap()).abs();
        worst_flux = worst_flux.max(dq);
    }
    result(
        "matched_setpoint_feasibility",
        ok && worst_flux <= 1e-12,
        format!("max flux mismatch {worst_flux:.3e} veh/s"),
    )
}

fn flux_derivative_consistency() -> CheckResult {
    let (fd, _, _) = default_parts();
    let h = 1e-4;
    let mut worst = 0.0f64;
    for k in 1..200 {
        let rho = fd.rho_m() * k as f64 / 200.0;
        let fdiff = (fd.flux(rho + h).unwrap() - fd.flux(rho - h).unwrap()) / (2.0 * h);
        worst = worst.max((fd.characteristic_speed(rho).unwrap() - fdiff).abs());
    }
    result(
        "characteristic_speed_is_flux_derivative",
        worst <= 1e-8,
        format!("max |Q' - central difference| = {worst:.3e} m/s"),
    )
}

fn equilibrium_fixed_point() -> CheckResult {
    let mut worst = 0.0f64;
    for mode in [ModeChoice::Characteristics, ModeChoice::FiniteVolume] {
        let mut s = Scenario::default();
        s.amp_f = 0.0;
        s.amp_c = 0.0;
        s.l0 = s.l_star;
        s.n_cells = 60;
        s.horizon = 5.0;
        s.mode = mode;
        let run = match runner::run(&s, Policy::Backstepping) {
            Ok(r) => r,
            Err(e) => return result("equilibrium_fixed_point", false, e.to_string()),
        };
        for rec in &run.trace {
            worst = worst.max((rec.l - s.l_star).abs()).max(rec.u_in.abs()).max(rec.u_out.abs());
        }
    }
    result(
        "equilibrium_fixed_point",
        worst <= 1e-9,
        format!("max drift over both backends {worst:.3e}"),
    )
}

fn backend_agreement() -> CheckResult {
    // Deviations of ~0.2% of rho_m so the nonlinear model error sits far
    // below the O(dx) scheme error.
    let base = {
        let mut s = Scenario::default();
        s.amp_f = 0.0003;
        s.amp_c = 0.0003;
        s.horizon = 15.0;
        s
    };
    let reference = {
        let mut s = base.clone();
        s.mode = ModeChoice::Characteristics;
        s.n_cells = 400;
        runner::run(&s, Policy::OpenLoop)
    };
    let reference = match reference {
        Ok(r) => r,
        Err(e) => return result("backend_agreement_small_deviation", false, e.to_string()),
    };
    let mut errs = Vec::new();
    for n in [60usize, 120] {
        let mut s = base.clone();
        s.mode = ModeChoice::FiniteVolume;
        s.n_cells = n;
        let run = match runner::run(&s, Policy::OpenLoop) {
            Ok(r) => r,
            Err(e) => return result("backend_agreement_small_deviation", false, e.to_string()),
        };
        let err = run
            .trace
            .iter()
            .zip(reference.trace.iter())
            .map(|(a, b)| (a.l - b.l).abs())
            .fold(0.0, f64::max);
        errs.push(err);
    }
    let ratio = errs[0] / errs[1].max(1e-300);
    let passed = errs[1] < 0.5 && ratio >= 1.35;
    result(
        "backend_agreement_small_deviation",
        passed,
        format!("front error {:.3e} m at n=60, {:.3e} m at n=120 (ratio {ratio:.2})", errs[0], errs[1]),
    )
}

fn finite_volume_conservation() -> CheckResult {
    let mut s = Scenario::default();
    s.mode = ModeChoice::FiniteVolume;
    s.n_cells = 100;
    s.horizon = 20.0;
    let run = match runner::run(&s, Policy::Backstepping) {
        Ok(r) => r,
        Err(e) => return result("finite_volume_conservation", false, e.to_string()),
    };
    let audit = run.conservation.unwrap();
    let exact_drift = audit.relative_drift();
    // Same audit against the trapezoidal vehicle count of the snapshots.
    let n0 = crate::plant::total_vehicles(&run.snapshots[0].state);
    let n1 = crate::plant::total_vehicles(&run.snapshots.last().unwrap().state);
    let trapz_drift = ((n1 - n0) - (audit.inflow - audit.outflow)).abs() / n0;
    result(
        "finite_volume_conservation",
        exact_drift <= 1e-9 && trapz_drift <= 1e-3,
        format!("exact drift {exact_drift:.3e}, trapezoid drift {trapz_drift:.3e}"),
    )
}

fn interface_speed_sign(seed: u64) -> CheckResult {
    let (fd, _, _) = default_parts();
    let mut rng = rng_for(seed, 8);
    let mut ok = true;
    let mut n_checked = 0;
    for _ in 0..2000 {
        let rho_f = rng.gen_range(1e-4..fd.jump_density());
        let rho_c = rng.gen_range(fd.jump_density()..fd.rho_m());
        if rho_f + rho_c <= fd.rho_m() {
            continue;
        }
        n_checked += 1;
        let speed = interface_speed(rho_f, rho_c, &fd);
        ok &= speed < 0.0;
        // Oversum densities also mean the downstream flux is the smaller one.
        ok &= fd.flux(rho_c).unwrap() < fd.flux(rho_f).unwrap();
    }
    result(
        "interface_speed_sign",
        ok && n_checked > 100,
        format!("{n_checked} oversum samples, all moving upstream: {ok}"),
    )
}

fn characteristics_delay_identity() -> CheckResult {
    let s = Scenario::default();
    let r = s.resolve().unwrap();
    let dt = s.dt;
    let mut in_h = InputHistory::new(1e9);
    let mut out_h = InputHistory::new(1e9);
    let mut plant = match Plant::new(r.fd, r.sp, r.params, r.mode, s.n_cells, &r.ic) {
        Ok(p) => p,
        Err(e) => return result("characteristics_delay_identity", false, e.to_string()),
    };
    plant.seed_histories(&r.ic, &mut in_h, &mut out_h, dt);
    plant.materialize(&in_h, &out_h).unwrap();

    // Independent reconstruction of the input signals at the same knots.
    let mut knots_in: Vec<(f64, f64)> = Vec::new();
    let mut knots_out: Vec<(f64, f64)> = Vec::new();
    let n_seed = (r.sp.length / r.params.u / dt).ceil() as usize + 2;
    for k in (1..=n_seed).rev() {
        let tau = -(k as f64) * dt;
        knots_in.push((tau, r.ic.dev_f(-r.params.u * tau)));
        let x_c = r.sp.length + r.params.u * tau;
        knots_out.push((tau, if x_c >= 0.0 { r.ic.dev_c(x_c) } else { 0.0 }));
    }
    let interp = |knots: &[(f64, f64)], t: f64| -> f64 {
        if knots.is_empty() || t < knots[0].0 {
            return 0.0;
        }
        if t >= knots.last().unwrap().0 {
            return knots.last().unwrap().1;
        }
        let idx = knots.partition_point(|&(tk, _)| tk <= t);
        let (t0, v0) = knots[idx - 1];
        let (t1, v1) = knots[idx];
        v0 + (t - t0) / (t1 - t0) * (v1 - v0)
    };

    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for k in 0..1500 {
        let t = plant.t();
        let input = crate::control::backstepping_controls_self_consistent(
            plant.state(),
            &r.sp,
            &r.gains,
            &r.params,
        );
        let applied =
            crate::control::apply_boundary(&input, &r.sp, &r.fd, 0.02, &mut in_h, &mut out_h);
        knots_in.push((t, applied.u_in));
        knots_out.push((t, applied.u_out));
        plant.materialize(&in_h, &out_h).unwrap();

        let state = plant.state();
        let (d_f, d_c) = delays(state.l, r.sp.length, r.params.u);
        let dev_front_f = state.free.samples().last().unwrap() - r.sp.rho_f_star;
        let dev_front_c = state.congested.samples()[0] - r.sp.rho_c_star;
        let expect_f = interp(&knots_in, t - d_f);
        let expect_c = interp(&knots_out, t - d_c);
        worst = worst.max((dev_front_f - expect_f).abs()).max((dev_front_c - expect_c).abs());
        scale = scale.max(expect_f.abs()).max(expect_c.abs());
        if plant.step(&in_h, &out_h, s.dt).is_err() {
            return result("characteristics_delay_identity", false, "solver error".into());
        }
        let _ = k;
    }
    let rel = worst / scale.max(1e-300);
    result(
        "characteristics_delay_identity",
        rel <= 1e-9,
        format!("max relative mismatch {rel:.3e}"),
    )
}

fn control_branch_continuity() -> CheckResult {
    let (_, sp, dp) = default_parts();
    let gains = ControlGains::new(3e-4, 2e-4, &dp).unwrap();
    let dev_f = |x: f64| 0.004 * (x / 77.0).sin();
    let dev_c = |x: f64| 0.003 * (x / 91.0).cos();
    let eval = |l: f64| {
        let state = PlantState {
            free: DensityField::from_fn(0.0, l, 800, |x| sp.rho_f_star + dev_f(x)),
            congested: DensityField::from_fn(l, sp.length, 800, |x| sp.rho_c_star + dev_c(x)),
            l,
            t: 0.0,
        };
        backstepping_controls(&state, &sp, &gains, &dp)
    };
    let mid = eval(250.0);
    let gap = |eps: f64| {
        let lo = eval(250.0 - eps);
        let hi = eval(250.0 + eps);
        (lo.u_in - mid.u_in)
            .abs()
            .max((hi.u_in - mid.u_in).abs())
            .max((lo.u_out - mid.u_out).abs())
            .max((hi.u_out - mid.u_out).abs())
    };
    let g2 = gap(2.0);
    let g025 = gap(0.25);
    let passed = g025 <= 0.25 * g2 + 1e-12 && g025 <= 1e-4;
    result(
        "control_branch_continuity_at_midpoint",
        passed,
        format!("gap {g2:.3e} at eps=2 m, {g025:.3e} at eps=0.25 m"),
    )
}

fn control_linearity(seed: u64) -> CheckResult {
    let (_, sp, dp) = default_parts();
    let gains = ControlGains::new(2e-4, 4e-4, &dp).unwrap();
    let mut rng = rng_for(seed, 11);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let l = rng.gen_range(100.0..400.0);
        let x_in = gains.k_f * (l - sp.l_star);
        let x_out = gains.k_c * (l - sp.l_star);
        let mut fields = || {
            let a: f64 = rng.gen_range(-0.004..0.004);
            let b: f64 = rng.gen_range(-0.004..0.004);
            let p: f64 = rng.gen_range(0.02..0.08);
            move |x: f64| a * (x * p).sin() + b
        };
        let (f1, c1, f2, c2) = (fields(), fields(), fields(), fields());
        let mk = |ff: &dyn Fn(f64) -> f64, cc: &dyn Fn(f64) -> f64| PlantState {
            free: DensityField::from_fn(0.0, l, 150, |x| sp.rho_f_star + ff(x)),
            congested: DensityField::from_fn(l, sp.length, 150, |x| sp.rho_c_star + cc(x)),
            l,
            t: 0.0,
        };
        let u1 = backstepping_controls(&mk(&f1, &c1), &sp, &gains, &dp);
        let u2 = backstepping_controls(&mk(&f2, &c2), &sp, &gains, &dp);
        let usum = backstepping_controls(
            &mk(&|x| f1(x) + f2(x), &|x| c1(x) + c2(x)),
            &sp,
            &gains,
            &dp,
        );
        worst = worst
            .max(((usum.u_in - x_in) - (u1.u_in - x_in) - (u2.u_in - x_in)).abs())
            .max(((usum.u_out - x_out) - (u1.u_out - x_out) - (u2.u_out - x_out)).abs());
    }
    result(
        "control_linearity_superposition",
        worst <= 1e-12,
        format!("max superposition defect {worst:.3e} veh/m"),
    )
}

fn control_quadrature_convergence() -> CheckResult {
    let (_, sp, dp) = default_parts();
    let gains = ControlGains::new(3e-4, 3e-4, &dp).unwrap();
    let l = 200.0;
    let c = dp.b / dp.u;
    let qf = 1e-7; // dev_f = qf x^2
    let qc = 2e-7; // dev_c = qc (x - l)^2
    let x_dev = l - sp.l_star;
    // Hand integrals: ∫_0^l qf x^2 = qf l^3/3; ∫_l^{2l} qc (x-l)^2 = qc l^3/3;
    // ∫_l^L qc (x-l)^2 = qc (L-l)^3/3; ∫_0^l (outlet free integral) = qf l^3/3.
    let exact_in = gains.k_f * (x_dev - c * (qf * l.powi(3) / 3.0 + qc * l.powi(3) / 3.0));
    let exact_out = gains.k_c
        * (x_dev - c * (qc * (sp.length - l).powi(3) / 3.0 + qf * l.powi(3) / 3.0));
    let eval = |n: usize| {
        let state = PlantState {
            free: DensityField::from_fn(0.0, l, n, |x| sp.rho_f_star + qf * x * x),
            congested: DensityField::from_fn(l, sp.length, n, |x| {
                sp.rho_c_star + qc * (x - l) * (x - l)
            }),
            l,
            t: 0.0,
        };
        let u = backstepping_controls(&state, &sp, &gains, &dp);
        ((u.u_in - exact_in).abs(), (u.u_out - exact_out).abs())
    };
    let (e1_in, e1_out) = eval(96);
    let (e2_in, e2_out) = eval(192);
    let r_in = e1_in / e2_in.max(1e-300);
    let r_out = e1_out / e2_out.max(1e-300);
    let passed = (3.4..=4.6).contains(&r_in) && (3.4..=4.6).contains(&r_out);
    result(
        "control_quadrature_convergence",
        passed,
        format!("halving dx cuts the error by {r_in:.2} (inlet) / {r_out:.2} (outlet)"),
    )
}

fn delay_ordering(seed: u64) -> CheckResult {
    let mut rng = rng_for(seed, 13);
    let mut ok = true;
    for _ in 0..1000 {
        let l = rng.gen_range(1.0..499.0);
        let (d_f, d_c) = delays(l, 500.0, 24.0);
        ok &= (d_f - d_c).signum() == (l - 250.0).signum() || l == 250.0;
    }
    result("delay_ordering", ok, "sign(D_f - D_c) == sign(l - L/2)".into())
}

/// Maximum relative round-trip error over randomized smooth fields.
/// `faulty` flips the sign of the forward target fields before inversion,
/// the fault-injection fixture for the mutation test.
pub(crate) fn round_trip_max_rel_error(
    seed: u64,
    n_fields: usize,
    n_cells: usize,
    faulty: bool,
) -> f64 {
    let (_, sp, dp) = default_parts();
    let gains = ControlGains::new(2e-4, 3e-4, &dp).unwrap();
    let mut rng = rng_for(seed, 14);
    let max_amp = 0.05 * 0.160;
    let mut worst = 0.0f64;
    fn mode_sum(x: f64, coeffs: &[(f64, f64)]) -> f64 {
        coeffs
            .iter()
            .enumerate()
            .map(|(m, &(a, p))| a * ((m + 1) as f64 * x / 120.0 + p).sin())
            .sum()
    }
    for _ in 0..n_fields {
        let l = rng.gen_range(150.0..350.0);
        let coeffs_f: Vec<(f64, f64)> = (0..4)
            .map(|_| (rng.gen_range(-max_amp..max_amp) / 4.0, rng.gen_range(0.0..6.28)))
            .collect();
        let coeffs_c: Vec<(f64, f64)> = (0..4)
            .map(|_| (rng.gen_range(-max_amp..max_amp) / 4.0, rng.gen_range(0.0..6.28)))
            .collect();
        let state = PlantState {
            free: DensityField::from_fn(0.0, l, n_cells, |x| sp.rho_f_star + mode_sum(x, &coeffs_f)),
            congested: DensityField::from_fn(l, sp.length, n_cells, |x| {
                sp.rho_c_star + mode_sum(x, &coeffs_c)
            }),
            l,
            t: 0.0,
        };
        let (orig_f, orig_c) = state.deviations(&sp);
        let mut tg = forward_transform(&state, &sp, &gains, &dp);
        if faulty {
            tg.w_f = tg.w_f.map(|v| -v);
        }
        let (rec_f, rec_c, _) = inverse_transform(&tg, &sp, &gains, &dp);
        let scale = orig_f
            .samples()
            .iter()
            .chain(orig_c.samples())
            .fold(0.0f64, |m, &v| m.max(v.abs()))
            .max(1e-12);
        for (a, b) in rec_f.samples().iter().zip(orig_f.samples()) {
            worst = worst.max((a - b).abs() / scale);
        }
        for (a, b) in rec_c.samples().iter().zip(orig_c.samples()) {
            worst = worst.max((a - b).abs() / scale);
        }
    }
    worst
}

fn transform_round_trip(seed: u64) -> CheckResult {
    let worst = round_trip_max_rel_error(seed, 100, 400, false);
    result(
        "transform_round_trip",
        worst <= 1e-8,
        format!("max relative round-trip error {worst:.3e} over 100 random fields"),
    )
}

fn target_boundary_annihilation() -> CheckResult {
    let mut s = Scenario::default();
    s.horizon = 10.0;
    s.n_cells = 120;
    let run = match runner::run(&s, Policy::Backstepping) {
        Ok(r) => r,
        Err(e) => return result("target_boundary_annihilation", false, e.to_string()),
    };
    let rep = run.residuals.unwrap();
    let bound = 1e-10 * s.rho_m;
    result(
        "target_boundary_annihilation",
        rep.bc_inlet <= bound && rep.bc_outlet <= bound,
        format!("max |w_f(0)| = {:.3e}, |w_c(L)| = {:.3e} veh/m", rep.bc_inlet, rep.bc_outlet),
    )
}

fn interface_relations(seed: u64) -> CheckResult {
    let (_, sp, dp) = default_parts();
    let gains = ControlGains::new(4e-4, 1e-4, &dp).unwrap();
    let mut rng = rng_for(seed, 16);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let l = rng.gen_range(50.0..450.0);
        let a: f64 = rng.gen_range(-0.005..0.005);
        let b: f64 = rng.gen_range(-0.005..0.005);
        let state = PlantState {
            free: DensityField::from_fn(0.0, l, 80, |x| sp.rho_f_star + a * (x / 60.0).sin()),
            congested: DensityField::from_fn(l, sp.length, 80, |x| {
                sp.rho_c_star + b * (x / 45.0).cos()
            }),
            l,
            t: 0.0,
        };
        let x_dev = l - sp.l_star;
        let tg = forward_transform(&state, &sp, &gains, &dp);
        let (wf_l, wc_l) = tg.interface_values();
        let dev_f_l = state.free.samples().last().unwrap() - sp.rho_f_star;
        let dev_c_l = state.congested.samples()[0] - sp.rho_c_star;
        worst = worst.max((wf_l - (dev_f_l - gains.k_f * x_dev)).abs());
        worst = worst.max((wc_l - (dev_c_l - gains.k_c * x_dev)).abs());
    }
    result(
        "interface_relations",
        worst <= 1e-14,
        format!("max defect {worst:.3e} veh/m (degenerate bounds)"),
    )
}

fn target_residual_convergence() -> CheckResult {
    // Convergence is measured on a trajectory driven by C1-smooth boundary
    // inputs. Any feedback handoff at t = 0 launches derivative kinks that
    // circulate through the delay loop forever and pin the pointwise interior
    // residual at the kink magnitude, so the closed-loop run is the wrong
    // place to measure stencil convergence; the closed-loop exactness facts
    // (boundary annihilation) are asserted by their own check.
    let run_traj = |n_cells: usize, dt: f64| -> Result<Vec<PlantState>> {
        let mut s = Scenario::default();
        s.n_cells = n_cells;
        s.dt = dt;
        s.amp_f = 0.0;
        s.amp_c = 0.0;
        s.horizon = 20.0;
        let r = s.resolve()?;
        let mut in_h = InputHistory::new(2.0 * r.sp.length / r.params.u);
        let mut out_h = InputHistory::new(2.0 * r.sp.length / r.params.u);
        let mut plant = Plant::new(r.fd, r.sp, r.params, r.mode, s.n_cells, &r.ic)?;
        plant.seed_histories(&r.ic, &mut in_h, &mut out_h, dt);
        plant.materialize(&in_h, &out_h)?;
        let pi = std::f64::consts::PI;
        let env = |t: f64| if t < 4.0 { 0.5 * (1.0 - (pi * t / 4.0).cos()) } else { 1.0 };
        let steps = (s.horizon / dt).round() as usize;
        let mut traj = Vec::new();
        for k in 0..=steps {
            let t = k as f64 * dt;
            in_h.record(t, env(t) * 3e-3 * (2.0 * pi * t / 8.0).sin());
            out_h.record(t, env(t) * 2e-3 * ((2.0 * pi * t / 11.0).cos() - 1.0));
            plant.materialize(&in_h, &out_h)?;
            if t >= 2.0 {
                traj.push(plant.state().clone());
            }
            plant.step(&in_h, &out_h, dt)?;
        }
        Ok(traj)
    };
    let (_, sp, dp) = default_parts();
    let gains = ControlGains::new(2e-4, 2e-4, &dp).unwrap();
    let coarse = match run_traj(100, 0.02).and_then(|t| target_residual(&t, &sp, &gains, &dp)) {
        Ok(r) => r,
        Err(e) => return result("target_residual_convergence", false, e.to_string()),
    };
    let fine = match run_traj(200, 0.01).and_then(|t| target_residual(&t, &sp, &gains, &dp)) {
        Ok(r) => r,
        Err(e) => return result("target_residual_convergence", false, e.to_string()),
    };
    let r_free = coarse.pde_free_rms / fine.pde_free_rms.max(1e-300);
    let r_cong = coarse.pde_congested_rms / fine.pde_congested_rms.max(1e-300);
    let r_free_max = coarse.pde_free / fine.pde_free.max(1e-300);
    let r_ode = coarse.ode / fine.ode.max(1e-300);
    let passed = r_free >= 1.5 && r_cong >= 1.5 && r_free_max >= 1.5 && r_ode >= 1.5;
    result(
        "target_residual_convergence",
        passed,
        format!(
            "under (dt, dx) halving the interior norms shrink by {r_free:.2}/{r_cong:.2} (RMS), \
             {r_free_max:.2} (max), front ODE residual by {r_ode:.2}"
        ),
    )
}

fn lyapunov_definition_audit() -> CheckResult {
    let mut s = Scenario::default();
    s.horizon = 8.0;
    let run = match runner::run(&s, Policy::Backstepping) {
        Ok(r) => r,
        Err(e) => return result("lyapunov_definition_audit", false, e.to_string()),
    };
    let ok = run.trace.iter().all(|rec| rec.audit(run.lambda));
    result("lyapunov_definition_audit", ok, format!("{} records audited", run.trace.len()))
}

fn lyapunov_monotone_decay_small_amplitude() -> CheckResult {
    let mut s = Scenario::default();
    s.horizon = 60.0;
    let scales = [1.0, 0.5, 0.25, 0.125];
    let entries = runner::sweep(&s, SweepParam::AmplitudeScale, &scales, Policy::Backstepping);
    let mut monotone_at = Vec::new();
    for e in &entries {
        let Ok(run) = &e.outcome else {
            return result("lyapunov_monotone_decay_small_amplitude", false, "run failed".into());
        };
        let mut monotone = true;
        let mut prev: Option<f64> = None;
        for rec in run.trace.iter().filter(|rec| rec.t >= 2.0) {
            if let Some(p) = prev {
                if rec.lyapunov.v > p * (1.0 + 1e-9) {
                    monotone = false;
                    break;
                }
            }
            prev = Some(rec.lyapunov.v);
        }
        if monotone {
            monotone_at.push(e.value);
        }
    }
    // The decay property must hold once amplitudes are small enough; require
    // it for the two smallest scales.
    let passed = monotone_at.contains(&0.25) && monotone_at.contains(&0.125);
    result(
        "lyapunov_monotone_decay_small_amplitude",
        passed,
        format!("V non-increasing after 2 s at amplitude scales {monotone_at:?}"),
    )
}

fn lyapunov_weight_guard() -> CheckResult {
    let (_, _, dp) = default_parts();
    let gains = ControlGains::new(2e-4, 2e-4, &dp).unwrap();
    let bound = 4.0 * dp.b / (gains.a * dp.u);
    let rejected = LyapunovWeights::new(bound * 0.5, &gains, &dp).is_err()
        && LyapunovWeights::new(bound, &gains, &dp).is_err();
    let accepted = LyapunovWeights::new(bound * 1.5, &gains, &dp).is_ok();
    result(
        "lyapunov_weight_guard",
        rejected && accepted,
        format!("admissibility bound 4b/(au) = {bound:.3}"),
    )
}

fn validity_implication() -> CheckResult {
    let mut s = Scenario::default();
    s.horizon = 120.0;
    let scales = [0.25, 0.125];
    let entries = runner::sweep(&s, SweepParam::AmplitudeScale, &scales, Policy::Backstepping);
    let delta1 = (s.length - s.l_star).powi(2).min(s.l_star.powi(2));
    let mut ok = true;
    let mut detail = String::new();
    for e in &entries {
        let Ok(run) = &e.outcome else {
            return result("validity_implication", false, "run failed".into());
        };
        let premise = run.trace.iter().all(|rec| rec.x_dev * rec.x_dev < delta1);
        let validity = run.trace.iter().all(|rec| rec.l > 0.0 && rec.l < s.length)
            && run.completed();
        ok &= premise && validity;
        detail.push_str(&format!(
            "scale {}: X^2 < {delta1} {}, front inside (0, L) {}; ",
            e.value, premise, validity
        ));
    }
    result("validity_implication", ok, detail)
}
