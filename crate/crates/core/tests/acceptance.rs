//! Acceptance suite. Each test prints one `criterion N PASS|FAIL` line to
//! stderr (bypassing output capture) and then asserts the same verdict.
//! Wall-clock budgets count toward the verdict.

use std::io::Write;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use mrsle_core::battery::{run_battery, BatteryReport, BatterySpec};
use mrsle_core::config::{equally_spaced, grad_u, log_partition_u, spacing_defect, u_min, TorusConfig};
use mrsle_core::drivers::{gradient_flow_u, zero_energy_driver};
use mrsle_core::energy::{blm_rate_finite_t, sle_constants, BlmRate};
use mrsle_core::escape::{escape_probability_mc, fit_escape_exponent, partition_expectation_check, transience_experiment, EscapeSetup};
use mrsle_core::geometry::C;
use mrsle_core::loewner::{refit_time_change, trace, trace_rows, DriverPath};
use mrsle_core::loopmeasure::{estimate_loop_term, lattice_loop_oracle, slope_experiment, LoopParams};
use mrsle_core::par::default_threads;
use mrsle_core::rng::{open01, SeededRng};
use mrsle_core::tilting::{concentration_experiment, tilt_crosscheck, TiltSetup};

const SEED: u64 = 20_241_018;

fn report(id: u32, name: &str, ok: bool, elapsed: Duration, budget_s: f64, detail: &str) {
    let secs = elapsed.as_secs_f64();
    let in_time = secs <= budget_s;
    let verdict = if ok && in_time { "PASS" } else { "FAIL" };
    let late = if in_time { "" } else { " over budget" };
    let line = format!("criterion {id:>2} {verdict} {name}: {detail} [{secs:.1}s of {budget_s:.0}s{late}]\n");
    std::io::stderr().write_all(line.as_bytes()).unwrap();
    assert!(ok && in_time, "{}", line.trim_end());
}

fn threads() -> usize {
    default_threads()
}

struct Battery {
    report: BatteryReport,
    elapsed: Duration,
}

// shared by criteria 1 and 2
fn battery() -> &'static Battery {
    static B: OnceLock<Battery> = OnceLock::new();
    B.get_or_init(|| {
        let dt = 1e-3;
        let spec = BatterySpec {
            n_values: vec![2, 3],
            kappa: 4.0,
            trajectories: 200,
            dt,
            t_max: 1.0,
            v_grid: vec![2.0, 4.0, 6.0],
            tol: 5.0 * dt,
            seed: SEED,
            threads: threads(),
            sigma_shift: 0.0,
        };
        let t = Instant::now();
        let report = run_battery(&spec).expect("battery");
        Battery { report, elapsed: t.elapsed() }
    })
}

#[test]
fn criterion_01_time_change_sandwich() {
    let b = battery();
    let lo = &b.report.sigma_half_log;
    let int = &b.report.sigma_integrated;
    let ok = lo.lower_violations == 0 && lo.upper_violations == 0;
    let detail = format!(
        "n t - log(n)/2 <= sigma < n t on {} trajectories x n in {{2,3}}: {} lower / {} upper violations of {} checks, worst lower margin {:.3e}; log(1 + (e^(nt)-1)/n) lower bound: {} violations, margin {:.3e}",
        b.report.trajectories, lo.lower_violations, lo.upper_violations, lo.checked, lo.worst_lower_margin, int.lower_violations, int.worst_lower_margin
    );
    report(1, "time-change sandwich", ok, b.elapsed, 300.0, &detail);
}

#[test]
fn criterion_02_hitting_time_sandwich() {
    let b = battery();
    let h = &b.report.hitting;
    let ok = h.holds() && h.checked > 0;
    let detail = format!(
        "v - log 4 <= n rho(v) <= v + log(n)/2 at v in {{2,4,6}}: {} checks, {} missing, {} lower / {} upper violations, margins {:.3e} / {:.3e}",
        h.checked, h.missing, h.lower_violations, h.upper_violations, h.worst_lower_margin, h.worst_upper_margin
    );
    report(2, "hitting-time sandwich", ok, b.elapsed, 300.0, &detail);
}

fn random_start(n: usize, rng: &SeededRng, i: u64) -> TorusConfig<f64> {
    let mut r = rng.slot(i);
    loop {
        let a: Vec<f64> = (0..n).map(|_| std::f64::consts::TAU * open01(&mut r)).collect();
        if let Ok(c) = TorusConfig::new(a) {
            if c.min_gap() > 1e-6 {
                return c;
            }
        }
    }
}

#[test]
fn criterion_03_u_minimization() {
    let t = Instant::now();
    let rng = SeededRng::new(SEED, 3);
    let (mut worst_u, mut worst_gap) = (0.0f64, 0.0f64);
    for n in [2usize, 3, 4] {
        for i in 0..100u64 {
            let th0 = random_start(n, &rng, n as u64 * 1000 + i);
            let p = gradient_flow_u(&th0, 100.0, 0.01).expect("flow");
            let end = TorusConfig::new(p.state(p.steps).to_vec()).expect("end state");
            worst_u = worst_u.max((log_partition_u(&end).to_float() - u_min::<f64>(n)).abs());
            worst_gap = worst_gap.max(spacing_defect(&end));
        }
    }
    let ok = worst_u < 1e-8 && worst_gap < 1e-6;
    report(3, "U minimization", ok, t.elapsed(), 60.0, &format!("300 flows to T=100: max |U - u_min| {worst_u:.2e}, max spacing defect {worst_gap:.2e}"));
}

fn slope_check(id: u32, n: usize) {
    let t = Instant::now();
    let horizons = [0.5, 1.0, 1.5, 2.0, 2.5];
    let params = LoopParams { n_samples: LOOPS_SLOPE, seed: SEED, stream: 40 + n as u64 * 10, threads: threads(), ..Default::default() };
    let r = slope_experiment(n, &horizons, 0.005, &params).expect("slope");
    let rel = (r.slope - r.reference).abs() / r.reference;
    let ls: Vec<String> = r.estimates.iter().map(|e| format!("{:.3}", e.mass)).collect();
    let detail = format!("n={n} slope {:.4} +- {:.4} vs {:.4} ({:.1}% off, limit 15%); L(T) = [{}]", r.slope, r.stderr, r.reference, 100.0 * rel, ls.join(", "));
    report(id, "loop-growth constant", rel <= 0.15, t.elapsed(), 1800.0, &detail);
}

const LOOPS_SLOPE: usize = 500_000;

#[test]
fn criterion_04_loop_growth_n2() {
    slope_check(4, 2);
}

#[test]
fn criterion_04_loop_growth_n3() {
    slope_check(4, 3);
}

fn radial(theta: f64, r_in: f64, k: usize) -> Vec<C<f64>> {
    (0..=k).map(|i| C::from_polar(1.0 - (1.0 - r_in) * i as f64 / k as f64, theta)).collect()
}

#[test]
fn criterion_05_loop_estimator_cross_validation() {
    let t = Instant::now();
    let r = (-1.0f64).exp();
    let pi = std::f64::consts::PI;
    let configs = [
        ("opposite slits", vec![radial(0.0, r, 100), radial(pi, r, 100)]),
        ("orthogonal slits", vec![radial(0.0, r, 100), radial(pi / 2.0, r, 100)]),
        ("three slits", (0..3).map(|j| radial(2.0 * pi * j as f64 / 3.0, r, 100)).collect()),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (i, (name, c)) in configs.iter().enumerate() {
        let mc = estimate_loop_term(c, &LoopParams { n_samples: 1_000_000, seed: SEED, stream: 50 + i as u64, threads: threads(), ..Default::default() }).expect("bridge mc");
        let lat = lattice_loop_oracle(c, 1.0 / 64.0).expect("lattice");
        let z = (mc.mass - lat.mass).abs() / mc.stderr.hypot(lat.stderr);
        ok &= z <= 3.0;
        parts.push(format!("{name} {:.5}+-{:.5} vs {:.5}+-{:.5} ({z:.2} se)", mc.mass, mc.stderr, lat.mass, lat.stderr));
    }
    report(5, "loop-estimator cross-validation", ok, t.elapsed(), 1200.0, &parts.join("; "));
}

#[test]
fn criterion_06_escape_exponent() {
    let t = Instant::now();
    let v = 3.0;
    let gaps = [0.5, 1.0, 1.5, 2.0];
    let setup = EscapeSetup {
        kappa: 4.0,
        theta0: equally_spaced(2, 0.0).into_angles(),
        horizon: 3.0,
        dt: 0.01,
        n_samples: 100_000,
        stride: 1,
        seed: SEED,
        threads: threads(),
    };
    let pairs: Vec<(f64, f64)> = gaps.iter().map(|g| (v - g, v)).collect();
    let est = escape_probability_mc(&setup, &pairs).expect("escape mc");
    let ps: Vec<String> = est.iter().map(|e| format!("{}/{}", e.escapes, e.hits)).collect();
    let (ok, detail) = match fit_escape_exponent(&est) {
        Ok(f) => {
            let s = f.fit.slope;
            let ok = s < 0.0 && (s + 0.5).abs() <= 0.2 * 0.5;
            (ok, format!("slope {s:.3} +- {:.3} vs -0.5 (limit 20%); escapes/hits by gap {gaps:?}: [{}]", f.fit.slope_stderr, ps.join(", ")))
        }
        Err(e) => (false, format!("no fit ({e}); escapes/hits by gap {gaps:?}: [{}]", ps.join(", "))),
    };
    report(6, "escape exponent", ok, t.elapsed(), 3600.0, &detail);
}

#[test]
fn criterion_07_transience_envelope() {
    let t = Instant::now();
    let r = transience_experiment(2.0, 2, 4.0, 2e-3, 25, 100, SEED, threads()).expect("transience");
    let median = *r.median_tip.last().unwrap();
    let thr = 4.0 * (-7.0f64).exp();
    let ok = r.envelope_violations_tip == 0 && median < thr;
    let detail = format!("{} envelope violations over {} samples x {} times; median tip at t=4 {median:.3e} < {thr:.3e}", r.envelope_violations_tip, r.n_samples, r.times.len());
    report(7, "transience envelope", ok, t.elapsed(), 600.0, &detail);
}

fn rate(d: &DriverPath<f64>, horizon: f64, stream: u64) -> BlmRate {
    let curve = trace(d).expect("trace");
    let tc = refit_time_change(&curve).expect("time change");
    let stride = (d.steps / 400).max(1);
    let mut rows: Vec<usize> = (0..=d.steps).step_by(stride).collect();
    if *rows.last().unwrap() != d.steps {
        rows.push(d.steps);
    }
    let coarse = trace_rows(d, &rows).expect("coarse trace");
    let pts: Vec<Vec<C<f64>>> = (0..d.n).map(|j| coarse.curve(j)).collect();
    let loops = estimate_loop_term(&pts, &LoopParams { n_samples: 1_000_000, seed: SEED, stream, threads: threads(), ..Default::default() }).expect("loops");
    blm_rate_finite_t(d, &curve, &tc, loops.mass, loops.stderr, horizon).expect("rate")
}

#[test]
fn criterion_08_rate_identity() {
    let t = Instant::now();
    let horizon = 1.0;
    let d = zero_energy_driver(&equally_spaced(2, 0.0), horizon, 2e-3).expect("driver");
    let z = rate(&d, horizon, 80);
    let w = rate(&d.spinning(0.3), horizon, 81);
    let ok_zero = z.rate_bm_form.abs() <= 1e-3 + 3.0 * z.rate_bm_stderr && z.rate_dyson <= 1e-6;
    let ok_spin = (w.rate_bm_form - w.rate_dyson).abs() <= 1e-2 + 3.0 * w.rate_bm_stderr;
    let detail = format!(
        "T=1 zero energy: rate_bm {:.4} +- {:.4}, rate_dyson {:.1e}; omega=0.3: rate_bm {:.4} +- {:.4} vs rate_dyson {:.4}",
        z.rate_bm_form, z.rate_bm_stderr, z.rate_dyson, w.rate_bm_form, w.rate_bm_stderr, w.rate_dyson
    );
    report(8, "rate-function identity", ok_zero && ok_spin, t.elapsed(), 1800.0, &detail);
}

#[test]
fn criterion_09_sampler_equivalence() {
    let t = Instant::now();
    let setup = TiltSetup {
        kappa: 4.0,
        theta0: equally_spaced(2, 0.0).into_angles(),
        horizon: 0.25,
        dt: 2e-3,
        n_samples: 11_500,
        delta_min: None,
        loop_samples: 300,
        loop_stderr_target: 0.2,
        loop_samples_max: 204_800,
        seed: SEED,
        threads: threads(),
    };
    let (_, cc) = tilt_crosscheck(&setup, 10_000, 1e-3).expect("crosscheck");
    let ok = cc.ess >= 1e4 && cc.ks_gap < 0.05;
    let detail = format!("KS {:.4} (limit 0.05) at ESS {:.0} (need 1e4); collided {:.2}%, U means differ by {:.2} se", cc.ks_gap, cc.ess, 100.0 * cc.collided_fraction, cc.u_z);
    report(9, "sampler equivalence", ok, t.elapsed(), 1800.0, &detail);
}

#[test]
fn criterion_10_partition_expectation() {
    let t = Instant::now();
    let p = partition_expectation_check(4.0, &equally_spaced(2, 0.0), 0.5, 1e-3, 100_000, SEED, threads()).expect("partition");
    let detail = format!("mean {:.4} - 2 x {:.4} <= bound {:.4}; excess kurtosis {:.1}", p.mean, p.stderr, p.bound, p.kurtosis);
    report(10, "partition-expectation bound", p.holds, t.elapsed(), 300.0, &detail);
}

#[test]
fn criterion_11_concentration() {
    let t = Instant::now();
    let kappas = [1.0, 0.5, 0.25, 0.1];
    let r = concentration_experiment(&equally_spaced(2, 0.0), &kappas, 0.5, 1e-3, 200, SEED, threads()).expect("concentration");
    let m: Vec<String> = r.medians.iter().map(|x| format!("{x:.4}")).collect();
    let detail = format!("medians at kappa {kappas:?}: [{}], fitted power {:.2}", m.join(", "), r.power);
    report(11, "concentration", r.strictly_decreasing, t.elapsed(), 900.0, &detail);
}

#[test]
fn criterion_12_analytic_battery() {
    let t = Instant::now();
    let mut failed = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failed.push(name.to_string());
        }
    };
    check("c(8/3) = 0", sle_constants(8.0f64 / 3.0, 2).central_charge.abs() < 1e-12);
    check("c(6) = 0", sle_constants(6.0f64, 2).central_charge.abs() < 1e-12);
    for k in [0.5f64, 2.0, 4.0, 6.0] {
        check("beta_hat(n=1) = 0", sle_constants(k, 1).beta_hat.abs() < 1e-15);
    }
    for (n, u) in [(2usize, 0.0), (3, 0.863046217355), (4, 2.772588722240)] {
        check(&format!("u_min({n})"), (u_min::<f64>(n) - u).abs() < 1e-9);
    }
    let rng = SeededRng::new(SEED, 12);
    let (mut fd_worst, mut inv_worst) = (0.0f64, 0.0f64);
    for n in 2..=5usize {
        for i in 0..20u64 {
            let th = random_start(n, &rng, n as u64 * 100 + i);
            let u0 = log_partition_u(&th).to_float();
            let g = grad_u(&th).unwrap();
            for j in 0..n {
                let h = 1e-5;
                let mut a = th.angles().to_vec();
                a[j] += h;
                let up = log_partition_u(&TorusConfig::from_raw(a.clone())).to_float();
                a[j] -= 2.0 * h;
                let dn = log_partition_u(&TorusConfig::from_raw(a)).to_float();
                let fd = (up - dn) / (2.0 * h);
                fd_worst = fd_worst.max((fd - g[j]).abs() / g[j].abs().max(1.0));
            }
            let rot = log_partition_u(&th.rotated(1.234)).to_float();
            let rel = log_partition_u(&th.relabeled()).to_float();
            inv_worst = inv_worst.max((rot - u0).abs()).max((rel - u0).abs());
        }
    }
    check("grad_u finite differences", fd_worst < 1e-6);
    check("rotation and relabel invariance", inv_worst < 1e-12);
    let detail = if failed.is_empty() {
        format!("constants, u_min, grad_u (worst {fd_worst:.1e}), invariances (worst {inv_worst:.1e})")
    } else {
        format!("failed: {}", failed.join(", "))
    };
    report(12, "analytic battery", failed.is_empty(), t.elapsed(), 10.0, &detail);
}
