//! One function per experiment; each writes its files into an [`OutDir`]
//! and returns a JSON summary plus the list of failed checks.

use std::fs;
use std::path::{Path, PathBuf};

use mrsle_core::config::TorusConfig;
use mrsle_core::drivers::{simulate_dyson, zero_energy_driver};
use mrsle_core::energy::{blm_rate_finite_t, dyson_dirichlet_energy};
use mrsle_core::escape::{escape_exponent, escape_probability_mc, fit_escape_exponent, transience_experiment, EscapeSetup};
use mrsle_core::loewner::{refit_time_change, trace, trace_rows, DriverPath, MultiradialCurve, TimeChange};
use mrsle_core::loopmeasure::{estimate_loop_term, slope_experiment, LoopParams};
use mrsle_core::par::default_threads;
use mrsle_core::rng::SeededRng;
use mrsle_core::tilting::{concentration_experiment, tilt_crosscheck, TiltSetup};
use serde_json::{json, Value};

use crate::config::{self, positive, start, DriverKind, Experiment, RunConfig};
use crate::output::{config_hash, num, OutDir};
use crate::svg::{self, Series};
use crate::{audit, CliError};

type Outcome = Result<(Value, Vec<String>), CliError>;

/// Worker count: the file's `threads`, capped by `MRSLE_THREADS`.
fn threads(requested: Option<usize>) -> usize {
    let cap = default_threads();
    requested.map_or(cap, |t| t.clamp(1, cap))
}

pub fn run_file(path: &Path, out: Option<PathBuf>) -> Result<String, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let cfg = config::parse(&text)?;
    let name = cfg.experiment.name();
    let dir = out.or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("mrsle-out").join(name));
    let mut od = OutDir::create(&dir, &config_hash(&text))?;
    let res = dispatch(&cfg, &mut od);
    let (summary, failures) = match res {
        Ok(x) => x,
        Err(CliError::Numerical { message, .. }) => {
            let dump = od.diagnostic(name, &message);
            return Err(CliError::Numerical { message, dump: Some(dump) });
        }
        Err(e) => return Err(e),
    };
    let manifest = od.finish(name, cfg.seed, summary, &failures)?;
    if failures.is_empty() {
        Ok(format!("{name}: ok ({})", manifest.display()))
    } else {
        Err(CliError::Assertion(format!("{name}: {} ({})", failures.join("; "), manifest.display())))
    }
}

fn dispatch(cfg: &RunConfig, od: &mut OutDir) -> Outcome {
    let th = threads(cfg.threads);
    let seed = cfg.seed;
    match cfg.experiment {
        Experiment::Trace => {
            let c = cfg.trace.as_ref().unwrap();
            let theta0 = start("trace", c.n, &c.theta0)?;
            trace_experiment(&theta0, c.kappa, c.horizon, c.dt, c.driver, seed, od)
        }
        Experiment::Energy => energy(cfg.energy.as_ref().unwrap(), seed, th, od),
        Experiment::LoopSlope => loop_slope(cfg.loop_slope.as_ref().unwrap(), seed, th, od),
        Experiment::Escape => escape(cfg.escape.as_ref().unwrap(), seed, th, od),
        Experiment::Transience => transience(cfg.transience.as_ref().unwrap(), seed, th, od),
        Experiment::TiltCrosscheck => tilt(cfg.tilt.as_ref().unwrap(), seed, th, od),
        Experiment::Concentration => concentration(cfg.concentration.as_ref().unwrap(), seed, th, od),
        Experiment::BoundsAudit => {
            let c = cfg.bounds_audit.as_ref().unwrap();
            positive("bounds-audit", "dt", c.dt)?;
            let spec = audit::spec_from(c, seed, th);
            let rows = audit::evaluate(&spec)?;
            audit::write(&rows, od)?;
            let failures = rows.iter().filter(|r| !r.pass).map(|r| format!("{} violated", r.name)).collect();
            Ok((json!({ "rows": rows }), failures))
        }
    }
}

pub fn trace_cmd(n: usize, kappa: f64, horizon: f64, dt: f64, seed: u64, out: &Path) -> Result<String, CliError> {
    if n == 0 {
        return Err(CliError::Config("--n must be at least 1".into()));
    }
    let text = format!("trace n={n} kappa={kappa} T={horizon} dt={dt} seed={seed}");
    let mut od = OutDir::create(out, &config_hash(&text))?;
    let theta0 = mrsle_core::config::equally_spaced(n, 0.0);
    let (summary, failures) = match trace_experiment(&theta0, kappa, horizon, dt, DriverKind::Dyson, seed, &mut od) {
        Ok(x) => x,
        Err(CliError::Numerical { message, .. }) => {
            let dump = od.diagnostic("trace", &message);
            return Err(CliError::Numerical { message, dump: Some(dump) });
        }
        Err(e) => return Err(e),
    };
    let m = od.finish("trace", seed, summary, &failures)?;
    Ok(format!("trace: ok ({})", m.display()))
}

fn xy(c: &MultiradialCurve<f64>, j: usize) -> Vec<(f64, f64)> {
    c.curve(j).iter().map(|z| (z.re, z.im)).collect()
}

fn write_curve(od: &mut OutDir, name: &str, c: &MultiradialCurve<f64>, tc: Option<&TimeChange<f64>>) -> Result<(), CliError> {
    let mut rows = Vec::with_capacity(c.len() * c.n);
    for r in 0..c.len() {
        for j in 0..c.n {
            let z = c.point(r, j);
            let s = tc.map_or(f64::NAN, |tc| tc.sigma[j][r]);
            rows.push(vec![num(c.time(r)), j.to_string(), num(z.re), num(z.im), num(s)]);
        }
    }
    od.csv(name, &["t", "j", "re", "im", "sigma_j"], &rows)
}

fn write_driver(od: &mut OutDir, d: &DriverPath<f64>) -> Result<(), CliError> {
    let mut header = vec!["step".to_string(), "t".to_string()];
    header.extend((1..=d.n).map(|j| format!("theta_{j}")));
    let h: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let rows: Vec<Vec<String>> = (0..=d.steps)
        .map(|k| {
            let mut r = vec![k.to_string(), num(d.time(k))];
            r.extend(d.state(k).iter().map(|a| num(*a)));
            r
        })
        .collect();
    od.csv("driver.csv", &h, &rows)
}

fn trace_experiment(theta0: &TorusConfig<f64>, kappa: f64, horizon: f64, dt: f64, kind: DriverKind, seed: u64, od: &mut OutDir) -> Outcome {
    positive("trace", "dt", dt)?;
    positive("trace", "horizon", horizon)?;
    if kappa < 0.0 {
        return Err(CliError::Config("trace.kappa: must be non-negative".into()));
    }
    let (d, integrator) = if kind == DriverKind::ZeroEnergy || kappa == 0.0 {
        (zero_energy_driver(theta0, horizon, dt)?, "rk4")
    } else {
        (simulate_dyson(theta0, kappa, horizon, dt, &SeededRng::new(seed, 0))?, "euler-maruyama with collision guard")
    };
    let c = trace(&d)?;
    let tc = refit_time_change(&c)?;
    write_curve(od, "curve.csv", &c, Some(&tc))?;
    od.json(
        "curve.json",
        json!({
            "n": c.n, "dt": dt, "steps": d.steps, "theta0": theta0.angles(),
            "generator": { "driver": if integrator == "rk4" { "zero-energy" } else { "dyson" }, "kappa": kappa, "seed": seed, "integrator": integrator, "scheme": "strang radial slits" },
        }),
    )?;
    write_driver(od, &d)?;
    let curves: Vec<_> = (0..c.n).map(|j| xy(&c, j)).collect();
    od.svg("trace.svg", &svg::disk(&curves, &format!("n = {}, kappa = {kappa}, T = {horizon}", c.n)))?;
    let last = c.len() - 1;
    Ok((
        json!({
            "steps": d.steps,
            "tip_radius": (0..c.n).map(|j| c.point(last, j).norm()).collect::<Vec<_>>(),
            "sigma_final": (0..c.n).map(|j| tc.sigma[j][last]).collect::<Vec<_>>(),
            "dyson_energy": dyson_dirichlet_energy(&d),
        }),
        vec![],
    ))
}

fn loop_params(n_samples: usize, seed: u64, threads: usize) -> LoopParams {
    LoopParams { n_samples, seed, threads, ..Default::default() }
}

fn energy(c: &config::EnergyCfg, seed: u64, th: usize, od: &mut OutDir) -> Outcome {
    positive("energy", "dt", c.dt)?;
    positive("energy", "horizon", c.horizon)?;
    let theta0 = start("energy", c.n, &c.theta0)?;
    let n = theta0.n();
    let d = zero_energy_driver(&theta0, c.horizon, c.dt)?.spinning(c.omega);
    let curve = trace(&d)?;
    let tc = refit_time_change(&curve)?;
    let steps = d.steps;
    let stride = (steps / c.max_rows.max(1)).max(1);
    let mut rows: Vec<usize> = (0..=steps).step_by(stride).collect();
    if *rows.last().unwrap() != steps {
        rows.push(steps);
    }
    let coarse = trace_rows(&d, &rows)?;
    let pts: Vec<_> = (0..n).map(|j| coarse.curve(j)).collect();
    let loops = estimate_loop_term(&pts, &loop_params(c.loop_samples, seed, th))?;
    let r = blm_rate_finite_t(&d, &curve, &tc, loops.mass, loops.stderr, c.horizon)?;
    let report = json!({
        "n": n, "kappa": 0.0, "T": c.horizon, "dt": c.dt, "omega": c.omega,
        "energy_dyson": r.rate_dyson, "energy_indep": r.energy_indep, "psi0": r.psi0,
        "loop_mass": loops.mass, "loop_stderr": loops.stderr, "loop_bias_bound": loops.bias_bound,
        "rate_bm_form": r.rate_bm_form, "rate_bm_stderr": r.rate_bm_stderr, "l_hat": r.l_hat,
    });
    od.json("energy.json", report.clone())?;
    write_curve(od, "curve.csv", &curve, Some(&tc))?;
    Ok((report, vec![]))
}

fn loop_slope(c: &config::LoopSlopeCfg, seed: u64, th: usize, od: &mut OutDir) -> Outcome {
    positive("loop-slope", "dt", c.dt)?;
    if c.n < 2 {
        return Err(CliError::Config("loop-slope.n: need n >= 2".into()));
    }
    let r = slope_experiment(c.n, &c.horizons, c.dt, &loop_params(c.loop_samples, seed, th))?;
    let rows: Vec<Vec<String>> = r.horizons.iter().zip(&r.estimates).map(|(t, e)| vec![num(*t), num(e.mass), num(e.stderr), num(e.bias_bound)]).collect();
    od.csv("loop_slope.csv", &["T", "L", "stderr", "bias_bound"], &rows)?;
    let pts: Vec<(f64, f64)> = r.horizons.iter().zip(&r.estimates).map(|(t, e)| (*t, e.mass)).collect();
    let err: Vec<f64> = r.estimates.iter().map(|e| e.stderr).collect();
    let xs = &r.horizons;
    let xm = xs.iter().sum::<f64>() / xs.len() as f64;
    let ym = r.fit.intercept + r.fit.slope * xm;
    let plot = svg::chart(
        &format!("loop term, n = {}", c.n),
        "T",
        "L",
        &[
            Series::points("estimate", pts, Some(err)),
            Series::line(&format!("fit, slope {:.3}", r.slope), svg::fit_line(xs, r.fit.intercept, r.fit.slope)),
            Series::dashed(&format!("reference, slope {:.3}", r.reference), svg::fit_line(xs, ym - r.reference * xm, r.reference)),
        ],
    );
    od.svg("loop_slope.svg", &plot)?;
    let rel = (r.slope - r.reference).abs() / r.reference;
    let mut failures = vec![];
    if let Some(tol) = c.tolerance {
        if rel > tol {
            failures.push(format!("slope {:.4} is {:.1}% from {:.4}", r.slope, 100.0 * rel, r.reference));
        }
    }
    let summary = json!({ "slope": r.slope, "stderr": r.stderr, "reference": r.reference, "relative_error": rel, "fit": r.fit });
    od.json("loop_slope.json", json!({ "result": r, "relative_error": rel }))?;
    Ok((summary, failures))
}

fn escape(c: &config::EscapeCfg, seed: u64, th: usize, od: &mut OutDir) -> Outcome {
    positive("escape", "dt", c.dt)?;
    positive("escape", "kappa", c.kappa)?;
    let theta0 = start("escape", c.n, &c.theta0)?;
    let pairs: Vec<(f64, f64)> = c.gaps.iter().map(|g| (c.v - g, c.v)).collect();
    let setup = EscapeSetup { kappa: c.kappa, theta0: theta0.angles().to_vec(), horizon: c.horizon, dt: c.dt, n_samples: c.n_samples, stride: c.stride, seed, threads: th };
    let est = escape_probability_mc(&setup, &pairs)?;
    let rows: Vec<Vec<String>> = est
        .iter()
        .map(|e| vec![num(e.kappa), e.n.to_string(), num(e.u), num(e.v), num(e.horizon), e.n_samples.to_string(), e.hits.to_string(), e.escapes.to_string(), num(e.p_hat), num(e.ci.0), num(e.ci.1)])
        .collect();
    od.csv("escape.csv", &["kappa", "n", "u", "v", "horizon", "n_samples", "hits", "escapes", "p_hat", "ci_lo", "ci_hi"], &rows)?;
    let mut failures = vec![];
    if let Some(e) = est.iter().find(|e| e.inconclusive) {
        failures.push(format!("only {} hits of level v = {}", e.hits, e.v));
    }
    let mut by_gap: Vec<&_> = est.iter().collect();
    by_gap.sort_by(|a, b| (a.v - a.u).total_cmp(&(b.v - b.u)));
    for w in by_gap.windows(2) {
        if w[1].ci.0 > w[0].ci.1 {
            failures.push(format!("escape frequency increases from gap {} to {}", w[0].v - w[0].u, w[1].v - w[1].u));
        }
    }
    let reference = -escape_exponent(c.kappa);
    let fit = fit_escape_exponent(&est);
    let mut summary = json!({ "estimates": est, "reference_slope": reference });
    match &fit {
        Ok(f) => {
            summary["fit"] = json!(f.fit);
            if f.fit.slope >= 0.0 {
                failures.push(format!("fitted slope {:.4} is not negative", f.fit.slope));
            }
            if let Some(tol) = c.tolerance {
                let rel = (f.fit.slope - reference).abs() / reference.abs();
                if rel > tol {
                    failures.push(format!("fitted slope {:.4} is {:.0}% from {reference:.4}", f.fit.slope, 100.0 * rel));
                }
            }
            let pts: Vec<(f64, f64)> = est.iter().filter(|e| e.escapes > 0).map(|e| (e.v - e.u, e.p_hat.ln())).collect();
            let err: Vec<f64> = est.iter().filter(|e| e.escapes > 0).map(|e| (e.ci.1.ln() - e.ci.0.max(1e-300).ln()) / (2.0 * 1.96)).collect();
            let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let plot = svg::chart(
                &format!("escape, kappa = {}, n = {}", c.kappa, theta0.n()),
                "v - u",
                "log p",
                &[
                    Series::points("estimate", pts, Some(err)),
                    Series::line(&format!("fit, slope {:.3}", f.fit.slope), svg::fit_line(&xs, f.fit.intercept, f.fit.slope)),
                    Series::dashed(&format!("bound exponent {reference:.3}"), svg::fit_line(&xs, f.fit.intercept, reference)),
                ],
            );
            od.svg("escape_fit.svg", &plot)?;
        }
        Err(e) => failures.push(format!("no exponent fit: {e}")),
    }
    od.json("escape.json", summary.clone())?;
    Ok((summary, failures))
}

fn transience(c: &config::TransienceCfg, seed: u64, th: usize, od: &mut OutDir) -> Outcome {
    positive("transience", "dt", c.dt)?;
    let r = transience_experiment(c.kappa, c.n, c.horizon, c.dt, c.stride, c.n_samples, seed, th)?;
    let rows: Vec<Vec<String>> = (0..r.times.len()).map(|k| vec![num(r.times[k]), num(r.median_tip[k]), num(r.max_tip[k]), num(r.max_dist[k]), num(r.envelope[k])]).collect();
    od.csv("transience.csv", &["t", "median_tip", "max_tip", "max_dist", "envelope"], &rows)?;
    let lg = |v: &[f64]| -> Vec<(f64, f64)> { r.times.iter().zip(v).map(|(t, x)| (*t, x.log10())).collect() };
    let plot = svg::chart(
        &format!("tip radii, kappa = {}, n = {}", c.kappa, c.n),
        "t",
        "log10 radius",
        &[Series::line("median tip", lg(&r.median_tip)), Series::line("max tip", lg(&r.max_tip)), Series::dashed("envelope", lg(&r.envelope))],
    );
    od.svg("transience.svg", &plot)?;
    let mut failures = vec![];
    if r.envelope_violations_tip > 0 {
        failures.push(format!("{} tip samples above the envelope", r.envelope_violations_tip));
    }
    if !r.median_monotone {
        failures.push("median tip radius is not monotone".into());
    }
    let summary = json!({
        "envelope_violations_tip": r.envelope_violations_tip,
        "envelope_violations_dist": r.envelope_violations_dist,
        "median_tip_final": r.median_tip.last(),
        "median_monotone": r.median_monotone,
        "eventually_decreasing": r.eventually_decreasing,
    });
    od.json("transience.json", json!({ "report": r }))?;
    Ok((summary, failures))
}

fn tilt(c: &config::TiltCfg, seed: u64, th: usize, od: &mut OutDir) -> Outcome {
    positive("tilt-crosscheck", "dt", c.dt)?;
    let theta0 = start("tilt-crosscheck", c.n, &c.theta0)?;
    let setup = TiltSetup {
        kappa: c.kappa,
        theta0: theta0.angles().to_vec(),
        horizon: c.horizon,
        dt: c.dt,
        n_samples: c.n_samples,
        delta_min: c.delta_min,
        loop_samples: c.loop_samples,
        loop_stderr_target: c.loop_stderr_target,
        loop_samples_max: c.loop_samples_max,
        seed,
        threads: th,
    };
    let (ens, cc) = tilt_crosscheck(&setup, c.n_direct, c.dyson_dt.unwrap_or(c.dt))?;
    let mut order: Vec<usize> = (0..ens.samples.len()).collect();
    order.sort_by(|&a, &b| ens.samples[b].weight.total_cmp(&ens.samples[a].weight).then(a.cmp(&b)));
    let mut rank = vec![0usize; order.len()];
    for (k, &i) in order.iter().enumerate() {
        rank[i] = k + 1;
    }
    let rows: Vec<Vec<String>> = ens
        .samples
        .iter()
        .enumerate()
        .map(|(k, s)| vec![s.id.to_string(), num(s.weight), num(s.u_t), (s.collided as u8).to_string(), rank[k].to_string()])
        .collect();
    od.csv("ensemble.csv", &["id", "weight", "U_T", "collided_flag", "ess_rank"], &rows)?;
    let mut failures = vec![];
    if ens.inconclusive {
        failures.push(format!("effective sample size {:.1} below 10", ens.ess));
    }
    if let Some(k) = c.ks_max {
        if cc.ks_gap > k {
            failures.push(format!("KS distance {:.4} above {k}", cc.ks_gap));
        }
    }
    let summary = json!({ "crosscheck": cc });
    od.json("tilt.json", json!({ "setup": setup, "crosscheck": cc }))?;
    Ok((summary, failures))
}

fn concentration(c: &config::ConcentrationCfg, seed: u64, th: usize, od: &mut OutDir) -> Outcome {
    positive("concentration", "dt", c.dt)?;
    let theta0 = start("concentration", c.n, &c.theta0)?;
    let r = concentration_experiment(&theta0, &c.kappas, c.horizon, c.dt, c.n_samples, seed, th)?;
    let rows: Vec<Vec<String>> = r.kappas.iter().zip(&r.medians).map(|(k, m)| vec![num(*k), num(*m)]).collect();
    od.csv("concentration.csv", &["kappa", "median_sup_deviation"], &rows)?;
    let pts: Vec<(f64, f64)> = r.kappas.iter().zip(&r.medians).filter(|(k, m)| **k > 0.0 && **m > 0.0).map(|(k, m)| (k.log10(), m.log10())).collect();
    od.svg("concentration.svg", &svg::chart("median sup-deviation", "log10 kappa", "log10 median", &[Series::points("median", pts, None)]))?;
    let mut failures = vec![];
    if !r.strictly_decreasing {
        failures.push("medians are not strictly decreasing".into());
    }
    let summary = json!({ "report": r });
    od.json("concentration.json", summary.clone())?;
    Ok((summary, failures))
}
