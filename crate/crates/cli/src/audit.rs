//! Pass/fail table of the deterministic bounds and closed-form constants.

use mrsle_core::battery::{run_battery, BatterySpec};
use mrsle_core::config::{equally_spaced, u_min};
use mrsle_core::energy::sle_constants;
use mrsle_core::escape::partition_expectation_check;
use mrsle_core::par::default_threads;
use serde::Serialize;

use crate::config::BoundsAuditCfg;
use crate::output::{num, OutDir};
use crate::CliError;

#[derive(Clone, Debug, Serialize)]
pub struct Row {
    pub name: String,
    pub bound: String,
    pub pass: bool,
    pub checked: usize,
    pub violations: usize,
    /// Smallest slack seen; negative when violated.
    pub margin: f64,
}

fn row(name: &str, bound: &str, checked: usize, violations: usize, margin: f64) -> Row {
    Row { name: name.into(), bound: bound.into(), pass: violations == 0, checked, violations, margin }
}

pub fn spec_from(c: &BoundsAuditCfg, seed: u64, threads: usize) -> BatterySpec {
    BatterySpec {
        n_values: c.n_values.clone(),
        kappa: c.kappa,
        trajectories: c.trajectories,
        dt: c.dt,
        t_max: c.t_max,
        v_grid: c.v_grid.clone(),
        tol: c.tol_steps * c.dt,
        seed,
        threads,
        sigma_shift: 0.0,
    }
}

pub fn canned(sigma_shift: f64) -> BatterySpec {
    BatterySpec {
        n_values: vec![2, 3],
        kappa: 4.0,
        trajectories: 6,
        dt: 2e-3,
        t_max: 1.0,
        v_grid: vec![2.0, 4.0, 6.0],
        tol: 5.0 * 2e-3,
        seed: 20240,
        threads: default_threads(),
        sigma_shift,
    }
}

/// Battery rows followed by the partition bound and the constants.
pub fn evaluate(spec: &BatterySpec) -> Result<Vec<Row>, CliError> {
    let b = run_battery(spec)?;
    let h = &b.hitting;
    let mut rows = vec![
        row("time change, lower", "n t - log(n)/2 <= sigma^j(t)", b.sigma_half_log.checked, b.sigma_half_log.lower_violations, b.sigma_half_log.worst_lower_margin),
        row("time change, lower (integrated)", "log(1 + (e^{n t} - 1)/n) <= sigma^j(t)", b.sigma_integrated.checked, b.sigma_integrated.lower_violations, b.sigma_integrated.worst_lower_margin),
        row("time change, upper", "sigma^j(t) < n t", b.sigma_integrated.checked, b.sigma_integrated.upper_violations, b.sigma_integrated.worst_upper_margin),
        row("hitting time, lower", "v - log(4) <= n rho^j(v)", h.checked, h.lower_violations + h.missing, h.worst_lower_margin),
        row("hitting time, upper", "n rho^j(v) <= v + log(n)/2", h.checked, h.upper_violations + h.missing, h.worst_upper_margin),
        row("tip envelope", "max_j |gamma^j(t)| <= 4 exp(-(n t - log(n)/2))", b.envelope.checked, b.envelope.violations, 1.0 - b.envelope.worst_ratio),
    ];
    let p = partition_expectation_check(4.0, &equally_spaced(2, 0.0), 0.5, 1e-3, 4000, spec.seed, spec.threads)?;
    rows.push(row("partition expectation", "E[1/Z(theta_t)] <= exp(n(n^2-1)t/12) / Z(theta_0)", 1, usize::from(!p.holds), p.bound - (p.mean - 2.0 * p.stderr)));
    let roots = [sle_constants(8.0 / 3.0, 2).central_charge, sle_constants(6.0, 2).central_charge, sle_constants(2.5, 1).beta_hat];
    let worst = roots.iter().map(|x: &f64| x.abs()).fold(0.0, f64::max);
    rows.push(row("constant roots", "c(8/3) = c(6) = 0, beta_hat(n=1) = 0", 3, roots.iter().filter(|x| x.abs() > 1e-12).count(), -worst));
    let want = [(2usize, 0.0), (3, 0.863046217355), (4, 2.772588722240)];
    let dev: Vec<f64> = want.iter().map(|(n, u)| (u_min::<f64>(*n) - u).abs()).collect();
    rows.push(row("u_min values", "u_min(2, 3, 4) = 0, 0.863046, 2.772589", 3, dev.iter().filter(|d| **d > 1e-9).count(), -dev.iter().copied().fold(0.0, f64::max)));
    Ok(rows)
}

pub fn table(rows: &[Row]) -> String {
    let w = rows.iter().map(|r| r.name.len()).max().unwrap_or(0);
    let mut s = String::new();
    for r in rows {
        s.push_str(&format!("{:<4} {:<w$}  {:>7} checked  {:>5} violations  margin {:>10.3e}  {}\n", if r.pass { "PASS" } else { "FAIL" }, r.name, r.checked, r.violations, r.margin, r.bound));
    }
    s
}

pub fn write(rows: &[Row], od: &mut OutDir) -> Result<(), CliError> {
    let body: Vec<Vec<String>> = rows.iter().map(|r| vec![r.name.clone(), r.bound.clone(), r.pass.to_string(), r.checked.to_string(), r.violations.to_string(), num(r.margin)]).collect();
    od.csv("audit.csv", &["check", "bound", "pass", "checked", "violations", "margin"], &body)
}

pub fn audit(sigma_shift: f64) -> Result<String, CliError> {
    let spec = canned(sigma_shift);
    let rows = evaluate(&spec)?;
    print!("{}", table(&rows));
    let failed: Vec<&str> = rows.iter().filter(|r| !r.pass).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        Ok(format!("audit: all {} checks pass", rows.len()))
    } else {
        Err(CliError::Assertion(format!("{} of {} checks failed: {}", failed.len(), rows.len(), failed.join(", "))))
    }
}
