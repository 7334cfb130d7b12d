//! Trajectory battery for the deterministic time-change, hitting-time and
//! tip-envelope bounds.

use serde::{Deserialize, Serialize};

use crate::config::{equally_spaced, TorusConfig};
use crate::drivers::{simulate_dyson, zero_energy_driver};
use crate::escape::{check_hitting_bounds, refine_for_hitting, HittingReport};
use crate::loewner::{check_time_change_bounds, refit_time_change, DriverPath, SigmaBoundReport, SigmaLowerBound};
use crate::par::map_indexed;
use crate::rng::SeededRng;
use crate::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BatterySpec {
    pub n_values: Vec<usize>,
    pub kappa: f64,
    /// Per `n`: two zero-energy paths (symmetric and skewed start), the rest
    /// Dyson paths from the symmetric start.
    pub trajectories: usize,
    pub dt: f64,
    /// Time-change bounds are checked on `[0, t_max]`.
    pub t_max: f64,
    pub v_grid: Vec<f64>,
    pub tol: f64,
    pub seed: u64,
    pub threads: usize,
    /// Added to every traced capacity before the time-change check; 0 except
    /// in negative controls.
    pub sigma_shift: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct EnvelopeReport {
    pub checked: usize,
    pub violations: usize,
    /// Largest `max_j |tip| / (4 e^{-(n t - log(n)/2)})`.
    pub worst_ratio: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BatteryReport {
    pub trajectories: usize,
    pub sigma_half_log: SigmaBoundReport,
    pub sigma_integrated: SigmaBoundReport,
    pub hitting: HittingReport,
    pub envelope: EnvelopeReport,
}

/// Skewed start used for the second zero-energy path.
pub fn skewed_start(n: usize) -> TorusConfig<f64> {
    let a: Vec<f64> = (0..n).map(|j| {
        let x = j as f64 / n as f64;
        2.0 * std::f64::consts::PI * x * (1.0 - 0.35 * (1.0 - x))
    }).collect();
    TorusConfig::from_raw(a)
}

fn battery_driver(n: usize, i: usize, spec: &BatterySpec, horizon: f64) -> Result<DriverPath<f64>> {
    match i {
        0 => zero_energy_driver(&equally_spaced(n, 0.0), horizon, spec.dt),
        1 => zero_energy_driver(&skewed_start(n), horizon, spec.dt),
        _ => simulate_dyson(&equally_spaced(n, 0.0), spec.kappa, horizon, spec.dt, &SeededRng::new(spec.seed, (n * 1_000_000 + i) as u64)),
    }
}

struct One {
    half: SigmaBoundReport,
    integ: SigmaBoundReport,
    hit: HittingReport,
    env: EnvelopeReport,
}

fn one(n: usize, i: usize, spec: &BatterySpec) -> Result<One> {
    let vmax = spec.v_grid.iter().copied().fold(0.0, f64::max);
    // the hitting upper bound guarantees level vmax by this time
    let t_hit = (vmax + (n as f64).ln()) / n as f64 + 0.25;
    let horizon = spec.t_max.max(t_hit);
    let d = battery_driver(n, i, spec, horizon)?;
    let k = ((spec.t_max / spec.dt).round() as usize).min(d.steps);
    // every step up to t_max for the time change, strided after
    let mut rows: Vec<usize> = (0..=k).chain((k + 10..=d.steps).step_by(10)).collect();
    if *rows.last().unwrap() != d.steps {
        rows.push(d.steps);
    }
    let c = refine_for_hitting(&d, &rows, &spec.v_grid)?;
    let mut tc = refit_time_change(&c.until(k))?;
    if spec.sigma_shift != 0.0 {
        for s in tc.sigma.iter_mut() {
            for (r, x) in s.iter_mut().enumerate() {
                if r > 0 {
                    *x += spec.sigma_shift;
                }
            }
        }
    }
    let half = check_time_change_bounds(&tc, SigmaLowerBound::HalfLog, spec.tol, spec.t_max);
    let integ = check_time_change_bounds(&tc, SigmaLowerBound::Integrated, spec.tol, spec.t_max);
    let mut hit = check_hitting_bounds(&c, &spec.v_grid, spec.tol);
    for v in hit.violations.iter_mut() {
        v.0 += 1000 * i;
    }
    let mut env = EnvelopeReport::default();
    let nf = n as f64;
    for r in 0..c.len() {
        let t = c.time(r);
        let tip = (0..n).map(|j| c.point(r, j).norm()).fold(0.0, f64::max);
        let ratio = tip / (4.0 * (-(nf * t - nf.ln() / 2.0)).exp());
        env.checked += 1;
        env.worst_ratio = env.worst_ratio.max(ratio);
        if ratio > 1.0 {
            env.violations += 1;
        }
    }
    Ok(One { half, integ, hit, env })
}

pub fn run_battery(spec: &BatterySpec) -> Result<BatteryReport> {
    if spec.trajectories == 0 || spec.n_values.iter().any(|&n| n < 1) {
        return Err(Error::InvalidConfig("battery needs trajectories and n >= 1".into()));
    }
    let jobs: Vec<(usize, usize)> = spec.n_values.iter().flat_map(|&n| (0..spec.trajectories).map(move |i| (n, i))).collect();
    let outs = map_indexed(jobs.len(), spec.threads, |k| one(jobs[k].0, jobs[k].1, spec));
    let mut rep = BatteryReport {
        trajectories: jobs.len(),
        sigma_half_log: SigmaBoundReport::new(),
        sigma_integrated: SigmaBoundReport::new(),
        hitting: HittingReport::new(),
        envelope: EnvelopeReport::default(),
    };
    for o in outs {
        let o = o?;
        rep.sigma_half_log.merge(&o.half);
        rep.sigma_integrated.merge(&o.integ);
        rep.hitting.merge(&o.hit);
        rep.envelope.checked += o.env.checked;
        rep.envelope.violations += o.env.violations;
        rep.envelope.worst_ratio = rep.envelope.worst_ratio.max(o.env.worst_ratio);
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> BatterySpec {
        BatterySpec { n_values: vec![2], kappa: 4.0, trajectories: 3, dt: 4e-3, t_max: 0.5, v_grid: vec![2.0, 4.0], tol: 2e-2, seed: 1, threads: 1, sigma_shift: 0.0 }
    }

    #[test]
    fn upper_and_integrated_bounds_hold_on_small_battery() {
        let r = run_battery(&small()).unwrap();
        assert_eq!(r.trajectories, 3);
        assert_eq!(r.sigma_integrated.lower_violations, 0);
        assert_eq!(r.sigma_integrated.upper_violations, 0);
        assert_eq!(r.envelope.violations, 0);
        assert_eq!(r.hitting.lower_violations, 0);
        assert_eq!(r.hitting.missing, 0);
    }

    #[test]
    fn shifted_capacities_break_the_upper_bound() {
        let r = run_battery(&BatterySpec { sigma_shift: 1.0, ..small() }).unwrap();
        assert!(r.sigma_integrated.upper_violations > 0);
    }

    #[test]
    fn skewed_start_is_ordered() {
        let a = skewed_start(4);
        assert!(a.angles().windows(2).all(|w| w[1] > w[0]));
        assert!(*a.angles().last().unwrap() < 2.0 * std::f64::consts::PI);
    }
}
