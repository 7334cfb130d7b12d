//! Radon–Nikodym tilting of independent radial SLEs, the importance sampler
//! built on it, and the small-kappa concentration experiment.

use serde::{Deserialize, Serialize};

use crate::config::{rem_2pi, TorusConfig};
use crate::drivers::{simulate_dyson, single_radial_driver, zero_energy_driver};
use crate::energy::{psi, sle_constants};
use crate::loewner::{project_to_common_time, trace, DriverPath, IndependentCurve, MultiradialCurve};
use crate::loopmeasure::{estimate_loop_term, LoopParams};
use crate::par::map_indexed;
use crate::rng::SeededRng;
use crate::stats::{effective_sample_size, ks_distance_weighted, mean_stderr, median, weighted_line_fit, weighted_mean_stderr};
use crate::{lit, to_f64, Error, Extended, Real, Result};

/// `M_T / M_0 = exp(Psi^kappa_T / kappa)`; 0 for a collided configuration.
pub fn rn_weight<T: Real>(driver: &DriverPath<T>, loop_mass: T, kappa: T, horizon: T) -> Result<T> {
    if !(kappa > T::zero()) {
        return Err(Error::InvalidConfig("weight needs kappa > 0".into()));
    }
    Ok(match psi(driver, loop_mass, kappa, horizon)? {
        Extended::Finite(p) => (p / kappa).exp(),
        _ => T::zero(),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TiltSetup {
    pub kappa: f64,
    pub theta0: Vec<f64>,
    pub horizon: f64,
    /// Common-time step; the independent curves use the same step.
    pub dt: f64,
    pub n_samples: usize,
    /// Curves closer than this before the horizon count as collided.
    /// Defaults to [`default_delta_min`].
    pub delta_min: Option<f64>,
    /// Loops per sample to start with; all samples share one loop seed.
    pub loop_samples: usize,
    /// The loop count doubles until the stderr of `L` is at most this. The
    /// weight carries `L` through `exp(c L / 2)`, so a noisy `L` on a few
    /// close-approach samples swamps the ensemble.
    pub loop_stderr_target: f64,
    /// Cap for the doubling.
    pub loop_samples_max: usize,
    pub seed: u64,
    pub threads: usize,
}

/// One importance sample after projection to common time.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TiltSample {
    pub id: usize,
    pub collided: bool,
    pub weight: f64,
    pub u_t: f64,
    pub loop_mass: f64,
    pub loop_stderr: f64,
    /// Smallest distance between the projected curves.
    pub min_distance: f64,
    /// Final angles `theta_T`, empty when collided.
    pub theta_t: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TiltEnsemble {
    pub setup: TiltSetup,
    pub samples: Vec<TiltSample>,
    pub collided_fraction: f64,
    pub ess: f64,
    pub inconclusive: bool,
}

impl TiltEnsemble {
    /// Surviving samples with their weights.
    pub fn weighted<F: Fn(&TiltSample) -> f64>(&self, f: F) -> (Vec<f64>, Vec<f64>) {
        self.samples.iter().filter(|s| !s.collided && s.weight > 0.0).map(|s| (f(s), s.weight)).unzip()
    }
}

/// Trace one radial SLE in its own capacity time.
fn independent_curve(theta: f64, kappa: f64, horizon: f64, dt: f64, rng: &SeededRng) -> Result<IndependentCurve<f64>> {
    let d = single_radial_driver(theta, kappa, horizon, dt, rng)?;
    let c = trace(&d)?;
    let cap = (0..c.len()).map(|r| c.time(r)).collect();
    Ok(IndependentCurve { points: c.curve(0), cap })
}

/// Default collision floor `4 dt`.
pub fn default_delta_min(dt: f64) -> f64 {
    4.0 * dt
}

/// Independent radial SLE_kappa curves to their own horizon `n T`, projected
/// to common time `T`, weighted by [`rn_weight`]. Sample `i` uses streams
/// `i n .. i n + n - 1`.
pub fn importance_sample_nradial(setup: &TiltSetup) -> Result<TiltEnsemble> {
    let kappa = setup.kappa;
    if !(kappa > 0.0 && kappa <= 4.0) {
        return Err(Error::InvalidConfig("importance sampler needs kappa in (0, 4]".into()));
    }
    let theta0 = TorusConfig::new(setup.theta0.clone())?;
    let n = theta0.n();
    let steps = (setup.horizon / setup.dt).round() as usize;
    let delta_min = setup.delta_min.unwrap_or_else(|| default_delta_min(setup.dt));
    let with_loops = sle_constants(kappa, n).central_charge.abs() > 1e-12;
    let rng = SeededRng::new(setup.seed, 0);
    let loops = LoopParams { n_samples: setup.loop_samples.max(1), seed: setup.seed ^ 0x9e37_79b9, ..Default::default() };
    let run = |i: usize| -> Result<TiltSample> {
        let curves: Vec<IndependentCurve<f64>> = (0..n)
            .map(|j| independent_curve(theta0.angles()[j], kappa, n as f64 * setup.horizon, setup.dt, &rng.with_stream((i * n + j) as u64)))
            .collect::<Result<_>>()?;
        let p = project_to_common_time(&curves, setup.dt, steps, delta_min)?;
        let dead = TiltSample { id: i, collided: true, weight: 0.0, u_t: f64::NAN, loop_mass: 0.0, loop_stderr: 0.0, min_distance: p.min_distance, theta_t: vec![] };
        if p.stopped_early {
            return Ok(dead);
        }
        let theta_t = p.driver.state(p.steps).to_vec();
        let (loop_mass, loop_stderr) = if with_loops {
            let pts: Vec<Vec<_>> = (0..n).map(|j| p.curve.curve(j)).collect();
            let mut lp = loops.clone();
            loop {
                match estimate_loop_term(&pts, &lp) {
                    Ok(e) if e.stderr <= setup.loop_stderr_target || lp.n_samples >= setup.loop_samples_max => break (e.mass.max(0.0), e.stderr),
                    // loop draws are indexed, so the larger run extends the smaller one
                    Ok(_) => lp.n_samples = (2 * lp.n_samples).min(setup.loop_samples_max),
                    Err(Error::TooClose { .. }) => return Ok(dead),
                    Err(e) => return Err(e),
                }
            }
        } else {
            (0.0, 0.0)
        };
        let weight = rn_weight(&p.driver, loop_mass, kappa, setup.horizon)?;
        let u_t = match crate::config::log_partition_u_raw(&theta_t) {
            Extended::Finite(u) => u,
            _ => return Ok(dead),
        };
        Ok(TiltSample { id: i, collided: weight == 0.0, weight, u_t, loop_mass, loop_stderr, min_distance: p.min_distance, theta_t })
    };
    let samples: Vec<TiltSample> = map_indexed(setup.n_samples, setup.threads, run).into_iter().collect::<Result<_>>()?;
    let w: Vec<f64> = samples.iter().map(|s| s.weight).collect();
    let ess = effective_sample_size(&w);
    let collided = samples.iter().filter(|s| s.collided).count();
    Ok(TiltEnsemble {
        setup: setup.clone(),
        collided_fraction: collided as f64 / samples.len().max(1) as f64,
        ess,
        inconclusive: ess < 10.0,
        samples,
    })
}

/// `theta^2 - theta^1` reduced to `[0, 2 pi)`.
pub fn gap12(theta: &[f64]) -> f64 {
    rem_2pi(theta[1] - theta[0])
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CrossCheck {
    pub ess: f64,
    pub n_direct: usize,
    pub collided_fraction: f64,
    pub ks_gap: f64,
    pub mean_u_tilted: (f64, f64),
    pub mean_u_direct: (f64, f64),
    /// `|difference| / combined stderr` of the mean of `U(theta_T)`.
    pub u_z: f64,
}

/// Tilted ensemble against `n_direct` Dyson SDE samples from the same start.
pub fn tilt_crosscheck(setup: &TiltSetup, n_direct: usize, dyson_dt: f64) -> Result<(TiltEnsemble, CrossCheck)> {
    let ens = importance_sample_nradial(setup)?;
    let theta0 = TorusConfig::new(setup.theta0.clone())?;
    let rng = SeededRng::new(setup.seed.wrapping_add(1), 0);
    let direct: Vec<Vec<f64>> = map_indexed(n_direct, setup.threads, |i| {
        let d = simulate_dyson(&theta0, setup.kappa, setup.horizon, dyson_dt, &rng.with_stream(i as u64))?;
        Ok(d.state(d.steps).to_vec())
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let (g, w) = ens.weighted(|s| gap12(&s.theta_t));
    let gd: Vec<f64> = direct.iter().map(|t| gap12(t)).collect();
    let (u, wu) = ens.weighted(|s| s.u_t);
    let ud: Vec<f64> = direct.iter().map(|t| crate::config::log_partition_u_raw(t).to_float()).collect();
    let mt = weighted_mean_stderr(&u, &wu);
    let md = mean_stderr(&ud);
    let cc = CrossCheck {
        ess: ens.ess,
        n_direct,
        collided_fraction: ens.collided_fraction,
        ks_gap: ks_distance_weighted(&g, &w, &gd),
        mean_u_tilted: mt,
        mean_u_direct: md,
        u_z: (mt.0 - md.0).abs() / mt.1.hypot(md.1),
    };
    Ok((ens, cc))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub kappas: Vec<f64>,
    pub medians: Vec<f64>,
    pub strictly_decreasing: bool,
    /// Fitted exponent `p` in `median ~ kappa^p`.
    pub power: f64,
    pub power_stderr: f64,
}

/// `sup_t sum_j |theta^j_t - theta^{0,j}_t|` between two drivers on the same grid.
pub fn sup_deviation<T: Real>(a: &DriverPath<T>, b: &DriverPath<T>) -> f64 {
    (0..=a.steps.min(b.steps))
        .map(|k| a.state(k).iter().zip(b.state(k)).map(|(x, y)| to_f64((*x - *y).abs())).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Median sup-deviation of Dyson trajectories from the zero-energy path,
/// per kappa. Trajectory `i` uses stream `i` at every kappa.
pub fn concentration_experiment(theta0: &TorusConfig<f64>, kappas: &[f64], horizon: f64, dt: f64, n_samples: usize, seed: u64, threads: usize) -> Result<ConcentrationReport> {
    if kappas.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidConfig("kappa grid must be strictly decreasing".into()));
    }
    let zero = zero_energy_driver(theta0, horizon, dt)?;
    let rng = SeededRng::new(seed, 0);
    let mut medians = Vec::with_capacity(kappas.len());
    for &k in kappas {
        if k == 0.0 {
            medians.push(0.0);
            continue;
        }
        let devs: Vec<f64> = map_indexed(n_samples, threads, |i| {
            let d = simulate_dyson(theta0, k, horizon, dt, &rng.with_stream(i as u64))?;
            Ok(sup_deviation(&d, &zero))
        })
        .into_iter()
        .collect::<Result<_>>()?;
        medians.push(median(&devs));
    }
    let strictly_decreasing = medians.windows(2).all(|w| w[1] < w[0]);
    let (x, y): (Vec<f64>, Vec<f64>) = kappas.iter().zip(&medians).filter(|(k, m)| **k > 0.0 && **m > 0.0).map(|(k, m)| (k.ln(), m.ln())).unzip();
    let (power, power_stderr) = if x.len() >= 2 {
        let f = weighted_line_fit(&x, &y, &vec![1.0; x.len()]);
        (f.slope, f.slope_stderr)
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(ConcentrationReport { kappas: kappas.to_vec(), medians, strictly_decreasing, power, power_stderr })
}

/// `log rn_weight` at `kappa = 8/3` does not see the loop mass.
pub fn weight_ignores_loops_at_c_zero<T: Real>(driver: &DriverPath<T>, horizon: T) -> Result<bool> {
    let k = lit::<T>(8.0 / 3.0);
    let a = rn_weight(driver, T::zero(), k, horizon)?;
    let b = rn_weight(driver, lit(5.0), k, horizon)?;
    Ok((a - b).abs() <= a * lit(1e-10))
}

/// Curves of a projection, for writers and plots.
pub fn projected_curve(setup: &TiltSetup, i: usize) -> Result<MultiradialCurve<f64>> {
    let theta0 = TorusConfig::new(setup.theta0.clone())?;
    let n = theta0.n();
    let rng = SeededRng::new(setup.seed, 0);
    let curves: Vec<IndependentCurve<f64>> = (0..n)
        .map(|j| independent_curve(theta0.angles()[j], setup.kappa, n as f64 * setup.horizon, setup.dt, &rng.with_stream((i * n + j) as u64)))
        .collect::<Result<_>>()?;
    let steps = (setup.horizon / setup.dt).round() as usize;
    Ok(project_to_common_time(&curves, setup.dt, steps, 0.0)?.curve)
}


#[cfg(test)]
mod props {
    use super::*;
    use crate::energy::psi;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn weight_is_exp_psi_over_kappa(n in 2usize..5, amp in 0.0f64..0.4, kappa in 0.2f64..7.9, mass in 0.0f64..2.0, t in 0.05f64..0.5) {
            let d = DriverPath::from_fn(n, 1e-2, 50, |s: f64, j| std::f64::consts::TAU * j as f64 / n as f64 + amp * (3.0 * s + j as f64).sin());
            let w = rn_weight(&d, mass, kappa, t).unwrap();
            let p = psi(&d, mass, kappa, t).unwrap().to_float();
            let want = (p / kappa).exp();
            prop_assert!((w - want).abs() <= 1e-10 * want);
        }
    }
}
