//! Hitting times of small disks, escape events, transience and the
//! partition-function expectation bound.

use serde::{Deserialize, Serialize};

use crate::config::{partition_z, TorusConfig};
use crate::drivers::simulate_dyson;
use crate::loewner::{trace_rows, DriverPath, MultiradialCurve};
use crate::par::map_indexed;
use crate::rng::SeededRng;
use crate::stats::{excess_kurtosis, mean_stderr, median, weighted_line_fit, wilson, LineFit};
use crate::{lit, to_f64, Error, Real, Result};

/// First time `|gamma^j(t)| < e^{-v}` on the samples, linear in `|gamma|`
/// between the bracketing rows. `v = 0` gives 0.
pub fn hitting_time<T: Real>(curve: &MultiradialCurve<T>, j: usize, v: T) -> Option<T> {
    if v <= T::zero() {
        return Some(T::zero());
    }
    let level = (-v).exp();
    let mut prev: Option<(T, T)> = None;
    for r in 0..curve.len() {
        let (t, m) = (curve.time(r), curve.point(r, j).norm());
        if m < level {
            return Some(match prev {
                Some((t0, m0)) if m0 > m => t0 + (t - t0) * (m0 - level) / (m0 - m),
                _ => t,
            });
        }
        prev = Some((t, m));
    }
    None
}

/// Lower and upper bound on `n rho^j(v)`: `v - log 4` and `v + log(n)/2`.
pub fn hitting_bounds(n: usize, v: f64) -> (f64, f64) {
    (v - 4f64.ln(), v + (n as f64).ln() / 2.0)
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct HittingReport {
    pub checked: usize,
    pub missing: usize,
    pub lower_violations: usize,
    pub upper_violations: usize,
    /// Smallest `n rho - (v - log 4)`.
    pub worst_lower_margin: f64,
    /// Smallest `v + log(n)/2 - n rho`.
    pub worst_upper_margin: f64,
    /// `(curve, v, n rho)` of every violation.
    pub violations: Vec<(usize, f64, f64)>,
}

impl HittingReport {
    pub fn new() -> Self {
        Self { worst_lower_margin: f64::INFINITY, worst_upper_margin: f64::INFINITY, ..Default::default() }
    }

    pub fn holds(&self) -> bool {
        self.lower_violations == 0 && self.upper_violations == 0 && self.missing == 0
    }

    pub fn merge(&mut self, o: &HittingReport) {
        self.checked += o.checked;
        self.missing += o.missing;
        self.lower_violations += o.lower_violations;
        self.upper_violations += o.upper_violations;
        self.worst_lower_margin = self.worst_lower_margin.min(o.worst_lower_margin);
        self.worst_upper_margin = self.worst_upper_margin.min(o.worst_upper_margin);
        self.violations.extend_from_slice(&o.violations);
    }
}

/// Check `v - log 4 <= n rho^j(v) <= v + log(n)/2`, each side with slack `tol`.
pub fn check_hitting_bounds<T: Real>(curve: &MultiradialCurve<T>, v_grid: &[f64], tol: f64) -> HittingReport {
    let n = curve.n;
    let mut rep = HittingReport::new();
    for j in 0..n {
        for &v in v_grid {
            let Some(rho) = hitting_time(curve, j, lit::<T>(v)) else {
                rep.missing += 1;
                continue;
            };
            rep.checked += 1;
            let nr = n as f64 * to_f64(rho);
            let (lo, hi) = hitting_bounds(n, v);
            rep.worst_lower_margin = rep.worst_lower_margin.min(nr - lo);
            rep.worst_upper_margin = rep.worst_upper_margin.min(hi - nr);
            if nr < lo - tol {
                rep.lower_violations += 1;
                rep.violations.push((j, v, nr));
            }
            if nr > hi + tol {
                rep.upper_violations += 1;
                rep.violations.push((j, v, nr));
            }
        }
    }
    rep
}

/// Trace every `stride` steps, then every step on the intervals where some
/// curve first drops below one of the levels `e^{-v}`, so hitting times are
/// resolved to one step.
pub fn trace_for_hitting(driver: &DriverPath<f64>, v_grid: &[f64], stride: usize) -> Result<MultiradialCurve<f64>> {
    let mut rows: Vec<usize> = (0..=driver.steps).step_by(stride.max(1)).collect();
    if *rows.last().unwrap() != driver.steps {
        rows.push(driver.steps);
    }
    refine_for_hitting(driver, &rows, v_grid)
}

/// [`trace_for_hitting`] from arbitrary ascending base rows. Only the
/// missing rows inside each hitting bracket are traced in the second pass.
pub fn refine_for_hitting(driver: &DriverPath<f64>, rows: &[usize], v_grid: &[f64]) -> Result<MultiradialCurve<f64>> {
    let coarse = trace_rows(driver, rows)?;
    let mut extra = Vec::new();
    for j in 0..driver.n {
        for &v in v_grid {
            let level = (-v).exp();
            if let Some(r) = (0..coarse.len()).find(|&r| coarse.point(r, j).norm() < level) {
                if r > 0 {
                    extra.extend(coarse.rows[r - 1] + 1..coarse.rows[r]);
                }
            }
        }
    }
    if extra.is_empty() {
        return Ok(coarse);
    }
    extra.sort_unstable();
    extra.dedup();
    let fine = trace_rows(driver, &extra)?;
    Ok(coarse.merged(&fine))
}

/// Radius process of one curve after tracing: `(t, |gamma^j(t)|)`.
fn radii(curve: &MultiradialCurve<f64>, j: usize) -> Vec<(f64, f64)> {
    (0..curve.len()).map(|r| (curve.time(r), curve.point(r, j).norm())).collect()
}

/// Whether `gamma^j` exits the closed disk of radius `e^{-u}` after first
/// entering the open disk of radius `e^{-v}`, within the traced horizon.
/// `None` when level `v` is never reached.
pub fn escapes(curve: &MultiradialCurve<f64>, j: usize, u: f64, v: f64) -> Option<bool> {
    let rs = radii(curve, j);
    let inner = (-v).exp();
    let outer = (-u).exp();
    let k = rs.iter().position(|&(_, m)| m < inner)?;
    Some(rs[k..].iter().any(|&(_, m)| m > outer))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EscapeEstimate {
    pub kappa: f64,
    pub n: usize,
    pub u: f64,
    pub v: f64,
    pub horizon: f64,
    pub n_samples: usize,
    pub hits: usize,
    pub escapes: usize,
    pub p_hat: f64,
    pub ci: (f64, f64),
    pub inconclusive: bool,
}

impl EscapeEstimate {
    fn from_counts(kappa: f64, n: usize, u: f64, v: f64, horizon: f64, n_samples: usize, hits: usize, escapes: usize) -> Self {
        let p_hat = escapes as f64 / n_samples.max(1) as f64;
        Self {
            kappa,
            n,
            u,
            v,
            horizon,
            n_samples,
            hits,
            escapes,
            p_hat,
            ci: wilson(escapes as u64, n_samples as u64, 1.96),
            inconclusive: hits < 10,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EscapeSetup {
    pub kappa: f64,
    pub theta0: Vec<f64>,
    pub horizon: f64,
    pub dt: f64,
    pub n_samples: usize,
    /// Tracing stride; hitting times are refined to one step regardless.
    pub stride: usize,
    pub seed: u64,
    pub threads: usize,
}

/// Escape frequencies of curve 0 for several `(u, v)` pairs from one
/// ensemble of Dyson trajectories. Trajectory `i` uses stream `i`.
pub fn escape_probability_mc(setup: &EscapeSetup, pairs: &[(f64, f64)]) -> Result<Vec<EscapeEstimate>> {
    if pairs.iter().any(|&(u, v)| !(0.0 < u && u < v)) {
        return Err(Error::InvalidConfig("need 0 < u < v".into()));
    }
    let theta0 = TorusConfig::new(setup.theta0.clone())?;
    let n = theta0.n();
    let levels: Vec<f64> = pairs.iter().flat_map(|&(u, v)| [u, v]).collect();
    let rng = SeededRng::new(setup.seed, 0);
    let outcomes: Vec<Result<Vec<Option<bool>>>> = map_indexed(setup.n_samples, setup.threads, |i| {
        let d = simulate_dyson(&theta0, setup.kappa, setup.horizon, setup.dt, &rng.with_stream(i as u64))?;
        let c = trace_for_hitting(&d, &levels, setup.stride)?;
        Ok(pairs.iter().map(|&(u, v)| escapes(&c, 0, u, v)).collect())
    });
    let mut hits = vec![0usize; pairs.len()];
    let mut esc = vec![0usize; pairs.len()];
    for o in outcomes {
        for (k, e) in o?.into_iter().enumerate() {
            if let Some(x) = e {
                hits[k] += 1;
                if x {
                    esc[k] += 1;
                }
            }
        }
    }
    Ok(pairs
        .iter()
        .enumerate()
        .map(|(k, &(u, v))| EscapeEstimate::from_counts(setup.kappa, n, u, v, setup.horizon, setup.n_samples, hits[k], esc[k]))
        .collect())
}

/// Exponent `(8 - kappa) / (2 kappa)` of the escape bound.
pub fn escape_exponent(kappa: f64) -> f64 {
    (8.0 - kappa) / (2.0 * kappa)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EscapeFit {
    pub gaps: Vec<f64>,
    pub fit: LineFit,
    pub reference: f64,
}

/// Weighted fit of `log p_hat` against `v - u`, weights from the Wilson
/// intervals. Needs at least 4 gaps with positive counts.
pub fn fit_escape_exponent(est: &[EscapeEstimate]) -> Result<EscapeFit> {
    let used: Vec<&EscapeEstimate> = est.iter().filter(|e| e.escapes > 0).collect();
    if used.len() < 4 {
        return Err(Error::Numerical("fewer than 4 gaps with escapes".into()));
    }
    let x: Vec<f64> = used.iter().map(|e| e.v - e.u).collect();
    let y: Vec<f64> = used.iter().map(|e| e.p_hat.ln()).collect();
    let s: Vec<f64> = used.iter().map(|e| ((e.ci.1.ln() - e.ci.0.max(1e-300).ln()) / (2.0 * 1.96)).max(1e-6)).collect();
    let kappa = used[0].kappa;
    Ok(EscapeFit { gaps: x.clone(), fit: weighted_line_fit(&x, &y, &s), reference: -escape_exponent(kappa) })
}

/// `b(n, kappa) = n ((8 - kappa)/2 - kappa (n^2 - 1)/12)`.
pub fn exponent_b(n: usize, kappa: f64) -> f64 {
    let nf = n as f64;
    nf * ((8.0 - kappa) / 2.0 - kappa * (nf * nf - 1.0) / 12.0)
}

/// Whether `b(n, .)` is strictly decreasing and positive on a grid of
/// `(0, 1/n^2]`.
pub fn exponent_b_structure(n: usize, points: usize) -> bool {
    let k0 = 1.0 / (n * n) as f64;
    let vals: Vec<f64> = (1..=points).map(|i| exponent_b(n, k0 * i as f64 / points as f64)).collect();
    vals.windows(2).all(|w| w[1] < w[0]) && vals.iter().all(|b| *b > 0.0)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransienceReport {
    pub kappa: f64,
    pub n: usize,
    pub horizon: f64,
    pub n_samples: usize,
    pub times: Vec<f64>,
    /// Median over the ensemble of `max_j |tip|` per time.
    pub median_tip: Vec<f64>,
    /// Max over the ensemble of `max_j |tip|` per time.
    pub max_tip: Vec<f64>,
    /// Max over the ensemble of `max_j dist(0, gamma^j[0,t])` per time.
    pub max_dist: Vec<f64>,
    /// `4 exp(-(n t - log(n)/2))`.
    pub envelope: Vec<f64>,
    pub envelope_violations_dist: usize,
    pub envelope_violations_tip: usize,
    pub median_monotone: bool,
    /// Trajectories whose tip radius decreases at every sample after t = 1.
    pub eventually_decreasing: usize,
}

/// Ensemble of Dyson trajectories from equally spaced start; tip radii and
/// distances to the origin against the envelope `4 e^{-(n t - log(n)/2)}`.
pub fn transience_experiment(kappa: f64, n: usize, horizon: f64, dt: f64, stride: usize, n_samples: usize, seed: u64, threads: usize) -> Result<TransienceReport> {
    if !(kappa > 0.0 && kappa <= 8.0 / 3.0) {
        return Err(Error::InvalidConfig("transience needs kappa in (0, 8/3]".into()));
    }
    let theta0 = crate::config::equally_spaced::<f64>(n, 0.0);
    let rng = SeededRng::new(seed, 0);
    let steps = (horizon / dt).round() as usize;
    let stride = stride.max(1);
    let mut rows: Vec<usize> = (0..=steps).step_by(stride).collect();
    if *rows.last().unwrap() != steps {
        rows.push(steps);
    }
    let runs: Vec<Result<(Vec<f64>, Vec<f64>)>> = map_indexed(n_samples, threads, |i| {
        let d = simulate_dyson(&theta0, kappa, horizon, dt, &rng.with_stream(i as u64))?;
        let c = trace_rows(&d, &rows)?;
        let tips: Vec<f64> = (0..c.len()).map(|r| (0..n).map(|j| c.point(r, j).norm()).fold(0.0, f64::max)).collect();
        let mins: Vec<Vec<f64>> = (0..n).map(|j| c.running_min_radius(j)).collect();
        let dist: Vec<f64> = (0..c.len()).map(|r| (0..n).map(|j| mins[j][r]).fold(0.0, f64::max)).collect();
        Ok((tips, dist))
    });
    let runs: Vec<(Vec<f64>, Vec<f64>)> = runs.into_iter().collect::<Result<_>>()?;
    let times: Vec<f64> = rows.iter().map(|&k| k as f64 * dt).collect();
    let nf = n as f64;
    let envelope: Vec<f64> = times.iter().map(|t| 4.0 * (-(nf * t - nf.ln() / 2.0)).exp()).collect();
    let mut median_tip = Vec::new();
    let mut max_tip = Vec::new();
    let mut max_dist = Vec::new();
    let (mut vd, mut vt) = (0, 0);
    for r in 0..times.len() {
        let tips: Vec<f64> = runs.iter().map(|(t, _)| t[r]).collect();
        let dists: Vec<f64> = runs.iter().map(|(_, d)| d[r]).collect();
        median_tip.push(median(&tips));
        max_tip.push(tips.iter().copied().fold(0.0, f64::max));
        max_dist.push(dists.iter().copied().fold(0.0, f64::max));
        vt += tips.iter().filter(|x| **x > envelope[r]).count();
        vd += dists.iter().filter(|x| **x > envelope[r]).count();
    }
    let median_monotone = median_tip.windows(2).all(|w| w[1] <= w[0]);
    let first = times.iter().position(|t| *t >= 1.0).unwrap_or(times.len());
    let eventually_decreasing = runs.iter().filter(|(t, _)| t[first..].windows(2).all(|w| w[1] <= w[0])).count();
    Ok(TransienceReport {
        kappa,
        n,
        horizon,
        n_samples,
        times,
        median_tip,
        max_tip,
        max_dist,
        envelope,
        envelope_violations_dist: vd,
        envelope_violations_tip: vt,
        median_monotone,
        eventually_decreasing,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PartitionReport {
    pub kappa: f64,
    pub n: usize,
    pub t: f64,
    pub n_samples: usize,
    pub mean: f64,
    pub stderr: f64,
    /// `exp(n(n^2-1)t/12) / Z(theta_0)`.
    pub bound: f64,
    pub holds: bool,
    pub kurtosis: f64,
    pub heavy_tail: bool,
}

/// Kurtosis above which `1/Z` samples are flagged heavy-tailed.
pub const HEAVY_TAIL_KURTOSIS: f64 = 50.0;

/// Monte Carlo `E[1/Z(theta_t)]` under the Dyson SDE against
/// `exp(n(n^2-1)t/12)/Z(theta_0)`; holds when `mean - 2 stderr <= bound`.
pub fn partition_expectation_check(kappa: f64, theta0: &TorusConfig<f64>, t: f64, dt: f64, n_samples: usize, seed: u64, threads: usize) -> Result<PartitionReport> {
    if !(kappa > 0.0 && kappa <= 4.0) {
        return Err(Error::InvalidConfig("need kappa in (0, 4]".into()));
    }
    let n = theta0.n();
    let rng = SeededRng::new(seed, 0);
    let vals: Vec<Result<f64>> = map_indexed(n_samples, threads, |i| {
        let d = simulate_dyson(theta0, kappa, t, dt, &rng.with_stream(i as u64))?;
        let last = TorusConfig::from_raw(d.state(d.steps).to_vec());
        Ok(1.0 / partition_z(&last, kappa))
    });
    let vals: Vec<f64> = vals.into_iter().collect::<Result<_>>()?;
    let (mean, stderr) = mean_stderr(&vals);
    let nf = n as f64;
    let bound = (nf * (nf * nf - 1.0) * t / 12.0).exp() / partition_z(theta0, kappa);
    let kurtosis = if vals.len() > 3 && stderr > 0.0 { excess_kurtosis(&vals) } else { 0.0 };
    Ok(PartitionReport {
        kappa,
        n,
        t,
        n_samples,
        mean,
        stderr,
        bound,
        // rounding slack only; at t = 0 both sides are the same number
        holds: mean - 2.0 * stderr <= bound * (1.0 + 1e-12),
        kurtosis,
        heavy_tail: kurtosis > HEAVY_TAIL_KURTOSIS,
    })
}


#[cfg(test)]
mod props {
    use super::*;
    use crate::config::equally_spaced;
    use crate::drivers::simulate_dyson;
    use crate::loewner::trace;
    use crate::rng::SeededRng;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        // exiting a larger disk implies exiting every smaller one
        #[test]
        fn escape_events_are_nested(seed in 0u64..10_000, u1 in 0.2f64..1.0, du in 0.0f64..0.8) {
            let d = simulate_dyson(&equally_spaced(2, 0.0), 4.0, 1.5, 1e-2, &SeededRng::new(seed, 3)).unwrap();
            let c = trace(&d).unwrap();
            let v = 1.8;
            for j in 0..2 {
                if let (Some(small), Some(large)) = (escapes(&c, j, u1, v), escapes(&c, j, u1 + du, v)) {
                    prop_assert!(!small || large);
                }
            }
        }
    }
}
