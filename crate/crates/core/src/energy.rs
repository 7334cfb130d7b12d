//! Energy functionals: Dyson–Dirichlet energy of multiradial drivers,
//! Loewner energies of the individual curves, the interaction term `Psi`,
//! the finite-horizon rate in loop-measure form, and the steady-convergence
//! diagnostic.

use serde::{Deserialize, Serialize};

use crate::config::{log_partition_u_raw, min_gap_of, COLLISION_GAP};
use crate::geometry::{compose_inverse, C};
use crate::loewner::{dyson_drift, unzip, DriverPath, MultiradialCurve, TimeChange};
use crate::{lit, to_f64, Error, Extended, Real, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SleConstants<T> {
    pub beta_hat: T,
    pub central_charge: T,
    pub kappa: T,
    pub n: usize,
}

/// `beta_hat_n(kappa) = (n-1)((kappa-4)^2 + 4n) / (8 kappa)` and
/// `c(kappa) = (6-kappa)(3 kappa-8) / (2 kappa)`.
pub fn sle_constants<T: Real>(kappa: T, n: usize) -> SleConstants<T> {
    let nf = lit::<T>(n as f64);
    let four = lit::<T>(4.0);
    let beta_hat = (nf - T::one()) * ((kappa - four).powi(2) + four * nf) / (lit::<T>(8.0) * kappa);
    let central_charge = (lit::<T>(6.0) - kappa) * (lit::<T>(3.0) * kappa - lit(8.0)) / (lit::<T>(2.0) * kappa);
    SleConstants { beta_hat, central_charge, kappa, n }
}

/// `kappa * beta_hat` and `kappa * c / 2`, which stay finite as `kappa -> 0`.
fn scaled_constants<T: Real>(kappa: T, n: usize) -> (T, T) {
    let nf = lit::<T>(n as f64);
    let four = lit::<T>(4.0);
    let kb = (nf - T::one()) * ((kappa - four).powi(2) + four * nf) / lit(8.0);
    let kc = (lit::<T>(6.0) - kappa) * (lit::<T>(3.0) * kappa - lit(8.0)) / lit(4.0);
    (kb, kc)
}

/// `1/2 int sum_j |d theta^j/ds - 2 sum cot|^2 ds` on the driver grid.
///
/// On each interval the derivative is the forward difference and the drift
/// is the trapezoid average of its endpoint values. A collided state gives
/// `PosInf`.
pub fn dyson_dirichlet_energy<T: Real>(driver: &DriverPath<T>) -> Extended<T> {
    let n = driver.n;
    if driver.first_collision().is_some() {
        return Extended::PosInf;
    }
    let mut d0 = vec![T::zero(); n];
    let mut d1 = vec![T::zero(); n];
    dyson_drift(driver.state(0), &mut d0);
    let half = lit::<T>(0.5);
    let mut e = T::zero();
    for k in 0..driver.steps {
        let (a, b) = (driver.state(k), driver.state(k + 1));
        dyson_drift(b, &mut d1);
        for j in 0..n {
            let r = (b[j] - a[j]) / driver.dt - (d0[j] + d1[j]) * half;
            e += r * r;
        }
        std::mem::swap(&mut d0, &mut d1);
    }
    let e = e * driver.dt * half;
    if e.is_finite() {
        Extended::Finite(e)
    } else {
        Extended::PosInf
    }
}

/// Driver of a single curve on its own capacity grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SingleDriver<T> {
    /// Unwrapped driving angle at each capacity grid point.
    pub driver: Vec<T>,
    /// Own capacity, `cap[0] = 0`.
    pub cap: Vec<T>,
    /// Largest distance between an input sample and the re-traced point.
    pub tol_zip: T,
}

impl<T: Real> SingleDriver<T> {
    /// `1/2 int |d driver/ds|^2 ds` with forward differences.
    pub fn energy(&self) -> T {
        let mut e = T::zero();
        for i in 1..self.driver.len() {
            let ds = self.cap[i] - self.cap[i - 1];
            if ds > T::zero() {
                let da = self.driver[i] - self.driver[i - 1];
                e += da * da / ds;
            }
        }
        e * lit(0.5)
    }
}

/// Unzip one curve and re-trace it to report the round-trip error.
pub fn extract_single_driver<T: Real>(points: &[C<T>]) -> Result<SingleDriver<T>> {
    let u = unzip(points)?;
    let mut worst = T::zero();
    for (i, s) in u.slits.iter().enumerate() {
        let p = compose_inverse(&u.slits[..i], s.tip());
        worst = worst.max((p - points[i + 1]).norm());
    }
    Ok(SingleDriver { driver: u.driver, cap: u.cum, tol_zip: worst })
}

/// `sum_j J(gamma^j)` over each curve's own capacity time.
///
/// Driving angles come from unzipping each curve, capacity increments from
/// `tc`, which must be sampled on the same rows as `curve`.
pub fn independent_energy<T: Real>(curve: &MultiradialCurve<T>, tc: &TimeChange<T>) -> Result<T> {
    if tc.n != curve.n || tc.rows != curve.rows {
        return Err(Error::InvalidConfig("time change rows do not match the curve".into()));
    }
    let mut total = T::zero();
    for j in 0..curve.n {
        let d = extract_single_driver(&curve.curve(j))?;
        let sd = SingleDriver { driver: d.driver, cap: tc.sigma[j].clone(), tol_zip: d.tol_zip };
        total += sd.energy();
    }
    Ok(total)
}

fn state_at<T: Real>(driver: &DriverPath<T>, horizon: T) -> Result<&[T]> {
    let k = to_f64(horizon / driver.dt).round();
    if k < 0.0 || k as usize > driver.steps {
        return Err(Error::InvalidConfig(format!("horizon {} outside the driver grid", to_f64(horizon))));
    }
    Ok(driver.state(k as usize))
}

/// Interaction term `Psi^kappa_T`, and `Psi^0_T` for `kappa = 0`:
///
/// `kappa log(Z(theta_T)/Z(theta_0)) + kappa beta_hat n T + kappa c / 2 L`,
/// written through `U` so that the two branches are one continuous formula.
/// A collided endpoint gives `NegInf`.
pub fn psi<T: Real>(driver: &DriverPath<T>, loop_mass: T, kappa: T, horizon: T) -> Result<Extended<T>> {
    if kappa < T::zero() || loop_mass < T::zero() {
        return Err(Error::InvalidConfig("need kappa >= 0 and loop mass >= 0".into()));
    }
    let a0 = driver.state(0);
    let at = state_at(driver, horizon)?;
    if min_gap_of(a0) < lit(COLLISION_GAP) || min_gap_of(at) < lit(COLLISION_GAP) {
        return Ok(Extended::NegInf);
    }
    let (u0, ut) = match (log_partition_u_raw(a0), log_partition_u_raw(at)) {
        (Extended::Finite(a), Extended::Finite(b)) => (a, b),
        _ => return Ok(Extended::NegInf),
    };
    Ok(Extended::Finite(psi_from_parts(u0, ut, driver.n, kappa, horizon, loop_mass)))
}

/// Same formula from precomputed `U(theta_0)`, `U(theta_T)`.
pub fn psi_from_parts<T: Real>(u0: T, ut: T, n: usize, kappa: T, horizon: T, loop_mass: T) -> T {
    let (kb, kc) = scaled_constants(kappa, n);
    u0 - ut + kb * lit::<T>(n as f64) * horizon + kc * loop_mass
}

/// Finite-horizon rate in both forms.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BlmRate {
    /// `J - Psi^0_T`.
    pub rate_bm_form: f64,
    /// Standard error of `rate_bm_form` inherited from the loop mass.
    pub rate_bm_stderr: f64,
    pub rate_dyson: f64,
    pub energy_indep: f64,
    pub psi0: f64,
    /// `L - (n+4)(n-1)n T / 24`.
    pub l_hat: f64,
}

/// `l_hat = L - (n+4)(n-1) n T / 24`.
pub fn renormalized_loop_term(loop_mass: f64, n: usize, horizon: f64) -> f64 {
    let nf = n as f64;
    loop_mass - (nf + 4.0) * (nf - 1.0) * nf * horizon / 24.0
}

/// Rate of one trajectory in loop-measure form, `J_{sigma(T)} - Psi^0_T`,
/// next to its Dyson–Dirichlet energy. `curve` and `tc` must cover `[0, T]`
/// of `driver`.
pub fn blm_rate_finite_t(
    driver: &DriverPath<f64>,
    curve: &MultiradialCurve<f64>,
    tc: &TimeChange<f64>,
    loop_mass: f64,
    loop_stderr: f64,
    horizon: f64,
) -> Result<BlmRate> {
    let steps = (horizon / driver.dt).round() as usize;
    let rate_dyson = dyson_dirichlet_energy(&driver.prefix(steps))
        .finite()
        .ok_or_else(|| Error::Numerical("collided driver".into()))?;
    let energy_indep = independent_energy(curve, tc)?;
    let psi0 = psi(driver, loop_mass, 0.0, horizon)?
        .finite()
        .ok_or_else(|| Error::Numerical("collided endpoint".into()))?;
    let (_, kc) = scaled_constants(0.0f64, driver.n);
    Ok(BlmRate {
        rate_bm_form: energy_indep - psi0,
        rate_bm_stderr: kc.abs() * loop_stderr,
        rate_dyson,
        energy_indep,
        psi0,
        l_hat: renormalized_loop_term(loop_mass, driver.n, horizon),
    })
}

/// Steady-convergence report for a sampled family `f^kappa -> f^0`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SteadyReport {
    pub kappas: Vec<f64>,
    pub m_grid: Vec<f64>,
    pub eps_grid: Vec<f64>,
    /// `sup_{|f^0| <= M} |f^kappa - f^0|`, indexed `[m][kappa]`.
    pub sup_dev: Vec<Vec<f64>>,
    /// Whether `f^0 >= M => f^kappa > 0` and `f^0 <= -M => f^kappa < 0`,
    /// indexed `[m][kappa]`. Vacuous when no sample has `|f^0| >= M`.
    pub tail_ok: Vec<Vec<bool>>,
    /// `[m][eps]`: the smallest sampled `kappa` is within `eps` on the
    /// sublevel set and has the right tail signs.
    pub steady: Vec<Vec<bool>>,
    /// Whether `sup_dev` decreases as `kappa` decreases, per `m`.
    pub monotone: Vec<bool>,
}

impl SteadyReport {
    pub fn all_steady(&self) -> bool {
        self.steady.iter().all(|r| r.iter().all(|b| *b))
    }
}

/// Diagnose steady convergence from values `family[k][x]` of `f^{kappa_k}`
/// and `psi0[x]` of `f^0` on a fixed sample set.
pub fn steady_convergence_diagnostic(
    kappas: &[f64],
    family: &[Vec<f64>],
    psi0: &[f64],
    m_grid: &[f64],
    eps_grid: &[f64],
) -> Result<SteadyReport> {
    if kappas.len() < 3 || psi0.len() < 10 {
        return Err(Error::InvalidConfig("need at least 3 kappa values and 10 samples".into()));
    }
    if family.len() != kappas.len() || family.iter().any(|f| f.len() != psi0.len()) {
        return Err(Error::InvalidConfig("family shape does not match".into()));
    }
    // kappa ascending
    let mut order: Vec<usize> = (0..kappas.len()).collect();
    order.sort_by(|&a, &b| kappas[a].total_cmp(&kappas[b]));
    let ks: Vec<f64> = order.iter().map(|&i| kappas[i]).collect();
    let mut sup_dev = Vec::new();
    let mut tail_ok = Vec::new();
    let mut steady = Vec::new();
    let mut monotone = Vec::new();
    for &m in m_grid {
        let mut devs = Vec::new();
        let mut tails = Vec::new();
        for &i in &order {
            let f = &family[i];
            let mut d: f64 = 0.0;
            let mut ok = true;
            for (x, &f0) in psi0.iter().enumerate() {
                if f0.abs() <= m {
                    d = d.max((f[x] - f0).abs());
                }
                if f0 >= m && f[x] <= 0.0 || f0 <= -m && f[x] >= 0.0 {
                    ok = false;
                }
            }
            devs.push(d);
            tails.push(ok);
        }
        monotone.push(devs.windows(2).all(|w| w[0] <= w[1]));
        let row: Vec<bool> = eps_grid
            .iter()
            .map(|&eps| devs.first().is_some_and(|d| *d < eps) && tails[0])
            .collect();
        sup_dev.push(devs);
        tail_ok.push(tails);
        steady.push(row);
    }
    Ok(SteadyReport { kappas: ks, m_grid: m_grid.to_vec(), eps_grid: eps_grid.to_vec(), sup_dev, tail_ok, steady, monotone })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{equally_spaced, log_partition_u, u_min, TorusConfig};
    use crate::drivers::{single_radial_driver, zero_energy_driver};
    use crate::loewner::{refit_time_change, trace};
    use crate::rng::SeededRng;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    #[test]
    fn constants_roots_and_values() {
        assert_eq!(sle_constants(8.0f64 / 3.0, 2).central_charge, 0.0);
        assert_eq!(sle_constants(6.0f64, 2).central_charge, 0.0);
        assert_eq!(sle_constants(3.0f64, 1).beta_hat, 0.0);
        assert_abs_diff_eq!(sle_constants(2.0f64, 5).central_charge, -2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(sle_constants(4.0f64, 2).beta_hat, 0.25, epsilon = 1e-14);
    }

    #[test]
    fn zero_energy_driver_has_no_energy() {
        let th = TorusConfig::new(vec![0.0, 1.0, 2.0]).unwrap();
        let d = zero_energy_driver(&th, 1.0, 1e-3).unwrap();
        assert!(dyson_dirichlet_energy(&d).finite().unwrap() < 1e-8);
    }

    #[test]
    fn rotating_driver_energy() {
        let (n, w, t) = (3usize, 0.7, 2.0);
        let d = DriverPath::from_fn(n, 1e-3, 2000, |s, j| 2.0 * PI * j as f64 / n as f64 + w * s);
        let e = dyson_dirichlet_energy(&d).finite().unwrap();
        let want = n as f64 * w * w * t / 2.0;
        assert!((e - want).abs() < 5e-3 * want, "{e} vs {want}");
    }

    #[test]
    fn energy_additive_and_rotation_invariant() {
        let th = TorusConfig::new(vec![0.0, 0.4]).unwrap();
        let d = DriverPath::from_fn(2, 1e-3, 1000, |s, j| th.angles()[j] + (3.0 * s + j as f64).sin() * 0.2);
        let whole = dyson_dirichlet_energy(&d).finite().unwrap();
        let a = dyson_dirichlet_energy(&d.prefix(400)).finite().unwrap();
        let tail = DriverPath::from_flat(1e-3, 2, d.flat()[400 * 2..].to_vec(), None);
        let b = dyson_dirichlet_energy(&tail).finite().unwrap();
        assert_abs_diff_eq!(whole, a + b, epsilon = 1e-10 * whole.max(1.0));
        let r = dyson_dirichlet_energy(&d.rotated(1.234)).finite().unwrap();
        assert_abs_diff_eq!(whole, r, epsilon = 1e-10 * whole.max(1.0));
    }

    #[test]
    fn collided_driver_is_pos_inf() {
        let d = DriverPath::constant(&[0.0, 0.0], 1e-2, 3);
        assert_eq!(dyson_dirichlet_energy(&d), Extended::PosInf);
        assert_eq!(psi(&d, 0.0, 1.0, 0.0).unwrap(), Extended::NegInf);
    }

    #[test]
    fn straight_segment_unzips_to_constant_driver() {
        let pts: Vec<C<f64>> = (0..200).map(|i| C::new(1.0 - i as f64 * 0.004, 0.0)).collect();
        let d = extract_single_driver(&pts).unwrap();
        assert!(d.driver.iter().all(|a| a.abs() < 1e-3));
        assert!(d.energy() < 1e-6);
    }

    #[test]
    fn single_brownian_trace_round_trips() {
        let p = single_radial_driver(0.3, 1.0, 0.05, 1e-4, &SeededRng::new(3, 0)).unwrap();
        let c = trace(&p).unwrap();
        let d = extract_single_driver(&c.curve(0)).unwrap();
        assert!(d.tol_zip < 5e-3, "{}", d.tol_zip);
        let worst = d.driver.iter().zip(p.flat()).map(|(a, b): (&f64, &f64)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-6, "{worst}");
    }

    #[test]
    fn rotating_single_curve_round_trips() {
        let (w, s) = (0.8f64, 1.0f64);
        let p = DriverPath::from_fn(1, 1e-3, 1000, |t, _| w * t);
        let c = trace(&p).unwrap();
        let d = extract_single_driver(&c.curve(0)).unwrap();
        let worst = d.driver.iter().zip(p.flat()).map(|(a, b): (&f64, &f64)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-3, "{worst}");
        let tc = refit_time_change(&c).unwrap();
        let j = independent_energy(&c, &tc).unwrap();
        assert!((j - w * w * s / 2.0).abs() < 0.01 * w * w * s / 2.0, "{j}");
    }

    #[test]
    fn symmetric_segments_have_no_independent_energy() {
        let d = DriverPath::constant(equally_spaced::<f64>(3, 0.2).angles(), 2e-3, 200);
        let c = trace(&d).unwrap();
        let tc = refit_time_change(&c).unwrap();
        assert!(independent_energy(&c, &tc).unwrap() < 1e-4);
    }

    #[test]
    fn psi_limits() {
        let th = TorusConfig::new(vec![0.0, 0.7, 2.0]).unwrap();
        let d = zero_energy_driver(&th, 0.5, 1e-3).unwrap();
        for k in [0.0, 1.0, 4.0] {
            assert_eq!(psi(&d, 0.0, k, 0.0).unwrap(), Extended::Finite(0.0));
        }
        let l = 0.3;
        let p0: f64 = psi(&d, l, 0.0, 0.5).unwrap().finite().unwrap();
        let mut prev = f64::INFINITY;
        for k in [0.5, 0.1, 0.01, 1e-4] {
            let pk: f64 = psi(&d, l, k, 0.5).unwrap().finite().unwrap();
            let dev = (pk - p0).abs();
            assert!(dev < prev);
            prev = dev;
        }
        assert!(prev < 1e-3);
        let u0 = log_partition_u(&th).finite().unwrap();
        assert!(p0 <= u0 + 0.5 * 7.0 * 2.0 * 3.0 * 0.5);
        assert!(u0 >= u_min::<f64>(3));
    }

    #[test]
    fn psi0_closed_form() {
        let d = DriverPath::constant(&[0.0, PI], 1e-2, 100);
        let p = psi(&d, 0.2, 0.0, 1.0).unwrap().finite().unwrap();
        assert_abs_diff_eq!(p, 0.5 * 6.0 * 1.0 * 2.0 * 1.0 - 12.0 * 0.2, epsilon = 1e-12);
    }

    #[test]
    fn l_hat_arithmetic() {
        assert_abs_diff_eq!(renormalized_loop_term(1.0, 2, 2.0), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(renormalized_loop_term(0.0, 3, 1.0), -1.75, epsilon = 1e-15);
    }

    #[test]
    fn steady_trivial_families() {
        let psi0: Vec<f64> = (0..20).map(|i| i as f64 - 10.0).collect();
        let ks = [0.5, 0.25, 0.1];
        let same: Vec<Vec<f64>> = ks.iter().map(|_| psi0.clone()).collect();
        let r = steady_convergence_diagnostic(&ks, &same, &psi0, &[3.0, 5.0], &[1e-3]).unwrap();
        assert!(r.all_steady());
        let shifted: Vec<Vec<f64>> = ks.iter().map(|k| psi0.iter().map(|x| x + k).collect()).collect();
        let r = steady_convergence_diagnostic(&ks, &shifted, &psi0, &[3.0], &[0.2, 0.05]).unwrap();
        for (i, k) in r.kappas.iter().enumerate() {
            assert_abs_diff_eq!(r.sup_dev[0][i], *k, epsilon = 1e-12);
        }
        assert!(r.monotone[0]);
        assert_eq!(r.steady[0], vec![true, false]);
    }
}
