//! Multi-slit radial Loewner engine.
//!
//! Step `k -> k+1` of a driver path is realised as `n` radial slit maps of
//! capacity `dt` each, applied one after the other, the `j`-th placed at
//! `theta^j_{k+1}`. The mapping-out function after `k` steps is the forward
//! composition of all slits so far, so `g_k'(0) = e^{n k dt}` exactly.

use serde::{Deserialize, Serialize};

use crate::config::{cot_sums, min_gap_of, wrap_pi, COLLISION_GAP};
use crate::geometry::{cis, compose_forward, compose_inverse, slit_capacity, Slit, C};
use crate::{lit, to_f64, Error, Real, Result};

/// Uniform-step discrete multiradial driving function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriverPath<T> {
    pub dt: T,
    pub n: usize,
    pub steps: usize,
    /// Row-major `(steps + 1) x n` unwrapped angles.
    angles: Vec<T>,
    pub kappa_tag: Option<T>,
}

impl<T: Real> DriverPath<T> {
    pub fn from_states(dt: T, states: &[Vec<T>], kappa_tag: Option<T>) -> Result<Self> {
        let n = states.first().map(|s| s.len()).unwrap_or(0);
        if n == 0 || states.iter().any(|s| s.len() != n) {
            return Err(Error::InvalidConfig("ragged or empty driver states".into()));
        }
        if !(dt > T::zero()) {
            return Err(Error::InvalidConfig("dt must be positive".into()));
        }
        let angles = states.iter().flat_map(|s| s.iter().copied()).collect();
        Ok(Self { dt, n, steps: states.len() - 1, angles, kappa_tag })
    }

    pub fn from_flat(dt: T, n: usize, angles: Vec<T>, kappa_tag: Option<T>) -> Self {
        assert!(n > 0 && angles.len() % n == 0 && !angles.is_empty());
        let steps = angles.len() / n - 1;
        Self { dt, n, steps, angles, kappa_tag }
    }

    /// Path that stays at `theta0`.
    pub fn constant(theta0: &[T], dt: T, steps: usize) -> Self {
        let mut angles = Vec::with_capacity((steps + 1) * theta0.len());
        for _ in 0..=steps {
            angles.extend_from_slice(theta0);
        }
        Self { dt, n: theta0.len(), steps, angles, kappa_tag: None }
    }

    pub fn from_fn(n: usize, dt: T, steps: usize, f: impl Fn(T, usize) -> T) -> Self {
        let mut angles = Vec::with_capacity((steps + 1) * n);
        for k in 0..=steps {
            let t = dt * lit::<T>(k as f64);
            for j in 0..n {
                angles.push(f(t, j));
            }
        }
        Self { dt, n, steps, angles, kappa_tag: None }
    }

    pub fn state(&self, k: usize) -> &[T] {
        &self.angles[k * self.n..(k + 1) * self.n]
    }

    pub fn flat(&self) -> &[T] {
        &self.angles
    }

    pub fn time(&self, k: usize) -> T {
        self.dt * lit::<T>(k as f64)
    }

    pub fn horizon(&self) -> T {
        self.time(self.steps)
    }

    pub fn prefix(&self, steps: usize) -> Self {
        let steps = steps.min(self.steps);
        Self {
            dt: self.dt,
            n: self.n,
            steps,
            angles: self.angles[..(steps + 1) * self.n].to_vec(),
            kappa_tag: self.kappa_tag,
        }
    }

    pub fn rotated(&self, c: T) -> Self {
        let mut p = self.clone();
        for a in p.angles.iter_mut() {
            *a += c;
        }
        p
    }

    /// Same path with every angle advanced by `omega t`.
    pub fn spinning(&self, omega: T) -> Self {
        let mut p = self.clone();
        for k in 0..=p.steps {
            let c = omega * p.time(k);
            for a in p.angles[k * p.n..(k + 1) * p.n].iter_mut() {
                *a += c;
            }
        }
        p.kappa_tag = None;
        p
    }

    /// First step whose state has collided, if any.
    pub fn first_collision(&self) -> Option<usize> {
        (0..=self.steps).find(|&k| min_gap_of(self.state(k)) < lit(COLLISION_GAP))
    }

    /// Checks the path invariants: no collided state and every component
    /// increment at most `max_increment`.
    pub fn validate(&self, max_increment: T) -> Result<()> {
        if let Some(k) = self.first_collision() {
            return Err(Error::DriverCollision { step: k, valid_to: k.saturating_sub(1) });
        }
        for k in 0..self.steps {
            let (a, b) = (self.state(k), self.state(k + 1));
            for j in 0..self.n {
                let inc = (b[j] - a[j]).abs();
                if inc > max_increment {
                    return Err(Error::IncrementTooLarge {
                        step: k,
                        increment: to_f64(inc),
                        bound: to_f64(max_increment),
                    });
                }
            }
        }
        Ok(())
    }

    /// Slits realising step `k -> k+1`, in application order.
    ///
    /// The order is palindromic: half a step for curves `0..n-1`, a full
    /// step for the last curve, then half steps back down to curve 0. This
    /// keeps symmetric configurations symmetric to second order in `dt`.
    pub fn step_slits(&self, k: usize) -> impl Iterator<Item = Slit<T>> + '_ {
        let n = self.n;
        let a = self.state(k + 1);
        let half = self.dt * lit(0.5);
        let full = self.dt;
        (0..slits_per_step(n)).map(move |i| {
            let (j, c) = step_slot(n, i);
            Slit::new(a[j], if c { full } else { half })
        })
    }

    /// All slits of the first `steps` steps in application order.
    pub fn slits(&self, steps: usize) -> Vec<Slit<T>> {
        (0..steps.min(self.steps)).flat_map(|k| self.step_slits(k)).collect()
    }
}

/// Number of slits applied per step for `n` curves.
pub fn slits_per_step(n: usize) -> usize {
    2 * n - 1
}

/// Curve index of slot `i` within a step, and whether it carries a full step.
fn step_slot(n: usize, i: usize) -> (usize, bool) {
    if i + 1 < n {
        (i, false)
    } else if i + 1 == n {
        (i, true)
    } else {
        (2 * n - 2 - i, false)
    }
}

/// Slot of the last slit of curve `j` within a step.
fn last_slot(n: usize, j: usize) -> usize {
    if j + 1 == n {
        n - 1
    } else {
        2 * n - 2 - j
    }
}

/// Integration scheme for boundary flows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlowScheme {
    /// Exact slit composition.
    Slit,
    /// Classical RK4 on the angular ODE with linearly interpolated drivers.
    Rk4,
}

/// Images and derivatives of boundary points along an evolution.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundaryFlow<T> {
    pub grid: Vec<T>,
    pub dt: T,
    pub n: usize,
    pub steps: usize,
    /// Row-major `(steps + 1) x grid.len()`.
    pub images: Vec<T>,
    pub derivs: Vec<T>,
    /// Step at which each point was absorbed by the hull.
    pub swallowed: Vec<Option<usize>>,
}

impl<T: Real> BoundaryFlow<T> {
    pub fn image(&self, k: usize, m: usize) -> T {
        self.images[k * self.grid.len() + m]
    }

    pub fn deriv(&self, k: usize, m: usize) -> T {
        self.derivs[k * self.grid.len() + m]
    }

    pub fn capacity(&self, k: usize) -> T {
        lit::<T>((self.n * k) as f64) * self.dt
    }

    /// Strict monotonicity of the live images at step `k`, read cyclically.
    pub fn is_monotone(&self, k: usize) -> bool {
        let live: Vec<usize> = (0..self.grid.len()).filter(|&m| self.swallowed[m].map_or(true, |s| s > k)).collect();
        if live.len() < 2 {
            return true;
        }
        let mut turn = T::zero();
        for w in 0..live.len() {
            let a = self.image(k, live[w]);
            let b = self.image(k, live[(w + 1) % live.len()]);
            let d = crate::config::rem_2pi(b - a);
            if d <= T::zero() {
                return false;
            }
            turn += d;
        }
        (turn - T::TAU()).abs() < lit(1e-6)
    }
}

/// Evolve boundary angles `grid` under the driver.
///
/// A point counts as swallowed once a driver lands within `10 dt` of its
/// image or jumps across it; its image and derivative are then frozen.
pub fn evolve_boundary<T: Real>(driver: &DriverPath<T>, grid: &[T], scheme: FlowScheme) -> Result<BoundaryFlow<T>> {
    let m = grid.len();
    let n = driver.n;
    let floor = lit::<T>(10.0) * driver.dt;
    for &x in grid {
        for &a in driver.state(0) {
            if wrap_pi(x - a).abs() < lit(1e-12) {
                return Err(Error::InvalidConfig("grid point coincides with a driver".into()));
            }
        }
    }
    let mut images = Vec::with_capacity((driver.steps + 1) * m);
    let mut derivs = Vec::with_capacity((driver.steps + 1) * m);
    images.extend_from_slice(grid);
    derivs.extend(std::iter::repeat(T::one()).take(m));
    let mut h = grid.to_vec();
    let mut d = vec![T::one(); m];
    let mut swallowed = vec![None; m];
    let half = lit::<T>(0.5);
    for k in 0..driver.steps {
        let (a0, a1) = (driver.state(k), driver.state(k + 1));
        for p in 0..m {
            if swallowed[p].is_some() {
                continue;
            }
            for j in 0..n {
                let before = wrap_pi(h[p] - a0[j]);
                let after = wrap_pi(h[p] - a1[j]);
                let crossed = before.signum() != after.signum() && before.abs() < T::FRAC_PI_2();
                if after.abs() < floor || crossed {
                    swallowed[p] = Some(k + 1);
                }
            }
        }
        match scheme {
            FlowScheme::Slit => {
                for s in driver.step_slits(k) {
                    for p in 0..m {
                        if swallowed[p].is_none() {
                            let (hn, dd) = s.boundary(h[p]);
                            h[p] = hn;
                            d[p] *= dd;
                        }
                    }
                }
            }
            FlowScheme::Rk4 => {
                let rhs = |x: T, ld: T, tau: T| -> (T, T) {
                    let mut v = T::zero();
                    let mut w = T::zero();
                    for j in 0..n {
                        let th = a0[j] + (a1[j] - a0[j]) * tau;
                        let s = ((x - th) * half).sin();
                        v += ((x - th) * half).cos() / s;
                        w += T::one() / (s * s);
                    }
                    let _ = ld;
                    (v, -half * w)
                };
                let dt = driver.dt;
                for p in 0..m {
                    if swallowed[p].is_some() {
                        continue;
                    }
                    let (x, l) = (h[p], d[p].ln());
                    let (k1, l1) = rhs(x, l, T::zero());
                    let (k2, l2) = rhs(x + k1 * dt * half, l + l1 * dt * half, half);
                    let (k3, l3) = rhs(x + k2 * dt * half, l + l2 * dt * half, half);
                    let (k4, l4) = rhs(x + k3 * dt, l + l3 * dt, T::one());
                    let six = lit::<T>(6.0);
                    let two = lit::<T>(2.0);
                    let xn = x + dt * (k1 + two * k2 + two * k3 + k4) / six;
                    let ln = l + dt * (l1 + two * l2 + two * l3 + l4) / six;
                    if !xn.is_finite() || !ln.is_finite() {
                        return Err(Error::Numerical(format!("boundary point {p} blew up at step {k}")));
                    }
                    h[p] = xn;
                    d[p] = ln.exp();
                }
            }
        }
        images.extend_from_slice(&h);
        derivs.extend_from_slice(&d);
    }
    Ok(BoundaryFlow { grid: grid.to_vec(), dt: driver.dt, n, steps: driver.steps, images, derivs, swallowed })
}

/// Images of interior points along the evolution.
#[derive(Clone, Debug)]
pub struct InteriorFlow<T> {
    pub points: Vec<C<T>>,
    /// Row-major `(steps + 1) x points.len()`.
    pub images: Vec<C<T>>,
    pub swallowed: Vec<Option<usize>>,
    /// `log g_t'(0)` per step, tracked from the slit capacities.
    pub log_deriv0: Vec<T>,
}

impl<T: Real> InteriorFlow<T> {
    pub fn image(&self, k: usize, m: usize) -> C<T> {
        self.images[k * self.points.len() + m]
    }
}

pub fn evolve_interior<T: Real>(driver: &DriverPath<T>, points: &[C<T>]) -> InteriorFlow<T> {
    let m = points.len();
    let mut images = Vec::with_capacity((driver.steps + 1) * m);
    images.extend_from_slice(points);
    let mut z = points.to_vec();
    let mut swallowed = vec![None; m];
    let mut log_deriv0 = vec![T::zero()];
    let edge = T::one() - lit::<T>(1e-12);
    for k in 0..driver.steps {
        for s in driver.step_slits(k) {
            for p in 0..m {
                if swallowed[p].is_none() {
                    z[p] = s.forward(z[p]);
                    if !(z[p].norm() < edge) {
                        swallowed[p] = Some(k + 1);
                    }
                }
            }
        }
        log_deriv0.push(lit::<T>((driver.n * (k + 1)) as f64) * driver.dt);
        images.extend_from_slice(&z);
    }
    InteriorFlow { points: points.to_vec(), images, swallowed, log_deriv0 }
}

/// `g_k'(0)` by a one-sided difference quotient at a small point.
pub fn numerical_derivative_at_zero<T: Real>(driver: &DriverPath<T>, k: usize) -> T {
    let slits = driver.slits(k);
    let scale = (-lit::<T>((driver.n * k) as f64) * driver.dt).exp();
    let eps = lit::<T>(1e-7) * scale;
    let w = compose_forward(&slits, C::new(eps, T::zero()));
    (w / eps).norm()
}

/// Sampled curves in common capacity time.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MultiradialCurve<T> {
    pub dt: T,
    pub n: usize,
    pub theta0: Vec<T>,
    /// Step index of each stored row.
    pub rows: Vec<usize>,
    /// Row-major `rows.len() x n`.
    pub points: Vec<C<T>>,
}

impl<T: Real> MultiradialCurve<T> {
    pub fn point(&self, row: usize, j: usize) -> C<T> {
        self.points[row * self.n + j]
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn time(&self, row: usize) -> T {
        self.dt * lit::<T>(self.rows[row] as f64)
    }

    pub fn curve(&self, j: usize) -> Vec<C<T>> {
        (0..self.rows.len()).map(|r| self.point(r, j)).collect()
    }

    /// Rows of both traces of the same driver, in step order.
    pub fn merged(&self, other: &Self) -> Self {
        let n = self.n;
        let (mut a, mut b) = (0, 0);
        let mut rows = Vec::with_capacity(self.len() + other.len());
        let mut points = Vec::with_capacity(self.points.len() + other.points.len());
        while a < self.len() || b < other.len() {
            let take_a = b == other.len() || (a < self.len() && self.rows[a] <= other.rows[b]);
            let (src, r) = if take_a { (self, &mut a) } else { (other, &mut b) };
            if rows.last() != Some(&src.rows[*r]) {
                rows.push(src.rows[*r]);
                points.extend_from_slice(&src.points[*r * n..(*r + 1) * n]);
            }
            *r += 1;
        }
        Self { dt: self.dt, n, theta0: self.theta0.clone(), rows, points }
    }

    /// Rows up to and including `step`.
    pub fn until(&self, step: usize) -> Self {
        let m = self.rows.partition_point(|&k| k <= step);
        Self { dt: self.dt, n: self.n, theta0: self.theta0.clone(), rows: self.rows[..m].to_vec(), points: self.points[..m * self.n].to_vec() }
    }

    /// Running minimum of `|gamma^j|`, i.e. `dist(0, gamma^j[0, t])` on the samples.
    pub fn running_min_radius(&self, j: usize) -> Vec<T> {
        let mut best = T::infinity();
        (0..self.rows.len())
            .map(|r| {
                best = best.min(self.point(r, j).norm());
                best
            })
            .collect()
    }
}

/// Tip of curve `j` after `k` steps: the newest slit tip pulled back through
/// everything applied before it.
pub fn tip<T: Real>(slits: &[Slit<T>], n: usize, k: usize, j: usize) -> C<T> {
    if k == 0 {
        return cis(slits.get(j).map(|s| s.theta).unwrap_or_else(T::zero));
    }
    let idx = (k - 1) * slits_per_step(n) + last_slot(n, j);
    compose_inverse(&slits[..idx], slits[idx].tip())
}

/// Trace every step. Cost is quadratic in the number of steps.
pub fn trace<T: Real>(driver: &DriverPath<T>) -> Result<MultiradialCurve<T>> {
    trace_rows(driver, &(0..=driver.steps).collect::<Vec<_>>())
}

/// Trace only at the listed steps (ascending).
///
/// On a driver collision the error carries the step; use
/// [`trace_partial`] to keep the points computed before it.
pub fn trace_rows<T: Real>(driver: &DriverPath<T>, rows: &[usize]) -> Result<MultiradialCurve<T>> {
    let (c, coll) = trace_partial(driver, rows);
    match coll {
        Some(step) => Err(Error::DriverCollision { step, valid_to: c.rows.last().copied().unwrap_or(0) }),
        None => Ok(c),
    }
}

/// Trace up to the first collided driver state; returns the partial curve
/// and the collision step, if any.
pub fn trace_partial<T: Real>(driver: &DriverPath<T>, rows: &[usize]) -> (MultiradialCurve<T>, Option<usize>) {
    let n = driver.n;
    let coll = driver.first_collision();
    let last = coll.map(|c| c.saturating_sub(1)).unwrap_or(driver.steps);
    let kept: Vec<usize> = rows.iter().copied().filter(|&k| k <= last).collect();
    let slits = driver.slits(last);
    let theta0 = driver.state(0).to_vec();
    let mut points = Vec::with_capacity(kept.len() * n);
    for &k in &kept {
        for j in 0..n {
            if k == 0 {
                points.push(cis(theta0[j]));
            } else {
                points.push(tip(&slits, n, k, j));
            }
        }
    }
    (MultiradialCurve { dt: driver.dt, n, theta0, rows: kept, points }, coll)
}

/// Result of unzipping a single curve with radial slits.
#[derive(Clone, Debug)]
pub struct Unzipped<T> {
    pub slits: Vec<Slit<T>>,
    /// Unwrapped slit angles: the driver on the capacity grid.
    pub driver: Vec<T>,
    /// Cumulative capacity after each absorbed sample; `cum[0] = 0` for the
    /// starting point.
    pub cum: Vec<T>,
}

/// Unzip a sampled simple curve `pts[0]` (on the circle) `-> pts[last]`.
///
/// Each sample is mapped through the slits found so far and absorbed by the
/// radial slit ending exactly at its image, so the capacity of every piece
/// is closed form.
pub fn unzip<T: Real>(pts: &[C<T>]) -> Result<Unzipped<T>> {
    let mut slits: Vec<Slit<T>> = Vec::with_capacity(pts.len());
    let mut driver = Vec::with_capacity(pts.len());
    let mut cum = Vec::with_capacity(pts.len());
    let mut prev = pts.first().map(|p| p.arg()).unwrap_or_else(T::zero);
    driver.push(prev);
    cum.push(T::zero());
    let mut total = T::zero();
    for (i, p) in pts.iter().enumerate().skip(1) {
        let w = compose_forward(&slits, *p);
        let r = w.norm();
        if !(p.norm() < T::one()) || !(r < T::one()) || !r.is_finite() {
            return Err(Error::NotSimple { index: i, modulus: to_f64(r) });
        }
        let a = prev + wrap_pi(w.arg() - prev);
        let c = if r > T::zero() { slit_capacity(r) } else { T::infinity() };
        if !c.is_finite() {
            return Err(Error::NotSimple { index: i, modulus: to_f64(r) });
        }
        slits.push(Slit::new(a, c));
        total += c;
        driver.push(a);
        cum.push(total);
        prev = a;
    }
    Ok(Unzipped { slits, driver, cum })
}

/// Per-curve capacities `sigma^j` on the rows of a traced curve.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TimeChange<T> {
    pub dt: T,
    pub n: usize,
    pub rows: Vec<usize>,
    /// `sigma[j][row]`, from refitting each curve alone.
    pub sigma: Vec<Vec<T>>,
    /// Cross-check from integrating `1 / h'^2`, on the same rows.
    pub sigma_ode: Option<Vec<Vec<T>>>,
    pub max_discrepancy: Option<T>,
}

impl<T: Real> TimeChange<T> {
    pub fn time(&self, row: usize) -> T {
        self.dt * lit::<T>(self.rows[row] as f64)
    }
}

/// Capacity of each traced curve alone, by unzipping it.
pub fn refit_time_change<T: Real>(curve: &MultiradialCurve<T>) -> Result<TimeChange<T>> {
    let mut sigma = Vec::with_capacity(curve.n);
    for j in 0..curve.n {
        let u = unzip(&curve.curve(j))?;
        sigma.push(u.cum);
    }
    Ok(TimeChange { dt: curve.dt, n: curve.n, rows: curve.rows.clone(), sigma, sigma_ode: None, max_discrepancy: None })
}

/// `|F'(w0)|` for `F = g o (g^j)^{-1}` by the Cauchy integral on a circle of
/// radius `rho`, reflecting across the unit circle where needed.
fn relative_map_derivative<T: Real>(fwd: &[Slit<T>], zip: &[Slit<T>], w0: C<T>, rho: T, m: usize) -> T {
    let f = |w: C<T>| -> C<T> { compose_forward(fwd, compose_inverse(zip, w)) };
    let one = C::new(T::one(), T::zero());
    let mut acc = C::new(T::zero(), T::zero());
    for i in 0..m {
        let phi = T::TAU() * lit::<T>(i as f64) / lit::<T>(m as f64);
        let e = cis(phi);
        let w = w0 + e * rho;
        let fw = if w.norm() < T::one() { f(w) } else { one / f(one / w.conj()).conj() };
        acc = acc + fw * e.conj();
    }
    (acc / (rho * lit::<T>(m as f64))).norm()
}

/// Time change with the ODE cross-check `d sigma^j/dt = 1 / h_{t,j}'(xi^j)^2`.
///
/// `curve` must be a full trace of `driver` (every step). The derivative is
/// evaluated every `stride` steps and integrated by the trapezoid rule; the
/// refit value is returned with the ODE value attached. Fails with
/// [`Error::TimeChangeMismatch`] if the two differ by more than `tol`.
pub fn time_change<T: Real>(driver: &DriverPath<T>, curve: &MultiradialCurve<T>, stride: usize, tol: T) -> Result<TimeChange<T>> {
    let n = driver.n;
    let mut tc = refit_time_change(curve)?;
    if n == 1 {
        tc.sigma_ode = Some(tc.sigma.clone());
        tc.max_discrepancy = Some(T::zero());
        return Ok(tc);
    }
    let zips: Vec<Unzipped<T>> = (0..n).map(|j| unzip(&curve.curve(j))).collect::<Result<_>>()?;
    let all = driver.slits(driver.steps);
    let stride = stride.max(1);
    let sample_steps: Vec<usize> = (0..=driver.steps).step_by(stride).collect();
    let mut ode = vec![vec![T::zero(); curve.rows.len()]; n];
    let mut worst = T::zero();
    for j in 0..n {
        let mut rates = Vec::with_capacity(sample_steps.len());
        for &k in &sample_steps {
            if k == 0 {
                rates.push(T::one());
                continue;
            }
            let zs = &zips[j].slits[..k];
            let xi = zs[k - 1].theta;
            let w0 = cis(xi);
            // distance to the nearest other hull, seen from curve j's image
            let mut near = T::one();
            for i in 0..n {
                if i == j {
                    continue;
                }
                for &row in &[0usize, k] {
                    let p = curve.point(row, i);
                    let q = compose_forward(zs, if row == 0 { p * lit::<T>(1.0 - 1e-9) } else { p });
                    near = near.min((q - w0).norm());
                }
            }
            let rho = lit::<T>(0.3) * near;
            let hp = relative_map_derivative(&all[..k * slits_per_step(n)], zs, w0, rho, 32);
            rates.push(T::one() / (hp * hp));
        }
        // trapezoid over the sample grid, linear in between for output rows
        let mut acc = T::zero();
        let mut sig_at = vec![T::zero(); driver.steps + 1];
        for w in 1..sample_steps.len() {
            let (k0, k1) = (sample_steps[w - 1], sample_steps[w]);
            let h = driver.dt * lit::<T>((k1 - k0) as f64);
            let (r0, r1) = (rates[w - 1], rates[w]);
            for k in k0 + 1..=k1 {
                let f = lit::<T>((k - k0) as f64) / lit::<T>((k1 - k0) as f64);
                let rk = r0 + (r1 - r0) * f;
                sig_at[k] = acc + (r0 + rk) * h * f * lit(0.5);
            }
            acc += (r0 + r1) * h * lit(0.5);
        }
        let last = *sample_steps.last().unwrap();
        for k in last + 1..=driver.steps {
            sig_at[k] = acc + rates.last().copied().unwrap() * driver.dt * lit::<T>((k - last) as f64);
        }
        for (r, &k) in curve.rows.iter().enumerate() {
            ode[j][r] = sig_at[k];
            let d = (ode[j][r] - tc.sigma[j][r]).abs();
            if d > worst {
                worst = d;
            }
            if d > tol {
                return Err(Error::TimeChangeMismatch { step: k, refit: to_f64(tc.sigma[j][r]), ode: to_f64(ode[j][r]) });
            }
        }
    }
    tc.sigma_ode = Some(ode);
    tc.max_discrepancy = Some(worst);
    Ok(tc)
}

/// Lower bound forms on the time change checked by [`check_time_change_bounds`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SigmaLowerBound {
    /// `n t - log(n)/2`
    HalfLog,
    /// `log(1 + (e^{n t} - 1)/n)`, which is at least `n t - log n`; the
    /// bound obtained from the boundary-derivative estimate `e^{-cap/2}`.
    Integrated,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SigmaBoundReport {
    pub checked: usize,
    pub lower_violations: usize,
    pub upper_violations: usize,
    /// Smallest `sigma - lower` seen.
    pub worst_lower_margin: f64,
    /// Smallest `n t - sigma` seen at `t > 0`.
    pub worst_upper_margin: f64,
    pub worst_at: Option<(usize, usize)>,
}

impl SigmaBoundReport {
    pub fn new() -> Self {
        Self { checked: 0, lower_violations: 0, upper_violations: 0, worst_lower_margin: f64::INFINITY, worst_upper_margin: f64::INFINITY, worst_at: None }
    }

    pub fn holds(&self) -> bool {
        self.lower_violations == 0 && self.upper_violations == 0
    }

    pub fn merge(&mut self, o: &SigmaBoundReport) {
        self.checked += o.checked;
        self.lower_violations += o.lower_violations;
        self.upper_violations += o.upper_violations;
        if o.worst_lower_margin < self.worst_lower_margin {
            self.worst_lower_margin = o.worst_lower_margin;
            self.worst_at = o.worst_at;
        }
        self.worst_upper_margin = self.worst_upper_margin.min(o.worst_upper_margin);
    }
}

impl Default for SigmaBoundReport {
    fn default() -> Self {
        Self::new()
    }
}

pub fn sigma_lower_bound(n: usize, t: f64, form: SigmaLowerBound) -> f64 {
    let nf = n as f64;
    match form {
        SigmaLowerBound::HalfLog => nf * t - nf.ln() / 2.0,
        SigmaLowerBound::Integrated => (1.0 + (nf * t).exp_m1() / nf).ln(),
    }
}

/// Check `lower(t) - tol <= sigma^j(t) < n t + tol` on every row with `t <= t_max`.
pub fn check_time_change_bounds<T: Real>(tc: &TimeChange<T>, form: SigmaLowerBound, tol: f64, t_max: f64) -> SigmaBoundReport {
    let mut rep = SigmaBoundReport::new();
    let n = tc.n;
    for r in 0..tc.rows.len() {
        let t = to_f64(tc.time(r));
        if t > t_max + 1e-12 {
            break;
        }
        for j in 0..n {
            let s = to_f64(tc.sigma[j][r]);
            rep.checked += 1;
            let lower = sigma_lower_bound(n, t, form);
            let lm = s - lower;
            if lm < rep.worst_lower_margin {
                rep.worst_lower_margin = lm;
                rep.worst_at = Some((r, j));
            }
            if lm < -tol {
                rep.lower_violations += 1;
            }
            if n >= 2 && t > 0.0 {
                let um = n as f64 * t - s;
                rep.worst_upper_margin = rep.worst_upper_margin.min(um);
                if um < -tol {
                    rep.upper_violations += 1;
                }
            }
        }
    }
    rep
}

/// Independent curve sampled in its own capacity time.
#[derive(Clone, Debug)]
pub struct IndependentCurve<T> {
    /// `points[0]` on the unit circle.
    pub points: Vec<C<T>>,
    /// Own capacity at each point.
    pub cap: Vec<T>,
}

/// Outcome of reparameterising independent curves in common time.
#[derive(Clone, Debug)]
pub struct Projection<T> {
    pub curve: MultiradialCurve<T>,
    pub time_change: TimeChange<T>,
    /// Multiradial driver read off the joint unzipping.
    pub driver: DriverPath<T>,
    /// Number of common steps completed.
    pub steps: usize,
    /// Set when the curves came within `delta_min` of each other (or a curve
    /// ran out of samples) before the requested horizon.
    pub stopped_early: bool,
    pub min_distance: T,
}

/// Reparameterise independent curves so that each gains capacity `dt` per
/// step in the joint map, as in the multiradial Loewner equation.
///
/// Samples are absorbed by radial slits in the joint coordinates; a sample
/// whose slit would exceed the remaining step budget is absorbed partially,
/// which is exact for the radial-slit interpolation of the curve.
pub fn project_to_common_time<T: Real>(curves: &[IndependentCurve<T>], dt: T, steps: usize, delta_min: T) -> Result<Projection<T>> {
    let n = curves.len();
    if n == 0 {
        return Err(Error::InvalidConfig("no curves".into()));
    }
    let theta0: Vec<T> = curves.iter().map(|c| c.points[0].arg()).collect();
    let mut joint: Vec<Slit<T>> = Vec::new();
    let mut next = vec![1usize; n];
    let mut sigma_now = vec![T::zero(); n];
    let mut driver_now = theta0.clone();
    let mut tips: Vec<C<T>> = curves.iter().map(|c| c.points[0]).collect();
    let mut absorbed: Vec<Vec<C<T>>> = curves.iter().map(|c| vec![c.points[0]]).collect();
    let mut rows = vec![0usize];
    let mut pts = tips.clone();
    let mut sigma: Vec<Vec<T>> = vec![vec![T::zero()]; n];
    let mut drv = theta0.clone();
    let mut min_dist = T::infinity();
    let mut stopped = false;
    let mut done = 0usize;
    let mut cache: Vec<Option<(usize, usize, C<T>)>> = vec![None; n];
    let tiny = lit::<T>(1e-14);
    'outer: for k in 0..steps {
        for slot in 0..slits_per_step(n) {
            let (j, full) = step_slot(n, slot);
            let c = &curves[j];
            let mut budget = if full { dt } else { dt * lit(0.5) };
            while budget > tiny {
                if next[j] >= c.points.len() {
                    stopped = true;
                    break 'outer;
                }
                let p = c.points[next[j]];
                // forward image of the pending sample, extended by the slits added since
                let (from, z) = match cache[j] {
                    Some((idx, len, z)) if idx == next[j] => (len, z),
                    _ => (0, p),
                };
                let w = compose_forward(&joint[from..], z);
                cache[j] = Some((next[j], joint.len(), w));
                let r = w.norm();
                if !(r < T::one()) {
                    stopped = true;
                    break 'outer;
                }
                let a = driver_now[j] + wrap_pi(w.arg() - driver_now[j]);
                let cap = slit_capacity(r);
                let seg_left = c.cap[next[j]] - sigma_now[j];
                if cap <= budget {
                    joint.push(Slit::new(a, cap));
                    budget -= cap;
                    sigma_now[j] = c.cap[next[j]];
                    tips[j] = p;
                    absorbed[j].push(p);
                    next[j] += 1;
                } else {
                    let s = Slit::new(a, budget);
                    joint.push(s);
                    let frac = budget / cap;
                    sigma_now[j] += frac * seg_left;
                    tips[j] = compose_inverse(&joint[..joint.len() - 1], s.tip());
                    budget = T::zero();
                }
                driver_now[j] = a;
            }
            // separation from the other curves
            for i in 0..n {
                if i == j {
                    continue;
                }
                for q in &absorbed[i] {
                    let d = (*q - tips[j]).norm();
                    if d < min_dist {
                        min_dist = d;
                    }
                }
            }
            if min_dist < delta_min {
                stopped = true;
                break 'outer;
            }
        }
        done = k + 1;
        rows.push(done);
        pts.extend_from_slice(&tips);
        for j in 0..n {
            sigma[j].push(sigma_now[j]);
        }
        drv.extend_from_slice(&driver_now);
    }
    let curve = MultiradialCurve { dt, n, theta0, rows: rows.clone(), points: pts };
    let time_change = TimeChange { dt, n, rows, sigma, sigma_ode: None, max_discrepancy: None };
    let driver = DriverPath::from_flat(dt, n, drv, None);
    Ok(Projection { curve, time_change, driver, steps: done, stopped_early: stopped || done < steps, min_distance: min_dist })
}

/// Outcome of the boundary-derivative check for one boundary point.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DerivativeBoundReport {
    pub x: f64,
    pub h_prime: f64,
    pub cap: f64,
    pub hm_plus: f64,
    pub hm_minus: f64,
    pub lower: f64,
    pub upper: f64,
    pub exponent: f64,
    pub lower_holds: bool,
    pub upper_holds: bool,
}

/// Boundary derivative of the hull built from `slits` (applied in order) at
/// angle `x`, compared with `(1/4) sin(pi min(hm+, hm-))` from below and
/// `e^{-exponent cap}` from above. `bases` are the boundary points of the
/// hull; harmonic measures from 0 are image arc lengths over `2 pi`.
pub fn check_derivative_bounds<T: Real>(slits: &[Slit<T>], bases: &[T], x: T, exponent: f64) -> DerivativeBoundReport {
    let push = |mut y: T| -> (T, T) {
        let mut d = T::one();
        for s in slits {
            let (h, dd) = s.boundary(y);
            y = h;
            d *= dd;
        }
        (y, d)
    };
    let (hx, d) = push(x);
    let cap: f64 = slits.iter().map(|s| to_f64(s.cap)).sum();
    let (mut hm_p, mut hm_m) = (1.0, 1.0);
    if !bases.is_empty() && !slits.is_empty() {
        let eps = lit::<T>(1e-9);
        let rel: Vec<T> = bases.iter().map(|b| crate::config::rem_2pi(*b - x)).collect();
        let up = rel.iter().copied().fold(T::infinity(), T::min);
        let down = rel.iter().copied().fold(T::zero(), T::max);
        let (h_up, _) = push(x + up - eps);
        let (h_dn, _) = push(x + down - T::TAU() + eps);
        hm_p = to_f64(h_up - hx) / std::f64::consts::TAU;
        hm_m = to_f64(hx - h_dn) / std::f64::consts::TAU;
    }
    let hp = to_f64(d).abs();
    let lower = 0.25 * (std::f64::consts::PI * hm_p.min(hm_m)).sin();
    let upper = (-exponent * cap).exp();
    DerivativeBoundReport {
        x: to_f64(x),
        h_prime: hp,
        cap,
        hm_plus: hm_p,
        hm_minus: hm_m,
        lower,
        upper,
        exponent,
        lower_holds: lower <= hp * (1.0 + 1e-12),
        upper_holds: hp <= upper * (1.0 + 1e-12),
    }
}

/// Cotangent drift `2 sum cot` of the driver SDE, written into `out`.
pub fn dyson_drift<T: Real>(angles: &[T], out: &mut [T]) {
    cot_sums(angles, out);
    for v in out.iter_mut() {
        *v = *v * lit(2.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::equally_spaced;
    use crate::geometry::{slit_capacity, slit_radius};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn antipodal(dt: f64, steps: usize) -> DriverPath<f64> {
        DriverPath::constant(&[0.0, PI], dt, steps)
    }

    /// Exact single-curve capacity `sigma` for two antipodal slits reached
    /// at common time `t`: `e^sigma = (1 + e^{2t})/2`.
    fn antipodal_sigma(t: f64) -> f64 {
        ((1.0 + (2.0 * t).exp()) / 2.0).ln()
    }

    #[test]
    fn single_constant_driver_is_straight_slit() {
        let dt = 1e-4;
        let d = DriverPath::constant(&[0.0f64], dt, 5000);
        let c = trace(&d).unwrap();
        let tip = c.point(c.len() - 1, 0);
        assert!(tip.im.abs() < 1e-12);
        assert_abs_diff_eq!(tip.re, slit_radius(0.5), epsilon = 1e-4);
        for r in 0..c.len() {
            assert!(c.point(r, 0).norm() <= 1.0);
        }
    }

    #[test]
    fn merged_partial_traces_equal_full_trace() {
        let d = DriverPath::from_fn(3, 2e-3, 60, |t: f64, j| 2.0 * j as f64 + (3.0 * t).sin());
        let full = trace(&d).unwrap();
        let odd = trace_rows(&d, &(1..=60).step_by(2).collect::<Vec<_>>()).unwrap();
        let even = trace_rows(&d, &(0..=60).step_by(2).collect::<Vec<_>>()).unwrap();
        let m = even.merged(&odd).merged(&odd);
        assert_eq!(m.rows, full.rows);
        assert_eq!(m.points, full.points);
        let head = full.until(17);
        assert_eq!(head.rows, (0..=17).collect::<Vec<_>>());
        assert_eq!(head.points[..], full.points[..18 * 3]);
    }

    #[test]
    fn antipodal_trace_is_symmetric() {
        let d = antipodal(1e-3, 300);
        let c = trace(&d).unwrap();
        for r in 0..c.len() {
            assert!((c.point(r, 0) + c.point(r, 1)).norm() < 1e-6);
            assert!(c.point(r, 0).im.abs() < 1e-9);
        }
        // two antipodal slits: map z -> z^2 reduces to one slit of capacity 4t
        let t = d.horizon();
        let r = c.point(c.len() - 1, 0).re;
        assert_abs_diff_eq!(r * r, slit_radius(4.0 * t), epsilon = 1e-3);
    }

    #[test]
    fn refit_matches_exact_antipodal_capacity() {
        let d = antipodal(1e-3, 1000);
        let c = trace(&d).unwrap();
        let tc = refit_time_change(&c).unwrap();
        for r in (0..c.len()).step_by(100) {
            let t = c.time(r);
            assert_abs_diff_eq!(tc.sigma[0][r], antipodal_sigma(t), epsilon = 2e-3);
            assert_abs_diff_eq!(tc.sigma[0][r], tc.sigma[1][r], epsilon = 1e-6);
        }
    }

    #[test]
    fn single_curve_time_change_is_identity() {
        let d = DriverPath::from_fn(1, 1e-3, 400, |t, _| 0.7 * t);
        let c = trace(&d).unwrap();
        let tc = time_change(&d, &c, 10, 1e-9).unwrap();
        for r in 0..c.len() {
            assert_abs_diff_eq!(tc.sigma[0][r], c.time(r), epsilon = 1e-9);
        }
    }

    #[test]
    fn ode_cross_check_agrees_with_refit() {
        let d = antipodal(2e-3, 300);
        let c = trace(&d).unwrap();
        let tc = time_change(&d, &c, 20, 5e-2).unwrap();
        let ode = tc.sigma_ode.as_ref().unwrap();
        let last = c.len() - 1;
        assert_abs_diff_eq!(ode[0][last], antipodal_sigma(c.time(last)), epsilon = 2e-2);
    }

    #[test]
    fn interior_flow_fixes_zero_and_scales_derivative() {
        let d = DriverPath::from_fn(2, 1e-3, 500, |t, j| j as f64 * PI + 0.3 * t);
        let f = evolve_interior(&d, &[C::new(0.0, 0.0), C::new(0.1, 0.2)]);
        for k in 0..=d.steps {
            assert!(f.image(k, 0).norm() < 1e-15);
        }
        let t = d.horizon();
        assert_abs_diff_eq!(f.log_deriv0[d.steps], 2.0 * t, epsilon = 1e-12);
        let num = numerical_derivative_at_zero(&d, d.steps);
        assert!((num / (2.0 * t).exp() - 1.0).abs() < 1e-6, "{num}");
    }

    #[test]
    fn interior_ray_opposite_single_driver() {
        let d = DriverPath::constant(&[0.0f64], 1e-3, 300);
        let f = evolve_interior(&d, &[C::new(-0.5, 0.0)]);
        for k in 0..=d.steps {
            assert!(f.image(k, 0).im.abs() < 1e-12);
            assert!(f.image(k, 0).re < 0.0);
        }
    }

    #[test]
    fn boundary_flow_single_constant_driver() {
        let d = DriverPath::constant(&[0.0], 1e-3, 500);
        let grid: Vec<f64> = (0..20).map(|k| -PI + 2.0 * PI * (k as f64 + 0.5) / 20.0).chain([PI]).collect();
        let f = evolve_boundary(&d, &grid, FlowScheme::Slit).unwrap();
        let last = grid.len() - 1;
        for k in 0..=d.steps {
            assert_abs_diff_eq!(f.image(k, last), PI, epsilon = 1e-12);
            assert!(f.is_monotone(k));
            for m in 0..grid.len() {
                assert!(f.deriv(k, m) <= 1.0 + 1e-15);
                if k > 0 {
                    assert!(f.deriv(k, m) <= f.deriv(k - 1, m) + 1e-15);
                }
            }
        }
    }

    #[test]
    fn boundary_flow_rotation_by_pi() {
        let d = antipodal(2.5e-4, 1600);
        let grid: Vec<f64> = (0..10).map(|k| 0.15 + 0.28 * k as f64).collect();
        let shifted: Vec<f64> = grid.iter().map(|x| x + PI).collect();
        let a = evolve_boundary(&d, &grid, FlowScheme::Slit).unwrap();
        let b = evolve_boundary(&d, &shifted, FlowScheme::Slit).unwrap();
        for k in 0..=d.steps {
            for m in 0..grid.len() {
                assert_abs_diff_eq!(b.image(k, m), a.image(k, m) + PI, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn slit_and_rk4_boundary_flows_agree() {
        let d = DriverPath::from_fn(2, 1e-3, 300, |t, j| j as f64 * 2.5 + 0.2 * t);
        let grid = vec![1.0, 1.9, 3.5, 5.5];
        let a = evolve_boundary(&d, &grid, FlowScheme::Slit).unwrap();
        let b = evolve_boundary(&d, &grid, FlowScheme::Rk4).unwrap();
        for m in 0..grid.len() {
            assert_abs_diff_eq!(a.image(d.steps, m), b.image(d.steps, m), epsilon = 5e-3);
            assert_abs_diff_eq!(a.deriv(d.steps, m), b.deriv(d.steps, m), epsilon = 5e-3);
        }
    }

    #[test]
    fn derivative_bound_empty_hull() {
        let r = check_derivative_bounds::<f64>(&[], &[], 1.0, 1.0);
        assert_eq!(r.h_prime, 1.0);
        assert_eq!(r.cap, 0.0);
        assert!(r.lower_holds && r.upper_holds);
    }

    #[test]
    fn derivative_bound_single_slit_antipode() {
        // antipodal point: h' = e^{-cap/2} exactly
        let slits = vec![Slit::new(0.0, 0.8)];
        let r = check_derivative_bounds(&slits, &[0.0], PI, 0.5);
        assert_abs_diff_eq!(r.h_prime, (-0.4f64).exp(), epsilon = 1e-12);
        assert!(r.lower_holds && r.lower < r.h_prime);
        assert!(r.upper_holds);
        let strict = check_derivative_bounds(&slits, &[0.0], PI, 1.0);
        assert!(!strict.upper_holds);
        // the slit's two sides take up the image arc |h| < 2 acos(e^{-cap/2})
        let side = 2.0 * (-0.4f64).exp().acos();
        assert_abs_diff_eq!(r.hm_plus, (PI - side) / (2.0 * PI), epsilon = 1e-6);
        assert_abs_diff_eq!(r.hm_minus, r.hm_plus, epsilon = 1e-6);
    }

    #[test]
    fn trace_refinement_converges() {
        let f = |t: f64, j: usize| j as f64 * 2.0 + 0.8 * (3.0 * t).sin();
        let tmax = 0.4;
        let mut prev: Option<MultiradialCurve<f64>> = None;
        let mut errs = vec![];
        for &steps in &[100usize, 200, 400, 800] {
            let d = DriverPath::from_fn(2, tmax / steps as f64, steps, f);
            let rows: Vec<usize> = (0..=10).map(|i| i * steps / 10).collect();
            let c = trace_rows(&d, &rows).unwrap();
            if let Some(p) = &prev {
                let e = (0..c.points.len()).map(|i| (c.points[i] - p.points[i]).norm()).fold(0.0, f64::max);
                errs.push(e);
            }
            prev = Some(c);
        }
        for w in errs.windows(2) {
            assert!(w[0] / w[1] >= 1.3, "{errs:?}");
        }
    }

    #[test]
    fn unzip_recovers_traced_single_driver() {
        let d = DriverPath::from_fn(1, 1e-3, 300, |t, _| 0.5 * t);
        let c = trace(&d).unwrap();
        let u = unzip(&c.curve(0)).unwrap();
        for k in 1..=d.steps {
            assert_abs_diff_eq!(u.driver[k], d.state(k)[0], epsilon = 1e-8);
            assert_abs_diff_eq!(u.cum[k], d.time(k), epsilon = 1e-9);
        }
    }

    #[test]
    fn unzip_rejects_points_outside() {
        let pts = vec![C::new(1.0, 0.0), C::new(0.9, 0.0), C::new(1.2, 0.0)];
        assert!(matches!(unzip(&pts), Err(Error::NotSimple { index: 2, .. })));
    }

    #[test]
    fn projection_of_single_curve_is_identity() {
        let d = DriverPath::from_fn(1, 1e-3, 200, |t, _| 0.3 * t);
        let c = trace(&d).unwrap();
        let ic = IndependentCurve { points: c.curve(0), cap: (0..=200).map(|k| d.time(k)).collect() };
        let p = project_to_common_time(&[ic], 1e-3, 150, 0.0).unwrap();
        assert_eq!(p.steps, 150);
        for r in 0..=150 {
            assert_abs_diff_eq!(p.time_change.sigma[0][r], d.time(r), epsilon = 1e-9);
            assert!((p.curve.point(r, 0) - c.point(r, 0)).norm() < 1e-9);
        }
    }

    #[test]
    fn projection_of_antipodal_segments() {
        let ds = 1e-3;
        let one = DriverPath::constant(&[0.0], ds, 1500);
        let c = trace(&one).unwrap();
        let caps: Vec<f64> = (0..=1500).map(|k| one.time(k)).collect();
        let a = IndependentCurve { points: c.curve(0), cap: caps.clone() };
        let b = IndependentCurve { points: c.curve(0).iter().map(|z| -z).collect(), cap: caps };
        let p = project_to_common_time(&[a, b], 1e-3, 600, 1e-6).unwrap();
        assert_eq!(p.steps, 600);
        for r in (0..=600).step_by(60) {
            let t = r as f64 * 1e-3;
            assert_abs_diff_eq!(p.time_change.sigma[0][r], p.time_change.sigma[1][r], epsilon = 1e-6);
            assert_abs_diff_eq!(p.time_change.sigma[0][r], antipodal_sigma(t), epsilon = 3e-3);
        }
    }

    #[test]
    fn validate_flags_collision_and_jumps() {
        let d = DriverPath::from_states(0.1, &[vec![0.0, 1.0], vec![0.0, 1.0], vec![0.5, 0.5]], None).unwrap();
        assert!(matches!(d.validate(10.0), Err(Error::DriverCollision { step: 2, .. })));
        let e = DriverPath::from_states(0.1, &[vec![0.0, 3.0], vec![1.5, 3.0]], None).unwrap();
        assert!(matches!(e.validate(1.0), Err(Error::IncrementTooLarge { .. })));
        let (c, coll) = trace_partial(&d, &[0, 1, 2]);
        assert_eq!(coll, Some(2));
        assert_eq!(c.rows, vec![0, 1]);
    }

    #[test]
    fn equally_spaced_three_time_change() {
        let d = DriverPath::constant(equally_spaced(3, 0.0).angles(), 2e-3, 300);
        let c = trace(&d).unwrap();
        let tc = refit_time_change(&c).unwrap();
        let rep = check_time_change_bounds(&tc, SigmaLowerBound::Integrated, 1e-2, 1.0);
        assert!(rep.holds(), "{rep:?}");
        // z -> z^3 turns the three slits into one slit of capacity 9t
        for r in (30..c.len()).step_by(30) {
            let tip = slit_radius::<f64>(9.0 * c.time(r)).cbrt();
            for j in 0..3 {
                assert_abs_diff_eq!(tc.sigma[j][r], slit_capacity(tip), epsilon = 1e-2);
            }
        }
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    /// Equally spaced start plus a small smooth wiggle per curve.
    fn wiggle(n: usize, amp: f64, freq: f64, phase: f64, dt: f64, steps: usize) -> DriverPath<f64> {
        DriverPath::from_fn(n, dt, steps, move |t: f64, j| {
            std::f64::consts::TAU * j as f64 / n as f64 + amp * (freq * t + phase * (j + 1) as f64).sin()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn boundary_flow_is_monotone_and_contracting(n in 1usize..5, amp in 0.0f64..0.3, freq in 0.0f64..6.0, phase in 0.0f64..6.3) {
            let d = wiggle(n, amp, freq, phase, 5e-3, 40);
            let grid: Vec<f64> = (0..64).map(|m| 0.3 + std::f64::consts::TAU * m as f64 / 64.0).collect();
            let f = evolve_boundary(&d, &grid, FlowScheme::Slit).unwrap();
            for k in 0..=d.steps {
                prop_assert!(f.is_monotone(k));
                for m in (0..grid.len()).filter(|&m| f.swallowed[m].map_or(true, |s| s > k)) {
                    let h = f.deriv(k, m);
                    prop_assert!(h > 0.0 && h <= 1.0 + 1e-12);
                }
            }
        }

        #[test]
        fn traced_points_start_on_circle_and_stay_inside(n in 1usize..5, amp in 0.0f64..0.3, freq in 0.0f64..6.0, phase in 0.0f64..6.3) {
            let d = wiggle(n, amp, freq, phase, 5e-3, 30);
            let c = trace(&d).unwrap();
            for j in 0..n {
                prop_assert!((c.point(0, j) - C::from_polar(1.0, d.state(0)[j])).norm() < 1e-12);
                for r in 1..c.len() {
                    prop_assert!(c.point(r, j).norm() < 1.0);
                }
            }
        }
    }
}
