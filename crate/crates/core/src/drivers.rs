//! Driving functions: the interacting Dyson-type SDE, its noiseless limit,
//! the gradient flow of `U`, and single Brownian drivers.

use crate::config::{cot_sums, min_gap_of, TorusConfig};
use crate::loewner::DriverPath;
use crate::rng::{fill_normals, SeededRng};
use crate::{lit, to_f64, Error, Real, Result};

/// Maximum number of step halvings the collision guard may use.
pub const MAX_HALVINGS: u32 = 8;

/// Heap slots reserved per step for the bridge refinement tree.
const NODES_PER_STEP: u64 = 1 << (MAX_HALVINGS + 1);

fn steps_for<T: Real>(horizon: T, dt: T) -> Result<usize> {
    if !(dt > T::zero()) || !(horizon >= T::zero()) {
        return Err(Error::InvalidConfig("need dt > 0 and T >= 0".into()));
    }
    Ok(to_f64(horizon / dt).round() as usize)
}

/// RK4 for `d theta/dt = speed * sum cot`, substepped so that the step stays
/// well inside the stability region of the repulsive drift.
fn cot_flow<T: Real>(theta0: &TorusConfig<T>, speed: T, horizon: T, dt: T) -> Result<DriverPath<T>> {
    let steps = steps_for(horizon, dt)?;
    let n = theta0.n();
    let mut x = theta0.angles().to_vec();
    let mut flat = Vec::with_capacity((steps + 1) * n);
    flat.extend_from_slice(&x);
    let (mut k1, mut k2, mut k3, mut k4) = (vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n]);
    let mut tmp = vec![T::zero(); n];
    let half = lit::<T>(0.5);
    let six = lit::<T>(6.0);
    for _ in 0..steps {
        let g = min_gap_of(&x);
        let stiff = speed * lit::<T>(8.0) / (g * g);
        let m = to_f64((dt * stiff / half).ceil()).max(1.0) as usize;
        let h = dt / lit::<T>(m as f64);
        for _ in 0..m {
            cot_sums(&x, &mut k1);
            for i in 0..n {
                tmp[i] = x[i] + k1[i] * speed * h * half;
            }
            cot_sums(&tmp, &mut k2);
            for i in 0..n {
                tmp[i] = x[i] + k2[i] * speed * h * half;
            }
            cot_sums(&tmp, &mut k3);
            for i in 0..n {
                tmp[i] = x[i] + k3[i] * speed * h;
            }
            cot_sums(&tmp, &mut k4);
            for i in 0..n {
                x[i] += speed * h * (k1[i] + (k2[i] + k3[i]) * lit(2.0) + k4[i]) / six;
            }
        }
        flat.extend_from_slice(&x);
    }
    Ok(DriverPath::from_flat(dt, n, flat, None))
}

/// Noiseless driver `d theta^j/ds = 2 sum_{i != j} cot((theta^j - theta^i)/2)`.
pub fn zero_energy_driver<T: Real>(theta0: &TorusConfig<T>, horizon: T, dt: T) -> Result<DriverPath<T>> {
    let mut p = cot_flow(theta0, lit(2.0), horizon, dt)?;
    p.kappa_tag = Some(T::zero());
    Ok(p)
}

/// Gradient flow `d theta/dt = -grad U`.
pub fn gradient_flow_u<T: Real>(theta0: &TorusConfig<T>, horizon: T, dt: T) -> Result<DriverPath<T>> {
    cot_flow(theta0, T::one(), horizon, dt)
}

/// Euler–Maruyama for `d theta^j = 2 sum cot((theta^j - theta^i)/2) dt + sqrt(kappa) dB^j`.
///
/// A step is rejected when some gap drops below `max(1e-9, gap_before/10)`;
/// it is then split in two with the Brownian bridge, recursively, at most
/// [`MAX_HALVINGS`] times. All Gaussian draws are addressed by
/// `(step, tree node)`, so the path only depends on the key. `kappa = 0`
/// delegates to [`zero_energy_driver`].
pub fn simulate_dyson<T: Real>(theta0: &TorusConfig<T>, kappa: T, horizon: T, dt: T, rng: &SeededRng) -> Result<DriverPath<T>> {
    if kappa < T::zero() || kappa > lit(4.0) {
        return Err(Error::InvalidConfig(format!("kappa {kappa} outside [0, 4]")));
    }
    if kappa == T::zero() {
        return zero_energy_driver(theta0, horizon, dt);
    }
    let steps = steps_for(horizon, dt)?;
    let n = theta0.n();
    let mut x = theta0.angles().to_vec();
    let mut drift = vec![T::zero(); n];
    cot_sums(&x, &mut drift);
    let dmax = drift.iter().fold(T::zero(), |a, b| a.max(b.abs())) * lit(2.0);
    if dmax * dt >= min_gap_of(&x) / lit(4.0) {
        return Err(Error::InvalidConfig(format!("dt {dt} too large for the initial gaps")));
    }
    let sk = kappa.sqrt();
    let mut flat = Vec::with_capacity((steps + 1) * n);
    flat.extend_from_slice(&x);
    let mut z = vec![0.0f64; n];
    let mut dw = vec![T::zero(); n];
    let sdt = dt.sqrt();
    for k in 0..steps {
        let mut r = rng.slot(k as u64 * NODES_PER_STEP);
        fill_normals(&mut r, &mut z);
        for i in 0..n {
            dw[i] = sdt * lit::<T>(z[i]);
        }
        x = guarded_step(&x, dt, &dw, sk, rng, k, 1, 0)?;
        flat.extend_from_slice(&x);
    }
    Ok(DriverPath::from_flat(dt, n, flat, Some(kappa)))
}

#[allow(clippy::too_many_arguments)]
fn guarded_step<T: Real>(x: &[T], dt: T, dw: &[T], sk: T, rng: &SeededRng, step: usize, node: u64, depth: u32) -> Result<Vec<T>> {
    let n = x.len();
    let mut drift = vec![T::zero(); n];
    cot_sums(x, &mut drift);
    let y: Vec<T> = (0..n).map(|i| x[i] + drift[i] * lit(2.0) * dt + sk * dw[i]).collect();
    let before = min_gap_of(x);
    let after = min_gap_of(&y);
    let floor = lit::<T>(1e-9).max(before * lit(0.1));
    if after >= floor && after.is_finite() {
        return Ok(y);
    }
    if depth >= MAX_HALVINGS {
        return Err(Error::GuardAbort { step, retries: depth, gap: to_f64(after) });
    }
    let mut z = vec![0.0f64; n];
    // slot 0 of the step holds the increment, slot `node` the bridge midpoint
    let mut r = rng.slot(step as u64 * NODES_PER_STEP + node);
    fill_normals(&mut r, &mut z);
    let h = dt * lit(0.5);
    let s = dt.sqrt() * lit(0.5);
    let first: Vec<T> = (0..n).map(|i| dw[i] * lit(0.5) + s * lit::<T>(z[i])).collect();
    let second: Vec<T> = (0..n).map(|i| dw[i] - first[i]).collect();
    let mid = guarded_step(x, h, &first, sk, rng, step, 2 * node, depth + 1)?;
    guarded_step(&mid, h, &second, sk, rng, step, 2 * node + 1, depth + 1)
}

/// `theta_s = theta0 + sqrt(kappa) W_s` on a grid of `round(S/dt)` steps.
pub fn single_radial_driver<T: Real>(theta0: T, kappa: T, horizon: T, dt: T, rng: &SeededRng) -> Result<DriverPath<T>> {
    if kappa < T::zero() {
        return Err(Error::InvalidConfig("kappa must be non-negative".into()));
    }
    let steps = steps_for(horizon, dt)?;
    let mut z = vec![0.0f64; steps];
    let mut r = rng.block(0);
    fill_normals(&mut r, &mut z);
    let sd = (kappa * dt).sqrt();
    let mut flat = Vec::with_capacity(steps + 1);
    let mut x = theta0;
    flat.push(x);
    for zi in z {
        x += sd * lit::<T>(zi);
        flat.push(x);
    }
    Ok(DriverPath::from_flat(dt, 1, flat, Some(kappa)))
}


#[cfg(test)]
mod props {
    use super::*;
    use crate::config::{log_partition_u_raw, TorusConfig};
    use proptest::prelude::*;

    fn start(n: usize, w: &[f64], off: f64) -> TorusConfig<f64> {
        let s: f64 = w[..n].iter().sum();
        let mut cur = off;
        let a = w[..n].iter().map(|x| {
            let v = cur;
            cur += std::f64::consts::TAU * x / s;
            v
        }).collect();
        TorusConfig::from_raw(a)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn dyson_is_rotation_equivariant(n in 2usize..5, w in prop::collection::vec(0.3f64..1.0, 4), c in -3.0f64..3.0, seed in 0u64..1000) {
            let th = start(n, &w, 0.0);
            let rng = SeededRng::new(seed, 7);
            let a = simulate_dyson(&th, 2.0, 0.1, 1e-3, &rng).unwrap();
            let b = simulate_dyson(&th.rotated(c), 2.0, 0.1, 1e-3, &rng).unwrap();
            prop_assert_eq!(a.steps, b.steps);
            for (x, y) in a.flat().iter().zip(b.flat()) {
                prop_assert!((y - x - c).abs() < 1e-9);
            }
        }

        #[test]
        fn dyson_at_kappa_zero_is_zero_energy(n in 2usize..5, w in prop::collection::vec(0.3f64..1.0, 4)) {
            let th = start(n, &w, 0.4);
            let a = simulate_dyson(&th, 0.0, 0.2, 1e-3, &SeededRng::new(1, 0)).unwrap();
            let b = zero_energy_driver(&th, 0.2, 1e-3).unwrap();
            prop_assert_eq!(a.flat(), b.flat());
        }

        #[test]
        fn gradient_flow_never_increases_u(n in 2usize..6, w in prop::collection::vec(0.05f64..1.0, 5)) {
            let p = gradient_flow_u(&start(n, &w, 1.0), 2.0, 1e-2).unwrap();
            let u: Vec<f64> = (0..=p.steps).map(|k| log_partition_u_raw(p.state(k)).to_float()).collect();
            for k in 1..u.len() {
                prop_assert!(u[k] <= u[k - 1] + 1e-12);
            }
        }
    }
}
