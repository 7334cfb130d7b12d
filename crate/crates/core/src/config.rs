//! Ordered angle configurations on the circle and the log-sine potential.

use serde::{Deserialize, Serialize};

use crate::{lit, Error, Extended, Real, Result};

/// Gap below which two angles count as collided.
pub const COLLISION_GAP: f64 = 1e-12;

/// `n` angles read cyclically counterclockwise.
///
/// Angles are stored as given (unwrapped), so a path may wind around the
/// circle. Validity only requires that the labels go around exactly once.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorusConfig<T> {
    angles: Vec<T>,
}

/// Cyclic gaps `theta^{j+1} - theta^j` reduced to `[0, 2pi)`, with the last
/// gap closing the circle. Returns `None` if the labels wind more than once.
pub fn cyclic_gaps<T: Real>(angles: &[T]) -> Option<Vec<T>> {
    let n = angles.len();
    let two_pi = T::TAU();
    if n == 1 {
        return Some(vec![two_pi]);
    }
    let mut gaps = Vec::with_capacity(n);
    let mut total = T::zero();
    for j in 0..n {
        let next = angles[(j + 1) % n];
        let g = rem_2pi(next - angles[j]);
        total += g;
        gaps.push(g);
    }
    // A valid labeling winds once; anything else sums to a larger multiple.
    if (total - two_pi).abs() > lit::<T>(1e-6) * two_pi {
        return None;
    }
    Some(gaps)
}

/// Representative of `x` in `[0, 2pi)`.
pub fn rem_2pi<T: Real>(x: T) -> T {
    let two_pi = T::TAU();
    let r = x - (x / two_pi).floor() * two_pi;
    if r >= two_pi {
        r - two_pi
    } else {
        r
    }
}

/// Representative of `x` in `(-pi, pi]`.
pub fn wrap_pi<T: Real>(x: T) -> T {
    let pi = T::PI();
    let r = rem_2pi(x + pi) - pi;
    if r <= -pi {
        r + T::TAU()
    } else {
        r
    }
}

pub fn min_gap_of<T: Real>(angles: &[T]) -> T {
    match cyclic_gaps(angles) {
        Some(g) => g.into_iter().fold(T::infinity(), T::min),
        None => T::zero(),
    }
}

impl<T: Real> TorusConfig<T> {
    pub fn new(angles: Vec<T>) -> Result<Self> {
        if angles.is_empty() {
            return Err(Error::InvalidConfig("need at least one angle".into()));
        }
        if angles.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidConfig("non-finite angle".into()));
        }
        let gaps = cyclic_gaps(&angles)
            .ok_or_else(|| Error::InvalidConfig("angles are not in cyclic order".into()))?;
        if gaps.iter().any(|g| *g <= T::zero()) {
            return Err(Error::InvalidConfig("repeated angle".into()));
        }
        Ok(Self { angles })
    }

    /// No validation; for internal hot loops that already know the ordering.
    pub fn from_raw(angles: Vec<T>) -> Self {
        Self { angles }
    }

    pub fn n(&self) -> usize {
        self.angles.len()
    }

    pub fn angles(&self) -> &[T] {
        &self.angles
    }

    pub fn into_angles(self) -> Vec<T> {
        self.angles
    }

    pub fn gaps(&self) -> Vec<T> {
        cyclic_gaps(&self.angles).unwrap_or_else(|| vec![T::zero(); self.n()])
    }

    pub fn min_gap(&self) -> T {
        min_gap_of(&self.angles)
    }

    pub fn is_collided(&self) -> bool {
        self.min_gap() < lit(COLLISION_GAP)
    }

    pub fn rotated(&self, c: T) -> Self {
        Self { angles: self.angles.iter().map(|a| *a + c).collect() }
    }

    /// Relabel `j -> j+1`, keeping the same point set.
    pub fn relabeled(&self) -> Self {
        let mut a: Vec<T> = self.angles[1..].to_vec();
        a.push(self.angles[0] + T::TAU());
        Self { angles: a }
    }

    /// Canonical representative: labels rotated so the smallest reduced angle
    /// comes first, first angle in `[0, 2pi)`, ascending within one turn.
    pub fn canonical(&self) -> Vec<T> {
        let n = self.n();
        let reduced: Vec<T> = self.angles.iter().map(|a| rem_2pi(*a)).collect();
        let start = (0..n)
            .min_by(|&i, &j| reduced[i].partial_cmp(&reduced[j]).unwrap())
            .unwrap_or(0);
        let gaps = self.gaps();
        let mut out = Vec::with_capacity(n);
        let mut cur = reduced[start];
        for k in 0..n {
            out.push(cur);
            cur += gaps[(start + k) % n];
        }
        out
    }

    pub fn approx_eq(&self, other: &Self, tol: T) -> bool {
        self.n() == other.n()
            && self
                .canonical()
                .iter()
                .zip(other.canonical())
                .all(|(a, b)| wrap_pi(*a - b).abs() <= tol)
    }
}

/// `U = -2 sum_{i<j} log sin((a^j - a^i)/2)`, evaluated on the cyclic
/// representative. Collided input gives `PosInf`.
pub fn log_partition_u<T: Real>(theta: &TorusConfig<T>) -> Extended<T> {
    log_partition_u_raw(theta.angles())
}

pub fn log_partition_u_raw<T: Real>(angles: &[T]) -> Extended<T> {
    let n = angles.len();
    let gaps = match cyclic_gaps(angles) {
        Some(g) => g,
        None => return Extended::PosInf,
    };
    if gaps.iter().any(|g| *g < lit(COLLISION_GAP)) {
        return Extended::PosInf;
    }
    let half = lit::<T>(0.5);
    let mut u = T::zero();
    for i in 0..n {
        let mut d = T::zero();
        for j in (i + 1)..n {
            d += gaps[j - 1];
            u -= (d * half).sin().ln();
        }
    }
    Extended::Finite(u * lit(2.0))
}

/// `Z^kappa = exp(-U/kappa)`; zero on collision.
pub fn partition_z<T: Real>(theta: &TorusConfig<T>, kappa: T) -> T {
    match log_partition_u(theta) {
        Extended::Finite(u) => (-u / kappa).exp(),
        _ => T::zero(),
    }
}

/// `(grad U)_j = -sum_{i != j} cot((theta^j - theta^i)/2)`.
pub fn grad_u<T: Real>(theta: &TorusConfig<T>) -> Result<Vec<T>> {
    if theta.is_collided() {
        return Err(Error::Collision { min_gap: crate::to_f64(theta.min_gap()) });
    }
    let mut g = vec![T::zero(); theta.n()];
    cot_sums(theta.angles(), &mut g);
    for v in g.iter_mut() {
        *v = -*v;
    }
    Ok(g)
}

/// `out_j = sum_{i != j} cot((a^j - a^i)/2)`. Antisymmetric pairs are
/// accumulated once so the components sum to zero up to rounding.
pub fn cot_sums<T: Real>(angles: &[T], out: &mut [T]) {
    let n = angles.len();
    let half = lit::<T>(0.5);
    for v in out.iter_mut() {
        *v = T::zero();
    }
    for j in 0..n {
        for i in (j + 1)..n {
            let c = T::one() / ((angles[j] - angles[i]) * half).tan();
            out[j] += c;
            out[i] -= c;
        }
    }
}

/// Closed-form infimum `-2 sum_{i<j} log sin(pi (j-i)/n)`.
pub fn u_min<T: Real>(n: usize) -> T {
    let pi = T::PI();
    let nn = lit::<T>(n as f64);
    let mut u = T::zero();
    for i in 0..n {
        for j in (i + 1)..n {
            u -= (pi * lit::<T>((j - i) as f64) / nn).sin().ln();
        }
    }
    u * lit(2.0)
}

pub fn equally_spaced<T: Real>(n: usize, offset: T) -> TorusConfig<T> {
    let step = T::TAU() / lit::<T>(n as f64);
    TorusConfig::from_raw((0..n).map(|j| offset + step * lit::<T>(j as f64)).collect())
}

/// Largest deviation of any cyclic gap from `2pi/n`.
pub fn spacing_defect<T: Real>(theta: &TorusConfig<T>) -> T {
    let target = T::TAU() / lit::<T>(theta.n() as f64);
    theta.gaps().into_iter().map(|g| (g - target).abs()).fold(T::zero(), T::max)
}
