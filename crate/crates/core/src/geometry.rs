//! Radial slit maps and planar polyline queries.
//!
//! The slit map with base angle `theta` and capacity `s` sends the unit disk
//! minus the radial segment `[r e^{i theta}, e^{i theta}]` onto the disk, fixes
//! 0 and has derivative `e^s` there. In the Cayley variable `q = (1-z)/(1+z)`
//! it reads `q' = sqrt(1 - e^s (1 - q^2))`, so both directions are closed form.

use num_complex::Complex;

use crate::{lit, Real};

pub type C<T> = Complex<T>;

#[inline]
pub fn cis<T: Real>(a: T) -> C<T> {
    C::new(a.cos(), a.sin())
}

/// Tip radius of the slit with capacity `s`.
#[inline]
pub fn slit_radius<T: Real>(s: T) -> T {
    let q = (-(-s).exp_m1()).sqrt();
    (T::one() - q) / (T::one() + q)
}

/// Capacity of the radial slit from the circle down to radius `r`.
#[inline]
pub fn slit_capacity<T: Real>(r: T) -> T {
    lit::<T>(2.0) * r.ln_1p() - lit::<T>(4.0).ln() - r.ln()
}

/// Principal square root, algebraic form (no trigonometry).
#[inline]
pub fn csqrt<T: Real>(z: C<T>) -> C<T> {
    let (x, y) = (z.re, z.im);
    if x == T::zero() && y == T::zero() {
        return C::new(T::zero(), y);
    }
    let half = lit::<T>(0.5);
    let m = (x * x + y * y).sqrt();
    if x >= T::zero() {
        let t = ((m + x) * half).sqrt();
        C::new(t, y * half / t)
    } else {
        let t = ((m - x) * half).sqrt();
        C::new(y.abs() * half / t, t.copysign(y))
    }
}

/// Forward slit map applied to an interior point.
#[inline]
pub fn slit_forward<T: Real>(z: C<T>, rot: C<T>, es: T) -> C<T> {
    let one = C::new(T::one(), T::zero());
    let zr = z * rot.conj();
    let d = one + zr;
    let k = zr * lit::<T>(4.0) / (d * d);
    let q = csqrt(one - k * es);
    (one - q) / (one + q) * rot
}

/// Inverse slit map; `ies = e^{-s}`. Same formula as [`slit_forward`],
/// written out in real arithmetic since tracing spends its time here.
#[inline]
pub fn slit_inverse<T: Real>(w: C<T>, rot: C<T>, ies: T) -> C<T> {
    let one = T::one();
    let two = lit::<T>(2.0);
    // wr = w conj(rot)
    let x = w.re * rot.re + w.im * rot.im;
    let y = w.im * rot.re - w.re * rot.im;
    // d^2 with d = 1 + wr
    let dx = one + x;
    let d2r = dx * dx - y * y;
    let d2i = two * dx * y;
    // a = 1 - 4 ies wr / d^2
    let f = lit::<T>(4.0) * ies / (d2r * d2r + d2i * d2i);
    let ar = one - f * (x * d2r + y * d2i);
    let ai = -f * (y * d2r - x * d2i);
    let q = csqrt(C::new(ar, ai));
    // (1 - q) / (1 + q) = (1 - |q|^2 - 2i q.im) / |1 + q|^2
    let px = one + q.re;
    let den = px * px + q.im * q.im;
    let vr = (one - q.re * q.re - q.im * q.im) / den;
    let vi = -two * q.im / den;
    C::new(vr * rot.re - vi * rot.im, vr * rot.im + vi * rot.re)
}

/// A slit as stored in a composition: base angle, capacity and cached
/// trigonometric data.
#[derive(Clone, Copy, Debug)]
pub struct Slit<T> {
    pub theta: T,
    pub cap: T,
    rot: C<T>,
    es: T,
    ies: T,
}

impl<T: Real> Slit<T> {
    pub fn new(theta: T, cap: T) -> Self {
        Self { theta, cap, rot: cis(theta), es: cap.exp(), ies: (-cap).exp() }
    }

    #[inline]
    pub fn forward(&self, z: C<T>) -> C<T> {
        slit_forward(z, self.rot, self.es)
    }

    #[inline]
    pub fn inverse(&self, w: C<T>) -> C<T> {
        slit_inverse(w, self.rot, self.ies)
    }

    pub fn tip(&self) -> C<T> {
        self.rot * slit_radius(self.cap)
    }

    /// Boundary action `x -> h(x)` with derivative. Angles stay unwrapped:
    /// the returned angle differs from `x` by less than `pi`.
    #[inline]
    pub fn boundary(&self, x: T) -> (T, T) {
        let half = lit::<T>(0.5);
        let y = crate::config::wrap_pi(x - self.theta);
        let a = (-self.cap * half).exp();
        let c = (a * (y * half).cos()).max(-T::one()).min(T::one());
        let hr = lit::<T>(2.0) * c.acos() * y.signum();
        let d = if y == T::zero() { T::zero() } else { a * (y * half).sin() / (hr * half).sin() };
        (x + (hr - y), d)
    }

    /// Preimage of a boundary angle, or `None` when it lies on the slit.
    pub fn boundary_inverse(&self, h: T) -> Option<T> {
        let half = lit::<T>(0.5);
        let y = crate::config::wrap_pi(h - self.theta);
        let c = (self.cap * half).exp() * (y * half).cos();
        if c > T::one() {
            return None;
        }
        let xr = lit::<T>(2.0) * c.max(-T::one()).acos() * y.signum();
        Some(h + (xr - y))
    }
}

/// Apply `slits` in order (the first slit acts first).
#[inline]
pub fn compose_forward<T: Real>(slits: &[Slit<T>], mut z: C<T>) -> C<T> {
    for s in slits {
        z = s.forward(z);
    }
    z
}

/// Inverse of [`compose_forward`].
#[inline]
pub fn compose_inverse<T: Real>(slits: &[Slit<T>], mut w: C<T>) -> C<T> {
    for s in slits.iter().rev() {
        w = s.inverse(w);
    }
    w
}

/// Distance from `p` to the segment `[a, b]`.
#[inline]
pub fn point_segment_distance(p: C<f64>, a: C<f64>, b: C<f64>) -> f64 {
    let ab = b - a;
    let l2 = ab.norm_sqr();
    let t = if l2 > 0.0 { ((p - a).re * ab.re + (p - a).im * ab.im) / l2 } else { 0.0 };
    let t = t.clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Whether segments `[a,b]` and `[c,d]` cross.
pub fn segments_cross(a: C<f64>, b: C<f64>, c: C<f64>, d: C<f64>) -> bool {
    fn orient(p: C<f64>, q: C<f64>, r: C<f64>) -> f64 {
        (q.re - p.re) * (r.im - p.im) - (q.im - p.im) * (r.re - p.re)
    }
    let o1 = orient(a, b, c);
    let o2 = orient(a, b, d);
    let o3 = orient(c, d, a);
    let o4 = orient(c, d, b);
    o1 * o2 <= 0.0 && o3 * o4 <= 0.0 && (o1 != 0.0 || o2 != 0.0)
}

/// Minimum distance between two polylines.
pub fn polyline_distance(a: &[C<f64>], b: &[C<f64>]) -> f64 {
    let ga = SegmentGrid::new(&[a.to_vec()], 1.0 / 64.0);
    let mut best = f64::INFINITY;
    for w in b.windows(2) {
        best = best.min(ga.segment_distance(w[0], w[1]));
    }
    if b.len() == 1 {
        best = best.min(ga.distance(b[0], 0, f64::INFINITY));
    }
    best
}

/// Uniform bucket grid over `[-1,1]^2` indexing polyline segments, with one
/// bucket list per polyline.
#[derive(Clone, Debug)]
pub struct SegmentGrid {
    cell: f64,
    dim: usize,
    curves: Vec<Vec<C<f64>>>,
    buckets: Vec<Vec<Vec<u32>>>,
    bbox: Vec<[f64; 4]>,
}

impl SegmentGrid {
    pub fn new(curves: &[Vec<C<f64>>], cell: f64) -> Self {
        let dim = (2.0 / cell).ceil() as usize;
        let mut buckets = Vec::with_capacity(curves.len());
        let mut bbox = Vec::with_capacity(curves.len());
        for pts in curves {
            let mut b: Vec<Vec<u32>> = vec![Vec::new(); dim * dim];
            let mut bb = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
            for p in pts {
                bb[0] = bb[0].min(p.re);
                bb[1] = bb[1].min(p.im);
                bb[2] = bb[2].max(p.re);
                bb[3] = bb[3].max(p.im);
            }
            let nseg = pts.len().saturating_sub(1).max(1);
            for s in 0..nseg {
                let p = pts[s];
                let q = if pts.len() > 1 { pts[s + 1] } else { p };
                let (i0, j0) = Self::cell_of(cell, dim, C::new(p.re.min(q.re), p.im.min(q.im)));
                let (i1, j1) = Self::cell_of(cell, dim, C::new(p.re.max(q.re), p.im.max(q.im)));
                for i in i0..=i1 {
                    for j in j0..=j1 {
                        b[j * dim + i].push(s as u32);
                    }
                }
            }
            buckets.push(b);
            bbox.push(bb);
        }
        Self { cell, dim, curves: curves.to_vec(), buckets, bbox }
    }

    fn cell_of(cell: f64, dim: usize, p: C<f64>) -> (usize, usize) {
        let f = |x: f64| (((x + 1.0) / cell).floor().max(0.0) as usize).min(dim - 1);
        (f(p.re), f(p.im))
    }

    pub fn n_curves(&self) -> usize {
        self.curves.len()
    }

    pub fn curve(&self, k: usize) -> &[C<f64>] {
        &self.curves[k]
    }

    /// Distance from `p` to the bounding box of curve `k`.
    pub fn bbox_distance(&self, p: C<f64>, k: usize) -> f64 {
        let b = &self.bbox[k];
        let dx = (b[0] - p.re).max(0.0).max(p.re - b[2]);
        let dy = (b[1] - p.im).max(0.0).max(p.im - b[3]);
        dx.hypot(dy)
    }

    /// Distance from `p` to curve `k`, or any value `>= cap` if farther than `cap`.
    pub fn distance(&self, p: C<f64>, k: usize, cap: f64) -> f64 {
        if self.bbox_distance(p, k) >= cap {
            return cap;
        }
        let pts = &self.curves[k];
        if pts.len() == 1 {
            return (p - pts[0]).norm();
        }
        let r = (cap / self.cell).ceil();
        if !cap.is_finite() || (2.0 * r + 1.0).powi(2) > pts.len() as f64 {
            let mut best = f64::INFINITY;
            for w in pts.windows(2) {
                best = best.min(point_segment_distance(p, w[0], w[1]));
            }
            return best;
        }
        let r = r as isize;
        let (ci, cj) = Self::cell_of(self.cell, self.dim, p);
        let mut best = cap;
        let dim = self.dim as isize;
        let b = &self.buckets[k];
        for dj in -r..=r {
            let j = cj as isize + dj;
            if j < 0 || j >= dim {
                continue;
            }
            for di in -r..=r {
                let i = ci as isize + di;
                if i < 0 || i >= dim {
                    continue;
                }
                for &s in &b[(j * dim + i) as usize] {
                    let s = s as usize;
                    let d = point_segment_distance(p, pts[s], pts[s + 1]);
                    if d < best {
                        best = d;
                    }
                }
            }
        }
        best
    }

    /// Whether the segment `[a,b]` crosses curve `k`.
    pub fn crosses(&self, a: C<f64>, b: C<f64>, k: usize) -> bool {
        let pts = &self.curves[k];
        if pts.len() < 2 {
            return false;
        }
        let (i0, j0) = Self::cell_of(self.cell, self.dim, C::new(a.re.min(b.re), a.im.min(b.im)));
        let (i1, j1) = Self::cell_of(self.cell, self.dim, C::new(a.re.max(b.re), a.im.max(b.im)));
        let bk = &self.buckets[k];
        for j in j0..=j1 {
            for i in i0..=i1 {
                for &s in &bk[j * self.dim + i] {
                    let s = s as usize;
                    if segments_cross(a, b, pts[s], pts[s + 1]) {
                        return true;
                    }
                }
            }
        }
        false
    }

    /// Distance from segment `[a,b]` to every curve, minimised.
    pub fn segment_distance(&self, a: C<f64>, b: C<f64>) -> f64 {
        let mut best = f64::INFINITY;
        for k in 0..self.curves.len() {
            if self.crosses(a, b, k) {
                return 0.0;
            }
            let pts = &self.curves[k];
            for p in pts {
                best = best.min(point_segment_distance(*p, a, b));
            }
            best = best.min(self.distance(a, k, f64::INFINITY)).min(self.distance(b, k, f64::INFINITY));
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    #[test]
    fn csqrt_matches_principal_branch() {
        for a in -20..=20 {
            for b in -20..=20 {
                let z = C::new(a as f64 * 0.37, b as f64 * 0.29);
                let (f, g) = (csqrt(z), z.sqrt());
                assert!((f - g).norm() <= 1e-14 * (1.0 + z.norm()), "{z} {f} {g}");
            }
        }
        assert_eq!(csqrt(C::new(-4.0, -0.0)), C::new(0.0, -2.0));
        assert_eq!(csqrt(C::new(-4.0, 0.0)), C::new(0.0, 2.0));
    }

    #[test]
    fn radius_capacity_roundtrip() {
        for &s in &[1e-6f64, 1e-3, 0.1, 1.0, 5.0] {
            let r = slit_radius(s);
            assert_abs_diff_eq!(slit_capacity(r), s, epsilon = 1e-9 * (1.0 + s));
            // e^{-s} = 4r/(1+r)^2
            assert_abs_diff_eq!((-s).exp(), 4.0 * r / (1.0 + r).powi(2), epsilon = 1e-14);
        }
    }

    #[test]
    fn slit_map_normalisation() {
        let sl = Slit::new(0.4, 0.3);
        let eps = 1e-6;
        let d = sl.forward(C::new(eps, 0.0)) / eps;
        assert_abs_diff_eq!(d.re, 0.3f64.exp(), epsilon = 1e-5);
        assert_abs_diff_eq!(d.im, 0.0, epsilon = 1e-5);
        assert!(sl.forward(C::new(0.0, 0.0)).norm() < 1e-15);
        // tip goes to the base point
        let b = sl.forward(sl.tip() * (1.0 - 1e-12));
        assert_abs_diff_eq!((b - cis(0.4)).norm(), 0.0, epsilon = 1e-5);
    }

    #[test]
    fn forward_inverse_roundtrip() {
        let sl = Slit::new(-1.3, 0.05);
        for k in 0..40 {
            let z = cis(k as f64 * 0.3) * (0.05 + 0.9 * (k as f64 / 40.0));
            let w = sl.forward(z);
            assert!(w.norm() < 1.0);
            assert_abs_diff_eq!((sl.inverse(w) - z).norm(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn boundary_map_matches_interior_limit() {
        let sl = Slit::new(0.0, 0.2);
        for &x in &[0.3, 1.0, 2.5, -0.7, -3.0, PI] {
            let (h, d) = sl.boundary(x);
            let w = sl.forward(cis(x) * (1.0 - 1e-10));
            assert_abs_diff_eq!(crate::config::wrap_pi(w.arg() - h), 0.0, epsilon = 1e-6);
            let e = 1e-6;
            let fd = (sl.boundary(x + e).0 - sl.boundary(x - e).0) / (2.0 * e);
            assert_abs_diff_eq!(d, fd, epsilon = 1e-6);
            assert!(d <= (-0.1f64).exp() + 1e-12);
            let back = sl.boundary_inverse(h).unwrap();
            assert_abs_diff_eq!(back, x, epsilon = 1e-10);
        }
        // antipode is fixed with derivative e^{-s/2}
        let (h, d) = sl.boundary(PI);
        assert_abs_diff_eq!(h, PI, epsilon = 1e-12);
        assert_abs_diff_eq!(d, (-0.1f64).exp(), epsilon = 1e-12);
        assert!(sl.boundary_inverse(0.01).is_none());
    }

    #[test]
    fn grid_distance_matches_brute_force() {
        let curve: Vec<C<f64>> = (0..50).map(|k| C::new(0.9 - 0.015 * k as f64, 0.2 * (k as f64 * 0.3).sin())).collect();
        let g = SegmentGrid::new(&[curve.clone()], 1.0 / 32.0);
        for k in 0..200 {
            let p = C::new(-0.9 + 0.009 * k as f64, 0.3 * (k as f64).cos());
            let brute = curve.windows(2).map(|w| point_segment_distance(p, w[0], w[1])).fold(f64::INFINITY, f64::min);
            let d = g.distance(p, 0, 0.2);
            if brute < 0.2 {
                assert_abs_diff_eq!(d, brute, epsilon = 1e-14);
            } else {
                assert!(d >= 0.2 - 1e-14);
            }
        }
        assert!(g.crosses(C::new(0.5, -1.0), C::new(0.5, 1.0), 0));
        assert!(!g.crosses(C::new(-0.95, -1.0), C::new(-0.95, 1.0), 0));
    }
}
