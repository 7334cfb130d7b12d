//! Brownian loop-measure interaction term
//! `L = sum_{p>=2} mu[loops hitting at least p of the curves] = int (N-1)^+ dmu`,
//! for loops staying in the unit disk.
//!
//! Two estimators: Monte Carlo over rooted Brownian bridges, and a
//! random-walk loop-measure oracle from lattice log-determinants.

use serde::{Deserialize, Serialize};

use crate::config::equally_spaced;
use crate::drivers::zero_energy_driver;
use crate::geometry::{polyline_distance, SegmentGrid, C};
use crate::loewner::trace_rows;
use crate::par::map_indexed;
use crate::rng::{fill_normals, open01, SeededRng};
use crate::stats::{weighted_line_fit, LineFit};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopMethod {
    BridgeMc,
    LatticeDet,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LoopEstimate {
    pub mass: f64,
    pub stderr: f64,
    pub n_samples: usize,
    pub t_min: f64,
    pub t_max: f64,
    pub method: LoopMethod,
    /// Bound on the mass left out by the duration cutoffs and the root region.
    pub bias_bound: f64,
    /// Pairwise minimum distance between the curves.
    pub delta: f64,
    pub mesh: Option<f64>,
}

impl LoopEstimate {
    fn zero(method: LoopMethod) -> Self {
        Self { mass: 0.0, stderr: 0.0, n_samples: 0, t_min: 0.0, t_max: 0.0, method, bias_bound: 0.0, delta: f64::INFINITY, mesh: None }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LoopParams {
    pub n_samples: usize,
    /// Lower duration cutoff; `(delta/6)^2` when unset.
    pub t_min: Option<f64>,
    pub t_max: f64,
    /// Roots are drawn within `k_sigma sqrt(t)` of two curves' bounding boxes.
    pub k_sigma: f64,
    pub m_min: usize,
    pub m_max: usize,
    /// Duration at which bridges start getting more than `m_min` points.
    pub t_ref: f64,
    /// Fixed root box `[x0, y0, x1, y1]` for paired comparisons. Overrides
    /// the duration-dependent root region.
    pub root_box: Option<[f64; 4]>,
    pub seed: u64,
    pub stream: u64,
    pub threads: usize,
}

impl Default for LoopParams {
    fn default() -> Self {
        Self {
            n_samples: 100_000,
            t_min: None,
            t_max: 8.0,
            k_sigma: 4.0,
            m_min: 256,
            m_max: 4096,
            t_ref: 1.0,
            root_box: None,
            seed: 0,
            stream: 0,
            threads: 1,
        }
    }
}

type Rect = [f64; 4];

fn expand(b: &Rect, r: f64) -> Rect {
    [b[0] - r, b[1] - r, b[2] + r, b[3] + r]
}

fn intersect(a: &Rect, b: &Rect) -> Option<Rect> {
    let r = [a[0].max(b[0]), a[1].max(b[1]), a[2].min(b[2]), a[3].min(b[3])];
    (r[0] < r[2] && r[1] < r[3]).then_some(r)
}

fn contains(r: &Rect, z: C<f64>) -> bool {
    z.re >= r[0] && z.re <= r[2] && z.im >= r[1] && z.im <= r[3]
}

fn bbox(pts: &[C<f64>]) -> Rect {
    let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    for p in pts {
        b[0] = b[0].min(p.re);
        b[1] = b[1].min(p.im);
        b[2] = b[2].max(p.re);
        b[3] = b[3].max(p.im);
    }
    b
}

fn rect_distance(a: &Rect, b: &Rect) -> f64 {
    let dx = (a[0] - b[2]).max(b[0] - a[2]).max(0.0);
    let dy = (a[1] - b[3]).max(b[1] - a[3]).max(0.0);
    dx.hypot(dy)
}

fn polyline_length(pts: &[C<f64>]) -> f64 {
    pts.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

/// Minimum pairwise distance, and per pair `(i, j, distance)`.
pub fn pairwise_distances(curves: &[Vec<C<f64>>]) -> (f64, Vec<(usize, usize, f64)>) {
    let mut out = Vec::new();
    let mut best = f64::INFINITY;
    for i in 0..curves.len() {
        for j in i + 1..curves.len() {
            let d = polyline_distance(&curves[i], &curves[j]);
            best = best.min(d);
            out.push((i, j, d));
        }
    }
    (best, out)
}

struct McContext<'a> {
    grid: SegmentGrid,
    boxes: Vec<Rect>,
    pairs: Vec<(usize, usize)>,
    p: &'a LoopParams,
    t_min: f64,
    log_range: f64,
    rng: SeededRng,
}

impl McContext<'_> {
    /// One draw of `weight * survival * E[(N-1)^+ | skeleton]`.
    fn sample(&self, i: usize) -> f64 {
        let p = self.p;
        let mut r = self.rng.block(i as u64);
        let t = self.t_min * (self.log_range * open01(&mut r)).exp();
        let (u1, u2) = (open01(&mut r), open01(&mut r));
        let reach = p.k_sigma * t.sqrt();
        let rects: Vec<Rect> = self
            .pairs
            .iter()
            .filter_map(|&(a, b)| intersect(&expand(&self.boxes[a], reach), &expand(&self.boxes[b], reach)))
            .filter_map(|r| intersect(&r, &[-1.0, -1.0, 1.0, 1.0]))
            .collect();
        let region = match p.root_box {
            Some(b) => b,
            None => {
                if rects.is_empty() {
                    return 0.0;
                }
                rects.iter().fold([f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY], |acc, r| {
                    [acc[0].min(r[0]), acc[1].min(r[1]), acc[2].max(r[2]), acc[3].max(r[3])]
                })
            }
        };
        let z = C::new(region[0] + u1 * (region[2] - region[0]), region[1] + u2 * (region[3] - region[1]));
        if z.norm() >= 1.0 || (p.root_box.is_none() && !rects.iter().any(|r| contains(r, z))) {
            return 0.0;
        }
        let area = (region[2] - region[0]) * (region[3] - region[1]);
        let weight = area * self.log_range / (2.0 * std::f64::consts::PI * t);

        let m = ((p.m_min as f64 * (t / p.t_ref).sqrt()).round() as usize).clamp(p.m_min, p.m_max);
        let dt = t / m as f64;
        let sd = dt.sqrt();
        let mut g = vec![0.0; 2 * m];
        fill_normals(&mut r, &mut g);
        let (mut wx, mut wy) = (0.0, 0.0);
        let mut walk = Vec::with_capacity(m + 1);
        walk.push((0.0, 0.0));
        for k in 0..m {
            wx += g[2 * k] * sd;
            wy += g[2 * k + 1] * sd;
            walk.push((wx, wy));
        }
        let pts: Vec<C<f64>> = walk
            .iter()
            .enumerate()
            .map(|(k, (x, y))| {
                let f = k as f64 / m as f64;
                z + C::new(x - f * wx, y - f * wy)
            })
            .collect();

        // stay in the disk: straight-line crossing correction per segment
        let mut survive = 1.0;
        let mut prev = 1.0 - pts[0].norm();
        for q in &pts[1..] {
            let a = 1.0 - q.norm();
            if a <= 0.0 {
                return 0.0;
            }
            survive *= -(-2.0 * prev * a / dt).exp_m1();
            if survive < 1e-12 {
                return 0.0;
            }
            prev = a;
        }

        let lb = bbox(&pts);
        let cap = 5.0 * sd;
        let mut sum_p = 0.0;
        let mut none = 1.0;
        for k in 0..self.grid.n_curves() {
            if rect_distance(&lb, &self.boxes[k]) >= cap {
                continue;
            }
            let d: Vec<f64> = pts.iter().map(|q| self.grid.distance(*q, k, cap)).collect();
            let mut log_miss = 0.0;
            let mut hit = false;
            for s in 0..m {
                let (a, b) = (d[s], d[s + 1]);
                if a >= cap && b >= cap {
                    continue;
                }
                let len = (pts[s + 1] - pts[s]).norm();
                if a <= len && b <= len && self.grid.crosses(pts[s], pts[s + 1], k) {
                    hit = true;
                    break;
                }
                log_miss += (-(-2.0 * a * b / dt).exp()).ln_1p();
            }
            let ph = if hit { 1.0 } else { -log_miss.exp_m1() };
            sum_p += ph;
            none *= 1.0 - ph;
        }
        let excess = (sum_p - 1.0 + none).max(0.0);
        weight * survive * excess
    }
}

/// Tail bound `P(sup |B - z| >= s) <= min(1, 4 exp(-s^2/t))` for a planar
/// bridge of duration `t`, integrated against the root area near a curve of
/// length `len`: bounds the mass of loops shorter than `t_min` that reach
/// two curves at distance `delta`.
fn short_loop_bound(t_min: f64, delta: f64, len: f64) -> f64 {
    let a = delta / 2.0;
    let q = |s: f64, t: f64| (4.0 * (-s * s / t).exp()).min(1.0);
    let g = |s: f64| std::f64::consts::PI * s * s + 2.0 * s * len;
    let dg = |s: f64| 2.0 * std::f64::consts::PI * s + 2.0 * len;
    let inner = |t: f64| {
        let hi = a + 12.0 * t.sqrt();
        let k = 400;
        let h = (hi - a) / k as f64;
        let mut acc = 0.0;
        for i in 0..=k {
            let s = a + i as f64 * h;
            let w = if i == 0 || i == k { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * dg(s) * q(s, t);
        }
        g(a) * q(a, t) + acc * h / 3.0
    };
    // log-spaced t below t_min; the integrand is negligible below 1e-4 t_min
    let k = 400;
    let (l0, l1) = ((t_min * 1e-4).ln(), t_min.ln());
    let h = (l1 - l0) / k as f64;
    let mut acc = 0.0;
    for i in 0..=k {
        let t = (l0 + i as f64 * h).exp();
        let w = if i == 0 || i == k { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        // dt/(2 pi t^2) with dt = t dl
        acc += w * inner(t) / (2.0 * std::f64::consts::PI * t);
    }
    acc * h / 3.0
}

/// Mass of loops in the disk longer than `t_max`: at most
/// `int_{t_max}^inf (1/2) e^{-lambda_1 (t-1)/2} dt/t`.
fn long_loop_bound(t_max: f64) -> f64 {
    let lambda1 = 2.404825557695773f64.powi(2);
    0.5 * (-lambda1 * (t_max - 1.0) / 2.0).exp() / (t_max * lambda1 / 2.0)
}

/// Bridge Monte Carlo estimate of `int (N-1)^+ dmu` over loops in the disk.
///
/// Durations are log-uniform on `[t_min, t_max]`, roots uniform on the box
/// around the pairwise bounding-box overlaps grown by `k_sigma sqrt(t)`.
/// Each bridge has `m` points; between points the chance of touching a curve
/// or the circle uses the straight-line crossing probability
/// `exp(-2ab/dt)`, and `(N-1)^+` is averaged over those hits.
pub fn estimate_loop_term(curves: &[Vec<C<f64>>], params: &LoopParams) -> Result<LoopEstimate> {
    let n = curves.len();
    if n < 2 {
        return Ok(LoopEstimate::zero(LoopMethod::BridgeMc));
    }
    let (delta, pd) = pairwise_distances(curves);
    if !(delta > 0.0) {
        return Err(Error::TooClose { i: 0, j: 1, distance: delta, floor: 0.0 });
    }
    let t_min = params.t_min.unwrap_or((delta / 6.0).powi(2));
    let scale = (t_min / params.m_min as f64).sqrt();
    if delta < 4.0 * scale {
        let (i, j, _) = pd.iter().copied().min_by(|a, b| a.2.total_cmp(&b.2)).unwrap();
        return Err(Error::TooClose { i, j, distance: delta, floor: 4.0 * scale });
    }
    if !(params.t_max > t_min) || params.n_samples == 0 {
        return Err(Error::InvalidConfig("need t_max > t_min and at least one sample".into()));
    }
    let cell = (delta / 2.0).clamp(1.0 / 512.0, 1.0 / 16.0);
    let ctx = McContext {
        grid: SegmentGrid::new(curves, cell),
        boxes: curves.iter().map(|c| bbox(c)).collect(),
        pairs: pd.iter().map(|&(i, j, _)| (i, j)).collect(),
        p: params,
        t_min,
        log_range: (params.t_max / t_min).ln(),
        rng: SeededRng::new(params.seed, params.stream),
    };
    let xs = map_indexed(params.n_samples, params.threads, |i| ctx.sample(i));
    let (mass, se) = crate::stats::mean_stderr(&xs);
    let lens: Vec<f64> = curves.iter().map(|c| polyline_length(c)).collect();
    let mut bias: f64 = pd.iter().map(|&(i, j, d)| short_loop_bound(t_min, d, lens[i].min(lens[j]))).sum();
    bias += mass * 4.0 * (-params.k_sigma * params.k_sigma).exp();
    let tail = long_loop_bound(params.t_max) * (n - 1) as f64;
    Ok(LoopEstimate {
        mass,
        stderr: se + tail,
        n_samples: params.n_samples,
        t_min,
        t_max: params.t_max,
        method: LoopMethod::BridgeMc,
        bias_bound: bias,
        delta,
        mesh: None,
    })
}

/// Random-walk loop mass `-log det(I - P_A)` of the lattice sites of mesh `h`
/// in the open disk that are not blocked.
fn rw_loop_mass(h: f64, blocked: &dyn Fn(C<f64>) -> bool) -> Result<f64> {
    use faer::dyn_stack::{MemBuffer, MemStack};
    use faer::sparse::linalg::cholesky::{factorize_symbolic_cholesky, supernodal, SymbolicCholeskyRaw, SymmetricOrdering};
    use faer::sparse::{SparseColMat, Triplet};
    use faer::{Par, Side};

    let r = (1.0 / h).ceil() as i64;
    let w = (2 * r + 1) as usize;
    let mut index = vec![usize::MAX; w * w];
    let mut count = 0usize;
    for j in -r..=r {
        for i in -r..=r {
            let z = C::new(i as f64 * h, j as f64 * h);
            if z.norm() < 1.0 && !blocked(z) {
                index[(j + r) as usize * w + (i + r) as usize] = count;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Ok(0.0);
    }
    let mut trips = Vec::with_capacity(3 * count);
    for y in 0..w {
        for x in 0..w {
            let a = index[y * w + x];
            if a == usize::MAX {
                continue;
            }
            trips.push(Triplet::new(a, a, 4.0));
            if x + 1 < w && index[y * w + x + 1] != usize::MAX {
                let b = index[y * w + x + 1];
                trips.push(Triplet::new(a.max(b), a.min(b), -1.0));
            }
            if y + 1 < w && index[(y + 1) * w + x] != usize::MAX {
                let b = index[(y + 1) * w + x];
                trips.push(Triplet::new(a.max(b), a.min(b), -1.0));
            }
        }
    }
    let err = |e: &dyn std::fmt::Debug| Error::Singular(format!("{e:?}"));
    let a = SparseColMat::<usize, f64>::try_new_from_triplets(count, count, &trips).map_err(|e| err(&e))?;
    let sym = factorize_symbolic_cholesky(a.symbolic(), Side::Lower, SymmetricOrdering::Amd, Default::default()).map_err(|e| err(&e))?;
    let mut vals = vec![0.0f64; sym.len_val()];
    let mut mem = MemBuffer::new(sym.factorize_numeric_llt_scratch::<f64>(Par::Seq, Default::default()));
    sym.factorize_numeric_llt(&mut vals, a.as_ref(), Side::Lower, Default::default(), Par::Seq, MemStack::new(&mut mem), Default::default())
        .map_err(|e| err(&e))?;
    let mut log_det = 0.0;
    match sym.raw() {
        SymbolicCholeskyRaw::Simplicial(s) => {
            let f = s.factor();
            let cp = f.col_ptr();
            let ri = f.row_idx();
            for c in 0..count {
                let d = (cp[c]..cp[c + 1]).find(|&k| ri[k] == c).ok_or_else(|| Error::Singular("missing diagonal".into()))?;
                log_det += 2.0 * vals[d].ln();
            }
        }
        SymbolicCholeskyRaw::Supernodal(s) => {
            let l = supernodal::SupernodalLltRef::new(s, &vals);
            for k in 0..s.n_supernodes() {
                let v = l.supernode(k).val();
                for c in 0..v.ncols() {
                    log_det += 2.0 * v[(c, c)].ln();
                }
            }
        }
    }
    if !log_det.is_finite() {
        return Err(Error::Singular("non-finite log determinant".into()));
    }
    Ok(count as f64 * 4f64.ln() - log_det)
}

/// `sum_p mu[A^p]` for random-walk loops at mesh `h`, by inclusion–exclusion:
/// `(n-1) mu(D) - sum_i mu(D \ K_i) + mu(D \ K)`. A site is blocked for
/// curve `i` when it lies within `h/2` of it, so no lattice edge crosses a
/// curve without visiting a blocked site.
pub fn lattice_loop_mass(curves: &[Vec<C<f64>>], h: f64) -> Result<f64> {
    let n = curves.len();
    if n < 2 {
        return Ok(0.0);
    }
    let grid = SegmentGrid::new(curves, (4.0 * h).max(1.0 / 256.0));
    let near = |z: C<f64>, k: usize| grid.distance(z, k, h) <= h / 2.0;
    let full = rw_loop_mass(h, &|_| false)?;
    let mut total = (n as f64 - 1.0) * full;
    for k in 0..n {
        total -= rw_loop_mass(h, &|z| near(z, k))?;
    }
    total += rw_loop_mass(h, &|z| (0..n).any(|k| near(z, k)))?;
    Ok(total)
}

/// Lattice oracle at meshes `h`, `h/2`, `h/4`, extrapolated linearly in the
/// mesh. The reported error is the change between the two successive
/// extrapolations.
pub fn lattice_loop_oracle(curves: &[Vec<C<f64>>], mesh: f64) -> Result<LoopEstimate> {
    if curves.len() < 2 {
        return Ok(LoopEstimate { mesh: Some(mesh), ..LoopEstimate::zero(LoopMethod::LatticeDet) });
    }
    let (delta, _) = pairwise_distances(curves);
    if mesh > delta / 8.0 {
        return Err(Error::InvalidConfig(format!("mesh {mesh} does not resolve curve distance {delta}")));
    }
    let m: Vec<f64> = [mesh, mesh / 2.0, mesh / 4.0].iter().map(|&h| lattice_loop_mass(curves, h)).collect::<Result<_>>()?;
    let r1 = 2.0 * m[1] - m[0];
    let r2 = 2.0 * m[2] - m[1];
    let err = (r2 - r1).abs().max((m[2] - m[1]).abs());
    Ok(LoopEstimate {
        mass: r2.max(0.0),
        stderr: err,
        n_samples: 3,
        t_min: 0.0,
        t_max: f64::INFINITY,
        method: LoopMethod::LatticeDet,
        bias_bound: 0.0,
        delta,
        mesh: Some(mesh),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SlopeResult {
    pub n: usize,
    pub horizons: Vec<f64>,
    pub estimates: Vec<LoopEstimate>,
    pub fit: LineFit,
    pub slope: f64,
    pub stderr: f64,
    /// `(n+4)(n-1)n/24`.
    pub reference: f64,
}

/// Curves of the zero-energy trajectory from equally spaced start, traced
/// at each horizon in `horizons` with at most `max_rows` samples per curve.
pub fn zero_energy_curves(n: usize, horizons: &[f64], dt: f64, max_rows: usize) -> Result<Vec<Vec<Vec<C<f64>>>>> {
    let t_end = horizons.iter().copied().fold(0.0, f64::max);
    let driver = zero_energy_driver(&equally_spaced::<f64>(n, 0.0), t_end, dt)?;
    let mut out = Vec::new();
    for &t in horizons {
        let k = (t / dt).round() as usize;
        let stride = (k / max_rows.max(1)).max(1);
        let mut rows: Vec<usize> = (0..=k).step_by(stride).collect();
        if *rows.last().unwrap() != k {
            rows.push(k);
        }
        let c = trace_rows(&driver.prefix(k), &rows)?;
        out.push((0..n).map(|j| c.curve(j)).collect());
    }
    Ok(out)
}

/// Reference growth rate `(n+4)(n-1)n/24` of `L` along finite-energy curves.
pub fn reference_slope(n: usize) -> f64 {
    let nf = n as f64;
    (nf + 4.0) * (nf - 1.0) * nf / 24.0
}

/// `L(gamma[0,T])` on the zero-energy equally spaced trajectory for each
/// `T`, with a weighted line fit over the largest half of the grid.
pub fn slope_experiment(n: usize, horizons: &[f64], dt: f64, params: &LoopParams) -> Result<SlopeResult> {
    if horizons.len() < 2 {
        return Err(Error::InvalidConfig("need at least two horizons".into()));
    }
    let curves = zero_energy_curves(n, horizons, dt, 400)?;
    let mut estimates = Vec::new();
    for (i, c) in curves.iter().enumerate() {
        let p = LoopParams { stream: params.stream.wrapping_add(i as u64), ..params.clone() };
        estimates.push(estimate_loop_term(c, &p)?);
    }
    let mut idx: Vec<usize> = (0..horizons.len()).collect();
    idx.sort_by(|&a, &b| horizons[a].total_cmp(&horizons[b]));
    let keep = &idx[horizons.len() / 2..];
    let keep: Vec<usize> = if keep.len() < 2 { idx[idx.len() - 2..].to_vec() } else { keep.to_vec() };
    let x: Vec<f64> = keep.iter().map(|&i| horizons[i]).collect();
    let y: Vec<f64> = keep.iter().map(|&i| estimates[i].mass).collect();
    let s: Vec<f64> = keep.iter().map(|&i| estimates[i].stderr.max(1e-12)).collect();
    let fit = weighted_line_fit(&x, &y, &s);
    Ok(SlopeResult {
        n,
        horizons: horizons.to_vec(),
        estimates,
        slope: fit.slope,
        stderr: fit.slope_stderr,
        fit,
        reference: reference_slope(n),
    })
}
