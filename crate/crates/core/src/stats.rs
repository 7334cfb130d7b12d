//! Small statistics toolkit for the Monte Carlo experiments.

use serde::{Deserialize, Serialize};

/// Mean and standard error of the mean.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let m = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (m, 0.0);
    }
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
    (m, (v / n as f64).sqrt())
}

/// Sample excess kurtosis.
pub fn excess_kurtosis(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    m4 / (m2 * m2) - 3.0
}

pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

/// Linear-interpolated empirical quantile.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Wilson score interval at normal quantile `z` (1.96 for 95%).
pub fn wilson(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub intercept_stderr: f64,
    pub r2: f64,
}

/// Weighted least squares `y = a + b x` with weights `1/sigma^2`.
///
/// Standard errors come from the weights alone (known-variance model).
pub fn weighted_line_fit(x: &[f64], y: &[f64], sigma: &[f64]) -> LineFit {
    let w: Vec<f64> = sigma.iter().map(|s| 1.0 / (s * s)).collect();
    let sw: f64 = w.iter().sum();
    let sx: f64 = w.iter().zip(x).map(|(w, x)| w * x).sum();
    let sy: f64 = w.iter().zip(y).map(|(w, y)| w * y).sum();
    let sxx: f64 = w.iter().zip(x).map(|(w, x)| w * x * x).sum();
    let sxy: f64 = w.iter().zip(x.iter().zip(y)).map(|(w, (x, y))| w * x * y).sum();
    let det = sw * sxx - sx * sx;
    let slope = (sw * sxy - sx * sy) / det;
    let intercept = (sxx * sy - sx * sxy) / det;
    let ybar = sy / sw;
    let ss_tot: f64 = w.iter().zip(y).map(|(w, y)| w * (y - ybar).powi(2)).sum();
    let ss_res: f64 = w
        .iter()
        .zip(x.iter().zip(y))
        .map(|(w, (x, y))| w * (y - intercept - slope * x).powi(2))
        .sum();
    LineFit {
        slope,
        intercept,
        slope_stderr: (sw / det).sqrt(),
        intercept_stderr: (sxx / det).sqrt(),
        r2: if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 },
    }
}

/// Two-sample Kolmogorov–Smirnov distance between a weighted and an
/// unweighted sample.
pub fn ks_distance_weighted(a: &[f64], wa: &[f64], b: &[f64]) -> f64 {
    let mut ia: Vec<usize> = (0..a.len()).collect();
    ia.sort_by(|&i, &j| a[i].total_cmp(&a[j]));
    let mut sb = b.to_vec();
    sb.sort_by(|x, y| x.total_cmp(y));
    let wt: f64 = wa.iter().sum();
    let nb = sb.len() as f64;
    let (mut i, mut j) = (0usize, 0usize);
    let (mut fa, mut fb) = (0.0f64, 0.0f64);
    let mut d = 0.0f64;
    while i < ia.len() || j < sb.len() {
        let xa = if i < ia.len() { a[ia[i]] } else { f64::INFINITY };
        let xb = if j < sb.len() { sb[j] } else { f64::INFINITY };
        let x = xa.min(xb);
        while i < ia.len() && a[ia[i]] <= x {
            fa += wa[ia[i]] / wt;
            i += 1;
        }
        while j < sb.len() && sb[j] <= x {
            fb += 1.0 / nb;
            j += 1;
        }
        d = d.max((fa - fb).abs());
    }
    d
}

/// Kish effective sample size of a weight vector.
pub fn effective_sample_size(w: &[f64]) -> f64 {
    let s: f64 = w.iter().sum();
    let s2: f64 = w.iter().map(|x| x * x).sum();
    if s2 > 0.0 {
        s * s / s2
    } else {
        0.0
    }
}

/// Self-normalised weighted mean with delta-method standard error.
pub fn weighted_mean_stderr(x: &[f64], w: &[f64]) -> (f64, f64) {
    let s: f64 = w.iter().sum();
    let m = x.iter().zip(w).map(|(x, w)| x * w).sum::<f64>() / s;
    let v = x.iter().zip(w).map(|(x, w)| (w / s).powi(2) * (x - m).powi(2)).sum::<f64>();
    (m, v.sqrt())
}

/// Pearson chi-square statistic and upper-tail p-value for observed counts
/// against expected counts.
pub fn chi_square(observed: &[f64], expected: &[f64], dof: usize) -> (f64, f64) {
    let stat: f64 = observed
        .iter()
        .zip(expected)
        .filter(|(_, e)| **e > 0.0)
        .map(|(o, e)| (o - e) * (o - e) / e)
        .sum();
    (stat, chi_square_sf(stat, dof as f64))
}

/// Upper tail of the chi-square distribution via the regularised gamma
/// function (series / continued fraction).
pub fn chi_square_sf(x: f64, k: f64) -> f64 {
    let a = k / 2.0;
    let x = x / 2.0;
    if x <= 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        1.0 - gamma_p_series(a, x)
    } else {
        gamma_q_cf(a, x)
    }
}

fn ln_gamma(x: f64) -> f64 {
    // Lanczos, g = 7
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.5203681218851,
        -1259.1392167224028,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507343278686905,
        -0.13857109526572012,
        9.984_369_578_019_572e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        return (std::f64::consts::PI / (std::f64::consts::PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + 7.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut sum = 1.0 / a;
    let mut term = sum;
    let mut ap = a;
    for _ in 0..1000 {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * 1e-15 {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

fn gamma_q_cf(a: f64, x: f64) -> f64 {
    let tiny = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..1000 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-15 {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}
