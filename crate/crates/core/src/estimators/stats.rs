use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("insufficient data: {0}")]
    Insufficient(String),
}

/// A point estimate with a 95% confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Estimate {
    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }
}

/// Wilson score interval for a binomial proportion. With no trials the
/// value is NaN and the interval is `[0, 1]`.
pub fn wilson(successes: usize, trials: usize) -> Estimate {
    if trials == 0 {
        return Estimate { value: f64::NAN, lo: 0.0, hi: 1.0, n: 0 };
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = Z95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    // at p = 0 or 1 the endpoint cancels only up to rounding
    Estimate { value: p, lo: (centre - half).clamp(0.0, p), hi: (centre + half).clamp(p, 1.0), n: trials }
}

/// Sample mean with a normal-approximation interval.
pub fn mean_ci(v: &[f64]) -> Estimate {
    let n = v.len();
    if n == 0 {
        return Estimate { value: f64::NAN, lo: f64::NAN, hi: f64::NAN, n };
    }
    let m = v.iter().sum::<f64>() / n as f64;
    let var = if n > 1 { v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
    let half = Z95 * (var / n as f64).sqrt();
    Estimate { value: m, lo: m - half, hi: m + half, n }
}

/// Least-squares fit of `y ≈ c·e^{−βt}` on `log y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpFit {
    pub c: f64,
    pub beta: f64,
    pub r2: f64,
    /// Standard error of `β`.
    pub se_beta: f64,
    pub points: usize,
}

/// Fits `log y = log c − βt` by weighted least squares. Points with `y ≤ 0`
/// are dropped; at least three must remain.
pub fn exp_fit(t: &[f64], y: &[f64], weights: Option<&[f64]>) -> Result<ExpFit, StatsError> {
    let pts: Vec<(f64, f64, f64)> = t
        .iter()
        .zip(y)
        .enumerate()
        .filter(|(_, (_, y))| **y > 0.0 && y.is_finite())
        .map(|(i, (t, y))| (*t, y.ln(), weights.map_or(1.0, |w| w[i])))
        .filter(|p| p.2 > 0.0)
        .collect();
    if pts.len() < 3 {
        return Err(StatsError::Insufficient(format!("{} usable points, need 3", pts.len())));
    }
    let sw: f64 = pts.iter().map(|p| p.2).sum();
    let tm = pts.iter().map(|p| p.2 * p.0).sum::<f64>() / sw;
    let lm = pts.iter().map(|p| p.2 * p.1).sum::<f64>() / sw;
    let stt: f64 = pts.iter().map(|p| p.2 * (p.0 - tm).powi(2)).sum();
    if stt <= 0.0 {
        return Err(StatsError::Insufficient("all points at the same time".into()));
    }
    let stl: f64 = pts.iter().map(|p| p.2 * (p.0 - tm) * (p.1 - lm)).sum();
    let slope = stl / stt;
    let icept = lm - slope * tm;
    let ss_res: f64 = pts.iter().map(|p| p.2 * (p.1 - icept - slope * p.0).powi(2)).sum();
    let ss_tot: f64 = pts.iter().map(|p| p.2 * (p.1 - lm).powi(2)).sum();
    let dof = (pts.len() - 2) as f64;
    let se = (ss_res / dof / stt).sqrt();
    Ok(ExpFit {
        c: icept.exp(),
        beta: -slope,
        r2: if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 },
        se_beta: se,
        points: pts.len(),
    })
}

/// Two-sample Kolmogorov–Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = (na * nb / (na + nb)).sqrt();
    (d, kolmogorov_q((ne + 0.12 + 0.11 / ne) * d))
}

/// `P(K > λ)` for the Kolmogorov distribution.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Pearson goodness-of-fit p-value of `observed` counts against `expected`.
pub fn chi_square_p(observed: &[f64], expected: &[f64]) -> Result<f64, StatsError> {
    let cells: Vec<(f64, f64)> = observed.iter().zip(expected).filter(|(_, e)| **e > 0.0).map(|(o, e)| (*o, *e)).collect();
    if cells.len() < 2 {
        return Err(StatsError::Insufficient("need two cells with positive expectation".into()));
    }
    let stat: f64 = cells.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    let dist = ChiSquared::new((cells.len() - 1) as f64).map_err(|e| StatsError::Insufficient(e.to_string()))?;
    Ok(dist.sf(stat))
}

/// `q`-quantile by linear interpolation between order statistics.
pub fn quantile(v: &[f64], q: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    if s.is_empty() {
        return f64::NAN;
    }
    let h = (s.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    s[lo] + (h - lo as f64) * (s[hi] - s[lo])
}
