//! Dirichlet sine basis on `(0, 1)` and fast collocation transforms.
//!
//! The basis is `e_k(x) = √2 sin(kπx)` with eigenvalues `μ_k = (kπ)²`.
//! Collocation points are `x_j = j/G` for `j = 1..G−1`; sums against
//! `sin(πjk/G)` and `cos(πjk/G)` are computed with one complex FFT of
//! length `2G` on the odd or even extension.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::f64::consts::PI;
use std::sync::Arc;

pub fn eigenvalue(k: usize) -> f64 {
    let a = k as f64 * PI;
    a * a
}

#[derive(Clone)]
pub struct SineTransform {
    g: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for SineTransform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SineTransform").field("g", &self.g).finish()
    }
}

impl PartialEq for SineTransform {
    fn eq(&self, other: &Self) -> bool {
        self.g == other.g
    }
}

impl SineTransform {
    pub fn new(g: usize) -> Self {
        assert!(g >= 2, "grid needs at least two intervals");
        let fft = FftPlanner::new().plan_fft_forward(2 * g);
        Self { g, fft }
    }

    /// Number of grid intervals `G`.
    pub fn grid_size(&self) -> usize {
        self.g
    }

    fn extended(&self, c: &[Complex64], odd: bool) -> Vec<Complex64> {
        assert!(c.len() < self.g, "{} modes do not fit a grid of {}", c.len(), self.g);
        let n = 2 * self.g;
        let mut v = vec![Complex64::new(0.0, 0.0); n];
        for (k, &ck) in c.iter().enumerate() {
            v[k + 1] = ck;
            v[n - k - 1] = if odd { -ck } else { ck };
        }
        self.fft.process(&mut v);
        v
    }

    /// `out[j−1] = Σ_k c[k−1]·sin(πjk/G)` for `j = 1..G−1`.
    pub fn sine_sum(&self, c: &[Complex64], out: &mut [Complex64]) {
        let v = self.extended(c, true);
        let half_i = Complex64::new(0.0, 0.5);
        for (j, o) in out.iter_mut().enumerate().take(self.g - 1) {
            *o = v[j + 1] * half_i;
        }
    }

    /// `out[j−1] = Σ_k c[k−1]·cos(πjk/G)` for `j = 1..G−1`.
    pub fn cos_sum(&self, c: &[Complex64], out: &mut [Complex64]) {
        let v = self.extended(c, false);
        for (j, o) in out.iter_mut().enumerate().take(self.g - 1) {
            *o = v[j + 1] * 0.5;
        }
    }

    /// Values of `Σ a_k e_k` at the interior grid points.
    pub fn synthesize(&self, a: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.g - 1];
        self.sine_sum(a, &mut out);
        let s = 2f64.sqrt();
        out.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// Values of `∂ₓ Σ a_k e_k` at the interior grid points.
    pub fn synthesize_derivative(&self, a: &[Complex64]) -> Vec<Complex64> {
        let scaled: Vec<Complex64> = a.iter().enumerate().map(|(k, v)| v * ((k + 1) as f64 * PI)).collect();
        let mut out = vec![Complex64::new(0.0, 0.0); self.g - 1];
        self.cos_sum(&scaled, &mut out);
        let s = 2f64.sqrt();
        out.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// Coefficients `⟨w, e_k⟩`, `k = 1..m`, by the trapezoid rule on grid
    /// values of a function vanishing at both ends.
    pub fn analyze(&self, w: &[Complex64], m: usize) -> Vec<Complex64> {
        let v = self.extended(w, true);
        let scale = Complex64::new(0.0, 0.5 * 2f64.sqrt() / self.g as f64);
        (1..=m).map(|k| v[k] * scale).collect()
    }
}

/// Sine-basis coefficients of a complex field on `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    pub coeffs: Vec<Complex64>,
    pub grid_size: usize,
}

impl SpectralField {
    pub fn new(coeffs: Vec<Complex64>, grid_size: usize) -> Self {
        assert!(grid_size >= 2 * coeffs.len(), "grid must be at least twice the number of modes");
        Self { coeffs, grid_size }
    }

    pub fn zeros(m: usize, grid_size: usize) -> Self {
        Self::new(vec![Complex64::new(0.0, 0.0); m], grid_size)
    }

    pub fn modes(&self) -> usize {
        self.coeffs.len()
    }

    /// Interleaved `[re₁, im₁, re₂, im₂, …]`.
    pub fn to_real(&self) -> Vec<f64> {
        self.coeffs.iter().flat_map(|c| [c.re, c.im]).collect()
    }

    pub fn from_real(v: &[f64], grid_size: usize) -> Self {
        Self::new(v.chunks(2).map(|c| Complex64::new(c[0], c[1])).collect(), grid_size)
    }

    pub fn l2_norm(&self) -> f64 {
        sobolev_norm(self, 0.0)
    }
}

/// `(Σ μ_k^s |a_k|²)^{1/2}`.
pub fn sobolev_norm(field: &SpectralField, s: f64) -> f64 {
    assert!((0.0..=3.0).contains(&s), "Sobolev index {s} outside [0, 3]");
    sobolev_norm_sq_real(&field.to_real(), s).sqrt()
}

/// `Σ μ_k^s |a_k|²` on interleaved real coordinates.
pub fn sobolev_norm_sq_real(v: &[f64], s: f64) -> f64 {
    v.chunks(2)
        .enumerate()
        .map(|(k, c)| eigenvalue(k + 1).powf(s) * (c[0] * c[0] + c.get(1).map_or(0.0, |b| b * b)))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn transforms_match_direct_sums() {
        let g = 24;
        let t = SineTransform::new(g);
        let a: Vec<Complex64> = (0..7).map(|k| c(1.0 / (k + 1) as f64, 0.3 * k as f64)).collect();
        let mut s = vec![c(0.0, 0.0); g - 1];
        let mut co = vec![c(0.0, 0.0); g - 1];
        t.sine_sum(&a, &mut s);
        t.cos_sum(&a, &mut co);
        for j in 1..g {
            let mut ds = c(0.0, 0.0);
            let mut dc = c(0.0, 0.0);
            for (k, ak) in a.iter().enumerate() {
                let th = PI * (j * (k + 1)) as f64 / g as f64;
                ds += ak * th.sin();
                dc += ak * th.cos();
            }
            assert!((s[j - 1] - ds).norm() < 1e-12);
            assert!((co[j - 1] - dc).norm() < 1e-12);
        }
    }

    #[test]
    fn analysis_inverts_synthesis() {
        let t = SineTransform::new(64);
        let a: Vec<Complex64> = (0..16).map(|k| c((k as f64).sin(), (k as f64).cos())).collect();
        let back = t.analyze(&t.synthesize(&a), 16);
        for (x, y) in a.iter().zip(&back) {
            assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn derivative_of_single_mode() {
        let t = SineTransform::new(32);
        let mut a = vec![c(0.0, 0.0); 3];
        a[2] = c(1.0, 0.0);
        let d = t.synthesize_derivative(&a);
        for (j, v) in d.iter().enumerate() {
            let x = (j + 1) as f64 / 32.0;
            let exact = 2f64.sqrt() * 3.0 * PI * (3.0 * PI * x).cos();
            assert!((v.re - exact).abs() < 1e-11 && v.im.abs() < 1e-12);
        }
    }

    #[test]
    fn sobolev_examples() {
        let z = SpectralField::zeros(4, 16);
        assert_eq!(sobolev_norm(&z, 1.0), 0.0);
        let mut f = SpectralField::zeros(4, 16);
        f.coeffs[2] = c(0.0, -2.0);
        assert!((sobolev_norm(&f, 1.5) - eigenvalue(3).powf(0.75) * 2.0).abs() < 1e-10);
    }

    #[test]
    fn sobolev_interpolation() {
        let mut rng = stream(9, &[0]);
        for _ in 0..200 {
            let coeffs = (0..12).map(|_| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect();
            let f = SpectralField::new(coeffs, 48);
            let s = 2.0 * rng.random::<f64>();
            let lhs = sobolev_norm(&f, s);
            let rhs = sobolev_norm(&f, 0.0).powf(1.0 - s / 2.0) * sobolev_norm(&f, 2.0).powf(s / 2.0);
            assert!(lhs <= rhs * (1.0 + 1e-12));
        }
    }
}
