//! Spectral Galerkin discretization of the stochastic complex
//! Ginzburg–Landau equation
//!
//! `du + (ε + i)Au dt + (η + λi)|u|^{2σ}u dt = b(u) dW` on `(0, 1)`,
//!
//! with Dirichlet data, `M` retained sine modes, and an exponential Euler
//! step that integrates the linear part exactly.

use super::spectral::{eigenvalue, SineTransform, SpectralField};
use super::{DynamicsError, Result, SplitSystem};
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CglCase {
    /// `𝓗 = |u|²`, any sign of `λ`, `0 < σ < 3/2`.
    L2Subcritical,
    /// `𝓗 = ½‖u‖²_{H¹} + |u|^{2σ+2}_{2σ+2}/(2σ+2)`, defocusing only.
    H1Subcritical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSettings {
    /// Scale of the low block.
    pub sigma0: f64,
    /// Strength of the state-dependent all-to-all coupling in the low block.
    pub perturbation: f64,
    /// Amplitude of the first high mode.
    pub high_amp: f64,
    /// High amplitudes decay like `(μ_{N+1}/μ_k)^{decay}`.
    pub high_decay: f64,
}

impl Default for NoiseSettings {
    fn default() -> Self {
        Self { sigma0: 1.0, perturbation: 0.1, high_amp: 0.5, high_decay: 1.5 }
    }
}

/// Block-diagonal noise `b(u) = diag(σ_l(P_{N₁}u), h)`.
///
/// The low block is `σ₀(I + p·tanh(|P_{N₁}u|²)·J/N)` with `J` the all-ones
/// matrix, so it depends only on the first `N₁` modes and its inverse has
/// norm at most `1/σ₀` for `p ≥ 0`. The high block is diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseOperator {
    pub settings: NoiseSettings,
    n: usize,
    n1: usize,
    high: Vec<f64>,
}

impl NoiseOperator {
    pub fn new(settings: NoiseSettings, m: usize, n: usize, n1: usize) -> Result<Self> {
        if !(settings.sigma0 >= 0.0) || settings.perturbation < 0.0 || settings.high_amp < 0.0 {
            return Err(DynamicsError::Config("noise needs σ₀ ≥ 0 and nonnegative perturbation and amplitude".into()));
        }
        let mu_n1 = eigenvalue(n + 1);
        let high = (n + 1..=m)
            .map(|k| settings.high_amp * (mu_n1 / eigenvalue(k)).powf(settings.high_decay))
            .collect();
        Ok(Self { settings, n, n1, high })
    }

    /// `tanh(|P_{N₁}u|²)` from interleaved low coordinates.
    fn low_level(&self, x: &[f64]) -> f64 {
        x[..2 * self.n1].iter().map(|v| v * v).sum::<f64>().tanh()
    }

    /// Complex `N×N` low block (real-valued for this family).
    pub fn low_block(&self, x: &[f64]) -> DMatrix<f64> {
        let c = self.settings.sigma0 * self.settings.perturbation * self.low_level(x) / self.n as f64;
        DMatrix::from_fn(self.n, self.n, |i, j| {
            self.settings.sigma0 * if i == j { 1.0 } else { 0.0 } + c
        })
    }

    /// Real `2N×2N` form of the low block on interleaved coordinates.
    pub fn low_block_real(&self, x: &[f64], out: &mut DMatrix<f64>) {
        let c = self.settings.sigma0 * self.settings.perturbation * self.low_level(x) / self.n as f64;
        out.fill(0.0);
        for i in 0..self.n {
            for j in 0..self.n {
                let v = c + if i == j { self.settings.sigma0 } else { 0.0 };
                out[(2 * i, 2 * j)] = v;
                out[(2 * i + 1, 2 * j + 1)] = v;
            }
        }
    }

    /// Amplitudes `h_k`, `k = N+1..M`.
    pub fn high_block(&self) -> &[f64] {
        &self.high
    }

    /// Lower bound on the smallest singular value of the low block.
    pub fn sigma0(&self) -> f64 {
        self.settings.sigma0
    }

    /// `B_s = sup_u Σ_k μ_k^s |b(u)e_k|²`.
    pub fn b_s(&self, s: f64) -> f64 {
        let sup_low = |level: f64| {
            let c = self.settings.sigma0 * self.settings.perturbation * level / self.n as f64;
            let mut acc = 0.0;
            for i in 0..self.n {
                for j in 0..self.n {
                    let v = c + if i == j { self.settings.sigma0 } else { 0.0 };
                    acc += eigenvalue(i + 1).powf(s) * v * v;
                }
            }
            acc
        };
        let low = sup_low(0.0).max(sup_low(1.0));
        let high: f64 = self.high.iter().enumerate().map(|(i, h)| eigenvalue(self.n + 1 + i).powf(s) * h * h).sum();
        low + high
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CglModel {
    pub eps: f64,
    pub eta: f64,
    pub lambda: f64,
    pub sigma: f64,
    pub m: usize,
    pub n: usize,
    pub n1: usize,
    pub noise: NoiseOperator,
    pub dt: f64,
    pub block_len: f64,
    pub case: CglCase,
    /// When false the nonlinear term is dropped.
    pub nonlinear: bool,
    transform: SineTransform,
    linear: Vec<Complex64>,
    dealias: usize,
}

impl CglModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        eps: f64,
        eta: f64,
        lambda: f64,
        sigma: f64,
        (m, n, n1): (usize, usize, usize),
        noise: NoiseSettings,
        (dt, block_len): (f64, f64),
        case: CglCase,
    ) -> Result<Self> {
        if !(eps > 0.0 && eta > 0.0) {
            return Err(DynamicsError::Config("ε and η must be positive".into()));
        }
        if lambda != 1.0 && lambda != -1.0 {
            return Err(DynamicsError::Config(format!("λ = {lambda} must be ±1")));
        }
        if !(n1 >= 1 && n1 <= n && n < m) {
            return Err(DynamicsError::Config(format!("need 1 ≤ N1 ≤ N < M, got N1 = {n1}, N = {n}, M = {m}")));
        }
        match case {
            CglCase::L2Subcritical if !(sigma > 0.0 && sigma < 1.5) => {
                return Err(DynamicsError::Config(format!("σ = {sigma} outside (0, 3/2) for the L² case")));
            }
            CglCase::H1Subcritical if !(sigma > 0.0) || lambda != 1.0 => {
                return Err(DynamicsError::Config("the H¹ case needs σ > 0 and λ = 1".into()));
            }
            _ => {}
        }
        if !(dt > 0.0 && block_len > 0.0) {
            return Err(DynamicsError::Config("dt and T must be positive".into()));
        }
        let steps = block_len / dt;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return Err(DynamicsError::Config(format!("T = {block_len} is not a multiple of dt = {dt}")));
        }
        let noise = NoiseOperator::new(noise, m, n, n1)?;
        let linear = (1..=m)
            .map(|k| (-Complex64::new(eps, 1.0) * eigenvalue(k) * dt).exp())
            .collect();
        Ok(Self {
            eps,
            eta,
            lambda,
            sigma,
            m,
            n,
            n1,
            noise,
            dt,
            block_len,
            case,
            nonlinear: true,
            transform: SineTransform::new(4 * m),
            linear,
            dealias: 2 * m / 3,
        })
    }

    pub fn grid_size(&self) -> usize {
        self.transform.grid_size()
    }

    pub fn transform(&self) -> &SineTransform {
        &self.transform
    }

    /// Highest mode kept in the nonlinear term.
    pub fn dealias_cutoff(&self) -> usize {
        self.dealias
    }

    /// Exact linear propagator `e^{−(ε+i)μ_k dt}` for mode `k` (1-based).
    pub fn linear_factor(&self, k: usize) -> Complex64 {
        self.linear[k - 1]
    }

    /// Galerkin projection of `(η + λi)|u|^{2σ}u` onto modes `1..M`, with
    /// modes above the 2/3 cutoff removed.
    pub fn nonlinearity(&self, a: &[Complex64]) -> Vec<Complex64> {
        if !self.nonlinear {
            return vec![Complex64::new(0.0, 0.0); self.m];
        }
        let mut u = self.transform.synthesize(a);
        for v in u.iter_mut() {
            *v *= v.norm_sqr().powf(self.sigma);
        }
        let mut c = self.transform.analyze(&u, self.m);
        let factor = Complex64::new(self.eta, self.lambda);
        for (k, v) in c.iter_mut().enumerate() {
            *v = if k < self.dealias { *v * factor } else { Complex64::new(0.0, 0.0) };
        }
        c
    }

    /// Field with coefficients taken from interleaved real coordinates.
    pub fn field(&self, u: &[f64]) -> SpectralField {
        SpectralField::from_real(u, self.grid_size())
    }

    fn coeffs(x: &[f64], y: &[f64]) -> Vec<Complex64> {
        x.chunks(2).chain(y.chunks(2)).map(|c| Complex64::new(c[0], c[1])).collect()
    }

    /// `∫ |u|^p dx` by the trapezoid rule on the collocation grid.
    pub fn lp_power(&self, a: &[Complex64], p: f64) -> f64 {
        let g = self.grid_size() as f64;
        self.transform.synthesize(a).iter().map(|v| v.norm().powf(p)).sum::<f64>() / g
    }

    /// `∫ |u|^{2σ}|∇u|² dx` by the trapezoid rule.
    pub fn gradient_density(&self, a: &[Complex64]) -> f64 {
        let g = self.grid_size() as f64;
        let u = self.transform.synthesize(a);
        let du = self.transform.synthesize_derivative(a);
        u.iter().zip(&du).map(|(v, d)| v.norm_sqr().powf(self.sigma) * d.norm_sqr()).sum::<f64>() / g
    }

    /// Lyapunov functional `𝓗` of the selected case.
    pub fn lyapunov_of(&self, a: &[Complex64]) -> f64 {
        match self.case {
            CglCase::L2Subcritical => a.iter().map(|c| c.norm_sqr()).sum(),
            CglCase::H1Subcritical => {
                let h1: f64 = a.iter().enumerate().map(|(k, c)| eigenvalue(k + 1) * c.norm_sqr()).sum();
                let p = 2.0 * self.sigma + 2.0;
                0.5 * h1 + self.lp_power(a, p) / p
            }
        }
    }

    /// Integrands of the running parts of the energy of the selected case:
    /// `[ε‖u‖²]` for the L² case, and
    /// `[ε/2·‖u‖₂², η/2·|u|^{4σ+2}_{4σ+2}, (η+ε)∫|u|^{2σ}|∇u|²]` for the H¹ case.
    pub fn energy_rates_of(&self, a: &[Complex64]) -> Vec<f64> {
        match self.case {
            CglCase::L2Subcritical => {
                vec![self.eps * a.iter().enumerate().map(|(k, c)| eigenvalue(k + 1) * c.norm_sqr()).sum::<f64>()]
            }
            CglCase::H1Subcritical => {
                let h2: f64 = a.iter().enumerate().map(|(k, c)| eigenvalue(k + 1).powi(2) * c.norm_sqr()).sum();
                vec![
                    0.5 * self.eps * h2,
                    0.5 * self.eta * self.lp_power(a, 4.0 * self.sigma + 2.0),
                    (self.eta + self.eps) * self.gradient_density(a),
                ]
            }
        }
    }
}

/// One exponential Euler step driven by raw complex increments `dW`
/// (real and imaginary parts each `N(0, dt)`); the noise operator is applied
/// here.
pub fn step_cgl(model: &CglModel, u: &SpectralField, dw: &[Complex64]) -> Result<SpectralField> {
    if u.modes() != model.m || dw.len() != model.m {
        return Err(DynamicsError::Contract(format!("expected {} modes", model.m)));
    }
    let nl = model.nonlinearity(&u.coeffs);
    let x: Vec<f64> = u.coeffs[..model.n].iter().flat_map(|c| [c.re, c.im]).collect();
    let low = model.noise.low_block(&x);
    let high = model.noise.high_block();
    let mut out = Vec::with_capacity(model.m);
    for k in 0..model.m {
        let mean = model.linear[k] * (u.coeffs[k] - nl[k] * model.dt);
        let kick = if k < model.n {
            (0..model.n).map(|j| dw[j] * low[(k, j)]).sum::<Complex64>()
        } else {
            dw[k] * high[k - model.n]
        };
        let v = mean + kick;
        if !(v.re.is_finite() && v.im.is_finite()) || v.norm() > super::BLOWUP_THRESHOLD {
            return Err(DynamicsError::BlowUp { time: f64::NAN });
        }
        out.push(v);
    }
    Ok(SpectralField::new(out, u.grid_size))
}

impl SplitSystem for CglModel {
    fn low_dim(&self) -> usize {
        2 * self.n
    }
    fn high_dim(&self) -> usize {
        2 * (self.m - self.n)
    }
    fn dt(&self) -> f64 {
        self.dt
    }
    fn block_len(&self) -> f64 {
        self.block_len
    }

    fn means(&self, x: &[f64], y: &[f64], low: &mut [f64], high: &mut [f64]) -> Result<()> {
        let a = Self::coeffs(x, y);
        let nl = self.nonlinearity(&a);
        for k in 0..self.m {
            let v = self.linear[k] * (a[k] - nl[k] * self.dt);
            let out = if k < self.n { &mut low[2 * k..2 * k + 2] } else { &mut high[2 * (k - self.n)..2 * (k - self.n) + 2] };
            out[0] = v.re;
            out[1] = v.im;
        }
        Ok(())
    }

    fn low_noise(&self, x: &[f64], out: &mut DMatrix<f64>) {
        self.noise.low_block_real(x, out);
    }

    fn high_noise(&self, _x: &[f64], out: &mut [f64]) {
        for (k, h) in self.noise.high_block().iter().enumerate() {
            out[2 * k] = *h;
            out[2 * k + 1] = *h;
        }
    }

    fn sigma0(&self) -> f64 {
        self.noise.sigma0()
    }

    fn lyapunov(&self, x: &[f64], y: &[f64]) -> f64 {
        self.lyapunov_of(&Self::coeffs(x, y))
    }

    fn energy_rates(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        self.energy_rates_of(&Self::coeffs(x, y))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{phi_reconstruct, simulate_split, Trajectory};
    use crate::rng::stream;
    use std::f64::consts::PI;

    fn model(case: CglCase) -> CglModel {
        CglModel::new(0.1, 1.0, 1.0, 1.0, (16, 4, 2), NoiseSettings::default(), (1e-3, 0.1), case).unwrap()
    }

    fn zero_dw(m: usize) -> Vec<Complex64> {
        vec![Complex64::new(0.0, 0.0); m]
    }

    #[test]
    fn zero_is_fixed() {
        let m = model(CglCase::L2Subcritical);
        let u = SpectralField::zeros(16, m.grid_size());
        let v = step_cgl(&m, &u, &zero_dw(16)).unwrap();
        assert!(v.coeffs.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn single_mode_nonlinearity_matches_quadrature() {
        let m = CglModel::new(0.1, 0.7, 1.0, 1.0, (16, 4, 2), NoiseSettings::default(), (1e-3, 0.1), CglCase::L2Subcritical)
            .unwrap();
        let mut a = zero_dw(16);
        a[0] = Complex64::new(0.6, -0.3);
        let nl = m.nonlinearity(&a);
        // Composite Simpson on a fine grid.
        let n = 20_000;
        let h = 1.0 / n as f64;
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..=n {
            let x = i as f64 * h;
            let e1 = 2f64.sqrt() * (PI * x).sin();
            let u = a[0] * e1;
            let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += u * u.norm_sqr() * e1 * w;
        }
        let exact = acc * (h / 3.0) * Complex64::new(0.7, 1.0);
        assert!((nl[0] - exact).norm() < 1e-10, "{} vs {}", nl[0], exact);
    }

    #[test]
    fn dealiased_modes_are_empty() {
        let m = model(CglCase::L2Subcritical);
        for k in 0..16 {
            let mut a = zero_dw(16);
            a[k] = Complex64::new(1.3, 0.4);
            let nl = m.nonlinearity(&a);
            assert!(nl[m.dealias_cutoff()..].iter().all(|c| c.norm() == 0.0));
        }
    }

    #[test]
    fn linear_evolution_is_exact() {
        let mut m = model(CglCase::L2Subcritical);
        m.nonlinear = false;
        let mut u = SpectralField::zeros(16, m.grid_size());
        u.coeffs[2] = Complex64::new(0.5, 0.25);
        u.coeffs[9] = Complex64::new(-0.1, 0.2);
        let u0 = u.clone();
        for _ in 0..50 {
            u = step_cgl(&m, &u, &zero_dw(16)).unwrap();
        }
        for k in [3usize, 10] {
            let exact = u0.coeffs[k - 1] * (-Complex64::new(0.1, 1.0) * eigenvalue(k) * 0.05).exp();
            assert!((u.coeffs[k - 1] - exact).norm() < 1e-13);
        }
    }

    #[test]
    fn step_matches_split_form() {
        let m = model(CglCase::H1Subcritical);
        let mut rng = stream(4, &[0]);
        let seg = simulate_split(&m, &vec![0.1; 32], 5, 0.0, &mut rng).unwrap();
        for n in 0..5 {
            let u = m.field(seg.states.row(n));
            let dw: Vec<Complex64> = seg.dw.row(n).chunks(2).map(|c| Complex64::new(c[0], c[1])).collect();
            let v = step_cgl(&m, &u, &dw).unwrap();
            for (a, b) in v.to_real().iter().zip(seg.states.row(n + 1)) {
                assert!((a - b).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn phi_recovers_high_modes() {
        let m = model(CglCase::L2Subcritical);
        let mut rng = stream(4, &[1]);
        let u0: Vec<f64> = (0..32).map(|i| 0.3 / (1 + i) as f64).collect();
        let seg = simulate_split(&m, &u0, 100, 0.0, &mut rng).unwrap();
        let nl = m.low_dim();
        let x = Trajectory::from_rows(nl, seg.states.rows().flat_map(|r| r[..nl].to_vec()).collect());
        let eta = Trajectory::from_rows(m.high_dim(), seg.dw.rows().flat_map(|r| r[nl..].to_vec()).collect());
        let y = phi_reconstruct(&m, &x, &eta, &u0[nl..]).unwrap();
        for (a, b) in y.rows().zip(seg.states.rows()) {
            for (p, q) in a.iter().zip(&b[nl..]) {
                assert!((p - q).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn noise_operator_structure() {
        let m = model(CglCase::L2Subcritical);
        let x1 = vec![0.0; 8];
        let mut x2 = vec![0.0; 8];
        x2[7] = 5.0; // mode 4 lies above N1 = 2
        assert_eq!(m.noise.low_block(&x1), m.noise.low_block(&x2));
        x2[0] = 1.0;
        let b = m.noise.low_block(&x2);
        let sv = b.clone().svd(false, false).singular_values;
        assert!(sv.min() >= m.noise.sigma0() * (1.0 - 1e-12));
        assert!(m.noise.b_s(2.0).is_finite());
    }

    #[test]
    fn rejects_invalid_parameters() {
        let s = NoiseSettings::default();
        assert!(CglModel::new(0.1, 1.0, -1.0, 1.0, (16, 4, 2), s, (1e-3, 0.1), CglCase::H1Subcritical).is_err());
        assert!(CglModel::new(0.1, 1.0, 1.0, 1.6, (16, 4, 2), s, (1e-3, 0.1), CglCase::L2Subcritical).is_err());
        assert!(CglModel::new(0.1, 1.0, 1.0, 1.0, (16, 4, 5), s, (1e-3, 0.1), CglCase::L2Subcritical).is_err());
        assert!(CglModel::new(0.0, 1.0, 1.0, 1.0, (16, 4, 2), s, (1e-3, 0.1), CglCase::L2Subcritical).is_err());
    }

    #[test]
    fn blow_up_is_reported() {
        let m = CglModel::new(0.1, 1.0, -1.0, 1.0, (16, 4, 2), NoiseSettings::default(), (1e-3, 0.1), CglCase::L2Subcritical)
            .unwrap();
        let mut u = SpectralField::zeros(16, m.grid_size());
        u.coeffs[0] = Complex64::new(1e7, 0.0);
        assert!(matches!(step_cgl(&m, &u, &zero_dw(16)), Err(DynamicsError::BlowUp { .. })));
    }
}
