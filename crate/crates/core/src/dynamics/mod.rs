//! Time-discretized models and the path-space tools built on them.
//!
//! Three model classes are provided: a drifted Brownian motion on the circle
//! ([`TorusModel`]), a two-dimensional low/high toy system ([`LowHighModel`]),
//! and a spectral Galerkin discretization of the stochastic complex
//! Ginzburg–Landau equation ([`CglModel`]). The last two share the
//! [`SplitSystem`] interface, which exposes the one-step transition as
//! "Gaussian around a mean" in low and high coordinates separately. That is
//! the structure the high-mode reconstruction map and the Girsanov density
//! ratios rely on.

mod cgl;
mod config;
mod energy;
mod functions;
mod lowhigh;
mod spectral;
mod torus;

pub use cgl::{step_cgl, CglCase, CglModel, NoiseOperator, NoiseSettings};
pub use config::{CglConfig, LowHighConfig, ModelConfig, TorusConfig};
pub use energy::{energy_update, EnergyLedger};
pub use functions::{LineFn, PairFn, TorusDrift};
pub use lowhigh::{step_lowhigh, LowHighModel};
pub use spectral::{eigenvalue, sobolev_norm, sobolev_norm_sq_real, SineTransform, SpectralField};
pub use torus::{circle_dist, girsanov_drift_torus, shift as torus_shift, signed_shortest, step_torus, wrap, TorusModel};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

use crate::rng::fill_gaussian;

/// Coefficient magnitude beyond which a trajectory is declared blown up.
pub const BLOWUP_THRESHOLD: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("blow-up at t = {time}")]
    BlowUp { time: f64 },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid model: {0}")]
    Config(String),
    #[error("singular low-mode noise: {0}")]
    Singular(String),
}

impl DynamicsError {
    /// Re-stamps a blow-up with the absolute time at which it happened.
    pub fn at(self, time: f64) -> Self {
        match self {
            DynamicsError::BlowUp { .. } => DynamicsError::BlowUp { time },
            e => e,
        }
    }
}

pub type Result<T> = std::result::Result<T, DynamicsError>;

/// Rows of equal length stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    dim: usize,
    data: Vec<f64>,
}

impl Trajectory {
    pub fn new(dim: usize) -> Self {
        Self { dim, data: Vec::new() }
    }

    pub fn with_capacity(dim: usize, rows: usize) -> Self {
        Self { dim, data: Vec::with_capacity(dim * rows) }
    }

    pub fn from_rows(dim: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len() % dim.max(1), 0);
        Self { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn last(&self) -> &[f64] {
        self.row(self.len() - 1)
    }

    pub fn push(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.dim);
        self.data.extend_from_slice(row);
    }

    /// Appends a zero row and returns it for filling.
    pub fn push_zeroed(&mut self) -> &mut [f64] {
        let n = self.data.len();
        self.data.resize(n + self.dim, 0.0);
        &mut self.data[n..]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.dim.max(1))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// A simulated stretch of trajectory with the noise that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSegment {
    pub t0: f64,
    pub dt: f64,
    /// `n + 1` states on the grid `t0, t0 + dt, …`.
    pub states: Trajectory,
    /// `n` noise increments.
    pub dw: Trajectory,
    pub seed: u64,
}

impl PathSegment {
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.states.len()).map(move |i| self.t0 + i as f64 * self.dt)
    }
}

/// Discrete Girsanov exponent `Σ dᵢ·dWᵢ − ½ Σ |dᵢ|² dt`.
pub fn log_likelihood_ratio(drift: &Trajectory, dw: &Trajectory, dt: f64) -> Result<f64> {
    if drift.len() != dw.len() || drift.dim() != dw.dim() {
        return Err(DynamicsError::Contract(format!(
            "drift {}x{} vs noise {}x{}",
            drift.len(),
            drift.dim(),
            dw.len(),
            dw.dim()
        )));
    }
    let mut acc = 0.0;
    for (d, w) in drift.rows().zip(dw.rows()) {
        for (a, b) in d.iter().zip(w) {
            acc += a * b - 0.5 * a * a * dt;
        }
    }
    Ok(acc)
}

/// A model whose Euler step splits into low coordinates `x` and high
/// coordinates `y`:
///
/// `x' = m_low(x, y) + S(x)·dβ`, `y' = m_high(x, y) + h(x) ∘ dη`,
///
/// with `dβ, dη` independent `N(0, dt)` vectors, `S(x)` invertible and `h`
/// diagonal. States are real vectors; complex models interleave re/im parts.
pub trait SplitSystem: Send + Sync {
    fn low_dim(&self) -> usize;
    fn high_dim(&self) -> usize;
    fn dt(&self) -> f64;
    fn block_len(&self) -> f64;

    fn steps_per_block(&self) -> usize {
        (self.block_len() / self.dt()).round() as usize
    }

    /// Deterministic part of one step.
    fn means(&self, x: &[f64], y: &[f64], low: &mut [f64], high: &mut [f64]) -> Result<()>;
    /// Low-mode noise matrix `S(x)`.
    fn low_noise(&self, x: &[f64], out: &mut DMatrix<f64>);
    /// Diagonal high-mode noise amplitudes `h(x)`.
    fn high_noise(&self, x: &[f64], out: &mut [f64]);
    /// Uniform bound `|S(x)⁻¹| ≤ 1/σ₀`.
    fn sigma0(&self) -> f64;
    /// Lyapunov functional of the full state.
    fn lyapunov(&self, x: &[f64], y: &[f64]) -> f64;
    /// Integrands of the running parts of the energy functional.
    fn energy_rates(&self, x: &[f64], y: &[f64]) -> Vec<f64>;

    fn energy_rate(&self, x: &[f64], y: &[f64]) -> f64 {
        self.energy_rates(x, y).iter().sum()
    }

    fn state_dim(&self) -> usize {
        self.low_dim() + self.high_dim()
    }

    fn split<'a>(&self, u: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        u.split_at(self.low_dim())
    }
}

/// Scratch buffers for stepping a [`SplitSystem`].
#[derive(Debug, Clone)]
pub struct Workspace {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
    pub s: DMatrix<f64>,
    pub h: Vec<f64>,
    pub db: Vec<f64>,
    pub de: Vec<f64>,
}

impl Workspace {
    pub fn new<S: SplitSystem + ?Sized>(m: &S) -> Self {
        let (nl, nh) = (m.low_dim(), m.high_dim());
        Self {
            low: vec![0.0; nl],
            high: vec![0.0; nh],
            s: DMatrix::zeros(nl, nl),
            h: vec![0.0; nh],
            db: vec![0.0; nl],
            de: vec![0.0; nh],
        }
    }
}

fn check_finite(v: &[f64]) -> Result<()> {
    if v.iter().all(|a| a.is_finite() && a.abs() <= BLOWUP_THRESHOLD) {
        Ok(())
    } else {
        Err(DynamicsError::BlowUp { time: f64::NAN })
    }
}

/// One step driven by the increments held in `ws.db`, `ws.de`.
pub fn step_split<S: SplitSystem + ?Sized>(
    m: &S,
    ws: &mut Workspace,
    x: &[f64],
    y: &[f64],
    x_out: &mut [f64],
    y_out: &mut [f64],
) -> Result<()> {
    m.means(x, y, &mut ws.low, &mut ws.high)?;
    m.low_noise(x, &mut ws.s);
    m.high_noise(x, &mut ws.h);
    for i in 0..x_out.len() {
        let mut acc = ws.low[i];
        for j in 0..ws.db.len() {
            acc += ws.s[(i, j)] * ws.db[j];
        }
        x_out[i] = acc;
    }
    for k in 0..y_out.len() {
        y_out[k] = ws.high[k] + ws.h[k] * ws.de[k];
    }
    check_finite(x_out)?;
    check_finite(y_out)
}

/// Simulates `n_steps` from `u0 = (x0, y0)`, recording `(dβ, dη)` as one
/// concatenated noise row per step.
pub fn simulate_split<S: SplitSystem + ?Sized, R: Rng + ?Sized>(
    m: &S,
    u0: &[f64],
    n_steps: usize,
    t0: f64,
    rng: &mut R,
) -> Result<PathSegment> {
    let (nl, d) = (m.low_dim(), m.state_dim());
    let dt = m.dt();
    let mut ws = Workspace::new(m);
    let mut states = Trajectory::with_capacity(d, n_steps + 1);
    let mut dw = Trajectory::with_capacity(d, n_steps);
    states.push(u0);
    let mut next = vec![0.0; d];
    for n in 0..n_steps {
        fill_gaussian(rng, dt, &mut ws.db);
        fill_gaussian(rng, dt, &mut ws.de);
        let cur = states.row(n);
        let (x, y) = cur.split_at(nl);
        let (xo, yo) = next.split_at_mut(nl);
        step_split(m, &mut ws, x, y, xo, yo).map_err(|e| e.at(t0 + (n + 1) as f64 * dt))?;
        states.push(&next);
        let row = dw.push_zeroed();
        row[..nl].copy_from_slice(&ws.db);
        row[nl..].copy_from_slice(&ws.de);
    }
    Ok(PathSegment { t0, dt, states, dw, seed: 0 })
}

/// High-mode reconstruction `Φ`: integrates the high equation driven by a
/// given low-mode path and high-mode noise.
///
/// `y_{n+1}` depends on `x_0..x_n` and `η_0..η_n` only.
pub fn phi_reconstruct<S: SplitSystem + ?Sized>(
    m: &S,
    x_path: &Trajectory,
    eta: &Trajectory,
    y0: &[f64],
) -> Result<Trajectory> {
    if x_path.len() != eta.len() + 1 || x_path.dim() != m.low_dim() || eta.dim() != m.high_dim() {
        return Err(DynamicsError::Contract(format!(
            "low path has {} points, high noise {} increments",
            x_path.len(),
            eta.len()
        )));
    }
    let mut ws = Workspace::new(m);
    let mut out = Trajectory::with_capacity(m.high_dim(), x_path.len());
    out.push(y0);
    let mut next = vec![0.0; m.high_dim()];
    for n in 0..eta.len() {
        let x = x_path.row(n);
        m.means(x, out.row(n), &mut ws.low, &mut ws.high)
            .map_err(|e| e.at((n + 1) as f64 * m.dt()))?;
        m.high_noise(x, &mut ws.h);
        for (k, e) in eta.row(n).iter().enumerate() {
            next[k] = ws.high[k] + ws.h[k] * e;
        }
        check_finite(&next).map_err(|e| e.at((n + 1) as f64 * m.dt()))?;
        out.push(&next);
    }
    Ok(out)
}

/// Girsanov drift between the laws of `(Z, ξ)` started from `(x, y₁)` and
/// from `(x, y₂)`, together with the noise `dβ` that drives `Z` under the
/// first law.
#[derive(Debug, Clone)]
pub struct BindingDrift {
    /// `dₙ = S(Zₙ)⁻¹(m_low(Zₙ, Φ₂ₙ) − m_low(Zₙ, Φ₁ₙ)) / dt`.
    pub drift: Trajectory,
    pub reference_noise: Trajectory,
}

/// Drift `d` such that `log(dν₂/dν₁)(Z, ξ) = Σ d·dβ − ½Σ|d|²dt`, where `ν_i`
/// is the law of the low path and high noise started from `(x, y_i)`.
///
/// When `cutoff = Some(n)`, the drift is set to zero from step `n` on.
pub fn girsanov_drift_binding<S: SplitSystem + ?Sized>(
    m: &S,
    z_path: &Trajectory,
    xi: &Trajectory,
    y1: &[f64],
    y2: &[f64],
    cutoff: Option<usize>,
) -> Result<BindingDrift> {
    let phi1 = phi_reconstruct(m, z_path, xi, y1)?;
    let phi2 = phi_reconstruct(m, z_path, xi, y2)?;
    let (nl, nh) = (m.low_dim(), m.high_dim());
    let dt = m.dt();
    let mut s = DMatrix::zeros(nl, nl);
    let (mut m1, mut m2, mut hi) = (vec![0.0; nl], vec![0.0; nl], vec![0.0; nh]);
    let mut drift = Trajectory::with_capacity(nl, xi.len());
    let mut noise = Trajectory::with_capacity(nl, xi.len());
    for n in 0..xi.len() {
        let z = z_path.row(n);
        m.means(z, phi1.row(n), &mut m1, &mut hi)?;
        m.means(z, phi2.row(n), &mut m2, &mut hi)?;
        m.low_noise(z, &mut s);
        let lu = s.clone().lu();
        let dz = DVector::from_iterator(nl, z_path.row(n + 1).iter().zip(&m1).map(|(a, b)| a - b));
        let dbeta = lu
            .solve(&dz)
            .ok_or_else(|| DynamicsError::Singular(format!("step {n}")))?;
        noise.push(dbeta.as_slice());
        let row = drift.push_zeroed();
        if cutoff.is_none_or(|c| n < c) {
            let dm = DVector::from_iterator(nl, m2.iter().zip(&m1).map(|(a, b)| (a - b) / dt));
            let d = lu.solve(&dm).ok_or_else(|| DynamicsError::Singular(format!("step {n}")))?;
            row.copy_from_slice(d.as_slice());
        }
    }
    Ok(BindingDrift { drift, reference_noise: noise })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn llr_examples() {
        let zero = Trajectory::from_rows(1, vec![0.0; 4]);
        let dw = Trajectory::from_rows(1, vec![0.1, -0.2, 0.3, 0.05]);
        assert_eq!(log_likelihood_ratio(&zero, &dw, 0.01).unwrap(), 0.0);
        let d = Trajectory::from_rows(1, vec![2.0; 4]);
        // 2·(0.25) − ½·4·4·0.01
        let v = log_likelihood_ratio(&d, &dw, 0.01).unwrap();
        assert!((v - (0.5 - 0.08)).abs() < 1e-14);
        assert!(log_likelihood_ratio(&d, &Trajectory::from_rows(1, vec![0.0; 3]), 0.01).is_err());
    }

    #[test]
    fn trajectory_rows() {
        let mut t = Trajectory::new(2);
        t.push(&[1.0, 2.0]);
        t.push_zeroed()[1] = 5.0;
        assert_eq!(t.len(), 2);
        assert_eq!(t.row(1), &[0.0, 5.0]);
        assert_eq!(t.last(), &[0.0, 5.0]);
    }
}
