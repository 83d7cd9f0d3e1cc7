use super::stats::{exp_fit, wilson, ExpFit, Z95};
use crate::dynamics::sobolev_norm_sq_real;
use crate::engine::{run_episodes, CouplingModel, EngineError, SchedulerConfig};
use serde::{Deserialize, Serialize};

/// A sampled decay curve with an exponential fit `c·e^{−βt}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayCurve {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub half_widths: Vec<f64>,
    pub fit: Option<ExpFit>,
    /// Why the fit could not be made, when it could not.
    pub fit_error: Option<String>,
    pub complete: bool,
}

impl DecayCurve {
    fn new(times: Vec<f64>, values: Vec<f64>, half_widths: Vec<f64>, complete: bool) -> Self {
        let (fit, fit_error) = match exp_fit(&times, &values, None) {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(e.to_string())),
        };
        Self { times, values, half_widths, fit, fit_error, complete }
    }
}

/// A bounded Lipschitz functional on states, with its bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFn {
    /// `cos(w·u + phase)`.
    Cosine { weights: Vec<f64>, phase: f64 },
    /// `tanh(w·u − shift)`.
    Tanh { weights: Vec<f64>, shift: f64 },
    /// `u_i` clamped to `[−cap, cap]`.
    Clamp { index: usize, cap: f64 },
    /// `tanh(‖u‖_{H^s} / scale)` on interleaved spectral coordinates.
    SobolevTanh { s: f64, scale: f64 },
}

fn dot(w: &[f64], u: &[f64]) -> f64 {
    w.iter().zip(u).map(|(a, b)| a * b).sum()
}

impl TestFn {
    pub fn eval(&self, u: &[f64]) -> f64 {
        match self {
            TestFn::Cosine { weights, phase } => (dot(weights, u) + phase).cos(),
            TestFn::Tanh { weights, shift } => (dot(weights, u) - shift).tanh(),
            TestFn::Clamp { index, cap } => u[*index].clamp(-cap, *cap),
            TestFn::SobolevTanh { s, scale } => (sobolev_norm_sq_real(u, *s).sqrt() / scale).tanh(),
        }
    }

    pub fn sup(&self) -> f64 {
        match self {
            TestFn::Clamp { cap, .. } => *cap,
            _ => 1.0,
        }
    }

    /// Lipschitz constant in the Euclidean metric, or in `H^s` for the
    /// Sobolev variant.
    pub fn lip(&self) -> f64 {
        match self {
            TestFn::Cosine { weights, .. } | TestFn::Tanh { weights, .. } => dot(weights, weights).sqrt(),
            TestFn::Clamp { .. } => 1.0,
            TestFn::SobolevTanh { scale, .. } => 1.0 / scale,
        }
    }
}

/// Five functionals mixing all coordinates of a `dim`-dimensional state.
pub fn default_panel(dim: usize) -> Vec<TestFn> {
    let w = |f: &dyn Fn(usize) -> f64| (0..dim).map(f).collect::<Vec<_>>();
    vec![
        TestFn::Cosine { weights: w(&|i| if i == 0 { 1.0 } else { 0.0 }), phase: 0.0 },
        TestFn::Cosine { weights: w(&|i| 1.0 / (i + 1) as f64), phase: 0.7 },
        TestFn::Tanh { weights: w(&|i| if i % 2 == 0 { 1.0 } else { -0.5 }), shift: 0.2 },
        TestFn::Tanh { weights: w(&|_| 0.5), shift: -0.3 },
        TestFn::Clamp { index: dim.saturating_sub(1), cap: 1.0 },
    ]
}

/// Estimates `P(u₁(kT) ≠ u₂(kT))` at the requested block indices from
/// coupled episodes, declaring states equal when their distance is at most
/// `cfg.equality_tol`.
#[allow(clippy::too_many_arguments)]
pub fn tv_decay_curve<M: CouplingModel + ?Sized>(
    model: &M,
    u1: &[f64],
    u2: &[f64],
    blocks: &[usize],
    cfg: &SchedulerConfig,
    nsamples: usize,
    seed: u64,
) -> Result<DecayCurve, EngineError> {
    let horizon = blocks.iter().copied().max().unwrap_or(0);
    let batch = run_episodes(model, u1, u2, horizon, cfg, seed, nsamples)?;
    let n = batch.episodes.len();
    let mut values = Vec::with_capacity(blocks.len());
    let mut half = Vec::with_capacity(blocks.len());
    for &k in blocks {
        let apart = batch
            .episodes
            .iter()
            .filter(|e| model.distance(&e.states1[k], &e.states2[k]) > cfg.equality_tol)
            .count();
        let est = wilson(apart, n);
        values.push(est.value);
        half.push(f64::max(est.hi - est.value, est.value - est.lo));
    }
    let times = blocks.iter().map(|&k| k as f64 * model.block_len()).collect();
    Ok(DecayCurve::new(times, values, half, batch.complete))
}

/// `max_ψ |Ê ψ(u₁(kT)) − Ê ψ(u₂(kT))|` over a panel of bounded Lipschitz
/// functionals, estimated from paired differences along coupled episodes.
/// The half-width reported is that of the maximizing functional.
#[allow(clippy::too_many_arguments)]
pub fn lipb_decay_curve<M: CouplingModel + ?Sized>(
    model: &M,
    u1: &[f64],
    u2: &[f64],
    panel: &[TestFn],
    blocks: &[usize],
    cfg: &SchedulerConfig,
    nsamples: usize,
    seed: u64,
) -> Result<DecayCurve, EngineError> {
    let horizon = blocks.iter().copied().max().unwrap_or(0);
    let batch = run_episodes(model, u1, u2, horizon, cfg, seed, nsamples)?;
    let n = batch.episodes.len() as f64;
    let mut values = Vec::with_capacity(blocks.len());
    let mut half = Vec::with_capacity(blocks.len());
    for &k in blocks {
        let mut best = (0.0, 0.0);
        for psi in panel {
            let diffs: Vec<f64> =
                batch.episodes.iter().map(|e| psi.eval(&e.states1[k]) - psi.eval(&e.states2[k])).collect();
            let mean = diffs.iter().sum::<f64>() / n;
            let var = if n > 1.0 { diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
            if mean.abs() > best.0 || (best.0 == 0.0 && best.1 == 0.0) {
                best = (mean.abs(), Z95 * (var / n).sqrt());
            }
        }
        values.push(best.0);
        half.push(best.1);
    }
    let times = blocks.iter().map(|&k| k as f64 * model.block_len()).collect();
    Ok(DecayCurve::new(times, values, half, batch.complete))
}
