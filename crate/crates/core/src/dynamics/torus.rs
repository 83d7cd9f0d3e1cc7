use super::functions::TorusDrift;
use super::{DynamicsError, PathSegment, Result, Trajectory};
use crate::rng::fill_gaussian;
use rand::Rng;

/// `dX + f(X)dt = dW` on the circle `[0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TorusModel {
    pub drift: TorusDrift,
    pub dt: f64,
    pub block_len: f64,
}

impl TorusModel {
    pub fn new(drift: TorusDrift, dt: f64, block_len: f64) -> Result<Self> {
        if !(dt > 0.0 && block_len > 0.0) {
            return Err(DynamicsError::Config("dt and T must be positive".into()));
        }
        let steps = block_len / dt;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return Err(DynamicsError::Config(format!("T = {block_len} is not a multiple of dt = {dt}")));
        }
        let (lip, sup) = (drift.lip(), drift.sup());
        let n = 1024;
        for i in 0..n {
            let (a, b) = (i as f64 / n as f64, (i + 1) as f64 / n as f64);
            let (fa, fb) = (drift.eval(a), drift.eval(b % 1.0));
            if fa.abs() > sup * (1.0 + 1e-12) + 1e-15 || (fb - fa).abs() > lip * circle_dist(a, b) * (1.0 + 1e-9) + 1e-12 {
                return Err(DynamicsError::Config(format!("declared drift bounds fail near x = {a}")));
            }
        }
        Ok(Self { drift, dt, block_len })
    }

    pub fn steps_per_block(&self) -> usize {
        (self.block_len / self.dt).round() as usize
    }

    /// Unwrapped Euler step.
    pub fn step_lifted(&self, x: f64, dw: f64) -> f64 {
        x - self.drift.eval(x.rem_euclid(1.0)) * self.dt + dw
    }

    /// Simulates the wrapped path from `x0`.
    pub fn simulate<R: Rng + ?Sized>(&self, x0: f64, n_steps: usize, t0: f64, rng: &mut R) -> PathSegment {
        let mut dw = vec![0.0; n_steps];
        fill_gaussian(rng, self.dt, &mut dw);
        let mut states = Trajectory::with_capacity(1, n_steps + 1);
        let mut x = wrap(x0);
        states.push(&[x]);
        for w in &dw {
            x = step_torus(self, x, *w);
            states.push(&[x]);
        }
        PathSegment { t0, dt: self.dt, states, dw: Trajectory::from_rows(1, dw), seed: 0 }
    }
}

/// Reduces `x` to `[0, 1)`.
pub fn wrap(x: f64) -> f64 {
    let r = x.rem_euclid(1.0);
    if r >= 1.0 { 0.0 } else { r }
}

/// Representative of `b − a` in `[−½, ½)`.
pub fn signed_shortest(a: f64, b: f64) -> f64 {
    let d = (b - a).rem_euclid(1.0);
    if d >= 0.5 { d - 1.0 } else { d }
}

pub fn circle_dist(a: f64, b: f64) -> f64 {
    signed_shortest(a, b).abs()
}

/// `x − f(x)·dt + dW`, wrapped.
pub fn step_torus(model: &TorusModel, x: f64, dw: f64) -> f64 {
    wrap(model.step_lifted(x, dw))
}

/// Drift turning the law of the shifted path `X̃ = X(·, x₁) + (T−t)/T·δ`
/// into the law of `X(·, x₂)`, with `δ` the signed shortest difference.
///
/// `path` is the lifted `X̃` on the block grid. On step `n`,
/// `dₙ = δ/T + f(X̃ₙ − sₙ) − f(X̃ₙ)` where `sₙ = (N − n)/N·δ`.
pub fn girsanov_drift_torus(model: &TorusModel, x1: f64, x2: f64, path: &[f64]) -> Result<Vec<f64>> {
    let n_steps = model.steps_per_block();
    if path.len() != n_steps + 1 {
        return Err(DynamicsError::Contract(format!("path has {} points, block needs {}", path.len(), n_steps + 1)));
    }
    let delta = signed_shortest(x1, x2);
    let bound = delta.abs() / model.block_len + 2.0 * model.drift.sup();
    let mut d = Vec::with_capacity(n_steps);
    for (n, &xt) in path[..n_steps].iter().enumerate() {
        let s = shift(delta, n, n_steps);
        let v = delta / model.block_len + model.drift.eval((xt - s).rem_euclid(1.0)) - model.drift.eval(xt.rem_euclid(1.0));
        if v.abs() > bound * (1.0 + 1e-12) + 1e-12 {
            return Err(DynamicsError::Contract(format!("drift {v} exceeds bound {bound}")));
        }
        d.push(v);
    }
    Ok(d)
}

/// Line shift `(N − n)/N · δ`, exactly zero at the block end.
pub fn shift(delta: f64, n: usize, n_steps: usize) -> f64 {
    (n_steps - n) as f64 / n_steps as f64 * delta
}
