use super::functions::{LineFn, PairFn};
use super::{DynamicsError, Result, SplitSystem};
use nalgebra::DMatrix;

/// Two-dimensional system
///
/// `dX + 2X dt + f(X,Y) dt = σ_l(X) dβ`, `dY + 2Y dt + g(X,Y) dt = σ_h(X) dη`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowHighModel {
    pub f: PairFn,
    pub g: PairFn,
    pub sigma_l: LineFn,
    pub sigma_h: LineFn,
    pub k0: f64,
    pub dt: f64,
    pub block_len: f64,
    sigma0: f64,
}

const CHECK_RANGE: f64 = 10.0;
const CHECK_POINTS: usize = 81;

impl LowHighModel {
    pub fn new(f: PairFn, g: PairFn, sigma_l: LineFn, sigma_h: LineFn, k0: f64, dt: f64, block_len: f64) -> Result<Self> {
        if !(dt > 0.0 && block_len > 0.0) {
            return Err(DynamicsError::Config("dt and T must be positive".into()));
        }
        let steps = block_len / dt;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return Err(DynamicsError::Config(format!("T = {block_len} is not a multiple of dt = {dt}")));
        }
        let sigma0 = sigma_l.inf();
        if !(sigma0 > 0.0) {
            return Err(DynamicsError::Config(format!("σ_l has lower bound {sigma0} ≤ 0")));
        }
        let grid: Vec<f64> = (0..CHECK_POINTS)
            .map(|i| -CHECK_RANGE + 2.0 * CHECK_RANGE * i as f64 / (CHECK_POINTS - 1) as f64)
            .collect();
        for &x in &grid {
            if sigma_l.eval(x) < sigma0 {
                return Err(DynamicsError::Config(format!("σ_l({x}) below σ₀")));
            }
            for &y in &grid {
                if f.eval(x, y) * x + g.eval(x, y) * y < -(x * x + y * y + k0) {
                    return Err(DynamicsError::Config(format!("dissipativity fails at ({x}, {y})")));
                }
                for &y2 in &grid {
                    if (g.eval(x, y) - g.eval(x, y2)).abs() > (y - y2).abs() * (1.0 + 1e-12) + 1e-15 {
                        return Err(DynamicsError::Config(format!("g is not 1-Lipschitz in y at x = {x}")));
                    }
                }
            }
        }
        Ok(Self { f, g, sigma_l, sigma_h, k0, dt, block_len, sigma0 })
    }

    /// Trivial variant: `f = g = 0`, unit noise.
    pub fn trivial(dt: f64, block_len: f64) -> Result<Self> {
        let one = LineFn::Constant { value: 1.0 };
        Self::new(PairFn::Zero, PairFn::Zero, one, one, 0.0, dt, block_len)
    }

    pub fn default_model() -> Self {
        Self::new(
            PairFn::Sine { amplitude: 0.5, wx: 1.0, wy: 1.0, phase: 0.0 },
            PairFn::Sine { amplitude: 0.5, wx: 1.0, wy: 1.0, phase: 0.5 },
            LineFn::Bump { base: 1.0, amplitude: 0.5 },
            LineFn::Cosine { base: 0.5, amplitude: 0.25 },
            1.0,
            1e-3,
            1.0,
        )
        .expect("default toy model is valid")
    }
}

/// One explicit Euler–Maruyama step.
pub fn step_lowhigh(m: &LowHighModel, (x, y): (f64, f64), (db, de): (f64, f64)) -> (f64, f64) {
    let x1 = x - (2.0 * x + m.f.eval(x, y)) * m.dt + m.sigma_l.eval(x) * db;
    let y1 = y - (2.0 * y + m.g.eval(x, y)) * m.dt + m.sigma_h.eval(x) * de;
    (x1, y1)
}

impl SplitSystem for LowHighModel {
    fn low_dim(&self) -> usize {
        1
    }
    fn high_dim(&self) -> usize {
        1
    }
    fn dt(&self) -> f64 {
        self.dt
    }
    fn block_len(&self) -> f64 {
        self.block_len
    }

    fn means(&self, x: &[f64], y: &[f64], low: &mut [f64], high: &mut [f64]) -> Result<()> {
        let (x, y) = (x[0], y[0]);
        low[0] = x - (2.0 * x + self.f.eval(x, y)) * self.dt;
        high[0] = y - (2.0 * y + self.g.eval(x, y)) * self.dt;
        Ok(())
    }

    fn low_noise(&self, x: &[f64], out: &mut DMatrix<f64>) {
        out[(0, 0)] = self.sigma_l.eval(x[0]);
    }

    fn high_noise(&self, x: &[f64], out: &mut [f64]) {
        out[0] = self.sigma_h.eval(x[0]);
    }

    fn sigma0(&self) -> f64 {
        self.sigma0
    }

    fn lyapunov(&self, x: &[f64], y: &[f64]) -> f64 {
        x[0] * x[0] + y[0] * y[0]
    }

    fn energy_rates(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        vec![2.0 * (x[0] * x[0] + y[0] * y[0])]
    }
}
