//! Scalar coefficient functions with known sup and Lipschitz bounds.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Drift on the unit circle `[0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TorusDrift {
    Zero,
    Constant { value: f64 },
    /// `a·sin(2π(k·x + φ))` with integer frequency `k`.
    Sine { amplitude: f64, frequency: u32, phase: f64 },
}

impl TorusDrift {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            TorusDrift::Zero => 0.0,
            TorusDrift::Constant { value } => value,
            TorusDrift::Sine { amplitude, frequency, phase } => {
                amplitude * (2.0 * PI * (frequency as f64 * x + phase)).sin()
            }
        }
    }

    pub fn sup(&self) -> f64 {
        match *self {
            TorusDrift::Zero => 0.0,
            TorusDrift::Constant { value } => value.abs(),
            TorusDrift::Sine { amplitude, .. } => amplitude.abs(),
        }
    }

    pub fn lip(&self) -> f64 {
        match *self {
            TorusDrift::Zero | TorusDrift::Constant { .. } => 0.0,
            TorusDrift::Sine { amplitude, frequency, .. } => 2.0 * PI * frequency as f64 * amplitude.abs(),
        }
    }
}

/// Function of the pair `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PairFn {
    Zero,
    Constant { value: f64 },
    /// `a·sin(wx·x + wy·y + φ)`.
    Sine { amplitude: f64, wx: f64, wy: f64, phase: f64 },
}

impl PairFn {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match *self {
            PairFn::Zero => 0.0,
            PairFn::Constant { value } => value,
            PairFn::Sine { amplitude, wx, wy, phase } => amplitude * (wx * x + wy * y + phase).sin(),
        }
    }

    pub fn sup(&self) -> f64 {
        match *self {
            PairFn::Zero => 0.0,
            PairFn::Constant { value } => value.abs(),
            PairFn::Sine { amplitude, .. } => amplitude.abs(),
        }
    }

    /// Lipschitz constants in `x` and in `y`.
    pub fn lip(&self) -> (f64, f64) {
        match *self {
            PairFn::Zero | PairFn::Constant { .. } => (0.0, 0.0),
            PairFn::Sine { amplitude, wx, wy, .. } => ((amplitude * wx).abs(), (amplitude * wy).abs()),
        }
    }
}

/// Positive function of one real variable, used for noise amplitudes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LineFn {
    Constant { value: f64 },
    /// `base + amplitude / (1 + x²)`.
    Bump { base: f64, amplitude: f64 },
    /// `base + amplitude·cos(x)`.
    Cosine { base: f64, amplitude: f64 },
}

impl LineFn {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            LineFn::Constant { value } => value,
            LineFn::Bump { base, amplitude } => base + amplitude / (1.0 + x * x),
            LineFn::Cosine { base, amplitude } => base + amplitude * x.cos(),
        }
    }

    pub fn sup(&self) -> f64 {
        match *self {
            LineFn::Constant { value } => value.abs(),
            LineFn::Bump { base, amplitude } | LineFn::Cosine { base, amplitude } => base.abs() + amplitude.abs(),
        }
    }

    /// Greatest lower bound over the real line.
    pub fn inf(&self) -> f64 {
        match *self {
            LineFn::Constant { value } => value,
            LineFn::Bump { base, amplitude } => base + amplitude.min(0.0),
            LineFn::Cosine { base, amplitude } => base - amplitude.abs(),
        }
    }

    pub fn lip(&self) -> f64 {
        match *self {
            LineFn::Constant { .. } => 0.0,
            // max |d/dx (1+x²)⁻¹| = 3√3/8
            LineFn::Bump { amplitude, .. } => amplitude.abs() * 3.0 * 3f64.sqrt() / 8.0,
            LineFn::Cosine { amplitude, .. } => amplitude.abs(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_lip(f: impl Fn(f64) -> f64, lip: f64, sup: f64, lo: f64, hi: f64) {
        let n = 4000;
        let h = (hi - lo) / n as f64;
        for i in 0..n {
            let (a, b) = (lo + i as f64 * h, lo + (i + 1) as f64 * h);
            assert!((f(b) - f(a)).abs() <= lip * h * (1.0 + 1e-9) + 1e-15);
            assert!(f(a).abs() <= sup + 1e-15);
        }
    }

    #[test]
    fn declared_bounds_hold() {
        let t = TorusDrift::Sine { amplitude: 0.3, frequency: 2, phase: 0.1 };
        check_lip(|x| t.eval(x), t.lip(), t.sup(), 0.0, 1.0);
        let p = PairFn::Sine { amplitude: 0.5, wx: 1.0, wy: 2.0, phase: 0.0 };
        check_lip(|x| p.eval(x, 0.3), p.lip().0, p.sup(), -5.0, 5.0);
        check_lip(|y| p.eval(0.3, y), p.lip().1, p.sup(), -5.0, 5.0);
        let b = LineFn::Bump { base: 1.0, amplitude: 0.5 };
        check_lip(|x| b.eval(x), b.lip(), b.sup(), -5.0, 5.0);
        let c = LineFn::Cosine { base: 0.5, amplitude: 0.25 };
        check_lip(|x| c.eval(x), c.lip(), c.sup(), -5.0, 5.0);
        assert_eq!(c.inf(), 0.25);
    }

    #[test]
    fn json_shape() {
        let t: TorusDrift = serde_json::from_str(r#"{"kind":"sine","amplitude":1.0,"frequency":1,"phase":0.0}"#).unwrap();
        assert!((t.eval(0.25) - 1.0).abs() < 1e-15);
        let z: TorusDrift = serde_json::from_str(r#"{"kind":"zero"}"#).unwrap();
        assert_eq!(z, TorusDrift::Zero);
    }
}
