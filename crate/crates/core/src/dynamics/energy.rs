use super::SplitSystem;
use serde::Serialize;

/// Running energy `E_u(t, t₀) = 𝓗(u(t)) + Σ_c ∫_{t₀}^t q_c(u(s)) ds`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyLedger {
    pub t0: f64,
    pub t: f64,
    /// `𝓗(u(t))`.
    pub terminal: f64,
    /// One running integral per component of the energy.
    pub integrals: Vec<f64>,
    rates: Vec<f64>,
}

impl EnergyLedger {
    pub fn start<S: SplitSystem + ?Sized>(model: &S, state: &[f64], t0: f64) -> Self {
        let (x, y) = model.split(state);
        let rates = model.energy_rates(x, y);
        Self { t0, t: t0, terminal: model.lyapunov(x, y), integrals: vec![0.0; rates.len()], rates }
    }

    pub fn value(&self) -> f64 {
        self.terminal + self.integrals.iter().sum::<f64>()
    }

    pub fn integral(&self) -> f64 {
        self.integrals.iter().sum()
    }
}

/// Advances the ledger to the state reached `dt` later, using the trapezoid
/// rule for each running integral.
pub fn energy_update<S: SplitSystem + ?Sized>(model: &S, ledger: &EnergyLedger, state: &[f64], dt: f64) -> EnergyLedger {
    let (x, y) = model.split(state);
    let rates = model.energy_rates(x, y);
    let integrals = ledger
        .integrals
        .iter()
        .zip(ledger.rates.iter().zip(&rates))
        .map(|(i, (a, b))| i + 0.5 * (a + b) * dt)
        .collect();
    EnergyLedger { t0: ledger.t0, t: ledger.t + dt, terminal: model.lyapunov(x, y), integrals, rates }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::spectral::eigenvalue;
    use crate::dynamics::{CglCase, CglModel, NoiseSettings};
    use num_complex::Complex64;

    fn linear_model(case: CglCase) -> CglModel {
        let mut m = CglModel::new(0.1, 1.0, 1.0, 1.0, (8, 2, 1), NoiseSettings::default(), (1e-3, 1.0), case).unwrap();
        m.nonlinear = false;
        m
    }

    #[test]
    fn zero_path_keeps_zero_ledger() {
        let m = linear_model(CglCase::H1Subcritical);
        let z = vec![0.0; 16];
        let mut l = EnergyLedger::start(&m, &z, 0.0);
        assert_eq!(l.value(), 0.0);
        for _ in 0..10 {
            l = energy_update(&m, &l, &z, 1e-3);
        }
        assert_eq!(l.value(), 0.0);
    }

    #[test]
    fn starts_at_lyapunov_value() {
        let m = linear_model(CglCase::H1Subcritical);
        let u: Vec<f64> = (0..16).map(|i| 0.1 * i as f64).collect();
        let l = EnergyLedger::start(&m, &u, 2.0);
        let (x, y) = m.split(&u);
        assert_eq!(l.value(), m.lyapunov(x, y));
    }

    #[test]
    fn single_linear_mode_closed_form() {
        let m = linear_model(CglCase::L2Subcritical);
        let a0 = Complex64::new(0.8, -0.3);
        let mu = eigenvalue(1);
        let (dt, steps) = (1e-3, 500);
        let state = |t: f64| {
            let a = a0 * (-Complex64::new(0.1, 1.0) * mu * t).exp();
            let mut v = vec![0.0; 16];
            v[0] = a.re;
            v[1] = a.im;
            v
        };
        let mut l = EnergyLedger::start(&m, &state(0.0), 0.0);
        for n in 1..=steps {
            l = energy_update(&m, &l, &state(n as f64 * dt), dt);
        }
        let t = steps as f64 * dt;
        let decay = (-2.0 * 0.1 * mu * t).exp();
        let exact = a0.norm_sqr() * decay + 0.1 * mu * a0.norm_sqr() * (1.0 - decay) / (2.0 * 0.1 * mu);
        // trapezoid error is O(dt²)
        assert!((l.value() - exact).abs() < 1e-5, "{} vs {}", l.value(), exact);
        assert!((l.terminal - a0.norm_sqr() * decay).abs() < 1e-12);
    }
}
