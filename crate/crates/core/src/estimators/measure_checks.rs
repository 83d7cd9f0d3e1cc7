use crate::measure::{
    coupling_meet_lower_bound, maximal_coupling_exact, meet, pushforward_coupling, tv_distance, ProbabilityMeasure,
};
use crate::rng::stream;
use rand::Rng;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeasureBatteryReport {
    pub instances: usize,
    /// Largest `|P(Z₁ = Z₂) − (1 − TV)|`.
    pub diagonal_err: f64,
    /// Largest `|P(Z₁ = Z₂ ∈ Γ) − (μ₁∧μ₂)(Γ)|` over random `Γ`.
    pub meet_err: f64,
    /// Largest marginal discrepancy of the exact and pushforward couplings.
    pub marginal_err: f64,
    /// Largest gap between the image diagonal mass and `1 − TV` of the
    /// image laws.
    pub pushforward_err: f64,
    /// Instances where the moment lower bound exceeded the meet mass.
    pub bound_violations: usize,
    pub bound_checked: usize,
    pub pass: bool,
}

/// Random measure on labels `0..n` with roughly half the labels charged.
pub fn random_measure<R: Rng>(rng: &mut R, n: usize) -> ProbabilityMeasure {
    let mut w: Vec<f64> = (0..n).map(|_| if rng.random::<f64>() < 0.5 { rng.random::<f64>() } else { 0.0 }).collect();
    if w.iter().all(|v| *v == 0.0) {
        w[rng.random_range(0..n)] = 1.0;
    }
    let total: f64 = w.iter().sum();
    ProbabilityMeasure::from_weights(w.iter().map(|v| v / total).collect()).expect("normalized weights")
}

fn marginal_gap(a: &[f64], labels: &[String], m: &ProbabilityMeasure) -> f64 {
    labels.iter().zip(a).map(|(l, w)| (w - m.weight(l)).abs()).fold(0.0, f64::max)
}

/// Checks the exact coupling identities on random pairs with supports up
/// to `max_support` labels.
pub fn measure_battery(instances: usize, max_support: usize, seed: u64) -> MeasureBatteryReport {
    let mut r = MeasureBatteryReport {
        instances,
        diagonal_err: 0.0,
        meet_err: 0.0,
        marginal_err: 0.0,
        pushforward_err: 0.0,
        bound_violations: 0,
        bound_checked: 0,
        pass: false,
    };
    for i in 0..instances {
        let mut rng = stream(seed, &[i as u64]);
        let n = rng.random_range(1..=max_support.max(1));
        let (m1, m2) = (random_measure(&mut rng, n), random_measure(&mut rng, n));
        let tv = tv_distance(&m1, &m2);
        let c = maximal_coupling_exact(&m1, &m2);
        r.diagonal_err = r.diagonal_err.max((c.diagonal_mass() - (1.0 - tv)).abs());
        r.marginal_err = r
            .marginal_err
            .max(marginal_gap(c.row_marginal().weights(), c.row_marginal().labels(), &m1))
            .max(marginal_gap(c.col_marginal().weights(), c.col_marginal().labels(), &m2));
        let gamma: Vec<bool> = (0..n).map(|_| rng.random::<bool>()).collect();
        let inside = |l: &str| l.parse::<usize>().is_ok_and(|k| gamma[k]);
        let lhs = c.diagonal_mass_where(inside);
        let rhs = meet(&m1, &m2).mass_of(inside);
        r.meet_err = r.meet_err.max((lhs - rhs).abs());

        let classes = rng.random_range(1..=n);
        let f0 = |l: &str| (l.parse::<usize>().unwrap() % classes).to_string();
        let pc = pushforward_coupling(&m1, &m2, f0);
        r.marginal_err = r
            .marginal_err
            .max(marginal_gap(pc.row_marginal().weights(), pc.row_marginal().labels(), &m1))
            .max(marginal_gap(pc.col_marginal().weights(), pc.col_marginal().labels(), &m2));
        let img = pc.pushforward(f0);
        let tv_img = tv_distance(&m1.pushforward(f0), &m2.pushforward(f0));
        r.pushforward_err = r.pushforward_err.max((img.diagonal_mass() - (1.0 - tv_img)).abs());

        let p = 1.0 + 3.0 * rng.random::<f64>() + 1e-3;
        // the bound needs μ₁ and μ₂ equivalent on A
        let a: Vec<usize> = (0..n).filter(|&k| gamma[k] && m1.weights()[k] > 0.0 && m2.weights()[k] > 0.0).collect();
        let c_mom: f64 = a
            .iter()
            .map(|&k| (m1.weights()[k] / m2.weights()[k]).powf(p + 1.0) * m2.weights()[k])
            .sum();
        let mass_a: f64 = a.iter().map(|&k| m1.weights()[k]).sum();
        // any C > 1 dominating the moment is admissible
        if let Ok(b) = coupling_meet_lower_bound(p, c_mom.max(1.0 + 1e-12), mass_a.min(1.0)) {
            r.bound_checked += 1;
            let meet_a: f64 = a.iter().map(|&k| m1.weights()[k].min(m2.weights()[k])).sum();
            if b > meet_a + 1e-12 {
                r.bound_violations += 1;
            }
        }
    }
    r.pass = r.diagonal_err <= 1e-12
        && r.meet_err <= 1e-12
        && r.marginal_err <= 1e-12
        && r.pushforward_err <= 1e-12
        && r.bound_violations == 0;
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn battery_passes() {
        let r = measure_battery(200, 16, 1);
        assert!(r.pass, "{r:?}");
        assert!(r.bound_checked > 0);
    }
}
