use super::{MeasureError, Result};
use crate::rng::open_uniform;
use rand::Rng;

/// Which law the wrapped evaluator uses as its reference measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reference {
    /// The evaluator returns `log(dμ₂/dμ₁)`.
    First,
    /// The evaluator returns `log(dμ₁/dμ₂)`.
    Second,
}

/// Log density ratio between two path laws.
pub struct DensityRatioOracle<F> {
    pub log_ratio: F,
    pub reference: Reference,
}

impl<F> DensityRatioOracle<F> {
    pub fn new(log_ratio: F, reference: Reference) -> Self {
        Self { log_ratio, reference }
    }

    /// `log(dμ₂/dμ₁)(z)`, regardless of the evaluator's reference.
    pub fn log_d2_d1<P>(&self, z: &P) -> f64
    where
        F: Fn(&P) -> f64,
    {
        match self.reference {
            Reference::First => (self.log_ratio)(z),
            Reference::Second => -(self.log_ratio)(z),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledDraw<P> {
    pub z1: P,
    pub z2: P,
    pub coupled: bool,
    /// Draws from `μ₂` spent in the rejection loop.
    pub trials: usize,
}

/// Draws `(Z₁, Z₂)` from a maximal coupling of two path laws.
///
/// `Z₁ ∼ μ₁` is kept for both components with probability
/// `min(1, dμ₂/dμ₁(Z₁))`; otherwise `Z₂` is drawn from `μ₂` restricted to
/// where `μ₂` exceeds `μ₁`, by rejection. `P(Z₁ = Z₂) = (μ₁∧μ₂)(E)`.
pub fn maximal_coupling_sample<P, F, R, S1, S2>(
    mut sample1: S1,
    ratio: &DensityRatioOracle<F>,
    mut sample2: S2,
    rng: &mut R,
    cap: usize,
) -> Result<CoupledDraw<P>>
where
    P: Clone,
    F: Fn(&P) -> f64,
    R: Rng + ?Sized,
    S1: FnMut(&mut R) -> P,
    S2: FnMut(&mut R) -> P,
{
    let z1 = sample1(rng);
    let u = open_uniform(rng);
    if u.ln() <= ratio.log_d2_d1(&z1) {
        return Ok(CoupledDraw { z2: z1.clone(), z1, coupled: true, trials: 0 });
    }
    for trial in 1..=cap {
        let z2 = sample2(rng);
        let u = open_uniform(rng);
        if u.ln() > -ratio.log_d2_d1(&z2) {
            return Ok(CoupledDraw { z1, z2, coupled: false, trials: trial });
        }
    }
    Err(MeasureError::CouplingFailure(cap))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn zero_ratio_always_couples() {
        let mut rng = stream(3, &[0]);
        let oracle = DensityRatioOracle::new(|_: &f64| 0.0, Reference::First);
        for _ in 0..100 {
            let d = maximal_coupling_sample(|r: &mut _| open_uniform(r), &oracle, |r: &mut _| open_uniform(r), &mut rng, 10)
                .unwrap();
            assert!(d.coupled);
            assert_eq!(d.z1, d.z2);
        }
    }

    #[test]
    fn disjoint_supports_never_couple() {
        // μ₁ uniform on (0,1], μ₂ uniform on (1,2].
        let mut rng = stream(3, &[1]);
        let oracle = DensityRatioOracle::new(
            |z: &f64| if *z <= 1.0 { f64::NEG_INFINITY } else { f64::INFINITY },
            Reference::First,
        );
        for _ in 0..100 {
            let d = maximal_coupling_sample(
                |r: &mut _| open_uniform(r),
                &oracle,
                |r: &mut _| 1.0 + open_uniform(r),
                &mut rng,
                10,
            )
            .unwrap();
            assert!(!d.coupled);
            assert_eq!(d.trials, 1);
        }
    }

    #[test]
    fn cap_surfaces_as_failure() {
        let mut rng = stream(3, &[2]);
        // Degenerate oracle that rejects on both branches.
        let oracle = DensityRatioOracle::new(|_: &f64| f64::NEG_INFINITY, Reference::First);
        let r = maximal_coupling_sample(|r: &mut _| open_uniform(r), &oracle, |r: &mut _| open_uniform(r), &mut rng, 5);
        assert_eq!(r, Err(MeasureError::CouplingFailure(5)));
    }
}
