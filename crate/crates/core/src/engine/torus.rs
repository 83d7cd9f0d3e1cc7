use super::{l0_update, BlockData, BlockRecord, Branch, EngineError, EpisodeResult, L0State, SchedulerConfig};
use crate::dynamics::{circle_dist, girsanov_drift_torus, signed_shortest, wrap, TorusModel};
use crate::measure::{maximal_coupling_sample, DensityRatioOracle, Reference};
use crate::rng::{fill_gaussian, StreamRng};
use rand::Rng;

/// End points of a block of the torus pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TorusBlock {
    pub end1: f64,
    pub end2: f64,
    pub coupled: bool,
    pub trials: usize,
}

fn lifted_path<R: Rng + ?Sized>(m: &TorusModel, x0: f64, rng: &mut R) -> Vec<f64> {
    let n = m.steps_per_block();
    let mut dw = vec![0.0; n];
    fill_gaussian(rng, m.dt, &mut dw);
    let mut p = Vec::with_capacity(n + 1);
    let mut x = x0;
    p.push(x);
    for w in dw {
        x = m.step_lifted(x, w);
        p.push(x);
    }
    p
}

/// Maximal coupling of one block of the torus copies started at `x1` and
/// `x2`.
///
/// The first copy's path `X` is compared, after adding the line shift that
/// starts at `δ = x₂ − x₁` and vanishes at the block end, with the law of the
/// second copy. When the coupling succeeds the second copy follows the
/// shifted path and both copies end at the same point.
pub fn shifted_coupling_block_torus(
    m: &TorusModel,
    x1: f64,
    x2: f64,
    rng: &mut StreamRng,
    cap: usize,
) -> Result<TorusBlock, EngineError> {
    let n = m.steps_per_block();
    let delta = signed_shortest(x1, x2);
    let dt = m.dt;
    // Both candidate laws live on lifted paths started at x₁ + δ.
    let log_ratio = |p: &Result<Vec<f64>, EngineError>| -> f64 {
        let Ok(p) = p else { return f64::INFINITY };
        match girsanov_drift_torus(m, x1, x2, p) {
            Ok(d) => {
                let mut acc = 0.0;
                for (i, di) in d.iter().enumerate() {
                    let s = crate::dynamics::torus_shift(delta, i, n);
                    let mean1 = p[i] - delta * dt / m.block_len - m.drift.eval((p[i] - s).rem_euclid(1.0)) * dt;
                    let a = p[i + 1] - mean1;
                    acc += di * a - 0.5 * di * di * dt;
                }
                acc
            }
            Err(_) => f64::INFINITY,
        }
    };
    let oracle = DensityRatioOracle::new(log_ratio, Reference::First);
    let draw = maximal_coupling_sample(
        |r: &mut StreamRng| {
            let mut p = lifted_path(m, x1, r);
            for (i, v) in p.iter_mut().enumerate() {
                *v += crate::dynamics::torus_shift(delta, i, n);
            }
            Ok(p)
        },
        &oracle,
        |r: &mut StreamRng| Ok(lifted_path(m, x1 + delta, r)),
        rng,
        cap,
    )?;
    let p1 = draw.z1?;
    // the shift is exactly zero at the block end, so the first copy's end
    // point is read off the shifted path unchanged
    let end1 = wrap(p1[n]);
    if draw.coupled {
        // surface a bad drift bound rather than silently accepting
        girsanov_drift_torus(m, x1, x2, &p1)?;
        return Ok(TorusBlock { end1, end2: end1, coupled: true, trials: 0 });
    }
    let p2 = draw.z2?;
    Ok(TorusBlock { end1, end2: wrap(p2[n]), coupled: false, trials: draw.trials })
}

pub(super) fn simulate_pair_torus(
    m: &TorusModel,
    x1: f64,
    x2: f64,
    n_blocks: usize,
    cfg: &SchedulerConfig,
    rng: &mut StreamRng,
) -> Result<EpisodeResult, EngineError> {
    let (mut a, mut b) = (wrap(x1), wrap(x2));
    let mut st = L0State::initial((a == b).then_some(0));
    let mut out = EpisodeResult {
        states1: vec![vec![a]],
        states2: vec![vec![b]],
        l0: vec![st.l0],
        h: vec![0.0],
        blocks: Vec::with_capacity(n_blocks),
    };
    for k in 0..n_blocks {
        let (blk, branch) = if a == b {
            let p = lifted_path(m, a, rng);
            let e = wrap(p[p.len() - 1]);
            (TorusBlock { end1: e, end2: e, coupled: true, trials: 0 }, Branch::Identical)
        } else {
            (shifted_coupling_block_torus(m, a, b, rng, cfg.rejection_cap)?, Branch::Uncoupled)
        };
        let path_equal = branch == Branch::Identical;
        let data = BlockData {
            path_equal,
            terminal_low_equal: blk.coupled,
            low_gap: circle_dist(blk.end1, blk.end2),
            h_end: 0.0,
            persist_energy_ok: true,
            fresh_energy_ok: true,
            increments: [0.0; 2],
        };
        st = l0_update(&st, &data, cfg)?;
        out.blocks.push(BlockRecord {
            k,
            branch,
            coupled: blk.coupled,
            path_equal,
            terminal_low_equal: blk.coupled,
            energy_ok: true,
            fresh_energy_ok: true,
            h_end: 0.0,
            distance: circle_dist(blk.end1, blk.end2),
            trials: blk.trials,
        });
        a = blk.end1;
        b = blk.end2;
        out.l0.push(st.l0);
        out.h.push(0.0);
        out.states1.push(vec![a]);
        out.states2.push(vec![b]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::TorusDrift;
    use crate::rng::stream;

    #[test]
    fn coupled_blocks_end_equal() {
        let m = TorusModel::new(TorusDrift::Sine { amplitude: 0.5, frequency: 1, phase: 0.0 }, 0.01, 1.0).unwrap();
        let mut hits = 0;
        for e in 0..200 {
            let mut rng = stream(5, &[e]);
            let b = shifted_coupling_block_torus(&m, 0.1, 0.4, &mut rng, 1_000_000).unwrap();
            if b.coupled {
                hits += 1;
                assert_eq!(b.end1.to_bits(), b.end2.to_bits());
            }
        }
        assert!(hits > 50 && hits < 200, "{hits}");
    }

    #[test]
    fn episode_stays_coupled() {
        let m = TorusModel::new(TorusDrift::Zero, 0.01, 1.0).unwrap();
        let mut rng = stream(6, &[0]);
        let e = simulate_pair_torus(&m, 0.0, 0.3, 10, &SchedulerConfig::default(), &mut rng).unwrap();
        if let Some(l) = e.coupling_block() {
            for k in l..=10 {
                assert_eq!(e.states1[k], e.states2[k]);
                assert_eq!(e.l0[k], Some(l));
            }
        }
    }
}
