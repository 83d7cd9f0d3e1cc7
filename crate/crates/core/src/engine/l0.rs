//! The `l0` bookkeeping process.
//!
//! `l0(k)` is the first block index `l ≤ k` since which the pair has kept
//! equal low modes and equal high noise while staying within the energy
//! budget, starting from a pair with `𝓗_l ≤ d0`; it is `None` (∞) when no
//! such `l` exists. Only two candidates can ever be valid at block `k + 1`:
//! the current value `l0(k)`, which persists if the block keeps it valid,
//! and the fresh index `k + 1`.

use super::{EngineError, SchedulerConfig};
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct L0State {
    pub k: usize,
    pub l0: Option<usize>,
    /// `∫_{l0·T}^{kT}` of each component's energy rate, zero when `l0` is
    /// `None`.
    pub offsets: [f64; 2],
}

/// Facts about one block `[kT, (k+1)T]` needed to advance `l0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockData {
    /// Low modes and high noise equal on the whole block.
    pub path_equal: bool,
    /// Low modes equal at `(k+1)T`.
    pub terminal_low_equal: bool,
    /// Largest low-mode discrepancy at `(k+1)T`.
    pub low_gap: f64,
    /// `𝓗_{k+1} = 𝓗(u₁) + 𝓗(u₂)` at `(k+1)T`.
    pub h_end: f64,
    /// Energy budget since `l0(k)·T` held on the block for both components.
    pub persist_energy_ok: bool,
    /// Energy budget at time zero of a fresh candidate `k + 1` holds.
    pub fresh_energy_ok: bool,
    /// Energy integrals accumulated over the block by each component.
    pub increments: [f64; 2],
}

impl L0State {
    pub fn initial(l0: Option<usize>) -> Self {
        Self { k: 0, l0, offsets: [0.0; 2] }
    }
}

pub fn l0_update(state: &L0State, data: &BlockData, cfg: &SchedulerConfig) -> Result<L0State, EngineError> {
    if data.terminal_low_equal && data.low_gap > cfg.equality_tol {
        return Err(EngineError::Contract(format!(
            "block {} flagged equal but low modes differ by {}",
            state.k, data.low_gap
        )));
    }
    if data.path_equal && !data.terminal_low_equal {
        return Err(EngineError::Contract(format!("block {} flagged path-equal without terminal equality", state.k)));
    }
    let k1 = state.k + 1;
    if let Some(l) = state.l0 {
        if data.path_equal && data.persist_energy_ok {
            let offsets = [state.offsets[0] + data.increments[0], state.offsets[1] + data.increments[1]];
            return Ok(L0State { k: k1, l0: Some(l), offsets });
        }
    }
    let fresh = data.terminal_low_equal && data.h_end <= cfg.d0 && data.fresh_energy_ok;
    Ok(L0State { k: k1, l0: fresh.then_some(k1), offsets: [0.0; 2] })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(path_equal: bool, terminal: bool, h_end: f64, persist: bool) -> BlockData {
        BlockData {
            path_equal,
            terminal_low_equal: terminal,
            low_gap: 0.0,
            h_end,
            persist_energy_ok: persist,
            fresh_energy_ok: true,
            increments: [1.0, 2.0],
        }
    }

    #[test]
    fn all_predicates_fail() {
        let cfg = SchedulerConfig::default();
        let s = l0_update(&L0State::initial(None), &data(false, false, 0.0, false), &cfg).unwrap();
        assert_eq!(s.l0, None);
        assert_eq!(s.k, 1);
    }

    #[test]
    fn fresh_coupling() {
        let cfg = SchedulerConfig::default();
        let s = L0State { k: 3, l0: None, offsets: [0.0; 2] };
        let s = l0_update(&s, &data(false, true, cfg.d0 * 0.5, false), &cfg).unwrap();
        assert_eq!(s.l0, Some(4));
        let s = L0State { k: 3, l0: None, offsets: [0.0; 2] };
        let s = l0_update(&s, &data(false, true, cfg.d0 * 2.0, false), &cfg).unwrap();
        assert_eq!(s.l0, None);
    }

    #[test]
    fn persistence_accumulates_offsets() {
        let cfg = SchedulerConfig::default();
        let mut s = L0State { k: 2, l0: Some(1), offsets: [0.5, 0.5] };
        for _ in 0..3 {
            s = l0_update(&s, &data(true, true, cfg.d0 * 10.0, true), &cfg).unwrap();
        }
        assert_eq!(s.l0, Some(1));
        assert_eq!(s.k, 5);
        assert_eq!(s.offsets, [3.5, 6.5]);
        // energy failure breaks persistence; a fresh start is still possible
        let s = l0_update(&s, &data(true, true, 0.0, false), &cfg).unwrap();
        assert_eq!(s.l0, Some(6));
    }

    #[test]
    fn inconsistent_flags() {
        let cfg = SchedulerConfig::default();
        let mut d = data(true, true, 0.0, true);
        d.low_gap = 1.0;
        assert!(l0_update(&L0State::initial(Some(0)), &d, &cfg).is_err());
        let d = data(true, false, 0.0, true);
        assert!(l0_update(&L0State::initial(Some(0)), &d, &cfg).is_err());
    }
}
