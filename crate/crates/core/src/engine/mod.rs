//! Block-by-block construction of coupled pairs.
//!
//! An episode runs two copies of a model from two initial conditions over a
//! sequence of blocks of length `T`. Each block is handled by one of two
//! constructions, chosen by the `l0` process:
//!
//! * when the pair is coupled (`l0(k) ≤ k`), the laws of the low-mode path and
//!   high-mode noise seen from both initial conditions are coupled maximally,
//!   with the exact Girsanov ratio between them;
//! * otherwise the copies share their noise for a while, then make one
//!   attempt to bring the low modes together at the block end.
//!
//! Each copy taken alone always follows the model law.

mod l0;
mod split;
mod torus;

pub use l0::{l0_update, BlockData, L0State};
pub use split::{run_block_coupled, run_block_uncoupled, split_log_ratio, BlockOutcome};
pub use torus::{shifted_coupling_block_torus, TorusBlock};

use crate::dynamics::{self, CglModel, DynamicsError, LowHighModel, SplitSystem, TorusModel};
use crate::estimators::stats::{wilson, Estimate};
use crate::measure::{MeasureError, DEFAULT_REJECTION_CAP};
use crate::rng::{stream, StreamRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicBool, Ordering};
use thiserror::Error;

static INTERRUPTED: AtomicBool = AtomicBool::new(false);

/// Requests that batch runs stop scheduling new episodes.
pub fn request_interrupt() {
    INTERRUPTED.store(true, Ordering::SeqCst);
}

pub fn interrupted() -> bool {
    INTERRUPTED.load(Ordering::Relaxed)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error("internal consistency: {0}")]
    Contract(String),
    #[error("invalid scheduler configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchedulerConfig {
    /// Coupling ball radius for `𝓗_k`.
    pub d0: f64,
    /// Re-entry radius of the Lyapunov structure.
    #[serde(rename = "R0")]
    pub r0: f64,
    /// Energy budget `ℵ`.
    pub aleph: f64,
    /// Energy growth rate `B`.
    #[serde(rename = "B")]
    pub b_rate: f64,
    /// Extra allowance `C_N(1 + t^α)` for the second copy on its first block.
    #[serde(rename = "C_N")]
    pub c_n: f64,
    pub alpha: f64,
    pub max_blocks: usize,
    /// Fraction of an uncoupled block devoted to the coupling attempt.
    pub attempt_fraction: f64,
    /// Energy functionals are sampled every `energy_stride` steps.
    pub energy_stride: usize,
    pub rejection_cap: usize,
    /// Tolerance under which continuous states are declared equal.
    pub equality_tol: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            d0: 4.0,
            r0: 8.0,
            aleph: 20.0,
            b_rate: 4.0,
            c_n: 10.0,
            alpha: 1.0,
            max_blocks: 50,
            attempt_fraction: 0.5,
            energy_stride: 10,
            rejection_cap: DEFAULT_REJECTION_CAP,
            equality_tol: 1e-9,
        }
    }
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let positive = [
            ("d0", self.d0),
            ("R0", self.r0),
            ("B", self.b_rate),
            ("alpha", self.alpha),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(*v > 0.0)) {
            return Err(EngineError::Config(format!("{name} = {v} must be positive")));
        }
        if !(self.aleph >= 0.0 && self.c_n >= 0.0) {
            return Err(EngineError::Config("ℵ and C_N must be nonnegative".into()));
        }
        if self.r0 < self.d0 {
            return Err(EngineError::Config(format!("R0 = {} must be at least d0 = {}", self.r0, self.d0)));
        }
        if !(0.0..=1.0).contains(&self.attempt_fraction) {
            return Err(EngineError::Config("attempt_fraction must lie in [0, 1]".into()));
        }
        if self.energy_stride == 0 || self.rejection_cap == 0 || self.max_blocks == 0 {
            return Err(EngineError::Config("energy_stride, rejection_cap and max_blocks must be positive".into()));
        }
        Ok(())
    }

    /// Energy budget at time `tau` after the start of a coupling interval.
    pub fn budget(&self, tau: f64, second: bool, block_len: f64) -> f64 {
        let extra = if second && tau <= block_len * (1.0 + 1e-12) { self.c_n * (1.0 + tau.powf(self.alpha)) } else { 0.0 };
        self.aleph + self.b_rate * tau + extra
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// Maximal coupling of the low-path/high-noise laws.
    Coupled,
    /// Shared noise, then one attempt at equal low modes.
    Uncoupled,
    /// Identical states evolved with identical noise.
    Identical,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockRecord {
    pub k: usize,
    pub branch: Branch,
    /// The block's coupling mechanism succeeded.
    pub coupled: bool,
    pub path_equal: bool,
    pub terminal_low_equal: bool,
    /// Energy budget held over the block.
    pub energy_ok: bool,
    pub fresh_energy_ok: bool,
    pub h_end: f64,
    /// `|u₁ − u₂|` at the block end.
    pub distance: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeResult {
    /// Block-end states of the first copy; entry 0 is the initial state.
    pub states1: Vec<Vec<f64>>,
    pub states2: Vec<Vec<f64>>,
    /// `l0(k)` for `k = 0..=n`.
    pub l0: Vec<Option<usize>>,
    /// `𝓗_k = 𝓗(u₁(kT)) + 𝓗(u₂(kT))`.
    pub h: Vec<f64>,
    pub blocks: Vec<BlockRecord>,
}

impl EpisodeResult {
    /// First block index from which the pair stayed coupled, if any.
    pub fn coupling_block(&self) -> Option<usize> {
        self.l0.last().copied().flatten()
    }
}

/// A model that can be run as a coupled pair.
pub trait CouplingModel: Sync {
    fn state_dim(&self) -> usize;
    fn block_len(&self) -> f64;
    /// Distance between two states.
    fn distance(&self, a: &[f64], b: &[f64]) -> f64;
    /// Lyapunov functional of one state.
    fn lyapunov(&self, u: &[f64]) -> f64;
    fn simulate_pair(
        &self,
        u1: &[f64],
        u2: &[f64],
        n_blocks: usize,
        cfg: &SchedulerConfig,
        rng: &mut StreamRng,
    ) -> Result<EpisodeResult, EngineError>;
    /// Block-end states of one copy simulated directly.
    fn simulate_single(&self, u0: &[f64], n_blocks: usize, rng: &mut StreamRng) -> Result<Vec<Vec<f64>>, EngineError>;
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

macro_rules! split_coupling_model {
    ($t:ty) => {
        impl CouplingModel for $t {
            fn state_dim(&self) -> usize {
                SplitSystem::state_dim(self)
            }
            fn block_len(&self) -> f64 {
                SplitSystem::block_len(self)
            }
            fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
                euclid(a, b)
            }
            fn lyapunov(&self, u: &[f64]) -> f64 {
                let (x, y) = self.split(u);
                SplitSystem::lyapunov(self, x, y)
            }
            fn simulate_pair(
                &self,
                u1: &[f64],
                u2: &[f64],
                n_blocks: usize,
                cfg: &SchedulerConfig,
                rng: &mut StreamRng,
            ) -> Result<EpisodeResult, EngineError> {
                split::simulate_pair_split(self, u1, u2, n_blocks, cfg, rng)
            }
            fn simulate_single(&self, u0: &[f64], n_blocks: usize, rng: &mut StreamRng) -> Result<Vec<Vec<f64>>, EngineError> {
                let n = self.steps_per_block();
                let mut out = vec![u0.to_vec()];
                for k in 0..n_blocks {
                    let t0 = k as f64 * SplitSystem::block_len(self);
                    let seg = dynamics::simulate_split(self, out.last().unwrap(), n, t0, rng)?;
                    out.push(seg.states.last().to_vec());
                }
                Ok(out)
            }
        }
    };
}

split_coupling_model!(LowHighModel);
split_coupling_model!(CglModel);

impl CouplingModel for TorusModel {
    fn state_dim(&self) -> usize {
        1
    }
    fn block_len(&self) -> f64 {
        self.block_len
    }
    fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        dynamics::circle_dist(a[0], b[0])
    }
    fn lyapunov(&self, _u: &[f64]) -> f64 {
        0.0
    }
    fn simulate_pair(
        &self,
        u1: &[f64],
        u2: &[f64],
        n_blocks: usize,
        cfg: &SchedulerConfig,
        rng: &mut StreamRng,
    ) -> Result<EpisodeResult, EngineError> {
        torus::simulate_pair_torus(self, u1[0], u2[0], n_blocks, cfg, rng)
    }
    fn simulate_single(&self, u0: &[f64], n_blocks: usize, rng: &mut StreamRng) -> Result<Vec<Vec<f64>>, EngineError> {
        let n = self.steps_per_block();
        let mut out = vec![vec![dynamics::wrap(u0[0])]];
        for k in 0..n_blocks {
            let seg = self.simulate(out[k][0], n, k as f64 * self.block_len, rng);
            out.push(seg.states.last().to_vec());
        }
        Ok(out)
    }
}

/// Runs `simulate_pair` with the same arguments on the episode stream
/// addressed by `(seed, episode)`.
pub fn simulate_pair<M: CouplingModel + ?Sized>(
    model: &M,
    u1: &[f64],
    u2: &[f64],
    n_blocks: usize,
    cfg: &SchedulerConfig,
    rng: &mut StreamRng,
) -> Result<EpisodeResult, EngineError> {
    cfg.validate()?;
    model.simulate_pair(u1, u2, n_blocks, cfg, rng)
}

/// Episodes of a batch, in index order.
#[derive(Debug, Clone)]
pub struct EpisodeBatch {
    pub episodes: Vec<EpisodeResult>,
    /// False when an interrupt stopped the batch early.
    pub complete: bool,
}

/// Runs `n` independent episodes on the current rayon pool. Episode `e` uses
/// the stream `(seed, [e])`, so results do not depend on the pool size.
pub fn run_episodes<M: CouplingModel + ?Sized>(
    model: &M,
    u1: &[f64],
    u2: &[f64],
    n_blocks: usize,
    cfg: &SchedulerConfig,
    seed: u64,
    n: usize,
) -> Result<EpisodeBatch, EngineError> {
    cfg.validate()?;
    let results: Vec<Option<Result<EpisodeResult, EngineError>>> = (0..n)
        .into_par_iter()
        .map(|e| {
            if interrupted() {
                return None;
            }
            let mut rng = stream(seed, &[e as u64]);
            Some(model.simulate_pair(u1, u2, n_blocks, cfg, &mut rng))
        })
        .collect();
    let complete = results.iter().all(Option::is_some);
    let mut episodes = Vec::with_capacity(n);
    for r in results.into_iter().flatten() {
        episodes.push(r?);
    }
    Ok(EpisodeBatch { episodes, complete })
}

/// Empirical versions of the per-block probabilities driving the mixing
/// argument.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockProbabilities {
    /// `P(l0(k+1) = k+1 | l0(k) = ∞, 𝓗_k ≤ R0)`.
    pub p_minus1: Estimate,
    /// Success of the uncoupled-branch attempt itself (terminal low-mode
    /// equality), regardless of energy and `d0` conditions.
    pub p_attempt: Estimate,
    /// `p_i = P(l0(k+1) = l | l0(k) = l)` with `i = k − l`.
    pub p_age: Vec<Estimate>,
    /// `1 − p_i`.
    pub decoupling: Vec<Estimate>,
    pub episodes: usize,
    pub complete: bool,
    pub warnings: Vec<String>,
}

pub fn block_probabilities_from(episodes: &[EpisodeResult], cfg: &SchedulerConfig, complete: bool) -> BlockProbabilities {
    let max_age = episodes.iter().map(|e| e.blocks.len()).max().unwrap_or(0);
    let mut age = vec![(0usize, 0usize); max_age];
    let (mut pm, mut att) = ((0usize, 0usize), (0usize, 0usize));
    for e in episodes {
        for (k, b) in e.blocks.iter().enumerate() {
            match e.l0[k] {
                None => {
                    att.1 += 1;
                    att.0 += b.coupled as usize;
                    if e.h[k] <= cfg.r0 {
                        pm.1 += 1;
                        pm.0 += (e.l0[k + 1] == Some(k + 1)) as usize;
                    }
                }
                Some(l) => {
                    let a = &mut age[k - l];
                    a.1 += 1;
                    a.0 += (e.l0[k + 1] == Some(l)) as usize;
                }
            }
        }
    }
    while age.last().is_some_and(|a| a.1 == 0) {
        age.pop();
    }
    let p_age: Vec<Estimate> = age.iter().map(|&(s, n)| wilson(s, n)).collect();
    let decoupling = age.iter().map(|&(s, n)| wilson(n - s, n)).collect();
    let mut warnings = Vec::new();
    if episodes.len() < 100 {
        warnings.push(format!("only {} episodes; estimates are unreliable below 100", episodes.len()));
    }
    BlockProbabilities {
        p_minus1: wilson(pm.0, pm.1),
        p_attempt: wilson(att.0, att.1),
        p_age,
        decoupling,
        episodes: episodes.len(),
        complete,
        warnings,
    }
}

/// Monte-Carlo estimates of the block probabilities from `nsamples` episodes.
#[allow(clippy::too_many_arguments)]
pub fn estimate_block_probabilities<M: CouplingModel + ?Sized>(
    model: &M,
    u1: &[f64],
    u2: &[f64],
    n_blocks: usize,
    cfg: &SchedulerConfig,
    nsamples: usize,
    seed: u64,
) -> Result<BlockProbabilities, EngineError> {
    let batch = run_episodes(model, u1, u2, n_blocks, cfg, seed, nsamples)?;
    Ok(block_probabilities_from(&batch.episodes, cfg, batch.complete))
}

/// Scheduler constants measured on a stationary run of a split model.
///
/// `d0` is twice the median of `𝓗_k` after a warm-up, `R0` is the larger of
/// `d0` and `4.4·K̂₁` with `K̂₁` the stationary mean of `𝓗_k`, `B` is 1.5 times
/// the mean energy rate, and `ℵ` is the 90% quantile of
/// `sup_t (E(t) − B t)` over one block started from the stationary regime.
pub fn calibrate_scheduler<S: SplitSystem + ?Sized>(
    model: &S,
    base: &SchedulerConfig,
    warmup_blocks: usize,
    nsamples: usize,
    seed: u64,
) -> Result<SchedulerConfig, EngineError> {
    let n = model.steps_per_block();
    let dt = model.dt();
    let stride = base.energy_stride.max(1);
    let runs: Vec<Result<(f64, f64, Vec<(f64, f64)>), EngineError>> = (0..nsamples)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, &[i as u64]);
            let mut u = vec![0.0; model.state_dim()];
            for b in 0..warmup_blocks {
                let seg = dynamics::simulate_split(model, &u, n, b as f64, &mut rng)?;
                u = seg.states.last().to_vec();
            }
            let (x, y) = model.split(&u);
            let h = model.lyapunov(x, y);
            let seg = dynamics::simulate_split(model, &u, n, 0.0, &mut rng)?;
            let mut ledger = dynamics::EnergyLedger::start(model, &u, 0.0);
            let mut points = vec![(0.0, ledger.value())];
            let mut prev = 0;
            while prev < n {
                let j = (prev + stride).min(n);
                ledger = dynamics::energy_update(model, &ledger, seg.states.row(j), (j - prev) as f64 * dt);
                points.push((j as f64 * dt, ledger.value()));
                prev = j;
            }
            Ok((h, ledger.integral() / model.block_len(), points))
        })
        .collect();
    let mut hs = Vec::with_capacity(nsamples);
    let mut rates = Vec::with_capacity(nsamples);
    let mut profiles = Vec::with_capacity(nsamples);
    for r in runs {
        let (h, rate, pts) = r?;
        hs.push(h);
        rates.push(rate);
        profiles.push(pts);
    }
    if hs.is_empty() {
        return Err(EngineError::Config("calibration needs at least one sample".into()));
    }
    // 𝓗_k is a sum over two copies, so pair up independent samples
    let mut pairs: Vec<f64> = if hs.len() >= 2 { hs.chunks_exact(2).map(|c| c[0] + c[1]).collect() } else { vec![2.0 * hs[0]] };
    let k1 = pairs.iter().sum::<f64>() / pairs.len() as f64;
    let median = quantile(&mut pairs, 0.5);
    let b_rate = (1.5 * rates.iter().sum::<f64>() / rates.len() as f64).max(1e-12);
    let mut sups: Vec<f64> = profiles
        .iter()
        .map(|p| p.iter().map(|&(t, e)| e - b_rate * t).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let mut cfg = base.clone();
    cfg.d0 = (2.0 * median).max(1e-12);
    cfg.r0 = cfg.d0.max(4.4 * k1);
    cfg.b_rate = b_rate;
    cfg.aleph = quantile(&mut sups, 0.9);
    cfg.validate()?;
    Ok(cfg)
}

fn quantile(v: &mut [f64], q: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    let i = ((v.len() as f64 - 1.0) * q).round() as usize;
    v[i]
}
