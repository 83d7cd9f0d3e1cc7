//! Verification batteries for the dissipative estimates of the models.
//!
//! Constants that are only known to exist are fitted on a calibration run
//! (streams under `child_seed(seed, 0)`) and then checked on an assertion
//! run with disjoint streams (`child_seed(seed, 1)`).

use super::stats::{exp_fit, mean_ci, wilson, Estimate, ExpFit};
use crate::dynamics::{
    eigenvalue, energy_update, phi_reconstruct, simulate_split, sobolev_norm_sq_real, CglCase, CglModel, DynamicsError,
    EnergyLedger, SplitSystem, Trajectory,
};
use crate::engine::{EngineError, SchedulerConfig};
use crate::rng::{child_seed, stream};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

const CALIBRATION: u64 = 0;
const ASSERTION: u64 = 1;

fn steps_of<S: SplitSystem + ?Sized>(m: &S, t: f64) -> Result<usize, EngineError> {
    let n = t / m.dt();
    if (n - n.round()).abs() > 1e-9 * n.max(1.0) || t < 0.0 {
        return Err(EngineError::Config(format!("time {t} is not a multiple of dt = {}", m.dt())));
    }
    Ok(n.round() as usize)
}

fn lyap<S: SplitSystem + ?Sized>(m: &S, u: &[f64]) -> f64 {
    let (x, y) = m.split(u);
    m.lyapunov(x, y)
}

/// States of one trajectory at the requested grid times (sorted, ≥ 0).
fn sample_at<S: SplitSystem + ?Sized>(
    m: &S,
    u0: &[f64],
    steps: &[usize],
    rng: &mut crate::rng::StreamRng,
) -> Result<Vec<Vec<f64>>, DynamicsError> {
    let mut out = Vec::with_capacity(steps.len());
    let mut u = u0.to_vec();
    let mut at = 0;
    for &s in steps {
        if s > at {
            let seg = simulate_split(m, &u, s - at, at as f64 * m.dt(), rng)?;
            u = seg.states.last().to_vec();
            at = s;
        }
        out.push(u.clone());
    }
    Ok(out)
}

/// Running energy of a stored path at every `stride` steps, as `(t, E(t))`.
fn energy_path<S: SplitSystem + ?Sized>(m: &S, states: &Trajectory, stride: usize) -> Vec<(f64, f64)> {
    let n = states.len() - 1;
    let mut ledger = EnergyLedger::start(m, states.row(0), 0.0);
    let mut pts = vec![(0.0, ledger.value())];
    let mut prev = 0;
    while prev < n {
        let j = (prev + stride).min(n);
        ledger = energy_update(m, &ledger, states.row(j), (j - prev) as f64 * m.dt());
        pts.push((j as f64 * m.dt(), ledger.value()));
        prev = j;
    }
    pts
}

/// A pair evolved with equal low modes and equal high noise: the first copy
/// is simulated, the second copy's high modes are reconstructed along the
/// first copy's low path from `y2`.
struct SharedPair {
    u1: Trajectory,
    u2: Trajectory,
}

fn shared_pair<S: SplitSystem + ?Sized>(
    m: &S,
    u1: &[f64],
    y2: &[f64],
    n_steps: usize,
    rng: &mut crate::rng::StreamRng,
) -> Result<SharedPair, DynamicsError> {
    let nl = m.low_dim();
    let seg = simulate_split(m, u1, n_steps, 0.0, rng)?;
    let mut x = Trajectory::with_capacity(nl, n_steps + 1);
    for r in seg.states.rows() {
        x.push(&r[..nl]);
    }
    let mut eta = Trajectory::with_capacity(m.high_dim(), n_steps);
    for r in seg.dw.rows() {
        eta.push(&r[nl..]);
    }
    let y = phi_reconstruct(m, &x, &eta, y2)?;
    let mut u2 = Trajectory::with_capacity(m.state_dim(), n_steps + 1);
    for j in 0..=n_steps {
        let row = u2.push_zeroed();
        row[..nl].copy_from_slice(x.row(j));
        row[nl..].copy_from_slice(y.row(j));
    }
    Ok(SharedPair { u1: seg.states, u2 })
}

fn high_gap(nl: usize, a: &[f64], b: &[f64]) -> f64 {
    a[nl..].iter().zip(&b[nl..]).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

fn within_budget(pts: &[(f64, f64)], cfg: &SchedulerConfig) -> bool {
    pts.iter().all(|&(t, e)| e <= cfg.aleph + cfg.b_rate * t)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoiasProdiReport {
    pub cutoff: usize,
    pub samples: usize,
    /// Trajectories dropped because a copy blew up.
    pub blowups: usize,
    /// Trajectories on which both copies stayed within `ℵ + B t`.
    pub in_event: usize,
    /// Fraction of in-event trajectories on which `log|r|` is nonincreasing
    /// along the energy grid.
    pub decreasing: Estimate,
    pub failure_fraction: f64,
    /// Smallest `c₁` with `log|r(t)| − log|r(0)| ≤ −εμ_{N+1}t/2 + c₁ΣE_i(t)`
    /// on every in-event trajectory.
    pub c1_hat: f64,
    /// Median fitted decay rate of `|r|`.
    pub median_rate: f64,
    pub pass: bool,
}

/// Evolves pairs sharing low modes and high noise from `u1` and from
/// `(P_N u1, Q_N u2)` over `[0, horizon]` and checks the contraction of the
/// high-mode difference `r`.
pub fn foias_prodi_verify(
    model: &CglModel,
    u1: &[f64],
    u2: &[f64],
    horizon: f64,
    cfg: &SchedulerConfig,
    nsamples: usize,
    seed: u64,
) -> Result<FoiasProdiReport, EngineError> {
    let n_steps = steps_of(model, horizon)?;
    let nl = model.low_dim();
    let stride = cfg.energy_stride;
    let kappa = 0.5 * model.eps * eigenvalue(model.n + 1);
    let y2 = &u2[nl..];
    let runs: Vec<Result<Option<(bool, bool, f64, f64)>, EngineError>> = (0..nsamples)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, &[i as u64]);
            let pair = match shared_pair(model, u1, y2, n_steps, &mut rng) {
                Ok(p) => p,
                Err(DynamicsError::BlowUp { .. }) => return Ok(None),
                Err(e) => return Err(e.into()),
            };
            let e1 = energy_path(model, &pair.u1, stride);
            let e2 = energy_path(model, &pair.u2, stride);
            let ok = within_budget(&e1, cfg) && within_budget(&e2, cfg);
            let r: Vec<f64> = (0..e1.len())
                .map(|j| {
                    let s = (j * stride).min(n_steps);
                    high_gap(nl, pair.u1.row(s), pair.u2.row(s))
                })
                .collect();
            let dec = r.windows(2).all(|w| w[1] <= w[0]);
            let mut c1: f64 = 0.0;
            if r[0] > 0.0 {
                for j in 1..r.len() {
                    let t = e1[j].0;
                    let lhs = (r[j] / r[0]).ln() + kappa * t;
                    let energy = e1[j].1 + e2[j].1;
                    if lhs > 0.0 {
                        c1 = c1.max(if energy > 0.0 { lhs / energy } else { f64::INFINITY });
                    }
                }
            }
            let times: Vec<f64> = e1.iter().map(|p| p.0).collect();
            let rate = exp_fit(&times, &r, None).map_or(f64::NAN, |f| f.beta);
            Ok(Some((ok, dec, c1, rate)))
        })
        .collect();
    let (mut blowups, mut in_event, mut dec, mut c1_hat) = (0, 0, 0, 0.0f64);
    let mut rates = Vec::new();
    for r in runs {
        match r? {
            None => blowups += 1,
            Some((ok, d, c1, rate)) => {
                if ok {
                    in_event += 1;
                    dec += d as usize;
                    c1_hat = c1_hat.max(c1);
                    if rate.is_finite() {
                        rates.push(rate);
                    }
                }
            }
        }
    }
    let decreasing = wilson(dec, in_event);
    Ok(FoiasProdiReport {
        cutoff: model.n,
        samples: nsamples,
        blowups,
        in_event,
        decreasing,
        failure_fraction: if in_event > 0 { 1.0 - dec as f64 / in_event as f64 } else { f64::NAN },
        c1_hat,
        median_rate: super::stats::quantile(&rates, 0.5),
        pass: in_event > 0 && decreasing.lo >= 0.95,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftEstimateReport {
    pub t0_grid: Vec<f64>,
    /// Fitted `K̂_N`.
    pub k_hat: f64,
    /// Fitted `ĉ` multiplying the energy excess `ρ`.
    pub c_hat: f64,
    /// Fraction of assertion trajectories exceeding the fitted bound at some `T0`.
    pub exceedance: Estimate,
    /// The integral was nonincreasing in `T0` on every trajectory.
    pub monotone_in_t0: bool,
    pub pass: bool,
}

/// For each trajectory: `Q(T0) = e^{3T0} ∫_{T0}^{τ} |P_N(F(u₁) − F(u₂))|² / |r(0)|²`
/// on the grid, with `τ` the first grid time outside the energy budget, and
/// the energy excess `ρ`.
fn drift_samples(
    model: &CglModel,
    u1: &[f64],
    u2: &[f64],
    horizon: f64,
    t0_grid: &[f64],
    cfg: &SchedulerConfig,
    nsamples: usize,
    seed: u64,
) -> Result<Vec<(Vec<f64>, f64, bool)>, EngineError> {
    let n_steps = steps_of(model, horizon)?;
    let nl = model.low_dim();
    let stride = cfg.energy_stride;
    let r0 = high_gap(nl, u1, u2);
    let h0 = lyap(model, u1) + lyap(model, u2);
    let coeffs = |u: &[f64]| u.chunks(2).map(|c| Complex64::new(c[0], c[1])).collect::<Vec<_>>();
    (0..nsamples)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, &[i as u64]);
            let pair = shared_pair(model, u1, &u2[nl..], n_steps, &mut rng)?;
            let e1 = energy_path(model, &pair.u1, stride);
            let e2 = energy_path(model, &pair.u2, stride);
            let tau = e1
                .iter()
                .zip(&e2)
                .position(|(a, b)| a.1 > cfg.aleph + cfg.b_rate * a.0 || b.1 > cfg.aleph + cfg.b_rate * b.0)
                .unwrap_or(e1.len());
            let dens: Vec<f64> = (0..e1.len())
                .map(|j| {
                    let s = (j * stride).min(n_steps);
                    let f1 = model.nonlinearity(&coeffs(pair.u1.row(s)));
                    let f2 = model.nonlinearity(&coeffs(pair.u2.row(s)));
                    f1.iter().zip(&f2).take(model.n).map(|(a, b)| (a - b).norm_sqr()).sum()
                })
                .collect();
            let q: Vec<f64> = t0_grid
                .iter()
                .map(|&t0| {
                    let mut acc = 0.0;
                    for j in 1..tau {
                        let (ta, tb) = (e1[j - 1].0, e1[j].0);
                        if ta >= t0 - 1e-12 {
                            acc += 0.5 * (dens[j - 1] + dens[j]) * (tb - ta);
                        }
                    }
                    if r0 > 0.0 { acc * (3.0 * t0).exp() / (r0 * r0) } else { 0.0 }
                })
                .collect();
            let raw: Vec<f64> = q.iter().zip(t0_grid).map(|(v, t0)| v * (-3.0 * t0).exp()).collect();
            let monotone = raw.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12) + 1e-300);
            let rho = e1
                .iter()
                .zip(&e2)
                .map(|(a, b)| a.1 + b.1 - 2.0 * cfg.b_rate * a.0 - h0)
                .fold(0.0, f64::max);
            Ok((q, rho, monotone))
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub fn drift_estimate_verify(
    model: &CglModel,
    u1: &[f64],
    u2: &[f64],
    horizon: f64,
    t0_grid: &[f64],
    cfg: &SchedulerConfig,
    nsamples: usize,
    seed: u64,
) -> Result<DriftEstimateReport, EngineError> {
    let cal = drift_samples(model, u1, u2, horizon, t0_grid, cfg, nsamples, child_seed(seed, CALIBRATION))?;
    let test = drift_samples(model, u1, u2, horizon, t0_grid, cfg, nsamples, child_seed(seed, ASSERTION))?;
    let qmax = |q: &[f64]| q.iter().copied().fold(0.0, f64::max);
    // slope of log Q on ρ, then the smallest K̂ covering the calibration run
    let pts: Vec<(f64, f64)> = cal.iter().filter(|s| qmax(&s.0) > 0.0).map(|s| (s.1, qmax(&s.0).ln())).collect();
    let c_hat = if pts.len() >= 3 {
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        if sxx > 0.0 { (sxy / sxx).max(0.0) } else { 0.0 }
    } else {
        0.0
    };
    let k_hat = cal.iter().map(|s| qmax(&s.0) * (-c_hat * s.1).exp()).fold(0.0, f64::max);
    let exceed = test.iter().filter(|s| qmax(&s.0) > k_hat * (c_hat * s.1).exp() * (1.0 + 1e-12)).count();
    let exceedance = wilson(exceed, test.len());
    let monotone_in_t0 = cal.iter().chain(&test).all(|s| s.2);
    Ok(DriftEstimateReport {
        t0_grid: t0_grid.to_vec(),
        k_hat,
        c_hat,
        exceedance,
        monotone_in_t0,
        pass: monotone_in_t0 && exceedance.lo <= 0.05,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthTailReport {
    pub b_hat: f64,
    pub gamma_hat: f64,
    pub rho: Vec<f64>,
    /// `P(sup_t (E(t) − B̂t) ≥ 𝓗(u0) + ρ)` on the assertion run.
    pub tail: Vec<Estimate>,
    pub bound: Vec<f64>,
    pub fit: Option<ExpFit>,
    pub nonincreasing: bool,
    pub pass: bool,
}

fn excess_samples<S: SplitSystem + ?Sized>(
    m: &S,
    u0: &[f64],
    n_steps: usize,
    stride: usize,
    nsamples: usize,
    seed: u64,
) -> Result<Vec<Vec<(f64, f64)>>, EngineError> {
    (0..nsamples)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, &[i as u64]);
            let seg = simulate_split(m, u0, n_steps, 0.0, &mut rng)?;
            Ok(energy_path(m, &seg.states, stride))
        })
        .collect()
}

/// Exponential tail of the energy excess over a horizon.
pub fn growth_tail_verify<S: SplitSystem + ?Sized>(
    m: &S,
    u0: &[f64],
    horizon: f64,
    rho: &[f64],
    stride: usize,
    nsamples: usize,
    seed: u64,
) -> Result<GrowthTailReport, EngineError> {
    let n_steps = steps_of(m, horizon)?;
    let h0 = lyap(m, u0);
    let cal = excess_samples(m, u0, n_steps, stride, nsamples, child_seed(seed, CALIBRATION))?;
    let b_hat = cal.iter().map(|p| (p.last().unwrap().1 - h0) / horizon).sum::<f64>() / cal.len().max(1) as f64;
    let sup = |p: &Vec<(f64, f64)>| p.iter().map(|&(t, e)| e - b_hat * t - h0).fold(f64::NEG_INFINITY, f64::max);
    let cal_s: Vec<f64> = cal.iter().map(sup).collect();
    let mut gamma_hat = f64::INFINITY;
    for &r in rho.iter().filter(|r| **r > 0.0) {
        let p = cal_s.iter().filter(|s| **s >= r).count() as f64 / cal_s.len() as f64;
        if p > 0.0 {
            gamma_hat = gamma_hat.min(-p.ln() / r);
        }
    }
    let test = excess_samples(m, u0, n_steps, stride, nsamples, child_seed(seed, ASSERTION))?;
    let s: Vec<f64> = test.iter().map(sup).collect();
    let tail: Vec<Estimate> = rho.iter().map(|&r| wilson(s.iter().filter(|v| **v >= r).count(), s.len())).collect();
    let bound: Vec<f64> = rho.iter().map(|&r| if gamma_hat.is_finite() { (-gamma_hat * r).exp() } else { 0.0 }).collect();
    let values: Vec<f64> = tail.iter().map(|e| e.value).collect();
    let fit = exp_fit(rho, &values, None).ok();
    let nonincreasing = values.windows(2).all(|w| w[1] <= w[0]);
    let holds = tail.iter().zip(&bound).zip(rho).all(|((e, b), r)| *r <= 0.0 || e.lo <= *b);
    Ok(GrowthTailReport {
        b_hat,
        gamma_hat,
        rho: rho.to_vec(),
        pass: holds && nonincreasing && fit.is_some_and(|f| f.r2 >= 0.8),
        tail,
        bound,
        fit,
        nonincreasing,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentCurve {
    pub k: u32,
    pub times: Vec<f64>,
    pub mean: Vec<Estimate>,
    pub bound: Vec<f64>,
    /// `Ĉ_k / 2`.
    pub c_half: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovReport {
    /// Stationary level `K̂₁ = Ĉ₁/2` of `E𝓗`.
    pub k1_hat: f64,
    pub alpha_hat: f64,
    pub curves: Vec<MomentCurve>,
    /// `E𝓗(u(τ)) ≤ 𝓗(u0) + K̂₁` within 3 standard errors, for `τ` the first
    /// block time with `𝓗 ≤ R0` (capped at the last grid time).
    pub stopping_time_pass: bool,
    /// `P(𝓗₁ + 𝓗₂ ≥ 4Ĉ₁) ≤ ½` at the last grid time for independent copies.
    pub pair_tail: Estimate,
    pub pass: bool,
}

fn moments(states: &[Vec<Vec<f64>>], j: usize, k: u32, h: &dyn Fn(&[f64]) -> f64) -> Estimate {
    let v: Vec<f64> = states.iter().map(|s| h(&s[j]).powi(k as i32)).collect();
    mean_ci(&v)
}

/// Moment bounds `E𝓗(u(t))^k ≤ 𝓗(u0)^k e^{−αkt} + C_k/2`.
///
/// `Ĉ_k/2` is the largest calibrated moment along the grid from a zero
/// start, `α̂` the largest rate with which the calibrated moments from `u0`
/// respect the bound. Both are then checked on the assertion run within
/// three standard errors.
#[allow(clippy::too_many_arguments)]
pub fn lyapunov_verify<S: SplitSystem + ?Sized>(
    m: &S,
    u0: &[f64],
    times: &[f64],
    ks: &[u32],
    r0: f64,
    nsamples: usize,
    seed: u64,
) -> Result<LyapunovReport, EngineError> {
    let steps: Vec<usize> = times.iter().map(|&t| steps_of(m, t)).collect::<Result<_, _>>()?;
    if steps.windows(2).any(|w| w[1] <= w[0]) || steps.is_empty() {
        return Err(EngineError::Config("time grid must be strictly increasing and nonempty".into()));
    }
    let zero = vec![0.0; m.state_dim()];
    let run = |u: &[f64], s: u64| -> Result<Vec<Vec<Vec<f64>>>, EngineError> {
        (0..nsamples)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream(s, &[i as u64]);
                Ok(sample_at(m, u, &steps, &mut rng)?)
            })
            .collect()
    };
    let cal_seed = child_seed(seed, CALIBRATION);
    let cal_zero = run(&zero, child_seed(cal_seed, 0))?;
    let cal = run(u0, child_seed(cal_seed, 1))?;
    let test = run(u0, child_seed(seed, ASSERTION))?;
    let h = |u: &[f64]| lyap(m, u);
    let h0 = h(u0);
    let mut alpha_hat = 1.0 / m.dt();
    let mut c_halves = Vec::new();
    for &k in ks {
        let c_half = (0..steps.len()).map(|j| moments(&cal_zero, j, k, &h).value).fold(0.0, f64::max);
        for (j, &t) in times.iter().enumerate() {
            let excess = moments(&cal, j, k, &h).value - c_half;
            if t > 0.0 && excess > 0.0 && h0 > 0.0 {
                alpha_hat = alpha_hat.min(((h0.powi(k as i32) / excess).ln() / (k as f64 * t)).max(0.0));
            }
        }
        c_halves.push(c_half);
    }
    let mut curves = Vec::new();
    for (&k, &c_half) in ks.iter().zip(&c_halves) {
        let mean: Vec<Estimate> = (0..steps.len()).map(|j| moments(&test, j, k, &h)).collect();
        let bound: Vec<f64> =
            times.iter().map(|&t| h0.powi(k as i32) * (-alpha_hat * k as f64 * t).exp() + c_half).collect();
        let pass = mean
            .iter()
            .zip(&bound)
            .all(|(e, b)| e.value - 3.0 * (e.hi - e.value) / super::stats::Z95 <= *b);
        curves.push(MomentCurve { k, times: times.to_vec(), mean, bound, c_half, pass });
    }
    let k1_hat = ks.iter().position(|k| *k == 1).map_or_else(
        || (0..steps.len()).map(|j| moments(&cal_zero, j, 1, &h).value).fold(0.0, f64::max),
        |i| c_halves[i],
    );
    let stopped: Vec<f64> = test
        .iter()
        .map(|s| {
            let j = s.iter().position(|u| h(u) <= r0).unwrap_or(s.len() - 1);
            h(&s[j])
        })
        .collect();
    let st = mean_ci(&stopped);
    let stopping_time_pass = st.value - 3.0 * (st.hi - st.value) / super::stats::Z95 <= h0 + k1_hat;
    let last = steps.len() - 1;
    let pairs = test.chunks_exact(2).filter(|p| h(&p[0][last]) + h(&p[1][last]) >= 8.0 * k1_hat).count();
    let pair_tail = wilson(pairs, test.len() / 2);
    let pass = curves.iter().all(|c| c.pass) && stopping_time_pass && pair_tail.lo <= 0.5;
    Ok(LyapunovReport { k1_hat, alpha_hat, curves, stopping_time_pass, pair_tail, pass })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CtrlReport {
    /// `(|u0|², T, Ê𝓗(u(T)))` design points.
    pub design: Vec<(f64, f64, Estimate)>,
    pub a_hat: f64,
    pub b_hat: f64,
    pub c_hat: f64,
    pub r2: f64,
    /// `Ê𝓗(u(T))` nondecreasing in `|u0|²` at each `T`, up to three
    /// standard errors.
    pub monotone: bool,
    pub pass: bool,
}

/// Fits `Ê𝓗(u(T)) ≈ A + B·T + C·|u0|²/T` over a design of scaled initial
/// conditions `scale·shape` and horizons.
pub fn ctrl_h_by_l2_verify(
    model: &CglModel,
    shape: &[f64],
    scales: &[f64],
    horizons: &[f64],
    nsamples: usize,
    seed: u64,
) -> Result<CtrlReport, EngineError> {
    if model.case != CglCase::H1Subcritical {
        return Err(EngineError::Config("the control of 𝓗 by |u|² needs the H¹ case".into()));
    }
    let steps: Vec<usize> = horizons.iter().map(|&t| steps_of(model, t)).collect::<Result<_, _>>()?;
    let mut design = Vec::new();
    for (si, &sc) in scales.iter().enumerate() {
        let u0: Vec<f64> = shape.iter().map(|v| v * sc).collect();
        let l2: f64 = u0.iter().map(|v| v * v).sum();
        let runs: Vec<Vec<Vec<f64>>> = (0..nsamples)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream(seed, &[si as u64, i as u64]);
                sample_at(model, &u0, &steps, &mut rng)
            })
            .collect::<Result<_, _>>()?;
        for (j, &t) in horizons.iter().enumerate() {
            let v: Vec<f64> = runs.iter().map(|r| lyap(model, &r[j])).collect();
            design.push((l2, t, mean_ci(&v)));
        }
    }
    let rows = design.len();
    let a = DMatrix::from_fn(rows, 3, |i, c| match c {
        0 => 1.0,
        1 => design[i].1,
        _ => design[i].0 / design[i].1,
    });
    let y = DVector::from_iterator(rows, design.iter().map(|d| d.2.value));
    let coef = a
        .clone()
        .svd(true, true)
        .solve(&y, 1e-12)
        .map_err(|e| EngineError::Config(format!("degenerate design: {e}")))?;
    let fitted = &a * &coef;
    let mean = y.mean();
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res: f64 = y.iter().zip(fitted.iter()).map(|(v, f)| (v - f).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    let mut monotone = true;
    for (j, _) in horizons.iter().enumerate() {
        let col: Vec<&Estimate> = (0..scales.len()).map(|s| &design[s * horizons.len() + j].2).collect();
        let mut order: Vec<usize> = (0..scales.len()).collect();
        order.sort_by(|&p, &q| scales[p].abs().total_cmp(&scales[q].abs()));
        for w in order.windows(2) {
            let (lo, hi) = (col[w[0]], col[w[1]]);
            let se = ((lo.hi - lo.value).powi(2) + (hi.hi - hi.value).powi(2)).sqrt() / super::stats::Z95;
            monotone &= hi.value + 3.0 * se >= lo.value;
        }
    }
    Ok(CtrlReport {
        design,
        a_hat: coef[0],
        b_hat: coef[1],
        c_hat: coef[2],
        r2,
        monotone,
        pass: r2 >= 0.8 && monotone,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HsTailReport {
    pub k: u32,
    pub delta: f64,
    pub times: Vec<f64>,
    /// `P(‖u(t)‖_k ≥ e^{δt})`.
    pub tail: Vec<Estimate>,
    pub fit: Option<ExpFit>,
    /// `δ / β̂` from the fitted tail decay `e^{−βt}`.
    pub gamma_hat: Option<f64>,
    pub nonincreasing: bool,
    pub pass: bool,
}

pub fn hs_tail_verify(
    model: &CglModel,
    u0: &[f64],
    k: u32,
    delta: f64,
    times: &[f64],
    nsamples: usize,
    seed: u64,
) -> Result<HsTailReport, EngineError> {
    if !(k == 1 || k == 2) {
        return Err(EngineError::Config(format!("Sobolev index {k} must be 1 or 2")));
    }
    let steps: Vec<usize> = times.iter().map(|&t| steps_of(model, t)).collect::<Result<_, _>>()?;
    let runs: Vec<Vec<Vec<f64>>> = (0..nsamples)
        .into_par_iter()
        .map(|i| sample_at(model, u0, &steps, &mut stream(seed, &[i as u64])))
        .collect::<Result<_, _>>()?;
    let tail: Vec<Estimate> = times
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let thr = (delta * t).exp();
            wilson(runs.iter().filter(|r| sobolev_norm_sq_real(&r[j], k as f64).sqrt() >= thr).count(), runs.len())
        })
        .collect();
    let values: Vec<f64> = tail.iter().map(|e| e.value).collect();
    let fit = exp_fit(times, &values, None).ok();
    let gamma_hat = fit.filter(|f| f.beta > 0.0).map(|f| delta / f.beta);
    // successive tails must not increase beyond their joint interval
    let nonincreasing = tail.windows(2).all(|w| w[1].lo <= w[0].hi);
    Ok(HsTailReport { k, delta, times: times.to_vec(), tail, fit, gamma_hat, nonincreasing, pass: nonincreasing })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{CglConfig, LowHighModel};

    fn small_cgl() -> CglModel {
        CglConfig { modes: 16, cutoff: 4, noise_cutoff: 2, block_len: 0.1, ..Default::default() }.build().unwrap()
    }

    #[test]
    fn equal_pair_has_zero_gap() {
        let m = small_cgl();
        let u: Vec<f64> = (0..32).map(|i| 0.05 * ((i as f64) * 0.7).sin()).collect();
        let mut rng = stream(1, &[0]);
        let p = shared_pair(&m, &u, &u[8..], 50, &mut rng).unwrap();
        for j in 0..=50 {
            assert_eq!(high_gap(8, p.u1.row(j), p.u2.row(j)), 0.0);
        }
    }

    #[test]
    fn linear_high_modes_decay_exactly() {
        let mut m = small_cgl();
        m.nonlinear = false;
        let u1 = vec![0.0; 32];
        let mut u2 = vec![0.0; 32];
        u2[8] = 1.0; // mode 5, first high mode
        let mut rng = stream(2, &[0]);
        let p = shared_pair(&m, &u1, &u2[8..], 100, &mut rng).unwrap();
        let rate = m.eps * eigenvalue(5);
        for j in [10, 50, 100] {
            let t = j as f64 * m.dt;
            let r = high_gap(8, p.u1.row(j), p.u2.row(j));
            assert!((r - (-rate * t).exp()).abs() < 1e-12, "{r}");
        }
    }

    #[test]
    fn foias_prodi_zero_difference() {
        let m = small_cgl();
        let u = vec![0.0; 32];
        let cfg = SchedulerConfig { aleph: 1e6, b_rate: 1e6, ..Default::default() };
        let r = foias_prodi_verify(&m, &u, &u, 0.05, &cfg, 10, 3).unwrap();
        assert_eq!(r.in_event, 10);
        assert_eq!(r.decreasing.value, 1.0);
        assert_eq!(r.c1_hat, 0.0);
    }

    #[test]
    fn drift_integral_vanishes_for_equal_pairs() {
        let m = small_cgl();
        let u: Vec<f64> = (0..32).map(|i| 0.05 * (i as f64).cos()).collect();
        let cfg = SchedulerConfig { aleph: 1e6, b_rate: 1e6, ..Default::default() };
        let s = drift_samples(&m, &u, &u, 0.05, &[0.0, 0.02], &cfg, 5, 4).unwrap();
        assert!(s.iter().all(|(q, _, mono)| q.iter().all(|v| *v == 0.0) && *mono));
    }

    #[test]
    fn lyapunov_from_zero_is_trivial() {
        let m = LowHighModel::default_model();
        let r = lyapunov_verify(&m, &[0.0, 0.0], &[0.5, 1.0, 1.5], &[1, 2], 10.0, 200, 5).unwrap();
        assert!(r.k1_hat >= 0.0);
        assert!(r.curves.iter().all(|c| c.pass));
    }

    #[test]
    fn growth_tail_monotone() {
        let m = LowHighModel::default_model();
        let r = growth_tail_verify(&m, &[0.5, 0.5], 1.0, &[0.0, 0.5, 1.0, 1.5], 10, 300, 6).unwrap();
        assert!(r.nonincreasing);
        assert_eq!(r.tail[0].value, 1.0);
    }

    #[test]
    fn hs_tail_large_delta_is_zero() {
        let m = small_cgl();
        let u = vec![0.0; 32];
        let r = hs_tail_verify(&m, &u, 1, 50.0, &[0.1, 0.2], 20, 7).unwrap();
        assert!(r.tail.iter().all(|e| e.value == 0.0));
        assert!(r.fit.is_none());
    }
}
