use super::{l0_update, BlockData, BlockRecord, Branch, EngineError, EpisodeResult, L0State, SchedulerConfig};
use crate::dynamics::{energy_update, DynamicsError, EnergyLedger, SplitSystem, Trajectory, Workspace};
use crate::measure::{maximal_coupling_sample, DensityRatioOracle, Reference};
use crate::rng::{fill_gaussian, StreamRng};
use nalgebra::{DMatrix, DVector};
use std::cell::OnceCell;

type DynResult<T> = Result<T, DynamicsError>;

/// States reached at the end of a block and what the block established.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockOutcome {
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
    pub data: BlockData,
    pub record: BlockRecord,
}

fn solve(s: &DMatrix<f64>, rhs: &[f64]) -> DynResult<Vec<f64>> {
    if s.nrows() == 1 {
        let d = s[(0, 0)];
        if d == 0.0 {
            return Err(DynamicsError::Singular("zero low-mode noise".into()));
        }
        return Ok(vec![rhs[0] / d]);
    }
    s.clone()
        .lu()
        .solve(&DVector::from_column_slice(rhs))
        .map(|v| v.as_slice().to_vec())
        .ok_or_else(|| DynamicsError::Singular("low-mode noise matrix".into()))
}

fn log_abs_det(s: &DMatrix<f64>) -> f64 {
    if s.nrows() == 1 { s[(0, 0)].abs().ln() } else { s.clone().lu().determinant().abs().ln() }
}

fn apply(s: &DMatrix<f64>, mean: &[f64], v: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = mean[i];
        for (j, b) in v.iter().enumerate() {
            acc += s[(i, j)] * b;
        }
        *o = acc;
    }
}

fn sq(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum()
}

fn finite(v: &[f64], t: f64) -> DynResult<()> {
    if v.iter().all(|a| a.is_finite() && a.abs() <= crate::dynamics::BLOWUP_THRESHOLD) {
        Ok(())
    } else {
        Err(DynamicsError::BlowUp { time: t })
    }
}

/// A low-mode path with the high-mode noise and the own high-mode path, as
/// sampled from one of the two initial conditions of a coupled block.
#[derive(Debug, Clone)]
struct BindingPath {
    z: Trajectory,
    y: Trajectory,
    beta: Trajectory,
    xi: Trajectory,
    from_first: bool,
    other: OnceCell<DynResult<(f64, Trajectory)>>,
}

fn sample_binding<S: SplitSystem + ?Sized>(
    m: &S,
    x0: &[f64],
    y0: &[f64],
    from_first: bool,
    t0: f64,
    rng: &mut StreamRng,
) -> DynResult<BindingPath> {
    let (nl, nh, n) = (m.low_dim(), m.high_dim(), m.steps_per_block());
    let dt = m.dt();
    let mut ws = Workspace::new(m);
    let mut z = Trajectory::with_capacity(nl, n + 1);
    let mut y = Trajectory::with_capacity(nh, n + 1);
    let mut beta = Trajectory::with_capacity(nl, n);
    let mut xi = Trajectory::with_capacity(nh, n);
    z.push(x0);
    y.push(y0);
    let (mut xn, mut yn) = (vec![0.0; nl], vec![0.0; nh]);
    for step in 0..n {
        fill_gaussian(rng, dt, &mut ws.db);
        fill_gaussian(rng, dt, &mut ws.de);
        crate::dynamics::step_split(m, &mut ws, z.row(step), y.row(step), &mut xn, &mut yn)
            .map_err(|e| e.at(t0 + (step + 1) as f64 * dt))?;
        z.push(&xn);
        y.push(&yn);
        beta.push(&ws.db);
        xi.push(&ws.de);
    }
    Ok(BindingPath { z, y, beta, xi, from_first, other: OnceCell::new() })
}

/// `log(dν_other/dν_own)` at a low path `z` with high noise `xi`, where
/// `ν_own` drove `z` through the increments `beta`, and `ν_other` is the law
/// started from the high state `y_other0`. Returns the high path the other
/// law reconstructs along `(z, xi)` as well.
pub fn split_log_ratio<S: SplitSystem + ?Sized>(
    m: &S,
    z: &Trajectory,
    beta: &Trajectory,
    xi: &Trajectory,
    y_other0: &[f64],
) -> DynResult<(f64, Trajectory)> {
    let (nl, nh) = (m.low_dim(), m.high_dim());
    let dt = m.dt();
    let mut ws = Workspace::new(m);
    let mut y = Trajectory::with_capacity(nh, z.len());
    y.push(y_other0);
    let mut next = vec![0.0; nh];
    let mut resid = vec![0.0; nl];
    let mut acc = 0.0;
    for n in 0..beta.len() {
        let zn = z.row(n);
        m.means(zn, y.row(n), &mut ws.low, &mut ws.high)
            .map_err(|e| e.at((n + 1) as f64 * dt))?;
        m.low_noise(zn, &mut ws.s);
        m.high_noise(zn, &mut ws.h);
        for (r, (a, b)) in resid.iter_mut().zip(z.row(n + 1).iter().zip(&ws.low)) {
            *r = a - b;
        }
        let b = solve(&ws.s, &resid)?;
        acc += (sq(beta.row(n)) - sq(&b)) / (2.0 * dt);
        for (k, e) in xi.row(n).iter().enumerate() {
            next[k] = ws.high[k] + ws.h[k] * e;
        }
        y.push(&next);
    }
    Ok((acc, y))
}

impl BindingPath {
    fn other<S: SplitSystem + ?Sized>(&self, m: &S, y_other0: &[f64]) -> &DynResult<(f64, Trajectory)> {
        self.other.get_or_init(|| split_log_ratio(m, &self.z, &self.beta, &self.xi, y_other0))
    }
}

/// Energy bookkeeping for one component over one block.
struct Profile {
    /// `(τ, E(τ))` at the stride points, `E` measured from the block start.
    points: Vec<(f64, f64)>,
    h_end: f64,
    increment: f64,
}

fn profile<S: SplitSystem + ?Sized>(m: &S, x: &Trajectory, y: &Trajectory, stride: usize) -> Profile {
    let nl = m.low_dim();
    let n = x.len() - 1;
    let mut u = vec![0.0; m.state_dim()];
    let load = |u: &mut [f64], j: usize| {
        u[..nl].copy_from_slice(x.row(j));
        u[nl..].copy_from_slice(y.row(j));
    };
    load(&mut u, 0);
    let mut ledger = EnergyLedger::start(m, &u, 0.0);
    let mut points = vec![(0.0, ledger.value())];
    let mut prev = 0;
    while prev < n {
        let j = (prev + stride).min(n);
        load(&mut u, j);
        ledger = energy_update(m, &ledger, &u, (j - prev) as f64 * m.dt());
        points.push((j as f64 * m.dt(), ledger.value()));
        prev = j;
    }
    Profile { points, h_end: ledger.terminal, increment: ledger.integral() }
}

struct Assessment {
    budget_ok: bool,
    fresh_ok: bool,
    h_end: [f64; 2],
    increments: [f64; 2],
}

fn assess<S: SplitSystem + ?Sized>(
    m: &S,
    cfg: &SchedulerConfig,
    comps: [(&Trajectory, &Trajectory); 2],
    tau0: f64,
    offsets: [f64; 2],
) -> Assessment {
    let t = m.block_len();
    let mut a = Assessment { budget_ok: true, fresh_ok: true, h_end: [0.0; 2], increments: [0.0; 2] };
    for (i, (x, y)) in comps.into_iter().enumerate() {
        let p = profile(m, x, y, cfg.energy_stride);
        let second = i == 1;
        a.budget_ok &= p.points.iter().all(|&(s, e)| e + offsets[i] <= cfg.budget(tau0 + s, second, t));
        a.fresh_ok &= p.h_end <= cfg.budget(0.0, second, t);
        a.h_end[i] = p.h_end;
        a.increments[i] = p.increment;
    }
    a
}

fn join(x: &Trajectory, y: &Trajectory, j: usize) -> Vec<f64> {
    let mut u = x.row(j).to_vec();
    u.extend_from_slice(y.row(j));
    u
}

fn gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

#[allow(clippy::too_many_arguments)]
fn finish<S: SplitSystem + ?Sized>(
    m: &S,
    k: usize,
    branch: Branch,
    coupled: bool,
    trials: usize,
    comps: [(&Trajectory, &Trajectory); 2],
    a: Assessment,
    fresh_requires_budget: bool,
) -> BlockOutcome {
    let n = comps[0].0.len() - 1;
    let u1 = join(comps[0].0, comps[0].1, n);
    let u2 = join(comps[1].0, comps[1].1, n);
    let low_gap = gap(comps[0].0.row(n), comps[1].0.row(n));
    let path_equal = coupled && branch != Branch::Uncoupled;
    let h_end = a.h_end[0] + a.h_end[1];
    let fresh_ok = a.fresh_ok && (!fresh_requires_budget || a.budget_ok);
    let data = BlockData {
        path_equal,
        terminal_low_equal: coupled,
        low_gap,
        h_end,
        persist_energy_ok: a.budget_ok,
        fresh_energy_ok: fresh_ok,
        increments: a.increments,
    };
    // an attempt that leaves the energy budget counts as failed
    let success = if branch == Branch::Uncoupled { coupled && a.budget_ok } else { coupled };
    let record = BlockRecord {
        k,
        branch,
        coupled: success,
        path_equal,
        terminal_low_equal: coupled,
        energy_ok: a.budget_ok,
        fresh_energy_ok: fresh_ok,
        h_end,
        distance: euclid(&u1, &u2),
        trials,
    };
    let _ = m;
    BlockOutcome { u1, u2, data, record }
}

/// One block of a pair with equal low modes, coupling the laws of the
/// low-mode path and high-mode noise seen from the two high states.
///
/// When the coupling succeeds both copies share the low path and the high
/// noise; the second copy's high modes are reconstructed from its own
/// initial high state along that shared path.
pub fn run_block_coupled<S: SplitSystem + ?Sized>(
    m: &S,
    u1: &[f64],
    u2: &[f64],
    state: &L0State,
    cfg: &SchedulerConfig,
    rng: &mut StreamRng,
) -> Result<BlockOutcome, EngineError> {
    let (x, y1) = m.split(u1);
    let (x2, y2) = m.split(u2);
    if x != x2 {
        return Err(EngineError::Contract(format!("block {}: coupled branch entered with distinct low modes", state.k)));
    }
    let l = state
        .l0
        .ok_or_else(|| EngineError::Contract(format!("block {}: coupled branch without l0", state.k)))?;
    let k = state.k;
    let t0 = k as f64 * m.block_len();
    let tau0 = (k - l) as f64 * m.block_len();

    if y1 == y2 {
        let p = sample_binding(m, x, y1, true, t0, rng)?;
        let a = assess(m, cfg, [(&p.z, &p.y), (&p.z, &p.y)], tau0, state.offsets);
        return Ok(finish(m, k, Branch::Identical, true, 0, [(&p.z, &p.y), (&p.z, &p.y)], a, false));
    }

    let log_ratio = |p: &DynResult<BindingPath>| match p {
        Ok(p) => {
            let y_other = if p.from_first { y2 } else { y1 };
            match p.other(m, y_other) {
                Ok((r, _)) if p.from_first => *r,
                Ok((r, _)) => -*r,
                Err(_) => f64::INFINITY,
            }
        }
        Err(_) => f64::INFINITY,
    };
    let oracle = DensityRatioOracle::new(log_ratio, Reference::First);
    let draw = maximal_coupling_sample(
        |r: &mut StreamRng| sample_binding(m, x, y1, true, t0, r),
        &oracle,
        |r: &mut StreamRng| sample_binding(m, x, y2, false, t0, r),
        rng,
        cfg.rejection_cap,
    )?;
    let p1 = draw.z1?;
    if draw.coupled {
        let (_, y_rec) = p1.other(m, y2).clone()?;
        let comps = [(&p1.z, &p1.y), (&p1.z, &y_rec)];
        let a = assess(m, cfg, comps, tau0, state.offsets);
        Ok(finish(m, k, Branch::Coupled, true, 0, comps, a, false))
    } else {
        let p2 = draw.z2?;
        let comps = [(&p1.z, &p1.y), (&p2.z, &p2.y)];
        let a = assess(m, cfg, comps, tau0, state.offsets);
        Ok(finish(m, k, Branch::Coupled, false, draw.trials, comps, a, false))
    }
}

/// Both copies over the attempt window, with `log(dπ/dG⋆π)` at the second
/// copy's noise.
#[derive(Debug, Clone)]
struct SteerPath {
    x: [Trajectory; 2],
    y: [Trajectory; 2],
    llr: f64,
}

/// Runs the attempt window. With `from_first` the first copy's noise is
/// drawn and the second copy's is its image under the steering map `G`;
/// otherwise the second copy's noise is drawn and the first copy's is the
/// preimage. High noise is shared either way.
///
/// Until the last step `G` shifts the low noise so as to remove an equal
/// share of the current low-mode mean discrepancy per remaining step; on
/// the last step it solves for equal low modes.
#[allow(clippy::too_many_arguments)]
fn steer<S: SplitSystem + ?Sized>(
    m: &S,
    u1: &[f64],
    u2: &[f64],
    r: usize,
    from_first: bool,
    t0: f64,
    rng: &mut StreamRng,
) -> DynResult<SteerPath> {
    let (nl, nh) = (m.low_dim(), m.high_dim());
    let dt = m.dt();
    let mut ws = [Workspace::new(m), Workspace::new(m)];
    let mut xs = [Trajectory::with_capacity(nl, r + 1), Trajectory::with_capacity(nl, r + 1)];
    let mut ys = [Trajectory::with_capacity(nh, r + 1), Trajectory::with_capacity(nh, r + 1)];
    for (i, u) in [u1, u2].into_iter().enumerate() {
        let (x, y) = m.split(u);
        xs[i].push(x);
        ys[i].push(y);
    }
    let (mut b1, mut b2) = (vec![0.0; nl], vec![0.0; nl]);
    let mut eta = vec![0.0; nh];
    let mut diff = vec![0.0; nl];
    let (mut xn, mut yn) = (vec![0.0; nl], vec![0.0; nh]);
    let mut llr = 0.0;
    for j in 0..r {
        let t = t0 + (j + 1) as f64 * dt;
        for i in 0..2 {
            let (x, y) = (xs[i].row(j), ys[i].row(j));
            let w = &mut ws[i];
            m.means(x, y, &mut w.low, &mut w.high).map_err(|e| e.at(t))?;
            m.low_noise(x, &mut w.s);
            m.high_noise(x, &mut w.h);
        }
        let rem = r - j;
        let (drawn, other) = if from_first { (&mut b1, &mut b2) } else { (&mut b2, &mut b1) };
        fill_gaussian(rng, dt, drawn);
        fill_gaussian(rng, dt, &mut eta);
        if rem > 1 {
            for (d, (a, b)) in diff.iter_mut().zip(ws[0].low.iter().zip(&ws[1].low)) {
                *d = (a - b) / rem as f64;
            }
            let c = solve(&ws[1].s, &diff)?;
            let sign = if from_first { 1.0 } else { -1.0 };
            for (o, (d, c)) in other.iter_mut().zip(drawn.iter().zip(&c)) {
                *o = d + sign * c;
            }
        } else {
            let (src, dst) = if from_first { (0, 1) } else { (1, 0) };
            apply(&ws[src].s, &ws[src].low, drawn, &mut xn);
            for (d, (a, b)) in diff.iter_mut().zip(xn.iter().zip(&ws[dst].low)) {
                *d = a - b;
            }
            let sol = solve(&ws[dst].s, &diff)?;
            other.copy_from_slice(&sol);
            llr += log_abs_det(&ws[0].s) - log_abs_det(&ws[1].s);
        }
        llr += (sq(&b1) - sq(&b2)) / (2.0 * dt);
        for (i, b) in [&b1, &b2].into_iter().enumerate() {
            let w = &ws[i];
            apply(&w.s, &w.low, b, &mut xn);
            for k in 0..nh {
                yn[k] = w.high[k] + w.h[k] * eta[k];
            }
            finite(&xn, t)?;
            finite(&yn, t)?;
            xs[i].push(&xn);
            ys[i].push(&yn);
        }
    }
    Ok(SteerPath { x: xs, y: ys, llr })
}

/// One block of a pair without a valid `l0`: shared noise over the first
/// part of the block, then one attempt to make the low modes equal at the
/// block end via a maximal coupling of the second copy's noise law with the
/// image of the first copy's noise under the steering map.
pub fn run_block_uncoupled<S: SplitSystem + ?Sized>(
    m: &S,
    u1: &[f64],
    u2: &[f64],
    k: usize,
    cfg: &SchedulerConfig,
    rng: &mut StreamRng,
) -> Result<BlockOutcome, EngineError> {
    let (nl, nh, n) = (m.low_dim(), m.high_dim(), m.steps_per_block());
    let dt = m.dt();
    let t0 = k as f64 * m.block_len();
    let r = ((cfg.attempt_fraction * n as f64).round() as usize).min(n);
    let shared = n - r;

    let mut ws = [Workspace::new(m), Workspace::new(m)];
    let mut xs = [Trajectory::with_capacity(nl, n + 1), Trajectory::with_capacity(nl, n + 1)];
    let mut ys = [Trajectory::with_capacity(nh, n + 1), Trajectory::with_capacity(nh, n + 1)];
    for (i, u) in [u1, u2].into_iter().enumerate() {
        let (x, y) = m.split(u);
        xs[i].push(x);
        ys[i].push(y);
    }
    let (mut db, mut de) = (vec![0.0; nl], vec![0.0; nh]);
    let (mut xn, mut yn) = (vec![0.0; nl], vec![0.0; nh]);
    for j in 0..shared {
        fill_gaussian(rng, dt, &mut db);
        fill_gaussian(rng, dt, &mut de);
        for i in 0..2 {
            ws[i].db.copy_from_slice(&db);
            ws[i].de.copy_from_slice(&de);
            crate::dynamics::step_split(m, &mut ws[i], xs[i].row(j), ys[i].row(j), &mut xn, &mut yn)
                .map_err(|e| e.at(t0 + (j + 1) as f64 * dt))?;
            xs[i].push(&xn);
            ys[i].push(&yn);
        }
    }
    let mut coupled = false;
    let mut trials = 0;
    if r > 0 {
        let v1 = join(&xs[0], &ys[0], shared);
        let v2 = join(&xs[1], &ys[1], shared);
        let ta = t0 + shared as f64 * dt;
        let oracle = DensityRatioOracle::new(
            |p: &DynResult<SteerPath>| p.as_ref().map_or(f64::INFINITY, |p| p.llr),
            Reference::First,
        );
        let draw = maximal_coupling_sample(
            |g: &mut StreamRng| steer(m, &v1, &v2, r, true, ta, g),
            &oracle,
            |g: &mut StreamRng| steer(m, &v1, &v2, r, false, ta, g),
            rng,
            cfg.rejection_cap,
        )?;
        let mut p1 = draw.z1?;
        coupled = draw.coupled;
        trials = draw.trials;
        let (px2, py2) = if coupled {
            let snap = p1.x[0].last().to_vec();
            let gap_before = gap(&snap, p1.x[1].last());
            if gap_before > cfg.equality_tol {
                return Err(EngineError::Contract(format!("block {k}: steering left a low-mode gap of {gap_before}")));
            }
            p1.x[1].row_mut(r).copy_from_slice(&snap);
            (p1.x[1].clone(), p1.y[1].clone())
        } else {
            let p2 = draw.z2?;
            let [_, x2] = p2.x;
            let [_, y2] = p2.y;
            (x2, y2)
        };
        for j in 1..=r {
            xs[0].push(p1.x[0].row(j));
            ys[0].push(p1.y[0].row(j));
            xs[1].push(px2.row(j));
            ys[1].push(py2.row(j));
        }
    }
    let comps = [(&xs[0], &ys[0]), (&xs[1], &ys[1])];
    let a = assess(m, cfg, comps, 0.0, [0.0; 2]);
    Ok(finish(m, k, Branch::Uncoupled, coupled, trials, comps, a, true))
}

pub(super) fn simulate_pair_split<S: SplitSystem + ?Sized>(
    m: &S,
    u1: &[f64],
    u2: &[f64],
    n_blocks: usize,
    cfg: &SchedulerConfig,
    rng: &mut StreamRng,
) -> Result<EpisodeResult, EngineError> {
    let d = m.state_dim();
    if u1.len() != d || u2.len() != d {
        return Err(EngineError::Contract(format!("states must have dimension {d}")));
    }
    let h = |u: &[f64]| {
        let (x, y) = m.split(u);
        m.lyapunov(x, y)
    };
    let (h1, h2) = (h(u1), h(u2));
    let t = m.block_len();
    let start = m.split(u1).0 == m.split(u2).0
        && h1 + h2 <= cfg.d0
        && h1 <= cfg.budget(0.0, false, t)
        && h2 <= cfg.budget(0.0, true, t);
    let mut st = L0State::initial(start.then_some(0));
    let mut out = EpisodeResult {
        states1: vec![u1.to_vec()],
        states2: vec![u2.to_vec()],
        l0: vec![st.l0],
        h: vec![h1 + h2],
        blocks: Vec::with_capacity(n_blocks),
    };
    let (mut c1, mut c2) = (u1.to_vec(), u2.to_vec());
    for k in 0..n_blocks {
        let o = match st.l0 {
            Some(_) => run_block_coupled(m, &c1, &c2, &st, cfg, rng)?,
            None => run_block_uncoupled(m, &c1, &c2, k, cfg, rng)?,
        };
        st = l0_update(&st, &o.data, cfg)?;
        out.l0.push(st.l0);
        out.h.push(o.data.h_end);
        out.blocks.push(o.record);
        out.states1.push(o.u1.clone());
        out.states2.push(o.u2.clone());
        c1 = o.u1;
        c2 = o.u2;
    }
    Ok(out)
}
