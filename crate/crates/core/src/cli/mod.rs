//! The `coupling-lab` command-line runner.
//!
//! Every command reads one JSON experiment document. Outputs are written to
//! a temporary file in the output directory and renamed into place, so a
//! failed run never leaves a partial file behind.

use crate::dynamics::{
    energy_update, simulate_split, CglModel, DynamicsError, EnergyLedger, ModelConfig, SplitSystem, TorusModel,
};
use crate::engine::{
    block_probabilities_from, calibrate_scheduler, interrupted, request_interrupt, run_episodes, CouplingModel,
    EngineError, EpisodeResult, SchedulerConfig,
};
use crate::estimators::{self, TestFn};
use crate::rng::stream;
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Environment variable that overrides the output directory of an experiment document.
pub const OUT_ENV: &str = "COUPLING_LAB_OUT";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("blow-up at t = {time}")]
    BlowUp { time: f64 },
    #[error("i/o error: {0}")]
    Io(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::BlowUp { .. } => 3,
            CliError::Io(_) => 4,
            CliError::Internal(_) => 1,
        }
    }

    fn to_json(&self) -> Value {
        match self {
            CliError::Config(m) => json!({"error": "config", "message": m}),
            CliError::BlowUp { time } => json!({"error": "blow_up", "time": time, "message": self.to_string()}),
            CliError::Io(m) => json!({"error": "io", "message": m}),
            CliError::Internal(m) => json!({"error": "internal", "message": m}),
        }
    }
}

impl From<DynamicsError> for CliError {
    fn from(e: DynamicsError) -> Self {
        match e {
            DynamicsError::BlowUp { time } => CliError::BlowUp { time },
            DynamicsError::Config(m) => CliError::Config(m),
            e => CliError::Internal(e.to_string()),
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Dynamics(d) => d.into(),
            EngineError::Config(m) => CliError::Config(m),
            e => CliError::Internal(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "coupling-lab", version, about = "Coupling experiments for dissipative stochastic models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct CommonArgs {
    /// Experiment document (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Master seed; overrides the document's `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; overrides the document's `workers`.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate single trajectories and write states with their energy ledger.
    Simulate(CommonArgs),
    /// Run coupled episodes and estimate the block probabilities.
    Couple(CommonArgs),
    /// Run the selected verification checks.
    Verify(CommonArgs),
    /// Merge JSON summaries into one CSV table.
    Report {
        /// JSON summaries to merge.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateSpec {
    /// Initial state; zero when absent.
    pub u0: Option<Vec<f64>>,
    pub blocks: usize,
    pub trajectories: usize,
    /// Steps between recorded rows.
    pub record_every: usize,
}

impl Default for SimulateSpec {
    fn default() -> Self {
        Self { u0: None, blocks: 1, trajectories: 1, record_every: 10 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CoupleSpec {
    pub u1: Option<Vec<f64>>,
    pub u2: Option<Vec<f64>>,
    pub blocks: usize,
    pub episodes: usize,
    /// Write the per-block episode log.
    pub log: bool,
}

impl Default for CoupleSpec {
    fn default() -> Self {
        Self { u1: None, u2: None, blocks: 20, episodes: 1000, log: true }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationSpec {
    #[serde(default = "default_warmup")]
    pub warmup_blocks: usize,
    #[serde(default = "default_cal_samples")]
    pub samples: usize,
}

fn default_warmup() -> usize {
    5
}
fn default_cal_samples() -> usize {
    400
}

/// One verification check and its parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case")]
pub enum CheckSpec {
    Measure {
        #[serde(default = "default_instances")]
        instances: usize,
        #[serde(default = "default_support")]
        max_support: usize,
    },
    TvDecay {
        u1: Vec<f64>,
        u2: Vec<f64>,
        blocks: Vec<usize>,
        episodes: usize,
    },
    LipbDecay {
        u1: Vec<f64>,
        u2: Vec<f64>,
        #[serde(default)]
        panel: Option<Vec<TestFn>>,
        blocks: Vec<usize>,
        episodes: usize,
    },
    BlockProbabilities {
        u1: Vec<f64>,
        u2: Vec<f64>,
        blocks: usize,
        episodes: usize,
    },
    FoiasProdi {
        #[serde(default)]
        u1: Option<Vec<f64>>,
        #[serde(default)]
        u2: Option<Vec<f64>>,
        horizon: f64,
        samples: usize,
    },
    DriftEstimate {
        #[serde(default)]
        u1: Option<Vec<f64>>,
        #[serde(default)]
        u2: Option<Vec<f64>>,
        horizon: f64,
        t0: Vec<f64>,
        samples: usize,
    },
    GrowthTail {
        #[serde(default)]
        u0: Option<Vec<f64>>,
        horizon: f64,
        rho: Vec<f64>,
        samples: usize,
    },
    Lyapunov {
        #[serde(default)]
        u0: Option<Vec<f64>>,
        times: Vec<f64>,
        #[serde(default = "default_ks")]
        ks: Vec<u32>,
        samples: usize,
    },
    CtrlH {
        shape: Vec<f64>,
        scales: Vec<f64>,
        horizons: Vec<f64>,
        samples: usize,
    },
    HsTail {
        #[serde(default)]
        u0: Option<Vec<f64>>,
        k: u32,
        delta: f64,
        times: Vec<f64>,
        samples: usize,
    },
}

fn default_instances() -> usize {
    1000
}
fn default_support() -> usize {
    64
}
fn default_ks() -> Vec<u32> {
    vec![1]
}

impl CheckSpec {
    pub fn name(&self) -> &'static str {
        match self {
            CheckSpec::Measure { .. } => "measure",
            CheckSpec::TvDecay { .. } => "tv_decay",
            CheckSpec::LipbDecay { .. } => "lipb_decay",
            CheckSpec::BlockProbabilities { .. } => "block_probabilities",
            CheckSpec::FoiasProdi { .. } => "foias_prodi",
            CheckSpec::DriftEstimate { .. } => "drift_estimate",
            CheckSpec::GrowthTail { .. } => "growth_tail",
            CheckSpec::Lyapunov { .. } => "lyapunov",
            CheckSpec::CtrlH { .. } => "ctrl_h",
            CheckSpec::HsTail { .. } => "hs_tail",
        }
    }
}

/// A complete experiment document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    #[serde(flatten)]
    pub model: ModelConfig,
    #[serde(default)]
    pub scheduler: SchedulerConfig,
    #[serde(default)]
    pub calibrate: Option<CalibrationSpec>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub simulate: SimulateSpec,
    #[serde(default)]
    pub couple: CoupleSpec,
    #[serde(default)]
    pub verify: Vec<CheckSpec>,
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// Settings resolved from the document and the command line.
struct Resolved {
    spec: ExperimentSpec,
    seed: u64,
    out: PathBuf,
    workers: usize,
}

fn resolve(args: &CommonArgs) -> CliResult<Resolved> {
    let spec = ExperimentSpec::load(&args.config)?;
    let seed = args
        .seed
        .or(spec.seed)
        .ok_or_else(|| CliError::Config("no seed given: set `seed` in the document or pass --seed".into()))?;
    let out = args
        .out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .or_else(|| spec.out.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    let workers = args.workers.or(spec.workers).unwrap_or(1);
    if workers == 0 {
        return Err(CliError::Config("workers must be positive".into()));
    }
    spec.scheduler.validate()?;
    Ok(Resolved { spec, seed, out, workers })
}

/// Writes `bytes` to `dir/name` through a temporary file and a rename.
pub fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> CliResult<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    let path = dir.join(name);
    tmp.persist(&path).map_err(|e| CliError::Io(e.to_string()))?;
    Ok(path)
}

fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| CliError::Io(e.to_string()))?;
    for r in rows {
        w.write_record(r).map_err(|e| CliError::Io(e.to_string()))?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

fn json_bytes(v: &Value) -> CliResult<Vec<u8>> {
    let mut s = serde_json::to_vec_pretty(v).map_err(|e| CliError::Internal(e.to_string()))?;
    s.push(b'\n');
    Ok(s)
}

/// A built model of any of the supported classes.
pub enum AnyModel {
    Torus(TorusModel),
    LowHigh(crate::dynamics::LowHighModel),
    Cgl(Box<CglModel>),
}

impl AnyModel {
    pub fn build(cfg: &ModelConfig) -> CliResult<Self> {
        Ok(match cfg {
            ModelConfig::Torus(c) => AnyModel::Torus(c.build()?),
            ModelConfig::Lowhigh(c) => AnyModel::LowHigh(c.build()?),
            ModelConfig::Cgl(c) => AnyModel::Cgl(Box::new(c.build()?)),
        })
    }

    pub fn coupling(&self) -> &dyn CouplingModel {
        match self {
            AnyModel::Torus(m) => m,
            AnyModel::LowHigh(m) => m,
            AnyModel::Cgl(m) => m.as_ref(),
        }
    }

    fn split(&self) -> Option<&dyn SplitSystem> {
        match self {
            AnyModel::Torus(_) => None,
            AnyModel::LowHigh(m) => Some(m),
            AnyModel::Cgl(m) => Some(m.as_ref()),
        }
    }

    fn cgl(&self, check: &str) -> CliResult<&CglModel> {
        match self {
            AnyModel::Cgl(m) => Ok(m),
            _ => Err(CliError::Config(format!("check `{check}` needs the cgl model"))),
        }
    }

    fn split_for(&self, check: &str) -> CliResult<&dyn SplitSystem> {
        self.split().ok_or_else(|| CliError::Config(format!("check `{check}` needs a lowhigh or cgl model")))
    }
}

fn state_or_zero(model: &AnyModel, u: &Option<Vec<f64>>) -> CliResult<Vec<f64>> {
    let d = model.coupling().state_dim();
    let u = u.clone().unwrap_or_else(|| vec![0.0; d]);
    if u.len() != d {
        return Err(CliError::Config(format!("state has {} entries, model needs {d}", u.len())));
    }
    Ok(u)
}

fn fmt(v: f64) -> String {
    // shortest round-trip representation keeps reruns bitwise comparable;
    // adding zero folds −0 into +0
    format!("{:?}", v + 0.0)
}

fn install_interrupt_handler() {
    // a second installation attempt (tests run several commands) is harmless
    let _ = ctrlc::set_handler(request_interrupt);
}

fn scheduler_for(model: &AnyModel, spec: &ExperimentSpec, seed: u64) -> CliResult<SchedulerConfig> {
    match (&spec.calibrate, model.split()) {
        (Some(c), Some(m)) => {
            Ok(calibrate_scheduler(m, &spec.scheduler, c.warmup_blocks, c.samples, crate::rng::child_seed(seed, 7))?)
        }
        (Some(_), None) => Err(CliError::Config("calibration needs a lowhigh or cgl model".into())),
        _ => Ok(spec.scheduler.clone()),
    }
}

/// Rows of one trajectory, recorded every `record_every` steps counted from
/// the start. The energy ledger advances every `stride` steps in between.
fn simulate_rows(
    model: &AnyModel,
    u0: &[f64],
    blocks: usize,
    (record_every, stride): (usize, usize),
    traj: usize,
    seed: u64,
) -> CliResult<Vec<Vec<String>>> {
    let mut rng = stream(seed, &[traj as u64]);
    let mut rows = Vec::new();
    let row = |t: f64, h: f64, e: f64, u: &[f64]| {
        let mut r = vec![traj.to_string(), fmt(t), fmt(h), fmt(e)];
        r.extend(u.iter().map(|v| fmt(*v)));
        r
    };
    match model {
        AnyModel::Torus(m) => {
            let n = m.steps_per_block();
            let mut x = crate::dynamics::wrap(u0[0]);
            rows.push(row(0.0, 0.0, 0.0, &[x]));
            for b in 0..blocks {
                let seg = m.simulate(x, n, b as f64 * m.block_len, &mut rng);
                for j in 1..=n {
                    let g = b * n + j;
                    if g % record_every == 0 {
                        rows.push(row(g as f64 * m.dt, 0.0, 0.0, seg.states.row(j)));
                    }
                }
                x = seg.states.last()[0];
            }
        }
        _ => {
            let m = model.split().expect("split model");
            let n = m.steps_per_block();
            let mut u = u0.to_vec();
            let mut ledger = EnergyLedger::start(m, &u, 0.0);
            rows.push(row(0.0, ledger.terminal, ledger.value(), &u));
            for b in 0..blocks {
                let seg = simulate_split(m, &u, n, b as f64 * m.block_len(), &mut rng)?;
                let mut prev = 0;
                for j in 1..=n {
                    let g = b * n + j;
                    let record = g.is_multiple_of(record_every);
                    if record || g.is_multiple_of(stride) || j == n {
                        ledger = energy_update(m, &ledger, seg.states.row(j), (j - prev) as f64 * m.dt());
                        prev = j;
                    }
                    if record {
                        rows.push(row(g as f64 * m.dt(), ledger.terminal, ledger.value(), seg.states.row(j)));
                    }
                }
                u = seg.states.last().to_vec();
            }
        }
    }
    Ok(rows)
}

fn cmd_simulate(r: &Resolved) -> CliResult<Vec<PathBuf>> {
    let model = AnyModel::build(&r.spec.model)?;
    let sim = &r.spec.simulate;
    if sim.record_every == 0 || sim.trajectories == 0 {
        return Err(CliError::Config("record_every and trajectories must be positive".into()));
    }
    let u0 = state_or_zero(&model, &sim.u0)?;
    let stride = r.spec.scheduler.energy_stride;
    let results: Vec<Option<CliResult<Vec<Vec<String>>>>> = (0..sim.trajectories)
        .into_par_iter()
        .map(|i| (!interrupted()).then(|| simulate_rows(&model, &u0, sim.blocks, (sim.record_every, stride), i, r.seed)))
        .collect();
    let complete = results.iter().all(Option::is_some);
    let mut rows = Vec::new();
    for res in results.into_iter().flatten() {
        rows.extend(res?);
    }
    let mut header: Vec<String> = ["trajectory", "t", "H", "E"].iter().map(|s| s.to_string()).collect();
    header.extend((0..u0.len()).map(|i| format!("u{i}")));
    let mut paths = vec![write_atomic(&r.out, "trajectory.csv", &csv_bytes(&header, &rows)?)?];
    let summary = json!({
        "name": r.spec.name,
        "command": "simulate",
        "seed": r.seed,
        "trajectories": sim.trajectories,
        "blocks": sim.blocks,
        "complete": complete,
    });
    paths.push(write_atomic(&r.out, "simulate_summary.json", &json_bytes(&summary)?)?);
    Ok(paths)
}

fn episode_rows(episodes: &[EpisodeResult]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for (e, ep) in episodes.iter().enumerate() {
        for (k, b) in ep.blocks.iter().enumerate() {
            rows.push(vec![
                e.to_string(),
                (k + 1).to_string(),
                ep.l0[k + 1].map_or("inf".into(), |l| l.to_string()),
                fmt(ep.h[k + 1]),
                serde_json::to_value(b.branch).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
                b.coupled.to_string(),
                b.path_equal.to_string(),
                b.energy_ok.to_string(),
                b.fresh_energy_ok.to_string(),
                fmt(b.distance),
                b.trials.to_string(),
            ]);
        }
    }
    rows
}

fn cmd_couple(r: &Resolved) -> CliResult<Vec<PathBuf>> {
    let model = AnyModel::build(&r.spec.model)?;
    let c = &r.spec.couple;
    let u1 = state_or_zero(&model, &c.u1)?;
    let u2 = state_or_zero(&model, &c.u2)?;
    let cfg = scheduler_for(&model, &r.spec, r.seed)?;
    let batch = run_episodes(model.coupling(), &u1, &u2, c.blocks, &cfg, r.seed, c.episodes)?;
    let probs = block_probabilities_from(&batch.episodes, &cfg, batch.complete);
    let mut paths = Vec::new();
    if c.log {
        let header: Vec<String> = [
            "episode", "k", "l0", "H", "branch", "coupled", "path_equal", "energy_ok", "fresh_energy_ok", "distance",
            "trials",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        paths.push(write_atomic(&r.out, "episodes.csv", &csv_bytes(&header, &episode_rows(&batch.episodes))?)?);
    }
    let coupled_by_end = batch.episodes.iter().filter(|e| e.coupling_block().is_some()).count();
    let summary = json!({
        "name": r.spec.name,
        "command": "couple",
        "seed": r.seed,
        "scheduler": cfg,
        "episodes": batch.episodes.len(),
        "blocks": c.blocks,
        "complete": batch.complete,
        "p_hat0": probs.p_attempt,
        "p_hat_minus1": probs.p_minus1,
        "p_age": probs.p_age,
        "decoupling": probs.decoupling,
        "coupled_at_end": estimators::wilson(coupled_by_end, batch.episodes.len()),
        "warnings": probs.warnings,
    });
    paths.push(write_atomic(&r.out, "couple_summary.json", &json_bytes(&summary)?)?);
    Ok(paths)
}

/// Warm states for checks that need realistic initial conditions: two
/// independent states after two blocks from zero, the second sharing the
/// first one's low modes.
fn warm_pair(m: &dyn SplitSystem, seed: u64) -> CliResult<(Vec<f64>, Vec<f64>)> {
    let zero = vec![0.0; m.state_dim()];
    let n = 2 * m.steps_per_block();
    let a = simulate_split(m, &zero, n, 0.0, &mut stream(seed, &[0]))?.states.last().to_vec();
    let b = simulate_split(m, &zero, n, 0.0, &mut stream(seed, &[1]))?.states.last().to_vec();
    let nl = m.low_dim();
    let mut u2 = a.clone();
    u2[nl..].copy_from_slice(&b[nl..]);
    Ok((a, u2))
}

fn to_value<T: Serialize>(v: &T) -> CliResult<Value> {
    serde_json::to_value(v).map_err(|e| CliError::Internal(e.to_string()))
}

fn run_check(model: &AnyModel, cfg: &SchedulerConfig, check: &CheckSpec, seed: u64) -> CliResult<(bool, Value)> {
    let name = check.name();
    let state = |u: &Vec<f64>| state_or_zero(model, &Some(u.clone()));
    let pair = |u1: &Option<Vec<f64>>, u2: &Option<Vec<f64>>, m: &dyn SplitSystem| -> CliResult<(Vec<f64>, Vec<f64>)> {
        match (u1, u2) {
            (Some(a), Some(b)) => Ok((state(a)?, state(b)?)),
            _ => warm_pair(m, crate::rng::child_seed(seed, 11)),
        }
    };
    Ok(match check {
        CheckSpec::Measure { instances, max_support } => {
            let r = estimators::measure_battery(*instances, *max_support, seed);
            (r.pass, to_value(&r)?)
        }
        CheckSpec::TvDecay { u1, u2, blocks, episodes } => {
            let c = estimators::tv_decay_curve(model.coupling(), &state(u1)?, &state(u2)?, blocks, cfg, *episodes, seed)?;
            // a curve that reaches zero exactly cannot be fitted but has decayed
            let hit_zero = c.values.last() == Some(&0.0) && c.values.windows(2).all(|w| w[1] <= w[0]);
            let pass = c.fit.is_some_and(|f| f.beta > 0.0) || hit_zero;
            (pass, to_value(&c)?)
        }
        CheckSpec::LipbDecay { u1, u2, panel, blocks, episodes } => {
            let panel = panel.clone().unwrap_or_else(|| estimators::default_panel(model.coupling().state_dim()));
            let c = estimators::lipb_decay_curve(
                model.coupling(),
                &state(u1)?,
                &state(u2)?,
                &panel,
                blocks,
                cfg,
                *episodes,
                seed,
            )?;
            let pass = c.fit.is_some_and(|f| f.beta > 0.0 && f.r2 >= 0.9);
            (pass, to_value(&c)?)
        }
        CheckSpec::BlockProbabilities { u1, u2, blocks, episodes } => {
            let b = crate::engine::estimate_block_probabilities(
                model.coupling(),
                &state(u1)?,
                &state(u2)?,
                *blocks,
                cfg,
                *episodes,
                seed,
            )?;
            let pass = b.p_minus1.n == 0 || b.p_minus1.hi > 0.0;
            (pass, to_value(&b)?)
        }
        CheckSpec::FoiasProdi { u1, u2, horizon, samples } => {
            let m = model.cgl(name)?;
            let (a, b) = pair(u1, u2, m)?;
            let r = estimators::foias_prodi_verify(m, &a, &b, *horizon, cfg, *samples, seed)?;
            (r.pass, to_value(&r)?)
        }
        CheckSpec::DriftEstimate { u1, u2, horizon, t0, samples } => {
            let m = model.cgl(name)?;
            let (a, b) = pair(u1, u2, m)?;
            let r = estimators::drift_estimate_verify(m, &a, &b, *horizon, t0, cfg, *samples, seed)?;
            (r.pass, to_value(&r)?)
        }
        CheckSpec::GrowthTail { u0, horizon, rho, samples } => {
            let m = model.split_for(name)?;
            let u = state_or_zero(model, u0)?;
            let r = estimators::growth_tail_verify(m, &u, *horizon, rho, cfg.energy_stride, *samples, seed)?;
            (r.pass, to_value(&r)?)
        }
        CheckSpec::Lyapunov { u0, times, ks, samples } => {
            let m = model.split_for(name)?;
            let u = state_or_zero(model, u0)?;
            let r = estimators::lyapunov_verify(m, &u, times, ks, cfg.r0, *samples, seed)?;
            (r.pass, to_value(&r)?)
        }
        CheckSpec::CtrlH { shape, scales, horizons, samples } => {
            let m = model.cgl(name)?;
            let r = estimators::ctrl_h_by_l2_verify(m, &state(shape)?, scales, horizons, *samples, seed)?;
            (r.pass, to_value(&r)?)
        }
        CheckSpec::HsTail { u0, k, delta, times, samples } => {
            let m = model.cgl(name)?;
            let u = state_or_zero(model, u0)?;
            let r = estimators::hs_tail_verify(m, &u, *k, *delta, times, *samples, seed)?;
            (r.pass, to_value(&r)?)
        }
    })
}

fn cmd_verify(r: &Resolved) -> CliResult<Vec<PathBuf>> {
    if r.spec.verify.is_empty() {
        return Err(CliError::Config("no checks selected: `verify` must list at least one check".into()));
    }
    let model = AnyModel::build(&r.spec.model)?;
    let cfg = scheduler_for(&model, &r.spec, r.seed)?;
    let mut checks = Vec::new();
    let mut all = true;
    for (i, c) in r.spec.verify.iter().enumerate() {
        if interrupted() {
            break;
        }
        let (pass, report) = run_check(&model, &cfg, c, crate::rng::child_seed(r.seed, 100 + i as u64))?;
        all &= pass;
        checks.push(json!({"check": c.name(), "pass": pass, "report": report}));
    }
    let complete = checks.len() == r.spec.verify.len();
    let summary = json!({
        "name": r.spec.name,
        "command": "verify",
        "seed": r.seed,
        "pass": all && complete,
        "complete": complete,
        "checks": checks,
    });
    Ok(vec![write_atomic(&r.out, "verify_report.json", &json_bytes(&summary)?)?])
}

fn flatten(prefix: &str, v: &Value, out: &mut Map<String, Value>) {
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, x, out);
            }
        }
        Value::Array(a) => {
            for (i, x) in a.iter().enumerate() {
                flatten(&format!("{prefix}.{i}"), x, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.clone());
        }
    }
}

fn cmd_report(inputs: &[PathBuf], out: &Path) -> CliResult<Vec<PathBuf>> {
    let mut rows = Vec::new();
    let mut keys = std::collections::BTreeSet::new();
    for p in inputs {
        let text = std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
        let v: Value = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
        let mut flat = Map::new();
        flatten("", &v, &mut flat);
        keys.extend(flat.keys().cloned());
        rows.push((p.display().to_string(), flat));
    }
    let mut header = vec!["source".to_string()];
    header.extend(keys.iter().cloned());
    let table: Vec<Vec<String>> = rows
        .into_iter()
        .map(|(src, flat)| {
            let mut r = vec![src];
            for k in &keys {
                r.push(match flat.get(k) {
                    None | Some(Value::Null) => String::new(),
                    Some(Value::String(s)) => s.clone(),
                    Some(x) => x.to_string(),
                });
            }
            r
        })
        .collect();
    Ok(vec![write_atomic(out, "report.csv", &csv_bytes(&header, &table)?)?])
}

fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Internal(e.to_string()))?;
    Ok(pool.install(f))
}

/// Runs a parsed command line and returns the written files.
pub fn execute(cli: &Cli) -> CliResult<Vec<PathBuf>> {
    install_interrupt_handler();
    match &cli.command {
        Command::Simulate(a) => {
            let r = resolve(a)?;
            with_pool(r.workers, || cmd_simulate(&r))?
        }
        Command::Couple(a) => {
            let r = resolve(a)?;
            with_pool(r.workers, || cmd_couple(&r))?
        }
        Command::Verify(a) => {
            let r = resolve(a)?;
            with_pool(r.workers, || cmd_verify(&r))?
        }
        Command::Report { inputs, out } => cmd_report(inputs, out),
    }
}

/// Entry point of the binary: parses `args`, runs the command and returns
/// the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            0
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}
