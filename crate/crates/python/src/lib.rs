//! Python bindings: finite-measure couplings, model simulation, coupled
//! episodes and the decay estimators.
//!
//! Structured results come back as plain dicts and lists.

use coupling_lab::cli::AnyModel;
use coupling_lab::dynamics::{DynamicsError, ModelConfig};
use coupling_lab::engine::{
    block_probabilities_from, calibrate_scheduler, run_episodes, EngineError, SchedulerConfig,
};
use coupling_lab::estimators::{self, TestFn};
use coupling_lab::measure::{self, MeasureError, ProbabilityMeasure};
use coupling_lab::rng::stream;
use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

create_exception!(coupling_lab_py, BlowUpError, PyRuntimeError, "A trajectory left the finite range.");
create_exception!(coupling_lab_py, CouplingFailure, PyRuntimeError, "The rejection sampler hit its cap.");

fn measure_err(e: MeasureError) -> PyErr {
    match e {
        MeasureError::CouplingFailure(_) => CouplingFailure::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn engine_err(e: EngineError) -> PyErr {
    match e {
        EngineError::Dynamics(DynamicsError::BlowUp { time }) => BlowUpError::new_err(format!("blow-up at t = {time}")),
        EngineError::Measure(m) => measure_err(m),
        EngineError::Config(m) => PyValueError::new_err(m),
        EngineError::Dynamics(DynamicsError::Config(m)) => PyValueError::new_err(m),
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Serializes through JSON into Python objects.
fn to_py<'py, T: Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let s = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (s,))
}

/// Parses a Python object (dict or None) through JSON.
fn from_py<T: serde::de::DeserializeOwned + Default>(obj: Option<&Bound<'_, PyAny>>) -> PyResult<T> {
    match obj {
        None => Ok(T::default()),
        Some(o) if o.is_none() => Ok(T::default()),
        Some(o) => {
            let s: String = o.py().import("json")?.call_method1("dumps", (o,))?.extract()?;
            serde_json::from_str(&s).map_err(|e| PyValueError::new_err(e.to_string()))
        }
    }
}

fn prob(w: Vec<f64>) -> PyResult<ProbabilityMeasure> {
    ProbabilityMeasure::from_weights(w).map_err(measure_err)
}

/// Joint law as a dense matrix over labels `0..n`.
fn dense(c: &measure::CouplingMatrix, n: usize, m: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..m).map(|j| c.entry(&i.to_string(), &j.to_string())).collect()).collect()
}

/// Total variation distance between two weight vectors on `0..n`.
#[pyfunction]
fn tv_distance(p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
    Ok(measure::tv_distance(&prob(p)?, &prob(q)?))
}

/// The maximal coupling of `p` and `q` as an `n × n` matrix.
#[pyfunction]
fn maximal_coupling(p: Vec<f64>, q: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
    let n = p.len().max(q.len());
    let c = measure::maximal_coupling_exact(&prob(p)?, &prob(q)?);
    Ok(dense(&c, n, n))
}

/// Coupling of `p` and `q` whose image under `labels` (one class index per
/// point) is maximal.
#[pyfunction]
fn pushforward_coupling(p: Vec<f64>, q: Vec<f64>, labels: Vec<usize>) -> PyResult<Vec<Vec<f64>>> {
    let (n, m) = (p.len(), q.len());
    if labels.len() < n.max(m) {
        return Err(PyValueError::new_err("labels must cover every point"));
    }
    let f0 = |l: &str| labels[l.parse::<usize>().expect("numeric label")].to_string();
    let c = measure::pushforward_coupling(&prob(p)?, &prob(q)?, f0);
    Ok(dense(&c, n, m))
}

/// Lower bound on the meet mass of a set from a moment bound.
#[pyfunction]
fn meet_lower_bound(p: f64, c: f64, mass: f64) -> PyResult<f64> {
    measure::coupling_meet_lower_bound(p, c, mass).map_err(measure_err)
}

/// Randomized check of the exact coupling identities.
#[pyfunction]
#[pyo3(signature = (instances=1000, max_support=64, seed=0))]
fn measure_battery<'py>(py: Python<'py>, instances: usize, max_support: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let r = py.detach(|| estimators::measure_battery(instances, max_support, seed));
    to_py(py, &r)
}

/// A torus, low/high or CGL model built from a configuration dict with a
/// `model` key.
#[pyclass(frozen)]
struct Model {
    inner: AnyModel,
    config: ModelConfig,
}

#[pymethods]
impl Model {
    #[new]
    fn new(config: &Bound<'_, PyAny>) -> PyResult<Self> {
        let s: String = config.py().import("json")?.call_method1("dumps", (config,))?.extract()?;
        let cfg: ModelConfig = serde_json::from_str(&s).map_err(|e| PyValueError::new_err(e.to_string()))?;
        let inner = AnyModel::build(&cfg).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Self { inner, config: cfg })
    }

    #[getter]
    fn state_dim(&self) -> usize {
        self.inner.coupling().state_dim()
    }

    #[getter]
    fn block_len(&self) -> f64 {
        self.inner.coupling().block_len()
    }

    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.config)
    }

    fn lyapunov(&self, u: Vec<f64>) -> f64 {
        self.inner.coupling().lyapunov(&u)
    }

    fn distance(&self, u1: Vec<f64>, u2: Vec<f64>) -> f64 {
        self.inner.coupling().distance(&u1, &u2)
    }

    /// Block-end states of one trajectory.
    #[pyo3(signature = (u0, blocks, seed, trajectory=0))]
    fn simulate(&self, py: Python<'_>, u0: Vec<f64>, blocks: usize, seed: u64, trajectory: u64) -> PyResult<Vec<Vec<f64>>> {
        let m = self.inner.coupling();
        py.detach(|| m.simulate_single(&u0, blocks, &mut stream(seed, &[trajectory]))).map_err(engine_err)
    }

    /// Runs coupled episodes and returns the block probabilities together
    /// with the per-episode `l0` sequences and block-end distances.
    #[pyo3(signature = (u1, u2, blocks, episodes, seed, scheduler=None))]
    fn couple<'py>(
        &self,
        py: Python<'py>,
        u1: Vec<f64>,
        u2: Vec<f64>,
        blocks: usize,
        episodes: usize,
        seed: u64,
        scheduler: Option<&Bound<'py, PyAny>>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let cfg: SchedulerConfig = from_py(scheduler)?;
        let m = self.inner.coupling();
        let batch = py.detach(|| run_episodes(m, &u1, &u2, blocks, &cfg, seed, episodes)).map_err(engine_err)?;
        let probs = block_probabilities_from(&batch.episodes, &cfg, batch.complete);
        let l0: Vec<&Vec<Option<usize>>> = batch.episodes.iter().map(|e| &e.l0).collect();
        let dist: Vec<Vec<f64>> = batch
            .episodes
            .iter()
            .map(|e| e.states1.iter().zip(&e.states2).map(|(a, b)| m.distance(a, b)).collect())
            .collect();
        to_py(py, &serde_json::json!({"probabilities": probs, "l0": l0, "distance": dist}))
    }

    /// Calibrated scheduler constants, as a dict.
    #[pyo3(signature = (warmup_blocks=5, samples=400, seed=0, base=None))]
    fn calibrate<'py>(
        &self,
        py: Python<'py>,
        warmup_blocks: usize,
        samples: usize,
        seed: u64,
        base: Option<&Bound<'py, PyAny>>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let base: SchedulerConfig = from_py(base)?;
        let cfg = match &self.inner {
            AnyModel::LowHigh(m) => py.detach(|| calibrate_scheduler(m, &base, warmup_blocks, samples, seed)),
            AnyModel::Cgl(m) => py.detach(|| calibrate_scheduler(m.as_ref(), &base, warmup_blocks, samples, seed)),
            AnyModel::Torus(_) => return Err(PyValueError::new_err("calibration needs a lowhigh or cgl model")),
        }
        .map_err(engine_err)?;
        to_py(py, &cfg)
    }

    /// `P(u₁(kT) ≠ u₂(kT))` at the given blocks, with an exponential fit.
    #[pyo3(signature = (u1, u2, blocks, episodes, seed, scheduler=None))]
    fn tv_decay<'py>(
        &self,
        py: Python<'py>,
        u1: Vec<f64>,
        u2: Vec<f64>,
        blocks: Vec<usize>,
        episodes: usize,
        seed: u64,
        scheduler: Option<&Bound<'py, PyAny>>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let cfg: SchedulerConfig = from_py(scheduler)?;
        let m = self.inner.coupling();
        let c = py
            .detach(|| estimators::tv_decay_curve(m, &u1, &u2, &blocks, &cfg, episodes, seed))
            .map_err(engine_err)?;
        to_py(py, &c)
    }

    /// Largest difference of expectations over a panel of bounded
    /// Lipschitz functionals; the default panel when `panel` is None.
    #[pyo3(signature = (u1, u2, blocks, episodes, seed, scheduler=None, panel=None))]
    #[allow(clippy::too_many_arguments)]
    fn lipb_decay<'py>(
        &self,
        py: Python<'py>,
        u1: Vec<f64>,
        u2: Vec<f64>,
        blocks: Vec<usize>,
        episodes: usize,
        seed: u64,
        scheduler: Option<&Bound<'py, PyAny>>,
        panel: Option<&Bound<'py, PyAny>>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let cfg: SchedulerConfig = from_py(scheduler)?;
        let m = self.inner.coupling();
        let panel: Vec<TestFn> = match from_py::<Vec<TestFn>>(panel)? {
            p if p.is_empty() => estimators::default_panel(m.state_dim()),
            p => p,
        };
        let c = py
            .detach(|| estimators::lipb_decay_curve(m, &u1, &u2, &panel, &blocks, &cfg, episodes, seed))
            .map_err(engine_err)?;
        to_py(py, &c)
    }

    fn __repr__(&self) -> String {
        format!("Model({})", serde_json::to_string(&self.config).unwrap_or_default())
    }
}

#[pymodule]
fn coupling_lab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(tv_distance, m)?)?;
    m.add_function(wrap_pyfunction!(maximal_coupling, m)?)?;
    m.add_function(wrap_pyfunction!(pushforward_coupling, m)?)?;
    m.add_function(wrap_pyfunction!(meet_lower_bound, m)?)?;
    m.add_function(wrap_pyfunction!(measure_battery, m)?)?;
    m.add_class::<Model>()?;
    m.add("BlowUpError", m.py().get_type::<BlowUpError>())?;
    m.add("CouplingFailure", m.py().get_type::<CouplingFailure>())?;
    Ok(())
}
