//! Finite measures, total variation, and exact couplings.
//!
//! Measures are stored as an ordered list of labels with nonnegative weights.
//! Binary operations act on the union of supports, padding missing labels with
//! zero weight, so `μ₁` and `μ₂` need not be given on the same list.

mod sampler;

pub use sampler::{maximal_coupling_sample, CoupledDraw, DensityRatioOracle, Reference};

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

/// Mass tolerance within which a measure is renormalized on input.
pub const NORMALIZE_TOL: f64 = 1e-9;
/// Default cap on rejection-loop iterations in the path sampler.
pub const DEFAULT_REJECTION_CAP: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("coupling failure: rejection loop exceeded {0} iterations")]
    CouplingFailure(usize),
}

pub type Result<T> = std::result::Result<T, MeasureError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMeasure")]
pub struct FiniteMeasure {
    labels: Vec<String>,
    weights: Vec<f64>,
}

#[derive(Deserialize)]
struct RawMeasure {
    labels: Vec<String>,
    weights: Vec<f64>,
}

impl TryFrom<RawMeasure> for FiniteMeasure {
    type Error = MeasureError;
    fn try_from(r: RawMeasure) -> Result<Self> {
        FiniteMeasure::new(r.labels, r.weights)
    }
}

impl FiniteMeasure {
    pub fn new(labels: Vec<String>, weights: Vec<f64>) -> Result<Self> {
        if labels.len() != weights.len() {
            return Err(MeasureError::InvalidMeasure(format!(
                "{} labels but {} weights",
                labels.len(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(MeasureError::InvalidMeasure(format!("weight {w} is not a nonnegative number")));
        }
        let mut seen = std::collections::HashSet::with_capacity(labels.len());
        for l in &labels {
            if !seen.insert(l.as_str()) {
                return Err(MeasureError::InvalidMeasure(format!("duplicate label {l:?}")));
            }
        }
        Ok(Self { labels, weights })
    }

    /// Measure on labels `"0".."n-1"`.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let labels = (0..weights.len()).map(|i| i.to_string()).collect();
        Self::new(labels, weights)
    }

    pub fn zero() -> Self {
        Self { labels: Vec::new(), weights: Vec::new() }
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Weight of `label`, zero when absent.
    pub fn weight(&self, label: &str) -> f64 {
        self.labels.iter().position(|l| l == label).map_or(0.0, |i| self.weights[i])
    }

    /// Mass of the labels selected by `pred`.
    pub fn mass_of(&self, mut pred: impl FnMut(&str) -> bool) -> f64 {
        self.labels
            .iter()
            .zip(&self.weights)
            .filter(|(l, _)| pred(l))
            .map(|(_, w)| w)
            .sum()
    }

    /// Image measure under `f`, with image labels in order of first appearance.
    pub fn pushforward(&self, f: impl Fn(&str) -> String) -> FiniteMeasure {
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut labels = Vec::new();
        let mut weights: Vec<f64> = Vec::new();
        for (l, &w) in self.labels.iter().zip(&self.weights) {
            let img = f(l);
            let i = *index.entry(img.clone()).or_insert_with(|| {
                labels.push(img);
                weights.push(0.0);
                labels.len() - 1
            });
            weights[i] += w;
        }
        FiniteMeasure { labels, weights }
    }
}

/// A finite measure of unit mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FiniteMeasure", into = "FiniteMeasure")]
pub struct ProbabilityMeasure(FiniteMeasure);

impl TryFrom<FiniteMeasure> for ProbabilityMeasure {
    type Error = MeasureError;
    fn try_from(m: FiniteMeasure) -> Result<Self> {
        ProbabilityMeasure::new(m)
    }
}

impl From<ProbabilityMeasure> for FiniteMeasure {
    fn from(p: ProbabilityMeasure) -> Self {
        p.0
    }
}

impl std::ops::Deref for ProbabilityMeasure {
    type Target = FiniteMeasure;
    fn deref(&self) -> &FiniteMeasure {
        &self.0
    }
}

impl ProbabilityMeasure {
    /// Accepts `m` if its mass is within [`NORMALIZE_TOL`] of one and rescales
    /// it to unit mass.
    pub fn new(mut m: FiniteMeasure) -> Result<Self> {
        let mass = m.mass();
        if (mass - 1.0).abs() > NORMALIZE_TOL {
            return Err(MeasureError::InvalidMeasure(format!("total mass {mass} is not 1")));
        }
        if mass != 1.0 {
            m.weights.iter_mut().for_each(|w| *w /= mass);
        }
        Ok(Self(m))
    }

    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        Self::new(FiniteMeasure::from_weights(weights)?)
    }

    pub fn from_labeled(labels: Vec<String>, weights: Vec<f64>) -> Result<Self> {
        Self::new(FiniteMeasure::new(labels, weights)?)
    }

    pub fn dirac(label: &str) -> Self {
        Self(FiniteMeasure { labels: vec![label.to_string()], weights: vec![1.0] })
    }

    pub fn as_measure(&self) -> &FiniteMeasure {
        &self.0
    }

    /// Image probability under `f`.
    pub fn pushforward(&self, f: impl Fn(&str) -> String) -> ProbabilityMeasure {
        ProbabilityMeasure(self.0.pushforward(f))
    }
}

/// Joint law on `rows × cols`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingMatrix {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub joint: Vec<f64>,
}

impl CouplingMatrix {
    pub fn zeros(rows: Vec<String>, cols: Vec<String>) -> Self {
        let joint = vec![0.0; rows.len() * cols.len()];
        Self { rows, cols, joint }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.joint[i * self.cols.len() + j]
    }

    fn add(&mut self, i: usize, j: usize, v: f64) {
        let n = self.cols.len();
        self.joint[i * n + j] += v;
    }

    pub fn row_marginal(&self) -> FiniteMeasure {
        let n = self.cols.len();
        let weights = self.joint.chunks(n.max(1)).map(|r| r.iter().sum()).collect();
        FiniteMeasure { labels: self.rows.clone(), weights }
    }

    pub fn col_marginal(&self) -> FiniteMeasure {
        let n = self.cols.len();
        let mut weights = vec![0.0; n];
        for row in self.joint.chunks(n.max(1)) {
            for (w, v) in weights.iter_mut().zip(row) {
                *w += v;
            }
        }
        FiniteMeasure { labels: self.cols.clone(), weights }
    }

    /// Mass of `{Z₁ = Z₂}` restricted to row labels selected by `pred`.
    pub fn diagonal_mass_where(&self, mut pred: impl FnMut(&str) -> bool) -> f64 {
        let col_index: HashMap<&str, usize> =
            self.cols.iter().enumerate().map(|(j, c)| (c.as_str(), j)).collect();
        self.rows
            .iter()
            .enumerate()
            .filter(|(_, r)| pred(r))
            .filter_map(|(i, r)| col_index.get(r.as_str()).map(|&j| self.get(i, j)))
            .sum()
    }

    /// `P(Z₁ = Z₂)`.
    pub fn diagonal_mass(&self) -> f64 {
        self.diagonal_mass_where(|_| true)
    }

    /// Joint law of `(f(Z₁), f(Z₂))`.
    pub fn pushforward(&self, f: impl Fn(&str) -> String) -> CouplingMatrix {
        let mut rows = Vec::new();
        let mut cols = Vec::new();
        let ri = relabel(&self.rows, &f, &mut rows);
        let ci = relabel(&self.cols, &f, &mut cols);
        let mut out = CouplingMatrix::zeros(rows, cols);
        for (i, &a) in ri.iter().enumerate() {
            for (j, &b) in ci.iter().enumerate() {
                out.add(a, b, self.get(i, j));
            }
        }
        out
    }

    /// Entry for a pair of labels, zero when either is absent.
    pub fn entry(&self, row: &str, col: &str) -> f64 {
        match (
            self.rows.iter().position(|r| r == row),
            self.cols.iter().position(|c| c == col),
        ) {
            (Some(i), Some(j)) => self.get(i, j),
            _ => 0.0,
        }
    }
}

fn relabel(labels: &[String], f: &impl Fn(&str) -> String, out: &mut Vec<String>) -> Vec<usize> {
    let mut index: HashMap<String, usize> = HashMap::new();
    labels
        .iter()
        .map(|l| {
            let img = f(l);
            *index.entry(img.clone()).or_insert_with(|| {
                out.push(img);
                out.len() - 1
            })
        })
        .collect()
}

/// Both measures expressed on the union of their supports.
fn align(m1: &FiniteMeasure, m2: &FiniteMeasure) -> (Vec<String>, Vec<f64>, Vec<f64>) {
    let mut labels = m1.labels.clone();
    let mut index: HashMap<&str, usize> =
        m1.labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let mut p = m1.weights.clone();
    let mut q = vec![0.0; p.len()];
    for (l, &w) in m2.labels.iter().zip(&m2.weights) {
        match index.get(l.as_str()) {
            Some(&i) => q[i] = w,
            None => {
                index.insert(l.as_str(), labels.len());
                labels.push(l.clone());
                p.push(0.0);
                q.push(w);
            }
        }
    }
    (labels, p, q)
}

pub fn tv_distance(m1: &ProbabilityMeasure, m2: &ProbabilityMeasure) -> f64 {
    let (_, p, q) = align(m1, m2);
    let s: f64 = p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum();
    (0.5 * s).clamp(0.0, 1.0)
}

/// Pointwise minimum `μ₁ ∧ μ₂`.
pub fn meet(m1: &ProbabilityMeasure, m2: &ProbabilityMeasure) -> FiniteMeasure {
    let (labels, p, q) = align(m1, m2);
    let weights = p.iter().zip(&q).map(|(a, b)| a.min(*b)).collect();
    FiniteMeasure { labels, weights }
}

/// Pointwise positive part `(μ₁ − μ₂)⁺`.
pub fn pos_part(m1: &ProbabilityMeasure, m2: &ProbabilityMeasure) -> FiniteMeasure {
    let (labels, p, q) = align(m1, m2);
    let weights = p.iter().zip(&q).map(|(a, b)| (a - b).max(0.0)).collect();
    FiniteMeasure { labels, weights }
}

/// The maximal coupling `diag(μ₁∧μ₂) + (μ₁−μ₂)⁺ ⊗ (μ₂−μ₁)⁺ / ‖μ₁−μ₂‖`.
pub fn maximal_coupling_exact(m1: &ProbabilityMeasure, m2: &ProbabilityMeasure) -> CouplingMatrix {
    let (labels, p, q) = align(m1, m2);
    let n = labels.len();
    let mut out = CouplingMatrix::zeros(labels.clone(), labels);
    if p == q {
        for i in 0..n {
            out.add(i, i, p[i]);
        }
        return out;
    }
    let plus: Vec<f64> = p.iter().zip(&q).map(|(a, b)| (a - b).max(0.0)).collect();
    let minus: Vec<f64> = p.iter().zip(&q).map(|(a, b)| (b - a).max(0.0)).collect();
    let tv: f64 = plus.iter().sum();
    for i in 0..n {
        out.add(i, i, p[i].min(q[i]));
    }
    if tv > 0.0 {
        for (i, &a) in plus.iter().enumerate().filter(|(_, a)| **a > 0.0) {
            for (j, &b) in minus.iter().enumerate().filter(|(_, b)| **b > 0.0) {
                out.add(i, j, a * b / tv);
            }
        }
    }
    out
}

/// Lower bound on `(μ₁∧μ₂)(A)` from a moment bound `C` on the density ratio
/// restricted to `A`.
pub fn coupling_meet_lower_bound(p: f64, c: f64, mass_a: f64) -> Result<f64> {
    if !(p > 1.0) {
        return Err(MeasureError::Domain(format!("p = {p} must exceed 1")));
    }
    if !(c > 1.0) {
        return Err(MeasureError::Domain(format!("C = {c} must exceed 1")));
    }
    if !(0.0..=1.0).contains(&mass_a) {
        return Err(MeasureError::Domain(format!("mass {mass_a} outside [0, 1]")));
    }
    Ok((1.0 - 1.0 / p) * (mass_a.powf(p) / (p * c)).powf(1.0 / (p - 1.0)))
}

/// Coupling of `μ₁, μ₂` whose image under `f0` is the maximal coupling of
/// `f0⋆μ₁, f0⋆μ₂`.
///
/// Built as `s + r`: `s` glues the conditional laws given the image over
/// `ν₁∧ν₂`, and `r` is the product of the residual parts normalized by
/// `‖ν₁−ν₂‖`.
pub fn pushforward_coupling(
    m1: &ProbabilityMeasure,
    m2: &ProbabilityMeasure,
    f0: impl Fn(&str) -> String,
) -> CouplingMatrix {
    let img1: Vec<String> = m1.labels.iter().map(|l| f0(l)).collect();
    let img2: Vec<String> = m2.labels.iter().map(|l| f0(l)).collect();
    let mut nu1: HashMap<&str, f64> = HashMap::new();
    let mut nu2: HashMap<&str, f64> = HashMap::new();
    for (z, w) in img1.iter().zip(&m1.weights) {
        *nu1.entry(z).or_default() += w;
    }
    for (z, w) in img2.iter().zip(&m2.weights) {
        *nu2.entry(z).or_default() += w;
    }
    let get = |m: &HashMap<&str, f64>, z: &str| m.get(z).copied().unwrap_or(0.0);
    let tv: f64 = nu1.iter().map(|(z, a)| (a - get(&nu2, z)).max(0.0)).sum();

    let mut out = CouplingMatrix::zeros(m1.labels.clone(), m2.labels.clone());
    for (i, (zi, &wi)) in img1.iter().zip(&m1.weights).enumerate() {
        if wi == 0.0 {
            continue;
        }
        let (a1, a2) = (get(&nu1, zi), get(&nu2, zi));
        let resid1 = wi * (a1 - a2).max(0.0) / a1;
        for (j, (zj, &wj)) in img2.iter().zip(&m2.weights).enumerate() {
            if wj == 0.0 {
                continue;
            }
            if zi == zj {
                let m = a1.min(a2);
                if m > 0.0 {
                    out.add(i, j, m * (wi / a1) * (wj / a2));
                }
            } else if tv > 0.0 && resid1 > 0.0 {
                let (b1, b2) = (get(&nu1, zj), get(&nu2, zj));
                let resid2 = wj * (b2 - b1).max(0.0) / b2;
                if resid2 > 0.0 {
                    out.add(i, j, resid1 * resid2 / tv);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pm(w: &[f64]) -> ProbabilityMeasure {
        ProbabilityMeasure::from_weights(w.to_vec()).unwrap()
    }

    #[test]
    fn tv_examples() {
        let a = pm(&[0.5, 0.5]);
        assert_eq!(tv_distance(&a, &a), 0.0);
        let da = ProbabilityMeasure::dirac("a");
        let db = ProbabilityMeasure::dirac("b");
        assert_eq!(tv_distance(&da, &db), 1.0);
        assert_abs_diff_eq!(tv_distance(&a, &pm(&[0.25, 0.75])), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn meet_and_pos_part_examples() {
        let (a, b) = (pm(&[0.5, 0.5]), pm(&[0.25, 0.75]));
        assert_eq!(meet(&a, &b).weights(), &[0.25, 0.5]);
        assert_eq!(pos_part(&a, &b).weights(), &[0.25, 0.0]);
        assert_eq!(pos_part(&a, &a).mass(), 0.0);
        let da = ProbabilityMeasure::dirac("a");
        let db = ProbabilityMeasure::dirac("b");
        assert_eq!(meet(&da, &db).mass(), 0.0);
        assert_eq!(pos_part(&da, &db).weight("a"), 1.0);
        assert_eq!(pos_part(&da, &db).weight("b"), 0.0);
    }

    #[test]
    fn maximal_coupling_examples() {
        let a = pm(&[0.5, 0.5]);
        let c = maximal_coupling_exact(&a, &a);
        assert_eq!(c.joint, vec![0.5, 0.0, 0.0, 0.5]);
        let c = maximal_coupling_exact(&a, &pm(&[0.25, 0.75]));
        assert_abs_diff_eq!(c.get(0, 0), 0.25);
        assert_abs_diff_eq!(c.get(1, 1), 0.5);
        assert_abs_diff_eq!(c.get(0, 1), 0.25);
        assert_abs_diff_eq!(c.get(1, 0), 0.0);
    }

    #[test]
    fn lower_bound_examples() {
        assert!(coupling_meet_lower_bound(2.0, 1.0, 1.0).is_err());
        assert!(coupling_meet_lower_bound(1.0, 2.0, 1.0).is_err());
        assert_abs_diff_eq!(coupling_meet_lower_bound(2.0, 1.0 + 1e-12, 1.0).unwrap(), 0.25, epsilon = 1e-11);
        assert_eq!(coupling_meet_lower_bound(2.0, 3.0, 0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(coupling_meet_lower_bound(2.0, 2.0, 1.0).unwrap(), 0.125, epsilon = 1e-15);
    }

    #[test]
    fn normalization_and_rejection() {
        let m = ProbabilityMeasure::from_weights(vec![0.5, 0.5 + 5e-10]).unwrap();
        assert_eq!(m.mass(), 1.0);
        assert!(ProbabilityMeasure::from_weights(vec![0.5, 0.6]).is_err());
        assert!(FiniteMeasure::new(vec!["a".into(), "a".into()], vec![0.5, 0.5]).is_err());
        assert!(FiniteMeasure::from_weights(vec![-0.1, 1.1]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let m = pm(&[0.25, 0.75]);
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(s, r#"{"labels":["0","1"],"weights":[0.25,0.75]}"#);
        let back: ProbabilityMeasure = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
        assert!(serde_json::from_str::<ProbabilityMeasure>(r#"{"labels":["a"],"weights":[0.5]}"#).is_err());
        let c = maximal_coupling_exact(&m, &m);
        let v: serde_json::Value = serde_json::to_value(&c).unwrap();
        assert_eq!(v["joint"].as_array().unwrap().len(), 4);
    }

    #[test]
    fn pushforward_constant_map() {
        let (a, b) = (pm(&[0.1, 0.2, 0.7]), pm(&[0.6, 0.3, 0.1]));
        let c = pushforward_coupling(&a, &b, |_| "z".into());
        let img = c.pushforward(|_| "z".into());
        assert_abs_diff_eq!(img.diagonal_mass(), 1.0, epsilon = 1e-15);
        for (x, y) in c.row_marginal().weights().iter().zip(a.weights()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-15);
        }
        for (x, y) in c.col_marginal().weights().iter().zip(b.weights()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-15);
        }
    }

    #[test]
    fn pushforward_identity_is_maximal() {
        let (a, b) = (pm(&[0.1, 0.2, 0.3, 0.4]), pm(&[0.4, 0.1, 0.4, 0.1]));
        let p = pushforward_coupling(&a, &b, |l| l.to_string());
        let m = maximal_coupling_exact(&a, &b);
        for (x, y) in p.joint.iter().zip(&m.joint) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-15);
        }
    }
}
