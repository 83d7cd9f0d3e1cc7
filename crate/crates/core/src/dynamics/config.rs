use super::cgl::{CglCase, CglModel, NoiseSettings};
use super::functions::{LineFn, PairFn, TorusDrift};
use super::lowhigh::LowHighModel;
use super::torus::TorusModel;
use super::Result;
use serde::{Deserialize, Serialize};

fn default_dt() -> f64 {
    1e-3
}
fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorusConfig {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(rename = "T", default = "one")]
    pub block_len: f64,
    #[serde(default = "TorusConfig::default_drift")]
    pub drift: TorusDrift,
}

impl TorusConfig {
    fn default_drift() -> TorusDrift {
        TorusDrift::Sine { amplitude: 0.5, frequency: 1, phase: 0.0 }
    }

    pub fn build(&self) -> Result<TorusModel> {
        TorusModel::new(self.drift, self.dt, self.block_len)
    }
}

impl Default for TorusConfig {
    fn default() -> Self {
        Self { dt: default_dt(), block_len: 1.0, drift: Self::default_drift() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LowHighConfig {
    pub dt: f64,
    #[serde(rename = "T")]
    pub block_len: f64,
    pub f: PairFn,
    pub g: PairFn,
    pub sigma_l: LineFn,
    pub sigma_h: LineFn,
    #[serde(rename = "K0")]
    pub k0: f64,
}

impl Default for LowHighConfig {
    fn default() -> Self {
        let m = LowHighModel::default_model();
        Self { dt: m.dt, block_len: m.block_len, f: m.f, g: m.g, sigma_l: m.sigma_l, sigma_h: m.sigma_h, k0: m.k0 }
    }
}

impl LowHighConfig {
    pub fn build(&self) -> Result<LowHighModel> {
        LowHighModel::new(self.f, self.g, self.sigma_l, self.sigma_h, self.k0, self.dt, self.block_len)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CglConfig {
    pub eps: f64,
    pub eta: f64,
    pub lambda: f64,
    pub sigma: f64,
    #[serde(rename = "M")]
    pub modes: usize,
    #[serde(rename = "N")]
    pub cutoff: usize,
    #[serde(rename = "N1")]
    pub noise_cutoff: usize,
    pub dt: f64,
    #[serde(rename = "T")]
    pub block_len: f64,
    pub case: CglCase,
    pub noise: NoiseSettings,
    pub nonlinear: bool,
}

impl Default for CglConfig {
    fn default() -> Self {
        Self {
            eps: 0.1,
            eta: 1.0,
            lambda: 1.0,
            sigma: 1.0,
            modes: 32,
            cutoff: 8,
            noise_cutoff: 4,
            dt: default_dt(),
            block_len: 1.0,
            case: CglCase::H1Subcritical,
            noise: NoiseSettings::default(),
            nonlinear: true,
        }
    }
}

impl CglConfig {
    pub fn build(&self) -> Result<CglModel> {
        let mut m = CglModel::new(
            self.eps,
            self.eta,
            self.lambda,
            self.sigma,
            (self.modes, self.cutoff, self.noise_cutoff),
            self.noise,
            (self.dt, self.block_len),
            self.case,
        )?;
        m.nonlinear = self.nonlinear;
        Ok(m)
    }
}

/// Model section of a configuration document, selected by its `model` key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelConfig {
    Torus(TorusConfig),
    Lowhigh(LowHighConfig),
    Cgl(CglConfig),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documents() {
        let c: ModelConfig = serde_json::from_str(
            r#"{"model":"cgl","eps":0.2,"M":16,"N":4,"N1":2,"T":0.5,"noise":{"sigma0":2.0}}"#,
        )
        .unwrap();
        let ModelConfig::Cgl(c) = c else { panic!("wrong variant") };
        assert_eq!((c.eps, c.modes, c.cutoff, c.noise_cutoff, c.block_len), (0.2, 16, 4, 2, 0.5));
        assert_eq!(c.noise.sigma0, 2.0);
        assert_eq!(c.noise.high_amp, NoiseSettings::default().high_amp);
        c.build().unwrap();

        let t: ModelConfig = serde_json::from_str(r#"{"model":"torus","drift":{"kind":"zero"}}"#).unwrap();
        let ModelConfig::Torus(t) = t else { panic!("wrong variant") };
        assert_eq!(t.drift, TorusDrift::Zero);
        assert_eq!(t.build().unwrap().steps_per_block(), 1000);

        let l: ModelConfig = serde_json::from_str(r#"{"model":"lowhigh","K0":2.0}"#).unwrap();
        let ModelConfig::Lowhigh(l) = l else { panic!("wrong variant") };
        assert_eq!(l.k0, 2.0);
        l.build().unwrap();

        assert!(serde_json::from_str::<ModelConfig>(r#"{"model":"heat"}"#).is_err());
    }
}
