//! Run configuration: resolved settings serialized next to every output as a
//! reproducibility manifest, and re-readable as `--config` overrides.

use crate::engine::HyperGrid;
use crate::error::{Result, WarpError};
use crate::priors::{HyperParams, SlabFamily};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SigmaPolicy {
    Auto(String),
    Fixed(f64),
}

impl SigmaPolicy {
    pub fn auto() -> Self {
        SigmaPolicy::Auto("auto".into())
    }

    pub fn parse(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(SigmaPolicy::auto());
        }
        s.parse::<f64>()
            .map(SigmaPolicy::Fixed)
            .map_err(|_| WarpError::Config(format!("sigma must be 'auto' or a number, got {s}")))
    }
}

// String payload keeps the JSON form literally "auto" | number.
impl SigmaPolicy {
    pub fn fixed_value(&self) -> Option<f64> {
        match self {
            SigmaPolicy::Fixed(v) => Some(*v),
            SigmaPolicy::Auto(_) => None,
        }
    }
}

/// Explicit hyperparameters; when all are present the evidence search is
/// skipped.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct FixedHyper {
    pub alpha: Option<f64>,
    pub tau0: Option<f64>,
    pub beta: Option<f64>,
    pub c: Option<f64>,
    pub eta0: Option<f64>,
}

impl FixedHyper {
    pub fn complete(&self) -> bool {
        self.alpha.is_some()
            && self.tau0.is_some()
            && self.beta.is_some()
            && self.c.is_some()
            && self.eta0.is_some()
    }

    pub fn into_hyper(&self, slab: SlabFamily, sigma: f64) -> Option<HyperParams> {
        Some(HyperParams {
            slab,
            alpha: self.alpha?,
            tau0: self.tau0?,
            beta: self.beta?,
            c: self.c?,
            eta0: self.eta0?,
            sigma,
        })
    }
}

/// Candidate lists for the evidence search; any omitted list falls back to
/// the default grid for the slab family.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct GridOverrides {
    pub alphas: Option<Vec<f64>>,
    pub tau0s: Option<Vec<f64>>,
    pub betas: Option<Vec<f64>>,
    pub cs: Option<Vec<f64>>,
    pub eta0s: Option<Vec<f64>>,
}

impl GridOverrides {
    pub fn build(&self, slab: SlabFamily) -> HyperGrid {
        let mut g = HyperGrid::default_for(slab);
        if let Some(v) = &self.alphas {
            g.alphas = v.clone();
        }
        if let Some(v) = &self.tau0s {
            g.tau0s = v.clone();
        }
        if let Some(v) = &self.betas {
            g.betas = v.clone();
        }
        if let Some(v) = &self.cs {
            g.cs = v.clone();
        }
        if let Some(v) = &self.eta0s {
            g.eta0s = v.clone();
        }
        g
    }
}

/// The resolved configuration of one CLI run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    pub slab: SlabFamily,
    pub sigma: SigmaPolicy,
    pub sigma_min: f64,
    #[serde(default)]
    pub hyper: FixedHyper,
    #[serde(default)]
    pub grid: GridOverrides,
    /// Cycle-spin step radius per dimension; None picks the dimension default.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spin_radius: Option<i64>,
    pub seed: u64,
    pub threads: usize,
    pub basis: String,
    pub particles: usize,
    pub ess_threshold: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dims: Option<Vec<u64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pattern: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: String::new(),
            input: None,
            output: None,
            reference: None,
            slab: SlabFamily::Normal,
            sigma: SigmaPolicy::auto(),
            sigma_min: 1e-6,
            hyper: FixedHyper::default(),
            grid: GridOverrides::default(),
            spin_radius: None,
            seed: 0,
            threads: 0,
            basis: "haar".into(),
            particles: 10,
            ess_threshold: 0.1,
            count: None,
            dims: None,
            pattern: None,
            noise: None,
        }
    }
}

impl RunConfig {
    /// Load overrides from a JSON or TOML file (by extension).
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        let ext = path
            .extension()
            .map(|e| e.to_string_lossy().to_ascii_lowercase())
            .unwrap_or_default();
        if ext == "toml" {
            toml::from_str(&text).map_err(|e| WarpError::Config(e.to_string()))
        } else {
            serde_json::from_str(&text).map_err(|e| WarpError::Config(e.to_string()))
        }
    }

    /// Write the resolved manifest next to an output file.
    pub fn write_manifest(&self, output: &Path) -> Result<()> {
        let mut name = output.as_os_str().to_owned();
        name.push(".config.json");
        crate::io::atomic_write(
            Path::new(&name),
            &serde_json::to_vec_pretty(self).map_err(|e| WarpError::Config(e.to_string()))?,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigma_policy_round_trips() {
        let a = SigmaPolicy::auto();
        let s = serde_json::to_string(&a).unwrap();
        assert_eq!(s, "\"auto\"");
        let f = SigmaPolicy::Fixed(0.25);
        assert_eq!(serde_json::to_string(&f).unwrap(), "0.25");
        let back: SigmaPolicy = serde_json::from_str("0.25").unwrap();
        assert_eq!(back.fixed_value(), Some(0.25));
        assert!(SigmaPolicy::parse("auto").unwrap().fixed_value().is_none());
        assert!(SigmaPolicy::parse("bogus").is_err());
    }

    #[test]
    fn config_round_trips_json_and_toml() {
        let mut cfg = RunConfig {
            command: "denoise".into(),
            input: Some("x.f32".into()),
            ..RunConfig::default()
        };
        cfg.hyper.alpha = Some(1.0);
        let dir = tempfile::tempdir().unwrap();
        let jpath = dir.path().join("c.json");
        std::fs::write(&jpath, serde_json::to_string(&cfg).unwrap()).unwrap();
        let back = RunConfig::from_file(&jpath).unwrap();
        assert_eq!(back.command, "denoise");
        assert_eq!(back.hyper.alpha, Some(1.0));
        let tpath = dir.path().join("c.toml");
        std::fs::write(&tpath, toml::to_string(&cfg).unwrap()).unwrap();
        let back = RunConfig::from_file(&tpath).unwrap();
        assert_eq!(back.input.as_deref(), Some("x.f32"));
    }
}
