use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::activation::ActivationKind;
use crate::error::{Error, Result};
use crate::flow::{ClassifyThresholds, FlowConfig};
use crate::kernel::{KernelMethod, KernelSpec};
use crate::network::TeacherFrame;

/// Input dimension for a cell of teacher width `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DRule {
    #[serde(rename = "k_plus_1")]
    KPlus1,
    Fixed(usize),
}

impl DRule {
    pub fn d(&self, k: usize) -> usize {
        match *self {
            DRule::KPlus1 => k + 1,
            DRule::Fixed(d) => d,
        }
    }
}

fn default_frame() -> TeacherFrame {
    TeacherFrame::CanonicalBasis
}

/// A phase sweep over `(n, k, seed)` cells.
///
/// ```toml
/// activation = "erf"
/// n_values = [2]
/// k_values = [3, 4]
/// d_rule = "k_plus_1"        # or { fixed = 12 }
/// seeds = [0, 1, 2]
/// kernel = "analytic"        # or "quadrature:80", "mc:100000:7"
/// output_path = "runs/erf"   # optional
/// workers = 1                # optional, defaults to all cores
///
/// [flow]
/// init = { scheme = "gaussian_std", std = 0.1 }
/// grad_tol = 5e-8
///
/// [thresholds]
/// perturbed_copy = 0.9
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub activation: ActivationKind,
    pub n_values: Vec<usize>,
    pub k_values: Vec<usize>,
    pub d_rule: DRule,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub flow: FlowConfig,
    pub kernel: KernelMethod,
    #[serde(default)]
    pub output_path: Option<PathBuf>,
    #[serde(default = "default_frame")]
    pub teacher_frame: TeacherFrame,
    #[serde(default)]
    pub thresholds: ClassifyThresholds,
    #[serde(default)]
    pub workers: Option<usize>,
}

impl SweepConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: SweepConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn kernel_spec(&self) -> Result<KernelSpec> {
        KernelSpec::new(self.activation, self.kernel)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("seed list is empty".into()));
        }
        if self.n_values.is_empty() || self.k_values.is_empty() {
            return Err(Error::InvalidConfig("n_values and k_values must be non-empty".into()));
        }
        if self.n_values.contains(&0) || self.k_values.contains(&0) {
            return Err(Error::InvalidConfig("n and k must be at least 1".into()));
        }
        for &k in &self.k_values {
            let d = self.d_rule.d(k);
            if d < k {
                return Err(Error::InvalidConfig(format!("d = {d} is smaller than k = {k}")));
            }
        }
        if self.workers == Some(0) {
            return Err(Error::InvalidConfig("workers must be at least 1".into()));
        }
        self.flow.validate()?;
        self.kernel_spec()?;
        Ok(())
    }

    /// Cells in `(n, k, seed)` order.
    pub fn cells(&self) -> Vec<(usize, usize, u64)> {
        let mut out = Vec::new();
        for &n in &self.n_values {
            for &k in &self.k_values {
                for &seed in &self.seeds {
                    out.push((n, k, seed));
                }
            }
        }
        out
    }

    /// Desk-scale erf phase grid: `n <= 8`, `k <= 16`, 10 seeds.
    pub fn desk_scale() -> Self {
        SweepConfig {
            activation: ActivationKind::Erf,
            n_values: (2..=8).collect(),
            k_values: (3..=16).collect(),
            d_rule: DRule::KPlus1,
            seeds: (0..10).collect(),
            flow: FlowConfig::default(),
            kernel: KernelMethod::Analytic,
            output_path: None,
            teacher_frame: TeacherFrame::CanonicalBasis,
            thresholds: ClassifyThresholds::default(),
            workers: None,
        }
    }
}
