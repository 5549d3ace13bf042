use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;

use super::HarnessError;
use crate::estimator::EstimatorConfig;
use crate::sources::{Component, ExpFamily, Family, MixtureFamily, ParamBox, ParamVector, Statistic, Support};
use crate::vq::{DesignBudget, DistortionSpec};

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ComponentSpec {
    Uniform { a: f64, b: f64 },
    TruncatedGaussian { mean: f64, std: f64, lo: f64, hi: f64 },
    Triangular { a: f64, mode: f64, b: f64 },
}

impl ComponentSpec {
    pub fn build(&self) -> Result<Component, HarnessError> {
        let c = match *self {
            ComponentSpec::Uniform { a, b } => Component::uniform(a, b),
            ComponentSpec::TruncatedGaussian { mean, std, lo, hi } => Component::truncated_gaussian(mean, std, lo, hi),
            ComponentSpec::Triangular { a, mode, b } => Component::triangular(a, mode, b),
        };
        c.map_err(|e| HarnessError::config("family.components", e))
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StatisticSpec {
    Power { degree: i32 },
    Cos { freq: f64 },
    Sin { freq: f64 },
}

impl From<&StatisticSpec> for Statistic {
    fn from(s: &StatisticSpec) -> Self {
        match *s {
            StatisticSpec::Power { degree } => Statistic::Power { degree },
            StatisticSpec::Cos { freq } => Statistic::Cos { freq },
            StatisticSpec::Sin { freq } => Statistic::Sin { freq },
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilySpec {
    Mixture {
        support: [f64; 2],
        components: Vec<ComponentSpec>,
    },
    Exponential {
        support: [f64; 2],
        reference: ComponentSpec,
        statistics: Vec<StatisticSpec>,
        theta_lo: Vec<f64>,
        theta_hi: Vec<f64>,
    },
}

impl FamilySpec {
    pub fn build(&self) -> Result<Family, HarnessError> {
        match self {
            FamilySpec::Mixture { support, components } => {
                let support = Support::new(support[0], support[1]).map_err(|e| HarnessError::config("family.support", e))?;
                let comps = components.iter().map(ComponentSpec::build).collect::<Result<_, _>>()?;
                let m = MixtureFamily::new(comps, support).map_err(|e| HarnessError::config("family", e))?;
                Ok(Family::Mixture(m))
            }
            FamilySpec::Exponential { support, reference, statistics, theta_lo, theta_hi } => {
                let support = Support::new(support[0], support[1]).map_err(|e| HarnessError::config("family.support", e))?;
                let theta_box = ParamBox::new(theta_lo.clone(), theta_hi.clone())
                    .map_err(|e| HarnessError::config("family.theta_lo/theta_hi", e))?;
                let stats = statistics.iter().map(Statistic::from).collect();
                let e = ExpFamily::new(reference.build()?, stats, theta_box, support)
                    .map_err(|e| HarnessError::config("family", e))?;
                Ok(Family::Exponential(e))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    TwoStage,
    NnFirstStage,
    MatchedOracle,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct UnboundedSpec {
    pub delta: f64,
    /// Truncation level `M`.
    pub threshold: f64,
    pub ref_letter: f64,
}

#[derive(Debug, Clone, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    pub csv: Option<PathBuf>,
    pub summary: Option<PathBuf>,
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSection {
    pub min_step: f64,
    pub pair_cap: usize,
    pub subsample_seed: u64,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        let d = EstimatorConfig::default();
        EstimatorSection { min_step: d.min_step, pair_cap: d.pair_cap, subsample_seed: d.subsample_seed }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DesignSection {
    pub training_per_word: usize,
    pub max_iters: u32,
    pub tolerance: f64,
    /// Component codeword length `L`.
    pub component_dim: usize,
}

impl Default for DesignSection {
    fn default() -> Self {
        let d = DesignBudget::default();
        DesignSection {
            training_per_word: d.training_per_word,
            max_iters: d.max_iters,
            tolerance: d.tolerance,
            component_dim: 1,
        }
    }
}

fn default_blocks() -> usize {
    16
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub family: FamilySpec,
    pub thetas: Vec<Vec<f64>>,
    pub block_lengths: Vec<usize>,
    /// Bits per letter.
    pub rate: f64,
    pub p: f64,
    pub trials: usize,
    #[serde(default = "default_blocks")]
    pub blocks: usize,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub estimator: EstimatorSection,
    #[serde(default)]
    pub design: DesignSection,
    pub unbounded: Option<UnboundedSpec>,
    #[serde(default)]
    pub output: OutputPaths,
}

/// A config with its family built and every field checked.
#[derive(Debug, Clone)]
pub struct ValidatedConfig {
    pub raw: ExperimentConfig,
    pub family: Arc<Family>,
    pub thetas: Vec<ParamVector>,
    pub spec: DistortionSpec,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::config("config", e.message()))
    }

    /// Reads a config; relative output paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.output.csv, &mut cfg.output.summary, &mut cfg.output.plot].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn estimator_config(&self) -> EstimatorConfig {
        EstimatorConfig {
            min_step: self.estimator.min_step,
            pair_cap: self.estimator.pair_cap,
            subsample_seed: self.estimator.subsample_seed,
        }
    }

    pub fn budget(&self) -> DesignBudget {
        DesignBudget {
            training_per_word: self.design.training_per_word,
            max_iters: self.design.max_iters,
            tolerance: self.design.tolerance,
        }
    }

    pub fn validate(&self) -> Result<ValidatedConfig, HarnessError> {
        let family = Arc::new(self.family.build()?);
        if self.block_lengths.is_empty() {
            return Err(HarnessError::config("block_lengths", "at least one block length is required"));
        }
        for &n in &self.block_lengths {
            if n < 4 {
                return Err(HarnessError::config("block_lengths", format!("{n} is below the minimum of 4")));
            }
            if n % self.design.component_dim != 0 {
                return Err(HarnessError::config(
                    "block_lengths",
                    format!("{n} is not a multiple of design.component_dim = {}", self.design.component_dim),
                ));
            }
        }
        if self.trials == 0 {
            return Err(HarnessError::config("trials", "must be at least 1"));
        }
        if self.blocks < 2 {
            return Err(HarnessError::config("blocks", "streams need at least 2 blocks"));
        }
        if !(self.rate.is_finite() && self.rate >= 0.0) {
            return Err(HarnessError::config("rate", format!("{} is not a valid rate", self.rate)));
        }
        if self.p != 1.0 && self.p != 2.0 {
            return Err(HarnessError::config("p", format!("codebook design supports p = 1 or 2, got {}", self.p)));
        }
        if self.design.component_dim == 0 || self.design.training_per_word == 0 {
            return Err(HarnessError::config("design", "component_dim and training_per_word must be positive"));
        }
        if !(self.estimator.min_step > 0.0 && self.estimator.min_step <= 1.0) || self.estimator.pair_cap < 2 {
            return Err(HarnessError::config("estimator", "min_step must lie in (0, 1] and pair_cap be at least 2"));
        }
        if self.thetas.is_empty() {
            return Err(HarnessError::config("thetas", "at least one parameter is required"));
        }
        let thetas = self
            .thetas
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let theta = ParamVector::new(t.clone());
                family.validate_param(&theta).map(|_| theta).map_err(|e| HarnessError::config(&format!("thetas[{i}]"), e))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(u) = &self.unbounded {
            if !(u.delta > 0.0 && u.delta < 1.0 && u.threshold > 0.0 && u.ref_letter.is_finite()) {
                return Err(HarnessError::config("unbounded", "need 0 < delta < 1, threshold > 0 and a finite ref_letter"));
            }
        }
        let spec = DistortionSpec::new(self.p, family.support()).map_err(|e| HarnessError::config("p", e))?;
        Ok(ValidatedConfig { raw: self.clone(), family, thetas, spec })
    }
}
