//! Experiment configuration (TOML).

use std::path::Path;

use serde::{Deserialize, Serialize};

use qbcmr_core::basis::{FunctionCoefficients, SieveBasisSpec};
use qbcmr_core::model::{self, DgpDesign, Instrument, MomentModel};
use qbcmr_core::pipeline::{FitConfig, KChoice, LikelihoodPath, WeightMode};
use qbcmr_core::posterior::ChainConfig;

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Study {
    Fit,
    Simulate,
    RateStudy,
    Coverage,
    PriorDraw,
}

impl Study {
    pub fn name(&self) -> &'static str {
        match self {
            Study::Fit => "fit",
            Study::Simulate => "simulate",
            Study::RateStudy => "rate-study",
            Study::Coverage => "coverage",
            Study::PriorDraw => "prior-draw",
        }
    }
}

/// `"auto"` or a fixed first-stage dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KSetting {
    Fixed(usize),
    Named(String),
}

impl Default for KSetting {
    fn default() -> Self {
        KSetting::Named("auto".into())
    }
}

/// One weighting mode or a list to compare.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightingSetting {
    One(String),
    Many(Vec<String>),
}

impl Default for WeightingSetting {
    fn default() -> Self {
        WeightingSetting::One("optimal".into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChainSettings {
    pub iters: usize,
    pub burn: usize,
    pub thin: usize,
    pub target_accept: f64,
    pub initial_step: f64,
}

impl Default for ChainSettings {
    fn default() -> Self {
        let c = ChainConfig::default();
        Self { iters: c.iters, burn: c.burn, thin: c.thin, target_accept: c.target_accept, initial_step: c.initial_step }
    }
}

/// Overrides applied on top of a catalog design.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quantile: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endogeneity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_sd: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heteroskedasticity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strength: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorDrawSettings {
    pub alphas: Vec<f64>,
    pub draws: usize,
    pub grid: usize,
    pub truncation: usize,
    pub scale: f64,
}

impl Default for PriorDrawSettings {
    fn default() -> Self {
        Self { alphas: vec![0.5, 1.0, 2.0, 3.0], draws: 1, grid: 201, truncation: 256, scale: 1.0 }
    }
}

fn default_alpha() -> f64 {
    1.0
}

fn default_replications() -> usize {
    1
}

fn default_gamma() -> f64 {
    0.1
}

fn default_likelihood() -> String {
    "auto".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub study: Study,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design: Option<String>,
    #[serde(default)]
    pub model: ModelOverrides,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub k: KSetting,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation: Option<usize>,
    #[serde(default)]
    pub weighting: WeightingSetting,
    #[serde(default = "default_likelihood")]
    pub likelihood: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_grid: Option<Vec<usize>>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Coefficients of `Φ̃` on the prior basis; default `e_1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi_tilde: Option<Vec<f64>>,
    #[serde(default)]
    pub chain: ChainSettings,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    /// CSV dataset for `fit` (header `X1..Xd, Y, W1..Wdw`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<String>,
    #[serde(default)]
    pub prior_draw: PriorDrawSettings,
}

fn missing(key: &str, study: Study) -> HarnessError {
    HarnessError::Config(format!("missing key `{key}` required by study `{}`", study.name()))
}

/// Parse a configuration from TOML text and validate it.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.message().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

pub fn to_toml(cfg: &ExperimentConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| HarnessError::Config(e.to_string()))
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let s = self.study;
        match s {
            Study::Simulate | Study::Coverage => {
                self.design.as_ref().ok_or_else(|| missing("design", s))?;
                self.n.ok_or_else(|| missing("n", s))?;
            }
            Study::RateStudy => {
                self.design.as_ref().ok_or_else(|| missing("design", s))?;
                let grid = self.n_grid.as_ref().ok_or_else(|| missing("n_grid", s))?;
                if grid.len() < 3 || grid.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(HarnessError::Config(
                        "`n_grid` must hold at least 3 strictly increasing sample sizes".into(),
                    ));
                }
            }
            Study::Fit => {
                if self.data.is_none() {
                    self.design.as_ref().ok_or_else(|| missing("design", s))?;
                    self.n.ok_or_else(|| missing("n", s))?;
                } else if self.design.is_none() && self.k_choice()? == KChoice::Auto {
                    return Err(HarnessError::Config(
                        "key `k` must be fixed when fitting a dataset without a `design`".into(),
                    ));
                }
            }
            Study::PriorDraw => {
                let p = &self.prior_draw;
                if p.grid < 2 {
                    return Err(HarnessError::Config("`prior_draw.grid` must be at least 2".into()));
                }
                if p.alphas.is_empty() || p.draws == 0 || p.truncation == 0 {
                    return Err(HarnessError::Config(
                        "`prior_draw` needs nonempty `alphas`, positive `draws` and `truncation`".into(),
                    ));
                }
            }
        }
        if self.design.is_some() {
            self.resolve_design()?;
        }
        self.k_choice()?;
        self.weight_modes()?;
        self.likelihood_path()?;
        self.chain_config()?;
        if self.replications == 0 {
            return Err(HarnessError::Config("`replications` must be positive".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(HarnessError::Config(format!("`gamma` must lie in (0,1), got {}", self.gamma)));
        }
        if !(self.alpha > 0.0) {
            return Err(HarnessError::Config(format!("`alpha` must be positive, got {}", self.alpha)));
        }
        if self.workers == Some(0) {
            return Err(HarnessError::Config("`workers` must be positive".into()));
        }
        Ok(())
    }

    pub fn k_choice(&self) -> Result<KChoice> {
        match &self.k {
            KSetting::Fixed(0) => Err(HarnessError::Config("`k` must be positive".into())),
            KSetting::Fixed(k) => Ok(KChoice::Fixed(*k)),
            KSetting::Named(s) if s == "auto" => Ok(KChoice::Auto),
            KSetting::Named(s) => Err(HarnessError::Config(format!("`k` must be \"auto\" or an integer, got {s:?}"))),
        }
    }

    pub fn weight_modes(&self) -> Result<Vec<WeightMode>> {
        let names = match &self.weighting {
            WeightingSetting::One(s) => vec![s.clone()],
            WeightingSetting::Many(v) => v.clone(),
        };
        if names.is_empty() {
            return Err(HarnessError::Config("`weighting` must not be empty".into()));
        }
        names
            .iter()
            .map(|s| match s.as_str() {
                "identity" => Ok(WeightMode::Identity),
                "optimal" => Ok(WeightMode::Optimal),
                "continuously-updated" | "cu" => Ok(WeightMode::ContinuouslyUpdated),
                other => Err(HarnessError::Config(format!("unknown `weighting` {other:?}"))),
            })
            .collect()
    }

    pub fn likelihood_path(&self) -> Result<LikelihoodPath> {
        match self.likelihood.as_str() {
            "auto" => Ok(LikelihoodPath::Auto),
            "direct" => Ok(LikelihoodPath::Direct),
            other => Err(HarnessError::Config(format!("unknown `likelihood` {other:?}"))),
        }
    }

    pub fn chain_config(&self) -> Result<ChainConfig> {
        let c = ChainConfig {
            iters: self.chain.iters,
            burn: self.chain.burn,
            thin: self.chain.thin,
            target_accept: self.chain.target_accept,
            initial_step: self.chain.initial_step,
        };
        c.validate().map_err(|e| HarnessError::Config(format!("chain: {e}")))?;
        Ok(c)
    }

    pub fn fit_config(&self, weight: WeightMode) -> Result<FitConfig> {
        Ok(FitConfig {
            alpha: self.alpha,
            k: self.k_choice()?,
            truncation: self.truncation,
            weight,
            chain: self.chain_config()?,
            likelihood: self.likelihood_path()?,
        })
    }

    /// Catalog design with the `[model]` overrides applied.
    pub fn resolve_design(&self) -> Result<DgpDesign> {
        let name = self.design.as_deref().ok_or_else(|| missing("design", self.study))?;
        let mut d = model::design_by_name(name).map_err(|_| {
            HarnessError::Config(format!(
                "unknown design `{name}`; available: {}",
                model::DESIGN_NAMES.join(", ")
            ))
        })?;
        let o = &self.model;
        if let Some(q) = o.quantile {
            d.model = MomentModel::npqiv(q).map_err(|e| HarnessError::Config(format!("model.quantile: {e}")))?;
        }
        if let Some(e) = o.endogeneity {
            d.endogeneity = e;
        }
        if let Some(s) = o.noise_sd {
            d.noise_sd = s;
        }
        if let Some(h) = o.heteroskedasticity {
            d.heteroskedasticity = h;
        }
        if let Some(a) = o.strength {
            d.instrument = match d.instrument {
                Instrument::GaussianCopula { .. } => Instrument::GaussianCopula { strength: a },
                Instrument::ReflectedDiffusion { order, .. } => Instrument::ReflectedDiffusion { strength: a, order },
            };
        }
        d.validate().map_err(|e| HarnessError::Config(format!("model: {e}")))?;
        Ok(d)
    }

    /// `Φ̃` on a cosine basis of `len` terms (padded with zeros).
    pub fn phi_tilde_on(&self, len: usize) -> Result<FunctionCoefficients> {
        let mut c = self.phi_tilde.clone().unwrap_or_else(|| vec![1.0]);
        if c.len() > len {
            return Err(HarnessError::Config(format!("`phi_tilde` has {} terms, basis only {len}", c.len())));
        }
        c.resize(len, 0.0);
        let basis = SieveBasisSpec::cosine(1, len)?;
        Ok(FunctionCoefficients::new(basis, c)?)
    }
}
