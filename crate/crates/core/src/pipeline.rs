//! Simulate → first stage → quasi-posterior → chain, shared by the fit,
//! coverage and rate studies.

use std::sync::Arc;

use rayon::prelude::*;

use crate::basis::{FunctionCoefficients, SieveBasisSpec};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{self, Dataset, DgpDesign, MomentModel, OperatorWeight, WeightFunction};
use crate::posterior::{self, ChainConfig, ChainResult, LogLikelihood, QuasiPosteriorSpec, Target};
use crate::prior::{self, IllPosedness};
use crate::rng::{self, Purpose};
use crate::sieve::{self, ObjectiveSpec};

/// First-stage dimension: the balancing rule or a fixed override.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KChoice {
    Auto,
    Fixed(usize),
}

/// Weighting of the objective as chosen in configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightMode {
    Identity,
    Optimal,
    ContinuouslyUpdated,
}

impl WeightMode {
    /// Weighting of the adjoint that matches this objective.
    pub fn operator_weight(&self) -> OperatorWeight {
        match self {
            WeightMode::Optimal => OperatorWeight::Optimal,
            _ => OperatorWeight::Identity,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            WeightMode::Identity => "identity",
            WeightMode::Optimal => "optimal",
            WeightMode::ContinuouslyUpdated => "continuously-updated",
        }
    }
}

/// How the chain evaluates the likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LikelihoodPath {
    /// Assembled quadratic form when the residual is linear and the weights
    /// do not depend on `h`; residual evaluation otherwise.
    Auto,
    /// Always evaluate residuals at every observation.
    Direct,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub alpha: f64,
    pub k: KChoice,
    /// Prior truncation; `None` uses `max(4K, 64)`.
    pub truncation: Option<usize>,
    pub weight: WeightMode,
    pub chain: ChainConfig,
    pub likelihood: LikelihoodPath,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            k: KChoice::Auto,
            truncation: None,
            weight: WeightMode::Optimal,
            chain: ChainConfig::default(),
            likelihood: LikelihoodPath::Auto,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub k: usize,
    pub j: usize,
    pub prior_scale: f64,
    pub chain: ChainResult,
    pub posterior_mean: FunctionCoefficients,
    pub spec: Arc<QuasiPosteriorSpec>,
}

/// Objective weights for `mode`. The NPIV optimal weight uses the squared
/// residuals of the identity-weight posterior mean as a pilot.
pub fn build_weights(
    fit: &Arc<sieve::FirstStageFit>,
    model: &MomentModel,
    mode: WeightMode,
    prior: &prior::GaussianSeriesPrior,
) -> Result<WeightFunction> {
    Ok(match (mode, model) {
        (WeightMode::Identity, _) => WeightFunction::Identity,
        (WeightMode::ContinuouslyUpdated, _) => WeightFunction::ContinuouslyUpdated,
        (WeightMode::Optimal, MomentModel::Npqiv { .. }) => WeightFunction::Optimal(None),
        (WeightMode::Optimal, MomentModel::Npiv) => {
            let id = ObjectiveSpec::new(fit.clone(), *model, WeightFunction::Identity)?;
            let spec = QuasiPosteriorSpec::new(id, prior.clone())?;
            let pilot_mean = posterior::exact_gaussian_posterior(&spec)?.mean;
            let res = spec.residuals(pilot_mean.as_slice());
            WeightFunction::Optimal(Some(fit.second_moment_pilot(&res)))
        }
    })
}

/// First-stage dimension `K` and prior truncation `J` for a sample of size `n`.
pub fn dimensions(cfg: &FitConfig, n: usize, ill: &IllPosedness, dw: usize) -> (usize, usize) {
    let k = match cfg.k {
        KChoice::Auto => sieve::select_k(n, cfg.alpha, ill, dw),
        KChoice::Fixed(k) => k,
    };
    (k, cfg.truncation.unwrap_or_else(|| prior::default_truncation(k)))
}

/// Fit one dataset. `tracked` is the representer whose functional enters
/// the chain's effective-sample-size diagnostic.
pub fn fit_dataset(
    data: Arc<Dataset>,
    model: &MomentModel,
    ill: &IllPosedness,
    cfg: &FitConfig,
    tracked: Option<&[f64]>,
    seed: u64,
) -> Result<FitOutput> {
    let n = data.n();
    let d = data.x().dim();
    let (k, j) = dimensions(cfg, n, ill, data.w().dim());
    let fit = Arc::new(sieve::first_stage_fit(data, SieveBasisSpec::cosine(d, k)?)?);
    let prior = prior::scaled_prior(cfg.alpha, k, n, SieveBasisSpec::cosine(d, j)?)?;
    let weights = build_weights(&fit, model, cfg.weight, &prior)?;
    let objective = ObjectiveSpec::new(fit, *model, weights)?;
    let spec = Arc::new(QuasiPosteriorSpec::new(objective, prior)?);
    let quadratic = match cfg.likelihood {
        LikelihoodPath::Auto if model.is_linear() && !spec.objective().is_continuously_updated() => {
            Some(posterior::quadratic_objective(&spec)?)
        }
        _ => None,
    };
    let like: &dyn LogLikelihood = match &quadratic {
        Some(q) => q,
        None => spec.as_ref(),
    };
    let target = Target::new(like, spec.prior())?;
    let mut chain_rng = rng::replication_stream(seed, Purpose::Chain);
    let chain = posterior::run_chain(&target, spec.prior().basis(), &cfg.chain, tracked, seed, &mut chain_rng)?;
    let posterior_mean = posterior::posterior_mean(&chain)?;
    Ok(FitOutput { k, j, prior_scale: spec.prior().scale(), chain, posterior_mean, spec })
}

/// Simulate from `design` with replication seed `seed` and fit.
pub fn replicate(
    design: &DgpDesign,
    n: usize,
    cfg: &FitConfig,
    tracked: Option<&[f64]>,
    seed: u64,
) -> Result<FitOutput> {
    let data = model::simulate_dgp(design, n, &mut rng::replication_stream(seed, Purpose::Data))?;
    fit_dataset(Arc::new(data), &design.model, &design.ill_posedness(), cfg, tracked, seed)
}

/// `‖ĥ - h0‖` in coefficient space; terms present in only one expansion
/// count against the other as zero.
pub fn l2_error(estimate: &[f64], truth: &[f64]) -> f64 {
    let m = estimate.len().max(truth.len());
    (0..m)
        .map(|i| {
            let a = estimate.get(i).copied().unwrap_or(0.0);
            let b = truth.get(i).copied().unwrap_or(0.0);
            (a - b) * (a - b)
        })
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone)]
pub struct RateStudyConfig {
    pub design: DgpDesign,
    pub ns: Vec<usize>,
    pub replications: usize,
    pub fit: FitConfig,
    pub base_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateReplication {
    pub n: usize,
    pub replication: usize,
    pub seed: u64,
    pub k: usize,
    pub error: f64,
    pub accept_rate: f64,
    pub ess_min: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateCell {
    pub n: usize,
    pub k: usize,
    pub mean_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateStudyResult {
    pub cells: Vec<RateCell>,
    pub records: Vec<RateReplication>,
    /// Least-squares slope of `log(mean error)` on `log n`.
    pub slope: f64,
    /// `-α/(2(α+ζ)+d)` for mildly ill-posed designs.
    pub theoretical: Option<f64>,
}

/// Posterior-mean `L²` error over an increasing grid of sample sizes.
pub fn rate_study(cfg: &RateStudyConfig) -> Result<RateStudyResult> {
    if cfg.ns.len() < 2 || cfg.ns.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter("rate study needs a strictly increasing n-grid".into()));
    }
    if cfg.replications == 0 {
        return Err(Error::InvalidParameter("rate study needs at least one replication".into()));
    }
    let r = cfg.replications;
    let jobs: Vec<(usize, usize)> = cfg.ns.iter().flat_map(|&n| (0..r).map(move |i| (n, i))).collect();
    let out: Vec<Result<RateReplication>> = jobs
        .par_iter()
        .enumerate()
        .map(|(index, &(n, rep))| {
            let seed = rng::replication_seed(cfg.base_seed, index);
            replicate(&cfg.design, n, &cfg.fit, None, seed)
                .map(|f| RateReplication {
                    n,
                    replication: rep,
                    seed,
                    k: f.k,
                    error: l2_error(f.posterior_mean.coeffs(), cfg.design.h0.coeffs()),
                    accept_rate: f.chain.accept_rate,
                    ess_min: f.chain.ess_min,
                })
                .map_err(|e| Error::Replication { index, seed, source: Box::new(e) })
        })
        .collect();
    let records = out.into_iter().collect::<Result<Vec<_>>>()?;
    let cells: Vec<RateCell> = cfg
        .ns
        .iter()
        .enumerate()
        .map(|(c, &n)| {
            let chunk = &records[c * r..(c + 1) * r];
            RateCell { n, k: chunk[0].k, mean_error: chunk.iter().map(|x| x.error).sum::<f64>() / r as f64 }
        })
        .collect();
    let lx: Vec<f64> = cells.iter().map(|c| (c.n as f64).ln()).collect();
    let ly: Vec<f64> = cells.iter().map(|c| c.mean_error.ln()).collect();
    let (slope, _) = linalg::ols_line(&lx, &ly);
    let d = cfg.design.h0.basis().dim() as f64;
    let theoretical = match cfg.design.ill_posedness() {
        IllPosedness::Mild { zeta } => Some(-cfg.fit.alpha / (2.0 * (cfg.fit.alpha + zeta) + d)),
        _ => None,
    };
    Ok(RateStudyResult { cells, records, slope, theoretical })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l2_error_pads() {
        assert_eq!(l2_error(&[1.0, 2.0], &[1.0, 2.0, 2.0]), 2.0);
        assert_eq!(l2_error(&[0.0, 0.0, 3.0], &[0.0, 4.0]), 5.0);
    }

    #[test]
    fn replicate_is_deterministic() {
        let design = model::design_by_name("mild-npiv").unwrap();
        let cfg = FitConfig {
            chain: ChainConfig { iters: 600, burn: 200, thin: 2, ..Default::default() },
            ..Default::default()
        };
        let a = replicate(&design, 300, &cfg, None, 11).unwrap();
        let b = replicate(&design, 300, &cfg, None, 11).unwrap();
        assert_eq!(a.chain, b.chain);
        let c = replicate(&design, 300, &cfg, None, 12).unwrap();
        assert_ne!(a.chain.draws, c.chain.draws);
    }
}
