//! Linear functionals, credible intervals, the asymptotic variance oracle and
//! coverage studies.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::basis::{BasisFamily, FunctionCoefficients, SieveBasisSpec};
use crate::error::{Error, Result};
use crate::model::{self, DgpDesign, OperatorWeight};
use crate::pipeline::{self, FitConfig};
use crate::posterior::{self, ChainResult};
use crate::quadrature;
use crate::rng;

/// `L(h) = ⟨Φ, h⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFunctional {
    pub phi: FunctionCoefficients,
    /// `Φ̃` with `Φ = D*DΦ̃`, when built from a design.
    pub phi_tilde: Option<FunctionCoefficients>,
    /// Weighting of the adjoint used to build `Φ` from `Φ̃`.
    pub weight: Option<OperatorWeight>,
    /// `∫ e_i e_k f_X`, when the law of `X` is not uniform.
    pub density_gram: Option<DMatrix<f64>>,
}

impl LinearFunctional {
    /// Functional with an arbitrary representer. Frequentist coverage of its
    /// credible intervals is only guaranteed when `Φ` lies in the range of
    /// `D*D`.
    pub fn from_representer(phi: FunctionCoefficients) -> Self {
        Self { phi, phi_tilde: None, weight: None, density_gram: None }
    }

    /// Attach the Gram matrix of the basis under a non-uniform density of `X`.
    pub fn with_density_gram(mut self, gram: DMatrix<f64>) -> Result<Self> {
        let j = self.phi.basis().size();
        if gram.shape() != (j, j) {
            return Err(Error::DimensionMismatch(format!("density Gram {:?}, representer has {j} terms", gram.shape())));
        }
        self.density_gram = Some(gram);
        Ok(self)
    }

    /// `L` applied to a raw coefficient vector on the same family.
    pub fn apply(&self, coeffs: &[f64]) -> f64 {
        let phi = self.phi.coeffs();
        match &self.density_gram {
            None => phi.iter().zip(coeffs).map(|(a, b)| a * b).sum(),
            Some(m) => {
                let mut s = 0.0;
                for (i, p) in phi.iter().enumerate() {
                    for (k, h) in coeffs.iter().enumerate().take(m.ncols()) {
                        s += p * m[(i, k)] * h;
                    }
                }
                s
            }
        }
    }
}

/// `L(h)`. Coefficients past the shorter expansion count as zero.
pub fn functional_value(l: &LinearFunctional, h: &FunctionCoefficients) -> Result<f64> {
    let (a, b) = (l.phi.basis(), h.basis());
    if a.family() != b.family() || a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(format!(
            "functional on {:?}/{}-d, function on {:?}/{}-d",
            a.family(),
            a.dim(),
            b.family(),
            b.dim()
        )));
    }
    if l.density_gram.is_some() && h.basis().size() > a.size() {
        return Err(Error::DimensionMismatch("function has more terms than the density Gram".into()));
    }
    Ok(l.apply(h.coeffs()))
}

/// `M_{ik} = ∫ e_i(x) e_k(x) f(x) dx` by tensor Gauss-Legendre quadrature.
pub fn density_gram(basis: &SieveBasisSpec, density: impl Fn(&[f64]) -> f64, panels: usize) -> DMatrix<f64> {
    let rule = quadrature::composite(0.0, 1.0, panels, 16);
    let d = basis.dim();
    let j = basis.size();
    let m = rule.len();
    let mut out = DMatrix::zeros(j, j);
    let mut idx = vec![0usize; d];
    let mut x = vec![0.0; d];
    let mut e = vec![0.0; j];
    loop {
        let mut w = 1.0;
        for (t, &i) in idx.iter().enumerate() {
            x[t] = rule.nodes[i];
            w *= rule.weights[i];
        }
        basis.eval_all_unchecked(&x, &mut e);
        let wf = w * density(&x);
        for a in 0..j {
            for b in 0..=a {
                out[(a, b)] += wf * e[a] * e[b];
            }
        }
        let mut t = 0;
        loop {
            if t == d {
                for a in 0..j {
                    for b in 0..a {
                        out[(b, a)] = out[(a, b)];
                    }
                }
                return out;
            }
            idx[t] += 1;
            if idx[t] < m {
                break;
            }
            idx[t] = 0;
            t += 1;
        }
    }
}

fn trivial_w_basis() -> SieveBasisSpec {
    SieveBasisSpec::cosine(1, 1).expect("constant basis")
}

/// `Φ = D*DΦ̃` with the adjoint in the `weight`-weighted inner product.
pub fn construct_functional_from_phitilde(
    design: &DgpDesign,
    phi_tilde: &FunctionCoefficients,
    weight: OperatorWeight,
) -> Result<LinearFunctional> {
    let ops = model::frechet_operator_matrix(design, phi_tilde.basis(), &trivial_w_basis(), weight)?;
    let phi = &ops.adjoint_composition * DVector::from_column_slice(phi_tilde.coeffs());
    Ok(LinearFunctional {
        phi: FunctionCoefficients::new(phi_tilde.basis().clone(), phi.as_slice().to_vec())?,
        phi_tilde: Some(phi_tilde.clone()),
        weight: Some(weight),
        density_gram: None,
    })
}

/// `[center - radius, center + radius]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CredibleInterval {
    pub center: f64,
    pub radius: f64,
    pub gamma: f64,
}

impl CredibleInterval {
    pub fn lower(&self) -> f64 {
        self.center - self.radius
    }

    pub fn upper(&self) -> f64 {
        self.center + self.radius
    }

    pub fn contains(&self, v: f64) -> bool {
        (v - self.center).abs() <= self.radius
    }
}

/// Fewest retained draws accepted by [`credible_interval`].
pub const MIN_DRAWS: usize = 20;

/// Sample quantile with linear interpolation between order statistics
/// (`h = (n-1)p`).
pub fn quantile_type7(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let h = (v.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Interval centred at `L(posterior mean)` with radius the `1-γ` quantile
/// of `|L(draw) - center|`.
pub fn credible_interval(chain: &ChainResult, l: &LinearFunctional, gamma: f64) -> Result<CredibleInterval> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidParameter(format!("gamma must lie in (0,1), got {gamma}")));
    }
    if chain.draws.len() < MIN_DRAWS {
        return Err(Error::InsufficientDraws { got: chain.draws.len(), need: MIN_DRAWS });
    }
    let mean = posterior::posterior_mean(chain)?;
    let center = functional_value(l, &mean)?;
    let dev: Vec<f64> = chain.draws.iter().map(|d| (l.apply(d) - center).abs()).collect();
    Ok(CredibleInterval { center, radius: quantile_type7(&dev, 1.0 - gamma), gamma })
}

/// Limiting variances of `√n (L(h) - L(ĥ))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceOracle {
    /// `E[(DΦ̃)' Σ (DΦ̃)]`, the spread of the quasi-posterior.
    pub posterior_spread: f64,
    /// `E[(DΦ̃)' Σ ρρ' Σ (DΦ̃)]`, the sampling variance of the centre.
    pub sampling: f64,
}

/// Quadrature of both limiting variances for a functional built from `Φ̃`.
pub fn asymptotic_variance_oracle(
    design: &DgpDesign,
    l: &LinearFunctional,
    weight: OperatorWeight,
) -> Result<VarianceOracle> {
    let pt = l
        .phi_tilde
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("variance oracle needs a functional built from phi_tilde".into()))?;
    if pt.basis().family() != BasisFamily::Cosine {
        return Err(Error::Unsupported("variance oracle needs a cosine representer".into()));
    }
    let ops = model::frechet_operator_matrix(design, pt.basis(), &trivial_w_basis(), weight)?;
    let v = DVector::from_column_slice(pt.coeffs());
    Ok(VarianceOracle {
        posterior_spread: v.dot(&(&ops.adjoint_composition * &v)),
        sampling: v.dot(&(&ops.sandwich * &v)),
    })
}

/// Per-replication coverage record.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageRecord {
    pub replication: usize,
    pub seed: u64,
    pub truth: f64,
    pub center: f64,
    pub radius: f64,
    pub hit: bool,
    pub accept_rate: f64,
    pub ess_min: f64,
    pub k: usize,
}

/// Coverage estimate with its binomial standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageSummary {
    pub records: Vec<CoverageRecord>,
    pub coverage: f64,
    pub std_error: f64,
    pub nominal: f64,
}

/// Settings of a coverage study.
#[derive(Debug, Clone)]
pub struct CoverageConfig {
    pub design: DgpDesign,
    pub n: usize,
    pub replications: usize,
    pub gamma: f64,
    pub phi_tilde: FunctionCoefficients,
    pub fit: FitConfig,
    pub base_seed: u64,
}

/// Repeated simulate → fit → sample → interval, recording whether `L(h0)`
/// is covered. Replications run on the current rayon pool; results are in
/// replication order regardless of scheduling.
pub fn coverage_study(cfg: &CoverageConfig) -> Result<CoverageSummary> {
    if cfg.replications == 0 {
        return Err(Error::InvalidParameter("coverage study needs at least one replication".into()));
    }
    let weight = cfg.fit.weight.operator_weight();
    let l = construct_functional_from_phitilde(&cfg.design, &cfg.phi_tilde, weight)?;
    let truth = functional_value(&l, &cfg.design.h0)?;
    let out: Vec<Result<CoverageRecord>> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| {
            let seed = rng::replication_seed(cfg.base_seed, r);
            let run = || -> Result<CoverageRecord> {
                let fit = pipeline::replicate(&cfg.design, cfg.n, &cfg.fit, Some(l.phi.coeffs()), seed)?;
                let ci = credible_interval(&fit.chain, &l, cfg.gamma)?;
                Ok(CoverageRecord {
                    replication: r,
                    seed,
                    truth,
                    center: ci.center,
                    radius: ci.radius,
                    hit: ci.contains(truth),
                    accept_rate: fit.chain.accept_rate,
                    ess_min: fit.chain.ess_min,
                    k: fit.k,
                })
            };
            run().map_err(|e| Error::Replication { index: r, seed, source: Box::new(e) })
        })
        .collect();
    let records = out.into_iter().collect::<Result<Vec<_>>>()?;
    let r = records.len() as f64;
    let coverage = records.iter().filter(|c| c.hit).count() as f64 / r;
    Ok(CoverageSummary {
        std_error: (coverage * (1.0 - coverage) / r).sqrt(),
        coverage,
        records,
        nominal: 1.0 - cfg.gamma,
    })
}
