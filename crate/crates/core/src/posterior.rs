//! Quasi-posterior over truncated prior coefficients, the prior-reversible
//! Crank-Nicolson sampler, and the closed-form Gaussian posterior for NPIV.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::basis::{self, FunctionCoefficients};
use crate::error::{Error, Result};
use crate::linalg;
use crate::prior::GaussianSeriesPrior;
use crate::sieve::{self, ObjectiveSpec};

/// Default chain budget.
pub const DEFAULT_ITERS: usize = 20_000;
pub const DEFAULT_BURN: usize = 5_000;
pub const DEFAULT_THIN: usize = 5;
pub const DEFAULT_TARGET_ACCEPT: f64 = 0.25;
/// Chains whose smallest effective sample size is below this get flagged.
pub const LOW_ESS: f64 = 50.0;
const MIN_STEP: f64 = 1e-6;

/// Log-likelihood of the truncated prior coefficients.
pub trait LogLikelihood: Send + Sync {
    /// Number of coefficients.
    fn dim(&self) -> usize;
    fn log_likelihood(&self, theta: &[f64]) -> f64;
}

/// Quasi-posterior `exp(-(n/2) Qₙ(h))` against a Gaussian-series prior.
#[derive(Debug, Clone)]
pub struct QuasiPosteriorSpec {
    objective: ObjectiveSpec,
    prior: GaussianSeriesPrior,
    /// `e_i(X_l)`, `n × J`.
    x_design: DMatrix<f64>,
}

impl QuasiPosteriorSpec {
    pub fn new(objective: ObjectiveSpec, prior: GaussianSeriesPrior) -> Result<Self> {
        let k = objective.fit().k();
        if prior.truncation() < k {
            return Err(Error::InvalidParameter(format!(
                "prior truncation {} is below the first-stage dimension {k}",
                prior.truncation()
            )));
        }
        let data = objective.fit().data();
        if data.x().dim() != prior.basis().dim() {
            return Err(Error::DimensionMismatch("prior basis and X dimension differ".into()));
        }
        let x_design = basis::design_matrix(prior.basis(), data.x())?;
        Ok(Self { objective, prior, x_design })
    }

    pub fn objective(&self) -> &ObjectiveSpec {
        &self.objective
    }

    pub fn prior(&self) -> &GaussianSeriesPrior {
        &self.prior
    }

    pub fn n(&self) -> usize {
        self.objective.fit().n()
    }

    pub fn x_design(&self) -> &DMatrix<f64> {
        &self.x_design
    }

    /// Residuals `ρ(Y_i, h(X_i))` for coefficients `theta`.
    pub fn residuals(&self, theta: &[f64]) -> Vec<f64> {
        let hv = &self.x_design * DVector::from_column_slice(theta);
        sieve::residuals_of(self.objective.model(), self.objective.fit().data().y(), hv.as_slice())
    }
}

impl LogLikelihood for QuasiPosteriorSpec {
    fn dim(&self) -> usize {
        self.prior.truncation()
    }

    fn log_likelihood(&self, theta: &[f64]) -> f64 {
        let q = self.objective.objective_from_residuals(&self.residuals(theta));
        -0.5 * self.n() as f64 * q
    }
}

/// `-(n/2) Qₙ(h)`.
pub fn log_quasi_likelihood(spec: &QuasiPosteriorSpec, h: &FunctionCoefficients) -> Result<f64> {
    if h.basis() != spec.prior.basis() {
        return Err(Error::DimensionMismatch("h must live on the prior basis".into()));
    }
    Ok(spec.log_likelihood(h.coeffs()))
}

/// Likelihood that is identically zero.
#[derive(Debug, Clone, Copy)]
pub struct FlatLikelihood(pub usize);

impl LogLikelihood for FlatLikelihood {
    fn dim(&self) -> usize {
        self.0
    }

    fn log_likelihood(&self, _theta: &[f64]) -> f64 {
        0.0
    }
}

/// `Qₙ(θ) = c - 2b'θ + θ'Aθ`, exact when the residual is linear in `h`.
#[derive(Debug, Clone)]
pub struct QuadraticObjective {
    pub c: f64,
    pub b: DVector<f64>,
    pub a: DMatrix<f64>,
    pub n: usize,
}

impl QuadraticObjective {
    pub fn value(&self, theta: &[f64]) -> f64 {
        let t = DVector::from_column_slice(theta);
        self.c - 2.0 * self.b.dot(&t) + t.dot(&(&self.a * &t))
    }
}

impl LogLikelihood for QuadraticObjective {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn log_likelihood(&self, theta: &[f64]) -> f64 {
        -0.5 * self.n as f64 * self.value(theta)
    }
}

/// Assemble the quadratic form of `Qₙ` in the prior coefficients.
pub fn quadratic_objective(spec: &QuasiPosteriorSpec) -> Result<QuadraticObjective> {
    let obj = &spec.objective;
    if !obj.model().is_linear() {
        return Err(Error::Unsupported(format!("closed-form posterior needs a linear residual, got {}", obj.model())));
    }
    let s = obj
        .quadratic_kernel()
        .ok_or_else(|| Error::Unsupported("closed-form posterior with continuously-updated weights".into()))?;
    let fit = obj.fit();
    // r̄(θ) = r̄₀ - Pθ
    let r0 = fit.moment_vector(fit.data().y());
    let p = fit.whitened_design().tr_mul(&spec.x_design) / fit.n() as f64;
    let sp = &s * &p;
    let mut a = p.tr_mul(&sp);
    linalg::symmetrize(&mut a);
    let b = sp.tr_mul(&r0);
    let c = r0.dot(&(&s * &r0));
    Ok(QuadraticObjective { c, b, a, n: spec.n() })
}

/// Gaussian posterior `N(mean, covariance)` over the prior coefficients.
#[derive(Debug, Clone)]
pub struct GaussianPosterior {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl GaussianPosterior {
    pub fn sd(&self) -> Vec<f64> {
        self.covariance.diagonal().iter().map(|v| v.sqrt()).collect()
    }
}

/// Posterior for a quadratic objective with weight `n`:
/// precision `nA + Λ^{-1}`, mean `(nA + Λ^{-1})^{-1} n b`.
pub fn gaussian_posterior(q: &QuadraticObjective, prior: &GaussianSeriesPrior) -> Result<GaussianPosterior> {
    let var = prior.coefficient_variance();
    if var.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidParameter("prior variances must be positive".into()));
    }
    let n = q.n as f64;
    let mut precision = &q.a * n;
    for (i, v) in var.iter().enumerate() {
        precision[(i, i)] += 1.0 / v;
    }
    linalg::symmetrize(&mut precision);
    let covariance = linalg::spd_inverse(&precision)?;
    let mean = &covariance * (&q.b * n);
    Ok(GaussianPosterior { mean, covariance })
}

/// Exact Gaussian quasi-posterior of an NPIV specification with `h`-free
/// weights.
pub fn exact_gaussian_posterior(spec: &QuasiPosteriorSpec) -> Result<GaussianPosterior> {
    gaussian_posterior(&quadratic_objective(spec)?, &spec.prior)
}

/// Sampler state in standardized coordinates (`θ_i = scale·√λ_i·z_i`).
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub z: Vec<f64>,
    pub log_like: f64,
    pub step: f64,
}

/// Target of the sampler: a likelihood and the prior standard deviations.
pub struct Target<'a> {
    pub likelihood: &'a dyn LogLikelihood,
    pub sd: Vec<f64>,
}

impl<'a> Target<'a> {
    pub fn new(likelihood: &'a dyn LogLikelihood, prior: &GaussianSeriesPrior) -> Result<Self> {
        if likelihood.dim() != prior.truncation() {
            return Err(Error::DimensionMismatch(format!(
                "likelihood has {} coefficients, prior {}",
                likelihood.dim(),
                prior.truncation()
            )));
        }
        Ok(Self { likelihood, sd: prior.coefficient_sd() })
    }

    pub fn theta(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.sd).map(|(z, s)| z * s).collect()
    }

    pub fn log_like_z(&self, z: &[f64]) -> f64 {
        self.likelihood.log_likelihood(&self.theta(z))
    }

    pub fn initial_state(&self, step: f64) -> ChainState {
        let z = vec![0.0; self.sd.len()];
        let log_like = self.log_like_z(&z);
        ChainState { z, log_like, step }
    }
}

/// One Crank-Nicolson step. Returns the new state, whether the proposal was
/// accepted, and its acceptance probability.
pub fn pcn_step<R: Rng + ?Sized>(state: &ChainState, target: &Target<'_>, rng: &mut R) -> (ChainState, bool, f64) {
    let beta = state.step;
    let keep = (1.0 - beta * beta).max(0.0).sqrt();
    let z: Vec<f64> = state
        .z
        .iter()
        .map(|zi| {
            let xi: f64 = rng.sample(StandardNormal);
            keep * zi + beta * xi
        })
        .collect();
    let log_like = target.log_like_z(&z);
    let log_ratio = log_like - state.log_like;
    let prob = if log_ratio >= 0.0 { 1.0 } else if log_ratio.is_nan() { 0.0 } else { log_ratio.exp() };
    let u: f64 = rng.random();
    if u < prob {
        (ChainState { z, log_like, step: beta }, true, prob)
    } else {
        (state.clone(), false, prob)
    }
}

/// Chain budget and adaptation target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainConfig {
    pub iters: usize,
    pub burn: usize,
    pub thin: usize,
    pub target_accept: f64,
    pub initial_step: f64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            iters: DEFAULT_ITERS,
            burn: DEFAULT_BURN,
            thin: DEFAULT_THIN,
            target_accept: DEFAULT_TARGET_ACCEPT,
            initial_step: 0.5,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iters <= self.burn {
            return Err(Error::InvalidParameter(format!(
                "iterations ({}) must exceed burn-in ({})",
                self.iters, self.burn
            )));
        }
        if self.thin == 0 {
            return Err(Error::InvalidParameter("thinning must be positive".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::InvalidParameter(format!("target acceptance {} not in (0,1)", self.target_accept)));
        }
        if !(self.initial_step > 0.0 && self.initial_step <= 1.0) {
            return Err(Error::InvalidParameter(format!("initial step {} not in (0,1]", self.initial_step)));
        }
        Ok(())
    }
}

/// Retained draws and diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainResult {
    pub basis: basis::SieveBasisSpec,
    /// Coefficient draws after burn-in and thinning.
    pub draws: Vec<Vec<f64>>,
    /// Acceptance rate after burn-in.
    pub accept_rate: f64,
    pub burn_accept_rate: f64,
    /// Effective sample size of the first (up to) 10 coefficients.
    pub ess: Vec<f64>,
    /// Effective sample size of the tracked functional, if any.
    pub ess_functional: Option<f64>,
    pub ess_min: f64,
    pub low_ess: bool,
    pub step_final: f64,
    pub seed: u64,
}

/// Run an adaptive chain. The step adapts on `log β` with gain `k^{-0.6}`
/// during burn-in and is frozen afterwards. `tracked` is an optional
/// coefficient vector whose linear functional enters `ess_min`.
pub fn run_chain<R: Rng + ?Sized>(
    target: &Target<'_>,
    basis: &basis::SieveBasisSpec,
    cfg: &ChainConfig,
    tracked: Option<&[f64]>,
    seed: u64,
    rng: &mut R,
) -> Result<ChainResult> {
    cfg.validate()?;
    if basis.size() != target.sd.len() {
        return Err(Error::DimensionMismatch("chain basis and target differ".into()));
    }
    let mut state = target.initial_state(cfg.initial_step);
    if !state.log_like.is_finite() {
        return Err(Error::InvalidParameter("log-likelihood at the prior mean is not finite".into()));
    }
    let mut log_step = cfg.initial_step.ln();
    let mut draws = Vec::with_capacity((cfg.iters - cfg.burn) / cfg.thin + 1);
    let (mut acc_burn, mut acc_post) = (0usize, 0usize);
    for it in 0..cfg.iters {
        let (next, accepted, prob) = pcn_step(&state, target, rng);
        state = next;
        if it < cfg.burn {
            acc_burn += accepted as usize;
            let gain = ((it + 1) as f64).powf(-0.6);
            log_step = (log_step + gain * (prob - cfg.target_accept)).clamp(MIN_STEP.ln(), 0.0);
            state.step = log_step.exp();
        } else {
            acc_post += accepted as usize;
            if (it - cfg.burn) % cfg.thin == 0 {
                draws.push(target.theta(&state.z));
            }
        }
    }
    let accept_rate = acc_post as f64 / (cfg.iters - cfg.burn) as f64;
    let burn_accept_rate = if cfg.burn > 0 { acc_burn as f64 / cfg.burn as f64 } else { f64::NAN };
    let j = target.sd.len();
    let ess: Vec<f64> = (0..j.min(10))
        .map(|i| {
            let s: Vec<f64> = draws.iter().map(|d| d[i]).collect();
            effective_sample_size(&s)
        })
        .collect();
    let ess_functional = tracked.map(|phi| {
        let s: Vec<f64> = draws.iter().map(|d| linalg::dot(&d[..phi.len().min(j)], &phi[..phi.len().min(j)])).collect();
        effective_sample_size(&s)
    });
    let ess_min = ess.iter().copied().chain(ess_functional).fold(f64::INFINITY, f64::min);
    Ok(ChainResult {
        basis: basis.clone(),
        draws,
        accept_rate,
        burn_accept_rate,
        ess,
        ess_functional,
        ess_min,
        low_ess: ess_min < LOW_ESS,
        step_final: state.step,
        seed,
    })
}

/// Effective sample size by Geyer's initial monotone sequence estimator.
/// A constant series has ESS equal to its length.
pub fn effective_sample_size(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return n as f64;
    }
    let nf = n as f64;
    let mean = x.iter().sum::<f64>() / nf;
    let c: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let var = c.iter().map(|v| v * v).sum::<f64>() / nf;
    if !(var > 0.0) {
        return nf;
    }
    let acf = |lag: usize| -> f64 { c[..n - lag].iter().zip(&c[lag..]).map(|(a, b)| a * b).sum::<f64>() / (nf * var) };
    // pair sums Γ_m = ρ_{2m} + ρ_{2m+1}, positive and monotone
    let mut sum_pairs = 0.0;
    let mut prev = f64::INFINITY;
    let mut m = 0;
    while 2 * m + 1 < n {
        let g = acf(2 * m) + acf(2 * m + 1);
        if g <= 0.0 {
            break;
        }
        let g = g.min(prev);
        sum_pairs += g;
        prev = g;
        m += 1;
    }
    let tau = (-1.0 + 2.0 * sum_pairs).max(1.0 / nf);
    nf / tau
}

/// Coefficientwise average of the retained draws (one pass).
pub fn posterior_mean(chain: &ChainResult) -> Result<FunctionCoefficients> {
    let first = chain.draws.first().ok_or(Error::Empty("retained draws"))?;
    let mut mean = vec![0.0; first.len()];
    for (k, d) in chain.draws.iter().enumerate() {
        let w = 1.0 / (k + 1) as f64;
        for (m, v) in mean.iter_mut().zip(d) {
            *m += (v - *m) * w;
        }
    }
    FunctionCoefficients::new(chain.basis.clone(), mean)
}

/// Shared handle used by replication pipelines.
pub type SharedSpec = Arc<QuasiPosteriorSpec>;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::SieveBasisSpec;
    use crate::rng;

    struct TwoPoint;

    impl LogLikelihood for TwoPoint {
        fn dim(&self) -> usize {
            1
        }

        fn log_likelihood(&self, theta: &[f64]) -> f64 {
            if theta[0] > 0.0 {
                0.0
            } else {
                -(3f64).ln()
            }
        }
    }

    fn prior(j: usize) -> GaussianSeriesPrior {
        GaussianSeriesPrior::new(SieveBasisSpec::cosine(1, j).unwrap(), 1.0, 1.0).unwrap()
    }

    #[test]
    fn zero_step_freezes() {
        let p = prior(4);
        let flat = FlatLikelihood(4);
        let t = Target::new(&flat, &p).unwrap();
        let s = ChainState { z: vec![0.3, -1.0, 2.0, 0.1], log_like: 0.0, step: 0.0 };
        let mut r = rng::seeded(1);
        for _ in 0..10 {
            let (n, acc, prob) = pcn_step(&s, &t, &mut r);
            assert!(acc);
            assert_eq!(prob, 1.0);
            assert_eq!(n.z, s.z);
        }
    }

    #[test]
    fn flat_target_always_accepts() {
        let p = prior(3);
        let flat = FlatLikelihood(3);
        let t = Target::new(&flat, &p).unwrap();
        let cfg = ChainConfig { iters: 2000, burn: 500, thin: 1, ..Default::default() };
        let res = run_chain(&t, p.basis(), &cfg, None, 0, &mut rng::seeded(2)).unwrap();
        assert_eq!(res.accept_rate, 1.0);
    }

    #[test]
    fn two_point_occupancy() {
        // target mass on θ > 0 is 1 / (1 + 1/3) = 0.75
        let p = prior(1);
        let t = Target::new(&TwoPoint, &p).unwrap();
        let mut s = t.initial_state(1.0);
        let mut r = rng::seeded(3);
        let steps = 1_000_000;
        let mut pos = 0usize;
        for _ in 0..steps {
            s = pcn_step(&s, &t, &mut r).0;
            pos += (s.z[0] > 0.0) as usize;
        }
        let frac = pos as f64 / steps as f64;
        assert!((frac / 0.75 - 1.0).abs() < 0.02, "{frac}");
    }

    #[test]
    fn ess_of_iid_and_constant() {
        let mut r = rng::seeded(4);
        let x: Vec<f64> = (0..4000).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
        let e = effective_sample_size(&x);
        assert!(e > 3000.0 && e < 5500.0, "{e}");
        assert_eq!(effective_sample_size(&[1.0; 100]), 100.0);
        // AR(1) with φ = 0.9: ESS ≈ n (1-φ)/(1+φ)
        let mut y = vec![0.0; 20000];
        for i in 1..y.len() {
            y[i] = 0.9 * y[i - 1] + r.sample::<f64, _>(StandardNormal);
        }
        let e = effective_sample_size(&y);
        let expect = 20000.0 * 0.1 / 1.9;
        assert!((e / expect - 1.0).abs() < 0.3, "{e} vs {expect}");
    }

    #[test]
    fn posterior_mean_single_and_two_pass() {
        let b = SieveBasisSpec::cosine(1, 3).unwrap();
        let mut chain = ChainResult {
            basis: b,
            draws: vec![vec![1.0, 2.0, 3.0]],
            accept_rate: 0.5,
            burn_accept_rate: 0.5,
            ess: vec![],
            ess_functional: None,
            ess_min: 1.0,
            low_ess: true,
            step_final: 0.1,
            seed: 0,
        };
        assert_eq!(posterior_mean(&chain).unwrap().coeffs(), &[1.0, 2.0, 3.0]);
        let mut r = rng::seeded(5);
        chain.draws = (0..777).map(|_| (0..3).map(|_| r.random::<f64>() * 10.0 - 3.0).collect()).collect();
        let m = posterior_mean(&chain).unwrap();
        for i in 0..3 {
            let two_pass = chain.draws.iter().map(|d| d[i]).sum::<f64>() / 777.0;
            assert!((m.coeffs()[i] - two_pass).abs() < 1e-12);
        }
        chain.draws.clear();
        assert!(posterior_mean(&chain).is_err());
    }

    #[test]
    fn quadratic_prior_limit() {
        let p = prior(3);
        let q = QuadraticObjective {
            c: 1.0,
            b: DVector::from_vec(vec![0.5, -0.2, 0.1]),
            a: DMatrix::identity(3, 3),
            n: 0,
        };
        let post = gaussian_posterior(&q, &p).unwrap();
        assert!(post.mean.iter().all(|m| m.abs() < 1e-15));
        for (i, v) in p.coefficient_variance().iter().enumerate() {
            assert!((post.covariance[(i, i)] - v).abs() < 1e-12);
        }
    }
}
