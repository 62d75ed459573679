//! Residual functions, synthetic data-generating processes with known truth
//! and known linearised operator, and weighting matrices.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use crate::basis::{BasisFamily, FunctionCoefficients, Points, SieveBasisSpec};
use crate::error::{Error, Result};
use crate::linalg;
use crate::prior::IllPosedness;
use crate::quadrature::{self, Rule};

/// Eigenvalue bounds imposed on every non-identity weighting matrix.
pub const WEIGHT_MIN: f64 = 1e-3;
pub const WEIGHT_MAX: f64 = 1e3;

/// Residual function of a conditional moment restriction `E[ρ(Y, h0(X)) | W] = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MomentModel {
    /// `ρ = y - h(x)`.
    Npiv,
    /// `ρ = 1{y - h(x) ≤ 0} - γ`.
    Npqiv { gamma: f64 },
}

impl MomentModel {
    pub fn npqiv(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidParameter(format!("quantile level must lie in (0,1), got {gamma}")));
        }
        Ok(MomentModel::Npqiv { gamma })
    }

    /// Dimension of the residual vector.
    pub fn d_rho(&self) -> usize {
        1
    }

    /// Modulus of L²-continuity of the residual.
    pub fn kappa(&self) -> f64 {
        match self {
            MomentModel::Npiv => 1.0,
            MomentModel::Npqiv { .. } => 0.5,
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, MomentModel::Npiv)
    }

    #[inline]
    pub(crate) fn residual_scalar(&self, y: f64, h_at_x: f64) -> f64 {
        match *self {
            MomentModel::Npiv => y - h_at_x,
            MomentModel::Npqiv { gamma } => {
                if y - h_at_x <= 0.0 {
                    1.0 - gamma
                } else {
                    -gamma
                }
            }
        }
    }

    /// Write `ρ(y, h(x))` into `out` (length [`d_rho`](Self::d_rho)).
    pub fn residual_into(&self, y: f64, h_at_x: f64, out: &mut [f64]) {
        out[0] = self.residual_scalar(y, h_at_x);
    }

    fn validate(&self) -> Result<()> {
        if let MomentModel::Npqiv { gamma } = *self {
            Self::npqiv(gamma)?;
        }
        Ok(())
    }
}

impl fmt::Display for MomentModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MomentModel::Npiv => write!(f, "npiv"),
            MomentModel::Npqiv { gamma } => write!(f, "npqiv({gamma})"),
        }
    }
}

/// `ρ(y, h(x))`.
pub fn residual(model: &MomentModel, y: f64, h_at_x: f64) -> Vec<f64> {
    let mut out = vec![0.0; model.d_rho()];
    model.residual_into(y, h_at_x, &mut out);
    out
}

/// A sample `{(X_i, Y_i, W_i)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Points,
    y: Vec<f64>,
    w: Points,
}

impl Dataset {
    pub fn new(x: Points, y: Vec<f64>, w: Points) -> Result<Self> {
        if x.len() != y.len() || w.len() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "X has {} rows, Y {}, W {}",
                x.len(),
                y.len(),
                w.len()
            )));
        }
        if y.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        for p in [&x, &w] {
            if let Some(bad) = p.iter().find(|r| r.iter().any(|v| !(0.0..=1.0).contains(v))) {
                return Err(Error::OutsideDomain { point: bad.to_vec() });
            }
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite outcome".into()));
        }
        Ok(Self { x, y, w })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn x(&self) -> &Points {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn w(&self) -> &Points {
        &self.w
    }
}

/// How the instrument `W` moves the endogenous regressor `X`.
///
/// Both designs keep `W` and `X` marginally uniform on `[0,1]`, so the
/// cosine basis is orthonormal for the law of `X` and of `W`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Instrument {
    /// `W = Φ(U)`, `X = Φ(a U + √(1-a²) ξ)`. The conditional-expectation
    /// operator has geometrically decaying singular values (severely ill-posed).
    GaussianCopula { strength: f64 },
    /// `X` is reflected Brownian motion on `[0,1]` started at `W`, run for a
    /// random time `c·T`, `T ~ Gamma(order, 1)`, `c = (1-a)/a`. Then
    /// `E[cos(πkX) | W] = (1 + cπ²k²)^{-order} cos(πkW)`, singular values decay
    /// like `k^{-2·order}` (mildly ill-posed).
    ReflectedDiffusion { strength: f64, order: f64 },
}

impl Instrument {
    pub fn strength(&self) -> f64 {
        match *self {
            Instrument::GaussianCopula { strength } | Instrument::ReflectedDiffusion { strength, .. } => {
                strength
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let a = self.strength();
        if !(a > 0.0 && a <= 1.0) {
            return Err(Error::InvalidParameter(format!("instrument strength must lie in (0,1], got {a}")));
        }
        if let Instrument::ReflectedDiffusion { order, .. } = *self {
            if !(order > 0.0 && order.is_finite()) {
                return Err(Error::InvalidParameter(format!("diffusion order must be positive, got {order}")));
            }
        }
        Ok(())
    }

    fn diffusion_time(strength: f64) -> f64 {
        (1.0 - strength) / strength
    }

    /// Multiplier of the cosine of frequency `k` under `E[· | W]` (diffusion only).
    pub fn diffusion_multiplier(strength: f64, order: f64, k: usize) -> f64 {
        let c = Self::diffusion_time(strength);
        (1.0 + c * PI * PI * (k * k) as f64).powf(-order)
    }
}

/// Standard normal cdf.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

fn std_normal_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("unit normal").inverse_cdf(p)
}

fn reflect_unit(x: f64) -> f64 {
    let r = x.rem_euclid(2.0);
    if r > 1.0 {
        2.0 - r
    } else {
        r
    }
}

/// Synthetic design on `[0,1] × [0,1]` with known structural function.
#[derive(Debug, Clone, PartialEq)]
pub struct DgpDesign {
    /// Structural function `h0` on a one-dimensional cosine basis.
    pub h0: FunctionCoefficients,
    pub instrument: Instrument,
    /// Correlation of the structural error with the first-stage disturbance.
    pub endogeneity: f64,
    pub noise_sd: f64,
    /// Error scale `noise_sd / √(1 + het·cos(πw))`, `het ∈ [0, 1)`.
    pub heteroskedasticity: f64,
    pub model: MomentModel,
}

/// Truth with coefficients `(-1)^{i-1} i^{-(p/d + 1/2 + 0.01)}`, `p = α + d/2`,
/// for `i ≤ j0`.
pub fn default_truth(alpha: f64, d: usize, j0: usize) -> Result<FunctionCoefficients> {
    let df = d as f64;
    let p = alpha + df / 2.0;
    let e = p / df + 0.5 + 0.01;
    let coeffs = (1..=j0)
        .map(|i| {
            let sign = if i % 2 == 1 { 1.0 } else { -1.0 };
            sign * (i as f64).powf(-e)
        })
        .collect();
    FunctionCoefficients::new(SieveBasisSpec::cosine(d, j0)?, coeffs)
}

impl DgpDesign {
    pub fn validate(&self) -> Result<()> {
        self.instrument.validate()?;
        self.model.validate()?;
        if self.h0.basis().family() != BasisFamily::Cosine || self.h0.basis().dim() != 1 {
            return Err(Error::InvalidParameter("truth must live on the 1-d cosine basis".into()));
        }
        if !(-1.0..=1.0).contains(&self.endogeneity) {
            return Err(Error::InvalidParameter(format!("endogeneity must lie in [-1,1], got {}", self.endogeneity)));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::InvalidParameter(format!("noise sd must be nonnegative, got {}", self.noise_sd)));
        }
        if !(0.0..1.0).contains(&self.heteroskedasticity) {
            return Err(Error::InvalidParameter(format!(
                "heteroskedasticity must lie in [0,1), got {}",
                self.heteroskedasticity
            )));
        }
        Ok(())
    }

    /// Conditional standard deviation of the structural error at `w`.
    pub fn noise_scale(&self, w: f64) -> f64 {
        self.noise_sd / (1.0 + self.heteroskedasticity * (PI * w).cos()).sqrt()
    }

    /// `E[ρ(Y, h0(X))² | W = w]`.
    pub fn residual_second_moment(&self, w: f64) -> f64 {
        match self.model {
            MomentModel::Npiv => self.noise_scale(w).powi(2),
            MomentModel::Npqiv { gamma } => gamma * (1.0 - gamma),
        }
    }

    /// Decay profile of the linearised operator.
    pub fn ill_posedness(&self) -> IllPosedness {
        match self.instrument {
            Instrument::ReflectedDiffusion { order, .. } => IllPosedness::Mild { zeta: 2.0 * order },
            Instrument::GaussianCopula { strength } => IllPosedness::Severe { r: -strength.ln(), zeta: 1.0 },
        }
    }

    fn quantile_shift(&self) -> f64 {
        match self.model {
            MomentModel::Npiv => 0.0,
            MomentModel::Npqiv { gamma } => std_normal_quantile(gamma),
        }
    }
}

/// Draw `n` observations from the design.
pub fn simulate_dgp<R: Rng + ?Sized>(design: &DgpDesign, n: usize, rng: &mut R) -> Result<Dataset> {
    design.validate()?;
    if n == 0 {
        return Err(Error::Empty("sample size"));
    }
    let shift = design.quantile_shift();
    let e = design.endogeneity;
    let e_perp = (1.0 - e * e).max(0.0).sqrt();
    let gamma_time = match design.instrument {
        Instrument::ReflectedDiffusion { order, .. } => {
            Some(Gamma::new(order, 1.0).map_err(|err| Error::InvalidParameter(err.to_string()))?)
        }
        Instrument::GaussianCopula { .. } => None,
    };
    let mut xs = Vec::with_capacity(n);
    let mut ws = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    let mut basis_vals = vec![0.0; design.h0.basis().size()];
    for _ in 0..n {
        let xi: f64 = rng.sample(StandardNormal);
        let (w, x) = match design.instrument {
            Instrument::GaussianCopula { strength: a } => {
                let u: f64 = rng.sample(StandardNormal);
                let s = (1.0 - a * a).sqrt();
                (std_normal_cdf(u), std_normal_cdf(a * u + s * xi))
            }
            Instrument::ReflectedDiffusion { strength, .. } => {
                let w: f64 = rng.random();
                let t = gamma_time.as_ref().expect("diffusion").sample(rng);
                let c = Instrument::diffusion_time(strength);
                (w, reflect_unit(w + (2.0 * c * t).sqrt() * xi))
            }
        };
        let eps: f64 = rng.sample(StandardNormal);
        let z = e * xi + e_perp * eps;
        let u = design.noise_scale(w) * (z - shift);
        design.h0.basis().eval_all_unchecked(&[x], &mut basis_vals);
        let h = linalg::dot(&basis_vals, design.h0.coeffs());
        xs.push(x);
        ws.push(w);
        ys.push(h + u);
    }
    Dataset::new(Points::scalar(xs), ys, Points::scalar(ws))
}

/// Weighting used in the codomain inner product `E[m(W)' Σ(W) m(W)]` of
/// the linearised operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorWeight {
    Identity,
    /// `Σ(W) = {E[ρρ' | W]}^{-1}` at the truth.
    Optimal,
}

impl OperatorWeight {
    fn at(&self, design: &DgpDesign, w: f64) -> f64 {
        match self {
            OperatorWeight::Identity => 1.0,
            OperatorWeight::Optimal => (1.0 / design.residual_second_moment(w)).clamp(WEIGHT_MIN, WEIGHT_MAX),
        }
    }
}

/// Quadrature images of the linearised operator `D = D_{h0}`.
#[derive(Debug, Clone)]
pub struct OperatorMatrices {
    /// `J × K`, entry `(i, j) = ⟨D e_i, b_j⟩`.
    pub projection: DMatrix<f64>,
    /// `J × J`, entry `(i, k) = E[Σ(W) (D e_i)(W) (D e_k)(W)]`, i.e. `D*D` with
    /// the adjoint taken in the Σ-weighted inner product.
    pub adjoint_composition: DMatrix<f64>,
    /// `J × J`, entry `(i, k) = E[Σ(W)² E[ρ²|W] (D e_i)(W) (D e_k)(W)]`.
    pub sandwich: DMatrix<f64>,
    pub weight: OperatorWeight,
}

/// Tolerance between successive quadrature refinements.
pub const OPERATOR_QUAD_TOL: f64 = 1e-6;

struct OperatorEvaluator<'a> {
    design: &'a DgpDesign,
    j: usize,
}

impl OperatorEvaluator<'_> {
    /// Outer rule over `W`, returning `(w, weight)` pairs integrating against
    /// the uniform law.
    fn outer_rule(&self, level: usize) -> Vec<(f64, f64)> {
        match self.design.instrument {
            Instrument::ReflectedDiffusion { .. } => {
                let r = quadrature::composite(0.0, 1.0, 8 * level, 12);
                r.nodes.into_iter().zip(r.weights).collect()
            }
            Instrument::GaussianCopula { .. } => {
                let r = quadrature::standard_normal(12 * level, 12);
                r.nodes.into_iter().map(std_normal_cdf).zip(r.weights).collect()
            }
        }
    }

    /// `(D e_i)(w)` for `i = 1..=J`.
    fn image_at(&self, w: f64, inner: &Rule, out: &mut [f64]) -> Result<()> {
        let d = self.design;
        let sign = if d.model.is_linear() { -1.0 } else { 1.0 };
        match d.instrument {
            Instrument::ReflectedDiffusion { strength, order } => {
                let density = match d.model {
                    MomentModel::Npiv => 1.0,
                    MomentModel::Npqiv { .. } => {
                        if d.endogeneity != 0.0 {
                            return Err(Error::Unsupported(
                                "quantile operator on the diffusion design needs zero endogeneity".into(),
                            ));
                        }
                        std_normal_pdf(d.quantile_shift()) / d.noise_scale(w)
                    }
                };
                for (i, o) in out.iter_mut().enumerate() {
                    let e = if i == 0 { 1.0 } else { std::f64::consts::SQRT_2 * (PI * i as f64 * w).cos() };
                    *o = sign * density * Instrument::diffusion_multiplier(strength, order, i) * e;
                }
            }
            Instrument::GaussianCopula { strength: a } => {
                let s = (1.0 - a * a).sqrt();
                let u = std_normal_quantile(w.clamp(1e-300, 1.0 - 1e-16));
                let shift = d.quantile_shift();
                let sig = d.noise_scale(w);
                let e = d.endogeneity;
                let e_perp = (1.0 - e * e).sqrt();
                if !d.model.is_linear() && e_perp == 0.0 {
                    return Err(Error::Unsupported("quantile operator needs |endogeneity| < 1".into()));
                }
                out.iter_mut().for_each(|o| *o = 0.0);
                for (&z, &wt) in inner.nodes.iter().zip(&inner.weights) {
                    let x = std_normal_cdf(a * u + s * z);
                    let kern = match d.model {
                        MomentModel::Npiv => 1.0,
                        MomentModel::Npqiv { .. } => std_normal_pdf((e * z - shift) / e_perp) / (sig * e_perp),
                    };
                    for (i, o) in out.iter_mut().enumerate() {
                        let ev = if i == 0 { 1.0 } else { std::f64::consts::SQRT_2 * (PI * i as f64 * x).cos() };
                        *o += wt * kern * ev;
                    }
                }
                out.iter_mut().for_each(|o| *o *= sign);
            }
        }
        Ok(())
    }

    fn matrices(
        &self,
        basis_w: &SieveBasisSpec,
        weight: OperatorWeight,
        level: usize,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
        let k = basis_w.size();
        let inner = quadrature::standard_normal(12 * level, 12);
        let mut proj = DMatrix::zeros(self.j, k);
        let mut comp = DMatrix::zeros(self.j, self.j);
        let mut sand = DMatrix::zeros(self.j, self.j);
        let mut img = vec![0.0; self.j];
        let mut bw = vec![0.0; k];
        for (w, wt) in self.outer_rule(level) {
            self.image_at(w, &inner, &mut img)?;
            basis_w.eval_all_unchecked(&[w], &mut bw);
            let sigma = weight.at(self.design, w);
            let sand_w = sigma * sigma * self.design.residual_second_moment(w);
            for i in 0..self.j {
                for jj in 0..k {
                    proj[(i, jj)] += wt * img[i] * bw[jj];
                }
                for l in 0..=i {
                    let p = wt * img[i] * img[l];
                    comp[(i, l)] += sigma * p;
                    sand[(i, l)] += sand_w * p;
                }
            }
        }
        for i in 0..self.j {
            for l in 0..i {
                comp[(l, i)] = comp[(i, l)];
                sand[(l, i)] = sand[(i, l)];
            }
        }
        Ok((proj, comp, sand))
    }
}

/// Matrix of the linearised operator between the cosine basis on `X` and
/// `basis_w`, together with its weighted adjoint composition. Quadrature is
/// refined once and the two levels must agree within [`OPERATOR_QUAD_TOL`].
pub fn frechet_operator_matrix(
    design: &DgpDesign,
    basis_x: &SieveBasisSpec,
    basis_w: &SieveBasisSpec,
    weight: OperatorWeight,
) -> Result<OperatorMatrices> {
    design.validate()?;
    if basis_x.family() != BasisFamily::Cosine || basis_x.dim() != 1 || basis_w.dim() != 1 {
        return Err(Error::Unsupported("operator quadrature needs a 1-d cosine basis on X and a 1-d W basis".into()));
    }
    let ev = OperatorEvaluator { design, j: basis_x.size() };
    // oscillation of the highest frequency sets the starting resolution
    let start = 1 + basis_x.size().max(basis_w.size()) / 16;
    let (p1, c1, s1) = ev.matrices(basis_w, weight, start)?;
    let (p2, c2, s2) = ev.matrices(basis_w, weight, 2 * start)?;
    let diff = (&p1 - &p2)
        .abs()
        .max()
        .max((&c1 - &c2).abs().max())
        .max((&s1 - &s2).abs().max());
    if !(diff <= OPERATOR_QUAD_TOL) {
        return Err(Error::QuadratureNonConvergence { diff });
    }
    Ok(OperatorMatrices { projection: p2, adjoint_composition: c2, sandwich: s2, weight })
}

/// Fitted conditional second moment `w ↦ Ê[ρρ' | W = w]` as a series in a
/// W-basis (one coefficient vector per entry of the upper triangle).
#[derive(Debug, Clone, PartialEq)]
pub struct VariancePilot {
    basis: SieveBasisSpec,
    d_rho: usize,
    /// `coeffs[entry][k]`, entries ordered `(0,0), (0,1), ..., (1,1), ...`.
    coeffs: Vec<Vec<f64>>,
}

impl VariancePilot {
    pub fn from_coefficients(basis: SieveBasisSpec, d_rho: usize, coeffs: Vec<Vec<f64>>) -> Result<Self> {
        if coeffs.len() != d_rho * (d_rho + 1) / 2 || coeffs.iter().any(|c| c.len() != basis.size()) {
            return Err(Error::DimensionMismatch("variance pilot coefficients".into()));
        }
        Ok(Self { basis, d_rho, coeffs })
    }

    /// Homoskedastic pilot `Ê[ρ² | W] ≡ variance` (scalar residuals).
    pub fn constant(variance: f64) -> Self {
        let basis = SieveBasisSpec::cosine(1, 1).expect("constant basis");
        Self { basis, d_rho: 1, coeffs: vec![vec![variance]] }
    }

    pub fn basis(&self) -> &SieveBasisSpec {
        &self.basis
    }

    /// `Ê[ρρ' | W = w]`.
    pub fn second_moment(&self, w: &[f64]) -> DMatrix<f64> {
        let mut bw = vec![0.0; self.basis.size()];
        if self.basis.size() == 1 && self.basis.family() == BasisFamily::Cosine {
            bw[0] = 1.0;
        } else {
            self.basis.eval_all_unchecked(w, &mut bw);
        }
        let mut m = DMatrix::zeros(self.d_rho, self.d_rho);
        let mut e = 0;
        for r in 0..self.d_rho {
            for c in r..self.d_rho {
                let v = linalg::dot(&bw, &self.coeffs[e]);
                m[(r, c)] = v;
                m[(c, r)] = v;
                e += 1;
            }
        }
        m
    }

    /// Weighting matrix `{Ê[ρρ' | W = w]}^{-1}` with spectrum clamped to
    /// `[WEIGHT_MIN, WEIGHT_MAX]`.
    pub fn inverse_weight(&self, w: &[f64]) -> DMatrix<f64> {
        invert_clamped(&self.second_moment(w))
    }
}

fn invert_clamped(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.nrows() == 1 {
        let v = m[(0, 0)];
        let inv = if v > 0.0 { 1.0 / v } else { WEIGHT_MAX };
        return DMatrix::from_element(1, 1, inv.clamp(WEIGHT_MIN, WEIGHT_MAX));
    }
    // invert on the floored spectrum, then clamp
    let floored = linalg::clamp_spectrum(m, 1.0 / WEIGHT_MAX, f64::INFINITY);
    let inv = linalg::spd_inverse(&floored).unwrap_or_else(|_| DMatrix::identity(m.nrows(), m.nrows()));
    linalg::clamp_spectrum(&inv, WEIGHT_MIN, WEIGHT_MAX)
}

/// User-supplied weighting `w ↦ Σ(w)`.
pub type FixedWeight = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;

/// Weighting matrix `Σ̂(W)` of the quasi-Bayes objective.
#[derive(Clone)]
pub enum WeightFunction {
    Identity,
    Fixed(FixedWeight),
    /// `{E[ρρ' | W]}^{-1}` at the truth, estimated by a pilot (closed form for
    /// the quantile model).
    Optimal(Option<VariancePilot>),
    /// `{Ê[ρρ' | W]}^{-1}` re-estimated at every candidate `h`.
    ContinuouslyUpdated,
}

impl fmt::Debug for WeightFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightFunction::Identity => write!(f, "Identity"),
            WeightFunction::Fixed(_) => write!(f, "Fixed(..)"),
            WeightFunction::Optimal(p) => f.debug_tuple("Optimal").field(p).finish(),
            WeightFunction::ContinuouslyUpdated => write!(f, "ContinuouslyUpdated"),
        }
    }
}

impl WeightFunction {
    pub fn mode_name(&self) -> &'static str {
        match self {
            WeightFunction::Identity => "identity",
            WeightFunction::Fixed(_) => "fixed",
            WeightFunction::Optimal(_) => "optimal",
            WeightFunction::ContinuouslyUpdated => "continuously-updated",
        }
    }
}

/// `Σ̂(w)`. `pilot` is the fitted conditional second moment: required for the
/// NPIV optimal mode and for the continuously-updated mode (fitted at the
/// current `h`).
pub fn weight_at(
    wf: &WeightFunction,
    model: &MomentModel,
    w: &[f64],
    pilot: Option<&VariancePilot>,
) -> Result<DMatrix<f64>> {
    let d = model.d_rho();
    match wf {
        WeightFunction::Identity => Ok(DMatrix::identity(d, d)),
        WeightFunction::Fixed(f) => {
            let m = f(w);
            if m.shape() != (d, d) {
                return Err(Error::DimensionMismatch(format!("fixed weight is {:?}, expected {d}x{d}", m.shape())));
            }
            Ok(linalg::clamp_spectrum(&m, WEIGHT_MIN, WEIGHT_MAX))
        }
        WeightFunction::Optimal(own) => match (own.as_ref().or(pilot), model) {
            (Some(p), _) => Ok(p.inverse_weight(w)),
            (None, MomentModel::Npqiv { gamma }) => {
                Ok(DMatrix::from_element(1, 1, (1.0 / (gamma * (1.0 - gamma))).clamp(WEIGHT_MIN, WEIGHT_MAX)))
            }
            (None, MomentModel::Npiv) => Err(Error::MissingWeightInput { mode: "optimal", missing: "a variance pilot" }),
        },
        WeightFunction::ContinuouslyUpdated => match pilot {
            Some(p) => Ok(p.inverse_weight(w)),
            None => Err(Error::MissingWeightInput {
                mode: "continuously-updated",
                missing: "the second moment fitted at h",
            }),
        },
    }
}

/// Names of the shipped designs.
pub const DESIGN_NAMES: [&str; 5] = ["mild-npiv", "mild-npiv-het", "severe-npiv", "mild-npqiv", "zero-npiv"];

/// Number of truth coefficients in the shipped designs.
pub const TRUTH_TERMS: usize = 64;

/// Look up a shipped design.
///
/// | name            | instrument                 | model       | het |
/// |-----------------|----------------------------|-------------|-----|
/// | `mild-npiv`     | diffusion, ζ = 1           | NPIV        | 0   |
/// | `mild-npiv-het` | diffusion, ζ = 1           | NPIV        | 0.6 |
/// | `severe-npiv`   | Gaussian copula, a = 0.7   | NPIV        | 0   |
/// | `mild-npqiv`    | diffusion, ζ = 1           | NPQIV(0.5)  | 0   |
/// | `zero-npiv`     | diffusion, ζ = 1, h0 = 0   | NPIV, no noise | 0 |
pub fn design_by_name(name: &str) -> Result<DgpDesign> {
    let truth = default_truth(1.0, 1, TRUTH_TERMS)?;
    let mild = Instrument::ReflectedDiffusion { strength: 0.95, order: 0.5 };
    let base = DgpDesign {
        h0: truth,
        instrument: mild,
        endogeneity: 0.5,
        noise_sd: 0.25,
        heteroskedasticity: 0.0,
        model: MomentModel::Npiv,
    };
    let d = match name {
        "mild-npiv" => base,
        "mild-npiv-het" => DgpDesign { heteroskedasticity: 0.6, ..base },
        "severe-npiv" => DgpDesign { instrument: Instrument::GaussianCopula { strength: 0.7 }, ..base },
        "mild-npqiv" => DgpDesign { model: MomentModel::npqiv(0.5)?, ..base },
        "zero-npiv" => DgpDesign {
            h0: FunctionCoefficients::zero(SieveBasisSpec::cosine(1, TRUTH_TERMS)?),
            noise_sd: 0.0,
            ..base
        },
        other => return Err(Error::InvalidParameter(format!("unknown design `{other}`"))),
    };
    d.validate()?;
    Ok(d)
}
