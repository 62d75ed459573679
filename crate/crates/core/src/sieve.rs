//! First-stage series projection `m̂(w, h)`, the quasi-Bayes objective
//! `Qₙ(h)` and the sieve-dimension rule.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::basis::{self, FunctionCoefficients, GramMatrices, SieveBasisSpec};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{self, Dataset, MomentModel, VariancePilot, WeightFunction, WEIGHT_MAX, WEIGHT_MIN};
use crate::prior::IllPosedness;

/// Precomputed first-stage design on `W`.
#[derive(Debug, Clone)]
pub struct FirstStageFit {
    basis_w: SieveBasisSpec,
    gram: GramMatrices,
    /// Rows `G^{-1/2} b(W_i)`.
    whitened_design: DMatrix<f64>,
    /// `[Ĝ°]^{-1}`.
    whitened_gram_inv: DMatrix<f64>,
    data: Arc<Dataset>,
}

/// Least-squares projection machinery of `data` onto `basis_w`.
pub fn first_stage_fit(data: Arc<Dataset>, basis_w: SieveBasisSpec) -> Result<FirstStageFit> {
    let n = data.n();
    let k = basis_w.size();
    if n <= k {
        return Err(Error::TooFewObservations { n, k });
    }
    if data.w().dim() != basis_w.dim() {
        return Err(Error::DimensionMismatch(format!(
            "W has dimension {}, basis {}",
            data.w().dim(),
            basis_w.dim()
        )));
    }
    let design = basis::design_matrix(&basis_w, data.w())?;
    let reference = match basis_w.family() {
        basis::BasisFamily::Cosine => None,
        basis::BasisFamily::BSpline => Some(basis::reference_gram(&basis_w)),
    };
    let gram = basis::gram_matrices(&design, reference.as_ref())?;
    let whitened_design = &design * &gram.whitener;
    let whitened_gram_inv = linalg::spd_inverse(&gram.g_whitened)?;
    Ok(FirstStageFit { basis_w, gram, whitened_design, whitened_gram_inv, data })
}

impl FirstStageFit {
    pub fn basis(&self) -> &SieveBasisSpec {
        &self.basis_w
    }

    pub fn gram(&self) -> &GramMatrices {
        &self.gram
    }

    pub fn whitened_design(&self) -> &DMatrix<f64> {
        &self.whitened_design
    }

    pub fn whitened_gram_inv(&self) -> &DMatrix<f64> {
        &self.whitened_gram_inv
    }

    pub fn data(&self) -> &Arc<Dataset> {
        &self.data
    }

    pub fn n(&self) -> usize {
        self.data.n()
    }

    pub fn k(&self) -> usize {
        self.basis_w.size()
    }

    /// `Eₙ[G^{-1/2} b(W) v]`.
    pub fn moment_vector(&self, v: &[f64]) -> DVector<f64> {
        self.whitened_design.tr_mul(&DVector::from_column_slice(v)) / self.n() as f64
    }

    /// Coefficients of the projection of `v` on the whitened basis,
    /// `[Ĝ°]^{-1} Eₙ[b° v]`.
    pub fn project(&self, v: &[f64]) -> DVector<f64> {
        &self.whitened_gram_inv * self.moment_vector(v)
    }

    /// Fitted values of the projection of `v` at the sample points.
    pub fn fitted(&self, v: &[f64]) -> DVector<f64> {
        &self.whitened_design * self.project(v)
    }

    /// Whitened basis vector `G^{-1/2} b(w)`.
    pub fn whitened_basis_at(&self, w: &[f64]) -> Result<DVector<f64>> {
        let b = DVector::from_vec(self.basis_w.eval_all(w)?);
        Ok(&self.gram.whitener * b)
    }

    /// `Ê[ρ² | W = ·]` from residuals at the sample points.
    pub fn second_moment_pilot(&self, residuals: &[f64]) -> VariancePilot {
        let sq: Vec<f64> = residuals.iter().map(|r| r * r).collect();
        let coeffs = &self.gram.whitener * self.project(&sq);
        VariancePilot::from_coefficients(self.basis_w.clone(), 1, vec![coeffs.as_slice().to_vec()])
            .expect("pilot dimensions")
    }
}

/// `h(X_i)` for every observation.
pub fn h_at_data(data: &Dataset, h: &FunctionCoefficients) -> Result<Vec<f64>> {
    let x = basis::design_matrix(h.basis(), data.x())?;
    Ok((x * DVector::from_column_slice(h.coeffs())).as_slice().to_vec())
}

/// `ρ(Y_i, h(X_i))` for every observation.
pub fn residuals_of(model: &MomentModel, y: &[f64], h_vals: &[f64]) -> Vec<f64> {
    y.iter().zip(h_vals).map(|(&y, &h)| model.residual_scalar(y, h)).collect()
}

/// `m̂(w, h) = Eₙ[ρ(Y, h(X)) b(W)'] Ĝ^{-1} b(w)`.
pub fn mhat(fit: &FirstStageFit, model: &MomentModel, h: &FunctionCoefficients, w: &[f64]) -> Result<Vec<f64>> {
    let rho = residuals_of(model, fit.data.y(), &h_at_data(&fit.data, h)?);
    Ok(vec![mhat_from_residuals(fit, &rho, w)?])
}

/// `m̂(w, ·)` for precomputed residuals.
pub fn mhat_from_residuals(fit: &FirstStageFit, residuals: &[f64], w: &[f64]) -> Result<f64> {
    Ok(fit.whitened_basis_at(w)?.dot(&fit.project(residuals)))
}

/// Objective `Qₙ(h) = Eₙ[m̂(W,h)' Σ̂(W) m̂(W,h)]` on a fitted first stage.
#[derive(Debug, Clone)]
pub struct ObjectiveSpec {
    fit: Arc<FirstStageFit>,
    model: MomentModel,
    weights: WeightFunction,
    kind: WeightKind,
}

#[derive(Debug, Clone)]
enum WeightKind {
    Identity,
    /// `Σ̂(W_i)` and `M_Σ = Eₙ[Σ̂(W) b° b°']`.
    Fixed { sigma: Vec<f64>, m_sigma: DMatrix<f64> },
    ContinuouslyUpdated,
}

impl ObjectiveSpec {
    pub fn new(fit: Arc<FirstStageFit>, model: MomentModel, weights: WeightFunction) -> Result<Self> {
        if model.d_rho() != 1 {
            return Err(Error::Unsupported("vector residuals".into()));
        }
        let kind = match &weights {
            WeightFunction::Identity => WeightKind::Identity,
            WeightFunction::ContinuouslyUpdated => WeightKind::ContinuouslyUpdated,
            wf => {
                let mut sigma = Vec::with_capacity(fit.n());
                for w in fit.data.w().iter() {
                    sigma.push(model::weight_at(wf, &model, w, None)?[(0, 0)]);
                }
                let b = &fit.whitened_design;
                let mut scaled = b.clone();
                for (mut row, s) in scaled.row_iter_mut().zip(&sigma) {
                    row *= *s;
                }
                let mut m_sigma = scaled.tr_mul(b) / fit.n() as f64;
                linalg::symmetrize(&mut m_sigma);
                WeightKind::Fixed { sigma, m_sigma }
            }
        };
        Ok(Self { fit, model, weights, kind })
    }

    pub fn fit(&self) -> &Arc<FirstStageFit> {
        &self.fit
    }

    pub fn model(&self) -> &MomentModel {
        &self.model
    }

    pub fn weights(&self) -> &WeightFunction {
        &self.weights
    }

    pub fn is_continuously_updated(&self) -> bool {
        matches!(self.kind, WeightKind::ContinuouslyUpdated)
    }

    /// `Σ̂(W_i)` at the sample points when it does not depend on `h`.
    pub fn fixed_sigma(&self) -> Option<Vec<f64>> {
        match &self.kind {
            WeightKind::Identity => Some(vec![1.0; self.fit.n()]),
            WeightKind::Fixed { sigma, .. } => Some(sigma.clone()),
            WeightKind::ContinuouslyUpdated => None,
        }
    }

    /// Matrix `S` with `Qₙ = r̄' S r̄`, `r̄ = Eₙ[b° ρ]`, for `h`-free weights.
    pub fn quadratic_kernel(&self) -> Option<DMatrix<f64>> {
        let gi = &self.fit.whitened_gram_inv;
        match &self.kind {
            WeightKind::Identity => Some(gi.clone()),
            WeightKind::Fixed { m_sigma, .. } => {
                let mut s = gi * m_sigma * gi;
                linalg::symmetrize(&mut s);
                Some(s)
            }
            WeightKind::ContinuouslyUpdated => None,
        }
    }

    /// `Qₙ` from residuals at the sample points.
    pub fn objective_from_residuals(&self, residuals: &[f64]) -> f64 {
        let rbar = self.fit.moment_vector(residuals);
        let c = &self.fit.whitened_gram_inv * &rbar;
        match &self.kind {
            WeightKind::Identity => rbar.dot(&c),
            WeightKind::Fixed { m_sigma, .. } => c.dot(&(m_sigma * &c)),
            WeightKind::ContinuouslyUpdated => {
                let m = &self.fit.whitened_design * &c;
                let sq: Vec<f64> = residuals.iter().map(|r| r * r).collect();
                let v = self.fit.fitted(&sq);
                let total: f64 = m
                    .iter()
                    .zip(v.iter())
                    .map(|(mi, vi)| {
                        let s = if *vi > 0.0 { (1.0 / vi).clamp(WEIGHT_MIN, WEIGHT_MAX) } else { WEIGHT_MAX };
                        s * mi * mi
                    })
                    .sum();
                total / self.fit.n() as f64
            }
        }
    }

    /// `Qₙ` by evaluating `m̂` and `Σ̂` at every `W_i` through the public
    /// pointwise operations.
    pub fn objective_direct(&self, residuals: &[f64]) -> Result<f64> {
        let pilot = self.fit.second_moment_pilot(residuals);
        let coeffs = self.fit.project(residuals);
        let mut total = 0.0;
        for w in self.fit.data.w().iter() {
            let m = self.fit.whitened_basis_at(w)?.dot(&coeffs);
            let sigma = model::weight_at(&self.weights, &self.model, w, Some(&pilot))?[(0, 0)];
            total += sigma * m * m;
        }
        Ok(total / self.fit.n() as f64)
    }
}

/// `Qₙ(h)`.
pub fn quasi_objective(spec: &ObjectiveSpec, h: &FunctionCoefficients) -> Result<f64> {
    let rho = residuals_of(&spec.model, spec.fit.data.y(), &h_at_data(&spec.fit.data, h)?);
    Ok(spec.objective_from_residuals(&rho))
}

/// Largest `K ≥ 1` with `√K / √n ≤ σ_K K^{-α/d}`, scanning upwards from 1.
pub fn select_k(n: usize, alpha: f64, weights: &IllPosedness, d: usize) -> usize {
    let sn = (n as f64).sqrt();
    let df = d as f64;
    let mut best = 1;
    for k in 1..=n.max(1) {
        let kf = k as f64;
        if kf.sqrt() / sn <= weights.sigma(k, d) * kf.powf(-alpha / df) {
            best = k;
        } else {
            break;
        }
    }
    best
}
