//! Truncated Gaussian-series priors and the norm calculus on coefficient
//! sequences.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::basis::{FunctionCoefficients, SieveBasisSpec};
use crate::error::{Error, Result};

/// Truncation level of the prior series for first-stage dimension `k`.
pub fn default_truncation(k: usize) -> usize {
    (4 * k).max(64)
}

/// `G = scale · Σ_{i ≤ J} √λ_i Z_i e_i` with `λ_i = i^{-(1 + 2α/d)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSeriesPrior {
    basis: SieveBasisSpec,
    alpha: f64,
    lambda: Vec<f64>,
    scale: f64,
}

impl GaussianSeriesPrior {
    pub fn new(basis: SieveBasisSpec, alpha: f64, scale: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!("regularity must be positive, got {alpha}")));
        }
        if !(scale >= 0.0 && scale.is_finite()) {
            return Err(Error::InvalidParameter(format!("prior scale must be nonnegative, got {scale}")));
        }
        let exponent = 1.0 + 2.0 * alpha / basis.dim() as f64;
        let lambda = (1..=basis.size()).map(|i| (i as f64).powf(-exponent)).collect();
        Ok(Self { basis, alpha, lambda, scale })
    }

    pub fn basis(&self) -> &SieveBasisSpec {
        &self.basis
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn truncation(&self) -> usize {
        self.basis.size()
    }

    /// Prior standard deviation of each coefficient, `scale·√λ_i`.
    pub fn coefficient_sd(&self) -> Vec<f64> {
        self.lambda.iter().map(|l| self.scale * l.sqrt()).collect()
    }

    /// Prior variance of each coefficient, `scale²·λ_i`.
    pub fn coefficient_variance(&self) -> Vec<f64> {
        self.lambda.iter().map(|l| self.scale * self.scale * l).collect()
    }

    /// Map standardized coordinates `z` to coefficients `scale·√λ_i·z_i`.
    pub fn coefficients_from_standard(&self, z: &[f64], out: &mut [f64]) {
        for ((o, zi), l) in out.iter_mut().zip(z).zip(&self.lambda) {
            *o = self.scale * l.sqrt() * zi;
        }
    }
}

/// Prior of regularity `alpha` on `basis` (truncation `J = basis.size()`),
/// shrunk by `1/(√(log n)·√K)`.
pub fn scaled_prior(alpha: f64, k: usize, n: usize, basis: SieveBasisSpec) -> Result<GaussianSeriesPrior> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("prior scaling needs n >= 2, got {n}")));
    }
    if k == 0 {
        return Err(Error::InvalidParameter("first-stage dimension must be positive".into()));
    }
    let scale = 1.0 / ((n as f64).ln().sqrt() * (k as f64).sqrt());
    GaussianSeriesPrior::new(basis, alpha, scale)
}

/// One draw from the prior.
pub fn sample_prior<R: Rng + ?Sized>(prior: &GaussianSeriesPrior, rng: &mut R) -> FunctionCoefficients {
    let coeffs = prior
        .lambda
        .iter()
        .map(|l| {
            let z: f64 = rng.sample(StandardNormal);
            prior.scale * l.sqrt() * z
        })
        .collect();
    FunctionCoefficients::new(prior.basis.clone(), coeffs).expect("finite prior draw")
}

fn weighted_norm(h: &FunctionCoefficients, weight: impl Fn(f64) -> f64) -> f64 {
    h.coeffs()
        .iter()
        .enumerate()
        .map(|(i, c)| weight((i + 1) as f64) * c * c)
        .sum::<f64>()
        .sqrt()
}

/// `(Σ_i i^{2β/d} c_i²)^{1/2}`.
pub fn sobolev_norm(h: &FunctionCoefficients, beta: f64) -> f64 {
    let d = h.basis().dim() as f64;
    weighted_norm(h, |i| i.powf(2.0 * beta / d))
}

/// `(Σ_i i^{1+2α/d} c_i²)^{1/2}`, the norm of the prior's reproducing kernel
/// Hilbert space (before scaling).
pub fn rkhs_norm(h: &FunctionCoefficients, alpha: f64) -> f64 {
    let d = h.basis().dim() as f64;
    weighted_norm(h, |i| i.powf(1.0 + 2.0 * alpha / d))
}

/// Decay profile of the operator's effective singular values.
#[derive(Debug, Clone, PartialEq)]
pub enum IllPosedness {
    /// `σ_i = i^{-ζ/d}`.
    Mild { zeta: f64 },
    /// `σ_i = exp(-R i^{ζ/d})`.
    Severe { r: f64, zeta: f64 },
    /// Explicit sequence; indices past its end count as zero.
    Custom(Vec<f64>),
}

impl IllPosedness {
    /// `σ_i` for the 1-based index `i` on `[0,1]^d`.
    pub fn sigma(&self, i: usize, d: usize) -> f64 {
        let (i, d) = (i as f64, d as f64);
        match self {
            IllPosedness::Mild { zeta } => i.powf(-zeta / d),
            IllPosedness::Severe { r, zeta } => (-r * i.powf(zeta / d)).exp(),
            IllPosedness::Custom(s) => s.get(i as usize - 1).copied().unwrap_or(0.0),
        }
    }
}

/// Weights `σ_1 ≥ σ_2 ≥ ... ≥ 0` defining a weak norm.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakNormWeights {
    sigma: Vec<f64>,
    kind: IllPosedness,
}

impl WeakNormWeights {
    pub fn new(kind: IllPosedness, len: usize, d: usize) -> Result<Self> {
        match &kind {
            IllPosedness::Mild { zeta } if *zeta < 0.0 => {
                return Err(Error::InvalidParameter("ζ must be nonnegative".into()))
            }
            IllPosedness::Severe { r, zeta } if *r <= 0.0 || *zeta <= 0.0 => {
                return Err(Error::InvalidParameter("severe decay needs R > 0, ζ > 0".into()))
            }
            IllPosedness::Custom(s) => {
                if s.iter().any(|v| *v < 0.0 || !v.is_finite()) || s.windows(2).any(|w| w[1] > w[0]) {
                    return Err(Error::InvalidParameter(
                        "custom weights must be finite, nonnegative and nonincreasing".into(),
                    ));
                }
            }
            _ => {}
        }
        let sigma = (1..=len).map(|i| kind.sigma(i, d)).collect();
        Ok(Self { sigma, kind })
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn kind(&self) -> &IllPosedness {
        &self.kind
    }
}

/// `(Σ_i σ_i² c_i²)^{1/2}`.
pub fn weak_norm(h: &FunctionCoefficients, w: &WeakNormWeights) -> Result<f64> {
    if w.sigma.len() < h.coeffs().len() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} coefficients",
            w.sigma.len(),
            h.coeffs().len()
        )));
    }
    Ok(h.coeffs().iter().zip(&w.sigma).map(|(c, s)| s * s * c * c).sum::<f64>().sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cos(k: usize) -> SieveBasisSpec {
        SieveBasisSpec::cosine(1, k).unwrap()
    }

    #[test]
    fn zero_scale_gives_zero_function() {
        let p = GaussianSeriesPrior::new(cos(10), 1.0, 0.0).unwrap();
        let h = sample_prior(&p, &mut crate::rng::seeded(1));
        assert!(h.coeffs().iter().all(|&c| c == 0.0));
    }

    #[test]
    fn second_coefficient_sd() {
        let p = GaussianSeriesPrior::new(cos(4), 1.0, 2.0).unwrap();
        assert!((p.coefficient_sd()[1] - 2.0 * 0.353_553_390_593_273_8).abs() < 1e-12);
        assert!(p.lambda().windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn scaled_prior_arithmetic() {
        let p1 = scaled_prior(1.0, 1, 3, cos(8)).unwrap();
        assert!((p1.scale() - 1.0 / 3f64.ln().sqrt()).abs() < 1e-12);
        assert!((p1.scale() - 0.954_06).abs() < 1e-4);
        let p4 = scaled_prior(1.0, 4, 3, cos(8)).unwrap();
        assert!((p4.scale() - 0.477_03).abs() < 1e-4);
        assert!((p4.scale() / p1.scale() - 0.5).abs() < 1e-14);
        let p8 = scaled_prior(1.0, 8, 3, cos(8)).unwrap();
        assert!((p8.scale() / p4.scale() - 1.0 / 2f64.sqrt()).abs() < 1e-14);
        assert!(scaled_prior(1.0, 1, 1, cos(8)).is_err());
        assert!(scaled_prior(1.0, 0, 10, cos(8)).is_err());
    }

    #[test]
    fn norms_on_unit_elements() {
        let e1 = FunctionCoefficients::unit(cos(4), 1).unwrap();
        let e2 = FunctionCoefficients::unit(cos(4), 2).unwrap();
        for beta in [0.0, 0.5, 1.0, 3.0] {
            assert_eq!(sobolev_norm(&e1, beta), 1.0);
        }
        assert!((sobolev_norm(&e2, 1.0) - 2.0).abs() < 1e-15);
        assert_eq!(rkhs_norm(&e1, 1.0), 1.0);
        assert!((rkhs_norm(&e2, 1.0) - 8f64.sqrt()).abs() < 1e-15);

        let ones = WeakNormWeights::new(IllPosedness::Mild { zeta: 0.0 }, 4, 1).unwrap();
        let h = FunctionCoefficients::new(cos(4), vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        assert!((weak_norm(&h, &ones).unwrap() - h.norm_sq().sqrt()).abs() < 1e-15);
        let mild = WeakNormWeights::new(IllPosedness::Mild { zeta: 1.0 }, 4, 1).unwrap();
        assert!((weak_norm(&e2, &mild).unwrap() - 0.5).abs() < 1e-15);
        let severe = WeakNormWeights::new(IllPosedness::Severe { r: 1.0, zeta: 1.0 }, 4, 1).unwrap();
        assert!((weak_norm(&e2, &severe).unwrap() - (-2f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn weak_weight_validation() {
        assert!(WeakNormWeights::new(IllPosedness::Custom(vec![1.0, 2.0]), 2, 1).is_err());
        assert!(WeakNormWeights::new(IllPosedness::Severe { r: 0.0, zeta: 1.0 }, 2, 1).is_err());
        let w = WeakNormWeights::new(IllPosedness::Custom(vec![1.0, 0.5]), 3, 1).unwrap();
        assert_eq!(w.sigma(), &[1.0, 0.5, 0.0]);
        let short = WeakNormWeights::new(IllPosedness::Mild { zeta: 1.0 }, 2, 1).unwrap();
        assert!(weak_norm(&FunctionCoefficients::zero(cos(3)), &short).is_err());
    }

    fn naive_sobolev(c: &[f64], beta: f64) -> f64 {
        let mut s = 0.0;
        for i in 0..c.len() {
            s += ((i + 1) as f64).powf(2.0 * beta) * c[i] * c[i];
        }
        s.sqrt()
    }

    proptest! {
        #[test]
        fn sobolev_matches_loop(c in proptest::collection::vec(-5.0f64..5.0, 1..30), beta in 0.0f64..4.0) {
            let h = FunctionCoefficients::new(cos(c.len()), c.clone()).unwrap();
            let got = sobolev_norm(&h, beta);
            let want = naive_sobolev(&c, beta);
            prop_assert!((got - want).abs() <= 1e-12 * want.max(1.0));
        }

        #[test]
        fn rkhs_dominates_sobolev(c in proptest::collection::vec(-5.0f64..5.0, 1..30), alpha in 0.1f64..4.0) {
            let h = FunctionCoefficients::new(cos(c.len()), c).unwrap();
            prop_assert!(rkhs_norm(&h, alpha) >= sobolev_norm(&h, alpha) - 1e-12);
        }

        #[test]
        fn sobolev_monotone_in_beta(c in proptest::collection::vec(-5.0f64..5.0, 1..30), b1 in 0.0f64..3.0, db in 0.0f64..3.0) {
            let h = FunctionCoefficients::new(cos(c.len()), c).unwrap();
            prop_assert!(sobolev_norm(&h, b1) <= sobolev_norm(&h, b1 + db) * (1.0 + 1e-12));
        }

        #[test]
        fn weak_below_l2(c in proptest::collection::vec(-5.0f64..5.0, 1..30), zeta in 0.0f64..3.0) {
            let h = FunctionCoefficients::new(cos(c.len()), c.clone()).unwrap();
            let w = WeakNormWeights::new(IllPosedness::Mild { zeta }, c.len(), 1).unwrap();
            prop_assert!(weak_norm(&h, &w).unwrap() <= h.norm_sq().sqrt() * (1.0 + 1e-12));
        }
    }
}
