//! Orthonormal sieve bases on `[0,1]^d`, coefficient representation of
//! functions, design matrices and Gram matrices.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;
use crate::quadrature;

/// Largest admissible condition number of an empirical Gram matrix.
pub const MAX_CONDITION: f64 = 1e10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BasisFamily {
    /// `1, √2 cos(π k x), k = 1, 2, ...`, orthonormal under the uniform law.
    Cosine,
    /// Cubic B-splines with equispaced knots (lower degree when the size is
    /// below four). Not orthonormal; use [`reference_gram`].
    BSpline,
}

/// A basis family on `[0,1]^dim` truncated to its first `size` elements.
///
/// For `dim > 1` the elements are tensor products, enumerated by increasing
/// maximal per-coordinate frequency with ties broken lexicographically.
#[derive(Debug, Clone, PartialEq)]
pub struct SieveBasisSpec {
    family: BasisFamily,
    dim: usize,
    size: usize,
    /// Zero-based per-coordinate indices of each element.
    multi: Vec<Vec<usize>>,
    /// Per-coordinate count of univariate functions needed (B-spline knots depend on it).
    per_axis: usize,
}

impl SieveBasisSpec {
    pub fn new(family: BasisFamily, dim: usize, size: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("basis dimension must be positive".into()));
        }
        if size == 0 {
            return Err(Error::InvalidParameter("basis size must be positive".into()));
        }
        let multi = enumerate_multi_indices(dim, size);
        let per_axis = multi.iter().flatten().copied().max().unwrap_or(0) + 1;
        if family == BasisFamily::BSpline && dim > 1 && per_axis.pow(dim as u32) != size {
            return Err(Error::InvalidParameter(format!(
                "tensor B-spline basis needs size m^{dim}, got {size}"
            )));
        }
        Ok(Self { family, dim, size, multi, per_axis })
    }

    pub fn cosine(dim: usize, size: usize) -> Result<Self> {
        Self::new(BasisFamily::Cosine, dim, size)
    }

    pub fn family(&self) -> BasisFamily {
        self.family
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Zero-based multi-index of element `i` (1-based).
    pub fn multi_index(&self, i: usize) -> &[usize] {
        &self.multi[i - 1]
    }

    /// Same family and dimension, different truncation.
    pub fn with_size(&self, size: usize) -> Result<Self> {
        Self::new(self.family, self.dim, size)
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "point has {} coordinates, basis lives on [0,1]^{}",
                x.len(),
                self.dim
            )));
        }
        if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::OutsideDomain { point: x.to_vec() });
        }
        Ok(())
    }

    /// Univariate values `u[k] = f_k(t)` for `k < per_axis`.
    fn univariate(&self, t: f64, out: &mut [f64]) {
        match self.family {
            BasisFamily::Cosine => {
                out[0] = 1.0;
                for (k, o) in out.iter_mut().enumerate().skip(1) {
                    *o = SQRT_2 * (PI * k as f64 * t).cos();
                }
            }
            BasisFamily::BSpline => bspline_values(self.per_axis, t, out),
        }
    }

    /// All `size` basis values at `x` written into `out`. No domain checks.
    pub fn eval_all_unchecked(&self, x: &[f64], out: &mut [f64]) {
        if self.dim == 1 {
            self.univariate(x[0], &mut out[..self.size]);
            return;
        }
        let m = self.per_axis;
        let mut table = vec![0.0; m * self.dim];
        for (axis, &t) in x.iter().enumerate() {
            self.univariate(t, &mut table[axis * m..(axis + 1) * m]);
        }
        for (o, idx) in out.iter_mut().zip(&self.multi) {
            *o = idx.iter().enumerate().map(|(axis, &k)| table[axis * m + k]).product();
        }
    }

    /// All `size` basis values at `x`.
    pub fn eval_all(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        let mut out = vec![0.0; self.size];
        self.eval_all_unchecked(x, &mut out);
        Ok(out)
    }
}

/// Multi-indices in `N^dim` ordered by max-coordinate, then lexicographically;
/// the first `size` of them.
fn enumerate_multi_indices(dim: usize, size: usize) -> Vec<Vec<usize>> {
    if dim == 1 {
        return (0..size).map(|k| vec![k]).collect();
    }
    let mut m = 1usize;
    while m.pow(dim as u32) < size {
        m += 1;
    }
    let mut all = Vec::with_capacity(m.pow(dim as u32));
    let mut cur = vec![0usize; dim];
    loop {
        all.push(cur.clone());
        let mut axis = dim;
        loop {
            if axis == 0 {
                all.sort_by(|a, b| {
                    let ma = a.iter().max().unwrap();
                    let mb = b.iter().max().unwrap();
                    ma.cmp(mb).then_with(|| a.cmp(b))
                });
                all.truncate(size);
                return all;
            }
            axis -= 1;
            cur[axis] += 1;
            if cur[axis] < m {
                break;
            }
            cur[axis] = 0;
        }
    }
}

/// Values of the `m` B-splines of degree `min(3, m-1)` with an open uniform
/// knot vector on `[0,1]`.
fn bspline_values(m: usize, t: f64, out: &mut [f64]) {
    let p = (m - 1).min(3);
    let knots = bspline_knots(m, p);
    // zeroth degree
    let mut vals = vec![0.0; knots.len() - 1];
    let last = knots.len() - p - 2;
    for j in 0..knots.len() - 1 {
        let inside = t >= knots[j] && t < knots[j + 1];
        // close the final nonempty interval on the right
        let right_end = t == 1.0 && j == last;
        if (inside || right_end) && knots[j] < knots[j + 1] {
            vals[j] = 1.0;
        }
    }
    for deg in 1..=p {
        for j in 0..knots.len() - 1 - deg {
            let mut v = 0.0;
            let d1 = knots[j + deg] - knots[j];
            if d1 > 0.0 {
                v += (t - knots[j]) / d1 * vals[j];
            }
            let d2 = knots[j + deg + 1] - knots[j + 1];
            if d2 > 0.0 {
                v += (knots[j + deg + 1] - t) / d2 * vals[j + 1];
            }
            vals[j] = v;
        }
    }
    out[..m].copy_from_slice(&vals[..m]);
}

fn bspline_knots(m: usize, p: usize) -> Vec<f64> {
    let interior = m - p - 1;
    let mut knots = vec![0.0; p + 1];
    for j in 1..=interior {
        knots.push(j as f64 / (interior + 1) as f64);
    }
    knots.extend(std::iter::repeat_n(1.0, p + 1));
    knots
}

/// `e_i(x)` for the 1-based index `i`.
pub fn eval_basis(spec: &SieveBasisSpec, i: usize, x: &[f64]) -> Result<f64> {
    if i == 0 || i > spec.size {
        return Err(Error::IndexOutOfRange { index: i, size: spec.size });
    }
    spec.check_point(x)?;
    let m = spec.per_axis;
    let mut buf = vec![0.0; m];
    let mut v = 1.0;
    for (axis, &k) in spec.multi_index(i).iter().enumerate() {
        spec.univariate(x[axis], &mut buf);
        v *= buf[k];
    }
    Ok(v)
}

/// A function `h = Σ coeffs_i e_i` on a fixed basis.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionCoefficients {
    basis: SieveBasisSpec,
    coeffs: Vec<f64>,
}

impl FunctionCoefficients {
    pub fn new(basis: SieveBasisSpec, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != basis.size() {
            return Err(Error::DimensionMismatch(format!(
                "{} coefficients for a basis of size {}",
                coeffs.len(),
                basis.size()
            )));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter("coefficients must be finite".into()));
        }
        Ok(Self { basis, coeffs })
    }

    pub fn zero(basis: SieveBasisSpec) -> Self {
        let coeffs = vec![0.0; basis.size()];
        Self { basis, coeffs }
    }

    /// The basis element `e_i` (1-based).
    pub fn unit(basis: SieveBasisSpec, i: usize) -> Result<Self> {
        if i == 0 || i > basis.size() {
            return Err(Error::IndexOutOfRange { index: i, size: basis.size() });
        }
        let mut f = Self::zero(basis);
        f.coeffs[i - 1] = 1.0;
        Ok(f)
    }

    pub fn basis(&self) -> &SieveBasisSpec {
        &self.basis
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    /// Re-express on a larger or smaller truncation of the same family,
    /// padding with zeros or dropping trailing coefficients.
    pub fn resized(&self, size: usize) -> Result<Self> {
        let basis = self.basis.with_size(size)?;
        let mut coeffs = vec![0.0; size];
        let m = size.min(self.coeffs.len());
        coeffs[..m].copy_from_slice(&self.coeffs[..m]);
        Ok(Self { basis, coeffs })
    }

    /// Squared coefficient-space L² norm.
    pub fn norm_sq(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum()
    }
}

/// `h(x) = Σ_i coeffs_i e_i(x)`.
pub fn eval_function(h: &FunctionCoefficients, x: &[f64]) -> Result<f64> {
    let vals = h.basis.eval_all(x)?;
    Ok(linalg::dot(&vals, &h.coeffs))
}

/// `n` points in `[0,1]^dim`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Points {
    dim: usize,
    coords: Vec<f64>,
}

impl Points {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 || coords.len() % dim != 0 {
            return Err(Error::DimensionMismatch(format!(
                "{} coordinates do not split into points of dimension {dim}",
                coords.len()
            )));
        }
        Ok(Self { dim, coords })
    }

    /// One-dimensional points.
    pub fn scalar(values: Vec<f64>) -> Self {
        Self { dim: 1, coords: values }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.coords[j * self.dim..(j + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }
}

/// `n × size` matrix with entry `(j, i) = e_i(point_j)`.
pub fn design_matrix(spec: &SieveBasisSpec, points: &Points) -> Result<DMatrix<f64>> {
    if points.is_empty() {
        return Err(Error::Empty("design points"));
    }
    let n = points.len();
    let k = spec.size();
    let mut row = vec![0.0; k];
    let mut out = DMatrix::zeros(n, k);
    for (j, x) in points.iter().enumerate() {
        spec.check_point(x)?;
        spec.eval_all_unchecked(x, &mut row);
        for (i, v) in row.iter().enumerate() {
            out[(j, i)] = *v;
        }
    }
    Ok(out)
}

/// Population Gram `E[b b']` of a basis under the uniform law on the cube.
/// Identity for the cosine family; quadrature (exact for piecewise
/// polynomials) for B-splines.
pub fn reference_gram(spec: &SieveBasisSpec) -> DMatrix<f64> {
    let k = spec.size();
    match spec.family() {
        BasisFamily::Cosine => DMatrix::identity(k, k),
        BasisFamily::BSpline => {
            let m = spec.per_axis;
            let p = (m - 1).min(3);
            let knots = bspline_knots(m, p);
            let gl = quadrature::gauss_legendre(p + 1);
            let mut g1 = DMatrix::<f64>::zeros(m, m);
            let mut vals = vec![0.0; m];
            for w in knots.windows(2) {
                let (a, b) = (w[0], w[1]);
                if b <= a {
                    continue;
                }
                for (x, wt) in gl.nodes.iter().zip(&gl.weights) {
                    let t = a + 0.5 * (b - a) * (x + 1.0);
                    bspline_values(m, t, &mut vals);
                    let s = 0.5 * (b - a) * wt;
                    for r in 0..m {
                        for c in 0..m {
                            g1[(r, c)] += s * vals[r] * vals[c];
                        }
                    }
                }
            }
            let mut g = DMatrix::zeros(k, k);
            for r in 0..k {
                for c in 0..k {
                    g[(r, c)] = spec.multi[r]
                        .iter()
                        .zip(&spec.multi[c])
                        .map(|(&a, &b)| g1[(a, b)])
                        .product();
                }
            }
            g
        }
    }
}

/// Empirical, reference and whitened Gram matrices of a design.
#[derive(Debug, Clone)]
pub struct GramMatrices {
    /// Reference (population) Gram `G`.
    pub g: DMatrix<f64>,
    /// Empirical Gram `Ĝ = design'design / n`.
    pub g_hat: DMatrix<f64>,
    /// `G^{-1/2} Ĝ G^{-1/2}`.
    pub g_whitened: DMatrix<f64>,
    /// `G^{-1/2}`.
    pub whitener: DMatrix<f64>,
    /// Condition number of `Ĝ`.
    pub cond: f64,
}

/// Gram matrices of an `n × K` design against a reference Gram
/// (`None` = identity).
pub fn gram_matrices(design: &DMatrix<f64>, reference: Option<&DMatrix<f64>>) -> Result<GramMatrices> {
    let (n, k) = design.shape();
    if n == 0 || k == 0 {
        return Err(Error::Empty("design matrix"));
    }
    if n < k {
        return Err(Error::TooFewObservations { n, k });
    }
    let mut g_hat = design.tr_mul(design) / n as f64;
    linalg::symmetrize(&mut g_hat);
    let cond = linalg::condition_number(&g_hat);
    if !(cond <= MAX_CONDITION) {
        return Err(Error::SingularDesign { cond, limit: MAX_CONDITION });
    }
    let g = match reference {
        Some(r) => {
            if r.shape() != (k, k) {
                return Err(Error::DimensionMismatch(format!(
                    "reference Gram is {:?}, design has {k} columns",
                    r.shape()
                )));
            }
            r.clone()
        }
        None => DMatrix::identity(k, k),
    };
    let whitener = linalg::sym_inv_sqrt(&g);
    let mut g_whitened = &whitener * &g_hat * &whitener;
    linalg::symmetrize(&mut g_whitened);
    Ok(GramMatrices { g, g_hat, g_whitened, whitener, cond })
}
