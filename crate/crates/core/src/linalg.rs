//! Small dense linear-algebra helpers shared by the Gaussian machinery.

use nalgebra::{DMatrix, DVector};
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Diagonal jitter added to fitted covariances before they are inverted.
pub const COV_FLOOR: f64 = 1e-6;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn add_diagonal(m: &DMatrix<f64>, value: f64) -> DMatrix<f64> {
    let mut out = m.clone();
    for i in 0..out.nrows().min(out.ncols()) {
        out[(i, i)] += value;
    }
    out
}

/// Lower Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky_lower(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if !m.iter().all(|v| v.is_finite()) {
        return None;
    }
    nalgebra::Cholesky::new(symmetrize(m)).map(|c| c.l())
}

/// Inverse of a symmetric positive-definite matrix.
pub fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    nalgebra::Cholesky::new(symmetrize(m)).map(|c| symmetrize(&c.inverse()))
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Projects a symmetric matrix onto the PSD cone by clipping eigenvalues at zero.
pub fn psd_projection(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetrize(m).symmetric_eigen();
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    symmetrize(&(&eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose()))
}

/// A square root `S` with `S Sᵀ = m` for symmetric PSD `m` (possibly singular).
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.iter().all(|v| *v == 0.0) {
        return DMatrix::zeros(m.nrows(), m.ncols());
    }
    if let Some(l) = cholesky_lower(m) {
        return l;
    }
    let eig = symmetrize(m).symmetric_eigen();
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots)
}

pub fn standard_normal<R: rand::Rng + ?Sized>(dim: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(dim, (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Draws `mean + sqrt · ξ`, `ξ ~ N(0, I)`.
pub fn sample_gaussian<R: rand::Rng + ?Sized>(
    mean: &DVector<f64>,
    sqrt: &DMatrix<f64>,
    rng: &mut R,
) -> DVector<f64> {
    mean + sqrt * standard_normal(sqrt.ncols(), rng)
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Cached factorization of a Gaussian covariance for repeated density evaluation.
#[derive(Debug, Clone)]
pub struct GaussianFactor {
    chol: DMatrix<f64>,
    log_det: f64,
}

impl GaussianFactor {
    pub fn new(cov: &DMatrix<f64>) -> Option<Self> {
        let chol = cholesky_lower(cov)?;
        let log_det = 2.0 * chol.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        log_det.is_finite().then_some(Self { chol, log_det })
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Mahalanobis norm `(x-μ)ᵀ Σ⁻¹ (x-μ)` of a residual.
    pub fn mahalanobis(&self, residual: &DVector<f64>) -> f64 {
        let w = self
            .chol
            .solve_lower_triangular(residual)
            .expect("cholesky factor has a nonzero diagonal");
        w.norm_squared()
    }

    pub fn log_pdf_residual(&self, residual: &DVector<f64>) -> f64 {
        let d = residual.len() as f64;
        -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + self.log_det + self.mahalanobis(residual))
    }

    pub fn precision(&self) -> DMatrix<f64> {
        let n = self.chol.nrows();
        let linv = self
            .chol
            .solve_lower_triangular(&DMatrix::identity(n, n))
            .expect("cholesky factor has a nonzero diagonal");
        symmetrize(&(linv.transpose() * linv))
    }
}

/// Affine least-squares fit `y ≈ W z + b` with a ridge penalty on `W`.
#[derive(Debug, Clone)]
pub struct AffineFit {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
    /// Maximum-likelihood residual covariance (divisor `n`).
    pub residual_cov: DMatrix<f64>,
}

/// Ridge regression of `outputs` on `inputs`, centered so the in-sample
/// residual mean is exactly zero. Falls back to a pseudo-inverse when the
/// regularized Gram matrix is singular.
pub fn affine_regression(
    inputs: &[DVector<f64>],
    outputs: &[DVector<f64>],
    ridge: f64,
) -> Result<AffineFit> {
    let n = inputs.len();
    if n == 0 || n != outputs.len() {
        return Err(Error::InsufficientData(format!(
            "regression needs matching nonempty inputs/outputs, got {} and {}",
            n,
            outputs.len()
        )));
    }
    let din = inputs[0].len();
    let dout = outputs[0].len();
    let nf = n as f64;
    let zmean = inputs.iter().fold(DVector::zeros(din), |acc, z| acc + z) / nf;
    let ymean = outputs.iter().fold(DVector::zeros(dout), |acc, y| acc + y) / nf;
    let mut szz = DMatrix::zeros(din, din);
    let mut syz = DMatrix::zeros(dout, din);
    for (z, y) in inputs.iter().zip(outputs) {
        let dz = z - &zmean;
        let dy = y - &ymean;
        szz += &dz * dz.transpose();
        syz += &dy * dz.transpose();
    }
    szz /= nf;
    syz /= nf;
    let gram = add_diagonal(&symmetrize(&szz), ridge);
    let weight = match nalgebra::Cholesky::new(gram.clone()) {
        Some(c) => c.solve(&syz.transpose()).transpose(),
        None => {
            let pinv = gram
                .pseudo_inverse(1e-12)
                .map_err(|e| Error::InvalidArgument(format!("regression pseudo-inverse: {e}")))?;
            &syz * pinv
        }
    };
    let bias = &ymean - &weight * &zmean;
    let mut residual_cov = DMatrix::zeros(dout, dout);
    for (z, y) in inputs.iter().zip(outputs) {
        let r = y - &weight * z - &bias;
        residual_cov += &r * r.transpose();
    }
    residual_cov /= nf;
    Ok(AffineFit {
        weight,
        bias,
        residual_cov: symmetrize(&residual_cov),
    })
}

pub fn mean_and_cov(points: &[DVector<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let n = points.len() as f64;
    let d = points[0].len();
    let mean = points.iter().fold(DVector::zeros(d), |acc, p| acc + p) / n;
    let mut cov = DMatrix::zeros(d, d);
    for p in points {
        let dp = p - &mean;
        cov += &dp * dp.transpose();
    }
    (mean, symmetrize(&(cov / n)))
}
