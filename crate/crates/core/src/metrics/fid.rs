use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::MetricsError;

/// Added to both covariance diagonals when either is numerically singular.
pub const FID_RIDGE: f64 = 1e-6;

/// Sample mean and unbiased covariance of a feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianStats {
    pub fn from_samples(samples: &[DVector<f64>]) -> Result<Self, MetricsError> {
        if samples.len() < 2 {
            return Err(MetricsError::InvalidArgument("need at least two samples per side".into()));
        }
        let d = samples[0].len();
        if samples.iter().any(|s| s.len() != d) {
            return Err(MetricsError::InvalidArgument("feature dimensions differ".into()));
        }
        let n = samples.len() as f64;
        let mean = samples.iter().fold(DVector::zeros(d), |acc, s| acc + s) / n;
        let mut cov = DMatrix::zeros(d, d);
        for s in samples {
            let c = s - &mean;
            cov += &c * c.transpose();
        }
        cov /= n - 1.0;
        Ok(GaussianStats { mean, cov })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidValue {
    pub value: f64,
    /// True when [`FID_RIDGE`] was added to the covariances.
    pub regularized: bool,
}

/// Square root of a symmetric positive semi-definite matrix; negative
/// eigenvalues from round-off are treated as zero.
pub fn sqrtm_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

fn is_singular(cov: &DMatrix<f64>) -> bool {
    let eig = SymmetricEigen::new((cov + cov.transpose()) * 0.5);
    let scale = eig.eigenvalues.amax().max(1e-300);
    eig.eigenvalues.min() <= 1e-12 * scale
}

/// Fréchet distance between two Gaussians:
/// `‖μ₁−μ₂‖² + Tr(Σ₁ + Σ₂ − 2 (Σ₁^½ Σ₂ Σ₁^½)^½)`.
pub fn fid_from_stats(a: &GaussianStats, b: &GaussianStats) -> Result<FidValue, MetricsError> {
    if a.mean.len() != b.mean.len() {
        return Err(MetricsError::InvalidArgument("feature dimensions differ".into()));
    }
    let d = a.mean.len();
    let regularized = is_singular(&a.cov) || is_singular(&b.cov);
    let ridge = DMatrix::identity(d, d) * if regularized { FID_RIDGE } else { 0.0 };
    let s1 = &a.cov + &ridge;
    let s2 = &b.cov + &ridge;
    let r1 = sqrtm_psd(&s1);
    let inner = &r1 * &s2 * &r1;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = SymmetricEigen::new(inner).eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
    let value = (&a.mean - &b.mean).norm_squared() + s1.trace() + s2.trace() - 2.0 * cross;
    Ok(FidValue { value, regularized })
}

pub fn fid(real: &[DVector<f64>], generated: &[DVector<f64>]) -> Result<FidValue, MetricsError> {
    fid_from_stats(&GaussianStats::from_samples(real)?, &GaussianStats::from_samples(generated)?)
}
