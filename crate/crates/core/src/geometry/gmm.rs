use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;

use super::GeometryError;

/// On-disk form: plain nested arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PriorFile {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    covariances: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone)]
struct Component {
    log_weight: f64,
    mean: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    /// `log det Σ + d log 2π`
    log_norm: f64,
}

/// Mixture of Gaussians over pose vectors.
#[derive(Debug, Clone)]
pub struct GaussianMixturePrior {
    file: PriorFile,
    components: Vec<Component>,
}

impl GaussianMixturePrior {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, covariances: Vec<Vec<Vec<f64>>>) -> Result<Self, GeometryError> {
        Self::from_file(PriorFile {
            weights,
            means,
            covariances,
        })
    }

    /// One zero-mean component with covariance `std² I`.
    pub fn isotropic(dim: usize, std: f64) -> Result<Self, GeometryError> {
        let cov = (0..dim)
            .map(|i| (0..dim).map(|j| if i == j { std * std } else { 0.0 }).collect())
            .collect();
        Self::new(vec![1.0], vec![vec![0.0; dim]], vec![cov])
    }

    fn from_file(file: PriorFile) -> Result<Self, GeometryError> {
        let bad = |m: String| Err(GeometryError::InvalidPrior(m));
        let k = file.weights.len();
        if k == 0 || file.means.len() != k || file.covariances.len() != k {
            return bad(format!(
                "{} weights, {} means, {} covariances",
                k,
                file.means.len(),
                file.covariances.len()
            ));
        }
        if file.weights.iter().any(|&w| !(w >= 0.0)) || (file.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("weights must be non-negative and sum to 1".into());
        }
        let d = file.means[0].len();
        let mut components = Vec::with_capacity(k);
        for i in 0..k {
            let cov = &file.covariances[i];
            if file.means[i].len() != d || cov.len() != d || cov.iter().any(|r| r.len() != d) {
                return bad(format!("component {i} does not have dimension {d}"));
            }
            let m = DMatrix::from_fn(d, d, |r, c| cov[r][c]);
            if (&m - m.transpose()).amax() > 1e-9 * (1.0 + m.amax()) {
                return bad(format!("covariance {i} is not symmetric"));
            }
            let chol = m
                .cholesky()
                .ok_or_else(|| GeometryError::InvalidPrior(format!("covariance {i} is not positive definite")))?;
            let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            components.push(Component {
                log_weight: file.weights[i].ln(),
                mean: DVector::from_column_slice(&file.means[i]),
                chol,
                log_norm: log_det + d as f64 * (2.0 * PI).ln(),
            });
        }
        Ok(GaussianMixturePrior { file, components })
    }

    pub fn dim(&self) -> usize {
        self.file.means[0].len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.file.weights
    }

    /// Per-component `log g_i + log N(θ; μ_i, Σ_i)` and `Σ_i⁻¹(θ − μ_i)`.
    fn terms(&self, theta: &DVector<f64>) -> Vec<(f64, DVector<f64>)> {
        self.components
            .iter()
            .map(|c| {
                let diff = theta - &c.mean;
                let prec_diff = c.chol.solve(&diff);
                (c.log_weight - 0.5 * (diff.dot(&prec_diff) + c.log_norm), prec_diff)
            })
            .collect()
    }

    fn check_dim(&self, theta: &[f64]) -> Result<DVector<f64>, GeometryError> {
        if theta.len() != self.dim() {
            return Err(GeometryError::InvalidArgument(format!(
                "pose of dimension {} for a prior of dimension {}",
                theta.len(),
                self.dim()
            )));
        }
        Ok(DVector::from_column_slice(theta))
    }

    /// `−log Σ_i g_i N(θ; μ_i, Σ_i)`, stabilized by log-sum-exp.
    pub fn neg_log_likelihood(&self, theta: &[f64]) -> Result<f64, GeometryError> {
        Ok(self.value_and_grad(theta)?.0)
    }

    pub fn value_and_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>), GeometryError> {
        let t = self.check_dim(theta)?;
        let terms = self.terms(&t);
        let top = terms.iter().map(|(l, _)| *l).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = terms.iter().map(|(l, _)| (l - top).exp()).sum();
        let lse = top + z.ln();
        // gradient is the responsibility-weighted sum of Σ_i⁻¹(θ − μ_i)
        let mut grad = DVector::zeros(t.len());
        for (l, pd) in &terms {
            grad += pd * ((l - lse).exp());
        }
        Ok((-lse, grad.iter().copied().collect()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.file).expect("prior serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, GeometryError> {
        Self::from_file(serde_json::from_str(s).map_err(|e| GeometryError::Parse(e.to_string()))?)
    }

    pub fn load(path: &Path) -> Result<Self, GeometryError> {
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| GeometryError::Io(e.to_string()))?)
    }

    pub fn save(&self, path: &Path) -> Result<(), GeometryError> {
        std::fs::write(path, self.to_json()).map_err(|e| GeometryError::Io(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_component() -> GaussianMixturePrior {
        GaussianMixturePrior::new(
            vec![0.3, 0.7],
            vec![vec![1.0, 0.0], vec![-1.0, 0.5]],
            vec![
                vec![vec![0.5, 0.1], vec![0.1, 0.3]],
                vec![vec![0.2, 0.0], vec![0.0, 0.8]],
            ],
        )
        .unwrap()
    }

    #[test]
    fn unit_gaussian_at_its_mean() {
        for d in [1, 3, 24] {
            let p = GaussianMixturePrior::isotropic(d, 1.0).unwrap();
            let v = p.neg_log_likelihood(&vec![0.0; d]).unwrap();
            assert!((v - 0.5 * d as f64 * (2.0 * PI).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn decreases_along_a_line_toward_the_nearest_mean() {
        let p = two_component();
        let start = [3.0, -2.0];
        let target = [1.0, 0.0];
        let mut prev = f64::INFINITY;
        for k in 0..=50 {
            let s = k as f64 / 50.0;
            let x = [start[0] + s * (target[0] - start[0]), start[1] + s * (target[1] - start[1])];
            let v = p.neg_log_likelihood(&x).unwrap();
            assert!(v < prev, "step {k}: {v} !< {prev}");
            prev = v;
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let p = two_component();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let (_, g) = p.value_and_grad(&x).unwrap();
            let h = 1e-6;
            for k in 0..2 {
                let mut a = x;
                let mut b = x;
                a[k] += h;
                b[k] -= h;
                let fd = (p.neg_log_likelihood(&a).unwrap() - p.neg_log_likelihood(&b).unwrap()) / (2.0 * h);
                assert!((fd - g[k]).abs() < 1e-6 * (1.0 + fd.abs()), "{fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn far_from_every_mean_stays_finite() {
        let p = two_component();
        let (v, g) = p.value_and_grad(&[1e3, -1e3]).unwrap();
        assert!(v.is_finite() && g.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn validation_and_json_round_trip() {
        assert!(GaussianMixturePrior::new(vec![0.5], vec![vec![0.0]], vec![vec![vec![1.0]]]).is_err());
        assert!(GaussianMixturePrior::new(vec![1.0], vec![vec![0.0]], vec![vec![vec![-1.0]]]).is_err());
        let p = two_component();
        let back = GaussianMixturePrior::from_json(&p.to_json()).unwrap();
        assert_eq!(back.neg_log_likelihood(&[0.2, 0.3]).unwrap(), p.neg_log_likelihood(&[0.2, 0.3]).unwrap());
    }
}
