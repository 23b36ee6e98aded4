use serde::{Deserialize, Serialize};

use super::{GaussianMixturePrior, GeometryError, PoseParams, SkinnedTemplate, TriMesh, DEFAULT_SIGMA};
use crate::autodiff::{Tape, Tensor};
use crate::lie::Vec3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub lambda_j: f64,
    pub lambda_r: f64,
    /// Geman–McClure scale for joint residuals, meters.
    pub sigma: f64,
    /// Per-joint confidences; all ones when absent.
    pub confidences: Option<Vec<f64>>,
    pub outer_iters: usize,
    pub inner_iters: usize,
    /// Outer iterations that run on joints and prior only.
    pub surface_delay: usize,
    /// Smoothing of the unsquared surface distance `sqrt(d² + ε²) − ε`.
    pub surface_eps: f64,
    /// Stop an inner loop once the gradient norm falls below this.
    pub grad_tol: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            lambda_j: 2.0,
            lambda_r: 0.2,
            sigma: DEFAULT_SIGMA,
            confidences: None,
            outer_iters: 8,
            inner_iters: 150,
            surface_delay: 2,
            surface_eps: 1e-3,
            grad_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: PoseParams,
    /// Objective after every accepted step, per outer iteration.
    pub history: Vec<Vec<f64>>,
    /// Set when a line search ran out of halvings away from a stationary
    /// point; `params` is then the best point found.
    pub warning: Option<String>,
    /// Largest distance between fitted and target joints.
    pub max_joint_error: f64,
}

/// Objective terms at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitTerms {
    pub joints: f64,
    pub surface: f64,
    pub prior: f64,
}

impl FitTerms {
    pub fn total(&self) -> f64 {
        self.joints + self.surface + self.prior
    }
}

struct Objective<'a> {
    template: &'a SkinnedTemplate,
    prior: &'a GaussianMixturePrior,
    target: &'a TriMesh,
    target_joints: Tensor,
    weights: Tensor,
    config: &'a FitConfig,
}

impl Objective<'_> {
    /// Weighted terms and the gradient of their sum. `nearest[s]` is the
    /// template vertex matched to target vertex `s`; `None` drops the
    /// surface term.
    fn eval(&self, x: &[f64], nearest: Option<&[usize]>) -> Result<(FitTerms, Vec<f64>), GeometryError> {
        let cfg = self.config;
        let nj = self.template.joint_count();
        let mut tape = Tape::new();
        let xv = tape.variable(Tensor::row(x.to_vec()));
        let (verts, joints) = self.template.pose_on_tape(&mut tape, xv)?;

        let tj = tape.constant(self.target_joints.clone());
        let res = tape.sub(joints, tj)?;
        let sq = tape.square(res);
        let ss = tape.sum_cols(sq);
        let den = tape.add_scalar(ss, cfg.sigma * cfg.sigma);
        let inv = tape.recip(den);
        let rho = tape.mul(ss, inv)?;
        let w = tape.constant(self.weights.clone());
        let jsum = tape.matmul(w, rho)?;
        let jterm = tape.scale(jsum, cfg.lambda_j);
        let mut total = jterm;

        let mut surface = 0.0;
        if let Some(nn) = nearest {
            let s = nn.len();
            let matched = tape.gather_rows(verts, nn)?;
            let tv: Vec<f64> = self.target.vertices.iter().flat_map(|v| v.iter().copied()).collect();
            let tv = tape.constant(Tensor::matrix(s, 3, tv)?);
            let d = tape.sub(matched, tv)?;
            let eps = tape.constant(Tensor::full(&[s, 1], cfg.surface_eps));
            let padded = tape.concat_cols(&[d, eps])?;
            let norms = tape.l2_norm_groups(padded, 4)?;
            let sum = tape.sum(norms);
            let sterm = tape.add_scalar(sum, -cfg.surface_eps * s as f64);
            surface = tape.value(sterm).item();
            total = tape.add(total, sterm)?;
        }

        let mut prior = 0.0;
        if cfg.lambda_r != 0.0 {
            let body = tape.slice_cols(xv, 3, 3 * nj)?;
            let (v, g) = self.prior.value_and_grad(tape.value(body).data())?;
            let nll = tape.scalar_fn(body, v, Tensor::row(g))?;
            let pterm = tape.scale(nll, cfg.lambda_r);
            prior = tape.value(pterm).item();
            total = tape.add(total, pterm)?;
        }

        let terms = FitTerms {
            joints: tape.value(jterm).item(),
            surface,
            prior,
        };
        let grads = tape.backward(total);
        Ok((terms, grads.get_or_zeros(&tape, xv).into_data()))
    }
}

/// Index of the nearest `from` vertex for every `to` vertex.
fn nearest_vertices(from: &[Vec3], to: &[Vec3]) -> Vec<usize> {
    to.iter()
        .map(|p| {
            from.iter()
                .enumerate()
                .map(|(i, q)| (i, (q - p).norm_squared()))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(i, _)| i)
                .expect("template has vertices")
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fits shape, per-joint rotations and translation of `template` to a
/// target surface and target joints (in the template's joint order).
///
/// Each outer iteration fixes the target-to-template nearest-vertex
/// matches and runs gradient descent with Barzilai–Borwein steps and
/// Armijo backtracking. The first `surface_delay` outer iterations fit
/// joints and prior only.
pub fn fit_skinned_template(
    template: &SkinnedTemplate,
    prior: &GaussianMixturePrior,
    target: &TriMesh,
    target_joints: &[Vec3],
    config: &FitConfig,
) -> Result<FitResult, GeometryError> {
    let nj = template.joint_count();
    if target_joints.len() != nj {
        return Err(GeometryError::InvalidArgument(format!(
            "{} target joints for a template with {nj}",
            target_joints.len()
        )));
    }
    if prior.dim() != 3 * (nj - 1) {
        return Err(GeometryError::InvalidArgument(format!(
            "prior dimension {} does not match {} body rotations",
            prior.dim(),
            nj - 1
        )));
    }
    if target.vertices.is_empty() {
        return Err(GeometryError::InvalidMesh("target mesh has no vertices".into()));
    }
    if !(config.sigma > 0.0) || !(config.surface_eps > 0.0) {
        return Err(GeometryError::InvalidArgument("sigma and surface_eps must be positive".into()));
    }
    let weights = match &config.confidences {
        Some(c) if c.len() != nj => {
            return Err(GeometryError::InvalidArgument(format!("{} confidences for {nj} joints", c.len())))
        }
        Some(c) => c.clone(),
        None => vec![1.0; nj],
    };
    let objective = Objective {
        template,
        prior,
        target,
        target_joints: Tensor::matrix(nj, 3, target_joints.iter().flat_map(|v| v.iter().copied()).collect())?,
        weights: Tensor::row(weights),
        config,
    };

    let mut params = template.rest_params();
    params.translation = target_joints[0] - template.regress_joints(&template.vertices)[0];
    let mut x = params.to_flat();
    let mut history = Vec::with_capacity(config.outer_iters);
    let mut warning = None;

    for outer in 0..config.outer_iters {
        let nearest = if outer >= config.surface_delay {
            let (v, _) = template.pose(&PoseParams::from_flat(&x, nj, template.shape_dim()))?;
            Some(nearest_vertices(&v, &target.vertices))
        } else {
            None
        };
        let nn = nearest.as_deref();
        let (terms, mut g) = objective.eval(&x, nn)?;
        let mut f = terms.total();
        let mut trace = vec![f];
        let mut step = 0.1 / dot(&g, &g).sqrt().max(1e-12);
        for _ in 0..config.inner_iters {
            let gg = dot(&g, &g);
            if gg.sqrt() < config.grad_tol {
                break;
            }
            let mut accepted = None;
            for _ in 0..50 {
                let cand: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - step * b).collect();
                let (t, gc) = objective.eval(&cand, nn)?;
                if t.total() <= f - 1e-4 * step * gg {
                    accepted = Some((cand, t.total(), gc));
                    break;
                }
                step *= 0.5;
            }
            let Some((xn, fn_, gn)) = accepted else {
                if gg.sqrt() > 1e-6 {
                    warning = Some(format!(
                        "line search exhausted in outer iteration {outer} with gradient norm {:.3e}",
                        gg.sqrt()
                    ));
                }
                break;
            };
            let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            step = if sy > 0.0 { dot(&s, &s) / sy } else { step * 2.0 };
            x = xn;
            f = fn_;
            g = gn;
            trace.push(f);
        }
        history.push(trace);
    }

    let params = PoseParams::from_flat(&x, nj, template.shape_dim());
    let (_, joints) = template.pose(&params)?;
    let max_joint_error = joints
        .iter()
        .zip(target_joints)
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    Ok(FitResult {
        params,
        history,
        warning,
        max_joint_error,
    })
}

/// Terms of the fitting objective at `params`, with nearest-vertex
/// matches computed at that pose.
pub fn fit_terms(
    template: &SkinnedTemplate,
    prior: &GaussianMixturePrior,
    target: &TriMesh,
    target_joints: &[Vec3],
    params: &PoseParams,
    config: &FitConfig,
) -> Result<FitTerms, GeometryError> {
    let nj = template.joint_count();
    let objective = Objective {
        template,
        prior,
        target,
        target_joints: Tensor::matrix(nj, 3, target_joints.iter().flat_map(|v| v.iter().copied()).collect())?,
        weights: Tensor::row(config.confidences.clone().unwrap_or_else(|| vec![1.0; nj])),
        config,
    };
    let (v, _) = template.pose(params)?;
    let nn = nearest_vertices(&v, &target.vertices);
    Ok(objective.eval(&params.to_flat(), Some(&nn))?.0)
}
