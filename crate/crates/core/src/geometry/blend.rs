use serde::{Deserialize, Serialize};

use super::mesh::{EdgeGraph, TriMesh};
use super::GeometryError;
use crate::lie::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlendConfig {
    pub lambda_nn: f64,
    pub neighbors: usize,
    /// Visible vertices within this many edge hops of the occluded region
    /// are smoothed too.
    pub band_rings: usize,
    pub tolerance: f64,
    pub max_iters: usize,
}

impl Default for BlendConfig {
    fn default() -> Self {
        BlendConfig {
            lambda_nn: 1.0,
            neighbors: 10,
            band_rings: 2,
            tolerance: 1e-5,
            max_iters: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlendResult {
    pub colors: Vec<Vec3>,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each sweep.
    pub objective: Vec<f64>,
    /// Occluded vertices with no neighbors; they keep their reference color.
    pub isolated: Vec<usize>,
}

/// Per-vertex terms of the blend problem over the free vertices.
#[derive(Debug, Clone)]
pub struct BlendProblem {
    /// Vertices whose colors are solved for.
    pub free: Vec<usize>,
    /// 1 for occluded vertices (data term active), 0 for the band.
    pub data_weight: Vec<f64>,
    pub reference: Vec<Vec3>,
    pub neighbors: Vec<Vec<usize>>,
    pub lambda_nn: f64,
}

impl BlendProblem {
    /// `Σ_x a_x ‖c_x − c_xᵖ‖² + λ/|N_x| Σ_{x'} ‖c_x − c_x'‖²` over free `x`.
    pub fn objective(&self, colors: &[Vec3]) -> f64 {
        self.free
            .iter()
            .enumerate()
            .map(|(k, &x)| {
                let data = self.data_weight[k] * (colors[x] - self.reference[k]).norm_squared();
                let nb = &self.neighbors[k];
                let smooth = if nb.is_empty() {
                    0.0
                } else {
                    nb.iter().map(|&y| (colors[x] - colors[y]).norm_squared()).sum::<f64>() / nb.len() as f64
                };
                data + self.lambda_nn * smooth
            })
            .sum()
    }

    /// Exact coordinate-wise minimization in free-vertex order, repeated
    /// until the largest change drops below `tolerance`.
    pub fn solve(&self, colors: &mut [Vec3], tolerance: f64, max_iters: usize) -> (usize, bool, Vec<f64>) {
        let n = colors.len();
        let mut slot = vec![usize::MAX; n];
        for (k, &x) in self.free.iter().enumerate() {
            slot[x] = k;
        }
        // reverse references: free y lists x in N_y, so c_x also enters y's term
        let mut incoming: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.free.len()];
        for (k, nb) in self.neighbors.iter().enumerate() {
            let w = self.lambda_nn / nb.len().max(1) as f64;
            for &y in nb {
                if slot[y] != usize::MAX {
                    incoming[slot[y]].push((self.free[k], w));
                }
            }
        }
        let mut history = Vec::new();
        for it in 0..max_iters {
            let mut max_change: f64 = 0.0;
            for (k, &x) in self.free.iter().enumerate() {
                let nb = &self.neighbors[k];
                let w_out = self.lambda_nn / nb.len().max(1) as f64;
                let mut num = self.reference[k] * self.data_weight[k];
                let mut den = self.data_weight[k];
                for &y in nb {
                    num += colors[y] * w_out;
                    den += w_out;
                }
                for &(y, w) in &incoming[k] {
                    num += colors[y] * w;
                    den += w;
                }
                if den > 0.0 {
                    let c = num / den;
                    max_change = max_change.max((c - colors[x]).amax());
                    colors[x] = c;
                }
            }
            history.push(self.objective(colors));
            if max_change < tolerance {
                return (it + 1, true, history);
            }
        }
        (max_iters, false, history)
    }
}

/// Recolors the occluded vertices so they stay close to `reference` and to
/// their `neighbors` nearest vertices along mesh edges; a band of visible
/// vertices around the region is smoothed without a data term. Other
/// vertices keep the mesh colors.
pub fn blend_occluded_texture(
    mesh: &TriMesh,
    occluded: &[usize],
    reference: &[Vec3],
    config: &BlendConfig,
) -> Result<BlendResult, GeometryError> {
    let n = mesh.vertex_count();
    if mesh.colors.len() != n {
        return Err(GeometryError::InvalidMesh("blending needs per-vertex colors".into()));
    }
    if reference.len() != n {
        return Err(GeometryError::InvalidArgument(format!("{} reference colors for {n} vertices", reference.len())));
    }
    if let Some(&bad) = occluded.iter().find(|&&i| i >= n) {
        return Err(GeometryError::InvalidArgument(format!("occluded vertex {bad} out of range")));
    }
    if config.lambda_nn < 0.0 {
        return Err(GeometryError::InvalidArgument("lambda_nn must be non-negative".into()));
    }
    let graph = EdgeGraph::from_mesh(mesh);
    let mut is_occ = vec![false; n];
    for &o in occluded {
        is_occ[o] = true;
    }
    let band = graph.rings(occluded, config.band_rings);
    let free: Vec<usize> = (0..n).filter(|&i| band[i]).collect();
    let neighbors: Vec<Vec<usize>> = free.iter().map(|&x| graph.nearest(x, config.neighbors)).collect();
    let isolated: Vec<usize> = free
        .iter()
        .zip(&neighbors)
        .filter(|(x, nb)| is_occ[**x] && nb.is_empty())
        .map(|(x, _)| *x)
        .collect();
    let problem = BlendProblem {
        data_weight: free.iter().map(|&x| if is_occ[x] { 1.0 } else { 0.0 }).collect(),
        reference: free.iter().map(|&x| reference[x]).collect(),
        neighbors,
        lambda_nn: config.lambda_nn,
        free,
    };
    let mut colors = mesh.colors.clone();
    let (iterations, converged, objective) = problem.solve(&mut colors, config.tolerance, config.max_iters);
    Ok(BlendResult {
        colors,
        iterations,
        converged,
        objective,
        isolated,
    })
}
