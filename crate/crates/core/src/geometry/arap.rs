use nalgebra::{DMatrix, SVD};
use serde::{Deserialize, Serialize};

use super::{EdgeGraph, GeometryError, TriMesh};
use crate::lie::{Mat3, Rotation, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborWeights {
    /// `k_ij = 1/|N_i|`.
    #[default]
    Uniform,
    /// Half the sum of the cotangents opposite each edge, clamped at zero.
    Cotangent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArapConfig {
    pub max_iters: usize,
    pub weights: NeighborWeights,
    /// Stop when an alternation lowers the energy by less than this
    /// fraction.
    pub rel_tolerance: f64,
}

impl Default for ArapConfig {
    fn default() -> Self {
        ArapConfig {
            max_iters: 100,
            weights: NeighborWeights::Uniform,
            rel_tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArapResult {
    pub mesh: TriMesh,
    /// Energy after each alternation of rotation fit and linear solve.
    pub energies: Vec<f64>,
    pub iterations: usize,
}

/// Rotation `R` minimizing `Σ w ‖R a − b‖²` (reflections excluded).
pub fn kabsch(from: &[Vec3], to: &[Vec3], weights: Option<&[f64]>) -> Rotation {
    let mut h = Mat3::zeros();
    for (k, (a, b)) in from.iter().zip(to).enumerate() {
        let w = weights.map_or(1.0, |w| w[k]);
        h += a * b.transpose() * w;
    }
    best_rotation(&h)
}

/// `argmax_R tr(R H)` over proper rotations, for `H = Σ a bᵀ`.
fn best_rotation(h: &Mat3) -> Rotation {
    let svd = SVD::new(*h, true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
    let v = vt.transpose();
    let mut r = v * u.transpose();
    if r.determinant() < 0.0 {
        let smallest = (0..3)
            .min_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]))
            .expect("three singular values");
        let mut flip = Mat3::identity();
        flip[(smallest, smallest)] = -1.0;
        r = v * flip * u.transpose();
    }
    Rotation::from_matrix_unchecked(r)
}

/// Directed neighbor lists with weights `k_ij`.
fn neighbor_weights(mesh: &TriMesh, kind: NeighborWeights) -> Vec<Vec<(usize, f64)>> {
    let adj = mesh.adjacency();
    match kind {
        NeighborWeights::Uniform => adj
            .iter()
            .map(|n| n.iter().map(|&j| (j, 1.0 / n.len() as f64)).collect())
            .collect(),
        NeighborWeights::Cotangent => {
            let mut w: Vec<std::collections::BTreeMap<usize, f64>> = vec![Default::default(); adj.len()];
            for f in &mesh.faces {
                for k in 0..3 {
                    let (o, a, b) = (f[k], f[(k + 1) % 3], f[(k + 2) % 3]);
                    let (ea, eb) = (mesh.vertices[a] - mesh.vertices[o], mesh.vertices[b] - mesh.vertices[o]);
                    let cross = ea.cross(&eb).norm();
                    if cross > 0.0 {
                        let cot = 0.5 * ea.dot(&eb) / cross;
                        *w[a].entry(b).or_default() += cot;
                        *w[b].entry(a).or_default() += cot;
                    }
                }
            }
            w.into_iter()
                .map(|m| m.into_iter().map(|(j, k)| (j, k.max(0.0))).collect())
                .collect()
        }
    }
}

struct Problem<'a> {
    rest: &'a [Vec3],
    neighbors: Vec<Vec<(usize, f64)>>,
    controls: &'a [(usize, Vec3)],
}

impl Problem<'_> {
    fn rotations(&self, cur: &[Vec3]) -> Vec<Mat3> {
        self.neighbors
            .iter()
            .enumerate()
            .map(|(i, nb)| {
                let mut h = Mat3::zeros();
                for &(j, k) in nb {
                    h += (self.rest[i] - self.rest[j]) * (cur[i] - cur[j]).transpose() * k;
                }
                best_rotation(&h).into_inner()
            })
            .collect()
    }

    fn energy(&self, cur: &[Vec3], rot: &[Mat3]) -> f64 {
        let mut e = 0.0;
        for (i, nb) in self.neighbors.iter().enumerate() {
            for &(j, k) in nb {
                e += k * ((cur[i] - cur[j]) - rot[i] * (self.rest[i] - self.rest[j])).norm_squared();
            }
        }
        e + self.controls.iter().map(|(l, s)| (cur[*l] - s).norm_squared()).sum::<f64>()
    }
}

/// Deforms `rest` so that the control vertices approach their targets
/// while every one-ring stays as rigid as possible. Minimizes
/// `Σ_i Σ_{j∈N_i} k_ij ‖(p'_i − p'_j) − R_i (p_i − p_j)‖² + Σ_l ‖p'_l − S*_l‖²`
/// by alternating per-vertex rotation fits with a dense linear solve whose
/// Cholesky factor is computed once.
pub fn arap_deform(
    rest: &TriMesh,
    controls: &[(usize, Vec3)],
    init: Option<&[Vec3]>,
    config: &ArapConfig,
) -> Result<ArapResult, GeometryError> {
    let n = rest.vertex_count();
    if controls.is_empty() {
        return Err(GeometryError::SingularSystem("no control vertices".into()));
    }
    if let Some((l, _)) = controls.iter().find(|(l, _)| *l >= n) {
        return Err(GeometryError::InvalidArgument(format!("control vertex {l} out of range")));
    }
    if init.is_some_and(|p| p.len() != n) {
        return Err(GeometryError::InvalidArgument("initial positions do not match the mesh".into()));
    }
    let comp = EdgeGraph::from_mesh(rest).components();
    let mut anchored = vec![false; comp.iter().max().map_or(0, |m| m + 1)];
    for (l, _) in controls {
        anchored[comp[*l]] = true;
    }
    if let Some(c) = anchored.iter().position(|a| !a) {
        let v = comp.iter().position(|&x| x == c).expect("component has a vertex");
        return Err(GeometryError::SingularSystem(format!(
            "the component containing vertex {v} has no control"
        )));
    }

    let problem = Problem {
        rest: &rest.vertices,
        neighbors: neighbor_weights(rest, config.weights),
        controls,
    };
    let mut a = DMatrix::<f64>::zeros(n, n);
    for (i, nb) in problem.neighbors.iter().enumerate() {
        for &(j, k) in nb {
            a[(i, i)] += k;
            a[(j, j)] += k;
            a[(i, j)] -= k;
            a[(j, i)] -= k;
        }
    }
    for (l, _) in controls {
        a[(*l, *l)] += 1.0;
    }
    let chol = a
        .cholesky()
        .ok_or_else(|| GeometryError::SingularSystem("normal equations are not positive definite".into()))?;

    let mut cur: Vec<Vec3> = init.map_or_else(|| rest.vertices.clone(), |p| p.to_vec());
    let mut energies = Vec::new();
    let mut iterations = 0;
    for _ in 0..config.max_iters {
        let rot = problem.rotations(&cur);
        let mut b = DMatrix::<f64>::zeros(n, 3);
        for (i, nb) in problem.neighbors.iter().enumerate() {
            for &(j, k) in nb {
                let r = rot[i] * (rest.vertices[i] - rest.vertices[j]) * k;
                for c in 0..3 {
                    b[(i, c)] += r[c];
                    b[(j, c)] -= r[c];
                }
            }
        }
        for (l, s) in controls {
            for c in 0..3 {
                b[(*l, c)] += s[c];
            }
        }
        let x = chol.solve(&b);
        cur = (0..n).map(|i| Vec3::new(x[(i, 0)], x[(i, 1)], x[(i, 2)])).collect();
        let e = problem.energy(&cur, &rot);
        iterations += 1;
        let prev = energies.last().copied();
        energies.push(e);
        if let Some(p) = prev {
            if p - e <= config.rel_tolerance * p {
                break;
            }
        }
    }
    Ok(ArapResult {
        mesh: rest.with_vertices(cur),
        energies,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::exp_so3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Closed cylinder-like tube of `rings × segments` vertices.
    fn tube(rings: usize, segments: usize) -> TriMesh {
        let mut v = Vec::new();
        let mut f = Vec::new();
        for r in 0..rings {
            for k in 0..segments {
                let phi = 2.0 * std::f64::consts::PI * k as f64 / segments as f64;
                v.push(Vec3::new(0.3 * phi.cos(), r as f64 * 0.1, 0.3 * phi.sin()));
            }
        }
        for r in 0..rings - 1 {
            for k in 0..segments {
                let a = r * segments + k;
                let b = r * segments + (k + 1) % segments;
                f.push([a, b, b + segments]);
                f.push([a, b + segments, a + segments]);
            }
        }
        TriMesh::new(v, f).unwrap()
    }

    #[test]
    fn kabsch_recovers_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = exp_so3(&Vec3::new(0.4, -1.2, 2.0));
        let a: Vec<Vec3> = (0..6).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect();
        let b: Vec<Vec3> = a.iter().map(|x| r.apply(x)).collect();
        let k = kabsch(&a, &b, None);
        assert!((k.matrix() - r.matrix()).amax() < 1e-12);
        assert!((k.matrix().determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unchanged_controls_return_the_input() {
        let m = tube(20, 10);
        let controls: Vec<(usize, Vec3)> = (0..m.vertex_count()).step_by(7).map(|i| (i, m.vertices[i])).collect();
        let r = arap_deform(&m, &controls, None, &ArapConfig::default()).unwrap();
        for (a, b) in r.mesh.vertices.iter().zip(&m.vertices) {
            assert!((a - b).norm() < 1e-8);
        }
    }

    #[test]
    fn rigid_motion_of_controls_is_reproduced() {
        let m = tube(20, 10);
        assert_eq!(m.vertex_count(), 200);
        let r = exp_so3(&Vec3::new(0.3, 0.5, -0.4));
        let t = Vec3::new(0.5, -0.2, 1.0);
        let controls: Vec<(usize, Vec3)> = (0..200).step_by(9).map(|i| (i, r.apply(&m.vertices[i]) + t)).collect();
        let out = arap_deform(&m, &controls, None, &ArapConfig { max_iters: 500, ..ArapConfig::default() }).unwrap();
        let err = out
            .mesh
            .vertices
            .iter()
            .zip(&m.vertices)
            .map(|(a, b)| (a - (r.apply(b) + t)).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-3 * m.bbox_diagonal(), "{err}");
    }

    #[test]
    fn energy_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for weights in [NeighborWeights::Uniform, NeighborWeights::Cotangent] {
            for _ in 0..3 {
                let m = tube(8, 8);
                let controls: Vec<(usize, Vec3)> = (0..64)
                    .step_by(5)
                    .map(|i| (i, m.vertices[i] + Vec3::new(rng.random(), rng.random(), rng.random()) * 0.2))
                    .collect();
                let cfg = ArapConfig { max_iters: 40, weights, rel_tolerance: 0.0 };
                let out = arap_deform(&m, &controls, None, &cfg).unwrap();
                for w in out.energies.windows(2) {
                    assert!(w[1] <= w[0] + 1e-10, "{} > {}", w[1], w[0]);
                }
            }
        }
    }

    #[test]
    fn unanchored_component_is_singular() {
        let mut m = tube(3, 4);
        let off = m.vertex_count();
        m.vertices.extend([Vec3::new(5.0, 0.0, 0.0), Vec3::new(6.0, 0.0, 0.0), Vec3::new(5.0, 1.0, 0.0)]);
        m.faces.push([off, off + 1, off + 2]);
        let err = arap_deform(&m, &[(0, m.vertices[0])], None, &ArapConfig::default()).unwrap_err();
        assert!(matches!(err, GeometryError::SingularSystem(_)));
        assert!(matches!(
            arap_deform(&m, &[], None, &ArapConfig::default()),
            Err(GeometryError::SingularSystem(_))
        ));
    }
}
