use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;

use super::{GaussianMixturePrior, GeometryError, TriMesh};
use crate::autodiff::{Tape, Tensor, Var};
use crate::lie::{exp_so3, Mat3, Vec3};

/// Pose and shape of a [`SkinnedTemplate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseParams {
    /// Local rotation per joint; the root entry is the global orientation.
    pub theta: Vec<Vec3>,
    pub beta: Vec<f64>,
    pub translation: Vec3,
}

impl PoseParams {
    pub fn rest(joints: usize, shape_dim: usize) -> Self {
        PoseParams {
            theta: vec![Vec3::zeros(); joints],
            beta: vec![0.0; shape_dim],
            translation: Vec3::zeros(),
        }
    }

    /// `[θ (3J), β (K), t (3)]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut x: Vec<f64> = self.theta.iter().flat_map(|w| w.iter().copied()).collect();
        x.extend(&self.beta);
        x.extend(self.translation.iter());
        x
    }

    pub fn from_flat(x: &[f64], joints: usize, shape_dim: usize) -> Self {
        let b = 3 * joints;
        PoseParams {
            theta: x[..b].chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect(),
            beta: x[b..b + shape_dim].to_vec(),
            translation: Vec3::new(x[b + shape_dim], x[b + shape_dim + 1], x[b + shape_dim + 2]),
        }
    }
}

/// A rigged body: rest mesh, linear shape basis, joint regressor and
/// linear-blend skinning weights over a joint tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkinnedTemplate {
    pub joint_names: Vec<String>,
    /// Parent per joint; parents precede children and joint 0 is the root.
    pub parents: Vec<Option<usize>>,
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    pub part_labels: Vec<u32>,
    /// Per joint, `(vertex, weight)` entries whose weighted sum is the joint.
    pub regressor: Vec<Vec<(usize, f64)>>,
    /// Per vertex, `(joint, weight)` entries summing to 1.
    pub skinning: Vec<Vec<(usize, f64)>>,
    /// Per shape coefficient, one offset per vertex.
    pub shape_basis: Vec<Vec<Vec3>>,
}

/// Joints of the built-in body, with rest positions (y up).
const BODY: [(&str, Option<usize>, [f64; 3]); 13] = [
    ("pelvis", None, [0.0, 1.0, 0.0]),
    ("neck", Some(0), [0.0, 1.55, 0.0]),
    ("head", Some(1), [0.0, 1.8, 0.0]),
    ("l_shoulder", Some(1), [0.0, 1.55, 0.0]),
    ("l_hand", Some(3), [0.6, 1.55, 0.0]),
    ("r_shoulder", Some(1), [0.0, 1.55, 0.0]),
    ("r_hand", Some(5), [-0.6, 1.55, 0.0]),
    ("l_hip", Some(0), [0.0, 1.0, 0.0]),
    ("l_knee", Some(7), [0.1, 0.55, 0.0]),
    ("l_foot", Some(8), [0.1, 0.1, 0.0]),
    ("r_hip", Some(0), [0.0, 1.0, 0.0]),
    ("r_knee", Some(10), [-0.1, 0.55, 0.0]),
    ("r_foot", Some(11), [-0.1, 0.1, 0.0]),
];

/// Tube segments `(from joint, to joint, radius)`; the part label is the index.
const TUBES: [(usize, usize, f64); 8] = [
    (0, 1, 0.12),
    (1, 2, 0.08),
    (3, 4, 0.05),
    (5, 6, 0.05),
    (7, 8, 0.07),
    (8, 9, 0.06),
    (10, 11, 0.07),
    (11, 12, 0.06),
];

const RINGS: usize = 6;
const SEGMENTS: usize = 8;

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

impl SkinnedTemplate {
    /// Small tube body of 13 joints and 384 vertices. Its joint names
    /// include those of the `synthetic8` skeleton; shoulders sit at the neck
    /// and hips at the pelvis so each limb has its own rotation.
    pub fn synthetic() -> SkinnedTemplate {
        let joints: Vec<Vec3> = BODY.iter().map(|b| Vec3::new(b.2[0], b.2[1], b.2[2])).collect();
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        let mut labels = Vec::new();
        let mut skinning = Vec::new();
        let mut height = Vec::new();
        let mut girth = Vec::new();
        let mut span = Vec::new();
        // first and last ring of each tube
        let mut ring_start = vec![None; BODY.len()];
        let mut ring_end = vec![None; BODY.len()];
        for (t, &(p, c, radius)) in TUBES.iter().enumerate() {
            let axis = joints[c] - joints[p];
            let len = axis.norm();
            let a = axis / len;
            let u = a.cross(&Vec3::z()).normalize();
            let w = a.cross(&u);
            let base = vertices.len();
            let is_arm = BODY[p].0.ends_with("shoulder");
            for r in 0..RINGS {
                let s = r as f64 / (RINGS - 1) as f64;
                let center = joints[p] + axis * s;
                for k in 0..SEGMENTS {
                    let phi = 2.0 * PI * k as f64 / SEGMENTS as f64;
                    let radial = (u * phi.cos() + w * phi.sin()) * radius;
                    let v = center + radial;
                    vertices.push(v);
                    labels.push(t as u32);
                    let wc = 0.5 * smoothstep((s - 0.6) / 0.4);
                    skinning.push(if wc > 0.0 { vec![(p, 1.0 - wc), (c, wc)] } else { vec![(p, 1.0)] });
                    height.push(Vec3::new(0.0, 0.1 * (v.y - joints[0].y), 0.0));
                    girth.push(radial * 0.3);
                    span.push(if is_arm { a * (0.15 * s * len) } else { Vec3::zeros() });
                }
            }
            for r in 0..RINGS - 1 {
                for k in 0..SEGMENTS {
                    let i0 = base + r * SEGMENTS + k;
                    let i1 = base + r * SEGMENTS + (k + 1) % SEGMENTS;
                    faces.push([i0, i1, i1 + SEGMENTS]);
                    faces.push([i0, i1 + SEGMENTS, i0 + SEGMENTS]);
                }
            }
            ring_start[p].get_or_insert(base);
            ring_end[c] = Some(base + (RINGS - 1) * SEGMENTS);
        }
        let regressor = (0..BODY.len())
            .map(|j| {
                let first = ring_start[j].or(ring_end[j]).expect("every joint touches a tube");
                (first..first + SEGMENTS).map(|i| (i, 1.0 / SEGMENTS as f64)).collect()
            })
            .collect();
        SkinnedTemplate {
            joint_names: BODY.iter().map(|b| b.0.to_string()).collect(),
            parents: BODY.iter().map(|b| b.1).collect(),
            vertices,
            faces,
            part_labels: labels,
            regressor,
            skinning,
            shape_basis: vec![height, girth, span],
        }
    }

    /// Broad single-Gaussian prior over the non-root joint rotations.
    pub fn default_prior(&self) -> GaussianMixturePrior {
        GaussianMixturePrior::isotropic(3 * (self.joint_count() - 1), 1.0).expect("isotropic prior is valid")
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |m: String| Err(GeometryError::InvalidTemplate(m));
        let (j, n) = (self.joint_names.len(), self.vertices.len());
        if j == 0 || self.parents.len() != j || self.regressor.len() != j {
            return bad("joint names, parents and regressor rows disagree".into());
        }
        if self.parents[0].is_some() {
            return bad("joint 0 must be the root".into());
        }
        for (c, p) in self.parents.iter().enumerate().skip(1) {
            match p {
                Some(p) if *p < c => {}
                _ => return bad(format!("joint {c} must have an earlier parent")),
            }
        }
        if self.skinning.len() != n || self.part_labels.len() != n {
            return bad(format!("{n} vertices but {} skinning rows", self.skinning.len()));
        }
        for (i, row) in self.skinning.iter().enumerate() {
            let sum: f64 = row.iter().map(|e| e.1).sum();
            if row.iter().any(|&(jj, w)| jj >= j || !(w >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return bad(format!("skinning row {i} must be non-negative over valid joints and sum to 1"));
            }
        }
        if self.regressor.iter().flatten().any(|&(v, w)| v >= n || !w.is_finite()) {
            return bad("regressor references a missing vertex".into());
        }
        if self.shape_basis.iter().any(|b| b.len() != n) {
            return bad("shape basis rows must have one offset per vertex".into());
        }
        TriMesh::new(self.vertices.clone(), self.faces.clone())
            .map_err(|e| GeometryError::InvalidTemplate(e.to_string()))?;
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self, GeometryError> {
        let t: SkinnedTemplate = serde_json::from_str(s).map_err(|e| GeometryError::Parse(e.to_string()))?;
        t.validate()?;
        Ok(t)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("template serializes")
    }

    pub fn load(path: &Path) -> Result<Self, GeometryError> {
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| GeometryError::Io(e.to_string()))?)
    }

    pub fn save(&self, path: &Path) -> Result<(), GeometryError> {
        std::fs::write(path, self.to_json()).map_err(|e| GeometryError::Io(e.to_string()))
    }

    pub fn joint_count(&self) -> usize {
        self.joint_names.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn shape_dim(&self) -> usize {
        self.shape_basis.len()
    }

    pub fn param_dim(&self) -> usize {
        3 * self.joint_count() + self.shape_dim() + 3
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joint_names.iter().position(|n| n == name)
    }

    pub fn rest_params(&self) -> PoseParams {
        PoseParams::rest(self.joint_count(), self.shape_dim())
    }

    pub fn shaped_vertices(&self, beta: &[f64]) -> Vec<Vec3> {
        let mut v = self.vertices.clone();
        for (b, basis) in beta.iter().zip(&self.shape_basis) {
            for (x, d) in v.iter_mut().zip(basis) {
                *x += d * *b;
            }
        }
        v
    }

    pub fn regress_joints(&self, vertices: &[Vec3]) -> Vec<Vec3> {
        self.regressor
            .iter()
            .map(|row| row.iter().fold(Vec3::zeros(), |acc, &(i, w)| acc + vertices[i] * w))
            .collect()
    }

    /// Vertical extent of the rest joints for shape `beta`.
    pub fn skeleton_height(&self, beta: &[f64]) -> f64 {
        let j = self.regress_joints(&self.shaped_vertices(beta));
        let ys = j.iter().map(|p| p.y);
        ys.clone().fold(f64::NEG_INFINITY, f64::max) - ys.fold(f64::INFINITY, f64::min)
    }

    fn check_params(&self, p: &PoseParams) -> Result<(), GeometryError> {
        if p.theta.len() != self.joint_count() || p.beta.len() != self.shape_dim() {
            return Err(GeometryError::InvalidArgument(format!(
                "pose has {} rotations and {} shape values; template needs {} and {}",
                p.theta.len(),
                p.beta.len(),
                self.joint_count(),
                self.shape_dim()
            )));
        }
        Ok(())
    }

    /// Global joint rotations and posed joint positions.
    pub fn joint_transforms(&self, p: &PoseParams) -> Result<(Vec<Mat3>, Vec<Vec3>), GeometryError> {
        self.check_params(p)?;
        let rest = self.regress_joints(&self.shaped_vertices(&p.beta));
        Ok(self.chain(&rest, p))
    }

    fn chain(&self, rest: &[Vec3], p: &PoseParams) -> (Vec<Mat3>, Vec<Vec3>) {
        let n = self.joint_count();
        let mut g = Vec::with_capacity(n);
        let mut t = Vec::with_capacity(n);
        for j in 0..n {
            let local = exp_so3(&p.theta[j]).into_inner();
            match self.parents[j] {
                None => {
                    g.push(local);
                    t.push(rest[j] + p.translation);
                }
                Some(q) => {
                    let (gq, tq): (Mat3, Vec3) = (g[q], t[q]);
                    g.push(gq * local);
                    t.push(tq + gq * (rest[j] - rest[q]));
                }
            }
        }
        (g, t)
    }

    /// Posed vertices and joints by linear blend skinning.
    pub fn pose(&self, p: &PoseParams) -> Result<(Vec<Vec3>, Vec<Vec3>), GeometryError> {
        self.check_params(p)?;
        let v = self.shaped_vertices(&p.beta);
        let rest = self.regress_joints(&v);
        let (g, t) = self.chain(&rest, p);
        let posed = v
            .iter()
            .zip(&self.skinning)
            .map(|(x, row)| {
                row.iter()
                    .fold(Vec3::zeros(), |acc, &(j, w)| acc + (g[j] * (x - rest[j]) + t[j]) * w)
            })
            .collect();
        Ok((posed, t))
    }

    pub fn posed_mesh(&self, p: &PoseParams) -> Result<TriMesh, GeometryError> {
        let (v, _) = self.pose(p)?;
        Ok(TriMesh {
            vertices: v,
            faces: self.faces.clone(),
            colors: vec![],
            part_labels: Some(self.part_labels.clone()),
        })
    }

    /// The same skinning recorded on a tape. `x` is a `[1, param_dim]`
    /// row laid out as [`PoseParams::to_flat`]; returns `[N, 3]` vertices
    /// and `[J, 3]` posed joints.
    pub fn pose_on_tape(&self, tape: &mut Tape, x: Var) -> Result<(Var, Var), GeometryError> {
        let (nj, k, n) = (self.joint_count(), self.shape_dim(), self.vertex_count());
        let b = 3 * nj;
        let theta = tape.slice_cols(x, 0, b)?;
        let theta = tape.reshape(theta, nj, 3)?;
        let local = tape.so3_exp(theta)?;
        let trans = tape.slice_cols(x, b + k, b + k + 3)?;
        let flat_rest: Vec<f64> = self.vertices.iter().flat_map(|v| v.iter().copied()).collect();
        let mut flat = tape.constant(Tensor::matrix(1, 3 * n, flat_rest)?);
        if k > 0 {
            let beta = tape.slice_cols(x, b, b + k)?;
            let basis: Vec<f64> = self.shape_basis.iter().flatten().flat_map(|v| v.iter().copied()).collect();
            let basis = tape.constant(Tensor::matrix(k, 3 * n, basis)?);
            let offset = tape.matmul(beta, basis)?;
            flat = tape.add(flat, offset)?;
        }
        let verts = tape.reshape(flat, n, 3)?;
        let mut reg = vec![0.0; nj * n];
        for (j, row) in self.regressor.iter().enumerate() {
            for &(i, w) in row {
                reg[j * n + i] += w;
            }
        }
        let reg = tape.constant(Tensor::matrix(nj, n, reg)?);
        let rest = tape.matmul(reg, verts)?;

        let mut g: Vec<Var> = Vec::with_capacity(nj);
        let mut t: Vec<Var> = Vec::with_capacity(nj);
        for j in 0..nj {
            let lj = tape.slice_rows(local, j, j + 1)?;
            let rj = tape.slice_rows(rest, j, j + 1)?;
            match self.parents[j] {
                None => {
                    g.push(lj);
                    t.push(tape.add(rj, trans)?);
                }
                Some(q) => {
                    let gj = tape.batch_matmul(g[q], lj, 3, 3, 3)?;
                    let rq = tape.slice_rows(rest, q, q + 1)?;
                    let off = tape.sub(rj, rq)?;
                    let moved = tape.batch_matmul(g[q], off, 3, 3, 1)?;
                    g.push(gj);
                    t.push(tape.add(t[q], moved)?);
                }
            }
        }
        let g = tape.concat_rows(&g)?;
        let joints = tape.concat_rows(&t)?;

        let (mut vi, mut ji, mut wv) = (vec![], vec![], vec![]);
        for (i, row) in self.skinning.iter().enumerate() {
            for &(j, w) in row {
                vi.push(i);
                ji.push(j);
                wv.push(w);
            }
        }
        let m = vi.len();
        let mut scatter = vec![0.0; n * m];
        for (e, &i) in vi.iter().enumerate() {
            scatter[i * m + e] = 1.0;
        }
        let vp = tape.gather_rows(verts, &vi)?;
        let jp = tape.gather_rows(rest, &ji)?;
        let gp = tape.gather_rows(g, &ji)?;
        let tp = tape.gather_rows(joints, &ji)?;
        let rel = tape.sub(vp, jp)?;
        let rotated = tape.batch_matmul(gp, rel, 3, 3, 1)?;
        let placed = tape.add(rotated, tp)?;
        let w = tape.constant(Tensor::matrix(m, 1, wv)?);
        let weighted = tape.mul_col(placed, w)?;
        let scatter = tape.constant(Tensor::matrix(n, m, scatter)?);
        let posed = tape.matmul(scatter, weighted)?;
        Ok((posed, joints))
    }
}
