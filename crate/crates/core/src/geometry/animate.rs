use serde::{Deserialize, Serialize};

use super::arap::kabsch;
use super::{arap_deform, build_correspondences, repose_targets, ArapConfig, GeometryError, PoseParams, SkinnedTemplate, TriMesh};
use crate::lie::so3::{log_so3_lossy, minimal_rotation_between};
use crate::lie::{JointPose, KinematicTree, LieMotion, Mat3, Rotation, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnimateConfig {
    pub arap: ArapConfig,
}

impl Default for AnimateConfig {
    fn default() -> Self {
        AnimateConfig {
            arap: ArapConfig {
                max_iters: 30,
                ..ArapConfig::default()
            },
        }
    }
}

const ZERO_OFFSET: f64 = 1e-9;

/// Mapped joints below `j` whose placement `j` should respect: direct
/// children at a distance (primary) and joints reached through unmapped
/// children (secondary).
fn descendants(template: &SkinnedTemplate, map: &[Option<usize>], rest: &[Vec3], j: usize) -> (Vec<usize>, Vec<usize>) {
    let children = |p: usize| (0..template.joint_count()).filter(move |&c| template.parents[c] == Some(p));
    let (mut primary, mut secondary) = (vec![], vec![]);
    for c in children(j) {
        if map[c].is_some() && (rest[c] - rest[j]).norm() > ZERO_OFFSET {
            primary.push(c);
            continue;
        }
        let mut stack = vec![c];
        while let Some(u) = stack.pop() {
            if map[u].is_some() {
                secondary.push(u);
            } else {
                stack.extend(children(u));
            }
        }
    }
    (primary, secondary)
}

fn unit(v: Vec3) -> Option<Vec3> {
    let n = v.norm();
    (n > ZERO_OFFSET).then(|| v / n)
}

/// Template pose that places the template joints sharing a name with
/// `tree` joints along the directions of `joints`. Each joint aligns its
/// direct children exactly with the minimal rotation, using the joints
/// further down only to fix the remaining twist; joints with nothing mapped
/// below keep their parent's orientation.
pub fn retarget(
    template: &SkinnedTemplate,
    beta: &[f64],
    tree: &KinematicTree,
    joints: &JointPose,
) -> Result<PoseParams, GeometryError> {
    if joints.len() != tree.joint_count() {
        return Err(GeometryError::InvalidArgument(format!(
            "{} joints for a {}-joint skeleton",
            joints.len(),
            tree.joint_count()
        )));
    }
    let map: Vec<Option<usize>> = template.joint_names.iter().map(|n| tree.joint_index(n)).collect();
    if map[0].is_none() {
        return Err(GeometryError::InvalidArgument(format!(
            "skeleton {} has no joint named {}",
            tree.name(),
            template.joint_names[0]
        )));
    }
    let rest = template.regress_joints(&template.shaped_vertices(beta));
    let nj = template.joint_count();
    let mut global = vec![Mat3::identity(); nj];
    let mut placed = vec![Vec3::zeros(); nj];
    let mut params = PoseParams::rest(nj, beta.len());
    params.beta = beta.to_vec();
    for j in 0..nj {
        let parent_rot = template.parents[j].map_or(Mat3::identity(), |q| global[q]);
        placed[j] = match (map[j], template.parents[j]) {
            (Some(m), _) => joints.joints[m],
            (None, Some(q)) => placed[q] + global[q] * (rest[j] - rest[q]),
            (None, None) => unreachable!("root is mapped"),
        };
        let (primary, secondary) = descendants(template, &map, &rest, j);
        let pairs = |set: &[usize], rot: &Mat3| -> Vec<(Vec3, Vec3)> {
            set.iter()
                .filter_map(|&d| {
                    let from = unit(rot * (rest[d] - rest[j]))?;
                    let to = unit(joints.joints[map[d].expect("mapped")] - placed[j])?;
                    Some((from, to))
                })
                .collect()
        };
        let p = pairs(&primary, &parent_rot);
        let g = if p.len() >= 2 {
            let (a, b): (Vec<Vec3>, Vec<Vec3>) = p.into_iter().unzip();
            kabsch(&a, &b, None).into_inner() * parent_rot
        } else if let Some(&(a, b)) = p.first() {
            let aligned = minimal_rotation_between(&a, &b).into_inner() * parent_rot;
            // spin about the aligned direction toward the secondary joints
            let (mut s, mut c) = (0.0, 0.0);
            for (x, y) in pairs(&secondary, &aligned) {
                s += b.dot(&x.cross(&y));
                c += x.dot(&y) - x.dot(&b) * y.dot(&b);
            }
            if s == 0.0 && c == 0.0 {
                aligned
            } else {
                crate::lie::exp_so3(&(b * s.atan2(c))).into_inner() * aligned
            }
        } else {
            let s = pairs(&secondary, &parent_rot);
            match s.len() {
                0 => parent_rot,
                1 => minimal_rotation_between(&s[0].0, &s[0].1).into_inner() * parent_rot,
                _ => {
                    let (a, b): (Vec<Vec3>, Vec<Vec3>) = s.into_iter().unzip();
                    kabsch(&a, &b, None).into_inner() * parent_rot
                }
            }
        };
        global[j] = g;
        params.theta[j] = log_so3_lossy(&Rotation::from_matrix_unchecked(parent_rot.transpose() * g));
    }
    params.translation = placed[0] - rest[0];
    Ok(params)
}

/// Drives `target_mesh` with a skeleton motion. The template, fitted to the
/// mesh at `fitted`, gives per-vertex displacements once; each frame then
/// reposes the template, moves the matched target vertices with it, and
/// solves ARAP against the undeformed target mesh, starting from the
/// previous frame's output.
pub fn animate_mesh(
    template: &SkinnedTemplate,
    fitted: &PoseParams,
    target_mesh: &TriMesh,
    tree: &KinematicTree,
    motion: &LieMotion,
    config: &AnimateConfig,
) -> Result<Vec<TriMesh>, GeometryError> {
    let base = template.posed_mesh(fitted)?;
    let corr = build_correspondences(&base, target_mesh)?;
    let frames = motion.joints(tree)?;
    let mut prev = target_mesh.vertices.clone();
    let mut out = Vec::with_capacity(frames.len());
    for frame in &frames {
        let p = retarget(template, &fitted.beta, tree, frame)?;
        let (reposed, _) = template.pose(&p)?;
        let controls = repose_targets(&corr, &reposed)?;
        let r = arap_deform(target_mesh, &controls, Some(&prev), &config.arap)?;
        prev = r.mesh.vertices.clone();
        out.push(r.mesh);
    }
    Ok(out)
}
