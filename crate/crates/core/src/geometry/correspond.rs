use serde::{Deserialize, Serialize};

use super::{GeometryError, TriMesh};
use crate::lie::Vec3;

/// Template vertex `template` matched to target vertex `target`, with the
/// offset `target − template` at the time of matching.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub template: usize,
    pub target: usize,
    pub displacement: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceSet {
    pub pairs: Vec<Correspondence>,
    /// Pairs dropped because the two vertices carry different part labels.
    pub filtered: usize,
}

/// Matches every template vertex to its nearest target vertex and drops
/// pairs whose part labels differ. Labels are compared only when both
/// meshes carry them.
pub fn build_correspondences(template_posed: &TriMesh, target: &TriMesh) -> Result<CorrespondenceSet, GeometryError> {
    if target.vertices.is_empty() || template_posed.vertices.is_empty() {
        return Err(GeometryError::EmptyResult);
    }
    let labels = template_posed.part_labels.as_ref().zip(target.part_labels.as_ref());
    let mut pairs = Vec::with_capacity(template_posed.vertex_count());
    let mut filtered = 0;
    for (i, m) in template_posed.vertices.iter().enumerate() {
        let (j, _) = target
            .vertices
            .iter()
            .enumerate()
            .map(|(j, s)| (j, (s - m).norm_squared()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("target is non-empty");
        if let Some((lt, ls)) = labels {
            if lt[i] != ls[j] {
                filtered += 1;
                continue;
            }
        }
        pairs.push(Correspondence {
            template: i,
            target: j,
            displacement: target.vertices[j] - m,
        });
    }
    if pairs.is_empty() {
        return Err(GeometryError::EmptyResult);
    }
    Ok(CorrespondenceSet { pairs, filtered })
}

/// Control targets `S*_j = M_i + d_{i→j}` from the reposed template,
/// averaged when several template vertices hit the same target vertex.
/// Sorted by target index.
pub fn repose_targets(set: &CorrespondenceSet, template_reposed: &[Vec3]) -> Result<Vec<(usize, Vec3)>, GeometryError> {
    if let Some(c) = set.pairs.iter().find(|c| c.template >= template_reposed.len()) {
        return Err(GeometryError::InvalidArgument(format!(
            "correspondence names template vertex {} of {}",
            c.template,
            template_reposed.len()
        )));
    }
    let mut acc: std::collections::BTreeMap<usize, (Vec3, usize)> = Default::default();
    for c in &set.pairs {
        let e = acc.entry(c.target).or_insert((Vec3::zeros(), 0));
        e.0 += template_reposed[c.template] + c.displacement;
        e.1 += 1;
    }
    Ok(acc.into_iter().map(|(j, (sum, n))| (j, sum / n as f64)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::exp_so3;

    fn two_part() -> TriMesh {
        let mut m = TriMesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
                Vec3::new(5.0, 0.0, 0.0),
                Vec3::new(6.0, 0.0, 0.0),
                Vec3::new(5.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [3, 4, 5]],
        )
        .unwrap();
        m.part_labels = Some(vec![0, 0, 0, 1, 1, 1]);
        m
    }

    #[test]
    fn identical_meshes_pair_with_themselves() {
        let m = two_part();
        let c = build_correspondences(&m, &m).unwrap();
        assert_eq!(c.pairs.len(), 6);
        for (i, p) in c.pairs.iter().enumerate() {
            assert_eq!((p.template, p.target), (i, i));
            assert_eq!(p.displacement, Vec3::zeros());
        }
    }

    #[test]
    fn translated_copy_has_constant_offset() {
        let m = two_part();
        let t = Vec3::new(0.01, -0.02, 0.03);
        let moved = m.with_vertices(m.vertices.iter().map(|v| v + t).collect());
        let c = build_correspondences(&m, &moved).unwrap();
        assert!(c.pairs.iter().all(|p| (p.displacement - t).norm() < 1e-15));
        let s = repose_targets(&c, &m.vertices).unwrap();
        for (j, p) in s {
            assert!((p - moved.vertices[j]).norm() < 1e-15);
        }
    }

    #[test]
    fn swapped_label_is_filtered() {
        let m = two_part();
        let mut target = m.clone();
        target.part_labels.as_mut().unwrap()[4] = 0;
        let c = build_correspondences(&m, &target).unwrap();
        assert_eq!(c.filtered, 1);
        assert_eq!(c.pairs.len(), 5);
        assert!(c.pairs.iter().all(|p| p.template != 4));
        let mut all_wrong = target.clone();
        all_wrong.part_labels = Some(vec![7; 6]);
        assert!(matches!(build_correspondences(&m, &all_wrong), Err(GeometryError::EmptyResult)));
    }

    #[test]
    fn rotated_template_carries_the_offsets() {
        // template at the origin, target offset by d; rotating the template
        // by 90° about z moves each control to R M_i + d
        let template = two_part();
        let d = Vec3::new(0.0, 0.0, 0.2);
        let target = template.with_vertices(template.vertices.iter().map(|v| v + d).collect());
        let c = build_correspondences(&template, &target).unwrap();
        let r = exp_so3(&Vec3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2));
        let reposed: Vec<Vec3> = template.vertices.iter().map(|v| r.apply(v)).collect();
        let s = repose_targets(&c, &reposed).unwrap();
        // vertex 1 at (1,0,0) lands on (0,1,0) then lifts by d
        assert!((s[1].1 - Vec3::new(0.0, 1.0, 0.2)).norm() < 1e-15);
        assert!((s[4].1 - Vec3::new(0.0, 6.0, 0.2)).norm() < 1e-15);
    }

    #[test]
    fn shared_targets_are_averaged() {
        let set = CorrespondenceSet {
            pairs: vec![
                Correspondence { template: 0, target: 3, displacement: Vec3::new(1.0, 0.0, 0.0) },
                Correspondence { template: 1, target: 3, displacement: Vec3::new(0.0, 0.0, 0.0) },
            ],
            filtered: 0,
        };
        let s = repose_targets(&set, &[Vec3::zeros(), Vec3::new(0.0, 2.0, 0.0)]).unwrap();
        assert_eq!(s, vec![(3, Vec3::new(0.5, 1.0, 0.0))]);
    }
}
