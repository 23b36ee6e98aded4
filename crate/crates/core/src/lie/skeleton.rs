//! Skeleton topology: joints, kinematic chains and bone lengths.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

use super::LieError;

/// One bone, from `parent` joint to `child` joint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bone {
    pub parent: usize,
    pub child: usize,
}

/// On-disk skeleton description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonSpec {
    pub name: String,
    pub joint_names: Vec<String>,
    /// Parent index per joint, `null` for the root.
    pub parents: Vec<Option<usize>>,
    /// Chains as joint-index lists; the first entry is where the chain attaches.
    pub chains: Vec<Vec<usize>>,
    /// Lengths in meters, one per bone in chain order.
    pub bone_lengths: Vec<f64>,
    pub root: usize,
}

/// Validated skeleton. Bones are numbered in chain order, which is also the
/// order of Lie vectors in a pose.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicTree {
    spec: SkeletonSpec,
    bones: Vec<Bone>,
    /// bone index ending at each joint (`None` for the root)
    bone_into: Vec<Option<usize>>,
}

impl KinematicTree {
    pub fn new(spec: SkeletonSpec) -> Result<Self, LieError> {
        let n = spec.parents.len();
        let bad = |msg: String| Err(LieError::InvalidSkeleton(msg));
        if n < 2 {
            return bad("need at least two joints".into());
        }
        if spec.joint_names.len() != n {
            return bad(format!("{} joint names for {} joints", spec.joint_names.len(), n));
        }
        if spec.root >= n || spec.parents[spec.root].is_some() {
            return bad(format!("root {} must exist and have no parent", spec.root));
        }
        let mut placed = vec![false; n];
        placed[spec.root] = true;
        let mut bones = Vec::with_capacity(n - 1);
        let mut bone_into = vec![None; n];
        for (k, chain) in spec.chains.iter().enumerate() {
            if chain.len() < 2 {
                return bad(format!("chain {k} has fewer than two joints"));
            }
            if chain[0] >= n || !placed[chain[0]] {
                return bad(format!("chain {k} starts at joint {} not yet placed", chain[0]));
            }
            for pair in chain.windows(2) {
                let (a, b) = (pair[0], pair[1]);
                if b >= n || placed[b] {
                    return bad(format!("joint {b} in chain {k} is out of range or repeated"));
                }
                if spec.parents[b] != Some(a) {
                    return bad(format!("parent of joint {b} is {:?}, chain says {a}", spec.parents[b]));
                }
                placed[b] = true;
                bone_into[b] = Some(bones.len());
                bones.push(Bone { parent: a, child: b });
            }
        }
        if let Some(missing) = placed.iter().position(|p| !p) {
            return bad(format!("joint {missing} is not covered by any chain"));
        }
        if spec.bone_lengths.len() != bones.len() {
            return bad(format!(
                "{} bone lengths for {} bones",
                spec.bone_lengths.len(),
                bones.len()
            ));
        }
        if let Some(i) = spec.bone_lengths.iter().position(|&b| !(b > 0.0 && b.is_finite())) {
            return bad(format!("bone {i} has non-positive length"));
        }
        Ok(KinematicTree { spec, bones, bone_into })
    }

    pub fn from_json_str(s: &str) -> Result<Self, LieError> {
        let spec: SkeletonSpec =
            serde_json::from_str(s).map_err(|e| LieError::InvalidSkeleton(e.to_string()))?;
        Self::new(spec)
    }

    pub fn load(path: &Path) -> Result<Self, LieError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LieError::InvalidSkeleton(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.spec).expect("skeleton spec serializes")
    }

    pub fn spec(&self) -> &SkeletonSpec {
        &self.spec
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn joint_count(&self) -> usize {
        self.spec.parents.len()
    }

    pub fn bone_count(&self) -> usize {
        self.bones.len()
    }

    pub fn bones(&self) -> &[Bone] {
        &self.bones
    }

    pub fn bone_lengths(&self) -> &[f64] {
        &self.spec.bone_lengths
    }

    pub fn chains(&self) -> &[Vec<usize>] {
        &self.spec.chains
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        self.spec.parents[joint]
    }

    pub fn root(&self) -> usize {
        self.spec.root
    }

    pub fn joint_names(&self) -> &[String] {
        &self.spec.joint_names
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.spec.joint_names.iter().position(|n| n == name)
    }

    /// Index of the bone that ends at `joint`.
    pub fn bone_into(&self, joint: usize) -> Option<usize> {
        self.bone_into[joint]
    }

    /// Same topology with different bone lengths.
    pub fn with_bone_lengths(&self, lengths: Vec<f64>) -> Result<Self, LieError> {
        let mut spec = self.spec.clone();
        spec.bone_lengths = lengths;
        Self::new(spec)
    }

    /// Sum of bone lengths along the longest root-to-leaf path.
    pub fn reach(&self) -> f64 {
        let mut depth = vec![0.0; self.joint_count()];
        for (i, b) in self.bones.iter().enumerate() {
            depth[b.child] = depth[b.parent] + self.spec.bone_lengths[i];
        }
        depth.into_iter().fold(0.0, f64::max)
    }

    /// SHA-256 of the canonical JSON encoding, hex encoded.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(&self.spec).expect("skeleton spec serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    /// Built-in layouts: `ntu18`, `cmu22`, `humanact24`, `synthetic8`.
    pub fn preset(name: &str) -> Result<Self, LieError> {
        let spec = match name {
            "ntu18" => ntu18(),
            "cmu22" => cmu22(),
            "humanact24" => humanact24(),
            "synthetic8" => synthetic8(),
            other => return Err(LieError::InvalidSkeleton(format!("unknown preset {other:?}"))),
        };
        Self::new(spec)
    }

    pub fn preset_names() -> &'static [&'static str] {
        &["ntu18", "cmu22", "humanact24", "synthetic8"]
    }
}

fn build(name: &str, names: &[&str], chains: Vec<Vec<usize>>, lengths: Vec<f64>) -> SkeletonSpec {
    let mut parents = vec![None; names.len()];
    for chain in &chains {
        for pair in chain.windows(2) {
            parents[pair[1]] = Some(pair[0]);
        }
    }
    SkeletonSpec {
        name: name.to_string(),
        joint_names: names.iter().map(|s| s.to_string()).collect(),
        parents,
        chains,
        bone_lengths: lengths,
        root: 0,
    }
}

fn ntu18() -> SkeletonSpec {
    let names = [
        "pelvis", "spine", "neck", "head", "l_shoulder", "l_elbow", "l_wrist", "r_shoulder",
        "r_elbow", "r_wrist", "l_hip", "l_knee", "l_ankle", "l_foot", "r_hip", "r_knee",
        "r_ankle", "r_foot",
    ];
    let chains = vec![
        vec![0, 1, 2, 3],
        vec![2, 4, 5, 6],
        vec![2, 7, 8, 9],
        vec![0, 10, 11, 12, 13],
        vec![0, 14, 15, 16, 17],
    ];
    let lengths = vec![
        0.25, 0.25, 0.15, // spine
        0.18, 0.28, 0.25, // left arm
        0.18, 0.28, 0.25, // right arm
        0.10, 0.42, 0.40, 0.12, // left leg
        0.10, 0.42, 0.40, 0.12, // right leg
    ];
    build("ntu18", &names, chains, lengths)
}

const SMPL_NAMES: [&str; 24] = [
    "pelvis", "l_hip", "r_hip", "spine1", "l_knee", "r_knee", "spine2", "l_ankle", "r_ankle",
    "spine3", "l_foot", "r_foot", "neck", "l_collar", "r_collar", "head", "l_shoulder",
    "r_shoulder", "l_elbow", "r_elbow", "l_wrist", "r_wrist", "l_hand", "r_hand",
];

fn cmu22() -> SkeletonSpec {
    let chains = vec![
        vec![0, 2, 5, 8, 11],
        vec![0, 1, 4, 7, 10],
        vec![0, 3, 6, 9, 12, 15],
        vec![9, 14, 17, 19, 21],
        vec![9, 13, 16, 18, 20],
    ];
    let lengths = vec![
        0.10, 0.40, 0.40, 0.12, // right leg
        0.10, 0.40, 0.40, 0.12, // left leg
        0.12, 0.12, 0.10, 0.15, 0.10, // spine
        0.08, 0.12, 0.27, 0.25, // right arm
        0.08, 0.12, 0.27, 0.25, // left arm
    ];
    build("cmu22", &SMPL_NAMES[..22], chains, lengths)
}

fn humanact24() -> SkeletonSpec {
    let chains = vec![
        vec![0, 2, 5, 8, 11],
        vec![0, 1, 4, 7, 10],
        vec![0, 3, 6, 9, 12, 15],
        vec![9, 14, 17, 19, 21, 23],
        vec![9, 13, 16, 18, 20, 22],
    ];
    let lengths = vec![
        0.11, 0.38, 0.40, 0.13, // right leg
        0.11, 0.38, 0.40, 0.13, // left leg
        0.11, 0.14, 0.06, 0.21, 0.09, // spine
        0.12, 0.10, 0.26, 0.25, 0.09, // right arm
        0.12, 0.10, 0.26, 0.25, 0.09, // left arm
    ];
    build("humanact24", &SMPL_NAMES, chains, lengths)
}

/// Eight-joint body used by the procedural datasets.
fn synthetic8() -> SkeletonSpec {
    let names = ["pelvis", "neck", "l_hand", "r_hand", "l_knee", "l_foot", "r_knee", "r_foot"];
    let chains = vec![vec![0, 1], vec![1, 2], vec![1, 3], vec![0, 4, 5], vec![0, 6, 7]];
    let lengths = vec![0.55, 0.60, 0.60, 0.45, 0.45, 0.45, 0.45];
    build("synthetic8", &names, chains, lengths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_have_expected_sizes() {
        for (name, joints) in [("ntu18", 18), ("cmu22", 22), ("humanact24", 24), ("synthetic8", 8)] {
            let t = KinematicTree::preset(name).unwrap();
            assert_eq!(t.joint_count(), joints);
            assert_eq!(t.bone_count(), joints - 1);
            assert_eq!(t.chains().len(), 5);
        }
    }

    #[test]
    fn json_round_trip_preserves_hash() {
        let t = KinematicTree::preset("cmu22").unwrap();
        let back = KinematicTree::from_json_str(&t.to_json_string()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.hash(), t.hash());
        assert_ne!(t.hash(), KinematicTree::preset("ntu18").unwrap().hash());
    }

    #[test]
    fn rejects_chain_that_skips_a_joint() {
        let mut spec = KinematicTree::preset("synthetic8").unwrap().spec().clone();
        spec.chains.pop();
        assert!(matches!(KinematicTree::new(spec), Err(LieError::InvalidSkeleton(_))));
    }

    #[test]
    fn rejects_chain_starting_on_unplaced_joint() {
        let mut spec = KinematicTree::preset("synthetic8").unwrap().spec().clone();
        spec.chains.swap(0, 1);
        assert!(KinematicTree::new(spec).is_err());
    }

    #[test]
    fn rejects_zero_length_bone() {
        let t = KinematicTree::preset("synthetic8").unwrap();
        assert!(t.with_bone_lengths(vec![0.0; 7]).is_err());
    }
}
