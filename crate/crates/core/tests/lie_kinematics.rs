use motionkit::lie::{
    exp_so3, forward_kinematics, joints_to_lie, log_so3, KinematicTree, LiePose, Vec3,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn vec3(max: f64) -> impl Strategy<Value = Vec3> {
    (-max..max, -max..max, -max..max).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

/// Twist-free bone rotation: axis orthogonal to the bone's local +x.
fn twist_free(rng: &mut ChaCha8Rng) -> Vec3 {
    let phi = rng.random_range(0.0..std::f64::consts::TAU);
    let angle = rng.random_range(0.0..3.0);
    Vec3::new(0.0, phi.cos(), phi.sin()) * angle
}

fn random_pose(rng: &mut ChaCha8Rng, bones: usize) -> LiePose {
    let mut v = || Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
    LiePose {
        root_orientation: v(),
        root_position: v(),
        lie: (0..bones).map(|_| v()).collect(),
    }
}

proptest! {
    #[test]
    fn exp_log_round_trip(w in vec3(1.7)) {
        prop_assume!(w.norm() < std::f64::consts::PI - 1e-2);
        let back = log_so3(&exp_so3(&w)).unwrap();
        prop_assert!((back - w).norm() < 1e-8);
    }

    #[test]
    fn exp_is_orthonormal(w in vec3(10.0)) {
        let r = exp_so3(&w);
        let m = r.matrix();
        prop_assert!((m.transpose() * m - nalgebra::Matrix3::identity()).norm() < 1e-12);
        prop_assert!((m.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn log_exp_recovers_rotation(w in vec3(10.0)) {
        let r = exp_so3(&w);
        if let Ok(v) = log_so3(&r) {
            prop_assert!(v.norm() <= std::f64::consts::PI + 1e-12);
            prop_assert!((exp_so3(&v).matrix() - r.matrix()).norm() < 1e-8);
        }
    }

    #[test]
    fn fk_keeps_bone_lengths(seed in any::<u64>(), preset in 0usize..4) {
        let tree = KinematicTree::preset(KinematicTree::preset_names()[preset]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pose = random_pose(&mut rng, tree.bone_count());
        let j = forward_kinematics(&tree, &pose).unwrap();
        for (b, &len) in tree.bones().iter().zip(tree.bone_lengths()) {
            prop_assert!(((j.joints[b.child] - j.joints[b.parent]).norm() - len).abs() < 1e-9);
        }
    }

    #[test]
    fn joints_to_lie_reproduces_joints(seed in any::<u64>(), preset in 0usize..4) {
        let tree = KinematicTree::preset(KinematicTree::preset_names()[preset]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pose = random_pose(&mut rng, tree.bone_count());
        let j = forward_kinematics(&tree, &pose).unwrap();
        let lie = joints_to_lie(&tree, std::slice::from_ref(&j)).unwrap();
        let back = &lie.joints(&tree).unwrap()[0];
        for (a, b) in j.joints.iter().zip(&back.joints) {
            prop_assert!((a - b).norm() < 1e-8);
        }
    }
}

#[test]
fn thousand_poses_per_preset() {
    for name in KinematicTree::preset_names() {
        let tree = KinematicTree::preset(name).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let pose = LiePose {
                root_orientation: Vec3::zeros(),
                root_position: Vec3::new(rng.random_range(-1.0..1.0), 0.9, rng.random_range(-1.0..1.0)),
                lie: (0..tree.bone_count()).map(|_| twist_free(&mut rng)).collect(),
            };
            let j = forward_kinematics(&tree, &pose).unwrap();
            for (b, &len) in tree.bones().iter().zip(tree.bone_lengths()) {
                assert!(((j.joints[b.child] - j.joints[b.parent]).norm() - len).abs() < 1e-9);
            }
            let lie = joints_to_lie(&tree, std::slice::from_ref(&j)).unwrap();
            for (a, b) in pose.lie.iter().zip(&lie.frames[0].lie) {
                assert!((a - b).norm() < 1e-6, "{name}: {a:?} vs {b:?}");
            }
        }
    }
}
