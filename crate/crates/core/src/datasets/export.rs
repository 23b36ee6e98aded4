//! BVH and CSV writers.
//!
//! BVH holds one rotation per node, but a joint can have several outgoing
//! bones with different rotations. Each BVH node here therefore stands for
//! one bone: it sits at the bone's parent joint, carries that bone's local
//! rotation, and its children are offset by the bone length along local +x.

use std::fmt::Write as _;

use super::{Clip, DatasetError};
use crate::lie::{exp_so3, joints_to_lie, KinematicTree, Mat3, Vec3};

/// Decomposes `R = Rz(z) · Rx(x) · Ry(y)`; angles in radians, returned as
/// `(z, x, y)`.
pub fn rotation_to_euler_zxy(r: &Mat3) -> (f64, f64, f64) {
    let sx = r[(2, 1)].clamp(-1.0, 1.0);
    let x = sx.asin();
    if sx.abs() < 1.0 - 1e-12 {
        let y = (-r[(2, 0)]).atan2(r[(2, 2)]);
        let z = (-r[(0, 1)]).atan2(r[(1, 1)]);
        (z, x, y)
    } else {
        // gimbal lock: only z ± y is determined; put it all on z
        let z = r[(1, 0)].atan2(r[(0, 0)]);
        (z, x, 0.0)
    }
}

pub fn euler_zxy_to_matrix(z: f64, x: f64, y: f64) -> Mat3 {
    let rz = Mat3::new(z.cos(), -z.sin(), 0.0, z.sin(), z.cos(), 0.0, 0.0, 0.0, 1.0);
    let rx = Mat3::new(1.0, 0.0, 0.0, 0.0, x.cos(), -x.sin(), 0.0, x.sin(), x.cos());
    let ry = Mat3::new(y.cos(), 0.0, y.sin(), 0.0, 1.0, 0.0, -y.sin(), 0.0, y.cos());
    rz * rx * ry
}

fn f(v: f64) -> String {
    format!("{v:.6}")
}

/// BVH text for one clip, with rotations derived from the clip's joints.
pub fn clip_to_bvh(tree: &KinematicTree, clip: &Clip) -> Result<String, DatasetError> {
    let motion = joints_to_lie(tree, &clip.frames)?;
    let bones = tree.bones();
    let names = tree.joint_names();
    let root = tree.root();
    let children_of = |joint: usize| -> Vec<usize> { (0..bones.len()).filter(|&b| bones[b].parent == joint).collect() };

    let mut out = String::from("HIERARCHY\n");
    writeln!(out, "ROOT {}", names[root]).unwrap();
    out.push_str("{\n\tOFFSET 0.000000 0.000000 0.000000\n");
    out.push_str("\tCHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation\n");
    // node order in the MOTION section follows this depth-first walk
    let mut order = Vec::new();
    fn emit(
        out: &mut String,
        order: &mut Vec<usize>,
        bone: usize,
        offset: f64,
        depth: usize,
        tree: &KinematicTree,
        children_of: &dyn Fn(usize) -> Vec<usize>,
    ) {
        let tabs = "\t".repeat(depth);
        let b = tree.bones()[bone];
        let len = tree.bone_lengths()[bone];
        writeln!(out, "{tabs}JOINT {}", tree.joint_names()[b.child]).unwrap();
        writeln!(out, "{tabs}{{").unwrap();
        writeln!(out, "{tabs}\tOFFSET {} 0.000000 0.000000", f(offset)).unwrap();
        writeln!(out, "{tabs}\tCHANNELS 3 Zrotation Xrotation Yrotation").unwrap();
        order.push(bone);
        let kids = children_of(b.child);
        if kids.is_empty() {
            writeln!(out, "{tabs}\tEnd Site").unwrap();
            writeln!(out, "{tabs}\t{{").unwrap();
            writeln!(out, "{tabs}\t\tOFFSET {} 0.000000 0.000000", f(len)).unwrap();
            writeln!(out, "{tabs}\t}}").unwrap();
        }
        for k in kids {
            emit(out, order, k, len, depth + 1, tree, children_of);
        }
        writeln!(out, "{tabs}}}").unwrap();
    }
    for b in children_of(root) {
        emit(&mut out, &mut order, b, 0.0, 1, tree, &children_of);
    }
    out.push_str("}\nMOTION\n");
    writeln!(out, "Frames: {}", motion.frames.len()).unwrap();
    writeln!(out, "Frame Time: {}", f(1.0 / clip.fps)).unwrap();
    for frame in &motion.frames {
        let mut row: Vec<String> = Vec::with_capacity(6 + 3 * order.len());
        let p = frame.root_position;
        row.extend([p.x, p.y, p.z].map(f));
        let mut push_rot = |w: &Vec3| {
            let (z, x, y) = rotation_to_euler_zxy(exp_so3(w).matrix());
            row.extend([z, x, y].map(|a| f(a.to_degrees())));
        };
        push_rot(&frame.root_orientation);
        for &b in &order {
            push_rot(&frame.lie[b]);
        }
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    Ok(out)
}

/// One row per frame: `frame,<joint>_x,<joint>_y,<joint>_z,...`.
pub fn clip_to_csv(tree: &KinematicTree, clip: &Clip) -> String {
    let mut out = String::from("frame");
    for n in tree.joint_names() {
        write!(out, ",{n}_x,{n}_y,{n}_z").unwrap();
    }
    out.push('\n');
    for (t, frame) in clip.frames.iter().enumerate() {
        write!(out, "{t}").unwrap();
        for v in frame.to_flat() {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}
