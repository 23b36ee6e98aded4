//! Procedural actions on the `synthetic8` skeleton.
//!
//! World frame: +y up, +z forward, +x to the character's left. Every joint is
//! placed by walking unit bone directions scaled by the preset bone lengths,
//! so bone lengths are exact for every frame; noise perturbs angles only.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::{Clip, DatasetError, MotionDataset};
use crate::lie::{JointPose, KinematicTree, Vec3};

pub const SYNTH_ACTIONS: &[&str] = &["wave", "walk", "squat"];

const PELVIS: usize = 0;
const NECK: usize = 1;
const L_HAND: usize = 2;
const R_HAND: usize = 3;
const L_KNEE: usize = 4;
const L_FOOT: usize = 5;
const R_KNEE: usize = 6;
const R_FOOT: usize = 7;

/// Lateral splay of legs and arms away from the body's midline.
const LEG_SPLAY: f64 = 0.12;
const ARM_SPLAY: f64 = 0.15;
const KNEE_FLEX: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub actions: Vec<String>,
    pub clips_per_action: usize,
    pub frames: usize,
    pub fps: f64,
    /// Standard deviation of per-frame angle noise, radians.
    pub noise: f64,
    pub subjects: u32,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            actions: SYNTH_ACTIONS.iter().map(|s| s.to_string()).collect(),
            clips_per_action: 100,
            frames: 16,
            fps: 20.0,
            noise: 0.02,
            subjects: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Action {
    Wave,
    Walk,
    Squat,
}

fn parse_action(name: &str) -> Result<Action, DatasetError> {
    match name {
        "wave" => Ok(Action::Wave),
        "walk" => Ok(Action::Walk),
        "squat" => Ok(Action::Squat),
        other => Err(DatasetError::UnknownAction(other.to_string())),
    }
}

pub fn synthesize(spec: &SynthSpec) -> Result<MotionDataset, DatasetError> {
    if spec.frames == 0 || spec.subjects == 0 || spec.actions.is_empty() {
        return Err(DatasetError::InvalidArgument(
            "synthesis needs at least one action, frame and subject".into(),
        ));
    }
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return Err(DatasetError::InvalidArgument(format!("noise {}", spec.noise)));
    }
    let actions: Vec<Action> = spec.actions.iter().map(|a| parse_action(a)).collect::<Result<_, _>>()?;
    let tree = KinematicTree::preset("synthetic8")?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise).expect("validated std");
    let mut clips = Vec::with_capacity(actions.len() * spec.clips_per_action);
    for (ai, action) in actions.iter().enumerate() {
        for k in 0..spec.clips_per_action {
            let subject = (k as u32) % spec.subjects;
            // mild per-subject style so that held-out subjects are new people
            let style = 1.0 + 0.15 * ((subject as f64 + 0.5) / spec.subjects as f64 - 0.5);
            let params = ClipParams::draw(*action, style, &mut rng);
            let frames = (0..spec.frames)
                .map(|t| {
                    let n: [f64; 4] = if spec.noise > 0.0 {
                        std::array::from_fn(|_| noise.sample(&mut rng))
                    } else {
                        [0.0; 4]
                    };
                    pose_at(&tree, *action, &params, t as f64, n)
                })
                .collect();
            clips.push(Clip {
                id: format!("{}-{k:04}", spec.actions[ai]),
                frames,
                action: ai,
                subject,
                fps: spec.fps,
            });
        }
    }
    MotionDataset::new(tree, spec.actions.clone(), clips)
}

#[derive(Debug, Clone, Copy)]
struct ClipParams {
    /// Angular frequency per frame.
    omega: f64,
    phase: f64,
    amplitude: f64,
    /// Action-specific offset (wave: mean arm elevation).
    offset: f64,
}

impl ClipParams {
    fn draw(action: Action, style: f64, rng: &mut impl Rng) -> Self {
        let base = 2.0 * PI / 16.0;
        let phase = rng.random_range(0.0..2.0 * PI);
        match action {
            Action::Wave => ClipParams {
                omega: base * rng.random_range(1.5..2.5),
                phase,
                amplitude: style * rng.random_range(0.3..0.5),
                offset: rng.random_range(2.0..2.4),
            },
            Action::Walk => ClipParams {
                omega: base * rng.random_range(0.8..1.2),
                phase,
                amplitude: style * rng.random_range(0.25..0.45),
                offset: 0.0,
            },
            Action::Squat => ClipParams {
                omega: base * rng.random_range(0.8..1.2),
                phase,
                amplitude: style * rng.random_range(0.7..1.0),
                offset: 0.0,
            },
        }
    }
}

/// Unit direction pitched forward by `pitch` from straight down, splayed
/// sideways by `splay` (positive = toward +x).
fn limb_dir(splay: f64, pitch: f64) -> Vec3 {
    Vec3::new(splay.sin(), -splay.cos() * pitch.cos(), splay.cos() * pitch.sin())
}

/// Antiderivative of `|cos u|`, continuous and increasing.
fn abs_cos_integral(u: f64) -> f64 {
    let k = ((u + PI / 2.0) / PI).floor();
    let sign = if (k as i64).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
    2.0 * k + sign * u.sin() + 1.0
}

fn pose_at(tree: &KinematicTree, action: Action, p: &ClipParams, t: f64, n: [f64; 4]) -> JointPose {
    let len = tree.bone_lengths();
    let bone = |child: usize| len[tree.bone_into(child).expect("non-root joint")];
    let leg = bone(L_KNEE) + bone(L_FOOT);
    let u = p.omega * t + p.phase;

    // (left, right) leg pitch, (left, right) knee flexion, arm pitches,
    // right-arm elevation override, pelvis position
    let (leg_l, leg_r, knee_l, knee_r, arm_l, arm_r, wave, pelvis);
    match action {
        Action::Wave => {
            leg_l = n[0];
            leg_r = n[0];
            knee_l = 0.0;
            knee_r = 0.0;
            arm_l = n[1];
            arm_r = 0.0;
            wave = Some(p.offset + p.amplitude * u.sin() + n[2]);
            pelvis = Vec3::new(0.0, leg * LEG_SPLAY.cos() * n[0].cos(), 0.0);
        }
        Action::Walk => {
            // sin of the leg pitch is sinusoidal, so the stride half-extent is
            // exactly proportional to the amplitude
            let s = p.amplitude * u.sin();
            let theta = s.asin();
            leg_l = theta + n[0];
            leg_r = -theta + n[0];
            let c = u.cos();
            // the leg moving forward relative to the pelvis swings with a bent knee
            knee_l = KNEE_FLEX * c.max(0.0);
            knee_r = KNEE_FLEX * (-c).max(0.0);
            arm_l = -0.8 * s + n[1];
            arm_r = 0.8 * s + n[1];
            wave = None;
            // the stance foot stays planted: the pelvis advances by the total
            // variation of the stance leg's forward extent
            let tv = p.amplitude * (abs_cos_integral(u) - abs_cos_integral(p.phase));
            let forward = leg * LEG_SPLAY.cos();
            pelvis = Vec3::new(0.0, forward * theta.cos(), forward * tv);
        }
        Action::Squat => {
            let beta = p.amplitude * 0.5 * (1.0 - u.cos()) + n[0].abs();
            leg_l = 0.0;
            leg_r = 0.0;
            knee_l = 2.0 * beta;
            knee_r = 2.0 * beta;
            let reach = 1.3 * beta / p.amplitude.max(1e-9) + n[1];
            arm_l = reach;
            arm_r = reach;
            wave = None;
            pelvis = Vec3::new(0.0, leg * LEG_SPLAY.cos() * beta.cos(), 0.0);
        }
    }

    let mut j = vec![Vec3::zeros(); tree.joint_count()];
    j[PELVIS] = pelvis;
    let lean = n[3] * 0.5;
    j[NECK] = pelvis + bone(NECK) * Vec3::new(0.0, lean.cos(), lean.sin());
    j[L_HAND] = j[NECK] + bone(L_HAND) * limb_dir(ARM_SPLAY, arm_l);
    j[R_HAND] = match wave {
        Some(alpha) => j[NECK] + bone(R_HAND) * Vec3::new(-alpha.sin(), -alpha.cos(), 0.0),
        None => j[NECK] + bone(R_HAND) * limb_dir(-ARM_SPLAY, arm_r),
    };
    // knee flexion splits evenly between thigh and shin, which shortens the
    // leg without moving the foot off the leg's pitch line
    j[L_KNEE] = pelvis + bone(L_KNEE) * limb_dir(LEG_SPLAY, leg_l + 0.5 * knee_l);
    j[L_FOOT] = j[L_KNEE] + bone(L_FOOT) * limb_dir(LEG_SPLAY, leg_l - 0.5 * knee_l);
    j[R_KNEE] = pelvis + bone(R_KNEE) * limb_dir(-LEG_SPLAY, leg_r + 0.5 * knee_r);
    j[R_FOOT] = j[R_KNEE] + bone(R_FOOT) * limb_dir(-LEG_SPLAY, leg_r - 0.5 * knee_r);
    JointPose::new(j)
}
