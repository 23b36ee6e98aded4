use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::model::{Action2MotionModel, StepState};
use super::TvaeError;
use crate::autodiff::{reparameterized_sample, Tape, Tensor, Var};
use crate::lie::{joints_to_lie, JointPose, LieMotion, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedMotion {
    pub joints: Vec<JointPose>,
    /// Action index fed at each frame.
    pub actions: Vec<usize>,
    /// Lie vectors rescaled to norm π while decoding.
    pub clamped: usize,
}

impl GeneratedMotion {
    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn to_lie(&self, model: &Action2MotionModel) -> Result<LieMotion, TvaeError> {
        Ok(joints_to_lie(&model.skeleton, &self.joints)?)
    }
}

/// Inputs of one batched rollout.
struct Rollout<'a> {
    /// `[T][B]` action per frame and sequence.
    actions: &'a [Vec<usize>],
    seed: u64,
    /// Replaces the prior draw at the first frame.
    first_latent: Option<&'a Tensor>,
    /// Ground-truth pose vectors consumed through the posterior, `P × [B, 3J+3]`.
    prefix: &'a [Tensor],
}

struct RolloutOutput {
    /// `[B][T]`
    frames: Vec<Vec<JointPose>>,
    clamped: usize,
}

impl Action2MotionModel {
    fn check_action(&self, a: usize) -> Result<(), TvaeError> {
        if a >= self.action_count() {
            return Err(TvaeError::UnknownAction(format!("action index {a}")));
        }
        Ok(())
    }

    /// Steps the prior and generator forward. Noise for every frame is drawn
    /// from one stream seeded by `seed`, in frame order, whether or not the
    /// frame uses it, so overriding a frame's latent leaves later draws intact.
    fn rollout(&self, r: Rollout<'_>) -> Result<RolloutOutput, TvaeError> {
        let length = r.actions.len();
        if length == 0 {
            return Err(TvaeError::InvalidArgument("length must be at least 1".into()));
        }
        let b = r.actions[0].len();
        for step in r.actions {
            if step.len() != b {
                return Err(TvaeError::InvalidArgument("ragged action schedule".into()));
            }
            for &a in step {
                self.check_action(a)?;
            }
        }
        let z = self.config.z_dim;
        let j3 = 3 * self.joint_count();
        let mut rng = ChaCha8Rng::seed_from_u64(r.seed);
        let mut tape = Tape::new();
        let mut state = self.initial_state(&mut tape, b);
        let mut frames: Vec<Vec<JointPose>> = vec![Vec::with_capacity(length); b];
        let mut clamped = 0;
        for t in 0..length {
            let eps: Vec<f64> = (0..b * z).map(|_| rng.sample(StandardNormal)).collect();
            let eps = tape.constant(Tensor::matrix(b, z, eps)?);
            let cond = tape.constant(self.condition(&r.actions[t], (t + 1) as f64 / length as f64));
            let enc_prev = self.encode(&mut tape, state.prev_input, cond)?;
            let (mu_p, lv_p, h_p) = self.prior_step(&mut tape, enc_prev, state.prior)?;
            let mut posterior = state.posterior;
            let latent = if t < r.prefix.len() {
                let gt = tape.constant(r.prefix[t].clone());
                let enc = self.encode(&mut tape, gt, cond)?;
                let (mu_q, lv_q, h_q) = self.posterior_step(&mut tape, enc, state.posterior)?;
                posterior = h_q;
                reparameterized_sample(&mut tape, mu_q, lv_q, eps)?
            } else if let (0, Some(zf)) = (t, r.first_latent) {
                if zf.shape() != [b, z] {
                    return Err(TvaeError::InvalidArgument(format!("latent shape {:?}", zf.shape())));
                }
                tape.constant(zf.clone())
            } else {
                reparameterized_sample(&mut tape, mu_p, lv_p, eps)?
            };
            let step = self.generator_step(&mut tape, latent, enc_prev, &state)?;
            clamped += step.clamped;

            let (prev_input, prev_offset) = if t < r.prefix.len() {
                let gt = r.prefix[t].clone();
                let offs = root_pinned(&gt, j3, self.skeleton.root());
                (tape.constant(gt), tape.constant(offs))
            } else {
                (step.next_input, step.offset.unwrap_or(state.prev_offset))
            };
            let pose = if t < r.prefix.len() { &r.prefix[t] } else { tape.value(step.pose) };
            for (i, out) in frames.iter_mut().enumerate() {
                out.push(JointPose::from_flat(&pose.row_slice(i)[..j3])?);
            }
            // the next step only needs values, so carry them onto a fresh tape
            let mut fresh = Tape::new();
            let mut carry = |v: Var| fresh.constant(tape.value(v).clone());
            state = StepState {
                posterior: carry(posterior),
                prior: carry(h_p),
                generator: step.generator.iter().map(|&h| carry(h)).collect(),
                backbone: step.backbone.map(&mut carry),
                prev_input: carry(prev_input),
                prev_offset: carry(prev_offset),
            };
            tape = fresh;
        }
        Ok(RolloutOutput { frames, clamped })
    }

    /// Samples a motion of `length` frames with every latent drawn from the
    /// learned prior. Frames are in the model frame: the first root starts
    /// from the origin.
    pub fn generate(&self, action: usize, length: usize, seed: u64) -> Result<GeneratedMotion, TvaeError> {
        self.generate_scheduled(&vec![action; length], seed, None)
    }

    /// Like [`generate`](Self::generate) with the first-frame latent given.
    pub fn generate_from_latent(
        &self,
        action: usize,
        latent: &Tensor,
        length: usize,
        seed: u64,
    ) -> Result<GeneratedMotion, TvaeError> {
        self.generate_scheduled(&vec![action; length], seed, Some(latent))
    }

    fn generate_scheduled(
        &self,
        actions: &[usize],
        seed: u64,
        first_latent: Option<&Tensor>,
    ) -> Result<GeneratedMotion, TvaeError> {
        let steps: Vec<Vec<usize>> = actions.iter().map(|&a| vec![a]).collect();
        let out = self.rollout(Rollout {
            actions: &steps,
            seed,
            first_latent,
            prefix: &[],
        })?;
        Ok(GeneratedMotion {
            joints: out.frames.into_iter().next().expect("one sequence"),
            actions: actions.to_vec(),
            clamped: out.clamped,
        })
    }

    /// Many sequences at once, one per entry of `actions`.
    pub fn generate_batch(&self, actions: &[usize], length: usize, seed: u64) -> Result<Vec<Vec<JointPose>>, TvaeError> {
        if actions.is_empty() {
            return Ok(vec![]);
        }
        let steps = vec![actions.to_vec(); length];
        Ok(self
            .rollout(Rollout {
                actions: &steps,
                seed,
                first_latent: None,
                prefix: &[],
            })?
            .frames)
    }

    /// The prior draw that `generate(action, length, seed)` uses at frame 1,
    /// shaped `[1, z]`.
    pub fn first_latent(&self, action: usize, length: usize, seed: u64) -> Result<Tensor, TvaeError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = self.config.z_dim;
        let eps: Vec<f64> = (0..z).map(|_| rng.sample(StandardNormal)).collect();
        self.check_action(action)?;
        let mut tape = Tape::new();
        let state = self.initial_state(&mut tape, 1);
        let cond = tape.constant(self.condition(&[action], 1.0 / length.max(1) as f64));
        let enc = self.encode(&mut tape, state.prev_input, cond)?;
        let (mu, lv, _) = self.prior_step(&mut tape, enc, state.prior)?;
        let eps = tape.constant(Tensor::matrix(1, z, eps)?);
        let zt = reparameterized_sample(&mut tape, mu, lv, eps)?;
        Ok(tape.value(zt).clone())
    }

    /// `k` motions whose first-frame latents run linearly from `z_a` to `z_b`;
    /// later frames share the noise stream of `seed`.
    pub fn interpolate(
        &self,
        action: usize,
        z_a: &Tensor,
        z_b: &Tensor,
        k: usize,
        length: usize,
        seed: u64,
    ) -> Result<Vec<GeneratedMotion>, TvaeError> {
        if k < 2 {
            return Err(TvaeError::InvalidArgument("interpolation needs k ≥ 2".into()));
        }
        if z_a.shape() != z_b.shape() {
            return Err(TvaeError::InvalidArgument("latent shapes differ".into()));
        }
        (0..k)
            .map(|i| {
                let s = i as f64 / (k - 1) as f64;
                let z = lerp(z_a, z_b, s);
                self.generate_from_latent(action, &z, length, seed)
            })
            .collect()
    }

    /// One motion whose action switches at the given frames. The schedule
    /// must start at frame 0 with strictly increasing frames below `length`.
    pub fn transition(&self, schedule: &[(usize, usize)], length: usize, seed: u64) -> Result<GeneratedMotion, TvaeError> {
        let bad = |m: String| Err(TvaeError::InvalidArgument(m));
        if schedule.is_empty() || schedule[0].1 != 0 {
            return bad("schedule must start at frame 0".into());
        }
        for w in schedule.windows(2) {
            if w[1].1 <= w[0].1 {
                return bad(format!("switch frames must increase: {} then {}", w[0].1, w[1].1));
            }
        }
        if let Some(&(_, last)) = schedule.last() {
            if last >= length {
                return bad(format!("switch frame {last} is past the end ({length} frames)"));
            }
        }
        let mut actions = Vec::with_capacity(length);
        for t in 0..length {
            let a = schedule.iter().rev().find(|(_, f)| *f <= t).expect("starts at 0").0;
            actions.push(a);
        }
        self.generate_scheduled(&actions, seed, None)
    }

    /// Continues `prefix` to `length` frames. The prefix drives every
    /// recurrent state as ground truth and is copied to the output unchanged;
    /// generated frames are placed in the prefix's world frame.
    pub fn outpaint(
        &self,
        prefix: &[JointPose],
        action: usize,
        length: usize,
        seed: u64,
    ) -> Result<GeneratedMotion, TvaeError> {
        if prefix.len() >= length {
            return Err(TvaeError::InvalidArgument(format!(
                "prefix of {} frames leaves nothing to generate in {length}",
                prefix.len()
            )));
        }
        let n = self.joint_count();
        if prefix.iter().any(|p| p.len() != n) {
            return Err(TvaeError::InvalidArgument("prefix joint count differs from the skeleton".into()));
        }
        let root = self.skeleton.root();
        let origin = prefix.first().map(|p| p.joints[root]).unwrap_or_else(Vec3::zeros);
        let vectors: Vec<Tensor> = prefix
            .iter()
            .enumerate()
            .map(|(t, p)| {
                let v = if t == 0 {
                    Vec3::zeros()
                } else {
                    p.joints[root] - prefix[t - 1].joints[root]
                };
                let mut x = p.translated(&-origin).to_flat();
                x.extend_from_slice(&[v.x, v.y, v.z]);
                Tensor::row(x)
            })
            .collect();
        let steps = vec![vec![action]; length];
        let out = self.rollout(Rollout {
            actions: &steps,
            seed,
            first_latent: None,
            prefix: &vectors,
        })?;
        let generated = out.frames.into_iter().next().expect("one sequence");
        let mut joints = prefix.to_vec();
        joints.extend(generated[prefix.len()..].iter().map(|f| f.translated(&origin)));
        Ok(GeneratedMotion {
            joints,
            actions: vec![action; length],
            clamped: out.clamped,
        })
    }
}

fn lerp(a: &Tensor, b: &Tensor, s: f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| (1.0 - s) * x + s * y).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

/// Joints minus their own root, from a `[B, 3J+3]` pose-vector tensor.
fn root_pinned(x: &Tensor, j3: usize, root: usize) -> Tensor {
    let mut out = Vec::with_capacity(x.rows() * j3);
    for r in 0..x.rows() {
        let row = &x.row_slice(r)[..j3];
        let o = [row[3 * root], row[3 * root + 1], row[3 * root + 2]];
        out.extend(row.iter().enumerate().map(|(k, v)| v - o[k % 3]));
    }
    Tensor::matrix(x.rows(), j3, out).expect("shape")
}
