use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::str::FromStr;

use super::TvaeError;
use crate::autodiff::{gru_cell, Checkpoint, GruParams, Linear, ParamStore, Tape, Tensor, Var};
use crate::lie::{KinematicTree, SkeletonSpec};

/// How the generator's decoder output becomes joint positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoseDecoder {
    /// Joint coordinates emitted directly.
    Plain,
    /// Lie vectors through forward kinematics, plus an emitted root position.
    Lie,
    /// Lie vectors for a root-pinned pose; root velocity inferred by an MLP.
    GlmiM,
    /// As `GlmiM` with a recurrent velocity backbone.
    GlmiR,
}

impl PoseDecoder {
    pub fn is_glmi(self) -> bool {
        matches!(self, PoseDecoder::GlmiM | PoseDecoder::GlmiR)
    }

    pub fn name(self) -> &'static str {
        match self {
            PoseDecoder::Plain => "plain",
            PoseDecoder::Lie => "lie",
            PoseDecoder::GlmiM => "glmi_m",
            PoseDecoder::GlmiR => "glmi_r",
        }
    }
}

impl FromStr for PoseDecoder {
    type Err = TvaeError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "plain" => Ok(PoseDecoder::Plain),
            "lie" => Ok(PoseDecoder::Lie),
            "glmi_m" | "glmi-m" => Ok(PoseDecoder::GlmiM),
            "glmi_r" | "glmi-r" => Ok(PoseDecoder::GlmiR),
            other => Err(TvaeError::InvalidArgument(format!("unknown decoder variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub decoder: PoseDecoder,
    /// Width of the encoder output, every recurrent unit and the decoder.
    pub hidden: usize,
    pub z_dim: usize,
    /// Width of the GLMI hidden feature emitted next to the Lie block.
    pub h_o_dim: usize,
    pub generator_layers: usize,
    /// Log-variances are clamped to `±logvar_bound`.
    pub logvar_bound: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            decoder: PoseDecoder::GlmiM,
            hidden: 128,
            z_dim: 30,
            h_o_dim: 20,
            generator_layers: 2,
            logvar_bound: 10.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Backbone {
    None,
    Mlp(Linear, Linear),
    Gru(GruParams, Linear),
}

/// Posterior, learned prior and generator sharing one pose encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Action2MotionModel {
    pub config: ModelConfig,
    pub skeleton: KinematicTree,
    pub action_vocab: Vec<String>,
    pub store: ParamStore,
    pub(crate) encoder: [Linear; 2],
    pub(crate) posterior: GruParams,
    pub(crate) posterior_head: Linear,
    pub(crate) prior: GruParams,
    pub(crate) prior_head: Linear,
    pub(crate) generator: Vec<GruParams>,
    pub(crate) decoder: [Linear; 2],
    pub(crate) backbone: Backbone,
}

/// Recurrent state of one rollout, as tape variables.
#[derive(Debug, Clone)]
pub(crate) struct StepState {
    pub posterior: Var,
    pub prior: Var,
    pub generator: Vec<Var>,
    pub backbone: Option<Var>,
    /// Previous pose vector (joints then root velocity), zero at the start.
    pub prev_input: Var,
    /// Previous root-pinned pose, zero at the start.
    pub prev_offset: Var,
}

/// One generator step's results.
#[derive(Debug, Clone)]
pub(crate) struct GenStep {
    /// Absolute joints `[B, 3J]`.
    pub pose: Var,
    /// Root displacement from the previous pose `[B, 3]`.
    pub velocity: Var,
    /// Root-pinned pose (GLMI variants).
    pub offset: Option<Var>,
    /// `[pose, velocity]`, the next step's input.
    pub next_input: Var,
    pub generator: Vec<Var>,
    pub backbone: Option<Var>,
    /// Lie vectors rescaled to norm π in this step.
    pub clamped: usize,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    format: String,
    version: u32,
    skeleton: SkeletonSpec,
    skeleton_hash: String,
    action_vocab: Vec<String>,
    model: ModelConfig,
    training: Option<serde_json::Value>,
}

const SIDECAR_FORMAT: &str = "motionkit-tvae";

impl Action2MotionModel {
    pub fn new(config: ModelConfig, skeleton: KinematicTree, action_vocab: Vec<String>) -> Result<Self, TvaeError> {
        if action_vocab.is_empty() {
            return Err(TvaeError::InvalidArgument("empty action vocabulary".into()));
        }
        if config.hidden == 0 || config.z_dim == 0 || config.generator_layers == 0 {
            return Err(TvaeError::InvalidArgument("hidden, z_dim and generator_layers must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let h = config.hidden;
        let j3 = 3 * skeleton.joint_count();
        let n3 = 3 * skeleton.bone_count();
        let pose_dim = j3 + 3;
        let enc_in = pose_dim + action_vocab.len() + 1;
        let encoder = [
            Linear::new(&mut store, "encoder.0", enc_in, h, &mut rng)?,
            Linear::new(&mut store, "encoder.1", h, h, &mut rng)?,
        ];
        let posterior = GruParams::new(&mut store, "posterior.gru", h, h, &mut rng)?;
        let posterior_head = Linear::new(&mut store, "posterior.head", h, 2 * config.z_dim, &mut rng)?;
        let prior = GruParams::new(&mut store, "prior.gru", h, h, &mut rng)?;
        let prior_head = Linear::new(&mut store, "prior.head", h, 2 * config.z_dim, &mut rng)?;
        let mut generator = Vec::with_capacity(config.generator_layers);
        for l in 0..config.generator_layers {
            let input = if l == 0 { h + config.z_dim } else { h };
            generator.push(GruParams::new(&mut store, &format!("generator.gru{l}"), input, h, &mut rng)?);
        }
        let out_dim = match config.decoder {
            PoseDecoder::Plain => j3,
            PoseDecoder::Lie => n3 + 3,
            PoseDecoder::GlmiM | PoseDecoder::GlmiR => n3 + config.h_o_dim,
        };
        let decoder = [
            Linear::new(&mut store, "decoder.0", h, h, &mut rng)?,
            Linear::new(&mut store, "decoder.1", h, out_dim, &mut rng)?,
        ];
        let bb_in = 2 * j3 + config.h_o_dim;
        let backbone = match config.decoder {
            PoseDecoder::GlmiM => Backbone::Mlp(
                Linear::new(&mut store, "backbone.0", bb_in, h, &mut rng)?,
                Linear::new(&mut store, "backbone.1", h, 3, &mut rng)?,
            ),
            PoseDecoder::GlmiR => Backbone::Gru(
                GruParams::new(&mut store, "backbone.gru", bb_in, h, &mut rng)?,
                Linear::new(&mut store, "backbone.head", h, 3, &mut rng)?,
            ),
            _ => Backbone::None,
        };
        Ok(Action2MotionModel {
            config,
            skeleton,
            action_vocab,
            store,
            encoder,
            posterior,
            posterior_head,
            prior,
            prior_head,
            generator,
            decoder,
            backbone,
        })
    }

    pub fn action_count(&self) -> usize {
        self.action_vocab.len()
    }

    pub fn action_index(&self, name: &str) -> Result<usize, TvaeError> {
        self.action_vocab
            .iter()
            .position(|a| a == name)
            .ok_or_else(|| TvaeError::UnknownAction(name.to_string()))
    }

    pub fn joint_count(&self) -> usize {
        self.skeleton.joint_count()
    }

    /// Joints then root velocity.
    pub fn pose_dim(&self) -> usize {
        3 * self.joint_count() + 3
    }

    /// Writes the parameter checkpoint and a JSON sidecar describing the
    /// skeleton, vocabulary and configuration.
    pub fn save(&self, checkpoint: &Path, sidecar: &Path, training: Option<serde_json::Value>) -> Result<(), TvaeError> {
        self.store.to_checkpoint().save(checkpoint)?;
        let side = Sidecar {
            format: SIDECAR_FORMAT.into(),
            version: 1,
            skeleton: self.skeleton.spec().clone(),
            skeleton_hash: self.skeleton.hash(),
            action_vocab: self.action_vocab.clone(),
            model: self.config.clone(),
            training,
        };
        let text = serde_json::to_string_pretty(&side).map_err(|e| TvaeError::Checkpoint(e.to_string()))?;
        std::fs::write(sidecar, text).map_err(|e| TvaeError::Checkpoint(e.to_string()))?;
        Ok(())
    }

    pub fn load(checkpoint: &Path, sidecar: &Path) -> Result<Self, TvaeError> {
        let text = std::fs::read_to_string(sidecar).map_err(|e| TvaeError::Checkpoint(e.to_string()))?;
        let side: Sidecar = serde_json::from_str(&text).map_err(|e| TvaeError::Checkpoint(e.to_string()))?;
        if side.format != SIDECAR_FORMAT || side.version != 1 {
            return Err(TvaeError::Checkpoint(format!("unsupported sidecar {} v{}", side.format, side.version)));
        }
        let tree = KinematicTree::new(side.skeleton)?;
        if tree.hash() != side.skeleton_hash {
            return Err(TvaeError::Checkpoint("skeleton hash mismatch".into()));
        }
        let mut model = Action2MotionModel::new(side.model, tree, side.action_vocab)?;
        model.store.load_checkpoint(&Checkpoint::load(checkpoint)?)?;
        Ok(model)
    }

    /// Shared pose encoder on `[pose, one-hot action, counter]`.
    pub(crate) fn encode(&self, tape: &mut Tape, pose: Var, cond: Var) -> Result<Var, TvaeError> {
        let x = tape.concat_cols(&[pose, cond])?;
        let h = self.encoder[0].forward(tape, &self.store, x)?;
        let h = tape.tanh(h);
        Ok(self.encoder[1].forward(tape, &self.store, h)?)
    }

    fn gaussian_head(&self, tape: &mut Tape, head: &Linear, h: Var) -> Result<(Var, Var), TvaeError> {
        let out = head.forward(tape, &self.store, h)?;
        let z = self.config.z_dim;
        let mu = tape.slice_cols(out, 0, z)?;
        let lv = tape.slice_cols(out, z, 2 * z)?;
        let b = self.config.logvar_bound;
        Ok((mu, tape.clamp(lv, -b, b)))
    }

    /// Returns `(mu, logvar, new hidden)` from the encoded current pose.
    pub(crate) fn posterior_step(&self, tape: &mut Tape, enc: Var, h: Var) -> Result<(Var, Var, Var), TvaeError> {
        let h = gru_cell(tape, &self.store, &self.posterior, enc, h)?;
        let (mu, lv) = self.gaussian_head(tape, &self.posterior_head, h)?;
        Ok((mu, lv, h))
    }

    /// Returns `(mu, logvar, new hidden)` from the encoded previous pose.
    pub(crate) fn prior_step(&self, tape: &mut Tape, enc_prev: Var, h: Var) -> Result<(Var, Var, Var), TvaeError> {
        let h = gru_cell(tape, &self.store, &self.prior, enc_prev, h)?;
        let (mu, lv) = self.gaussian_head(tape, &self.prior_head, h)?;
        Ok((mu, lv, h))
    }

    pub(crate) fn initial_state(&self, tape: &mut Tape, batch: usize) -> StepState {
        let h = self.config.hidden;
        let zeros = |tape: &mut Tape, c: usize| tape.constant(Tensor::zeros(&[batch, c]));
        StepState {
            posterior: zeros(tape, h),
            prior: zeros(tape, h),
            generator: (0..self.config.generator_layers).map(|_| zeros(tape, h)).collect(),
            backbone: matches!(self.backbone, Backbone::Gru(..)).then(|| zeros(tape, h)),
            prev_input: zeros(tape, self.pose_dim()),
            prev_offset: zeros(tape, 3 * self.joint_count()),
        }
    }

    /// Root columns of a pose or pose-vector variable.
    fn root_of(&self, tape: &mut Tape, pose: Var) -> Result<Var, TvaeError> {
        let r = self.skeleton.root();
        Ok(tape.slice_cols(pose, 3 * r, 3 * r + 3)?)
    }

    /// Repeats a `[B, 3]` offset over all joints, giving `[B, 3J]`.
    fn broadcast_joints(&self, tape: &mut Tape, v: Var) -> Result<Var, TvaeError> {
        let idx: Vec<usize> = (0..3 * self.joint_count()).map(|i| i % 3).collect();
        Ok(tape.gather_cols(v, &idx)?)
    }

    /// Forward kinematics on the tape with the root at the origin and
    /// identity root orientation. Lie vectors are first rescaled to norm ≤ π.
    pub(crate) fn fk_on_tape(&self, tape: &mut Tape, lie: Var) -> Result<(Var, usize), TvaeError> {
        let (lie, clamped) = tape.clamp_norm3(lie, std::f64::consts::PI)?;
        let batch = tape.shape(lie).0;
        let tree = &self.skeleton;
        let mut pos: Vec<Option<Var>> = vec![None; tree.joint_count()];
        let mut rot: Vec<Option<Var>> = vec![None; tree.joint_count()];
        pos[tree.root()] = Some(tape.constant(Tensor::zeros(&[batch, 3])));
        for (b, bone) in tree.bones().iter().enumerate() {
            let w = tape.slice_cols(lie, 3 * b, 3 * b + 3)?;
            let r_local = tape.so3_exp(w)?;
            let r = match rot[bone.parent] {
                Some(rp) => tape.batch_matmul(rp, r_local, 3, 3, 3)?,
                None => r_local,
            };
            // first column of the row-major 3×3 block
            let axis = tape.gather_cols(r, &[0, 3, 6])?;
            let step = tape.scale(axis, tree.bone_lengths()[b]);
            let parent = pos[bone.parent].expect("bones are ordered parent first");
            pos[bone.child] = Some(tape.add(parent, step)?);
            rot[bone.child] = Some(r);
        }
        let parts: Vec<Var> = pos.into_iter().map(|p| p.expect("every joint placed")).collect();
        Ok((tape.concat_cols(&parts)?, clamped))
    }

    /// Generator GRU stack, decoder and pose decoding for one step.
    pub(crate) fn generator_step(
        &self,
        tape: &mut Tape,
        z: Var,
        enc_prev: Var,
        state: &StepState,
    ) -> Result<GenStep, TvaeError> {
        let mut x = tape.concat_cols(&[enc_prev, z])?;
        let mut gen_h = Vec::with_capacity(self.generator.len());
        for (p, h) in self.generator.iter().zip(&state.generator) {
            x = gru_cell(tape, &self.store, p, x, *h)?;
            gen_h.push(x);
        }
        let d = self.decoder[0].forward(tape, &self.store, x)?;
        let d = tape.tanh(d);
        let out = self.decoder[1].forward(tape, &self.store, d)?;

        let n3 = 3 * self.skeleton.bone_count();
        let prev_root = self.root_of(tape, state.prev_input)?;
        let (pose, velocity, offset, backbone, clamped) = match self.config.decoder {
            PoseDecoder::Plain => {
                let root = self.root_of(tape, out)?;
                let v = tape.sub(root, prev_root)?;
                (out, v, None, None, 0)
            }
            PoseDecoder::Lie => {
                let lie = tape.slice_cols(out, 0, n3)?;
                let root = tape.slice_cols(out, n3, n3 + 3)?;
                let (local, clamped) = self.fk_on_tape(tape, lie)?;
                let shift = self.broadcast_joints(tape, root)?;
                let pose = tape.add(local, shift)?;
                let v = tape.sub(root, prev_root)?;
                (pose, v, None, None, clamped)
            }
            PoseDecoder::GlmiM | PoseDecoder::GlmiR => {
                let lie = tape.slice_cols(out, 0, n3)?;
                let h_o = tape.slice_cols(out, n3, n3 + self.config.h_o_dim)?;
                let (local, clamped) = self.fk_on_tape(tape, lie)?;
                let feat = tape.concat_cols(&[local, state.prev_offset, h_o])?;
                let (v, bb) = match &self.backbone {
                    Backbone::Mlp(l0, l1) => {
                        let a = l0.forward(tape, &self.store, feat)?;
                        let a = tape.tanh(a);
                        (l1.forward(tape, &self.store, a)?, None)
                    }
                    Backbone::Gru(g, head) => {
                        let h = state.backbone.expect("recurrent backbone state");
                        let h = gru_cell(tape, &self.store, g, feat, h)?;
                        (head.forward(tape, &self.store, h)?, Some(h))
                    }
                    Backbone::None => unreachable!("GLMI decoders always carry a backbone"),
                };
                // p̂ = p̂ᵒ + J₀,ₜ₋₁ + V̂
                let root = tape.add(prev_root, v)?;
                let shift = self.broadcast_joints(tape, root)?;
                let pose = tape.add(local, shift)?;
                (pose, v, Some(local), bb, clamped)
            }
        };
        let next_input = tape.concat_cols(&[pose, velocity])?;
        Ok(GenStep {
            pose,
            velocity,
            offset,
            next_input,
            generator: gen_h,
            backbone,
            clamped,
        })
    }

    /// `[one-hot, counter]` rows for a batch.
    pub(crate) fn condition(&self, actions: &[usize], counter: f64) -> Tensor {
        let c = self.action_count();
        let mut data = vec![0.0; actions.len() * (c + 1)];
        for (i, &a) in actions.iter().enumerate() {
            data[i * (c + 1) + a] = 1.0;
            data[i * (c + 1) + c] = counter;
        }
        Tensor::matrix(actions.len(), c + 1, data).expect("shape")
    }
}
