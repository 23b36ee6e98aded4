use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::model::{Action2MotionModel, StepState};
use super::TvaeError;
use crate::autodiff::{
    adam_step, clip_grad_norm, kl_diag_gaussians_rows, reparameterized_sample, AdamConfig, AdamState, Tape, Tensor,
    Var,
};
use crate::datasets::{to_training_tensors, MotionDataset, PoseLayout, TrainingSequences};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Probability that a sequence is trained with ground-truth previous poses.
    pub teacher_forcing: f64,
    pub kl_start: f64,
    pub kl_end: f64,
    pub lambda_align: f64,
    pub window: usize,
    pub adam: AdamConfig,
    /// Optional cap on the global gradient norm.
    pub grad_clip: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 128,
            teacher_forcing: 0.6,
            kl_start: 0.001,
            kl_end: 0.01,
            lambda_align: 10.0,
            window: 16,
            adam: AdamConfig::default(),
            grad_clip: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TvaeError> {
        let bad = |m: &str| Err(TvaeError::InvalidArgument(m.to_string()));
        if !(0.0..=1.0).contains(&self.teacher_forcing) {
            return bad("teacher_forcing must lie in [0, 1]");
        }
        if self.kl_start < 0.0 || self.kl_end < 0.0 || self.lambda_align < 0.0 {
            return bad("loss weights must be non-negative");
        }
        if self.batch_size == 0 || self.window == 0 {
            return bad("batch_size and window must be positive");
        }
        Ok(())
    }

    /// Linear KL weight over the epoch budget.
    pub fn kl_weight(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.kl_end;
        }
        let s = epoch.min(self.epochs - 1) as f64 / (self.epochs - 1) as f64;
        self.kl_start + (self.kl_end - self.kl_start) * s
    }
}

/// A batch in time-major form.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    /// `T × [B, 3J + 3]` pose vectors.
    pub inputs: Vec<Tensor>,
    /// `T × [B, 3J]` root-pinned poses.
    pub offsets: Vec<Tensor>,
    /// `T × [B, 1]`.
    pub masks: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub window: usize,
}

impl SequenceBatch {
    pub fn from_sequences(seqs: &TrainingSequences, rows: &[usize]) -> Self {
        let j3 = 3 * seqs.joint_count;
        let root = seqs.root;
        let b = rows.len();
        let mut inputs = Vec::with_capacity(seqs.window);
        let mut offsets = Vec::with_capacity(seqs.window);
        let mut masks = Vec::with_capacity(seqs.window);
        for t in 0..seqs.window {
            let mut x = Vec::with_capacity(b * (j3 + 3));
            let mut o = Vec::with_capacity(b * j3);
            let mut m = Vec::with_capacity(b);
            for &i in rows {
                let p = &seqs.poses[i][t];
                x.extend_from_slice(p);
                let v = seqs.velocities[i][t];
                x.extend_from_slice(&[v.x, v.y, v.z]);
                let r = [p[3 * root], p[3 * root + 1], p[3 * root + 2]];
                o.extend(p.iter().enumerate().map(|(k, val)| val - r[k % 3]));
                m.push(seqs.masks[i][t]);
            }
            inputs.push(Tensor::matrix(b, j3 + 3, x).expect("shape"));
            offsets.push(Tensor::matrix(b, j3, o).expect("shape"));
            masks.push(Tensor::matrix(b, 1, m).expect("shape"));
        }
        SequenceBatch {
            inputs,
            offsets,
            masks,
            labels: rows.iter().map(|&i| seqs.labels[i]).collect(),
            window: seqs.window,
        }
    }

    pub fn batch_size(&self) -> usize {
        self.labels.len()
    }
}

/// The random inputs of one ELBO evaluation, fixed so the loss is a
/// deterministic function of the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ElboNoise {
    /// `T × [B, z]` standard normal draws.
    pub eps: Vec<Tensor>,
    /// `[B, 1]`, 1 where the sequence is teacher-forced.
    pub forcing: Tensor,
}

impl ElboNoise {
    pub fn draw(batch: usize, window: usize, z_dim: usize, teacher_forcing: f64, rng: &mut impl Rng) -> Self {
        let forcing = (0..batch)
            .map(|_| if rng.random_bool(teacher_forcing) { 1.0 } else { 0.0 })
            .collect();
        let eps = (0..window)
            .map(|_| {
                Tensor::matrix(batch, z_dim, (0..batch * z_dim).map(|_| rng.sample(StandardNormal)).collect())
                    .expect("shape")
            })
            .collect();
        ElboNoise {
            eps,
            forcing: Tensor::matrix(batch, 1, forcing).expect("shape"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub kl: f64,
    pub align: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboVars {
    pub total: Var,
    pub recon: Var,
    pub kl: Var,
    pub align: Var,
    pub clamped: usize,
}

impl Action2MotionModel {
    /// Builds the training objective on `tape`:
    /// `recon + λ_kl · KL(posterior ‖ prior) + λ_align · ‖V − V̂‖`.
    /// Reconstruction is the per-joint Euclidean error summed over joints;
    /// every term is averaged over unmasked frames and sequences.
    pub fn elbo_on_tape(
        &self,
        tape: &mut Tape,
        batch: &SequenceBatch,
        noise: &ElboNoise,
        weights: LossWeights,
    ) -> Result<ElboVars, TvaeError> {
        let b = batch.batch_size();
        let j3 = 3 * self.joint_count();
        if batch.inputs.first().map(|t| t.shape()) != Some(&[b, j3 + 3][..]) || noise.eps.len() != batch.window {
            return Err(TvaeError::InvalidArgument("batch does not match the model layout".into()));
        }
        let forcing = noise.forcing.data();
        let all_forced = forcing.iter().all(|&f| f == 1.0);
        let none_forced = forcing.iter().all(|&f| f == 0.0);
        let free = tape.constant(noise.forcing.map(|f| 1.0 - f));
        let scale_rows = |t: &Tensor| {
            let c = t.cols();
            let mut d = t.data().to_vec();
            for (row, f) in d.chunks_exact_mut(c).zip(forcing) {
                row.iter_mut().for_each(|v| *v *= f);
            }
            Tensor::matrix(t.rows(), c, d).expect("shape")
        };

        let mut state = self.initial_state(tape, b);
        let mut recon_terms = Vec::with_capacity(batch.window);
        let mut kl_terms = Vec::with_capacity(batch.window);
        let mut align_terms = Vec::with_capacity(batch.window);
        let mut clamped = 0;
        let mask_total: f64 = batch.masks.iter().map(|m| m.sum()).sum::<f64>().max(1.0);
        let actions = &batch.labels;

        for t in 0..batch.window {
            let cond = tape.constant(self.condition(actions, (t + 1) as f64 / batch.window as f64));
            let gt = tape.constant(batch.inputs[t].clone());
            let mask = tape.constant(batch.masks[t].clone());

            let enc_cur = self.encode(tape, gt, cond)?;
            let enc_prev = self.encode(tape, state.prev_input, cond)?;
            let (mu_q, lv_q, h_q) = self.posterior_step(tape, enc_cur, state.posterior)?;
            let (mu_p, lv_p, h_p) = self.prior_step(tape, enc_prev, state.prior)?;
            let eps = tape.constant(noise.eps[t].clone());
            let z = reparameterized_sample(tape, mu_q, lv_q, eps)?;
            let step = self.generator_step(tape, z, enc_prev, &state)?;
            clamped += step.clamped;

            let gt_pose = tape.constant(Tensor::matrix(b, j3, slice_cols(&batch.inputs[t], 0, j3)).expect("shape"));
            let diff = tape.sub(step.pose, gt_pose)?;
            let per_joint = tape.l2_norm_groups(diff, 3)?;
            let per_row = tape.sum_cols(per_joint);
            recon_terms.push(tape.mul(per_row, mask)?);

            let kl = kl_diag_gaussians_rows(tape, mu_q, lv_q, mu_p, lv_p)?;
            kl_terms.push(tape.mul(kl, mask)?);

            if self.config.decoder.is_glmi() {
                let gt_v =
                    tape.constant(Tensor::matrix(b, 3, slice_cols(&batch.inputs[t], j3, j3 + 3)).expect("shape"));
                let dv = tape.sub(step.velocity, gt_v)?;
                let n = tape.l2_norm(dv)?;
                align_terms.push(tape.mul(n, mask)?);
            }

            let mix = |tape: &mut Tape, gt: &Tensor, gen: Var| -> Result<Var, TvaeError> {
                if all_forced {
                    return Ok(tape.constant(gt.clone()));
                }
                if none_forced {
                    return Ok(gen);
                }
                let forced = tape.constant(scale_rows(gt));
                let g = tape.mul_col(gen, free)?;
                Ok(tape.add(forced, g)?)
            };
            let prev_input = mix(tape, &batch.inputs[t], step.next_input)?;
            let prev_offset = match step.offset {
                Some(o) => mix(tape, &batch.offsets[t], o)?,
                None => state.prev_offset,
            };
            state = StepState {
                posterior: h_q,
                prior: h_p,
                generator: step.generator,
                backbone: step.backbone,
                prev_input,
                prev_offset,
            };
        }

        let average = |tape: &mut Tape, terms: &[Var]| -> Result<Var, TvaeError> {
            if terms.is_empty() {
                return Ok(tape.constant(Tensor::scalar(0.0)));
            }
            let all = tape.concat_rows(terms)?;
            let s = tape.sum(all);
            Ok(tape.scale(s, 1.0 / mask_total))
        };
        let recon = average(tape, &recon_terms)?;
        let kl = average(tape, &kl_terms)?;
        let align = average(tape, &align_terms)?;
        let wkl = tape.scale(kl, weights.kl);
        let wal = tape.scale(align, weights.align);
        let total = tape.add(recon, wkl)?;
        let total = tape.add(total, wal)?;
        Ok(ElboVars {
            total,
            recon,
            kl,
            align,
            clamped,
        })
    }

    /// Loss values without gradients.
    pub fn elbo(&self, batch: &SequenceBatch, noise: &ElboNoise, weights: LossWeights) -> Result<EpochStats, TvaeError> {
        let mut tape = Tape::new();
        let v = self.elbo_on_tape(&mut tape, batch, noise, weights)?;
        Ok(EpochStats {
            epoch: 0,
            total: tape.value(v.total).item(),
            recon: tape.value(v.recon).item(),
            kl: tape.value(v.kl).item(),
            align: tape.value(v.align).item(),
            lambda_kl: weights.kl,
            clamped: v.clamped,
        })
    }
}

fn slice_cols(t: &Tensor, start: usize, end: usize) -> Vec<f64> {
    let c = t.cols();
    t.data().chunks_exact(c).flat_map(|r| r[start..end].iter().copied()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
    pub align: f64,
    pub lambda_kl: f64,
    /// Lie vectors rescaled to norm π during the epoch.
    pub clamped: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

/// Trains in place. Each sequence draws its teacher-forcing mode once per
/// epoch; the KL weight ramps linearly across the epoch budget.
pub fn train(
    model: &mut Action2MotionModel,
    data: &MotionDataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainHistory, TvaeError> {
    config.validate()?;
    if data.is_empty() {
        return Err(TvaeError::EmptyDataset);
    }
    if data.action_vocab != model.action_vocab || data.skeleton.hash() != model.skeleton.hash() {
        return Err(TvaeError::InvalidArgument(
            "dataset skeleton or vocabulary differs from the model's".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let seqs = to_training_tensors(data, PoseLayout::Absolute, config.window, config.seed)?;
    let mut adam = AdamState::new(&model.store);
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let weights = LossWeights {
            kl: config.kl_weight(epoch),
            align: if model.config.decoder.is_glmi() { config.lambda_align } else { 0.0 },
        };
        let mut stats = EpochStats {
            epoch,
            total: 0.0,
            recon: 0.0,
            kl: 0.0,
            align: 0.0,
            lambda_kl: weights.kl,
            clamped: 0,
        };
        let mut seen = 0.0;
        for rows in order.chunks(config.batch_size) {
            let batch = SequenceBatch::from_sequences(&seqs, rows);
            let noise = ElboNoise::draw(rows.len(), config.window, model.config.z_dim, config.teacher_forcing, &mut rng);
            let mut tape = Tape::new();
            let v = model.elbo_on_tape(&mut tape, &batch, &noise, weights)?;
            let grads = tape.backward(v.total);
            let mut g = grads.param_grads(&tape, &model.store);
            if let Some(c) = config.grad_clip {
                clip_grad_norm(&mut g, c);
            }
            let w = rows.len() as f64;
            stats.total += w * tape.value(v.total).item();
            stats.recon += w * tape.value(v.recon).item();
            stats.kl += w * tape.value(v.kl).item();
            stats.align += w * tape.value(v.align).item();
            stats.clamped += v.clamped;
            seen += w;
            drop(tape);
            adam_step(model.store.values_mut(), &g, &mut adam, &config.adam)?;
        }
        stats.total /= seen;
        stats.recon /= seen;
        stats.kl /= seen;
        stats.align /= seen;
        if !stats.total.is_finite() {
            return Err(TvaeError::Diverged(epoch));
        }
        on_epoch(&stats);
        history.epochs.push(stats);
    }
    Ok(history)
}
