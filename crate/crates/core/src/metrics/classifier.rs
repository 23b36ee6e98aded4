use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

use super::MetricsError;
use crate::autodiff::{adam_step, gru_cell, AdamConfig, AdamState, Checkpoint, GruParams, Linear, ParamStore, Tape, Tensor, Var};
use crate::datasets::{to_training_tensors, MotionDataset, PoseLayout};
use crate::lie::{JointPose, KinematicTree, SkeletonSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub hidden: usize,
    pub layers: usize,
    /// Width of the feature layer read by the distribution metrics.
    pub feature_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub window: usize,
    pub lr: f64,
    /// Fraction of subjects used for training; the rest is held out.
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            hidden: 128,
            layers: 2,
            feature_dim: 30,
            epochs: 30,
            batch_size: 32,
            window: 16,
            lr: 1e-3,
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

/// Recurrent action recognizer. Each frame is fed as root-centered joints
/// followed by the root displacement from the previous frame, so the
/// prediction does not depend on where the motion sits in the world.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionClassifier {
    pub config: ClassifierConfig,
    pub skeleton: KinematicTree,
    pub action_vocab: Vec<String>,
    pub store: ParamStore,
    grus: Vec<GruParams>,
    feature: Linear,
    head: Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierReport {
    pub final_loss: f64,
    pub train_accuracy: f64,
    /// `None` when the split leaves no held-out subject.
    pub held_out_accuracy: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    format: String,
    version: u32,
    skeleton: SkeletonSpec,
    action_vocab: Vec<String>,
    config: ClassifierConfig,
    report: Option<ClassifierReport>,
}

const SIDECAR_FORMAT: &str = "motionkit-classifier";

fn frame_inputs(frames: &[JointPose], root: usize) -> Vec<Vec<f64>> {
    frames
        .iter()
        .enumerate()
        .map(|(t, f)| {
            let r = f.joints[root];
            let mut x = f.translated(&-r).to_flat();
            let v = if t == 0 { crate::lie::Vec3::zeros() } else { r - frames[t - 1].joints[root] };
            x.extend_from_slice(&[v.x, v.y, v.z]);
            x
        })
        .collect()
}

impl MotionClassifier {
    pub fn new(config: ClassifierConfig, skeleton: KinematicTree, action_vocab: Vec<String>) -> Result<Self, MetricsError> {
        if action_vocab.is_empty() || config.hidden == 0 || config.layers == 0 || config.feature_dim == 0 {
            return Err(MetricsError::InvalidArgument("classifier needs actions and positive widths".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let input = 3 * skeleton.joint_count() + 3;
        let mut grus = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let i = if l == 0 { input } else { config.hidden };
            grus.push(GruParams::new(&mut store, &format!("gru{l}"), i, config.hidden, &mut rng)?);
        }
        let feature = Linear::new(&mut store, "feature", config.hidden, config.feature_dim, &mut rng)?;
        let head = Linear::new(&mut store, "head", config.feature_dim, action_vocab.len(), &mut rng)?;
        Ok(MotionClassifier {
            config,
            skeleton,
            action_vocab,
            store,
            grus,
            feature,
            head,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim
    }

    /// `(features, logits)` after the last of `T × [B, D]` frames.
    fn forward(&self, tape: &mut Tape, frames: &[Tensor]) -> Result<(Var, Var), MetricsError> {
        let b = frames[0].rows();
        let mut h: Vec<Var> = (0..self.grus.len())
            .map(|_| tape.constant(Tensor::zeros(&[b, self.config.hidden])))
            .collect();
        for x in frames {
            let mut inp = tape.constant(x.clone());
            for (l, g) in self.grus.iter().enumerate() {
                h[l] = gru_cell(tape, &self.store, g, inp, h[l])?;
                inp = h[l];
            }
        }
        let top = *h.last().expect("at least one layer");
        // features are read before the squashing, which saturates once the
        // classifier is confident
        let f = self.feature.forward(tape, &self.store, top)?;
        let a = tape.tanh(f);
        let logits = self.head.forward(tape, &self.store, a)?;
        Ok((f, logits))
    }

    /// Time-major tensors for motions that share one length.
    fn batch_frames(&self, motions: &[&[JointPose]]) -> Result<Vec<Tensor>, MetricsError> {
        let n = self.skeleton.joint_count();
        let len = motions[0].len();
        let inputs: Vec<Vec<Vec<f64>>> = motions
            .iter()
            .map(|m| {
                if m.len() != len || m.iter().any(|f| f.len() != n) {
                    return Err(MetricsError::InvalidArgument("motion shape differs from the classifier's".into()));
                }
                Ok(frame_inputs(m, self.skeleton.root()))
            })
            .collect::<Result<_, _>>()?;
        let d = 3 * n + 3;
        Ok((0..len)
            .map(|t| {
                let data = inputs.iter().flat_map(|m| m[t].iter().copied()).collect();
                Tensor::matrix(motions.len(), d, data).expect("shape")
            })
            .collect())
    }

    /// Runs `f` over groups of equal-length motions and scatters the
    /// per-motion results back into input order.
    fn per_motion<T: Clone>(
        &self,
        motions: &[Vec<JointPose>],
        f: impl Fn(&Tape, Var, Var, usize) -> T,
    ) -> Result<Vec<T>, MetricsError> {
        if motions.iter().any(|m| m.is_empty()) {
            return Err(MetricsError::InvalidArgument("motion has no frames".into()));
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, m) in motions.iter().enumerate() {
            groups.entry(m.len()).or_default().push(i);
        }
        let mut out: Vec<Option<T>> = vec![None; motions.len()];
        for idx in groups.values() {
            for chunk in idx.chunks(512) {
                let refs: Vec<&[JointPose]> = chunk.iter().map(|&i| motions[i].as_slice()).collect();
                let frames = self.batch_frames(&refs)?;
                let mut tape = Tape::new();
                let (feat, logits) = self.forward(&mut tape, &frames)?;
                for (row, &i) in chunk.iter().enumerate() {
                    out[i] = Some(f(&tape, feat, logits, row));
                }
            }
        }
        Ok(out.into_iter().map(|o| o.expect("every motion grouped")).collect())
    }

    /// Feature-layer pre-activations after each motion's last frame.
    pub fn features(&self, motions: &[Vec<JointPose>]) -> Result<Vec<DVector<f64>>, MetricsError> {
        self.per_motion(motions, |tape, feat, _, row| {
            DVector::from_row_slice(tape.value(feat).row_slice(row))
        })
    }

    pub fn extract_features(&self, motion: &[JointPose]) -> Result<DVector<f64>, MetricsError> {
        Ok(self.features(&[motion.to_vec()])?.remove(0))
    }

    /// Most likely action per motion; ties go to the lower index.
    pub fn predict(&self, motions: &[Vec<JointPose>]) -> Result<Vec<usize>, MetricsError> {
        self.per_motion(motions, |tape, _, logits, row| {
            let l = tape.value(logits).row_slice(row);
            (0..l.len()).fold(0, |best, k| if l[k] > l[best] { k } else { best })
        })
    }

    pub fn save(&self, checkpoint: &Path, sidecar: &Path, report: Option<ClassifierReport>) -> Result<(), MetricsError> {
        self.store.to_checkpoint().save(checkpoint)?;
        let side = Sidecar {
            format: SIDECAR_FORMAT.into(),
            version: 1,
            skeleton: self.skeleton.spec().clone(),
            action_vocab: self.action_vocab.clone(),
            config: self.config.clone(),
            report,
        };
        let text = serde_json::to_string_pretty(&side).map_err(|e| MetricsError::Io(e.to_string()))?;
        std::fs::write(sidecar, text).map_err(|e| MetricsError::Io(e.to_string()))
    }

    pub fn load(checkpoint: &Path, sidecar: &Path) -> Result<Self, MetricsError> {
        let text = std::fs::read_to_string(sidecar).map_err(|e| MetricsError::Io(e.to_string()))?;
        let side: Sidecar = serde_json::from_str(&text).map_err(|e| MetricsError::Io(e.to_string()))?;
        if side.format != SIDECAR_FORMAT || side.version != 1 {
            return Err(MetricsError::Io(format!("unsupported sidecar {} v{}", side.format, side.version)));
        }
        let tree = KinematicTree::new(side.skeleton).map_err(|e| MetricsError::InvalidArgument(e.to_string()))?;
        let mut c = MotionClassifier::new(side.config, tree, side.action_vocab)?;
        c.store.load_checkpoint(&Checkpoint::load(checkpoint)?)?;
        Ok(c)
    }
}

/// Fraction of motions the classifier assigns to their intended action.
pub fn recognition_accuracy(
    classifier: &MotionClassifier,
    motions: &[Vec<JointPose>],
    intended: &[usize],
) -> Result<f64, MetricsError> {
    if motions.len() != intended.len() {
        return Err(MetricsError::InvalidArgument("one label per motion".into()));
    }
    if motions.is_empty() {
        return Ok(0.0);
    }
    let pred = classifier.predict(motions)?;
    let hits = pred.iter().zip(intended).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / motions.len() as f64)
}

/// Trains on a subject-disjoint split and reports held-out accuracy on
/// whole clips.
pub fn train_classifier(
    dataset: &MotionDataset,
    config: &ClassifierConfig,
) -> Result<(MotionClassifier, ClassifierReport), MetricsError> {
    if dataset.is_empty() {
        return Err(MetricsError::EmptyDataset);
    }
    let (train_set, test_set) = dataset.split_by_subject(config.train_fraction)?;
    if train_set.is_empty() {
        return Err(MetricsError::EmptyDataset);
    }
    let mut model = MotionClassifier::new(config.clone(), dataset.skeleton.clone(), dataset.action_vocab.clone())?;
    let seqs = to_training_tensors(&train_set, PoseLayout::RootCentered, config.window, config.seed)?;
    // padded frames repeat the last real frame with zero velocity, which the
    // recurrent state absorbs; the label is still the clip's
    let frames: Vec<Vec<Vec<f64>>> = (0..seqs.len())
        .map(|i| {
            (0..seqs.window)
                .map(|t| {
                    let v = seqs.velocities[i][t];
                    let mut x = seqs.poses[i][t].clone();
                    x.extend_from_slice(&[v.x, v.y, v.z]);
                    x
                })
                .collect()
        })
        .collect();
    let d = 3 * seqs.joint_count + 3;
    let adam_cfg = AdamConfig {
        lr: config.lr,
        weight_decay: 0.0,
        ..AdamConfig::default()
    };
    let mut adam = AdamState::new(&model.store);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    let mut final_loss = f64::NAN;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for rows in order.chunks(config.batch_size.max(1)) {
            let batch: Vec<Tensor> = (0..seqs.window)
                .map(|t| {
                    let data = rows.iter().flat_map(|&i| frames[i][t].iter().copied()).collect();
                    Tensor::matrix(rows.len(), d, data).expect("shape")
                })
                .collect();
            let labels: Vec<usize> = rows.iter().map(|&i| seqs.labels[i]).collect();
            let mut tape = Tape::new();
            let (_, logits) = model.forward(&mut tape, &batch)?;
            let loss = tape.softmax_cross_entropy(logits, &labels)?;
            total += tape.value(loss).item() * rows.len() as f64;
            let g = tape.backward(loss).param_grads(&tape, &model.store);
            drop(tape);
            adam_step(model.store.values_mut(), &g, &mut adam, &adam_cfg)?;
        }
        final_loss = total / seqs.len() as f64;
        if !final_loss.is_finite() {
            return Err(MetricsError::InvalidArgument("classifier training diverged".into()));
        }
    }
    let clips = |ds: &MotionDataset| -> (Vec<Vec<JointPose>>, Vec<usize>) {
        (ds.clips.iter().map(|c| c.frames.clone()).collect(), ds.clips.iter().map(|c| c.action).collect())
    };
    let (m, l) = clips(&train_set);
    let train_accuracy = recognition_accuracy(&model, &m, &l)?;
    let held_out_accuracy = if test_set.is_empty() {
        None
    } else {
        let (m, l) = clips(&test_set);
        Some(recognition_accuracy(&model, &m, &l)?)
    };
    Ok((
        model,
        ClassifierReport {
            final_loss,
            train_accuracy,
            held_out_accuracy,
        },
    ))
}
