use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{diversity, fid, multimodality, recognition_accuracy, MetricsError, MotionClassifier};
use super::{DIVERSITY_PAIRS, MULTIMODALITY_PAIRS};
use crate::datasets::MotionDataset;
use crate::lie::JointPose;
use crate::tvae::Action2MotionModel;

/// Anything that can produce motions for requested actions.
pub trait MotionSource {
    fn sample(&self, actions: &[usize], length: usize, seed: u64) -> Result<Vec<Vec<JointPose>>, MetricsError>;
}

impl MotionSource for Action2MotionModel {
    fn sample(&self, actions: &[usize], length: usize, seed: u64) -> Result<Vec<Vec<JointPose>>, MetricsError> {
        // bounded batches keep the per-step tensors small
        let mut out = Vec::with_capacity(actions.len());
        for (k, chunk) in actions.chunks(500).enumerate() {
            out.extend(self.generate_batch(chunk, length, seed.wrapping_add(k as u64))?);
        }
        Ok(out)
    }
}

/// Clips of a dataset drawn with replacement, each cut to a random window.
pub struct DatasetSource<'a>(pub &'a MotionDataset);

impl MotionSource for DatasetSource<'_> {
    fn sample(&self, actions: &[usize], length: usize, seed: u64) -> Result<Vec<Vec<JointPose>>, MetricsError> {
        let by_class: Vec<Vec<usize>> = (0..self.0.action_vocab.len())
            .map(|a| (0..self.0.len()).filter(|&i| self.0.clips[i].action == a).collect())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        actions
            .iter()
            .map(|&a| {
                let pool = by_class.get(a).filter(|p| !p.is_empty()).ok_or(MetricsError::MissingClass(a))?;
                let clip = &self.0.clips[pool[rng.random_range(0..pool.len())]];
                let n = clip.frames.len();
                let start = if n > length { rng.random_range(0..=n - length) } else { 0 };
                Ok(clip.frames[start..(start + length).min(n)].to_vec())
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub trials: usize,
    /// Motions per side and trial.
    pub samples: usize,
    pub length: usize,
    pub diversity_pairs: usize,
    pub multimodality_pairs: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            trials: 20,
            samples: 3000,
            length: 16,
            diversity_pairs: DIVERSITY_PAIRS,
            multimodality_pairs: MULTIMODALITY_PAIRS,
            seed: 0,
        }
    }
}

/// Mean over trials and the half-width of its 95% normal interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub ci95: f64,
}

impl Estimate {
    pub fn from_trials(values: &[f64]) -> Estimate {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        if values.len() < 2 {
            return Estimate { mean, ci95: 0.0 };
        }
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Estimate {
            mean,
            ci95: 1.96 * var.sqrt() / n.sqrt(),
        }
    }
}

impl std::fmt::Display for Estimate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.3} ± {:.3}", self.mean, self.ci95)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub fid: Estimate,
    pub accuracy: Estimate,
    pub diversity: Estimate,
    pub multimodality: Estimate,
    pub trials: usize,
    pub samples: usize,
    /// Trials whose covariance needed the FID ridge.
    pub regularized_trials: usize,
}

impl MetricsReport {
    /// `(name, estimate)` rows in table order.
    pub fn rows(&self) -> [(&'static str, Estimate); 4] {
        [
            ("fid", self.fid),
            ("accuracy", self.accuracy),
            ("diversity", self.diversity),
            ("multimodality", self.multimodality),
        ]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,mean,ci95\n");
        for (name, e) in self.rows() {
            s.push_str(&format!("{name},{},{}\n", e.mean, e.ci95));
        }
        s
    }
}

/// Repeats the four measurements `trials` times. Each trial draws
/// `samples` motions from `source`, with actions cycling through the
/// vocabulary, and as many real clips with replacement from `real`.
pub fn evaluate(
    classifier: &MotionClassifier,
    source: &dyn MotionSource,
    real: &MotionDataset,
    config: &EvalConfig,
) -> Result<MetricsReport, MetricsError> {
    if config.trials == 0 || config.samples < 2 {
        return Err(MetricsError::InvalidArgument("need at least one trial and two samples".into()));
    }
    if real.is_empty() {
        return Err(MetricsError::EmptyDataset);
    }
    let c = classifier.action_vocab.len();
    let actions: Vec<usize> = (0..config.samples).map(|i| i % c).collect();
    let mut root = ChaCha8Rng::seed_from_u64(config.seed);
    let (mut f, mut a, mut d, mut m) = (vec![], vec![], vec![], vec![]);
    let mut regularized = 0;
    for _ in 0..config.trials {
        let gen_seed: u64 = root.random();
        let real_seed: u64 = root.random();
        let mut rng = ChaCha8Rng::seed_from_u64(root.random());
        let generated = source.sample(&actions, config.length, gen_seed)?;
        let reals = DatasetSource(real).sample(&actions, config.length, real_seed)?;
        let gf = classifier.features(&generated)?;
        let rf = classifier.features(&reals)?;
        let fv = fid(&rf, &gf)?;
        regularized += fv.regularized as usize;
        f.push(fv.value);
        a.push(recognition_accuracy(classifier, &generated, &actions)?);
        d.push(diversity(&gf, config.diversity_pairs, &mut rng)?);
        let mut by_class: Vec<Vec<DVector<f64>>> = vec![vec![]; c];
        for (feat, &l) in gf.into_iter().zip(&actions) {
            by_class[l].push(feat);
        }
        m.push(multimodality(&by_class, config.multimodality_pairs, &mut rng)?);
    }
    Ok(MetricsReport {
        fid: Estimate::from_trials(&f),
        accuracy: Estimate::from_trials(&a),
        diversity: Estimate::from_trials(&d),
        multimodality: Estimate::from_trials(&m),
        trials: config.trials,
        samples: config.samples,
        regularized_trials: regularized,
    })
}

/// Mean horizontal displacement per frame of whichever foot is lower,
/// taking `y` as up. A planted foot scores zero.
pub fn foot_slide(motion: &[JointPose], left_foot: usize, right_foot: usize) -> f64 {
    if motion.len() < 2 {
        return 0.0;
    }
    let total: f64 = motion
        .windows(2)
        .map(|w| {
            let (prev, cur) = (&w[0].joints, &w[1].joints);
            let foot = if cur[left_foot].y <= cur[right_foot].y { left_foot } else { right_foot };
            let d = cur[foot] - prev[foot];
            d.x.hypot(d.z)
        })
        .sum();
    total / (motion.len() - 1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::Vec3;

    #[test]
    fn interval_uses_sample_deviation() {
        let e = Estimate::from_trials(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.mean, 2.5);
        let sd = (5.0f64 / 3.0).sqrt();
        assert!((e.ci95 - 1.96 * sd / 2.0).abs() < 1e-15);
        assert_eq!(Estimate::from_trials(&[7.0]).ci95, 0.0);
        assert_eq!(format!("{e}"), format!("2.500 ± {:.3}", e.ci95));
    }

    #[test]
    fn foot_slide_tracks_the_lower_foot() {
        // left foot planted on the ground, right foot swinging forward
        let frame = |t: f64| {
            let mut j = vec![Vec3::zeros(); 8];
            j[5] = Vec3::new(0.1, 0.0, 0.0);
            j[7] = Vec3::new(-0.1, 0.2, t);
            JointPose::new(j)
        };
        let planted: Vec<_> = (0..5).map(|t| frame(t as f64)).collect();
        assert_eq!(foot_slide(&planted, 5, 7), 0.0);
        let sliding: Vec<_> = planted.iter().enumerate().map(|(t, f)| f.translated(&Vec3::new(0.0, 0.0, 0.3 * t as f64))).collect();
        assert!((foot_slide(&sliding, 5, 7) - 0.3).abs() < 1e-12);
    }
}
