use nalgebra::DVector;
use rand::seq::index::sample;
use rand::Rng;

use super::MetricsError;

pub const DIVERSITY_PAIRS: usize = 200;
pub const MULTIMODALITY_PAIRS: usize = 20;

/// `n` pool indices, without replacement when the pool is large enough.
fn draw(pool: usize, n: usize, rng: &mut impl Rng) -> Vec<usize> {
    if pool >= n {
        sample(rng, pool, n).into_vec()
    } else {
        (0..n).map(|_| rng.random_range(0..pool)).collect()
    }
}

/// Mean distance between paired members of two random subsets of `pairs`
/// features each.
fn paired_distance(pool: &[DVector<f64>], pairs: usize, rng: &mut impl Rng) -> f64 {
    let a = draw(pool.len(), pairs, rng);
    let b = draw(pool.len(), pairs, rng);
    a.iter().zip(&b).map(|(&i, &j)| (&pool[i] - &pool[j]).norm()).sum::<f64>() / pairs as f64
}

/// Spread of a motion set across all actions.
pub fn diversity(features: &[DVector<f64>], pairs: usize, rng: &mut impl Rng) -> Result<f64, MetricsError> {
    if features.is_empty() {
        return Err(MetricsError::EmptyPool);
    }
    if pairs == 0 {
        return Err(MetricsError::InvalidArgument("pair count must be positive".into()));
    }
    Ok(paired_distance(features, pairs, rng))
}

/// Spread within each action, averaged over actions.
pub fn multimodality(by_class: &[Vec<DVector<f64>>], pairs: usize, rng: &mut impl Rng) -> Result<f64, MetricsError> {
    if by_class.is_empty() {
        return Err(MetricsError::EmptyPool);
    }
    if pairs == 0 {
        return Err(MetricsError::InvalidArgument("pair count must be positive".into()));
    }
    let mut total = 0.0;
    for (c, pool) in by_class.iter().enumerate() {
        if pool.is_empty() {
            return Err(MetricsError::MissingClass(c));
        }
        total += paired_distance(pool, pairs, rng);
    }
    Ok(total / by_class.len() as f64)
}
