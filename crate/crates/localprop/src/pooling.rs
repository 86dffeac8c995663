//! Per-image reduction of local feature sets: global averaging and k-means
//! clustering into a fixed budget of centroids.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::core::{FeatureSet, FeatureTensor, MethodConfig};
use crate::error::{Error, Result};

/// Component-wise mean of all vectors in the set.
pub fn global_average_pool(set: &FeatureSet) -> Vec<f64> {
    let mut mean = vec![0.0; set.dim()];
    for v in set.iter() {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    let inv = 1.0 / set.len() as f64;
    for m in &mut mean {
        *m *= inv;
    }
    mean
}

/// Reduce a feature set to at most `m` k-means centroids.
///
/// The effective cluster count is `min(m, number of distinct vectors)`;
/// clusters left empty by Lloyd reassignment are dropped. `m = 1` is exactly
/// global average pooling, including summation order. Seeding is k-means++
/// driven by a stream seeded with `seed`, so results are reproducible.
pub fn feature_pool(set: &FeatureSet, m: usize, seed: u64) -> Result<FeatureSet> {
    feature_pool_with_history(set, m, seed).map(|(centroids, _)| centroids)
}

/// [`feature_pool`] plus the clustering objective recorded after each
/// assignment step, for convergence diagnostics. The history is empty when
/// pooling short-circuits to a plain average.
pub fn feature_pool_with_history(
    set: &FeatureSet,
    m: usize,
    seed: u64,
) -> Result<(FeatureSet, Vec<f64>)> {
    if m == 0 {
        return Err(Error::arg("cluster count must be positive"));
    }
    if set.is_empty() {
        return Err(Error::arg("cannot pool an empty feature set"));
    }
    let m_eff = m.min(distinct_count(set));
    if m_eff == 1 {
        let pooled = FeatureSet::from_vectors(vec![global_average_pool(set)])?;
        return Ok((pooled, Vec::new()));
    }
    let (centroids, history) = kmeans(set, m_eff, seed);
    Ok((FeatureSet::from_vectors(centroids)?, history))
}

/// Vectors of one image after optional attention filtering.
pub(crate) fn attended_vectors(t: &FeatureTensor, config: &MethodConfig) -> Result<FeatureSet> {
    if config.use_attention {
        crate::attention::spatial_attention(t, config.tau)
    } else {
        Ok(t.all_positions())
    }
}

/// Vectors of one image after attention and optional pooling. `seed` must be
/// derived per image so repeated calls are reproducible.
pub(crate) fn pooled_vectors(
    t: &FeatureTensor,
    config: &MethodConfig,
    seed: u64,
) -> Result<FeatureSet> {
    let attended = attended_vectors(t, config)?;
    if config.use_pooling {
        feature_pool(&attended, config.clusters, seed)
    } else {
        Ok(attended)
    }
}

fn distinct_count(set: &FeatureSet) -> usize {
    let mut distinct: Vec<&[f64]> = Vec::new();
    for v in set.iter() {
        if !distinct.contains(&v) {
            distinct.push(v);
        }
    }
    distinct.len()
}

fn sq_dist(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Lloyd's algorithm with k-means++ seeding. Returns the surviving centroids
/// and the inertia after each assignment step (used to check convergence
/// behavior in tests). Runs at most 100 iterations, stopping early once the
/// relative inertia decrease falls below 1e-4.
fn kmeans(set: &FeatureSet, k: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = set.len();
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(set.get(rng.gen_range(0..n)).to_vec());
    let mut best_d2: Vec<f64> = (0..n).map(|i| sq_dist(set.get(i), &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = best_d2.iter().sum();
        // k <= distinct count, so some point is still strictly away from
        // every chosen centroid and total > 0.
        let mut draw = rng.gen_range(0.0..total);
        let mut pick = n - 1;
        for (i, &d2) in best_d2.iter().enumerate() {
            if draw < d2 {
                pick = i;
                break;
            }
            draw -= d2;
        }
        let chosen = set.get(pick).to_vec();
        for (i, d2) in best_d2.iter_mut().enumerate() {
            *d2 = d2.min(sq_dist(set.get(i), &chosen));
        }
        centroids.push(chosen);
    }

    let mut history = Vec::new();
    let mut assignment = vec![0usize; n];
    for _ in 0..100 {
        // assignment step; ties go to the smaller centroid index
        let mut inertia = 0.0;
        for (i, slot) in assignment.iter_mut().enumerate() {
            let mut best = 0;
            let mut best_d = sq_dist(set.get(i), &centroids[0]);
            for (j, c) in centroids.iter().enumerate().skip(1) {
                let d = sq_dist(set.get(i), c);
                if d < best_d {
                    best = j;
                    best_d = d;
                }
            }
            *slot = best;
            inertia += best_d;
        }
        let done = match history.last() {
            Some(&prev) => prev <= 0.0 || (prev - inertia) / prev < 1e-4,
            None => false,
        };
        history.push(inertia);
        if done {
            break;
        }
        // update step; empty clusters are dropped
        let mut sums = vec![vec![0.0; set.dim()]; centroids.len()];
        let mut counts = vec![0usize; centroids.len()];
        for i in 0..n {
            counts[assignment[i]] += 1;
            for (s, x) in sums[assignment[i]].iter_mut().zip(set.get(i)) {
                *s += x;
            }
        }
        centroids.clear();
        for (sum, count) in sums.into_iter().zip(&counts) {
            if *count > 0 {
                centroids.push(sum.into_iter().map(|s| s / *count as f64).collect());
            }
        }
    }
    (centroids, history)
}
