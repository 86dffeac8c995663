//! Non-propagation inference baselines: prototype classification on pooled
//! features, matching-network attention, its local-feature variant, and
//! naive Bayes nearest neighbor.
//!
//! All four share the attention and pooling switches of `MethodConfig` so
//! ablations stay comparable with the propagation methods. Attention always
//! applies where enabled; pooling applies to the banks of local vectors
//! (local match, NBNN) and is irrelevant to the two global-vector methods,
//! which average the attended positions directly.

use crate::core::{self, Episode, FeatureSet, MethodConfig};
use crate::error::{Error, Result};
use crate::pooling::{attended_vectors, global_average_pool, pooled_vectors};
use crate::propagation::Prediction;

/// Per-class banks of support local feature vectors.
#[derive(Debug, Clone)]
pub struct ClassBank {
    classes: Vec<FeatureSet>,
}

impl ClassBank {
    /// Collect every support image's local vectors (attended, optionally
    /// pooled) into its class's bank.
    pub fn from_episode(episode: &Episode, config: &MethodConfig) -> Result<Self> {
        let mut per_class: Vec<Vec<Vec<f64>>> = vec![Vec::new(); episode.ways()];
        for (i, (tensor, label)) in episode.support().iter().enumerate() {
            let set = pooled_vectors(tensor, config, core::derive_seed(config.seed, i as u64))?;
            per_class[*label].extend(set.iter().map(|v| v.to_vec()));
        }
        let classes = per_class
            .into_iter()
            .map(FeatureSet::from_vectors)
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { classes })
    }

    pub fn ways(&self) -> usize {
        self.classes.len()
    }

    pub fn class(&self, j: usize) -> &FeatureSet {
        &self.classes[j]
    }
}

/// Class distribution of `x` against one weight vector per class:
/// `softmax(rho * cos(x, w_j))`.
pub fn cosine_classify(x: &[f64], weights: &[Vec<f64>], rho: f64) -> Result<Vec<f64>> {
    if weights.is_empty() {
        return Err(Error::arg("classifier needs at least one weight vector"));
    }
    let sims = weights
        .iter()
        .map(|w| core::cosine(x, w))
        .collect::<Result<Vec<f64>>>()?;
    core::softmax(&sims, rho)
}

/// Per-class mean of the support images' average feature vectors.
pub fn prototypes(episode: &Episode, config: &MethodConfig) -> Result<Vec<Vec<f64>>> {
    config.validate()?;
    let d = episode.support()[0].0.depth();
    let mut sums = vec![vec![0.0; d]; episode.ways()];
    for (tensor, label) in episode.support() {
        let gap = global_average_pool(&attended_vectors(tensor, config)?);
        for (s, x) in sums[*label].iter_mut().zip(&gap) {
            *s += x;
        }
    }
    let inv = 1.0 / episode.shots() as f64;
    for proto in &mut sums {
        for s in proto.iter_mut() {
            *s *= inv;
        }
    }
    Ok(sums)
}

/// Nearest-prototype classification of each query's average feature vector.
pub fn gap_proto_predict(episode: &Episode, config: &MethodConfig) -> Result<Vec<Prediction>> {
    let protos = prototypes(episode, config)?;
    episode
        .query()
        .iter()
        .map(|tensor| {
            let x = global_average_pool(&attended_vectors(tensor, config)?);
            Prediction::from_probabilities(cosine_classify(&x, &protos, config.rho)?)
        })
        .collect()
}

/// Matching-network inference: cosine attention over the support images'
/// average vectors, mixing their one-hot labels.
pub fn matching_predict(episode: &Episode, config: &MethodConfig) -> Result<Vec<Prediction>> {
    config.validate()?;
    let mut supports = Vec::with_capacity(episode.support_count());
    for (tensor, label) in episode.support() {
        let gap = global_average_pool(&attended_vectors(tensor, config)?);
        supports.push((gap, *label));
    }
    episode
        .query()
        .iter()
        .map(|tensor| {
            let q = global_average_pool(&attended_vectors(tensor, config)?);
            let sims = supports
                .iter()
                .map(|(s, _)| core::cosine(&q, s))
                .collect::<Result<Vec<f64>>>()?;
            let attention = core::softmax(&sims, config.rho)?;
            let mut p = vec![0.0; episode.ways()];
            for ((_, label), w) in supports.iter().zip(&attention) {
                p[*label] += w;
            }
            Prediction::from_probabilities(p)
        })
        .collect()
}

/// Matching-network inference over local vectors: every support local vector
/// is an independent support example carrying its image's label, and each
/// query position's class scores are averaged over positions.
pub fn local_match_predict(episode: &Episode, config: &MethodConfig) -> Result<Vec<Prediction>> {
    config.validate()?;
    let mut locals: Vec<(Vec<f64>, usize)> = Vec::new();
    for (i, (tensor, label)) in episode.support().iter().enumerate() {
        let set = pooled_vectors(tensor, config, core::derive_seed(config.seed, i as u64))?;
        locals.extend(set.iter().map(|v| (v.to_vec(), *label)));
    }
    episode
        .query()
        .iter()
        .map(|tensor| {
            let positions = attended_vectors(tensor, config)?;
            let mut mean = vec![0.0; episode.ways()];
            for r in positions.iter() {
                let sims = locals
                    .iter()
                    .map(|(v, _)| core::cosine(r, v))
                    .collect::<Result<Vec<f64>>>()?;
                let attention = core::softmax(&sims, config.rho)?;
                for ((_, label), w) in locals.iter().zip(&attention) {
                    mean[*label] += w;
                }
            }
            let inv = 1.0 / positions.len() as f64;
            for m in &mut mean {
                *m *= inv;
            }
            Prediction::from_probabilities(mean)
        })
        .collect()
}

/// Image-to-class scores: for each class, the sum over query positions of
/// the cosine similarities to the position's `knn` nearest bank vectors
/// (`knn` clamped to the bank size; boundary ties prefer the earlier bank
/// entry).
pub fn nbnn_score(query: &FeatureSet, bank: &ClassBank, knn: usize) -> Result<Vec<f64>> {
    if knn == 0 {
        return Err(Error::arg("knn must be positive"));
    }
    if bank.ways() == 0 {
        return Err(Error::arg("class bank is empty"));
    }
    let mut scores = Vec::with_capacity(bank.ways());
    for j in 0..bank.ways() {
        let vj = bank.class(j);
        let kj = knn.min(vj.len());
        let mut total = 0.0;
        for r in query.iter() {
            let mut sims = Vec::with_capacity(vj.len());
            for (i, v) in vj.iter().enumerate() {
                sims.push((i, core::cosine(r, v)?));
            }
            sims.sort_unstable_by(|a, b| {
                b.1.partial_cmp(&a.1).expect("cosines are finite").then(a.0.cmp(&b.0))
            });
            total += sims[..kj].iter().map(|&(_, c)| c).sum::<f64>();
        }
        scores.push(total);
    }
    Ok(scores)
}

/// NBNN classification of each query's attended positions. The reported
/// distribution is an unscaled softmax of the class scores, which preserves
/// the argmax of the raw scores.
pub fn nbnn_predict(episode: &Episode, config: &MethodConfig) -> Result<Vec<Prediction>> {
    config.validate()?;
    let bank = ClassBank::from_episode(episode, config)?;
    episode
        .query()
        .iter()
        .map(|tensor| {
            let positions = attended_vectors(tensor, config)?;
            let scores = nbnn_score(&positions, &bank, config.knn)?;
            Prediction::from_probabilities(core::softmax(&scores, 1.0)?)
        })
        .collect()
}
