//! Episodic evaluation: task sampling from a feature store, per-method
//! accuracy with confidence intervals, and paired parameter sweeps.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines;
use crate::core::{derive_seed, Episode, MethodConfig};
use crate::error::{Error, Result};
use crate::io::FeatureStore;
use crate::propagation::{local_propagation_predict, Prediction};

/// The inference methods the evaluation harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    GapProto,
    Matching,
    LocalMatch,
    Nbnn,
    /// Label propagation over one average vector per image: the local
    /// pipeline with the cluster budget forced to 1.
    GlobalLp,
    LocalLp,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::GapProto,
        Method::Matching,
        Method::LocalMatch,
        Method::Nbnn,
        Method::GlobalLp,
        Method::LocalLp,
    ];

    pub fn predict(&self, episode: &Episode, config: &MethodConfig) -> Result<Vec<Prediction>> {
        match self {
            Method::GapProto => baselines::gap_proto_predict(episode, config),
            Method::Matching => baselines::matching_predict(episode, config),
            Method::LocalMatch => baselines::local_match_predict(episode, config),
            Method::Nbnn => baselines::nbnn_predict(episode, config),
            Method::GlobalLp => {
                let global = MethodConfig {
                    clusters: 1,
                    use_pooling: true,
                    ..config.clone()
                };
                local_propagation_predict(episode, &global)
            }
            Method::LocalLp => local_propagation_predict(episode, config),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Method::GapProto => "gap-proto",
            Method::Matching => "matching",
            Method::LocalMatch => "local-match",
            Method::Nbnn => "nbnn",
            Method::GlobalLp => "global-lp",
            Method::LocalLp => "local-lp",
        };
        f.write_str(name)
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gap-proto" => Ok(Method::GapProto),
            "matching" => Ok(Method::Matching),
            "local-match" => Ok(Method::LocalMatch),
            "nbnn" => Ok(Method::Nbnn),
            "global-lp" => Ok(Method::GlobalLp),
            "local-lp" => Ok(Method::LocalLp),
            other => Err(Error::arg(format!(
                "unknown method {other:?}; expected one of gap-proto, matching, \
                 local-match, nbnn, global-lp, local-lp"
            ))),
        }
    }
}

/// Shape of one classification task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub ways: usize,
    pub shots: usize,
    pub queries_per_class: usize,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.ways == 0 || self.shots == 0 || self.queries_per_class == 0 {
            return Err(Error::arg("ways, shots, and queries per class must be positive"));
        }
        Ok(())
    }
}

/// An episode together with the ground-truth labels of its queries and the
/// store classes each episode label maps to.
#[derive(Debug, Clone)]
pub struct SampledEpisode {
    pub episode: Episode,
    pub query_labels: Vec<usize>,
    pub store_classes: Vec<usize>,
}

/// Draw one episode: `c` distinct classes, then per class `s` support and
/// `q/c` query images without replacement. Consumes randomness only from
/// `rng`, so a fixed rng state yields a fixed episode.
pub fn sample_episode(
    store: &FeatureStore,
    ways: usize,
    shots: usize,
    queries: usize,
    rng: &mut ChaCha8Rng,
) -> Result<SampledEpisode> {
    if ways == 0 || shots == 0 {
        return Err(Error::arg("ways and shots must be positive"));
    }
    if queries == 0 || !queries.is_multiple_of(ways) {
        return Err(Error::arg(format!(
            "query count {queries} must be a positive multiple of ways {ways}"
        )));
    }
    let per_class = shots + queries / ways;
    if store.class_count() < ways {
        return Err(Error::arg(format!(
            "store has {} classes, task needs {}",
            store.class_count(),
            ways
        )));
    }
    for (j, class) in store.classes().iter().enumerate() {
        if class.image_count() < per_class {
            return Err(Error::arg(format!(
                "class {:?} (index {}) has {} images, task needs {}",
                class.name(),
                j,
                class.image_count(),
                per_class
            )));
        }
    }

    let chosen = rand::seq::index::sample(rng, store.class_count(), ways).into_vec();
    let mut support = Vec::with_capacity(ways * shots);
    let mut query = Vec::new();
    let mut query_labels = Vec::new();
    for (label, &class) in chosen.iter().enumerate() {
        let images =
            rand::seq::index::sample(rng, store.image_count(class), per_class).into_vec();
        for &image in &images[..shots] {
            support.push((store.tensor(class, image), label));
        }
        for &image in &images[shots..] {
            query.push(store.tensor(class, image));
            query_labels.push(label);
        }
    }
    Ok(SampledEpisode {
        episode: Episode::new(ways, shots, support, query)?,
        query_labels,
        store_classes: chosen,
    })
}

/// Evaluation outcome over `episodes` sampled tasks.
///
/// Wall time is kept out of the serialized form so identical runs produce
/// identical report files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub task: TaskSpec,
    pub episodes: usize,
    pub seed: u64,
    pub config: MethodConfig,
    pub mean_accuracy: f64,
    pub ci95: f64,
    pub per_episode_accuracy: Vec<f64>,
    #[serde(skip)]
    pub wall_time_seconds: f64,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}

/// Mean and normal-approximation 95% half-width (`1.96 * stddev / sqrt(E)`,
/// sample standard deviation; zero for a single episode).
fn summarize(per_episode: &[f64]) -> (f64, f64) {
    let e = per_episode.len() as f64;
    let mean = per_episode.iter().sum::<f64>() / e;
    if per_episode.len() < 2 {
        return (mean, 0.0);
    }
    let variance = per_episode.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (e - 1.0);
    (mean, 1.96 * variance.sqrt() / e.sqrt())
}

fn run_episode(
    store: &FeatureStore,
    method: Method,
    task: TaskSpec,
    config: &MethodConfig,
    seed: u64,
    index: usize,
) -> Result<f64> {
    let key = derive_seed(seed, index as u64);
    let context = |e: Error| Error::arg(format!("episode {index} (key {key}): {e}"));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(key, 0));
    let sampled = sample_episode(
        store,
        task.ways,
        task.shots,
        task.ways * task.queries_per_class,
        &mut rng,
    )
    .map_err(context)?;
    let mut cfg = config.clone();
    cfg.seed = derive_seed(key, 1);
    let predictions = method.predict(&sampled.episode, &cfg).map_err(context)?;
    let correct = predictions
        .iter()
        .zip(&sampled.query_labels)
        .filter(|(p, l)| p.label == **l)
        .count();
    Ok(correct as f64 / sampled.query_labels.len() as f64)
}

/// Run `episodes` sampled tasks and aggregate their accuracies.
///
/// Episode randomness is derived per index from `seed`, so results do not
/// depend on evaluation order and episodes can run in parallel; aggregation
/// reduces in index order.
pub fn evaluate(
    store: &FeatureStore,
    method: Method,
    task: TaskSpec,
    config: &MethodConfig,
    episodes: usize,
    seed: u64,
) -> Result<EvalReport> {
    task.validate()?;
    config.validate()?;
    if episodes == 0 {
        return Err(Error::arg("episode count must be positive"));
    }
    let start = Instant::now();
    let per_episode: Vec<f64> = (0..episodes)
        .into_par_iter()
        .map(|i| run_episode(store, method, task, config, seed, i))
        .collect::<Result<_>>()?;
    let (mean_accuracy, ci95) = summarize(&per_episode);
    Ok(EvalReport {
        method: method.to_string(),
        task,
        episodes,
        seed,
        config: config.clone(),
        mean_accuracy,
        ci95,
        per_episode_accuracy: per_episode,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    })
}

/// A parameter that `sweep` can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Tau,
    Clusters,
    Knn,
    Gamma,
    AlphaFeature,
    AlphaLabel,
    QueriesPerClass,
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            SweepParam::Tau => "tau",
            SweepParam::Clusters => "clusters",
            SweepParam::Knn => "knn",
            SweepParam::Gamma => "gamma",
            SweepParam::AlphaFeature => "alpha-feature",
            SweepParam::AlphaLabel => "alpha-label",
            SweepParam::QueriesPerClass => "queries-per-class",
        };
        f.write_str(name)
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tau" => Ok(SweepParam::Tau),
            "clusters" => Ok(SweepParam::Clusters),
            "knn" => Ok(SweepParam::Knn),
            "gamma" => Ok(SweepParam::Gamma),
            "alpha-feature" => Ok(SweepParam::AlphaFeature),
            "alpha-label" => Ok(SweepParam::AlphaLabel),
            "queries-per-class" => Ok(SweepParam::QueriesPerClass),
            other => Err(Error::arg(format!(
                "unknown sweep parameter {other:?}; expected one of tau, clusters, knn, \
                 gamma, alpha-feature, alpha-label, queries-per-class"
            ))),
        }
    }
}

impl SweepParam {
    fn positive_integer(self, value: f64) -> Result<usize> {
        if value.fract() != 0.0 || value < 1.0 || value > usize::MAX as f64 {
            return Err(Error::arg(format!(
                "{self} must be a positive integer, got {value}"
            )));
        }
        Ok(value as usize)
    }

    /// Produce the (task, config) pair for one swept value.
    fn apply(self, task: TaskSpec, config: &MethodConfig, value: f64) -> Result<(TaskSpec, MethodConfig)> {
        let mut task = task;
        let mut config = config.clone();
        match self {
            SweepParam::Tau => config.tau = value,
            SweepParam::Clusters => config.clusters = self.positive_integer(value)?,
            SweepParam::Knn => config.knn = self.positive_integer(value)?,
            SweepParam::Gamma => config.gamma = value,
            SweepParam::AlphaFeature => config.alpha_feature = value,
            SweepParam::AlphaLabel => config.alpha_label = value,
            SweepParam::QueriesPerClass => {
                task.queries_per_class = self.positive_integer(value)?
            }
        }
        Ok((task, config))
    }
}

/// Evaluate once per value, all runs sharing the same episode seed so the
/// resulting curve is paired.
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    store: &FeatureStore,
    method: Method,
    task: TaskSpec,
    config: &MethodConfig,
    param: SweepParam,
    values: &[f64],
    episodes: usize,
    seed: u64,
) -> Result<Vec<EvalReport>> {
    if values.is_empty() {
        return Err(Error::arg("sweep needs at least one value"));
    }
    values
        .iter()
        .map(|&value| {
            let (task, config) = param.apply(task, config, value)?;
            evaluate(store, method, task, &config, episodes, seed)
        })
        .collect()
}

/// One CSV row per swept value with the aggregate metrics.
pub fn sweep_csv(param: SweepParam, values: &[f64], reports: &[EvalReport]) -> Result<String> {
    if values.len() != reports.len() {
        return Err(Error::arg("one report per swept value is required"));
    }
    let mut out = String::from("parameter,value,method,episodes,mean_accuracy,ci95\n");
    for (value, report) in values.iter().zip(reports) {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            param, value, report.method, report.episodes, report.mean_accuracy, report.ci95
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::synth_generate;

    fn tiny_store() -> FeatureStore {
        synth_generate(4, 6, 3, 3, 8, 0.25, 0.2, 5).unwrap()
    }

    fn tiny_task() -> TaskSpec {
        TaskSpec {
            ways: 2,
            shots: 1,
            queries_per_class: 2,
        }
    }

    fn tiny_config() -> MethodConfig {
        MethodConfig {
            clusters: 3,
            knn: 4,
            ..MethodConfig::default()
        }
    }

    #[test]
    fn method_names_round_trip() {
        for method in Method::ALL {
            assert_eq!(method.to_string().parse::<Method>().unwrap(), method);
        }
        assert!("protonet".parse::<Method>().is_err());
    }

    #[test]
    fn forced_sample_uses_every_image() {
        // store sized exactly to the task: the partition is forced
        let store = synth_generate(2, 3, 2, 2, 8, 0.0, 0.1, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sampled = sample_episode(&store, 2, 1, 4, &mut rng).unwrap();
        assert_eq!(sampled.episode.support_count(), 2);
        assert_eq!(sampled.episode.query_count(), 4);
        assert_eq!(sampled.query_labels, vec![0, 0, 1, 1]);
        let mut classes = sampled.store_classes.clone();
        classes.sort_unstable();
        assert_eq!(classes, vec![0, 1]);
    }

    #[test]
    fn sampling_is_deterministic() {
        let store = tiny_store();
        let draw = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample_episode(&store, 2, 1, 4, &mut rng).unwrap()
        };
        let a = draw(9);
        let b = draw(9);
        assert_eq!(a.store_classes, b.store_classes);
        assert_eq!(a.query_labels, b.query_labels);
        for (x, y) in a
            .episode
            .support()
            .iter()
            .zip(b.episode.support())
        {
            assert_eq!(x.0.data(), y.0.data());
            assert_eq!(x.1, y.1);
        }
        let c = draw(10);
        let same = a
            .episode
            .support()
            .iter()
            .zip(c.episode.support())
            .all(|(x, y)| x.0.data() == y.0.data());
        assert!(!same || a.store_classes != c.store_classes);
    }

    #[test]
    fn protocol_arithmetic() {
        let store = synth_generate(6, 20, 2, 2, 8, 0.0, 0.3, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sampled = sample_episode(&store, 5, 5, 75, &mut rng).unwrap();
        assert_eq!(sampled.episode.support_count(), 25);
        assert_eq!(sampled.episode.query_count(), 75);
    }

    #[test]
    fn deficient_class_is_named() {
        let mut classes = vec![
            ("plenty".to_string(), vec![vec![0.1f32; 4]; 5]),
            ("scarce".to_string(), vec![vec![0.2f32; 4]; 1]),
        ];
        classes[0].1.iter_mut().for_each(|_| {});
        let store = FeatureStore::new(2, 1, 2, classes).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = sample_episode(&store, 2, 1, 2, &mut rng).unwrap_err();
        assert!(err.to_string().contains("scarce"), "{err}");
    }

    #[test]
    fn uneven_query_split_is_rejected() {
        let store = tiny_store();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_episode(&store, 2, 1, 3, &mut rng).is_err());
    }

    #[test]
    fn constant_predictor_scores_chance() {
        let store = tiny_store();
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sampled = sample_episode(&store, 4, 1, 8, &mut rng).unwrap();
            // a predictor stuck on class 0 is right exactly on class 0's
            // queries, which are 1/c of a balanced episode
            let correct = sampled.query_labels.iter().filter(|&&l| l == 0).count();
            let accuracy = correct as f64 / sampled.query_labels.len() as f64;
            assert_eq!(accuracy, 0.25);
        }
    }

    #[test]
    fn summary_formula() {
        let (mean, ci) = summarize(&[1.0, 0.5]);
        assert!((mean - 0.75).abs() < 1e-12);
        assert!((ci - 0.49).abs() < 1e-12);
        let (mean, ci) = summarize(&[0.8]);
        assert_eq!(mean, 0.8);
        assert_eq!(ci, 0.0);
    }

    #[test]
    fn report_mean_matches_per_episode_average() {
        let store = tiny_store();
        let report = evaluate(
            &store,
            Method::GapProto,
            tiny_task(),
            &tiny_config(),
            8,
            3,
        )
        .unwrap();
        let mean: f64 =
            report.per_episode_accuracy.iter().sum::<f64>() / report.episodes as f64;
        assert!((report.mean_accuracy - mean).abs() < 1e-12);
        assert_eq!(report.per_episode_accuracy.len(), 8);
        assert!(report.ci95 >= 0.0);
    }

    #[test]
    fn separable_store_is_solved_by_gap_proto() {
        // noise-free store; three shots so each prototype averages out its
        // supports' within-class plane offsets
        let store = synth_generate(3, 9, 3, 3, 32, 0.0, 0.0, 21).unwrap();
        let task = TaskSpec {
            ways: 2,
            shots: 3,
            queries_per_class: 2,
        };
        let report = evaluate(&store, Method::GapProto, task, &tiny_config(), 10, 0).unwrap();
        assert_eq!(report.mean_accuracy, 1.0);
    }

    #[test]
    fn evaluation_is_reproducible() {
        let store = tiny_store();
        for method in [Method::GapProto, Method::Nbnn, Method::LocalLp] {
            let run = || {
                evaluate(&store, method, tiny_task(), &tiny_config(), 4, 11)
                    .unwrap()
                    .to_json()
            };
            assert_eq!(run(), run());
        }
    }

    #[test]
    fn global_lp_is_local_lp_with_one_cluster() {
        let store = tiny_store();
        let config = tiny_config();
        let forced = MethodConfig {
            clusters: 1,
            ..config.clone()
        };
        let global = evaluate(&store, Method::GlobalLp, tiny_task(), &config, 4, 2).unwrap();
        let local = evaluate(&store, Method::LocalLp, tiny_task(), &forced, 4, 2).unwrap();
        assert_eq!(global.per_episode_accuracy, local.per_episode_accuracy);
    }

    #[test]
    fn singleton_sweep_equals_plain_evaluation() {
        let store = tiny_store();
        let reports = sweep(
            &store,
            Method::GapProto,
            tiny_task(),
            &tiny_config(),
            SweepParam::Tau,
            &[0.0],
            4,
            7,
        )
        .unwrap();
        let direct = evaluate(
            &store,
            Method::GapProto,
            tiny_task(),
            &MethodConfig {
                tau: 0.0,
                ..tiny_config()
            },
            4,
            7,
        )
        .unwrap();
        assert_eq!(reports.len(), 1);
        assert_eq!(reports[0].to_json(), direct.to_json());
    }

    #[test]
    fn repeated_sweep_values_pair_exactly() {
        let store = tiny_store();
        let reports = sweep(
            &store,
            Method::Nbnn,
            tiny_task(),
            &tiny_config(),
            SweepParam::Knn,
            &[3.0, 3.0],
            3,
            13,
        )
        .unwrap();
        assert_eq!(reports[0].to_json(), reports[1].to_json());
    }

    #[test]
    fn query_count_sweep_changes_the_task() {
        let store = tiny_store();
        let reports = sweep(
            &store,
            Method::GapProto,
            tiny_task(),
            &tiny_config(),
            SweepParam::QueriesPerClass,
            &[1.0, 2.0],
            3,
            1,
        )
        .unwrap();
        assert_eq!(reports[0].task.queries_per_class, 1);
        assert_eq!(reports[1].task.queries_per_class, 2);
    }

    #[test]
    fn sweep_rejects_bad_values() {
        let store = tiny_store();
        let run = |param: SweepParam, values: &[f64]| {
            sweep(
                &store,
                Method::GapProto,
                tiny_task(),
                &tiny_config(),
                param,
                values,
                1,
                0,
            )
        };
        assert!(run(SweepParam::Clusters, &[2.5]).is_err());
        assert!(run(SweepParam::Knn, &[0.0]).is_err());
        assert!(run(SweepParam::Tau, &[]).is_err());
        assert!("m".parse::<SweepParam>().is_err());
    }

    #[test]
    fn csv_has_one_row_per_value() {
        let store = tiny_store();
        let values = [0.0, 0.3];
        let reports = sweep(
            &store,
            Method::GapProto,
            tiny_task(),
            &tiny_config(),
            SweepParam::Tau,
            &values,
            2,
            0,
        )
        .unwrap();
        let csv = sweep_csv(SweepParam::Tau, &values, &reports).unwrap();
        let lines: Vec<&str> = csv.trim_end().lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("parameter,value"));
        assert!(lines[1].starts_with("tau,0,gap-proto,2,"));
        assert!(lines[2].starts_with("tau,0.3,gap-proto,2,"));
    }

    #[test]
    fn zero_episode_count_is_rejected() {
        let store = tiny_store();
        assert!(evaluate(
            &store,
            Method::GapProto,
            tiny_task(),
            &tiny_config(),
            0,
            0
        )
        .is_err());
    }

    #[test]
    fn report_json_excludes_timing() {
        let store = tiny_store();
        let report = evaluate(
            &store,
            Method::GapProto,
            tiny_task(),
            &tiny_config(),
            2,
            0,
        )
        .unwrap();
        assert!(report.wall_time_seconds > 0.0);
        assert!(!report.to_json().contains("wall_time"));
    }
}
