//! Few-shot image classification over precomputed convolutional feature
//! maps, treating each spatial position as an example of its image's class.
//!
//! The pipeline selects salient positions by activation norm
//! ([`spatial_attention`]), optionally compresses them into a small set of
//! cluster centers per image ([`feature_pool`]), connects all resulting
//! vectors across the task in a reciprocal k-nearest-neighbor graph
//! ([`Graph`]), and diffuses features and labels over that graph
//! ([`feature_propagate`], [`label_propagate`]). Query predictions average
//! the diffused class scores over each query's vectors.
//!
//! Classical baselines operating on the same representations live in
//! [`baselines`], episodic evaluation with paired parameter sweeps in
//! [`eval`], and a small binary feature-store format plus a synthetic
//! generator in [`io`].

pub mod attention;
pub mod baselines;
pub mod core;
pub mod error;
pub mod eval;
pub mod graph;
pub mod io;
pub mod pooling;
pub mod propagation;

pub use crate::attention::{local_spatial_pool, spatial_attention};
pub use crate::core::{
    cosine, derive_seed, predict, softmax, Episode, FeatureSet, FeatureTensor, MethodConfig,
};
pub use crate::error::{Error, Result};
pub use crate::eval::{
    evaluate, sample_episode, sweep, sweep_csv, EvalReport, Method, SampledEpisode, SweepParam,
    TaskSpec,
};
pub use crate::graph::{pair_similarity, Graph};
pub use crate::io::{read_store, synth_generate, write_store, FeatureStore, StoreClass};
pub use crate::pooling::{feature_pool, feature_pool_with_history, global_average_pool};
pub use crate::propagation::{
    build_label_matrix, feature_propagate, infer_queries, label_propagate,
    local_propagation_predict, propagate, propagate_with, NodeEntry, NodeLayout, Prediction,
    Solver,
};
