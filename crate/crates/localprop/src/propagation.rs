//! The diffusion operator and its two uses, feature and label propagation,
//! plus label-matrix construction and per-query inference.

use nalgebra::{DMatrix, linalg::Cholesky};

use crate::core::{self, Episode, FeatureSet, MethodConfig};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::pooling::pooled_vectors;

/// Node count at or below which `Solver::Auto` factors the dense system
/// directly; larger systems go through conjugate gradients.
pub const DIRECT_SOLVE_THRESHOLD: usize = 4096;

const CG_TOLERANCE: f64 = 1e-6;
const CG_MAX_ITERATIONS: usize = 1000;

/// Strategy for solving `(I - alpha*W)x = b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Solver {
    /// Dense Cholesky factorization, one factor shared by all right-hand
    /// sides.
    Direct,
    /// Conjugate gradients on the sparse operator, one solve per row.
    ConjugateGradient,
    /// Pick `Direct` when the node count is at most `direct_threshold`.
    Auto { direct_threshold: usize },
}

impl Default for Solver {
    fn default() -> Self {
        Solver::Auto {
            direct_threshold: DIRECT_SOLVE_THRESHOLD,
        }
    }
}

/// Diffuse each row of `a` over the graph: `a * (1-alpha) * (I - alpha*W)^-1`
/// with `W` the normalized adjacency. `alpha = 0` returns `a` unchanged.
pub fn propagate(a: &[Vec<f64>], graph: &Graph, alpha: f64) -> Result<Vec<Vec<f64>>> {
    propagate_with(a, graph, alpha, Solver::default())
}

/// `propagate` with an explicit solver choice.
pub fn propagate_with(
    a: &[Vec<f64>],
    graph: &Graph,
    alpha: f64,
    solver: Solver,
) -> Result<Vec<Vec<f64>>> {
    if !alpha.is_finite() || !(0.0..1.0).contains(&alpha) {
        return Err(Error::arg("alpha must lie in [0, 1)"));
    }
    let t = graph.node_count();
    if a.iter().any(|row| row.len() != t) {
        return Err(Error::arg("row length must equal the graph's node count"));
    }
    if a.is_empty() || alpha == 0.0 {
        return Ok(a.to_vec());
    }
    let direct = match solver {
        Solver::Direct => true,
        Solver::ConjugateGradient => false,
        Solver::Auto { direct_threshold } => t <= direct_threshold,
    };
    if direct {
        solve_direct(a, graph, alpha)
    } else {
        a.iter()
            .map(|row| conjugate_gradient(graph, alpha, row))
            .collect()
    }
}

/// (I - alpha*W) is symmetric positive definite for alpha < 1 because the
/// normalized adjacency has spectral radius at most 1, so Cholesky applies.
fn solve_direct(a: &[Vec<f64>], graph: &Graph, alpha: f64) -> Result<Vec<Vec<f64>>> {
    let t = graph.node_count();
    let mut system = DMatrix::<f64>::identity(t, t);
    for (u, row) in graph.normalized_rows().iter().enumerate() {
        for &(v, w) in row {
            system[(u, v)] -= alpha * w;
        }
    }
    let chol = Cholesky::new(system)
        .ok_or_else(|| Error::Numeric("diffusion system is not positive definite".into()))?;
    // rows of `a` become right-hand-side columns; the operator is symmetric
    // so row solves and column solves coincide
    let mut rhs = DMatrix::<f64>::zeros(t, a.len());
    for (i, row) in a.iter().enumerate() {
        for (u, &val) in row.iter().enumerate() {
            rhs[(u, i)] = val;
        }
    }
    let solution = chol.solve(&rhs);
    let scale = 1.0 - alpha;
    Ok((0..a.len())
        .map(|i| (0..t).map(|u| scale * solution[(u, i)]).collect())
        .collect())
}

fn conjugate_gradient(graph: &Graph, alpha: f64, b: &[f64]) -> Result<Vec<f64>> {
    let t = b.len();
    let apply = |x: &[f64]| -> Vec<f64> {
        let wx = graph.normalized_matvec(x);
        x.iter().zip(&wx).map(|(xi, wi)| xi - alpha * wi).collect()
    };
    let dot = |u: &[f64], v: &[f64]| -> f64 { u.iter().zip(v).map(|(a, b)| a * b).sum() };

    let norm_b = dot(b, b).sqrt();
    let tol = CG_TOLERANCE * norm_b.max(1.0);
    let mut x = vec![0.0; t];
    let mut r = b.to_vec();
    let mut rs = dot(&r, &r);
    let scale = 1.0 - alpha;
    if rs.sqrt() <= tol {
        return Ok(x);
    }
    let mut p = r.clone();
    for iteration in 1..=CG_MAX_ITERATIONS {
        let ap = apply(&p);
        let step = rs / dot(&p, &ap);
        for i in 0..t {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        let rs_next = dot(&r, &r);
        if rs_next.sqrt() <= tol {
            return Ok(x.into_iter().map(|xi| scale * xi).collect());
        }
        let beta = rs_next / rs;
        for i in 0..t {
            p[i] = r[i] + beta * p[i];
        }
        rs = rs_next;
        if iteration == CG_MAX_ITERATIONS {
            return Err(Error::SolverDidNotConverge {
                residual: rs.sqrt(),
                iterations: iteration,
            });
        }
    }
    unreachable!("loop either converges or errors at the iteration cap")
}

/// Smooth node features by diffusing them over their own similarity graph.
///
/// `vectors` holds one feature column per node; the graph is built on the
/// input vectors and each feature dimension is propagated as a signal over
/// the nodes. `alpha = 0` returns the input unchanged.
pub fn feature_propagate(
    vectors: &[Vec<f64>],
    k: usize,
    gamma: f64,
    alpha: f64,
) -> Result<Vec<Vec<f64>>> {
    if vectors.is_empty() {
        return Err(Error::arg("feature propagation needs at least one node"));
    }
    let d = vectors[0].len();
    if alpha == 0.0 {
        return Ok(vectors.to_vec());
    }
    let graph = Graph::build(vectors, k, gamma)?;
    let t = vectors.len();
    let mut rows = vec![vec![0.0; t]; d];
    for (i, v) in vectors.iter().enumerate() {
        for (j, &x) in v.iter().enumerate() {
            rows[j][i] = x;
        }
    }
    let propagated = propagate(&rows, &graph, alpha)?;
    Ok((0..t)
        .map(|i| (0..d).map(|j| propagated[j][i]).collect())
        .collect())
}

/// Which image a graph node column belongs to, whether that image is support
/// or query, and how many columns it spans.
///
/// A `Some` label marks a support image, `None` a query. Support entries
/// must precede query entries, matching the column order of the feature and
/// label matrices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeEntry {
    pub image: usize,
    pub label: Option<usize>,
    pub count: usize,
}

#[derive(Debug, Clone)]
pub struct NodeLayout {
    entries: Vec<NodeEntry>,
    starts: Vec<usize>,
    node_count: usize,
}

impl NodeLayout {
    pub fn new(entries: Vec<NodeEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::arg("node layout must describe at least one image"));
        }
        let mut seen_query = false;
        let mut starts = Vec::with_capacity(entries.len());
        let mut node_count = 0;
        for e in &entries {
            if e.count == 0 {
                return Err(Error::arg("every image must contribute at least one column"));
            }
            match e.label {
                Some(_) if seen_query => {
                    return Err(Error::arg("support images must precede query images"));
                }
                None => seen_query = true,
                _ => {}
            }
            starts.push(node_count);
            node_count += e.count;
        }
        Ok(Self {
            entries,
            starts,
            node_count,
        })
    }

    /// Total column count, the sum of every image's contribution.
    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn entries(&self) -> &[NodeEntry] {
        &self.entries
    }

    /// First column of the i-th entry.
    pub fn start(&self, index: usize) -> usize {
        self.starts[index]
    }
}

/// The initial `c x t` label matrix: support columns carry their image's
/// one-hot label replicated across the image's columns, query columns are
/// zero.
pub fn build_label_matrix(layout: &NodeLayout, ways: usize) -> Result<Vec<Vec<f64>>> {
    if ways == 0 {
        return Err(Error::arg("ways must be positive"));
    }
    let mut y = vec![vec![0.0; layout.node_count()]; ways];
    for (i, entry) in layout.entries().iter().enumerate() {
        if let Some(label) = entry.label {
            if label >= ways {
                return Err(Error::arg(format!(
                    "support label {} out of range for {} ways",
                    label, ways
                )));
            }
            let start = layout.start(i);
            y[label][start..start + entry.count].fill(1.0);
        }
    }
    Ok(y)
}

/// Diffuse class scores over a fresh graph built on the (already propagated)
/// feature vectors.
pub fn label_propagate(
    y: &[Vec<f64>],
    vectors: &[Vec<f64>],
    k: usize,
    gamma: f64,
    alpha: f64,
) -> Result<Vec<Vec<f64>>> {
    let graph = Graph::build(vectors, k, gamma)?;
    propagate(y, &graph, alpha)
}

/// Class distribution and predicted label for one query image.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probabilities: Vec<f64>,
    pub label: usize,
}

impl Prediction {
    /// Attach the argmax label (ties to the smallest index) to a
    /// distribution.
    pub fn from_probabilities(probabilities: Vec<f64>) -> Result<Self> {
        let label = core::predict(&probabilities)?;
        Ok(Self {
            probabilities,
            label,
        })
    }
}

/// Turn propagated class scores into one prediction per query image.
///
/// Each column with positive mass is l1-normalized into a distribution;
/// all-zero columns (disconnected nodes) become uniform. A query image's
/// distribution is the mean over its columns. Tiny negative scores left by
/// the solver are clamped to zero first.
pub fn infer_queries(z: &[Vec<f64>], layout: &NodeLayout) -> Result<Vec<Prediction>> {
    let c = z.len();
    if c == 0 {
        return Err(Error::arg("score matrix must have at least one class row"));
    }
    if z.iter().any(|row| row.len() != layout.node_count()) {
        return Err(Error::arg("score matrix width must match the layout"));
    }
    let mut out = Vec::new();
    for (i, entry) in layout.entries().iter().enumerate() {
        if entry.label.is_some() {
            continue;
        }
        let start = layout.start(i);
        let mut mean = vec![0.0; c];
        // column-wise pass over the row-major score matrix
        #[allow(clippy::needless_range_loop)]
        for col in start..start + entry.count {
            let mut column: Vec<f64> = (0..c).map(|row| z[row][col].max(0.0)).collect();
            let sum: f64 = column.iter().sum();
            if sum > 0.0 {
                for v in &mut column {
                    *v /= sum;
                }
            } else {
                column.fill(1.0 / c as f64);
            }
            for (m, v) in mean.iter_mut().zip(&column) {
                *m += v;
            }
        }
        let inv = 1.0 / entry.count as f64;
        for m in &mut mean {
            *m *= inv;
        }
        let label = core::predict(&mean)?;
        out.push(Prediction {
            probabilities: mean,
            label,
        });
    }
    Ok(out)
}

/// Full local-propagation inference for one episode.
///
/// Support images are reduced to local feature columns once (attention, then
/// optional pooling with a per-image derived seed). In transductive mode all
/// queries join a single graph; otherwise each query is solved in its own
/// singleton pass, which makes the two modes coincide exactly when there is
/// one query.
pub fn local_propagation_predict(
    episode: &Episode,
    config: &MethodConfig,
) -> Result<Vec<Prediction>> {
    config.validate()?;
    let n = episode.support_count();
    let mut support_sets = Vec::with_capacity(n);
    for (i, (tensor, _)) in episode.support().iter().enumerate() {
        support_sets.push(pooled_vectors(
            tensor,
            config,
            core::derive_seed(config.seed, i as u64),
        )?);
    }
    if episode.query_count() == 0 {
        return Ok(Vec::new());
    }
    if config.transductive {
        let mut query_sets = Vec::with_capacity(episode.query_count());
        for (qi, tensor) in episode.query().iter().enumerate() {
            query_sets.push(pooled_vectors(
                tensor,
                config,
                core::derive_seed(config.seed, (n + qi) as u64),
            )?);
        }
        propagate_episode(episode, config, &support_sets, &query_sets)
    } else {
        let mut out = Vec::with_capacity(episode.query_count());
        for tensor in episode.query() {
            let qset = pooled_vectors(tensor, config, core::derive_seed(config.seed, n as u64))?;
            let mut preds =
                propagate_episode(episode, config, &support_sets, std::slice::from_ref(&qset))?;
            debug_assert_eq!(preds.len(), 1);
            out.push(preds.pop().expect("one query yields one prediction"));
        }
        Ok(out)
    }
}

fn propagate_episode(
    episode: &Episode,
    config: &MethodConfig,
    support_sets: &[FeatureSet],
    query_sets: &[FeatureSet],
) -> Result<Vec<Prediction>> {
    let mut entries = Vec::with_capacity(support_sets.len() + query_sets.len());
    let mut vectors: Vec<Vec<f64>> = Vec::new();
    for (i, (set, (_, label))) in support_sets.iter().zip(episode.support()).enumerate() {
        entries.push(NodeEntry {
            image: i,
            label: Some(*label),
            count: set.len(),
        });
        vectors.extend(set.iter().map(|v| v.to_vec()));
    }
    for (qi, set) in query_sets.iter().enumerate() {
        entries.push(NodeEntry {
            image: support_sets.len() + qi,
            label: None,
            count: set.len(),
        });
        vectors.extend(set.iter().map(|v| v.to_vec()));
    }
    let layout = NodeLayout::new(entries)?;
    let smoothed = if config.use_feature_propagation {
        feature_propagate(&vectors, config.knn, config.gamma, config.alpha_feature)?
    } else {
        vectors
    };
    let y = build_label_matrix(&layout, episode.ways())?;
    let z = label_propagate(&y, &smoothed, config.knn, config.gamma, config.alpha_label)?;
    infer_queries(&z, &layout)
}
