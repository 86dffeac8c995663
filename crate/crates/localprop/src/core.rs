//! Fundamental numeric types, the episode/task model, and elementary math
//! shared by all modules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A `w × h × d` real tensor holding the embedding of one image.
///
/// Values are stored position-major: the vector at raster position
/// `r = y·w + x` occupies `data[r·d .. (r+1)·d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    width: usize,
    height: usize,
    depth: usize,
    data: Vec<f64>,
}

impl FeatureTensor {
    pub fn new(width: usize, height: usize, depth: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || depth == 0 {
            return Err(Error::arg("tensor dimensions must be positive"));
        }
        if data.len() != width * height * depth {
            return Err(Error::arg(format!(
                "tensor data length {} does not match {}x{}x{}",
                data.len(),
                width,
                height,
                depth
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("tensor data must be finite"));
        }
        Ok(Self {
            width,
            height,
            depth,
            data,
        })
    }

    /// Tensor filled with a single value, mostly useful in tests.
    pub fn constant(width: usize, height: usize, depth: usize, value: f64) -> Result<Self> {
        Self::new(width, height, depth, vec![value; width * height * depth])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Number of spatial positions, `w·h`.
    pub fn positions(&self) -> usize {
        self.width * self.height
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.depth)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Feature vector at raster position `r = y·w + x`.
    pub fn position(&self, r: usize) -> &[f64] {
        &self.data[r * self.depth..(r + 1) * self.depth]
    }

    /// Feature vector at spatial coordinates `(x, y)`.
    pub fn position_at(&self, x: usize, y: usize) -> &[f64] {
        self.position(y * self.width + x)
    }

    /// All position vectors in raster order.
    pub fn all_positions(&self) -> FeatureSet {
        let mut set = FeatureSet::with_capacity(self.depth, self.positions());
        for r in 0..self.positions() {
            set.push_unchecked(self.position(r).to_vec());
        }
        set
    }
}

/// A variable-length list of `d`-dimensional feature vectors belonging to one
/// image (the output of spatial attention or feature pooling).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    dim: usize,
    vectors: Vec<Vec<f64>>,
}

impl FeatureSet {
    pub fn with_capacity(dim: usize, capacity: usize) -> Self {
        Self {
            dim,
            vectors: Vec::with_capacity(capacity),
        }
    }

    pub fn from_vectors(vectors: Vec<Vec<f64>>) -> Result<Self> {
        if vectors.is_empty() {
            return Err(Error::arg("feature set must be nonempty"));
        }
        let dim = vectors[0].len();
        if dim == 0 {
            return Err(Error::arg("feature vectors must have positive dimension"));
        }
        if vectors.iter().any(|v| v.len() != dim) {
            return Err(Error::arg("feature vectors must share one dimension"));
        }
        Ok(Self { dim, vectors })
    }

    pub(crate) fn push_unchecked(&mut self, v: Vec<f64>) {
        debug_assert_eq!(v.len(), self.dim);
        self.vectors.push(v);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.vectors[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.vectors.iter().map(|v| v.as_slice())
    }

    pub fn into_vectors(self) -> Vec<Vec<f64>> {
        self.vectors
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }
}

/// One `c`-way `s`-shot classification task: labeled support features plus
/// unlabeled query features.
///
/// Label indices are 0-based and lie in `[0, ways)`.
#[derive(Debug, Clone)]
pub struct Episode {
    ways: usize,
    shots: usize,
    support: Vec<(FeatureTensor, usize)>,
    query: Vec<FeatureTensor>,
}

impl Episode {
    pub fn new(
        ways: usize,
        shots: usize,
        support: Vec<(FeatureTensor, usize)>,
        query: Vec<FeatureTensor>,
    ) -> Result<Self> {
        if ways == 0 || shots == 0 {
            return Err(Error::arg("ways and shots must be positive"));
        }
        if support.len() != ways * shots {
            return Err(Error::arg(format!(
                "expected {} support examples, got {}",
                ways * shots,
                support.len()
            )));
        }
        let mut per_class = vec![0usize; ways];
        for (_, label) in &support {
            if *label >= ways {
                return Err(Error::arg(format!(
                    "support label {} out of range for {} ways",
                    label, ways
                )));
            }
            per_class[*label] += 1;
        }
        if per_class.iter().any(|&n| n != shots) {
            return Err(Error::arg("every class must have exactly `shots` support examples"));
        }
        let dims = support[0].0.dims();
        let consistent = support
            .iter()
            .map(|(t, _)| t.dims())
            .chain(query.iter().map(|t| t.dims()))
            .all(|d| d == dims);
        if !consistent {
            return Err(Error::arg("all episode tensors must share (w, h, d)"));
        }
        Ok(Self {
            ways,
            shots,
            support,
            query,
        })
    }

    pub fn ways(&self) -> usize {
        self.ways
    }

    pub fn shots(&self) -> usize {
        self.shots
    }

    /// Number of support examples, `c·s`.
    pub fn support_count(&self) -> usize {
        self.support.len()
    }

    pub fn query_count(&self) -> usize {
        self.query.len()
    }

    pub fn support(&self) -> &[(FeatureTensor, usize)] {
        &self.support
    }

    pub fn query(&self) -> &[FeatureTensor] {
        &self.query
    }

    /// Episode with the same support set and a single query.
    pub fn singleton_query(&self, query_index: usize) -> Result<Self> {
        if query_index >= self.query.len() {
            return Err(Error::arg("query index out of range"));
        }
        Episode::new(
            self.ways,
            self.shots,
            self.support.clone(),
            vec![self.query[query_index].clone()],
        )
    }
}

/// Inference parameters shared by all methods.
///
/// Defaults follow the reference configuration for local propagation:
/// `tau = 0.3`, `clusters = 60`, `knn = 50`, `gamma = 4`, `alpha = 0.9`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodConfig {
    /// Spatial attention threshold relative to the max position norm.
    pub tau: f64,
    /// Number of k-means clusters per image when pooling is enabled.
    pub clusters: usize,
    /// Candidate list size for the reciprocal k-nearest-neighbor graph.
    pub knn: usize,
    /// Exponent of the clamped-cosine pairwise similarity.
    pub gamma: f64,
    /// Smoothing amount for feature propagation, in `[0, 1)`.
    pub alpha_feature: f64,
    /// Smoothing amount for label propagation, in `[0, 1)`.
    pub alpha_label: f64,
    /// Softmax scale used by the cosine-based classifiers.
    pub rho: f64,
    pub use_attention: bool,
    pub use_pooling: bool,
    pub use_feature_propagation: bool,
    /// Predict all queries jointly instead of one at a time.
    pub transductive: bool,
    /// Base seed for the deterministic portions of the pipeline (k-means).
    pub seed: u64,
}

impl Default for MethodConfig {
    fn default() -> Self {
        Self {
            tau: 0.3,
            clusters: 60,
            knn: 50,
            gamma: 4.0,
            alpha_feature: 0.9,
            alpha_label: 0.9,
            rho: 10.0,
            use_attention: true,
            use_pooling: true,
            use_feature_propagation: true,
            transductive: false,
            seed: 0,
        }
    }
}

impl MethodConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.tau.is_finite() || self.tau < 0.0 {
            return Err(Error::arg("tau must be finite and >= 0"));
        }
        if self.clusters == 0 {
            return Err(Error::arg("clusters must be positive"));
        }
        if self.knn == 0 {
            return Err(Error::arg("knn must be positive"));
        }
        if !self.gamma.is_finite() || self.gamma <= 1.0 {
            return Err(Error::arg("gamma must be finite and > 1"));
        }
        for (name, alpha) in [
            ("alpha_feature", self.alpha_feature),
            ("alpha_label", self.alpha_label),
        ] {
            if !alpha.is_finite() || !(0.0..1.0).contains(&alpha) {
                return Err(Error::arg(format!("{name} must lie in [0, 1)")));
            }
        }
        if !self.rho.is_finite() || self.rho <= 0.0 {
            return Err(Error::arg("rho must be finite and > 0"));
        }
        Ok(())
    }
}

/// Cosine similarity of two equal-length vectors.
///
/// By convention a zero-norm vector is treated as uninformative: the result
/// is 0 rather than an error.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::arg(format!(
            "cosine on vectors of different lengths ({} vs {})",
            u.len(),
            v.len()
        )));
    }
    let mut dot = 0.0;
    let mut nu = 0.0;
    let mut nv = 0.0;
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Ok(0.0);
    }
    Ok(dot / (nu.sqrt() * nv.sqrt()))
}

/// Softmax of `rho · a`, computed with max-subtraction. The output sums to 1
/// and every component is positive.
pub fn softmax(a: &[f64], rho: f64) -> Result<Vec<f64>> {
    if a.is_empty() {
        return Err(Error::arg("softmax of an empty vector"));
    }
    let scaled: Vec<f64> = a.iter().map(|v| rho * v).collect();
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Index of the maximum component; ties break to the smallest index.
pub fn predict(p: &[f64]) -> Result<usize> {
    if p.is_empty() {
        return Err(Error::arg("prediction from an empty score vector"));
    }
    let mut best = 0;
    for (i, v) in p.iter().enumerate().skip(1) {
        if *v > p[best] {
            best = i;
        }
    }
    Ok(best)
}

/// SplitMix64-style stream derivation: maps `(base, index)` to a well-mixed
/// seed so parallel consumers get independent, order-free streams.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
