//! Reciprocal k-nearest-neighbor similarity graph and its symmetrically
//! normalized adjacency.

use crate::error::{Error, Result};

/// Pairwise similarity: cosine clamped at zero, raised to `gamma`.
pub fn pair_similarity(u: &[f64], v: &[f64], gamma: f64) -> Result<f64> {
    let c = crate::core::cosine(u, v)?;
    Ok(c.max(0.0).powf(gamma))
}

/// Undirected weighted graph over `t` nodes with reciprocal k-NN adjacency.
///
/// An edge `(u, v)` exists iff each endpoint appears in the other's candidate
/// list of the `min(k, t-1)` most similar nodes and the similarity is
/// positive. Rows are kept sorted by column index so reductions have a fixed
/// summation order.
#[derive(Debug, Clone)]
pub struct Graph {
    weights: Vec<Vec<(usize, f64)>>,
    normalized: Vec<Vec<(usize, f64)>>,
    degrees: Vec<f64>,
}

/// Degrees are clamped at this floor before the inverse square root, so
/// isolated nodes stay finite and contribute nothing.
const DEGREE_FLOOR: f64 = 1e-12;

impl Graph {
    /// Build the reciprocal k-NN graph over the given vectors.
    ///
    /// Vectors are unit-normalized once up front (zero-norm vectors become
    /// zero and end up isolated). Candidate ties at the list boundary resolve
    /// toward the smaller node index.
    pub fn build(vectors: &[Vec<f64>], k: usize, gamma: f64) -> Result<Self> {
        let t = vectors.len();
        if t == 0 {
            return Err(Error::arg("graph needs at least one node"));
        }
        if k == 0 {
            return Err(Error::arg("k must be positive"));
        }
        let dim = vectors[0].len();
        if vectors.iter().any(|v| v.len() != dim) {
            return Err(Error::arg("graph vectors must share one dimension"));
        }
        if vectors
            .iter()
            .any(|v| v.iter().any(|x| !x.is_finite()))
        {
            return Err(Error::arg("graph vectors must be finite"));
        }

        let unit: Vec<Vec<f64>> = vectors
            .iter()
            .map(|v| {
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if n == 0.0 {
                    vec![0.0; dim]
                } else {
                    v.iter().map(|x| x / n).collect()
                }
            })
            .collect();

        let list_len = k.min(t.saturating_sub(1));
        let mut candidates: Vec<Vec<(usize, f64)>> = Vec::with_capacity(t);
        for u in 0..t {
            let mut sims: Vec<(usize, f64)> = Vec::with_capacity(t - 1);
            for v in 0..t {
                if v == u {
                    continue;
                }
                let dot: f64 = unit[u].iter().zip(&unit[v]).map(|(a, b)| a * b).sum();
                let s = dot.max(0.0).powf(gamma);
                if s > 0.0 {
                    sims.push((v, s));
                }
            }
            sims.sort_unstable_by(|a, b| {
                b.1.partial_cmp(&a.1).expect("similarities are finite").then(a.0.cmp(&b.0))
            });
            sims.truncate(list_len);
            candidates.push(sims);
        }

        let member: Vec<Vec<usize>> = candidates
            .iter()
            .map(|c| {
                let mut idx: Vec<usize> = c.iter().map(|&(v, _)| v).collect();
                idx.sort_unstable();
                idx
            })
            .collect();

        let mut weights: Vec<Vec<(usize, f64)>> = vec![Vec::new(); t];
        for u in 0..t {
            for &(v, s) in &candidates[u] {
                if v > u && member[v].binary_search(&u).is_ok() {
                    weights[u].push((v, s));
                    weights[v].push((u, s));
                }
            }
        }
        for row in &mut weights {
            row.sort_unstable_by_key(|&(v, _)| v);
        }

        let degrees: Vec<f64> = weights
            .iter()
            .map(|row| row.iter().map(|&(_, w)| w).sum())
            .collect();
        let inv_sqrt: Vec<f64> = degrees
            .iter()
            .map(|&d| 1.0 / d.max(DEGREE_FLOOR).sqrt())
            .collect();
        let normalized: Vec<Vec<(usize, f64)>> = weights
            .iter()
            .enumerate()
            .map(|(u, row)| {
                row.iter()
                    .map(|&(v, w)| (v, w * inv_sqrt[u] * inv_sqrt[v]))
                    .collect()
            })
            .collect();

        Ok(Self {
            weights,
            normalized,
            degrees,
        })
    }

    pub fn node_count(&self) -> usize {
        self.weights.len()
    }

    /// Number of undirected edges.
    pub fn edge_count(&self) -> usize {
        self.weights.iter().map(|r| r.len()).sum::<usize>() / 2
    }

    pub fn degree(&self, u: usize) -> f64 {
        self.degrees[u]
    }

    /// Raw adjacency rows, sorted by column index.
    pub fn weight_rows(&self) -> &[Vec<(usize, f64)>] {
        &self.weights
    }

    /// Rows of the symmetrically normalized adjacency `D^{-1/2} W D^{-1/2}`.
    pub fn normalized_rows(&self) -> &[Vec<(usize, f64)>] {
        &self.normalized
    }

    pub fn weight(&self, u: usize, v: usize) -> f64 {
        self.weights[u]
            .binary_search_by_key(&v, |&(c, _)| c)
            .map(|i| self.weights[u][i].1)
            .unwrap_or(0.0)
    }

    /// `y = D^{-1/2} W D^{-1/2} x`, accumulating each row in column order.
    pub fn normalized_matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.node_count());
        self.normalized
            .iter()
            .map(|row| row.iter().map(|&(v, w)| w * x[v]).sum())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vectors(rng: &mut ChaCha8Rng, t: usize, d: usize) -> Vec<Vec<f64>> {
        (0..t)
            .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn similarity_clamps_then_raises() {
        let u = [1.0, 0.0];
        // cos = 0.5 with the 60-degree vector; 0.5^4 = 0.0625
        let v = [0.5, 3.0_f64.sqrt() / 2.0];
        let s = pair_similarity(&u, &v, 4.0).unwrap();
        assert!((s - 0.0625).abs() < 1e-12);
        // negative cosine clamps to zero before the power
        let w = [-1.0, 0.0];
        assert_eq!(pair_similarity(&u, &w, 4.0).unwrap(), 0.0);
    }

    #[test]
    fn two_identical_nodes_normalize_to_unit_edge() {
        let g = Graph::build(&[vec![1.0, 1.0], vec![2.0, 2.0]], 3, 4.0).unwrap();
        assert_eq!(g.edge_count(), 1);
        assert!((g.weight(0, 1) - 1.0).abs() < 1e-12);
        assert!((g.degree(0) - 1.0).abs() < 1e-12);
        // W/sqrt(d_u d_v) = 1
        assert!((g.normalized_rows()[0][0].1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mutuality_prunes_one_sided_neighbors() {
        // v1 and v2 coincide, u is farther: with k = 1, u lists v1 but
        // neither v1 nor v2 lists u back, so u ends up isolated.
        let s2 = 0.5_f64.sqrt();
        let vs = vec![vec![1.0, 0.0], vec![s2, s2], vec![s2, s2]];
        let g = Graph::build(&vs, 1, 4.0).unwrap();
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.weight(0, 1), 0.0);
        assert_eq!(g.weight(0, 2), 0.0);
        assert!((g.weight(1, 2) - 1.0).abs() < 1e-12);
        assert_eq!(g.degree(0), 0.0);
    }

    #[test]
    fn boundary_ties_prefer_smaller_index() {
        // nodes 1 and 2 are equally similar to node 0, competing for its
        // single candidate slot; they are orthogonal to each other, so both
        // list node 0 back. The surviving edge shows which one node 0 chose.
        let s2 = 0.5_f64.sqrt();
        let vs = vec![vec![1.0, 0.0], vec![s2, s2], vec![s2, -s2]];
        let g = Graph::build(&vs, 1, 4.0).unwrap();
        assert_eq!(g.edge_count(), 1);
        assert!((g.weight(0, 1) - 0.25).abs() < 1e-12);
        assert_eq!(g.weight(0, 2), 0.0);
    }

    #[test]
    fn zero_vector_is_isolated() {
        let vs = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 0.1]];
        let g = Graph::build(&vs, 2, 4.0).unwrap();
        assert_eq!(g.degree(0), 0.0);
        assert!(g.weight_rows()[0].is_empty());
        assert!(g.edge_count() >= 1);
    }

    #[test]
    fn matches_a_brute_force_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        for trial in 0..20 {
            let t = rng.gen_range(2..30);
            let k = rng.gen_range(1..6);
            let vs = random_vectors(&mut rng, t, 4);
            let g = Graph::build(&vs, k, 4.0).unwrap();

            // independent reconstruction from definitions
            let sim = |a: usize, b: usize| -> f64 {
                crate::core::cosine(&vs[a], &vs[b]).unwrap().max(0.0).powi(4)
            };
            let lists: Vec<Vec<usize>> = (0..t)
                .map(|u| {
                    let mut all: Vec<usize> = (0..t).filter(|&v| v != u).collect();
                    all.sort_by(|&a, &b| {
                        sim(u, b)
                            .partial_cmp(&sim(u, a))
                            .unwrap()
                            .then(a.cmp(&b))
                    });
                    all.truncate(k.min(t - 1));
                    all.into_iter().filter(|&v| sim(u, v) > 0.0).collect()
                })
                .collect();
            for u in 0..t {
                for v in 0..t {
                    let expected = if u != v
                        && lists[u].contains(&v)
                        && lists[v].contains(&u)
                        && sim(u, v) > 0.0
                    {
                        sim(u, v)
                    } else {
                        0.0
                    };
                    let got = g.weight(u, v);
                    assert!(
                        (got - expected).abs() < 1e-9,
                        "trial {trial}: weight ({u},{v}) was {got}, expected {expected}"
                    );
                }
            }
        }
    }

    #[test]
    fn normalized_spectrum_lies_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(67);
        for _ in 0..10 {
            let t = rng.gen_range(4..25);
            let vs = random_vectors(&mut rng, t, 3);
            let g = Graph::build(&vs, 4, 4.0).unwrap();
            let mut dense = DMatrix::<f64>::zeros(t, t);
            for (u, row) in g.normalized_rows().iter().enumerate() {
                for &(v, w) in row {
                    dense[(u, v)] = w;
                }
            }
            let eig = dense.symmetric_eigen();
            let mut max_e = f64::NEG_INFINITY;
            for &e in eig.eigenvalues.iter() {
                assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&e), "eigenvalue {e}");
                max_e = max_e.max(e);
            }
            if g.edge_count() > 0 {
                // D^{1/2} 1 is an eigenvector at exactly 1 on each component
                assert!((max_e - 1.0).abs() < 1e-8, "top eigenvalue {max_e}");
            }
        }
    }

    #[test]
    fn per_vector_positive_scaling_changes_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let vs = random_vectors(&mut rng, 15, 4);
        let g = Graph::build(&vs, 3, 4.0).unwrap();
        let scaled: Vec<Vec<f64>> = vs
            .iter()
            .map(|v| {
                let lambda = rng.gen_range(0.1..10.0);
                v.iter().map(|x| lambda * x).collect()
            })
            .collect();
        let gs = Graph::build(&scaled, 3, 4.0).unwrap();
        for u in 0..15 {
            for v in 0..15 {
                assert!((g.weight(u, v) - gs.weight(u, v)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn oversized_k_uses_all_other_nodes() {
        let mut rng = ChaCha8Rng::seed_from_u64(73);
        // strictly positive entries make every similarity positive
        let vs: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..3).map(|_| rng.gen_range(0.1..1.0)).collect())
            .collect();
        let g = Graph::build(&vs, 100, 4.0).unwrap();
        // complete graph: every pair is in each other's list
        assert_eq!(g.edge_count(), 5 * 4 / 2);
    }

    #[test]
    fn matvec_agrees_with_dense_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(79);
        let vs = random_vectors(&mut rng, 12, 3);
        let g = Graph::build(&vs, 3, 4.0).unwrap();
        let x: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y = g.normalized_matvec(&x);
        for (u, yu) in y.iter().enumerate() {
            let mut expect = 0.0;
            for (v, xv) in x.iter().enumerate() {
                let w = g.weight(u, v);
                if w != 0.0 {
                    let n = w / (g.degree(u).max(1e-12) * g.degree(v).max(1e-12)).sqrt();
                    expect += n * xv;
                }
            }
            assert!((yu - expect).abs() < 1e-9);
        }
    }
}
