//! Gallery layout: exact t-SNE to two dimensions, a trustworthiness score for
//! judging layouts, and GRE-based z-ordering of overlapping thumbnails.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::sync::{Arc, RwLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, EmbeddingMatrix, ModelId, PromptId};
use crate::error::{Error, Result};
use crate::metrics::{self, GreWeights};

const BANDWIDTH_SEARCH_STEPS: usize = 50;
const BANDWIDTH_TOLERANCE: f64 = 1e-5;
const MIN_GAIN: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayoutParams {
    pub perplexity: f64,
    pub iterations: usize,
    pub early_exaggeration: f64,
    /// Iterations run with exaggeration and the low momentum.
    pub exaggeration_iterations: usize,
    pub learning_rate: f64,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub seed: u64,
}

impl Default for LayoutParams {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
            learning_rate: 200.0,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            seed: 0,
        }
    }
}

impl LayoutParams {
    pub fn validate(&self, n: usize) -> Result<()> {
        if n < 4 {
            return Err(Error::TooFewPoints { needed: 4, got: n });
        }
        if !(self.perplexity > 0.0) {
            return Err(Error::InvalidParam("perplexity must be positive".into()));
        }
        let limit = (n as f64 - 1.0) / 3.0;
        if self.perplexity >= limit {
            return Err(Error::PerplexityTooLarge {
                perplexity: self.perplexity,
                limit,
            });
        }
        if self.iterations < self.exaggeration_iterations {
            return Err(Error::InvalidParam(format!(
                "iterations ({}) must be at least {}",
                self.iterations, self.exaggeration_iterations
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidParam("learning_rate must be positive".into()));
        }
        Ok(())
    }

    /// Lower the perplexity, if needed, so that `n` points are admissible.
    /// Below five points no perplexity works and the value is left alone.
    pub fn fitted_to(mut self, n: usize) -> Self {
        let limit = (n as f64 - 1.0) / 3.0;
        if self.perplexity >= limit && limit > 1.0 {
            self.perplexity = (limit - 0.5).max((1.0 + limit) / 2.0);
        }
        self
    }

    /// Stable key for caching layouts computed with these parameters.
    pub fn cache_key(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.perplexity.to_bits().hash(&mut h);
        self.iterations.hash(&mut h);
        self.early_exaggeration.to_bits().hash(&mut h);
        self.exaggeration_iterations.hash(&mut h);
        self.learning_rate.to_bits().hash(&mut h);
        self.initial_momentum.to_bits().hash(&mut h);
        self.final_momentum.to_bits().hash(&mut h);
        self.seed.hash(&mut h);
        h.finish()
    }
}

/// Output of [`tsne_fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct TsneFit {
    pub coordinates: Vec<[f64; 2]>,
    /// KL(P || Q) at the initial coordinates, without exaggeration.
    pub kl_initial: f64,
    pub kl_final: f64,
}

/// Affinities of the high-dimensional points.
#[derive(Debug, Clone)]
pub struct Affinities {
    /// Symmetric joint probabilities, row-major n × n.
    pub p: Vec<f64>,
    /// Perplexity actually achieved by each point's bandwidth.
    pub achieved_perplexity: Vec<f64>,
}

pub fn squared_distances(points: &[Vec<f64>]) -> Vec<f64> {
    let n = points.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let s: f64 = points[i]
                .iter()
                .zip(&points[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d[i * n + j] = s;
            d[j * n + i] = s;
        }
    }
    d
}

/// Perplexity-calibrated Gaussian conditionals, symmetrized into joint probabilities.
pub fn joint_probabilities(sq_dist: &[f64], n: usize, perplexity: f64) -> Affinities {
    let target = perplexity.ln();
    let mut cond = vec![0.0; n * n];
    let mut achieved = vec![0.0; n];
    let mut row = vec![0.0; n];

    for i in 0..n {
        let d = &sq_dist[i * n..(i + 1) * n];
        // shift by the smallest neighbour distance so exp() never underflows to all zeros
        let d_min = (0..n)
            .filter(|&j| j != i)
            .map(|j| d[j])
            .fold(f64::INFINITY, f64::min);
        let (mut beta, mut lo, mut hi) = (1.0, f64::NEG_INFINITY, f64::INFINITY);
        let mut entropy = 0.0;
        for _ in 0..BANDWIDTH_SEARCH_STEPS {
            let mut sum = 0.0;
            let mut weighted = 0.0;
            for j in 0..n {
                if j == i {
                    row[j] = 0.0;
                    continue;
                }
                let shifted = d[j] - d_min;
                let v = (-beta * shifted).exp();
                row[j] = v;
                sum += v;
                weighted += shifted * v;
            }
            entropy = sum.ln() + beta * weighted / sum;
            for v in row.iter_mut() {
                *v /= sum;
            }
            let diff = entropy - target;
            if diff.abs() < BANDWIDTH_TOLERANCE {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_infinite() { beta * 2.0 } else { (beta + hi) / 2.0 };
            } else {
                hi = beta;
                beta = if lo.is_infinite() { beta / 2.0 } else { (beta + lo) / 2.0 };
            }
        }
        achieved[i] = entropy.exp();
        cond[i * n..(i + 1) * n].copy_from_slice(&row);
    }

    let mut p = vec![0.0; n * n];
    let denom = 2.0 * n as f64;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p[i * n + j] = (cond[i * n + j] + cond[j * n + i]) / denom;
            }
        }
    }
    Affinities {
        p,
        achieved_perplexity: achieved,
    }
}

/// Student-t numerators `1 / (1 + |y_i - y_j|^2)` (zero diagonal) and their sum.
fn student_t(y: &[[f64; 2]]) -> (Vec<f64>, f64) {
    let n = y.len();
    let mut num = vec![0.0; n * n];
    let mut sum = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = y[i][0] - y[j][0];
            let dy = y[i][1] - y[j][1];
            let v = 1.0 / (1.0 + dx * dx + dy * dy);
            num[i * n + j] = v;
            num[j * n + i] = v;
            sum += 2.0 * v;
        }
    }
    (num, sum)
}

/// KL(P || Q) of the layout `y`.
pub fn kl_divergence(p: &[f64], y: &[[f64; 2]]) -> f64 {
    let (num, sum) = student_t(y);
    p.iter()
        .zip(&num)
        .filter(|(&pij, _)| pij > 0.0)
        .map(|(&pij, &nij)| {
            let q = (nij / sum).max(f64::MIN_POSITIVE);
            pij * (pij / q).ln()
        })
        .sum()
}

fn normalized_rows(embeddings: &EmbeddingMatrix) -> Result<Vec<Vec<f64>>> {
    embeddings.iter_rows().map(metrics::unit_f64).collect()
}

/// Exact t-SNE of the embedding rows into two dimensions.
///
/// Rows are L2-normalized first, so neighbourhoods follow cosine distance.
/// Output is bit-identical for identical inputs and seed.
pub fn tsne_fit(embeddings: &EmbeddingMatrix, params: &LayoutParams) -> Result<TsneFit> {
    let n = embeddings.rows();
    params.validate(n)?;
    let points = normalized_rows(embeddings)?;
    let sq = squared_distances(&points);
    let p = joint_probabilities(&sq, n, params.perplexity).p;

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let init = Normal::new(0.0, 1e-4).expect("valid normal");
    let mut y: Vec<[f64; 2]> = (0..n)
        .map(|_| [init.sample(&mut rng), init.sample(&mut rng)])
        .collect();
    let kl_initial = kl_divergence(&p, &y);

    let mut velocity = vec![[0.0f64; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut grad = vec![[0.0f64; 2]; n];

    for iter in 0..params.iterations {
        let early = iter < params.exaggeration_iterations;
        let exaggeration = if early { params.early_exaggeration } else { 1.0 };
        let momentum = if early {
            params.initial_momentum
        } else {
            params.final_momentum
        };

        let (num, sum) = student_t(&y);
        for i in 0..n {
            let (mut gx, mut gy) = (0.0, 0.0);
            for j in 0..n {
                if i == j {
                    continue;
                }
                let nij = num[i * n + j];
                let mult = (exaggeration * p[i * n + j] - nij / sum) * nij;
                gx += mult * (y[i][0] - y[j][0]);
                gy += mult * (y[i][1] - y[j][1]);
            }
            grad[i] = [4.0 * gx, 4.0 * gy];
        }

        for i in 0..n {
            for d in 0..2 {
                let same_sign = (grad[i][d] > 0.0) == (velocity[i][d] > 0.0);
                gains[i][d] = if same_sign {
                    (gains[i][d] * 0.8).max(MIN_GAIN)
                } else {
                    gains[i][d] + 0.2
                };
                velocity[i][d] =
                    momentum * velocity[i][d] - params.learning_rate * gains[i][d] * grad[i][d];
                y[i][d] += velocity[i][d];
            }
        }

        let mean = y.iter().fold([0.0, 0.0], |acc, v| [acc[0] + v[0], acc[1] + v[1]]);
        let mean = [mean[0] / n as f64, mean[1] / n as f64];
        for v in y.iter_mut() {
            v[0] -= mean[0];
            v[1] -= mean[1];
        }
    }

    let kl_final = kl_divergence(&p, &y);
    Ok(TsneFit {
        coordinates: y,
        kl_initial,
        kl_final,
    })
}

/// Neighbours of `i` sorted by distance, ties by index.
fn ranked_neighbours(n: usize, i: usize, dist: impl Fn(usize) -> f64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).filter(|&j| j != i).collect();
    idx.sort_by(|&a, &b| dist(a).total_cmp(&dist(b)).then(a.cmp(&b)));
    idx
}

/// How well `low_dim` preserves the k-nearest-neighbour structure of `high_dim`
/// (Euclidean distances in both spaces). 1.0 means no intrusions.
pub fn trustworthiness(high_dim: &EmbeddingMatrix, low_dim: &[[f64; 2]], k: usize) -> Result<f64> {
    let n = high_dim.rows();
    if low_dim.len() != n {
        return Err(Error::DimMismatch(n, low_dim.len()));
    }
    if k < 1 || 2 * k >= n {
        return Err(Error::BadK { k, n });
    }
    let high: Vec<Vec<f64>> = high_dim
        .iter_rows()
        .map(|r| r.iter().map(|&x| f64::from(x)).collect())
        .collect();
    let high_sq = squared_distances(&high);

    let penalty: f64 = (0..n)
        .map(|i| {
            let high_order = ranked_neighbours(n, i, |j| high_sq[i * n + j]);
            let mut high_rank = vec![0usize; n];
            for (r, &j) in high_order.iter().enumerate() {
                high_rank[j] = r + 1;
            }
            let low_order = ranked_neighbours(n, i, |j| {
                let dx = low_dim[i][0] - low_dim[j][0];
                let dy = low_dim[i][1] - low_dim[j][1];
                dx * dx + dy * dy
            });
            low_order[..k]
                .iter()
                .filter(|&&j| high_rank[j] > k)
                .map(|&j| (high_rank[j] - k) as f64)
                .sum::<f64>()
        })
        .sum();

    let (n, k) = (n as f64, k as f64);
    Ok(1.0 - 2.0 / (n * k * (2.0 * n - 3.0 * k - 1.0)) * penalty)
}

/// Back-to-front draw order: ascending score, ties by model_id descending, so
/// the highest-scoring (and, among equals, lowest-id) model is drawn last.
pub fn z_order(scored: &[(ModelId, f64)]) -> Vec<ModelId> {
    let mut v = scored.to_vec();
    v.sort_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
    v.into_iter().map(|(m, _)| m).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayoutPoint {
    pub model_id: ModelId,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub prompt_id: PromptId,
    pub points: Vec<LayoutPoint>,
    pub z_order: Vec<ModelId>,
    pub kl_initial: f64,
    pub kl_final: f64,
}

impl Layout {
    /// The document written by `gemrec layout --out`.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "prompt_id": self.prompt_id,
            "points": self.points,
            "z_order": self.z_order,
            "kl_final": self.kl_final,
        })
    }
}

/// Layout of one prompt's images; z-order uses GRE-Scores under `weights`.
pub fn compute_layout(
    catalog: &Catalog,
    prompt_id: PromptId,
    params: &LayoutParams,
    weights: &GreWeights,
) -> Result<Layout> {
    let images = catalog.images_for_prompt(prompt_id)?;
    let rows: Vec<usize> = images.iter().map(|img| img.embedding_row).collect();
    let matrix = catalog.image_embeddings().select_rows(&rows)?;
    let fit = tsne_fit(&matrix, params)?;

    let scored: Vec<(ModelId, f64)> = metrics::metric_vectors(catalog, prompt_id)?
        .iter()
        .map(|mv| (mv.model_id, metrics::gre_score(mv, weights)))
        .collect();
    let points = images
        .iter()
        .zip(&fit.coordinates)
        .map(|(img, c)| LayoutPoint {
            model_id: img.model_id,
            x: c[0],
            y: c[1],
        })
        .collect();
    Ok(Layout {
        prompt_id,
        points,
        z_order: z_order(&scored),
        kl_initial: fit.kl_initial,
        kl_final: fit.kl_final,
    })
}

/// Per-prompt layouts keyed by `(prompt_id, params.cache_key())`.
#[derive(Debug, Default)]
pub struct LayoutCache {
    entries: RwLock<HashMap<(PromptId, u64), Arc<Layout>>>,
}

impl LayoutCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, prompt_id: PromptId, params: &LayoutParams) -> Option<Arc<Layout>> {
        self.entries
            .read()
            .expect("layout cache poisoned")
            .get(&(prompt_id, params.cache_key()))
            .cloned()
    }

    pub fn insert(&self, params: &LayoutParams, layout: Layout) -> Arc<Layout> {
        let layout = Arc::new(layout);
        self.entries
            .write()
            .expect("layout cache poisoned")
            .insert((layout.prompt_id, params.cache_key()), layout.clone());
        layout
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("layout cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Compute every prompt's layout in parallel and store the results.
    pub fn precompute_all(
        &self,
        catalog: &Catalog,
        params: &LayoutParams,
        weights: &GreWeights,
    ) -> Result<()> {
        let layouts = catalog
            .prompts()
            .par_iter()
            .map(|p| compute_layout(catalog, p.prompt_id, params, weights))
            .collect::<Result<Vec<_>>>()?;
        for layout in layouts {
            self.insert(params, layout);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_points_have_uniform_affinities() {
        let pts = vec![vec![0.5, 0.5]; 4];
        let aff = joint_probabilities(&squared_distances(&pts), 4, 2.0);
        for i in 0..4 {
            for j in 0..4 {
                let expected = if i == j { 0.0 } else { 1.0 / 12.0 };
                assert!((aff.p[i * 4 + j] - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn param_validation() {
        let p = LayoutParams::default();
        assert!(matches!(p.validate(3), Err(Error::TooFewPoints { .. })));
        assert!(matches!(p.validate(50), Err(Error::PerplexityTooLarge { .. })));
        assert!(p.validate(200).is_ok());
        let short = LayoutParams {
            iterations: 100,
            ..p
        };
        assert!(short.validate(200).is_err());
    }

    #[test]
    fn z_order_examples() {
        assert_eq!(z_order(&[(1, 0.9), (2, 0.2)]), vec![2, 1]);
        assert_eq!(z_order(&[(1, 0.5), (3, 0.5), (2, 0.5)]), vec![3, 2, 1]);
        assert_eq!(z_order(&[(10, 0.1), (11, 0.5), (12, 0.3)]), vec![10, 12, 11]);
    }

    #[test]
    fn trustworthiness_isometry_is_one() {
        let high = EmbeddingMatrix::from_rows(&[
            [0.0f32, 0.0],
            [1.0, 0.0],
            [3.0, 1.0],
            [0.0, 4.0],
            [5.0, 5.0],
            [-2.0, 1.5],
        ])
        .unwrap();
        // rotation + translation preserves every distance
        let low: Vec<[f64; 2]> = high
            .iter_rows()
            .map(|r| {
                let (x, y) = (f64::from(r[0]), f64::from(r[1]));
                [-y + 10.0, x - 3.0]
            })
            .collect();
        assert_eq!(trustworthiness(&high, &low, 2).unwrap(), 1.0);
        assert!(matches!(trustworthiness(&high, &low, 3), Err(Error::BadK { .. })));
        assert!(matches!(trustworthiness(&high, &low, 0), Err(Error::BadK { .. })));
    }

    #[test]
    fn trustworthiness_one_swapped_pair() {
        // Points on a line at 0, 1, 3, 6, 10, 15; high-dim 1-NN of each point:
        //   0->1, 1->0, 3->1, 6->3, 10->6, 15->10.
        // Low-dim swaps the positions of 6 and 10 (indices 3 and 4).
        let high = EmbeddingMatrix::from_rows(&[[0.0f32], [1.0], [3.0], [6.0], [10.0], [15.0]])
            .unwrap();
        let low = [[0.0, 0.0], [1.0, 0.0], [3.0, 0.0], [10.0, 0.0], [6.0, 0.0], [15.0, 0.0]];
        // Intrusions (low-dim 1-NN, its high-dim rank):
        //   point3 -> point4, rank 2 (penalty 1)
        //   point4 -> point2, rank 3 (penalty 2)
        //   point5 -> point3, rank 2 (penalty 1)
        // T = 1 - 2 / (6 * 1 * (12 - 3 - 1)) * 4 = 5/6
        let t = trustworthiness(&high, &low, 1).unwrap();
        assert!((t - 5.0 / 6.0).abs() < 1e-12, "{t}");
    }

    #[test]
    fn cache_roundtrip() {
        let cache = LayoutCache::new();
        let params = LayoutParams::default();
        assert!(cache.get(1, &params).is_none());
        cache.insert(
            &params,
            Layout {
                prompt_id: 1,
                points: vec![],
                z_order: vec![],
                kl_initial: 1.0,
                kl_final: 0.5,
            },
        );
        assert!(cache.get(1, &params).is_some());
        let other = LayoutParams { seed: 9, ..params };
        assert!(cache.get(1, &other).is_none());
    }
}
