//! Offline scores over one prompt's images: cosine similarity matrices, average
//! pairwise similarity (APS), distinctiveness, normalized metric vectors and the
//! GRE-Score ensemble.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, ImageRecord, ModelId, ModelRecord, PromptId};
use crate::error::{Error, Result};

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch(a.len(), b.len()));
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

pub(crate) fn unit_f64(v: &[f32]) -> Result<Vec<f64>> {
    let norm = v.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(v.iter().map(|&x| f64::from(x) / norm).collect())
}

/// Symmetric cosine-similarity matrix of one prompt's images.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimilarityMatrix {
    pub prompt_id: PromptId,
    /// Row/column order: download count descending, then model_id ascending.
    pub model_order: Vec<ModelId>,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    /// Build from explicit values; used by tests and by callers holding their own matrices.
    pub fn from_values(prompt_id: PromptId, model_order: Vec<ModelId>, values: Vec<f64>) -> Result<Self> {
        let n = model_order.len();
        if values.len() != n * n {
            return Err(Error::InvalidParam(format!(
                "{} values for a {n} x {n} matrix",
                values.len()
            )));
        }
        Ok(Self {
            prompt_id,
            model_order,
            values,
        })
    }

    pub fn n(&self) -> usize {
        self.model_order.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.n();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn index_of(&self, model_id: ModelId) -> Option<usize> {
        self.model_order.iter().position(|&m| m == model_id)
    }
}

/// Orders models by download count descending, ties by model_id ascending.
pub(crate) fn download_order(models: &mut [&ModelRecord]) {
    models.sort_by(|a, b| {
        b.download_count
            .cmp(&a.download_count)
            .then(a.model_id.cmp(&b.model_id))
    });
}

/// Similarity matrix over every model that has an image for `prompt_id`.
pub fn similarity_matrix(catalog: &Catalog, prompt_id: PromptId) -> Result<SimilarityMatrix> {
    let images = catalog.images_for_prompt(prompt_id)?;
    similarity_matrix_over(catalog, prompt_id, &images)
}

/// Similarity matrix restricted to the given images (all from `prompt_id`).
pub fn similarity_matrix_over(
    catalog: &Catalog,
    prompt_id: PromptId,
    images: &[&ImageRecord],
) -> Result<SimilarityMatrix> {
    let mut models = images
        .iter()
        .map(|img| catalog.model(img.model_id))
        .collect::<Result<Vec<_>>>()?;
    download_order(&mut models);
    let by_model: HashMap<ModelId, &ImageRecord> =
        images.iter().map(|img| (img.model_id, *img)).collect();
    let units = models
        .iter()
        .map(|m| unit_f64(catalog.image_embedding(by_model[&m.model_id])))
        .collect::<Result<Vec<_>>>()?;

    let n = units.len();
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        values[i * n + i] = 1.0;
        for j in (i + 1)..n {
            let s = dot(&units[i], &units[j]).clamp(-1.0, 1.0);
            values[i * n + j] = s;
            values[j * n + i] = s;
        }
    }
    Ok(SimilarityMatrix {
        prompt_id,
        model_order: models.iter().map(|m| m.model_id).collect(),
        values,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean of the strictly upper-triangular entries.
pub fn average_pairwise_similarity(matrix: &SimilarityMatrix) -> Result<f64> {
    let n = matrix.n();
    if n < 2 {
        return Err(Error::TooFewModels { needed: 2, got: n });
    }
    let mut sum = 0.0;
    for i in 0..n {
        sum += matrix.row(i)[i + 1..].iter().sum::<f64>();
    }
    Ok(sum / (n * (n - 1) / 2) as f64)
}

/// One minus the mean similarity of row `model_index` to every other model.
pub fn distinctiveness(matrix: &SimilarityMatrix, model_index: usize) -> Result<f64> {
    let n = matrix.n();
    if n < 2 {
        return Err(Error::TooFewModels { needed: 2, got: n });
    }
    if model_index >= n {
        return Err(Error::OutOfRange {
            index: model_index,
            rows: n,
        });
    }
    let others: f64 = matrix
        .row(model_index)
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != model_index)
        .map(|(_, v)| v)
        .sum();
    Ok(1.0 - others / (n - 1) as f64)
}

/// Min-max scaling to [0, 1]; a constant input maps to 0.5 everywhere.
pub fn minmax_normalize(raw: &[f64]) -> Result<Vec<f64>> {
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    if raw.is_empty() {
        return Err(Error::InvalidParam("cannot normalize an empty list".into()));
    }
    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return Ok(vec![0.5; raw.len()]);
    }
    let span = max - min;
    Ok(raw.iter().map(|v| ((v - min) / span).clamp(0.0, 1.0)).collect())
}

/// `ln(1 + downloads)`.
pub fn popularity_raw(model: &ModelRecord) -> f64 {
    (model.download_count as f64).ln_1p()
}

/// Ensemble weights `(accuracy, distinctiveness, popularity)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GreWeights {
    pub accuracy: f64,
    pub distinctiveness: f64,
    pub popularity: f64,
}

impl GreWeights {
    pub fn new(accuracy: f64, distinctiveness: f64, popularity: f64) -> Result<Self> {
        let w = [accuracy, distinctiveness, popularity];
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidParam("GRE weights must be finite and >= 0".into()));
        }
        if w.iter().all(|v| *v == 0.0) {
            return Err(Error::InvalidParam("at least one GRE weight must be positive".into()));
        }
        Ok(Self {
            accuracy,
            distinctiveness,
            popularity,
        })
    }

    pub fn sum(&self) -> f64 {
        self.accuracy + self.distinctiveness + self.popularity
    }
}

impl Default for GreWeights {
    fn default() -> Self {
        Self {
            accuracy: 1.0,
            distinctiveness: 0.8,
            popularity: 0.2,
        }
    }
}

impl FromStr for GreWeights {
    type Err = Error;

    /// Parses `"a,d,p"`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidParam(format!("lambda {s:?}: {e}")))?;
        match parts[..] {
            [a, d, p] => Self::new(a, d, p),
            _ => Err(Error::InvalidParam(format!(
                "lambda {s:?} must have exactly three comma-separated values"
            ))),
        }
    }
}

impl fmt::Display for GreWeights {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.accuracy, self.distinctiveness, self.popularity)
    }
}

/// Normalized component scores of one (model, prompt) cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricVector {
    pub model_id: ModelId,
    pub prompt_id: PromptId,
    pub q_accuracy: f64,
    pub q_distinctiveness: f64,
    pub q_popularity: f64,
}

pub fn gre_score(mv: &MetricVector, w: &GreWeights) -> f64 {
    w.accuracy * mv.q_accuracy + w.distinctiveness * mv.q_distinctiveness + w.popularity * mv.q_popularity
}

/// Metric vectors for every model with an image for `prompt_id`, in catalog
/// model order. Popularity is normalized over the whole model corpus.
pub fn metric_vectors(catalog: &Catalog, prompt_id: PromptId) -> Result<Vec<MetricVector>> {
    let images = catalog.images_for_prompt(prompt_id)?;
    let corpus: Vec<&ModelRecord> = catalog.models().iter().collect();
    metric_vectors_over(catalog, prompt_id, &images, &corpus)
}

/// Metric vectors over an explicit image subset. Accuracy and distinctiveness
/// are normalized over `images`; popularity over `popularity_corpus`.
pub fn metric_vectors_over(
    catalog: &Catalog,
    prompt_id: PromptId,
    images: &[&ImageRecord],
    popularity_corpus: &[&ModelRecord],
) -> Result<Vec<MetricVector>> {
    if images.len() < 2 {
        return Err(Error::TooFewModels {
            needed: 2,
            got: images.len(),
        });
    }
    let matrix = similarity_matrix_over(catalog, prompt_id, images)?;

    let clip_raw: Vec<f64> = images.iter().map(|img| img.clip_score_raw).collect();
    let dist_raw = images
        .iter()
        .map(|img| {
            let idx = matrix.index_of(img.model_id).expect("model present in matrix");
            distinctiveness(&matrix, idx)
        })
        .collect::<Result<Vec<_>>>()?;

    let corpus_pop: Vec<f64> = popularity_corpus.iter().map(|m| popularity_raw(m)).collect();
    let corpus_norm = minmax_normalize(&corpus_pop)?;
    let pop_by_model: HashMap<ModelId, f64> = popularity_corpus
        .iter()
        .zip(corpus_norm)
        .map(|(m, q)| (m.model_id, q))
        .collect();

    let q_acc = minmax_normalize(&clip_raw)?;
    let q_dist = minmax_normalize(&dist_raw)?;
    images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let q_popularity = *pop_by_model.get(&img.model_id).ok_or_else(|| {
                Error::InvalidParam(format!("model {} missing from popularity corpus", img.model_id))
            })?;
            Ok(MetricVector {
                model_id: img.model_id,
                prompt_id,
                q_accuracy: q_acc[i],
                q_distinctiveness: q_dist[i],
                q_popularity,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{EmbeddingMatrix, LoadOptions, PromptRecord, PromptSource};

    fn mv(a: f64, d: f64, p: f64) -> MetricVector {
        MetricVector {
            model_id: 1,
            prompt_id: 1,
            q_accuracy: a,
            q_distinctiveness: d,
            q_popularity: p,
        }
    }

    /// One prompt, one model per embedding row.
    pub(crate) fn catalog_from(rows: &[Vec<f32>], clip: &[f64], downloads: &[u64]) -> Catalog {
        let n = rows.len();
        let models = (0..n)
            .map(|i| ModelRecord {
                model_id: i as u32 + 1,
                name: format!("m{i}"),
                version_id: 1,
                download_count: downloads[i],
                tags: vec![],
                trained_words: vec![],
            })
            .collect();
        let prompts = vec![PromptRecord {
            prompt_id: 1,
            text: "p".into(),
            negative_text: String::new(),
            tag: "t".into(),
            source: PromptSource::Original,
        }];
        let images = (0..n)
            .map(|i| ImageRecord {
                image_id: i as u64,
                model_id: i as u32 + 1,
                prompt_id: 1,
                embedding_row: i,
                nsfw_score: 0.0,
                clip_score_raw: clip[i],
                uri: String::new(),
            })
            .collect();
        let dim = rows[0].len();
        let mut prompt_row = vec![0.0f32; dim];
        prompt_row[0] = 1.0;
        Catalog::new(
            models,
            prompts,
            images,
            EmbeddingMatrix::from_rows(rows).unwrap(),
            EmbeddingMatrix::from_rows(&[prompt_row]).unwrap(),
            LoadOptions::default(),
        )
        .unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = cosine_similarity(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert!((c - 0.974631846).abs() < 1e-9);
        assert!(matches!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroVector)));
        assert!(matches!(cosine_similarity(&[1.0], &[1.0, 0.0]), Err(Error::DimMismatch(1, 2))));
    }

    #[test]
    fn identical_and_orthogonal_matrices() {
        let same = catalog_from(&vec![vec![0.3, 0.4]; 3], &[0.1, 0.2, 0.3], &[1, 2, 3]);
        let m = similarity_matrix(&same, 1).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((m.get(i, j) - 1.0).abs() < 1e-12);
            }
        }
        let orth = catalog_from(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[0.1, 0.2], &[5, 5]);
        let m = similarity_matrix(&orth, 1).unwrap();
        assert_eq!(m.row(0), &[1.0, 0.0]);
        assert_eq!(m.row(1), &[0.0, 1.0]);
        assert_eq!(m.model_order, vec![1, 2]);
        assert_eq!(average_pairwise_similarity(&m).unwrap(), 0.0);
    }

    #[test]
    fn matrix_rows_follow_downloads() {
        let c = catalog_from(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]], &[0.0; 3], &[1, 100, 100]);
        let m = similarity_matrix(&c, 1).unwrap();
        assert_eq!(m.model_order, vec![2, 3, 1]);
    }

    #[test]
    fn aps_and_distinctiveness_examples() {
        let ones = SimilarityMatrix::from_values(1, (1..=5).collect(), vec![1.0; 25]).unwrap();
        assert_eq!(average_pairwise_similarity(&ones).unwrap(), 1.0);
        assert_eq!(distinctiveness(&ones, 2).unwrap(), 0.0);

        let eye = SimilarityMatrix::from_values(1, vec![1, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(distinctiveness(&eye, 0).unwrap(), 1.0);

        let m = SimilarityMatrix::from_values(
            1,
            vec![1, 2, 3],
            vec![1.0, 0.5, 0.3, 0.5, 1.0, 0.2, 0.3, 0.2, 1.0],
        )
        .unwrap();
        assert!((distinctiveness(&m, 0).unwrap() - 0.6).abs() < 1e-12);

        let single = SimilarityMatrix::from_values(1, vec![1], vec![1.0]).unwrap();
        assert!(matches!(average_pairwise_similarity(&single), Err(Error::TooFewModels { .. })));
        assert!(matches!(distinctiveness(&single, 0), Err(Error::TooFewModels { .. })));
    }

    #[test]
    fn minmax_examples() {
        assert_eq!(minmax_normalize(&[2.0, 4.0, 6.0]).unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(minmax_normalize(&[7.0, 7.0, 7.0]).unwrap(), vec![0.5; 3]);
        assert_eq!(minmax_normalize(&[-1.0, 0.0, 3.0]).unwrap(), vec![0.0, 0.25, 1.0]);
        assert!(matches!(minmax_normalize(&[1.0, f64::NAN]), Err(Error::NonFiniteInput)));
    }

    #[test]
    fn popularity_examples() {
        let mut m = ModelRecord {
            model_id: 1,
            name: String::new(),
            version_id: 0,
            download_count: 0,
            tags: vec![],
            trained_words: vec![],
        };
        assert_eq!(popularity_raw(&m), 0.0);
        m.download_count = 102_076;
        assert!((popularity_raw(&m) - 11.533_482_709).abs() < 1e-6);
    }

    #[test]
    fn gre_examples() {
        let w = GreWeights::default();
        assert!((gre_score(&mv(1.0, 1.0, 1.0), &w) - 2.0).abs() < 1e-12);
        assert_eq!(gre_score(&mv(0.0, 0.0, 0.0), &w), 0.0);
        assert!((gre_score(&mv(0.5, 0.25, 1.0), &w) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn weights_parse_and_validate() {
        let w: GreWeights = "1,0,0".parse().unwrap();
        assert_eq!(w, GreWeights::new(1.0, 0.0, 0.0).unwrap());
        assert_eq!("1.0,0.8,0.2".parse::<GreWeights>().unwrap(), GreWeights::default());
        assert!("1,2".parse::<GreWeights>().is_err());
        assert!("0,0,0".parse::<GreWeights>().is_err());
        assert!("-1,1,1".parse::<GreWeights>().is_err());
    }

    #[test]
    fn metric_vector_rules() {
        let c = catalog_from(&[vec![1.0, 0.0], vec![1.0, 0.0]], &[0.2, 0.4], &[10, 10]);
        let mvs = metric_vectors(&c, 1).unwrap();
        assert_eq!(mvs[0].q_accuracy, 0.0);
        assert_eq!(mvs[1].q_accuracy, 1.0);
        assert!(mvs.iter().all(|m| m.q_distinctiveness == 0.5 && m.q_popularity == 0.5));

        let one = catalog_from(&[vec![1.0, 0.0]], &[0.2], &[10]);
        assert!(matches!(metric_vectors(&one, 1), Err(Error::TooFewModels { .. })));

        let flat = catalog_from(&vec![vec![0.6, 0.8]; 4], &[0.3; 4], &[7; 4]);
        for m in metric_vectors(&flat, 1).unwrap() {
            assert_eq!((m.q_accuracy, m.q_distinctiveness, m.q_popularity), (0.5, 0.5, 0.5));
        }
    }
}
