//! Synthetic catalogs with realistic structure.
//!
//! Image embeddings mix the prompt direction, a shared style-cluster direction
//! and a per-model direction, so prompts produce visible clusters in the gallery
//! and distinctiveness differs between models. `clip_score_raw` is the actual
//! cosine between the stored image and prompt embeddings.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::catalog::{
    Catalog, EmbeddingMatrix, ImageRecord, LoadOptions, ModelRecord, PromptRecord, PromptSource,
};
use crate::error::Result;

const PARTI_TAGS: [&str; 12] = [
    "abstract",
    "animals",
    "artifacts",
    "arts",
    "food",
    "illustrations",
    "indoor",
    "outdoor",
    "people",
    "produce",
    "vehicles",
    "world knowledge",
];
const STYLE_TAGS: [&str; 6] = ["photorealistic", "anime", "3d", "oil painting", "sketch", "scenery"];

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub models: usize,
    pub prompts: usize,
    pub dim: usize,
    pub seed: u64,
    pub style_clusters: usize,
    /// Probability that an image gets a high NSFW score.
    pub nsfw_fraction: f64,
}

impl SyntheticConfig {
    pub fn new(models: usize, prompts: usize, dim: usize, seed: u64) -> Self {
        Self {
            models,
            prompts,
            dim,
            seed,
            style_clusters: 4,
            nsfw_fraction: 0.05,
        }
    }

    /// 200 models × 90 prompts with 768-dimensional embeddings.
    pub fn paper_scale(seed: u64) -> Self {
        Self::new(200, 90, 768, seed)
    }
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn source_for(index: usize, total: usize) -> PromptSource {
    // 60 / 10 / 10 / 10 split, scaled to `total`
    let frac = index as f64 / total as f64;
    if frac < 6.0 / 9.0 {
        PromptSource::Parti
    } else if frac < 7.0 / 9.0 {
        PromptSource::Civitai
    } else if frac < 8.0 / 9.0 {
        PromptSource::Original
    } else {
        PromptSource::OriginalExtended
    }
}

pub fn generate(cfg: &SyntheticConfig) -> Result<Catalog> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dim = cfg.dim;
    let clusters = cfg.style_clusters.max(1);

    let style_dirs: Vec<Vec<f64>> = (0..clusters).map(|_| unit_vector(&mut rng, dim)).collect();

    let mut models = Vec::with_capacity(cfg.models);
    let mut model_state = Vec::with_capacity(cfg.models);
    for i in 0..cfg.models {
        let model_id = i as u32 + 1;
        let cluster = rng.random_range(0..clusters);
        let downloads = rng.random_range(0.0f64..11.6).exp().floor() as u64;
        let style = STYLE_TAGS[cluster % STYLE_TAGS.len()];
        let trained_words = if rng.random_bool(0.3) {
            vec![format!("{style} style")]
        } else {
            Vec::new()
        };
        models.push(ModelRecord {
            model_id,
            name: format!("model-{model_id:03}"),
            version_id: 10_000 + u64::from(model_id) * 7,
            download_count: downloads,
            tags: vec![style.to_string(), STYLE_TAGS[rng.random_range(0..STYLE_TAGS.len())].to_string()],
            trained_words,
        });
        let adherence = rng.random_range(0.3..1.0);
        model_state.push((cluster, unit_vector(&mut rng, dim), adherence));
    }

    let mut prompts = Vec::with_capacity(cfg.prompts);
    let mut prompt_rows = Vec::with_capacity(cfg.prompts);
    for j in 0..cfg.prompts {
        let prompt_id = j as u32 + 1;
        let source = source_for(j, cfg.prompts);
        let tag = match source {
            PromptSource::Parti => PARTI_TAGS[j % PARTI_TAGS.len()],
            PromptSource::Civitai => "scenery",
            _ => "vehicle",
        };
        prompts.push(PromptRecord {
            prompt_id,
            text: format!("synthetic prompt {prompt_id} about {tag}"),
            negative_text: "blurry, lowres, low quality".into(),
            tag: tag.into(),
            source,
        });
        prompt_rows.push(unit_vector(&mut rng, dim));
    }

    let mut images = Vec::with_capacity(cfg.models * cfg.prompts);
    let mut image_data = Vec::with_capacity(cfg.models * cfg.prompts * dim);
    let noise_scale = 0.25 / (dim as f64).sqrt();
    for (j, prompt) in prompts.iter().enumerate() {
        let text = &prompt_rows[j];
        for (i, model) in models.iter().enumerate() {
            let (cluster, own, adherence) = &model_state[i];
            let style = &style_dirs[*cluster];
            let mut v: Vec<f64> = (0..dim)
                .map(|d| {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    adherence * text[d] + 0.6 * style[d] + 0.3 * own[d] + noise_scale * noise
                })
                .collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
            let stored: Vec<f32> = v.iter().map(|&x| x as f32).collect();
            let clip = cosine_f32(&stored, text);
            let nsfw_score = if rng.random_bool(cfg.nsfw_fraction) {
                rng.random_range(0.6..=1.0)
            } else {
                rng.random_range(0.0..0.3)
            };
            let row = images.len();
            images.push(ImageRecord {
                image_id: row as u64 + 1,
                model_id: model.model_id,
                prompt_id: prompt.prompt_id,
                embedding_row: row,
                nsfw_score,
                clip_score_raw: clip,
                uri: format!("images/{}/{}.png", model.model_id, prompt.prompt_id),
            });
            image_data.extend(stored);
        }
    }

    let prompt_data: Vec<f32> = prompt_rows.iter().flatten().map(|&x| x as f32).collect();
    let image_embeddings = EmbeddingMatrix::new(images.len(), dim, image_data)?;
    let prompt_embeddings = EmbeddingMatrix::new(prompts.len(), dim, prompt_data)?;
    Catalog::new(
        models,
        prompts,
        images,
        image_embeddings,
        prompt_embeddings,
        LoadOptions::default(),
    )
}

fn cosine_f32(a: &[f32], text: &[f64]) -> f64 {
    let t: Vec<f64> = text.iter().map(|&x| f64::from(x as f32)).collect();
    let dot: f64 = a.iter().zip(&t).map(|(&x, y)| f64::from(x) * y).sum();
    let na = a.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
    let nb = t.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_fixture_is_dense_and_deterministic() {
        let cfg = SyntheticConfig::new(6, 9, 8, 3);
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.images().len(), 54);
        let sources: Vec<_> = a.prompts().iter().map(|p| p.source).collect();
        assert_eq!(sources.iter().filter(|s| **s == PromptSource::Parti).count(), 6);
        assert_eq!(*sources.last().unwrap(), PromptSource::OriginalExtended);
    }
}
