//! Stage one: NSFW filtering, GRE-Score pre-ranking, gallery payloads and the
//! coarse selection feedback users give while browsing.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::PathBuf;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, ImageRecord, ModelId, ModelRecord, PromptId};
use crate::error::{Error, Result};
use crate::jsonl::AppendLog;
use crate::layout::{self, LayoutCache, LayoutParams, LayoutPoint};
use crate::metrics::{self, GreWeights, MetricVector};

pub const DEFAULT_NSFW_THRESHOLD: f64 = 0.5;

/// Keep records with `nsfw_score <= threshold`, preserving order.
pub fn nsfw_filter<'a>(images: &[&'a ImageRecord], threshold: f64) -> Vec<&'a ImageRecord> {
    images
        .iter()
        .copied()
        .filter(|img| img.nsfw_score <= threshold)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreRankEntry {
    pub model_id: ModelId,
    pub gre_score: f64,
    pub metric_vector: MetricVector,
    pub rank: usize,
}

/// GRE-Score ranking of the models whose image for `prompt_id` passes the NSFW
/// filter. All three components are normalized over the survivors.
pub fn pre_rank(
    catalog: &Catalog,
    prompt_id: PromptId,
    weights: &GreWeights,
    nsfw_threshold: f64,
) -> Result<Vec<PreRankEntry>> {
    let images = catalog.images_for_prompt(prompt_id)?;
    let survivors = nsfw_filter(&images, nsfw_threshold);
    let corpus = survivors
        .iter()
        .map(|img| catalog.model(img.model_id))
        .collect::<Result<Vec<&ModelRecord>>>()?;
    let vectors = metrics::metric_vectors_over(catalog, prompt_id, &survivors, &corpus)?;
    Ok(rank_vectors(vectors, weights))
}

/// Sort metric vectors by GRE-Score descending, ties by model_id ascending.
pub fn rank_vectors(vectors: Vec<MetricVector>, weights: &GreWeights) -> Vec<PreRankEntry> {
    let mut scored: Vec<(f64, MetricVector)> = vectors
        .into_iter()
        .map(|mv| (metrics::gre_score(&mv, weights), mv))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.model_id.cmp(&b.1.model_id)));
    scored
        .into_iter()
        .enumerate()
        .map(|(i, (gre_score, metric_vector))| PreRankEntry {
            model_id: metric_vector.model_id,
            gre_score,
            metric_vector,
            rank: i + 1,
        })
        .collect()
}

/// Prompt-independent prior: each model's mean GRE-Score over the prompts
/// where it survives the filter, sorted descending (ties by model_id).
pub fn global_pre_rank(
    catalog: &Catalog,
    weights: &GreWeights,
    nsfw_threshold: f64,
) -> Result<Vec<(ModelId, f64)>> {
    let mut acc: BTreeMap<ModelId, (f64, usize)> = BTreeMap::new();
    for p in catalog.prompts() {
        let entries = match pre_rank(catalog, p.prompt_id, weights, nsfw_threshold) {
            Ok(e) => e,
            Err(Error::TooFewModels { .. }) => continue,
            Err(e) => return Err(e),
        };
        for e in entries {
            let slot = acc.entry(e.model_id).or_default();
            slot.0 += e.gre_score;
            slot.1 += 1;
        }
    }
    let mut out: Vec<(ModelId, f64)> = acc
        .into_iter()
        .map(|(m, (sum, count))| (m, sum / count as f64))
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GalleryEntry {
    pub model_id: ModelId,
    pub rank: usize,
    pub gre_score: f64,
    pub metric_vector: MetricVector,
    pub name: String,
    pub version_id: u64,
    pub uri: String,
}

/// Everything the gallery view needs for one prompt. `entries` and `points`
/// share the same (rank) order; `z_order` is back-to-front.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GalleryPayload {
    pub prompt_id: PromptId,
    pub prompt_text: String,
    pub tag: String,
    pub weights: GreWeights,
    pub nsfw_threshold: f64,
    pub entries: Vec<GalleryEntry>,
    pub points: Vec<LayoutPoint>,
    pub z_order: Vec<ModelId>,
}

impl GalleryPayload {
    pub fn model_ids(&self) -> impl Iterator<Item = ModelId> + '_ {
        self.entries.iter().map(|e| e.model_id)
    }
}

pub fn gallery_payload(
    catalog: &Catalog,
    layouts: &LayoutCache,
    layout_params: &LayoutParams,
    prompt_id: PromptId,
    weights: &GreWeights,
    nsfw_threshold: f64,
) -> Result<GalleryPayload> {
    let prompt = catalog.prompt(prompt_id)?;
    let layout = layouts
        .get(prompt_id, layout_params)
        .ok_or(Error::LayoutMissing(prompt_id))?;
    let ranked = pre_rank(catalog, prompt_id, weights, nsfw_threshold)?;
    let coords: HashMap<ModelId, &LayoutPoint> =
        layout.points.iter().map(|p| (p.model_id, p)).collect();

    let mut entries = Vec::with_capacity(ranked.len());
    let mut points = Vec::with_capacity(ranked.len());
    for e in &ranked {
        let model = catalog.model(e.model_id)?;
        let image = catalog.image_for(e.model_id, prompt_id)?;
        let point = coords.get(&e.model_id).ok_or(Error::LayoutMissing(prompt_id))?;
        points.push(**point);
        entries.push(GalleryEntry {
            model_id: e.model_id,
            rank: e.rank,
            gre_score: e.gre_score,
            metric_vector: e.metric_vector,
            name: model.name.clone(),
            version_id: model.version_id,
            uri: image.uri.clone(),
        });
    }
    let scored: Vec<(ModelId, f64)> = ranked.iter().map(|e| (e.model_id, e.gre_score)).collect();
    Ok(GalleryPayload {
        prompt_id,
        prompt_text: prompt.text.clone(),
        tag: prompt.tag.clone(),
        weights: *weights,
        nsfw_threshold,
        entries,
        points,
        z_order: layout::z_order(&scored),
    })
}

fn default_true() -> bool {
    true
}

/// A gallery click. `selected = false` records an explicit unselect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub session_id: String,
    pub prompt_id: PromptId,
    pub model_id: ModelId,
    pub timestamp: u64,
    #[serde(default = "default_true")]
    pub selected: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SelectionAck {
    /// False when the selection repeated the current state and nothing was logged.
    pub appended: bool,
    pub log_len: usize,
}

#[derive(Debug, Default)]
struct SelectionState {
    visible: HashMap<String, HashMap<PromptId, HashSet<ModelId>>>,
    current: HashMap<(String, PromptId, ModelId), bool>,
    log: Vec<Selection>,
}

/// Selection log. Sessions become known when a gallery is opened for them.
#[derive(Debug)]
pub struct SelectionStore {
    log: Option<AppendLog>,
    state: Mutex<SelectionState>,
}

impl SelectionStore {
    pub fn in_memory() -> Self {
        Self {
            log: None,
            state: Mutex::default(),
        }
    }

    /// Open (or create) a persistent store and replay its log.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let log = AppendLog::open(path)?;
        let mut state = SelectionState::default();
        for s in log.read_all::<Selection>()? {
            let visible = state
                .visible
                .entry(s.session_id.clone())
                .or_default()
                .entry(s.prompt_id)
                .or_default();
            visible.insert(s.model_id);
            state
                .current
                .insert((s.session_id.clone(), s.prompt_id, s.model_id), s.selected);
            state.log.push(s);
        }
        Ok(Self {
            log: Some(log),
            state: Mutex::new(state),
        })
    }

    /// Mark `visible` as the models shown to `session_id` for `prompt_id`.
    pub fn register_gallery(
        &self,
        session_id: &str,
        prompt_id: PromptId,
        visible: impl IntoIterator<Item = ModelId>,
    ) {
        let mut st = self.state.lock().expect("selection mutex poisoned");
        st.visible
            .entry(session_id.to_string())
            .or_default()
            .insert(prompt_id, visible.into_iter().collect());
    }

    pub fn record_selection(&self, selection: Selection) -> Result<SelectionAck> {
        let mut st = self.state.lock().expect("selection mutex poisoned");
        let prompts = st
            .visible
            .get(&selection.session_id)
            .ok_or_else(|| Error::UnknownSession(selection.session_id.clone()))?;
        let visible = prompts
            .get(&selection.prompt_id)
            .is_some_and(|v| v.contains(&selection.model_id));
        if !visible {
            return Err(Error::ModelNotVisible(selection.model_id));
        }
        let key = (
            selection.session_id.clone(),
            selection.prompt_id,
            selection.model_id,
        );
        let previous = st.current.get(&key).copied().unwrap_or(false);
        if previous == selection.selected {
            return Ok(SelectionAck {
                appended: false,
                log_len: st.log.len(),
            });
        }
        if let Some(log) = &self.log {
            log.append(&selection)?;
        }
        st.current.insert(key, selection.selected);
        st.log.push(selection);
        Ok(SelectionAck {
            appended: true,
            log_len: st.log.len(),
        })
    }

    /// Currently selected models, in order of their latest selection.
    pub fn selected_models(&self, session_id: &str, prompt_id: PromptId) -> Vec<ModelId> {
        let st = self.state.lock().expect("selection mutex poisoned");
        let mut out: Vec<ModelId> = Vec::new();
        for s in st
            .log
            .iter()
            .filter(|s| s.session_id == session_id && s.prompt_id == prompt_id)
        {
            out.retain(|&m| m != s.model_id);
            if s.selected {
                out.push(s.model_id);
            }
        }
        out
    }

    pub fn log(&self) -> Vec<Selection> {
        self.state.lock().expect("selection mutex poisoned").log.clone()
    }

    pub fn len(&self) -> usize {
        self.state.lock().expect("selection mutex poisoned").log.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
