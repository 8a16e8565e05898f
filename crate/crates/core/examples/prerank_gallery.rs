//! Stage one: NSFW-filter a prompt's images, pre-rank the models by GRE-Score,
//! build the gallery payload and record a couple of selections.
//!
//! ```text
//! cargo run --example prerank_gallery -- [catalog-dir] [prompt-id]
//! ```

use std::path::PathBuf;

use gemrec::catalog::{load_catalog, LoadOptions};
use gemrec::layout::{compute_layout, LayoutCache, LayoutParams};
use gemrec::retrieval::{gallery_payload, pre_rank, Selection, SelectionStore, DEFAULT_NSFW_THRESHOLD};
use gemrec::GreWeights;

fn main() -> gemrec::Result<()> {
    let mut args = std::env::args().skip(1);
    let root = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/mini")));
    let prompt = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    let catalog = load_catalog(&root, LoadOptions::default())?;

    for weights in [GreWeights::default(), "1,0,0".parse()?] {
        let ranked = pre_rank(&catalog, prompt, &weights, DEFAULT_NSFW_THRESHOLD)?;
        let top: Vec<_> = ranked.iter().take(5).map(|e| (e.model_id, (e.gre_score * 1e3).round() / 1e3)).collect();
        println!("lambda={weights}: {} survivors, top {top:?}", ranked.len());
    }

    let n = catalog.images_for_prompt(prompt)?.len();
    let params = LayoutParams::default().fitted_to(n);
    let cache = LayoutCache::new();
    cache.insert(&params, compute_layout(&catalog, prompt, &params, &GreWeights::default())?);
    let gallery = gallery_payload(&catalog, &cache, &params, prompt, &GreWeights::default(), DEFAULT_NSFW_THRESHOLD)?;
    println!("gallery for {:?}: {} entries", gallery.prompt_text, gallery.entries.len());
    for (entry, point) in gallery.entries.iter().zip(&gallery.points).take(3) {
        println!("  #{} {} at ({:.1}, {:.1})", entry.rank, entry.name, point.x, point.y);
    }

    let store = SelectionStore::in_memory();
    store.register_gallery("demo", prompt, gallery.model_ids());
    for entry in gallery.entries.iter().take(2) {
        store.record_selection(Selection {
            session_id: "demo".into(),
            prompt_id: prompt,
            model_id: entry.model_id,
            timestamp: 0,
            selected: true,
        })?;
    }
    println!("selected: {:?}", store.selected_models("demo", prompt));
    Ok(())
}
