//! Load and validate a catalog directory, then look around in it.
//!
//! ```text
//! cargo run --example ingest_catalog -- [catalog-dir]
//! ```

use std::path::PathBuf;

use gemrec::catalog::{load_catalog, summary_line, LoadOptions};

fn main() -> gemrec::Result<()> {
    let root = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/mini")));
    let catalog = load_catalog(&root, LoadOptions::default())?;
    println!("{}", summary_line(&catalog));

    let prompt = &catalog.prompts()[0];
    println!("prompt {} [{}]: {:?}", prompt.prompt_id, prompt.tag, prompt.text);
    for img in catalog.images_for_prompt(prompt.prompt_id)?.iter().take(3) {
        let model = catalog.model(img.model_id)?;
        let emb = catalog.image_embedding(img);
        println!(
            "  {} v{} downloads={} clip={:.3} nsfw={:.2} emb[..3]={:?}",
            model.name,
            model.version_id,
            model.download_count,
            img.clip_score_raw,
            img.nsfw_score,
            &emb[..3.min(emb.len())]
        );
    }

    // the on-disk format round-trips bit for bit
    let copy = std::env::temp_dir().join("gemrec-ingest-copy");
    catalog.write_to_dir(&copy)?;
    let reloaded = load_catalog(&copy, LoadOptions::default())?;
    assert_eq!(reloaded.image_embeddings(), catalog.image_embeddings());
    println!("round trip through {} ok", copy.display());
    Ok(())
}
