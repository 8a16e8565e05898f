//! Pairwise cosine similarity of one prompt's images, average pairwise
//! similarity, and each model's distinctiveness.
//!
//! ```text
//! cargo run --example similarity_heatmap -- [catalog-dir] [prompt-id]
//! ```

use std::path::PathBuf;

use gemrec::catalog::{load_catalog, LoadOptions};
use gemrec::metrics::{average_pairwise_similarity, distinctiveness, similarity_matrix};

fn shade(v: f64) -> char {
    const RAMP: [char; 5] = [' ', '.', ':', '*', '#'];
    RAMP[((v.clamp(0.0, 1.0)) * 4.0).round() as usize]
}

fn main() -> gemrec::Result<()> {
    let mut args = std::env::args().skip(1);
    let root = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/mini")));
    let prompt = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    let catalog = load_catalog(&root, LoadOptions::default())?;

    let m = similarity_matrix(&catalog, prompt)?;
    println!("prompt {prompt}, {} models, APS = {:.4}", m.n(), average_pairwise_similarity(&m)?);
    for (i, id) in m.model_order.iter().enumerate() {
        let row: String = m.row(i).iter().map(|&v| shade(v)).collect();
        println!("{id:>4} |{row}| distinctiveness {:.4}", distinctiveness(&m, i)?);
    }
    Ok(())
}
