//! Exact t-SNE: embed three separated Gaussian clusters, score the layout's
//! trustworthiness, then lay out one prompt's gallery from a catalog.
//!
//! ```text
//! cargo run --release --example tsne_layout -- [catalog-dir] [prompt-id]
//! ```

use std::path::PathBuf;
use std::time::Instant;

use gemrec::catalog::{load_catalog, EmbeddingMatrix, LoadOptions};
use gemrec::layout::{compute_layout, trustworthiness, tsne_fit, LayoutParams};
use gemrec::GreWeights;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn clusters(per_cluster: usize, dim: usize, spread: f32, seed: u64) -> EmbeddingMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let center = Normal::new(0.0, spread).unwrap();
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut rows = Vec::new();
    for _ in 0..3 {
        let c: Vec<f32> = (0..dim).map(|_| center.sample(&mut rng)).collect();
        for _ in 0..per_cluster {
            rows.push(c.iter().map(|x| x + noise.sample(&mut rng)).collect::<Vec<f32>>());
        }
    }
    EmbeddingMatrix::from_rows(&rows).unwrap()
}

fn main() -> gemrec::Result<()> {
    let data = clusters(50, 64, 4.0, 0);
    let params = LayoutParams::default();
    let start = Instant::now();
    let fit = tsne_fit(&data, &params)?;
    println!(
        "clusters: n={} KL {:.4} -> {:.4}, trustworthiness(k=10) {:.4} ({:.2?})",
        data.rows(),
        fit.kl_initial,
        fit.kl_final,
        trustworthiness(&data, &fit.coordinates, 10)?,
        start.elapsed()
    );

    let mut args = std::env::args().skip(1);
    let root = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/mini")));
    let prompt = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    let catalog = load_catalog(&root, LoadOptions::default())?;
    let n = catalog.images_for_prompt(prompt)?.len();
    let params = LayoutParams::default().fitted_to(n);
    let layout = compute_layout(&catalog, prompt, &params, &GreWeights::default())?;
    println!(
        "prompt {prompt}: {n} points, perplexity {}, KL {:.4}, drawn bottom to top: {:?}",
        params.perplexity, layout.kl_final, layout.z_order
    );
    for p in layout.points.iter().take(4) {
        println!("  model {:>3} at ({:>8.3}, {:>8.3})", p.model_id, p.x, p.y);
    }
    Ok(())
}
