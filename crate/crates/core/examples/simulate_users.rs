//! The whole loop offline: simulated users run gallery selection and ranking
//! sessions, their preferences train a BPR ranker, and the ranker personalizes.
//!
//! ```text
//! cargo run --release --example simulate_users -- [catalog-dir] [prompt-id] [users]
//! ```

use std::path::PathBuf;

use gemrec::catalog::{load_catalog, LoadOptions};
use gemrec::ltr::{bpr_rank, bpr_train, evaluate_pairwise_accuracy, BprParams, PreferenceDataset, Split};
use gemrec::simuser::{simulate, ModeChoice, SimulationConfig};

fn main() -> gemrec::Result<()> {
    let mut args = std::env::args().skip(1);
    let root = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/mini")));
    let prompt = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    let users = args.next().and_then(|s| s.parse().ok()).unwrap_or(40);
    let catalog = load_catalog(&root, LoadOptions::default())?;

    let cfg = SimulationConfig {
        mode: ModeChoice::Both,
        beta: 20.0,
        seed: 5,
        ..SimulationConfig::new(prompt, users)
    };
    let out = simulate(&catalog, &cfg)?;
    println!("{} sessions, {} preferences", out.sessions.len(), out.preferences.len());

    let data = PreferenceDataset::from_preferences(&out.preferences, Split::Train)?;
    let trained = bpr_train(&data, &BprParams::default())?;
    println!(
        "BPR: loss {:.3} -> {:.3}, training accuracy {:.3}",
        trained.loss_trace[0],
        trained.loss_trace.last().unwrap(),
        evaluate_pairwise_accuracy(&trained.model, &data)?
    );

    for session in out.sessions.iter().take(3) {
        let ranking: Vec<_> = bpr_rank(&trained.model, &session.user_id, &session.pool)?
            .into_iter()
            .map(|(m, _)| m)
            .collect();
        println!("  {} ({}): {ranking:?}", session.user_id, session.mode);
    }
    Ok(())
}
