//! Stage two in drag-and-sort mode: the pool is split into batches of four and
//! each submitted ordering yields every pairwise preference it implies.
//!
//! ```text
//! cargo run --example dragsort_session -- [catalog-dir] [prompt-id]
//! ```

use std::path::PathBuf;

use gemrec::catalog::{load_catalog, LoadOptions};
use gemrec::elicitation::{create_session_with_mode, session_summary, Mode, SessionState};
use gemrec::retrieval::{pre_rank, DEFAULT_NSFW_THRESHOLD};
use gemrec::simuser::SimUser;
use gemrec::GreWeights;

fn main() -> gemrec::Result<()> {
    let mut args = std::env::args().skip(1);
    let root = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/mini")));
    let prompt = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    let catalog = load_catalog(&root, LoadOptions::default())?;

    let ranked = pre_rank(&catalog, prompt, &GreWeights::default(), DEFAULT_NSFW_THRESHOLD)?;
    let mut session = create_session_with_mode("sort-demo", "bob", prompt, &[], &ranked, 8, Mode::Dragsort)?;
    let SessionState::Dragsort(state) = session.state.clone() else { unreachable!() };

    // a noisy user: Plackett-Luce orderings with finite beta
    let mut user = SimUser::random(catalog.dim(), 4.0, 11)?;
    for (i, batch) in state.batches.iter().enumerate() {
        let items = batch
            .iter()
            .map(|&m| Ok((m, catalog.image_embedding(catalog.image_for(m, prompt)?))))
            .collect::<gemrec::Result<Vec<_>>>()?;
        let order = user.order(&items)?;
        let ack = session.dragsort_submit(i, &order, 0)?;
        println!("batch {i}: shown {batch:?}, sorted {order:?}, +{} preferences", ack.preferences_added);
    }

    let summary = session_summary(&session)?;
    println!("{} preferences over {} batches", summary.preferences_total, summary.rounds_total);
    println!("final ranking {:?}", summary.final_ranking);
    Ok(())
}
