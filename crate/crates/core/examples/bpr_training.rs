//! Train the BPR matrix-factorization ranker on a synthetic transitive world
//! and report held-out pairwise accuracy.
//!
//! ```text
//! cargo run --release --example bpr_training -- [seed]
//! ```

use std::time::Instant;

use gemrec::ltr::{bpr_rank, bpr_train, evaluate_pairwise_accuracy, BprParams};
use gemrec::simuser::PreferenceWorld;

fn main() -> gemrec::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let world = PreferenceWorld::standard(seed);
    let (train, heldout) = world.generate()?;
    println!(
        "world: {} users x {} items, {} train / {} held-out triples",
        world.users,
        world.items,
        train.len(),
        heldout.len()
    );

    let params = BprParams { seed, ..BprParams::default() };
    let start = Instant::now();
    let out = bpr_train(&train, &params)?;
    let elapsed = start.elapsed();

    let trace = &out.loss_trace;
    for epoch in [0, trace.len() / 4, trace.len() / 2, trace.len() - 1] {
        println!("epoch {:>3}  loss {:.4}", epoch + 1, trace[epoch]);
    }
    println!(
        "train accuracy {:.3}, held-out accuracy {:.3} ({elapsed:.2?})",
        evaluate_pairwise_accuracy(&out.model, &train)?,
        evaluate_pairwise_accuracy(&out.model, &heldout)?
    );

    let user = &out.model.user_ids()[0];
    let top: Vec<_> = bpr_rank(&out.model, user, out.model.item_ids())?
        .into_iter()
        .take(5)
        .map(|(id, _)| id)
        .collect();
    println!("top-5 for {user}: {top:?}");
    Ok(())
}
