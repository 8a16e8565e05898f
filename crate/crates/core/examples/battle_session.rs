//! Stage two in battle mode: a simulated user with a fixed taste picks winners
//! pair by pair until one champion remains, then the session is summarized.
//!
//! ```text
//! cargo run --example battle_session -- [catalog-dir] [prompt-id]
//! ```

use std::path::PathBuf;

use gemrec::catalog::{load_catalog, LoadOptions};
use gemrec::elicitation::{create_session_with_mode, session_summary, BattleOutcome, Mode, SessionState};
use gemrec::retrieval::{pre_rank, DEFAULT_NSFW_THRESHOLD};
use gemrec::simuser::{oracle_ranking, Choice, SimUser};
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
    let selected = [ranked[3].model_id, ranked[6].model_id];
    let mut session = create_session_with_mode("battle-demo", "alice", prompt, &selected, &ranked, 8, Mode::Battle)?;
    println!("pool {:?} (selected {selected:?})", session.pool);

    let mut user = SimUser::random(catalog.dim(), f64::INFINITY, 3)?;
    let emb = |m| catalog.image_for(m, prompt).map(|img| catalog.image_embedding(img));
    let SessionState::Battle(state) = &session.state else { unreachable!() };
    let mut pair = state.current_pair;
    while let Some([a, b]) = pair {
        let chosen = match user.choose(emb(a)?, emb(b)?)? {
            Choice::A => a,
            Choice::B => b,
        };
        println!("  {a:>3} vs {b:>3} -> {chosen}");
        pair = match session.battle_choose(chosen, 0)? {
            BattleOutcome::Next { pair, .. } => Some(pair),
            BattleOutcome::Finished { champion } => {
                println!("champion {champion}");
                None
            }
        };
    }
    println!("user's true favourite {}", oracle_ranking(&user, &session.pool, &catalog, prompt)?[0]);

    let summary = session_summary(&session)?;
    println!("{} choices, final ranking:", summary.rounds_total);
    for s in &summary.models {
        println!("  {:>3}  wins {}  losses {}  elo {:.1}", s.model_id, s.wins, s.losses, s.elo);
    }
    Ok(())
}
