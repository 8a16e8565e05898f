//! Stage two: ranking sessions that turn user interactions into pairwise
//! preferences.
//!
//! A session runs in one of two modes, drawn at creation from a seeded RNG:
//!
//! * **battle**: two images at a time; the unchosen one is replaced by the next
//!   model from a queue ordered by GRE-Score ascending, until the queue is empty.
//! * **dragsort**: the pool, sorted by GRE-Score descending, is cut into batches
//!   of four; the user reorders each batch and every pair in the final order
//!   becomes a preference.
//!
//! Every state change is expressed as a [`SessionEvent`]. Mutating methods
//! queue their events in the session (see [`RankingSession::take_pending_events`])
//! and [`replay`] rebuilds identical sessions from a log of them.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{ModelId, PromptId};
use crate::error::{Error, Result};
use crate::retrieval::PreRankEntry;

pub const DEFAULT_MIN_POOL: usize = 8;
pub const BATCH_SIZE: usize = 4;
pub const ELO_INITIAL: f64 = 1000.0;
pub const ELO_K: f64 = 32.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Battle,
    Dragsort,
}

impl Mode {
    fn name(self) -> &'static str {
        match self {
            Mode::Battle => "battle",
            Mode::Dragsort => "dragsort",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Active,
    Finished,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BattleState {
    /// Remaining challengers, GRE-Score ascending.
    pub queue: Vec<ModelId>,
    /// `None` once the session has finished.
    pub current_pair: Option<[ModelId; 2]>,
    pub eliminated: Vec<ModelId>,
    pub champion: Option<ModelId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DragSortState {
    /// Initial batch orders, GRE-Score descending within each batch.
    pub batches: Vec<Vec<ModelId>>,
    pub submitted: Vec<Option<Vec<ModelId>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionState {
    Battle(BattleState),
    Dragsort(DragSortState),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwisePreference {
    pub session_id: String,
    pub user_id: String,
    pub prompt_id: PromptId,
    pub winner: ModelId,
    pub loser: ModelId,
    pub round: usize,
    pub timestamp: u64,
}

/// Persisted session history, one JSON object per line with a `type` tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SessionEvent {
    /// A stage-one selection carried into the session's pool.
    Selection {
        session_id: String,
        prompt_id: PromptId,
        model_id: ModelId,
    },
    Created {
        session_id: String,
        user_id: String,
        prompt_id: PromptId,
        mode: Mode,
        pool: Vec<ModelId>,
        state: SessionState,
    },
    BattleChoice {
        session_id: String,
        round: usize,
        chosen: ModelId,
        timestamp: u64,
    },
    DragsortSubmit {
        session_id: String,
        batch_index: usize,
        final_order: Vec<ModelId>,
        timestamp: u64,
    },
    Finished {
        session_id: String,
    },
}

impl SessionEvent {
    pub fn session_id(&self) -> &str {
        match self {
            SessionEvent::Selection { session_id, .. }
            | SessionEvent::Created { session_id, .. }
            | SessionEvent::BattleChoice { session_id, .. }
            | SessionEvent::DragsortSubmit { session_id, .. }
            | SessionEvent::Finished { session_id } => session_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankingSession {
    pub session_id: String,
    pub user_id: String,
    pub prompt_id: PromptId,
    pub mode: Mode,
    pub pool: Vec<ModelId>,
    /// Stage-one selections that seeded the pool.
    pub selected: Vec<ModelId>,
    pub state: SessionState,
    pub preferences: Vec<PairwisePreference>,
    pub status: Status,
    #[serde(skip)]
    pending: Vec<SessionEvent>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum BattleOutcome {
    Next { pair: [ModelId; 2], round: usize },
    Finished { champion: ModelId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DragSortAck {
    pub preferences_added: usize,
    pub finished: bool,
}

/// Selected models first (deduplicated, order kept), then the highest-ranked
/// unselected entries until `min_pool` is reached or `pre_rank` runs out.
pub fn complement_pool(selected: &[ModelId], pre_rank: &[PreRankEntry], min_pool: usize) -> Vec<ModelId> {
    let mut seen = HashSet::new();
    let mut pool: Vec<ModelId> = selected.iter().copied().filter(|m| seen.insert(*m)).collect();
    if pool.len() >= min_pool {
        return pool;
    }
    for e in pre_rank {
        if pool.len() >= min_pool {
            break;
        }
        if seen.insert(e.model_id) {
            pool.push(e.model_id);
        }
    }
    pool
}

/// Batch sizes for `n` items: fours, with a trailing 2 or 3. A remainder of one
/// is avoided by ending with 3 + 2.
pub fn batch_sizes(n: usize) -> Vec<usize> {
    let mut sizes = vec![BATCH_SIZE; n / BATCH_SIZE];
    match n % BATCH_SIZE {
        0 => {}
        1 if !sizes.is_empty() => {
            sizes.pop();
            sizes.extend([3, 2]);
        }
        r => sizes.push(r),
    }
    sizes
}

fn gre_lookup(pre_rank: &[PreRankEntry]) -> HashMap<ModelId, f64> {
    pre_rank.iter().map(|e| (e.model_id, e.gre_score)).collect()
}

fn initial_state(mode: Mode, pool: &[ModelId], gre: &HashMap<ModelId, f64>) -> SessionState {
    let mut ascending = pool.to_vec();
    ascending.sort_by(|a, b| gre[a].total_cmp(&gre[b]).then(a.cmp(b)));
    match mode {
        Mode::Battle => {
            let pair = [ascending[0], ascending[1]];
            SessionState::Battle(BattleState {
                queue: ascending[2..].to_vec(),
                current_pair: Some(pair),
                eliminated: Vec::new(),
                champion: None,
            })
        }
        Mode::Dragsort => {
            let mut descending = pool.to_vec();
            descending.sort_by(|a, b| gre[b].total_cmp(&gre[a]).then(a.cmp(b)));
            let mut batches = Vec::new();
            let mut rest = descending.as_slice();
            for size in batch_sizes(descending.len()) {
                let (head, tail) = rest.split_at(size);
                batches.push(head.to_vec());
                rest = tail;
            }
            let submitted = vec![None; batches.len()];
            SessionState::Dragsort(DragSortState { batches, submitted })
        }
    }
}

/// Mode drawn uniformly from `seed`.
pub fn draw_mode(seed: u64) -> Mode {
    if ChaCha8Rng::seed_from_u64(seed).random_bool(0.5) {
        Mode::Battle
    } else {
        Mode::Dragsort
    }
}

pub fn create_session(
    session_id: &str,
    user_id: &str,
    prompt_id: PromptId,
    selected: &[ModelId],
    pre_rank: &[PreRankEntry],
    min_pool: usize,
    seed: u64,
) -> Result<RankingSession> {
    create_session_with_mode(session_id, user_id, prompt_id, selected, pre_rank, min_pool, draw_mode(seed))
}

/// [`create_session`] with the mode fixed by the caller.
pub fn create_session_with_mode(
    session_id: &str,
    user_id: &str,
    prompt_id: PromptId,
    selected: &[ModelId],
    pre_rank: &[PreRankEntry],
    min_pool: usize,
    mode: Mode,
) -> Result<RankingSession> {
    if min_pool < 2 {
        return Err(Error::BadMinPool(min_pool));
    }
    let gre = gre_lookup(pre_rank);
    if let Some(&m) = selected.iter().find(|m| !gre.contains_key(m)) {
        return Err(Error::ModelNotVisible(m));
    }
    let pool = complement_pool(selected, pre_rank, min_pool);
    if pool.len() < 2 {
        return Err(Error::EmptySelectionAndCatalog);
    }
    let mut seen = HashSet::new();
    let selected: Vec<ModelId> = selected.iter().copied().filter(|m| seen.insert(*m)).collect();
    let state = initial_state(mode, &pool, &gre);

    let mut pending: Vec<SessionEvent> = selected
        .iter()
        .map(|&model_id| SessionEvent::Selection {
            session_id: session_id.to_string(),
            prompt_id,
            model_id,
        })
        .collect();
    pending.push(SessionEvent::Created {
        session_id: session_id.to_string(),
        user_id: user_id.to_string(),
        prompt_id,
        mode,
        pool: pool.clone(),
        state: state.clone(),
    });

    Ok(RankingSession {
        session_id: session_id.to_string(),
        user_id: user_id.to_string(),
        prompt_id,
        mode,
        pool,
        selected,
        state,
        preferences: Vec::new(),
        status: Status::Active,
        pending,
    })
}

impl RankingSession {
    /// Events produced since the last call, in order.
    pub fn take_pending_events(&mut self) -> Vec<SessionEvent> {
        std::mem::take(&mut self.pending)
    }

    pub fn is_finished(&self) -> bool {
        self.status == Status::Finished
    }

    /// Round number the next battle choice will carry.
    pub fn next_round(&self) -> usize {
        match &self.state {
            SessionState::Battle(_) => self.preferences.len() + 1,
            SessionState::Dragsort(d) => d.submitted.iter().filter(|s| s.is_some()).count() + 1,
        }
    }

    fn preference(&self, winner: ModelId, loser: ModelId, round: usize, timestamp: u64) -> PairwisePreference {
        PairwisePreference {
            session_id: self.session_id.clone(),
            user_id: self.user_id.clone(),
            prompt_id: self.prompt_id,
            winner,
            loser,
            round,
            timestamp,
        }
    }

    fn finish(&mut self) {
        self.status = Status::Finished;
        self.pending.push(SessionEvent::Finished {
            session_id: self.session_id.clone(),
        });
    }

    pub fn battle_choose(&mut self, chosen: ModelId, timestamp: u64) -> Result<BattleOutcome> {
        if self.is_finished() {
            return Err(Error::SessionFinished);
        }
        let round = self.next_round();
        let SessionState::Battle(state) = &mut self.state else {
            return Err(Error::WrongMode { expected: "battle" });
        };
        let pair = state.current_pair.expect("active battle has a pair");
        let loser = match pair {
            [a, b] if a == chosen => b,
            [a, b] if b == chosen => a,
            _ => return Err(Error::NotInPair(chosen)),
        };
        state.eliminated.push(loser);
        let outcome = if state.queue.is_empty() {
            state.current_pair = None;
            state.champion = Some(chosen);
            BattleOutcome::Finished { champion: chosen }
        } else {
            let next = [chosen, state.queue.remove(0)];
            state.current_pair = Some(next);
            BattleOutcome::Next {
                pair: next,
                round: round + 1,
            }
        };
        let pref = self.preference(chosen, loser, round, timestamp);
        self.preferences.push(pref);
        self.pending.push(SessionEvent::BattleChoice {
            session_id: self.session_id.clone(),
            round,
            chosen,
            timestamp,
        });
        if matches!(outcome, BattleOutcome::Finished { .. }) {
            self.finish();
        }
        Ok(outcome)
    }

    pub fn dragsort_submit(
        &mut self,
        batch_index: usize,
        final_order: &[ModelId],
        timestamp: u64,
    ) -> Result<DragSortAck> {
        if self.is_finished() {
            return Err(Error::SessionFinished);
        }
        let round = self.next_round();
        let SessionState::Dragsort(state) = &mut self.state else {
            return Err(Error::WrongMode { expected: "dragsort" });
        };
        let batch = state.batches.get(batch_index).ok_or_else(|| {
            Error::InvalidParam(format!(
                "batch_index {batch_index} out of range ({} batches)",
                state.batches.len()
            ))
        })?;
        if state.submitted[batch_index].is_some() {
            return Err(Error::AlreadySubmitted(batch_index));
        }
        let mut want = batch.clone();
        let mut got = final_order.to_vec();
        want.sort_unstable();
        got.sort_unstable();
        if want != got {
            return Err(Error::NotAPermutation);
        }
        state.submitted[batch_index] = Some(final_order.to_vec());
        let all_done = state.submitted.iter().all(Option::is_some);

        let mut added = 0;
        for (i, &winner) in final_order.iter().enumerate() {
            for &loser in &final_order[i + 1..] {
                let pref = self.preference(winner, loser, round, timestamp);
                self.preferences.push(pref);
                added += 1;
            }
        }
        self.pending.push(SessionEvent::DragsortSubmit {
            session_id: self.session_id.clone(),
            batch_index,
            final_order: final_order.to_vec(),
            timestamp,
        });
        if all_done {
            self.finish();
        }
        Ok(DragSortAck {
            preferences_added: added,
            finished: all_done,
        })
    }
}

/// Rebuild sessions from their event history.
pub fn replay(events: &[SessionEvent]) -> Result<BTreeMap<String, RankingSession>> {
    let mut sessions: BTreeMap<String, RankingSession> = BTreeMap::new();
    let mut carried: HashMap<String, Vec<ModelId>> = HashMap::new();
    let corrupt = |line: usize, message: String| Error::CorruptLog {
        line: line + 1,
        message,
    };

    for (i, event) in events.iter().enumerate() {
        let id = event.session_id();
        if let SessionEvent::Selection { model_id, .. } = event {
            carried.entry(id.to_string()).or_default().push(*model_id);
            continue;
        }
        if let SessionEvent::Created {
            session_id,
            user_id,
            prompt_id,
            mode,
            pool,
            state,
        } = event
        {
            if sessions.contains_key(session_id) {
                return Err(corrupt(i, format!("session {session_id} created twice")));
            }
            sessions.insert(
                session_id.clone(),
                RankingSession {
                    session_id: session_id.clone(),
                    user_id: user_id.clone(),
                    prompt_id: *prompt_id,
                    mode: *mode,
                    pool: pool.clone(),
                    selected: carried.remove(session_id).unwrap_or_default(),
                    state: state.clone(),
                    preferences: Vec::new(),
                    status: Status::Active,
                    pending: Vec::new(),
                },
            );
            continue;
        }
        let session = sessions
            .get_mut(id)
            .ok_or_else(|| corrupt(i, format!("event for unknown session {id}")))?;
        match event {
            SessionEvent::BattleChoice {
                round,
                chosen,
                timestamp,
                ..
            } => {
                if *round != session.next_round() {
                    return Err(corrupt(i, format!("round {round} out of sequence")));
                }
                session
                    .battle_choose(*chosen, *timestamp)
                    .map_err(|e| corrupt(i, e.to_string()))?;
            }
            SessionEvent::DragsortSubmit {
                batch_index,
                final_order,
                timestamp,
                ..
            } => {
                session
                    .dragsort_submit(*batch_index, final_order, *timestamp)
                    .map_err(|e| corrupt(i, e.to_string()))?;
            }
            SessionEvent::Finished { .. } => {
                if !session.is_finished() {
                    return Err(corrupt(i, format!("finished event for active session {id}")));
                }
            }
            SessionEvent::Selection { .. } | SessionEvent::Created { .. } => unreachable!(),
        }
        session.pending.clear();
    }
    Ok(sessions)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelStats {
    pub model_id: ModelId,
    pub wins: usize,
    pub losses: usize,
    pub elo: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub user_id: String,
    pub prompt_id: PromptId,
    pub mode: Mode,
    /// Battle choices, or submitted drag-sort batches.
    pub rounds_total: usize,
    pub preferences_total: usize,
    /// One row per pool model, in `final_ranking` order.
    pub models: Vec<ModelStats>,
    pub final_ranking: Vec<ModelId>,
}

/// Elo ratings after replaying `prefs` in order, for every model in `pool`.
pub fn elo_ratings(pool: &[ModelId], prefs: &[PairwisePreference]) -> HashMap<ModelId, f64> {
    let mut ratings: HashMap<ModelId, f64> = pool.iter().map(|&m| (m, ELO_INITIAL)).collect();
    for p in prefs {
        let rw = ratings.get(&p.winner).copied().unwrap_or(ELO_INITIAL);
        let rl = ratings.get(&p.loser).copied().unwrap_or(ELO_INITIAL);
        let expected = 1.0 / (1.0 + 10f64.powf((rl - rw) / 400.0));
        let delta = ELO_K * (1.0 - expected);
        ratings.insert(p.winner, rw + delta);
        ratings.insert(p.loser, rl - delta);
    }
    ratings
}

pub fn session_summary(session: &RankingSession) -> Result<SessionSummary> {
    if !session.is_finished() {
        return Err(Error::SessionActive);
    }
    let mut prefs = session.preferences.clone();
    prefs.sort_by_key(|p| p.round);
    let ratings = elo_ratings(&session.pool, &prefs);

    let mut rows: Vec<ModelStats> = session
        .pool
        .iter()
        .map(|&m| ModelStats {
            model_id: m,
            wins: prefs.iter().filter(|p| p.winner == m).count(),
            losses: prefs.iter().filter(|p| p.loser == m).count(),
            elo: ratings[&m],
        })
        .collect();
    rows.sort_by(|a, b| {
        b.elo
            .total_cmp(&a.elo)
            .then(b.wins.cmp(&a.wins))
            .then(a.model_id.cmp(&b.model_id))
    });
    let rounds_total = match &session.state {
        SessionState::Battle(_) => prefs.len(),
        SessionState::Dragsort(d) => d.submitted.iter().filter(|s| s.is_some()).count(),
    };
    Ok(SessionSummary {
        session_id: session.session_id.clone(),
        user_id: session.user_id.clone(),
        prompt_id: session.prompt_id,
        mode: session.mode,
        rounds_total,
        preferences_total: prefs.len(),
        final_ranking: rows.iter().map(|r| r.model_id).collect(),
        models: rows,
    })
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "battle" => Ok(Mode::Battle),
            "dragsort" => Ok(Mode::Dragsort),
            other => Err(Error::InvalidParam(format!("unknown mode {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::MetricVector;

    /// Pre-rank of models 1..=n where model i has GRE-Score (n - i + 1), i.e. rank i.
    fn ranks(n: u32) -> Vec<PreRankEntry> {
        (1..=n)
            .map(|m| PreRankEntry {
                model_id: m,
                gre_score: f64::from(n - m + 1),
                metric_vector: MetricVector {
                    model_id: m,
                    prompt_id: 1,
                    q_accuracy: 0.0,
                    q_distinctiveness: 0.0,
                    q_popularity: 0.0,
                },
                rank: m as usize,
            })
            .collect()
    }

    fn battle(selected: &[ModelId], min_pool: usize) -> RankingSession {
        create_session_with_mode("s", "u", 1, selected, &ranks(10), min_pool, Mode::Battle).unwrap()
    }

    #[test]
    fn complement_examples() {
        let pr = ranks(10);
        assert_eq!(complement_pool(&[1, 2, 3], &pr, 3), vec![1, 2, 3]);
        assert_eq!(complement_pool(&[], &pr, 4), vec![1, 2, 3, 4]);
        assert_eq!(complement_pool(&[9], &pr, 3), vec![9, 1, 2]);
        assert_eq!(complement_pool(&[], &pr[..2], 5), vec![1, 2]);
    }

    #[test]
    fn pool_composition() {
        let s = battle(&[1, 2, 3, 4, 5, 6, 7, 8], 8);
        assert_eq!(s.pool, vec![1, 2, 3, 4, 5, 6, 7, 8]);
        let s = battle(&[10, 9, 8], 8);
        assert_eq!(s.pool, vec![10, 9, 8, 1, 2, 3, 4, 5]);
        assert_eq!(s.selected, vec![10, 9, 8]);
    }

    #[test]
    fn creation_errors() {
        assert!(matches!(
            create_session("s", "u", 1, &[], &ranks(3), 1, 7),
            Err(Error::BadMinPool(1))
        ));
        assert!(matches!(
            create_session("s", "u", 1, &[], &[], 4, 7),
            Err(Error::EmptySelectionAndCatalog)
        ));
        assert!(matches!(
            create_session("s", "u", 1, &[42], &ranks(3), 2, 7),
            Err(Error::ModelNotVisible(42))
        ));
    }

    #[test]
    fn mode_is_seeded() {
        for seed in 0..20 {
            let a = create_session("s", "u", 1, &[], &ranks(8), 8, seed).unwrap();
            let b = create_session("s", "u", 1, &[], &ranks(8), 8, seed).unwrap();
            assert_eq!(a.mode, b.mode);
        }
    }

    #[test]
    fn battle_starts_with_lowest_gre_pair() {
        let s = battle(&[], 5);
        let SessionState::Battle(b) = &s.state else { panic!() };
        // GRE ascending = 5, 4, 3, 2, 1
        assert_eq!(b.current_pair, Some([5, 4]));
        assert_eq!(b.queue, vec![3, 2, 1]);
    }

    #[test]
    fn battle_flow() {
        let mut s = battle(&[], 3);
        assert!(matches!(s.battle_choose(99, 0), Err(Error::NotInPair(99))));
        let out = s.battle_choose(2, 1).unwrap();
        assert_eq!(out, BattleOutcome::Next { pair: [2, 1], round: 2 });
        let out = s.battle_choose(1, 2).unwrap();
        assert_eq!(out, BattleOutcome::Finished { champion: 1 });
        assert!(matches!(s.battle_choose(1, 3), Err(Error::SessionFinished)));
        assert_eq!(s.preferences.len(), 2);
        assert!(matches!(
            s.dragsort_submit(0, &[1], 0),
            Err(Error::SessionFinished)
        ));
    }

    #[test]
    fn two_model_battle() {
        let mut s = battle(&[], 2);
        let [a, _] = match &s.state {
            SessionState::Battle(b) => b.current_pair.unwrap(),
            _ => unreachable!(),
        };
        assert_eq!(s.battle_choose(a, 0).unwrap(), BattleOutcome::Finished { champion: a });
        assert_eq!(s.preferences.len(), 1);
    }

    #[test]
    fn batch_size_rules() {
        assert_eq!(batch_sizes(8), vec![4, 4]);
        assert_eq!(batch_sizes(6), vec![4, 2]);
        assert_eq!(batch_sizes(7), vec![4, 3]);
        assert_eq!(batch_sizes(5), vec![3, 2]);
        assert_eq!(batch_sizes(9), vec![4, 3, 2]);
        assert_eq!(batch_sizes(2), vec![2]);
        assert_eq!(batch_sizes(3), vec![3]);
    }

    #[test]
    fn dragsort_flow() {
        let mut s = create_session_with_mode("s", "u", 1, &[], &ranks(6), 6, Mode::Dragsort).unwrap();
        let SessionState::Dragsort(d) = &s.state else { panic!() };
        assert_eq!(d.batches, vec![vec![1, 2, 3, 4], vec![5, 6]]);
        assert!(matches!(s.battle_choose(1, 0), Err(Error::WrongMode { .. })));
        assert!(matches!(
            s.dragsort_submit(0, &[1, 2, 3, 3], 0),
            Err(Error::NotAPermutation)
        ));
        assert!(matches!(s.dragsort_submit(0, &[1, 2, 3], 0), Err(Error::NotAPermutation)));
        let ack = s.dragsort_submit(0, &[1, 2, 3, 4], 0).unwrap();
        assert_eq!(ack, DragSortAck { preferences_added: 6, finished: false });
        // identity order agrees with GRE-descending
        assert!(s.preferences.iter().all(|p| p.winner < p.loser));
        assert!(matches!(
            s.dragsort_submit(0, &[1, 2, 3, 4], 0),
            Err(Error::AlreadySubmitted(0))
        ));
        let ack = s.dragsort_submit(1, &[6, 5], 1).unwrap();
        assert_eq!(ack, DragSortAck { preferences_added: 1, finished: true });
        assert_eq!(s.preferences.last().unwrap().winner, 6);
        let summary = session_summary(&s).unwrap();
        assert_eq!(summary.rounds_total, 2);
        assert_eq!(summary.preferences_total, 7);
    }

    #[test]
    fn elo_single_preference() {
        let mut s = battle(&[], 2);
        assert!(matches!(session_summary(&s), Err(Error::SessionActive)));
        s.battle_choose(1, 0).unwrap();
        let summary = session_summary(&s).unwrap();
        assert_eq!(summary.final_ranking, vec![1, 2]);
        assert_eq!(summary.models[0].elo, 1016.0);
        assert_eq!(summary.models[1].elo, 984.0);
    }

    #[test]
    fn four_model_transcript() {
        // queue GRE-ascending: 4, 3, 2, 1; model 1 is the champion
        let mut s = battle(&[], 4);
        s.battle_choose(3, 0).unwrap(); // 3 beats 4
        s.battle_choose(2, 1).unwrap(); // 2 beats 3
        s.battle_choose(1, 2).unwrap(); // 1 beats 2
        let sum = session_summary(&s).unwrap();
        assert_eq!(sum.rounds_total, 3);
        assert_eq!(sum.final_ranking[0], 1);
        let champ = &sum.models[0];
        assert_eq!((champ.wins, champ.losses), (1, 0));
        // independent replay of the three updates
        let e = |rw: f64, rl: f64| 32.0 * (1.0 - 1.0 / (1.0 + 10f64.powf((rl - rw) / 400.0)));
        let d1 = e(1000.0, 1000.0);
        let (r3, r4) = (1000.0 + d1, 1000.0 - d1);
        let d2 = e(1000.0, r3);
        let (r2, r3) = (1000.0 + d2, r3 - d2);
        let d3 = e(1000.0, r2);
        let (r1, r2) = (1000.0 + d3, r2 - d3);
        let got: HashMap<_, _> = sum.models.iter().map(|m| (m.model_id, m.elo)).collect();
        for (m, want) in [(1, r1), (2, r2), (3, r3), (4, r4)] {
            assert!((got[&m] - want).abs() < 1e-12);
        }
        let wins: usize = sum.models.iter().map(|m| m.wins).sum();
        let losses: usize = sum.models.iter().map(|m| m.losses).sum();
        assert_eq!((wins, losses), (3, 3));
    }

    #[test]
    fn replay_matches_live_session() {
        let mut live = create_session("s1", "u", 1, &[3, 5], &ranks(10), 6, 11).unwrap();
        let mut log = live.take_pending_events();
        match live.mode {
            Mode::Battle => {
                while let Some([a, _]) = match &live.state {
                    SessionState::Battle(b) => b.current_pair,
                    _ => None,
                } {
                    live.battle_choose(a, 5).unwrap();
                    log.extend(live.take_pending_events());
                }
            }
            Mode::Dragsort => {
                let batches = match &live.state {
                    SessionState::Dragsort(d) => d.batches.clone(),
                    _ => unreachable!(),
                };
                for (i, b) in batches.iter().enumerate() {
                    let mut rev = b.clone();
                    rev.reverse();
                    live.dragsort_submit(i, &rev, 9).unwrap();
                    log.extend(live.take_pending_events());
                }
            }
        }
        assert!(matches!(log.last(), Some(SessionEvent::Finished { .. })));
        let rebuilt = replay(&log).unwrap();
        assert_eq!(rebuilt["s1"], live);

        let json: Vec<String> = log.iter().map(|e| serde_json::to_string(e).unwrap()).collect();
        assert!(json[0].starts_with("{\"type\":\"selection\""));
        let parsed: Vec<SessionEvent> = json.iter().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(parsed, log);
    }

    #[test]
    fn replay_rejects_out_of_order_rounds() {
        let mut s = battle(&[], 3);
        let mut log = s.take_pending_events();
        let SessionState::Battle(b) = &s.state else { panic!() };
        let pair = b.current_pair.unwrap();
        log.push(SessionEvent::BattleChoice {
            session_id: "s".into(),
            round: 7,
            chosen: pair[0],
            timestamp: 0,
        });
        assert!(matches!(replay(&log), Err(Error::CorruptLog { .. })));
    }
}
