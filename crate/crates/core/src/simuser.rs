//! Simulated users with linear utilities over image embeddings and
//! Bradley-Terry choice noise. Used to drive ranking sessions end to end and
//! to build synthetic preference data with a known ground truth.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, ModelId, PromptId};
use crate::elicitation::{
    self, BattleOutcome, Mode, PairwisePreference, RankingSession, SessionState,
};
use crate::error::{Error, Result};
use crate::ltr::{PreferenceDataset, Split, Triple};
use crate::metrics::GreWeights;
use crate::retrieval;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Choice {
    A,
    B,
}

#[derive(Debug, Clone)]
pub struct SimUser {
    utility: Vec<f64>,
    /// Choice sharpness; `f64::INFINITY` makes the user deterministic.
    beta: f64,
    rng: ChaCha8Rng,
}

fn dot32(u: &[f64], e: &[f32]) -> Result<f64> {
    if u.len() != e.len() {
        return Err(Error::DimMismatch(u.len(), e.len()));
    }
    Ok(u.iter().zip(e).map(|(a, &b)| a * f64::from(b)).sum())
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl SimUser {
    pub fn new(utility: Vec<f64>, beta: f64, seed: u64) -> Result<Self> {
        if utility.iter().any(|v| !v.is_finite()) || utility.iter().all(|&v| v == 0.0) {
            return Err(Error::InvalidParam("utility vector must be finite and nonzero".into()));
        }
        if !(beta > 0.0) {
            return Err(Error::InvalidParam("beta must be positive".into()));
        }
        Ok(Self {
            utility,
            beta,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// User with a standard-normal utility vector.
    pub fn random(dim: usize, beta: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_F00D);
        let utility = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        Self::new(utility, beta, seed)
    }

    pub fn utility_vector(&self) -> &[f64] {
        &self.utility
    }

    pub fn is_deterministic(&self) -> bool {
        self.beta.is_infinite()
    }

    pub fn utility(&self, embedding: &[f32]) -> Result<f64> {
        dot32(&self.utility, embedding)
    }

    /// Bradley-Terry choice: `P(A) = σ(β (s_A - s_B))`. Deterministic users pick
    /// the higher utility and break exact ties toward A.
    pub fn choose(&mut self, a: &[f32], b: &[f32]) -> Result<Choice> {
        let (sa, sb) = (self.utility(a)?, self.utility(b)?);
        if self.is_deterministic() {
            return Ok(if sa >= sb { Choice::A } else { Choice::B });
        }
        let p_a = logistic(self.beta * (sa - sb));
        Ok(if self.rng.random_bool(p_a) { Choice::A } else { Choice::B })
    }

    /// Order items best-first. Deterministic users sort by utility (ties by
    /// model_id); noisy users sample a Plackett-Luce ranking with weights
    /// `exp(β s)`, which reduces to [`choose`](Self::choose) for two items.
    pub fn order(&mut self, items: &[(ModelId, &[f32])]) -> Result<Vec<ModelId>> {
        let mut scored = items
            .iter()
            .map(|(m, e)| Ok((*m, self.utility(e)?)))
            .collect::<Result<Vec<_>>>()?;
        if self.is_deterministic() {
            scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            return Ok(scored.into_iter().map(|(m, _)| m).collect());
        }
        let mut out = Vec::with_capacity(scored.len());
        while !scored.is_empty() {
            let top = scored.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = scored.iter().map(|s| (self.beta * (s.1 - top)).exp()).collect();
            let total: f64 = weights.iter().sum();
            let mut x = self.rng.random_range(0.0..total);
            let mut pick = weights.len() - 1;
            for (i, w) in weights.iter().enumerate() {
                if x < *w {
                    pick = i;
                    break;
                }
                x -= w;
            }
            out.push(scored.remove(pick).0);
        }
        Ok(out)
    }
}

/// Pool sorted by the user's utility for `prompt_id`'s images, ties by model_id.
pub fn oracle_ranking(
    user: &SimUser,
    pool: &[ModelId],
    catalog: &Catalog,
    prompt_id: PromptId,
) -> Result<Vec<ModelId>> {
    let mut scored = pool
        .iter()
        .map(|&m| {
            let img = catalog.image_for(m, prompt_id)?;
            Ok((m, user.utility(catalog.image_embedding(img))?))
        })
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(scored.into_iter().map(|(m, _)| m).collect())
}

/// Drive a session to completion with `user`'s choices.
pub fn play_session(
    user: &mut SimUser,
    session: &mut RankingSession,
    catalog: &Catalog,
    timestamp: u64,
) -> Result<()> {
    let prompt_id = session.prompt_id;
    let emb = |m: ModelId| -> Result<&[f32]> {
        Ok(catalog.image_embedding(catalog.image_for(m, prompt_id)?))
    };
    match session.state.clone() {
        SessionState::Battle(state) => {
            let mut pair = state.current_pair;
            while let Some([a, b]) = pair {
                let chosen = match user.choose(emb(a)?, emb(b)?)? {
                    Choice::A => a,
                    Choice::B => b,
                };
                pair = match session.battle_choose(chosen, timestamp)? {
                    BattleOutcome::Next { pair, .. } => Some(pair),
                    BattleOutcome::Finished { .. } => None,
                };
            }
        }
        SessionState::Dragsort(state) => {
            for (i, batch) in state.batches.iter().enumerate() {
                let items = batch
                    .iter()
                    .map(|&m| Ok((m, emb(m)?)))
                    .collect::<Result<Vec<_>>>()?;
                let order = user.order(&items)?;
                session.dragsort_submit(i, &order, timestamp)?;
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeChoice {
    Battle,
    Dragsort,
    /// Random assignment per session.
    Both,
}

impl std::str::FromStr for ModeChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "battle" => Ok(ModeChoice::Battle),
            "dragsort" => Ok(ModeChoice::Dragsort),
            "both" => Ok(ModeChoice::Both),
            other => Err(Error::InvalidParam(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub prompt_id: PromptId,
    pub users: usize,
    pub mode: ModeChoice,
    pub beta: f64,
    pub seed: u64,
    pub weights: GreWeights,
    pub nsfw_threshold: f64,
    pub min_pool: usize,
    /// Models each user picks in the gallery before ranking.
    pub selections_per_user: usize,
}

impl SimulationConfig {
    pub fn new(prompt_id: PromptId, users: usize) -> Self {
        Self {
            prompt_id,
            users,
            mode: ModeChoice::Both,
            beta: f64::INFINITY,
            seed: 0,
            weights: GreWeights::default(),
            nsfw_threshold: retrieval::DEFAULT_NSFW_THRESHOLD,
            min_pool: elicitation::DEFAULT_MIN_POOL,
            selections_per_user: 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulationOutput {
    pub sessions: Vec<RankingSession>,
    pub preferences: Vec<PairwisePreference>,
}

/// Run one full two-stage session per simulated user: each user selects its
/// favourite gallery models, then ranks the complemented pool.
pub fn simulate(catalog: &Catalog, cfg: &SimulationConfig) -> Result<SimulationOutput> {
    let ranked = retrieval::pre_rank(catalog, cfg.prompt_id, &cfg.weights, cfg.nsfw_threshold)?;
    let visible: Vec<ModelId> = ranked.iter().map(|e| e.model_id).collect();
    let mut seeds = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sessions = Vec::with_capacity(cfg.users);
    let mut preferences = Vec::new();

    for i in 0..cfg.users {
        let user_seed: u64 = seeds.random();
        let session_seed: u64 = seeds.random();
        let mut user = SimUser::random(catalog.dim(), cfg.beta, user_seed)?;
        let favourites = oracle_ranking(&user, &visible, catalog, cfg.prompt_id)?;
        let selected = &favourites[..cfg.selections_per_user.min(favourites.len())];

        let user_id = format!("sim-user-{i:04}");
        let session_id = format!("sim-{i:04}");
        let mode = match cfg.mode {
            ModeChoice::Battle => Mode::Battle,
            ModeChoice::Dragsort => Mode::Dragsort,
            ModeChoice::Both => elicitation::draw_mode(session_seed),
        };
        let mut session = elicitation::create_session_with_mode(
            &session_id,
            &user_id,
            cfg.prompt_id,
            selected,
            &ranked,
            cfg.min_pool,
            mode,
        )?;
        play_session(&mut user, &mut session, catalog, i as u64)?;
        preferences.extend(session.preferences.iter().cloned());
        sessions.push(session);
    }
    Ok(SimulationOutput {
        sessions,
        preferences,
    })
}

const CONSENSUS: f64 = 4.0;

/// A synthetic transitive preference world: items carry latent vectors, users
/// carry random linear utilities, and every sampled pair is oriented by the
/// user's true utility.
///
/// Each user's utility vector is `consensus * m + z`, where `m` is one shared
/// standard-normal direction and `z` is the user's own standard-normal draw, so
/// `consensus` sets how much the population agrees.
#[derive(Debug, Clone)]
pub struct PreferenceWorld {
    pub users: usize,
    pub items: usize,
    pub latent_dim: usize,
    pub consensus: f64,
    pub train_pairs_per_user: usize,
    pub heldout_pairs_per_user: usize,
    pub seed: u64,
}

impl PreferenceWorld {
    /// 50 users × 50 items, 30 training and 20 held-out pairs per user, with
    /// two taste axes and strong population agreement.
    pub fn standard(seed: u64) -> Self {
        Self {
            users: 50,
            items: 50,
            latent_dim: 2,
            consensus: CONSENSUS,
            train_pairs_per_user: 30,
            heldout_pairs_per_user: 20,
            seed,
        }
    }

    /// Build (train, heldout). Pairs are distinct within a user and never shared
    /// between the two splits.
    pub fn generate(&self) -> Result<(PreferenceDataset, PreferenceDataset)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let item_vecs: Vec<Vec<f32>> = (0..self.items)
            .map(|_| {
                (0..self.latent_dim)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect()
            })
            .collect();
        let shared: Vec<f64> = (0..self.latent_dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let needed = self.train_pairs_per_user + self.heldout_pairs_per_user;
        if needed > self.items * (self.items - 1) / 2 {
            return Err(Error::InvalidParam("not enough distinct pairs".into()));
        }

        let mut train = Vec::new();
        let mut heldout = Vec::new();
        for u in 0..self.users {
            let taste: Vec<f64> = shared
                .iter()
                .map(|m| self.consensus * m + { let z: f64 = StandardNormal.sample(&mut rng); z })
                .collect();
            let user = SimUser::new(taste, f64::INFINITY, 0)?;
            let user_id = format!("user-{u:03}");
            let mut seen = HashSet::new();
            let mut pairs = Vec::with_capacity(needed);
            while pairs.len() < needed {
                let a = rng.random_range(0..self.items);
                let b = rng.random_range(0..self.items);
                if a == b || !seen.insert((a.min(b), a.max(b))) {
                    continue;
                }
                let (sa, sb) = (user.utility(&item_vecs[a])?, user.utility(&item_vecs[b])?);
                let (w, l) = if sa >= sb { (a, b) } else { (b, a) };
                pairs.push(Triple {
                    user_id: user_id.clone(),
                    winner: w as ModelId + 1,
                    loser: l as ModelId + 1,
                });
            }
            heldout.extend(pairs.split_off(self.train_pairs_per_user));
            train.extend(pairs);
        }
        Ok((
            PreferenceDataset::new(train, Split::Train)?,
            PreferenceDataset::new(heldout, Split::Heldout)?,
        ))
    }
}
