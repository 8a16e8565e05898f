//! Bayesian Personalized Ranking over elicited pairwise preferences.
//!
//! The scorer is matrix factorization with an item bias,
//! `score(u, i) = b_i + p_u · q_i`, trained by sequential SGD on
//! `-ln σ(score(u, winner) - score(u, loser))` plus L2 regularization.

use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::catalog::ModelId;
use crate::elicitation::PairwisePreference;
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 9] = b"GEMRECBPR";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BprParams {
    pub factors: usize,
    pub learning_rate: f64,
    pub l2_reg: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for BprParams {
    fn default() -> Self {
        Self {
            factors: 16,
            learning_rate: 0.05,
            l2_reg: 0.01,
            epochs: 200,
            seed: 0,
        }
    }
}

impl BprParams {
    pub fn validate(&self) -> Result<()> {
        if self.factors == 0 || self.epochs == 0 {
            return Err(Error::InvalidParam("factors and epochs must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.l2_reg >= 0.0) {
            return Err(Error::InvalidParam(
                "learning_rate must be positive and l2_reg non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub user_id: String,
    pub winner: ModelId,
    pub loser: ModelId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Heldout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceDataset {
    pub triples: Vec<Triple>,
    pub split: Split,
}

impl PreferenceDataset {
    pub fn new(triples: Vec<Triple>, split: Split) -> Result<Self> {
        if let Some(t) = triples.iter().find(|t| t.winner == t.loser) {
            return Err(Error::InvalidParam(format!(
                "triple for user {} has winner == loser == {}",
                t.user_id, t.winner
            )));
        }
        Ok(Self { triples, split })
    }

    /// One triple per preference, user taken from the preference.
    pub fn from_preferences(prefs: &[PairwisePreference], split: Split) -> Result<Self> {
        Self::new(
            prefs
                .iter()
                .map(|p| Triple {
                    user_id: p.user_id.clone(),
                    winner: p.winner,
                    loser: p.loser,
                })
                .collect(),
            split,
        )
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BprModel {
    factors: usize,
    user_ids: Vec<String>,
    item_ids: Vec<ModelId>,
    /// Row-major `users × factors`.
    pub user_factors: Vec<f64>,
    /// Row-major `items × factors`.
    pub item_factors: Vec<f64>,
    pub item_bias: Vec<f64>,
    user_index: HashMap<String, usize>,
    item_index: HashMap<ModelId, usize>,
}

impl BprModel {
    /// Zero-initialized model over the given users and items.
    pub fn zeros(user_ids: Vec<String>, item_ids: Vec<ModelId>, factors: usize) -> Self {
        let user_index = user_ids.iter().enumerate().map(|(i, u)| (u.clone(), i)).collect();
        let item_index = item_ids.iter().enumerate().map(|(i, m)| (*m, i)).collect();
        Self {
            factors,
            user_factors: vec![0.0; user_ids.len() * factors],
            item_factors: vec![0.0; item_ids.len() * factors],
            item_bias: vec![0.0; item_ids.len()],
            user_ids,
            item_ids,
            user_index,
            item_index,
        }
    }

    pub fn factors(&self) -> usize {
        self.factors
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &[ModelId] {
        &self.item_ids
    }

    pub fn has_user(&self, user_id: &str) -> bool {
        self.user_index.contains_key(user_id)
    }

    pub fn has_item(&self, item: ModelId) -> bool {
        self.item_index.contains_key(&item)
    }

    pub fn user_row(&self, user_id: &str) -> Result<usize> {
        self.user_index
            .get(user_id)
            .copied()
            .ok_or_else(|| Error::unknown_id("user", user_id))
    }

    pub fn item_row(&self, item: ModelId) -> Result<usize> {
        self.item_index
            .get(&item)
            .copied()
            .ok_or_else(|| Error::unknown_id("model", item))
    }

    pub fn user_vector(&self, row: usize) -> &[f64] {
        &self.user_factors[row * self.factors..(row + 1) * self.factors]
    }

    pub fn item_vector(&self, row: usize) -> &[f64] {
        &self.item_factors[row * self.factors..(row + 1) * self.factors]
    }

    pub fn user_vector_mut(&mut self, row: usize) -> &mut [f64] {
        &mut self.user_factors[row * self.factors..(row + 1) * self.factors]
    }

    pub fn item_vector_mut(&mut self, row: usize) -> &mut [f64] {
        &mut self.item_factors[row * self.factors..(row + 1) * self.factors]
    }

    fn score_rows(&self, u: usize, i: usize) -> f64 {
        self.item_bias[i] + dot(self.user_vector(u), self.item_vector(i))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let n32 = |n: usize| {
            u32::try_from(n).map_err(|_| Error::BadModelFile(format!("{n} exceeds u32")))
        };
        w.write_all(MODEL_MAGIC)?;
        for v in [
            MODEL_FORMAT_VERSION,
            n32(self.user_ids.len())?,
            n32(self.item_ids.len())?,
            n32(self.factors)?,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        for u in &self.user_ids {
            w.write_all(&n32(u.len())?.to_le_bytes())?;
            w.write_all(u.as_bytes())?;
        }
        for m in &self.item_ids {
            w.write_all(&m.to_le_bytes())?;
        }
        for v in self
            .user_factors
            .iter()
            .chain(&self.item_factors)
            .chain(&self.item_bias)
        {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let bad = |m: &str| Error::BadModelFile(m.to_string());
        let mut magic = [0u8; 9];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != MODEL_MAGIC {
            return Err(bad("bad magic bytes"));
        }
        let read_u32 = |r: &mut R| -> Result<u32> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(|_| bad("truncated file"))?;
            Ok(u32::from_le_bytes(b))
        };
        let version = read_u32(&mut r)?;
        if version != MODEL_FORMAT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let users = read_u32(&mut r)? as usize;
        let items = read_u32(&mut r)? as usize;
        let factors = read_u32(&mut r)? as usize;
        let mut user_ids = Vec::with_capacity(users);
        for _ in 0..users {
            let len = read_u32(&mut r)? as usize;
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf).map_err(|_| bad("truncated user table"))?;
            user_ids.push(String::from_utf8(buf).map_err(|_| bad("user id is not UTF-8"))?);
        }
        let item_ids = (0..items)
            .map(|_| read_u32(&mut r))
            .collect::<Result<Vec<_>>>()?;
        let mut model = Self::zeros(user_ids, item_ids, factors);
        if model.user_index.len() != users || model.item_index.len() != items {
            return Err(bad("duplicate ids in index tables"));
        }
        let mut read_f32s = |dst: &mut [f64]| -> Result<()> {
            let mut buf = vec![0u8; dst.len() * 4];
            r.read_exact(&mut buf).map_err(|_| bad("truncated parameters"))?;
            for (d, c) in dst.iter_mut().zip(buf.chunks_exact(4)) {
                *d = f64::from(f32::from_le_bytes(c.try_into().unwrap()));
            }
            Ok(())
        };
        read_f32s(&mut model.user_factors)?;
        read_f32s(&mut model.item_factors)?;
        read_f32s(&mut model.item_bias)?;
        if r.read(&mut [0u8; 1])? != 0 {
            return Err(bad("trailing bytes"));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-ln σ(d)`, stable for large |d|.
fn neg_log_sigmoid(d: f64) -> f64 {
    if d > 0.0 {
        (-d).exp().ln_1p()
    } else {
        -d + d.exp().ln_1p()
    }
}

pub fn bpr_predict(model: &BprModel, user_id: &str, item: ModelId) -> Result<f64> {
    Ok(model.score_rows(model.user_row(user_id)?, model.item_row(item)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BprGradients {
    pub user: Vec<f64>,
    pub winner: Vec<f64>,
    pub loser: Vec<f64>,
    pub winner_bias: f64,
    pub loser_bias: f64,
}

/// Loss of one triple and its exact partial derivatives.
pub fn bpr_loss_and_grads(model: &BprModel, triple: &Triple, l2_reg: f64) -> Result<(f64, BprGradients)> {
    let u = model.user_row(&triple.user_id)?;
    let w = model.item_row(triple.winner)?;
    let l = model.item_row(triple.loser)?;
    Ok(loss_and_grads_rows(model, u, w, l, l2_reg))
}

fn loss_and_grads_rows(model: &BprModel, u: usize, w: usize, l: usize, reg: f64) -> (f64, BprGradients) {
    let pu = model.user_vector(u);
    let qw = model.item_vector(w);
    let ql = model.item_vector(l);
    let (bw, bl) = (model.item_bias[w], model.item_bias[l]);
    let d = model.score_rows(u, w) - model.score_rows(u, l);

    let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    let loss = neg_log_sigmoid(d) + 0.5 * reg * (sq(pu) + sq(qw) + sq(ql) + bw * bw + bl * bl);

    // d(-ln σ(d))/dd
    let g = -sigmoid(-d);
    let grads = BprGradients {
        user: (0..pu.len()).map(|k| g * (qw[k] - ql[k]) + reg * pu[k]).collect(),
        winner: pu.iter().zip(qw).map(|(p, q)| g * p + reg * q).collect(),
        loser: pu.iter().zip(ql).map(|(p, q)| -g * p + reg * q).collect(),
        winner_bias: g + reg * bw,
        loser_bias: -g + reg * bl,
    };
    (loss, grads)
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: BprModel,
    /// Mean per-triple loss of each epoch, measured as SGD visits the triples.
    pub loss_trace: Vec<f64>,
}

pub fn bpr_train(dataset: &PreferenceDataset, params: &BprParams) -> Result<TrainOutput> {
    params.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let users: BTreeSet<&str> = dataset.triples.iter().map(|t| t.user_id.as_str()).collect();
    let items: BTreeSet<ModelId> = dataset
        .triples
        .iter()
        .flat_map(|t| [t.winner, t.loser])
        .collect();
    let mut model = BprModel::zeros(
        users.into_iter().map(str::to_string).collect(),
        items.into_iter().collect(),
        params.factors,
    );

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let init = Normal::new(0.0, 0.01).expect("valid normal");
    for v in model.user_factors.iter_mut().chain(model.item_factors.iter_mut()) {
        *v = init.sample(&mut rng);
    }

    let rows: Vec<(usize, usize, usize)> = dataset
        .triples
        .iter()
        .map(|t| {
            Ok((
                model.user_row(&t.user_id)?,
                model.item_row(t.winner)?,
                model.item_row(t.loser)?,
            ))
        })
        .collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut loss_trace = Vec::with_capacity(params.epochs);
    let lr = params.learning_rate;

    for _ in 0..params.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &idx in &order {
            let (u, w, l) = rows[idx];
            let (loss, g) = loss_and_grads_rows(&model, u, w, l, params.l2_reg);
            total += loss;
            for (p, d) in model.user_vector_mut(u).iter_mut().zip(&g.user) {
                *p -= lr * d;
            }
            for (q, d) in model.item_vector_mut(w).iter_mut().zip(&g.winner) {
                *q -= lr * d;
            }
            for (q, d) in model.item_vector_mut(l).iter_mut().zip(&g.loser) {
                *q -= lr * d;
            }
            model.item_bias[w] -= lr * g.winner_bias;
            model.item_bias[l] -= lr * g.loser_bias;
        }
        loss_trace.push(total / rows.len() as f64);
    }
    Ok(TrainOutput { model, loss_trace })
}

/// Candidates by predicted score descending, ties by model_id ascending.
pub fn bpr_rank(model: &BprModel, user_id: &str, candidates: &[ModelId]) -> Result<Vec<(ModelId, f64)>> {
    let u = model.user_row(user_id)?;
    let mut scored = candidates
        .iter()
        .map(|&m| Ok((m, model.score_rows(u, model.item_row(m)?))))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(scored)
}

/// Fraction of held-out triples ordered correctly; exact ties count one half.
pub fn evaluate_pairwise_accuracy(model: &BprModel, heldout: &PreferenceDataset) -> Result<f64> {
    if heldout.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut correct = 0.0;
    for t in &heldout.triples {
        let sw = bpr_predict(model, &t.user_id, t.winner)?;
        let sl = bpr_predict(model, &t.user_id, t.loser)?;
        correct += match sw.partial_cmp(&sl) {
            Some(std::cmp::Ordering::Greater) => 1.0,
            Some(std::cmp::Ordering::Equal) => 0.5,
            _ => 0.0,
        };
    }
    Ok(correct / heldout.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triple(u: &str, w: ModelId, l: ModelId) -> Triple {
        Triple {
            user_id: u.into(),
            winner: w,
            loser: l,
        }
    }

    fn toy(factors: usize) -> BprModel {
        BprModel::zeros(vec!["u".into()], vec![1, 2], factors)
    }

    #[test]
    fn predict_examples() {
        let mut m = toy(2);
        assert_eq!(bpr_predict(&m, "u", 1).unwrap(), 0.0);
        m.user_vector_mut(0).copy_from_slice(&[1.0, 0.0]);
        m.item_vector_mut(0).copy_from_slice(&[2.0, 3.0]);
        m.item_bias[0] = 0.5;
        assert_eq!(bpr_predict(&m, "u", 1).unwrap(), 2.5);
        assert!(matches!(bpr_predict(&m, "nobody", 1), Err(Error::UnknownId { .. })));
        assert!(matches!(bpr_predict(&m, "u", 9), Err(Error::UnknownId { .. })));
    }

    #[test]
    fn loss_at_zero() {
        let m = toy(3);
        let (loss, g) = bpr_loss_and_grads(&m, &triple("u", 1, 2), 0.0).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(g.winner_bias, -0.5);
        assert_eq!(g.loser_bias, 0.5);
        assert!(g.user.iter().chain(&g.winner).chain(&g.loser).all(|&x| x == 0.0));
    }

    #[test]
    fn stable_loss_extremes() {
        assert!((neg_log_sigmoid(800.0)).abs() < 1e-300);
        assert!((neg_log_sigmoid(-800.0) - 800.0).abs() < 1e-9);
        assert_eq!(sigmoid(-800.0), 0.0);
    }

    #[test]
    fn single_triple_learns_margin() {
        let ds = PreferenceDataset::new(vec![triple("u", 7, 3)], Split::Train).unwrap();
        let out = bpr_train(&ds, &BprParams { epochs: 100, ..Default::default() }).unwrap();
        let m = &out.model;
        assert!(bpr_predict(m, "u", 7).unwrap() > bpr_predict(m, "u", 3).unwrap());
        assert!(out.loss_trace.last().unwrap() < out.loss_trace.first().unwrap());
    }

    #[test]
    fn training_errors() {
        let empty = PreferenceDataset::new(vec![], Split::Train).unwrap();
        assert!(matches!(bpr_train(&empty, &BprParams::default()), Err(Error::EmptyDataset)));
        assert!(PreferenceDataset::new(vec![triple("u", 1, 1)], Split::Train).is_err());
        let ds = PreferenceDataset::new(vec![triple("u", 1, 2)], Split::Train).unwrap();
        let bad = BprParams { factors: 0, ..Default::default() };
        assert!(bpr_train(&ds, &bad).is_err());
    }

    #[test]
    fn rank_examples() {
        let mut m = toy(1);
        m.item_bias.copy_from_slice(&[1.0, 2.5]);
        assert_eq!(bpr_rank(&m, "u", &[1, 2]).unwrap(), vec![(2, 2.5), (1, 1.0)]);
        m.item_bias.copy_from_slice(&[1.0, 1.0]);
        let ids: Vec<_> = bpr_rank(&m, "u", &[2, 1]).unwrap().into_iter().map(|x| x.0).collect();
        assert_eq!(ids, vec![1, 2]);
    }

    #[test]
    fn accuracy_examples() {
        let mut m = BprModel::zeros(vec!["u".into()], vec![1, 2, 3, 4], 1);
        let held = PreferenceDataset::new(
            vec![triple("u", 1, 2), triple("u", 2, 3), triple("u", 3, 4), triple("u", 4, 1)],
            Split::Heldout,
        )
        .unwrap();
        assert_eq!(evaluate_pairwise_accuracy(&m, &held).unwrap(), 0.5);
        m.item_bias.copy_from_slice(&[4.0, 3.0, 2.0, 1.0]);
        assert_eq!(evaluate_pairwise_accuracy(&m, &held).unwrap(), 0.75);
        let empty = PreferenceDataset::new(vec![], Split::Heldout).unwrap();
        assert!(matches!(evaluate_pairwise_accuracy(&m, &empty), Err(Error::EmptyDataset)));
    }

    #[test]
    fn model_file_layout() {
        let mut m = BprModel::zeros(vec!["alice".into(), "bob".into()], vec![3, 9], 2);
        m.user_factors.copy_from_slice(&[0.5, -1.0, 2.0, 0.25]);
        m.item_bias.copy_from_slice(&[1.5, -0.5]);
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..9], b"GEMRECBPR");
        assert_eq!(&buf[9..13], &1u32.to_le_bytes());
        assert_eq!(&buf[13..17], &2u32.to_le_bytes());
        let header = 9 + 16;
        let tables = (4 + 5) + (4 + 3) + 2 * 4;
        let params = (4 + 4 + 2) * 4;
        assert_eq!(buf.len(), header + tables + params);
        // values here are exactly representable in f32
        assert_eq!(BprModel::read_from(&buf[..]).unwrap(), m);
        buf.push(0);
        assert!(BprModel::read_from(&buf[..]).is_err());
    }
}
