//! Dictionary look-up contrastive training.
//!
//! For a graph `A` with negatives `A'` (proximity) and `A~` (feature), the
//! query is `q = g_p(A)` and the dictionary holds `k0 = g_n(A)` (the
//! positive), `k1 = g_n(A')` and `k2 = g_n(A~)`. The loss is
//!
//! ```text
//! L = -log( exp(sim(q, k0) / tau) / sum_t exp(sim(q, k_t) / tau) )
//! ```
//!
//! where the sum runs over the whole dictionary, positive included, and
//! `sim` is cosine similarity.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, Tape, Var};
use crate::batch::{collect_gradients, sum_gradients};
use crate::dataset::{Graph, GraphDataset};
use crate::encoder::{adjacency_input, encode, EncoderConfig, EncoderParams};
use crate::error::{CgcError, Result};
use crate::generator::HardNegativePair;
use crate::seed::derive_seed;

/// Which generated negatives enter the dictionary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NegativeMode {
    Proximity,
    Feature,
    Both,
}

impl NegativeMode {
    pub const ALL: [NegativeMode; 3] = [NegativeMode::Proximity, NegativeMode::Feature, NegativeMode::Both];

    pub fn as_str(self) -> &'static str {
        match self {
            NegativeMode::Proximity => "proximity",
            NegativeMode::Feature => "feature",
            NegativeMode::Both => "both",
        }
    }

    /// Keys in the dictionary, positive included.
    pub fn dictionary_size(self) -> usize {
        match self {
            NegativeMode::Both => 3,
            _ => 2,
        }
    }
}

impl fmt::Display for NegativeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NegativeMode {
    type Err = CgcError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "proximity" => Ok(NegativeMode::Proximity),
            "feature" => Ok(NegativeMode::Feature),
            "both" => Ok(NegativeMode::Both),
            other => Err(CgcError::Config(format!(
                "negatives must be one of proximity|feature|both, got '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastConfig {
    pub tau: f64,
    pub negatives: NegativeMode,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// When set, `g_n` is not trained by the optimizer but follows `g_p`
    /// with this momentum after every step.
    pub momentum: Option<f64>,
}

impl Default for ContrastConfig {
    fn default() -> Self {
        ContrastConfig {
            tau: 1.0,
            negatives: NegativeMode::Both,
            epochs: 100,
            lr: 1e-3,
            batch_size: 256,
            momentum: None,
        }
    }
}

impl ContrastConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(CgcError::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(CgcError::Config(format!("lr-con must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(CgcError::Config("batch-size must be at least 1".into()));
        }
        if let Some(m) = self.momentum {
            if !(0.0..1.0).contains(&m) {
                return Err(CgcError::Config(format!("momentum must lie in [0, 1), got {m}")));
            }
        }
        Ok(())
    }
}

/// Cosine similarity of two row vectors on the tape; 0 if either is zero.
pub fn embedding_similarity(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    tape.cosine(a, b)
}

/// Plain-value cosine similarity with the same zero convention.
pub fn cosine_value(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// InfoNCE of `query` against `keys`, with `keys[positive]` the positive.
/// Computed as a shifted log-sum-exp so large `1/tau` stays finite.
pub fn info_nce(tape: &mut Tape, query: Var, keys: &[Var], positive: usize, tau: f64) -> Result<Var> {
    if keys.len() < 2 || positive >= keys.len() {
        return Err(CgcError::Shape(format!(
            "dictionary needs at least 2 keys and a valid positive, got {} keys, positive {positive}",
            keys.len()
        )));
    }
    let sims = keys
        .iter()
        .map(|&k| embedding_similarity(tape, query, k))
        .collect::<Result<Vec<_>>>()?;
    let row = tape.concat_cols(&sims)?;
    let logits = tape.scale(row, 1.0 / tau);
    let max = tape.value(logits).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let shift = tape.constant(Array2::from_elem((1, keys.len()), max));
    let shifted = tape.sub(logits, shift)?;
    let e = tape.exp(shifted);
    let total = tape.sum(e);
    let lse = tape.log(total);
    let pos = tape.select(shifted, 0, positive)?;
    tape.sub(lse, pos)
}

/// Plain-value InfoNCE from precomputed similarities.
pub fn info_nce_value(sims: &[f64], positive: usize, tau: f64) -> f64 {
    let logits: Vec<f64> = sims.iter().map(|s| s / tau).collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
    lse - logits[positive]
}

/// The inputs each graph contributes to stage 2, with adjacencies already in
/// encoder form.
struct Triple<'a> {
    original_adj: Array2<f64>,
    original: &'a Graph,
    proximity_adj: Option<Array2<f64>>,
    feature: Option<&'a Graph>,
}

/// Embeddings of one graph and its dictionary, before the loss.
pub struct ContrastKeys {
    pub q: Var,
    /// `keys[0]` is the positive `k0`.
    pub keys: Vec<Var>,
}

fn build_keys(
    tape: &mut Tape,
    query: &crate::encoder::BoundEncoder,
    key: &crate::encoder::BoundEncoder,
    t: &Triple<'_>,
    mode: NegativeMode,
) -> Result<ContrastKeys> {
    let adj = tape.constant(t.original_adj.clone());
    let x = tape.constant(t.original.features.clone());
    let q = encode(tape, query, adj, x)?;
    let k0 = encode(tape, key, adj, x)?;
    let mut keys = vec![k0];
    if matches!(mode, NegativeMode::Proximity | NegativeMode::Both) {
        let pa = t
            .proximity_adj
            .as_ref()
            .ok_or_else(|| CgcError::Config("proximity negative missing".into()))?;
        let pa = tape.constant(pa.clone());
        keys.push(encode(tape, key, pa, x)?);
    }
    if matches!(mode, NegativeMode::Feature | NegativeMode::Both) {
        let fg = t
            .feature
            .ok_or_else(|| CgcError::Config("feature negative missing".into()))?;
        let fx = tape.constant(fg.features.clone());
        keys.push(encode(tape, key, adj, fx)?);
    }
    Ok(ContrastKeys { q, keys })
}

#[derive(Debug, Clone)]
pub struct ContrastiveOutput {
    /// Trained `g_p`, used for downstream embeddings.
    pub query: EncoderParams,
    /// Trained `g_n`.
    pub key: EncoderParams,
    /// Epoch-mean InfoNCE; entry 0 is measured before any update.
    pub loss_curve: Vec<f64>,
    /// Keys per dictionary as built during training, positive included.
    pub dictionary_size: usize,
    /// Graphs that took part in training.
    pub graphs_used: usize,
}

/// Initializes `g_p` and `g_n` and trains them on InfoNCE.
///
/// `negatives[i]` holds the stage-1 output for graph `i`. A graph without
/// negatives is an error under `Both`; under a single-negative mode it is
/// an error too, since the missing pair always lacks both negatives.
pub fn train_contrastive(
    dataset: &GraphDataset,
    negatives: &[Option<HardNegativePair>],
    encoder: EncoderConfig,
    cfg: &ContrastConfig,
    seed: u64,
) -> Result<ContrastiveOutput> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "encoder-query", 0));
    let query = EncoderParams::init(encoder, dataset.feature_dim, dataset.num_classes, &mut rng)?;
    let key = match cfg.momentum {
        Some(_) => query.clone(),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "encoder-key", 0));
            EncoderParams::init(encoder, dataset.feature_dim, dataset.num_classes, &mut rng)?
        }
    };
    train_contrastive_from(dataset, negatives, query, key, cfg, seed)
}

/// Same as [`train_contrastive`] with caller-supplied initial encoders.
pub fn train_contrastive_from(
    dataset: &GraphDataset,
    negatives: &[Option<HardNegativePair>],
    mut query: EncoderParams,
    mut key: EncoderParams,
    cfg: &ContrastConfig,
    seed: u64,
) -> Result<ContrastiveOutput> {
    cfg.validate()?;
    if negatives.len() != dataset.len() {
        return Err(CgcError::Config(format!(
            "{} negative pairs for {} graphs",
            negatives.len(),
            dataset.len()
        )));
    }
    if let Some(i) = negatives.iter().position(|n| n.is_none()) {
        return Err(CgcError::Config(format!(
            "graph {i} has no generated negatives (mode {})",
            cfg.negatives
        )));
    }
    let kind = query.config.kind;
    let triples: Vec<Triple<'_>> = dataset
        .graphs
        .iter()
        .zip(negatives)
        .map(|(g, n)| {
            let n = n.as_ref().expect("checked above");
            Ok(Triple {
                original_adj: adjacency_input(&g.adjacency, kind)?,
                original: g,
                proximity_adj: match cfg.negatives {
                    NegativeMode::Feature => None,
                    _ => Some(adjacency_input(&n.proximity.adjacency, kind)?),
                },
                feature: match cfg.negatives {
                    NegativeMode::Proximity => None,
                    _ => Some(&n.feature),
                },
            })
        })
        .collect::<Result<_>>()?;

    let joint = cfg.momentum.is_none();
    let mut adam = Adam::new();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "contrastive", 0));
    let mut order: Vec<usize> = (0..triples.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs + 1);

    let evaluate = |query: &EncoderParams, key: &EncoderParams| -> Result<(f64, Vec<usize>)> {
        let results = triples
            .par_iter()
            .map(|t| {
                let mut tape = Tape::new();
                let bq = query.bind(&mut tape, false);
                let bk = key.bind(&mut tape, false);
                let keys = build_keys(&mut tape, &bq, &bk, t, cfg.negatives)?;
                let loss = info_nce(&mut tape, keys.q, &keys.keys, 0, cfg.tau)?;
                Ok((tape.scalar(loss), keys.keys.len()))
            })
            .collect::<Result<Vec<(f64, usize)>>>()?;
        let (losses, sizes): (Vec<f64>, Vec<usize>) = results.into_iter().unzip();
        Ok((mean(&losses), sizes))
    };
    let (initial, sizes) = evaluate(&query, &key)?;
    curve.push(initial);
    let dictionary_size = sizes.first().copied().unwrap_or_else(|| cfg.negatives.dictionary_size());
    if sizes.iter().any(|&s| s != dictionary_size) {
        return Err(CgcError::Shape("dictionary size varies across graphs".into()));
    }

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_losses = Vec::with_capacity(order.len());
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Triple<'_>> = chunk.iter().map(|&i| &triples[i]).collect();
            let (qp, kp) = (&query, &key);
            let (losses, grads) = sum_gradients(&batch, |t| {
                let mut tape = Tape::new();
                let bq = qp.bind(&mut tape, true);
                let bk = kp.bind(&mut tape, joint);
                let keys = build_keys(&mut tape, &bq, &bk, t, cfg.negatives)?;
                let loss = info_nce(&mut tape, keys.q, &keys.keys, 0, cfg.tau)?;
                tape.backward(loss)?;
                let mut vars = bq.vars().to_vec();
                if joint {
                    vars.extend_from_slice(bk.vars());
                }
                Ok((tape.scalar(loss), collect_gradients(&tape, &vars)))
            })?;
            let scale = 1.0 / batch.len() as f64;
            let mut grads = grads.into_iter();
            for p in query.params_mut() {
                p.grad = grads.next().expect("query gradient") * scale;
            }
            if joint {
                for p in key.params_mut() {
                    p.grad = grads.next().expect("key gradient") * scale;
                }
                let mut all = query.params_mut();
                all.extend(key.params_mut());
                adam.step(&mut all, cfg.lr);
            } else {
                adam.step(&mut query.params_mut(), cfg.lr);
                key.momentum_update(&query, cfg.momentum.expect("momentum mode"));
            }
            epoch_losses.extend(losses);
        }
        let m = mean(&epoch_losses);
        if !m.is_finite() {
            return Err(CgcError::Numeric(format!("non-finite InfoNCE in epoch {epoch}")));
        }
        log::debug!("contrastive epoch {epoch}: loss {m:.6}");
        curve.push(m);
    }

    Ok(ContrastiveOutput {
        query,
        key,
        loss_curve: curve,
        dictionary_size,
        graphs_used: triples.len(),
    })
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Row `i` is `g_p` applied to graph `i`.
pub fn embed_dataset(dataset: &GraphDataset, params: &EncoderParams) -> Result<Array2<f64>> {
    let rows = dataset
        .graphs
        .par_iter()
        .map(|g| params.embed(&g.adjacency, &g.features))
        .collect::<Result<Vec<_>>>()?;
    let dim = params.config.embed_dim;
    let mut out = Array2::zeros((rows.len(), dim));
    for (i, r) in rows.iter().enumerate() {
        out.row_mut(i).assign(r);
    }
    Ok(out)
}
