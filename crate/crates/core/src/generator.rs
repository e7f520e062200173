//! Counterfactual hard negative generation.
//!
//! For every graph two trainable matrices are optimized:
//!
//! * `M_a` (N x N) perturbs structure: `A' = I(sigmoid(M_a A) >= omega)`,
//!   symmetrized by OR with its transpose and with the diagonal cleared.
//! * `M_b` (N x h) masks features: `M'_b = I(sigmoid(M_b) >= gamma)`,
//!   `X~ = M'_b * X` (masked entries become exactly 0).
//!
//! The objective `L_pre = L_s + L_c` keeps the negatives close to the
//! original (`L_s = ||A - A'|| - ||M'_b||`) while pushing the classifier's
//! distribution away from the original one
//! (`L_c = -KL(p(A) || p(A')) - KL(p(A) || p(A~))`).
//!
//! The indicators are trained with straight-through estimation: hard values
//! in the forward pass, sigmoid-path gradients in the backward pass.
//!
//! Initialization note: a graph whose negatives equal the original is a
//! stationary point of `L_c` (the KL gradient vanishes at `q = p`), so the
//! matrices start close to a faithful copy, a small logit margin away from
//! the thresholds, and a little noise is added so that optimization has a
//! direction to follow.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, Param, Tape, Var, LOG_EPS};
use crate::batch::{collect_gradients, sum_gradients};
use crate::dataset::{Graph, GraphDataset};
use crate::encoder::{adjacency_input, classify, encode, prepare_adjacency, EncoderParams};
use crate::error::{CgcError, Result};
use crate::norms::{norm, NormKind};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// Threshold on `sigmoid(M_a A)`.
    pub omega: f64,
    /// Threshold on `sigmoid(M_b)`.
    pub gamma: f64,
    pub norm: NormKind,
    pub epochs: usize,
    pub lr: f64,
    /// Logit distance between the initial pre-activations nearest to a
    /// threshold and that threshold.
    pub init_margin: f64,
    /// Standard deviation of the Gaussian noise added to both matrices.
    pub init_noise: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            omega: 0.3,
            gamma: 0.3,
            norm: NormKind::Frobenius,
            epochs: 100,
            lr: 1e-3,
            init_margin: 0.02,
            init_noise: 0.01,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("omega", self.omega), ("gamma", self.gamma)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(CgcError::Config(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(CgcError::Config(format!("lr-gen must be positive, got {}", self.lr)));
        }
        if self.init_margin < 0.0 || self.init_noise < 0.0 {
            return Err(CgcError::Config("init margin and noise must be non-negative".into()));
        }
        Ok(())
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Trainable perturbation matrices for one graph.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationState {
    pub m_a: Param,
    pub m_b: Param,
    pub omega: f64,
    pub gamma: f64,
}

impl PerturbationState {
    pub fn new(graph: &Graph, m_a: Array2<f64>, m_b: Array2<f64>, omega: f64, gamma: f64) -> Result<Self> {
        let (n, h) = (graph.num_nodes(), graph.feature_dim());
        if m_a.dim() != (n, n) || m_b.dim() != (n, h) {
            return Err(CgcError::Shape(format!(
                "perturbation matrices {:?}/{:?} do not fit a graph with N={n}, h={h}",
                m_a.dim(),
                m_b.dim()
            )));
        }
        for (name, v) in [("omega", omega), ("gamma", gamma)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(CgcError::Config(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        Ok(PerturbationState {
            m_a: Param::new("m_a", m_a),
            m_b: Param::new("m_b", m_b),
            omega,
            gamma,
        })
    }

    /// Start point whose thresholded outputs reproduce the graph (up to the
    /// noise): `M_a = alpha I - beta J`, `M_b = logit(gamma) + margin`.
    ///
    /// With `J` the all-ones matrix, `(M_a A)_ij = alpha A_ij - beta d_j` where
    /// `d_j` is the degree of node `j`. `beta` puts non-edges of degree-1
    /// columns `margin` below `logit(omega)`; `alpha` puts edges of the
    /// highest-degree column `margin` above it. Columns of isolated nodes are
    /// identically zero whatever `M_a` is.
    pub fn faithful(graph: &Graph, cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let (n, h) = (graph.num_nodes(), graph.feature_dim());
        let lo = logit(cfg.omega);
        let beta = (cfg.init_margin - lo).max(0.0);
        let max_degree = (0..n).map(|j| graph.adjacency.column(j).sum()).fold(0.0, f64::max);
        let alpha = beta * max_degree + lo + cfg.init_margin;
        let noise = Normal::new(0.0, cfg.init_noise.max(0.0)).expect("finite std");
        let mut m_a = Array2::from_shape_fn((n, n), |(i, j)| if i == j { alpha - beta } else { -beta });
        let base_b = logit(cfg.gamma) + cfg.init_margin;
        let mut m_b = Array2::from_elem((n, h), base_b);
        if cfg.init_noise > 0.0 {
            m_a.mapv_inplace(|v| v + noise.sample(rng));
            m_b.mapv_inplace(|v| v + noise.sample(rng));
        }
        Self::new(graph, m_a, m_b, cfg.omega, cfg.gamma)
    }
}

/// Result of thresholding `sigmoid(M_a A)`.
#[derive(Debug, Clone)]
pub struct Proximity {
    /// Binary, symmetric, zero-diagonal perturbed adjacency `A'`.
    pub hard: Array2<f64>,
    /// `sigmoid(M_a A)`.
    pub soft: Var,
    /// `hard` forward, `soft` backward.
    pub straight: Var,
}

pub fn perturb_adjacency(tape: &mut Tape, adjacency: &Array2<f64>, m_a: Var, omega: f64) -> Result<Proximity> {
    let a = tape.constant(adjacency.clone());
    let pre = tape.matmul(m_a, a)?;
    let soft = tape.sigmoid(pre);
    let hard = threshold_binarize_symmetric(tape.value(soft), omega);
    let straight = tape.straight_through(hard.clone(), soft)?;
    Ok(Proximity { hard, soft, straight })
}

/// `I(m >= threshold)` elementwise.
pub fn threshold_binarize(m: &Array2<f64>, threshold: f64) -> Array2<f64> {
    m.mapv(|v| if v >= threshold { 1.0 } else { 0.0 })
}

/// Threshold, OR with the transpose and clear the diagonal.
pub fn threshold_binarize_symmetric(m: &Array2<f64>, threshold: f64) -> Array2<f64> {
    let b = threshold_binarize(m, threshold);
    let n = b.nrows();
    Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            0.0
        } else {
            b[[i, j]].max(b[[j, i]])
        }
    })
}

/// Result of thresholding `sigmoid(M_b)` and applying it to the features.
#[derive(Debug, Clone)]
pub struct Masking {
    /// Binary mask `M'_b`.
    pub hard: Array2<f64>,
    pub soft: Var,
    pub straight: Var,
    /// Masked features `X~`.
    pub features: Var,
}

pub fn mask_features(tape: &mut Tape, features: &Array2<f64>, m_b: Var, gamma: f64) -> Result<Masking> {
    let soft = tape.sigmoid(m_b);
    let hard = threshold_binarize(tape.value(soft), gamma);
    let straight = tape.straight_through(hard.clone(), soft)?;
    let x = tape.constant(features.clone());
    let masked = tape.hadamard(straight, x)?;
    Ok(Masking {
        hard,
        soft,
        straight,
        features: masked,
    })
}

/// `L_s = ||A - A'|| - ||M'_b||`. Without a proximity perturbation (single
/// node graphs) only the mask term remains.
pub fn similarity_loss(
    tape: &mut Tape,
    adjacency: &Array2<f64>,
    proximity: Option<&Proximity>,
    masking: &Masking,
    kind: NormKind,
) -> Result<Var> {
    let mask_norm = norm(tape, masking.straight, kind)?;
    let neg_mask = tape.neg(mask_norm);
    match proximity {
        Some(p) => {
            let a = tape.constant(adjacency.clone());
            let diff = tape.sub(a, p.straight)?;
            let d = norm(tape, diff, kind)?;
            tape.add(d, neg_mask)
        }
        None => Ok(neg_mask),
    }
}

/// `KL(p || q) = sum p_i (log p_i - log q_i)` with logs clamped at 1e-10.
pub fn kl_divergence(tape: &mut Tape, p: Var, q: Var) -> Result<Var> {
    let lp = tape.log(p);
    let lq = tape.log(q);
    let diff = tape.sub(lp, lq)?;
    let prod = tape.hadamard(p, diff)?;
    Ok(tape.sum(prod))
}

fn clamped_ln(x: f64) -> f64 {
    if x < LOG_EPS {
        LOG_EPS.ln()
    } else {
        x.ln()
    }
}

/// Plain-value version of [`kl_divergence`].
pub fn kl_value(p: &Array1<f64>, q: &Array1<f64>) -> f64 {
    p.iter()
        .zip(q.iter())
        .map(|(&pi, &qi)| pi * (clamped_ln(pi) - clamped_ln(qi)))
        .sum()
}

/// `L_c = -KL(p_orig || p_prox) - KL(p_orig || p_feat)`; the proximity term
/// is dropped when there is no proximity negative.
pub fn counterfactual_loss(tape: &mut Tape, p_orig: Var, p_prox: Option<Var>, p_feat: Var) -> Result<Var> {
    let kf = kl_divergence(tape, p_orig, p_feat)?;
    let total = match p_prox {
        Some(pp) => {
            let kp = kl_divergence(tape, p_orig, pp)?;
            tape.add(kp, kf)?
        }
        None => kf,
    };
    Ok(tape.neg(total))
}

/// The two generated negatives of one graph.
#[derive(Debug, Clone, PartialEq)]
pub struct HardNegativePair {
    /// Perturbed structure, original features.
    pub proximity: Graph,
    /// Original structure, masked features.
    pub feature: Graph,
}

/// Loss terms and perturbation size at one point of generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationSnapshot {
    pub loss_pre: f64,
    pub loss_s: f64,
    pub loss_c: f64,
    pub kl_prox: f64,
    pub kl_feat: f64,
    /// Undirected edges added or removed, `||A - A'||_F^2 / 2`.
    pub edits: usize,
    /// Fraction of feature entries masked to zero.
    pub mask_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDiagnostics {
    pub graph: usize,
    pub num_edges: usize,
    pub initial: Option<GenerationSnapshot>,
    #[serde(rename = "final")]
    pub last: Option<GenerationSnapshot>,
    /// `L_pre` before every update, then after the last one.
    pub loss_history: Vec<f64>,
    pub error: Option<String>,
}

impl GraphDiagnostics {
    /// Edits of the emitted proximity negative relative to the original edge count.
    pub fn edit_fraction(&self) -> Option<f64> {
        self.last.map(|s| s.edits as f64 / self.num_edges.max(1) as f64)
    }
}

#[derive(Debug, Clone)]
pub struct GraphGeneration {
    pub negatives: HardNegativePair,
    pub state: PerturbationState,
    pub diagnostics: GraphDiagnostics,
}

struct Forward {
    tape: Tape,
    loss: Var,
    snapshot: GenerationSnapshot,
    proximity: Option<Array2<f64>>,
    mask: Array2<f64>,
    m_a: Option<Var>,
    m_b: Var,
}

fn forward(
    graph: &Graph,
    classifier: &EncoderParams,
    p_orig: &Array1<f64>,
    state: &PerturbationState,
    kind: NormKind,
) -> Result<Forward> {
    let enc_kind = classifier.config.kind;
    let n = graph.num_nodes();
    let mut tape = Tape::new();
    let bound = classifier.bind(&mut tape, false);
    let porig = tape.constant(p_orig.clone().insert_axis(ndarray::Axis(0)));

    let m_a = (n > 1).then(|| state.m_a.bind(&mut tape));
    let m_b = state.m_b.bind(&mut tape);

    let proximity = match m_a {
        Some(ma) => Some(perturb_adjacency(&mut tape, &graph.adjacency, ma, state.omega)?),
        None => None,
    };
    let masking = mask_features(&mut tape, &graph.features, m_b, state.gamma)?;

    let x = tape.constant(graph.features.clone());
    let p_prox = match &proximity {
        Some(p) => {
            let adj = prepare_adjacency(&mut tape, p.straight, enc_kind)?;
            let e = encode(&mut tape, &bound, adj, x)?;
            Some(classify(&mut tape, &bound, e)?)
        }
        None => None,
    };
    let adj = tape.constant(adjacency_input(&graph.adjacency, enc_kind)?);
    let e = encode(&mut tape, &bound, adj, masking.features)?;
    let p_feat = classify(&mut tape, &bound, e)?;

    let ls = similarity_loss(&mut tape, &graph.adjacency, proximity.as_ref(), &masking, kind)?;
    let lc = counterfactual_loss(&mut tape, porig, p_prox, p_feat)?;
    let loss = tape.add(ls, lc)?;

    let row = |t: &Tape, v: Var| t.value(v).row(0).to_owned();
    let kl_prox = p_prox.map_or(0.0, |pp| kl_value(p_orig, &row(&tape, pp)));
    let kl_feat = kl_value(p_orig, &row(&tape, p_feat));
    let edits = proximity.as_ref().map_or(0, |p| {
        let flipped = p
            .hard
            .iter()
            .zip(graph.adjacency.iter())
            .filter(|(a, b)| a != b)
            .count();
        flipped / 2
    });
    let masked = masking.hard.iter().filter(|&&v| v == 0.0).count();
    let snapshot = GenerationSnapshot {
        loss_pre: tape.scalar(loss),
        loss_s: tape.scalar(ls),
        loss_c: tape.scalar(lc),
        kl_prox,
        kl_feat,
        edits,
        mask_ratio: masked as f64 / masking.hard.len().max(1) as f64,
    };
    Ok(Forward {
        tape,
        loss,
        snapshot,
        proximity: proximity.map(|p| p.hard),
        mask: masking.hard,
        m_a,
        m_b,
    })
}

/// Runs `cfg.epochs` Adam steps on `L_pre` for one graph and emits its negatives.
pub fn generate_for_graph(
    graph: &Graph,
    classifier: &EncoderParams,
    cfg: &GeneratorConfig,
    state: PerturbationState,
) -> Result<GraphGeneration> {
    let mut state = state;
    let p_orig = classifier.predict_proba(&graph.adjacency, &graph.features)?;
    let mut adam = Adam::new();
    let mut history = Vec::with_capacity(cfg.epochs + 1);
    let mut initial = None;

    for epoch in 0..=cfg.epochs {
        let mut fwd = forward(graph, classifier, &p_orig, &state, cfg.norm)?;
        let loss = fwd.snapshot.loss_pre;
        if !loss.is_finite() {
            return Err(CgcError::Numeric(format!("non-finite L_pre at epoch {epoch}")));
        }
        history.push(loss);
        if epoch == 0 {
            initial = Some(fwd.snapshot);
        }
        if epoch == cfg.epochs {
            let proximity = Graph {
                adjacency: fwd.proximity.unwrap_or_else(|| graph.adjacency.clone()),
                features: graph.features.clone(),
                label: graph.label,
            };
            if fwd.mask.iter().all(|&v| v == 0.0) {
                log::warn!("feature negative has every feature masked");
            }
            let feature = Graph {
                adjacency: graph.adjacency.clone(),
                features: &fwd.mask * &graph.features,
                label: graph.label,
            };
            let diagnostics = GraphDiagnostics {
                graph: 0,
                num_edges: graph.num_edges(),
                initial,
                last: Some(fwd.snapshot),
                loss_history: history,
                error: None,
            };
            return Ok(GraphGeneration {
                negatives: HardNegativePair { proximity, feature },
                state,
                diagnostics,
            });
        }
        fwd.tape.backward(fwd.loss)?;
        if let Some(ma) = fwd.m_a {
            state.m_a.accumulate(&fwd.tape, ma);
        }
        state.m_b.accumulate(&fwd.tape, fwd.m_b);
        adam.step(&mut [&mut state.m_a, &mut state.m_b], cfg.lr);
    }
    unreachable!("loop returns on its last iteration")
}

/// Negatives and diagnostics for a whole dataset. A graph whose generation
/// failed has `None` in `negatives` and its error in the diagnostics.
#[derive(Debug, Clone)]
pub struct GenerationOutput {
    pub negatives: Vec<Option<HardNegativePair>>,
    pub diagnostics: Vec<GraphDiagnostics>,
}

impl GenerationOutput {
    pub fn failures(&self) -> usize {
        self.negatives.iter().filter(|n| n.is_none()).count()
    }

    /// Mean over successful graphs of a statistic of a snapshot.
    pub fn mean_of(&self, pick: impl Fn(&GraphDiagnostics) -> Option<f64>) -> f64 {
        let vals: Vec<f64> = self.diagnostics.iter().filter_map(pick).collect();
        if vals.is_empty() {
            0.0
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    }
}

/// Generates hard negatives for every graph independently (in parallel).
/// The classifier is only read.
pub fn pretrain_generation(
    dataset: &GraphDataset,
    classifier: &EncoderParams,
    cfg: &GeneratorConfig,
    seed: u64,
) -> Result<GenerationOutput> {
    cfg.validate()?;
    let results: Vec<(Option<HardNegativePair>, GraphDiagnostics)> = dataset
        .graphs
        .par_iter()
        .enumerate()
        .map(|(i, graph)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "generation", i as u64));
            let outcome = PerturbationState::faithful(graph, cfg, &mut rng)
                .and_then(|state| generate_for_graph(graph, classifier, cfg, state));
            match outcome {
                Ok(g) => {
                    let mut d = g.diagnostics;
                    d.graph = i;
                    (Some(g.negatives), d)
                }
                Err(e) => {
                    log::error!("graph {i}: hard negative generation failed: {e}");
                    (
                        None,
                        GraphDiagnostics {
                            graph: i,
                            num_edges: graph.num_edges(),
                            initial: None,
                            last: None,
                            loss_history: Vec::new(),
                            error: Some(e.to_string()),
                        },
                    )
                }
            }
        })
        .collect();
    let (negatives, diagnostics) = results.into_iter().unzip();
    Ok(GenerationOutput {
        negatives,
        diagnostics,
    })
}

/// Supervised warm-up of the classifier `p(.)` with cross-entropy on the
/// graphs at `indices`. With `head_only` the encoder weights stay fixed and
/// only the softmax head is fitted. Returns the epoch-mean loss curve.
#[allow(clippy::too_many_arguments)]
pub fn train_classifier(
    dataset: &GraphDataset,
    indices: &[usize],
    params: &mut EncoderParams,
    head_only: bool,
    epochs: usize,
    lr: f64,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    use rand::seq::SliceRandom;

    let kind = params.config.kind;
    let inputs: Vec<(Array2<f64>, &Graph)> = indices
        .iter()
        .map(|&i| Ok((adjacency_input(&dataset.graphs[i].adjacency, kind)?, &dataset.graphs[i])))
        .collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "classifier", 0));
    let mut adam = Adam::new();
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut curve = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        let mut epoch_losses = Vec::new();
        for chunk in order.chunks(batch_size.max(1)) {
            let batch: Vec<&(Array2<f64>, &Graph)> = chunk.iter().map(|&k| &inputs[k]).collect();
            let frozen = &*params;
            let (losses, grads) = sum_gradients(&batch, |(adj, g)| {
                let mut tape = Tape::new();
                let bound = frozen.bind(&mut tape, true);
                let vars = if head_only {
                    &bound.vars()[bound.vars().len() - 1..]
                } else {
                    bound.vars()
                };
                let a = tape.constant(adj.clone());
                let x = tape.constant(g.features.clone());
                let e = encode(&mut tape, &bound, a, x)?;
                let p = classify(&mut tape, &bound, e)?;
                let pl = tape.select(p, 0, g.label)?;
                let lp = tape.log(pl);
                let loss = tape.neg(lp);
                tape.backward(loss)?;
                Ok((tape.scalar(loss), collect_gradients(&tape, vars)))
            })?;
            let scale = 1.0 / batch.len() as f64;
            let mut trained = params.params_mut();
            if head_only {
                trained.drain(..trained.len() - 1);
            }
            for (p, g) in trained.iter_mut().zip(grads) {
                p.grad = g * scale;
            }
            adam.step(&mut trained, lr);
            epoch_losses.extend(losses);
        }
        let mean = epoch_losses.iter().sum::<f64>() / epoch_losses.len().max(1) as f64;
        if !mean.is_finite() {
            return Err(CgcError::Numeric("classifier warm-up diverged".into()));
        }
        curve.push(mean);
    }
    Ok(curve)
}
