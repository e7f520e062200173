//! GCN and GIN graph encoders with a mean-pool readout and a softmax
//! classifier head.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{normalize_adjacency_value, Param, Tape, Var};
use crate::error::{CgcError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Gcn,
    Gin,
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderKind::Gcn => "gcn",
            EncoderKind::Gin => "gin",
        })
    }
}

impl FromStr for EncoderKind {
    type Err = CgcError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Ok(EncoderKind::Gcn),
            "gin" => Ok(EncoderKind::Gin),
            other => Err(CgcError::Config(format!("unknown encoder {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    /// ReLU non-linearities on; off gives a purely linear encoder.
    pub activation: bool,
}

impl EncoderConfig {
    pub fn new(kind: EncoderKind, num_layers: usize) -> Self {
        EncoderConfig {
            kind,
            num_layers,
            hidden_dim: 32,
            embed_dim: 32,
            activation: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 {
            return Err(CgcError::Config("layers must be at least 1".into()));
        }
        if self.hidden_dim == 0 || self.embed_dim == 0 {
            return Err(CgcError::Config("hidden-dim and embed-dim must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    /// `act(Â H W)`
    Gcn { weight: Param },
    /// `act(MLP((1 + eps) H + A H))` with a two-layer MLP.
    Gin { w1: Param, w2: Param, eps: Param },
}

/// Weights of one encoder plus its classifier head.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub input_dim: usize,
    pub num_classes: usize,
    pub layers: Vec<Layer>,
    pub head: Param,
}

fn glorot<R: Rng>(rng: &mut R, name: String, fan_in: usize, fan_out: usize) -> Param {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Param::new(
        name,
        Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-limit..=limit)),
    )
}

impl EncoderParams {
    pub fn init<R: Rng>(config: EncoderConfig, input_dim: usize, num_classes: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 || num_classes == 0 {
            return Err(CgcError::Shape("input_dim and num_classes must be positive".into()));
        }
        let mut layers = Vec::with_capacity(config.num_layers);
        for l in 0..config.num_layers {
            let fan_in = if l == 0 { input_dim } else { config.hidden_dim };
            let fan_out = if l + 1 == config.num_layers {
                config.embed_dim
            } else {
                config.hidden_dim
            };
            layers.push(match config.kind {
                EncoderKind::Gcn => Layer::Gcn {
                    weight: glorot(rng, format!("layer{l}.weight"), fan_in, fan_out),
                },
                EncoderKind::Gin => Layer::Gin {
                    w1: glorot(rng, format!("layer{l}.w1"), fan_in, fan_out),
                    w2: glorot(rng, format!("layer{l}.w2"), fan_out, fan_out),
                    eps: Param::new(format!("layer{l}.eps"), Array2::zeros((1, 1))),
                },
            });
        }
        let head = glorot(rng, "head".into(), config.embed_dim, num_classes);
        Ok(EncoderParams {
            config,
            input_dim,
            num_classes,
            layers,
            head,
        })
    }

    /// Encoder weights followed by the head, in a fixed order.
    pub fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Gcn { weight } => out.push(weight),
                Layer::Gin { w1, w2, eps } => out.extend([w1, w2, eps]),
            }
        }
        out.push(&self.head);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Gcn { weight } => out.push(weight),
                Layer::Gin { w1, w2, eps } => out.extend([w1, w2, eps]),
            }
        }
        out.push(&mut self.head);
        out
    }

    /// Puts every weight on `tape`, trainable or frozen.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundEncoder {
        let vars = self
            .params()
            .into_iter()
            .map(|p| if trainable { p.bind(tape) } else { p.bind_frozen(tape) })
            .collect();
        BoundEncoder {
            config: self.config,
            vars,
        }
    }

    /// Uses tape variables already holding weights of this shape, in the
    /// order of [`EncoderParams::params`].
    pub fn bind_with(&self, tape: &Tape, vars: &[Var]) -> Result<BoundEncoder> {
        let params = self.params();
        if params.len() != vars.len() {
            return Err(CgcError::Shape(format!("expected {} weight vars, got {}", params.len(), vars.len())));
        }
        for (p, &v) in params.iter().zip(vars) {
            if tape.shape(v) != p.value.dim() {
                return Err(CgcError::Shape(format!("{}: shape {:?} vs {:?}", p.name, tape.shape(v), p.value.dim())));
            }
        }
        Ok(BoundEncoder {
            config: self.config,
            vars: vars.to_vec(),
        })
    }

    /// Adds the gradients held by `tape` into the matching parameters.
    pub fn accumulate(&mut self, tape: &Tape, bound: &BoundEncoder) {
        for (p, &v) in self.params_mut().into_iter().zip(&bound.vars) {
            p.accumulate(tape, v);
        }
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Graph embedding (1 x embed_dim) computed without recording gradients.
    pub fn embed(&self, adjacency: &Array2<f64>, features: &Array2<f64>) -> Result<Array1<f64>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let adj = tape.constant(adjacency_input(adjacency, self.config.kind)?);
        let x = tape.constant(features.clone());
        let e = encode(&mut tape, &bound, adj, x)?;
        Ok(tape.value(e).row(0).to_owned())
    }

    /// Class distribution for a graph.
    pub fn predict_proba(&self, adjacency: &Array2<f64>, features: &Array2<f64>) -> Result<Array1<f64>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let adj = tape.constant(adjacency_input(adjacency, self.config.kind)?);
        let x = tape.constant(features.clone());
        let e = encode(&mut tape, &bound, adj, x)?;
        let p = classify(&mut tape, &bound, e)?;
        Ok(tape.value(p).row(0).to_owned())
    }

    /// Moves every weight toward `other`: `self = m * self + (1 - m) * other`.
    pub fn momentum_update(&mut self, other: &EncoderParams, momentum: f64) {
        for (mine, theirs) in self.params_mut().into_iter().zip(other.params()) {
            mine.value.zip_mut_with(&theirs.value, |a, &b| *a = momentum * *a + (1.0 - momentum) * b);
        }
    }
}

/// Encoder weights registered on a particular tape.
#[derive(Debug, Clone)]
pub struct BoundEncoder {
    config: EncoderConfig,
    vars: Vec<Var>,
}

impl BoundEncoder {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    fn head(&self) -> Var {
        *self.vars.last().expect("head is always bound")
    }
}

/// Propagation matrix an encoder of `kind` expects: the normalized
/// adjacency with self-loops for GCN, the raw adjacency for GIN.
pub fn adjacency_input(adjacency: &Array2<f64>, kind: EncoderKind) -> Result<Array2<f64>> {
    match kind {
        EncoderKind::Gcn => normalize_adjacency(adjacency),
        EncoderKind::Gin => {
            if adjacency.nrows() != adjacency.ncols() {
                return Err(CgcError::Shape("adjacency must be square".into()));
            }
            Ok(adjacency.clone())
        }
    }
}

/// Tape version of [`adjacency_input`], differentiable in the adjacency.
pub fn prepare_adjacency(tape: &mut Tape, adjacency: Var, kind: EncoderKind) -> Result<Var> {
    match kind {
        EncoderKind::Gcn => tape.normalize_adjacency(adjacency),
        EncoderKind::Gin => Ok(adjacency),
    }
}

/// `D^{-1/2}(A+I)D^{-1/2}` with `D` the degree matrix of `A + I`.
pub fn normalize_adjacency(adjacency: &Array2<f64>) -> Result<Array2<f64>> {
    normalize_adjacency_value(adjacency)
}

/// Runs the encoder layers and mean-pools node states into a 1 x embed_dim row.
/// `adjacency` must already be in the form returned by [`prepare_adjacency`].
pub fn encode(tape: &mut Tape, bound: &BoundEncoder, adjacency: Var, features: Var) -> Result<Var> {
    let cfg = bound.config;
    let (n, _) = tape.shape(features);
    if tape.shape(adjacency) != (n, n) {
        return Err(CgcError::Shape(format!(
            "adjacency {:?} does not match {n} nodes",
            tape.shape(adjacency)
        )));
    }
    let act = |tape: &mut Tape, v: Var| if cfg.activation { tape.relu(v) } else { v };
    let mut h = features;
    let mut vars = bound.vars.iter().copied();
    for _ in 0..cfg.num_layers {
        h = match cfg.kind {
            EncoderKind::Gcn => {
                let w = vars.next().expect("bound layer weight");
                let ah = tape.matmul(adjacency, h)?;
                let z = tape.matmul(ah, w)?;
                act(tape, z)
            }
            EncoderKind::Gin => {
                let (w1, w2, eps) = (
                    vars.next().expect("bound w1"),
                    vars.next().expect("bound w2"),
                    vars.next().expect("bound eps"),
                );
                let eh = tape.mul_scalar(h, eps)?;
                let self_term = tape.add(h, eh)?;
                let ah = tape.matmul(adjacency, h)?;
                let agg = tape.add(self_term, ah)?;
                let z1 = tape.matmul(agg, w1)?;
                let z1 = act(tape, z1);
                let z2 = tape.matmul(z1, w2)?;
                act(tape, z2)
            }
        };
    }
    tape.mean_rows(h)
}

/// Softmax class distribution (1 x C) from an embedding row.
pub fn classify(tape: &mut Tape, bound: &BoundEncoder, embedding: Var) -> Result<Var> {
    let logits = tape.matmul(embedding, bound.head())?;
    Ok(tape.softmax_row(logits))
}

const CHECKPOINT_MAGIC: &str = "cgc-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

/// Serializes parameters as a versioned text file of named matrices.
pub fn save_checkpoint(params: &EncoderParams, path: &Path) -> Result<()> {
    let c = params.config;
    let mut out = format!(
        "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\nkind {}\nlayers {}\nhidden_dim {}\nembed_dim {}\nactivation {}\ninput_dim {}\nnum_classes {}\n",
        c.kind, c.num_layers, c.hidden_dim, c.embed_dim, c.activation, params.input_dim, params.num_classes
    );
    for p in params.params() {
        out.push_str(&format!("param {} {} {}\n", p.name, p.value.nrows(), p.value.ncols()));
        for row in p.value.rows() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&cells.join(" "));
            out.push('\n');
        }
    }
    out.push_str("end\n");
    fs::write(path, out).map_err(|e| CgcError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<EncoderParams> {
    let text = fs::read_to_string(path).map_err(|e| CgcError::io(path, e))?;
    let mut lines = text.lines();
    let bad = |msg: &str| CgcError::Checkpoint(format!("{}: {msg}", path.display()));

    let header = lines.next().ok_or_else(|| bad("empty file"))?;
    if header != format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}") {
        return Err(bad(&format!("unsupported header {header:?}")));
    }
    let mut field = |key: &str| -> Result<String> {
        let line = lines.next().ok_or_else(|| bad("truncated header"))?;
        line.strip_prefix(key)
            .and_then(|rest| rest.strip_prefix(' '))
            .map(str::to_string)
            .ok_or_else(|| bad(&format!("expected {key}")))
    };
    let num = |s: String| s.parse::<usize>().map_err(|_| bad("bad integer"));
    let kind: EncoderKind = field("kind")?.parse()?;
    let num_layers = num(field("layers")?)?;
    let hidden_dim = num(field("hidden_dim")?)?;
    let embed_dim = num(field("embed_dim")?)?;
    let activation = field("activation")?.parse::<bool>().map_err(|_| bad("bad activation"))?;
    let input_dim = num(field("input_dim")?)?;
    let num_classes = num(field("num_classes")?)?;

    let config = EncoderConfig {
        kind,
        num_layers,
        hidden_dim,
        embed_dim,
        activation,
    };
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let mut params = EncoderParams::init(config, input_dim, num_classes, &mut rng)?;
    for p in params.params_mut() {
        let line = lines.next().ok_or_else(|| bad("missing parameter"))?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        let expected = [p.value.nrows().to_string(), p.value.ncols().to_string()];
        if parts.len() != 4 || parts[0] != "param" || parts[1] != p.name || parts[2..] != expected {
            return Err(bad(&format!("expected parameter {} {:?}, found {line:?}", p.name, expected)));
        }
        for i in 0..p.value.nrows() {
            let row = lines.next().ok_or_else(|| bad("truncated matrix"))?;
            let vals: Vec<f64> = row
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| bad("bad number")))
                .collect::<Result<_>>()?;
            if vals.len() != p.value.ncols() {
                return Err(bad("row length mismatch"));
            }
            for (j, v) in vals.into_iter().enumerate() {
                p.value[[i, j]] = v;
            }
        }
    }
    if lines.next() != Some("end") {
        return Err(bad("missing end marker"));
    }
    Ok(params)
}
