//! Experiment configuration.
//!
//! A config is resolved in three layers: per-dataset defaults, then an
//! optional TOML file, then command-line overrides. Both override layers use
//! [`ConfigOverrides`], where every field is optional.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::contrastive::{ContrastConfig, NegativeMode};
use crate::encoder::{EncoderConfig, EncoderKind};
use crate::error::{CgcError, Result};
use crate::eval::SvmConfig;
use crate::generator::GeneratorConfig;
use crate::norms::NormKind;

/// How the classifier `p(.)` used during generation is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierMode {
    /// Head trained with cross-entropy on the first fold's training split.
    Labeled,
    /// Randomly initialized head, never trained.
    Unsupervised,
}

impl fmt::Display for ClassifierMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClassifierMode::Labeled => "labeled",
            ClassifierMode::Unsupervised => "unsupervised",
        })
    }
}

impl FromStr for ClassifierMode {
    type Err = CgcError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "labeled" | "labelled" => Ok(ClassifierMode::Labeled),
            "unsupervised" => Ok(ClassifierMode::Unsupervised),
            other => Err(CgcError::Config(format!(
                "classifier must be labeled|unsupervised, got '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: String,
    pub data_dir: Option<PathBuf>,
    /// Keep a seeded random subset of this many graphs.
    pub subset: Option<usize>,
    pub encoder: EncoderKind,
    pub layers: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub lr_gen: f64,
    pub lr_con: f64,
    pub lr_cls: f64,
    pub epochs_gen: usize,
    pub epochs_con: usize,
    pub epochs_cls: usize,
    pub batch_size: usize,
    pub omega: f64,
    pub gamma: f64,
    pub tau: f64,
    pub norm: NormKind,
    pub negatives: NegativeMode,
    pub classifier: ClassifierMode,
    pub momentum: Option<f64>,
    pub init_margin: f64,
    pub init_noise: f64,
    pub svm_lambda: f64,
    pub svm_epochs: usize,
    pub seed: u64,
    pub folds: usize,
    pub export_negatives: bool,
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Defaults for `dataset`: GIN-2 with lr 1e-3 and 100/100 epochs for
    /// ENZYMES, GCN-3 with lr 1e-4 and 80/30 epochs otherwise.
    pub fn defaults_for(dataset: &str) -> Self {
        let enzymes = dataset.eq_ignore_ascii_case("ENZYMES") || dataset.to_ascii_lowercase().contains("enzymes");
        let (encoder, layers, lr, epochs_gen, epochs_con) = if enzymes {
            (EncoderKind::Gin, 2, 1e-3, 100, 100)
        } else {
            (EncoderKind::Gcn, 3, 1e-4, 80, 30)
        };
        ExperimentConfig {
            dataset: dataset.to_string(),
            data_dir: None,
            subset: None,
            encoder,
            layers,
            hidden_dim: 32,
            embed_dim: 32,
            lr_gen: lr,
            lr_con: lr,
            lr_cls: 1e-2,
            epochs_gen,
            epochs_con,
            epochs_cls: 20,
            batch_size: 256,
            omega: 0.3,
            gamma: 0.3,
            tau: 1.0,
            norm: NormKind::Frobenius,
            negatives: NegativeMode::Both,
            classifier: ClassifierMode::Labeled,
            momentum: None,
            init_margin: 0.02,
            init_noise: 0.01,
            svm_lambda: 1e-3,
            svm_epochs: 100,
            seed: 0,
            folds: 10,
            export_negatives: false,
            out: None,
        }
    }

    /// Defaults for the dataset named in `file` or `flags` (flags win), then
    /// the file, then the flags.
    pub fn resolve(file: Option<ConfigOverrides>, flags: ConfigOverrides) -> Result<Self> {
        let file = file.unwrap_or_default();
        let dataset = flags
            .dataset
            .clone()
            .or_else(|| file.dataset.clone())
            .ok_or_else(|| CgcError::Config("dataset: no dataset given".into()))?;
        let mut cfg = Self::defaults_for(&dataset);
        file.apply(&mut cfg);
        flags.apply(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: String| Err(CgcError::Config(format!("{field}: {why}")));
        if self.dataset.is_empty() {
            return bad("dataset", "must not be empty".into());
        }
        for (field, v) in [("omega", self.omega), ("gamma", self.gamma)] {
            if !(v > 0.0 && v < 1.0) {
                return bad(field, format!("must lie in (0, 1), got {v}"));
            }
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad("tau", format!("must be positive, got {}", self.tau));
        }
        for (field, v) in [("lr_gen", self.lr_gen), ("lr_con", self.lr_con), ("lr_cls", self.lr_cls)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(field, format!("must be positive, got {v}"));
            }
        }
        if self.layers == 0 {
            return bad("layers", "must be at least 1".into());
        }
        if self.hidden_dim == 0 || self.embed_dim == 0 {
            return bad("hidden_dim", "dimensions must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1".into());
        }
        if self.folds < 2 {
            return bad("folds", format!("must be at least 2, got {}", self.folds));
        }
        if let Some(m) = self.momentum {
            if !(0.0..1.0).contains(&m) {
                return bad("momentum", format!("must lie in [0, 1), got {m}"));
            }
        }
        if !(self.init_margin >= 0.0 && self.init_noise >= 0.0) {
            return bad("init_margin", "init margin and noise must be non-negative".into());
        }
        if !(self.svm_lambda > 0.0) {
            return bad("svm_lambda", format!("must be positive, got {}", self.svm_lambda));
        }
        if self.subset == Some(0) {
            return bad("subset", "must be at least 1".into());
        }
        Ok(())
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            kind: self.encoder,
            num_layers: self.layers,
            hidden_dim: self.hidden_dim,
            embed_dim: self.embed_dim,
            activation: true,
        }
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        GeneratorConfig {
            omega: self.omega,
            gamma: self.gamma,
            norm: self.norm,
            epochs: self.epochs_gen,
            lr: self.lr_gen,
            init_margin: self.init_margin,
            init_noise: self.init_noise,
        }
    }

    pub fn contrast_config(&self) -> ContrastConfig {
        ContrastConfig {
            tau: self.tau,
            negatives: self.negatives,
            epochs: self.epochs_con,
            lr: self.lr_con,
            batch_size: self.batch_size,
            momentum: self.momentum,
        }
    }

    pub fn svm_config(&self) -> SvmConfig {
        SvmConfig {
            lambda: self.svm_lambda,
            epochs: self.svm_epochs,
        }
    }
}

/// Optional values layered over the defaults. Unknown keys in a TOML file
/// are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    pub dataset: Option<String>,
    pub data_dir: Option<PathBuf>,
    pub subset: Option<usize>,
    pub encoder: Option<EncoderKind>,
    pub layers: Option<usize>,
    pub hidden_dim: Option<usize>,
    pub embed_dim: Option<usize>,
    pub lr_gen: Option<f64>,
    pub lr_con: Option<f64>,
    pub lr_cls: Option<f64>,
    pub epochs_gen: Option<usize>,
    pub epochs_con: Option<usize>,
    pub epochs_cls: Option<usize>,
    pub batch_size: Option<usize>,
    pub omega: Option<f64>,
    pub gamma: Option<f64>,
    pub tau: Option<f64>,
    pub norm: Option<NormKind>,
    pub negatives: Option<NegativeMode>,
    pub classifier: Option<ClassifierMode>,
    pub momentum: Option<f64>,
    pub init_margin: Option<f64>,
    pub init_noise: Option<f64>,
    pub svm_lambda: Option<f64>,
    pub svm_epochs: Option<usize>,
    pub seed: Option<u64>,
    pub folds: Option<usize>,
    pub export_negatives: Option<bool>,
    pub out: Option<PathBuf>,
}

impl ConfigOverrides {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CgcError::Config(format!("config file: {}", e.message())))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CgcError::Config(format!("config file {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        macro_rules! set {
            ($($f:ident),*) => {$(
                if let Some(v) = &self.$f {
                    cfg.$f = v.clone();
                }
            )*};
        }
        set!(
            dataset, encoder, layers, hidden_dim, embed_dim, lr_gen, lr_con, lr_cls, epochs_gen, epochs_con,
            epochs_cls, batch_size, omega, gamma, tau, norm, negatives, classifier, init_margin, init_noise,
            svm_lambda, svm_epochs, seed, folds, export_negatives
        );
        if self.data_dir.is_some() {
            cfg.data_dir = self.data_dir.clone();
        }
        if self.subset.is_some() {
            cfg.subset = self.subset;
        }
        if self.momentum.is_some() {
            cfg.momentum = self.momentum;
        }
        if self.out.is_some() {
            cfg.out = self.out.clone();
        }
    }
}
