//! End-to-end runs: load, generate negatives, contrast, evaluate, write
//! artifacts.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ClassifierMode, ExperimentConfig};
use crate::contrastive::{embed_dataset, train_contrastive_from, ContrastiveOutput, NegativeMode};
use crate::dataset::{dataset_stats, parse_tudataset, write_tudataset, DatasetStats, GraphDataset};
use crate::encoder::{save_checkpoint, EncoderParams};
use crate::error::{CgcError, Result};
use crate::eval::{evaluate_with_folds, kfold_split, EvalReport};
use crate::generator::{pretrain_generation, train_classifier, GenerationOutput, GraphDiagnostics};
use crate::norms::NormKind;
use crate::seed::derive_seed;
use crate::synthetic::{synthetic_enzymes_like, SYNTHETIC_ENZYMES};

pub const METHOD_NAME: &str = "CGC";
pub const CODE_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));
const SYNTHETIC_SIZE: usize = 600;

/// Loads the configured data set: the seeded surrogate for
/// `synthetic-enzymes`, otherwise a TU-format corpus under `data_dir`.
/// Applies `subset` if set.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<GraphDataset> {
    let full = if cfg.dataset.eq_ignore_ascii_case(SYNTHETIC_ENZYMES) {
        synthetic_enzymes_like(SYNTHETIC_SIZE, 0)
    } else {
        let dir = cfg.data_dir.as_ref().ok_or_else(|| {
            CgcError::Config("data_dir: not set (pass --data-dir or set CGC_DATA_DIR)".into())
        })?;
        parse_tudataset(dir, &cfg.dataset)?
    };
    Ok(match cfg.subset {
        Some(k) if k < full.len() => take_subset(&full, k, cfg.seed),
        _ => full,
    })
}

/// Seeded random subset of `k` graphs, kept in original order.
pub fn take_subset(ds: &GraphDataset, k: usize, seed: u64) -> GraphDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "subset", 0));
    let mut idx = sample(&mut rng, ds.len(), k.min(ds.len())).into_vec();
    idx.sort_unstable();
    ds.subset(&idx)
}

/// Means over graphs whose generation succeeded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationSummary {
    pub graphs: usize,
    pub failures: usize,
    pub mean_kl_prox_initial: f64,
    pub mean_kl_prox: f64,
    pub mean_kl_feat_initial: f64,
    pub mean_kl_feat: f64,
    pub mean_edit_fraction: f64,
    pub mean_mask_ratio: f64,
}

impl GenerationSummary {
    pub fn from_output(out: &GenerationOutput) -> Self {
        GenerationSummary {
            graphs: out.diagnostics.len(),
            failures: out.failures(),
            mean_kl_prox_initial: out.mean_of(|d| d.initial.map(|s| s.kl_prox)),
            mean_kl_prox: out.mean_of(|d| d.last.map(|s| s.kl_prox)),
            mean_kl_feat_initial: out.mean_of(|d| d.initial.map(|s| s.kl_feat)),
            mean_kl_feat: out.mean_of(|d| d.last.map(|s| s.kl_feat)),
            mean_edit_fraction: out.mean_of(GraphDiagnostics::edit_fraction),
            mean_mask_ratio: out.mean_of(|d| d.last.map(|s| s.mask_ratio)),
        }
    }
}

/// Contents of `report.json`. Holds no timings or paths, so equal configs
/// give equal bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: String,
    pub dataset: String,
    pub num_graphs: usize,
    pub negatives: NegativeMode,
    pub norm: NormKind,
    pub dictionary_size: usize,
    pub generation: GenerationSummary,
    pub contrastive_loss_initial: f64,
    pub contrastive_loss_final: f64,
    pub evaluation: EvalReport,
}

impl RunReport {
    pub fn text_row(&self) -> String {
        self.evaluation.text_row(&self.method)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub code_version: String,
    pub config: ExperimentConfig,
    pub dataset_stats: DatasetStats,
    pub dictionary_size: usize,
}

/// Everything a run produced, in memory.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub manifest: Manifest,
    pub classifier_curve: Vec<f64>,
    pub generation: GenerationOutput,
    pub contrastive: ContrastiveOutput,
    pub classifier: EncoderParams,
    pub embeddings: Array2<f64>,
}

/// Loads the data set, runs the pipeline and writes artifacts if `cfg.out`
/// is set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let dataset = load_dataset(cfg)?;
    let outcome = run_on_dataset(cfg, &dataset)?;
    if let Some(dir) = &cfg.out {
        write_artifacts(dir, cfg, &dataset, &outcome)?;
    }
    Ok(outcome)
}

/// Initial `g_p` and `g_n`. With momentum `g_n` starts as a copy of `g_p`.
pub fn init_encoders(cfg: &ExperimentConfig, dataset: &GraphDataset) -> Result<(EncoderParams, EncoderParams)> {
    let enc = cfg.encoder_config();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "encoder-query", 0));
    let query = EncoderParams::init(enc, dataset.feature_dim, dataset.num_classes, &mut rng)?;
    let key = match cfg.momentum {
        Some(_) => query.clone(),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "encoder-key", 0));
            EncoderParams::init(enc, dataset.feature_dim, dataset.num_classes, &mut rng)?
        }
    };
    Ok((query, key))
}

/// The classifier `p(.)`: the softmax head on top of the initial `g_p`,
/// fitted on `train` in labeled mode and left random otherwise. Returns it
/// with its warm-up loss curve.
pub fn prepare_classifier(
    cfg: &ExperimentConfig,
    dataset: &GraphDataset,
    train: &[usize],
    query: &EncoderParams,
) -> Result<(EncoderParams, Vec<f64>)> {
    let mut classifier = query.clone();
    let curve = match cfg.classifier {
        ClassifierMode::Labeled => train_classifier(
            dataset,
            train,
            &mut classifier,
            true,
            cfg.epochs_cls,
            cfg.lr_cls,
            cfg.batch_size,
            cfg.seed,
        )?,
        ClassifierMode::Unsupervised => Vec::new(),
    };
    Ok((classifier, curve))
}

/// The pipeline on an already loaded data set; writes nothing.
pub fn run_on_dataset(cfg: &ExperimentConfig, dataset: &GraphDataset) -> Result<RunOutcome> {
    cfg.validate()?;
    let stats = dataset_stats(dataset)?;
    let labels = dataset.labels();
    let folds = kfold_split(&labels, cfg.folds, cfg.seed)?;

    let (query, key) = init_encoders(cfg, dataset)?;
    let (classifier, classifier_curve) = prepare_classifier(cfg, dataset, &folds[0].0, &query)?;

    let generation = pretrain_generation(dataset, &classifier, &cfg.generator_config(), cfg.seed)?;
    let contrastive = train_contrastive_from(
        dataset,
        &generation.negatives,
        query,
        key,
        &cfg.contrast_config(),
        cfg.seed,
    )?;
    let embeddings = embed_dataset(dataset, &contrastive.query)?;
    if embeddings.iter().any(|v| !v.is_finite()) {
        return Err(CgcError::Numeric("non-finite embedding".into()));
    }
    let evaluation = evaluate_with_folds(
        &embeddings,
        &labels,
        dataset.num_classes,
        &folds,
        cfg.seed,
        &cfg.svm_config(),
    )?;

    let report = RunReport {
        method: METHOD_NAME.to_string(),
        dataset: dataset.name.clone(),
        num_graphs: dataset.len(),
        negatives: cfg.negatives,
        norm: cfg.norm,
        dictionary_size: contrastive.dictionary_size,
        generation: GenerationSummary::from_output(&generation),
        contrastive_loss_initial: contrastive.loss_curve.first().copied().unwrap_or(0.0),
        contrastive_loss_final: contrastive.loss_curve.last().copied().unwrap_or(0.0),
        evaluation,
    };
    let manifest = Manifest {
        code_version: CODE_VERSION.to_string(),
        config: cfg.clone(),
        dataset_stats: stats,
        dictionary_size: contrastive.dictionary_size,
    };
    Ok(RunOutcome {
        report,
        manifest,
        classifier_curve,
        generation,
        contrastive,
        classifier,
        embeddings,
    })
}

fn create_file(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| CgcError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CgcError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CgcError::Numeric(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    write_text(path, &text)
}

fn write_curve(path: &Path, curve: &[f64]) -> Result<()> {
    let mut f = create_file(path)?;
    let mut body = String::from("epoch,mean_loss\n");
    for (e, v) in curve.iter().enumerate() {
        body.push_str(&format!("{e},{v}\n"));
    }
    f.write_all(body.as_bytes()).map_err(|e| CgcError::io(path, e))
}

/// Mean `L_pre` over successful graphs at each generation epoch.
pub fn generation_curve(out: &GenerationOutput) -> Vec<f64> {
    let ok: Vec<&Vec<f64>> = out
        .diagnostics
        .iter()
        .filter(|d| d.error.is_none())
        .map(|d| &d.loss_history)
        .collect();
    let len = ok.iter().map(|h| h.len()).min().unwrap_or(0);
    (0..len)
        .map(|e| ok.iter().map(|h| h[e]).sum::<f64>() / ok.len() as f64)
        .collect()
}

#[derive(Serialize)]
struct DiagnosticsFile<'a> {
    summary: GenerationSummary,
    graphs: Vec<DiagnosticRow<'a>>,
}

#[derive(Serialize)]
struct DiagnosticRow<'a> {
    graph: usize,
    edits: Option<usize>,
    mask_ratio: Option<f64>,
    kl_prox: Option<f64>,
    kl_feat: Option<f64>,
    detail: &'a GraphDiagnostics,
}

/// Writes `report.json`, `report.txt`, `loss_curve.csv`,
/// `generation_curve.csv`, `classifier_curve.csv`, `diagnostics.json`,
/// `manifest.json`, `checkpoints/` and, if enabled, `negatives/`.
pub fn write_artifacts(dir: &Path, cfg: &ExperimentConfig, dataset: &GraphDataset, run: &RunOutcome) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CgcError::io(dir, e))?;
    write_json(&dir.join("report.json"), &run.report)?;
    write_text(&dir.join("report.txt"), &format!("{}\n", run.report.text_row()))?;
    write_curve(&dir.join("loss_curve.csv"), &run.contrastive.loss_curve)?;
    write_curve(&dir.join("generation_curve.csv"), &generation_curve(&run.generation))?;
    write_curve(&dir.join("classifier_curve.csv"), &run.classifier_curve)?;
    let diagnostics = DiagnosticsFile {
        summary: run.report.generation,
        graphs: run
            .generation
            .diagnostics
            .iter()
            .map(|d| DiagnosticRow {
                graph: d.graph,
                edits: d.last.map(|s| s.edits),
                mask_ratio: d.last.map(|s| s.mask_ratio),
                kl_prox: d.last.map(|s| s.kl_prox),
                kl_feat: d.last.map(|s| s.kl_feat),
                detail: d,
            })
            .collect(),
    };
    write_json(&dir.join("diagnostics.json"), &diagnostics)?;
    write_json(&dir.join("manifest.json"), &run.manifest)?;

    let ckpt = dir.join("checkpoints");
    fs::create_dir_all(&ckpt).map_err(|e| CgcError::io(&ckpt, e))?;
    save_checkpoint(&run.contrastive.query, &ckpt.join("g_p.ckpt"))?;
    save_checkpoint(&run.contrastive.key, &ckpt.join("g_n.ckpt"))?;
    save_checkpoint(&run.classifier, &ckpt.join("classifier.ckpt"))?;

    if cfg.export_negatives {
        export_negatives(&dir.join("negatives"), dataset, &run.generation)?;
    }
    Ok(())
}

/// Writes the proximity and feature negatives as two TU-format corpora.
/// Graphs whose generation failed are left out.
pub fn export_negatives(dir: &Path, dataset: &GraphDataset, generation: &GenerationOutput) -> Result<()> {
    let pairs: Vec<_> = generation.negatives.iter().flatten().collect();
    for (sub, pick) in [("proximity", 0usize), ("feature", 1)] {
        let ds = GraphDataset {
            name: format!("{}_{sub}", dataset.name),
            graphs: pairs
                .iter()
                .map(|p| if pick == 0 { p.proximity.clone() } else { p.feature.clone() })
                .collect(),
            num_classes: dataset.num_classes,
            feature_dim: dataset.feature_dim,
        };
        let target = dir.join(sub);
        fs::create_dir_all(&target).map_err(|e| CgcError::io(&target, e))?;
        write_tudataset(&ds, &target, &ds.name)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationAxis {
    Negatives,
    Norm,
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AblationAxis::Negatives => "negatives",
            AblationAxis::Norm => "norm",
        })
    }
}

impl FromStr for AblationAxis {
    type Err = CgcError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "negatives" => Ok(AblationAxis::Negatives),
            "norm" => Ok(AblationAxis::Norm),
            other => Err(CgcError::Config(format!("axis must be negatives|norm, got '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AblationCell {
    pub axis: AblationAxis,
    pub value: String,
    pub config: ExperimentConfig,
    pub outcome: std::result::Result<RunOutcome, String>,
}

/// Configs of every cell along `axis`, in table order.
pub fn ablation_configs(base: &ExperimentConfig, axis: AblationAxis) -> Vec<(String, ExperimentConfig)> {
    let cell_out = |v: &str| base.out.as_ref().map(|o| cell_dir(o, axis, v));
    match axis {
        AblationAxis::Negatives => NegativeMode::ALL
            .iter()
            .map(|&m| {
                let mut c = base.clone();
                c.negatives = m;
                c.out = cell_out(m.as_str());
                (m.as_str().to_string(), c)
            })
            .collect(),
        AblationAxis::Norm => NormKind::ALL
            .iter()
            .map(|&k| {
                let mut c = base.clone();
                c.norm = k;
                c.out = cell_out(k.as_str());
                (k.as_str().to_string(), c)
            })
            .collect(),
    }
}

/// Runs every cell of `axis` on one data set with the shared seed; a
/// failing cell is recorded and the suite continues. Writes
/// `ablation-<axis>.csv` when `base.out` is set.
pub fn run_ablation_suite(base: &ExperimentConfig, axis: AblationAxis) -> Result<Vec<AblationCell>> {
    base.validate()?;
    let dataset = load_dataset(base)?;
    let mut cells = Vec::new();
    for (value, cfg) in ablation_configs(base, axis) {
        log::info!("ablation {axis}={value}");
        let outcome = run_on_dataset(&cfg, &dataset).and_then(|run| {
            if let Some(dir) = &cfg.out {
                write_artifacts(dir, &cfg, &dataset, &run)?;
            }
            Ok(run)
        });
        if let Err(e) = &outcome {
            log::error!("ablation cell {axis}={value} failed: {e}");
        }
        cells.push(AblationCell {
            axis,
            value,
            config: cfg,
            outcome: outcome.map_err(|e| e.to_string()),
        });
    }
    if let Some(dir) = &base.out {
        fs::create_dir_all(dir).map_err(|e| CgcError::io(dir, e))?;
        write_text(&dir.join(format!("ablation-{axis}.csv")), &ablation_csv(&cells))?;
    }
    Ok(cells)
}

pub fn ablation_csv(cells: &[AblationCell]) -> String {
    let mut s = String::from("axis,value,f1_micro,std_micro,f1_macro,std_macro,dictionary_size,status\n");
    for c in cells {
        match &c.outcome {
            Ok(run) => {
                let e = &run.report.evaluation;
                s.push_str(&format!(
                    "{},{},{},{},{},{},{},ok\n",
                    c.axis, c.value, e.mean_micro, e.std_micro, e.mean_macro, e.std_macro, run.report.dictionary_size
                ));
            }
            Err(err) => {
                s.push_str(&format!("{},{},,,,,,\"error: {}\"\n", c.axis, c.value, err.replace('"', "'")));
            }
        }
    }
    s
}

/// Output directory of an ablation cell.
pub fn cell_dir(base: &Path, axis: AblationAxis, value: &str) -> PathBuf {
    base.join(format!("{axis}-{value}"))
}
