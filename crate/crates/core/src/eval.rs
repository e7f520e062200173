//! Linear evaluation: k-fold cross-validated one-vs-rest linear SVMs on
//! frozen embeddings, scored by F1-micro and F1-macro.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CgcError, Result};
use crate::seed::derive_seed;

/// Train/test index pairs, one per fold.
pub type Folds = Vec<(Vec<usize>, Vec<usize>)>;

/// Stratified k-fold split. Each class is shuffled and dealt round-robin
/// across folds, continuing the deal where the previous class stopped so
/// fold sizes differ by at most one. Falls back to a plain shuffled split
/// when some class has fewer than `k` members.
pub fn kfold_split(labels: &[usize], k: usize, seed: u64) -> Result<Folds> {
    let n = labels.len();
    if k < 2 || n < k {
        return Err(CgcError::Config(format!("need 2 <= folds <= samples, got folds={k}, samples={n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "folds", 0));
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let stratify = by_class.iter().all(|c| c.is_empty() || c.len() >= k);
    let mut fold_of = vec![0usize; n];
    if stratify {
        let mut next = 0;
        for members in &mut by_class {
            members.shuffle(&mut rng);
            for &i in members.iter() {
                fold_of[i] = next % k;
                next += 1;
            }
        }
    } else {
        log::warn!("a class has fewer than {k} members; using unstratified folds");
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        for (pos, &i) in all.iter().enumerate() {
            fold_of[i] = pos % k;
        }
    }
    Ok((0..k)
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| fold_of[i] == f);
            (train, test)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    /// L2 regularization strength.
    pub lambda: f64,
    pub epochs: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            lambda: 1e-3,
            epochs: 100,
        }
    }
}

/// One-vs-rest linear SVM. Row `c` of `weights` scores class `c`; the last
/// column is the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSvm {
    pub weights: Array2<f64>,
}

impl LinearSvm {
    pub fn scores(&self, x: &Array2<f64>) -> Array2<f64> {
        let d = x.ncols();
        let w = self.weights.slice(ndarray::s![.., ..d]);
        let b = self.weights.column(d);
        let mut s = x.dot(&w.t());
        s += &b.insert_axis(Axis(0));
        s
    }

    /// Highest-scoring class, lowest index on ties.
    pub fn predict(&self, x: &Array2<f64>) -> Vec<usize> {
        self.scores(x)
            .rows()
            .into_iter()
            .map(|r| {
                let mut best = 0;
                for (c, &v) in r.iter().enumerate() {
                    if v > r[best] {
                        best = c;
                    }
                }
                best
            })
            .collect()
    }
}

/// Pegasos: per-sample subgradient steps with rate `1/(lambda t)` on the
/// L2-regularized hinge loss, followed by projection onto the ball of
/// radius `1/sqrt(lambda)`. The bias is an appended constant feature.
pub fn train_linear_svm(
    x: &Array2<f64>,
    y: &[usize],
    num_classes: usize,
    cfg: &SvmConfig,
    seed: u64,
) -> Result<LinearSvm> {
    if x.nrows() != y.len() {
        return Err(CgcError::Shape(format!("{} rows but {} labels", x.nrows(), y.len())));
    }
    if !(cfg.lambda > 0.0) {
        return Err(CgcError::Config("svm lambda must be positive".into()));
    }
    let mut present = vec![false; num_classes];
    for &c in y {
        if c >= num_classes {
            return Err(CgcError::Shape(format!("label {c} out of range for {num_classes} classes")));
        }
        present[c] = true;
    }
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(CgcError::DegenerateFold { fold: 0 });
    }
    let (n, d) = x.dim();
    let mut aug = Array2::ones((n, d + 1));
    aug.slice_mut(ndarray::s![.., ..d]).assign(x);
    let radius = 1.0 / cfg.lambda.sqrt();
    let mut weights = Array2::zeros((num_classes, d + 1));
    for (c, mut w) in weights.rows_mut().into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "pegasos", c as u64));
        let mut order: Vec<usize> = (0..n).collect();
        let mut t = 0usize;
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for &i in &order {
                t += 1;
                let eta = 1.0 / (cfg.lambda * t as f64);
                let xi = aug.row(i);
                let yi = if y[i] == c { 1.0 } else { -1.0 };
                let margin = yi * w.dot(&xi);
                w *= 1.0 - eta * cfg.lambda;
                if margin < 1.0 {
                    w.scaled_add(eta * yi, &xi);
                }
                let norm = w.dot(&w).sqrt();
                if norm > radius {
                    w *= radius / norm;
                }
            }
        }
    }
    Ok(LinearSvm { weights })
}

/// `(micro, macro)` F1. Micro pools TP, FP and FN over classes; macro
/// averages per-class F1 over all `num_classes`, with 0 for a class that
/// has no true and no predicted instances.
pub fn f1_scores(y_true: &[usize], y_pred: &[usize], num_classes: usize) -> Result<(f64, f64)> {
    if y_true.len() != y_pred.len() {
        return Err(CgcError::Shape(format!(
            "{} true labels but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fneg = vec![0usize; num_classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t >= num_classes || p >= num_classes {
            return Err(CgcError::Shape(format!("label out of range for {num_classes} classes")));
        }
        if t == p {
            tp[t] += 1;
        } else {
            fp[p] += 1;
            fneg[t] += 1;
        }
    }
    let f1 = |tp: usize, fp: usize, fneg: usize| {
        let denom = tp as f64 + 0.5 * (fp + fneg) as f64;
        if denom == 0.0 {
            0.0
        } else {
            tp as f64 / denom
        }
    };
    let sum = |v: &[usize]| v.iter().sum::<usize>();
    let micro = f1(sum(&tp), sum(&fp), sum(&fneg));
    let macro_ = if num_classes == 0 {
        0.0
    } else {
        (0..num_classes).map(|c| f1(tp[c], fp[c], fneg[c])).sum::<f64>() / num_classes as f64
    };
    Ok((micro, macro_))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldScore {
    pub fold: usize,
    pub f1_micro: f64,
    pub f1_macro: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldFailure {
    pub fold: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub folds: usize,
    pub per_fold: Vec<FoldScore>,
    pub failed_folds: Vec<FoldFailure>,
    pub mean_micro: f64,
    pub std_micro: f64,
    pub mean_macro: f64,
    pub std_macro: f64,
}

/// Mean and population standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl EvalReport {
    pub fn from_folds(folds: usize, per_fold: Vec<FoldScore>, failed_folds: Vec<FoldFailure>) -> Self {
        let micro: Vec<f64> = per_fold.iter().map(|f| f.f1_micro).collect();
        let macro_: Vec<f64> = per_fold.iter().map(|f| f.f1_macro).collect();
        let (mean_micro, std_micro) = mean_std(&micro);
        let (mean_macro, std_macro) = mean_std(&macro_);
        EvalReport {
            folds,
            per_fold,
            failed_folds,
            mean_micro,
            std_micro,
            mean_macro,
            std_macro,
        }
    }

    /// `NAME  micro(std)  macro(std)` in percent with two decimals.
    pub fn text_row(&self, name: &str) -> String {
        format!(
            "{name}  {:.2}({:.2})  {:.2}({:.2})",
            100.0 * self.mean_micro,
            100.0 * self.std_micro,
            100.0 * self.mean_macro,
            100.0 * self.std_macro
        )
    }
}

/// Z-scores both splits with statistics of the training split; constant
/// columns are only centered.
pub fn standardize(train: &Array2<f64>, test: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let n = train.nrows().max(1) as f64;
    let mean = train.sum_axis(Axis(0)) / n;
    let centered = train - &mean.view().insert_axis(Axis(0));
    let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / n;
    let std = var.mapv(|v| if v > 1e-24 { v.sqrt() } else { 1.0 });
    let f = |m: &Array2<f64>| (m - &mean.view().insert_axis(Axis(0))) / std.view().insert_axis(Axis(0));
    (f(train), f(test))
}

/// Cross-validated linear evaluation of `embeddings`.
pub fn evaluate(
    embeddings: &Array2<f64>,
    labels: &[usize],
    num_classes: usize,
    k: usize,
    seed: u64,
    svm: &SvmConfig,
) -> Result<EvalReport> {
    if embeddings.nrows() != labels.len() {
        return Err(CgcError::Shape(format!(
            "{} embeddings but {} labels",
            embeddings.nrows(),
            labels.len()
        )));
    }
    let folds = kfold_split(labels, k, seed)?;
    evaluate_with_folds(embeddings, labels, num_classes, &folds, seed, svm)
}

/// As [`evaluate`] with precomputed folds.
pub fn evaluate_with_folds(
    embeddings: &Array2<f64>,
    labels: &[usize],
    num_classes: usize,
    folds: &Folds,
    seed: u64,
    svm: &SvmConfig,
) -> Result<EvalReport> {
    let outcomes: Vec<std::result::Result<FoldScore, FoldFailure>> = folds
        .par_iter()
        .enumerate()
        .map(|(f, (train, test))| {
            let run = || -> Result<FoldScore> {
                if train.is_empty() || test.is_empty() {
                    return Err(CgcError::DegenerateFold { fold: f });
                }
                let xtr = embeddings.select(Axis(0), train);
                let xte = embeddings.select(Axis(0), test);
                let (xtr, xte) = standardize(&xtr, &xte);
                let ytr: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
                let yte: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
                let model = train_linear_svm(&xtr, &ytr, num_classes, svm, derive_seed(seed, "svm", f as u64))
                    .map_err(|e| match e {
                        CgcError::DegenerateFold { .. } => CgcError::DegenerateFold { fold: f },
                        other => other,
                    })?;
                let (micro, macro_) = f1_scores(&yte, &model.predict(&xte), num_classes)?;
                Ok(FoldScore {
                    fold: f,
                    f1_micro: micro,
                    f1_macro: macro_,
                })
            };
            run().map_err(|e| FoldFailure {
                fold: f,
                error: e.to_string(),
            })
        })
        .collect();
    let mut scores = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(s) => scores.push(s),
            Err(e) => {
                log::warn!("fold {} failed: {}", e.fold, e.error);
                failures.push(e)
            }
        }
    }
    if scores.is_empty() {
        return Err(CgcError::DegenerateFold {
            fold: failures.first().map_or(0, |f| f.fold),
        });
    }
    Ok(EvalReport::from_folds(folds.len(), scores, failures))
}
