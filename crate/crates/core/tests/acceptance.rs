//! Acceptance checks, one line per criterion.
//!
//! Criteria that need the TU benchmark corpora read them from
//! `CGC_DATA_DIR`. Without the data they report BLOCKED and, where it is
//! meaningful, also run the same protocol on the seeded synthetic
//! surrogate so the code path is still exercised.

use std::path::{Path, PathBuf};
use std::time::Instant;

use cgc_core::autodiff::{Tape, Var};
use cgc_core::config::ExperimentConfig;
use cgc_core::contrastive::info_nce;
use cgc_core::dataset::{dataset_stats, is_binary_symmetric_hollow, parse_tudataset, PUBLISHED_STATS};
use cgc_core::encoder::{adjacency_input, classify, encode, prepare_adjacency, EncoderConfig, EncoderKind, EncoderParams};
use cgc_core::eval::kfold_split;
use cgc_core::experiment::{
    ablation_configs, cell_dir, init_encoders, load_dataset, prepare_classifier, run_ablation_suite, run_experiment,
    AblationAxis, GenerationSummary,
};
use cgc_core::generator::{counterfactual_loss, pretrain_generation, similarity_loss, Masking, Proximity};
use cgc_core::norms::{norm, norm_value, spectral_norm_power_iteration, NormKind};
use cgc_core::synthetic::SYNTHETIC_ENZYMES;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Status {
    Pass(String),
    Fail(String),
    Blocked(String),
}

fn verdict(ok: bool, detail: String) -> Status {
    if ok {
        Status::Pass(detail)
    } else {
        Status::Fail(detail)
    }
}

fn data_dir() -> Option<PathBuf> {
    std::env::var_os("CGC_DATA_DIR").map(PathBuf::from)
}

fn has_dataset(dir: &Path, name: &str) -> bool {
    let flat = dir.join(format!("{name}_A.txt"));
    let nested = dir.join(name).join(format!("{name}_A.txt"));
    flat.exists() || nested.exists()
}

// ---------------------------------------------------------------- gradients

const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;
const FD_SEEDS: u64 = 20;

/// Builds a scalar loss from the inputs bound on the tape.
type Builder<'a> = dyn Fn(&mut Tape, &[Var]) -> Var + 'a;

fn eval_scalar(inputs: &[Array2<f64>], f: &Builder<'_>) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.var(x.clone())).collect();
    let l = f(&mut tape, &vars);
    tape.scalar(l)
}

/// Worst per-input relative error `|g - g_fd| / max(|g|, |g_fd|)` between
/// tape and central-difference gradients. Inputs whose two gradients are
/// both below 1e-7 in norm count as agreeing.
fn gradient_error(inputs: &[Array2<f64>], f: &Builder<'_>) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.var(x.clone())).collect();
    let l = f(&mut tape, &vars);
    tape.backward(l).unwrap();
    let mut worst: f64 = 0.0;
    for (k, x) in inputs.iter().enumerate() {
        let analytic = tape
            .grad(vars[k])
            .cloned()
            .unwrap_or_else(|| Array2::zeros(x.raw_dim()));
        let mut numeric = Array2::zeros(x.raw_dim());
        for idx in 0..x.len() {
            let (r, c) = (idx / x.ncols(), idx % x.ncols());
            let mut plus = inputs.to_vec();
            plus[k][[r, c]] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k][[r, c]] -= FD_STEP;
            numeric[[r, c]] = (eval_scalar(&plus, f) - eval_scalar(&minus, f)) / (2.0 * FD_STEP);
        }
        let diff = (&analytic - &numeric).mapv(|v| v * v).sum().sqrt();
        let scale = analytic
            .mapv(|v| v * v)
            .sum()
            .sqrt()
            .max(numeric.mapv(|v| v * v).sum().sqrt());
        if scale > 1e-7 {
            worst = worst.max(diff / scale);
        }
    }
    worst
}

fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| rng.random_range(lo..hi))
}

fn rand_graph(rng: &mut ChaCha8Rng, n: usize) -> Array2<f64> {
    let mut a = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < 0.5 || j == i + 1 {
                a[[i, j]] = 1.0;
                a[[j, i]] = 1.0;
            }
        }
    }
    a
}

/// Reduces a matrix to a scalar with fixed random weights so every entry's
/// gradient differs.
fn weigh(tape: &mut Tape, v: Var, w: &Array2<f64>) -> Var {
    let wv = tape.constant(w.clone());
    let p = tape.hadamard(v, wv).unwrap();
    tape.sum(p)
}

fn small_params(kind: EncoderKind, h: usize, c: usize, rng: &mut ChaCha8Rng) -> EncoderParams {
    let cfg = EncoderConfig {
        kind,
        num_layers: 2,
        hidden_dim: 5,
        embed_dim: 4,
        activation: true,
    };
    let mut p = EncoderParams::init(cfg, h, c, rng).unwrap();
    // A nonzero GIN epsilon exercises that path as well.
    for q in p.params_mut() {
        if q.name.contains("eps") {
            q.value.fill(0.3);
        }
    }
    p
}

fn bind_as(tape: &mut Tape, base: &EncoderParams, vars: &[Var]) -> cgc_core::encoder::BoundEncoder {
    base.bind_with(tape, vars).unwrap()
}

fn criterion_1() -> Status {
    let mut worst: Vec<(String, f64)> = Vec::new();
    let mut record = |name: &str, e: f64| match worst.iter_mut().find(|(n, _)| n == name) {
        Some((_, w)) => *w = w.max(e),
        None => worst.push((name.to_string(), e)),
    };
    let mut st_ok = true;

    for seed in 0..FD_SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let r = rng.random_range(2..=6);
        let c = rng.random_range(2..=6);
        let k = rng.random_range(2..=6);
        let a = rand_matrix(&mut rng, r, c, -2.0, 2.0);
        let b = rand_matrix(&mut rng, r, c, -2.0, 2.0);
        let m = rand_matrix(&mut rng, c, k, -2.0, 2.0);
        let w_rc = rand_matrix(&mut rng, r, c, -1.0, 1.0);
        let w_rk = rand_matrix(&mut rng, r, k, -1.0, 1.0);
        let w_row = rand_matrix(&mut rng, 1, c, -1.0, 1.0);
        let pos = rand_matrix(&mut rng, r, c, 0.1, 3.0);
        let sq = rand_matrix(&mut rng, r, r, 0.05, 1.0);
        let w_sq = rand_matrix(&mut rng, r, r, -1.0, 1.0);
        let s = rand_matrix(&mut rng, 1, 1, -2.0, 2.0);
        let row_a = rand_matrix(&mut rng, 1, c, -2.0, 2.0);
        let row_b = rand_matrix(&mut rng, 1, c, -2.0, 2.0);
        let w_cat = rand_matrix(&mut rng, r, 2 * c, -1.0, 1.0);

        let ops: Vec<(&str, Vec<Array2<f64>>, Box<Builder<'_>>)> = vec![
            ("matmul", vec![a.clone(), m.clone()], Box::new(|t: &mut Tape, v: &[Var]| {
                let o = t.matmul(v[0], v[1]).unwrap();
                weigh(t, o, &w_rk)
            })),
            ("add", vec![a.clone(), b.clone()], Box::new(|t: &mut Tape, v: &[Var]| {
                let o = t.add(v[0], v[1]).unwrap();
                weigh(t, o, &w_rc)
            })),
            ("sub", vec![a.clone(), b.clone()], Box::new(|t: &mut Tape, v: &[Var]| {
                let o = t.sub(v[0], v[1]).unwrap();
                weigh(t, o, &w_rc)
            })),
            ("hadamard", vec![a.clone(), b.clone()], Box::new(|t: &mut Tape, v: &[Var]| {
                let o = t.hadamard(v[0], v[1]).unwrap();
                weigh(t, o, &w_rc)
            })),
            ("scale", vec![a.clone()], Box::new(|t: &mut Tape, v: &[Var]| {
                let o = t.scale(v[0], -1.7);
                weigh(t, o, &w_rc)
            })),
            ("neg", vec![a.clone()], Box::new(|t: &mut Tape, v: &[Var]| {
                let o = t.neg(v[0]);
                weigh(t, o, &w_rc)
            })),
            ("mul_scalar", vec![a.clone(), s.clone()], Box::new(|t: &mut Tape, v: &[Var]| {
                let o = t.mul_scalar(v[0], v[1]).unwrap();
                weigh(t, o, &w_rc)
            })),
            ("sigmoid", vec![a.clone()], Box::new(|t: &mut Tape, v: &[Var]| {
                let o = t.sigmoid(v[0]);
                weigh(t, o, &w_rc)
            })),
            ("relu", vec![a.clone()], Box::new(|t: &mut Tape, v: &[Var]| {
                let o = t.relu(v[0]);
                weigh(t, o, &w_rc)
            })),
            ("log", vec![pos.clone()], Box::new(|t: &mut Tape, v: &[Var]| {
                let o = t.log(v[0]);
                weigh(t, o, &w_rc)
            })),
            ("exp", vec![a.clone()], Box::new(|t: &mut Tape, v: &[Var]| {
                let o = t.exp(v[0]);
                weigh(t, o, &w_rc)
            })),
            ("sum", vec![a.clone()], Box::new(|t: &mut Tape, v: &[Var]| {
                let sq = t.hadamard(v[0], v[0]).unwrap();
                t.sum(sq)
            })),
            ("mean_rows", vec![a.clone()], Box::new(|t: &mut Tape, v: &[Var]| {
                let o = t.mean_rows(v[0]).unwrap();
                weigh(t, o, &w_row)
            })),
            ("softmax_row", vec![row_a.clone()], Box::new(|t: &mut Tape, v: &[Var]| {
                let o = t.softmax_row(v[0]);
                weigh(t, o, &w_row)
            })),
            ("cosine", vec![row_a.clone(), row_b.clone()], Box::new(|t: &mut Tape, v: &[Var]| {
                t.cosine(v[0], v[1]).unwrap()
            })),
            ("concat_cols", vec![a.clone(), b.clone()], Box::new(|t: &mut Tape, v: &[Var]| {
                let o = t.concat_cols(&[v[0], v[1]]).unwrap();
                weigh(t, o, &w_cat)
            })),
            ("select", vec![a.clone()], Box::new(|t: &mut Tape, v: &[Var]| {
                let e = t.exp(v[0]);
                t.select(e, 1, 1).unwrap()
            })),
            ("normalize_adjacency", vec![sq.clone()], Box::new(|t: &mut Tape, v: &[Var]| {
                let o = t.normalize_adjacency(v[0]).unwrap();
                weigh(t, o, &w_sq)
            })),
        ];
        for (name, inputs, f) in &ops {
            record(name, gradient_error(inputs, f.as_ref()));
        }
        for kind in NormKind::ALL {
            let f = move |t: &mut Tape, v: &[Var]| norm(t, v[0], kind).unwrap();
            record(&format!("norm_{kind}"), gradient_error(std::slice::from_ref(&a), &f));
        }

        // Straight-through: backward must equal the soft path's backward.
        let mut t1 = Tape::new();
        let x1 = t1.var(a.clone());
        let s1 = t1.sigmoid(x1);
        let hard = s1_hard(t1.value(s1));
        let st = t1.straight_through(hard, s1).unwrap();
        let l1 = weigh(&mut t1, st, &w_rc);
        t1.backward(l1).unwrap();
        let mut t2 = Tape::new();
        let x2 = t2.var(a.clone());
        let s2 = t2.sigmoid(x2);
        let l2 = weigh(&mut t2, s2, &w_rc);
        t2.backward(l2).unwrap();
        st_ok &= t1.grad(x1) == t2.grad(x2);

        // Composite losses on a small graph with relaxed indicators, where
        // the forward pass uses the soft values so the loss is smooth in
        // the perturbation matrices.
        let n = rng.random_range(3..=6);
        let h = rng.random_range(2..=6);
        let classes = 3;
        let adj = rand_graph(&mut rng, n);
        let x = rand_matrix(&mut rng, n, h, -1.0, 1.0);
        let m_a = rand_matrix(&mut rng, n, n, -1.5, 1.5);
        let m_b = rand_matrix(&mut rng, n, h, -1.5, 1.5);
        for kind in [EncoderKind::Gcn, EncoderKind::Gin] {
            let base = small_params(kind, h, classes, &mut rng);
            let p_orig = base.predict_proba(&adj, &x).unwrap().insert_axis(ndarray::Axis(0));
            let weights: Vec<Array2<f64>> = base.params().iter().map(|p| p.value.clone()).collect();
            let nw = weights.len();

            let relaxed = |t: &mut Tape, ma: Var, mb: Var| -> (Proximity, Masking) {
                let av = t.constant(adj.clone());
                let pre = t.matmul(ma, av).unwrap();
                let soft = t.sigmoid(pre);
                let sb = t.sigmoid(mb);
                let xv = t.constant(x.clone());
                let xt = t.hadamard(sb, xv).unwrap();
                (
                    Proximity {
                        hard: Array2::zeros((n, n)),
                        soft,
                        straight: soft,
                    },
                    Masking {
                        hard: Array2::zeros((n, h)),
                        soft: sb,
                        straight: sb,
                        features: xt,
                    },
                )
            };
            let l_c = |t: &mut Tape, v: &[Var], p: &Proximity, m: &Masking| -> Var {
                let bound = bind_as(t, &base, &v[2..2 + nw]);
                let xv = t.constant(x.clone());
                let pa = prepare_adjacency(t, p.straight, kind).unwrap();
                let e1 = encode(t, &bound, pa, xv).unwrap();
                let pp = classify(t, &bound, e1).unwrap();
                let a_in = t.constant(adjacency_input(&adj, kind).unwrap());
                let e2 = encode(t, &bound, a_in, m.features).unwrap();
                let pf = classify(t, &bound, e2).unwrap();
                let po = t.constant(p_orig.clone());
                counterfactual_loss(t, po, Some(pp), pf).unwrap()
            };
            let mut inputs = vec![m_a.clone(), m_b.clone()];
            inputs.extend(weights.iter().cloned());

            for nk in NormKind::ALL {
                let f = |t: &mut Tape, v: &[Var]| {
                    let (p, m) = relaxed(t, v[0], v[1]);
                    similarity_loss(t, &adj, Some(&p), &m, nk).unwrap()
                };
                record(&format!("L_s[{nk}]"), gradient_error(&inputs[..2], &f));
            }
            let f = |t: &mut Tape, v: &[Var]| {
                let (p, m) = relaxed(t, v[0], v[1]);
                l_c(t, v, &p, &m)
            };
            record(&format!("L_c[{kind}]"), gradient_error(&inputs, &f));
            let f = |t: &mut Tape, v: &[Var]| {
                let (p, m) = relaxed(t, v[0], v[1]);
                let ls = similarity_loss(t, &adj, Some(&p), &m, NormKind::Frobenius).unwrap();
                let lc = l_c(t, v, &p, &m);
                t.add(ls, lc).unwrap()
            };
            record(&format!("L_pre[{kind}]"), gradient_error(&inputs, &f));

            // InfoNCE through both encoders with fixed negatives.
            let key_base = small_params(kind, h, classes, &mut rng);
            let key_w: Vec<Array2<f64>> = key_base.params().iter().map(|p| p.value.clone()).collect();
            let adj_neg = rand_graph(&mut rng, n);
            let x_neg = &x * &rand_matrix(&mut rng, n, h, 0.0, 1.0).mapv(|v| if v < 0.3 { 0.0 } else { 1.0 });
            let mut cin = weights.clone();
            cin.extend(key_w.iter().cloned());
            let f = |t: &mut Tape, v: &[Var]| {
                let bq = bind_as(t, &base, &v[..nw]);
                let bk = bind_as(t, &key_base, &v[nw..]);
                let a_in = t.constant(adjacency_input(&adj, kind).unwrap());
                let n_in = t.constant(adjacency_input(&adj_neg, kind).unwrap());
                let xv = t.constant(x.clone());
                let xn = t.constant(x_neg.clone());
                let q = encode(t, &bq, a_in, xv).unwrap();
                let k0 = encode(t, &bk, a_in, xv).unwrap();
                let k1 = encode(t, &bk, n_in, xv).unwrap();
                let k2 = encode(t, &bk, a_in, xn).unwrap();
                info_nce(t, q, &[k0, k1, k2], 0, 0.7).unwrap()
            };
            record(&format!("L_contra[{kind}]"), gradient_error(&cin, &f));
        }
    }

    let failing: Vec<String> = worst
        .iter()
        .filter(|(_, e)| !(*e <= FD_TOL))
        .map(|(n, e)| format!("{n}={e:.2e}"))
        .collect();
    let max = worst.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    let detail = format!(
        "{} checks x {FD_SEEDS} seeds, worst rel err {max:.2e} (tol {FD_TOL:.0e}); straight-through == soft path: {st_ok}{}",
        worst.len(),
        if failing.is_empty() { String::new() } else { format!("; failing: {}", failing.join(", ")) }
    );
    verdict(failing.is_empty() && st_ok, detail)
}

fn s1_hard(m: &Array2<f64>) -> Array2<f64> {
    m.mapv(|v| if v >= 0.5 { 1.0 } else { 0.0 })
}

// ------------------------------------------------------------------- norms

fn criterion_2() -> Status {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let m = rand_matrix(&mut rng, 5, 5, -3.0, 3.0);
        let dm = nalgebra::DMatrix::from_fn(5, 5, |i, j| m[[i, j]]);
        let sv = dm.clone().svd(false, false).singular_values;
        let one = (0..5).map(|j| (0..5).map(|i| m[[i, j]].abs()).sum::<f64>()).fold(0.0, f64::max);
        let inf = (0..5).map(|i| (0..5).map(|j| m[[i, j]].abs()).sum::<f64>()).fold(0.0, f64::max);
        let fro = m.iter().map(|v| v * v).sum::<f64>().sqrt();
        let two = sv.iter().cloned().fold(0.0, f64::max);
        let nuc: f64 = sv.iter().sum();
        for (kind, oracle) in [
            (NormKind::One, one),
            (NormKind::Two, two),
            (NormKind::Inf, inf),
            (NormKind::Nuclear, nuc),
            (NormKind::Frobenius, fro),
        ] {
            let v = norm_value(&m, kind).unwrap();
            worst = worst.max((v - oracle).abs() / oracle);
        }
        let pi = spectral_norm_power_iteration(&m, 1000, 1e-14);
        worst = worst.max((pi - two).abs() / two);
    }
    verdict(
        worst <= 1e-6,
        format!("100 random 5x5 matrices, 5 norms + power iteration vs nalgebra SVD and direct sums, worst rel err {worst:.2e} (tol 1e-6)"),
    )
}

// ------------------------------------------------------------------ parser

fn criterion_3() -> Status {
    let Some(dir) = data_dir() else {
        return Status::Blocked("CGC_DATA_DIR not set; TU corpora unavailable, parser statistics not verified".into());
    };
    let mut parts = Vec::new();
    let mut missing = Vec::new();
    let mut ok = true;
    for p in PUBLISHED_STATS.iter() {
        if !has_dataset(&dir, p.name) {
            missing.push(p.name);
            continue;
        }
        match parse_tudataset(&dir, p.name).and_then(|ds| dataset_stats(&ds)) {
            Ok(s) => {
                let same = s.num_graphs == p.num_graphs
                    && format!("{:.2}", s.avg_nodes) == format!("{:.2}", p.avg_nodes)
                    && format!("{:.2}", s.avg_edges) == format!("{:.2}", p.avg_edges)
                    && s.feature_dim == p.feature_dim
                    && s.num_classes == p.num_classes;
                ok &= same;
                parts.push(format!(
                    "{} {}/{:.2}/{:.2}/{}/{} {}",
                    p.name,
                    s.num_graphs,
                    s.avg_nodes,
                    s.avg_edges,
                    s.feature_dim,
                    s.num_classes,
                    if same { "ok" } else { "MISMATCH" }
                ));
            }
            Err(e) => {
                ok = false;
                parts.push(format!("{}: {e}", p.name));
            }
        }
    }
    if !missing.is_empty() && parts.is_empty() {
        return Status::Blocked(format!("no corpora found under {} (missing {})", dir.display(), missing.join(", ")));
    }
    let detail = format!(
        "{}{}",
        parts.join("; "),
        if missing.is_empty() { String::new() } else { format!("; missing: {}", missing.join(", ")) }
    );
    if !ok {
        Status::Fail(detail)
    } else if !missing.is_empty() {
        Status::Blocked(detail)
    } else {
        Status::Pass(detail)
    }
}

// -------------------------------------------------------------- generation

struct GenerationCheck {
    summary: GenerationSummary,
    binary_symmetric: bool,
    ok: bool,
}

fn generation_check(dataset_name: &str) -> Result<GenerationCheck, String> {
    let mut cfg = ExperimentConfig::defaults_for("ENZYMES");
    cfg.dataset = dataset_name.to_string();
    cfg.data_dir = data_dir();
    cfg.subset = Some(60);
    cfg.epochs_gen = 20;
    let ds = load_dataset(&cfg).map_err(|e| e.to_string())?;
    let folds = kfold_split(&ds.labels(), cfg.folds, cfg.seed).map_err(|e| e.to_string())?;
    let (query, _) = init_encoders(&cfg, &ds).map_err(|e| e.to_string())?;
    let (classifier, _) = prepare_classifier(&cfg, &ds, &folds[0].0, &query).map_err(|e| e.to_string())?;
    let out = pretrain_generation(&ds, &classifier, &cfg.generator_config(), cfg.seed).map_err(|e| e.to_string())?;
    let mut binary_symmetric = out.failures() == 0;
    for (g, neg) in ds.graphs.iter().zip(&out.negatives) {
        let Some(neg) = neg else { continue };
        binary_symmetric &= is_binary_symmetric_hollow(&neg.proximity.adjacency);
        binary_symmetric &= is_binary_symmetric_hollow(&neg.feature.adjacency);
        binary_symmetric &= neg
            .feature
            .features
            .iter()
            .zip(g.features.iter())
            .all(|(a, b)| *a == 0.0 || a == b);
    }
    let summary = GenerationSummary::from_output(&out);
    let ok = summary.mean_kl_prox > summary.mean_kl_prox_initial && summary.mean_edit_fraction < 0.30 && binary_symmetric;
    Ok(GenerationCheck {
        summary,
        binary_symmetric,
        ok,
    })
}

fn describe(c: &GenerationCheck) -> String {
    let s = &c.summary;
    format!(
        "(a) mean KL_prox {:.3e} -> {:.3e}, (b) edit fraction {:.2}%, (c) binary/symmetric {}",
        s.mean_kl_prox_initial,
        s.mean_kl_prox,
        100.0 * s.mean_edit_fraction,
        c.binary_symmetric
    )
}

fn criterion_4() -> Status {
    if data_dir().is_some_and(|d| has_dataset(&d, "ENZYMES")) {
        return match generation_check("ENZYMES") {
            Ok(c) => verdict(c.ok, format!("ENZYMES 60-graph subset: {}", describe(&c))),
            Err(e) => Status::Fail(format!("ENZYMES: {e}")),
        };
    }
    match generation_check(SYNTHETIC_ENZYMES) {
        Ok(c) if c.ok => Status::Blocked(format!(
            "ENZYMES unavailable; synthetic surrogate passes: {}",
            describe(&c)
        )),
        Ok(c) => Status::Fail(format!("ENZYMES unavailable; synthetic surrogate FAILS: {}", describe(&c))),
        Err(e) => Status::Fail(format!("surrogate run failed: {e}")),
    }
}

// ----------------------------------------------------------------- InfoNCE

fn criterion_5() -> Status {
    let loss = |sims: &[f64]| -> f64 {
        // Unit query (1, 0) against keys at the requested cosines.
        let mut t = Tape::new();
        let q = t.var(Array2::from_shape_vec((1, 2), vec![1.0, 0.0]).unwrap());
        let keys: Vec<Var> = sims
            .iter()
            .map(|&s| t.var(Array2::from_shape_vec((1, 2), vec![s, (1.0 - s * s).max(0.0).sqrt()]).unwrap()))
            .collect();
        let l = info_nce(&mut t, q, &keys, 0, 1.0).unwrap();
        t.scalar(l)
    };
    let l3 = loss(&[0.4, 0.4, 0.4]);
    let l2 = loss(&[-0.2, -0.2]);
    let lh = loss(&[1.0, -1.0, -1.0]);
    let ok = (l3 - 3f64.ln()).abs() <= 1e-9 && (l2 - 2f64.ln()).abs() <= 1e-9 && (lh - 0.2395).abs() <= 1e-3;
    verdict(
        ok,
        format!("ln3 err {:.1e}, ln2 err {:.1e}, hard case {lh:.6} vs 0.2395", (l3 - 3f64.ln()).abs(), (l2 - 2f64.ln()).abs()),
    )
}

// -------------------------------------------------------------- end to end

fn criterion_6() -> Status {
    let real = data_dir().filter(|d| has_dataset(d, "ENZYMES"));
    let name = if real.is_some() { "ENZYMES" } else { SYNTHETIC_ENZYMES };
    let mut cfg = ExperimentConfig::defaults_for("ENZYMES");
    cfg.dataset = name.to_string();
    cfg.data_dir = real;
    let run = match run_experiment(&cfg) {
        Ok(r) => r,
        Err(e) => return Status::Fail(format!("{name}: {e}")),
    };
    let micro = run.report.evaluation.mean_micro;
    let row = run.report.text_row();
    if name == "ENZYMES" {
        verdict(micro >= 0.30, format!("ENZYMES defaults: {row} (need micro >= 30.00; reference 47.50(6.25))"))
    } else if micro >= 0.30 {
        Status::Blocked(format!("ENZYMES unavailable; synthetic surrogate with ENZYMES defaults: {row}"))
    } else {
        Status::Fail(format!("ENZYMES unavailable; synthetic surrogate below bar: {row}"))
    }
}

// --------------------------------------------------------------- ablations

fn small_config(out: Option<PathBuf>) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::defaults_for("ENZYMES");
    cfg.dataset = SYNTHETIC_ENZYMES.into();
    cfg.subset = Some(60);
    cfg.epochs_gen = 5;
    cfg.epochs_con = 3;
    cfg.epochs_cls = 5;
    cfg.folds = 5;
    cfg.out = out;
    cfg
}

fn json_leaves(v: &serde_json::Value, prefix: String, out: &mut Vec<(String, serde_json::Value)>) {
    match v {
        serde_json::Value::Object(m) => {
            for (k, x) in m {
                json_leaves(x, format!("{prefix}/{k}"), out);
            }
        }
        other => out.push((prefix, other.clone())),
    }
}

fn manifest_diff(a: &Path, b: &Path) -> Vec<String> {
    let read = |p: &Path| -> serde_json::Value {
        serde_json::from_str(&std::fs::read_to_string(p.join("manifest.json")).unwrap()).unwrap()
    };
    let (mut la, mut lb) = (Vec::new(), Vec::new());
    json_leaves(&read(a), String::new(), &mut la);
    json_leaves(&read(b), String::new(), &mut lb);
    let mut keys: Vec<String> = la.iter().chain(&lb).map(|(k, _)| k.clone()).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .filter(|k| la.iter().find(|(x, _)| x == k).map(|p| &p.1) != lb.iter().find(|(x, _)| x == k).map(|p| &p.1))
        .collect()
}

fn criterion_7() -> Status {
    let dir = tempfile::tempdir().unwrap();
    let base = small_config(Some(dir.path().to_path_buf()));
    let neg = match run_ablation_suite(&base, AblationAxis::Negatives) {
        Ok(c) => c,
        Err(e) => return Status::Fail(format!("negatives suite: {e}")),
    };
    let sizes: Vec<usize> = neg
        .iter()
        .map(|c| c.outcome.as_ref().map(|r| r.report.dictionary_size).unwrap_or(0))
        .collect();
    let mut reports: Vec<String> = neg
        .iter()
        .filter_map(|c| c.outcome.as_ref().ok())
        .map(|r| serde_json::to_string(&r.report).unwrap())
        .collect();
    reports.sort();
    reports.dedup();
    let distinct = reports.len() == 3;

    let norms = match run_ablation_suite(&base, AblationAxis::Norm) {
        Ok(c) => c,
        Err(e) => return Status::Fail(format!("norm suite: {e}")),
    };
    let all_ok = norms.iter().all(|c| c.outcome.is_ok());
    let cells = ablation_configs(&base, AblationAxis::Norm);
    let reference = cell_dir(dir.path(), AblationAxis::Norm, &cells[0].0);
    let mut diffs_ok = all_ok;
    let mut diff_keys = Vec::new();
    for (value, _) in cells.iter().skip(1) {
        let d = manifest_diff(&reference, &cell_dir(dir.path(), AblationAxis::Norm, value));
        diffs_ok &= d == vec!["/config/norm".to_string()];
        diff_keys.push(format!("{value}: {}", d.join(",")));
    }
    let order: Vec<&str> = cells.iter().map(|(v, _)| v.as_str()).collect();
    verdict(
        sizes == vec![2, 2, 3] && distinct && diffs_ok,
        format!(
            "negatives dictionary sizes {sizes:?}, distinct runs {distinct}; norm cells {order:?} differ from '{}' only in [{}]",
            cells[0].0,
            diff_keys.join("; ")
        ),
    )
}

// ------------------------------------------------------------- determinism

fn criterion_8() -> Status {
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    for d in [&d1, &d2] {
        if let Err(e) = run_experiment(&small_config(Some(d.path().to_path_buf()))) {
            return Status::Fail(format!("run failed: {e}"));
        }
    }
    let a = std::fs::read(d1.path().join("report.json")).unwrap();
    let b = std::fs::read(d2.path().join("report.json")).unwrap();
    verdict(a == b, format!("two runs, report.json {} bytes, identical: {}", a.len(), a == b))
}

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(&str, &str, fn() -> Status); 8] = [
        ("1", "gradient correctness", criterion_1),
        ("2", "norm oracle equivalence", criterion_2),
        ("3", "parser fidelity", criterion_3),
        ("4", "counterfactual generation behavior", criterion_4),
        ("5", "InfoNCE analytic values", criterion_5),
        ("6", "end-to-end sanity", criterion_6),
        ("7", "ablation wiring", criterion_7),
        ("8", "determinism", criterion_8),
    ];
    let mut failed = 0;
    for (id, name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|x| x == id) {
            continue;
        }
        let start = Instant::now();
        let status = f();
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match status {
            Status::Pass(d) => ("PASS", d),
            Status::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Status::Blocked(d) => ("BLOCKED", d),
        };
        println!("[{tag}] criterion {id} {name} ({secs:.1}s): {detail}");
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
