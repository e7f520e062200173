//! Seeded synthetic graph-classification sets.
//!
//! Used for tests and smoke runs when the benchmark corpora are not on disk.
//! The ENZYMES-like generator roughly matches that corpus's shape (6 balanced
//! classes, about 32 nodes and 62 edges per graph, 18 features of which the
//! last 3 are a one-hot node type). Class identity is carried by both the
//! community structure and the feature distribution, and is deliberately
//! noisy.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{Graph, GraphDataset};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub num_graphs: usize,
    pub num_classes: usize,
    pub min_nodes: usize,
    pub max_nodes: usize,
    /// Continuous features; a 3-way one-hot node type is appended.
    pub continuous_features: usize,
    /// Expected degree of a node.
    pub mean_degree: f64,
    /// Scale of the class-dependent feature shift relative to unit noise.
    pub feature_signal: f64,
}

impl SyntheticConfig {
    pub fn enzymes_like(num_graphs: usize) -> Self {
        SyntheticConfig {
            num_graphs,
            num_classes: 6,
            min_nodes: 12,
            max_nodes: 52,
            continuous_features: 15,
            mean_degree: 3.8,
            feature_signal: 0.35,
        }
    }
}

const NODE_TYPES: usize = 3;

/// Name given to surrogate data sets, distinguishable from real corpora.
pub const SYNTHETIC_ENZYMES: &str = "synthetic-enzymes";

pub fn synthetic_enzymes_like(num_graphs: usize, seed: u64) -> GraphDataset {
    generate(SYNTHETIC_ENZYMES, &SyntheticConfig::enzymes_like(num_graphs), seed)
}

pub fn generate(name: &str, cfg: &SyntheticConfig, seed: u64) -> GraphDataset {
    let mut class_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "synthetic-classes", 0));
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    // Per-class feature means, community counts and node-type mixes.
    let means: Vec<Vec<f64>> = (0..cfg.num_classes)
        .map(|_| {
            (0..cfg.continuous_features)
                .map(|_| cfg.feature_signal * unit.sample(&mut class_rng))
                .collect()
        })
        .collect();
    let communities: Vec<usize> = (0..cfg.num_classes).map(|c| 1 + c % 3).collect();
    let type_mix: Vec<[f64; NODE_TYPES]> = (0..cfg.num_classes)
        .map(|_| {
            let w: Vec<f64> = (0..NODE_TYPES).map(|_| 0.5 + class_rng.random::<f64>()).collect();
            let s: f64 = w.iter().sum();
            [w[0] / s, w[1] / s, w[2] / s]
        })
        .collect();

    let h = cfg.continuous_features + NODE_TYPES;
    let graphs = (0..cfg.num_graphs)
        .map(|i| {
            let label = i % cfg.num_classes;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "synthetic-graph", i as u64));
            let n = rng.random_range(cfg.min_nodes..=cfg.max_nodes);
            let k = communities[label].min(n);
            let block: Vec<usize> = (0..n).map(|v| v * k / n).collect();

            // A spanning path keeps graphs connected; the rest of the degree
            // budget is spread over intra- and inter-community pairs.
            let mut adj = Array2::<f64>::zeros((n, n));
            for v in 1..n {
                adj[[v - 1, v]] = 1.0;
                adj[[v, v - 1]] = 1.0;
            }
            let extra_edges = (cfg.mean_degree * n as f64 / 2.0 - (n as f64 - 1.0)).max(0.0);
            let (mut intra_pairs, mut inter_pairs) = (0usize, 0usize);
            for u in 0..n {
                for v in u + 2..n {
                    if block[u] == block[v] {
                        intra_pairs += 1;
                    } else {
                        inter_pairs += 1;
                    }
                }
            }
            let intra_share = if inter_pairs == 0 { 1.0 } else { 0.85 };
            let p_in = (intra_share * extra_edges / intra_pairs.max(1) as f64).min(1.0);
            let p_out = ((1.0 - intra_share) * extra_edges / inter_pairs.max(1) as f64).min(1.0);
            for u in 0..n {
                for v in u + 2..n {
                    let p = if block[u] == block[v] { p_in } else { p_out };
                    if rng.random::<f64>() < p {
                        adj[[u, v]] = 1.0;
                        adj[[v, u]] = 1.0;
                    }
                }
            }

            let mut x = Array2::<f64>::zeros((n, h));
            for v in 0..n {
                for f in 0..cfg.continuous_features {
                    x[[v, f]] = means[label][f] + unit.sample(&mut rng);
                }
                let r: f64 = rng.random();
                let mix = &type_mix[label];
                let t = if r < mix[0] {
                    0
                } else if r < mix[0] + mix[1] {
                    1
                } else {
                    2
                };
                x[[v, cfg.continuous_features + t]] = 1.0;
            }
            Graph {
                adjacency: adj,
                features: x,
                label,
            }
        })
        .collect();

    GraphDataset {
        name: name.to_string(),
        graphs,
        num_classes: cfg.num_classes,
        feature_dim: h,
    }
}
