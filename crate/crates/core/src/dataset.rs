//! TUDataset corpora: parsing, statistics and serialization.
//!
//! On disk a corpus named `DS` is a directory holding
//!
//! * `DS_A.txt`: one `i, j` edge per line, 1-indexed global node ids;
//! * `DS_graph_indicator.txt`: the 1-indexed graph id of every node;
//! * `DS_graph_labels.txt`: one integer class label per graph;
//! * `DS_node_attributes.txt`: comma-separated real attributes per node.
//!
//! Edges are symmetrized by union and self-loops are dropped. Node labels and
//! edge attributes are ignored.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{CgcError, FormatIssue, Result};

/// One undirected attributed graph with a class label.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    /// Binary symmetric adjacency with zero diagonal.
    pub adjacency: Array2<f64>,
    /// Node attributes, one row per node.
    pub features: Array2<f64>,
    /// Contiguous class id.
    pub label: usize,
}

impl Graph {
    pub fn new(adjacency: Array2<f64>, features: Array2<f64>, label: usize) -> Result<Self> {
        let n = adjacency.nrows();
        if adjacency.ncols() != n {
            return Err(CgcError::Shape(format!(
                "adjacency must be square, got {}x{}",
                n,
                adjacency.ncols()
            )));
        }
        if features.nrows() != n {
            return Err(CgcError::Shape(format!(
                "feature rows {} != node count {}",
                features.nrows(),
                n
            )));
        }
        let graph = Graph {
            adjacency,
            features,
            label,
        };
        if !graph.is_valid_adjacency() {
            return Err(CgcError::Shape(
                "adjacency must be binary, symmetric and zero on the diagonal".into(),
            ));
        }
        Ok(graph)
    }

    pub fn num_nodes(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    /// Undirected edge count (each edge counted once).
    pub fn num_edges(&self) -> usize {
        let n = self.num_nodes();
        let mut count = 0;
        for i in 0..n {
            for j in (i + 1)..n {
                if self.adjacency[[i, j]] != 0.0 {
                    count += 1;
                }
            }
        }
        count
    }

    pub fn is_valid_adjacency(&self) -> bool {
        is_binary_symmetric_hollow(&self.adjacency)
    }

    /// Relabels nodes so that new node `i` is old node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Graph {
        let n = self.num_nodes();
        assert_eq!(perm.len(), n, "permutation length must equal node count");
        let adjacency = Array2::from_shape_fn((n, n), |(i, j)| self.adjacency[[perm[i], perm[j]]]);
        let features = Array2::from_shape_fn((n, self.feature_dim()), |(i, k)| self.features[[perm[i], k]]);
        Graph {
            adjacency,
            features,
            label: self.label,
        }
    }
}

/// True when `m` is square, {0,1}-valued, symmetric and has a zero diagonal.
pub fn is_binary_symmetric_hollow(m: &Array2<f64>) -> bool {
    let n = m.nrows();
    if m.ncols() != n {
        return false;
    }
    for i in 0..n {
        if m[[i, i]] != 0.0 {
            return false;
        }
        for j in 0..n {
            let v = m[[i, j]];
            if (v != 0.0 && v != 1.0) || v != m[[j, i]] {
                return false;
            }
        }
    }
    true
}

/// An ordered, immutable collection of graphs sharing one feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphDataset {
    pub name: String,
    pub graphs: Vec<Graph>,
    pub num_classes: usize,
    pub feature_dim: usize,
}

impl GraphDataset {
    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.graphs.iter().map(|g| g.label).collect()
    }

    /// Keeps the graphs at `indices` (in that order); the class count is preserved.
    pub fn subset(&self, indices: &[usize]) -> GraphDataset {
        GraphDataset {
            name: self.name.clone(),
            graphs: indices.iter().map(|&i| self.graphs[i].clone()).collect(),
            num_classes: self.num_classes,
            feature_dim: self.feature_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub num_graphs: usize,
    pub avg_nodes: f64,
    pub avg_edges: f64,
    pub feature_dim: usize,
    pub num_classes: usize,
}

impl DatasetStats {
    /// Same statistics rounded to two decimals, as printed in summary tables.
    pub fn rounded(&self) -> (usize, String, String, usize, usize) {
        (
            self.num_graphs,
            format!("{:.2}", self.avg_nodes),
            format!("{:.2}", self.avg_edges),
            self.feature_dim,
            self.num_classes,
        )
    }
}

pub fn dataset_stats(ds: &GraphDataset) -> Result<DatasetStats> {
    if ds.graphs.is_empty() {
        return Err(CgcError::EmptyDataset);
    }
    let n = ds.graphs.len() as f64;
    let nodes: usize = ds.graphs.iter().map(Graph::num_nodes).sum();
    let edges: usize = ds.graphs.iter().map(Graph::num_edges).sum();
    Ok(DatasetStats {
        num_graphs: ds.graphs.len(),
        avg_nodes: nodes as f64 / n,
        avg_edges: edges as f64 / n,
        feature_dim: ds.feature_dim,
        num_classes: ds.num_classes,
    })
}

/// Published reference statistics for the four attributed benchmark corpora.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PublishedStats {
    pub name: &'static str,
    pub num_graphs: usize,
    pub avg_nodes: f64,
    pub avg_edges: f64,
    pub feature_dim: usize,
    pub num_classes: usize,
}

pub const PUBLISHED_STATS: [PublishedStats; 4] = [
    PublishedStats {
        name: "PROTEINS_full",
        num_graphs: 1113,
        avg_nodes: 39.06,
        avg_edges: 72.82,
        feature_dim: 29,
        num_classes: 2,
    },
    PublishedStats {
        name: "FRANKENSTEIN",
        num_graphs: 4337,
        avg_nodes: 16.90,
        avg_edges: 17.88,
        feature_dim: 780,
        num_classes: 2,
    },
    PublishedStats {
        name: "Synthie",
        num_graphs: 400,
        avg_nodes: 95.00,
        avg_edges: 172.93,
        feature_dim: 15,
        num_classes: 4,
    },
    PublishedStats {
        name: "ENZYMES",
        num_graphs: 600,
        avg_nodes: 32.63,
        avg_edges: 62.14,
        feature_dim: 18,
        num_classes: 6,
    },
];

pub fn published_stats(name: &str) -> Option<&'static PublishedStats> {
    PUBLISHED_STATS.iter().find(|p| p.name == name)
}

fn file_path(dir: &Path, name: &str, suffix: &str) -> PathBuf {
    dir.join(format!("{name}_{suffix}.txt"))
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            CgcError::format(FormatIssue::Missing, path, "file not found")
        } else {
            CgcError::io(path, e)
        }
    })?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim().to_string()))
        .filter(|(_, l)| !l.is_empty())
        .collect())
}

fn parse_int(path: &Path, line_no: usize, s: &str) -> Result<i64> {
    s.trim()
        .parse::<i64>()
        .map_err(|_| CgcError::format(FormatIssue::Parse, path, format!("line {line_no}: not an integer: {s:?}")))
}

/// Reads the corpus `dataset_name` from `data_dir`.
///
/// `data_dir` may either contain the `DS_*.txt` files directly or a
/// `dataset_name` subdirectory holding them (the layout of the official
/// archives).
pub fn parse_tudataset(data_dir: &Path, dataset_name: &str) -> Result<GraphDataset> {
    let nested = data_dir.join(dataset_name);
    let dir = if file_path(&nested, dataset_name, "A").exists() {
        nested
    } else {
        data_dir.to_path_buf()
    };

    let a_path = file_path(&dir, dataset_name, "A");
    let ind_path = file_path(&dir, dataset_name, "graph_indicator");
    let lab_path = file_path(&dir, dataset_name, "graph_labels");
    let attr_path = file_path(&dir, dataset_name, "node_attributes");
    for p in [&a_path, &ind_path, &lab_path, &attr_path] {
        if !p.exists() {
            return Err(CgcError::format(FormatIssue::Missing, p, "file not found"));
        }
    }

    // graph labels
    let raw_labels: Vec<i64> = read_lines(&lab_path)?
        .iter()
        .map(|(no, l)| parse_int(&lab_path, *no, l))
        .collect::<Result<_>>()?;
    let num_graphs = raw_labels.len();
    let distinct: BTreeSet<i64> = raw_labels.iter().copied().collect();
    let remap: Vec<i64> = distinct.into_iter().collect();
    let labels: Vec<usize> = raw_labels
        .iter()
        .map(|l| remap.binary_search(l).expect("label present in its own set"))
        .collect();

    // node -> (graph, local index)
    let indicator_lines = read_lines(&ind_path)?;
    let mut node_graph = Vec::with_capacity(indicator_lines.len());
    let mut node_local = Vec::with_capacity(indicator_lines.len());
    let mut sizes = vec![0usize; num_graphs];
    for (no, l) in &indicator_lines {
        let g = parse_int(&ind_path, *no, l)?;
        if g < 1 || g as usize > num_graphs {
            return Err(CgcError::format(
                FormatIssue::IndicatorMismatch,
                &ind_path,
                format!("line {no}: graph id {g} outside 1..={num_graphs}"),
            ));
        }
        let g = g as usize - 1;
        node_graph.push(g);
        node_local.push(sizes[g]);
        sizes[g] += 1;
    }
    let num_nodes = node_graph.len();
    if let Some(empty) = sizes.iter().position(|&s| s == 0) {
        return Err(CgcError::format(
            FormatIssue::IndicatorMismatch,
            &ind_path,
            format!("graph {} has no nodes", empty + 1),
        ));
    }

    // attributes
    let attr_lines = read_lines(&attr_path)?;
    if attr_lines.len() != num_nodes {
        return Err(CgcError::format(
            FormatIssue::IndicatorMismatch,
            &attr_path,
            format!("{} attribute rows for {} nodes", attr_lines.len(), num_nodes),
        ));
    }
    let mut feature_dim = None;
    let mut features: Vec<Array2<f64>> = Vec::with_capacity(num_graphs);
    let mut attr_rows: Vec<Vec<f64>> = Vec::with_capacity(num_nodes);
    for (no, l) in &attr_lines {
        let row: Vec<f64> = l
            .split(',')
            .map(|t| {
                t.trim().parse::<f64>().map_err(|_| {
                    CgcError::format(FormatIssue::Parse, &attr_path, format!("line {no}: not a number: {t:?}"))
                })
            })
            .collect::<Result<_>>()?;
        match feature_dim {
            None => feature_dim = Some(row.len()),
            Some(d) if d != row.len() => {
                return Err(CgcError::format(
                    FormatIssue::Parse,
                    &attr_path,
                    format!("line {no}: expected {d} attributes, found {}", row.len()),
                ))
            }
            _ => {}
        }
        attr_rows.push(row);
    }
    let feature_dim = feature_dim.unwrap_or(0);
    for &s in &sizes {
        features.push(Array2::zeros((s, feature_dim)));
    }
    for (node, row) in attr_rows.into_iter().enumerate() {
        let (g, i) = (node_graph[node], node_local[node]);
        for (k, v) in row.into_iter().enumerate() {
            features[g][[i, k]] = v;
        }
    }

    // edges
    let mut adjacency: Vec<Array2<f64>> = sizes.iter().map(|&s| Array2::zeros((s, s))).collect();
    for (no, l) in read_lines(&a_path)? {
        let mut parts = l.split(',');
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(CgcError::format(
                FormatIssue::Parse,
                &a_path,
                format!("line {no}: expected \"i, j\", found {l:?}"),
            ));
        };
        let (a, b) = (parse_int(&a_path, no, a)?, parse_int(&a_path, no, b)?);
        let in_range = |x: i64| x >= 1 && x as usize <= num_nodes;
        if !in_range(a) || !in_range(b) {
            return Err(CgcError::format(
                FormatIssue::IndicatorMismatch,
                &a_path,
                format!("line {no}: node id outside 1..={num_nodes}"),
            ));
        }
        let (a, b) = (a as usize - 1, b as usize - 1);
        if node_graph[a] != node_graph[b] {
            return Err(CgcError::format(
                FormatIssue::IndicatorMismatch,
                &a_path,
                format!(
                    "line {no}: edge joins graph {} and graph {}",
                    node_graph[a] + 1,
                    node_graph[b] + 1
                ),
            ));
        }
        if a == b {
            continue;
        }
        let adj = &mut adjacency[node_graph[a]];
        let (i, j) = (node_local[a], node_local[b]);
        adj[[i, j]] = 1.0;
        adj[[j, i]] = 1.0;
    }

    let graphs = adjacency
        .into_iter()
        .zip(features)
        .zip(labels)
        .map(|((adjacency, features), label)| Graph {
            adjacency,
            features,
            label,
        })
        .collect();

    Ok(GraphDataset {
        name: dataset_name.to_string(),
        graphs,
        num_classes: remap.len(),
        feature_dim,
    })
}

/// Writes `ds` in TUDataset layout under `dir` using `name` as file prefix.
/// Both directions of every undirected edge are listed.
pub fn write_tudataset(ds: &GraphDataset, dir: &Path, name: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CgcError::io(dir, e))?;
    let mut a = String::new();
    let mut ind = String::new();
    let mut lab = String::new();
    let mut attr = String::new();
    let mut offset = 0usize;
    for (g_idx, g) in ds.graphs.iter().enumerate() {
        let n = g.num_nodes();
        for i in 0..n {
            for j in 0..n {
                if g.adjacency[[i, j]] != 0.0 {
                    a.push_str(&format!("{}, {}\n", offset + i + 1, offset + j + 1));
                }
            }
            ind.push_str(&format!("{}\n", g_idx + 1));
            let row: Vec<String> = g.features.row(i).iter().map(|v| format!("{v:?}")).collect();
            attr.push_str(&row.join(", "));
            attr.push('\n');
        }
        lab.push_str(&format!("{}\n", g.label));
        offset += n;
    }
    for (suffix, body) in [
        ("A", a),
        ("graph_indicator", ind),
        ("graph_labels", lab),
        ("node_attributes", attr),
    ] {
        let path = file_path(dir, name, suffix);
        let mut f = fs::File::create(&path).map_err(|e| CgcError::io(&path, e))?;
        f.write_all(body.as_bytes()).map_err(|e| CgcError::io(&path, e))?;
    }
    Ok(())
}
