//! Attributed undirected graph: adjacency, node features, optional labels
//! and splits, plus the text formats they are loaded from.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{GscError, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// Immutable undirected graph with sorted neighbor lists (CSR).
#[derive(Clone, Debug)]
pub struct Graph {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    features: Tensor,
    pub labels: Option<Vec<usize>>,
    pub splits: Option<Vec<Split>>,
}

impl Graph {
    /// Builds a graph from undirected edges. Duplicates and reversed
    /// duplicates collapse; self-loops and out-of-range ids are rejected.
    pub fn from_edges(n: usize, edges: &[(usize, usize)], features: Tensor) -> Result<Self> {
        if features.rows() != n {
            return Err(GscError::contract(format!("{} feature rows for {n} nodes", features.rows())));
        }
        let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(GscError::contract(format!("edge ({a}, {b}) out of range for {n} nodes")));
            }
            if a == b {
                return Err(GscError::contract(format!("self-loop on node {a}")));
            }
            adj[a].insert(b);
            adj[b].insert(a);
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        let mut neighbors = Vec::new();
        for set in adj {
            neighbors.extend(set);
            offsets.push(neighbors.len());
        }
        Ok(Graph { offsets, neighbors, features, labels: None, splits: None })
    }

    pub fn n_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Number of undirected edges.
    pub fn n_edges(&self) -> usize {
        self.neighbors.len() / 2
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.neighbors(a).binary_search(&b).is_ok()
    }

    /// Each undirected edge once, as `(lo, hi)`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n_nodes()).flat_map(move |a| self.neighbors(a).iter().filter(move |&&b| b > a).map(move |&b| (a, b)))
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    /// Same nodes and features, different edge set.
    pub fn with_edges(&self, edges: &[(usize, usize)]) -> Result<Self> {
        let mut g = Graph::from_edges(self.n_nodes(), edges, self.features.clone())?;
        g.labels = self.labels.clone();
        g.splits = self.splits.clone();
        Ok(g)
    }

    /// Dense 0/1 adjacency.
    pub fn dense_adjacency(&self) -> Tensor {
        let n = self.n_nodes();
        let mut a = Tensor::zeros(n, n);
        for (u, v) in self.edges() {
            a.data_mut()[u * n + v] = 1.0;
            a.data_mut()[v * n + u] = 1.0;
        }
        a
    }

    /// `D^{-1/2} (A + I) D^{-1/2}` with `D` the degree of `A + I`.
    pub fn normalize_adjacency(&self) -> NormAdj {
        let n = self.n_nodes();
        let inv_sqrt: Vec<f64> = (0..n).map(|v| 1.0 / ((self.degree(v) + 1) as f64).sqrt()).collect();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut cols = Vec::with_capacity(self.neighbors.len() + n);
        let mut vals = Vec::with_capacity(self.neighbors.len() + n);
        offsets.push(0);
        for v in 0..n {
            // neighbors are sorted; splice the self-loop into place
            let mut placed = false;
            for &u in self.neighbors(v) {
                if !placed && u > v {
                    cols.push(v);
                    vals.push(inv_sqrt[v] * inv_sqrt[v]);
                    placed = true;
                }
                cols.push(u);
                vals.push(inv_sqrt[v] * inv_sqrt[u]);
            }
            if !placed {
                cols.push(v);
                vals.push(inv_sqrt[v] * inv_sqrt[v]);
            }
            offsets.push(cols.len());
        }
        NormAdj { offsets, cols, vals }
    }

    /// Induced subgraph over `nodes` in the given order, with embedding rows
    /// gathered in the same order.
    pub fn induced_subgraph(&self, nodes: &[usize], embeddings: &Tensor) -> Result<InducedSubgraph> {
        let n = self.n_nodes();
        if embeddings.rows() != n {
            return Err(GscError::dim("induced_subgraph", format!("{} embedding rows for {n} nodes", embeddings.rows())));
        }
        let adjacency = self.induced_adjacency(nodes)?;
        let f = embeddings.cols();
        let mut rows = Vec::with_capacity(nodes.len() * f);
        for &v in nodes {
            rows.extend_from_slice(embeddings.row(v));
        }
        Ok(InducedSubgraph {
            nodes: nodes.to_vec(),
            adjacency,
            embeddings: Tensor::matrix(nodes.len(), f, rows)?,
        })
    }

    /// `k x k` 0/1 adjacency restricted to `nodes`, in listed order.
    pub fn induced_adjacency(&self, nodes: &[usize]) -> Result<Tensor> {
        let n = self.n_nodes();
        let mut seen = vec![false; n];
        for &v in nodes {
            if v >= n {
                return Err(GscError::contract(format!("node {v} out of range for {n} nodes")));
            }
            if std::mem::replace(&mut seen[v], true) {
                return Err(GscError::contract(format!("duplicate node {v} in subgraph")));
            }
        }
        if nodes.is_empty() {
            return Err(GscError::contract("empty subgraph"));
        }
        let k = nodes.len();
        let mut a = Tensor::zeros(k, k);
        for p in 0..k {
            for q in 0..k {
                if self.has_edge(nodes[p], nodes[q]) {
                    a.data_mut()[p * k + q] = 1.0;
                }
            }
        }
        Ok(a)
    }
}

/// Sparse symmetric normalized adjacency with self-loops.
#[derive(Clone, Debug)]
pub struct NormAdj {
    offsets: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl NormAdj {
    pub fn n_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn to_dense(&self) -> Tensor {
        let n = self.n_nodes();
        let mut t = Tensor::zeros(n, n);
        for r in 0..n {
            for k in self.offsets[r]..self.offsets[r + 1] {
                t.data_mut()[r * n + self.cols[k]] = self.vals[k];
            }
        }
        t
    }

    /// `Â · X` for a dense `N x C` matrix.
    pub fn matmul_dense(&self, x: &Tensor) -> Result<Tensor> {
        let n = self.n_nodes();
        let (xr, c) = x.dims2();
        if xr != n {
            return Err(GscError::dim("spmm", format!("{n}x{n} times {xr}x{c}")));
        }
        let mut out = vec![0.0; n * c];
        for r in 0..n {
            let orow = &mut out[r * c..(r + 1) * c];
            for k in self.offsets[r]..self.offsets[r + 1] {
                let w = self.vals[k];
                for (o, xv) in orow.iter_mut().zip(x.row(self.cols[k])) {
                    *o += w * xv;
                }
            }
        }
        Tensor::matrix(n, c, out)
    }
}

/// Result of [`Graph::induced_subgraph`].
#[derive(Clone, Debug)]
pub struct InducedSubgraph {
    pub nodes: Vec<usize>,
    pub adjacency: Tensor,
    pub embeddings: Tensor,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| GscError::io(path, e))
}

fn ingest(path: &Path, line: usize, msg: impl Into<String>) -> GscError {
    GscError::Ingestion { path: path.to_path_buf(), line, msg: msg.into() }
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty())
}

/// Parses the features CSV: one row per node, comma-separated floats.
pub fn parse_features(path: &Path, text: &str) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (ln, line) in content_lines(text) {
        let row = line
            .split(',')
            .map(|f| f.trim().parse::<f64>().map_err(|_| ingest(path, ln, format!("bad float `{}`", f.trim()))))
            .collect::<Result<Vec<_>>>()?;
        if let Some(row) = row.iter().find(|v| !v.is_finite()) {
            return Err(ingest(path, ln, format!("non-finite value {row}")));
        }
        match cols {
            None => cols = Some(row.len()),
            Some(c) if c != row.len() => {
                return Err(ingest(path, ln, format!("expected {c} columns, found {}", row.len())))
            }
            _ => {}
        }
        data.extend(row);
        rows += 1;
    }
    let Some(cols) = cols else {
        return Err(ingest(path, 0, "no feature rows"));
    };
    Tensor::matrix(rows, cols, data)
}

/// Parses the edge list; `n` bounds node ids.
pub fn parse_edges(path: &Path, text: &str, n: usize) -> Result<Vec<(usize, usize)>> {
    let mut edges = Vec::new();
    for (ln, line) in content_lines(text) {
        let mut it = line.split_whitespace();
        let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
            return Err(ingest(path, ln, "expected `src<TAB>dst`"));
        };
        let id = |s: &str| -> Result<usize> {
            let v: i64 = s.parse().map_err(|_| ingest(path, ln, format!("bad node id `{s}`")))?;
            if v < 0 || v as u64 >= n as u64 {
                return Err(ingest(path, ln, format!("node id {v} out of range for {n} nodes")));
            }
            Ok(v as usize)
        };
        let (a, b) = (id(a)?, id(b)?);
        if a == b {
            return Err(ingest(path, ln, format!("self-loop on node {a}")));
        }
        edges.push((a, b));
    }
    Ok(edges)
}

pub fn parse_labels(path: &Path, text: &str, n: usize) -> Result<Vec<usize>> {
    let labels = content_lines(text)
        .map(|(ln, l)| l.parse::<usize>().map_err(|_| ingest(path, ln, format!("bad label `{l}`"))))
        .collect::<Result<Vec<_>>>()?;
    if labels.len() != n {
        return Err(ingest(path, labels.len(), format!("{} labels for {n} nodes", labels.len())));
    }
    Ok(labels)
}

pub fn parse_splits(path: &Path, text: &str, n: usize) -> Result<Vec<Split>> {
    let mut splits: Vec<Option<Split>> = vec![None; n];
    for (ln, line) in content_lines(text) {
        let mut it = line.split_whitespace();
        let (Some(id), Some(tag), None) = (it.next(), it.next(), it.next()) else {
            return Err(ingest(path, ln, "expected `node_id<TAB>split`"));
        };
        let id: usize = id.parse().map_err(|_| ingest(path, ln, format!("bad node id `{id}`")))?;
        if id >= n {
            return Err(ingest(path, ln, format!("node id {id} out of range for {n} nodes")));
        }
        let tag: Split = tag.parse().map_err(|e: String| ingest(path, ln, e))?;
        if splits[id].replace(tag).is_some() {
            return Err(ingest(path, ln, format!("node {id} listed twice")));
        }
    }
    splits
        .into_iter()
        .enumerate()
        .map(|(i, s)| s.ok_or_else(|| ingest(path, 0, format!("node {i} has no split"))))
        .collect()
}

/// Loads a graph from the on-disk text formats. The features file fixes
/// the node count.
pub fn load_graph(
    edges_path: &Path,
    features_path: &Path,
    labels_path: Option<&Path>,
    splits_path: Option<&Path>,
) -> Result<Graph> {
    let features = parse_features(features_path, &read(features_path)?)?;
    let n = features.rows();
    let edges = parse_edges(edges_path, &read(edges_path)?, n)?;
    let mut g = Graph::from_edges(n, &edges, features)?;
    if let Some(p) = labels_path {
        g.labels = Some(parse_labels(p, &read(p)?, n)?);
    }
    if let Some(p) = splits_path {
        g.splits = Some(parse_splits(p, &read(p)?, n)?);
    }
    Ok(g)
}

/// Writes a matrix in the features CSV format.
pub fn format_matrix_csv(t: &Tensor) -> String {
    let mut out = String::new();
    for r in 0..t.rows() {
        let row: Vec<String> = t.row(r).iter().map(|v| format!("{v}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}
