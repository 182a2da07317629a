//! Adaptive generation of contrastive subgraphs.
//!
//! Each sampled node is replaced by an attention-weighted interpolation of
//! its neighbors' embeddings; edges of the generated subgraph are pairwise
//! cosine similarities of the interpolated rows.

use std::collections::HashMap;

use crate::error::{GscError, Result};
use crate::graph::Graph;
use crate::sampler::{RngStream, Subgraph};
use crate::tensor::{Tape, Tensor, Var};

/// Negative-input slope of the attention activation.
pub const ATTENTION_SLOPE: f64 = 0.2;

/// Which nodes count as the neighborhood of a node being interpolated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Neighborhood {
    /// 1-hop neighbors in the full graph.
    #[default]
    Graph,
    /// 1-hop neighbors restricted to the sampled subgraph.
    Subgraph,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorParams {
    /// `1 x 2F` attention vector.
    pub w_theta: Tensor,
    /// `F x F` projection.
    pub w_phi: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct GeneratorVars {
    pub w_theta: Var,
    pub w_phi: Var,
}

impl GeneratorParams {
    pub fn init(dim: usize, rng: &mut RngStream) -> Self {
        let glorot = |rows: usize, cols: usize, rng: &mut RngStream| {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            let data = (0..rows * cols).map(|_| (2.0 * rng.uniform() - 1.0) * bound).collect();
            Tensor::matrix(rows, cols, data).expect("sized above").with_grad()
        };
        let w_theta = glorot(1, 2 * dim, rng);
        let w_phi = glorot(dim, dim, rng);
        GeneratorParams { w_theta, w_phi }
    }

    pub fn dim(&self) -> usize {
        self.w_phi.rows()
    }

    pub fn record(&self, tape: &mut Tape) -> GeneratorVars {
        GeneratorVars { w_theta: tape.param(self.w_theta.clone()), w_phi: tape.param(self.w_phi.clone()) }
    }

    fn constants(&self, tape: &mut Tape) -> GeneratorVars {
        GeneratorVars { w_theta: tape.constant(self.w_theta.clone()), w_phi: tape.constant(self.w_phi.clone()) }
    }

    fn check(&self, f: usize) -> Result<()> {
        if self.w_theta.dims2() != (1, 2 * f) || self.w_phi.dims2() != (f, f) {
            return Err(GscError::dim(
                "generator",
                format!("embeddings of width {f} with w_theta {:?} and w_phi {:?}", self.w_theta.shape(), self.w_phi.shape()),
            ));
        }
        Ok(())
    }
}

/// Generated counterpart of a sampled subgraph, row-aligned with it.
#[derive(Clone, Debug)]
pub struct GeneratedSubgraph {
    pub center: usize,
    pub nodes: Vec<usize>,
    pub node_embeddings: Tensor,
    /// Cosine adjacency, entries in `[-1, 1]`.
    pub adjacency: Tensor,
    /// Attention weights used for each row, in neighbor order.
    pub weights: Vec<Vec<f64>>,
    /// Rows whose interpolated embedding had zero norm.
    pub zero_norm_rows: usize,
}

/// Tape handles for a generated subgraph.
#[derive(Clone, Copy, Debug)]
pub struct GeneratedVars {
    pub rows: Var,
    pub unit_rows: Var,
    pub adjacency: Var,
}

/// Per-step generation context over a fixed embedding matrix.
///
/// Projections `H W_phi^T` are computed once; interpolated rows are cached
/// per node when the neighborhood does not depend on the subgraph.
pub struct Generator<'g> {
    graph: &'g Graph,
    h: Var,
    projected: Var,
    vars: GeneratorVars,
    neighborhood: Neighborhood,
    cache: HashMap<usize, (Var, Var)>,
}

impl<'g> Generator<'g> {
    pub fn new(tape: &mut Tape, graph: &'g Graph, h: Var, vars: GeneratorVars, neighborhood: Neighborhood) -> Result<Self> {
        let (n, f) = tape.value(h).dims2();
        if n != graph.n_nodes() {
            return Err(GscError::dim("generator", format!("{n} embedding rows for {} nodes", graph.n_nodes())));
        }
        if tape.value(vars.w_theta).dims2() != (1, 2 * f) || tape.value(vars.w_phi).dims2() != (f, f) {
            return Err(GscError::dim("generator", format!("parameters do not match embedding width {f}")));
        }
        let wt = tape.transpose(vars.w_phi);
        let projected = tape.matmul(h, wt)?;
        Ok(Generator { graph, h, projected, vars, neighborhood, cache: HashMap::new() })
    }

    fn neighborhood_of(&self, v: usize, scope: &[usize]) -> Vec<usize> {
        let nb: Vec<usize> = match self.neighborhood {
            Neighborhood::Graph => self.graph.neighbors(v).to_vec(),
            Neighborhood::Subgraph => self.graph.neighbors(v).iter().copied().filter(|u| scope.contains(u)).collect(),
        };
        // isolated: interpolate from the node itself
        if nb.is_empty() {
            vec![v]
        } else {
            nb
        }
    }

    /// Attention weights (`d x 1`) and interpolated row (`1 x F`) for `v`.
    pub fn interpolate(&mut self, tape: &mut Tape, v: usize, scope: &[usize]) -> Result<(Var, Var)> {
        if self.neighborhood == Neighborhood::Graph {
            if let Some(&hit) = self.cache.get(&v) {
                return Ok(hit);
            }
        }
        let nb = self.neighborhood_of(v, scope);
        let d = nb.len();
        let zi = tape.gather_rows(self.projected, &vec![v; d])?;
        let zj = tape.gather_rows(self.projected, &nb)?;
        let pair = tape.concat_cols(&[zi, zj])?;
        let wt = tape.transpose(self.vars.w_theta);
        let scores = tape.matmul(pair, wt)?;
        let scores = tape.leaky_relu(scores, ATTENTION_SLOPE);
        let weights = tape.softmax(scores);
        let hj = tape.gather_rows(self.h, &nb)?;
        let wrow = tape.transpose(weights);
        let row = tape.matmul(wrow, hj)?;
        if self.neighborhood == Neighborhood::Graph {
            self.cache.insert(v, (weights, row));
        }
        Ok((weights, row))
    }

    /// Generated counterpart of `s`: interpolated rows plus cosine edges.
    pub fn subgraph(&mut self, tape: &mut Tape, s: &Subgraph) -> Result<GeneratedVars> {
        let mut rows = Vec::with_capacity(s.nodes.len());
        for &v in &s.nodes {
            rows.push(self.interpolate(tape, v, &s.nodes)?.1);
        }
        let rows = tape.concat_rows(&rows)?;
        let (unit_rows, adjacency) = generate_edges_on(tape, rows)?;
        Ok(GeneratedVars { rows, unit_rows, adjacency })
    }
}

/// Cosine-similarity adjacency of `rows`; returns the unit rows as well.
pub fn generate_edges_on(tape: &mut Tape, rows: Var) -> Result<(Var, Var)> {
    let unit = tape.normalize_rows(rows);
    let ut = tape.transpose(unit);
    let cos = tape.matmul(unit, ut)?;
    Ok((unit, tape.clamp(cos, -1.0, 1.0)))
}

/// `LeakyReLU(W_theta [W_phi h_i || W_phi h_j])`.
pub fn attention_score(hi: &[f64], hj: &[f64], p: &GeneratorParams) -> Result<f64> {
    let f = hi.len();
    if hj.len() != f {
        return Err(GscError::dim("attention_score", format!("vectors of length {f} and {}", hj.len())));
    }
    p.check(f)?;
    let mut tape = Tape::new();
    let vars = p.constants(&mut tape);
    let h = tape.constant(Tensor::matrix(2, f, [hi, hj].concat())?);
    let wt = tape.transpose(vars.w_phi);
    let z = tape.matmul(h, wt)?;
    let zi = tape.gather_rows(z, &[0])?;
    let zj = tape.gather_rows(z, &[1])?;
    let cat = tape.concat_cols(&[zi, zj])?;
    let tt = tape.transpose(vars.w_theta);
    let s = tape.matmul(cat, tt)?;
    let s = tape.leaky_relu(s, ATTENTION_SLOPE);
    Ok(tape.item(s))
}

/// Softmax relation weights of `center` over its graph neighborhood (the
/// node itself when isolated), in neighbor-list order.
pub fn relation_weights(center: usize, g: &Graph, h: &Tensor, p: &GeneratorParams) -> Result<Vec<f64>> {
    p.check(h.cols())?;
    let mut tape = Tape::new();
    let hv = tape.constant(h.clone());
    let vars = p.constants(&mut tape);
    let mut gen = Generator::new(&mut tape, g, hv, vars, Neighborhood::Graph)?;
    let (w, _) = gen.interpolate(&mut tape, center, &[])?;
    Ok(tape.value(w).data().to_vec())
}

/// `sum_j a_j h_j`.
pub fn interpolate_node(weights: &[f64], rows: &Tensor) -> Result<Vec<f64>> {
    if weights.len() != rows.rows() {
        return Err(GscError::contract(format!("{} weights for {} rows", weights.len(), rows.rows())));
    }
    let mut out = vec![0.0; rows.cols()];
    for (a, r) in weights.iter().zip(0..rows.rows()) {
        for (o, v) in out.iter_mut().zip(rows.row(r)) {
            *o += a * v;
        }
    }
    Ok(out)
}

/// Cosine adjacency of generated rows and the count of zero-norm rows,
/// whose similarities are 0.
pub fn generate_edges(rows: &Tensor) -> Result<(Tensor, usize)> {
    let mut tape = Tape::new();
    let r = tape.constant(rows.clone());
    let (_, a) = generate_edges_on(&mut tape, r)?;
    Ok((tape.value(a).clone(), tape.zero_norm_rows()))
}

/// Plain generation for one sampled subgraph.
pub fn generate_subgraph(
    s: &Subgraph,
    g: &Graph,
    h: &Tensor,
    p: &GeneratorParams,
    neighborhood: Neighborhood,
) -> Result<GeneratedSubgraph> {
    p.check(h.cols())?;
    let mut tape = Tape::new();
    let hv = tape.constant(h.clone());
    let vars = p.constants(&mut tape);
    let mut gen = Generator::new(&mut tape, g, hv, vars, neighborhood)?;
    let mut weights = Vec::with_capacity(s.nodes.len());
    for &v in &s.nodes {
        let (w, _) = gen.interpolate(&mut tape, v, &s.nodes)?;
        weights.push(tape.value(w).data().to_vec());
    }
    let before = tape.zero_norm_rows();
    let out = gen.subgraph(&mut tape, s)?;
    Ok(GeneratedSubgraph {
        center: s.center,
        nodes: s.nodes.clone(),
        node_embeddings: tape.value(out.rows).clone(),
        adjacency: tape.value(out.adjacency).clone(),
        weights,
        zero_norm_rows: tape.zero_norm_rows() - before,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(w_theta: &[f64], w_phi: Tensor) -> GeneratorParams {
        GeneratorParams { w_theta: Tensor::matrix(1, w_theta.len(), w_theta.to_vec()).unwrap(), w_phi }
    }

    #[test]
    fn zero_attention_vector_scores_zero() {
        let p = params(&[0.0; 4], Tensor::identity(2));
        assert_eq!(attention_score(&[1.0, -2.0], &[0.3, 4.0], &p).unwrap(), 0.0);
    }

    #[test]
    fn scalar_substitution() {
        let p = params(&[1.0, 1.0], Tensor::identity(1));
        assert_eq!(attention_score(&[1.0], &[2.0], &p).unwrap(), 3.0);
        // pre-activation -5 -> -1
        assert!((attention_score(&[-2.0], &[-3.0], &p).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn relation_weight_cases() {
        let h = Tensor::matrix(4, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let single = Graph::from_edges(4, &[(0, 1)], Tensor::zeros(4, 1)).unwrap();
        let p = params(&[1.0, 1.0], Tensor::identity(1));
        assert_eq!(relation_weights(0, &single, &h, &p).unwrap(), vec![1.0]);

        // equal scores when W_theta only looks at the center
        let star = Graph::from_edges(4, &[(0, 1), (0, 2)], Tensor::zeros(4, 1)).unwrap();
        let p = params(&[1.0, 0.0], Tensor::identity(1));
        assert_eq!(relation_weights(0, &star, &h, &p).unwrap(), vec![0.5, 0.5]);

        // scores [ln 2, 0] -> [2/3, 1/3]
        let h = Tensor::matrix(4, 1, vec![0.0, 2f64.ln(), 0.0, 0.0]).unwrap();
        let p = params(&[0.0, 1.0], Tensor::identity(1));
        let w = relation_weights(0, &star, &h, &p).unwrap();
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-15 && (w[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn isolated_center_falls_back_to_itself() {
        let g = Graph::from_edges(2, &[], Tensor::zeros(2, 2)).unwrap();
        let h = Tensor::matrix(2, 2, vec![0.3, 0.7, 1.0, 1.0]).unwrap();
        let mut rng = RngStream::new(0);
        let p = GeneratorParams::init(2, &mut rng);
        assert_eq!(relation_weights(0, &g, &h, &p).unwrap(), vec![1.0]);
        let s = Subgraph { center: 0, nodes: vec![0], adjacency: Tensor::zeros(1, 1) };
        let out = generate_subgraph(&s, &g, &h, &p, Neighborhood::Graph).unwrap();
        assert_eq!(out.node_embeddings.row(0), h.row(0));
    }

    #[test]
    fn interpolation() {
        let r = Tensor::matrix(1, 2, vec![3.0, -1.0]).unwrap();
        assert_eq!(interpolate_node(&[1.0], &r).unwrap(), vec![3.0, -1.0]);
        let r = Tensor::matrix(2, 2, vec![2.0, 0.0, 0.0, 2.0]).unwrap();
        assert_eq!(interpolate_node(&[0.5, 0.5], &r).unwrap(), vec![1.0, 1.0]);
        assert!(interpolate_node(&[1.0], &r).is_err());

        let mut rng = RngStream::new(9);
        let r = Tensor::matrix(3, 4, (0..12).map(|_| rng.uniform() * 4.0 - 2.0).collect()).unwrap();
        let w = [0.2, 0.3, 0.5];
        let got = interpolate_node(&w, &r).unwrap();
        for c in 0..4 {
            let oracle = 0.2 * r.get(0, c) + 0.3 * r.get(1, c) + 0.5 * r.get(2, c);
            assert!((got[c] - oracle).abs() < 1e-15);
        }
    }

    #[test]
    fn edge_cases() {
        let (a, z) = generate_edges(&Tensor::matrix(2, 2, vec![1.0, 2.0, 1.0, 2.0]).unwrap()).unwrap();
        assert!((a.get(0, 1) - 1.0).abs() < 1e-15);
        assert_eq!(z, 0);
        let (a, _) = generate_edges(&Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 5.0]).unwrap()).unwrap();
        assert_eq!(a.get(0, 1), 0.0);
        let (a, _) = generate_edges(&Tensor::matrix(2, 2, vec![1.0, 1.0, 1.0, 0.0]).unwrap()).unwrap();
        assert!((a.get(0, 1) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        let (a, z) = generate_edges(&Tensor::matrix(2, 2, vec![0.0, 0.0, 1.0, 0.0]).unwrap()).unwrap();
        assert_eq!(z, 1);
        assert_eq!(a.get(0, 1), 0.0);
        assert_eq!(a.get(0, 0), 0.0);
    }

    #[test]
    fn single_neighbor_rows_copy_the_neighbor() {
        // 0-1 and 2-3: every node has exactly one neighbor
        let g = Graph::from_edges(4, &[(0, 1), (2, 3)], Tensor::zeros(4, 2)).unwrap();
        let h = Tensor::matrix(4, 2, vec![1.0, 0.0, 0.0, 1.0, 2.0, 2.0, -1.0, 3.0]).unwrap();
        let p = GeneratorParams::init(2, &mut RngStream::new(4));
        let s = Subgraph { center: 0, nodes: vec![0, 1], adjacency: g.induced_adjacency(&[0, 1]).unwrap() };
        let out = generate_subgraph(&s, &g, &h, &p, Neighborhood::Graph).unwrap();
        assert_eq!(out.node_embeddings.row(0), h.row(1));
        assert_eq!(out.node_embeddings.row(1), h.row(0));
        assert_eq!(out.adjacency.get(0, 1), 0.0);

        let s = Subgraph { center: 2, nodes: vec![2], adjacency: Tensor::zeros(1, 1) };
        let out = generate_subgraph(&s, &g, &h, &p, Neighborhood::Graph).unwrap();
        assert_eq!(out.node_embeddings.row(0), h.row(3));
        assert!((out.adjacency.item() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn hand_trace_three_node_subgraph() {
        // path 0-1-2-3, F = 2, subgraph [1, 0, 2]
        let g = Graph::from_edges(4, &[(0, 1), (1, 2), (2, 3)], Tensor::zeros(4, 2)).unwrap();
        let h = Tensor::matrix(4, 2, vec![1.0, 0.0, 0.5, 0.5, 0.0, 1.0, -1.0, 2.0]).unwrap();
        let p = params(&[0.5, -1.0, 1.0, 0.25], Tensor::matrix(2, 2, vec![1.0, 0.5, 0.0, 2.0]).unwrap());
        let s = Subgraph { center: 1, nodes: vec![1, 0, 2], adjacency: g.induced_adjacency(&[1, 0, 2]).unwrap() };
        let out = generate_subgraph(&s, &g, &h, &p, Neighborhood::Graph).unwrap();

        // manual composition: z = W_phi h, theta = lrelu(wt[..2].z_i + wt[2..].z_j)
        let z = |v: usize| {
            let r = h.row(v);
            [r[0] + 0.5 * r[1], 2.0 * r[1]]
        };
        let lrelu = |x: f64| if x > 0.0 { x } else { 0.2 * x };
        let theta = |i: usize, j: usize| {
            let (a, b) = (z(i), z(j));
            lrelu(0.5 * a[0] - 1.0 * a[1] + 1.0 * b[0] + 0.25 * b[1])
        };
        let gen = |i: usize, nb: &[usize]| {
            let e: Vec<f64> = nb.iter().map(|&j| theta(i, j).exp()).collect();
            let sum: f64 = e.iter().sum();
            let mut out = [0.0; 2];
            for (k, &j) in nb.iter().enumerate() {
                out[0] += e[k] / sum * h.get(j, 0);
                out[1] += e[k] / sum * h.get(j, 1);
            }
            out
        };
        let rows = [gen(1, &[0, 2]), gen(0, &[1]), gen(2, &[1, 3])];
        for (r, row) in rows.iter().enumerate() {
            for c in 0..2 {
                assert!((out.node_embeddings.get(r, c) - row[c]).abs() < 1e-14);
            }
        }
        let cos = |a: [f64; 2], b: [f64; 2]| (a[0] * b[0] + a[1] * b[1]) / (a[0].hypot(a[1]) * b[0].hypot(b[1]));
        for i in 0..3 {
            for j in 0..3 {
                assert!((out.adjacency.get(i, j) - cos(rows[i], rows[j])).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn subgraph_scope_restricts_neighbors() {
        let g = Graph::from_edges(3, &[(0, 1), (0, 2)], Tensor::zeros(3, 1)).unwrap();
        let h = Tensor::matrix(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        let p = GeneratorParams::init(1, &mut RngStream::new(1));
        let s = Subgraph { center: 0, nodes: vec![0, 2], adjacency: g.induced_adjacency(&[0, 2]).unwrap() };
        let out = generate_subgraph(&s, &g, &h, &p, Neighborhood::Subgraph).unwrap();
        assert_eq!(out.node_embeddings.get(0, 0), 3.0);
        assert_eq!(out.weights[0], vec![1.0]);
    }
}
