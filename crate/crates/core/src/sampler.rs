//! Breadth-first neighbor subgraph sampling.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{GscError, Result};
use crate::graph::Graph;
use crate::tensor::Tensor;

/// Seedable deterministic random stream.
#[derive(Clone, Debug)]
pub struct RngStream(ChaCha8Rng);

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Independent stream for a tagged sub-task of `seed`, e.g.
    /// `(seed, [epoch, step, center])`.
    pub fn derive(seed: u64, tags: &[u64]) -> Self {
        let mut h = splitmix(seed);
        for &t in tags {
            h = splitmix(h ^ splitmix(t.wrapping_add(0x51_7cc1_b727_220a)));
        }
        Self::new(h)
    }

    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        xs.shuffle(&mut self.0);
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.0.random_range(0..n)
    }

    pub fn uniform(&mut self) -> f64 {
        self.0.random::<f64>()
    }

    pub fn inner(&mut self) -> &mut ChaCha8Rng {
        &mut self.0
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A sampled neighbor subgraph. `nodes[0]` is the center and the order is
/// BFS discovery order; `adjacency` follows the same order.
#[derive(Clone, Debug, PartialEq)]
pub struct Subgraph {
    pub center: usize,
    pub nodes: Vec<usize>,
    pub adjacency: Tensor,
}

impl Subgraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Embedding rows of `h` in subgraph order.
    pub fn embeddings(&self, h: &Tensor) -> Result<Tensor> {
        let f = h.cols();
        let mut data = Vec::with_capacity(self.nodes.len() * f);
        for &v in &self.nodes {
            if v >= h.rows() {
                return Err(GscError::dim("subgraph embeddings", format!("row {v} of {}", h.rows())));
            }
            data.extend_from_slice(h.row(v));
        }
        Tensor::matrix(self.nodes.len(), f, data)
    }
}

/// BFS from `center`, collecting at most `k` nodes.
///
/// Each BFS level's undiscovered neighbors are shuffled before being
/// appended, so the cut at `k` picks a random subset of the last level.
/// Components smaller than `k` are returned whole.
pub fn bfs_sample(g: &Graph, center: usize, k: usize, rng: &mut RngStream) -> Result<Subgraph> {
    let n = g.n_nodes();
    if center >= n {
        return Err(GscError::contract(format!("center {center} out of range for {n} nodes")));
    }
    if k == 0 {
        return Err(GscError::contract("subgraph size k must be at least 1"));
    }
    let mut visited = vec![false; n];
    visited[center] = true;
    let mut nodes = vec![center];
    let mut level = vec![center];
    while nodes.len() < k && !level.is_empty() {
        let mut next = Vec::new();
        for &u in &level {
            for &w in g.neighbors(u) {
                if !visited[w] {
                    visited[w] = true;
                    next.push(w);
                }
            }
        }
        rng.shuffle(&mut next);
        next.truncate(k - nodes.len());
        nodes.extend_from_slice(&next);
        level = next;
    }
    let adjacency = g.induced_adjacency(&nodes)?;
    Ok(Subgraph { center, nodes, adjacency })
}
