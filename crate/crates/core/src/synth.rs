//! Stochastic block model datasets.

use std::fs;
use std::path::{Path, PathBuf};

use rand_distr::{Distribution, Normal};

use crate::config::SbmConfig;
use crate::error::{GscError, Result};
use crate::graph::{format_matrix_csv, Graph, Split};
use crate::sampler::RngStream;
use crate::tensor::Tensor;

/// Generates an SBM graph with labels (block ids) and a stratified
/// 10/10/80 train/val/test split.
///
/// Features are `one_hot(block)` padded to `feat_dim`, plus i.i.d.
/// `N(0, noise_sigma^2)` noise on every coordinate.
pub fn gen_synth_sbm(cfg: &SbmConfig) -> Result<Graph> {
    cfg.validate()?;
    let n = cfg.blocks * cfg.nodes_per_block;
    let block = |v: usize| v / cfg.nodes_per_block;
    let mut rng = RngStream::derive(cfg.seed, &[0x5b3]);

    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            let p = if block(a) == block(b) { cfg.p_in } else { cfg.p_out };
            if rng.uniform() < p {
                edges.push((a, b));
            }
        }
    }

    let normal = Normal::new(0.0, cfg.noise_sigma).map_err(|e| GscError::config("noise_sigma", e.to_string()))?;
    let mut frng = RngStream::derive(cfg.seed, &[0xfea7]);
    let mut feats = vec![0.0; n * cfg.feat_dim];
    for v in 0..n {
        let row = &mut feats[v * cfg.feat_dim..(v + 1) * cfg.feat_dim];
        row[block(v)] = 1.0;
        if cfg.noise_sigma > 0.0 {
            row.iter_mut().for_each(|x| *x += normal.sample(frng.inner()));
        }
    }

    let mut srng = RngStream::derive(cfg.seed, &[0x5417]);
    let mut splits = vec![Split::Test; n];
    let per_block = cfg.nodes_per_block;
    let n_train = ((per_block as f64) * 0.1).round().max(1.0) as usize;
    let n_val = ((per_block as f64) * 0.1).round() as usize;
    for b in 0..cfg.blocks {
        let mut ids: Vec<usize> = (b * per_block..(b + 1) * per_block).collect();
        srng.shuffle(&mut ids);
        for (i, v) in ids.into_iter().enumerate() {
            splits[v] = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }

    let mut g = Graph::from_edges(n, &edges, Tensor::matrix(n, cfg.feat_dim, feats)?)?;
    g.labels = Some((0..n).map(block).collect());
    g.splits = Some(splits);
    Ok(g)
}

/// File locations of a dataset written by [`write_dataset`].
#[derive(Clone, Debug)]
pub struct DatasetFiles {
    pub edges: PathBuf,
    pub features: PathBuf,
    pub labels: PathBuf,
    pub splits: PathBuf,
}

impl DatasetFiles {
    pub fn in_dir(dir: &Path) -> Self {
        DatasetFiles {
            edges: dir.join("edges.tsv"),
            features: dir.join("features.csv"),
            labels: dir.join("labels.txt"),
            splits: dir.join("splits.tsv"),
        }
    }
}

/// Writes a graph in the on-disk text formats.
pub fn write_dataset(g: &Graph, dir: &Path) -> Result<DatasetFiles> {
    fs::create_dir_all(dir).map_err(|e| GscError::io(dir, e))?;
    let files = DatasetFiles::in_dir(dir);
    let write = |p: &Path, s: String| fs::write(p, s).map_err(|e| GscError::io(p, e));

    let edges: String = g.edges().map(|(a, b)| format!("{a}\t{b}\n")).collect();
    write(&files.edges, edges)?;
    write(&files.features, format_matrix_csv(g.features()))?;
    if let Some(labels) = &g.labels {
        write(&files.labels, labels.iter().map(|l| format!("{l}\n")).collect())?;
    }
    if let Some(splits) = &g.splits {
        write(&files.splits, splits.iter().enumerate().map(|(i, s)| format!("{i}\t{s}\n")).collect())?;
    }
    Ok(files)
}
