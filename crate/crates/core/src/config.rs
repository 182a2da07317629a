//! Flat `key = value` configuration files.
//!
//! Blank lines and `#` comments are ignored. Keys are case-sensitive; an
//! unknown key is an error so typos in ablation sweeps fail loudly.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::error::{GscError, Result};
use crate::generator::Neighborhood;
use crate::ot::{PlanGradient, SinkhornOptions};

/// How two subgraphs are compared inside the loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub enum DistanceKind {
    /// Wasserstein / Gromov-Wasserstein under a shared Sinkhorn plan.
    #[default]
    Ot,
    /// Cosine of mean-pooled node embeddings (readout baseline).
    Readout,
}

/// Training hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainConfig {
    /// Subgraph node budget.
    pub k: usize,
    pub tau: f64,
    pub beta: f64,
    pub lambda: f64,
    /// Negatives per anchor.
    pub negatives: usize,
    /// Generated positives per anchor.
    pub positives: usize,
    pub dim: usize,
    pub lr: f64,
    pub epochs: usize,
    /// Centers per optimization step.
    pub batch_size: usize,
    /// Anchors per step that enter the OT loss.
    pub ot_subsample: usize,
    pub seed: u64,
    pub sinkhorn_max_iters: usize,
    pub sinkhorn_tol: f64,
    /// Sinkhorn sweeps before Newton refinement of the dual.
    pub sinkhorn_newton_after: usize,
    #[serde(serialize_with = "ser_plan")]
    pub plan_gradient: PlanGradient,
    #[serde(serialize_with = "ser_nb")]
    pub neighborhood: Neighborhood,
    pub distance: DistanceKind,
    /// Write wall-clock seconds into the metrics log instead of 0.
    pub log_timing: bool,
}

fn ser_plan<S: serde::Serializer>(p: &PlanGradient, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(match p {
        PlanGradient::Unrolled => "unrolled",
        PlanGradient::Fixed => "fixed",
    })
}

fn ser_nb<S: serde::Serializer>(n: &Neighborhood, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(match n {
        Neighborhood::Graph => "graph",
        Neighborhood::Subgraph => "subgraph",
    })
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 10,
            tau: 0.5,
            beta: 0.05,
            lambda: 0.5,
            negatives: 2,
            positives: 1,
            dim: 64,
            lr: 1e-4,
            epochs: 100,
            batch_size: 64,
            ot_subsample: 32,
            seed: 0,
            sinkhorn_max_iters: 500,
            sinkhorn_tol: 1e-6,
            sinkhorn_newton_after: 100,
            plan_gradient: PlanGradient::Unrolled,
            neighborhood: Neighborhood::Graph,
            distance: DistanceKind::Ot,
            log_timing: false,
        }
    }
}

impl TrainConfig {
    pub fn sinkhorn(&self) -> SinkhornOptions {
        SinkhornOptions {
            beta: self.beta,
            max_iters: self.sinkhorn_max_iters,
            tol: self.sinkhorn_tol,
            newton_after: self.sinkhorn_newton_after,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive_int = [
            ("k", self.k),
            ("dim", self.dim),
            ("batch_size", self.batch_size),
            ("ot_subsample", self.ot_subsample),
            ("positives", self.positives),
            ("sinkhorn_max_iters", self.sinkhorn_max_iters),
        ];
        for (name, v) in positive_int {
            if v == 0 {
                return Err(GscError::config(name, "must be positive"));
            }
        }
        if self.batch_size < 2 {
            return Err(GscError::config("batch_size", "must be at least 2 so negatives exist"));
        }
        for (name, v) in [("tau", self.tau), ("beta", self.beta), ("lr", self.lr)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(GscError::config(name, format!("must be positive, got {v}")));
            }
        }
        if !(self.sinkhorn_tol >= 0.0) {
            return Err(GscError::config("sinkhorn_tol", "must be nonnegative"));
        }
        crate::contrastive::check_lambda(self.lambda)
    }
}

/// Parameters of the synthetic stochastic block model.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SbmConfig {
    pub blocks: usize,
    pub nodes_per_block: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feat_dim: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SbmConfig {
    fn default() -> Self {
        SbmConfig { blocks: 3, nodes_per_block: 100, p_in: 0.1, p_out: 0.01, feat_dim: 16, noise_sigma: 0.5, seed: 7 }
    }
}

impl SbmConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_in", self.p_in), ("p_out", self.p_out)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(GscError::config(name, format!("probability must lie in [0, 1], got {p}")));
            }
        }
        if self.p_in <= self.p_out {
            return Err(GscError::config("p_in", format!("must exceed p_out ({} <= {})", self.p_in, self.p_out)));
        }
        if self.blocks == 0 || self.nodes_per_block == 0 {
            return Err(GscError::config("blocks", "need at least one block with one node"));
        }
        if self.feat_dim < self.blocks {
            return Err(GscError::config("feat_dim", format!("must be at least blocks ({})", self.blocks)));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(GscError::config("noise_sigma", "must be nonnegative"));
        }
        Ok(())
    }
}

/// Data file locations.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct DataPaths {
    pub edges: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub splits: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
}

/// Everything a config file can hold.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RunConfig {
    pub data: DataPaths,
    pub train: TrainConfig,
    pub sbm: SbmConfig,
}

const KEYS: &[&str] = &[
    "edges", "features", "labels", "splits", "checkpoint", "embeddings",
    "k", "tau", "beta", "lambda", "negatives", "positives", "dim", "lr", "epochs", "batch_size",
    "ot_subsample", "seed", "sinkhorn_max_iters", "sinkhorn_tol", "sinkhorn_newton_after",
    "plan_gradient", "neighborhood",
    "distance", "log_timing",
    "blocks", "nodes_per_block", "p_in", "p_out", "feat_dim", "noise_sigma",
];

fn parse_value<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse().map_err(|_| GscError::config(key, format!("cannot parse `{raw}`")))
}

impl RunConfig {
    /// Parses config text; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(GscError::config(format!("line {}", i + 1), "expected `key = value`"));
            };
            let (k, v) = (k.trim(), v.trim().trim_matches('"'));
            if !KEYS.contains(&k) {
                return Err(GscError::config(k, "unknown key"));
            }
            if entries.insert(k.to_string(), v.to_string()).is_some() {
                return Err(GscError::config(k, "given twice"));
            }
        }
        let mut cfg = RunConfig::default();
        let path = |v: &str| Some(base.join(v));
        for (k, v) in &entries {
            let (k, v) = (k.as_str(), v.as_str());
            let t = &mut cfg.train;
            let s = &mut cfg.sbm;
            match k {
                "edges" => cfg.data.edges = path(v),
                "features" => cfg.data.features = path(v),
                "labels" => cfg.data.labels = path(v),
                "splits" => cfg.data.splits = path(v),
                "checkpoint" => cfg.data.checkpoint = path(v),
                "embeddings" => cfg.data.embeddings = path(v),
                "k" => t.k = parse_value(k, v)?,
                "tau" => t.tau = parse_value(k, v)?,
                "beta" => t.beta = parse_value(k, v)?,
                "lambda" => t.lambda = parse_value(k, v)?,
                "negatives" => t.negatives = parse_value(k, v)?,
                "positives" => t.positives = parse_value(k, v)?,
                "dim" => t.dim = parse_value(k, v)?,
                "lr" => t.lr = parse_value(k, v)?,
                "epochs" => t.epochs = parse_value(k, v)?,
                "batch_size" => t.batch_size = parse_value(k, v)?,
                "ot_subsample" => t.ot_subsample = parse_value(k, v)?,
                "seed" => {
                    t.seed = parse_value(k, v)?;
                    s.seed = t.seed;
                }
                "sinkhorn_max_iters" => t.sinkhorn_max_iters = parse_value(k, v)?,
                "sinkhorn_tol" => t.sinkhorn_tol = parse_value(k, v)?,
                "sinkhorn_newton_after" => t.sinkhorn_newton_after = parse_value(k, v)?,
                "plan_gradient" => {
                    t.plan_gradient = match v {
                        "unrolled" => PlanGradient::Unrolled,
                        "fixed" => PlanGradient::Fixed,
                        _ => return Err(GscError::config(k, format!("expected unrolled|fixed, got `{v}`"))),
                    }
                }
                "neighborhood" => {
                    t.neighborhood = match v {
                        "graph" => Neighborhood::Graph,
                        "subgraph" => Neighborhood::Subgraph,
                        _ => return Err(GscError::config(k, format!("expected graph|subgraph, got `{v}`"))),
                    }
                }
                "distance" => {
                    t.distance = match v {
                        "ot" => DistanceKind::Ot,
                        "readout" => DistanceKind::Readout,
                        _ => return Err(GscError::config(k, format!("expected ot|readout, got `{v}`"))),
                    }
                }
                "log_timing" => t.log_timing = parse_value(k, v)?,
                "blocks" => s.blocks = parse_value(k, v)?,
                "nodes_per_block" => s.nodes_per_block = parse_value(k, v)?,
                "p_in" => s.p_in = parse_value(k, v)?,
                "p_out" => s.p_out = parse_value(k, v)?,
                "feat_dim" => s.feat_dim = parse_value(k, v)?,
                "noise_sigma" => s.noise_sigma = parse_value(k, v)?,
                _ => unreachable!("filtered by KEYS"),
            }
        }
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| GscError::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }
}
