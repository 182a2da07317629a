//! Generative subgraph contrast for self-supervised node embeddings.
//!
//! BFS-sampled subgraphs are paired with attention-interpolated generated
//! counterparts; an entropic optimal-transport loss (Wasserstein on node
//! embeddings plus Gromov-Wasserstein on intra-subgraph structure, sharing
//! one Sinkhorn plan) trains a one-layer GCN encoder. Frozen embeddings are
//! scored with a logistic-regression probe.

pub mod config;
pub mod contrastive;
pub mod encoder;
mod error;
pub mod generator;
pub mod graph;
pub mod ot;
pub mod probe;
pub mod sampler;
pub mod synth;
pub mod tensor;
pub mod train;

pub use config::{DataPaths, DistanceKind, RunConfig, SbmConfig, TrainConfig};
pub use contrastive::{build_pairs, gwd_loss, total_loss, wd_loss, ContrastBatch, PairDistances};
pub use encoder::{encode, EncoderParams};
pub use error::{GscError, Result};
pub use generator::{generate_subgraph, GeneratedSubgraph, GeneratorParams, Neighborhood};
pub use graph::{load_graph, Graph, NormAdj, Split};
pub use ot::{gromov_wasserstein, sinkhorn, wasserstein, PlanGradient, SinkhornOptions, TransportPlan};
pub use probe::{linear_probe, ProbeConfig, ProbeResult};
pub use sampler::{bfs_sample, RngStream, Subgraph};
pub use synth::{gen_synth_sbm, write_dataset};
pub use tensor::{Tape, Tensor, Var};
pub use train::{embed_with, train, train_with, Counterpart, EpochMetrics, Model, TrainOutcome};
