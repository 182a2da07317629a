//! `gsc`: train, embed, evaluate and inspect generative subgraph contrast
//! models from flat `key = value` config files.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 config error, 3 input error.

mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use gsc_core::graph::{format_matrix_csv, parse_features};
use gsc_core::ot::{intra_distances_sampled, pair_distance};
use gsc_core::train::format_metrics_log;
use gsc_core::{
    bfs_sample, embed_with, gen_synth_sbm, linear_probe, load_graph, train, write_dataset, Graph, GscError, Model,
    ProbeConfig, RngStream, RunConfig,
};

use manifest::{digest, RunManifest};

#[derive(Parser)]
#[command(name = "gsc", version, about = "Generative subgraph contrast with optimal-transport losses")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the `seed` key.
    #[arg(long)]
    seed: Option<u64>,
    /// Artifact directory.
    #[arg(long, default_value = "gsc-out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train encoder and generator; writes checkpoints, metrics log and manifest.
    Train(Common),
    /// Write node embeddings from a checkpoint.
    Embed(Common),
    /// Linear-probe evaluation of an embeddings file.
    Eval(Common),
    /// Wasserstein and Gromov-Wasserstein distance between two sampled subgraphs.
    OtDist {
        #[command(flatten)]
        common: Common,
        /// Center of the first subgraph.
        #[arg(long)]
        a: usize,
        /// Center of the second subgraph.
        #[arg(long)]
        b: usize,
    },
    /// Write a synthetic stochastic-block-model dataset.
    GenSynth(Common),
}

struct Failure {
    code: u8,
    message: String,
}

impl From<GscError> for Failure {
    fn from(e: GscError) -> Self {
        let code = match e {
            GscError::Config { .. } => 2,
            GscError::Ingestion { .. } => 3,
            _ => 1,
        };
        Failure { code, message: e.to_string() }
    }
}

type CmdResult = Result<(), Failure>;

/// Errors while reading inputs; unreadable files count as input errors.
fn input(e: GscError) -> Failure {
    match e {
        GscError::Io { .. } => Failure { code: 3, message: e.to_string() },
        other => other.into(),
    }
}

fn runtime(path: &Path, e: std::io::Error) -> Failure {
    Failure { code: 1, message: format!("{}: {e}", path.display()) }
}

fn required<'a>(value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, Failure> {
    value.as_deref().ok_or_else(|| GscError::Config { field: key.into(), msg: "required by this command".into() }.into())
}

fn load_config(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::load(&common.config).map_err(input)?;
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
        cfg.sbm.seed = seed;
    }
    Ok(cfg)
}

fn load_inputs(cfg: &RunConfig, manifest: &mut RunManifest) -> Result<Graph, Failure> {
    let d = &cfg.data;
    let edges = required(&d.edges, "edges")?;
    let features = required(&d.features, "features")?;
    let g = load_graph(edges, features, d.labels.as_deref(), d.splits.as_deref()).map_err(input)?;
    for p in [Some(edges), Some(features), d.labels.as_deref(), d.splits.as_deref()].into_iter().flatten() {
        record_input(manifest, p)?;
    }
    Ok(g)
}

fn record_input(manifest: &mut RunManifest, path: &Path) -> CmdResult {
    let d = digest(path).map_err(|e| Failure { code: 3, message: format!("{}: {e}", path.display()) })?;
    manifest.inputs.push(d);
    Ok(())
}

fn write_artifact(manifest: &mut RunManifest, path: &Path, bytes: &[u8]) -> CmdResult {
    std::fs::write(path, bytes).map_err(|e| runtime(path, e))?;
    manifest.artifacts.push(digest(path).map_err(|e| runtime(path, e))?);
    Ok(())
}

fn finish(out: &Path, mut manifest: RunManifest, started: Instant) -> CmdResult {
    manifest.timings.total_seconds = started.elapsed().as_secs_f64();
    let path = out.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, json + "\n").map_err(|e| runtime(&path, e))
}

fn load_model(cfg: &RunConfig, manifest: &mut RunManifest) -> Result<Model, Failure> {
    let path = required(&cfg.data.checkpoint, "checkpoint")?;
    let model = Model::load(path).map_err(input)?;
    record_input(manifest, path)?;
    Ok(model)
}

fn cmd_train(common: &Common) -> CmdResult {
    let started = Instant::now();
    let cfg = load_config(common)?;
    let mut manifest = RunManifest::new("train", &cfg);
    let g = load_inputs(&cfg, &mut manifest)?;
    let out = &common.out;
    std::fs::create_dir_all(out).map_err(|e| runtime(out, e))?;

    let outcome = train(&g, &cfg.train)?;
    let mut bytes = Vec::new();
    outcome.final_model.write(&mut bytes)?;
    write_artifact(&mut manifest, &out.join("checkpoint.bin"), &bytes)?;
    bytes.clear();
    outcome.best_model.write(&mut bytes)?;
    write_artifact(&mut manifest, &out.join("checkpoint_best.bin"), &bytes)?;
    write_artifact(&mut manifest, &out.join("metrics.tsv"), format_metrics_log(&outcome.metrics).as_bytes())?;
    manifest.timings.epoch_seconds = outcome.epoch_seconds.clone();

    let last = outcome.metrics.last();
    println!(
        "epochs={} final_total={} best_epoch={} selection={:?}",
        outcome.metrics.len(),
        last.map_or(f64::NAN, |m| m.total),
        outcome.best_epoch,
        outcome.selection
    );
    finish(out, manifest, started)
}

fn cmd_embed(common: &Common) -> CmdResult {
    let started = Instant::now();
    let cfg = load_config(common)?;
    let mut manifest = RunManifest::new("embed", &cfg);
    let g = load_inputs(&cfg, &mut manifest)?;
    let model = load_model(&cfg, &mut manifest)?;
    let h = embed_with(&g, &model)?;
    let out = &common.out;
    std::fs::create_dir_all(out).map_err(|e| runtime(out, e))?;
    let path = out.join("embeddings.csv");
    write_artifact(&mut manifest, &path, format_matrix_csv(&h).as_bytes())?;
    println!("rows={} cols={} path={}", h.rows(), h.cols(), path.display());
    finish(out, manifest, started)
}

fn cmd_eval(common: &Common) -> CmdResult {
    let started = Instant::now();
    let cfg = load_config(common)?;
    let mut manifest = RunManifest::new("eval", &cfg);
    let d = &cfg.data;
    let emb_path = required(&d.embeddings, "embeddings")?;
    let labels_path = required(&d.labels, "labels")?;
    let splits_path = required(&d.splits, "splits")?;
    let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| input(GscError::Io { path: p.into(), source: e }));
    let x = parse_features(emb_path, &read(emb_path)?).map_err(input)?;
    let n = x.rows();
    let labels = gsc_core::graph::parse_labels(labels_path, &read(labels_path)?, n).map_err(input)?;
    let splits = gsc_core::graph::parse_splits(splits_path, &read(splits_path)?, n).map_err(input)?;
    for p in [emb_path, labels_path, splits_path] {
        record_input(&mut manifest, p)?;
    }
    let r = linear_probe(&x, &labels, &splits, &ProbeConfig::default())?;
    println!("accuracy={:.6} micro_f1={:.6} evaluated={}", r.accuracy, r.micro_f1, r.evaluated);
    let out = &common.out;
    std::fs::create_dir_all(out).map_err(|e| runtime(out, e))?;
    finish(out, manifest, started)
}

fn cmd_ot_dist(common: &Common, a: usize, b: usize) -> CmdResult {
    let started = Instant::now();
    let cfg = load_config(common)?;
    let mut manifest = RunManifest::new("ot-dist", &cfg);
    let g = load_inputs(&cfg, &mut manifest)?;
    let h = match cfg.data.checkpoint {
        Some(_) => embed_with(&g, &load_model(&cfg, &mut manifest)?)?,
        None => g.features().clone(),
    };
    let t = &cfg.train;
    // one stream per center, so equal centers give identical subgraphs
    let sample = |c: usize| bfs_sample(&g, c, t.k, &mut RngStream::derive(t.seed, &[c as u64]));
    let (s1, s2) = (sample(a)?, sample(b)?);
    let d = pair_distance(
        &s1.embeddings(&h)?,
        &intra_distances_sampled(&s1.adjacency, t.tau)?,
        &s2.embeddings(&h)?,
        &intra_distances_sampled(&s2.adjacency, t.tau)?,
        t.tau,
        &t.sinkhorn(),
    )?;
    println!(
        "d_w={:.12} d_gw={:.12} violation={:.3e} iterations={} converged={}",
        d.wasserstein, d.gromov, d.plan.violation, d.plan.iterations, d.plan.converged
    );
    let out = &common.out;
    std::fs::create_dir_all(out).map_err(|e| runtime(out, e))?;
    finish(out, manifest, started)
}

fn cmd_gen_synth(common: &Common) -> CmdResult {
    let started = Instant::now();
    let cfg = load_config(common)?;
    let mut manifest = RunManifest::new("gen-synth", &cfg);
    manifest.seed = cfg.sbm.seed;
    let g = gen_synth_sbm(&cfg.sbm)?;
    let out = &common.out;
    let files = write_dataset(&g, out)?;
    for p in [&files.edges, &files.features, &files.labels, &files.splits] {
        manifest.artifacts.push(digest(p).map_err(|e| runtime(p, e))?);
    }
    println!("nodes={} edges={} dir={}", g.n_nodes(), g.n_edges(), out.display());
    finish(out, manifest, started)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(c) => cmd_train(c),
        Command::Embed(c) => cmd_embed(c),
        Command::Eval(c) => cmd_eval(c),
        Command::OtDist { common, a, b } => cmd_ot_dist(common, *a, *b),
        Command::GenSynth(c) => cmd_gen_synth(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("gsc: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
