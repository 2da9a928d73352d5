//! The `detgp` command-line interface.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Dtype, SplitRecord, StoredGraph};
use crate::dataset::{load_dataset, parse_edges, parse_keyed, write_dataset, LoadOptions, TextualNetwork};
use crate::dynamic::insert_nodes;
use crate::error::{Error, Result};
use crate::eval::{
    dynamic_eval, link_prediction_eval, node_classification_eval, split_edges, split_nodes, DynamicBackend,
    DEFAULT_L2,
};
use crate::model::{seeded_rng, train_with, DetGPModel, EmbeddingParts, ModelConfig, TrainConfig};
use crate::synth::{planted_partition, SynthConfig};
use crate::text::{tokenize, Vocabulary};

/// RNG stream for train/test splits.
pub const SPLIT_STREAM: u64 = 1;
/// RNG stream for classification splits and dynamic test negatives.
pub const EVAL_STREAM: u64 = 2;
/// RNG stream for parameter initialization.
pub const INIT_STREAM: u64 = 3;

#[derive(Debug, Parser)]
#[command(name = "detgp", version, about = "Textual network embedding with diffusion-smoothed sparse GPs")]
pub struct Cli {
    /// Worker threads for intra-step parallelism (0 = all cores).
    #[arg(long, global = true, env = "DETGP_THREADS")]
    pub threads: Option<usize>,
    /// Fixed-order reductions. Every reduction in this implementation is
    /// fixed-order, so results never depend on the thread count.
    #[arg(long, global = true, default_value_t = true, action = clap::ArgAction::Set)]
    pub deterministic: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write a checkpoint plus a loss trace.
    Train(TrainArgs),
    /// Link-prediction AUC on held-out edges.
    EvalLink(EvalLinkArgs),
    /// Node-classification Macro-F1 on held-out nodes.
    EvalClass(EvalClassArgs),
    /// Link prediction and classification for nodes unseen in training.
    EvalDynamic(EvalDynamicArgs),
    /// Embed new nodes with a trained model and write all embeddings.
    Insert(InsertArgs),
    /// Write embeddings or inducing points as TSV.
    Export(ExportArgs),
    /// Generate a synthetic labeled textual network.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub edges: PathBuf,
    #[arg(long)]
    pub texts: PathBuf,
    /// Keep nodes without text (with empty text) instead of dropping them.
    #[arg(long)]
    pub keep_textless: bool,
    /// Dataset name used in metric rows (default: the edge file's directory).
    #[arg(long)]
    pub dataset: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PartsArg {
    Full,
    TextOnly,
    StructureOnly,
}

impl From<PartsArg> for EmbeddingParts {
    fn from(p: PartsArg) -> Self {
        match p {
            PartsArg::Full => EmbeddingParts::Full,
            PartsArg::TextOnly => EmbeddingParts::TextOnly,
            PartsArg::StructureOnly => EmbeddingParts::StructureOnly,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file with optional `model` and `train` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub hops: Option<usize>,
    #[arg(long)]
    pub inducing: Option<usize>,
    #[arg(long)]
    pub dim_text: Option<usize>,
    #[arg(long)]
    pub dim_struct: Option<usize>,
    #[arg(long)]
    pub batch_edges: Option<usize>,
    #[arg(long)]
    pub k_neg: Option<usize>,
    /// Train on a random fraction of the edges (for eval-link).
    #[arg(long, conflicts_with = "train_frac")]
    pub keep_frac: Option<f64>,
    /// Train on the subgraph of a random fraction of nodes (for eval-dynamic).
    #[arg(long)]
    pub train_frac: Option<f64>,
    /// Embedding blocks used by the loss.
    #[arg(long, value_enum)]
    pub parts: Option<PartsArg>,
    #[arg(long, value_enum, default_value_t = DtypeArg::F64)]
    pub dtype: DtypeArg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DtypeArg {
    F64,
    F32,
}

#[derive(Debug, Args)]
pub struct EvalLinkArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub keep_frac: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Embedding blocks to score with (default: those used in training).
    #[arg(long, value_enum)]
    pub parts: Option<PartsArg>,
}

#[derive(Debug, Args)]
pub struct EvalClassArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub train_frac: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_L2)]
    pub l2: f64,
    #[arg(long, value_enum)]
    pub parts: Option<PartsArg>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BaselineArg {
    Detgp,
    AggMean,
    AggMax,
}

#[derive(Debug, Args)]
pub struct EvalDynamicArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub train_frac: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = BaselineArg::Detgp)]
    pub baseline: BaselineArg,
    #[arg(long, default_value_t = DEFAULT_L2)]
    pub l2: f64,
    #[arg(long, value_enum)]
    pub parts: Option<PartsArg>,
}

#[derive(Debug, Args)]
pub struct InsertArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// `id<TAB>text` lines for the new nodes.
    #[arg(long)]
    pub new_texts: PathBuf,
    /// Edge lines touching the new nodes.
    #[arg(long)]
    pub new_edges: PathBuf,
    /// Output TSV of embeddings for all nodes after insertion.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ExportWhat {
    Embeddings,
    Inducing,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ExportFormat {
    Tsv,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum)]
    pub what: ExportWhat,
    #[arg(long, value_enum, default_value_t = ExportFormat::Tsv)]
    pub format: ExportFormat,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub nodes_per_class: Option<usize>,
}

/// Settings echoed to `config.json` next to a checkpoint.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    /// Defaults, overridden by the file, overridden by flags.
    pub fn resolve(args: &TrainArgs) -> Result<Self> {
        let mut cfg = match &args.config {
            Some(path) => {
                let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                serde_json::from_str(&raw)?
            }
            None => RunConfig::default(),
        };
        let m = &mut cfg.model;
        let t = &mut cfg.train;
        if let Some(v) = args.seed {
            t.seed = v;
        }
        if let Some(v) = args.epochs {
            t.epochs = v;
        }
        if let Some(v) = args.lr {
            t.lr = v;
        }
        if let Some(v) = args.batch_edges {
            t.batch_edges = v;
        }
        if let Some(v) = args.k_neg {
            t.k_neg = v;
        }
        if let Some(v) = args.parts {
            t.parts = v.into();
        }
        if let Some(v) = args.hops {
            m.hops = v;
        }
        if let Some(v) = args.inducing {
            m.inducing = v;
        }
        if let Some(v) = args.dim_text {
            m.d_text = v;
        }
        if let Some(v) = args.dim_struct {
            m.d_struct = v;
        }
        t.validate()?;
        Ok(cfg)
    }
}

fn load_data(data: &DataArgs, labels: Option<&Path>) -> Result<TextualNetwork> {
    let opts = LoadOptions {
        require_text: !data.keep_textless,
    };
    let (net, report) = load_dataset(&data.edges, &data.texts, labels, opts)?;
    log::info!(
        "loaded {} nodes, {} edges ({} textless nodes dropped)",
        net.graph.num_nodes(),
        net.graph.num_edges(),
        report.dropped_nodes
    );
    Ok(net)
}

fn dataset_name(data: &DataArgs) -> String {
    data.dataset.clone().unwrap_or_else(|| {
        data.edges
            .canonicalize()
            .ok()
            .and_then(|p| p.parent().and_then(|d| d.file_name()).map(|s| s.to_string_lossy().into_owned()))
            .unwrap_or_else(|| "dataset".into())
    })
}

fn write_row<W: Write>(out: &mut W, task: &str, dataset: &str, split: &str, seed: u64, metric: &str, value: f64) -> Result<()> {
    writeln!(out, "{task}\t{dataset}\t{split}\t{seed}\t{metric}\t{value}").map_err(|e| Error::io("<stdout>", e))
}

fn check_split(ckpt: &Checkpoint, expected: SplitRecord) -> Result<()> {
    match ckpt.split {
        Some(rec) if rec != expected => Err(Error::InvalidArgument(format!(
            "checkpoint was trained on split {rec:?}, not {expected:?}"
        ))),
        _ => Ok(()),
    }
}

fn write_matrix(path: &Path, ids: &[String], m: ArrayView2<'_, f64>) -> Result<()> {
    let mut w = std::io::BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for (id, row) in ids.iter().zip(m.rows()) {
        let mut line = id.clone();
        for v in row {
            line.push('\t');
            line.push_str(&v.to_string());
        }
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn node_split_for(net: &TextualNetwork, train_frac: f64, seed: u64) -> Result<crate::eval::NodeSplit> {
    let all: Vec<usize> = (0..net.graph.num_nodes()).collect();
    split_nodes(&all, train_frac, &mut seeded_rng(seed, SPLIT_STREAM))
}

/// Trains per `args`; returns the checkpoint that was written.
pub fn cmd_train(args: &TrainArgs) -> Result<Checkpoint> {
    let cfg = RunConfig::resolve(args)?;
    let net = load_data(&args.data, args.labels.as_deref())?;
    let seed = cfg.train.seed;
    let (train_net, split) = if let Some(keep) = args.keep_frac {
        let s = split_edges(&net.graph, keep, &mut seeded_rng(seed, SPLIT_STREAM))?;
        let sub = TextualNetwork {
            graph: s.train_graph,
            texts: net.texts.clone(),
            labels: net.labels.clone(),
        };
        (sub, Some(SplitRecord::Edges { keep_frac: keep, seed }))
    } else if let Some(frac) = args.train_frac {
        let s = node_split_for(&net, frac, seed)?;
        (net.subset(&s.train), Some(SplitRecord::Nodes { train_frac: frac, seed }))
    } else {
        (net, None)
    };

    let corpus: Vec<Vec<String>> = train_net.texts.iter().map(|t| tokenize(t)).collect();
    let vocab = Vocabulary::build(&corpus, cfg.model.min_count)?;
    let mut model = DetGPModel::new(vocab, &cfg.model, &mut seeded_rng(seed, INIT_STREAM))?;
    let texts = model.tokenize(&train_net.texts);

    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let trace_path = args.out.join("loss_trace.tsv");
    let mut trace = String::from("epoch\tloss\n");
    train_with(&mut model, &train_net.graph, &texts, &cfg.train, |epoch, loss| {
        log::info!("epoch {epoch}: loss {loss:.6}");
        trace.push_str(&format!("{epoch}\t{loss}\n"));
    })?;
    fs::write(&trace_path, trace).map_err(|e| Error::io(&trace_path, e))?;

    let ckpt = Checkpoint {
        model,
        parts: cfg.train.parts,
        dtype: match args.dtype {
            DtypeArg::F64 => Dtype::F64,
            DtypeArg::F32 => Dtype::F32,
        },
        graph: Some(StoredGraph {
            graph: train_net.graph,
            texts: train_net.texts,
        }),
        split,
    };
    save_checkpoint(&ckpt, &args.out)?;
    let echo = serde_json::json!({
        "model": cfg.model,
        "train": cfg.train,
        "data": {
            "edges": args.data.edges,
            "texts": args.data.texts,
            "labels": args.labels,
            "keep_textless": args.data.keep_textless,
            "split": split,
        },
        "dtype": ckpt.dtype,
    });
    let cfg_path = args.out.join("config.json");
    let mut text = serde_json::to_string_pretty(&echo)?;
    text.push('\n');
    fs::write(&cfg_path, text).map_err(|e| Error::io(&cfg_path, e))?;
    Ok(ckpt)
}

pub fn cmd_eval_link<W: Write>(args: &EvalLinkArgs, out: &mut W) -> Result<f64> {
    if args.keep_frac >= 1.0 {
        return Err(Error::InvalidArgument("--keep-frac 1.0 leaves no held-out edges".into()));
    }
    let ckpt = load_checkpoint(&args.checkpoint)?;
    check_split(&ckpt, SplitRecord::Edges { keep_frac: args.keep_frac, seed: args.seed })?;
    let net = load_data(&args.data, None)?;
    let split = split_edges(&net.graph, args.keep_frac, &mut seeded_rng(args.seed, SPLIT_STREAM))?;
    let texts = ckpt.model.tokenize(&net.texts);
    let h = ckpt.model.forward(&split.train_graph, &texts)?;
    let parts: EmbeddingParts = args.parts.map(Into::into).unwrap_or(ckpt.parts);
    let value = link_prediction_eval(parts.select(h.view(), ckpt.model.text_dim()).view(), &split)?;
    write_row(out, "link", &dataset_name(&args.data), &format!("keep={}", args.keep_frac), args.seed, "auc", value)?;
    Ok(value)
}

pub fn cmd_eval_class<W: Write>(args: &EvalClassArgs, out: &mut W) -> Result<f64> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let net = load_data(&args.data, Some(&args.labels))?;
    let labels = net.labels.clone().expect("labels requested");
    let split = split_nodes(&net.labeled_nodes(), args.train_frac, &mut seeded_rng(args.seed, EVAL_STREAM))?;
    let texts = ckpt.model.tokenize(&net.texts);
    let h = ckpt.model.forward(&net.graph, &texts)?;
    let parts: EmbeddingParts = args.parts.map(Into::into).unwrap_or(ckpt.parts);
    let value = node_classification_eval(parts.select(h.view(), ckpt.model.text_dim()).view(), &split, &labels, args.l2)?;
    write_row(out, "class", &dataset_name(&args.data), &format!("train={}", args.train_frac), args.seed, "macro_f1", value)?;
    Ok(value)
}

pub fn cmd_eval_dynamic<W: Write>(args: &EvalDynamicArgs, out: &mut W) -> Result<crate::eval::DynamicReport> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    check_split(&ckpt, SplitRecord::Nodes { train_frac: args.train_frac, seed: args.seed })?;
    let net = load_data(&args.data, args.labels.as_deref())?;
    let split = node_split_for(&net, args.train_frac, args.seed)?;
    if let Some(stored) = &ckpt.graph {
        let train_ids: HashSet<&str> = split.train.iter().map(|&i| net.graph.id(i)).collect();
        if stored.graph.ids().iter().any(|id| !train_ids.contains(id.as_str())) {
            return Err(Error::InvalidArgument("checkpoint graph contains nodes outside the training split".into()));
        }
    }
    let texts = ckpt.model.tokenize(&net.texts);
    let backend = match args.baseline {
        BaselineArg::Detgp => DynamicBackend::Detgp,
        BaselineArg::AggMean => DynamicBackend::AggMean,
        BaselineArg::AggMax => DynamicBackend::AggMax,
    };
    let parts: EmbeddingParts = args.parts.map(Into::into).unwrap_or(ckpt.parts);
    let report = dynamic_eval(
        &ckpt.model,
        &net.graph,
        &texts,
        net.labels.as_deref(),
        &split,
        backend,
        parts,
        args.l2,
        &mut seeded_rng(args.seed, EVAL_STREAM),
    )?;
    let name = dataset_name(&args.data);
    let task = format!("dynamic-{}", backend_name(backend));
    let split_param = format!("train={}", args.train_frac);
    write_row(out, &task, &name, &split_param, args.seed, "auc", report.auc)?;
    if let Some(f1) = report.macro_f1 {
        write_row(out, &task, &name, &split_param, args.seed, "macro_f1", f1)?;
    }
    Ok(report)
}

fn backend_name(b: DynamicBackend) -> &'static str {
    match b {
        DynamicBackend::Detgp => "detgp",
        DynamicBackend::AggMean => "agg-mean",
        DynamicBackend::AggMax => "agg-max",
    }
}

fn stored_graph(ckpt: &Checkpoint) -> Result<&StoredGraph> {
    ckpt.graph
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("checkpoint does not include a graph".into()))
}

pub fn cmd_insert(args: &InsertArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let stored = stored_graph(&ckpt)?;
    let new_texts: Vec<(String, String)> = parse_keyed(&args.new_texts)?
        .into_iter()
        .map(|(_, id, t)| (id, t))
        .collect();
    let new_edges: Vec<(String, String)> = parse_edges(&args.new_edges)?
        .into_iter()
        .map(|(_, a, b)| (a, b))
        .collect();
    let texts = ckpt.model.tokenize(&stored.texts);
    let ins = insert_nodes(&ckpt.model, &stored.graph, &texts, &new_texts, &new_edges)?;
    let h = ckpt.parts.select(ins.embeddings.view(), ckpt.model.text_dim());
    write_matrix(&args.out, ins.graph.ids(), h.view())
}

pub fn cmd_export(args: &ExportArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    match args.what {
        ExportWhat::Embeddings => {
            let stored = stored_graph(&ckpt)?;
            let texts = ckpt.model.tokenize(&stored.texts);
            let h = ckpt.model.forward(&stored.graph, &texts)?;
            let h = ckpt.parts.select(h.view(), ckpt.model.text_dim());
            write_matrix(&args.out, stored.graph.ids(), h.view())
        }
        ExportWhat::Inducing => {
            let z = &ckpt.model.inducing.z;
            let ids: Vec<String> = (0..z.nrows()).map(|i| format!("z{i}")).collect();
            write_matrix(&args.out, &ids, z.view())
        }
    }
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let mut cfg = SynthConfig::default();
    if let Some(v) = args.classes {
        cfg.classes = v;
    }
    if let Some(v) = args.nodes_per_class {
        cfg.nodes_per_class = v;
    }
    let net = planted_partition(&cfg, args.seed)?;
    write_dataset(&args.out, &net)
}

/// Runs a parsed command line, writing metric rows to `out`.
pub fn run<W: Write>(cli: &Cli, out: &mut W) -> Result<()> {
    if let Some(n) = cli.threads {
        // a pool may already exist when called twice in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &cli.command {
        Command::Train(a) => cmd_train(a).map(|_| ()),
        Command::EvalLink(a) => cmd_eval_link(a, out).map(|_| ()),
        Command::EvalClass(a) => cmd_eval_class(a, out).map(|_| ()),
        Command::EvalDynamic(a) => cmd_eval_dynamic(a, out).map(|_| ()),
        Command::Insert(a) => cmd_insert(a),
        Command::Export(a) => cmd_export(a),
        Command::Synth(a) => cmd_synth(a),
    }
}
