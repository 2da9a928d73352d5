//! Checkpoint directories: a JSON manifest, raw little-endian tensor files
//! and a vocabulary file, optionally with the graph the model was trained
//! on.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::{load_dataset, write_edges, write_keyed, LoadOptions};
use crate::error::{Error, Result};
use crate::gp::InducingPointSet;
use crate::graph::{Graph, HopWeights};
use crate::model::{DetGPModel, EmbeddingParts};
use crate::text::{EmbeddingTable, Vocabulary};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    #[default]
    F64,
    F32,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F64 => 8,
            Dtype::F32 => 4,
        }
    }
}

/// How the training graph was derived from a full dataset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitRecord {
    Edges { keep_frac: f64, seed: u64 },
    Nodes { train_frac: f64, seed: u64 },
}

/// The graph and raw node texts a model was trained on.
#[derive(Clone, Debug, PartialEq)]
pub struct StoredGraph {
    pub graph: Graph,
    pub texts: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: DetGPModel,
    pub parts: EmbeddingParts,
    pub dtype: Dtype,
    pub graph: Option<StoredGraph>,
    pub split: Option<SplitRecord>,
}

impl Checkpoint {
    pub fn new(model: DetGPModel) -> Self {
        Self {
            model,
            parts: EmbeddingParts::Full,
            dtype: Dtype::F64,
            graph: None,
            split: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Hyperparameters {
    d_text: usize,
    d_struct: usize,
    hops: usize,
    inducing: usize,
    kernel_bias: f64,
    jitter: f64,
    parts: EmbeddingParts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: Dtype,
    filename: String,
    byte_length: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct GraphFiles {
    nodes_file: String,
    edges_file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    hyperparameters: Hyperparameters,
    tensors: Vec<TensorEntry>,
    vocab_file: String,
    graph: Option<GraphFiles>,
    split: Option<SplitRecord>,
}

const VOCAB_FILE: &str = "vocab.tsv";
const NODES_FILE: &str = "nodes.tsv";
const EDGES_FILE: &str = "edges.tsv";

fn encode(values: &[f64], dtype: Dtype) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * dtype.size());
    for &v in values {
        match dtype {
            Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
            Dtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
        }
    }
    out
}

fn decode(bytes: &[u8], dtype: Dtype) -> Vec<f64> {
    match dtype {
        Dtype::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect(),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `ckpt` into `dir`, creating it if needed.
pub fn save_checkpoint(ckpt: &Checkpoint, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let m = &ckpt.model;
    let tensors: [(&str, Vec<usize>, Vec<f64>); 4] = [
        (
            "word_embeddings",
            vec![m.table.weights.nrows(), m.table.weights.ncols()],
            m.table.weights.iter().copied().collect(),
        ),
        (
            "inducing_z",
            vec![m.inducing.z.nrows(), m.inducing.z.ncols()],
            m.inducing.z.iter().copied().collect(),
        ),
        (
            "inducing_u",
            vec![m.inducing.u.nrows(), m.inducing.u.ncols()],
            m.inducing.u.iter().copied().collect(),
        ),
        ("hop_logits", vec![m.hops.logits.len()], m.hops.logits.clone()),
    ];
    let mut entries = Vec::new();
    for (name, shape, values) in tensors {
        let filename = format!("{name}.bin");
        let bytes = encode(&values, ckpt.dtype);
        write_file(&dir.join(&filename), &bytes)?;
        entries.push(TensorEntry {
            name: name.to_string(),
            shape,
            dtype: ckpt.dtype,
            filename,
            byte_length: bytes.len() as u64,
        });
    }

    let vocab_path = dir.join(VOCAB_FILE);
    let mut w = std::io::BufWriter::new(fs::File::create(&vocab_path).map_err(|e| Error::io(&vocab_path, e))?);
    for (i, t) in m.vocab.tokens().iter().enumerate() {
        writeln!(w, "{t}\t{i}").map_err(|e| Error::io(&vocab_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&vocab_path, e))?;

    let graph = match &ckpt.graph {
        Some(g) => {
            write_keyed(&dir.join(NODES_FILE), g.graph.ids(), &g.texts)?;
            write_edges(&dir.join(EDGES_FILE), &g.graph)?;
            Some(GraphFiles {
                nodes_file: NODES_FILE.into(),
                edges_file: EDGES_FILE.into(),
            })
        }
        None => None,
    };

    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        hyperparameters: Hyperparameters {
            d_text: m.text_dim(),
            d_struct: m.struct_dim(),
            hops: m.hops.max_hops(),
            inducing: m.inducing.num_points(),
            kernel_bias: m.inducing.bias,
            jitter: m.inducing.jitter,
            parts: ckpt.parts,
        },
        tensors: entries,
        vocab_file: VOCAB_FILE.into(),
        graph,
        split: ckpt.split,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    write_file(&dir.join(MANIFEST_FILE), text.as_bytes())
}

fn read_tensor(dir: &Path, entry: &TensorEntry, expected_shape: &[usize]) -> Result<Vec<f64>> {
    if entry.shape != expected_shape {
        return Err(Error::Tensor {
            name: entry.name.clone(),
            message: format!("shape {:?} does not match hyperparameters {:?}", entry.shape, expected_shape),
        });
    }
    let declared = entry.shape.iter().product::<usize>() as u64 * entry.dtype.size() as u64;
    if entry.byte_length != declared {
        return Err(Error::Tensor {
            name: entry.name.clone(),
            message: format!(
                "byte_length {} disagrees with shape {:?} of {:?}",
                entry.byte_length, entry.shape, entry.dtype
            ),
        });
    }
    let path = dir.join(&entry.filename);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if bytes.len() as u64 != declared {
        return Err(Error::TruncatedTensor {
            name: entry.name.clone(),
            expected: declared,
            found: bytes.len() as u64,
        });
    }
    Ok(decode(&bytes, entry.dtype))
}

fn read_vocab(path: &Path) -> Result<Vocabulary> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut tokens = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        let bad = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let (tok, idx) = line
            .split_once('\t')
            .ok_or_else(|| bad("expected `token<TAB>index`".into()))?;
        let idx: usize = idx.parse().map_err(|_| bad(format!("bad index {idx:?}")))?;
        if idx != tokens.len() {
            return Err(bad(format!("index {idx} out of sequence")));
        }
        tokens.push(tok.to_string());
    }
    Vocabulary::from_tokens(tokens)
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let path = dir.join(MANIFEST_FILE);
    let raw = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let value: serde_json::Value = serde_json::from_str(&raw)?;
    let found = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::InvalidArgument("manifest lacks format_version".into()))?;
    if found != FORMAT_VERSION as u64 {
        return Err(Error::VersionMismatch {
            found: found.min(u32::MAX as u64) as u32,
            expected: FORMAT_VERSION,
        });
    }
    let manifest: Manifest = serde_json::from_value(value)?;
    let hp = &manifest.hyperparameters;
    let vocab = read_vocab(&dir.join(&manifest.vocab_file))?;

    let entry = |name: &str| {
        manifest
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Tensor {
                name: name.to_string(),
                message: "missing from manifest".into(),
            })
    };
    let dtype = entry("word_embeddings")?.dtype;
    if manifest.tensors.iter().any(|t| t.dtype != dtype) {
        return Err(Error::InvalidArgument("tensors use mixed dtypes".into()));
    }
    let table = read_tensor(dir, entry("word_embeddings")?, &[vocab.len(), hp.d_text])?;
    let z = read_tensor(dir, entry("inducing_z")?, &[hp.inducing, hp.d_text])?;
    let u = read_tensor(dir, entry("inducing_u")?, &[hp.inducing, hp.d_struct])?;
    let logits = read_tensor(dir, entry("hop_logits")?, &[hp.hops + 1])?;
    let shaped = |v: Vec<f64>, r: usize, c: usize| Array2::from_shape_vec((r, c), v).expect("length checked");

    let n_vocab = vocab.len();
    let model = DetGPModel::from_parts(
        vocab,
        EmbeddingTable {
            weights: shaped(table, n_vocab, hp.d_text),
        },
        InducingPointSet::new(shaped(z, hp.inducing, hp.d_text), shaped(u, hp.inducing, hp.d_struct), hp.kernel_bias, hp.jitter)?,
        HopWeights::from_logits(logits)?,
    )?;

    let graph = match &manifest.graph {
        Some(files) => {
            let (net, _) = load_dataset(
                &dir.join(&files.edges_file),
                &dir.join(&files.nodes_file),
                None,
                LoadOptions { require_text: true },
            )?;
            Some(StoredGraph {
                graph: net.graph,
                texts: net.texts,
            })
        }
        None => None,
    };
    Ok(Checkpoint {
        model,
        parts: hp.parts,
        dtype,
        graph,
        split: manifest.split,
    })
}
