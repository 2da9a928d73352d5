//! Loading and writing textual networks as TSV files.
//!
//! * edges: `src<TAB>dst` per line (any whitespace accepted), `#` comments
//! * texts: `id<TAB>free text` per line
//! * labels: `id<TAB>label` per line

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::Graph;

/// A graph with one raw text and an optional label per node.
#[derive(Clone, Debug, PartialEq)]
pub struct TextualNetwork {
    pub graph: Graph,
    pub texts: Vec<String>,
    pub labels: Option<Vec<Option<String>>>,
}

impl TextualNetwork {
    /// Indices of nodes that carry a label, in index order.
    pub fn labeled_nodes(&self) -> Vec<usize> {
        match &self.labels {
            Some(l) => (0..l.len()).filter(|&i| l[i].is_some()).collect(),
            None => Vec::new(),
        }
    }

    /// Restriction to `keep` (in the given order).
    pub fn subset(&self, keep: &[usize]) -> Self {
        Self {
            graph: self.graph.induced_subgraph(keep),
            texts: keep.iter().map(|&i| self.texts[i].clone()).collect(),
            labels: self
                .labels
                .as_ref()
                .map(|l| keep.iter().map(|&i| l[i].clone()).collect()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LoadOptions {
    /// Drop nodes without text together with their edges.
    pub require_text: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { require_text: true }
    }
}

/// What the loader discarded.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub dropped_nodes: usize,
    pub dropped_edges: usize,
    pub duplicate_edges: usize,
    pub self_loops: usize,
    pub unmatched_labels: usize,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn content_lines(raw: &str) -> impl Iterator<Item = (usize, &str)> {
    raw.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// `(line, a, b)` for every edge line.
pub fn parse_edges(path: &Path) -> Result<Vec<(usize, String, String)>> {
    let raw = read(path)?;
    let mut out = Vec::new();
    for (ln, line) in content_lines(&raw) {
        let fields: Vec<&str> = if line.contains('\t') {
            line.split('\t').map(str::trim).collect()
        } else {
            line.split_whitespace().collect()
        };
        if fields.len() != 2 || fields.iter().any(|f| f.is_empty()) {
            return Err(parse_err(path, ln, format!("expected `src<TAB>dst`, got {line:?}")));
        }
        out.push((ln, fields[0].to_string(), fields[1].to_string()));
    }
    Ok(out)
}

/// `(line, id, value)` for a two-column file whose second column may hold
/// spaces.
pub fn parse_keyed(path: &Path) -> Result<Vec<(usize, String, String)>> {
    let raw = read(path)?;
    let mut out = Vec::new();
    for (ln, line) in content_lines(&raw) {
        let Some((id, rest)) = line.split_once('\t') else {
            return Err(parse_err(path, ln, "expected `id<TAB>value`"));
        };
        let id = id.trim();
        if id.is_empty() {
            return Err(parse_err(path, ln, "empty node id"));
        }
        out.push((ln, id.to_string(), rest.trim().to_string()));
    }
    Ok(out)
}

/// Reads a dataset. Node order is first appearance in the text file, then
/// in the edge file.
pub fn load_dataset(
    edges_path: &Path,
    texts_path: &Path,
    labels_path: Option<&Path>,
    opts: LoadOptions,
) -> Result<(TextualNetwork, LoadReport)> {
    let mut report = LoadReport::default();
    let mut ids: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut texts: Vec<Option<String>> = Vec::new();

    for (ln, id, text) in parse_keyed(texts_path)? {
        if index.contains_key(&id) {
            return Err(parse_err(texts_path, ln, format!("duplicate text for node `{id}`")));
        }
        index.insert(id.clone(), ids.len());
        ids.push(id);
        texts.push(Some(text));
    }

    let mut seen = HashSet::new();
    let mut edges = Vec::new();
    for (_, a, b) in parse_edges(edges_path)? {
        let mut idx = |id: String| -> usize {
            *index.entry(id.clone()).or_insert_with(|| {
                ids.push(id);
                texts.push(None);
                ids.len() - 1
            })
        };
        let (ia, ib) = (idx(a), idx(b));
        if ia == ib {
            report.self_loops += 1;
            continue;
        }
        let key = (ia.min(ib), ia.max(ib));
        if !seen.insert(key) {
            report.duplicate_edges += 1;
            continue;
        }
        edges.push(key);
    }
    if report.self_loops > 0 {
        log::warn!("{}: skipped {} self-loop lines", edges_path.display(), report.self_loops);
    }
    if report.duplicate_edges > 0 {
        log::warn!(
            "{}: ignored {} duplicate edge lines",
            edges_path.display(),
            report.duplicate_edges
        );
    }

    let keep: Vec<usize> = if opts.require_text {
        (0..ids.len()).filter(|&i| texts[i].is_some()).collect()
    } else {
        (0..ids.len()).collect()
    };
    let mut remap = vec![usize::MAX; ids.len()];
    for (new, &old) in keep.iter().enumerate() {
        remap[old] = new;
    }
    report.dropped_nodes = ids.len() - keep.len();
    let kept_edges: Vec<(usize, usize)> = edges
        .iter()
        .filter(|&&(a, b)| remap[a] != usize::MAX && remap[b] != usize::MAX)
        .map(|&(a, b)| (remap[a], remap[b]))
        .collect();
    report.dropped_edges = edges.len() - kept_edges.len();
    if report.dropped_nodes > 0 {
        log::warn!(
            "dropped {} nodes without text and {} of their edges",
            report.dropped_nodes,
            report.dropped_edges
        );
    }
    if keep.is_empty() {
        return Err(Error::InvalidArgument("dataset has no nodes".into()));
    }

    let node_ids: Vec<String> = keep.iter().map(|&i| ids[i].clone()).collect();
    let node_texts: Vec<String> = keep
        .iter()
        .map(|&i| texts[i].clone().unwrap_or_default())
        .collect();
    let graph = Graph::new(node_ids, &kept_edges)?;

    let labels = match labels_path {
        Some(path) => {
            let mut labels = vec![None; graph.num_nodes()];
            for (ln, id, label) in parse_keyed(path)? {
                if label.is_empty() {
                    return Err(parse_err(path, ln, "empty label"));
                }
                match graph.index_of(&id) {
                    Some(i) => labels[i] = Some(label),
                    None => report.unmatched_labels += 1,
                }
            }
            Some(labels)
        }
        None => None,
    };

    Ok((
        TextualNetwork {
            graph,
            texts: node_texts,
            labels,
        },
        report,
    ))
}

fn create(path: &Path) -> Result<std::io::BufWriter<fs::File>> {
    Ok(std::io::BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?))
}

fn clean(field: &str) -> String {
    field.replace(['\t', '\n', '\r'], " ").trim().to_string()
}

pub fn write_edges(path: &Path, graph: &Graph) -> Result<()> {
    let mut w = create(path)?;
    for (a, b) in graph.edges() {
        writeln!(w, "{}\t{}", graph.id(a), graph.id(b)).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_keyed<S: AsRef<str>>(path: &Path, ids: &[String], values: &[S]) -> Result<()> {
    let mut w = create(path)?;
    for (id, v) in ids.iter().zip(values) {
        writeln!(w, "{id}\t{}", clean(v.as_ref())).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `edges.tsv`, `texts.tsv` and (if present) `labels.tsv` into `dir`.
pub fn write_dataset(dir: &Path, net: &TextualNetwork) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_edges(&dir.join("edges.tsv"), &net.graph)?;
    write_keyed(&dir.join("texts.tsv"), net.graph.ids(), &net.texts)?;
    if let Some(labels) = &net.labels {
        let (ids, vals): (Vec<String>, Vec<String>) = labels
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.as_ref().map(|l| (net.graph.id(i).to_string(), l.clone())))
            .unzip();
        write_keyed(&dir.join("labels.tsv"), &ids, &vals)?;
    }
    Ok(())
}
