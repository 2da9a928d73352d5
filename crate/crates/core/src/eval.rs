//! Link prediction and node classification protocols with their metrics
//! and splitters.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamic::{insert_tokenized, neighbor_aggregate, Aggregate};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::{DetGPModel, EmbeddingParts};
use crate::text::TokenizedText;

/// Training graph plus held-out positive and sampled negative pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeSplit {
    pub train_graph: Graph,
    pub test_pos: Vec<(usize, usize)>,
    pub test_neg: Vec<(usize, usize)>,
}

/// Disjoint train and test node indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

const MAX_NEG_DRAWS_PER_PAIR: usize = 1000;

/// `count` distinct uniform non-edges `(a, b)`, `a < b`, among `pool`.
fn sample_non_edges<R: Rng + ?Sized>(
    graph: &Graph,
    pool: &[usize],
    count: usize,
    rng: &mut R,
) -> Result<Vec<(usize, usize)>> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(count);
    let mut budget = count.saturating_mul(MAX_NEG_DRAWS_PER_PAIR).max(MAX_NEG_DRAWS_PER_PAIR);
    while out.len() < count {
        if budget == 0 || pool.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "could not sample {count} distinct non-edges"
            )));
        }
        budget -= 1;
        let a = pool[rng.random_range(0..pool.len())];
        let b = pool[rng.random_range(0..pool.len())];
        let key = (a.min(b), a.max(b));
        if a == b || graph.has_edge(a, b) || !seen.insert(key) {
            continue;
        }
        out.push(key);
    }
    Ok(out)
}

/// Keeps `⌊keep·|E|⌋` uniformly chosen edges for training; the rest become
/// test positives, matched by as many uniform non-edges.
pub fn split_edges<R: Rng + ?Sized>(graph: &Graph, keep_fraction: f64, rng: &mut R) -> Result<EdgeSplit> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "keep fraction must lie in (0, 1], got {keep_fraction}"
        )));
    }
    let mut edges = graph.edges();
    let n_train = (keep_fraction * edges.len() as f64).floor() as usize;
    if n_train == 0 {
        return Err(Error::InvalidArgument("split leaves no training edges".into()));
    }
    edges.shuffle(rng);
    let test_pos = edges.split_off(n_train);
    edges.sort_unstable();
    let train_graph = graph.with_edges(&edges)?;
    let all: Vec<usize> = (0..graph.num_nodes()).collect();
    let test_neg = sample_non_edges(graph, &all, test_pos.len(), rng)?;
    Ok(EdgeSplit {
        train_graph,
        test_pos,
        test_neg,
    })
}

/// Shuffles `nodes` and puts the first `⌊train_fraction·n⌋` in train.
pub fn split_nodes<R: Rng + ?Sized>(nodes: &[usize], train_fraction: f64, rng: &mut R) -> Result<NodeSplit> {
    if !(train_fraction > 0.0 && train_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction must lie in (0, 1], got {train_fraction}"
        )));
    }
    let n_train = (train_fraction * nodes.len() as f64).floor() as usize;
    if n_train == 0 {
        return Err(Error::InvalidArgument("split leaves no training nodes".into()));
    }
    let mut order = nodes.to_vec();
    order.shuffle(rng);
    let mut test = order.split_off(n_train);
    order.sort_unstable();
    test.sort_unstable();
    Ok(NodeSplit { train: order, test })
}

/// Probability that a positive outscores a negative, ties counting half.
pub fn auc(pos: &[f64], neg: &[f64]) -> Result<f64> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::InvalidArgument("AUC needs positive and negative scores".into()));
    }
    if pos.iter().chain(neg).any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("AUC scores contain NaN".into()));
    }
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&v| (v, true))
        .chain(neg.iter().map(|&v| (v, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // twice the pair count, kept integral so the result is exact
    let mut twice: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        let (mut p, mut n) = (0u128, 0u128);
        while j < all.len() && all[j].0 == all[i].0 {
            if all[j].1 {
                p += 1;
            } else {
                n += 1;
            }
            j += 1;
        }
        twice += 2 * p * neg_below + p * n;
        neg_below += n;
        i = j;
    }
    Ok(twice as f64 / (2 * pos.len() as u128 * neg.len() as u128) as f64)
}

/// Inner-product scores for node pairs.
pub fn pair_scores(h: ArrayView2<'_, f64>, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
    pairs
        .iter()
        .map(|&(a, b)| {
            for i in [a, b] {
                if i >= h.nrows() {
                    return Err(Error::NodeIndexOutOfRange { index: i, len: h.nrows() });
                }
            }
            Ok(h.row(a).dot(&h.row(b)))
        })
        .collect()
}

/// AUC of inner-product scores on the split's held-out pairs.
pub fn link_prediction_eval(h: ArrayView2<'_, f64>, split: &EdgeSplit) -> Result<f64> {
    auc(&pair_scores(h, &split.test_pos)?, &pair_scores(h, &split.test_neg)?)
}

/// L2-regularized multinomial logistic regression on standardized
/// features.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearClassifier {
    pub classes: Vec<String>,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// `d × K` weights.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

pub const DEFAULT_L2: f64 = 1e-3;
const MAX_ITERS: usize = 5000;
const GRAD_TOL: f64 = 1e-5;

fn softmax_rows(logits: &mut Array2<f64>) {
    for mut row in logits.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row /= z;
    }
}

/// Largest eigenvalue of `AᵀA / n` for `A = [x, 1]`, by power iteration.
fn gram_top_eigenvalue(x: &Array2<f64>) -> f64 {
    let (n, d) = x.dim();
    let mut v = Array1::from_elem(d + 1, 1.0 / ((d + 1) as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..100 {
        let av = x.dot(&v.slice(s![..d])) + v[d];
        let mut w = Array1::zeros(d + 1);
        w.slice_mut(s![..d]).assign(&x.t().dot(&av));
        w[d] = av.sum();
        w /= n as f64;
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let next = norm;
        v = w / norm;
        if (next - lambda).abs() <= 1e-9 * next {
            lambda = next;
            break;
        }
        lambda = next;
    }
    lambda
}

impl LinearClassifier {
    fn standardize(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut z = x.to_owned();
        for (j, mut col) in z.axis_iter_mut(Axis(1)).enumerate() {
            col.mapv_inplace(|v| (v - self.mean[j]) / self.scale[j]);
        }
        z
    }

    pub fn decision(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.mean.len() {
            return Err(Error::dims("classifier features", self.mean.len(), x.ncols()));
        }
        Ok(self.standardize(x).dot(&self.weights) + &self.bias)
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<String>> {
        let scores = self.decision(x)?;
        Ok(scores
            .rows()
            .into_iter()
            .map(|r| {
                let mut best = 0;
                for k in 1..r.len() {
                    if r[k] > r[best] {
                        best = k;
                    }
                }
                self.classes[best].clone()
            })
            .collect())
    }
}

/// Fits the classifier with Nesterov-accelerated full-batch gradient
/// descent from zero, stopping at gradient norm `1e-5` or 5000 iterations.
/// The penalty `l2/2·‖W‖²` excludes the bias.
pub fn train_linear_classifier<S: AsRef<str>>(
    x: ArrayView2<'_, f64>,
    labels: &[S],
    l2: f64,
) -> Result<LinearClassifier> {
    let (n, d) = x.dim();
    if labels.len() != n {
        return Err(Error::dims("labels vs rows", n, labels.len()));
    }
    if !(l2 >= 0.0) {
        return Err(Error::InvalidArgument("l2 must be non-negative".into()));
    }
    let classes: Vec<String> = labels
        .iter()
        .map(|l| l.as_ref().to_string())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if classes.len() < 2 {
        return Err(Error::InvalidArgument("classifier needs at least two classes".into()));
    }
    let k = classes.len();
    let class_index: BTreeMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let mut y = Array2::<f64>::zeros((n, k));
    for (i, l) in labels.iter().enumerate() {
        y[[i, class_index[l.as_ref()]]] = 1.0;
    }

    let mean = x.mean_axis(Axis(0)).expect("n > 0").to_vec();
    let scale: Vec<f64> = (0..d)
        .map(|j| {
            let m = mean[j];
            let var = x.column(j).iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
            if var > 0.0 { var.sqrt() } else { 1.0 }
        })
        .collect();
    let mut clf = LinearClassifier {
        classes,
        mean,
        scale,
        weights: Array2::zeros((d, k)),
        bias: Array1::zeros(k),
    };
    let z = clf.standardize(x);
    // softmax cross-entropy has Hessian ≤ ½·AᵀA/n
    let lipschitz = 0.5 * gram_top_eigenvalue(&z) + l2;
    let step = if lipschitz > 0.0 { 1.0 / lipschitz } else { 1.0 };

    let grad = |w: &Array2<f64>, b: &Array1<f64>| {
        let mut p = z.dot(w) + b;
        softmax_rows(&mut p);
        let r = (p - &y) / n as f64;
        let gw = z.t().dot(&r) + l2 * w;
        let gb = r.sum_axis(Axis(0));
        (gw, gb)
    };

    let (mut w, mut b) = (clf.weights.clone(), clf.bias.clone());
    let (mut w_prev, mut b_prev) = (w.clone(), b.clone());
    let mut t = 1.0f64;
    for _ in 0..MAX_ITERS {
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let mom = (t - 1.0) / t_next;
        let yw = &w + &((&w - &w_prev) * mom);
        let yb = &b + &((&b - &b_prev) * mom);
        let (gw, gb) = grad(&yw, &yb);
        w_prev = w;
        b_prev = b;
        w = &yw - &(gw * step);
        b = &yb - &(gb * step);
        t = t_next;
        let (cw, cb) = grad(&w, &b);
        let norm = (cw.iter().map(|v| v * v).sum::<f64>() + cb.iter().map(|v| v * v).sum::<f64>()).sqrt();
        if norm < GRAD_TOL {
            break;
        }
        // restart momentum when it points uphill
        let uphill: f64 = cw.iter().zip((&w - &w_prev).iter()).map(|(g, dw)| g * dw).sum::<f64>()
            + cb.iter().zip((&b - &b_prev).iter()).map(|(g, db)| g * db).sum::<f64>();
        if uphill > 0.0 {
            t = 1.0;
        }
    }
    clf.weights = w;
    clf.bias = b;
    Ok(clf)
}

/// Mean over the union of observed classes of per-class F1.
pub fn macro_f1<T: Ord + Clone>(pred: &[T], truth: &[T]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::dims("predictions vs labels", truth.len(), pred.len()));
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("macro-F1 of an empty set".into()));
    }
    let classes: BTreeSet<&T> = pred.iter().chain(truth).collect();
    let mut total = 0.0;
    for c in &classes {
        let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
        for (p, t) in pred.iter().zip(truth) {
            match (p == *c, t == *c) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                _ => {}
            }
        }
        if tp > 0 {
            total += 2.0 * tp as f64 / (2 * tp + fp + fneg) as f64;
        }
    }
    Ok(total / classes.len() as f64)
}

fn labels_for(labels: &[Option<String>], nodes: &[usize]) -> Result<Vec<String>> {
    nodes
        .iter()
        .map(|&i| {
            labels
                .get(i)
                .cloned()
                .flatten()
                .ok_or_else(|| Error::InvalidArgument(format!("node {i} has no label")))
        })
        .collect()
}

fn rows(h: ArrayView2<'_, f64>, nodes: &[usize]) -> Result<Array2<f64>> {
    if let Some(&bad) = nodes.iter().find(|&&i| i >= h.nrows()) {
        return Err(Error::NodeIndexOutOfRange { index: bad, len: h.nrows() });
    }
    Ok(h.select(Axis(0), nodes))
}

/// Fits on the train rows of `h`, reports Macro-F1 on the test rows.
pub fn node_classification_eval(
    h: ArrayView2<'_, f64>,
    split: &NodeSplit,
    labels: &[Option<String>],
    l2: f64,
) -> Result<f64> {
    if split.test.is_empty() {
        return Err(Error::InvalidArgument("node split has no test nodes".into()));
    }
    let clf = train_linear_classifier(rows(h, &split.train)?.view(), &labels_for(labels, &split.train)?, l2)?;
    let pred = clf.predict(rows(h, &split.test)?.view())?;
    macro_f1(&pred, &labels_for(labels, &split.test)?)
}

/// How test nodes are embedded in the dynamic setting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DynamicBackend {
    /// Forward pass of the frozen model over the grown graph.
    Detgp,
    /// Own text embedding plus the mean of the train neighbors' structure.
    AggMean,
    /// Own text embedding plus the max of the train neighbors' structure.
    AggMax,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DynamicReport {
    pub auc: f64,
    pub macro_f1: Option<f64>,
    pub test_edges: usize,
}

/// Evaluates a model trained on the subgraph induced by `split.train`.
///
/// Test nodes arrive with their texts and their edges to train nodes. Edges
/// among test nodes are then ranked against as many sampled non-edges among
/// test nodes, and test nodes are classified with a classifier fit on the
/// train embeddings.
#[allow(clippy::too_many_arguments)]
pub fn dynamic_eval<R: Rng + ?Sized>(
    model: &DetGPModel,
    full: &Graph,
    texts: &[TokenizedText],
    labels: Option<&[Option<String>]>,
    split: &NodeSplit,
    backend: DynamicBackend,
    parts: EmbeddingParts,
    l2: f64,
    rng: &mut R,
) -> Result<DynamicReport> {
    if texts.len() != full.num_nodes() {
        return Err(Error::dims("texts vs graph nodes", full.num_nodes(), texts.len()));
    }
    if split.test.is_empty() {
        return Err(Error::InvalidArgument("node split has no test nodes".into()));
    }
    let train_graph = full.induced_subgraph(&split.train);
    let train_texts: Vec<TokenizedText> = split.train.iter().map(|&i| texts[i].clone()).collect();
    let h_train = model.forward(&train_graph, &train_texts)?;
    let dt = model.text_dim();

    let is_test: HashSet<usize> = split.test.iter().copied().collect();
    let h_test: Array2<f64> = match backend {
        DynamicBackend::Detgp => {
            let new_texts: Vec<(String, TokenizedText)> = split
                .test
                .iter()
                .map(|&i| (full.id(i).to_string(), texts[i].clone()))
                .collect();
            let mut new_edges = Vec::new();
            for &i in &split.test {
                for &j in full.neighbors(i) {
                    if !is_test.contains(&j) {
                        new_edges.push((full.id(i), full.id(j)));
                    }
                }
            }
            let ins = insert_tokenized(model, &train_graph, &train_texts, &new_texts, &new_edges)?;
            ins.embeddings.slice(s![train_texts.len().., ..]).to_owned()
        }
        DynamicBackend::AggMean | DynamicBackend::AggMax => {
            let strategy = if backend == DynamicBackend::AggMean {
                Aggregate::Mean
            } else {
                Aggregate::Max
            };
            let s_train = h_train.slice(s![.., dt..]);
            let mut pos_in_train = vec![usize::MAX; full.num_nodes()];
            for (k, &i) in split.train.iter().enumerate() {
                pos_in_train[i] = k;
            }
            let test_texts: Vec<TokenizedText> = split.test.iter().map(|&i| texts[i].clone()).collect();
            let x_test = model.table.encode_all(&test_texts)?;
            let mut h = Array2::zeros((split.test.len(), h_train.ncols()));
            for (k, &i) in split.test.iter().enumerate() {
                let nbrs: Vec<usize> = full
                    .neighbors(i)
                    .iter()
                    .filter(|j| !is_test.contains(j))
                    .map(|&j| pos_in_train[j])
                    .collect();
                h.slice_mut(s![k, ..dt]).assign(&x_test.row(k));
                h.slice_mut(s![k, dt..]).assign(&neighbor_aggregate(strategy, s_train, &nbrs)?);
            }
            h
        }
    };
    let h_test = parts.select(h_test.view(), dt);
    let h_train = parts.select(h_train.view(), dt);

    let mut local = vec![usize::MAX; full.num_nodes()];
    for (k, &i) in split.test.iter().enumerate() {
        local[i] = k;
    }
    let test_pos: Vec<(usize, usize)> = full
        .edges()
        .into_iter()
        .filter(|(a, b)| is_test.contains(a) && is_test.contains(b))
        .map(|(a, b)| (local[a], local[b]))
        .collect();
    if test_pos.is_empty() {
        return Err(Error::InvalidArgument("no edges among test nodes".into()));
    }
    let test_only = full.induced_subgraph(&split.test);
    let pool: Vec<usize> = (0..split.test.len()).collect();
    let test_neg = sample_non_edges(&test_only, &pool, test_pos.len(), rng)?;
    let auc_value = auc(
        &pair_scores(h_test.view(), &test_pos)?,
        &pair_scores(h_test.view(), &test_neg)?,
    )?;

    let f1 = match labels {
        Some(labels) => {
            let train_labeled: Vec<usize> = (0..split.train.len())
                .filter(|&k| labels[split.train[k]].is_some())
                .collect();
            let test_labeled: Vec<usize> = (0..split.test.len())
                .filter(|&k| labels[split.test[k]].is_some())
                .collect();
            if train_labeled.is_empty() || test_labeled.is_empty() {
                None
            } else {
                let ytr: Vec<String> = train_labeled
                    .iter()
                    .map(|&k| labels[split.train[k]].clone().expect("labeled"))
                    .collect();
                let yte: Vec<String> = test_labeled
                    .iter()
                    .map(|&k| labels[split.test[k]].clone().expect("labeled"))
                    .collect();
                let clf = train_linear_classifier(h_train.select(Axis(0), &train_labeled).view(), &ytr, l2)?;
                let pred = clf.predict(h_test.select(Axis(0), &test_labeled).view())?;
                Some(macro_f1(&pred, &yte)?)
            }
        }
        None => None,
    };
    Ok(DynamicReport {
        auc: auc_value,
        macro_f1: f1,
        test_edges: test_pos.len(),
    })
}
