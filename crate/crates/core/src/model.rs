//! The full embedding model, its negative-sampling objective and the
//! training loop.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gp::{InducingPointSet, StructuralLayer};
use crate::gp::{DEFAULT_INDUCING, DEFAULT_JITTER, DEFAULT_KERNEL_BIAS, DEFAULT_STRUCT_DIM};
use crate::graph::{Graph, HopWeights, TransitionMatrix, DEFAULT_HOPS};
use crate::kmeans::kmeans_init;
use crate::optim::{adam_step, AdamConfig, AdamState, Gradients};
use crate::text::{accumulate_wavg_grad, EmbeddingTable, TokenizedText, Vocabulary, DEFAULT_TEXT_DIM};

/// Shape hyperparameters of a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_text: usize,
    pub d_struct: usize,
    pub hops: usize,
    pub inducing: usize,
    pub kernel_bias: f64,
    pub jitter: f64,
    pub min_count: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_text: DEFAULT_TEXT_DIM,
            d_struct: DEFAULT_STRUCT_DIM,
            hops: DEFAULT_HOPS,
            inducing: DEFAULT_INDUCING,
            kernel_bias: DEFAULT_KERNEL_BIAS,
            jitter: DEFAULT_JITTER,
            min_count: 1,
        }
    }
}

/// Which blocks of `[x; s]` form the embedding seen by the loss and by
/// downstream scoring.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingParts {
    #[default]
    Full,
    TextOnly,
    StructureOnly,
}

impl EmbeddingParts {
    /// Column block of `h` for these parts, `d_text` being the text width.
    pub fn select(self, h: ArrayView2<'_, f64>, d_text: usize) -> Array2<f64> {
        match self {
            Self::Full => h.to_owned(),
            Self::TextOnly => h.slice(s![.., ..d_text]).to_owned(),
            Self::StructureOnly => h.slice(s![.., d_text..]).to_owned(),
        }
    }

    /// Scatters a gradient for the selected block back to full width.
    fn expand(self, g: Array2<f64>, d_text: usize, d_struct: usize) -> Array2<f64> {
        let mut full = Array2::zeros((g.nrows(), d_text + d_struct));
        match self {
            Self::Full => return g,
            Self::TextOnly => full.slice_mut(s![.., ..d_text]).assign(&g),
            Self::StructureOnly => full.slice_mut(s![.., d_text..]).assign(&g),
        }
        full
    }
}

/// How the negative term of the loss is normalized.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeNorm {
    /// `N_s = k_neg · |positives in batch|`.
    BatchSampled,
    /// A fixed constant.
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub inducing_lr_scale: f64,
    pub epochs: usize,
    pub batch_edges: usize,
    pub k_neg: usize,
    pub negative_norm: NegativeNorm,
    pub parts: EmbeddingParts,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Place `Z` on k-means centers of the initial text embeddings.
    pub kmeans_init: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            inducing_lr_scale: 0.1,
            epochs: 200,
            batch_edges: 128,
            k_neg: 5,
            negative_norm: NegativeNorm::BatchSampled,
            parts: EmbeddingParts::Full,
            seed: 0,
            adam: AdamConfig::default(),
            kmeans_init: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(self.inducing_lr_scale > 0.0) {
            return Err(Error::InvalidArgument("learning rates must be positive".into()));
        }
        if self.k_neg == 0 || self.batch_edges == 0 {
            return Err(Error::InvalidArgument("k_neg and batch_edges must be >= 1".into()));
        }
        if let NegativeNorm::Fixed(v) = self.negative_norm {
            if !(v > 0.0) {
                return Err(Error::InvalidArgument("fixed N_s must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Text encoder, inducing points and hop weights.
#[derive(Clone, Debug, PartialEq)]
pub struct DetGPModel {
    pub vocab: Vocabulary,
    pub table: EmbeddingTable,
    pub inducing: InducingPointSet,
    pub hops: HopWeights,
}

impl DetGPModel {
    /// Fresh model: random word table, `Z` at the origin, Gaussian `U`,
    /// uniform hop weights.
    pub fn new<R: Rng + ?Sized>(vocab: Vocabulary, cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let table = EmbeddingTable::random(vocab.len(), cfg.d_text, rng);
        let inducing = InducingPointSet::random(
            cfg.inducing,
            cfg.d_text,
            cfg.d_struct,
            cfg.kernel_bias,
            cfg.jitter,
            rng,
        )?;
        Ok(Self {
            vocab,
            table,
            inducing,
            hops: HopWeights::uniform(cfg.hops),
        })
    }

    /// Assembles a model from parts, checking that the shapes agree.
    pub fn from_parts(
        vocab: Vocabulary,
        table: EmbeddingTable,
        inducing: InducingPointSet,
        hops: HopWeights,
    ) -> Result<Self> {
        if table.vocab_size() != vocab.len() {
            return Err(Error::dims("table rows vs vocabulary", vocab.len(), table.vocab_size()));
        }
        if inducing.text_dim() != table.dim() {
            return Err(Error::dims("Z width vs text dim", table.dim(), inducing.text_dim()));
        }
        inducing.validate()?;
        Ok(Self {
            vocab,
            table,
            inducing,
            hops,
        })
    }

    pub fn text_dim(&self) -> usize {
        self.table.dim()
    }

    pub fn struct_dim(&self) -> usize {
        self.inducing.struct_dim()
    }

    pub fn embedding_dim(&self) -> usize {
        self.text_dim() + self.struct_dim()
    }

    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            d_text: self.text_dim(),
            d_struct: self.struct_dim(),
            hops: self.hops.max_hops(),
            inducing: self.inducing.num_points(),
            kernel_bias: self.inducing.bias,
            jitter: self.inducing.jitter,
            min_count: 1,
        }
    }

    /// Tokenizes raw texts against the (frozen) vocabulary.
    pub fn tokenize<S: AsRef<str>>(&self, raw: &[S]) -> Vec<TokenizedText> {
        raw.iter().map(|t| self.vocab.encode_text(t.as_ref())).collect()
    }

    /// Text and structural embeddings for all nodes.
    pub fn forward_blocks(
        &self,
        p: &TransitionMatrix,
        texts: &[TokenizedText],
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        if texts.len() != p.num_nodes() {
            return Err(Error::dims("texts vs graph nodes", p.num_nodes(), texts.len()));
        }
        let x = self.table.encode_all(texts)?;
        let s = StructuralLayer::new().forward(x.view(), p, &self.hops, &self.inducing)?;
        Ok((x, s.s))
    }

    /// Node embeddings `H = [X, S]`, one row per graph node.
    pub fn forward(&self, graph: &Graph, texts: &[TokenizedText]) -> Result<Array2<f64>> {
        self.forward_transition(&graph.transition(), texts)
    }

    pub fn forward_transition(&self, p: &TransitionMatrix, texts: &[TokenizedText]) -> Result<Array2<f64>> {
        let (x, s) = self.forward_blocks(p, texts)?;
        Ok(concatenate![Axis(1), x, s])
    }

    /// SHA-256 over every parameter tensor, for immutability checks.
    pub fn parameter_hash(&self) -> String {
        let mut h = Sha256::new();
        let mut feed = |name: &str, vals: &mut dyn Iterator<Item = f64>| {
            h.update(name.as_bytes());
            for v in vals {
                h.update(v.to_le_bytes());
            }
        };
        feed("table", &mut self.table.weights.iter().copied());
        feed("z", &mut self.inducing.z.iter().copied());
        feed("u", &mut self.inducing.u.iter().copied());
        feed("logits", &mut self.hops.logits.iter().copied());
        feed("scalars", &mut [self.inducing.bias, self.inducing.jitter].into_iter());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_pairs(h: ArrayView2<'_, f64>, pairs: &[(usize, usize)]) -> Result<()> {
    for &(a, b) in pairs {
        for i in [a, b] {
            if i >= h.nrows() {
                return Err(Error::NodeIndexOutOfRange {
                    index: i,
                    len: h.nrows(),
                });
            }
        }
    }
    Ok(())
}

/// Negative-sampling loss
/// `−(1/|pos|) Σ log σ(h_aᵀh_b) − (1/N_s) Σ_neg log(1 − σ(h_aᵀh_b))`.
pub fn nce_loss(
    h: ArrayView2<'_, f64>,
    pos: &[(usize, usize)],
    neg: &[(usize, usize)],
    ns: f64,
) -> Result<f64> {
    Ok(nce_terms(h, pos, neg, ns, false)?.0)
}

/// Loss together with `∂loss/∂H`.
pub fn nce_loss_grad(
    h: ArrayView2<'_, f64>,
    pos: &[(usize, usize)],
    neg: &[(usize, usize)],
    ns: f64,
) -> Result<(f64, Array2<f64>)> {
    let (loss, grad) = nce_terms(h, pos, neg, ns, true)?;
    Ok((loss, grad.expect("gradient requested")))
}

fn nce_terms(
    h: ArrayView2<'_, f64>,
    pos: &[(usize, usize)],
    neg: &[(usize, usize)],
    ns: f64,
    want_grad: bool,
) -> Result<(f64, Option<Array2<f64>>)> {
    if pos.is_empty() {
        return Err(Error::InvalidArgument("negative-sampling loss needs at least one positive pair".into()));
    }
    if !(ns > 0.0) {
        return Err(Error::InvalidArgument("N_s must be positive".into()));
    }
    check_pairs(h, pos)?;
    check_pairs(h, neg)?;
    let mut grad = want_grad.then(|| Array2::<f64>::zeros(h.dim()));
    let mut loss = 0.0;
    let w_pos = 1.0 / pos.len() as f64;
    let w_neg = 1.0 / ns;
    let accumulate = |a: usize, b: usize, coef: f64, grad: &mut Option<Array2<f64>>| {
        if let Some(g) = grad.as_mut() {
            let (ha, hb) = (h.row(a), h.row(b));
            g.row_mut(a).scaled_add(coef, &hb);
            g.row_mut(b).scaled_add(coef, &ha);
        }
    };
    for &(a, b) in pos {
        let dot = h.row(a).dot(&h.row(b));
        // −log σ(d) = softplus(−d)
        loss += w_pos * softplus(-dot);
        accumulate(a, b, -w_pos * sigmoid(-dot), &mut grad);
    }
    for &(a, b) in neg {
        let dot = h.row(a).dot(&h.row(b));
        // −log(1 − σ(d)) = softplus(d)
        loss += w_neg * softplus(dot);
        accumulate(a, b, w_neg * sigmoid(dot), &mut grad);
    }
    Ok((loss, grad))
}

/// Negative pairs plus the heads for which sampling gave up.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NegativeSample {
    pub pairs: Vec<(usize, usize)>,
    pub skipped: Vec<usize>,
}

const MAX_REJECTIONS: usize = 100;

/// For each positive `(n, n')`, draws `k_neg` pairs `(n, r)` with `r`
/// uniform over nodes, `r ≠ n` and `(n, r)` not an edge.
pub fn sample_negatives<R: Rng + ?Sized>(
    graph: &Graph,
    pos_batch: &[(usize, usize)],
    k_neg: usize,
    rng: &mut R,
) -> Result<NegativeSample> {
    if k_neg == 0 {
        return Err(Error::InvalidArgument("k_neg must be >= 1".into()));
    }
    let n = graph.num_nodes();
    let mut out = NegativeSample::default();
    for &(head, _) in pos_batch {
        if head >= n {
            return Err(Error::NodeIndexOutOfRange { index: head, len: n });
        }
        'draws: for _ in 0..k_neg {
            for _ in 0..MAX_REJECTIONS {
                let r = rng.random_range(0..n);
                if r != head && !graph.has_edge(head, r) {
                    out.pairs.push((head, r));
                    continue 'draws;
                }
            }
            log::warn!(
                "node `{}` has no sampled non-neighbor after {MAX_REJECTIONS} tries; skipping",
                graph.id(head)
            );
            out.skipped.push(head);
            break;
        }
    }
    Ok(out)
}

/// Loss and gradients for one batch, computed over a full forward pass.
pub fn batch_loss_and_grad(
    model: &DetGPModel,
    p: &TransitionMatrix,
    texts: &[TokenizedText],
    pos: &[(usize, usize)],
    neg: &[(usize, usize)],
    ns: f64,
    parts: EmbeddingParts,
) -> Result<(f64, Gradients)> {
    if texts.len() != p.num_nodes() {
        return Err(Error::dims("texts vs graph nodes", p.num_nodes(), texts.len()));
    }
    let x = model.table.encode_all(texts)?;
    let mut layer = StructuralLayer::new();
    let s = layer.forward(x.view(), p, &model.hops, &model.inducing)?.s;
    let h = concatenate![Axis(1), x, s];
    let dt = model.text_dim();
    let (loss, grad_h) = nce_loss_grad(parts.select(h.view(), dt).view(), pos, neg, ns)?;
    let grad_h = parts.expand(grad_h, dt, model.struct_dim());
    let gp = layer.backward(grad_h.slice(s![.., dt..]), p, &model.inducing)?;
    let grad_x = &grad_h.slice(s![.., ..dt]) + &gp.x;
    let mut table = Array2::zeros(model.table.weights.dim());
    accumulate_wavg_grad(&grad_x, texts, &mut table);
    Ok((
        loss,
        Gradients {
            table,
            z: gp.z,
            u: gp.u,
            logits: gp.logits,
        },
    ))
}

/// Loss only, for the same batch definition as [`batch_loss_and_grad`].
pub fn batch_loss(
    model: &DetGPModel,
    p: &TransitionMatrix,
    texts: &[TokenizedText],
    pos: &[(usize, usize)],
    neg: &[(usize, usize)],
    ns: f64,
    parts: EmbeddingParts,
) -> Result<f64> {
    let h = model.forward_transition(p, texts)?;
    nce_loss(parts.select(h.view(), model.text_dim()).view(), pos, neg, ns)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    /// Mean batch loss per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Deterministic RNG for a given seed and purpose.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// RNG stream used by training (other streams are used by splitters).
pub const TRAIN_STREAM: u64 = 0;

/// Trains all parameters end to end with Adam on mini-batches of edges.
pub fn train(
    model: &mut DetGPModel,
    graph: &Graph,
    texts: &[TokenizedText],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    train_with(model, graph, texts, cfg, |_, _| {})
}

/// [`train`] with a per-epoch callback `(epoch, mean_loss)`.
pub fn train_with<F: FnMut(usize, f64)>(
    model: &mut DetGPModel,
    graph: &Graph,
    texts: &[TokenizedText],
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainReport> {
    cfg.validate()?;
    if graph.num_edges() == 0 {
        return Err(Error::InvalidArgument("training graph has no edges".into()));
    }
    if texts.len() != graph.num_nodes() {
        return Err(Error::dims("texts vs graph nodes", graph.num_nodes(), texts.len()));
    }
    let mut rng = seeded_rng(cfg.seed, TRAIN_STREAM);
    let p = graph.transition();

    if cfg.kmeans_init {
        let x0 = model.table.encode_all(texts)?;
        let m = model.inducing.num_points();
        if x0.nrows() < m {
            return Err(Error::InvalidArgument(format!(
                "{} nodes cannot seed {m} inducing points",
                x0.nrows()
            )));
        }
        model.inducing.z = kmeans_init(x0.view(), m, &mut rng)?;
    }

    let mut edges = graph.edges();
    let mut state = AdamState::new();
    let mut report = TrainReport::default();
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        edges.shuffle(&mut rng);
        for e in edges.iter_mut() {
            if rng.random::<bool>() {
                *e = (e.1, e.0);
            }
        }
        let mut total = 0.0;
        let mut batches = 0usize;
        for batch in edges.chunks(cfg.batch_edges) {
            let negs = sample_negatives(graph, batch, cfg.k_neg, &mut rng)?;
            let ns = match cfg.negative_norm {
                NegativeNorm::BatchSampled => (cfg.k_neg * batch.len()) as f64,
                NegativeNorm::Fixed(v) => v,
            };
            let (loss, grads) = batch_loss_and_grad(model, &p, texts, batch, &negs.pairs, ns, cfg.parts)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step,
                    snapshot: snapshot(model),
                });
            }
            adam_step(model, &grads, &mut state, cfg.lr, cfg.inducing_lr_scale, &cfg.adam)?;
            total += loss;
            batches += 1;
            step += 1;
        }
        let mean = total / batches as f64;
        log::debug!("epoch {epoch}: loss {mean:.6}");
        on_epoch(epoch, mean);
        report.epoch_losses.push(mean);
    }
    Ok(report)
}

fn snapshot(model: &DetGPModel) -> String {
    let norm = |a: &Array2<f64>| a.iter().map(|v| v * v).sum::<f64>().sqrt();
    format!(
        "alpha={:?} |table|={:.3e} |Z|={:.3e} |U|={:.3e}",
        model.hops.alpha(),
        norm(&model.table.weights),
        norm(&model.inducing.z),
        norm(&model.inducing.u)
    )
}
