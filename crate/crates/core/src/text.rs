//! Tokenization, vocabulary and the word-embedding-average encoder.

use std::collections::{BTreeMap, HashMap};

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};

/// Default text embedding width.
pub const DEFAULT_TEXT_DIM: usize = 100;

/// Placeholder token stored at index 0.
pub const UNK_TOKEN: &str = "<unk>";
pub const UNK_INDEX: usize = 0;

/// Lowercases and splits on every non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Token ↔ index map. Index 0 is reserved for unknown tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Keeps tokens seen at least `min_count` times, indexed from 1 in
    /// lexicographic order.
    pub fn build<S: AsRef<str>>(corpus: &[Vec<S>], min_count: usize) -> Result<Self> {
        if min_count == 0 {
            return Err(Error::InvalidArgument("min_count must be >= 1".into()));
        }
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for doc in corpus {
            for tok in doc {
                *counts.entry(tok.as_ref()).or_default() += 1;
            }
        }
        let kept = counts
            .into_iter()
            .filter(|&(_, c)| c >= min_count)
            .map(|(t, _)| t.to_string());
        Self::from_tokens(std::iter::once(UNK_TOKEN.to_string()).chain(kept).collect())
    }

    /// Rebuilds a vocabulary from its index-ordered token list
    /// (`tokens[0]` is the unknown placeholder).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.first().map(String::as_str) != Some(UNK_TOKEN) {
            return Err(Error::InvalidArgument(format!(
                "vocabulary must start with {UNK_TOKEN}"
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate token `{t}`")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// Always false: the unknown placeholder is always present.
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn get(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_INDEX)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> TokenizedText {
        TokenizedText {
            indices: tokens.iter().map(|t| self.get(t.as_ref())).collect(),
        }
    }

    pub fn encode_text(&self, raw: &str) -> TokenizedText {
        self.encode(&tokenize(raw))
    }
}

/// A node's text as vocabulary indices.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TokenizedText {
    pub indices: Vec<usize>,
}

impl TokenizedText {
    pub fn new(indices: Vec<usize>) -> Self {
        Self { indices }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Learnable word look-up table (`V × d_text`).
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub weights: Array2<f64>,
}

impl EmbeddingTable {
    /// Uniform init on `[-0.5/d, 0.5/d]`.
    pub fn random<R: Rng + ?Sized>(vocab_size: usize, dim: usize, rng: &mut R) -> Self {
        let bound = 0.5 / dim as f64;
        let dist = Uniform::new_inclusive(-bound, bound).expect("valid bounds");
        let weights = Array2::from_shape_simple_fn((vocab_size, dim), || dist.sample(rng));
        Self { weights }
    }

    pub fn zeros(vocab_size: usize, dim: usize) -> Self {
        Self {
            weights: Array2::zeros((vocab_size, dim)),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.weights.nrows()
    }

    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }

    fn check(&self, toks: &TokenizedText) -> Result<()> {
        match toks.indices.iter().find(|&&i| i >= self.vocab_size()) {
            Some(&index) => Err(Error::TokenOutOfRange {
                index,
                size: self.vocab_size(),
            }),
            None => Ok(()),
        }
    }

    /// Mean of the token rows; the empty text encodes to zero.
    pub fn encode_wavg(&self, toks: &TokenizedText) -> Result<Array1<f64>> {
        self.check(toks)?;
        let mut x = Array1::zeros(self.dim());
        if toks.is_empty() {
            return Ok(x);
        }
        for &i in &toks.indices {
            x += &self.weights.row(i);
        }
        x /= toks.len() as f64;
        Ok(x)
    }

    /// Encodes every text into the rows of an `N × d_text` matrix.
    pub fn encode_all(&self, texts: &[TokenizedText]) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((texts.len(), self.dim()));
        for (n, t) in texts.iter().enumerate() {
            out.row_mut(n).assign(&self.encode_wavg(t)?);
        }
        Ok(out)
    }
}

/// Row gradients of the table given `∂loss/∂x` for one text. Each
/// occurrence contributes `grad_x / L`.
pub fn encode_wavg_backward(
    grad_x: ArrayView1<'_, f64>,
    toks: &TokenizedText,
) -> BTreeMap<usize, Array1<f64>> {
    let mut out: BTreeMap<usize, Array1<f64>> = BTreeMap::new();
    if toks.is_empty() {
        return out;
    }
    let share = &grad_x / toks.len() as f64;
    for &i in &toks.indices {
        out.entry(i)
            .and_modify(|g| *g += &share)
            .or_insert_with(|| share.clone());
    }
    out
}

/// Accumulates the table gradient for all texts at once into `grad_table`.
/// Rows of `grad_x` that are exactly zero are skipped.
pub(crate) fn accumulate_wavg_grad(
    grad_x: &Array2<f64>,
    texts: &[TokenizedText],
    grad_table: &mut Array2<f64>,
) {
    for (n, toks) in texts.iter().enumerate() {
        let g = grad_x.row(n);
        if toks.is_empty() || g.iter().all(|&v| v == 0.0) {
            continue;
        }
        let scale = 1.0 / toks.len() as f64;
        for &i in &toks.indices {
            grad_table.row_mut(i).scaled_add(scale, &g);
        }
    }
}
