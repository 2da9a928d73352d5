//! Synthetic labeled textual networks drawn from a latent ring model.
//!
//! Nodes sit at evenly spaced positions on a ring that is cut into equal
//! arcs, one per class. Each class owns a set of topic words, and a node's
//! text mixes words from its class topic with words shared by all classes.
//! Edges mostly join nodes that are close on the ring, plus a few uniform
//! long-range edges, so graph neighborhoods carry finer information than
//! the texts. Useful for smoke tests and for exercising the pipeline when no
//! real corpus is at hand.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::TextualNetwork;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::seeded_rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub classes: usize,
    pub nodes_per_class: usize,
    /// Expected number of local edges per node.
    pub local_degree: f64,
    /// Decay length of local edge probability, in units of node spacing.
    pub locality: f64,
    /// Expected number of uniform long-range edges per node.
    pub long_range_degree: f64,
    pub topic_words: usize,
    pub shared_words: usize,
    pub words_per_text: usize,
    /// Probability that a word is drawn from the node's class topic.
    pub topic_prob: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: 4,
            nodes_per_class: 60,
            local_degree: 6.0,
            locality: 4.0,
            long_range_degree: 0.5,
            topic_words: 30,
            shared_words: 200,
            words_per_text: 20,
            topic_prob: 0.3,
        }
    }
}

/// Draws a network; identical for identical `(cfg, seed)`.
pub fn planted_partition(cfg: &SynthConfig, seed: u64) -> Result<TextualNetwork> {
    if cfg.classes < 2 || cfg.nodes_per_class < 2 {
        return Err(Error::InvalidArgument("need at least 2 classes of 2 nodes".into()));
    }
    if !(0.0..=1.0).contains(&cfg.topic_prob) || cfg.topic_words == 0 || cfg.shared_words == 0 {
        return Err(Error::InvalidArgument("invalid word model".into()));
    }
    let mut rng = seeded_rng(seed, 7);
    let n = cfg.classes * cfg.nodes_per_class;
    let class_of = |i: usize| i / cfg.nodes_per_class;
    if !(cfg.locality > 0.0) || cfg.local_degree < 0.0 || cfg.long_range_degree < 0.0 {
        return Err(Error::InvalidArgument("invalid edge model".into()));
    }
    // Σ_{d≥1} 2·e^{−d/ℓ} = 2 / (e^{1/ℓ} − 1)
    let mass = 2.0 / ((1.0 / cfg.locality).exp() - 1.0);
    let scale = cfg.local_degree / mass;
    let p_far = cfg.long_range_degree / (n - 1) as f64;

    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            let d = (b - a).min(n - (b - a)) as f64;
            let p = (scale * (-d / cfg.locality).exp() + p_far).min(1.0);
            if rng.random::<f64>() < p {
                edges.push((a, b));
            }
        }
    }

    let mut texts = Vec::with_capacity(n);
    for i in 0..n {
        let words: Vec<String> = (0..cfg.words_per_text)
            .map(|_| {
                if rng.random::<f64>() < cfg.topic_prob {
                    format!("topic{}w{}", class_of(i), rng.random_range(0..cfg.topic_words))
                } else {
                    format!("w{}", rng.random_range(0..cfg.shared_words))
                }
            })
            .collect();
        texts.push(words.join(" "));
    }

    let ids = (0..n).map(|i| format!("n{i}")).collect();
    let labels = (0..n).map(|i| Some(format!("c{}", class_of(i)))).collect();
    Ok(TextualNetwork {
        graph: Graph::new(ids, &edges)?,
        texts,
        labels: Some(labels),
    })
}
