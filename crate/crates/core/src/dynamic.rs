//! Embedding new nodes and edge changes with a trained, frozen model, and
//! the neighbor-aggregation baselines.

use std::collections::{HashMap, HashSet};

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::DetGPModel;
use crate::text::TokenizedText;

/// Result of inserting nodes: the grown graph, texts aligned with it, and
/// embeddings for every node.
#[derive(Clone, Debug)]
pub struct Insertion {
    pub graph: Graph,
    pub texts: Vec<TokenizedText>,
    pub embeddings: Array2<f64>,
}

/// Appends `new_texts` as nodes, adds `new_edges` (which may join new and
/// existing nodes, or two existing ones), and recomputes all embeddings.
/// New texts are tokenized with the model's frozen vocabulary.
pub fn insert_nodes<S: AsRef<str>>(
    model: &DetGPModel,
    graph: &Graph,
    texts: &[TokenizedText],
    new_texts: &[(String, String)],
    new_edges: &[(S, S)],
) -> Result<Insertion> {
    let tokenized: Vec<(String, TokenizedText)> = new_texts
        .iter()
        .map(|(id, t)| (id.clone(), model.vocab.encode_text(t)))
        .collect();
    insert_tokenized(model, graph, texts, &tokenized, new_edges)
}

/// [`insert_nodes`] for texts that are already tokenized.
pub fn insert_tokenized<S: AsRef<str>>(
    model: &DetGPModel,
    graph: &Graph,
    texts: &[TokenizedText],
    new_texts: &[(String, TokenizedText)],
    new_edges: &[(S, S)],
) -> Result<Insertion> {
    if texts.len() != graph.num_nodes() {
        return Err(Error::dims("texts vs graph nodes", graph.num_nodes(), texts.len()));
    }
    let fresh: HashSet<&str> = new_texts.iter().map(|(id, _)| id.as_str()).collect();
    if fresh.len() != new_texts.len() {
        let mut seen = HashSet::new();
        let dup = new_texts.iter().find(|(id, _)| !seen.insert(id)).expect("duplicate exists");
        return Err(Error::DuplicateNode(dup.0.clone()));
    }
    let mut nbrs: HashMap<&str, Vec<String>> = HashMap::new();
    let mut between_existing = Vec::new();
    for (a, b) in new_edges {
        let (a, b) = (a.as_ref(), b.as_ref());
        for id in [a, b] {
            if !fresh.contains(id) && graph.index_of(id).is_none() {
                return Err(Error::UnknownNode(id.to_string()));
            }
        }
        if fresh.contains(a) {
            nbrs.entry(a).or_default().push(b.to_string());
        } else if fresh.contains(b) {
            nbrs.entry(b).or_default().push(a.to_string());
        } else {
            between_existing.push((a, b));
        }
    }
    let batch: Vec<(String, Vec<String>)> = new_texts
        .iter()
        .map(|(id, _)| (id.clone(), nbrs.remove(id.as_str()).unwrap_or_default()))
        .collect();
    let mut grown = graph.add_nodes(&batch)?;
    for (a, b) in between_existing {
        grown = grown.update_edge(a, b, true)?;
    }
    let mut all_texts = texts.to_vec();
    all_texts.extend(new_texts.iter().map(|(_, t)| t.clone()));
    let embeddings = model.forward(&grown, &all_texts)?;
    Ok(Insertion {
        graph: grown,
        texts: all_texts,
        embeddings,
    })
}

/// Recomputes embeddings for a changed graph whose nodes all have known
/// texts.
pub fn refresh_embeddings(
    model: &DetGPModel,
    graph: &Graph,
    known_texts: &HashMap<String, TokenizedText>,
) -> Result<Array2<f64>> {
    let texts = graph
        .ids()
        .iter()
        .map(|id| {
            known_texts
                .get(id)
                .cloned()
                .ok_or_else(|| Error::UnknownNode(id.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    model.forward(graph, &texts)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregate {
    Mean,
    Max,
}

/// Coordinate-wise mean or max of the given rows; zero for an empty set.
pub fn neighbor_aggregate(
    strategy: Aggregate,
    rows: ArrayView2<'_, f64>,
    neighbors: &[usize],
) -> Result<Array1<f64>> {
    let d = rows.ncols();
    if let Some(&bad) = neighbors.iter().find(|&&i| i >= rows.nrows()) {
        return Err(Error::NodeIndexOutOfRange {
            index: bad,
            len: rows.nrows(),
        });
    }
    if neighbors.is_empty() {
        return Ok(Array1::zeros(d));
    }
    let mut out = rows.row(neighbors[0]).to_owned();
    for &i in &neighbors[1..] {
        let r = rows.row(i);
        match strategy {
            Aggregate::Mean => out += &r,
            Aggregate::Max => out.zip_mut_with(&r, |a, &b| *a = a.max(b)),
        }
    }
    if strategy == Aggregate::Mean {
        out /= neighbors.len() as f64;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{seeded_rng, ModelConfig};
    use crate::text::Vocabulary;
    use ndarray::array;

    fn setup() -> (DetGPModel, Graph, Vec<TokenizedText>) {
        let vocab = Vocabulary::build(&[vec!["a", "b", "c", "d"]], 1).unwrap();
        let cfg = ModelConfig {
            d_text: 4,
            d_struct: 3,
            hops: 2,
            inducing: 3,
            ..ModelConfig::default()
        };
        let mut m = DetGPModel::new(vocab, &cfg, &mut seeded_rng(5, 0)).unwrap();
        m.inducing.z = Array2::from_shape_fn((3, 4), |(i, j)| ((i * 4 + j) as f64 * 0.37).sin());
        let ids: Vec<String> = (0..6).map(|i| format!("v{i}")).collect();
        let g = Graph::new(ids, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 5)]).unwrap();
        let texts = m.tokenize(&["a b", "c", "d a", "b b c", "a", "d"]);
        (m, g, texts)
    }

    #[test]
    fn aggregate_examples() {
        let rows = array![[1.0, -2.0], [0.0, 3.0], [1.0, 0.0], [0.0, 1.0]];
        assert_eq!(neighbor_aggregate(Aggregate::Mean, rows.view(), &[1]).unwrap(), array![0.0, 3.0]);
        assert_eq!(neighbor_aggregate(Aggregate::Mean, rows.view(), &[2, 3]).unwrap(), array![0.5, 0.5]);
        assert_eq!(neighbor_aggregate(Aggregate::Max, rows.view(), &[0, 1]).unwrap(), array![1.0, 3.0]);
        assert_eq!(neighbor_aggregate(Aggregate::Max, rows.view(), &[]).unwrap(), array![0.0, 0.0]);
        assert!(neighbor_aggregate(Aggregate::Max, rows.view(), &[9]).is_err());
    }

    #[test]
    fn remove_then_reinsert_restores_embeddings() {
        let (m, g, texts) = setup();
        let hash = m.parameter_hash();
        let h = m.forward(&g, &texts).unwrap();
        let victim = 2;
        let id = g.id(victim).to_string();
        let g2 = g.remove_node(&id).unwrap();
        let t2: Vec<_> = (0..6).filter(|&i| i != victim).map(|i| texts[i].clone()).collect();
        let edges: Vec<(String, String)> = g
            .neighbors(victim)
            .iter()
            .map(|&n| (id.clone(), g.id(n).to_string()))
            .collect();
        let ins = insert_nodes(&m, &g2, &t2, &[(id.clone(), "d a".into())], &edges).unwrap();
        for (i, node) in g.ids().iter().enumerate() {
            let j = ins.graph.index_of(node).unwrap();
            for (a, b) in h.row(i).iter().zip(ins.embeddings.row(j)) {
                assert!((a - b).abs() < 1e-10);
            }
        }
        assert_eq!(m.parameter_hash(), hash);
    }

    #[test]
    fn isolated_insert_depends_only_on_own_text() {
        let (m, g, texts) = setup();
        let none: [(String, String); 0] = [];
        let ins = insert_nodes(&m, &g, &texts, &[("new".into(), "b c zzz".into())], &none).unwrap();
        let lone = Graph::new(vec!["new".into()], &[]).unwrap();
        let alone = m.forward(&lone, &[m.vocab.encode_text("b c zzz")]).unwrap();
        let row = ins.embeddings.row(6);
        for (a, b) in row.iter().zip(alone.row(0)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn insert_validates_ids() {
        let (m, g, texts) = setup();
        let e: [(&str, &str); 0] = [];
        assert!(matches!(
            insert_nodes(&m, &g, &texts, &[("v1".into(), "a".into())], &e),
            Err(Error::DuplicateNode(_))
        ));
        assert!(matches!(
            insert_nodes(&m, &g, &texts, &[("x".into(), "a".into()), ("x".into(), "b".into())], &e),
            Err(Error::DuplicateNode(_))
        ));
        assert!(matches!(
            insert_nodes(&m, &g, &texts, &[("x".into(), "a".into())], &[("x", "ghost")]),
            Err(Error::UnknownNode(_))
        ));
    }

    #[test]
    fn refresh_matches_forward_and_is_local() {
        let (m, g, texts) = setup();
        let known: HashMap<String, TokenizedText> =
            g.ids().iter().cloned().zip(texts.iter().cloned()).collect();
        let h = m.forward(&g, &texts).unwrap();
        assert_eq!(refresh_embeddings(&m, &g, &known).unwrap(), h);
        let same = g.update_edge("v0", "v1", true).unwrap();
        assert_eq!(refresh_embeddings(&m, &same, &known).unwrap(), h);

        let bare = g.with_edges(&[]).unwrap();
        let hb = refresh_embeddings(&m, &bare, &known).unwrap();
        let alpha0 = m.hops.alpha()[0];
        let local = crate::gp::cross_kernel(
            m.table.encode_all(&texts).unwrap().view(),
            m.inducing.z.view(),
            m.inducing.bias,
        )
        .unwrap()
        .dot(&m.inducing.factor().unwrap().solve(m.inducing.u.view()).unwrap());
        for n in 0..6 {
            for k in 0..3 {
                assert!((hb[[n, 4 + k]] - alpha0 * local[[n, k]]).abs() < 1e-12);
            }
        }

        let mut unknown = known.clone();
        unknown.remove("v3");
        assert!(refresh_embeddings(&m, &g, &unknown).is_err());
    }
}
