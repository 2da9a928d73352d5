//! Undirected graph storage, the row-normalized transition matrix and the
//! learnable multi-hop diffusion operator.
//!
//! The diffusion `P* = Σ_j α_j P^j` is only ever applied to dense blocks
//! through repeated sparse products; [`materialize_pstar`] exists for tests
//! and small diagnostics.

use std::collections::HashMap;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Default maximum hop count.
pub const DEFAULT_HOPS: usize = 3;

/// Largest node count for which a dense `N × N` matrix will be built.
pub const DENSE_GUARD: usize = 4096;

/// Undirected simple graph with string node ids and symmetric adjacency
/// stored in compressed-row form.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
}

impl Graph {
    /// Builds a graph over `ids` (index order = insertion order).
    /// Duplicate edges are merged; self-loops are rejected.
    pub fn new(ids: Vec<String>, edges: &[(usize, usize)]) -> Result<Self> {
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::DuplicateNode(id.clone()));
            }
        }
        let n = ids.len();
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(a, b) in edges {
            for x in [a, b] {
                if x >= n {
                    return Err(Error::NodeIndexOutOfRange { index: x, len: n });
                }
            }
            if a == b {
                return Err(Error::SelfLoop(ids[a].clone()));
            }
            adj[a].push(b);
            adj[b].push(a);
        }
        Ok(Self::from_adjacency(ids, index, adj))
    }

    /// Builds a graph from id pairs. Every id must appear in `ids`.
    pub fn from_id_edges<S: AsRef<str>>(ids: Vec<String>, edges: &[(S, S)]) -> Result<Self> {
        let lookup: HashMap<&str, usize> = ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let resolve = |s: &str| {
            lookup
                .get(s)
                .copied()
                .ok_or_else(|| Error::UnknownNode(s.to_string()))
        };
        let idx_edges = edges
            .iter()
            .map(|(a, b)| Ok((resolve(a.as_ref())?, resolve(b.as_ref())?)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(ids, &idx_edges)
    }

    fn from_adjacency(
        ids: Vec<String>,
        index: HashMap<String, usize>,
        mut adj: Vec<Vec<usize>>,
    ) -> Self {
        let mut row_ptr = Vec::with_capacity(ids.len() + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for nbrs in adj.iter_mut() {
            nbrs.sort_unstable();
            nbrs.dedup();
            col_idx.extend_from_slice(nbrs);
            row_ptr.push(col_idx.len());
        }
        Self {
            ids,
            index,
            row_ptr,
            col_idx,
        }
    }

    fn adjacency_lists(&self) -> Vec<Vec<usize>> {
        (0..self.num_nodes())
            .map(|i| self.neighbors(i).to_vec())
            .collect()
    }

    pub fn num_nodes(&self) -> usize {
        self.ids.len()
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.col_idx.len() / 2
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    fn require(&self, id: &str) -> Result<usize> {
        self.index_of(id)
            .ok_or_else(|| Error::UnknownNode(id.to_string()))
    }

    /// Sorted neighbor indices of node `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.neighbors(a).binary_search(&b).is_ok()
    }

    /// Each undirected edge once, as `(a, b)` with `a < b`, in row order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.num_edges());
        for a in 0..self.num_nodes() {
            for &b in self.neighbors(a) {
                if a < b {
                    out.push((a, b));
                }
            }
        }
        out
    }

    /// Same node set, different edges.
    pub fn with_edges(&self, edges: &[(usize, usize)]) -> Result<Self> {
        Self::new(self.ids.clone(), edges)
    }

    /// Adds one node connected to existing nodes.
    pub fn add_node(&self, id: &str, neighbor_ids: &[&str]) -> Result<Self> {
        let nbrs = neighbor_ids.iter().map(|s| s.to_string()).collect();
        self.add_nodes(&[(id.to_string(), nbrs)])
    }

    /// Adds a batch of nodes. Neighbors may be existing nodes or other
    /// nodes of the same batch. New nodes are appended in batch order.
    pub fn add_nodes(&self, batch: &[(String, Vec<String>)]) -> Result<Self> {
        let mut ids = self.ids.clone();
        let mut index = self.index.clone();
        for (id, _) in batch {
            if index.contains_key(id) {
                return Err(Error::DuplicateNode(id.clone()));
            }
            index.insert(id.clone(), ids.len());
            ids.push(id.clone());
        }
        let mut adj = self.adjacency_lists();
        adj.resize(ids.len(), Vec::new());
        for (id, nbrs) in batch {
            let a = index[id];
            for nb in nbrs {
                let b = *index
                    .get(nb)
                    .ok_or_else(|| Error::UnknownNode(nb.clone()))?;
                if a == b {
                    return Err(Error::SelfLoop(id.clone()));
                }
                adj[a].push(b);
                adj[b].push(a);
            }
        }
        Ok(Self::from_adjacency(ids, index, adj))
    }

    /// Sets the presence of the undirected edge `{a, b}`. Setting the
    /// current state is a no-op.
    pub fn update_edge(&self, a: &str, b: &str, present: bool) -> Result<Self> {
        if a == b {
            return Err(Error::SelfLoop(a.to_string()));
        }
        let (ia, ib) = (self.require(a)?, self.require(b)?);
        if self.has_edge(ia, ib) == present {
            return Ok(self.clone());
        }
        let mut adj = self.adjacency_lists();
        if present {
            adj[ia].push(ib);
            adj[ib].push(ia);
        } else {
            adj[ia].retain(|&x| x != ib);
            adj[ib].retain(|&x| x != ia);
        }
        Ok(Self::from_adjacency(self.ids.clone(), self.index.clone(), adj))
    }

    /// Removes a node and its edges. Remaining nodes keep their relative order.
    pub fn remove_node(&self, id: &str) -> Result<Self> {
        let gone = self.require(id)?;
        let keep: Vec<usize> = (0..self.num_nodes()).filter(|&i| i != gone).collect();
        Ok(self.induced_subgraph(&keep))
    }

    /// Subgraph induced by `keep`, with nodes re-indexed in the given order.
    pub fn induced_subgraph(&self, keep: &[usize]) -> Self {
        let mut remap = vec![usize::MAX; self.num_nodes()];
        for (new, &old) in keep.iter().enumerate() {
            remap[old] = new;
        }
        let ids: Vec<String> = keep.iter().map(|&i| self.ids[i].clone()).collect();
        let index = ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        let adj = keep
            .iter()
            .map(|&old| {
                self.neighbors(old)
                    .iter()
                    .filter_map(|&nb| (remap[nb] != usize::MAX).then_some(remap[nb]))
                    .collect()
            })
            .collect();
        Self::from_adjacency(ids, index, adj)
    }

    /// Row-normalized transition matrix. Isolated nodes get an all-zero row.
    pub fn transition(&self) -> TransitionMatrix {
        let n = self.num_nodes();
        let mut values = Vec::with_capacity(self.col_idx.len());
        for i in 0..n {
            let deg = self.degree(i);
            let w = 1.0 / deg as f64;
            values.extend(std::iter::repeat_n(w, deg));
        }
        let forward = CsrMatrix::new(n, n, self.row_ptr.clone(), self.col_idx.clone(), values)
            .expect("graph adjacency is a valid csr pattern");
        TransitionMatrix::from_forward(forward)
    }
}

/// Row-stochastic `P` together with an explicit copy of `Pᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionMatrix {
    forward: CsrMatrix,
    transposed: CsrMatrix,
}

impl TransitionMatrix {
    pub fn from_forward(forward: CsrMatrix) -> Self {
        let transposed = forward.transpose();
        Self {
            forward,
            transposed,
        }
    }

    pub fn forward(&self) -> &CsrMatrix {
        &self.forward
    }

    pub fn transposed(&self) -> &CsrMatrix {
        &self.transposed
    }

    pub fn num_nodes(&self) -> usize {
        self.forward.n_rows()
    }
}

/// Learnable logits whose softmax gives the hop weights `α_0..α_J`.
#[derive(Clone, Debug, PartialEq)]
pub struct HopWeights {
    pub logits: Vec<f64>,
}

impl HopWeights {
    /// Uniform weights over hops `0..=max_hops`.
    pub fn uniform(max_hops: usize) -> Self {
        Self {
            logits: vec![0.0; max_hops + 1],
        }
    }

    pub fn from_logits(logits: Vec<f64>) -> Result<Self> {
        if logits.is_empty() {
            return Err(Error::InvalidArgument("hop logits must be non-empty".into()));
        }
        Ok(Self { logits })
    }

    /// Maximum hop count `J`.
    pub fn max_hops(&self) -> usize {
        self.logits.len() - 1
    }

    pub fn alpha(&self) -> Vec<f64> {
        hop_weights_alpha(&self.logits)
    }
}

/// Numerically stable softmax.
pub fn hop_weights_alpha(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Horner evaluation of `Σ_j α_j M^j V` with `J` sparse products.
fn horner(m: &CsrMatrix, alpha: &[f64], v: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if alpha.is_empty() {
        return Err(Error::InvalidArgument("empty hop weights".into()));
    }
    if v.nrows() != m.n_cols() {
        return Err(Error::dims("diffusion input rows", m.n_cols(), v.nrows()));
    }
    let last = alpha.len() - 1;
    let mut acc = v.to_owned() * alpha[last];
    for j in (0..last).rev() {
        acc = m.mul_dense(acc.view())?;
        acc.scaled_add(alpha[j], &v);
    }
    Ok(acc)
}

/// `P*ᵀ V = Σ_j α_j (Pᵀ)^j V`, without forming any power of `P`.
pub fn diffuse_transposed(
    p: &TransitionMatrix,
    alpha: &[f64],
    v: ArrayView2<'_, f64>,
) -> Result<Array2<f64>> {
    horner(p.transposed(), alpha, v)
}

/// `P* V = Σ_j α_j P^j V`; the adjoint of [`diffuse_transposed`].
pub fn diffuse(p: &TransitionMatrix, alpha: &[f64], v: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    horner(p.forward(), alpha, v)
}

/// `[V, M V, M² V, …, M^J V]` with `M = P`.
pub(crate) fn forward_powers(
    p: &TransitionMatrix,
    max_hops: usize,
    v: ArrayView2<'_, f64>,
) -> Result<Vec<Array2<f64>>> {
    let mut out = Vec::with_capacity(max_hops + 1);
    out.push(v.to_owned());
    for j in 0..max_hops {
        let next = p.forward().mul_dense(out[j].view())?;
        out.push(next);
    }
    Ok(out)
}

/// Dense `P* = Σ_j α_j P^j`. Diagnostic only; refuses `N > 4096`.
pub fn materialize_pstar(p: &TransitionMatrix, alpha: &[f64]) -> Result<Array2<f64>> {
    let n = p.num_nodes();
    if n > DENSE_GUARD {
        return Err(Error::TooLarge {
            what: "P*",
            n,
            limit: DENSE_GUARD,
        });
    }
    let eye = Array2::<f64>::eye(n);
    diffuse(p, alpha, eye.view())
}

/// Dense `P^j` for `j = 0..=max_hops`. Diagnostic only.
pub fn dense_powers(p: &TransitionMatrix, max_hops: usize, limit: usize) -> Result<Vec<Array2<f64>>> {
    let n = p.num_nodes();
    if n > limit {
        return Err(Error::TooLarge {
            what: "P^j powers",
            n,
            limit,
        });
    }
    let eye = Array2::<f64>::eye(n);
    forward_powers(p, max_hops, eye.view())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| i.to_string()).collect()
    }

    fn path3() -> Graph {
        Graph::new(ids(3), &[(0, 1), (1, 2)]).unwrap()
    }

    fn assert_close(a: &Array2<f64>, b: &Array2<f64>, tol: f64) {
        assert_eq!(a.dim(), b.dim());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a}\n!=\n{b}");
        }
    }

    #[test]
    fn transition_single_edge() {
        let g = Graph::new(ids(2), &[(0, 1)]).unwrap();
        assert_eq!(g.transition().forward().to_dense(), array![[0.0, 1.0], [1.0, 0.0]]);
    }

    #[test]
    fn transition_path() {
        let p = path3().transition();
        assert_eq!(
            p.forward().to_dense(),
            array![[0.0, 1.0, 0.0], [0.5, 0.0, 0.5], [0.0, 1.0, 0.0]]
        );
        assert_eq!(p.transposed(), &p.forward().transpose());
    }

    #[test]
    fn transition_isolated_row_is_zero() {
        let g = Graph::new(ids(3), &[(0, 1)]).unwrap();
        let p = g.transition().forward().to_dense();
        assert_eq!(p.row(2).to_vec(), vec![0.0; 3]);
    }

    #[test]
    fn alpha_examples() {
        assert_eq!(hop_weights_alpha(&[0.0; 4]), vec![0.25; 4]);
        let c = 7.0;
        let a = hop_weights_alpha(&[c, c - 40.0, c - 40.0, c - 40.0]);
        assert!(a[0] >= 1.0 - 1e-12);
        let a = hop_weights_alpha(&[2f64.ln(), 0.0]);
        assert!((a[0] - 2.0 / 3.0).abs() < 1e-15 && (a[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn diffusion_identity_hop() {
        let p = path3().transition();
        let v = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        assert_eq!(diffuse_transposed(&p, &[1.0, 0.0, 0.0], v.view()).unwrap(), v);
    }

    #[test]
    fn diffusion_on_cycle_preserves_constants() {
        let p = Graph::new(ids(3), &[(0, 1), (1, 2), (2, 0)])
            .unwrap()
            .transition();
        let ones = Array2::ones((3, 1));
        let out = diffuse_transposed(&p, &[0.1, 0.2, 0.3, 0.4], ones.view()).unwrap();
        assert_close(&out, &ones, 1e-15);
    }

    #[test]
    fn diffusion_path_against_hand_pstar() {
        let p = path3().transition();
        let pstar = array![[0.5, 0.5, 0.0], [0.25, 0.5, 0.25], [0.0, 0.5, 0.5]];
        let eye = Array2::eye(3);
        let out = diffuse_transposed(&p, &[0.5, 0.5], eye.view()).unwrap();
        assert_close(&out, &pstar.t().to_owned(), 1e-15);
        assert_close(&materialize_pstar(&p, &[0.5, 0.5]).unwrap(), &pstar, 1e-15);
    }

    #[test]
    fn diffusion_dimension_mismatch() {
        let p = path3().transition();
        assert!(diffuse_transposed(&p, &[1.0], Array2::zeros((2, 1)).view()).is_err());
    }

    #[test]
    fn materialize_examples() {
        let p = path3().transition();
        assert_eq!(materialize_pstar(&p, &[1.0, 0.0]).unwrap(), Array2::<f64>::eye(3));
        let g2 = Graph::new(ids(2), &[(0, 1)]).unwrap().transition();
        assert_eq!(
            materialize_pstar(&g2, &[0.0, 1.0]).unwrap(),
            array![[0.0, 1.0], [1.0, 0.0]]
        );
        assert_close(
            &materialize_pstar(&p, &[0.0, 0.0, 1.0]).unwrap(),
            &array![[0.5, 0.0, 0.5], [0.0, 1.0, 0.0], [0.5, 0.0, 0.5]],
            1e-15,
        );
    }

    #[test]
    fn materialize_guard() {
        let g = Graph::new(ids(DENSE_GUARD + 1), &[]).unwrap();
        assert!(matches!(
            materialize_pstar(&g.transition(), &[1.0]),
            Err(Error::TooLarge { .. })
        ));
    }

    #[test]
    fn add_isolated_node() {
        let g = Graph::new(ids(2), &[(0, 1)]).unwrap().add_node("2", &[]).unwrap();
        assert_eq!((g.num_nodes(), g.num_edges()), (3, 1));
        assert_eq!(g.transition().forward().to_dense().row(2).sum(), 0.0);
    }

    #[test]
    fn add_node_closing_triangle() {
        let g = Graph::new(ids(2), &[(0, 1)])
            .unwrap()
            .add_node("2", &["0", "1"])
            .unwrap();
        let p = g.transition().forward().to_dense();
        for r in 0..3 {
            let row = p.row(r);
            assert_eq!(row.iter().filter(|&&x| x == 0.5).count(), 2);
            assert_eq!(row[r], 0.0);
        }
    }

    #[test]
    fn add_node_errors() {
        let g = Graph::new(ids(2), &[(0, 1)]).unwrap();
        assert!(matches!(g.add_node("1", &[]), Err(Error::DuplicateNode(_))));
        assert!(matches!(g.add_node("9", &["7"]), Err(Error::UnknownNode(_))));
    }

    #[test]
    fn add_nodes_batch_can_reference_itself() {
        let g = Graph::new(ids(1), &[]).unwrap();
        let g = g
            .add_nodes(&[
                ("a".into(), vec!["b".into()]),
                ("b".into(), vec!["0".into()]),
            ])
            .unwrap();
        assert_eq!(g.num_edges(), 2);
        assert!(g.has_edge(g.index_of("a").unwrap(), g.index_of("b").unwrap()));
    }

    #[test]
    fn update_edge_examples() {
        let g = Graph::new(ids(2), &[(0, 1)]).unwrap();
        let cut = g.update_edge("0", "1", false).unwrap();
        assert_eq!(cut.transition().forward().nnz(), 0);
        assert_eq!(cut.update_edge("0", "1", true).unwrap(), g);
        assert_eq!(g.update_edge("1", "0", true).unwrap(), g);
        assert!(g.update_edge("0", "0", true).is_err());
        assert!(g.update_edge("0", "x", true).is_err());

        let tri = Graph::new(ids(3), &[(0, 1), (1, 2), (0, 2)]).unwrap();
        let t = tri.update_edge("0", "1", false).unwrap();
        assert_eq!((t.degree(0), t.degree(1)), (1, 1));
        assert_eq!(t.transition().forward().to_dense().row(0).to_vec(), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn construction_dedups_and_rejects_loops() {
        let g = Graph::new(ids(2), &[(0, 1), (1, 0), (0, 1)]).unwrap();
        assert_eq!(g.num_edges(), 1);
        assert!(matches!(Graph::new(ids(2), &[(1, 1)]), Err(Error::SelfLoop(_))));
        assert!(matches!(
            Graph::new(vec!["a".into(), "a".into()], &[]),
            Err(Error::DuplicateNode(_))
        ));
    }

    #[test]
    fn remove_node_reindexes() {
        let g = Graph::new(ids(4), &[(0, 1), (1, 2), (2, 3)]).unwrap();
        let h = g.remove_node("1").unwrap();
        assert_eq!(h.ids(), &["0", "2", "3"]);
        assert_eq!(h.edges(), vec![(1, 2)]);
    }

    fn arb_graph() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
        (2usize..20).prop_flat_map(|n| {
            let edges = prop::collection::vec((0..n, 0..n), 0..40)
                .prop_map(|es| es.into_iter().filter(|(a, b)| a != b).collect());
            (Just(n), edges)
        })
    }

    fn symmetric(g: &Graph) -> bool {
        (0..g.num_nodes()).all(|a| g.neighbors(a).iter().all(|&b| g.has_edge(b, a) && a != b))
    }

    proptest! {
        #[test]
        fn softmax_shift_invariant(logits in prop::collection::vec(-20.0f64..20.0, 1..6), shift in -50.0f64..50.0) {
            let a = hop_weights_alpha(&logits);
            let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
            let b = hop_weights_alpha(&shifted);
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
                prop_assert!(*x > 0.0);
            }
        }

        #[test]
        fn transition_rows_are_stochastic((n, edges) in arb_graph()) {
            let g = Graph::new(ids(n), &edges).unwrap();
            let p = g.transition();
            for r in 0..n {
                let (cols, vals) = p.forward().row(r);
                let s: f64 = vals.iter().sum();
                if g.degree(r) == 0 {
                    prop_assert!(cols.is_empty());
                } else {
                    prop_assert!((s - 1.0).abs() <= 1e-12);
                }
                prop_assert_eq!(cols, g.neighbors(r));
            }
        }

        #[test]
        fn mutations_preserve_symmetry((n, edges) in arb_graph(), flips in prop::collection::vec((0usize..25, 0usize..25, any::<bool>()), 0..15)) {
            let mut g = Graph::new(ids(n), &edges).unwrap();
            for (k, (a, b, on)) in flips.into_iter().enumerate() {
                if k % 4 == 3 {
                    let nb = g.id(a % g.num_nodes()).to_string();
                    g = g.add_node(&format!("new{k}"), &[nb.as_str()]).unwrap();
                } else {
                    let (a, b) = (a % g.num_nodes(), b % g.num_nodes());
                    if a != b {
                        let (ia, ib) = (g.id(a).to_string(), g.id(b).to_string());
                        g = g.update_edge(&ia, &ib, on).unwrap();
                    }
                }
                prop_assert!(symmetric(&g));
            }
        }

        #[test]
        fn isolated_node_pstar_row((n, edges) in arb_graph(), logits in prop::collection::vec(-2.0f64..2.0, 1..5)) {
            let g = Graph::new(ids(n), &edges).unwrap().add_node("lonely", &[]).unwrap();
            let alpha = hop_weights_alpha(&logits);
            let pstar = materialize_pstar(&g.transition(), &alpha).unwrap();
            let i = g.index_of("lonely").unwrap();
            for c in 0..g.num_nodes() {
                let want = if c == i { alpha[0] } else { 0.0 };
                prop_assert_eq!(pstar[[i, c]], want);
            }
        }
    }
}
