//! Sparse Gaussian-process structural embedding layer.
//!
//! The structural embedding of every node is the posterior mean
//!
//! ```text
//! S = P*ᵀ K_XZ (K_ZZ + σI)⁻¹ U
//! ```
//!
//! with the first-degree polynomial kernel `k(x, y) = xᵀy + C`. Training only
//! ever uses this mean; the covariance functions below are diagnostics that
//! document (and test) what the diffusion does to the GP prior.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::{dense_powers, diffuse_transposed, forward_powers, materialize_pstar};
use crate::graph::{HopWeights, TransitionMatrix};
use crate::linalg::Cholesky;

pub const DEFAULT_INDUCING: usize = 20;
pub const DEFAULT_STRUCT_DIM: usize = 100;
pub const DEFAULT_JITTER: f64 = 1e-3;
pub const DEFAULT_KERNEL_BIAS: f64 = 1.0;

const PRIOR_GUARD: usize = 4096;
const EXPAND_GUARD: usize = 256;
const POSTERIOR_GUARD: usize = 2048;

/// Learnable pseudo-inputs `Z` (text space) and pseudo-outputs `U`
/// (structure space), plus the kernel bias `C` and jitter `σ`.
#[derive(Clone, Debug, PartialEq)]
pub struct InducingPointSet {
    pub z: Array2<f64>,
    pub u: Array2<f64>,
    pub bias: f64,
    pub jitter: f64,
}

impl InducingPointSet {
    pub fn new(z: Array2<f64>, u: Array2<f64>, bias: f64, jitter: f64) -> Result<Self> {
        let set = Self { z, u, bias, jitter };
        set.validate()?;
        Ok(set)
    }

    /// `M` points at the origin with Gaussian `U` (std 0.1).
    pub fn random<R: Rng + ?Sized>(
        m: usize,
        d_text: usize,
        d_struct: usize,
        bias: f64,
        jitter: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let normal = Normal::new(0.0, 0.1).expect("valid std");
        let u = Array2::from_shape_simple_fn((m, d_struct), || normal.sample(rng));
        Self::new(Array2::zeros((m, d_text)), u, bias, jitter)
    }

    pub fn validate(&self) -> Result<()> {
        if self.z.nrows() == 0 {
            return Err(Error::InvalidArgument("need at least one inducing point".into()));
        }
        if self.z.nrows() != self.u.nrows() {
            return Err(Error::dims("inducing Z/U rows", self.z.nrows(), self.u.nrows()));
        }
        if !(self.bias > 0.0) || !(self.jitter > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "kernel bias ({}) and jitter ({}) must be positive",
                self.bias, self.jitter
            )));
        }
        if self.z.iter().chain(self.u.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite inducing parameters".into()));
        }
        Ok(())
    }

    pub fn num_points(&self) -> usize {
        self.z.nrows()
    }

    pub fn text_dim(&self) -> usize {
        self.z.ncols()
    }

    pub fn struct_dim(&self) -> usize {
        self.u.ncols()
    }

    /// `K_ZZ + σI`.
    pub fn jittered_gram(&self) -> Array2<f64> {
        let mut k = gram(self.z.view(), self.z.view(), self.bias);
        k.diag_mut().mapv_inplace(|v| v + self.jitter);
        k
    }

    pub fn factor(&self) -> Result<Cholesky> {
        Cholesky::factor(self.jittered_gram().view())
    }
}

/// Posterior-mean structural embeddings, one row per node.
#[derive(Clone, Debug, PartialEq)]
pub struct StructuralEmbedding {
    pub s: Array2<f64>,
}

/// `xᵀy + C`.
pub fn kernel(x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>, bias: f64) -> f64 {
    x.dot(&y) + bias
}

fn gram(x: ArrayView2<'_, f64>, z: ArrayView2<'_, f64>, bias: f64) -> Array2<f64> {
    let mut k = x.dot(&z.t());
    k.mapv_inplace(|v| v + bias);
    k
}

/// `[K]_{nm} = x_nᵀ z_m + C`.
pub fn cross_kernel(x: ArrayView2<'_, f64>, z: ArrayView2<'_, f64>, bias: f64) -> Result<Array2<f64>> {
    if x.ncols() != z.ncols() {
        return Err(Error::dims("cross kernel feature width", x.ncols(), z.ncols()));
    }
    Ok(gram(x, z, bias))
}

/// Intermediates of one forward pass, needed by the backward pass.
#[derive(Clone, Debug)]
struct ForwardCache {
    x: Array2<f64>,
    kxz: Array2<f64>,
    chol: Cholesky,
    /// `(K_ZZ + σI)⁻¹ U`
    solved: Array2<f64>,
    /// `K_XZ (K_ZZ + σI)⁻¹ U`, the undiffused mean.
    local: Array2<f64>,
    alpha: Vec<f64>,
}

/// Gradients of a scalar loss with respect to the layer inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct GpGradients {
    pub x: Array2<f64>,
    pub z: Array2<f64>,
    pub u: Array2<f64>,
    pub logits: Vec<f64>,
}

/// Stateful wrapper that remembers the last forward pass so gradients can
/// be taken afterwards.
#[derive(Clone, Debug, Default)]
pub struct StructuralLayer {
    cache: Option<ForwardCache>,
}

impl StructuralLayer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(
        &mut self,
        x: ArrayView2<'_, f64>,
        p: &TransitionMatrix,
        hops: &HopWeights,
        ind: &InducingPointSet,
    ) -> Result<StructuralEmbedding> {
        self.cache = None;
        if x.nrows() != p.num_nodes() {
            return Err(Error::dims("text rows vs graph nodes", p.num_nodes(), x.nrows()));
        }
        let alpha = hops.alpha();
        let kxz = cross_kernel(x, ind.z.view(), ind.bias)?;
        let chol = ind.factor()?;
        let solved = chol.solve(ind.u.view())?;
        let local = kxz.dot(&solved);
        let s = diffuse_transposed(p, &alpha, local.view())?;
        self.cache = Some(ForwardCache {
            x: x.to_owned(),
            kxz,
            chol,
            solved,
            local,
            alpha,
        });
        Ok(StructuralEmbedding { s })
    }

    /// Reverse-mode gradients given `∂loss/∂S`. Graph entries are constants.
    pub fn backward(
        &self,
        grad_s: ArrayView2<'_, f64>,
        p: &TransitionMatrix,
        ind: &InducingPointSet,
    ) -> Result<GpGradients> {
        let cache = self.cache.as_ref().ok_or(Error::MissingCache)?;
        if grad_s.dim() != cache.local.dim() {
            return Err(Error::dims(
                "structural gradient shape",
                format!("{:?}", cache.local.dim()),
                format!("{:?}", grad_s.dim()),
            ));
        }
        let max_hops = cache.alpha.len() - 1;

        // S = Σ_j α_j (Pᵀ)^j G  ⇒  ∂G = Σ_j α_j P^j ∂S, ∂α_j = ⟨G, P^j ∂S⟩
        let powers = forward_powers(p, max_hops, grad_s)?;
        let mut grad_local = Array2::<f64>::zeros(cache.local.dim());
        let mut grad_alpha = Vec::with_capacity(max_hops + 1);
        for (a, w) in cache.alpha.iter().zip(&powers) {
            grad_local.scaled_add(*a, w);
            grad_alpha.push((&cache.local * w).sum());
        }
        let weighted: f64 = cache.alpha.iter().zip(&grad_alpha).map(|(a, g)| a * g).sum();
        let logits = cache
            .alpha
            .iter()
            .zip(&grad_alpha)
            .map(|(a, g)| a * (g - weighted))
            .collect();

        // G = K B with B = A⁻¹ U
        let grad_kxz = grad_local.dot(&cache.solved.t());
        let grad_solved = cache.kxz.t().dot(&grad_local);
        let grad_u = cache.chol.solve(grad_solved.view())?;
        let grad_gram = -grad_u.dot(&cache.solved.t());

        // K_XZ = X Zᵀ + C, A = Z Zᵀ + C + σI
        let grad_x = grad_kxz.dot(&ind.z);
        let mut grad_z = grad_kxz.t().dot(&cache.x);
        let sym = &grad_gram + &grad_gram.t();
        grad_z += &sym.dot(&ind.z);

        Ok(GpGradients {
            x: grad_x,
            z: grad_z,
            u: grad_u,
            logits,
        })
    }
}

/// Posterior-mean structural embeddings for all nodes.
pub fn structural_mean(
    x: ArrayView2<'_, f64>,
    p: &TransitionMatrix,
    hops: &HopWeights,
    ind: &InducingPointSet,
) -> Result<StructuralEmbedding> {
    StructuralLayer::new().forward(x, p, hops, ind)
}

/// Prior covariance `P*ᵀ K_XX P*` shared by every structural dimension.
pub fn prior_covariance(
    x: ArrayView2<'_, f64>,
    p: &TransitionMatrix,
    alpha: &[f64],
    bias: f64,
) -> Result<Array2<f64>> {
    guard("prior covariance", p.num_nodes(), PRIOR_GUARD)?;
    let pstar = materialize_pstar(p, alpha)?;
    let kxx = cross_kernel(x, x, bias)?;
    Ok(pstar.t().dot(&kxx).dot(&pstar))
}

/// Entry `(n, n2)` of the prior covariance written as its four-term
/// expansion with `P* = α_0 I + Σ_{j≥1} α_j P^j`:
///
/// ```text
/// α_0² k(x_n, x_n2)
///   + α_0 Σ_j α_j Σ_r P^j_{r n}  k(x_r, x_n2)
///   + α_0 Σ_j α_j Σ_r P^j_{r n2} k(x_n, x_r)
///   + Σ_j Σ_j' α_j α_j' Σ_r Σ_r' P^j_{r n} P^j'_{r' n2} k(x_r, x_r')
/// ```
///
/// Hop sums run over `j, j' ≥ 1` and `r, r'` over all nodes.
pub fn covariance_expand(
    n: usize,
    n2: usize,
    x: ArrayView2<'_, f64>,
    p: &TransitionMatrix,
    alpha: &[f64],
    bias: f64,
) -> Result<f64> {
    let size = p.num_nodes();
    guard("covariance expansion", size, EXPAND_GUARD)?;
    check_index(n, size)?;
    check_index(n2, size)?;
    let powers = dense_powers(p, alpha.len() - 1, EXPAND_GUARD)?;
    let k = |a: usize, b: usize| kernel(x.row(a), x.row(b), bias);

    let mut total = alpha[0] * alpha[0] * k(n, n2);
    for j in 1..alpha.len() {
        let pj = &powers[j];
        for r in 0..size {
            total += alpha[0] * alpha[j] * pj[[r, n]] * k(r, n2);
            total += alpha[0] * alpha[j] * pj[[r, n2]] * k(n, r);
        }
    }
    for j in 1..alpha.len() {
        for j2 in 1..alpha.len() {
            let w = alpha[j] * alpha[j2];
            for r in 0..size {
                let a = powers[j][[r, n]];
                if a == 0.0 {
                    continue;
                }
                for r2 in 0..size {
                    let b = powers[j2][[r2, n2]];
                    if b != 0.0 {
                        total += w * a * b * k(r, r2);
                    }
                }
            }
        }
    }
    Ok(total)
}

/// Covariance between node `n` and inducing point `m`:
/// `α_0 k(x_n, z_m) + Σ_{j≥1} α_j Σ_r P^j_{r n} k(x_r, z_m)`.
pub fn node_inducing_covariance(
    n: usize,
    m: usize,
    x: ArrayView2<'_, f64>,
    z: ArrayView2<'_, f64>,
    p: &TransitionMatrix,
    alpha: &[f64],
    bias: f64,
) -> Result<f64> {
    let size = p.num_nodes();
    check_index(n, size)?;
    if m >= z.nrows() {
        return Err(Error::NodeIndexOutOfRange {
            index: m,
            len: z.nrows(),
        });
    }
    if x.nrows() != size {
        return Err(Error::dims("text rows vs graph nodes", size, x.nrows()));
    }
    // column n of P^j, built by repeated products with P
    let mut column = Array2::<f64>::zeros((size, 1));
    column[[n, 0]] = 1.0;
    let mut total = alpha[0] * kernel(x.row(n), z.row(m), bias);
    for a in &alpha[1..] {
        column = p.forward().mul_dense(column.view())?;
        for r in 0..size {
            let w = column[[r, 0]];
            if w != 0.0 {
                total += a * w * kernel(x.row(r), z.row(m), bias);
            }
        }
    }
    Ok(total)
}

/// Posterior covariance
/// `P*ᵀ K_XX P* − P*ᵀ K_XZ (K_ZZ + σI)⁻¹ K_ZX P*`.
pub fn posterior_covariance(
    x: ArrayView2<'_, f64>,
    p: &TransitionMatrix,
    alpha: &[f64],
    ind: &InducingPointSet,
) -> Result<Array2<f64>> {
    guard("posterior covariance", p.num_nodes(), POSTERIOR_GUARD)?;
    let prior = prior_covariance(x, p, alpha, ind.bias)?;
    let kxz = cross_kernel(x, ind.z.view(), ind.bias)?;
    let q = diffuse_transposed(p, alpha, kxz.view())?;
    let chol = ind.factor()?;
    let solved = chol.solve(q.t())?;
    let explained = q.dot(&solved);
    let mut post = prior - explained;
    // symmetrize away round-off
    let sym = (&post + &post.t()) * 0.5;
    post.assign(&sym);
    Ok(post)
}

/// Row `n` of the undiffused mean for a single text vector; useful for
/// isolated nodes where `s_n = α_0 k(x_n, Z) (K_ZZ + σI)⁻¹ U`.
pub fn local_mean(x: ArrayView1<'_, f64>, ind: &InducingPointSet) -> Result<Array1<f64>> {
    let row = x.insert_axis(Axis(0));
    let k = cross_kernel(row, ind.z.view(), ind.bias)?;
    let solved = ind.factor()?.solve(ind.u.view())?;
    Ok(k.dot(&solved).row(0).to_owned())
}

fn guard(what: &'static str, n: usize, limit: usize) -> Result<()> {
    if n > limit {
        Err(Error::TooLarge { what, n, limit })
    } else {
        Ok(())
    }
}

fn check_index(i: usize, len: usize) -> Result<()> {
    if i >= len {
        Err(Error::NodeIndexOutOfRange { index: i, len })
    } else {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{hop_weights_alpha, Graph};
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| i.to_string()).collect()
    }

    fn randn(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_simple_fn((rows, cols), || rng.sample::<f64, _>(StandardNormal))
    }

    fn random_graph(n: usize, p_edge: f64, rng: &mut ChaCha8Rng) -> Graph {
        let mut edges = vec![];
        for a in 0..n {
            for b in (a + 1)..n {
                if rng.random::<f64>() < p_edge {
                    edges.push((a, b));
                }
            }
        }
        Graph::new(ids(n), &edges).unwrap()
    }

    #[test]
    fn kernel_examples() {
        let z = array![0.0, 0.0];
        assert_eq!(kernel(z.view(), z.view(), 1.0), 1.0);
        let (x, y) = (array![1.0, 2.0], array![3.0, -1.0]);
        assert_eq!(kernel(x.view(), y.view(), 1.0), 2.0);
        assert_eq!(kernel(y.view(), x.view(), 1.0), 2.0);
    }

    #[test]
    fn cross_kernel_examples() {
        let x = Array2::zeros((3, 2));
        let z = array![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(cross_kernel(x.view(), z.view(), 1.0).unwrap(), Array2::<f64>::ones((3, 2)));
        let k = cross_kernel(z.view(), z.view(), 0.5).unwrap();
        assert_eq!(k, k.t());
        assert_eq!(k[[1, 1]], 25.5);
        let k = cross_kernel(array![[1.0, 0.0]].view(), array![[0.0, 1.0], [2.0, 0.0]].view(), 0.5).unwrap();
        assert_eq!(k, array![[0.5, 2.5]]);
        assert!(cross_kernel(x.view(), Array2::zeros((1, 3)).view(), 1.0).is_err());
    }

    #[test]
    fn mean_on_cycle_with_single_point() {
        let g = Graph::new(ids(3), &[(0, 1), (1, 2), (2, 0)]).unwrap();
        let u = array![[0.3, -0.6]];
        let ind = InducingPointSet::new(Array2::zeros((1, 4)), u.clone(), 1.0, 0.1).unwrap();
        let hops = HopWeights::from_logits(vec![0.2, -1.0, 0.7]).unwrap();
        let s = structural_mean(Array2::zeros((3, 4)).view(), &g.transition(), &hops, &ind).unwrap();
        for row in s.s.rows() {
            for (a, b) in row.iter().zip(u.row(0)) {
                assert!((a - b / 1.1).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn mean_without_diffusion_is_plain_sparse_gp() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = random_graph(6, 0.5, &mut rng);
        let x = randn(6, 3, &mut rng);
        let ind = InducingPointSet::new(randn(2, 3, &mut rng), randn(2, 2, &mut rng), 1.0, 1e-3).unwrap();
        let hops = HopWeights::from_logits(vec![0.0, -60.0]).unwrap();
        let s = structural_mean(x.view(), &g.transition(), &hops, &ind).unwrap();
        let kxz = cross_kernel(x.view(), ind.z.view(), 1.0).unwrap();
        let plain = kxz.dot(&ind.factor().unwrap().solve(ind.u.view()).unwrap());
        for (a, b) in s.s.iter().zip(&plain) {
            assert!((a - b).abs() < 1e-12);
        }
        let zero_u = InducingPointSet::new(ind.z.clone(), Array2::zeros((2, 2)), 1.0, 1e-3).unwrap();
        let s0 = structural_mean(x.view(), &g.transition(), &hops, &zero_u).unwrap();
        assert!(s0.s.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn prior_covariance_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = random_graph(5, 0.5, &mut rng);
        let x = randn(5, 2, &mut rng);
        let p = g.transition();
        let prior = prior_covariance(x.view(), &p, &[1.0, 0.0], 1.0).unwrap();
        let kxx = cross_kernel(x.view(), x.view(), 1.0).unwrap();
        assert!(prior.iter().zip(&kxx).all(|(a, b)| (a - b).abs() < 1e-12));

        let swap = Graph::new(ids(2), &[(0, 1)]).unwrap().transition();
        let eye = Array2::<f64>::eye(2);
        let c = prior_covariance(eye.view(), &swap, &[0.0, 1.0], 0.0).unwrap();
        assert_eq!(c, eye);
    }

    #[test]
    fn expansion_reduces_to_kernel_without_hops() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = random_graph(6, 0.4, &mut rng).add_node("a", &[]).unwrap().add_node("b", &[]).unwrap();
        let x = randn(8, 3, &mut rng);
        let p = g.transition();
        let k = |a: usize, b: usize| kernel(x.row(a), x.row(b), 1.0);
        let v = covariance_expand(1, 3, x.view(), &p, &[1.0, 0.0, 0.0], 1.0).unwrap();
        assert!((v - k(1, 3)).abs() < 1e-12);
        let alpha = hop_weights_alpha(&[0.3, 0.1, -0.4]);
        let v = covariance_expand(6, 7, x.view(), &p, &alpha, 1.0).unwrap();
        assert!((v - alpha[0] * alpha[0] * k(6, 7)).abs() < 1e-12);
        assert!(covariance_expand(0, 99, x.view(), &p, &alpha, 1.0).is_err());
    }

    #[test]
    fn node_inducing_covariance_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let g = random_graph(7, 0.4, &mut rng).add_node("iso", &[]).unwrap();
        let x = randn(8, 3, &mut rng);
        let z = randn(2, 3, &mut rng);
        let p = g.transition();
        let local = kernel(x.row(2), z.row(1), 1.0);
        let v = node_inducing_covariance(2, 1, x.view(), z.view(), &p, &[1.0, 0.0, 0.0], 1.0).unwrap();
        assert!((v - local).abs() < 1e-12);
        let alpha = hop_weights_alpha(&[0.1, 0.5, -0.2]);
        let v = node_inducing_covariance(7, 0, x.view(), z.view(), &p, &alpha, 1.0).unwrap();
        assert!((v - alpha[0] * kernel(x.row(7), z.row(0), 1.0)).abs() < 1e-12);
        assert!(node_inducing_covariance(0, 5, x.view(), z.view(), &p, &alpha, 1.0).is_err());
    }

    #[test]
    fn posterior_collapses_when_inducing_points_are_the_nodes() {
        let x = array![[1.0, 0.0, 0.0, 0.5], [0.0, 1.0, 0.0, -0.5], [0.0, 0.0, 1.0, 0.25]];
        let g = Graph::new(ids(3), &[(0, 1), (1, 2)]).unwrap();
        let ind = InducingPointSet::new(x.clone(), Array2::ones((3, 2)), 1.0, 1e-12).unwrap();
        let alpha = hop_weights_alpha(&[0.2, 0.4, -0.1]);
        let post = posterior_covariance(x.view(), &g.transition(), &alpha, &ind).unwrap();
        assert!(post.iter().all(|v| v.abs() < 1e-6), "{post}");
        let other_u = InducingPointSet::new(x.clone(), Array2::zeros((3, 5)), 1.0, 1e-12).unwrap();
        assert_eq!(post, posterior_covariance(x.view(), &g.transition(), &alpha, &other_u).unwrap());
    }

    #[test]
    fn posterior_is_psd_on_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..10 {
            let g = random_graph(10, 0.3, &mut rng);
            let x = randn(10, 4, &mut rng);
            let ind = InducingPointSet::new(randn(3, 4, &mut rng), randn(3, 2, &mut rng), 1.0, 1e-3).unwrap();
            let alpha = hop_weights_alpha(&[rng.random(), rng.random(), rng.random()]);
            let post = posterior_covariance(x.view(), &g.transition(), &alpha, &ind).unwrap();
            assert_eq!(post, post.t());
            assert!(post.diag().iter().all(|&d| d >= -1e-9));
            // Smallest eigenvalue via Cholesky of a shifted copy.
            let mut shifted = post.clone();
            shifted.diag_mut().mapv_inplace(|d| d + 1e-8);
            assert!(Cholesky::factor(shifted.view()).is_ok());
        }
    }

    #[test]
    fn backward_with_zero_upstream_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = random_graph(5, 0.5, &mut rng);
        let p = g.transition();
        let ind = InducingPointSet::new(randn(2, 3, &mut rng), randn(2, 2, &mut rng), 1.0, 1e-3).unwrap();
        let hops = HopWeights::uniform(2);
        let mut layer = StructuralLayer::new();
        assert!(matches!(
            layer.backward(Array2::zeros((5, 2)).view(), &p, &ind),
            Err(Error::MissingCache)
        ));
        layer.forward(randn(5, 3, &mut rng).view(), &p, &hops, &ind).unwrap();
        let g = layer.backward(Array2::zeros((5, 2)).view(), &p, &ind).unwrap();
        assert!(g.x.iter().chain(g.z.iter()).chain(g.u.iter()).chain(g.logits.iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn single_hop_simplex_has_zero_logit_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = random_graph(5, 0.5, &mut rng);
        let p = g.transition();
        let x = randn(5, 3, &mut rng);
        let ind = InducingPointSet::new(randn(2, 3, &mut rng), randn(2, 2, &mut rng), 1.0, 1e-3).unwrap();
        let mut layer = StructuralLayer::new();
        layer.forward(x.view(), &p, &HopWeights::uniform(0), &ind).unwrap();
        let grad_s = randn(5, 2, &mut rng);
        let grads = layer.backward(grad_s.view(), &p, &ind).unwrap();
        assert_eq!(grads.logits, vec![0.0]);
        // dU = A⁻¹ K_XZᵀ ∂S when there is no diffusion
        let kxz = cross_kernel(x.view(), ind.z.view(), 1.0).unwrap();
        let want = ind.factor().unwrap().solve(kxz.t().dot(&grad_s).view()).unwrap();
        assert!(grads.u.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-10));
    }

    /// Loss `⟨W, S⟩` for a fixed random `W`, so `∂loss/∂S = W`.
    fn probe_loss(
        x: &Array2<f64>,
        p: &TransitionMatrix,
        hops: &HopWeights,
        ind: &InducingPointSet,
        w: &Array2<f64>,
    ) -> f64 {
        (&structural_mean(x.view(), p, hops, ind).unwrap().s * w).sum()
    }

    fn assert_fd(analytic: f64, plus: f64, minus: f64, h: f64, what: &str) {
        let fd = (plus - minus) / (2.0 * h);
        let scale = fd.abs().max(analytic.abs());
        let err = (fd - analytic).abs();
        assert!(
            err <= 1e-6 * scale || err < 1e-9,
            "{what}: analytic {analytic} vs fd {fd}"
        );
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let (n, m, dt, ds) = (12, 3, 5, 4);
        let g = random_graph(n, 0.25, &mut rng).add_node("iso", &[]).unwrap();
        let n = n + 1;
        let p = g.transition();
        let x = randn(n, dt, &mut rng) * 0.5;
        let ind = InducingPointSet::new(randn(m, dt, &mut rng) * 0.5, randn(m, ds, &mut rng), 1.0, 0.1).unwrap();
        let hops = HopWeights::from_logits(vec![0.3, -0.2, 0.5]).unwrap();
        let w = randn(n, ds, &mut rng);

        let mut layer = StructuralLayer::new();
        layer.forward(x.view(), &p, &hops, &ind).unwrap();
        let grads = layer.backward(w.view(), &p, &ind).unwrap();
        let h = 1e-5;

        for i in 0..n {
            for j in 0..dt {
                let mut xp = x.clone();
                xp[[i, j]] += h;
                let mut xm = x.clone();
                xm[[i, j]] -= h;
                assert_fd(grads.x[[i, j]], probe_loss(&xp, &p, &hops, &ind, &w), probe_loss(&xm, &p, &hops, &ind, &w), h, "x");
            }
        }
        for i in 0..m {
            for j in 0..dt {
                let mut ip = ind.clone();
                ip.z[[i, j]] += h;
                let mut im = ind.clone();
                im.z[[i, j]] -= h;
                assert_fd(grads.z[[i, j]], probe_loss(&x, &p, &hops, &ip, &w), probe_loss(&x, &p, &hops, &im, &w), h, "z");
            }
            for j in 0..ds {
                let mut ip = ind.clone();
                ip.u[[i, j]] += h;
                let mut im = ind.clone();
                im.u[[i, j]] -= h;
                assert_fd(grads.u[[i, j]], probe_loss(&x, &p, &hops, &ip, &w), probe_loss(&x, &p, &hops, &im, &w), h, "u");
            }
        }
        for k in 0..3 {
            let mut hp = hops.clone();
            hp.logits[k] += h;
            let mut hm = hops.clone();
            hm.logits[k] -= h;
            assert_fd(grads.logits[k], probe_loss(&x, &p, &hp, &ind, &w), probe_loss(&x, &p, &hm, &ind, &w), h, "logits");
        }
    }

    #[test]
    fn forward_reports_non_pd_system() {
        let g = Graph::new(ids(2), &[(0, 1)]).unwrap();
        let mut ind = InducingPointSet::new(Array2::zeros((2, 1)), Array2::ones((2, 1)), 1.0, 1.0).unwrap();
        ind.jitter = -1.0;
        let err = structural_mean(Array2::zeros((2, 1)).view(), &g.transition(), &HopWeights::uniform(1), &ind);
        assert!(matches!(err, Err(Error::NotPositiveDefinite { .. })));
    }
}
