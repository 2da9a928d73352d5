//! Lloyd's k-means with k-means++ seeding, used to place the initial
//! inducing points on the encoded texts.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;

use crate::error::{Error, Result};

const MAX_ITERS: usize = 100;
const SHIFT_TOL: f64 = 1e-6;

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: ArrayView1<'_, f64>, centers: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.rows().into_iter().enumerate() {
        let d = sq_dist(point, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_seed<R: Rng + ?Sized>(x: ArrayView2<'_, f64>, m: usize, rng: &mut R) -> Array2<f64> {
    let n = x.nrows();
    let mut centers = Array2::zeros((m, x.ncols()));
    centers.row_mut(0).assign(&x.row(rng.random_range(0..n)));
    let mut dist: Vec<f64> = x.rows().into_iter().map(|r| sq_dist(r, centers.row(0))).collect();
    for c in 1..m {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in dist.iter().enumerate() {
                if d > 0.0 && target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            if dist[chosen] == 0.0 {
                // round-off ran past the end; take the last point with mass
                chosen = dist.iter().rposition(|&d| d > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(c).assign(&x.row(pick));
        for (i, row) in x.rows().into_iter().enumerate() {
            dist[i] = dist[i].min(sq_dist(row, centers.row(c)));
        }
    }
    centers
}

/// Returns `m` cluster centers of the rows of `x`.
pub fn kmeans_init<R: Rng + ?Sized>(x: ArrayView2<'_, f64>, m: usize, rng: &mut R) -> Result<Array2<f64>> {
    let n = x.nrows();
    if m == 0 || n < m {
        return Err(Error::InvalidArgument(format!(
            "k-means needs 1 <= M <= N, got M = {m}, N = {n}"
        )));
    }
    let d = x.ncols();
    let mut centers = plus_plus_seed(x, m, rng);
    let mut assign = vec![0usize; n];
    let mut dists = vec![0.0; n];
    for _ in 0..MAX_ITERS {
        for (i, row) in x.rows().into_iter().enumerate() {
            let (c, dd) = nearest(row, &centers);
            assign[i] = c;
            dists[i] = dd;
        }
        let mut sums = Array2::<f64>::zeros((m, d));
        let mut counts = vec![0usize; m];
        for (i, &c) in assign.iter().enumerate() {
            let mut s = sums.row_mut(c);
            s += &x.row(i);
            counts[c] += 1;
        }
        let mut taken = vec![false; n];
        let mut shift: f64 = 0.0;
        for c in 0..m {
            let new_center = if counts[c] > 0 {
                sums.row(c).mapv(|v| v / counts[c] as f64)
            } else {
                // empty cluster: move it onto the farthest unclaimed point
                let far = (0..n)
                    .filter(|&i| !taken[i])
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                    .unwrap_or(0);
                taken[far] = true;
                dists[far] = 0.0;
                x.row(far).to_owned()
            };
            shift = shift.max(sq_dist(new_center.view(), centers.row(c)).sqrt());
            centers.row_mut(c).assign(&new_center);
        }
        if shift < SHIFT_TOL {
            break;
        }
    }
    Ok(centers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn sorted_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
        let mut rows: Vec<Vec<f64>> = a.rows().into_iter().map(|r| r.to_vec()).collect();
        rows.sort_by(|x, y| x.partial_cmp(y).unwrap());
        rows
    }

    #[test]
    fn n_equals_m_returns_the_points() {
        let x = array![[0.0, 1.0], [5.0, 5.0], [-3.0, 2.0], [1.0, 1.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = kmeans_init(x.view(), 4, &mut rng).unwrap();
        assert_eq!(sorted_rows(&c), sorted_rows(&x));
    }

    #[test]
    fn identical_points_give_identical_centers() {
        let x = Array2::from_elem((6, 3), 0.25);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = kmeans_init(x.view(), 3, &mut rng).unwrap();
        assert!(c.iter().all(|&v| v == 0.25));
    }

    #[test]
    fn separated_clouds_recover_cloud_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let mut x = Array2::zeros((40, 2));
        for i in 0..40 {
            let base = if i < 20 { -10.0 } else { 10.0 };
            x[[i, 0]] = base + noise.sample(&mut rng);
            x[[i, 1]] = noise.sample(&mut rng);
        }
        // brute force: the best 2-partition of two far clouds is the split by cloud
        let mean = |lo: usize, hi: usize| {
            let part = x.slice(ndarray::s![lo..hi, ..]);
            part.mean_axis(ndarray::Axis(0)).unwrap().to_vec()
        };
        let mut want = vec![mean(0, 20), mean(20, 40)];
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let got = sorted_rows(&kmeans_init(x.view(), 2, &mut rng).unwrap());
        for (g, w) in got.iter().zip(&want) {
            for (a, b) in g.iter().zip(w) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rejects_too_many_centers() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(kmeans_init(Array2::zeros((2, 2)).view(), 3, &mut rng).is_err());
    }

    #[test]
    fn deterministic_under_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let x = Array2::from_shape_simple_fn((30, 4), || rng.random::<f64>());
        let a = kmeans_init(x.view(), 5, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = kmeans_init(x.view(), 5, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
    }
}
