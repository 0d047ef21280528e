//! Spectral clustering of frame embeddings.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::segments::IndexList;

/// Upper bound on the number of clusters.
pub const MAX_CLUSTERS: usize = 8;
const KMEANS_RESTARTS: usize = 5;
const KMEANS_ITERS: usize = 100;

/// Partitions the indices of `items` into clusters of similar vectors.
///
/// Affinities are cosine similarities clipped to `[0, 1]` (self-affinity 1).
/// The cluster count maximizes the eigengap of the symmetric normalized
/// Laplacian, capped at `min(8, n)`; rows of the leading eigenvectors are
/// normalized and grouped with seeded k-means++. Clusters are returned in
/// order of their smallest index.
pub fn spectral_cluster(items: &[(usize, Vec<f64>)], seed: u64) -> Vec<IndexList> {
    let n = items.len();
    if n == 0 {
        return Vec::new();
    }
    if n == 1 {
        return vec![IndexList::new(vec![items[0].0])];
    }
    let units: Vec<Vec<f64>> = items.iter().map(|(_, v)| unit(v)).collect();
    let mut a = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        a[(i, i)] = 1.0;
        for j in 0..i {
            let c = dot(&units[i], &units[j]).clamp(0.0, 1.0);
            a[(i, j)] = c;
            a[(j, i)] = c;
        }
    }
    let inv_sqrt: Vec<f64> = (0..n).map(|i| a.row(i).sum().powf(-0.5)).collect();
    let mut lap = DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        for j in 0..n {
            lap[(i, j)] -= inv_sqrt[i] * a[(i, j)] * inv_sqrt[j];
        }
    }
    let eig = SymmetricEigen::new(lap);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]).then(x.cmp(&y)));
    let lambda: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();

    let k_max = MAX_CLUSTERS.min(n);
    // the spectrum lies in [0, 2], so 2 stands in for the missing λ_n
    let gap = |k: usize| lambda.get(k).copied().unwrap_or(2.0) - lambda[k - 1];
    let mut k = 1;
    for cand in 2..=k_max {
        if gap(cand) > gap(k) + 1e-12 {
            k = cand;
        }
    }
    if k == 1 {
        return vec![IndexList::new(items.iter().map(|(i, _)| *i).collect())];
    }
    let points: Vec<Vec<f64>> = (0..n)
        .map(|r| unit(&order[..k].iter().map(|&c| eig.eigenvectors[(r, c)]).collect::<Vec<_>>()))
        .collect();
    let assign = kmeans(&points, k, seed);
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (r, &c) in assign.iter().enumerate() {
        groups[c].push(items[r].0);
    }
    let mut out: Vec<IndexList> = groups
        .into_iter()
        .filter(|g| !g.is_empty())
        .map(IndexList::new)
        .collect();
    out.sort_by_key(|g| g.as_slice()[0]);
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `v / ‖v‖`, or `v` unchanged when its norm vanishes.
fn unit(v: &[f64]) -> Vec<f64> {
    let norm = dot(v, v).sqrt();
    if norm > 1e-12 {
        v.iter().map(|x| x / norm).collect()
    } else {
        v.to_vec()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd iterations from k-means++ seeds; the lowest-inertia restart wins.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..KMEANS_RESTARTS {
        let (inertia, assign) = lloyd(points, plus_plus(points, k, &mut rng));
        if best.as_ref().is_none_or(|(b, _)| inertia < *b) {
            best = Some((inertia, assign));
        }
    }
    best.map(|(_, a)| a).unwrap_or_default()
}

fn plus_plus<R: Rng + ?Sized>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centers = vec![points[rng.random_range(0..points.len())].clone()];
    while centers.len() < k {
        let d: Vec<f64> = points
            .iter()
            .map(|p| centers.iter().map(|c| sq_dist(p, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d.iter().sum();
        let next = if total <= 0.0 {
            rng.random_range(0..points.len())
        } else {
            let mut u = rng.random::<f64>() * total;
            d.iter()
                .position(|&x| {
                    u -= x;
                    u < 0.0
                })
                .unwrap_or(points.len() - 1)
        };
        centers.push(points[next].clone());
    }
    centers
}

fn lloyd(points: &[Vec<f64>], mut centers: Vec<Vec<f64>>) -> (f64, Vec<usize>) {
    let nearest = |p: &[f64], centers: &[Vec<f64>]| {
        let mut best = (0, f64::INFINITY);
        for (c, ctr) in centers.iter().enumerate() {
            let d = sq_dist(p, ctr);
            if d < best.1 {
                best = (c, d);
            }
        }
        best
    };
    let mut assign = vec![usize::MAX; points.len()];
    for _ in 0..KMEANS_ITERS {
        let mut changed = false;
        for (p, a) in points.iter().zip(assign.iter_mut()) {
            let (c, _) = nearest(p, &centers);
            if *a != c {
                *a = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let dim = points[0].len();
        let mut sums = vec![vec![0.0; dim]; centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for (p, &a) in points.iter().zip(&assign) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        for ((ctr, sum), &cnt) in centers.iter_mut().zip(sums).zip(&counts) {
            if cnt > 0 {
                *ctr = sum.into_iter().map(|s| s / cnt as f64).collect();
            }
        }
    }
    let inertia = points.iter().map(|p| nearest(p, &centers).1).sum();
    (inertia, assign)
}
