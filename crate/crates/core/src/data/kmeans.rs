//! Lloyd's algorithm with k-means++ seeding.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::rows::{dist2, Rows};

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub centroids: Rows,
    pub assignment: Vec<usize>,
    /// Within-cluster sum of squares after each assignment step.
    pub objective: Vec<f64>,
    pub iterations: usize,
}

pub fn count_distinct(points: &Rows) -> usize {
    let set: HashSet<Vec<u64>> = points
        .iter()
        .map(|p| p.iter().map(|v| (v + 0.0).to_bits()).collect())
        .collect();
    set.len()
}

/// Nearest centroid, lowest index on ties.
fn nearest(p: &[f64], centroids: &Rows) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, q) in centroids.iter().enumerate() {
        let d = dist2(p, q);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn seed_plus_plus(points: &Rows, k: usize, rng: &mut ChaCha8Rng) -> Rows {
    let n = points.len();
    let mut chosen = vec![rng.gen_range(0..n)];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| dist2(p, points.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut t = rng.gen::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(i);
                    if t < w {
                        break;
                    }
                    t -= w;
                }
            }
            pick.expect("positive total implies a positive weight")
        } else {
            // Unreachable when k <= distinct count; kept for safety.
            (0..n).find(|i| !chosen.contains(i)).unwrap()
        };
        chosen.push(next);
        let c = points.row(next).to_vec();
        d2.par_iter_mut()
            .zip(points.as_flat().par_chunks_exact(points.dim()))
            .for_each(|(d, p)| *d = d.min(dist2(p, &c)));
    }
    points.select(&chosen)
}

pub fn kmeans(points: &Rows, n_clusters: usize, max_iters: usize, seed: u64) -> Result<KMeansResult> {
    if points.is_empty() {
        return invalid("kmeans needs at least one point");
    }
    if n_clusters == 0 {
        return invalid("n_clusters must be >= 1");
    }
    let distinct = count_distinct(points);
    if n_clusters > distinct {
        return invalid(format!(
            "n_clusters = {n_clusters} exceeds the {distinct} distinct points"
        ));
    }
    let dim = points.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_plus_plus(points, n_clusters, &mut rng);
    let mut assignment: Vec<usize> = Vec::new();
    let mut objective = Vec::new();
    let mut iterations = 0;

    for _ in 0..max_iters.max(1) {
        iterations += 1;
        let assigned: Vec<(usize, f64)> = points
            .as_flat()
            .par_chunks_exact(dim)
            .map(|p| nearest(p, &centroids))
            .collect();
        objective.push(assigned.iter().map(|a| a.1).sum());
        let next: Vec<usize> = assigned.iter().map(|a| a.0).collect();
        if next == assignment {
            break;
        }
        assignment = next;

        let mut sums = Rows::zeros(n_clusters, dim);
        let mut counts = vec![0usize; n_clusters];
        for (p, &c) in points.iter().zip(&assignment) {
            counts[c] += 1;
            for (s, v) in sums.row_mut(c).iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..n_clusters {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (dst, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s * inv;
                }
            }
        }
        // Empty clusters move to the point farthest from its centroid.
        for c in 0..n_clusters {
            if counts[c] == 0 {
                let far = farthest_point(points, &centroids, &assignment);
                let p = points.row(far).to_vec();
                centroids.row_mut(c).copy_from_slice(&p);
                assignment[far] = c;
            }
        }
        reseed_duplicates(points, &mut centroids, &assignment);
    }
    Ok(KMeansResult {
        centroids,
        assignment,
        objective,
        iterations,
    })
}

fn farthest_point(points: &Rows, centroids: &Rows, assignment: &[usize]) -> usize {
    let mut best = (0, -1.0);
    for (i, p) in points.iter().enumerate() {
        let d = dist2(p, centroids.row(assignment[i]));
        if d > best.1 {
            best = (i, d);
        }
    }
    best.0
}

fn reseed_duplicates(points: &Rows, centroids: &mut Rows, assignment: &[usize]) {
    let mut seen = HashSet::new();
    for c in 0..centroids.len() {
        let key: Vec<u64> = centroids.row(c).iter().map(|v| (v + 0.0).to_bits()).collect();
        if !seen.insert(key) {
            let far = farthest_point(points, centroids, assignment);
            let p = points.row(far).to_vec();
            centroids.row_mut(c).copy_from_slice(&p);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point() {
        let p = Rows::from_rows(&[[0.3, 0.7]]).unwrap();
        let r = kmeans(&p, 1, 10, 0).unwrap();
        assert_eq!(r.centroids, p);
    }

    #[test]
    fn as_many_clusters_as_points() {
        let p = Rows::from_rows(&[[0.0, 0.0], [1.0, 1.0], [0.0, 1.0]]).unwrap();
        let r = kmeans(&p, 3, 10, 5).unwrap();
        let mut got = r.centroids.to_vecs();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut want = p.to_vecs();
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(got, want);
    }

    #[test]
    fn too_many_clusters() {
        let p = Rows::from_rows(&[[0.0], [0.0], [1.0]]).unwrap();
        assert!(kmeans(&p, 3, 10, 0).is_err());
    }

    #[test]
    fn two_gaussian_blobs() {
        use rand_distr_free::normal;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut pts = Vec::new();
        for i in 0..400 {
            let c = if i % 2 == 0 { [0.2, 0.2] } else { [0.8, 0.7] };
            pts.push([c[0] + 0.03 * normal(&mut rng), c[1] + 0.03 * normal(&mut rng)]);
        }
        let rows = Rows::from_rows(&pts).unwrap();
        // Sample means of each blob are the oracle.
        let mean = |parity: usize| {
            let sel: Vec<_> = pts.iter().enumerate().filter(|(i, _)| i % 2 == parity).map(|p| p.1).collect();
            let n = sel.len() as f64;
            [sel.iter().map(|p| p[0]).sum::<f64>() / n, sel.iter().map(|p| p[1]).sum::<f64>() / n]
        };
        let r = kmeans(&rows, 2, 100, 11).unwrap();
        for target in [mean(0), mean(1)] {
            let best = r.centroids.iter().map(|c| dist2(c, &target).sqrt()).fold(f64::INFINITY, f64::min);
            assert!(best < 0.1, "{best}");
        }
    }

    #[test]
    fn objective_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pts: Vec<[f64; 3]> = (0..600).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let rows = Rows::from_rows(&pts).unwrap();
        for seed in 0..4 {
            let r = kmeans(&rows, 25, 50, seed).unwrap();
            for w in r.objective.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "{:?}", r.objective);
            }
            assert_eq!(count_distinct(&r.centroids), 25);
        }
    }

    /// Box-Muller so the test does not need a distributions crate.
    mod rand_distr_free {
        use rand::Rng;
        pub fn normal<R: Rng>(rng: &mut R) -> f64 {
            let u1: f64 = rng.gen::<f64>().max(1e-300);
            let u2: f64 = rng.gen();
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        }
    }
}
