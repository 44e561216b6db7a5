use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{PhaseError, Point};

pub const MAX_ITERATIONS: usize = 300;
pub const CONVERGENCE_TOLERANCE: f64 = 1e-6;

/// Result of a k-means run.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centers: Vec<Point>,
    /// Within-cluster sum of squares after each assignment step.
    pub wcss_history: Vec<f64>,
    pub iterations: usize,
}

#[inline]
pub(crate) fn sq_dist(a: &Point, b: &Point) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest center; ties go to the lowest index.
#[inline]
pub(crate) fn nearest(centers: &[Point], p: &Point) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = sq_dist(c, p);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn distinct_count(points: &[Point]) -> usize {
    points
        .iter()
        .map(|p| p.map(f64::to_bits))
        .collect::<BTreeSet<_>>()
        .len()
}

/// Lloyd's algorithm with k-means++ seeding. Deterministic for a given
/// `(points, k, seed)`.
pub fn kmeans_fit(points: &[Point], k: usize, seed: u64) -> Result<KMeans, PhaseError> {
    if k == 0 {
        return Err(PhaseError::ZeroK);
    }
    let distinct = distinct_count(points);
    if distinct < k {
        return Err(PhaseError::TooFewPoints { distinct, k });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = init_plus_plus(points, k, &mut rng);
    let mut assignment = vec![0usize; points.len()];
    let mut wcss_history = Vec::new();
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        iterations += 1;

        let mut wcss = 0.0;
        let mut dist = vec![0.0; points.len()];
        for (i, p) in points.iter().enumerate() {
            let (j, d) = nearest(&centers, p);
            assignment[i] = j;
            dist[i] = d;
            wcss += d;
        }
        repair_empty_clusters(&mut assignment, &mut dist, &mut wcss, k);
        wcss_history.push(wcss);

        let mut sums = vec![[0.0; super::DIM]; k];
        let mut counts = vec![0usize; k];
        for (p, &j) in points.iter().zip(&assignment) {
            counts[j] += 1;
            for (s, v) in sums[j].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut movement: f64 = 0.0;
        for j in 0..k {
            let new = sums[j].map(|s| s / counts[j] as f64);
            movement = movement.max(sq_dist(&new, &centers[j]).sqrt());
            centers[j] = new;
        }
        if movement < CONVERGENCE_TOLERANCE {
            break;
        }
    }

    Ok(KMeans {
        centers,
        wcss_history,
        iterations,
    })
}

/// Each empty cluster takes the point farthest from its current center,
/// drawn from clusters that can spare one.
fn repair_empty_clusters(assignment: &mut [usize], dist: &mut [f64], wcss: &mut f64, k: usize) {
    let mut counts = vec![0usize; k];
    for &j in assignment.iter() {
        counts[j] += 1;
    }
    for empty in 0..k {
        if counts[empty] > 0 {
            continue;
        }
        let mut far: Option<usize> = None;
        for i in 0..assignment.len() {
            if counts[assignment[i]] < 2 {
                continue;
            }
            if far.is_none_or(|f| dist[i] > dist[f]) {
                far = Some(i);
            }
        }
        let Some(i) = far else { break };
        counts[assignment[i]] -= 1;
        counts[empty] += 1;
        assignment[i] = empty;
        *wcss -= dist[i];
        dist[i] = 0.0;
    }
}

fn init_plus_plus(points: &[Point], k: usize, rng: &mut ChaCha8Rng) -> Vec<Point> {
    let mut centers = Vec::with_capacity(k);
    centers.push(points[rng.random_range(0..points.len())]);
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();

    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let mut target = rng.random::<f64>() * total;
        let mut pick = None;
        for (i, &w) in d2.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            if target < w {
                pick = Some(i);
                break;
            }
            target -= w;
        }
        // rounding can leave target just past the last positive weight
        let pick = pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap());
        let c = points[pick];
        for (w, p) in d2.iter_mut().zip(points) {
            *w = w.min(sq_dist(p, &c));
        }
        centers.push(c);
    }
    centers
}

/// Final WCSS for each candidate `k`, for picking a cluster count by eye.
pub fn elbow_scan(
    points: &[Point],
    ks: impl IntoIterator<Item = usize>,
    seed: u64,
) -> Result<Vec<(usize, f64)>, PhaseError> {
    ks.into_iter()
        .map(|k| {
            let fit = kmeans_fit(points, k, seed)?;
            let wcss = points.iter().map(|p| nearest(&fit.centers, p).1).sum();
            Ok((k, wcss))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn random_points(n: usize, seed: u64) -> Vec<Point> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| std::array::from_fn(|_| rng.random::<f64>()))
            .collect()
    }

    #[test]
    fn k1_center_is_the_mean() {
        let pts = random_points(200, 1);
        let fit = kmeans_fit(&pts, 1, 9).unwrap();
        for d in 0..super::super::DIM {
            let mean = pts.iter().map(|p| p[d]).sum::<f64>() / pts.len() as f64;
            assert!((fit.centers[0][d] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn two_blobs_are_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let a = [0.2; 7];
        let b = [0.8; 7];
        let mut pts = Vec::new();
        for i in 0..400 {
            let c = if i % 2 == 0 { a } else { b };
            pts.push(c.map(|v: f64| (v + noise.sample(&mut rng)).clamp(0.0, 1.0)));
        }
        let blob_mean = |parity: usize| -> Point {
            let sel: Vec<&Point> = pts.iter().skip(parity).step_by(2).collect();
            std::array::from_fn(|d| sel.iter().map(|p| p[d]).sum::<f64>() / sel.len() as f64)
        };
        let (ma, mb) = (blob_mean(0), blob_mean(1));
        let fit = kmeans_fit(&pts, 2, 42).unwrap();
        for m in [ma, mb] {
            let best = fit
                .centers
                .iter()
                .map(|c| {
                    c.iter()
                        .zip(&m)
                        .map(|(x, y)| (x - y).abs())
                        .fold(0.0, f64::max)
                })
                .fold(f64::INFINITY, f64::min);
            assert!(best < 0.01, "center off by {best}");
        }
    }

    #[test]
    fn wcss_never_increases() {
        for seed in 0..10 {
            let pts = random_points(500, seed);
            let fit = kmeans_fit(&pts, 8, seed).unwrap();
            for w in fit.wcss_history.windows(2) {
                assert!(w[1] <= w[0] + 1e-12 * w[0].abs(), "{} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let pts = random_points(300, 5);
        let a = kmeans_fit(&pts, 6, 11).unwrap();
        let b = kmeans_fit(&pts, 6, 11).unwrap();
        assert_eq!(a, b);
        for (ca, cb) in a.centers.iter().zip(&b.centers) {
            assert_eq!(ca.map(f64::to_bits), cb.map(f64::to_bits));
        }
    }

    #[test]
    fn too_few_distinct_points() {
        let pts = vec![[0.5; 7]; 10];
        assert!(matches!(
            kmeans_fit(&pts, 2, 0),
            Err(PhaseError::TooFewPoints { distinct: 1, k: 2 })
        ));
        assert!(kmeans_fit(&pts, 1, 0).is_ok());
        assert!(matches!(kmeans_fit(&pts, 0, 0), Err(PhaseError::ZeroK)));
    }

    #[test]
    fn exactly_k_distinct_points_become_the_centers() {
        let mut pts = vec![[0.0; 7]; 5];
        pts.extend(vec![[1.0; 7]; 3]);
        pts.push([0.5; 7]);
        let fit = kmeans_fit(&pts, 3, 7).unwrap();
        let mut got: Vec<u64> = fit.centers.iter().map(|c| c[0].to_bits()).collect();
        got.sort();
        let mut want: Vec<u64> = [0.0f64, 0.5, 1.0].iter().map(|v| v.to_bits()).collect();
        want.sort();
        assert_eq!(got, want);
    }

    #[test]
    fn centers_are_pairwise_distinct() {
        let pts = random_points(100, 8);
        let fit = kmeans_fit(&pts, 16, 2).unwrap();
        for i in 0..fit.centers.len() {
            for j in i + 1..fit.centers.len() {
                assert!(sq_dist(&fit.centers[i], &fit.centers[j]) > 0.0);
            }
        }
    }

    #[test]
    fn elbow_is_non_increasing_on_blobs() {
        let pts = random_points(300, 4);
        let scan = elbow_scan(&pts, [1, 4, 16], 1).unwrap();
        assert_eq!(scan.len(), 3);
        assert!(scan[0].1 > scan[1].1 && scan[1].1 > scan[2].1);
    }
}
