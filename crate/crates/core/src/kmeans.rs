//! Lloyd's k-means with k-means++ seeding and seeded restarts.
//!
//! The objective is the within-cluster sum of squared Euclidean distances
//! `J = sum_i sum_{x in C_i} ||x - u_i||^2`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{squared_distance, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub seed: u64,
    pub max_iter: usize,
    /// Stop once no centroid moves farther than this (Euclidean).
    pub tol: f64,
    /// Independent k-means++ initializations; the lowest objective wins.
    pub restarts: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            max_iter: 300,
            tol: 1e-9,
            restarts: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ClusterModel<T> {
    pub k: usize,
    pub centroids: Vec<Vec<T>>,
    /// Cluster index of every input point.
    pub assignments: Vec<usize>,
    pub objective: T,
    /// Objective after every assignment step of the winning restart.
    pub trace: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
}

impl<T: Scalar> ClusterModel<T> {
    /// Member indices per cluster.
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &c) in self.assignments.iter().enumerate() {
            out[c].push(i);
        }
        out
    }
}

/// Within-cluster sum of squares for a given assignment.
pub fn objective<T: Scalar>(points: &[Vec<T>], centroids: &[Vec<T>], assignments: &[usize]) -> T {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &c)| squared_distance(p, &centroids[c]))
        .sum()
}

fn validate<T: Scalar>(points: &[Vec<T>], k: usize) -> Result<usize> {
    if k == 0 || k > points.len() {
        return Err(Error::InvalidK(format!("k = {k} with {} points", points.len())));
    }
    let d = points[0].len();
    for p in points {
        if p.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: p.len(),
            });
        }
        if p.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvariantViolation("non-finite point".into()));
        }
    }
    Ok(d)
}

fn nearest<T: Scalar>(p: &[T], centroids: &[Vec<T>]) -> (usize, T) {
    let mut best = (0, squared_distance(p, &centroids[0]));
    for (c, centroid) in centroids.iter().enumerate().skip(1) {
        let d = squared_distance(p, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn assign<T: Scalar>(points: &[Vec<T>], centroids: &[Vec<T>]) -> Vec<(usize, T)> {
    if points.len() * centroids.len() * points[0].len() > 1 << 16 {
        points.par_iter().map(|p| nearest(p, centroids)).collect()
    } else {
        points.iter().map(|p| nearest(p, centroids)).collect()
    }
}

fn plus_plus_init<T: Scalar>(points: &[Vec<T>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<T>> {
    let n = points.len();
    let mut chosen = vec![rng.gen_range(0..n)];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &points[chosen[0]]).as_f64())
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && r < w {
                    pick = i;
                    break;
                }
                r -= w;
            }
            if d2[pick] == 0.0 {
                // rounding fell off the end; take the last positive-weight point
                pick = d2.iter().rposition(|&w| w > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            // all remaining points coincide with chosen centers
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.gen_range(0..free.len())]
        };
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            let d = squared_distance(p, &points[next]).as_f64();
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    chosen.into_iter().map(|i| points[i].clone()).collect()
}

fn means<T: Scalar>(points: &[Vec<T>], assignments: &[usize], k: usize, d: usize) -> Vec<Option<Vec<T>>> {
    let mut sums = vec![vec![T::zero(); d]; k];
    let mut counts = vec![0usize; k];
    for (p, &c) in points.iter().zip(assignments) {
        counts[c] += 1;
        for (s, &x) in sums[c].iter_mut().zip(p) {
            *s += x;
        }
    }
    sums.into_iter()
        .zip(counts)
        .map(|(s, n)| {
            (n > 0).then(|| {
                let n = T::of(n as f64);
                s.into_iter().map(|x| x / n).collect()
            })
        })
        .collect()
}

fn single_run<T: Scalar>(
    points: &[Vec<T>],
    k: usize,
    d: usize,
    cfg: &KMeansConfig,
    rng: &mut ChaCha8Rng,
) -> ClusterModel<T> {
    let mut centroids = plus_plus_init(points, k, rng);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut assigned = assign(points, &centroids);
    for _ in 0..cfg.max_iter {
        iterations += 1;
        trace.push(assigned.iter().map(|&(_, dist)| dist).sum());
        let assignments: Vec<usize> = assigned.iter().map(|&(c, _)| c).collect();
        let updated = means(points, &assignments, k, d);

        let mut next: Vec<Vec<T>> = Vec::with_capacity(k);
        let mut reseeded = Vec::new();
        for m in updated {
            match m {
                Some(m) => next.push(m),
                None => {
                    // reseed to the point farthest from its current centroid
                    let far = assigned
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| !reseeded.contains(i))
                        .fold(None::<(usize, T)>, |best, (i, &(_, dist))| match best {
                            Some((_, bd)) if bd >= dist => best,
                            _ => Some((i, dist)),
                        })
                        .map(|(i, _)| i)
                        .unwrap_or(0);
                    reseeded.push(far);
                    next.push(points[far].clone());
                }
            }
        }
        let shift = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| squared_distance(a, b).as_f64().sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        assigned = assign(points, &centroids);
        if shift < cfg.tol && reseeded.is_empty() {
            converged = true;
            break;
        }
    }

    // settle: centroids become exact means of the final assignment
    let assignments: Vec<usize> = assigned.iter().map(|&(c, _)| c).collect();
    for (c, m) in means(points, &assignments, k, d).into_iter().enumerate() {
        if let Some(m) = m {
            centroids[c] = m;
        }
    }
    let j = objective(points, &centroids, &assignments);
    trace.push(j);
    ClusterModel {
        k,
        centroids,
        assignments,
        objective: j,
        trace,
        iterations,
        converged,
    }
}

/// Cluster `points` into `k` groups.
pub fn kmeans<T: Scalar>(points: &[Vec<T>], k: usize, cfg: &KMeansConfig) -> Result<ClusterModel<T>> {
    if points.is_empty() {
        return Err(Error::InvalidK(format!("k = {k} with 0 points")));
    }
    let d = validate(points, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<ClusterModel<T>> = None;
    for _ in 0..cfg.restarts.max(1) {
        let run = single_run(points, k, d, cfg, &mut rng);
        if best.as_ref().is_none_or(|b| run.objective < b.objective) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Index of the member closest to `centroid`; ties go to the lexicographically smallest label.
pub fn representative_with_centroid<T: Scalar>(
    labels: &[String],
    vectors: &[Vec<T>],
    centroid: &[T],
) -> Result<usize> {
    if labels.is_empty() {
        return Err(Error::EmptyCluster);
    }
    let mut best = 0;
    let mut best_d = squared_distance(&vectors[0], centroid);
    for i in 1..labels.len() {
        let d = squared_distance(&vectors[i], centroid);
        if d < best_d || d == best_d && labels[i] < labels[best] {
            best = i;
            best_d = d;
        }
    }
    Ok(best)
}

/// Label of the member closest to the mean of the members.
pub fn representative<T: Scalar>(labels: &[String], vectors: &[Vec<T>]) -> Result<String> {
    if labels.is_empty() {
        return Err(Error::EmptyCluster);
    }
    let d = vectors[0].len();
    let n = T::of(vectors.len() as f64);
    let mut centroid = vec![T::zero(); d];
    for v in vectors {
        centroid.iter_mut().zip(v).for_each(|(c, &x)| *c += x);
    }
    centroid.iter_mut().for_each(|c| *c /= n);
    let i = representative_with_centroid(labels, vectors, &centroid)?;
    Ok(labels[i].clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(xs: &[f64]) -> Vec<Vec<f64>> {
        xs.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn k_equals_n_has_zero_objective() {
        let p = pts(&[3.0, -1.0, 7.5, 2.0]);
        let m = kmeans(&p, 4, &KMeansConfig::default()).unwrap();
        assert_eq!(m.objective, 0.0);
        let mut cs: Vec<f64> = m.centroids.iter().map(|c| c[0]).collect();
        cs.sort_by(f64::total_cmp);
        assert_eq!(cs, vec![-1.0, 2.0, 3.0, 7.5]);
    }

    #[test]
    fn two_pairs_on_a_line() {
        let p = pts(&[0.0, 1.0, 9.0, 10.0]);
        let m = kmeans(&p, 2, &KMeansConfig::default()).unwrap();
        assert_eq!(m.objective, 1.0);
        assert_eq!(m.assignments[0], m.assignments[1]);
        assert_eq!(m.assignments[2], m.assignments[3]);
        assert_ne!(m.assignments[0], m.assignments[2]);
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let p = vec![vec![1.0, 2.0], vec![3.0, 6.0], vec![5.0, 1.0]];
        let m = kmeans(&p, 1, &KMeansConfig::default()).unwrap();
        assert_eq!(m.centroids[0], vec![3.0, 3.0]);
    }

    #[test]
    fn invalid_k() {
        let p = pts(&[1.0, 2.0]);
        assert!(matches!(kmeans(&p, 0, &KMeansConfig::default()), Err(Error::InvalidK(_))));
        assert!(matches!(kmeans(&p, 3, &KMeansConfig::default()), Err(Error::InvalidK(_))));
    }

    #[test]
    fn duplicate_points_do_not_break_seeding() {
        let p = pts(&[1.0, 1.0, 1.0, 5.0]);
        let m = kmeans(&p, 3, &KMeansConfig::default()).unwrap();
        assert_eq!(m.objective, 0.0);
    }

    #[test]
    fn works_in_f32() {
        let p: Vec<Vec<f32>> = vec![vec![0.0], vec![1.0], vec![9.0], vec![10.0]];
        let m = kmeans(&p, 2, &KMeansConfig::default()).unwrap();
        assert_eq!(m.objective, 1.0_f32);
    }

    #[test]
    fn representative_rules() {
        let labels = vec!["b".to_string(), "a".to_string()];
        let v = vec![vec![1.0], vec![-1.0]];
        assert_eq!(representative(&labels, &v).unwrap(), "a");
        assert_eq!(representative(&labels[..1], &v[..1]).unwrap(), "b");
        assert!(matches!(representative::<f64>(&[], &[]), Err(Error::EmptyCluster)));
    }
}
