use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::similarity::SimilarityMatrix;

/// Result of medoid k-means over a similarity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MedoidClustering {
    pub centers: Vec<usize>,
    /// Cluster position (index into `centers`) for every point.
    pub assignment: Vec<usize>,
    /// Number of medoid-update passes performed.
    pub iterations: usize,
    pub converged: bool,
    /// `Σ sim(point, its center)` after the initial and every later assignment.
    pub objective_trace: Vec<f64>,
}

/// `Σ_i sim(i, centers[assignment[i]])`.
pub fn assignment_objective(sim: &SimilarityMatrix, centers: &[usize], assignment: &[usize]) -> f64 {
    assignment
        .iter()
        .enumerate()
        .map(|(i, &k)| sim.get(i, centers[k]))
        .sum()
}

fn assign(sim: &SimilarityMatrix, centers: &[usize]) -> Vec<usize> {
    (0..sim.n)
        .into_par_iter()
        .map(|i| {
            if let Some(own) = centers.iter().position(|&c| c == i) {
                return own;
            }
            let mut best = 0;
            for k in 1..centers.len() {
                if sim.get(i, centers[k]) > sim.get(i, centers[best]) {
                    best = k;
                }
            }
            best
        })
        .collect()
}

fn medoids(sim: &SimilarityMatrix, centers: &[usize], assignment: &[usize]) -> Vec<usize> {
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); centers.len()];
    for (i, &k) in assignment.iter().enumerate() {
        members[k].push(i);
    }
    members
        .par_iter()
        .zip(centers.par_iter())
        .map(|(cluster, &current)| {
            if cluster.is_empty() {
                return current;
            }
            // sorted accumulation so equal multisets of similarities tie exactly
            let summed = |c: usize| {
                let mut terms: Vec<f64> = cluster.iter().map(|&m| sim.get(c, m)).collect();
                terms.sort_by(f64::total_cmp);
                terms.iter().sum::<f64>()
            };
            let mut best = current;
            let mut best_sum = if cluster.contains(&current) {
                summed(current)
            } else {
                f64::NEG_INFINITY
            };
            // members are in ascending order, so strict `>` keeps the lowest index
            for &c in cluster {
                let s = summed(c);
                if s > best_sum {
                    best = c;
                    best_sum = s;
                }
            }
            best
        })
        .collect()
}

/// Medoid k-means on a precomputed similarity matrix.
///
/// Each point joins the center it is most similar to (lowest position on
/// ties); a center always belongs to its own cluster. Each cluster's new
/// center is the member with the largest summed similarity to the cluster,
/// ties resolved in favour of the sitting center, then the lowest index.
/// Stops at a fixpoint or after `max_iter` updates.
///
/// When every diagonal entry is the maximum of its row, the objective in
/// [`MedoidClustering::objective_trace`] never decreases and every center
/// change strictly increases it, so the loop cannot cycle.
pub fn kmeans_pp_similarity(
    sim: &SimilarityMatrix,
    init: &[usize],
    max_iter: usize,
) -> Result<MedoidClustering> {
    let n = sim.n;
    if init.is_empty() {
        return Err(Error::invalid("at least one initial center is required"));
    }
    if max_iter == 0 {
        return Err(Error::invalid("max_iter must be at least 1"));
    }
    let mut seen = vec![false; n];
    for &c in init {
        if c >= n {
            return Err(Error::invalid(format!("initial center {c} out of range for {n} points")));
        }
        if std::mem::replace(&mut seen[c], true) {
            return Err(Error::invalid(format!("duplicate initial center {c}")));
        }
    }

    let mut centers = init.to_vec();
    let mut assignment = assign(sim, &centers);
    let mut trace = vec![assignment_objective(sim, &centers, &assignment)];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        let next = medoids(sim, &centers, &assignment);
        if next == centers {
            converged = true;
            break;
        }
        centers = next;
        assignment = assign(sim, &centers);
        trace.push(assignment_objective(sim, &centers, &assignment));
    }
    Ok(MedoidClustering {
        centers,
        assignment,
        iterations,
        converged,
        objective_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs() -> SimilarityMatrix {
        // points 0..4 and 4..8; within-blob 1.8, across 0.2, diagonal 2
        let rows = (0..8)
            .map(|i| {
                (0..8)
                    .map(|j| {
                        if i == j {
                            2.0
                        } else if (i < 4) == (j < 4) {
                            1.8
                        } else {
                            0.2
                        }
                    })
                    .collect()
            })
            .collect();
        SimilarityMatrix::from_rows(rows, None).unwrap()
    }

    #[test]
    fn single_cluster_is_the_medoid() {
        let rows = vec![
            vec![2.0, 1.0, 0.1],
            vec![1.0, 2.0, 1.5],
            vec![0.1, 1.5, 2.0],
        ];
        let m = SimilarityMatrix::from_rows(rows, None).unwrap();
        let out = kmeans_pp_similarity(&m, &[0], 100).unwrap();
        // row sums 3.1, 4.5, 3.6
        assert_eq!(out.centers, vec![1]);
        assert!(out.converged);
    }

    #[test]
    fn fixpoint_returns_after_one_pass() {
        let m = blobs();
        let out = kmeans_pp_similarity(&m, &[0, 4], 100).unwrap();
        assert_eq!(out.centers, vec![0, 4]);
        assert_eq!(out.iterations, 1);
        assert!(out.converged);
    }

    #[test]
    fn two_blobs_get_one_medoid_each() {
        let m = blobs();
        let out = kmeans_pp_similarity(&m, &[1, 2], 100).unwrap();
        let blob = |c: usize| c < 4;
        assert_ne!(blob(out.centers[0]), blob(out.centers[1]));
        // brute force: the best pair of centers under the assignment objective
        let mut best = f64::NEG_INFINITY;
        for a in 0..8 {
            for b in a + 1..8 {
                let total: f64 = (0..8).map(|i| m.get(i, a).max(m.get(i, b))).sum();
                best = best.max(total);
            }
        }
        let got: f64 = (0..8)
            .map(|i| m.get(i, out.centers[0]).max(m.get(i, out.centers[1])))
            .sum();
        assert!((got - best).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_init() {
        let m = blobs();
        assert!(kmeans_pp_similarity(&m, &[1, 1], 10).is_err());
        assert!(kmeans_pp_similarity(&m, &[9], 10).is_err());
        assert!(kmeans_pp_similarity(&m, &[], 10).is_err());
        assert!(kmeans_pp_similarity(&m, &[0], 0).is_err());
    }

    #[test]
    fn identical_points_keep_distinct_centers() {
        let rows = vec![vec![2.0; 4]; 4];
        let m = SimilarityMatrix::from_rows(rows, None).unwrap();
        let out = kmeans_pp_similarity(&m, &[3, 1], 100).unwrap();
        assert_ne!(out.centers[0], out.centers[1]);
        assert!(out.converged);
    }
}
