use crate::error::{Error, Result};
use crate::similarity::SimilarityMatrix;

/// Farthest-first traversal under `dist = 2 - sim`.
///
/// Starts from `seed` and repeatedly adds the point whose distance to its
/// nearest chosen center is largest (lowest index on ties). Returns `k`
/// distinct indices in selection order.
pub fn k_center_greedy(sim: &SimilarityMatrix, k: usize, seed: usize) -> Result<Vec<usize>> {
    let n = sim.n;
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k = {k} must lie in [1, {n}]")));
    }
    if seed >= n {
        return Err(Error::invalid(format!("seed index {seed} out of range for {n} points")));
    }
    let mut chosen = vec![false; n];
    let mut nearest: Vec<f64> = (0..n).map(|i| sim.distance(i, seed)).collect();
    let mut centers = Vec::with_capacity(k);
    chosen[seed] = true;
    centers.push(seed);
    while centers.len() < k {
        let mut best: Option<(usize, f64)> = None;
        for i in (0..n).filter(|&i| !chosen[i]) {
            if best.map_or(true, |(_, d)| nearest[i] > d) {
                best = Some((i, nearest[i]));
            }
        }
        let (next, _) = best.expect("k <= n leaves an unchosen point");
        chosen[next] = true;
        centers.push(next);
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sim.distance(i, next));
        }
    }
    Ok(centers)
}

/// Largest distance from any point to its nearest center.
pub fn covering_radius(sim: &SimilarityMatrix, centers: &[usize]) -> f64 {
    (0..sim.n)
        .map(|i| {
            centers
                .iter()
                .map(|&c| sim.distance(i, c))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Six points on a line at 0, 0.1, 0.2, 1.0, 1.1, 1.9; sim = 2 - |x - y|.
    fn line() -> SimilarityMatrix {
        let xs = [0.0, 0.1, 0.2, 1.0, 1.1, 1.9];
        let rows = xs
            .iter()
            .map(|a| xs.iter().map(|b| 2.0 - f64::abs(a - b)).collect())
            .collect();
        SimilarityMatrix::from_rows(rows, None).unwrap()
    }

    #[test]
    fn trivial_sizes() {
        let m = line();
        assert_eq!(k_center_greedy(&m, 1, 3).unwrap(), vec![3]);
        let mut all = k_center_greedy(&m, 6, 0).unwrap();
        all.sort();
        assert_eq!(all, (0..6).collect::<Vec<_>>());
        assert!(k_center_greedy(&m, 7, 0).is_err());
        assert!(k_center_greedy(&m, 0, 0).is_err());
        assert!(k_center_greedy(&m, 2, 6).is_err());
    }

    #[test]
    fn hand_trace_from_origin() {
        // from 0: farthest is 1.9 (index 5); then min distances are
        // 0.1, 0.2, 0.8, 0.8 for indices 1..=4, so index 3 wins the tie
        assert_eq!(k_center_greedy(&line(), 3, 0).unwrap(), vec![0, 5, 3]);
    }

    #[test]
    fn within_twice_the_optimal_radius() {
        let m = line();
        let greedy = covering_radius(&m, &k_center_greedy(&m, 3, 0).unwrap());
        // exhaustive over all C(6, 3) center sets
        let mut best = f64::INFINITY;
        for a in 0..6 {
            for b in a + 1..6 {
                for c in b + 1..6 {
                    best = best.min(covering_radius(&m, &[a, b, c]));
                }
            }
        }
        assert!((best - 0.1).abs() < 1e-12);
        assert!(greedy <= 2.0 * best + 1e-12);
    }
}
