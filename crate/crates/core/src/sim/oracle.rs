//! Exhaustive solvers used as test oracles for the diversity objective.

use crate::error::{Error, Result};
use crate::sampler::covering_radius;
use crate::similarity::SimilarityMatrix;

pub const MAX_BRUTE_FORCE_POINTS: usize = 15;

/// Calls `f` on every size-`k` subset of `0..n` in lexicographic order.
fn for_each_subset(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        // advance the rightmost index that still has room
        let Some(pos) = (0..k).rev().find(|&i| idx[i] < n - k + i) else {
            return;
        };
        idx[pos] += 1;
        for i in pos + 1..k {
            idx[i] = idx[i - 1] + 1;
        }
    }
}

fn check_size(sim: &SimilarityMatrix, k: usize) -> Result<()> {
    if sim.n > MAX_BRUTE_FORCE_POINTS {
        return Err(Error::invalid(format!(
            "brute force limited to {MAX_BRUTE_FORCE_POINTS} points, got {}",
            sim.n
        )));
    }
    if k == 0 || k > sim.n {
        return Err(Error::invalid(format!("k = {k} must lie in [1, {}]", sim.n)));
    }
    Ok(())
}

/// The size-`k` subset minimising its largest pairwise similarity. A single
/// point has no pairs and scores 0. Ties go to the lexicographically first
/// subset.
pub fn brute_force_min_max_subset(sim: &SimilarityMatrix, k: usize) -> Result<(Vec<usize>, f64)> {
    check_size(sim, k)?;
    let mut best: Option<(Vec<usize>, f64)> = None;
    for_each_subset(sim.n, k, |s| {
        let mut worst = 0.0_f64;
        for (a, &i) in s.iter().enumerate() {
            for &j in &s[a + 1..] {
                worst = worst.max(sim.get(i, j));
            }
        }
        if best.as_ref().map_or(true, |(_, b)| worst < *b) {
            best = Some((s.to_vec(), worst));
        }
    });
    Ok(best.expect("at least one subset"))
}

/// The size-`k` center set with the smallest covering radius under
/// `dist = 2 - sim`.
pub fn brute_force_k_center(sim: &SimilarityMatrix, k: usize) -> Result<(Vec<usize>, f64)> {
    check_size(sim, k)?;
    let mut best: Option<(Vec<usize>, f64)> = None;
    for_each_subset(sim.n, k, |s| {
        let r = covering_radius(sim, s);
        if best.as_ref().map_or(true, |(_, b)| r < *b) {
            best = Some((s.to_vec(), r));
        }
    });
    Ok(best.expect("at least one subset"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(n: usize, seed: u64) -> SimilarityMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = vec![vec![2.0; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                let v = rng.random_range(0.0..2.0);
                rows[i][j] = v;
                rows[j][i] = v;
            }
        }
        SimilarityMatrix::from_rows(rows, None).unwrap()
    }

    // Independent enumeration: recursive include/exclude.
    fn recursive_best(m: &SimilarityMatrix, k: usize) -> f64 {
        fn go(m: &SimilarityMatrix, k: usize, next: usize, chosen: &mut Vec<usize>, best: &mut f64) {
            if chosen.len() == k {
                let mut worst = 0.0_f64;
                for a in 0..k {
                    for b in 0..a {
                        worst = worst.max(m.get(chosen[a], chosen[b]));
                    }
                }
                *best = best.min(worst);
                return;
            }
            if next == m.n {
                return;
            }
            chosen.push(next);
            go(m, k, next + 1, chosen, best);
            chosen.pop();
            go(m, k, next + 1, chosen, best);
        }
        let mut best = f64::INFINITY;
        go(m, k, 0, &mut Vec::new(), &mut best);
        best
    }

    #[test]
    fn subset_enumeration_counts() {
        let mut count = 0;
        for_each_subset(6, 3, |_| count += 1);
        assert_eq!(count, 20);
        let mut all = Vec::new();
        for_each_subset(3, 3, |s| all.push(s.to_vec()));
        assert_eq!(all, vec![vec![0, 1, 2]]);
    }

    #[test]
    fn whole_set_and_singletons() {
        let m = random_matrix(6, 3);
        let (s, obj) = brute_force_min_max_subset(&m, 6).unwrap();
        assert_eq!(s, (0..6).collect::<Vec<_>>());
        let max_off = (0..6)
            .flat_map(|i| (0..6).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m.get(i, j))
            .fold(0.0, f64::max);
        assert_eq!(obj, max_off);
        assert_eq!(brute_force_min_max_subset(&m, 1).unwrap(), (vec![0], 0.0));
    }

    #[test]
    fn agrees_with_recursive_checker() {
        for seed in 0..10 {
            let m = random_matrix(8, seed);
            let (s, obj) = brute_force_min_max_subset(&m, 3).unwrap();
            assert_eq!(s.len(), 3);
            assert_eq!(obj, recursive_best(&m, 3));
        }
    }

    #[test]
    fn size_guard() {
        let m = random_matrix(16, 0);
        assert!(brute_force_min_max_subset(&m, 2).is_err());
        let m = random_matrix(4, 0);
        assert!(brute_force_min_max_subset(&m, 5).is_err());
        assert!(brute_force_k_center(&m, 0).is_err());
    }
}
