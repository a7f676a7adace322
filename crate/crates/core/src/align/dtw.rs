//! Subsequence DTW kernel.

use ndarray::Array2;

use super::WarpingPath;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Backtracking choices, one byte per cell.
const START: u8 = 0;
const DIAG: u8 = 1;
/// Came from `(i, j - 1)`: a mix-only `(0, 1)` step.
const MIX: u8 = 2;
/// Came from `(i - 1, j)`: a track-only `(1, 0)` step.
const TRACK: u8 = 3;

/// Minimal-cost subsequence alignment of the rows (track) of `costs` into its
/// columns (mix).
///
/// Steps `(1,1)`, `(1,0)`, `(0,1)` with unit weights; the path starts anywhere
/// in row 0 and ends anywhere in the last row. Ties prefer the diagonal, then
/// the mix-only step. Among equal-cost end columns the first one at or after
/// `n_track - 1` is taken (the first column overall if the mix is shorter).
///
/// Costs accumulate in path order, so the returned total is bit-identical to a
/// left-to-right sum of the entries along the path.
pub fn subsequence_dtw<T: Scalar>(costs: &Array2<T>) -> Result<(WarpingPath, T)> {
    let (n, m) = costs.dim();
    if n < 2 {
        return Err(Error::DegenerateInput(format!("{n} track beats, need at least 2")));
    }
    if m == 0 {
        return Err(Error::DegenerateInput("empty mix".into()));
    }
    if costs.iter().any(|c| !c.is_finite() || *c < T::zero()) {
        return Err(Error::DegenerateInput("costs must be finite and non-negative".into()));
    }
    if m < n {
        log::warn!("mix has {m} beats, fewer than the {n} track beats");
    }

    let mut steps = vec![START; n * m];
    let mut prev: Vec<T> = costs.row(0).to_vec();
    let mut cur = vec![T::zero(); m];
    for i in 1..n {
        let row = costs.row(i);
        for j in 0..m {
            let up = prev[j];
            let (best, step) = if j == 0 {
                (up, TRACK)
            } else {
                let diag = prev[j - 1];
                let left = cur[j - 1];
                if diag <= left && diag <= up {
                    (diag, DIAG)
                } else if left <= up {
                    (left, MIX)
                } else {
                    (up, TRACK)
                }
            };
            cur[j] = best + row[j];
            steps[i * m + j] = step;
        }
        std::mem::swap(&mut prev, &mut cur);
    }

    let last = &prev;
    let min = last.iter().copied().fold(T::infinity(), T::min);
    let end = (n - 1..m)
        .find(|&j| last[j] == min)
        .or_else(|| (0..m).find(|&j| last[j] == min))
        .expect("minimum is attained");
    let total = last[end];

    let mut path = Vec::with_capacity(n + m);
    let (mut i, mut j) = (n - 1, end);
    path.push((i, j));
    while i > 0 {
        match steps[i * m + j] {
            DIAG => {
                i -= 1;
                j -= 1;
            }
            MIX => j -= 1,
            TRACK => i -= 1,
            _ => unreachable!("start marker above row 0"),
        }
        path.push((i, j));
    }
    path.reverse();
    Ok((WarpingPath::new_unchecked(path), total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive minimum over all admissible paths, summing left to right.
    pub(crate) fn brute_force(costs: &Array2<f64>) -> f64 {
        let (n, m) = costs.dim();
        fn walk(c: &Array2<f64>, i: usize, j: usize, acc: f64, best: &mut f64) {
            let (n, m) = c.dim();
            if i == n - 1 {
                *best = best.min(acc);
            }
            if i + 1 < n && j + 1 < m {
                walk(c, i + 1, j + 1, acc + c[[i + 1, j + 1]], best);
            }
            if i + 1 < n {
                walk(c, i + 1, j, acc + c[[i + 1, j]], best);
            }
            if j + 1 < m {
                walk(c, i, j + 1, acc + c[[i, j + 1]], best);
            }
        }
        let mut best = f64::INFINITY;
        for start in 0..m {
            walk(costs, 0, start, costs[[0, start]], &mut best);
        }
        let _ = n;
        best
    }

    fn path_sum(costs: &Array2<f64>, path: &WarpingPath) -> f64 {
        path.steps().iter().fold(0.0, |acc, &(i, j)| acc + costs[[i, j]])
    }

    #[test]
    fn zero_band_is_found() {
        let mut c = Array2::from_elem((4, 10), 1.0);
        for i in 0..4 {
            c[[i, 3 + i]] = 0.0;
        }
        let (path, cost) = subsequence_dtw(&c).unwrap();
        assert_eq!(path.steps(), &[(0, 3), (1, 4), (2, 5), (3, 6)]);
        assert_eq!(cost, 0.0);
    }

    #[test]
    fn all_equal_prefers_diagonal() {
        let c = Array2::from_elem((5, 9), 0.75);
        let (path, cost) = subsequence_dtw(&c).unwrap();
        assert_eq!(cost, 5.0 * 0.75);
        assert_eq!(path.diagonal_steps(), 4);
        path.validate(5).unwrap();
    }

    #[test]
    fn degenerate_inputs() {
        assert!(subsequence_dtw(&Array2::<f64>::zeros((1, 5))).is_err());
        assert!(subsequence_dtw(&Array2::<f64>::zeros((3, 0))).is_err());
        assert!(subsequence_dtw(&Array2::from_elem((3, 3), f64::NAN)).is_err());
        assert!(subsequence_dtw(&Array2::from_elem((3, 3), -1.0)).is_err());
    }

    #[test]
    fn short_mix_still_aligns() {
        let c = Array2::from_shape_fn((6, 3), |(i, j)| (i + j) as f64);
        let (path, cost) = subsequence_dtw(&c).unwrap();
        path.validate(6).unwrap();
        assert_eq!(cost, path_sum(&c, &path));
    }

    #[test]
    fn matches_brute_force_6x9() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let c = Array2::from_shape_fn((6, 9), |_| rng.random::<f64>());
            let (path, cost) = subsequence_dtw(&c).unwrap();
            path.validate(6).unwrap();
            assert_eq!(cost, brute_force(&c));
            assert_eq!(cost, path_sum(&c, &path));
        }
    }

    #[test]
    fn generic_over_f32() {
        let c = Array2::from_shape_fn((3, 5), |(i, j)| ((i * 5 + j) % 4) as f32);
        let (path, _) = subsequence_dtw(&c).unwrap();
        path.validate(3).unwrap();
    }

    proptest! {
        #[test]
        fn optimal_and_valid(n in 2usize..=7, m in 1usize..=10, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // coarse values make ties frequent
            let c = Array2::from_shape_fn((n, m), |_| rng.random_range(0..4) as f64 * 0.25);
            let (path, cost) = subsequence_dtw(&c).unwrap();
            prop_assert!(path.validate(n).is_ok());
            prop_assert_eq!(cost, brute_force(&c));
            prop_assert_eq!(cost, path_sum(&c, &path));
        }
    }
}
