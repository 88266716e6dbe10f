use super::TrackingError;

/// Minimum-cost assignment on a rectangular cost matrix (rows of equal length).
///
/// Returns `min(rows, cols)` pairs `(row, col)` sorted by row. Uses the shortest
/// augmenting path formulation with row/column potentials, O(n² m). Columns are
/// scanned in ascending order and only strictly smaller reduced costs replace the
/// current candidate, so among equal-cost choices the lowest index wins and the
/// result is a deterministic function of the matrix.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Vec<(usize, usize)>, TrackingError> {
    let rows = cost.len();
    if rows == 0 {
        return Ok(Vec::new());
    }
    let cols = cost[0].len();
    for (r, row) in cost.iter().enumerate() {
        if row.len() != cols {
            return Err(TrackingError::RaggedCost {
                row: r,
                got: row.len(),
                expected: cols,
            });
        }
        if let Some(c) = row.iter().position(|v| !v.is_finite()) {
            return Err(TrackingError::NonFiniteCost { row: r, col: c });
        }
    }
    if cols == 0 {
        return Ok(Vec::new());
    }

    if rows <= cols {
        Ok(solve(rows, cols, |i, j| cost[i][j]))
    } else {
        let mut pairs: Vec<(usize, usize)> = solve(cols, rows, |i, j| cost[j][i])
            .into_iter()
            .map(|(c, r)| (r, c))
            .collect();
        pairs.sort_unstable();
        Ok(pairs)
    }
}

/// Sum of `cost[row][col]` over the pairs, accumulated in the given order.
pub fn assignment_cost(cost: &[Vec<f64>], pairs: &[(usize, usize)]) -> f64 {
    pairs.iter().map(|&(r, c)| cost[r][c]).sum()
}

/// Requires `n <= m`. Indices are 1-based internally; slot 0 is the virtual root.
fn solve(n: usize, m: usize, a: impl Fn(usize, usize) -> f64) -> Vec<(usize, usize)> {
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];

    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        let mut min_reduced = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let reduced = a(i0 - 1, j - 1) - u[i0] - v[j];
                if reduced < min_reduced[j] {
                    min_reduced[j] = reduced;
                    way[j] = j0;
                }
                if min_reduced[j] < delta {
                    delta = min_reduced[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_reduced[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut pairs: Vec<(usize, usize)> = (1..=m)
        .filter(|&j| owner[j] != 0)
        .map(|j| (owner[j] - 1, j - 1))
        .collect();
    pairs.sort_unstable();
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Minimum over every injective map of the smaller side into the larger one.
    fn brute_force(cost: &[Vec<f64>]) -> f64 {
        let rows = cost.len();
        let cols = cost[0].len();
        fn rec(
            cost: &[Vec<f64>],
            row: usize,
            used: &mut Vec<bool>,
            acc: f64,
            best: &mut f64,
            transpose: bool,
        ) {
            let (n, m) = if transpose {
                (cost[0].len(), cost.len())
            } else {
                (cost.len(), cost[0].len())
            };
            if row == n {
                if acc < *best {
                    *best = acc;
                }
                return;
            }
            for c in 0..m {
                if !used[c] {
                    used[c] = true;
                    let v = if transpose { cost[c][row] } else { cost[row][c] };
                    rec(cost, row + 1, used, acc + v, best, transpose);
                    used[c] = false;
                }
            }
        }
        let transpose = rows > cols;
        let mut best = f64::INFINITY;
        let width = rows.max(cols);
        rec(cost, 0, &mut vec![false; width], 0.0, &mut best, transpose);
        best
    }

    fn check_valid(pairs: &[(usize, usize)], rows: usize, cols: usize) {
        assert_eq!(pairs.len(), rows.min(cols));
        let mut seen_r = vec![false; rows];
        let mut seen_c = vec![false; cols];
        for &(r, c) in pairs {
            assert!(!seen_r[r] && !seen_c[c]);
            seen_r[r] = true;
            seen_c[c] = true;
        }
    }

    #[test]
    fn zero_diagonal_gives_identity() {
        let n = 5;
        let cost: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 0.0 } else { 1.0 }).collect())
            .collect();
        let pairs = hungarian(&cost).unwrap();
        assert_eq!(pairs, (0..n).map(|i| (i, i)).collect::<Vec<_>>());
        assert_eq!(assignment_cost(&cost, &pairs), 0.0);
    }

    #[test]
    fn two_by_two_anti_diagonal() {
        let cost = vec![vec![1.0, 2.0], vec![3.0, 5.0]];
        assert_eq!(brute_force(&cost), 5.0);
        let pairs = hungarian(&cost).unwrap();
        assert_eq!(pairs, vec![(0, 1), (1, 0)]);
        assert_eq!(assignment_cost(&cost, &pairs), 5.0);
    }

    #[test]
    fn empty_and_degenerate_inputs() {
        assert!(hungarian(&[]).unwrap().is_empty());
        assert!(hungarian(&[vec![], vec![]]).unwrap().is_empty());
        assert!(matches!(
            hungarian(&[vec![1.0, 2.0], vec![1.0]]),
            Err(TrackingError::RaggedCost { row: 1, .. })
        ));
        assert!(matches!(
            hungarian(&[vec![1.0, f64::NAN]]),
            Err(TrackingError::NonFiniteCost { row: 0, col: 1 })
        ));
    }

    #[test]
    fn rectangular_matrices() {
        let wide = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0]];
        let pairs = hungarian(&wide).unwrap();
        check_valid(&pairs, 2, 3);
        assert_eq!(assignment_cost(&wide, &pairs), brute_force(&wide));
        let tall: Vec<Vec<f64>> = (0..3).map(|r| (0..2).map(|c| wide[c][r]).collect()).collect();
        let pairs = hungarian(&tall).unwrap();
        check_valid(&pairs, 3, 2);
        assert_eq!(assignment_cost(&tall, &pairs), brute_force(&tall));
    }

    #[test]
    fn matches_brute_force_on_random_seven_by_seven() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let cost: Vec<Vec<f64>> = (0..7)
                .map(|_| (0..7).map(|_| rng.random_range(0.0..1.0)).collect())
                .collect();
            let pairs = hungarian(&cost).unwrap();
            check_valid(&pairs, 7, 7);
            assert_eq!(assignment_cost(&cost, &pairs), brute_force(&cost));
        }
    }

    #[test]
    fn deterministic_on_ties() {
        let cost = vec![vec![1.0; 4]; 4];
        let first = hungarian(&cost).unwrap();
        assert_eq!(first, vec![(0, 0), (1, 1), (2, 2), (3, 3)]);
        assert_eq!(hungarian(&cost).unwrap(), first);
    }
}
