//! Exact linear assignment by shortest augmenting paths with dual
//! potentials (the Jonker-Volgenant family).

use crate::error::{Error, Result};
use crate::grad::Matrix;

const NONE: usize = usize::MAX;

/// Optimal matching of rows to columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    /// Row `i` is matched to column `col_for_row[i]`.
    pub col_for_row: Vec<usize>,
    pub total_cost: f64,
}

/// Minimizes `sum_i cost[i, p(i)]` over permutations `p`.
pub fn solve_assignment(cost: &Matrix<f64>) -> Result<Assignment> {
    let (n, m) = cost.shape();
    if n != m {
        return Err(Error::contract(format!("assignment needs a square cost matrix, got {n}x{m}")));
    }
    if !cost.is_finite() {
        return Err(Error::contract("assignment cost has non-finite entries"));
    }
    // A constant shift keeps the optimal permutation and makes costs >= 0.
    let lo = cost.as_slice().iter().copied().fold(0.0, f64::min);
    let mut sol = solve_with(n, |i, j| cost.get(i, j) - lo);
    sol.total_cost = sol.col_for_row.iter().enumerate().map(|(i, &j)| cost.get(i, j)).sum();
    Ok(sol)
}

/// Same as [`solve_assignment`] with costs computed on demand, so large
/// geometric problems need no `n x n` buffer. `cost` must be finite and
/// non-negative.
pub fn solve_with(n: usize, cost: impl Fn(usize, usize) -> f64) -> Assignment {
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut col_for_row = vec![NONE; n];
    let mut row_for_col = vec![NONE; n];
    let mut path = vec![NONE; n];
    let mut shortest = vec![f64::INFINITY; n];
    let mut remaining: Vec<usize> = Vec::with_capacity(n);
    let mut seen_rows: Vec<usize> = Vec::with_capacity(n);
    let mut seen_cols: Vec<usize> = Vec::with_capacity(n);

    for start in 0..n {
        // Dijkstra over reduced costs from `start` to the nearest free column.
        remaining.clear();
        remaining.extend((0..n).rev());
        shortest.fill(f64::INFINITY);
        seen_rows.clear();
        seen_cols.clear();
        let mut min_val = 0.0;
        let mut i = start;
        let sink = loop {
            seen_rows.push(i);
            let mut best = NONE;
            let mut lowest = f64::INFINITY;
            let base = min_val - u[i];
            for (k, &j) in remaining.iter().enumerate() {
                let r = base + cost(i, j) - v[j];
                if r < shortest[j] {
                    path[j] = i;
                    shortest[j] = r;
                }
                if shortest[j] < lowest || (shortest[j] == lowest && row_for_col[j] == NONE) {
                    lowest = shortest[j];
                    best = k;
                }
            }
            min_val = lowest;
            let j = remaining.swap_remove(best);
            seen_cols.push(j);
            if row_for_col[j] == NONE {
                break j;
            }
            i = row_for_col[j];
        };

        u[start] += min_val;
        for &r in &seen_rows[1..] {
            u[r] += min_val - shortest[col_for_row[r]];
        }
        for &c in &seen_cols {
            v[c] -= min_val - shortest[c];
        }

        let mut j = sink;
        loop {
            let r = path[j];
            row_for_col[j] = r;
            std::mem::swap(&mut col_for_row[r], &mut j);
            if r == start {
                break;
            }
        }
    }

    let total_cost = col_for_row.iter().enumerate().map(|(i, &j)| cost(i, j)).sum();
    Assignment { col_for_row, total_cost }
}
