//! Minimum-cost linear assignment (Hungarian algorithm).
//!
//! Shortest-augmenting-path formulation with potentials, O(n^2 m) for an
//! n x m cost matrix. Rectangular inputs assign the smaller axis
//! injectively into the larger.

use thiserror::Error;

use crate::grid::Grid;

#[derive(Debug, Error)]
pub enum HungarianError {
    #[error("cost matrix contains NaN at ({row}, {col})")]
    NanCost { row: usize, col: usize },
}

/// An optimal assignment. `pairs` holds `(row, col)` matches sorted by
/// row, one per element of the smaller matrix axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
}

/// Solves min-cost assignment over `cost`. Returns the matching of the
/// smaller axis into the larger with minimal total cost.
pub fn hungarian_assign(cost: &Grid<f64>) -> Result<Assignment, HungarianError> {
    let (rows, cols) = cost.shape();
    for (r, c, v) in cost.iter_indexed() {
        if v.is_nan() {
            return Err(HungarianError::NanCost { row: r, col: c });
        }
    }
    if rows == 0 || cols == 0 {
        return Ok(Assignment {
            pairs: Vec::new(),
            total_cost: 0.0,
        });
    }

    let transposed = rows > cols;
    let (n, m) = if transposed { (cols, rows) } else { (rows, cols) };
    let at = |i: usize, j: usize| -> f64 {
        if transposed {
            cost.get(j, i)
        } else {
            cost.get(i, j)
        }
    };

    // Column j0 = 0 is a virtual column; real columns are 1..=m.
    let mut u = vec![0.0_f64; n + 1];
    let mut v = vec![0.0_f64; m + 1];
    let mut assigned_row = vec![usize::MAX; m + 1]; // row occupying column j
    let mut way = vec![0_usize; m + 1];

    for i in 0..n {
        assigned_row[0] = i;
        let mut j0 = 0_usize;
        let mut min_slack = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = assigned_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0_usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let reduced = at(i0, j - 1) - u[i0] - v[j];
                if reduced < min_slack[j] {
                    min_slack[j] = reduced;
                    way[j] = j0;
                }
                if min_slack[j] < delta {
                    delta = min_slack[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    if assigned_row[j] != usize::MAX {
                        u[assigned_row[j]] += delta;
                    }
                    v[j] -= delta;
                } else {
                    min_slack[j] -= delta;
                }
            }
            j0 = j1;
            if assigned_row[j0] == usize::MAX {
                break;
            }
        }
        // Augment along the alternating path back to the virtual column.
        while j0 != 0 {
            let j1 = way[j0];
            assigned_row[j0] = assigned_row[j1];
            j0 = j1;
        }
    }

    let mut pairs: Vec<(usize, usize)> = (1..=m)
        .filter(|&j| assigned_row[j] != usize::MAX)
        .map(|j| {
            if transposed {
                (j - 1, assigned_row[j])
            } else {
                (assigned_row[j], j - 1)
            }
        })
        .collect();
    pairs.sort_unstable();
    let total_cost = pairs.iter().map(|&(r, c)| cost.get(r, c)).sum();
    Ok(Assignment { pairs, total_cost })
}
