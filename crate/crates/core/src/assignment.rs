//! Minimum-cost bipartite assignment with a distance gate.
//!
//! Shared by query matching and detection evaluation. The objective is
//! lexicographic: first maximize the number of pairs within the gate, then
//! minimize their summed distance.

/// Result of a gated assignment between a left and a right set.
#[derive(Debug, Clone, PartialEq)]
pub struct GatedAssignment {
    /// (left index, right index, distance), sorted by left index.
    pub pairs: Vec<(usize, usize, f64)>,
    pub left_unmatched: Vec<usize>,
    pub right_unmatched: Vec<usize>,
}

impl GatedAssignment {
    pub fn total_cost(&self) -> f64 {
        self.pairs.iter().map(|p| p.2).sum()
    }
}

/// Hungarian algorithm (shortest augmenting paths with potentials) for an
/// `n x m` cost matrix with `n <= m`. Returns the column assigned to each row.
fn hungarian(cost: &[Vec<f64>], n: usize, m: usize) -> Vec<usize> {
    debug_assert!(n <= m);
    let inf = f64::INFINITY;
    // 1-based arrays, index 0 is the virtual root.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![usize::MAX; n];
    for j in 1..=m {
        if p[j] != 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Optimal one-to-one matching of `left` to `right` under `distance`, keeping
/// only pairs with distance `<= gate`.
pub fn gated_assignment<L, R, F>(left: &[L], right: &[R], gate: f64, distance: F) -> GatedAssignment
where
    F: Fn(&L, &R) -> f64,
{
    let (n, m) = (left.len(), right.len());
    if n == 0 || m == 0 {
        return GatedAssignment {
            pairs: Vec::new(),
            left_unmatched: (0..n).collect(),
            right_unmatched: (0..m).collect(),
        };
    }
    let dist: Vec<Vec<f64>> = left
        .iter()
        .map(|l| right.iter().map(|r| distance(l, r)).collect())
        .collect();
    // Any feasible pair must beat any number of feasible-distance savings.
    let penalty = gate * (n.min(m) as f64 + 1.0) + 1.0;
    let gated = |d: f64| if d <= gate { d } else { penalty };

    let transposed = n > m;
    let (rows, cols) = if transposed { (m, n) } else { (n, m) };
    let cost: Vec<Vec<f64>> = (0..rows)
        .map(|i| {
            (0..cols)
                .map(|j| if transposed { gated(dist[j][i]) } else { gated(dist[i][j]) })
                .collect()
        })
        .collect();
    let assigned = hungarian(&cost, rows, cols);

    let mut pairs = Vec::new();
    for (row, col) in assigned.into_iter().enumerate() {
        let (i, j) = if transposed { (col, row) } else { (row, col) };
        if dist[i][j] <= gate {
            pairs.push((i, j, dist[i][j]));
        }
    }
    pairs.sort_by_key(|p| p.0);
    let mut left_used = vec![false; n];
    let mut right_used = vec![false; m];
    for (i, j, _) in &pairs {
        left_used[*i] = true;
        right_used[*j] = true;
    }
    GatedAssignment {
        left_unmatched: (0..n).filter(|i| !left_used[*i]).collect(),
        right_unmatched: (0..m).filter(|j| !right_used[*j]).collect(),
        pairs,
    }
}
