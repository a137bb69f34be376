//! Maximum-similarity one-to-one assignment (Kuhn-Munkres with potentials).
//!
//! Rectangular inputs are padded to a square with a similarity below the
//! cosine range; padded pairs are dropped from the result. Among optimal
//! assignments the one whose sorted pair list is lexicographically smallest
//! is returned.

use serde::{Deserialize, Serialize};

use crate::model::SimilarityMatrix;

/// Similarity given to padded cells. Any constant works since every
/// assignment uses the same number of padded cells.
const PAD_SIMILARITY: f64 = -2.0;

/// Reduced costs within this distance of zero count as tight.
const TIGHT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    /// `(reference_index, candidate_index)`, sorted by reference index.
    pub pairs: Vec<(usize, usize)>,
    pub total_similarity: f64,
}

impl Assignment {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Similarities of the matched pairs, in pair order.
    pub fn matched(&self, sim: &SimilarityMatrix) -> Vec<f64> {
        self.pairs.iter().map(|&(r, c)| sim.get(r, c)).collect()
    }
}

/// Sums in reference order so equal pair lists give bit-identical totals.
fn total(sim: &SimilarityMatrix, pairs: &[(usize, usize)]) -> f64 {
    pairs.iter().map(|&(r, c)| sim.get(r, c)).sum()
}

struct Square {
    n: usize,
    cost: Vec<f64>,
}

impl Square {
    fn new(sim: &SimilarityMatrix) -> Self {
        let n = sim.rows().max(sim.cols());
        let mut cost = vec![-PAD_SIMILARITY; n * n];
        for r in 0..sim.rows() {
            for c in 0..sim.cols() {
                cost[r * n + c] = -sim.get(r, c);
            }
        }
        Self { n, cost }
    }

    fn at(&self, r: usize, c: usize) -> f64 {
        self.cost[r * self.n + c]
    }

    /// Minimum-cost perfect matching plus optimal dual potentials.
    /// Returns `(col_of_row, u, v)` with `u[r] + v[c] <= cost(r, c)`.
    fn solve(&self) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
        let n = self.n;
        const NONE: usize = usize::MAX;
        // 1-based internal indexing; slot 0 is the virtual root.
        let mut u = vec![0.0; n + 1];
        let mut v = vec![0.0; n + 1];
        let mut row_of_col = vec![0usize; n + 1];
        let mut way = vec![0usize; n + 1];
        for i in 1..=n {
            row_of_col[0] = i;
            let mut j0 = 0;
            let mut minv = vec![f64::INFINITY; n + 1];
            let mut used = vec![false; n + 1];
            loop {
                used[j0] = true;
                let i0 = row_of_col[j0];
                let mut delta = f64::INFINITY;
                let mut j1 = NONE;
                for j in 1..=n {
                    if used[j] {
                        continue;
                    }
                    let cur = self.at(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
                for j in 0..=n {
                    if used[j] {
                        u[row_of_col[j]] += delta;
                        v[j] -= delta;
                    } else {
                        minv[j] -= delta;
                    }
                }
                j0 = j1;
                if row_of_col[j0] == 0 {
                    break;
                }
            }
            loop {
                let j1 = way[j0];
                row_of_col[j0] = row_of_col[j1];
                j0 = j1;
                if j0 == 0 {
                    break;
                }
            }
        }
        let mut col_of_row = vec![0; n];
        for j in 1..=n {
            col_of_row[row_of_col[j] - 1] = j - 1;
        }
        (col_of_row, u[1..].to_vec(), v[1..].to_vec())
    }
}

/// Searches for an alternating path that lets `row` take column `target`.
/// Rows below `row` are frozen. On success `col_of_row` is updated.
fn reroute(
    sq: &Square,
    tight: &dyn Fn(usize, usize) -> bool,
    col_of_row: &mut [usize],
    row: usize,
    target: usize,
) -> bool {
    let n = sq.n;
    let mut row_of_col = vec![0; n];
    for (r, &c) in col_of_row.iter().enumerate() {
        row_of_col[c] = r;
    }
    let freed = col_of_row[row];
    if row_of_col[target] < row {
        return false;
    }
    // DFS over rows; parent[c] = column the row holding `c` came from.
    let mut visited = vec![false; n];
    visited[target] = true;
    let mut stack = vec![(row_of_col[target], target)];
    let mut parent: Vec<Option<usize>> = vec![None; n];
    while let Some((r, via)) = stack.pop() {
        for c in 0..n {
            if visited[c] || !tight(r, c) {
                continue;
            }
            if c != freed && row_of_col[c] <= row {
                continue;
            }
            visited[c] = true;
            parent[c] = Some(via);
            if c == freed {
                // Walk back: the row that held `via` moves to `c`.
                let mut cur = c;
                let mut moves = Vec::new();
                let mut holder_col = via;
                loop {
                    moves.push((row_of_col[holder_col], cur));
                    if holder_col == target {
                        break;
                    }
                    cur = holder_col;
                    holder_col = parent[holder_col].expect("path is connected");
                }
                for (r, c) in moves {
                    col_of_row[r] = c;
                }
                col_of_row[row] = target;
                return true;
            }
            stack.push((row_of_col[c], c));
        }
    }
    false
}

pub fn hungarian_assignment(sim: &SimilarityMatrix) -> Assignment {
    if sim.is_empty() {
        return Assignment {
            pairs: Vec::new(),
            total_similarity: 0.0,
        };
    }
    let sq = Square::new(sim);
    let (mut col_of_row, u, v) = sq.solve();
    let tight = |r: usize, c: usize| sq.at(r, c) - u[r] - v[c] <= TIGHT_EPS;
    let real = |cor: &[usize]| -> Vec<(usize, usize)> {
        (0..sim.rows())
            .filter(|&r| cor[r] < sim.cols())
            .map(|r| (r, cor[r]))
            .collect()
    };

    let mut best_total = total(sim, &real(&col_of_row));
    for row in 0..sim.rows() {
        let current = col_of_row[row];
        for target in 0..current.min(sim.cols()) {
            if !tight(row, target) {
                continue;
            }
            let mut trial = col_of_row.clone();
            if reroute(&sq, &tight, &mut trial, row, target) {
                let t = total(sim, &real(&trial));
                if t >= best_total {
                    col_of_row = trial;
                    best_total = t;
                    break;
                }
            }
        }
    }

    let pairs = real(&col_of_row);
    Assignment {
        total_similarity: total(sim, &pairs),
        pairs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[Vec<f64>]) -> SimilarityMatrix {
        SimilarityMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn two_by_two() {
        let a = hungarian_assignment(&m(&[vec![0.9, 0.1], vec![0.2, 0.8]]));
        assert_eq!(a.pairs, [(0, 0), (1, 1)]);
        assert!((a.total_similarity - 1.7).abs() < 1e-15);
    }

    #[test]
    fn single_cell() {
        let a = hungarian_assignment(&m(&[vec![0.5]]));
        assert_eq!(a.pairs, [(0, 0)]);
        assert_eq!(a.total_similarity, 0.5);
    }

    #[test]
    fn wide_matrix_matches_every_row() {
        // injections of 2 rows into 3 cols: best is (0,2)+(1,0) = 0.9 + 0.7
        let a = hungarian_assignment(&m(&[vec![0.6, 0.1, 0.9], vec![0.7, 0.5, 0.8]]));
        assert_eq!(a.pairs, [(0, 2), (1, 0)]);
        assert!((a.total_similarity - 1.6).abs() < 1e-15);
    }

    #[test]
    fn tall_matrix_leaves_rows_unmatched() {
        let a = hungarian_assignment(&m(&[vec![0.2], vec![0.9], vec![0.4]]));
        assert_eq!(a.pairs, [(1, 0)]);
    }

    #[test]
    fn ties_break_to_lowest_indices() {
        let a = hungarian_assignment(&m(&[vec![1.0, 1.0], vec![1.0, 1.0]]));
        assert_eq!(a.pairs, [(0, 0), (1, 1)]);
        let a = hungarian_assignment(&m(&[vec![0.5, 0.5, 0.5]]));
        assert_eq!(a.pairs, [(0, 0)]);
        let a = hungarian_assignment(&m(&[vec![0.5], vec![0.5], vec![0.5]]));
        assert_eq!(a.pairs, [(0, 0)]);
        let a = hungarian_assignment(&m(&vec![vec![0.0; 4]; 4]));
        assert_eq!(a.pairs, [(0, 0), (1, 1), (2, 2), (3, 3)]);
    }

    #[test]
    fn negative_similarities() {
        let a = hungarian_assignment(&m(&[vec![-0.9, -0.1], vec![-0.2, -0.8]]));
        assert_eq!(a.pairs, [(0, 1), (1, 0)]);
    }

    #[test]
    fn empty_matrix() {
        assert!(hungarian_assignment(&SimilarityMatrix::empty(0, 3)).is_empty());
    }
}
