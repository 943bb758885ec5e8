//! Maximum-weight one-to-one assignment on rectangular score matrices.
//!
//! Scores are turned into costs (`max - score`) and solved with the
//! shortest-augmenting-path Hungarian method on a square matrix padded with
//! one private "unmatched" slot per row and per column. Leaving a row and a
//! column both unmatched costs exactly as much as pairing them at score zero,
//! so the solver optimises total score and nothing else. Forbidden pairs cost
//! more than any feasible total and are therefore never selected.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    rows: usize,
    cols: usize,
    scores: Vec<f64>,
    forbidden: Vec<bool>,
}

impl ScoreMatrix {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            scores: vec![0.0; rows * cols],
            forbidden: vec![false; rows * cols],
        }
    }

    /// Builds a matrix from row vectors; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged score matrix"));
        }
        let mut m = Self::new(rows.len(), cols);
        for (r, row) in rows.iter().enumerate() {
            m.scores[r * cols..(r + 1) * cols].copy_from_slice(row);
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.scores[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, score: f64) {
        self.scores[r * self.cols + c] = score;
    }

    pub fn forbid(&mut self, r: usize, c: usize) {
        self.forbidden[r * self.cols + c] = true;
    }

    pub fn is_forbidden(&self, r: usize, c: usize) -> bool {
        self.forbidden[r * self.cols + c]
    }

    fn validate(&self) -> Result<()> {
        for (k, (&s, &f)) in self.scores.iter().zip(&self.forbidden).enumerate() {
            if s.is_nan() {
                return Err(Error::invalid(format!(
                    "NaN score at ({}, {})",
                    k / self.cols,
                    k % self.cols
                )));
            }
            if !f && !(s.is_finite() && s >= 0.0) {
                return Err(Error::invalid(format!(
                    "score {s} at ({}, {}) must be finite and nonnegative",
                    k / self.cols,
                    k % self.cols
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Assignment {
    /// `(row, col)` pairs sorted by row.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_rows: Vec<usize>,
    pub unmatched_cols: Vec<usize>,
}

impl Assignment {
    /// Sum of matched scores, accumulated in row order.
    pub fn total(&self, m: &ScoreMatrix) -> f64 {
        self.pairs.iter().map(|&(r, c)| m.get(r, c)).sum()
    }

    /// Column matched to `row`, if any.
    pub fn col_of(&self, row: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.0 == row).map(|p| p.1)
    }
}

/// Solves `max sum score[r][c]` over one-to-one partial assignments that
/// avoid forbidden pairs.
///
/// Unmatched rows and columns left over by the optimum are then paired
/// greedily (lowest row, lowest column) through any remaining allowed pair,
/// which cannot lower the total since scores are nonnegative.
pub fn solve_max_assignment(m: &ScoreMatrix) -> Result<Assignment> {
    m.validate()?;
    let (rows, cols) = (m.rows, m.cols);
    if rows == 0 || cols == 0 {
        return Ok(Assignment {
            pairs: Vec::new(),
            unmatched_rows: (0..rows).collect(),
            unmatched_cols: (0..cols).collect(),
        });
    }

    let max_score = m
        .scores
        .iter()
        .zip(&m.forbidden)
        .filter(|(_, &f)| !f)
        .map(|(&s, _)| s)
        .fold(0.0_f64, f64::max);
    let n = rows + cols;
    let unmatched = max_score * 0.5;
    let blocked = (n as f64 + 1.0) * max_score + 1.0;

    let mut cost = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            cost[i * n + j] = match (i < rows, j < cols) {
                (true, true) if m.is_forbidden(i, j) => blocked,
                (true, true) => max_score - m.get(i, j),
                (true, false) if j - cols == i => unmatched,
                (false, true) if i - rows == j => unmatched,
                (false, false) => 0.0,
                _ => blocked,
            };
        }
    }

    let col_to_row = hungarian_min(&cost, n);

    let mut row_match = vec![None; rows];
    for (j, &i) in col_to_row.iter().enumerate().take(cols) {
        if i < rows && !m.is_forbidden(i, j) {
            row_match[i] = Some(j);
        }
    }

    let mut col_used = vec![false; cols];
    for j in row_match.iter().flatten() {
        col_used[*j] = true;
    }
    for (r, slot) in row_match.iter_mut().enumerate() {
        if slot.is_some() {
            continue;
        }
        if let Some(c) = (0..cols).find(|&c| !col_used[c] && !m.is_forbidden(r, c)) {
            *slot = Some(c);
            col_used[c] = true;
        }
    }

    let pairs: Vec<(usize, usize)> = row_match
        .iter()
        .enumerate()
        .filter_map(|(r, c)| c.map(|c| (r, c)))
        .collect();
    Ok(Assignment {
        unmatched_rows: (0..rows).filter(|r| row_match[*r].is_none()).collect(),
        unmatched_cols: (0..cols).filter(|c| !col_used[*c]).collect(),
        pairs,
    })
}

/// Square min-cost assignment; returns the row assigned to each column.
fn hungarian_min(cost: &[f64], n: usize) -> Vec<usize> {
    // 1-based potentials with a virtual column 0, as in the classic
    // O(n^3) formulation.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
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

    let mut col_to_row = vec![0; n];
    for j in 1..=n {
        col_to_row[j - 1] = p[j] - 1;
    }
    col_to_row
}
