//! Maximin solutions of small dense matrix games.
//!
//! The agent picks a row distribution, the opponent a column. The value
//! `max_p min_o p^T M[:, o]` is computed with a primal simplex on the
//! opponent's LP `max sum(y) s.t. (M + K) y <= 1, y >= 0`, where the shift
//! `K = 1 + max|M|` makes every entry positive. The agent's strategy is read
//! off the slack reduced costs of the final tableau.

use crate::error::{Error, Result};

/// Pivot elements smaller than this are treated as zero.
pub const PIVOT_EPS: f64 = 1e-11;
/// A column constraint is reported as tight when within this of the value.
pub const ACTIVE_EPS: f64 = 1e-7;

/// Column payoffs this close (relative to the matrix scale) count as tied.
pub const TIE_EPS: f64 = 1e-12;

const MAX_PIVOTS: usize = 10_000;

/// Dense payoff matrix, agent actions on rows, opponent actions on columns.
#[derive(Debug, Clone, PartialEq)]
pub struct PayoffMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl PayoffMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Invalid(format!(
                "payoff matrix must be at least 1x1, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "payoff matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::Invalid(format!(
                "payoff entry ({}, {}) is not finite",
                i / cols,
                i % cols
            )));
        }
        Ok(PayoffMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::Shape("ragged payoff matrix".into()));
        }
        PayoffMatrix::new(n, m, rows.concat())
    }

    /// Builds a matrix from `f(row, col)`.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for a in 0..rows {
            for o in 0..cols {
                data.push(f(a, o));
            }
        }
        PayoffMatrix::new(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, a: usize, o: usize) -> f64 {
        self.data[a * self.cols + o]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// `-M^T`: the same game seen from the opponent's side.
    pub fn opponent_view(&self) -> PayoffMatrix {
        let mut data = Vec::with_capacity(self.data.len());
        for o in 0..self.cols {
            for a in 0..self.rows {
                data.push(-self.get(a, o));
            }
        }
        PayoffMatrix {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Expected payoff of each opponent column against `strategy`.
    pub fn column_payoffs(&self, strategy: &[f64]) -> Vec<f64> {
        (0..self.cols)
            .map(|o| (0..self.rows).map(|a| strategy[a] * self.get(a, o)).sum())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaximinSolution {
    pub value: f64,
    pub strategy: Vec<f64>,
    pub tight_columns: Vec<usize>,
}

/// Solves `max_p min_o p^T M[:, o]` exactly (up to floating point).
///
/// Bland's rule fixes the pivot sequence, so identical input gives identical
/// output. The returned strategy is checked against the opponent's dual
/// certificate; a duality gap above tolerance is reported as an error rather
/// than returned.
pub fn solve_maximin(m: &PayoffMatrix) -> Result<MaximinSolution> {
    let (rows, cols) = (m.rows, m.cols);
    let scale = m.max_abs();
    let shift = 1.0 + scale;
    let fail = |reason: String| Error::Simplex {
        reason,
        rows,
        cols,
        scale,
    };

    if rows == 1 {
        let row = m.column_payoffs(&[1.0]);
        let value = row.iter().copied().fold(f64::INFINITY, f64::min);
        return Ok(finish(m, vec![1.0], value));
    }

    // Tableau: `rows` constraint rows over `cols` y-variables and `rows`
    // slacks, plus a right-hand side.
    let width = cols + rows;
    let mut tab = vec![0.0; rows * width];
    let mut rhs = vec![1.0; rows];
    for a in 0..rows {
        for o in 0..cols {
            tab[a * width + o] = m.get(a, o) + shift;
        }
        tab[a * width + cols + a] = 1.0;
    }
    let mut reduced = vec![0.0; width];
    reduced[..cols].fill(1.0);
    let mut objective = 0.0;
    let mut basis: Vec<usize> = (cols..cols + rows).collect();

    let mut pivots = 0;
    loop {
        let Some(enter) = (0..width).find(|&j| reduced[j] > PIVOT_EPS) else {
            break;
        };
        let mut leave: Option<usize> = None;
        let mut best = f64::INFINITY;
        for r in 0..rows {
            let coef = tab[r * width + enter];
            if coef > PIVOT_EPS {
                let ratio = rhs[r] / coef;
                let better = match leave {
                    None => true,
                    Some(l) => {
                        let tol = 1e-14 * best.abs().max(1.0);
                        ratio < best - tol || (ratio <= best + tol && basis[r] < basis[l])
                    }
                };
                if better {
                    best = best.min(ratio);
                    leave = Some(r);
                }
            }
        }
        let Some(prow) = leave else {
            return Err(fail(format!("unbounded direction at column {enter}")));
        };

        let piv = tab[prow * width + enter];
        for j in 0..width {
            tab[prow * width + j] /= piv;
        }
        rhs[prow] /= piv;
        for r in 0..rows {
            if r == prow {
                continue;
            }
            let f = tab[r * width + enter];
            if f != 0.0 {
                for j in 0..width {
                    tab[r * width + j] -= f * tab[prow * width + j];
                }
                rhs[r] -= f * rhs[prow];
                if rhs[r] < 0.0 && rhs[r] > -1e-13 {
                    rhs[r] = 0.0;
                }
            }
        }
        let f = reduced[enter];
        for j in 0..width {
            reduced[j] -= f * tab[prow * width + j];
        }
        objective += f * rhs[prow];
        basis[prow] = enter;

        pivots += 1;
        if pivots > MAX_PIVOTS {
            return Err(fail(format!("pivot limit {MAX_PIVOTS} exceeded")));
        }
    }

    if !(objective.is_finite() && objective > 0.0) {
        return Err(fail(format!("non-positive optimum {objective:e}")));
    }

    // Duals of the row constraints are the negated slack reduced costs.
    let duals: Vec<f64> = (0..rows).map(|a| (-reduced[cols + a]).max(0.0)).collect();
    let total: f64 = duals.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(fail("dual certificate vanished".into()));
    }
    let strategy: Vec<f64> = duals.iter().map(|d| d / total).collect();

    let mut y = vec![0.0; cols];
    for (r, &b) in basis.iter().enumerate() {
        if b < cols {
            y[b] = rhs[r].max(0.0);
        }
    }
    let ysum: f64 = y.iter().sum();

    let lower = m
        .column_payoffs(&strategy)
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let upper = if ysum > 0.0 {
        (0..rows)
            .map(|a| (0..cols).map(|o| m.get(a, o) * y[o] / ysum).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max)
    } else {
        f64::INFINITY
    };
    let gap = upper - lower;
    if !(gap.is_finite() && gap <= ACTIVE_EPS * shift) {
        return Err(fail(format!(
            "duality gap {gap:e} (lower {lower}, upper {upper})"
        )));
    }

    Ok(finish(m, strategy, lower))
}

fn finish(m: &PayoffMatrix, strategy: Vec<f64>, value: f64) -> MaximinSolution {
    let tight_columns = m
        .column_payoffs(&strategy)
        .iter()
        .enumerate()
        .filter(|(_, &v)| v <= value + ACTIVE_EPS)
        .map(|(o, _)| o)
        .collect();
    MaximinSolution {
        value,
        strategy,
        tight_columns,
    }
}

/// Opponent column minimizing `strategy^T M[:, o]`; ties (within `TIE_EPS`
/// of the matrix scale) go to the lowest index.
pub fn opponent_best_response(m: &PayoffMatrix, strategy: &[f64]) -> Result<usize> {
    if strategy.len() != m.rows {
        return Err(Error::Shape(format!(
            "strategy has {} entries for {} rows",
            strategy.len(),
            m.rows
        )));
    }
    let payoffs = m.column_payoffs(strategy);
    let min = payoffs.iter().copied().fold(f64::INFINITY, f64::min);
    let tol = TIE_EPS * (1.0 + m.max_abs());
    Ok(payoffs.iter().position(|&v| v <= min + tol).unwrap_or(0))
}
