//! Random instances and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zsmg::game::{QTable, TabularGame, Transition};
use zsmg::lp::PayoffMatrix;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> PayoffMatrix {
    PayoffMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-scale..=scale)).unwrap()
}

/// Small integer entries: lots of ties and degenerate vertices.
pub fn random_int_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> PayoffMatrix {
    PayoffMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-2i32..=2) as f64).unwrap()
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            go(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Maximin value by support enumeration: every vertex of
/// `{(p, v): p >= 0, sum p = 1, p^T M[:, j] >= v}` solves a square system
/// on some row support `I` and equally many tight columns `J`.
pub fn maximin_oracle(m: &PayoffMatrix) -> f64 {
    let (r, c) = (m.rows(), m.cols());
    let mut best = f64::NEG_INFINITY;
    for k in 1..=r.min(c) {
        for rows in combinations(r, k) {
            for cols in combinations(c, k) {
                // Unknowns: p_i for i in rows, then v.
                let mut a = DMatrix::zeros(k + 1, k + 1);
                let mut b = DVector::zeros(k + 1);
                for (jj, &j) in cols.iter().enumerate() {
                    for (ii, &i) in rows.iter().enumerate() {
                        a[(jj, ii)] = m.get(i, j);
                    }
                    a[(jj, k)] = -1.0;
                }
                for ii in 0..k {
                    a[(k, ii)] = 1.0;
                }
                b[k] = 1.0;
                let Some(x) = a.lu().solve(&b) else { continue };
                if x.iter().any(|v| !v.is_finite()) {
                    continue;
                }
                let v = x[k];
                let mut p = vec![0.0; r];
                for (ii, &i) in rows.iter().enumerate() {
                    p[i] = x[ii];
                }
                if p.iter().any(|&pi| pi < -1e-10) {
                    continue;
                }
                let scale = 1.0 + m.max_abs();
                let feasible = (0..c).all(|j| {
                    let pay: f64 = (0..r).map(|i| p[i] * m.get(i, j)).sum();
                    pay >= v - 1e-9 * scale
                });
                if feasible {
                    best = best.max(v);
                }
            }
        }
    }
    best
}

/// Maximin value of a two-row game by scanning `p` on a uniform grid.
pub fn two_row_grid_value(m: &PayoffMatrix, steps: usize) -> f64 {
    assert_eq!(m.rows(), 2);
    (0..=steps)
        .map(|i| {
            let p = i as f64 / steps as f64;
            (0..m.cols())
                .map(|j| p * m.get(0, j) + (1.0 - p) * m.get(1, j))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Maximin value of a three-row game on a simplex grid with `steps` divisions.
pub fn three_row_grid_value(m: &PayoffMatrix, steps: usize) -> f64 {
    assert_eq!(m.rows(), 3);
    let mut best = f64::NEG_INFINITY;
    for i in 0..=steps {
        for j in 0..=steps - i {
            let p = [i as f64, j as f64, (steps - i - j) as f64].map(|x| x / steps as f64);
            let v = (0..m.cols())
                .map(|o| (0..3).map(|a| p[a] * m.get(a, o)).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            best = best.max(v);
        }
    }
    best
}

pub struct GameSpec {
    pub n_states: usize,
    pub m: usize,
    pub l: usize,
    pub gamma: f64,
    /// Chance that any quarter of a row ends the game.
    pub end_prob: f64,
}

/// Random game whose transition probabilities are multiples of 1/4.
pub fn random_quarter_game(rng: &mut ChaCha8Rng, spec: &GameSpec) -> TabularGame {
    let n = spec.n_states * spec.m * spec.l;
    let mut transitions = Vec::with_capacity(n);
    let mut rewards = Vec::with_capacity(n);
    for _ in 0..n {
        let mut row: Vec<Transition> = Vec::new();
        for _ in 0..4 {
            let next = if rng.gen_bool(spec.end_prob) {
                None
            } else {
                Some(rng.gen_range(0..spec.n_states))
            };
            match row.iter_mut().find(|t| t.next == next) {
                Some(t) => t.prob += 0.25,
                None => row.push(Transition { next, prob: 0.25 }),
            }
        }
        transitions.push(row);
        rewards.push(rng.gen_range(-1.0..1.0));
    }
    TabularGame::new(
        spec.n_states,
        spec.m,
        spec.l,
        transitions,
        rewards,
        spec.gamma,
        vec![false; spec.n_states],
    )
    .unwrap()
}

/// Random game with continuous transition probabilities over up to three successors.
pub fn random_game(rng: &mut ChaCha8Rng, spec: &GameSpec) -> TabularGame {
    let n = spec.n_states * spec.m * spec.l;
    let mut transitions = Vec::with_capacity(n);
    let mut rewards = Vec::with_capacity(n);
    for _ in 0..n {
        let k = rng.gen_range(1..=3);
        let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let mut row: Vec<Transition> = Vec::new();
        let mut used = 0.0;
        for (i, x) in raw.iter().enumerate() {
            let prob = if i + 1 == k { 1.0 - used } else { x / total };
            used += prob;
            let next = if rng.gen_bool(spec.end_prob) {
                None
            } else {
                Some(rng.gen_range(0..spec.n_states))
            };
            row.push(Transition { next, prob });
        }
        transitions.push(row);
        rewards.push(rng.gen_range(-1.0..1.0));
    }
    TabularGame::new(
        spec.n_states,
        spec.m,
        spec.l,
        transitions,
        rewards,
        spec.gamma,
        vec![false; spec.n_states],
    )
    .unwrap()
}

pub fn random_q(rng: &mut ChaCha8Rng, game: &TabularGame, scale: f64) -> QTable {
    let values = (0..game.n_entries()).map(|_| rng.gen_range(-scale..=scale)).collect();
    QTable::from_values(game, values).unwrap()
}

pub fn max_abs_diff(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    x.iter().zip(y).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
}
