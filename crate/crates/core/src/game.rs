//! Finite zero-sum Markov games and their exact dynamic-programming solution.
//!
//! The agent maximizes, the opponent minimizes. A transition may end the game
//! (`next == None`), which behaves like moving to an absorbing state of value
//! zero that is not counted among the game's states.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lp::{opponent_best_response, solve_maximin, PayoffMatrix};

/// Sweep cap for iterative policy evaluation.
pub const EVAL_MAX_SWEEPS: usize = 100_000;
/// Sup-norm tolerance for iterative policy evaluation.
pub const EVAL_TOL: f64 = 1e-9;

const PROB_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    /// Successor state, or `None` when the game ends.
    pub next: Option<usize>,
    pub prob: f64,
}

impl Transition {
    pub fn to(next: usize, prob: f64) -> Self {
        Transition {
            next: Some(next),
            prob,
        }
    }

    pub fn end(prob: f64) -> Self {
        Transition { next: None, prob }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularGame {
    n_states: usize,
    n_agent_actions: usize,
    n_opp_actions: usize,
    transitions: Vec<Vec<Transition>>,
    rewards: Vec<f64>,
    discount: f64,
    terminal: Vec<bool>,
    /// States that appear as a successor somewhere; only these need an LP per sweep.
    successor: Vec<bool>,
}

impl TabularGame {
    /// `transitions` and `rewards` are indexed by `(s * |A| + a) * |O| + o`.
    pub fn new(
        n_states: usize,
        n_agent_actions: usize,
        n_opp_actions: usize,
        transitions: Vec<Vec<Transition>>,
        rewards: Vec<f64>,
        discount: f64,
        terminal: Vec<bool>,
    ) -> Result<Self> {
        if n_states == 0 || n_agent_actions == 0 || n_opp_actions == 0 {
            return Err(Error::Invalid("game dimensions must be positive".into()));
        }
        let n = n_states * n_agent_actions * n_opp_actions;
        if transitions.len() != n || rewards.len() != n || terminal.len() != n_states {
            return Err(Error::Shape(format!(
                "expected {n} transition rows, {n} rewards and {n_states} terminal flags; got {}, {}, {}",
                transitions.len(),
                rewards.len(),
                terminal.len()
            )));
        }
        if !(discount > 0.0 && discount <= 1.0) {
            return Err(Error::Invalid(format!("discount {discount} outside (0, 1]")));
        }
        let mut successor = vec![false; n_states];
        for (idx, row) in transitions.iter().enumerate() {
            let s = idx / (n_agent_actions * n_opp_actions);
            if !rewards[idx].is_finite() {
                return Err(Error::Invalid(format!("reward at row {idx} is not finite")));
            }
            if terminal[s] {
                if !row.is_empty() {
                    return Err(Error::Invalid(format!(
                        "terminal state {s} has outgoing transitions"
                    )));
                }
                continue;
            }
            let mut total = 0.0;
            for t in row {
                if !(t.prob >= 0.0 && t.prob.is_finite()) {
                    return Err(Error::Invalid(format!(
                        "row {idx}: bad probability {}",
                        t.prob
                    )));
                }
                if let Some(next) = t.next {
                    if next >= n_states {
                        return Err(Error::Invalid(format!(
                            "row {idx}: successor {next} out of range"
                        )));
                    }
                    if t.prob > 0.0 {
                        successor[next] = true;
                    }
                }
                total += t.prob;
            }
            if (total - 1.0).abs() > PROB_TOL {
                return Err(Error::Invalid(format!(
                    "row {idx} (state {s}): probabilities sum to {total}"
                )));
            }
        }
        Ok(TabularGame {
            n_states,
            n_agent_actions,
            n_opp_actions,
            transitions,
            rewards,
            discount,
            terminal,
            successor,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_agent_actions(&self) -> usize {
        self.n_agent_actions
    }

    pub fn n_opp_actions(&self) -> usize {
        self.n_opp_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    pub fn terminal_mask(&self) -> &[bool] {
        &self.terminal
    }

    /// Number of Q-table entries, `|S| |A| |O|`.
    pub fn n_entries(&self) -> usize {
        self.rewards.len()
    }

    #[inline]
    pub fn index(&self, s: usize, a: usize, o: usize) -> usize {
        (s * self.n_agent_actions + a) * self.n_opp_actions + o
    }

    pub fn transitions(&self, s: usize, a: usize, o: usize) -> &[Transition] {
        &self.transitions[self.index(s, a, o)]
    }

    pub fn reward(&self, s: usize, a: usize, o: usize) -> f64 {
        self.rewards[self.index(s, a, o)]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn transition_rows(&self) -> &[Vec<Transition>] {
        &self.transitions
    }

    fn require_discounted(&self) -> Result<()> {
        if self.discount < 1.0 {
            Ok(())
        } else {
            Err(Error::Invalid("exact solvers require discount < 1".into()))
        }
    }

    fn check_q(&self, q: &QTable) -> Result<()> {
        if q.n_states != self.n_states
            || q.n_agent_actions != self.n_agent_actions
            || q.n_opp_actions != self.n_opp_actions
        {
            return Err(Error::Shape(format!(
                "Q table is {}x{}x{}, game is {}x{}x{}",
                q.n_states,
                q.n_agent_actions,
                q.n_opp_actions,
                self.n_states,
                self.n_agent_actions,
                self.n_opp_actions
            )));
        }
        Ok(())
    }

    fn check_policy(&self, pi: &PolicyTable) -> Result<()> {
        if pi.strategies.len() != self.n_states || pi.n_actions != self.n_agent_actions {
            return Err(Error::Shape(format!(
                "policy covers {} states x {} actions, game has {} x {}",
                pi.strategies.len(),
                pi.n_actions,
                self.n_states,
                self.n_agent_actions
            )));
        }
        Ok(())
    }

    /// `R + gamma * sum_s' P V(s')` for every entry.
    fn backup(&self, next_values: &[f64]) -> QTable {
        let values = self
            .transitions
            .iter()
            .zip(&self.rewards)
            .map(|(row, r)| {
                let future: f64 = row
                    .iter()
                    .filter_map(|t| t.next.map(|s| t.prob * next_values[s]))
                    .sum();
                r + self.discount * future
            })
            .collect();
        QTable {
            n_states: self.n_states,
            n_agent_actions: self.n_agent_actions,
            n_opp_actions: self.n_opp_actions,
            values,
        }
    }

    /// Maximin value of every successor state under `q`; zero elsewhere.
    fn minimax_values(&self, q: &QTable) -> Result<Vec<f64>> {
        (0..self.n_states)
            .into_par_iter()
            .map(|s| {
                if self.terminal[s] || !self.successor[s] {
                    return Ok(0.0);
                }
                solve_maximin(&q.state_matrix(s))
                    .map(|sol| sol.value)
                    .map_err(|e| e.at_state(s as u64))
            })
            .collect()
    }

    fn policy_values(&self, q: &QTable, pi: &PolicyTable) -> Vec<f64> {
        (0..self.n_states)
            .map(|s| {
                if self.terminal[s] || !self.successor[s] {
                    return 0.0;
                }
                let strat = &pi.strategies[s];
                (0..self.n_opp_actions)
                    .map(|o| {
                        (0..self.n_agent_actions)
                            .map(|a| strat[a] * q.get(s, a, o))
                            .sum::<f64>()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }
}

/// Dense `Q(s, a, o)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    n_states: usize,
    n_agent_actions: usize,
    n_opp_actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn zeros(game: &TabularGame) -> Self {
        QTable {
            n_states: game.n_states,
            n_agent_actions: game.n_agent_actions,
            n_opp_actions: game.n_opp_actions,
            values: vec![0.0; game.n_entries()],
        }
    }

    pub fn from_values(game: &TabularGame, values: Vec<f64>) -> Result<Self> {
        if values.len() != game.n_entries() {
            return Err(Error::Shape(format!(
                "Q table needs {} values, got {}",
                game.n_entries(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("Q table has non-finite entries".into()));
        }
        Ok(QTable {
            n_states: game.n_states,
            n_agent_actions: game.n_agent_actions,
            n_opp_actions: game.n_opp_actions,
            values,
        })
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize, o: usize) -> f64 {
        self.values[(s * self.n_agent_actions + a) * self.n_opp_actions + o]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn state_matrix(&self, s: usize) -> PayoffMatrix {
        let w = self.n_agent_actions * self.n_opp_actions;
        PayoffMatrix::new(
            self.n_agent_actions,
            self.n_opp_actions,
            self.values[s * w..(s + 1) * w].to_vec(),
        )
        .expect("Q table entries are finite")
    }

    pub fn sup_distance(&self, other: &QTable) -> f64 {
        sup_distance(&self.values, &other.values)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable(pub Vec<f64>);

/// One mixed strategy per state over the agent's actions.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    n_actions: usize,
    strategies: Vec<Vec<f64>>,
}

impl PolicyTable {
    pub fn new(n_actions: usize, strategies: Vec<Vec<f64>>) -> Result<Self> {
        for (s, p) in strategies.iter().enumerate() {
            if p.len() != n_actions {
                return Err(Error::Shape(format!(
                    "state {s}: strategy has {} entries, expected {n_actions}",
                    p.len()
                )));
            }
            let sum: f64 = p.iter().sum();
            if p.iter().any(|x| !(*x >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Invalid(format!(
                    "state {s}: not a probability vector (sum {sum})"
                )));
            }
        }
        Ok(PolicyTable {
            n_actions,
            strategies,
        })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        PolicyTable {
            n_actions,
            strategies: vec![vec![1.0 / n_actions as f64; n_actions]; n_states],
        }
    }

    pub fn strategy(&self, s: usize) -> &[f64] {
        &self.strategies[s]
    }

    pub fn strategies(&self) -> &[Vec<f64>] {
        &self.strategies
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_states(&self) -> usize {
        self.strategies.len()
    }
}

pub fn sup_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .fold(0.0, |m, (a, b)| f64::max(m, (a - b).abs()))
}

/// One application of the minimax backup `T*`.
pub fn apply_t_star(game: &TabularGame, q: &QTable) -> Result<QTable> {
    game.check_q(q)?;
    game.require_discounted()?;
    let v = game.minimax_values(q)?;
    Ok(game.backup(&v))
}

/// One application of the fixed-policy backup `T^pi`; the opponent picks the
/// worst pure response at each successor.
pub fn apply_t_pi(game: &TabularGame, q: &QTable, pi: &PolicyTable) -> Result<QTable> {
    game.check_q(q)?;
    game.check_policy(pi)?;
    Ok(game.backup(&game.policy_values(q, pi)))
}

/// `(Q, sweeps)` with `||Q_{i+1} - Q_i||_inf < tol`.
pub fn value_iteration(game: &TabularGame, tol: f64, max_iter: usize) -> Result<(QTable, usize)> {
    value_iteration_from(game, QTable::zeros(game), tol, max_iter)
}

pub fn value_iteration_from(
    game: &TabularGame,
    start: QTable,
    tol: f64,
    max_iter: usize,
) -> Result<(QTable, usize)> {
    game.require_discounted()?;
    let mut q = start;
    let mut residual = f64::INFINITY;
    for i in 1..=max_iter {
        let next = apply_t_star(game, &q)?;
        residual = next.sup_distance(&q);
        q = next;
        if residual < tol {
            return Ok((q, i));
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual,
    })
}

/// Residuals `||Q_{i+1} - Q_i||_inf` of the first `sweeps` value-iteration steps.
pub fn value_iteration_residuals(game: &TabularGame, sweeps: usize) -> Result<Vec<f64>> {
    let mut q = QTable::zeros(game);
    let mut out = Vec::with_capacity(sweeps);
    for _ in 0..sweeps {
        let next = apply_t_star(game, &q)?;
        out.push(next.sup_distance(&q));
        q = next;
    }
    Ok(out)
}

pub fn policy_evaluation(
    game: &TabularGame,
    pi: &PolicyTable,
    tol: f64,
    max_iter: usize,
) -> Result<QTable> {
    policy_evaluation_from(game, pi, QTable::zeros(game), tol, max_iter)
}

fn policy_evaluation_from(
    game: &TabularGame,
    pi: &PolicyTable,
    start: QTable,
    tol: f64,
    max_iter: usize,
) -> Result<QTable> {
    game.require_discounted()?;
    game.check_policy(pi)?;
    let mut q = start;
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let next = game.backup(&game.policy_values(&q, pi));
        residual = next.sup_distance(&q);
        q = next;
        if residual < tol {
            return Ok(q);
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual,
    })
}

/// Evaluates the agent policy `pi` against a fixed pure opponent action per state.
pub fn joint_policy_evaluation(
    game: &TabularGame,
    pi: &PolicyTable,
    opp_actions: &[usize],
    tol: f64,
    max_iter: usize,
) -> Result<QTable> {
    game.require_discounted()?;
    game.check_policy(pi)?;
    if opp_actions.len() != game.n_states || opp_actions.iter().any(|&o| o >= game.n_opp_actions)
    {
        return Err(Error::Shape("opponent action table does not match game".into()));
    }
    let mut q = QTable::zeros(game);
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let v: Vec<f64> = (0..game.n_states)
            .map(|s| {
                if game.terminal[s] {
                    return 0.0;
                }
                (0..game.n_agent_actions)
                    .map(|a| pi.strategies[s][a] * q.get(s, a, opp_actions[s]))
                    .sum()
            })
            .collect();
        let next = game.backup(&v);
        residual = next.sup_distance(&q);
        q = next;
        if residual < tol {
            return Ok(q);
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual,
    })
}

/// Per-state maximin strategy over `Q(s, ., .)`.
pub fn minimax_greedy_policy(game: &TabularGame, q: &QTable) -> Result<PolicyTable> {
    game.check_q(q)?;
    let strategies = (0..game.n_states)
        .into_par_iter()
        .map(|s| {
            solve_maximin(&q.state_matrix(s))
                .map(|sol| sol.strategy)
                .map_err(|e| e.at_state(s as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PolicyTable {
        n_actions: game.n_agent_actions,
        strategies,
    })
}

/// The opponent's maximin strategy per state, i.e. the agent's solution of `-Q(s)^T`.
pub fn opponent_minimax_policy(game: &TabularGame, q: &QTable) -> Result<PolicyTable> {
    game.check_q(q)?;
    let strategies = (0..game.n_states)
        .into_par_iter()
        .map(|s| {
            solve_maximin(&q.state_matrix(s).opponent_view())
                .map(|sol| sol.strategy)
                .map_err(|e| e.at_state(s as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PolicyTable {
        n_actions: game.n_opp_actions,
        strategies,
    })
}

/// Lowest-index pure best response of the opponent to `pi` under `q`, per state.
pub fn opponent_best_responses(game: &TabularGame, q: &QTable, pi: &PolicyTable) -> Result<Vec<usize>> {
    game.check_q(q)?;
    game.check_policy(pi)?;
    (0..game.n_states)
        .map(|s| opponent_best_response(&q.state_matrix(s), &pi.strategies[s]))
        .collect()
}

/// State values `V(s) = maximin Q(s, ., .)`; terminal states are zero.
pub fn state_values(game: &TabularGame, q: &QTable) -> Result<ValueTable> {
    game.check_q(q)?;
    (0..game.n_states)
        .into_par_iter()
        .map(|s| {
            if game.terminal[s] {
                return Ok(0.0);
            }
            solve_maximin(&q.state_matrix(s))
                .map(|sol| sol.value)
                .map_err(|e| e.at_state(s as u64))
        })
        .collect::<Result<Vec<_>>>()
        .map(ValueTable)
}

#[derive(Debug, Clone)]
pub struct PolicyIteration {
    pub q: QTable,
    pub policy: PolicyTable,
    pub outer: usize,
    /// `Q_{pi_i}` for every evaluated policy, in order.
    pub history: Vec<QTable>,
}

/// Hoffman-Karp style policy iteration.
///
/// Starts from the maximin policy of the all-zero Q table, evaluates it
/// against a best-responding opponent, takes the maximin policy of the result
/// and repeats until consecutive evaluations differ by less than `tol`.
pub fn policy_iteration(game: &TabularGame, tol: f64, max_outer: usize) -> Result<PolicyIteration> {
    game.require_discounted()?;
    let mut policy = minimax_greedy_policy(game, &QTable::zeros(game))?;
    let mut q = policy_evaluation(game, &policy, EVAL_TOL, EVAL_MAX_SWEEPS)?;
    let mut history = vec![q.clone()];
    for outer in 2..=max_outer.max(1) {
        let next_policy = minimax_greedy_policy(game, &q)?;
        if same_policy(&policy, &next_policy) {
            return Ok(PolicyIteration {
                q,
                policy,
                outer: outer - 1,
                history,
            });
        }
        let next_q =
            policy_evaluation_from(game, &next_policy, q.clone(), EVAL_TOL, EVAL_MAX_SWEEPS)?;
        let delta = next_q.sup_distance(&q);
        policy = next_policy;
        q = next_q;
        history.push(q.clone());
        if delta < tol {
            return Ok(PolicyIteration {
                q,
                policy,
                outer,
                history,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: max_outer,
        residual: history
            .len()
            .checked_sub(2)
            .map_or(f64::INFINITY, |i| history[i + 1].sup_distance(&history[i])),
    })
}

fn same_policy(a: &PolicyTable, b: &PolicyTable) -> bool {
    a.strategies
        .iter()
        .zip(&b.strategies)
        .all(|(x, y)| sup_distance(x, y) <= 1e-9)
}

/// `||T* Q - Q||_inf`.
pub fn bellman_residual(game: &TabularGame, q: &QTable) -> Result<f64> {
    Ok(apply_t_star(game, q)?.sup_distance(q))
}

/// `residual / (1 - rate)`: distance bound to the fixed point of a contraction.
pub fn bound_fixed_point_distance(residual: f64, rate: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Invalid(format!("contraction rate {rate} outside [0, 1)")));
    }
    Ok(residual / (1.0 - rate))
}

/// `2 residual / (1 - discount)`: loss of the maximin policy of an approximate Q.
pub fn bound_policy_loss(residual: f64, discount: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&discount) {
        return Err(Error::Invalid(format!("discount {discount} outside [0, 1)")));
    }
    Ok(2.0 * residual / (1.0 - discount))
}
