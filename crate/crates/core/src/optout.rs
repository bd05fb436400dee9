//! Optimal stopping and its two-player generalization, the opt-out game.
//!
//! Both live on an uncontrolled Markov chain. A value function is improved by
//! the continuation backup `T_c V = R_c + gamma P V` followed by an exit
//! operator `T_h`: a pointwise max with the stopping reward, or, for the
//! opt-out game, the per-state matrix game
//!
//! ```text
//! M_s[a, o] = P_h(s,a,o) R_h(s,a,o) + (1 - P_h(s,a,o)) V(s)
//! ```
//!
//! Both exit operators are pointwise non-expansive, so the projected iteration
//! `Pi_rho T_h T_c` is a contraction in the stationary `rho`-norm.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linapprox::{phi_times, project_weighted, weighted_norm, MarkovChain};
use crate::lp::{solve_maximin, PayoffMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct StoppingProblem {
    pub chain: MarkovChain,
    pub stop_reward: Vec<f64>,
}

impl StoppingProblem {
    pub fn new(chain: MarkovChain, stop_reward: Vec<f64>) -> Result<Self> {
        if stop_reward.len() != chain.n_states() {
            return Err(Error::Shape("stop reward length differs from chain".into()));
        }
        if stop_reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::Invalid("stop reward is not finite".into()));
        }
        Ok(StoppingProblem { chain, stop_reward })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptOutGame {
    chain: MarkovChain,
    n_agent_actions: usize,
    n_opp_actions: usize,
    terminate_prob: Vec<f64>,
    exit_reward: Vec<f64>,
}

impl OptOutGame {
    /// `terminate_prob` and `exit_reward` are indexed by `(s * |A| + a) * |O| + o`.
    pub fn new(
        chain: MarkovChain,
        n_agent_actions: usize,
        n_opp_actions: usize,
        terminate_prob: Vec<f64>,
        exit_reward: Vec<f64>,
    ) -> Result<Self> {
        let n = chain.n_states() * n_agent_actions * n_opp_actions;
        if n_agent_actions == 0 || n_opp_actions == 0 {
            return Err(Error::Invalid("opt-out game needs at least one action per player".into()));
        }
        if terminate_prob.len() != n || exit_reward.len() != n {
            return Err(Error::Shape(format!(
                "expected {n} exit entries, got {} probabilities and {} rewards",
                terminate_prob.len(),
                exit_reward.len()
            )));
        }
        if let Some(i) = terminate_prob.iter().position(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Invalid(format!(
                "termination probability {} at entry {i} outside [0, 1]",
                terminate_prob[i]
            )));
        }
        if exit_reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::Invalid("exit reward is not finite".into()));
        }
        Ok(OptOutGame {
            chain,
            n_agent_actions,
            n_opp_actions,
            terminate_prob,
            exit_reward,
        })
    }

    pub fn chain(&self) -> &MarkovChain {
        &self.chain
    }

    pub fn n_agent_actions(&self) -> usize {
        self.n_agent_actions
    }

    pub fn n_opp_actions(&self) -> usize {
        self.n_opp_actions
    }

    pub fn terminate_prob(&self) -> &[f64] {
        &self.terminate_prob
    }

    pub fn exit_reward(&self) -> &[f64] {
        &self.exit_reward
    }

    /// The exit matrix at state `s` given continuation value `v_s`.
    pub fn state_matrix(&self, s: usize, v_s: f64) -> PayoffMatrix {
        let w = self.n_agent_actions * self.n_opp_actions;
        let data = (s * w..(s + 1) * w)
            .map(|i| {
                let p = self.terminate_prob[i];
                p * self.exit_reward[i] + (1.0 - p) * v_s
            })
            .collect();
        PayoffMatrix::new(self.n_agent_actions, self.n_opp_actions, data)
            .expect("exit matrix entries are finite")
    }
}

pub fn apply_continue(chain: &MarkovChain, v: &[f64]) -> Vec<f64> {
    chain.apply_continue(v)
}

/// `max(V(s), R_h(s))` per state.
pub fn apply_stop(problem: &StoppingProblem, v: &[f64]) -> Vec<f64> {
    v.iter()
        .zip(&problem.stop_reward)
        .map(|(x, r)| x.max(*r))
        .collect()
}

/// Per-state maximin value of the exit matrix built from `v`.
pub fn apply_optout(game: &OptOutGame, v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != game.chain.n_states() {
        return Err(Error::Shape(format!(
            "value has {} entries for {} states",
            v.len(),
            game.chain.n_states()
        )));
    }
    (0..v.len())
        .into_par_iter()
        .map(|s| {
            solve_maximin(&game.state_matrix(s, v[s]))
                .map(|sol| sol.value)
                .map_err(|e| e.at_state(s as u64))
        })
        .collect()
}

/// Either exit structure over a chain.
#[derive(Debug, Clone, Copy)]
pub enum ExitProblem<'a> {
    Stopping(&'a StoppingProblem),
    OptOut(&'a OptOutGame),
}

impl ExitProblem<'_> {
    pub fn chain(&self) -> &MarkovChain {
        match self {
            ExitProblem::Stopping(p) => &p.chain,
            ExitProblem::OptOut(g) => &g.chain,
        }
    }

    pub fn apply_exit(&self, v: &[f64]) -> Result<Vec<f64>> {
        match self {
            ExitProblem::Stopping(p) => Ok(apply_stop(p, v)),
            ExitProblem::OptOut(g) => apply_optout(g, v),
        }
    }

    /// `T_h T_c V`.
    pub fn apply_composed(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.apply_exit(&self.chain().apply_continue(v))
    }
}

#[derive(Debug, Clone)]
pub struct ProjectedIteration {
    pub weights: Vec<f64>,
    /// `||Phi w_{t+1} - Phi w_t||_rho` per iteration.
    pub trace: Vec<f64>,
}

/// `w_{t+1} = Pi_rho T_h T_c Phi w_t` until successive iterates differ by less
/// than `tol` in the rho-norm.
pub fn projected_value_iteration(
    problem: ExitProblem<'_>,
    phi: &DMatrix<f64>,
    rho: &[f64],
    tol: f64,
    max_iter: usize,
    init: Option<&[f64]>,
) -> Result<ProjectedIteration> {
    let n = problem.chain().n_states();
    if phi.nrows() != n || rho.len() != n {
        return Err(Error::Shape(format!(
            "basis has {} rows and rho {} entries for {n} states",
            phi.nrows(),
            rho.len()
        )));
    }
    let mut w = match init {
        Some(w0) if w0.len() == phi.ncols() => w0.to_vec(),
        Some(w0) => {
            return Err(Error::Shape(format!(
                "initial weights have {} entries for {} basis functions",
                w0.len(),
                phi.ncols()
            )))
        }
        None => vec![0.0; phi.ncols()],
    };
    let mut v = phi_times(phi, &w);
    let mut trace = Vec::new();
    for _ in 0..max_iter {
        let target = problem.apply_composed(&v)?;
        let next_w = project_weighted(phi, rho, &target, None)?;
        let next_v = phi_times(phi, &next_w);
        let diff: Vec<f64> = next_v.iter().zip(&v).map(|(a, b)| a - b).collect();
        let step = weighted_norm(&diff, rho);
        trace.push(step);
        w = next_w;
        v = next_v;
        if step < tol {
            return Ok(ProjectedIteration { weights: w, trace });
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual: trace.last().copied().unwrap_or(f64::INFINITY),
    })
}

/// Fixed point of `T_h T_c` on the full state space (no approximation).
pub fn composed_fixed_point(problem: ExitProblem<'_>, tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let mut v = vec![0.0; problem.chain().n_states()];
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let next = problem.apply_composed(&v)?;
        residual = next
            .iter()
            .zip(&v)
            .fold(0.0, |m, (a, b)| f64::max(m, (a - b).abs()));
        v = next;
        if residual < tol {
            return Ok(v);
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual,
    })
}

/// Floating-point allowance on top of the exact pointwise inequality; covers
/// LP round-off only.
pub const NONEXPANSION_SLACK: f64 = 1e-9;

/// Returns `(max_s |T_h V1(s) - T_h V2(s)|, max_s |V1(s) - V2(s)|)` after
/// checking `|T_h V1(s) - T_h V2(s)| <= |V1(s) - V2(s)|` at every state.
pub fn check_pointwise_nonexpansion(game: &OptOutGame, v1: &[f64], v2: &[f64]) -> Result<(f64, f64)> {
    let out1 = apply_optout(game, v1)?;
    let out2 = apply_optout(game, v2)?;
    let mut out_gap: f64 = 0.0;
    let mut in_gap: f64 = 0.0;
    for s in 0..v1.len() {
        let din = (v1[s] - v2[s]).abs();
        let dout = (out1[s] - out2[s]).abs();
        if dout > din + NONEXPANSION_SLACK {
            return Err(Error::BoundViolated(format!(
                "state {s}: output gap {dout} exceeds input gap {din}"
            )));
        }
        out_gap = out_gap.max(dout);
        in_gap = in_gap.max(din);
    }
    Ok((out_gap, in_gap))
}
