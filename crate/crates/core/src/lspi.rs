//! Least-squares policy iteration for zero-sum Markov games.
//!
//! Q-values are linear in the features, `Q(s, a, o) = phi(s, a, o)^T w`. One
//! LSPI iteration fixes the policy implied by the current weights (the
//! maximin strategy of the matrix `[phi(s', a', o')^T w]` at every next state
//! in the corpus), builds the LSTDQ system
//!
//! ```text
//! A += phi(s,a,o) (phi(s,a,o) - gamma sum_a' pi(s',a') phi(s',a',o'))^T
//! b += phi(s,a,o) r
//! ```
//!
//! and solves `A w = b`.

use std::collections::{BTreeMap, HashMap};

use faer::linalg::solvers::Solve;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linapprox::{dot, FeatureMap, SparseFeatures};
use crate::lp::{opponent_best_response, solve_maximin, PayoffMatrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GameSample {
    pub state: u64,
    pub agent_action: usize,
    pub opp_action: usize,
    pub reward: f64,
    pub next_state: u64,
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleCorpus {
    pub env: String,
    pub seed: u64,
    pub episodes: usize,
    pub max_steps: usize,
    pub samples: Vec<GameSample>,
}

impl SampleCorpus {
    pub fn new(env: impl Into<String>) -> Self {
        SampleCorpus {
            env: env.into(),
            seed: 0,
            episodes: 0,
            max_steps: 0,
            samples: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Matrix game `[phi(s, a, o)^T w]` at one state.
pub fn state_matrix(w: &[f64], features: &dyn FeatureMap, state: u64) -> Result<PayoffMatrix> {
    let (m, l) = (features.n_agent_actions(), features.n_opp_actions());
    PayoffMatrix::from_fn(m, l, |a, o| dot(&features.eval(state, a, o), w))
        .map_err(|e| e.at_state(state))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatePolicy {
    pub strategy: Vec<f64>,
    pub value: f64,
    /// Lowest-index pure best response of the opponent to `strategy`.
    pub opp_action: usize,
}

/// Maximin strategy, value and opponent best response under the approximate Q.
pub fn policy_from_weights(w: &[f64], features: &dyn FeatureMap, state: u64) -> Result<StatePolicy> {
    let m = state_matrix(w, features, state)?;
    let sol = solve_maximin(&m).map_err(|e| e.at_state(state))?;
    let opp_action = opponent_best_response(&m, &sol.strategy)?;
    Ok(StatePolicy {
        strategy: sol.strategy,
        value: sol.value,
        opp_action,
    })
}

/// Sums duplicate indices and drops exact zeros.
fn compact(mut v: SparseFeatures) -> SparseFeatures {
    v.sort_by_key(|&(i, _)| i);
    let mut out: SparseFeatures = Vec::with_capacity(v.len());
    for (i, x) in v {
        match out.last_mut() {
            Some(last) if last.0 == i => last.1 += x,
            _ => out.push((i, x)),
        }
    }
    out.retain(|&(_, x)| x != 0.0);
    out
}

/// `sum_a' pi(a') phi(s', a', o)` for one opponent action.
fn expected_features(
    features: &dyn FeatureMap,
    state: u64,
    strategy: &[f64],
    o: usize,
) -> SparseFeatures {
    let mut acc = Vec::new();
    for (a, &p) in strategy.iter().enumerate() {
        if p != 0.0 {
            acc.extend(features.eval(state, a, o).into_iter().map(|(i, x)| (i, p * x)));
        }
    }
    compact(acc)
}

/// Dense `A` and `b` of the LSTDQ system.
#[derive(Debug, Clone, PartialEq)]
pub struct LstdAccumulator {
    k: usize,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl LstdAccumulator {
    pub fn new(k: usize) -> Self {
        LstdAccumulator {
            k,
            a: vec![0.0; k * k],
            b: vec![0.0; k],
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn a(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.k + j]
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn trace(&self) -> f64 {
        (0..self.k).map(|i| self.a[i * self.k + i]).sum()
    }

    /// `A += phi (phi - gamma next)^T`, `b += phi r`.
    pub fn add(&mut self, phi: &[(usize, f64)], next: &[(usize, f64)], reward: f64, discount: f64) {
        let mut diff: SparseFeatures = phi.to_vec();
        diff.extend(next.iter().map(|&(j, x)| (j, -discount * x)));
        let diff = compact(diff);
        for &(i, x) in phi {
            let row = &mut self.a[i * self.k..(i + 1) * self.k];
            for &(j, y) in &diff {
                row[j] += x * y;
            }
            self.b[i] += x * reward;
        }
    }

    /// Adds one sample under the policy implied by `policy_weights`, solving
    /// the next-state LP directly.
    pub fn accumulate(
        &mut self,
        sample: &GameSample,
        policy_weights: &[f64],
        features: &dyn FeatureMap,
        discount: f64,
    ) -> Result<()> {
        let phi = features.eval(sample.state, sample.agent_action, sample.opp_action);
        let next = if sample.terminal {
            Vec::new()
        } else {
            let pol = policy_from_weights(policy_weights, features, sample.next_state)?;
            expected_features(features, sample.next_state, &pol.strategy, pol.opp_action)
        };
        self.add(&phi, &next, sample.reward, discount);
        Ok(())
    }

    pub fn merge(&mut self, other: &LstdAccumulator) {
        for (x, y) in self.a.iter_mut().zip(&other.a) {
            *x += y;
        }
        for (x, y) in self.b.iter_mut().zip(&other.b) {
            *x += y;
        }
    }

    /// Solves `(A + ridge I) w = b`.
    pub fn solve(&self, ridge: f64) -> Result<Vec<f64>> {
        let k = self.k;
        let a = faer::Mat::from_fn(k, k, |i, j| self.a[i * k + j] + if i == j { ridge } else { 0.0 });
        let lu = a.partial_piv_lu();
        let u = lu.U();
        let diag_max = (0..k).fold(0.0, |m: f64, i| m.max(u[(i, i)].abs()));
        let diag_min = (0..k).fold(f64::INFINITY, |m: f64, i| m.min(u[(i, i)].abs()));
        let advice = if ridge == 0.0 {
            "; supply a positive ridge"
        } else {
            "; increase the ridge"
        };
        if k > 0 && !(diag_min > 1e-13 * diag_max.max(f64::MIN_POSITIVE)) {
            return Err(Error::Singular(format!(
                "LSTDQ matrix (pivot ratio {:e}){advice}",
                diag_min / diag_max
            )));
        }
        let rhs = faer::Mat::from_fn(k, 1, |i, _| self.b[i]);
        let x = lu.solve(&rhs);
        let w: Vec<f64> = (0..k).map(|i| x[(i, 0)]).collect();
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::Singular(format!("LSTDQ solution not finite{advice}")));
        }
        Ok(w)
    }
}

/// Ridge added to the diagonal of the LSTDQ matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ridge {
    Absolute(f64),
    /// `c * trace(A) / k`.
    Relative(f64),
}

impl Default for Ridge {
    fn default() -> Self {
        Ridge::Relative(1e-6)
    }
}

impl Ridge {
    fn magnitude(self, acc: &LstdAccumulator) -> f64 {
        match self {
            Ridge::Absolute(x) => x,
            Ridge::Relative(c) => c * (acc.trace() / acc.k.max(1) as f64).abs(),
        }
    }
}

/// How the opponent's next action `o'` is chosen when evaluating a policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NextOpponent {
    /// `o'` is the best response computed together with `pi(s')` from the
    /// policy weights; one linear solve per iteration. This evaluates `pi`
    /// against a fixed opponent, not against a best-responding one.
    PolicyWeights,
    /// Starts like `PolicyWeights`, then re-picks `o'` as the best response
    /// to `pi(s')` under the freshly solved weights and re-solves until `o'`
    /// stops changing: policy iteration on the opponent's side, so the
    /// solution approximates `Q_pi` with a minimizing opponent.
    Evaluated,
}

#[derive(Debug, Clone)]
pub struct LspiOptions {
    pub max_iter: usize,
    /// Stop when `||w_{t+1} - w_t||_2 < tol`.
    pub tol: f64,
    pub ridge: Ridge,
    pub next_opponent: NextOpponent,
    /// Cap on opponent re-solves per iteration in `Evaluated` mode.
    pub max_opponent_passes: usize,
    /// Number of corpus slices accumulated independently and summed.
    pub shards: usize,
}

impl Default for LspiOptions {
    fn default() -> Self {
        LspiOptions {
            max_iter: 25,
            tol: 1e-4,
            ridge: Ridge::default(),
            next_opponent: NextOpponent::Evaluated,
            max_opponent_passes: 20,
            shards: 4,
        }
    }
}

/// The policy at one next state, plus the expected next features for each
/// opponent reply.
struct NextState {
    per_opp: Vec<SparseFeatures>,
    opp: usize,
}

/// Corpus-only part of the LSTDQ system, independent of the policy:
/// `A0 = sum phi phi^T`, `b`, and for each distinct next state `s'` the sum
/// of `phi` over the non-terminal samples that lead to it. The policy part is
/// then `A = A0 - gamma sum_{s'} Phi_{s'} f(s')^T`.
struct PreparedCorpus {
    base: LstdAccumulator,
    groups: Vec<(u64, SparseFeatures)>,
}

fn prepare(corpus: &SampleCorpus, features: &dyn FeatureMap, shards: usize) -> PreparedCorpus {
    let k = features.dim();
    let shards = shards.max(1);
    let chunk = corpus.samples.len().div_ceil(shards).max(1);
    let parts: Vec<(LstdAccumulator, BTreeMap<u64, SparseFeatures>)> = corpus
        .samples
        .par_chunks(chunk)
        .map(|slice| {
            let mut acc = LstdAccumulator::new(k);
            let mut groups: BTreeMap<u64, SparseFeatures> = BTreeMap::new();
            for s in slice {
                let phi = features.eval(s.state, s.agent_action, s.opp_action);
                acc.add(&phi, &[], s.reward, 0.0);
                if !s.terminal {
                    groups.entry(s.next_state).or_default().extend_from_slice(&phi);
                }
            }
            (acc, groups)
        })
        .collect();
    let mut base = LstdAccumulator::new(k);
    let mut merged: BTreeMap<u64, SparseFeatures> = BTreeMap::new();
    for (acc, groups) in parts {
        base.merge(&acc);
        for (s, phi) in groups {
            merged.entry(s).or_default().extend(phi);
        }
    }
    PreparedCorpus {
        base,
        groups: merged.into_iter().map(|(s, v)| (s, compact(v))).collect(),
    }
}

impl PreparedCorpus {
    fn next_state_ids(&self) -> Vec<u64> {
        self.groups.iter().map(|(s, _)| *s).collect()
    }

    fn system(&self, next: &HashMap<u64, NextState>, discount: f64) -> LstdAccumulator {
        let mut acc = self.base.clone();
        let k = acc.k;
        for (s, phi) in &self.groups {
            let ns = &next[s];
            let f = &ns.per_opp[ns.opp];
            for &(i, x) in phi {
                let row = &mut acc.a[i * k..(i + 1) * k];
                for &(j, y) in f {
                    row[j] -= discount * x * y;
                }
            }
        }
        acc
    }
}

fn next_states(states: Vec<u64>, w: &[f64], features: &dyn FeatureMap) -> Result<HashMap<u64, NextState>> {
    let l = features.n_opp_actions();
    states
        .into_par_iter()
        .map(|s| {
            let pol = policy_from_weights(w, features, s)?;
            let per_opp = (0..l)
                .map(|o| expected_features(features, s, &pol.strategy, o))
                .collect();
            Ok((
                s,
                NextState {
                    per_opp,
                    opp: pol.opp_action,
                },
            ))
        })
        .collect()
}

/// Weights of the approximate `Q_pi` for the policy implied by `policy_weights`,
/// with `o'` taken from the same weights.
pub fn lstdq_solve(
    corpus: &SampleCorpus,
    policy_weights: &[f64],
    features: &dyn FeatureMap,
    discount: f64,
    ridge: f64,
) -> Result<Vec<f64>> {
    if corpus.is_empty() && ridge <= 0.0 {
        return Err(Error::Invalid("empty corpus needs a positive ridge".into()));
    }
    let prep = prepare(corpus, features, 1);
    let next = next_states(prep.next_state_ids(), policy_weights, features)?;
    prep.system(&next, discount).solve(ridge)
}

#[derive(Debug, Clone)]
pub struct LspiResult {
    pub weights: Vec<f64>,
    /// `||w_{t+1} - w_t||_2` per iteration.
    pub deltas: Vec<f64>,
    /// Weights after each iteration.
    pub history: Vec<Vec<f64>>,
    pub converged: bool,
}

impl LspiResult {
    pub fn iterations(&self) -> usize {
        self.deltas.len()
    }
}

/// One policy-evaluation step: weights of the policy implied by `policy_weights`.
pub fn lspi_step(
    corpus: &SampleCorpus,
    policy_weights: &[f64],
    features: &dyn FeatureMap,
    discount: f64,
    opts: &LspiOptions,
) -> Result<Vec<f64>> {
    let prep = prepare(corpus, features, opts.shards);
    step_prepared(&prep, policy_weights, features, discount, opts)
}

fn step_prepared(
    prep: &PreparedCorpus,
    policy_weights: &[f64],
    features: &dyn FeatureMap,
    discount: f64,
    opts: &LspiOptions,
) -> Result<Vec<f64>> {
    let mut next = next_states(prep.next_state_ids(), policy_weights, features)?;
    let mut passes = 0;
    loop {
        let acc = prep.system(&next, discount);
        let w = acc.solve(opts.ridge.magnitude(&acc))?;
        passes += 1;
        if opts.next_opponent == NextOpponent::PolicyWeights || passes >= opts.max_opponent_passes {
            return Ok(w);
        }
        let mut changed = false;
        for ns in next.values_mut() {
            let vals: Vec<f64> = ns.per_opp.iter().map(|f| dot(f, &w)).collect();
            let current = vals[ns.opp];
            let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
            // Switch only on strict improvement so ties cannot cycle.
            let slack = 1e-10 * current.abs().max(1.0);
            if min < current - slack {
                ns.opp = vals.iter().position(|&v| v <= min + 1e-12 * min.abs().max(1.0)).unwrap_or(0);
                changed = true;
            }
        }
        if !changed {
            return Ok(w);
        }
    }
}

/// Runs LSPI from all-zero weights.
pub fn lspi(
    corpus: &SampleCorpus,
    features: &dyn FeatureMap,
    discount: f64,
    opts: &LspiOptions,
) -> Result<LspiResult> {
    if corpus.is_empty() {
        return Err(Error::Invalid("LSPI needs a nonempty corpus".into()));
    }
    let prep = prepare(corpus, features, opts.shards);
    let mut w = vec![0.0; features.dim()];
    let mut deltas = Vec::new();
    let mut history = Vec::new();
    for t in 0..opts.max_iter {
        let next = step_prepared(&prep, &w, features, discount, opts).map_err(|e| Error::Lspi {
            iteration: t + 1,
            source: Box::new(e),
        })?;
        let delta = next
            .iter()
            .zip(&w)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        deltas.push(delta);
        history.push(next.clone());
        w = next;
        if delta < opts.tol {
            return Ok(LspiResult {
                weights: w,
                deltas,
                history,
                converged: true,
            });
        }
    }
    Ok(LspiResult {
        weights: w,
        deltas,
        history,
        converged: false,
    })
}
