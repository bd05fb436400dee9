//! Router/server flow control over a single finite buffer.
//!
//! The router (agent) picks a low or high job-arrival probability, the server
//! (opponent) a low or high departure probability. Stage cost is
//! `c(s) + alpha * PA_a + beta * PD_o`; the router minimizes it, so the agent
//! reward is its negation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Environment, SimRng, Step};
use crate::error::{Error, Result};
use crate::game::{TabularGame, Transition};
use crate::linapprox::{FeatureMap, SparseFeatures};

pub const N_ACTIONS: usize = 2;
pub const LOW: usize = 0;
pub const HIGH: usize = 1;
/// Polynomial degree of the per-pair feature block.
pub const POLY_DEGREE: usize = 3;
pub const POLY_DIM: usize = N_ACTIONS * N_ACTIONS * (POLY_DEGREE + 1);

const _: () = assert!(POLY_DIM == 16);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    pub buffer_size: usize,
    pub pa_low: f64,
    pub pa_high: f64,
    pub pd_low: f64,
    pub pd_high: f64,
    /// Holding cost `c(s) = holding_linear * s + holding_quadratic * s^2`.
    pub holding_linear: f64,
    pub holding_quadratic: f64,
    pub alpha: f64,
    pub beta: f64,
    pub discount: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            buffer_size: 100,
            pa_low: 0.2,
            pa_high: 0.9,
            pd_low: 0.1,
            pd_high: 0.8,
            holding_linear: 0.0,
            holding_quadratic: 1e-4,
            alpha: -0.1,
            beta: 1.5,
            discount: 0.95,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(format!("flow parameters: {m}")));
        if self.buffer_size == 0 {
            return bad("buffer size must be positive");
        }
        if !(0.0 < self.pa_low && self.pa_low < self.pa_high && self.pa_high <= 1.0) {
            return bad("need 0 < pa_low < pa_high <= 1");
        }
        if !(0.0 <= self.pd_low && self.pd_low < self.pd_high && self.pd_high < 1.0) {
            return bad("need 0 <= pd_low < pd_high < 1");
        }
        if self.holding_linear < 0.0 || self.holding_quadratic < 0.0 {
            return bad("holding cost must be non-decreasing and convex");
        }
        if self.alpha > 0.0 || self.beta < 0.0 {
            return bad("need alpha <= 0 and beta >= 0");
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return bad("discount outside (0, 1)");
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.buffer_size + 1
    }

    pub fn id(&self) -> String {
        format!("flow-{}", self.buffer_size)
    }

    pub fn holding_cost(&self, s: usize) -> f64 {
        let s = s as f64;
        self.holding_linear * s + self.holding_quadratic * s * s
    }

    pub fn arrival(&self, a: usize) -> f64 {
        if a == LOW {
            self.pa_low
        } else {
            self.pa_high
        }
    }

    pub fn departure(&self, o: usize) -> f64 {
        if o == LOW {
            self.pd_low
        } else {
            self.pd_high
        }
    }
}

fn check_actions(a: usize, o: usize) -> Result<()> {
    if a >= N_ACTIONS || o >= N_ACTIONS {
        return Err(Error::Invalid(format!("flow actions ({a}, {o}) out of range")));
    }
    Ok(())
}

pub fn cost(p: &FlowParams, s: usize, a: usize, o: usize) -> f64 {
    p.holding_cost(s) + p.alpha * p.arrival(a) + p.beta * p.departure(o)
}

/// Arrival and departure are drawn independently; the net change is clamped
/// to the buffer. Returns the next length and the router's reward.
pub fn step(p: &FlowParams, s: usize, a: usize, o: usize, rng: &mut SimRng) -> Result<(usize, f64)> {
    check_actions(a, o)?;
    if s > p.buffer_size {
        return Err(Error::Invalid(format!("buffer length {s} exceeds {}", p.buffer_size)));
    }
    let arrive = rng.gen_bool(p.arrival(a));
    let depart = rng.gen_bool(p.departure(o));
    Ok((next_length(p, s, arrive, depart), -cost(p, s, a, o)))
}

fn next_length(p: &FlowParams, s: usize, arrive: bool, depart: bool) -> usize {
    let n = s as i64 + arrive as i64 - depart as i64;
    n.clamp(0, p.buffer_size as i64) as usize
}

fn model_from_rows(p: &FlowParams, transitions: Vec<Vec<Transition>>) -> Result<TabularGame> {
    let n = p.n_states();
    let mut rewards = Vec::with_capacity(n * N_ACTIONS * N_ACTIONS);
    for s in 0..n {
        for a in 0..N_ACTIONS {
            for o in 0..N_ACTIONS {
                rewards.push(-cost(p, s, a, o));
            }
        }
    }
    TabularGame::new(
        n,
        N_ACTIONS,
        N_ACTIONS,
        transitions,
        rewards,
        p.discount,
        vec![false; n],
    )
}

fn push_mass(row: &mut Vec<Transition>, next: usize, prob: f64) {
    if prob == 0.0 {
        return;
    }
    match row.iter_mut().find(|t| t.next == Some(next)) {
        Some(t) => t.prob += prob,
        None => row.push(Transition::to(next, prob)),
    }
}

/// Exact product-Bernoulli model; each row has at most three successors.
pub fn exact_model(p: &FlowParams) -> Result<TabularGame> {
    p.validate()?;
    let mut transitions = Vec::with_capacity(p.n_states() * N_ACTIONS * N_ACTIONS);
    for s in 0..p.n_states() {
        for a in 0..N_ACTIONS {
            for o in 0..N_ACTIONS {
                let (pa, pd) = (p.arrival(a), p.departure(o));
                let mut row = Vec::with_capacity(3);
                for (arrive, depart, prob) in [
                    (true, false, pa * (1.0 - pd)),
                    (false, true, (1.0 - pa) * pd),
                    (true, true, pa * pd),
                    (false, false, (1.0 - pa) * (1.0 - pd)),
                ] {
                    push_mass(&mut row, next_length(p, s, arrive, depart), prob);
                }
                transitions.push(row);
            }
        }
    }
    model_from_rows(p, transitions)
}

/// Empirical model from `samples_per_q` simulated steps per (s, a, o).
pub fn sampled_model(p: &FlowParams, samples_per_q: usize, rng: &mut SimRng) -> Result<TabularGame> {
    p.validate()?;
    if samples_per_q == 0 {
        return Err(Error::Invalid("samples_per_q must be positive".into()));
    }
    let mut transitions = Vec::with_capacity(p.n_states() * N_ACTIONS * N_ACTIONS);
    for s in 0..p.n_states() {
        for a in 0..N_ACTIONS {
            for o in 0..N_ACTIONS {
                // Successors are s - 1, s, s + 1.
                let mut counts = [0usize; 3];
                for _ in 0..samples_per_q {
                    let (next, _) = step(p, s, a, o, rng)?;
                    counts[next + 1 - s] += 1;
                }
                let mut row = Vec::with_capacity(3);
                let total = samples_per_q as f64;
                for (i, &c) in counts.iter().enumerate() {
                    if c > 0 {
                        row.push(Transition::to(s + i - 1, c as f64 / total));
                    }
                }
                // Keep rows summing to one to within the model's tolerance.
                let sum: f64 = row.iter().map(|t| t.prob).sum();
                if let Some(last) = row.last_mut() {
                    last.prob += 1.0 - sum;
                }
                transitions.push(row);
            }
        }
    }
    model_from_rows(p, transitions)
}

/// Per-pair cubic in the normalized length `x = s / B`:
/// block `(a * 2 + o)` holds `(1, x, x^2, x^3)`.
pub fn features_poly(p: &FlowParams, s: usize, a: usize, o: usize) -> SparseFeatures {
    let x = s as f64 / p.buffer_size as f64;
    let base = (a * N_ACTIONS + o) * (POLY_DEGREE + 1);
    let mut out = Vec::with_capacity(POLY_DEGREE + 1);
    let mut v = 1.0;
    for i in 0..=POLY_DEGREE {
        if v != 0.0 {
            out.push((base + i, v));
        }
        v *= x;
    }
    out
}

#[derive(Debug, Clone)]
pub struct FlowFeatures {
    pub params: FlowParams,
}

impl FlowFeatures {
    pub fn new(params: FlowParams) -> Self {
        let f = FlowFeatures { params };
        assert_eq!(f.dim(), 16);
        f
    }
}

impl FeatureMap for FlowFeatures {
    fn id(&self) -> String {
        "poly3".into()
    }

    fn dim(&self) -> usize {
        POLY_DIM
    }

    fn n_agent_actions(&self) -> usize {
        N_ACTIONS
    }

    fn n_opp_actions(&self) -> usize {
        N_ACTIONS
    }

    fn eval(&self, state: u64, a: usize, o: usize) -> SparseFeatures {
        features_poly(&self.params, state as usize, a, o)
    }
}

#[derive(Debug, Clone)]
pub struct FlowEnv {
    pub params: FlowParams,
}

impl FlowEnv {
    pub fn new(params: FlowParams) -> Result<Self> {
        params.validate()?;
        Ok(FlowEnv { params })
    }
}

impl Environment for FlowEnv {
    fn id(&self) -> String {
        self.params.id()
    }

    fn n_agent_actions(&self) -> usize {
        N_ACTIONS
    }

    fn n_opp_actions(&self) -> usize {
        N_ACTIONS
    }

    fn discount(&self) -> f64 {
        self.params.discount
    }

    fn reset(&self, rng: &mut SimRng) -> u64 {
        rng.gen_range(0..=self.params.buffer_size) as u64
    }

    fn step(&self, state: u64, a: usize, o: usize, rng: &mut SimRng) -> Result<Step> {
        let (next, reward) = step(&self.params, state as usize, a, o, rng)?;
        Ok(Step {
            next: next as u64,
            reward,
            terminal: false,
        })
    }

    fn symmetric_roles(&self) -> bool {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn cost_examples() {
        let p = FlowParams::default();
        assert!((cost(&p, 0, LOW, LOW) - 0.13).abs() < 1e-12);
        assert!((cost(&p, 100, HIGH, HIGH) - 2.11).abs() < 1e-12);
        let q = FlowParams {
            alpha: 0.0,
            beta: 0.0,
            ..p
        };
        assert_eq!(cost(&q, 0, HIGH, LOW), 0.0);
    }

    #[test]
    fn clamps_at_both_ends() {
        let p = FlowParams::default();
        let mut rng = SimRng::seed_from_u64(1);
        for _ in 0..500 {
            let (n, _) = step(&p, 0, LOW, HIGH, &mut rng).unwrap();
            assert!(n <= 1);
            let (n, _) = step(&p, 100, HIGH, LOW, &mut rng).unwrap();
            assert!(n >= 99 && n <= 100);
        }
    }

    #[test]
    fn exact_rows() {
        let p = FlowParams::default();
        let g = exact_model(&p).unwrap();
        assert_eq!(g.n_states(), 101);
        for row in g.transition_rows() {
            assert!(row.len() <= 3);
        }
        let s = 50;
        let up = g
            .transitions(s, HIGH, LOW)
            .iter()
            .find(|t| t.next == Some(s + 1))
            .unwrap()
            .prob;
        assert!((up - 0.9 * 0.9).abs() < 1e-15);
        assert_eq!(g.reward(s, HIGH, LOW), -cost(&p, s, HIGH, LOW));
    }

    #[test]
    fn features() {
        let p = FlowParams::default();
        assert_eq!(FlowFeatures::new(p.clone()).dim(), 16);
        assert_eq!(features_poly(&p, 0, LOW, HIGH), vec![(4, 1.0)]);
        assert_eq!(
            features_poly(&p, 100, HIGH, HIGH),
            vec![(12, 1.0), (13, 1.0), (14, 1.0), (15, 1.0)]
        );
    }

    #[test]
    fn invalid_params_rejected() {
        let p = FlowParams {
            pa_low: 0.95,
            ..FlowParams::default()
        };
        assert!(p.validate().is_err());
        assert!(exact_model(&p).is_err());
    }

    #[test]
    fn sampled_model_is_seeded() {
        let p = FlowParams {
            buffer_size: 5,
            ..FlowParams::default()
        };
        let g1 = sampled_model(&p, 200, &mut SimRng::seed_from_u64(9)).unwrap();
        let g2 = sampled_model(&p, 200, &mut SimRng::seed_from_u64(9)).unwrap();
        assert_eq!(g1.transition_rows(), g2.transition_rows());
    }
}
