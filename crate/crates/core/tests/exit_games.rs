mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use zsmg::linapprox::{
    fixed_point_weights, phi_times, pythagorean_bound, stationary_distribution, weighted_norm, MarkovChain,
    Weighting,
};
use zsmg::optout::{
    check_pointwise_nonexpansion, composed_fixed_point, projected_value_iteration, ExitProblem, OptOutGame,
    StoppingProblem,
};

fn random_chain(rng: &mut ChaCha8Rng, n: usize, gamma: f64) -> MarkovChain {
    let rows = (0..n)
        .map(|_| {
            let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
            let total: f64 = raw.iter().sum();
            raw.iter().enumerate().map(|(j, x)| (j, x / total)).collect()
        })
        .collect();
    let reward = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    MarkovChain::new(rows, reward, gamma).unwrap()
}

fn random_optout(rng: &mut ChaCha8Rng, chain: MarkovChain, m: usize, l: usize) -> OptOutGame {
    let n = chain.n_states() * m * l;
    let p = (0..n)
        .map(|_| if rng.gen_bool(0.2) { rng.gen_range(0..=1) as f64 } else { rng.gen_range(0.0..=1.0) })
        .collect();
    let r = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    OptOutGame::new(chain, m, l, p, r).unwrap()
}

fn random_basis(rng: &mut ChaCha8Rng, n: usize, k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, k, |_, _| rng.gen_range(-1.0..1.0))
}

/// Stationary distribution as the normalized left null vector of `P - I`.
fn stationary_oracle(chain: &MarkovChain) -> Vec<f64> {
    let n = chain.n_states();
    let p = chain.dense();
    let mut a = p.transpose() - DMatrix::identity(n, n);
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    a.lu().solve(&b).unwrap().as_slice().to_vec()
}

#[test]
fn pointwise_nonexpansion_over_random_trials() {
    let mut rng = rng(51);
    for _ in 0..10_000 {
        let n = rng.gen_range(1..=4);
        let chain = random_chain(&mut rng, n, 0.9);
        let (m, l) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
        let game = random_optout(&mut rng, chain, m, l);
        let scale = 10f64.powi(rng.gen_range(-3..=1));
        let v1: Vec<f64> = (0..n).map(|_| rng.gen_range(-scale..=scale)).collect();
        let v2: Vec<f64> = (0..n).map(|_| rng.gen_range(-scale..=scale)).collect();
        check_pointwise_nonexpansion(&game, &v1, &v2).unwrap();
    }
}

#[test]
fn stationary_distribution_matches_linear_solve() {
    let mut rng = rng(52);
    for _ in 0..50 {
        let n = rng.gen_range(2..=10);
        let chain = random_chain(&mut rng, n, 0.9);
        let rho = stationary_distribution(&chain, 1e-14, 100_000).unwrap();
        assert!(max_abs_diff(&rho, &stationary_oracle(&chain)) < 1e-10);
    }
}

/// Value of the best stopping rule, by trying every set of stopping states.
fn stopping_oracle(problem: &StoppingProblem) -> Vec<f64> {
    let chain = &problem.chain;
    let n = chain.n_states();
    let p = chain.dense();
    let mut best = vec![f64::NEG_INFINITY; n];
    for mask in 0u32..(1 << n) {
        // Stopping states take the stop reward; the others continue one
        // step first and then follow the rule.
        let mut a = DMatrix::identity(n, n);
        let mut b = DVector::zeros(n);
        for s in 0..n {
            if mask & (1 << s) != 0 {
                b[s] = problem.stop_reward[s];
            } else {
                for t in 0..n {
                    a[(s, t)] -= chain.discount() * p[(s, t)];
                }
                b[s] = chain.reward()[s];
            }
        }
        let v = a.lu().solve(&b).unwrap();
        for s in 0..n {
            best[s] = best[s].max(v[s]);
        }
    }
    best
}

#[test]
fn stopping_fixed_point_matches_brute_force() {
    let mut rng = rng(53);
    for _ in 0..30 {
        let n = rng.gen_range(1..=7);
        let chain = random_chain(&mut rng, n, 0.9);
        let stop = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let problem = StoppingProblem::new(chain, stop).unwrap();
        let v = composed_fixed_point(ExitProblem::Stopping(&problem), 1e-13, 100_000).unwrap();
        // `max(G, R + gamma P V)` is the value of the best stopping rule.
        let oracle = stopping_oracle(&problem);
        assert!(max_abs_diff(&v, &oracle) < 1e-9);
    }
}

#[test]
fn opt_out_with_a_sure_exit_action_is_optimal_stopping() {
    let mut rng = rng(54);
    for _ in 0..20 {
        let n = rng.gen_range(1..=6);
        let chain = random_chain(&mut rng, n, 0.85);
        let stop: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        // Action 0 continues, action 1 exits for sure with the stop reward.
        let p: Vec<f64> = (0..n).flat_map(|_| [0.0, 1.0]).collect();
        let r: Vec<f64> = stop.iter().flat_map(|&g| [0.0, g]).collect();
        let game = OptOutGame::new(chain.clone(), 2, 1, p, r).unwrap();
        let problem = StoppingProblem::new(chain, stop).unwrap();
        let a = composed_fixed_point(ExitProblem::OptOut(&game), 1e-13, 100_000).unwrap();
        let b = composed_fixed_point(ExitProblem::Stopping(&problem), 1e-13, 100_000).unwrap();
        assert!(max_abs_diff(&a, &b) < 1e-10);
    }
}

#[test]
fn projected_iteration_contracts_in_the_stationary_norm() {
    let mut rng = rng(55);
    for trial in 0..30 {
        let n = rng.gen_range(3..=10);
        let gamma = rng.gen_range(0.5..0.95);
        let chain = random_chain(&mut rng, n, gamma);
        let rho = stationary_distribution(&chain, 1e-14, 100_000).unwrap();
        let game = random_optout(&mut rng, chain, 2, 2);
        let k = rng.gen_range(1..n);
        let phi = random_basis(&mut rng, n, k);
        let it = projected_value_iteration(ExitProblem::OptOut(&game), &phi, &rho, 1e-11, 10_000, None).unwrap();
        for w in it.trace.windows(2) {
            if w[0] > 1e-9 {
                assert!(w[1] / w[0] <= gamma + 1e-6, "trial {trial}: ratio {}", w[1] / w[0]);
            }
        }
    }
}

#[test]
fn identity_basis_reaches_the_tabular_fixed_point() {
    let mut rng = rng(56);
    for _ in 0..20 {
        let n = rng.gen_range(2..=8);
        let chain = random_chain(&mut rng, n, 0.8);
        let rho = stationary_distribution(&chain, 1e-14, 100_000).unwrap();
        let game = random_optout(&mut rng, chain, 3, 2);
        let phi = DMatrix::identity(n, n);
        let it = projected_value_iteration(ExitProblem::OptOut(&game), &phi, &rho, 1e-13, 10_000, None).unwrap();
        let exact = composed_fixed_point(ExitProblem::OptOut(&game), 1e-13, 10_000).unwrap();
        assert!(max_abs_diff(&it.weights, &exact) < 1e-8);
    }
}

#[test]
fn pythagorean_bound_on_random_chains() {
    let mut rng = rng(57);
    for _ in 0..100 {
        let n = rng.gen_range(2..=10);
        let gamma = rng.gen_range(0.1..0.99);
        let chain = random_chain(&mut rng, n, gamma);
        let rho = stationary_distribution(&chain, 1e-14, 100_000).unwrap();
        let k = rng.gen_range(1..=n);
        let phi = random_basis(&mut rng, n, k);
        let (lhs, rhs) = pythagorean_bound(&chain, &phi, &rho).unwrap();
        assert!(lhs <= rhs + 1e-9);
    }
}

/// The closed form is a fixed point of repeated projected backups.
#[test]
fn closed_form_matches_iterated_projection() {
    let mut rng = rng(58);
    for _ in 0..20 {
        let n = rng.gen_range(3..=8);
        let chain = random_chain(&mut rng, n, 0.7);
        let rho = stationary_distribution(&chain, 1e-14, 100_000).unwrap();
        let phi = random_basis(&mut rng, n, 2);
        let w = fixed_point_weights(&chain, &phi, Weighting::Distribution(&rho)).unwrap();
        // No-exit stopping problem: the exit step never binds.
        let never = StoppingProblem::new(chain.clone(), vec![-1e9; n]).unwrap();
        let it = projected_value_iteration(ExitProblem::Stopping(&never), &phi, &rho, 1e-13, 10_000, None).unwrap();
        let diff: Vec<f64> = phi_times(&phi, &w)
            .iter()
            .zip(phi_times(&phi, &it.weights))
            .map(|(a, b)| a - b)
            .collect();
        assert!(weighted_norm(&diff, &rho) < 1e-9);
    }
}
