//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.
mod common;

use std::sync::Arc;
use std::time::Instant;

use common::*;
use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use zsmg::flow::{self, FlowEnv, FlowFeatures, FlowParams, POLY_DIM};
use zsmg::game::{
    apply_t_star, bellman_residual, minimax_greedy_policy, opponent_minimax_policy, policy_evaluation,
    policy_iteration, value_iteration, PolicyTable, QTable, TabularGame,
};
use zsmg::harness::{
    build_benchmark_player, collect_random_games, learning_curve, policy_agreement, summarize_curve, tournament,
    transfer_curve, CurvePoint, CurveProtocol, MeanCi, Player, Seat, TournamentConfig,
};
use zsmg::linapprox::{pythagorean_bound, stationary_distribution, FeatureMap, MarkovChain, TabularFeatures};
use zsmg::lp::{solve_maximin, PayoffMatrix};
use zsmg::lspi::{lspi, GameSample, LspiOptions, Ridge, SampleCorpus};
use zsmg::optout::{
    check_pointwise_nonexpansion, composed_fixed_point, projected_value_iteration, ExitProblem, OptOutGame,
};
use zsmg::soccer::{
    self, SoccerBasis, SoccerConfig, SoccerEnv, SoccerFeatures, BASIC_BLOCK, BASIC_CASE_SIZES, EXTENDED_BLOCK,
};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// 1 -------------------------------------------------------------------------

fn lp_correctness() -> Check {
    let mut rng = rng(1001);
    let (mut worst_oracle, mut worst_dual): (f64, f64) = (0.0, 0.0);
    for trial in 0..1000 {
        let (r, c) = (rng.gen_range(1..=6), rng.gen_range(1..=6));
        let m = random_matrix(&mut rng, r, c, 10.0);
        let v = solve_maximin(&m).map_err(err)?.value;
        let gap = (v - maximin_oracle(&m)).abs();
        worst_oracle = worst_oracle.max(gap);
        ensure(gap < 1e-6, || format!("trial {trial}: oracle gap {gap:e}"))?;
        let dual = (v + solve_maximin(&m.opponent_view()).map_err(err)?.value).abs();
        worst_dual = worst_dual.max(dual);
        ensure(dual < 1e-7, || format!("trial {trial}: duality gap {dual:e}"))?;
        let eps = 10f64.powi(rng.gen_range(-6..=1));
        let m2 = PayoffMatrix::from_fn(r, c, |a, o| m.get(a, o) + rng.gen_range(-eps..=eps)).map_err(err)?;
        let dist = m.data().iter().zip(m2.data()).fold(0.0f64, |g, (x, y)| g.max((x - y).abs()));
        let dv = (v - solve_maximin(&m2).map_err(err)?.value).abs();
        ensure(dv <= dist + 1e-12, || format!("trial {trial}: value moved {dv:e} for input change {dist:e}"))?;
    }
    Ok(format!("1000 matrices; max oracle gap {worst_oracle:.1e}, max duality gap {worst_dual:.1e}"))
}

// 2 -------------------------------------------------------------------------

fn exact_dp() -> Check {
    let mut rng = rng(2002);
    let mut worst: f64 = 0.0;
    for trial in 0..50 {
        let spec = GameSpec {
            n_states: 5,
            m: 3,
            l: 3,
            gamma: rng.gen_range(0.5..0.95),
            end_prob: 0.1,
        };
        let game = random_game(&mut rng, &spec);
        let (vi, _) = value_iteration(&game, 1e-11, 100_000).map_err(err)?;
        let pi = policy_iteration(&game, 1e-10, 200).map_err(err)?;
        let gap = vi.sup_distance(&pi.q);
        worst = worst.max(gap);
        ensure(gap < 1e-6, || format!("trial {trial}: VI/PI gap {gap:e}"))?;
    }
    let game = random_game(
        &mut rng,
        &GameSpec {
            n_states: 5,
            m: 3,
            l: 3,
            gamma: 0.9,
            end_prob: 0.1,
        },
    );
    let mut rate: f64 = 0.0;
    for _ in 0..1000 {
        let q1 = random_q(&mut rng, &game, 5.0);
        let q2 = random_q(&mut rng, &game, 5.0);
        let out = apply_t_star(&game, &q1)
            .map_err(err)?
            .sup_distance(&apply_t_star(&game, &q2).map_err(err)?);
        rate = rate.max(out / q1.sup_distance(&q2));
    }
    ensure(rate <= 0.9 + 1e-12, || format!("measured contraction rate {rate}"))?;
    let cfg = SoccerConfig::new(4, 4, 0.9).map_err(err)?;
    let soccer = soccer::exact_model(&cfg, soccer::DEFAULT_STATE_CAP).map_err(err)?;
    ensure(soccer.n_entries() == 12_000, || format!("4x4 soccer has {} Q-values", soccer.n_entries()))?;
    let pi = policy_iteration(&soccer, 1e-9, 200).map_err(err)?;
    Ok(format!(
        "max VI/PI gap {worst:.1e}; contraction rate {rate:.4}; 4x4 soccer 12000 Q-values, PI converged in {} iterations",
        pi.outer
    ))
}

// 3 -------------------------------------------------------------------------

fn bound_containment() -> Check {
    let mut rng = rng(3003);
    let (mut r1, mut r2): (f64, f64) = (0.0, 0.0);
    for trial in 0..100 {
        let spec = GameSpec {
            n_states: rng.gen_range(2..=8),
            m: rng.gen_range(1..=4),
            l: rng.gen_range(1..=4),
            gamma: rng.gen_range(0.3..0.95),
            end_prob: 0.1,
        };
        let game = random_game(&mut rng, &spec);
        let exact = policy_iteration(&game, 1e-11, 500).map_err(err)?.q;
        let noise = 10f64.powi(rng.gen_range(-4..=1));
        let q = perturbed(&mut rng, &game, &exact, noise, trial % 2 == 0);
        let eps = bellman_residual(&game, &q).map_err(err)?;
        let b1 = eps / (1.0 - spec.gamma);
        let d1 = exact.sup_distance(&q);
        ensure(d1 <= b1 + 1e-8, || format!("trial {trial}: |Q*-Q| = {d1} > {b1}"))?;
        let pi = minimax_greedy_policy(&game, &q).map_err(err)?;
        let q_pi = policy_evaluation(&game, &pi, 1e-12, 1_000_000).map_err(err)?;
        let d2 = exact.sup_distance(&q_pi);
        ensure(d2 <= 2.0 * b1 + 1e-8, || format!("trial {trial}: |Q*-Q_pi| = {d2} > {}", 2.0 * b1))?;
        r1 = r1.max(d1 / b1);
        r2 = r2.max(d2 / (2.0 * b1));
    }
    Ok(format!("100 games; largest distance/bound ratios {r1:.3} and {r2:.3}"))
}

fn perturbed(rng: &mut ChaCha8Rng, game: &TabularGame, exact: &QTable, noise: f64, fresh: bool) -> QTable {
    if fresh {
        return random_q(rng, game, noise);
    }
    let v = exact.values().iter().map(|x| x + rng.gen_range(-noise..=noise)).collect();
    QTable::from_values(game, v).unwrap()
}

// 4 -------------------------------------------------------------------------

fn exact_frequency_corpus(game: &TabularGame) -> SampleCorpus {
    let mut corpus = SampleCorpus::new("random");
    for s in 0..game.n_states() {
        for a in 0..game.n_agent_actions() {
            for o in 0..game.n_opp_actions() {
                for t in game.transitions(s, a, o) {
                    for _ in 0..(t.prob * 4.0).round() as usize {
                        corpus.samples.push(GameSample {
                            state: s as u64,
                            agent_action: a,
                            opp_action: o,
                            reward: game.reward(s, a, o),
                            next_state: t.next.unwrap_or(0) as u64,
                            terminal: t.next.is_none(),
                        });
                    }
                }
            }
        }
    }
    corpus
}

fn lspi_matches_pi() -> Check {
    let mut rng = rng(4004);
    let mut worst: f64 = 0.0;
    let mut compared = 0;
    for trial in 0..20 {
        let spec = GameSpec {
            n_states: rng.gen_range(2..=20),
            m: rng.gen_range(1..=4),
            l: rng.gen_range(1..=4),
            gamma: rng.gen_range(0.5..0.9),
            end_prob: 0.15,
        };
        let game = random_quarter_game(&mut rng, &spec);
        let features = TabularFeatures {
            n_states: spec.n_states,
            n_agent_actions: spec.m,
            n_opp_actions: spec.l,
        };
        let opts = LspiOptions {
            max_iter: 100,
            tol: 1e-10,
            ridge: Ridge::Absolute(0.0),
            ..LspiOptions::default()
        };
        let learned = lspi(&exact_frequency_corpus(&game), &features, spec.gamma, &opts).map_err(err)?;
        let exact = policy_iteration(&game, 1e-10, 200).map_err(err)?;
        for (t, (w, q)) in learned.history.iter().zip(&exact.history).enumerate() {
            let gap = max_abs_diff(w, q.values());
            worst = worst.max(gap);
            compared += 1;
            ensure(gap < 1e-5, || format!("trial {trial}, iteration {t}: gap {gap:e}"))?;
        }
    }
    Ok(format!("20 games, {compared} iterations compared; max gap {worst:.1e}"))
}

// 5 -------------------------------------------------------------------------

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
    let p = (0..n).map(|_| rng.gen_range(0.0..=1.0)).collect();
    let r = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    OptOutGame::new(chain, m, l, p, r).unwrap()
}

fn opt_out() -> Check {
    let mut rng = rng(5005);
    for _ in 0..10_000 {
        let n = rng.gen_range(1..=4);
        let chain = random_chain(&mut rng, n, 0.9);
        let (m, l) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
        let game = random_optout(&mut rng, chain, m, l);
        let v1: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let v2: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        check_pointwise_nonexpansion(&game, &v1, &v2).map_err(err)?;
    }
    let mut worst_ratio: f64 = 0.0;
    let mut worst_identity: f64 = 0.0;
    for _ in 0..30 {
        let n = rng.gen_range(3..=10);
        let gamma = rng.gen_range(0.5..0.95);
        let chain = random_chain(&mut rng, n, gamma);
        let rho = stationary_distribution(&chain, 1e-14, 100_000).map_err(err)?;
        let game = random_optout(&mut rng, chain, 2, 2);
        let k = rng.gen_range(1..n);
        let phi = DMatrix::from_fn(n, k, |_, _| rng.gen_range(-1.0..1.0));
        let it = projected_value_iteration(ExitProblem::OptOut(&game), &phi, &rho, 1e-11, 10_000, None)
            .map_err(err)?;
        for w in it.trace.windows(2) {
            if w[0] > 1e-9 {
                worst_ratio = worst_ratio.max(w[1] / w[0] / gamma);
            }
        }
        let id = DMatrix::identity(n, n);
        let tab = projected_value_iteration(ExitProblem::OptOut(&game), &id, &rho, 1e-13, 10_000, None)
            .map_err(err)?;
        let exact = composed_fixed_point(ExitProblem::OptOut(&game), 1e-13, 10_000).map_err(err)?;
        worst_identity = worst_identity.max(max_abs_diff(&tab.weights, &exact));
    }
    ensure(worst_ratio <= 1.0 + 1e-6, || format!("step ratio {worst_ratio} times gamma"))?;
    ensure(worst_identity < 1e-8, || format!("identity basis off by {worst_identity:e}"))?;
    for _ in 0..100 {
        let n = rng.gen_range(2..=10);
        let gamma = rng.gen_range(0.1..0.99);
        let chain = random_chain(&mut rng, n, gamma);
        let rho = stationary_distribution(&chain, 1e-14, 100_000).map_err(err)?;
        let k = rng.gen_range(1..=n);
        let phi = DMatrix::from_fn(n, k, |_, _| rng.gen_range(-1.0..1.0));
        pythagorean_bound(&chain, &phi, &rho).map_err(err)?;
    }
    Ok(format!(
        "10000 non-expansion trials; max step ratio {worst_ratio:.4} x gamma; identity basis gap {worst_identity:.1e}; 100 Pythagorean bounds"
    ))
}

// 6 -------------------------------------------------------------------------

fn soccer_protocol(name: &str, sizes: Vec<usize>, reps: usize, games: usize, draw: usize, cap: Option<usize>) -> CurveProtocol {
    CurveProtocol {
        experiment: name.into(),
        corpus_sizes: sizes,
        repetitions: reps,
        episode_steps: 1000,
        sample_cap: cap,
        tournament_games: games,
        draw_steps: draw,
        lspi: LspiOptions::default(),
        seed: 2003,
        learner_seat: Seat::Agent,
    }
}

fn describe(p: &CurvePoint) -> String {
    format!(
        "{} games: win+draw {:.3}±{:.3}, loss {:.3}",
        p.corpus_games,
        p.win_draw_rate.mean,
        p.win_draw_rate.halfwidth.unwrap_or(f64::NAN),
        p.loss_rate.mean
    )
}

fn soccer_reproduction() -> Check {
    // Full 4x4 protocol against the exact player.
    let cfg = SoccerConfig::new(4, 4, 0.9).map_err(err)?;
    let env = SoccerEnv { cfg };
    let game = soccer::exact_model(&cfg, soccer::DEFAULT_STATE_CAP).map_err(err)?;
    let pi = policy_iteration(&game, 1e-9, 200).map_err(err)?;
    let exact = Player::Exact {
        opponent: opponent_minimax_policy(&game, &pi.q).map_err(err)?,
        agent: pi.policy,
    };
    let features: Arc<dyn FeatureMap> = Arc::new(SoccerFeatures::new(cfg, SoccerBasis::Basic));
    let proto = soccer_protocol("soccer4", vec![0, 500], 20, 1000, 100, Some(40_000));
    let rows = learning_curve(&env, features, &exact, &proto).map_err(err)?;
    let summary = summarize_curve(&rows);
    let (random, learned) = (&summary[0], &summary[1]);
    ensure(learned.win_draw_rate.lower() > random.win_draw_rate.upper(), || {
        format!("4x4 intervals overlap: {} vs {}", describe(learned), describe(random))
    })?;
    ensure(learned.loss_rate.mean < random.loss_rate.mean, || {
        format!("4x4 loss rate not lower: {} vs {}", describe(learned), describe(random))
    })?;
    let mut detail = format!("4x4 [{}] vs [{}]", describe(random), describe(learned));

    // Reduced-scale larger boards against the benchmark player.
    let c8 = SoccerConfig::new(8, 8, 0.8).map_err(err)?;
    let bench = build_benchmark_player(&c8, SoccerBasis::Extended, &LspiOptions::default()).map_err(err)?;
    let env8 = SoccerEnv { cfg: c8 };
    let f8: Arc<dyn FeatureMap> = Arc::new(SoccerFeatures::new(c8, SoccerBasis::Extended));
    for (rows_, cols) in [(8, 8), (40, 40)] {
        let target = SoccerConfig::new(rows_, cols, 0.8).map_err(err)?;
        let eval_env = SoccerEnv { cfg: target };
        let eval_f: Arc<dyn FeatureMap> = Arc::new(SoccerFeatures::new(target, SoccerBasis::Extended));
        let opponent = Player::approximate(&bench, eval_f.clone()).map_err(err)?;
        let proto = soccer_protocol(&target.id(), vec![0, 500], 3, 200, 300, None);
        let rows = transfer_curve(&env8, f8.clone(), &eval_env, eval_f, &opponent, &proto).map_err(err)?;
        let s = summarize_curve(&rows);
        ensure(
            s[1].win_draw_rate.mean > s[0].win_draw_rate.mean && s[1].loss_rate.mean < s[0].loss_rate.mean,
            || format!("{}: {} vs {}", target.id(), describe(&s[1]), describe(&s[0])),
        )?;
        detail += &format!("; {}x{} [{}] vs [{}]", rows_, cols, describe(&s[0]), describe(&s[1]));
    }
    Ok(detail)
}

// 7 -------------------------------------------------------------------------

fn mixed_states(p: &PolicyTable) -> usize {
    p.strategies()
        .iter()
        .filter(|s| s.iter().all(|&x| x < 1.0 - 1e-9))
        .count()
}

fn flow_control() -> Check {
    let params = FlowParams::default();
    let game = flow::exact_model(&params).map_err(err)?;
    let pi = policy_iteration(&game, 1e-10, 200).map_err(err)?;
    let router = pi.policy.clone();
    let server = opponent_minimax_policy(&game, &pi.q).map_err(err)?;
    ensure(mixed_states(&router) <= 1 && mixed_states(&server) <= 1, || {
        format!("randomized states: router {}, server {}", mixed_states(&router), mixed_states(&server))
    })?;
    let optimal = Player::Exact {
        agent: router.clone(),
        opponent: server.clone(),
    };
    let env = FlowEnv::new(params.clone()).map_err(err)?;
    let features = FlowFeatures::new(params.clone());
    let eval = TournamentConfig {
        games: 100,
        max_steps: 200,
        repetitions: 20,
        seed: 7007,
    };
    let baseline = tournament(&env, &optimal, &optimal, &eval).map_err(err)?.mean_score();

    // LSPI with the cubic basis is slightly biased near the threshold, so the
    // agreement is averaged over independent corpora.
    let corpora = 10;
    let (mut agree_r, mut agree_s) = (0.0, 0.0);
    let (mut router_scores, mut server_scores) = (Vec::new(), Vec::new());
    for i in 0..corpora {
        let corpus = collect_random_games(&env, 100, 100, 70 + i, None).map_err(err)?;
        let w = lspi(&corpus, &features, params.discount, &LspiOptions::default()).map_err(err)?.weights;
        let (r, s) = policy_agreement(&w, &features, &router, &server).map_err(err)?;
        agree_r += r as f64 / params.n_states() as f64 / corpora as f64;
        agree_s += s as f64 / params.n_states() as f64 / corpora as f64;
        let learned = Player::Approximate {
            weights: w,
            features: Arc::new(features.clone()),
        };
        router_scores.push(tournament(&env, &learned, &optimal, &eval).map_err(err)?.mean_score().mean);
        server_scores.push(tournament(&env, &optimal, &learned, &eval).map_err(err)?.mean_score().mean);
    }
    ensure(agree_r >= 0.95 && agree_s >= 0.95, || {
        format!("agreement router {:.1}%, server {:.1}%", 100.0 * agree_r, 100.0 * agree_s)
    })?;
    let (mr, ms) = (MeanCi::of(&router_scores).mean, MeanCi::of(&server_scores).mean);
    ensure(baseline.contains(mr) && baseline.contains(ms), || {
        format!(
            "learned scores router {mr:.4}, server {ms:.4} outside optimal [{:.4}, {:.4}]",
            baseline.lower(),
            baseline.upper()
        )
    })?;
    Ok(format!(
        "mixed states router {} server {}; agreement router {:.1}% server {:.1}%; discounted reward optimal {:.4}±{:.4}, learned router {mr:.4}, learned server {ms:.4}",
        mixed_states(&router),
        mixed_states(&server),
        100.0 * agree_r,
        100.0 * agree_s,
        baseline.mean,
        baseline.halfwidth.unwrap_or(f64::NAN)
    ))
}

// 8 -------------------------------------------------------------------------

fn feature_counts() -> Check {
    let cfg = SoccerConfig::new(4, 4, 0.9).map_err(err)?;
    let basic = SoccerFeatures::new(cfg, SoccerBasis::Basic).dim();
    let extended = SoccerFeatures::new(cfg, SoccerBasis::Extended).dim();
    let flow = FlowFeatures::new(FlowParams::default()).dim();
    ensure(
        BASIC_CASE_SIZES == [4, 8, 7, 17]
            && BASIC_BLOCK == 36
            && EXTENDED_BLOCK == 56
            && basic == 900
            && extended == 1400
            && flow == 16
            && POLY_DIM == 16,
        || format!("basic {basic}, extended {extended}, flow {flow}"),
    )?;
    Ok(format!("basic 36 x 25 = {basic}, extended 56 x 25 = {extended}, flow {flow}"))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 8] = [
        ("minimax LP", lp_correctness),
        ("exact DP", exact_dp),
        ("residual bounds", bound_containment),
        ("LSPI vs policy iteration", lspi_matches_pi),
        ("opt-out games", opt_out),
        ("soccer learning curves", soccer_reproduction),
        ("flow control", flow_control),
        ("feature counts", feature_counts),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (tag, detail) = match check() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!(
            "{tag} criterion {} ({name}, {:.1}s): {detail}",
            i + 1,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
}
