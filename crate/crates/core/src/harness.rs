//! Experiment engine: random-play corpora, players, tournaments with
//! confidence intervals, benchmark construction and learning curves.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::env::{derived_rng, Environment, SimRng};
use crate::error::{Error, Result};
use crate::game::PolicyTable;
use crate::linapprox::{FeatureMap, WeightVector};
use crate::lp::solve_maximin;
use crate::lspi::{lspi, state_matrix, GameSample, LspiOptions, SampleCorpus};
use crate::soccer::{self, Action, SoccerBasis, SoccerConfig, SoccerEnv, SoccerFeatures};

/// Which side of the game a player occupies: the agent maximizes the
/// environment reward, the opponent minimizes it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Seat {
    Agent,
    Opponent,
}

#[derive(Clone)]
pub enum Player {
    /// Tabulated minimax strategies for both seats.
    Exact {
        agent: PolicyTable,
        opponent: PolicyTable,
    },
    /// Plays the maximin strategy of `[phi(s, a, o)^T w]`; from the opponent
    /// seat it solves the transposed, negated game.
    Approximate {
        weights: Vec<f64>,
        features: Arc<dyn FeatureMap>,
    },
    Random,
    /// A strategy table for whichever seat the player is given.
    Fixed(PolicyTable),
}

impl std::fmt::Debug for Player {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Player::Exact { .. } => write!(f, "Player::Exact"),
            Player::Approximate { features, .. } => write!(f, "Player::Approximate({})", features.id()),
            Player::Random => write!(f, "Player::Random"),
            Player::Fixed(_) => write!(f, "Player::Fixed"),
        }
    }
}

fn table_strategy(table: &PolicyTable, state: u64, n_actions: usize) -> Result<Vec<f64>> {
    if table.n_actions() != n_actions {
        return Err(Error::Shape(format!(
            "policy table has {} actions, seat needs {n_actions}",
            table.n_actions()
        )));
    }
    let s = usize::try_from(state).ok().filter(|&s| s < table.n_states()).ok_or_else(|| {
        Error::Invalid(format!(
            "state {state} outside a policy table of {} states",
            table.n_states()
        ))
    })?;
    Ok(table.strategy(s).to_vec())
}

impl Player {
    pub fn approximate(weights: &WeightVector, features: Arc<dyn FeatureMap>) -> Result<Player> {
        if weights.k() != features.dim() {
            return Err(Error::Shape(format!(
                "weights have {} entries, features {} need {}",
                weights.k(),
                features.id(),
                features.dim()
            )));
        }
        Ok(Player::Approximate {
            weights: weights.w.clone(),
            features,
        })
    }

    /// Mixed strategy over the seat's actions at `state`.
    pub fn strategy(&self, env: &dyn Environment, state: u64, seat: Seat) -> Result<Vec<f64>> {
        let n = match seat {
            Seat::Agent => env.n_agent_actions(),
            Seat::Opponent => env.n_opp_actions(),
        };
        match self {
            Player::Random => Ok(vec![1.0 / n as f64; n]),
            Player::Fixed(t) => table_strategy(t, state, n),
            Player::Exact { agent, opponent } => match seat {
                Seat::Agent => table_strategy(agent, state, n),
                Seat::Opponent => table_strategy(opponent, state, n),
            },
            Player::Approximate { weights, features } => {
                let m = state_matrix(weights, features.as_ref(), state)?;
                // Every strategy is optimal in a constant game; play uniformly.
                let (lo, hi) = m
                    .data()
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
                if hi - lo <= 1e-12 * (1.0 + m.max_abs()) {
                    return Ok(vec![1.0 / n as f64; n]);
                }
                let m = match seat {
                    Seat::Agent => m,
                    Seat::Opponent => m.opponent_view(),
                };
                Ok(solve_maximin(&m).map_err(|e| e.at_state(state))?.strategy)
            }
        }
    }
}

fn sample_action(strategy: &[f64], rng: &mut SimRng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in strategy.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Round-off: fall back to the last action with positive mass.
    strategy.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Random-play corpus: both players pick uniformly random actions until the
/// game ends or `max_steps` is reached. With `sample_cap`, whole episodes
/// are dropped from the end until the corpus fits.
pub fn collect_random_games(
    env: &dyn Environment,
    n_games: usize,
    max_steps: usize,
    seed: u64,
    sample_cap: Option<usize>,
) -> Result<SampleCorpus> {
    let episodes: Vec<Vec<GameSample>> = (0..n_games)
        .into_par_iter()
        .map(|i| {
            let mut rng = derived_rng(seed, i as u64);
            let mut state = env.reset(&mut rng);
            let mut out = Vec::new();
            for _ in 0..max_steps {
                let a = rng.gen_range(0..env.n_agent_actions());
                let o = rng.gen_range(0..env.n_opp_actions());
                let st = env.step(state, a, o, &mut rng)?;
                out.push(GameSample {
                    state,
                    agent_action: a,
                    opp_action: o,
                    reward: st.reward,
                    next_state: st.next,
                    terminal: st.terminal,
                });
                if st.terminal {
                    break;
                }
                state = st.next;
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut kept = episodes.len();
    if let Some(cap) = sample_cap {
        let mut total: usize = episodes.iter().map(Vec::len).sum();
        while total > cap && kept > 0 {
            kept -= 1;
            total -= episodes[kept].len();
        }
    }
    let mut corpus = SampleCorpus::new(env.id());
    corpus.seed = seed;
    corpus.episodes = kept;
    corpus.max_steps = max_steps;
    corpus.samples = episodes.into_iter().take(kept).flatten().collect();
    Ok(corpus)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    /// The agent seat scored.
    AgentWin,
    OpponentWin,
    Draw,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameRecord {
    pub outcome: Outcome,
    pub steps: usize,
    /// `sum_t gamma^t r_t` from the agent seat's side.
    pub discounted_score: f64,
    /// `(state, agent action, opponent action)` per step.
    pub transcript: Vec<(u64, usize, usize)>,
}

/// One game with `agent` in the maximizing seat. Games that do not end within
/// `max_steps` are draws.
pub fn play_game(
    env: &dyn Environment,
    agent: &Player,
    opponent: &Player,
    max_steps: usize,
    rng: &mut SimRng,
) -> Result<GameRecord> {
    let gamma = env.discount();
    let mut state = env.reset(rng);
    let mut score = 0.0;
    let mut weight = 1.0;
    let mut transcript = Vec::new();
    for t in 0..max_steps {
        let pa = agent.strategy(env, state, Seat::Agent)?;
        let po = opponent.strategy(env, state, Seat::Opponent)?;
        let a = sample_action(&pa, rng);
        let o = sample_action(&po, rng);
        transcript.push((state, a, o));
        let st = env.step(state, a, o, rng)?;
        score += weight * st.reward;
        weight *= gamma;
        if st.terminal {
            let outcome = if st.reward > 0.0 {
                Outcome::AgentWin
            } else if st.reward < 0.0 {
                Outcome::OpponentWin
            } else {
                Outcome::Draw
            };
            return Ok(GameRecord {
                outcome,
                steps: t + 1,
                discounted_score: score,
                transcript,
            });
        }
        state = st.next;
    }
    Ok(GameRecord {
        outcome: Outcome::Draw,
        steps: max_steps,
        discounted_score: score,
        transcript,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TournamentConfig {
    pub games: usize,
    pub max_steps: usize,
    pub repetitions: usize,
    pub seed: u64,
}

/// Tallies for player A over one block of games.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Tally {
    pub games: usize,
    pub wins: usize,
    pub draws: usize,
    pub losses: usize,
    pub discounted_score: f64,
    /// Games in which A held the agent seat.
    pub a_as_agent: usize,
}

impl Tally {
    fn add(&mut self, other: &Tally) {
        self.games += other.games;
        self.wins += other.wins;
        self.draws += other.draws;
        self.losses += other.losses;
        self.discounted_score += other.discounted_score;
        self.a_as_agent += other.a_as_agent;
    }

    /// The same games seen from the other player's side.
    pub fn flipped(&self) -> Tally {
        Tally {
            wins: self.losses,
            losses: self.wins,
            discounted_score: -self.discounted_score,
            a_as_agent: self.games - self.a_as_agent,
            ..*self
        }
    }

    fn rate(&self, count: usize) -> f64 {
        if self.games == 0 {
            0.0
        } else {
            count as f64 / self.games as f64
        }
    }

    pub fn win_rate(&self) -> f64 {
        self.rate(self.wins)
    }

    pub fn loss_rate(&self) -> f64 {
        self.rate(self.losses)
    }

    pub fn win_draw_rate(&self) -> f64 {
        self.rate(self.wins + self.draws)
    }

    pub fn mean_score(&self) -> f64 {
        if self.games == 0 {
            0.0
        } else {
            self.discounted_score / self.games as f64
        }
    }
}

/// Mean with a 95% Student-t half-width; the half-width is absent with fewer
/// than two observations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanCi {
    pub mean: f64,
    pub halfwidth: Option<f64>,
}

impl MeanCi {
    pub fn of(values: &[f64]) -> MeanCi {
        let n = values.len();
        let mean = if n == 0 {
            0.0
        } else {
            values.iter().sum::<f64>() / n as f64
        };
        MeanCi {
            mean,
            halfwidth: ci_halfwidth(values),
        }
    }

    pub fn lower(&self) -> f64 {
        self.mean - self.halfwidth.unwrap_or(0.0)
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.halfwidth.unwrap_or(0.0)
    }

    /// Whether `x` falls inside the interval (a missing half-width means a point).
    pub fn contains(&self, x: f64) -> bool {
        x >= self.lower() && x <= self.upper()
    }
}

pub fn ci_halfwidth(values: &[f64]) -> Option<f64> {
    let n = values.len();
    if n < 2 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64).ok()?.inverse_cdf(0.975);
    Some(t * (var / n as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TournamentResult {
    pub total: Tally,
    pub repetitions: Vec<Tally>,
}

impl TournamentResult {
    fn per_rep(&self, f: impl Fn(&Tally) -> f64) -> MeanCi {
        MeanCi::of(&self.repetitions.iter().map(f).collect::<Vec<_>>())
    }

    pub fn win_rate(&self) -> MeanCi {
        self.per_rep(Tally::win_rate)
    }

    pub fn loss_rate(&self) -> MeanCi {
        self.per_rep(Tally::loss_rate)
    }

    pub fn win_draw_rate(&self) -> MeanCi {
        self.per_rep(Tally::win_draw_rate)
    }

    /// Mean discounted score per game.
    pub fn mean_score(&self) -> MeanCi {
        self.per_rep(Tally::mean_score)
    }
}

/// Single-game tally for player A. For environments with symmetric roles
/// A's seat is drawn at random; otherwise A always holds the agent seat.
fn tournament_game(
    env: &dyn Environment,
    player_a: &Player,
    player_b: &Player,
    max_steps: usize,
    rng: &mut SimRng,
) -> Result<Tally> {
    let a_agent = !env.symmetric_roles() || rng.gen_bool(0.5);
    let rec = if a_agent {
        play_game(env, player_a, player_b, max_steps, rng)?
    } else {
        play_game(env, player_b, player_a, max_steps, rng)?
    };
    let sign = if a_agent { 1.0 } else { -1.0 };
    let mut t = Tally {
        games: 1,
        discounted_score: sign * rec.discounted_score,
        a_as_agent: a_agent as usize,
        ..Tally::default()
    };
    match (rec.outcome, a_agent) {
        (Outcome::Draw, _) => t.draws = 1,
        (Outcome::AgentWin, true) | (Outcome::OpponentWin, false) => t.wins = 1,
        _ => t.losses = 1,
    }
    Ok(t)
}

pub fn tournament(
    env: &dyn Environment,
    player_a: &Player,
    player_b: &Player,
    cfg: &TournamentConfig,
) -> Result<TournamentResult> {
    let games = cfg.games;
    let tallies: Vec<Tally> = (0..games * cfg.repetitions)
        .into_par_iter()
        .map(|i| {
            let mut rng = derived_rng(cfg.seed, i as u64);
            tournament_game(env, player_a, player_b, cfg.max_steps, &mut rng)
        })
        .collect::<Result<_>>()?;
    let mut total = Tally::default();
    let mut repetitions = Vec::with_capacity(cfg.repetitions);
    for chunk in tallies.chunks(games.max(1)).take(cfg.repetitions) {
        let mut rep = Tally::default();
        for t in chunk {
            rep.add(t);
        }
        total.add(&rep);
        repetitions.push(rep);
    }
    repetitions.resize(cfg.repetitions, Tally::default());
    Ok(TournamentResult { total, repetitions })
}

/// Every (state, a, o) of a soccer board under both move orders, once each:
/// the uniformly weighted corpus behind the benchmark player.
pub fn exhaustive_soccer_corpus(cfg: &SoccerConfig, cap: u64) -> Result<SampleCorpus> {
    let states = soccer::enumerate_states(cfg, cap)?;
    let mut corpus = SampleCorpus::new(cfg.id());
    corpus.samples.reserve(states.len() * 2 * soccer::N_ACTIONS * soccer::N_ACTIONS);
    for s in &states {
        let code = soccer::encode(cfg, s);
        for a in Action::ALL {
            for o in Action::ALL {
                for a_first in [true, false] {
                    let out = soccer::step_ordered(cfg, *s, a, o, a_first);
                    corpus.samples.push(GameSample {
                        state: code,
                        agent_action: a as usize,
                        opp_action: o as usize,
                        reward: out.reward,
                        next_state: soccer::encode(cfg, &out.next),
                        terminal: out.terminal,
                    });
                }
            }
        }
    }
    Ok(corpus)
}

/// LSPI on the exhaustive two-ordering corpus.
pub fn build_benchmark_player(
    cfg: &SoccerConfig,
    basis: SoccerBasis,
    opts: &LspiOptions,
) -> Result<WeightVector> {
    let corpus = exhaustive_soccer_corpus(cfg, soccer::DEFAULT_STATE_CAP)?;
    let features = SoccerFeatures::new(*cfg, basis);
    let result = lspi(&corpus, &features, cfg.discount, opts)?;
    Ok(WeightVector {
        w: result.weights,
        features: features.id(),
        gamma: cfg.discount,
        env: cfg.id(),
    })
}

#[derive(Debug, Clone)]
pub struct CurveProtocol {
    pub experiment: String,
    pub corpus_sizes: Vec<usize>,
    pub repetitions: usize,
    /// Step cap for random training episodes.
    pub episode_steps: usize,
    pub sample_cap: Option<usize>,
    pub tournament_games: usize,
    /// Draw rule for evaluation games.
    pub draw_steps: usize,
    pub lspi: LspiOptions,
    pub seed: u64,
    /// Seat the learned player takes; tallies are always from its side.
    pub learner_seat: Seat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub experiment: String,
    pub corpus_games: usize,
    pub repetition: usize,
    pub wins: usize,
    pub draws: usize,
    pub losses: usize,
    pub discounted_score: f64,
    /// Half-width of the 95% interval of the mean per-game score over all
    /// repetitions at this corpus size (repeated on each of its rows).
    pub ci_halfwidth: Option<f64>,
}

/// Trains on random-play corpora of each size and evaluates every learned
/// player against `opponent`. A size of zero is the uniform random player.
pub fn learning_curve(
    env: &dyn Environment,
    features: Arc<dyn FeatureMap>,
    opponent: &Player,
    protocol: &CurveProtocol,
) -> Result<Vec<CurveRow>> {
    transfer_curve(env, features.clone(), env, features, opponent, protocol)
}

/// `learning_curve` with training in one environment and evaluation in
/// another; the weights are carried over to `eval_features` unchanged.
pub fn transfer_curve(
    train_env: &dyn Environment,
    train_features: Arc<dyn FeatureMap>,
    eval_env: &dyn Environment,
    eval_features: Arc<dyn FeatureMap>,
    opponent: &Player,
    protocol: &CurveProtocol,
) -> Result<Vec<CurveRow>> {
    if train_features.dim() != eval_features.dim() {
        return Err(Error::Shape(format!(
            "training features have {} entries, evaluation features {}",
            train_features.dim(),
            eval_features.dim()
        )));
    }
    let mut rows = Vec::new();
    for (si, &size) in protocol.corpus_sizes.iter().enumerate() {
        let mut block = Vec::with_capacity(protocol.repetitions);
        for rep in 0..protocol.repetitions {
            let run_seed = derived_seed(protocol.seed, si as u64, rep as u64);
            let learner = match train_weights(train_env, train_features.as_ref(), size, protocol, run_seed)? {
                None => Player::Random,
                Some(weights) => Player::Approximate {
                    weights,
                    features: eval_features.clone(),
                },
            };
            let tc = TournamentConfig {
                games: protocol.tournament_games,
                max_steps: protocol.draw_steps,
                repetitions: 1,
                // Shared across corpus sizes: common random numbers.
                seed: derived_seed(protocol.seed, u64::MAX, rep as u64),
            };
            let t = match protocol.learner_seat {
                Seat::Agent => tournament(eval_env, &learner, opponent, &tc)?.total,
                Seat::Opponent => tournament(eval_env, opponent, &learner, &tc)?.total.flipped(),
            };
            block.push(CurveRow {
                experiment: protocol.experiment.clone(),
                corpus_games: size,
                repetition: rep,
                wins: t.wins,
                draws: t.draws,
                losses: t.losses,
                discounted_score: t.discounted_score,
                ci_halfwidth: None,
            });
        }
        let means: Vec<f64> = block
            .iter()
            .map(|r| r.discounted_score / protocol.tournament_games.max(1) as f64)
            .collect();
        let hw = ci_halfwidth(&means);
        for r in &mut block {
            r.ci_halfwidth = hw;
        }
        rows.extend(block);
    }
    Ok(rows)
}

/// Seed of repetition `b` at corpus size index `a`.
pub fn derived_seed(seed: u64, a: u64, b: u64) -> u64 {
    derived_rng(seed, a.wrapping_mul(1_000_003).wrapping_add(b)).gen()
}

/// Collects `games` random games and runs LSPI; `None` for zero games.
pub fn train_weights(
    env: &dyn Environment,
    features: &dyn FeatureMap,
    games: usize,
    protocol: &CurveProtocol,
    seed: u64,
) -> Result<Option<Vec<f64>>> {
    if games == 0 {
        return Ok(None);
    }
    let corpus = collect_random_games(env, games, protocol.episode_steps, seed, protocol.sample_cap)?;
    Ok(Some(lspi(&corpus, features, env.discount(), &protocol.lspi)?.weights))
}

/// Summary per corpus size: win, loss and win-or-draw rates with 95% intervals
/// over repetitions.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub corpus_games: usize,
    pub win_rate: MeanCi,
    pub loss_rate: MeanCi,
    pub win_draw_rate: MeanCi,
    pub mean_score: MeanCi,
}

pub fn summarize_curve(rows: &[CurveRow]) -> Vec<CurvePoint> {
    let mut sizes: Vec<usize> = rows.iter().map(|r| r.corpus_games).collect();
    sizes.dedup();
    sizes
        .into_iter()
        .map(|size| {
            let block: Vec<&CurveRow> = rows.iter().filter(|r| r.corpus_games == size).collect();
            let rate = |f: &dyn Fn(&CurveRow) -> usize| {
                MeanCi::of(
                    &block
                        .iter()
                        .map(|r| f(r) as f64 / (r.wins + r.draws + r.losses).max(1) as f64)
                        .collect::<Vec<_>>(),
                )
            };
            CurvePoint {
                corpus_games: size,
                win_rate: rate(&|r| r.wins),
                loss_rate: rate(&|r| r.losses),
                win_draw_rate: rate(&|r| r.wins + r.draws),
                mean_score: MeanCi::of(
                    &block
                        .iter()
                        .map(|r| r.discounted_score / (r.wins + r.draws + r.losses).max(1) as f64)
                        .collect::<Vec<_>>(),
                ),
            }
        })
        .collect()
}

/// States on which a learned player's strategies agree with tabulated ones,
/// per seat. Strategies agree when no action's probability differs by half
/// or more, which for pure strategies means they pick the same action.
pub fn policy_agreement(
    weights: &[f64],
    features: &dyn FeatureMap,
    agent: &PolicyTable,
    opponent: &PolicyTable,
) -> Result<(usize, usize)> {
    let mut counts = (0, 0);
    for s in 0..agent.n_states() {
        let m = state_matrix(weights, features, s as u64)?;
        let pa = solve_maximin(&m)?.strategy;
        let po = solve_maximin(&m.opponent_view())?.strategy;
        let close = |x: &[f64], y: &[f64]| x.iter().zip(y).all(|(a, b)| (a - b).abs() < 0.5);
        counts.0 += close(&pa, agent.strategy(s)) as usize;
        counts.1 += close(&po, opponent.strategy(s)) as usize;
    }
    Ok(counts)
}

/// Evaluates weights learned on one board on another. Soccer features are
/// scaled by the board size, so the weights carry over unchanged.
pub fn cross_grid_transfer(
    weights: &WeightVector,
    basis: SoccerBasis,
    target: &SoccerConfig,
    opponent: &Player,
    cfg: &TournamentConfig,
) -> Result<TournamentResult> {
    let features = Arc::new(SoccerFeatures::new(*target, basis));
    let player = Player::approximate(weights, features)?;
    let env = SoccerEnv { cfg: *target };
    tournament(&env, &player, opponent, cfg)
}
