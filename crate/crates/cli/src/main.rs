//! `zsmg`: solve, collect, train, evaluate and reproduce experiments.
//!
//! Exit codes: 0 success, 1 usage or I/O error, 2 numerical non-convergence.

mod domain;
mod preset;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use zsmg::game::{
    bellman_residual, opponent_minimax_policy, policy_iteration, state_values, value_iteration,
    minimax_greedy_policy,
};
use zsmg::harness::{collect_random_games, tournament, CurveRow, TournamentConfig};
use zsmg::linapprox::WeightVector;
use zsmg::lspi::{lspi, LspiOptions, Ridge};
use zsmg::optout::{composed_fixed_point, ExitProblem};
use zsmg::store;
use zsmg::{Error, Result};

use domain::Domain;

#[derive(Parser, Debug)]
#[command(name = "zsmg", version, about = "Zero-sum Markov games: exact solving, LSPI training and evaluation")]
struct Cli {
    /// Worker threads (defaults to all cores); results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve a tabular game exactly.
    Solve(SolveArgs),
    /// Collect a random-play sample corpus.
    Collect(CollectArgs),
    /// Train LSPI weights on a corpus.
    Train(TrainArgs),
    /// Run a tournament between two players.
    Eval(EvalArgs),
    /// Run a predefined experiment end to end.
    Reproduce(ReproduceArgs),
    /// Solve an opt-out game by iterating the composed operator.
    Optout(OptoutArgs),
}

#[derive(Args, Debug, Clone)]
pub struct EnvArgs {
    /// Built-in environment.
    #[arg(long, value_enum)]
    env: Option<EnvKind>,
    #[arg(long, default_value_t = 4)]
    rows: usize,
    #[arg(long, default_value_t = 4)]
    cols: usize,
    /// Discount (default 0.9 for 4x4 soccer, 0.8 for larger boards, 0.95 for flow).
    #[arg(long)]
    gamma: Option<f64>,
    /// Flow-control buffer size.
    #[arg(long, default_value_t = 100)]
    buffer: usize,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnvKind {
    Soccer,
    Flow,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Method {
    Vi,
    Pi,
}

#[derive(Args, Debug)]
struct SolveArgs {
    /// Game file (zsmg-game JSON) instead of a built-in environment.
    #[arg(long, conflicts_with = "env")]
    game: Option<PathBuf>,
    #[command(flatten)]
    env: EnvArgs,
    #[arg(long, value_enum, default_value = "pi")]
    method: Method,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    #[arg(long, default_value_t = 10_000)]
    max_iter: usize,
    /// Solution file to write.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CollectArgs {
    #[command(flatten)]
    env: EnvArgs,
    #[arg(long)]
    games: usize,
    #[arg(long, default_value_t = 1000)]
    max_steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Drop whole episodes from the end until at most this many samples remain.
    #[arg(long)]
    cap: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureKind {
    Basic,
    Extended,
    Poly3,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum)]
    features: FeatureKind,
    /// Discount (defaults to the environment's).
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, default_value_t = 25)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Absolute ridge added to the LSTDQ diagonal (default: 1e-6 of the mean diagonal).
    #[arg(long)]
    ridge: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    env: EnvArgs,
    /// random | exact | exact:FILE | weights:FILE | benchmark:FILE
    #[arg(long)]
    player_a: String,
    #[arg(long)]
    player_b: String,
    #[arg(long, default_value_t = 1000)]
    games: usize,
    #[arg(long, default_value_t = 100)]
    max_steps: usize,
    #[arg(long, default_value_t = 1)]
    repetitions: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Results CSV to append to.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReproduceArgs {
    /// soccer4 | soccer8 | soccer40-transfer | flow
    #[arg(long)]
    preset: String,
    /// JSON object overriding preset fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: $ZSMG_OUT_DIR, else the current directory).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct OptoutArgs {
    /// Opt-out game file (zsmg-optout JSON).
    #[arg(long)]
    game: PathBuf,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, default_value_t = 100_000)]
    max_iter: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: cannot set up {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_non_convergence() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Solve(a) => solve(a),
        Command::Collect(a) => collect(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Reproduce(a) => {
            let out_dir = a
                .out_dir
                .or_else(|| std::env::var_os("ZSMG_OUT_DIR").map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("."));
            let p = preset::load(&a.preset, a.config.as_deref())?;
            preset::run(&p, &out_dir)
        }
        Command::Optout(a) => optout(a),
    }
}

fn solve(a: SolveArgs) -> Result<()> {
    let (game, domain) = match &a.game {
        Some(path) => (store::read_game(path)?, None),
        None => {
            let d = Domain::from_args(&a.env)?;
            (d.exact_game()?, Some(d))
        }
    };
    let (q, iterations, label) = match a.method {
        Method::Vi => {
            let (q, n) = value_iteration(&game, a.tol, a.max_iter)?;
            (q, n, "vi")
        }
        Method::Pi => {
            let r = policy_iteration(&game, a.tol, a.max_iter)?;
            (r.q, r.outer, "pi")
        }
    };
    let residual = bellman_residual(&game, &q)?;
    let agent = minimax_greedy_policy(&game, &q)?;
    let opponent = opponent_minimax_policy(&game, &q)?;
    let values = state_values(&game, &q)?;
    println!("method {label}: {iterations} iterations, Bellman residual {residual:.3e}");
    if let Some(Domain::Flow(_)) = domain {
        println!("router: {}", domain::policy_string(agent.strategies()));
        println!("server: {}", domain::policy_string(opponent.strategies()));
    }
    if let Some(out) = a.out {
        let sol = store::Solution {
            method: label.into(),
            iterations,
            residual,
            discount: game.discount(),
            n_states: game.n_states(),
            n_agent_actions: game.n_agent_actions(),
            n_opp_actions: game.n_opp_actions(),
            values: values.0,
            q: q.values().to_vec(),
            agent_policy: agent.strategies().to_vec(),
            opponent_policy: opponent.strategies().to_vec(),
        };
        store::write_solution(&out, &sol)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn collect(a: CollectArgs) -> Result<()> {
    let d = Domain::from_args(&a.env)?;
    let env = d.environment();
    let corpus = collect_random_games(env.as_ref(), a.games, a.max_steps, a.seed, a.cap)?;
    store::write_corpus(&a.out, &corpus)?;
    println!(
        "collected {} samples from {} games in {}",
        corpus.len(),
        corpus.episodes,
        corpus.env
    );
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let corpus = store::read_corpus(&a.corpus)?;
    let d = Domain::from_id(&corpus.env, a.gamma)?;
    store::validate_corpus(&a.corpus, &corpus, &d.id(), Some(d.n_states()))?;
    let features = d.features(a.features)?;
    let gamma = a.gamma.unwrap_or_else(|| d.discount());
    let opts = LspiOptions {
        max_iter: a.max_iter,
        tol: a.tol,
        ridge: a.ridge.map_or(Ridge::default(), Ridge::Absolute),
        ..LspiOptions::default()
    };
    let result = lspi(&corpus, features.as_ref(), gamma, &opts)?;
    let weights = WeightVector {
        w: result.weights.clone(),
        features: features.id(),
        gamma,
        env: corpus.env.clone(),
    };
    store::write_weights(&a.out, &weights)?;
    println!(
        "trained k = {} on {} samples: {} iterations, {} (last change {:.3e})",
        weights.k(),
        corpus.len(),
        result.iterations(),
        if result.converged { "converged" } else { "iteration cap reached" },
        result.deltas.last().copied().unwrap_or(0.0)
    );
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let d = Domain::from_args(&a.env)?;
    let pa = d.player(&a.player_a)?;
    let pb = d.player(&a.player_b)?;
    let env = d.environment();
    let cfg = TournamentConfig {
        games: a.games,
        max_steps: a.max_steps,
        repetitions: a.repetitions,
        seed: a.seed,
    };
    let r = tournament(env.as_ref(), &pa, &pb, &cfg)?;
    let t = r.total;
    println!(
        "{} games: A wins {}, draws {}, losses {}; total discounted score {:.4}",
        t.games, t.wins, t.draws, t.losses, t.discounted_score
    );
    let score = r.mean_score();
    match score.halfwidth {
        Some(h) => println!("mean discounted score per game {:.4} +/- {:.4} (95%)", score.mean, h),
        None => println!("mean discounted score per game {:.4}", score.mean),
    }
    if let Some(out) = a.out {
        let rows: Vec<CurveRow> = r
            .repetitions
            .iter()
            .enumerate()
            .map(|(i, t)| CurveRow {
                experiment: format!("eval:{}:{}", a.player_a, a.player_b),
                corpus_games: 0,
                repetition: i,
                wins: t.wins,
                draws: t.draws,
                losses: t.losses,
                discounted_score: t.discounted_score,
                ci_halfwidth: score.halfwidth,
            })
            .collect();
        store::append_results(&out, &rows)?;
    }
    Ok(())
}

fn optout(a: OptoutArgs) -> Result<()> {
    let game = store::read_optout(&a.game)?;
    let v = composed_fixed_point(ExitProblem::OptOut(&game), a.tol, a.max_iter)?;
    for (s, x) in v.iter().enumerate() {
        println!("{s}\t{x:.10}");
    }
    if let Some(out) = a.out {
        std::fs::write(&out, serde_json::to_string(&v).map_err(Error::from)? + "\n")
            .map_err(|e| Error::file(&out, e))?;
    }
    Ok(())
}

pub(crate) fn display(p: &Path) -> String {
    p.display().to_string()
}
