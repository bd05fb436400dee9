//! Fixed experiment protocols for `zsmg reproduce`.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use zsmg::flow::{FlowEnv, FlowFeatures, FlowParams};
use zsmg::game::{opponent_minimax_policy, policy_iteration};
use zsmg::harness::{
    build_benchmark_player, derived_seed, learning_curve, policy_agreement, summarize_curve,
    train_weights, transfer_curve, CurvePoint, CurveProtocol, CurveRow, MeanCi, Player, Seat,
};
use zsmg::linapprox::FeatureMap;
use zsmg::lspi::LspiOptions;
use zsmg::soccer::{SoccerBasis, SoccerConfig, SoccerEnv, SoccerFeatures};
use zsmg::store;
use zsmg::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preset {
    pub name: String,
    /// `soccer` or `flow`.
    pub env: String,
    /// Training board (soccer).
    pub rows: usize,
    pub cols: usize,
    /// Evaluation board when it differs from the training board.
    pub eval_rows: Option<usize>,
    pub eval_cols: Option<usize>,
    pub gamma: f64,
    /// `basic`, `extended` or `poly3`.
    pub features: String,
    pub corpus_sizes: Vec<usize>,
    pub repetitions: usize,
    pub episode_steps: usize,
    pub sample_cap: Option<usize>,
    pub tournament_games: usize,
    pub draw_steps: usize,
    /// `exact` or `benchmark`.
    pub opponent: String,
    pub lspi_max_iter: usize,
    pub lspi_tol: f64,
    /// Flow only: episodes per agreement check with the optimal policies.
    pub agreement_episodes: usize,
    pub seed: u64,
}

fn soccer_grid(step: usize, max: usize) -> Vec<usize> {
    (0..=max).step_by(step).collect()
}

pub fn builtin(name: &str) -> Option<Preset> {
    let base = Preset {
        name: name.into(),
        env: "soccer".into(),
        rows: 4,
        cols: 4,
        eval_rows: None,
        eval_cols: None,
        gamma: 0.9,
        features: "basic".into(),
        corpus_sizes: soccer_grid(50, 500),
        repetitions: 20,
        episode_steps: 1000,
        sample_cap: Some(40_000),
        tournament_games: 1000,
        draw_steps: 100,
        opponent: "exact".into(),
        lspi_max_iter: 25,
        lspi_tol: 1e-4,
        agreement_episodes: 0,
        seed: 2003,
    };
    match name {
        "soccer4" => Some(base),
        "soccer8" => Some(Preset {
            rows: 8,
            cols: 8,
            gamma: 0.8,
            features: "extended".into(),
            corpus_sizes: soccer_grid(500, 2000),
            sample_cap: None,
            draw_steps: 300,
            opponent: "benchmark".into(),
            ..base
        }),
        "soccer40-transfer" => Some(Preset {
            rows: 8,
            cols: 8,
            eval_rows: Some(40),
            eval_cols: Some(40),
            gamma: 0.8,
            features: "extended".into(),
            corpus_sizes: soccer_grid(500, 2000),
            sample_cap: None,
            draw_steps: 300,
            opponent: "benchmark".into(),
            ..base
        }),
        "flow" => Some(Preset {
            env: "flow".into(),
            rows: 0,
            cols: 0,
            gamma: 0.95,
            features: "poly3".into(),
            corpus_sizes: vec![0, 1, 5, 100],
            episode_steps: 100,
            sample_cap: None,
            tournament_games: 100,
            draw_steps: 200,
            agreement_episodes: 100,
            ..base
        }),
        _ => None,
    }
}

/// A built-in preset with the fields of an optional JSON object replacing
/// its own.
pub fn load(name: &str, config: Option<&Path>) -> Result<Preset> {
    let preset = builtin(name).ok_or_else(|| {
        Error::Invalid(format!(
            "unknown preset `{name}` (soccer4, soccer8, soccer40-transfer, flow)"
        ))
    })?;
    let Some(path) = config else {
        return Ok(preset);
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    let overrides: Value = serde_json::from_str(&text)?;
    let Value::Object(fields) = overrides else {
        return Err(Error::Format(format!("{}: expected a JSON object", path.display())));
    };
    let mut merged = serde_json::to_value(&preset)?;
    if let Value::Object(m) = &mut merged {
        m.extend(fields);
    }
    serde_json::from_value(merged).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

impl Preset {
    fn protocol(&self, experiment: &str, seat: Seat) -> CurveProtocol {
        CurveProtocol {
            experiment: experiment.into(),
            corpus_sizes: self.corpus_sizes.clone(),
            repetitions: self.repetitions,
            episode_steps: self.episode_steps,
            sample_cap: self.sample_cap,
            tournament_games: self.tournament_games,
            draw_steps: self.draw_steps,
            lspi: self.lspi_options(),
            seed: self.seed,
            learner_seat: seat,
        }
    }

    fn lspi_options(&self) -> LspiOptions {
        LspiOptions {
            max_iter: self.lspi_max_iter,
            tol: self.lspi_tol,
            ..LspiOptions::default()
        }
    }

    fn basis(&self) -> Result<SoccerBasis> {
        match self.features.as_str() {
            "basic" => Ok(SoccerBasis::Basic),
            "extended" => Ok(SoccerBasis::Extended),
            other => Err(Error::Invalid(format!("soccer presets need basic or extended features, not {other}"))),
        }
    }
}

#[derive(Debug, Serialize)]
struct PointSummary {
    corpus_games: usize,
    win_rate: f64,
    win_rate_ci: Option<f64>,
    loss_rate: f64,
    loss_rate_ci: Option<f64>,
    win_draw_rate: f64,
    win_draw_rate_ci: Option<f64>,
    mean_score: f64,
    mean_score_ci: Option<f64>,
}

impl From<&CurvePoint> for PointSummary {
    fn from(p: &CurvePoint) -> Self {
        PointSummary {
            corpus_games: p.corpus_games,
            win_rate: p.win_rate.mean,
            win_rate_ci: p.win_rate.halfwidth,
            loss_rate: p.loss_rate.mean,
            loss_rate_ci: p.loss_rate.halfwidth,
            win_draw_rate: p.win_draw_rate.mean,
            win_draw_rate_ci: p.win_draw_rate.halfwidth,
            mean_score: p.mean_score.mean,
            mean_score_ci: p.mean_score.halfwidth,
        }
    }
}

fn fmt_ci(m: &MeanCi) -> String {
    match m.halfwidth {
        Some(h) => format!("{:.3}±{:.3}", m.mean, h),
        None => format!("{:.3}", m.mean),
    }
}

fn print_curve(title: &str, rows: &[CurveRow]) -> Vec<PointSummary> {
    println!("{title}");
    println!("{:>8}  {:>14}  {:>14}  {:>14}  {:>14}", "games", "win", "win+draw", "loss", "score");
    let points = summarize_curve(rows);
    for p in &points {
        println!(
            "{:>8}  {:>14}  {:>14}  {:>14}  {:>14}",
            p.corpus_games,
            fmt_ci(&p.win_rate),
            fmt_ci(&p.win_draw_rate),
            fmt_ci(&p.loss_rate),
            fmt_ci(&p.mean_score)
        );
    }
    points.iter().map(PointSummary::from).collect()
}

pub fn run(p: &Preset, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::file(out_dir, e))?;
    let results = out_dir.join(format!("{}-results.csv", p.name));
    let summary_path = out_dir.join(format!("{}-summary.json", p.name));
    let summary = match p.env.as_str() {
        "soccer" => run_soccer(p, out_dir, &results)?,
        "flow" => run_flow(p, &results)?,
        other => return Err(Error::Invalid(format!("unknown preset environment {other}"))),
    };
    std::fs::write(&summary_path, serde_json::to_string_pretty(&summary)? + "\n")
        .map_err(|e| Error::file(&summary_path, e))?;
    println!("results: {}", results.display());
    println!("summary: {}", summary_path.display());
    Ok(())
}

fn run_soccer(p: &Preset, out_dir: &Path, results: &Path) -> Result<Value> {
    let basis = p.basis()?;
    let train_cfg = SoccerConfig::new(p.rows, p.cols, p.gamma)?;
    let eval_cfg = SoccerConfig::new(
        p.eval_rows.unwrap_or(p.rows),
        p.eval_cols.unwrap_or(p.cols),
        p.gamma,
    )?;
    let train_features: Arc<dyn FeatureMap> = Arc::new(SoccerFeatures::new(train_cfg, basis));
    let eval_features: Arc<dyn FeatureMap> = Arc::new(SoccerFeatures::new(eval_cfg, basis));
    let opponent = match p.opponent.as_str() {
        "exact" => {
            let game = zsmg::soccer::exact_model(&eval_cfg, zsmg::soccer::DEFAULT_STATE_CAP)?;
            let pi = policy_iteration(&game, 1e-9, 10_000)?;
            let opp = opponent_minimax_policy(&game, &pi.q)?;
            println!("exact opponent: policy iteration converged in {} iterations", pi.outer);
            Player::Exact {
                agent: pi.policy,
                opponent: opp,
            }
        }
        "benchmark" => {
            // Built on the training board, where the state space is enumerable.
            let w = build_benchmark_player(&train_cfg, basis, &p.lspi_options())?;
            store::write_weights(&out_dir.join(format!("{}-benchmark-weights.json", p.name)), &w)?;
            println!("benchmark opponent built on {}", train_cfg.id());
            Player::approximate(&w, eval_features.clone())?
        }
        other => return Err(Error::Invalid(format!("unknown preset opponent {other}"))),
    };
    let rows = transfer_curve(
        &SoccerEnv { cfg: train_cfg },
        train_features,
        &SoccerEnv { cfg: eval_cfg },
        eval_features,
        &opponent,
        &p.protocol(&p.name, Seat::Agent),
    )?;
    store::append_results(results, &rows)?;
    let points = print_curve(&format!("{} vs {} on {}", p.name, p.opponent, eval_cfg.id()), &rows);
    Ok(serde_json::json!({ "preset": p, "curve": points }))
}

fn run_flow(p: &Preset, results: &Path) -> Result<Value> {
    let params = FlowParams {
        discount: p.gamma,
        ..FlowParams::default()
    };
    let env = FlowEnv::new(params.clone())?;
    let game = zsmg::flow::exact_model(&params)?;
    let pi = policy_iteration(&game, 1e-9, 10_000)?;
    let server = opponent_minimax_policy(&game, &pi.q)?;
    println!("router optimal: {}", crate::domain::policy_string(pi.policy.strategies()));
    println!("server optimal: {}", crate::domain::policy_string(server.strategies()));
    let optimal = Player::Exact {
        agent: pi.policy.clone(),
        opponent: server.clone(),
    };
    let features: Arc<dyn FeatureMap> = Arc::new(FlowFeatures::new(params.clone()));

    let router_rows = learning_curve(&env, features.clone(), &optimal, &p.protocol("flow-router", Seat::Agent))?;
    store::append_results(results, &router_rows)?;
    let router = print_curve("learned routers vs optimal server (score = -discounted cost)", &router_rows);
    let server_rows = learning_curve(&env, features.clone(), &optimal, &p.protocol("flow-server", Seat::Opponent))?;
    store::append_results(results, &server_rows)?;
    let server_curve = print_curve("learned servers vs optimal router (score = discounted cost)", &server_rows);

    let mut agreement = Vec::new();
    if p.agreement_episodes > 0 {
        let protocol = p.protocol("flow-agreement", Seat::Agent);
        for rep in 0..p.repetitions {
            let seed = derived_seed(p.seed, u64::MAX - 1, rep as u64);
            let w = train_weights(&env, features.as_ref(), p.agreement_episodes, &protocol, seed)?
                .expect("positive episode count");
            let (ra, sa) = policy_agreement(&w, features.as_ref(), &pi.policy, &server)?;
            agreement.push((ra, sa));
        }
        let n = params.n_states() as f64;
        let mean = |f: fn(&(usize, usize)) -> usize| {
            agreement.iter().map(|x| f(x) as f64).sum::<f64>() / agreement.len() as f64 / n
        };
        println!(
            "agreement with optimal over {} runs of {} episodes: router {:.1}%, server {:.1}%",
            agreement.len(),
            p.agreement_episodes,
            100.0 * mean(|x| x.0),
            100.0 * mean(|x| x.1)
        );
    }
    Ok(serde_json::json!({
        "preset": p,
        "router_curve": router,
        "server_curve": server_curve,
        "agreement": agreement,
    }))
}
