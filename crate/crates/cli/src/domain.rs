//! Built-in environments as seen from the command line.

use std::path::Path;
use std::sync::Arc;

use zsmg::env::Environment;
use zsmg::flow::{self, FlowEnv, FlowFeatures, FlowParams};
use zsmg::game::{opponent_minimax_policy, policy_iteration, TabularGame};
use zsmg::harness::Player;
use zsmg::linapprox::FeatureMap;
use zsmg::soccer::{self, SoccerBasis, SoccerConfig, SoccerEnv, SoccerFeatures};
use zsmg::store;
use zsmg::{Error, Result};

use crate::{display, EnvArgs, EnvKind, FeatureKind};

#[derive(Debug, Clone)]
pub enum Domain {
    Soccer(SoccerConfig),
    Flow(FlowParams),
}

fn soccer_default_gamma(rows: usize, cols: usize) -> f64 {
    if rows == 4 && cols == 4 {
        0.9
    } else {
        0.8
    }
}

impl Domain {
    pub fn from_args(a: &EnvArgs) -> Result<Domain> {
        match a.env {
            Some(EnvKind::Soccer) => {
                let gamma = a.gamma.unwrap_or_else(|| soccer_default_gamma(a.rows, a.cols));
                Ok(Domain::Soccer(SoccerConfig::new(a.rows, a.cols, gamma)?))
            }
            Some(EnvKind::Flow) => {
                let p = FlowParams {
                    buffer_size: a.buffer,
                    discount: a.gamma.unwrap_or(FlowParams::default().discount),
                    ..FlowParams::default()
                };
                p.validate()?;
                Ok(Domain::Flow(p))
            }
            None => Err(Error::Invalid("choose an environment with --env soccer|flow".into())),
        }
    }

    /// Recovers the environment from an id such as `soccer-4x4` or `flow-100`.
    pub fn from_id(id: &str, gamma: Option<f64>) -> Result<Domain> {
        if id.starts_with("soccer-") {
            let probe = SoccerConfig::parse_id(id, 0.5)?;
            let g = gamma.unwrap_or_else(|| soccer_default_gamma(probe.rows, probe.cols));
            return Ok(Domain::Soccer(SoccerConfig::parse_id(id, g)?));
        }
        if let Some(b) = id.strip_prefix("flow-") {
            let buffer_size = b
                .parse()
                .map_err(|_| Error::Format(format!("bad flow buffer size in {id}")))?;
            let p = FlowParams {
                buffer_size,
                discount: gamma.unwrap_or(FlowParams::default().discount),
                ..FlowParams::default()
            };
            p.validate()?;
            return Ok(Domain::Flow(p));
        }
        Err(Error::Format(format!("unknown environment id {id}")))
    }

    pub fn id(&self) -> String {
        match self {
            Domain::Soccer(c) => c.id(),
            Domain::Flow(p) => p.id(),
        }
    }

    pub fn discount(&self) -> f64 {
        match self {
            Domain::Soccer(c) => c.discount,
            Domain::Flow(p) => p.discount,
        }
    }

    pub fn n_states(&self) -> u64 {
        match self {
            Domain::Soccer(c) => c.state_count(),
            Domain::Flow(p) => p.n_states() as u64,
        }
    }

    pub fn environment(&self) -> Box<dyn Environment> {
        match self {
            Domain::Soccer(c) => Box::new(SoccerEnv { cfg: *c }),
            Domain::Flow(p) => Box::new(FlowEnv { params: p.clone() }),
        }
    }

    pub fn exact_game(&self) -> Result<TabularGame> {
        match self {
            Domain::Soccer(c) => soccer::exact_model(c, soccer::DEFAULT_STATE_CAP),
            Domain::Flow(p) => flow::exact_model(p),
        }
    }

    pub fn features(&self, kind: FeatureKind) -> Result<Arc<dyn FeatureMap>> {
        match (self, kind) {
            (Domain::Soccer(c), FeatureKind::Basic) => Ok(Arc::new(SoccerFeatures::new(*c, SoccerBasis::Basic))),
            (Domain::Soccer(c), FeatureKind::Extended) => {
                Ok(Arc::new(SoccerFeatures::new(*c, SoccerBasis::Extended)))
            }
            (Domain::Flow(p), FeatureKind::Poly3) => Ok(Arc::new(FlowFeatures::new(p.clone()))),
            (d, k) => Err(Error::Invalid(format!(
                "features {k:?} do not apply to {}",
                d.id()
            ))),
        }
    }

    fn features_by_id(&self, id: &str) -> Result<Arc<dyn FeatureMap>> {
        let kind = match id {
            "soccer-basic" => FeatureKind::Basic,
            "soccer-extended" => FeatureKind::Extended,
            "poly3" => FeatureKind::Poly3,
            other => return Err(Error::Format(format!("unknown feature set {other}"))),
        };
        self.features(kind)
    }

    /// Exact minimax player from policy iteration.
    pub fn exact_player(&self) -> Result<Player> {
        let game = self.exact_game()?;
        let pi = policy_iteration(&game, 1e-9, 10_000)?;
        let opponent = opponent_minimax_policy(&game, &pi.q)?;
        Ok(Player::Exact {
            agent: pi.policy,
            opponent,
        })
    }

    /// Learned player from a weights file; the features follow this domain's
    /// geometry, so soccer weights move between board sizes.
    pub fn weights_player(&self, path: &Path) -> Result<Player> {
        let w = store::read_weights(path)?;
        let features = self.features_by_id(&w.features)?;
        Player::approximate(&w, features)
    }

    pub fn player(&self, spec: &str) -> Result<Player> {
        let (kind, arg) = spec.split_once(':').unwrap_or((spec, ""));
        match (kind, arg) {
            ("random", "") => Ok(Player::Random),
            ("exact", "") => self.exact_player(),
            ("exact", file) => {
                let sol = store::read_solution(Path::new(file))?;
                if sol.n_states as u64 != self.n_states() {
                    return Err(Error::Shape(format!(
                        "{file} solves a game with {} states, {} has {}",
                        sol.n_states,
                        self.id(),
                        self.n_states()
                    )));
                }
                Ok(Player::Exact {
                    agent: sol.agent_table()?,
                    opponent: sol.opponent_table()?,
                })
            }
            ("weights" | "benchmark", file) if !file.is_empty() => self.weights_player(Path::new(file)),
            _ => {
                let path = Path::new(spec);
                if path.exists() {
                    return self.weights_player(path);
                }
                Err(Error::Invalid(format!(
                    "unknown player `{spec}` (random, exact, exact:FILE, weights:FILE, benchmark:FILE); {} not found",
                    display(path)
                )))
            }
        }
    }
}

/// One character per state: `H` or `L` for pure high/low, `*` when mixed.
pub fn policy_string(strategies: &[Vec<f64>]) -> String {
    strategies
        .iter()
        .map(|s| {
            if s[flow::HIGH] > 1.0 - 1e-9 {
                'H'
            } else if s[flow::LOW] > 1.0 - 1e-9 {
                'L'
            } else {
                '*'
            }
        })
        .collect()
}
