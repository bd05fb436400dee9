//! On-disk formats. Every file names its format and version; unknown
//! versions are rejected.
//!
//! * corpus: a JSON header line, then `state,a,o,reward,next_state,terminal`
//!   per sample, rewards with 17 significant digits;
//! * weights, games, opt-out games, solutions: JSON documents;
//! * results: CSV, header written once.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{PolicyTable, QTable, TabularGame, Transition};
use crate::harness::CurveRow;
use crate::linapprox::{MarkovChain, WeightVector};
use crate::lspi::{GameSample, SampleCorpus};
use crate::optout::OptOutGame;

pub const VERSION: u32 = 1;
pub const CORPUS_FORMAT: &str = "zsmg-corpus";
pub const WEIGHTS_FORMAT: &str = "zsmg-weights";
pub const GAME_FORMAT: &str = "zsmg-game";
pub const OPTOUT_FORMAT: &str = "zsmg-optout";
pub const SOLUTION_FORMAT: &str = "zsmg-solution";

fn check_header(path: &Path, format: &str, version: u32, expected: &str) -> Result<()> {
    if format != expected {
        return Err(Error::Format(format!(
            "{}: expected format {expected}, found {format}",
            path.display()
        )));
    }
    if version != VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported {format} version {version} (this build reads version {VERSION})",
            path.display()
        )));
    }
    Ok(())
}

/// Parses JSON, reporting schema violations with the offending field path.
fn from_json<T: DeserializeOwned>(path: &Path, text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        Error::Parse {
            path: path.display().to_string(),
            line: inner.line(),
            msg: format!("at `{field}`: {inner}"),
        }
    })
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::file(path, e))
}

fn write_json<T: Serialize>(path: &Path, doc: &T) -> Result<()> {
    let mut f = BufWriter::new(File::create(path).map_err(|e| Error::file(path, e))?);
    serde_json::to_writer(&mut f, doc)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Corpus

#[derive(Debug, Serialize, Deserialize)]
struct CorpusHeader {
    format: String,
    version: u32,
    env: String,
    seed: u64,
    episodes: usize,
    max_steps: usize,
    samples: usize,
}

fn format_sample(s: &GameSample) -> String {
    format!(
        "{},{},{},{:.16e},{},{}",
        s.state,
        s.agent_action,
        s.opp_action,
        s.reward,
        s.next_state,
        s.terminal as u8
    )
}

fn parse_sample(line: &str) -> std::result::Result<GameSample, String> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != 6 {
        return Err(format!("expected 6 fields, found {}", fields.len()));
    }
    let int = |i: usize, name: &str| {
        fields[i]
            .parse::<u64>()
            .map_err(|_| format!("{name} `{}` is not a nonnegative integer", fields[i]))
    };
    let reward: f64 = fields[3]
        .parse()
        .map_err(|_| format!("reward `{}` is not a number", fields[3]))?;
    if !reward.is_finite() {
        return Err(format!("reward `{}` is not finite", fields[3]));
    }
    let terminal = match fields[5] {
        "0" => false,
        "1" => true,
        other => return Err(format!("terminal flag `{other}` must be 0 or 1")),
    };
    Ok(GameSample {
        state: int(0, "state")?,
        agent_action: int(1, "agent action")? as usize,
        opp_action: int(2, "opponent action")? as usize,
        reward,
        next_state: int(4, "next state")?,
        terminal,
    })
}

pub fn write_corpus(path: &Path, corpus: &SampleCorpus) -> Result<()> {
    let mut f = BufWriter::new(File::create(path).map_err(|e| Error::file(path, e))?);
    let header = CorpusHeader {
        format: CORPUS_FORMAT.into(),
        version: VERSION,
        env: corpus.env.clone(),
        seed: corpus.seed,
        episodes: corpus.episodes,
        max_steps: corpus.max_steps,
        samples: corpus.samples.len(),
    };
    serde_json::to_writer(&mut f, &header)?;
    f.write_all(b"\n")?;
    for s in &corpus.samples {
        writeln!(f, "{}", format_sample(s))?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_corpus(path: &Path) -> Result<SampleCorpus> {
    let display = path.display().to_string();
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: display.clone(),
        line,
        msg,
    };
    let mut lines = BufReader::new(File::open(path).map_err(|e| Error::file(path, e))?).lines();
    let first = lines
        .next()
        .ok_or_else(|| parse_err(1, "missing corpus header".into()))??;
    let header: CorpusHeader = from_json(path, &first)?;
    check_header(path, &header.format, header.version, CORPUS_FORMAT)?;
    let mut samples = Vec::with_capacity(header.samples);
    for (i, line) in lines.enumerate() {
        let line = line?;
        let sample = parse_sample(&line).map_err(|m| parse_err(i + 2, m))?;
        samples.push(sample);
    }
    if samples.len() != header.samples {
        return Err(parse_err(
            samples.len() + 1,
            format!(
                "header promises {} samples, file holds {}",
                header.samples,
                samples.len()
            ),
        ));
    }
    Ok(SampleCorpus {
        env: header.env,
        seed: header.seed,
        episodes: header.episodes,
        max_steps: header.max_steps,
        samples,
    })
}

/// Reads a corpus and checks it was collected in `env_id` with states
/// below `n_states` (when known).
pub fn read_corpus_for(path: &Path, env_id: &str, n_states: Option<u64>) -> Result<SampleCorpus> {
    let corpus = read_corpus(path)?;
    validate_corpus(path, &corpus, env_id, n_states)?;
    Ok(corpus)
}

/// Environment and state-range check for a corpus read from `path`.
pub fn validate_corpus(path: &Path, corpus: &SampleCorpus, env_id: &str, n_states: Option<u64>) -> Result<()> {
    if corpus.env != env_id {
        return Err(Error::Format(format!(
            "{}: corpus was collected in {}, not {env_id}",
            path.display(),
            corpus.env
        )));
    }
    if let Some(n) = n_states {
        if let Some(i) = corpus
            .samples
            .iter()
            .position(|s| s.state >= n || (!s.terminal && s.next_state >= n))
        {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: i + 2,
                msg: format!("state outside the {n} states of {env_id}"),
            });
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Weights

#[derive(Debug, Serialize, Deserialize)]
struct WeightsDoc {
    format: String,
    version: u32,
    env: String,
    features: String,
    gamma: f64,
    k: usize,
    w: Vec<f64>,
}

pub fn write_weights(path: &Path, weights: &WeightVector) -> Result<()> {
    write_json(
        path,
        &WeightsDoc {
            format: WEIGHTS_FORMAT.into(),
            version: VERSION,
            env: weights.env.clone(),
            features: weights.features.clone(),
            gamma: weights.gamma,
            k: weights.k(),
            w: weights.w.clone(),
        },
    )
}

pub fn read_weights(path: &Path) -> Result<WeightVector> {
    let doc: WeightsDoc = from_json(path, &read_text(path)?)?;
    check_header(path, &doc.format, doc.version, WEIGHTS_FORMAT)?;
    if doc.k != doc.w.len() {
        return Err(Error::Format(format!(
            "{}: k = {} but w has {} entries",
            path.display(),
            doc.k,
            doc.w.len()
        )));
    }
    Ok(WeightVector {
        w: doc.w,
        features: doc.features,
        gamma: doc.gamma,
        env: doc.env,
    })
}

// ---------------------------------------------------------------------------
// Games

#[derive(Debug, Serialize, Deserialize)]
struct GameDoc {
    format: String,
    version: u32,
    n_states: usize,
    n_agent_actions: usize,
    n_opp_actions: usize,
    discount: f64,
    terminal: Vec<bool>,
    rewards: Vec<f64>,
    /// Per `(s, a, o)`: `[next, prob]` pairs; `next` is null when the game ends.
    transitions: Vec<Vec<(Option<usize>, f64)>>,
}

pub fn write_game(path: &Path, game: &TabularGame) -> Result<()> {
    write_json(
        path,
        &GameDoc {
            format: GAME_FORMAT.into(),
            version: VERSION,
            n_states: game.n_states(),
            n_agent_actions: game.n_agent_actions(),
            n_opp_actions: game.n_opp_actions(),
            discount: game.discount(),
            terminal: game.terminal_mask().to_vec(),
            rewards: game.rewards().to_vec(),
            transitions: game
                .transition_rows()
                .iter()
                .map(|row| row.iter().map(|t| (t.next, t.prob)).collect())
                .collect(),
        },
    )
}

pub fn read_game(path: &Path) -> Result<TabularGame> {
    let doc: GameDoc = from_json(path, &read_text(path)?)?;
    check_header(path, &doc.format, doc.version, GAME_FORMAT)?;
    let transitions = doc
        .transitions
        .into_iter()
        .map(|row| {
            row.into_iter()
                .map(|(next, prob)| Transition { next, prob })
                .collect()
        })
        .collect();
    TabularGame::new(
        doc.n_states,
        doc.n_agent_actions,
        doc.n_opp_actions,
        transitions,
        doc.rewards,
        doc.discount,
        doc.terminal,
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct OptOutDoc {
    format: String,
    version: u32,
    discount: f64,
    /// Per state: `[next, prob]` pairs of the continuation chain.
    chain: Vec<Vec<(usize, f64)>>,
    /// Per-state continuation reward.
    reward: Vec<f64>,
    n_agent_actions: usize,
    n_opp_actions: usize,
    /// Per `(s, a, o)`.
    terminate_prob: Vec<f64>,
    exit_reward: Vec<f64>,
}

pub fn write_optout(path: &Path, game: &OptOutGame) -> Result<()> {
    let chain = game.chain();
    write_json(
        path,
        &OptOutDoc {
            format: OPTOUT_FORMAT.into(),
            version: VERSION,
            discount: chain.discount(),
            chain: chain.rows().to_vec(),
            reward: chain.reward().to_vec(),
            n_agent_actions: game.n_agent_actions(),
            n_opp_actions: game.n_opp_actions(),
            terminate_prob: game.terminate_prob().to_vec(),
            exit_reward: game.exit_reward().to_vec(),
        },
    )
}

pub fn read_optout(path: &Path) -> Result<OptOutGame> {
    let doc: OptOutDoc = from_json(path, &read_text(path)?)?;
    check_header(path, &doc.format, doc.version, OPTOUT_FORMAT)?;
    let chain = MarkovChain::new(doc.chain, doc.reward, doc.discount)?;
    OptOutGame::new(
        chain,
        doc.n_agent_actions,
        doc.n_opp_actions,
        doc.terminate_prob,
        doc.exit_reward,
    )
}

// ---------------------------------------------------------------------------
// Solutions

/// Exact solution of a tabular game: values, Q-values and both players'
/// minimax strategies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub method: String,
    pub iterations: usize,
    pub residual: f64,
    pub discount: f64,
    pub n_states: usize,
    pub n_agent_actions: usize,
    pub n_opp_actions: usize,
    pub values: Vec<f64>,
    pub q: Vec<f64>,
    pub agent_policy: Vec<Vec<f64>>,
    pub opponent_policy: Vec<Vec<f64>>,
}

impl Solution {
    pub fn agent_table(&self) -> Result<PolicyTable> {
        PolicyTable::new(self.n_agent_actions, self.agent_policy.clone())
    }

    pub fn opponent_table(&self) -> Result<PolicyTable> {
        PolicyTable::new(self.n_opp_actions, self.opponent_policy.clone())
    }

    pub fn q_table(&self, game: &TabularGame) -> Result<QTable> {
        QTable::from_values(game, self.q.clone())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SolutionDoc {
    format: String,
    version: u32,
    #[serde(flatten)]
    solution: Solution,
}

pub fn write_solution(path: &Path, solution: &Solution) -> Result<()> {
    write_json(
        path,
        &SolutionDoc {
            format: SOLUTION_FORMAT.into(),
            version: VERSION,
            solution: solution.clone(),
        },
    )
}

pub fn read_solution(path: &Path) -> Result<Solution> {
    let doc: SolutionDoc = from_json(path, &read_text(path)?)?;
    check_header(path, &doc.format, doc.version, SOLUTION_FORMAT)?;
    let s = doc.solution;
    let n = s.n_states;
    if s.values.len() != n
        || s.q.len() != n * s.n_agent_actions * s.n_opp_actions
        || s.agent_policy.len() != n
        || s.opponent_policy.len() != n
    {
        return Err(Error::Format(format!(
            "{}: solution arrays do not match {n} states",
            path.display()
        )));
    }
    Ok(s)
}

// ---------------------------------------------------------------------------
// Results

/// Appends rows, writing the header only when the file is new or empty.
pub fn append_results(path: &Path, rows: &[CurveRow]) -> Result<()> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::file(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    if fresh && rows.is_empty() {
        w.write_record([
            "experiment",
            "corpus_games",
            "repetition",
            "wins",
            "draws",
            "losses",
            "discounted_score",
            "ci_halfwidth",
        ])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn append_results_row(path: &Path, row: &CurveRow) -> Result<()> {
    append_results(path, std::slice::from_ref(row))
}

pub fn read_results(path: &Path) -> Result<Vec<CurveRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}
