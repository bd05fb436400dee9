//! Grid soccer: two players, one ball, simultaneous moves resolved in coin-flip order.
//!
//! Player A starts in column 0 and attacks the goal beyond column `C - 1`;
//! player B starts in column `C - 1` and attacks the goal beyond column 0.
//! The ball carrier scores by stepping across the opponent's goal line from a
//! goal-zone row. Rewards are from A's side: +1 when A scores, -1 when B does.

use rand::Rng;

use crate::env::{Environment, SimRng, Step};
use crate::error::{Error, Result};
use crate::game::{TabularGame, Transition};
use crate::linapprox::{FeatureMap, SparseFeatures};

pub const N_ACTIONS: usize = 5;
/// Default cap on enumerated states for exact models.
pub const DEFAULT_STATE_CAP: u64 = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(usize)]
pub enum Action {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
    Stand = 4,
}

impl Action {
    pub const ALL: [Action; N_ACTIONS] = [
        Action::Up,
        Action::Down,
        Action::Left,
        Action::Right,
        Action::Stand,
    ];

    pub fn from_index(i: usize) -> Result<Action> {
        Action::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::Invalid(format!("soccer action {i} out of range")))
    }

    fn delta(self) -> (i64, i64) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
            Action::Stand => (0, 0),
        }
    }

    /// Left and right swap under a horizontal reflection of the board.
    pub fn mirrored(self) -> Action {
        match self {
            Action::Left => Action::Right,
            Action::Right => Action::Left,
            other => other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    A,
    B,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::A => Side::B,
            Side::B => Side::A,
        }
    }
}

pub type Cell = (usize, usize);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoccerConfig {
    pub rows: usize,
    pub cols: usize,
    pub discount: f64,
    /// Inclusive goal-zone row range.
    pub goal_top: usize,
    pub goal_bottom: usize,
}

impl SoccerConfig {
    /// Goal zone: the middle two rows for even `rows`, the middle row otherwise.
    pub fn new(rows: usize, cols: usize, discount: f64) -> Result<Self> {
        if rows < 2 || cols < 2 {
            return Err(Error::Invalid(format!("soccer board {rows}x{cols} is too small")));
        }
        if !(discount > 0.0 && discount < 1.0) {
            return Err(Error::Invalid(format!("discount {discount} outside (0, 1)")));
        }
        let (goal_top, goal_bottom) = if rows % 2 == 0 {
            (rows / 2 - 1, rows / 2)
        } else {
            (rows / 2, rows / 2)
        };
        Ok(SoccerConfig {
            rows,
            cols,
            discount,
            goal_top,
            goal_bottom,
        })
    }

    pub fn id(&self) -> String {
        format!("soccer-{}x{}", self.rows, self.cols)
    }

    /// Parses `soccer-RxC`.
    pub fn parse_id(id: &str, discount: f64) -> Result<Self> {
        let dims = id
            .strip_prefix("soccer-")
            .ok_or_else(|| Error::Format(format!("not a soccer environment id: {id}")))?;
        let (r, c) = dims
            .split_once('x')
            .ok_or_else(|| Error::Format(format!("bad soccer dimensions in {id}")))?;
        let parse = |x: &str| {
            x.parse::<usize>()
                .map_err(|_| Error::Format(format!("bad soccer dimensions in {id}")))
        };
        SoccerConfig::new(parse(r)?, parse(c)?, discount)
    }

    fn cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn in_goal_zone(&self, row: usize) -> bool {
        (self.goal_top..=self.goal_bottom).contains(&row)
    }

    /// `R C (R C - 1) 2`.
    pub fn state_count(&self) -> u64 {
        let cells = self.cells() as u64;
        cells * (cells - 1) * 2
    }

    pub fn q_value_count(&self) -> u64 {
        self.state_count() * (N_ACTIONS * N_ACTIONS) as u64
    }

    fn mirror_cell(&self, (r, c): Cell) -> Cell {
        (r, self.cols - 1 - c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SoccerState {
    pub pos_a: Cell,
    pub pos_b: Cell,
    pub ball: Side,
}

impl SoccerState {
    pub fn pos(&self, side: Side) -> Cell {
        match side {
            Side::A => self.pos_a,
            Side::B => self.pos_b,
        }
    }

    fn set_pos(&mut self, side: Side, cell: Cell) {
        match side {
            Side::A => self.pos_a = cell,
            Side::B => self.pos_b = cell,
        }
    }
}

/// Mixed-radix code `((cell_a * (RC - 1) + cell_b') * 2 + ball)` where
/// `cell = row * C + col`, `cell_b'` skips `cell_a`, and ball is 0 for A.
pub fn encode(cfg: &SoccerConfig, s: &SoccerState) -> u64 {
    let ca = (s.pos_a.0 * cfg.cols + s.pos_a.1) as u64;
    let mut cb = (s.pos_b.0 * cfg.cols + s.pos_b.1) as u64;
    if cb > ca {
        cb -= 1;
    }
    let ball = match s.ball {
        Side::A => 0,
        Side::B => 1,
    };
    (ca * (cfg.cells() as u64 - 1) + cb) * 2 + ball
}

pub fn decode(cfg: &SoccerConfig, code: u64) -> Result<SoccerState> {
    if code >= cfg.state_count() {
        return Err(Error::Invalid(format!(
            "state code {code} out of range for {}",
            cfg.id()
        )));
    }
    let ball = if code % 2 == 0 { Side::A } else { Side::B };
    let rest = code / 2;
    let others = cfg.cells() as u64 - 1;
    let ca = (rest / others) as usize;
    let mut cb = (rest % others) as usize;
    if cb >= ca {
        cb += 1;
    }
    Ok(SoccerState {
        pos_a: (ca / cfg.cols, ca % cfg.cols),
        pos_b: (cb / cfg.cols, cb % cfg.cols),
        ball,
    })
}

/// Every state in code order; refuses boards above `cap` states.
pub fn enumerate_states(cfg: &SoccerConfig, cap: u64) -> Result<Vec<SoccerState>> {
    let n = cfg.state_count();
    if n > cap {
        return Err(Error::TooLarge { states: n, cap });
    }
    (0..n).map(|c| decode(cfg, c)).collect()
}

/// A in column 0, B in column `C - 1`, uniform rows and ball owner.
pub fn reset(cfg: &SoccerConfig, rng: &mut SimRng) -> SoccerState {
    let ra = rng.gen_range(0..cfg.rows);
    let rb = rng.gen_range(0..cfg.rows);
    let ball = if rng.gen_bool(0.5) { Side::A } else { Side::B };
    SoccerState {
        pos_a: (ra, 0),
        pos_b: (rb, cfg.cols - 1),
        ball,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub next: SoccerState,
    pub reward: f64,
    pub terminal: bool,
}

enum Move {
    Continue(SoccerState),
    Scored(Side),
}

fn move_player(cfg: &SoccerConfig, state: SoccerState, who: Side, action: Action) -> Move {
    let (r, c) = state.pos(who);
    let carrier = state.ball == who;
    let crossing = match who {
        Side::A => action == Action::Right && c == cfg.cols - 1,
        Side::B => action == Action::Left && c == 0,
    };
    if carrier && crossing && cfg.in_goal_zone(r) {
        return Move::Scored(who);
    }
    let (dr, dc) = action.delta();
    let (nr, nc) = (r as i64 + dr, c as i64 + dc);
    if nr < 0 || nc < 0 || nr >= cfg.rows as i64 || nc >= cfg.cols as i64 {
        return Move::Continue(state);
    }
    let target = (nr as usize, nc as usize);
    let mut next = state;
    if target == state.pos(who.other()) {
        if carrier {
            next.ball = who.other();
        }
    } else {
        next.set_pos(who, target);
    }
    Move::Continue(next)
}

/// Resolves one joint move with a fixed order; the second move is skipped
/// once the first one scores.
pub fn step_ordered(cfg: &SoccerConfig, state: SoccerState, a: Action, o: Action, a_first: bool) -> Outcome {
    let order = if a_first {
        [(Side::A, a), (Side::B, o)]
    } else {
        [(Side::B, o), (Side::A, a)]
    };
    let mut s = state;
    for (who, act) in order {
        match move_player(cfg, s, who, act) {
            Move::Continue(n) => s = n,
            Move::Scored(side) => {
                return Outcome {
                    next: s,
                    reward: if side == Side::A { 1.0 } else { -1.0 },
                    terminal: true,
                }
            }
        }
    }
    Outcome {
        next: s,
        reward: 0.0,
        terminal: false,
    }
}

/// One step with a fair coin deciding who moves first.
pub fn step(cfg: &SoccerConfig, state: SoccerState, a: usize, o: usize, rng: &mut SimRng) -> Result<Outcome> {
    let (a, o) = (Action::from_index(a)?, Action::from_index(o)?);
    let a_first = rng.gen_bool(0.5);
    Ok(step_ordered(cfg, state, a, o, a_first))
}

/// The exact model: both move orders with probability 1/2 each; scoring
/// outcomes end the game.
pub fn exact_model(cfg: &SoccerConfig, cap: u64) -> Result<TabularGame> {
    let states = enumerate_states(cfg, cap)?;
    let n = states.len();
    let mut transitions = Vec::with_capacity(n * N_ACTIONS * N_ACTIONS);
    let mut rewards = Vec::with_capacity(n * N_ACTIONS * N_ACTIONS);
    for s in &states {
        for a in Action::ALL {
            for o in Action::ALL {
                let mut row: Vec<Transition> = Vec::with_capacity(2);
                let mut reward = 0.0;
                for a_first in [true, false] {
                    let out = step_ordered(cfg, *s, a, o, a_first);
                    reward += 0.5 * out.reward;
                    let next = (!out.terminal).then(|| encode(cfg, &out.next) as usize);
                    match row.iter_mut().find(|t| t.next == next) {
                        Some(t) => t.prob += 0.5,
                        None => row.push(Transition { next, prob: 0.5 }),
                    }
                }
                transitions.push(row);
                rewards.push(reward);
            }
        }
    }
    TabularGame::new(
        n,
        N_ACTIONS,
        N_ACTIONS,
        transitions,
        rewards,
        cfg.discount,
        vec![false; n],
    )
}

/// The same position with the players' identities swapped and the board
/// reflected left to right.
pub fn mirror(cfg: &SoccerConfig, s: &SoccerState) -> SoccerState {
    SoccerState {
        pos_a: cfg.mirror_cell(s.pos_b),
        pos_b: cfg.mirror_cell(s.pos_a),
        ball: s.ball.other(),
    }
}

#[derive(Debug, Clone)]
pub struct SoccerEnv {
    pub cfg: SoccerConfig,
}

impl Environment for SoccerEnv {
    fn id(&self) -> String {
        self.cfg.id()
    }

    fn n_agent_actions(&self) -> usize {
        N_ACTIONS
    }

    fn n_opp_actions(&self) -> usize {
        N_ACTIONS
    }

    fn discount(&self) -> f64 {
        self.cfg.discount
    }

    fn reset(&self, rng: &mut SimRng) -> u64 {
        encode(&self.cfg, &reset(&self.cfg, rng))
    }

    fn step(&self, state: u64, a: usize, o: usize, rng: &mut SimRng) -> Result<Step> {
        let s = decode(&self.cfg, state)?;
        let out = step(&self.cfg, s, a, o, rng)?;
        Ok(Step {
            next: encode(&self.cfg, &out.next),
            reward: out.reward,
            terminal: out.terminal,
        })
    }

    fn symmetric_roles(&self) -> bool {
        true
    }
}

// ---------------------------------------------------------------------------
// Features

/// Basic block widths for the four (P1, P2) cases, in block order:
/// P1 & !P2, P1 & P2, !P1 & !P2, !P1 & P2.
pub const BASIC_CASE_SIZES: [usize; 4] = [4, 8, 7, 17];
/// Extended per-case widths (basic functions plus extras).
pub const EXTENDED_CASE_SIZES: [usize; 4] = [9, 12, 15, 20];
pub const BASIC_BLOCK: usize = 36;
pub const EXTENDED_BLOCK: usize = 56;
const EXTRA_SIZES: [usize; 4] = [5, 4, 8, 3];

const _: () = {
    assert!(BASIC_CASE_SIZES[0] + BASIC_CASE_SIZES[1] + BASIC_CASE_SIZES[2] + BASIC_CASE_SIZES[3] == BASIC_BLOCK);
    assert!(
        EXTENDED_CASE_SIZES[0] + EXTENDED_CASE_SIZES[1] + EXTENDED_CASE_SIZES[2] + EXTENDED_CASE_SIZES[3]
            == EXTENDED_BLOCK
    );
    assert!(BASIC_CASE_SIZES[0] + EXTRA_SIZES[0] == EXTENDED_CASE_SIZES[0]);
    assert!(BASIC_CASE_SIZES[1] + EXTRA_SIZES[1] == EXTENDED_CASE_SIZES[1]);
    assert!(BASIC_CASE_SIZES[2] + EXTRA_SIZES[2] == EXTENDED_CASE_SIZES[2]);
    assert!(BASIC_CASE_SIZES[3] + EXTRA_SIZES[3] == EXTENDED_CASE_SIZES[3]);
    assert!(BASIC_BLOCK * 25 == 900);
    assert!(EXTENDED_BLOCK * 25 == 1400);
};

/// Defender offsets `(d_row, d_col)` from the attacker within Manhattan
/// distance 2, minus the two cells straight behind the attacker.
pub const DEFENDER_OFFSETS: [(i64, i64); 10] = [
    (-2, 0),
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, 1),
    (0, 2),
    (1, -1),
    (1, 0),
    (1, 1),
    (2, 0),
];

/// Positions and actions re-expressed from the ball carrier's side, with the
/// board reflected so the carrier always attacks toward the last column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoleView {
    pub attacker: Cell,
    pub defender: Cell,
    pub attacker_action: Action,
    pub defender_action: Action,
    /// +1 when A carries the ball, -1 otherwise.
    pub sign: f64,
}

pub fn role_view(cfg: &SoccerConfig, s: &SoccerState, a: Action, o: Action) -> RoleView {
    match s.ball {
        Side::A => RoleView {
            attacker: s.pos_a,
            defender: s.pos_b,
            attacker_action: a,
            defender_action: o,
            sign: 1.0,
        },
        Side::B => RoleView {
            attacker: cfg.mirror_cell(s.pos_b),
            defender: cfg.mirror_cell(s.pos_a),
            attacker_action: o.mirrored(),
            defender_action: a.mirrored(),
            sign: -1.0,
        },
    }
}

/// Scalar quantities the basis functions are built from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Propositions {
    /// Attacker strictly closer (horizontally) to the defender's goal line.
    pub p1: bool,
    /// Players within Manhattan distance 2.
    pub p2: bool,
    /// Attacker's horizontal distance to the defender's goal, in [0, 1].
    pub dh_goal: f64,
    /// Signed vertical distance of the attacker from the goal zone (positive above).
    pub sv_goal: f64,
    pub at_upper_goal: bool,
    pub at_lower_goal: bool,
    pub attacker_in_zone: bool,
    /// Signed horizontal distance between the players (positive when the attacker is left).
    pub sh_players: f64,
    /// Signed vertical distance between the players (positive when the attacker is above).
    pub sv_players: f64,
    pub defender_on_goal_line: bool,
    pub defender_in_zone: bool,
    /// Index into `DEFENDER_OFFSETS`, if the defender sits at one of them.
    pub defender_slot: Option<usize>,
}

pub fn propositions(cfg: &SoccerConfig, view: &RoleView) -> Propositions {
    let (ra, ca) = (view.attacker.0 as i64, view.attacker.1 as i64);
    let (rd, cd) = (view.defender.0 as i64, view.defender.1 as i64);
    let h = (cfg.cols - 1) as f64;
    let v = (cfg.rows - 1) as f64;
    let (top, bottom) = (cfg.goal_top as i64, cfg.goal_bottom as i64);
    let sv_goal = if ra < top {
        (top - ra) as f64 / v
    } else if ra > bottom {
        -((ra - bottom) as f64) / v
    } else {
        0.0
    };
    let offset = (rd - ra, cd - ca);
    Propositions {
        p1: ca > cd,
        p2: (rd - ra).abs() + (cd - ca).abs() <= 2,
        dh_goal: (cfg.cols as i64 - 1 - ca) as f64 / h,
        sv_goal,
        at_upper_goal: ra == top,
        at_lower_goal: ra == bottom,
        attacker_in_zone: ra >= top && ra <= bottom,
        sh_players: (cd - ca) as f64 / h,
        sv_players: (rd - ra) as f64 / v,
        defender_on_goal_line: cd == cfg.cols as i64 - 1,
        defender_in_zone: rd >= top && rd <= bottom,
        defender_slot: DEFENDER_OFFSETS.iter().position(|&d| d == offset),
    }
}

fn ind(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Block-local basis values for the active case, as `(local index, value)`.
/// `extended` appends the extra functions after the first 36 slots.
pub fn block_features(p: &Propositions, extended: bool) -> Vec<(usize, f64)> {
    let (dh, sv) = (p.dh_goal, p.sv_goal);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(24);
    let mut put = |base: usize, vals: &[f64]| {
        for (i, &x) in vals.iter().enumerate() {
            out.push((base + i, x));
        }
    };
    let case = match (p.p1, p.p2) {
        (true, false) => 0,
        (true, true) => 1,
        (false, false) => 2,
        (false, true) => 3,
    };
    let basic_offset: usize = BASIC_CASE_SIZES[..case].iter().sum();
    let extra_offset: usize = BASIC_BLOCK + EXTRA_SIZES[..case].iter().sum::<usize>();
    let common = [1.0, dh, sv, dh * sv];
    match case {
        0 => {
            put(basic_offset, &common);
            if extended {
                put(
                    extra_offset,
                    &[
                        dh * dh,
                        sv * sv,
                        ind(p.at_upper_goal),
                        ind(p.at_lower_goal),
                        ind(p.attacker_in_zone),
                    ],
                );
            }
        }
        1 => {
            put(basic_offset, &common);
            put(
                basic_offset + 4,
                &[
                    ind(p.at_upper_goal),
                    ind(p.at_lower_goal),
                    p.sh_players,
                    p.sv_players,
                ],
            );
            if extended {
                put(
                    extra_offset,
                    &[
                        dh * dh,
                        sv * sv,
                        ind(p.attacker_in_zone),
                        p.sh_players * p.sv_players,
                    ],
                );
            }
        }
        2 => {
            put(basic_offset, &common);
            put(
                basic_offset + 4,
                &[ind(p.at_upper_goal), ind(p.at_lower_goal), p.sv_players],
            );
            if extended {
                put(
                    extra_offset,
                    &[
                        dh * dh,
                        sv * sv,
                        ind(p.attacker_in_zone),
                        p.sh_players,
                        p.sv_players * p.sv_players,
                        p.sh_players * p.sh_players,
                        p.sh_players * p.sv_players,
                        ind(p.defender_in_zone),
                    ],
                );
            }
        }
        _ => {
            put(
                basic_offset,
                &[
                    dh,
                    sv,
                    dh * sv,
                    ind(p.at_upper_goal),
                    ind(p.at_lower_goal),
                    ind(p.defender_on_goal_line),
                    ind(p.defender_in_zone),
                ],
            );
            if let Some(slot) = p.defender_slot {
                put(basic_offset + 7 + slot, &[1.0]);
            }
            if extended {
                put(extra_offset, &[dh * dh, sv * sv, ind(p.attacker_in_zone)]);
            }
        }
    }
    out.retain(|&(_, x)| x != 0.0);
    out
}

/// Which soccer basis to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SoccerBasis {
    Basic,
    Extended,
}

impl SoccerBasis {
    pub fn block(self) -> usize {
        match self {
            SoccerBasis::Basic => BASIC_BLOCK,
            SoccerBasis::Extended => EXTENDED_BLOCK,
        }
    }
}

/// Role-relative features from A's side: the block is selected by the
/// (attacker, defender) action pair and the values carry the sign of the
/// ball owner, so one weight vector scores both attack and defence.
pub fn soccer_features(
    cfg: &SoccerConfig,
    basis: SoccerBasis,
    s: &SoccerState,
    a: Action,
    o: Action,
) -> SparseFeatures {
    let view = role_view(cfg, s, a, o);
    let p = propositions(cfg, &view);
    let pair = view.attacker_action as usize * N_ACTIONS + view.defender_action as usize;
    let base = pair * basis.block();
    block_features(&p, basis == SoccerBasis::Extended)
        .into_iter()
        .map(|(i, x)| (base + i, view.sign * x))
        .collect()
}

pub fn features_basic(cfg: &SoccerConfig, s: &SoccerState, a: Action, o: Action) -> SparseFeatures {
    soccer_features(cfg, SoccerBasis::Basic, s, a, o)
}

pub fn features_extended(cfg: &SoccerConfig, s: &SoccerState, a: Action, o: Action) -> SparseFeatures {
    soccer_features(cfg, SoccerBasis::Extended, s, a, o)
}

#[derive(Debug, Clone)]
pub struct SoccerFeatures {
    pub cfg: SoccerConfig,
    pub basis: SoccerBasis,
}

impl SoccerFeatures {
    pub fn new(cfg: SoccerConfig, basis: SoccerBasis) -> Self {
        let f = SoccerFeatures { cfg, basis };
        assert_eq!(f.dim(), N_ACTIONS * N_ACTIONS * basis.block());
        f
    }
}

impl FeatureMap for SoccerFeatures {
    fn id(&self) -> String {
        match self.basis {
            SoccerBasis::Basic => "soccer-basic".into(),
            SoccerBasis::Extended => "soccer-extended".into(),
        }
    }

    fn dim(&self) -> usize {
        N_ACTIONS * N_ACTIONS * self.basis.block()
    }

    fn n_agent_actions(&self) -> usize {
        N_ACTIONS
    }

    fn n_opp_actions(&self) -> usize {
        N_ACTIONS
    }

    fn eval(&self, state: u64, a: usize, o: usize) -> SparseFeatures {
        let s = decode(&self.cfg, state).expect("state code within the board's range");
        soccer_features(&self.cfg, self.basis, &s, Action::ALL[a], Action::ALL[o])
    }
}
