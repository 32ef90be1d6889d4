//! The Collect domain.
//!
//! An agent on a walled grid gathers goals under a budget of option
//! decisions. Control is by options, one per direction: the agent walks
//! that way, sweeping whole corridors and open stretches in one go, until
//! a crossing corridor opens beside it, the next cell ahead is blocked, or
//! it walks onto a goal. One decision spends one unit of the time budget
//! however many cells the walk covers; every primitive step inside the
//! walk costs `step_penalty`, and entering a goal cell collects it for
//! `goal_reward`. An option aimed straight at a wall burns one step in
//! place. The episode ends when the board is cleared or the decision
//! budget runs out. In stochastic mode each goal takes a random-walk move
//! after every decision and a finished option re-executes with fixed
//! probability.

use std::collections::BTreeSet;
use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};

/// Temporary dials for the dynamics details that the reward anchors have
/// to settle empirically. Each reads an environment variable once; the
/// defaults are the currently favored readings. Hard-wired and removed
/// once calibration lands.
pub(crate) mod knobs {
    use std::sync::OnceLock;

    #[derive(Clone, Copy, PartialEq, Eq, Debug)]
    pub enum RepeatMode {
        Rerun,
        Slide,
        Off,
    }

    /// A walk ends on the cell where it collects a goal.
    pub fn goal_stop() -> bool {
        static V: OnceLock<bool> = OnceLock::new();
        *V.get_or_init(|| std::env::var("VPN_GOAL_STOP").map_or(true, |v| v != "0"))
    }

    /// Goals move after every primitive step instead of once per decision.
    pub fn motion_per_step() -> bool {
        static V: OnceLock<bool> = OnceLock::new();
        *V.get_or_init(|| std::env::var("VPN_MOTION").is_ok_and(|v| v == "step"))
    }

    /// What a stochastic repeat does: re-run the whole walk, slide one more
    /// step, or nothing.
    pub fn repeat_mode() -> RepeatMode {
        static V: OnceLock<RepeatMode> = OnceLock::new();
        *V.get_or_init(|| match std::env::var("VPN_REPEAT").as_deref() {
            Ok("slide") => RepeatMode::Slide,
            Ok("off") => RepeatMode::Off,
            _ => RepeatMode::Rerun,
        })
    }

    /// A crossing branch is any open perpendicular side, rather than one
    /// that just opened.
    pub fn stop_any_open_side() -> bool {
        static V: OnceLock<bool> = OnceLock::new();
        *V.get_or_init(|| std::env::var("VPN_STOP_RULE").is_ok_and(|v| v == "anyperp"))
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum OptionId {
    Up,
    Down,
    Left,
    Right,
}

impl OptionId {
    pub const ALL: [OptionId; 4] = [OptionId::Up, OptionId::Down, OptionId::Left, OptionId::Right];
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        match self {
            OptionId::Up => 0,
            OptionId::Down => 1,
            OptionId::Left => 2,
            OptionId::Right => 3,
        }
    }

    pub fn from_index(i: usize) -> OptionId {
        Self::ALL[i]
    }

    /// (row delta, col delta); row 0 is the top of the grid.
    pub fn delta(self) -> (i64, i64) {
        match self {
            OptionId::Up => (-1, 0),
            OptionId::Down => (1, 0),
            OptionId::Left => (0, -1),
            OptionId::Right => (0, 1),
        }
    }

    /// The two directions at right angles to this one.
    pub fn perpendicular(self) -> [OptionId; 2] {
        match self {
            OptionId::Up | OptionId::Down => [OptionId::Left, OptionId::Right],
            OptionId::Left | OptionId::Right => [OptionId::Up, OptionId::Down],
        }
    }
}

impl fmt::Display for OptionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            OptionId::Up => "Up",
            OptionId::Down => "Down",
            OptionId::Left => "Left",
            OptionId::Right => "Right",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridConfig {
    pub height: usize,
    pub width: usize,
    pub n_goals: usize,
    pub n_walls: usize,
    /// Episode budget in option decisions.
    pub time_limit: u32,
    pub goal_reward: f64,
    /// Positive magnitude; each primitive step contributes -step_penalty.
    pub step_penalty: f64,
    pub stochastic: bool,
    /// Chance for each goal to take its one-block move.
    pub goal_move_prob: f64,
    /// Chance the finished option re-executes, drawn after each run.
    pub option_repeat_prob: f64,
    pub gamma: f64,
    /// Master seed for episode generation streams.
    pub seed: u64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            height: 10,
            width: 10,
            n_goals: 8,
            n_walls: 12,
            time_limit: 20,
            goal_reward: 2.0,
            step_penalty: 0.2,
            stochastic: false,
            goal_move_prob: 0.3,
            option_repeat_prob: 0.3,
            gamma: 0.98,
            seed: 0,
        }
    }
}

impl GridConfig {
    /// The 5-goal generalization variant of this layout.
    pub fn fewer_goals(&self) -> Self {
        GridConfig { n_goals: 5, ..self.clone() }
    }

    /// The extra-wall generalization variant of this layout.
    pub fn more_walls(&self) -> Self {
        GridConfig { n_walls: 18, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let cells = self.height * self.width;
        if self.height == 0 || self.width == 0 {
            return Err(Error::config("grid dimensions must be positive"));
        }
        if self.n_goals + self.n_walls + 1 > cells {
            return Err(Error::input(format!(
                "{} goals + {} walls + agent exceed {} cells",
                self.n_goals, self.n_walls, cells
            )));
        }
        if self.time_limit == 0 {
            return Err(Error::config("time_limit must be positive"));
        }
        for (name, p) in [
            ("goal_move_prob", self.goal_move_prob),
            ("option_repeat_prob", self.option_repeat_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{name} must be in [0,1], got {p}")));
            }
        }
        if !(0.0..1.0).contains(&self.gamma) && self.gamma != 1.0 {
            return Err(Error::config(format!("gamma must be in (0,1], got {}", self.gamma)));
        }
        Ok(())
    }
}

pub type Cell = (usize, usize);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridState {
    pub height: usize,
    pub width: usize,
    pub agent: Cell,
    pub goals: BTreeSet<Cell>,
    /// Row-major wall mask, length height*width.
    pub walls: Vec<bool>,
    /// Option decisions left in the episode.
    pub steps_remaining: u32,
}

impl GridState {
    pub fn wall(&self, r: usize, c: usize) -> bool {
        self.walls[r * self.width + c]
    }

    /// The episode is over when the board is cleared or the decision budget
    /// is spent, whichever comes first.
    pub fn terminal(&self) -> bool {
        self.steps_remaining == 0 || self.goals.is_empty()
    }

    /// Next cell in a direction, or None at the boundary.
    pub fn step_cell(&self, cell: Cell, opt: OptionId) -> Option<Cell> {
        let (dr, dc) = opt.delta();
        let r = cell.0 as i64 + dr;
        let c = cell.1 as i64 + dc;
        if r < 0 || c < 0 || r as usize >= self.height || c as usize >= self.width {
            None
        } else {
            Some((r as usize, c as usize))
        }
    }

    /// Wall or boundary in the given direction.
    pub fn blocked(&self, cell: Cell, opt: OptionId) -> bool {
        match self.step_cell(cell, opt) {
            None => true,
            Some((r, c)) => self.wall(r, c),
        }
    }
}

/// A perpendicular corridor opens beside `cur` that was walled beside
/// `prev`: the walk has reached a crossing branch. Open stretches never
/// trigger this (both cells see the same open sides), so a walk there runs
/// until something blocks the way ahead.
pub fn branch_opens(state: &GridState, prev: Cell, cur: Cell, opt: OptionId) -> bool {
    opt.perpendicular().iter().any(|&p| !state.blocked(cur, p) && state.blocked(prev, p))
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptionOutcome {
    /// Discounted sum of the per-step rewards, discounted from the option start.
    pub r: f64,
    /// Primitive steps consumed, always at least 1 (a blocked option burns
    /// one step in place).
    pub k: u32,
    /// gamma^k.
    pub gamma_k: f64,
    pub next_state: GridState,
    pub terminal: bool,
    /// Raw (undiscounted) reward of each primitive step.
    pub per_step_rewards: Vec<f64>,
}

/// Sum of raw per-step rewards over an episode's outcomes.
pub fn episode_return(outcomes: &[OptionOutcome]) -> f64 {
    outcomes.iter().flat_map(|o| o.per_step_rewards.iter()).sum()
}

pub fn generate_episode<R: Rng>(config: &GridConfig, rng: &mut R) -> Result<GridState> {
    config.validate()?;
    let cells = config.height * config.width;
    let need = config.n_walls + 1 + config.n_goals;
    for _ in 0..1000 {
        let mut idx: Vec<usize> = (0..cells).collect();
        for i in 0..need {
            let j = rng.gen_range(i..cells);
            idx.swap(i, j);
        }
        let mut walls = vec![false; cells];
        for &w in &idx[..config.n_walls] {
            walls[w] = true;
        }
        let to_cell = |i: usize| (i / config.width, i % config.width);
        let agent = to_cell(idx[config.n_walls]);
        let goals: BTreeSet<Cell> =
            idx[config.n_walls + 1..need].iter().map(|&i| to_cell(i)).collect();
        let state = GridState {
            height: config.height,
            width: config.width,
            agent,
            goals,
            walls,
            steps_remaining: config.time_limit,
        };
        if all_goals_reachable(&state) {
            return Ok(state);
        }
    }
    Err(Error::Generation("no connected layout in 1000 attempts".into()))
}

/// Every goal lies on a cell the agent can touch by some option sequence.
/// Movement ignores goals and the time limit; only geometry matters.
pub fn all_goals_reachable(state: &GridState) -> bool {
    if state.goals.is_empty() {
        return true;
    }
    let touched = reachable_cells(state);
    state.goals.iter().all(|&(r, c)| touched[r * state.width + c])
}

/// Cells touched (passed through or stopped on) by option walks from the
/// agent's position. Goal cells double as stop positions: a walk ends on
/// the goal it collects, and from there new directions open up. The time
/// limit is ignored; only geometry and goal placement matter.
pub fn reachable_cells(state: &GridState) -> Vec<bool> {
    let mut touched = vec![false; state.height * state.width];
    let mut seen_stop = vec![false; state.height * state.width];
    let at = |cell: Cell| cell.0 * state.width + cell.1;
    touched[at(state.agent)] = true;
    seen_stop[at(state.agent)] = true;
    let mut queue = vec![state.agent];
    while let Some(from) = queue.pop() {
        for opt in OptionId::ALL {
            let mut cur = from;
            loop {
                if state.blocked(cur, opt) {
                    break;
                }
                let prev = cur;
                cur = state.step_cell(cur, opt).expect("not blocked");
                touched[at(cur)] = true;
                if (knobs::goal_stop() && state.goals.contains(&cur))
                    || branch_opens(state, prev, cur, opt)
                {
                    break;
                }
            }
            if cur != from && !seen_stop[at(cur)] {
                seen_stop[at(cur)] = true;
                queue.push(cur);
            }
        }
    }
    touched
}

/// Pure movement geometry of one option run from `from`, ignoring goals:
/// the stop cell, the primitive-step count, and every cell entered along
/// the way (in order). A blocked first cell gives (from, 0, []); the live
/// environment burns one step in place for that case. Live walks can end
/// earlier than this when they collect a goal on the way.
pub fn option_walk(state: &GridState, from: Cell, opt: OptionId) -> (Cell, u32, Vec<Cell>) {
    let mut cur = from;
    let mut cells = Vec::new();
    loop {
        if state.blocked(cur, opt) {
            break;
        }
        let prev = cur;
        cur = state.step_cell(cur, opt).expect("not blocked");
        cells.push(cur);
        if branch_opens(state, prev, cur, opt) {
            break;
        }
    }
    (cur, cells.len() as u32, cells)
}

/// Each goal independently moves one block with `goal_move_prob`, in sorted
/// cell order, to a uniform open neighbor (not a wall, not another goal; the
/// agent's cell is allowed). A goal with no open neighbor stays put.
fn move_goals<R: Rng>(s: &mut GridState, config: &GridConfig, rng: &mut R) {
    let goals: Vec<Cell> = s.goals.iter().copied().collect();
    for g in goals {
        if !rng.gen_bool(config.goal_move_prob) {
            continue;
        }
        let mut cands: Vec<Cell> = Vec::with_capacity(4);
        for opt in OptionId::ALL {
            if let Some(n) = s.step_cell(g, opt) {
                if !s.wall(n.0, n.1) && !s.goals.contains(&n) {
                    cands.push(n);
                }
            }
        }
        if cands.is_empty() {
            continue;
        }
        let dest = cands[rng.gen_range(0..cands.len())];
        s.goals.remove(&g);
        s.goals.insert(dest);
    }
}

/// One primitive step: collect a goal that wandered onto the agent (a pickup
/// deferred to the start of this step), move one cell if the way is open,
/// collect on arrival, and pay the step penalty. Returns whether the agent
/// moved and whether it collected anything.
fn primitive_step<R: Rng>(
    s: &mut GridState,
    opt: OptionId,
    config: &GridConfig,
    rng: &mut R,
    per_step: &mut Vec<f64>,
) -> (bool, bool) {
    let mut gained = 0.0;
    if s.goals.remove(&s.agent) {
        gained += config.goal_reward;
    }
    let moved = !s.blocked(s.agent, opt);
    if moved {
        s.agent = s.step_cell(s.agent, opt).expect("not blocked");
        if s.goals.remove(&s.agent) {
            gained += config.goal_reward;
        }
    }
    per_step.push(gained - config.step_penalty);
    if config.stochastic && knobs::motion_per_step() {
        move_goals(s, config, rng);
    }
    (moved, gained > 0.0)
}

/// One full walk from the agent's cell, which must have an open way ahead:
/// steps until a goal is collected, the next cell is blocked, or a crossing
/// branch opens.
fn run_walk<R: Rng>(
    s: &mut GridState,
    opt: OptionId,
    config: &GridConfig,
    rng: &mut R,
    per_step: &mut Vec<f64>,
) {
    loop {
        let from = s.agent;
        let (moved, collected) = primitive_step(s, opt, config, rng, per_step);
        debug_assert!(moved, "run_walk entered with the way blocked");
        if knobs::goal_stop() && collected {
            break;
        }
        if s.blocked(s.agent, opt) {
            break;
        }
        if branch_opens(s, from, s.agent, opt) {
            break;
        }
    }
}

pub fn execute_option<R: Rng>(
    state: &GridState,
    opt: OptionId,
    config: &GridConfig,
    rng: &mut R,
) -> Result<OptionOutcome> {
    if state.terminal() {
        return Err(Error::usage("execute_option on a terminal state"));
    }
    let mut s = state.clone();
    s.steps_remaining -= 1;
    let mut per_step = Vec::new();
    if s.blocked(s.agent, opt) {
        // An option aimed straight at a wall consumes exactly one step in
        // place; no repeats follow.
        primitive_step(&mut s, opt, config, rng, &mut per_step);
    } else {
        run_walk(&mut s, opt, config, rng, &mut per_step);
        while config.stochastic
            && !s.goals.is_empty()
            && knobs::repeat_mode() != knobs::RepeatMode::Off
            && rng.gen_bool(config.option_repeat_prob)
        {
            if s.blocked(s.agent, opt) {
                // A repeat drawn at the end of a corridor bumps once and
                // ends the option; the wall is not going anywhere.
                primitive_step(&mut s, opt, config, rng, &mut per_step);
                break;
            }
            match knobs::repeat_mode() {
                knobs::RepeatMode::Rerun => run_walk(&mut s, opt, config, rng, &mut per_step),
                knobs::RepeatMode::Slide => {
                    primitive_step(&mut s, opt, config, rng, &mut per_step);
                }
                knobs::RepeatMode::Off => unreachable!(),
            }
        }
    }
    if config.stochastic && !knobs::motion_per_step() {
        move_goals(&mut s, config, rng);
    }
    let k = per_step.len() as u32;
    let mut r = 0.0;
    let mut g = 1.0;
    for &x in &per_step {
        r += g * x;
        g *= config.gamma;
    }
    let terminal = s.terminal();
    Ok(OptionOutcome {
        r,
        k,
        gamma_k: config.gamma.powi(k as i32),
        next_state: s,
        terminal,
        per_step_rewards: per_step,
    })
}

/// Binary observation planes plus the normalized remaining-time scalar.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub height: usize,
    pub width: usize,
    /// [3, H, W] row-major: agent, goals, walls.
    pub planes: Vec<f64>,
    /// steps_remaining / time_limit.
    pub time: f64,
}

pub fn observe(state: &GridState, config: &GridConfig) -> Observation {
    let plane = state.height * state.width;
    let mut planes = vec![0.0; 3 * plane];
    planes[state.agent.0 * state.width + state.agent.1] = 1.0;
    for &(r, c) in &state.goals {
        planes[plane + r * state.width + c] = 1.0;
    }
    for i in 0..plane {
        if state.walls[i] {
            planes[2 * plane + i] = 1.0;
        }
    }
    Observation {
        height: state.height,
        width: state.width,
        planes,
        time: state.steps_remaining as f64 / config.time_limit as f64,
    }
}

/// Plain-text layout: one row per line ('.' open, '#' wall, 'A' agent,
/// 'G' goal, '@' agent standing on a goal), then a steps line.
pub fn render_state(state: &GridState) -> String {
    let mut out = String::new();
    for r in 0..state.height {
        for c in 0..state.width {
            let ch = if state.agent == (r, c) {
                if state.goals.contains(&(r, c)) {
                    '@'
                } else {
                    'A'
                }
            } else if state.goals.contains(&(r, c)) {
                'G'
            } else if state.wall(r, c) {
                '#'
            } else {
                '.'
            };
            out.push(ch);
        }
        out.push('\n');
    }
    out.push_str(&format!("steps_remaining: {}\n", state.steps_remaining));
    out
}

pub fn parse_layout(text: &str) -> Result<GridState> {
    let mut rows: Vec<&str> = Vec::new();
    let mut steps: Option<u32> = None;
    for line in text.lines() {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("steps_remaining:") {
            steps = Some(
                rest.trim()
                    .parse()
                    .map_err(|_| Error::format(format!("bad steps_remaining line {line:?}")))?,
            );
        } else {
            rows.push(line);
        }
    }
    if rows.is_empty() {
        return Err(Error::format("layout has no rows"));
    }
    let height = rows.len();
    let width = rows[0].chars().count();
    let mut walls = vec![false; height * width];
    let mut goals = BTreeSet::new();
    let mut agent = None;
    for (r, row) in rows.iter().enumerate() {
        if row.chars().count() != width {
            return Err(Error::format(format!("ragged layout row {r}")));
        }
        for (c, ch) in row.chars().enumerate() {
            match ch {
                '.' => {}
                '#' => walls[r * width + c] = true,
                'A' => {
                    if agent.replace((r, c)).is_some() {
                        return Err(Error::format("multiple agents in layout"));
                    }
                }
                'G' => {
                    goals.insert((r, c));
                }
                '@' => {
                    if agent.replace((r, c)).is_some() {
                        return Err(Error::format("multiple agents in layout"));
                    }
                    goals.insert((r, c));
                }
                _ => return Err(Error::format(format!("bad layout char {ch:?}"))),
            }
        }
    }
    let agent = agent.ok_or_else(|| Error::format("layout has no agent"))?;
    let steps = steps.ok_or_else(|| Error::format("layout has no steps_remaining line"))?;
    Ok(GridState { height, width, agent, goals, walls, steps_remaining: steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn det_config(height: usize, width: usize) -> GridConfig {
        GridConfig { height, width, ..Default::default() }
    }

    #[test]
    fn corridor_example_reward_and_discount() {
        let state = parse_layout("######\n#A..G#\n######\nsteps_remaining: 20\n").unwrap();
        let config = det_config(3, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = execute_option(&state, OptionId::Right, &config, &mut rng).unwrap();
        assert_eq!(out.k, 3);
        assert!((out.r - 1.33272).abs() < 1e-9, "r = {}", out.r);
        assert!((out.gamma_k - 0.941192).abs() < 1e-12);
        assert_eq!(out.next_state.agent, (1, 4));
        assert!(out.next_state.goals.is_empty());
        assert_eq!(out.per_step_rewards, vec![-0.2, -0.2, 1.8]);
        assert_eq!(out.next_state.steps_remaining, 19, "a walk spends one decision");
        assert!(out.terminal, "clearing the board ends the episode");
    }

    #[test]
    fn blocked_option_burns_one_step_in_place() {
        let state = parse_layout("######\n#A..G#\n######\nsteps_remaining: 20\n").unwrap();
        let config = det_config(3, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = execute_option(&state, OptionId::Left, &config, &mut rng).unwrap();
        assert_eq!(out.k, 1);
        assert_eq!(out.r, -0.2);
        assert_eq!(out.per_step_rewards, vec![-0.2]);
        assert_eq!(out.next_state.agent, (1, 1));
        assert_eq!(out.next_state.steps_remaining, 19);
    }

    #[test]
    fn stops_where_a_crossing_branch_opens() {
        // A side corridor opens below (1,3), so the walk stops there; the
        // goal one cell further stays uncollected.
        let text = "######\n#A..G#\n###.##\nsteps_remaining: 20\n";
        let state = parse_layout(text).unwrap();
        let config = det_config(3, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = execute_option(&state, OptionId::Right, &config, &mut rng).unwrap();
        assert_eq!(out.k, 2);
        assert_eq!(out.next_state.agent, (1, 3));
        assert_eq!(out.next_state.goals.len(), 1);
    }

    #[test]
    fn walks_stop_on_the_goal_they_collect() {
        let state = parse_layout("######\n#A.G.#\n######\nsteps_remaining: 20\n").unwrap();
        let config = det_config(3, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = execute_option(&state, OptionId::Right, &config, &mut rng).unwrap();
        assert_eq!(out.k, 2, "the pickup ends the walk");
        assert_eq!(out.next_state.agent, (1, 3));
        assert!(out.next_state.goals.is_empty());
        assert_eq!(out.per_step_rewards, vec![-0.2, 1.8]);
    }

    #[test]
    fn open_space_walks_run_wall_to_wall() {
        // No perpendicular side ever changes from walled to open inside the
        // room, so nothing stops the walk before the far wall.
        let state = parse_layout("#####\n#A..#\n#...#\n#####\nsteps_remaining: 20\n").unwrap();
        let mut with_goal = state.clone();
        with_goal.goals.insert((2, 1));
        let config = det_config(4, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = execute_option(&with_goal, OptionId::Right, &config, &mut rng).unwrap();
        assert_eq!(out.k, 2);
        assert_eq!(out.next_state.agent, (1, 3));
    }

    #[test]
    fn a_long_walk_costs_one_decision() {
        let state = parse_layout("######\n#A..G#\n######\nsteps_remaining: 1\n").unwrap();
        let config = det_config(3, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = execute_option(&state, OptionId::Right, &config, &mut rng).unwrap();
        assert_eq!(out.k, 3, "the walk is not cut short by the last decision");
        assert_eq!(out.next_state.steps_remaining, 0);
        assert!(out.terminal);
        let err = execute_option(&out.next_state, OptionId::Right, &config, &mut rng);
        assert!(err.is_err());
    }

    #[test]
    fn budget_exhaustion_with_goals_left_is_terminal() {
        let state = parse_layout("######\n#A.G.#\n#.#..#\n######\nsteps_remaining: 1\n").unwrap();
        let config = det_config(4, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = execute_option(&state, OptionId::Down, &config, &mut rng).unwrap();
        assert!(out.terminal, "no decisions left");
        assert!(!out.next_state.goals.is_empty());
    }

    #[test]
    fn generation_is_deterministic_and_respects_counts() {
        let config = GridConfig::default();
        let mut r1 = ChaCha8Rng::seed_from_u64(7);
        let mut r2 = ChaCha8Rng::seed_from_u64(7);
        let s1 = generate_episode(&config, &mut r1).unwrap();
        let s2 = generate_episode(&config, &mut r2).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(s1.goals.len(), 8);
        assert_eq!(s1.walls.iter().filter(|&&w| w).count(), config.n_walls);
        assert_eq!(s1.steps_remaining, 20);
        assert!(!s1.wall(s1.agent.0, s1.agent.1));
        assert!(all_goals_reachable(&s1));
    }

    #[test]
    fn zero_goal_config_generates_a_finished_episode() {
        let config = GridConfig { n_goals: 0, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = generate_episode(&config, &mut rng).unwrap();
        assert!(s.goals.is_empty());
        assert!(s.terminal(), "nothing left to collect");
    }

    #[test]
    fn unsatisfiable_config_is_an_input_error() {
        let config = GridConfig { height: 3, width: 3, n_goals: 8, n_walls: 4, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(generate_episode(&config, &mut rng).is_err());
    }

    #[test]
    fn observation_channels_and_time() {
        let config = GridConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = generate_episode(&config, &mut rng).unwrap();
        let obs = observe(&s, &config);
        assert_eq!(obs.time, 1.0);
        let plane = 100;
        let sum = |i: usize| obs.planes[i * plane..(i + 1) * plane].iter().sum::<f64>();
        assert_eq!(sum(0), 1.0);
        assert_eq!(sum(1), 8.0);
        assert_eq!(sum(2), config.n_walls as f64);
    }

    #[test]
    fn render_parse_round_trip() {
        let config = GridConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = generate_episode(&config, &mut rng).unwrap();
        let text = render_state(&s);
        let back = parse_layout(&text).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn reward_identity_over_random_episodes() {
        let config = GridConfig::default();
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut state = generate_episode(&config, &mut rng).unwrap();
            let goals_start = state.goals.len();
            let mut outcomes = Vec::new();
            while !state.terminal() {
                let opt = OptionId::from_index(rng.gen_range(0..4));
                let out = execute_option(&state, opt, &config, &mut rng).unwrap();
                state = out.next_state.clone();
                outcomes.push(out);
            }
            assert!(outcomes.len() <= config.time_limit as usize);
            let steps: u32 = outcomes.iter().map(|o| o.k).sum();
            let collected = (goals_start - state.goals.len()) as f64;
            let total = episode_return(&outcomes);
            assert!((total - (2.0 * collected - 0.2 * steps as f64)).abs() < 1e-9);
            for o in &outcomes {
                assert!(o.k >= 1);
                let mut r = 0.0;
                let mut g = 1.0;
                for &x in &o.per_step_rewards {
                    r += g * x;
                    g *= config.gamma;
                }
                assert_eq!(r, o.r);
                assert_eq!(o.gamma_k, config.gamma.powi(o.k as i32));
                assert_eq!(o.terminal, o.next_state.terminal());
            }
        }
    }

    #[test]
    fn stochastic_goals_move_about_three_in_ten_draws() {
        let config = GridConfig { stochastic: true, n_walls: 0, n_goals: 1, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut moved = 0u32;
        let mut total = 0u32;
        for _ in 0..2000 {
            let mut s = generate_episode(&config, &mut rng).unwrap();
            let before: Vec<Cell> = s.goals.iter().copied().collect();
            move_goals(&mut s, &config, &mut rng);
            let after: Vec<Cell> = s.goals.iter().copied().collect();
            total += 1;
            if before != after {
                moved += 1;
            }
        }
        let frac = moved as f64 / total as f64;
        assert!((frac - 0.3).abs() < 0.04, "moved fraction {frac}");
    }

    #[test]
    fn stochastic_repeat_lengthens_options() {
        // The walk stops where the side corridor opens under column 3; a
        // repeat carries on toward the goal, so with repeats the mean step
        // count must exceed the deterministic one.
        let det = det_config(3, 7);
        let sto = GridConfig { stochastic: true, goal_move_prob: 0.0, ..det.clone() };
        let state = parse_layout("#######\n#A...G#\n###.###\nsteps_remaining: 20\n").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut k_det = 0u64;
        let mut k_sto = 0u64;
        for _ in 0..500 {
            let o1 = execute_option(&state, OptionId::Right, &det, &mut rng).unwrap();
            let o2 = execute_option(&state, OptionId::Right, &sto, &mut rng).unwrap();
            k_det += o1.k as u64;
            k_sto += o2.k as u64;
        }
        assert_eq!(k_det, 2 * 500, "deterministic walk stops at the mouth");
        assert!(k_sto > k_det, "repeats never fired");
    }

    #[test]
    fn goal_on_agent_is_collected_at_next_step_start() {
        // Agent at (1,1); goal placed on the agent cell by hand (as if it
        // wandered there); the next primitive step collects it on its way
        // out, even when that step is a blocked bump.
        let mut state = parse_layout("#####\n#A..#\n#####\nsteps_remaining: 20\n").unwrap();
        state.goals.insert((1, 1));
        state.goals.insert((1, 3));
        let config = det_config(3, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = execute_option(&state, OptionId::Right, &config, &mut rng).unwrap();
        assert_eq!(out.per_step_rewards[0], 1.8);
        assert!(!out.next_state.goals.contains(&(1, 1)));
        let mut state2 = state.clone();
        state2.goals.clear();
        state2.goals.insert((1, 1));
        state2.goals.insert((1, 3));
        let out2 = execute_option(&state2, OptionId::Left, &config, &mut rng).unwrap();
        assert_eq!(out2.k, 1);
        assert_eq!(out2.per_step_rewards, vec![1.8]);
        assert!(!out2.next_state.goals.contains(&(1, 1)));
    }

    #[test]
    fn option_walk_agrees_with_deterministic_execution() {
        let config = GridConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..200 {
            let state = generate_episode(&config, &mut rng).unwrap();
            for opt in OptionId::ALL {
                let (stop, m, cells) = option_walk(&state, state.agent, opt);
                let out = execute_option(&state, opt, &config, &mut rng).unwrap();
                if m == 0 {
                    assert_eq!(out.k, 1, "blocked bump burns a step");
                    assert_eq!(out.next_state.agent, state.agent);
                } else if cells.iter().any(|c| state.goals.contains(c)) {
                    assert!(out.k <= m, "a pickup can only shorten the walk");
                } else {
                    assert_eq!(out.k, m);
                    assert_eq!(out.next_state.agent, stop);
                }
            }
        }
    }

    #[test]
    fn walls_fixed_and_goal_count_non_increasing_deterministic() {
        let config = GridConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut state = generate_episode(&config, &mut rng).unwrap();
        let walls = state.walls.clone();
        let mut goals = state.goals.len();
        while !state.terminal() {
            let opt = OptionId::from_index(rng.gen_range(0..4));
            let out = execute_option(&state, opt, &config, &mut rng).unwrap();
            assert_eq!(out.next_state.walls, walls);
            assert!(out.next_state.goals.len() <= goals);
            goals = out.next_state.goals.len();
            state = out.next_state;
        }
    }
}
