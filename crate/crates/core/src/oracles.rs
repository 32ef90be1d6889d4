//! Greedy and shortest-path reference policies.
//!
//! Both reason over the option graph: nodes are stop cells, edges are full
//! option walks, and a goal counts as reached the moment its cell is touched
//! mid-walk. The shortest-path search maximizes the return of the trajectory
//! it actually walks; it may stop early, so an unprofitable straggler goal
//! is left alone rather than chased at a loss, and the episode is never
//! padded with idle moves. The search assumes deterministic dynamics even
//! when the episode it serves is stochastic; callers replan after every
//! executed option.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use rand::Rng;

use crate::error::{Error, Result};
use crate::gridworld::{
    episode_return, execute_option, generate_episode, knobs, option_walk, Cell, GridConfig,
    GridState, OptionId,
};
use crate::rng::stream_indexed;

pub const DEFAULT_NODE_BUDGET: u64 = 10_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct Plan {
    pub options: Vec<OptionId>,
    /// Undiscounted return of the plan's own options under deterministic
    /// dynamics. Unused decisions after the plan stops are not charged.
    pub predicted_return: f64,
}

impl Plan {
    pub fn empty() -> Self {
        Plan { options: Vec::new(), predicted_return: 0.0 }
    }
}

/// Minimal primitive steps from the agent to touch any live goal, considering
/// only paths whose first option is `opt`. None if that option cannot move.
fn touch_dist_via(state: &GridState, opt: OptionId) -> Option<u32> {
    let (stop, m, cells) = option_walk(state, state.agent, opt);
    if m == 0 {
        return None;
    }
    let mut best: Option<u32> = None;
    for (j, cell) in cells.iter().enumerate() {
        if state.goals.contains(cell) && *cell != state.agent {
            best = Some(j as u32 + 1);
            break;
        }
    }
    if let Some(rest) = dijkstra_touch(state, stop) {
        let d = m + rest;
        best = Some(best.map_or(d, |b| b.min(d)));
    }
    best
}

/// Minimal primitive steps from `src` (a stop cell) to touch any live goal,
/// via uniform-cost search over option walks. The goal under the agent's own
/// cell is excluded by the caller.
fn dijkstra_touch(state: &GridState, src: Cell) -> Option<u32> {
    let idx = |c: Cell| c.0 * state.width + c.1;
    let n = state.height * state.width;
    let mut dist = vec![u32::MAX; n];
    let mut heap = BinaryHeap::new();
    dist[idx(src)] = 0;
    heap.push(Reverse((0u32, idx(src))));
    let mut best: Option<u32> = None;
    if state.goals.contains(&src) && src != state.agent {
        return Some(0);
    }
    while let Some(Reverse((d, u))) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        if best.is_some_and(|b| d >= b) {
            break;
        }
        let ucell = (u / state.width, u % state.width);
        for opt in OptionId::ALL {
            let (stop, m, cells) = option_walk(state, ucell, opt);
            if m == 0 {
                continue;
            }
            for (j, cell) in cells.iter().enumerate() {
                if state.goals.contains(cell) && *cell != state.agent {
                    let cand = d + j as u32 + 1;
                    if best.map_or(true, |b| cand < b) {
                        best = Some(cand);
                    }
                    break;
                }
            }
            let v = idx(stop);
            if d + m < dist[v] {
                dist[v] = d + m;
                heap.push(Reverse((d + m, v)));
            }
        }
    }
    best
}

/// First option of a minimal-primitive-step option-path to the nearest goal,
/// ties broken by the fixed option order. With no live goal away from the
/// agent (or nothing reachable) any option does equally well, including a
/// goal sitting under the agent, which the next step collects on its way out.
pub fn greedy_option(state: &GridState, _config: &GridConfig) -> OptionId {
    let mut best: Option<(u32, OptionId)> = None;
    for opt in OptionId::ALL {
        if let Some(d) = touch_dist_via(state, opt) {
            if best.map_or(true, |(bd, _)| d < bd) {
                best = Some((d, opt));
            }
        }
    }
    best.map_or(OptionId::Up, |(_, o)| o)
}

/// Precomputed walk from one cell in one direction, on the compact cell
/// indexing. A blocked option has an empty walk: the environment burns one
/// step in place for it, which a deterministic plan never wants.
#[derive(Clone, Debug)]
struct Walk {
    /// Cells entered, in step order (empty for a blocked walk).
    cells: Vec<u8>,
}

/// Per-episode shortest-path searcher. Walls are frozen at construction;
/// the memo persists across replans within the episode, keyed by
/// (agent cell, live-goal bitmask, decisions remaining) and storing the
/// best achievable trajectory return in penalty units.
pub struct EpisodeOracle {
    width: usize,
    n_cells: usize,
    walks: Vec<[Walk; 4]>,
    memo: HashMap<(u8, u128, u8), i32>,
    nodes: u64,
    budget: u64,
    /// Goal reward measured in step penalties (10 at the default 2.0/0.2).
    goal_units: i32,
    step_penalty: f64,
}

impl EpisodeOracle {
    pub fn new(state: &GridState, config: &GridConfig, budget: u64) -> Self {
        let n = state.height * state.width;
        assert!(n <= 128, "shortest-path oracle supports up to 128 cells");
        let units = config.goal_reward / config.step_penalty;
        assert!(
            (units - units.round()).abs() < 1e-9,
            "goal_reward must be an integer multiple of step_penalty"
        );
        let idx = |c: Cell| (c.0 * state.width + c.1) as u8;
        let mut walks = Vec::with_capacity(n);
        for i in 0..n {
            let cell = (i / state.width, i % state.width);
            let per_opt = OptionId::ALL.map(|opt| {
                if state.walls[i] {
                    return Walk { cells: Vec::new() };
                }
                let (_, _, cells) = option_walk(state, cell, opt);
                Walk { cells: cells.into_iter().map(idx).collect() }
            });
            walks.push(per_opt);
        }
        EpisodeOracle {
            width: state.width,
            n_cells: n,
            walks,
            memo: HashMap::new(),
            nodes: 0,
            budget,
            goal_units: units.round() as i32,
            step_penalty: config.step_penalty,
        }
    }

    pub fn nodes_visited(&self) -> u64 {
        self.nodes
    }

    fn agent_index(&self, state: &GridState) -> u8 {
        (state.agent.0 * self.width + state.agent.1) as u8
    }

    fn mask_of(&self, state: &GridState) -> u128 {
        let mut mask = 0u128;
        for &(r, c) in &state.goals {
            mask |= 1u128 << (r * self.width + c);
        }
        mask
    }

    /// Apply one option under deterministic dynamics on the compact state.
    /// The walk sweeps its precomputed cells, ends early on a pickup when
    /// the live walks do, and never runs when the way is blocked (None).
    /// A goal under the agent is collected at the start of the first step.
    /// Returns (next agent, next mask, goals collected, primitive steps).
    fn step_det(&self, agent: u8, mask: u128, opt: OptionId) -> Option<(u8, u128, u32, u32)> {
        let walk = &self.walks[agent as usize][opt.index()];
        if walk.cells.is_empty() {
            return None;
        }
        let mut mask = mask;
        let mut collected = 0u32;
        if mask & (1u128 << agent) != 0 {
            mask &= !(1u128 << agent);
            collected += 1;
        }
        let mut end = agent;
        let mut k = 0u32;
        for &cell in &walk.cells {
            end = cell;
            k += 1;
            if mask & (1u128 << cell) != 0 {
                mask &= !(1u128 << cell);
                collected += 1;
                if knobs::goal_stop() {
                    break;
                }
            }
        }
        Some((end, mask, collected, k))
    }

    /// Best trajectory return from this node in penalty units: the maximum
    /// over stopping now (0) and every movable option. One decision is spent
    /// per option regardless of walk length.
    fn val(&mut self, agent: u8, mask: u128, t: u8) -> Result<i32> {
        if t == 0 || mask == 0 {
            return Ok(0);
        }
        let key = (agent, mask, t);
        if let Some(&v) = self.memo.get(&key) {
            return Ok(v);
        }
        self.nodes += 1;
        if self.nodes > self.budget {
            return Err(Error::BudgetExceeded { visited: self.nodes, budget: self.budget });
        }
        let mut best = 0i32;
        for opt in OptionId::ALL {
            if let Some((na, nm, c, k)) = self.step_det(agent, mask, opt) {
                let v = c as i32 * self.goal_units - k as i32 + self.val(na, nm, t - 1)?;
                best = best.max(v);
            }
        }
        self.memo.insert(key, best);
        Ok(best)
    }

    /// The first option of an optimal plan, or None when stopping is optimal
    /// (nothing profitable is left). Ties go to the fixed option order.
    fn next_option(&mut self, agent: u8, mask: u128, t: u8) -> Result<Option<OptionId>> {
        let v = self.val(agent, mask, t)?;
        if v <= 0 {
            return Ok(None);
        }
        for opt in OptionId::ALL {
            if let Some((na, nm, c, k)) = self.step_det(agent, mask, opt) {
                if c as i32 * self.goal_units - k as i32 + self.val(na, nm, t - 1)? == v {
                    return Ok(Some(opt));
                }
            }
        }
        unreachable!("memoized value lost its best branch")
    }

    /// Full-episode optimal value from `state` under deterministic dynamics:
    /// what the best stopping-allowed trajectory earns.
    pub fn episode_value(&mut self, state: &GridState) -> Result<f64> {
        let t = u8::try_from(state.steps_remaining).expect("time limit fits in u8");
        let v = self.val(self.agent_index(state), self.mask_of(state), t)?;
        Ok(v as f64 * self.step_penalty)
    }

    /// Best deterministic plan from `state`. The plan ends as soon as
    /// stopping is at least as good as going on; the unused remainder of
    /// the budget is not part of it.
    pub fn plan(&mut self, state: &GridState) -> Result<Plan> {
        assert_eq!(state.height * state.width, self.n_cells, "oracle/episode mismatch");
        let mut agent = self.agent_index(state);
        let mut mask = self.mask_of(state);
        let mut t = u8::try_from(state.steps_remaining).expect("time limit fits in u8");
        let root = self.val(agent, mask, t)?;
        let mut remaining = root;
        let mut options = Vec::new();
        while remaining > 0 {
            let mut advanced = false;
            for opt in OptionId::ALL {
                if let Some((na, nm, c, k)) = self.step_det(agent, mask, opt) {
                    let gain = c as i32 * self.goal_units - k as i32;
                    if gain + self.val(na, nm, t - 1)? == remaining {
                        options.push(opt);
                        agent = na;
                        mask = nm;
                        t -= 1;
                        remaining -= gain;
                        advanced = true;
                        break;
                    }
                }
            }
            assert!(advanced, "plan extraction lost the optimal branch");
        }
        Ok(Plan { options, predicted_return: root as f64 * self.step_penalty })
    }
}

/// One-shot shortest-path search (fresh memo); see [`EpisodeOracle`] for the
/// replanning form.
pub fn shortest_path_plan(state: &GridState, config: &GridConfig) -> Result<Plan> {
    EpisodeOracle::new(state, config, DEFAULT_NODE_BUDGET).plan(state)
}

/// Play an episode with the greedy policy to its end. Greedy chases the
/// nearest goal for as long as one exists, profitable or not; only a cleared
/// board or the spent budget stops it. Returns the undiscounted return.
pub fn rollout_greedy<R: Rng>(initial: &GridState, config: &GridConfig, rng: &mut R) -> f64 {
    let mut state = initial.clone();
    let mut outcomes = Vec::new();
    while !state.terminal() {
        let opt = greedy_option(&state, config);
        let out = execute_option(&state, opt, config, rng).expect("non-terminal");
        state = out.next_state.clone();
        outcomes.push(out);
    }
    episode_return(&outcomes)
}

/// Play an episode with the shortest-path policy, replanning after every
/// option (goals move in stochastic mode). The rollout ends at a terminal
/// state or as soon as the plan says stopping is optimal; unused decisions
/// cost nothing. Returns the undiscounted return.
pub fn rollout_shortest<R: Rng>(
    initial: &GridState,
    config: &GridConfig,
    rng: &mut R,
    budget: u64,
) -> Result<f64> {
    let mut oracle = EpisodeOracle::new(initial, config, budget);
    let mut state = initial.clone();
    let mut outcomes = Vec::new();
    while !state.terminal() {
        let t = u8::try_from(state.steps_remaining).expect("time limit fits in u8");
        let agent = oracle.agent_index(&state);
        let mask = oracle.mask_of(&state);
        let Some(first) = oracle.next_option(agent, mask, t)? else {
            break;
        };
        let out = execute_option(&state, first, config, rng).expect("non-terminal");
        state = out.next_state.clone();
        outcomes.push(out);
    }
    Ok(episode_return(&outcomes))
}

#[derive(Clone, Debug)]
pub struct OracleRow {
    pub variant: &'static str,
    pub policy: &'static str,
    pub episodes: usize,
    pub mean_return: f64,
    pub stderr: f64,
}

fn summarize(
    variant: &'static str,
    policy: &'static str,
    returns: &[f64],
) -> OracleRow {
    let n = returns.len();
    let mean = returns.iter().sum::<f64>() / n as f64;
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n.max(2) - 1) as f64;
    OracleRow { variant, policy, episodes: n, mean_return: mean, stderr: (var / n as f64).sqrt() }
}

/// Mean return of both reference policies over seeded episodes, for each
/// environment variant derived from `base`: the base layout, fewer goals,
/// more walls (all deterministic), and the base layout with stochastic
/// dynamics. Both policies see the same episode set per variant; stochastic
/// rollouts draw dynamics noise from policy-specific streams.
pub fn oracle_table(base: &GridConfig, episodes: usize, seed: u64) -> Result<Vec<OracleRow>> {
    let mut variants: Vec<(&'static str, GridConfig)> = vec![
        ("original", base.clone()),
        ("fewer_goals", base.fewer_goals()),
        ("more_walls", base.more_walls()),
    ];
    for (_, config) in &mut variants {
        config.stochastic = false;
    }
    let mut stochastic = base.clone();
    stochastic.stochastic = true;
    variants.push(("stochastic", stochastic));

    let mut rows = Vec::new();
    for (name, config) in &variants {
        let mut greedy = Vec::with_capacity(episodes);
        let mut shortest = Vec::with_capacity(episodes);
        for e in 0..episodes {
            let mut gen = stream_indexed(seed, &format!("oracle-gen-{name}"), e as u64);
            let state = generate_episode(config, &mut gen)?;
            let mut roll = stream_indexed(seed, &format!("oracle-greedy-{name}"), e as u64);
            greedy.push(rollout_greedy(&state, config, &mut roll));
            let mut roll = stream_indexed(seed, &format!("oracle-shortest-{name}"), e as u64);
            shortest.push(rollout_shortest(&state, config, &mut roll, DEFAULT_NODE_BUDGET)?);
        }
        rows.push(summarize(name, "greedy", &greedy));
        rows.push(summarize(name, "shortest", &shortest));
    }
    Ok(rows)
}
