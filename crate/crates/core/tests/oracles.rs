//! Search oracles: the memoized shortest-path value must equal naive
//! enumeration on small boards, and greedy must match an independent
//! breadth-first reading of "nearest goal first".

use vpn_core::gridworld::{
    execute_option, generate_episode, Cell, GridConfig, GridState, OptionId,
};
use vpn_core::oracles::{greedy_option, EpisodeOracle, DEFAULT_NODE_BUDGET};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Exhaustive option-tree search driven by the live environment, stopping
/// allowed at every node: the gold value for small instances.
fn enumerate_best(state: &GridState, config: &GridConfig, rng: &mut ChaCha8Rng) -> f64 {
    if state.terminal() {
        return 0.0;
    }
    let mut best = 0.0f64;
    for opt in OptionId::ALL {
        let out = execute_option(state, opt, config, rng).unwrap();
        let v = out.per_step_rewards.iter().sum::<f64>()
            + enumerate_best(&out.next_state, config, rng);
        if v > best {
            best = v;
        }
    }
    best
}

#[test]
fn memoized_search_equals_enumeration_on_500_small_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA4);
    for i in 0..500 {
        let config = GridConfig {
            height: 6,
            width: 6,
            n_goals: (i % 5) as usize,
            n_walls: rng.gen_range(0..=6),
            time_limit: 7,
            ..Default::default()
        };
        let state = generate_episode(&config, &mut rng).unwrap();
        let gold = enumerate_best(&state, &config, &mut rng);
        let mut oracle = EpisodeOracle::new(&state, &config, DEFAULT_NODE_BUDGET);
        let value = oracle.episode_value(&state).unwrap();
        assert!(
            (value - gold).abs() < 1e-9,
            "instance {i}: search {value} vs enumeration {gold}"
        );
    }
}

fn wall_at(state: &GridState, r: i64, c: i64) -> bool {
    if r < 0 || c < 0 || r as usize >= state.height || c as usize >= state.width {
        return true;
    }
    state.wall(r as usize, c as usize)
}

/// Cells entered by one walk from `from`, mirroring the stop rule: end on a
/// blocked next cell or where a perpendicular side opens that was walled
/// beside the previous cell. Goals are ignored; touch distances only care
/// about entering cells.
fn mirror_walk(state: &GridState, from: Cell, opt: OptionId) -> Vec<Cell> {
    let (dr, dc) = opt.delta();
    let perp: [(i64, i64); 2] = match opt {
        OptionId::Up | OptionId::Down => [(0, -1), (0, 1)],
        OptionId::Left | OptionId::Right => [(-1, 0), (1, 0)],
    };
    let mut cells = Vec::new();
    let mut cur = from;
    loop {
        if wall_at(state, cur.0 as i64 + dr, cur.1 as i64 + dc) {
            break;
        }
        let prev = cur;
        cur = ((cur.0 as i64 + dr) as usize, (cur.1 as i64 + dc) as usize);
        cells.push(cur);
        let branch = perp.iter().any(|&(pr, pc)| {
            !wall_at(state, cur.0 as i64 + pr, cur.1 as i64 + pc)
                && wall_at(state, prev.0 as i64 + pr, prev.1 as i64 + pc)
        });
        if branch {
            break;
        }
    }
    cells
}

/// Minimal primitive steps to touch a live goal starting with option `opt`,
/// by plain uniform-cost search over walk stops.
fn mirror_touch_via(state: &GridState, opt: OptionId) -> Option<u32> {
    let first = mirror_walk(state, state.agent, opt);
    if first.is_empty() {
        return None;
    }
    let idx = |c: Cell| c.0 * state.width + c.1;
    let is_goal = |c: &Cell| state.goals.contains(c) && *c != state.agent;
    let mut best: Option<u32> = None;
    let mut dist = vec![u32::MAX; state.height * state.width];
    let mut frontier = Vec::new();
    for (j, cell) in first.iter().enumerate() {
        if is_goal(cell) {
            best = Some(j as u32 + 1);
            break;
        }
    }
    let stop = *first.last().unwrap();
    dist[idx(stop)] = first.len() as u32;
    frontier.push(stop);
    while let Some(u) = {
        // Smallest-distance frontier cell; boards are tiny, a scan will do.
        frontier.sort_by_key(|c| std::cmp::Reverse(dist[idx(*c)]));
        frontier.pop()
    } {
        let du = dist[idx(u)];
        if best.is_some_and(|b| du >= b) {
            break;
        }
        for o in OptionId::ALL {
            let cells = mirror_walk(state, u, o);
            if cells.is_empty() {
                continue;
            }
            for (j, cell) in cells.iter().enumerate() {
                if is_goal(cell) {
                    let cand = du + j as u32 + 1;
                    if best.map_or(true, |b| cand < b) {
                        best = Some(cand);
                    }
                    break;
                }
            }
            let v = *cells.last().unwrap();
            let dv = du + cells.len() as u32;
            if dv < dist[idx(v)] {
                dist[idx(v)] = dv;
                frontier.push(v);
            }
        }
    }
    best
}

fn mirror_greedy(state: &GridState) -> OptionId {
    let mut best: Option<(u32, OptionId)> = None;
    for opt in OptionId::ALL {
        if let Some(d) = mirror_touch_via(state, opt) {
            if best.map_or(true, |(bd, _)| d < bd) {
                best = Some((d, opt));
            }
        }
    }
    best.map_or(OptionId::Up, |(_, o)| o)
}

#[test]
fn greedy_matches_breadth_first_oracle_on_1000_states() {
    let config = GridConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0xBF);
    let mut checked = 0;
    while checked < 1000 {
        let mut state = generate_episode(&config, &mut rng).unwrap();
        let open: Vec<Cell> = (0..100)
            .filter(|&i| !state.walls[i])
            .map(|i| (i / 10, i % 10))
            .collect();
        state.agent = open[rng.gen_range(0..open.len())];
        let goals: Vec<Cell> = state.goals.iter().copied().collect();
        for g in goals {
            if rng.gen_bool(0.3) {
                state.goals.remove(&g);
            }
        }
        if state.goals.is_empty() {
            continue;
        }
        assert_eq!(greedy_option(&state, &config), mirror_greedy(&state), "state:\n{state:?}");
        checked += 1;
    }
}
