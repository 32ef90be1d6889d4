//! Environment oracle: a literal single-step simulator, written against the
//! rule text rather than the library internals, must agree with
//! execute_option everywhere.

use vpn_core::gridworld::{
    episode_return, execute_option, generate_episode, Cell, GridConfig, GridState, OptionId,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn wall_at(state: &GridState, r: i64, c: i64) -> bool {
    if r < 0 || c < 0 || r as usize >= state.height || c as usize >= state.width {
        return true;
    }
    state.wall(r as usize, c as usize)
}

/// Deterministic mirror of one option: the agent steps cell by cell in the
/// chosen direction, collecting what it lands on; the walk ends on a pickup,
/// when the next cell is blocked, or on a cell where a perpendicular side is
/// open that was walled beside the previous cell. An option aimed at a wall
/// burns one step in place. One decision is spent either way.
fn brute_force_option(state: &GridState, opt: OptionId) -> (Cell, u32, Vec<f64>) {
    let (dr, dc) = opt.delta();
    let perp: [(i64, i64); 2] = match opt {
        OptionId::Up | OptionId::Down => [(0, -1), (0, 1)],
        OptionId::Left | OptionId::Right => [(-1, 0), (1, 0)],
    };
    let mut agent = state.agent;
    let mut goals = state.goals.clone();
    let mut per_step = Vec::new();
    if wall_at(state, agent.0 as i64 + dr, agent.1 as i64 + dc) {
        let gained = if goals.remove(&agent) { 2.0 } else { 0.0 };
        per_step.push(gained - 0.2);
        return (agent, 1, per_step);
    }
    loop {
        let mut gained = 0.0;
        if goals.remove(&agent) {
            gained += 2.0;
        }
        let prev = agent;
        agent = ((agent.0 as i64 + dr) as usize, (agent.1 as i64 + dc) as usize);
        if goals.remove(&agent) {
            gained += 2.0;
        }
        per_step.push(gained - 0.2);
        if gained > 0.0 {
            break;
        }
        if wall_at(state, agent.0 as i64 + dr, agent.1 as i64 + dc) {
            break;
        }
        let branch = perp.iter().any(|&(pr, pc)| {
            !wall_at(state, agent.0 as i64 + pr, agent.1 as i64 + pc)
                && wall_at(state, prev.0 as i64 + pr, prev.1 as i64 + pc)
        });
        if branch {
            break;
        }
    }
    (agent, per_step.len() as u32, per_step)
}

/// A mid-episode state with a random agent position, goal subset, and
/// remaining budget, on a freshly generated layout.
fn random_state<R: Rng>(config: &GridConfig, rng: &mut R) -> GridState {
    let mut state = generate_episode(config, rng).unwrap();
    let open: Vec<Cell> = (0..state.height * state.width)
        .filter(|&i| !state.walls[i])
        .map(|i| (i / state.width, i % state.width))
        .collect();
    state.agent = open[rng.gen_range(0..open.len())];
    let goals: Vec<Cell> = state.goals.iter().copied().collect();
    for g in goals {
        if g == state.agent || rng.gen_bool(0.3) {
            state.goals.remove(&g);
        }
    }
    state.steps_remaining = rng.gen_range(1..=config.time_limit);
    state
}

#[test]
fn execute_option_matches_brute_force_on_10k_deterministic_states() {
    let config = GridConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0xA3);
    let mut checked = 0u32;
    while checked < 10_000 {
        let state = random_state(&config, &mut rng);
        if state.terminal() {
            continue;
        }
        for opt in OptionId::ALL {
            let (cell, k, per_step) = brute_force_option(&state, opt);
            let out = execute_option(&state, opt, &config, &mut rng).unwrap();
            assert_eq!(out.next_state.agent, cell, "stop cell diverged");
            assert_eq!(out.k, k, "step count diverged");
            assert_eq!(out.per_step_rewards, per_step, "per-step rewards diverged");
            let mut r = 0.0;
            let mut g = 1.0;
            for &x in &per_step {
                r += g * x;
                g *= config.gamma;
            }
            assert!((out.r - r).abs() < 1e-12, "discounted reward diverged");
            assert_eq!(out.next_state.steps_remaining, state.steps_remaining - 1);
            checked += 1;
        }
    }
}

#[test]
fn option_outcome_identities_hold_on_10k_stochastic_outcomes() {
    let config = GridConfig { stochastic: true, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(0xB3);
    let mut checked = 0u32;
    while checked < 10_000 {
        let state = random_state(&config, &mut rng);
        if state.terminal() {
            continue;
        }
        let opt = OptionId::from_index(rng.gen_range(0..4));
        let out = execute_option(&state, opt, &config, &mut rng).unwrap();
        assert!(out.k >= 1);
        assert_eq!(out.k as usize, out.per_step_rewards.len());
        assert_eq!(out.next_state.steps_remaining, state.steps_remaining - 1);
        let mut r = 0.0;
        let mut g = 1.0;
        for &x in &out.per_step_rewards {
            r += g * x;
            g *= config.gamma;
        }
        assert!((out.r - r).abs() < 1e-12);
        assert!((out.gamma_k - config.gamma.powi(out.k as i32)).abs() < 1e-15);
        assert_eq!(out.terminal, out.next_state.terminal());
        checked += 1;
    }
}

#[test]
fn random_play_spends_at_most_the_decision_budget() {
    let config = GridConfig { stochastic: true, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(0xC3);
    for _ in 0..50 {
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
        let collected = (goals_start - state.goals.len()) as f64;
        let steps: u32 = outcomes.iter().map(|o| o.k).sum();
        let total = episode_return(&outcomes);
        assert!((total - (2.0 * collected - 0.2 * f64::from(steps))).abs() < 1e-9);
    }
}
