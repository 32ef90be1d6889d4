use std::path::Path;

use vpn_core::gridworld::{execute_option, generate_episode, render_state};
use vpn_core::oracles::{greedy_option, EpisodeOracle, DEFAULT_NODE_BUDGET};
use vpn_core::rng::stream_indexed;

use crate::ConfigArgs;

pub fn run(
    config: &ConfigArgs,
    episodes: usize,
    policy: &str,
    checkpoint: Option<&Path>,
) -> anyhow::Result<()> {
    if checkpoint.is_some() {
        anyhow::bail!("render --checkpoint: not wired up yet");
    }
    let setup = config.load(false)?;
    let grid = &setup.grid;
    for e in 0..episodes {
        let mut gen = stream_indexed(grid.seed, "render-gen", e as u64);
        let mut roll = stream_indexed(grid.seed, "render-roll", e as u64);
        let mut state = generate_episode(grid, &mut gen)?;
        let mut oracle = EpisodeOracle::new(&state, grid, DEFAULT_NODE_BUDGET);
        println!("episode {e} ({policy})");
        println!("{}", render_state(&state));
        let mut total = 0.0;
        while !state.terminal() && !state.goals.is_empty() {
            let opt = match policy {
                "greedy" => greedy_option(&state, grid),
                _ => match oracle.plan(&state)?.options.first() {
                    Some(&o) => o,
                    None => break,
                },
            };
            let out = execute_option(&state, opt, grid, &mut roll).expect("non-terminal");
            total += out.r;
            println!("option {} -> r {:+.2}, steps {}", opt, out.r, out.k);
            println!("{}", render_state(&out.next_state));
            state = out.next_state;
        }
        println!("return {total:.2}\n");
    }
    Ok(())
}
