//! Scratch calibration sweep; not part of the library surface.

use vpn_core::gridworld::{generate_episode, GridConfig};
use vpn_core::oracles::{rollout_greedy, rollout_shortest, DEFAULT_NODE_BUDGET};
use vpn_core::rng::stream_indexed;

fn measure(name: &str, config: &GridConfig, episodes: usize) -> (f64, f64) {
    let mut greedy = 0.0;
    let mut shortest = 0.0;
    for e in 0..episodes {
        let mut gen = stream_indexed(1, &format!("sweep-gen-{name}"), e as u64);
        let state = generate_episode(config, &mut gen).unwrap();
        let mut roll = stream_indexed(1, &format!("sweep-g-{name}"), e as u64);
        greedy += rollout_greedy(&state, config, &mut roll);
        let mut roll = stream_indexed(1, &format!("sweep-s-{name}"), e as u64);
        shortest += rollout_shortest(&state, config, &mut roll, DEFAULT_NODE_BUDGET).unwrap();
    }
    (greedy / episodes as f64, shortest / episodes as f64)
}

fn main() {
    let episodes: usize = std::env::var("VPN_SWEEP_EPISODES")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(600);
    let walls: Vec<usize> = std::env::var("VPN_SWEEP_WALLS")
        .unwrap_or_else(|_| "12".into())
        .split(',')
        .map(|w| w.trim().parse().unwrap())
        .collect();
    let stoch = std::env::var("VPN_SWEEP_STOCH").is_ok_and(|v| v == "1");

    println!(
        "episodes={episodes} goal_stop={} motion_per_step={} stoch={stoch}",
        std::env::var("VPN_GOAL_STOP").unwrap_or_else(|_| "default".into()),
        std::env::var("VPN_MOTION").unwrap_or_else(|_| "default".into()),
    );
    println!("{:>5} {:>10} {:>10} {:>10} {:>10}", "walls", "og_greedy", "og_short", "fg_greedy", "fg_short");
    for &w in &walls {
        let base = GridConfig { n_walls: w, stochastic: stoch, ..Default::default() };
        let fg = base.fewer_goals();
        let (og_g, og_s) = measure(&format!("og{w}{stoch}"), &base, episodes);
        let (fg_g, fg_s) = measure(&format!("fg{w}{stoch}"), &fg, episodes);
        println!("{w:>5} {og_g:>10.4} {og_s:>10.4} {fg_g:>10.4} {fg_s:>10.4}");
    }
}
