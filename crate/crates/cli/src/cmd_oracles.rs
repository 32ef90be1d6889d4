use std::fmt::Write as _;
use std::path::Path;

use vpn_core::oracles::oracle_table;

use crate::out::prepare_dir;
use crate::ConfigArgs;

pub fn run(config: &ConfigArgs, episodes: usize, out: Option<&Path>) -> anyhow::Result<()> {
    let setup = config.load(false)?;
    let rows = oracle_table(&setup.grid, episodes, setup.grid.seed)?;

    let mut csv = String::from("variant,policy,episodes,mean_return,stderr\n");
    for row in &rows {
        writeln!(
            csv,
            "{},{},{},{:.4},{:.4}",
            row.variant, row.policy, row.episodes, row.mean_return, row.stderr
        )?;
    }

    println!("{:<12} {:<9} {:>8} {:>12} {:>8}", "variant", "policy", "episodes", "mean_return", "stderr");
    for row in &rows {
        println!(
            "{:<12} {:<9} {:>8} {:>12.4} {:>8.4}",
            row.variant, row.policy, row.episodes, row.mean_return, row.stderr
        );
    }

    if let Some(dir) = out {
        prepare_dir(dir)?;
        std::fs::write(dir.join("oracles.csv"), csv)?;
        println!("wrote {}", dir.join("oracles.csv").display());
    }
    Ok(())
}
