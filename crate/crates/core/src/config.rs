//! Run configuration: the line-oriented `key = value` format, defaults, and
//! validation. One flat namespace with `env.`, `model.`, and `train.`
//! prefixes; `#` starts a comment. Unknown keys are errors so typos cannot
//! silently fall back to defaults.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::gridworld::GridConfig;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ModelKind {
    Vpn,
    Dqn,
    Opn,
}

impl ModelKind {
    pub fn tag(self) -> &'static str {
        match self {
            ModelKind::Vpn => "vpn",
            ModelKind::Dqn => "dqn",
            ModelKind::Opn => "opn",
        }
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vpn" => Ok(ModelKind::Vpn),
            "dqn" => Ok(ModelKind::Dqn),
            "opn" => Ok(ModelKind::Opn),
            other => Err(Error::config(format!("unknown model kind {other:?} (vpn|dqn|opn)"))),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Training-loop knobs. All step-denominated fields count primitive
/// environment steps (options advance the clock by their step count k).
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Segment length for n-step targets.
    pub n: usize,
    pub workers: usize,
    /// Prediction depth of the k-step loss.
    pub k: usize,
    pub d_train: usize,
    pub d_test: usize,
    pub total_steps: u64,
    /// Target-network sync interval.
    pub target_sync: u64,
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_anneal_steps: u64,
    pub lr: f64,
    pub lr_decay: f64,
    pub lr_decay_interval: u64,
    pub replay_capacity: usize,
    pub replay_prefill: usize,
    /// Replay outcome updates per on-policy update (0 disables replay).
    pub replay_interleave: usize,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub final_eval_episodes: usize,
    pub checkpoint_interval: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n: 10,
            workers: 1,
            k: 3,
            d_train: 3,
            d_test: 3,
            total_steps: 0,
            target_sync: 10_000,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_anneal_steps: 1_000_000,
            lr: 1e-4,
            lr_decay: 0.95,
            lr_decay_interval: 1_000_000,
            replay_capacity: 100_000,
            replay_prefill: 100_000,
            replay_interleave: 1,
            eval_interval: 10_000,
            eval_episodes: 200,
            final_eval_episodes: 1000,
            checkpoint_interval: 100_000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::config("train.n must be >= 1"));
        }
        if self.workers == 0 {
            return Err(Error::config("train.workers must be >= 1"));
        }
        if self.k == 0 || self.d_train == 0 || self.d_test == 0 {
            return Err(Error::config("train.k, train.d_train, train.d_test must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.eps_start) || !(0.0..=1.0).contains(&self.eps_end) {
            return Err(Error::config("epsilon bounds must lie in [0,1]"));
        }
        if self.eps_end > self.eps_start {
            return Err(Error::config("train.eps_end must not exceed train.eps_start"));
        }
        if self.lr <= 0.0 {
            return Err(Error::config("train.lr must be positive"));
        }
        if self.replay_prefill > self.replay_capacity {
            return Err(Error::config("train.replay_prefill exceeds train.replay_capacity"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSetup {
    pub grid: GridConfig,
    pub kind: ModelKind,
    pub train: TrainConfig,
}

impl Default for RunSetup {
    fn default() -> Self {
        RunSetup { grid: GridConfig::default(), kind: ModelKind::Vpn, train: TrainConfig::default() }
    }
}

impl RunSetup {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.train.validate()
    }

    /// Canonical dump of every key, suitable as a config snapshot in run
    /// output directories. Parsing it back yields an equal setup.
    pub fn snapshot(&self) -> String {
        let g = &self.grid;
        let t = &self.train;
        format!(
            "# environment\n\
             env.height = {}\n\
             env.width = {}\n\
             env.goals = {}\n\
             env.walls = {}\n\
             env.time_limit = {}\n\
             env.goal_reward = {}\n\
             env.step_penalty = {}\n\
             env.stochastic = {}\n\
             env.goal_move_prob = {}\n\
             env.option_repeat_prob = {}\n\
             env.gamma = {}\n\
             env.seed = {}\n\
             \n# model\n\
             model.kind = {}\n\
             \n# training\n\
             train.n = {}\n\
             train.workers = {}\n\
             train.k = {}\n\
             train.d_train = {}\n\
             train.d_test = {}\n\
             train.total_steps = {}\n\
             train.target_sync = {}\n\
             train.eps_start = {}\n\
             train.eps_end = {}\n\
             train.eps_anneal_steps = {}\n\
             train.lr = {}\n\
             train.lr_decay = {}\n\
             train.lr_decay_interval = {}\n\
             train.replay_capacity = {}\n\
             train.replay_prefill = {}\n\
             train.replay_interleave = {}\n\
             train.eval_interval = {}\n\
             train.eval_episodes = {}\n\
             train.final_eval_episodes = {}\n\
             train.checkpoint_interval = {}\n\
             train.seed = {}\n",
            g.height,
            g.width,
            g.n_goals,
            g.n_walls,
            g.time_limit,
            g.goal_reward,
            g.step_penalty,
            g.stochastic,
            g.goal_move_prob,
            g.option_repeat_prob,
            g.gamma,
            g.seed,
            self.kind,
            t.n,
            t.workers,
            t.k,
            t.d_train,
            t.d_test,
            t.total_steps,
            t.target_sync,
            t.eps_start,
            t.eps_end,
            t.eps_anneal_steps,
            t.lr,
            t.lr_decay,
            t.lr_decay_interval,
            t.replay_capacity,
            t.replay_prefill,
            t.replay_interleave,
            t.eval_interval,
            t.eval_episodes,
            t.final_eval_episodes,
            t.checkpoint_interval,
            t.seed,
        )
    }
}

fn parse_as<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::config(format!("bad value for {key}: {value:?}")))
}

/// Parse config text over defaults. `require_total_steps` is set by the
/// train path, where a missing budget must be a named-key error rather than
/// a silent zero.
pub fn parse_run_setup(text: &str, require_total_steps: bool) -> Result<RunSetup> {
    let mut setup = RunSetup::default();
    let mut saw_total_steps = false;
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::config(format!("line {}: expected key = value, got {raw:?}", lineno + 1)));
        };
        let key = key.trim();
        let value = value.trim();
        let g = &mut setup.grid;
        let t = &mut setup.train;
        match key {
            "env.height" => g.height = parse_as(key, value)?,
            "env.width" => g.width = parse_as(key, value)?,
            "env.goals" => g.n_goals = parse_as(key, value)?,
            "env.walls" => g.n_walls = parse_as(key, value)?,
            "env.time_limit" => g.time_limit = parse_as(key, value)?,
            "env.goal_reward" => g.goal_reward = parse_as(key, value)?,
            "env.step_penalty" => g.step_penalty = parse_as(key, value)?,
            "env.stochastic" => g.stochastic = parse_as(key, value)?,
            "env.goal_move_prob" => g.goal_move_prob = parse_as(key, value)?,
            "env.option_repeat_prob" => g.option_repeat_prob = parse_as(key, value)?,
            "env.gamma" => g.gamma = parse_as(key, value)?,
            "env.seed" => g.seed = parse_as(key, value)?,
            "model.kind" => setup.kind = value.parse()?,
            "train.n" => t.n = parse_as(key, value)?,
            "train.workers" => t.workers = parse_as(key, value)?,
            "train.k" => t.k = parse_as(key, value)?,
            "train.d_train" => t.d_train = parse_as(key, value)?,
            "train.d_test" => t.d_test = parse_as(key, value)?,
            "train.total_steps" => {
                t.total_steps = parse_as(key, value)?;
                saw_total_steps = true;
            }
            "train.target_sync" => t.target_sync = parse_as(key, value)?,
            "train.eps_start" => t.eps_start = parse_as(key, value)?,
            "train.eps_end" => t.eps_end = parse_as(key, value)?,
            "train.eps_anneal_steps" => t.eps_anneal_steps = parse_as(key, value)?,
            "train.lr" => t.lr = parse_as(key, value)?,
            "train.lr_decay" => t.lr_decay = parse_as(key, value)?,
            "train.lr_decay_interval" => t.lr_decay_interval = parse_as(key, value)?,
            "train.replay_capacity" => t.replay_capacity = parse_as(key, value)?,
            "train.replay_prefill" => t.replay_prefill = parse_as(key, value)?,
            "train.replay_interleave" => t.replay_interleave = parse_as(key, value)?,
            "train.eval_interval" => t.eval_interval = parse_as(key, value)?,
            "train.eval_episodes" => t.eval_episodes = parse_as(key, value)?,
            "train.final_eval_episodes" => t.final_eval_episodes = parse_as(key, value)?,
            "train.checkpoint_interval" => t.checkpoint_interval = parse_as(key, value)?,
            "train.seed" => t.seed = parse_as(key, value)?,
            other => return Err(Error::config(format!("unknown config key: {other}"))),
        }
    }
    if require_total_steps && !saw_total_steps {
        return Err(Error::config("missing required key: train.total_steps"));
    }
    setup.validate()?;
    Ok(setup)
}

pub fn load_run_setup(path: &Path, require_total_steps: bool) -> Result<RunSetup> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
    parse_run_setup(&text, require_total_steps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_snapshot() {
        let mut setup = RunSetup::default();
        setup.train.total_steps = 123;
        setup.grid.stochastic = true;
        let text = setup.snapshot();
        let parsed = parse_run_setup(&text, true).unwrap();
        assert_eq!(parsed, setup);
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let text = "# hello\n\n env.height = 8 # trailing\nenv.width=8\ntrain.total_steps = 10\n";
        let setup = parse_run_setup(text, true).unwrap();
        assert_eq!(setup.grid.height, 8);
        assert_eq!(setup.grid.width, 8);
        assert_eq!(setup.train.total_steps, 10);
    }

    #[test]
    fn unknown_key_is_an_error() {
        let err = parse_run_setup("env.heigth = 8\n", false).unwrap_err();
        assert!(err.to_string().contains("env.heigth"), "{err}");
    }

    #[test]
    fn missing_total_steps_is_named() {
        let err = parse_run_setup("env.height = 8\n", true).unwrap_err();
        assert!(err.to_string().contains("train.total_steps"), "{err}");
        assert!(parse_run_setup("env.height = 8\nenv.width=9\n", false).is_ok());
    }

    #[test]
    fn k1_depth1_aliases_validate() {
        let text = "model.kind = vpn\ntrain.k = 1\ntrain.d_train = 1\ntrain.d_test = 1\n";
        let setup = parse_run_setup(text, false).unwrap();
        assert_eq!((setup.train.k, setup.train.d_train, setup.train.d_test), (1, 1, 1));
    }
}
