//! Training configuration and the flat `key = value` file format.
//!
//! Blank lines and `#` comments are ignored; unknown keys are errors.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::dvehead::{CcConfig, CcMode};
use crate::envkit::{EnvConfig, Family};
use crate::netcore::{CriticSpec, NetSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CriticMode {
    Baseline,
    Dve,
    SparseDve,
}

impl CriticMode {
    pub fn name(self) -> &'static str {
        match self {
            CriticMode::Baseline => "baseline",
            CriticMode::Dve => "dve",
            CriticMode::SparseDve => "sparse-dve",
        }
    }

    pub const ALL: [CriticMode; 3] = [CriticMode::Baseline, CriticMode::Dve, CriticMode::SparseDve];
}

impl FromStr for CriticMode {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "baseline" => Ok(CriticMode::Baseline),
            "dve" => Ok(CriticMode::Dve),
            "sparse-dve" => Ok(CriticMode::SparseDve),
            other => Err(TrainError::Config(format!("unknown mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub critic_mode: CriticMode,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub learning_rate: f64,
    pub max_grad_norm: f64,
    pub epochs_per_update: usize,
    /// Trajectories per minibatch.
    pub minibatch_size: usize,
    pub n_workers: usize,
    pub steps_per_worker_per_update: usize,
    pub total_env_steps: u64,
    pub seed: u64,
    pub normalize_advantages: bool,
    pub n_b: usize,
    pub cc: CcConfig,
    pub plateau_window: usize,
    pub plateau_slope: f64,
    /// Updates over which the gated loss weight rises from 0 to 1.
    pub cc_ramp_updates: usize,
    pub trunk: Vec<usize>,
    pub hidden: usize,
    pub env: EnvConfig,
    /// Label of the scene suite, used by benchmark tables.
    pub suite: String,
    pub bench_seeds: usize,
    pub bench_modes: Vec<CriticMode>,
    /// Trailing updates averaged into a run's final score.
    pub final_window: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            critic_mode: CriticMode::Baseline,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            entropy_coef: 0.01,
            value_coef: 0.5,
            learning_rate: 2.5e-4,
            max_grad_norm: 0.5,
            epochs_per_update: 3,
            minibatch_size: 4,
            n_workers: 4,
            steps_per_worker_per_update: 256,
            total_env_steps: 1_000_000,
            seed: 0,
            normalize_advantages: true,
            n_b: 3,
            cc: CcConfig::default(),
            plateau_window: 20,
            plateau_slope: 0.1,
            cc_ramp_updates: 10,
            trunk: vec![64, 64],
            hidden: 64,
            env: EnvConfig::default(),
            suite: "mixed".into(),
            bench_seeds: 4,
            bench_modes: CriticMode::ALL.to_vec(),
            final_window: 10,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T, TrainError> {
    v.trim().parse().map_err(|_| TrainError::Config(format!("bad value '{v}' for key '{key}'")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>, TrainError> {
    v.split(',').filter(|s| !s.trim().is_empty()).map(|s| parse(key, s)).collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), TrainError> {
        let v = value.trim();
        match key.trim() {
            "mode" | "critic_mode" => self.critic_mode = v.parse()?,
            "gamma" => {
                self.gamma = parse(key, v)?;
                self.env.gamma = self.gamma;
            }
            "gae_lambda" => self.gae_lambda = parse(key, v)?,
            "clip_eps" => self.clip_eps = parse(key, v)?,
            "entropy_coef" => self.entropy_coef = parse(key, v)?,
            "value_coef" => self.value_coef = parse(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "max_grad_norm" => self.max_grad_norm = parse(key, v)?,
            "epochs_per_update" => self.epochs_per_update = parse(key, v)?,
            "minibatch_size" => self.minibatch_size = parse(key, v)?,
            "n_workers" => self.n_workers = parse(key, v)?,
            "steps_per_worker_per_update" => self.steps_per_worker_per_update = parse(key, v)?,
            "total_env_steps" => self.total_env_steps = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "normalize_advantages" => self.normalize_advantages = parse(key, v)?,
            "n_b" => self.n_b = parse(key, v)?,
            "k1" => self.cc.k1 = parse(key, v)?,
            "k2" => self.cc.k2 = parse(key, v)?,
            "epsilon_log" => self.cc.epsilon_log = parse(key, v)?,
            "cc_mode" => {
                self.cc.mode = match v.to_ascii_lowercase().as_str() {
                    "class1" | "class-1" => CcMode::Class1,
                    "class2" | "class-2" => CcMode::Class2,
                    _ => return Err(TrainError::Config(format!("bad cc_mode '{v}'"))),
                }
            }
            "pretrain_steps" => self.cc.pretrain_steps = parse(key, v)?,
            "plateau_window" => self.plateau_window = parse(key, v)?,
            "plateau_slope" => self.plateau_slope = parse(key, v)?,
            "cc_ramp_updates" => self.cc_ramp_updates = parse(key, v)?,
            "trunk" => self.trunk = parse_list(key, v)?,
            "hidden" => self.hidden = parse(key, v)?,
            "n_levels" => self.env.n_levels = parse(key, v)?,
            "families" => {
                self.env.families = v
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|item| {
                        let (name, w) = item.split_once(':').unwrap_or((item, "1"));
                        let fam: Family = name.parse().map_err(|e| TrainError::Config(format!("{e}")))?;
                        Ok((fam, parse::<f64>(key, w)?))
                    })
                    .collect::<Result<_, TrainError>>()?
            }
            "width" => self.env.width = parse(key, v)?,
            "height" => self.env.height = parse(key, v)?,
            "obs_window" => self.env.obs_window = parse(key, v)?,
            "n_subgoals" => self.env.n_subgoals = parse(key, v)?,
            "r_sub" => self.env.r_sub = parse(key, v)?,
            "r_goal" => self.env.r_goal = parse(key, v)?,
            "t_max" => self.env.t_max = parse(key, v)?,
            "level_seed" => self.env.level_seed = parse(key, v)?,
            "suite" => self.suite = v.to_string(),
            "bench_seeds" => self.bench_seeds = parse(key, v)?,
            "bench_modes" => self.bench_modes = parse_list(key, v)?,
            "final_window" => self.final_window = parse(key, v)?,
            other => return Err(TrainError::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines on top of the defaults.
    pub fn from_text(text: &str) -> Result<Self, TrainError> {
        let mut cfg = TrainConfig::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| TrainError::Config(format!("line {}: expected 'key = value'", n + 1)))?;
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    /// Every key with its effective value, in a stable order, such that
    /// `from_text(to_text())` reproduces the config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let c = &self.cc;
        let e = &self.env;
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("mode", self.critic_mode.name().into());
        kv("seed", self.seed.to_string());
        kv("total_env_steps", self.total_env_steps.to_string());
        kv("n_workers", self.n_workers.to_string());
        kv("steps_per_worker_per_update", self.steps_per_worker_per_update.to_string());
        kv("epochs_per_update", self.epochs_per_update.to_string());
        kv("minibatch_size", self.minibatch_size.to_string());
        kv("learning_rate", format!("{:?}", self.learning_rate));
        kv("max_grad_norm", format!("{:?}", self.max_grad_norm));
        kv("gamma", format!("{:?}", self.gamma));
        kv("gae_lambda", format!("{:?}", self.gae_lambda));
        kv("clip_eps", format!("{:?}", self.clip_eps));
        kv("entropy_coef", format!("{:?}", self.entropy_coef));
        kv("value_coef", format!("{:?}", self.value_coef));
        kv("normalize_advantages", self.normalize_advantages.to_string());
        kv("n_b", self.n_b.to_string());
        kv("k1", format!("{:?}", c.k1));
        kv("k2", format!("{:?}", c.k2));
        kv("epsilon_log", format!("{:?}", c.epsilon_log));
        kv("cc_mode", if c.mode == CcMode::Class1 { "class1" } else { "class2" }.into());
        kv("pretrain_steps", c.pretrain_steps.to_string());
        kv("plateau_window", self.plateau_window.to_string());
        kv("plateau_slope", format!("{:?}", self.plateau_slope));
        kv("cc_ramp_updates", self.cc_ramp_updates.to_string());
        kv("trunk", join(&self.trunk));
        kv("hidden", self.hidden.to_string());
        kv("n_levels", e.n_levels.to_string());
        kv("families", e.families.iter().map(|(f, w)| format!("{}:{w:?}", f.name())).collect::<Vec<_>>().join(","));
        kv("width", e.width.to_string());
        kv("height", e.height.to_string());
        kv("obs_window", e.obs_window.to_string());
        kv("n_subgoals", e.n_subgoals.to_string());
        kv("r_sub", format!("{:?}", e.r_sub));
        kv("r_goal", format!("{:?}", e.r_goal));
        kv("t_max", e.t_max.to_string());
        kv("level_seed", e.level_seed.to_string());
        kv("suite", self.suite.clone());
        kv("bench_seeds", self.bench_seeds.to_string());
        kv("bench_modes", self.bench_modes.iter().map(|m| m.name()).collect::<Vec<_>>().join(","));
        kv("final_window", self.final_window.to_string());
        s
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return fail("clip_eps must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return fail("gae_lambda must lie in [0, 1]");
        }
        if self.n_workers < 1 {
            return fail("n_workers must be >= 1");
        }
        if self.minibatch_size < 1 || self.epochs_per_update < 1 || self.steps_per_worker_per_update < 1 {
            return fail("minibatch_size, epochs_per_update and steps_per_worker_per_update must be >= 1");
        }
        if self.n_b < 1 {
            return fail("n_b must be >= 1");
        }
        if self.plateau_window < 2 {
            return fail("plateau_window must be >= 2");
        }
        if !(self.learning_rate > 0.0) || !(self.max_grad_norm > 0.0) {
            return fail("learning_rate and max_grad_norm must be positive");
        }
        if self.gamma != self.env.gamma {
            return fail("gamma disagrees with the environment discount");
        }
        self.cc.validate().map_err(|e| TrainError::Config(e.to_string()))?;
        self.env.validate().map_err(|e| TrainError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn net_spec(&self) -> NetSpec {
        let critic = match self.critic_mode {
            CriticMode::Baseline => CriticSpec::Baseline,
            CriticMode::Dve | CriticMode::SparseDve => CriticSpec::Dynamic { n_b: self.n_b },
        };
        NetSpec {
            input_dim: self.env.obs_dim(),
            trunk: self.trunk.clone(),
            hidden: self.hidden,
            n_actions: 4,
            critic,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_roundtrip() {
        let mut cfg = TrainConfig::default();
        cfg.set("mode", "sparse-dve").unwrap();
        cfg.set("families", "corridor:1,hazard:3").unwrap();
        cfg.set("trunk", "32,16").unwrap();
        cfg.set("learning_rate", "0.001").unwrap();
        cfg.set("cc_mode", "class2").unwrap();
        let back = TrainConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn comments_and_errors() {
        let cfg = TrainConfig::from_text("# header\n\nseed = 9 # trailing\nn_b=2\n").unwrap();
        assert_eq!((cfg.seed, cfg.n_b), (9, 2));
        assert!(TrainConfig::from_text("bogus = 1").is_err());
        assert!(TrainConfig::from_text("seed 4").is_err());
        assert!(TrainConfig::from_text("seed = x").is_err());
    }

    #[test]
    fn validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for (k, v) in [("clip_eps", "1.0"), ("gae_lambda", "1.5"), ("n_workers", "0"), ("k1", "-0.1")] {
            let mut c = TrainConfig::default();
            c.set(k, v).unwrap();
            assert!(c.validate().is_err(), "{k}={v} accepted");
        }
    }
}
