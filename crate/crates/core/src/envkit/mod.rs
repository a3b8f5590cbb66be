//! Seeded multi-scene gridworlds. Each scene is a distinct MDP; all scenes
//! share the four-action space and the egocentric observation encoding.

mod env;
mod scene;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use env::{Action, EnvState, Observation, StateKey, StepResult, Termination, N_CELL_CODES};
pub use scene::{generate_scene, Cell, EnvRules, Family, SceneDescriptor};

use crate::rng;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("scene generation failed for seed {seed} after {attempts} attempts")]
    GenerationFailed { seed: u64, attempts: usize },
    #[error("step called on a finished episode")]
    StepAfterDone,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub n_levels: usize,
    /// Family mix; weights need not be normalized.
    pub families: Vec<(Family, f64)>,
    pub width: usize,
    pub height: usize,
    pub obs_window: usize,
    pub n_subgoals: usize,
    pub r_sub: f64,
    pub r_goal: f64,
    pub t_max: usize,
    pub gamma: f64,
    /// Seed of the level set; independent of the training seed so that
    /// different training seeds see the same pool.
    pub level_seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            n_levels: 100,
            families: vec![(Family::Maze, 1.0), (Family::Hazard, 1.0)],
            width: 8,
            height: 8,
            obs_window: 5,
            n_subgoals: 2,
            r_sub: 3.0,
            r_goal: 10.0,
            t_max: 64,
            gamma: 0.99,
            level_seed: 0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let fail = |m: String| Err(EnvError::InvalidConfig(m));
        if self.n_levels < 1 {
            return fail("n_levels must be >= 1".into());
        }
        if self.width < 1 || self.height < 1 {
            return fail("grid must be at least 1x1".into());
        }
        if self.t_max < self.width + self.height {
            return fail(format!("t_max {} < width + height {}", self.t_max, self.width + self.height));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return fail(format!("gamma {} outside (0, 1)", self.gamma));
        }
        if self.obs_window % 2 == 0 {
            return fail(format!("obs_window {} must be odd", self.obs_window));
        }
        if self.families.is_empty() || self.families.iter().any(|&(_, w)| !(w >= 0.0) || !w.is_finite()) {
            return fail("family mix must be non-empty with non-negative weights".into());
        }
        if self.families.iter().map(|f| f.1).sum::<f64>() <= 0.0 {
            return fail("family mix weights sum to zero".into());
        }
        Ok(())
    }

    pub fn rules(&self) -> EnvRules {
        EnvRules { obs_window: self.obs_window, r_sub: self.r_sub, r_goal: self.r_goal, t_max: self.t_max }
    }

    pub fn obs_dim(&self) -> usize {
        Observation::dim(self.obs_window)
    }

    /// Family of level `index`: the family whose cumulative weight interval
    /// contains the level's midpoint `(index + 0.5) / n_levels`.
    pub fn family_of(&self, index: usize) -> Family {
        let total: f64 = self.families.iter().map(|f| f.1).sum();
        let u = (index as f64 + 0.5) / self.n_levels as f64 * total;
        let mut acc = 0.0;
        for &(fam, w) in &self.families {
            acc += w;
            if u < acc {
                return fam;
            }
        }
        self.families.last().map(|f| f.0).unwrap_or(Family::Maze)
    }

    pub fn level_seed_of(&self, index: usize) -> u64 {
        rng::stream_seed(self.level_seed, &format!("level/{index}"))
    }
}

/// Generates the full level set described by `config`.
pub fn build_pool(config: &EnvConfig) -> Result<Vec<SceneDescriptor>, EnvError> {
    config.validate()?;
    (0..config.n_levels)
        .map(|i| {
            let mut s = generate_scene(config.level_seed_of(i), config.family_of(i), config)?;
            s.scene_id = i;
            Ok(s)
        })
        .collect()
}

/// Writes `scenes/<id>.json` under `dir` for every scene.
pub fn export_scenes(dir: &Path, pool: &[SceneDescriptor]) -> Result<(), EnvError> {
    let scenes = dir.join("scenes");
    std::fs::create_dir_all(&scenes)?;
    for s in pool {
        std::fs::write(scenes.join(format!("{}.json", s.scene_id)), serde_json::to_vec_pretty(s)?)?;
    }
    Ok(())
}

pub fn load_scene(path: &Path) -> Result<SceneDescriptor, EnvError> {
    let s: SceneDescriptor = serde_json::from_slice(&std::fs::read(path)?)?;
    s.validate()?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn family_mix_is_proportional() {
        let cfg = EnvConfig {
            n_levels: 10,
            families: vec![(Family::Corridor, 3.0), (Family::Maze, 7.0)],
            ..EnvConfig::default()
        };
        let corridors = (0..10).filter(|&i| cfg.family_of(i) == Family::Corridor).count();
        assert_eq!(corridors, 3);
    }

    #[test]
    fn invalid_configs_rejected() {
        let base = EnvConfig::default();
        for bad in [
            EnvConfig { n_levels: 0, ..base.clone() },
            EnvConfig { gamma: 1.0, ..base.clone() },
            EnvConfig { t_max: 10, ..base.clone() },
            EnvConfig { obs_window: 4, ..base.clone() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn pool_ids_and_json_roundtrip() {
        let cfg = EnvConfig { n_levels: 6, ..EnvConfig::default() };
        let pool = build_pool(&cfg).unwrap();
        assert!(pool.iter().enumerate().all(|(i, s)| s.scene_id == i));
        let dir = std::env::temp_dir().join(format!("dve-scenes-{}", std::process::id()));
        export_scenes(&dir, &pool).unwrap();
        let back = load_scene(&dir.join("scenes/3.json")).unwrap();
        assert_eq!(back, pool[3]);
        std::fs::remove_dir_all(dir).ok();
    }
}
