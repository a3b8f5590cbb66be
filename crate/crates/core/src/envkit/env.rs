use serde::{Deserialize, Serialize};

use super::{Cell, EnvError, SceneDescriptor};

/// Cell codes in one-hot channel order.
pub const N_CELL_CODES: usize = 6;
const EMPTY: usize = 0;
const WALL: usize = 1;
const HAZARD: usize = 2;
const SUBGOAL: usize = 3;
const GOAL: usize = 4;
const OUT_OF_BOUNDS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Action {
        Action::ALL[i]
    }

    fn delta(self) -> (isize, isize) {
        match self {
            Action::Up => (0, -1),
            Action::Down => (0, 1),
            Action::Left => (-1, 0),
            Action::Right => (1, 0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Termination {
    Goal,
    Hazard,
    Timeout,
    Running,
}

/// Egocentric window, one-hot per cell, flattened row-major, followed by the
/// fraction of the step budget still remaining.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation(pub Vec<f64>);

impl Observation {
    pub fn dim(obs_window: usize) -> usize {
        obs_window * obs_window * N_CELL_CODES + 1
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub termination_cause: Termination,
}

/// Fully determines the remaining dynamics of an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateKey {
    pub x: usize,
    pub y: usize,
    pub claimed: u32,
    pub t: usize,
}

/// Mutable episode state over a borrowed scene. Independent instances can be
/// stepped from different threads.
#[derive(Debug, Clone)]
pub struct EnvState<'a> {
    scene: &'a SceneDescriptor,
    pos: Cell,
    t: usize,
    claimed: Vec<bool>,
    cause: Termination,
}

impl<'a> EnvState<'a> {
    pub fn reset(scene: &'a SceneDescriptor) -> (Self, Observation) {
        let state = EnvState {
            scene,
            pos: scene.start,
            t: 0,
            claimed: vec![false; scene.subgoals.len()],
            cause: Termination::Running,
        };
        let obs = state.observe();
        (state, obs)
    }

    pub fn scene(&self) -> &'a SceneDescriptor {
        self.scene
    }

    pub fn position(&self) -> Cell {
        self.pos
    }

    pub fn steps(&self) -> usize {
        self.t
    }

    pub fn done(&self) -> bool {
        self.cause != Termination::Running
    }

    pub fn termination(&self) -> Termination {
        self.cause
    }

    pub fn key(&self) -> StateKey {
        let claimed = self.claimed.iter().enumerate().fold(0u32, |m, (i, &c)| m | ((c as u32) << i));
        StateKey { x: self.pos.x, y: self.pos.y, claimed, t: self.t }
    }

    /// Builds the state a key describes. `None` if the key is not a legal
    /// running state of this scene.
    pub fn from_key(scene: &'a SceneDescriptor, key: StateKey) -> Option<Self> {
        let pos = Cell::new(key.x, key.y);
        if pos.x >= scene.width || pos.y >= scene.height || key.t >= scene.rules.t_max {
            return None;
        }
        if scene.is_wall(pos) || scene.is_hazard(pos) || pos == scene.goal {
            return None;
        }
        let claimed = (0..scene.subgoals.len()).map(|i| key.claimed >> i & 1 == 1).collect();
        Some(EnvState { scene, pos, t: key.t, claimed, cause: Termination::Running })
    }

    fn code_at(&self, x: isize, y: isize) -> usize {
        let s = self.scene;
        if x < 0 || y < 0 || x >= s.width as isize || y >= s.height as isize {
            return OUT_OF_BOUNDS;
        }
        let c = Cell::new(x as usize, y as usize);
        if s.is_wall(c) {
            WALL
        } else if s.is_hazard(c) {
            HAZARD
        } else if c == s.goal {
            GOAL
        } else if s.subgoal_index(c).is_some_and(|i| !self.claimed[i]) {
            SUBGOAL
        } else {
            EMPTY
        }
    }

    pub fn observe(&self) -> Observation {
        let k = self.scene.rules.obs_window;
        let half = (k / 2) as isize;
        let mut v = vec![0.0; Observation::dim(k)];
        for wy in 0..k {
            for wx in 0..k {
                let code = self.code_at(self.pos.x as isize + wx as isize - half, self.pos.y as isize + wy as isize - half);
                v[(wy * k + wx) * N_CELL_CODES + code] = 1.0;
            }
        }
        let t_max = self.scene.rules.t_max;
        v[k * k * N_CELL_CODES] = (t_max - self.t.min(t_max)) as f64 / t_max as f64;
        Observation(v)
    }

    pub fn step(&mut self, action: Action) -> Result<StepResult, EnvError> {
        if self.done() {
            return Err(EnvError::StepAfterDone);
        }
        let s = self.scene;
        let (dx, dy) = action.delta();
        let (nx, ny) = (self.pos.x as isize + dx, self.pos.y as isize + dy);
        if nx >= 0 && ny >= 0 && nx < s.width as isize && ny < s.height as isize {
            let next = Cell::new(nx as usize, ny as usize);
            if !s.is_wall(next) {
                self.pos = next;
            }
        }
        self.t += 1;
        let mut reward = 0.0;
        if s.is_hazard(self.pos) {
            self.cause = Termination::Hazard;
        } else if self.pos == s.goal {
            reward = s.rules.r_goal;
            self.cause = Termination::Goal;
        } else {
            if let Some(i) = s.subgoal_index(self.pos) {
                if !self.claimed[i] {
                    self.claimed[i] = true;
                    reward = s.rules.r_sub;
                }
            }
            if self.t >= s.rules.t_max {
                self.cause = Termination::Timeout;
            }
        }
        Ok(StepResult { observation: self.observe(), reward, done: self.done(), termination_cause: self.cause })
    }
}
