use std::collections::VecDeque;
use std::fmt;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{EnvConfig, EnvError};
use crate::rng;

const MAX_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Family {
    /// A single open row; start on the left edge, goal on the right edge.
    Corridor,
    /// Scattered wall blocks with subgoals; no hazards.
    Maze,
    /// Open room seeded with terminating hazard cells and subgoals.
    Hazard,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Corridor => "corridor",
            Family::Maze => "maze",
            Family::Hazard => "hazard",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "corridor" => Ok(Family::Corridor),
            "maze" => Ok(Family::Maze),
            "hazard" => Ok(Family::Hazard),
            other => Err(EnvError::InvalidConfig(format!("unknown family '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

impl Cell {
    pub const fn new(x: usize, y: usize) -> Self {
        Cell { x, y }
    }

    fn manhattan(self, other: Cell) -> usize {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }
}

/// Per-scene reward and episode rules, carried on the descriptor so that a
/// scene file fully determines its MDP.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvRules {
    pub obs_window: usize,
    pub r_sub: f64,
    pub r_goal: f64,
    pub t_max: usize,
}

/// One procedurally generated level, i.e. one MDP of the training set.
///
/// Grids are indexed `[y][x]` with `y = 0` as the top row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDescriptor {
    pub scene_id: usize,
    pub seed: u64,
    pub family: Family,
    pub width: usize,
    pub height: usize,
    pub walls: Vec<Vec<bool>>,
    pub hazards: Vec<Vec<bool>>,
    pub subgoals: Vec<Cell>,
    pub goal: Cell,
    pub start: Cell,
    pub rules: EnvRules,
}

impl SceneDescriptor {
    pub fn is_wall(&self, c: Cell) -> bool {
        self.walls[c.y][c.x]
    }

    pub fn is_hazard(&self, c: Cell) -> bool {
        self.hazards[c.y][c.x]
    }

    pub fn subgoal_index(&self, c: Cell) -> Option<usize> {
        self.subgoals.iter().position(|&s| s == c)
    }

    /// Largest undiscounted return any episode can collect.
    pub fn max_return(&self) -> f64 {
        self.rules.r_goal + self.rules.r_sub * self.subgoals.len() as f64
    }

    fn neighbours(&self, c: Cell) -> impl Iterator<Item = Cell> + '_ {
        let (w, h) = (self.width as isize, self.height as isize);
        [(0isize, -1isize), (0, 1), (-1, 0), (1, 0)]
            .into_iter()
            .filter_map(move |(dx, dy)| {
                let (nx, ny) = (c.x as isize + dx, c.y as isize + dy);
                (nx >= 0 && ny >= 0 && nx < w && ny < h).then(|| Cell::new(nx as usize, ny as usize))
            })
    }

    /// Breadth-first distance from `from` to `to` through non-wall,
    /// non-hazard cells.
    pub fn path_len(&self, from: Cell, to: Cell) -> Option<usize> {
        let mut dist = vec![vec![usize::MAX; self.width]; self.height];
        let mut queue = VecDeque::new();
        dist[from.y][from.x] = 0;
        queue.push_back(from);
        while let Some(c) = queue.pop_front() {
            if c == to {
                return Some(dist[c.y][c.x]);
            }
            for n in self.neighbours(c) {
                if self.is_wall(n) || self.is_hazard(n) || dist[n.y][n.x] != usize::MAX {
                    continue;
                }
                // Goal terminates the episode, so no path may pass through it.
                if n == self.goal && n != to {
                    continue;
                }
                dist[n.y][n.x] = dist[c.y][c.x] + 1;
                queue.push_back(n);
            }
        }
        None
    }

    /// Checks every structural invariant of a descriptor.
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::InvalidScene(m.to_string()));
        if self.walls.len() != self.height || self.hazards.len() != self.height {
            return bad("grid height mismatch");
        }
        if self.walls.iter().chain(&self.hazards).any(|r| r.len() != self.width) {
            return bad("grid width mismatch");
        }
        let inside = |c: Cell| c.x < self.width && c.y < self.height;
        let mut special = vec![self.start, self.goal];
        special.extend(&self.subgoals);
        if !special.iter().all(|&c| inside(c)) {
            return bad("cell out of bounds");
        }
        for (i, &a) in special.iter().enumerate() {
            if self.is_wall(a) || self.is_hazard(a) {
                return bad("special cell on wall or hazard");
            }
            if special[i + 1..].contains(&a) {
                return bad("overlapping special cells");
            }
        }
        for y in 0..self.height {
            for x in 0..self.width {
                if self.walls[y][x] && self.hazards[y][x] {
                    return bad("hazard inside wall");
                }
            }
        }
        if self.path_len(self.start, self.goal).is_none() {
            return bad("goal unreachable");
        }
        Ok(())
    }

    pub fn ascii(&self) -> String {
        let mut out = String::with_capacity((self.width + 1) * self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                let c = Cell::new(x, y);
                let ch = if c == self.start {
                    'S'
                } else if c == self.goal {
                    'G'
                } else if self.subgoal_index(c).is_some() {
                    'o'
                } else if self.is_wall(c) {
                    '#'
                } else if self.is_hazard(c) {
                    'x'
                } else {
                    '.'
                };
                out.push(ch);
            }
            out.push('\n');
        }
        out
    }
}

impl fmt::Display for SceneDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "scene {} ({}, seed {}, {}x{})",
            self.scene_id,
            self.family.name(),
            self.seed,
            self.width,
            self.height
        )?;
        f.write_str(&self.ascii())
    }
}

/// Generates one scene. Deterministic in `(seed, family, config)`; the
/// returned descriptor has `scene_id = 0`.
pub fn generate_scene(seed: u64, family: Family, config: &EnvConfig) -> Result<SceneDescriptor, EnvError> {
    config.validate()?;
    let mut rng = rng::stream(seed, &format!("scene/{}", family.name()));
    let rules = config.rules();
    for _ in 0..MAX_ATTEMPTS {
        let candidate = match family {
            Family::Corridor => corridor(&mut rng, config),
            Family::Maze => scattered(&mut rng, config, 0.25, 0.0),
            Family::Hazard => scattered(&mut rng, config, 0.05, 0.15),
        };
        let Some((walls, hazards, start, goal, subgoals)) = candidate else {
            continue;
        };
        let scene = SceneDescriptor {
            scene_id: 0,
            seed,
            family,
            width: config.width,
            height: config.height,
            walls,
            hazards,
            subgoals,
            goal,
            start,
            rules,
        };
        let subgoals_reachable = scene.subgoals.iter().all(|&s| scene.path_len(scene.start, s).is_some());
        if subgoals_reachable && scene.validate().is_ok() {
            return Ok(scene);
        }
    }
    Err(EnvError::GenerationFailed { seed, attempts: MAX_ATTEMPTS })
}

type Layout = (Vec<Vec<bool>>, Vec<Vec<bool>>, Cell, Cell, Vec<Cell>);

fn corridor(rng: &mut rng::Rng, config: &EnvConfig) -> Option<Layout> {
    let (w, h) = (config.width, config.height);
    if w < 2 {
        return None;
    }
    let row = rng.gen_range(0..h);
    let mut walls = vec![vec![true; w]; h];
    walls[row].iter_mut().for_each(|c| *c = false);
    Some((walls, vec![vec![false; w]; h], Cell::new(0, row), Cell::new(w - 1, row), Vec::new()))
}

fn scattered(rng: &mut rng::Rng, config: &EnvConfig, wall_p: f64, hazard_p: f64) -> Option<Layout> {
    let (w, h) = (config.width, config.height);
    let mut walls = vec![vec![false; w]; h];
    let mut hazards = vec![vec![false; w]; h];
    for y in 0..h {
        for x in 0..w {
            let u: f64 = rng.gen();
            if u < wall_p {
                walls[y][x] = true;
            } else if u < wall_p + hazard_p {
                hazards[y][x] = true;
            }
        }
    }
    let free: Vec<Cell> = (0..h)
        .flat_map(|y| (0..w).map(move |x| Cell::new(x, y)))
        .filter(|c| !walls[c.y][c.x] && !hazards[c.y][c.x])
        .collect();
    if free.len() < 2 + config.n_subgoals {
        return None;
    }
    let start = free[rng.gen_range(0..free.len())];
    let min_dist = (w + h) / 2;
    let far: Vec<Cell> = free.iter().copied().filter(|c| c.manhattan(start) >= min_dist).collect();
    if far.is_empty() {
        return None;
    }
    let goal = far[rng.gen_range(0..far.len())];
    let mut rest: Vec<Cell> = free.into_iter().filter(|&c| c != start && c != goal).collect();
    let mut subgoals = Vec::with_capacity(config.n_subgoals);
    for _ in 0..config.n_subgoals {
        subgoals.push(rest.swap_remove(rng.gen_range(0..rest.len())));
    }
    Some((walls, hazards, start, goal, subgoals))
}
