use serde::{Deserialize, Serialize};

use super::{Observation, StepFlags, Transition};
use crate::error::{arg_err, config_err, Error, Result};

/// Grid coordinate; serialised as `[x, y]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

impl Cell {
    pub const fn new(x: usize, y: usize) -> Self {
        Cell { x, y }
    }
}

impl From<[usize; 2]> for Cell {
    fn from([x, y]: [usize; 2]) -> Self {
        Cell { x, y }
    }
}

impl From<Cell> for [usize; 2] {
    fn from(c: Cell) -> Self {
        [c.x, c.y]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(usize)]
pub enum GridAction {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
}

impl GridAction {
    pub fn from_index(index: usize) -> Option<Self> {
        Some(match index {
            0 => GridAction::Up,
            1 => GridAction::Down,
            2 => GridAction::Left,
            3 => GridAction::Right,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridNavConfig {
    pub width: usize,
    pub height: usize,
    pub start: Cell,
    pub target: Cell,
    pub max_steps: usize,
    pub desired_cells: Vec<Cell>,
    pub undesired_cells: Vec<Cell>,
    /// When set, each episode starts in a cell drawn uniformly (from the
    /// reset seed) from this inclusive rectangle, target excluded, instead
    /// of at `start`.
    pub start_area: Option<[Cell; 2]>,
}

impl Default for GridNavConfig {
    /// 10x10 grid. The start and target share a row so the shortest path is
    /// unique; the desired and undesired cells sit one row either side of it.
    fn default() -> Self {
        GridNavConfig {
            width: 10,
            height: 10,
            start: Cell::new(0, 4),
            target: Cell::new(9, 4),
            max_steps: 20,
            desired_cells: vec![Cell::new(4, 5)],
            undesired_cells: vec![Cell::new(6, 3)],
            start_area: None,
        }
    }
}

impl GridNavConfig {
    pub fn contains(&self, c: Cell) -> bool {
        c.x < self.width && c.y < self.height
    }

    pub fn cell_id(&self, c: Cell) -> usize {
        c.y * self.width + c.x
    }

    pub fn cell_of(&self, id: usize) -> Cell {
        Cell::new(id % self.width, id / self.width)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return config_err("grid width and height must be positive");
        }
        if !self.contains(self.start) {
            return config_err("start must lie within the grid");
        }
        if !self.contains(self.target) {
            return config_err("target must lie within the grid");
        }
        if self.start == self.target {
            return config_err("start must differ from target");
        }
        if self.max_steps < 1 {
            return config_err("max_steps must be at least 1");
        }
        if let Some(c) = self.desired_cells.iter().find(|c| !self.contains(**c)) {
            return config_err(format!("desired cell {:?} lies outside the grid", c));
        }
        if let Some(c) = self.undesired_cells.iter().find(|c| !self.contains(**c)) {
            return config_err(format!("undesired cell {:?} lies outside the grid", c));
        }
        if let Some([lo, hi]) = self.start_area {
            if !(self.contains(lo) && self.contains(hi) && lo.x <= hi.x && lo.y <= hi.y) {
                return config_err("start_area must be two in-grid corners, lower-left first");
            }
            if self.start_cells().is_empty() {
                return config_err("start_area contains no cell other than the target");
            }
        }
        Ok(())
    }

    /// Cell ids an episode may start in.
    pub fn start_cells(&self) -> Vec<usize> {
        match self.start_area {
            None => vec![self.cell_id(self.start)],
            Some([lo, hi]) => (lo.y..=hi.y)
                .flat_map(|y| (lo.x..=hi.x).map(move |x| Cell::new(x, y)))
                .filter(|&c| c != self.target)
                .map(|c| self.cell_id(c))
                .collect(),
        }
    }
}

/// 2D navigation: four moves, +1 on reaching the target, step cap.
///
/// Moves that would leave the grid are no-ops (position unchanged).
#[derive(Debug, Clone)]
pub struct GridNav {
    config: GridNavConfig,
    pos: Cell,
    t: usize,
    done: bool,
}

impl GridNav {
    pub const ACTIONS: usize = 4;

    pub fn new(config: GridNavConfig) -> Self {
        let pos = config.start;
        GridNav { config, pos, t: 0, done: false }
    }

    pub fn config(&self) -> &GridNavConfig {
        &self.config
    }

    pub fn position(&self) -> Cell {
        self.pos
    }

    pub fn position_id(&self) -> usize {
        self.config.cell_id(self.pos)
    }

    pub fn steps_taken(&self) -> usize {
        self.t
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn observation(&self) -> Observation {
        Observation::Cell(self.position_id())
    }

    /// Places the agent at `cell` with `steps_taken` steps already used.
    pub fn teleport(&mut self, cell: Cell, steps_taken: usize) -> Result<()> {
        if !self.config.contains(cell) {
            return arg_err(format!("cell {:?} lies outside the grid", cell));
        }
        self.pos = cell;
        self.t = steps_taken;
        self.done = cell == self.config.target || steps_taken >= self.config.max_steps;
        Ok(())
    }

    pub fn step(&mut self, action: usize) -> Result<Transition> {
        if self.done {
            return Err(Error::State("episode already terminated".into()));
        }
        let Some(a) = GridAction::from_index(action) else {
            return arg_err(format!("grid action {} out of range 0..{}", action, Self::ACTIONS));
        };
        let Cell { x, y } = self.pos;
        let next = match a {
            GridAction::Up if y + 1 < self.config.height => Cell::new(x, y + 1),
            GridAction::Down if y > 0 => Cell::new(x, y - 1),
            GridAction::Left if x > 0 => Cell::new(x - 1, y),
            GridAction::Right if x + 1 < self.config.width => Cell::new(x + 1, y),
            _ => self.pos,
        };
        self.pos = next;
        self.t += 1;
        let reached = next == self.config.target;
        self.done = reached || self.t >= self.config.max_steps;
        let flags = StepFlags {
            pos: self.position_id(),
            target: reached,
            desired: self.config.desired_cells.contains(&next),
            undesired: self.config.undesired_cells.contains(&next),
            collision: false,
        };
        Ok(Transition {
            next_observation: self.observation(),
            reward: if reached { 1.0 } else { 0.0 },
            done: self.done,
            flags,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::EnvConfig;

    fn corner_config() -> GridNavConfig {
        GridNavConfig { start: Cell::new(0, 0), ..GridNavConfig::default() }
    }

    #[test]
    fn start_area_draws_from_the_rectangle() {
        let area = GridNavConfig { start_area: Some([Cell::new(7, 3), Cell::new(9, 4)]), ..GridNavConfig::default() };
        // Target (9,4) is excluded.
        assert_eq!(area.start_cells(), vec![37, 38, 39, 47, 48]);
        let env = EnvConfig::GridNav(area.clone());
        let mut seen = std::collections::BTreeSet::new();
        for seed in 0..200 {
            let (_, obs) = env.reset(seed).unwrap();
            assert_eq!(obs, env.reset(seed).unwrap().1);
            seen.insert(obs.cell().unwrap());
        }
        assert_eq!(seen.into_iter().collect::<Vec<_>>(), area.start_cells());
        assert_eq!(GridNavConfig::default().start_cells(), vec![40]);

        let bad = |a: [Cell; 2]| GridNavConfig { start_area: Some(a), ..GridNavConfig::default() }.validate().is_err();
        assert!(bad([Cell::new(3, 3), Cell::new(2, 3)]));
        assert!(bad([Cell::new(0, 0), Cell::new(10, 0)]));
        assert!(bad([Cell::new(9, 4), Cell::new(9, 4)]));
    }

    #[test]
    fn reset_returns_start_and_is_deterministic() {
        let cfg = EnvConfig::GridNav(corner_config());
        let (_, a) = cfg.reset(7).unwrap();
        let (_, b) = cfg.reset(7).unwrap();
        assert_eq!(a, Observation::Cell(0));
        assert_eq!(a, b);
    }

    #[test]
    fn out_of_bounds_move_is_a_noop() {
        let mut env = GridNav::new(corner_config());
        let tr = env.step(GridAction::Left as usize).unwrap();
        assert_eq!(env.position(), Cell::new(0, 0));
        assert_eq!(tr.reward, 0.0);
        assert!(!tr.done);
        let tr = env.step(GridAction::Down as usize).unwrap();
        assert_eq!(tr.next_observation, Observation::Cell(0));
    }

    #[test]
    fn stepping_onto_target_pays_one_and_terminates() {
        let cfg = GridNavConfig::default();
        let mut env = GridNav::new(cfg.clone());
        env.teleport(Cell::new(8, 4), 3).unwrap();
        let tr = env.step(GridAction::Right as usize).unwrap();
        assert_eq!(tr.reward, 1.0);
        assert!(tr.done && tr.flags.target);
    }

    #[test]
    fn step_cap_terminates_episode() {
        let mut env = GridNav::new(GridNavConfig::default());
        env.teleport(Cell::new(8, 4), 19).unwrap();
        let tr = env.step(GridAction::Left as usize).unwrap();
        assert!(tr.done);
        assert_eq!(tr.reward, 0.0);
        assert!(matches!(env.step(0), Err(Error::State(_))));
    }

    #[test]
    fn bad_action_is_an_argument_error() {
        let mut env = GridNav::new(GridNavConfig::default());
        assert!(matches!(env.step(4), Err(Error::Argument(_))));
    }

    #[test]
    fn invalid_configs_name_the_violation() {
        let same = GridNavConfig { target: Cell::new(0, 4), ..GridNavConfig::default() };
        let err = same.validate().unwrap_err().to_string();
        assert!(err.contains("start must differ from target"), "{err}");
        let outside = GridNavConfig { desired_cells: vec![Cell::new(10, 0)], ..Default::default() };
        assert!(outside.validate().unwrap_err().to_string().contains("desired cell"));
        let zero = GridNavConfig { max_steps: 0, ..Default::default() };
        assert!(zero.validate().unwrap_err().to_string().contains("max_steps"));
        assert!(EnvConfig::GridNav(zero).reset(0).is_err());
    }

    #[test]
    fn flags_mark_desired_and_undesired_cells() {
        let mut env = GridNav::new(GridNavConfig::default());
        env.teleport(Cell::new(4, 4), 0).unwrap();
        assert!(env.step(GridAction::Up as usize).unwrap().flags.desired);
        env.teleport(Cell::new(6, 4), 0).unwrap();
        let f = env.step(GridAction::Down as usize).unwrap().flags;
        assert!(f.undesired && !f.desired);
        assert_eq!(f.pos, 3 * 10 + 6);
    }
}
