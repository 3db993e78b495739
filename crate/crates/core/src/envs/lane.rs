use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Observation, StepFlags, Transition};
use crate::error::{arg_err, config_err, Error, Result};
use crate::seed::{rng_from_seed, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(usize)]
pub enum LaneAction {
    LaneUp = 0,
    LaneDown = 1,
    Idle = 2,
    Faster = 3,
    Slower = 4,
}

impl LaneAction {
    pub fn from_index(index: usize) -> Option<Self> {
        Some(match index {
            0 => LaneAction::LaneUp,
            1 => LaneAction::LaneDown,
            2 => LaneAction::Idle,
            3 => LaneAction::Faster,
            4 => LaneAction::Slower,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LaneWorldConfig {
    pub num_lanes: usize,
    pub horizon: usize,
    pub speed_levels: usize,
    /// Probability that an obstacle appears at the far end of a lane's
    /// lookahead window on a given step.
    pub obstacle_rate: f64,
    pub desired_lane: Option<usize>,
    pub undesired_lane: Option<usize>,
    pub start_lane: usize,
    /// Number of cells ahead in which obstacles are visible.
    pub lookahead: usize,
}

impl Default for LaneWorldConfig {
    fn default() -> Self {
        LaneWorldConfig {
            num_lanes: 4,
            horizon: 50,
            speed_levels: 3,
            obstacle_rate: 0.2,
            desired_lane: Some(2),
            undesired_lane: Some(0),
            start_lane: 1,
            lookahead: 2,
        }
    }
}

impl LaneWorldConfig {
    pub fn feature_dim(&self) -> usize {
        2 + self.num_lanes
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_lanes < 2 {
            return config_err("num_lanes must be at least 2");
        }
        if self.horizon < 1 {
            return config_err("horizon must be at least 1");
        }
        if self.speed_levels < 2 {
            return config_err("speed_levels must be at least 2");
        }
        if !(0.0..=1.0).contains(&self.obstacle_rate) {
            return config_err("obstacle_rate must lie in [0, 1]");
        }
        if !(1..=16).contains(&self.lookahead) {
            return config_err("lookahead must lie in 1..=16");
        }
        if self.start_lane >= self.num_lanes {
            return config_err("start_lane must be below num_lanes");
        }
        for (name, lane) in [("desired_lane", self.desired_lane), ("undesired_lane", self.undesired_lane)] {
            if matches!(lane, Some(l) if l >= self.num_lanes) {
                return config_err(format!("{name} must be below num_lanes"));
            }
        }
        if self.desired_lane.is_some() && self.desired_lane == self.undesired_lane {
            return config_err("desired_lane and undesired_lane must differ");
        }
        Ok(())
    }
}

/// Multi-lane traffic stand-in.
///
/// Each lane carries obstacles at distances `1..=lookahead` ahead of the agent.
/// Every step obstacles move one cell closer; one that reaches distance zero
/// in the agent's lane is a collision unless the agent is at the lowest speed.
/// New obstacles appear at the far end with probability `obstacle_rate`.
/// The step reward is `speed / (speed_levels - 1)`, zero on collision, and a
/// collision ends the episode.
#[derive(Debug, Clone)]
pub struct LaneWorld {
    config: LaneWorldConfig,
    rng: Rng,
    lane: usize,
    speed: usize,
    /// Bit `d - 1` of `obstacles[l]` is set when lane `l` has an obstacle at distance `d`.
    obstacles: Vec<u32>,
    t: usize,
    done: bool,
}

impl LaneWorld {
    pub const ACTIONS: usize = 5;

    pub fn new(config: LaneWorldConfig, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let obstacles = (0..config.num_lanes)
            .map(|_| {
                let mut mask = 0u32;
                // Distance 1 starts clear so no collision is forced on step 0.
                for d in 2..=config.lookahead {
                    if rng.gen::<f64>() < config.obstacle_rate {
                        mask |= 1 << (d - 1);
                    }
                }
                mask
            })
            .collect();
        LaneWorld {
            lane: config.start_lane,
            speed: 0,
            obstacles,
            config,
            rng,
            t: 0,
            done: false,
        }
    }

    pub fn config(&self) -> &LaneWorldConfig {
        &self.config
    }

    pub fn lane(&self) -> usize {
        self.lane
    }

    pub fn speed(&self) -> usize {
        self.speed
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Distance to the nearest obstacle in `lane`, if any is visible.
    pub fn nearest_obstacle(&self, lane: usize) -> Option<usize> {
        let mask = self.obstacles[lane];
        (mask != 0).then(|| mask.trailing_zeros() as usize + 1)
    }

    /// `[lane, speed, proximity per lane]`, every component in `[0, 1]`.
    pub fn observation(&self) -> Observation {
        let c = &self.config;
        let mut f = Vec::with_capacity(c.feature_dim());
        f.push(self.lane as f64 / (c.num_lanes - 1) as f64);
        f.push(self.speed as f64 / (c.speed_levels - 1) as f64);
        for lane in 0..c.num_lanes {
            let prox = match self.nearest_obstacle(lane) {
                Some(d) => (c.lookahead + 1 - d) as f64 / c.lookahead as f64,
                None => 0.0,
            };
            f.push(prox);
        }
        Observation::Features(f)
    }

    pub fn step(&mut self, action: usize) -> Result<Transition> {
        if self.done {
            return Err(Error::State("episode already terminated".into()));
        }
        let Some(a) = LaneAction::from_index(action) else {
            return arg_err(format!("lane action {} out of range 0..{}", action, Self::ACTIONS));
        };
        let c = &self.config;
        match a {
            LaneAction::LaneUp if self.lane + 1 < c.num_lanes => self.lane += 1,
            LaneAction::LaneDown if self.lane > 0 => self.lane -= 1,
            LaneAction::Faster if self.speed + 1 < c.speed_levels => self.speed += 1,
            LaneAction::Slower if self.speed > 0 => self.speed -= 1,
            _ => {}
        }
        let mut collision = false;
        for (lane, mask) in self.obstacles.iter_mut().enumerate() {
            let contact = *mask & 1 != 0;
            *mask >>= 1;
            if contact && lane == self.lane && self.speed > 0 {
                collision = true;
            }
        }
        let far = 1u32 << (c.lookahead - 1);
        for mask in self.obstacles.iter_mut() {
            if self.rng.gen::<f64>() < c.obstacle_rate {
                *mask |= far;
            }
        }
        self.t += 1;
        self.done = collision || self.t >= c.horizon;
        let reward = if collision {
            0.0
        } else {
            self.speed as f64 / (c.speed_levels - 1) as f64
        };
        let flags = StepFlags {
            pos: self.lane,
            target: false,
            desired: c.desired_lane == Some(self.lane),
            undesired: c.undesired_lane == Some(self.lane),
            collision,
        };
        Ok(Transition { next_observation: self.observation(), reward, done: self.done, flags })
    }
}
