//! A deterministic gridworld with a single rewarding goal cell.

use serde::{Deserialize, Serialize};

/// Moves: up, down, left, right. Moving into a wall leaves the agent
/// where it is.
pub const ACTIONS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    #[serde(default = "default_side")]
    pub side: usize,
    /// `(row, col)`.
    #[serde(default)]
    pub start: (usize, usize),
    /// `(row, col)`; the far corner when absent.
    #[serde(default)]
    pub goal: Option<(usize, usize)>,
    #[serde(default = "default_step_reward")]
    pub step_reward: f64,
    #[serde(default = "default_goal_reward")]
    pub goal_reward: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Episode length after which the agent is sent back to the start.
    #[serde(default = "default_cap")]
    pub episode_cap: usize,
}

fn default_side() -> usize {
    5
}

fn default_step_reward() -> f64 {
    -0.01
}

fn default_goal_reward() -> f64 {
    1.0
}

fn default_gamma() -> f64 {
    0.99
}

fn default_cap() -> usize {
    100
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            side: default_side(),
            start: (0, 0),
            goal: None,
            step_reward: default_step_reward(),
            goal_reward: default_goal_reward(),
            gamma: default_gamma(),
            episode_cap: default_cap(),
        }
    }
}

impl EnvConfig {
    pub fn cells(&self) -> usize {
        self.side * self.side
    }

    pub fn start_cell(&self) -> usize {
        self.start.0 * self.side + self.start.1
    }

    pub fn goal_cell(&self) -> usize {
        let (r, c) = self.goal.unwrap_or((self.side - 1, self.side - 1));
        r * self.side + c
    }

    pub fn validate(&self) -> crate::Result<()> {
        let in_grid = |(r, c): (usize, usize)| r < self.side && c < self.side;
        if self.side == 0 || !in_grid(self.start) || !self.goal.map_or(true, in_grid) {
            return Err(crate::Error::config("start and goal must lie on a non-empty grid"));
        }
        if self.start_cell() == self.goal_cell() {
            return Err(crate::Error::config("start and goal must differ"));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(crate::Error::config(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if self.episode_cap == 0 {
            return Err(crate::Error::config("episode_cap must be >= 1"));
        }
        Ok(())
    }

    /// Next cell, reward and whether the goal was reached.
    pub fn transition(&self, cell: usize, action: usize) -> (usize, f64, bool) {
        let (r, c) = (cell / self.side, cell % self.side);
        let (r, c) = match action {
            0 => (r.saturating_sub(1), c),
            1 => ((r + 1).min(self.side - 1), c),
            2 => (r, c.saturating_sub(1)),
            3 => (r, (c + 1).min(self.side - 1)),
            _ => panic!("action {action} out of range"),
        };
        let next = r * self.side + c;
        if next == self.goal_cell() {
            (next, self.goal_reward, true)
        } else {
            (next, self.step_reward, false)
        }
    }
}

/// One running environment instance. Episodes continue across rollouts.
#[derive(Debug, Clone)]
pub struct ToyEnv {
    pub cfg: EnvConfig,
    cell: usize,
    steps: usize,
    ret: f64,
    discount: f64,
}

/// Outcome of a single environment step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub next: usize,
    pub reward: f64,
    /// The goal was reached.
    pub terminal: bool,
    /// Discounted return of the episode that just ended (goal or cap).
    pub episode_return: Option<f64>,
}

impl ToyEnv {
    pub fn new(cfg: EnvConfig) -> Self {
        let cell = cfg.start_cell();
        Self { cfg, cell, steps: 0, ret: 0.0, discount: 1.0 }
    }

    pub fn state(&self) -> usize {
        self.cell
    }

    pub fn step(&mut self, action: usize) -> Step {
        let (next, reward, terminal) = self.cfg.transition(self.cell, action);
        self.ret += self.discount * reward;
        self.discount *= self.cfg.gamma;
        self.steps += 1;
        let ended = terminal || self.steps >= self.cfg.episode_cap;
        let episode_return = ended.then_some(self.ret);
        if ended {
            self.cell = self.cfg.start_cell();
            self.steps = 0;
            self.ret = 0.0;
            self.discount = 1.0;
        } else {
            self.cell = next;
        }
        Step { next, reward, terminal, episode_return }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn walls_hold_the_agent() {
        let cfg = EnvConfig::default();
        assert_eq!(cfg.transition(0, 0), (0, -0.01, false));
        assert_eq!(cfg.transition(0, 2), (0, -0.01, false));
        assert_eq!(cfg.transition(0, 3).0, 1);
        assert_eq!(cfg.transition(0, 1).0, 5);
        assert_eq!(cfg.transition(19, 1), (24, 1.0, true));
    }

    #[test]
    fn episode_ends_at_goal_and_resets() {
        let mut env = ToyEnv::new(EnvConfig { side: 2, ..Default::default() });
        assert_eq!(env.step(3).episode_return, None);
        let s = env.step(1);
        assert!(s.terminal);
        assert!((s.episode_return.unwrap() - (-0.01 + 0.99)).abs() < 1e-15);
        assert_eq!(env.state(), 0);
    }

    #[test]
    fn cap_ends_episode_without_goal() {
        let mut env = ToyEnv::new(EnvConfig { episode_cap: 3, ..Default::default() });
        assert!(env.step(0).episode_return.is_none());
        assert!(env.step(0).episode_return.is_none());
        let s = env.step(0);
        assert!(!s.terminal);
        assert!(s.episode_return.is_some());
    }

    #[test]
    fn bad_configs_rejected() {
        assert!(EnvConfig { gamma: 1.0, ..Default::default() }.validate().is_err());
        assert!(EnvConfig { goal: Some((0, 0)), ..Default::default() }.validate().is_err());
        assert!(EnvConfig { start: (5, 0), ..Default::default() }.validate().is_err());
        EnvConfig::default().validate().unwrap();
    }
}
