//! Two-player cooperative environments with a shared scalar reward.
//!
//! Every environment exposes the same joint step: each seat receives its own
//! observation vector, both seats act simultaneously, and both receive the
//! identical reward. The last entry of every observation is the normalized
//! timestep `t / horizon`.

mod grid;
pub mod heuristics;
mod lbf;
mod matrix;
mod reaching;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use grid::{Corner, GridAction, Pos};
pub(crate) use grid::greedy_step;
pub use heuristics::{heuristic_count, matrix_mixture, Heuristic, HeuristicError};
pub use lbf::LbfState;
pub use matrix::MATRIX_PAYOFF;
pub use reaching::{ReachState, WEIGHTED_PAYOFF};

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("action {action} out of range for {env} (valid: 0..{n})")]
    InvalidAction { env: EnvId, action: usize, n: usize },
    #[error("step called after the episode finished")]
    EpisodeDone,
    #[error("invalid environment configuration: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvId {
    RepeatedMatrix,
    CoopReach,
    WeightedCoopReach,
    Lbf,
}

impl EnvId {
    pub const ALL: [EnvId; 4] = [
        EnvId::RepeatedMatrix,
        EnvId::CoopReach,
        EnvId::WeightedCoopReach,
        EnvId::Lbf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EnvId::RepeatedMatrix => "repeated_matrix",
            EnvId::CoopReach => "coop_reach",
            EnvId::WeightedCoopReach => "weighted_coop_reach",
            EnvId::Lbf => "lbf",
        }
    }

    pub fn parse(s: &str) -> Option<EnvId> {
        EnvId::ALL.into_iter().find(|id| id.name() == s)
    }

    pub fn num_actions(self) -> usize {
        match self {
            EnvId::RepeatedMatrix => 3,
            EnvId::CoopReach | EnvId::WeightedCoopReach => 5,
            EnvId::Lbf => 6,
        }
    }

    pub fn is_grid(self) -> bool {
        !matches!(self, EnvId::RepeatedMatrix)
    }
}

impl std::fmt::Display for EnvId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// The fixed discrete action set of an environment.
pub fn enumerate_actions(id: EnvId) -> Vec<usize> {
    (0..id.num_actions()).collect()
}

/// Static parameters of an environment instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub id: EnvId,
    pub horizon: usize,
    #[serde(default = "default_grid_dim")]
    pub grid_dim: usize,
    #[serde(default = "default_items")]
    pub n_items: usize,
}

fn default_grid_dim() -> usize {
    7
}

fn default_items() -> usize {
    3
}

impl EnvConfig {
    pub fn new(id: EnvId) -> Self {
        match id {
            EnvId::RepeatedMatrix => EnvConfig { id, horizon: 5, grid_dim: 1, n_items: 0 },
            EnvId::CoopReach | EnvId::WeightedCoopReach => {
                EnvConfig { id, horizon: 50, grid_dim: 7, n_items: 0 }
            }
            EnvId::Lbf => EnvConfig { id, horizon: 50, grid_dim: 8, n_items: 3 },
        }
    }

    pub fn with_grid_dim(mut self, grid_dim: usize) -> Self {
        self.grid_dim = grid_dim;
        self
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.horizon == 0 {
            return Err(EnvError::Config("horizon must be positive".into()));
        }
        match self.id {
            EnvId::RepeatedMatrix => Ok(()),
            EnvId::CoopReach | EnvId::WeightedCoopReach => {
                if self.grid_dim < 3 {
                    return Err(EnvError::Config("reaching grid_dim must be >= 3".into()));
                }
                Ok(())
            }
            EnvId::Lbf => {
                if self.n_items != 3 {
                    return Err(EnvError::Config("lbf supports exactly 3 items".into()));
                }
                if self.grid_dim < 6 {
                    return Err(EnvError::Config("lbf grid_dim must be >= 6".into()));
                }
                Ok(())
            }
        }
    }

    /// Length of each seat's observation vector.
    pub fn obs_dim(&self) -> usize {
        match self.id {
            EnvId::RepeatedMatrix => 1,
            EnvId::CoopReach | EnvId::WeightedCoopReach => reaching::OBS_DIM,
            EnvId::Lbf => lbf::obs_dim(self.n_items),
        }
    }

    pub fn num_actions(&self) -> usize {
        self.id.num_actions()
    }

    /// Largest undiscounted episodic return reachable in one episode.
    pub fn max_episode_return(&self) -> f64 {
        match self.id {
            EnvId::RepeatedMatrix => 10.0 * self.horizon as f64,
            EnvId::CoopReach => 1.0,
            EnvId::WeightedCoopReach => 10.0,
            EnvId::Lbf => lbf::ITEM_REWARD * self.n_items as f64,
        }
    }

    /// Scale that maps rewards to roughly unit magnitude for learning.
    pub fn reward_scale(&self) -> f64 {
        match self.id {
            EnvId::RepeatedMatrix | EnvId::WeightedCoopReach => 0.1,
            EnvId::CoopReach | EnvId::Lbf => 1.0,
        }
    }
}

/// Per-seat observations. Seat `a` is the AHT-side agent, seat `b` the teammate.
#[derive(Clone, Debug, PartialEq)]
pub struct JointObservation {
    pub obs_a: Vec<f64>,
    pub obs_b: Vec<f64>,
    pub t: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub obs: JointObservation,
    pub reward: f64,
    pub done: bool,
}

#[derive(Clone, Debug, PartialEq)]
enum EnvState {
    Matrix,
    Reach(ReachState),
    Lbf(LbfState),
}

/// A running episode of one environment.
#[derive(Clone, Debug)]
pub struct EnvInstance {
    cfg: EnvConfig,
    rng: ChaCha8Rng,
    t: usize,
    done: bool,
    state: EnvState,
}

impl EnvInstance {
    pub fn new(cfg: EnvConfig, seed: u64) -> Result<Self, EnvError> {
        cfg.validate()?;
        let mut env = EnvInstance {
            cfg,
            rng: ChaCha8Rng::seed_from_u64(seed),
            t: 0,
            done: false,
            state: EnvState::Matrix,
        };
        env.reset_episode();
        Ok(env)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Reseeds the generator and starts a new episode.
    pub fn reset(&mut self, seed: u64) -> JointObservation {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.reset_episode()
    }

    /// Starts a new episode continuing the current random stream.
    pub fn reset_episode(&mut self) -> JointObservation {
        self.t = 0;
        self.done = false;
        self.state = match self.cfg.id {
            EnvId::RepeatedMatrix => EnvState::Matrix,
            EnvId::CoopReach | EnvId::WeightedCoopReach => {
                EnvState::Reach(ReachState::spawn(self.cfg.grid_dim, &mut self.rng))
            }
            EnvId::Lbf => {
                EnvState::Lbf(LbfState::spawn(self.cfg.grid_dim, self.cfg.n_items, &mut self.rng))
            }
        };
        self.observe()
    }

    /// Places the episode in an explicit grid state at t = 0.
    pub fn set_reach_state(&mut self, state: ReachState) -> JointObservation {
        self.t = 0;
        self.done = false;
        self.state = EnvState::Reach(state);
        self.observe()
    }

    pub fn set_lbf_state(&mut self, state: LbfState) -> JointObservation {
        self.t = 0;
        self.done = false;
        self.state = EnvState::Lbf(state);
        self.observe()
    }

    pub fn reach_state(&self) -> Option<&ReachState> {
        match &self.state {
            EnvState::Reach(s) => Some(s),
            _ => None,
        }
    }

    pub fn lbf_state(&self) -> Option<&LbfState> {
        match &self.state {
            EnvState::Lbf(s) => Some(s),
            _ => None,
        }
    }

    pub fn observe(&self) -> JointObservation {
        let tn = self.t as f64 / self.cfg.horizon as f64;
        let (obs_a, obs_b) = match &self.state {
            EnvState::Matrix => (vec![tn], vec![tn]),
            EnvState::Reach(s) => (s.observe(0, self.cfg.grid_dim, tn), s.observe(1, self.cfg.grid_dim, tn)),
            EnvState::Lbf(s) => (s.observe(0, self.cfg.grid_dim, tn), s.observe(1, self.cfg.grid_dim, tn)),
        };
        JointObservation { obs_a, obs_b, t: self.t }
    }

    pub fn step(&mut self, a_i: usize, a_neg_i: usize) -> Result<StepOutcome, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeDone);
        }
        let n = self.cfg.num_actions();
        for action in [a_i, a_neg_i] {
            if action >= n {
                return Err(EnvError::InvalidAction { env: self.cfg.id, action, n });
            }
        }
        let (reward, terminal) = match &mut self.state {
            EnvState::Matrix => (MATRIX_PAYOFF[a_i][a_neg_i], false),
            EnvState::Reach(s) => s.step(self.cfg.id, self.cfg.grid_dim, a_i, a_neg_i),
            EnvState::Lbf(s) => s.step(self.cfg.grid_dim, a_i, a_neg_i),
        };
        self.t += 1;
        self.done = terminal || self.t >= self.cfg.horizon;
        Ok(StepOutcome { obs: self.observe(), reward, done: self.done })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_reset_observes_only_timestep() {
        let mut env = EnvInstance::new(EnvConfig::new(EnvId::RepeatedMatrix), 0).unwrap();
        let obs = env.reset(0);
        assert_eq!(obs.obs_a, vec![0.0]);
        assert_eq!(obs.obs_b, vec![0.0]);
    }

    #[test]
    fn matrix_payoff_entries() {
        let mut env = EnvInstance::new(EnvConfig::new(EnvId::RepeatedMatrix), 0).unwrap();
        assert_eq!(env.step(0, 0).unwrap().reward, 10.0);
        assert_eq!(env.step(2, 1).unwrap().reward, 4.0);
    }

    #[test]
    fn matrix_constant_policy_return_is_horizon_times_payoff() {
        for a in 0..3 {
            for b in 0..3 {
                let mut env = EnvInstance::new(EnvConfig::new(EnvId::RepeatedMatrix), 3).unwrap();
                let mut total = 0.0;
                let mut steps = 0;
                loop {
                    let out = env.step(a, b).unwrap();
                    total += out.reward;
                    steps += 1;
                    if out.done {
                        break;
                    }
                }
                assert_eq!(steps, 5);
                assert_eq!(total, 5.0 * MATRIX_PAYOFF[a][b]);
            }
        }
    }

    #[test]
    fn rejects_bad_action_and_step_after_done() {
        let cfg = EnvConfig::new(EnvId::RepeatedMatrix).with_horizon(1);
        let mut env = EnvInstance::new(cfg, 0).unwrap();
        assert!(matches!(env.step(3, 0), Err(EnvError::InvalidAction { action: 3, .. })));
        assert!(env.step(0, 0).unwrap().done);
        assert_eq!(env.step(0, 0), Err(EnvError::EpisodeDone));
    }

    #[test]
    fn action_set_sizes() {
        assert_eq!(enumerate_actions(EnvId::RepeatedMatrix).len(), 3);
        assert_eq!(enumerate_actions(EnvId::CoopReach).len(), 5);
        assert_eq!(enumerate_actions(EnvId::WeightedCoopReach).len(), 5);
        assert_eq!(enumerate_actions(EnvId::Lbf).len(), 6);
    }

    #[test]
    fn equal_seeds_give_equal_resets() {
        for id in EnvId::ALL {
            let mut a = EnvInstance::new(EnvConfig::new(id), 9).unwrap();
            let mut b = EnvInstance::new(EnvConfig::new(id), 1234).unwrap();
            assert_eq!(a.reset(42), b.reset(42));
            for k in 0..20 {
                let act = (k * 7 + 3) % id.num_actions();
                let x = a.step(act, (act + 1) % id.num_actions());
                let y = b.step(act, (act + 1) % id.num_actions());
                assert_eq!(x, y);
                if x.map(|o| o.done).unwrap_or(true) {
                    break;
                }
            }
        }
    }

    #[test]
    fn observation_lengths_fixed_and_finite() {
        for id in EnvId::ALL {
            let cfg = EnvConfig::new(id);
            let mut env = EnvInstance::new(cfg.clone(), 5).unwrap();
            let obs = env.reset(5);
            assert_eq!(obs.obs_a.len(), cfg.obs_dim());
            assert_eq!(obs.obs_b.len(), cfg.obs_dim());
            let out = env.step(1, 2).unwrap();
            assert_eq!(out.obs.obs_a.len(), cfg.obs_dim());
            assert!(out.obs.obs_a.iter().chain(&out.obs.obs_b).all(|v| v.is_finite()));
        }
    }

    #[test]
    fn episodes_terminate_within_horizon() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for id in EnvId::ALL {
            let cfg = EnvConfig::new(id);
            let mut env = EnvInstance::new(cfg.clone(), 2).unwrap();
            for _ in 0..20 {
                env.reset_episode();
                let mut steps = 0;
                loop {
                    let n = cfg.num_actions();
                    let out = env.step(rng.gen_range(0..n), rng.gen_range(0..n)).unwrap();
                    steps += 1;
                    if out.done {
                        break;
                    }
                }
                assert!(steps <= cfg.horizon);
            }
        }
    }
}
