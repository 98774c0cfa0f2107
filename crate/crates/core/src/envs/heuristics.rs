//! Scripted evaluation teammates.
//!
//! Matrix game: H1-H3 play a constant action, H4-H6 sample a fixed mixture
//! every step. Reaching: H1-H15 pick a destination corner at episode start
//! and walk to it greedily. Foraging: H1/H2 chase the nearest/farthest item,
//! H3-H8 follow one of the six fixed collection orders.

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::grid::{descend, distance_field, greedy_step, Corner, GridAction, Pos};
use super::lbf::{Item, LbfState};
use super::{EnvConfig, EnvId};

#[derive(Debug, Error, PartialEq)]
pub enum HeuristicError {
    #[error("heuristic H{id} does not exist for {env} (valid: H1-H{max})")]
    Unknown { env: EnvId, id: usize, max: usize },
}

/// Collection orders used by foraging heuristics H3-H8, in lexicographic order.
pub const ITEM_ORDERS: [[usize; 3]; 6] =
    [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

pub fn heuristic_count(env: EnvId) -> usize {
    match env {
        EnvId::RepeatedMatrix => 6,
        EnvId::CoopReach | EnvId::WeightedCoopReach => 15,
        EnvId::Lbf => 8,
    }
}

/// Action mixture of matrix-game heuristic `id` (1-based).
pub fn matrix_mixture(id: usize) -> Option<[f64; 3]> {
    Some(match id {
        1 => [1.0, 0.0, 0.0],
        2 => [0.0, 1.0, 0.0],
        3 => [0.0, 0.0, 1.0],
        4 => [0.7, 0.15, 0.15],
        5 => [0.15, 0.7, 0.15],
        6 => [0.15, 0.15, 0.7],
        _ => return None,
    })
}

/// Destination distribution over corners A-D for the randomized reaching heuristics.
fn reach_mixture(id: usize) -> Option<[f64; 4]> {
    Some(match id {
        7 => [0.25; 4],
        12 => [0.55, 0.15, 0.15, 0.15],
        13 => [0.15, 0.55, 0.15, 0.15],
        14 => [0.15, 0.15, 0.55, 0.15],
        15 => [0.15, 0.15, 0.15, 0.55],
        _ => return None,
    })
}

#[derive(Clone, Debug)]
pub struct Heuristic {
    cfg: EnvConfig,
    id: usize,
    rng: ChaCha8Rng,
    destination: Option<Corner>,
    target: Option<usize>,
}

impl Heuristic {
    pub fn new(cfg: EnvConfig, id: usize, seed: u64) -> Result<Self, HeuristicError> {
        let max = heuristic_count(cfg.id);
        if id == 0 || id > max {
            return Err(HeuristicError::Unknown { env: cfg.id, id, max });
        }
        Ok(Heuristic { cfg, id, rng: ChaCha8Rng::seed_from_u64(seed), destination: None, target: None })
    }

    /// All heuristics of an environment, each seeded from `seed`.
    pub fn suite(cfg: &EnvConfig, seed: u64) -> Vec<Heuristic> {
        (1..=heuristic_count(cfg.id))
            .map(|id| Heuristic::new(cfg.clone(), id, seed.wrapping_add(id as u64 * 7919)).unwrap())
            .collect()
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn name(&self) -> String {
        format!("H{}", self.id)
    }

    pub fn env(&self) -> EnvId {
        self.cfg.id
    }

    pub fn is_deterministic(&self) -> bool {
        match self.cfg.id {
            EnvId::RepeatedMatrix => self.id <= 3,
            EnvId::CoopReach | EnvId::WeightedCoopReach => reach_mixture(self.id).is_none(),
            EnvId::Lbf => true,
        }
    }

    pub fn destination(&self) -> Option<Corner> {
        self.destination
    }

    /// Action for the seat whose own observation is `obs`. A zero timestep
    /// (last observation entry) starts a new episode.
    pub fn act(&mut self, obs: &[f64]) -> usize {
        let start = obs.last().copied().unwrap_or(0.0) == 0.0;
        match self.cfg.id {
            EnvId::RepeatedMatrix => self.matrix_action(),
            EnvId::CoopReach | EnvId::WeightedCoopReach => self.reach_action(obs, start),
            EnvId::Lbf => self.lbf_action(obs, start),
        }
    }

    fn matrix_action(&mut self) -> usize {
        let mix = matrix_mixture(self.id).expect("validated id");
        if self.id <= 3 {
            return self.id - 1;
        }
        WeightedIndex::new(mix).expect("valid weights").sample(&mut self.rng)
    }

    fn pick_corner(&mut self, own: Pos) -> Corner {
        let n = self.cfg.grid_dim;
        let by_distance = |set: &[Corner], farthest: bool| -> Corner {
            let mut best = set[0];
            for &c in &set[1..] {
                let (d, db) = (own.manhattan(c.pos(n)), own.manhattan(best.pos(n)));
                if (farthest && d > db) || (!farthest && d < db) {
                    best = c;
                }
            }
            best
        };
        use Corner::*;
        match self.id {
            1 => by_distance(&Corner::ALL, false),
            2 => by_distance(&Corner::ALL, true),
            3 => by_distance(&[A, B], false),
            4 => by_distance(&[A, B], true),
            5 => by_distance(&[C, D], false),
            6 => by_distance(&[C, D], true),
            8..=11 => Corner::ALL[self.id - 8],
            _ => {
                let mix = reach_mixture(self.id).expect("validated id");
                Corner::ALL[WeightedIndex::new(mix).expect("valid weights").sample(&mut self.rng)]
            }
        }
    }

    fn reach_action(&mut self, obs: &[f64], start: bool) -> usize {
        let n = self.cfg.grid_dim;
        let own = Pos::decode(obs[0], obs[1], n);
        if start || self.destination.is_none() {
            self.destination = Some(self.pick_corner(own));
        }
        let dest = self.destination.expect("set above").pos(n);
        greedy_step(own, dest, n, |p| Corner::at(p, n).is_some()).index()
    }

    fn lbf_action(&mut self, obs: &[f64], start: bool) -> usize {
        let n = self.cfg.grid_dim;
        let state = decode_lbf(obs, n, self.cfg.n_items);
        let own = state.pos[0];
        if start {
            self.target = None;
        }
        if self.target.map_or(true, |t| !state.items[t].present) {
            self.target = self.next_target(&state, own);
        }
        let Some(t) = self.target else {
            return GridAction::Noop.index();
        };
        let item = state.items[t].pos;
        if own.is_adjacent(item) {
            return GridAction::Collect.index();
        }
        let goals: Vec<Pos> = item.neighbors(n).filter(|p| !state.is_blocked(*p)).collect();
        let dist = distance_field(n, &goals, |p| state.is_blocked(p));
        descend(own, &dist, n).index()
    }

    fn next_target(&self, state: &LbfState, own: Pos) -> Option<usize> {
        let present = state.items.iter().enumerate().filter(|(_, it)| it.present);
        match self.id {
            1 => present.min_by_key(|(k, it)| (own.manhattan(it.pos), *k)).map(|(k, _)| k),
            2 => present
                .max_by_key(|(k, it)| (own.manhattan(it.pos), std::cmp::Reverse(*k)))
                .map(|(k, _)| k),
            _ => ITEM_ORDERS[self.id - 3].into_iter().find(|&k| state.items[k].present),
        }
    }
}

/// Rebuilds a foraging state from one seat's observation; seat 0 is the observer.
pub(crate) fn decode_lbf(obs: &[f64], n: usize, n_items: usize) -> LbfState {
    let own = Pos::decode(obs[0], obs[1], n);
    let partner = Pos::decode(obs[2], obs[3], n);
    let items = (0..n_items)
        .map(|k| {
            let b = 4 + 3 * k;
            Item { pos: Pos::decode(obs[b], obs[b + 1], n), present: obs[b + 2] > 0.5 }
        })
        .collect();
    LbfState { pos: [own, partner], items }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{EnvInstance, ReachState};

    #[test]
    fn matrix_h1_always_first_action() {
        let mut h = Heuristic::new(EnvConfig::new(EnvId::RepeatedMatrix), 1, 0).unwrap();
        for t in 0..50 {
            assert_eq!(h.act(&[t as f64 / 50.0]), 0);
        }
    }

    #[test]
    fn matrix_h5_empirical_frequencies() {
        let mut h = Heuristic::new(EnvConfig::new(EnvId::RepeatedMatrix), 5, 17).unwrap();
        let mut counts = [0usize; 3];
        let n = 100_000;
        for _ in 0..n {
            counts[h.act(&[0.0])] += 1;
        }
        let freq = counts.map(|c| c as f64 / n as f64);
        for (f, p) in freq.iter().zip([0.15, 0.7, 0.15]) {
            assert!((f - p).abs() < 0.01, "{freq:?}");
        }
    }

    #[test]
    fn mismatched_id_is_rejected() {
        let err = Heuristic::new(EnvConfig::new(EnvId::RepeatedMatrix), 7, 0).unwrap_err();
        assert_eq!(err, HeuristicError::Unknown { env: EnvId::RepeatedMatrix, id: 7, max: 6 });
        assert!(Heuristic::new(EnvConfig::new(EnvId::Lbf), 9, 0).is_err());
        assert!(Heuristic::new(EnvConfig::new(EnvId::CoopReach), 15, 0).is_ok());
    }

    #[test]
    fn reaching_h9_walks_monotonically_to_corner_b() {
        let cfg = EnvConfig::new(EnvId::CoopReach);
        let n = cfg.grid_dim;
        let b = Corner::B.pos(n);
        let mut env = EnvInstance::new(cfg.clone(), 0).unwrap();
        for seed in 0..100 {
            env.reset(seed);
            let mut h = Heuristic::new(cfg.clone(), 9, seed).unwrap();
            let mut obs = env.observe();
            let mut last = env.reach_state().unwrap().pos[1].manhattan(b);
            while last > 0 {
                let a = h.act(&obs.obs_b);
                let out = env.step(GridAction::Noop.index(), a).unwrap();
                let d = env.reach_state().unwrap().pos[1].manhattan(b);
                assert_eq!(d + 1, last, "distance must strictly decrease");
                last = d;
                obs = out.obs;
            }
            assert_eq!(h.destination(), Some(Corner::B));
        }
    }

    #[test]
    fn reaching_nearest_and_farthest_corner() {
        let cfg = EnvConfig::new(EnvId::CoopReach);
        let mut env = EnvInstance::new(cfg.clone(), 0).unwrap();
        let obs = env.set_reach_state(ReachState { pos: [Pos::new(5, 1), Pos::new(3, 3)] });
        let mut h1 = Heuristic::new(cfg.clone(), 1, 0).unwrap();
        let mut h2 = Heuristic::new(cfg.clone(), 2, 0).unwrap();
        let mut h5 = Heuristic::new(cfg.clone(), 5, 0).unwrap();
        h1.act(&obs.obs_a);
        h2.act(&obs.obs_a);
        h5.act(&obs.obs_a);
        assert_eq!(h1.destination(), Some(Corner::B));
        assert_eq!(h2.destination(), Some(Corner::D));
        assert_eq!(h5.destination(), Some(Corner::C));
    }

    #[test]
    fn reaching_h12_destination_frequencies() {
        let cfg = EnvConfig::new(EnvId::CoopReach);
        let mut h = Heuristic::new(cfg, 12, 3).unwrap();
        let mut obs = vec![0.5; 13];
        *obs.last_mut().unwrap() = 0.0;
        let mut counts = [0usize; 4];
        let n = 40_000;
        for _ in 0..n {
            h.act(&obs);
            counts[h.destination().unwrap().index()] += 1;
        }
        for (c, p) in counts.iter().zip([0.55, 0.15, 0.15, 0.15]) {
            assert!((*c as f64 / n as f64 - p).abs() < 0.01);
        }
    }

    fn run_lbf(cfg: &EnvConfig, seed: u64, ha: usize, hb: usize) -> (f64, Vec<(usize, usize)>) {
        let mut env = EnvInstance::new(cfg.clone(), seed).unwrap();
        let mut a = Heuristic::new(cfg.clone(), ha, 0).unwrap();
        let mut b = Heuristic::new(cfg.clone(), hb, 0).unwrap();
        let mut obs = env.observe();
        let mut ret = 0.0;
        let mut trace = Vec::new();
        loop {
            let (x, y) = (a.act(&obs.obs_a), b.act(&obs.obs_b));
            trace.push((x, y));
            let out = env.step(x, y).unwrap();
            ret += out.reward;
            obs = out.obs;
            if out.done {
                return (ret, trace);
            }
        }
    }

    #[test]
    fn lbf_same_order_collects_everything() {
        let cfg = EnvConfig::new(EnvId::Lbf);
        for seed in 0..30 {
            for h in 3..=8 {
                let (ret, _) = run_lbf(&cfg, seed, h, h);
                assert!((ret - 0.99).abs() < 1e-9, "seed {seed} H{h} got {ret}");
            }
        }
    }

    #[test]
    fn deterministic_heuristics_replay_identically() {
        let cfg = EnvConfig::new(EnvId::Lbf);
        for h in 3..=8 {
            assert_eq!(run_lbf(&cfg, 4, h, 1), run_lbf(&cfg, 4, h, 1));
        }
    }
}
