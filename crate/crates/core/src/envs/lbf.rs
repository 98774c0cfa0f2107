use rand::Rng;
use serde::{Deserialize, Serialize};

use super::grid::{Corner, GridAction, Pos};

pub(crate) const ITEM_REWARD: f64 = 0.33;

/// Items are at least this far apart, so no cell touches two items.
const MIN_ITEM_SPACING: usize = 3;

pub(crate) fn obs_dim(n_items: usize) -> usize {
    2 + 2 + 3 * n_items + 1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub pos: Pos,
    pub present: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LbfState {
    pub pos: [Pos; 2],
    pub items: Vec<Item>,
}

impl LbfState {
    pub(crate) fn spawn(n: usize, n_items: usize, rng: &mut impl Rng) -> Self {
        let mut items: Vec<Item> = Vec::with_capacity(n_items);
        while items.len() < n_items {
            let p = Pos::new(rng.gen_range(0..n), rng.gen_range(0..n));
            if items.iter().all(|it| it.pos.manhattan(p) >= MIN_ITEM_SPACING) {
                items.push(Item { pos: p, present: true });
            }
        }
        let mut draw = || loop {
            let p = Pos::new(rng.gen_range(0..n), rng.gen_range(0..n));
            if Corner::at(p, n).is_none() && items.iter().all(|it| it.pos != p) {
                return p;
            }
        };
        let a = draw();
        let b = draw();
        LbfState { pos: [a, b], items }
    }

    pub fn is_blocked(&self, p: Pos) -> bool {
        self.items.iter().any(|it| it.present && it.pos == p)
    }

    pub fn remaining(&self) -> usize {
        self.items.iter().filter(|it| it.present).count()
    }

    pub(crate) fn observe(&self, seat: usize, n: usize, tn: f64) -> Vec<f64> {
        let mut v = Vec::with_capacity(obs_dim(self.items.len()));
        v.extend(self.pos[seat].encode(n));
        v.extend(self.pos[1 - seat].encode(n));
        for it in &self.items {
            v.extend(it.pos.encode(n));
            v.push(if it.present { 1.0 } else { 0.0 });
        }
        v.push(tn);
        v
    }

    /// Moves are blocked by uncollected items. An item is collected when both
    /// agents stand next to it and both choose `Collect`.
    pub(crate) fn step(&mut self, n: usize, a_i: usize, a_neg_i: usize) -> (f64, bool) {
        let actions = [a_i, a_neg_i].map(|a| GridAction::from_index(a).unwrap_or(GridAction::Noop));
        for seat in 0..2 {
            let target = self.pos[seat].moved(actions[seat], n);
            if !self.is_blocked(target) {
                self.pos[seat] = target;
            }
        }
        let mut reward = 0.0;
        if actions.iter().all(|a| *a == GridAction::Collect) {
            for it in self.items.iter_mut().filter(|it| it.present) {
                if self.pos.iter().all(|p| p.is_adjacent(it.pos)) {
                    it.present = false;
                    reward += ITEM_REWARD;
                }
            }
        }
        (reward, self.remaining() == 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{EnvConfig, EnvId, EnvInstance};

    fn fixed_state() -> LbfState {
        LbfState {
            pos: [Pos::new(1, 2), Pos::new(3, 2)],
            items: vec![
                Item { pos: Pos::new(2, 2), present: true },
                Item { pos: Pos::new(6, 6), present: true },
                Item { pos: Pos::new(0, 6), present: true },
            ],
        }
    }

    #[test]
    fn collection_requires_both_agents() {
        let mut env = EnvInstance::new(EnvConfig::new(EnvId::Lbf), 0).unwrap();
        env.set_lbf_state(fixed_state());
        let c = GridAction::Collect.index();
        let out = env.step(c, GridAction::Noop.index()).unwrap();
        assert_eq!(out.reward, 0.0);
        let out = env.step(c, c).unwrap();
        assert!((out.reward - 0.33).abs() < 1e-12);
        assert!(!out.done);
        assert_eq!(env.lbf_state().unwrap().remaining(), 2);
    }

    #[test]
    fn items_block_movement() {
        let mut env = EnvInstance::new(EnvConfig::new(EnvId::Lbf), 0).unwrap();
        env.set_lbf_state(fixed_state());
        env.step(GridAction::Right.index(), GridAction::Left.index()).unwrap();
        let s = env.lbf_state().unwrap();
        assert_eq!(s.pos, [Pos::new(1, 2), Pos::new(3, 2)]);
    }

    #[test]
    fn spawn_respects_spacing_and_free_cells() {
        let mut env = EnvInstance::new(EnvConfig::new(EnvId::Lbf), 0).unwrap();
        for seed in 0..200 {
            env.reset(seed);
            let s = env.lbf_state().unwrap();
            for (k, a) in s.items.iter().enumerate() {
                for b in &s.items[k + 1..] {
                    assert!(a.pos.manhattan(b.pos) >= MIN_ITEM_SPACING);
                }
            }
            for p in s.pos {
                assert!(!s.is_blocked(p));
                assert!(Corner::at(p, 8).is_none());
            }
        }
    }
}
