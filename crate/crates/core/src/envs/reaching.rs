use rand::Rng;
use serde::{Deserialize, Serialize};

use super::grid::{Corner, GridAction, Pos};
use super::EnvId;

/// Own position, partner position, four corner coordinates, timestep.
pub(crate) const OBS_DIM: usize = 2 + 2 + 8 + 1;

/// Reward when the agents end on corners `[corner_i][corner_neg_i]`.
pub const WEIGHTED_PAYOFF: [[f64; 4]; 4] = [
    [10.0, 0.0, 6.0, 6.0],
    [0.0, 10.0, 6.0, 6.0],
    [6.0, 6.0, 8.0, 0.0],
    [6.0, 6.0, 0.0, 8.0],
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReachState {
    pub pos: [Pos; 2],
}

impl ReachState {
    pub(crate) fn spawn(n: usize, rng: &mut impl Rng) -> Self {
        let mut draw = || loop {
            let p = Pos::new(rng.gen_range(0..n), rng.gen_range(0..n));
            if Corner::at(p, n).is_none() {
                return p;
            }
        };
        let a = draw();
        let b = draw();
        ReachState { pos: [a, b] }
    }

    pub(crate) fn observe(&self, seat: usize, n: usize, tn: f64) -> Vec<f64> {
        let mut v = Vec::with_capacity(OBS_DIM);
        v.extend(self.pos[seat].encode(n));
        v.extend(self.pos[1 - seat].encode(n));
        for c in Corner::ALL {
            v.extend(c.pos(n).encode(n));
        }
        v.push(tn);
        v
    }

    /// Applies both moves; returns `(reward, terminal)`.
    pub(crate) fn step(&mut self, id: EnvId, n: usize, a_i: usize, a_neg_i: usize) -> (f64, bool) {
        for (seat, a) in [a_i, a_neg_i].into_iter().enumerate() {
            let action = GridAction::from_index(a).unwrap_or(GridAction::Noop);
            self.pos[seat] = self.pos[seat].moved(action, n);
        }
        let corners = (Corner::at(self.pos[0], n), Corner::at(self.pos[1], n));
        match (id, corners) {
            (EnvId::CoopReach, (Some(x), Some(y))) if x == y => (1.0, true),
            (EnvId::WeightedCoopReach, (Some(x), Some(y))) => {
                (WEIGHTED_PAYOFF[x.index()][y.index()], true)
            }
            _ => (0.0, false),
        }
    }
}
