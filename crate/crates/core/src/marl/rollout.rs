use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use super::{MarlError, Population};
use crate::envs::{EnvInstance, JointObservation};
use crate::nn::Mlp;

/// Uniform draw over all `K²` ordered pairs `(i, j)`, `i` the teammate index
/// and `j` the AHT-side index.
pub fn sample_pair(k: usize, rng: &mut impl Rng) -> (usize, usize) {
    (rng.gen_range(0..k), rng.gen_range(0..k))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub obs_a: Vec<f64>,
    pub obs_b: Vec<f64>,
    pub action_a: usize,
    pub action_b: usize,
    pub logp_a: f64,
    pub logp_b: f64,
    pub reward: f64,
    pub done: bool,
    pub next_obs_a: Vec<f64>,
    pub next_obs_b: Vec<f64>,
    pub episode_start: bool,
}

/// Transitions generated by AHT-side policy `pair.1` with teammate `pair.0`.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutBatch {
    pub pair: (usize, usize),
    pub transitions: Vec<Transition>,
}

impl RolloutBatch {
    pub fn episode_returns(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut acc = 0.0;
        let mut open = false;
        for t in &self.transitions {
            if t.episode_start {
                acc = 0.0;
                open = true;
            }
            acc += t.reward;
            if t.done && open {
                out.push(acc);
                open = false;
            }
        }
        out
    }
}

/// Samples (or takes the argmax of) a policy's action distribution.
pub fn choose_action(net: &Mlp, obs: &[f64], greedy: bool, rng: &mut impl Rng) -> Result<(usize, f64), MarlError> {
    let p = net.predict(obs)?;
    let a = if greedy {
        argmax(&p)
    } else {
        WeightedIndex::new(&p).map_err(|e| MarlError::NonFinite(format!("policy output: {e}")))?.sample(rng)
    };
    let lp = p[a].ln();
    if !lp.is_finite() {
        return Err(MarlError::NonFinite(format!("log-probability of action {a}")));
    }
    Ok((a, lp))
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (n, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = n;
        }
    }
    best
}

/// A rollout worker owning a persistent environment and random stream.
#[derive(Clone, Debug)]
pub struct Worker {
    pub env: EnvInstance,
    pub rng: ChaCha8Rng,
    obs: JointObservation,
}

impl Worker {
    pub fn new(env: EnvInstance, seed: u64) -> Self {
        let obs = env.observe();
        Worker { env, rng: ChaCha8Rng::seed_from_u64(seed), obs }
    }

    /// Plays `steps` joint steps with the given pair, starting new episodes
    /// as needed. The environment persists between calls.
    pub fn collect(
        &mut self,
        pop: &Population,
        pair: (usize, usize),
        steps: usize,
        greedy: bool,
    ) -> Result<RolloutBatch, MarlError> {
        let (i, j) = pair;
        if i >= pop.k || j >= pop.k {
            return Err(MarlError::Config(format!("pair ({i}, {j}) out of range for K = {}", pop.k)));
        }
        let mut transitions = Vec::with_capacity(steps);
        for _ in 0..steps {
            if self.env.is_done() {
                self.obs = self.env.reset_episode();
            }
            let episode_start = self.env.t() == 0;
            let (a, la) = choose_action(&pop.aht[j], &self.obs.obs_a, greedy, &mut self.rng)?;
            let (b, lb) = choose_action(&pop.team[i], &self.obs.obs_b, greedy, &mut self.rng)?;
            let out = self.env.step(a, b)?;
            let prev = std::mem::replace(&mut self.obs, out.obs);
            transitions.push(Transition {
                obs_a: prev.obs_a,
                obs_b: prev.obs_b,
                action_a: a,
                action_b: b,
                logp_a: la,
                logp_b: lb,
                reward: out.reward,
                done: out.done,
                next_obs_a: self.obs.obs_a.clone(),
                next_obs_b: self.obs.obs_b.clone(),
                episode_start,
            });
        }
        Ok(RolloutBatch { pair, transitions })
    }
}

/// One batch from a fresh worker; convenience for tests and analysis.
pub fn collect(
    pop: &Population,
    pair: (usize, usize),
    steps: usize,
    seed: u64,
    greedy: bool,
) -> Result<RolloutBatch, MarlError> {
    let env = EnvInstance::new(pop.env.clone(), seed)?;
    Worker::new(env, seed ^ 0x5eed).collect(pop, pair, steps, greedy)
}
