use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AhtAgent, AhtError, MetaRunner, MetaStep, Responder, Teammate};
use crate::envs::{EnvConfig, EnvId, EnvInstance};
use crate::marl::surrogate_logit_grad;
use crate::nn::{table_widths, Adam};

/// Budget and optimizer settings for recurrent AHT training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AhtSchedule {
    pub total_steps: u64,
    pub n_threads: usize,
    /// Minimum steps each worker collects between updates.
    pub t_update: usize,
    /// Truncation length for backpropagation through time; 0 keeps whole
    /// meta-episodes together.
    pub bptt: usize,
    pub lr_policy: f64,
    pub lr_critic: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub w_ent: f64,
    pub l_rep: usize,
    pub hidden: Vec<usize>,
    pub meta_episodes: usize,
    pub epochs: usize,
    pub minibatches: usize,
    pub clip: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
}

impl AhtSchedule {
    pub fn paper_defaults(env: EnvId) -> Self {
        let (total_steps, n_threads, t_update, w_ent, l_rep, bptt) = match env {
            EnvId::RepeatedMatrix => (1_000_000, 10, 2, 1e-4, 16, 0),
            EnvId::CoopReach | EnvId::WeightedCoopReach => (12_000_000, 16, 8, 2.5e-4, 32, 64),
            EnvId::Lbf => (48_000_000, 16, 8, 8e-4, 64, 64),
        };
        AhtSchedule {
            total_steps,
            n_threads,
            t_update,
            bptt,
            lr_policy: 1e-4,
            lr_critic: 1e-4,
            gamma: 0.99,
            gae_lambda: 0.95,
            w_ent,
            l_rep,
            hidden: table_widths(env),
            meta_episodes: super::DEFAULT_META_EPISODES,
            epochs: 4,
            minibatches: 4,
            clip: 0.2,
            value_coef: 0.5,
            max_grad_norm: 0.5,
        }
    }

    /// Steps each worker collects per update.
    pub fn segment_len(&self, env: &EnvConfig) -> usize {
        let window = if self.bptt == 0 { self.meta_episodes * env.horizon } else { self.bptt };
        window.max(self.t_update)
    }

    pub fn validate(&self) -> Result<(), AhtError> {
        let positive = [
            ("total_steps", self.total_steps as f64),
            ("n_threads", self.n_threads as f64),
            ("t_update", self.t_update as f64),
            ("lr_policy", self.lr_policy),
            ("lr_critic", self.lr_critic),
            ("l_rep", self.l_rep as f64),
            ("meta_episodes", self.meta_episodes as f64),
            ("epochs", self.epochs as f64),
            ("minibatches", self.minibatches as f64),
            ("clip", self.clip),
            ("max_grad_norm", self.max_grad_norm),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(AhtError::Config(format!("{name} must be positive")));
            }
        }
        for (name, v) in [("gamma", self.gamma), ("gae_lambda", self.gae_lambda)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(AhtError::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        for (name, v) in [("w_ent", self.w_ent), ("value_coef", self.value_coef)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(AhtError::Config(format!("{name} must be non-negative")));
            }
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(AhtError::Config("hidden widths must be non-empty and positive".into()));
        }
        Ok(())
    }
}

struct Segment {
    h0: Vec<f64>,
    steps: Vec<MetaStep>,
    /// Value of the state following the last step, 0 when a meta-episode ended there.
    bootstrap: f64,
}

struct Worker<'a> {
    runner: MetaRunner<'a>,
    rng: ChaCha8Rng,
}

#[derive(Clone)]
struct Grads {
    trunk: Vec<f64>,
    cell: Vec<f64>,
    policy: Vec<f64>,
    value: Vec<f64>,
}

impl Grads {
    fn zeros(a: &AhtAgent) -> Self {
        Grads {
            trunk: vec![0.0; a.trunk.num_params()],
            cell: vec![0.0; a.cell.num_params()],
            policy: vec![0.0; a.policy.num_params()],
            value: vec![0.0; a.value.num_params()],
        }
    }

    fn parts_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.trunk, &mut self.cell, &mut self.policy, &mut self.value]
    }

    fn add(&mut self, mut other: Grads) {
        for (a, b) in self.parts_mut().into_iter().zip(other.parts_mut()) {
            a.iter_mut().zip(b.iter()).for_each(|(x, y)| *x += y);
        }
    }

    fn clip(&mut self, max_norm: f64) {
        let norm = self.parts_mut().iter().flat_map(|p| p.iter()).map(|g| g * g).sum::<f64>().sqrt();
        if norm > max_norm {
            let s = max_norm / norm;
            self.parts_mut().into_iter().for_each(|p| p.iter_mut().for_each(|g| *g *= s));
        }
    }
}

/// Summary of one update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AhtLogRow {
    pub step: u64,
    /// Mean return of episodes completed during the collection phase.
    pub episode_return: f64,
    pub entropy: f64,
    pub value_loss: f64,
}

/// Recurrent PPO over meta-episodes with teammates sampled uniformly from a
/// fixed training set, one teammate per meta-episode.
pub struct AhtTrainer<'a> {
    pub agent: AhtAgent,
    pub schedule: AhtSchedule,
    teammates: &'a [Teammate],
    opts: [Adam; 4],
    workers: Vec<Worker<'a>>,
    rng: ChaCha8Rng,
    pub env_steps: u64,
    pub updates: u64,
    pub log: Vec<AhtLogRow>,
}

impl<'a> AhtTrainer<'a> {
    pub fn new(teammates: &'a [Teammate], env: EnvConfig, schedule: AhtSchedule, seed: u64) -> Result<Self, AhtError> {
        if teammates.is_empty() {
            return Err(AhtError::Config("the training teammate set is empty".into()));
        }
        schedule.validate()?;
        env.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let agent = AhtAgent::new(env.clone(), &schedule.hidden, schedule.l_rep, schedule.meta_episodes, &mut rng)?;
        let opts = [
            Adam::new(agent.trunk.num_params(), schedule.lr_policy)?,
            Adam::new(agent.cell.num_params(), schedule.lr_policy)?,
            Adam::new(agent.policy.num_params(), schedule.lr_policy)?,
            Adam::new(agent.value.num_params(), schedule.lr_critic)?,
        ];
        let mut workers = Vec::with_capacity(schedule.n_threads);
        for _ in 0..schedule.n_threads {
            let mut wrng = ChaCha8Rng::seed_from_u64(rng.gen());
            let partner = Self::sample_teammate(teammates, &env, &mut wrng)?;
            let inst = EnvInstance::new(env.clone(), wrng.gen())?;
            workers.push(Worker { runner: MetaRunner::new(inst, partner, schedule.meta_episodes, schedule.l_rep), rng: wrng });
        }
        Ok(AhtTrainer { agent, schedule, teammates, opts, workers, rng, env_steps: 0, updates: 0, log: Vec::new() })
    }

    fn sample_teammate(teammates: &'a [Teammate], env: &EnvConfig, rng: &mut ChaCha8Rng) -> Result<super::Partner<'a>, AhtError> {
        let k = rng.gen_range(0..teammates.len());
        teammates[k].instantiate(env, rng.gen())
    }

    fn collect(&mut self) -> Result<Vec<Segment>, AhtError> {
        let len = self.schedule.segment_len(&self.agent.env);
        let agent = &self.agent;
        let teammates = self.teammates;
        self.workers
            .par_iter_mut()
            .map(|w| {
                let env = agent.env.clone();
                let mut steps = Vec::with_capacity(len);
                let mut h0 = None;
                while steps.len() < len {
                    if w.runner.is_finished() {
                        let partner = Self::sample_teammate(teammates, &env, &mut w.rng)?;
                        w.runner.restart(partner);
                    }
                    h0.get_or_insert_with(|| w.runner.hidden.clone());
                    steps.push(w.runner.step(Responder::Agent(agent), false, &mut w.rng)?);
                }
                let last: &MetaStep = steps.last().expect("non-empty segment");
                let bootstrap = if last.meta_end { 0.0 } else { w.runner.peek_value(agent)? };
                Ok(Segment { h0: h0.expect("at least one step"), steps, bootstrap })
            })
            .collect()
    }

    /// Generalized advantage estimates and value targets, both in reward units.
    fn advantages(&self, seg: &Segment) -> (Vec<f64>, Vec<f64>) {
        let (g, l) = (self.schedule.gamma, self.schedule.gae_lambda);
        let n = seg.steps.len();
        let mut adv = vec![0.0; n];
        let mut acc = 0.0;
        for t in (0..n).rev() {
            let s = &seg.steps[t];
            let next = if s.meta_end {
                0.0
            } else if t + 1 < n {
                seg.steps[t + 1].value
            } else {
                seg.bootstrap
            };
            let delta = s.reward + g * next - s.value;
            acc = if s.meta_end { delta } else { delta + g * l * acc };
            adv[t] = acc;
        }
        let targets = adv.iter().zip(&seg.steps).map(|(a, s)| a + s.value).collect();
        (adv, targets)
    }

    fn segment_grads(&self, seg: &Segment, adv: &[f64], targets: &[f64], norm: f64) -> Result<(Grads, f64, f64), AhtError> {
        let a = &self.agent;
        let s = &self.schedule;
        let scale = a.env.reward_scale();
        let mut h = seg.h0.clone();
        let mut tapes = Vec::with_capacity(seg.steps.len());
        for st in &seg.steps {
            if st.meta_start {
                h = a.initial_hidden();
            }
            let (tape, h_next) = a.forward_tape(&st.input, &h)?;
            tapes.push(tape);
            h = h_next;
        }
        let mut g = Grads::zeros(a);
        let mut dh_next = vec![0.0; a.l_rep()];
        let (mut ent, mut vloss) = (0.0, 0.0);
        for t in (0..seg.steps.len()).rev() {
            let (st, tape) = (&seg.steps[t], &tapes[t]);
            let p = tape.policy.output();
            ent += crate::marl::entropy(p);
            let logit_grad: Vec<f64> = surrogate_logit_grad(p, st.action, st.logp, adv[t], s.clip, s.w_ent)
                .into_iter()
                .map(|x| x / norm)
                .collect();
            let dh_pol = a.policy.backward_raw_into(&tape.policy, &logit_grad, &mut g.policy)?;
            let v = tape.value.output()[0];
            let err = v - targets[t] * scale;
            vloss += err * err;
            let dh_val = a.value.backward_into(&tape.value, &[2.0 * s.value_coef * err / norm], &mut g.value)?;
            let dh: Vec<f64> = (0..a.l_rep()).map(|k| dh_next[k] + dh_pol[k] + dh_val[k]).collect();
            let (dx, dh_prev) = a.cell.backward_into(&tape.gru, &dh, &mut g.cell)?;
            a.trunk.backward_into(&tape.trunk, &dx, &mut g.trunk)?;
            dh_next = if st.meta_start { vec![0.0; a.l_rep()] } else { dh_prev };
        }
        Ok((g, ent, vloss))
    }

    /// Collects one wave and applies the clipped-surrogate update.
    pub fn update(&mut self) -> Result<AhtLogRow, AhtError> {
        let segments = self.collect()?;
        let limit = 10.0 * self.agent.meta_episodes as f64 * self.agent.env.max_episode_return();
        let mut finished = Vec::new();
        for st in segments.iter().flat_map(|s| &s.steps) {
            if st.value.abs() > limit {
                return Err(AhtError::Divergence { value: st.value.abs(), limit });
            }
        }
        for seg in &segments {
            let mut ret = 0.0;
            for st in &seg.steps {
                ret += st.reward;
                if st.episode_end {
                    finished.push(ret);
                    ret = 0.0;
                }
            }
        }
        let (mut advs, mut targets) = (Vec::new(), Vec::new());
        for seg in &segments {
            let (a, t) = self.advantages(seg);
            advs.push(a);
            targets.push(t);
        }
        let all: Vec<f64> = advs.iter().flatten().copied().collect();
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        let sd = (all.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / all.len() as f64).sqrt();
        for a in advs.iter_mut().flatten() {
            *a = (*a - mean) / (sd + 1e-8);
        }

        let n_seg = segments.len();
        let mb = self.schedule.minibatches.min(n_seg);
        let (mut ent_sum, mut vloss_sum, mut count) = (0.0, 0.0, 0usize);
        for _ in 0..self.schedule.epochs {
            let mut order: Vec<usize> = (0..n_seg).collect();
            for i in (1..n_seg).rev() {
                order.swap(i, self.rng.gen_range(0..=i));
            }
            for m in 0..mb {
                let idx: Vec<usize> = order.iter().copied().skip(m).step_by(mb).collect();
                let norm = idx.iter().map(|&i| segments[i].steps.len()).sum::<usize>() as f64;
                let parts = idx
                    .par_iter()
                    .map(|&i| self.segment_grads(&segments[i], &advs[i], &targets[i], norm))
                    .collect::<Result<Vec<_>, _>>()?;
                let mut total = Grads::zeros(&self.agent);
                for (g, e, v) in parts {
                    total.add(g);
                    ent_sum += e;
                    vloss_sum += v;
                }
                count += norm as usize;
                total.clip(self.schedule.max_grad_norm);
                let a = &mut self.agent;
                self.opts[0].step(a.trunk.params_mut(), &total.trunk)?;
                self.opts[1].step(a.cell.params_mut(), &total.cell)?;
                self.opts[2].step(a.policy.params_mut(), &total.policy)?;
                self.opts[3].step(a.value.params_mut(), &total.value)?;
            }
        }
        self.env_steps += segments.iter().map(|s| s.steps.len() as u64).sum::<u64>();
        self.updates += 1;
        let row = AhtLogRow {
            step: self.env_steps,
            episode_return: if finished.is_empty() { f64::NAN } else { finished.iter().sum::<f64>() / finished.len() as f64 },
            entropy: ent_sum / count as f64,
            value_loss: vloss_sum / count as f64,
        };
        self.log.push(row.clone());
        Ok(row)
    }

    /// Trains until the step budget is spent, calling `callback` after every update.
    pub fn run_with(&mut self, mut callback: impl FnMut(&AhtTrainer) -> Result<(), AhtError>) -> Result<(), AhtError> {
        while self.env_steps < self.schedule.total_steps {
            self.update()?;
            callback(self)?;
        }
        Ok(())
    }
}

impl MetaRunner<'_> {
    /// Value estimate of the upcoming step without advancing.
    pub fn peek_value(&self, agent: &AhtAgent) -> Result<f64, AhtError> {
        let x = agent.encode_input(&self.obs.obs_a, &self.carry);
        Ok(agent.forward(&x, &self.hidden)?.value)
    }
}

pub fn train_aht(teammates: &[Teammate], env: EnvConfig, schedule: AhtSchedule, seed: u64) -> Result<AhtAgent, AhtError> {
    train_aht_with(teammates, env, schedule, seed, |_| Ok(()))
}

pub fn train_aht_with(
    teammates: &[Teammate],
    env: EnvConfig,
    schedule: AhtSchedule,
    seed: u64,
    callback: impl FnMut(&AhtTrainer) -> Result<(), AhtError>,
) -> Result<AhtAgent, AhtError> {
    let mut trainer = AhtTrainer::new(teammates, env, schedule, seed)?;
    trainer.run_with(callback)?;
    Ok(trainer.agent)
}
