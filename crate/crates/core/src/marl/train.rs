use std::collections::VecDeque;
use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rollout::{sample_pair, Worker};
use super::update::{critic_update, policy_update, Optimizers, UpdateSettings};
use super::{MarlError, Population, RolloutBatch};
use crate::diversity::{lagrange_update, LagrangeSet, LipoConvention, Objective, ReturnMatrix};
use crate::envs::{EnvConfig, EnvId, EnvInstance};
use crate::nn::table_widths;

/// Training budget and optimizer settings for population training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSchedule {
    /// Total environment steps across all workers.
    pub total_steps: u64,
    pub n_threads: usize,
    /// Steps each worker collects between updates.
    pub t_update: usize,
    /// Policy updates between multiplier updates.
    pub t_lagrange: usize,
    pub lr_policy: f64,
    pub lr_critic: f64,
    pub lr_alpha: f64,
    /// Starting value of every multiplier.
    pub alpha_init: f64,
    pub hidden: Vec<usize>,
    /// Episode-start states kept for critic-based return estimates.
    pub start_window: usize,
    pub update: UpdateSettings,
}

impl TrainSchedule {
    pub fn paper_defaults(env: EnvId) -> Self {
        let (total_steps, n_threads, t_update, lr, lr_alpha, w_ent) = match env {
            EnvId::RepeatedMatrix => (1_000_000, 40, 2, 1e-3, 0.05, 1e-3),
            EnvId::CoopReach | EnvId::WeightedCoopReach => (32_000_000, 160, 8, 1e-4, 0.5, 5e-3),
            EnvId::Lbf => (240_000_000, 160, 8, 1e-4, 0.05, 8e-4),
        };
        TrainSchedule {
            total_steps,
            n_threads,
            t_update,
            t_lagrange: 10,
            lr_policy: lr,
            lr_critic: lr,
            lr_alpha,
            alpha_init: 0.0,
            hidden: table_widths(env),
            start_window: 256,
            update: UpdateSettings { w_ent, gamma: 0.99, ..UpdateSettings::default() },
        }
    }

    pub fn steps_per_update(&self) -> u64 {
        (self.n_threads * self.t_update) as u64
    }

    pub fn n_updates(&self) -> u64 {
        self.total_steps / self.steps_per_update().max(1)
    }

    pub fn validate(&self) -> Result<(), MarlError> {
        let positive = [
            ("n_threads", self.n_threads as f64),
            ("t_update", self.t_update as f64),
            ("t_lagrange", self.t_lagrange as f64),
            ("lr_policy", self.lr_policy),
            ("lr_critic", self.lr_critic),
            ("epochs", self.update.epochs as f64),
            ("minibatches", self.update.minibatches as f64),
            ("start_window", self.start_window as f64),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(MarlError::Config(format!("{name} must be positive")));
            }
        }
        for (name, v) in [("lr_alpha", self.lr_alpha), ("alpha_init", self.alpha_init), ("w_ent", self.update.w_ent)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(MarlError::Config(format!("{name} must be non-negative")));
            }
        }
        if !(0.0..=1.0).contains(&self.update.gamma) || !(self.update.clip > 0.0) {
            return Err(MarlError::Config("gamma must lie in [0, 1] and clip must be positive".into()));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(MarlError::Config("hidden widths must be non-empty and positive".into()));
        }
        Ok(())
    }
}

/// One row per multiplier update.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    /// The constraint with the smallest slack: teammate `pair_i`, partner `pair_j`.
    pub pair_i: usize,
    pub pair_j: usize,
    pub sp_return: f64,
    pub xp_return_mean: f64,
    /// `alpha1[i][j]` for all `i != j` in row-major order.
    pub alpha1: Vec<f64>,
    pub alpha2: Vec<f64>,
    pub slack_min: f64,
    pub entropy: f64,
    /// Critic return estimates, row-major `R[j][i]`.
    pub returns: Vec<f64>,
}

fn off_pairs(k: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..k).flat_map(move |i| (0..k).filter(move |&j| j != i).map(move |j| (i, j)))
}

pub fn metrics_header(k: usize) -> Vec<String> {
    let mut h: Vec<String> = ["step", "pair_i", "pair_j", "sp_return", "xp_return_mean"].map(String::from).to_vec();
    h.extend(off_pairs(k).map(|(i, j)| format!("alpha1_{i}_{j}")));
    h.extend(off_pairs(k).map(|(i, j)| format!("alpha2_{i}_{j}")));
    h.extend(["slack_min", "entropy"].map(String::from));
    h.extend((0..k).flat_map(|j| (0..k).map(move |i| format!("r_{j}_{i}"))));
    h
}

pub fn write_metrics_csv<W: Write>(k: usize, rows: &[MetricsRow], w: W) -> Result<(), MarlError> {
    let mut wtr = csv::Writer::from_writer(w);
    let io = |e: csv::Error| MarlError::Io(e.to_string());
    wtr.write_record(metrics_header(k)).map_err(io)?;
    for r in rows {
        let mut rec = vec![r.step.to_string(), r.pair_i.to_string(), r.pair_j.to_string(), format!("{:?}", r.sp_return), format!("{:?}", r.xp_return_mean)];
        rec.extend(r.alpha1.iter().chain(&r.alpha2).map(|v| format!("{v:?}")));
        rec.push(format!("{:?}", r.slack_min));
        rec.push(format!("{:?}", r.entropy));
        rec.extend(r.returns.iter().map(|v| format!("{v:?}")));
        wtr.write_record(&rec).map_err(io)?;
    }
    wtr.flush().map_err(|e| MarlError::Io(e.to_string()))
}

/// Reads a metrics CSV; `K` is recovered from the header.
pub fn read_metrics_csv<R: Read>(r: R) -> Result<(usize, Vec<MetricsRow>), MarlError> {
    let bad = |m: String| MarlError::Io(format!("malformed metrics csv: {m}"));
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    let n_ret = header.iter().filter(|h| h.starts_with("r_")).count();
    let k = (n_ret as f64).sqrt() as usize;
    if k * k != n_ret || header.iter().collect::<Vec<_>>() != metrics_header(k) {
        return Err(bad("unexpected header".into()));
    }
    let m = k * k.saturating_sub(1);
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let f = |n: usize| rec.get(n).unwrap_or("").parse::<f64>().map_err(|e| bad(e.to_string()));
        let u = |n: usize| rec.get(n).unwrap_or("").parse::<u64>().map_err(|e| bad(e.to_string()));
        rows.push(MetricsRow {
            step: u(0)?,
            pair_i: u(1)? as usize,
            pair_j: u(2)? as usize,
            sp_return: f(3)?,
            xp_return_mean: f(4)?,
            alpha1: (5..5 + m).map(f).collect::<Result<_, _>>()?,
            alpha2: (5 + m..5 + 2 * m).map(f).collect::<Result<_, _>>()?,
            slack_min: f(5 + 2 * m)?,
            entropy: f(6 + 2 * m)?,
            returns: (7 + 2 * m..7 + 2 * m + k * k).map(f).collect::<Result<_, _>>()?,
        });
    }
    Ok((k, rows))
}

/// Synchronous-wave trainer shared by L-BRDiv and the fixed-weight baselines.
///
/// Each wave, every worker draws its own uniform pair and collects
/// `t_update` steps in parallel; batches are then assembled in worker order
/// and all updates are applied on the calling thread.
pub struct Trainer {
    pub pop: Population,
    pub opt: Optimizers,
    pub objective: Objective,
    pub schedule: TrainSchedule,
    rng: ChaCha8Rng,
    workers: Vec<Worker>,
    start_obs: VecDeque<(Vec<f64>, Vec<f64>)>,
    pub env_steps: u64,
    pub policy_updates: u64,
    pub multiplier_updates: u64,
    /// Batched critic evaluations of cross-play terms made for multiplier updates.
    pub constraint_evaluations: u64,
    pub metrics: Vec<MetricsRow>,
    last_entropy: f64,
    tau: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub population: Population,
    pub objective: Objective,
    pub metrics: Vec<MetricsRow>,
    pub env_steps: u64,
    pub policy_updates: u64,
    pub multiplier_updates: u64,
    pub constraint_evaluations: u64,
}

impl TrainOutcome {
    pub fn lagrange(&self) -> Option<&LagrangeSet> {
        match &self.objective {
            Objective::Lagrangian(a) => Some(a),
            _ => None,
        }
    }
}

impl Trainer {
    pub fn new(env: EnvConfig, schedule: TrainSchedule, k: usize, objective: Objective, tau: f64, seed: u64) -> Result<Self, MarlError> {
        env.validate()?;
        schedule.validate()?;
        if k == 0 {
            return Err(MarlError::Config("population size must be positive".into()));
        }
        if let Objective::Lagrangian(a) = &objective {
            if a.k() != k {
                return Err(MarlError::Config(format!("multipliers sized for K = {}, population K = {k}", a.k())));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pop = Population::new(env.clone(), k, &schedule.hidden, &mut rng)?;
        let opt = Optimizers::new(&pop, schedule.lr_policy, schedule.lr_critic)?;
        let workers = (0..schedule.n_threads)
            .map(|w| {
                let s = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(w as u64 + 1);
                Ok(Worker::new(EnvInstance::new(env.clone(), s)?, s ^ 0xA5A5_A5A5))
            })
            .collect::<Result<Vec<_>, MarlError>>()?;
        Ok(Trainer {
            pop,
            opt,
            objective,
            schedule,
            rng,
            workers,
            start_obs: VecDeque::new(),
            env_steps: 0,
            policy_updates: 0,
            multiplier_updates: 0,
            constraint_evaluations: 0,
            metrics: Vec::new(),
            last_entropy: 0.0,
            tau,
        })
    }

    pub fn collect_wave(&mut self) -> Result<Vec<RolloutBatch>, MarlError> {
        let k = self.pop.k;
        let pairs: Vec<(usize, usize)> = (0..self.workers.len()).map(|_| sample_pair(k, &mut self.rng)).collect();
        let pop = &self.pop;
        let steps = self.schedule.t_update;
        let batches = self
            .workers
            .par_iter_mut()
            .zip(pairs)
            .map(|(w, pair)| w.collect(pop, pair, steps, false))
            .collect::<Result<Vec<_>, _>>()?;
        for b in &batches {
            for t in b.transitions.iter().filter(|t| t.episode_start) {
                if self.start_obs.len() == self.schedule.start_window {
                    self.start_obs.pop_front();
                }
                self.start_obs.push_back((t.obs_a.clone(), t.obs_b.clone()));
            }
        }
        self.env_steps += batches.iter().map(|b| b.transitions.len() as u64).sum::<u64>();
        Ok(batches)
    }

    /// One wave: collect, critic update, policy update, and a multiplier
    /// update every `t_lagrange` policy updates.
    pub fn wave(&mut self) -> Result<(), MarlError> {
        let batches = self.collect_wave()?;
        critic_update(&mut self.pop, &mut self.opt, &batches, &self.schedule.update, &mut self.rng)?;
        let stats = policy_update(&mut self.pop, &mut self.opt, &batches, &self.objective, &self.schedule.update, &mut self.rng)?;
        self.last_entropy = stats.entropy;
        self.policy_updates += 1;
        if self.policy_updates % self.schedule.t_lagrange as u64 == 0 {
            self.multiplier_step()?;
        }
        Ok(())
    }

    /// Critic estimates of `E[R_{j,-i}]`, averaged over the stored
    /// episode-start states. Each constraint term is one batched evaluation.
    pub fn estimate_returns(&mut self) -> Result<ReturnMatrix, MarlError> {
        let k = self.pop.k;
        let starts: Vec<(Vec<f64>, Vec<f64>)> = if self.start_obs.is_empty() {
            let o = EnvInstance::new(self.pop.env.clone(), 0)?.observe();
            vec![(o.obs_a, o.obs_b)]
        } else {
            self.start_obs.iter().cloned().collect()
        };
        let pop = &self.pop;
        let eval = |i: usize, j: usize| -> Result<f64, MarlError> {
            let mut s = 0.0;
            for (a, b) in &starts {
                s += pop.value(a, b, i, j)?;
            }
            Ok(s / starts.len() as f64)
        };
        let mut r = ReturnMatrix::zeros(k);
        for i in 0..k {
            r.set(i, i, eval(i, i)?);
        }
        // R[j][i] for the teammate-side constraint and R[i][j] for the
        // partner-side constraint of every ordered pair.
        for (i, j) in off_pairs(k) {
            r.set(j, i, eval(i, j)?);
            r.set(i, j, eval(j, i)?);
            self.constraint_evaluations += 2;
        }
        Ok(r)
    }

    pub fn multiplier_step(&mut self) -> Result<(), MarlError> {
        let r = self.estimate_returns()?;
        let k = self.pop.k;
        if let Objective::Lagrangian(a) = &self.objective {
            let next = lagrange_update(&r, a, self.schedule.lr_alpha)?;
            self.objective = Objective::Lagrangian(next);
        }
        self.multiplier_updates += 1;
        let (alpha1, alpha2) = match &self.objective {
            Objective::Lagrangian(a) => (
                off_pairs(k).map(|(i, j)| a.alpha1(i, j)).collect(),
                off_pairs(k).map(|(i, j)| a.alpha2(i, j)).collect(),
            ),
            Objective::Brdiv { alpha } | Objective::Lipo { alpha, .. } => {
                let n = k * (k - 1);
                (vec![*alpha; n], vec![*alpha; n])
            }
        };
        let mut worst = (0, 0, f64::INFINITY);
        for (i, j) in off_pairs(k) {
            let s = r.slack_teammate(i, j, self.tau).min(r.slack_aht(i, j, self.tau));
            if s < worst.2 {
                worst = (i, j, s);
            }
        }
        let off = k * (k - 1);
        self.metrics.push(MetricsRow {
            step: self.env_steps,
            pair_i: worst.0,
            pair_j: worst.1,
            sp_return: r.trace() / k as f64,
            xp_return_mean: if off > 0 { r.off_diagonal_sum() / off as f64 } else { 0.0 },
            alpha1,
            alpha2,
            slack_min: if off > 0 { worst.2 } else { 0.0 },
            entropy: self.last_entropy,
            returns: r.values().to_vec(),
        });
        Ok(())
    }

    /// Runs every remaining wave, calling `after_multiplier_step` after each
    /// multiplier update.
    pub fn run_with(
        mut self,
        mut after_multiplier_step: impl FnMut(&Trainer) -> Result<(), MarlError>,
    ) -> Result<TrainOutcome, MarlError> {
        let n = self.schedule.n_updates();
        while self.policy_updates < n {
            self.wave()?;
            if self.policy_updates % self.schedule.t_lagrange as u64 == 0 {
                after_multiplier_step(&self)?;
            }
        }
        Ok(TrainOutcome {
            population: self.pop,
            objective: self.objective,
            metrics: self.metrics,
            env_steps: self.env_steps,
            policy_updates: self.policy_updates,
            multiplier_updates: self.multiplier_updates,
            constraint_evaluations: self.constraint_evaluations,
        })
    }

    pub fn run(self) -> Result<TrainOutcome, MarlError> {
        self.run_with(|_| Ok(()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    Brdiv,
    Lipo(LipoConvention),
}

pub fn train_lbrdiv(env: EnvConfig, schedule: TrainSchedule, k: usize, tau: f64, seed: u64) -> Result<TrainOutcome, MarlError> {
    let a = LagrangeSet::uniform(k, tau, schedule.alpha_init);
    Trainer::new(env, schedule, k, Objective::Lagrangian(a), tau, seed)?.run()
}

pub fn train_baseline(
    env: EnvConfig,
    schedule: TrainSchedule,
    k: usize,
    alpha: f64,
    kind: Baseline,
    seed: u64,
) -> Result<TrainOutcome, MarlError> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(MarlError::Config(format!("alpha must be non-negative, got {alpha}")));
    }
    let objective = match kind {
        Baseline::Brdiv => Objective::Brdiv { alpha },
        Baseline::Lipo(convention) => Objective::Lipo { alpha, convention },
    };
    // Baselines have no tolerance; slacks in the metrics are reported at zero.
    Trainer::new(env, schedule, k, objective, 0.0, seed)?.run()
}
