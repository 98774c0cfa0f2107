//! Behavior profiles: what each policy does, summarized as frequencies.
//!
//! Matrix game: action frequencies. Reaching: the corner the profiled seat
//! occupies when the episode terminates, or `none` on timeout. Foraging: the
//! order in which items were collected, or `incomplete`.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::CliError;
use crate::aht::{AhtAgent, Carry};
use crate::envs::{heuristic_count, Corner, EnvConfig, EnvId, EnvInstance, Heuristic};
use crate::marl::{choose_action, Population};
use crate::nn::Mlp;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub label: String,
    pub freqs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BehaviorProfile {
    pub env: EnvId,
    /// `teammate` for populations, `agent` for adaptive agents.
    pub subject: String,
    /// Episodes played per row.
    pub episodes: usize,
    pub columns: Vec<String>,
    pub rows: Vec<ProfileRow>,
}

/// Permutations of `0..n` in lexicographic order.
fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut cur: Vec<usize> = (0..n).collect();
    let mut all = vec![cur.clone()];
    loop {
        let Some(i) = (1..n).rev().find(|&i| cur[i - 1] < cur[i]) else { break };
        let j = (i..n).rev().find(|&j| cur[j] > cur[i - 1]).expect("successor exists");
        cur.swap(i - 1, j);
        cur[i..].reverse();
        all.push(cur.clone());
    }
    all
}

const MAX_PROFILE_ITEMS: usize = 6;

pub fn profile_columns(env: &EnvConfig) -> Vec<String> {
    match env.id {
        EnvId::RepeatedMatrix => (0..env.num_actions()).map(|a| format!("a{a}")).collect(),
        EnvId::CoopReach | EnvId::WeightedCoopReach => {
            Corner::ALL.iter().map(|c| c.label().to_string()).chain(["none".to_string()]).collect()
        }
        EnvId::Lbf => permutations(env.n_items)
            .iter()
            .map(|p| p.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(">"))
            .chain(["incomplete".to_string()])
            .collect(),
    }
}

trait Actor {
    fn act(&mut self, obs: &[f64]) -> Result<usize, CliError>;
    fn observe(&mut self, _action: usize, _reward: f64, _done: bool) {}
}

struct PolicyActor<'a> {
    net: &'a Mlp,
    greedy: bool,
    rng: ChaCha8Rng,
}

impl Actor for PolicyActor<'_> {
    fn act(&mut self, obs: &[f64]) -> Result<usize, CliError> {
        Ok(choose_action(self.net, obs, self.greedy, &mut self.rng)?.0)
    }
}

impl Actor for Heuristic {
    fn act(&mut self, obs: &[f64]) -> Result<usize, CliError> {
        Ok(Heuristic::act(self, obs))
    }
}

struct AgentActor<'a> {
    agent: &'a AhtAgent,
    hidden: Vec<f64>,
    carry: Carry,
    greedy: bool,
    rng: ChaCha8Rng,
}

impl AgentActor<'_> {
    fn reset(&mut self) {
        self.hidden = self.agent.initial_hidden();
        self.carry = Carry::default();
    }
}

impl Actor for AgentActor<'_> {
    fn act(&mut self, obs: &[f64]) -> Result<usize, CliError> {
        let x = self.agent.encode_input(obs, &self.carry);
        let out = self.agent.forward(&x, &self.hidden)?;
        self.hidden = out.hidden;
        Ok(if self.greedy {
            crate::marl::argmax(&out.probs)
        } else {
            let u: f64 = self.rng.gen();
            let mut acc = 0.0;
            out.probs.iter().position(|p| {
                acc += p;
                u < acc
            })
            .unwrap_or(out.probs.len() - 1)
        })
    }

    fn observe(&mut self, action: usize, reward: f64, done: bool) {
        self.carry = Carry { prev_action: Some(action), prev_reward: reward, boundary: done };
    }
}

/// Plays one episode and adds its outcome for seat `subject` (0 = AHT side,
/// 1 = teammate) to `tally`.
fn episode(
    env: &mut EnvInstance,
    a: &mut dyn Actor,
    b: &mut dyn Actor,
    subject: usize,
    orders: &[Vec<usize>],
    tally: &mut [f64],
) -> Result<(), CliError> {
    let cfg = env.config().clone();
    let mut obs = env.reset_episode();
    let mut collected = Vec::new();
    loop {
        let before: Vec<bool> = env.lbf_state().map(|s| s.items.iter().map(|i| i.present).collect()).unwrap_or_default();
        let act_a = a.act(&obs.obs_a)?;
        let act_b = b.act(&obs.obs_b)?;
        let out = env.step(act_a, act_b)?;
        a.observe(act_a, out.reward, out.done);
        b.observe(act_b, out.reward, out.done);
        if cfg.id == EnvId::RepeatedMatrix {
            tally[if subject == 0 { act_a } else { act_b }] += 1.0;
        }
        if let Some(s) = env.lbf_state() {
            collected.extend(before.iter().zip(&s.items).enumerate().filter(|(_, (b, it))| **b && !it.present).map(|(n, _)| n));
        }
        if out.done {
            break;
        }
        obs = out.obs;
    }
    match cfg.id {
        EnvId::RepeatedMatrix => {}
        EnvId::CoopReach | EnvId::WeightedCoopReach => {
            let s = env.reach_state().expect("reaching state");
            let corners = s.pos.map(|p| Corner::at(p, cfg.grid_dim));
            let terminal = match (cfg.id, corners) {
                (EnvId::CoopReach, [Some(x), Some(y)]) => x == y,
                (_, [Some(_), Some(_)]) => cfg.id == EnvId::WeightedCoopReach,
                _ => false,
            };
            let col = if terminal { corners[subject].expect("on a corner").index() } else { 4 };
            tally[col] += 1.0;
        }
        EnvId::Lbf => {
            let col = orders.iter().position(|o| *o == collected).unwrap_or(orders.len());
            tally[col] += 1.0;
        }
    }
    Ok(())
}

fn normalize(tally: Vec<f64>) -> Vec<f64> {
    let total: f64 = tally.iter().sum();
    tally.into_iter().map(|t| if total > 0.0 { t / total } else { 0.0 }).collect()
}

fn check_env(env: &EnvConfig) -> Result<Vec<Vec<usize>>, CliError> {
    if env.id == EnvId::Lbf {
        if env.n_items > MAX_PROFILE_ITEMS {
            return Err(CliError::Config(format!("profiles support at most {MAX_PROFILE_ITEMS} items")));
        }
        return Ok(permutations(env.n_items));
    }
    Ok(Vec::new())
}

impl BehaviorProfile {
    /// Each teammate policy paired with its designated AHT-side partner.
    pub fn of_population(pop: &Population, episodes: usize, greedy: bool, seed: u64) -> Result<Self, CliError> {
        if episodes == 0 {
            return Err(CliError::Config("episodes must be positive".into()));
        }
        let orders = check_env(&pop.env)?;
        let columns = profile_columns(&pop.env);
        let mut rows = Vec::with_capacity(pop.k);
        for i in 0..pop.k {
            let s = seed.wrapping_add(i as u64 * 1_000_003);
            let mut env = EnvInstance::new(pop.env.clone(), s)?;
            let mut a = PolicyActor { net: &pop.aht[i], greedy, rng: ChaCha8Rng::seed_from_u64(s ^ 0xA) };
            let mut b = PolicyActor { net: &pop.team[i], greedy, rng: ChaCha8Rng::seed_from_u64(s ^ 0xB) };
            let mut tally = vec![0.0; columns.len()];
            for _ in 0..episodes {
                episode(&mut env, &mut a, &mut b, 1, &orders, &mut tally)?;
            }
            rows.push(ProfileRow { label: format!("P{i}"), freqs: normalize(tally) });
        }
        Ok(BehaviorProfile { env: pop.env.id, subject: "teammate".into(), episodes, columns, rows })
    }

    /// The agent's behavior against each heuristic, over meta-episodes.
    pub fn of_agent(agent: &AhtAgent, episodes: usize, greedy: bool, seed: u64) -> Result<Self, CliError> {
        if episodes == 0 {
            return Err(CliError::Config("episodes must be positive".into()));
        }
        let orders = check_env(&agent.env)?;
        let columns = profile_columns(&agent.env);
        let mut rows = Vec::new();
        for id in 1..=heuristic_count(agent.env.id) {
            let s = seed.wrapping_add(id as u64 * 1_000_003);
            let mut env = EnvInstance::new(agent.env.clone(), s)?;
            let mut a = AgentActor {
                agent,
                hidden: agent.initial_hidden(),
                carry: Carry::default(),
                greedy,
                rng: ChaCha8Rng::seed_from_u64(s ^ 0xA),
            };
            let mut tally = vec![0.0; columns.len()];
            let mut played = 0;
            while played < episodes {
                a.reset();
                let mut h = Heuristic::new(agent.env.clone(), id, s ^ played as u64).map_err(|e| CliError::Config(e.to_string()))?;
                for _ in 0..agent.meta_episodes.min(episodes - played) {
                    episode(&mut env, &mut a, &mut h, 0, &orders, &mut tally)?;
                    played += 1;
                }
            }
            rows.push(ProfileRow { label: format!("H{id}"), freqs: normalize(tally) });
        }
        Ok(BehaviorProfile { env: agent.env.id, subject: "agent".into(), episodes, columns, rows })
    }

    /// Each scripted policy paired with a copy of itself.
    pub fn of_heuristics(env: &EnvConfig, ids: &[usize], episodes: usize, seed: u64) -> Result<Self, CliError> {
        if episodes == 0 {
            return Err(CliError::Config("episodes must be positive".into()));
        }
        let orders = check_env(env)?;
        let columns = profile_columns(env);
        let mut rows = Vec::with_capacity(ids.len());
        for &id in ids {
            let s = seed.wrapping_add(id as u64 * 1_000_003);
            let mut inst = EnvInstance::new(env.clone(), s)?;
            let make = |salt: u64| Heuristic::new(env.clone(), id, s ^ salt).map_err(|e| CliError::Config(e.to_string()));
            let (mut a, mut b) = (make(0xA)?, make(0xB)?);
            let mut tally = vec![0.0; columns.len()];
            for _ in 0..episodes {
                episode(&mut inst, &mut a, &mut b, 1, &orders, &mut tally)?;
            }
            rows.push(ProfileRow { label: format!("H{id}"), freqs: normalize(tally) });
        }
        Ok(BehaviorProfile { env: env.id, subject: "teammate".into(), episodes, columns, rows })
    }

    pub fn row_labels(&self) -> Vec<String> {
        self.rows.iter().map(|r| r.label.clone()).collect()
    }

    pub fn matrix(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.freqs.clone()).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), CliError> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["label".to_string()];
        header.extend(self.columns.iter().cloned());
        wtr.write_record(&header).map_err(CliError::csv)?;
        for r in &self.rows {
            let mut rec = vec![r.label.clone()];
            rec.extend(r.freqs.iter().map(|f| format!("{f:?}")));
            wtr.write_record(&rec).map_err(CliError::csv)?;
        }
        wtr.flush().map_err(CliError::csv)
    }

    /// Reads `(columns, rows)` back from [`BehaviorProfile::write_csv`] output.
    pub fn read_csv<R: Read>(r: R) -> Result<(Vec<String>, Vec<ProfileRow>), CliError> {
        let mut rdr = csv::Reader::from_reader(r);
        let columns: Vec<String> = rdr.headers().map_err(CliError::csv)?.iter().skip(1).map(String::from).collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(CliError::csv)?;
            let freqs = rec
                .iter()
                .skip(1)
                .map(|s| s.parse::<f64>().map_err(CliError::csv))
                .collect::<Result<Vec<_>, _>>()?;
            if freqs.len() != columns.len() {
                return Err(CliError::Config("profile row width does not match the header".into()));
            }
            rows.push(ProfileRow { label: rec.get(0).unwrap_or("").to_string(), freqs });
        }
        Ok((columns, rows))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::heuristics::ITEM_ORDERS;
    use crate::marl::constant_policy;

    #[test]
    fn permutations_are_lexicographic() {
        let p = permutations(3);
        assert_eq!(p.len(), 6);
        for (a, b) in p.iter().zip(ITEM_ORDERS) {
            assert_eq!(a.as_slice(), b.as_slice());
        }
        assert_eq!(permutations(1), vec![vec![0]]);
    }

    #[test]
    fn constant_policy_gives_one_hot_row() {
        let env = EnvConfig::new(EnvId::RepeatedMatrix);
        let pol = |a| constant_policy(&env, &[8], a, 40.0).unwrap();
        let pop = Population::from_policies(env.clone(), vec![pol(1), pol(2)], vec![pol(1), pol(2)], &[8]).unwrap();
        let p = BehaviorProfile::of_population(&pop, 200, false, 0).unwrap();
        assert_eq!(p.rows[0].freqs, vec![0.0, 1.0, 0.0]);
        assert_eq!(p.rows[1].freqs, vec![0.0, 0.0, 1.0]);
        assert_eq!(p.columns, vec!["a0", "a1", "a2"]);
    }

    #[test]
    fn corner_seekers_arrive_at_their_corner() {
        let env = EnvConfig::new(EnvId::CoopReach).with_grid_dim(5);
        let p = BehaviorProfile::of_heuristics(&env, &[8, 9, 10, 11], 100, 3).unwrap();
        for (c, row) in p.rows.iter().enumerate() {
            let mut want = vec![0.0; 5];
            want[c] = 1.0;
            assert_eq!(row.freqs, want, "{}", row.label);
        }
        assert_eq!(p.columns[1], "B");
    }

    #[test]
    fn foraging_orders_are_recovered() {
        let env = EnvConfig::new(EnvId::Lbf);
        let p = BehaviorProfile::of_heuristics(&env, &[3, 8], 50, 0).unwrap();
        for (row, col) in p.rows.iter().zip([0, 5]) {
            let sum: f64 = row.freqs.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(row.freqs[col] > 0.9, "{}: {:?}", row.label, row.freqs);
        }
    }

    #[test]
    fn csv_round_trip() {
        let p = BehaviorProfile {
            env: EnvId::CoopReach,
            subject: "teammate".into(),
            episodes: 3,
            columns: profile_columns(&EnvConfig::new(EnvId::CoopReach)),
            rows: vec![ProfileRow { label: "P0".into(), freqs: vec![1.0 / 3.0, 0.0, 0.0, 2.0 / 3.0, 0.0] }],
        };
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let (cols, rows) = BehaviorProfile::read_csv(buf.as_slice()).unwrap();
        assert_eq!(cols, p.columns);
        assert_eq!(rows, p.rows);
    }

    #[test]
    fn lbf_columns_list_every_order() {
        let cols = profile_columns(&EnvConfig::new(EnvId::Lbf));
        assert_eq!(cols.len(), 7);
        assert_eq!(cols[0], "0>1>2");
        assert_eq!(cols[6], "incomplete");
    }
}
