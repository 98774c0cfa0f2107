use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{MarlError, Population, RolloutBatch, Transition};
use crate::diversity::Objective;
use crate::nn::{Adam, Mlp};

/// Transitions per gradient work unit. Chunk gradients are summed in chunk
/// order, so results do not depend on the number of threads.
const CHUNK: usize = 32;

/// Which teammate policy receives the policy-gradient update for a batch
/// collected by pair `(i, j)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateRule {
    /// Teammate `i`, the policy that generated the data.
    #[default]
    Participating,
    /// Teammate `j`, reusing teammate `i`'s data off-policy.
    AsPrinted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateSettings {
    pub epochs: usize,
    pub minibatches: usize,
    pub clip: f64,
    pub gamma: f64,
    pub w_ent: f64,
    pub target_sync: u64,
    pub rule: UpdateRule,
}

impl Default for UpdateSettings {
    fn default() -> Self {
        UpdateSettings { epochs: 4, minibatches: 4, clip: 0.2, gamma: 0.99, w_ent: 1e-3, target_sync: 200, rule: UpdateRule::Participating }
    }
}

/// Optimizer state for every network of a population.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizers {
    pub aht: Vec<Adam>,
    pub team: Vec<Adam>,
    pub critic: Adam,
    pub critic_steps: u64,
}

impl Optimizers {
    pub fn new(pop: &Population, lr_policy: f64, lr_critic: f64) -> Result<Self, MarlError> {
        let policy = |nets: &[Mlp]| nets.iter().map(|n| Adam::new(n.num_params(), lr_policy)).collect::<Result<Vec<_>, _>>();
        Ok(Optimizers {
            aht: policy(&pop.aht)?,
            team: policy(&pop.team)?,
            critic: Adam::new(pop.critic.num_params(), lr_critic)?,
            critic_steps: 0,
        })
    }
}

#[derive(Clone, Copy)]
struct Sample<'a> {
    t: &'a Transition,
    pair: (usize, usize),
}

fn flatten(batches: &[RolloutBatch]) -> Vec<Sample<'_>> {
    batches.iter().flat_map(|b| b.transitions.iter().map(move |t| Sample { t, pair: b.pair })).collect()
}

fn minibatch_ranges(n: usize, parts: usize) -> Vec<std::ops::Range<usize>> {
    let parts = parts.clamp(1, n.max(1));
    (0..parts).map(|p| p * n / parts..(p + 1) * n / parts).filter(|r| !r.is_empty()).collect()
}

fn add_into(acc: &mut [f64], g: &[f64]) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += b;
    }
}

fn guard(pop: &Population, v_raw: f64) -> Result<(), MarlError> {
    let limit = 10.0 * pop.env.max_episode_return();
    if !v_raw.is_finite() {
        return Err(MarlError::NonFinite(format!("critic value {v_raw}")));
    }
    if v_raw.abs() > limit {
        return Err(MarlError::Divergence { value: v_raw, limit });
    }
    Ok(())
}

/// TD regression of the critic towards `r + γ V_target(H')` (scaled units),
/// with a hard target copy every `target_sync` optimizer steps. Returns the
/// mean squared TD error of the last epoch.
pub fn critic_update(
    pop: &mut Population,
    opt: &mut Optimizers,
    batches: &[RolloutBatch],
    s: &UpdateSettings,
    rng: &mut impl Rng,
) -> Result<f64, MarlError> {
    let samples = flatten(batches);
    if samples.is_empty() {
        return Ok(0.0);
    }
    let scale = pop.env.reward_scale();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut last_loss = 0.0;
    for _ in 0..s.epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        for range in minibatch_ranges(order.len(), s.minibatches) {
            let idx = &order[range];
            let pop_ref = &*pop;
            let parts: Vec<Result<(Vec<f64>, f64), MarlError>> = idx
                .par_chunks(CHUNK)
                .map(|chunk| {
                    let mut g = vec![0.0; pop_ref.critic.num_params()];
                    let mut loss = 0.0;
                    for &n in chunk {
                        let Sample { t, pair: (i, j) } = samples[n];
                        let x = pop_ref.critic_input(&t.obs_a, &t.obs_b, i, j);
                        let (v, tape) = pop_ref.critic.forward(&x)?;
                        guard(pop_ref, v[0] / scale)?;
                        let boot = if t.done {
                            0.0
                        } else {
                            let x2 = pop_ref.critic_input(&t.next_obs_a, &t.next_obs_b, i, j);
                            pop_ref.target_critic.predict(&x2)?[0]
                        };
                        let err = v[0] - (t.reward * scale + s.gamma * boot);
                        loss += err * err;
                        pop_ref.critic.backward_into(&tape, &[err], &mut g)?;
                    }
                    Ok((g, loss))
                })
                .collect();
            let mut grads = vec![0.0; pop.critic.num_params()];
            for part in parts {
                let (g, l) = part?;
                add_into(&mut grads, &g);
                epoch_loss += l;
            }
            let m = idx.len() as f64;
            grads.iter_mut().for_each(|g| *g /= m);
            if grads.iter().any(|g| !g.is_finite()) {
                return Err(MarlError::NonFinite("critic gradient".into()));
            }
            opt.critic.step(pop.critic.params_mut(), &grads)?;
            opt.critic_steps += 1;
            if s.target_sync > 0 && opt.critic_steps % s.target_sync == 0 {
                pop.sync_target();
            }
        }
        last_loss = epoch_loss / samples.len() as f64;
    }
    Ok(last_loss)
}

/// One-step TD errors `r + γ V(H') − V(H)` in raw reward units from the current critic.
pub fn td_errors(pop: &Population, batch: &RolloutBatch, gamma: f64) -> Result<Vec<f64>, MarlError> {
    let (i, j) = batch.pair;
    batch
        .transitions
        .iter()
        .map(|t| {
            let v = pop.value(&t.obs_a, &t.obs_b, i, j)?;
            guard(pop, v)?;
            let v2 = if t.done { 0.0 } else { pop.value(&t.next_obs_a, &t.next_obs_b, i, j)? };
            let d = t.reward + gamma * v2 - v;
            if !d.is_finite() {
                return Err(MarlError::NonFinite("advantage".into()));
            }
            Ok(d)
        })
        .collect()
}

/// Gradient of the negated clipped surrogate minus the entropy bonus with
/// respect to the logits of a softmax policy.
pub fn surrogate_logit_grad(p: &[f64], action: usize, logp_old: f64, adv: f64, clip: f64, ent_coef: f64) -> Vec<f64> {
    let ratio = (p[action].ln() - logp_old).exp();
    let clipped = (adv > 0.0 && ratio > 1.0 + clip) || (adv < 0.0 && ratio < 1.0 - clip);
    let entropy: f64 = -p.iter().map(|q| q * q.ln()).sum::<f64>();
    p.iter()
        .enumerate()
        .map(|(k, &pk)| {
            let pg = if clipped {
                0.0
            } else {
                let onehot = if k == action { 1.0 } else { 0.0 };
                -adv * ratio * (onehot - pk)
            };
            pg + ent_coef * pk * (pk.ln() + entropy)
        })
        .collect()
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().map(|q| q * q.ln()).sum::<f64>()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PolicyStats {
    /// Mean policy entropy over the batch before the update.
    pub entropy: f64,
    /// Mean weighted advantage.
    pub mean_advantage: f64,
}

#[derive(Default)]
struct GradSet {
    aht: Vec<Option<Vec<f64>>>,
    team: Vec<Option<Vec<f64>>>,
}

impl GradSet {
    fn new(k: usize) -> Self {
        GradSet { aht: vec![None; k], team: vec![None; k] }
    }

    fn slot<'a>(slots: &'a mut [Option<Vec<f64>>], n: usize, len: usize) -> &'a mut Vec<f64> {
        slots[n].get_or_insert_with(|| vec![0.0; len])
    }

    fn merge(&mut self, other: GradSet) {
        for (mine, theirs) in self.aht.iter_mut().chain(self.team.iter_mut()).zip(other.aht.into_iter().chain(other.team)) {
            if let Some(g) = theirs {
                match mine {
                    Some(m) => add_into(m, &g),
                    None => *mine = Some(g),
                }
            }
        }
    }
}

/// Clipped-surrogate update of both seat policies of every batch, with the
/// one-step advantage multiplied by the batch's pair weight and the entropy
/// bonus scaled by the teammate's self-play weight.
pub fn policy_update(
    pop: &mut Population,
    opt: &mut Optimizers,
    batches: &[RolloutBatch],
    objective: &Objective,
    s: &UpdateSettings,
    rng: &mut impl Rng,
) -> Result<PolicyStats, MarlError> {
    let k = pop.k;
    let mut adv = Vec::new();
    let mut coef = Vec::new();
    for b in batches {
        let (i, j) = b.pair;
        let w = objective.weight(k, i, j)?;
        let c = s.w_ent * objective.weight(k, i, i)?;
        for d in td_errors(pop, b, s.gamma)? {
            adv.push(w * d);
            coef.push(c);
        }
    }
    let samples = flatten(batches);
    if samples.is_empty() {
        return Ok(PolicyStats::default());
    }
    let mut ent_sum = 0.0;
    for smp in &samples {
        let (i, j) = smp.pair;
        ent_sum += entropy(&pop.aht[j].predict(&smp.t.obs_a)?) + entropy(&pop.team[i].predict(&smp.t.obs_b)?);
    }
    let stats = PolicyStats {
        entropy: ent_sum / (2 * samples.len()) as f64,
        mean_advantage: adv.iter().sum::<f64>() / adv.len() as f64,
    };

    let mut order: Vec<usize> = (0..samples.len()).collect();
    for _ in 0..s.epochs {
        order.shuffle(rng);
        for range in minibatch_ranges(order.len(), s.minibatches) {
            let idx = &order[range];
            let m = idx.len() as f64;
            let pop_ref = &*pop;
            let parts: Vec<Result<GradSet, MarlError>> = idx
                .par_chunks(CHUNK)
                .map(|chunk| {
                    let mut gs = GradSet::new(k);
                    for &n in chunk {
                        let Sample { t, pair: (i, j) } = samples[n];
                        let tm = match s.rule {
                            UpdateRule::Participating => i,
                            UpdateRule::AsPrinted => j,
                        };
                        let seats = [(&pop_ref.aht[j], &t.obs_a, t.action_a, t.logp_a, true, j), (&pop_ref.team[tm], &t.obs_b, t.action_b, t.logp_b, false, tm)];
                        for (net, obs, action, logp, is_aht, slot) in seats {
                            let (p, tape) = net.forward(obs)?;
                            let mut g = surrogate_logit_grad(&p, action, logp, adv[n], s.clip, coef[n]);
                            g.iter_mut().for_each(|x| *x /= m);
                            let slots = if is_aht { &mut gs.aht } else { &mut gs.team };
                            let acc = GradSet::slot(slots, slot, net.num_params());
                            net.backward_raw_into(&tape, &g, acc)?;
                        }
                    }
                    Ok(gs)
                })
                .collect();
            let mut total = GradSet::new(k);
            for part in parts {
                total.merge(part?);
            }
            for (n, g) in total.aht.iter().enumerate() {
                if let Some(g) = g {
                    opt.aht[n].step(pop.aht[n].params_mut(), g)?;
                }
            }
            for (n, g) in total.team.iter().enumerate() {
                if let Some(g) = g {
                    opt.team[n].step(pop.team[n].params_mut(), g)?;
                }
            }
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn surrogate_gradient_matches_difference_quotient() {
        let logits = [0.3, -0.2, 0.5];
        let obj = |z: &[f64]| {
            let p = crate::nn::softmax(z);
            let ratio = (p[1].ln() - (0.3f64).ln()).exp();
            -(ratio * 2.0) - 0.1 * entropy(&p)
        };
        let p = crate::nn::softmax(&logits);
        let g = surrogate_logit_grad(&p, 1, (0.3f64).ln(), 2.0, 10.0, 0.1);
        for k in 0..3 {
            let mut up = logits;
            let mut dn = logits;
            up[k] += 1e-6;
            dn[k] -= 1e-6;
            let num = (obj(&up) - obj(&dn)) / 2e-6;
            assert!((num - g[k]).abs() < 1e-6, "{k}: {num} vs {}", g[k]);
        }
    }

    #[test]
    fn clipping_zeroes_policy_term() {
        let p = [0.9, 0.05, 0.05];
        // ratio 0.9 / 0.5 = 1.8 > 1.2 with positive advantage.
        let g = surrogate_logit_grad(&p, 0, 0.5f64.ln(), 1.0, 0.2, 0.0);
        assert!(g.iter().all(|x| *x == 0.0));
        let g = surrogate_logit_grad(&p, 0, 0.5f64.ln(), -1.0, 0.2, 0.0);
        assert!(g.iter().any(|x| *x != 0.0));
    }

    #[test]
    fn minibatches_partition() {
        let r = minibatch_ranges(10, 4);
        assert_eq!(r.iter().map(|x| x.len()).sum::<usize>(), 10);
        assert_eq!(minibatch_ranges(2, 4).len(), 2);
    }
}
