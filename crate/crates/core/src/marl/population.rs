use rand::Rng;

use crate::envs::EnvConfig;
use crate::nn::{Activation, Checkpoint, Head, Mlp, NnError};

/// `K` AHT-side policies, `K` teammate policies and a pair-conditioned critic.
///
/// Pair `(i, j)` means teammate `i` plays with AHT-side policy `j`. The critic
/// sees both seats' observations followed by one-hot encodings of `j` and `i`
/// and predicts the discounted return in reward-scaled units.
#[derive(Clone, Debug, PartialEq)]
pub struct Population {
    pub env: EnvConfig,
    pub k: usize,
    pub aht: Vec<Mlp>,
    pub team: Vec<Mlp>,
    pub critic: Mlp,
    pub target_critic: Mlp,
}

fn dims(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut d = Vec::with_capacity(hidden.len() + 2);
    d.push(input);
    d.extend_from_slice(hidden);
    d.push(output);
    d
}

impl Population {
    pub fn new(env: EnvConfig, k: usize, hidden: &[usize], rng: &mut impl Rng) -> Result<Self, NnError> {
        if k == 0 {
            return Err(NnError::Shape("population size must be positive".into()));
        }
        let policy_dims = dims(env.obs_dim(), hidden, env.num_actions());
        let policy = |rng: &mut _| Mlp::random(&policy_dims, Activation::Tanh, Head::Softmax, 0.01, rng);
        let aht = (0..k).map(|_| policy(rng)).collect::<Result<Vec<_>, _>>()?;
        let team = (0..k).map(|_| policy(rng)).collect::<Result<Vec<_>, _>>()?;
        let critic =
            Mlp::random(&dims(2 * env.obs_dim() + 2 * k, hidden, 1), Activation::Tanh, Head::Linear, 1.0, rng)?;
        Ok(Population { target_critic: critic.clone(), env, k, aht, team, critic })
    }

    /// Population whose policies are given directly; the critic is zeroed.
    pub fn from_policies(env: EnvConfig, aht: Vec<Mlp>, team: Vec<Mlp>, hidden: &[usize]) -> Result<Self, NnError> {
        let k = aht.len();
        if team.len() != k || k == 0 {
            return Err(NnError::Shape(format!("{} AHT-side vs {} teammate policies", k, team.len())));
        }
        let critic = Mlp::zeros(&dims(2 * env.obs_dim() + 2 * k, hidden, 1), Activation::Tanh, Head::Linear)?;
        Ok(Population { target_critic: critic.clone(), env, k, aht, team, critic })
    }

    pub fn critic_input(&self, obs_a: &[f64], obs_b: &[f64], i: usize, j: usize) -> Vec<f64> {
        let mut x = Vec::with_capacity(obs_a.len() + obs_b.len() + 2 * self.k);
        x.extend_from_slice(obs_a);
        x.extend_from_slice(obs_b);
        x.extend((0..self.k).map(|c| if c == j { 1.0 } else { 0.0 }));
        x.extend((0..self.k).map(|c| if c == i { 1.0 } else { 0.0 }));
        x
    }

    /// Critic estimate in raw reward units.
    pub fn value(&self, obs_a: &[f64], obs_b: &[f64], i: usize, j: usize) -> Result<f64, NnError> {
        let v = self.critic.predict(&self.critic_input(obs_a, obs_b, i, j))?[0];
        Ok(v / self.env.reward_scale())
    }

    pub fn sync_target(&mut self) {
        self.target_critic = self.critic.clone();
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.set_meta("kind", "population");
        ck.set_meta("k", self.k.to_string());
        ck.set_meta("env", serde_json::to_string(&self.env).expect("serializable config"));
        for (n, p) in self.aht.iter().enumerate() {
            ck.put_mlp(&format!("aht{n}"), p);
        }
        for (n, p) in self.team.iter().enumerate() {
            ck.put_mlp(&format!("team{n}"), p);
        }
        ck.put_mlp("critic", &self.critic);
        ck.put_mlp("target_critic", &self.target_critic);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, NnError> {
        if ck.meta("kind")? != "population" {
            return Err(NnError::Format("checkpoint does not hold a population".into()));
        }
        let k: usize = ck.meta("k")?.parse().map_err(|_| NnError::Format("bad population size".into()))?;
        let env: EnvConfig =
            serde_json::from_str(ck.meta("env")?).map_err(|e| NnError::Format(format!("bad env config: {e}")))?;
        let aht = (0..k).map(|n| ck.get_mlp(&format!("aht{n}"))).collect::<Result<Vec<_>, _>>()?;
        let team = (0..k).map(|n| ck.get_mlp(&format!("team{n}"))).collect::<Result<Vec<_>, _>>()?;
        let pop = Population { env, k, aht, team, critic: ck.get_mlp("critic")?, target_critic: ck.get_mlp("target_critic")? };
        if pop.aht.iter().chain(&pop.team).any(|p| p.input_dim() != pop.env.obs_dim()) {
            return Err(NnError::Format("policy input width does not match the environment".into()));
        }
        Ok(pop)
    }
}

/// A policy whose output is the same one-hot-ish distribution at every input:
/// zero weights and a final bias of `logit` on `action`.
pub fn constant_policy(env: &EnvConfig, hidden: &[usize], action: usize, logit: f64) -> Result<Mlp, NnError> {
    let d = dims(env.obs_dim(), hidden, env.num_actions());
    let mut net = Mlp::zeros(&d, Activation::Tanh, Head::Softmax)?;
    let n = net.num_params();
    let out = env.num_actions();
    // The last `out` parameters are the output bias.
    net.params_mut()[n - out + action] = logit;
    Ok(net)
}
