//! Adaptive ad hoc teamwork agent: a recurrent policy trained across
//! meta-episodes of consecutive episodes with one sampled teammate, and the
//! robustness evaluator that pairs it with scripted partners.

mod eval;
mod train;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::envs::{greedy_step, Corner, EnvConfig, EnvError, EnvId, EnvInstance, Heuristic, JointObservation, Pos, MATRIX_PAYOFF};
use crate::marl::{argmax, MarlError};
use crate::nn::{Activation, Checkpoint, GruCell, GruTape, Head, Mlp, MlpTape, NnError};

pub use eval::{
    evaluate_responder, evaluate_robustness, read_curve_csv, read_robustness_csv, write_curve_csv, write_robustness_csv,
    CurvePoint, EvalSuite, HeuristicScore, RobustnessReport,
};
pub use train::{train_aht, train_aht_with, AhtLogRow, AhtSchedule, AhtTrainer};

#[derive(Debug, Error)]
pub enum AhtError {
    #[error("invalid AHT configuration: {0}")]
    Config(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("value estimate diverged: |V| = {value:.3e} exceeds {limit:.3e}")]
    Divergence { value: f64, limit: f64 },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

impl From<MarlError> for AhtError {
    fn from(e: MarlError) -> Self {
        match e {
            MarlError::Env(e) => AhtError::Env(e),
            MarlError::Nn(e) => AhtError::Nn(e),
            MarlError::NonFinite(s) => AhtError::NonFinite(s),
            other => AhtError::Config(other.to_string()),
        }
    }
}

/// Default number of consecutive episodes played with one teammate.
pub const DEFAULT_META_EPISODES: usize = 5;

/// Recurrent agent. Each step feeds the observation, the previous own action
/// (one-hot), the previous reward and an episode-boundary flag through a
/// feed-forward trunk and a GRU; policy and value heads read the GRU state.
#[derive(Clone, Debug, PartialEq)]
pub struct AhtAgent {
    pub env: EnvConfig,
    pub trunk: Mlp,
    pub cell: GruCell,
    pub policy: Mlp,
    pub value: Mlp,
    pub meta_episodes: usize,
}

/// Auxiliary inputs carried from the previous step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Carry {
    pub prev_action: Option<usize>,
    pub prev_reward: f64,
    pub boundary: bool,
}

pub(crate) struct StepTape {
    pub trunk: MlpTape,
    pub gru: GruTape,
    pub policy: MlpTape,
    pub value: MlpTape,
}

/// Output of one agent step.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentOutput {
    pub probs: Vec<f64>,
    /// Value estimate in environment reward units.
    pub value: f64,
    pub hidden: Vec<f64>,
}

impl AhtAgent {
    pub fn new(env: EnvConfig, trunk_widths: &[usize], l_rep: usize, meta_episodes: usize, rng: &mut impl Rng) -> Result<Self, AhtError> {
        if trunk_widths.is_empty() || trunk_widths.contains(&0) || l_rep == 0 || meta_episodes == 0 {
            return Err(AhtError::Config("trunk widths, L_rep and meta-episode length must be positive".into()));
        }
        let mut dims = vec![Self::input_dim_for(&env)];
        dims.extend_from_slice(trunk_widths);
        let trunk = Mlp::random(&dims, Activation::Tanh, Head::Activated, 1.0, rng)?;
        let cell = GruCell::random(*trunk_widths.last().expect("non-empty"), l_rep, rng)?;
        let policy = Mlp::random(&[l_rep, env.num_actions()], Activation::Tanh, Head::Softmax, 0.01, rng)?;
        let value = Mlp::random(&[l_rep, 1], Activation::Tanh, Head::Linear, 1.0, rng)?;
        Ok(AhtAgent { env, trunk, cell, policy, value, meta_episodes })
    }

    fn input_dim_for(env: &EnvConfig) -> usize {
        env.obs_dim() + env.num_actions() + 2
    }

    pub fn input_dim(&self) -> usize {
        Self::input_dim_for(&self.env)
    }

    pub fn l_rep(&self) -> usize {
        self.cell.hidden_dim()
    }

    pub fn num_params(&self) -> usize {
        self.trunk.num_params() + self.cell.num_params() + self.policy.num_params() + self.value.num_params()
    }

    pub fn initial_hidden(&self) -> Vec<f64> {
        self.cell.initial_hidden()
    }

    pub fn encode_input(&self, obs: &[f64], carry: &Carry) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.input_dim());
        x.extend_from_slice(obs);
        let n = self.env.num_actions();
        x.extend((0..n).map(|a| if carry.prev_action == Some(a) { 1.0 } else { 0.0 }));
        x.push(carry.prev_reward * self.env.reward_scale());
        x.push(if carry.boundary { 1.0 } else { 0.0 });
        x
    }

    pub(crate) fn forward_tape(&self, x: &[f64], h: &[f64]) -> Result<(StepTape, Vec<f64>), NnError> {
        let trunk = self.trunk.forward_tape(x)?;
        let (h_next, gru) = self.cell.step(trunk.output(), h)?;
        let policy = self.policy.forward_tape(&h_next)?;
        let value = self.value.forward_tape(&h_next)?;
        Ok((StepTape { trunk, gru, policy, value }, h_next))
    }

    pub fn forward(&self, x: &[f64], h: &[f64]) -> Result<AgentOutput, NnError> {
        let (tape, hidden) = self.forward_tape(x, h)?;
        Ok(AgentOutput {
            probs: tape.policy.output().to_vec(),
            value: tape.value.output()[0] / self.env.reward_scale(),
            hidden,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.set_meta("kind", "aht_agent");
        ck.set_meta("env", serde_json::to_string(&self.env).expect("serializable config"));
        ck.set_meta("meta_episodes", self.meta_episodes.to_string());
        ck.put_mlp("trunk", &self.trunk);
        ck.put_gru("cell", &self.cell);
        ck.put_mlp("policy", &self.policy);
        ck.put_mlp("value", &self.value);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, NnError> {
        if ck.meta("kind")? != "aht_agent" {
            return Err(NnError::Format("checkpoint does not hold an AHT agent".into()));
        }
        let env: EnvConfig =
            serde_json::from_str(ck.meta("env")?).map_err(|e| NnError::Format(format!("bad env config: {e}")))?;
        let meta_episodes = ck.meta("meta_episodes")?.parse().map_err(|_| NnError::Format("bad meta_episodes".into()))?;
        let agent = AhtAgent {
            trunk: ck.get_mlp("trunk")?,
            cell: ck.get_gru("cell")?,
            policy: ck.get_mlp("policy")?,
            value: ck.get_mlp("value")?,
            env,
            meta_episodes,
        };
        let n = agent.env.num_actions();
        let chained = agent.trunk.input_dim() == agent.input_dim()
            && agent.cell.input_dim() == agent.trunk.output_dim()
            && agent.policy.input_dim() == agent.l_rep()
            && agent.policy.output_dim() == n
            && agent.value.input_dim() == agent.l_rep()
            && agent.value.output_dim() == 1;
        if !chained || agent.meta_episodes == 0 {
            return Err(NnError::Format("AHT agent layers do not chain".into()));
        }
        Ok(agent)
    }
}

/// A member of a training or evaluation teammate set.
#[derive(Clone, Debug, PartialEq)]
pub enum Teammate {
    /// A learned teammate policy, sampled stochastically.
    Policy(Mlp),
    /// A scripted heuristic by 1-based id.
    Heuristic(usize),
}

impl Teammate {
    pub fn label(&self, n: usize) -> String {
        match self {
            Teammate::Policy(_) => format!("P{n}"),
            Teammate::Heuristic(id) => format!("H{id}"),
        }
    }

    pub fn instantiate<'a>(&'a self, env: &EnvConfig, seed: u64) -> Result<Partner<'a>, AhtError> {
        Ok(match self {
            Teammate::Policy(net) => {
                if net.input_dim() != env.obs_dim() || net.output_dim() != env.num_actions() {
                    return Err(AhtError::Config("teammate policy does not match the environment".into()));
                }
                Partner::Policy { net, rng: ChaCha8Rng::seed_from_u64(seed) }
            }
            Teammate::Heuristic(id) => {
                Partner::Heuristic(Heuristic::new(env.clone(), *id, seed).map_err(|e| AhtError::Config(e.to_string()))?)
            }
        })
    }
}

/// A running teammate with its own random stream.
#[derive(Clone, Debug)]
pub enum Partner<'a> {
    Policy { net: &'a Mlp, rng: ChaCha8Rng },
    Heuristic(Heuristic),
}

impl Partner<'_> {
    pub fn act(&mut self, obs: &[f64]) -> Result<usize, AhtError> {
        match self {
            Partner::Policy { net, rng } => Ok(crate::marl::choose_action(net, obs, false, rng)?.0),
            Partner::Heuristic(h) => Ok(h.act(obs)),
        }
    }
}

/// Who plays the AHT seat during a meta-episode.
#[derive(Clone, Copy, Debug)]
pub enum Responder<'a> {
    Agent(&'a AhtAgent),
    /// Uniformly random actions.
    Uniform,
    /// Best response computed from privileged knowledge of the teammate.
    Oracle,
}

/// Best response given the teammate's current internal state. Defined for
/// the matrix game and the reaching environments.
pub fn oracle_action(env: &EnvConfig, partner: &Partner, obs_a: &[f64], obs_b: &[f64]) -> Result<usize, AhtError> {
    match env.id {
        EnvId::RepeatedMatrix => {
            let mix: Vec<f64> = match partner {
                Partner::Heuristic(h) => crate::envs::matrix_mixture(h.id()).expect("valid id").to_vec(),
                Partner::Policy { net, .. } => net.predict(obs_b)?,
            };
            let payoff: Vec<f64> =
                MATRIX_PAYOFF.iter().map(|row| row.iter().zip(&mix).map(|(r, p)| r * p).sum()).collect();
            Ok(argmax(&payoff))
        }
        EnvId::CoopReach | EnvId::WeightedCoopReach => {
            let dest = match partner {
                Partner::Heuristic(h) => h.destination(),
                Partner::Policy { .. } => None,
            }
            .ok_or_else(|| AhtError::Config("the reaching oracle needs a heuristic teammate".into()))?;
            let n = env.grid_dim;
            let own = Pos::decode(obs_a[0], obs_a[1], n);
            Ok(greedy_step(own, dest.pos(n), n, |p| Corner::at(p, n).is_some()).index())
        }
        EnvId::Lbf => Err(AhtError::Config("no oracle best response is defined for foraging".into())),
    }
}

/// One recorded step of a meta-episode.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaStep {
    /// Agent input vector; empty for non-learning responders.
    pub input: Vec<f64>,
    pub action: usize,
    pub logp: f64,
    pub reward: f64,
    /// Value estimate in reward units (0 for non-learning responders).
    pub value: f64,
    /// Episode index within the meta-episode.
    pub episode: usize,
    pub episode_end: bool,
    /// First step of a meta-episode: the hidden state was reset before it.
    pub meta_start: bool,
    pub meta_end: bool,
    /// L2 norm of the hidden state fed into this step.
    pub hidden_norm: f64,
}

/// Steps through meta-episodes against one teammate, carrying the hidden
/// state across episode boundaries.
#[derive(Clone, Debug)]
pub struct MetaRunner<'a> {
    pub env: EnvInstance,
    partner: Partner<'a>,
    pub hidden: Vec<f64>,
    carry: Carry,
    obs: JointObservation,
    episode: usize,
    meta_episodes: usize,
    fresh: bool,
}

impl<'a> MetaRunner<'a> {
    pub fn new(mut env: EnvInstance, partner: Partner<'a>, meta_episodes: usize, hidden_dim: usize) -> Self {
        let obs = env.reset_episode();
        MetaRunner {
            env,
            partner,
            hidden: vec![0.0; hidden_dim],
            carry: Carry::default(),
            obs,
            episode: 0,
            meta_episodes,
            fresh: true,
        }
    }

    /// Begins a new meta-episode with `partner`, resetting the hidden state.
    pub fn restart(&mut self, partner: Partner<'a>) {
        self.partner = partner;
        self.obs = self.env.reset_episode();
        self.hidden.iter_mut().for_each(|h| *h = 0.0);
        self.carry = Carry::default();
        self.episode = 0;
        self.fresh = true;
    }

    pub fn is_finished(&self) -> bool {
        self.episode >= self.meta_episodes
    }

    pub fn partner(&self) -> &Partner<'a> {
        &self.partner
    }

    pub fn step(&mut self, responder: Responder, greedy: bool, rng: &mut impl Rng) -> Result<MetaStep, AhtError> {
        if self.is_finished() {
            return Err(AhtError::Config("meta-episode already finished".into()));
        }
        let b = self.partner.act(&self.obs.obs_b)?;
        let n = self.env.config().num_actions();
        let hidden_norm = self.hidden.iter().map(|h| h * h).sum::<f64>().sqrt();
        let (input, probs, value) = match responder {
            Responder::Agent(agent) => {
                let x = agent.encode_input(&self.obs.obs_a, &self.carry);
                let out = agent.forward(&x, &self.hidden)?;
                self.hidden = out.hidden;
                (x, out.probs, out.value)
            }
            Responder::Uniform => (Vec::new(), vec![1.0 / n as f64; n], 0.0),
            Responder::Oracle => {
                let a = oracle_action(self.env.config(), &self.partner, &self.obs.obs_a, &self.obs.obs_b)?;
                let mut p = vec![0.0; n];
                p[a] = 1.0;
                (Vec::new(), p, 0.0)
            }
        };
        if !value.is_finite() {
            return Err(AhtError::NonFinite("value estimate".into()));
        }
        let action = if greedy {
            argmax(&probs)
        } else {
            WeightedIndex::new(&probs).map_err(|e| AhtError::NonFinite(format!("policy output: {e}")))?.sample(rng)
        };
        let out = self.env.step(action, b)?;
        let step = MetaStep {
            input,
            action,
            logp: probs[action].ln(),
            reward: out.reward,
            value,
            episode: self.episode,
            episode_end: out.done,
            meta_start: self.fresh,
            meta_end: out.done && self.episode + 1 == self.meta_episodes,
            hidden_norm,
        };
        self.fresh = false;
        self.carry = Carry { prev_action: Some(action), prev_reward: out.reward, boundary: out.done };
        if out.done {
            self.episode += 1;
            if !self.is_finished() {
                self.obs = self.env.reset_episode();
            }
        } else {
            self.obs = out.obs;
        }
        Ok(step)
    }
}

/// A complete meta-episode.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaTrajectory {
    pub steps: Vec<MetaStep>,
    pub episode_returns: Vec<f64>,
}

impl MetaTrajectory {
    pub fn total_return(&self) -> f64 {
        self.episode_returns.iter().sum()
    }
}

/// Plays `meta_episodes` consecutive episodes against one fixed teammate,
/// starting from a zero hidden state.
pub fn meta_rollout(
    responder: Responder,
    teammate: &Teammate,
    env: &EnvConfig,
    meta_episodes: usize,
    greedy: bool,
    seed: u64,
) -> Result<MetaTrajectory, AhtError> {
    if meta_episodes == 0 {
        return Err(AhtError::Config("a meta-episode needs at least one episode".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let partner = teammate.instantiate(env, rng.gen())?;
    let hidden_dim = match responder {
        Responder::Agent(a) => a.l_rep(),
        _ => 0,
    };
    let mut runner = MetaRunner::new(EnvInstance::new(env.clone(), rng.gen())?, partner, meta_episodes, hidden_dim);
    let mut steps = Vec::new();
    let mut episode_returns = vec![0.0; meta_episodes];
    while !runner.is_finished() {
        let s = runner.step(responder, greedy, &mut rng)?;
        episode_returns[s.episode] += s.reward;
        steps.push(s);
    }
    Ok(MetaTrajectory { steps, episode_returns })
}
