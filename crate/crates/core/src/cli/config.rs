//! Experiment configuration: a JSON file merged over per-environment defaults.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::CliError;
use crate::aht::AhtSchedule;
use crate::diversity::LipoConvention;
use crate::envs::{EnvConfig, EnvId};
use crate::marl::TrainSchedule;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Lbrdiv,
    Brdiv,
    Lipo,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Lbrdiv => "lbrdiv",
            Method::Brdiv => "brdiv",
            Method::Lipo => "lipo",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvBlock {
    pub id: EnvId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_items: Option<usize>,
}

impl EnvBlock {
    pub fn config(&self) -> EnvConfig {
        let mut c = EnvConfig::new(self.id);
        if let Some(g) = self.grid_dim {
            c.grid_dim = g;
        }
        if let Some(h) = self.horizon {
            c.horizon = h;
        }
        if let Some(n) = self.n_items {
            c.n_items = n;
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationBlock {
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub lipo_convention: LipoConvention,
    pub schedule: TrainSchedule,
}

/// Where the AHT agent's training partners come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TeammateSource {
    /// Scripted heuristics by 1-based id.
    Heuristics(Vec<usize>),
    /// Teammate policies of population checkpoints.
    Populations(Vec<PathBuf>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AhtBlock {
    pub schedule: AhtSchedule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teammates: Option<TeammateSource>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalBlock {
    /// Heuristic ids; all of the environment's heuristics when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heuristics: Option<Vec<usize>>,
    pub meta_episodes_per_teammate: usize,
    #[serde(default)]
    pub greedy: bool,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuntimeBlock {
    pub seeds: Vec<u64>,
    /// Worker-pool size; 0 uses every core. Results do not depend on it.
    pub n_threads: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Environment steps between intermediate checkpoints; 0 disables them.
    pub checkpoint_every: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvBlock,
    pub generation: GenerationBlock,
    pub aht: AhtBlock,
    pub eval: EvalBlock,
    pub runtime: RuntimeBlock,
}

/// Population size and tolerance defaults.
pub fn paper_k_tau(env: EnvId) -> (usize, f64) {
    match env {
        EnvId::RepeatedMatrix => (3, 1.0),
        EnvId::CoopReach => (4, 0.2),
        EnvId::WeightedCoopReach => (4, 0.5),
        EnvId::Lbf => (6, 0.1),
    }
}

/// Baseline weight defaults.
pub fn paper_alpha(env: EnvId, method: Method) -> Option<f64> {
    let (lipo, brdiv) = match env {
        EnvId::RepeatedMatrix => (0.5, 1.0),
        EnvId::CoopReach => (8.0, 10.0),
        EnvId::WeightedCoopReach => (0.25, 1.0),
        EnvId::Lbf => (0.08, 0.4),
    };
    match method {
        Method::Lbrdiv => None,
        Method::Brdiv => Some(brdiv),
        Method::Lipo => Some(lipo),
    }
}

impl ExperimentConfig {
    /// Every default for `env`, including population size, tolerance and
    /// baseline weights.
    pub fn paper_defaults(env: EnvId, method: Method) -> Self {
        let (k, tau) = paper_k_tau(env);
        ExperimentConfig {
            env: EnvBlock { id: env, grid_dim: None, horizon: None, n_items: None },
            generation: GenerationBlock {
                method,
                k: Some(k),
                tau: (method == Method::Lbrdiv).then_some(tau),
                alpha: paper_alpha(env, method),
                lipo_convention: LipoConvention::default(),
                schedule: TrainSchedule::paper_defaults(env),
            },
            aht: AhtBlock { schedule: AhtSchedule::paper_defaults(env), teammates: None },
            eval: EvalBlock { heuristics: None, meta_episodes_per_teammate: 50, greedy: false, seed: 0 },
            runtime: RuntimeBlock { seeds: vec![0, 1, 2, 3], n_threads: 0, output_dir: None, checkpoint_every: 0 },
        }
    }

    pub fn env_config(&self) -> EnvConfig {
        self.env.config()
    }

    pub fn k(&self) -> usize {
        self.generation.k.expect("validated")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let g = &self.generation;
        self.env_config().validate().map_err(|e| CliError::Config(e.to_string()))?;
        let hint = "run with `--use-paper-defaults <env>` to fill it from the published defaults";
        match g.k {
            None => return Err(CliError::Config(format!("generation.k is missing; {hint}"))),
            Some(0) => return Err(CliError::Config("generation.k must be positive".into())),
            _ => {}
        }
        match g.method {
            Method::Lbrdiv => match g.tau {
                None => return Err(CliError::Config(format!("generation.tau is required for lbrdiv; {hint}"))),
                Some(t) if !t.is_finite() => return Err(CliError::Config("generation.tau must be finite".into())),
                _ => {}
            },
            Method::Brdiv | Method::Lipo => match g.alpha {
                None => {
                    let table = paper_alpha(self.env.id, g.method).expect("baseline");
                    return Err(CliError::Config(format!(
                        "generation.alpha is required for {} (published default for {}: {table}); {hint}",
                        g.method.name(),
                        self.env.id.name()
                    )));
                }
                Some(a) if !(a >= 0.0 && a.is_finite()) => {
                    return Err(CliError::Config("generation.alpha must be non-negative".into()))
                }
                _ => {}
            },
        }
        g.schedule.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.aht.schedule.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.runtime.seeds.is_empty() {
            return Err(CliError::Config("runtime.seeds must not be empty".into()));
        }
        if self.eval.meta_episodes_per_teammate == 0 {
            return Err(CliError::Config("eval.meta_episodes_per_teammate must be positive".into()));
        }
        Ok(())
    }
}

/// Recursively overlays `top` onto `base`: objects merge key by key, any
/// other value replaces.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Resolves a user document into a full configuration.
///
/// Schedules, evaluation and runtime blocks always fall back to the
/// environment's defaults. Population size, tolerance and baseline weight are
/// only filled in when `paper_defaults` names the environment.
pub fn resolve(user: Value, paper_defaults: Option<EnvId>) -> Result<ExperimentConfig, CliError> {
    if !user.is_object() {
        return Err(CliError::Config("configuration must be a JSON object".into()));
    }
    let file_env = match user.pointer("/env/id") {
        Some(v) => Some(
            serde_json::from_value::<EnvId>(v.clone()).map_err(|e| CliError::Config(format!("env.id: {e}")))?,
        ),
        None => None,
    };
    let env = match (paper_defaults, file_env) {
        (Some(a), Some(b)) if a != b => {
            return Err(CliError::Config(format!(
                "--use-paper-defaults {} conflicts with env.id {}",
                a.name(),
                b.name()
            )))
        }
        (Some(a), _) => a,
        (None, Some(b)) => b,
        (None, None) => return Err(CliError::Config("env.id is required".into())),
    };
    let method = match user.pointer("/generation/method") {
        Some(v) => serde_json::from_value::<Method>(v.clone())
            .map_err(|e| CliError::Config(format!("generation.method: {e}")))?,
        None => Method::Lbrdiv,
    };
    let mut base = serde_json::to_value(ExperimentConfig::paper_defaults(env, method)).expect("serializable");
    if paper_defaults.is_none() {
        let g = base["generation"].as_object_mut().expect("object");
        for key in ["k", "tau", "alpha"] {
            g.remove(key);
        }
    }
    merge(&mut base, user);
    let cfg: ExperimentConfig = serde_json::from_value(base).map_err(|e| CliError::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_env(s: &str) -> Result<EnvId, String> {
    EnvId::parse(s).ok_or_else(|| {
        let names: Vec<&str> = EnvId::ALL.iter().map(|e| e.name()).collect();
        format!("unknown environment {s:?}; expected one of {}", names.join(", "))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn paper_defaults_for_the_matrix_game() {
        let cfg = resolve(json!({}), Some(EnvId::RepeatedMatrix)).unwrap();
        assert_eq!(cfg.k(), 3);
        assert_eq!(cfg.generation.tau, Some(1.0));
        assert_eq!(cfg.generation.schedule.lr_alpha, 0.05);
        assert_eq!(cfg.generation.schedule.t_lagrange, 10);
        let lbf = resolve(json!({"env": {"id": "lbf"}}), Some(EnvId::Lbf)).unwrap();
        assert_eq!((lbf.k(), lbf.generation.tau), (6, Some(0.1)));
    }

    #[test]
    fn baseline_alpha_defaults_only_on_request() {
        let doc = json!({"env": {"id": "repeated_matrix"}, "generation": {"method": "brdiv", "k": 3}});
        let err = resolve(doc.clone(), None).unwrap_err().to_string();
        assert!(err.contains("--use-paper-defaults") && err.contains("1"), "{err}");
        let cfg = resolve(doc, Some(EnvId::RepeatedMatrix)).unwrap();
        assert_eq!(cfg.generation.alpha, Some(1.0));
        let lipo = resolve(json!({"generation": {"method": "lipo"}}), Some(EnvId::RepeatedMatrix)).unwrap();
        assert_eq!(lipo.generation.alpha, Some(0.5));
    }

    #[test]
    fn user_values_override_and_unknown_keys_fail() {
        let doc = json!({
            "env": {"id": "coop_reach", "grid_dim": 5},
            "generation": {"method": "lbrdiv", "k": 2, "tau": 0.3, "schedule": {"total_steps": 1000}},
            "runtime": {"seeds": [7]}
        });
        let cfg = resolve(doc, None).unwrap();
        assert_eq!(cfg.env_config().grid_dim, 5);
        assert_eq!(cfg.generation.schedule.total_steps, 1000);
        assert_eq!(cfg.generation.schedule.n_threads, 160);
        assert_eq!(cfg.runtime.seeds, vec![7]);
        let bad = json!({"env": {"id": "coop_reach"}, "generation": {"method": "lbrdiv", "k": 2, "tau": 1.0, "lr": 3}});
        assert!(resolve(bad, None).is_err());
        let conflict = json!({"env": {"id": "lbf"}});
        assert!(resolve(conflict, Some(EnvId::CoopReach)).is_err());
        assert!(resolve(json!({}), None).is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = resolve(json!({}), Some(EnvId::WeightedCoopReach)).unwrap();
        let again = resolve(serde_json::to_value(&cfg).unwrap(), None).unwrap();
        assert_eq!(cfg, again);
    }
}
