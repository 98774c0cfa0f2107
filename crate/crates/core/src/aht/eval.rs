use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::{meta_rollout, AhtAgent, AhtError, Responder, Teammate};
use crate::envs::{heuristic_count, EnvConfig};

/// Scripted partners and sampling budget for robustness evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSuite {
    pub env: EnvConfig,
    /// 1-based heuristic ids.
    pub heuristics: Vec<usize>,
    /// Meta-episodes played against each heuristic.
    pub meta_episodes_per_teammate: usize,
    pub greedy: bool,
    pub seed: u64,
}

impl EvalSuite {
    /// Every heuristic of the environment.
    pub fn full(env: EnvConfig, meta_episodes_per_teammate: usize, seed: u64) -> Self {
        let heuristics = (1..=heuristic_count(env.id)).collect();
        EvalSuite { env, heuristics, meta_episodes_per_teammate, greedy: false, seed }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeuristicScore {
    pub heuristic_id: usize,
    /// Mean episodic return.
    pub mean_return: f64,
    pub stderr: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub env: EnvConfig,
    /// Teammates are drawn once per meta-episode and kept for all its episodes.
    pub teammate_sampling: String,
    pub meta_episodes: usize,
    /// What `n` counts: training seeds, or episodes when only one agent was evaluated.
    pub sample_unit: String,
    pub scores: Vec<HeuristicScore>,
    /// Mean over heuristics with equal weight.
    pub overall_mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_seeds: usize,
    pub checkpoint_step: Option<u64>,
}

impl RobustnessReport {
    pub fn score(&self, heuristic_id: usize) -> Option<&HeuristicScore> {
        self.scores.iter().find(|s| s.heuristic_id == heuristic_id)
    }

    /// Converts an episodic return to a per-step return over the full horizon.
    pub fn per_step(&self, episodic: f64) -> f64 {
        episodic / self.env.horizon as f64
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable report")
    }
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Half-width multiplier of a two-sided 95% t interval.
fn t95(dof: usize) -> f64 {
    if dof == 0 {
        return f64::NAN;
    }
    StudentsT::new(0.0, 1.0, dof as f64).expect("positive dof").inverse_cdf(0.975)
}

/// Episode returns of every responder against every heuristic:
/// `[responder][heuristic] -> returns`.
fn play(responders: &[Responder], meta_episodes: usize, suite: &EvalSuite) -> Result<Vec<Vec<Vec<f64>>>, AhtError> {
    if suite.heuristics.is_empty() || suite.meta_episodes_per_teammate == 0 {
        return Err(AhtError::Config("evaluation suite needs heuristics and at least one meta-episode".into()));
    }
    let jobs: Vec<(usize, usize, usize)> = (0..responders.len())
        .flat_map(|r| (0..suite.heuristics.len()).flat_map(move |h| (0..suite.meta_episodes_per_teammate).map(move |k| (r, h, k))))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(r, h, k)| {
            let id = suite.heuristics[h];
            // Common random numbers: every responder meets the same partner streams.
            let seed = suite.seed ^ ((id as u64) << 32) ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            meta_rollout(responders[r], &Teammate::Heuristic(id), &suite.env, meta_episodes, suite.greedy, seed)
                .map(|t| t.episode_returns)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = vec![vec![Vec::new(); suite.heuristics.len()]; responders.len()];
    for ((r, h, _), returns) in jobs.into_iter().zip(runs) {
        out[r][h].extend(returns);
    }
    Ok(out)
}

fn report(returns: Vec<Vec<Vec<f64>>>, meta_episodes: usize, suite: &EvalSuite) -> RobustnessReport {
    let n_seeds = returns.len();
    let h = suite.heuristics.len();
    let (scores, overall_mean, half, sample_unit) = if n_seeds >= 2 {
        let per_seed: Vec<Vec<f64>> = returns.iter().map(|r| r.iter().map(|x| mean_se(x).0).collect()).collect();
        let scores = (0..h)
            .map(|k| {
                let xs: Vec<f64> = per_seed.iter().map(|s| s[k]).collect();
                let (m, se) = mean_se(&xs);
                HeuristicScore { heuristic_id: suite.heuristics[k], mean_return: m, stderr: se, n: n_seeds }
            })
            .collect();
        let overall: Vec<f64> = per_seed.iter().map(|s| s.iter().sum::<f64>() / h as f64).collect();
        let (m, se) = mean_se(&overall);
        (scores, m, t95(n_seeds - 1) * se, "seed")
    } else {
        let scores: Vec<HeuristicScore> = returns[0]
            .iter()
            .zip(&suite.heuristics)
            .map(|(x, id)| {
                let (m, se) = mean_se(x);
                HeuristicScore { heuristic_id: *id, mean_return: m, stderr: se, n: x.len() }
            })
            .collect();
        let m = scores.iter().map(|s| s.mean_return).sum::<f64>() / h as f64;
        let se = scores.iter().map(|s| s.stderr.powi(2)).sum::<f64>().sqrt() / h as f64;
        let dof = scores.iter().map(|s| s.n).sum::<usize>().saturating_sub(h);
        (scores, m, t95(dof) * se, "episode")
    };
    RobustnessReport {
        env: suite.env.clone(),
        teammate_sampling: "per_meta_episode".into(),
        meta_episodes,
        sample_unit: sample_unit.into(),
        scores,
        overall_mean,
        ci_low: overall_mean - half,
        ci_high: overall_mean + half,
        n_seeds,
        checkpoint_step: None,
    }
}

/// Robustness of agents trained from different seeds against the suite's
/// heuristics. With several agents the interval is across seeds.
pub fn evaluate_robustness(agents: &[AhtAgent], suite: &EvalSuite) -> Result<RobustnessReport, AhtError> {
    let first = agents.first().ok_or_else(|| AhtError::Config("no agents to evaluate".into()))?;
    if agents.iter().any(|a| a.env != suite.env || a.meta_episodes != first.meta_episodes) {
        return Err(AhtError::Config("agents must share the suite's environment and meta-episode length".into()));
    }
    let responders: Vec<Responder> = agents.iter().map(Responder::Agent).collect();
    Ok(report(play(&responders, first.meta_episodes, suite)?, first.meta_episodes, suite))
}

/// Robustness of a non-learning responder such as the oracle best response.
pub fn evaluate_responder(responder: Responder, meta_episodes: usize, suite: &EvalSuite) -> Result<RobustnessReport, AhtError> {
    Ok(report(play(&[responder], meta_episodes, suite)?, meta_episodes, suite))
}

fn csv_err(e: impl std::fmt::Display) -> AhtError {
    AhtError::Config(format!("csv: {e}"))
}

/// Writes `heuristic_id,mean_return,stderr,n`.
pub fn write_robustness_csv<W: Write>(report: &RobustnessReport, w: W) -> Result<(), AhtError> {
    let mut wtr = csv::Writer::from_writer(w);
    for s in &report.scores {
        wtr.serialize(s).map_err(csv_err)?;
    }
    wtr.flush().map_err(csv_err)
}

pub fn read_robustness_csv<R: Read>(r: R) -> Result<Vec<HeuristicScore>, AhtError> {
    csv::Reader::from_reader(r).deserialize().collect::<Result<_, _>>().map_err(csv_err)
}

/// One point of a learning curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: u64,
    pub mean_return: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
}

impl CurvePoint {
    pub fn from_report(step: u64, r: &RobustnessReport) -> Self {
        CurvePoint { step, mean_return: r.overall_mean, ci_low: r.ci_low, ci_high: r.ci_high, n: r.n_seeds }
    }
}

pub fn write_curve_csv<W: Write>(points: &[CurvePoint], w: W) -> Result<(), AhtError> {
    let mut wtr = csv::Writer::from_writer(w);
    for p in points {
        wtr.serialize(p).map_err(csv_err)?;
    }
    wtr.flush().map_err(csv_err)
}

pub fn read_curve_csv<R: Read>(r: R) -> Result<Vec<CurvePoint>, AhtError> {
    csv::Reader::from_reader(r).deserialize().collect::<Result<_, _>>().map_err(csv_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::EnvId;

    fn suite(n: usize) -> EvalSuite {
        EvalSuite::full(EnvConfig::new(EnvId::RepeatedMatrix), n, 1)
    }

    #[test]
    fn oracle_matches_analytic_best_responses() {
        let r = evaluate_responder(Responder::Oracle, 5, &suite(400)).unwrap();
        let exact = [10.0, 6.0, 6.0, 7.6, 4.8, 5.4];
        for (s, e) in r.scores.iter().zip(exact) {
            assert!((r.per_step(s.mean_return) - e).abs() < 0.1, "H{}: {}", s.heuristic_id, s.mean_return);
        }
        assert_eq!(r.score(1).unwrap().stderr, 0.0);
        assert_eq!(r.sample_unit, "episode");
        assert!(r.ci_low <= r.overall_mean && r.overall_mean <= r.ci_high);
    }

    #[test]
    fn uniform_agent_against_constant_partner() {
        let r = evaluate_responder(Responder::Uniform, 5, &suite(200)).unwrap();
        let h1 = r.per_step(r.score(1).unwrap().mean_return);
        assert!((h1 - 14.0 / 3.0).abs() < 0.2, "{h1}");
        assert_eq!(r.score(1).unwrap().n, 1000);
    }

    #[test]
    fn evaluation_is_repeatable_and_csv_round_trips() {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let agents: Vec<AhtAgent> = (0..3)
            .map(|_| AhtAgent::new(EnvConfig::new(EnvId::RepeatedMatrix), &[8], 4, 5, &mut rng).unwrap())
            .collect();
        let a = evaluate_robustness(&agents, &suite(4)).unwrap();
        assert_eq!(a, evaluate_robustness(&agents, &suite(4)).unwrap());
        assert_eq!(a.sample_unit, "seed");
        assert!(a.scores.iter().all(|s| s.n == 3));
        let t = 4.302652729749464; // t_{0.975, 2}
        let overall: Vec<f64> = {
            let one = |ag: &AhtAgent| evaluate_robustness(std::slice::from_ref(ag), &suite(4)).unwrap().overall_mean;
            agents.iter().map(one).collect()
        };
        let (m, se) = mean_se(&overall);
        assert!((a.overall_mean - m).abs() < 1e-9);
        assert!((a.ci_high - (m + t * se)).abs() < 1e-6);
        let mut buf = Vec::new();
        write_robustness_csv(&a, &mut buf).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("heuristic_id,mean_return,stderr,n\n"));
        assert_eq!(read_robustness_csv(buf.as_slice()).unwrap(), a.scores);
        let pts = vec![CurvePoint::from_report(100, &a)];
        let mut buf = Vec::new();
        write_curve_csv(&pts, &mut buf).unwrap();
        assert_eq!(read_curve_csv(buf.as_slice()).unwrap(), pts);
        let json: RobustnessReport = serde_json::from_str(&a.to_json()).unwrap();
        assert_eq!(json, a);
    }

    #[test]
    fn rejects_empty_inputs() {
        assert!(evaluate_robustness(&[], &suite(1)).is_err());
        assert!(evaluate_responder(Responder::Oracle, 5, &suite(0)).is_err());
    }
}
