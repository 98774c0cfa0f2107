//! End-to-end acceptance checks, one line per criterion.
//!
//! Runs without the libtest harness so that every verdict is printed even
//! when the others pass. Exit status is non-zero if any criterion fails.

mod common;

use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use common::max_gradient_error;
use mcsforge::aht::*;
use mcsforge::diversity::*;
use mcsforge::envs::{EnvConfig, EnvId};
use mcsforge::marl::*;
use mcsforge::mcs::{exact_return_matrix, minimal_coverage_sets, PolicyUniverse};
use mcsforge::nn::{table_widths, Activation, GruCell, Head, Mlp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;

fn check(cond: bool, what: String) -> Verdict {
    if cond {
        Ok(what)
    } else {
        Err(what)
    }
}

fn matrix() -> EnvConfig {
    EnvConfig::new(EnvId::RepeatedMatrix)
}

fn rows<const N: usize>(r: [[f64; N]; N]) -> ReturnMatrix {
    ReturnMatrix::from_rows(&r).unwrap()
}

fn identity_policies() -> ReturnMatrix {
    rows([[10.0, 0.0, 4.0], [0.0, 6.0, 4.0], [4.0, 4.0, 6.0]])
}

fn matrix_alt() -> ReturnMatrix {
    rows([[10.0, 0.0, 0.0], [0.0, 6.0, 6.0], [0.0, 6.0, 6.0]])
}

fn weighted_payoff() -> ReturnMatrix {
    rows([[10.0, 0.0, 6.0, 6.0], [0.0, 10.0, 6.0, 6.0], [6.0, 6.0, 8.0, 0.0], [6.0, 6.0, 0.0, 8.0]])
}

fn weighted_alt() -> ReturnMatrix {
    rows([[10.0, 10.0, 0.0, 0.0], [10.0, 10.0, 0.0, 0.0], [0.0, 0.0, 10.0, 10.0], [0.0, 0.0, 10.0, 10.0]])
}

fn criterion_1() -> Verdict {
    // (matrix, brdiv constant, brdiv slope, lipo constant, lipo slope)
    let table = [
        ("matrix identity", identity_policies(), 22, 56, 22, -16),
        ("matrix alternative", matrix_alt(), 22, 64, 22, -12),
        ("weighted identity", weighted_payoff(), 36, 120, 36, -48),
        ("weighted alternative", weighted_alt(), 40, 160, 40, -40),
    ];
    let mut bad = Vec::new();
    for (name, r, bc, bs, lc, ls) in &table {
        // alpha as an exact fraction p/q; the objective times q is an integer
        for (p, q) in [(1i64, 10i64), (1, 2), (1, 1), (5, 1)] {
            let alpha = p as f64 / q as f64;
            let want_b = (bc * q + bs * p) as f64 / q as f64;
            let want_l = (lc * q + ls * p) as f64 / q as f64;
            let (got_b, got_l) = (brdiv_objective(r, alpha), lipo_objective(r, alpha));
            if got_b != want_b || got_l != want_l {
                bad.push(format!("{name} at alpha {alpha}: brdiv {got_b} (want {want_b}), lipo {got_l} (want {want_l})"));
            }
        }
    }
    check(bad.is_empty(), if bad.is_empty() { "16 objective values exact".into() } else { bad.join("; ") })
}

fn criterion_2() -> Verdict {
    let m = PolicyUniverse::for_env(matrix());
    let sets_m = minimal_coverage_sets(&exact_return_matrix(&m).map_err(|e| e.to_string())?, m.tolerance()).map_err(|e| e.to_string())?;
    let w = PolicyUniverse::for_env(EnvConfig::new(EnvId::WeightedCoopReach));
    let sets_w = minimal_coverage_sets(&exact_return_matrix(&w).map_err(|e| e.to_string())?, w.tolerance()).map_err(|e| e.to_string())?;
    check(
        sets_m == vec![vec![0, 1, 2]] && sets_w == vec![vec![0, 1, 2, 3]],
        format!("matrix {sets_m:?}, weighted reaching {sets_w:?}"),
    )
}

fn random_vec(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn mlp_error(dims: &[usize], head: Head, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = Mlp::random(dims, Activation::Tanh, head, 1.0, &mut rng).unwrap();
    let x = random_vec(dims[0], &mut rng);
    let c = random_vec(*dims.last().unwrap(), &mut rng);
    let (_, tape) = net.forward(&x).unwrap();
    let analytic = net.backward(&tape, &c).unwrap();
    let mut loss = |p: &[f64]| {
        let n = Mlp::from_params(dims, Activation::Tanh, head, p.to_vec()).unwrap();
        n.predict(&x).unwrap().iter().zip(&c).map(|(a, b)| a * b).sum::<f64>()
    };
    max_gradient_error(&mut loss, net.params(), &analytic, 100, &mut rng).0
}

fn gru_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (input, hidden, len) = (8, 16, 6);
    let cell = GruCell::random(input, hidden, &mut rng).unwrap();
    let xs: Vec<Vec<f64>> = (0..len).map(|_| random_vec(input, &mut rng)).collect();
    let cs: Vec<Vec<f64>> = (0..len).map(|_| random_vec(hidden, &mut rng)).collect();
    let mut h = cell.initial_hidden();
    let mut tapes = Vec::new();
    for x in &xs {
        let (next, tape) = cell.step(x, &h).unwrap();
        tapes.push(tape);
        h = next;
    }
    let mut grads = vec![0.0; cell.num_params()];
    let mut dh = vec![0.0; hidden];
    for t in (0..len).rev() {
        let upstream: Vec<f64> = dh.iter().zip(&cs[t]).map(|(a, b)| a + b).collect();
        dh = cell.backward_into(&tapes[t], &upstream, &mut grads).unwrap().1;
    }
    let mut loss = |p: &[f64]| {
        let c = GruCell::from_params(input, hidden, p.to_vec()).unwrap();
        let mut h = c.initial_hidden();
        let mut total = 0.0;
        for (x, w) in xs.iter().zip(&cs) {
            h = c.step(x, &h).unwrap().0;
            total += h.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
        }
        total
    };
    max_gradient_error(&mut loss, cell.params(), &grads, 100, &mut rng).0
}

fn criterion_3() -> Verdict {
    let mut worst_mlp = 0.0f64;
    for (s, id) in EnvId::ALL.into_iter().enumerate() {
        let cfg = EnvConfig::new(id);
        let mut policy = vec![cfg.obs_dim()];
        policy.extend(table_widths(id));
        let mut critic = policy.clone();
        critic[0] = 2 * cfg.obs_dim() + 2 * 6;
        policy.push(cfg.num_actions());
        critic.push(1);
        worst_mlp = worst_mlp.max(mlp_error(&policy, Head::Softmax, 100 + s as u64));
        worst_mlp = worst_mlp.max(mlp_error(&critic, Head::Linear, 200 + s as u64));
    }
    let bptt = gru_error(300);
    check(worst_mlp < 1e-4 && bptt < 1e-3, format!("worst MLP relative error {worst_mlp:.2e}, BPTT {bptt:.2e}"))
}

fn matrix_schedule(steps: u64) -> TrainSchedule {
    TrainSchedule { total_steps: steps, ..TrainSchedule::paper_defaults(EnvId::RepeatedMatrix) }
}

fn criterion_4() -> Verdict {
    // A seed passes when its teammates cover all three actions, its
    // multipliers have decayed and its measured constraints hold.
    let tau = 1.0;
    let mut passed = 0;
    let mut per_seed = Vec::new();
    for seed in 0..4 {
        let out = train_lbrdiv(matrix(), matrix_schedule(200_000), 3, tau, seed).map_err(|e| e.to_string())?;
        let actions = teammate_argmax_actions(&out.population).map_err(|e| e.to_string())?;
        let all_three = actions.iter().collect::<BTreeSet<_>>().len() == 3;
        let max_alpha = out.lagrange().unwrap().max_multiplier();
        let r = matrix_game_expected_returns(&out.population).map_err(|e| e.to_string())?;
        let slack = r.min_slack(tau);
        passed += usize::from(all_three && max_alpha < 0.05 && slack >= -0.1);
        per_seed.push(format!("seed {seed} {actions:?} max multiplier {max_alpha:.4} min slack {slack:.3}"));
    }
    check(passed >= 3, format!("{passed}/4 seeds pass: {}", per_seed.join("; ")))
}

fn criterion_5() -> Verdict {
    let identity = identity_policies().scaled(matrix().horizon as f64);
    let mut notes = Vec::new();
    let mut ok = true;
    let runs = [
        ("BRDiv", Objective::Brdiv { alpha: 1.0 }, Baseline::Brdiv, 1.0),
        (
            "LIPO",
            Objective::Lipo { alpha: 0.5, convention: LipoConvention::OrderedPairs },
            Baseline::Lipo(LipoConvention::OrderedPairs),
            0.5,
        ),
    ];
    for (name, objective, baseline, alpha) in runs {
        let mut collapsed = 0;
        let mut dominance = Vec::new();
        for seed in 0..4 {
            let out = train_baseline(matrix(), matrix_schedule(200_000), 3, alpha, baseline, seed).map_err(|e| e.to_string())?;
            let actions = teammate_argmax_actions(&out.population).map_err(|e| e.to_string())?;
            let distinct = actions.iter().collect::<BTreeSet<_>>().len();
            if distinct <= 2 {
                collapsed += 1;
            }
            if distinct == 2 {
                let r = matrix_game_expected_returns(&out.population).map_err(|e| e.to_string())?;
                let (got, base) = (objective.value(&r).unwrap(), objective.value(&identity).unwrap());
                dominance.push(got > base);
            }
        }
        let dominated = dominance.iter().filter(|d| **d).count();
        ok &= collapsed >= 3 && dominated == dominance.len();
        notes.push(format!(
            "{name}: {collapsed}/4 seeds with <= 2 actions, {dominated}/{} two-action populations outscore the identity set",
            dominance.len()
        ));
    }
    let grid_ok = [0.01, 0.1, 0.5, 1.0, 5.0, 100.0].iter().all(|&a| {
        brdiv_objective(&matrix_alt(), a) > brdiv_objective(&identity_policies(), a)
            && lipo_objective(&matrix_alt(), a) > lipo_objective(&identity_policies(), a)
    });
    notes.push(format!("analytic dominance {}", if grid_ok { "holds" } else { "violated" }));
    check(ok && grid_ok, notes.join("; "))
}

fn criterion_6() -> Verdict {
    let env = matrix();
    let settings = UpdateSettings { w_ent: 0.0, epochs: 1, minibatches: 1, ..UpdateSettings::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let pop = Population::new(env.clone(), 3, &[16, 16], &mut rng).map_err(|e| e.to_string())?;
    let batch = collect(&pop, (0, 2), 64, 6, false).map_err(|e| e.to_string())?;
    let opt = Optimizers::new(&pop, 1e-3, 1e-3).map_err(|e| e.to_string())?;
    let update = |obj: &Objective| {
        let mut p = pop.clone();
        let mut o = opt.clone();
        policy_update(&mut p, &mut o, std::slice::from_ref(&batch), obj, &settings, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        p
    };
    let zero = update(&Objective::Lagrangian(LagrangeSet::new(3, 1.0)));
    let unchanged = zero
        .aht
        .iter()
        .chain(&zero.team)
        .zip(pop.aht.iter().chain(&pop.team))
        .all(|(a, b)| a.params().iter().zip(b.params()).all(|(x, y)| x.to_bits() == y.to_bits()));

    let mut neg = LagrangeSet::new(3, 1.0);
    neg.set_alpha1(0, 2, 0.5);
    let negative = update(&Objective::Lagrangian(neg));
    let positive = update(&Objective::Lipo { alpha: -0.5, convention: LipoConvention::Once });
    let delta = |p: &Population| -> Vec<f64> {
        p.aht[2].params().iter().zip(pop.aht[2].params()).map(|(a, b)| a - b).collect()
    };
    let (dn, dp) = (delta(&negative), delta(&positive));
    let moved = dn.iter().any(|d| *d != 0.0);
    let flipped = dn.iter().zip(&dp).all(|(a, b)| *a == 0.0 || a.signum() == -b.signum());
    check(
        unchanged && moved && flipped,
        format!("zero-weight update bitwise unchanged: {unchanged}; sign flips with pair weight: {}", moved && flipped),
    )
}

fn desk_aht(env: EnvId, steps: u64) -> AhtSchedule {
    let mut s = AhtSchedule::paper_defaults(env);
    s.total_steps = steps;
    s.lr_policy = 1e-3;
    s.lr_critic = 1e-3;
    if env == EnvId::RepeatedMatrix {
        s.w_ent = 3e-2;
    } else {
        s.hidden = vec![64, 64];
    }
    s
}

/// Worst standardized drop in mean return between consecutive episodes of a meta-episode.
fn identification_gain(agent: &AhtAgent, team: &[Teammate], n: u64) -> Result<f64, String> {
    let m = agent.meta_episodes;
    let mut diffs = vec![Vec::new(); m - 1];
    for k in 0..n {
        let tm = &team[(k % team.len() as u64) as usize];
        let tr = meta_rollout(Responder::Agent(agent), tm, &agent.env, m, false, 50_000 + k).map_err(|e| e.to_string())?;
        for (e, d) in diffs.iter_mut().enumerate() {
            d.push(tr.episode_returns[e + 1] - tr.episode_returns[e]);
        }
    }
    let mut worst = f64::INFINITY;
    for d in &diffs {
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (d.len() - 1) as f64;
        let se = (var / d.len() as f64).sqrt();
        worst = worst.min(if se > 0.0 { mean / se } else if mean >= 0.0 { 0.0 } else { f64::NEG_INFINITY });
    }
    Ok(worst)
}

fn criterion_7() -> Verdict {
    let env = matrix();
    let team: Vec<Teammate> = (1..=3).map(Teammate::Heuristic).collect();
    let mut agents = Vec::new();
    for seed in 0..4 {
        agents.push(train_aht(&team, env.clone(), desk_aht(EnvId::RepeatedMatrix, 1_000_000), seed).map_err(|e| e.to_string())?);
    }
    let suite = EvalSuite::full(env.clone(), 200, 9);
    let report = evaluate_robustness(&agents, &suite).map_err(|e| e.to_string())?;
    let overall = report.per_step(report.overall_mean);
    let h1 = report.per_step(report.score(1).unwrap().mean_return);
    let oracle = evaluate_responder(Responder::Oracle, agents[0].meta_episodes, &suite).map_err(|e| e.to_string())?;
    let matrix_ceiling = report.ci_low <= oracle.ci_high;
    let mut matrix_gain = f64::INFINITY;
    for a in &agents {
        matrix_gain = matrix_gain.min(identification_gain(a, &team, 600)?);
    }

    let reach = EnvConfig::new(EnvId::CoopReach).with_grid_dim(5);
    let corners: Vec<Teammate> = (8..=11).map(Teammate::Heuristic).collect();
    let agent = train_aht(&corners, reach.clone(), desk_aht(EnvId::CoopReach, 1_000_000), 0).map_err(|e| e.to_string())?;
    let reach_suite = EvalSuite::full(reach, 40, 9);
    let r = evaluate_robustness(std::slice::from_ref(&agent), &reach_suite).map_err(|e| e.to_string())?;
    let o = evaluate_responder(Responder::Oracle, agent.meta_episodes, &reach_suite).map_err(|e| e.to_string())?;
    let reach_ceiling = r.ci_low <= o.ci_high;
    let reach_gain = identification_gain(&agent, &corners, 600)?;

    check(
        overall >= 6.0 && h1 >= 9.0 && matrix_ceiling && reach_ceiling && matrix_gain >= -3.0 && reach_gain >= -3.0,
        format!(
            "matrix per-step overall {overall:.3}, vs H1 {h1:.3}, oracle {:.3}; worst gain z {matrix_gain:.2}; \
             reaching 5x5 {:.3} vs oracle {:.3}, worst gain z {reach_gain:.2}",
            report.per_step(oracle.overall_mean),
            r.overall_mean,
            o.overall_mean
        ),
    )
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_mcsforge")).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("mcsforge {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn same_file(a: &Path, b: &Path) -> Result<bool, String> {
    let read = |p: &Path| std::fs::read(p).map_err(|e| format!("{}: {e}", p.display()));
    Ok(read(a)? == read(b)?)
}

fn criterion_8() -> Verdict {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path().to_str().unwrap();
    let common = ["--use-paper-defaults", "repeated_matrix", "--threads", "1", "--out", root];
    let mut gen = vec!["generate", "--seeds", "1", "--set", "generation.schedule.total_steps=20000"];
    gen.extend(common);
    run_cli(&gen)?;
    let run = tmp.path().join("generate-lbrdiv-repeated_matrix-seed0");
    run_cli(&["generate", "--from-manifest", run.to_str().unwrap(), "--threads", "1"])?;
    let metrics = same_file(&run.join("metrics.csv"), &run.join("rerun/generate-lbrdiv-repeated_matrix-seed0/metrics.csv"))?;

    let pop = run.join("population.ckpt");
    let mut aht = vec!["train-aht", "--seeds", "1", "--population", pop.to_str().unwrap(), "--set", "aht.schedule.total_steps=5000"];
    aht.extend(common);
    run_cli(&aht)?;
    let arun = tmp.path().join("train-aht-repeated_matrix-seed0");
    run_cli(&["train-aht", "--from-manifest", arun.to_str().unwrap(), "--threads", "1"])?;
    let log = same_file(&arun.join("log.csv"), &arun.join("rerun/train-aht-repeated_matrix-seed0/log.csv"))?;
    check(metrics && log, format!("generate metrics.csv identical: {metrics}; train-aht log.csv identical: {log}"))
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 8] = [
        ("analytic objective tables", criterion_1),
        ("minimum coverage set ground truth", criterion_2),
        ("gradient correctness", criterion_3),
        ("L-BRDiv matrix-game discovery", criterion_4),
        ("baseline failure reproduction", criterion_5),
        ("weighted-advantage semantics", criterion_6),
        ("adaptive agent desk pipeline", criterion_7),
        ("manifest rerun determinism", criterion_8),
    ];
    let filter: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, (name, f)) in criteria.iter().enumerate() {
        let id = n + 1;
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let t0 = Instant::now();
        let verdict = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t0.elapsed().as_secs_f64();
        match verdict {
            Ok(detail) => println!("criterion {id} PASS ({name}, {secs:.1}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id} FAIL ({name}, {secs:.1}s): {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
