use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;

use super::config::{merge, resolve, EvalBlock, ExperimentConfig, Method, TeammateSource};
use super::manifest::{sha256_file, Manifest};
use super::profile::BehaviorProfile;
use super::svg::{heatmap, line_plot, Series};
use super::{
    AnalyzeArgs, CliError, ConfigArgs, EvalArgs, GenerateArgs, McsArgs, PlotArgs, TrainAhtArgs, XpMatrixArgs, OUT_ENV,
};
use crate::aht::{
    evaluate_responder, evaluate_robustness, write_curve_csv, write_robustness_csv, AhtAgent, AhtLogRow, AhtTrainer,
    CurvePoint, EvalSuite, Responder, RobustnessReport, Teammate,
};
use crate::diversity::{
    write_lagrange_csv, write_return_matrix_csv, LagrangeSet, LipoConvention, Objective, ReturnMatrix,
};
use crate::envs::{heuristic_count, EnvConfig};
use crate::marl::{
    matrix_game_expected_returns, measure_return_matrix, read_metrics_csv, write_metrics_csv, MetricsRow, Population,
    Trainer,
};
use crate::mcs::{CoverageReport, PolicyUniverse};
use crate::nn::Checkpoint;

const METRICS_FILE: &str = "metrics.csv";
const AHT_LOG_FILE: &str = "log.csv";
const AGENT_FILE: &str = "agent.ckpt";
const POPULATION_FILE: &str = "population.ckpt";
const CHECKPOINT_DIR: &str = "checkpoints";

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn read_input(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))
}

fn read_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    Ok(Checkpoint::from_bytes(&read_input(path)?)?)
}

fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<(), CliError> {
    write_file(path, ck.to_bytes())
}

fn default_root() -> PathBuf {
    std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

fn with_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(format!("cannot build worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Turns `a.b.c=value` into `{"a":{"b":{"c":value}}}`; the value is parsed as
/// JSON and falls back to a plain string.
fn set_overlay(kv: &str) -> Result<Value, CliError> {
    let (key, raw) = kv.split_once('=').ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
    let mut v = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    for part in key.split('.').rev() {
        if part.is_empty() {
            return Err(CliError::Config(format!("empty key segment in {key:?}")));
        }
        let mut m = serde_json::Map::new();
        m.insert(part.to_string(), v);
        v = Value::Object(m);
    }
    Ok(v)
}

/// A resolved configuration and where its runs go.
struct Plan {
    cfg: ExperimentConfig,
    root: PathBuf,
    /// Set when rerunning from a manifest.
    origin: Option<Manifest>,
}

fn plan(args: &ConfigArgs) -> Result<Plan, CliError> {
    if let Some(path) = &args.from_manifest {
        let m = Manifest::read(path)?;
        let mut cfg = m.config.clone();
        if let Some(t) = args.threads {
            cfg.runtime.n_threads = t;
        }
        let manifest_dir = if path.is_dir() { path.clone() } else { path.parent().map(Path::to_path_buf).unwrap_or_default() };
        let root = args.out.clone().unwrap_or_else(|| manifest_dir.join("rerun"));
        return Ok(Plan { cfg, root, origin: Some(m) });
    }
    let mut doc = match &args.config {
        Some(p) => {
            let text = String::from_utf8(read_input(p)?).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None if args.use_paper_defaults.is_some() => Value::Object(Default::default()),
        None => return Err(CliError::Config("pass --config FILE or --use-paper-defaults ENV".into())),
    };
    for kv in &args.set {
        merge(&mut doc, set_overlay(kv)?);
    }
    let mut cfg = resolve(doc, args.use_paper_defaults)?;
    if let Some(n) = args.seeds {
        if n == 0 {
            return Err(CliError::Config("--seeds must be positive".into()));
        }
        cfg.runtime.seeds = (0..n).collect();
    }
    if let Some(t) = args.threads {
        cfg.runtime.n_threads = t;
    }
    let root = args.out.clone().or_else(|| cfg.runtime.output_dir.clone()).unwrap_or_else(default_root);
    Ok(Plan { cfg, root, origin: None })
}

fn objective(cfg: &ExperimentConfig) -> (Objective, f64) {
    let g = &cfg.generation;
    let k = cfg.k();
    match g.method {
        Method::Lbrdiv => {
            let tau = g.tau.expect("validated");
            (Objective::Lagrangian(LagrangeSet::uniform(k, tau, g.schedule.alpha_init)), tau)
        }
        Method::Brdiv => (Objective::Brdiv { alpha: g.alpha.expect("validated") }, 0.0),
        Method::Lipo => {
            let convention: LipoConvention = g.lipo_convention;
            (Objective::Lipo { alpha: g.alpha.expect("validated"), convention }, 0.0)
        }
    }
}

fn checkpoint_name(step: u64) -> String {
    format!("{CHECKPOINT_DIR}/step-{step:012}.ckpt")
}

fn report_rerun(origin: &Option<Manifest>, dir: &Path, file: &str) -> Result<(), CliError> {
    if let Some(m) = origin {
        let fresh = sha256_file(&dir.join(file))?;
        match m.output(file) {
            Some(o) if o.sha256 == fresh => println!("{file} reproduced bit-for-bit ({fresh})"),
            Some(o) => println!("{file} differs from the manifest: {} vs {fresh}", o.sha256),
            None => println!("manifest records no {file}"),
        }
    }
    Ok(())
}

/// Trains one population per seed. Returns the run directories.
pub fn generate(args: &GenerateArgs) -> Result<Vec<PathBuf>, CliError> {
    let Plan { cfg, root, origin } = plan(&args.cfg)?;
    let env = cfg.env_config();
    let k = cfg.k();
    let mut dirs = Vec::new();
    for &seed in &cfg.runtime.seeds {
        let dir = root.join(format!("generate-{}-{}-seed{seed}", cfg.generation.method.name(), env.id.name()));
        let mut files = Vec::new();
        let (obj, tau) = objective(&cfg);
        let every = cfg.runtime.checkpoint_every;
        let outcome = with_pool(cfg.runtime.n_threads, || {
            let trainer = Trainer::new(env.clone(), cfg.generation.schedule.clone(), k, obj, tau, seed)?;
            let mut next = every;
            let mut written = Vec::new();
            let outcome = trainer.run_with(|t| {
                if every > 0 && t.env_steps >= next {
                    let path = dir.join(checkpoint_name(t.env_steps));
                    write_checkpoint(&path, &t.pop.to_checkpoint())
                        .map_err(|e| crate::marl::MarlError::Io(match e {
                            CliError::Io(s) => s,
                            other => other.to_string(),
                        }))?;
                    written.push(path);
                    next = (t.env_steps / every + 1) * every;
                }
                Ok(())
            })?;
            Ok::<_, CliError>((outcome, written))
        })??;
        let (outcome, written) = outcome;
        files.extend(written);

        let config_path = dir.join("config.json");
        write_file(&config_path, serde_json::to_string_pretty(&cfg).expect("serializable config"))?;
        files.push(config_path);
        let pop_path = dir.join(POPULATION_FILE);
        write_checkpoint(&pop_path, &outcome.population.to_checkpoint())?;
        files.push(pop_path);
        let mut buf = Vec::new();
        write_metrics_csv(k, &outcome.metrics, &mut buf)?;
        let metrics_path = dir.join(METRICS_FILE);
        write_file(&metrics_path, buf)?;
        files.push(metrics_path);
        if let Some(a) = outcome.lagrange() {
            let mut buf = Vec::new();
            write_lagrange_csv(a, &mut buf)?;
            let p = dir.join("lagrange.csv");
            write_file(&p, buf)?;
            files.push(p);
        }
        Manifest::new("generate", &cfg, seed).finish(&dir, &files)?;
        println!(
            "seed {seed}: {} env steps, {} policy updates -> {}",
            outcome.env_steps,
            outcome.policy_updates,
            dir.display()
        );
        report_rerun(&origin, &dir, METRICS_FILE)?;
        dirs.push(dir);
    }
    Ok(dirs)
}

fn read_population(path: &Path) -> Result<Population, CliError> {
    Ok(Population::from_checkpoint(&read_checkpoint(path)?)?)
}

fn matrix_csv(r: &ReturnMatrix) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    write_return_matrix_csv(r, &mut buf)?;
    Ok(buf)
}

fn matrix_rows(r: &ReturnMatrix) -> Vec<Vec<f64>> {
    (0..r.k()).map(|j| r.row(j).to_vec()).collect()
}

fn xp_heatmap(title: &str, r: &ReturnMatrix) -> String {
    let rows: Vec<String> = (0..r.k()).map(|j| format!("AHT {j}")).collect();
    let cols: Vec<String> = (0..r.k()).map(|i| format!("P{i}")).collect();
    heatmap(title, &rows, &cols, &matrix_rows(r))
}

fn checkpoint_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

pub fn xp_matrix(args: &XpMatrixArgs) -> Result<(), CliError> {
    let pop = read_population(&args.checkpoint)?;
    let out = args.out.clone().unwrap_or_else(|| checkpoint_dir(&args.checkpoint));
    let (mean, se) = if args.exact {
        let r = matrix_game_expected_returns(&pop)?;
        let k = r.k();
        (r, ReturnMatrix::zeros(k))
    } else {
        measure_return_matrix(&pop, args.episodes, args.seed, args.greedy)?
    };
    write_file(&out.join("xp_matrix.csv"), matrix_csv(&mean)?)?;
    write_file(&out.join("xp_stderr.csv"), matrix_csv(&se)?)?;
    write_file(&out.join("xp_matrix.svg"), xp_heatmap("Cross-play returns", &mean))?;
    for j in 0..mean.k() {
        let cells: Vec<String> = (0..mean.k()).map(|i| format!("{:8.3} ± {:.3}", mean.get(j, i), se.get(j, i))).collect();
        println!("{}", cells.join("  "));
    }
    Ok(())
}

pub fn mcs(args: &McsArgs) -> Result<(), CliError> {
    let mut env = EnvConfig::new(args.env);
    if let Some(g) = args.grid_dim {
        env.grid_dim = g;
    }
    if let Some(h) = args.horizon {
        env.horizon = h;
    }
    env.validate()?;
    let universe = if args.lbf_distance { PolicyUniverse::lbf(env.clone(), true) } else { PolicyUniverse::for_env(env.clone()) };
    let report = CoverageReport::analyse(&universe)?;
    let out = args.out.clone().unwrap_or_else(|| default_root().join(format!("mcs-{}", env.id.name())));
    let text = report.to_text();
    write_file(&out.join("coverage.txt"), &text)?;
    let mut buf = Vec::new();
    report.write_csv(&mut buf).map_err(CliError::csv)?;
    write_file(&out.join("coverage.csv"), buf)?;
    print!("{text}");
    Ok(())
}

fn teammate_set(cfg: &ExperimentConfig) -> Result<Vec<Teammate>, CliError> {
    let env = cfg.env_config();
    match &cfg.aht.teammates {
        None => Err(CliError::Config(
            "no training teammates: set aht.teammates or pass --population / --heuristics".into(),
        )),
        Some(TeammateSource::Heuristics(ids)) => {
            let max = heuristic_count(env.id);
            if ids.is_empty() {
                return Err(CliError::Config("the heuristic teammate list is empty".into()));
            }
            ids.iter()
                .map(|&id| {
                    if id == 0 || id > max {
                        Err(CliError::Config(format!("heuristic H{id} does not exist (valid: H1-H{max})")))
                    } else {
                        Ok(Teammate::Heuristic(id))
                    }
                })
                .collect()
        }
        Some(TeammateSource::Populations(paths)) => {
            let mut set = Vec::new();
            for p in paths {
                let pop = read_population(p)?;
                if pop.env != env {
                    return Err(CliError::Config(format!("{} was trained on a different environment", p.display())));
                }
                set.extend(pop.team.into_iter().map(Teammate::Policy));
            }
            if set.is_empty() {
                return Err(CliError::Config("the population list is empty".into()));
            }
            Ok(set)
        }
    }
}

fn log_csv(rows: &[AhtLogRow]) -> Result<Vec<u8>, CliError> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    for r in rows {
        wtr.serialize(r).map_err(CliError::csv)?;
    }
    wtr.into_inner().map_err(CliError::csv)
}

pub fn read_aht_log(bytes: &[u8]) -> Result<Vec<AhtLogRow>, CliError> {
    csv::Reader::from_reader(bytes).deserialize().collect::<Result<_, _>>().map_err(CliError::csv)
}

fn agent_checkpoint(agent: &AhtAgent, step: u64) -> Checkpoint {
    let mut ck = agent.to_checkpoint();
    ck.set_meta("step", step.to_string());
    ck
}

/// Trains one adaptive agent per seed. Returns the run directories.
pub fn train_aht(args: &TrainAhtArgs) -> Result<Vec<PathBuf>, CliError> {
    let Plan { mut cfg, root, origin } = plan(&args.cfg)?;
    if origin.is_none() {
        if !args.populations.is_empty() {
            let paths = args
                .populations
                .iter()
                .map(|p| fs::canonicalize(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display()))))
                .collect::<Result<Vec<_>, _>>()?;
            cfg.aht.teammates = Some(TeammateSource::Populations(paths));
        } else if !args.heuristics.is_empty() {
            cfg.aht.teammates = Some(TeammateSource::Heuristics(args.heuristics.clone()));
        }
    }
    let teammates = teammate_set(&cfg)?;
    let env = cfg.env_config();
    let mut dirs = Vec::new();
    for &seed in &cfg.runtime.seeds {
        let dir = root.join(format!("train-aht-{}-seed{seed}", env.id.name()));
        let every = cfg.runtime.checkpoint_every;
        let (agent, steps, log, written) = with_pool(cfg.runtime.n_threads, || {
            let mut trainer = AhtTrainer::new(&teammates, env.clone(), cfg.aht.schedule.clone(), seed)?;
            let mut next = every;
            let mut written = Vec::new();
            let mut io_err = None;
            trainer.run_with(|t| {
                if every > 0 && t.env_steps >= next && io_err.is_none() {
                    let path = dir.join(checkpoint_name(t.env_steps));
                    match write_checkpoint(&path, &agent_checkpoint(&t.agent, t.env_steps)) {
                        Ok(()) => written.push(path),
                        Err(e) => io_err = Some(e),
                    }
                    next = (t.env_steps / every + 1) * every;
                }
                Ok(())
            })?;
            if let Some(e) = io_err {
                return Err(e);
            }
            Ok::<_, CliError>((trainer.agent, trainer.env_steps, trainer.log, written))
        })??;
        let mut files = written;
        let config_path = dir.join("config.json");
        write_file(&config_path, serde_json::to_string_pretty(&cfg).expect("serializable config"))?;
        files.push(config_path);
        let agent_path = dir.join(AGENT_FILE);
        write_checkpoint(&agent_path, &agent_checkpoint(&agent, steps))?;
        files.push(agent_path);
        let log_path = dir.join(AHT_LOG_FILE);
        write_file(&log_path, log_csv(&log)?)?;
        files.push(log_path);
        Manifest::new("train-aht", &cfg, seed).finish(&dir, &files)?;
        println!("seed {seed}: {steps} env steps, {} updates -> {}", log.len(), dir.display());
        report_rerun(&origin, &dir, AHT_LOG_FILE)?;
        dirs.push(dir);
    }
    Ok(dirs)
}

fn load_agent(path: &Path) -> Result<(AhtAgent, Option<u64>), CliError> {
    let ck = read_checkpoint(path)?;
    let step = ck.meta("step").ok().and_then(|s| s.parse().ok());
    Ok((AhtAgent::from_checkpoint(&ck)?, step))
}

/// Checkpoints of a `train-aht` run directory keyed by step.
fn run_checkpoints(dir: &Path) -> Result<BTreeMap<u64, PathBuf>, CliError> {
    let mut out = BTreeMap::new();
    let final_path = dir.join(AGENT_FILE);
    if !final_path.exists() {
        return Err(CliError::Config(format!("{} has no {AGENT_FILE}", dir.display())));
    }
    if let Some(step) = load_agent(&final_path)?.1 {
        out.insert(step, final_path);
    }
    if let Ok(entries) = fs::read_dir(dir.join(CHECKPOINT_DIR)) {
        for e in entries.flatten() {
            let name = e.file_name().to_string_lossy().to_string();
            if let Some(step) = name.strip_prefix("step-").and_then(|s| s.strip_suffix(".ckpt")).and_then(|s| s.parse().ok()) {
                out.entry(step).or_insert_with(|| e.path());
            }
        }
    }
    Ok(out)
}

fn write_report(dir: &Path, stem: &str, report: &RobustnessReport) -> Result<(), CliError> {
    let mut buf = Vec::new();
    write_robustness_csv(report, &mut buf)?;
    write_file(&dir.join(format!("{stem}.csv")), buf)?;
    write_file(&dir.join(format!("{stem}.json")), report.to_json())
}

fn print_report(name: &str, r: &RobustnessReport) {
    println!(
        "{name}: mean episodic return {:.4} (95% CI {:.4} to {:.4} across {}s)",
        r.overall_mean, r.ci_low, r.ci_high, r.sample_unit
    );
    for s in &r.scores {
        println!("  H{}: {:.4} ± {:.4}", s.heuristic_id, s.mean_return, s.stderr);
    }
}

/// The `eval` block of a configuration file, over the built-in defaults.
fn eval_block(path: Option<&Path>) -> Result<EvalBlock, CliError> {
    let mut base = serde_json::json!({"meta_episodes_per_teammate": 50});
    if let Some(p) = path {
        let doc: Value = serde_json::from_slice(&read_input(p)?).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
        if let Some(e) = doc.get("eval") {
            merge(&mut base, e.clone());
        }
    }
    serde_json::from_value(base).map_err(|e| CliError::Config(format!("eval block: {e}")))
}

pub fn eval(args: &EvalArgs) -> Result<(), CliError> {
    if args.run_dirs.is_empty() && args.agents.is_empty() && !args.oracle {
        return Err(CliError::Config("nothing to evaluate: pass --run-dir, --agent or --oracle".into()));
    }
    if !args.run_dirs.is_empty() && !args.agents.is_empty() {
        return Err(CliError::Config("use either --run-dir or --agent, not both".into()));
    }
    // Curve points keyed by step; each holds one checkpoint per seed.
    let mut points: BTreeMap<u64, Vec<PathBuf>> = BTreeMap::new();
    if !args.run_dirs.is_empty() {
        let per_dir = args.run_dirs.iter().map(|d| run_checkpoints(d)).collect::<Result<Vec<_>, _>>()?;
        for step in per_dir[0].keys() {
            if per_dir.iter().all(|m| m.contains_key(step)) {
                points.insert(*step, per_dir.iter().map(|m| m[step].clone()).collect());
            }
        }
        if points.is_empty() {
            return Err(CliError::Config("the run directories share no checkpoint step".into()));
        }
    }
    let mut final_agents = Vec::new();
    let mut final_step = None;
    if let Some((&step, paths)) = points.iter().next_back() {
        final_step = Some(step);
        for p in paths {
            final_agents.push(load_agent(p)?.0);
        }
    } else {
        let mut steps = Vec::new();
        for p in &args.agents {
            let (a, s) = load_agent(p)?;
            final_agents.push(a);
            steps.push(s);
        }
        if steps.first().is_some_and(|s| s.is_some() && steps.iter().all(|x| x == s)) {
            final_step = steps[0];
        }
    }

    let env = match (final_agents.first(), args.env) {
        (Some(a), _) => a.env.clone(),
        (None, Some(id)) => {
            let mut e = EnvConfig::new(id);
            if let Some(g) = args.grid_dim {
                e.grid_dim = g;
            }
            e
        }
        (None, None) => return Err(CliError::Config("--env is required when only the oracle is evaluated".into())),
    };
    let block = eval_block(args.config.as_deref())?;
    let mut suite = EvalSuite::full(
        env.clone(),
        args.meta_episodes.unwrap_or(block.meta_episodes_per_teammate),
        args.seed.unwrap_or(block.seed),
    );
    if !args.heuristics.is_empty() {
        suite.heuristics = args.heuristics.clone();
    } else if let Some(h) = block.heuristics {
        suite.heuristics = h;
    }
    suite.greedy = args.greedy || block.greedy;
    if suite.meta_episodes_per_teammate == 0 || suite.heuristics.is_empty() {
        return Err(CliError::Config("the evaluation suite is empty".into()));
    }
    let max = heuristic_count(env.id);
    if let Some(bad) = suite.heuristics.iter().find(|&&h| h == 0 || h > max) {
        return Err(CliError::Config(format!("heuristic H{bad} does not exist (valid: H1-H{max})")));
    }
    let out = args.out.clone().unwrap_or_else(|| default_root().join(format!("eval-{}", env.id.name())));
    let threads = args.threads.unwrap_or(0);

    with_pool(threads, || -> Result<(), CliError> {
        if !points.is_empty() {
            let mut curve = Vec::with_capacity(points.len());
            for (&step, paths) in &points {
                let agents = paths.iter().map(|p| load_agent(p).map(|x| x.0)).collect::<Result<Vec<_>, _>>()?;
                let r = evaluate_robustness(&agents, &suite)?;
                curve.push(CurvePoint::from_report(step, &r));
            }
            let mut buf = Vec::new();
            write_curve_csv(&curve, &mut buf)?;
            write_file(&out.join("curve.csv"), buf)?;
            write_file(&out.join("curve.svg"), curve_svg(&curve))?;
        }
        if !final_agents.is_empty() {
            let mut r = evaluate_robustness(&final_agents, &suite)?;
            r.checkpoint_step = final_step;
            write_report(&out, "robustness", &r)?;
            print_report("agent", &r);
        }
        if args.oracle {
            let r = evaluate_responder(Responder::Oracle, args.oracle_meta_length, &suite)?;
            write_report(&out, "oracle_robustness", &r)?;
            print_report("oracle", &r);
        }
        Ok(())
    })??;
    Ok(())
}

fn curve_svg(curve: &[CurvePoint]) -> String {
    let pts = |f: fn(&CurvePoint) -> f64| curve.iter().map(|c| (c.step as f64, f(c))).collect::<Vec<_>>();
    line_plot(
        "Robustness",
        "environment steps",
        "mean episodic return",
        &[
            Series::new("mean", pts(|c| c.mean_return)),
            Series::new("95% CI low", pts(|c| c.ci_low)).dashed(),
            Series::new("95% CI high", pts(|c| c.ci_high)).dashed(),
        ],
    )
}

fn metrics_svgs(k: usize, rows: &[MetricsRow]) -> (String, String) {
    let step = |r: &MetricsRow| r.step as f64;
    let returns = line_plot(
        "Estimated returns",
        "environment steps",
        "episodic return",
        &[
            Series::new("self-play (worst pair)", rows.iter().map(|r| (step(r), r.sp_return)).collect()),
            Series::new("cross-play mean", rows.iter().map(|r| (step(r), r.xp_return_mean)).collect()),
            Series::new("min slack", rows.iter().map(|r| (step(r), r.slack_min)).collect()).dashed(),
        ],
    );
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|i| (0..k).filter(move |&j| j != i).map(move |j| (i, j))).collect();
    let mut series = Vec::new();
    for (n, (i, j)) in pairs.iter().enumerate() {
        series.push(Series::new(format!("a1[{i},{j}]"), rows.iter().map(|r| (step(r), r.alpha1[n])).collect()));
        series.push(Series::new(format!("a2[{i},{j}]"), rows.iter().map(|r| (step(r), r.alpha2[n])).collect()).dashed());
    }
    let multipliers = line_plot("Lagrange multipliers", "environment steps", "multiplier", &series);
    (returns, multipliers)
}

fn profile_outputs(out: &Path, p: &BehaviorProfile) -> Result<(), CliError> {
    let mut buf = Vec::new();
    p.write_csv(&mut buf)?;
    write_file(&out.join("behavior.csv"), buf)?;
    write_file(&out.join("behavior.json"), serde_json::to_string_pretty(p).expect("serializable profile"))?;
    let title = format!("Behavior profile ({})", p.subject);
    write_file(&out.join("behavior.svg"), heatmap(&title, &p.row_labels(), &p.columns, &p.matrix()))?;
    println!("{:>6} {}", "", p.columns.join(" "));
    for r in &p.rows {
        let cells: Vec<String> = r.freqs.iter().map(|f| format!("{f:.3}")).collect();
        println!("{:>6} {}", r.label, cells.join(" "));
    }
    Ok(())
}

pub fn analyze(args: &AnalyzeArgs) -> Result<(), CliError> {
    let ck = read_checkpoint(&args.checkpoint)?;
    let dir = checkpoint_dir(&args.checkpoint);
    let out = args.out.clone().unwrap_or_else(|| dir.join("analysis"));
    match ck.meta("kind")? {
        "population" => {
            let pop = Population::from_checkpoint(&ck)?;
            let profile = BehaviorProfile::of_population(&pop, args.episodes, args.greedy, args.seed)?;
            profile_outputs(&out, &profile)?;
            let xp = match matrix_game_expected_returns(&pop) {
                Ok(r) => r,
                Err(_) => measure_return_matrix(&pop, args.xp_episodes, args.seed, args.greedy)?.0,
            };
            write_file(&out.join("xp_matrix.csv"), matrix_csv(&xp)?)?;
            write_file(&out.join("xp_matrix.svg"), xp_heatmap("Cross-play returns", &xp))?;
            let metrics = dir.join(METRICS_FILE);
            if metrics.exists() {
                let (k, rows) = read_metrics_csv(read_input(&metrics)?.as_slice())?;
                let (returns, multipliers) = metrics_svgs(k, &rows);
                write_file(&out.join("returns.svg"), returns)?;
                write_file(&out.join("multipliers.svg"), multipliers)?;
            }
        }
        "aht_agent" => {
            let agent = AhtAgent::from_checkpoint(&ck)?;
            let profile = BehaviorProfile::of_agent(&agent, args.episodes, args.greedy, args.seed)?;
            profile_outputs(&out, &profile)?;
        }
        other => return Err(CliError::Config(format!("unknown checkpoint kind {other:?}"))),
    }
    Ok(())
}

/// Reads any CSV whose first column labels rows and whose other columns are numbers.
fn read_labelled_matrix(bytes: &[u8]) -> Result<(Vec<String>, Vec<String>, Vec<Vec<f64>>), CliError> {
    let mut rdr = csv::Reader::from_reader(bytes);
    let cols: Vec<String> = rdr.headers().map_err(CliError::csv)?.iter().skip(1).map(String::from).collect();
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(CliError::csv)?;
        labels.push(rec.get(0).unwrap_or("").to_string());
        values.push(rec.iter().skip(1).map(|s| s.parse::<f64>().map_err(CliError::csv)).collect::<Result<Vec<_>, _>>()?);
    }
    Ok((labels, cols, values))
}

pub fn plot(args: &PlotArgs) -> Result<(), CliError> {
    let mut wrote = 0;
    if let Some(p) = &args.metrics {
        let (k, rows) = read_metrics_csv(read_input(p)?.as_slice())?;
        let (returns, multipliers) = metrics_svgs(k, &rows);
        write_file(&args.out.join("returns.svg"), returns)?;
        write_file(&args.out.join("multipliers.svg"), multipliers)?;
        wrote += 2;
    }
    for p in &args.matrix {
        let (rows, cols, values) = read_labelled_matrix(&read_input(p)?)?;
        let stem = p.file_stem().map(|s| s.to_string_lossy().to_string()).unwrap_or_else(|| "matrix".into());
        write_file(&args.out.join(format!("{stem}.svg")), heatmap(&stem, &rows, &cols, &values))?;
        wrote += 1;
    }
    if let Some(p) = &args.curve {
        let curve = crate::aht::read_curve_csv(read_input(p)?.as_slice())?;
        write_file(&args.out.join("curve.svg"), curve_svg(&curve))?;
        wrote += 1;
    }
    if let Some(p) = &args.aht_log {
        let log = read_aht_log(&read_input(p)?)?;
        let svg = line_plot(
            "Adaptive agent training",
            "environment steps",
            "episodic return",
            &[Series::new("episode return", log.iter().map(|r| (r.step as f64, r.episode_return)).collect())],
        );
        write_file(&args.out.join("aht_log.svg"), svg)?;
        wrote += 1;
    }
    if wrote == 0 {
        return Err(CliError::Config("nothing to plot: pass --metrics, --matrix, --curve or --aht-log".into()));
    }
    println!("wrote {wrote} plot(s) to {}", args.out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_overlay_builds_nested_objects() {
        let v = set_overlay("a.b=3").unwrap();
        assert_eq!(v, serde_json::json!({"a": {"b": 3}}));
        let s = set_overlay("env.id=coop_reach").unwrap();
        assert_eq!(s, serde_json::json!({"env": {"id": "coop_reach"}}));
        assert!(set_overlay("novalue").is_err());
        assert!(set_overlay("a..b=1").is_err());
    }

    #[test]
    fn labelled_matrix_reader_accepts_return_matrix_csv() {
        let r = ReturnMatrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let (rows, cols, vals) = read_labelled_matrix(&matrix_csv(&r).unwrap()).unwrap();
        assert_eq!(rows, vec!["0", "1"]);
        assert_eq!(cols, vec!["c0", "c1"]);
        assert_eq!(vals, vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
    }
}
