//! C interface to mcsforge.
//!
//! Objects are opaque handles created by `*_load` / `*_generate` functions and
//! released with the matching `*_free`. Every fallible call returns a
//! [`McsfStatus`]; the message of the most recent failure on the calling
//! thread is available from [`mcsf_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use mcsforge::aht::{evaluate_robustness, AhtAgent, EvalSuite};
use mcsforge::cli::{resolve, CliError, Method};
use mcsforge::diversity::{brdiv_objective, lipo_objective, ReturnMatrix};
use mcsforge::envs::{EnvConfig, EnvId};
use mcsforge::marl::{measure_return_matrix, train_baseline, train_lbrdiv, Baseline, Population};
use mcsforge::mcs::{exact_return_matrix, minimal_coverage_sets, PolicyUniverse};
use mcsforge::nn::Checkpoint;

/// Result of every fallible call. The numeric values of `Config`,
/// `Divergence` and `Io` match the command-line exit codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum McsfStatus {
    Ok = 0,
    /// Null pointer, bad UTF-8, undersized buffer or out-of-range index.
    InvalidArgument = 1,
    Config = 2,
    Divergence = 3,
    Io = 4,
    /// An internal panic was caught at the boundary.
    Panic = 5,
}

/// A trained or loaded teammate population.
pub struct McsfPopulation(Population);

/// A trained or loaded adaptive agent.
pub struct McsfAgent(AhtAgent);

struct Failure(McsfStatus, String);

impl From<CliError> for Failure {
    fn from(e: CliError) -> Self {
        let status = match e.exit_code() {
            3 => McsfStatus::Divergence,
            4 => McsfStatus::Io,
            _ => McsfStatus::Config,
        };
        Failure(status, e.to_string())
    }
}

macro_rules! impl_via_cli {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                CliError::from(e).into()
            }
        }
    )*};
}

impl_via_cli!(
    mcsforge::nn::NnError,
    mcsforge::marl::MarlError,
    mcsforge::aht::AhtError,
    mcsforge::mcs::McsError,
    mcsforge::diversity::DiversityError,
    mcsforge::envs::EnvError
);

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(McsfStatus::InvalidArgument, msg.into())
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> McsfStatus {
    let (status, msg) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => (McsfStatus::Ok, String::new()),
        Ok(Err(Failure(s, m))) => (s, m),
        Err(p) => {
            let m = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            (McsfStatus::Panic, format!("panic: {m}"))
        }
    };
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
    status
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(invalid(format!("{name} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{name} is not valid UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, name: &str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(invalid(format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a, T>(p: *mut T, len: usize, need: usize, name: &str) -> Result<&'a mut [T], Failure> {
    if p.is_null() {
        return Err(invalid(format!("{name} is null")));
    }
    if len < need {
        return Err(invalid(format!("{name} holds {len} values, {need} needed")));
    }
    Ok(std::slice::from_raw_parts_mut(p, need))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| invalid(format!("{name} is null")))
}

fn parse_env(name: &str) -> Result<EnvId, Failure> {
    EnvId::parse(name).ok_or_else(|| invalid(format!("unknown environment {name:?}")))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mcsf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the buffer size needed for the full message.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn mcsf_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        bytes.len() + 1
    })
}

/// Trains a population from a JSON experiment configuration. When
/// `paper_defaults_env` is non-null, population size, tolerance and baseline
/// weight default to the published values for that environment.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mcsf_population_generate(
    config_json: *const c_char,
    paper_defaults_env: *const c_char,
    seed: u64,
    out: *mut *mut McsfPopulation,
) -> McsfStatus {
    guard(|| {
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        let text = str_arg(config_json, "config_json")?;
        let doc = serde_json::from_str(text).map_err(|e| Failure(McsfStatus::Config, format!("config: {e}")))?;
        let paper = if paper_defaults_env.is_null() { None } else { Some(parse_env(str_arg(paper_defaults_env, "env")?)?) };
        let cfg = resolve(doc, paper)?;
        let g = &cfg.generation;
        let env = cfg.env_config();
        let outcome = match g.method {
            Method::Lbrdiv => train_lbrdiv(env, g.schedule.clone(), cfg.k(), g.tau.expect("validated"), seed)?,
            Method::Brdiv => train_baseline(env, g.schedule.clone(), cfg.k(), g.alpha.expect("validated"), Baseline::Brdiv, seed)?,
            Method::Lipo => train_baseline(
                env,
                g.schedule.clone(),
                cfg.k(),
                g.alpha.expect("validated"),
                Baseline::Lipo(g.lipo_convention),
                seed,
            )?,
        };
        *out = Box::into_raw(Box::new(McsfPopulation(outcome.population)));
        Ok(())
    })
}

/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mcsf_population_load(path: *const c_char, out: *mut *mut McsfPopulation) -> McsfStatus {
    guard(|| {
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        let path = PathBuf::from(str_arg(path, "path")?);
        let ck = Checkpoint::read(&path)?;
        *out = Box::into_raw(Box::new(McsfPopulation(Population::from_checkpoint(&ck)?)));
        Ok(())
    })
}

/// # Safety
/// `pop` must be a live handle; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn mcsf_population_save(pop: *const McsfPopulation, path: *const c_char) -> McsfStatus {
    guard(|| {
        let pop = handle(pop, "pop")?;
        let path = PathBuf::from(str_arg(path, "path")?);
        pop.0.to_checkpoint().write(&path).map_err(|e| Failure(McsfStatus::Io, format!("{}: {e}", path.display())))
    })
}

/// # Safety
/// `pop` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mcsf_population_free(pop: *mut McsfPopulation) {
    if !pop.is_null() {
        drop(Box::from_raw(pop));
    }
}

/// Population size, or 0 for a null handle.
///
/// # Safety
/// `pop` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mcsf_population_k(pop: *const McsfPopulation) -> usize {
    pop.as_ref().map_or(0, |p| p.0.k)
}

/// Monte-Carlo cross-play returns, row-major `K x K` with row = AHT-side
/// policy and column = teammate. Either output may be null.
///
/// # Safety
/// `pop` must be a live handle; non-null outputs must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mcsf_population_cross_play(
    pop: *const McsfPopulation,
    episodes: usize,
    seed: u64,
    mean_out: *mut f64,
    stderr_out: *mut f64,
    len: usize,
) -> McsfStatus {
    guard(|| {
        let pop = handle(pop, "pop")?;
        let need = pop.0.k * pop.0.k;
        let (mean, se) = measure_return_matrix(&pop.0, episodes, seed, false)?;
        for (p, m, name) in [(mean_out, &mean, "mean_out"), (stderr_out, &se, "stderr_out")] {
            if !p.is_null() {
                out_slice(p, len, need, name)?.copy_from_slice(m.values());
            }
        }
        Ok(())
    })
}

/// Action distribution of teammate policy `index` for one observation.
///
/// # Safety
/// `pop` must be a live handle; `obs` must hold `obs_len` doubles and `out`
/// `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mcsf_population_teammate_probs(
    pop: *const McsfPopulation,
    index: usize,
    obs: *const f64,
    obs_len: usize,
    out: *mut f64,
    out_len: usize,
) -> McsfStatus {
    guard(|| {
        let pop = handle(pop, "pop")?;
        let net = pop.0.team.get(index).ok_or_else(|| invalid(format!("teammate {index} out of range")))?;
        let x = slice_arg(obs, obs_len, "obs")?;
        if obs_len != pop.0.env.obs_dim() {
            return Err(invalid(format!("observation has {obs_len} values, {} expected", pop.0.env.obs_dim())));
        }
        let p = net.predict(x)?;
        out_slice(out, out_len, p.len(), "out")?.copy_from_slice(&p);
        Ok(())
    })
}

fn objective(values: *const f64, k: usize, out: *mut f64, f: fn(&ReturnMatrix, f64) -> f64, alpha: f64) -> McsfStatus {
    guard(|| {
        // SAFETY: caller guarantees `values` holds k*k doubles.
        let v = unsafe { slice_arg(values, k * k, "values")? };
        let rows: Vec<&[f64]> = v.chunks(k.max(1)).collect();
        let r = ReturnMatrix::from_rows(&rows)?;
        let out = unsafe { out.as_mut() }.ok_or_else(|| invalid("out is null"))?;
        *out = f(&r, alpha);
        Ok(())
    })
}

/// BRDiv objective of a row-major `k x k` return matrix.
///
/// # Safety
/// `values` must hold `k * k` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mcsf_brdiv_objective(values: *const f64, k: usize, alpha: f64, out: *mut f64) -> McsfStatus {
    objective(values, k, out, brdiv_objective, alpha)
}

/// LIPO objective of a row-major `k x k` return matrix.
///
/// # Safety
/// `values` must hold `k * k` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mcsf_lipo_objective(values: *const f64, k: usize, alpha: f64, out: *mut f64) -> McsfStatus {
    objective(values, k, out, lipo_objective, alpha)
}

/// Minimum coverage sets of an environment's default scripted universe, each
/// written as a bitmask over universe members. `count_out` receives the
/// number of sets even when `masks_out` is too small.
///
/// # Safety
/// `env` must be NUL-terminated; `masks_out` must be null or hold `cap`
/// values; `count_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mcsf_minimal_coverage_sets(
    env: *const c_char,
    masks_out: *mut u64,
    cap: usize,
    count_out: *mut usize,
) -> McsfStatus {
    guard(|| {
        let count_out = count_out.as_mut().ok_or_else(|| invalid("count_out is null"))?;
        let universe = PolicyUniverse::for_env(EnvConfig::new(parse_env(str_arg(env, "env")?)?));
        let r = exact_return_matrix(&universe)?;
        let sets = minimal_coverage_sets(&r, universe.tolerance())?;
        *count_out = sets.len();
        if !masks_out.is_null() {
            let out = out_slice(masks_out, cap, sets.len(), "masks_out")?;
            for (slot, set) in out.iter_mut().zip(&sets) {
                *slot = set.iter().fold(0u64, |m, &i| m | (1 << i));
            }
        }
        Ok(())
    })
}

/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mcsf_agent_load(path: *const c_char, out: *mut *mut McsfAgent) -> McsfStatus {
    guard(|| {
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        let path = PathBuf::from(str_arg(path, "path")?);
        let ck = Checkpoint::read(&path)?;
        *out = Box::into_raw(Box::new(McsfAgent(AhtAgent::from_checkpoint(&ck)?)));
        Ok(())
    })
}

/// # Safety
/// `agent` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mcsf_agent_free(agent: *mut McsfAgent) {
    if !agent.is_null() {
        drop(Box::from_raw(agent));
    }
}

/// Mean episodic return against every evaluation heuristic of the agent's
/// environment, `meta_episodes` meta-episodes each.
///
/// # Safety
/// `agent` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mcsf_agent_robustness(
    agent: *const McsfAgent,
    meta_episodes: usize,
    seed: u64,
    out: *mut f64,
) -> McsfStatus {
    guard(|| {
        let agent = handle(agent, "agent")?;
        let out = out.as_mut().ok_or_else(|| invalid("out is null"))?;
        let suite = EvalSuite::full(agent.0.env.clone(), meta_episodes, seed);
        *out = evaluate_robustness(std::slice::from_ref(&agent.0), &suite)?.overall_mean;
        Ok(())
    })
}
