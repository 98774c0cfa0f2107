use std::ffi::{CStr, CString};
use std::ptr;

use mcsforge::aht::AhtAgent;
use mcsforge::envs::{EnvConfig, EnvId};
use mcsforge::marl::{constant_policy, Population};
use mcsforge_ffi::*;
use rand::SeedableRng;

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    unsafe {
        let need = mcsf_last_error(ptr::null_mut(), 0);
        let mut buf = vec![0 as std::ffi::c_char; need];
        mcsf_last_error(buf.as_mut_ptr(), need);
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

fn brdiv_by_pairs(r: &[f64], k: usize, alpha: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..k {
        total += r[i * k + i];
        for j in 0..k {
            if j != i {
                total += alpha * ((r[i * k + i] - r[i * k + j]) + (r[i * k + i] - r[j * k + i]));
            }
        }
    }
    total
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(mcsf_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn objectives_match_pairwise_sums() {
    let r = [10.0, 0.0, 4.0, 1.0, 6.0, 4.0, 4.0, 2.0, 6.0];
    for alpha in [0.0, 0.3, 1.0, 10.0] {
        let mut got = f64::NAN;
        assert_eq!(unsafe { mcsf_brdiv_objective(r.as_ptr(), 3, alpha, &mut got) }, McsfStatus::Ok);
        assert!((got - brdiv_by_pairs(&r, 3, alpha)).abs() < 1e-9);

        let off: f64 = r.iter().sum::<f64>() - (r[0] + r[4] + r[8]);
        assert_eq!(unsafe { mcsf_lipo_objective(r.as_ptr(), 3, alpha, &mut got) }, McsfStatus::Ok);
        assert!((got - (22.0 - alpha * off)).abs() < 1e-9);
    }
}

#[test]
fn null_arguments_are_rejected() {
    let mut x = 0.0;
    assert_eq!(unsafe { mcsf_brdiv_objective(ptr::null(), 2, 1.0, &mut x) }, McsfStatus::InvalidArgument);
    assert!(last_error().contains("values"));
    let mut pop = ptr::null_mut();
    assert_eq!(unsafe { mcsf_population_load(ptr::null(), &mut pop) }, McsfStatus::InvalidArgument);
    assert_eq!(unsafe { mcsf_population_k(ptr::null()) }, 0);
    unsafe { mcsf_population_free(ptr::null_mut()) };
    unsafe { mcsf_agent_free(ptr::null_mut()) };
}

#[test]
fn missing_checkpoint_is_a_config_error() {
    let mut pop = ptr::null_mut();
    let path = cstr("/nonexistent/population.ckpt");
    let st = unsafe { mcsf_population_load(path.as_ptr(), &mut pop) };
    assert_eq!(st, McsfStatus::Config);
    assert!(pop.is_null());
    assert!(!last_error().is_empty());
}

#[test]
fn error_message_truncates_and_reports_size() {
    let mut x = 0.0;
    unsafe { mcsf_lipo_objective(ptr::null(), 2, 1.0, &mut x) };
    let full = last_error();
    let mut buf = [1 as std::ffi::c_char; 4];
    let need = unsafe { mcsf_last_error(buf.as_mut_ptr(), buf.len()) };
    assert_eq!(need, full.len() + 1);
    assert_eq!(buf[3], 0);
    let short = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap();
    assert_eq!(short, &full[..3]);
    // success clears the message
    let r = [1.0];
    unsafe { mcsf_lipo_objective(r.as_ptr(), 1, 1.0, &mut x) };
    assert_eq!(last_error(), "");
}

#[test]
fn constant_population_round_trip_and_cross_play() {
    let env = EnvConfig::new(EnvId::RepeatedMatrix);
    let nets: Vec<_> = [0, 1, 2].iter().map(|&a| constant_policy(&env, &[8], a, 40.0).unwrap()).collect();
    let pop = Population::from_policies(env.clone(), nets.clone(), nets, &[8]).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("pop.ckpt");
    pop.to_checkpoint().write(&path).unwrap();

    let mut h = ptr::null_mut();
    let p = cstr(path.to_str().unwrap());
    assert_eq!(unsafe { mcsf_population_load(p.as_ptr(), &mut h) }, McsfStatus::Ok);
    assert_eq!(unsafe { mcsf_population_k(h) }, 3);

    let mut mean = [0.0; 9];
    let mut se = [0.0; 9];
    let st = unsafe { mcsf_population_cross_play(h, 4, 0, mean.as_mut_ptr(), se.as_mut_ptr(), 9) };
    assert_eq!(st, McsfStatus::Ok, "{}", last_error());
    let payoff = [10.0, 0.0, 4.0, 0.0, 6.0, 4.0, 4.0, 4.0, 6.0];
    for (m, p) in mean.iter().zip(payoff) {
        assert!((m - 5.0 * p).abs() < 1e-6, "{mean:?}");
    }

    let mut small = [0.0; 4];
    let st = unsafe { mcsf_population_cross_play(h, 1, 0, small.as_mut_ptr(), ptr::null_mut(), 4) };
    assert_eq!(st, McsfStatus::InvalidArgument);

    let obs = vec![0.0; env.obs_dim()];
    let mut probs = [0.0; 3];
    let st = unsafe { mcsf_population_teammate_probs(h, 1, obs.as_ptr(), obs.len(), probs.as_mut_ptr(), 3) };
    assert_eq!(st, McsfStatus::Ok, "{}", last_error());
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert!(probs[1] > 0.99);
    let st = unsafe { mcsf_population_teammate_probs(h, 3, obs.as_ptr(), obs.len(), probs.as_mut_ptr(), 3) };
    assert_eq!(st, McsfStatus::InvalidArgument);

    let saved = tmp.path().join("again.ckpt");
    let s = cstr(saved.to_str().unwrap());
    assert_eq!(unsafe { mcsf_population_save(h, s.as_ptr()) }, McsfStatus::Ok);
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&saved).unwrap());
    unsafe { mcsf_population_free(h) };
}

#[test]
fn generate_from_json_config() {
    let cfg = cstr(r#"{"env": {"id": "repeated_matrix"}, "generation": {"method": "lbrdiv", "schedule": {"total_steps": 2000}}}"#);
    let env = cstr("repeated_matrix");
    let mut h = ptr::null_mut();
    let st = unsafe { mcsf_population_generate(cfg.as_ptr(), env.as_ptr(), 0, &mut h) };
    assert_eq!(st, McsfStatus::Ok, "{}", last_error());
    assert_eq!(unsafe { mcsf_population_k(h) }, 3);
    unsafe { mcsf_population_free(h) };

    // without published defaults the tolerance is missing
    let st = unsafe { mcsf_population_generate(cfg.as_ptr(), ptr::null(), 0, &mut h) };
    assert_eq!(st, McsfStatus::Config);

    let bad = cstr("{not json");
    assert_eq!(unsafe { mcsf_population_generate(bad.as_ptr(), env.as_ptr(), 0, &mut h) }, McsfStatus::Config);
}

#[test]
fn matrix_game_needs_every_action() {
    let env = cstr("repeated_matrix");
    let mut n = 0usize;
    let mut masks = [0u64; 4];
    let st = unsafe { mcsf_minimal_coverage_sets(env.as_ptr(), masks.as_mut_ptr(), 4, &mut n) };
    assert_eq!(st, McsfStatus::Ok, "{}", last_error());
    assert_eq!(n, 1);
    assert_eq!(masks[0], 0b111);

    let unknown = cstr("chess");
    let st = unsafe { mcsf_minimal_coverage_sets(unknown.as_ptr(), ptr::null_mut(), 0, &mut n) };
    assert_eq!(st, McsfStatus::InvalidArgument);
}

#[test]
fn agent_load_and_evaluate() {
    let env = EnvConfig::new(EnvId::RepeatedMatrix);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let agent = AhtAgent::new(env, &[16], 8, 5, &mut rng).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("agent.ckpt");
    agent.to_checkpoint().write(&path).unwrap();

    let mut h = ptr::null_mut();
    let p = cstr(path.to_str().unwrap());
    assert_eq!(unsafe { mcsf_agent_load(p.as_ptr(), &mut h) }, McsfStatus::Ok, "{}", last_error());
    let mut score = f64::NAN;
    let st = unsafe { mcsf_agent_robustness(h, 2, 0, &mut score) };
    assert_eq!(st, McsfStatus::Ok, "{}", last_error());
    // episodic return lies between the worst and best payoffs times the horizon
    assert!((0.0..=50.0).contains(&score), "{score}");
    unsafe { mcsf_agent_free(h) };
}
