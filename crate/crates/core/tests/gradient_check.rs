mod common;

use common::max_gradient_error;
use mcsforge::envs::{EnvConfig, EnvId};
use mcsforge::nn::{table_widths, Activation, GruCell, Head, Mlp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const COORDS: usize = 120;

fn random_vec(n: usize, scale: f64, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

fn check_mlp(dims: &[usize], activation: Activation, head: Head, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = Mlp::random(dims, activation, head, 1.0, &mut rng).unwrap();
    let x = random_vec(dims[0], 1.0, &mut rng);
    let c = random_vec(*dims.last().unwrap(), 1.0, &mut rng);
    let (_, tape) = net.forward(&x).unwrap();
    let analytic = net.backward(&tape, &c).unwrap();
    let mut loss = |p: &[f64]| {
        let n = Mlp::from_params(dims, activation, head, p.to_vec()).unwrap();
        n.predict(&x).unwrap().iter().zip(&c).map(|(a, b)| a * b).sum::<f64>()
    };
    let (err, n) = max_gradient_error(&mut loss, net.params(), &analytic, COORDS, &mut rng);
    assert!(n >= 100.min(net.num_params()));
    err
}

fn arch(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut d = vec![input];
    d.extend_from_slice(hidden);
    d.push(output);
    d
}

#[test]
fn every_policy_and_critic_architecture_matches_finite_differences() {
    for (s, id) in EnvId::ALL.into_iter().enumerate() {
        let cfg = EnvConfig::new(id);
        let widths = table_widths(id);
        let k = 4;
        let policy = arch(cfg.obs_dim(), &widths, cfg.num_actions());
        let critic = arch(2 * cfg.obs_dim() + 2 * k, &widths, 1);
        let e1 = check_mlp(&policy, Activation::Tanh, Head::Softmax, 10 + s as u64);
        let e2 = check_mlp(&critic, Activation::Tanh, Head::Linear, 20 + s as u64);
        assert!(e1 < 1e-4, "{} policy: {e1:e}", id.name());
        assert!(e2 < 1e-4, "{} critic: {e2:e}", id.name());
    }
}

#[test]
fn relu_and_activated_heads_match_finite_differences() {
    let e = check_mlp(&[6, 16, 8], Activation::Relu, Head::Linear, 3);
    assert!(e < 1e-4, "{e:e}");
    let e = check_mlp(&[6, 16, 8], Activation::Tanh, Head::Activated, 4);
    assert!(e < 1e-4, "{e:e}");
}

/// Loss Σ_t c_t · h_t over a sequence, differentiated by backpropagation through time.
fn sequence_loss(cell: &GruCell, xs: &[Vec<f64>], cs: &[Vec<f64>]) -> f64 {
    let mut h = cell.initial_hidden();
    let mut loss = 0.0;
    for (x, c) in xs.iter().zip(cs) {
        h = cell.step(x, &h).unwrap().0;
        loss += h.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
    }
    loss
}

#[test]
fn recurrent_cell_bptt_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (input, hidden, len) = (5, 16, 5);
    let cell = GruCell::random(input, hidden, &mut rng).unwrap();
    let xs: Vec<Vec<f64>> = (0..len).map(|_| random_vec(input, 1.0, &mut rng)).collect();
    let cs: Vec<Vec<f64>> = (0..len).map(|_| random_vec(hidden, 1.0, &mut rng)).collect();

    let mut h = cell.initial_hidden();
    let mut tapes = Vec::new();
    for x in &xs {
        let (h2, tape) = cell.step(x, &h).unwrap();
        tapes.push(tape);
        h = h2;
    }
    let mut grads = vec![0.0; cell.num_params()];
    let mut dh = vec![0.0; hidden];
    for t in (0..len).rev() {
        let upstream: Vec<f64> = dh.iter().zip(&cs[t]).map(|(a, b)| a + b).collect();
        dh = cell.backward_into(&tapes[t], &upstream, &mut grads).unwrap().1;
    }
    let mut loss = |p: &[f64]| {
        let c = GruCell::from_params(input, hidden, p.to_vec()).unwrap();
        sequence_loss(&c, &xs, &cs)
    };
    let (err, n) = max_gradient_error(&mut loss, cell.params(), &grads, COORDS, &mut rng);
    assert!(n >= 100);
    assert!(err < 1e-3, "{err:e}");
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let net = Mlp::random(&[3, 8, 2], Activation::Tanh, Head::Linear, 1.0, &mut rng).unwrap();
    let (_, tape) = net.forward(&[0.1, 0.2, 0.3]).unwrap();
    assert!(net.backward(&tape, &[0.0, 0.0]).unwrap().iter().all(|g| *g == 0.0));
}
