use rand::SeedableRng;
use rayon::prelude::*;

use super::rollout::{argmax, choose_action};
use super::{MarlError, Population};
use crate::diversity::ReturnMatrix;
use crate::envs::{EnvId, EnvInstance, MATRIX_PAYOFF};

/// Monte-Carlo estimate of every `R[j][i]` with its standard error.
/// Cell `(j, i)` uses its own seeded environment and action stream.
pub fn measure_return_matrix(
    pop: &Population,
    episodes: usize,
    seed: u64,
    greedy: bool,
) -> Result<(ReturnMatrix, ReturnMatrix), MarlError> {
    if episodes == 0 {
        return Err(MarlError::Config("episodes must be positive".into()));
    }
    let k = pop.k;
    let cells: Vec<(usize, usize)> = (0..k).flat_map(|j| (0..k).map(move |i| (j, i))).collect();
    let stats = cells
        .par_iter()
        .map(|&(j, i)| {
            let cell_seed = seed.wrapping_add((j * k + i) as u64 * 1_000_003);
            let mut env = EnvInstance::new(pop.env.clone(), cell_seed)?;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cell_seed ^ 0xC0FFEE);
            let mut returns = Vec::with_capacity(episodes);
            for _ in 0..episodes {
                let mut obs = env.reset_episode();
                let mut total = 0.0;
                while !env.is_done() {
                    let (a, _) = choose_action(&pop.aht[j], &obs.obs_a, greedy, &mut rng)?;
                    let (b, _) = choose_action(&pop.team[i], &obs.obs_b, greedy, &mut rng)?;
                    let out = env.step(a, b)?;
                    total += out.reward;
                    obs = out.obs;
                }
                returns.push(total);
            }
            let n = returns.len() as f64;
            let mean = returns.iter().sum::<f64>() / n;
            let var = if returns.len() > 1 {
                returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            Ok((mean, (var / n).sqrt()))
        })
        .collect::<Result<Vec<_>, MarlError>>()?;
    let mut mean = ReturnMatrix::zeros(k);
    let mut se = ReturnMatrix::zeros(k);
    for (&(j, i), (m, s)) in cells.iter().zip(stats) {
        mean.set(j, i, m);
        se.set(j, i, s);
    }
    Ok((mean, se))
}

/// Exact expected episodic returns in the repeated matrix game, where a
/// policy's only input is the normalized timestep.
pub fn matrix_game_expected_returns(pop: &Population) -> Result<ReturnMatrix, MarlError> {
    if pop.env.id != EnvId::RepeatedMatrix {
        return Err(MarlError::Config("exact returns are only available for the matrix game".into()));
    }
    let h = pop.env.horizon;
    let probs = |nets: &[crate::nn::Mlp]| -> Result<Vec<Vec<Vec<f64>>>, MarlError> {
        nets.iter()
            .map(|n| (0..h).map(|t| n.predict(&[t as f64 / h as f64]).map_err(MarlError::from)).collect())
            .collect()
    };
    let (pa, pb) = (probs(&pop.aht)?, probs(&pop.team)?);
    let mut r = ReturnMatrix::zeros(pop.k);
    for j in 0..pop.k {
        for i in 0..pop.k {
            let mut total = 0.0;
            for t in 0..h {
                for (x, px) in pa[j][t].iter().enumerate() {
                    for (y, py) in pb[i][t].iter().enumerate() {
                        total += px * py * MATRIX_PAYOFF[x][y];
                    }
                }
            }
            r.set(j, i, total);
        }
    }
    Ok(r)
}

/// Mean action distribution of a matrix-game policy over the episode.
pub fn matrix_action_profile(net: &crate::nn::Mlp, horizon: usize) -> Result<Vec<f64>, MarlError> {
    let mut acc = vec![0.0; net.output_dim()];
    for t in 0..horizon {
        for (a, p) in acc.iter_mut().zip(net.predict(&[t as f64 / horizon as f64])?) {
            *a += p / horizon as f64;
        }
    }
    Ok(acc)
}

/// Most likely action of each teammate policy in the matrix game.
pub fn teammate_argmax_actions(pop: &Population) -> Result<Vec<usize>, MarlError> {
    pop.team.iter().map(|n| matrix_action_profile(n, pop.env.horizon).map(|p| argmax(&p))).collect()
}
