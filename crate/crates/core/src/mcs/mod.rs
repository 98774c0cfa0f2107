//! Exact coverage-set analysis over small, enumerable policy universes.
//!
//! A universe is a list of deterministic scripted policies. Every policy plays
//! both seats, which gives a square [`ReturnMatrix`] with rows indexing the
//! responding policy and columns the teammate.

use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use thiserror::Error;

use crate::diversity::ReturnMatrix;
use crate::envs::{Corner, EnvConfig, EnvError, EnvId, EnvInstance, Heuristic, Pos, ReachState};

/// Ties closer than this count as equal for analytic returns.
pub const EXACT_TOLERANCE: f64 = 1e-9;
/// Ties closer than this count as equal for simulated returns.
pub const SIMULATED_TOLERANCE: f64 = 1e-3;
/// Largest universe accepted by the exhaustive subset scan.
pub const MAX_UNIVERSE: usize = 20;
/// Number of sampled start states when a start grid cannot be enumerated.
pub const SAMPLED_STARTS: usize = 256;

#[derive(Debug, Error, PartialEq)]
pub enum McsError {
    #[error("universe of {0} policies exceeds the exhaustive-scan capacity of {MAX_UNIVERSE}")]
    Capacity(usize),
    #[error("policy index {index} out of range for a universe of {size}")]
    Index { index: usize, size: usize },
    #[error("matrix is {got}x{got}, universe has {want} policies")]
    Shape { got: usize, want: usize },
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// A finite set of deterministic scripted policies for one environment,
/// identified by their heuristic numbers.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyUniverse {
    pub env: EnvConfig,
    pub heuristic_ids: Vec<usize>,
    pub labels: Vec<String>,
}

impl PolicyUniverse {
    /// The default universe: constant actions for the matrix game, the four
    /// corner seekers for reaching, the six collection orders for foraging.
    pub fn for_env(env: EnvConfig) -> Self {
        match env.id {
            EnvId::RepeatedMatrix => Self::custom(env, vec![1, 2, 3], ["a1", "a2", "a3"]),
            EnvId::CoopReach | EnvId::WeightedCoopReach => {
                let labels = Corner::ALL.map(|c| c.label().to_string());
                Self::custom(env, vec![8, 9, 10, 11], labels)
            }
            EnvId::Lbf => Self::lbf(env, false),
        }
    }

    /// Foraging universe: the six orderings, optionally preceded by the
    /// nearest-first and farthest-first policies.
    pub fn lbf(env: EnvConfig, with_distance_policies: bool) -> Self {
        let mut ids = Vec::new();
        let mut labels = Vec::new();
        if with_distance_policies {
            ids.extend([1, 2]);
            labels.extend(["nearest".to_string(), "farthest".to_string()]);
        }
        for (k, order) in crate::envs::heuristics::ITEM_ORDERS.iter().enumerate() {
            ids.push(k + 3);
            labels.push(order.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(""));
        }
        PolicyUniverse { env, heuristic_ids: ids, labels }
    }

    pub fn custom<S: ToString>(env: EnvConfig, ids: Vec<usize>, labels: impl IntoIterator<Item = S>) -> Self {
        PolicyUniverse { env, heuristic_ids: ids, labels: labels.into_iter().map(|s| s.to_string()).collect() }
    }

    pub fn len(&self) -> usize {
        self.heuristic_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heuristic_ids.is_empty()
    }

    /// Tie tolerance appropriate for this universe's returns.
    pub fn tolerance(&self) -> f64 {
        if self.env.id == EnvId::RepeatedMatrix {
            EXACT_TOLERANCE
        } else {
            SIMULATED_TOLERANCE
        }
    }
}

/// Start states used to average returns: every pair of non-corner cells for
/// reaching, a fixed seeded sample for foraging, the single state otherwise.
#[derive(Clone, Debug)]
enum Start {
    Fixed,
    Reach(ReachState),
    Seed(u64),
}

fn start_states(cfg: &EnvConfig) -> Vec<Start> {
    match cfg.id {
        EnvId::RepeatedMatrix => vec![Start::Fixed],
        EnvId::CoopReach | EnvId::WeightedCoopReach => {
            let n = cfg.grid_dim;
            let cells: Vec<Pos> = (0..n)
                .flat_map(|y| (0..n).map(move |x| Pos::new(x, y)))
                .filter(|p| Corner::at(*p, n).is_none())
                .collect();
            let mut out = Vec::with_capacity(cells.len() * cells.len());
            for &a in &cells {
                for &b in &cells {
                    out.push(Start::Reach(ReachState { pos: [a, b] }));
                }
            }
            out
        }
        EnvId::Lbf => (0..SAMPLED_STARTS as u64).map(Start::Seed).collect(),
    }
}

/// Undiscounted return of one episode between two scripted policies.
pub fn play_episode(env: &mut EnvInstance, a: &mut Heuristic, b: &mut Heuristic) -> Result<f64, EnvError> {
    let mut obs = env.observe();
    let mut total = 0.0;
    while !env.is_done() {
        let (x, y) = (a.act(&obs.obs_a), b.act(&obs.obs_b));
        let out = env.step(x, y)?;
        total += out.reward;
        obs = out.obs;
    }
    Ok(total)
}

fn cell_return(cfg: &EnvConfig, row: usize, col: usize, starts: &[Start]) -> Result<f64, EnvError> {
    let mut env = EnvInstance::new(cfg.clone(), 0)?;
    let mut a = Heuristic::new(cfg.clone(), row, 0).map_err(|e| EnvError::Config(e.to_string()))?;
    let mut b = Heuristic::new(cfg.clone(), col, 1).map_err(|e| EnvError::Config(e.to_string()))?;
    let mut sum = 0.0;
    for s in starts {
        match s {
            Start::Fixed => {
                env.reset(0);
            }
            Start::Reach(state) => {
                env.set_reach_state(state.clone());
            }
            Start::Seed(seed) => {
                env.reset(*seed);
            }
        }
        sum += play_episode(&mut env, &mut a, &mut b)?;
    }
    Ok(sum / starts.len() as f64)
}

/// Expected undiscounted episodic return for every (responder, teammate) pair.
pub fn exact_return_matrix(universe: &PolicyUniverse) -> Result<ReturnMatrix, McsError> {
    universe.env.validate()?;
    let starts = start_states(&universe.env);
    let n = universe.len();
    let cells: Vec<(usize, usize)> = (0..n).flat_map(|r| (0..n).map(move |c| (r, c))).collect();
    let values = cells
        .par_iter()
        .map(|&(r, c)| cell_return(&universe.env, universe.heuristic_ids[r], universe.heuristic_ids[c], &starts))
        .collect::<Result<Vec<_>, _>>()?;
    let mut m = ReturnMatrix::zeros(n);
    for (&(r, c), v) in cells.iter().zip(values) {
        m.set(r, c, v);
    }
    Ok(m)
}

fn column_max(r: &ReturnMatrix, c: usize) -> f64 {
    (0..r.k()).map(|x| r.get(x, c)).fold(f64::NEG_INFINITY, f64::max)
}

/// True iff every teammate column attains its maximum on some candidate row.
pub fn is_coverage_set(candidate: &[usize], r: &ReturnMatrix, tol: f64) -> Result<bool, McsError> {
    if let Some(&index) = candidate.iter().find(|&&i| i >= r.k()) {
        return Err(McsError::Index { index, size: r.k() });
    }
    if r.k() == 0 {
        return Ok(true);
    }
    Ok((0..r.k()).all(|c| {
        let best = column_max(r, c);
        candidate.iter().any(|&row| r.get(row, c) >= best - tol)
    }))
}

fn members(mask: u32, n: usize) -> Vec<usize> {
    (0..n).filter(|i| mask & (1 << i) != 0).collect()
}

/// Every coverage set that stops being one when any single member is removed,
/// sorted by size and then lexicographically.
pub fn minimal_coverage_sets(r: &ReturnMatrix, tol: f64) -> Result<Vec<Vec<usize>>, McsError> {
    let n = r.k();
    if n > MAX_UNIVERSE {
        return Err(McsError::Capacity(n));
    }
    // covers[row] = bitmask of columns on which `row` attains the column maximum.
    let covers: Vec<u32> = (0..n)
        .map(|row| (0..n).filter(|&c| r.get(row, c) >= column_max(r, c) - tol).fold(0, |m, c| m | (1 << c)))
        .collect();
    let all: u32 = if n == 0 { 0 } else { (1u32 << n) - 1 };
    let covered = |mask: u32| (0..n).filter(|i| mask & (1 << i) != 0).fold(0u32, |m, i| m | covers[i]) == all;
    let mut out = Vec::new();
    for mask in 1u32..=all {
        if !covered(mask) {
            continue;
        }
        let minimal = (0..n).filter(|i| mask & (1 << i) != 0).all(|i| !covered(mask & !(1 << i)));
        if minimal {
            out.push(members(mask, n));
        }
    }
    out.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    Ok(out)
}

/// Whether `row` is a best response to at least one teammate column; returns
/// the first such column as a witness.
pub fn feasibility_check(row: usize, r: &ReturnMatrix, tol: f64) -> Result<(bool, Option<usize>), McsError> {
    if row >= r.k() {
        return Err(McsError::Index { index: row, size: r.k() });
    }
    let witness = (0..r.k()).find(|&c| (0..r.k()).all(|x| r.get(row, c) >= r.get(x, c) - tol));
    Ok((witness.is_some(), witness))
}

#[derive(Clone, Debug, PartialEq)]
pub struct BestResponse {
    pub teammate: usize,
    pub rows: Vec<usize>,
    pub value: f64,
}

/// Result of analysing one universe.
#[derive(Clone, Debug, PartialEq)]
pub struct CoverageReport {
    pub env: EnvId,
    pub labels: Vec<String>,
    pub matrix: ReturnMatrix,
    pub tolerance: f64,
    /// Evaluated candidate sets with their coverage verdict.
    pub candidates: Vec<(Vec<usize>, bool)>,
    pub minimal_sets: Vec<Vec<usize>>,
    pub best_responses: Vec<BestResponse>,
    pub feasible: Vec<bool>,
}

/// Subsets listed in the report when the universe is at most this large.
const LIST_ALL_SUBSETS: usize = 10;

impl CoverageReport {
    pub fn analyse(universe: &PolicyUniverse) -> Result<Self, McsError> {
        let matrix = exact_return_matrix(universe)?;
        Self::from_matrix(universe, matrix)
    }

    pub fn from_matrix(universe: &PolicyUniverse, matrix: ReturnMatrix) -> Result<Self, McsError> {
        let n = universe.len();
        if matrix.k() != n {
            return Err(McsError::Shape { got: matrix.k(), want: n });
        }
        let tol = universe.tolerance();
        let minimal_sets = minimal_coverage_sets(&matrix, tol)?;
        let mut candidates = Vec::new();
        if n <= LIST_ALL_SUBSETS {
            for mask in 1u32..(1 << n) {
                let set = members(mask, n);
                let ok = is_coverage_set(&set, &matrix, tol)?;
                candidates.push((set, ok));
            }
            candidates.sort_by(|a, b| a.0.len().cmp(&b.0.len()).then_with(|| a.0.cmp(&b.0)));
        } else {
            for set in &minimal_sets {
                candidates.push((set.clone(), true));
            }
            candidates.push(((0..n).collect(), true));
        }
        let best_responses = (0..n)
            .map(|c| {
                let value = column_max(&matrix, c);
                BestResponse { teammate: c, rows: (0..n).filter(|&x| matrix.get(x, c) >= value - tol).collect(), value }
            })
            .collect();
        let feasible = (0..n).map(|row| feasibility_check(row, &matrix, tol).map(|f| f.0)).collect::<Result<_, _>>()?;
        Ok(CoverageReport {
            env: universe.env.id,
            labels: universe.labels.clone(),
            matrix,
            tolerance: tol,
            candidates,
            minimal_sets,
            best_responses,
            feasible,
        })
    }

    fn set_label(&self, set: &[usize]) -> String {
        let names: Vec<&str> = set.iter().map(|&i| self.labels[i].as_str()).collect();
        format!("{{{}}}", names.join(", "))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "environment: {}", self.env.name());
        let _ = writeln!(s, "policies: {}", self.labels.join(", "));
        let _ = writeln!(s, "tie tolerance: {:e}", self.tolerance);
        let _ = writeln!(s, "\nreturn matrix (row = responder, column = teammate):");
        let _ = writeln!(s, "{:>10} {}", "", self.labels.iter().map(|l| format!("{l:>10}")).collect::<String>());
        for (r, label) in self.labels.iter().enumerate() {
            let row: String = self.matrix.row(r).iter().map(|v| format!("{v:>10.4}")).collect();
            let _ = writeln!(s, "{label:>10} {row}");
        }
        let _ = writeln!(s, "\nbest responses:");
        for br in &self.best_responses {
            let _ = writeln!(
                s,
                "  teammate {:>10}: {} (return {:.4})",
                self.labels[br.teammate],
                self.set_label(&br.rows),
                br.value
            );
        }
        let _ = writeln!(s, "\nminimal coverage sets:");
        for set in &self.minimal_sets {
            let _ = writeln!(s, "  {}", self.set_label(set));
        }
        let infeasible: Vec<&str> =
            self.feasible.iter().enumerate().filter(|(_, f)| !**f).map(|(i, _)| self.labels[i].as_str()).collect();
        if !infeasible.is_empty() {
            let _ = writeln!(s, "\nnot a best response to any teammate: {}", infeasible.join(", "));
        }
        s
    }

    /// One row per candidate set: `set,size,is_coverage,is_minimal`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["set", "size", "is_coverage", "is_minimal"])?;
        for (set, ok) in &self.candidates {
            let label: Vec<&str> = set.iter().map(|&i| self.labels[i].as_str()).collect();
            let minimal = self.minimal_sets.contains(set);
            wtr.write_record([label.join(" "), set.len().to_string(), ok.to_string(), minimal.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{MATRIX_PAYOFF, WEIGHTED_PAYOFF};

    fn fig2a() -> ReturnMatrix {
        ReturnMatrix::from_rows(&MATRIX_PAYOFF).unwrap()
    }

    #[test]
    fn matrix_universe_reproduces_payoff() {
        let u = PolicyUniverse::for_env(EnvConfig::new(EnvId::RepeatedMatrix));
        let m = exact_return_matrix(&u).unwrap().scaled(1.0 / 5.0);
        assert_eq!(m, fig2a());
    }

    #[test]
    fn coverage_examples() {
        let r = fig2a();
        assert!(is_coverage_set(&[0, 1, 2], &r, EXACT_TOLERANCE).unwrap());
        assert!(!is_coverage_set(&[0, 1], &r, EXACT_TOLERANCE).unwrap());
        assert!(!is_coverage_set(&[], &r, EXACT_TOLERANCE).unwrap());
        assert!(is_coverage_set(&[7], &r, EXACT_TOLERANCE).is_err());
    }

    #[test]
    fn minimal_sets_and_feasibility() {
        let r = fig2a();
        assert_eq!(minimal_coverage_sets(&r, EXACT_TOLERANCE).unwrap(), vec![vec![0, 1, 2]]);
        assert_eq!(feasibility_check(1, &r, EXACT_TOLERANCE).unwrap(), (true, Some(1)));

        // A dominated fourth row: strictly below every column maximum.
        let aug = ReturnMatrix::from_rows(&[
            [10.0, 0.0, 4.0, 5.0],
            [0.0, 6.0, 4.0, 3.0],
            [4.0, 4.0, 6.0, 5.0],
            [5.0, 3.0, 5.0, 4.0],
        ])
        .unwrap();
        assert_eq!(feasibility_check(3, &aug, EXACT_TOLERANCE).unwrap(), (false, None));
        for set in minimal_coverage_sets(&aug, EXACT_TOLERANCE).unwrap() {
            assert!(!set.contains(&3));
        }
        let single = ReturnMatrix::from_rows(&[[1.0]]).unwrap();
        assert_eq!(feasibility_check(0, &single, EXACT_TOLERANCE).unwrap(), (true, Some(0)));
    }

    #[test]
    fn capacity_error() {
        assert_eq!(minimal_coverage_sets(&ReturnMatrix::zeros(21), 0.0), Err(McsError::Capacity(21)));
    }

    #[test]
    fn weighted_reaching_universe() {
        let u = PolicyUniverse::for_env(EnvConfig::new(EnvId::WeightedCoopReach).with_grid_dim(5));
        let m = exact_return_matrix(&u).unwrap();
        assert_eq!(m, ReturnMatrix::from_rows(&WEIGHTED_PAYOFF).unwrap());
        assert_eq!(minimal_coverage_sets(&m, SIMULATED_TOLERANCE).unwrap(), vec![vec![0, 1, 2, 3]]);
    }

    #[test]
    fn report_lists_every_subset() {
        let u = PolicyUniverse::for_env(EnvConfig::new(EnvId::RepeatedMatrix));
        let rep = CoverageReport::from_matrix(&u, fig2a()).unwrap();
        assert_eq!(rep.candidates.len(), 7);
        assert!(rep.to_text().contains("{a1, a2, a3}"));
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 8);
        assert!(text.contains("a1 a2 a3,3,true,true"));
    }
}
