//! Diversity objectives over a population of `K` (AHT-side, teammate) policy pairs.
//!
//! All indices are zero-based. A [`ReturnMatrix`] entry `R[j][i]` is the
//! expected return when AHT-side policy `j` plays with teammate `i`; the
//! diagonal holds self-play returns.

mod io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{read_lagrange_csv, read_return_matrix_csv, write_lagrange_csv, write_return_matrix_csv};

#[derive(Debug, Error, PartialEq)]
pub enum DiversityError {
    #[error("index ({i}, {j}) out of range for K = {k}")]
    Index { i: usize, j: usize, k: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("learning rate must be non-negative and finite, got {0}")]
    LearningRate(f64),
    #[error("malformed csv: {0}")]
    Csv(String),
}

/// Square matrix of expected returns, row = AHT-side policy, column = teammate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReturnMatrix {
    k: usize,
    values: Vec<f64>,
}

impl ReturnMatrix {
    pub fn zeros(k: usize) -> Self {
        ReturnMatrix { k, values: vec![0.0; k * k] }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, DiversityError> {
        let k = rows.len();
        let mut values = Vec::with_capacity(k * k);
        for r in rows {
            let r = r.as_ref();
            if r.len() != k {
                return Err(DiversityError::Shape(format!("row of length {} in {k}x{k} matrix", r.len())));
            }
            values.extend_from_slice(r);
        }
        Ok(ReturnMatrix { k, values })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.k + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.values[row * self.k + col] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.k..(r + 1) * self.k]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn trace(&self) -> f64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }

    pub fn off_diagonal_sum(&self) -> f64 {
        let mut s = 0.0;
        for r in 0..self.k {
            for c in 0..self.k {
                if r != c {
                    s += self.get(r, c);
                }
            }
        }
        s
    }

    pub fn scaled(&self, factor: f64) -> Self {
        ReturnMatrix { k: self.k, values: self.values.iter().map(|v| v * factor).collect() }
    }

    /// Slack of the constraint `R[j][i] + τ <= R[i][i]`.
    pub fn slack_teammate(&self, i: usize, j: usize, tau: f64) -> f64 {
        self.get(i, i) - tau - self.get(j, i)
    }

    /// Slack of the constraint `R[i][j] + τ <= R[i][i]`.
    pub fn slack_aht(&self, i: usize, j: usize, tau: f64) -> f64 {
        self.get(i, i) - tau - self.get(i, j)
    }

    /// Smallest constraint slack over all ordered pairs `i != j`
    /// (`+inf` when `K < 2`).
    pub fn min_slack(&self, tau: f64) -> f64 {
        let mut m = f64::INFINITY;
        for i in 0..self.k {
            for j in 0..self.k {
                if i != j {
                    m = m.min(self.slack_teammate(i, j, tau)).min(self.slack_aht(i, j, tau));
                }
            }
        }
        m
    }
}

/// Non-negative Lagrange multipliers `alpha1[i][j]`, `alpha2[i][j]` (`i != j`)
/// and the tolerance `tau`. Diagonal entries are stored but never read.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LagrangeSet {
    k: usize,
    pub tau: f64,
    alpha1: Vec<f64>,
    alpha2: Vec<f64>,
}

impl LagrangeSet {
    pub fn new(k: usize, tau: f64) -> Self {
        LagrangeSet { k, tau, alpha1: vec![0.0; k * k], alpha2: vec![0.0; k * k] }
    }

    /// Every off-diagonal multiplier set to `value`.
    pub fn uniform(k: usize, tau: f64, value: f64) -> Self {
        let mut a = LagrangeSet::new(k, tau);
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    a.set_alpha1(i, j, value);
                    a.set_alpha2(i, j, value);
                }
            }
        }
        a
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn alpha1(&self, i: usize, j: usize) -> f64 {
        self.alpha1[i * self.k + j]
    }

    pub fn alpha2(&self, i: usize, j: usize) -> f64 {
        self.alpha2[i * self.k + j]
    }

    pub fn set_alpha1(&mut self, i: usize, j: usize, v: f64) {
        self.alpha1[i * self.k + j] = v;
    }

    pub fn set_alpha2(&mut self, i: usize, j: usize, v: f64) {
        self.alpha2[i * self.k + j] = v;
    }

    /// Off-diagonal multipliers in row-major order: all `alpha1`, then all `alpha2`.
    pub fn off_diagonal(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.k * self.k.saturating_sub(1));
        for table in [&self.alpha1, &self.alpha2] {
            for i in 0..self.k {
                for j in 0..self.k {
                    if i != j {
                        out.push(table[i * self.k + j]);
                    }
                }
            }
        }
        out
    }

    pub fn max_multiplier(&self) -> f64 {
        self.off_diagonal().into_iter().fold(0.0, f64::max)
    }

    fn check(&self, i: usize, j: usize) -> Result<(), DiversityError> {
        if i >= self.k || j >= self.k {
            return Err(DiversityError::Index { i, j, k: self.k });
        }
        Ok(())
    }
}

/// Weight of the one-step advantage for a batch collected by AHT-side policy
/// `j` and teammate `i`.
///
/// `1 + Σ_{k≠j}(α1[i][k] + α2[i][k])` when `i == j`, otherwise
/// `-(α1[i][j] + α2[j][i])`.
pub fn pair_weight(a: &LagrangeSet, i: usize, j: usize) -> Result<f64, DiversityError> {
    a.check(i, j)?;
    if i == j {
        let s: f64 = (0..a.k).filter(|&k| k != j).map(|k| a.alpha1(i, k) + a.alpha2(i, k)).sum();
        Ok(1.0 + s)
    } else {
        Ok(-(a.alpha1(i, j) + a.alpha2(j, i)))
    }
}

fn check_shapes(r: &ReturnMatrix, a: &LagrangeSet) -> Result<(), DiversityError> {
    if r.k() != a.k() {
        return Err(DiversityError::Shape(format!("return matrix K = {} vs multipliers K = {}", r.k(), a.k())));
    }
    Ok(())
}

/// Value of the Lagrangian for fixed returns and multipliers.
pub fn lagrange_dual_value(r: &ReturnMatrix, a: &LagrangeSet) -> Result<f64, DiversityError> {
    check_shapes(r, a)?;
    let mut v = r.trace();
    for i in 0..r.k() {
        for j in 0..r.k() {
            if i != j {
                v += a.alpha1(i, j) * r.slack_teammate(i, j, a.tau);
                v += a.alpha2(i, j) * r.slack_aht(i, j, a.tau);
            }
        }
    }
    Ok(v)
}

/// One projected gradient-descent step on the multipliers. The gradient of the
/// Lagrangian with respect to each multiplier is its constraint slack, so
/// multipliers rise while their constraint is violated and decay otherwise.
pub fn lagrange_update(r_hat: &ReturnMatrix, a: &LagrangeSet, lr: f64) -> Result<LagrangeSet, DiversityError> {
    check_shapes(r_hat, a)?;
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(DiversityError::LearningRate(lr));
    }
    let mut next = a.clone();
    for i in 0..a.k() {
        for j in 0..a.k() {
            if i != j {
                let a1 = a.alpha1(i, j) - lr * r_hat.slack_teammate(i, j, a.tau);
                let a2 = a.alpha2(i, j) - lr * r_hat.slack_aht(i, j, a.tau);
                next.set_alpha1(i, j, a1.max(0.0));
                next.set_alpha2(i, j, a2.max(0.0));
            }
        }
    }
    Ok(next)
}

/// `(constant, slope)` of the BRDiv metric, which is affine in its weight α.
pub fn brdiv_coefficients(r: &ReturnMatrix) -> (f64, f64) {
    let k = r.k() as f64;
    let trace = r.trace();
    (trace, 2.0 * ((k - 1.0) * trace - r.off_diagonal_sum()))
}

/// BRDiv metric: self-play plus α-weighted gaps between every self-play
/// return and the cross-play returns in its row and column.
pub fn brdiv_objective(r: &ReturnMatrix, alpha: f64) -> f64 {
    let (c, s) = brdiv_coefficients(r);
    c + s * alpha
}

/// `(constant, slope)` of the LIPO metric; each off-diagonal entry is counted once.
pub fn lipo_coefficients(r: &ReturnMatrix) -> (f64, f64) {
    (r.trace(), -r.off_diagonal_sum())
}

/// LIPO metric: self-play minus α times the cross-play returns.
pub fn lipo_objective(r: &ReturnMatrix, alpha: f64) -> f64 {
    let (c, s) = lipo_coefficients(r);
    c + s * alpha
}

/// How LIPO's `alpha` scales the cross-play terms during training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LipoConvention {
    /// Sum over ordered pairs of `R[j][i] + R[i][j]`: every cross-play entry
    /// is penalized twice, so its weight is `-2 alpha`.
    #[default]
    OrderedPairs,
    /// Every cross-play entry penalized once, weight `-alpha`; this is the
    /// convention of [`lipo_objective`].
    Once,
}

impl LipoConvention {
    /// Factor mapping this convention's `alpha` onto [`lipo_objective`]'s.
    pub fn factor(self) -> f64 {
        match self {
            LipoConvention::OrderedPairs => 2.0,
            LipoConvention::Once => 1.0,
        }
    }
}

/// The weighting scheme used by the population trainer.
#[derive(Clone, Debug, PartialEq)]
pub enum Objective {
    /// Learned multipliers.
    Lagrangian(LagrangeSet),
    /// Fixed uniform multipliers equal to `alpha`.
    Brdiv { alpha: f64 },
    /// Self-play weight 1, cross-play weight `-alpha` times the convention factor.
    Lipo { alpha: f64, convention: LipoConvention },
}

impl Objective {
    pub fn weight(&self, k: usize, i: usize, j: usize) -> Result<f64, DiversityError> {
        if i >= k || j >= k {
            return Err(DiversityError::Index { i, j, k });
        }
        Ok(match self {
            Objective::Lagrangian(a) => pair_weight(a, i, j)?,
            Objective::Brdiv { alpha } => {
                if i == j {
                    1.0 + 2.0 * (k as f64 - 1.0) * alpha
                } else {
                    -2.0 * alpha
                }
            }
            Objective::Lipo { alpha, convention } => {
                if i == j {
                    1.0
                } else {
                    -alpha * convention.factor()
                }
            }
        })
    }

    /// Value of this objective on a return matrix.
    pub fn value(&self, r: &ReturnMatrix) -> Result<f64, DiversityError> {
        Ok(match self {
            Objective::Lagrangian(a) => lagrange_dual_value(r, a)?,
            Objective::Brdiv { alpha } => brdiv_objective(r, *alpha),
            Objective::Lipo { alpha, convention } => lipo_objective(r, alpha * convention.factor()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn payoff() -> ReturnMatrix {
        ReturnMatrix::from_rows(&[[10.0, 0.0, 4.0], [0.0, 6.0, 4.0], [4.0, 4.0, 6.0]]).unwrap()
    }

    #[test]
    fn pair_weight_examples() {
        let mut a = LagrangeSet::new(3, 1.0);
        assert_eq!(pair_weight(&a, 1, 1).unwrap(), 1.0);
        assert_eq!(pair_weight(&a, 0, 2).unwrap(), 0.0);
        a.set_alpha1(0, 1, 0.5);
        a.set_alpha2(1, 0, 0.3);
        assert_eq!(pair_weight(&a, 0, 1).unwrap(), -0.8);

        let mut b = LagrangeSet::new(3, 1.0);
        for j in [1, 2] {
            b.set_alpha1(0, j, 0.25);
            b.set_alpha2(0, j, 0.25);
        }
        assert_eq!(pair_weight(&b, 0, 0).unwrap(), 2.0);
        assert_eq!(pair_weight(&b, 3, 0), Err(DiversityError::Index { i: 3, j: 0, k: 3 }));
    }

    #[test]
    fn dual_value_examples() {
        let r = ReturnMatrix::from_rows(&[[10.0, 0.0], [0.0, 6.0]]).unwrap();
        let a = LagrangeSet::uniform(2, 1.0, 0.5);
        assert_eq!(lagrange_dual_value(&r, &a).unwrap(), 30.0);
        assert_eq!(lagrange_dual_value(&payoff(), &LagrangeSet::new(3, 1.0)).unwrap(), 22.0);
        assert!(lagrange_dual_value(&r, &LagrangeSet::new(3, 1.0)).is_err());
    }

    #[test]
    fn update_examples() {
        // Slack +9 for every constraint: R = [[10, 0], [0, 10]], tau = 1.
        let r = ReturnMatrix::from_rows(&[[10.0, 0.0], [0.0, 10.0]]).unwrap();
        let a = LagrangeSet::uniform(2, 1.0, 0.5);
        let next = lagrange_update(&r, &a, 0.05).unwrap();
        assert!((next.alpha1(0, 1) - 0.05).abs() < 1e-12);
        let a = LagrangeSet::uniform(2, 1.0, 0.1);
        assert_eq!(lagrange_update(&r, &a, 0.05).unwrap().alpha1(0, 1), 0.0);

        // Slack -2: R[i][i] = 1, R[j][i] = 2, tau = 1.
        let r = ReturnMatrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]]).unwrap();
        let next = lagrange_update(&r, &LagrangeSet::new(2, 1.0), 0.1).unwrap();
        assert!((next.alpha1(0, 1) - 0.2).abs() < 1e-12);
        assert!((next.alpha2(1, 0) - 0.2).abs() < 1e-12);

        assert_eq!(lagrange_update(&r, &a, -0.1), Err(DiversityError::LearningRate(-0.1)));
    }

    #[test]
    fn baseline_weights() {
        let brdiv = Objective::Brdiv { alpha: 1.0 };
        assert_eq!(brdiv.weight(3, 1, 1).unwrap(), 5.0);
        assert_eq!(brdiv.weight(3, 1, 2).unwrap(), -2.0);
        // Brdiv weights equal the learned weights at uniform multipliers.
        let a = LagrangeSet::uniform(3, 0.0, 1.0);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(brdiv.weight(3, i, j).unwrap(), pair_weight(&a, i, j).unwrap());
            }
        }
        let lipo = Objective::Lipo { alpha: 0.5, convention: LipoConvention::Once };
        assert_eq!(lipo.weight(3, 0, 0).unwrap(), 1.0);
        assert_eq!(lipo.weight(3, 0, 1).unwrap(), -0.5);
        let lipo = Objective::Lipo { alpha: 0.5, convention: LipoConvention::OrderedPairs };
        assert_eq!(lipo.weight(3, 0, 1).unwrap(), -1.0);
        let r = ReturnMatrix::from_rows(&[[10.0, 0.0, 4.0], [0.0, 6.0, 4.0], [4.0, 4.0, 6.0]]).unwrap();
        assert_eq!(lipo.value(&r).unwrap(), lipo_objective(&r, 1.0));
    }

    #[test]
    fn slack_and_min_slack() {
        let r = payoff();
        assert_eq!(r.slack_teammate(2, 0, 1.0), 6.0 - 1.0 - 4.0);
        assert_eq!(r.slack_aht(1, 2, 1.0), 6.0 - 1.0 - 4.0);
        assert_eq!(r.min_slack(1.0), 1.0);
        assert_eq!(ReturnMatrix::zeros(1).min_slack(1.0), f64::INFINITY);
    }
}
