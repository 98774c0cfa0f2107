/// Payoff of the repeated matrix game, indexed `[a_i][a_neg_i]`.
pub const MATRIX_PAYOFF: [[f64; 3]; 3] = [
    [10.0, 0.0, 4.0],
    [0.0, 6.0, 4.0],
    [4.0, 4.0, 6.0],
];
