use rand::Rng;

use super::NnError;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Gated recurrent unit.
///
/// ```text
/// z  = σ(Wz x + Uz h + bz)
/// r  = σ(Wr x + Ur h + br)
/// n  = tanh(Wn x + r ⊙ (Un h) + bn)
/// h' = (1 - z) ⊙ n + z ⊙ h
/// ```
///
/// Parameters are stored flat, gate by gate: `W` (`hidden × input`), `U`
/// (`hidden × hidden`), `b` (`hidden`) for z, then r, then n.
#[derive(Clone, Debug, PartialEq)]
pub struct GruCell {
    input_dim: usize,
    hidden_dim: usize,
    params: Vec<f64>,
}

/// Intermediate values of one cell step, enough for backpropagation.
#[derive(Clone, Debug)]
pub struct GruTape {
    x: Vec<f64>,
    h: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    un_h: Vec<f64>,
}

const GATES: usize = 3;

impl GruCell {
    pub fn param_count(input_dim: usize, hidden_dim: usize) -> usize {
        GATES * (hidden_dim * input_dim + hidden_dim * hidden_dim + hidden_dim)
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Result<Self, NnError> {
        if input_dim == 0 || hidden_dim == 0 {
            return Err(NnError::Shape("recurrent dims must be positive".into()));
        }
        Ok(GruCell { input_dim, hidden_dim, params: vec![0.0; Self::param_count(input_dim, hidden_dim)] })
    }

    pub fn random(input_dim: usize, hidden_dim: usize, rng: &mut impl Rng) -> Result<Self, NnError> {
        let mut cell = GruCell::zeros(input_dim, hidden_dim)?;
        let bound = 1.0 / (hidden_dim as f64).sqrt();
        let (wl, ul, _) = cell.block_lens();
        for g in 0..GATES {
            let off = g * cell.gate_len();
            for p in &mut cell.params[off..off + wl + ul] {
                *p = rng.gen_range(-bound..bound);
            }
        }
        Ok(cell)
    }

    pub fn from_params(input_dim: usize, hidden_dim: usize, params: Vec<f64>) -> Result<Self, NnError> {
        let mut cell = GruCell::zeros(input_dim, hidden_dim)?;
        if params.len() != cell.params.len() {
            return Err(NnError::Shape(format!(
                "expected {} recurrent parameters, got {}",
                cell.params.len(),
                params.len()
            )));
        }
        cell.params = params;
        Ok(cell)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn block_lens(&self) -> (usize, usize, usize) {
        let h = self.hidden_dim;
        (h * self.input_dim, h * h, h)
    }

    fn gate_len(&self) -> usize {
        let (a, b, c) = self.block_lens();
        a + b + c
    }

    fn gate(&self, g: usize) -> (&[f64], &[f64], &[f64]) {
        let (wl, ul, bl) = self.block_lens();
        let off = g * self.gate_len();
        let p = &self.params[off..off + wl + ul + bl];
        (&p[..wl], &p[wl..wl + ul], &p[wl + ul..])
    }

    pub fn initial_hidden(&self) -> Vec<f64> {
        vec![0.0; self.hidden_dim]
    }

    pub fn step(&self, x: &[f64], h: &[f64]) -> Result<(Vec<f64>, GruTape), NnError> {
        if x.len() != self.input_dim || h.len() != self.hidden_dim {
            return Err(NnError::Shape(format!(
                "recurrent step got input {} / hidden {}, expected {} / {}",
                x.len(),
                h.len(),
                self.input_dim,
                self.hidden_dim
            )));
        }
        let hd = self.hidden_dim;
        let id = self.input_dim;
        let affine = |w: &[f64], row: usize, v: &[f64], width: usize| -> f64 {
            w[row * width..(row + 1) * width].iter().zip(v).map(|(a, b)| a * b).sum::<f64>()
        };
        let (wz, uz, bz) = self.gate(0);
        let (wr, ur, br) = self.gate(1);
        let (wn, un, bn) = self.gate(2);
        let mut z = vec![0.0; hd];
        let mut r = vec![0.0; hd];
        let mut n = vec![0.0; hd];
        let mut un_h = vec![0.0; hd];
        let mut h_next = vec![0.0; hd];
        for k in 0..hd {
            z[k] = sigmoid(affine(wz, k, x, id) + affine(uz, k, h, hd) + bz[k]);
            r[k] = sigmoid(affine(wr, k, x, id) + affine(ur, k, h, hd) + br[k]);
            un_h[k] = affine(un, k, h, hd);
            n[k] = (affine(wn, k, x, id) + r[k] * un_h[k] + bn[k]).tanh();
            h_next[k] = (1.0 - z[k]) * n[k] + z[k] * h[k];
        }
        Ok((h_next, GruTape { x: x.to_vec(), h: h.to_vec(), z, r, n, un_h }))
    }

    /// Accumulates parameter gradients for dL/dh' into `grads`; returns
    /// `(dL/dx, dL/dh)`.
    pub fn backward_into(
        &self,
        tape: &GruTape,
        dh_next: &[f64],
        grads: &mut [f64],
    ) -> Result<(Vec<f64>, Vec<f64>), NnError> {
        if dh_next.len() != self.hidden_dim || grads.len() != self.params.len() {
            return Err(NnError::Shape("recurrent backward shape mismatch".into()));
        }
        let hd = self.hidden_dim;
        let id = self.input_dim;
        let (wl, ul, _) = self.block_lens();
        let gl = self.gate_len();
        let mut dx = vec![0.0; id];
        let mut dh = vec![0.0; hd];
        let mut da = [vec![0.0; hd], vec![0.0; hd], vec![0.0; hd]];
        let mut du_n = vec![0.0; hd];
        for k in 0..hd {
            let g = dh_next[k];
            let (z, r, n) = (tape.z[k], tape.r[k], tape.n[k]);
            dh[k] += g * z;
            let dn = g * (1.0 - z);
            let dz = g * (tape.h[k] - n);
            let dan = dn * (1.0 - n * n);
            let dr = dan * tape.un_h[k];
            du_n[k] = dan * r;
            da[0][k] = dz * z * (1.0 - z);
            da[1][k] = dr * r * (1.0 - r);
            da[2][k] = dan;
        }
        for (gi, a) in da.iter().enumerate() {
            let off = gi * gl;
            let (w, u, _) = self.gate(gi);
            // Recurrent pre-activation for the candidate gate is u_n ⊙ r.
            let du: &[f64] = if gi == 2 { &du_n } else { a };
            for k in 0..hd {
                let d = a[k];
                if d != 0.0 {
                    grads[off + wl + ul + k] += d;
                    let gw = &mut grads[off + k * id..off + (k + 1) * id];
                    for (acc, xv) in gw.iter_mut().zip(&tape.x) {
                        *acc += d * xv;
                    }
                    for (acc, wv) in dx.iter_mut().zip(&w[k * id..(k + 1) * id]) {
                        *acc += d * wv;
                    }
                }
                let e = du[k];
                if e != 0.0 {
                    let gu = &mut grads[off + wl + k * hd..off + wl + (k + 1) * hd];
                    for (acc, hv) in gu.iter_mut().zip(&tape.h) {
                        *acc += e * hv;
                    }
                    for (acc, uv) in dh.iter_mut().zip(&u[k * hd..(k + 1) * hd]) {
                        *acc += e * uv;
                    }
                }
            }
        }
        Ok((dx, dh))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_cell_halves_hidden() {
        // z = r = 0.5 and n = 0 when all parameters vanish.
        let cell = GruCell::zeros(2, 3).unwrap();
        let (h, _) = cell.step(&[1.0, -1.0], &[0.4, -0.2, 1.0]).unwrap();
        assert_eq!(h, vec![0.2, -0.1, 0.5]);
    }

    #[test]
    fn shape_errors() {
        let cell = GruCell::zeros(2, 3).unwrap();
        assert!(cell.step(&[1.0], &[0.0; 3]).is_err());
        assert!(cell.step(&[1.0, 2.0], &[0.0; 2]).is_err());
    }
}
