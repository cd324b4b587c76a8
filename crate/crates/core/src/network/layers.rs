//! Affine and GRU layers over flat slices, with explicit backward passes.
//! Backward functions accumulate into the gradient structs and input
//! gradient buffers.

use ndarray::{Array1, Array2};

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `y = w x + b` with `w` of shape `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            w: Array2::zeros((output, input)),
            b: Array1::zeros(output),
        }
    }

    pub fn input(&self) -> usize {
        self.w.ncols()
    }

    pub fn output(&self) -> usize {
        self.w.nrows()
    }

    pub fn forward(&self, x: &[f64], y: &mut [f64]) {
        let inp = self.input();
        let w = self.w.as_slice().expect("standard layout");
        for (o, yo) in y.iter_mut().enumerate() {
            *yo = self.b[o] + dot(&w[o * inp..(o + 1) * inp], x);
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.output()];
        self.forward(x, &mut y);
        y
    }

    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Linear, dx: Option<&mut [f64]>) {
        let inp = self.input();
        let gw = grad.w.as_slice_mut().expect("standard layout");
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.b[o] += g;
            for (gwi, &xi) in gw[o * inp..(o + 1) * inp].iter_mut().zip(x) {
                *gwi += g * xi;
            }
        }
        if let Some(dx) = dx {
            let w = self.w.as_slice().expect("standard layout");
            for (o, &g) in dy.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                for (dxi, &wi) in dx.iter_mut().zip(&w[o * inp..(o + 1) * inp]) {
                    *dxi += g * wi;
                }
            }
        }
    }
}

/// Gated recurrent unit with gate order (reset, update, candidate):
///
/// ```text
/// r  = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
/// z  = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
/// n  = tanh(W_in x + b_in + r * (W_hn h + b_hn))
/// h' = (1 - z) * n + z * h
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct Gru {
    pub w_ih: Array2<f64>,
    pub w_hh: Array2<f64>,
    pub b_ih: Array1<f64>,
    pub b_hh: Array1<f64>,
}

/// Everything a GRU run keeps for its backward pass.
#[derive(Debug, Clone)]
pub struct GruTrace {
    pub len: usize,
    pub xs: Vec<f64>,
    /// `len + 1` hidden states; `hs[0..g]` is the initial state.
    pub hs: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    hn: Vec<f64>,
}

impl GruTrace {
    /// Hidden state after step `t` (0-based).
    pub fn output(&self, t: usize) -> &[f64] {
        let g = self.hs.len() / (self.len + 1);
        &self.hs[(t + 1) * g..(t + 2) * g]
    }
}

impl Gru {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Gru {
            w_ih: Array2::zeros((3 * hidden, input)),
            w_hh: Array2::zeros((3 * hidden, hidden)),
            b_ih: Array1::zeros(3 * hidden),
            b_hh: Array1::zeros(3 * hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.ncols()
    }

    pub fn input(&self) -> usize {
        self.w_ih.ncols()
    }

    /// Runs over `xs` (`len * input`, step-major) from `h0`.
    pub fn run(&self, xs: Vec<f64>, h0: &[f64]) -> GruTrace {
        let (inp, g) = (self.input(), self.hidden());
        let len = xs.len() / inp;
        let w_ih = self.w_ih.as_slice().expect("standard layout");
        let w_hh = self.w_hh.as_slice().expect("standard layout");
        let b_ih = self.b_ih.as_slice().expect("standard layout");
        let b_hh = self.b_hh.as_slice().expect("standard layout");
        let mut hs = Vec::with_capacity((len + 1) * g);
        hs.extend_from_slice(h0);
        let mut r = vec![0.0; len * g];
        let mut z = vec![0.0; len * g];
        let mut n = vec![0.0; len * g];
        let mut hn = vec![0.0; len * g];
        let mut gi = vec![0.0; 3 * g];
        let mut gh = vec![0.0; 3 * g];
        for t in 0..len {
            let x = &xs[t * inp..(t + 1) * inp];
            let h = &hs[t * g..(t + 1) * g];
            for k in 0..3 * g {
                gi[k] = b_ih[k] + dot(&w_ih[k * inp..(k + 1) * inp], x);
                gh[k] = b_hh[k] + dot(&w_hh[k * g..(k + 1) * g], h);
            }
            let mut next = vec![0.0; g];
            for k in 0..g {
                let rk = sigmoid(gi[k] + gh[k]);
                let zk = sigmoid(gi[g + k] + gh[g + k]);
                let hnk = gh[2 * g + k];
                let nk = (gi[2 * g + k] + rk * hnk).tanh();
                r[t * g + k] = rk;
                z[t * g + k] = zk;
                n[t * g + k] = nk;
                hn[t * g + k] = hnk;
                next[k] = (1.0 - zk) * nk + zk * h[k];
            }
            hs.extend_from_slice(&next);
        }
        GruTrace {
            len,
            xs,
            hs,
            r,
            z,
            n,
            hn,
        }
    }

    /// Backpropagation through time. `dhs` holds the loss gradient with
    /// respect to each step's output (`len * hidden`). Input gradients are
    /// added to `dxs`; the gradient for the initial state is returned.
    pub fn backward(&self, tr: &GruTrace, dhs: &[f64], grad: &mut Gru, dxs: &mut [f64]) -> Vec<f64> {
        let (inp, g) = (self.input(), self.hidden());
        let w_ih = self.w_ih.as_slice().expect("standard layout");
        let w_hh = self.w_hh.as_slice().expect("standard layout");
        let gw_ih = grad.w_ih.as_slice_mut().expect("standard layout");
        let gw_hh = grad.w_hh.as_slice_mut().expect("standard layout");
        let gb_ih = grad.b_ih.as_slice_mut().expect("standard layout");
        let gb_hh = grad.b_hh.as_slice_mut().expect("standard layout");

        let mut dh = vec![0.0; g];
        let mut dgi = vec![0.0; 3 * g];
        let mut dgh = vec![0.0; 3 * g];
        for t in (0..tr.len).rev() {
            let h_prev = &tr.hs[t * g..(t + 1) * g];
            let x = &tr.xs[t * inp..(t + 1) * inp];
            let mut dh_prev = vec![0.0; g];
            for k in 0..g {
                let i = t * g + k;
                let d = dh[k] + dhs[i];
                let (r, z, n, hn) = (tr.r[i], tr.z[i], tr.n[i], tr.hn[i]);
                let dn_pre = d * (1.0 - z) * (1.0 - n * n);
                let dz_pre = d * (h_prev[k] - n) * z * (1.0 - z);
                let dr_pre = dn_pre * hn * r * (1.0 - r);
                dgi[k] = dr_pre;
                dgi[g + k] = dz_pre;
                dgi[2 * g + k] = dn_pre;
                dgh[k] = dr_pre;
                dgh[g + k] = dz_pre;
                dgh[2 * g + k] = dn_pre * r;
                dh_prev[k] = d * z;
            }
            let dx = &mut dxs[t * inp..(t + 1) * inp];
            for k in 0..3 * g {
                let (a, b) = (dgi[k], dgh[k]);
                gb_ih[k] += a;
                gb_hh[k] += b;
                let row_i = &w_ih[k * inp..(k + 1) * inp];
                let grow_i = &mut gw_ih[k * inp..(k + 1) * inp];
                for j in 0..inp {
                    grow_i[j] += a * x[j];
                    dx[j] += a * row_i[j];
                }
                let row_h = &w_hh[k * g..(k + 1) * g];
                let grow_h = &mut gw_hh[k * g..(k + 1) * g];
                for j in 0..g {
                    grow_h[j] += b * h_prev[j];
                    dh_prev[j] += b * row_h[j];
                }
            }
            dh = dh_prev;
        }
        dh
    }
}
