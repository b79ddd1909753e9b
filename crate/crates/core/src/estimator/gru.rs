//! Gated recurrent tower with an exact backward pass.
//!
//! Gate convention (reset applied inside the candidate's recurrent term):
//!
//! ```text
//! z_t = σ(W_z x_t + U_z h_{t-1} + b_z)
//! r_t = σ(W_r x_t + U_r h_{t-1} + b_r)
//! c_t = tanh(W_h x_t + U_h (r_t ⊙ h_{t-1}) + b_h)
//! h_t = (1 - z_t) ⊙ h_{t-1} + z_t ⊙ c_t
//! ```
//! with `h_0 = 0`.

use serde::{Deserialize, Serialize};

use super::tensor::{sigmoid, Matrix};
use crate::seed::Rng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruTower {
    pub w_z: Matrix,
    pub w_r: Matrix,
    pub w_h: Matrix,
    pub u_z: Matrix,
    pub u_r: Matrix,
    pub u_h: Matrix,
    pub b_z: Vec<f64>,
    pub b_r: Vec<f64>,
    pub b_h: Vec<f64>,
}

/// Per-step activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct GruTrace {
    /// `h_0 ..= h_T`
    pub hidden: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
    cand: Vec<Vec<f64>>,
}

impl GruTrace {
    pub fn last(&self) -> &[f64] {
        self.hidden.last().expect("h_0 always present")
    }
}

impl GruTower {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        GruTower {
            w_z: Matrix::zeros(hidden, input),
            w_r: Matrix::zeros(hidden, input),
            w_h: Matrix::zeros(hidden, input),
            u_z: Matrix::zeros(hidden, hidden),
            u_r: Matrix::zeros(hidden, hidden),
            u_h: Matrix::zeros(hidden, hidden),
            b_z: vec![0.0; hidden],
            b_r: vec![0.0; hidden],
            b_h: vec![0.0; hidden],
        }
    }

    /// Uniform weights in `[-scale, scale]`, zero biases.
    pub fn init(input: usize, hidden: usize, scale: f64, rng: &mut Rng) -> Self {
        GruTower {
            w_z: Matrix::uniform(hidden, input, scale, rng),
            w_r: Matrix::uniform(hidden, input, scale, rng),
            w_h: Matrix::uniform(hidden, input, scale, rng),
            u_z: Matrix::uniform(hidden, hidden, scale, rng),
            u_r: Matrix::uniform(hidden, hidden, scale, rng),
            u_h: Matrix::uniform(hidden, hidden, scale, rng),
            b_z: vec![0.0; hidden],
            b_r: vec![0.0; hidden],
            b_h: vec![0.0; hidden],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_z.cols
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_z.rows
    }

    /// Runs the recurrence and returns every hidden state.
    pub fn forward(&self, seq: &[&[f64]]) -> Result<GruTrace> {
        if seq.is_empty() {
            return Err(Error::Config("gru input sequence is empty".into()));
        }
        let h_dim = self.hidden_dim();
        if let Some(x) = seq.iter().find(|x| x.len() != self.input_dim()) {
            return Err(Error::Config(format!(
                "gru expects input dim {}, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        let mut trace = GruTrace {
            hidden: Vec::with_capacity(seq.len() + 1),
            z: Vec::with_capacity(seq.len()),
            r: Vec::with_capacity(seq.len()),
            cand: Vec::with_capacity(seq.len()),
        };
        trace.hidden.push(vec![0.0; h_dim]);
        for x in seq {
            let h_prev = trace.last();

            let mut z = self.b_z.clone();
            self.w_z.matvec_acc(x, &mut z);
            self.u_z.matvec_acc(h_prev, &mut z);
            z.iter_mut().for_each(|v| *v = sigmoid(*v));

            let mut r = self.b_r.clone();
            self.w_r.matvec_acc(x, &mut r);
            self.u_r.matvec_acc(h_prev, &mut r);
            r.iter_mut().for_each(|v| *v = sigmoid(*v));

            let gated: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
            let mut c = self.b_h.clone();
            self.w_h.matvec_acc(x, &mut c);
            self.u_h.matvec_acc(&gated, &mut c);
            c.iter_mut().for_each(|v| *v = v.tanh());

            let h: Vec<f64> = (0..h_dim)
                .map(|i| (1.0 - z[i]) * h_prev[i] + z[i] * c[i])
                .collect();
            trace.z.push(z);
            trace.r.push(r);
            trace.cand.push(c);
            trace.hidden.push(h);
        }
        Ok(trace)
    }

    /// Back-propagates `d_last = ∂L/∂h_T` through time, accumulating weight
    /// gradients into `grads` and returning `∂L/∂x_t` for every input.
    pub fn backward(
        &self,
        seq: &[&[f64]],
        trace: &GruTrace,
        d_last: &[f64],
        grads: &mut GruTower,
    ) -> Vec<Vec<f64>> {
        let h_dim = self.hidden_dim();
        let mut dx_all = vec![Vec::new(); seq.len()];
        let mut dh = d_last.to_vec();
        for t in (0..seq.len()).rev() {
            let x = seq[t];
            let h_prev = &trace.hidden[t];
            let z = &trace.z[t];
            let r = &trace.r[t];
            let c = &trace.cand[t];

            let mut dh_prev: Vec<f64> = (0..h_dim).map(|i| dh[i] * (1.0 - z[i])).collect();
            let da_c: Vec<f64> = (0..h_dim)
                .map(|i| dh[i] * z[i] * (1.0 - c[i] * c[i]))
                .collect();
            let da_z: Vec<f64> = (0..h_dim)
                .map(|i| dh[i] * (c[i] - h_prev[i]) * z[i] * (1.0 - z[i]))
                .collect();

            let gated: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
            let mut d_gated = vec![0.0; h_dim];
            self.u_h.t_matvec_acc(&da_c, &mut d_gated);
            let da_r: Vec<f64> = (0..h_dim)
                .map(|i| d_gated[i] * h_prev[i] * r[i] * (1.0 - r[i]))
                .collect();
            for i in 0..h_dim {
                dh_prev[i] += d_gated[i] * r[i];
            }

            grads.w_h.outer_acc(&da_c, x);
            grads.u_h.outer_acc(&da_c, &gated);
            grads.w_z.outer_acc(&da_z, x);
            grads.u_z.outer_acc(&da_z, h_prev);
            grads.w_r.outer_acc(&da_r, x);
            grads.u_r.outer_acc(&da_r, h_prev);
            for i in 0..h_dim {
                grads.b_h[i] += da_c[i];
                grads.b_z[i] += da_z[i];
                grads.b_r[i] += da_r[i];
            }

            self.u_z.t_matvec_acc(&da_z, &mut dh_prev);
            self.u_r.t_matvec_acc(&da_r, &mut dh_prev);

            let mut dx = vec![0.0; self.input_dim()];
            self.w_h.t_matvec_acc(&da_c, &mut dx);
            self.w_z.t_matvec_acc(&da_z, &mut dx);
            self.w_r.t_matvec_acc(&da_r, &mut dx);
            dx_all[t] = dx;
            dh = dh_prev;
        }
        dx_all
    }

    pub fn add_assign(&mut self, o: &GruTower) {
        for (a, b) in self.tensors_mut().into_iter().zip(o.tensors()) {
            super::tensor::add_assign(a.1, b.1);
        }
    }

    pub fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("w_z", &self.w_z.data[..]),
            ("w_r", &self.w_r.data),
            ("w_h", &self.w_h.data),
            ("u_z", &self.u_z.data),
            ("u_r", &self.u_r.data),
            ("u_h", &self.u_h.data),
            ("b_z", &self.b_z),
            ("b_r", &self.b_r),
            ("b_h", &self.b_h),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![
            ("w_z", &mut self.w_z.data[..]),
            ("w_r", &mut self.w_r.data),
            ("w_h", &mut self.w_h.data),
            ("u_z", &mut self.u_z.data),
            ("u_r", &mut self.u_r.data),
            ("u_h", &mut self.u_h.data),
            ("b_z", &mut self.b_z),
            ("b_r", &mut self.b_r),
            ("b_h", &mut self.b_h),
        ]
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        let (h, d) = (self.hidden_dim(), self.input_dim());
        vec![
            (h, d),
            (h, d),
            (h, d),
            (h, h),
            (h, h),
            (h, h),
            (h, 1),
            (h, 1),
            (h, 1),
        ]
    }
}
