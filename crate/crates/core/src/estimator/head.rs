use serde::{Deserialize, Serialize};

use super::tensor::{add_assign, Matrix};
use crate::seed::Rng;

/// Fully connected layer on the last hidden state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearHead {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl LinearHead {
    pub fn zeros(input: usize, output: usize) -> Self {
        LinearHead {
            weight: Matrix::zeros(output, input),
            bias: vec![0.0; output],
        }
    }

    pub fn init(input: usize, output: usize, scale: f64, rng: &mut Rng) -> Self {
        LinearHead {
            weight: Matrix::uniform(output, input, scale, rng),
            bias: vec![0.0; output],
        }
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows
    }

    pub fn forward(&self, h: &[f64]) -> Vec<f64> {
        let mut out = self.bias.clone();
        self.weight.matvec_acc(h, &mut out);
        out
    }

    /// Accumulates parameter gradients and returns `∂L/∂h`.
    pub fn backward(&self, h: &[f64], d_out: &[f64], grads: &mut LinearHead) -> Vec<f64> {
        grads.weight.outer_acc(d_out, h);
        add_assign(&mut grads.bias, d_out);
        let mut dh = vec![0.0; self.weight.cols];
        self.weight.t_matvec_acc(d_out, &mut dh);
        dh
    }

    pub fn add_assign(&mut self, o: &LinearHead) {
        self.weight.add_assign(&o.weight);
        add_assign(&mut self.bias, &o.bias);
    }

    pub fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        vec![("weight", &self.weight.data[..]), ("bias", &self.bias)]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![
            ("weight", &mut self.weight.data[..]),
            ("bias", &mut self.bias),
        ]
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        vec![(self.weight.rows, self.weight.cols), (self.bias.len(), 1)]
    }
}
