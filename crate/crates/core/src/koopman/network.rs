//! Two-layer fully connected lifting network with ReLU activations.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::VehicleState;

pub const STATE_DIM: usize = 3;

/// `psi(s) = relu(W2 relu(W1 s + b1) + b2)`.
///
/// All weights live in one flat parameter vector laid out as
/// `[W1 (hidden x 3, row-major), b1, W2 (n_lift x hidden, row-major), b2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftingNetwork {
    hidden: usize,
    n_lift: usize,
    params: Vec<f64>,
}

/// Hidden activations kept for backpropagation.
#[derive(Debug, Clone)]
pub struct Activations {
    input: [f64; STATE_DIM],
    hidden: Vec<f64>,
    output: Vec<f64>,
}

impl Activations {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

impl LiftingNetwork {
    pub fn param_count(hidden: usize, n_lift: usize) -> usize {
        hidden * STATE_DIM + hidden + n_lift * hidden + n_lift
    }

    pub fn zeros(hidden: usize, n_lift: usize) -> Self {
        Self {
            hidden,
            n_lift,
            params: vec![0.0; Self::param_count(hidden, n_lift)],
        }
    }

    /// He-uniform weights and small positive biases, from a fixed seed.
    pub fn random(hidden: usize, n_lift: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Self::zeros(hidden, n_lift);
        let lim1 = (6.0 / STATE_DIM as f64).sqrt();
        let lim2 = (6.0 / hidden.max(1) as f64).sqrt();
        let (w1, b1, w2, b2) = net.offsets();
        for p in &mut net.params[w1..b1] {
            *p = rng.random_range(-lim1..lim1);
        }
        for p in &mut net.params[b1..w2] {
            *p = 0.01;
        }
        for p in &mut net.params[w2..b2] {
            *p = rng.random_range(-lim2..lim2);
        }
        for p in &mut net.params[b2..] {
            *p = 0.1;
        }
        net
    }

    pub fn from_params(hidden: usize, n_lift: usize, params: Vec<f64>) -> Option<Self> {
        (params.len() == Self::param_count(hidden, n_lift)).then_some(Self { hidden, n_lift, params })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn n_lift(&self) -> usize {
        self.n_lift
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn offsets(&self) -> (usize, usize, usize, usize) {
        let w1 = 0;
        let b1 = self.hidden * STATE_DIM;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.n_lift * self.hidden;
        (w1, b1, w2, b2)
    }

    pub fn layer1(&self) -> (&[f64], &[f64]) {
        let (w1, b1, w2, _) = self.offsets();
        (&self.params[w1..b1], &self.params[b1..w2])
    }

    pub fn layer2(&self) -> (&[f64], &[f64]) {
        let (_, _, w2, b2) = self.offsets();
        (&self.params[w2..b2], &self.params[b2..])
    }

    pub fn forward(&self, state: &VehicleState) -> Activations {
        let input = [state.x, state.y, state.theta];
        let (w1, b1, w2, b2) = self.offsets();
        let p = &self.params;
        let hidden: Vec<f64> = (0..self.hidden)
            .map(|j| {
                let row = &p[w1 + j * STATE_DIM..w1 + (j + 1) * STATE_DIM];
                let a = p[b1 + j] + row[0] * input[0] + row[1] * input[1] + row[2] * input[2];
                a.max(0.0)
            })
            .collect();
        let output: Vec<f64> = (0..self.n_lift)
            .map(|k| {
                let row = &p[w2 + k * self.hidden..w2 + (k + 1) * self.hidden];
                let a = p[b2 + k] + row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>();
                a.max(0.0)
            })
            .collect();
        Activations { input, hidden, output }
    }

    /// Accumulates `d loss / d params` into `grad` given `d loss / d psi`.
    pub fn backward(&self, act: &Activations, d_output: &[f64], grad: &mut [f64]) {
        let (w1, b1, w2, b2) = self.offsets();
        let p = &self.params;
        let mut d_hidden = vec![0.0; self.hidden];
        for k in 0..self.n_lift {
            if act.output[k] <= 0.0 {
                continue;
            }
            let g = d_output[k];
            if g == 0.0 {
                continue;
            }
            grad[b2 + k] += g;
            let row = w2 + k * self.hidden;
            for j in 0..self.hidden {
                grad[row + j] += g * act.hidden[j];
                d_hidden[j] += g * p[row + j];
            }
        }
        for j in 0..self.hidden {
            if act.hidden[j] <= 0.0 {
                continue;
            }
            let g = d_hidden[j];
            if g == 0.0 {
                continue;
            }
            grad[b1 + j] += g;
            let row = w1 + j * STATE_DIM;
            for i in 0..STATE_DIM {
                grad[row + i] += g * act.input[i];
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}

/// Stacked lifted state `z = [x, y, theta, psi(x, y, theta)]`.
pub fn lift(net: &LiftingNetwork, state: &VehicleState) -> DVector<f64> {
    let act = net.forward(state);
    let mut z = DVector::zeros(STATE_DIM + net.n_lift());
    z[0] = state.x;
    z[1] = state.y;
    z[2] = state.theta;
    z.rows_mut(STATE_DIM, net.n_lift()).copy_from_slice(act.output());
    z
}
