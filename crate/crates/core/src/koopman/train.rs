//! Alternating training of the lifting network and the linear operator.

use log::{info, warn};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::edmd::{fit_edmd, fit_output_map, EdmdFit};
use super::network::{lift, Activations, LiftingNetwork, STATE_DIM};
use super::preprocess::{ResidualDataset, ResidualSample};
use super::{KoopmanModel, TrainingMetadata};
use crate::error::{Error, Result};

pub const INPUT_DIM: usize = 2;

/// Pseudo-Huber wrapper `d^2 (sqrt(1 + (l/d)^2) - 1)`.
pub fn huber_cost(l_a: f64, delta: f64) -> f64 {
    let r = l_a / delta;
    delta * delta * ((1.0 + r * r).sqrt() - 1.0)
}

fn huber_slope(l_a: f64, delta: f64) -> f64 {
    let r = l_a / delta;
    l_a / (1.0 + r * r).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub delta_huber: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Refit A and B every this many epochs.
    pub refit_every: usize,
    pub n_lift: usize,
    pub hidden: usize,
    pub seed: u64,
    /// Restrict the loss to the lifted coordinates.
    pub lifted_only: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            delta_huber: 1.0,
            epochs: 200,
            batch_size: 256,
            learning_rate: 1e-3,
            refit_every: 1,
            n_lift: 16,
            hidden: 64,
            seed: 0,
            lifted_only: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta_huber > 0.0 && self.delta_huber.is_finite()) {
            return Err(Error::invalid("delta_huber", "must be positive"));
        }
        if self.n_lift < 1 {
            return Err(Error::invalid("n_lift", "must be at least 1"));
        }
        if self.hidden < 1 {
            return Err(Error::invalid("hidden", "must be at least 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::invalid("batch_size", "must be at least 1"));
        }
        if self.refit_every < 1 {
            return Err(Error::invalid("refit_every", "must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate", "must be positive"));
        }
        Ok(())
    }
}

pub const MIN_TRAINING_SAMPLES: usize = 100;

/// Stacks lifted current states, lifted next states, inputs and raw states
/// column-wise.
pub fn lifted_matrices(net: &LiftingNetwork, samples: &[ResidualSample]) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let d = STATE_DIM + net.n_lift();
    let k = samples.len();
    let mut z = DMatrix::zeros(d, k);
    let mut zn = DMatrix::zeros(d, k);
    let mut u = DMatrix::zeros(INPUT_DIM, k);
    for (j, s) in samples.iter().enumerate() {
        z.set_column(j, &lift(net, &s.state));
        zn.set_column(j, &lift(net, &s.next));
        u[(0, j)] = s.input.v;
        u[(1, j)] = s.input.delta;
    }
    (z, zn, u)
}

pub fn refit_operator(net: &LiftingNetwork, samples: &[ResidualSample]) -> Result<EdmdFit> {
    let (z, zn, u) = lifted_matrices(net, samples);
    fit_edmd(&z, &zn, &u)
}

/// Loss over a set of samples, optionally accumulating its gradient with
/// respect to the network parameters.
pub fn loss_and_gradient(
    net: &LiftingNetwork,
    op: &EdmdFit,
    samples: &[ResidualSample],
    delta: f64,
    lifted_only: bool,
    grad: Option<&mut [f64]>,
) -> (f64, f64) {
    let d = STATE_DIM + net.n_lift();
    let first = if lifted_only { STATE_DIM } else { 0 };
    let rows = d - first;
    let count = (samples.len() * rows) as f64;
    let mut total = 0.0;
    let keep = grad.is_some();
    let mut cache: Vec<(Activations, Activations, DVector<f64>)> = Vec::new();
    for s in samples {
        let at = net.forward(&s.state);
        let an = net.forward(&s.next);
        let mut e = DVector::zeros(d);
        let zt = stack(&s.state, at.output());
        e[0] = s.next.x;
        e[1] = s.next.y;
        e[2] = s.next.theta;
        e.rows_mut(STATE_DIM, net.n_lift()).copy_from_slice(an.output());
        e -= &op.a * &zt;
        for i in 0..d {
            e[i] -= op.b[(i, 0)] * s.input.v + op.b[(i, 1)] * s.input.delta;
        }
        total += e.rows(first, rows).iter().map(|v| v.abs()).sum::<f64>();
        if keep {
            cache.push((at, an, e));
        }
    }
    let l_a = total / count;
    let loss = huber_cost(l_a, delta);
    if let Some(grad) = grad {
        let scale = huber_slope(l_a, delta) / count;
        let a_lift = op.a.columns(STATE_DIM, net.n_lift());
        let mut sign = DVector::zeros(d);
        for (at, an, e) in &cache {
            for i in 0..d {
                sign[i] = if i < first { 0.0 } else { scale * signum(e[i]) };
            }
            let d_next: Vec<f64> = sign.rows(STATE_DIM, net.n_lift()).iter().copied().collect();
            net.backward(an, &d_next, grad);
            let d_cur: Vec<f64> = (a_lift.transpose() * &sign).iter().map(|v| -v).collect();
            net.backward(at, &d_cur, grad);
        }
    }
    (loss, l_a)
}

fn signum(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn stack(s: &crate::dynamics::VehicleState, psi: &[f64]) -> DVector<f64> {
    let mut z = DVector::zeros(STATE_DIM + psi.len());
    z[0] = s.x;
    z[1] = s.y;
    z[2] = s.theta;
    z.rows_mut(STATE_DIM, psi.len()).copy_from_slice(psi);
    z
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Trains from a seeded random network.
pub fn train_lifting(dataset: &ResidualDataset, cfg: &TrainConfig) -> Result<KoopmanModel> {
    cfg.validate()?;
    let net = LiftingNetwork::random(cfg.hidden, cfg.n_lift, cfg.seed);
    train_lifting_from(net, dataset, cfg)
}

/// Alternates a least-squares refit of (A, B) with mini-batch Adam on the
/// network weights and returns the best checkpoint seen.
pub fn train_lifting_from(
    mut net: LiftingNetwork,
    dataset: &ResidualDataset,
    cfg: &TrainConfig,
) -> Result<KoopmanModel> {
    cfg.validate()?;
    let samples = &dataset.samples;
    if samples.len() < MIN_TRAINING_SAMPLES {
        return Err(Error::InsufficientData {
            needed: MIN_TRAINING_SAMPLES,
            found: samples.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x005e_ed0f_ba7c);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut adam = Adam::new(net.params().len(), cfg.learning_rate);
    let mut grad = vec![0.0; net.params().len()];
    let mut batch = Vec::with_capacity(cfg.batch_size);

    let mut op = refit_operator(&net, samples)?;
    let (initial_loss, _) = loss_and_gradient(&net, &op, samples, cfg.delta_huber, cfg.lifted_only, None);
    if !initial_loss.is_finite() {
        return Err(Error::Diverged {
            epoch: 0,
            checkpoint: None,
        });
    }
    let mut best = (net.clone(), op.clone(), initial_loss, 0usize);
    let mut history = vec![initial_loss];

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| samples[i]));
            grad.iter_mut().for_each(|g| *g = 0.0);
            loss_and_gradient(&net, &op, &batch, cfg.delta_huber, cfg.lifted_only, Some(&mut grad));
            adam.step(net.params_mut(), &grad);
        }
        let (mut loss, _) = loss_and_gradient(&net, &op, samples, cfg.delta_huber, cfg.lifted_only, None);
        if loss.is_finite() && ((epoch + 1) % cfg.refit_every == 0 || epoch + 1 == cfg.epochs) {
            op = refit_operator(&net, samples)?;
            loss = loss_and_gradient(&net, &op, samples, cfg.delta_huber, cfg.lifted_only, None).0;
        }
        if !loss.is_finite() || !net.is_finite() {
            warn!(
                "training diverged at epoch {}; returning epoch {} checkpoint",
                epoch + 1,
                best.3
            );
            let (net, op, final_loss, best_epoch) = best;
            let checkpoint = assemble(
                net,
                op,
                dataset,
                TrainingMetadata {
                    initial_loss,
                    final_loss,
                    best_epoch,
                    epochs: epoch + 1,
                    samples: samples.len(),
                    delta_huber: cfg.delta_huber,
                    lifted_only: cfg.lifted_only,
                    loss_history: history,
                    one_step_rmse: 0.0,
                },
            )
            .ok()
            .map(Box::new);
            return Err(Error::Diverged {
                epoch: epoch + 1,
                checkpoint,
            });
        }
        history.push(loss);
        if loss < best.2 {
            best = (net.clone(), op.clone(), loss, epoch + 1);
        }
        if (epoch + 1) % 20 == 0 {
            info!("epoch {:>4}: loss {loss:.6e}", epoch + 1);
        }
    }

    let (net, op, final_loss, best_epoch) = best;
    assemble(
        net,
        op,
        dataset,
        TrainingMetadata {
            initial_loss,
            final_loss,
            best_epoch,
            epochs: cfg.epochs,
            samples: samples.len(),
            delta_huber: cfg.delta_huber,
            lifted_only: cfg.lifted_only,
            loss_history: history,
            one_step_rmse: 0.0,
        },
    )
}

/// Linear model on the raw state only, with no lifting.
pub fn fit_unlifted(dataset: &ResidualDataset) -> Result<KoopmanModel> {
    let net = LiftingNetwork::zeros(0, 0);
    let op = refit_operator(&net, &dataset.samples)?;
    assemble(
        net,
        op,
        dataset,
        TrainingMetadata {
            samples: dataset.len(),
            ..Default::default()
        },
    )
}

fn assemble(
    network: LiftingNetwork,
    op: EdmdFit,
    dataset: &ResidualDataset,
    mut metadata: TrainingMetadata,
) -> Result<KoopmanModel> {
    let (z, _, _) = lifted_matrices(&network, &dataset.samples);
    let states = z.rows(0, STATE_DIM).into_owned();
    let map = fit_output_map(&states, &z)?;
    if !map.exact {
        return Err(Error::Model(format!(
            "output map residual {:.3e} is not zero",
            map.residual
        )));
    }
    let mut model = KoopmanModel {
        kind: dataset.kind,
        network,
        a: op.a,
        b: op.b,
        c: map.c,
        metadata: TrainingMetadata::default(),
    };
    metadata.one_step_rmse = model.one_step_rmse(&dataset.samples);
    model.metadata = metadata;
    Ok(model)
}
