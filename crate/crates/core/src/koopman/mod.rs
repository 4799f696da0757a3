//! Learned lifted-linear models of the vehicle.
//!
//! Logs are cut into short windows expressed in the frame of their first
//! pose ([`preprocess`]), each transition is labelled with either the
//! commanded input or the residual between the command and the input that
//! best explains it under the nominal model, and a lifting network is trained
//! jointly with a linear operator `z' = A z + B u` ([`train`]).

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlInput, VehicleState};
use crate::error::{Error, Result};

pub mod edmd;
pub mod frame;
pub mod network;
pub mod preprocess;
pub mod train;

pub use edmd::{fit_edmd, fit_output_map, EdmdFit, OutputMap};
pub use frame::{from_local, to_local, transform_to_global, transform_to_local};
pub use network::{lift, LiftingNetwork, STATE_DIM};
pub use preprocess::{
    build_dataset, build_residual_dataset, recover_executed_input, transition_residual, DriveLog, DriveRecord,
    InputFit, InputKind, PreprocessConfig, PreprocessStats, ResidualDataset, ResidualSample,
};
pub use train::{fit_unlifted, huber_cost, train_lifting, train_lifting_from, TrainConfig};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub best_epoch: usize,
    pub epochs: usize,
    pub samples: usize,
    pub delta_huber: f64,
    pub lifted_only: bool,
    pub loss_history: Vec<f64>,
    /// Root mean square one-step error on the raw state over the training set.
    pub one_step_rmse: f64,
}

/// `z' = A z + B u`, `x = C z`, with `z = [x, psi(x)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct KoopmanModel {
    pub kind: InputKind,
    pub network: LiftingNetwork,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub metadata: TrainingMetadata,
}

const FORMAT: &str = "rkmpc-koopman";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Dims {
    state: usize,
    input: usize,
    lift: usize,
    hidden: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Layer {
    weights: Vec<Vec<f64>>,
    biases: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: String,
    version: u32,
    kind: InputKind,
    dims: Dims,
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    layers: Vec<Layer>,
    metadata: TrainingMetadata,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn chunked(flat: &[f64], cols: usize) -> Vec<Vec<f64>> {
    if cols == 0 {
        return Vec::new();
    }
    flat.chunks(cols).map(<[f64]>::to_vec).collect()
}

fn from_rows(name: &str, data: &[Vec<f64>], nrows: usize, ncols: usize) -> Result<DMatrix<f64>> {
    if data.len() != nrows || data.iter().any(|r| r.len() != ncols) {
        return Err(Error::Model(format!("matrix `{name}` must be {nrows}x{ncols}")));
    }
    let m = DMatrix::from_fn(nrows, ncols, |i, j| data[i][j]);
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Model(format!("matrix `{name}` has non-finite entries")));
    }
    Ok(m)
}

impl KoopmanModel {
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_lift(&self) -> usize {
        self.network.n_lift()
    }

    pub fn lift(&self, state: &VehicleState) -> DVector<f64> {
        lift(&self.network, state)
    }

    pub fn predict(&self, z: &DVector<f64>, u: ControlInput) -> DVector<f64> {
        &self.a * z + self.b.column(0) * u.v + self.b.column(1) * u.delta
    }

    /// Raw-state one-step prediction error, root mean square over samples.
    pub fn one_step_rmse(&self, samples: &[ResidualSample]) -> f64 {
        if samples.is_empty() {
            return 0.0;
        }
        let total: f64 = samples
            .iter()
            .map(|s| {
                let x = &self.c * self.predict(&self.lift(&s.state), s.input);
                (x[0] - s.next.x).powi(2) + (x[1] - s.next.y).powi(2) + (x[2] - s.next.theta).powi(2)
            })
            .sum();
        (total / samples.len() as f64).sqrt()
    }

    pub fn to_json(&self) -> Result<String> {
        let (w1, b1) = self.network.layer1();
        let (w2, b2) = self.network.layer2();
        let file = ModelFile {
            format: FORMAT.into(),
            version: VERSION,
            kind: self.kind,
            dims: Dims {
                state: STATE_DIM,
                input: self.b.ncols(),
                lift: self.n_lift(),
                hidden: self.network.hidden(),
            },
            a: rows(&self.a),
            b: rows(&self.b),
            c: rows(&self.c),
            layers: vec![
                Layer {
                    weights: chunked(w1, STATE_DIM),
                    biases: b1.to_vec(),
                },
                Layer {
                    weights: chunked(w2, self.network.hidden()),
                    biases: b2.to_vec(),
                },
            ],
            metadata: self.metadata.clone(),
        };
        serde_json::to_string_pretty(&file).map_err(|e| Error::Model(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: ModelFile = serde_json::from_str(text).map_err(|e| Error::Model(e.to_string()))?;
        if f.format != FORMAT {
            return Err(Error::Model(format!("unknown format `{}`", f.format)));
        }
        if f.version != VERSION {
            return Err(Error::Model(format!("unsupported version {}", f.version)));
        }
        let Dims {
            state,
            input,
            lift: n_lift,
            hidden,
        } = f.dims;
        if state != STATE_DIM || input != 2 {
            return Err(Error::Model(format!(
                "expected state 3 and input 2, found {state} and {input}"
            )));
        }
        let d = STATE_DIM + n_lift;
        let a = from_rows("a", &f.a, d, d)?;
        let b = from_rows("b", &f.b, d, input)?;
        let c = from_rows("c", &f.c, STATE_DIM, d)?;
        if f.layers.len() != 2 {
            return Err(Error::Model("expected two layers".into()));
        }
        let l1 = from_rows("layers[0].weights", &f.layers[0].weights, hidden, STATE_DIM)?;
        let l2 = from_rows("layers[1].weights", &f.layers[1].weights, n_lift, hidden)?;
        if f.layers[0].biases.len() != hidden || f.layers[1].biases.len() != n_lift {
            return Err(Error::Model("bias lengths do not match dims".into()));
        }
        let mut params = Vec::with_capacity(LiftingNetwork::param_count(hidden, n_lift));
        params.extend(l1.transpose().iter());
        params.extend(&f.layers[0].biases);
        params.extend(l2.transpose().iter());
        params.extend(&f.layers[1].biases);
        let network = LiftingNetwork::from_params(hidden, n_lift, params)
            .ok_or_else(|| Error::Model("parameter count mismatch".into()))?;
        if !network.is_finite() {
            return Err(Error::Model("network has non-finite weights".into()));
        }
        Ok(Self {
            kind: f.kind,
            network,
            a,
            b,
            c,
            metadata: f.metadata,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
