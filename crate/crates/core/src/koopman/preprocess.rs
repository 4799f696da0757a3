//! Turning a drive log into one-step training samples expressed in local
//! frames.

use std::io::{Read, Write};
use std::path::Path;

use log::{debug, warn};
use nalgebra::{Matrix2, Matrix3x2, Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::frame::to_local;
use crate::dynamics::{step_kinematic, wrap_angle, ControlInput, VehicleParams, VehicleState};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveRecord {
    pub t: f64,
    pub state: VehicleState,
    pub command: ControlInput,
}

/// Time-ordered poses with the command applied over the following period.
#[derive(Debug, Clone, PartialEq)]
pub struct DriveLog {
    sample_time: f64,
    records: Vec<DriveRecord>,
}

const PERIOD_TOLERANCE: f64 = 0.01;

impl DriveLog {
    pub fn new(sample_time: f64, records: Vec<DriveRecord>) -> Result<Self> {
        if !(sample_time > 0.0 && sample_time.is_finite()) {
            return Err(Error::invalid("sample_time", "must be positive and finite"));
        }
        for (i, r) in records.iter().enumerate() {
            let finite =
                r.t.is_finite() && r.state.is_finite() && r.command.v.is_finite() && r.command.delta.is_finite();
            if !finite {
                return Err(Error::invalid("log", format!("record {i} is not finite")));
            }
        }
        for (i, w) in records.windows(2).enumerate() {
            let dt = w[1].t - w[0].t;
            if (dt - sample_time).abs() > PERIOD_TOLERANCE * sample_time {
                return Err(Error::invalid(
                    "log",
                    format!("records {i}..{} are {dt} s apart, expected {sample_time} s", i + 1),
                ));
            }
        }
        Ok(Self { sample_time, records })
    }

    pub fn sample_time(&self) -> f64 {
        self.sample_time
    }

    pub fn records(&self) -> &[DriveRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Config(format!("writing drive log: {e}"));
        w.write_record(["t", "x", "y", "theta", "v_cmd", "delta_cmd"])
            .map_err(io)?;
        for r in &self.records {
            w.write_record(
                [r.t, r.state.x, r.state.y, r.state.theta, r.command.v, r.command.delta]
                    .iter()
                    .map(|v| v.to_string()),
            )
            .map_err(io)?;
        }
        w.flush()
            .map_err(|e| Error::Config(format!("writing drive log: {e}")))?;
        Ok(())
    }

    /// Reads a log; the period is taken from the first two timestamps.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
        let headers = reader
            .headers()
            .map_err(|e| Error::Parse {
                line: 1,
                message: e.to_string(),
            })?
            .clone();
        let expected = ["t", "x", "y", "theta", "v_cmd", "delta_cmd"];
        if headers.iter().map(str::trim).ne(expected) {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected header `{}`", expected.join(",")),
            });
        }
        let mut records = Vec::new();
        for row in reader.records() {
            let row = row.map_err(|e| Error::Parse {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
            let line = row.position().map_or(0, |p| p.line());
            let vals: Vec<f64> = row
                .iter()
                .map(|f| {
                    f.trim().parse::<f64>().map_err(|e| Error::Parse {
                        line,
                        message: format!("`{f}`: {e}"),
                    })
                })
                .collect::<Result<_>>()?;
            records.push(DriveRecord {
                t: vals[0],
                state: VehicleState {
                    x: vals[1],
                    y: vals[2],
                    theta: vals[3],
                },
                command: ControlInput::new(vals[4], vals[5]),
            });
        }
        if records.len() < 2 {
            return Err(Error::EmptyLog);
        }
        let dt = records[1].t - records[0].t;
        Self::new(dt, records)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(file))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Fraction of log records used as frame origins.
    pub conversion_ratio: f64,
    /// Records per window including the origin.
    pub window: usize,
    pub seed: u64,
    /// Largest accepted residual of the input inversion fit.
    pub inversion_threshold: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            conversion_ratio: 0.3,
            window: 18,
            seed: 0,
            inversion_threshold: 0.05,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.conversion_ratio > 0.0 && self.conversion_ratio <= 1.0) {
            return Err(Error::invalid("conversion_ratio", "must lie in (0, 1]"));
        }
        if self.window < 2 {
            return Err(Error::invalid("window", "must be at least 2"));
        }
        if !(self.inversion_threshold > 0.0) {
            return Err(Error::invalid("inversion_threshold", "must be positive"));
        }
        Ok(())
    }

    /// Warns when the window is not a little longer than the MPC horizon.
    pub fn check_against_horizon(&self, horizon: usize) -> bool {
        let ok = self.window > horizon && self.window <= 2 * horizon + 1;
        if !ok {
            warn!(
                "preprocessing window {} is not slightly longer than the MPC horizon {}",
                self.window, horizon
            );
        }
        ok
    }
}

/// Which input a dataset pairs with each transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputKind {
    /// `du = U_r - U_p`: the command that produced the transition minus the
    /// input the nominal model needs to explain it. Adding `du` to a nominal
    /// command therefore compensates the plant's deviation.
    Residual,
    /// The commanded input itself.
    Absolute,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualSample {
    pub state: VehicleState,
    pub next: VehicleState,
    pub input: ControlInput,
}

impl ResidualSample {
    pub fn is_finite(&self) -> bool {
        self.state.is_finite() && self.next.is_finite() && self.input.v.is_finite() && self.input.delta.is_finite()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessStats {
    pub records: usize,
    pub origins: usize,
    pub window_skips: usize,
    pub inversion_failures: usize,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualDataset {
    pub kind: InputKind,
    pub samples: Vec<ResidualSample>,
    pub stats: PreprocessStats,
}

/// Result of inverting the nominal model on one transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputFit {
    pub input: ControlInput,
    pub residual: f64,
}

fn residual_vector(state: VehicleState, next: &VehicleState, u: ControlInput, params: &VehicleParams) -> Vector3<f64> {
    let p = step_kinematic(state, u, params);
    Vector3::new(p.x - next.x, p.y - next.y, wrap_angle(p.theta - next.theta))
}

/// Distance between the nominal prediction under `u` and the observed next
/// state.
pub fn transition_residual(state: &VehicleState, next: &VehicleState, u: ControlInput, params: &VehicleParams) -> f64 {
    residual_vector(*state, next, u, params).norm()
}

/// Finds the input in the actuator box that best explains a transition
/// under the nominal kinematic model.
pub fn recover_executed_input(
    state: &VehicleState,
    next: &VehicleState,
    params: &VehicleParams,
    threshold: f64,
) -> Result<InputFit> {
    let bx = &params.input_box;
    let t = params.sample_time;
    let l = params.wheelbase;
    let dx = next.x - state.x;
    let dy = next.y - state.y;
    let dtheta = wrap_angle(next.theta - state.theta);
    let chord = dx.hypot(dy);
    if chord < 1e-12 && dtheta.abs() < 1e-12 {
        let u = bx.clamp(ControlInput::zero());
        let residual = transition_residual(state, next, u, params);
        return finish(u, residual, threshold);
    }

    let mid = state.theta + 0.5 * dtheta;
    let forward = dx * mid.cos() + dy * mid.sin();
    let half = 0.5 * dtheta;
    let arc = if half.abs() > 1e-9 {
        chord * half / half.sin()
    } else {
        chord
    };
    let v0 = arc.copysign(forward) / t;
    let d0 = if v0.abs() * t > 1e-12 {
        (l * dtheta / (v0 * t)).atan()
    } else {
        0.0
    };
    let mut u = bx.clamp(ControlInput::new(v0, d0));
    let mut r = residual_vector(*state, next, u, params);

    for _ in 0..10 {
        let mut jac = Matrix3x2::zeros();
        let hv = 1e-7 * (1.0 + u.v.abs());
        let hd = 1e-7;
        let rv = residual_vector(*state, next, ControlInput::new(u.v + hv, u.delta), params)
            - residual_vector(*state, next, ControlInput::new(u.v - hv, u.delta), params);
        let rd = residual_vector(*state, next, ControlInput::new(u.v, u.delta + hd), params)
            - residual_vector(*state, next, ControlInput::new(u.v, u.delta - hd), params);
        jac.set_column(0, &(rv / (2.0 * hv)));
        jac.set_column(1, &(rd / (2.0 * hd)));
        let jtj = jac.transpose() * jac + Matrix2::identity() * 1e-12;
        let g = jac.transpose() * r;
        let Some(step) = jtj.try_inverse().map(|inv| -(inv * g)) else {
            break;
        };
        let mut improved = false;
        let mut scale = 1.0;
        for _ in 0..20 {
            let cand = bx.clamp(ControlInput::new(u.v + scale * step[0], u.delta + scale * step[1]));
            let rc = residual_vector(*state, next, cand, params);
            if rc.norm_squared() < r.norm_squared() {
                u = cand;
                r = rc;
                improved = true;
                break;
            }
            scale *= 0.5;
        }
        if !improved || Vector2::new(step[0], step[1]).norm() * scale < 1e-13 {
            break;
        }
    }
    if u.v.abs() < 1e-9 {
        u = bx.clamp(ControlInput::new(u.v, 0.0));
        r = residual_vector(*state, next, u, params);
    }
    finish(u, r.norm(), threshold)
}

fn finish(input: ControlInput, residual: f64, threshold: f64) -> Result<InputFit> {
    if residual > threshold || !residual.is_finite() {
        Err(Error::InversionFailure { residual, threshold })
    } else {
        Ok(InputFit { input, residual })
    }
}

/// Seeded uniform choice of origin indices without replacement, ascending.
pub fn select_origins(records: usize, ratio: f64, seed: u64) -> Vec<usize> {
    let count = ((ratio * records as f64).floor() as usize).min(records);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = rand::seq::index::sample(&mut rng, records, count).into_vec();
    chosen.sort_unstable();
    chosen
}

/// Builds local-frame training samples from a drive log.
///
/// Each selected origin contributes the `window - 1` transitions that follow
/// it, all expressed in the origin's frame. Origins whose window runs past
/// the end of the log are skipped.
pub fn build_dataset(
    log: &DriveLog,
    params: &VehicleParams,
    pp: &PreprocessConfig,
    kind: InputKind,
) -> Result<ResidualDataset> {
    pp.validate()?;
    let n = log.len();
    if n < pp.window + 1 {
        return Err(Error::InsufficientData {
            needed: pp.window + 1,
            found: n,
        });
    }
    let origins = select_origins(n, pp.conversion_ratio, pp.seed);
    let recs = log.records();
    let mut stats = PreprocessStats {
        records: n,
        origins: origins.len(),
        ..Default::default()
    };
    let mut samples = Vec::with_capacity(origins.len() * (pp.window - 1));
    for &o in &origins {
        if o + pp.window > n {
            stats.window_skips += 1;
            continue;
        }
        let origin = recs[o].state;
        let local: Vec<VehicleState> = recs[o..o + pp.window]
            .iter()
            .map(|r| to_local(&origin, &r.state))
            .collect();
        for j in 0..pp.window - 1 {
            let command = recs[o + j].command;
            let input = match kind {
                InputKind::Absolute => command,
                InputKind::Residual => {
                    match recover_executed_input(&local[j], &local[j + 1], params, pp.inversion_threshold) {
                        Ok(fit) => ControlInput::new(command.v - fit.input.v, command.delta - fit.input.delta),
                        Err(e) => {
                            debug!("origin {o}, step {j}: {e}");
                            stats.inversion_failures += 1;
                            continue;
                        }
                    }
                }
            };
            samples.push(ResidualSample {
                state: local[j],
                next: local[j + 1],
                input,
            });
        }
    }
    if stats.window_skips > 0 {
        warn!(
            "{} of {} origins skipped: window of {} runs past the end of the log",
            stats.window_skips, stats.origins, pp.window
        );
    }
    if stats.inversion_failures > 0 {
        warn!(
            "{} transitions dropped: input inversion failed",
            stats.inversion_failures
        );
    }
    stats.samples = samples.len();
    Ok(ResidualDataset { kind, samples, stats })
}

pub fn build_residual_dataset(
    log: &DriveLog,
    params: &VehicleParams,
    pp: &PreprocessConfig,
) -> Result<ResidualDataset> {
    build_dataset(log, params, pp, InputKind::Residual)
}

const RESIDUAL_HEADER: [&str; 8] = ["x", "y", "theta", "x_next", "y_next", "theta_next", "dv", "ddelta"];
const ABSOLUTE_HEADER: [&str; 8] = ["x", "y", "theta", "x_next", "y_next", "theta_next", "v", "delta"];

impl ResidualDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// The first `count` samples: the shortest stretch of driving that yields them.
    pub fn prefix(&self, count: usize) -> Self {
        let samples = self.samples[..count.min(self.samples.len())].to_vec();
        Self {
            kind: self.kind,
            stats: PreprocessStats {
                samples: samples.len(),
                ..self.stats
            },
            samples,
        }
    }

    /// Seeded random subset of `count` samples, original order kept.
    pub fn subsample(&self, count: usize, seed: u64) -> Self {
        let count = count.min(self.samples.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = rand::seq::index::sample(&mut rng, self.samples.len(), count).into_vec();
        idx.sort_unstable();
        let samples: Vec<_> = idx.iter().map(|&i| self.samples[i]).collect();
        Self {
            kind: self.kind,
            stats: PreprocessStats {
                samples: samples.len(),
                ..self.stats
            },
            samples,
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::Config(format!("writing dataset: {e}"));
        let header = match self.kind {
            InputKind::Residual => RESIDUAL_HEADER,
            InputKind::Absolute => ABSOLUTE_HEADER,
        };
        w.write_record(header).map_err(err)?;
        for s in &self.samples {
            let vals = [
                s.state.x,
                s.state.y,
                s.state.theta,
                s.next.x,
                s.next.y,
                s.next.theta,
                s.input.v,
                s.input.delta,
            ];
            w.write_record(vals.iter().map(|v| v.to_string())).map_err(err)?;
        }
        w.flush().map_err(|e| Error::Config(format!("writing dataset: {e}")))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
        let headers = reader
            .headers()
            .map_err(|e| Error::Parse {
                line: 1,
                message: e.to_string(),
            })?
            .clone();
        let names: Vec<&str> = headers.iter().map(str::trim).collect();
        let kind = if names == RESIDUAL_HEADER {
            InputKind::Residual
        } else if names == ABSOLUTE_HEADER {
            InputKind::Absolute
        } else {
            return Err(Error::Parse {
                line: 1,
                message: format!("unrecognized dataset header `{}`", names.join(",")),
            });
        };
        let mut samples = Vec::new();
        for row in reader.records() {
            let row = row.map_err(|e| Error::Parse {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
            let line = row.position().map_or(0, |p| p.line());
            let v: Vec<f64> = row
                .iter()
                .map(|f| {
                    f.trim().parse::<f64>().map_err(|e| Error::Parse {
                        line,
                        message: format!("`{f}`: {e}"),
                    })
                })
                .collect::<Result<_>>()?;
            let sample = ResidualSample {
                state: VehicleState {
                    x: v[0],
                    y: v[1],
                    theta: v[2],
                },
                next: VehicleState {
                    x: v[3],
                    y: v[4],
                    theta: v[5],
                },
                input: ControlInput::new(v[6], v[7]),
            };
            if !sample.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: "non-finite value".into(),
                });
            }
            samples.push(sample);
        }
        Ok(Self {
            kind,
            stats: PreprocessStats {
                samples: samples.len(),
                ..Default::default()
            },
            samples,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(file))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> VehicleParams {
        VehicleParams::default()
    }

    fn synthetic_log(n: usize) -> DriveLog {
        let p = params();
        let mut s = VehicleState::origin();
        let mut recs = Vec::with_capacity(n);
        for k in 0..n {
            let u = ControlInput::new(1.5 + 0.3 * (k as f64 * 0.05).sin(), 0.15 * (k as f64 * 0.02).cos());
            recs.push(DriveRecord {
                t: k as f64 * p.sample_time,
                state: s,
                command: u,
            });
            s = step_kinematic(s, u, &p);
        }
        DriveLog::new(p.sample_time, recs).unwrap()
    }

    #[test]
    fn exact_transition_is_inverted() {
        let p = params();
        let s = VehicleState::new(0.2, -0.1, 0.3);
        let next = step_kinematic(s, ControlInput::new(1.0, 0.1), &p);
        let fit = recover_executed_input(&s, &next, &p, 1e-3).unwrap();
        assert!((fit.input.v - 1.0).abs() < 1e-6);
        assert!((fit.input.delta - 0.1).abs() < 1e-6);
    }

    #[test]
    fn standstill_inverts_to_zero() {
        let p = params();
        let s = VehicleState::new(1.0, 1.0, 0.4);
        let fit = recover_executed_input(&s, &s, &p, 1e-3).unwrap();
        assert_eq!(fit.input, ControlInput::zero());
        assert_eq!(fit.residual, 0.0);
    }

    #[test]
    fn inversion_matches_grid_search() {
        let p = params();
        let s = VehicleState::origin();
        let mut next = step_kinematic(s, ControlInput::new(2.0, 0.2), &p);
        next.y += 0.004;
        next.theta -= 0.01;
        let fit = recover_executed_input(&s, &next, &p, 0.05).unwrap();
        let mut best = (f64::INFINITY, 0.0, 0.0);
        let mut v = 0.0;
        while v <= 4.0 {
            let mut d = -0.4;
            while d <= 0.4 {
                let r = transition_residual(&s, &next, ControlInput::new(v, d), &p);
                if r < best.0 {
                    best = (r, v, d);
                }
                d += 5e-4;
            }
            v += 2e-3;
        }
        assert!((fit.input.v - best.1).abs() < 1e-3, "{fit:?} vs {best:?}");
        assert!((fit.input.delta - best.2).abs() < 1e-3, "{fit:?} vs {best:?}");
        assert!(fit.residual <= best.0 + 1e-12);
    }

    #[test]
    fn unreachable_transition_fails() {
        let p = params();
        let s = VehicleState::origin();
        let next = VehicleState::new(0.0, 1.0, 0.0);
        assert!(matches!(
            recover_executed_input(&s, &next, &p, 0.01),
            Err(Error::InversionFailure { .. })
        ));
    }

    #[test]
    fn nominal_log_gives_zero_residuals() {
        let log = synthetic_log(300);
        let pp = PreprocessConfig {
            conversion_ratio: 0.2,
            window: 10,
            ..Default::default()
        };
        let ds = build_residual_dataset(&log, &params(), &pp).unwrap();
        assert!(!ds.is_empty());
        for s in &ds.samples {
            assert!(s.input.v.abs() < 1e-6 && s.input.delta.abs() < 1e-6, "{s:?}");
        }
    }

    #[test]
    fn sample_count_arithmetic() {
        let log = synthetic_log(1527);
        let pp = PreprocessConfig {
            conversion_ratio: 0.3,
            window: 51,
            ..Default::default()
        };
        let ds = build_residual_dataset(&log, &params(), &pp).unwrap();
        assert_eq!(ds.stats.origins, 458);
        assert_eq!(ds.stats.inversion_failures, 0);
        assert_eq!(ds.len(), (458 - ds.stats.window_skips) * 50);
    }

    #[test]
    fn windows_start_at_local_origin() {
        let log = synthetic_log(200);
        let pp = PreprocessConfig {
            conversion_ratio: 0.1,
            window: 5,
            seed: 9,
            ..Default::default()
        };
        let ds = build_dataset(&log, &params(), &pp, InputKind::Absolute).unwrap();
        for chunk in ds.samples.chunks(4) {
            let o = chunk[0].state;
            assert!(o.x.abs() < 1e-12 && o.y.abs() < 1e-12 && o.theta.abs() < 1e-12);
            for w in chunk.windows(2) {
                assert_eq!(w[0].next, w[1].state);
            }
        }
    }

    #[test]
    fn short_log_rejected() {
        let log = synthetic_log(10);
        let pp = PreprocessConfig {
            window: 10,
            ..Default::default()
        };
        assert!(matches!(
            build_residual_dataset(&log, &params(), &pp),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn log_csv_round_trip() {
        let log = synthetic_log(50);
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let back = DriveLog::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.records(), log.records());
    }

    #[test]
    fn irregular_period_rejected() {
        let mut recs = synthetic_log(5).records().to_vec();
        recs[3].t += 0.01;
        assert!(DriveLog::new(0.05, recs).is_err());
    }

    #[test]
    fn dataset_csv_round_trip() {
        let log = synthetic_log(120);
        let pp = PreprocessConfig {
            window: 6,
            ..Default::default()
        };
        for kind in [InputKind::Residual, InputKind::Absolute] {
            let ds = build_dataset(&log, &params(), &pp, kind).unwrap();
            let mut buf = Vec::new();
            ds.write_csv(&mut buf).unwrap();
            let back = ResidualDataset::read_csv(buf.as_slice()).unwrap();
            assert_eq!(back.kind, kind);
            assert_eq!(back.samples, ds.samples);
        }
    }

    #[test]
    fn origins_are_seeded_and_distinct() {
        let a = select_origins(1000, 0.3, 4);
        let b = select_origins(1000, 0.3, 4);
        assert_eq!(a, b);
        assert_eq!(a.len(), 300);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_ne!(a, select_origins(1000, 0.3, 5));
    }
}
