//! Closed-loop simulation, on-track data collection and run metrics.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::controllers::{Controller, ControllerKind, Lmpc, MpcConfig};
use crate::dynamics::plant::{step_plant, PlantConfig, PlantState};
use crate::dynamics::{ControlInput, VehicleParams, VehicleState};
use crate::error::{Error, Result};
use crate::koopman::{DriveLog, DriveRecord};
use crate::track::{project, project_near, ReferenceTrajectory, TrackingErrors};

pub mod compare;

pub use compare::{
    make_controller, run_comparison, Cell, Comparison, Datasets, ModelPair, Report, ReportRow, SweepPoint,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Runs stop once the lateral error exceeds this, m.
    pub abort_lateral_error: f64,
    /// Runs stop after this many steps without progress along the path.
    pub stall_steps: usize,
    /// Step budget as a multiple of the reference length per lap.
    pub step_budget: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            abort_lateral_error: 2.0,
            stall_steps: 100,
            step_budget: 3.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.abort_lateral_error > 0.0) {
            return Err(Error::invalid("abort_lateral_error", "must be positive"));
        }
        if self.stall_steps == 0 {
            return Err(Error::invalid("stall_steps", "must be at least 1"));
        }
        if !(self.step_budget >= 1.0) {
            return Err(Error::invalid("step_budget", "must be at least 1"));
        }
        Ok(())
    }
}

/// Everything a run needs apart from the controller.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub track: String,
    pub reference: ReferenceTrajectory,
    pub params: VehicleParams,
    pub plant: PlantConfig,
    pub sim: SimConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub plant: PlantState,
    pub lateral_error: f64,
    pub heading_error: f64,
    pub reference_index: usize,
    /// Baseline controller command `U0`.
    pub command: ControlInput,
    /// Command sent to the plant, before actuator noise.
    pub final_input: ControlInput,
    pub residual: ControlInput,
    pub solve_ms: f64,
    /// `|delta_k - delta_{k-1}| / T` of the final command; absent on the first step.
    pub steer_rate: Option<f64>,
    pub clamped: bool,
    pub fallback: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Termination {
    Completed,
    Diverged { step: usize, lateral_error: f64 },
    Stalled { step: usize },
    StepLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub track: String,
    pub controller: Option<ControllerKind>,
    pub seed: u64,
    pub laps_requested: usize,
    pub laps_completed: usize,
    pub sample_time: f64,
    pub plant: PlantConfig,
    pub abort_lateral_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub meta: RunMeta,
    pub records: Vec<StepRecord>,
    pub termination: Termination,
}

const RUN_HEADER: [&str; 11] = [
    "t",
    "x",
    "y",
    "theta",
    "lat_err",
    "head_err",
    "v_cmd",
    "delta_cmd",
    "v_final",
    "delta_final",
    "solve_ms",
];

impl RunLog {
    pub fn diverged(&self) -> bool {
        matches!(self.termination, Termination::Diverged { .. })
    }

    pub fn completed(&self) -> bool {
        self.termination == Termination::Completed && self.meta.laps_completed >= self.meta.laps_requested
    }

    /// `DivergedRun` for a diverged log.
    pub fn divergence(&self) -> Option<Error> {
        match self.termination {
            Termination::Diverged { step, lateral_error } => Some(Error::DivergedRun {
                step,
                lateral_error,
                threshold: self.meta.abort_lateral_error,
            }),
            _ => None,
        }
    }

    /// Commanded inputs paired with the poses they were applied from.
    pub fn to_drive_log(&self) -> Result<DriveLog> {
        let records = self
            .records
            .iter()
            .map(|r| DriveRecord {
                t: r.t,
                state: r.plant.pose,
                command: r.final_input,
            })
            .collect();
        DriveLog::new(self.meta.sample_time, records)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::Config(format!("writing run log: {e}"));
        w.write_record(RUN_HEADER).map_err(err)?;
        for r in &self.records {
            let p = r.plant.pose;
            let row = [
                r.t,
                p.x,
                p.y,
                p.theta,
                r.lateral_error,
                r.heading_error,
                r.command.v,
                r.command.delta,
                r.final_input.v,
                r.final_input.delta,
                r.solve_ms,
            ];
            w.write_record(row.iter().map(|v| v.to_string())).map_err(err)?;
        }
        w.flush().map_err(|e| Error::Config(format!("writing run log: {e}")))
    }

    /// Reads the per-step columns back. Plant internals, residuals and
    /// metadata are not part of the CSV and come back as defaults.
    pub fn read_csv<R: Read>(input: R, meta: RunMeta) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(input);
        let headers = rd.headers().map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?;
        if headers.iter().map(str::trim).ne(RUN_HEADER) {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected header `{}`", RUN_HEADER.join(",")),
            });
        }
        let mut records: Vec<StepRecord> = Vec::new();
        for (i, row) in rd.records().enumerate() {
            let line = i as u64 + 2;
            let row = row.map_err(|e| Error::Parse {
                line,
                message: e.to_string(),
            })?;
            let mut v = [0.0; 11];
            for (k, field) in row.iter().enumerate().take(11) {
                v[k] = field.trim().parse().map_err(|_| Error::Parse {
                    line,
                    message: format!("column `{}`: `{field}` is not a number", RUN_HEADER[k]),
                })?;
            }
            if row.len() != 11 {
                return Err(Error::Parse {
                    line,
                    message: format!("expected 11 fields, found {}", row.len()),
                });
            }
            let command = ControlInput::new(v[6], v[7]);
            let final_input = ControlInput::new(v[8], v[9]);
            let steer_rate = records
                .last()
                .map(|p| (final_input.delta - p.final_input.delta).abs() / meta.sample_time);
            records.push(StepRecord {
                t: v[0],
                plant: PlantState::at_rest(VehicleState::new(v[1], v[2], v[3])),
                lateral_error: v[4],
                heading_error: v[5],
                reference_index: 0,
                command,
                final_input,
                residual: ControlInput::new(final_input.v - command.v, final_input.delta - command.delta),
                solve_ms: v[10],
                steer_rate,
                clamped: false,
                fallback: false,
            });
        }
        Ok(Self {
            meta,
            records,
            termination: Termination::Completed,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub lateral_error: f64,
    pub heading_error: f64,
    /// Mean front-wheel angle rate, rad/s.
    pub steer_rate: f64,
    pub solve_mean_ms: f64,
    pub solve_max_ms: f64,
    pub steps: usize,
    pub completed: bool,
}

/// Incremental mean; exact on constant sequences.
fn running_mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut m = 0.0;
    for (k, v) in values.enumerate() {
        m += (v - m) / (k + 1) as f64;
    }
    m
}

pub fn compute_metrics(log: &RunLog) -> Result<Metrics> {
    let n = log.records.len();
    if n == 0 {
        return Err(Error::EmptyLog);
    }
    let mean = |f: &dyn Fn(&StepRecord) -> f64| running_mean(log.records.iter().map(f));
    let steer_rate = running_mean(log.records.iter().filter_map(|r| r.steer_rate));
    Ok(Metrics {
        lateral_error: mean(&|r| r.lateral_error.abs()),
        heading_error: mean(&|r| r.heading_error.abs()),
        steer_rate,
        solve_mean_ms: mean(&|r| r.solve_ms),
        solve_max_ms: log.records.iter().map(|r| r.solve_ms).fold(0.0, f64::max),
        steps: n,
        completed: log.completed(),
    })
}

/// Signed progress in points from `from` to `to`.
fn index_gap(from: usize, to: usize, reference: &ReferenceTrajectory) -> isize {
    let len = reference.len();
    if reference.closed {
        let d = (to + len - from % len) % len;
        if d > len / 2 {
            d as isize - len as isize
        } else {
            d as isize
        }
    } else {
        to as isize - from as isize
    }
}

const PROJECTION_WINDOW: usize = 40;

/// Drives the plant with `controller` for `laps` laps.
///
/// A lap ends when the vehicle crosses the line through the first reference
/// point perpendicular to the path, after having covered more than half of
/// the reference since the previous crossing. Open references count as one
/// lap once the horizon reaches their end. Divergence, stalling and the step
/// budget end the run early and are reported in [`RunLog::termination`].
pub fn run_closed_loop(
    scenario: &Scenario,
    controller: &mut dyn Controller,
    laps: usize,
    seed: u64,
    horizon: usize,
) -> Result<RunLog> {
    scenario.sim.validate()?;
    scenario.plant.validate()?;
    scenario.params.validate()?;
    let reference = &scenario.reference;
    if reference.len() < 3 {
        return Err(Error::TooFewPoints { found: reference.len() });
    }
    let t_s = scenario.params.sample_time;
    let len = reference.len();
    let mut meta = RunMeta {
        track: scenario.track.clone(),
        controller: Some(controller.kind()),
        seed,
        laps_requested: laps,
        laps_completed: 0,
        sample_time: t_s,
        plant: scenario.plant,
        abort_lateral_error: scenario.sim.abort_lateral_error,
    };
    controller.reset();
    let start = reference.points[0];
    let mut plant = PlantState::rolling(start.pose(), start.v);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c0, s0) = (start.theta.cos(), start.theta.sin());
    let line = |p: &VehicleState| (p.x - start.x) * c0 + (p.y - start.y) * s0;

    let budget = (scenario.sim.step_budget * (laps.max(1) * len) as f64).ceil() as usize + horizon + 10;
    let mut records: Vec<StepRecord> = Vec::new();
    let mut termination = Termination::StepLimit;
    let mut hint: Option<usize> = None;
    let mut progress: isize = 0;
    let mut lap_progress: isize = 0;
    let (mut best_progress, mut best_step) = (0isize, 0usize);
    let mut previous_delta: Option<f64> = None;

    if laps == 0 {
        termination = Termination::Completed;
    }
    for step in 0..if laps == 0 { 0 } else { budget } {
        let pose = plant.pose;
        let errors: TrackingErrors = match hint {
            None => project(&pose, reference),
            Some(h) => project_near(&pose, reference, h, PROJECTION_WINDOW, PROJECTION_WINDOW),
        };
        if let Some(h) = hint {
            let gap = index_gap(h, errors.index, reference);
            progress += gap;
            lap_progress += gap;
        }
        hint = Some(errors.index);
        if progress > best_progress {
            best_progress = progress;
            best_step = step;
        }
        if !plant.is_finite() || errors.lateral.abs() > scenario.sim.abort_lateral_error {
            termination = Termination::Diverged {
                step,
                lateral_error: errors.lateral.abs(),
            };
            break;
        }
        if step - best_step > scenario.sim.stall_steps {
            termination = Termination::Stalled { step };
            break;
        }
        if !reference.closed && errors.index + horizon + 2 >= len {
            meta.laps_completed = 1;
            termination = Termination::Completed;
            break;
        }
        let out = match controller.step(&pose, reference) {
            Err(Error::ReferenceExhausted { .. }) if !reference.closed => {
                meta.laps_completed = 1;
                termination = Termination::Completed;
                break;
            }
            r => r?,
        };
        let noise_v: f64 = StandardNormal.sample(&mut rng);
        let noise_d: f64 = StandardNormal.sample(&mut rng);
        let applied = ControlInput::new(
            out.final_input.v + scenario.plant.speed_noise_std * noise_v,
            out.final_input.delta + scenario.plant.steer_noise_std * noise_d,
        );
        records.push(StepRecord {
            t: step as f64 * t_s,
            plant,
            lateral_error: errors.lateral,
            heading_error: errors.heading,
            reference_index: out.reference_index,
            command: out.baseline,
            final_input: out.final_input,
            residual: out.residual,
            solve_ms: out.solve_time * 1e3,
            steer_rate: previous_delta.map(|d| (out.final_input.delta - d).abs() / t_s),
            clamped: out.clamped,
            fallback: out.fallback,
        });
        previous_delta = Some(out.final_input.delta);
        let before = line(&plant.pose);
        plant = step_plant(&plant, applied, &scenario.plant, &scenario.params);
        let after = line(&plant.pose);
        if reference.closed && before < 0.0 && after >= 0.0 && 2 * lap_progress > len as isize {
            meta.laps_completed += 1;
            lap_progress = 0;
            if meta.laps_completed >= laps {
                termination = Termination::Completed;
                break;
            }
        }
    }
    Ok(RunLog {
        meta,
        records,
        termination,
    })
}

/// Runs LMPC on the scenario plant and keeps the commanded inputs and
/// realized poses.
pub fn collect_training_log(scenario: &Scenario, cfg: &MpcConfig, laps: usize, seed: u64) -> Result<DriveLog> {
    if laps == 0 {
        return Err(Error::EmptyLog);
    }
    let mut lmpc = Lmpc::new(*cfg, scenario.params)?;
    let run = run_closed_loop(scenario, &mut lmpc, laps, seed, cfg.horizon)?;
    if let Some(e) = run.divergence() {
        return Err(e);
    }
    if run.records.is_empty() {
        return Err(Error::EmptyLog);
    }
    run.to_drive_log()
}
