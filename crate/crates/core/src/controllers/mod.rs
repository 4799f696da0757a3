//! Receding-horizon tracking controllers.
//!
//! * [`Lmpc`] linearizes the kinematic bicycle about each point of the
//!   reference window and solves for absolute inputs in error coordinates.
//! * [`Kmpc`] predicts with a lifted linear model trained on absolute
//!   inputs, in the local frame of the current pose.
//! * [`Rkmpc`] runs [`Lmpc`] for a baseline input `U0` and adds a correction
//!   `du` from a second QP over a lifted model of the residual dynamics.

use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    angle_diff, linearize_kinematic, step_euler, wrap_angle, ControlInput, InputBox, ReferencePoint, VehicleParams,
    VehicleState,
};
use crate::error::{Error, Result};
use crate::koopman::{to_local, InputKind, KoopmanModel};
use crate::qp::{
    condense, solve_box_qp, BoxQp, HorizonProblem, QpSettings, QpSolution, RatePenalty, SoftOutputBounds, StageModel,
};
use crate::track::{project, project_near, ReferenceTrajectory};

/// Weights of the correction QP.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResidualConfig {
    pub position_weight: f64,
    pub heading_weight: f64,
    pub speed_weight: f64,
    pub steer_weight: f64,
    pub bounds: InputBox,
}

impl Default for ResidualConfig {
    fn default() -> Self {
        Self {
            position_weight: 1.0,
            heading_weight: 1.0,
            speed_weight: 2.0,
            steer_weight: 5.0,
            bounds: InputBox::new(-0.5, 0.5, -0.1, 0.1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcConfig {
    pub horizon: usize,
    pub position_weight: f64,
    /// `lambda`, on heading error.
    pub heading_weight: f64,
    /// `mu`, on `v - v_ref`.
    pub speed_weight: f64,
    /// `epsilon`, on `delta - delta_ref`.
    pub steer_weight: f64,
    /// Weight on `delta[k] - delta[k-1]`; zero disables the term.
    pub steer_rate_weight: f64,
    pub soft_bound_weight: f64,
    /// Allowed position deviation from the reference before the soft
    /// penalty engages.
    pub position_bound: f64,
    pub heading_bound: f64,
    /// Overrides the vehicle's input box when set.
    pub actuator_box: Option<InputBox>,
    pub residual: ResidualConfig,
    /// Snap the time-based reference index back to the projection when they
    /// drift further apart than this many points; zero disables.
    pub resync_threshold: usize,
    pub qp: QpSettings,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 15,
            position_weight: 1.0,
            heading_weight: 1.0,
            speed_weight: 0.1,
            steer_weight: 0.5,
            steer_rate_weight: 0.0,
            soft_bound_weight: 10.0,
            position_bound: 0.5,
            heading_bound: 0.5,
            actuator_box: None,
            residual: ResidualConfig::default(),
            resync_threshold: 10,
            qp: QpSettings::default(),
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(Error::invalid("horizon", "must be at least 1"));
        }
        let weights = [
            ("position_weight", self.position_weight),
            ("heading_weight", self.heading_weight),
            ("speed_weight", self.speed_weight),
            ("steer_weight", self.steer_weight),
            ("steer_rate_weight", self.steer_rate_weight),
            ("soft_bound_weight", self.soft_bound_weight),
            ("residual.position_weight", self.residual.position_weight),
            ("residual.heading_weight", self.residual.heading_weight),
            ("residual.speed_weight", self.residual.speed_weight),
            ("residual.steer_weight", self.residual.steer_weight),
        ];
        for (name, w) in weights {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::invalid(name, "must be finite and >= 0"));
            }
        }
        if !(self.position_bound > 0.0 && self.heading_bound > 0.0) {
            return Err(Error::invalid("position_bound", "bounds must be positive"));
        }
        if let Some(b) = &self.actuator_box {
            b.validate("actuator_box")?;
        }
        self.residual.bounds.validate("residual.bounds")
    }

    pub fn actuator_box(&self, params: &VehicleParams) -> InputBox {
        self.actuator_box.unwrap_or(params.input_box)
    }

    fn soft_bounds(&self) -> Option<SoftOutputBounds> {
        (self.soft_bound_weight > 0.0).then(|| SoftOutputBounds {
            lower: DVector::from_vec(vec![-self.position_bound, -self.position_bound, -self.heading_bound]),
            upper: DVector::from_vec(vec![self.position_bound, self.position_bound, self.heading_bound]),
            weight: self.soft_bound_weight,
            relative: true,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Lmpc,
    Kmpc,
    Rkmpc,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 3] = [ControllerKind::Lmpc, ControllerKind::Kmpc, ControllerKind::Rkmpc];

    pub fn name(&self) -> &'static str {
        match self {
            ControllerKind::Lmpc => "lmpc",
            ControllerKind::Kmpc => "kmpc",
            ControllerKind::Rkmpc => "rkmpc",
        }
    }
}

impl std::fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lmpc" => Ok(ControllerKind::Lmpc),
            "kmpc" => Ok(ControllerKind::Kmpc),
            "rkmpc" => Ok(ControllerKind::Rkmpc),
            other => Err(Error::invalid("controller", format!("unknown controller `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct QpDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    pub kkt_residual: f64,
    pub objective: f64,
    /// The objective has no curvature and no gradient: any box point is optimal.
    pub flat: bool,
}

impl QpDiagnostics {
    fn from_solution(qp: &BoxQp, sol: &QpSolution) -> Self {
        Self {
            iterations: sol.iterations,
            converged: sol.converged,
            kkt_residual: sol.kkt_residual,
            objective: sol.objective,
            flat: qp.is_flat(FLAT_TOL),
        }
    }
}

const FLAT_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerOutput {
    /// Input sent to the vehicle.
    pub final_input: ControlInput,
    /// Baseline input `U0`; equal to `final_input` for LMPC and KMPC.
    pub baseline: ControlInput,
    /// Correction `du`, zero for non-residual controllers.
    pub residual: ControlInput,
    /// Wall-clock time spent in the controller, seconds.
    pub solve_time: f64,
    /// Reference index the horizon started from.
    pub reference_index: usize,
    pub baseline_qp: QpDiagnostics,
    pub residual_qp: Option<QpDiagnostics>,
    /// The correction QP failed and `du` was set to zero.
    pub fallback: bool,
    /// `U0 + du` left the actuator box and was clamped.
    pub clamped: bool,
}

pub trait Controller {
    fn kind(&self) -> ControllerKind;

    fn step(&mut self, state: &VehicleState, reference: &ReferenceTrajectory) -> Result<ControllerOutput>;

    /// Forgets warm starts and the reference cursor.
    fn reset(&mut self);
}

/// Time-based reference index: found by projection on the first call and
/// advanced by one point per period afterwards.
#[derive(Debug, Clone, Default)]
pub struct ReferenceCursor {
    current: Option<usize>,
    threshold: usize,
}

impl ReferenceCursor {
    pub fn new(threshold: usize) -> Self {
        Self {
            current: None,
            threshold,
        }
    }

    pub fn current(&self) -> Option<usize> {
        self.current
    }

    pub fn reset(&mut self) {
        self.current = None;
    }

    pub fn advance(&mut self, state: &VehicleState, reference: &ReferenceTrajectory) -> usize {
        let next = match self.current {
            None => project(state, reference).index,
            Some(i) => {
                let i = i + 1;
                let len = reference.len();
                if self.threshold == 0 || len <= 4 * self.threshold + 2 {
                    i
                } else {
                    let hint = if reference.closed { i % len } else { i.min(len - 1) };
                    let span = 2 * self.threshold;
                    let near = project_near(state, reference, hint, span, span).index;
                    let gap = if reference.closed {
                        let d = (near + len - hint) % len;
                        if d > len / 2 {
                            d as isize - len as isize
                        } else {
                            d as isize
                        }
                    } else {
                        near as isize - hint as isize
                    };
                    if gap.unsigned_abs() > self.threshold {
                        (i as isize + gap).max(0) as usize
                    } else {
                        i
                    }
                }
            }
        };
        self.current = Some(next);
        next
    }
}

fn shift_warm_start(prev: &DVector<f64>, m: usize) -> DVector<f64> {
    let n = prev.len();
    let mut w = DVector::zeros(n);
    w.rows_mut(0, n - m).copy_from(&prev.rows(m, n - m));
    w.rows_mut(n - m, m).copy_from(&prev.rows(n - m, m));
    w
}

fn input_vec(u: ControlInput) -> DVector<f64> {
    DVector::from_vec(vec![u.v, u.delta])
}

fn solve(
    problem: &HorizonProblem,
    settings: &QpSettings,
    warm: Option<&DVector<f64>>,
) -> Result<(QpSolution, QpDiagnostics)> {
    let qp = condense(problem)?;
    let sol = solve_box_qp(&qp, settings, warm)?;
    let diag = QpDiagnostics::from_solution(&qp, &sol);
    if !sol.converged {
        log::debug!(
            "QP stopped after {} iterations, KKT residual {:.2e}",
            sol.iterations,
            sol.kkt_residual
        );
    }
    Ok((sol, diag))
}

/// Linear MPC on the error-state kinematic model.
#[derive(Debug, Clone)]
pub struct Lmpc {
    pub cfg: MpcConfig,
    pub params: VehicleParams,
    cursor: ReferenceCursor,
    warm: Option<DVector<f64>>,
    previous: Option<ControlInput>,
}

impl Lmpc {
    pub fn new(cfg: MpcConfig, params: VehicleParams) -> Result<Self> {
        cfg.validate()?;
        params.validate()?;
        Ok(Self {
            cursor: ReferenceCursor::new(cfg.resync_threshold),
            cfg,
            params,
            warm: None,
            previous: None,
        })
    }

    pub fn cursor(&self) -> &ReferenceCursor {
        &self.cursor
    }

    /// Builds the horizon problem for `state` with the window starting at `index`.
    pub fn problem(&self, state: &VehicleState, window: &[ReferencePoint]) -> Result<HorizonProblem> {
        let n = self.cfg.horizon;
        let bx = self.cfg.actuator_box(&self.params);
        let r0 = window[0];
        let initial_state = DVector::from_vec(vec![state.x - r0.x, state.y - r0.y, angle_diff(state.theta, r0.theta)]);
        let mut stages = Vec::with_capacity(n);
        let mut input_refs = Vec::with_capacity(n);
        for k in 0..n {
            let r = window[k];
            let lin = linearize_kinematic(&r, &self.params)?;
            let ur = r.input();
            let drift = step_euler(&nalgebra::Vector3::new(r.x, r.y, r.theta), ur, &self.params)
                - nalgebra::Vector3::new(window[k + 1].x, window[k + 1].y, window[k + 1].theta)
                - lin.b * nalgebra::Vector2::new(ur.v, ur.delta);
            stages.push(StageModel {
                a: DMatrix::from_column_slice(3, 3, lin.a.as_slice()),
                b: DMatrix::from_column_slice(3, 2, lin.b.as_slice()),
                c: DVector::from_column_slice(drift.as_slice()),
            });
            input_refs.push(input_vec(ur));
        }
        let previous = self.previous.unwrap_or(r0.input());
        Ok(HorizonProblem {
            initial_state,
            stages,
            output: DMatrix::identity(3, 3),
            output_targets: vec![DVector::zeros(3); n],
            input_refs,
            output_weights: DVector::from_vec(vec![
                self.cfg.position_weight,
                self.cfg.position_weight,
                self.cfg.heading_weight,
            ]),
            input_weights: DVector::from_vec(vec![self.cfg.speed_weight, self.cfg.steer_weight]),
            input_lower: DVector::from_vec(bx.lower().to_vec()),
            input_upper: DVector::from_vec(bx.upper().to_vec()),
            soft_bounds: self.cfg.soft_bounds(),
            nominal_inputs: None,
            rate: (self.cfg.steer_rate_weight > 0.0).then(|| RatePenalty {
                weights: DVector::from_vec(vec![0.0, self.cfg.steer_rate_weight]),
                previous: input_vec(previous),
            }),
        })
    }

    fn solve_at(
        &mut self,
        state: &VehicleState,
        reference: &ReferenceTrajectory,
    ) -> Result<(ControlInput, usize, QpDiagnostics)> {
        let index = self.cursor.advance(state, reference);
        let window = reference.window(index, self.cfg.horizon + 1)?;
        let problem = self.problem(state, &window)?;
        let warm = match &self.warm {
            Some(w) if w.len() == 2 * self.cfg.horizon => shift_warm_start(w, 2),
            _ => DVector::from_iterator(
                2 * self.cfg.horizon,
                problem.input_refs.iter().flat_map(|r| r.iter().copied()),
            ),
        };
        let (sol, diag) = solve(&problem, &self.cfg.qp, Some(&warm))?;
        let bx = self.cfg.actuator_box(&self.params);
        let u = bx.clamp(ControlInput::new(sol.z[0], sol.z[1]));
        self.warm = Some(sol.z);
        self.previous = Some(u);
        Ok((u, index, diag))
    }

    /// Records the input that was actually applied, for the rate penalty.
    pub fn set_previous(&mut self, u: ControlInput) {
        self.previous = Some(u);
    }
}

impl Controller for Lmpc {
    fn kind(&self) -> ControllerKind {
        ControllerKind::Lmpc
    }

    fn step(&mut self, state: &VehicleState, reference: &ReferenceTrajectory) -> Result<ControllerOutput> {
        let start = Instant::now();
        let (u, index, diag) = self.solve_at(state, reference)?;
        Ok(ControllerOutput {
            final_input: u,
            baseline: u,
            residual: ControlInput::zero(),
            solve_time: start.elapsed().as_secs_f64(),
            reference_index: index,
            baseline_qp: diag,
            residual_qp: None,
            fallback: false,
            clamped: false,
        })
    }

    fn reset(&mut self) {
        self.cursor.reset();
        self.warm = None;
        self.previous = None;
    }
}

/// Reference poses `window[1..]` in the frame of `state`, headings kept
/// continuous along the window.
pub fn local_targets(state: &VehicleState, window: &[ReferencePoint]) -> Vec<DVector<f64>> {
    let first = window[0].theta;
    let offset = wrap_angle(first - state.theta);
    window
        .iter()
        .map(|r| {
            let l = to_local(state, &VehicleState::new(r.x, r.y, r.theta));
            DVector::from_vec(vec![l.x, l.y, offset + (r.theta - first)])
        })
        .collect()
}

fn lifted_problem(
    model: &KoopmanModel,
    targets: Vec<DVector<f64>>,
    input_refs: Vec<DVector<f64>>,
    weights: (f64, f64, f64, f64),
    bx: &InputBox,
    soft: Option<SoftOutputBounds>,
) -> HorizonProblem {
    let n = targets.len();
    let stage = StageModel::linear(model.a.clone(), model.b.clone());
    let (wp, wh, wv, wd) = weights;
    HorizonProblem {
        initial_state: model.lift(&VehicleState::origin()),
        stages: vec![stage; n],
        output: model.c.clone(),
        output_targets: targets,
        input_refs,
        output_weights: DVector::from_vec(vec![wp, wp, wh]),
        input_weights: DVector::from_vec(vec![wv, wd]),
        input_lower: DVector::from_vec(bx.lower().to_vec()),
        input_upper: DVector::from_vec(bx.upper().to_vec()),
        soft_bounds: soft,
        nominal_inputs: None,
        rate: None,
    }
}

/// MPC over a lifted linear model of the full dynamics.
#[derive(Debug, Clone)]
pub struct Kmpc {
    pub cfg: MpcConfig,
    pub params: VehicleParams,
    pub model: KoopmanModel,
    cursor: ReferenceCursor,
    warm: Option<DVector<f64>>,
}

impl Kmpc {
    pub fn new(cfg: MpcConfig, params: VehicleParams, model: KoopmanModel) -> Result<Self> {
        cfg.validate()?;
        params.validate()?;
        if model.kind != InputKind::Absolute {
            log::warn!("KMPC is using a model trained on residual inputs");
        }
        Ok(Self {
            cursor: ReferenceCursor::new(cfg.resync_threshold),
            cfg,
            params,
            model,
            warm: None,
        })
    }
}

impl Controller for Kmpc {
    fn kind(&self) -> ControllerKind {
        ControllerKind::Kmpc
    }

    fn step(&mut self, state: &VehicleState, reference: &ReferenceTrajectory) -> Result<ControllerOutput> {
        let start = Instant::now();
        let n = self.cfg.horizon;
        let index = self.cursor.advance(state, reference);
        let window = reference.window(index, n + 1)?;
        let targets = local_targets(state, &window)[1..].to_vec();
        let refs: Vec<_> = window[..n].iter().map(|r| input_vec(r.input())).collect();
        let bx = self.cfg.actuator_box(&self.params);
        let c = &self.cfg;
        let problem = lifted_problem(
            &self.model,
            targets,
            refs,
            (c.position_weight, c.heading_weight, c.speed_weight, c.steer_weight),
            &bx,
            c.soft_bounds(),
        );
        let warm = match &self.warm {
            Some(w) if w.len() == 2 * n => shift_warm_start(w, 2),
            _ => DVector::from_iterator(2 * n, problem.input_refs.iter().flat_map(|r| r.iter().copied())),
        };
        let (sol, diag) = solve(&problem, &self.cfg.qp, Some(&warm))?;
        let u = bx.clamp(ControlInput::new(sol.z[0], sol.z[1]));
        self.warm = Some(sol.z);
        Ok(ControllerOutput {
            final_input: u,
            baseline: u,
            residual: ControlInput::zero(),
            solve_time: start.elapsed().as_secs_f64(),
            reference_index: index,
            baseline_qp: diag,
            residual_qp: None,
            fallback: false,
            clamped: false,
        })
    }

    fn reset(&mut self) {
        self.cursor.reset();
        self.warm = None;
    }
}

/// LMPC plus a learned residual correction.
#[derive(Debug, Clone)]
pub struct Rkmpc {
    pub baseline: Lmpc,
    pub model: KoopmanModel,
    warm: Option<DVector<f64>>,
    clamp_events: usize,
    fallbacks: usize,
}

impl Rkmpc {
    pub fn new(cfg: MpcConfig, params: VehicleParams, model: KoopmanModel) -> Result<Self> {
        if model.kind != InputKind::Residual {
            log::warn!("RKMPC is using a model trained on absolute inputs");
        }
        Ok(Self {
            baseline: Lmpc::new(cfg, params)?,
            model,
            warm: None,
            clamp_events: 0,
            fallbacks: 0,
        })
    }

    pub fn clamp_events(&self) -> usize {
        self.clamp_events
    }

    pub fn fallbacks(&self) -> usize {
        self.fallbacks
    }

    /// Correction QP for `state` against the window starting at `index`.
    pub fn residual_problem(&self, state: &VehicleState, window: &[ReferencePoint]) -> HorizonProblem {
        let cfg = &self.baseline.cfg;
        let r = &cfg.residual;
        let n = cfg.horizon;
        let targets = local_targets(state, window)[1..].to_vec();
        lifted_problem(
            &self.model,
            targets,
            vec![DVector::zeros(2); n],
            (r.position_weight, r.heading_weight, r.speed_weight, r.steer_weight),
            &r.bounds,
            cfg.soft_bounds(),
        )
    }

    fn residual(
        &mut self,
        state: &VehicleState,
        reference: &ReferenceTrajectory,
        index: usize,
    ) -> Result<(ControlInput, QpDiagnostics)> {
        let n = self.baseline.cfg.horizon;
        let window = reference.window(index, n + 1)?;
        let problem = self.residual_problem(state, &window);
        let warm = match &self.warm {
            Some(w) if w.len() == 2 * n => shift_warm_start(w, 2),
            _ => DVector::zeros(2 * n),
        };
        let (sol, diag) = solve(&problem, &self.baseline.cfg.qp, Some(&warm))?;
        let du = self
            .baseline
            .cfg
            .residual
            .bounds
            .clamp(ControlInput::new(sol.z[0], sol.z[1]));
        self.warm = Some(sol.z);
        Ok((du, diag))
    }
}

impl Controller for Rkmpc {
    fn kind(&self) -> ControllerKind {
        ControllerKind::Rkmpc
    }

    fn step(&mut self, state: &VehicleState, reference: &ReferenceTrajectory) -> Result<ControllerOutput> {
        let start = Instant::now();
        let (u0, index, base_diag) = self.baseline.solve_at(state, reference)?;
        let (du, res_diag, fallback) = match self.residual(state, reference, index) {
            Ok((du, d)) => (du, Some(d), false),
            Err(e) => {
                log::warn!("residual QP failed, using the baseline input: {e}");
                self.fallbacks += 1;
                self.warm = None;
                (ControlInput::zero(), None, true)
            }
        };
        let raw = ControlInput::new(u0.v + du.v, u0.delta + du.delta);
        let bx = self.baseline.cfg.actuator_box(&self.baseline.params);
        let final_input = bx.clamp(raw);
        let clamped = final_input != raw;
        if clamped {
            self.clamp_events += 1;
        }
        self.baseline.set_previous(final_input);
        Ok(ControllerOutput {
            final_input,
            baseline: u0,
            residual: du,
            solve_time: start.elapsed().as_secs_f64(),
            reference_index: index,
            baseline_qp: base_diag,
            residual_qp: res_diag,
            fallback,
            clamped,
        })
    }

    fn reset(&mut self) {
        self.baseline.reset();
        self.warm = None;
        self.clamp_events = 0;
        self.fallbacks = 0;
    }
}

#[cfg(test)]
mod tests;
