//! Vehicle models.
//!
//! The nominal model is the kinematic bicycle with the pose measured at the
//! rear axle:
//!
//! ```text
//!     x' = v cos(theta)
//!     y' = v sin(theta)
//!     theta' = v tan(delta) / L
//! ```
//!
//! [`step_kinematic`] integrates it with RK4 over one sampling period and
//! [`linearize_kinematic`] returns the forward-Euler discrete linearization
//! used by the linear MPC. The [`plant`] submodule holds the mismatched
//! dynamic bicycle that plays the role of the real car.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Matrix3x2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod plant;

pub use plant::{step_plant, PlantConfig, PlantState};

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let r = angle.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Wrapped difference `a - b`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    wrap_angle(a - b)
}

/// Planar pose of the rear axle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl VehicleState {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn origin() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    pub fn to_vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.theta)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }
}

/// Speed and front-wheel steering angle.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub v: f64,
    pub delta: f64,
}

impl ControlInput {
    pub fn new(v: f64, delta: f64) -> Self {
        Self { v, delta }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn norm(&self) -> f64 {
        self.v.hypot(self.delta)
    }
}

/// Rectangular bounds on `(v, delta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputBox {
    pub v_min: f64,
    pub v_max: f64,
    pub delta_min: f64,
    pub delta_max: f64,
}

impl InputBox {
    pub fn new(v_min: f64, v_max: f64, delta_min: f64, delta_max: f64) -> Self {
        Self {
            v_min,
            v_max,
            delta_min,
            delta_max,
        }
    }

    /// The degenerate box `{(0, 0)}`.
    pub fn pinned_zero() -> Self {
        Self::new(0.0, 0.0, 0.0, 0.0)
    }

    pub fn validate(&self, name: &'static str) -> Result<()> {
        let ok = [self.v_min, self.v_max, self.delta_min, self.delta_max]
            .iter()
            .all(|b| !b.is_nan())
            && self.v_min <= self.v_max
            && self.delta_min <= self.delta_max;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(name, format!("empty box {self:?}")))
        }
    }

    pub fn clamp(&self, u: ControlInput) -> ControlInput {
        ControlInput {
            v: u.v.clamp(self.v_min, self.v_max),
            delta: u.delta.clamp(self.delta_min, self.delta_max),
        }
    }

    pub fn contains(&self, u: ControlInput) -> bool {
        (self.v_min..=self.v_max).contains(&u.v) && (self.delta_min..=self.delta_max).contains(&u.delta)
    }

    pub fn lower(&self) -> [f64; 2] {
        [self.v_min, self.delta_min]
    }

    pub fn upper(&self) -> [f64; 2] {
        [self.v_max, self.delta_max]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleParams {
    /// Wheelbase in meters.
    pub wheelbase: f64,
    /// Controller sampling period in seconds.
    pub sample_time: f64,
    pub input_box: InputBox,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            wheelbase: 0.33,
            sample_time: 0.05,
            input_box: InputBox::new(0.0, 4.0, -0.4, 0.4),
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.wheelbase > 0.0 && self.wheelbase.is_finite()) {
            return Err(Error::invalid("wheelbase", "must be positive and finite"));
        }
        if !(self.sample_time > 0.0 && self.sample_time.is_finite()) {
            return Err(Error::invalid("sample_time", "must be positive and finite"));
        }
        self.input_box.validate("input_box")
    }
}

/// One point of a reference trajectory: pose plus the feed-forward input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferencePoint {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
    pub delta: f64,
}

impl ReferencePoint {
    pub fn pose(&self) -> VehicleState {
        VehicleState::new(self.x, self.y, self.theta)
    }

    pub fn input(&self) -> ControlInput {
        ControlInput::new(self.v, self.delta)
    }
}

fn kinematic_rhs(s: &Vector3<f64>, u: ControlInput, wheelbase: f64) -> Vector3<f64> {
    Vector3::new(u.v * s[2].cos(), u.v * s[2].sin(), u.v * u.delta.tan() / wheelbase)
}

/// Advances the kinematic bicycle by one period with a single RK4 step.
pub fn step_kinematic(state: VehicleState, u: ControlInput, params: &VehicleParams) -> VehicleState {
    let h = params.sample_time;
    let l = params.wheelbase;
    let s = state.to_vector();
    let k1 = kinematic_rhs(&s, u, l);
    let k2 = kinematic_rhs(&(s + k1 * (h / 2.0)), u, l);
    let k3 = kinematic_rhs(&(s + k2 * (h / 2.0)), u, l);
    let k4 = kinematic_rhs(&(s + k3 * h), u, l);
    let next = s + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    VehicleState::new(next[0], next[1], next[2])
}

/// One forward-Euler step of the kinematic bicycle. Heading is left unwrapped
/// so the map stays smooth for differentiation.
pub fn step_euler(state: &Vector3<f64>, u: ControlInput, params: &VehicleParams) -> Vector3<f64> {
    state + kinematic_rhs(state, u, params.wheelbase) * params.sample_time
}

/// Discrete linearization of the kinematic bicycle about a reference point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearizedModel {
    pub a: Matrix3<f64>,
    pub b: Matrix3x2<f64>,
    pub reference: ReferencePoint,
}

const MIN_COS_DELTA: f64 = 1e-6;

pub fn linearize_kinematic(reference: &ReferencePoint, params: &VehicleParams) -> Result<LinearizedModel> {
    let cos_delta = reference.delta.cos();
    if cos_delta.abs() <= MIN_COS_DELTA {
        return Err(Error::DegenerateReference { cos_delta });
    }
    let t = params.sample_time;
    let l = params.wheelbase;
    let (sin_th, cos_th) = reference.theta.sin_cos();
    let v = reference.v;
    #[rustfmt::skip]
    let a = Matrix3::new(
        1.0, 0.0, -v * sin_th * t,
        0.0, 1.0,  v * cos_th * t,
        0.0, 0.0,  1.0,
    );
    #[rustfmt::skip]
    let b = Matrix3x2::new(
        cos_th * t, 0.0,
        sin_th * t, 0.0,
        reference.delta.tan() * t / l, v * t / (l * cos_delta * cos_delta),
    );
    Ok(LinearizedModel {
        a,
        b,
        reference: *reference,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn params(t: f64) -> VehicleParams {
        VehicleParams {
            sample_time: t,
            ..VehicleParams::default()
        }
    }

    #[test]
    fn wrap_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert_abs_diff_eq!(wrap_angle(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(wrap_angle(-7.0), -7.0 + TAU, epsilon = 1e-15);
    }

    #[test]
    fn straight_line() {
        let next = step_kinematic(VehicleState::origin(), ControlInput::new(1.0, 0.0), &params(0.1));
        assert_abs_diff_eq!(next.x, 0.1, epsilon = 1e-15);
        assert_eq!(next.y, 0.0);
        assert_eq!(next.theta, 0.0);
    }

    #[test]
    fn zero_speed_is_fixed_point() {
        let s = VehicleState::new(5.0, -2.0, 1.2);
        for t in [0.01, 0.1, 3.0] {
            assert_eq!(step_kinematic(s, ControlInput::new(0.0, 0.3), &params(t)), s);
        }
    }

    #[test]
    fn matches_fine_euler_oracle() {
        let p = VehicleParams {
            wheelbase: 0.33,
            sample_time: 0.05,
            ..VehicleParams::default()
        };
        let u = ControlInput::new(1.0, 0.2);
        let n = 100_000;
        let dt = p.sample_time / n as f64;
        let (mut x, mut y, mut th) = (0.0f64, 0.0f64, 0.0f64);
        for _ in 0..n {
            let (dx, dy, dth) = (u.v * th.cos(), u.v * th.sin(), u.v * u.delta.tan() / p.wheelbase);
            x += dx * dt;
            y += dy * dt;
            th += dth * dt;
        }
        let rk = step_kinematic(VehicleState::origin(), u, &p);
        assert_abs_diff_eq!(rk.theta, th, epsilon = 1e-12);
        assert_abs_diff_eq!(rk.x, x, epsilon = 1e-8);
        assert_abs_diff_eq!(rk.y, y, epsilon = 1e-8);
    }

    #[test]
    fn linearization_example() {
        let r = ReferencePoint {
            x: 0.0,
            y: 0.0,
            theta: 0.0,
            v: 1.0,
            delta: 0.0,
        };
        let m = linearize_kinematic(&r, &params(0.05)).unwrap();
        let expected_a = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.05, 0.0, 0.0, 1.0);
        assert_abs_diff_eq!(m.a, expected_a, epsilon = 1e-15);
        assert_abs_diff_eq!(m.b[(0, 0)], 0.05, epsilon = 1e-15);
        assert_eq!(m.b[(1, 0)], 0.0);
        assert_eq!(m.b[(2, 0)], 0.0);
        assert_abs_diff_eq!(m.b[(2, 1)], 0.05 / 0.33, epsilon = 1e-15);
    }

    #[test]
    fn zero_speed_decouples_heading() {
        for delta in [-0.3, 0.0, 0.25] {
            let r = ReferencePoint {
                x: 1.0,
                y: 2.0,
                theta: PI / 2.0,
                v: 0.0,
                delta,
            };
            let m = linearize_kinematic(&r, &params(0.05)).unwrap();
            assert_eq!(m.a.column(2).into_owned(), Vector3::new(0.0, 0.0, 1.0));
        }
    }

    #[test]
    fn degenerate_steering_rejected() {
        let r = ReferencePoint {
            x: 0.0,
            y: 0.0,
            theta: 0.0,
            v: 1.0,
            delta: PI / 2.0,
        };
        assert!(matches!(
            linearize_kinematic(&r, &params(0.05)),
            Err(Error::DegenerateReference { .. })
        ));
    }

    fn rotate(s: VehicleState, angle: f64, dx: f64, dy: f64) -> VehicleState {
        let (sn, cs) = angle.sin_cos();
        VehicleState::new(cs * s.x - sn * s.y + dx, sn * s.x + cs * s.y + dy, s.theta + angle)
    }

    proptest! {
        #[test]
        fn se2_equivariance(
            x in -10.0..10.0f64, y in -10.0..10.0f64, th in -3.1..3.1f64,
            v in 0.0..4.0f64, delta in -0.4..0.4f64,
            angle in -3.1..3.1f64, dx in -5.0..5.0f64, dy in -5.0..5.0f64,
        ) {
            let p = VehicleParams::default();
            let u = ControlInput::new(v, delta);
            let mut a = VehicleState::new(x, y, th);
            let mut b = rotate(a, angle, dx, dy);
            for _ in 0..20 {
                a = step_kinematic(a, u, &p);
                b = step_kinematic(b, u, &p);
                let expect = rotate(a, angle, dx, dy);
                prop_assert!((expect.x - b.x).abs() < 1e-9);
                prop_assert!((expect.y - b.y).abs() < 1e-9);
                prop_assert!(angle_diff(expect.theta, b.theta).abs() < 1e-9);
            }
        }

        #[test]
        fn outputs_finite_inside_box(
            x in -1e3..1e3f64, y in -1e3..1e3f64, th in -10.0..10.0f64,
            v in 0.0..4.0f64, delta in -0.4..0.4f64,
        ) {
            let p = VehicleParams::default();
            let s = step_kinematic(VehicleState::new(x, y, th), ControlInput::new(v, delta), &p);
            prop_assert!(s.is_finite());
            prop_assert!(s.theta > -PI && s.theta <= PI);
            let r = ReferencePoint { x, y, theta: th, v, delta };
            let m = linearize_kinematic(&r, &p).unwrap();
            prop_assert!(m.a.iter().chain(m.b.iter()).all(|e| e.is_finite()));
        }
    }
}
