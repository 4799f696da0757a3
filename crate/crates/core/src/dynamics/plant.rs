//! Dynamic bicycle with linear tires and first-order actuator lags.
//!
//! The pose is reported at the rear axle so that the rigid-tire limit
//! coincides with [`step_kinematic`](super::step_kinematic). Slip angles are
//! evaluated at the center of gravity, which sits `rear_to_cg` meters ahead
//! of the rear axle. Below `blend_speed_high` the tire forces are faded out
//! and the lateral states relax towards their kinematic values, so the
//! `1/v` singularity of the slip model is never evaluated.

use serde::{Deserialize, Serialize};

use super::{wrap_angle, ControlInput, VehicleParams, VehicleState};
use crate::error::{Error, Result};

/// Relaxation time of the lateral states onto the kinematic manifold at low speed.
const KINEMATIC_RELAX_TAU: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantConfig {
    /// Vehicle mass, kg.
    pub mass: f64,
    /// Yaw moment of inertia about the CG, kg m^2.
    pub yaw_inertia: f64,
    /// Front axle to rear axle, m.
    pub wheelbase: f64,
    /// Rear axle to CG, m.
    pub rear_to_cg: f64,
    /// Front axle cornering stiffness, N/rad. `inf` means no slip.
    pub cornering_front: f64,
    /// Rear axle cornering stiffness, N/rad. `inf` means no slip.
    pub cornering_rear: f64,
    /// Steering actuator time constant, s. Zero means instantaneous.
    pub steer_tau: f64,
    /// Drivetrain time constant, s. Zero means instantaneous.
    pub speed_tau: f64,
    /// Multiplicative gain between commanded and realized steering angle.
    pub steer_gain: f64,
    pub blend_speed_low: f64,
    pub blend_speed_high: f64,
    /// RK4 substeps per sampling period.
    pub substeps: usize,
    /// Standard deviation of white actuator noise on the speed command, m/s.
    pub speed_noise_std: f64,
    /// Standard deviation of white actuator noise on the steering command, rad.
    pub steer_noise_std: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            mass: 3.47,
            yaw_inertia: 0.04712,
            wheelbase: 0.33,
            rear_to_cg: 0.17,
            cornering_front: 45.0,
            cornering_rear: 70.0,
            steer_tau: 0.1,
            speed_tau: 0.2,
            steer_gain: 1.0,
            blend_speed_low: 0.2,
            blend_speed_high: 0.5,
            substeps: 5,
            speed_noise_std: 0.0,
            steer_noise_std: 0.0,
        }
    }
}

impl PlantConfig {
    /// Rigid tires and instantaneous actuators: reproduces the kinematic model.
    pub fn kinematic_limit(params: &VehicleParams) -> Self {
        Self {
            wheelbase: params.wheelbase,
            cornering_front: f64::INFINITY,
            cornering_rear: f64::INFINITY,
            steer_tau: 0.0,
            speed_tau: 0.0,
            steer_gain: 1.0,
            speed_noise_std: 0.0,
            steer_noise_std: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, v: f64| {
            if v > 0.0 && !v.is_nan() {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("must be > 0, got {v}")))
            }
        };
        let non_negative = |name: &'static str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("must be finite and >= 0, got {v}")))
            }
        };
        positive("mass", self.mass)?;
        positive("yaw_inertia", self.yaw_inertia)?;
        positive("wheelbase", self.wheelbase)?;
        positive("cornering_front", self.cornering_front)?;
        positive("cornering_rear", self.cornering_rear)?;
        positive("steer_gain", self.steer_gain)?;
        non_negative("steer_tau", self.steer_tau)?;
        non_negative("speed_tau", self.speed_tau)?;
        non_negative("speed_noise_std", self.speed_noise_std)?;
        non_negative("steer_noise_std", self.steer_noise_std)?;
        if !(0.0..=self.wheelbase).contains(&self.rear_to_cg) {
            return Err(Error::invalid("rear_to_cg", "must lie within the wheelbase"));
        }
        if !(self.blend_speed_low > 0.0 && self.blend_speed_high > self.blend_speed_low) {
            return Err(Error::invalid(
                "blend_speed_low",
                "need 0 < blend_speed_low < blend_speed_high",
            ));
        }
        if self.substeps == 0 {
            return Err(Error::invalid("substeps", "must be >= 1"));
        }
        Ok(())
    }

    fn rigid(&self) -> bool {
        self.cornering_front.is_infinite() || self.cornering_rear.is_infinite()
    }

    fn front_to_cg(&self) -> f64 {
        self.wheelbase - self.rear_to_cg
    }

    /// Weight of the dynamic (tire) model at longitudinal speed `vx`.
    fn dynamic_weight(&self, vx: f64) -> f64 {
        if self.rigid() {
            return 0.0;
        }
        let s = ((vx - self.blend_speed_low) / (self.blend_speed_high - self.blend_speed_low)).clamp(0.0, 1.0);
        s * s * (3.0 - 2.0 * s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    /// Rear-axle pose.
    pub pose: VehicleState,
    /// Longitudinal speed, m/s.
    pub speed: f64,
    /// Lateral velocity of the CG in the body frame, m/s.
    pub lateral_velocity: f64,
    pub yaw_rate: f64,
    /// Realized front-wheel angle, rad.
    pub steer: f64,
}

impl PlantState {
    pub fn at_rest(pose: VehicleState) -> Self {
        Self {
            pose,
            speed: 0.0,
            lateral_velocity: 0.0,
            yaw_rate: 0.0,
            steer: 0.0,
        }
    }

    /// Rolling straight ahead at `speed`.
    pub fn rolling(pose: VehicleState, speed: f64) -> Self {
        Self {
            speed,
            ..Self::at_rest(pose)
        }
    }

    pub fn is_finite(&self) -> bool {
        self.pose.is_finite()
            && self.speed.is_finite()
            && self.lateral_velocity.is_finite()
            && self.yaw_rate.is_finite()
            && self.steer.is_finite()
    }
}

/// Integrated part of the plant state: [x, y, theta, vy, r].
type Core = [f64; 5];

fn lag(initial: f64, target: f64, tau: f64, t: f64) -> f64 {
    if tau == 0.0 {
        target
    } else {
        target + (initial - target) * (-t / tau).exp()
    }
}

fn derivative(cfg: &PlantConfig, s: &Core, vx: f64, delta: f64) -> Core {
    let [_, _, theta, vy, r] = *s;
    let (sin_th, cos_th) = theta.sin_cos();
    let l = cfg.wheelbase;
    let lr = cfg.rear_to_cg;
    let lf = cfg.front_to_cg();

    let r_kin = vx * delta.tan() / l;
    let vy_kin = lr * r_kin;
    let kin_pose = [vx * cos_th, vx * sin_th, r_kin];
    let kin_lat = [(vy_kin - vy) / KINEMATIC_RELAX_TAU, (r_kin - r) / KINEMATIC_RELAX_TAU];

    let w = cfg.dynamic_weight(vx);
    if w == 0.0 {
        return [kin_pose[0], kin_pose[1], kin_pose[2], kin_lat[0], kin_lat[1]];
    }

    let alpha_f = delta - (vy + lf * r).atan2(vx);
    let alpha_r = -(vy - lr * r).atan2(vx);
    let fyf = cfg.cornering_front * alpha_f;
    let fyr = cfg.cornering_rear * alpha_r;
    let vy_dot = (fyf * delta.cos() + fyr) / cfg.mass - vx * r;
    let r_dot = (lf * fyf * delta.cos() - lr * fyr) / cfg.yaw_inertia;
    let v_rear = vy - lr * r;
    let dyn_pose = [vx * cos_th - v_rear * sin_th, vx * sin_th + v_rear * cos_th, r];

    let mix = |d: f64, k: f64| w * d + (1.0 - w) * k;
    [
        mix(dyn_pose[0], kin_pose[0]),
        mix(dyn_pose[1], kin_pose[1]),
        mix(dyn_pose[2], kin_pose[2]),
        mix(vy_dot, kin_lat[0]),
        mix(r_dot, kin_lat[1]),
    ]
}

fn axpy(s: &Core, k: &Core, h: f64) -> Core {
    std::array::from_fn(|i| s[i] + h * k[i])
}

/// Advances the plant by one sampling period under a zero-order-hold command.
///
/// Actuator lags are solved in closed form inside the step, which keeps the
/// zero-time-constant limit exact.
pub fn step_plant(state: &PlantState, command: ControlInput, cfg: &PlantConfig, params: &VehicleParams) -> PlantState {
    let period = params.sample_time;
    let h = period / cfg.substeps as f64;
    let steer_target = command.delta * cfg.steer_gain;
    let actuators = |t: f64| {
        (
            lag(state.speed, command.v, cfg.speed_tau, t),
            lag(state.steer, steer_target, cfg.steer_tau, t),
        )
    };

    let mut s: Core = [
        state.pose.x,
        state.pose.y,
        state.pose.theta,
        state.lateral_velocity,
        state.yaw_rate,
    ];
    for i in 0..cfg.substeps {
        let t0 = i as f64 * h;
        let (v0, d0) = actuators(t0);
        let (vm, dm) = actuators(t0 + h / 2.0);
        let (v1, d1) = actuators(t0 + h);
        let k1 = derivative(cfg, &s, v0, d0);
        let k2 = derivative(cfg, &axpy(&s, &k1, h / 2.0), vm, dm);
        let k3 = derivative(cfg, &axpy(&s, &k2, h / 2.0), vm, dm);
        let k4 = derivative(cfg, &axpy(&s, &k3, h), v1, d1);
        s = std::array::from_fn(|j| s[j] + h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]));
    }

    let (speed, steer) = actuators(period);
    let (mut vy, mut r) = (s[3], s[4]);
    if cfg.rigid() {
        r = speed * steer.tan() / cfg.wheelbase;
        vy = cfg.rear_to_cg * r;
    }
    PlantState {
        pose: VehicleState::new(s[0], s[1], wrap_angle(s[2])),
        speed,
        lateral_velocity: vy,
        yaw_rate: r,
        steer,
    }
}
