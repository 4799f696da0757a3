//! How far the dynamic-bicycle plant drifts from the nominal kinematic model.

use rkmpc::dynamics::plant::{step_plant, PlantConfig, PlantState};
use rkmpc::dynamics::{step_kinematic, wrap_angle, ControlInput, VehicleParams, VehicleState};

fn main() {
    let params = VehicleParams::default();
    let plant = PlantConfig::default();
    let u = ControlInput::new(2.5, 0.25);
    let mut real = PlantState::rolling(VehicleState::origin(), u.v);
    let mut nominal = VehicleState::origin();
    for k in 1..=40 {
        real = step_plant(&real, u, &plant, &params);
        nominal = step_kinematic(nominal, u, &params);
        if k % 10 == 0 {
            let gap = (real.pose.x - nominal.x).hypot(real.pose.y - nominal.y);
            println!(
                "t={:.2}s position gap {gap:.3} m, heading gap {:.3} rad",
                k as f64 * params.sample_time,
                wrap_angle(real.pose.theta - nominal.theta)
            );
        }
    }
}
