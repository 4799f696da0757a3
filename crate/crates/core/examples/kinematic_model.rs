//! Kinematic bicycle step and its discrete linearization.

use rkmpc::dynamics::{linearize_kinematic, step_kinematic, ControlInput, ReferencePoint, VehicleParams, VehicleState};

fn main() {
    let params = VehicleParams::default();
    let mut s = VehicleState::origin();
    let u = ControlInput::new(2.0, 0.2);
    for k in 0..5 {
        s = step_kinematic(s, u, &params);
        println!("k={} x={:.4} y={:.4} theta={:.4}", k + 1, s.x, s.y, s.theta);
    }
    let r = ReferencePoint {
        x: 0.0,
        y: 0.0,
        theta: 0.3,
        v: 2.0,
        delta: 0.1,
    };
    let lin = linearize_kinematic(&r, &params).unwrap();
    println!("A =\n{}B =\n{}", lin.a, lin.b);
}
