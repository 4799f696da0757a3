use crate::dynamics::{wrap_angle, ControlInput, VehicleState};

/// Expresses `state` in the frame whose origin is the pose `origin`.
pub fn to_local(origin: &VehicleState, state: &VehicleState) -> VehicleState {
    let (s, c) = origin.theta.sin_cos();
    let dx = state.x - origin.x;
    let dy = state.y - origin.y;
    VehicleState::new(
        c * dx + s * dy,
        -s * dx + c * dy,
        wrap_angle(state.theta - origin.theta),
    )
}

/// Inverse of [`to_local`].
pub fn from_local(origin: &VehicleState, local: &VehicleState) -> VehicleState {
    let (s, c) = origin.theta.sin_cos();
    VehicleState::new(
        origin.x + c * local.x - s * local.y,
        origin.y + s * local.x + c * local.y,
        wrap_angle(local.theta + origin.theta),
    )
}

/// Moves a sequence of (state, input) records into the local frame of
/// `origin`. Inputs are frame independent and pass through untouched.
pub fn transform_to_local(
    origin: &VehicleState,
    points: &[(VehicleState, ControlInput)],
) -> Vec<(VehicleState, ControlInput)> {
    points.iter().map(|(s, u)| (to_local(origin, s), *u)).collect()
}

pub fn transform_to_global(
    origin: &VehicleState,
    points: &[(VehicleState, ControlInput)],
) -> Vec<(VehicleState, ControlInput)> {
    points.iter().map(|(s, u)| (from_local(origin, s), *u)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::angle_diff;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn quarter_turn_origin() {
        let o = VehicleState::new(1.0, 2.0, FRAC_PI_2);
        let l = to_local(&o, &VehicleState::new(1.0, 3.0, FRAC_PI_2));
        assert!((l.x - 1.0).abs() < 1e-15);
        assert!(l.y.abs() < 1e-15);
        assert!(l.theta.abs() < 1e-15);
    }

    #[test]
    fn pure_translation() {
        let o = VehicleState::new(0.5, -1.5, 0.0);
        let l = to_local(&o, &VehicleState::new(2.0, 1.0, 0.3));
        assert_eq!((l.x, l.y, l.theta), (1.5, 2.5, 0.3));
    }

    #[test]
    fn origin_maps_to_zero_and_inputs_pass_through() {
        let o = VehicleState::new(3.0, -4.0, 2.5);
        let u = ControlInput::new(1.2, -0.1);
        let out = transform_to_local(&o, &[(o, u)]);
        assert!(out[0].0.x.abs() < 1e-15 && out[0].0.y.abs() < 1e-15 && out[0].0.theta == 0.0);
        assert_eq!(out[0].1, u);
    }

    fn pose() -> impl Strategy<Value = VehicleState> {
        (-50.0..50.0f64, -50.0..50.0f64, -3.1..3.1f64).prop_map(|(x, y, t)| VehicleState::new(x, y, t))
    }

    proptest! {
        #[test]
        fn round_trip(o in pose(), p in pose()) {
            let back = from_local(&o, &to_local(&o, &p));
            prop_assert!((back.x - p.x).abs() < 1e-12);
            prop_assert!((back.y - p.y).abs() < 1e-12);
            prop_assert!(angle_diff(back.theta, p.theta).abs() < 1e-12);
        }

        #[test]
        fn isometry(o in pose(), p in pose(), q in pose()) {
            let lp = to_local(&o, &p);
            let lq = to_local(&o, &q);
            let d = (p.x - q.x).hypot(p.y - q.y);
            let dl = (lp.x - lq.x).hypot(lp.y - lq.y);
            prop_assert!((d - dl).abs() < 1e-12);
            let h = angle_diff(p.theta, q.theta);
            let hl = angle_diff(lp.theta, lq.theta);
            prop_assert!(angle_diff(h, hl).abs() < 1e-12);
        }
    }
}
