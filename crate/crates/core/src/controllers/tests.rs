use super::*;
use crate::koopman::{fit_unlifted, PreprocessStats, ResidualDataset, ResidualSample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn straight(speed: f64, count: usize) -> ReferenceTrajectory {
    let t = VehicleParams::default().sample_time;
    ReferenceTrajectory {
        points: (0..count)
            .map(|k| ReferencePoint {
                x: k as f64 * speed * t,
                y: 0.0,
                theta: 0.0,
                v: speed,
                delta: 0.0,
            })
            .collect(),
        sample_time: t,
        closed: false,
    }
}

fn arc(radius: f64, speed: f64, count: usize) -> ReferenceTrajectory {
    let p = VehicleParams::default();
    let t = p.sample_time;
    let delta = (p.wheelbase / radius).atan();
    ReferenceTrajectory {
        points: (0..count)
            .map(|k| {
                let a = k as f64 * speed * t / radius;
                ReferencePoint {
                    x: radius * a.sin(),
                    y: radius * (1.0 - a.cos()),
                    theta: a,
                    v: speed,
                    delta,
                }
            })
            .collect(),
        sample_time: t,
        closed: false,
    }
}

fn random_model(kind: InputKind, seed: u64) -> KoopmanModel {
    let p = VehicleParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..300)
        .map(|_| {
            let s = VehicleState::new(
                rng.random_range(0.0..1.0),
                rng.random_range(-0.1..0.1),
                rng.random_range(-0.2..0.2),
            );
            let u = ControlInput::new(rng.random_range(0.5..2.0), rng.random_range(-0.2..0.2));
            let next = crate::dynamics::step_kinematic(s, u, &p);
            let input = match kind {
                InputKind::Absolute => u,
                InputKind::Residual => ControlInput::new(0.1 * u.v, -0.2 * u.delta),
            };
            ResidualSample { state: s, next, input }
        })
        .collect();
    fit_unlifted(&ResidualDataset {
        kind,
        samples,
        stats: PreprocessStats::default(),
    })
    .unwrap()
}

#[test]
fn aligned_on_straight_keeps_reference_input() {
    let reference = straight(1.5, 100);
    let mut c = Lmpc::new(MpcConfig::default(), VehicleParams::default()).unwrap();
    let out = c.step(&VehicleState::origin(), &reference).unwrap();
    assert!((out.final_input.v - 1.5).abs() < 1e-3, "{:?}", out.final_input);
    assert!(out.final_input.delta.abs() < 1e-3);
    assert!(out.baseline_qp.converged);
}

#[test]
fn left_offset_steers_right() {
    let reference = straight(1.5, 100);
    let mut c = Lmpc::new(MpcConfig::default(), VehicleParams::default()).unwrap();
    let out = c.step(&VehicleState::new(0.0, 0.2, 0.0), &reference).unwrap();
    assert!(out.final_input.delta < 0.0);
    let mut c = Lmpc::new(MpcConfig::default(), VehicleParams::default()).unwrap();
    let out = c.step(&VehicleState::new(0.0, -0.2, 0.0), &reference).unwrap();
    assert!(out.final_input.delta > 0.0);
}

/// Cost of an input stack under the error model, rolled out directly.
fn rollout_cost(c: &Lmpc, state: &VehicleState, window: &[ReferencePoint], u: &[f64]) -> f64 {
    let cfg = &c.cfg;
    let p = &c.params;
    let r0 = window[0];
    let mut e = nalgebra::Vector3::new(state.x - r0.x, state.y - r0.y, angle_diff(state.theta, r0.theta));
    let mut cost = 0.0;
    for k in 0..cfg.horizon {
        let r = window[k];
        let lin = linearize_kinematic(&r, p).unwrap();
        let uk = nalgebra::Vector2::new(u[2 * k], u[2 * k + 1]);
        let ur = nalgebra::Vector2::new(r.v, r.delta);
        let f_ref = step_euler(&nalgebra::Vector3::new(r.x, r.y, r.theta), r.input(), p);
        let next = nalgebra::Vector3::new(window[k + 1].x, window[k + 1].y, window[k + 1].theta);
        e = lin.a * e + lin.b * (uk - ur) + (f_ref - next);
        cost += cfg.position_weight * (e[0] * e[0] + e[1] * e[1]) + cfg.heading_weight * e[2] * e[2];
        cost += cfg.speed_weight * (uk[0] - ur[0]).powi(2) + cfg.steer_weight * (uk[1] - ur[1]).powi(2);
    }
    cost
}

#[test]
fn short_horizon_matches_grid_search() {
    let cfg = MpcConfig {
        horizon: 2,
        soft_bound_weight: 0.0,
        ..Default::default()
    };
    let params = VehicleParams::default();
    let reference = arc(2.0, 1.2, 50);
    let state = VehicleState::new(0.02, 0.05, 0.1);
    let mut c = Lmpc::new(cfg, params).unwrap();
    let out = c.step(&state, &reference).unwrap();
    let index = c.cursor().current().unwrap();
    let window = reference.window(index, 3).unwrap();
    let bx = params.input_box;
    let lo = [bx.v_min, bx.delta_min, bx.v_min, bx.delta_min];
    let hi = [bx.v_max, bx.delta_max, bx.v_max, bx.delta_max];
    let mut center = [(lo[0] + hi[0]) / 2.0, 0.0, (lo[2] + hi[2]) / 2.0, 0.0];
    let mut step = [0.4, 0.08, 0.4, 0.08];
    let steps = 5i32;
    while step[1] > 2e-4 {
        let mut best = (f64::INFINITY, center);
        for a in -steps..=steps {
            for b in -steps..=steps {
                for cc in -steps..=steps {
                    for d in -steps..=steps {
                        let mut u = [0.0; 4];
                        for (i, o) in [a, b, cc, d].into_iter().enumerate() {
                            u[i] = (center[i] + o as f64 * step[i]).clamp(lo[i], hi[i]);
                        }
                        let j = rollout_cost(&c, &state, &window, &u);
                        if j < best.0 {
                            best = (j, u);
                        }
                    }
                }
            }
        }
        center = best.1;
        for s in &mut step {
            *s *= 0.4;
        }
    }
    assert!(
        (out.final_input.v - center[0]).abs() < 2e-3,
        "{:?} vs {center:?}",
        out.final_input
    );
    assert!(
        (out.final_input.delta - center[1]).abs() < 2e-3,
        "{:?} vs {center:?}",
        out.final_input
    );
}

#[test]
fn outputs_stay_in_box_far_from_path() {
    let reference = arc(2.0, 1.5, 200);
    let params = VehicleParams::default();
    let bx = params.input_box;
    let far = [
        VehicleState::new(5.0, -7.0, 3.0),
        VehicleState::new(-20.0, 30.0, -2.0),
        VehicleState::new(0.0, 0.0, 3.1),
    ];
    for s in far {
        let mut l = Lmpc::new(MpcConfig::default(), params).unwrap();
        assert!(bx.contains(l.step(&s, &reference).unwrap().final_input));
        let mut k = Kmpc::new(MpcConfig::default(), params, random_model(InputKind::Absolute, 1)).unwrap();
        assert!(bx.contains(k.step(&s, &reference).unwrap().final_input));
        let mut r = Rkmpc::new(MpcConfig::default(), params, random_model(InputKind::Residual, 2)).unwrap();
        let out = r.step(&s, &reference).unwrap();
        assert!(bx.contains(out.final_input));
    }
}

#[test]
fn zero_weights_flag_flat_objective() {
    let cfg = MpcConfig {
        position_weight: 0.0,
        heading_weight: 0.0,
        speed_weight: 0.0,
        steer_weight: 0.0,
        soft_bound_weight: 0.0,
        ..Default::default()
    };
    let params = VehicleParams::default();
    let mut k = Kmpc::new(cfg, params, random_model(InputKind::Absolute, 3)).unwrap();
    let out = k.step(&VehicleState::new(0.1, 0.1, 0.0), &straight(1.0, 100)).unwrap();
    assert!(out.baseline_qp.flat);
    assert!(params.input_box.contains(out.final_input));
}

#[test]
fn pinned_residual_box_reproduces_baseline() {
    let mut cfg = MpcConfig::default();
    cfg.residual.bounds = InputBox::pinned_zero();
    let params = VehicleParams::default();
    let reference = arc(5.0, 1.5, 300);
    let mut l = Lmpc::new(cfg, params).unwrap();
    let mut r = Rkmpc::new(cfg, params, random_model(InputKind::Residual, 4)).unwrap();
    let mut s = VehicleState::new(0.05, -0.1, 0.05);
    for _ in 0..100 {
        let a = l.step(&s, &reference).unwrap();
        let b = r.step(&s, &reference).unwrap();
        assert_eq!(a.final_input.v.to_bits(), b.final_input.v.to_bits());
        assert_eq!(a.final_input.delta.to_bits(), b.final_input.delta.to_bits());
        assert_eq!(b.residual, ControlInput::zero());
        s = crate::dynamics::step_kinematic(s, a.final_input, &params);
    }
}

#[test]
fn residual_sum_is_clamped() {
    let params = VehicleParams::default();
    let mut r = Rkmpc::new(MpcConfig::default(), params, random_model(InputKind::Residual, 5)).unwrap();
    let reference = arc(4.0, 1.5, 200);
    let mut s = VehicleState::new(0.0, 0.3, -0.2);
    for _ in 0..50 {
        let out = r.step(&s, &reference).unwrap();
        let raw = ControlInput::new(out.baseline.v + out.residual.v, out.baseline.delta + out.residual.delta);
        assert_eq!(out.final_input, params.input_box.clamp(raw));
        assert!(MpcConfig::default().residual.bounds.contains(out.residual));
        s = crate::dynamics::step_kinematic(s, out.final_input, &params);
    }
}

#[test]
fn residual_channel_is_frame_invariant() {
    let params = VehicleParams::default();
    let model = random_model(InputKind::Residual, 6);
    let reference = arc(2.5, 1.5, 120);
    let (rot, tx, ty) = (1.1f64, 3.0, -2.0);
    let moved = ReferenceTrajectory {
        points: reference
            .points
            .iter()
            .map(|p| ReferencePoint {
                x: tx + rot.cos() * p.x - rot.sin() * p.y,
                y: ty + rot.sin() * p.x + rot.cos() * p.y,
                theta: wrap_angle(p.theta + rot),
                ..*p
            })
            .collect(),
        ..reference.clone()
    };
    let s = VehicleState::new(0.1, 0.05, 0.1);
    let s2 = VehicleState::new(
        tx + rot.cos() * s.x - rot.sin() * s.y,
        ty + rot.sin() * s.x + rot.cos() * s.y,
        s.theta + rot,
    );
    let mut a = Rkmpc::new(MpcConfig::default(), params, model.clone()).unwrap();
    let mut b = Rkmpc::new(MpcConfig::default(), params, model).unwrap();
    let (mut sa, mut sb) = (s, s2);
    for _ in 0..30 {
        let oa = a.step(&sa, &reference).unwrap();
        let ob = b.step(&sb, &moved).unwrap();
        assert!((oa.residual.v - ob.residual.v).abs() < 1e-9);
        assert!((oa.residual.delta - ob.residual.delta).abs() < 1e-9);
        sa = crate::dynamics::step_kinematic(sa, oa.final_input, &params);
        sb = crate::dynamics::step_kinematic(sb, ob.final_input, &params);
    }
}

#[test]
fn controller_names_parse() {
    for k in ControllerKind::ALL {
        assert_eq!(k.name().parse::<ControllerKind>().unwrap(), k);
    }
    assert!("nmpc".parse::<ControllerKind>().is_err());
}

#[test]
fn cursor_advances_by_time_and_resyncs() {
    let reference = straight(1.0, 400);
    let mut cur = ReferenceCursor::new(5);
    assert_eq!(cur.advance(&VehicleState::new(0.51, 0.0, 0.0), &reference), 10);
    assert_eq!(cur.advance(&VehicleState::new(0.51, 0.0, 0.0), &reference), 11);
    assert_eq!(cur.advance(&VehicleState::new(0.51, 0.0, 0.0), &reference), 12);
    // far behind the cursor: snaps back to the projection
    assert_eq!(cur.advance(&VehicleState::new(0.22, 0.0, 0.0), &reference), 4);
}

#[test]
fn open_reference_runs_out() {
    let reference = straight(1.0, 10);
    let mut c = Lmpc::new(MpcConfig::default(), VehicleParams::default()).unwrap();
    assert!(matches!(
        c.step(&VehicleState::origin(), &reference),
        Err(Error::ReferenceExhausted { .. })
    ));
}
