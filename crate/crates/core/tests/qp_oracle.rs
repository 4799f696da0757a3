mod common;

use common::{active_set_oracle, random_box_qp};
use proptest::prelude::*;
use rkmpc::qp::{solve_box_qp, QpSettings};

#[test]
fn matches_exhaustive_active_set_on_random_instances() {
    for seed in 0..50u64 {
        let n = 1 + (seed as usize % 6);
        let qp = random_box_qp(n, seed);
        let sol = solve_box_qp(&qp, &QpSettings::default(), None).unwrap();
        let (z, v) = active_set_oracle(&qp);
        assert!((&sol.z - &z).amax() <= 1e-6, "seed {seed}: {} vs {}", sol.z, z);
        assert!(
            (sol.objective - v).abs() <= 1e-8,
            "seed {seed}: {} vs {v}",
            sol.objective
        );
        for i in 0..n {
            assert!(sol.z[i] >= qp.lower[i] && sol.z[i] <= qp.upper[i]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn solution_is_feasible_and_no_worse_than_oracle(seed in 1000u64..100_000, n in 1usize..=5) {
        let qp = random_box_qp(n, seed);
        let sol = solve_box_qp(&qp, &QpSettings::default(), None).unwrap();
        let (_, v) = active_set_oracle(&qp);
        for i in 0..n {
            prop_assert!(sol.z[i] >= qp.lower[i] && sol.z[i] <= qp.upper[i]);
        }
        prop_assert!(sol.objective <= v + 1e-8);
        prop_assert!(sol.kkt_residual <= 1e-6);
    }

    #[test]
    fn warm_start_does_not_change_the_minimizer(seed in 0u64..10_000, n in 1usize..=5) {
        let qp = random_box_qp(n, seed);
        let cold = solve_box_qp(&qp, &QpSettings::default(), None).unwrap();
        let warm_from = nalgebra::DVector::from_element(n, 10.0);
        let warm = solve_box_qp(&qp, &QpSettings::default(), Some(&warm_from)).unwrap();
        prop_assert!((&cold.z - &warm.z).amax() <= 1e-6);
    }
}
