//! Solving a small box-constrained QP.

use nalgebra::{dmatrix, dvector};
use rkmpc::qp::{solve_box_qp, BoxQp, QpSettings};

fn main() {
    let qp = BoxQp::new(
        dmatrix![4.0, 1.0; 1.0, 2.0],
        dvector![-8.0, 3.0],
        dvector![-1.0, -1.0],
        dvector![1.0, 1.0],
    );
    let sol = solve_box_qp(&qp, &QpSettings::default(), None).unwrap();
    println!(
        "z = [{:.6}, {:.6}], J = {:.6}, {} iterations",
        sol.z[0], sol.z[1], sol.objective, sol.iterations
    );
}
