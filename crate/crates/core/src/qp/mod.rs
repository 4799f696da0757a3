//! Dense box-constrained convex QP.
//!
//! ```text
//!     minimize    1/2 z' H z + f' z + c
//!     subject to  lower <= z <= upper
//! ```
//!
//! [`solve_box_qp`] alternates projected successive over-relaxation sweeps
//! (each coordinate takes its exact minimizing step scaled by the relaxation
//! factor, then is clamped) with a Newton step on the currently free
//! coordinates followed by a projected backtracking search. Every iterate is
//! clamped to the box and no step is accepted that raises the objective.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

mod condense;

pub use condense::{condense, HorizonProblem, RatePenalty, SoftOutputBounds, StageModel};

/// Diagonal shift used by the positive-semidefiniteness check.
const PSD_SHIFT: f64 = 1e-8;
const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct BoxQp {
    pub h: DMatrix<f64>,
    pub f: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    /// Constant offset so that the objective equals the modeled cost.
    pub constant: f64,
    /// Multiple of the identity already folded into `h`.
    pub regularization: f64,
}

impl BoxQp {
    pub fn new(h: DMatrix<f64>, f: DVector<f64>, lower: DVector<f64>, upper: DVector<f64>) -> Self {
        Self {
            h,
            f,
            lower,
            upper,
            constant: 0.0,
            regularization: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.f.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        if self.h.nrows() != n || self.h.ncols() != n || self.lower.len() != n || self.upper.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "H {}x{}, f {}, lower {}, upper {}",
                self.h.nrows(),
                self.h.ncols(),
                n,
                self.lower.len(),
                self.upper.len()
            )));
        }
        let scale = self.h.amax().max(1.0);
        for i in 0..n {
            for j in 0..i {
                if (self.h[(i, j)] - self.h[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return Err(Error::invalid("H", format!("not symmetric at ({i}, {j})")));
                }
            }
            if !(self.lower[i] <= self.upper[i]) {
                return Err(Error::invalid("bounds", format!("lower > upper at {i}")));
            }
        }
        if self.h.iter().chain(self.f.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("H", "non-finite entries"));
        }
        Ok(())
    }

    /// Objective including the regularization term.
    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.h * z)) + self.f.dot(z) + self.constant
    }

    /// Objective with the regularization removed: the modeled cost.
    pub fn cost(&self, z: &DVector<f64>) -> f64 {
        self.objective(z) - 0.5 * self.regularization * z.norm_squared()
    }

    pub fn project(&self, z: &mut DVector<f64>) {
        for i in 0..z.len() {
            z[i] = z[i].clamp(self.lower[i], self.upper[i]);
        }
    }

    /// Projected-gradient residual `|z - clamp(z - grad)|_inf`.
    pub fn kkt_residual(&self, z: &DVector<f64>) -> f64 {
        let g = &self.h * z + &self.f;
        (0..z.len())
            .map(|i| (z[i] - (z[i] - g[i]).clamp(self.lower[i], self.upper[i])).abs())
            .fold(0.0, f64::max)
    }

    /// True when the problem carries no information beyond regularization:
    /// every box point is (numerically) optimal.
    pub fn is_flat(&self, tol: f64) -> bool {
        let mut h = self.h.clone();
        for i in 0..h.nrows() {
            h[(i, i)] -= self.regularization;
        }
        h.amax() <= tol && self.f.amax() <= tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QpSettings {
    pub tol: f64,
    pub max_iter: usize,
    /// Over-relaxation factor in `(0, 2)`.
    pub relaxation: f64,
    /// Keep the objective after every iteration in [`QpSolution::trace`].
    #[serde(skip)]
    pub record_trace: bool,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 2000,
            relaxation: 1.2,
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub kkt_residual: f64,
    pub trace: Vec<f64>,
}

fn check_psd(h: &DMatrix<f64>) -> Result<()> {
    let n = h.nrows();
    let shifted = h + DMatrix::<f64>::identity(n, n) * PSD_SHIFT;
    if nalgebra::Cholesky::new(shifted).is_none() {
        return Err(Error::IllConditioned);
    }
    Ok(())
}

struct Workspace<'a> {
    qp: &'a BoxQp,
    z: DVector<f64>,
    grad: DVector<f64>,
}

impl<'a> Workspace<'a> {
    fn new(qp: &'a BoxQp, z: DVector<f64>) -> Self {
        let grad = &qp.h * &z + &qp.f;
        Self { qp, z, grad }
    }

    fn set(&mut self, z: DVector<f64>) {
        self.grad = &self.qp.h * &z + &self.qp.f;
        self.z = z;
    }

    fn objective(&self) -> f64 {
        self.qp.objective(&self.z)
    }

    fn sor_sweep(&mut self, omega: f64) {
        let qp = self.qp;
        for i in 0..self.z.len() {
            let hii = qp.h[(i, i)];
            let g = self.grad[i];
            let target = if hii > 0.0 {
                self.z[i] - omega * g / hii
            } else if g > 0.0 {
                qp.lower[i]
            } else if g < 0.0 {
                qp.upper[i]
            } else {
                self.z[i]
            };
            if !target.is_finite() {
                continue;
            }
            let new = target.clamp(qp.lower[i], qp.upper[i]);
            let step = new - self.z[i];
            if step != 0.0 {
                self.z[i] = new;
                self.grad.axpy(step, &qp.h.column(i), 1.0);
            }
        }
    }

    fn free_set(&self) -> Vec<usize> {
        let qp = self.qp;
        (0..self.z.len())
            .filter(|&i| {
                let at_lower = self.z[i] <= qp.lower[i] && self.grad[i] >= 0.0;
                let at_upper = self.z[i] >= qp.upper[i] && self.grad[i] <= 0.0;
                !(at_lower || at_upper)
            })
            .collect()
    }

    /// Newton step on the free coordinates with projected backtracking.
    fn subspace_newton(&mut self, current: f64) -> Option<f64> {
        let free = self.free_set();
        if free.is_empty() {
            return None;
        }
        let k = free.len();
        let qp = self.qp;
        let h_ff = DMatrix::from_fn(k, k, |a, b| qp.h[(free[a], free[b])]);
        let g_f = DVector::from_fn(k, |a, _| -self.grad[free[a]]);
        let step = nalgebra::Cholesky::new(h_ff)?.solve(&g_f);
        let mut alpha = 1.0;
        for _ in 0..30 {
            let mut trial = self.z.clone();
            for (a, &i) in free.iter().enumerate() {
                trial[i] += alpha * step[a];
            }
            qp.project(&mut trial);
            let value = qp.objective(&trial);
            if value <= current {
                self.set(trial);
                return Some(value);
            }
            alpha *= 0.5;
        }
        None
    }

    fn kkt_residual(&self) -> f64 {
        let qp = self.qp;
        (0..self.z.len())
            .map(|i| (self.z[i] - (self.z[i] - self.grad[i]).clamp(qp.lower[i], qp.upper[i])).abs())
            .fold(0.0, f64::max)
    }
}

/// Solves a box QP, starting from `warm_start` (clamped into the box) when given.
pub fn solve_box_qp(problem: &BoxQp, settings: &QpSettings, warm_start: Option<&DVector<f64>>) -> Result<QpSolution> {
    problem.validate()?;
    check_psd(&problem.h)?;
    let n = problem.dim();
    let mut start = match warm_start {
        Some(w) if w.len() == n => w.clone(),
        Some(w) => {
            return Err(Error::DimensionMismatch(format!(
                "warm start has {} entries, problem has {n}",
                w.len()
            )))
        }
        None => DVector::zeros(n),
    };
    for i in 0..n {
        if !start[i].is_finite() {
            start[i] = 0.0;
        }
    }
    problem.project(&mut start);
    let mut ws = Workspace::new(problem, start);
    let mut value = ws.objective();
    let mut trace = Vec::new();
    if settings.record_trace {
        trace.push(value);
    }

    let mut iterations = 0;
    let mut residual = ws.kkt_residual();
    while residual > settings.tol && iterations < settings.max_iter {
        iterations += 1;
        let previous = ws.z.clone();
        ws.sor_sweep(settings.relaxation);
        // resynchronize the incrementally updated gradient
        let swept = ws.z.clone();
        ws.set(swept);
        let after_sweep = ws.objective();
        if after_sweep > value {
            // rounding near the optimum
            ws.set(previous);
        } else {
            value = after_sweep;
        }
        if let Some(v) = ws.subspace_newton(value) {
            value = v;
        }
        residual = ws.kkt_residual();
        if settings.record_trace {
            trace.push(value);
        }
    }
    let objective = value;
    Ok(QpSolution {
        converged: residual <= settings.tol,
        objective,
        iterations,
        kkt_residual: residual,
        z: ws.z,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn settings() -> QpSettings {
        QpSettings::default()
    }

    #[test]
    fn scalar_clamp() {
        let qp = BoxQp::new(
            DMatrix::from_element(1, 1, 2.0),
            DVector::from_element(1, -4.0),
            DVector::from_element(1, 0.0),
            DVector::from_element(1, 1.0),
        );
        let s = solve_box_qp(&qp, &settings(), None).unwrap();
        assert_eq!(s.z[0], 1.0);
        assert!(s.converged);
    }

    #[test]
    fn interior_origin() {
        let qp = BoxQp::new(
            DMatrix::identity(2, 2) * 2.0,
            DVector::zeros(2),
            DVector::from_element(2, -1.0),
            DVector::from_element(2, 1.0),
        );
        let s = solve_box_qp(&qp, &settings(), None).unwrap();
        assert_eq!(s.z, DVector::zeros(2));
        assert_eq!(s.objective, 0.0);
    }

    #[test]
    fn negative_curvature_rejected() {
        let qp = BoxQp::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-3]),
            DVector::zeros(2),
            DVector::from_element(2, -1.0),
            DVector::from_element(2, 1.0),
        );
        assert!(matches!(
            solve_box_qp(&qp, &settings(), None),
            Err(Error::IllConditioned)
        ));
    }

    #[test]
    fn asymmetric_rejected() {
        let qp = BoxQp::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]),
            DVector::zeros(2),
            DVector::from_element(2, -1.0),
            DVector::from_element(2, 1.0),
        );
        assert!(solve_box_qp(&qp, &settings(), None).is_err());
    }

    #[test]
    fn iteration_cap_reports_not_converged() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 30;
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let h = &m * m.transpose() + DMatrix::identity(n, n) * 1e-4;
        let f = DVector::from_fn(n, |_, _| rng.random_range(-10.0..10.0));
        let qp = BoxQp::new(h, f, DVector::from_element(n, -1.0), DVector::from_element(n, 1.0));
        let capped = QpSettings {
            max_iter: 1,
            tol: 1e-14,
            ..settings()
        };
        let s = solve_box_qp(&qp, &capped, None).unwrap();
        assert!(!s.converged);
        assert_eq!(s.iterations, 1);
        assert!((0..n).all(|i| (-1.0..=1.0).contains(&s.z[i])));
    }

    #[test]
    fn objective_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let n = rng.random_range(2..12);
            let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let h = &m * m.transpose();
            let f = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
            let qp = BoxQp::new(h, f, DVector::from_element(n, -0.5), DVector::from_element(n, 0.7));
            let traced = QpSettings {
                record_trace: true,
                ..settings()
            };
            let s = solve_box_qp(&qp, &traced, None).unwrap();
            for w in s.trace.windows(2) {
                assert!(w[1] <= w[0]);
            }
        }
    }

    #[test]
    fn warm_start_converges_immediately() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 8;
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let h = &m * m.transpose() + DMatrix::identity(n, n);
        let f = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
        let qp = BoxQp::new(h, f, DVector::from_element(n, -0.5), DVector::from_element(n, 0.5));
        let cold = solve_box_qp(&qp, &settings(), None).unwrap();
        let warm = solve_box_qp(&qp, &settings(), Some(&cold.z)).unwrap();
        assert_eq!(warm.iterations, 0);
        assert_eq!(warm.z, cold.z);
    }
}
