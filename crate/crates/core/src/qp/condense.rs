//! Input-condensed formulation of a finite-horizon tracking problem.
//!
//! States are eliminated by forward substitution of
//! `s[k+1] = A[k] s[k] + B[k] u[k] + c[k]`, leaving the stacked inputs
//! `u = [u[0]; ...; u[N-1]]` as the decision vector. The stage cost pairs the
//! input `u[k]` with the output `y[k+1] = C s[k+1]` it produces:
//!
//! ```text
//!     sum_k  (y[k+1] - r[k])' Q (y[k+1] - r[k]) + (u[k] - u_ref[k])' R (u[k] - u_ref[k])
//! ```
//!
//! with `Q`, `R` diagonal. Output bounds become quadratic penalties on the
//! stages where a nominal input sequence violates them, and an optional rate
//! penalty weights `u[k] - u[k-1]`.

use nalgebra::{DMatrix, DVector};

use super::BoxQp;
use crate::error::{Error, Result};

/// Regularization added to the condensed Hessian.
pub const HESSIAN_REGULARIZATION: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct StageModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// Affine drift; zero for purely linear models.
    pub c: DVector<f64>,
}

impl StageModel {
    pub fn linear(a: DMatrix<f64>, b: DMatrix<f64>) -> Self {
        let n = a.nrows();
        Self {
            a,
            b,
            c: DVector::zeros(n),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftOutputBounds {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub weight: f64,
    /// Bounds are offsets from the stage targets rather than absolute.
    pub relative: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatePenalty {
    /// Per-input weight on `u[k] - u[k-1]`.
    pub weights: DVector<f64>,
    /// Input applied at the previous control step, `u[-1]`.
    pub previous: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HorizonProblem {
    pub initial_state: DVector<f64>,
    pub stages: Vec<StageModel>,
    /// Output map `y = C s`.
    pub output: DMatrix<f64>,
    /// Output targets `r[k]` for `y[k+1]`.
    pub output_targets: Vec<DVector<f64>>,
    pub input_refs: Vec<DVector<f64>>,
    pub output_weights: DVector<f64>,
    pub input_weights: DVector<f64>,
    pub input_lower: DVector<f64>,
    pub input_upper: DVector<f64>,
    pub soft_bounds: Option<SoftOutputBounds>,
    /// Input sequence used to decide which soft bounds are active; the
    /// input references when absent.
    pub nominal_inputs: Option<DVector<f64>>,
    pub rate: Option<RatePenalty>,
}

impl HorizonProblem {
    pub fn horizon(&self) -> usize {
        self.stages.len()
    }

    fn check(&self) -> Result<(usize, usize, usize)> {
        let horizon = self.horizon();
        if horizon == 0 {
            return Err(Error::DimensionMismatch("horizon must be >= 1".into()));
        }
        let n = self.initial_state.len();
        let m = self.stages[0].b.ncols();
        let p = self.output.nrows();
        let mismatch = |what: &str| Err(Error::DimensionMismatch(what.to_string()));
        for (k, st) in self.stages.iter().enumerate() {
            if st.a.shape() != (n, n) || st.b.shape() != (n, m) || st.c.len() != n {
                return mismatch(&format!("stage {k} shapes"));
            }
        }
        if self.output.ncols() != n {
            return mismatch("output map columns");
        }
        if self.output_targets.len() != horizon || self.input_refs.len() != horizon {
            return mismatch("reference count differs from horizon");
        }
        if self.output_targets.iter().any(|r| r.len() != p) || self.input_refs.iter().any(|r| r.len() != m) {
            return mismatch("reference dimensions");
        }
        if self.output_weights.len() != p
            || self.input_weights.len() != m
            || self.input_lower.len() != m
            || self.input_upper.len() != m
        {
            return mismatch("weight or bound dimensions");
        }
        if self
            .output_weights
            .iter()
            .chain(self.input_weights.iter())
            .any(|w| !(*w >= 0.0))
        {
            return Err(Error::invalid("weights", "must be >= 0"));
        }
        if let Some(sb) = &self.soft_bounds {
            if sb.lower.len() != p || sb.upper.len() != p {
                return mismatch("soft bound dimensions");
            }
        }
        if let Some(u) = &self.nominal_inputs {
            if u.len() != horizon * m {
                return mismatch("nominal input length");
            }
        }
        if let Some(r) = &self.rate {
            if r.weights.len() != m || r.previous.len() != m {
                return mismatch("rate penalty dimensions");
            }
        }
        Ok((n, m, p))
    }

    /// Outputs `[y[1]; ...; y[N]]` as the affine map `M u + y0`.
    pub fn output_map(&self) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let (n, m, p) = self.check()?;
        let horizon = self.horizon();
        let mut sens = DMatrix::<f64>::zeros(n, horizon * m);
        let mut free = self.initial_state.clone();
        let mut big_m = DMatrix::<f64>::zeros(p * horizon, horizon * m);
        let mut y0 = DVector::<f64>::zeros(p * horizon);
        for (k, st) in self.stages.iter().enumerate() {
            sens = &st.a * &sens;
            sens.view_mut((0, k * m), (n, m)).copy_from(&st.b);
            free = &st.a * &free + &st.c;
            big_m
                .view_mut((k * p, 0), (p, horizon * m))
                .copy_from(&(&self.output * &sens));
            y0.rows_mut(k * p, p).copy_from(&(&self.output * &free));
        }
        Ok((big_m, y0))
    }
}

/// Accumulates `sum_j w_j (L_j z + o_j - t_j)^2` into `(H, f, c)` with the
/// `1/2 z'Hz + f'z + c` convention.
fn add_weighted_squares(
    h: &mut DMatrix<f64>,
    f: &mut DVector<f64>,
    constant: &mut f64,
    map: &DMatrix<f64>,
    offset: &DVector<f64>,
    weights: &DVector<f64>,
) {
    let weighted = DMatrix::from_fn(map.nrows(), map.ncols(), |i, j| weights[i] * map[(i, j)]);
    *h += map.transpose() * &weighted * 2.0;
    *f += weighted.transpose() * offset * 2.0;
    *constant += offset.iter().zip(weights.iter()).map(|(o, w)| w * o * o).sum::<f64>();
}

pub fn condense(problem: &HorizonProblem) -> Result<BoxQp> {
    let (_, m, p) = problem.check()?;
    let horizon = problem.horizon();
    let dim = horizon * m;
    let (big_m, y0) = problem.output_map()?;

    let mut h = DMatrix::<f64>::zeros(dim, dim);
    let mut f = DVector::<f64>::zeros(dim);
    let mut constant = 0.0;

    let targets = DVector::from_iterator(
        p * horizon,
        problem.output_targets.iter().flat_map(|r| r.iter().copied()),
    );
    let out_w = DVector::from_fn(p * horizon, |i, _| problem.output_weights[i % p]);
    add_weighted_squares(&mut h, &mut f, &mut constant, &big_m, &(&y0 - &targets), &out_w);

    let u_ref = DVector::from_iterator(dim, problem.input_refs.iter().flat_map(|r| r.iter().copied()));
    let in_w = DVector::from_fn(dim, |i, _| problem.input_weights[i % m]);
    let identity = DMatrix::<f64>::identity(dim, dim);
    add_weighted_squares(&mut h, &mut f, &mut constant, &identity, &(-&u_ref), &in_w);

    if let Some(sb) = &problem.soft_bounds {
        let nominal = problem.nominal_inputs.as_ref().unwrap_or(&u_ref);
        let y_nom = &big_m * nominal + &y0;
        let mut weights = DVector::<f64>::zeros(p * horizon);
        let mut bounds = DVector::<f64>::zeros(p * horizon);
        for i in 0..p * horizon {
            let base = if sb.relative { targets[i] } else { 0.0 };
            let (lo, hi) = (base + sb.lower[i % p], base + sb.upper[i % p]);
            if y_nom[i] > hi {
                weights[i] = sb.weight;
                bounds[i] = hi;
            } else if y_nom[i] < lo {
                weights[i] = sb.weight;
                bounds[i] = lo;
            }
        }
        if weights.iter().any(|w| *w > 0.0) {
            add_weighted_squares(&mut h, &mut f, &mut constant, &big_m, &(&y0 - &bounds), &weights);
        }
    }

    if let Some(rate) = &problem.rate {
        // D u - e with (D u)_k = u[k] - u[k-1] and e_0 = u[-1]
        let mut diff = DMatrix::<f64>::zeros(dim, dim);
        let mut offset = DVector::<f64>::zeros(dim);
        for i in 0..dim {
            diff[(i, i)] = 1.0;
            if i >= m {
                diff[(i, i - m)] = -1.0;
            } else {
                offset[i] = -rate.previous[i];
            }
        }
        let w = DVector::from_fn(dim, |i, _| rate.weights[i % m]);
        add_weighted_squares(&mut h, &mut f, &mut constant, &diff, &offset, &w);
    }

    // exact symmetry before regularizing
    let sym = (&h + h.transpose()) * 0.5;
    let h = sym + DMatrix::<f64>::identity(dim, dim) * HESSIAN_REGULARIZATION;
    let mut lower = DVector::<f64>::zeros(dim);
    let mut upper = DVector::<f64>::zeros(dim);
    for i in 0..dim {
        lower[i] = problem.input_lower[i % m];
        upper[i] = problem.input_upper[i % m];
    }
    Ok(BoxQp {
        h,
        f,
        lower,
        upper,
        constant,
        regularization: HESSIAN_REGULARIZATION,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(rng: &mut ChaCha8Rng, horizon: usize, soft: bool, rate: bool) -> HorizonProblem {
        let (n, m, p) = (3, 2, 3);
        let mut rand_mat = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
        let stages = (0..horizon)
            .map(|_| StageModel {
                a: rand_mat(n, n) * 0.5 + DMatrix::identity(n, n),
                b: rand_mat(n, m),
                c: rand_mat(n, 1).column(0).into_owned(),
            })
            .collect();
        let initial_state = rand_mat(n, 1).column(0).into_owned();
        let output_targets = (0..horizon).map(|_| rand_mat(p, 1).column(0).into_owned()).collect();
        let input_refs = (0..horizon).map(|_| rand_mat(m, 1).column(0).into_owned()).collect();
        HorizonProblem {
            initial_state,
            stages,
            output: DMatrix::identity(p, n),
            output_targets,
            input_refs,
            output_weights: DVector::from_vec(vec![1.0, 1.0, 0.7]),
            input_weights: DVector::from_vec(vec![0.3, 2.0]),
            input_lower: DVector::from_element(m, -1.0),
            input_upper: DVector::from_element(m, 1.0),
            soft_bounds: soft.then(|| SoftOutputBounds {
                lower: DVector::from_element(p, -0.5),
                upper: DVector::from_element(p, 0.5),
                weight: 50.0,
                relative: horizon > 4,
            }),
            nominal_inputs: None,
            rate: rate.then(|| RatePenalty {
                weights: DVector::from_vec(vec![0.0, 3.0]),
                previous: DVector::from_vec(vec![0.2, -0.1]),
            }),
        }
    }

    /// Rolls the states forward and sums the stage costs directly.
    fn rollout_cost(pr: &HorizonProblem, u: &DVector<f64>) -> f64 {
        let m = pr.input_weights.len();
        let p = pr.output_weights.len();
        let mut s = pr.initial_state.clone();
        let nominal_u: DVector<f64> = pr.nominal_inputs.clone().unwrap_or_else(|| {
            DVector::from_iterator(pr.horizon() * m, pr.input_refs.iter().flat_map(|r| r.iter().copied()))
        });
        let mut s_nom = pr.initial_state.clone();
        let mut total = 0.0;
        for k in 0..pr.horizon() {
            let st = &pr.stages[k];
            let uk = u.rows(k * m, m).into_owned();
            s = &st.a * &s + &st.b * &uk + &st.c;
            s_nom = &st.a * &s_nom + &st.b * nominal_u.rows(k * m, m) + &st.c;
            let y = &pr.output * &s;
            let y_nom = &pr.output * &s_nom;
            for i in 0..p {
                total += pr.output_weights[i] * (y[i] - pr.output_targets[k][i]).powi(2);
                if let Some(sb) = &pr.soft_bounds {
                    let base = if sb.relative { pr.output_targets[k][i] } else { 0.0 };
                    let (lo, hi) = (base + sb.lower[i], base + sb.upper[i]);
                    if y_nom[i] > hi {
                        total += sb.weight * (y[i] - hi).powi(2);
                    } else if y_nom[i] < lo {
                        total += sb.weight * (y[i] - lo).powi(2);
                    }
                }
            }
            for j in 0..m {
                total += pr.input_weights[j] * (uk[j] - pr.input_refs[k][j]).powi(2);
                if let Some(rate) = &pr.rate {
                    let prev = if k == 0 { rate.previous[j] } else { u[(k - 1) * m + j] };
                    total += rate.weights[j] * (uk[j] - prev).powi(2);
                }
            }
        }
        total
    }

    #[test]
    fn single_stage_without_input_effect() {
        let pr = HorizonProblem {
            initial_state: DVector::from_vec(vec![0.3, -0.2, 0.1]),
            stages: vec![StageModel::linear(DMatrix::identity(3, 3), DMatrix::zeros(3, 2))],
            output: DMatrix::identity(3, 3),
            output_targets: vec![DVector::from_vec(vec![1.0, 2.0, 3.0])],
            input_refs: vec![DVector::from_vec(vec![1.5, 0.1])],
            output_weights: DVector::from_vec(vec![1.0, 1.0, 0.5]),
            input_weights: DVector::from_vec(vec![0.4, 3.0]),
            input_lower: DVector::from_element(2, -1.0),
            input_upper: DVector::from_element(2, 1.0),
            soft_bounds: None,
            nominal_inputs: None,
            rate: None,
        };
        let qp = condense(&pr).unwrap();
        let expected_h = DMatrix::from_diagonal(&DVector::from_vec(vec![0.8, 6.0]))
            + DMatrix::identity(2, 2) * HESSIAN_REGULARIZATION;
        assert!((qp.h - expected_h).amax() < 1e-15);
        assert!((qp.f[0] + 2.0 * 0.4 * 1.5).abs() < 1e-15);
        assert!((qp.f[1] + 2.0 * 3.0 * 0.1).abs() < 1e-15);
    }

    #[test]
    fn zero_weights_leave_only_regularization() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut pr = random_problem(&mut rng, 3, false, false);
        pr.output_weights = DVector::from_vec(vec![1.0, 1.0, 0.0]);
        pr.input_weights = DVector::zeros(2);
        for st in pr.stages.iter_mut() {
            st.b.fill(0.0);
        }
        let qp = condense(&pr).unwrap();
        assert!(qp.is_flat(1e-12));
        assert!((qp.h.clone() - DMatrix::identity(6, 6) * HESSIAN_REGULARIZATION).amax() == 0.0);
    }

    #[test]
    fn quadratic_form_equals_rollout_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for trial in 0..60 {
            let pr = random_problem(&mut rng, 3 + trial % 4, trial % 2 == 0, trial % 3 == 0);
            let qp = condense(&pr).unwrap();
            let u = DVector::from_fn(pr.horizon() * 2, |_, _| rng.random_range(-1.0..1.0));
            let direct = rollout_cost(&pr, &u);
            let condensed = qp.cost(&u);
            assert!(
                (direct - condensed).abs() < 1e-9 * direct.abs().max(1.0),
                "{direct} vs {condensed}"
            );
        }
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pr = random_problem(&mut rng, 3, false, false);
        pr.input_refs.pop();
        assert!(matches!(condense(&pr), Err(Error::DimensionMismatch(_))));
        let mut pr = random_problem(&mut rng, 3, false, false);
        pr.stages[1].b = DMatrix::zeros(3, 3);
        assert!(matches!(condense(&pr), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn hessian_is_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let pr = random_problem(&mut rng, 8, true, true);
            let qp = condense(&pr).unwrap();
            assert!(nalgebra::Cholesky::new(qp.h.clone()).is_some());
            assert_eq!(qp.h, qp.h.transpose());
        }
    }
}
