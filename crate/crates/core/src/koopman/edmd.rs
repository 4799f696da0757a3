//! Least-squares identification of lifted linear dynamics.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Relative singular value cutoff for the pseudo-inverse.
pub const PINV_RTOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct EdmdFit {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

/// Pseudo-inverse of a symmetric positive semidefinite matrix, dropping
/// singular values below `PINV_RTOL * sigma_max`.
pub fn pinv_psd(g: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = g.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cut = PINV_RTOL * smax;
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let mut inv = DMatrix::zeros(g.ncols(), g.nrows());
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cut && s > 0.0 {
            inv += (vt.row(i).transpose() * u.column(i).transpose()) / s;
        }
    }
    inv
}

/// Fits `z_next ~ A z + B u` with samples stored column-wise.
///
/// Solves `[A B] = Z' Phi^T (Phi Phi^T)^+` with `Phi = [Z; U]`, which is the
/// minimum-norm least-squares solution when the data are rank deficient.
pub fn fit_edmd(z: &DMatrix<f64>, z_next: &DMatrix<f64>, u: &DMatrix<f64>) -> Result<EdmdFit> {
    let d = z.nrows();
    let m = u.nrows();
    let k = z.ncols();
    if z_next.nrows() != d || z_next.ncols() != k || u.ncols() != k {
        return Err(Error::DimensionMismatch(format!(
            "z is {d}x{k}, z_next is {}x{}, u is {m}x{}",
            z_next.nrows(),
            z_next.ncols(),
            u.ncols()
        )));
    }
    if k < d + m {
        return Err(Error::InsufficientData {
            needed: d + m,
            found: k,
        });
    }
    if z.iter().chain(z_next.iter()).chain(u.iter()).any(|v| !v.is_finite()) {
        return Err(Error::invalid("edmd data", "contains non-finite values"));
    }
    let mut phi = DMatrix::zeros(d + m, k);
    phi.rows_mut(0, d).copy_from(z);
    phi.rows_mut(d, m).copy_from(u);
    let gram = &phi * phi.transpose();
    let cross = z_next * phi.transpose();
    let ab = cross * pinv_psd(&gram);
    Ok(EdmdFit {
        a: ab.columns(0, d).into_owned(),
        b: ab.columns(d, m).into_owned(),
    })
}

/// Sum of squared one-step prediction errors.
pub fn edmd_objective(fit: &EdmdFit, z: &DMatrix<f64>, z_next: &DMatrix<f64>, u: &DMatrix<f64>) -> f64 {
    (z_next - &fit.a * z - &fit.b * u).norm_squared()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputMap {
    pub c: DMatrix<f64>,
    /// Squared-error residual of `x ~ C z` over the data.
    pub residual: f64,
    /// Whether the raw state sits in the first rows of `z`.
    pub exact: bool,
}

pub const OUTPUT_MAP_TOL: f64 = 1e-12;

/// Recovers `C` with `x = C z`. For a stacked lifting this is the selection
/// matrix `[I 0]`; otherwise the least-squares map is returned with its
/// residual and `exact` set to false.
pub fn fit_output_map(states: &DMatrix<f64>, lifted: &DMatrix<f64>) -> Result<OutputMap> {
    let n = states.nrows();
    let d = lifted.nrows();
    if states.ncols() != lifted.ncols() || d < n {
        return Err(Error::DimensionMismatch(format!(
            "states are {n}x{}, lifted {d}x{}",
            states.ncols(),
            lifted.ncols()
        )));
    }
    let mut c = DMatrix::zeros(n, d);
    c.view_mut((0, 0), (n, n)).fill_with_identity();
    let residual = (states - &c * lifted).norm_squared();
    if residual <= OUTPUT_MAP_TOL {
        return Ok(OutputMap {
            c,
            residual,
            exact: true,
        });
    }
    let gram = lifted * lifted.transpose();
    let c = states * lifted.transpose() * pinv_psd(&gram);
    let residual = (states - &c * lifted).norm_squared();
    Ok(OutputMap {
        c,
        residual,
        exact: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn scalar_linear_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = random(1, 100, &mut rng);
        let mut z = DMatrix::zeros(1, 100);
        let mut zn = DMatrix::zeros(1, 100);
        let mut x = 1.0;
        for k in 0..100 {
            z[(0, k)] = x;
            x = 0.9 * x + 0.1 * u[(0, k)];
            zn[(0, k)] = x;
        }
        let fit = fit_edmd(&z, &zn, &u).unwrap();
        assert!((fit.a[(0, 0)] - 0.9).abs() < 1e-8);
        assert!((fit.b[(0, 0)] - 0.1).abs() < 1e-8);
    }

    #[test]
    fn stationary_data() {
        let c = nalgebra::DVector::from_vec(vec![0.3, -1.2, 2.0]);
        let z = DMatrix::from_fn(3, 20, |i, _| c[i]);
        let u = DMatrix::zeros(2, 20);
        let fit = fit_edmd(&z, &z, &u).unwrap();
        assert!((&fit.a * &z - &z).amax() < 1e-10);
        assert!(fit.b.amax() < 1e-12);
    }

    #[test]
    fn normal_equation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for trial in 0..20 {
            let d = 1 + trial % 4;
            let k = 30 + trial;
            let z = random(d, k, &mut rng);
            let zn = random(d, k, &mut rng);
            let u = random(2, k, &mut rng);
            let fit = fit_edmd(&z, &zn, &u).unwrap();
            // Independent assembly: solve (Phi Phi^T) X^T = Phi Z'^T by LU.
            let phi = DMatrix::from_fn(d + 2, k, |i, j| if i < d { z[(i, j)] } else { u[(i - d, j)] });
            let lhs = &phi * phi.transpose();
            let rhs = &phi * zn.transpose();
            let x = lhs.lu().solve(&rhs).unwrap().transpose();
            assert!((fit.a - x.columns(0, d)).amax() < 1e-8);
            assert!((fit.b - x.columns(d, 2)).amax() < 1e-8);
        }
    }

    #[test]
    fn perturbation_never_improves() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = random(4, 60, &mut rng);
        let zn = random(4, 60, &mut rng);
        let u = random(2, 60, &mut rng);
        let fit = fit_edmd(&z, &zn, &u).unwrap();
        let base = edmd_objective(&fit, &z, &zn, &u);
        for _ in 0..100 {
            let p = EdmdFit {
                a: &fit.a + random(4, 4, &mut rng) * 1e-3,
                b: &fit.b + random(4, 2, &mut rng) * 1e-3,
            };
            assert!(edmd_objective(&p, &z, &zn, &u) >= base);
        }
    }

    #[test]
    fn too_few_samples() {
        let z = DMatrix::zeros(4, 5);
        let u = DMatrix::zeros(2, 5);
        assert!(matches!(
            fit_edmd(&z, &z, &u),
            Err(Error::InsufficientData { needed: 6, found: 5 })
        ));
    }

    #[test]
    fn stacked_lifting_gives_selection() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(3, 40, &mut rng);
        let extra = random(5, 40, &mut rng);
        let lifted = DMatrix::from_fn(8, 40, |i, j| if i < 3 { x[(i, j)] } else { extra[(i - 3, j)] });
        let map = fit_output_map(&x, &lifted).unwrap();
        assert!(map.exact);
        assert_eq!(map.residual, 0.0);
        assert_eq!(map.c.columns(0, 3), DMatrix::<f64>::identity(3, 3));
        assert!(map.c.columns(3, 5).iter().all(|&v| v == 0.0));
        let plain = fit_output_map(&x, &x).unwrap();
        assert_eq!(plain.c, DMatrix::<f64>::identity(3, 3));
    }

    #[test]
    fn dropping_raw_state_is_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(3, 40, &mut rng);
        let lifted = DMatrix::from_fn(5, 40, |i, j| match i {
            0 => x[(1, j)],
            1 => x[(2, j)],
            _ => (x[(0, j)] * 3.0).sin() + i as f64,
        });
        let map = fit_output_map(&x, &lifted).unwrap();
        assert!(!map.exact);
        assert!(map.residual > 1e-6);
    }
}
