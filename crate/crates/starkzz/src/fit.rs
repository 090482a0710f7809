//! Damped (Levenberg–Marquardt) nonlinear least squares with a
//! finite-difference Jacobian.
//!
//! The residual closure returns one entry per data point; the solver
//! minimizes the sum of squared residuals. Weighting is the caller's
//! responsibility (divide residuals by per-point sigmas).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Converged when the largest parameter step, relative to the parameter
    /// scale, falls below this.
    pub rel_step_tol: f64,
    /// Converged when the gradient infinity-norm falls below this.
    pub grad_tol: f64,
    /// Relative finite-difference step for the Jacobian.
    pub fd_rel_step: f64,
    pub lambda_init: f64,
    /// Scale the covariance by reduced chi-square (use when residuals are
    /// unweighted; leave off when they are already in sigma units).
    pub scale_covariance: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            rel_step_tol: 1e-8,
            grad_tol: 1e-10,
            fd_rel_step: 1e-6,
            lambda_init: 1e-3,
            scale_covariance: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: Vec<f64>,
    /// One-sigma parameter uncertainties from the covariance diagonal.
    pub uncertainties: Vec<f64>,
    pub covariance: DMatrix<f64>,
    /// Sum of squared residuals at the solution.
    pub chi2: f64,
    pub iterations: usize,
    pub residual_count: usize,
}

fn fd_jacobian<F>(f: &F, x: &[f64], r0: &DVector<f64>, rel_step: f64) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let m = r0.len();
    let n = x.len();
    let mut jac = DMatrix::<f64>::zeros(m, n);
    let mut xp = x.to_vec();
    for i in 0..n {
        let h = rel_step * x[i].abs().max(1.0);
        xp[i] = x[i] + h;
        let rp = DVector::from_vec(f(&xp));
        xp[i] = x[i];
        for k in 0..m {
            jac[(k, i)] = (rp[k] - r0[k]) / h;
        }
    }
    jac
}

fn covariance(jac: &DMatrix<f64>) -> DMatrix<f64> {
    let a = jac.transpose() * jac;
    let n = a.nrows();
    match a.clone().cholesky() {
        Some(ch) => ch.inverse(),
        None => a
            .svd(true, true)
            .pseudo_inverse(1e-12)
            .unwrap_or_else(|_| DMatrix::zeros(n, n)),
    }
}

/// Minimize the sum of squared residuals over the parameters, starting from
/// `x0`.
pub fn least_squares<F>(residuals: F, x0: &[f64], opts: &FitOptions) -> Result<FitResult>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut r = DVector::from_vec(residuals(&x));
    let m = r.len();
    if m < n {
        return Err(Error::InsufficientData(format!(
            "{m} residuals cannot constrain {n} parameters"
        )));
    }
    let mut chi2 = r.norm_squared();
    let mut lambda = opts.lambda_init;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iterations {
        iterations += 1;
        let jac = fd_jacobian(&residuals, &x, &r, opts.fd_rel_step);
        let grad = jac.transpose() * &r;
        if grad.amax() < opts.grad_tol {
            converged = true;
            break;
        }
        let a = jac.transpose() * &jac;
        let diag_floor = (0..n).map(|i| a[(i, i)]).fold(0.0_f64, f64::max) * 1e-12;

        let mut stepped = false;
        for _ in 0..40 {
            let mut damped = a.clone();
            for i in 0..n {
                damped[(i, i)] += lambda * a[(i, i)].max(diag_floor).max(1e-300);
            }
            let delta = match damped.cholesky() {
                Some(ch) => ch.solve(&(-&grad)),
                None => {
                    lambda *= 4.0;
                    continue;
                }
            };
            let xt: Vec<f64> = x.iter().zip(delta.iter()).map(|(xi, di)| xi + di).collect();
            let rt = DVector::from_vec(residuals(&xt));
            let chi2t = rt.norm_squared();
            if chi2t.is_finite() && chi2t <= chi2 {
                let rel_step = delta
                    .iter()
                    .zip(&x)
                    .map(|(di, xi)| di.abs() / xi.abs().max(1.0))
                    .fold(0.0_f64, f64::max);
                x = xt;
                r = rt;
                chi2 = chi2t;
                lambda = (lambda / 3.0).max(1e-12);
                stepped = true;
                if rel_step < opts.rel_step_tol {
                    converged = true;
                }
                break;
            }
            lambda *= 4.0;
            if lambda > 1e14 {
                break;
            }
        }
        if converged {
            break;
        }
        if !stepped {
            // Damping saturated: the quadratic model cannot improve; treat a
            // tiny gradient as convergence, otherwise report failure.
            if grad.amax() < opts.grad_tol.max(1e-8 * chi2.sqrt().max(1.0)) {
                converged = true;
                break;
            }
            return Err(Error::FitFailure {
                iterations,
                chi2,
                best: x,
            });
        }
    }

    if !converged && iterations >= opts.max_iterations {
        return Err(Error::FitFailure {
            iterations,
            chi2,
            best: x,
        });
    }

    let jac = fd_jacobian(&residuals, &x, &r, opts.fd_rel_step);
    let mut cov = covariance(&jac);
    if opts.scale_covariance && m > n {
        cov *= chi2 / (m - n) as f64;
    }
    let uncertainties = (0..n).map(|i| cov[(i, i)].max(0.0).sqrt()).collect();
    Ok(FitResult {
        params: x,
        uncertainties,
        covariance: cov,
        chi2,
        iterations,
        residual_count: m,
    })
}

/// Least-squares fit of `y ≈ c·cos(x + φ₀) + d`; returns (c, φ₀, d) with
/// c ≥ 0. Linear in the (cos, sin, 1) basis, solved by normal equations.
pub fn fit_cosine(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 3 {
        return Err(Error::InsufficientData(
            "cosine fit needs at least 3 points".into(),
        ));
    }
    let mut m = nalgebra::Matrix3::<f64>::zeros();
    let mut rhs = nalgebra::Vector3::<f64>::zeros();
    for (&x, &y) in xs.iter().zip(ys) {
        let basis = nalgebra::Vector3::new(x.cos(), x.sin(), 1.0);
        m += basis * basis.transpose();
        rhs += basis * y;
    }
    let sol = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::InsufficientData("degenerate cosine-fit grid".into()))?;
    // a cos x + b sin x = c cos(x + φ₀) with c = hypot(a,b), φ₀ = atan2(−b, a)
    let (a, b, d) = (sol[0], sol[1], sol[2]);
    Ok((a.hypot(b), (-b).atan2(a), d))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exact_linear_model() {
        let xs: Vec<f64> = (0..10).map(|k| k as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let res = least_squares(
            |p| {
                xs.iter()
                    .zip(&ys)
                    .map(|(x, y)| p[0] * x + p[1] - y)
                    .collect()
            },
            &[0.5, 0.0],
            &FitOptions::default(),
        )
        .unwrap();
        assert!((res.params[0] - 2.0).abs() < 1e-9);
        assert!((res.params[1] - 1.0).abs() < 1e-9);
        assert!(res.chi2 < 1e-16);
    }

    #[test]
    fn recovers_exponential_decay() {
        let ms = [2.0, 8.0, 16.0, 24.0, 32.0];
        let ys: Vec<f64> = ms.iter().map(|m| 0.9 * 0.97_f64.powf(*m)).collect();
        let res = least_squares(
            |p| {
                ms.iter()
                    .zip(&ys)
                    .map(|(m, y)| p[0] * p[1].powf(*m) - y)
                    .collect()
            },
            &[1.0, 0.9],
            &FitOptions::default(),
        )
        .unwrap();
        assert!((res.params[0] - 0.9).abs() < 1e-8);
        assert!((res.params[1] - 0.97).abs() < 1e-9);
    }

    #[test]
    fn constant_model_uncertainty_is_standard_error() {
        let ys = [1.0, 2.0, 3.0];
        let opts = FitOptions {
            scale_covariance: true,
            ..FitOptions::default()
        };
        let res = least_squares(
            |p| ys.iter().map(|y| p[0] - y).collect(),
            &[0.0],
            &opts,
        )
        .unwrap();
        assert!((res.params[0] - 2.0).abs() < 1e-10);
        // chi2 = 2, dof = 2, (JᵀJ)⁻¹ = 1/3 → sigma = sqrt(1/3)
        assert!((res.uncertainties[0] - (1.0_f64 / 3.0).sqrt()).abs() < 1e-8);
    }

    #[test]
    fn iteration_cap_reports_best_point() {
        let opts = FitOptions {
            max_iterations: 1,
            rel_step_tol: 0.0,
            grad_tol: 0.0,
            ..FitOptions::default()
        };
        let err = least_squares(
            |p| vec![(p[0] - 3.0) * (p[0] - 3.0) + 1.0, p[0] - 3.0],
            &[0.0],
            &opts,
        )
        .unwrap_err();
        match err {
            Error::FitFailure { best, .. } => assert_eq!(best.len(), 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn underdetermined_fit_rejected() {
        assert!(matches!(
            least_squares(|p| vec![p[0] + p[1]], &[0.0, 0.0], &FitOptions::default()),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn cosine_fit_exact_recovery() {
        let xs: Vec<f64> = (0..24)
            .map(|k| std::f64::consts::TAU * k as f64 / 24.0)
            .collect();
        let ys: Vec<f64> = xs.iter().map(|x| 1.4 * (x + 0.7).cos() + 0.2).collect();
        let (c, phi0, d) = fit_cosine(&xs, &ys).unwrap();
        assert!((c - 1.4).abs() < 1e-10);
        assert!((phi0 - 0.7).abs() < 1e-10);
        assert!((d - 0.2).abs() < 1e-10);
    }
}
