//! Per-column GLM baselines: logistic, Gaussian, and Poisson regression with
//! an intercept, fitted by iteratively reweighted least squares.
//!
//! Zero-variance feature columns are aliased out of the design and reported
//! with coefficient 0. Quasi-complete separation is surfaced through the
//! non-convergence flag; the last iterate is returned, never an error.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use ndarray_linalg::{Eigh, UPLO};

use crate::error::{HirrrError, Result};
use crate::expfam::Family;
use crate::types::{Dataset, ModelParams};

use super::objective::{block_nll_const, block_nll_theta};
use super::FitResult;

/// One fitted single-outcome GLM.
#[derive(Debug, Clone)]
pub struct GlmFit {
    pub intercept: f64,
    pub coefficients: Array1<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl GlmFit {
    /// Linear predictor η = β₀ + xβ for each row.
    pub fn linear_predictor(&self, x: ArrayView2<f64>) -> Array1<f64> {
        x.dot(&self.coefficients) + self.intercept
    }
}

/// Minimum-norm solve of the symmetric system h·β = rhs via its spectrum.
fn solve_sym_pinv(h: &Array2<f64>, rhs: &Array1<f64>) -> Result<Array1<f64>> {
    let (vals, vecs) = h
        .eigh(UPLO::Lower)
        .map_err(|e| HirrrError::InvalidArgument(format!("eigh failed: {e}")))?;
    let lmax = vals.iter().cloned().fold(0.0f64, f64::max);
    let cutoff = h.nrows() as f64 * f64::EPSILON * lmax;
    let proj = vecs.t().dot(rhs);
    let mut scaled = Array1::zeros(vals.len());
    for (i, v) in vals.iter().enumerate() {
        if *v > cutoff {
            scaled[i] = proj[i] / v;
        }
    }
    Ok(vecs.dot(&scaled))
}

/// Indices of feature columns with any variation across rows.
fn active_columns(x: ArrayView2<f64>) -> Vec<usize> {
    let (n, p) = x.dim();
    (0..p)
        .filter(|&j| {
            let first = x[[0, j]];
            (1..n).any(|i| x[[i, j]] != first)
        })
        .collect()
}

fn irls(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    family: Family,
    max_iters: usize,
    tolerance: f64,
) -> Result<GlmFit> {
    let n = x.nrows();
    if n == 0 || y.len() != n {
        return Err(HirrrError::InvalidArgument(format!(
            "need matching non-empty rows, got X {n} and y {}",
            y.len()
        )));
    }
    let active = active_columns(x);
    let pa = active.len();
    let mut design = Array2::ones((n, pa + 1));
    for (slot, &j) in active.iter().enumerate() {
        design.column_mut(slot + 1).assign(&x.column(j));
    }

    let mut beta = Array1::<f64>::zeros(pa + 1);
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..max_iters {
        iterations += 1;
        let eta = design.dot(&beta);
        let mut w = Array1::zeros(n);
        let mut z = Array1::zeros(n);
        for i in 0..n {
            let capped = eta[i].clamp(-30.0, 30.0);
            let m = family.mean(capped);
            let v = match family {
                Family::Gaussian => 1.0,
                Family::Bernoulli => (m * (1.0 - m)).max(1e-10),
                Family::Poisson => m.max(1e-10),
            };
            w[i] = v;
            z[i] = eta[i] + (y[i] - m) / v;
        }
        let weighted = &design * &w.view().insert_axis(Axis(1));
        let h = design.t().dot(&weighted);
        let rhs = design.t().dot(&(&w * &z));
        let beta_new = solve_sym_pinv(&h, &rhs)?;
        let delta = beta_new
            .iter()
            .zip(beta.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        beta = beta_new;
        if delta < tolerance {
            converged = true;
            break;
        }
    }

    let mut coefficients = Array1::zeros(x.ncols());
    for (slot, &j) in active.iter().enumerate() {
        coefficients[j] = beta[slot + 1];
    }
    Ok(GlmFit {
        intercept: beta[0],
        coefficients,
        converged,
        iterations,
    })
}

/// Maximum-likelihood logistic regression with an intercept.
///
/// Quasi-complete separation returns the last iterate with the
/// non-convergence flag set rather than an error.
pub fn fit_glm_logistic(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    max_iters: usize,
    tolerance: f64,
) -> Result<GlmFit> {
    for v in y.iter() {
        Family::Bernoulli.validate_support(*v)?;
    }
    let ones = y.iter().filter(|v| **v == 1.0).count();
    if ones == 0 || ones == y.len() {
        return Err(HirrrError::Domain(
            "single-class response: logistic fit is degenerate".into(),
        ));
    }
    irls(x, y, Family::Bernoulli, max_iters, tolerance)
}

/// Ordinary least squares with an intercept.
pub fn fit_glm_gaussian(x: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<GlmFit> {
    irls(x, y, Family::Gaussian, 2, f64::INFINITY)
}

/// Poisson log-linear regression with an intercept.
pub fn fit_glm_poisson(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    max_iters: usize,
    tolerance: f64,
) -> Result<GlmFit> {
    for v in y.iter() {
        Family::Poisson.validate_support(*v)?;
    }
    irls(x, y, Family::Poisson, max_iters, tolerance)
}

/// Fits every outcome column of the dataset by its own GLM and packs the
/// stack as a full-rank model (B = I, A = C) so prediction and reporting
/// treat it like any other fit. The single-record block is not used.
pub fn fit_glm_dataset(ds: &Dataset, max_iters: usize, tolerance: f64) -> Result<FitResult> {
    let (n, p) = ds.x.dim();
    let q = ds.q();
    let mut a = Array2::zeros((p, q));
    let mut mu = Array1::zeros(q);
    let mut phi = Array1::ones(q);
    let mut converged = true;
    let mut iterations = 0;
    for k in 0..q {
        let y = ds.y.column(k);
        let fit = match ds.families[k] {
            Family::Gaussian => fit_glm_gaussian(ds.x.view(), y)?,
            Family::Bernoulli => fit_glm_logistic(ds.x.view(), y, max_iters, tolerance)?,
            Family::Poisson => fit_glm_poisson(ds.x.view(), y, max_iters, tolerance)?,
        };
        mu[k] = fit.intercept;
        a.column_mut(k).assign(&fit.coefficients);
        converged &= fit.converged;
        iterations = iterations.max(fit.iterations);
        if ds.families[k] == Family::Gaussian {
            let eta = fit.linear_predictor(ds.x.view());
            let ss: f64 = eta
                .iter()
                .zip(y.iter())
                .map(|(e, v)| (v - e) * (v - e))
                .sum();
            phi[k] = (ss / n as f64).max(1e-12);
        }
    }
    let params = ModelParams {
        a,
        b: Array2::eye(q),
        mu,
        ltilde: Array2::zeros((0, q)),
        phi,
        rank: q,
    };
    params.validate(&ds.families)?;
    let theta = params.theta(&ds.x);
    let objective = block_nll_theta(ds.y.view(), theta.view(), &ds.families, None)
        + block_nll_const(ds.y.view(), &ds.families, None);
    Ok(FitResult {
        params,
        objective_trace: vec![objective],
        converged,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expfam::sigmoid;
    use approx::assert_abs_diff_eq;
    use ndarray::arr1;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn constant_column_gives_intercept_only_fit() {
        let x = Array2::from_elem((16, 1), 3.0);
        let mut y = Array1::zeros(16);
        for i in 0..4 {
            y[i] = 1.0;
        }
        let fit = fit_glm_logistic(x.view(), y.view(), 25, 1e-8).unwrap();
        let target = (0.25f64 / 0.75).ln();
        assert_abs_diff_eq!(fit.intercept, target, epsilon = 1e-6);
        assert_eq!(fit.coefficients[0], 0.0);
        assert!(fit.converged);
    }

    #[test]
    fn separation_sets_flag_and_stays_finite() {
        let n = 20;
        let mut x = Array2::zeros((n, 1));
        let mut y = Array1::zeros(n);
        for i in 0..n {
            x[[i, 0]] = i as f64 - 9.5;
            y[i] = f64::from(x[[i, 0]] > 0.0);
        }
        let fit = fit_glm_logistic(x.view(), y.view(), 25, 1e-8).unwrap();
        assert!(!fit.converged);
        assert!(fit.intercept.is_finite());
        assert!(fit.coefficients[0].is_finite());
        assert_eq!(fit.iterations, 25);
    }

    #[test]
    fn single_class_is_rejected() {
        let x = Array2::zeros((8, 2));
        let y = Array1::ones(8);
        assert!(fit_glm_logistic(x.view(), y.view(), 25, 1e-8).is_err());
        let y = Array1::zeros(8);
        assert!(fit_glm_logistic(x.view(), y.view(), 25, 1e-8).is_err());
    }

    #[test]
    fn monte_carlo_recovery_within_three_standard_errors() {
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        let n = 5000;
        let p = 3;
        let x = Array2::from_shape_simple_fn((n, p), || rng.sample::<f64, _>(StandardNormal));
        let beta = arr1(&[0.5, -0.3, 0.2]);
        let b0 = -0.4;
        let mut y = Array1::zeros(n);
        for i in 0..n {
            let pr = sigmoid(b0 + x.row(i).dot(&beta));
            y[i] = f64::from(rng.random::<f64>() < pr);
        }
        let fit = fit_glm_logistic(x.view(), y.view(), 50, 1e-10).unwrap();
        assert!(fit.converged);
        // Standard errors from the observed information at the fit.
        let mut design = Array2::ones((n, p + 1));
        for j in 0..p {
            design.column_mut(j + 1).assign(&x.column(j));
        }
        let eta = fit.linear_predictor(x.view());
        let mut h = Array2::<f64>::zeros((p + 1, p + 1));
        for i in 0..n {
            let m = sigmoid(eta[i]);
            let w = m * (1.0 - m);
            for a in 0..=p {
                for b in 0..=p {
                    h[[a, b]] += w * design[[i, a]] * design[[i, b]];
                }
            }
        }
        let (vals, vecs) = h.eigh(UPLO::Lower).unwrap();
        let hinv = {
            let inv = Array1::from_iter(vals.iter().map(|v| 1.0 / v));
            let scaled = &vecs * &inv.view().insert_axis(Axis(0));
            scaled.dot(&vecs.t())
        };
        let truth = [b0, beta[0], beta[1], beta[2]];
        let est = [
            fit.intercept,
            fit.coefficients[0],
            fit.coefficients[1],
            fit.coefficients[2],
        ];
        for j in 0..=p {
            let se = hinv[[j, j]].sqrt();
            assert!(
                (est[j] - truth[j]).abs() <= 3.0 * se,
                "coef {j}: {} vs {} (se {se})",
                est[j],
                truth[j]
            );
        }
    }

    #[test]
    fn gaussian_matches_normal_equations() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let n = 80;
        let x = Array2::from_shape_simple_fn((n, 2), || rng.sample::<f64, _>(StandardNormal));
        let y = Array1::from_shape_fn(n, |i| {
            1.5 + 0.7 * x[[i, 0]] - 0.2 * x[[i, 1]] + 0.1 * rng.sample::<f64, _>(StandardNormal)
        });
        let fit = fit_glm_gaussian(x.view(), y.view()).unwrap();
        // Direct normal equations on the centered data.
        let xm = crate::kernels::column_means(x.view());
        let ym = y.sum() / n as f64;
        let xc = &x - &xm;
        let yc = &y - ym;
        let pinv = crate::kernels::gram_pinv(xc.view()).unwrap();
        let b = pinv.dot(&xc.t().dot(&yc));
        for j in 0..2 {
            assert_abs_diff_eq!(fit.coefficients[j], b[j], epsilon = 1e-8);
        }
        assert_abs_diff_eq!(
            fit.intercept,
            ym - xm[0] * b[0] - xm[1] * b[1],
            epsilon = 1e-8
        );
    }

    #[test]
    fn poisson_recovers_log_linear_rates() {
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let n = 4000;
        let x = Array2::from_shape_simple_fn((n, 2), || rng.sample::<f64, _>(StandardNormal));
        let beta = arr1(&[0.4, -0.25]);
        let mut y = Array1::zeros(n);
        for i in 0..n {
            let lambda = (0.8 + x.row(i).dot(&beta)).exp();
            // Inversion sampling of a Poisson draw.
            let u: f64 = rng.random();
            let mut cum = (-lambda).exp();
            let mut k = 0.0;
            let mut prob = cum;
            while cum < u && k < 200.0 {
                k += 1.0;
                prob *= lambda / k;
                cum += prob;
            }
            y[i] = k;
        }
        let fit = fit_glm_poisson(x.view(), y.view(), 50, 1e-10).unwrap();
        assert!(fit.converged);
        assert_abs_diff_eq!(fit.intercept, 0.8, epsilon = 0.1);
        assert_abs_diff_eq!(fit.coefficients[0], 0.4, epsilon = 0.1);
        assert_abs_diff_eq!(fit.coefficients[1], -0.25, epsilon = 0.1);
    }

    #[test]
    fn dataset_fit_is_full_rank_identity_embedding() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let n = 120;
        let x = Array2::from_shape_simple_fn((n, 3), || rng.sample::<f64, _>(StandardNormal));
        let mut y = Array2::zeros((n, 2));
        for i in 0..n {
            y[[i, 0]] = f64::from(rng.random::<f64>() < sigmoid(0.5 * x[[i, 0]]));
            y[[i, 1]] = x[[i, 1]] + 0.2 * rng.sample::<f64, _>(StandardNormal);
        }
        let ds = crate::types::Dataset::new(
            x,
            y,
            Array2::zeros((0, 2)),
            1,
            vec![Family::Bernoulli, Family::Gaussian],
        )
        .unwrap();
        let fit = fit_glm_dataset(&ds, 25, 1e-8).unwrap();
        assert_eq!(fit.params.rank, 2);
        assert_eq!(fit.params.b, Array2::<f64>::eye(2));
        assert_eq!(fit.params.phi[0], 1.0);
        assert!(fit.params.phi[1] > 0.0);
        assert_eq!(fit.objective_trace.len(), 1);
    }
}
