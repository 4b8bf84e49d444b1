//! Internal objective evaluation for the iterative fitters.
//!
//! All traces use the unit-dispersion weighted negative log-likelihood
//! −Σ w·log f(y; θ, 1), so Gaussian, Bernoulli, and mixed fits report values
//! on one common scale. Dispersions are estimated afterwards and never feed
//! back into the step directions.

use ndarray::{Array2, ArrayView2};

use crate::expfam::Family;

/// The θ-dependent part of the block NLL: Σ w_ik (b(θ_ik) − y_ik θ_ik).
pub fn block_nll_theta(
    y: ArrayView2<f64>,
    theta: ArrayView2<f64>,
    families: &[Family],
    w: Option<&Array2<f64>>,
) -> f64 {
    let (n, q) = y.dim();
    let mut total = 0.0;
    for k in 0..q {
        let fam = families[k];
        let yk = y.column(k);
        let tk = theta.column(k);
        let mut col = 0.0;
        match w {
            None => {
                for i in 0..n {
                    col += fam.nll_theta_part(yk[i], tk[i]);
                }
            }
            Some(w) => {
                for i in 0..n {
                    let wik = w[[i, k]];
                    if wik != 0.0 {
                        col += wik * fam.nll_theta_part(yk[i], tk[i]);
                    }
                }
            }
        }
        total += col;
    }
    total
}

/// The θ-free part of the block NLL: Σ w_ik · (−c(y_ik; 1)); constant per fit.
pub fn block_nll_const(
    y: ArrayView2<f64>,
    families: &[Family],
    w: Option<&Array2<f64>>,
) -> f64 {
    let (n, q) = y.dim();
    let mut total = 0.0;
    for k in 0..q {
        let fam = families[k];
        for i in 0..n {
            let wik = w.map_or(1.0, |w| w[[i, k]]);
            if wik != 0.0 {
                total += wik * fam.nll_const(y[[i, k]]);
            }
        }
    }
    total
}

/// Mean response b′(θ) entrywise, with per-column families.
pub fn mean_matrix(theta: ArrayView2<f64>, families: &[Family]) -> Array2<f64> {
    let (n, q) = theta.dim();
    let mut m = Array2::zeros((n, q));
    for k in 0..q {
        let fam = families[k];
        for i in 0..n {
            m[[i, k]] = fam.mean(theta[[i, k]]);
        }
    }
    m
}

/// Weighted residual W ∘ (Y − b′(Θ)); with `w = None` the plain residual.
pub fn weighted_residual(
    y: ArrayView2<f64>,
    theta: ArrayView2<f64>,
    families: &[Family],
    w: Option<&Array2<f64>>,
) -> Array2<f64> {
    let (n, q) = y.dim();
    let mut res = Array2::zeros((n, q));
    for k in 0..q {
        let fam = families[k];
        for i in 0..n {
            let r = y[[i, k]] - fam.mean(theta[[i, k]]);
            res[[i, k]] = match w {
                None => r,
                Some(w) => w[[i, k]] * r,
            };
        }
    }
    res
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expfam::weighted_negloglik;
    use approx::assert_abs_diff_eq;
    use ndarray::{arr1, arr2};

    #[test]
    fn split_objective_matches_full_negloglik() {
        let y = arr2(&[[1.0, 2.0], [0.0, -0.5], [1.0, 1.25]]);
        let theta = arr2(&[[0.2, 1.0], [-0.4, 0.0], [1.5, -0.3]]);
        let fams = [Family::Bernoulli, Family::Gaussian];
        let w = arr2(&[[1.0, 0.5], [2.0, 1.0], [0.0, 3.0]]);
        let phi = arr1(&[1.0, 1.0]);
        let full =
            weighted_negloglik(y.view(), theta.view(), &fams, phi.view(), w.view()).unwrap();
        let split = block_nll_theta(y.view(), theta.view(), &fams, Some(&w))
            + block_nll_const(y.view(), &fams, Some(&w));
        assert_abs_diff_eq!(full, split, epsilon = 1e-12);
    }

    #[test]
    fn residual_and_mean_agree_with_families() {
        let y = arr2(&[[1.0, 3.0]]);
        let theta = arr2(&[[0.0, 3f64.ln()]]);
        let fams = [Family::Bernoulli, Family::Poisson];
        let m = mean_matrix(theta.view(), &fams);
        assert_abs_diff_eq!(m[[0, 0]], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(m[[0, 1]], 3.0, epsilon = 1e-12);
        let r = weighted_residual(y.view(), theta.view(), &fams, None);
        assert_abs_diff_eq!(r[[0, 0]], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(r[[0, 1]], 0.0, epsilon = 1e-12);
    }
}
