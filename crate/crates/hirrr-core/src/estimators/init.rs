//! Shared warm start for the iterative fitters.
//!
//! μ⁰ is the column-wise marginal link of Y; A⁰ and B⁰ come from the rank-r
//! SVD of the Gaussian working-response solution (XᵀX)⁺Xᵀ(Z − 1μ⁰ᵀ), where Z
//! is the link-transformed Y (probabilities clipped at 1e-3 for Bernoulli);
//! L̃⁰ = (Z̃ − 1μ⁰ᵀ)B⁰.

use ndarray::{Array1, Array2, ArrayView2};
use ndarray_linalg::{JobSvd, SVDDC};

use crate::error::{HirrrError, Result};
use crate::expfam::Family;

const PROB_CLIP: f64 = 1e-3;

/// Link-transformed response for one cell.
fn link_value(fam: Family, y: f64) -> f64 {
    match fam {
        Family::Gaussian => y,
        Family::Bernoulli => {
            let p = y.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
            (p / (1.0 - p)).ln()
        }
        Family::Poisson => y.max(PROB_CLIP).ln(),
    }
}

/// Link-transformed matrix, column-wise by family.
pub fn working_response(y: ArrayView2<f64>, families: &[Family]) -> Array2<f64> {
    let (n, q) = y.dim();
    let mut z = Array2::zeros((n, q));
    for k in 0..q {
        for i in 0..n {
            z[[i, k]] = link_value(families[k], y[[i, k]]);
        }
    }
    z
}

/// Marginal link of the column means of Y.
pub fn marginal_link(y: ArrayView2<f64>, families: &[Family]) -> Array1<f64> {
    let (n, q) = y.dim();
    let mut mu = Array1::zeros(q);
    for k in 0..q {
        let mean = y.column(k).sum() / n as f64;
        mu[k] = link_value(families[k], mean);
    }
    mu
}

/// Initial (A, B, L̃) from the working-response solution.
///
/// `pi_xt_z` must be (XᵀX)⁺Xᵀ(Z − 1μᵀ), the Gaussian solution on the centered
/// working response; `ztilde_centered` is Z̃ − 1μᵀ (possibly empty).
pub fn factor_init(
    pi_xt_z: ArrayView2<f64>,
    ztilde_centered: ArrayView2<f64>,
    rank: usize,
) -> Result<(Array2<f64>, Array2<f64>, Array2<f64>)> {
    let (u, d, vt) = pi_xt_z
        .to_owned()
        .svddc(JobSvd::Some)
        .map_err(|e| HirrrError::InvalidArgument(format!("init svd failed: {e}")))?;
    let u = u.expect("thin svd u");
    let vt = vt.expect("thin svd vt");
    let p = pi_xt_z.nrows();
    let mut a = Array2::zeros((p, rank));
    for j in 0..rank {
        let dj = d[j];
        a.column_mut(j).assign(&(&u.column(j) * dj));
    }
    let mut b = Array2::zeros((pi_xt_z.ncols(), rank));
    for j in 0..rank {
        b.column_mut(j).assign(&vt.row(j));
    }
    let ltilde = if ztilde_centered.nrows() > 0 {
        ztilde_centered.dot(&b)
    } else {
        Array2::zeros((0, rank))
    };
    Ok((a, b, ltilde))
}
