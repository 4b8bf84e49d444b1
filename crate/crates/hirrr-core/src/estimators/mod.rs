//! Model fitting: logistic baseline, classical RRR, and the HiRRR family.
//!
//! `fit_hirrr` dispatches to the fastest kernel that is valid for the data:
//! the Gaussian closed form, the binary block-coordinate solver, or the
//! general majorize-minimize solver for mixed families and weights.
//! `fit_rrr` is the same fit with the single-record block dropped and λ = 0.

pub mod binary;
pub mod gaussian;
pub mod general;
pub mod glm;
pub mod init;
pub mod objective;

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{HirrrError, Result};
use crate::expfam::Family;
use crate::types::{Dataset, FitConfig, ModelParams};

pub use binary::fit_hirrr_binary;
pub use gaussian::fit_hirrr_gaussian;
pub use general::fit_hirrr_general;
pub use glm::{fit_glm_dataset, fit_glm_gaussian, fit_glm_logistic, fit_glm_poisson, GlmFit};

/// A fitted model together with its optimization history.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: ModelParams,
    /// Objective values, one per outer iteration, initial value first.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl FitResult {
    /// Final objective value of the trace.
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("non-empty trace")
    }
}

/// Total weighted negative log-likelihood at unit dispersion, including the
/// constant parts: supervised block plus λ times the single-record block.
pub fn hirrr_objective(ds: &Dataset, cfg: &FitConfig, params: &ModelParams) -> f64 {
    let theta = params.theta(&ds.x);
    let mut obj =
        objective::block_nll_theta(ds.y.view(), theta.view(), &ds.families, cfg.w.as_ref())
            + objective::block_nll_const(ds.y.view(), &ds.families, cfg.w.as_ref());
    if ds.n1() > 0 {
        let theta_t = params.theta_tilde();
        obj += cfg.lambda
            * (objective::block_nll_theta(
                ds.ytilde.view(),
                theta_t.view(),
                &ds.families,
                cfg.wtilde.as_ref(),
            ) + objective::block_nll_const(ds.ytilde.view(), &ds.families, cfg.wtilde.as_ref()));
    }
    obj
}

fn all_family(ds: &Dataset, fam: Family) -> bool {
    ds.families.iter().all(|f| *f == fam)
}

fn unweighted(cfg: &FitConfig) -> bool {
    cfg.w.is_none() && cfg.wtilde.is_none()
}

/// Fits HiRRR with automatic kernel selection.
pub fn fit_hirrr(ds: &Dataset, cfg: &FitConfig) -> Result<FitResult> {
    if all_family(ds, Family::Gaussian) && unweighted(cfg) {
        fit_hirrr_gaussian(ds, cfg)
    } else if all_family(ds, Family::Bernoulli) && unweighted(cfg) {
        fit_hirrr_binary(ds, cfg)
    } else {
        fit_hirrr_general(ds, cfg)
    }
}

/// Classical RRR: the matching HiRRR fit with λ = 0 and no single-record rows.
pub fn fit_rrr(ds: &Dataset, cfg: &FitConfig) -> Result<FitResult> {
    let reduced = Dataset::new(
        ds.x.clone(),
        ds.y.clone(),
        Array2::zeros((0, ds.q())),
        ds.q0,
        ds.families.clone(),
    )?
    .with_names(ds.feature_names.clone(), ds.outcome_names.clone());
    let mut cfg0 = cfg.clone();
    cfg0.lambda = 0.0;
    cfg0.wtilde = None;
    fit_hirrr(&reduced, &cfg0)
}

/// Natural parameters Θ = 1μᵀ + X·A·Bᵀ on new rows, and the per-column means.
pub fn predict(
    params: &ModelParams,
    xnew: ArrayView2<f64>,
    families: &[Family],
) -> Result<(Array2<f64>, Array2<f64>)> {
    if xnew.ncols() != params.a.nrows() {
        return Err(HirrrError::InvalidArgument(format!(
            "model expects {} feature columns, got {}",
            params.a.nrows(),
            xnew.ncols()
        )));
    }
    if families.len() != params.b.nrows() {
        return Err(HirrrError::InvalidArgument(format!(
            "model has {} outcome columns but {} families given",
            params.b.nrows(),
            families.len()
        )));
    }
    let mut theta = xnew.dot(&params.a).dot(&params.b.t());
    theta += &params.mu;
    let means = objective::mean_matrix(theta.view(), families);
    Ok((theta, means))
}

/// Entry (j, k) = C_{jk} · sd_j with C = A·Bᵀ; zero-variance features map to 0.
pub fn standardized_coefficients(params: &ModelParams, feature_sd: ArrayView1<f64>) -> Array2<f64> {
    let mut c = params.coefficients();
    for (j, sd) in feature_sd.iter().enumerate() {
        let s = if *sd > 0.0 { *sd } else { 0.0 };
        for v in c.row_mut(j).iter_mut() {
            *v *= s;
        }
    }
    c
}
