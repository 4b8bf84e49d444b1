//! Block-coordinate HiRRR for all-binary outcomes.
//!
//! The quadratic majorizer of the Bernoulli log-likelihood has curvature at
//! most 1/4, so every gradient step carries the fixed factor 4. Steps for A
//! and L̃ are accepted on their own data block, the B and μ steps on the
//! joint objective; each step backtracks by halving from a warm-started
//! trial size, so the trace never increases.

use ndarray::{Array1, Array2, Axis};

use crate::error::{HirrrError, Result};
use crate::expfam::Family;
use crate::kernels;
use crate::types::{Dataset, FitConfig, ModelParams};

use super::objective::{block_nll_theta, mean_matrix};
use super::{general, init, FitResult};

const MAX_HALVINGS: usize = 60;
const MU_HALVINGS: usize = 45;

fn nll(y: &Array2<f64>, theta: &Array2<f64>, families: &[Family]) -> f64 {
    block_nll_theta(y.view(), theta.view(), families, None)
}

/// Binary-specialized fit; weighted requests route to the general solver.
pub fn fit_hirrr_binary(ds: &Dataset, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate(ds)?;
    if ds.families.iter().any(|f| *f != Family::Bernoulli) {
        return Err(HirrrError::InvalidArgument(
            "binary solver requires all-Bernoulli outcome columns".into(),
        ));
    }
    for v in ds.y.iter().chain(ds.ytilde.iter()) {
        Family::Bernoulli.validate_support(*v)?;
    }
    if cfg.w.is_some() || cfg.wtilde.is_some() {
        return general::fit_hirrr_general(ds, cfg);
    }

    let n = ds.n();
    let n1 = ds.n1();
    let q = ds.q();
    let r = cfg.rank;
    let lam = cfg.lambda;
    let fams = &ds.families;

    let pinv = kernels::gram_pinv(ds.x.view())?;
    let mut mu = init::marginal_link(ds.y.view(), fams);
    let z = init::working_response(ds.y.view(), fams);
    let zc = &z - &mu;
    let pi_xt_z = pinv.dot(&ds.x.t().dot(&zc));
    let ztc = if n1 > 0 {
        &init::working_response(ds.ytilde.view(), fams) - &mu
    } else {
        Array2::zeros((0, q))
    };
    let (mut a, mut b, mut lt) = init::factor_init(pi_xt_z.view(), ztc.view(), r)?;

    let mut xa = ds.x.dot(&a);
    let mut th = xa.dot(&b.t());
    th += &mu;
    let mut osup = nll(&ds.y, &th, fams);
    let mut tht = if n1 > 0 {
        let mut t = lt.dot(&b.t());
        t += &mu;
        t
    } else {
        Array2::zeros((0, q))
    };
    let mut otil = if n1 > 0 { nll(&ds.ytilde, &tht, fams) } else { 0.0 };
    let mut obj = osup + lam * otil;
    let mut trace = vec![obj];

    let mut s_a = 1.0f64;
    let mut s_mu = 1.0f64;
    let mut s_l = 1.0f64;
    let mut converged = false;

    for _it in 0..cfg.max_iters {
        // A-step: majorizer gradient with the cached X·A updated in place.
        let resid = &ds.y - &mean_matrix(th.view(), fams);
        let g = 4.0 * &pinv.dot(&ds.x.t().dot(&resid.dot(&b)));
        let xg = ds.x.dot(&g);
        let mut s = (2.0 * s_a).min(1.0);
        for _ in 0..MAX_HALVINGS {
            let thn = &th + &(s * &xg.dot(&b.t()));
            let on = nll(&ds.y, &thn, fams);
            if on <= osup {
                a = a + s * &g;
                xa = xa + s * &xg;
                th = thn;
                osup = on;
                s_a = s;
                break;
            }
            s /= 2.0;
        }
        obj = osup + lam * otil;

        // B-step: Procrustes on the working-response cross products.
        let es = &xa.dot(&b.t()) + &(4.0 * &(&ds.y - &mean_matrix(th.view(), fams)));
        let mut m = es.t().dot(&xa);
        if n1 > 0 {
            let ets = &lt.dot(&b.t()) + &(4.0 * &(&ds.ytilde - &mean_matrix(tht.view(), fams)));
            m = m + lam * &ets.t().dot(&lt);
        }
        let bn = kernels::procrustes_solve(m.view())?.frame.into_cols();
        let mut thn = xa.dot(&bn.t());
        thn += &mu;
        let on_s = nll(&ds.y, &thn, fams);
        let (thtn, on_t) = if n1 > 0 {
            let mut t = lt.dot(&bn.t());
            t += &mu;
            let o = nll(&ds.ytilde, &t, fams);
            (t, o)
        } else {
            (Array2::zeros((0, q)), 0.0)
        };
        if on_s + lam * on_t <= obj {
            b = bn;
            th = thn;
            osup = on_s;
            if n1 > 0 {
                tht = thtn;
                otil = on_t;
            }
            obj = on_s + lam * on_t;
        }

        // μ-step: joint objective gradient with the majorizer's 1/4 curvature
        // scaling, so a unit step is the exact MM intercept update.
        let mut g = 4.0 * &(&ds.y - &mean_matrix(th.view(), fams)).sum_axis(Axis(0));
        let mut den = n as f64;
        if n1 > 0 {
            let gt = (&ds.ytilde - &mean_matrix(tht.view(), fams)).sum_axis(Axis(0));
            g = g + lam * 4.0 * &gt;
            den = n as f64 + lam * n1 as f64;
        }
        g /= den;
        let mut s = (2.0 * s_mu).min(1.0);
        let mut accepted = false;
        for _ in 0..MU_HALVINGS {
            let step = s * &g;
            let thn = &th + &step;
            let on_s = nll(&ds.y, &thn, fams);
            let (thtn, on_t) = if n1 > 0 {
                let t = &tht + &step;
                let o = nll(&ds.ytilde, &t, fams);
                (t, o)
            } else {
                (Array2::zeros((0, q)), 0.0)
            };
            if on_s + lam * on_t <= obj {
                mu = mu + &step;
                th = thn;
                osup = on_s;
                if n1 > 0 {
                    tht = thtn;
                    otil = on_t;
                }
                obj = on_s + lam * on_t;
                s_mu = s;
                accepted = true;
                break;
            }
            s /= 2.0;
        }
        if !accepted {
            s_mu = 2.0f64.powi(-44);
        }

        // L̃-step, accepted on its own block.
        if n1 > 0 {
            let g3 = 4.0 * &(&ds.ytilde - &mean_matrix(tht.view(), fams)).dot(&b);
            let mut s = (2.0 * s_l).min(1.0);
            for _ in 0..MAX_HALVINGS {
                let thtn = &tht + &(s * &g3.dot(&b.t()));
                let on_t = nll(&ds.ytilde, &thtn, fams);
                if on_t <= otil {
                    lt = lt + s * &g3;
                    tht = thtn;
                    otil = on_t;
                    s_l = s;
                    break;
                }
                s /= 2.0;
            }
            obj = osup + lam * otil;
        }

        trace.push(obj);
        let len = trace.len();
        if (trace[len - 2] - trace[len - 1]).abs() / (trace[len - 2].abs() + cfg.tolerance)
            < cfg.tolerance
        {
            converged = true;
            break;
        }
    }

    let iterations = trace.len() - 1;
    let params = ModelParams {
        a,
        b,
        mu,
        ltilde: lt,
        phi: Array1::ones(q),
        rank: r,
    };
    params.validate(fams)?;
    Ok(FitResult {
        params,
        objective_trace: trace,
        converged,
        iterations,
    })
}
