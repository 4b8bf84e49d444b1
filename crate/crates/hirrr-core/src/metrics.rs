//! Classification metrics, estimation-error metrics, trimmed aggregation,
//! Fisher's exact test, and Benjamini-Hochberg adjustment.
//!
//! Scores are compared with exact float equality when grouping ties, so every
//! metric here is a deterministic function of its inputs. The naive
//! per-element accumulation orders are kept on purpose: enumeration oracles
//! reproduce them bit for bit.

use ndarray::{ArrayView1, ArrayView2};
use ndarray_linalg::{JobSvd, SVDDC};

use crate::error::{HirrrError, Result};
use crate::expfam::ln_factorial;

/// One row of evaluation results; absent entries serialize as empty cells.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    pub auc: Option<f64>,
    pub prauc: Option<f64>,
    pub sens_at_90: Option<f64>,
    pub ppv_at_90: Option<f64>,
    pub sens_at_95: Option<f64>,
    pub ppv_at_95: Option<f64>,
    pub er_beta: Option<f64>,
    pub er_c: Option<f64>,
    pub er_u: Option<f64>,
    pub er_v: Option<f64>,
    pub er_d: Option<f64>,
    pub pred_beta: Option<f64>,
    pub pred_c: Option<f64>,
}

impl MetricsReport {
    /// Fixed CSV column order.
    pub const CSV_HEADER: &'static str = "auc,prauc,sens_at_90,ppv_at_90,sens_at_95,ppv_at_95,er_beta,er_c,er_u,er_v,er_d,pred_beta,pred_c";

    /// The report as one CSV row matching [`Self::CSV_HEADER`].
    pub fn csv_row(&self) -> String {
        let cells = [
            self.auc,
            self.prauc,
            self.sens_at_90,
            self.ppv_at_90,
            self.sens_at_95,
            self.ppv_at_95,
            self.er_beta,
            self.er_c,
            self.er_u,
            self.er_v,
            self.er_d,
            self.pred_beta,
            self.pred_c,
        ];
        cells
            .iter()
            .map(|c| c.map(|v| v.to_string()).unwrap_or_default())
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Subspace and singular-value discrepancies between two coefficient matrices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimationErrors {
    pub er_beta: f64,
    pub er_c: f64,
    pub er_u: f64,
    pub er_v: f64,
    pub er_d: f64,
}

fn check_scores_labels(
    scores: ArrayView1<f64>,
    labels: ArrayView1<f64>,
) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(HirrrError::InvalidArgument(format!(
            "scores length {} != labels length {}",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(HirrrError::InvalidArgument(
            "scores must be finite".into(),
        ));
    }
    let mut npos = 0;
    let mut nneg = 0;
    for &l in labels.iter() {
        if l == 1.0 {
            npos += 1;
        } else if l == 0.0 {
            nneg += 1;
        } else {
            return Err(HirrrError::Domain(format!(
                "labels must be 0 or 1, found {l}"
            )));
        }
    }
    Ok((npos, nneg))
}

/// Indices sorted ascending by score, stable across equal scores.
fn ascending_order(scores: ArrayView1<f64>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    idx
}

/// Probability that a random positive outscores a random negative, ties
/// counted one half; the average-rank form of pairwise concordance.
pub fn auc(scores: ArrayView1<f64>, labels: ArrayView1<f64>) -> Result<f64> {
    let (npos, nneg) = check_scores_labels(scores, labels)?;
    if npos == 0 || nneg == 0 {
        return Err(HirrrError::UndefinedMetric(
            "auc needs both classes present".into(),
        ));
    }
    let order = ascending_order(scores);
    let n = order.len();
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Average 1-based rank of the tie group [i, j].
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] == 1.0 {
                rank_sum_pos += rank;
            }
        }
        i = j + 1;
    }
    let npos_f = npos as f64;
    Ok((rank_sum_pos - npos_f * (npos_f + 1.0) / 2.0) / (npos_f * nneg as f64))
}

/// Step-wise average precision: each positive contributes the precision of
/// the cut placed at its own score, divided by the number of positives.
pub fn prauc(scores: ArrayView1<f64>, labels: ArrayView1<f64>) -> Result<f64> {
    let (npos, _) = check_scores_labels(scores, labels)?;
    if npos == 0 {
        return Err(HirrrError::UndefinedMetric(
            "prauc needs at least one positive".into(),
        ));
    }
    let mut order = ascending_order(scores);
    order.reverse();
    let n = order.len();
    let npos_f = npos as f64;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut ap = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let pos_here = order[i..=j].iter().filter(|&&k| labels[k] == 1.0).count();
        tp += pos_here;
        fp += (j - i + 1) - pos_here;
        let prec = tp as f64 / (tp + fp) as f64;
        for _ in 0..pos_here {
            ap += prec / npos_f;
        }
        i = j + 1;
    }
    Ok(ap)
}

/// Sensitivity, PPV, and the threshold achieving a target specificity.
///
/// The threshold is the smallest observed score with a fraction of negatives
/// strictly below it of at least `specificity`; "positive" then means score
/// at or above the threshold. When no observed score qualifies the classifier
/// predicts nothing: threshold +inf, sensitivity 0, PPV reported as 0.
pub fn sensitivity_ppv_at_specificity(
    scores: ArrayView1<f64>,
    labels: ArrayView1<f64>,
    specificity: f64,
) -> Result<(f64, f64, f64)> {
    if !(specificity > 0.0 && specificity < 1.0) {
        return Err(HirrrError::InvalidArgument(format!(
            "specificity must lie in (0, 1), got {specificity}"
        )));
    }
    let (npos, nneg) = check_scores_labels(scores, labels)?;
    if npos == 0 || nneg == 0 {
        return Err(HirrrError::UndefinedMetric(
            "sensitivity/PPV need both classes present".into(),
        ));
    }
    let order = ascending_order(scores);
    let n = order.len();
    let nneg_f = nneg as f64;
    let mut neg_below = 0usize;
    let mut threshold = f64::INFINITY;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        if neg_below as f64 / nneg_f >= specificity {
            threshold = scores[order[i]];
            break;
        }
        neg_below += order[i..=j].iter().filter(|&&k| labels[k] == 0.0).count();
        i = j + 1;
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    for k in 0..n {
        if scores[k] >= threshold {
            if labels[k] == 1.0 {
                tp += 1;
            } else {
                fp += 1;
            }
        }
    }
    let sens = tp as f64 / npos as f64;
    let ppv = if tp + fp > 0 {
        tp as f64 / (tp + fp) as f64
    } else {
        0.0
    };
    Ok((sens, ppv, threshold))
}

/// Squared-error metrics between estimated and true coefficient matrices:
/// primary-column error, whole-matrix error, rank-r left/right singular
/// subspace projector errors, and singular-value error.
pub fn estimation_errors(
    c_hat: ArrayView2<f64>,
    c_true: ArrayView2<f64>,
    r: usize,
) -> Result<EstimationErrors> {
    let (p, q) = c_true.dim();
    if c_hat.dim() != (p, q) {
        return Err(HirrrError::InvalidArgument(format!(
            "coefficient shapes differ: {:?} vs {:?}",
            c_hat.dim(),
            c_true.dim()
        )));
    }
    if r == 0 || r > p.min(q) {
        return Err(HirrrError::InvalidArgument(format!(
            "rank {r} outside 1..={}",
            p.min(q)
        )));
    }
    let er_beta = c_hat
        .column(0)
        .iter()
        .zip(c_true.column(0).iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / p as f64;
    let er_c = c_hat
        .iter()
        .zip(c_true.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / (p as f64 * q as f64);

    let (uh, sh, vth) = c_hat
        .to_owned()
        .svddc(JobSvd::Some)
        .map_err(|e| HirrrError::InvalidArgument(format!("svd failed: {e}")))?;
    let (ut, st, vtt) = c_true
        .to_owned()
        .svddc(JobSvd::Some)
        .map_err(|e| HirrrError::InvalidArgument(format!("svd failed: {e}")))?;
    let (uh, vth) = (uh.unwrap(), vth.unwrap());
    let (ut, vtt) = (ut.unwrap(), vtt.unwrap());

    let uh_r = uh.slice(ndarray::s![.., ..r]);
    let ut_r = ut.slice(ndarray::s![.., ..r]);
    let vh_r = vth.slice(ndarray::s![..r, ..]);
    let vt_r = vtt.slice(ndarray::s![..r, ..]);

    let du = &uh_r.dot(&uh_r.t()) - &ut_r.dot(&ut_r.t());
    let dv = &vh_r.t().dot(&vh_r) - &vt_r.t().dot(&vt_r);
    let er_u = du.iter().map(|v| v * v).sum::<f64>() / r as f64;
    let er_v = dv.iter().map(|v| v * v).sum::<f64>() / r as f64;
    let er_d = (0..r).map(|i| (sh[i] - st[i]).powi(2)).sum::<f64>() / r as f64;

    Ok(EstimationErrors {
        er_beta,
        er_c,
        er_u,
        er_v,
        er_d,
    })
}

/// Mean squared error of the fitted linear predictors on a design X:
/// primary column over n, whole matrix over n*q.
pub fn prediction_errors(
    x: ArrayView2<f64>,
    c_hat: ArrayView2<f64>,
    c_true: ArrayView2<f64>,
) -> Result<(f64, f64)> {
    let (n, p) = x.dim();
    let (pc, q) = c_true.dim();
    if c_hat.dim() != (pc, q) || pc != p {
        return Err(HirrrError::InvalidArgument(format!(
            "design {:?} and coefficients {:?}/{:?} do not conform",
            x.dim(),
            c_hat.dim(),
            c_true.dim()
        )));
    }
    let diff = &c_hat - &c_true;
    let xd = x.dot(&diff);
    let pred_beta = xd.column(0).iter().map(|v| v * v).sum::<f64>() / n as f64;
    let pred_c = xd.iter().map(|v| v * v).sum::<f64>() / (n as f64 * q as f64);
    Ok((pred_beta, pred_c))
}

/// Mean and standard error after dropping floor(trim*m) values per tail.
pub fn trimmed_mean_se(values: &[f64], trim: f64) -> Result<(f64, f64)> {
    if !(0.0..0.5).contains(&trim) {
        return Err(HirrrError::InvalidArgument(format!(
            "trim fraction must lie in [0, 0.5), got {trim}"
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(HirrrError::InvalidArgument(
            "trimmed mean requires finite values".into(),
        ));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = (trim * sorted.len() as f64).floor() as usize;
    let kept = &sorted[k..sorted.len() - k];
    let m = kept.len();
    if m < 3 {
        return Err(HirrrError::InvalidArgument(format!(
            "need at least 3 values after trimming, have {m}"
        )));
    }
    let mean = kept.iter().sum::<f64>() / m as f64;
    let var = kept.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1) as f64;
    let se = (var / m as f64).sqrt();
    Ok((mean, se))
}

fn ln_choose(n: u64, k: u64) -> f64 {
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

/// Two-sided Fisher's exact test by probability-mass ordering: the summed
/// hypergeometric mass of all tables with the observed margins whose
/// probability does not exceed the observed one (relative slack 1e-7 for
/// float ties).
pub fn fisher_exact(table: [[u64; 2]; 2]) -> Result<f64> {
    let [[a, b], [c, d]] = table;
    let r1 = a + b;
    let r2 = c + d;
    let c1 = a + c;
    let c2 = b + d;
    if r1 == 0 || r2 == 0 || c1 == 0 || c2 == 0 {
        return Err(HirrrError::UndefinedMetric(
            "fisher_exact requires all margins positive".into(),
        ));
    }
    let n = r1 + r2;
    let log_denom = ln_choose(n, r1);
    let log_prob = |k: u64| ln_choose(c1, k) + ln_choose(c2, r1 - k) - log_denom;
    let k_min = r1.saturating_sub(c2);
    let k_max = r1.min(c1);
    let cut = log_prob(a) + 1e-7f64.ln_1p();
    let mut p = 0.0;
    for k in k_min..=k_max {
        let lp = log_prob(k);
        if lp <= cut {
            p += lp.exp();
        }
    }
    Ok(p.min(1.0))
}

/// Benjamini-Hochberg step-up adjustment, returned in input order.
pub fn bh_adjust(p_values: &[f64]) -> Result<Vec<f64>> {
    for &p in p_values {
        if !(0.0..=1.0).contains(&p) {
            return Err(HirrrError::InvalidArgument(format!(
                "p-value {p} outside [0, 1]"
            )));
        }
    }
    let m = p_values.len();
    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_by(|&a, &b| p_values[a].partial_cmp(&p_values[b]).unwrap());
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for rank in (0..m).rev() {
        let raw = p_values[idx[rank]];
        let stepped = (raw * m as f64 / (rank + 1) as f64).min(1.0);
        running = running.min(stepped);
        adjusted[idx[rank]] = running;
    }
    Ok(adjusted)
}
