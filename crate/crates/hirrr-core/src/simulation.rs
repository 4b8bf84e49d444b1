//! Synthetic-data generation and replication experiments.
//!
//! Two scenarios: continuous (Gaussian outcomes) and binary (Bernoulli
//! outcomes with the target-column prevalence calibrated by bisection).
//! `run_replications` fits a set of models on freshly generated replicates,
//! evaluates them on an independent multi-record test set, and aggregates
//! into a metric-by-model table. `n1_scaling_experiment` reruns the joint fit
//! over a grid of single-record sample sizes on nested data.

use ndarray::{s, Array1, Array2, Axis};
use ndarray_linalg::{JobSvd, SVDDC};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HirrrError, Result};
use crate::estimators::{fit_glm_dataset, fit_hirrr, fit_rrr, predict, FitResult};
use crate::expfam::{sigmoid, Family};
use crate::metrics::{
    auc, estimation_errors, prauc, prediction_errors, sensitivity_ppv_at_specificity,
    trimmed_mean_se, MetricsReport,
};
use crate::seeding::{stream_rng, StreamTag};
use crate::types::{Dataset, FitConfig};

/// Monte Carlo sample size for prevalence calibration.
const CALIBRATION_DRAWS: usize = 100_000;
/// Calibration stops once the Monte Carlo prevalence is this close to target.
const CALIBRATION_TOL: f64 = 0.002;
const CALIBRATION_MAX_ITERS: usize = 200;
/// Rows in the independently generated multi-record test set.
const TEST_SET_ROWS: usize = 2000;
/// Trim fraction per tail for aggregated tables.
const TABLE_TRIM: f64 = 0.10;
/// IRLS budget for the per-column GLM baseline.
const GLM_MAX_ITERS: usize = 25;
const GLM_TOLERANCE: f64 = 1e-8;

/// Outcome scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    Continuous,
    Binary,
}

/// Baseline or joint model to fit in a replication experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    Glm,
    Rrr,
    Hirrr,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Glm => "glm",
            ModelKind::Rrr => "rrr",
            ModelKind::Hirrr => "hirrr",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = HirrrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "glm" => Ok(ModelKind::Glm),
            "rrr" => Ok(ModelKind::Rrr),
            "hirrr" => Ok(ModelKind::Hirrr),
            other => Err(HirrrError::InvalidArgument(format!(
                "unknown model '{other}', expected glm, rrr, or hirrr"
            ))),
        }
    }
}

/// Full description of one synthetic experiment setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    /// Multi-record rows.
    pub n: usize,
    /// Single-record rows.
    pub n1: usize,
    /// Features.
    pub p: usize,
    /// Outcome columns.
    pub q: usize,
    /// Primary outcome columns (the first q0 of q).
    pub q0: usize,
    /// True rank of the coefficient matrix.
    pub r: usize,
    /// Signal scale: C = b·C₁C₂.
    pub b: f64,
    /// Target prevalence of the primary outcome (binary scenario only).
    pub target_prevalence: Option<f64>,
    pub seed: u64,
}

impl ScenarioSpec {
    /// Continuous scenario at the reference scale n=2000, n₁=7000, p=300.
    pub fn continuous(q: usize, r: usize, b: f64, seed: u64) -> Self {
        Self {
            scenario: Scenario::Continuous,
            n: 2000,
            n1: 7000,
            p: 300,
            q,
            q0: 1,
            r,
            b,
            target_prevalence: None,
            seed,
        }
    }

    /// Binary scenario at the reference scale n=2000, n₁=7000, p=300.
    pub fn binary(q: usize, r: usize, b: f64, target_prevalence: f64, seed: u64) -> Self {
        Self {
            scenario: Scenario::Binary,
            n: 2000,
            n1: 7000,
            p: 300,
            q,
            q0: 1,
            r,
            b,
            target_prevalence: Some(target_prevalence),
            seed,
        }
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 || self.q == 0 {
            return Err(HirrrError::InvalidArgument(
                "n, p, and q must be positive".into(),
            ));
        }
        if self.q0 < 1 || self.q0 > self.q {
            return Err(HirrrError::InvalidArgument(format!(
                "q0 = {} outside 1..={}",
                self.q0, self.q
            )));
        }
        if self.r < 1 || self.r > self.p.min(self.q) {
            return Err(HirrrError::InvalidArgument(format!(
                "rank {} outside 1..={}",
                self.r,
                self.p.min(self.q)
            )));
        }
        if !self.b.is_finite() || self.b < 0.0 {
            return Err(HirrrError::InvalidArgument(format!(
                "signal scale b must be finite and >= 0, got {}",
                self.b
            )));
        }
        match (self.scenario, self.target_prevalence) {
            (Scenario::Binary, None) => Err(HirrrError::InvalidArgument(
                "binary scenario needs a target prevalence".into(),
            )),
            (Scenario::Binary, Some(t)) if !(t > 0.001 && t < 0.999) => {
                Err(HirrrError::InvalidArgument(format!(
                    "target prevalence {t} outside (0.001, 0.999)"
                )))
            }
            (Scenario::Continuous, Some(_)) => Err(HirrrError::InvalidArgument(
                "continuous scenario takes no target prevalence".into(),
            )),
            _ => Ok(()),
        }
    }

    fn families(&self) -> Vec<Family> {
        let fam = match self.scenario {
            Scenario::Continuous => Family::Gaussian,
            Scenario::Binary => Family::Bernoulli,
        };
        vec![fam; self.q]
    }
}

/// The generating parameters behind one synthetic dataset.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// True coefficient matrix, p×q, rank r, primary column with largest norm.
    pub c: Array2<f64>,
    /// First column of C.
    pub beta: Array1<f64>,
    /// True intercepts (zero except μ₁ in the binary scenario).
    pub mu: Array1<f64>,
    /// True single-record scores X̃·A with A from the thin SVD of C.
    pub ltilde_true: Array2<f64>,
}

fn standard_normal_matrix(rng: &mut ChaCha12Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

/// Draws X, X̃, and C = b·C₁C₂ with the largest-norm column swapped to front.
fn draw_design(
    spec: &ScenarioSpec,
    rng: &mut ChaCha12Rng,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let x = standard_normal_matrix(rng, spec.n, spec.p);
    let xt = standard_normal_matrix(rng, spec.n1, spec.p);
    let c1 = standard_normal_matrix(rng, spec.p, spec.r);
    let c2 = standard_normal_matrix(rng, spec.r, spec.q);
    let mut c = c1.dot(&c2);
    c *= spec.b;
    let norms = c.map_axis(Axis(0), |col| col.dot(&col));
    let mut j = 0;
    for (k, v) in norms.iter().enumerate() {
        if *v > norms[j] {
            j = k;
        }
    }
    if j != 0 {
        for i in 0..spec.p {
            c.swap((i, 0), (i, j));
        }
    }
    (x, xt, c)
}

/// Bisection for the intercept whose Monte Carlo prevalence hits the target.
fn bisect_intercept(z: &Array1<f64>, target: f64) -> Result<f64> {
    let mut lo = -50.0f64;
    let mut hi = 50.0f64;
    let inv = 1.0 / z.len() as f64;
    for _ in 0..CALIBRATION_MAX_ITERS {
        let mid = 0.5 * (lo + hi);
        let m = z.iter().map(|zi| sigmoid(mid + zi)).sum::<f64>() * inv;
        if (m - target).abs() <= CALIBRATION_TOL {
            return Ok(mid);
        }
        if m < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(HirrrError::Calibration(format!(
        "prevalence {target} not reachable within [{lo}, {hi}]"
    )))
}

/// Shared prefix of the binary generator: design, C, and the calibrated μ₁.
fn draw_binary_signal(
    spec: &ScenarioSpec,
    rng: &mut ChaCha12Rng,
) -> Result<(Array2<f64>, Array2<f64>, Array2<f64>, f64)> {
    let (x, xt, c) = draw_design(spec, rng);
    let norm_beta = c.column(0).dot(&c.column(0)).sqrt();
    let z = Array1::from_shape_simple_fn(CALIBRATION_DRAWS, || {
        let v: f64 = rng.sample(StandardNormal);
        v * norm_beta
    });
    let target = spec.target_prevalence.expect("validated binary spec");
    let mu1 = bisect_intercept(&z, target)?;
    Ok((x, xt, c, mu1))
}

/// True left factor A = U_r·diag(d_r) from the thin SVD of C.
fn true_left_factor(c: &Array2<f64>, r: usize) -> Result<Array2<f64>> {
    let (u, sv, _) = c
        .clone()
        .svddc(JobSvd::Some)
        .map_err(|e| HirrrError::InvalidArgument(format!("svd failed: {e}")))?;
    let u = u.expect("JobSvd::Some returns U");
    let mut a = u.slice(s![.., ..r]).to_owned();
    for (k, mut col) in a.columns_mut().into_iter().enumerate() {
        col *= sv[k];
    }
    Ok(a)
}

fn fill_bernoulli(rng: &mut ChaCha12Rng, probs: &Array2<f64>) -> Array2<f64> {
    let mut y = Array2::<f64>::zeros(probs.dim());
    for (yv, pv) in y.iter_mut().zip(probs.iter()) {
        *yv = f64::from(rng.random::<f64>() < *pv);
    }
    y
}

/// Generates replicate `rep` of the spec on its own RNG stream.
pub fn generate_indexed(spec: &ScenarioSpec, rep: u64) -> Result<(Dataset, GroundTruth)> {
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, StreamTag::Generate, rep);
    let (x, xt, c, mu) = match spec.scenario {
        Scenario::Continuous => {
            let (x, xt, c) = draw_design(spec, &mut rng);
            (x, xt, c, Array1::zeros(spec.q))
        }
        Scenario::Binary => {
            let (x, xt, c, mu1) = draw_binary_signal(spec, &mut rng)?;
            let mut mu = Array1::zeros(spec.q);
            mu[0] = mu1;
            (x, xt, c, mu)
        }
    };
    let (y, ytilde) = match spec.scenario {
        Scenario::Continuous => {
            let e = standard_normal_matrix(&mut rng, spec.n, spec.q);
            let y = x.dot(&c) + e;
            let et = standard_normal_matrix(&mut rng, spec.n1, spec.q);
            let ytilde = xt.dot(&c) + et;
            (y, ytilde)
        }
        Scenario::Binary => {
            let probs = (x.dot(&c) + &mu).mapv(sigmoid);
            let y = fill_bernoulli(&mut rng, &probs);
            let probs_t = (xt.dot(&c) + &mu).mapv(sigmoid);
            let ytilde = fill_bernoulli(&mut rng, &probs_t);
            (y, ytilde)
        }
    };
    let a_true = true_left_factor(&c, spec.r)?;
    let ltilde_true = xt.dot(&a_true);
    let ds = Dataset::new(x, y, ytilde, spec.q0, spec.families())?;
    let truth = GroundTruth {
        beta: c.column(0).to_owned(),
        mu,
        ltilde_true,
        c,
    };
    Ok((ds, truth))
}

/// Generates the spec's base replicate (index 0).
pub fn generate(spec: &ScenarioSpec) -> Result<(Dataset, GroundTruth)> {
    generate_indexed(spec, 0)
}

/// The calibrated intercept μ₁ of the binary scenario.
///
/// Replays the same stream prefix as `generate`, so the returned value equals
/// `generate(spec)` ground truth μ₁ exactly.
pub fn calibrate_intercept(spec: &ScenarioSpec) -> Result<f64> {
    spec.validate()?;
    if spec.scenario != Scenario::Binary {
        return Err(HirrrError::InvalidArgument(
            "intercept calibration applies to the binary scenario".into(),
        ));
    }
    let mut rng = stream_rng(spec.seed, StreamTag::Generate, 0);
    let (_, _, _, mu1) = draw_binary_signal(spec, &mut rng)?;
    Ok(mu1)
}

/// Aggregated replication table: one row per metric, mean and sd per model.
#[derive(Debug, Clone)]
pub struct ReplicationTable {
    pub models: Vec<String>,
    pub rows: Vec<TableRow>,
    /// Replicates excluded per model (fit or metric failures).
    pub excluded: Vec<usize>,
}

/// One metric row; a cell is (mean, sd) over included replicates.
#[derive(Debug, Clone)]
pub struct TableRow {
    pub metric: String,
    pub cells: Vec<Option<(f64, f64)>>,
}

impl ReplicationTable {
    /// CSV with columns metric,{model}_mean,{model}_sd,... plus a trailing
    /// excluded-count row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric");
        for m in &self.models {
            out.push_str(&format!(",{m}_mean,{m}_sd"));
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.metric);
            for cell in &row.cells {
                match cell {
                    Some((mean, sd)) => out.push_str(&format!(",{mean},{sd}")),
                    None => out.push_str(",,"),
                }
            }
            out.push('\n');
        }
        out.push_str("excluded");
        for count in &self.excluded {
            out.push_str(&format!(",{count},"));
        }
        out.push('\n');
        out
    }
}

/// Per-replicate reports plus the aggregated table.
#[derive(Debug, Clone)]
pub struct ReplicationResult {
    pub models: Vec<ModelKind>,
    /// reports[model][rep]; `None` marks an excluded replicate.
    pub reports: Vec<Vec<Option<MetricsReport>>>,
    /// Indices of excluded replicates per model.
    pub excluded: Vec<Vec<usize>>,
    pub table: ReplicationTable,
}

/// Trimmed mean and sd when enough replicates survive, plain otherwise.
fn aggregate_cell(vals: &[f64]) -> Option<(f64, f64)> {
    if vals.is_empty() {
        return None;
    }
    let m = vals.len();
    let k = (TABLE_TRIM * m as f64).floor() as usize;
    let kept = m - 2 * k;
    if kept >= 3 {
        let (mean, se) = trimmed_mean_se(vals, TABLE_TRIM).ok()?;
        return Some((mean, se * (kept as f64).sqrt()));
    }
    let mean = vals.iter().sum::<f64>() / m as f64;
    let sd = if m > 1 {
        (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1) as f64).sqrt()
    } else {
        0.0
    };
    Some((mean, sd))
}

fn metric_columns(report: &MetricsReport) -> [(&'static str, Option<f64>); 13] {
    [
        ("auc", report.auc),
        ("prauc", report.prauc),
        ("sens_at_90", report.sens_at_90),
        ("ppv_at_90", report.ppv_at_90),
        ("sens_at_95", report.sens_at_95),
        ("ppv_at_95", report.ppv_at_95),
        ("er_beta", report.er_beta),
        ("er_c", report.er_c),
        ("er_u", report.er_u),
        ("er_v", report.er_v),
        ("er_d", report.er_d),
        ("pred_beta", report.pred_beta),
        ("pred_c", report.pred_c),
    ]
}

fn fit_model(kind: ModelKind, ds: &Dataset, cfg: &FitConfig) -> Result<FitResult> {
    match kind {
        ModelKind::Glm => fit_glm_dataset(ds, GLM_MAX_ITERS, GLM_TOLERANCE),
        ModelKind::Rrr => fit_rrr(ds, cfg),
        ModelKind::Hirrr => fit_hirrr(ds, cfg),
    }
}

fn evaluate_fit(
    fit: &FitResult,
    spec: &ScenarioSpec,
    truth: &GroundTruth,
    x_te: &Array2<f64>,
    labels: Option<&Array1<f64>>,
    families: &[Family],
) -> Result<MetricsReport> {
    let c_hat = fit.params.coefficients();
    let est = estimation_errors(c_hat.view(), truth.c.view(), spec.r)?;
    let (pred_beta, pred_c) = prediction_errors(x_te.view(), c_hat.view(), truth.c.view())?;
    let mut report = MetricsReport {
        er_beta: Some(est.er_beta),
        er_c: Some(est.er_c),
        er_u: Some(est.er_u),
        er_v: Some(est.er_v),
        er_d: Some(est.er_d),
        pred_beta: Some(pred_beta),
        pred_c: Some(pred_c),
        ..MetricsReport::default()
    };
    if let Some(labels) = labels {
        let (_, means) = predict(&fit.params, x_te.view(), families)?;
        let scores = means.column(0).to_owned();
        report.auc = Some(auc(scores.view(), labels.view())?);
        report.prauc = Some(prauc(scores.view(), labels.view())?);
        let (s90, p90, _) = sensitivity_ppv_at_specificity(scores.view(), labels.view(), 0.90)?;
        let (s95, p95, _) = sensitivity_ppv_at_specificity(scores.view(), labels.view(), 0.95)?;
        report.sens_at_90 = Some(s90);
        report.ppv_at_90 = Some(p90);
        report.sens_at_95 = Some(s95);
        report.ppv_at_95 = Some(p95);
    }
    Ok(report)
}

/// Fits each model on `reps` fresh replicates and aggregates the metrics.
///
/// Every replicate is evaluated on an independently generated test set of
/// 2000 multi-record rows. Replicates where a fit or a metric fails are
/// excluded from that model's aggregates and counted. Replicates run on the
/// current rayon pool; each derives its randomness from its own index, so
/// results do not depend on the number of worker threads.
pub fn run_replications(
    spec: &ScenarioSpec,
    models: &[ModelKind],
    cfg: &FitConfig,
    reps: usize,
) -> Result<ReplicationResult> {
    spec.validate()?;
    if reps == 0 {
        return Err(HirrrError::InvalidArgument("reps must be >= 1".into()));
    }
    if models.is_empty() {
        return Err(HirrrError::InvalidArgument(
            "at least one model required".into(),
        ));
    }
    let families = spec.families();
    let per_rep: Result<Vec<Vec<Option<MetricsReport>>>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let (ds, truth) = generate_indexed(spec, rep as u64)?;
            let mut te_rng = stream_rng(spec.seed, StreamTag::TestSet, rep as u64);
            let x_te = standard_normal_matrix(&mut te_rng, TEST_SET_ROWS, spec.p);
            let labels = match spec.scenario {
                Scenario::Continuous => None,
                Scenario::Binary => {
                    let probs = (x_te.dot(&truth.c) + &truth.mu).mapv(sigmoid);
                    let y_te = fill_bernoulli(&mut te_rng, &probs);
                    Some(y_te.column(0).to_owned())
                }
            };
            let row = models
                .iter()
                .map(|kind| {
                    fit_model(*kind, &ds, cfg)
                        .and_then(|fit| {
                            evaluate_fit(&fit, spec, &truth, &x_te, labels.as_ref(), &families)
                        })
                        .ok()
                })
                .collect();
            Ok(row)
        })
        .collect();
    let per_rep = per_rep?;
    let mut reports: Vec<Vec<Option<MetricsReport>>> = vec![Vec::with_capacity(reps); models.len()];
    let mut excluded: Vec<Vec<usize>> = vec![Vec::new(); models.len()];
    for (rep, row) in per_rep.into_iter().enumerate() {
        for (mi, outcome) in row.into_iter().enumerate() {
            if outcome.is_none() {
                excluded[mi].push(rep);
            }
            reports[mi].push(outcome);
        }
    }
    let metric_names: Vec<&'static str> = metric_columns(&MetricsReport::default())
        .iter()
        .map(|(name, _)| *name)
        .collect();
    let mut rows = Vec::new();
    for (row_idx, metric) in metric_names.iter().enumerate() {
        let mut cells = Vec::with_capacity(models.len());
        for model_reports in &reports {
            let vals: Vec<f64> = model_reports
                .iter()
                .flatten()
                .filter_map(|rep| metric_columns(rep)[row_idx].1)
                .collect();
            cells.push(aggregate_cell(&vals));
        }
        if cells.iter().any(Option::is_some) {
            rows.push(TableRow {
                metric: (*metric).to_string(),
                cells,
            });
        }
    }
    let table = ReplicationTable {
        models: models.iter().map(|m| m.name().to_string()).collect(),
        rows,
        excluded: excluded.iter().map(Vec::len).collect(),
    };
    Ok(ReplicationResult {
        models: models.to_vec(),
        reports,
        excluded,
        table,
    })
}

/// One grid point of the scaling experiment.
#[derive(Debug, Clone)]
pub struct ScalingRow {
    pub n1: usize,
    pub median_er_v: f64,
    /// median·(n + λ·n₁), the rate-normalized error.
    pub product: f64,
    pub excluded: usize,
}

/// Per-n₁ medians of Er(V_C) for the joint fit on nested data.
#[derive(Debug, Clone)]
pub struct ScalingTable {
    pub rows: Vec<ScalingRow>,
}

impl ScalingTable {
    /// CSV with columns n1,median_er_v,product.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n1,median_er_v,product\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{}\n",
                row.n1, row.median_er_v, row.product
            ));
        }
        out
    }
}

fn median(vals: &mut [f64]) -> f64 {
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = vals.len();
    if m % 2 == 1 {
        vals[m / 2]
    } else {
        0.5 * (vals[m / 2 - 1] + vals[m / 2])
    }
}

/// Reruns the joint fit varying only n₁ over an ascending grid.
///
/// Each replicate draws one dataset at the largest grid value and reuses its
/// leading n₁ single-record rows for the smaller cells, so cells differ only
/// in how much single-record data the fit sees. Replicates run on the current
/// rayon pool with per-index randomness, so results do not depend on the
/// number of worker threads.
pub fn n1_scaling_experiment(
    spec: &ScenarioSpec,
    n1_grid: &[usize],
    cfg: &FitConfig,
    reps: usize,
) -> Result<ScalingTable> {
    spec.validate()?;
    if reps == 0 {
        return Err(HirrrError::InvalidArgument("reps must be >= 1".into()));
    }
    if n1_grid.is_empty() || n1_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(HirrrError::InvalidArgument(
            "n1 grid must be non-empty and strictly ascending".into(),
        ));
    }
    let mut master = spec.clone();
    master.n1 = *n1_grid.last().expect("non-empty grid");
    let per_rep: Result<Vec<Vec<Option<f64>>>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let (ds, truth) = generate_indexed(&master, rep as u64)?;
            let mut row = Vec::with_capacity(n1_grid.len());
            for n1 in n1_grid {
                let sub = Dataset::new(
                    ds.x.clone(),
                    ds.y.clone(),
                    ds.ytilde.slice(s![..*n1, ..]).to_owned(),
                    ds.q0,
                    ds.families.clone(),
                )?;
                match fit_hirrr(&sub, cfg) {
                    Ok(fit) => {
                        let c_hat = fit.params.coefficients();
                        let est = estimation_errors(c_hat.view(), truth.c.view(), spec.r)?;
                        row.push(Some(est.er_v));
                    }
                    Err(_) => row.push(None),
                }
            }
            Ok(row)
        })
        .collect();
    let per_rep = per_rep?;
    let mut vals: Vec<Vec<f64>> = vec![Vec::with_capacity(reps); n1_grid.len()];
    let mut excluded = vec![0usize; n1_grid.len()];
    for row in per_rep {
        for (gi, v) in row.into_iter().enumerate() {
            match v {
                Some(v) => vals[gi].push(v),
                None => excluded[gi] += 1,
            }
        }
    }
    let mut rows = Vec::with_capacity(n1_grid.len());
    for (gi, n1) in n1_grid.iter().enumerate() {
        if vals[gi].is_empty() {
            return Err(HirrrError::InvalidArgument(format!(
                "all replicates failed at n1 = {n1}"
            )));
        }
        let med = median(&mut vals[gi]);
        rows.push(ScalingRow {
            n1: *n1,
            median_er_v: med,
            product: med * (spec.n as f64 + cfg.lambda * *n1 as f64),
            excluded: excluded[gi],
        });
    }
    Ok(ScalingTable { rows })
}
