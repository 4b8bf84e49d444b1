//! Model selection: (rank, λ) cross-validation and repeated random splits.
//!
//! Folds and splits partition only the multi-record rows; the single-record
//! block always accompanies the training side in full. Partitions stratify on
//! the primary outcome when it is binary, so rare events reach every fold.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HirrrError, Result};
use crate::estimators::{fit_glm_dataset, fit_hirrr, fit_rrr, objective, predict, FitResult};
use crate::expfam::Family;
use crate::metrics::{auc, prauc, sensitivity_ppv_at_specificity, MetricsReport};
use crate::seeding::{stream_rng, StreamTag};
use crate::simulation::ModelKind;
use crate::types::{Dataset, FitConfig};

/// Maximum refold attempts when a fold lacks a primary-outcome class.
const MAX_REFOLDS: usize = 10;

/// Score used to pick the best grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CvCriterion {
    /// Held-out supervised log-likelihood (weighted when weights are given).
    HeldOutWeightedLoglik,
    /// Held-out AUC of the first outcome column.
    TargetAuc,
}

/// Cross-validation grid over ranks and penalty values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvGrid {
    pub ranks: Vec<usize>,
    pub lambdas: Vec<f64>,
    pub folds: usize,
    pub criterion: CvCriterion,
    pub seed: u64,
}

impl CvGrid {
    /// Five-fold grid scored by held-out log-likelihood.
    pub fn new(ranks: Vec<usize>, lambdas: Vec<f64>) -> Self {
        Self {
            ranks,
            lambdas,
            folds: 5,
            criterion: CvCriterion::HeldOutWeightedLoglik,
            seed: 0,
        }
    }

    /// Checks the grid against a dataset.
    pub fn validate(&self, ds: &Dataset) -> Result<()> {
        if self.ranks.is_empty() || self.lambdas.is_empty() {
            return Err(HirrrError::InvalidArgument(
                "rank and lambda grids must be non-empty".into(),
            ));
        }
        if self.folds < 2 {
            return Err(HirrrError::InvalidArgument(format!(
                "folds must be >= 2, got {}",
                self.folds
            )));
        }
        if ds.n() < self.folds {
            return Err(HirrrError::InvalidArgument(format!(
                "{} folds need at least that many rows, have {}",
                self.folds,
                ds.n()
            )));
        }
        let rmax = ds.p().min(ds.q());
        for r in &self.ranks {
            if *r < 1 || *r > rmax {
                return Err(HirrrError::InvalidArgument(format!(
                    "rank {r} outside 1..={rmax}"
                )));
            }
        }
        for lam in &self.lambdas {
            if !(lam.is_finite() && *lam >= 0.0) {
                return Err(HirrrError::InvalidArgument(format!(
                    "lambda must be finite and >= 0, got {lam}"
                )));
            }
        }
        Ok(())
    }
}

/// One scored fold of one grid cell.
#[derive(Debug, Clone)]
pub struct CvCell {
    pub rank: usize,
    pub lambda: f64,
    pub fold: usize,
    pub criterion_value: f64,
}

/// Grid scores plus the selected cell.
#[derive(Debug, Clone)]
pub struct CvResult {
    pub best_rank: usize,
    pub best_lambda: f64,
    /// All fold scores in grid order (ranks outer, lambdas inner, folds last).
    pub cells: Vec<CvCell>,
    /// How many refolds were needed to get two-class folds.
    pub refolds: usize,
}

impl CvResult {
    /// Scores as CSV with columns rank,lambda,fold,criterion_value.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,lambda,fold,criterion_value\n");
        for cell in &self.cells {
            out.push_str(&format!(
                "{},{},{},{}\n",
                cell.rank, cell.lambda, cell.fold, cell.criterion_value
            ));
        }
        out
    }
}

/// Repeated stratified train/test split plan for the multi-record rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train_fraction: f64,
    pub repeats: usize,
    pub include_all_single_records_in_training: bool,
    pub seed: u64,
}

impl Default for SplitPlan {
    fn default() -> Self {
        Self {
            train_fraction: 0.9,
            repeats: 10,
            include_all_single_records_in_training: true,
            seed: 0,
        }
    }
}

impl SplitPlan {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(HirrrError::InvalidArgument(format!(
                "train fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if self.repeats == 0 {
            return Err(HirrrError::InvalidArgument("repeats must be >= 1".into()));
        }
        Ok(())
    }
}

/// A named model entry for the split comparison.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub name: String,
    pub kind: ModelKind,
    pub config: FitConfig,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, config: FitConfig) -> Self {
        Self {
            name: kind.name().to_string(),
            kind,
            config,
        }
    }
}

/// Fits one model kind under its config.
pub fn fit_model_kind(kind: ModelKind, ds: &Dataset, cfg: &FitConfig) -> Result<FitResult> {
    match kind {
        ModelKind::Glm => fit_glm_dataset(ds, cfg.max_iters, cfg.tolerance),
        ModelKind::Rrr => fit_rrr(ds, cfg),
        ModelKind::Hirrr => fit_hirrr(ds, cfg),
    }
}

/// Per-repeat reports and their arithmetic mean and sd per model.
#[derive(Debug, Clone)]
pub struct SplitsResult {
    pub models: Vec<String>,
    /// reports[model][repeat]; `None` for flagged repeats.
    pub reports: Vec<Vec<Option<MetricsReport>>>,
    /// Repeats whose test split lacked a class even after one resample.
    pub flagged: Vec<usize>,
    pub mean: Vec<MetricsReport>,
    pub sd: Vec<MetricsReport>,
}

impl SplitsResult {
    /// Summary CSV: one row per model and statistic over the metric columns.
    pub fn to_csv(&self) -> String {
        let mut out = format!("model,stat,{}\n", MetricsReport::CSV_HEADER);
        for (mi, model) in self.models.iter().enumerate() {
            out.push_str(&format!("{model},mean,{}\n", self.mean[mi].csv_row()));
            out.push_str(&format!("{model},sd,{}\n", self.sd[mi].csv_row()));
        }
        out
    }
}

/// Fold id per multi-record row: shuffled round-robin, within each primary
/// class when stratified.
fn assign_folds(
    n: usize,
    strata: Option<&Array1<f64>>,
    folds: usize,
    rng: &mut ChaCha12Rng,
) -> Vec<usize> {
    let mut assignment = vec![0usize; n];
    let groups: Vec<Vec<usize>> = match strata {
        None => vec![(0..n).collect()],
        Some(labels) => {
            let ones = (0..n).filter(|i| labels[*i] == 1.0).collect();
            let zeros = (0..n).filter(|i| labels[*i] != 1.0).collect();
            vec![ones, zeros]
        }
    };
    for mut group in groups {
        group.shuffle(rng);
        for (pos, row) in group.into_iter().enumerate() {
            assignment[row] = pos % folds;
        }
    }
    assignment
}

fn select_rows(m: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    m.select(Axis(0), rows)
}

/// Training dataset from the given multi-record rows, keeping the whole
/// single-record block (or dropping it entirely).
fn train_subset(ds: &Dataset, rows: &[usize], keep_single_records: bool) -> Result<Dataset> {
    let ytilde = if keep_single_records {
        ds.ytilde.clone()
    } else {
        Array2::zeros((0, ds.q()))
    };
    let sub = Dataset::new(
        select_rows(&ds.x, rows),
        select_rows(&ds.y, rows),
        ytilde,
        ds.q0,
        ds.families.clone(),
    )?;
    Ok(sub.with_names(ds.feature_names.clone(), ds.outcome_names.clone()))
}

fn subset_config(cfg: &FitConfig, rows: &[usize]) -> FitConfig {
    let mut sub = cfg.clone();
    sub.w = cfg.w.as_ref().map(|w| select_rows(w, rows));
    sub
}

fn primary_is_binary(ds: &Dataset) -> bool {
    ds.families[0] == Family::Bernoulli
}

fn both_classes(labels: &Array1<f64>) -> bool {
    labels.iter().any(|v| *v == 1.0) && labels.iter().any(|v| *v != 1.0)
}

/// Scores every (rank, λ) cell by `folds`-fold cross-validation and returns
/// the best cell, ties broken toward smaller rank then smaller λ.
pub fn cross_validate<F>(
    ds: &Dataset,
    grid: &CvGrid,
    base: &FitConfig,
    fitter: F,
) -> Result<CvResult>
where
    F: Fn(&Dataset, &FitConfig) -> Result<FitResult>,
{
    grid.validate(ds)?;
    let n = ds.n();
    let primary = ds.y.column(0).to_owned();
    let stratify = primary_is_binary(ds);
    let need_two_classes = grid.criterion == CvCriterion::TargetAuc;
    if need_two_classes && !stratify {
        return Err(HirrrError::InvalidArgument(
            "AUC criterion needs a binary primary outcome".into(),
        ));
    }

    // Refold until every held-out fold sees both classes (AUC only).
    let mut assignment = Vec::new();
    let mut refolds = 0;
    for attempt in 0..=MAX_REFOLDS {
        let mut rng = stream_rng(grid.seed, StreamTag::CvFold, attempt as u64);
        let strata = stratify.then_some(&primary);
        assignment = assign_folds(n, strata, grid.folds, &mut rng);
        if !need_two_classes {
            break;
        }
        let ok = (0..grid.folds).all(|f| {
            let held: Vec<f64> = (0..n)
                .filter(|i| assignment[*i] == f)
                .map(|i| primary[i])
                .collect();
            both_classes(&Array1::from_vec(held))
        });
        if ok {
            break;
        }
        refolds = attempt + 1;
        if attempt == MAX_REFOLDS {
            return Err(HirrrError::Domain(format!(
                "no two-class folding found in {MAX_REFOLDS} attempts"
            )));
        }
    }

    let mut cells = Vec::with_capacity(grid.ranks.len() * grid.lambdas.len() * grid.folds);
    for rank in &grid.ranks {
        for lambda in &grid.lambdas {
            for fold in 0..grid.folds {
                let train_rows: Vec<usize> =
                    (0..n).filter(|i| assignment[*i] != fold).collect();
                let held_rows: Vec<usize> =
                    (0..n).filter(|i| assignment[*i] == fold).collect();
                let train = train_subset(ds, &train_rows, true)?;
                let mut cfg = subset_config(base, &train_rows);
                cfg.rank = *rank;
                cfg.lambda = *lambda;
                let fit = fitter(&train, &cfg)?;
                let x_held = select_rows(&ds.x, &held_rows);
                let y_held = select_rows(&ds.y, &held_rows);
                let value = match grid.criterion {
                    CvCriterion::HeldOutWeightedLoglik => {
                        let theta = fit.params.theta(&x_held);
                        let w_held = base.w.as_ref().map(|w| select_rows(w, &held_rows));
                        -(objective::block_nll_theta(
                            y_held.view(),
                            theta.view(),
                            &ds.families,
                            w_held.as_ref(),
                        ) + objective::block_nll_const(
                            y_held.view(),
                            &ds.families,
                            w_held.as_ref(),
                        ))
                    }
                    CvCriterion::TargetAuc => {
                        let (_, means) = predict(&fit.params, x_held.view(), &ds.families)?;
                        auc(means.column(0), y_held.column(0))?
                    }
                };
                cells.push(CvCell {
                    rank: *rank,
                    lambda: *lambda,
                    fold,
                    criterion_value: value,
                });
            }
        }
    }

    // Mean score per cell, candidates ordered by (rank, lambda) so that the
    // first strict maximum realizes the parsimony tie-break.
    let mut candidates: Vec<(usize, f64, f64)> = Vec::new();
    for rank in &grid.ranks {
        for lambda in &grid.lambdas {
            let scores: Vec<f64> = cells
                .iter()
                .filter(|c| c.rank == *rank && c.lambda == *lambda)
                .map(|c| c.criterion_value)
                .collect();
            let mean = scores.iter().sum::<f64>() / scores.len() as f64;
            candidates.push((*rank, *lambda, mean));
        }
    }
    candidates.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.partial_cmp(&b.1).unwrap()));
    let mut best = candidates[0];
    for cand in &candidates[1..] {
        if cand.2 > best.2 {
            best = *cand;
        }
    }
    Ok(CvResult {
        best_rank: best.0,
        best_lambda: best.1,
        cells,
        refolds,
    })
}

fn classification_report(
    fit: &FitResult,
    x_test: &Array2<f64>,
    labels: &Array1<f64>,
    families: &[Family],
) -> Result<MetricsReport> {
    let (_, means) = predict(&fit.params, x_test.view(), families)?;
    let scores = means.column(0).to_owned();
    let (s90, p90, _) = sensitivity_ppv_at_specificity(scores.view(), labels.view(), 0.90)?;
    let (s95, p95, _) = sensitivity_ppv_at_specificity(scores.view(), labels.view(), 0.95)?;
    Ok(MetricsReport {
        auc: Some(auc(scores.view(), labels.view())?),
        prauc: Some(prauc(scores.view(), labels.view())?),
        sens_at_90: Some(s90),
        ppv_at_90: Some(p90),
        sens_at_95: Some(s95),
        ppv_at_95: Some(p95),
        ..MetricsReport::default()
    })
}

fn report_fields(report: &MetricsReport) -> [Option<f64>; 13] {
    [
        report.auc,
        report.prauc,
        report.sens_at_90,
        report.ppv_at_90,
        report.sens_at_95,
        report.ppv_at_95,
        report.er_beta,
        report.er_c,
        report.er_u,
        report.er_v,
        report.er_d,
        report.pred_beta,
        report.pred_c,
    ]
}

fn report_from_fields(fields: [Option<f64>; 13]) -> MetricsReport {
    MetricsReport {
        auc: fields[0],
        prauc: fields[1],
        sens_at_90: fields[2],
        ppv_at_90: fields[3],
        sens_at_95: fields[4],
        ppv_at_95: fields[5],
        er_beta: fields[6],
        er_c: fields[7],
        er_u: fields[8],
        er_v: fields[9],
        er_d: fields[10],
        pred_beta: fields[11],
        pred_c: fields[12],
    }
}

/// Mean and sd (ddof 1, zero for a single value) per metric over reports.
fn summarize(reports: &[Option<MetricsReport>]) -> (MetricsReport, MetricsReport) {
    let mut means = [None; 13];
    let mut sds = [None; 13];
    for idx in 0..13 {
        let vals: Vec<f64> = reports
            .iter()
            .flatten()
            .filter_map(|rep| report_fields(rep)[idx])
            .collect();
        if vals.is_empty() {
            continue;
        }
        let m = vals.len();
        let mean = vals.iter().sum::<f64>() / m as f64;
        let sd = if m > 1 {
            (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1) as f64).sqrt()
        } else {
            0.0
        };
        means[idx] = Some(mean);
        sds[idx] = Some(sd);
    }
    (report_from_fields(means), report_from_fields(sds))
}

/// Repeated stratified 90/10 comparison of models on held-out multi-record
/// rows. The single-record block stays on the training side per the plan.
pub fn run_random_splits(
    ds: &Dataset,
    plan: &SplitPlan,
    models: &[ModelSpec],
) -> Result<SplitsResult> {
    plan.validate()?;
    if models.is_empty() {
        return Err(HirrrError::InvalidArgument(
            "at least one model required".into(),
        ));
    }
    if !primary_is_binary(ds) {
        return Err(HirrrError::InvalidArgument(
            "random splits need a binary primary outcome".into(),
        ));
    }
    let n = ds.n();
    if n < 2 {
        return Err(HirrrError::InvalidArgument(
            "need at least two multi-record rows".into(),
        ));
    }
    let primary = ds.y.column(0).to_owned();
    let mut reports: Vec<Vec<Option<MetricsReport>>> =
        vec![Vec::with_capacity(plan.repeats); models.len()];
    let mut flagged = Vec::new();
    for repeat in 0..plan.repeats {
        let mut rng = stream_rng(plan.seed, StreamTag::Split, repeat as u64);
        // One resample is allowed before the repeat is flagged.
        let mut chosen: Option<(Vec<usize>, Vec<usize>)> = None;
        for _ in 0..2 {
            let assignment = assign_split(n, &primary, plan.train_fraction, &mut rng);
            let test_labels: Vec<f64> = (0..n)
                .filter(|i| !assignment[*i])
                .map(|i| primary[i])
                .collect();
            if both_classes(&Array1::from_vec(test_labels)) {
                let train: Vec<usize> = (0..n).filter(|i| assignment[*i]).collect();
                let test: Vec<usize> = (0..n).filter(|i| !assignment[*i]).collect();
                chosen = Some((train, test));
                break;
            }
        }
        let Some((train_rows, test_rows)) = chosen else {
            flagged.push(repeat);
            for model_reports in &mut reports {
                model_reports.push(None);
            }
            continue;
        };
        let train = train_subset(
            ds,
            &train_rows,
            plan.include_all_single_records_in_training,
        )?;
        let x_test = select_rows(&ds.x, &test_rows);
        let labels = Array1::from_iter(test_rows.iter().map(|i| primary[*i]));
        for (mi, model) in models.iter().enumerate() {
            let cfg = subset_config(&model.config, &train_rows);
            let fit = fit_model_kind(model.kind, &train, &cfg)?;
            let report = classification_report(&fit, &x_test, &labels, &ds.families)?;
            reports[mi].push(Some(report));
        }
    }
    let mut mean = Vec::with_capacity(models.len());
    let mut sd = Vec::with_capacity(models.len());
    for model_reports in &reports {
        let (m, s) = summarize(model_reports);
        mean.push(m);
        sd.push(s);
    }
    Ok(SplitsResult {
        models: models.iter().map(|m| m.name.clone()).collect(),
        reports,
        flagged,
        mean,
        sd,
    })
}

/// Row mask, true = training, stratified on the primary outcome.
fn assign_split(
    n: usize,
    primary: &Array1<f64>,
    train_fraction: f64,
    rng: &mut ChaCha12Rng,
) -> Vec<bool> {
    let mut is_train = vec![false; n];
    for class_one in [true, false] {
        let mut group: Vec<usize> = (0..n)
            .filter(|i| (primary[*i] == 1.0) == class_one)
            .collect();
        group.shuffle(rng);
        let take = (train_fraction * group.len() as f64).floor() as usize;
        for row in group.into_iter().take(take) {
            is_train[row] = true;
        }
    }
    is_train
}
