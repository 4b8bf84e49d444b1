//! Application-style reporting: averaged risk/protective factor tables
//! across split fits, and the unique-cases comparison between two models'
//! high-risk flags.

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::cohort::fisher_exact;
use crate::error::{HirrrError, Result};
use crate::estimators::standardized_coefficients;
use crate::types::ModelParams;

/// Whether a factor table ranks the largest (risk) or the smallest
/// (protective) averaged coefficients first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Risk,
    Protective,
}

/// One ranked factor: the averaged standardized primary-outcome coefficient
/// and its across-split standard deviation.
#[derive(Debug, Clone)]
pub struct FactorRow {
    pub feature: String,
    pub mean: f64,
    pub sd: f64,
}

/// Ranked factor table.
#[derive(Debug, Clone)]
pub struct FactorTable {
    pub direction: Direction,
    pub rows: Vec<FactorRow>,
}

impl FactorTable {
    /// CSV with columns feature,mean,sd.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("feature,mean,sd\n");
        for row in &self.rows {
            out.push_str(&format!("{},{},{}\n", row.feature, row.mean, row.sd));
        }
        out
    }
}

/// Averages standardized primary-outcome coefficients across split fits and
/// ranks them: `Risk` descending, `Protective` ascending, ties by feature
/// index. Returns the first `top_k` factors with mean and across-split sd.
pub fn rank_factors(
    fits: &[ModelParams],
    feature_sd: ArrayView1<f64>,
    feature_names: &[String],
    direction: Direction,
    top_k: usize,
) -> Result<FactorTable> {
    if fits.is_empty() {
        return Err(HirrrError::InvalidArgument("no fits to rank".into()));
    }
    let p = fits[0].a.nrows();
    if fits.iter().any(|f| f.a.nrows() != p) {
        return Err(HirrrError::InvalidArgument(
            "fits disagree on the feature space".into(),
        ));
    }
    if feature_sd.len() != p || feature_names.len() != p {
        return Err(HirrrError::InvalidArgument(format!(
            "expected {p} feature sds and names, got {} and {}",
            feature_sd.len(),
            feature_names.len()
        )));
    }
    // Per-feature standardized primary-column coefficients, one per fit.
    let per_fit: Vec<Vec<f64>> = fits
        .iter()
        .map(|f| {
            standardized_coefficients(f, feature_sd)
                .column(0)
                .to_vec()
        })
        .collect();
    let m = fits.len();
    let mut rows: Vec<(usize, f64, f64)> = (0..p)
        .map(|j| {
            let vals: Vec<f64> = per_fit.iter().map(|c| c[j]).collect();
            let mean = vals.iter().sum::<f64>() / m as f64;
            let sd = if m > 1 {
                (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1) as f64)
                    .sqrt()
            } else {
                0.0
            };
            (j, mean, sd)
        })
        .collect();
    match direction {
        Direction::Risk => rows.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0))),
        Direction::Protective => {
            rows.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)))
        }
    }
    rows.truncate(top_k);
    Ok(FactorTable {
        direction,
        rows: rows
            .into_iter()
            .map(|(j, mean, sd)| FactorRow {
                feature: feature_names[j].clone(),
                mean,
                sd,
            })
            .collect(),
    })
}

/// One feature's contrast between the two correct-prediction groups.
#[derive(Debug, Clone)]
pub struct UniqueCaseRow {
    pub feature: String,
    /// Exposed / unexposed counts among cases both models flagged.
    pub both_with: u64,
    pub both_without: u64,
    /// Exposed / unexposed counts among cases only model B flagged.
    pub only_with: u64,
    pub only_without: u64,
    pub p_raw: f64,
    pub p_bh: f64,
}

/// The unique-cases comparison: group sizes plus per-feature contrasts
/// sorted by raw p.
#[derive(Debug, Clone)]
pub struct UniqueCaseTable {
    /// True positives flagged by both models.
    pub both_size: usize,
    /// True positives flagged only by model B.
    pub only_b_size: usize,
    pub rows: Vec<UniqueCaseRow>,
}

impl UniqueCaseTable {
    /// CSV with columns feature,both_with,both_without,only_with,
    /// only_without,p_raw,p_bh.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("feature,both_with,both_without,only_with,only_without,p_raw,p_bh\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                row.feature,
                row.both_with,
                row.both_without,
                row.only_with,
                row.only_without,
                row.p_raw,
                row.p_bh
            ));
        }
        out
    }
}

/// Indices of the `ceil(fraction * n)` highest scores, ties broken by the
/// smaller index.
fn flag_top(scores: ArrayView1<f64>, fraction: f64) -> Vec<bool> {
    let n = scores.len();
    let take = (fraction * n as f64).ceil() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| scores[*b].partial_cmp(&scores[*a]).unwrap().then(a.cmp(b)));
    let mut flags = vec![false; n];
    for i in order.into_iter().take(take) {
        flags[i] = true;
    }
    flags
}

/// Benjamini-Hochberg step-up adjustment, preserving input order.
pub fn bh_adjust(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|a, b| p[*a].partial_cmp(&p[*b]).unwrap());
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for (rank, idx) in order.into_iter().enumerate().rev() {
        let value = (p[idx] * m as f64 / (rank + 1) as f64).min(1.0);
        running = running.min(value);
        adjusted[idx] = running;
    }
    adjusted
}

/// Compares the patients two models flag as high risk.
///
/// Both models flag the top `ceil(top_fraction * n)` scores. True positives
/// split into a "both flagged" group and an "only B flagged" group; each
/// binary feature gets a 2x2 Fisher exact contrast across the groups, BH
/// adjustment, and a row in the table sorted by raw p. An empty group yields
/// an empty table with the sizes still reported.
pub fn compare_unique_cases(
    scores_a: ArrayView1<f64>,
    scores_b: ArrayView1<f64>,
    labels: ArrayView1<f64>,
    features: ndarray::ArrayView2<f64>,
    feature_names: &[String],
    top_fraction: f64,
) -> Result<UniqueCaseTable> {
    let n = labels.len();
    if scores_a.len() != n || scores_b.len() != n || features.nrows() != n {
        return Err(HirrrError::InvalidArgument(
            "scores, labels, and features disagree on the patient count".into(),
        ));
    }
    if !(top_fraction > 0.0 && top_fraction <= 1.0) {
        return Err(HirrrError::InvalidArgument(format!(
            "top_fraction must lie in (0, 1], got {top_fraction}"
        )));
    }
    if feature_names.len() != features.ncols() {
        return Err(HirrrError::InvalidArgument(format!(
            "{} feature names for {} columns",
            feature_names.len(),
            features.ncols()
        )));
    }
    let flags_a = flag_top(scores_a, top_fraction);
    let flags_b = flag_top(scores_b, top_fraction);
    let both: Vec<usize> = (0..n)
        .filter(|i| labels[*i] == 1.0 && flags_a[*i] && flags_b[*i])
        .collect();
    let only_b: Vec<usize> = (0..n)
        .filter(|i| labels[*i] == 1.0 && !flags_a[*i] && flags_b[*i])
        .collect();
    let mut table = UniqueCaseTable {
        both_size: both.len(),
        only_b_size: only_b.len(),
        rows: Vec::new(),
    };
    if both.is_empty() || only_b.is_empty() {
        return Ok(table);
    }
    let count = |group: &[usize], j: usize| -> (u64, u64) {
        let with = group.iter().filter(|i| features[[**i, j]] == 1.0).count() as u64;
        (with, group.len() as u64 - with)
    };
    let mut raw = Vec::with_capacity(features.ncols());
    let mut cells = Vec::with_capacity(features.ncols());
    for j in 0..features.ncols() {
        let (a, b) = count(&both, j);
        let (c, d) = count(&only_b, j);
        raw.push(fisher_exact(a, b, c, d));
        cells.push((a, b, c, d));
    }
    let bh = bh_adjust(&raw);
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|a, b| raw[*a].partial_cmp(&raw[*b]).unwrap().then(a.cmp(b)));
    table.rows = order
        .into_iter()
        .map(|j| UniqueCaseRow {
            feature: feature_names[j].clone(),
            both_with: cells[j].0,
            both_without: cells[j].1,
            only_with: cells[j].2,
            only_without: cells[j].3,
            p_raw: raw[j],
            p_bh: bh[j],
        })
        .collect();
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{arr1, arr2, Array1, Array2};

    fn params_from_c(c: Array2<f64>) -> ModelParams {
        // Rank-free wrapper: A = C, B = identity, so coefficients() = C.
        let q = c.ncols();
        ModelParams {
            a: c,
            b: Array2::eye(q),
            mu: Array1::zeros(q),
            ltilde: Array2::zeros((0, q)),
            phi: Array1::ones(q),
            rank: q,
        }
    }

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|j| format!("f{j}")).collect()
    }

    #[test]
    fn single_fit_table_is_its_sorted_coefficients() {
        let c = arr2(&[[0.5, 0.0], [-1.0, 0.0], [2.0, 0.0]]);
        let fit = params_from_c(c);
        let sd = arr1(&[1.0, 1.0, 1.0]);
        let table = rank_factors(&[fit], sd.view(), &names(3), Direction::Risk, 3).unwrap();
        let feats: Vec<&str> = table.rows.iter().map(|r| r.feature.as_str()).collect();
        assert_eq!(feats, vec!["f2", "f0", "f1"]);
        assert_eq!(table.rows[0].mean, 2.0);
        assert!(table.rows.iter().all(|r| r.sd == 0.0));
    }

    #[test]
    fn protective_sorts_ascending_and_standardizes() {
        let c = arr2(&[[0.5], [-1.0], [2.0]]);
        let fit = params_from_c(c);
        // sd scales row 2 down so it no longer tops the risk table.
        let sd = arr1(&[2.0, 1.0, 0.1]);
        let table =
            rank_factors(&[fit], sd.view(), &names(3), Direction::Protective, 2).unwrap();
        assert_eq!(table.rows[0].feature, "f1");
        assert_abs_diff_eq!(table.rows[0].mean, -1.0, epsilon = 1e-12);
        assert_eq!(table.rows[1].feature, "f2");
        assert_abs_diff_eq!(table.rows[1].mean, 0.2, epsilon = 1e-12);
        assert_eq!(table.rows.len(), 2);
    }

    #[test]
    fn identical_fits_have_zero_sd_and_averaging_matches_oracle() {
        let c1 = arr2(&[[1.0], [3.0]]);
        let c2 = arr2(&[[2.0], [-1.0]]);
        let sd = arr1(&[1.0, 1.0]);
        let twice = rank_factors(
            &[params_from_c(c1.clone()), params_from_c(c1.clone())],
            sd.view(),
            &names(2),
            Direction::Risk,
            2,
        )
        .unwrap();
        assert!(twice.rows.iter().all(|r| r.sd == 0.0));
        // Hand-averaged oracle over two distinct fits.
        let mixed = rank_factors(
            &[params_from_c(c1), params_from_c(c2)],
            sd.view(),
            &names(2),
            Direction::Risk,
            2,
        )
        .unwrap();
        assert_eq!(mixed.rows[0].feature, "f0");
        assert_abs_diff_eq!(mixed.rows[0].mean, 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(
            mixed.rows[0].sd,
            (2.0f64 - 1.0).hypot(0.0) / std::f64::consts::SQRT_2,
            epsilon = 1e-12
        );
        assert_eq!(mixed.rows[1].feature, "f1");
        assert_abs_diff_eq!(mixed.rows[1].mean, 1.0, epsilon = 1e-12);
        assert!(twice.to_csv().starts_with("feature,mean,sd\n"));
    }

    #[test]
    fn mismatched_fits_are_rejected() {
        let a = params_from_c(arr2(&[[1.0], [2.0]]));
        let b = params_from_c(arr2(&[[1.0], [2.0], [3.0]]));
        let sd = arr1(&[1.0, 1.0]);
        assert!(rank_factors(&[a, b], sd.view(), &names(2), Direction::Risk, 2).is_err());
    }

    #[test]
    fn flag_top_size_and_stable_ties() {
        let scores = arr1(&[0.3, 0.9, 0.3, 0.1, 0.9]);
        let flags = flag_top(scores.view(), 0.10);
        // ceil(0.5) = 1 flag; the tie at 0.9 goes to index 1.
        assert_eq!(flags.iter().filter(|f| **f).count(), 1);
        assert!(flags[1]);
        let flags = flag_top(scores.view(), 0.60);
        // ceil(3) = 3: indices 1, 4, then the 0.3 tie resolves to index 0.
        assert_eq!(flags, vec![true, true, false, false, true]);
    }

    #[test]
    fn bh_is_monotone_and_at_least_raw() {
        let raw = [0.01, 0.2, 0.03, 0.8, 0.005];
        let adj = bh_adjust(&raw);
        for (r, a) in raw.iter().zip(adj.iter()) {
            assert!(a >= r);
            assert!(*a <= 1.0);
        }
        // Smallest raw p: 0.005 * 5 / 1 = 0.025.
        assert_abs_diff_eq!(adj[4], 0.025, epsilon = 1e-12);
        // Largest raw p keeps 0.8 (0.8 * 5/5).
        assert_abs_diff_eq!(adj[3], 0.8, epsilon = 1e-12);
    }

    #[test]
    fn identical_scores_give_empty_table() {
        let scores = arr1(&[0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1, 0.05]);
        let labels = arr1(&[1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let features = Array2::zeros((10, 2));
        let table = compare_unique_cases(
            scores.view(),
            scores.view(),
            labels.view(),
            features.view(),
            &names(2),
            0.2,
        )
        .unwrap();
        assert_eq!(table.only_b_size, 0);
        assert!(table.rows.is_empty());
        assert_eq!(table.both_size, 2);
    }

    #[test]
    fn disjoint_flags_match_hand_counts() {
        // Model A flags rows 0..3, model B flags rows 3..6 (n = 12, top 25%).
        let mut sa = vec![0.0; 12];
        let mut sb = vec![0.0; 12];
        for i in 0..3 {
            sa[i] = 1.0;
            sb[i + 3] = 1.0;
        }
        let scores_a = Array1::from_vec(sa);
        let scores_b = Array1::from_vec(sb);
        let labels = arr1(&[1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let mut features = Array2::zeros((12, 1));
        features[[3, 0]] = 1.0;
        let table = compare_unique_cases(
            scores_a.view(),
            scores_b.view(),
            labels.view(),
            features.view(),
            &names(1),
            0.25,
        )
        .unwrap();
        // Both-flagged is empty (disjoint flags), so the table stays empty.
        assert_eq!(table.both_size, 0);
        assert_eq!(table.only_b_size, 2);
        assert!(table.rows.is_empty());
    }

    #[test]
    fn contrast_table_reproduces_enumeration() {
        // 126 labeled cases: models share 84 flagged, B alone flags 42.
        // Feature 0 is exposed in 0/84 vs 3/39 of the groups.
        let n = 300;
        let mut scores_a = vec![0.0; n];
        let mut scores_b = vec![0.0; n];
        let mut labels = vec![0.0; n];
        let mut features = Array2::<f64>::zeros((n, 2));
        for i in 0..84 {
            scores_a[i] = 1.0;
            scores_b[i] = 1.0;
            labels[i] = 1.0;
        }
        for i in 84..126 {
            scores_b[i] = 1.0;
            labels[i] = 1.0;
            if i < 87 {
                features[[i, 0]] = 1.0;
            }
        }
        // Model A's remaining 42 flags land on unlabeled rows.
        for i in 200..242 {
            scores_a[i] = 1.0;
        }
        // Feature 1 splits evenly, carrying no signal.
        for i in (0..126).step_by(2) {
            features[[i, 1]] = 1.0;
        }
        let table = compare_unique_cases(
            Array1::from_vec(scores_a).view(),
            Array1::from_vec(scores_b).view(),
            Array1::from_vec(labels).view(),
            features.view(),
            &names(2),
            0.42,
        )
        .unwrap();
        assert_eq!(table.both_size, 84);
        assert_eq!(table.only_b_size, 42);
        let top = &table.rows[0];
        assert_eq!(top.feature, "f0");
        assert_eq!((top.both_with, top.both_without), (0, 84));
        assert_eq!((top.only_with, top.only_without), (3, 39));
        // Exact enumeration: only k = 0 is as extreme, so the two-sided p
        // is C(42,3)/C(126,3) = 11480/325500, i.e. 0.035 to three digits.
        assert_abs_diff_eq!(top.p_raw, 11480.0 / 325500.0, epsilon = 1e-12);
        assert!(top.p_bh >= top.p_raw);
        assert!(table.rows[1].p_raw >= top.p_raw);
        assert!(table
            .to_csv()
            .starts_with("feature,both_with,both_without,only_with,only_without,p_raw,p_bh\n"));
    }
}
