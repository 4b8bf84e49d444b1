//! Shared data types: datasets, fitted parameters, fit configuration, and
//! their JSON documents (matrices stored row-major with explicit dims).

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{HirrrError, Result};
use crate::expfam::Family;

/// Multi-record block (X, Y) plus the single-record outcome block Ỹ.
///
/// Columns 1..=q0 of Y are the primary outcomes, the rest are surrogates.
/// n₁ = 0 (empty Ỹ) degenerates to supervised-only fitting.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub ytilde: Array2<f64>,
    pub q0: usize,
    pub families: Vec<Family>,
    pub feature_names: Vec<String>,
    pub outcome_names: Vec<String>,
}

impl Dataset {
    /// Builds a dataset, checking the structural invariants.
    pub fn new(
        x: Array2<f64>,
        y: Array2<f64>,
        ytilde: Array2<f64>,
        q0: usize,
        families: Vec<Family>,
    ) -> Result<Self> {
        let (n, p) = x.dim();
        let q = y.ncols();
        if y.nrows() != n {
            return Err(HirrrError::InvalidArgument(format!(
                "X has {n} rows but Y has {}",
                y.nrows()
            )));
        }
        if ytilde.nrows() > 0 && ytilde.ncols() != q {
            return Err(HirrrError::InvalidArgument(format!(
                "Y has {q} columns but Ytilde has {}",
                ytilde.ncols()
            )));
        }
        if q0 < 1 || q0 > q {
            return Err(HirrrError::InvalidArgument(format!(
                "q0 = {q0} outside 1..={q}"
            )));
        }
        if families.len() != q {
            return Err(HirrrError::InvalidArgument(format!(
                "expected {q} families, got {}",
                families.len()
            )));
        }
        let feature_names = (0..p).map(|j| format!("x{j}")).collect();
        let outcome_names = (0..q).map(|k| format!("y{k}")).collect();
        Ok(Self {
            x,
            y,
            ytilde,
            q0,
            families,
            feature_names,
            outcome_names,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn n1(&self) -> usize {
        self.ytilde.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn q(&self) -> usize {
        self.y.ncols()
    }

    /// Replaces the generated names with real ones.
    pub fn with_names(mut self, feature_names: Vec<String>, outcome_names: Vec<String>) -> Self {
        if feature_names.len() == self.p() {
            self.feature_names = feature_names;
        }
        if outcome_names.len() == self.q() {
            self.outcome_names = outcome_names;
        }
        self
    }
}

/// Fitted quintuple (A, B, μ, L̃, φ) with orthonormal B.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub a: Array2<f64>,
    pub b: Array2<f64>,
    pub mu: Array1<f64>,
    pub ltilde: Array2<f64>,
    pub phi: Array1<f64>,
    pub rank: usize,
}

impl ModelParams {
    /// Validates the structural invariants: B orthonormal within 1e-8,
    /// φ = 1 exactly for non-Gaussian columns, finite natural parameters.
    pub fn validate(&self, families: &[Family]) -> Result<()> {
        let r = self.rank;
        if self.a.ncols() != r || self.b.ncols() != r {
            return Err(HirrrError::InvalidArgument(format!(
                "rank {r} but A has {} and B has {} columns",
                self.a.ncols(),
                self.b.ncols()
            )));
        }
        let gram = self.b.t().dot(&self.b);
        let mut dev = 0.0f64;
        for i in 0..r {
            for j in 0..r {
                let target = if i == j { 1.0 } else { 0.0 };
                dev += (gram[[i, j]] - target).powi(2);
            }
        }
        if dev.sqrt() > 1e-8 {
            return Err(HirrrError::InvalidArgument(format!(
                "B not orthonormal: deviation {:.3e}",
                dev.sqrt()
            )));
        }
        for (k, fam) in families.iter().enumerate() {
            if !fam.dispersion_free() && self.phi[k] != 1.0 {
                return Err(HirrrError::InvalidArgument(format!(
                    "phi[{k}] = {} for a fixed-dispersion family",
                    self.phi[k]
                )));
            }
        }
        if !self
            .a
            .iter()
            .chain(self.b.iter())
            .chain(self.mu.iter())
            .chain(self.ltilde.iter())
            .all(|v| v.is_finite())
        {
            return Err(HirrrError::InvalidArgument(
                "non-finite parameter entries".into(),
            ));
        }
        Ok(())
    }

    /// Coefficient matrix C = A·Bᵀ (p×q).
    pub fn coefficients(&self) -> Array2<f64> {
        self.a.dot(&self.b.t())
    }

    /// Natural parameters Θ = 1μᵀ + X·A·Bᵀ for a feature block.
    pub fn theta(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut theta = x.dot(&self.a).dot(&self.b.t());
        theta += &self.mu;
        theta
    }

    /// Natural parameters Θ̃ = 1μᵀ + L̃·Bᵀ for the single-record block.
    pub fn theta_tilde(&self) -> Array2<f64> {
        let mut theta = self.ltilde.dot(&self.b.t());
        theta += &self.mu;
        theta
    }
}

/// Configuration for one fit.
#[derive(Debug, Clone)]
pub struct FitConfig {
    pub rank: usize,
    pub lambda: f64,
    /// Entrywise weights for the multi-record block; `None` means all ones.
    pub w: Option<Array2<f64>>,
    /// Entrywise weights for the single-record block; `None` means all ones.
    pub wtilde: Option<Array2<f64>>,
    pub tolerance: f64,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            rank: 1,
            lambda: 1.0,
            w: None,
            wtilde: None,
            tolerance: 1e-6,
            max_iters: 5000,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn new(rank: usize, lambda: f64) -> Self {
        Self {
            rank,
            lambda,
            ..Self::default()
        }
    }

    /// Checks the invariants against a dataset.
    pub fn validate(&self, ds: &Dataset) -> Result<()> {
        if self.rank < 1 || self.rank > ds.p().min(ds.q()) {
            return Err(HirrrError::InvalidArgument(format!(
                "rank {} outside 1..={}",
                self.rank,
                ds.p().min(ds.q())
            )));
        }
        if !(self.lambda >= 0.0) {
            return Err(HirrrError::InvalidArgument(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.tolerance > 0.0) {
            return Err(HirrrError::InvalidArgument(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if let Some(w) = &self.w {
            if w.dim() != ds.y.dim() {
                return Err(HirrrError::InvalidArgument(
                    "W shape does not match Y".into(),
                ));
            }
            if w.iter().any(|&v| v < 0.0) {
                return Err(HirrrError::InvalidArgument("negative weight in W".into()));
            }
        }
        if let Some(wt) = &self.wtilde {
            if wt.dim() != ds.ytilde.dim() {
                return Err(HirrrError::InvalidArgument(
                    "Wtilde shape does not match Ytilde".into(),
                ));
            }
            if wt.iter().any(|&v| v < 0.0) {
                return Err(HirrrError::InvalidArgument(
                    "negative weight in Wtilde".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Row-major matrix payload for JSON documents.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixJson {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatrixJson {
    pub fn from_array(m: &Array2<f64>) -> Self {
        let (rows, cols) = m.dim();
        let data = m.iter().cloned().collect();
        Self { rows, cols, data }
    }

    pub fn to_array(&self) -> Result<Array2<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(HirrrError::InvalidArgument(format!(
                "matrix payload has {} entries for {}x{}",
                self.data.len(),
                self.rows,
                self.cols
            )));
        }
        Array2::from_shape_vec((self.rows, self.cols), self.data.clone())
            .map_err(|e| HirrrError::InvalidArgument(e.to_string()))
    }
}

/// JSON document for a fitted model: parameters plus the objective trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelParamsDoc {
    pub rank: usize,
    #[serde(rename = "A")]
    pub a: MatrixJson,
    #[serde(rename = "B")]
    pub b: MatrixJson,
    pub mu: Vec<f64>,
    #[serde(rename = "Ltilde")]
    pub ltilde: MatrixJson,
    pub phi: Vec<f64>,
    pub objective_trace: Vec<f64>,
}

impl ModelParamsDoc {
    pub fn from_params(params: &ModelParams, objective_trace: &[f64]) -> Self {
        Self {
            rank: params.rank,
            a: MatrixJson::from_array(&params.a),
            b: MatrixJson::from_array(&params.b),
            mu: params.mu.to_vec(),
            ltilde: MatrixJson::from_array(&params.ltilde),
            phi: params.phi.to_vec(),
            objective_trace: objective_trace.to_vec(),
        }
    }

    pub fn to_params(&self) -> Result<(ModelParams, Vec<f64>)> {
        let params = ModelParams {
            a: self.a.to_array()?,
            b: self.b.to_array()?,
            mu: Array1::from_vec(self.mu.clone()),
            ltilde: self.ltilde.to_array()?,
            phi: Array1::from_vec(self.phi.clone()),
            rank: self.rank,
        };
        Ok((params, self.objective_trace.clone()))
    }
}

/// JSON document for a dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetDoc {
    #[serde(rename = "X")]
    pub x: MatrixJson,
    #[serde(rename = "Y")]
    pub y: MatrixJson,
    #[serde(rename = "Ytilde")]
    pub ytilde: MatrixJson,
    pub q0: usize,
    pub families: Vec<Family>,
    pub feature_names: Vec<String>,
    pub outcome_names: Vec<String>,
}

impl DatasetDoc {
    pub fn from_dataset(ds: &Dataset) -> Self {
        Self {
            x: MatrixJson::from_array(&ds.x),
            y: MatrixJson::from_array(&ds.y),
            ytilde: MatrixJson::from_array(&ds.ytilde),
            q0: ds.q0,
            families: ds.families.clone(),
            feature_names: ds.feature_names.clone(),
            outcome_names: ds.outcome_names.clone(),
        }
    }

    pub fn to_dataset(&self) -> Result<Dataset> {
        let ds = Dataset::new(
            self.x.to_array()?,
            self.y.to_array()?,
            self.ytilde.to_array()?,
            self.q0,
            self.families.clone(),
        )?;
        Ok(ds.with_names(self.feature_names.clone(), self.outcome_names.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2};

    #[test]
    fn dataset_invariants_enforced() {
        let x = Array2::<f64>::zeros((4, 2));
        let y = Array2::<f64>::zeros((4, 3));
        let yt = Array2::<f64>::zeros((2, 3));
        let fams = vec![Family::Gaussian; 3];
        assert!(Dataset::new(x.clone(), y.clone(), yt.clone(), 1, fams.clone()).is_ok());
        assert!(Dataset::new(x.clone(), y.clone(), yt.clone(), 0, fams.clone()).is_err());
        assert!(Dataset::new(x.clone(), y.clone(), yt.clone(), 4, fams.clone()).is_err());
        let yt_bad = Array2::<f64>::zeros((2, 2));
        assert!(Dataset::new(x.clone(), y.clone(), yt_bad, 1, fams.clone()).is_err());
        // Empty single-record block is fine.
        let yt_empty = Array2::<f64>::zeros((0, 0));
        assert!(Dataset::new(x, y, yt_empty, 1, fams).is_ok());
    }

    #[test]
    fn model_params_validation() {
        let params = ModelParams {
            a: arr2(&[[1.0], [0.0]]),
            b: arr2(&[[1.0], [0.0], [0.0]]),
            mu: arr1(&[0.0, 0.0, 0.0]),
            ltilde: Array2::zeros((0, 1)),
            phi: arr1(&[1.0, 1.0, 1.0]),
            rank: 1,
        };
        let fams = vec![Family::Bernoulli; 3];
        assert!(params.validate(&fams).is_ok());

        let mut bad_b = params.clone();
        bad_b.b[[0, 0]] = 2.0;
        assert!(bad_b.validate(&fams).is_err());

        let mut bad_phi = params.clone();
        bad_phi.phi[1] = 0.5;
        assert!(bad_phi.validate(&fams).is_err());
    }

    #[test]
    fn params_doc_round_trip() {
        let params = ModelParams {
            a: arr2(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]),
            b: arr2(&[[1.0, 0.0], [0.0, 1.0]]),
            mu: arr1(&[0.1, -0.2]),
            ltilde: arr2(&[[0.5, 0.6]]),
            phi: arr1(&[1.0, 1.0]),
            rank: 2,
        };
        let doc = ModelParamsDoc::from_params(&params, &[3.0, 2.0, 1.5]);
        let text = serde_json::to_string(&doc).unwrap();
        // Exact field names in the document.
        for field in ["\"rank\"", "\"A\"", "\"B\"", "\"mu\"", "\"Ltilde\"", "\"phi\"", "\"objective_trace\""] {
            assert!(text.contains(field), "missing {field} in {text}");
        }
        let parsed: ModelParamsDoc = serde_json::from_str(&text).unwrap();
        let (back, trace) = parsed.to_params().unwrap();
        assert_eq!(back.a, params.a);
        assert_eq!(back.b, params.b);
        assert_eq!(back.mu, params.mu);
        assert_eq!(back.ltilde, params.ltilde);
        assert_eq!(trace, vec![3.0, 2.0, 1.5]);
    }

    #[test]
    fn dataset_doc_round_trip() {
        let x = arr2(&[[1.0, 2.0], [3.0, 4.0]]);
        let y = arr2(&[[1.0], [0.0]]);
        let yt = arr2(&[[1.0], [1.0], [0.0]]);
        let ds = Dataset::new(x, y, yt, 1, vec![Family::Bernoulli]).unwrap();
        let doc = DatasetDoc::from_dataset(&ds);
        let text = serde_json::to_string(&doc).unwrap();
        let parsed: DatasetDoc = serde_json::from_str(&text).unwrap();
        let back = parsed.to_dataset().unwrap();
        assert_eq!(back.x, ds.x);
        assert_eq!(back.y, ds.y);
        assert_eq!(back.ytilde, ds.ytilde);
        assert_eq!(back.q0, 1);
    }

    #[test]
    fn fit_config_validation() {
        let x = Array2::<f64>::zeros((4, 3));
        let y = Array2::<f64>::zeros((4, 2));
        let yt = Array2::<f64>::zeros((0, 0));
        let ds = Dataset::new(x, y, yt, 1, vec![Family::Gaussian; 2]).unwrap();
        assert!(FitConfig::new(2, 0.5).validate(&ds).is_ok());
        assert!(FitConfig::new(3, 0.5).validate(&ds).is_err());
        assert!(FitConfig::new(1, -0.1).validate(&ds).is_err());
        let mut cfg = FitConfig::new(1, 0.5);
        cfg.tolerance = 0.0;
        assert!(cfg.validate(&ds).is_err());
    }
}
