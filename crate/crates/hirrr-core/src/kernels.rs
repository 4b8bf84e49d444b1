//! Dense-matrix primitives shared by the estimators: orthogonal Procrustes,
//! top-r eigenvectors, and column-space projection via the pseudo-inverse.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use ndarray_linalg::{Eigh, JobSvd, SVDDC, UPLO};

use crate::error::{HirrrError, Result};

/// A q×r matrix with orthonormal columns (within 1e-10 Frobenius).
#[derive(Debug, Clone)]
pub struct OrthonormalFrame {
    cols: Array2<f64>,
}

impl OrthonormalFrame {
    /// Wraps a matrix after checking colsᵀ·cols = I within 1e-10 Frobenius.
    pub fn new(cols: Array2<f64>) -> Result<Self> {
        let r = cols.ncols();
        let gram = cols.t().dot(&cols);
        let mut dev = 0.0;
        for i in 0..r {
            for j in 0..r {
                let target = if i == j { 1.0 } else { 0.0 };
                dev += (gram[[i, j]] - target).powi(2);
            }
        }
        if dev.sqrt() > 1e-10 {
            return Err(HirrrError::InvalidArgument(format!(
                "columns not orthonormal: deviation {:.3e}",
                dev.sqrt()
            )));
        }
        Ok(Self { cols })
    }

    /// The underlying q×r matrix.
    pub fn cols(&self) -> &Array2<f64> {
        &self.cols
    }

    /// Consumes the frame, returning the matrix.
    pub fn into_cols(self) -> Array2<f64> {
        self.cols
    }

    /// The projector cols·colsᵀ.
    pub fn projector(&self) -> Array2<f64> {
        self.cols.dot(&self.cols.t())
    }
}

/// Result of a Procrustes solve; `degenerate` flags rank(G) < r.
#[derive(Debug, Clone)]
pub struct ProcrustesSolution {
    pub frame: OrthonormalFrame,
    pub degenerate: bool,
}

/// Maximizes trace(BᵀG) over orthonormal q×r frames B: B = U Vᵀ from the
/// thin SVD G = U D Vᵀ. A rank-deficient G still yields a valid frame,
/// flagged as degenerate.
pub fn procrustes_solve(g: ArrayView2<f64>) -> Result<ProcrustesSolution> {
    let (q, r) = g.dim();
    if q < r {
        return Err(HirrrError::InvalidArgument(format!(
            "need q >= r, got {q}x{r}"
        )));
    }
    let g_owned = g.to_owned();
    let (u, s, vt) = g_owned
        .svddc(JobSvd::Some)
        .map_err(|e| HirrrError::InvalidArgument(format!("svd failed: {e}")))?;
    let u = u.expect("thin svd u");
    let vt = vt.expect("thin svd vt");
    let b = u.dot(&vt);
    let smax = s.iter().cloned().fold(0.0f64, f64::max);
    let cutoff = q.max(r) as f64 * f64::EPSILON * smax;
    let degenerate = smax == 0.0 || s.iter().any(|&sv| sv <= cutoff);
    Ok(ProcrustesSolution {
        frame: OrthonormalFrame::new(b)?,
        degenerate,
    })
}

/// Top-r eigenpairs of a symmetric matrix, eigenvalues descending.
#[derive(Debug, Clone)]
pub struct EigenPick {
    pub frame: OrthonormalFrame,
    pub eigenvalues: Array1<f64>,
    /// Set when λ_r and λ_{r+1} coincide within 1e-10: the returned span is
    /// then one arbitrary resolution of the tie.
    pub tie_warning: bool,
}

/// Eigenvectors for the r largest eigenvalues of a symmetric M.
pub fn top_eigenvectors(m: ArrayView2<f64>, r: usize) -> Result<EigenPick> {
    let (q, q2) = m.dim();
    if q != q2 {
        return Err(HirrrError::InvalidArgument(format!(
            "matrix not square: {q}x{q2}"
        )));
    }
    if r < 1 || r > q {
        return Err(HirrrError::InvalidArgument(format!(
            "rank {r} outside 1..={q}"
        )));
    }
    let mut asym = 0.0f64;
    let mut scale = 0.0f64;
    for i in 0..q {
        for j in (i + 1)..q {
            asym = asym.max((m[[i, j]] - m[[j, i]]).abs());
            scale = scale.max(m[[i, j]].abs().max(m[[j, i]].abs()));
        }
    }
    if asym > 1e-8 * scale.max(1.0) {
        return Err(HirrrError::InvalidArgument(format!(
            "matrix not symmetric: max deviation {asym:.3e}"
        )));
    }
    // Symmetrize to wash out roundoff before factorizing.
    let sym = 0.5 * (&m + &m.t());
    let (vals, vecs) = sym
        .eigh(UPLO::Lower)
        .map_err(|e| HirrrError::InvalidArgument(format!("eigh failed: {e}")))?;
    // eigh returns ascending order; take the last r columns, reversed.
    let mut frame = Array2::zeros((q, r));
    let mut eigenvalues = Array1::zeros(r);
    for k in 0..r {
        let src = q - 1 - k;
        frame.column_mut(k).assign(&vecs.column(src));
        eigenvalues[k] = vals[src];
    }
    let tie_warning = r < q && (vals[q - r] - vals[q - r - 1]).abs() < 1e-10;
    Ok(EigenPick {
        frame: OrthonormalFrame::new(frame)?,
        eigenvalues,
        tie_warning,
    })
}

/// Moore–Penrose pseudo-inverse of the Gram matrix XᵀX.
///
/// Eigenvalues of XᵀX below max(n,p)·ε·λ_max are treated as zero, the
/// standard cutoff applied to the matrix actually inverted.
pub fn gram_pinv(x: ArrayView2<f64>) -> Result<Array2<f64>> {
    let (n, p) = x.dim();
    let gram = x.t().dot(&x);
    let (vals, vecs) = gram
        .eigh(UPLO::Lower)
        .map_err(|e| HirrrError::InvalidArgument(format!("eigh failed: {e}")))?;
    let lmax = vals.iter().cloned().fold(0.0f64, f64::max);
    let cutoff = n.max(p) as f64 * f64::EPSILON * lmax;
    let mut scaled = vecs.clone();
    for (j, mut col) in scaled.columns_mut().into_iter().enumerate() {
        let inv = if vals[j] > cutoff { 1.0 / vals[j] } else { 0.0 };
        col *= inv;
    }
    Ok(scaled.dot(&vecs.t()))
}

/// Handle applying the projector P_X = X(XᵀX)⁺Xᵀ without materializing it.
#[derive(Debug, Clone)]
pub struct ColumnspaceProjector {
    x: Array2<f64>,
    pinv_gram: Array2<f64>,
}

/// Factorized projector onto the column space of X.
pub fn project_columnspace(x: ArrayView2<f64>) -> Result<ColumnspaceProjector> {
    let pinv_gram = gram_pinv(x)?;
    Ok(ColumnspaceProjector {
        x: x.to_owned(),
        pinv_gram,
    })
}

impl ColumnspaceProjector {
    /// P_X v for a single vector.
    pub fn apply(&self, v: ArrayView1<f64>) -> Array1<f64> {
        let xtv = self.x.t().dot(&v);
        self.x.dot(&self.pinv_gram.dot(&xtv))
    }

    /// P_X V column-wise for a matrix of vectors.
    pub fn apply_mat(&self, v: ArrayView2<f64>) -> Array2<f64> {
        let xtv = self.x.t().dot(&v);
        self.x.dot(&self.pinv_gram.dot(&xtv))
    }

    /// The cached (XᵀX)⁺ factor.
    pub fn pinv_gram(&self) -> &Array2<f64> {
        &self.pinv_gram
    }
}

/// Column means of a matrix as a vector of length ncols.
pub fn column_means(m: ArrayView2<f64>) -> Array1<f64> {
    match m.mean_axis(Axis(0)) {
        Some(v) => v,
        None => Array1::zeros(m.ncols()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::arr2;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn randn(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
    }

    /// Haar-distributed orthonormal frame via the polar factor of a Gaussian.
    fn random_frame(rng: &mut ChaCha8Rng, q: usize, r: usize) -> Array2<f64> {
        let g = randn(rng, q, r);
        procrustes_solve(g.view()).unwrap().frame.into_cols()
    }

    #[test]
    fn procrustes_identity_on_orthonormal_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g0 = random_frame(&mut rng, 6, 3);
        let sol = procrustes_solve(g0.view()).unwrap();
        let diff = (sol.frame.cols() - &g0).mapv(f64::abs).sum();
        assert!(diff < 1e-10, "diff {diff}");
        assert!(!sol.degenerate);

        // Scale invariance.
        let sol2 = procrustes_solve((2.0 * &g0).view()).unwrap();
        let diff = (sol2.frame.cols() - &g0).mapv(f64::abs).sum();
        assert!(diff < 1e-10, "diff {diff}");
    }

    #[test]
    fn procrustes_beats_random_candidates() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let g = randn(&mut rng, 8, 3);
            let sol = procrustes_solve(g.view()).unwrap();
            let best = sol.frame.cols().t().dot(&g).diag().sum();
            for _ in 0..1000 {
                let q = random_frame(&mut rng, 8, 3);
                let tr = q.t().dot(&g).diag().sum();
                assert!(best >= tr - 1e-10, "{best} vs {tr}");
            }
        }
    }

    #[test]
    fn procrustes_flags_rank_deficiency() {
        let mut g = Array2::zeros((5, 3));
        g[[0, 0]] = 1.0;
        g[[1, 1]] = 1.0;
        let sol = procrustes_solve(g.view()).unwrap();
        assert!(sol.degenerate);
        // Frame still orthonormal by construction of OrthonormalFrame.
    }

    #[test]
    fn top_eigenvectors_diagonal_case() {
        let m = arr2(&[[3.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 1.0]]);
        let pick = top_eigenvectors(m.view(), 2).unwrap();
        assert_abs_diff_eq!(pick.eigenvalues[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pick.eigenvalues[1], 2.0, epsilon = 1e-12);
        let proj = pick.frame.projector();
        let expected = arr2(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]]);
        for (a, b) in proj.iter().zip(expected.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn top_eigenvectors_degenerate_spectrum_is_projector_valid() {
        let m = Array2::<f64>::eye(4);
        let pick = top_eigenvectors(m.view(), 2).unwrap();
        assert!(pick.tie_warning);
        let proj = pick.frame.projector();
        let idem = proj.dot(&proj);
        let dev = (&idem - &proj).mapv(f64::abs).sum();
        assert!(dev < 1e-10);
    }

    #[test]
    fn top_eigenvectors_residuals_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a = randn(&mut rng, 6, 6);
            let m = &a + &a.t();
            let pick = top_eigenvectors(m.view(), 3).unwrap();
            for j in 0..3 {
                let b = pick.frame.cols().column(j);
                let resid = m.dot(&b) - pick.eigenvalues[j] * &b.to_owned();
                let norm = resid.mapv(|v| v * v).sum().sqrt();
                assert!(norm < 1e-8, "residual {norm}");
            }
        }
    }

    #[test]
    fn top_eigenvectors_rejects_asymmetric() {
        let m = arr2(&[[1.0, 2.0], [0.0, 1.0]]);
        assert!(top_eigenvectors(m.view(), 1).is_err());
    }

    #[test]
    fn projector_identity_and_membership() {
        let x = Array2::<f64>::eye(4);
        let proj = project_columnspace(x.view()).unwrap();
        let v = ndarray::arr1(&[1.0, -2.0, 3.0, 0.5]);
        let pv = proj.apply(v.view());
        for (a, b) in pv.iter().zip(v.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = randn(&mut rng, 10, 3);
        let proj = project_columnspace(x.view()).unwrap();
        // A vector already in the column space stays fixed.
        let coef = ndarray::arr1(&[0.4, -1.1, 2.0]);
        let v = x.dot(&coef);
        let pv = proj.apply(v.view());
        let dev = (&pv - &v).mapv(f64::abs).sum();
        assert!(dev < 1e-9);
    }

    #[test]
    fn projector_annihilates_orthogonal_complement() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = randn(&mut rng, 8, 3);
        let proj = project_columnspace(x.view()).unwrap();
        // Gram-Schmidt a random vector against the columns of X.
        let mut v: Array1<f64> = Array1::from_shape_fn(8, |_| rng.sample(StandardNormal));
        for _ in 0..3 {
            let pv = proj.apply(v.view());
            v = &v - &pv;
        }
        let pv = proj.apply(v.view());
        let norm = pv.mapv(|t| t * t).sum().sqrt();
        assert!(norm < 1e-9, "norm {norm}");
    }

    #[test]
    fn projector_idempotent_and_symmetric_on_random_x() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = randn(&mut rng, 7, 4);
        let proj = project_columnspace(x.view()).unwrap();
        // Materialize P by applying to the identity, then check properties.
        let eye = Array2::<f64>::eye(7);
        let p = proj.apply_mat(eye.view());
        let pp = p.dot(&p);
        let dev_idem = (&pp - &p).mapv(f64::abs).iter().cloned().fold(0.0, f64::max);
        let dev_sym = (&p - &p.t()).mapv(f64::abs).iter().cloned().fold(0.0, f64::max);
        assert!(dev_idem < 1e-9);
        assert!(dev_sym < 1e-9);
    }

    #[test]
    fn gram_pinv_handles_rank_deficiency() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let base = randn(&mut rng, 9, 2);
        // Third column is a combination of the first two: rank 2 of 3.
        let mut x = Array2::zeros((9, 3));
        x.column_mut(0).assign(&base.column(0));
        x.column_mut(1).assign(&base.column(1));
        let combo = &base.column(0) + &base.column(1);
        x.column_mut(2).assign(&combo);
        let pinv = gram_pinv(x.view()).unwrap();
        let gram = x.t().dot(&x);
        // Moore-Penrose identity: G G+ G = G.
        let round = gram.dot(&pinv).dot(&gram);
        let dev = (&round - &gram).mapv(f64::abs).iter().cloned().fold(0.0, f64::max);
        assert!(dev < 1e-8, "dev {dev}");
    }
}
