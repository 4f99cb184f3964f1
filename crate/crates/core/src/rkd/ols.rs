//! Weighted least squares by Householder QR on a column-equilibrated design,
//! heteroskedasticity-robust (HC1) covariances and just-identified 2SLS.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Columns whose pivot falls below this fraction of the largest pivot are
/// treated as linearly dependent.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub(crate) struct LsFit {
    pub beta: DVector<f64>,
    /// `(X'WX)^{-1}`.
    pub bread: DMatrix<f64>,
}

/// `X` with rows scaled by `sqrt(w)`.
fn weighted_rows(x: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let mut xw = x.clone();
    for (i, &wi) in w.iter().enumerate() {
        let s = wi.sqrt();
        xw.row_mut(i).scale_mut(s);
    }
    xw
}

pub(crate) fn weighted_ls(x: &DMatrix<f64>, y: &DVector<f64>, w: &[f64], what: &str) -> Result<LsFit> {
    let (n, k) = x.shape();
    debug_assert_eq!(y.len(), n);
    debug_assert_eq!(w.len(), n);
    if n < k {
        return Err(Error::InsufficientData(format!(
            "{what}: {n} observations for {k} parameters"
        )));
    }
    let mut xw = weighted_rows(x, w);
    let yw = DVector::from_iterator(n, y.iter().zip(w).map(|(yi, wi)| yi * wi.sqrt()));
    let mut scale = vec![1.0; k];
    for (j, s) in scale.iter_mut().enumerate() {
        let norm = xw.column(j).norm();
        if norm == 0.0 {
            return Err(Error::Singular(format!("{what}: column {j} is identically zero")));
        }
        *s = norm;
        xw.column_mut(j).unscale_mut(norm);
    }
    let qr = xw.qr();
    let r = qr.r();
    let max_pivot = (0..k).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if let Some(j) = (0..k).find(|&i| r[(i, i)].abs() <= RANK_TOL * max_pivot) {
        return Err(Error::Singular(format!("{what}: design is rank deficient at column {j}")));
    }
    let qty = qr.q().transpose() * yw;
    let beta_s = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Singular(format!("{what}: triangular solve failed")))?;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| Error::Singular(format!("{what}: triangular inverse failed")))?;
    let mut bread = &r_inv * r_inv.transpose();
    let mut beta = beta_s;
    for j in 0..k {
        beta[j] /= scale[j];
        for i in 0..k {
            bread[(i, j)] /= scale[i] * scale[j];
        }
    }
    Ok(LsFit { beta, bread })
}

/// HC1 sandwich `n/(n-k) · B (Σ w_i² e_i² x_i x_i') B`.
pub(crate) fn hc1(x: &DMatrix<f64>, resid: &DVector<f64>, w: &[f64], bread: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, k) = x.shape();
    if n <= k {
        return Err(Error::InsufficientData(format!(
            "robust covariance needs more than {k} observations, got {n}"
        )));
    }
    let mut scores = x.clone();
    for i in 0..n {
        let s = w[i] * resid[i];
        scores.row_mut(i).scale_mut(s);
    }
    let meat = scores.transpose() * &scores;
    let dof = n as f64 / (n - k) as f64;
    Ok(bread * meat * bread * dof)
}

pub(crate) fn residuals(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>) -> DVector<f64> {
    y - x * beta
}

/// OLS with robust covariance.
pub(crate) struct RobustFit {
    pub beta: DVector<f64>,
    pub vcov: DMatrix<f64>,
    pub fitted: DVector<f64>,
}

impl RobustFit {
    pub fn se(&self, j: usize) -> f64 {
        self.vcov[(j, j)].max(0.0).sqrt()
    }
}

pub(crate) fn robust_ls(x: &DMatrix<f64>, y: &DVector<f64>, w: &[f64], what: &str) -> Result<RobustFit> {
    let fit = weighted_ls(x, y, w, what)?;
    let fitted = x * &fit.beta;
    let resid = y - &fitted;
    let vcov = hc1(x, &resid, w, &fit.bread)?;
    Ok(RobustFit { beta: fit.beta, vcov, fitted })
}

pub(crate) fn with_column(m: &DMatrix<f64>, c: &DVector<f64>) -> DMatrix<f64> {
    let k = m.ncols();
    let mut out = m.clone().insert_column(k, 0.0);
    out.set_column(k, c);
    out
}

/// Just-identified 2SLS: `exog` columns plus one endogenous regressor,
/// one excluded instrument. The endogenous coefficient is last.
pub(crate) struct IvFit {
    pub beta: DVector<f64>,
    pub vcov: DMatrix<f64>,
    pub first_stage: RobustFit,
}

pub(crate) fn two_sls(
    exog: &DMatrix<f64>,
    instrument: &DVector<f64>,
    endog: &DVector<f64>,
    y: &DVector<f64>,
    w: &[f64],
) -> Result<IvFit> {
    let first_stage = robust_ls(&with_column(exog, instrument), endog, w, "first stage")?;
    let xhat = with_column(exog, &first_stage.fitted);
    let second = weighted_ls(&xhat, y, w, "second stage")?;
    let resid = residuals(&with_column(exog, endog), y, &second.beta);
    let vcov = hc1(&xhat, &resid, w, &second.bread)?;
    Ok(IvFit { beta: second.beta, vcov, first_stage })
}
