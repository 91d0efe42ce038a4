use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative size below which an R diagonal entry marks a dependent column.
const RANK_TOL: f64 = 1e-10;

/// Least-squares system `design · θ ≈ target` with `θ = [α1..αn, β0..βm]`.
///
/// Row `r` holds `[−y_{k−1} … −y_{k−n}, x_k … x_{k−m}]` for the time index
/// `k = rows_k[r]`. Without a measured input the x-columns are absent.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionSystem {
    pub design: DMatrix<f64>,
    pub target: DVector<f64>,
    pub n: usize,
    pub m: usize,
    pub exogenous: bool,
    /// Time index of each row within the source series.
    pub rows_k: Vec<usize>,
}

impl RegressionSystem {
    pub fn nrows(&self) -> usize {
        self.design.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.design.ncols()
    }

    /// Sub-system made of rows `range`.
    pub fn slice_rows(&self, range: std::ops::Range<usize>) -> RegressionSystem {
        let len = range.end - range.start;
        RegressionSystem {
            design: self.design.rows(range.start, len).into_owned(),
            target: self.target.rows(range.start, len).into_owned(),
            n: self.n,
            m: self.m,
            exogenous: self.exogenous,
            rows_k: self.rows_k[range].to_vec(),
        }
    }
}

/// Regressor row for time `k`. Caller guarantees all lags exist.
pub(crate) fn regressor_row(y: &[f64], x: Option<&[f64]>, n: usize, m: usize, k: usize) -> Vec<f64> {
    let mut row = Vec::with_capacity(n + m + 1);
    row.extend((1..=n).map(|i| -y[k - i]));
    if let Some(x) = x {
        row.extend((0..=m).map(|j| x[k - j]));
    }
    row
}

fn check_inputs(y: &[f64], x: Option<&[f64]>, n: usize, m: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidOrder("AR order n must be at least 1".into()));
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index: i });
    }
    if let Some(x) = x {
        if x.len() != y.len() {
            return Err(Error::Malformed(format!(
                "exogenous series has {} values, output has {}",
                x.len(),
                y.len()
            )));
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index: i });
        }
    }
    if y.len() <= n + m + 1 {
        return Err(Error::SeriesTooShort { len: y.len(), n, m });
    }
    Ok(())
}

/// Lays out the regression for orders `(n, m)` over the whole series.
pub fn build_regression(y: &[f64], x: Option<&[f64]>, n: usize, m: usize) -> Result<RegressionSystem> {
    build(y, x, n, m, None)
}

/// Like [`build_regression`], but drops every row whose target or lags touch
/// a sample marked unusable.
pub fn build_regression_masked(
    y: &[f64],
    x: Option<&[f64]>,
    n: usize,
    m: usize,
    usable: &[bool],
) -> Result<RegressionSystem> {
    if usable.len() != y.len() {
        return Err(Error::Malformed("usability mask length differs from series".into()));
    }
    build(y, x, n, m, Some(usable))
}

fn build(y: &[f64], x: Option<&[f64]>, n: usize, m: usize, usable: Option<&[bool]>) -> Result<RegressionSystem> {
    check_inputs(y, x, n, m)?;
    let p = n.max(m);
    let ncols = n + if x.is_some() { m + 1 } else { 0 };
    let span = if x.is_some() { p } else { n };

    let rows_k: Vec<usize> = (p..y.len())
        .filter(|&k| usable.is_none_or(|u| u[k - span..=k].iter().all(|&ok| ok)))
        .collect();
    if rows_k.len() < ncols.max(1) + 1 {
        return Err(Error::SeriesTooShort { len: rows_k.len() + p, n, m });
    }

    let mut design = DMatrix::zeros(rows_k.len(), ncols);
    let mut target = DVector::zeros(rows_k.len());
    for (r, &k) in rows_k.iter().enumerate() {
        for (c, v) in regressor_row(y, x, n, m, k).into_iter().enumerate() {
            design[(r, c)] = v;
        }
        target[r] = y[k];
    }
    Ok(RegressionSystem {
        design,
        target,
        n,
        m,
        exogenous: x.is_some(),
        rows_k,
    })
}

/// Householder QR factorisation with a rank check on the diagonal of R.
pub(crate) struct CheckedQr {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

pub(crate) fn checked_qr(design: &DMatrix<f64>) -> Result<CheckedQr> {
    let (rows, cols) = design.shape();
    if rows < cols {
        return Err(Error::RankDeficient { column: rows });
    }
    let qr = design.clone().qr();
    let r = qr.r();
    for j in 0..cols {
        let col_norm = design.column(j).norm();
        if col_norm == 0.0 || r[(j, j)].abs() <= RANK_TOL * col_norm {
            return Err(Error::RankDeficient { column: j });
        }
    }
    Ok(CheckedQr { q: qr.q(), r })
}

/// Minimises `‖design·θ − target‖₂` through an orthogonal decomposition.
pub fn solve_lse(sys: &RegressionSystem) -> Result<DVector<f64>> {
    let qr = checked_qr(&sys.design)?;
    let rhs = qr.q.transpose() * &sys.target;
    qr.r
        .solve_upper_triangular(&rhs)
        .ok_or(Error::RankDeficient { column: sys.ncols().saturating_sub(1) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ar1_row_layout() {
        let sys = build_regression(&[1.0, 2.0, 3.0, 4.0], None, 1, 0).unwrap();
        assert_eq!(sys.design.shape(), (3, 1));
        assert_eq!(sys.design.column(0).as_slice(), &[-1.0, -2.0, -3.0]);
        assert_eq!(sys.target.as_slice(), &[2.0, 3.0, 4.0]);
        assert_eq!(sys.rows_k, vec![1, 2, 3]);
    }

    #[test]
    fn too_short() {
        let err = build_regression(&[1.0, 2.0, 3.0], None, 2, 2).unwrap_err();
        assert!(matches!(err, Error::SeriesTooShort { len: 3, n: 2, m: 2 }));
    }

    #[test]
    fn nan_rejected() {
        let err = build_regression(&[1.0, f64::NAN, 3.0, 4.0, 5.0], None, 1, 0).unwrap_err();
        assert_eq!(err, Error::NonFinite { index: 1 });
    }

    #[test]
    fn exog_columns_follow_ar_columns() {
        let y = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let x = [10.0, 20.0, 30.0, 40.0, 50.0, 60.0];
        let sys = build_regression(&y, Some(&x), 1, 1).unwrap();
        // k = 1: [−y0, x1, x0]
        assert_eq!(sys.design.row(0).iter().copied().collect::<Vec<_>>(), vec![-1.0, 20.0, 10.0]);
        assert_eq!(sys.target[0], 2.0);
        assert_eq!(sys.nrows(), 5);
    }

    #[test]
    fn geometric_series_recovers_alpha() {
        // y_k = 0.5·y_{k−1}; one unknown: α1 = −Σ(y_k·y_{k−1}) / Σ y_{k−1}²·(−1)
        let y: Vec<f64> = (0..20).map(|k| 8.0 * 0.5f64.powi(k)).collect();
        let sys = build_regression(&y, None, 1, 0).unwrap();
        let num: f64 = (1..20).map(|k| -y[k - 1] * y[k]).sum();
        let den: f64 = (1..20).map(|k| y[k - 1] * y[k - 1]).sum();
        let theta = solve_lse(&sys).unwrap();
        assert!((theta[0] - num / den).abs() < 1e-12);
        assert!((theta[0] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn identity_system() {
        let sys = RegressionSystem {
            design: DMatrix::identity(2, 2),
            target: DVector::from_vec(vec![3.0, 7.0]),
            n: 2,
            m: 0,
            exogenous: false,
            rows_k: vec![0, 1],
        };
        let theta = solve_lse(&sys).unwrap();
        assert_eq!(theta.as_slice(), &[3.0, 7.0]);
    }

    #[test]
    fn duplicated_column_is_rank_deficient() {
        let design = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0]);
        let sys = RegressionSystem {
            design,
            target: DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]),
            n: 2,
            m: 0,
            exogenous: false,
            rows_k: vec![0, 1, 2, 3],
        };
        assert_eq!(solve_lse(&sys).unwrap_err(), Error::RankDeficient { column: 1 });
    }

    #[test]
    fn mask_drops_rows_touching_unusable_samples() {
        let y: Vec<f64> = (0..10).map(f64::from).collect();
        let mut usable = vec![true; 10];
        usable[4] = false;
        let sys = build_regression_masked(&y, None, 2, 0, &usable).unwrap();
        // rows k = 4, 5, 6 all touch sample 4
        assert_eq!(sys.rows_k, vec![2, 3, 7, 8, 9]);
    }
}
