use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use super::arma::ArmaModel;
use super::regression::{checked_qr, regressor_row, RegressionSystem};
use crate::error::{Error, Result};
use crate::sample::SensorSample;

/// Recursive least-squares state with exponential forgetting.
///
/// `p` is the inverse information matrix (XᵀX)⁻¹ scaled by the forgetting
/// history. `recent` keeps the lags needed to form the next regressor row.
#[derive(Debug, Clone)]
pub struct RlsState {
    pub theta: DVector<f64>,
    pub p: DMatrix<f64>,
    pub lambda: f64,
    n: usize,
    m: usize,
    exogenous: bool,
    recent: VecDeque<(f64, f64)>,
}

impl RlsState {
    /// Seeds θ and P from a batch solve of `sys`, with P = R⁻¹R⁻ᵀ from its QR factor.
    pub fn seed(sys: &RegressionSystem, lambda: f64) -> Result<Self> {
        if !(lambda > 0.9 && lambda <= 1.0) {
            return Err(Error::InvalidConfig(format!("forgetting factor {lambda} outside (0.9, 1]")));
        }
        let qr = checked_qr(&sys.design)?;
        let cols = sys.ncols();
        let r_inv = qr
            .r
            .solve_upper_triangular(&DMatrix::identity(cols, cols))
            .ok_or(Error::RankDeficient { column: cols - 1 })?;
        let theta = r_inv.clone() * (qr.q.transpose() * &sys.target);
        let p = &r_inv * r_inv.transpose();
        Ok(RlsState {
            theta,
            p,
            lambda,
            n: sys.n,
            m: sys.m,
            exogenous: sys.exogenous,
            recent: VecDeque::new(),
        })
    }

    fn span(&self) -> usize {
        if self.exogenous {
            self.n.max(self.m)
        } else {
            self.n
        }
    }

    /// Loads the trailing samples of a series as lag history.
    pub fn prime(&mut self, y: &[f64], x: Option<&[f64]>) {
        self.recent.clear();
        let start = y.len().saturating_sub(self.span());
        for k in start..y.len() {
            self.recent.push_back((y[k], x.map_or(0.0, |x| x[k])));
        }
    }

    /// Forgets the lag history, e.g. after a gap in usable data.
    pub fn clear_history(&mut self) {
        self.recent.clear();
    }

    /// One RLS step on an explicit row. Returns the a-priori residual.
    pub fn update_row(&mut self, row: &[f64], target: f64) -> f64 {
        let phi = DVector::from_column_slice(row);
        let p_phi = &self.p * &phi;
        let denom = self.lambda + phi.dot(&p_phi);
        let gain = &p_phi / denom;
        let err = target - phi.dot(&self.theta);
        self.theta += &gain * err;
        self.p = (&self.p - &gain * p_phi.transpose()) / self.lambda;
        self.p = (&self.p + self.p.transpose()) * 0.5;
        err
    }

    /// Replays every row of a regression system in order.
    pub fn update_system(&mut self, sys: &RegressionSystem) {
        for r in 0..sys.nrows() {
            let row: Vec<f64> = sys.design.row(r).iter().copied().collect();
            self.update_row(&row, sys.target[r]);
        }
    }
}

/// Feeds one sample to the recursive solver and returns the model carrying
/// the refreshed coefficients. Until enough lags are buffered the sample only
/// extends the history and `InsufficientHistory` is returned.
pub fn rls_update(model: &ArmaModel, sample: &SensorSample, state: &mut RlsState) -> Result<ArmaModel> {
    sample.validate()?;
    let x_k = sample.exog.unwrap_or(0.0);
    if state.exogenous && sample.exog.is_none() {
        return Err(Error::Malformed("exogenous model fed a sample without exog".into()));
    }
    let span = state.span();
    let available = state.recent.len();
    if available < span {
        state.recent.push_back((sample.value, x_k));
        return Err(Error::InsufficientHistory { needed: span, available });
    }
    let y: Vec<f64> = state.recent.iter().map(|s| s.0).chain([sample.value]).collect();
    let x: Vec<f64> = state.recent.iter().map(|s| s.1).chain([x_k]).collect();
    let k = y.len() - 1;
    let row = regressor_row(&y, state.exogenous.then_some(&x[..]), state.n, state.m, k);
    state.update_row(&row, sample.value);

    state.recent.push_back((sample.value, x_k));
    while state.recent.len() > span {
        state.recent.pop_front();
    }
    let mut out = model.clone();
    out.set_theta(state.theta.as_slice());
    out.fitted_on += 1;
    Ok(out)
}
