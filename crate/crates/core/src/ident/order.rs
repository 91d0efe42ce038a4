use super::arma::{fit_arma, fit_arma_masked, ArmaModel};
use crate::error::{Error, Result};
use crate::stats::mean;

/// AIC-style score: log residual variance plus 2 per parameter per row.
///
/// The variance is floored at a tiny fraction of the target's mean square so
/// exact fits tie and fall to the smaller order.
fn score(model: &ArmaModel, y: &[f64]) -> f64 {
    let params = model.n + if model.exogenous { model.m + 1 } else { 0 };
    let rows = model.fitted_on.max(1) as f64;
    let ms = mean(&y.iter().map(|v| v * v).collect::<Vec<_>>());
    let floor = (1e-20 * ms).max(f64::MIN_POSITIVE);
    let var = (model.sigma * model.sigma).max(floor);
    var.ln() + 2.0 * params as f64 / rows
}

/// Grid search over `n ∈ 1..=max_n`, `m ∈ 0..=max_m`. Without a measured
/// input m does not change the fit, so only m = 0 is tried.
pub fn select_order(y: &[f64], x: Option<&[f64]>, max_n: usize, max_m: usize) -> Result<(usize, usize)> {
    search(max_n, max_m, x.is_some(), |n, m| fit_arma(y, x, n, m), y)
}

/// [`select_order`] restricted to usable samples.
pub fn select_order_masked(
    y: &[f64],
    x: Option<&[f64]>,
    max_n: usize,
    max_m: usize,
    usable: &[bool],
) -> Result<(usize, usize)> {
    search(max_n, max_m, x.is_some(), |n, m| fit_arma_masked(y, x, n, m, usable), y)
}

fn search(
    max_n: usize,
    max_m: usize,
    exogenous: bool,
    fit: impl Fn(usize, usize) -> Result<ArmaModel>,
    y: &[f64],
) -> Result<(usize, usize)> {
    if max_n == 0 {
        return Err(Error::InvalidOrder("max_n must be at least 1".into()));
    }
    let m_max = if exogenous { max_m } else { 0 };
    let mut best: Option<((usize, usize), f64)> = None;
    let mut last_err = None;
    for n in 1..=max_n {
        for m in 0..=m_max {
            match fit(n, m) {
                Ok(model) => {
                    let s = score(&model, y);
                    if best.is_none_or(|(_, b)| s < b - 1e-12) {
                        best = Some(((n, m), s));
                    }
                }
                Err(e @ (Error::SeriesTooShort { .. } | Error::RankDeficient { .. })) => last_err = Some(e),
                Err(e) => return Err(e),
            }
        }
    }
    match (best, last_err) {
        (Some((order, _)), _) => Ok(order),
        (None, Some(Error::RankDeficient { column })) => Err(Error::RankDeficient { column }),
        (None, _) => Err(Error::SeriesTooShort { len: y.len(), n: 1, m: 0 }),
    }
}
