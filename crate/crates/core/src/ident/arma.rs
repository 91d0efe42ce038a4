use serde::{Deserialize, Serialize};

use super::regression::{build_regression, build_regression_masked, solve_lse, RegressionSystem};
use crate::error::{Error, Result};
use crate::stats::sample_std;

/// Identified coefficients and baseline residual statistics for one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmaModel {
    pub n: usize,
    pub m: usize,
    /// α1..αn, left-hand-side sign.
    pub alpha: Vec<f64>,
    /// β0..βm.
    pub beta: Vec<f64>,
    pub sigma: f64,
    pub fitted_on: usize,
    pub stable: bool,
    /// Whether β multiplies a measured input. When false, β is the noise gain [1, 0, …].
    pub exogenous: bool,
}

impl ArmaModel {
    /// Builds a model from coefficients, recording stability. `sigma` starts at 0.
    pub fn new(alpha: Vec<f64>, beta: Vec<f64>, exogenous: bool) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::OrderZero);
        }
        if beta.is_empty() {
            return Err(Error::InvalidOrder("beta needs at least β0".into()));
        }
        if alpha.iter().chain(&beta).any(|c| !c.is_finite()) {
            return Err(Error::InvalidOrder("non-finite coefficient".into()));
        }
        Ok(ArmaModel {
            n: alpha.len(),
            m: beta.len() - 1,
            stable: is_stable(&alpha),
            alpha,
            beta,
            sigma: 0.0,
            fitted_on: 0,
            exogenous,
        })
    }

    /// Pure AR model with the unit noise-gain convention.
    pub fn autoregressive(alpha: Vec<f64>) -> Result<Self> {
        ArmaModel::new(alpha, vec![1.0], false)
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    /// Number of past samples a prediction looks back.
    pub fn lag_span(&self) -> usize {
        if self.exogenous {
            self.n.max(self.m)
        } else {
            self.n
        }
    }

    /// θ = [α, β] for exogenous models, α alone otherwise.
    pub fn theta(&self) -> Vec<f64> {
        let mut theta = self.alpha.clone();
        if self.exogenous {
            theta.extend_from_slice(&self.beta);
        }
        theta
    }

    /// Replaces coefficients from a θ laid out as in [`RegressionSystem`].
    pub(crate) fn set_theta(&mut self, theta: &[f64]) {
        self.alpha.copy_from_slice(&theta[..self.n]);
        if self.exogenous {
            self.beta.copy_from_slice(&theta[self.n..]);
        }
        self.stable = is_stable(&self.alpha);
    }

    /// Response of the difference equation to a unit impulse in x.
    pub fn impulse_response(&self, len: usize) -> Vec<f64> {
        let mut h = vec![0.0; len];
        for k in 0..len {
            let mut acc = self.beta.get(k).copied().unwrap_or(0.0);
            for (i, a) in self.alpha.iter().enumerate() {
                if k > i {
                    acc -= a * h[k - i - 1];
                }
            }
            h[k] = acc;
        }
        h
    }

    /// Simulates the difference equation from zero initial conditions.
    pub fn simulate(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        for k in 0..x.len() {
            let mut acc = 0.0;
            for (j, b) in self.beta.iter().enumerate() {
                if k >= j {
                    acc += b * x[k - j];
                }
            }
            for (i, a) in self.alpha.iter().enumerate() {
                if k > i {
                    acc -= a * y[k - i - 1];
                }
            }
            y[k] = acc;
        }
        y
    }
}

/// Lags for a single prediction, most recent first.
///
/// `y[0]` is y_{k−1}; `x[0]` is x_k. Non-exogenous models ignore `x`.
#[derive(Debug, Clone, Copy)]
pub struct History<'a> {
    pub y: &'a [f64],
    pub x: &'a [f64],
}

/// Schur-Cohn step-down test: true when every root of
/// z^n + α1 z^{n−1} + … + αn lies strictly inside the unit circle.
pub fn is_stable(alpha: &[f64]) -> bool {
    let mut a: Vec<f64> = std::iter::once(1.0).chain(alpha.iter().copied()).collect();
    while a.len() > 1 {
        let p = a.len() - 1;
        let k = a[p];
        if !(k.abs() < 1.0) {
            return false;
        }
        let denom = 1.0 - k * k;
        a = (0..p).map(|i| (a[i] - k * a[p - i]) / denom).collect();
    }
    true
}

pub fn one_step_predict(model: &ArmaModel, history: History<'_>) -> Result<f64> {
    if history.y.len() < model.n {
        return Err(Error::InsufficientHistory { needed: model.n, available: history.y.len() });
    }
    let mut yhat: f64 = -model.alpha.iter().zip(history.y).map(|(a, y)| a * y).sum::<f64>();
    if model.exogenous {
        if history.x.len() < model.m + 1 {
            return Err(Error::InsufficientHistory { needed: model.m + 1, available: history.x.len() });
        }
        yhat += model.beta.iter().zip(history.x).map(|(b, x)| b * x).sum::<f64>();
    }
    Ok(yhat)
}

/// One-step prediction residuals `y_k − ŷ_k` for every k with a full history.
///
/// With a mask, residuals whose target or lags are unusable are skipped.
pub fn residuals(model: &ArmaModel, y: &[f64], x: Option<&[f64]>, usable: Option<&[bool]>) -> Result<Vec<f64>> {
    if model.exogenous && x.is_none() {
        return Err(Error::Malformed("model needs an exogenous series".into()));
    }
    let span = model.lag_span();
    let mut ylags = vec![0.0; model.n];
    let mut xlags = vec![0.0; model.m + 1];
    let mut out = Vec::with_capacity(y.len().saturating_sub(span));
    for k in span..y.len() {
        if let Some(u) = usable {
            if !u[k - span..=k].iter().all(|&ok| ok) {
                continue;
            }
        }
        for i in 0..model.n {
            ylags[i] = y[k - 1 - i];
        }
        if let (true, Some(x)) = (model.exogenous, x) {
            for j in 0..=model.m {
                xlags[j] = x[k - j];
            }
        }
        out.push(y[k] - one_step_predict(model, History { y: &ylags, x: &xlags })?);
    }
    Ok(out)
}

/// Sample standard deviation of one-step residuals over a series.
pub fn residual_sigma(model: &ArmaModel, y: &[f64], x: Option<&[f64]>) -> Result<f64> {
    let r = residuals(model, y, x, None)?;
    if r.len() < 2 {
        return Err(Error::InsufficientHistory { needed: model.lag_span() + 2, available: y.len() });
    }
    Ok(sample_std(&r))
}

fn from_system(sys: &RegressionSystem, theta: &[f64]) -> Result<ArmaModel> {
    let n = sys.n;
    let (alpha, beta) = if sys.exogenous {
        (theta[..n].to_vec(), theta[n..].to_vec())
    } else {
        let mut beta = vec![0.0; sys.m + 1];
        beta[0] = 1.0;
        (theta.to_vec(), beta)
    };
    let fitted = nalgebra::DVector::from_column_slice(theta);
    let resid = &sys.target - &sys.design * fitted;
    let mut model = ArmaModel::new(alpha, beta, sys.exogenous)?;
    model.sigma = sample_std(resid.as_slice());
    model.fitted_on = sys.nrows();
    Ok(model)
}

/// Least-squares fit of orders `(n, m)`. `x` is the measured input, if any.
pub fn fit_arma(y: &[f64], x: Option<&[f64]>, n: usize, m: usize) -> Result<ArmaModel> {
    let sys = build_regression(y, x, n, m)?;
    let theta = solve_lse(&sys)?;
    from_system(&sys, theta.as_slice())
}

/// Fit restricted to rows whose samples are all marked usable.
pub fn fit_arma_masked(y: &[f64], x: Option<&[f64]>, n: usize, m: usize, usable: &[bool]) -> Result<ArmaModel> {
    let sys = build_regression_masked(y, x, n, m, usable)?;
    let theta = solve_lse(&sys)?;
    from_system(&sys, theta.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, Matrix2, Vector2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn ar_series(a: &[f64], y0: &[f64], len: usize) -> Vec<f64> {
        let mut y = y0.to_vec();
        while y.len() < len {
            let k = y.len();
            y.push(a.iter().enumerate().map(|(i, c)| c * y[k - 1 - i]).sum());
        }
        y
    }

    fn noisy_ar1(a: f64, sigma: f64, len: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sigma).unwrap();
        let e: Vec<f64> = (0..len).map(|_| normal.sample(&mut rng)).collect();
        let mut y = vec![0.0; len];
        for k in 1..len {
            y[k] = a * y[k - 1] + e[k];
        }
        (y, e)
    }

    #[test]
    fn ar2_recovery_against_normal_equations() {
        let y = ar_series(&[1.1, -0.3], &[1.0, 0.7], 200);
        let m = fit_arma(&y, None, 2, 0).unwrap();
        // independent 2×2 normal equations
        let mut g = Matrix2::zeros();
        let mut b = Vector2::zeros();
        for k in 2..200 {
            let r = Vector2::new(-y[k - 1], -y[k - 2]);
            g += r * r.transpose();
            b += r * y[k];
        }
        let oracle = g.lu().solve(&b).unwrap();
        assert!((m.alpha[0] - oracle[0]).abs() < 1e-9);
        assert!((m.alpha[1] - oracle[1]).abs() < 1e-9);
        assert!((m.alpha[0] + 1.1).abs() < 1e-9);
        assert!((m.alpha[1] - 0.3).abs() < 1e-9);
    }

    #[test]
    fn constant_series() {
        let m = fit_arma(&[5.0; 30], None, 1, 0).unwrap();
        assert!((m.alpha[0] + 1.0).abs() < 1e-12);
        assert!(m.sigma < 1e-12);
        assert_eq!(m.beta, vec![1.0]);
    }

    #[test]
    fn noisy_ar1_consistency_band() {
        let (y, _) = noisy_ar1(0.8, 0.1, 5000, 11);
        let m = fit_arma(&y, None, 1, 0).unwrap();
        assert!((-0.83..=-0.77).contains(&m.alpha[0]), "{}", m.alpha[0]);
        assert!((0.09..=0.11).contains(&m.sigma), "{}", m.sigma);
        // a 20× longer batch lands near the same value
        let (big, _) = noisy_ar1(0.8, 0.1, 100_000, 12);
        let mb = fit_arma(&big, None, 1, 0).unwrap();
        assert!((mb.alpha[0] + 0.8).abs() < 0.01);
    }

    #[test]
    fn nan_in_fit() {
        let mut y = vec![1.0; 20];
        y[7] = f64::NAN;
        assert_eq!(fit_arma(&y, None, 1, 0).unwrap_err(), Error::NonFinite { index: 7 });
    }

    #[test]
    fn predict_examples() {
        let m = ArmaModel::new(vec![-0.5], vec![0.0], true).unwrap();
        assert_eq!(one_step_predict(&m, History { y: &[4.0], x: &[0.0] }).unwrap(), 2.0);
        let m = ArmaModel::new(vec![0.0], vec![1.0], true).unwrap();
        assert_eq!(one_step_predict(&m, History { y: &[3.0], x: &[9.0] }).unwrap(), 9.0);
        assert!(matches!(
            one_step_predict(&m, History { y: &[], x: &[9.0] }),
            Err(Error::InsufficientHistory { .. })
        ));
    }

    #[test]
    fn in_sample_predictions_exact() {
        let y = ar_series(&[1.1, -0.3], &[1.0, 0.7], 100);
        let m = fit_arma(&y, None, 2, 0).unwrap();
        let r = residuals(&m, &y, None, None).unwrap();
        assert!(r.iter().all(|v| v.abs() <= 1e-9));
        assert!(residual_sigma(&m, &y, None).unwrap() <= 1e-9);
    }

    #[test]
    fn sigma_matches_injected_noise() {
        let (y, e) = noisy_ar1(0.8, 0.5, 10_000, 3);
        let m = ArmaModel::autoregressive(vec![-0.8]).unwrap();
        let s = residual_sigma(&m, &y, None).unwrap();
        assert!((s - sample_std(&e[1..])).abs() < 1e-12);
        assert!((0.48..=0.52).contains(&s));
    }

    #[test]
    fn arx_exact_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..300).map(|_| rng.random_range(-1.0..1.0)).collect();
        let truth = ArmaModel::new(vec![-0.6, 0.2], vec![0.5, -0.25, 0.1], true).unwrap();
        let y = truth.simulate(&x);
        let m = fit_arma(&y, Some(&x), 2, 2).unwrap();
        for (a, b) in m.theta().iter().zip(truth.theta()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    fn companion_spectral_radius(alpha: &[f64]) -> f64 {
        let n = alpha.len();
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n {
            a[(0, i)] = -alpha[i];
            if i + 1 < n {
                a[(i + 1, i)] = 1.0;
            }
        }
        a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn stability_agrees_with_eigenvalues() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..500 {
            let n = rng.random_range(1..=5);
            let alpha: Vec<f64> = (0..n).map(|_| rng.random_range(-1.5..1.5)).collect();
            let radius = companion_spectral_radius(&alpha);
            if (radius - 1.0).abs() < 1e-6 {
                continue;
            }
            assert_eq!(is_stable(&alpha), radius < 1.0, "{alpha:?} radius {radius}");
        }
        assert!(is_stable(&[-0.5]));
        assert!(!is_stable(&[-1.0]));
        assert!(is_stable(&[0.0, 0.0]));
    }

    #[test]
    fn impulse_of_first_order() {
        let m = ArmaModel::autoregressive(vec![-0.5]).unwrap();
        assert_eq!(m.impulse_response(3), vec![1.0, 0.5, 0.25]);
    }
}
