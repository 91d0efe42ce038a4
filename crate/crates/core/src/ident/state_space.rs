use nalgebra::{DMatrix, DVector};

use super::arma::ArmaModel;
use crate::error::{Error, Result};

/// Controllable canonical realisation of an [`ArmaModel`].
///
/// `x_k = A·x_{k−1} + B·u_k`, `y_k = C·x_k + D·u_k`. The state dimension is
/// `max(n, m+1)` so numerators longer than the denominator fit without
/// feedthrough; extra α entries are zero. `g` is the gain through which the
/// unit-variance driving noise of the AR part enters the state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DVector<f64>,
    pub d: f64,
    pub g: DVector<f64>,
    /// True when u_k is a measured input; otherwise it is unobserved noise.
    pub exogenous: bool,
}

impl StateSpaceModel {
    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn impulse_response(&self, len: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(len);
        let mut x = self.b.clone();
        for k in 0..len {
            out.push(self.c.dot(&x) + if k == 0 { self.d } else { 0.0 });
            x = &self.a * x;
        }
        out
    }
}

fn impulse_of_inverse_alpha(alpha: &[f64], len: usize) -> Vec<f64> {
    let mut h = vec![0.0; len];
    for k in 0..len {
        let mut acc = if k == 0 { 1.0 } else { 0.0 };
        for (i, a) in alpha.iter().enumerate() {
            if k > i {
                acc -= a * h[k - i - 1];
            }
        }
        h[k] = acc;
    }
    h
}

pub fn to_state_space(model: &ArmaModel) -> Result<StateSpaceModel> {
    if model.n == 0 || model.alpha.is_empty() {
        return Err(Error::OrderZero);
    }
    let num_len = model.beta.iter().rposition(|b| *b != 0.0).map_or(1, |i| i + 1);
    let d = model.n.max(num_len);

    let mut a = DMatrix::zeros(d, d);
    for (i, alpha) in model.alpha.iter().enumerate() {
        a[(0, i)] = -alpha;
    }
    for i in 1..d {
        a[(i, i - 1)] = 1.0;
    }
    let mut b = DVector::zeros(d);
    b[0] = 1.0;
    let mut c = DVector::zeros(d);
    for (j, beta) in model.beta.iter().take(d).enumerate() {
        c[j] = *beta;
    }

    // Noise enters like a unit impulse through 1/α(z). Match the first d
    // Markov parameters of that path from the output: O·g = h.
    let g = if num_len == 1 && model.beta[0] == 1.0 {
        b.clone()
    } else {
        let mut obs = DMatrix::zeros(d, d);
        let mut row = c.transpose();
        for i in 0..d {
            obs.set_row(i, &row);
            row *= &a;
        }
        let h = DVector::from_vec(impulse_of_inverse_alpha(&model.alpha, d));
        obs.svd(true, true)
            .solve(&h, 1e-12)
            .map_err(|e| Error::Malformed(format!("noise gain: {e}")))?
    };

    let ss = StateSpaceModel { a, b, c, d: 0.0, g, exogenous: model.exogenous };

    let checks = 2 * model.n.max(1);
    let direct = model.impulse_response(checks);
    let realised = ss.impulse_response(checks);
    let scale = direct.iter().fold(1.0f64, |s, v| s.max(v.abs()));
    for (k, (u, v)) in direct.iter().zip(&realised).enumerate() {
        if (u - v).abs() > 1e-9 * scale {
            return Err(Error::Malformed(format!("state-space impulse mismatch at lag {k}: {u} vs {v}")));
        }
    }
    Ok(ss)
}
