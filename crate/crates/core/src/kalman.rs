//! Kalman tracking of an identified plant and the chi-squared global test on
//! its innovations.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::ident::StateSpaceModel;
use crate::sample::SensorSample;

pub const DEFAULT_CONFIDENCE: f64 = 0.95;
/// Measurement noise as a fraction of the identified residual variance.
pub const DEFAULT_R_FRACTION: f64 = 0.01;
pub const DEFAULT_Q_SCALE: f64 = 1e-4;
pub const DEFAULT_P0_SCALE: f64 = 100.0;
/// Samples per state dimension during which no flag is raised.
pub const WARMUP_PER_STATE: usize = 10;

const MIN_R: f64 = 1e-12;

/// Noise covariances for the filter.
///
/// `Q = q_scale·r·I + drive·g·gᵀ` where `g` is the model's noise gain, and
/// `P0 = p0_scale·r·I`. `drive` is the variance of the plant's own driving
/// noise; `r` is what the sensor adds on top of it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    pub r: f64,
    pub q_scale: f64,
    pub p0_scale: f64,
    pub drive: f64,
}

impl NoiseConfig {
    pub fn new(r: f64, q_scale: f64, p0_scale: f64) -> Self {
        NoiseConfig { r, q_scale, p0_scale, drive: 0.0 }
    }

    /// Defaults derived from the identified residual standard deviation.
    pub fn from_sigma(sigma: f64) -> Self {
        let var = sigma * sigma;
        NoiseConfig {
            r: (DEFAULT_R_FRACTION * var).max(MIN_R),
            q_scale: DEFAULT_Q_SCALE,
            p0_scale: DEFAULT_P0_SCALE,
            drive: var,
        }
    }

    pub fn with_drive(mut self, drive: f64) -> Self {
        self.drive = drive;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.r) {
            return Err(Error::InvalidNoise(format!("R must be > 0, got {}", self.r)));
        }
        if !ok(self.q_scale) {
            return Err(Error::InvalidNoise(format!("q_scale must be > 0, got {}", self.q_scale)));
        }
        if !ok(self.p0_scale) {
            return Err(Error::InvalidNoise(format!("P0_scale must be > 0, got {}", self.p0_scale)));
        }
        if !(self.drive.is_finite() && self.drive >= 0.0) {
            return Err(Error::InvalidNoise(format!("drive must be ≥ 0, got {}", self.drive)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct KalmanState {
    pub x_hat: DVector<f64>,
    pub p: DMatrix<f64>,
    pub model: StateSpaceModel,
    pub noise: NoiseConfig,
    pub q: DMatrix<f64>,
    /// Completed steps.
    pub k: u64,
    pub last_t: Option<u64>,
    pub threshold: f64,
    /// Steps during which flags are suppressed.
    pub warmup: u64,
    /// Skip the correction on flagged samples.
    pub coast_on_flag: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Innovation {
    pub v: f64,
    pub cov: f64,
    pub k: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GedDecision {
    pub gamma: f64,
    pub threshold: f64,
    pub flagged: bool,
    pub k: u64,
}

pub fn init_filter(model: StateSpaceModel, noise: NoiseConfig) -> Result<KalmanState> {
    noise.validate()?;
    let d = model.dim();
    let q = DMatrix::identity(d, d) * (noise.q_scale * noise.r) + &model.g * model.g.transpose() * noise.drive;
    Ok(KalmanState {
        x_hat: DVector::zeros(d),
        p: DMatrix::identity(d, d) * (noise.p0_scale * noise.r),
        q,
        model,
        noise,
        k: 0,
        last_t: None,
        threshold: chi2_threshold(1, DEFAULT_CONFIDENCE)?,
        warmup: (WARMUP_PER_STATE * d) as u64,
        coast_on_flag: true,
    })
}

impl KalmanState {
    pub fn with_confidence(mut self, confidence: f64) -> Result<Self> {
        self.threshold = chi2_threshold(1, confidence)?;
        Ok(self)
    }

    /// Swaps in a refreshed model, keeping the estimate and covariance.
    pub fn reseed(&mut self, model: StateSpaceModel, noise: NoiseConfig) -> Result<()> {
        noise.validate()?;
        if model.dim() != self.model.dim() {
            return Err(Error::InvalidOrder(format!(
                "state dimension changed from {} to {}",
                self.model.dim(),
                model.dim()
            )));
        }
        let d = model.dim();
        self.q = DMatrix::identity(d, d) * (noise.q_scale * noise.r) + &model.g * model.g.transpose() * noise.drive;
        self.model = model;
        self.noise = noise;
        Ok(())
    }

    /// Output the filter expects before seeing the measurement; valid after `predict`.
    pub fn expected_output(&self) -> f64 {
        self.model.c.dot(&self.x_hat)
    }
}

fn symmetrize(p: &mut DMatrix<f64>) {
    let t = p.transpose();
    *p += t;
    *p *= 0.5;
}

/// Time update. `exog` is the measured input for models that have one.
pub fn predict(state: &mut KalmanState, exog: Option<f64>) {
    let mut x = &state.model.a * &state.x_hat;
    if let (true, Some(u)) = (state.model.exogenous, exog) {
        x += &state.model.b * u;
    }
    state.x_hat = x;
    state.p = &state.model.a * &state.p * state.model.a.transpose() + &state.q;
    symmetrize(&mut state.p);
}

pub fn innovate(state: &KalmanState, y: f64, exog: Option<f64>) -> Result<Innovation> {
    if !y.is_finite() {
        return Err(Error::NonFinite { index: state.k as usize });
    }
    let c = &state.model.c;
    let mut v = y - c.dot(&state.x_hat);
    if let (true, Some(u)) = (state.model.exogenous, exog) {
        v -= state.model.d * u;
    }
    let cov = (state.p.transpose() * c).dot(c) + state.noise.r;
    Ok(Innovation { v, cov, k: state.k })
}

/// Measurement update in Joseph form.
pub fn correct(state: &mut KalmanState, inn: &Innovation) -> Result<()> {
    if !(inn.cov > 0.0) {
        return Err(Error::SingularInnovation(inn.cov));
    }
    let d = state.model.dim();
    let c = &state.model.c;
    let gain = &state.p * c / inn.cov;
    state.x_hat += &gain * inn.v;
    let ikc = DMatrix::identity(d, d) - &gain * c.transpose();
    state.p = &ikc * &state.p * ikc.transpose() + &gain * gain.transpose() * state.noise.r;
    symmetrize(&mut state.p);
    state.k += 1;
    Ok(())
}

pub fn chi2_threshold(dof: usize, confidence: f64) -> Result<f64> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::BadConfidence(confidence));
    }
    if dof == 0 {
        return Err(Error::BadDof);
    }
    let dist = ChiSquared::new(dof as f64).map_err(|_| Error::BadDof)?;
    Ok(dist.inverse_cdf(confidence))
}

pub fn global_test(inn: &Innovation, threshold: f64) -> Result<GedDecision> {
    if !(inn.cov > 0.0) {
        return Err(Error::SingularInnovation(inn.cov));
    }
    let gamma = inn.v * inn.v / inn.cov;
    Ok(GedDecision { gamma, threshold, flagged: gamma > threshold, k: inn.k })
}

/// γ = vᵀ V⁻¹ v for a stacked measurement.
pub fn quadratic_form(v: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let chol = cov.clone().cholesky().ok_or(Error::SingularInnovation(cov.determinant()))?;
    Ok(v.dot(&chol.solve(v)))
}

/// predict → innovate → global test → correct, coasting on flagged samples.
///
/// During warm-up the threshold is reported as infinite so nothing flags.
pub fn step(state: &mut KalmanState, sample: &SensorSample) -> Result<(Innovation, GedDecision)> {
    if let Some(last) = state.last_t {
        if sample.t <= last {
            return Err(Error::OutOfOrder { sensor: sample.sensor_id.clone(), t: sample.t, last });
        }
    }
    if state.model.exogenous && sample.exog.is_none() {
        return Err(Error::Malformed(format!("sensor {} needs an exog value at t={}", sample.sensor_id, sample.t)));
    }
    sample.validate()?;
    predict(state, sample.exog);
    let inn = innovate(state, sample.value, sample.exog)?;
    let threshold = if state.k < state.warmup { f64::INFINITY } else { state.threshold };
    let decision = global_test(&inn, threshold)?;
    if decision.flagged && state.coast_on_flag {
        state.k += 1;
    } else {
        correct(state, &inn)?;
    }
    state.last_t = Some(sample.t);
    Ok((inn, decision))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ident::{to_state_space, ArmaModel};
    use crate::stats::lag1_autocorr;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn scalar_model(a: f64) -> StateSpaceModel {
        StateSpaceModel {
            a: DMatrix::from_element(1, 1, a),
            b: DVector::from_element(1, 1.0),
            c: DVector::from_element(1, 1.0),
            d: 0.0,
            g: DVector::from_element(1, 1.0),
            exogenous: false,
        }
    }

    fn ar_stream(alpha: &[f64], sigma: f64, len: usize, seed: u64) -> Vec<f64> {
        let model = ArmaModel::autoregressive(alpha.to_vec()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sigma).unwrap();
        let e: Vec<f64> = (0..len + 200).map(|_| normal.sample(&mut rng)).collect();
        model.simulate(&e)[200..].to_vec()
    }

    #[test]
    fn init_examples() {
        let st = init_filter(scalar_model(0.5), NoiseConfig::new(1.0, 1e-4, 100.0)).unwrap();
        assert_eq!(st.p, DMatrix::from_element(1, 1, 100.0));
        assert_eq!(st.x_hat, DVector::zeros(1));
        assert!(matches!(
            init_filter(scalar_model(0.5), NoiseConfig::new(1.0, 0.0, 100.0)),
            Err(Error::InvalidNoise(_))
        ));
        let ss = to_state_space(&ArmaModel::autoregressive(vec![0.1, 0.2, 0.3]).unwrap()).unwrap();
        let st = init_filter(ss, NoiseConfig::new(2.0, 1e-4, 100.0)).unwrap();
        assert_eq!(st.p, DMatrix::identity(3, 3) * 200.0);
        assert!(st.p.clone().symmetric_eigenvalues().iter().all(|e| *e >= 0.0));
    }

    #[test]
    fn predict_examples() {
        let mut st = init_filter(scalar_model(1.0), NoiseConfig::new(1.0, 0.1, 1.0)).unwrap();
        st.x_hat[0] = 2.0;
        predict(&mut st, None);
        assert_eq!(st.x_hat[0], 2.0);
        assert!((st.p[(0, 0)] - 1.1).abs() < 1e-15);

        let mut st = init_filter(scalar_model(0.0), NoiseConfig::new(1.0, 0.1, 1.0)).unwrap();
        st.x_hat[0] = 42.0;
        predict(&mut st, None);
        assert_eq!(st.x_hat[0], 0.0);
    }

    #[test]
    fn open_loop_covariance_reaches_lyapunov_fixed_point() {
        let ss = to_state_space(&ArmaModel::autoregressive(vec![-0.6, 0.3]).unwrap()).unwrap();
        let mut st = init_filter(ss.clone(), NoiseConfig::new(1.0, 0.5, 1.0)).unwrap();
        let mut prev = st.p.clone();
        for _ in 0..1000 {
            predict(&mut st, None);
            let delta = (&st.p - &prev).norm();
            prev = st.p.clone();
            if delta < 1e-8 {
                break;
            }
        }
        // independent fixed-point iteration
        let q = DMatrix::identity(2, 2) * 0.5;
        let mut lyap = DMatrix::zeros(2, 2);
        for _ in 0..5000 {
            lyap = &ss.a * &lyap * ss.a.transpose() + &q;
        }
        assert!((&st.p - lyap).amax() < 1e-7);
    }

    #[test]
    fn innovate_examples() {
        let mut st = init_filter(scalar_model(1.0), NoiseConfig::new(1.0, 1e-4, 1.0)).unwrap();
        st.x_hat[0] = 3.0;
        st.p[(0, 0)] = 0.0;
        let i = innovate(&st, 3.0, None).unwrap();
        assert_eq!((i.v, i.cov), (0.0, 1.0));
        assert_eq!(innovate(&st, 5.0, None).unwrap().v, 2.0);
        st.p[(0, 0)] = 4.0;
        assert_eq!(innovate(&st, 5.0, None).unwrap().cov, 5.0);
        assert!(matches!(innovate(&st, f64::NAN, None), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn correct_examples() {
        let mut st = init_filter(scalar_model(1.0), NoiseConfig::new(1.0, 1e-4, 1.0)).unwrap();
        let inn = innovate(&st, 2.0, None).unwrap();
        correct(&mut st, &inn).unwrap();
        assert!((st.x_hat[0] - 1.0).abs() < 1e-15);
        assert!((st.p[(0, 0)] - 0.5).abs() < 1e-15);
        assert_eq!(st.k, 1);

        let before = st.p.trace();
        let x = st.x_hat.clone();
        let cov = st.p[(0, 0)] + 1.0;
        correct(&mut st, &Innovation { v: 0.0, cov, k: 1 }).unwrap();
        assert_eq!(st.x_hat, x);
        assert!(st.p.trace() <= before);
        assert!(matches!(
            correct(&mut st, &Innovation { v: 1.0, cov: 0.0, k: 2 }),
            Err(Error::SingularInnovation(_))
        ));
    }

    /// Chi-squared CDF by Simpson integration after substituting x = u².
    fn chi2_cdf_oracle(dof: u32, x: f64) -> f64 {
        let norm = match dof {
            1 => (2.0 / std::f64::consts::PI).sqrt(),
            2 => 1.0,
            _ => unimplemented!(),
        };
        let f = |u: f64| norm * u.powi(dof as i32 - 1) * (-u * u / 2.0).exp();
        let hi = x.sqrt();
        let steps = 20_000;
        let h = hi / steps as f64;
        let mut s = f(0.0) + f(hi);
        for i in 1..steps {
            s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    fn chi2_inv_oracle(dof: u32, p: f64) -> f64 {
        let (mut lo, mut hi) = (0.0, 100.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if chi2_cdf_oracle(dof, mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn chi2_against_integration() {
        for (dof, p, table) in [(1, 0.95, 3.841), (1, 0.99, 6.635), (2, 0.95, 5.991)] {
            let got = chi2_threshold(dof, p).unwrap();
            let oracle = chi2_inv_oracle(dof as u32, p);
            assert!((got - oracle).abs() / oracle < 1e-5, "{got} vs {oracle}");
            assert!((got - table).abs() < 5e-4);
        }
        assert_eq!(chi2_threshold(1, 1.0), Err(Error::BadConfidence(1.0)));
        assert_eq!(chi2_threshold(1, 0.0), Err(Error::BadConfidence(0.0)));
        assert_eq!(chi2_threshold(0, 0.5), Err(Error::BadDof));
    }

    #[test]
    fn global_test_examples() {
        let d = global_test(&Innovation { v: 2.0, cov: 4.0, k: 0 }, 3.841).unwrap();
        assert_eq!(d.gamma, 1.0);
        assert!(!d.flagged);
        let d = global_test(&Innovation { v: 0.0, cov: 4.0, k: 0 }, 0.0).unwrap();
        assert!(!d.flagged);
        let thr = chi2_threshold(1, 0.95).unwrap();
        let d = global_test(&Innovation { v: 4.0, cov: 4.0, k: 0 }, thr).unwrap();
        assert!(d.gamma == 4.0 && d.flagged);
    }

    #[test]
    fn quadratic_form_scalar_case() {
        let g = quadratic_form(&DVector::from_element(1, 2.0), &DMatrix::from_element(1, 1, 4.0)).unwrap();
        assert!((g - 1.0).abs() < 1e-15);
    }

    fn tracker(alpha: &[f64], sigma: f64) -> KalmanState {
        let model = ArmaModel::autoregressive(alpha.to_vec()).unwrap();
        init_filter(to_state_space(&model).unwrap(), NoiseConfig::from_sigma(sigma)).unwrap()
    }

    #[test]
    fn null_flag_rate() {
        let y = ar_stream(&[-0.5], 1.0, 10_000, 31);
        let mut st = tracker(&[-0.5], 1.0);
        let mut flags = 0;
        for (t, v) in y.iter().enumerate() {
            let (_, d) = step(&mut st, &SensorSample::new(t as u64, "s", *v)).unwrap();
            flags += d.flagged as usize;
        }
        let rate = flags as f64 / y.len() as f64;
        assert!((0.035..=0.065).contains(&rate), "rate {rate}");
    }

    #[test]
    fn whiteness_without_coasting() {
        let y = ar_stream(&[-1.2, 0.5], 1.0, 10_000, 32);
        let mut st = tracker(&[-1.2, 0.5], 1.0);
        st.coast_on_flag = false;
        let mut v = Vec::new();
        for (t, val) in y.iter().enumerate() {
            let (inn, _) = step(&mut st, &SensorSample::new(t as u64, "s", *val)).unwrap();
            if t >= 20 {
                v.push(inn.v);
            }
        }
        assert!(lag1_autocorr(&v).abs() < 0.05);
    }

    #[test]
    fn bias_detected_quickly() {
        let mut y = ar_stream(&[-0.5], 1.0, 1000, 33);
        for v in &mut y[500..] {
            *v += 6.0;
        }
        let mut st = tracker(&[-0.5], 1.0);
        let mut first = None;
        for (t, v) in y.iter().enumerate() {
            let (_, d) = step(&mut st, &SensorSample::new(t as u64, "s", *v)).unwrap();
            if t >= 500 && d.flagged && first.is_none() {
                first = Some(t);
            }
        }
        assert!(first.unwrap() < 505);
    }

    #[test]
    fn out_of_order_rejected() {
        let mut st = tracker(&[-0.5], 1.0);
        step(&mut st, &SensorSample::new(5, "s", 0.0)).unwrap();
        assert!(matches!(step(&mut st, &SensorSample::new(5, "s", 0.0)), Err(Error::OutOfOrder { t: 5, last: 5, .. })));
    }

    #[test]
    fn coasting_equals_open_loop() {
        let y = ar_stream(&[-0.7], 1.0, 400, 34);
        let mut st = tracker(&[-0.7], 1.0);
        for (t, v) in y[..200].iter().enumerate() {
            step(&mut st, &SensorSample::new(t as u64, "s", *v)).unwrap();
        }
        let mut open = st.clone();
        for t in 200..300 {
            let (_, d) = step(&mut st, &SensorSample::new(t, "s", 1e6)).unwrap();
            assert!(d.flagged);
            predict(&mut open, None);
        }
        assert_eq!(st.x_hat, open.x_hat);
    }

    #[test]
    fn covariance_stays_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        for _ in 0..5 {
            let alpha = vec![rng.random_range(-0.9..0.9), rng.random_range(-0.3..0.3)];
            let y = ar_stream(&alpha, 1.0, 20_000, rng.random());
            let mut st = tracker(&alpha, 1.0);
            for (t, v) in y.iter().enumerate() {
                step(&mut st, &SensorSample::new(t as u64, "s", *v)).unwrap();
            }
            assert!((&st.p - st.p.transpose()).amax() < 1e-9);
            assert!(st.p.clone().symmetric_eigenvalues().iter().all(|e| *e >= -1e-9));
        }
    }
}
