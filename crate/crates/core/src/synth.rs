//! Synthetic sensor streams and labeled gross-error injection.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ident::ArmaModel;
use crate::sample::{ErrorClass, SensorSample, TruthLabel};

const STREAM_EXOG: u64 = 1;
const STREAM_PLACEMENT: u64 = 2;
const STREAM_FAULT_BASE: u64 = 1 << 32;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub class: ErrorClass,
    pub start_t: usize,
    pub duration: usize,
    /// Multiple of the clean noise σ: offset, drift per 100 samples,
    /// noise-inflation factor or stuck offset.
    pub magnitude: f64,
}

impl FaultSpec {
    pub fn end(&self) -> usize {
        self.start_t + self.duration
    }

    fn overlaps(&self, other: &FaultSpec) -> bool {
        self.start_t < other.end() && other.start_t < self.end()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureMode {
    /// Constant at last clean value + magnitude·σ.
    #[default]
    Stuck,
    /// Independent uniform values within ±2·magnitude·σ of the last clean value.
    ExtremeRandom,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledStream {
    pub samples: Vec<SensorSample>,
    pub truth: Vec<TruthLabel>,
    pub specs: Vec<FaultSpec>,
    pub seed: u64,
    pub clean_sigma: f64,
    /// Values before any injection.
    pub clean: Vec<f64>,
    pub failure_mode: FailureMode,
}

impl LabeledStream {
    pub fn values(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.value).collect()
    }
}

/// Clean output series and, for exogenous models, the input that drove it.
#[derive(Debug, Clone, PartialEq)]
pub struct CleanSeries {
    pub y: Vec<f64>,
    pub x: Option<Vec<f64>>,
}

/// Runs the difference equation on seeded Gaussian noise and drops a burn-in
/// of 10·n samples. Exogenous models get a unit-variance white input and the
/// noise enters as an additive equation error.
pub fn generate_clean(model: &ArmaModel, length: usize, noise_sigma: f64, seed: u64) -> Result<CleanSeries> {
    if !model.stable {
        return Err(Error::UnstableModel);
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::InvalidConfig(format!("noise_sigma must be ≥ 0, got {noise_sigma}")));
    }
    let span = model.n.max(model.m);
    if length <= 10 * span {
        return Err(Error::InvalidConfig(format!("length {length} must exceed 10·max(n,m) = {}", 10 * span)));
    }
    let burn = 10 * model.n;
    let total = length + burn;
    let mut rng = rng_for(seed, 0);
    let e: Vec<f64> = if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        (0..total).map(|_| normal.sample(&mut rng)).collect()
    } else {
        vec![0.0; total]
    };
    if !model.exogenous {
        let y = model.simulate(&e);
        return Ok(CleanSeries { y: y[burn..].to_vec(), x: None });
    }
    let mut xrng = rng_for(seed, STREAM_EXOG);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let x: Vec<f64> = (0..total).map(|_| unit.sample(&mut xrng)).collect();
    let forced = model.simulate(&x);
    let ar_only = ArmaModel::autoregressive(model.alpha.clone())?;
    let noise = ar_only.simulate(&e);
    let y: Vec<f64> = forced.iter().zip(&noise).map(|(a, b)| a + b).collect();
    Ok(CleanSeries { y: y[burn..].to_vec(), x: Some(x[burn..].to_vec()) })
}

/// Coefficients switch to `alpha`/`beta` from sample `at` onward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeChange {
    pub at: usize,
    pub alpha: Vec<f64>,
    #[serde(default = "unit_beta")]
    pub beta: Vec<f64>,
}

/// Like [`generate_clean`], but the recursion switches to a second model at
/// `change.at` (counted after burn-in) without restarting, so the series is
/// continuous across the change.
pub fn generate_switching(
    model: &ArmaModel,
    change: &RegimeChange,
    length: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<CleanSeries> {
    let after = ArmaModel::new(change.alpha.clone(), change.beta.clone(), model.exogenous)?;
    if !after.stable {
        return Err(Error::UnstableModel);
    }
    if change.at >= length {
        return Err(Error::InvalidConfig(format!("regime change at {} beyond length {length}", change.at)));
    }
    let base = generate_clean(model, length, noise_sigma, seed)?;
    // regenerate with the same noise draws, switching coefficients mid-way
    let burn = 10 * model.n;
    let total = length + burn;
    let mut rng = rng_for(seed, 0);
    let e: Vec<f64> = if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        (0..total).map(|_| normal.sample(&mut rng)).collect()
    } else {
        vec![0.0; total]
    };
    let x_full: Option<Vec<f64>> = model.exogenous.then(|| {
        let mut xrng = rng_for(seed, STREAM_EXOG);
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        (0..total).map(|_| unit.sample(&mut xrng)).collect()
    });
    let mut y = vec![0.0; total];
    for k in 0..total {
        let m = if k >= burn + change.at { &after } else { model };
        let mut acc = e[k];
        if let Some(x) = &x_full {
            acc += m.beta.iter().enumerate().filter(|(j, _)| k >= *j).map(|(j, b)| b * x[k - j]).sum::<f64>();
        } else {
            acc = m.beta[0] * e[k];
        }
        for (i, a) in m.alpha.iter().enumerate() {
            if k > i {
                acc -= a * y[k - i - 1];
            }
        }
        y[k] = acc;
    }
    debug_assert_eq!(base.x, x_full.as_ref().map(|x| x[burn..].to_vec()));
    Ok(CleanSeries { y: y[burn..].to_vec(), x: base.x })
}

/// Wraps a clean series as an all-clean labeled stream.
pub fn label_clean(sensor_id: &str, clean: &CleanSeries, clean_sigma: f64, seed: u64) -> LabeledStream {
    let samples = clean
        .y
        .iter()
        .enumerate()
        .map(|(t, v)| {
            let s = SensorSample::new(t as u64, sensor_id, *v);
            match &clean.x {
                Some(x) => s.with_exog(x[t]),
                None => s,
            }
        })
        .collect();
    LabeledStream {
        samples,
        truth: vec![TruthLabel::Clean; clean.y.len()],
        specs: Vec::new(),
        seed,
        clean_sigma,
        clean: clean.y.clone(),
        failure_mode: FailureMode::Stuck,
    }
}

pub fn inject_fault(mut stream: LabeledStream, spec: FaultSpec) -> Result<LabeledStream> {
    if spec.duration == 0 || !(spec.magnitude > 0.0 && spec.magnitude.is_finite()) {
        return Err(Error::InvalidFault(format!("duration ≥ 1 and magnitude > 0 required: {spec:?}")));
    }
    if spec.class == ErrorClass::PrecisionDegradation && spec.magnitude < 1.0 {
        return Err(Error::InvalidFault("noise-inflation factor below 1".into()));
    }
    if spec.end() > stream.samples.len() {
        return Err(Error::SpecOutOfRange { start: spec.start_t, end: spec.end(), len: stream.samples.len() });
    }
    if stream.specs.iter().any(|s| s.overlaps(&spec)) {
        return Err(Error::OverlappingFault { start: spec.start_t, end: spec.end() });
    }
    let sigma = stream.clean_sigma;
    let amp = spec.magnitude * sigma;
    let window = spec.start_t..spec.end();
    let mut rng = rng_for(stream.seed, STREAM_FAULT_BASE + spec.start_t as u64);
    match spec.class {
        ErrorClass::Bias => {
            for k in window.clone() {
                stream.samples[k].value += amp;
            }
        }
        ErrorClass::Drift => {
            let last = (spec.duration - 1).max(1) as f64;
            let end_offset = amp * spec.duration as f64 / 100.0;
            for (i, k) in window.clone().enumerate() {
                // rises linearly from 0 to the full drift at the last sample
                stream.samples[k].value += end_offset * i as f64 / last;
            }
        }
        ErrorClass::PrecisionDegradation => {
            let extra = (spec.magnitude * spec.magnitude - 1.0).sqrt() * sigma;
            if extra > 0.0 {
                let normal = Normal::new(0.0, extra).map_err(|e| Error::InvalidFault(e.to_string()))?;
                for k in window.clone() {
                    stream.samples[k].value += normal.sample(&mut rng);
                }
            }
        }
        ErrorClass::Failure => {
            let anchor = if spec.start_t > 0 { stream.samples[spec.start_t - 1].value } else { 0.0 };
            for k in window.clone() {
                stream.samples[k].value = match stream.failure_mode {
                    FailureMode::Stuck => anchor + amp,
                    FailureMode::ExtremeRandom => anchor + rng.random_range(-2.0..=2.0) * amp,
                };
            }
        }
    }
    for k in window {
        stream.truth[k] = TruthLabel::Fault(spec.class);
    }
    stream.specs.push(spec);
    Ok(stream)
}

/// Request for `count` faults at seeded random, non-overlapping positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomPoints {
    pub count: usize,
    pub duration: usize,
    pub magnitude: f64,
    /// Per-class magnitudes overriding `magnitude`.
    #[serde(default)]
    pub magnitudes: BTreeMap<ErrorClass, f64>,
    /// Classes cycled through and then shuffled. Defaults to all four.
    #[serde(default = "all_classes")]
    pub classes: Vec<ErrorClass>,
    /// Earliest allowed start, e.g. to keep a bootstrap prefix clean.
    #[serde(default)]
    pub min_start: usize,
    /// Trigger window w; consecutive faults keep at least 2·w clean samples apart.
    #[serde(default = "default_w")]
    pub window: usize,
}

fn all_classes() -> Vec<ErrorClass> {
    ErrorClass::ALL.to_vec()
}

fn default_w() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default = "default_sensor")]
    pub sensor_id: String,
    pub alpha: Vec<f64>,
    #[serde(default = "unit_beta")]
    pub beta: Vec<f64>,
    #[serde(default)]
    pub exogenous: bool,
    pub length: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
    #[serde(default)]
    pub random_points: Option<RandomPoints>,
    #[serde(default)]
    pub failure_mode: FailureMode,
    #[serde(default)]
    pub regime_change: Option<RegimeChange>,
}

fn default_sensor() -> String {
    "s0".into()
}

fn unit_beta() -> Vec<f64> {
    vec![1.0]
}

impl ScenarioConfig {
    pub fn model(&self) -> Result<ArmaModel> {
        ArmaModel::new(self.alpha.clone(), self.beta.clone(), self.exogenous)
    }
}

/// Places `rp.count` windows uniformly among all valid arrangements.
pub fn random_placement(rp: &RandomPoints, len: usize, seed: u64) -> Result<Vec<FaultSpec>> {
    if rp.count == 0 {
        return Ok(Vec::new());
    }
    if rp.classes.is_empty() || rp.duration == 0 {
        return Err(Error::InvalidConfig("random_points needs classes and a positive duration".into()));
    }
    let gap = 2 * rp.window;
    let needed = rp.min_start + rp.count * rp.duration + (rp.count - 1) * gap;
    if needed > len {
        return Err(Error::Unsatisfiable { requested: rp.count, len });
    }
    let slack = len - needed;
    let mut rng = rng_for(seed, STREAM_PLACEMENT);
    let mut offsets: Vec<usize> = (0..rp.count).map(|_| rng.random_range(0..=slack)).collect();
    offsets.sort_unstable();
    let mut classes: Vec<ErrorClass> = (0..rp.count).map(|i| rp.classes[i % rp.classes.len()]).collect();
    classes.shuffle(&mut rng);
    Ok(offsets
        .into_iter()
        .zip(classes)
        .enumerate()
        .map(|(i, (off, class))| FaultSpec {
            class,
            start_t: rp.min_start + off + i * (rp.duration + gap),
            duration: rp.duration,
            magnitude: rp.magnitudes.get(&class).copied().unwrap_or(rp.magnitude),
        })
        .collect())
}

pub fn make_scenario(cfg: &ScenarioConfig) -> Result<LabeledStream> {
    let model = cfg.model()?;
    let clean = match &cfg.regime_change {
        Some(change) => generate_switching(&model, change, cfg.length, cfg.noise_sigma, cfg.seed)?,
        None => generate_clean(&model, cfg.length, cfg.noise_sigma, cfg.seed)?,
    };
    let mut stream = label_clean(&cfg.sensor_id, &clean, cfg.noise_sigma, cfg.seed);
    stream.failure_mode = cfg.failure_mode;
    let mut specs = cfg.faults.clone();
    if let Some(rp) = &cfg.random_points {
        if !specs.is_empty() {
            return Err(Error::InvalidConfig("use either explicit faults or random_points, not both".into()));
        }
        specs = random_placement(rp, cfg.length, cfg.seed)?;
    }
    specs.sort_by_key(|s| s.start_t);
    for spec in specs {
        stream = inject_fault(stream, spec)?;
    }
    Ok(stream)
}
