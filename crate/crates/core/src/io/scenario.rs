//! Scenario config files (TOML).
//!
//! ```toml
//! seed = 7
//! sensor_id = "demo"
//! length = 12000
//! failure_mode = "stuck"            # or "extreme_random"
//!
//! [model]
//! alpha = [-0.5]                    # or: fit_from = "plant.csv", order = "auto" | [n, m]
//! beta = [1.0]
//! exogenous = false
//!
//! [noise]
//! sigma = 1.0                       # defaults to the fitted sigma with fit_from
//!
//! [[faults]]
//! class = "Bias"
//! start = 3000
//! duration = 150
//! magnitude = 5.0
//! ```
//!
//! Instead of `[[faults]]`, `random_points = 4` (or a `[random_points]` table)
//! places faults at seeded random positions. `[regime_change]` switches the
//! coefficients at `at`.

use std::fs::File;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::ident::{fit_arma, select_order};
use crate::io::samples::CsvSamples;
use crate::sample::ErrorClass;
use crate::synth::{FailureMode, FaultSpec, RandomPoints, RegimeChange, ScenarioConfig};

/// Shorthand `random_points = k` uses these, keeping a fitting prefix clean.
const SHORTHAND_DURATION: usize = 100;
const SHORTHAND_MAGNITUDE: f64 = 3.0;
const SHORTHAND_MIN_START: usize = 2000;
const AUTO_MAX_N: usize = 4;
const AUTO_MAX_M: usize = 2;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    seed: u64,
    #[serde(default = "default_sensor")]
    sensor_id: String,
    length: usize,
    #[serde(default)]
    failure_mode: FailureMode,
    model: ModelSection,
    #[serde(default)]
    noise: NoiseSection,
    #[serde(default)]
    faults: Vec<FaultEntry>,
    random_points: Option<RandomPointsEntry>,
    regime_change: Option<RegimeChange>,
}

fn default_sensor() -> String {
    "s0".into()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSection {
    alpha: Option<Vec<f64>>,
    beta: Option<Vec<f64>>,
    #[serde(default)]
    exogenous: bool,
    fit_from: Option<String>,
    order: Option<OrderEntry>,
    sensor: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum OrderEntry {
    Auto(String),
    Fixed([usize; 2]),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoiseSection {
    sigma: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FaultEntry {
    class: ErrorClass,
    start: usize,
    duration: usize,
    magnitude: f64,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RandomPointsEntry {
    Count(usize),
    Full(RandomPoints),
}

/// Reads a scenario; a relative `fit_from` path resolves against the file's directory.
pub fn load_scenario(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_scenario(&text, path.parent().unwrap_or(Path::new(".")))
}

pub fn parse_scenario(text: &str, base_dir: &Path) -> Result<ScenarioConfig> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| Error::Malformed(format!("scenario: {}", e.message())))?;
    let (alpha, beta, exogenous, fitted_sigma) = match (&file.model.fit_from, &file.model.alpha) {
        (Some(_), Some(_)) => return Err(Error::Malformed("scenario: give either model.alpha or model.fit_from".into())),
        (None, None) => return Err(Error::Malformed("scenario: model needs alpha or fit_from".into())),
        (None, Some(alpha)) => {
            if file.model.order.is_some() || file.model.sensor.is_some() {
                return Err(Error::Malformed("scenario: order and sensor apply only with fit_from".into()));
            }
            (alpha.clone(), file.model.beta.clone().unwrap_or_else(|| vec![1.0]), file.model.exogenous, None)
        }
        (Some(csv), None) => {
            if file.model.beta.is_some() {
                return Err(Error::Malformed("scenario: beta cannot be combined with fit_from".into()));
            }
            let m = fit_csv(&base_dir.join(csv), &file.model)?;
            (m.alpha, m.beta, m.exogenous, Some(m.sigma))
        }
    };
    let noise_sigma = file
        .noise
        .sigma
        .or(fitted_sigma)
        .ok_or_else(|| Error::Malformed("scenario: noise.sigma is required".into()))?;
    let random_points = file.random_points.map(|rp| match rp {
        RandomPointsEntry::Count(count) => RandomPoints {
            count,
            duration: SHORTHAND_DURATION,
            magnitude: SHORTHAND_MAGNITUDE,
            magnitudes: Default::default(),
            classes: ErrorClass::ALL.to_vec(),
            min_start: if file.length > 2 * SHORTHAND_MIN_START { SHORTHAND_MIN_START } else { 0 },
            window: 10,
        },
        RandomPointsEntry::Full(rp) => rp,
    });
    Ok(ScenarioConfig {
        sensor_id: file.sensor_id,
        alpha,
        beta,
        exogenous,
        length: file.length,
        noise_sigma,
        seed: file.seed,
        faults: file
            .faults
            .into_iter()
            .map(|f| FaultSpec { class: f.class, start_t: f.start, duration: f.duration, magnitude: f.magnitude })
            .collect(),
        random_points,
        failure_mode: file.failure_mode,
        regime_change: file.regime_change,
    })
}

fn fit_csv(path: &Path, section: &ModelSection) -> Result<crate::ident::ArmaModel> {
    let file = File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let samples = CsvSamples::new(std::io::BufReader::new(file)).collect::<Result<Vec<_>>>()?;
    let mut sensors: Vec<&str> = samples.iter().map(|s| s.sensor_id.as_str()).collect();
    sensors.sort_unstable();
    sensors.dedup();
    let sensor = match (&section.sensor, sensors.as_slice()) {
        (Some(s), _) => s.as_str(),
        (None, [only]) => only,
        (None, _) => return Err(Error::Malformed(format!("scenario: {} holds several sensors; set model.sensor", path.display()))),
    };
    let rows: Vec<_> = samples.iter().filter(|s| s.sensor_id == sensor).collect();
    if rows.is_empty() {
        return Err(Error::UnknownSensor(sensor.into()));
    }
    let y: Vec<f64> = rows.iter().map(|s| s.value).collect();
    let x: Option<Vec<f64>> = rows[0].exog.is_some().then(|| rows.iter().map(|s| s.exog.unwrap_or(0.0)).collect());
    let (n, m) = match &section.order {
        None => select_order(&y, x.as_deref(), AUTO_MAX_N, AUTO_MAX_M)?,
        Some(OrderEntry::Auto(s)) if s == "auto" => select_order(&y, x.as_deref(), AUTO_MAX_N, AUTO_MAX_M)?,
        Some(OrderEntry::Auto(s)) => return Err(Error::Malformed(format!("scenario: order '{s}' is neither \"auto\" nor [n, m]"))),
        Some(OrderEntry::Fixed([n, m])) => (*n, *m),
    };
    fit_arma(&y, x.as_deref(), n, m)
}
