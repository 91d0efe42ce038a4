//! Domain types shared across the detection stages.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One timestamped scalar measurement from a named sensor channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSample {
    pub t: u64,
    pub sensor_id: String,
    pub value: f64,
    /// Measured exogenous input `x_t`, when the channel has one.
    pub exog: Option<f64>,
}

impl SensorSample {
    pub fn new(t: u64, sensor_id: impl Into<String>, value: f64) -> Self {
        Self {
            t,
            sensor_id: sensor_id.into(),
            value,
            exog: None,
        }
    }

    pub fn with_exog(mut self, exog: f64) -> Self {
        self.exog = Some(exog);
        self
    }

    /// Rejects NaN/Inf in the measurement or the exogenous input.
    pub fn validate(&self) -> Result<()> {
        let exog_ok = self.exog.is_none_or(f64::is_finite);
        if self.value.is_finite() && exog_ok {
            Ok(())
        } else {
            Err(Error::NonFinite { index: self.t as usize })
        }
    }
}

/// The four gross-error classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorClass {
    Bias,
    Drift,
    #[serde(rename = "PD")]
    PrecisionDegradation,
    Failure,
}

impl ErrorClass {
    pub const ALL: [ErrorClass; 4] = [
        ErrorClass::Bias,
        ErrorClass::Drift,
        ErrorClass::PrecisionDegradation,
        ErrorClass::Failure,
    ];

    /// Short label used in files and events.
    pub fn label(self) -> &'static str {
        match self {
            ErrorClass::Bias => "Bias",
            ErrorClass::Drift => "Drift",
            ErrorClass::PrecisionDegradation => "PD",
            ErrorClass::Failure => "Failure",
        }
    }
}

impl fmt::Display for ErrorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ErrorClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Bias" => Ok(ErrorClass::Bias),
            "Drift" => Ok(ErrorClass::Drift),
            "PD" | "PrecisionDegradation" => Ok(ErrorClass::PrecisionDegradation),
            "Failure" => Ok(ErrorClass::Failure),
            other => Err(Error::Malformed(format!("unknown error class '{other}'"))),
        }
    }
}

/// Ground-truth label of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TruthLabel {
    Clean,
    Fault(ErrorClass),
}

impl TruthLabel {
    pub fn label(self) -> &'static str {
        match self {
            TruthLabel::Clean => "Clean",
            TruthLabel::Fault(c) => c.label(),
        }
    }
}

impl fmt::Display for TruthLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for TruthLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "Clean" {
            Ok(TruthLabel::Clean)
        } else {
            s.parse().map(TruthLabel::Fault)
        }
    }
}
