//! Versioned TOML model documents. Reals are written with 17 significant
//! digits so coefficients come back bit-for-bit.

use std::fmt::Write as _;

use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::ident::ArmaModel;

pub const MODEL_VERSION: u32 = 1;

fn real(v: f64) -> String {
    format!("{v:.16e}")
}

fn reals(vs: &[f64]) -> String {
    let parts: Vec<String> = vs.iter().map(|v| real(*v)).collect();
    format!("[{}]", parts.join(", "))
}

pub fn serialize_model(model: &ArmaModel) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "version = {MODEL_VERSION}");
    let _ = writeln!(s, "n = {}", model.n);
    let _ = writeln!(s, "m = {}", model.m);
    let _ = writeln!(s, "exogenous = {}", model.exogenous);
    let _ = writeln!(s, "alpha = {}", reals(&model.alpha));
    let _ = writeln!(s, "beta = {}", reals(&model.beta));
    let _ = writeln!(s, "sigma = {}", real(model.sigma));
    let _ = writeln!(s, "stable = {}", model.stable);
    let _ = writeln!(s, "fitted_on = {}", model.fitted_on);
    s
}

fn field<'a>(doc: &'a Table, key: &str) -> Result<&'a Value> {
    doc.get(key).ok_or_else(|| Error::Malformed(format!("missing `{key}`")))
}

fn uint(doc: &Table, key: &str) -> Result<usize> {
    field(doc, key)?
        .as_integer()
        .and_then(|i| usize::try_from(i).ok())
        .ok_or_else(|| Error::Malformed(format!("`{key}` must be a non-negative integer")))
}

fn boolean(doc: &Table, key: &str) -> Result<bool> {
    field(doc, key)?.as_bool().ok_or_else(|| Error::Malformed(format!("`{key}` must be true or false")))
}

fn as_real(v: &Value, key: &str) -> Result<f64> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(Error::Malformed(format!("`{key}` must be a number"))),
    }
}

fn real_list(doc: &Table, key: &str) -> Result<Vec<f64>> {
    field(doc, key)?
        .as_array()
        .ok_or_else(|| Error::Malformed(format!("`{key}` must be an array")))?
        .iter()
        .map(|v| as_real(v, key))
        .collect()
}

pub fn parse_model(text: &str) -> Result<ArmaModel> {
    let doc: Table = text.parse().map_err(|e: toml::de::Error| Error::Malformed(e.message().to_string()))?;
    let version = field(&doc, "version")?
        .as_integer()
        .ok_or_else(|| Error::Malformed("`version` must be an integer".into()))?;
    if version != i64::from(MODEL_VERSION) {
        let found = u32::try_from(version).unwrap_or(u32::MAX);
        return Err(Error::VersionMismatch { found, expected: MODEL_VERSION });
    }
    const KEYS: [&str; 9] = ["version", "n", "m", "exogenous", "alpha", "beta", "sigma", "stable", "fitted_on"];
    if let Some(k) = doc.keys().find(|k| !KEYS.contains(&k.as_str())) {
        return Err(Error::Malformed(format!("unknown key `{k}`")));
    }
    let (n, m) = (uint(&doc, "n")?, uint(&doc, "m")?);
    let alpha = real_list(&doc, "alpha")?;
    let beta = real_list(&doc, "beta")?;
    if alpha.len() != n || beta.len() != m + 1 {
        return Err(Error::Malformed(format!(
            "orders n={n}, m={m} disagree with {} alpha and {} beta coefficients",
            alpha.len(),
            beta.len()
        )));
    }
    let sigma = as_real(field(&doc, "sigma")?, "sigma")?;
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::Malformed("`sigma` must be finite and non-negative".into()));
    }
    let mut model = ArmaModel::new(alpha, beta, boolean(&doc, "exogenous")?).map_err(|e| Error::Malformed(e.to_string()))?;
    if model.stable != boolean(&doc, "stable")? {
        return Err(Error::Malformed("`stable` disagrees with the coefficients".into()));
    }
    model.sigma = sigma;
    model.fitted_on = uint(&doc, "fitted_on")?;
    Ok(model)
}
