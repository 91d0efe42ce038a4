//! `t,sensor_id,value[,exog]` sample files and the `t,sensor_id,label` truth sidecar.
//!
//! Lines starting with `#` are comments; writers use one to record the seed.

use std::collections::HashMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::sample::{SensorSample, TruthLabel};
use crate::synth::LabeledStream;

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(input)
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.kind() {
        csv::ErrorKind::Io(io) => Error::Io(io.to_string()),
        _ => Error::MalformedRow { line, reason: e.to_string() },
    }
}

fn parse_real(field: &str, what: &str, line: u64) -> Result<f64> {
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::MalformedRow { line, reason: format!("{what} '{field}' is not a finite number") }),
    }
}

fn parse_t(field: &str, line: u64) -> Result<u64> {
    field
        .parse()
        .map_err(|_| Error::MalformedRow { line, reason: format!("t '{field}' is not a non-negative integer") })
}

fn parse_sensor(field: &str, line: u64) -> Result<String> {
    if field.is_empty() {
        return Err(Error::MalformedRow { line, reason: "empty sensor_id".into() });
    }
    Ok(field.to_string())
}

/// Lazy sample reader. Rows are validated as they are pulled, so memory does
/// not grow with the file.
pub struct CsvSamples<R: Read> {
    records: csv::StringRecordsIntoIter<R>,
    exog: Option<bool>,
    last_t: HashMap<String, u64>,
    done: bool,
}

impl<R: Read> CsvSamples<R> {
    pub fn new(input: R) -> Self {
        Self { records: reader(input).into_records(), exog: None, last_t: HashMap::new(), done: false }
    }

    /// Whether the file carries an `exog` column. Reads the header if needed.
    pub fn has_exog(&mut self) -> Result<bool> {
        match self.exog {
            Some(e) => Ok(e),
            None => self.read_header(),
        }
    }

    fn read_header(&mut self) -> Result<bool> {
        let rec = match self.records.next() {
            Some(r) => r.map_err(csv_error)?,
            None => return Err(Error::MissingHeader("empty input".into())),
        };
        let cols: Vec<&str> = rec.iter().collect();
        let exog = match cols.as_slice() {
            ["t", "sensor_id", "value"] => false,
            ["t", "sensor_id", "value", "exog"] => true,
            _ => return Err(Error::MissingHeader(format!("expected t,sensor_id,value[,exog], got '{}'", cols.join(",")))),
        };
        self.exog = Some(exog);
        Ok(exog)
    }

    fn row(&mut self, rec: csv::StringRecord, exog: bool) -> Result<SensorSample> {
        let line = line_of(&rec);
        let want = if exog { 4 } else { 3 };
        if rec.len() != want {
            return Err(Error::MalformedRow { line, reason: format!("expected {want} fields, found {}", rec.len()) });
        }
        let t = parse_t(&rec[0], line)?;
        let sensor = parse_sensor(&rec[1], line)?;
        let value = parse_real(&rec[2], "value", line)?;
        let mut s = SensorSample::new(t, sensor, value);
        if exog {
            s = s.with_exog(parse_real(&rec[3], "exog", line)?);
        }
        match self.last_t.get_mut(&s.sensor_id) {
            Some(last) if t <= *last => return Err(Error::NonMonotoneT { line, sensor: s.sensor_id }),
            Some(last) => *last = t,
            None => {
                self.last_t.insert(s.sensor_id.clone(), t);
            }
        }
        Ok(s)
    }
}

impl<R: Read> Iterator for CsvSamples<R> {
    type Item = Result<SensorSample>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let exog = match self.has_exog() {
            Ok(e) => e,
            Err(e) => {
                self.done = true;
                return Some(Err(e));
            }
        };
        let rec = match self.records.next()? {
            Ok(r) => r,
            Err(e) => {
                self.done = true;
                return Some(Err(csv_error(e)));
            }
        };
        let out = self.row(rec, exog);
        self.done = out.is_err();
        Some(out)
    }
}

/// Writes samples with a `# comment` line and a header. Numbers use the
/// shortest representation that reparses to the same bits.
pub fn write_samples<W: Write>(mut out: W, comment: &str, samples: &[SensorSample]) -> Result<()> {
    let exog = samples.first().is_some_and(|s| s.exog.is_some());
    if samples.iter().any(|s| s.exog.is_some() != exog) {
        return Err(Error::Malformed("exog present on some samples only".into()));
    }
    writeln!(out, "# {comment}")?;
    writeln!(out, "{}", if exog { "t,sensor_id,value,exog" } else { "t,sensor_id,value" })?;
    for s in samples {
        match s.exog {
            Some(x) => writeln!(out, "{},{},{:?},{:?}", s.t, s.sensor_id, s.value, x)?,
            None => writeln!(out, "{},{},{:?}", s.t, s.sensor_id, s.value)?,
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthRow {
    pub t: u64,
    pub sensor_id: String,
    pub label: TruthLabel,
}

pub fn write_truth<W: Write>(mut out: W, comment: &str, stream: &LabeledStream) -> Result<()> {
    writeln!(out, "# {comment}")?;
    writeln!(out, "t,sensor_id,label")?;
    for (s, label) in stream.samples.iter().zip(&stream.truth) {
        writeln!(out, "{},{},{}", s.t, s.sensor_id, label)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_truth<R: Read>(input: R) -> Result<Vec<TruthRow>> {
    let mut records = reader(input).into_records();
    let header = records.next().ok_or_else(|| Error::MissingHeader("empty truth file".into()))?.map_err(csv_error)?;
    if header.iter().collect::<Vec<_>>() != ["t", "sensor_id", "label"] {
        return Err(Error::MissingHeader("expected t,sensor_id,label".into()));
    }
    let mut last_t: HashMap<String, u64> = HashMap::new();
    let mut rows = Vec::new();
    for rec in records {
        let rec = rec.map_err(csv_error)?;
        let line = line_of(&rec);
        if rec.len() != 3 {
            return Err(Error::MalformedRow { line, reason: format!("expected 3 fields, found {}", rec.len()) });
        }
        let t = parse_t(&rec[0], line)?;
        let sensor_id = parse_sensor(&rec[1], line)?;
        let label: TruthLabel =
            rec[2].parse().map_err(|_| Error::MalformedRow { line, reason: format!("unknown label '{}'", &rec[2]) })?;
        if last_t.insert(sensor_id.clone(), t).is_some_and(|last| t <= last) {
            return Err(Error::NonMonotoneT { line, sensor: sensor_id });
        }
        rows.push(TruthRow { t, sensor_id, label });
    }
    Ok(rows)
}
