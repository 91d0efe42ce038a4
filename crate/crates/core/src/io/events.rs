//! NDJSON event lines. Keys follow the field order of [`Event`], after `kind`.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::pipeline::{Event, EventSink};

pub fn emit_event(event: &Event) -> String {
    serde_json::to_string(event).expect("events contain only strings, integers, bools and finite floats")
}

pub fn parse_event(line: &str) -> Result<Event> {
    serde_json::from_str(line).map_err(|e| Error::Malformed(format!("event line: {e}")))
}

/// Reads every non-blank line; errors name the 1-based line.
pub fn read_events<R: BufRead>(input: R) -> Result<Vec<Event>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ev = serde_json::from_str(&line)
            .map_err(|e| Error::MalformedRow { line: i as u64 + 1, reason: e.to_string() })?;
        out.push(ev);
    }
    Ok(out)
}

pub struct NdjsonSink<W: Write> {
    out: W,
}

impl<W: Write> NdjsonSink<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn into_inner(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

impl<W: Write> EventSink for NdjsonSink<W> {
    fn emit(&mut self, event: &Event) -> Result<()> {
        writeln!(self.out, "{}", emit_event(event)).map_err(|e| Error::Sink(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::UpdateAction;
    use crate::sample::ErrorClass;
    use proptest::prelude::*;

    #[test]
    fn ged_line_layout() {
        let e = Event::Ged { t: 512, sensor_id: "a".into(), gamma: 7.2, threshold: 3.841, flagged: true };
        assert_eq!(
            emit_event(&e),
            r#"{"kind":"ged","t":512,"sensor_id":"a","gamma":7.2,"threshold":3.841,"flagged":true}"#
        );
    }

    #[test]
    fn episode_line_has_span_and_class() {
        let e = Event::Episode {
            start_t: 10,
            end_t: 40,
            sensor_id: "a".into(),
            class: ErrorClass::PrecisionDegradation,
            mean_dev: 0.5,
            std_ratio: 2.0,
            count: 31,
            gamma_peak: 20.0,
            low_confidence: false,
        };
        let line = emit_event(&e);
        assert!(line.starts_with(r#"{"kind":"episode","start_t":10,"end_t":40,"sensor_id":"a","class":"PD""#), "{line}");
        assert!(!line.contains('\n'));
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(parse_event(r#"{"kind":"diagnostic","t":1,"sensor_id":"a","message":"x","extra":1}"#).is_err());
        assert!(parse_event(r#"{"kind":"other","t":1}"#).is_err());
    }

    #[test]
    fn read_reports_line() {
        let text = "{\"kind\":\"diagnostic\",\"t\":1,\"sensor_id\":\"a\",\"message\":\"x\"}\n\nnope\n";
        assert!(matches!(read_events(text.as_bytes()), Err(Error::MalformedRow { line: 3, .. })));
    }

    fn finite() -> impl Strategy<Value = f64> {
        prop_oneof![-1e300..1e300f64, -10.0..10.0f64, Just(0.0), Just(f64::MIN_POSITIVE)]
    }

    fn event() -> impl Strategy<Value = Event> {
        let sensor = "[a-z][a-z0-9_\"\\\\]{0,6}";
        let class = prop_oneof![
            Just(ErrorClass::Bias),
            Just(ErrorClass::Drift),
            Just(ErrorClass::PrecisionDegradation),
            Just(ErrorClass::Failure)
        ];
        let action = prop_oneof![Just(UpdateAction::Keep), Just(UpdateAction::Increment), Just(UpdateAction::Recompute)];
        prop_oneof![
            (any::<u64>(), sensor, finite(), finite(), any::<bool>()).prop_map(|(t, sensor_id, gamma, threshold, flagged)| {
                Event::Ged { t, sensor_id, gamma, threshold, flagged }
            }),
            (any::<u64>(), any::<u64>(), sensor, class, finite(), finite(), any::<usize>(), finite(), any::<bool>()).prop_map(
                |(start_t, end_t, sensor_id, class, mean_dev, std_ratio, count, gamma_peak, low_confidence)| Event::Episode {
                    start_t,
                    end_t,
                    sensor_id,
                    class,
                    mean_dev,
                    std_ratio,
                    count,
                    gamma_peak,
                    low_confidence
                }
            ),
            (any::<u64>(), sensor, action, finite(), any::<u32>()).prop_map(|(t, sensor_id, action, nrmse, model_generation)| {
                Event::Action { t, sensor_id, action, nrmse, model_generation }
            }),
            (any::<u64>(), sensor, ".{0,20}").prop_map(|(t, sensor_id, message)| Event::Diagnostic { t, sensor_id, message }),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn round_trip(e in event()) {
            let line = emit_event(&e);
            prop_assert!(!line.contains('\n'));
            prop_assert_eq!(parse_event(&line).unwrap(), e);
        }
    }
}
