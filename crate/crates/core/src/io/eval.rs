//! Matches detected episodes against ground-truth fault windows.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::samples::TruthRow;
use crate::pipeline::Event;
use crate::sample::{ErrorClass, TruthLabel};

/// Row/column order of the confusion matrix.
pub const LABELS: [&str; 5] = ["Clean", "Bias", "Drift", "PD", "Failure"];

fn index(label: TruthLabel) -> usize {
    match label {
        TruthLabel::Clean => 0,
        TruthLabel::Fault(ErrorClass::Bias) => 1,
        TruthLabel::Fault(ErrorClass::Drift) => 2,
        TruthLabel::Fault(ErrorClass::PrecisionDegradation) => 3,
        TruthLabel::Fault(ErrorClass::Failure) => 4,
    }
}

/// Half-open `[start_t, end_t)` run of one fault label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthWindow {
    pub sensor_id: String,
    pub start_t: u64,
    pub end_t: u64,
    pub class: ErrorClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub sensor_id: String,
    pub truth_start_t: u64,
    pub truth_end_t: u64,
    pub truth_class: ErrorClass,
    /// Inclusive span and class of the matched episode.
    pub episode: Option<(u64, u64, ErrorClass)>,
    /// Episode start minus injection start.
    pub delay: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub labels: [String; 5],
    /// `confusion[truth][detected]`; unmatched truth windows land in the Clean
    /// column, false alarms in the Clean row.
    pub confusion: [[u64; 5]; 5],
    pub truth_windows: u64,
    pub detected: u64,
    pub correctly_classified: u64,
    pub false_alarms: u64,
    pub clean_samples: u64,
    pub false_alarm_rate_per_10k: f64,
    pub mean_delay: Option<f64>,
    pub max_delay: Option<i64>,
    pub matches: Vec<MatchRecord>,
}

/// Contiguous runs of one non-Clean label, per sensor, in file order.
pub fn truth_windows(truth: &[TruthRow]) -> Vec<TruthWindow> {
    let mut out: Vec<TruthWindow> = Vec::new();
    let mut open: BTreeMap<&str, (TruthWindow, u64)> = BTreeMap::new();
    for row in truth {
        let current = open.remove(row.sensor_id.as_str());
        let class = match row.label {
            TruthLabel::Fault(c) => Some(c),
            TruthLabel::Clean => None,
        };
        match (current, class) {
            (Some((mut w, last)), Some(c)) if w.class == c && last + 1 == row.t => {
                w.end_t = row.t + 1;
                open.insert(&row.sensor_id, (w, row.t));
            }
            (prev, c) => {
                out.extend(prev.map(|p| p.0));
                if let Some(class) = c {
                    let w = TruthWindow { sensor_id: row.sensor_id.clone(), start_t: row.t, end_t: row.t + 1, class };
                    open.insert(&row.sensor_id, (w, row.t));
                }
            }
        }
    }
    out.extend(open.into_values().map(|p| p.0));
    out.sort_by(|a, b| (&a.sensor_id, a.start_t).cmp(&(&b.sensor_id, b.start_t)));
    out
}

fn last_t(e: &Event) -> u64 {
    match e {
        Event::Ged { t, .. } | Event::Action { t, .. } | Event::Diagnostic { t, .. } => *t,
        Event::Episode { end_t, .. } => *end_t,
    }
}

/// An episode matches a truth window when their overlap covers at least half
/// the window. Windows are visited in time order and take the earliest
/// unmatched qualifying episode.
pub fn eval_match(events: &[Event], truth: &[TruthRow]) -> Result<EvalSummary> {
    let mut truth_len: BTreeMap<&str, u64> = BTreeMap::new();
    for row in truth {
        let e = truth_len.entry(&row.sensor_id).or_default();
        *e = (*e).max(row.t + 1);
    }
    for e in events {
        let sensor = e.sensor_id();
        let len = truth_len.get(sensor).copied().unwrap_or(0);
        // diagnostics may be run-level notes that name no sensor in the truth
        if matches!(e, Event::Diagnostic { .. }) && len == 0 {
            continue;
        }
        if last_t(e) >= len {
            return Err(Error::LengthMismatch { events: last_t(e) + 1, truth: len });
        }
    }

    let mut episodes: Vec<(&str, u64, u64, ErrorClass)> = events
        .iter()
        .filter_map(|e| match e {
            Event::Episode { sensor_id, start_t, end_t, class, .. } => Some((sensor_id.as_str(), *start_t, *end_t, *class)),
            _ => None,
        })
        .collect();
    episodes.sort_by_key(|e| (e.0, e.1, e.2));
    let mut used = vec![false; episodes.len()];

    let windows = truth_windows(truth);
    let mut confusion = [[0u64; 5]; 5];
    let mut matches = Vec::with_capacity(windows.len());
    for w in &windows {
        let need = (w.end_t - w.start_t).div_ceil(2);
        let hit = episodes.iter().enumerate().position(|(i, (s, start, end, _))| {
            let overlap = (end + 1).min(w.end_t).saturating_sub((*start).max(w.start_t));
            !used[i] && *s == w.sensor_id && overlap >= need
        });
        let row = index(TruthLabel::Fault(w.class));
        let record = match hit {
            Some(i) => {
                used[i] = true;
                let (_, start, end, class) = episodes[i];
                confusion[row][index(TruthLabel::Fault(class))] += 1;
                MatchRecord {
                    sensor_id: w.sensor_id.clone(),
                    truth_start_t: w.start_t,
                    truth_end_t: w.end_t,
                    truth_class: w.class,
                    episode: Some((start, end, class)),
                    delay: Some(start as i64 - w.start_t as i64),
                }
            }
            None => {
                confusion[row][0] += 1;
                MatchRecord {
                    sensor_id: w.sensor_id.clone(),
                    truth_start_t: w.start_t,
                    truth_end_t: w.end_t,
                    truth_class: w.class,
                    episode: None,
                    delay: None,
                }
            }
        };
        matches.push(record);
    }
    let mut false_alarms = 0;
    for (i, e) in episodes.iter().enumerate() {
        if !used[i] {
            confusion[0][index(TruthLabel::Fault(e.3))] += 1;
            false_alarms += 1;
        }
    }

    let clean_samples = truth.iter().filter(|r| r.label == TruthLabel::Clean).count() as u64;
    let delays: Vec<i64> = matches.iter().filter_map(|m| m.delay).collect();
    let detected = delays.len() as u64;
    let correctly_classified = matches.iter().filter(|m| m.episode.is_some_and(|e| e.2 == m.truth_class)).count() as u64;
    Ok(EvalSummary {
        labels: LABELS.map(String::from),
        confusion,
        truth_windows: windows.len() as u64,
        detected,
        correctly_classified,
        false_alarms,
        clean_samples,
        false_alarm_rate_per_10k: if clean_samples == 0 { 0.0 } else { false_alarms as f64 * 1e4 / clean_samples as f64 },
        mean_delay: (!delays.is_empty()).then(|| delays.iter().sum::<i64>() as f64 / delays.len() as f64),
        max_delay: delays.iter().copied().max(),
        matches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn truth(len: u64, faults: &[(u64, u64, ErrorClass)]) -> Vec<TruthRow> {
        (0..len)
            .map(|t| {
                let label = faults
                    .iter()
                    .find(|(s, e, _)| (*s..*e).contains(&t))
                    .map_or(TruthLabel::Clean, |f| TruthLabel::Fault(f.2));
                TruthRow { t, sensor_id: "a".into(), label }
            })
            .collect()
    }

    fn episode(start_t: u64, end_t: u64, class: ErrorClass) -> Event {
        Event::Episode {
            start_t,
            end_t,
            sensor_id: "a".into(),
            class,
            mean_dev: 0.0,
            std_ratio: 0.0,
            count: (end_t - start_t + 1) as usize,
            gamma_peak: 0.0,
            low_confidence: false,
        }
    }

    #[test]
    fn overlapping_episode_matches_with_delay() {
        // episode [105, 210) written with an inclusive end
        let s = eval_match(&[episode(105, 209, ErrorClass::Bias)], &truth(1000, &[(100, 200, ErrorClass::Bias)])).unwrap();
        assert_eq!(s.matches[0].delay, Some(5));
        assert_eq!(s.confusion[1][1], 1);
        assert_eq!(s.false_alarms, 0);
        assert_eq!(s.clean_samples, 900);
    }

    #[test]
    fn disjoint_episode_is_a_false_alarm() {
        let s = eval_match(&[episode(500, 520, ErrorClass::Drift)], &truth(1000, &[(100, 200, ErrorClass::Bias)])).unwrap();
        assert_eq!(s.false_alarms, 1);
        assert_eq!(s.confusion[0][2], 1);
        assert_eq!(s.confusion[1][0], 1);
        assert_eq!(s.detected, 0);
        assert!((s.false_alarm_rate_per_10k - 1e4 / 900.0).abs() < 1e-12);
    }

    #[test]
    fn earliest_of_two_episodes_matches() {
        let evs = [episode(140, 199, ErrorClass::Failure), episode(101, 180, ErrorClass::Bias)];
        let s = eval_match(&evs, &truth(1000, &[(100, 200, ErrorClass::Bias)])).unwrap();
        assert_eq!(s.matches[0].episode, Some((101, 180, ErrorClass::Bias)));
        assert_eq!(s.false_alarms, 1);
        assert_eq!(s.confusion[0][4], 1);
    }

    #[test]
    fn half_overlap_boundary() {
        let t = truth(1000, &[(100, 200, ErrorClass::Bias)]);
        assert_eq!(eval_match(&[episode(150, 300, ErrorClass::Bias)], &t).unwrap().detected, 1);
        assert_eq!(eval_match(&[episode(151, 300, ErrorClass::Bias)], &t).unwrap().detected, 0);
    }

    #[test]
    fn rows_sum_to_window_counts() {
        let t = truth(2000, &[(100, 200, ErrorClass::Bias), (200, 300, ErrorClass::Drift), (900, 1000, ErrorClass::PrecisionDegradation)]);
        let evs = [episode(110, 290, ErrorClass::Bias), episode(1500, 1510, ErrorClass::Failure)];
        let s = eval_match(&evs, &t).unwrap();
        assert_eq!(s.truth_windows, 3);
        let fault_rows: u64 = s.confusion[1..].iter().flatten().sum();
        assert_eq!(fault_rows, 3);
        assert_eq!(s.confusion[0].iter().sum::<u64>(), s.false_alarms);
    }

    #[test]
    fn events_past_truth_end() {
        let err = eval_match(&[episode(990, 1005, ErrorClass::Bias)], &truth(1000, &[])).unwrap_err();
        assert_eq!(err, Error::LengthMismatch { events: 1006, truth: 1000 });
    }

    #[test]
    fn windows_split_on_label_change() {
        let w = truth_windows(&truth(50, &[(10, 20, ErrorClass::Bias), (20, 25, ErrorClass::Drift)]));
        assert_eq!(w.len(), 2);
        assert_eq!((w[0].start_t, w[0].end_t, w[1].start_t, w[1].end_t), (10, 20, 20, 25));
    }
}
