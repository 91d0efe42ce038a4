//! Episode windowing and the σ-threshold decision tree.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kalman::GedDecision;
use crate::sample::ErrorClass;
use crate::stats::{mean, sample_std};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TriggerConfig {
    /// Length of the sliding decision window.
    pub window: usize,
    /// Flagged decisions in the window that open an episode.
    pub open_count: usize,
    /// Clean decisions in the window that close it.
    pub close_count: usize,
    /// Fewest residuals for trustworthy window statistics.
    pub min_window: usize,
}

impl Default for TriggerConfig {
    fn default() -> Self {
        TriggerConfig { window: 10, open_count: 8, close_count: 8, min_window: 20 }
    }
}

impl TriggerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.open_count == 0 || self.close_count == 0 {
            return Err(Error::InvalidConfig("trigger counts must be positive".into()));
        }
        if self.open_count > self.window || self.close_count > self.window {
            return Err(Error::InvalidConfig("trigger counts cannot exceed the window".into()));
        }
        if self.min_window < 2 {
            return Err(Error::InvalidConfig("min_window must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowStats {
    pub mean_dev: f64,
    pub std_ratio: f64,
    pub count: usize,
}

/// Residuals gathered between an episode's open and its last flag.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedEpisode {
    pub start_t: u64,
    pub end_t: u64,
    pub residuals: Vec<f64>,
    pub gamma_peak: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GedEpisode {
    pub sensor_id: String,
    pub start_t: u64,
    pub end_t: u64,
    pub stats: WindowStats,
    pub class: ErrorClass,
    pub gamma_peak: f64,
    /// Set when the window was too short for reliable statistics.
    pub low_confidence: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EpisodeTrigger {
    Opened { t: u64 },
    Closed(ClosedEpisode),
}

#[derive(Debug, Clone)]
struct OpenEpisode {
    start_t: u64,
    residuals: Vec<f64>,
    /// Length of `residuals` up to and including the last flagged sample.
    flagged_len: usize,
    last_flag_t: u64,
    gamma_peak: f64,
}

/// Per-sensor sliding-window state.
#[derive(Debug, Clone)]
pub struct ClassifierState {
    pub config: TriggerConfig,
    recent: VecDeque<bool>,
    open: Option<OpenEpisode>,
    last_t: Option<u64>,
}

impl ClassifierState {
    pub fn new(config: TriggerConfig) -> Result<Self> {
        config.validate()?;
        Ok(ClassifierState { config, recent: VecDeque::with_capacity(config.window), open: None, last_t: None })
    }

    pub fn is_open(&self) -> bool {
        self.open.is_some()
    }

    pub fn open_since(&self) -> Option<u64> {
        self.open.as_ref().map(|o| o.start_t)
    }

    /// Closes an episode left open at end of stream.
    pub fn flush(&mut self) -> Option<ClosedEpisode> {
        self.recent.clear();
        self.open.take().map(finish)
    }
}

fn finish(mut o: OpenEpisode) -> ClosedEpisode {
    o.residuals.truncate(o.flagged_len);
    ClosedEpisode { start_t: o.start_t, end_t: o.last_flag_t, residuals: o.residuals, gamma_peak: o.gamma_peak }
}

/// Feeds one decision and its residual at sample time `t`.
pub fn accumulate(
    state: &mut ClassifierState,
    t: u64,
    decision: &GedDecision,
    residual: f64,
) -> Result<Option<EpisodeTrigger>> {
    if let Some(last) = state.last_t {
        if t <= last {
            return Err(Error::OutOfOrder { sensor: String::new(), t, last });
        }
    }
    state.last_t = Some(t);
    let cfg = state.config;
    if state.recent.len() == cfg.window {
        state.recent.pop_front();
    }
    state.recent.push_back(decision.flagged);
    let flagged = state.recent.iter().filter(|f| **f).count();
    let clean = state.recent.len() - flagged;

    match state.open.as_mut() {
        None => {
            if flagged >= cfg.open_count {
                state.open = Some(OpenEpisode {
                    start_t: t,
                    residuals: vec![residual],
                    flagged_len: 1,
                    last_flag_t: t,
                    gamma_peak: decision.gamma,
                });
                return Ok(Some(EpisodeTrigger::Opened { t }));
            }
            Ok(None)
        }
        Some(open) => {
            open.residuals.push(residual);
            if decision.flagged {
                open.flagged_len = open.residuals.len();
                open.last_flag_t = t;
                open.gamma_peak = open.gamma_peak.max(decision.gamma);
            }
            if clean >= cfg.close_count {
                let done = state.open.take().map(finish);
                return Ok(done.map(EpisodeTrigger::Closed));
            }
            Ok(None)
        }
    }
}

pub fn window_stats(residuals: &[f64], baseline_sigma: f64, min_window: usize) -> Result<WindowStats> {
    if !(baseline_sigma > 0.0) {
        return Err(Error::ZeroBaseline);
    }
    if residuals.len() < min_window.max(2) {
        return Err(Error::WindowTooSmall { count: residuals.len(), min: min_window });
    }
    Ok(WindowStats {
        mean_dev: mean(residuals).abs() / baseline_sigma,
        std_ratio: sample_std(residuals) / baseline_sigma,
        count: residuals.len(),
    })
}

/// Decision tree equivalent to the four-rule list (Drift, PD, Bias, else
/// Failure). Also returns how many comparisons were evaluated.
pub fn classify_counted(stats: &WindowStats) -> (ErrorClass, u32) {
    let (mean, std) = (stats.mean_dev, stats.std_ratio);
    if std < 1.0 {
        if mean < 3.0 {
            (ErrorClass::Drift, 2)
        } else {
            (ErrorClass::Failure, 2)
        }
    } else if std < 1.5 || std > 3.0 {
        (ErrorClass::Failure, if std < 1.5 { 2 } else { 3 })
    } else if mean < 1.5 {
        (ErrorClass::PrecisionDegradation, 4)
    } else {
        (ErrorClass::Bias, 4)
    }
}

pub fn classify(stats: &WindowStats) -> ErrorClass {
    classify_counted(stats).0
}

pub fn classify_episode(
    sensor_id: &str,
    episode: &ClosedEpisode,
    baseline_sigma: f64,
    min_window: usize,
) -> Result<GedEpisode> {
    let (stats, class, low_confidence) = match window_stats(&episode.residuals, baseline_sigma, min_window) {
        Ok(stats) => (stats, classify(&stats), false),
        Err(Error::WindowTooSmall { .. }) => {
            let r = &episode.residuals;
            let stats = WindowStats {
                mean_dev: mean(r).abs() / baseline_sigma,
                std_ratio: sample_std(r) / baseline_sigma,
                count: r.len(),
            };
            (stats, ErrorClass::Failure, true)
        }
        Err(e) => return Err(e),
    };
    Ok(GedEpisode {
        sensor_id: sensor_id.to_string(),
        start_t: episode.start_t,
        end_t: episode.end_t,
        stats,
        class,
        gamma_peak: episode.gamma_peak,
        low_confidence,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decision(flagged: bool) -> GedDecision {
        GedDecision { gamma: if flagged { 10.0 } else { 0.5 }, threshold: 3.841, flagged, k: 0 }
    }

    fn feed(state: &mut ClassifierState, flags: &[bool], t0: u64) -> Vec<EpisodeTrigger> {
        flags
            .iter()
            .enumerate()
            .filter_map(|(i, f)| accumulate(state, t0 + i as u64, &decision(*f), i as f64).unwrap())
            .collect()
    }

    #[test]
    fn opens_at_eighth_flag() {
        let mut st = ClassifierState::new(TriggerConfig::default()).unwrap();
        let ev = feed(&mut st, &[true; 10], 0);
        assert_eq!(ev, vec![EpisodeTrigger::Opened { t: 7 }]);
    }

    #[test]
    fn alternating_never_opens() {
        let mut st = ClassifierState::new(TriggerConfig::default()).unwrap();
        let flags: Vec<bool> = (0..1000).map(|i| i % 2 == 0).collect();
        assert!(feed(&mut st, &flags, 0).is_empty());
    }

    #[test]
    fn closes_after_clean_run() {
        let mut st = ClassifierState::new(TriggerConfig::default()).unwrap();
        let mut flags = vec![true; 30];
        flags.extend([false; 10]);
        let ev = feed(&mut st, &flags, 100);
        assert_eq!(ev.len(), 2);
        let EpisodeTrigger::Closed(ep) = &ev[1] else { panic!("{ev:?}") };
        assert_eq!((ep.start_t, ep.end_t), (107, 129));
        // residual i was fed at t = 100 + i; trailing clean ones trimmed
        assert_eq!(ep.residuals.first(), Some(&7.0));
        assert_eq!(ep.residuals.last(), Some(&29.0));
        assert!(!st.is_open());
    }

    #[test]
    fn out_of_order() {
        let mut st = ClassifierState::new(TriggerConfig::default()).unwrap();
        accumulate(&mut st, 3, &decision(false), 0.0).unwrap();
        assert!(matches!(accumulate(&mut st, 3, &decision(false), 0.0), Err(Error::OutOfOrder { .. })));
    }

    #[test]
    fn flush_returns_open_episode() {
        let mut st = ClassifierState::new(TriggerConfig::default()).unwrap();
        feed(&mut st, &[true; 12], 0);
        let ep = st.flush().unwrap();
        assert_eq!((ep.start_t, ep.end_t, ep.residuals.len()), (7, 11, 5));
        assert!(st.flush().is_none());
    }

    #[test]
    fn stats_examples() {
        let s = window_stats(&[4.0; 25], 2.0, 20).unwrap();
        assert_eq!((s.mean_dev, s.std_ratio, s.count), (2.0, 0.0, 25));

        // ±2σ alternating, even length: mean 0, std = 2σ·√(N/(N−1))
        let r: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 2.0 } else { -2.0 }).collect();
        let s = window_stats(&r, 1.0, 20).unwrap();
        assert!(s.mean_dev.abs() < 1e-15);
        assert!((s.std_ratio - 2.0 * (100.0f64 / 99.0).sqrt()).abs() < 1e-12);

        assert_eq!(window_stats(&r, 0.0, 20), Err(Error::ZeroBaseline));
        assert_eq!(window_stats(&r[..5], 1.0, 20), Err(Error::WindowTooSmall { count: 5, min: 20 }));
    }

    fn stats(mean_dev: f64, std_ratio: f64) -> WindowStats {
        WindowStats { mean_dev, std_ratio, count: 20 }
    }

    #[test]
    fn bullet_examples() {
        assert_eq!(classify(&stats(0.5, 0.5)), ErrorClass::Drift);
        assert_eq!(classify(&stats(1.0, 2.0)), ErrorClass::PrecisionDegradation);
        assert_eq!(classify(&stats(2.0, 2.0)), ErrorClass::Bias);
        assert_eq!(classify(&stats(5.0, 5.0)), ErrorClass::Failure);
    }

    #[test]
    fn boundaries() {
        assert_eq!(classify(&stats(3.0, 0.5)), ErrorClass::Failure);
        assert_eq!(classify(&stats(0.0, 1.0)), ErrorClass::Failure);
        assert_eq!(classify(&stats(0.0, 1.5)), ErrorClass::PrecisionDegradation);
        assert_eq!(classify(&stats(1.5, 3.0)), ErrorClass::Bias);
        assert_eq!(classify(&stats(1.5, 3.0 + 1e-12)), ErrorClass::Failure);
    }

    #[test]
    fn short_episode_is_low_confidence_failure() {
        let ep = ClosedEpisode { start_t: 0, end_t: 4, residuals: vec![1.0, 2.0, 3.0, 4.0, 5.0], gamma_peak: 9.0 };
        let g = classify_episode("s", &ep, 1.0, 20).unwrap();
        assert_eq!(g.class, ErrorClass::Failure);
        assert!(g.low_confidence);
        assert_eq!(g.gamma_peak, 9.0);
    }
}
