//! Per-sample detection (speed path) merged with periodic model maintenance
//! (batch path): evaluate → keep / increment / recompute.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::classify::{accumulate, classify_episode, ClassifierState, EpisodeTrigger, GedEpisode, TriggerConfig};
use crate::error::{Error, Result};
use crate::ident::{
    build_regression_masked, fit_arma, fit_arma_masked, residuals, select_order, select_order_masked, to_state_space,
    ArmaModel, RlsState,
};
use crate::kalman::{init_filter, step, KalmanState, NoiseConfig, DEFAULT_CONFIDENCE};
use crate::sample::{ErrorClass, SensorSample};
use crate::stats::rms;

/// Trigger windows before an episode's open that are quarantined with it.
const QUARANTINE_LOOKBACK: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderChoice {
    Auto { max_n: usize, max_m: usize },
    Fixed { n: usize, m: usize },
}

impl OrderChoice {
    fn param_bound(&self) -> usize {
        match *self {
            OrderChoice::Auto { max_n, max_m } => max_n + max_m + 1,
            OrderChoice::Fixed { n, m } => n + m + 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub confidence: f64,
    pub eval_window: usize,
    pub eps_keep: f64,
    pub eps_recompute: f64,
    pub buffer_cap: usize,
    pub trigger: TriggerConfig,
    pub order: OrderChoice,
    /// Samples used for the initial fit. `None` picks max(2000, 20·(n+m+1)).
    pub bootstrap_len: Option<usize>,
    /// Forgetting factor for incremental updates.
    pub lambda: f64,
    /// Run the evaluate/update loop. When false models stay fixed.
    pub adapt: bool,
    pub coast_on_flag: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            confidence: DEFAULT_CONFIDENCE,
            eval_window: 500,
            eps_keep: 1.2,
            eps_recompute: 2.0,
            buffer_cap: 5000,
            trigger: TriggerConfig::default(),
            order: OrderChoice::Auto { max_n: 4, max_m: 2 },
            bootstrap_len: None,
            lambda: 0.98,
            adapt: true,
            coast_on_flag: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_keep > 0.0 && self.eps_keep < self.eps_recompute) {
            return Err(Error::InvalidConfig(format!(
                "need 0 < eps_keep < eps_recompute, got {} and {}",
                self.eps_keep, self.eps_recompute
            )));
        }
        if self.eval_window < 2 {
            return Err(Error::InvalidConfig("eval_window must be at least 2".into()));
        }
        if self.buffer_cap < 10 * self.eval_window {
            return Err(Error::InvalidConfig(format!(
                "buffer_cap {} must be at least 10·eval_window = {}",
                self.buffer_cap,
                10 * self.eval_window
            )));
        }
        if !(self.lambda > 0.9 && self.lambda <= 1.0) {
            return Err(Error::InvalidConfig(format!("lambda {} outside (0.9, 1]", self.lambda)));
        }
        if let OrderChoice::Auto { max_n: 0, .. } | OrderChoice::Fixed { n: 0, .. } = self.order {
            return Err(Error::InvalidConfig("AR order must be at least 1".into()));
        }
        crate::kalman::chi2_threshold(1, self.confidence)?;
        self.trigger.validate()
    }

    pub fn bootstrap(&self) -> usize {
        self.bootstrap_len.unwrap_or_else(|| 2000.max(20 * self.order.param_bound()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum UpdateAction {
    Keep,
    Increment,
    Recompute,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub nrmse: f64,
    pub window: (u64, u64),
    pub flagged_fraction: f64,
    /// Residuals scored.
    pub count: usize,
    pub quarantine_overridden: bool,
}

/// Records written to the event sink.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Event {
    Ged {
        t: u64,
        sensor_id: String,
        gamma: f64,
        threshold: f64,
        flagged: bool,
    },
    Episode {
        start_t: u64,
        end_t: u64,
        sensor_id: String,
        class: ErrorClass,
        mean_dev: f64,
        std_ratio: f64,
        count: usize,
        gamma_peak: f64,
        low_confidence: bool,
    },
    Action {
        t: u64,
        sensor_id: String,
        action: UpdateAction,
        nrmse: f64,
        model_generation: u32,
    },
    Diagnostic {
        t: u64,
        sensor_id: String,
        message: String,
    },
}

impl Event {
    pub fn from_episode(e: &GedEpisode) -> Self {
        Event::Episode {
            start_t: e.start_t,
            end_t: e.end_t,
            sensor_id: e.sensor_id.clone(),
            class: e.class,
            mean_dev: e.stats.mean_dev,
            std_ratio: e.stats.std_ratio,
            count: e.stats.count,
            gamma_peak: e.gamma_peak,
            low_confidence: e.low_confidence,
        }
    }

    pub fn sensor_id(&self) -> &str {
        match self {
            Event::Ged { sensor_id, .. }
            | Event::Episode { sensor_id, .. }
            | Event::Action { sensor_id, .. }
            | Event::Diagnostic { sensor_id, .. } => sensor_id,
        }
    }
}

pub trait EventSink {
    fn emit(&mut self, event: &Event) -> Result<()>;
}

impl EventSink for Vec<Event> {
    fn emit(&mut self, event: &Event) -> Result<()> {
        self.push(event.clone());
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Buffered {
    t: u64,
    value: f64,
    exog: Option<f64>,
    flagged: bool,
    /// Inside (or just before) a detected episode; kept out of fitting and scoring.
    quarantined: bool,
}

#[derive(Debug, Clone)]
pub struct Channel {
    pub model: ArmaModel,
    pub kf: KalmanState,
    pub clf: ClassifierState,
    pub generation: u32,
    rls: Option<RlsState>,
    buffer: VecDeque<Buffered>,
    since_eval: usize,
    pub summary: ChannelSummary,
}

impl Channel {
    pub fn buffer_len(&self) -> usize {
        self.buffer.len()
    }

    pub fn buffered_values(&self) -> Vec<f64> {
        self.buffer.iter().map(|b| b.value).collect()
    }

    /// True for buffered samples that may feed fitting and scoring.
    pub fn usable_mask(&self) -> Vec<bool> {
        self.buffer.iter().map(|b| !b.quarantined).collect()
    }

    fn series(&self) -> (Vec<f64>, Option<Vec<f64>>, Vec<bool>) {
        let y = self.buffer.iter().map(|b| b.value).collect();
        let x = self.model.exogenous.then(|| self.buffer.iter().map(|b| b.exog.unwrap_or(0.0)).collect());
        let usable = self.buffer.iter().map(|b| !b.quarantined).collect();
        (y, x, usable)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChannelSummary {
    pub samples: u64,
    pub flagged: u64,
    pub events: u64,
    pub episodes: u64,
    pub episodes_by_class: BTreeMap<ErrorClass, u64>,
    pub keep: u64,
    pub increment: u64,
    pub recompute: u64,
    pub diagnostics: u64,
    pub generation: u32,
    pub order: Option<(usize, usize)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub channels: BTreeMap<String, ChannelSummary>,
}

impl RunSummary {
    pub fn total_episodes(&self) -> u64 {
        self.channels.values().map(|c| c.episodes).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunFailure {
    pub error: Error,
    pub partial: RunSummary,
}

/// How samples from channels without a model are handled.
#[derive(Debug, Clone)]
pub enum Registration {
    /// Reject them with `UnknownSensor`.
    Strict,
    /// Fit a model from the first `bootstrap` samples, then start detecting.
    Bootstrap,
    /// Use one shared model for every channel.
    Shared(ArmaModel),
}

pub fn decide_update(report: &EvalReport, config: &PipelineConfig) -> UpdateAction {
    if report.nrmse < config.eps_keep {
        UpdateAction::Keep
    } else if report.nrmse < config.eps_recompute {
        UpdateAction::Increment
    } else {
        UpdateAction::Recompute
    }
}

pub struct Pipeline {
    pub config: PipelineConfig,
    registration: Registration,
    channels: BTreeMap<String, Channel>,
    pending: BTreeMap<String, Vec<SensorSample>>,
    summary_only: BTreeMap<String, ChannelSummary>,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, registration: Registration) -> Result<Self> {
        config.validate()?;
        Ok(Pipeline {
            config,
            registration,
            channels: BTreeMap::new(),
            pending: BTreeMap::new(),
            summary_only: BTreeMap::new(),
        })
    }

    pub fn channel(&self, sensor: &str) -> Option<&Channel> {
        self.channels.get(sensor)
    }

    /// Starts tracking `sensor` with `model`. `history` primes the filter and
    /// fills the batch buffer without raising detections.
    pub fn register(&mut self, sensor: &str, model: ArmaModel, history: &[SensorSample]) -> Result<()> {
        let channel = self.build_channel(model, history)?;
        self.channels.insert(sensor.to_string(), channel);
        Ok(())
    }

    fn build_channel(&self, model: ArmaModel, history: &[SensorSample]) -> Result<Channel> {
        let mut kf = self.fresh_filter(&model)?;
        kf.coast_on_flag = false;
        kf.warmup = u64::MAX;
        for s in history {
            step(&mut kf, s)?;
        }
        kf.coast_on_flag = self.config.coast_on_flag;
        kf.warmup = if history.is_empty() { (10 * kf.model.dim()) as u64 } else { 0 };
        let mut summary = ChannelSummary { order: Some((model.n, model.m)), ..Default::default() };
        summary.samples = history.len() as u64;
        let mut buffer: VecDeque<Buffered> = history
            .iter()
            .map(|s| Buffered { t: s.t, value: s.value, exog: s.exog, flagged: false, quarantined: false })
            .collect();
        while buffer.len() > self.config.buffer_cap {
            buffer.pop_front();
        }
        let mut channel = Channel {
            model,
            kf,
            clf: ClassifierState::new(self.config.trigger)?,
            generation: 0,
            rls: None,
            buffer,
            since_eval: 0,
            summary,
        };
        channel.rls = self.seed_rls(&channel).ok();
        Ok(channel)
    }

    fn fresh_filter(&self, model: &ArmaModel) -> Result<KalmanState> {
        let ss = to_state_space(model)?;
        init_filter(ss, NoiseConfig::from_sigma(model.sigma))?.with_confidence(self.config.confidence)
    }

    fn seed_rls(&self, ch: &Channel) -> Result<RlsState> {
        let (y, x, usable) = ch.series();
        let sys = build_regression_masked(&y, x.as_deref(), ch.model.n, ch.model.m, &usable)?;
        RlsState::seed(&sys, self.config.lambda)
    }

    fn initial_fit(&self, samples: &[SensorSample]) -> Result<ArmaModel> {
        let y: Vec<f64> = samples.iter().map(|s| s.value).collect();
        let exog = samples[0].exog.is_some();
        if samples.iter().any(|s| s.exog.is_some() != exog) {
            return Err(Error::Malformed("exog present on some samples only".into()));
        }
        let x: Option<Vec<f64>> = exog.then(|| samples.iter().map(|s| s.exog.unwrap_or(0.0)).collect());
        let (n, m) = match self.config.order {
            OrderChoice::Auto { max_n, max_m } => select_order(&y, x.as_deref(), max_n, max_m)?,
            OrderChoice::Fixed { n, m } => (n, m),
        };
        fit_arma(&y, x.as_deref(), n, m)
    }

    /// Speed path for one sample of a registered channel.
    pub fn speed_step(&mut self, sample: &SensorSample) -> Result<Vec<Event>> {
        let trigger = self.config.trigger;
        let cap = self.config.buffer_cap;
        let ch = self
            .channels
            .get_mut(&sample.sensor_id)
            .ok_or_else(|| Error::UnknownSensor(sample.sensor_id.clone()))?;
        let (inn, decision) = step(&mut ch.kf, sample)?;
        let mut events = Vec::new();
        ch.summary.samples += 1;
        if decision.flagged {
            ch.summary.flagged += 1;
            events.push(Event::Ged {
                t: sample.t,
                sensor_id: sample.sensor_id.clone(),
                gamma: decision.gamma,
                threshold: decision.threshold,
                flagged: true,
            });
        }
        let trig = accumulate(&mut ch.clf, sample.t, &decision, inn.v).map_err(|e| match e {
            Error::OutOfOrder { t, last, .. } => Error::OutOfOrder { sensor: sample.sensor_id.clone(), t, last },
            e => e,
        })?;
        match trig {
            Some(EpisodeTrigger::Opened { t }) => {
                // detection lags the fault onset by up to a few trigger windows
                let back = QUARANTINE_LOOKBACK * trigger.window;
                for b in ch.buffer.iter_mut().rev().take(back) {
                    b.quarantined = true;
                }
                events.push(Event::Diagnostic {
                    t,
                    sensor_id: sample.sensor_id.clone(),
                    message: "episode opened".into(),
                });
            }
            Some(EpisodeTrigger::Closed(ep)) => {
                let g = classify_episode(&sample.sensor_id, &ep, ch.model.sigma.max(f64::MIN_POSITIVE), trigger.min_window)?;
                ch.summary.episodes += 1;
                *ch.summary.episodes_by_class.entry(g.class).or_default() += 1;
                events.push(Event::from_episode(&g));
            }
            None => {}
        }
        ch.buffer.push_back(Buffered {
            t: sample.t,
            value: sample.value,
            exog: sample.exog,
            flagged: decision.flagged,
            quarantined: ch.clf.is_open(),
        });
        while ch.buffer.len() > cap {
            ch.buffer.pop_front();
        }
        ch.since_eval += 1;
        Ok(events)
    }

    /// Scores the current model on the latest `eval_window` buffered samples,
    /// leaving out quarantined ones. When more than half the window is
    /// quarantined the episodes are more likely the model's fault than the
    /// sensor's, so every sample is scored.
    pub fn evaluate_model(&self, sensor: &str) -> Result<EvalReport> {
        let ch = self.channels.get(sensor).ok_or_else(|| Error::UnknownSensor(sensor.into()))?;
        let w = self.config.eval_window;
        let len = ch.buffer.len();
        let span = ch.model.lag_span();
        if len < w + span {
            return Err(Error::InsufficientData { needed: w + span, available: len });
        }
        let start = len - w;
        let (y, x, quarantine_free) = ch.series();
        let clean_count = quarantine_free[start..].iter().filter(|u| **u).count();
        let overridden = clean_count * 2 < w;
        let usable: Vec<bool> = (0..len).map(|k| k >= start && (overridden || quarantine_free[k])).collect();
        // lags may reach before the window; only the targets must lie inside it
        let lag_ok: Vec<bool> = (0..len).map(|k| k < start || usable[k]).collect();
        let mut resid = Vec::with_capacity(w);
        let all = residuals(&ch.model, &y, x.as_deref(), None)?;
        for (i, r) in all.iter().enumerate() {
            let k = i + span;
            if usable[k] && lag_ok[k - span..k].iter().all(|&u| u) {
                resid.push(*r);
            }
        }
        if resid.len() < 2 {
            return Err(Error::InsufficientData { needed: 2, available: resid.len() });
        }
        let flagged = ch.buffer.range(start..).filter(|b| b.flagged).count();
        let baseline = ch.model.sigma;
        let nrmse = if baseline > 0.0 {
            rms(&resid) / baseline
        } else if rms(&resid) == 0.0 {
            0.0
        } else {
            // stays finite so it can be written out; any nonzero error forces a recompute
            f64::MAX
        };
        Ok(EvalReport {
            nrmse,
            window: (ch.buffer[start].t, ch.buffer[len - 1].t),
            flagged_fraction: flagged as f64 / w as f64,
            count: resid.len(),
            quarantine_overridden: overridden,
        })
    }

    /// Applies an update. Failures keep the current model and come back as
    /// diagnostics rather than errors.
    pub fn apply_action(&mut self, sensor: &str, action: UpdateAction, report: &EvalReport) -> Result<Vec<Event>> {
        if !self.channels.contains_key(sensor) {
            return Err(Error::UnknownSensor(sensor.into()));
        }
        let t = report.window.1;
        let outcome = match action {
            UpdateAction::Keep => Ok(()),
            UpdateAction::Increment => self.increment(sensor, report),
            UpdateAction::Recompute => self.recompute(sensor, report),
        };
        let ch = self.channels.get_mut(sensor).expect("checked above");
        match outcome {
            Ok(()) => {
                match action {
                    UpdateAction::Keep => ch.summary.keep += 1,
                    UpdateAction::Increment => ch.summary.increment += 1,
                    UpdateAction::Recompute => ch.summary.recompute += 1,
                }
                if action != UpdateAction::Keep {
                    ch.generation += 1;
                    ch.summary.generation = ch.generation;
                    ch.summary.order = Some((ch.model.n, ch.model.m));
                }
                Ok(vec![Event::Action {
                    t,
                    sensor_id: sensor.into(),
                    action,
                    nrmse: report.nrmse,
                    model_generation: ch.generation,
                }])
            }
            Err(e) => {
                ch.summary.keep += 1;
                ch.summary.diagnostics += 1;
                Ok(vec![
                    Event::Diagnostic {
                        t,
                        sensor_id: sensor.into(),
                        message: format!("{action:?} failed, keeping model: {e}"),
                    },
                    Event::Action {
                        t,
                        sensor_id: sensor.into(),
                        action: UpdateAction::Keep,
                        nrmse: report.nrmse,
                        model_generation: ch.generation,
                    },
                ])
            }
        }
    }

    fn increment(&mut self, sensor: &str, report: &EvalReport) -> Result<()> {
        let lambda = self.config.lambda;
        let ch = self.channels.get_mut(sensor).expect("registered");
        let (y, x, usable) = ch.series();
        let sys = build_regression_masked(&y, x.as_deref(), ch.model.n, ch.model.m, &usable)?;
        let first = ch.buffer.iter().position(|b| b.t >= report.window.0).unwrap_or(0);
        let from = sys.rows_k.iter().position(|&k| k >= first).unwrap_or(sys.nrows());
        let window_rows = sys.slice_rows(from..sys.nrows());
        let rls = match ch.rls.take() {
            Some(r) => r,
            None => RlsState::seed(&sys.slice_rows(0..from), lambda)?,
        };
        let mut rls = rls;
        rls.update_system(&window_rows);

        let mut model = ch.model.clone();
        model.set_theta(rls.theta.as_slice());
        model.fitted_on += window_rows.nrows();
        let fresh: Vec<bool> = (0..y.len()).map(|k| k >= first && usable[k]).collect();
        let r = residuals(&model, &y, x.as_deref(), Some(&fresh))?;
        if r.len() >= 2 {
            model.sigma = crate::stats::sample_std(&r);
        }
        let ss = to_state_space(&model)?;
        let noise = NoiseConfig::from_sigma(model.sigma);
        if ss.dim() == ch.kf.model.dim() {
            ch.kf.reseed(ss, noise)?;
        } else {
            let fresh_kf = init_filter(ss, noise)?.with_confidence(self.config.confidence)?;
            ch.kf = KalmanState { last_t: ch.kf.last_t, coast_on_flag: ch.kf.coast_on_flag, ..fresh_kf };
        }
        ch.model = model;
        ch.rls = Some(rls);
        Ok(())
    }

    fn recompute(&mut self, sensor: &str, report: &EvalReport) -> Result<()> {
        let order = self.config.order;
        let confidence = self.config.confidence;
        let lambda = self.config.lambda;
        let coast = self.config.coast_on_flag;
        let ch = self.channels.get_mut(sensor).expect("registered");
        // the old regime is stale: refit on what arrived since the window began
        let first = ch.buffer.iter().position(|b| b.t >= report.window.0).unwrap_or(0);
        let mut kept: VecDeque<Buffered> = ch.buffer.iter().skip(first).copied().collect();
        let y: Vec<f64> = kept.iter().map(|b| b.value).collect();
        let x: Option<Vec<f64>> = ch.model.exogenous.then(|| kept.iter().map(|b| b.exog.unwrap_or(0.0)).collect());
        let usable: Vec<bool> = kept.iter().map(|b| !b.quarantined).collect();
        let (n, m) = match order {
            OrderChoice::Auto { max_n, max_m } => select_order_masked(&y, x.as_deref(), max_n, max_m, &usable)?,
            OrderChoice::Fixed { n, m } => (n, m),
        };
        let model = fit_arma_masked(&y, x.as_deref(), n, m, &usable)?;
        let sys = build_regression_masked(&y, x.as_deref(), n, m, &usable)?;
        let rls = RlsState::seed(&sys, lambda)?;
        let ss = to_state_space(&model)?;
        let mut kf = init_filter(ss, NoiseConfig::from_sigma(model.sigma))?.with_confidence(confidence)?;
        kf.coast_on_flag = coast;
        kf.last_t = ch.kf.last_t;
        std::mem::swap(&mut ch.buffer, &mut kept);
        ch.model = model;
        ch.kf = kf;
        ch.rls = Some(rls);
        Ok(())
    }

    /// Speed step plus, every `eval_window` samples, the batch update.
    pub fn process(&mut self, sample: &SensorSample) -> Result<Vec<Event>> {
        if !self.channels.contains_key(&sample.sensor_id) {
            return self.register_on_demand(sample);
        }
        let mut events = self.speed_step(sample)?;
        let ch = &self.channels[&sample.sensor_id];
        if self.config.adapt && ch.since_eval >= self.config.eval_window {
            self.channels.get_mut(&sample.sensor_id).expect("present").since_eval = 0;
            match self.evaluate_model(&sample.sensor_id) {
                Ok(report) => {
                    let action = decide_update(&report, &self.config);
                    events.extend(self.apply_action(&sample.sensor_id, action, &report)?);
                }
                Err(e) => {
                    let ch = self.channels.get_mut(&sample.sensor_id).expect("present");
                    ch.summary.diagnostics += 1;
                    events.push(Event::Diagnostic {
                        t: sample.t,
                        sensor_id: sample.sensor_id.clone(),
                        message: format!("evaluation skipped: {e}"),
                    });
                }
            }
        }
        if let Some(ch) = self.channels.get_mut(&sample.sensor_id) {
            ch.summary.events += events.len() as u64;
        }
        Ok(events)
    }

    fn register_on_demand(&mut self, sample: &SensorSample) -> Result<Vec<Event>> {
        match self.registration.clone() {
            Registration::Strict => Err(Error::UnknownSensor(sample.sensor_id.clone())),
            Registration::Shared(model) => {
                self.register(&sample.sensor_id, model, &[])?;
                self.process(sample)
            }
            Registration::Bootstrap => {
                sample.validate()?;
                let need = self.config.bootstrap();
                let pending = self.pending.entry(sample.sensor_id.clone()).or_default();
                if let Some(last) = pending.last() {
                    if sample.t <= last.t {
                        return Err(Error::OutOfOrder { sensor: sample.sensor_id.clone(), t: sample.t, last: last.t });
                    }
                }
                pending.push(sample.clone());
                if pending.len() < need {
                    return Ok(Vec::new());
                }
                let history = self.pending.remove(&sample.sensor_id).unwrap_or_default();
                match self.initial_fit(&history).and_then(|m| self.build_channel(m, &history)) {
                    Ok(ch) => {
                        self.channels.insert(sample.sensor_id.clone(), ch);
                        Ok(Vec::new())
                    }
                    Err(e) => {
                        // retry on a fresh bootstrap window
                        let s = self.summary_only.entry(sample.sensor_id.clone()).or_default();
                        s.samples += history.len() as u64;
                        s.diagnostics += 1;
                        s.events += 1;
                        Ok(vec![Event::Diagnostic {
                            t: sample.t,
                            sensor_id: sample.sensor_id.clone(),
                            message: format!("bootstrap fit failed: {e}"),
                        }])
                    }
                }
            }
        }
    }

    /// Closes open episodes and reports channels that never left bootstrap.
    pub fn finish(&mut self) -> Result<Vec<Event>> {
        let min_window = self.config.trigger.min_window;
        let mut events = Vec::new();
        for (sensor, ch) in self.channels.iter_mut() {
            if let Some(ep) = ch.clf.flush() {
                let g = classify_episode(sensor, &ep, ch.model.sigma.max(f64::MIN_POSITIVE), min_window)?;
                ch.summary.episodes += 1;
                ch.summary.events += 1;
                *ch.summary.episodes_by_class.entry(g.class).or_default() += 1;
                events.push(Event::from_episode(&g));
            }
        }
        for (sensor, pending) in std::mem::take(&mut self.pending) {
            let s = self.summary_only.entry(sensor.clone()).or_default();
            s.samples += pending.len() as u64;
            s.diagnostics += 1;
            s.events += 1;
            events.push(Event::Diagnostic {
                t: pending.last().map_or(0, |p| p.t),
                sensor_id: sensor,
                message: format!("stream ended during bootstrap ({} samples)", pending.len()),
            });
        }
        Ok(events)
    }

    pub fn summary(&self) -> RunSummary {
        let mut channels = self.summary_only.clone();
        for (sensor, ch) in &self.channels {
            let entry = channels.entry(sensor.clone()).or_default();
            let mut s = ch.summary.clone();
            s.samples += entry.samples;
            s.diagnostics += entry.diagnostics;
            s.events += entry.events;
            *entry = s;
        }
        for (sensor, pending) in &self.pending {
            channels.entry(sensor.clone()).or_default().samples += pending.len() as u64;
        }
        RunSummary { channels }
    }
}

/// Drives a whole source through a bootstrapping pipeline.
pub fn run<I, S>(config: PipelineConfig, source: I, sink: &mut S) -> std::result::Result<RunSummary, RunFailure>
where
    I: IntoIterator<Item = Result<SensorSample>>,
    S: EventSink + ?Sized,
{
    let pipeline = Pipeline::new(config, Registration::Bootstrap)
        .map_err(|error| RunFailure { error, partial: RunSummary::default() })?;
    run_with(pipeline, source, sink)
}

/// Like [`run`] with a caller-configured pipeline.
pub fn run_with<I, S>(mut pipeline: Pipeline, source: I, sink: &mut S) -> std::result::Result<RunSummary, RunFailure>
where
    I: IntoIterator<Item = Result<SensorSample>>,
    S: EventSink + ?Sized,
{
    let fail = |p: &Pipeline, error| RunFailure { error, partial: p.summary() };
    for sample in source {
        let sample = sample.map_err(|e| fail(&pipeline, e))?;
        let events = pipeline.process(&sample).map_err(|e| fail(&pipeline, e))?;
        for e in &events {
            sink.emit(e).map_err(|e| fail(&pipeline, e))?;
        }
    }
    let events = pipeline.finish().map_err(|e| fail(&pipeline, e))?;
    for e in &events {
        sink.emit(e).map_err(|e| fail(&pipeline, e))?;
    }
    Ok(pipeline.summary())
}
