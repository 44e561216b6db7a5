//! Periodic runtime loop: poll counters, derive features, run the tree,
//! write the chosen configuration.

mod io;

use std::io::Write;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

pub use io::{OsConfigSink, OsCounterSource, RecordingSink, ReplaySource};

use crate::dtree::Model;
use crate::trace::{
    compute_features, CounterSample, FeatureVector, PrefetcherConfig, DEFAULT_PERIOD_MS,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SourceError {
    /// A replayed or simulated source has nothing left to report.
    #[error("counter source exhausted")]
    Exhausted,
    #[error("counter read failed: {0}")]
    Failed(String),
    #[error("unsupported platform: {0}")]
    Unsupported(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SinkError {
    #[error("configuration write failed: {0}")]
    Failed(String),
    #[error("unsupported platform: {0}")]
    Unsupported(String),
}

/// Yields counter deltas since the previous poll, with strictly increasing
/// timestamps.
pub trait CounterSource {
    fn poll(&mut self) -> Result<CounterSample, SourceError>;
}

/// Writes a prefetcher configuration. Applying the same mask twice must be
/// harmless.
pub trait ConfigSink {
    fn apply(&mut self, config: PrefetcherConfig) -> Result<(), SinkError>;
}

impl<T: CounterSource + ?Sized> CounterSource for &mut T {
    fn poll(&mut self) -> Result<CounterSample, SourceError> {
        (**self).poll()
    }
}

impl<T: ConfigSink + ?Sized> ConfigSink for &mut T {
    fn apply(&mut self, config: PrefetcherConfig) -> Result<(), SinkError> {
        (**self).apply(config)
    }
}

#[derive(Debug, Clone)]
pub struct AgentConfig {
    pub period_ms: u64,
    pub model: Model,
    pub initial: PrefetcherConfig,
    pub write_on_change_only: bool,
    /// Stop after this many polls (successful or not).
    pub max_ticks: Option<u64>,
}

impl AgentConfig {
    pub fn new(model: Model) -> Self {
        AgentConfig {
            period_ms: DEFAULT_PERIOD_MS,
            model,
            initial: PrefetcherConfig::DEFAULT,
            write_on_change_only: true,
            max_ticks: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub timestamp_ms: u64,
    pub features: FeatureVector,
    pub mask: PrefetcherConfig,
}

/// Mutable state carried between ticks.
#[derive(Debug, Clone)]
pub struct AgentState {
    model: Model,
    write_on_change_only: bool,
    /// Mask the sink currently holds, if a write has succeeded.
    applied: Option<PrefetcherConfig>,
    sink_errors: u64,
}

impl AgentState {
    pub fn new(model: Model, write_on_change_only: bool) -> Self {
        AgentState {
            model,
            write_on_change_only,
            applied: None,
            sink_errors: 0,
        }
    }

    pub fn applied(&self) -> Option<PrefetcherConfig> {
        self.applied
    }

    pub fn sink_errors(&self) -> u64 {
        self.sink_errors
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    /// Writes `mask` unless it is already in place and writes are
    /// change-only. A failed write leaves the previous mask recorded, so the
    /// next tick retries.
    pub fn apply(&mut self, mask: PrefetcherConfig, sink: &mut impl ConfigSink) {
        if self.write_on_change_only && self.applied == Some(mask) {
            return;
        }
        match sink.apply(mask) {
            Ok(()) => self.applied = Some(mask),
            Err(e) => {
                self.sink_errors += 1;
                log::warn!("keeping previous prefetcher mask: {e}");
            }
        }
    }

    /// One control step. Allocation-free.
    #[inline]
    pub fn tick(&mut self, sample: &CounterSample, sink: &mut impl ConfigSink) -> Decision {
        let features = compute_features(sample);
        let mask = self.model.predict(&features);
        self.apply(mask, sink);
        Decision {
            timestamp_ms: sample.timestamp_ms,
            features,
            mask,
        }
    }
}

pub fn agent_tick(
    state: &mut AgentState,
    sample: &CounterSample,
    sink: &mut impl ConfigSink,
) -> PrefetcherConfig {
    state.tick(sample, sink).mask
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DecisionLog {
    pub entries: Vec<Decision>,
}

impl DecisionLog {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn masks(&self) -> Vec<PrefetcherConfig> {
        self.entries.iter().map(|d| d.mask).collect()
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "timestamp_ms,f0,f1,f2,f3,f4,f5,f6,mask")?;
        for d in &self.entries {
            write!(w, "{}", d.timestamp_ms)?;
            for v in d.features.as_array() {
                write!(w, ",{v}")?;
            }
            writeln!(w, ",{}", d.mask)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AgentReport {
    pub log: DecisionLog,
    pub ticks: u64,
    pub source_errors: u64,
    pub sink_errors: u64,
    /// Mask the sink holds after shutdown.
    pub final_mask: Option<PrefetcherConfig>,
}

/// Runs the control loop until `stop` is set, the source is exhausted or
/// `max_ticks` polls have happened. Source failures are logged and the
/// previous mask stays in place. On exit the initial mask is restored.
pub fn run_agent(
    cfg: &AgentConfig,
    mut source: impl CounterSource,
    mut sink: impl ConfigSink,
    stop: &AtomicBool,
) -> AgentReport {
    let mut state = AgentState::new(cfg.model.clone(), cfg.write_on_change_only);
    let mut report = AgentReport::default();
    state.apply(cfg.initial, &mut sink);

    let period = Duration::from_millis(cfg.period_ms);
    let mut deadline = Instant::now();
    while !stop.load(Ordering::Relaxed) && cfg.max_ticks.is_none_or(|m| report.ticks < m) {
        if !period.is_zero() {
            deadline += period;
            let now = Instant::now();
            if deadline > now {
                std::thread::sleep(deadline - now);
            } else {
                deadline = now;
            }
        }
        report.ticks += 1;
        match source.poll() {
            Ok(sample) => {
                let d = state.tick(&sample, &mut sink);
                report.log.entries.push(d);
            }
            Err(SourceError::Exhausted) => break,
            Err(e) => {
                report.source_errors += 1;
                log::warn!("tick {}: {e}; retaining current mask", report.ticks);
            }
        }
    }

    if state.applied() != Some(cfg.initial) || !cfg.write_on_change_only {
        state.apply(cfg.initial, &mut sink);
    }
    report.sink_errors = state.sink_errors();
    report.final_mask = state.applied();
    report
}
