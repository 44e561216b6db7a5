//! Concrete counter sources and configuration sinks.

use super::{ConfigSink, CounterSource, SinkError, SourceError};
use crate::trace::{CounterSample, PrefetcherConfig, Trace};

/// Plays back recorded samples in order, then reports exhaustion.
#[derive(Debug, Clone)]
pub struct ReplaySource {
    samples: std::vec::IntoIter<CounterSample>,
}

impl ReplaySource {
    pub fn new(samples: Vec<CounterSample>) -> Self {
        ReplaySource {
            samples: samples.into_iter(),
        }
    }

    pub fn from_trace(trace: &Trace) -> Self {
        ReplaySource::new(trace.samples().to_vec())
    }
}

impl CounterSource for ReplaySource {
    fn poll(&mut self) -> Result<CounterSample, SourceError> {
        self.samples.next().ok_or(SourceError::Exhausted)
    }
}

/// Remembers every mask written to it.
#[derive(Debug, Clone, Default)]
pub struct RecordingSink {
    pub applied: Vec<PrefetcherConfig>,
}

impl ConfigSink for RecordingSink {
    fn apply(&mut self, config: PrefetcherConfig) -> Result<(), SinkError> {
        log::debug!("prefetcher mask <- {config}");
        self.applied.push(config);
        Ok(())
    }
}

const OS_UNSUPPORTED: &str = if cfg!(feature = "os-backend") {
    "no perf/MSR backend is available for this platform"
} else {
    "OS counter access is disabled; rebuild with the `os-backend` feature"
};

/// Placeholder for reading system-wide counters from the operating system.
#[derive(Debug)]
pub struct OsCounterSource(());

impl OsCounterSource {
    pub fn open() -> Result<Self, SourceError> {
        Err(SourceError::Unsupported(OS_UNSUPPORTED.into()))
    }
}

impl CounterSource for OsCounterSource {
    fn poll(&mut self) -> Result<CounterSample, SourceError> {
        Err(SourceError::Unsupported(OS_UNSUPPORTED.into()))
    }
}

/// Placeholder for writing the prefetcher control register.
#[derive(Debug)]
pub struct OsConfigSink(());

impl OsConfigSink {
    pub fn open() -> Result<Self, SinkError> {
        Err(SinkError::Unsupported(OS_UNSUPPORTED.into()))
    }
}

impl ConfigSink for OsConfigSink {
    fn apply(&mut self, _: PrefetcherConfig) -> Result<(), SinkError> {
        Err(SinkError::Unsupported(OS_UNSUPPORTED.into()))
    }
}
