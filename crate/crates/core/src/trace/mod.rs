//! Counter traces, the counter-to-feature transform and the trace CSV format.

mod config;
mod features;
mod io;

pub use config::{ConfigError, PrefetcherConfig, NUM_PREFETCHERS, VALID_MASKS};
pub use features::{
    compute_features, CounterSample, FeatureVector, COUNTER_NAMES, FEATURE_NAMES, IPC,
    NUM_COUNTERS, NUM_FEATURES,
};
pub use io::{read_trace, read_trace_from, write_trace, write_trace_to, TraceError, CSV_HEADER};

/// Default sampling period of the collector and the runtime agent.
pub const DEFAULT_PERIOD_MS: u64 = 100;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceMeta {
    pub workload_name: String,
    /// Configuration that was active while the trace was recorded.
    pub config: PrefetcherConfig,
    pub period_ms: u64,
}

impl Default for TraceMeta {
    fn default() -> Self {
        TraceMeta {
            workload_name: String::from("unknown"),
            config: PrefetcherConfig::DEFAULT,
            period_ms: DEFAULT_PERIOD_MS,
        }
    }
}

/// A non-empty, time-ordered sequence of counter samples from one workload
/// run under one prefetcher configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    meta: TraceMeta,
    samples: Vec<CounterSample>,
}

impl Trace {
    pub fn new(meta: TraceMeta, samples: Vec<CounterSample>) -> Result<Self, TraceError> {
        if samples.is_empty() {
            return Err(TraceError::Empty);
        }
        if let Some(i) = samples
            .windows(2)
            .position(|w| w[1].timestamp_ms <= w[0].timestamp_ms)
        {
            return Err(TraceError::NonMonotonic {
                index: i + 1,
                timestamp_ms: samples[i + 1].timestamp_ms,
            });
        }
        Ok(Trace { meta, samples })
    }

    pub fn meta(&self) -> &TraceMeta {
        &self.meta
    }

    pub fn config(&self) -> PrefetcherConfig {
        self.meta.config
    }

    pub fn samples(&self) -> &[CounterSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    /// Always false; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn features(&self) -> impl Iterator<Item = FeatureVector> + '_ {
        self.samples.iter().map(compute_features)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(ts: u64) -> CounterSample {
        CounterSample {
            timestamp_ms: ts,
            ..Default::default()
        }
    }

    #[test]
    fn rejects_empty_and_unordered() {
        assert!(matches!(
            Trace::new(TraceMeta::default(), vec![]),
            Err(TraceError::Empty)
        ));
        let err = Trace::new(TraceMeta::default(), vec![at(0), at(100), at(100)]).unwrap_err();
        assert!(matches!(err, TraceError::NonMonotonic { index: 2, .. }));
        assert_eq!(
            Trace::new(TraceMeta::default(), vec![at(5)]).unwrap().len(),
            1
        );
    }
}
