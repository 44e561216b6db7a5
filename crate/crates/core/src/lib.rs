//! Phase-based runtime prefetcher selection.
//!
//! The offline side turns per-configuration counter traces into a tiny
//! decision tree: baseline samples are clustered into phases, every sample is
//! labeled with the configuration that had the highest mean IPC in its phase,
//! and a depth-bounded CART tree learns that mapping from four features. The
//! online side runs the tree in a periodic agent. A phase-scripted simulator
//! stands in for real hardware, both for producing training sweeps and for
//! closed-loop evaluation.

pub mod agent;
pub mod dtree;
pub mod labeling;
pub mod phase;
pub mod pipeline;
pub mod sim;
pub mod trace;

pub use phase::{classify_phase, fit_phase_model, fit_scaler, PhaseModel, Scaler};
pub use trace::{
    compute_features, CounterSample, FeatureVector, PrefetcherConfig, Trace, TraceMeta,
};
