//! Phase-scripted system simulator.
//!
//! A workload is a sequence of segments, each running one phase for a fixed
//! amount of work (its `duration_ticks` at multiplier 1). Every tick the
//! active configuration scales the instruction rate by the phase's
//! multiplier; the other counters follow the phase's base rates. A segment
//! that finishes mid-tick only consumes the fraction of the tick it needed,
//! and the next segment starts on the following tick.
//!
//! The multiplier table is a modelling device, not a description of how real
//! prefetchers change counter behavior.

mod eval;
mod generator;
mod spec;

use std::cell::RefCell;
use std::path::PathBuf;
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use eval::{evaluate, evaluate_policy, geomean, EvalReport, WorkloadResult};
pub use generator::{Archetype, WorkloadGenerator, ARCHETYPES, CYCLES_PER_TICK};
pub use spec::{PhaseSpec, Segment, WorkloadSpec, INSTRUCTIONS};

use crate::agent::{AgentState, ConfigSink, CounterSource, SinkError, SourceError};
use crate::dtree::Model;
use crate::trace::{CounterSample, PrefetcherConfig, Trace, TraceMeta, NUM_COUNTERS};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid workload spec: {0}")]
    InvalidSpec(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Lower bound on a noisy rate factor, so work always progresses.
const MIN_NOISE_FACTOR: f64 = 0.1;

/// Noise stream used for closed-loop runs; sweeps use `1 + mask`.
const CLOSED_LOOP_STREAM: u64 = 0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TickOutcome {
    pub sample: CounterSample,
    /// Segment that was running during the tick.
    pub segment: usize,
    /// Portion of the tick spent working, in `(0, 1]`.
    pub fraction: f64,
}

/// Stepping state of one simulated run.
#[derive(Debug, Clone)]
pub struct Simulator {
    spec: WorkloadSpec,
    segment: usize,
    remaining: f64,
    tick: u64,
    active: PrefetcherConfig,
    elapsed: f64,
    retired: f64,
    rng: ChaCha8Rng,
    noise: Option<Normal<f64>>,
}

impl Simulator {
    pub fn new(
        spec: WorkloadSpec,
        initial: PrefetcherConfig,
        stream: u64,
    ) -> Result<Self, SimError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(stream);
        let noise = (spec.noise_sigma > 0.0)
            .then(|| Normal::new(1.0, spec.noise_sigma).expect("validated sigma"));
        let remaining = spec.segment_work(0);
        Ok(Simulator {
            spec,
            segment: 0,
            remaining,
            tick: 0,
            active: initial,
            elapsed: 0.0,
            retired: 0.0,
            rng,
            noise,
        })
    }

    pub fn spec(&self) -> &WorkloadSpec {
        &self.spec
    }

    pub fn is_done(&self) -> bool {
        self.segment >= self.spec.segments.len()
    }

    pub fn active(&self) -> PrefetcherConfig {
        self.active
    }

    /// Takes effect from the next tick on.
    pub fn set_active(&mut self, config: PrefetcherConfig) {
        self.active = config;
    }

    /// Current segment index, or `None` once the workload has finished.
    pub fn current_segment(&self) -> Option<usize> {
        (!self.is_done()).then_some(self.segment)
    }

    /// Execution time so far, in (fractional) ticks.
    pub fn elapsed_ticks(&self) -> f64 {
        self.elapsed
    }

    /// Instructions retired so far.
    pub fn retired(&self) -> f64 {
        self.retired
    }

    fn noise_factors(&mut self) -> [f64; NUM_COUNTERS] {
        match &self.noise {
            Some(n) => std::array::from_fn(|_| n.sample(&mut self.rng).max(MIN_NOISE_FACTOR)),
            None => [1.0; NUM_COUNTERS],
        }
    }

    /// Runs one tick under the active configuration.
    pub fn step(&mut self) -> Option<TickOutcome> {
        if self.is_done() {
            return None;
        }
        let noise = self.noise_factors();
        let seg = self.segment;
        let phase = &self.spec.phases[self.spec.segments[seg].phase];
        let rate = phase.rates[INSTRUCTIONS] * phase.multiplier(self.active) * noise[INSTRUCTIONS];

        let fraction = if rate >= self.remaining {
            let f = self.remaining / rate;
            self.retired += self.remaining;
            self.segment += 1;
            if self.segment < self.spec.segments.len() {
                self.remaining = self.spec.segment_work(self.segment);
            }
            f
        } else {
            self.remaining -= rate;
            self.retired += rate;
            1.0
        };
        self.elapsed += fraction;

        let mut counts = [0u64; NUM_COUNTERS];
        for (i, c) in counts.iter_mut().enumerate() {
            let v = if i == INSTRUCTIONS {
                rate
            } else {
                phase.rates[i] * noise[i]
            };
            *c = (v * fraction).round() as u64;
        }
        let sample = CounterSample::from_counts(self.tick * self.spec.period_ms, counts);
        self.tick += 1;
        Some(TickOutcome {
            sample,
            segment: seg,
            fraction,
        })
    }
}

/// A recorded sweep together with the segment behind every sample.
#[derive(Debug, Clone)]
pub struct Sweep {
    pub trace: Trace,
    pub segments: Vec<usize>,
}

/// Runs the whole script under one fixed configuration.
pub fn sweep(spec: &WorkloadSpec, config: PrefetcherConfig) -> Result<Trace, SimError> {
    sweep_annotated(spec, config).map(|s| s.trace)
}

pub fn sweep_annotated(spec: &WorkloadSpec, config: PrefetcherConfig) -> Result<Sweep, SimError> {
    let mut sim = Simulator::new(spec.clone(), config, 1 + config.mask() as u64)?;
    let mut samples = Vec::new();
    let mut segments = Vec::new();
    while let Some(out) = sim.step() {
        samples.push(out.sample);
        segments.push(out.segment);
    }
    let meta = TraceMeta {
        workload_name: spec.name.clone(),
        config,
        period_ms: spec.period_ms,
    };
    let trace = Trace::new(meta, samples).expect("simulated trace is non-empty and ordered");
    Ok(Sweep { trace, segments })
}

/// Sweeps every valid configuration.
pub fn sweep_all(spec: &WorkloadSpec) -> Result<Vec<Trace>, SimError> {
    PrefetcherConfig::all().map(|c| sweep(spec, c)).collect()
}

#[derive(Debug, Clone, Copy)]
pub enum Policy<'a> {
    Fixed(PrefetcherConfig),
    /// Planted per-segment optimum, switched without delay.
    Oracle,
    /// Tree-driven agent; a decision made from tick `t` applies at `t + 1`.
    Agent(&'a Model),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopRun {
    pub execution_ticks: f64,
    pub steps: u64,
    pub retired: f64,
    /// Configuration active during each tick.
    pub active: Vec<PrefetcherConfig>,
}

struct Latch(PrefetcherConfig);

impl ConfigSink for Latch {
    fn apply(&mut self, config: PrefetcherConfig) -> Result<(), SinkError> {
        self.0 = config;
        Ok(())
    }
}

/// Runs the workload to completion under `policy`.
pub fn closed_loop(spec: &WorkloadSpec, policy: Policy<'_>) -> Result<ClosedLoopRun, SimError> {
    let oracle = spec.oracle_schedule();
    let initial = match policy {
        Policy::Fixed(c) => c,
        Policy::Oracle => oracle[0],
        Policy::Agent(_) => PrefetcherConfig::DEFAULT,
    };
    let mut sim = Simulator::new(spec.clone(), initial, CLOSED_LOOP_STREAM)?;
    let mut agent = match policy {
        Policy::Agent(m) => Some(AgentState::new(m.clone(), true)),
        _ => None,
    };
    let mut latch = Latch(initial);
    let mut active = Vec::with_capacity(spec.total_ticks() as usize);

    loop {
        if let (Policy::Oracle, Some(seg)) = (policy, sim.current_segment()) {
            sim.set_active(oracle[seg]);
        }
        active.push(sim.active());
        let Some(out) = sim.step() else {
            active.pop();
            break;
        };
        if let Some(a) = agent.as_mut() {
            a.tick(&out.sample, &mut latch);
            sim.set_active(latch.0);
        }
    }
    Ok(ClosedLoopRun {
        execution_ticks: sim.elapsed_ticks(),
        steps: active.len() as u64,
        retired: sim.retired(),
        active,
    })
}

/// Simulator shared between an agent's counter source and config sink, so
/// [`crate::agent::run_agent`] can drive it in closed loop.
#[derive(Debug, Clone)]
pub struct SimPlant(Rc<RefCell<Simulator>>);

impl SimPlant {
    pub fn new(spec: WorkloadSpec, initial: PrefetcherConfig) -> Result<Self, SimError> {
        Ok(SimPlant(Rc::new(RefCell::new(Simulator::new(
            spec,
            initial,
            CLOSED_LOOP_STREAM,
        )?))))
    }

    pub fn elapsed_ticks(&self) -> f64 {
        self.0.borrow().elapsed_ticks()
    }

    pub fn is_done(&self) -> bool {
        self.0.borrow().is_done()
    }
}

impl CounterSource for SimPlant {
    fn poll(&mut self) -> Result<CounterSample, SourceError> {
        self.0
            .borrow_mut()
            .step()
            .map(|o| o.sample)
            .ok_or(SourceError::Exhausted)
    }
}

impl ConfigSink for SimPlant {
    fn apply(&mut self, config: PrefetcherConfig) -> Result<(), SinkError> {
        self.0.borrow_mut().set_active(config);
        Ok(())
    }
}
