//! Shared fixtures for the benchmarks: a small synthetic corpus and a model
//! trained on it.

use pfsel_core::labeling::TrainingSet;
use pfsel_core::pipeline::{run_pipeline, PipelineOptions, PipelineOutput};
use pfsel_core::sim::{sweep_all, WorkloadGenerator, WorkloadSpec};
use pfsel_core::Trace;

pub struct Fixture {
    pub specs: Vec<WorkloadSpec>,
    pub traces: Vec<Trace>,
    pub output: PipelineOutput,
}

impl Fixture {
    pub fn training_set(&self) -> &TrainingSet {
        &self.output.training_set
    }
}

/// Sweeps `workloads` generated workloads and runs the default pipeline.
pub fn fixture(workloads: usize) -> Fixture {
    let specs = WorkloadGenerator::new(42).workloads("bench", workloads, 0.05);
    let traces: Vec<Trace> = specs
        .iter()
        .flat_map(|s| sweep_all(s).expect("generated specs are valid"))
        .collect();
    let output =
        run_pipeline(&traces, &PipelineOptions::default()).expect("pipeline on generated data");
    Fixture {
        specs,
        traces,
        output,
    }
}
