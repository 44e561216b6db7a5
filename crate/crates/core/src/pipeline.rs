//! The offline chain from per-configuration traces to an encoded model:
//! scaler and k-means on baseline traces, per-phase IPC table, labeled
//! training set, feature selection, tree training and encoding.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::dtree::{
    self, select_features, train_tree, FeatureSelection, Model, ModelFile, SelectionMethod,
    TrainOptions,
};
use crate::labeling::{build_phase_table, build_training_set, PhaseConfigTable, TrainingSet};
use crate::phase::{fit_phase_model, fit_scaler, KMeans, PhaseModel, Scaler, DEFAULT_K};
use crate::trace::{read_trace, FeatureVector, PrefetcherConfig, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Manifest,
    LoadTraces,
    Cluster,
    Label,
    SelectFeatures,
    TrainTree,
    Encode,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Manifest => "manifest",
            Stage::LoadTraces => "load traces",
            Stage::Cluster => "cluster",
            Stage::Label => "label",
            Stage::SelectFeatures => "select features",
            Stage::TrainTree => "train tree",
            Stage::Encode => "encode",
        })
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage} stage failed: {source}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: Box<dyn std::error::Error + Send + Sync>,
}

impl PipelineError {
    fn at<E>(stage: Stage) -> impl FnOnce(E) -> Self
    where
        E: Into<Box<dyn std::error::Error + Send + Sync>>,
    {
        move |e| PipelineError {
            stage,
            source: e.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOptions {
    pub baseline: PrefetcherConfig,
    pub k: usize,
    pub seed: u64,
    pub depth: u8,
    pub method: SelectionMethod,
    pub min_samples: usize,
    pub min_leaf: usize,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            baseline: PrefetcherConfig::OFF,
            k: DEFAULT_K,
            seed: 0,
            depth: dtree::DEFAULT_DEPTH,
            method: SelectionMethod::Importance,
            min_samples: crate::labeling::DEFAULT_MIN_SAMPLES,
            min_leaf: dtree::DEFAULT_MIN_LEAF,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub phases: PhaseModel,
    pub kmeans: KMeans,
    pub table: PhaseConfigTable,
    pub training_set: TrainingSet,
    pub selection: FeatureSelection,
    /// The model as it decodes from `bytes`.
    pub model: Model,
    pub bytes: Vec<u8>,
    /// Accuracy of the decoded model on the training set.
    pub training_accuracy: f64,
}

impl PipelineOutput {
    /// Label chosen for each phase that received at least one sample.
    pub fn phase_labels(&self) -> Vec<(usize, PrefetcherConfig)> {
        let mut labels: Vec<_> = self
            .training_set
            .rows
            .iter()
            .map(|r| (r.phase, r.label))
            .collect();
        labels.sort();
        labels.dedup();
        labels
    }
}

/// Scaler over the training rows, rounded to the f32 precision it is stored
/// with, so training and deployment scale identically.
pub fn training_scaler(ts: &TrainingSet) -> Result<Scaler, crate::phase::PhaseError> {
    let fitted = fit_scaler(ts.rows.iter().map(|r| &r.features))?;
    Scaler::from_bounds(fitted.bounds().map(|(lo, hi)| {
        let (lo, hi) = (lo as f32 as f64, hi as f32 as f64);
        (lo.min(hi), hi)
    }))
}

/// Trains a tree on an existing training set and round-trips it through the
/// container format.
pub fn train_model(
    ts: &TrainingSet,
    opts: &PipelineOptions,
    phases: Option<&PhaseModel>,
) -> Result<(FeatureSelection, Model, Vec<u8>, f64), PipelineError> {
    let scaler = training_scaler(ts).map_err(PipelineError::at(Stage::SelectFeatures))?;
    let selection = select_features(ts, &scaler, opts.method)
        .map_err(PipelineError::at(Stage::SelectFeatures))?;
    let tree_opts = TrainOptions {
        depth: opts.depth,
        min_leaf: opts.min_leaf,
    };
    let tree = train_tree(ts, &scaler, selection.feature_map, tree_opts)
        .map_err(PipelineError::at(Stage::TrainTree))?;
    let file = ModelFile {
        model: Model { tree, scaler },
        phases: phases.cloned(),
    };
    let bytes = file.to_bytes();
    let decoded = ModelFile::from_bytes(&bytes).map_err(PipelineError::at(Stage::Encode))?;
    let accuracy = decoded.model.accuracy(ts);
    Ok((selection, decoded.model, bytes, accuracy))
}

pub fn run_pipeline(
    traces: &[Trace],
    opts: &PipelineOptions,
) -> Result<PipelineOutput, PipelineError> {
    let baseline: Vec<FeatureVector> = traces
        .iter()
        .filter(|t| t.config() == opts.baseline)
        .flat_map(|t| t.features())
        .collect();
    if baseline.is_empty() {
        return Err(PipelineError::at(Stage::Cluster)(format!(
            "no traces recorded under baseline configuration {}",
            opts.baseline
        )));
    }
    let (phases, kmeans) =
        fit_phase_model(&baseline, opts.k, opts.seed).map_err(PipelineError::at(Stage::Cluster))?;
    let table = build_phase_table(traces, &phases);
    let training_set = build_training_set(traces, &phases, &table, opts.min_samples)
        .map_err(PipelineError::at(Stage::Label))?;
    let (selection, model, bytes, training_accuracy) =
        train_model(&training_set, opts, Some(&phases))?;
    Ok(PipelineOutput {
        phases,
        kmeans,
        table,
        training_set,
        selection,
        model,
        bytes,
        training_accuracy,
    })
}

/// TOML description of a pipeline run. Relative paths resolve against the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineManifest {
    pub traces: Vec<PathBuf>,
    pub output: PathBuf,
    pub options: PipelineOptions,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawManifest {
    traces: Vec<PathBuf>,
    output: PathBuf,
    baseline: Option<PrefetcherConfig>,
    k: Option<usize>,
    seed: Option<u64>,
    depth: Option<u8>,
    feature_method: Option<String>,
    min_samples: Option<usize>,
    min_leaf: Option<usize>,
}

impl PipelineManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::at(Stage::Manifest)(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, PipelineError> {
        let raw: RawManifest = toml::from_str(text).map_err(PipelineError::at(Stage::Manifest))?;
        let d = PipelineOptions::default();
        let method = match raw.feature_method {
            Some(m) => m.parse().map_err(PipelineError::at(Stage::Manifest))?,
            None => d.method,
        };
        let manifest = PipelineManifest {
            traces: raw.traces.into_iter().map(|p| base.join(p)).collect(),
            output: base.join(raw.output),
            options: PipelineOptions {
                baseline: raw.baseline.unwrap_or(d.baseline),
                k: raw.k.unwrap_or(d.k),
                seed: raw.seed.unwrap_or(d.seed),
                depth: raw.depth.unwrap_or(d.depth),
                method,
                min_samples: raw.min_samples.unwrap_or(d.min_samples),
                min_leaf: raw.min_leaf.unwrap_or(d.min_leaf),
            },
        };
        if let Some(missing) = manifest.traces.iter().find(|p| !p.is_file()) {
            return Err(PipelineError::at(Stage::Manifest)(format!(
                "trace file not found: {}",
                missing.display()
            )));
        }
        Ok(manifest)
    }

    /// Manifest text referencing `traces`, for tools that write sweeps.
    pub fn render(traces: &[PathBuf], output: &Path, options: &PipelineOptions) -> String {
        let quote = |p: &Path| format!("{:?}", p.display().to_string());
        let list: Vec<String> = traces.iter().map(|p| format!("  {},", quote(p))).collect();
        let method = match options.method {
            SelectionMethod::Importance => "importance",
            SelectionMethod::Exhaustive => "exhaustive",
        };
        format!(
            "traces = [\n{}\n]\noutput = {}\nbaseline = \"{}\"\nk = {}\nseed = {}\ndepth = {}\n\
             feature_method = \"{}\"\nmin_samples = {}\nmin_leaf = {}\n",
            list.join("\n"),
            quote(output),
            options.baseline,
            options.k,
            options.seed,
            options.depth,
            method,
            options.min_samples,
            options.min_leaf
        )
    }
}

/// Loads the manifest's traces, runs the pipeline and writes the model file.
pub fn cmd_pipeline(manifest: &PipelineManifest) -> Result<PipelineOutput, PipelineError> {
    let traces = manifest
        .traces
        .iter()
        .map(read_trace)
        .collect::<Result<Vec<_>, _>>()
        .map_err(PipelineError::at(Stage::LoadTraces))?;
    let out = run_pipeline(&traces, &manifest.options)?;
    std::fs::write(&manifest.output, &out.bytes).map_err(|e| {
        PipelineError::at(Stage::Encode)(format!("{}: {e}", manifest.output.display()))
    })?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{sweep_all, WorkloadGenerator, ARCHETYPES};

    fn three_phase_traces() -> Vec<Trace> {
        let mut g = WorkloadGenerator::new(17);
        let arch = [&ARCHETYPES[1], &ARCHETYPES[3], &ARCHETYPES[6]];
        let spec = g.workload_from("planted", &arch, 6, 0.0);
        sweep_all(&spec).unwrap()
    }

    #[test]
    fn missing_baseline_is_a_cluster_error() {
        let traces: Vec<Trace> = three_phase_traces()
            .into_iter()
            .filter(|t| t.config() != PrefetcherConfig::OFF)
            .collect();
        let err = run_pipeline(&traces, &PipelineOptions::default()).unwrap_err();
        assert_eq!(err.stage, Stage::Cluster);
    }

    #[test]
    fn too_large_k_names_the_cluster_stage() {
        let err = run_pipeline(
            &three_phase_traces(),
            &PipelineOptions {
                k: 500,
                ..Default::default()
            },
        )
        .unwrap_err();
        assert_eq!(err.stage, Stage::Cluster);
        assert!(err.to_string().starts_with("cluster stage failed"));
    }

    #[test]
    fn deterministic_bytes() {
        let traces = three_phase_traces();
        let opts = PipelineOptions {
            k: 3,
            seed: 5,
            ..Default::default()
        };
        let a = run_pipeline(&traces, &opts).unwrap();
        let b = run_pipeline(&traces, &opts).unwrap();
        assert_eq!(a.bytes, b.bytes);
        assert_eq!(a.training_accuracy, 1.0);
    }

    #[test]
    fn manifest_parsing() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.csv"), "x").unwrap();
        let m = PipelineManifest::parse(
            "traces = [\"a.csv\"]\noutput = \"m.pfm\"\nk = 4\nbaseline = \"0001\"\nfeature_method = \"exhaustive\"\n",
            dir.path(),
        )
        .unwrap();
        assert_eq!(m.traces, vec![dir.path().join("a.csv")]);
        assert_eq!(m.options.k, 4);
        assert_eq!(m.options.baseline, PrefetcherConfig::DEFAULT);
        assert_eq!(m.options.method, SelectionMethod::Exhaustive);
        assert_eq!(m.options.depth, 4);

        let rendered = PipelineManifest::render(&m.traces, &m.output, &m.options);
        assert_eq!(
            PipelineManifest::parse(&rendered, Path::new("/")).unwrap(),
            m
        );

        let err = PipelineManifest::parse("traces = [\"nope.csv\"]\noutput = \"m\"\n", dir.path())
            .unwrap_err();
        assert_eq!(err.stage, Stage::Manifest);
        assert!(err.to_string().contains("nope.csv"));
        assert!(PipelineManifest::parse(
            "traces = []\noutput = \"m\"\nbaseline = \"1000\"\n",
            dir.path()
        )
        .is_err());
        assert!(
            PipelineManifest::parse("traces = []\noutput = \"m\"\nbogus = 1\n", dir.path())
                .is_err()
        );
    }
}
