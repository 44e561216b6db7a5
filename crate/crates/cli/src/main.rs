use std::fmt::Display;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;

use clap::{Parser, Subcommand};
use pfsel_core::agent::{
    run_agent, AgentConfig, OsConfigSink, OsCounterSource, RecordingSink, ReplaySource,
};
use pfsel_core::dtree::{core_blob_len, ModelFile, SelectionMethod};
use pfsel_core::labeling::{build_phase_table, build_training_set, TrainingSet};
use pfsel_core::phase::KMeans;
use pfsel_core::pipeline::{cmd_pipeline, train_model, PipelineManifest, PipelineOptions};
use pfsel_core::sim::{
    closed_loop, evaluate, sweep, Policy, SimPlant, WorkloadGenerator, WorkloadSpec,
};
use pfsel_core::trace::{read_trace, write_trace, FEATURE_NAMES};
use pfsel_core::{fit_phase_model, FeatureVector, PhaseModel, PrefetcherConfig, Trace};

#[derive(Debug, Parser)]
#[command(
    name = "pfsel",
    version,
    about = "Learn and run a runtime prefetcher selection policy"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write synthetic workload specs drawn from the archetype generator.
    Generate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        count: usize,
        /// Per-tick multiplicative noise (standard deviation).
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        #[arg(long, default_value = "w")]
        prefix: String,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Simulate workload specs under fixed configurations and write one trace per run.
    Sweep {
        #[arg(required = true)]
        specs: Vec<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Restrict to these masks (default: all 12 valid masks).
        #[arg(long = "config")]
        configs: Vec<PrefetcherConfig>,
        /// Also write a pipeline manifest covering the generated traces.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Fit the phase model on baseline traces.
    Cluster {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        #[arg(long, default_value = "0000")]
        baseline: PrefetcherConfig,
        #[arg(long, default_value_t = pfsel_core::phase::DEFAULT_K)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output phase model file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Label every sample with its phase's best configuration.
    Label {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        #[arg(long)]
        phases: PathBuf,
        #[arg(long, default_value_t = pfsel_core::labeling::DEFAULT_MIN_SAMPLES)]
        min_samples: usize,
        /// Output training set CSV.
        #[arg(long)]
        out: PathBuf,
        /// Also write the per-phase, per-config IPC table as CSV.
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Train and encode the decision tree.
    Train {
        #[arg(long)]
        training: PathBuf,
        #[arg(long, default_value_t = pfsel_core::dtree::DEFAULT_DEPTH)]
        depth: u8,
        /// Feature selection: importance or exhaustive.
        #[arg(long, default_value = "importance")]
        method: SelectionMethod,
        #[arg(long, default_value_t = pfsel_core::dtree::DEFAULT_MIN_LEAF)]
        min_leaf: usize,
        /// Embed this phase model in the output file.
        #[arg(long)]
        phases: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a model file in readable form.
    Dump { model: PathBuf },
    /// Compare the model against fixed and oracle policies in closed loop.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(required = true)]
        specs: Vec<PathBuf>,
        /// Also write the report as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run the agent: `replay:<trace.csv>`, `sim:<spec.toml>` or `os`.
    Run {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        source: Source,
        /// Sampling period; defaults to 0 for replay/sim and 100 for os.
        #[arg(long)]
        period_ms: Option<u64>,
        #[arg(long, default_value = "0001")]
        initial: PrefetcherConfig,
        #[arg(long)]
        max_ticks: Option<u64>,
        /// Write the decision log as CSV.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Run every offline stage from a TOML manifest.
    Pipeline { manifest: PathBuf },
}

#[derive(Debug, Clone)]
enum Source {
    Replay(PathBuf),
    Sim(PathBuf),
    Os,
}

impl std::str::FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.split_once(':') {
            Some(("replay", p)) if !p.is_empty() => Ok(Source::Replay(p.into())),
            Some(("sim", p)) if !p.is_empty() => Ok(Source::Sim(p.into())),
            _ if s == "os" || s == "os:" => Ok(Source::Os),
            _ => Err(format!(
                "expected replay:<file>, sim:<file> or os, got {s:?}"
            )),
        }
    }
}

/// A failure caused by the inputs: missing files, malformed data, bad
/// parameters. Exit code 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct CliError(String);

fn data<E: Display>(ctx: impl Display) -> impl FnOnce(E) -> CliError {
    move |e| CliError(format!("{ctx}: {e}"))
}

type Result<T> = std::result::Result<T, CliError>;

// Report output ignores write errors so that piping into `head` is not fatal.
macro_rules! say {
    ($($t:tt)*) => {{
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

macro_rules! say_raw {
    ($($t:tt)*) => {{
        let _ = write!(std::io::stdout(), $($t)*);
    }};
}

fn load_traces(paths: &[PathBuf]) -> Result<Vec<Trace>> {
    paths
        .iter()
        .map(|p| read_trace(p).map_err(|e| CliError(e.to_string())))
        .collect()
}

fn load_phases(path: &Path) -> Result<PhaseModel> {
    let bytes = fs::read(path).map_err(data(path.display()))?;
    let (model, used) = PhaseModel::from_bytes(&bytes).map_err(data(path.display()))?;
    if used != bytes.len() {
        return Err(CliError(format!(
            "{}: trailing bytes after phase model",
            path.display()
        )));
    }
    Ok(model)
}

fn load_model(path: &Path) -> Result<ModelFile> {
    let bytes = fs::read(path).map_err(data(path.display()))?;
    ModelFile::from_bytes(&bytes).map_err(data(path.display()))
}

fn load_spec(path: &Path) -> Result<WorkloadSpec> {
    WorkloadSpec::load(path).map_err(data(path.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(data(path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(data(path.display()))
}

fn print_kmeans(k: usize, km: &KMeans) {
    let wcss = km.wcss_history.last().copied().unwrap_or(0.0);
    say!("k={k}: {} iterations, final WCSS {wcss:.6}", km.iterations);
}

fn print_labels(labels: &[(usize, PrefetcherConfig)]) {
    say!("phase  label");
    for (p, l) in labels {
        say!("{p:>5}  {l}");
    }
}

fn print_features(map: &[u8; 4]) {
    let names: Vec<&str> = map.iter().map(|&f| FEATURE_NAMES[f as usize]).collect();
    say!("selected features: {}", names.join(", "));
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate {
            seed,
            count,
            noise,
            prefix,
            out_dir,
        } => {
            fs::create_dir_all(&out_dir).map_err(data(out_dir.display()))?;
            let mut g = WorkloadGenerator::new(seed);
            for spec in g.workloads(&prefix, count, noise) {
                let path = out_dir.join(format!("{}.toml", spec.name));
                write_file(&path, spec.to_toml().as_bytes())?;
                say!("{}", path.display());
            }
        }
        Command::Sweep {
            specs,
            out_dir,
            configs,
            manifest,
        } => {
            fs::create_dir_all(&out_dir).map_err(data(out_dir.display()))?;
            let configs = if configs.is_empty() {
                PrefetcherConfig::all().collect()
            } else {
                configs
            };
            let mut written = Vec::new();
            for path in &specs {
                let spec = load_spec(path)?;
                for &c in &configs {
                    let trace = sweep(&spec, c).map_err(data(path.display()))?;
                    let out = out_dir.join(format!("{}_{c}.csv", spec.name));
                    write_trace(&trace, &out).map_err(|e| CliError(e.to_string()))?;
                    log::info!("{} under {c}: {} samples", spec.name, trace.len());
                    say!("{}", out.display());
                    written.push(out);
                }
            }
            if let Some(m) = manifest {
                let base = m.parent().unwrap_or(Path::new("."));
                let absolute = |p: &Path| fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf());
                let traces: Vec<PathBuf> = written.iter().map(|p| absolute(p)).collect();
                let output = absolute(base).join("model.pfm");
                let text = PipelineManifest::render(&traces, &output, &PipelineOptions::default());
                write_file(&m, text.as_bytes())?;
            }
        }
        Command::Cluster {
            traces,
            baseline,
            k,
            seed,
            out,
        } => {
            let traces = load_traces(&traces)?;
            let points: Vec<FeatureVector> = traces
                .iter()
                .filter(|t| t.config() == baseline)
                .flat_map(|t| t.features())
                .collect();
            if points.is_empty() {
                return Err(CliError(format!(
                    "no traces recorded under baseline configuration {baseline}"
                )));
            }
            let (model, km) = fit_phase_model(&points, k, seed).map_err(data("cluster"))?;
            print_kmeans(k, &km);
            write_file(&out, &model.to_bytes())?;
        }
        Command::Label {
            traces,
            phases,
            min_samples,
            out,
            table,
        } => {
            let traces = load_traces(&traces)?;
            let phases = load_phases(&phases)?;
            let t = build_phase_table(&traces, &phases);
            let ts =
                build_training_set(&traces, &phases, &t, min_samples).map_err(data("label"))?;
            if let Some(path) = table {
                write_file(&path, t.to_csv().as_bytes())?;
            }
            let mut w = create(&out)?;
            ts.write_csv(&mut w)
                .and_then(|_| w.flush())
                .map_err(data(out.display()))?;
            let mut labels: Vec<_> = ts.rows.iter().map(|r| (r.phase, r.label)).collect();
            labels.sort();
            labels.dedup();
            say!("{} training rows", ts.len());
            print_labels(&labels);
        }
        Command::Train {
            training,
            depth,
            method,
            min_leaf,
            phases,
            out,
        } => {
            let f = File::open(&training).map_err(data(training.display()))?;
            let ts = TrainingSet::read_csv(BufReader::new(f)).map_err(data(training.display()))?;
            let phases = phases.as_deref().map(load_phases).transpose()?;
            let opts = PipelineOptions {
                depth,
                method,
                min_leaf,
                ..Default::default()
            };
            let (selection, _, bytes, accuracy) =
                train_model(&ts, &opts, phases.as_ref()).map_err(pipeline_error)?;
            print_features(&selection.feature_map);
            say!("training accuracy {accuracy:.4}");
            write_file(&out, &bytes)?;
        }
        Command::Dump { model } => {
            let file = load_model(&model)?;
            let tree = &file.model.tree;
            say!("{tree}");
            say!("core blob: {} bytes", core_blob_len(tree.depth()));
            for (slot, &f) in tree.feature_map().iter().enumerate() {
                let (lo, hi) = file.model.scaler.bounds()[f as usize];
                say!("slot {slot}: {} in [{lo}, {hi}]", FEATURE_NAMES[f as usize]);
            }
            if let Some(p) = &file.phases {
                say_raw!("{p}");
            }
        }
        Command::Eval { model, specs, csv } => {
            let file = load_model(&model)?;
            let specs = specs
                .iter()
                .map(|p| load_spec(p))
                .collect::<Result<Vec<_>>>()?;
            let report = evaluate(&specs, &file.model).map_err(data("eval"))?;
            say_raw!("{report}");
            say!(
                "captured {:.1}% of oracle gain",
                report.captured_gain() * 100.0
            );
            if let Some(path) = csv {
                write_file(&path, report.to_csv().as_bytes())?;
            }
        }
        Command::Run {
            model,
            source,
            period_ms,
            initial,
            max_ticks,
            log,
        } => {
            let file = load_model(&model)?;
            let mut cfg = AgentConfig::new(file.model);
            cfg.initial = initial;
            cfg.max_ticks = max_ticks;
            let stop = AtomicBool::new(false);
            let report = match source {
                Source::Replay(path) => {
                    cfg.period_ms = period_ms.unwrap_or(0);
                    let trace = read_trace(&path).map_err(|e| CliError(e.to_string()))?;
                    run_agent(
                        &cfg,
                        ReplaySource::from_trace(&trace),
                        RecordingSink::default(),
                        &stop,
                    )
                }
                Source::Sim(path) => {
                    cfg.period_ms = period_ms.unwrap_or(0);
                    let spec = load_spec(&path)?;
                    let plant =
                        SimPlant::new(spec.clone(), initial).map_err(data(path.display()))?;
                    let report = run_agent(&cfg, plant.clone(), plant.clone(), &stop);
                    let oracle =
                        closed_loop(&spec, Policy::Oracle).map_err(data(path.display()))?;
                    say!(
                        "execution ticks {:.2} (oracle {:.2})",
                        plant.elapsed_ticks(),
                        oracle.execution_ticks
                    );
                    report
                }
                Source::Os => {
                    cfg.period_ms = period_ms.unwrap_or(pfsel_core::trace::DEFAULT_PERIOD_MS);
                    let src = OsCounterSource::open().map_err(data("os counter source"))?;
                    let sink = OsConfigSink::open().map_err(data("os config sink"))?;
                    run_agent(&cfg, src, sink, &stop)
                }
            };
            say!(
                "{} ticks, {} decisions, {} source errors, {} sink errors",
                report.ticks,
                report.log.len(),
                report.source_errors,
                report.sink_errors
            );
            if let Some(path) = log {
                let mut w = create(&path)?;
                report
                    .log
                    .write_csv(&mut w)
                    .and_then(|_| w.flush())
                    .map_err(data(path.display()))?;
            }
        }
        Command::Pipeline { manifest } => {
            let m = PipelineManifest::load(&manifest).map_err(pipeline_error)?;
            let out = cmd_pipeline(&m).map_err(pipeline_error)?;
            print_kmeans(m.options.k, &out.kmeans);
            print_features(&out.selection.feature_map);
            say!("training accuracy {:.4}", out.training_accuracy);
            print_labels(&out.phase_labels());
            say!("wrote {} ({} bytes)", m.output.display(), out.bytes.len());
        }
    }
    Ok(())
}

fn pipeline_error(e: pfsel_core::pipeline::PipelineError) -> CliError {
    CliError(e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        // Panics are bugs; the hook has already printed the message.
        Err(_) => ExitCode::from(3),
    }
}
