//! Per-phase IPC aggregation and supervised training-set generation.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::phase::PhaseModel;
use crate::trace::{
    compute_features, ConfigError, FeatureVector, PrefetcherConfig, Trace, FEATURE_NAMES,
    NUM_FEATURES, VALID_MASKS,
};

pub const DEFAULT_MIN_SAMPLES: usize = 1;

#[derive(Debug, thiserror::Error)]
pub enum LabelError {
    #[error(
        "phase {phase} has no configuration with at least {min_samples} samples; \
         collect more sweep data or lower --min-samples"
    )]
    NoEligibleConfig { phase: usize, min_samples: usize },
    #[error("phase {phase} out of range for a table with k = {k}")]
    PhaseOutOfRange { phase: usize, k: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PhaseConfigStats {
    pub sample_count: usize,
    pub mean_ipc: f64,
}

/// Mean IPC per (phase, configuration) over every valid configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseConfigTable {
    k: usize,
    cells: Vec<PhaseConfigStats>,
}

impl PhaseConfigTable {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, phase: usize, config: PrefetcherConfig) -> PhaseConfigStats {
        self.cells[phase * VALID_MASKS.len() + config.index()]
    }

    /// Rows of `(phase, config, stats)` in phase-major, mask-ascending order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, PrefetcherConfig, PhaseConfigStats)> + '_ {
        (0..self.k).flat_map(move |p| PrefetcherConfig::all().map(move |c| (p, c, self.get(p, c))))
    }

    /// Highest mean IPC among configurations with at least `min_samples`
    /// samples in `phase`; ties go to the lowest mask.
    pub fn best_config(
        &self,
        phase: usize,
        min_samples: usize,
    ) -> Result<PrefetcherConfig, LabelError> {
        if phase >= self.k {
            return Err(LabelError::PhaseOutOfRange { phase, k: self.k });
        }
        let mut best: Option<(PrefetcherConfig, f64)> = None;
        for c in PrefetcherConfig::all() {
            let s = self.get(phase, c);
            if s.sample_count == 0 || s.sample_count < min_samples {
                continue;
            }
            if best.is_none_or(|(_, m)| s.mean_ipc > m) {
                best = Some((c, s.mean_ipc));
            }
        }
        best.map(|(c, _)| c)
            .ok_or(LabelError::NoEligibleConfig { phase, min_samples })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("phase_id,config_mask,sample_count,mean_ipc\n");
        for (p, c, s) in self.iter() {
            let _ = writeln!(out, "{p},{c},{},{}", s.sample_count, s.mean_ipc);
        }
        out
    }
}

pub fn best_config(
    table: &PhaseConfigTable,
    phase: usize,
    min_samples: usize,
) -> Result<PrefetcherConfig, LabelError> {
    table.best_config(phase, min_samples)
}

/// Classifies every sample of every trace and averages IPC per
/// (phase, recording configuration).
pub fn build_phase_table(traces: &[Trace], model: &PhaseModel) -> PhaseConfigTable {
    let k = model.k();
    let n = VALID_MASKS.len();
    let mut sums = vec![0.0f64; k * n];
    let mut counts = vec![0usize; k * n];
    for trace in traces {
        let col = trace.config().index();
        for x in trace.features() {
            let cell = model.classify(&x) * n + col;
            sums[cell] += x.ipc();
            counts[cell] += 1;
        }
    }
    let cells = sums
        .iter()
        .zip(&counts)
        .map(|(&sum, &sample_count)| PhaseConfigStats {
            sample_count,
            mean_ipc: if sample_count == 0 {
                0.0
            } else {
                sum / sample_count as f64
            },
        })
        .collect();
    PhaseConfigTable { k, cells }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingRow {
    pub features: FeatureVector,
    pub phase: usize,
    pub label: PrefetcherConfig,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingSet {
    pub rows: Vec<TrainingRow>,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "{},phase_id,label", FEATURE_NAMES.join(","))?;
        for r in &self.rows {
            for v in r.features.as_array() {
                write!(w, "{v},")?;
            }
            writeln!(w, "{},{}", r.phase, r.label)?;
        }
        Ok(())
    }

    pub fn read_csv(reader: impl BufRead) -> Result<Self, LabelError> {
        let header = format!("{},phase_id,label", FEATURE_NAMES.join(","));
        let mut rows = Vec::new();
        let mut saw_header = false;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            let parse_err = |message: String| LabelError::Parse {
                line: lineno,
                message,
            };
            if !saw_header {
                if line.trim() != header {
                    return Err(parse_err(format!("expected header `{header}`")));
                }
                saw_header = true;
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != NUM_FEATURES + 2 {
                return Err(parse_err(format!(
                    "expected {} fields, found {}",
                    NUM_FEATURES + 2,
                    fields.len()
                )));
            }
            let mut f = [0.0; NUM_FEATURES];
            for (slot, raw) in f.iter_mut().zip(&fields) {
                *slot = raw
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite() && *v >= 0.0)
                    .ok_or_else(|| parse_err(format!("bad feature value {raw:?}")))?;
            }
            let phase = fields[NUM_FEATURES]
                .parse()
                .map_err(|_| parse_err(format!("bad phase id {:?}", fields[NUM_FEATURES])))?;
            let label = fields[NUM_FEATURES + 1]
                .parse()
                .map_err(|e: ConfigError| parse_err(e.to_string()))?;
            rows.push(TrainingRow {
                features: FeatureVector(f),
                phase,
                label,
            });
        }
        if !saw_header {
            return Err(LabelError::Parse {
                line: 0,
                message: "missing header row".into(),
            });
        }
        Ok(TrainingSet { rows })
    }
}

/// One row per sample of every trace, labeled with the best configuration of
/// the sample's phase.
pub fn build_training_set(
    traces: &[Trace],
    model: &PhaseModel,
    table: &PhaseConfigTable,
    min_samples: usize,
) -> Result<TrainingSet, LabelError> {
    let mut labels: Vec<Option<PrefetcherConfig>> = vec![None; table.k()];
    let mut rows = Vec::new();
    for trace in traces {
        for s in trace.samples() {
            let features = compute_features(s);
            let phase = model.classify(&features);
            let label = match labels[phase] {
                Some(l) => l,
                None => {
                    let l = table.best_config(phase, min_samples)?;
                    labels[phase] = Some(l);
                    l
                }
            };
            rows.push(TrainingRow {
                features,
                phase,
                label,
            });
        }
    }
    Ok(TrainingSet { rows })
}
