use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{ConfigError, CounterSample, Trace, TraceMeta, NUM_COUNTERS};

pub const CSV_HEADER: &str =
    "timestamp_ms,instructions,mem_accesses,branch_misses,cache_misses,cpu_cycles,l2d_refills,l2i_refills";

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("trace has no samples")]
    Empty,
    #[error("sample {index}: timestamp {timestamp_ms} does not increase")]
    NonMonotonic { index: usize, timestamp_ms: u64 },
    #[error("workload name must not contain line breaks")]
    BadName,
    #[error(transparent)]
    Config(#[from] ConfigError),
}

impl TraceError {
    fn parse(line: usize, message: impl Into<String>) -> Self {
        TraceError::Parse {
            line,
            message: message.into(),
        }
    }

    fn io(path: &Path, source: io::Error) -> Self {
        TraceError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<Trace, TraceError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| TraceError::io(path, e))?;
    read_trace_from(BufReader::new(file)).map_err(|e| match e {
        TraceError::Io { source, .. } => TraceError::io(path, source),
        other => other,
    })
}

/// Parses the trace CSV format. Errors carry 1-based line numbers.
pub fn read_trace_from(reader: impl BufRead) -> Result<Trace, TraceError> {
    let mut meta = TraceMeta::default();
    let mut saw_header = false;
    let mut samples = Vec::new();
    let mut last_ts: Option<u64> = None;

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| TraceError::io(Path::new("<input>"), e))?;
        let line = line.trim_end_matches('\r');

        if !saw_header {
            if let Some(comment) = line.strip_prefix('#') {
                parse_meta(comment, &mut meta).map_err(|m| TraceError::parse(lineno, m))?;
                continue;
            }
            if line.trim() != CSV_HEADER {
                return Err(TraceError::parse(
                    lineno,
                    format!("expected header `{CSV_HEADER}`"),
                ));
            }
            saw_header = true;
            continue;
        }

        if line.trim().is_empty() {
            continue;
        }
        let sample = parse_row(line).map_err(|m| TraceError::parse(lineno, m))?;
        if let Some(prev) = last_ts {
            if sample.timestamp_ms <= prev {
                return Err(TraceError::parse(
                    lineno,
                    format!(
                        "timestamp {} does not increase (previous {prev})",
                        sample.timestamp_ms
                    ),
                ));
            }
        }
        last_ts = Some(sample.timestamp_ms);
        samples.push(sample);
    }

    if !saw_header {
        return Err(TraceError::parse(0, "missing header row"));
    }
    Trace::new(meta, samples)
}

fn parse_meta(comment: &str, meta: &mut TraceMeta) -> Result<(), String> {
    let comment = comment.trim();
    let Some((key, value)) = comment.split_once('=') else {
        // free-form comment
        return Ok(());
    };
    match key.trim() {
        "workload_name" => meta.workload_name = value.to_string(),
        "config" => meta.config = value.parse().map_err(|e: ConfigError| e.to_string())?,
        "period_ms" => {
            meta.period_ms = value
                .trim()
                .parse()
                .map_err(|_| format!("bad period_ms {value:?}"))?
        }
        other => log::debug!("ignoring unknown trace metadata key {other:?}"),
    }
    Ok(())
}

fn parse_row(line: &str) -> Result<CounterSample, String> {
    let mut fields = [0u64; NUM_COUNTERS + 1];
    let mut n = 0;
    for raw in line.split(',') {
        if n == fields.len() {
            return Err(format!("expected {} fields, found more", fields.len()));
        }
        let raw = raw.trim();
        if raw.starts_with('-') {
            return Err(format!("negative count {raw:?} in column {}", n + 1));
        }
        fields[n] = raw
            .parse()
            .map_err(|_| format!("invalid integer {raw:?} in column {}", n + 1))?;
        n += 1;
    }
    if n != fields.len() {
        return Err(format!("expected {} fields, found {n}", fields.len()));
    }
    let mut counts = [0u64; NUM_COUNTERS];
    counts.copy_from_slice(&fields[1..]);
    Ok(CounterSample::from_counts(fields[0], counts))
}

pub fn write_trace(trace: &Trace, path: impl AsRef<Path>) -> Result<(), TraceError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| TraceError::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_trace_to(trace, &mut w).map_err(|e| match e {
        TraceError::Io { source, .. } => TraceError::io(path, source),
        other => other,
    })?;
    w.flush().map_err(|e| TraceError::io(path, e))
}

pub fn write_trace_to(trace: &Trace, mut w: impl Write) -> Result<(), TraceError> {
    let meta = trace.meta();
    if meta.workload_name.contains(['\n', '\r']) {
        return Err(TraceError::BadName);
    }
    let io_err = |e| TraceError::io(Path::new("<output>"), e);
    writeln!(w, "# workload_name={}", meta.workload_name).map_err(io_err)?;
    writeln!(w, "# config={}", meta.config).map_err(io_err)?;
    writeln!(w, "# period_ms={}", meta.period_ms).map_err(io_err)?;
    writeln!(w, "{CSV_HEADER}").map_err(io_err)?;
    for s in trace.samples() {
        let c = s.counts();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            s.timestamp_ms, c[0], c[1], c[2], c[3], c[4], c[5], c[6]
        )
        .map_err(io_err)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::PrefetcherConfig;
    use proptest::prelude::*;

    const GOOD: &str = "\
# workload_name=mcf
# config=0101
# period_ms=100
timestamp_ms,instructions,mem_accesses,branch_misses,cache_misses,cpu_cycles,l2d_refills,l2i_refills
0,1000,50,4,10,500,5,2
100,2000,60,5,11,900,6,3
200,3000,70,6,12,1500,7,4
";

    #[test]
    fn reads_well_formed_file() {
        let t = read_trace_from(GOOD.as_bytes()).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.meta().workload_name, "mcf");
        assert_eq!(t.config().mask(), 0b0101);
        assert_eq!(t.samples()[1].cpu_cycles, 900);
    }

    #[test]
    fn header_only_metadata_is_optional() {
        let body = GOOD.lines().skip(3).collect::<Vec<_>>().join("\n");
        let t = read_trace_from(body.as_bytes()).unwrap();
        assert_eq!(t.meta(), &TraceMeta::default());
    }

    #[test]
    fn backwards_timestamp_names_line() {
        let bad = GOOD.replace("200,3000", "50,3000");
        match read_trace_from(bad.as_bytes()) {
            Err(TraceError::Parse { line, .. }) => assert_eq!(line, 7),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn negative_count_names_line() {
        let bad = GOOD.replace("100,2000,60", "100,2000,-60");
        match read_trace_from(bad.as_bytes()) {
            Err(TraceError::Parse { line, message }) => {
                assert_eq!(line, 6);
                assert!(message.contains("negative"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_header_and_rows() {
        let bad = GOOD.replace("cpu_cycles,", "cycles,");
        assert!(matches!(
            read_trace_from(bad.as_bytes()),
            Err(TraceError::Parse { line: 4, .. })
        ));
        let short = GOOD.replace("0,1000,50,4,10,500,5,2", "0,1000,50");
        assert!(matches!(
            read_trace_from(short.as_bytes()),
            Err(TraceError::Parse { line: 5, .. })
        ));
        let bad_cfg = GOOD.replace("config=0101", "config=1000");
        assert!(matches!(
            read_trace_from(bad_cfg.as_bytes()),
            Err(TraceError::Parse { line: 2, .. })
        ));
        assert!(read_trace_from("".as_bytes()).is_err());
    }

    fn arb_trace() -> impl Strategy<Value = Trace> {
        (
            "[a-z0-9_.]{0,12}",
            0usize..12,
            1u64..1000,
            prop::collection::vec((1u64..500, prop::array::uniform7(any::<u64>())), 1..50),
        )
            .prop_map(|(name, cfg, period, rows)| {
                let mut ts = 0;
                let samples = rows
                    .into_iter()
                    .map(|(dt, c)| {
                        ts += dt;
                        CounterSample::from_counts(ts, c)
                    })
                    .collect();
                let meta = TraceMeta {
                    workload_name: name,
                    config: PrefetcherConfig::from_index(cfg).unwrap(),
                    period_ms: period,
                };
                Trace::new(meta, samples).unwrap()
            })
    }

    proptest! {
        #[test]
        fn write_then_read_is_identity(t in arb_trace()) {
            let mut buf = Vec::new();
            write_trace_to(&t, &mut buf).unwrap();
            let back = read_trace_from(buf.as_slice()).unwrap();
            prop_assert_eq!(back, t);
        }
    }
}
