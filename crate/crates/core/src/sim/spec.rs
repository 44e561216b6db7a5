use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::trace::{PrefetcherConfig, COUNTER_NAMES, DEFAULT_PERIOD_MS, NUM_COUNTERS, VALID_MASKS};

/// Index of `instructions` in the counter rate array.
pub const INSTRUCTIONS: usize = 0;

/// One workload behavior: counter rates per tick at multiplier 1 and the IPC
/// multiplier each configuration achieves.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSpec {
    pub name: String,
    pub rates: [f64; NUM_COUNTERS],
    pub multipliers: [f64; VALID_MASKS.len()],
}

impl PhaseSpec {
    pub fn multiplier(&self, config: PrefetcherConfig) -> f64 {
        self.multipliers[config.index()]
    }

    /// Configuration with the largest multiplier (lowest mask on ties).
    pub fn best_config(&self) -> PrefetcherConfig {
        let mut best = 0;
        for i in 1..self.multipliers.len() {
            if self.multipliers[i] > self.multipliers[best] {
                best = i;
            }
        }
        PrefetcherConfig::from_index(best).unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub phase: usize,
    pub duration_ticks: u64,
}

/// A phase-scripted synthetic workload.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadSpec {
    pub name: String,
    pub seed: u64,
    /// Relative standard deviation of the Gaussian noise on every counter.
    pub noise_sigma: f64,
    pub period_ms: u64,
    pub phases: Vec<PhaseSpec>,
    pub segments: Vec<Segment>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawPhase {
    rates: BTreeMap<String, f64>,
    multipliers: BTreeMap<String, f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawSegment {
    phase: String,
    duration_ticks: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawSpec {
    name: String,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    noise_sigma: f64,
    #[serde(default = "default_period")]
    period_ms: u64,
    /// Phase tables in file order; segment indices follow this order.
    phases: toml::Table,
    segments: Vec<RawSegment>,
}

fn default_period() -> u64 {
    DEFAULT_PERIOD_MS
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidSpec(format!("{}: {m}", self.name)));
        if self.phases.is_empty() || self.segments.is_empty() {
            return bad("needs at least one phase and one segment".into());
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad(format!("noise_sigma {} must be >= 0", self.noise_sigma));
        }
        if self.period_ms == 0 {
            return bad("period_ms must be positive".into());
        }
        for p in &self.phases {
            if let Some(r) = p.rates.iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
                return bad(format!("phase {}: counter rate {r} must be >= 0", p.name));
            }
            if p.rates[INSTRUCTIONS] <= 0.0 {
                return bad(format!(
                    "phase {}: instruction rate must be positive",
                    p.name
                ));
            }
            if let Some(m) = p.multipliers.iter().find(|m| !(m.is_finite() && **m > 0.0)) {
                return bad(format!("phase {}: multiplier {m} must be > 0", p.name));
            }
        }
        for s in &self.segments {
            if s.duration_ticks == 0 {
                return bad("segment durations must be >= 1".into());
            }
            if s.phase >= self.phases.len() {
                return bad(format!("segment refers to missing phase {}", s.phase));
            }
        }
        Ok(())
    }

    /// Instructions needed to finish segment `i` (its duration at multiplier 1).
    pub fn segment_work(&self, i: usize) -> f64 {
        let s = self.segments[i];
        s.duration_ticks as f64 * self.phases[s.phase].rates[INSTRUCTIONS]
    }

    pub fn total_work(&self) -> f64 {
        (0..self.segments.len()).map(|i| self.segment_work(i)).sum()
    }

    pub fn total_ticks(&self) -> u64 {
        self.segments.iter().map(|s| s.duration_ticks).sum()
    }

    /// Planted optimum for each segment.
    pub fn oracle_schedule(&self) -> Vec<PrefetcherConfig> {
        self.segments
            .iter()
            .map(|s| self.phases[s.phase].best_config())
            .collect()
    }

    /// Scales every multiplier by an independent factor in `[1 - spread,
    /// 1 + spread]`, then lifts each phase's planted optimum back above the
    /// rest so the per-phase best configuration is unchanged.
    pub fn retarget(&self, spread: f64, seed: u64) -> WorkloadSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = self.clone();
        for p in &mut out.phases {
            let best = p.best_config().index();
            for m in p.multipliers.iter_mut() {
                *m *= rng.random_range(1.0 - spread..=1.0 + spread);
            }
            let runner_up = p
                .multipliers
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != best)
                .map(|(_, &m)| m)
                .fold(0.0, f64::max);
            if p.multipliers[best] <= runner_up {
                p.multipliers[best] = runner_up * 1.01;
            }
        }
        out
    }

    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let raw: RawSpec =
            toml::from_str(text).map_err(|e| SimError::InvalidSpec(e.to_string()))?;
        let names: Vec<String> = raw.phases.keys().cloned().collect();
        let mut phases = Vec::with_capacity(names.len());
        for (name, p) in raw.phases {
            let bad = |m: String| SimError::InvalidSpec(format!("phase {name}: {m}"));
            let p: RawPhase = p.try_into().map_err(|e| bad(format!("{e}")))?;
            let mut rates = [0.0; NUM_COUNTERS];
            for (key, v) in &p.rates {
                let i = COUNTER_NAMES
                    .iter()
                    .position(|c| c == key)
                    .ok_or_else(|| bad(format!("unknown counter {key:?}")))?;
                rates[i] = *v;
            }
            if let Some(missing) = COUNTER_NAMES.iter().find(|c| !p.rates.contains_key(**c)) {
                return Err(bad(format!("missing rate for {missing}")));
            }
            let mut multipliers = [0.0; VALID_MASKS.len()];
            let mut seen = [false; VALID_MASKS.len()];
            for (key, v) in &p.multipliers {
                let c: PrefetcherConfig = key.parse().map_err(|e| bad(format!("{e}")))?;
                multipliers[c.index()] = *v;
                seen[c.index()] = true;
            }
            if let Some(i) = seen.iter().position(|s| !s) {
                return Err(bad(format!(
                    "missing multiplier for {}",
                    PrefetcherConfig::from_index(i).unwrap()
                )));
            }
            phases.push(PhaseSpec {
                name,
                rates,
                multipliers,
            });
        }
        let segments = raw
            .segments
            .iter()
            .map(|s| {
                let phase = names.iter().position(|n| *n == s.phase).ok_or_else(|| {
                    SimError::InvalidSpec(format!("segment refers to unknown phase {:?}", s.phase))
                })?;
                Ok(Segment {
                    phase,
                    duration_ticks: s.duration_ticks,
                })
            })
            .collect::<Result<_, SimError>>()?;
        let spec = WorkloadSpec {
            name: raw.name,
            seed: raw.seed,
            noise_sigma: raw.noise_sigma,
            period_ms: raw.period_ms,
            phases,
            segments,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        let raw = RawSpec {
            name: self.name.clone(),
            seed: self.seed,
            noise_sigma: self.noise_sigma,
            period_ms: self.period_ms,
            phases: self
                .phases
                .iter()
                .map(|p| {
                    let rates = COUNTER_NAMES
                        .iter()
                        .zip(p.rates)
                        .map(|(n, v)| (n.to_string(), v))
                        .collect();
                    let multipliers = PrefetcherConfig::all()
                        .map(|c| (c.to_string(), p.multiplier(c)))
                        .collect();
                    let table = toml::Table::try_from(RawPhase { rates, multipliers })
                        .expect("phase table serializes");
                    (p.name.clone(), toml::Value::Table(table))
                })
                .collect(),
            segments: self
                .segments
                .iter()
                .map(|s| RawSegment {
                    phase: self.phases[s.phase].name.clone(),
                    duration_ticks: s.duration_ticks,
                })
                .collect(),
        };
        toml::to_string(&raw).expect("workload spec serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_toml(&text).map_err(|e| match e {
            SimError::InvalidSpec(m) => SimError::InvalidSpec(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) const EXAMPLE: &str = r#"
name = "demo"
seed = 3
noise_sigma = 0.0

[phases.compute]
rates = { instructions = 6.0e8, mem_accesses = 9.0e7, branch_misses = 1.2e6, cache_misses = 6.0e5, cpu_cycles = 3.0e8, l2d_refills = 1.2e5, l2i_refills = 1.2e5 }
multipliers = { "0000" = 1.05, "0001" = 1.0, "0010" = 0.98, "0011" = 0.97, "0100" = 0.99, "0101" = 0.96, "0110" = 0.95, "0111" = 0.94, "1100" = 0.97, "1101" = 0.93, "1110" = 0.92, "1111" = 0.9 }

[phases.stream]
rates = { instructions = 2.4e8, mem_accesses = 1.1e8, branch_misses = 2.4e5, cache_misses = 7.2e6, cpu_cycles = 3.0e8, l2d_refills = 6.5e6, l2i_refills = 1.2e4 }
multipliers = { "0000" = 0.8, "0001" = 1.0, "0010" = 1.05, "0011" = 1.1, "0100" = 1.02, "0101" = 1.08, "0110" = 1.1, "0111" = 1.15, "1100" = 1.05, "1101" = 1.12, "1110" = 1.14, "1111" = 1.2 }

[[segments]]
phase = "compute"
duration_ticks = 40

[[segments]]
phase = "stream"
duration_ticks = 60

[[segments]]
phase = "compute"
duration_ticks = 20
"#;

    #[test]
    fn parses_example() {
        let s = WorkloadSpec::from_toml(EXAMPLE).unwrap();
        assert_eq!(s.phases.len(), 2);
        assert_eq!(s.segments.len(), 3);
        assert_eq!(s.period_ms, 100);
        assert_eq!(s.segments[1].phase, 1);
        assert_eq!(s.phases[0].best_config(), PrefetcherConfig::OFF);
        assert_eq!(s.phases[1].best_config(), PrefetcherConfig::ON);
        assert_eq!(s.total_ticks(), 120);
        assert_eq!(s.total_work(), 60.0 * 6.0e8 + 60.0 * 2.4e8);
    }

    #[test]
    fn toml_roundtrip() {
        let s = WorkloadSpec::from_toml(EXAMPLE).unwrap();
        assert_eq!(WorkloadSpec::from_toml(&s.to_toml()).unwrap(), s);
    }

    #[test]
    fn rejects_invalid_specs() {
        for (from, to) in [
            ("duration_ticks = 60", "duration_ticks = 0"),
            ("\"1111\" = 1.2", "\"1111\" = 0.0"),
            ("\"1111\" = 1.2", "\"1000\" = 1.2"),
            (", \"0101\" = 0.96", ""),
            ("phase = \"stream\"", "phase = \"nope\""),
            ("noise_sigma = 0.0", "noise_sigma = -1.0"),
            ("l2i_refills = 1.2e4", "l2x_refills = 1.2e4"),
            ("instructions = 2.4e8", "instructions = 0.0"),
        ] {
            let text = EXAMPLE.replacen(from, to, 1);
            assert_ne!(text, EXAMPLE, "{from}");
            assert!(
                WorkloadSpec::from_toml(&text).is_err(),
                "accepted {from} -> {to}"
            );
        }
    }

    #[test]
    fn retarget_keeps_optima() {
        let s = WorkloadSpec::from_toml(EXAMPLE).unwrap();
        for seed in 0..50 {
            let r = s.retarget(0.2, seed);
            assert_eq!(r.oracle_schedule(), s.oracle_schedule());
            assert_ne!(r.phases[0].multipliers, s.phases[0].multipliers);
        }
    }
}
