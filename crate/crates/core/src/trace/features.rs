use std::ops::Index;

/// Number of raw hardware counters per sample.
pub const NUM_COUNTERS: usize = 7;
/// Number of derived features per sample.
pub const NUM_FEATURES: usize = 7;

/// Canonical counter names, in CSV column order.
pub const COUNTER_NAMES: [&str; NUM_COUNTERS] = [
    "instructions",
    "mem_accesses",
    "branch_misses",
    "cache_misses",
    "cpu_cycles",
    "l2d_refills",
    "l2i_refills",
];

/// Canonical feature names. The index of a name is its feature ID.
pub const FEATURE_NAMES: [&str; NUM_FEATURES] = [
    "ipc",
    "mem_apki",
    "branch_mpki",
    "cache_mpki",
    "cache_miss_per_access",
    "l2d_refill_per_miss",
    "l2i_refill_per_branch_miss",
];

/// Feature ID of instructions per cycle.
pub const IPC: usize = 0;

/// One periodic reading of the hardware counters. Counts are deltas over the
/// sampling interval ending at `timestamp_ms`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CounterSample {
    pub timestamp_ms: u64,
    pub instructions: u64,
    pub mem_accesses: u64,
    pub branch_misses: u64,
    pub cache_misses: u64,
    pub cpu_cycles: u64,
    pub l2d_refills: u64,
    pub l2i_refills: u64,
}

impl CounterSample {
    /// Counter values in canonical column order.
    pub fn counts(&self) -> [u64; NUM_COUNTERS] {
        [
            self.instructions,
            self.mem_accesses,
            self.branch_misses,
            self.cache_misses,
            self.cpu_cycles,
            self.l2d_refills,
            self.l2i_refills,
        ]
    }

    pub fn from_counts(timestamp_ms: u64, c: [u64; NUM_COUNTERS]) -> Self {
        CounterSample {
            timestamp_ms,
            instructions: c[0],
            mem_accesses: c[1],
            branch_misses: c[2],
            cache_misses: c[3],
            cpu_cycles: c[4],
            l2d_refills: c[5],
            l2i_refills: c[6],
        }
    }
}

/// Derived per-sample features, indexed by canonical feature ID.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FeatureVector(pub [f64; NUM_FEATURES]);

impl FeatureVector {
    pub fn ipc(&self) -> f64 {
        self.0[IPC]
    }

    pub fn as_array(&self) -> &[f64; NUM_FEATURES] {
        &self.0
    }
}

impl Index<usize> for FeatureVector {
    type Output = f64;

    fn index(&self, id: usize) -> &f64 {
        &self.0[id]
    }
}

#[inline]
fn ratio(num: u64, den: u64, scale: f64) -> f64 {
    if den == 0 {
        0.0
    } else {
        scale * num as f64 / den as f64
    }
}

/// Transforms one counter sample into the seven derived features. Any ratio
/// whose denominator is zero is reported as 0.
pub fn compute_features(s: &CounterSample) -> FeatureVector {
    FeatureVector([
        ratio(s.instructions, s.cpu_cycles, 1.0),
        ratio(s.mem_accesses, s.instructions, 1000.0),
        ratio(s.branch_misses, s.instructions, 1000.0),
        ratio(s.cache_misses, s.instructions, 1000.0),
        ratio(s.cache_misses, s.mem_accesses, 1.0),
        ratio(s.l2d_refills, s.cache_misses, 1.0),
        ratio(s.l2i_refills, s.branch_misses, 1.0),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(c: [u64; 7]) -> CounterSample {
        CounterSample::from_counts(0, c)
    }

    #[test]
    fn ipc_only() {
        let s = CounterSample {
            instructions: 2000,
            cpu_cycles: 1000,
            ..Default::default()
        };
        assert_eq!(compute_features(&s).0, [2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn all_zero_counters() {
        assert_eq!(compute_features(&CounterSample::default()).0, [0.0; 7]);
    }

    #[test]
    fn worked_example() {
        let s = CounterSample {
            timestamp_ms: 0,
            instructions: 1000,
            mem_accesses: 50,
            branch_misses: 4,
            cache_misses: 10,
            cpu_cycles: 500,
            l2d_refills: 5,
            l2i_refills: 2,
        };
        assert_eq!(
            compute_features(&s).0,
            [2.0, 50.0, 4.0, 10.0, 0.2, 0.5, 0.5]
        );
    }

    // Independent column-by-column evaluation: each feature is looked up by
    // name and computed from a name-keyed counter table.
    fn oracle(s: &CounterSample) -> Vec<f64> {
        let table: std::collections::HashMap<&str, f64> = COUNTER_NAMES
            .iter()
            .zip(s.counts())
            .map(|(n, v)| (*n, v as f64))
            .collect();
        let div = |a: &str, b: &str, k: f64| {
            if table[b] == 0.0 {
                0.0
            } else {
                k * table[a] / table[b]
            }
        };
        FEATURE_NAMES
            .iter()
            .map(|name| match *name {
                "ipc" => div("instructions", "cpu_cycles", 1.0),
                "mem_apki" => div("mem_accesses", "instructions", 1000.0),
                "branch_mpki" => div("branch_misses", "instructions", 1000.0),
                "cache_mpki" => div("cache_misses", "instructions", 1000.0),
                "cache_miss_per_access" => div("cache_misses", "mem_accesses", 1.0),
                "l2d_refill_per_miss" => div("l2d_refills", "cache_misses", 1.0),
                "l2i_refill_per_branch_miss" => div("l2i_refills", "branch_misses", 1.0),
                _ => unreachable!(),
            })
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn matches_oracle(c in prop::array::uniform7(0u64..1_000_000)) {
            let s = sample(c);
            let got = compute_features(&s);
            let want = oracle(&s);
            for (g, w) in got.0.iter().zip(&want) {
                prop_assert!((g - w).abs() <= 1e-12 * w.abs().max(1.0));
            }
        }

        #[test]
        fn always_finite(c in prop::array::uniform7(prop_oneof![Just(0u64), Just(u64::MAX), 0u64..10])) {
            let f = compute_features(&sample(c));
            prop_assert!(f.0.iter().all(|v| v.is_finite() && *v >= 0.0));
        }

        #[test]
        fn scale_covariant(c in prop::array::uniform7(0u64..1_000_000), k in 1u64..1000) {
            let base = compute_features(&sample(c));
            let scaled = compute_features(&sample(c.map(|v| v * k)));
            for (a, b) in base.0.iter().zip(&scaled.0) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }
    }
}
