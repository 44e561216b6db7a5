//! Synthetic workloads assembled from a fixed library of phase archetypes.
//!
//! Each archetype has a characteristic counter profile and a planted best
//! configuration. The profiles sit on the corners of a low/high grid over
//! the three config-independent ratios (cache misses per access, L2 data
//! refills per miss, L2 instruction refills per branch miss). Instances
//! jitter the profile and draw a fresh multiplier table, but never change
//! which configuration wins.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{PhaseSpec, Segment, WorkloadSpec};
use crate::trace::{PrefetcherConfig, DEFAULT_PERIOD_MS, NUM_COUNTERS, VALID_MASKS};

/// Cycles per 100 ms tick on a 3 GHz core.
pub const CYCLES_PER_TICK: f64 = 3.0e8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Archetype {
    pub name: &'static str,
    pub ipc: f64,
    pub mem_apki: f64,
    pub branch_mpki: f64,
    pub cache_mpki: f64,
    pub l2d_refill_per_miss: f64,
    pub l2i_refill_per_branch_miss: f64,
    pub best: u8,
}

pub const ARCHETYPES: [Archetype; 8] = [
    Archetype {
        name: "compute",
        ipc: 2.4,
        mem_apki: 150.0,
        branch_mpki: 2.0,
        cache_mpki: 3.0,
        l2d_refill_per_miss: 0.25,
        l2i_refill_per_branch_miss: 0.1,
        best: 0b0000,
    },
    Archetype {
        name: "branchy",
        ipc: 1.5,
        mem_apki: 200.0,
        branch_mpki: 18.0,
        cache_mpki: 4.0,
        l2d_refill_per_miss: 0.25,
        l2i_refill_per_branch_miss: 0.6,
        best: 0b0001,
    },
    Archetype {
        name: "strided",
        ipc: 1.2,
        mem_apki: 350.0,
        branch_mpki: 3.0,
        cache_mpki: 7.0,
        l2d_refill_per_miss: 0.8,
        l2i_refill_per_branch_miss: 0.1,
        best: 0b0011,
    },
    Archetype {
        name: "icache_heavy",
        ipc: 1.1,
        mem_apki: 180.0,
        branch_mpki: 12.0,
        cache_mpki: 3.6,
        l2d_refill_per_miss: 0.8,
        l2i_refill_per_branch_miss: 0.6,
        best: 0b1100,
    },
    Archetype {
        name: "pointer_chase",
        ipc: 0.4,
        mem_apki: 300.0,
        branch_mpki: 5.0,
        cache_mpki: 36.0,
        l2d_refill_per_miss: 0.25,
        l2i_refill_per_branch_miss: 0.1,
        best: 0b0100,
    },
    Archetype {
        name: "mixed",
        ipc: 1.0,
        mem_apki: 250.0,
        branch_mpki: 8.0,
        cache_mpki: 30.0,
        l2d_refill_per_miss: 0.25,
        l2i_refill_per_branch_miss: 0.6,
        best: 0b0101,
    },
    Archetype {
        name: "stream",
        ipc: 0.8,
        mem_apki: 450.0,
        branch_mpki: 1.0,
        cache_mpki: 54.0,
        l2d_refill_per_miss: 0.8,
        l2i_refill_per_branch_miss: 0.1,
        best: 0b1111,
    },
    Archetype {
        name: "bandwidth_bound",
        ipc: 0.5,
        mem_apki: 500.0,
        branch_mpki: 1.0,
        cache_mpki: 60.0,
        l2d_refill_per_miss: 0.8,
        l2i_refill_per_branch_miss: 0.6,
        best: 0b0110,
    },
];

/// Draws workloads from the archetype library.
#[derive(Debug, Clone)]
pub struct WorkloadGenerator {
    rng: ChaCha8Rng,
    /// Relative jitter applied to each profile parameter.
    pub jitter: f64,
    pub phases_per_workload: std::ops::RangeInclusive<usize>,
    pub segments_per_workload: std::ops::RangeInclusive<usize>,
    pub segment_ticks: std::ops::RangeInclusive<u64>,
    /// Multiplier of the planted optimum is `1 + gain`.
    pub gain: std::ops::RangeInclusive<f64>,
}

impl WorkloadGenerator {
    pub fn new(seed: u64) -> Self {
        WorkloadGenerator {
            rng: ChaCha8Rng::seed_from_u64(seed),
            jitter: 0.1,
            phases_per_workload: 3..=5,
            segments_per_workload: 4..=8,
            segment_ticks: 40..=160,
            gain: 0.08..=0.25,
        }
    }

    /// Counter rates per tick and a multiplier table for one instance of
    /// `arch`.
    pub fn phase(&mut self, arch: &Archetype) -> PhaseSpec {
        let j = self.jitter;
        let mut jit = |v: f64| v * self.rng.random_range(1.0 - j..=1.0 + j);
        let instr = jit(arch.ipc) * CYCLES_PER_TICK;
        let kilo = instr / 1000.0;
        let mem = jit(arch.mem_apki) * kilo;
        let branch = jit(arch.branch_mpki) * kilo;
        let cache = jit(arch.cache_mpki) * kilo;
        let l2d = jit(arch.l2d_refill_per_miss) * cache;
        let l2i = jit(arch.l2i_refill_per_branch_miss) * branch;
        let rates: [f64; NUM_COUNTERS] = [instr, mem, branch, cache, CYCLES_PER_TICK, l2d, l2i];

        let best = PrefetcherConfig::new(arch.best).expect("archetype optimum is valid");
        let gain = self.rng.random_range(self.gain.clone());
        let step = self.rng.random_range(0.03..=0.06);
        let mut multipliers = [0.0; VALID_MASKS.len()];
        for c in PrefetcherConfig::all() {
            let distance = (c.mask() ^ best.mask()).count_ones() as f64;
            multipliers[c.index()] = if c == best {
                1.0 + gain
            } else {
                1.0 + gain - step * (distance + self.rng.random_range(0.1..0.9))
            };
        }
        PhaseSpec {
            name: arch.name.to_string(),
            rates,
            multipliers,
        }
    }

    /// A workload built from the given archetypes, visited round-robin in a
    /// shuffled segment order.
    pub fn workload_from(
        &mut self,
        name: &str,
        archetypes: &[&Archetype],
        segments: usize,
        noise_sigma: f64,
    ) -> WorkloadSpec {
        let phases: Vec<PhaseSpec> = archetypes.iter().map(|a| self.phase(a)).collect();
        let mut order: Vec<usize> = (0..segments).map(|i| i % phases.len()).collect();
        for i in (1..order.len()).rev() {
            let j = self.rng.random_range(0..=i);
            order.swap(i, j);
        }
        let segments = order
            .into_iter()
            .map(|phase| Segment {
                phase,
                duration_ticks: self.rng.random_range(self.segment_ticks.clone()),
            })
            .collect();
        WorkloadSpec {
            name: name.to_string(),
            seed: self.rng.random(),
            noise_sigma,
            period_ms: DEFAULT_PERIOD_MS,
            phases,
            segments,
        }
    }

    /// A workload over a random subset of archetypes.
    pub fn workload(&mut self, name: &str, noise_sigma: f64) -> WorkloadSpec {
        let n_phases = self.rng.random_range(self.phases_per_workload.clone());
        let n_segments = self
            .rng
            .random_range(self.segments_per_workload.clone())
            .max(n_phases);
        let picked: Vec<&Archetype> = ARCHETYPES
            .choose_multiple(&mut self.rng, n_phases)
            .collect();
        self.workload_from(name, &picked, n_segments, noise_sigma)
    }

    pub fn workloads(&mut self, prefix: &str, count: usize, noise_sigma: f64) -> Vec<WorkloadSpec> {
        (0..count)
            .map(|i| self.workload(&format!("{prefix}{i:02}"), noise_sigma))
            .collect()
    }
}
