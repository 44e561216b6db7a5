use std::fmt::{self, Write as _};

use super::{closed_loop, Policy, SimError, WorkloadSpec};
use crate::dtree::Model;
use crate::trace::PrefetcherConfig;

/// Execution time of one workload under each reference policy.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadResult {
    pub name: String,
    pub policy: f64,
    pub default: f64,
    pub off: f64,
    pub on: f64,
    pub oracle: f64,
}

impl WorkloadResult {
    pub fn policy_speedup(&self) -> f64 {
        self.default / self.policy
    }

    pub fn off_speedup(&self) -> f64 {
        self.default / self.off
    }

    pub fn on_speedup(&self) -> f64 {
        self.default / self.on
    }

    pub fn oracle_speedup(&self) -> f64 {
        self.default / self.oracle
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub workloads: Vec<WorkloadResult>,
}

pub fn geomean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, n), v| (s + v.ln(), n + 1));
    if n == 0 {
        1.0
    } else {
        (sum / n as f64).exp()
    }
}

impl EvalReport {
    pub fn geomean_policy(&self) -> f64 {
        geomean(self.workloads.iter().map(WorkloadResult::policy_speedup))
    }

    pub fn geomean_off(&self) -> f64 {
        geomean(self.workloads.iter().map(WorkloadResult::off_speedup))
    }

    pub fn geomean_on(&self) -> f64 {
        geomean(self.workloads.iter().map(WorkloadResult::on_speedup))
    }

    pub fn geomean_oracle(&self) -> f64 {
        geomean(self.workloads.iter().map(WorkloadResult::oracle_speedup))
    }

    /// Share of the oracle's geomean gain over default that the policy
    /// achieves. 1.0 when the oracle has nothing to gain.
    pub fn captured_gain(&self) -> f64 {
        let oracle = self.geomean_oracle() - 1.0;
        if oracle <= 0.0 {
            return 1.0;
        }
        (self.geomean_policy() - 1.0) / oracle
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "workload,ticks_policy,ticks_default,ticks_off,ticks_on,ticks_oracle,\
             speedup_policy,speedup_off,speedup_on,speedup_oracle\n",
        );
        for w in &self.workloads {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                w.name,
                w.policy,
                w.default,
                w.off,
                w.on,
                w.oracle,
                w.policy_speedup(),
                w.off_speedup(),
                w.on_speedup(),
                w.oracle_speedup()
            );
        }
        let _ = writeln!(
            out,
            "geomean,,,,,,{},{},{},{}",
            self.geomean_policy(),
            self.geomean_off(),
            self.geomean_on(),
            self.geomean_oracle()
        );
        out
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pct = |s: f64| (s - 1.0) * 100.0;
        writeln!(
            f,
            "{:<20} {:>9} {:>9} {:>9} {:>9}   (improvement over default, %)",
            "workload", "policy", "OFF", "ON", "oracle"
        )?;
        for w in &self.workloads {
            writeln!(
                f,
                "{:<20} {:>+9.2} {:>+9.2} {:>+9.2} {:>+9.2}",
                w.name,
                pct(w.policy_speedup()),
                pct(w.off_speedup()),
                pct(w.on_speedup()),
                pct(w.oracle_speedup())
            )?;
        }
        writeln!(
            f,
            "{:<20} {:>+9.2} {:>+9.2} {:>+9.2} {:>+9.2}",
            "geomean",
            pct(self.geomean_policy()),
            pct(self.geomean_off()),
            pct(self.geomean_on()),
            pct(self.geomean_oracle())
        )
    }
}

/// Runs every workload under the model-driven agent and the fixed reference
/// policies.
pub fn evaluate(specs: &[WorkloadSpec], model: &Model) -> Result<EvalReport, SimError> {
    evaluate_policy(specs, Policy::Agent(model))
}

pub fn evaluate_policy(specs: &[WorkloadSpec], policy: Policy<'_>) -> Result<EvalReport, SimError> {
    let ticks = |s: &WorkloadSpec, p| closed_loop(s, p).map(|r| r.execution_ticks);
    let workloads = specs
        .iter()
        .map(|s| {
            Ok(WorkloadResult {
                name: s.name.clone(),
                policy: ticks(s, policy)?,
                default: ticks(s, Policy::Fixed(PrefetcherConfig::DEFAULT))?,
                off: ticks(s, Policy::Fixed(PrefetcherConfig::OFF))?,
                on: ticks(s, Policy::Fixed(PrefetcherConfig::ON))?,
                oracle: ticks(s, Policy::Oracle)?,
            })
        })
        .collect::<Result<_, SimError>>()?;
    Ok(EvalReport { workloads })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::WorkloadGenerator;

    #[test]
    fn geomean_basics() {
        assert!((geomean([1.1, 1.1]) - 1.1).abs() < 1e-12);
        assert!((geomean([2.0, 8.0]) - 4.0).abs() < 1e-12);
        assert_eq!(geomean(std::iter::empty()), 1.0);
    }

    #[test]
    fn default_policy_scores_one() {
        let specs = WorkloadGenerator::new(2).workloads("w", 4, 0.0);
        let r = evaluate_policy(&specs, Policy::Fixed(PrefetcherConfig::DEFAULT)).unwrap();
        for w in &r.workloads {
            assert_eq!(w.policy_speedup(), 1.0);
        }
        assert_eq!(r.geomean_policy(), 1.0);
        assert!(r.geomean_oracle() > 1.0);
        assert_eq!(r.captured_gain(), 0.0);
    }

    #[test]
    fn oracle_policy_captures_all_gain() {
        let specs = WorkloadGenerator::new(3).workloads("w", 3, 0.0);
        let r = evaluate_policy(&specs, Policy::Oracle).unwrap();
        assert!((r.captured_gain() - 1.0).abs() < 1e-12);
        for w in &r.workloads {
            for t in [w.default, w.off, w.on] {
                assert!(w.oracle <= t + 1e-9);
            }
        }
    }

    #[test]
    fn table_and_csv_end_with_geomean() {
        let specs = WorkloadGenerator::new(4).workloads("w", 2, 0.0);
        let r = evaluate_policy(&specs, Policy::Oracle).unwrap();
        let text = r.to_string();
        assert!(text.lines().last().unwrap().starts_with("geomean"));
        assert_eq!(text.lines().count(), 4);
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.lines().last().unwrap().starts_with("geomean,"));
    }

    #[test]
    fn oracle_bounds_every_fixed_policy() {
        let specs = WorkloadGenerator::new(9).workloads("w", 30, 0.05);
        for c in PrefetcherConfig::all() {
            let r = evaluate_policy(&specs, Policy::Fixed(c)).unwrap();
            for w in &r.workloads {
                assert!(w.oracle <= w.policy, "{} under {c}", w.name);
            }
        }
    }
}
