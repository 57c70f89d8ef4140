//! Records produced by dynamic execution of a train at simulated stations.

use serde::{Deserialize, Serialize};

/// Peak resource use and proxied traffic of one station run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RuntimeMetrics {
    /// Percent of one core, summed over the process tree.
    pub cpu_percent_peak: f64,
    pub memory_gb_peak: f64,
    pub pids_peak: u64,
    pub rx_bytes: u64,
    pub tx_bytes: u64,
    /// Seconds.
    pub wall_time: f64,
}

impl RuntimeMetrics {
    /// Fold one sample into the peaks. Traffic counters are cumulative, so
    /// they take the maximum as well.
    pub fn absorb(&mut self, sample: &RuntimeMetrics) {
        self.cpu_percent_peak = self.cpu_percent_peak.max(sample.cpu_percent_peak);
        self.memory_gb_peak = self.memory_gb_peak.max(sample.memory_gb_peak);
        self.pids_peak = self.pids_peak.max(sample.pids_peak);
        self.rx_bytes = self.rx_bytes.max(sample.rx_bytes);
        self.tx_bytes = self.tx_bytes.max(sample.tx_bytes);
        self.wall_time = self.wall_time.max(sample.wall_time);
    }
}

/// Files changed in the train's working copy by one station run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContentDiff {
    /// (path, size in bytes)
    pub added: Vec<(String, u64)>,
    /// (path, size delta in bytes)
    pub modified: Vec<(String, i64)>,
    pub removed: Vec<String>,
}

impl ContentDiff {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.modified.is_empty() && self.removed.is_empty()
    }

    /// Bytes added by new files plus positive growth of modified ones.
    pub fn growth_bytes(&self) -> u64 {
        let added: u64 = self.added.iter().map(|(_, s)| s).sum();
        let grown: u64 = self.modified.iter().map(|(_, d)| (*d).max(0) as u64).sum();
        added + grown
    }

    pub fn len(&self) -> usize {
        self.added.len() + self.modified.len() + self.removed.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationRun {
    pub station_id: String,
    /// `None` when the process was killed by a signal or timed out.
    pub exit_code: Option<i32>,
    pub timed_out: bool,
    pub metrics: RuntimeMetrics,
    pub diff: ContentDiff,
    /// Bytes exchanged with declared data-source hosts; part of `rx/tx`.
    #[serde(default)]
    pub allowed_bytes: u64,
    #[serde(default)]
    pub stdout: String,
    #[serde(default)]
    pub stderr: String,
}

/// One entry per visited station, in route order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub stations: Vec<StationRun>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn growth_counts_only_positive_deltas() {
        let d = ContentDiff {
            added: vec![("a".into(), 10)],
            modified: vec![("b".into(), 5), ("c".into(), -50)],
            removed: vec!["d".into()],
        };
        assert_eq!(d.growth_bytes(), 15);
        assert_eq!(d.len(), 4);
        assert!(ContentDiff::default().is_empty());
    }

    fn metrics() -> impl Strategy<Value = RuntimeMetrics> {
        (
            0.0f64..400.0,
            0.0f64..8.0,
            0u64..100,
            0u64..1 << 20,
            0u64..1 << 20,
            0.0f64..60.0,
        )
            .prop_map(|(c, m, p, rx, tx, w)| RuntimeMetrics {
                cpu_percent_peak: c,
                memory_gb_peak: m,
                pids_peak: p,
                rx_bytes: rx,
                tx_bytes: tx,
                wall_time: w,
            })
    }

    proptest! {
        #[test]
        fn peaks_never_decrease(samples in prop::collection::vec(metrics(), 1..20)) {
            let mut peak = RuntimeMetrics::default();
            for s in &samples {
                let before = peak;
                peak.absorb(s);
                prop_assert!(peak.cpu_percent_peak >= before.cpu_percent_peak);
                prop_assert!(peak.memory_gb_peak >= before.memory_gb_peak);
                prop_assert!(peak.pids_peak >= before.pids_peak);
                prop_assert!(peak.rx_bytes >= before.rx_bytes && peak.tx_bytes >= before.tx_bytes);
                prop_assert!(peak.cpu_percent_peak >= s.cpu_percent_peak);
            }
        }
    }
}
