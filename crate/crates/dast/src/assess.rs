use pasta_core::model::{Finding, Severity, StageId};
use pasta_core::runtime::{RunRecord, StationRun};

/// Numeric ceilings for a station run. `None` means unlimited.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RuntimeLimits {
    pub cpu_percent: Option<f64>,
    pub memory_gb: Option<f64>,
    pub pids: Option<u64>,
    /// Bytes allowed beyond traffic with declared data sources.
    pub network_bytes: Option<u64>,
    pub growth_bytes: Option<u64>,
}

impl Default for RuntimeLimits {
    fn default() -> Self {
        Self {
            cpu_percent: None,
            memory_gb: Some(2.0),
            pids: Some(64),
            network_bytes: Some(0),
            growth_bytes: Some(10 * 1024 * 1024),
        }
    }
}

impl RuntimeLimits {
    pub fn unlimited() -> Self {
        Self {
            cpu_percent: None,
            memory_gb: None,
            pids: None,
            network_bytes: None,
            growth_bytes: None,
        }
    }
}

fn finding(run: &StationRun, rule: &str, severity: Severity, message: String) -> Finding {
    let mut f = Finding::new(StageId::Dast, rule, severity, message);
    f.file = Some(format!("station:{}", run.station_id));
    f
}

fn summary(run: &StationRun) -> String {
    let m = &run.metrics;
    let exit = match (run.timed_out, run.exit_code) {
        (true, _) => "timed out".to_string(),
        (false, Some(c)) => format!("exit {c}"),
        (false, None) => "killed".to_string(),
    };
    format!(
        "{exit}; cpu {:.1}% of one core, memory {:.3} GB, {} pids, rx {} B, tx {} B, {} changed file(s), {:.1} s",
        m.cpu_percent_peak,
        m.memory_gb_peak,
        m.pids_peak,
        m.rx_bytes,
        m.tx_bytes,
        run.diff.len(),
        m.wall_time
    )
}

/// Per-station findings against the ceilings plus one Info summary each.
pub fn assess_runtime(record: &RunRecord, limits: &RuntimeLimits) -> Vec<Finding> {
    let mut out = Vec::new();
    for run in &record.stations {
        let m = &run.metrics;
        let traffic = m.rx_bytes + m.tx_bytes;
        let unexpected = traffic.saturating_sub(run.allowed_bytes);
        if limits.network_bytes.is_some_and(|max| unexpected > max) {
            out.push(finding(
                run,
                "dast.network-traffic",
                Severity::Medium,
                format!(
                    "{unexpected} B of network traffic outside declared data sources (rx {} B, tx {} B)",
                    m.rx_bytes, m.tx_bytes
                ),
            ));
        }
        if let Some(max) = limits.cpu_percent.filter(|max| m.cpu_percent_peak > *max) {
            out.push(finding(
                run,
                "dast.resource-cpu",
                Severity::Low,
                format!("peak cpu {:.1}% exceeds {max:.1}%", m.cpu_percent_peak),
            ));
        }
        if let Some(max) = limits.memory_gb.filter(|max| m.memory_gb_peak > *max) {
            out.push(finding(
                run,
                "dast.resource-memory",
                Severity::Low,
                format!("peak memory {:.3} GB exceeds {max:.3} GB", m.memory_gb_peak),
            ));
        }
        if let Some(max) = limits.pids.filter(|max| m.pids_peak > *max) {
            out.push(finding(
                run,
                "dast.resource-pids",
                Severity::Low,
                format!("{} processes exceed the limit of {max}", m.pids_peak),
            ));
        }
        let growth = run.diff.growth_bytes();
        if let Some(max) = limits.growth_bytes.filter(|max| growth > *max) {
            out.push(finding(
                run,
                "dast.train-growth",
                Severity::Medium,
                format!("train grew by {growth} B, above {max} B"),
            ));
        }
        if run.timed_out {
            out.push(finding(
                run,
                "dast.timeout",
                Severity::Medium,
                "run exceeded the time limit and was killed; later stations skipped".to_string(),
            ));
        }
        out.push(finding(run, "dast.summary", Severity::Info, summary(run)));
    }
    out
}
