//! Dynamic analysis: run a train at simulated stations inside a sandbox and
//! record resource use, network traffic and changes to its own contents.

mod assess;
mod executor;
mod proxy;
mod snapshot;

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Duration;

use pasta_core::model::TrainBundle;
use pasta_core::runtime::{RunRecord, RuntimeMetrics, StationRun};
use pasta_core::supply_chain::parse_containerfile;
use serde::Serialize;
use thiserror::Error;
use walkdir::WalkDir;

pub use assess::{assess_runtime, RuntimeLimits};
pub use executor::{
    ContainerExecutor, ProcessExecutor, RunOutcome, RunRequest, SandboxExecutor, OUTPUT_LIMIT,
};
pub use proxy::{ProxyMode, RecordingProxy, TrafficCounters};
pub use snapshot::{diff_contents, snapshot, FileState, Snapshot};

#[derive(Debug, Error)]
pub enum DastError {
    #[error("sandbox unavailable: {0}")]
    SandboxUnavailable(String),
    #[error("train has no entry point (no CMD/ENTRYPOINT and no configured command)")]
    EntrypointMissing,
    #[error("invalid execution plan: {0}")]
    InvalidPlan(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A data-holding site the train visits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimulatedStation {
    pub station_id: String,
    /// Fixture data, exposed read-only via `PASTA_DATA_DIR`.
    pub data_dir: PathBuf,
    pub env: BTreeMap<String, String>,
}

impl SimulatedStation {
    pub fn new(station_id: impl Into<String>, data_dir: impl Into<PathBuf>) -> Self {
        Self {
            station_id: station_id.into(),
            data_dir: data_dir.into(),
            env: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionPlan {
    pub route: Vec<SimulatedStation>,
    pub timeout: Duration,
    pub sample_interval: Duration,
    /// Overrides the build file's command when set.
    pub command: Option<Vec<String>>,
    pub proxy_mode: ProxyMode,
    /// Hosts whose traffic counts as expected data-source access.
    pub data_sources: Vec<String>,
    /// Where `run/<station>/...` artifacts go; none are written when unset.
    pub artifacts_dir: Option<PathBuf>,
}

impl ExecutionPlan {
    pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(300);
    pub const DEFAULT_SAMPLE_INTERVAL: Duration = Duration::from_millis(200);

    pub fn new(route: Vec<SimulatedStation>) -> Self {
        Self {
            route,
            timeout: Self::DEFAULT_TIMEOUT,
            sample_interval: Self::DEFAULT_SAMPLE_INTERVAL,
            command: None,
            proxy_mode: ProxyMode::Sink,
            data_sources: Vec::new(),
            artifacts_dir: None,
        }
    }

    pub fn validate(&self) -> Result<(), DastError> {
        if self.route.is_empty() {
            return Err(DastError::InvalidPlan("route is empty".into()));
        }
        if self.timeout.is_zero() {
            return Err(DastError::InvalidPlan("timeout must be positive".into()));
        }
        if self.sample_interval.is_zero() {
            return Err(DastError::InvalidPlan(
                "sample interval must be positive".into(),
            ));
        }
        let mut ids: Vec<&str> = self.route.iter().map(|s| s.station_id.as_str()).collect();
        ids.sort();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(DastError::InvalidPlan("station ids must be unique".into()));
        }
        for s in &self.route {
            if s.station_id.is_empty()
                || s.station_id.contains(['/', '\\'])
                || s.station_id.starts_with('.')
            {
                return Err(DastError::InvalidPlan(format!(
                    "bad station id `{}`",
                    s.station_id
                )));
            }
            if !s.data_dir.is_dir() {
                return Err(DastError::InvalidPlan(format!(
                    "data directory {} of station {} does not exist",
                    s.data_dir.display(),
                    s.station_id
                )));
            }
        }
        Ok(())
    }
}

/// The command the train runs: the plan's override, else the build file's
/// ENTRYPOINT/CMD.
pub fn entrypoint(bundle: &TrainBundle, plan: &ExecutionPlan) -> Result<Vec<String>, DastError> {
    if let Some(cmd) = plan.command.as_ref().filter(|c| !c.is_empty()) {
        return Ok(cmd.clone());
    }
    bundle
        .container_build_file
        .as_ref()
        .and_then(|f| parse_containerfile(&f.text()).ok())
        .and_then(|spec| spec.command())
        .ok_or(DastError::EntrypointMissing)
}

fn write_working_copy(bundle: &TrainBundle, root: &Path) -> io::Result<()> {
    for file in bundle.all_files() {
        let dest = root.join(&file.path);
        if let Some(parent) = dest.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(dest, &file.contents)?;
    }
    Ok(())
}

/// Copy station data and drop write permission on the copy.
fn stage_data(src: &Path, dest: &Path) -> io::Result<()> {
    use std::os::unix::fs::PermissionsExt;
    let mut dirs = Vec::new();
    for entry in WalkDir::new(src).follow_links(true) {
        let entry = entry.map_err(io::Error::other)?;
        let rel = entry.path().strip_prefix(src).expect("under src");
        let target = dest.join(rel);
        if entry.file_type().is_dir() {
            fs::create_dir_all(&target)?;
            dirs.push(target);
        } else {
            fs::copy(entry.path(), &target)?;
            fs::set_permissions(&target, fs::Permissions::from_mode(0o444))?;
        }
    }
    for dir in dirs.iter().rev() {
        fs::set_permissions(dir, fs::Permissions::from_mode(0o555))?;
    }
    Ok(())
}

fn unlock(dir: &Path) {
    use std::os::unix::fs::PermissionsExt;
    for entry in WalkDir::new(dir).into_iter().flatten() {
        if entry.file_type().is_dir() {
            let _ = fs::set_permissions(entry.path(), fs::Permissions::from_mode(0o755));
        }
    }
}

#[derive(Serialize)]
struct DiffArtifact<'a> {
    added: &'a [(String, u64)],
    modified: &'a [(String, i64)],
    removed: &'a [String],
}

fn write_artifacts(dir: &Path, run: &StationRun, outcome: &RunOutcome) -> io::Result<()> {
    let dir = dir.join("run").join(&run.station_id);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("stdout.log"), &outcome.stdout)?;
    fs::write(dir.join("stderr.log"), &outcome.stderr)?;
    let mut ndjson = String::new();
    for s in &outcome.samples {
        ndjson.push_str(&serde_json::to_string(s).map_err(io::Error::other)?);
        ndjson.push('\n');
    }
    fs::write(dir.join("metrics.ndjson"), ndjson)?;
    let diff = DiffArtifact {
        added: &run.diff.added,
        modified: &run.diff.modified,
        removed: &run.diff.removed,
    };
    let mut json = serde_json::to_string_pretty(&diff).map_err(io::Error::other)?;
    json.push('\n');
    fs::write(dir.join("diff.json"), json)
}

/// Run the train along the plan's route. The working copy carries over from
/// one station to the next; a timeout ends the route.
pub fn execute_train(
    bundle: &TrainBundle,
    plan: &ExecutionPlan,
    executor: &mut dyn SandboxExecutor,
) -> Result<RunRecord, DastError> {
    plan.validate()?;
    let command = entrypoint(bundle, plan)?;
    let work = tempfile::tempdir()?;
    write_working_copy(bundle, work.path())?;

    let mut record = RunRecord::default();
    for station in &plan.route {
        let data = tempfile::tempdir()?;
        stage_data(&station.data_dir, data.path())?;

        let proxy = RecordingProxy::start("127.0.0.1", plan.proxy_mode, plan.data_sources.clone())?;
        let mut env = station.env.clone();
        for key in ["HTTP_PROXY", "HTTPS_PROXY", "http_proxy", "https_proxy"] {
            env.insert(key.to_string(), proxy.url());
        }
        env.insert("NO_PROXY".into(), String::new());
        env.insert("PASTA_STATION_ID".into(), station.station_id.clone());
        env.insert(
            "PASTA_DATA_DIR".into(),
            data.path().to_string_lossy().to_string(),
        );

        let before = snapshot(work.path())?;
        let request = RunRequest {
            workdir: work.path(),
            command: &command,
            env,
            data_dir: data.path(),
            timeout: plan.timeout,
            sample_interval: plan.sample_interval,
            traffic: proxy.counters(),
            proxy_port: proxy.addr().port(),
        };
        let result = executor.run(&request);
        proxy.wait_idle(Duration::from_secs(2));
        let counters = proxy.counters();
        drop(proxy);
        unlock(data.path());
        let mut outcome = result?;
        let after = snapshot(work.path())?;

        let metrics = RuntimeMetrics {
            rx_bytes: counters.rx(),
            tx_bytes: counters.tx(),
            ..outcome.peak
        };
        outcome.peak = metrics;
        let run = StationRun {
            station_id: station.station_id.clone(),
            exit_code: outcome.exit_code,
            timed_out: outcome.timed_out,
            metrics,
            diff: diff_contents(&before, &after),
            allowed_bytes: counters.allowed(),
            stdout: String::from_utf8_lossy(&outcome.stdout).into_owned(),
            stderr: String::from_utf8_lossy(&outcome.stderr).into_owned(),
        };
        if let Some(dir) = &plan.artifacts_dir {
            write_artifacts(dir, &run, &outcome)?;
        }
        let stop = run.timed_out;
        record.stations.push(run);
        if stop {
            break;
        }
    }
    Ok(record)
}
