//! Pipeline configuration: a TOML file whose relative paths resolve against
//! the file's directory, overridden by command-line flags.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use pasta_core::model::StageId;
use pasta_dast::{ExecutionPlan, ProxyMode, RuntimeLimits};
use serde::Deserialize;

use crate::PipelineError;

pub const DEFAULT_SOURCE_GLOB: &str = "**/*.py";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Backend {
    #[default]
    Process,
    Container,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StationSpec {
    pub id: String,
    /// An empty directory is used when unset.
    pub data_dir: Option<PathBuf>,
    pub env: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DastSettings {
    pub route: Vec<StationSpec>,
    pub timeout: Duration,
    pub sample_interval: Duration,
    pub command: Option<Vec<String>>,
    pub proxy_mode: ProxyMode,
    pub backend: Backend,
    pub data_sources: Vec<String>,
    pub limits: RuntimeLimits,
}

impl Default for DastSettings {
    fn default() -> Self {
        Self {
            route: vec![StationSpec {
                id: "station-1".into(),
                data_dir: None,
                env: BTreeMap::new(),
            }],
            timeout: ExecutionPlan::DEFAULT_TIMEOUT,
            sample_interval: ExecutionPlan::DEFAULT_SAMPLE_INTERVAL,
            command: None,
            proxy_mode: ProxyMode::Sink,
            backend: Backend::Process,
            data_sources: Vec::new(),
            limits: RuntimeLimits::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Stages to run, in pipeline order. Decision and Report are always
    /// present.
    pub enabled_stages: Vec<StageId>,
    /// Extra SAST rules and secret patterns; built-ins are always loaded.
    pub ruleset_path: Option<PathBuf>,
    pub policy_path: Option<PathBuf>,
    /// Advisory database; the shipped one when unset.
    pub db_path: Option<PathBuf>,
    /// Base-image package catalogs; the shipped ones when empty.
    pub catalog_paths: Vec<PathBuf>,
    /// The built-in model when unset.
    pub decision_model_path: Option<PathBuf>,
    pub dast: DastSettings,
    pub output_dir: PathBuf,
    pub source_glob: String,
    pub image_critical_limit: u64,
    pub skip_dast_on_static_reject: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            enabled_stages: StageId::ALL.to_vec(),
            ruleset_path: None,
            policy_path: None,
            db_path: None,
            catalog_paths: Vec::new(),
            decision_model_path: None,
            dast: DastSettings::default(),
            output_dir: PathBuf::from("pasta-out"),
            source_glob: DEFAULT_SOURCE_GLOB.to_string(),
            image_critical_limit: 0,
            skip_dast_on_static_reject: false,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    stages: Option<Vec<StageId>>,
    #[serde(default)]
    skip: Vec<StageId>,
    ruleset: Option<PathBuf>,
    policy: Option<PathBuf>,
    db: Option<PathBuf>,
    #[serde(default)]
    catalogs: Vec<PathBuf>,
    decision_model: Option<PathBuf>,
    output_dir: Option<PathBuf>,
    source_glob: Option<String>,
    image_critical_limit: Option<u64>,
    skip_dast_on_static_reject: Option<bool>,
    dast: Option<FileDast>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileDast {
    command: Option<Vec<String>>,
    timeout_secs: Option<f64>,
    sample_interval_ms: Option<u64>,
    proxy: Option<String>,
    backend: Option<String>,
    #[serde(default)]
    data_sources: Vec<String>,
    #[serde(default)]
    stations: Vec<FileStation>,
    limits: Option<FileLimits>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileStation {
    id: String,
    data_dir: Option<PathBuf>,
    #[serde(default)]
    env: BTreeMap<String, String>,
}

/// Omitted ceilings keep their defaults; a negative value removes one.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileLimits {
    cpu_percent: Option<f64>,
    memory_gb: Option<f64>,
    pids: Option<i64>,
    network_bytes: Option<i64>,
    growth_bytes: Option<i64>,
}

fn ceiling_f(value: Option<f64>, default: Option<f64>) -> Option<f64> {
    match value {
        None => default,
        Some(v) if v < 0.0 => None,
        Some(v) => Some(v),
    }
}

fn ceiling_u(value: Option<i64>, default: Option<u64>) -> Option<u64> {
    match value {
        None => default,
        Some(v) if v < 0 => None,
        Some(v) => Some(v as u64),
    }
}

fn invalid(msg: impl Into<String>) -> PipelineError {
    PipelineError::ConfigInvalid(msg.into())
}

impl PipelineConfig {
    pub fn from_file(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path)
            .map_err(|e| invalid(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    /// Parse config text; relative paths are joined onto `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, PipelineError> {
        let file: FileConfig = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        let abs = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
        let mut cfg = PipelineConfig::default();
        if let Some(stages) = file.stages {
            cfg.enabled_stages = stages;
        }
        cfg.skip(&file.skip);
        cfg.ruleset_path = file.ruleset.map(abs);
        cfg.policy_path = file.policy.map(abs);
        cfg.db_path = file.db.map(abs);
        cfg.catalog_paths = file.catalogs.into_iter().map(abs).collect();
        cfg.decision_model_path = file.decision_model.map(abs);
        if let Some(out) = file.output_dir {
            cfg.output_dir = abs(out);
        }
        if let Some(glob) = file.source_glob {
            cfg.source_glob = glob;
        }
        if let Some(limit) = file.image_critical_limit {
            cfg.image_critical_limit = limit;
        }
        if let Some(flag) = file.skip_dast_on_static_reject {
            cfg.skip_dast_on_static_reject = flag;
        }
        if let Some(d) = file.dast {
            let dast = &mut cfg.dast;
            dast.command = d.command;
            if let Some(t) = d.timeout_secs {
                if !(t > 0.0 && t.is_finite()) {
                    return Err(invalid("dast.timeout_secs must be positive"));
                }
                dast.timeout = Duration::from_secs_f64(t);
            }
            if let Some(ms) = d.sample_interval_ms {
                if ms == 0 {
                    return Err(invalid("dast.sample_interval_ms must be positive"));
                }
                dast.sample_interval = Duration::from_millis(ms);
            }
            dast.proxy_mode = match d.proxy.as_deref() {
                None | Some("sink") => ProxyMode::Sink,
                Some("forward") => ProxyMode::Forward,
                Some(other) => return Err(invalid(format!("unknown dast.proxy `{other}`"))),
            };
            dast.backend = match d.backend.as_deref() {
                None | Some("process") => Backend::Process,
                Some("container") => Backend::Container,
                Some(other) => return Err(invalid(format!("unknown dast.backend `{other}`"))),
            };
            dast.data_sources = d.data_sources;
            if !d.stations.is_empty() {
                dast.route = d
                    .stations
                    .into_iter()
                    .map(|s| StationSpec {
                        id: s.id,
                        data_dir: s.data_dir.map(abs),
                        env: s.env,
                    })
                    .collect();
            }
            if let Some(l) = d.limits {
                let def = RuntimeLimits::default();
                dast.limits = RuntimeLimits {
                    cpu_percent: ceiling_f(l.cpu_percent, def.cpu_percent),
                    memory_gb: ceiling_f(l.memory_gb, def.memory_gb),
                    pids: ceiling_u(l.pids, def.pids),
                    network_bytes: ceiling_u(l.network_bytes, def.network_bytes),
                    growth_bytes: ceiling_u(l.growth_bytes, def.growth_bytes),
                };
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Drop stages from the enabled set.
    pub fn skip(&mut self, stages: &[StageId]) {
        self.enabled_stages.retain(|s| !stages.contains(s));
    }

    pub fn is_enabled(&self, stage: StageId) -> bool {
        self.enabled_stages.contains(&stage)
    }

    /// Enabled stages that produce findings.
    pub fn finding_stages(&self) -> Vec<StageId> {
        self.enabled_stages
            .iter()
            .copied()
            .filter(|s| s.produces_findings())
            .collect()
    }

    /// Normalizes stage order and checks the stage set.
    pub fn validate(&mut self) -> Result<(), PipelineError> {
        self.enabled_stages.sort();
        self.enabled_stages.dedup();
        for required in [StageId::Decision, StageId::Report] {
            if !self.is_enabled(required) {
                return Err(invalid(format!("stage {required} cannot be disabled")));
            }
        }
        if self.is_enabled(StageId::Sast) && !self.is_enabled(StageId::CodeGraph) {
            return Err(invalid("sast needs the code_graph stage"));
        }
        if self.is_enabled(StageId::Dast) {
            let mut ids: Vec<&str> = self.dast.route.iter().map(|s| s.id.as_str()).collect();
            if ids.is_empty() {
                return Err(invalid("dast route is empty"));
            }
            ids.sort();
            if ids.windows(2).any(|w| w[0] == w[1]) {
                return Err(invalid("dast station ids must be unique"));
            }
        }
        globset::Glob::new(&self.source_glob).map_err(|e| invalid(format!("source_glob: {e}")))?;
        Ok(())
    }
}
