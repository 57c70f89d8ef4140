//! Orchestration of the audit stages.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::thread;

use chrono::{SecondsFormat, Utc};
use pasta_core::code_graph::{graph_from_trees, parse_bundle, serialize_graph, SyntaxNode};
use pasta_core::decision::{decide, DecisionModel, StageResult};
use pasta_core::model::{Finding, Severity, StageId, TrainBundle};
use pasta_core::policy::{check_compliance, check_disallow, PolicyConfig, PolicySpec};
use pasta_core::report::{
    build_report, emit_json, render_document, snapshot_id, AuditReport, ReportContext,
};
use pasta_core::runtime::RunRecord;
use pasta_core::static_analysis::{detect_secrets, run_sast, Ruleset};
use pasta_core::supply_chain::{
    parse_containerfile, parse_requirements, scan_dependencies, scan_image, PackageCatalog,
};
use pasta_core::vuln_db::AdvisoryDb;
use pasta_dast::{
    execute_train, ContainerExecutor, DastError, ExecutionPlan, ProcessExecutor, SandboxExecutor,
    SimulatedStation,
};

use crate::config::{Backend, PipelineConfig};
use crate::{PipelineError, EXIT_ACCEPT, EXIT_REJECT};

pub const SHIPPED_DB: &str = include_str!("../../../data/advisories.ndjson");
pub const SHIPPED_CATALOGS: [(&str, &str); 2] = [
    (
        "python-3.10.0a7-buster.toml",
        include_str!("../../../data/catalogs/python-3.10.0a7-buster.toml"),
    ),
    (
        "python-3.12-slim.toml",
        include_str!("../../../data/catalogs/python-3.12-slim.toml"),
    ),
];

/// Everything loaded from disk before any stage runs.
pub struct Resources {
    pub ruleset: Ruleset,
    pub policy: PolicyConfig,
    pub db: AdvisoryDb,
    pub db_snapshot_id: String,
    pub catalogs: Vec<PackageCatalog>,
    pub model: DecisionModel,
}

#[derive(Debug)]
pub struct AuditOutcome {
    pub report: AuditReport,
    pub exit_code: i32,
    pub json_path: PathBuf,
    pub markdown_path: PathBuf,
    pub graph_path: Option<PathBuf>,
}

fn read(path: &Path) -> Result<String, PipelineError> {
    fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn resource_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Resource(format!("{}: {e}", path.display()))
}

/// Load rules, policy, database, catalogs and decision model, and check the
/// model against the enabled stages.
pub fn load_resources(config: &PipelineConfig) -> Result<Resources, PipelineError> {
    let mut ruleset = Ruleset::builtin();
    if let Some(path) = &config.ruleset_path {
        ruleset.extend(Ruleset::from_toml(&read(path)?).map_err(|e| resource_err(path, e))?);
    }

    let spec = match &config.policy_path {
        Some(path) => {
            toml::from_str::<PolicySpec>(&read(path)?).map_err(|e| resource_err(path, e))?
        }
        None => PolicySpec::default(),
    };
    let policy =
        PolicyConfig::from_spec(&spec).map_err(|e| PipelineError::ConfigInvalid(e.to_string()))?;

    let db_text = match &config.db_path {
        Some(path) => fs::read(path)
            .map_err(|e| PipelineError::Database(format!("{}: {e}", path.display())))
            .and_then(|b| {
                String::from_utf8(b)
                    .map_err(|_| PipelineError::Database(format!("{}: not UTF-8", path.display())))
            })?,
        None => SHIPPED_DB.to_string(),
    };
    let db =
        AdvisoryDb::from_ndjson(&db_text).map_err(|e| PipelineError::Database(e.to_string()))?;
    let db_snapshot_id = snapshot_id(db_text.as_bytes());

    let catalogs = if config.catalog_paths.is_empty() {
        SHIPPED_CATALOGS
            .iter()
            .map(|(name, text)| {
                PackageCatalog::from_toml(text).map_err(|e| resource_err(Path::new(name), e))
            })
            .collect::<Result<Vec<_>, _>>()?
    } else {
        config
            .catalog_paths
            .iter()
            .map(|p| PackageCatalog::from_toml(&read(p)?).map_err(|e| resource_err(p, e)))
            .collect::<Result<Vec<_>, _>>()?
    };

    let model = match &config.decision_model_path {
        Some(path) => DecisionModel::from_toml(&read(path)?).map_err(|e| resource_err(path, e))?,
        None => DecisionModel::default_for(&config.finding_stages(), config.image_critical_limit),
    };
    model
        .validate()
        .map_err(|e| PipelineError::ConfigInvalid(e.to_string()))?;
    let enabled = config.finding_stages();
    if let Some(stage) = model.stages().into_iter().find(|s| !enabled.contains(s)) {
        return Err(PipelineError::ConfigInvalid(format!(
            "decision model checks stage {stage}, which is not enabled"
        )));
    }

    Ok(Resources {
        ruleset,
        policy,
        db,
        db_snapshot_id,
        catalogs,
        model,
    })
}

fn stage_error(stage: StageId, message: impl Into<String>) -> Finding {
    Finding::new(
        stage,
        "pipeline.stage-error",
        Severity::Critical,
        format!("stage failed: {}", message.into()),
    )
}

fn panic_message(payload: &(dyn std::any::Any + Send)) -> String {
    payload
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| payload.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "panic".to_string())
}

/// Run a stage body; an error or panic becomes a Critical finding of that
/// stage so the remaining stages still run.
fn guarded(stage: StageId, body: impl FnOnce() -> Result<Vec<Finding>, String>) -> StageResult {
    let findings = match panic::catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(findings)) => findings,
        Ok(Err(message)) => vec![stage_error(stage, message)],
        Err(payload) => vec![stage_error(stage, panic_message(payload.as_ref()))],
    };
    StageResult::new(stage, findings)
}

fn code_graph_findings(
    trees: &[(String, SyntaxNode)],
    failed: &[(String, String)],
) -> Vec<Finding> {
    let mut out = Vec::new();
    for (path, message) in failed {
        out.push(
            Finding::new(
                StageId::CodeGraph,
                "graph.parse-failed",
                Severity::Info,
                message.clone(),
            )
            .in_file(path),
        );
    }
    for (path, tree) in trees {
        if let Some(node) = tree.preorder().find(|n| n.is_error()) {
            out.push(
                Finding::new(
                    StageId::CodeGraph,
                    "graph.syntax-error",
                    Severity::Info,
                    "source has syntax errors; the graph covers the recoverable part",
                )
                .in_file(path)
                .at(node.span),
            );
        }
    }
    out
}

fn dependency_stage(bundle: &TrainBundle, db: &AdvisoryDb) -> Result<Vec<Finding>, String> {
    let Some(manifest) = &bundle.dependency_manifest else {
        return Ok(Vec::new());
    };
    let parsed =
        parse_requirements(&manifest.text()).map_err(|e| format!("{}: {e}", manifest.path))?;
    Ok(scan_dependencies(&parsed, Some(&manifest.path), db))
}

fn image_stage(bundle: &TrainBundle, res: &Resources) -> Result<Vec<Finding>, String> {
    let Some(build) = &bundle.container_build_file else {
        return Ok(vec![Finding::new(
            StageId::ImageAnalysis,
            "image.no-buildfile",
            Severity::Info,
            "train has no Dockerfile or Containerfile; image not analysed",
        )]);
    };
    let spec = parse_containerfile(&build.text()).map_err(|e| format!("{}: {e}", build.path))?;
    Ok(scan_image(&spec, Some(&build.path), &res.catalogs, &res.db))
}

fn dast_info(rule: &str, message: &str) -> Finding {
    Finding::new(StageId::Dast, rule, Severity::Info, message)
}

fn run_dast(
    bundle: &TrainBundle,
    config: &PipelineConfig,
) -> Result<(Vec<Finding>, Option<RunRecord>), String> {
    let settings = &config.dast;
    let mut empty_dirs = Vec::new();
    let mut route = Vec::new();
    for spec in &settings.route {
        let data_dir = match &spec.data_dir {
            Some(dir) => dir.clone(),
            None => {
                let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
                let path = dir.path().to_path_buf();
                empty_dirs.push(dir);
                path
            }
        };
        let mut station = SimulatedStation::new(spec.id.clone(), data_dir);
        station.env = spec.env.clone();
        route.push(station);
    }
    let mut plan = ExecutionPlan::new(route);
    plan.timeout = settings.timeout;
    plan.sample_interval = settings.sample_interval;
    plan.command = settings.command.clone();
    plan.proxy_mode = settings.proxy_mode;
    plan.data_sources = settings.data_sources.clone();
    plan.artifacts_dir = Some(config.output_dir.clone());

    let mut executor: Box<dyn SandboxExecutor> = match settings.backend {
        Backend::Process => Box::new(ProcessExecutor::new()),
        Backend::Container => {
            let build = bundle
                .container_build_file
                .as_ref()
                .map(|f| f.path.as_str())
                .unwrap_or("Dockerfile");
            Box::new(ContainerExecutor::detect(build).map_err(|e| e.to_string())?)
        }
    };
    match execute_train(bundle, &plan, executor.as_mut()) {
        Ok(record) => Ok((
            pasta_dast::assess_runtime(&record, &settings.limits),
            Some(record),
        )),
        Err(DastError::EntrypointMissing) => Ok((
            vec![dast_info(
                "dast.no-entrypoint",
                "train has no CMD/ENTRYPOINT and no command is configured; not executed",
            )],
            None,
        )),
        Err(e) => Err(e.to_string()),
    }
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true)
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    fs::write(path, bytes).map_err(|source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Run every enabled stage over `bundle`, decide, and write the report (and
/// code graph) to the output directory.
pub fn run_pipeline(
    bundle: &TrainBundle,
    config: &PipelineConfig,
) -> Result<AuditOutcome, PipelineError> {
    let mut config = config.clone();
    config.validate()?;
    let started = now();
    let res = load_resources(&config)?;
    let enabled = |s: StageId| config.is_enabled(s);

    let mut results: BTreeMap<StageId, StageResult> = BTreeMap::new();
    let (trees, failed) = parse_bundle(bundle);
    let failed: Vec<(String, String)> = failed
        .into_iter()
        .map(|(p, e)| (p, e.to_string()))
        .collect();
    let mut graph_text = None;
    if enabled(StageId::CodeGraph) {
        let result = guarded(StageId::CodeGraph, || {
            graph_text = Some(serialize_graph(&graph_from_trees(&trees, &bundle.metadata)));
            Ok(code_graph_findings(&trees, &failed))
        });
        results.insert(StageId::CodeGraph, result);
    }

    type Job<'a> = Box<dyn FnOnce() -> Result<Vec<Finding>, String> + Send + 'a>;
    let mut jobs: Vec<(StageId, Job)> = Vec::new();
    let (res_ref, trees_ref) = (&res, &trees);
    if enabled(StageId::Sast) {
        jobs.push((
            StageId::Sast,
            Box::new(move || Ok(run_sast(trees_ref, &res_ref.ruleset.sast))),
        ));
    }
    if enabled(StageId::DependencyScan) {
        jobs.push((
            StageId::DependencyScan,
            Box::new(move || dependency_stage(bundle, &res_ref.db)),
        ));
    }
    if enabled(StageId::SecretDetection) {
        jobs.push((
            StageId::SecretDetection,
            Box::new(move || Ok(detect_secrets(bundle, &res_ref.ruleset.secrets))),
        ));
    }
    if enabled(StageId::Disallow) {
        jobs.push((
            StageId::Disallow,
            Box::new(move || Ok(check_disallow(bundle, &res_ref.policy))),
        ));
    }
    if enabled(StageId::Compliance) {
        jobs.push((
            StageId::Compliance,
            Box::new(move || check_compliance(bundle, &res_ref.policy).map_err(|e| e.to_string())),
        ));
    }
    if enabled(StageId::ImageAnalysis) {
        jobs.push((
            StageId::ImageAnalysis,
            Box::new(move || image_stage(bundle, res_ref)),
        ));
    }
    let static_results: Vec<StageResult> = thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .into_iter()
            .map(|(stage, job)| scope.spawn(move || guarded(stage, job)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("stage bodies are guarded"))
            .collect()
    });
    for r in static_results {
        results.insert(r.stage, r);
    }

    let mut runtime = None;
    if enabled(StageId::Dast) {
        let mut preliminary = results.clone();
        preliminary.insert(StageId::Dast, StageResult::new(StageId::Dast, Vec::new()));
        let rejected = !decide(&res.model, &preliminary)?.accepted;
        let result = if config.skip_dast_on_static_reject && rejected {
            StageResult::new(
                StageId::Dast,
                vec![dast_info(
                    "dast.skipped",
                    "static stages already reject the train; not executed",
                )],
            )
        } else {
            guarded(StageId::Dast, || {
                let (findings, record) = run_dast(bundle, &config)?;
                runtime = record;
                Ok(findings)
            })
        };
        results.insert(StageId::Dast, result);
    }

    let verdict = decide(&res.model, &results)?;
    let context = ReportContext {
        started,
        finished: now(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        db_snapshot_id: res.db_snapshot_id.clone(),
    };
    let report = build_report(results, verdict, runtime, bundle.metadata.clone(), context)?;

    let out = &config.output_dir;
    fs::create_dir_all(out).map_err(|source| PipelineError::Io {
        path: out.display().to_string(),
        source,
    })?;
    let stem = report.file_stem();
    let json_path = out.join(format!("{stem}.json"));
    let markdown_path = out.join(format!("{stem}.md"));
    write(&json_path, &emit_json(&report))?;
    write(&markdown_path, render_document(&report).as_bytes())?;
    let graph_path = match graph_text {
        Some(text) => {
            let path = out.join(format!("{stem}-graph.ttl"));
            write(&path, text.as_bytes())?;
            Some(path)
        }
        None => None,
    };

    let exit_code = if report.verdict.accepted {
        EXIT_ACCEPT
    } else {
        EXIT_REJECT
    };
    Ok(AuditOutcome {
        report,
        exit_code,
        json_path,
        markdown_path,
        graph_path,
    })
}
