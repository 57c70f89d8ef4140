use std::fs;
use std::io::IsTerminal;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use pasta_cli::{
    audit, load_bundle, LoadOptions, MetadataOverrides, PipelineConfig, PipelineError, EXIT_ACCEPT,
    EXIT_ERROR, EXIT_REJECT,
};
use pasta_core::code_graph::{graph_from_trees, parse_bundle, query_nodes, serialize_graph};
use pasta_core::model::{Severity, StageId};
use pasta_core::vuln_db::validate_ndjson;
use pasta_dast::{
    assess_runtime, execute_train, ExecutionPlan, ProcessExecutor, RuntimeLimits, SimulatedStation,
};

#[derive(Parser)]
#[command(
    name = "pasta",
    version,
    about = "Security audit pipeline for analysis trains"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full audit and write the report.
    Audit {
        /// Train directory or .tar/.tar.gz archive.
        path: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Advisory database (NDJSON); the shipped one by default.
        #[arg(long)]
        db: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Stage to leave out; may be repeated.
        #[arg(long = "skip", value_name = "STAGE")]
        skip: Vec<StageId>,
        /// Glob selecting source files.
        #[arg(long)]
        source_glob: Option<String>,
        #[arg(long)]
        name: Option<String>,
        #[arg(long = "train-version")]
        train_version: Option<String>,
        #[arg(long)]
        creator: Option<String>,
        /// Do not execute the train when static stages already reject it.
        #[arg(long)]
        skip_dast_on_static_reject: bool,
    },
    /// Code graph utilities.
    Graph {
        #[command(subcommand)]
        command: GraphCommand,
    },
    /// Advisory database utilities.
    Db {
        #[command(subcommand)]
        command: DbCommand,
    },
    /// Run only the dynamic analysis harness.
    Dast {
        path: PathBuf,
        /// Station data directory, one per station, in route order.
        #[arg(long = "route", value_name = "DIR", required = true)]
        route: Vec<PathBuf>,
        #[arg(long, default_value_t = 300.0)]
        timeout: f64,
        /// Directory for run artifacts.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum GraphCommand {
    /// Print the code graph as Turtle.
    Export {
        path: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List node IRIs of a syntax kind.
    Query {
        path: PathBuf,
        #[arg(long)]
        kind: String,
    },
}

#[derive(Subcommand)]
enum DbCommand {
    /// Check an advisory database file.
    Validate { file: PathBuf },
}

struct Style {
    color: bool,
}

impl Style {
    fn detect() -> Self {
        Self {
            color: std::env::var_os("PASTA_NO_COLOR").is_none() && std::io::stdout().is_terminal(),
        }
    }

    fn paint(&self, code: &str, text: &str) -> String {
        if self.color {
            format!("\x1b[{code}m{text}\x1b[0m")
        } else {
            text.to_string()
        }
    }
}

fn fail(message: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {message}");
    ExitCode::from(EXIT_ERROR as u8)
}

#[allow(clippy::too_many_arguments)]
fn run_audit(
    path: &Path,
    config: Option<PathBuf>,
    db: Option<PathBuf>,
    out: Option<PathBuf>,
    skip: Vec<StageId>,
    source_glob: Option<String>,
    metadata: MetadataOverrides,
    skip_dast_on_static_reject: bool,
) -> Result<i32, PipelineError> {
    let mut cfg = match &config {
        Some(p) => PipelineConfig::from_file(p)?,
        None => PipelineConfig::default(),
    };
    if db.is_some() {
        cfg.db_path = db;
    }
    if let Some(out) = out {
        cfg.output_dir = out;
    }
    if let Some(glob) = source_glob {
        cfg.source_glob = glob;
    }
    cfg.skip_dast_on_static_reject |= skip_dast_on_static_reject;
    cfg.skip(&skip);
    cfg.validate()?;

    let outcome = audit(path, &cfg, metadata)?;
    let style = Style::detect();
    let r = &outcome.report;
    for (stage, result) in &r.stage_results {
        let (l, m, h, c) = result.counts.as_lmhc();
        println!(
            "{:<22} L {l:>3}  M {m:>3}  H {h:>3}  C {c:>3}",
            stage.title()
        );
    }
    let verdict = if r.verdict.accepted {
        style.paint("32;1", "ACCEPTED")
    } else {
        style.paint("31;1", "REJECTED")
    };
    println!("verdict: {verdict}");
    for f in r.all_findings().filter(|f| f.severity >= Severity::Low) {
        let loc = f.file.as_deref().unwrap_or("-");
        println!("  [{}] {} {loc}: {}", f.severity, f.rule_id, f.message);
    }
    println!("report: {}", outcome.json_path.display());
    println!("report: {}", outcome.markdown_path.display());
    Ok(outcome.exit_code)
}

fn graph_text(path: &Path) -> Result<(String, pasta_core::code_graph::CodeGraph), String> {
    let bundle = load_bundle(path, &LoadOptions::default()).map_err(|e| e.to_string())?;
    let (trees, failed) = parse_bundle(&bundle);
    for (file, e) in failed {
        eprintln!("warning: {file}: {e}");
    }
    let graph = graph_from_trees(&trees, &bundle.metadata);
    Ok((serialize_graph(&graph), graph))
}

fn run_dast(
    path: &Path,
    route: &[PathBuf],
    timeout: f64,
    out: Option<PathBuf>,
) -> Result<i32, String> {
    if !(timeout > 0.0 && timeout.is_finite()) {
        return Err("timeout must be positive".into());
    }
    let bundle = load_bundle(path, &LoadOptions::default()).map_err(|e| e.to_string())?;
    let stations = route
        .iter()
        .enumerate()
        .map(|(i, dir)| SimulatedStation::new(format!("station-{}", i + 1), dir))
        .collect();
    let mut plan = ExecutionPlan::new(stations);
    plan.timeout = Duration::from_secs_f64(timeout);
    plan.artifacts_dir = out;
    let record =
        execute_train(&bundle, &plan, &mut ProcessExecutor::new()).map_err(|e| e.to_string())?;
    let findings = assess_runtime(&record, &RuntimeLimits::default());
    for f in &findings {
        println!(
            "[{}] {} {}: {}",
            f.severity,
            f.rule_id,
            f.file.as_deref().unwrap_or("-"),
            f.message
        );
    }
    let flagged = findings.iter().any(|f| f.severity >= Severity::Low);
    Ok(if flagged { EXIT_REJECT } else { EXIT_ACCEPT })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Audit {
            path,
            config,
            db,
            out,
            skip,
            source_glob,
            name,
            train_version,
            creator,
            skip_dast_on_static_reject,
        } => {
            let metadata = MetadataOverrides {
                name,
                version: train_version,
                creator,
            };
            match run_audit(
                &path,
                config,
                db,
                out,
                skip,
                source_glob,
                metadata,
                skip_dast_on_static_reject,
            ) {
                Ok(code) => ExitCode::from(code as u8),
                Err(e) => fail(e),
            }
        }
        Command::Graph {
            command: GraphCommand::Export { path, out },
        } => match graph_text(&path) {
            Ok((text, _)) => match out {
                Some(file) => match fs::write(&file, text) {
                    Ok(()) => ExitCode::SUCCESS,
                    Err(e) => fail(format!("{}: {e}", file.display())),
                },
                None => {
                    print!("{text}");
                    ExitCode::SUCCESS
                }
            },
            Err(e) => fail(e),
        },
        Command::Graph {
            command: GraphCommand::Query { path, kind },
        } => match graph_text(&path) {
            Ok((_, graph)) => {
                for iri in query_nodes(&graph, &kind) {
                    println!("{iri}");
                }
                ExitCode::SUCCESS
            }
            Err(e) => fail(e),
        },
        Command::Db {
            command: DbCommand::Validate { file },
        } => match fs::read_to_string(&file) {
            Ok(text) => {
                let problems = validate_ndjson(&text);
                for p in &problems {
                    println!("{p}");
                }
                if problems.is_empty() {
                    println!("{}: ok", file.display());
                    ExitCode::SUCCESS
                } else {
                    ExitCode::from(EXIT_REJECT as u8)
                }
            }
            Err(e) => fail(format!("{}: {e}", file.display())),
        },
        Command::Dast {
            path,
            route,
            timeout,
            out,
        } => match run_dast(&path, &route, timeout, out) {
            Ok(code) => ExitCode::from(code as u8),
            Err(e) => fail(e),
        },
    }
}
