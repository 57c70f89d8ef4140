//! Sandbox backends that run a train's entry point and sample its resource use.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::Read;
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use pasta_core::runtime::RuntimeMetrics;

use crate::proxy::TrafficCounters;
use crate::DastError;

/// Captured output is cut to this many bytes.
pub const OUTPUT_LIMIT: usize = 64 * 1024;

/// Everything a backend needs for one station run.
pub struct RunRequest<'a> {
    /// The train's working copy; persists across stations.
    pub workdir: &'a Path,
    pub command: &'a [String],
    /// Variables injected into the train's environment, proxy settings
    /// included.
    pub env: BTreeMap<String, String>,
    /// Read-only station data.
    pub data_dir: &'a Path,
    pub timeout: Duration,
    pub sample_interval: Duration,
    pub traffic: Arc<TrafficCounters>,
    /// Proxy port on the host, for backends that rewrite the proxy address.
    pub proxy_port: u16,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOutcome {
    pub exit_code: Option<i32>,
    pub timed_out: bool,
    pub peak: RuntimeMetrics,
    /// One entry per sample, in order.
    pub samples: Vec<RuntimeMetrics>,
    pub stdout: Vec<u8>,
    pub stderr: Vec<u8>,
}

pub trait SandboxExecutor {
    fn name(&self) -> &str;
    fn run(&mut self, request: &RunRequest<'_>) -> Result<RunOutcome, DastError>;
}

/// Runs the entry point as a child process group in the working copy, with
/// sampling from `/proc`. Egress outside the proxy is not blocked.
#[derive(Debug, Default, Clone)]
pub struct ProcessExecutor {
    /// Host variables passed through besides `PATH`.
    pub inherit_env: Vec<String>,
}

impl ProcessExecutor {
    pub fn new() -> Self {
        Self {
            inherit_env: vec!["LANG".into(), "LC_ALL".into(), "TZ".into()],
        }
    }
}

struct ProcStat {
    pgrp: i32,
    ticks: u64,
}

fn read_stat(pid: &str) -> Option<ProcStat> {
    let text = fs::read_to_string(format!("/proc/{pid}/stat")).ok()?;
    let rest = &text[text.rfind(')')? + 2..];
    let f: Vec<&str> = rest.split_whitespace().collect();
    Some(ProcStat {
        pgrp: f.get(2)?.parse().ok()?,
        ticks: f.get(11)?.parse::<u64>().ok()? + f.get(12)?.parse::<u64>().ok()?,
    })
}

fn read_rss_bytes(pid: &str, page: u64) -> u64 {
    fs::read_to_string(format!("/proc/{pid}/statm"))
        .ok()
        .and_then(|t| t.split_whitespace().nth(1)?.parse::<u64>().ok())
        .map_or(0, |pages| pages * page)
}

/// Process-group usage at one instant: (cpu ticks, rss bytes, process count).
fn group_usage(pgid: i32, page: u64) -> (u64, u64, u64) {
    let Ok(dir) = fs::read_dir("/proc") else {
        return (0, 0, 0);
    };
    let mut ticks = 0;
    let mut rss = 0;
    let mut pids = 0;
    for entry in dir.flatten() {
        let name = entry.file_name();
        let Some(pid) = name
            .to_str()
            .filter(|n| n.bytes().all(|b| b.is_ascii_digit()))
        else {
            continue;
        };
        if let Some(stat) = read_stat(pid).filter(|s| s.pgrp == pgid) {
            ticks += stat.ticks;
            rss += read_rss_bytes(pid, page);
            pids += 1;
        }
    }
    (ticks, rss, pids)
}

pub(crate) fn read_truncated(path: &Path) -> Vec<u8> {
    let mut buf = Vec::new();
    if let Ok(f) = File::open(path) {
        let _ = f.take(OUTPUT_LIMIT as u64).read_to_end(&mut buf);
    }
    buf
}

fn kill_group(pgid: i32) {
    // SAFETY: plain syscall on a process group we created.
    unsafe {
        libc::kill(-pgid, libc::SIGKILL);
    }
}

impl SandboxExecutor for ProcessExecutor {
    fn name(&self) -> &str {
        "process"
    }

    fn run(&mut self, req: &RunRequest<'_>) -> Result<RunOutcome, DastError> {
        let (program, args) = req
            .command
            .split_first()
            .ok_or(DastError::EntrypointMissing)?;
        let logs = tempfile::tempdir()?;
        let out_path = logs.path().join("stdout");
        let err_path = logs.path().join("stderr");

        let mut cmd = Command::new(program);
        cmd.args(args)
            .current_dir(req.workdir)
            .env_clear()
            .stdin(Stdio::null())
            .stdout(File::create(&out_path)?)
            .stderr(File::create(&err_path)?)
            .process_group(0);
        if let Ok(path) = std::env::var("PATH") {
            cmd.env("PATH", path);
        }
        for key in &self.inherit_env {
            if let Ok(v) = std::env::var(key) {
                cmd.env(key, v);
            }
        }
        cmd.env("HOME", req.workdir);
        cmd.envs(&req.env);

        let page = match unsafe { libc::sysconf(libc::_SC_PAGESIZE) } {
            n if n > 0 => n as u64,
            _ => 4096,
        };
        let hz = match unsafe { libc::sysconf(libc::_SC_CLK_TCK) } {
            n if n > 0 => n as f64,
            _ => 100.0,
        };

        let start = Instant::now();
        let mut child = cmd
            .spawn()
            .map_err(|e| DastError::SandboxUnavailable(format!("cannot start `{program}`: {e}")))?;
        let pgid = child.id() as i32;

        let mut outcome = RunOutcome::default();
        let mut last: Option<(Instant, u64)> = None;
        let status = loop {
            let now = Instant::now();
            let (ticks, rss, pids) = group_usage(pgid, page);
            let cpu = match last {
                Some((t, prev)) if ticks >= prev => {
                    let secs = now.duration_since(t).as_secs_f64();
                    if secs > 0.0 {
                        (ticks - prev) as f64 / hz / secs * 100.0
                    } else {
                        0.0
                    }
                }
                _ => 0.0,
            };
            last = Some((now, ticks));
            let sample = RuntimeMetrics {
                cpu_percent_peak: cpu,
                memory_gb_peak: rss as f64 / 1e9,
                pids_peak: pids,
                rx_bytes: req.traffic.rx(),
                tx_bytes: req.traffic.tx(),
                wall_time: start.elapsed().as_secs_f64(),
            };
            outcome.peak.absorb(&sample);
            outcome.samples.push(sample);

            if let Some(status) = child.try_wait()? {
                break Some(status);
            }
            if start.elapsed() >= req.timeout {
                kill_group(pgid);
                let _ = child.wait();
                outcome.timed_out = true;
                break None;
            }
            // Poll the child more often than we sample, so short runs end
            // promptly.
            let next = now + req.sample_interval;
            while Instant::now() < next {
                if child.try_wait()?.is_some() || start.elapsed() >= req.timeout {
                    break;
                }
                thread::sleep(Duration::from_millis(5).min(req.sample_interval));
            }
        };
        // Reap stragglers that outlived the entry point.
        kill_group(pgid);

        outcome.exit_code = status.and_then(|s| s.code());
        outcome.peak.wall_time = start.elapsed().as_secs_f64();
        outcome.stdout = read_truncated(&out_path);
        outcome.stderr = read_truncated(&err_path);
        Ok(outcome)
    }
}

/// Backend for a local container runtime (`docker` or `podman` CLI). The
/// image is built from the bundle's build file; the container joins an
/// internal network whose only reachable peer is the proxy on the host.
#[derive(Debug, Clone)]
pub struct ContainerExecutor {
    pub runtime: PathBuf,
    pub build_file: String,
    /// Mount point of the working copy inside the container.
    pub train_mount: String,
}

impl ContainerExecutor {
    /// Locate a runtime on `PATH`; `SandboxUnavailable` when none answers.
    pub fn detect(build_file: &str) -> Result<Self, DastError> {
        for name in ["docker", "podman"] {
            let ok = Command::new(name)
                .arg("version")
                .stdout(Stdio::null())
                .stderr(Stdio::null())
                .status()
                .is_ok_and(|s| s.success());
            if ok {
                return Ok(Self {
                    runtime: PathBuf::from(name),
                    build_file: build_file.to_string(),
                    train_mount: "/train".to_string(),
                });
            }
        }
        Err(DastError::SandboxUnavailable(
            "no docker or podman runtime found".into(),
        ))
    }

    fn cli(&self, args: &[&str]) -> Result<String, DastError> {
        let out = Command::new(&self.runtime)
            .args(args)
            .stdin(Stdio::null())
            .output()?;
        if !out.status.success() {
            return Err(DastError::SandboxUnavailable(format!(
                "`{} {}` failed: {}",
                self.runtime.display(),
                args.join(" "),
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        Ok(String::from_utf8_lossy(&out.stdout).trim().to_string())
    }

    fn stats(&self, name: &str) -> Option<(f64, f64, u64)> {
        let line = self
            .cli(&[
                "stats",
                "--no-stream",
                "--format",
                "{{.CPUPerc}};{{.MemUsage}};{{.PIDs}}",
                name,
            ])
            .ok()?;
        let mut parts = line.split(';');
        let cpu = parts
            .next()?
            .trim()
            .trim_end_matches('%')
            .parse()
            .unwrap_or(0.0);
        let mem = parse_size(parts.next()?.split('/').next()?.trim()).unwrap_or(0.0) / 1e9;
        let pids = parts.next()?.trim().parse().unwrap_or(0);
        Some((cpu, mem, pids))
    }
}

/// Parse sizes like `12.5MiB` or `3kB` into bytes.
fn parse_size(text: &str) -> Option<f64> {
    let split = text
        .find(|c: char| c.is_ascii_alphabetic())
        .unwrap_or(text.len());
    let (num, unit) = text.split_at(split);
    let n: f64 = num.trim().parse().ok()?;
    let mult = match unit.trim() {
        "" | "B" => 1.0,
        "kB" | "KB" => 1e3,
        "MB" => 1e6,
        "GB" => 1e9,
        "KiB" => 1024.0,
        "MiB" => 1024.0 * 1024.0,
        "GiB" => 1024.0 * 1024.0 * 1024.0,
        _ => return None,
    };
    Some(n * mult)
}

impl SandboxExecutor for ContainerExecutor {
    fn name(&self) -> &str {
        "container"
    }

    fn run(&mut self, req: &RunRequest<'_>) -> Result<RunOutcome, DastError> {
        let nanos = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_nanos());
        let stamp = format!("pasta-{}-{nanos}", std::process::id());
        let workdir = req.workdir.to_string_lossy().to_string();
        let build_file = req
            .workdir
            .join(&self.build_file)
            .to_string_lossy()
            .to_string();
        self.cli(&["build", "-q", "-t", &stamp, "-f", &build_file, &workdir])?;
        self.cli(&["network", "create", "--internal", &stamp])?;
        let gateway = self
            .cli(&[
                "network",
                "inspect",
                "-f",
                "{{range .IPAM.Config}}{{.Gateway}}{{end}}",
                &stamp,
            ])
            .unwrap_or_default();

        let mut args: Vec<String> = vec![
            "run".into(),
            "-d".into(),
            "--name".into(),
            stamp.clone(),
            "--network".into(),
            stamp.clone(),
            "-v".into(),
            format!("{workdir}:{}", self.train_mount),
            "-v".into(),
            format!("{}:/data:ro", req.data_dir.to_string_lossy()),
            "-w".into(),
            self.train_mount.clone(),
        ];
        for (k, v) in &req.env {
            let v = match k.as_str() {
                "HTTP_PROXY" | "HTTPS_PROXY" | "http_proxy" | "https_proxy"
                    if !gateway.is_empty() =>
                {
                    format!("http://{gateway}:{}", req.proxy_port)
                }
                "PASTA_DATA_DIR" => "/data".into(),
                _ => v.clone(),
            };
            args.push("-e".into());
            args.push(format!("{k}={v}"));
        }
        args.push(stamp.clone());
        args.extend(req.command.iter().cloned());
        let arg_refs: Vec<&str> = args.iter().map(String::as_str).collect();

        let start = Instant::now();
        let result = self.cli(&arg_refs).map(|_| {
            let mut outcome = RunOutcome::default();
            loop {
                let running = self
                    .cli(&["inspect", "-f", "{{.State.Running}}", &stamp])
                    .unwrap_or_default();
                if running != "true" {
                    break;
                }
                if let Some((cpu, mem, pids)) = self.stats(&stamp) {
                    let sample = RuntimeMetrics {
                        cpu_percent_peak: cpu,
                        memory_gb_peak: mem,
                        pids_peak: pids,
                        rx_bytes: req.traffic.rx(),
                        tx_bytes: req.traffic.tx(),
                        wall_time: start.elapsed().as_secs_f64(),
                    };
                    outcome.peak.absorb(&sample);
                    outcome.samples.push(sample);
                }
                if start.elapsed() >= req.timeout {
                    let _ = self.cli(&["kill", &stamp]);
                    outcome.timed_out = true;
                    break;
                }
                thread::sleep(req.sample_interval);
            }
            outcome.exit_code = if outcome.timed_out {
                None
            } else {
                self.cli(&["inspect", "-f", "{{.State.ExitCode}}", &stamp])
                    .ok()
                    .and_then(|c| c.parse().ok())
            };
            if let Ok(out) = Command::new(&self.runtime).args(["logs", &stamp]).output() {
                outcome.stdout = out.stdout.into_iter().take(OUTPUT_LIMIT).collect();
                outcome.stderr = out.stderr.into_iter().take(OUTPUT_LIMIT).collect();
            }
            outcome.peak.wall_time = start.elapsed().as_secs_f64();
            outcome
        });
        let _ = self.cli(&["rm", "-f", &stamp]);
        let _ = self.cli(&["network", "rm", &stamp]);
        let _ = self.cli(&["rmi", "-f", &stamp]);
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes() {
        assert_eq!(parse_size("1.5MiB"), Some(1.5 * 1024.0 * 1024.0));
        assert_eq!(parse_size("12kB"), Some(12_000.0));
        assert_eq!(parse_size("0B"), Some(0.0));
        assert_eq!(parse_size("7XB"), None);
    }

    #[test]
    fn own_stat_is_readable() {
        let me = std::process::id().to_string();
        let stat = read_stat(&me).unwrap();
        assert!(stat.pgrp > 0);
        assert!(read_rss_bytes(&me, 4096) > 0);
    }
}
