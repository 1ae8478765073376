//! Adapter for simulators running in a child process.
//!
//! Protocol: one JSON request line `{"theta":{..},"n":N,"seed":S}` on the
//! worker's stdin; the worker answers `BEGIN_CSV`, a CSV block and
//! `END_CSV` on stdout, or a single `ERROR <message>` line.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{GeneratedDataset, ThetaVector};
use crate::dataset::{ColumnSchema, Dataset};
use crate::error::{Error, ProtocolError, Result};
use crate::rng::RandomStream;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkerMode {
    /// One worker process serves many requests.
    #[default]
    Persistent,
    /// A fresh process per request; it must exit after answering.
    Oneshot,
}

fn default_timeout_ms() -> u64 {
    60_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalConfig {
    /// Program followed by its arguments.
    pub command: Vec<String>,
    #[serde(default)]
    pub working_dir: Option<PathBuf>,
    /// Per-request deadline.
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub mode: WorkerMode,
    pub parameter_names: Vec<String>,
    /// Column layout of the CSV the worker returns.
    pub schema: ColumnSchema,
}

/// The request line; field order is part of the protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkerRequest {
    pub theta: ThetaVector,
    pub n: usize,
    pub seed: u64,
}

impl WorkerRequest {
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("request serialises");
        s.push('\n');
        s
    }
}

struct Worker {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

impl Worker {
    fn spawn(cfg: &ExternalConfig) -> std::result::Result<Self, ProtocolError> {
        let (program, args) = cfg.command.split_first().expect("validated non-empty");
        let mut cmd = Command::new(program);
        cmd.args(args).stdin(Stdio::piped()).stdout(Stdio::piped()).stderr(Stdio::inherit());
        if let Some(dir) = &cfg.working_dir {
            cmd.current_dir(dir);
        }
        let mut child = cmd.spawn().map_err(|source| ProtocolError::Spawn {
            command: cfg.command.join(" "),
            source,
        })?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        Ok(Self { child, stdin, lines: rx })
    }

    fn kill(mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }

    /// Exit status once stdout has closed; `UnexpectedEof` if it exited cleanly.
    fn eof_error(&mut self) -> ProtocolError {
        match self.child.wait() {
            Ok(status) if !status.success() => ProtocolError::NonZeroExit(status.code().unwrap_or(-1)),
            Ok(_) => ProtocolError::UnexpectedEof,
            Err(e) => ProtocolError::Io(e),
        }
    }

    fn next_line(&mut self, deadline: Instant, timeout: Duration) -> std::result::Result<String, ProtocolError> {
        let left = deadline.saturating_duration_since(Instant::now());
        match self.lines.recv_timeout(left) {
            Ok(Ok(line)) => Ok(line.trim_end_matches('\r').to_string()),
            Ok(Err(e)) => Err(ProtocolError::Io(e)),
            Err(RecvTimeoutError::Timeout) => Err(ProtocolError::Timeout(timeout)),
            Err(RecvTimeoutError::Disconnected) => Err(self.eof_error()),
        }
    }

    /// Sends one request and collects the CSV block.
    fn request(&mut self, line: &str, timeout: Duration) -> std::result::Result<String, ProtocolError> {
        let deadline = Instant::now() + timeout;
        if let Err(e) = self.stdin.write_all(line.as_bytes()).and_then(|_| self.stdin.flush()) {
            if e.kind() == std::io::ErrorKind::BrokenPipe {
                return Err(self.eof_error());
            }
            return Err(ProtocolError::Io(e));
        }
        let first = self.next_line(deadline, timeout)?;
        if let Some(msg) = first.strip_prefix("ERROR") {
            return Err(ProtocolError::Worker(msg.trim().to_string()));
        }
        if first != "BEGIN_CSV" {
            return Err(ProtocolError::Malformed(format!("expected BEGIN_CSV, got `{first}`")));
        }
        let mut csv = String::new();
        loop {
            let l = self.next_line(deadline, timeout)?;
            if l == "END_CSV" {
                return Ok(csv);
            }
            csv.push_str(&l);
            csv.push('\n');
        }
    }
}

/// A configured external simulator with its pool of idle workers.
pub struct ExternalSimulator {
    cfg: ExternalConfig,
    idle: Mutex<Vec<Worker>>,
}

impl std::fmt::Debug for ExternalSimulator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalSimulator").field("cfg", &self.cfg).finish()
    }
}

impl ExternalSimulator {
    pub fn new(cfg: ExternalConfig) -> Result<Self> {
        if cfg.command.is_empty() {
            return Err(Error::Config("external simulator command is empty".into()));
        }
        if cfg.timeout_ms == 0 {
            return Err(Error::Config("external simulator timeout must be positive".into()));
        }
        cfg.schema.validate()?;
        Ok(Self {
            cfg,
            idle: Mutex::new(Vec::new()),
        })
    }

    pub fn config(&self) -> &ExternalConfig {
        &self.cfg
    }

    pub fn simulate(&self, theta: &ThetaVector, stream: &RandomStream, n: usize) -> Result<GeneratedDataset> {
        theta.check_names(&self.cfg.parameter_names)?;
        let request = WorkerRequest {
            theta: theta.clone(),
            n,
            seed: stream.seed_u64(),
        };
        let csv = self.exchange(&request.to_line())?;
        let dataset = parse_response(&csv, &self.cfg.schema, n)?;
        Ok(GeneratedDataset::new(dataset, theta.clone()))
    }

    fn exchange(&self, line: &str) -> std::result::Result<String, ProtocolError> {
        let timeout = Duration::from_millis(self.cfg.timeout_ms);
        let pooled = match self.cfg.mode {
            WorkerMode::Persistent => self.idle.lock().unwrap_or_else(|e| e.into_inner()).pop(),
            WorkerMode::Oneshot => None,
        };
        let mut worker = match pooled {
            Some(w) => w,
            None => Worker::spawn(&self.cfg)?,
        };
        let result = worker.request(line, timeout);
        match (&result, self.cfg.mode) {
            // A worker that reported an error is still in a known state.
            (Ok(_) | Err(ProtocolError::Worker(_)), WorkerMode::Persistent) => self.idle.lock().unwrap_or_else(|e| e.into_inner()).push(worker),
            (Ok(_), WorkerMode::Oneshot) => {
                drop(worker.stdin);
                let status = wait_with_deadline(&mut worker.child, timeout)?;
                if !status.success() {
                    return Err(ProtocolError::NonZeroExit(status.code().unwrap_or(-1)));
                }
            }
            _ => worker.kill(),
        }
        result
    }
}

impl Drop for ExternalSimulator {
    fn drop(&mut self) {
        let workers = std::mem::take(self.idle.get_mut().unwrap_or_else(|e| e.into_inner()));
        for mut w in workers {
            // Closing stdin asks a well-behaved worker to exit.
            drop(w.stdin);
            if wait_with_deadline(&mut w.child, Duration::from_millis(500)).is_err() {
                let _ = w.child.kill();
                let _ = w.child.wait();
            }
        }
    }
}

fn wait_with_deadline(child: &mut Child, timeout: Duration) -> std::result::Result<std::process::ExitStatus, ProtocolError> {
    let deadline = Instant::now() + timeout;
    loop {
        if let Some(status) = child.try_wait()? {
            return Ok(status);
        }
        if Instant::now() >= deadline {
            let _ = child.kill();
            let _ = child.wait();
            return Err(ProtocolError::Timeout(timeout));
        }
        thread::sleep(Duration::from_millis(5));
    }
}

/// Validates and parses a CSV block returned by a worker.
pub fn parse_response(csv: &str, schema: &ColumnSchema, expected_rows: usize) -> std::result::Result<Dataset, ProtocolError> {
    let rows = csv.lines().filter(|l| !l.trim().is_empty()).count().saturating_sub(1);
    if rows != expected_rows {
        return Err(ProtocolError::RowCount {
            expected: expected_rows,
            got: rows,
        });
    }
    Dataset::parse_csv(csv, schema, Path::new("<worker output>")).map_err(|e| ProtocolError::Malformed(e.to_string()))
}

#[cfg(all(test, unix))]
mod tests {
    use super::*;

    fn schema() -> ColumnSchema {
        ColumnSchema {
            treatment_column: "t".into(),
            outcome_column: "y".into(),
            covariate_columns: vec!["x".into()],
        }
    }

    fn sh(script: &str, mode: WorkerMode, timeout_ms: u64) -> ExternalSimulator {
        ExternalSimulator::new(ExternalConfig {
            command: vec!["/bin/sh".into(), "-c".into(), script.into()],
            working_dir: None,
            timeout_ms,
            mode,
            parameter_names: vec!["tau".into()],
            schema: schema(),
        })
        .unwrap()
    }

    const FIVE_ROWS: &str = "printf 'BEGIN_CSV\\nx,t,y\\n0.1,0,1\\n0.2,1,2\\n0.3,0,3\\n0.4,1,4\\n0.5,0,5\\nEND_CSV\\n'";

    fn tau() -> ThetaVector {
        ThetaVector::new(vec![("tau".into(), 1.5)]).unwrap()
    }

    fn protocol_err(r: Result<GeneratedDataset>) -> ProtocolError {
        match r {
            Err(Error::Protocol(p)) => p,
            other => panic!("expected protocol error, got {other:?}"),
        }
    }

    #[test]
    fn request_line_has_fixed_key_order() {
        let r = WorkerRequest {
            theta: tau(),
            n: 2000,
            seed: 7,
        };
        assert_eq!(r.to_line(), "{\"theta\":{\"tau\":1.5},\"n\":2000,\"seed\":7}\n");
    }

    #[test]
    fn oneshot_echo_worker() {
        let sim = sh(&format!("read line; {FIVE_ROWS}"), WorkerMode::Oneshot, 5000);
        let g = sim.simulate(&tau(), &RandomStream::new(1), 5).unwrap();
        assert_eq!(g.dataset.n(), 5);
        assert_eq!(g.dataset.outcome(), &[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(g.tau_star, 1.5);
    }

    #[test]
    fn worker_receives_exact_request() {
        let sim = sh("read line; echo \"ERROR $line\"", WorkerMode::Oneshot, 5000);
        let stream = RandomStream::new(3);
        match protocol_err(sim.simulate(&tau(), &stream, 2000)) {
            ProtocolError::Worker(msg) => {
                assert_eq!(msg, format!("{{\"theta\":{{\"tau\":1.5}},\"n\":2000,\"seed\":{}}}", stream.seed_u64()))
            }
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn persistent_worker_serves_many_requests() {
        let script = format!("while read line; do {FIVE_ROWS}; done");
        let sim = sh(&script, WorkerMode::Persistent, 5000);
        for i in 0..4 {
            assert_eq!(sim.simulate(&tau(), &RandomStream::new(i), 5).unwrap().dataset.n(), 5);
        }
        assert_eq!(sim.idle.lock().unwrap().len(), 1);
    }

    #[test]
    fn persistent_worker_survives_reported_errors() {
        let script = format!("while read line; do case \"$line\" in *'\"n\":3'*) echo 'ERROR bad n';; *) {FIVE_ROWS};; esac; done");
        let sim = sh(&script, WorkerMode::Persistent, 5000);
        assert!(matches!(protocol_err(sim.simulate(&tau(), &RandomStream::new(0), 3)), ProtocolError::Worker(m) if m == "bad n"));
        assert_eq!(sim.simulate(&tau(), &RandomStream::new(0), 5).unwrap().dataset.n(), 5);
    }

    #[test]
    fn failure_modes_are_distinct() {
        let timeout = sh("read line; sleep 5", WorkerMode::Oneshot, 200);
        assert!(matches!(
            protocol_err(timeout.simulate(&tau(), &RandomStream::new(0), 5)),
            ProtocolError::Timeout(_)
        ));

        let exit = sh("read line; exit 3", WorkerMode::Oneshot, 5000);
        assert!(matches!(
            protocol_err(exit.simulate(&tau(), &RandomStream::new(0), 5)),
            ProtocolError::NonZeroExit(3)
        ));

        let eof = sh("read line; echo BEGIN_CSV; echo x,t,y", WorkerMode::Oneshot, 5000);
        assert!(matches!(
            protocol_err(eof.simulate(&tau(), &RandomStream::new(0), 5)),
            ProtocolError::UnexpectedEof
        ));

        let garbage = sh("read line; echo hello", WorkerMode::Oneshot, 5000);
        assert!(matches!(
            protocol_err(garbage.simulate(&tau(), &RandomStream::new(0), 5)),
            ProtocolError::Malformed(_)
        ));

        let bad_cell = sh("read line; printf 'BEGIN_CSV\\nx,t,y\\n1,0,a\\n2,1,2\\nEND_CSV\\n'", WorkerMode::Oneshot, 5000);
        assert!(matches!(
            protocol_err(bad_cell.simulate(&tau(), &RandomStream::new(0), 2)),
            ProtocolError::Malformed(_)
        ));

        let rows = sh(&format!("read line; {FIVE_ROWS}"), WorkerMode::Oneshot, 5000);
        assert!(matches!(
            protocol_err(rows.simulate(&tau(), &RandomStream::new(0), 10)),
            ProtocolError::RowCount { expected: 10, got: 5 }
        ));

        let missing = ExternalSimulator::new(ExternalConfig {
            command: vec!["/nonexistent/worker".into()],
            working_dir: None,
            timeout_ms: 1000,
            mode: WorkerMode::Oneshot,
            parameter_names: vec!["tau".into()],
            schema: schema(),
        })
        .unwrap();
        assert!(matches!(
            protocol_err(missing.simulate(&tau(), &RandomStream::new(0), 5)),
            ProtocolError::Spawn { .. }
        ));
    }

    #[test]
    fn unknown_parameters_rejected_before_spawn() {
        let sim = sh("exit 1", WorkerMode::Oneshot, 1000);
        let bad = ThetaVector::new(vec![("rho".into(), 1.0)]).unwrap();
        assert!(matches!(sim.simulate(&bad, &RandomStream::new(0), 5), Err(Error::UnknownParameter(_))));
    }
}
