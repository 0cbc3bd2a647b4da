use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use super::protocol::{parse_response, Request, Response};
use super::{ExecFailure, Executor, FailureKind, Timeouts};
use crate::data::Payload;
use crate::feature::FeatureId;

#[derive(Debug, Clone, PartialEq)]
pub struct WorkerConfig {
    /// Program and arguments that start one worker.
    pub command: Vec<String>,
    pub workers: usize,
    pub timeouts: Timeouts,
}

impl WorkerConfig {
    pub fn new(command: Vec<String>) -> Self {
        WorkerConfig {
            command,
            workers: 1,
            timeouts: Timeouts::default(),
        }
    }
}

const STDERR_TAIL: usize = 2048;

struct Worker {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<String>,
    stderr: Arc<Mutex<String>>,
    loaded: HashSet<FeatureId>,
}

impl Worker {
    fn spawn(command: &[String]) -> Result<Worker, ExecFailure> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| ExecFailure::new(FailureKind::LoadError, "empty worker command"))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| ExecFailure::new(FailureKind::LoadError, format!("cannot start worker `{program}`: {e}")))?;
        let stdin = child.stdin.take().expect("stdin piped");
        let stdout = child.stdout.take().expect("stdout piped");
        let stderr_pipe = child.stderr.take().expect("stderr piped");

        let (tx, lines) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { return };
                if tx.send(line).is_err() {
                    return;
                }
            }
        });
        let stderr = Arc::new(Mutex::new(String::new()));
        let tail = Arc::clone(&stderr);
        thread::spawn(move || {
            for line in BufReader::new(stderr_pipe).lines() {
                let Ok(line) = line else { return };
                let mut buf = tail.lock().expect("stderr lock poisoned");
                buf.push_str(&line);
                buf.push('\n');
                if buf.len() > STDERR_TAIL {
                    let mut cut = buf.len() - STDERR_TAIL;
                    while !buf.is_char_boundary(cut) {
                        cut += 1;
                    }
                    buf.drain(..cut);
                }
            }
        });
        Ok(Worker {
            child,
            stdin,
            lines,
            stderr,
            loaded: HashSet::new(),
        })
    }

    fn diagnostics(&self) -> String {
        let tail = self.stderr.lock().expect("stderr lock poisoned");
        if tail.trim().is_empty() {
            String::new()
        } else {
            format!("; worker stderr: {}", tail.trim())
        }
    }

    /// Sends one request and waits for its response until `deadline`.
    fn call(&mut self, request: &Request<'_>, deadline: Instant) -> Result<Response, CallError> {
        self.stdin
            .write_all(request.to_line().as_bytes())
            .and_then(|()| self.stdin.flush())
            .map_err(|e| CallError::Crashed(format!("write failed: {e}")))?;
        let remaining = deadline.saturating_duration_since(Instant::now());
        let line = match self.lines.recv_timeout(remaining) {
            Ok(line) => line,
            Err(RecvTimeoutError::Timeout) => return Err(CallError::Timeout),
            Err(RecvTimeoutError::Disconnected) => {
                // give the stderr reader a moment to drain
                thread::sleep(Duration::from_millis(20));
                return Err(CallError::Crashed(format!("worker exited{}", self.diagnostics())));
            }
        };
        let response = parse_response(&line).map_err(|e| CallError::Crashed(e.to_string()))?;
        if response.id != request.id() {
            return Err(CallError::Crashed(format!(
                "response id {} does not match request id {}",
                response.id,
                request.id()
            )));
        }
        Ok(response)
    }

    fn kill(mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

enum CallError {
    Timeout,
    Crashed(String),
    /// The worker answered the load with an error.
    Load(ExecFailure),
}

struct Pool {
    idle: Vec<Worker>,
    live: usize,
}

/// Evaluates feature source in external worker processes speaking the
/// line-delimited JSON protocol of [`super::protocol`].
///
/// Timeouts are enforced by killing the worker. A killed or crashed worker is
/// relaunched and the features it had loaded are loaded again.
pub struct WorkerExecutor {
    config: WorkerConfig,
    sources: Mutex<HashMap<FeatureId, String>>,
    pool: Mutex<Pool>,
    available: Condvar,
    next_id: AtomicU64,
    relaunches: AtomicUsize,
}

impl WorkerExecutor {
    pub fn new(config: WorkerConfig) -> Self {
        WorkerExecutor {
            config,
            sources: Mutex::default(),
            pool: Mutex::new(Pool { idle: Vec::new(), live: 0 }),
            available: Condvar::new(),
            next_id: AtomicU64::new(1),
            relaunches: AtomicUsize::new(0),
        }
    }

    /// Workers restarted after a timeout or crash.
    pub fn relaunches(&self) -> usize {
        self.relaunches.load(Ordering::SeqCst)
    }

    fn request_id(&self) -> u64 {
        self.next_id.fetch_add(1, Ordering::SeqCst)
    }

    fn acquire(&self) -> Result<Worker, ExecFailure> {
        let mut pool = self.pool.lock().expect("pool lock poisoned");
        loop {
            if let Some(w) = pool.idle.pop() {
                return Ok(w);
            }
            if pool.live < self.config.workers.max(1) {
                pool.live += 1;
                drop(pool);
                return Worker::spawn(&self.config.command).inspect_err(|_| {
                    self.pool.lock().expect("pool lock poisoned").live -= 1;
                });
            }
            pool = self.available.wait(pool).expect("pool lock poisoned");
        }
    }

    fn release(&self, worker: Worker) {
        self.pool.lock().expect("pool lock poisoned").idle.push(worker);
        self.available.notify_one();
    }

    fn load_into(&self, worker: &mut Worker, feature: &FeatureId, source: &str) -> Result<(), CallError> {
        let request = Request::Load {
            id: self.request_id(),
            feature_id: feature,
            source,
        };
        let response = worker.call(&request, Instant::now() + self.config.timeouts.load)?;
        match response.into_unit() {
            Ok(()) => {
                worker.loaded.insert(feature.clone());
                Ok(())
            }
            Err(e) => Err(CallError::Load(e)),
        }
    }

    /// Replaces a killed worker and loads its features again.
    fn relaunch(&self, dead: Worker) -> Result<Worker, ExecFailure> {
        let replay: Vec<FeatureId> = dead.loaded.iter().cloned().collect();
        dead.kill();
        self.relaunches.fetch_add(1, Ordering::SeqCst);
        let mut fresh = match Worker::spawn(&self.config.command) {
            Ok(w) => w,
            Err(e) => {
                self.pool.lock().expect("pool lock poisoned").live -= 1;
                self.available.notify_one();
                return Err(e);
            }
        };
        let sources = self.sources.lock().expect("sources lock poisoned").clone();
        for id in replay {
            if let Some(src) = sources.get(&id) {
                // a feature that no longer loads is simply left out
                let _ = self.load_into(&mut fresh, &id, src);
            }
        }
        Ok(fresh)
    }

    /// Hands a worker back after a failed call, relaunching it if needed.
    fn recover(&self, worker: Worker) {
        match self.relaunch(worker) {
            Ok(fresh) => self.release(fresh),
            Err(e) => log::warn!("worker relaunch failed: {e}"),
        }
    }
}

impl Executor for WorkerExecutor {
    fn load(&self, feature: &FeatureId, source: &str) -> Result<(), ExecFailure> {
        let mut worker = self.acquire()?;
        match self.load_into(&mut worker, feature, source) {
            Ok(()) => {
                self.sources
                    .lock()
                    .expect("sources lock poisoned")
                    .insert(feature.clone(), source.to_string());
                self.release(worker);
                Ok(())
            }
            Err(CallError::Load(e)) => {
                self.release(worker);
                Err(ExecFailure::new(FailureKind::LoadError, e.message))
            }
            Err(CallError::Timeout) => {
                self.recover(worker);
                Err(ExecFailure::new(
                    FailureKind::Timeout,
                    format!("load took longer than {:?}", self.config.timeouts.load),
                ))
            }
            Err(CallError::Crashed(msg)) => {
                self.recover(worker);
                Err(ExecFailure::new(FailureKind::LoadError, msg))
            }
        }
    }

    fn eval(&self, feature: &FeatureId, payloads: &[&Payload]) -> Result<Vec<f64>, ExecFailure> {
        let source = self
            .sources
            .lock()
            .expect("sources lock poisoned")
            .get(feature)
            .cloned()
            .ok_or_else(|| ExecFailure::new(FailureKind::LoadError, format!("feature {feature} is not loaded")))?;
        let mut worker = self.acquire()?;
        if !worker.loaded.contains(feature) {
            match self.load_into(&mut worker, feature, &source) {
                Ok(()) => {}
                Err(CallError::Load(e)) => {
                    self.release(worker);
                    return Err(ExecFailure::new(FailureKind::LoadError, e.message));
                }
                Err(CallError::Timeout) => {
                    self.recover(worker);
                    return Err(ExecFailure::new(FailureKind::Timeout, "load timed out"));
                }
                Err(CallError::Crashed(msg)) => {
                    self.recover(worker);
                    return Err(ExecFailure::new(FailureKind::LoadError, msg));
                }
            }
        }

        let request = Request::Eval {
            id: self.request_id(),
            feature_id: feature,
            examples: payloads,
        };
        let budget = self.config.timeouts.call * u32::try_from(payloads.len().max(1)).unwrap_or(u32::MAX);
        match worker.call(&request, Instant::now() + budget) {
            Ok(response) => match response.into_values(payloads.len()) {
                Ok(result) => {
                    self.release(worker);
                    result
                }
                Err(e) => {
                    self.recover(worker);
                    Err(ExecFailure::new(FailureKind::RuntimeException, e.to_string()))
                }
            },
            Err(CallError::Timeout) => {
                self.recover(worker);
                let mut failure = ExecFailure::new(
                    FailureKind::Timeout,
                    format!("no response within {budget:?}; worker killed"),
                );
                if payloads.len() == 1 {
                    failure = failure.at(0);
                }
                Err(failure)
            }
            Err(CallError::Crashed(msg) | CallError::Load(ExecFailure { message: msg, .. })) => {
                self.recover(worker);
                Err(ExecFailure::new(FailureKind::RuntimeException, msg))
            }
        }
    }
}

impl Drop for WorkerExecutor {
    fn drop(&mut self) {
        let pool = self.pool.get_mut().expect("pool lock poisoned");
        for mut worker in pool.idle.drain(..) {
            let id = self.next_id.fetch_add(1, Ordering::SeqCst);
            let line = Request::Shutdown { id }.to_line();
            let _ = worker.stdin.write_all(line.as_bytes()).and_then(|()| worker.stdin.flush());
            let _ = worker.lines.recv_timeout(Duration::from_millis(200));
            worker.kill();
        }
    }
}
