//! Unit-test oracle: runs a complete program against a problem's tests in
//! isolated child processes and reports a per-test verdict.
//!
//! Each test gets a fresh temporary working directory, a cleared environment,
//! piped stdin/stdout, an address-space limit, and a wall-clock limit. All
//! tests always run; results are assembled by test index, so the verdict does
//! not depend on the worker pool width.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitStatus, Stdio};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{outputs_match, TestCase};

pub const INTERPRETER_ENV: &str = "JUDGE_INTERPRETER";
const DEFAULT_INTERPRETER: &str = "python3";
const SOLUTION_FILE: &str = "solution.py";
const POLL_INTERVAL: Duration = Duration::from_millis(2);
const STDERR_CAP: usize = 64 * 1024;

#[derive(Debug, thiserror::Error)]
pub enum JudgeError {
    /// The judge itself could not run (missing interpreter, sandbox setup).
    /// Never a verdict about the candidate.
    #[error("judge environment error: {0}")]
    Environment(String),
    #[error("invalid limits: {0}")]
    InvalidLimits(String),
    #[error("no tests to run")]
    NoTests,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Limits {
    #[serde(with = "duration_ms")]
    pub wall_time_per_test: Duration,
    pub memory: u64,
    pub max_output: u64,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            wall_time_per_test: Duration::from_secs(5),
            memory: 512 * 1024 * 1024,
            max_output: 1024 * 1024,
        }
    }
}

impl Limits {
    pub fn validate(&self) -> Result<(), JudgeError> {
        if self.wall_time_per_test.is_zero() {
            return Err(JudgeError::InvalidLimits("wall_time_per_test must be positive".into()));
        }
        if self.memory == 0 || self.max_output == 0 {
            return Err(JudgeError::InvalidLimits("memory and max_output must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestOutcome {
    Pass,
    WrongAnswer,
    Timeout,
    RuntimeError,
    OutputLimit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub passed: bool,
    pub per_test: Vec<TestOutcome>,
    #[serde(rename = "wall_time_total_ms", with = "duration_ms")]
    pub wall_time_total: Duration,
}

impl Verdict {
    pub fn from_outcomes(per_test: Vec<TestOutcome>, wall_time_total: Duration) -> Self {
        Self {
            passed: !per_test.is_empty() && per_test.iter().all(|o| *o == TestOutcome::Pass),
            per_test,
            wall_time_total,
        }
    }

    /// Copy with the timing zeroed, for byte-stable result files.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_time_total: Duration::ZERO,
            ..self.clone()
        }
    }
}

/// Clean label of a complete program: 1.0 iff every test passed.
pub fn final_label(verdict: &Verdict) -> f64 {
    if verdict.passed {
        1.0
    } else {
        0.0
    }
}

/// Anything that can judge a complete program against a test list.
pub trait Verifier: Send + Sync {
    fn verify(&self, source: &str, tests: &[TestCase]) -> Result<Verdict, JudgeError>;
}

#[derive(Debug, Clone)]
pub struct Judge {
    interpreter: PathBuf,
    limits: Limits,
    workers: usize,
}

impl Judge {
    /// Interpreter from `JUDGE_INTERPRETER`, falling back to `python3` on PATH.
    pub fn from_env(limits: Limits, workers: usize) -> Result<Self, JudgeError> {
        let name = std::env::var(INTERPRETER_ENV).unwrap_or_else(|_| DEFAULT_INTERPRETER.into());
        Self::with_interpreter(&name, limits, workers)
    }

    pub fn with_interpreter(name: &str, limits: Limits, workers: usize) -> Result<Self, JudgeError> {
        limits.validate()?;
        let interpreter = resolve_executable(name).ok_or_else(|| {
            JudgeError::Environment(format!("interpreter {name:?} not found"))
        })?;
        Ok(Self {
            interpreter,
            limits,
            workers: workers.max(1),
        })
    }

    pub fn limits(&self) -> &Limits {
        &self.limits
    }

    pub fn interpreter(&self) -> &Path {
        &self.interpreter
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }

    pub fn run(&self, source: &str, tests: &[TestCase]) -> Result<Verdict, JudgeError> {
        if tests.is_empty() {
            return Err(JudgeError::NoTests);
        }
        let results: Vec<Mutex<Option<Result<(TestOutcome, Duration), JudgeError>>>> =
            tests.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        thread::scope(|s| {
            for _ in 0..self.workers.min(tests.len()) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= tests.len() {
                        break;
                    }
                    let r = self.run_one(source, &tests[i]);
                    *results[i].lock().unwrap() = Some(r);
                });
            }
        });
        let mut outcomes = Vec::with_capacity(tests.len());
        let mut total = Duration::ZERO;
        for slot in results {
            let (o, t) = slot.into_inner().unwrap().expect("every test scheduled")?;
            outcomes.push(o);
            total += t;
        }
        Ok(Verdict::from_outcomes(outcomes, total))
    }

    fn spawn(&self, dir: &Path) -> Result<Child, JudgeError> {
        let memory = self.limits.memory;
        let mut cmd = Command::new(&self.interpreter);
        cmd.arg(SOLUTION_FILE)
            .current_dir(dir)
            .env_clear()
            .env("LANG", "C.UTF-8")
            .env("PYTHONIOENCODING", "utf-8")
            .env("PYTHONDONTWRITEBYTECODE", "1")
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .process_group(0);
        // SAFETY: setrlimit is async-signal-safe.
        unsafe {
            cmd.pre_exec(move || {
                let lim = libc::rlimit {
                    rlim_cur: memory as libc::rlim_t,
                    rlim_max: memory as libc::rlim_t,
                };
                if libc::setrlimit(libc::RLIMIT_AS, &lim) != 0 {
                    return Err(std::io::Error::last_os_error());
                }
                Ok(())
            });
        }
        cmd.spawn().map_err(|e| {
            JudgeError::Environment(format!("failed to start {}: {e}", self.interpreter.display()))
        })
    }

    fn run_one(&self, source: &str, test: &TestCase) -> Result<(TestOutcome, Duration), JudgeError> {
        let dir = tempfile::Builder::new()
            .prefix("cofprm-judge-")
            .tempdir()
            .map_err(|e| JudgeError::Environment(format!("sandbox directory: {e}")))?;
        std::fs::write(dir.path().join(SOLUTION_FILE), source)
            .map_err(|e| JudgeError::Environment(format!("writing solution: {e}")))?;

        let start = Instant::now();
        let mut child = self.spawn(dir.path())?;
        let pid = child.id() as libc::pid_t;

        let mut stdin = child.stdin.take().expect("piped stdin");
        let input = test.input.clone().into_bytes();
        let writer = thread::spawn(move || {
            // The child may exit without reading its input.
            let _ = stdin.write_all(&input);
        });

        let overflow = Arc::new(AtomicBool::new(false));
        let cap = self.limits.max_output as usize;
        let stdout = child.stdout.take().expect("piped stdout");
        let reader = {
            let overflow = Arc::clone(&overflow);
            thread::spawn(move || read_capped(stdout, cap, &overflow))
        };
        let stderr = child.stderr.take().expect("piped stderr");
        let err_reader = thread::spawn(move || read_capped(stderr, STDERR_CAP, &AtomicBool::new(false)));

        let mut timed_out = false;
        let status: ExitStatus = loop {
            match child.try_wait() {
                Ok(Some(status)) => break status,
                Ok(None) => {}
                Err(e) => return Err(JudgeError::Environment(format!("waiting on child: {e}"))),
            }
            if start.elapsed() >= self.limits.wall_time_per_test {
                timed_out = true;
            }
            if timed_out || overflow.load(Ordering::Relaxed) {
                kill_group(pid);
                let _ = child.kill();
                break child
                    .wait()
                    .map_err(|e| JudgeError::Environment(format!("reaping child: {e}")))?;
            }
            thread::sleep(POLL_INTERVAL);
        };
        let elapsed = start.elapsed();
        // Grandchildren may still hold the pipes open.
        kill_group(pid);
        let _ = writer.join();
        let out = reader.join().unwrap_or_default();
        let err = err_reader.join().unwrap_or_default();

        let outcome = if timed_out {
            TestOutcome::Timeout
        } else if overflow.load(Ordering::Relaxed) {
            TestOutcome::OutputLimit
        } else if !status.success() {
            log::debug!(
                "runtime error ({status}): {}",
                String::from_utf8_lossy(&err).lines().last().unwrap_or("")
            );
            TestOutcome::RuntimeError
        } else if outputs_match(&out, test.expected_output.as_bytes()) {
            TestOutcome::Pass
        } else {
            TestOutcome::WrongAnswer
        };
        Ok((outcome, elapsed))
    }
}

impl Verifier for Judge {
    fn verify(&self, source: &str, tests: &[TestCase]) -> Result<Verdict, JudgeError> {
        self.run(source, tests)
    }
}

fn kill_group(pid: libc::pid_t) {
    // SAFETY: plain syscall on the child's own process group.
    unsafe {
        libc::kill(-pid, libc::SIGKILL);
    }
}

/// Read up to `cap` bytes; reading one byte more sets `overflow` and stops.
fn read_capped(mut r: impl Read, cap: usize, overflow: &AtomicBool) -> Vec<u8> {
    let mut out = Vec::new();
    let mut buf = [0u8; 8192];
    loop {
        match r.read(&mut buf) {
            Ok(0) | Err(_) => break,
            Ok(n) => {
                if out.len() + n > cap {
                    let keep = cap - out.len();
                    out.extend_from_slice(&buf[..keep]);
                    overflow.store(true, Ordering::Relaxed);
                    break;
                }
                out.extend_from_slice(&buf[..n]);
            }
        }
    }
    out
}

fn resolve_executable(name: &str) -> Option<PathBuf> {
    let is_exec = |p: &Path| {
        use std::os::unix::fs::PermissionsExt;
        p.metadata()
            .map(|m| m.is_file() && m.permissions().mode() & 0o111 != 0)
            .unwrap_or(false)
    };
    if name.contains('/') {
        let p = PathBuf::from(name);
        return is_exec(&p).then_some(p);
    }
    let path = std::env::var_os("PATH")?;
    std::env::split_paths(&path)
        .map(|dir| dir.join(name))
        .find(|p| is_exec(p))
}

/// Memoizes verdicts by (source, tests) digest. Valid for deterministic
/// programs, which is what Monte-Carlo labeling produces in bulk.
pub struct CachedVerifier<V> {
    inner: V,
    cache: Mutex<HashMap<[u8; 32], Verdict>>,
}

impl<V: Verifier> CachedVerifier<V> {
    pub fn new(inner: V) -> Self {
        Self {
            inner,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn inner(&self) -> &V {
        &self.inner
    }

    pub fn cached_entries(&self) -> usize {
        self.cache.lock().unwrap().len()
    }

    fn key(source: &str, tests: &[TestCase]) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((source.len() as u64).to_le_bytes());
        h.update(source.as_bytes());
        for t in tests {
            for part in [&t.input, &t.expected_output] {
                h.update((part.len() as u64).to_le_bytes());
                h.update(part.as_bytes());
            }
        }
        h.finalize().into()
    }
}

impl<V: Verifier> Verifier for CachedVerifier<V> {
    fn verify(&self, source: &str, tests: &[TestCase]) -> Result<Verdict, JudgeError> {
        let key = Self::key(source, tests);
        if let Some(v) = self.cache.lock().unwrap().get(&key) {
            return Ok(v.clone());
        }
        let v = self.inner.verify(source, tests)?;
        self.cache.lock().unwrap().insert(key, v.clone());
        Ok(v)
    }
}

impl<V: Verifier + ?Sized> Verifier for &V {
    fn verify(&self, source: &str, tests: &[TestCase]) -> Result<Verdict, JudgeError> {
        (**self).verify(source, tests)
    }
}

pub(crate) mod duration_ms {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tc(input: &str, output: &str) -> TestCase {
        TestCase {
            input: input.into(),
            expected_output: output.into(),
        }
    }

    fn judge(secs: f64) -> Judge {
        let limits = Limits {
            wall_time_per_test: Duration::from_secs_f64(secs),
            ..Limits::default()
        };
        Judge::from_env(limits, 4).expect("python3 available")
    }

    #[test]
    fn final_label_is_conjunction() {
        use TestOutcome::*;
        let v = |o: Vec<TestOutcome>| final_label(&Verdict::from_outcomes(o, Duration::ZERO));
        assert_eq!(v(vec![Pass, Pass]), 1.0);
        assert_eq!(v(vec![Pass, WrongAnswer, Pass]), 0.0);
        assert_eq!(v(vec![Timeout, Timeout]), 0.0);
    }

    #[test]
    fn identity_program_passes() {
        let v = judge(5.0)
            .run("import sys\nsys.stdout.write(sys.stdin.read())\n", &[tc("x\n", "x\n")])
            .unwrap();
        assert!(v.passed);
        assert_eq!(v.per_test, [TestOutcome::Pass]);
    }

    #[test]
    fn outcomes_are_classified() {
        let j = judge(1.0);
        let tests = [tc("", "ok\n")];
        assert_eq!(j.run("print('no')\n", &tests).unwrap().per_test, [TestOutcome::WrongAnswer]);
        assert_eq!(j.run("raise SystemExit(3)\n", &tests).unwrap().per_test, [TestOutcome::RuntimeError]);
        assert_eq!(j.run("print('ok'  \n", &tests).unwrap().per_test, [TestOutcome::RuntimeError]);
        let small = Judge {
            limits: Limits {
                max_output: 100,
                ..*j.limits()
            },
            ..j.clone()
        };
        assert_eq!(
            small.run("while True:\n    print('x' * 50)\n", &tests).unwrap().per_test,
            [TestOutcome::OutputLimit]
        );
    }

    #[test]
    fn infinite_loop_times_out_within_grace() {
        let j = judge(1.0);
        let start = Instant::now();
        let v = j.run("while True:\n    pass\n", &[tc("", "")]).unwrap();
        let elapsed = start.elapsed();
        assert_eq!(v.per_test, [TestOutcome::Timeout]);
        assert!(!v.passed);
        assert!(elapsed <= Duration::from_millis(1100), "took {elapsed:?}");
    }

    #[test]
    fn memory_limit_turns_into_runtime_error() {
        let j = Judge {
            limits: Limits {
                memory: 64 * 1024 * 1024,
                ..Limits::default()
            },
            ..judge(5.0)
        };
        let v = j.run("x = bytearray(256 * 1024 * 1024)\nprint(len(x))\n", &[tc("", "268435456\n")]).unwrap();
        assert_eq!(v.per_test, [TestOutcome::RuntimeError]);
    }

    #[test]
    fn missing_interpreter_is_environment_error() {
        let err = Judge::with_interpreter("definitely-not-an-interpreter-xyz", Limits::default(), 1).unwrap_err();
        assert!(matches!(err, JudgeError::Environment(_)));
        let err = Judge::with_interpreter("/nonexistent/python", Limits::default(), 1).unwrap_err();
        assert!(matches!(err, JudgeError::Environment(_)));
    }

    #[test]
    fn invalid_limits_and_empty_tests() {
        let bad = Limits {
            wall_time_per_test: Duration::ZERO,
            ..Limits::default()
        };
        assert!(matches!(Judge::from_env(bad, 1), Err(JudgeError::InvalidLimits(_))));
        assert!(matches!(judge(1.0).run("print(1)", &[]), Err(JudgeError::NoTests)));
    }

    #[test]
    fn cache_skips_repeat_runs() {
        struct Counting(AtomicUsize);
        impl Verifier for Counting {
            fn verify(&self, _: &str, _: &[TestCase]) -> Result<Verdict, JudgeError> {
                self.0.fetch_add(1, Ordering::Relaxed);
                Ok(Verdict::from_outcomes(vec![TestOutcome::Pass], Duration::ZERO))
            }
        }
        let c = CachedVerifier::new(Counting(AtomicUsize::new(0)));
        let t = [tc("1", "1")];
        for _ in 0..3 {
            c.verify("a", &t).unwrap();
        }
        c.verify("b", &t).unwrap();
        c.verify("a", &[tc("2", "2")]).unwrap();
        assert_eq!(c.inner().0.load(Ordering::Relaxed), 3);
        assert_eq!(c.cached_entries(), 3);
    }
}
