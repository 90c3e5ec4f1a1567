//! Compile generated programs with monitor instrumentation, run them in
//! isolated scratch directories, and drive the bounded LLM repair loop.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use wait_timeout::ChildExt;

use crate::corpus::LibraryConfig;
use crate::llm::{ChatSession, Gateway, LlmError};
use crate::prompt::{self, RepairStage};
use crate::rem::{self, RuntimeErrorReport, SIGNAL_CRASH_PREFIX};

pub const DEFAULT_MAX_REPAIR_RIGHT: usize = 10;
pub const DEFAULT_MAX_REPAIR_VIOLATION: usize = 5;
pub const DEFAULT_TIMEOUT_SEC: u64 = 10;

/// File name of the program under test inside its scratch directory.
pub const PROGRAM_FILE: &str = "test.c";

/// Exit code valgrind is told to use when it reports errors.
const VALGRIND_ERROR_EXIT: i32 = 99;

/// Dummy inputs created in every scratch directory.
const FIXTURE_FILES: [(&str, &str); 3] = [("input.txt", "hello world\n"), ("empty.txt", ""), ("test.db", "")];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArtifactKind {
    RightCode,
    ViolationCode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Monitor {
    Asan,
    Valgrind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeArtifact {
    pub kind: ArtifactKind,
    pub source_text: String,
    pub api_name: String,
    pub rule_id: Option<String>,
    pub repair_count: usize,
    pub build_log: String,
    pub run_log: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    CompileError,
    RuntimeError,
    Timeout,
    Success,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    pub phase: Phase,
    pub rem: Option<RuntimeErrorReport>,
    pub exit_code: Option<i32>,
    pub duration_sec: f64,
    /// Compiler diagnostics for `CompileError`, monitor output otherwise.
    pub log: String,
    pub monitor: Option<Monitor>,
}

impl ExecutionOutcome {
    fn compile_error(log: String, started: Instant) -> Self {
        ExecutionOutcome {
            phase: Phase::CompileError,
            rem: None,
            exit_code: None,
            duration_sec: started.elapsed().as_secs_f64(),
            log,
            monitor: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("C compiler `{0}` is not available")]
    ToolchainMissing(String),
    #[error("scratch directory {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("repair attempts exhausted after {} repairs", .0.artifact.repair_count)]
    RepairExhausted(Box<Exhausted>),
}

/// Final state of a repair loop that ran out of attempts.
#[derive(Debug)]
pub struct Exhausted {
    pub artifact: CodeArtifact,
    pub outcome: ExecutionOutcome,
    pub session: ChatSession,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub cc: String,
    pub valgrind: String,
    /// Monitors in consultation order; later ones run only on a clean run.
    pub monitors: Vec<Monitor>,
    pub timeout_sec: u64,
    pub max_repair_right: usize,
    pub max_repair_violation: usize,
    /// Keep scratch directories of successful runs.
    pub keep_scratch: bool,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            cc: std::env::var("CC").unwrap_or_else(|_| "cc".into()),
            valgrind: "valgrind".into(),
            monitors: vec![Monitor::Asan, Monitor::Valgrind],
            timeout_sec: DEFAULT_TIMEOUT_SEC,
            max_repair_right: DEFAULT_MAX_REPAIR_RIGHT,
            max_repair_violation: DEFAULT_MAX_REPAIR_VIOLATION,
            keep_scratch: false,
        }
    }
}

impl HarnessConfig {
    pub fn repair_cap(&self, kind: ArtifactKind) -> usize {
        match kind {
            ArtifactKind::RightCode => self.max_repair_right,
            ArtifactKind::ViolationCode => self.max_repair_violation,
        }
    }
}

fn tool_available(cmd: &str) -> bool {
    Command::new(cmd)
        .arg("--version")
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .status()
        .map(|s| s.success())
        .unwrap_or(false)
}

pub fn valgrind_available(cmd: &str) -> bool {
    static CACHE: OnceLock<std::sync::Mutex<std::collections::HashMap<String, bool>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    *cache.lock().unwrap().entry(cmd.to_string()).or_insert_with(|| tool_available(cmd))
}

/// A compiled program in its scratch directory.
#[derive(Debug, Clone)]
pub struct Binary {
    pub path: PathBuf,
    pub monitor: Monitor,
    pub dir: PathBuf,
}

pub struct Harness {
    config: HarnessConfig,
    library: LibraryConfig,
    scratch_root: PathBuf,
    monitors: Vec<Monitor>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

fn sanitize_component(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.' { c } else { '_' }).collect()
}

impl Harness {
    pub fn new(
        config: HarnessConfig,
        library: LibraryConfig,
        scratch_root: impl Into<PathBuf>,
    ) -> Result<Self, HarnessError> {
        if !tool_available(&config.cc) {
            return Err(HarnessError::ToolchainMissing(config.cc.clone()));
        }
        let monitors = config
            .monitors
            .iter()
            .copied()
            .filter(|m| {
                let ok = *m != Monitor::Valgrind || valgrind_available(&config.valgrind);
                if !ok {
                    log::warn!("valgrind not found; running with the sanitizer monitor only");
                }
                ok
            })
            .collect();
        Ok(Harness { config, library, scratch_root: scratch_root.into(), monitors })
    }

    pub fn config(&self) -> &HarnessConfig {
        &self.config
    }

    pub fn library(&self) -> &LibraryConfig {
        &self.library
    }

    pub fn active_monitors(&self) -> &[Monitor] {
        &self.monitors
    }

    /// Fresh scratch directory for one (api, rule, attempt). A stale
    /// directory of the same name from an earlier run is replaced.
    pub fn scratch_dir(&self, api: &str, tag: &str, attempt: usize) -> Result<PathBuf, HarnessError> {
        let dir =
            self.scratch_root.join(sanitize_component(api)).join(format!("{}-a{attempt}", sanitize_component(tag)));
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(io_err(&dir))?;
        }
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        for (name, content) in FIXTURE_FILES {
            let p = dir.join(name);
            fs::write(&p, content).map_err(io_err(&p))?;
        }
        Ok(dir)
    }

    fn build_command(&self, dir: &Path, monitor: Monitor, output: &str) -> Command {
        let mut cmd = Command::new(&self.config.cc);
        cmd.current_dir(dir);
        if monitor == Monitor::Asan {
            cmd.args(["-fsanitize=address", "-fno-omit-frame-pointer"]);
        }
        cmd.args(["-g", "-O0", "-o", output, PROGRAM_FILE]);
        for src in self.library.source_paths() {
            cmd.arg(src);
        }
        for inc in self.library.include_dirs() {
            cmd.arg(format!("-I{}", inc.display()));
        }
        cmd.args(&self.library.compile_flags);
        cmd.args(&self.library.link_flags);
        cmd.stdin(Stdio::null());
        cmd
    }

    /// Write `source` into `dir` and build it for `monitor`.
    pub fn compile(
        &self,
        source: &str,
        dir: &Path,
        monitor: Monitor,
    ) -> Result<(ExecutionOutcome, Option<Binary>), HarnessError> {
        let started = Instant::now();
        let src = dir.join(PROGRAM_FILE);
        fs::write(&src, source).map_err(io_err(&src))?;
        let output = match monitor {
            Monitor::Asan => "test.asan",
            Monitor::Valgrind => "test.plain",
        };
        let out = self
            .build_command(dir, monitor, output)
            .output()
            .map_err(|_| HarnessError::ToolchainMissing(self.config.cc.clone()))?;
        let mut log = String::from_utf8_lossy(&out.stderr).into_owned();
        log.push_str(&String::from_utf8_lossy(&out.stdout));
        if !out.status.success() {
            return Ok((ExecutionOutcome::compile_error(log, started), None));
        }
        let outcome = ExecutionOutcome {
            phase: Phase::Success,
            rem: None,
            exit_code: out.status.code(),
            duration_sec: started.elapsed().as_secs_f64(),
            log,
            monitor: Some(monitor),
        };
        Ok((outcome, Some(Binary { path: dir.join(output), monitor, dir: dir.to_path_buf() })))
    }

    /// Run a compiled binary under its monitor, bounded by the timeout.
    pub fn run_monitored(&self, binary: &Binary) -> Result<ExecutionOutcome, HarnessError> {
        let started = Instant::now();
        let mut cmd = match binary.monitor {
            Monitor::Asan => {
                let mut c = Command::new(&binary.path);
                c.env("ASAN_OPTIONS", "detect_leaks=1:handle_abort=1:symbolize=1:color=never");
                c
            }
            Monitor::Valgrind => {
                let mut c = Command::new(&self.config.valgrind);
                c.args([
                    "-q",
                    "--leak-check=full",
                    "--show-leak-kinds=definite",
                    "--errors-for-leak-kinds=definite",
                    &format!("--error-exitcode={VALGRIND_ERROR_EXIT}"),
                ]);
                c.arg(&binary.path);
                c
            }
        };
        let stdout_path = binary.dir.join("stdout.txt");
        let stderr_path = binary.dir.join("stderr.txt");
        let stdout = fs::File::create(&stdout_path).map_err(io_err(&stdout_path))?;
        let stderr = fs::File::create(&stderr_path).map_err(io_err(&stderr_path))?;
        cmd.current_dir(&binary.dir).stdin(Stdio::null()).stdout(stdout).stderr(stderr);
        let mut child = cmd.spawn().map_err(io_err(&binary.path))?;
        let timeout = Duration::from_secs(self.config.timeout_sec);
        let status = child.wait_timeout(timeout).map_err(io_err(&binary.path))?;
        let status = match status {
            Some(s) => s,
            None => {
                let _ = child.kill();
                let _ = child.wait();
                return Ok(ExecutionOutcome {
                    phase: Phase::Timeout,
                    rem: None,
                    exit_code: None,
                    duration_sec: started.elapsed().as_secs_f64(),
                    log: format!("timed out after {} s", self.config.timeout_sec),
                    monitor: Some(binary.monitor),
                });
            }
        };
        let log = String::from_utf8_lossy(&fs::read(&stderr_path).unwrap_or_default()).into_owned();
        let signal = exit_signal(&status);
        let mut rem_report = rem::parse_rem(&log);
        if rem_report.error_kind == "unknown" {
            if let Some(sig) = signal {
                let text = format!("{SIGNAL_CRASH_PREFIX} terminated by signal {sig} ({})\n{log}", signal_name(sig));
                rem_report = rem::parse_rem(&text);
            }
        }
        let failed = rem_report.error_kind != "unknown";
        Ok(ExecutionOutcome {
            phase: if failed { Phase::RuntimeError } else { Phase::Success },
            rem: failed.then_some(rem_report),
            exit_code: status.code(),
            duration_sec: started.elapsed().as_secs_f64(),
            log,
            monitor: Some(binary.monitor),
        })
    }

    /// Build and run `source` under every active monitor until one reports
    /// an error. The scratch directory is removed after a clean run.
    pub fn execute(&self, source: &str, dir: &Path) -> Result<ExecutionOutcome, HarnessError> {
        let mut last = None;
        for &monitor in &self.monitors {
            let (built, binary) = self.compile(source, dir, monitor)?;
            let Some(binary) = binary else {
                return Ok(built);
            };
            let outcome = self.run_monitored(&binary)?;
            if outcome.phase != Phase::Success {
                return Ok(outcome);
            }
            last = Some(outcome);
        }
        let outcome = last.expect("at least one monitor");
        if !self.config.keep_scratch {
            let _ = fs::remove_dir_all(dir);
        }
        Ok(outcome)
    }

    /// Compile-and-run with LLM repair. Right code is repaired until it runs
    /// clean; violation code is repaired for compile errors only, since its
    /// runtime errors are the validation signal.
    pub fn repair_loop(
        &self,
        gateway: &Gateway,
        kind: ArtifactKind,
        mut session: ChatSession,
        initial_code: Option<String>,
        api_name: &str,
        tag: &str,
    ) -> Result<(CodeArtifact, ExecutionOutcome, ChatSession), HarnessError> {
        let cap = self.config.repair_cap(kind);
        let mut code = initial_code;
        let mut repairs = 0;
        loop {
            let dir = self.scratch_dir(api_name, tag, repairs)?;
            let outcome = match &code {
                Some(c) => self.execute(c, &dir)?,
                None => ExecutionOutcome::compile_error(
                    "the response did not contain a C program in a fenced code block".into(),
                    Instant::now(),
                ),
            };
            let done = match kind {
                ArtifactKind::RightCode => outcome.phase == Phase::Success,
                ArtifactKind::ViolationCode => code.is_some() && outcome.phase != Phase::CompileError,
            };
            let artifact = CodeArtifact {
                kind,
                source_text: code.clone().unwrap_or_default(),
                api_name: api_name.to_string(),
                rule_id: (kind == ArtifactKind::ViolationCode).then(|| tag.to_string()),
                repair_count: repairs,
                build_log: if outcome.phase == Phase::CompileError { outcome.log.clone() } else { String::new() },
                run_log: if outcome.phase == Phase::CompileError { String::new() } else { outcome.log.clone() },
            };
            if done || outcome.phase == Phase::Timeout && kind == ArtifactKind::ViolationCode {
                return Ok((artifact, outcome, session));
            }
            if repairs >= cap {
                return Err(HarnessError::RepairExhausted(Box::new(Exhausted { artifact, outcome, session })));
            }
            let (stage, feedback) = self.feedback_for(&outcome, &dir);
            let user_text = match prompt::build_repair_prompt(&session, &feedback, stage) {
                Ok(p) => p.user_text,
                Err(_) => format!("Output the complete program in a single ```c fenced block.\n{feedback}"),
            };
            let reply = gateway.send(&mut session, &user_text)?;
            code = prompt::extract_program(&reply);
            repairs += 1;
        }
    }

    fn feedback_for(&self, outcome: &ExecutionOutcome, dir: &Path) -> (RepairStage, String) {
        let stage = if outcome.phase == Phase::CompileError { RepairStage::Compile } else { RepairStage::Runtime };
        let text = if outcome.log.trim().is_empty() {
            match outcome.phase {
                Phase::Timeout => format!("the program did not finish within {} seconds", self.config.timeout_sec),
                _ => "the program failed without diagnostic output".into(),
            }
        } else {
            outcome.log.clone()
        };
        (stage, scrub_feedback(&text, dir, &self.library.root))
    }
}

#[cfg(unix)]
fn exit_signal(status: &std::process::ExitStatus) -> Option<i32> {
    use std::os::unix::process::ExitStatusExt;
    status.signal()
}

#[cfg(not(unix))]
fn exit_signal(_status: &std::process::ExitStatus) -> Option<i32> {
    None
}

fn signal_name(sig: i32) -> &'static str {
    match sig {
        4 => "SIGILL",
        6 => "SIGABRT",
        7 => "SIGBUS",
        8 => "SIGFPE",
        9 => "SIGKILL",
        11 => "SIGSEGV",
        _ => "signal",
    }
}

/// Remove run-specific noise from feedback so repair prompts are stable:
/// scratch and library paths, process ids and addresses.
pub fn scrub_feedback(text: &str, scratch: &Path, library_root: &Path) -> String {
    static PID: OnceLock<Regex> = OnceLock::new();
    static HEX: OnceLock<Regex> = OnceLock::new();
    let pid = PID.get_or_init(|| Regex::new(r"==\d+==").unwrap());
    let hex = HEX.get_or_init(|| Regex::new(r"0x[0-9a-fA-F]{6,}").unwrap());
    let mut t = text.to_string();
    for (root, label) in [(scratch, "."), (library_root, "<library>")] {
        if let Some(s) = root.to_str().filter(|s| !s.is_empty()) {
            t = t.replace(&format!("{s}/"), &format!("{label}/"));
            t = t.replace(s, label);
        }
    }
    let t = pid.replace_all(&t, "==PID==");
    hex.replace_all(&t, "0xADDR").into_owned()
}
