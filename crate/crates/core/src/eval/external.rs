//! External-command backend. Each evaluation writes a candidate file, runs a
//! user-supplied shell command template with `{input}`/`{output}` substituted,
//! and parses the metrics file the command produced. Every attempt runs in
//! its own fresh working directory so concurrent evaluations (and retries)
//! can never trample each other's files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use super::{EvalBackend, EvalError, MetricSchema, PpaRecord};
use crate::anneal::Candidate;
use crate::netlist::Netlist;

/// Overrides the configured timeout when set to a positive number of seconds.
pub const TIMEOUT_ENV: &str = "DOPP_EVAL_TIMEOUT_S";

const POLL_INTERVAL: Duration = Duration::from_millis(2);

pub struct ExternalCommand {
    template: String,
    netlist_path: PathBuf,
    schema: MetricSchema,
    timeout: Duration,
    /// Extra attempts after the first on nonzero exit. 2 means up to 3 runs.
    retries: u32,
    workdir: PathBuf,
    call_counter: AtomicU64,
}

impl ExternalCommand {
    pub fn new(
        template: impl Into<String>,
        netlist_path: impl Into<PathBuf>,
        schema: MetricSchema,
    ) -> Result<Self, EvalError> {
        let template = template.into();
        if !template.contains("{input}") || !template.contains("{output}") {
            return Err(EvalError::BadTemplate);
        }
        Ok(ExternalCommand {
            template,
            // the command runs inside the attempt directory, so every path it
            // is handed must survive that cwd change
            netlist_path: absolutize(netlist_path.into()),
            schema,
            timeout: Duration::from_secs(600),
            retries: 2,
            workdir: std::env::temp_dir(),
            call_counter: AtomicU64::new(0),
        })
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_retries(mut self, retries: u32) -> Self {
        self.retries = retries;
        self
    }

    /// Base directory under which per-attempt directories are created.
    pub fn with_workdir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.workdir = absolutize(dir.into());
        self
    }

    fn effective_timeout(&self) -> Duration {
        if let Ok(raw) = std::env::var(TIMEOUT_ENV) {
            if let Ok(seconds) = raw.trim().parse::<f64>() {
                if seconds.is_finite() && seconds > 0.0 {
                    return Duration::from_secs_f64(seconds);
                }
            }
        }
        self.timeout
    }

    fn candidate_file_text(&self, candidate: &Candidate) -> String {
        let mut text = String::new();
        writeln!(text, "netlist {}", self.netlist_path.display()).unwrap();
        writeln!(text, "candidate {}", candidate.uid).unwrap();
        for (macro_id, tier) in candidate.partition.assignment() {
            writeln!(text, "assign {} {}", macro_id, tier.index()).unwrap();
        }
        text
    }

    /// One command run in a dedicated directory. Ok(None) = nonzero exit
    /// (retryable); Ok(Some) = parsed metrics.
    fn run_once(
        &self,
        candidate: &Candidate,
        attempt_dir: &Path,
        deadline: Duration,
    ) -> Result<Option<BTreeMap<String, f64>>, EvalError> {
        let uid = candidate.uid;
        let io_err = |e: std::io::Error| EvalError::Io { uid, detail: e.to_string() };

        fs::create_dir_all(attempt_dir).map_err(io_err)?;
        let input_path = attempt_dir.join("candidate.txt");
        let output_path = attempt_dir.join("metrics.txt");
        fs::write(&input_path, self.candidate_file_text(candidate)).map_err(io_err)?;

        let command = self
            .template
            .replace("{input}", &shell_quote(&input_path))
            .replace("{output}", &shell_quote(&output_path));

        let stdout = fs::File::create(attempt_dir.join("stdout.log")).map_err(io_err)?;
        let stderr = fs::File::create(attempt_dir.join("stderr.log")).map_err(io_err)?;
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&command)
            .current_dir(attempt_dir)
            .stdin(Stdio::null())
            .stdout(stdout)
            .stderr(stderr)
            .spawn()
            .map_err(io_err)?;

        let started = Instant::now();
        let status = loop {
            match child.try_wait().map_err(io_err)? {
                Some(status) => break status,
                None => {
                    if started.elapsed() >= deadline {
                        let _ = child.kill();
                        let _ = child.wait();
                        return Err(EvalError::Timeout { uid, seconds: deadline.as_secs_f64() });
                    }
                    std::thread::sleep(POLL_INTERVAL);
                }
            }
        };

        if !status.success() {
            return Ok(None);
        }
        let text = fs::read_to_string(&output_path).map_err(|e| EvalError::MalformedMetrics {
            uid,
            detail: format!("cannot read metrics file: {e}"),
        })?;
        parse_metrics_text(&text, &self.schema, uid).map(Some)
    }
}

impl EvalBackend for ExternalCommand {
    fn evaluate(&self, _netlist: &Netlist, candidate: &Candidate) -> Result<PpaRecord, EvalError> {
        let start = Instant::now();
        let deadline = self.effective_timeout();
        let call = self.call_counter.fetch_add(1, Ordering::Relaxed);
        let attempts = self.retries + 1;
        let mut last_stderr = String::new();
        for attempt in 0..attempts {
            let attempt_dir = self.workdir.join(format!(
                "dopp-eval-p{}-c{}-u{}-a{}",
                std::process::id(),
                call,
                candidate.uid,
                attempt
            ));
            match self.run_once(candidate, &attempt_dir, deadline)? {
                Some(metrics) => {
                    return Ok(PpaRecord {
                        candidate_uid: candidate.uid,
                        metrics,
                        backend: self.tag(),
                        wall_seconds: start.elapsed().as_secs_f64(),
                    });
                }
                None => {
                    last_stderr = fs::read_to_string(attempt_dir.join("stderr.log"))
                        .unwrap_or_default()
                        .chars()
                        .take(400)
                        .collect();
                }
            }
        }
        Err(EvalError::CommandFailed {
            uid: candidate.uid,
            attempts,
            detail: if last_stderr.is_empty() {
                "nonzero exit".to_string()
            } else {
                format!("nonzero exit; stderr: {}", last_stderr.trim())
            },
        })
    }

    fn tag(&self) -> String {
        use sha2::{Digest, Sha256};
        let hash = Sha256::digest(self.template.as_bytes());
        let hex: String = hash.iter().take(8).map(|b| format!("{b:02x}")).collect();
        format!("external:{hex}")
    }
}

fn absolutize(path: PathBuf) -> PathBuf {
    if path.is_absolute() {
        path
    } else {
        std::env::current_dir().map(|cwd| cwd.join(&path)).unwrap_or(path)
    }
}

fn shell_quote(path: &Path) -> String {
    let raw = path.to_string_lossy();
    format!("'{}'", raw.replace('\'', r"'\''"))
}

/// Parses `metric <name> <value>` lines. Blank lines are allowed; anything
/// else — wrong keyword, wrong arity, duplicate names, unparseable or
/// non-finite values — is malformed. Every schema metric must be present;
/// extra metrics are kept in the record.
pub(crate) fn parse_metrics_text(
    text: &str,
    schema: &MetricSchema,
    uid: u64,
) -> Result<BTreeMap<String, f64>, EvalError> {
    let malformed = |detail: String| EvalError::MalformedMetrics { uid, detail };
    let mut metrics = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 3 || tokens[0] != "metric" {
            return Err(malformed(format!(
                "line {}: expected `metric <name> <value>`, got `{line}`",
                lineno + 1
            )));
        }
        let name = tokens[1].to_string();
        let value: f64 = tokens[2]
            .parse()
            .map_err(|_| malformed(format!("line {}: bad value `{}`", lineno + 1, tokens[2])))?;
        if !value.is_finite() {
            return Err(malformed(format!("line {}: non-finite value for `{name}`", lineno + 1)));
        }
        if metrics.insert(name.clone(), value).is_some() {
            return Err(malformed(format!("duplicate metric `{name}`")));
        }
    }
    for def in schema.metrics() {
        if !metrics.contains_key(&def.name) {
            return Err(malformed(format!("missing metric `{}`", def.name)));
        }
    }
    Ok(metrics)
}
