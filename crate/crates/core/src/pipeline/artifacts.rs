//! Run-directory persistence. A run directory is the unit of
//! reproducibility: `netlist.nl` (canonical copy), `candidates.ndjson`,
//! `weights.json`, `evaluations.ndjson` (the append-only evaluation cache),
//! `model.json`, `report.json` (byte-deterministic given a deterministic
//! backend), and `meta.json` (timestamps, timings, digests — everything that
//! legitimately varies between identical runs).

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::anneal::Candidate;
use crate::eval::PpaRecord;
use crate::netlist::{serialize_netlist, Netlist, Partition};

use super::PipelineError;

pub const SCHEMA_VERSION: u32 = 1;

pub const NETLIST_FILE: &str = "netlist.nl";
pub const CANDIDATES_FILE: &str = "candidates.ndjson";
pub const WEIGHTS_FILE: &str = "weights.json";
pub const EVALUATIONS_FILE: &str = "evaluations.ndjson";
pub const MODEL_FILE: &str = "model.json";
pub const REPORT_FILE: &str = "report.json";
pub const META_FILE: &str = "meta.json";
pub const SWEEP_FILE: &str = "sweep.json";
pub const SEEDS_FILE: &str = "seeds_summary.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    let hash = Sha256::digest(bytes);
    hash.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn netlist_digest(netlist: &Netlist) -> String {
    sha256_hex(serialize_netlist(netlist).as_bytes())
}

/// Canonical digest of one tier assignment, independent of everything else.
pub fn assignment_digest(partition: &Partition) -> String {
    let mut text = String::new();
    for (id, tier) in partition.assignment() {
        text.push_str(id);
        text.push(' ');
        text.push_str(if tier.index() == 0 { "0" } else { "1" });
        text.push('\n');
    }
    sha256_hex(text.as_bytes())
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> PipelineError + '_ {
    move |e| PipelineError::Io { path: path.to_path_buf(), detail: e.to_string() }
}

pub fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_text(path: &Path) -> Result<String, PipelineError> {
    fs::read_to_string(path).map_err(io_err(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| PipelineError::Json { path: path.to_path_buf(), detail: e.to_string() })?;
    write_text(path, &(text + "\n"))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, PipelineError> {
    let text = read_text(path)?;
    serde_json::from_str(&text)
        .map_err(|e| PipelineError::Json { path: path.to_path_buf(), detail: e.to_string() })
}

// ---- candidates.ndjson ----

#[derive(Debug, Serialize, Deserialize)]
pub struct CandidatesHeader {
    pub schema_version: u32,
    pub kind: String,
    pub design: String,
    pub count: usize,
    pub feature_dim: usize,
}

pub fn write_candidates(
    dir: &Path,
    netlist: &Netlist,
    candidates: &[Candidate],
    feature_dim: usize,
) -> Result<(), PipelineError> {
    let path = dir.join(CANDIDATES_FILE);
    let mut text = String::new();
    let header = CandidatesHeader {
        schema_version: SCHEMA_VERSION,
        kind: "candidates".into(),
        design: netlist.name().to_string(),
        count: candidates.len(),
        feature_dim,
    };
    text.push_str(&serde_json::to_string(&header).expect("header serializes"));
    text.push('\n');
    for candidate in candidates {
        let line = serde_json::to_string(candidate)
            .map_err(|e| PipelineError::Json { path: path.clone(), detail: e.to_string() })?;
        text.push_str(&line);
        text.push('\n');
    }
    write_text(&path, &text)
}

pub fn read_candidates(dir: &Path) -> Result<(CandidatesHeader, Vec<Candidate>), PipelineError> {
    let path = dir.join(CANDIDATES_FILE);
    let text = read_text(&path)?;
    let mut lines = text.lines();
    let header_line = lines.next().ok_or_else(|| PipelineError::Integrity {
        detail: format!("{}: empty file", path.display()),
    })?;
    let header: CandidatesHeader = serde_json::from_str(header_line)
        .map_err(|e| PipelineError::Json { path: path.clone(), detail: e.to_string() })?;
    let mut candidates = Vec::with_capacity(header.count);
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        candidates.push(
            serde_json::from_str(line)
                .map_err(|e| PipelineError::Json { path: path.clone(), detail: e.to_string() })?,
        );
    }
    if candidates.len() != header.count {
        return Err(PipelineError::Integrity {
            detail: format!(
                "{}: header promises {} candidates, file holds {}",
                path.display(),
                header.count,
                candidates.len()
            ),
        });
    }
    Ok((header, candidates))
}

// ---- weights.json ----

#[derive(Debug, Serialize, Deserialize)]
pub struct WeightEntry {
    pub uid: u64,
    pub weight: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct WeightsDoc {
    pub schema_version: u32,
    pub iterations: usize,
    pub gap: f64,
    pub ridge: f64,
    pub converged: bool,
    pub support_size: usize,
    pub log_det: Option<f64>,
    pub weights: Vec<WeightEntry>,
}

// ---- evaluations.ndjson: the persistent evaluation cache ----

#[derive(Debug, Serialize, Deserialize)]
struct EvaluationsHeader {
    schema_version: u32,
    kind: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct EvaluationRow {
    netlist: String,
    assignment: String,
    record: PpaRecord,
}

/// Keyed by (netlist digest, assignment digest, backend tag): re-runs and
/// sweeps over the same directory never pay for an evaluation twice.
pub struct EvalCache {
    path: PathBuf,
    entries: BTreeMap<(String, String, String), PpaRecord>,
}

impl EvalCache {
    pub fn open(dir: &Path) -> Result<Self, PipelineError> {
        let path = dir.join(EVALUATIONS_FILE);
        let mut entries = BTreeMap::new();
        if path.exists() {
            let text = read_text(&path)?;
            let mut lines = text.lines();
            let header = lines.next().unwrap_or_default();
            let _: EvaluationsHeader = serde_json::from_str(header)
                .map_err(|e| PipelineError::Json { path: path.clone(), detail: e.to_string() })?;
            for line in lines {
                if line.trim().is_empty() {
                    continue;
                }
                let row: EvaluationRow = serde_json::from_str(line)
                    .map_err(|e| PipelineError::Json { path: path.clone(), detail: e.to_string() })?;
                entries.insert(
                    (row.netlist, row.assignment, row.record.backend.clone()),
                    row.record,
                );
            }
        } else {
            let header = EvaluationsHeader {
                schema_version: SCHEMA_VERSION,
                kind: "evaluations".into(),
            };
            write_text(&path, &(serde_json::to_string(&header).expect("header serializes") + "\n"))?;
        }
        Ok(EvalCache { path, entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Returns the cached record rewritten to carry `uid` — uids are
    /// run-local while cache keys are content-addressed.
    pub fn get(
        &self,
        netlist_digest: &str,
        assignment_digest: &str,
        backend_tag: &str,
        uid: u64,
    ) -> Option<PpaRecord> {
        self.entries
            .get(&(
                netlist_digest.to_string(),
                assignment_digest.to_string(),
                backend_tag.to_string(),
            ))
            .map(|record| {
                let mut out = record.clone();
                out.candidate_uid = uid;
                out
            })
    }

    pub fn insert(
        &mut self,
        netlist_digest: &str,
        assignment_digest: &str,
        record: PpaRecord,
    ) -> Result<(), PipelineError> {
        let row = EvaluationRow {
            netlist: netlist_digest.to_string(),
            assignment: assignment_digest.to_string(),
            record,
        };
        let line = serde_json::to_string(&row)
            .map_err(|e| PipelineError::Json { path: self.path.clone(), detail: e.to_string() })?;
        let mut file = OpenOptions::new()
            .append(true)
            .open(&self.path)
            .map_err(io_err(&self.path))?;
        writeln!(file, "{line}").map_err(io_err(&self.path))?;
        self.entries.insert(
            (row.netlist, row.assignment, row.record.backend.clone()),
            row.record,
        );
        Ok(())
    }
}

// ---- meta.json ----

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct StageTimings {
    pub anneal_s: f64,
    pub design_s: f64,
    pub coreset_eval_s: f64,
    pub fit_s: f64,
    pub rank_s: f64,
    pub verify_eval_s: f64,
    pub select_s: f64,
    pub total_s: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MetaDoc {
    pub schema_version: u32,
    pub created_unix_ms: u128,
    pub host_os: String,
    pub host_arch: String,
    pub netlist_digest: String,
    pub config_digest: String,
    pub backend_tag: String,
    pub timings: StageTimings,
    /// Σ of per-evaluation wall seconds over this run's evaluated set — the
    /// serial-cost estimate the parallel pool amortizes.
    pub cpu_seconds: f64,
    pub artifact_digests: BTreeMap<String, String>,
}

/// Digests every other artifact in the directory so later tampering is
/// detectable. Call last.
pub fn write_meta(dir: &Path, mut meta: MetaDoc) -> Result<(), PipelineError> {
    let mut digests = BTreeMap::new();
    for name in [
        NETLIST_FILE,
        CANDIDATES_FILE,
        WEIGHTS_FILE,
        EVALUATIONS_FILE,
        MODEL_FILE,
        REPORT_FILE,
        SWEEP_FILE,
        SEEDS_FILE,
    ] {
        let path = dir.join(name);
        if path.exists() {
            digests.insert(name.to_string(), sha256_hex(read_text(&path)?.as_bytes()));
        }
    }
    meta.artifact_digests = digests;
    write_json(&dir.join(META_FILE), &meta)
}

/// Re-reads every digested artifact and compares. Any mismatch — including a
/// single flipped byte in the evaluations log — is an integrity error.
pub fn verify_artifacts(dir: &Path) -> Result<MetaDoc, PipelineError> {
    let meta: MetaDoc = read_json(&dir.join(META_FILE))?;
    for (name, expected) in &meta.artifact_digests {
        let path = dir.join(name);
        if !path.exists() {
            return Err(PipelineError::MissingArtifact { path });
        }
        let actual = sha256_hex(read_text(&path)?.as_bytes());
        if &actual != expected {
            return Err(PipelineError::Integrity {
                detail: format!("{name}: digest mismatch (artifact modified after the run)"),
            });
        }
    }
    Ok(meta)
}

pub fn now_unix_ms() -> u128 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}
