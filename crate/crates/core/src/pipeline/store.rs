//! Append-only JSON Lines rule store.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::classify::Category;
use super::{Evidence, VerdictKind};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("record id `{0}` already exists with different content")]
    DuplicateId(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub raw_rule_ids: Vec<String>,
    pub cluster_signature: String,
    /// Run-directory relative paths of the C_r/C_v artifacts.
    pub artifact_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConcreteApsr {
    pub rule_id: String,
    pub api_name: String,
    pub param_index: usize,
    pub rule_text: String,
    pub category: Category,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRuleRecord {
    pub schema_version: u32,
    pub rule_id: String,
    pub library_id: String,
    pub api_name: String,
    pub param_index: usize,
    pub rule_text: String,
    pub violation_example: Option<String>,
    pub verdict: VerdictKind,
    pub evidence: Evidence,
    pub artifacts: Vec<String>,
    pub created_at: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConcreteRecord {
    pub schema_version: u32,
    pub library_id: String,
    #[serde(flatten)]
    pub rule: ConcreteApsr,
    /// Verdicts of the raw rules this rule was refined from.
    pub verdict_trail: Vec<String>,
    pub created_at: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiSummaryRecord {
    pub schema_version: u32,
    pub rule_id: String,
    pub library_id: String,
    pub api_name: String,
    pub status: String,
    pub param_count: usize,
    pub raw_rules: usize,
    pub concrete_rules: usize,
    pub backend: String,
    pub requests: usize,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub notes: Vec<String>,
    pub created_at: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum RuleStoreRecord {
    Raw(RawRuleRecord),
    Concrete(ConcreteRecord),
    ApiSummary(ApiSummaryRecord),
}

impl RuleStoreRecord {
    pub fn id(&self) -> &str {
        match self {
            RuleStoreRecord::Raw(r) => &r.rule_id,
            RuleStoreRecord::Concrete(r) => &r.rule.rule_id,
            RuleStoreRecord::ApiSummary(r) => &r.rule_id,
        }
    }

    fn set_id(&mut self, id: String) {
        match self {
            RuleStoreRecord::Raw(r) => r.rule_id = id,
            RuleStoreRecord::Concrete(r) => r.rule.rule_id = id,
            RuleStoreRecord::ApiSummary(r) => r.rule_id = id,
        }
    }

    pub fn library_id(&self) -> &str {
        match self {
            RuleStoreRecord::Raw(r) => &r.library_id,
            RuleStoreRecord::Concrete(r) => &r.library_id,
            RuleStoreRecord::ApiSummary(r) => &r.library_id,
        }
    }

    pub fn api_name(&self) -> &str {
        match self {
            RuleStoreRecord::Raw(r) => &r.api_name,
            RuleStoreRecord::Concrete(r) => &r.rule.api_name,
            RuleStoreRecord::ApiSummary(r) => &r.api_name,
        }
    }
}

/// Record filter; `category` selects concrete rules only and `verdict` raw
/// rules only.
#[derive(Debug, Clone, Default)]
pub struct StoreFilter {
    pub library: Option<String>,
    pub api: Option<String>,
    pub category: Option<Category>,
    pub verdict: Option<VerdictKind>,
}

impl StoreFilter {
    pub fn matches(&self, r: &RuleStoreRecord) -> bool {
        if self.library.as_deref().is_some_and(|l| l != r.library_id()) {
            return false;
        }
        if self.api.as_deref().is_some_and(|a| a != r.api_name()) {
            return false;
        }
        if let Some(c) = self.category {
            if !matches!(r, RuleStoreRecord::Concrete(cr) if cr.rule.category == c) {
                return false;
            }
        }
        if let Some(v) = self.verdict {
            if !matches!(r, RuleStoreRecord::Raw(raw) if raw.verdict == v) {
                return false;
            }
        }
        true
    }
}

struct State {
    file: File,
    lines: HashMap<String, String>,
    next_seq: u64,
}

pub struct RuleStore {
    path: PathBuf,
    state: Mutex<State>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

fn read_records(path: &Path) -> Result<Vec<(RuleStoreRecord, String)>, StoreError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: RuleStoreRecord = serde_json::from_str(line).map_err(|e| StoreError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((rec, line.to_string()));
    }
    Ok(out)
}

impl RuleStore {
    /// Open or create the store; existing records reserve their ids.
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        let existing = read_records(path)?;
        let mut lines = HashMap::new();
        let mut next_seq = 1;
        for (rec, line) in existing {
            if let Some(n) = rec.id().strip_prefix('r').and_then(|n| n.parse::<u64>().ok()) {
                next_seq = next_seq.max(n + 1);
            }
            lines.insert(rec.id().to_string(), line);
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
        Ok(RuleStore { path: path.to_path_buf(), state: Mutex::new(State { file, lines, next_seq }) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Append one record. An empty id is replaced by the next `r<seq>`.
    /// Re-persisting an identical record is a no-op; a different record
    /// under an existing id is an error.
    pub fn persist(&self, mut record: RuleStoreRecord) -> Result<String, StoreError> {
        let mut state = self.state.lock().unwrap();
        if record.id().is_empty() {
            loop {
                let id = format!("r{}", state.next_seq);
                state.next_seq += 1;
                if !state.lines.contains_key(&id) {
                    record.set_id(id);
                    break;
                }
            }
        }
        let line = serde_json::to_string(&record).expect("records serialize");
        let id = record.id().to_string();
        if let Some(existing) = state.lines.get(&id) {
            if *existing == line {
                return Ok(id);
            }
            return Err(StoreError::DuplicateId(id));
        }
        let mut buf = line.clone();
        buf.push('\n');
        state.file.write_all(buf.as_bytes()).and_then(|_| state.file.flush()).map_err(io_err(&self.path))?;
        state.lines.insert(id.clone(), line);
        Ok(id)
    }
}

pub fn load_rules(path: &Path, filter: &StoreFilter) -> Result<Vec<RuleStoreRecord>, StoreError> {
    Ok(read_records(path)?.into_iter().map(|(r, _)| r).filter(|r| filter.matches(r)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(id: &str, api: &str) -> RuleStoreRecord {
        RuleStoreRecord::ApiSummary(ApiSummaryRecord {
            schema_version: SCHEMA_VERSION,
            rule_id: id.into(),
            library_id: "lib".into(),
            api_name: api.into(),
            status: "ok".into(),
            param_count: 1,
            raw_rules: 0,
            concrete_rules: 0,
            backend: "replay".into(),
            requests: 1,
            prompt_tokens: 0,
            completion_tokens: 0,
            notes: vec![],
            created_at: "t".into(),
        })
    }

    #[test]
    fn write_then_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rules.jsonl");
        let store = RuleStore::open(&path).unwrap();
        let rec = summary("a#summary", "a");
        store.persist(rec.clone()).unwrap();
        assert_eq!(load_rules(&path, &StoreFilter::default()).unwrap(), vec![rec]);
        let line = fs::read_to_string(&path).unwrap();
        assert!(line.starts_with("{\"record\":\"api_summary\",\"schema_version\":1,"));
    }

    #[test]
    fn ids_assigned_and_duplicates_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rules.jsonl");
        let store = RuleStore::open(&path).unwrap();
        assert_eq!(store.persist(summary("", "a")).unwrap(), "r1");
        assert_eq!(store.persist(summary("", "b")).unwrap(), "r2");
        assert_eq!(store.persist(summary("x", "a")).unwrap(), "x");
        assert_eq!(store.persist(summary("x", "a")).unwrap(), "x");
        assert!(matches!(store.persist(summary("x", "b")), Err(StoreError::DuplicateId(_))));
        drop(store);
        let reopened = RuleStore::open(&path).unwrap();
        assert_eq!(reopened.persist(summary("", "c")).unwrap(), "r3");
        let only_a = StoreFilter { api: Some("a".into()), ..Default::default() };
        assert_eq!(load_rules(&path, &only_a).unwrap().len(), 2);
    }

    #[test]
    fn parse_errors_carry_location() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rules.jsonl");
        fs::write(&path, "{\"record\":\"raw\"}\n").unwrap();
        let err = load_rules(&path, &StoreFilter::default()).unwrap_err();
        assert!(err.to_string().contains("rules.jsonl:1:"), "{err}");
    }
}
