//! Fixture loaders shared by the integration test targets.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use apsrgen::consistency::LocationRelation;
use apsrgen::corpus::{self, ApiRecord, Library, SourceUnit};
use apsrgen::prompt::RawApsr;
use apsrgen::rem::{self, RuntimeErrorReport};
use serde::Deserialize;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn minidb() -> PathBuf {
    fixtures().join("minidb")
}

pub fn transcript() -> PathBuf {
    minidb().join("transcript.jsonl")
}

pub fn library() -> Library {
    Library::open(&minidb()).expect("fixture library loads")
}

pub fn symbols() -> BTreeSet<String> {
    library().symbols()
}

#[derive(Debug, Clone, Deserialize)]
pub struct RemLabel {
    pub file: String,
    pub program: String,
    pub api: String,
    pub related: bool,
    pub cluster: String,
    pub note: String,
}

#[derive(Deserialize)]
struct RemLabels {
    report: Vec<RemLabel>,
}

pub struct RemCase {
    pub label: RemLabel,
    pub report: RuntimeErrorReport,
    pub unit: SourceUnit,
}

pub fn rem_cases() -> Vec<RemCase> {
    let dir = fixtures().join("rem");
    let labels: RemLabels = toml::from_str(&std::fs::read_to_string(dir.join("labels.toml")).unwrap()).unwrap();
    labels
        .report
        .into_iter()
        .map(|label| {
            let text = std::fs::read_to_string(dir.join("reports").join(&label.file)).unwrap();
            let src = std::fs::read(dir.join("programs").join(&label.program)).unwrap();
            RemCase { report: rem::parse_rem(&text), unit: corpus::parse_c_unit("test.c", &src).unwrap(), label }
        })
        .collect()
}

/// Whether the configured C compiler can be run.
pub fn have_cc() -> bool {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    std::process::Command::new(cc).arg("--version").output().map(|o| o.status.success()).unwrap_or(false)
}

pub fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, Deserialize)]
pub struct ConsistencyLabel {
    pub dir: String,
    pub api: String,
    pub param_count: usize,
    pub param_index: usize,
    pub rule_text: String,
    pub consistent: bool,
    pub c_para: Option<usize>,
    pub c_loc: LocationRelation,
}

#[derive(Deserialize)]
struct ConsistencyLabels {
    case: Vec<ConsistencyLabel>,
}

pub struct ConsistencyCase {
    pub label: ConsistencyLabel,
    pub right: String,
    pub violation: String,
    pub api: ApiRecord,
    pub rule: RawApsr,
}

pub fn consistency_cases() -> Vec<ConsistencyCase> {
    let dir = fixtures().join("consistency");
    let labels: ConsistencyLabels = toml::from_str(&read(&dir.join("labels.toml"))).unwrap();
    labels
        .case
        .into_iter()
        .map(|label| {
            let api = ApiRecord {
                api_name: label.api.clone(),
                param_count: label.param_count,
                param_names: (1..=label.param_count).map(|i| format!("p{i}")).collect(),
                variadic: false,
                declaration: String::new(),
                source_body: String::new(),
                helpers: Vec::new(),
                required_headers: Vec::new(),
                library_id: "fixture".into(),
                source_file: String::new(),
            };
            let rule = RawApsr {
                api_name: label.api.clone(),
                param_index: label.param_index,
                rule_text: label.rule_text.clone(),
                violation_example: None,
            };
            ConsistencyCase {
                right: read(&dir.join(&label.dir).join("right.c")),
                violation: read(&dir.join(&label.dir).join("violation.c")),
                api,
                rule,
                label,
            }
        })
        .collect()
}

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_apsrgen"))
}

/// Run the CLI with `args`; panics if it cannot be spawned.
pub fn cli(args: &[&str]) -> std::process::Output {
    std::process::Command::new(bin()).args(args).env("APSRGEN_LOG", "error").output().expect("cli runs")
}

/// `pipeline` over the fixture library with the committed transcript.
pub fn replay_pipeline(run_dir: &Path, extra: &[&str]) -> std::process::Output {
    let lib = minidb();
    let tr = transcript();
    let mut args = vec![
        "pipeline",
        "--library",
        lib.to_str().unwrap(),
        "--replay",
        tr.to_str().unwrap(),
        "--run-dir",
        run_dir.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    cli(&args)
}
