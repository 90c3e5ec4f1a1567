//! Command-line front end.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{Arc, Mutex};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use globset::{Glob, GlobSetBuilder};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{self, ApiRecord, Library, LibraryConfig};
use crate::detect::{self, Compiled, ScanOptions};
use crate::harness::{Harness, HarnessConfig};
use crate::llm::{self, BackendChoice, ChatBackend, Gateway, GatewayConfig, ProviderConfig, ReplayBackend, Transcript};
use crate::pipeline::classify::Category;
use crate::pipeline::store::{load_rules, RuleStore, RuleStoreRecord, StoreFilter};
use crate::pipeline::{self, ApiCheckpoint, CheckpointBudget, PipelineContext, PipelineError, Stage, VerdictKind};
use crate::prompt::DEFAULT_TOKEN_CEILING;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const API_INDEX_FILE: &str = "api_index.json";
pub const DEFAULT_STORE_FILE: &str = "rules.jsonl";
pub const DEFAULT_RUN_DIR: &str = "apsrgen-run";

/// Exit status when `--fail-on-findings` is set and findings exist.
pub const EXIT_FINDINGS: u8 = 3;
/// Exit status of a run stopped by the checkpoint budget.
pub const EXIT_INTERRUPTED: u8 = 75;

#[derive(Debug, Parser)]
#[command(name = "apsrgen", version, about = "API parameter security rule generation and misuse detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the API index of a library into the run directory.
    Extract(LibraryArgs),
    /// Generate raw rules for each selected API.
    Generate(StageArgs),
    /// Validate generated rules with compiled right/violation programs.
    Validate(StageArgs),
    /// Cluster validated rules, refine them and write the rule store.
    Refine(StageArgs),
    /// Run generation, validation and refinement, then write the rule store.
    Pipeline(StageArgs),
    /// Scan application sources with the rules of a store.
    Detect(DetectArgs),
    /// Summarize a rule store.
    Report(ReportArgs),
}

#[derive(Debug, Args, Clone)]
pub struct LibraryArgs {
    /// Library directory containing library.toml.
    #[arg(long)]
    pub library: PathBuf,
    /// Comma-separated API names or glob patterns; default is every listed API.
    #[arg(long, value_delimiter = ',')]
    pub apis: Vec<String>,
    #[arg(long, default_value = DEFAULT_RUN_DIR)]
    pub run_dir: PathBuf,
    /// TOML settings file.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct StageArgs {
    #[command(flatten)]
    pub library: LibraryArgs,
    /// Serve model responses from a transcript instead of the provider.
    #[arg(long, conflicts_with = "record")]
    pub replay: Option<PathBuf>,
    /// Call the provider and record every exchange to this transcript.
    #[arg(long)]
    pub record: Option<PathBuf>,
    #[arg(long)]
    pub max_repair_right: Option<usize>,
    #[arg(long)]
    pub max_repair_violation: Option<usize>,
    #[arg(long)]
    pub timeout_sec: Option<u64>,
    /// Concurrent API workers.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Rule store path; default is rules.jsonl in the run directory.
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// Stop after writing this many checkpoints (for resume testing).
    #[arg(long, hide = true)]
    pub stop_after_checkpoints: Option<usize>,
}

#[derive(Debug, Args, Clone)]
pub struct DetectArgs {
    /// Application source directory.
    #[arg(long)]
    pub app: PathBuf,
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// Library directory; supplies release_api_map and may_fail_allocators.
    #[arg(long)]
    pub library: Option<PathBuf>,
    #[arg(long, default_value = DEFAULT_RUN_DIR)]
    pub run_dir: PathBuf,
    /// Also write one query file per compiled rule.
    #[arg(long)]
    pub emit_ql: bool,
    #[arg(long)]
    pub fail_on_findings: bool,
}

#[derive(Debug, Args, Clone)]
pub struct ReportArgs {
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long, default_value = DEFAULT_RUN_DIR)]
    pub run_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSettings {
    pub token_ceiling: usize,
    pub jobs: usize,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        PipelineSettings { token_ceiling: DEFAULT_TOKEN_CEILING, jobs: 1 }
    }
}

/// Contents of the `--config` file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub provider: ProviderConfig,
    pub llm: GatewayConfig,
    pub harness: HarnessConfig,
    pub pipeline: PipelineSettings,
}

impl AppConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(AppConfig::default()),
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("{}: invalid settings", p.display()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub library_id: String,
    pub apis: Vec<String>,
    pub stages: BTreeMap<String, Stage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<PathBuf>,
    pub config_digest: String,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))
}

fn to_json(v: &impl Serialize) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

/// APIs of `list` matching any of `patterns`, in list order.
pub fn select_apis(list: &[String], patterns: &[String]) -> Result<Vec<String>> {
    if patterns.is_empty() {
        return Ok(list.to_vec());
    }
    let mut b = GlobSetBuilder::new();
    for p in patterns.iter().filter(|p| !p.trim().is_empty()) {
        b.add(Glob::new(p.trim()).with_context(|| format!("invalid --apis pattern `{p}`"))?);
    }
    let set = b.build()?;
    Ok(list.iter().filter(|a| set.is_match(a.as_str())).cloned().collect())
}

fn extract_records(library: &Library, apis: &[String]) -> (Vec<ApiRecord>, Vec<String>) {
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for api in apis {
        match corpus::extract_api_record(&library.units, &library.config, api) {
            Ok(r) => ok.push(r),
            Err(e) => {
                log::warn!("{e}");
                failed.push(format!("{api}: {e}"));
            }
        }
    }
    (ok, failed)
}

fn cmd_extract(args: &LibraryArgs) -> Result<ExitCode> {
    let library = Library::open(&args.library)?;
    let apis = select_apis(&library.config.api_list, &args.apis)?;
    let mut records = Vec::new();
    for api in &apis {
        records.push(corpus::extract_api_record(&library.units, &library.config, api)?);
    }
    let path = args.run_dir.join(API_INDEX_FILE);
    write_atomic(&path, &to_json(&records))?;
    println!("{} API record(s) written to {}", records.len(), path.display());
    Ok(ExitCode::SUCCESS)
}

fn checkpoint_path(run_dir: &Path, api: &str) -> PathBuf {
    run_dir.join("checkpoints").join(format!("{api}.json"))
}

fn digest(parts: &impl Serialize) -> String {
    let bytes = serde_json::to_vec(parts).expect("serializable");
    hex::encode(Sha256::digest(bytes))
}

fn cmd_stages(args: &StageArgs, until: Stage, require: Option<Stage>, write_store: bool) -> Result<ExitCode> {
    let lib_args = &args.library;
    let mut settings = AppConfig::load(lib_args.config.as_deref())?;
    if let Some(n) = args.max_repair_right {
        settings.harness.max_repair_right = n;
    }
    if let Some(n) = args.max_repair_violation {
        settings.harness.max_repair_violation = n;
    }
    if let Some(t) = args.timeout_sec {
        settings.harness.timeout_sec = t;
    }
    if let Some(j) = args.jobs {
        settings.pipeline.jobs = j;
    }
    let library = Library::open(&lib_args.library)?;
    let selected = select_apis(&library.config.api_list, &lib_args.apis)?;
    let (records, failed) = extract_records(&library, &selected);
    let run_dir = &lib_args.run_dir;
    fs::create_dir_all(run_dir).with_context(|| format!("creating {}", run_dir.display()))?;
    let run_dir = run_dir.canonicalize()?;
    write_atomic(&run_dir.join(API_INDEX_FILE), &to_json(&records))?;

    let config_digest = digest(&(
        &library.config,
        &selected,
        &settings.harness,
        &settings.llm,
        &settings.provider.model,
        settings.pipeline.token_ceiling,
    ));
    let manifest_path = run_dir.join(MANIFEST_FILE);
    let mut manifest = if manifest_path.exists() {
        let m: RunManifest = serde_json::from_slice(&fs::read(&manifest_path)?)
            .with_context(|| format!("{}: invalid manifest", manifest_path.display()))?;
        if m.config_digest != config_digest {
            bail!(
                "{} was created with different settings (digest {} != {}); use a new --run-dir",
                run_dir.display(),
                m.config_digest,
                config_digest
            );
        }
        m
    } else {
        RunManifest {
            run_id: format!("run-{}", &config_digest[..12]),
            library_id: library.config.library_id.clone(),
            apis: selected.clone(),
            stages: BTreeMap::new(),
            transcript: None,
            config_digest: config_digest.clone(),
        }
    };
    manifest.transcript = args.replay.clone().or_else(|| args.record.clone());

    let mut resume = BTreeMap::new();
    for r in &records {
        let p = checkpoint_path(&run_dir, &r.api_name);
        if p.exists() {
            let ck: ApiCheckpoint = serde_json::from_slice(&fs::read(&p)?)
                .with_context(|| format!("{}: invalid checkpoint", p.display()))?;
            resume.insert(r.api_name.clone(), ck);
        }
    }
    if let Some(req) = require {
        let missing: Vec<&str> = records
            .iter()
            .filter(|r| resume.get(&r.api_name).is_none_or(|c| c.stage < req))
            .map(|r| r.api_name.as_str())
            .collect();
        if !missing.is_empty() {
            bail!("no {req:?} checkpoint for: {}", missing.join(", "));
        }
    }

    let (backend, created_at): (Arc<dyn ChatBackend>, String) = match (&args.replay, &args.record) {
        (Some(path), _) => {
            let t = Transcript::load(path)?;
            let at = t.header.recorded_at.clone();
            (Arc::new(ReplayBackend::new(t)), at)
        }
        (None, Some(path)) => (llm::build_backend(&BackendChoice::Record(path.clone()), &settings.provider)?, now()),
        (None, None) => (llm::build_backend(&BackendChoice::Live, &settings.provider)?, now()),
    };
    let gateway = Gateway::new(backend, settings.llm.clone());
    let harness = Harness::new(settings.harness.clone(), library.config.clone(), run_dir.join("scratch"))?;
    let ctx = PipelineContext {
        config: &library.config,
        symbols: library.symbols(),
        gateway: &gateway,
        harness: &harness,
        run_dir: run_dir.clone(),
        token_ceiling: settings.pipeline.token_ceiling,
    };
    write_atomic(&manifest_path, &to_json(&manifest))?;
    let manifest = Mutex::new(manifest);
    let budget = CheckpointBudget::new(args.stop_after_checkpoints);
    let sink = |ck: &ApiCheckpoint| -> Result<(), PipelineError> {
        let p = checkpoint_path(&run_dir, &ck.api_name);
        pipeline::write_file(&p, &to_json(ck))?;
        {
            let mut m = manifest.lock().unwrap();
            m.stages.insert(ck.api_name.clone(), ck.stage);
            pipeline::write_file(&manifest_path, &to_json(&*m))?;
        }
        budget.tick()
    };
    let results = match pipeline::run_apis(&ctx, &records, resume, until, settings.pipeline.jobs, &sink) {
        Ok(r) => r,
        Err(PipelineError::Interrupted(n)) => {
            eprintln!("interrupted after {n} checkpoint(s); rerun the same command to resume");
            return Ok(ExitCode::from(EXIT_INTERRUPTED));
        }
        Err(e) => return Err(e.into()),
    };

    for ck in &results {
        println!(
            "{:<24} {:<10} raw={} concrete={} status={}",
            ck.api_name,
            format!("{:?}", ck.stage),
            ck.raw.len(),
            ck.concrete.len(),
            if ck.status.is_empty() { "-" } else { &ck.status }
        );
    }
    for f in &failed {
        println!("skipped {f}");
    }
    if write_store {
        let store_path = args.store.clone().unwrap_or_else(|| run_dir.join(DEFAULT_STORE_FILE));
        let store = RuleStore::open(&store_path)?;
        let mut n = 0;
        for ck in &results {
            for rec in pipeline::records_for(ck, &library.config.library_id, gateway.backend_kind(), &created_at) {
                store.persist(rec)?;
                n += 1;
            }
        }
        println!("{n} record(s) in {}", store_path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

fn cmd_detect(args: &DetectArgs) -> Result<ExitCode> {
    let store_path = args.store.clone().unwrap_or_else(|| args.run_dir.join(DEFAULT_STORE_FILE));
    let records = load_rules(&store_path, &StoreFilter::default())?;
    let config = match &args.library {
        Some(dir) => LibraryConfig::load(dir)?,
        None => LibraryConfig::from_toml("library_id = \"\"\napi_list = []\n", ".")?,
    };
    let mut rules = Vec::new();
    let mut not_compilable = Vec::new();
    for rec in &records {
        let RuleStoreRecord::Concrete(c) = rec else { continue };
        match detect::compile_rule(&c.rule, &config) {
            Compiled::Rule(r) => rules.push(r),
            Compiled::NotCompilable { rule_id, reason } => not_compilable.push((rule_id, reason)),
        }
    }
    let opts = ScanOptions { may_fail_allocators: config.may_fail_allocators.iter().cloned().collect() };
    let app = args.app.canonicalize().with_context(|| format!("reading {}", args.app.display()))?;
    let units = corpus::parse_tree(&app)?;
    let mut report = detect::scan_application(&units, &rules, &opts);
    report.not_compilable = not_compilable;
    for f in &mut report.findings {
        if let Ok(rel) = Path::new(&f.file).strip_prefix(&app) {
            f.file = rel.display().to_string();
        }
    }
    let out_dir = args.run_dir.join("detect");
    write_atomic(&out_dir.join("report.txt"), report.to_text().as_bytes())?;
    write_atomic(&out_dir.join("findings.jsonl"), report.to_jsonl().as_bytes())?;
    if args.emit_ql {
        let qdir = out_dir.join("queries");
        let mut written = BTreeSet::new();
        for r in &rules {
            let name = detect::query_file_name(r);
            if !written.insert(name.clone()) {
                log::warn!("{name} already written; rule {} shares its pattern", r.source_rule_id);
                continue;
            }
            write_atomic(&qdir.join(&name), detect::emit_query_file(r, &opts)?.as_bytes())?;
        }
        println!("{} query file(s) written to {}", written.len(), qdir.display());
    }
    print!("{}", report.to_text());
    if args.fail_on_findings && !report.findings.is_empty() {
        return Ok(ExitCode::from(EXIT_FINDINGS));
    }
    Ok(ExitCode::SUCCESS)
}

/// Text summary of a store: verdicts, categories and per-API cost.
pub fn summarize_store(records: &[RuleStoreRecord]) -> String {
    let mut verdicts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut categories: BTreeMap<Category, usize> = Category::ALL.iter().map(|c| (*c, 0)).collect();
    let mut raw = 0;
    let mut concrete = 0;
    let mut out = String::new();
    for v in [VerdictKind::Validated, VerdictKind::Rejected, VerdictKind::Unverifiable] {
        verdicts.insert(v.as_str(), 0);
    }
    for r in records {
        match r {
            RuleStoreRecord::Raw(x) => {
                raw += 1;
                *verdicts.entry(x.verdict.as_str()).or_default() += 1;
            }
            RuleStoreRecord::Concrete(c) => {
                concrete += 1;
                *categories.entry(c.rule.category).or_default() += 1;
            }
            RuleStoreRecord::ApiSummary(_) => {}
        }
    }
    out.push_str(&format!("raw rules: {raw}\n"));
    for (k, v) in &verdicts {
        out.push_str(&format!("  {k:<13} {v}\n"));
    }
    out.push_str(&format!("concrete rules: {concrete}\n"));
    for (k, v) in &categories {
        out.push_str(&format!("  {:<13} {v}\n", k.as_str()));
    }
    out.push_str(&format!(
        "\n{:<24} {:<24} {:>4} {:>8} {:>8} {:>13} {:>17}  {}\n",
        "api", "status", "raw", "concrete", "requests", "prompt_tokens", "completion_tokens", "backend"
    ));
    for r in records {
        if let RuleStoreRecord::ApiSummary(s) = r {
            out.push_str(&format!(
                "{:<24} {:<24} {:>4} {:>8} {:>8} {:>13} {:>17}  {}\n",
                s.api_name,
                s.status,
                s.raw_rules,
                s.concrete_rules,
                s.requests,
                s.prompt_tokens,
                s.completion_tokens,
                s.backend
            ));
        }
    }
    out
}

fn cmd_report(args: &ReportArgs) -> Result<ExitCode> {
    let path = args.store.clone().unwrap_or_else(|| args.run_dir.join(DEFAULT_STORE_FILE));
    if !path.exists() {
        bail!("rule store {} does not exist", path.display());
    }
    let records = load_rules(&path, &StoreFilter::default())?;
    print!("{}", summarize_store(&records));
    Ok(ExitCode::SUCCESS)
}

pub fn run(cli: Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Extract(a) => cmd_extract(a),
        Command::Generate(a) => cmd_stages(a, Stage::Generated, None, false),
        Command::Validate(a) => cmd_stages(a, Stage::Validated, Some(Stage::Generated), false),
        Command::Refine(a) => cmd_stages(a, Stage::Refined, Some(Stage::Validated), true),
        Command::Pipeline(a) => cmd_stages(a, Stage::Refined, None, true),
        Command::Detect(a) => cmd_detect(a),
        Command::Report(a) => cmd_report(a),
    }
}

pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("APSRGEN_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn api_globs_keep_list_order() {
        let list: Vec<String> = ["b_open", "a_close", "b_put"].iter().map(|s| s.to_string()).collect();
        assert_eq!(select_apis(&list, &["b_*".into()]).unwrap(), vec!["b_open", "b_put"]);
        assert_eq!(select_apis(&list, &[]).unwrap(), list);
        assert!(select_apis(&list, &["zz".into()]).unwrap().is_empty());
    }

    #[test]
    fn settings_file_keys() {
        let cfg: AppConfig = toml::from_str(
            "[harness]\ntimeout_sec = 3\n[llm]\nrequest_cap_per_api = 7\n[llm.temperature]\nright_code = 0.5\n[pipeline]\njobs = 2\n",
        )
        .unwrap();
        assert_eq!(cfg.harness.timeout_sec, 3);
        assert_eq!(cfg.harness.max_repair_right, 10);
        assert_eq!(cfg.llm.request_cap_per_api, 7);
        assert_eq!(cfg.pipeline.jobs, 2);
        assert!(toml::from_str::<AppConfig>("[harness]\nbogus = 1\n").is_err());
    }

    #[test]
    fn report_partitions_counts() {
        let text = summarize_store(&[]);
        assert!(text.contains("raw rules: 0"));
        assert!(text.contains("requests"));
    }
}
