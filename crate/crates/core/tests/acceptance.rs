//! Acceptance criteria, one line of output per criterion.
//!
//! Runs without the libtest harness so each criterion reports a single
//! PASS/FAIL line; any failure makes the target exit non-zero.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, ensure, Result};
use apsrgen::consistency::{self, LocationRelation};
use apsrgen::corpus::{self, LibraryConfig};
use apsrgen::detect::{self, Compiled, DetectionRule, Pattern, ScanOptions};
use apsrgen::harness::{ArtifactKind, Harness, HarnessConfig, HarnessError, Monitor, Phase};
use apsrgen::llm::{
    ChatBackend, ChatRequest, ChatResponse, Gateway, GatewayConfig, LlmError, RecordingBackend, ReplayBackend,
    ScriptedBackend, TaskKind, Transcript, TranscriptHeader,
};
use apsrgen::pipeline::{classify_text, load_rules, Category, Evidence, RuleStoreRecord, StoreFilter, VerdictKind};
use apsrgen::rem::{self, ClusterMember, ErrorSignature};

type Check = fn() -> Result<String>;

fn main() {
    let criteria: [(&str, Check); 9] = [
        ("REM classification", c1_rem_classification),
        ("signature normalization", c2_signatures),
        ("consistency checker", c3_consistency),
        ("end-to-end replay", c4_end_to_end),
        ("validation semantics", c5_validation),
        ("detector", c6_detector),
        ("template emission", c7_templates),
        ("caps and temperatures", c8_caps),
        ("classification", c9_classification),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|p| Err(anyhow!("panicked: {}", panic_text(&p))));
        match outcome {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail})", i + 1),
            Err(e) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({e:#})", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn panic_text(p: &Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default()
}

fn require_toolchain() -> Result<()> {
    ensure!(common::have_cc(), "a C compiler is required");
    ensure!(apsrgen::harness::valgrind_available("valgrind"), "valgrind is required");
    Ok(())
}

fn fixture_harness(scratch: &Path) -> Result<Harness> {
    Ok(Harness::new(HarnessConfig::default(), common::library().config.clone(), scratch)?)
}

fn c1_rem_classification() -> Result<String> {
    let symbols = common::symbols();
    let started = Instant::now();
    let cases = common::rem_cases();
    let mut wrong = Vec::new();
    for case in &cases {
        let got = rem::api_relatedness(&case.report, &case.label.api, &case.unit, &symbols);
        if got.is_related() != case.label.related {
            wrong.push(case.label.file.clone());
        }
    }
    let elapsed = started.elapsed();
    ensure!(cases.len() >= 20, "only {} labeled reports", cases.len());
    ensure!(cases.iter().any(|c| c.label.file.starts_with("strlen_interceptor")), "interceptor case missing");
    let internal = cases.iter().filter(|c| c.label.related).count();
    ensure!(internal >= 3, "only {internal} API-internal crashes");
    ensure!(wrong.is_empty(), "mislabeled: {wrong:?}");
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(format!("{}/{} in {elapsed:.0?}", cases.len(), cases.len()))
}

const SEEDED_KINDS: [&str; 5] = ["open_leak_a", "put_uaf_a", "ctx_init_null_a", "ctx_sum_uninit_a", "helper_overflow"];

fn live_signature(h: &Harness, program: &str, run: usize) -> Result<(ErrorSignature, String)> {
    let src = common::read(&common::fixtures().join("rem/programs").join(format!("{program}.c")));
    let dir = h.scratch_dir(program, "sig", run)?;
    let out = h.execute(&src, &dir)?;
    ensure!(out.phase == Phase::RuntimeError, "{program} ran as {:?}", out.phase);
    let report = out.rem.ok_or_else(|| anyhow!("{program}: no report"))?;
    Ok((rem::normalize_signature(&report, &common::symbols()), report.raw_text))
}

fn c2_signatures() -> Result<String> {
    require_toolchain()?;
    let tmp = tempfile::tempdir()?;
    let h = fixture_harness(tmp.path())?;
    let (first, raw_first) = live_signature(&h, "open_leak_a", 0)?;
    let (second, raw_second) = live_signature(&h, "open_leak_a", 1)?;
    ensure!(first == second, "leak signatures differ: {first} / {second}");
    ensure!(raw_first != raw_second, "raw reports are identical, so normalization was not exercised");

    let mut distinct = BTreeSet::new();
    for program in SEEDED_KINDS {
        let (sig, _) = live_signature(&h, program, 0)?;
        distinct.insert(sig.to_string());
    }
    ensure!(distinct.len() == SEEDED_KINDS.len(), "signatures collide: {distinct:?}");

    let symbols = common::symbols();
    let subset: Vec<_> = common::rem_cases().into_iter().filter(|c| !c.label.cluster.is_empty()).collect();
    ensure!(subset.len() == 12, "clustering subset has {} reports", subset.len());
    let members = subset
        .iter()
        .map(|c| ClusterMember {
            rule_id: c.label.file.clone(),
            param_index: 1,
            rule_text: String::new(),
            right_code: String::new(),
            violation_code: String::new(),
            rem: c.report.clone(),
        })
        .collect();
    let got: BTreeSet<BTreeSet<String>> = rem::cluster_by_signature(members, &symbols)
        .into_iter()
        .map(|c| c.members.into_iter().map(|m| m.rule_id).collect())
        .collect();
    let mut expected: BTreeMap<&str, BTreeSet<String>> = BTreeMap::new();
    for c in &subset {
        expected.entry(&c.label.cluster).or_default().insert(c.label.file.clone());
    }
    let expected: BTreeSet<BTreeSet<String>> = expected.into_values().collect();
    ensure!(got == expected, "partition differs: {got:?}");
    Ok(format!("leak stable across runs, {} kinds distinct, {} clusters", distinct.len(), expected.len()))
}

fn c3_consistency() -> Result<String> {
    let cases = common::consistency_cases();
    ensure!(cases.len() == 10, "{} fixtures", cases.len());
    let mut wrong = Vec::new();
    for case in &cases {
        let report = consistency::check_violation(&case.right, &case.violation, &case.api, &case.rule);
        let (para, loc) = report.code.map(|t| (t.c_para, t.c_loc)).unwrap_or((None, LocationRelation::Unknown));
        if report.consistent != case.label.consistent || para != case.label.c_para || loc != case.label.c_loc {
            wrong.push(case.label.dir.clone());
        }
    }
    ensure!(wrong.is_empty(), "mislabeled: {wrong:?}");
    Ok("10/10".into())
}

/// First pipeline run over the fixture library, shared by later criteria.
struct E2e {
    run_dir: PathBuf,
    store: Vec<RuleStoreRecord>,
    elapsed: Duration,
}

fn e2e() -> Result<&'static E2e> {
    static RUN: OnceLock<std::result::Result<E2e, String>> = OnceLock::new();
    RUN.get_or_init(|| {
        let go = || -> Result<E2e> {
            require_toolchain()?;
            let run_dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance-run");
            if run_dir.exists() {
                std::fs::remove_dir_all(&run_dir)?;
            }
            let started = Instant::now();
            let out = common::replay_pipeline(&run_dir, &[]);
            let elapsed = started.elapsed();
            ensure!(out.status.success(), "pipeline failed: {}", String::from_utf8_lossy(&out.stderr));
            let store = load_rules(&run_dir.join("rules.jsonl"), &StoreFilter::default())?;
            Ok(E2e { run_dir, store, elapsed })
        };
        go().map_err(|e| format!("{e:#}"))
    })
    .as_ref()
    .map_err(|e| anyhow!("{e}"))
}

fn raw_verdicts(store: &[RuleStoreRecord]) -> BTreeMap<String, (VerdictKind, Evidence)> {
    store
        .iter()
        .filter_map(|r| match r {
            RuleStoreRecord::Raw(r) => Some((r.rule_id.clone(), (r.verdict, r.evidence.clone()))),
            _ => None,
        })
        .collect()
}

fn c4_end_to_end() -> Result<String> {
    let first = e2e()?;
    let concrete: Vec<(String, usize)> = first
        .store
        .iter()
        .filter_map(|r| match r {
            RuleStoreRecord::Concrete(c) => Some((c.rule.api_name.clone(), c.rule.param_index)),
            _ => None,
        })
        .collect();
    let expected: Vec<(String, usize)> = [("mini_open", 2), ("mini_put", 1), ("mini_ctx_init", 1), ("mini_ctx_sum", 1)]
        .iter()
        .map(|(a, p)| (a.to_string(), *p))
        .collect();
    ensure!(concrete == expected, "concrete rules {concrete:?}");
    let verdicts = raw_verdicts(&first.store);
    let rejected: Vec<&String> =
        verdicts.iter().filter(|(_, (v, _))| *v == VerdictKind::Rejected).map(|(id, _)| id).collect();
    let validated = verdicts.values().filter(|(v, _)| *v == VerdictKind::Validated).count();
    ensure!(validated == 4, "{validated} validated raw rules");
    ensure!(rejected.len() == 1 && rejected[0].starts_with("mini_close#"), "rejected {rejected:?}");

    let tmp = tempfile::tempdir()?;
    let second_dir = tmp.path().join("run");
    let started = Instant::now();
    let out = common::replay_pipeline(&second_dir, &[]);
    let second_elapsed = started.elapsed();
    ensure!(out.status.success(), "second run failed");
    let a = std::fs::read(first.run_dir.join("rules.jsonl"))?;
    let b = std::fs::read(second_dir.join("rules.jsonl"))?;
    ensure!(a == b, "rule stores differ between runs");
    let slowest = first.elapsed.max(second_elapsed);
    ensure!(slowest < Duration::from_secs(120), "took {slowest:?}");
    Ok(format!("4 concrete, 1 rejected, byte-identical, {slowest:.1?}"))
}

fn c5_validation() -> Result<String> {
    let run = e2e()?;
    let verdicts = raw_verdicts(&run.store);
    let (kind, evidence) = verdicts.get("mini_close#p1.1").ok_or_else(|| anyhow!("no mini_close rule"))?;
    ensure!(*kind == VerdictKind::Rejected, "mini_close rule is {kind:?}");
    ensure!(matches!(evidence, Evidence::CleanRun { .. }), "evidence {evidence:?}");
    let (kind, evidence) = verdicts.get("mini_ctx_init#p1.1").ok_or_else(|| anyhow!("no mini_ctx_init rule"))?;
    ensure!(*kind == VerdictKind::Validated, "mini_ctx_init rule is {kind:?}");
    ensure!(matches!(evidence, Evidence::ApiRelatedRem { .. }), "evidence {evidence:?}");

    // Re-run the stored violation programs outside the pipeline.
    let tmp = tempfile::tempdir()?;
    let h = fixture_harness(tmp.path())?;
    let artifacts = run.run_dir.join("artifacts");
    let clean = common::read(&artifacts.join("mini_close/mini_close_p1.1.violation.c"));
    let out = h.execute(&clean, &h.scratch_dir("mini_close", "recheck", 0)?)?;
    ensure!(out.phase == Phase::Success, "rejected violation ran as {:?}", out.phase);
    let crash = common::read(&artifacts.join("mini_ctx_init/mini_ctx_init_p1.1.violation.c"));
    let out = h.execute(&crash, &h.scratch_dir("mini_ctx_init", "recheck", 0)?)?;
    let report = out.rem.ok_or_else(|| anyhow!("validated violation produced no report"))?;
    let top = report.frames.first().map(|f| f.function().to_string()).unwrap_or_default();
    ensure!(top == "mini_ctx_init", "crash top frame is `{top}`");
    Ok("clean-run rule rejected, in-library crash validated".into())
}

fn compiled_rules(store: &[RuleStoreRecord], config: &LibraryConfig) -> Result<Vec<DetectionRule>> {
    let mut rules = Vec::new();
    for rec in store {
        if let RuleStoreRecord::Concrete(c) = rec {
            match detect::compile_rule(&c.rule, config) {
                Compiled::Rule(r) => rules.push(r),
                Compiled::NotCompilable { rule_id, reason } => bail!("{rule_id} not compilable: {reason}"),
            }
        }
    }
    Ok(rules)
}

/// 1-based line of the single occurrence of `needle` in `text`.
fn line_of(text: &str, needle: &str) -> Result<usize> {
    let hits: Vec<usize> = text.lines().enumerate().filter(|(_, l)| l.contains(needle)).map(|(i, _)| i + 1).collect();
    match hits.as_slice() {
        [one] => Ok(*one),
        _ => bail!("`{needle}` occurs {} times", hits.len()),
    }
}

fn c6_detector() -> Result<String> {
    let run = e2e()?;
    let lib = common::minidb();
    let apps = common::fixtures().join("apps");
    let detect_dir = tempfile::tempdir()?;
    let store = run.run_dir.join("rules.jsonl");
    let scan = |app: &str| -> Result<Vec<serde_json::Value>> {
        let out_dir = detect_dir.path().join(app);
        let out = common::cli(&[
            "detect",
            "--app",
            apps.join(app).to_str().unwrap(),
            "--store",
            store.to_str().unwrap(),
            "--library",
            lib.to_str().unwrap(),
            "--run-dir",
            out_dir.to_str().unwrap(),
        ]);
        ensure!(out.status.success(), "detect failed: {}", String::from_utf8_lossy(&out.stderr));
        let text = std::fs::read_to_string(out_dir.join("detect/findings.jsonl"))?;
        text.lines().map(|l| Ok(serde_json::from_str(l)?)).collect()
    };
    let app_src = common::read(&apps.join("app/app.c"));
    let expected: BTreeSet<(String, u64)> = [
        ("MustNotPassValue", "mini_ctx_init(ctx, cap);"),
        ("MustCallAfter", "return rc;"),
        ("NotCalledBefore", "mini_put(db, key);"),
    ]
    .iter()
    .map(|(p, needle)| Ok((p.to_string(), line_of(&app_src, needle)? as u64)))
    .collect::<Result<_>>()?;
    let got: BTreeSet<(String, u64)> = scan("app")?
        .iter()
        .map(|f| {
            let pattern = f["pattern"].as_str().unwrap_or_default();
            let pattern = pattern.split('(').next().unwrap_or_default().to_string();
            (pattern, f["line"].as_u64().unwrap_or(0))
        })
        .collect();
    ensure!(got == expected, "findings {got:?}, expected {expected:?}");
    let clean = scan("app_clean")?;
    ensure!(clean.is_empty(), "{} findings on the clean app", clean.len());

    let config = LibraryConfig::load(&lib)?;
    let rules = compiled_rules(&run.store, &config)?;
    let opts = ScanOptions { may_fail_allocators: config.may_fail_allocators.iter().cloned().collect() };
    let malloc_line = "    mini_ctx *ctx = malloc(sizeof(*ctx));\n";
    ensure!(app_src.contains(malloc_line), "allocation line not found");
    let checked = app_src.replacen(malloc_line, &format!("{malloc_line}    if (ctx == NULL)\n        return -1;\n"), 1);
    let unit = corpus::parse_c_unit("app.c", checked.as_bytes())?;
    let report = detect::scan_application(&[unit], &rules, &opts);
    let null_findings =
        report.findings.iter().filter(|f| matches!(f.rule.pattern, Pattern::MustNotPassValue { .. })).count();
    ensure!(null_findings == 0, "inserted check left {null_findings} finding(s)");
    ensure!(report.findings.len() == 2, "other findings changed: {}", report.findings.len());
    Ok("3 seeded findings, 0 on clean twin, NULL check suppresses".into())
}

fn c7_templates() -> Result<String> {
    let rule = DetectionRule {
        pattern: Pattern::MustNotPassValue { api: "EVP_DigestInit".into(), param_index: 1, value: "NULL".into() },
        source_rule_id: "EVP_DigestInit#c1".into(),
    };
    let opts =
        ScanOptions { may_fail_allocators: ["EVP_MD_CTX_create".to_string(), "EVP_MD_CTX_new".to_string()].into() };
    let q = detect::emit_query_file(&rule, &opts)?;
    ensure!(q == detect::emit_query_file(&rule, &opts)?, "two emissions differ");
    let golden = common::read(&common::fixtures().join("ql/EVP_DigestInit_must_not_pass_value_1.ql"));
    ensure!(q == golden, "output differs from the committed query");
    ensure!(q.contains("hasName(\"EVP_DigestInit\")"), "API name missing");
    ensure!(q.contains("parameter 1 ") && q.contains("getArgument(0)"), "parameter index missing");
    ensure!(q.contains("predicate isNCheck(FunctionCall fc, int paramIndex)"), "check predicate missing");
    ensure!(q.contains("gc.controls(fc.getBasicBlock(), _)"), "guard-controls-call structure missing");
    ensure!(q.contains("not isNCheck(fc, 0)"), "negated check missing");
    Ok(format!("{} bytes, matches golden", q.len()))
}

/// Counts requests by task on the way to another backend.
struct Counting {
    inner: Arc<dyn ChatBackend>,
    seen: Mutex<Vec<TaskKind>>,
}

impl ChatBackend for Counting {
    fn complete(&self, request: &ChatRequest<'_>) -> std::result::Result<ChatResponse, LlmError> {
        self.seen.lock().unwrap().push(request.task);
        self.inner.complete(request)
    }

    fn kind(&self) -> &'static str {
        self.inner.kind()
    }
}

const BROKEN: &str = "```c\n#include \"mini_db.h\"\nint main(void) { return 0 }\n```\n";

/// Repairs performed before the loop gives up, and model requests made.
fn exhaust(backend: Arc<dyn ChatBackend>, kind: ArtifactKind, scratch: &Path) -> Result<(usize, usize)> {
    let counting = Arc::new(Counting { inner: backend, seen: Mutex::new(Vec::new()) });
    let gateway = Gateway::new(counting.clone(), GatewayConfig::default());
    let harness = Harness::new(
        HarnessConfig { monitors: vec![Monitor::Asan], ..HarnessConfig::default() },
        common::library().config.clone(),
        scratch,
    )?;
    let task = match kind {
        ArtifactKind::RightCode => TaskKind::RightCode,
        ArtifactKind::ViolationCode => TaskKind::ViolationCode,
    };
    let session = gateway.open_session(task, "mini_open");
    let initial = apsrgen::prompt::extract_program(BROKEN);
    match harness.repair_loop(&gateway, kind, session, initial, "mini_open", "cap") {
        Err(HarnessError::RepairExhausted(ex)) => {
            let requests = counting.seen.lock().unwrap().len();
            Ok((ex.artifact.repair_count, requests))
        }
        Err(e) => Err(e.into()),
        Ok((_, out, _)) => bail!("loop finished with {:?}", out.phase),
    }
}

fn c8_caps() -> Result<String> {
    ensure!(common::have_cc(), "a C compiler is required");
    let tmp = tempfile::tempdir()?;
    let header = TranscriptHeader {
        transcript_version: 1,
        provider: "scripted".into(),
        model: "always-broken".into(),
        recorded_at: "2026-01-01T00:00:00Z".into(),
    };
    let mut caps = Vec::new();
    for (kind, cap, name) in [(ArtifactKind::RightCode, 10, "right"), (ArtifactKind::ViolationCode, 5, "violation")] {
        let path = tmp.path().join(format!("{name}.jsonl"));
        let scripted: Arc<dyn ChatBackend> = Arc::new(ScriptedBackend::new(|_, _| Some(BROKEN.to_string())));
        let recorder: Arc<dyn ChatBackend> = Arc::new(RecordingBackend::create(scripted, &path, &header)?);
        let recorded = exhaust(recorder, kind, &tmp.path().join(format!("{name}-record")))?;
        let replay: Arc<dyn ChatBackend> = Arc::new(ReplayBackend::load(&path)?);
        let replayed = exhaust(replay, kind, &tmp.path().join(format!("{name}-replay")))?;
        ensure!(recorded == (cap, cap), "{name}: {recorded:?} repairs/requests, cap {cap}");
        ensure!(replayed == recorded, "{name}: replay gave {replayed:?}");
        caps.push(cap);
    }

    let transcript = Transcript::load(&common::transcript())?;
    let expected = [
        (TaskKind::RawGeneration, 0.0),
        (TaskKind::RightCode, 1.0),
        (TaskKind::ViolationCode, 0.0),
        (TaskKind::Refinement, 1.0),
    ];
    for (task, temp) in expected {
        let temps: BTreeSet<String> =
            transcript.records.iter().filter(|r| r.task == task).map(|r| r.temperature.to_string()).collect();
        ensure!(temps.len() == 1 && temps.contains(&temp.to_string()), "{} recorded at {temps:?}", task.as_str());
    }
    Ok(format!("repairs capped at {}/{}; temperatures 0/1/0/1", caps[0], caps[1]))
}

fn c9_classification() -> Result<String> {
    let cases = [
        ("len must not be a negative value", Category::Range),
        ("ppDb parameter MUST NOT be null", Category::Null),
        ("must not be freed before", Category::ActionNotDo),
        ("The handle should be kept near the kitchen", Category::Others),
    ];
    for (text, expected) in cases {
        let got = classify_text(text);
        ensure!(got == expected, "`{text}` classified as {got}");
    }
    Ok("Range, NULL, ActionNotDo, Others".into())
}
