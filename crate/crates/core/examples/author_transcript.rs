//! Regenerates `fixtures/minidb/transcript.jsonl` by running the pipeline over
//! the mini library with scripted model answers behind a recording backend.
//!
//! Run with `cargo run -p apsrgen --example author_transcript`.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use apsrgen::corpus::Library;
use apsrgen::harness::{Harness, HarnessConfig};
use apsrgen::llm::{
    ChatBackend, Gateway, GatewayConfig, Message, RecordingBackend, ScriptedBackend, TaskKind, TranscriptHeader,
};
use apsrgen::pipeline::{self, PipelineContext, Stage};
use apsrgen::prompt::DEFAULT_TOKEN_CEILING;

const PREAMBLE: &str = "#include <stdio.h>\n#include <stdlib.h>\n\n#include \"mini_db.h\"\n\n";

fn program(body: &str) -> String {
    format!("{PREAMBLE}int main(void)\n{{\n{body}}}\n")
}

const OPEN_RIGHT: &str = "    mini_db *db = NULL;
    if (mini_open(\"test.db\", &db) != 0) {
        mini_close(db);
        return 1;
    }
    printf(\"opened %s\\n\", db->name);
    mini_close(db);
    return 0;
";

const PUT_RIGHT: &str = "    mini_db *db = NULL;
    if (mini_open(\"test.db\", &db) != 0) {
        mini_close(db);
        return 1;
    }
    if (mini_put(db, \"key\") < 0) {
        mini_close(db);
        return 1;
    }
    mini_close(db);
    return 0;
";

const CTX_INIT_RIGHT: &str = "    mini_ctx ctx;
    int n = mini_ctx_init(&ctx, 4);
    printf(\"%d %d\\n\", n, mini_ctx_sum(&ctx));
    return 0;
";

const CTX_SUM_RIGHT: &str = "    mini_ctx ctx;
    mini_ctx_init(&ctx, 4);
    int sum = mini_ctx_sum(&ctx);
    printf(\"sum=%d\\n\", sum);
    return 0;
";

fn close_right() -> String {
    format!(
        "{PREAMBLE}static mini_db *db;\n\nint main(void)\n{{\n    if (mini_open(\"test.db\", &db) != 0) {{\n        mini_close(db);\n        return 1;\n    }}\n    mini_close(db);\n    return 0;\n}}\n"
    )
}

fn right_code(api: &str) -> String {
    match api {
        "mini_open" => program(OPEN_RIGHT),
        "mini_close" => close_right(),
        "mini_put" => program(PUT_RIGHT),
        "mini_ctx_init" => program(CTX_INIT_RIGHT),
        _ => program(CTX_SUM_RIGHT),
    }
}

fn violation_code(api: &str) -> String {
    match api {
        "mini_open" => program(&OPEN_RIGHT.replacen("    mini_close(db);\n    return 0;", "    return 0;", 1)),
        "mini_close" => {
            close_right().replacen("    mini_close(db);\n    return 0;", "    mini_close(NULL);\n    return 0;", 1)
        }
        "mini_put" => program(&PUT_RIGHT.replacen(
            "    if (mini_put(db, \"key\") < 0) {",
            "    mini_close(db);\n    if (mini_put(db, \"key\") < 0) {",
            1,
        )),
        "mini_ctx_init" => program(&CTX_INIT_RIGHT.replacen("mini_ctx_init(&ctx, 4)", "mini_ctx_init(NULL, 4)", 1)),
        _ => program(&CTX_SUM_RIGHT.replacen("    mini_ctx_init(&ctx, 4);\n", "", 1)),
    }
}

/// (param, raw rule, refined rule) per API.
fn rules(api: &str) -> (usize, &'static str, &'static str) {
    match api {
        "mini_open" => (
            2,
            "Parameter 2 (out) must be released by calling mini_close after it is no longer needed.",
            "Parameter 2 must be released by calling mini_close after calling mini_open when it is no longer needed.",
        ),
        "mini_close" => (1, "Parameter 1 (db) must not be NULL when calling mini_close.", ""),
        "mini_put" => (
            1,
            "Parameter 1 (db) must not be closed by calling mini_close before calling mini_put.",
            "Parameter 1 must not be closed by calling mini_close before calling mini_put.",
        ),
        "mini_ctx_init" => {
            (1, "Parameter 1 (ctx) must not be NULL.", "Parameter 1 must not be NULL when calling mini_ctx_init.")
        }
        _ => (
            1,
            "Parameter 1 (ctx) must be initialized by calling mini_ctx_init before calling mini_ctx_sum.",
            "Parameter 1 must be initialized by calling mini_ctx_init before calling mini_ctx_sum.",
        ),
    }
}

fn fenced(code: &str) -> String {
    format!("```c\n{code}```\n")
}

fn api_in(text: &str) -> Option<String> {
    let key = "C library API `";
    let start = text.find(key)? + key.len();
    let end = text[start..].find('`')?;
    Some(text[start..start + end].to_string())
}

fn api_in_declaration(text: &str) -> Option<String> {
    let decl = &text[text.find("API declaration:")?..];
    let paren = decl.find('(')?;
    let head = &decl[..paren];
    Some(head.rsplit(|c: char| !(c.is_alphanumeric() || c == '_')).next()?.to_string())
}

fn param_in(text: &str) -> Option<usize> {
    let key = "Focus only on Parameter ";
    let start = text.find(key)? + key.len();
    text[start..].split(' ').next()?.parse().ok()
}

fn respond(task: TaskKind, msgs: &[Message]) -> Option<String> {
    let user = &msgs.last()?.content;
    match task {
        TaskKind::RawGeneration => {
            let api = api_in(user)?;
            let idx = param_in(user)?;
            let (p, raw, _) = rules(&api);
            if idx != p {
                return Some(format!(
                    "1. `{api}` is part of the mini database library.\n2. Parameter {idx} is only forwarded.\n3. NO RULES\n"
                ));
            }
            Some(format!(
                "1. `{api}` is part of the mini database library.\n2. Parameter {idx} is used by the lines shown above.\n3. Rules:\nRULE: {raw}\n{}",
                fenced(&violation_code(&api))
            ))
        }
        TaskKind::RightCode => {
            let api = api_in(user)?;
            Some(format!("1. The API must be called with valid arguments.\n2. Program:\n{}", fenced(&right_code(&api))))
        }
        TaskKind::ViolationCode => {
            if msgs.iter().filter(|m| m.content.contains("API declaration:")).count() != 1 || msgs.len() > 2 {
                return None;
            }
            let api = api_in_declaration(user)?;
            Some(format!("Modified program:\n{}", fenced(&violation_code(&api))))
        }
        TaskKind::Refinement => {
            let api = api_in(user)?;
            let (p, _, refined) = rules(&api);
            Some(format!(
                "1. The runtime error originates inside `{api}`.\n2. The key operation concerns Parameter {p}.\nRULE: Parameter {p}: {refined}\n"
            ))
        }
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/minidb");
    let out = root.join("transcript.jsonl");
    let library = Library::open(&root)?;
    let records = library.extract_all()?;
    let header = TranscriptHeader {
        transcript_version: 1,
        provider: "scripted".into(),
        model: "fixture-author".into(),
        recorded_at: "2026-01-01T00:00:00Z".into(),
    };
    let scripted: Arc<dyn ChatBackend> = Arc::new(ScriptedBackend::new(respond));
    let backend = Arc::new(RecordingBackend::create(scripted, &out, &header)?);
    let gateway = Gateway::new(backend.clone(), GatewayConfig::default());
    let work = tempfile::tempdir()?;
    let harness = Harness::new(HarnessConfig::default(), library.config.clone(), work.path().join("scratch"))?;
    let ctx = PipelineContext {
        config: &library.config,
        symbols: library.symbols(),
        gateway: &gateway,
        harness: &harness,
        run_dir: work.path().to_path_buf(),
        token_ceiling: DEFAULT_TOKEN_CEILING,
    };
    let results = pipeline::run_apis(&ctx, &records, BTreeMap::new(), Stage::Refined, 1, &|_| Ok(()))?;
    for ck in &results {
        println!("{}: {} concrete, status {}", ck.api_name, ck.concrete.len(), ck.status);
        for r in &ck.results {
            println!("  {} {:?} {:?}", r.rule_id, r.verdict.kind, r.verdict.evidence);
        }
    }
    println!("{} exchanges recorded to {}", backend.records().len(), out.display());
    Ok(())
}
