#![allow(dead_code)]

use std::path::{Path, PathBuf};

use apsrgen::pipeline::{
    classify_text, ConcreteApsr, ConcreteRecord, Provenance, RuleStore, RuleStoreRecord, SCHEMA_VERSION,
};

pub fn core_fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

/// A store holding concrete rules for three of the mini library's APIs.
pub fn write_store(path: &Path) {
    let store = RuleStore::open(path).unwrap();
    let rules = [
        ("mini_ctx_init", 1, "Parameter 1 must not be NULL when calling mini_ctx_init."),
        (
            "mini_open",
            2,
            "Parameter 2 must be released by calling mini_close after calling mini_open when it is no longer needed.",
        ),
        ("mini_put", 1, "Parameter 1 must not be closed by calling mini_close before calling mini_put."),
        ("mini_put", 2, "The key should be short."),
    ];
    for (i, (api, param, text)) in rules.iter().enumerate() {
        store
            .persist(RuleStoreRecord::Concrete(ConcreteRecord {
                schema_version: SCHEMA_VERSION,
                library_id: "minidb".into(),
                rule: ConcreteApsr {
                    rule_id: format!("{api}#c{i}"),
                    api_name: api.to_string(),
                    param_index: *param,
                    rule_text: text.to_string(),
                    category: classify_text(text),
                    provenance: Provenance {
                        raw_rule_ids: vec![],
                        cluster_signature: String::new(),
                        artifact_ids: vec![],
                    },
                },
                verdict_trail: vec!["Validated".into()],
                created_at: "2026-01-01T00:00:00Z".into(),
            }))
            .unwrap();
    }
}
