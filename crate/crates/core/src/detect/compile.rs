//! Rule-text matching into detection patterns.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;

use super::{Compiled, DetectionRule, Pattern};
use crate::corpus::LibraryConfig;
use crate::pipeline::store::ConcreteApsr;

const RELEASE_VERBS: &str = r"(?:released|freed|closed|destroyed|deallocated|deleted|finali[sz]ed|disposed|cleaned up)";

struct Shapes {
    called_before: Regex,
    negated_release_before: Regex,
    by_calling: Regex,
    used_later: Regex,
    not_null: Regex,
    not_value: Regex,
    initialized: Regex,
    must_release: Regex,
}

fn shapes() -> &'static Shapes {
    static S: OnceLock<Shapes> = OnceLock::new();
    S.get_or_init(|| {
        let neg = r"(?:must not|mustn't|should not|shouldn't|cannot|can't|may not|must never|should never)";
        Shapes {
            called_before: Regex::new(&format!(
                r"\b([a-z_][a-z0-9_]*)(?:\(\))? {neg} be called before (?:calling )?([a-z_][a-z0-9_]*)"
            ))
            .unwrap(),
            negated_release_before: Regex::new(&format!(r"\b{neg} (?:be|have been) {RELEASE_VERBS}\b.*\bbefore\b"))
                .unwrap(),
            by_calling: Regex::new(r"\b(?:by|via|using|with) (?:calling )?([a-z_][a-z0-9_]*)\b").unwrap(),
            used_later: Regex::new(&format!(
                r"\b{neg} be (?:used|accessed|referenced|dereferenced) (?:later|afterwards|again|after)"
            ))
            .unwrap(),
            not_null: Regex::new(&format!(
                r"(?:\b{neg} (?:be|pass|contain|equal|point to) (?:a |the )?null|\bavoid passing (?:a )?null|\bmust be (?:a )?non-?null)(?:\s|$|[.,;:)])"
            ))
            .unwrap(),
            not_value: Regex::new(&format!(r"\b{neg} (?:be|pass|equal) (?:equal to )?(-?\d+)\b")).unwrap(),
            initialized: Regex::new(r"\bmust (?:first )?be (?:properly |fully )?initiali[sz]ed\b").unwrap(),
            must_release: Regex::new(&format!(
                r"\b(?:must|should|needs? to) (?:be |eventually be |later be )?(?:{RELEASE_VERBS}|release[sd]?|free[sd]?|close[sd]?)\b"
            ))
            .unwrap(),
        }
    })
}

fn named_call(text: &str, exclude: &str) -> Option<String> {
    shapes().by_calling.captures_iter(text).map(|c| c[1].to_string()).find(|n| n != exclude && !is_english(n))
}

fn is_english(word: &str) -> bool {
    const WORDS: &[&str] =
        &["the", "a", "an", "it", "its", "this", "that", "calling", "caller", "value", "parameter", "care"];
    WORDS.contains(&word)
}

/// A releasing API named in the text, else the configured one for `api`,
/// else the single release API the library declares.
fn release_api(text: &str, api: &str, config: &LibraryConfig) -> Option<String> {
    if let Some(n) = named_call(text, &api.to_lowercase()) {
        return Some(n);
    }
    if let Some(r) = config.release_api_map.get(api) {
        return Some(r.clone());
    }
    let distinct: BTreeSet<&String> = config.release_api_map.values().collect();
    if distinct.len() == 1 {
        return distinct.into_iter().next().cloned();
    }
    None
}

/// Map a concrete rule onto one of the five detection patterns.
pub fn compile_rule(rule: &ConcreteApsr, config: &LibraryConfig) -> Compiled {
    let text = rule.rule_text.to_lowercase();
    let api = rule.api_name.clone();
    let idx = rule.param_index;
    let s = shapes();
    let done = |pattern| Compiled::Rule(DetectionRule { pattern, source_rule_id: rule.rule_id.clone() });
    let original_case = |lower: &str| -> String {
        // Recover identifier spelling from the original text.
        let pos = text.find(lower).unwrap_or(0);
        rule.rule_text[pos..pos + lower.len()].to_string()
    };

    if let Some(c) = s.called_before.captures(&text) {
        let a = original_case(&c[1]);
        let b = original_case(&c[2]);
        if a != b && !is_english(&c[1]) {
            return done(Pattern::NotCalledBefore { api_a: a, api_b: b, param_index: idx });
        }
    }
    if s.negated_release_before.is_match(&text) {
        if let Some(a) = release_api(&text, &api, config) {
            let a = if text.contains(&a) { original_case(&a) } else { a };
            return done(Pattern::NotCalledBefore { api_a: a, api_b: api, param_index: idx });
        }
    }
    if s.used_later.is_match(&text) {
        return done(Pattern::MustNotUseLater { api, param_index: idx });
    }
    if s.not_null.is_match(&text) {
        return done(Pattern::MustNotPassValue { api, param_index: idx, value: "NULL".into() });
    }
    if let Some(c) = s.not_value.captures(&text) {
        return done(Pattern::MustNotPassValue { api, param_index: idx, value: c[1].to_string() });
    }
    if s.initialized.is_match(&text) {
        return done(Pattern::MustBeInitialized { api, param_index: idx });
    }
    if s.must_release.is_match(&text) && !text.contains(" not ") {
        if let Some(a) = release_api(&text, &api, config) {
            let a = if text.contains(&a) { original_case(&a) } else { a };
            return done(Pattern::MustCallAfter { api_a: a, api_b: api, param_index: idx });
        }
        return Compiled::NotCompilable {
            rule_id: rule.rule_id.clone(),
            reason: format!("no releasing API known for {api}"),
        };
    }
    Compiled::NotCompilable {
        rule_id: rule.rule_id.clone(),
        reason: "rule text matches none of the detection patterns".into(),
    }
}
