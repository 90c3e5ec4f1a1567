//! Builders for the four task prompts and parsers for the structured parts of
//! the responses.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ApiRecord, LibraryConfig};
use crate::llm::{ChatSession, Role};
use crate::rem::{self, ViolationCluster};

const SYSTEM: &str = include_str!("../assets/prompts/system.txt");
const RAW_GENERATION: &str = include_str!("../assets/prompts/raw_generation.txt");
const RIGHT_CODE: &str = include_str!("../assets/prompts/right_code.txt");
const REPAIR: &str = include_str!("../assets/prompts/repair.txt");
const VIOLATION_CODE: &str = include_str!("../assets/prompts/violation_code.txt");
const VIOLATION_EXAMPLE: &str = include_str!("../assets/prompts/violation_example.txt");
const CONSISTENCY_RETRY: &str = include_str!("../assets/prompts/consistency_retry.txt");
const REFINEMENT: &str = include_str!("../assets/prompts/refinement.txt");

pub const RULE_MARKER: &str = "RULE:";
pub const CODE_MARKER: &str = "```c";
pub const NO_RULES_MARKER: &str = "NO RULES";
pub const REFINED_RULE_MARKER: &str = "RULE: Parameter";

/// Default prompt ceiling, in estimated tokens.
pub const DEFAULT_TOKEN_CEILING: usize = 12_000;

const REFINEMENT_STEPS: [(&str, bool); 6] = [
    ("Identify the differences between the right code and the violation code in each pair.", false),
    ("Analyze the shared runtime error message to identify the potential causes of the API misuse it describes.", false),
    ("Analyze the raw API parameter security rule to identify the potential causes of the API misuse it describes.", true),
    ("Analyze the differences together with the causes found above to determine which modification is the key operation that triggers the runtime error.", false),
    ("Rank the possibilities and determine the most likely cause of the API misuse.", false),
    ("Generate one concrete API parameter security rule based on the key operation and the most likely cause.", false),
];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("parameter index {index} out of range for `{api}` with {count} parameter(s)")]
    IndexOutOfRange { api: String, index: usize, count: usize },
    #[error("repair feedback is empty")]
    EmptyFeedback,
    #[error("session has no code-producing turn to repair")]
    NoCodeTurn,
    #[error("cluster has no members")]
    EmptyCluster,
    #[error("no rule sentence recognized in response")]
    EmptyParse,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptText {
    pub system_text: String,
    pub user_text: String,
    pub expected_response_markers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawApsr {
    pub api_name: String,
    pub param_index: usize,
    pub rule_text: String,
    pub violation_example: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedRules {
    pub rules: Vec<RawApsr>,
    pub warnings: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RepairStage {
    Compile,
    Runtime,
}

impl RepairStage {
    fn as_str(self) -> &'static str {
        match self {
            RepairStage::Compile => "compilation",
            RepairStage::Runtime => "execution",
        }
    }
}

/// Substitute `{{name}}` placeholders in one pass, so inserted text is never
/// rescanned. The leading `#` comment line of an asset is dropped.
fn render(template: &str, vars: &BTreeMap<&str, String>) -> String {
    let body = match template.strip_prefix("# ") {
        Some(rest) => rest.split_once('\n').map_or("", |(_, b)| b),
        None => template,
    };
    let mut out = String::with_capacity(body.len() * 2);
    let mut rest = body;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        match after.find("}}") {
            Some(end) => {
                let key = &after[..end];
                match vars.get(key) {
                    Some(v) => out.push_str(v),
                    None => panic!("template placeholder `{key}` has no value"),
                }
                rest = &after[end + 2..];
            }
            None => {
                out.push_str(&rest[start..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out.trim_end().to_string()
}

fn system_text() -> String {
    SYSTEM.trim_end().to_string()
}

fn markers(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

/// Rough token estimate used for the prompt ceiling.
pub fn estimate_tokens(text: &str) -> usize {
    text.len().div_ceil(4)
}

fn helpers_section(api: &ApiRecord, budget_tokens: usize) -> String {
    let mut kept: Vec<&crate::corpus::HelperBody> = api.helpers.iter().collect();
    let render_helpers = |hs: &[&crate::corpus::HelperBody]| {
        if hs.is_empty() {
            return String::new();
        }
        let mut s = String::from("Functions called by the API:\n```c\n");
        for h in hs {
            s.push_str(h.text.trim_end());
            s.push_str("\n\n");
        }
        s.truncate(s.trim_end().len());
        s.push_str("\n```\n");
        s
    };
    let mut text = render_helpers(&kept);
    while !kept.is_empty() && estimate_tokens(&text) > budget_tokens {
        kept.pop();
        text = render_helpers(&kept);
    }
    if kept.len() < api.helpers.len() {
        log::warn!(
            "prompt for {} exceeds token ceiling; dropped {} helper bodies",
            api.api_name,
            api.helpers.len() - kept.len()
        );
    }
    text
}

pub fn build_raw_apsr_prompt(api: &ApiRecord, param_index: usize) -> Result<PromptText, PromptError> {
    build_raw_apsr_prompt_with_ceiling(api, param_index, DEFAULT_TOKEN_CEILING)
}

/// As [`build_raw_apsr_prompt`], dropping whole helper bodies (last first)
/// until the prompt fits `ceiling` estimated tokens. The API body is kept.
pub fn build_raw_apsr_prompt_with_ceiling(
    api: &ApiRecord,
    param_index: usize,
    ceiling: usize,
) -> Result<PromptText, PromptError> {
    if param_index == 0 || param_index > api.param_count {
        return Err(PromptError::IndexOutOfRange {
            api: api.api_name.clone(),
            index: param_index,
            count: api.param_count,
        });
    }
    let mut vars = BTreeMap::new();
    vars.insert("api_name", api.api_name.clone());
    vars.insert("param_index", param_index.to_string());
    vars.insert("param_name", api.param_name(param_index).unwrap_or("").to_string());
    vars.insert("source", api.source_body.trim_end().to_string());
    vars.insert("helpers", String::new());
    let base = estimate_tokens(&render(RAW_GENERATION, &vars)) + estimate_tokens(SYSTEM);
    let budget = ceiling.saturating_sub(base);
    vars.insert("helpers", helpers_section(api, budget));
    Ok(PromptText {
        system_text: system_text(),
        user_text: render(RAW_GENERATION, &vars),
        expected_response_markers: markers(&[RULE_MARKER, CODE_MARKER, NO_RULES_MARKER]),
    })
}

/// Fenced code blocks in order of appearance.
pub fn extract_code_blocks(text: &str) -> Vec<String> {
    let mut blocks = Vec::new();
    let mut current: Option<Vec<&str>> = None;
    for line in text.lines() {
        let t = line.trim();
        match current.as_mut() {
            None if t.starts_with("```") => current = Some(Vec::new()),
            None => {}
            Some(_) if t == "```" => {
                let lines = current.take().unwrap_or_default();
                blocks.push(lines.join("\n"));
            }
            Some(buf) => buf.push(line),
        }
    }
    blocks
}

/// The program in a code-producing response: the first fenced block that
/// defines `main`, else the first block. Unfenced responses that define
/// `main` are taken whole.
pub fn extract_program(text: &str) -> Option<String> {
    let blocks = extract_code_blocks(text);
    if let Some(b) = blocks.iter().find(|b| b.contains("main(") || b.contains("main (")) {
        return Some(ensure_newline(b));
    }
    if let Some(b) = blocks.into_iter().next() {
        return Some(ensure_newline(&b));
    }
    (text.contains("main(")).then(|| ensure_newline(text.trim()))
}

fn ensure_newline(s: &str) -> String {
    let mut s = s.trim_end().to_string();
    s.push('\n');
    s
}

fn strip_rule_line(line: &str) -> Option<&str> {
    let t = line.trim_start();
    let t = t.trim_start_matches(|c: char| c == '-' || c == '*' || c == '#' || c.is_whitespace());
    let t = t.trim_start_matches(|c: char| c.is_ascii_digit() || c == '.' || c == ')');
    let t = t.trim_start_matches(|c: char| c == '*' || c.is_whitespace());
    t.strip_prefix(RULE_MARKER).map(|r| r.trim().trim_matches('*').trim())
}

fn mentions_no_rules(text: &str) -> bool {
    let lower = text.to_lowercase();
    lower.contains("no rules") || lower.contains("no security rules") || lower.contains("no rule applies")
}

/// Parse the rules of a raw-generation response. Every rule gets the
/// requested parameter index; the fenced block following a rule (before the
/// next rule) is its violation example. Empty rule lines are dropped and
/// counted as warnings.
pub fn parse_raw_apsr_response(text: &str, api: &ApiRecord, param_index: usize) -> Result<ParsedRules, PromptError> {
    let mut rules: Vec<RawApsr> = Vec::new();
    let mut warnings = 0;
    let mut in_code: Option<Vec<&str>> = None;
    let mut current_accepts_code = false;
    for line in text.lines() {
        let t = line.trim();
        if let Some(buf) = in_code.as_mut() {
            if t == "```" {
                let code = in_code.take().unwrap_or_default().join("\n");
                if current_accepts_code {
                    if let Some(last) = rules.last_mut() {
                        last.violation_example = Some(ensure_newline(&code));
                    }
                    current_accepts_code = false;
                }
            } else {
                buf.push(line);
            }
            continue;
        }
        if t.starts_with("```") {
            in_code = Some(Vec::new());
            continue;
        }
        if let Some(rule) = strip_rule_line(line) {
            if rule.is_empty() {
                warnings += 1;
                current_accepts_code = false;
                continue;
            }
            rules.push(RawApsr {
                api_name: api.api_name.clone(),
                param_index,
                rule_text: rule.to_string(),
                violation_example: None,
            });
            current_accepts_code = true;
        }
    }
    if rules.is_empty() && !mentions_no_rules(text) {
        return Err(PromptError::EmptyParse);
    }
    Ok(ParsedRules { rules, warnings })
}

pub fn build_right_code_prompt(api: &ApiRecord, config: &LibraryConfig) -> PromptText {
    let headers = config.header_names().iter().map(|h| format!("- {h}")).collect::<Vec<_>>().join("\n");
    let mut vars = BTreeMap::new();
    vars.insert("api_name", api.api_name.clone());
    vars.insert("declaration", api.declaration.clone());
    vars.insert("source", api.source_body.trim_end().to_string());
    vars.insert("headers", headers);
    PromptText {
        system_text: system_text(),
        user_text: render(RIGHT_CODE, &vars),
        expected_response_markers: markers(&[CODE_MARKER]),
    }
}

/// A follow-up turn asking for a complete corrected program.
pub fn build_repair_prompt(
    session: &ChatSession,
    error_feedback: &str,
    stage: RepairStage,
) -> Result<PromptText, PromptError> {
    if error_feedback.trim().is_empty() {
        return Err(PromptError::EmptyFeedback);
    }
    let has_code =
        session.messages().iter().any(|m| m.role == Role::Assistant && extract_program(&m.content).is_some());
    if !has_code {
        return Err(PromptError::NoCodeTurn);
    }
    let mut vars = BTreeMap::new();
    vars.insert("stage", stage.as_str().to_string());
    vars.insert("feedback", error_feedback.trim_end().to_string());
    Ok(PromptText {
        system_text: system_text(),
        user_text: render(REPAIR, &vars),
        expected_response_markers: markers(&[CODE_MARKER]),
    })
}

pub fn build_violation_prompt(right_code: &str, declaration: &str, rule: &RawApsr) -> PromptText {
    let example = match &rule.violation_example {
        Some(ex) => {
            let mut v = BTreeMap::new();
            v.insert("example", ex.trim_end().to_string());
            render(VIOLATION_EXAMPLE, &v)
        }
        None => String::new(),
    };
    let mut vars = BTreeMap::new();
    vars.insert("right_code", right_code.trim_end().to_string());
    vars.insert("declaration", declaration.to_string());
    vars.insert("rule", rule.rule_text.clone());
    vars.insert("example", example);
    PromptText {
        system_text: system_text(),
        user_text: render(VIOLATION_CODE, &vars),
        expected_response_markers: markers(&[CODE_MARKER]),
    }
}

/// Corrective turn sent once when the modification targets the wrong
/// parameter or location.
pub fn build_consistency_retry_prompt(
    rule_param: usize,
    rule_loc: &str,
    code_param: Option<usize>,
    code_loc: &str,
) -> String {
    let mut vars = BTreeMap::new();
    vars.insert("rule_param", rule_param.to_string());
    vars.insert("rule_loc", rule_loc.to_string());
    vars.insert("code_param", code_param.map_or_else(|| "unknown".to_string(), |p| p.to_string()));
    vars.insert("code_loc", code_loc.to_string());
    render(CONSISTENCY_RETRY, &vars)
}

/// Steps included for a cluster of `member_count` violation codes. The
/// raw-rule analysis step is skipped when there are several codes.
pub fn refinement_steps(member_count: usize) -> Vec<&'static str> {
    REFINEMENT_STEPS.iter().filter(|(_, raw_only)| !(*raw_only && member_count > 1)).map(|(s, _)| *s).collect()
}

pub fn build_refinement_prompt(cluster: &ViolationCluster, api: &ApiRecord) -> Result<PromptText, PromptError> {
    let first = cluster.members.first().ok_or(PromptError::EmptyCluster)?;
    let mut pairs = String::new();
    for (i, m) in cluster.members.iter().enumerate() {
        pairs.push_str(&format!(
            "Pair {}:\nRight code:\n```c\n{}\n```\nViolation code:\n```c\n{}\n```\n",
            i + 1,
            m.right_code.trim_end(),
            m.violation_code.trim_end()
        ));
    }
    let single = cluster.members.len() == 1;
    let raw_rules = if single {
        format!("Raw API parameter security rule used to produce the violation code:\n{}\n", first.rule_text)
    } else {
        String::new()
    };
    let steps = refinement_steps(cluster.members.len())
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{}. {s}", i + 1))
        .collect::<Vec<_>>()
        .join("\n");
    let mut vars = BTreeMap::new();
    vars.insert("api_name", api.api_name.clone());
    vars.insert("declaration", api.declaration.clone());
    vars.insert("pairs", pairs.trim_end().to_string());
    vars.insert("rem_summary", rem::render_summary(&first.rem).trim_end().to_string());
    vars.insert("raw_rules", raw_rules);
    vars.insert("steps", steps);
    Ok(PromptText {
        system_text: system_text(),
        user_text: render(REFINEMENT, &vars),
        expected_response_markers: markers(&[REFINED_RULE_MARKER]),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefinedRule {
    pub param_index: usize,
    pub rule_text: String,
}

/// The first `RULE: Parameter N: ...` line of a refinement response.
pub fn parse_refinement_response(text: &str, param_count: usize) -> Result<RefinedRule, PromptError> {
    for line in text.lines() {
        let Some(rest) = strip_rule_line(line) else { continue };
        let Some(after) = rest.strip_prefix("Parameter") else { continue };
        let after = after.trim_start();
        let digits: String = after.chars().take_while(|c| c.is_ascii_digit()).collect();
        let Ok(idx) = digits.parse::<usize>() else { continue };
        if idx == 0 || idx > param_count {
            continue;
        }
        let sentence = after[digits.len()..].trim_start_matches(|c: char| c == ':' || c.is_whitespace());
        if sentence.is_empty() {
            continue;
        }
        return Ok(RefinedRule { param_index: idx, rule_text: sentence.trim().to_string() });
    }
    Err(PromptError::EmptyParse)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::HelperBody;
    use crate::llm::{ChatSession, TaskKind};

    fn record(params: usize) -> ApiRecord {
        ApiRecord {
            api_name: "zz_fill".into(),
            param_count: params,
            param_names: (1..=params).map(|i| format!("p{i}")).collect(),
            variadic: false,
            declaration: "int zz_fill(char *p1, int p2);".into(),
            source_body: "int zz_fill(char *p1, int p2) { return helper(p1, p2); }".into(),
            helpers: vec![HelperBody {
                name: "helper".into(),
                text: "static int helper(char *a, int b) { return a[b]; }".into(),
            }],
            required_headers: vec!["zz.h".into()],
            library_id: "zz".into(),
            source_file: "zz.c".into(),
        }
    }

    #[test]
    fn raw_prompt_has_three_steps_and_target() {
        let p = build_raw_apsr_prompt(&record(2), 2).unwrap();
        assert!(p.user_text.contains("Parameter 2 (`p2`)"));
        assert!(p.user_text.contains("return helper(p1, p2);"));
        assert!(p.user_text.contains("static int helper"));
        assert!(p.user_text.contains("\n3. "));
        assert!(!p.user_text.contains("\n4. "));
        assert!(!p.user_text.contains("{{"));
        assert!(!p.user_text.starts_with('#'));
        assert_eq!(p, build_raw_apsr_prompt(&record(2), 2).unwrap());
    }

    #[test]
    fn raw_prompt_range_checked() {
        assert!(matches!(
            build_raw_apsr_prompt(&record(2), 3),
            Err(PromptError::IndexOutOfRange { index: 3, count: 2, .. })
        ));
        assert!(build_raw_apsr_prompt(&record(2), 0).is_err());
    }

    #[test]
    fn ceiling_drops_helpers_keeps_body() {
        let p = build_raw_apsr_prompt_with_ceiling(&record(2), 1, 10).unwrap();
        assert!(p.user_text.contains("return helper(p1, p2);"));
        assert!(!p.user_text.contains("static int helper"));
    }

    #[test]
    fn parse_rules_with_and_without_snippets() {
        let text = "1. Summary...\nRULE: Parameter 2 must be non-negative.\n```c\nzz_fill(buf, -1);\n```\n- RULE: Parameter 2 must not exceed the buffer size.\nRULE:\n";
        let parsed = parse_raw_apsr_response(text, &record(2), 2).unwrap();
        assert_eq!(parsed.rules.len(), 2);
        assert_eq!(parsed.warnings, 1);
        assert_eq!(parsed.rules[0].violation_example.as_deref(), Some("zz_fill(buf, -1);\n"));
        assert!(parsed.rules[1].violation_example.is_none());
        assert!(parsed.rules.iter().all(|r| r.param_index == 2));
    }

    #[test]
    fn parse_no_rules_and_garbage() {
        let parsed = parse_raw_apsr_response("no security rules apply", &record(2), 1).unwrap();
        assert!(parsed.rules.is_empty());
        assert_eq!(parsed.warnings, 0);
        assert_eq!(parse_raw_apsr_response("I like turtles", &record(2), 1), Err(PromptError::EmptyParse));
    }

    #[test]
    fn repair_prompt_requires_feedback_and_code() {
        let mut s = ChatSession::for_test(TaskKind::RightCode);
        assert_eq!(build_repair_prompt(&s, "err", RepairStage::Compile), Err(PromptError::NoCodeTurn));
        s.push_for_test(Role::Assistant, "```c\nint main(){return 0}\n```");
        assert_eq!(build_repair_prompt(&s, "  ", RepairStage::Compile), Err(PromptError::EmptyFeedback));
        let p = build_repair_prompt(&s, "test.c:1:24: error: expected ';'", RepairStage::Compile).unwrap();
        assert!(p.user_text.contains("test.c:1:24: error: expected ';'"));
        assert!(p.user_text.contains("not a diff"));
    }

    #[test]
    fn violation_prompt_parts() {
        let mut rule = RawApsr {
            api_name: "zz_fill".into(),
            param_index: 1,
            rule_text: "Parameter 1 must not be NULL.".into(),
            violation_example: Some("zz_fill(NULL, 1);".into()),
        };
        let p = build_violation_prompt("int main(){}", "int zz_fill(char *p1, int p2);", &rule);
        assert!(p.user_text.contains("Violation code example"));
        assert!(p.user_text.contains("int zz_fill(char *p1, int p2);"));
        rule.violation_example = None;
        let p = build_violation_prompt("int main(){}", "int zz_fill(char *p1, int p2);", &rule);
        assert!(!p.user_text.contains("Violation code example"));
        assert!(p.user_text.contains("Only modify the given program"));
    }

    #[test]
    fn fenced_extraction() {
        let t = "Here:\n```C\n#include <x.h>\n```\ntext\n```c\nint main(void) {\n  return 0;\n}\n```\n";
        assert_eq!(extract_code_blocks(t).len(), 2);
        assert_eq!(extract_program(t).unwrap(), "int main(void) {\n  return 0;\n}\n");
        assert!(extract_program("nothing").is_none());
    }

    #[test]
    fn refined_rule_parse() {
        let r = parse_refinement_response("1. blah\n**RULE: Parameter 2: must be released by calling x_close.**", 2)
            .unwrap();
        assert_eq!(r.param_index, 2);
        assert_eq!(r.rule_text, "must be released by calling x_close.");
        assert!(parse_refinement_response("RULE: Parameter 9: x", 2).is_err());
    }

    #[test]
    fn step_counts() {
        assert_eq!(refinement_steps(1).len(), 6);
        assert_eq!(refinement_steps(3).len(), 5);
        assert!(!refinement_steps(2).iter().any(|s| s.contains("raw API")));
    }
}
