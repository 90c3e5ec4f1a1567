//! Checks that a violation program modifies the parameter, at the location,
//! that its rule talks about.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use similar::{capture_diff_slices, Algorithm, DiffOp};
use thiserror::Error;
use tree_sitter::Node;

use crate::corpus::{self, ApiRecord, SourceUnit};
use crate::prompt::RawApsr;
use crate::rem::statement_span;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LocationRelation {
    Before,
    AtCall,
    After,
    Unknown,
}

impl LocationRelation {
    pub fn as_str(self) -> &'static str {
        match self {
            LocationRelation::Before => "before",
            LocationRelation::AtCall => "at",
            LocationRelation::After => "after",
            LocationRelation::Unknown => "unknown",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hunk {
    pub removed: Vec<String>,
    pub added: Vec<String>,
    /// Line in C_r where the hunk starts (for insertions: the line the new
    /// text precedes).
    pub anchor_line: usize,
    pub removed_lines: Vec<usize>,
    /// Lines of C_v holding the added text.
    pub added_lines: Vec<usize>,
    /// Line of C_v at which the hunk sits; for deletions, the line that now
    /// follows the removed text.
    pub modified_anchor_line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TouchedStatement {
    pub start_line: usize,
    pub end_line: usize,
    pub kind: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModificationSet {
    pub hunks: Vec<Hunk>,
    /// Statements of C_v overlapping added lines.
    pub touched_statements: Vec<TouchedStatement>,
    pub original: String,
    pub modified: String,
}

impl ModificationSet {
    pub fn is_empty(&self) -> bool {
        self.hunks.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModificationTarget {
    pub c_para: Option<usize>,
    pub c_loc: LocationRelation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleTarget {
    pub r_para: usize,
    pub r_loc: LocationRelation,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConsistencyError {
    #[error("violation code no longer calls `{0}`")]
    NoApiCall(String),
}

/// Whitespace is kept only where it separates two word characters.
fn normalize_line(l: &str) -> String {
    let word = |c: char| c.is_alphanumeric() || c == '_';
    let mut out = String::with_capacity(l.len());
    let mut pending_space = false;
    for c in l.trim().chars() {
        if c.is_whitespace() {
            pending_space = true;
            continue;
        }
        if pending_space && out.chars().last().is_some_and(word) && word(c) {
            out.push(' ');
        }
        pending_space = false;
        out.push(c);
    }
    out
}

/// Non-blank lines, whitespace-normalized, with their 1-based line numbers.
fn significant_lines(text: &str) -> (Vec<String>, Vec<usize>) {
    text.lines().enumerate().map(|(i, l)| (normalize_line(l), i + 1)).filter(|(l, _)| !l.is_empty()).unzip()
}

const STATEMENT_KINDS: [&str; 3] = ["expression_statement", "declaration", "return_statement"];
const CONTROL_KINDS: [&str; 5] =
    ["if_statement", "while_statement", "do_statement", "switch_statement", "for_statement"];

/// Smallest statement-like node spanning `line`: a simple statement, a
/// control-statement condition, or a goto/break/continue.
fn statement_at_line(unit: &SourceUnit, line: usize) -> Option<Node<'_>> {
    fn walk<'t>(node: Node<'t>, line: usize, best: &mut Option<Node<'t>>) {
        let (s, e) = (corpus::line_of(node), corpus::end_line_of(node));
        if line < s || line > e {
            return;
        }
        let parent_control = node.parent().is_some_and(|p| CONTROL_KINDS.contains(&p.kind()))
            && matches!(node.kind(), "parenthesized_expression" | "condition_clause");
        let is_stmt = STATEMENT_KINDS.contains(&node.kind())
            || parent_control
            || matches!(node.kind(), "goto_statement" | "break_statement" | "continue_statement");
        if is_stmt && best.is_none_or(|b| node.byte_range().len() < b.byte_range().len()) {
            *best = Some(node);
        }
        let mut cursor = node.walk();
        for child in node.children(&mut cursor) {
            walk(child, line, best);
        }
    }
    let mut best = None;
    walk(unit.root(), line, &mut best);
    best
}

fn parse_unit(name: &str, text: &str) -> Option<SourceUnit> {
    corpus::parse_c_unit(name, text.as_bytes()).ok()
}

/// Line-level differences between C_r and C_v, ignoring whitespace-only
/// changes, with the C_v statements the added lines fall in.
pub fn diff_code(c_r: &str, c_v: &str) -> ModificationSet {
    let (old, old_nos) = significant_lines(c_r);
    let (new, new_nos) = significant_lines(c_v);
    let ops = capture_diff_slices(Algorithm::Myers, &old, &new);
    let old_line = |i: usize| old_nos.get(i).copied().unwrap_or_else(|| old_nos.last().map_or(1, |l| l + 1));
    let new_line = |i: usize| new_nos.get(i).copied().unwrap_or_else(|| new_nos.last().map_or(1, |l| l + 1));
    let mut hunks = Vec::new();
    for op in ops {
        let (old_index, old_len, new_index, new_len) = match op {
            DiffOp::Equal { .. } => continue,
            DiffOp::Delete { old_index, old_len, new_index } => (old_index, old_len, new_index, 0),
            DiffOp::Insert { old_index, new_index, new_len } => (old_index, 0, new_index, new_len),
            DiffOp::Replace { old_index, old_len, new_index, new_len } => (old_index, old_len, new_index, new_len),
        };
        hunks.push(Hunk {
            removed: old[old_index..old_index + old_len].to_vec(),
            added: new[new_index..new_index + new_len].to_vec(),
            anchor_line: old_line(old_index),
            removed_lines: (old_index..old_index + old_len).map(old_line).collect(),
            added_lines: (new_index..new_index + new_len).map(new_line).collect(),
            modified_anchor_line: new_line(new_index),
        });
    }
    let mut touched_statements: Vec<TouchedStatement> = Vec::new();
    if let Some(unit) = parse_unit("violation.c", c_v) {
        for line in hunks.iter().flat_map(|h| h.added_lines.iter().copied()) {
            if let Some(node) = statement_at_line(&unit, line) {
                let ts = TouchedStatement {
                    start_line: corpus::line_of(node),
                    end_line: corpus::end_line_of(node),
                    kind: node.kind().to_string(),
                    text: unit.node_text(node).to_string(),
                };
                if !touched_statements.contains(&ts) {
                    touched_statements.push(ts);
                }
            }
        }
    }
    ModificationSet { hunks, touched_statements, original: c_r.to_string(), modified: c_v.to_string() }
}

/// Identifiers in `node`, excluding callee names.
fn identifiers(node: Node<'_>, src: &str) -> BTreeSet<String> {
    let mut ids = Vec::new();
    corpus::collect_kind(node, "identifier", &mut ids);
    ids.into_iter()
        .filter(|id| {
            !id.parent().is_some_and(|p| {
                p.kind() == "call_expression" && p.child_by_field_name("function").is_some_and(|f| f.id() == id.id())
            })
        })
        .map(|id| src[id.byte_range()].to_string())
        .collect()
}

struct StatementFacts {
    /// Identifiers passed to calls other than the target API.
    call_args: BTreeSet<String>,
    assigned: BTreeSet<String>,
    used: BTreeSet<String>,
}

fn statement_facts(node: Node<'_>, src: &str, api_name: &str) -> StatementFacts {
    let mut calls = Vec::new();
    corpus::collect_kind(node, "call_expression", &mut calls);
    let mut call_args = BTreeSet::new();
    for c in calls {
        if corpus::callee_name(c, src) == Some(api_name) {
            continue;
        }
        if let Some(args) = c.child_by_field_name("arguments") {
            call_args.extend(identifiers(args, src));
        }
    }
    let mut assigned = BTreeSet::new();
    for (kind, field) in [("assignment_expression", "left"), ("init_declarator", "declarator")] {
        let mut nodes = Vec::new();
        corpus::collect_kind(node, kind, &mut nodes);
        for n in nodes {
            if let Some(target) = n.child_by_field_name(field) {
                if let Some(id) = corpus::declarator_identifier(target) {
                    assigned.insert(src[id.byte_range()].to_string());
                }
            }
        }
    }
    StatementFacts { call_args, assigned, used: identifiers(node, src) }
}

/// Variables feeding `roots` through assignments and initializers in `func`.
fn def_use_closure(func: Node<'_>, src: &str, roots: BTreeSet<String>) -> BTreeSet<String> {
    let mut defs: Vec<(String, BTreeSet<String>)> = Vec::new();
    let mut assigns = Vec::new();
    corpus::collect_kind(func, "assignment_expression", &mut assigns);
    for a in assigns {
        if let (Some(l), Some(r)) = (a.child_by_field_name("left"), a.child_by_field_name("right")) {
            if let Some(id) = corpus::declarator_identifier(l) {
                defs.push((src[id.byte_range()].to_string(), identifiers(r, src)));
            }
        }
    }
    let mut inits = Vec::new();
    corpus::collect_kind(func, "init_declarator", &mut inits);
    for i in inits {
        if let (Some(d), Some(v)) = (i.child_by_field_name("declarator"), i.child_by_field_name("value")) {
            if let Some(id) = corpus::declarator_identifier(d) {
                defs.push((src[id.byte_range()].to_string(), identifiers(v, src)));
            }
        }
    }
    let mut closure = roots;
    loop {
        let before = closure.len();
        for (target, deps) in &defs {
            if closure.contains(target) {
                closure.extend(deps.iter().cloned());
            }
        }
        if closure.len() == before {
            return closure;
        }
    }
}

fn enclosing_function(node: Node<'_>) -> Option<Node<'_>> {
    let mut n = node;
    while let Some(p) = n.parent() {
        if p.kind() == "function_definition" {
            return Some(p);
        }
        n = p;
    }
    None
}

fn api_calls<'t>(unit: &'t SourceUnit, api: &str) -> Vec<Node<'t>> {
    let mut calls = Vec::new();
    corpus::collect_kind(unit.root(), "call_expression", &mut calls);
    calls.into_iter().filter(|c| corpus::callee_name(*c, &unit.text) == Some(api)).collect()
}

/// Priority of evidence: changed argument, inserted call acting on the
/// variable, deleted call, assignment, any other use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Evidence {
    Argument,
    InsertedCall,
    DeletedCall,
    Assignment,
    Use,
}

pub fn locate_modified_param(
    mods: &ModificationSet,
    api: &ApiRecord,
    c_v_unit: &SourceUnit,
) -> Result<ModificationTarget, ConsistencyError> {
    locate_modified_param_for(mods, api, c_v_unit, None)
}

/// As [`locate_modified_param`]; when several parameters are touched,
/// `preferred` wins if it is among them, else the strongest evidence does.
pub fn locate_modified_param_for(
    mods: &ModificationSet,
    api: &ApiRecord,
    c_v_unit: &SourceUnit,
    preferred: Option<usize>,
) -> Result<ModificationTarget, ConsistencyError> {
    let v_calls = api_calls(c_v_unit, &api.api_name);
    if v_calls.is_empty() {
        return Err(ConsistencyError::NoApiCall(api.api_name.clone()));
    }
    let unknown = ModificationTarget { c_para: None, c_loc: LocationRelation::Unknown };
    if mods.is_empty() || api.param_count == 0 {
        return Ok(unknown);
    }
    let r_unit = parse_unit("right.c", &mods.original);
    let r_calls = r_unit.as_ref().map(|u| api_calls(u, &api.api_name)).unwrap_or_default();
    let src_v = c_v_unit.text.as_str();

    let mut candidates: Vec<(Evidence, usize, LocationRelation)> = Vec::new();
    for (k, call) in v_calls.iter().enumerate() {
        let args_v = corpus::call_arguments(*call, src_v);
        if let (Some(r_call), Some(r_unit)) = (r_calls.get(k), r_unit.as_ref()) {
            let args_r = corpus::call_arguments(*r_call, &r_unit.text);
            for i in 0..args_v.len().max(args_r.len()) {
                let a = args_v.get(i).map(|s| normalize_line(s));
                let b = args_r.get(i).map(|s| normalize_line(s));
                if a != b && i < api.param_count {
                    candidates.push((Evidence::Argument, i + 1, LocationRelation::AtCall));
                }
            }
        }
        let (call_start, call_end) = statement_span(*call);
        let Some(func) = enclosing_function(*call) else { continue };
        let arg_nodes: Vec<Node<'_>> = call
            .child_by_field_name("arguments")
            .map(|a| {
                let mut c = a.walk();
                a.named_children(&mut c).filter(|n| n.kind() != "comment").collect()
            })
            .unwrap_or_default();
        let closures: Vec<(usize, BTreeSet<String>, BTreeSet<String>)> = arg_nodes
            .iter()
            .enumerate()
            .take(api.param_count)
            .map(|(i, n)| {
                let roots = identifiers(*n, src_v);
                (i + 1, roots.clone(), def_use_closure(func, src_v, roots))
            })
            .collect();

        let position = |start: usize, end: usize| {
            if end < call_start {
                LocationRelation::Before
            } else if start > call_end {
                LocationRelation::After
            } else {
                LocationRelation::AtCall
            }
        };
        let mut classify = |facts: &StatementFacts, loc: LocationRelation, deleted: bool| {
            for (param, roots, closure) in &closures {
                let (evidence, loc) = if !facts.call_args.is_disjoint(roots) {
                    let e = if deleted { Evidence::DeletedCall } else { Evidence::InsertedCall };
                    (e, loc)
                } else if !facts.assigned.is_disjoint(closure) {
                    (Evidence::Assignment, LocationRelation::AtCall)
                } else if !facts.used.is_disjoint(closure) {
                    (Evidence::Use, loc)
                } else {
                    continue;
                };
                candidates.push((evidence, *param, loc));
            }
        };

        for ts in &mods.touched_statements {
            if ts.start_line <= call_end && ts.end_line >= call_start {
                continue;
            }
            let Some(node) = statement_at_line(c_v_unit, ts.start_line) else { continue };
            let facts = statement_facts(node, src_v, &api.api_name);
            classify(&facts, position(ts.start_line, ts.end_line), false);
        }
        if let Some(r_unit) = r_unit.as_ref() {
            let mut seen = BTreeSet::new();
            for h in &mods.hunks {
                for &line in &h.removed_lines {
                    let Some(node) = statement_at_line(r_unit, line) else { continue };
                    if !seen.insert(node.id()) {
                        continue;
                    }
                    let calls_api = api_calls_in(node, &r_unit.text, &api.api_name);
                    if calls_api {
                        continue;
                    }
                    let facts = statement_facts(node, &r_unit.text, &api.api_name);
                    let loc = if h.modified_anchor_line <= call_start {
                        LocationRelation::Before
                    } else {
                        LocationRelation::After
                    };
                    classify(&facts, loc, true);
                }
            }
        }
    }
    if candidates.is_empty() {
        return Ok(unknown);
    }
    candidates.sort_by_key(|(e, p, _)| (*e, *p));
    let chosen_param = match preferred {
        Some(p) if candidates.iter().any(|(_, cp, _)| *cp == p) => p,
        _ => candidates[0].1,
    };
    let (_, _, loc) = candidates.iter().find(|(_, p, _)| *p == chosen_param).copied().expect("chosen from candidates");
    Ok(ModificationTarget { c_para: Some(chosen_param), c_loc: loc })
}

fn api_calls_in(node: Node<'_>, src: &str, api: &str) -> bool {
    let mut calls = Vec::new();
    corpus::collect_kind(node, "call_expression", &mut calls);
    calls.iter().any(|c| corpus::callee_name(*c, src) == Some(api))
}

const BEFORE_KEYWORDS: [&str; 2] = ["before", "prior to"];
const AFTER_KEYWORDS: [&str; 4] = ["after", "later", "when no longer needed", "subsequently"];

fn find_word(haystack: &str, needle: &str) -> Option<usize> {
    let bytes = haystack.as_bytes();
    let mut from = 0;
    while let Some(pos) = haystack[from..].find(needle) {
        let start = from + pos;
        let end = start + needle.len();
        let left_ok = start == 0 || !bytes[start - 1].is_ascii_alphanumeric();
        let right_ok = end == bytes.len() || !bytes[end].is_ascii_alphanumeric();
        if left_ok && right_ok {
            return Some(start);
        }
        from = start + 1;
    }
    None
}

/// Location relation from the first location keyword in the sentence;
/// sentences without one constrain the value at the call.
pub fn rule_location(text: &str) -> LocationRelation {
    let lower = text.to_lowercase();
    let first = |words: &[&str]| words.iter().filter_map(|w| find_word(&lower, w)).min();
    match (first(&BEFORE_KEYWORDS), first(&AFTER_KEYWORDS)) {
        (Some(b), Some(a)) if b < a => LocationRelation::Before,
        (Some(_), Some(_)) => LocationRelation::After,
        (Some(_), None) => LocationRelation::Before,
        (None, Some(_)) => LocationRelation::After,
        (None, None) => LocationRelation::AtCall,
    }
}

pub fn extract_rule_target(rule: &RawApsr) -> RuleTarget {
    RuleTarget { r_para: rule.param_index, r_loc: rule_location(&rule.rule_text) }
}

pub fn check_consistency(m: &ModificationTarget, r: &RuleTarget) -> bool {
    if m.c_para != Some(r.r_para) || m.c_loc == LocationRelation::Unknown {
        return false;
    }
    r.r_loc == LocationRelation::Unknown || m.c_loc == r.r_loc
}

/// Result of the full check for one violation program.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub code: Option<ModificationTarget>,
    pub rule: RuleTarget,
    pub consistent: bool,
    pub reason: Option<String>,
}

/// Diff, localize and compare in one step.
pub fn check_violation(c_r: &str, c_v: &str, api: &ApiRecord, rule: &RawApsr) -> ConsistencyReport {
    let rule_target = extract_rule_target(rule);
    let mods = diff_code(c_r, c_v);
    let unit = match corpus::parse_c_unit("violation.c", c_v.as_bytes()) {
        Ok(u) => u,
        Err(e) => {
            return ConsistencyReport { code: None, rule: rule_target, consistent: false, reason: Some(e.to_string()) }
        }
    };
    match locate_modified_param_for(&mods, api, &unit, Some(rule.param_index)) {
        Ok(t) => ConsistencyReport {
            code: Some(t),
            rule: rule_target,
            consistent: check_consistency(&t, &rule_target),
            reason: None,
        },
        Err(e) => ConsistencyReport { code: None, rule: rule_target, consistent: false, reason: Some(e.to_string()) },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn api(name: &str, params: usize) -> ApiRecord {
        ApiRecord {
            api_name: name.into(),
            param_count: params,
            param_names: (1..=params).map(|i| format!("a{i}")).collect(),
            variadic: false,
            declaration: String::new(),
            source_body: String::new(),
            helpers: vec![],
            required_headers: vec![],
            library_id: "t".into(),
            source_file: "t.c".into(),
        }
    }

    fn locate(cr: &str, cv: &str, a: &ApiRecord) -> ModificationTarget {
        let mods = diff_code(cr, cv);
        let unit = corpus::parse_c_unit("v.c", cv.as_bytes()).unwrap();
        locate_modified_param(&mods, a, &unit).unwrap()
    }

    #[test]
    fn whitespace_only_is_empty() {
        assert!(diff_code("int main() {\n  f(1);\n}\n", "int main() {\n\n    f( 1 );\n}").is_empty());
        assert_eq!(diff_code("int a;\n", "int b;\n").hunks.len(), 1);
        assert!(diff_code("int x;\n", "  int   x;\n\n").is_empty());
    }

    #[test]
    fn argument_change_is_at_call() {
        let cr = "int main(void) {\n  char b[8];\n  api(b, sizeof b, 0);\n  return 0;\n}\n";
        let cv = "int main(void) {\n  char b[8];\n  api(b, 1000, 0);\n  return 0;\n}\n";
        let t = locate(cr, cv, &api("api", 3));
        assert_eq!(t, ModificationTarget { c_para: Some(2), c_loc: LocationRelation::AtCall });
    }

    #[test]
    fn inserted_release_before_call() {
        let cr = "int main(void) {\n  h *p = h_new();\n  api(p);\n  h_free(p);\n}\n";
        let cv = "int main(void) {\n  h *p = h_new();\n  h_free(p);\n  api(p);\n}\n";
        let t = locate(cr, cv, &api("api", 1));
        assert_eq!(t, ModificationTarget { c_para: Some(1), c_loc: LocationRelation::Before });
    }

    #[test]
    fn deleted_release_after_call() {
        let cr = "int main(void) {\n  h *p;\n  api(&p);\n  h_free(p);\n  return 0;\n}\n";
        let cv = "int main(void) {\n  h *p;\n  api(&p);\n  return 0;\n}\n";
        let t = locate(cr, cv, &api("api", 1));
        assert_eq!(t, ModificationTarget { c_para: Some(1), c_loc: LocationRelation::After });
    }

    #[test]
    fn feeder_assignment_counts_as_value_at_call() {
        let cr = "int main(void) {\n  int n = 4;\n  api(0, n);\n}\n";
        let cv = "int main(void) {\n  int n = -1;\n  api(0, n);\n}\n";
        let t = locate(cr, cv, &api("api", 2));
        assert_eq!(t, ModificationTarget { c_para: Some(2), c_loc: LocationRelation::AtCall });
    }

    #[test]
    fn missing_call_is_error() {
        let mods = diff_code("int main(){api(1);}", "int main(){return 0;}");
        let unit = corpus::parse_c_unit("v.c", b"int main(){return 0;}").unwrap();
        assert_eq!(locate_modified_param(&mods, &api("api", 1), &unit), Err(ConsistencyError::NoApiCall("api".into())));
    }

    #[test]
    fn unrelated_change_is_unknown() {
        let cr = "int main(void) {\n  int x = 1;\n  api(0);\n  return x;\n}\n";
        let cv = "int main(void) {\n  int x = 2;\n  api(0);\n  return x;\n}\n";
        let t = locate(cr, cv, &api("api", 1));
        assert_eq!(t.c_loc, LocationRelation::Unknown);
        assert!(!check_consistency(&t, &RuleTarget { r_para: 1, r_loc: LocationRelation::AtCall }));
    }

    #[test]
    fn keywords() {
        assert_eq!(rule_location("parameter 2 must be released after calling x_open"), LocationRelation::After);
        assert_eq!(rule_location("Parameter 1 must not be closed before calling y"), LocationRelation::Before);
        assert_eq!(rule_location("must be freed prior to exit, not after"), LocationRelation::Before);
        assert_eq!(rule_location("size must not exceed the buffer"), LocationRelation::AtCall);
        assert_eq!(rule_location("release it when no longer needed"), LocationRelation::After);
        assert_eq!(rule_location("the beforehand value"), LocationRelation::AtCall);
    }

    #[test]
    fn consistency_truth_table() {
        let m = |p, l| ModificationTarget { c_para: p, c_loc: l };
        let r = |p, l| RuleTarget { r_para: p, r_loc: l };
        use LocationRelation::*;
        assert!(check_consistency(&m(Some(3), AtCall), &r(3, AtCall)));
        assert!(!check_consistency(&m(Some(2), AtCall), &r(1, AtCall)));
        assert!(!check_consistency(&m(Some(1), Before), &r(1, After)));
        assert!(check_consistency(&m(Some(1), Before), &r(1, Unknown)));
        assert!(!check_consistency(&m(Some(1), Unknown), &r(1, Before)));
    }
}
