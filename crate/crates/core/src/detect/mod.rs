//! Misuse detection: compiled rule patterns, query emission and an
//! intra-procedural scanner over application sources.

pub mod cfg;
mod compile;
mod query;

use std::collections::BTreeSet;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tree_sitter::Node;

use crate::corpus::{self, SourceUnit};
use cfg::{Cfg, NodeKind, Value};

pub use compile::compile_rule;
pub use query::{emit_query_file, query_file_name, QueryError, TemplateSet};

/// `param_index` values are 1-based parameter positions.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "pattern")]
pub enum Pattern {
    /// `api_a` must not be called on the resource before `api_b`.
    NotCalledBefore {
        api_a: String,
        api_b: String,
        param_index: usize,
    },
    /// `api_a` must be called on the resource bound by `api_b`.
    MustCallAfter {
        api_a: String,
        api_b: String,
        param_index: usize,
    },
    MustNotPassValue {
        api: String,
        param_index: usize,
        value: String,
    },
    MustNotUseLater {
        api: String,
        param_index: usize,
    },
    MustBeInitialized {
        api: String,
        param_index: usize,
    },
}

impl Pattern {
    pub fn name(&self) -> &'static str {
        match self {
            Pattern::NotCalledBefore { .. } => "not_called_before",
            Pattern::MustCallAfter { .. } => "must_call_after",
            Pattern::MustNotPassValue { .. } => "must_not_pass_value",
            Pattern::MustNotUseLater { .. } => "must_not_use_later",
            Pattern::MustBeInitialized { .. } => "must_be_initialized",
        }
    }

    /// The API whose parameter the rule constrains.
    pub fn target_api(&self) -> &str {
        match self {
            Pattern::NotCalledBefore { api_b, .. } | Pattern::MustCallAfter { api_b, .. } => api_b,
            Pattern::MustNotPassValue { api, .. }
            | Pattern::MustNotUseLater { api, .. }
            | Pattern::MustBeInitialized { api, .. } => api,
        }
    }

    pub fn param_index(&self) -> usize {
        match self {
            Pattern::NotCalledBefore { param_index, .. }
            | Pattern::MustCallAfter { param_index, .. }
            | Pattern::MustNotPassValue { param_index, .. }
            | Pattern::MustNotUseLater { param_index, .. }
            | Pattern::MustBeInitialized { param_index, .. } => *param_index,
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pattern::NotCalledBefore { api_a, api_b, param_index } => {
                write!(f, "NotCalledBefore({api_a}, {api_b}, {param_index})")
            }
            Pattern::MustCallAfter { api_a, api_b, param_index } => {
                write!(f, "MustCallAfter({api_a}, {api_b}, {param_index})")
            }
            Pattern::MustNotPassValue { api, param_index, value } => {
                write!(f, "MustNotPassValue({api}, {param_index}, {value})")
            }
            Pattern::MustNotUseLater { api, param_index } => write!(f, "MustNotUseLater({api}, {param_index})"),
            Pattern::MustBeInitialized { api, param_index } => {
                write!(f, "MustBeInitialized({api}, {param_index})")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DetectionRule {
    #[serde(flatten)]
    pub pattern: Pattern,
    pub source_rule_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Compiled {
    Rule(DetectionRule),
    NotCompilable { rule_id: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MisuseFinding {
    pub rule: DetectionRule,
    pub file: String,
    pub line: usize,
    pub function: String,
    pub snippet: String,
    pub explanation: String,
}

/// Scanner inputs that do not come from the rule itself.
#[derive(Debug, Clone, Default)]
pub struct ScanOptions {
    /// Functions that return NULL on failure.
    pub may_fail_allocators: BTreeSet<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScanReport {
    pub findings: Vec<MisuseFinding>,
    pub functions_scanned: usize,
    /// Functions skipped because their syntax tree has errors.
    pub functions_skipped: usize,
    /// Rules excluded before scanning: (rule id, reason).
    pub not_compilable: Vec<(String, String)>,
}

#[derive(Serialize)]
struct FindingLine<'a> {
    rule_id: &'a str,
    pattern: String,
    file: &'a str,
    line: usize,
    function: &'a str,
    snippet: &'a str,
}

impl ScanReport {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for f in &self.findings {
            let line = FindingLine {
                rule_id: &f.rule.source_rule_id,
                pattern: f.rule.pattern.to_string(),
                file: &f.file,
                line: f.line,
                function: &f.function,
                snippet: &f.snippet,
            };
            out.push_str(&serde_json::to_string(&line).expect("finding serializes"));
            out.push('\n');
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{} finding(s); {} function(s) scanned, {} skipped (parse errors)\n",
            self.findings.len(),
            self.functions_scanned,
            self.functions_skipped
        );
        let mut current: Option<(&str, &str)> = None;
        for f in &self.findings {
            let key = (f.rule.source_rule_id.as_str(), f.file.as_str());
            if current != Some(key) {
                if current.map(|c| c.0) != Some(key.0) {
                    out.push_str(&format!("\n[{}] {}\n", f.rule.source_rule_id, f.rule.pattern));
                }
                out.push_str(&format!("  {}\n", f.file));
                current = Some(key);
            }
            out.push_str(&format!(
                "    {}:{} in {}: {}\n      {}\n",
                f.file, f.line, f.function, f.snippet, f.explanation
            ));
        }
        if !self.not_compilable.is_empty() {
            out.push_str(&format!("\n{} rule(s) not compilable:\n", self.not_compilable.len()));
            for (id, reason) in &self.not_compilable {
                out.push_str(&format!("  {id}: {reason}\n"));
            }
        }
        out
    }
}

fn snippet(text: &str) -> String {
    text.lines().next().unwrap_or("").trim().to_string()
}

/// Calls to `api` in `cfg` as (node, argument) for the 1-based `param_index`.
fn call_args<'c>(cfg: &'c Cfg, api: &'c str, param_index: usize) -> impl Iterator<Item = (usize, &'c cfg::Arg)> + 'c {
    cfg.nodes.iter().enumerate().flat_map(move |(i, n)| {
        n.calls
            .iter()
            .filter(move |c| c.callee == api)
            .filter_map(move |c| param_index.checked_sub(1).and_then(|k| c.args.get(k)))
            .map(move |a| (i, a))
    })
}

struct Ctx<'a> {
    cfg: &'a Cfg,
    rule: &'a DetectionRule,
    file: &'a str,
    opts: &'a ScanOptions,
}

impl Ctx<'_> {
    fn finding(&self, node: usize, explanation: String) -> MisuseFinding {
        let n = &self.cfg.nodes[node];
        MisuseFinding {
            rule: self.rule.clone(),
            file: self.file.to_string(),
            line: n.line,
            function: self.cfg.function.clone(),
            snippet: snippet(&n.text),
            explanation,
        }
    }

    fn is_bad_value(&self, v: &Value, token: &str) -> bool {
        match v {
            Value::Null => token == "NULL",
            Value::Call(c) => token == "NULL" && self.opts.may_fail_allocators.contains(c),
            Value::Literal(l) => l == token,
            Value::Other => false,
        }
    }

    fn must_not_pass_value(&self, api: &str, idx: usize, token: &str) -> Vec<MisuseFinding> {
        let cfg = self.cfg;
        let idom = cfg.dominators();
        let mut out = Vec::new();
        for (n, arg) in call_args(cfg, api, idx) {
            if self.is_bad_value(&arg.value, token) {
                out.push(self.finding(n, format!("argument {idx} of {api} is `{}`, which may be {token}", arg.text)));
                continue;
            }
            let Some(v) = arg.var.as_deref().filter(|_| !arg.addr_of) else { continue };
            let sources = cfg.nodes.iter().enumerate().filter(|(d, node)| {
                *d != n && node.defs.iter().any(|def| def.var == v && self.is_bad_value(&def.value, token))
            });
            let mut hit = None;
            for (d, _) in sources {
                let reached = cfg.reach(
                    d,
                    |from, e| match cfg.nodes[from].nonnull_edge(v) {
                        Some(nonnull) => e != nonnull,
                        None => true,
                    },
                    |x| x == n || cfg.nodes[x].defines(v),
                );
                if !reached.contains(&n) {
                    continue;
                }
                let guarded =
                    reached.iter().any(|&k| cfg.nodes[k].nonnull_edge(v).is_some() && cfg.dominates(&idom, k, n));
                if !guarded {
                    hit = Some(d);
                    break;
                }
            }
            if let Some(d) = hit {
                out.push(self.finding(
                    n,
                    format!(
                        "`{v}` from line {} may be {token} when passed as argument {idx} of {api}; no check on every path",
                        cfg.nodes[d].line
                    ),
                ));
            }
        }
        out
    }

    fn not_called_before(&self, a: &str, b: &str, idx: usize) -> Vec<MisuseFinding> {
        let cfg = self.cfg;
        let mut flagged = BTreeSet::new();
        let mut out = Vec::new();
        for (na, arg) in call_args(cfg, a, 1) {
            let Some(v) = arg.var.as_deref() else { continue };
            let reached = cfg.reach(na, |_, _| true, |x| cfg.nodes[x].defines(v) && !has_call_on(cfg, x, b, idx, v));
            for x in reached {
                if has_call_on(cfg, x, b, idx, v) && flagged.insert(x) {
                    out.push(self.finding(
                        x,
                        format!("{b} uses `{v}` after {a} was called on it at line {}", cfg.nodes[na].line),
                    ));
                }
            }
        }
        out
    }

    fn must_call_after(&self, a: &str, b: &str, idx: usize) -> Vec<MisuseFinding> {
        let cfg = self.cfg;
        let mut out = Vec::new();
        for (nb, arg) in call_args(cfg, b, idx) {
            let Some(v) = arg.var.clone() else { continue };
            let v = v.as_str();
            let released = |x: usize| {
                let node = &cfg.nodes[x];
                node.calls.iter().any(|c| c.callee == a && c.mentions(v)) || node.escapes.contains(v)
            };
            let mut parent = vec![usize::MAX; cfg.nodes.len()];
            let mut queue = std::collections::VecDeque::from([nb]);
            let mut seen = vec![false; cfg.nodes.len()];
            seen[nb] = true;
            let mut leak_site = None;
            while let Some(x) = queue.pop_front() {
                if x == cfg.exit {
                    leak_site = Some(parent[x]);
                    break;
                }
                if x != nb && (released(x) || cfg.nodes[x].defines(v)) {
                    continue;
                }
                let nonnull = cfg.nodes[x].nonnull_edge(v);
                for &(to, e) in &cfg.succ[x] {
                    if nonnull.is_some_and(|keep| e != keep) {
                        continue;
                    }
                    if !seen[to] {
                        seen[to] = true;
                        parent[to] = x;
                        queue.push_back(to);
                    }
                }
            }
            if let Some(site) = leak_site {
                let site = if site == usize::MAX { nb } else { site };
                let mut f = self.finding(
                    site,
                    format!("`{v}` bound by {b} at line {} reaches function exit without {a}", cfg.nodes[nb].line),
                );
                if cfg.nodes[site].kind == NodeKind::Join || cfg.nodes[site].text.is_empty() {
                    f.line = cfg.nodes[cfg.exit].line;
                    f.snippet = "}".into();
                }
                out.push(f);
            }
        }
        out
    }

    fn must_not_use_later(&self, api: &str, idx: usize) -> Vec<MisuseFinding> {
        let cfg = self.cfg;
        let mut out = Vec::new();
        for (n, arg) in call_args(cfg, api, idx) {
            let Some(v) = arg.var.as_deref() else { continue };
            let reached = cfg.reach(n, |_, _| true, |x| cfg.nodes[x].defines(v));
            if let Some(&u) =
                reached.iter().find(|&&x| cfg.nodes[x].uses.contains(v) || cfg.nodes[x].partial_defs.contains(v))
            {
                out.push(self.finding(n, format!("`{v}` is used at line {} after {api}", cfg.nodes[u].line)));
            }
        }
        out
    }

    fn must_be_initialized(&self, api: &str, idx: usize) -> Vec<MisuseFinding> {
        let cfg = self.cfg;
        let mut out = Vec::new();
        for (n, arg) in call_args(cfg, api, idx) {
            let Some(v) = arg.var.as_deref() else { continue };
            let initializes = |x: usize| {
                let node = &cfg.nodes[x];
                node.defines(v)
                    || node.partial_defs.contains(v)
                    || node.calls.iter().any(|c| c.args.iter().any(|a| a.var.as_deref() == Some(v)))
            };
            let decls = cfg.nodes.iter().enumerate().filter(|(_, node)| node.uninit_decls.iter().any(|d| d == v));
            for (d, _) in decls {
                let reached = cfg.reach(d, |_, _| true, |x| x == n || initializes(x));
                if reached.contains(&n) {
                    out.push(self.finding(
                        n,
                        format!("`{v}` declared at line {} may reach {api} without initialization", cfg.nodes[d].line),
                    ));
                    break;
                }
            }
        }
        out
    }
}

fn has_call_on(cfg: &Cfg, x: usize, api: &str, idx: usize, v: &str) -> bool {
    cfg.nodes[x].calls.iter().any(|c| {
        c.callee == api && idx.checked_sub(1).and_then(|k| c.args.get(k)).is_some_and(|a| a.var.as_deref() == Some(v))
    })
}

/// Findings of one rule in one function; None when the function has
/// syntax errors and is skipped.
pub fn scan_function(
    func: Node<'_>,
    unit: &SourceUnit,
    rule: &DetectionRule,
    opts: &ScanOptions,
) -> Option<Vec<MisuseFinding>> {
    if func.has_error() {
        return None;
    }
    let cfg = Cfg::build(func, &unit.text);
    Some(scan_cfg(&cfg, &unit.path.display().to_string(), rule, opts))
}

fn scan_cfg(cfg: &Cfg, file: &str, rule: &DetectionRule, opts: &ScanOptions) -> Vec<MisuseFinding> {
    let ctx = Ctx { cfg, rule, file, opts };
    match &rule.pattern {
        Pattern::MustNotPassValue { api, param_index, value } => ctx.must_not_pass_value(api, *param_index, value),
        Pattern::NotCalledBefore { api_a, api_b, param_index } => ctx.not_called_before(api_a, api_b, *param_index),
        Pattern::MustCallAfter { api_a, api_b, param_index } => ctx.must_call_after(api_a, api_b, *param_index),
        Pattern::MustNotUseLater { api, param_index } => ctx.must_not_use_later(api, *param_index),
        Pattern::MustBeInitialized { api, param_index } => ctx.must_be_initialized(api, *param_index),
    }
}

/// Apply every rule to every function of every unit.
pub fn scan_application(units: &[SourceUnit], rules: &[DetectionRule], opts: &ScanOptions) -> ScanReport {
    let mut report = ScanReport::default();
    if rules.is_empty() {
        return report;
    }
    let mut funcs: Vec<(&SourceUnit, Node<'_>)> = Vec::new();
    for unit in units {
        let mut nodes = Vec::new();
        corpus::collect_kind(unit.root(), "function_definition", &mut nodes);
        funcs.extend(nodes.into_iter().map(|n| (unit, n)));
    }
    report.functions_skipped = funcs.iter().filter(|(_, f)| f.has_error()).count();
    report.functions_scanned = funcs.len() - report.functions_skipped;
    // Nodes are not Send; parallelism is over pre-built graphs.
    let graphs: Vec<(String, Cfg)> = funcs
        .iter()
        .filter(|(_, f)| !f.has_error())
        .map(|(u, f)| (u.path.display().to_string(), Cfg::build(*f, &u.text)))
        .collect();
    let mut findings: Vec<MisuseFinding> = graphs
        .par_iter()
        .flat_map_iter(|(file, cfg)| rules.iter().flat_map(move |r| scan_cfg(cfg, file, r, opts)))
        .collect();
    findings.sort_by(|a, b| {
        (&a.rule.source_rule_id, &a.rule.pattern, &a.file, a.line, &a.function, &a.explanation).cmp(&(
            &b.rule.source_rule_id,
            &b.rule.pattern,
            &b.file,
            b.line,
            &b.function,
            &b.explanation,
        ))
    });
    findings.dedup();
    report.findings = findings;
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rule(pattern: Pattern) -> DetectionRule {
        DetectionRule { pattern, source_rule_id: "r".into() }
    }

    fn opts() -> ScanOptions {
        ScanOptions { may_fail_allocators: ["malloc".to_string(), "ctx_new".to_string()].into() }
    }

    fn scan(src: &str, r: &DetectionRule) -> Vec<MisuseFinding> {
        let unit = corpus::parse_c_unit("app.c", src.as_bytes()).unwrap();
        scan_application(std::slice::from_ref(&unit), std::slice::from_ref(r), &opts()).findings
    }

    fn not_null(api: &str) -> DetectionRule {
        rule(Pattern::MustNotPassValue { api: api.into(), param_index: 1, value: "NULL".into() })
    }

    #[test]
    fn unchecked_allocator_result() {
        let r = not_null("init");
        let bad = "void f(void) {\n ctx *c = ctx_new();\n init(c, 1);\n}\n";
        let found = scan(bad, &r);
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].line, 3);
        let good = "void f(void) {\n ctx *c = ctx_new();\n if (c == NULL) return;\n init(c, 1);\n}\n";
        assert!(scan(good, &r).is_empty());
        let literal = "void f(void) {\n init(NULL, 1);\n}\n";
        assert_eq!(scan(literal, &r).len(), 1);
    }

    #[test]
    fn dominating_check_suppresses_even_without_early_exit() {
        let r = not_null("init");
        let src = "void f(void) {\n ctx *c = ctx_new();\n if (!c) log_it();\n init(c, 1);\n}\n";
        assert!(scan(src, &r).is_empty());
    }

    #[test]
    fn check_in_callee_is_not_seen() {
        let r = not_null("init");
        let src = "static int ok(ctx *c) { return c != NULL; }\nvoid f(void) {\n ctx *c = ctx_new();\n ok(c);\n init(c, 1);\n}\n";
        assert_eq!(scan(src, &r).len(), 1);
    }

    #[test]
    fn release_missing_on_error_path() {
        let r = rule(Pattern::MustCallAfter { api_a: "db_close".into(), api_b: "db_open".into(), param_index: 2 });
        let bad = "int f(const char *n) {\n db *h;\n if (db_open(n, &h) != 0) {\n  return -1;\n }\n use(h);\n db_close(h);\n return 0;\n}\n";
        let found = scan(bad, &r);
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].line, 4);
        let good = bad.replace("  return -1;", "  db_close(h);\n  return -1;");
        assert!(scan(&good, &r).is_empty());
        let handed_off = "void f(struct s *o) {\n db *h;\n db_open(\"x\", &h);\n o->h = h;\n}\n";
        assert!(scan(handed_off, &r).is_empty());
    }

    #[test]
    fn call_order() {
        let r = rule(Pattern::NotCalledBefore { api_a: "db_close".into(), api_b: "db_put".into(), param_index: 1 });
        let bad = "void f(db *h) {\n if (x) db_close(h);\n db_put(h, 1);\n}\n";
        assert_eq!(scan(bad, &r).len(), 1);
        let reopened = "void f(db *h) {\n db_close(h);\n h = db_new();\n db_put(h, 1);\n}\n";
        assert!(scan(reopened, &r).is_empty());
    }

    #[test]
    fn use_after_and_initialization() {
        let later = rule(Pattern::MustNotUseLater { api: "release".into(), param_index: 1 });
        assert_eq!(scan("void f(T *p) {\n release(p);\n p->x = 1;\n}\n", &later).len(), 1);
        assert!(scan("void f(T *p) {\n release(p);\n p = 0;\n}\n", &later).is_empty());
        let init = rule(Pattern::MustBeInitialized { api: "sum".into(), param_index: 1 });
        assert_eq!(scan("void f(void) {\n ctx c;\n sum(&c);\n}\n", &init).len(), 1);
        assert!(scan("void f(void) {\n ctx c;\n setup(&c, 2);\n sum(&c);\n}\n", &init).is_empty());
        assert_eq!(scan("void f(int k) {\n ctx c;\n if (k) setup(&c, 2);\n sum(&c);\n}\n", &init).len(), 1);
    }

    #[test]
    fn broken_functions_are_counted() {
        let unit = corpus::parse_c_unit("a.c", b"void f(void) { init(NULL); }\nvoid g(void) { int = ; }\n").unwrap();
        let rep = scan_application(std::slice::from_ref(&unit), &[not_null("init")], &opts());
        assert_eq!(rep.functions_skipped, 1);
        assert_eq!(rep.findings.len(), 1);
        assert!(rep.to_jsonl().contains("\"pattern\":\"MustNotPassValue(init, 1, NULL)\""));
    }

    #[test]
    fn empty_rule_set() {
        let unit = corpus::parse_c_unit("a.c", b"void f(void) { init(NULL); }\n").unwrap();
        assert_eq!(scan_application(&[unit], &[], &opts()), ScanReport::default());
    }
}
