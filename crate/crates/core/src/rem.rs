//! Runtime error messages (REMs): parsing monitor output, deciding whether an
//! error originates in the target API, and grouping reports by signature.
//!
//! Two monitor dialects are recognized, AddressSanitizer/LeakSanitizer and
//! Valgrind memcheck, plus the synthesized `signal-crash` report the harness
//! writes when a process dies on a signal without printing anything.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use tree_sitter::Node;

use crate::corpus::{self, SourceUnit};

/// Prefix of the report the harness synthesizes for bare fatal signals.
pub const SIGNAL_CRASH_PREFIX: &str = "APSRGEN: signal-crash:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MonitorKind {
    Asan,
    Valgrind,
    Signal,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrameRecord {
    pub function_name: Option<String>,
    pub file: Option<String>,
    pub line: Option<u32>,
    /// Binary or shared object the frame lives in, when reported.
    pub object: Option<String>,
}

impl FrameRecord {
    pub fn function(&self) -> &str {
        self.function_name.as_deref().unwrap_or("")
    }

    fn file_basename(&self) -> Option<&str> {
        self.file.as_deref().map(basename)
    }

    /// Sanitizer interceptors and Valgrind replacement functions.
    pub fn is_interceptor(&self) -> bool {
        let f = self.function();
        const PREFIXES: [&str; 7] =
            ["__interceptor_", "___interceptor_", "__asan_", "__lsan_", "__sanitizer", "__wrap_", "__ubsan_"];
        if PREFIXES.iter().any(|p| f.starts_with(p)) {
            return true;
        }
        let marks = ["vgpreload", "vg_replace", "libsanitizer", "compiler-rt"];
        [self.file.as_deref(), self.object.as_deref()]
            .into_iter()
            .flatten()
            .any(|loc| marks.iter().any(|m| loc.contains(m)))
    }
}

impl fmt::Display for FrameRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.function_name.as_deref().unwrap_or("??"))?;
        match (self.file_basename(), self.line) {
            (Some(file), Some(line)) => write!(f, " {file}:{line}"),
            (Some(file), None) => write!(f, " {file}"),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuntimeErrorReport {
    pub monitor: MonitorKind,
    /// e.g. `heap-buffer-overflow`, `leak`, `segv`, `signal-crash`, `unknown`.
    pub error_kind: String,
    /// Innermost frame first.
    pub frames: Vec<FrameRecord>,
    pub raw_text: String,
    pub cause_summary: String,
}

fn basename(p: &str) -> &str {
    p.rsplit('/').next().unwrap_or(p)
}

macro_rules! re {
    ($name:ident, $pat:expr) => {
        fn $name() -> &'static Regex {
            static R: OnceLock<Regex> = OnceLock::new();
            R.get_or_init(|| Regex::new($pat).expect("valid regex"))
        }
    };
}

re!(asan_error_re, r"^==\d+==ERROR: (AddressSanitizer|LeakSanitizer): (.*)$");
re!(asan_frame_re, r"^\s*#(\d+) 0x[0-9a-fA-F]+(?: in (\S+))?\s*(.*)$");
re!(asan_access_re, r"^(READ|WRITE) of size \d+");
re!(asan_signal_access_re, r"The signal is caused by a (READ|WRITE) memory access");
re!(asan_leak_re, r"^(Direct|Indirect) leak of \d+ byte");
re!(vg_prefix_re, r"^==\d+== ?(.*)$");
re!(vg_frame_re, r"^\s*(?:at|by) 0x[0-9A-Fa-f]+: (\S+) \((.*)\)\s*$");
re!(file_line_re, r"^(.*?):(\d+)(?::\d+)?$");
re!(hex_re, r"0x[0-9a-fA-F]+");
re!(pid_re, r"==\d+==");
re!(paren_regs_re, r"\((?:pc|bp|sp)[^)]*\)");
re!(asan_regs_re, r"\bat pc 0x[0-9a-fA-F]+ bp 0x[0-9a-fA-F]+ sp 0x[0-9a-fA-F]+");
re!(on_address_re, r"\bon (?:unknown )?address 0x[0-9a-fA-F]+");
re!(int_re, r"\b\d+\b");
re!(abs_path_re, r"(?:/[^\s/:()]+)+/([^\s/:()]+)");

struct VgPattern {
    re: Regex,
    kind: &'static str,
}

fn valgrind_patterns() -> &'static [VgPattern] {
    static P: OnceLock<Vec<VgPattern>> = OnceLock::new();
    P.get_or_init(|| {
        [
            (r"^Invalid read of size \d+", "invalid-read"),
            (r"^Invalid write of size \d+", "invalid-write"),
            (r"^Conditional jump or move depends on uninitialised value", "uninitialized-value"),
            (r"^Use of uninitialised value of size \d+", "uninitialized-value"),
            (r"^Syscall param .* uninitialised byte", "uninitialized-value"),
            (r"^Invalid free\(\) / delete", "invalid-free"),
            (r"^Mismatched free\(\) / delete", "mismatched-free"),
            (r"bytes in [\d,]+ blocks are definitely lost", "leak"),
            (r"^Source and destination overlap", "memcpy-param-overlap"),
            (r"^Argument '\w+' of function \w+ has a fishy", "fishy-size"),
            (r"^Process terminating with default action of signal \d+", "signal"),
        ]
        .into_iter()
        .map(|(p, kind)| VgPattern { re: Regex::new(p).expect("valid regex"), kind })
        .collect()
    })
}

fn parse_location(loc: &str) -> (Option<String>, Option<u32>, Option<String>) {
    let loc = loc.trim();
    if loc.is_empty() {
        return (None, None, None);
    }
    if let Some(obj) = loc.strip_prefix('(').and_then(|s| s.strip_suffix(')')) {
        let obj = obj.split('+').next().unwrap_or(obj);
        return (None, None, Some(obj.to_string()));
    }
    if let Some(obj) = loc.strip_prefix("in ") {
        return (None, None, Some(obj.to_string()));
    }
    if let Some(c) = file_line_re().captures(loc) {
        let line = c[2].parse().ok();
        return (Some(c[1].to_string()), line, None);
    }
    (Some(loc.to_string()), None, None)
}

fn asan_signal_kind(headline: &str) -> String {
    let first = headline.split_whitespace().next().unwrap_or("unknown");
    match first {
        "SEGV" => "segv".into(),
        "BUS" => "bus".into(),
        "FPE" => "fpe".into(),
        "ABRT" => "abort".into(),
        "ILL" => "ill".into(),
        _ if headline.starts_with("attempting double-free") => "double-free".into(),
        _ if headline.starts_with("attempting free on address which was not malloc") => "bad-free".into(),
        _ if headline.starts_with("requested allocation size") => "allocation-size-too-big".into(),
        _ if headline.starts_with("allocator is out of memory") => "out-of-memory".into(),
        other => other.trim_end_matches(':').to_lowercase(),
    }
}

fn parse_asan(raw: &str, lines: &[&str], start: usize, sanitizer: &str, headline: &str) -> RuntimeErrorReport {
    let leak = sanitizer == "LeakSanitizer";
    let error_kind = if leak { "leak".to_string() } else { asan_signal_kind(headline) };
    let mut op: Option<String> = None;
    let mut frames = Vec::new();
    let mut in_stack = false;
    let mut leak_kind: Option<String> = None;
    for line in &lines[start + 1..] {
        let trimmed = line.trim();
        if let Some(c) = asan_frame_re().captures(line) {
            if !frames.is_empty() && !in_stack {
                break;
            }
            in_stack = true;
            let (file, line_no, object) = parse_location(c.get(3).map_or("", |m| m.as_str()));
            frames.push(FrameRecord {
                function_name: c.get(2).map(|m| m.as_str().to_string()),
                file,
                line: line_no,
                object,
            });
            continue;
        }
        if in_stack {
            // The first stack ends at the first non-frame line.
            break;
        }
        if let Some(c) = asan_access_re().captures(trimmed) {
            op.get_or_insert_with(|| c[1].to_string());
        } else if let Some(c) = asan_signal_access_re().captures(trimmed) {
            op.get_or_insert_with(|| c[1].to_string());
        } else if let Some(c) = asan_leak_re().captures(trimmed) {
            leak_kind.get_or_insert_with(|| format!("{} leak", &c[1]));
        }
    }
    let mut cause = headline.to_string();
    if let Some(kind) = leak_kind {
        cause = format!("{cause}; {kind}");
    }
    if let Some(op) = op {
        cause = format!("{cause}; {op}");
    }
    RuntimeErrorReport {
        monitor: MonitorKind::Asan,
        error_kind,
        frames,
        raw_text: raw.to_string(),
        cause_summary: cause,
    }
}

fn parse_valgrind(raw: &str) -> Option<RuntimeErrorReport> {
    let body: Vec<&str> =
        raw.lines().filter_map(|l| vg_prefix_re().captures(l).map(|c| c.get(1).unwrap().as_str())).collect();
    let (idx, kind, headline) = body.iter().enumerate().find_map(|(i, l)| {
        valgrind_patterns().iter().find(|p| p.re.is_match(l)).map(|p| (i, p.kind, l.trim().to_string()))
    })?;
    let error_kind = if kind == "signal" { signal_kind_from_text(&headline) } else { kind.to_string() };
    let mut frames = Vec::new();
    for l in &body[idx + 1..] {
        match vg_frame_re().captures(l) {
            Some(c) => {
                let name = c[1].to_string();
                let (file, line, object) = parse_location(&c[2]);
                frames.push(FrameRecord { function_name: (name != "???").then_some(name), file, line, object });
            }
            None if frames.is_empty() && l.trim().is_empty() => continue,
            None if frames.is_empty() => continue,
            None => break,
        }
    }
    let op = if kind == "invalid-read" {
        Some("READ")
    } else if kind == "invalid-write" {
        Some("WRITE")
    } else {
        None
    };
    let cause_summary = match op {
        Some(op) => format!("{headline}; {op}"),
        None => headline,
    };
    Some(RuntimeErrorReport {
        monitor: MonitorKind::Valgrind,
        error_kind,
        frames,
        raw_text: raw.to_string(),
        cause_summary,
    })
}

fn signal_kind_from_text(text: &str) -> String {
    let names = [("SIGSEGV", "segv"), ("SIGBUS", "bus"), ("SIGFPE", "fpe"), ("SIGABRT", "abort"), ("SIGILL", "ill")];
    names
        .iter()
        .find(|(sig, _)| text.contains(sig))
        .map(|(_, k)| k.to_string())
        .unwrap_or_else(|| "signal-crash".into())
}

/// Parse monitor output. Never fails: unrecognized text yields kind
/// `unknown` with no frames, and the raw text is always retained.
pub fn parse_rem(raw_text: &str) -> RuntimeErrorReport {
    let lines: Vec<&str> = raw_text.lines().collect();
    for (i, line) in lines.iter().enumerate() {
        if let Some(c) = asan_error_re().captures(line.trim_end()) {
            let sanitizer = c[1].to_string();
            let headline = c[2].trim().to_string();
            return parse_asan(raw_text, &lines, i, &sanitizer, &headline);
        }
    }
    if let Some(rep) = parse_valgrind(raw_text) {
        return rep;
    }
    if let Some(line) = lines.iter().find(|l| l.starts_with(SIGNAL_CRASH_PREFIX)) {
        return RuntimeErrorReport {
            monitor: MonitorKind::Signal,
            error_kind: "signal-crash".into(),
            frames: Vec::new(),
            raw_text: raw_text.to_string(),
            cause_summary: line[SIGNAL_CRASH_PREFIX.len()..].trim().to_string(),
        };
    }
    RuntimeErrorReport {
        monitor: MonitorKind::Unknown,
        error_kind: "unknown".into(),
        frames: Vec::new(),
        raw_text: raw_text.to_string(),
        cause_summary: String::new(),
    }
}

/// Outcome of the API-relatedness analysis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relatedness {
    Related,
    /// The harness frame is on a line without a call to the api.
    NotAtApiCall {
        line: u32,
    },
    /// The frame above the harness frame is a libc wrapper interceptor.
    Interceptor {
        function: String,
    },
    /// The frame above the harness frame is outside the library (or absent).
    OutsideLibrary {
        function: Option<String>,
    },
    /// No frame maps to the harness program.
    Indeterminate,
}

impl Relatedness {
    pub fn is_related(&self) -> bool {
        matches!(self, Relatedness::Related)
    }
}

/// Statement-level line span containing `call`: the enclosing expression
/// statement, declaration or return, or the condition of a control statement.
pub(crate) fn statement_span(call: Node<'_>) -> (usize, usize) {
    let mut node = call;
    while let Some(parent) = node.parent() {
        if matches!(node.kind(), "expression_statement" | "declaration" | "return_statement")
            || matches!(
                parent.kind(),
                "if_statement"
                    | "while_statement"
                    | "do_statement"
                    | "switch_statement"
                    | "for_statement"
                    | "compound_statement"
                    | "translation_unit"
            )
        {
            break;
        }
        node = parent;
    }
    (corpus::line_of(node), corpus::end_line_of(node))
}

fn line_calls_api(unit: &SourceUnit, api_name: &str, line: usize) -> bool {
    let mut calls = Vec::new();
    corpus::collect_kind(unit.root(), "call_expression", &mut calls);
    calls.into_iter().any(|c| {
        corpus::callee_name(c, &unit.text) == Some(api_name) && {
            let (start, end) = statement_span(c);
            start <= line && line <= end
        }
    })
}

/// Decide whether a report originates in the target API: the harness frame
/// must sit on a statement calling the API, and the frame directly above it
/// must belong to the library rather than an interceptor. When the harness
/// line calls several functions, only the second condition discriminates.
pub fn api_relatedness(
    rem: &RuntimeErrorReport,
    api_name: &str,
    entry_unit: &SourceUnit,
    library_symbols: &BTreeSet<String>,
) -> Relatedness {
    let entry_functions: BTreeSet<String> = entry_unit.functions().into_iter().map(|f| f.name).collect();
    let entry = rem.frames.iter().position(|f| {
        let name = f.function();
        entry_functions.contains(name) && !library_symbols.contains(name)
    });
    let Some(entry) = entry else {
        return Relatedness::Indeterminate;
    };
    let frame = &rem.frames[entry];
    let Some(line) = frame.line else {
        return Relatedness::Indeterminate;
    };
    if !line_calls_api(entry_unit, api_name, line as usize) {
        return Relatedness::NotAtApiCall { line };
    }
    let Some(above) = entry.checked_sub(1).map(|i| &rem.frames[i]) else {
        return Relatedness::OutsideLibrary { function: None };
    };
    if above.is_interceptor() {
        return Relatedness::Interceptor { function: above.function().to_string() };
    }
    if library_symbols.contains(above.function()) {
        Relatedness::Related
    } else {
        Relatedness::OutsideLibrary { function: above.function_name.clone() }
    }
}

pub fn is_api_related(
    rem: &RuntimeErrorReport,
    api_name: &str,
    entry_unit: &SourceUnit,
    library_symbols: &BTreeSet<String>,
) -> bool {
    api_relatedness(rem, api_name, entry_unit, library_symbols).is_related()
}

/// A report with run-specific noise removed.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ErrorSignature {
    pub error_kind: String,
    /// Library frames entered from the harness, outermost first.
    pub api_frame_path: Vec<String>,
    pub cause_summary: String,
}

impl fmt::Display for ErrorSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} [{}] {}", self.error_kind, self.api_frame_path.join(" > "), self.cause_summary)
    }
}

/// Strip pids, addresses, register dumps, absolute paths and counts.
pub fn normalize_cause(text: &str) -> String {
    let t = pid_re().replace_all(text, "");
    let t = paren_regs_re().replace_all(&t, "");
    let t = asan_regs_re().replace_all(&t, "");
    let t = on_address_re().replace_all(&t, "");
    let t = hex_re().replace_all(&t, "");
    let t = abs_path_re().replace_all(&t, "$1");
    let t = int_re().replace_all(&t, "N");
    t.split_whitespace().collect::<Vec<_>>().join(" ").replace(" ;", ";")
}

/// Normalize a report for clustering. Signal crashes carry only their kind
/// and faulting frame path.
pub fn normalize_signature(rem: &RuntimeErrorReport, library_symbols: &BTreeSet<String>) -> ErrorSignature {
    let in_lib = |f: &FrameRecord| library_symbols.contains(f.function());
    let outermost_lib = rem.frames.iter().rposition(in_lib);
    let mut path = Vec::new();
    if let Some(top) = outermost_lib {
        for f in rem.frames[..=top].iter().rev() {
            if !in_lib(f) {
                break;
            }
            path.push(f.function().to_string());
        }
    }
    let cause_summary =
        if rem.monitor == MonitorKind::Signal { String::new() } else { normalize_cause(&rem.cause_summary) };
    ErrorSignature { error_kind: rem.error_kind.clone(), api_frame_path: path, cause_summary }
}

/// A validated violation program together with its evidence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterMember {
    pub rule_id: String,
    pub param_index: usize,
    pub rule_text: String,
    pub right_code: String,
    pub violation_code: String,
    pub rem: RuntimeErrorReport,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViolationCluster {
    pub signature: ErrorSignature,
    pub members: Vec<ClusterMember>,
}

/// Partition by signature equality; clusters are ordered by signature text
/// and members keep their input order.
pub fn cluster_by_signature(outcomes: Vec<ClusterMember>, library_symbols: &BTreeSet<String>) -> Vec<ViolationCluster> {
    let mut groups: BTreeMap<String, ViolationCluster> = BTreeMap::new();
    for m in outcomes {
        let signature = normalize_signature(&m.rem, library_symbols);
        groups
            .entry(signature.to_string())
            .or_insert_with(|| ViolationCluster { signature, members: Vec::new() })
            .members
            .push(m);
    }
    groups.into_values().collect()
}

/// Deterministic text used in refinement prompts and repair feedback.
pub fn render_summary(rem: &RuntimeErrorReport) -> String {
    let mut out = format!("error: {}\n", rem.error_kind);
    if !rem.cause_summary.is_empty() {
        out.push_str(&format!("cause: {}\n", normalize_cause(&rem.cause_summary)));
    }
    if !rem.frames.is_empty() {
        out.push_str("stack (innermost first):\n");
        for (i, f) in rem.frames.iter().enumerate() {
            if f.function() == "_start" || f.function().starts_with("__libc_start") {
                continue;
            }
            out.push_str(&format!("  #{i} {f}\n"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const UAF: &str = "=================================================================
==2483==ERROR: AddressSanitizer: heap-use-after-free on address 0x503000000050 at pc 0x5628cbc24844 bp 0x7ffc201fae70 sp 0x7ffc201fae60
READ of size 4 at 0x503000000050 thread T0
    #0 0x5628cbc24843 in mini_put /src/mini_db.c:38
    #1 0x5628cbc24445 in main /tmp/run/test.c:10
    #2 0x7f7a74429d8f in __libc_start_call_main ../sysdeps/nptl/libc_start_call_main.h:58
    #3 0x5628cbc24244 in _start (/tmp/vt/uaf.asan+0x1244)

0x503000000050 is located 16 bytes inside of 24-byte region [0x503000000040,0x503000000058)
freed by thread T0 here:
    #0 0x7f7a748b4537 in __interceptor_free ../../../../src/libsanitizer/asan/asan_malloc_linux.cpp:127
    #1 0x5628cbc247f6 in mini_close /src/mini_db.c:33
";

    fn lib() -> BTreeSet<String> {
        ["mini_put", "mini_close", "mini_open"].iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn asan_first_stack_only() {
        let r = parse_rem(UAF);
        assert_eq!(r.monitor, MonitorKind::Asan);
        assert_eq!(r.error_kind, "heap-use-after-free");
        assert_eq!(r.frames.len(), 4);
        assert_eq!(r.frames[0].function(), "mini_put");
        assert_eq!(r.frames[0].line, Some(38));
        assert_eq!(r.frames[1].file.as_deref(), Some("/tmp/run/test.c"));
        assert_eq!(r.frames[3].object.as_deref(), Some("/tmp/vt/uaf.asan"));
        assert!(r.cause_summary.ends_with("; READ"));
    }

    #[test]
    fn empty_text_is_unknown() {
        let r = parse_rem("");
        assert_eq!(r.error_kind, "unknown");
        assert!(r.frames.is_empty());
        assert_eq!(r.monitor, MonitorKind::Unknown);
    }

    #[test]
    fn synthesized_signal_report() {
        let r = parse_rem("APSRGEN: signal-crash: terminated by signal 11 (SIGSEGV)\n");
        assert_eq!(r.error_kind, "signal-crash");
        assert_eq!(r.monitor, MonitorKind::Signal);
        let sig = normalize_signature(&r, &lib());
        assert!(sig.cause_summary.is_empty());
        assert!(sig.api_frame_path.is_empty());
    }

    #[test]
    fn normalization_removes_noise() {
        let a = normalize_cause("heap-use-after-free on address 0x503000000050 at pc 0x5628 bp 0x7ffc sp 0x7ffc; READ");
        assert_eq!(a, "heap-use-after-free; READ");
        let b = normalize_cause("SEGV on unknown address 0x000000000000 (pc 0x559f bp 0x7ffe sp 0x7ffe T0); WRITE");
        assert_eq!(b, "SEGV; WRITE");
    }

    #[test]
    fn signature_path_stops_outside_library() {
        let r = parse_rem(UAF);
        let sig = normalize_signature(&r, &lib());
        assert_eq!(sig.api_frame_path, vec!["mini_put"]);
        assert_eq!(sig.error_kind, "heap-use-after-free");
    }

    #[test]
    fn relatedness_requires_api_call_on_harness_line() {
        let mut src = String::new();
        for _ in 0..9 {
            src.push('\n');
        }
        let harness = format!("int main(void) {{{src}mini_put(db, \"k\");\n other(db);\n return 0; }}");
        let unit = corpus::parse_c_unit("test.c", harness.as_bytes()).unwrap();
        let r = parse_rem(UAF);
        assert_eq!(api_relatedness(&r, "mini_put", &unit, &lib()), Relatedness::Related);
        assert!(matches!(api_relatedness(&r, "mini_close", &unit, &lib()), Relatedness::NotAtApiCall { line: 10 }));
    }
}
