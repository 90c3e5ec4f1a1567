//! C source ingestion: parsing, API indexing and call-site enumeration.
//!
//! Parsing is backed by tree-sitter's C grammar. The rest of the crate only
//! relies on four node kinds from it: function definitions, declarators,
//! parameter lists and call expressions.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tree_sitter::{Node, Parser, Tree};

/// Name of the per-library configuration file inside a library directory.
pub const LIBRARY_CONFIG_FILE: &str = "library.toml";

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: input is not C source text ({reason})")]
    NotText { path: String, reason: &'static str },
    #[error("tree-sitter failed to produce a tree for {0}")]
    ParserFailure(String),
    #[error("api `{0}` has no function definition in the library sources")]
    NotFound(String),
    #[error("api `{api}` is defined in several files ({}) and none is selected", .files.join(", "))]
    Ambiguous { api: String, files: Vec<String> },
    #[error("api `{0}` is not listed in the library api_list")]
    NotListed(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid library config: {message}")]
    Config { path: String, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io { path: path.display().to_string(), source }
}

/// A parsed C translation unit. The tree is always re-derivable from `text`.
pub struct SourceUnit {
    pub path: PathBuf,
    pub text: String,
    tree: Tree,
}

impl fmt::Debug for SourceUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SourceUnit").field("path", &self.path).field("len", &self.text.len()).finish()
    }
}

impl Clone for SourceUnit {
    fn clone(&self) -> Self {
        SourceUnit { path: self.path.clone(), text: self.text.clone(), tree: self.tree.clone() }
    }
}

fn c_parser() -> Parser {
    let mut parser = Parser::new();
    parser.set_language(&tree_sitter_c::LANGUAGE.into()).expect("tree-sitter-c grammar is ABI compatible");
    parser
}

/// Parse C text. Syntax errors are recovered and flagged on nodes; only
/// non-text input (NUL bytes, invalid UTF-8) is fatal.
pub fn parse_c_unit(path: impl Into<PathBuf>, bytes: &[u8]) -> Result<SourceUnit, CorpusError> {
    let path = path.into();
    if bytes.contains(&0) {
        return Err(CorpusError::NotText { path: path.display().to_string(), reason: "contains NUL bytes" });
    }
    let text = std::str::from_utf8(bytes)
        .map_err(|_| CorpusError::NotText { path: path.display().to_string(), reason: "invalid UTF-8" })?
        .to_string();
    let tree = c_parser().parse(&text, None).ok_or_else(|| CorpusError::ParserFailure(path.display().to_string()))?;
    Ok(SourceUnit { path, text, tree })
}

pub fn parse_c_file(path: &Path) -> Result<SourceUnit, CorpusError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    parse_c_unit(path, &bytes)
}

impl SourceUnit {
    pub fn root(&self) -> Node<'_> {
        self.tree.root_node()
    }

    pub fn node_text(&self, node: Node<'_>) -> &str {
        &self.text[node.byte_range()]
    }

    pub fn has_errors(&self) -> bool {
        self.root().has_error()
    }

    /// All function definitions in source order, including those nested in
    /// preprocessor conditionals.
    pub fn functions(&self) -> Vec<FunctionDef> {
        let mut out = Vec::new();
        collect_kind(self.root(), "function_definition", &mut out);
        out.into_iter().filter_map(|node| FunctionDef::from_node(self, node)).collect()
    }

    /// The function definition node whose name is `name`, if any.
    pub fn function_node(&self, name: &str) -> Option<Node<'_>> {
        let mut nodes = Vec::new();
        collect_kind(self.root(), "function_definition", &mut nodes);
        nodes.into_iter().find(|n| function_name(*n, &self.text).as_deref() == Some(name))
    }

    /// The innermost function definition enclosing a 1-based line.
    pub fn function_at_line(&self, line: usize) -> Option<Node<'_>> {
        let mut nodes = Vec::new();
        collect_kind(self.root(), "function_definition", &mut nodes);
        nodes.into_iter().rfind(|n| n.start_position().row < line && line <= n.end_position().row + 1)
    }
}

/// Depth-first collection of every node of `kind` below (and including) `node`.
pub(crate) fn collect_kind<'t>(node: Node<'t>, kind: &str, out: &mut Vec<Node<'t>>) {
    if node.kind() == kind {
        out.push(node);
    }
    let mut cursor = node.walk();
    for child in node.children(&mut cursor) {
        collect_kind(child, kind, out);
    }
}

pub(crate) fn line_of(node: Node<'_>) -> usize {
    node.start_position().row + 1
}

pub(crate) fn end_line_of(node: Node<'_>) -> usize {
    node.end_position().row + 1
}

fn function_declarator(node: Node<'_>) -> Option<Node<'_>> {
    let mut current = node.child_by_field_name("declarator")?;
    loop {
        if current.kind() == "function_declarator" {
            return Some(current);
        }
        current = current.child_by_field_name("declarator")?;
    }
}

/// Name of a `function_definition` node.
pub(crate) fn function_name(node: Node<'_>, src: &str) -> Option<String> {
    let decl = function_declarator(node)?;
    let name = declarator_identifier(decl.child_by_field_name("declarator")?)?;
    Some(src[name.byte_range()].to_string())
}

/// Innermost identifier of a (possibly pointer/array/parenthesized) declarator.
pub(crate) fn declarator_identifier(node: Node<'_>) -> Option<Node<'_>> {
    match node.kind() {
        "identifier" | "field_identifier" | "type_identifier" => Some(node),
        _ => {
            if let Some(inner) = node.child_by_field_name("declarator") {
                return declarator_identifier(inner);
            }
            let mut cursor = node.walk();
            let found = node.named_children(&mut cursor).find_map(declarator_identifier);
            found
        }
    }
}

/// Syntactic summary of one function definition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionDef {
    pub name: String,
    pub params: Vec<String>,
    pub variadic: bool,
    /// Prototype text, terminated by `;`.
    pub declaration: String,
    /// Verbatim text of the whole definition.
    pub text: String,
    pub start_line: usize,
    pub end_line: usize,
    pub has_error: bool,
}

impl FunctionDef {
    fn from_node(unit: &SourceUnit, node: Node<'_>) -> Option<FunctionDef> {
        let src = unit.text.as_str();
        let name = function_name(node, src)?;
        let decl = function_declarator(node)?;
        let (params, variadic) = parameter_names(decl, src);
        let body_start = node.child_by_field_name("body").map(|b| b.start_byte()).unwrap_or(node.end_byte());
        let proto = normalize_ws(&src[node.start_byte()..body_start]);
        Some(FunctionDef {
            name,
            params,
            variadic,
            declaration: format!("{proto};"),
            text: src[node.byte_range()].to_string(),
            start_line: line_of(node),
            end_line: end_line_of(node),
            has_error: node.has_error(),
        })
    }
}

fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn parameter_names(decl: Node<'_>, src: &str) -> (Vec<String>, bool) {
    let mut names = Vec::new();
    let mut variadic = false;
    let Some(list) = decl.child_by_field_name("parameters") else {
        return (names, variadic);
    };
    let mut cursor = list.walk();
    let children: Vec<Node<'_>> = list.named_children(&mut cursor).collect();
    for child in &children {
        match child.kind() {
            "variadic_parameter" => variadic = true,
            "parameter_declaration" => {
                let declarator = child.child_by_field_name("declarator");
                match declarator.and_then(declarator_identifier) {
                    Some(id) => names.push(src[id.byte_range()].to_string()),
                    None => {
                        // `(void)` declares no parameters; a bare type is unnamed.
                        let ty = child.child_by_field_name("type").map(|t| &src[t.byte_range()]);
                        if ty == Some("void") && children.len() == 1 && declarator.is_none() {
                            continue;
                        }
                        names.push(format!("arg{}", names.len() + 1));
                    }
                }
            }
            _ => {}
        }
    }
    (names, variadic)
}

/// A call expression found in application code.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallSite {
    pub function: String,
    pub file: String,
    pub line: usize,
    pub args: Vec<String>,
}

/// Positional argument texts of a `call_expression` node.
pub(crate) fn call_arguments(node: Node<'_>, src: &str) -> Vec<String> {
    let Some(args) = node.child_by_field_name("arguments") else {
        return Vec::new();
    };
    let mut cursor = args.walk();
    let out = args
        .named_children(&mut cursor)
        .filter(|n| n.kind() != "comment")
        .map(|n| src[n.byte_range()].to_string())
        .collect();
    out
}

/// Callee identifier of a call, when the callee is a plain identifier.
pub(crate) fn callee_name<'s>(node: Node<'_>, src: &'s str) -> Option<&'s str> {
    let f = node.child_by_field_name("function")?;
    (f.kind() == "identifier").then(|| &src[f.byte_range()])
}

/// Every call whose callee identifier is `api_name`. Calls through function
/// pointers under a different identifier are not matched.
pub fn enumerate_call_sites(units: &[SourceUnit], api_name: &str) -> Vec<CallSite> {
    let mut sites = Vec::new();
    for unit in units {
        let mut calls = Vec::new();
        collect_kind(unit.root(), "call_expression", &mut calls);
        for call in calls {
            if callee_name(call, &unit.text) != Some(api_name) {
                continue;
            }
            let function = enclosing_function(call, &unit.text).unwrap_or_default();
            sites.push(CallSite {
                function,
                file: unit.path.display().to_string(),
                line: line_of(call),
                args: call_arguments(call, &unit.text),
            });
        }
    }
    sites
}

fn enclosing_function(mut node: Node<'_>, src: &str) -> Option<String> {
    while let Some(parent) = node.parent() {
        if parent.kind() == "function_definition" {
            return function_name(parent, src);
        }
        node = parent;
    }
    None
}

/// Per-library static configuration, read from `library.toml`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LibraryConfig {
    pub library_id: String,
    #[serde(default)]
    pub header_files: Vec<PathBuf>,
    /// Library translation units compiled together with every harness.
    #[serde(default)]
    pub sources: Vec<PathBuf>,
    #[serde(default)]
    pub compile_flags: Vec<String>,
    #[serde(default)]
    pub link_flags: Vec<String>,
    pub api_list: Vec<String>,
    #[serde(default)]
    pub release_api_map: BTreeMap<String, String>,
    /// Functions that return NULL on failure.
    #[serde(default)]
    pub may_fail_allocators: Vec<String>,
    /// Disambiguates same-name definitions: api name to defining file.
    #[serde(default)]
    pub definition_select: BTreeMap<String, PathBuf>,
    /// Directory the relative paths above are resolved against.
    #[serde(skip)]
    pub root: PathBuf,
}

impl LibraryConfig {
    pub fn from_toml(text: &str, root: impl Into<PathBuf>) -> Result<Self, CorpusError> {
        let root = root.into();
        let mut cfg: LibraryConfig = toml::from_str(text).map_err(|e| CorpusError::Config {
            path: root.join(LIBRARY_CONFIG_FILE).display().to_string(),
            message: e.to_string(),
        })?;
        cfg.root = root;
        Ok(cfg)
    }

    /// Load `<dir>/library.toml`.
    pub fn load(dir: &Path) -> Result<Self, CorpusError> {
        let path = dir.join(LIBRARY_CONFIG_FILE);
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        // Harness builds run from scratch directories, so the root must not be relative.
        let root = dir.canonicalize().map_err(io_err(dir))?;
        Self::from_toml(&text, root)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Header file names as they appear in `#include` directives.
    pub fn header_names(&self) -> Vec<String> {
        self.header_files.iter().filter_map(|h| h.file_name().map(|n| n.to_string_lossy().into_owned())).collect()
    }

    /// Directories holding the configured headers.
    pub fn include_dirs(&self) -> Vec<PathBuf> {
        let mut dirs: Vec<PathBuf> = Vec::new();
        for h in &self.header_files {
            let dir = self.resolve(h).parent().map(Path::to_path_buf).unwrap_or_else(|| self.root.clone());
            if !dirs.contains(&dir) {
                dirs.push(dir);
            }
        }
        dirs
    }

    pub fn source_paths(&self) -> Vec<PathBuf> {
        self.sources.iter().map(|s| self.resolve(s)).collect()
    }
}

/// One library API with everything the prompts and harness need.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiRecord {
    pub api_name: String,
    pub param_count: usize,
    /// Parameter names; `param_names[i]` is "Parameter i+1".
    pub param_names: Vec<String>,
    pub variadic: bool,
    pub declaration: String,
    pub source_body: String,
    /// Same-file functions called directly by the API, in call order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub helpers: Vec<HelperBody>,
    pub required_headers: Vec<String>,
    pub library_id: String,
    /// Defining file, relative to the library root when possible.
    pub source_file: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HelperBody {
    pub name: String,
    pub text: String,
}

impl ApiRecord {
    pub fn param_name(&self, index: usize) -> Option<&str> {
        index.checked_sub(1).and_then(|i| self.param_names.get(i)).map(String::as_str)
    }
}

/// Parsed library sources plus configuration.
pub struct Library {
    pub config: LibraryConfig,
    pub units: Vec<SourceUnit>,
}

impl Library {
    /// Load the config and parse every `.c`/`.h` file under the library root.
    pub fn open(dir: &Path) -> Result<Self, CorpusError> {
        let config = LibraryConfig::load(dir)?;
        Self::with_config(config)
    }

    pub fn with_config(config: LibraryConfig) -> Result<Self, CorpusError> {
        let units = parse_tree(&config.root)?;
        Ok(Library { config, units })
    }

    /// Every api in the config's list, in list order.
    pub fn extract_all(&self) -> Result<Vec<ApiRecord>, CorpusError> {
        self.config.api_list.iter().map(|api| extract_api_record(&self.units, &self.config, api)).collect()
    }

    pub fn symbols(&self) -> std::collections::BTreeSet<String> {
        self.units.iter().flat_map(|u| u.functions().into_iter().map(|f| f.name)).collect()
    }
}

/// Parse all C files below `root` in sorted path order.
pub fn parse_tree(root: &Path) -> Result<Vec<SourceUnit>, CorpusError> {
    let mut paths: Vec<PathBuf> = walkdir(root)?
        .into_iter()
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("c" | "h")))
        .collect();
    paths.sort();
    paths.iter().map(|p| parse_c_file(p)).collect()
}

fn walkdir(root: &Path) -> Result<Vec<PathBuf>, CorpusError> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).map_err(io_err(&dir))? {
            let entry = entry.map_err(io_err(&dir))?;
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path);
            }
        }
    }
    Ok(out)
}

fn common_prefix_len(a: &str, b: &str) -> usize {
    a.chars().zip(b.chars()).take_while(|(x, y)| x == y).count()
}

/// Build the record for one api. The definition text is the verbatim span of
/// the definition node, without macro expansion.
pub fn extract_api_record(
    units: &[SourceUnit],
    config: &LibraryConfig,
    api_name: &str,
) -> Result<ApiRecord, CorpusError> {
    if !config.api_list.iter().any(|a| a == api_name) {
        return Err(CorpusError::NotListed(api_name.to_string()));
    }
    let mut candidates: Vec<(&SourceUnit, FunctionDef)> = units
        .iter()
        .flat_map(|u| u.functions().into_iter().filter(|f| f.name == api_name).map(move |f| (u, f)))
        .collect();
    if candidates.is_empty() {
        return Err(CorpusError::NotFound(api_name.to_string()));
    }
    let (unit, def) =
        if candidates.len() == 1 { candidates.remove(0) } else { select_definition(candidates, config, api_name)? };

    let helpers = helper_bodies(unit, &def);
    let source_file = unit.path.strip_prefix(&config.root).unwrap_or(&unit.path).display().to_string();
    Ok(ApiRecord {
        api_name: def.name.clone(),
        param_count: def.params.len(),
        param_names: def.params.clone(),
        variadic: def.variadic,
        declaration: def.declaration.clone(),
        source_body: def.text.clone(),
        helpers,
        required_headers: config.header_names(),
        library_id: config.library_id.clone(),
        source_file,
    })
}

fn select_definition<'u>(
    candidates: Vec<(&'u SourceUnit, FunctionDef)>,
    config: &LibraryConfig,
    api_name: &str,
) -> Result<(&'u SourceUnit, FunctionDef), CorpusError> {
    let files: Vec<String> = candidates.iter().map(|(u, _)| u.path.display().to_string()).collect();
    if let Some(selected) = config.definition_select.get(api_name) {
        let want = config.resolve(selected);
        if let Some(hit) = candidates.iter().position(|(u, _)| u.path == want) {
            return Ok(candidates.into_iter().nth(hit).expect("index in range"));
        }
    }
    let score = |u: &SourceUnit| {
        let stem = u.path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        common_prefix_len(&stem, api_name)
    };
    let best = candidates.iter().map(|(u, _)| score(u)).max().unwrap_or(0);
    let mut top: Vec<_> = candidates.into_iter().filter(|(u, _)| score(u) == best).collect();
    if best > 0 && top.len() == 1 {
        return Ok(top.remove(0));
    }
    Err(CorpusError::Ambiguous { api: api_name.to_string(), files })
}

fn helper_bodies(unit: &SourceUnit, def: &FunctionDef) -> Vec<HelperBody> {
    let Some(node) = unit.function_node(&def.name) else {
        return Vec::new();
    };
    let defs: BTreeMap<String, FunctionDef> = unit.functions().into_iter().map(|f| (f.name.clone(), f)).collect();
    let mut calls = Vec::new();
    collect_kind(node, "call_expression", &mut calls);
    let mut helpers: Vec<HelperBody> = Vec::new();
    for call in calls {
        if let Some(name) = callee_name(call, &unit.text) {
            if name == def.name || helpers.iter().any(|h| h.name == name) {
                continue;
            }
            if let Some(f) = defs.get(name) {
                helpers.push(HelperBody { name: f.name.clone(), text: f.text.clone() });
            }
        }
    }
    helpers
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(src: &str) -> SourceUnit {
        parse_c_unit("t.c", src.as_bytes()).unwrap()
    }

    #[test]
    fn minimal_unit_has_one_function() {
        let u = unit("int f(void){return 0;}");
        let fns = u.functions();
        assert_eq!(fns.len(), 1);
        assert_eq!(fns[0].name, "f");
        assert!(fns[0].params.is_empty());
    }

    #[test]
    fn empty_text_is_a_valid_unit() {
        let u = unit("");
        assert!(u.functions().is_empty());
        assert!(!u.has_errors());
    }

    #[test]
    fn binary_input_is_rejected() {
        let err = parse_c_unit("x.bin", b"\x7fELF\x00\x01").unwrap_err();
        assert!(matches!(err, CorpusError::NotText { .. }));
        let err = parse_c_unit("x.bin", &[0xff, 0xfe, b'a']).unwrap_err();
        assert!(matches!(err, CorpusError::NotText { .. }));
    }

    #[test]
    fn syntax_errors_are_recoverable() {
        let u = unit("int f(int a) { return a }\nint g(void) { return 1; }");
        assert!(u.has_errors());
        let names: Vec<_> = u.functions().into_iter().map(|f| f.name).collect();
        assert!(names.contains(&"g".to_string()));
    }

    #[test]
    fn parameters_are_one_based_and_pointer_aware() {
        let u = unit("int sqlite3_open(const char *filename, sqlite3 **ppDb) { return 0; }");
        let f = &u.functions()[0];
        assert_eq!(f.params, vec!["filename", "ppDb"]);
        assert_eq!(f.declaration, "int sqlite3_open(const char *filename, sqlite3 **ppDb);");
    }

    #[test]
    fn void_list_and_variadic() {
        let u = unit("void g(void) {}\nint p(const char *fmt, ...) { return 0; }\nint q(int) { return 0; }");
        let fns = u.functions();
        assert_eq!(fns[0].params.len(), 0);
        assert_eq!(fns[1].params, vec!["fmt"]);
        assert!(fns[1].variadic);
        assert_eq!(fns[2].params, vec!["arg1"]);
    }

    #[test]
    fn pointer_returning_function_name() {
        let u = unit("static char *dup(const char *s) { return 0; }");
        assert_eq!(u.functions()[0].name, "dup");
    }

    #[test]
    fn call_sites_by_identifier_only() {
        let u = unit(
            "void a(void){ open_x(1, b + 2); }\nvoid c(void){ int (*fp)(int,int) = open_x; fp(3,4); open_x(5,6); }",
        );
        let sites = enumerate_call_sites(std::slice::from_ref(&u), "open_x");
        assert_eq!(sites.len(), 2);
        assert_eq!(sites[0].function, "a");
        assert_eq!(sites[0].args, vec!["1", "b + 2"]);
        assert_eq!(sites[1].line, 2);
        assert!(enumerate_call_sites(std::slice::from_ref(&u), "absent").is_empty());
    }

    fn config(apis: &[&str]) -> LibraryConfig {
        LibraryConfig {
            library_id: "lib".into(),
            header_files: vec![],
            sources: vec![],
            compile_flags: vec![],
            link_flags: vec![],
            api_list: apis.iter().map(|s| s.to_string()).collect(),
            release_api_map: BTreeMap::new(),
            may_fail_allocators: vec![],
            definition_select: BTreeMap::new(),
            root: PathBuf::from("/lib"),
        }
    }

    #[test]
    fn duplicate_definitions_prefer_prefix_matching_file() {
        let a = parse_c_unit("/lib/zip_open.c", b"int zip_x(int a){return a;}").unwrap();
        let b = parse_c_unit("/lib/util.c", b"static int zip_x(int a, int b){return b;}").unwrap();
        let rec = extract_api_record(&[b, a], &config(&["zip_x"]), "zip_x").unwrap();
        assert_eq!(rec.param_count, 1);
        assert_eq!(rec.source_file, "zip_open.c");
    }

    #[test]
    fn duplicate_definitions_without_preference_are_ambiguous() {
        let a = parse_c_unit("/lib/a.c", b"int f(int a){return a;}").unwrap();
        let b = parse_c_unit("/lib/b.c", b"int f(int a){return 1;}").unwrap();
        let err = extract_api_record(&[a, b], &config(&["f"]), "f").unwrap_err();
        assert!(matches!(err, CorpusError::Ambiguous { .. }));
    }

    #[test]
    fn definition_select_resolves_ambiguity() {
        let a = parse_c_unit("/lib/a.c", b"int f(int a){return a;}").unwrap();
        let b = parse_c_unit("/lib/b.c", b"int f(int a, int b){return 1;}").unwrap();
        let mut cfg = config(&["f"]);
        cfg.definition_select.insert("f".into(), PathBuf::from("b.c"));
        assert_eq!(extract_api_record(&[a, b], &cfg, "f").unwrap().param_count, 2);
    }

    #[test]
    fn missing_and_unlisted_apis() {
        let a = parse_c_unit("/lib/a.c", b"int f(int a){return a;}").unwrap();
        let units = [a];
        assert!(matches!(extract_api_record(&units, &config(&["g"]), "g"), Err(CorpusError::NotFound(_))));
        assert!(matches!(extract_api_record(&units, &config(&[]), "f"), Err(CorpusError::NotListed(_))));
    }

    #[test]
    fn helpers_are_collected_from_the_same_unit() {
        let u = parse_c_unit(
            "/lib/a.c",
            b"static int check(int x){return x>0;}\nint api(int x){ if(!check(x)) return -1; return helper2(x); }",
        )
        .unwrap();
        let rec = extract_api_record(&[u], &config(&["api"]), "api").unwrap();
        assert_eq!(rec.helpers.len(), 1);
        assert_eq!(rec.helpers[0].name, "check");
    }
}
