//! External query text generation from pattern templates.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{DetectionRule, Pattern, ScanOptions};

const BUILTIN: [(&str, &str); 5] = [
    ("not_called_before", include_str!("../../assets/ql/not_called_before.ql.tmpl")),
    ("must_call_after", include_str!("../../assets/ql/must_call_after.ql.tmpl")),
    ("must_not_pass_value", include_str!("../../assets/ql/must_not_pass_value.ql.tmpl")),
    ("must_not_use_later", include_str!("../../assets/ql/must_not_use_later.ql.tmpl")),
    ("must_be_initialized", include_str!("../../assets/ql/must_be_initialized.ql.tmpl")),
];

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("no query template for pattern `{0}`")]
    MissingTemplate(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Pattern name to template text.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: BTreeMap<String, String>,
}

impl TemplateSet {
    pub fn builtin() -> Self {
        TemplateSet { templates: BUILTIN.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect() }
    }

    /// Load `<pattern>.ql.tmpl` files from `dir`; absent files stay absent.
    pub fn from_dir(dir: &Path) -> Result<Self, QueryError> {
        let mut templates = BTreeMap::new();
        for (name, _) in BUILTIN {
            let path = dir.join(format!("{name}.ql.tmpl"));
            match std::fs::read_to_string(&path) {
                Ok(t) => {
                    templates.insert(name.to_string(), t);
                }
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(source) => return Err(QueryError::Io { path, source }),
            }
        }
        Ok(TemplateSet { templates })
    }

    pub fn emit(&self, rule: &DetectionRule, opts: &ScanOptions) -> Result<String, QueryError> {
        let name = rule.pattern.name();
        let template = self.templates.get(name).ok_or_else(|| QueryError::MissingTemplate(name.to_string()))?;
        let idx = rule.pattern.param_index();
        let mut vars: Vec<(&str, String)> = vec![
            ("api", rule.pattern.target_api().to_string()),
            ("param_index", idx.to_string()),
            ("arg_index", idx.saturating_sub(1).to_string()),
            ("rule_id", rule.source_rule_id.replace(['#', ' '], "-")),
        ];
        match &rule.pattern {
            Pattern::NotCalledBefore { api_a, api_b, .. } | Pattern::MustCallAfter { api_a, api_b, .. } => {
                vars.push(("api_a", api_a.clone()));
                vars.push(("api_b", api_b.clone()));
            }
            Pattern::MustNotPassValue { value, .. } => {
                vars.push(("value", value.clone()));
                let literal = if value == "NULL" { "0".to_string() } else { value.clone() };
                vars.push(("value_literal", literal));
                let names: Vec<String> = if value == "NULL" {
                    opts.may_fail_allocators.iter().map(|a| format!("\"{a}\"")).collect()
                } else {
                    Vec::new()
                };
                let matcher = if names.is_empty() {
                    "none()".to_string()
                } else {
                    format!("src.getTarget().hasName([{}])", names.join(", "))
                };
                vars.push(("allocator_match", matcher));
            }
            Pattern::MustNotUseLater { .. } | Pattern::MustBeInitialized { .. } => {}
        }
        let mut out = String::with_capacity(template.len() + 64);
        let mut rest = template.as_str();
        while let Some(start) = rest.find("{{") {
            out.push_str(&rest[..start]);
            let after = &rest[start + 2..];
            let Some(end) = after.find("}}") else {
                out.push_str(&rest[start..]);
                rest = "";
                break;
            };
            let key = &after[..end];
            match vars.iter().find(|(k, _)| *k == key) {
                Some((_, v)) => out.push_str(v),
                None => out.push_str(&rest[start..start + 4 + end]),
            }
            rest = &after[end + 2..];
        }
        out.push_str(rest);
        Ok(out)
    }
}

/// Query text for `rule` from the built-in templates.
pub fn emit_query_file(rule: &DetectionRule, opts: &ScanOptions) -> Result<String, QueryError> {
    TemplateSet::builtin().emit(rule, opts)
}

/// `<api>_<pattern>_<param>.ql`
pub fn query_file_name(rule: &DetectionRule) -> String {
    format!("{}_{}_{}.ql", rule.pattern.target_api(), rule.pattern.name(), rule.pattern.param_index())
}
