use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

const TABLE: &str = include_str!("../../assets/categories.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    Range,
    #[serde(rename = "NULL")]
    Null,
    Member,
    Relation,
    Format,
    ActionDo,
    ActionNotDo,
    Others,
}

impl Category {
    pub const ALL: [Category; 8] = [
        Category::Range,
        Category::Null,
        Category::Member,
        Category::Relation,
        Category::Format,
        Category::ActionDo,
        Category::ActionNotDo,
        Category::Others,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Range => "Range",
            Category::Null => "NULL",
            Category::Member => "Member",
            Category::Relation => "Relation",
            Category::Format => "Format",
            Category::ActionDo => "ActionDo",
            Category::ActionNotDo => "ActionNotDo",
            Category::Others => "Others",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown category `{s}`"))
    }
}

#[derive(Deserialize)]
struct RawTable {
    category: Vec<RawEntry>,
}

#[derive(Deserialize)]
struct RawEntry {
    name: String,
    #[serde(default)]
    patterns: Vec<String>,
    min_param_mentions: Option<usize>,
}

struct Entry {
    category: Category,
    patterns: Vec<Regex>,
    min_param_mentions: Option<usize>,
}

fn table() -> &'static [Entry] {
    static T: OnceLock<Vec<Entry>> = OnceLock::new();
    T.get_or_init(|| {
        let raw: RawTable = toml::from_str(TABLE).expect("category table parses");
        raw.category
            .into_iter()
            .map(|e| Entry {
                category: e.name.parse().expect("known category name"),
                patterns: e.patterns.iter().map(|p| Regex::new(p).expect("category pattern compiles")).collect(),
                min_param_mentions: e.min_param_mentions,
            })
            .collect()
    })
}

fn param_mentions(text: &str) -> usize {
    static R: OnceLock<Regex> = OnceLock::new();
    let r = R.get_or_init(|| Regex::new(r"\bparam(?:eter)?\s*(\d+)").unwrap());
    r.captures_iter(text).map(|c| c[1].to_string()).collect::<BTreeSet<_>>().len()
}

/// Keyword-table category of a rule sentence.
pub fn classify_text(rule_text: &str) -> Category {
    let lower = rule_text.to_lowercase();
    for entry in table() {
        let by_params = entry.min_param_mentions.is_some_and(|n| param_mentions(&lower) >= n);
        if by_params || entry.patterns.iter().any(|p| p.is_match(&lower)) {
            return entry.category;
        }
    }
    Category::Others
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_loads_all_but_others() {
        let names: Vec<Category> = table().iter().map(|e| e.category).collect();
        assert_eq!(names.len(), 7);
        assert!(!names.contains(&Category::Others));
    }

    #[test]
    fn two_parameters_is_relation() {
        assert_eq!(classify_text("Parameter 3 must not exceed the length of parameter 2"), Category::Relation);
    }

    #[test]
    fn null_category_spelling() {
        assert_eq!("null".parse::<Category>().unwrap(), Category::Null);
        assert_eq!(serde_json::to_string(&Category::Null).unwrap(), "\"NULL\"");
    }
}
