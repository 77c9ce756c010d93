use std::collections::HashMap;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{AnnotateError, SpanAnnotation, Source};

/// Longest contiguous token run a regex rule is tested against.
pub const MAX_RULE_RUN: usize = 5;

const BUILTIN_RULES_JSON: &str = include_str!("../../data/rules.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegexRule {
    pub name: String,
    pub pattern: String,
    pub priority: i32,
}

#[derive(Debug, Clone)]
struct CompiledRule {
    rule: RegexRule,
    // anchored form of `rule.pattern`
    regex: Regex,
}

/// A validated set of regex rules.
#[derive(Debug, Clone)]
pub struct RuleSet {
    rules: Vec<CompiledRule>,
}

impl RuleSet {
    pub fn new(rules: Vec<RegexRule>) -> Result<Self, AnnotateError> {
        let mut by_priority: HashMap<i32, String> = HashMap::new();
        let mut compiled = Vec::with_capacity(rules.len());
        for (i, rule) in rules.into_iter().enumerate() {
            if rule.name.trim().is_empty() {
                return Err(AnnotateError::EmptyRuleName(i));
            }
            if let Some(first) = by_priority.insert(rule.priority, rule.name.clone()) {
                return Err(AnnotateError::DuplicatePriority {
                    first,
                    second: rule.name,
                    priority: rule.priority,
                });
            }
            // Validate the source as written, then anchor it so a match must
            // cover the whole token run.
            Regex::new(&rule.pattern).map_err(|e| AnnotateError::BadPattern {
                name: rule.name.clone(),
                source: Box::new(e),
            })?;
            let regex = Regex::new(&format!("^(?:{})$", rule.pattern)).map_err(|e| {
                AnnotateError::BadPattern {
                    name: rule.name.clone(),
                    source: Box::new(e),
                }
            })?;
            compiled.push(CompiledRule { rule, regex });
        }
        Ok(Self { rules: compiled })
    }

    pub fn from_json_str(json: &str) -> Result<Self, AnnotateError> {
        Self::new(serde_json::from_str(json)?)
    }

    pub fn load(path: &Path) -> Result<Self, AnnotateError> {
        let text = std::fs::read_to_string(path).map_err(|source| AnnotateError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    /// EMAIL_ADDRESS, URL, PHONE, DATE, ZIP_CODE, NUMBER.
    pub fn builtin() -> Self {
        Self::from_json_str(BUILTIN_RULES_JSON).expect("bundled rules are valid")
    }

    pub fn rules(&self) -> impl Iterator<Item = &RegexRule> {
        self.rules.iter().map(|c| &c.rule)
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }
}

/// Tests every rule against each token and each space-joined run of up to
/// [`MAX_RULE_RUN`] tokens. For a given rule and start only the longest
/// matching run is kept. Sorted by start, then descending priority.
pub fn annotate_regex<S: AsRef<str>>(tokens: &[S], rules: &RuleSet) -> Vec<SpanAnnotation> {
    let n = tokens.len();
    let mut out = Vec::new();
    for start in 0..n {
        let mut joined = Vec::with_capacity(MAX_RULE_RUN);
        let mut text = String::new();
        for end in start + 1..=(start + MAX_RULE_RUN).min(n) {
            if end > start + 1 {
                text.push(' ');
            }
            text.push_str(tokens[end - 1].as_ref());
            joined.push((end, text.clone()));
        }
        for c in &rules.rules {
            if let Some((end, _)) = joined.iter().rev().find(|(_, t)| c.regex.is_match(t)) {
                out.push(SpanAnnotation {
                    start,
                    end: *end,
                    type_name: c.rule.name.clone(),
                    source: Source::Rule,
                    priority: c.rule.priority,
                });
            }
        }
    }
    out.sort_by(|a, b| {
        a.start
            .cmp(&b.start)
            .then(b.priority.cmp(&a.priority))
            .then(b.end.cmp(&a.end))
    });
    out
}
