//! Rule and dictionary annotators that assign coarse types to token spans.
//!
//! The output feeds three consumers: dataset labeling, per-token feature
//! channels, and pipeline overrides.

mod gazetteer;
mod pos;
mod rules;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use gazetteer::{annotate_gazetteer, load_gazetteer_dir, Gazetteer};
pub use pos::pos_lite;
pub use rules::{annotate_regex, RegexRule, RuleSet, MAX_RULE_RUN};

/// Tag given to tokens outside every span.
pub const OUTSIDE_TAG: &str = "O";

#[derive(Debug, Error)]
pub enum AnnotateError {
    #[error("rule {name:?}: invalid pattern: {source}")]
    BadPattern {
        name: String,
        #[source]
        source: Box<regex::Error>,
    },
    #[error("rule at entry {0} has an empty name")]
    EmptyRuleName(usize),
    #[error("rules {first:?} and {second:?} share priority {priority}")]
    DuplicatePriority {
        first: String,
        second: String,
        priority: i32,
    },
    #[error("gazetteer {0:?} has no entries")]
    EmptyGazetteer(String),
    #[error("gazetteer {type_name:?}: whitespace-only entry at line {line}")]
    BlankEntry { type_name: String, line: usize },
    #[error("span {start}..{end} out of range for {len} tokens")]
    SpanOutOfRange { start: usize, end: usize, len: usize },
    #[error("spans {0}..{1} and {2}..{3} overlap")]
    Overlap(usize, usize, usize, usize),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("rules file is not a JSON array of {{name, pattern, priority}}: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Rule,
    Gazetteer,
}

/// A coarse type over tokens `start..end`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpanAnnotation {
    pub start: usize,
    pub end: usize,
    pub type_name: String,
    pub source: Source,
    pub priority: i32,
}

impl SpanAnnotation {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlaps(&self, other: &Self) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// Picks a non-overlapping subset: longer spans first, then higher
/// priority, then earlier start. Output is ordered by start.
pub fn resolve_overlaps(anns: &[SpanAnnotation]) -> Vec<SpanAnnotation> {
    let mut order: Vec<&SpanAnnotation> = anns.iter().collect();
    order.sort_by(|a, b| {
        b.len()
            .cmp(&a.len())
            .then(b.priority.cmp(&a.priority))
            .then(a.start.cmp(&b.start))
            .then(a.type_name.cmp(&b.type_name))
            .then(a.source.cmp(&b.source))
    });
    let mut kept: Vec<SpanAnnotation> = Vec::new();
    for ann in order {
        if !kept.iter().any(|k| k.overlaps(ann)) {
            kept.push(ann.clone());
        }
    }
    kept.sort_by_key(|a| a.start);
    kept
}

/// Per-token tags from non-overlapping spans; uncovered tokens get `"O"`.
pub fn spans_to_token_tags(
    anns: &[SpanAnnotation],
    n_tokens: usize,
) -> Result<Vec<String>, AnnotateError> {
    let mut tags = vec![OUTSIDE_TAG.to_owned(); n_tokens];
    let mut owner: Vec<Option<usize>> = vec![None; n_tokens];
    for (ai, a) in anns.iter().enumerate() {
        if a.start >= a.end || a.end > n_tokens {
            return Err(AnnotateError::SpanOutOfRange {
                start: a.start,
                end: a.end,
                len: n_tokens,
            });
        }
        for t in a.start..a.end {
            if let Some(prev) = owner[t] {
                let p = &anns[prev];
                return Err(AnnotateError::Overlap(p.start, p.end, a.start, a.end));
            }
            owner[t] = Some(ai);
            tags[t] = a.type_name.clone();
        }
    }
    Ok(tags)
}

/// Compiled rules plus gazetteers.
#[derive(Debug, Clone)]
pub struct Annotators {
    pub rules: RuleSet,
    pub gazetteers: Vec<Gazetteer>,
}

impl Annotators {
    /// Bundled regex rules and dictionaries.
    pub fn builtin() -> Self {
        Self {
            rules: RuleSet::builtin(),
            gazetteers: gazetteer::builtin(),
        }
    }

    /// Loads rules and gazetteers from disk; `None` falls back to the
    /// bundled set for that part.
    pub fn load(rules: Option<&Path>, gazetteer_dir: Option<&Path>) -> Result<Self, AnnotateError> {
        let rules = match rules {
            Some(p) => RuleSet::load(p)?,
            None => RuleSet::builtin(),
        };
        let gazetteers = match gazetteer_dir {
            Some(d) => load_gazetteer_dir(d)?,
            None => gazetteer::builtin(),
        };
        Ok(Self { rules, gazetteers })
    }

    /// Every rule and dictionary hit, resolved to non-overlapping spans.
    pub fn annotate<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<SpanAnnotation> {
        let mut all = annotate_regex(tokens, &self.rules);
        all.extend(annotate_gazetteer(tokens, &self.gazetteers));
        resolve_overlaps(&all)
    }

    /// Dictionary hits only, resolved. Used for the NER channel.
    pub fn annotate_dictionary<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<SpanAnnotation> {
        resolve_overlaps(&annotate_gazetteer(tokens, &self.gazetteers))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn span(start: usize, end: usize, t: &str, priority: i32) -> SpanAnnotation {
        SpanAnnotation {
            start,
            end,
            type_name: t.into(),
            source: Source::Rule,
            priority,
        }
    }

    #[test]
    fn longer_span_wins() {
        let out = resolve_overlaps(&[span(0, 3, "ORG", 1), span(0, 2, "CITY", 2)]);
        assert_eq!(out, [span(0, 3, "ORG", 1)]);
    }

    #[test]
    fn priority_breaks_length_tie() {
        let out = resolve_overlaps(&[span(0, 1, "B", 1), span(0, 1, "A", 2)]);
        assert_eq!(out, [span(0, 1, "A", 2)]);
    }

    #[test]
    fn disjoint_spans_sorted_by_start() {
        let out = resolve_overlaps(&[span(4, 5, "X", 1), span(0, 2, "Y", 1), span(2, 3, "Z", 9)]);
        assert_eq!(out, [span(0, 2, "Y", 1), span(2, 3, "Z", 9), span(4, 5, "X", 1)]);
    }

    #[test]
    fn earlier_start_breaks_full_tie() {
        let out = resolve_overlaps(&[span(1, 3, "B", 1), span(0, 2, "A", 1)]);
        assert_eq!(out, [span(0, 2, "A", 1)]);
    }

    #[test]
    fn token_tags() {
        assert_eq!(
            spans_to_token_tags(&[span(1, 2, "EMAIL", 0)], 3).unwrap(),
            ["O", "EMAIL", "O"]
        );
        assert_eq!(spans_to_token_tags(&[], 2).unwrap(), ["O", "O"]);
        assert_eq!(
            spans_to_token_tags(&[span(0, 3, "ORG", 0)], 3).unwrap(),
            ["ORG", "ORG", "ORG"]
        );
    }

    #[test]
    fn token_tags_errors() {
        assert!(matches!(
            spans_to_token_tags(&[span(2, 4, "X", 0)], 3),
            Err(AnnotateError::SpanOutOfRange { start: 2, end: 4, len: 3 })
        ));
        assert!(matches!(
            spans_to_token_tags(&[span(0, 2, "X", 0), span(1, 3, "Y", 0)], 3),
            Err(AnnotateError::Overlap(0, 2, 1, 3))
        ));
    }

    #[test]
    fn builtin_annotators_tag_example_sentence() {
        let toks: Vec<&str> = "Roby was born in Montgomery , Alabama and attended New York University"
            .split(' ')
            .collect();
        let anns = Annotators::builtin().annotate(&toks);
        let got: Vec<(usize, usize, &str)> = anns
            .iter()
            .map(|a| (a.start, a.end, a.type_name.as_str()))
            .collect();
        assert_eq!(
            got,
            [
                (0, 1, "PERSON"),
                (4, 5, "CITY"),
                (6, 7, "STATE_OR_PROVINCE"),
                (9, 12, "ORGANIZATION")
            ]
        );
    }

    fn arb_spans() -> impl Strategy<Value = Vec<SpanAnnotation>> {
        proptest::collection::vec((0usize..12, 1usize..5, 0i32..4, 0usize..3), 0..12).prop_map(|v| {
            v.into_iter()
                .map(|(s, l, p, t)| span(s, s + l, ["A", "B", "C"][t], p))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn resolved_spans_never_overlap(anns in arb_spans()) {
            let out = resolve_overlaps(&anns);
            for (i, a) in out.iter().enumerate() {
                for b in &out[i + 1..] {
                    prop_assert!(a.end <= b.start || b.end <= a.start, "{a:?} vs {b:?}");
                }
            }
            // one type per token
            let tags = spans_to_token_tags(&out, 16).unwrap();
            prop_assert_eq!(tags.len(), 16);
            prop_assert!(out.windows(2).all(|w| w[0].start < w[1].start));
            prop_assert_eq!(resolve_overlaps(&anns), out);
        }
    }
}
