use std::collections::HashSet;
use std::path::Path;

use super::{AnnotateError, SpanAnnotation, Source};

const BUILTIN: [(&str, &str); 4] = [
    ("CITY", include_str!("../../data/gazetteer/CITY.txt")),
    ("ORGANIZATION", include_str!("../../data/gazetteer/ORGANIZATION.txt")),
    ("PERSON", include_str!("../../data/gazetteer/PERSON.txt")),
    (
        "STATE_OR_PROVINCE",
        include_str!("../../data/gazetteer/STATE_OR_PROVINCE.txt"),
    ),
];

/// A dictionary of (possibly multi-token) surface strings for one type.
///
/// Entries are stored case-folded with single spaces between tokens.
#[derive(Debug, Clone)]
pub struct Gazetteer {
    type_name: String,
    entries: HashSet<String>,
    max_tokens: usize,
    priority: i32,
}

fn normalize(entry: &str) -> String {
    entry
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

impl Gazetteer {
    pub fn new<I, S>(type_name: impl Into<String>, entries: I) -> Result<Self, AnnotateError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let type_name = type_name.into();
        let mut set = HashSet::new();
        let mut max_tokens = 0;
        for (line, e) in entries.into_iter().enumerate() {
            let norm = normalize(e.as_ref());
            if norm.is_empty() {
                return Err(AnnotateError::BlankEntry {
                    type_name,
                    line: line + 1,
                });
            }
            max_tokens = max_tokens.max(norm.split(' ').count());
            set.insert(norm);
        }
        if set.is_empty() {
            return Err(AnnotateError::EmptyGazetteer(type_name));
        }
        Ok(Self {
            type_name,
            entries: set,
            max_tokens,
            priority: 0,
        })
    }

    /// Parses one-entry-per-line text. Blank lines are skipped; lines that
    /// contain only whitespace are not blank and are rejected.
    pub fn from_text(type_name: impl Into<String>, text: &str) -> Result<Self, AnnotateError> {
        let type_name = type_name.into();
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            if line.trim().is_empty() {
                return Err(AnnotateError::BlankEntry {
                    type_name,
                    line: i + 1,
                });
            }
            entries.push(line);
        }
        Self::new(type_name, entries)
    }

    pub fn with_priority(mut self, priority: i32) -> Self {
        self.priority = priority;
        self
    }

    pub fn type_name(&self) -> &str {
        &self.type_name
    }

    pub fn priority(&self) -> i32 {
        self.priority
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_tokens(&self) -> usize {
        self.max_tokens
    }

    pub fn contains(&self, phrase: &str) -> bool {
        self.entries.contains(&normalize(phrase))
    }
}

pub(super) fn builtin() -> Vec<Gazetteer> {
    BUILTIN
        .iter()
        .map(|(name, text)| Gazetteer::from_text(*name, text).expect("bundled gazetteer is valid"))
        .collect()
}

/// Loads every `<TYPE>.txt` in `dir`, ordered by file name.
pub fn load_gazetteer_dir(dir: &Path) -> Result<Vec<Gazetteer>, AnnotateError> {
    let io = |source| AnnotateError::Io {
        path: dir.to_owned(),
        source,
    };
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("txt") {
            files.push(path);
        }
    }
    files.sort();
    files
        .into_iter()
        .map(|path| {
            let type_name = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_owned();
            let text = std::fs::read_to_string(&path).map_err(|source| AnnotateError::Io {
                path: path.clone(),
                source,
            })?;
            Gazetteer::from_text(type_name, &text)
        })
        .collect()
}

/// Dictionary lookup with longest match per start position.
///
/// Comparison is case-insensitive. When two gazetteers match the same run
/// length at a start, the higher priority wins and then the earlier one in
/// `gaz`.
pub fn annotate_gazetteer<S: AsRef<str>>(tokens: &[S], gaz: &[Gazetteer]) -> Vec<SpanAnnotation> {
    let n = tokens.len();
    let longest = gaz.iter().map(|g| g.max_tokens).max().unwrap_or(0);
    let lower: Vec<String> = tokens.iter().map(|t| t.as_ref().to_lowercase()).collect();
    let mut out = Vec::new();
    for start in 0..n {
        let mut best: Option<(usize, &Gazetteer)> = None;
        let mut phrase = String::new();
        for end in start + 1..=(start + longest).min(n) {
            if end > start + 1 {
                phrase.push(' ');
            }
            phrase.push_str(&lower[end - 1]);
            for g in gaz {
                if end - start > g.max_tokens || !g.entries.contains(&phrase) {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((b_end, b)) => end > b_end || (end == b_end && g.priority > b.priority),
                };
                if better {
                    best = Some((end, g));
                }
            }
        }
        if let Some((end, g)) = best {
            out.push(SpanAnnotation {
                start,
                end,
                type_name: g.type_name.clone(),
                source: Source::Gazetteer,
                priority: g.priority,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn montgomery_city() {
        let city = Gazetteer::new("CITY", ["montgomery"]).unwrap();
        let anns = annotate_gazetteer(&["Montgomery", ","], &[city]);
        assert_eq!(anns.len(), 1);
        assert_eq!((anns[0].start, anns[0].end, anns[0].type_name.as_str()), (0, 1, "CITY"));
        assert_eq!(anns[0].source, Source::Gazetteer);
    }

    #[test]
    fn longest_match_at_start() {
        let org = Gazetteer::new("ORGANIZATION", ["new york university"]).unwrap();
        let city = Gazetteer::new("CITY", ["new york"]).unwrap();
        let anns = annotate_gazetteer(&["New", "York", "University"], &[city, org]);
        assert_eq!(anns.len(), 1);
        assert_eq!((anns[0].start, anns[0].end), (0, 3));
        assert_eq!(anns[0].type_name, "ORGANIZATION");
    }

    #[test]
    fn no_gazetteers() {
        assert!(annotate_gazetteer(&["a"], &[]).is_empty());
    }

    #[test]
    fn entry_validation() {
        let none: [&str; 0] = [];
        assert!(matches!(
            Gazetteer::new("X", none),
            Err(AnnotateError::EmptyGazetteer(_))
        ));
        assert!(matches!(
            Gazetteer::new("X", ["ok", "   "]),
            Err(AnnotateError::BlankEntry { line: 2, .. })
        ));
        assert!(matches!(
            Gazetteer::from_text("X", "a\n \t\nb\n"),
            Err(AnnotateError::BlankEntry { line: 2, .. })
        ));
    }

    #[test]
    fn entries_are_whitespace_normalized() {
        let g = Gazetteer::new("X", ["  New   York "]).unwrap();
        assert!(g.contains("new york"));
        assert_eq!(g.max_tokens(), 2);
    }

    #[test]
    fn builtin_loads() {
        let b = builtin();
        assert_eq!(b.len(), 4);
        assert!(b.iter().any(|g| g.type_name() == "CITY" && g.contains("Montgomery")));
    }

    #[test]
    fn load_dir_uses_file_stems() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("CITY.txt"), "montgomery\n").unwrap();
        std::fs::write(dir.path().join("ORG.txt"), "enron\n\nibm\n").unwrap();
        std::fs::write(dir.path().join("README.md"), "ignored").unwrap();
        let g = load_gazetteer_dir(dir.path()).unwrap();
        let names: Vec<_> = g.iter().map(|g| g.type_name()).collect();
        assert_eq!(names, ["CITY", "ORG"]);
        assert_eq!(g[1].len(), 2);
    }

    /// Enumerates every (start, end, gazetteer) hit, then keeps the longest
    /// per start with the same tiebreak.
    fn brute_force(tokens: &[String], gaz: &[Gazetteer]) -> Vec<(usize, usize, String)> {
        let mut hits = Vec::new();
        for s in 0..tokens.len() {
            for e in s + 1..=tokens.len() {
                let phrase = tokens[s..e].join(" ").to_lowercase();
                for (gi, g) in gaz.iter().enumerate() {
                    if g.entries.contains(&phrase) {
                        hits.push((s, e, gi));
                    }
                }
            }
        }
        let mut out = Vec::new();
        for s in 0..tokens.len() {
            let best = hits
                .iter()
                .filter(|h| h.0 == s)
                .max_by(|a, b| {
                    (a.1, gaz[a.2].priority, std::cmp::Reverse(a.2))
                        .cmp(&(b.1, gaz[b.2].priority, std::cmp::Reverse(b.2)))
                });
            if let Some(&(s, e, gi)) = best {
                out.push((s, e, gaz[gi].type_name.clone()));
            }
        }
        out
    }

    proptest! {
        #[test]
        fn agrees_with_brute_force(
            tokens in proptest::collection::vec(prop_oneof!["a", "b", "A", "c"], 1..8),
            entries in proptest::collection::vec(
                proptest::collection::vec(proptest::collection::vec(prop_oneof!["a", "b", "c"], 1..4), 1..4),
                1..4),
            priorities in proptest::collection::vec(0i32..2, 4),
        ) {
            let gaz: Vec<Gazetteer> = entries
                .iter()
                .enumerate()
                .map(|(i, es)| {
                    Gazetteer::new(format!("T{i}"), es.iter().map(|e| e.join(" ")))
                        .unwrap()
                        .with_priority(priorities[i])
                })
                .collect();
            let tokens: Vec<String> = tokens;
            let got: Vec<(usize, usize, String)> = annotate_gazetteer(&tokens, &gaz)
                .into_iter()
                .map(|a| (a.start, a.end, a.type_name))
                .collect();
            prop_assert_eq!(got, brute_force(&tokens, &gaz));
        }
    }
}
