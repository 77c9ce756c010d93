//! Entity type taxonomy and ancestor-closed label sets.
//!
//! Labels are slash paths (`/person/artist`). The parent of a label is the
//! path with its last segment removed, so the hierarchy is implied by the
//! label strings themselves and a taxonomy file is just a flat JSON array.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

/// Taxonomy shipped with the crate.
pub const DEFAULT_TAXONOMY_JSON: &str = include_str!("../data/taxonomy.json");

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("cannot read taxonomy file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("taxonomy is not a JSON array of strings: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed label {label:?} at entry {entry}")]
    Malformed { label: String, entry: usize },
    #[error("duplicate label {label:?} at entry {entry}")]
    Duplicate { label: String, entry: usize },
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("label set has {found} bits, taxonomy has {expected} labels")]
    LengthMismatch { expected: usize, found: usize },
}

/// Checks the path grammar `("/" [a-z0-9_]+)+`.
pub fn is_well_formed(label: &str) -> bool {
    let Some(rest) = label.strip_prefix('/') else {
        return false;
    };
    !rest.is_empty()
        && rest.split('/').all(|seg| {
            !seg.is_empty()
                && seg
                    .bytes()
                    .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
        })
}

/// Parent path of a label, or `None` for a top-level label.
pub fn parent_path(label: &str) -> Option<&str> {
    match label.rfind('/') {
        Some(0) | None => None,
        Some(i) => Some(&label[..i]),
    }
}

/// An immutable, validated type hierarchy.
#[derive(Debug, Clone)]
pub struct Taxonomy {
    labels: Vec<String>,
    index: HashMap<String, usize>,
    parent: Vec<Option<usize>>,
    inserted: Vec<String>,
}

impl Taxonomy {
    /// Builds a taxonomy from label strings, inserting any missing ancestor
    /// immediately before the first label that needs it.
    pub fn from_labels<I, S>(labels: I) -> Result<Self, TaxonomyError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let given: Vec<String> = labels.into_iter().map(|s| s.as_ref().to_owned()).collect();
        let mut seen = HashMap::new();
        for (entry, label) in given.iter().enumerate() {
            if !is_well_formed(label) {
                return Err(TaxonomyError::Malformed {
                    label: label.clone(),
                    entry,
                });
            }
            if seen.insert(label.as_str(), entry).is_some() {
                return Err(TaxonomyError::Duplicate {
                    label: label.clone(),
                    entry,
                });
            }
        }

        let mut ordered: Vec<String> = Vec::with_capacity(given.len());
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut inserted = Vec::new();
        for label in &given {
            // Ancestors not listed anywhere in the file get inserted here,
            // outermost first.
            let mut missing = Vec::new();
            let mut cur = parent_path(label);
            while let Some(p) = cur {
                if index.contains_key(p) || seen.contains_key(p) {
                    break;
                }
                missing.push(p.to_owned());
                cur = parent_path(p);
            }
            for anc in missing.into_iter().rev() {
                index.insert(anc.clone(), ordered.len());
                ordered.push(anc.clone());
                inserted.push(anc);
            }
            index.insert(label.clone(), ordered.len());
            ordered.push(label.clone());
        }
        if !inserted.is_empty() {
            log::warn!("taxonomy: inserted missing ancestors {inserted:?}");
        }

        let parent = ordered
            .iter()
            .map(|l| parent_path(l).map(|p| index[p]))
            .collect();
        Ok(Self {
            labels: ordered,
            index,
            parent,
            inserted,
        })
    }

    pub fn from_json_str(json: &str) -> Result<Self, TaxonomyError> {
        let labels: Vec<String> = serde_json::from_str(json)?;
        Self::from_labels(labels)
    }

    /// The taxonomy bundled in `data/taxonomy.json`.
    pub fn builtin() -> Self {
        Self::from_json_str(DEFAULT_TAXONOMY_JSON).expect("bundled taxonomy is valid")
    }

    /// Number of labels, K.
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, idx: usize) -> &str {
        &self.labels[idx]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn parent(&self, idx: usize) -> Option<usize> {
        self.parent[idx]
    }

    /// Ancestors that were missing from the source file and added on load.
    pub fn inserted(&self) -> &[String] {
        &self.inserted
    }

    /// Hex SHA-256 over the ordered label list; checkpoints record it.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for l in &self.labels {
            h.update(l.as_bytes());
            h.update([0u8]);
        }
        hex_digest(&h.finalize())
    }

    /// Encodes label strings into an ancestor-closed set.
    pub fn encode<S: AsRef<str>>(&self, labels: &[S]) -> Result<LabelSet, TaxonomyError> {
        let mut set = LabelSet::empty(self.len());
        for l in labels {
            let l = l.as_ref();
            let idx = self
                .index_of(l)
                .ok_or_else(|| TaxonomyError::UnknownLabel(l.to_owned()))?;
            set.insert(idx);
        }
        self.close_ancestors(&set)
    }

    /// Label strings of the set bits, in taxonomy order.
    pub fn decode(&self, set: &LabelSet) -> Result<Vec<String>, TaxonomyError> {
        self.check_len(set)?;
        Ok(set.iter().map(|i| self.labels[i].clone()).collect())
    }

    /// Adds every ancestor of every set label.
    pub fn close_ancestors(&self, raw: &LabelSet) -> Result<LabelSet, TaxonomyError> {
        self.check_len(raw)?;
        let mut out = raw.clone();
        for i in raw.iter() {
            let mut cur = self.parent[i];
            while let Some(p) = cur {
                if out.contains(p) {
                    break;
                }
                out.insert(p);
                cur = self.parent[p];
            }
        }
        Ok(out)
    }

    fn check_len(&self, set: &LabelSet) -> Result<(), TaxonomyError> {
        if set.len() != self.len() {
            return Err(TaxonomyError::LengthMismatch {
                expected: self.len(),
                found: set.len(),
            });
        }
        Ok(())
    }
}

/// Reads a taxonomy JSON file.
pub fn load_taxonomy(path: impl AsRef<Path>) -> Result<Taxonomy, TaxonomyError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| TaxonomyError::Io {
        path: path.to_owned(),
        source,
    })?;
    Taxonomy::from_json_str(&text)
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Fixed-length bit vector over the K taxonomy labels.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct LabelSet {
    len: usize,
    words: Vec<u64>,
}

impl LabelSet {
    pub fn empty(len: usize) -> Self {
        Self {
            len,
            words: vec![0; len.div_ceil(64)],
        }
    }

    pub fn from_indices<I: IntoIterator<Item = usize>>(len: usize, indices: I) -> Self {
        let mut s = Self::empty(len);
        for i in indices {
            s.insert(i);
        }
        s
    }

    /// Set bits from a 0/1 (or boolean-like) slice; non-zero means set.
    pub fn from_dense(values: &[f64]) -> Self {
        Self::from_indices(
            values.len(),
            values
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(i, _)| i),
        )
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn insert(&mut self, i: usize) {
        assert!(i < self.len, "label index {i} out of range {}", self.len);
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn remove(&mut self, i: usize) {
        assert!(i < self.len, "label index {i} out of range {}", self.len);
        self.words[i / 64] &= !(1 << (i % 64));
    }

    pub fn contains(&self, i: usize) -> bool {
        i < self.len && self.words[i / 64] & (1 << (i % 64)) != 0
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn intersection_count(&self, other: &Self) -> usize {
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }

    pub fn is_subset(&self, other: &Self) -> bool {
        self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0)
    }

    /// Indices of set bits in ascending order.
    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).filter(move |&i| self.contains(i))
    }

    /// Dense 0/1 vector, used as a training target.
    pub fn to_dense(&self) -> Vec<f64> {
        (0..self.len)
            .map(|i| if self.contains(i) { 1.0 } else { 0.0 })
            .collect()
    }
}

impl fmt::Debug for LabelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small() -> Taxonomy {
        Taxonomy::from_labels([
            "/person",
            "/person/artist",
            "/person/title",
            "/location",
            "/location/city",
        ])
        .unwrap()
    }

    #[test]
    fn two_node_tree() {
        let t = Taxonomy::from_labels(["/person", "/person/artist"]).unwrap();
        assert_eq!(t.len(), 2);
        assert!(t.inserted().is_empty());
        assert_eq!(t.parent(1), Some(0));
        assert_eq!(t.parent(0), None);
    }

    #[test]
    fn missing_ancestor_is_inserted() {
        let t = Taxonomy::from_labels(["/person/artist"]).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.inserted(), ["/person".to_string()]);
        assert!(t.index_of("/person").is_some());
    }

    #[test]
    fn deep_ancestors_inserted_outermost_first() {
        let t = Taxonomy::from_labels(["/bio/education/alma_mater"]).unwrap();
        assert_eq!(t.labels(), ["/bio", "/bio/education", "/bio/education/alma_mater"]);
    }

    #[test]
    fn parent_listed_after_child_is_not_duplicated() {
        let t = Taxonomy::from_labels(["/person/artist", "/person"]).unwrap();
        assert_eq!(t.len(), 2);
        assert!(t.inserted().is_empty());
        assert_eq!(t.parent(0), Some(1));
    }

    #[test]
    fn builtin_has_class_table_labels() {
        let t = Taxonomy::builtin();
        for l in [
            "/location/city",
            "/org/company/news",
            "/person/political_figure",
            "/person/title",
            "/person/artist",
            "/bio/education/alma_mater",
            "/bio/education/edu_degree",
            "/organization",
            "/title",
            "/person",
            "/contact/email",
        ] {
            assert!(t.index_of(l).is_some(), "missing {l}");
        }
        assert!(t.inserted().is_empty(), "bundled file lists every ancestor");
    }

    #[test]
    fn malformed_labels_rejected() {
        for bad in ["person", "/Person", "/person/", "/", "//x", "/a b", ""] {
            let err = Taxonomy::from_labels([bad]).unwrap_err();
            assert!(matches!(err, TaxonomyError::Malformed { ref label, .. } if label == bad));
        }
    }

    #[test]
    fn duplicate_rejected_with_name() {
        let err = Taxonomy::from_labels(["/a", "/a/b", "/a"]).unwrap_err();
        match err {
            TaxonomyError::Duplicate { label, entry } => {
                assert_eq!(label, "/a");
                assert_eq!(entry, 2);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn unreadable_file_is_io_error() {
        let err = load_taxonomy("/nonexistent/taxonomy.json").unwrap_err();
        assert!(matches!(err, TaxonomyError::Io { .. }));
    }

    #[test]
    fn closure_examples() {
        let t = small();
        let idx = |l: &str| t.index_of(l).unwrap();
        let raw = LabelSet::from_indices(t.len(), [idx("/person/artist")]);
        let closed = t.close_ancestors(&raw).unwrap();
        assert_eq!(t.decode(&closed).unwrap(), ["/person", "/person/artist"]);

        let empty = LabelSet::empty(t.len());
        assert_eq!(t.close_ancestors(&empty).unwrap(), empty);

        let raw = LabelSet::from_indices(t.len(), [idx("/person"), idx("/location/city")]);
        let closed = t.close_ancestors(&raw).unwrap();
        let mut got = t.decode(&closed).unwrap();
        got.sort();
        assert_eq!(got, ["/location", "/location/city", "/person"]);
    }

    #[test]
    fn closure_length_mismatch() {
        let t = small();
        assert!(matches!(
            t.close_ancestors(&LabelSet::empty(3)),
            Err(TaxonomyError::LengthMismatch { expected: 5, found: 3 })
        ));
    }

    #[test]
    fn encode_decode_examples() {
        let t = Taxonomy::builtin();
        let set = t.encode(&["/person/title"]).unwrap();
        assert_eq!(t.decode(&set).unwrap(), ["/person", "/person/title"]);
        let none: [&str; 0] = [];
        assert!(t.encode(&none).unwrap().is_empty());
        match t.encode(&["/zzz"]) {
            Err(TaxonomyError::UnknownLabel(s)) => assert_eq!(s, "/zzz"),
            other => panic!("unexpected {other:?}"),
        }
    }

    /// Ancestor set computed by string truncation, independent of the index.
    fn closure_by_paths(labels: &[&str]) -> std::collections::BTreeSet<String> {
        let mut out = std::collections::BTreeSet::new();
        for l in labels {
            let mut cur = Some(*l);
            while let Some(p) = cur {
                out.insert(p.to_string());
                cur = parent_path(p);
            }
        }
        out
    }

    #[test]
    fn decode_encode_is_closure_exhaustive() {
        // 12 labels, every one of the 4096 subsets.
        let labels = [
            "/a", "/a/b", "/a/b/c", "/a/d", "/e", "/e/f", "/e/g", "/e/g/h", "/i", "/i/j",
            "/i/j/k", "/i/l",
        ];
        let t = Taxonomy::from_labels(labels).unwrap();
        for mask in 0u32..(1 << labels.len()) {
            let subset: Vec<&str> = (0..labels.len())
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| labels[i])
                .collect();
            let decoded: std::collections::BTreeSet<String> =
                t.decode(&t.encode(&subset).unwrap()).unwrap().into_iter().collect();
            assert_eq!(decoded, closure_by_paths(&subset));
        }
    }

    proptest! {
        #[test]
        fn closure_idempotent_and_monotone(a in proptest::collection::vec(any::<bool>(), 5),
                                           extra in proptest::collection::vec(any::<bool>(), 5)) {
            let t = small();
            let sa = LabelSet::from_indices(5, (0..5).filter(|&i| a[i]));
            let sb = LabelSet::from_indices(5, (0..5).filter(|&i| a[i] || extra[i]));
            let ca = t.close_ancestors(&sa).unwrap();
            let cb = t.close_ancestors(&sb).unwrap();
            prop_assert_eq!(&t.close_ancestors(&ca).unwrap(), &ca);
            prop_assert!(sa.is_subset(&ca));
            prop_assert!(ca.is_subset(&cb));
        }
    }
}
