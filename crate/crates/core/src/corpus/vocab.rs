use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, BufReader};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{CorpusError, MentionRecord};
use crate::typesys::hex_digest;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// String to id map with `<pad>` = 0 and `<unk>` = 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdMap {
    items: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Default for IdMap {
    fn default() -> Self {
        Self::from_items(std::iter::empty::<String>())
    }
}

impl IdMap {
    /// Builds a map with the specials followed by `items` in order
    /// (duplicates and specials in `items` are ignored).
    pub fn from_items<I, S>(items: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut map = Self {
            items: Vec::new(),
            ids: HashMap::new(),
        };
        map.push(PAD_TOKEN.to_owned());
        map.push(UNK_TOKEN.to_owned());
        for it in items {
            map.push(it.into());
        }
        map
    }

    fn push(&mut self, s: String) {
        if !self.ids.contains_key(&s) {
            self.ids.insert(s.clone(), self.items.len());
            self.items.push(s);
        }
    }

    /// Id of `s`, or [`UNK`].
    pub fn id(&self, s: &str) -> usize {
        self.ids.get(s).copied().unwrap_or(UNK)
    }

    pub fn get(&self, s: &str) -> Option<usize> {
        self.ids.get(s).copied()
    }

    pub fn item(&self, id: usize) -> &str {
        &self.items[id]
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    /// True when only the two specials are present.
    pub fn is_empty(&self) -> bool {
        self.items.len() <= 2
    }

    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for s in &self.items {
            h.update(s.as_bytes());
            h.update([0u8]);
        }
        hex_digest(&h.finalize())
    }
}

/// Feature channels, in embedding concatenation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Pos,
    Ner,
    Typ,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Pos, Channel::Ner, Channel::Typ];

    pub fn name(self) -> &'static str {
        match self {
            Channel::Pos => "pos",
            Channel::Ner => "ner",
            Channel::Typ => "typ",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn tags(self, r: &MentionRecord) -> Option<&[String]> {
        match self {
            Channel::Pos => r.pos.as_deref(),
            Channel::Ner => r.ner.as_deref(),
            Channel::Typ => r.typ.as_deref(),
        }
    }
}

impl std::str::FromStr for Channel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pos" => Ok(Channel::Pos),
            "ner" => Ok(Channel::Ner),
            "typ" => Ok(Channel::Typ),
            other => Err(format!("unknown channel {other:?} (expected pos, ner or typ)")),
        }
    }
}

/// Word and tag vocabularies.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Vocab {
    pub words: IdMap,
    /// Per word id: was a pretrained vector found for it.
    pub pretrained: Vec<bool>,
    pub tags: [IdMap; 3],
}

impl Vocab {
    pub fn channel(&self, c: Channel) -> &IdMap {
        &self.tags[c.index()]
    }
}

/// Pretrained vectors for the words of a vocabulary.
#[derive(Debug, Clone, Default)]
pub struct Pretrained {
    pub dim: usize,
    pub vectors: HashMap<String, Vec<f64>>,
}

/// Reads a GloVe-style text file (`token v1 .. vD` per line), keeping only
/// the vectors for which `keep` returns true. A two-integer word2vec header
/// line is tolerated.
pub fn load_embeddings(
    path: &Path,
    dim: usize,
    keep: impl Fn(&str) -> bool,
) -> Result<Pretrained, CorpusError> {
    let io = |source| CorpusError::Io {
        path: path.to_owned(),
        source,
    };
    let file = std::fs::File::open(path).map_err(io)?;
    let mut out = Pretrained {
        dim,
        vectors: HashMap::new(),
    };
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io)?;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let rest: Vec<&str> = fields.collect();
        if i == 0 && rest.len() == 1 && token.parse::<usize>().is_ok() && rest[0].parse::<usize>().is_ok() {
            continue;
        }
        if rest.len() != dim {
            return Err(CorpusError::EmbeddingDim {
                line: i + 1,
                expected: dim,
                found: rest.len(),
            });
        }
        if !keep(token) {
            continue;
        }
        let v = rest
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| CorpusError::EmbeddingParse { line: i + 1 })?;
        out.vectors.entry(token.to_owned()).or_insert(v);
    }
    Ok(out)
}

/// Vocabulary over the corpus tokens, plus the tags seen in each channel.
///
/// Words are sorted so the id assignment does not depend on record order.
/// When `embeddings` is given, each word is marked pretrained if the file
/// has a vector for it (exact match first, then lowercase).
pub fn build_vocab(
    records: &[MentionRecord],
    embeddings: Option<(&Path, usize)>,
) -> Result<(Vocab, Pretrained), CorpusError> {
    let words: BTreeSet<&str> = records.iter().flat_map(|r| r.tokens.iter().map(String::as_str)).collect();
    if words.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let words = IdMap::from_items(words.iter().copied());

    let tags = Channel::ALL.map(|c| {
        let set: BTreeSet<&str> = records
            .iter()
            .filter_map(|r| c.tags(r))
            .flat_map(|t| t.iter().map(String::as_str))
            .collect();
        IdMap::from_items(set.iter().copied())
    });

    let pretrained = match embeddings {
        Some((path, dim)) => {
            let wanted: std::collections::HashSet<String> = words
                .items()
                .iter()
                .skip(2)
                .flat_map(|w| [w.clone(), w.to_lowercase()])
                .collect();
            load_embeddings(path, dim, |t| wanted.contains(t))?
        }
        None => Pretrained::default(),
    };
    let flags = words
        .items()
        .iter()
        .enumerate()
        .map(|(i, w)| i > UNK && lookup(&pretrained, w).is_some())
        .collect();
    Ok((
        Vocab {
            words,
            pretrained: flags,
            tags,
        },
        pretrained,
    ))
}

/// Vector for `word`, trying the exact form and then lowercase.
pub fn lookup<'a>(p: &'a Pretrained, word: &str) -> Option<&'a [f64]> {
    p.vectors
        .get(word)
        .or_else(|| p.vectors.get(&word.to_lowercase()))
        .map(Vec::as_slice)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::typesys::LabelSet;

    fn rec(tokens: &[&str], typ: Option<&[&str]>) -> MentionRecord {
        MentionRecord {
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
            start: 0,
            end: 1,
            labels: LabelSet::from_indices(1, [0]),
            pos: None,
            ner: None,
            typ: typ.map(|t| t.iter().map(|s| s.to_string()).collect()),
        }
    }

    #[test]
    fn pretrained_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        std::fs::write(&path, "the 0.1 0.2 0.3\nof 1 2 3\n").unwrap();
        let (v, p) = build_vocab(&[rec(&["the", "zzzqx"], None)], Some((&path, 3))).unwrap();
        assert!(v.pretrained[v.words.id("the")]);
        assert!(!v.pretrained[v.words.id("zzzqx")]);
        assert_eq!(lookup(&p, "the").unwrap(), [0.1, 0.2, 0.3]);
        // only corpus words are kept
        assert!(!p.vectors.contains_key("of"));
        assert_eq!(v.words.len(), 4);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(matches!(build_vocab(&[], None), Err(CorpusError::EmptyCorpus)));
    }

    #[test]
    fn tag_map_has_specials() {
        let (v, _) = build_vocab(&[rec(&["a", "b"], Some(&["O", "CITY"]))], None).unwrap();
        let typ = v.channel(Channel::Typ);
        assert_eq!(typ.len(), 4);
        assert_eq!(typ.item(PAD), PAD_TOKEN);
        assert_eq!(typ.item(UNK), UNK_TOKEN);
        assert_eq!(typ.id("never"), UNK);
        assert_eq!(v.channel(Channel::Pos).len(), 2);
        assert_eq!(v.words.id(PAD_TOKEN), PAD);
    }

    #[test]
    fn embedding_file_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        std::fs::write(&path, "the 0.1 0.2\n").unwrap();
        let err = build_vocab(&[rec(&["the"], None)], Some((&path, 3))).unwrap_err();
        assert!(matches!(err, CorpusError::EmbeddingDim { line: 1, expected: 3, found: 2 }));
        let err = build_vocab(&[rec(&["the"], None)], Some((&dir.path().join("missing"), 3))).unwrap_err();
        assert!(matches!(err, CorpusError::Io { .. }));
        std::fs::write(&path, "2 3\nthe 0.1 0.2 x\n").unwrap();
        let err = build_vocab(&[rec(&["the"], None)], Some((&path, 3))).unwrap_err();
        assert!(matches!(err, CorpusError::EmbeddingParse { line: 2 }));
    }

    #[test]
    fn lowercase_fallback() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        std::fs::write(&path, "montgomery 1 0\n").unwrap();
        let (v, _) = build_vocab(&[rec(&["Montgomery"], None)], Some((&path, 2))).unwrap();
        assert!(v.pretrained[v.words.id("Montgomery")]);
    }
}
