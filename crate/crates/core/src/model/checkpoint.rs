use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Channel, IdMap, Vocab};
use crate::tensor::Tensor;
use crate::typesys::Taxonomy;

use super::{EncoderConfig, Model, ModelError, ModelParams};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabLists {
    pub words: Vec<String>,
    pub pos: Vec<String>,
    pub ner: Vec<String>,
    pub typ: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabHashes {
    pub words: String,
    pub pos: String,
    pub ner: String,
    pub typ: String,
}

/// On-disk model: one JSON document with arrays as nested lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub encoder: EncoderConfig,
    pub labels: Vec<String>,
    pub taxonomy_hash: String,
    pub vocab: VocabLists,
    pub vocab_hashes: VocabHashes,
    pub params: BTreeMap<String, Vec<Vec<f64>>>,
}

fn bad(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

fn check_map(name: &str, items: Vec<String>, hash: &str) -> Result<IdMap, ModelError> {
    if items.len() < 2 || items[0] != crate::corpus::PAD_TOKEN || items[1] != crate::corpus::UNK_TOKEN {
        return Err(bad(format!("{name} list must start with the pad and unk tokens")));
    }
    let n = items.len();
    let map = IdMap::from_items(items);
    if map.len() != n {
        return Err(bad(format!("{name} list has duplicates")));
    }
    if map.fingerprint() != hash {
        return Err(ModelError::VocabMismatch(format!("{name} hash does not match its list")));
    }
    Ok(map)
}

impl Model {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let items = |m: &IdMap| m.items().to_vec();
        Checkpoint {
            format_version: FORMAT_VERSION,
            encoder: self.config.clone(),
            labels: self.taxonomy.labels().to_vec(),
            taxonomy_hash: self.taxonomy.fingerprint(),
            vocab: VocabLists {
                words: items(&self.vocab.words),
                pos: items(self.vocab.channel(Channel::Pos)),
                ner: items(self.vocab.channel(Channel::Ner)),
                typ: items(self.vocab.channel(Channel::Typ)),
            },
            vocab_hashes: VocabHashes {
                words: self.vocab.words.fingerprint(),
                pos: self.vocab.channel(Channel::Pos).fingerprint(),
                ner: self.vocab.channel(Channel::Ner).fingerprint(),
                typ: self.vocab.channel(Channel::Typ).fingerprint(),
            },
            params: self.params.iter().map(|(n, t)| (n.clone(), t.to_rows())).collect(),
        }
    }

    /// Rebuilds a model, checking hashes and every parameter shape. With
    /// `expected` set, the checkpoint taxonomy must match it.
    pub fn from_checkpoint(ck: Checkpoint, expected: Option<&Taxonomy>) -> Result<Self, ModelError> {
        if ck.format_version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format_version {}", ck.format_version)));
        }
        ck.encoder.validate()?;
        let taxonomy = Taxonomy::from_labels(&ck.labels).map_err(|e| bad(e.to_string()))?;
        if taxonomy.fingerprint() != ck.taxonomy_hash || taxonomy.labels() != ck.labels.as_slice() {
            return Err(bad("taxonomy hash does not match its label list"));
        }
        if let Some(t) = expected {
            if t.fingerprint() != ck.taxonomy_hash {
                return Err(ModelError::TaxonomyMismatch {
                    expected: ck.taxonomy_hash,
                    found: t.fingerprint(),
                });
            }
        }
        let words = check_map("words", ck.vocab.words, &ck.vocab_hashes.words)?;
        let vocab = Vocab {
            pretrained: vec![false; words.len()],
            words,
            tags: [
                check_map("pos", ck.vocab.pos, &ck.vocab_hashes.pos)?,
                check_map("ner", ck.vocab.ner, &ck.vocab_hashes.ner)?,
                check_map("typ", ck.vocab.typ, &ck.vocab_hashes.typ)?,
            ],
        };

        let shapes = ModelParams::shapes(&ck.encoder, &vocab, taxonomy.len());
        let mut tensors = BTreeMap::new();
        let mut given = ck.params;
        for (name, shape) in shapes {
            let rows = given.remove(&name).ok_or_else(|| bad(format!("missing parameter {name}")))?;
            let t = Tensor::from_rows(&rows).map_err(|_| bad(format!("{name} is not rectangular")))?;
            if t.shape() != shape.as_slice() {
                return Err(bad(format!("{name} has shape {:?}, expected {shape:?}", t.shape())));
            }
            if !t.is_finite() {
                return Err(bad(format!("{name} has non-finite values")));
            }
            tensors.insert(name, t);
        }
        if let Some(extra) = given.keys().next() {
            return Err(bad(format!("unexpected parameter {extra}")));
        }
        let params = ModelParams::from_map(tensors);
        if !params.pad_rows_are_zero() {
            return Err(bad("embedding pad rows must be zero"));
        }
        Ok(Self {
            config: ck.encoder,
            params,
            vocab,
            taxonomy,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_checkpoint()).expect("checkpoint serializes")
    }

    pub fn from_json(s: &str, expected: Option<&Taxonomy>) -> Result<Self, ModelError> {
        Self::from_checkpoint(serde_json::from_str(s)?, expected)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|source| ModelError::Io {
            path: path.to_owned(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>, expected: Option<&Taxonomy>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_json(&s, expected)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{toy_model, EncoderKind};

    #[test]
    fn roundtrip_is_exact() {
        for kind in EncoderKind::ALL {
            let (m, _) = toy_model(kind, 0.5, 11);
            let back = Model::from_json(&m.to_json(), Some(&m.taxonomy)).unwrap();
            assert_eq!(back.params, m.params);
            assert_eq!(back.vocab.words, m.vocab.words);
            assert_eq!(back.vocab.tags, m.vocab.tags);
            assert_eq!(back.config, m.config);
            assert_eq!(back.to_json(), m.to_json());
        }
    }

    #[test]
    fn rejects_mismatches() {
        let (m, _) = toy_model(EncoderKind::Rnn, 0.5, 11);
        let ck = m.to_checkpoint();

        let mut c = ck.clone();
        c.params.get_mut("classifier.w_y").unwrap().pop();
        assert!(Model::from_checkpoint(c, None).unwrap_err().to_string().contains("shape"));

        let mut c = ck.clone();
        c.vocab.words.push("extra".into());
        assert!(matches!(Model::from_checkpoint(c, None), Err(ModelError::VocabMismatch(_))));

        let mut c = ck.clone();
        c.params.remove("lstm.left.b");
        assert!(Model::from_checkpoint(c, None).is_err());

        let mut c = ck.clone();
        c.format_version = 99;
        assert!(Model::from_checkpoint(c, None).is_err());

        let other = Taxonomy::from_labels(["/x"]).unwrap();
        assert!(matches!(Model::from_checkpoint(ck, Some(&other)), Err(ModelError::TaxonomyMismatch { .. })));
    }
}
