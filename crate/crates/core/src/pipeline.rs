//! Sentence-level classification: annotators find mentions and fill the
//! feature channels, the classifier types each mention, and a rule table
//! replaces the classifier for high-precision coarse types.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotate::{pos_lite, spans_to_token_tags, Annotators, SpanAnnotation};
use crate::corpus::MentionRecord;
use crate::model::{predict, Model, ModelError};
use crate::typesys::{LabelSet, Taxonomy};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("override {coarse:?} targets {label:?}, which is not in the taxonomy")]
    UnknownOverrideLabel { coarse: String, label: String },
    #[error("override table was built for taxonomy {expected}, checkpoint has {found}")]
    TaxonomyMismatch { expected: String, found: String },
    #[error("mention {start}..{end} out of range for {len} tokens")]
    BadMention { start: usize, end: usize, len: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Coarse annotator types whose output is final.
#[derive(Debug, Clone, PartialEq)]
pub struct OverrideTable {
    targets: BTreeMap<String, String>,
    closed: BTreeMap<String, Vec<String>>,
    taxonomy_hash: String,
}

impl OverrideTable {
    /// Rule types mapped to their fine labels.
    pub fn default_map() -> BTreeMap<String, String> {
        [
            ("EMAIL_ADDRESS", "/contact/email"),
            ("PHONE", "/contact/phone"),
            ("ZIP_CODE", "/contact/zip_code"),
            ("URL", "/contact/url"),
            ("DATE", "/date"),
            ("NUMBER", "/number"),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_owned(), v.to_owned()))
        .collect()
    }

    pub fn new(targets: BTreeMap<String, String>, tax: &Taxonomy) -> Result<Self, PipelineError> {
        let mut closed = BTreeMap::new();
        for (coarse, label) in &targets {
            let set = tax.encode(&[label]).map_err(|_| PipelineError::UnknownOverrideLabel {
                coarse: coarse.clone(),
                label: label.clone(),
            })?;
            let labels = tax.decode(&tax.close_ancestors(&set).expect("sized to taxonomy")).expect("sized to taxonomy");
            closed.insert(coarse.clone(), labels);
        }
        Ok(Self {
            targets,
            closed,
            taxonomy_hash: tax.fingerprint(),
        })
    }

    pub fn empty(tax: &Taxonomy) -> Self {
        Self::new(BTreeMap::new(), tax).expect("no targets to check")
    }

    pub fn target(&self, coarse: &str) -> Option<&str> {
        self.targets.get(coarse).map(String::as_str)
    }

    /// The target label with its ancestors, in taxonomy order.
    pub fn labels(&self, coarse: &str) -> Option<&[String]> {
        self.closed.get(coarse).map(Vec::as_slice)
    }

    pub fn taxonomy_hash(&self) -> &str {
        &self.taxonomy_hash
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Provenance {
    Model,
    Override,
}

/// Result for one mention. `scores` holds the classifier outputs and is
/// absent for overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub span: [usize; 2],
    pub labels: Vec<String>,
    pub provenance: Provenance,
    pub scores: Option<Vec<f64>>,
}

/// Resolved annotator spans, sorted by start.
pub fn discover_mentions<S: AsRef<str>>(tokens: &[S], annotators: &Annotators) -> Vec<(usize, usize)> {
    annotators.annotate(tokens).iter().map(|a| (a.start, a.end)).collect()
}

/// Types every mention of one sentence. Mentions default to
/// [`discover_mentions`]; outputs follow mention order.
pub fn run_pipeline(
    tokens: &[String],
    mentions: Option<&[(usize, usize)]>,
    model: &Model,
    annotators: &Annotators,
    overrides: &OverrideTable,
) -> Result<Vec<PipelineOutput>, PipelineError> {
    let found = model.taxonomy.fingerprint();
    if overrides.taxonomy_hash != found {
        return Err(PipelineError::TaxonomyMismatch {
            expected: overrides.taxonomy_hash.clone(),
            found,
        });
    }
    let n = tokens.len();
    let spans = annotators.annotate(tokens);
    let mentions: Vec<(usize, usize)> = match mentions {
        Some(m) => m.to_vec(),
        None => spans.iter().map(|a| (a.start, a.end)).collect(),
    };
    if let Some(&(start, end)) = mentions.iter().find(|&&(s, e)| s >= e || e > n) {
        return Err(PipelineError::BadMention { start, end, len: n });
    }
    if mentions.is_empty() {
        return Ok(Vec::new());
    }

    let pos = pos_lite(tokens);
    let ner = spans_to_token_tags(&annotators.annotate_dictionary(tokens), n).expect("resolved spans are in range");
    let typ = spans_to_token_tags(&spans, n).expect("resolved spans are in range");
    let coarse_of = |s: usize, e: usize| -> Option<&SpanAnnotation> { spans.iter().find(|a| a.start == s && a.end == e) };

    let mut out: Vec<Option<PipelineOutput>> = Vec::with_capacity(mentions.len());
    let mut pending = Vec::new();
    let mut records = Vec::new();
    for (i, &(start, end)) in mentions.iter().enumerate() {
        let fixed = coarse_of(start, end).and_then(|a| overrides.labels(&a.type_name));
        match fixed {
            Some(labels) => out.push(Some(PipelineOutput {
                span: [start, end],
                labels: labels.to_vec(),
                provenance: Provenance::Override,
                scores: None,
            })),
            None => {
                out.push(None);
                pending.push(i);
                records.push(MentionRecord {
                    tokens: tokens.to_vec(),
                    start,
                    end,
                    labels: LabelSet::empty(model.num_labels()),
                    pos: Some(pos.clone()),
                    ner: Some(ner.clone()),
                    typ: Some(typ.clone()),
                });
            }
        }
    }

    if !records.is_empty() {
        let scores = model.scores(&model.windows(&records))?;
        for (i, y) in pending.into_iter().zip(scores) {
            let set = model.taxonomy.close_ancestors(&predict(&y)).expect("sized to taxonomy");
            let (start, end) = mentions[i];
            out[i] = Some(PipelineOutput {
                span: [start, end],
                labels: model.taxonomy.decode(&set).expect("sized to taxonomy"),
                provenance: Provenance::Model,
                scores: Some(y),
            });
        }
    }
    Ok(out.into_iter().map(|o| o.expect("every mention resolved")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocab, Channel};
    use crate::model::{EncoderConfig, EncoderKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn model(seed: u64) -> Model {
        let tax = Taxonomy::builtin();
        let recs = vec![MentionRecord {
            tokens: toks("mail john.doe@enron.com from Montgomery"),
            start: 1,
            end: 2,
            labels: tax.encode(&["/contact/email"]).unwrap(),
            pos: None,
            ner: None,
            typ: None,
        }];
        let (vocab, pre) = build_vocab(&recs, None).unwrap();
        let cfg = EncoderConfig {
            kind: EncoderKind::Att,
            word_dim: 6,
            feature_dim: 2,
            hidden: 3,
            att_hidden: 3,
            window: 4,
            channels: Channel::ALL.to_vec(),
            ..Default::default()
        };
        Model::new(cfg, tax, vocab, &pre, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn table(m: &Model) -> OverrideTable {
        OverrideTable::new(OverrideTable::default_map(), &m.taxonomy).unwrap()
    }

    #[test]
    fn email_is_overridden_city_falls_through() {
        let m = model(1);
        let a = Annotators::builtin();
        let out = run_pipeline(&toks("mail john.doe@enron.com from Montgomery"), None, &m, &a, &table(&m)).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].span, [1, 2]);
        assert_eq!(out[0].provenance, Provenance::Override);
        assert_eq!(out[0].labels, vec!["/contact", "/contact/email"]);
        assert!(out[0].scores.is_none());
        assert_eq!(out[1].span, [3, 4]);
        assert_eq!(out[1].provenance, Provenance::Model);
        assert_eq!(out[1].scores.as_ref().unwrap().len(), m.num_labels());
    }

    #[test]
    fn model_labels_are_closed_and_non_empty() {
        let m = model(2);
        let a = Annotators::builtin();
        let out = run_pipeline(&toks("he moved to Montgomery"), Some(&[(0, 1), (3, 4)]), &m, &a, &table(&m)).unwrap();
        for o in out {
            let set = m.taxonomy.encode(&o.labels).unwrap();
            assert!(!set.is_empty());
            assert_eq!(m.taxonomy.close_ancestors(&set).unwrap(), set);
        }
    }

    #[test]
    fn no_mentions_no_output() {
        let m = model(1);
        let a = Annotators::builtin();
        assert!(run_pipeline(&toks("nothing to see"), None, &m, &a, &table(&m)).unwrap().is_empty());
        assert!(run_pipeline(&[], None, &m, &a, &table(&m)).unwrap().is_empty());
    }

    #[test]
    fn bad_mentions_and_foreign_tables_are_rejected() {
        let m = model(1);
        let a = Annotators::builtin();
        let t = toks("a b");
        assert!(matches!(run_pipeline(&t, Some(&[(1, 3)]), &m, &a, &table(&m)), Err(PipelineError::BadMention { .. })));
        assert!(matches!(run_pipeline(&t, Some(&[(1, 1)]), &m, &a, &table(&m)), Err(PipelineError::BadMention { .. })));
        let other = Taxonomy::from_labels(["/contact", "/contact/email"]).unwrap();
        let foreign = OverrideTable::empty(&other);
        assert!(matches!(run_pipeline(&t, None, &m, &a, &foreign), Err(PipelineError::TaxonomyMismatch { .. })));
    }

    #[test]
    fn unknown_targets_are_rejected() {
        let tax = Taxonomy::builtin();
        let map = BTreeMap::from([("EMAIL_ADDRESS".to_owned(), "/contact/fax".to_owned())]);
        assert!(matches!(OverrideTable::new(map, &tax), Err(PipelineError::UnknownOverrideLabel { .. })));
    }

    #[test]
    fn discovery_follows_annotators() {
        let a = Annotators::builtin();
        assert_eq!(discover_mentions(&["Montgomery"], &a), vec![(0, 1)]);
        assert!(discover_mentions(&["the", "and"], &a).is_empty());
    }

    #[test]
    fn output_serializes_with_upper_case_provenance() {
        let o = PipelineOutput {
            span: [0, 1],
            labels: vec!["/number".into()],
            provenance: Provenance::Override,
            scores: None,
        };
        let s = serde_json::to_string(&o).unwrap();
        assert_eq!(s, r#"{"span":[0,1],"labels":["/number"],"provenance":"OVERRIDE","scores":null}"#);
    }
}
