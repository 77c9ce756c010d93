use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotate::{pos_lite, spans_to_token_tags, Annotators};
use crate::typesys::{LabelSet, Taxonomy};

use super::CorpusError;

/// Validation failures for one record; [`CorpusError::Record`] adds the
/// line number.
#[derive(Debug, Error)]
pub enum RecordError {
    #[error("empty mention span {start}..{end}")]
    EmptySpan { start: usize, end: usize },
    #[error("mention span {start}..{end} out of range for {len} tokens")]
    SpanOutOfRange { start: usize, end: usize, len: usize },
    #[error("channel length mismatch: {channel} has {found} tags for {expected} tokens")]
    ChannelLength {
        channel: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("empty gold label set")]
    EmptyLabels,
    #[error("no tokens")]
    NoTokens,
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// On-disk form of a mention record (one JSONL line).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub tokens: Vec<String>,
    pub start: usize,
    pub end: usize,
    pub labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pos: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ner: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub typ: Option<Vec<String>>,
}

/// A mention `tokens[start..end]` with its ancestor-closed gold labels and
/// optional per-token tag channels.
#[derive(Debug, Clone, PartialEq)]
pub struct MentionRecord {
    pub tokens: Vec<String>,
    pub start: usize,
    pub end: usize,
    pub labels: LabelSet,
    pub pos: Option<Vec<String>>,
    pub ner: Option<Vec<String>>,
    pub typ: Option<Vec<String>>,
}

pub(crate) fn check_span(start: usize, end: usize, len: usize) -> Result<(), RecordError> {
    if len == 0 {
        return Err(RecordError::NoTokens);
    }
    if start >= end {
        return Err(RecordError::EmptySpan { start, end });
    }
    if end > len {
        return Err(RecordError::SpanOutOfRange { start, end, len });
    }
    Ok(())
}

impl MentionRecord {
    pub fn from_raw(raw: RawRecord, tax: &Taxonomy) -> Result<Self, RecordError> {
        let n = raw.tokens.len();
        check_span(raw.start, raw.end, n)?;
        for (channel, tags) in [("pos", &raw.pos), ("ner", &raw.ner), ("typ", &raw.typ)] {
            if let Some(t) = tags {
                if t.len() != n {
                    return Err(RecordError::ChannelLength {
                        channel,
                        expected: n,
                        found: t.len(),
                    });
                }
            }
        }
        if raw.labels.is_empty() {
            return Err(RecordError::EmptyLabels);
        }
        let labels = tax.encode(&raw.labels).map_err(|e| match e {
            crate::typesys::TaxonomyError::UnknownLabel(l) => RecordError::UnknownLabel(l),
            other => RecordError::UnknownLabel(other.to_string()),
        })?;
        Ok(Self {
            tokens: raw.tokens,
            start: raw.start,
            end: raw.end,
            labels,
            pos: raw.pos,
            ner: raw.ner,
            typ: raw.typ,
        })
    }

    pub fn to_raw(&self, tax: &Taxonomy) -> RawRecord {
        RawRecord {
            tokens: self.tokens.clone(),
            start: self.start,
            end: self.end,
            labels: tax.decode(&self.labels).expect("record labels sized to taxonomy"),
            pos: self.pos.clone(),
            ner: self.ner.clone(),
            typ: self.typ.clone(),
        }
    }

    pub fn mention_tokens(&self) -> &[String] {
        &self.tokens[self.start..self.end]
    }
}

/// Reads a JSONL corpus. Blank lines are skipped; every error carries its
/// 1-based line number.
pub fn load_jsonl(path: impl AsRef<Path>, tax: &Taxonomy) -> Result<Vec<MentionRecord>, CorpusError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_owned(),
        source,
    })?;
    parse_jsonl(BufReader::new(file), tax).map_err(|e| match e {
        CorpusError::Io { source, .. } => CorpusError::Io {
            path: path.to_owned(),
            source,
        },
        other => other,
    })
}

pub fn parse_jsonl<R: BufRead>(reader: R, tax: &Taxonomy) -> Result<Vec<MentionRecord>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io {
            path: Default::default(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str::<RawRecord>(&line)
            .map_err(RecordError::from)
            .and_then(|raw| MentionRecord::from_raw(raw, tax))
            .map_err(|kind| CorpusError::Record { line: i + 1, kind })?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_jsonl<W: Write>(mut w: W, records: &[MentionRecord], tax: &Taxonomy) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, &r.to_raw(tax))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Fills the POS, NER and TYP channels from the annotators.
///
/// POS comes from [`pos_lite`], NER from dictionary spans only, TYP from
/// every rule and dictionary span after overlap resolution. Channels that
/// are already present are left alone unless `overwrite` is set.
pub fn auto_annotate(records: &mut [MentionRecord], annotators: &Annotators, overwrite: bool) {
    for r in records {
        let n = r.tokens.len();
        if overwrite || r.pos.is_none() {
            r.pos = Some(pos_lite(&r.tokens));
        }
        if overwrite || r.ner.is_none() {
            let spans = annotators.annotate_dictionary(&r.tokens);
            r.ner = Some(spans_to_token_tags(&spans, n).expect("resolved spans are in range"));
        }
        if overwrite || r.typ.is_none() {
            let spans = annotators.annotate(&r.tokens);
            r.typ = Some(spans_to_token_tags(&spans, n).expect("resolved spans are in range"));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tax() -> Taxonomy {
        Taxonomy::builtin()
    }

    fn parse(s: &str) -> Result<Vec<MentionRecord>, CorpusError> {
        parse_jsonl(s.as_bytes(), &tax())
    }

    const ROBY: &str = r#"{"tokens":["Roby","was","born","in","Montgomery"],"start":4,"end":5,"labels":["/location/city"]}"#;

    #[test]
    fn loads_one_record() {
        let recs = parse(ROBY).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].mention_tokens(), ["Montgomery"]);
        assert_eq!(tax().decode(&recs[0].labels).unwrap(), ["/location", "/location/city"]);
    }

    #[test]
    fn empty_span_error_has_line() {
        let input = format!(
            "{ROBY}\n\n{}",
            r#"{"tokens":["a","b"],"start":1,"end":1,"labels":["/person"]}"#
        );
        let err = parse(&input).unwrap_err();
        assert!(matches!(err, CorpusError::Record { line: 3, kind: RecordError::EmptySpan { .. } }));
        assert!(err.to_string().contains("empty mention span"));
    }

    #[test]
    fn channel_length_mismatch() {
        let err = parse(
            r#"{"tokens":["a","b","c","d","e"],"start":0,"end":1,"labels":["/person"],"ner":["O","O","O","O"]}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("channel length mismatch"), "{err}");
    }

    #[test]
    fn span_out_of_range_and_unknown_label() {
        let err = parse(r#"{"tokens":["a"],"start":0,"end":2,"labels":["/person"]}"#).unwrap_err();
        assert!(matches!(err, CorpusError::Record { kind: RecordError::SpanOutOfRange { .. }, .. }));
        let err = parse(r#"{"tokens":["a"],"start":0,"end":1,"labels":["/nope"]}"#).unwrap_err();
        assert!(matches!(err, CorpusError::Record { kind: RecordError::UnknownLabel(ref l), .. } if l == "/nope"));
        let err = parse(r#"{"tokens":["a"],"start":0,"end":1,"labels":[]}"#).unwrap_err();
        assert!(matches!(err, CorpusError::Record { kind: RecordError::EmptyLabels, .. }));
        let err = parse("{not json").unwrap_err();
        assert!(matches!(err, CorpusError::Record { line: 1, kind: RecordError::Json(_) }));
    }

    #[test]
    fn annotate_fills_channels() {
        let mut recs = parse(ROBY).unwrap();
        auto_annotate(&mut recs, &Annotators::builtin(), false);
        let r = &recs[0];
        assert_eq!(r.typ.as_deref().unwrap(), ["PERSON", "O", "O", "O", "CITY"]);
        assert_eq!(r.ner.as_deref().unwrap(), ["PERSON", "O", "O", "O", "CITY"]);
        assert_eq!(r.pos.as_deref().unwrap(), ["PROPN", "VERB", "VERB", "OTHER", "PROPN"]);
    }

    #[test]
    fn city_gazetteer_only() {
        let mut recs = parse(ROBY).unwrap();
        let ann = Annotators {
            rules: crate::annotate::RuleSet::builtin(),
            gazetteers: vec![crate::annotate::Gazetteer::new("CITY", ["montgomery"]).unwrap()],
        };
        auto_annotate(&mut recs, &ann, false);
        assert_eq!(recs[0].typ.as_deref().unwrap(), ["O", "O", "O", "O", "CITY"]);
    }

    #[test]
    fn annotate_unknown_tokens_and_email() {
        let mut recs = parse(
            r#"{"tokens":["zzq","qqx"],"start":0,"end":1,"labels":["/person"]}
{"tokens":["write","to","john.doe@enron.com","now"],"start":2,"end":3,"labels":["/contact/email"]}"#,
        )
        .unwrap();
        auto_annotate(&mut recs, &Annotators::builtin(), false);
        assert_eq!(recs[0].typ.as_deref().unwrap(), ["O", "O"]);
        assert_eq!(recs[0].ner.as_deref().unwrap(), ["O", "O"]);
        assert_eq!(recs[1].typ.as_deref().unwrap(), ["O", "O", "EMAIL_ADDRESS", "O"]);
        // regex hits do not reach the dictionary-only NER channel
        assert_eq!(recs[1].ner.as_deref().unwrap(), ["O", "O", "O", "O"]);
    }

    #[test]
    fn annotate_is_idempotent_and_respects_existing() {
        let mut recs = parse(ROBY).unwrap();
        let ann = Annotators::builtin();
        auto_annotate(&mut recs, &ann, true);
        let once = recs.clone();
        auto_annotate(&mut recs, &ann, true);
        assert_eq!(recs, once);
        auto_annotate(&mut recs, &ann, false);
        assert_eq!(recs, once);

        let mut custom = parse(ROBY).unwrap();
        custom[0].typ = Some(vec!["X".into(); 5]);
        auto_annotate(&mut custom, &ann, false);
        assert_eq!(custom[0].typ.as_deref().unwrap(), ["X"; 5]);
        auto_annotate(&mut custom, &ann, true);
        assert_eq!(custom[0].typ, once[0].typ);
    }

    #[test]
    fn jsonl_roundtrip() {
        let t = tax();
        let recs = parse(ROBY).unwrap();
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &recs, &t).unwrap();
        assert_eq!(parse_jsonl(buf.as_slice(), &t).unwrap(), recs);
    }
}
