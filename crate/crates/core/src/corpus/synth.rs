//! Seeded generator for small labeled corpora.
//!
//! Every gold label is a leaf `/<root>/<child>` (closed to include the
//! root). The context always contains a cue word that identifies the child
//! position within its root; a root-specific cue appears only with
//! probability `root_cue_prob`. The TYP channel tags mention tokens with
//! the root's coarse type, so it carries the root information the context
//! may lack. In `Shuffled` mode those mention tags are permuted across
//! records, which keeps their marginal distribution and removes their
//! correlation with the label.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::MentionRecord;
use crate::annotate::{pos_lite, OUTSIDE_TAG};
use crate::typesys::Taxonomy;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("inconsistent generator config: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TypMode {
    #[default]
    Informative,
    Shuffled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootTemplate {
    /// Top-level label, e.g. `/person`.
    pub label: String,
    /// Coarse annotator type used in the TYP channel, e.g. `PERSON`.
    pub coarse_type: String,
    /// Child segment names; each yields the label `<label>/<child>`.
    pub children: Vec<String>,
    /// Relative frequency of this root.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub roots: Vec<RootTemplate>,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    /// Filler tokens per context side are drawn from
    /// `min_filler..=max_filler`.
    pub min_filler: usize,
    pub max_filler: usize,
    pub filler_vocab: usize,
    /// Interchangeable cue words per child position and per root.
    pub cue_synonyms: usize,
    pub root_cue_prob: f64,
    pub max_mention_len: usize,
    /// Mention tokens are drawn uniformly from this many shared surface
    /// words, so surfaces carry no label information.
    pub surface_vocab: usize,
    pub min_per_label: usize,
    pub typ: TypMode,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let root = |label: &str, coarse: &str, children: &[&str], weight: f64| RootTemplate {
            label: label.into(),
            coarse_type: coarse.into(),
            children: children.iter().map(|s| s.to_string()).collect(),
            weight,
        };
        Self {
            roots: vec![
                root("/person", "PERSON", &["artist", "political_figure", "title", "athlete"], 0.6),
                root("/location", "LOCATION", &["city", "country", "state_or_province", "address"], 0.4),
            ],
            train: 500,
            dev: 100,
            test: 100,
            min_filler: 2,
            max_filler: 2,
            filler_vocab: 40,
            cue_synonyms: 3,
            root_cue_prob: 0.7,
            max_mention_len: 2,
            surface_vocab: 60,
            min_per_label: 10,
            typ: TypMode::Informative,
        }
    }
}

/// Generated taxonomy and splits.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub taxonomy: Taxonomy,
    pub train: Vec<MentionRecord>,
    pub dev: Vec<MentionRecord>,
    pub test: Vec<MentionRecord>,
}

impl SynthConfig {
    fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Inconsistent(m.to_owned()));
        if self.roots.is_empty() {
            return bad("no root templates");
        }
        if self.roots.iter().any(|r| r.children.is_empty()) {
            return bad("every root needs at least one child");
        }
        if self.roots.iter().any(|r| !(r.weight > 0.0 && r.weight.is_finite())) {
            return bad("root weights must be positive");
        }
        if self.roots.iter().any(|r| r.coarse_type.is_empty() || r.coarse_type == OUTSIDE_TAG) {
            return bad("coarse types must be non-empty and not the outside tag");
        }
        if self.train == 0 || self.dev == 0 || self.test == 0 {
            return bad("every split needs at least one mention");
        }
        if self.min_filler > self.max_filler {
            return bad("min_filler exceeds max_filler");
        }
        if !(0.0..=1.0).contains(&self.root_cue_prob) {
            return bad("root_cue_prob must lie in [0, 1]");
        }
        if self.filler_vocab == 0 || self.cue_synonyms == 0 || self.max_mention_len == 0 || self.surface_vocab == 0 {
            return bad("filler_vocab, cue_synonyms, max_mention_len and surface_vocab must be positive");
        }
        Ok(())
    }

    /// Label list of the generated taxonomy: each root then its children.
    fn labels(&self) -> Vec<String> {
        self.roots
            .iter()
            .flat_map(|r| std::iter::once(r.label.clone()).chain(r.children.iter().map(|c| format!("{}/{c}", r.label))))
            .collect()
    }

    /// Per-leaf counts for a split of size `n` by largest remainder.
    fn quotas(&self, n: usize) -> Vec<(usize, usize, usize)> {
        let total: f64 = self.roots.iter().map(|r| r.weight).sum();
        let mut shares = Vec::new();
        for (ri, r) in self.roots.iter().enumerate() {
            for ci in 0..r.children.len() {
                shares.push((ri, ci, n as f64 * r.weight / total / r.children.len() as f64));
            }
        }
        let mut counts: Vec<(usize, usize, usize)> = shares.iter().map(|&(r, c, s)| (r, c, s.floor() as usize)).collect();
        let mut left = n - counts.iter().map(|c| c.2).sum::<usize>();
        let mut order: Vec<usize> = (0..shares.len()).collect();
        order.sort_by(|&a, &b| {
            let fa = shares[a].2.fract();
            let fb = shares[b].2.fract();
            fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
        });
        for i in order {
            if left == 0 {
                break;
            }
            counts[i].2 += 1;
            left -= 1;
        }
        counts
    }
}

fn child_cue(ci: usize, s: usize) -> String {
    format!("cue{ci}v{s}")
}

fn root_cue(ri: usize, s: usize) -> String {
    format!("root{ri}v{s}")
}

fn filler(i: usize) -> String {
    format!("w{i}")
}

fn surface(i: usize) -> String {
    format!("name{i}")
}

struct SplitGen<'a> {
    cfg: &'a SynthConfig,
    tax: &'a Taxonomy,
}

impl SplitGen<'_> {
    fn side(&self, rng: &mut ChaCha8Rng, cue: Option<String>) -> Vec<String> {
        let n = rng.gen_range(self.cfg.min_filler..=self.cfg.max_filler);
        let mut toks: Vec<String> = (0..n).map(|_| filler(rng.gen_range(0..self.cfg.filler_vocab))).collect();
        if let Some(c) = cue {
            let at = rng.gen_range(0..=toks.len());
            toks.insert(at, c);
        }
        toks
    }

    fn record(&self, rng: &mut ChaCha8Rng, ri: usize, ci: usize) -> MentionRecord {
        let cfg = self.cfg;
        let root = &cfg.roots[ri];
        let cue = child_cue(ci, rng.gen_range(0..cfg.cue_synonyms));
        let left = self.side(rng, Some(cue));
        let rcue = rng.gen_bool(cfg.root_cue_prob).then(|| root_cue(ri, rng.gen_range(0..cfg.cue_synonyms)));
        let right = self.side(rng, rcue);
        let m = rng.gen_range(1..=cfg.max_mention_len);
        let mention: Vec<String> = (0..m).map(|_| surface(rng.gen_range(0..cfg.surface_vocab))).collect();

        let start = left.len();
        let end = start + m;
        let tokens: Vec<String> = left.into_iter().chain(mention).chain(right).collect();
        let tag = |inside: &str| -> Vec<String> {
            (0..tokens.len())
                .map(|i| if (start..end).contains(&i) { inside.to_owned() } else { OUTSIDE_TAG.to_owned() })
                .collect()
        };
        let leaf = format!("{}/{}", root.label, root.children[ci]);
        MentionRecord {
            pos: Some(pos_lite(&tokens)),
            ner: Some(tag("ENTITY")),
            typ: Some(tag(&root.coarse_type)),
            labels: self.tax.encode(&[leaf]).expect("leaf is in the generated taxonomy"),
            tokens,
            start,
            end,
        }
    }

    fn split(&self, rng: &mut ChaCha8Rng, n: usize) -> Vec<MentionRecord> {
        let mut plan: Vec<(usize, usize)> = Vec::with_capacity(n);
        for (ri, ci, count) in self.cfg.quotas(n) {
            plan.extend(std::iter::repeat_n((ri, ci), count));
        }
        plan.shuffle(rng);
        plan.into_iter().map(|(ri, ci)| self.record(rng, ri, ci)).collect()
    }
}

/// Permutes the mention TYP tags across records.
fn shuffle_typ(records: &mut [MentionRecord], rng: &mut ChaCha8Rng) {
    let mut tags: Vec<String> = records
        .iter()
        .map(|r| r.typ.as_ref().expect("generated records carry typ")[r.start].clone())
        .collect();
    tags.shuffle(rng);
    for (r, t) in records.iter_mut().zip(tags) {
        let typ = r.typ.as_mut().expect("generated records carry typ");
        for tag in &mut typ[r.start..r.end] {
            *tag = t.clone();
        }
    }
}

/// Generates train/dev/test splits. Identical `(config, seed)` give
/// identical output, and the two TYP modes differ only in the TYP channel.
pub fn synth_corpus(cfg: &SynthConfig, seed: u64) -> Result<SynthCorpus, SynthError> {
    cfg.validate()?;
    let taxonomy = Taxonomy::from_labels(cfg.labels()).map_err(|e| SynthError::Inconsistent(e.to_string()))?;
    let low = cfg.quotas(cfg.train).iter().map(|q| q.2).min().unwrap_or(0);
    if low < cfg.min_per_label {
        return Err(SynthError::Inconsistent(format!(
            "{} training mentions give only {low} instances for some label (min_per_label = {})",
            cfg.train, cfg.min_per_label
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gen = SplitGen { cfg, tax: &taxonomy };
    let mut train = gen.split(&mut rng, cfg.train);
    let mut dev = gen.split(&mut rng, cfg.dev);
    let mut test = gen.split(&mut rng, cfg.test);

    if cfg.typ == TypMode::Shuffled {
        let mut srng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        for split in [&mut train, &mut dev, &mut test] {
            shuffle_typ(split, &mut srng);
        }
    }
    Ok(SynthCorpus {
        taxonomy,
        train,
        dev,
        test,
    })
}

/// Mutual information (nats) between the TYP tag of the first mention
/// token and the most specific gold label, estimated from counts.
pub fn typ_label_mutual_information(records: &[MentionRecord]) -> f64 {
    let mut joint: HashMap<(&str, usize), f64> = HashMap::new();
    let mut px: HashMap<&str, f64> = HashMap::new();
    let mut py: HashMap<usize, f64> = HashMap::new();
    let mut n = 0.0;
    for r in records {
        let Some(typ) = r.typ.as_ref() else { continue };
        let x = typ[r.start].as_str();
        let y = r.labels.iter().last().unwrap_or(0);
        *joint.entry((x, y)).or_default() += 1.0;
        *px.entry(x).or_default() += 1.0;
        *py.entry(y).or_default() += 1.0;
        n += 1.0;
    }
    joint
        .iter()
        .map(|(&(x, y), &c)| {
            let pxy = c / n;
            pxy * (pxy / (px[x] / n * py[&y] / n)).ln()
        })
        .sum()
}

/// Count of records carrying each label index.
pub fn label_counts(records: &[MentionRecord], k: usize) -> Vec<usize> {
    let mut counts = vec![0; k];
    for r in records {
        for i in r.labels.iter() {
            counts[i] += 1;
        }
    }
    counts
}
