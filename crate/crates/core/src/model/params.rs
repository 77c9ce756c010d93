use std::collections::BTreeMap;

use rand::Rng;

use crate::corpus::{lookup, Channel, Pretrained, Vocab, PAD};
use crate::tensor::Tensor;

use super::{EncoderConfig, EncoderKind, ModelError};

pub(crate) const WORD_TABLE: &str = "embed.word";
pub(crate) const W_Y: &str = "classifier.w_y";
pub(crate) const ATT_W_A: &str = "att.w_a";
pub(crate) const ATT_W: &str = "att.w";

/// Embedding uniform init half-width for words without a pretrained vector.
pub const EMBED_INIT: f64 = 0.01;

pub(crate) fn channel_table(c: Channel) -> String {
    format!("embed.{}", c.name())
}

/// LSTM sides used by an encoder kind.
pub(crate) fn lstm_names(kind: EncoderKind) -> &'static [&'static str] {
    match kind {
        EncoderKind::Avg => &[],
        EncoderKind::Rnn => &["left", "right"],
        EncoderKind::Att => &["left_fwd", "left_bwd", "right_fwd", "right_bwd"],
    }
}

/// Named parameter tensors, iterated in name order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelParams {
    tensors: BTreeMap<String, Tensor>,
}

impl ModelParams {
    /// Parameter names and shapes implied by the config, the vocabulary
    /// sizes and `k` labels.
    pub fn shapes(cfg: &EncoderConfig, vocab: &Vocab, k: usize) -> BTreeMap<String, Vec<usize>> {
        let mut s = BTreeMap::new();
        s.insert(WORD_TABLE.to_owned(), vec![vocab.words.len(), cfg.word_dim]);
        for c in cfg.channels_ordered() {
            s.insert(channel_table(c), vec![vocab.channel(c).len(), cfg.feature_dim]);
        }
        let d = cfg.embed_dim();
        let h = cfg.hidden;
        for side in lstm_names(cfg.kind) {
            s.insert(format!("lstm.{side}.w_x"), vec![d, 4 * h]);
            s.insert(format!("lstm.{side}.w_h"), vec![h, 4 * h]);
            s.insert(format!("lstm.{side}.b"), vec![1, 4 * h]);
        }
        if cfg.kind == EncoderKind::Att {
            s.insert(ATT_W_A.to_owned(), vec![2 * h, cfg.att_hidden]);
            s.insert(ATT_W.to_owned(), vec![cfg.att_hidden, 1]);
        }
        s.insert(W_Y.to_owned(), vec![k, cfg.classifier_dim()]);
        s
    }

    /// Embedding rows from `pretrained` where available, other rows
    /// uniform in `±EMBED_INIT`; dense weights Glorot-uniform; biases zero;
    /// pad rows zero.
    pub fn init<R: Rng + ?Sized>(
        cfg: &EncoderConfig,
        vocab: &Vocab,
        pretrained: &Pretrained,
        k: usize,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        if !pretrained.vectors.is_empty() && pretrained.dim != cfg.word_dim {
            return Err(ModelError::Config(format!(
                "embeddings have dimension {}, word_dim is {}",
                pretrained.dim, cfg.word_dim
            )));
        }
        let mut tensors = BTreeMap::new();
        for (name, shape) in Self::shapes(cfg, vocab, k) {
            let (r, c) = (shape[0], shape[1]);
            let mut t = Tensor::zeros(&shape);
            if name.starts_with("embed.") {
                for i in 0..r {
                    let row = t.row_slice_mut(i);
                    let pre = (name == WORD_TABLE && vocab.pretrained.get(i).copied().unwrap_or(false))
                        .then(|| lookup(pretrained, vocab.words.item(i)))
                        .flatten();
                    match pre {
                        Some(v) => row.copy_from_slice(v),
                        None => row.iter_mut().for_each(|x| *x = rng.gen_range(-EMBED_INIT..EMBED_INIT)),
                    }
                }
            } else if !name.ends_with(".b") {
                let bound = (6.0 / (r + c) as f64).sqrt();
                t.data_mut().iter_mut().for_each(|x| *x = rng.gen_range(-bound..bound));
            }
            tensors.insert(name, t);
        }
        let mut p = Self { tensors };
        p.zero_pad_rows();
        Ok(p)
    }

    /// Every entry uniform in `±scale`, pad rows zero.
    pub fn init_uniform<R: Rng + ?Sized>(cfg: &EncoderConfig, vocab: &Vocab, k: usize, scale: f64, rng: &mut R) -> Self {
        let tensors = Self::shapes(cfg, vocab, k)
            .into_iter()
            .map(|(name, shape)| {
                let mut t = Tensor::zeros(&shape);
                t.data_mut().iter_mut().for_each(|x| *x = rng.gen_range(-scale..scale));
                (name, t)
            })
            .collect();
        let mut p = Self { tensors };
        p.zero_pad_rows();
        p
    }

    pub fn from_map(tensors: BTreeMap<String, Tensor>) -> Self {
        Self { tensors }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalars.
    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn is_embedding(name: &str) -> bool {
        name.starts_with("embed.")
    }

    pub fn zero_pad_rows(&mut self) {
        for (name, t) in &mut self.tensors {
            if Self::is_embedding(name) {
                t.row_slice_mut(PAD).iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }

    /// True when every embedding table's pad row is exactly zero.
    pub fn pad_rows_are_zero(&self) -> bool {
        self.tensors
            .iter()
            .filter(|(n, _)| Self::is_embedding(n))
            .all(|(_, t)| t.row_slice(PAD).iter().all(|&x| x == 0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocab, MentionRecord};
    use crate::typesys::LabelSet;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vocab() -> Vocab {
        let r = MentionRecord {
            tokens: vec!["the".into(), "Montgomery".into()],
            start: 1,
            end: 2,
            labels: LabelSet::from_indices(2, [0]),
            pos: Some(vec!["OTHER".into(), "PROPN".into()]),
            ner: None,
            typ: Some(vec!["O".into(), "CITY".into()]),
        };
        build_vocab(&[r], None).unwrap().0
    }

    #[test]
    fn shapes_per_kind() {
        let v = vocab();
        let cfg = EncoderConfig { word_dim: 4, feature_dim: 2, hidden: 3, att_hidden: 5, ..Default::default() };
        let s = ModelParams::shapes(&cfg, &v, 7);
        assert_eq!(s[WORD_TABLE], [4, 4]);
        assert_eq!(s["embed.typ"], [4, 2]);
        assert_eq!(s["embed.ner"], [2, 2]);
        assert_eq!(s[W_Y], [7, 30]);
        assert_eq!(s.len(), 5);

        let rnn = EncoderConfig { kind: EncoderKind::Rnn, ..cfg.clone() };
        let s = ModelParams::shapes(&rnn, &v, 7);
        assert_eq!(s["lstm.left.w_x"], [10, 12]);
        assert_eq!(s["lstm.right.w_h"], [3, 12]);
        assert_eq!(s[W_Y], [7, 3 + 3 + 10]);

        let att = EncoderConfig { kind: EncoderKind::Att, ..cfg };
        let s = ModelParams::shapes(&att, &v, 7);
        assert_eq!(s[ATT_W_A], [6, 5]);
        assert_eq!(s[ATT_W], [5, 1]);
        assert_eq!(s[W_Y], [7, 6 + 6 + 10]);
        assert_eq!(s.len(), 5 + 12 + 2);
    }

    #[test]
    fn init_pins_pad_rows_and_uses_pretrained() {
        let mut v = vocab();
        let the = v.words.id("the");
        v.pretrained = (0..v.words.len()).map(|i| i == the).collect();
        let pre = Pretrained {
            dim: 4,
            vectors: [("the".to_owned(), vec![1.0, 2.0, 3.0, 4.0])].into_iter().collect(),
        };
        let cfg = EncoderConfig { word_dim: 4, feature_dim: 2, ..Default::default() };
        let p = ModelParams::init(&cfg, &v, &pre, 3, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(p.pad_rows_are_zero());
        let w = p.get(WORD_TABLE).unwrap();
        assert_eq!(w.row_slice(the), [1.0, 2.0, 3.0, 4.0]);
        let m = v.words.id("Montgomery");
        assert!(w.row_slice(m).iter().all(|x| x.abs() < EMBED_INIT && *x != 0.0));

        let wrong = Pretrained { dim: 5, ..pre };
        assert!(ModelParams::init(&cfg, &v, &wrong, 3, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }
}
