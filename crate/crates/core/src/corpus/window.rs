use super::vocab::{Channel, Vocab, PAD, UNK};
use super::MentionRecord;
use crate::typesys::LabelSet;

/// Mentions longer than this keep only their first `MAX_MENTION_LEN` tokens.
pub const MAX_MENTION_LEN: usize = 10;

/// Word id plus one tag id per channel (POS, NER, TYP).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub word: usize,
    pub tags: [usize; 3],
}

impl Slot {
    pub const PAD: Slot = Slot {
        word: PAD,
        tags: [PAD; 3],
    };
}

/// Token positions for a window of width `c`: `None` marks a pad slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowPositions {
    pub left: Vec<Option<usize>>,
    pub mention: Vec<usize>,
    pub right: Vec<Option<usize>>,
}

/// Left context is the last `c` tokens before the mention, front-padded;
/// right context is the first `c` after it, back-padded.
pub fn window_positions(n_tokens: usize, start: usize, end: usize, c: usize) -> WindowPositions {
    let left_from = start.saturating_sub(c);
    let mut left = vec![None; c - (start - left_from)];
    left.extend((left_from..start).map(Some));

    let right_to = (end + c).min(n_tokens);
    let mut right: Vec<Option<usize>> = (end..right_to).map(Some).collect();
    right.resize(c, None);

    let mention = (start..end.min(start + MAX_MENTION_LEN)).collect();
    WindowPositions { left, mention, right }
}

/// A record mapped to fixed-width id windows.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedExample {
    pub left: Vec<Slot>,
    pub right: Vec<Slot>,
    pub mention: Vec<Slot>,
    /// `true` where the slot is padding.
    pub left_pad: Vec<bool>,
    pub right_pad: Vec<bool>,
    pub target: LabelSet,
}

fn slot(r: &MentionRecord, i: usize, vocab: &Vocab) -> Slot {
    let mut tags = [UNK; 3];
    for c in Channel::ALL {
        if let Some(t) = c.tags(r) {
            tags[c.index()] = vocab.channel(c).id(&t[i]);
        }
    }
    Slot {
        word: vocab.words.id(&r.tokens[i]),
        tags,
    }
}

/// Windows `record` with width `c` (must be at least 1). Words and tags
/// missing from `vocab` map to UNK; a channel the record lacks is UNK on
/// every real token.
pub fn window(record: &MentionRecord, c: usize, vocab: &Vocab) -> WindowedExample {
    assert!(c >= 1, "window size must be at least 1");
    let pos = window_positions(record.tokens.len(), record.start, record.end, c);
    let side = |p: &[Option<usize>]| -> (Vec<Slot>, Vec<bool>) {
        p.iter()
            .map(|o| match o {
                Some(i) => (slot(record, *i, vocab), false),
                None => (Slot::PAD, true),
            })
            .unzip()
    };
    let (left, left_pad) = side(&pos.left);
    let (right, right_pad) = side(&pos.right);
    WindowedExample {
        left,
        right,
        mention: pos.mention.iter().map(|&i| slot(record, i, vocab)).collect(),
        left_pad,
        right_pad,
        target: record.labels.clone(),
    }
}
