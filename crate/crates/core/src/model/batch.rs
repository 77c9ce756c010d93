use crate::corpus::{Slot, WindowedExample};

use super::ModelError;

/// Windowed examples flattened example-major: row `b * width + t` holds
/// position `t` of example `b`. Masks are `true` on real tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub window: usize,
    pub mention_width: usize,
    pub left: Vec<Slot>,
    pub left_mask: Vec<bool>,
    pub right: Vec<Slot>,
    pub right_mask: Vec<bool>,
    pub mention: Vec<Slot>,
    pub mention_mask: Vec<bool>,
    /// `size * num_labels` gold indicators.
    pub targets: Vec<f64>,
}

impl Batch {
    pub fn new<'a, I>(examples: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = &'a WindowedExample>,
    {
        let examples: Vec<&WindowedExample> = examples.into_iter().collect();
        let first = examples.first().ok_or(ModelError::EmptyBatch)?;
        let window = first.left.len();
        let mention_width = examples.iter().map(|e| e.mention.len()).max().unwrap_or(0).max(1);
        let mut b = Batch {
            size: examples.len(),
            window,
            mention_width,
            left: Vec::with_capacity(examples.len() * window),
            left_mask: Vec::with_capacity(examples.len() * window),
            right: Vec::with_capacity(examples.len() * window),
            right_mask: Vec::with_capacity(examples.len() * window),
            mention: Vec::with_capacity(examples.len() * mention_width),
            mention_mask: Vec::with_capacity(examples.len() * mention_width),
            targets: Vec::new(),
        };
        for (i, e) in examples.iter().enumerate() {
            if e.left.len() != window || e.right.len() != window {
                return Err(ModelError::Config(format!("example {i} has a different window width")));
            }
            if e.mention.is_empty() {
                return Err(ModelError::EmptyMention { index: i });
            }
            b.left.extend_from_slice(&e.left);
            b.left_mask.extend(e.left_pad.iter().map(|p| !p));
            b.right.extend_from_slice(&e.right);
            b.right_mask.extend(e.right_pad.iter().map(|p| !p));
            b.mention.extend_from_slice(&e.mention);
            b.mention_mask.extend(std::iter::repeat_n(true, e.mention.len()));
            b.mention.extend(std::iter::repeat_n(Slot::PAD, mention_width - e.mention.len()));
            b.mention_mask.extend(std::iter::repeat_n(false, mention_width - e.mention.len()));
            b.targets.extend(e.target.to_dense());
        }
        Ok(b)
    }

    pub fn num_labels(&self) -> usize {
        self.targets.len() / self.size
    }
}
