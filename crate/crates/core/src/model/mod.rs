//! Mention classifier: embedding lookup with feature channels, mention and
//! context encoders, a bias-free sigmoid head, the BCE loss and the
//! multi-label decision rule.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Channel;
use crate::tensor::TensorError;

mod batch;
mod checkpoint;
mod encoders;
mod gradcheck;
mod net;
mod params;

pub use batch::Batch;
pub use checkpoint::{Checkpoint, FORMAT_VERSION};
pub use encoders::{
    bce_loss, classify, embed, encode_context_att, encode_context_avg, encode_context_rnn, encode_mention,
    lstm_states, predict, Attention, Lstm, LOSS_EPS, THRESHOLD,
};
pub use gradcheck::{model_grad_check, toy_model, GRADCHECK_TOL};
pub use net::{forward, Model, ParamVars};
pub use params::ModelParams;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid encoder config: {0}")]
    Config(String),
    #[error("mention {index} has no unmasked tokens")]
    EmptyMention { index: usize },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),
    #[error("taxonomy mismatch: checkpoint has {expected}, got {found}")]
    TaxonomyMismatch { expected: String, found: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint JSON: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    #[default]
    Avg,
    Rnn,
    Att,
}

impl EncoderKind {
    pub const ALL: [EncoderKind; 3] = [EncoderKind::Avg, EncoderKind::Rnn, EncoderKind::Att];

    pub fn name(self) -> &'static str {
        match self {
            EncoderKind::Avg => "avg",
            EncoderKind::Rnn => "rnn",
            EncoderKind::Att => "att",
        }
    }
}

impl std::str::FromStr for EncoderKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "avg" => Ok(EncoderKind::Avg),
            "rnn" => Ok(EncoderKind::Rnn),
            "att" => Ok(EncoderKind::Att),
            other => Err(format!("unknown encoder {other:?} (expected avg, rnn or att)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    /// LSTM state size.
    pub hidden: usize,
    /// Hidden layer size of the attention scorer.
    pub att_hidden: usize,
    pub dropout: f64,
    /// Enabled feature channels; embedded in `Channel` order.
    pub channels: Vec<Channel>,
    pub word_dim: usize,
    pub feature_dim: usize,
    /// Context tokens kept on each side of the mention.
    pub window: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            kind: EncoderKind::Avg,
            hidden: 100,
            att_hidden: 100,
            dropout: 0.5,
            channels: Channel::ALL.to_vec(),
            word_dim: 300,
            feature_dim: 16,
            window: 10,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.hidden == 0 || self.att_hidden == 0 {
            return bad("hidden and att_hidden must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.word_dim == 0 || self.window == 0 {
            return bad("word_dim and window must be at least 1".into());
        }
        if !self.channels.is_empty() && self.feature_dim == 0 {
            return bad("feature_dim must be at least 1 when channels are enabled".into());
        }
        let mut seen = self.channels.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.channels.len() {
            return bad("duplicate channel".into());
        }
        Ok(())
    }

    /// Enabled channels in concatenation order.
    pub fn channels_ordered(&self) -> Vec<Channel> {
        Channel::ALL.into_iter().filter(|c| self.channels.contains(c)).collect()
    }

    /// Width of one embedded token.
    pub fn embed_dim(&self) -> usize {
        self.word_dim + self.feature_dim * self.channels.len()
    }

    /// Width of one context-side representation.
    pub fn context_dim(&self) -> usize {
        match self.kind {
            EncoderKind::Avg => self.embed_dim(),
            EncoderKind::Rnn => self.hidden,
            EncoderKind::Att => 2 * self.hidden,
        }
    }

    /// Classifier input width: left + right + mention.
    pub fn classifier_dim(&self) -> usize {
        2 * self.context_dim() + self.embed_dim()
    }
}
