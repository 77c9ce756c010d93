use std::collections::BTreeMap;

use rand::Rng;

use crate::corpus::{window, Channel, MentionRecord, Pretrained, Vocab, WindowedExample};
use crate::tensor::{Tape, Tensor, Var};
use crate::typesys::{LabelSet, Taxonomy};

use super::encoders::{
    bce_loss, classify, embed, encode_context_att, encode_context_avg, encode_context_rnn, encode_mention, predict,
    Attention, Lstm,
};
use super::params::{channel_table, ATT_W, ATT_W_A, WORD_TABLE, W_Y};
use super::{Batch, EncoderConfig, EncoderKind, ModelError, ModelParams};

/// Examples scored per tape during inference.
const INFERENCE_BATCH: usize = 256;

/// Tape handles for every parameter, by name.
#[derive(Debug, Clone, Default)]
pub struct ParamVars(BTreeMap<String, Var>);

impl ParamVars {
    /// Puts every parameter on the tape, as leaves when `tracked`.
    pub fn register(tape: &mut Tape, params: &ModelParams, tracked: bool) -> Self {
        Self(
            params
                .iter()
                .map(|(n, t)| {
                    let v = if tracked { tape.leaf(t.clone()) } else { tape.constant(t.clone()) };
                    (n.clone(), v)
                })
                .collect(),
        )
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, Var)>) -> Self {
        Self(pairs.into_iter().collect())
    }

    pub fn get(&self, name: &str) -> Result<Var, ModelError> {
        self.0
            .get(name)
            .copied()
            .ok_or_else(|| ModelError::Config(format!("missing parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.0.iter()
    }

    fn lstm(&self, side: &str) -> Result<Lstm, ModelError> {
        Ok(Lstm {
            w_x: self.get(&format!("lstm.{side}.w_x"))?,
            w_h: self.get(&format!("lstm.{side}.w_h"))?,
            b: self.get(&format!("lstm.{side}.b"))?,
        })
    }
}

/// Scores `[B, K]` for a batch. Dropout on the three representations is
/// active only when `train` is set.
pub fn forward<R: Rng + ?Sized>(
    tape: &mut Tape,
    vars: &ParamVars,
    cfg: &EncoderConfig,
    batch: &Batch,
    train: bool,
    rng: &mut R,
) -> Result<Var, ModelError> {
    let tables = cfg
        .channels_ordered()
        .into_iter()
        .map(|c| Ok((c, vars.get(&channel_table(c))?)))
        .collect::<Result<Vec<(Channel, Var)>, ModelError>>()?;
    let words = vars.get(WORD_TABLE)?;
    let xl = embed(tape, words, &tables, &batch.left)?;
    let xr = embed(tape, words, &tables, &batch.right)?;
    let xm = embed(tape, words, &tables, &batch.mention)?;

    let c = batch.window;
    let v_entity = encode_mention(tape, xm, &batch.mention_mask, batch.mention_width)?;
    let (v_left, v_right) = match cfg.kind {
        EncoderKind::Avg => (
            encode_context_avg(tape, xl, &batch.left_mask, c)?,
            encode_context_avg(tape, xr, &batch.right_mask, c)?,
        ),
        EncoderKind::Rnn => (
            encode_context_rnn(tape, xl, &batch.left_mask, c, &vars.lstm("left")?, false)?,
            encode_context_rnn(tape, xr, &batch.right_mask, c, &vars.lstm("right")?, true)?,
        ),
        EncoderKind::Att => {
            let att = Attention {
                w_a: vars.get(ATT_W_A)?,
                w: vars.get(ATT_W)?,
            };
            let (l, _) = encode_context_att(tape, xl, &batch.left_mask, c, &vars.lstm("left_fwd")?, &vars.lstm("left_bwd")?, &att)?;
            let (r, _) =
                encode_context_att(tape, xr, &batch.right_mask, c, &vars.lstm("right_fwd")?, &vars.lstm("right_bwd")?, &att)?;
            (l, r)
        }
    };
    let v_left = tape.dropout(v_left, cfg.dropout, train, rng)?;
    let v_right = tape.dropout(v_right, cfg.dropout, train, rng)?;
    let v_entity = tape.dropout(v_entity, cfg.dropout, train, rng)?;
    Ok(classify(tape, v_left, v_right, v_entity, vars.get(W_Y)?)?)
}

/// Parameters plus everything needed to window and decode records.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: EncoderConfig,
    pub params: ModelParams,
    pub vocab: Vocab,
    pub taxonomy: Taxonomy,
}

impl Model {
    pub fn new<R: Rng + ?Sized>(
        config: EncoderConfig,
        taxonomy: Taxonomy,
        vocab: Vocab,
        pretrained: &Pretrained,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let params = ModelParams::init(&config, &vocab, pretrained, taxonomy.len(), rng)?;
        Ok(Self {
            config,
            params,
            vocab,
            taxonomy,
        })
    }

    pub fn num_labels(&self) -> usize {
        self.taxonomy.len()
    }

    pub fn windows(&self, records: &[MentionRecord]) -> Vec<WindowedExample> {
        records.iter().map(|r| window(r, self.config.window, &self.vocab)).collect()
    }

    /// Mean batch loss and the gradient of every parameter (zeros where
    /// the batch does not reach a parameter).
    pub fn loss_and_grads<R: Rng + ?Sized>(
        &self,
        batch: &Batch,
        train: bool,
        rng: &mut R,
    ) -> Result<(f64, BTreeMap<String, Tensor>), ModelError> {
        let mut tape = Tape::new();
        let vars = ParamVars::register(&mut tape, &self.params, true);
        let y = forward(&mut tape, &vars, &self.config, batch, train, rng)?;
        let loss = bce_loss(&mut tape, y, &batch.targets)?;
        tape.backward(loss)?;
        let grads = vars
            .iter()
            .map(|(name, v)| {
                let g = tape
                    .grad(*v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(self.params.get(name).expect("registered").shape()));
                (name.clone(), g)
            })
            .collect();
        Ok((tape.value(loss).data()[0], grads))
    }

    /// Label scores per example, dropout off.
    pub fn scores(&self, examples: &[WindowedExample]) -> Result<Vec<Vec<f64>>, ModelError> {
        let mut out = Vec::with_capacity(examples.len());
        let mut no_rng = rand::rngs::mock::StepRng::new(0, 0);
        for chunk in examples.chunks(INFERENCE_BATCH) {
            let batch = Batch::new(chunk)?;
            let mut tape = Tape::new();
            let vars = ParamVars::register(&mut tape, &self.params, false);
            let y = forward(&mut tape, &vars, &self.config, &batch, false, &mut no_rng)?;
            out.extend(tape.value(y).to_rows());
        }
        Ok(out)
    }

    /// Ancestor-closed predicted label sets.
    pub fn predict(&self, examples: &[WindowedExample]) -> Result<Vec<LabelSet>, ModelError> {
        self.scores(examples)?
            .iter()
            .map(|y| Ok(self.taxonomy.close_ancestors(&predict(y)).expect("sized to taxonomy")))
            .collect()
    }
}
