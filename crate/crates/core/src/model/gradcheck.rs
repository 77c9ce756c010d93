use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{build_vocab, Channel, MentionRecord, WindowedExample};
use crate::tensor::{grad_check_many, GradCheck, Tensor};
use crate::typesys::Taxonomy;

use super::encoders::bce_loss;
use super::{forward, Batch, EncoderConfig, EncoderKind, Model, ModelError, ModelParams, ParamVars};

/// Largest relative error accepted by the full-model check.
pub const GRADCHECK_TOL: f64 = 1e-4;
const FD_STEP: f64 = 1e-5;

/// Two-example model with word dim 4, feature dim 2, hidden 3, three labels,
/// window 3 and every channel enabled; parameters uniform in `±scale`.
/// The contexts include padding on both sides.
pub fn toy_model(kind: EncoderKind, scale: f64, seed: u64) -> (Model, Vec<WindowedExample>) {
    let taxonomy = Taxonomy::from_labels(["/a", "/a/b", "/c"]).expect("valid labels");
    let rec = |toks: &[&str], start: usize, end: usize, labels: &[&str], typ: &[&str]| {
        let n = toks.len();
        MentionRecord {
            tokens: toks.iter().map(|s| s.to_string()).collect(),
            start,
            end,
            labels: taxonomy.encode(labels).expect("known labels"),
            pos: Some((0..n).map(|i| if i % 2 == 0 { "NOUN" } else { "VERB" }.to_string()).collect()),
            ner: Some((0..n).map(|i| if (start..end).contains(&i) { "PERSON" } else { "O" }.to_string()).collect()),
            typ: Some(typ.iter().map(|s| s.to_string()).collect()),
        }
    };
    let records = [
        rec(&["a", "b", "M", "N", "c"], 2, 4, &["/a/b"], &["O", "O", "CITY", "CITY", "O"]),
        rec(
            &["d", "e", "f", "g", "P", "h", "i", "j", "k"],
            4,
            5,
            &["/c"],
            &["O", "O", "O", "O", "PERSON", "O", "O", "O", "O"],
        ),
    ];
    let (vocab, _) = build_vocab(&records, None).expect("non-empty");
    let config = EncoderConfig {
        kind,
        hidden: 3,
        att_hidden: 3,
        dropout: 0.5,
        channels: Channel::ALL.to_vec(),
        word_dim: 4,
        feature_dim: 2,
        window: 3,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = ModelParams::init_uniform(&config, &vocab, taxonomy.len(), scale, &mut rng);
    let model = Model {
        config,
        params,
        vocab,
        taxonomy,
    };
    let examples = model.windows(&records);
    (model, examples)
}

/// Central-difference check of the batch loss gradient over every
/// parameter of the toy model. Dropout is off so the loss is deterministic.
pub fn model_grad_check(kind: EncoderKind, seed: u64) -> Result<GradCheck, ModelError> {
    let (model, examples) = toy_model(kind, 0.5, seed);
    let batch = Batch::new(&examples)?;
    let names: Vec<String> = model.params.names().cloned().collect();
    let inputs: Vec<Tensor> = model.params.iter().map(|(_, t)| t.clone()).collect();
    let cfg = model.config.clone();
    // Surfaces non-tensor errors before the closure, which can only return
    // tensor errors.
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    model.loss_and_grads(&batch, false, &mut rng)?;
    let report = grad_check_many(
        |tape, vars| {
            let pv = ParamVars::from_pairs(names.iter().cloned().zip(vars.iter().copied()));
            let mut rng = rand::rngs::mock::StepRng::new(0, 0);
            let y = forward(tape, &pv, &cfg, &batch, false, &mut rng).map_err(|e| match e {
                ModelError::Tensor(t) => t,
                other => unreachable!("validated above: {other}"),
            })?;
            bce_loss(tape, y, &batch.targets)
        },
        &inputs,
        FD_STEP,
        GRADCHECK_TOL,
    )?;
    Ok(report)
}
