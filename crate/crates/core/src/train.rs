//! Mini-batch Adam training with early stopping on dev GMean.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::MentionRecord;
use crate::metrics::{score, EvalReport, MetricsError};
use crate::model::{Batch, Model, ModelError, ModelParams};
use crate::tensor::{Tensor, TensorError};

pub const LR_MIN: f64 = 1e-4;
pub const LR_MAX: f64 = 5e-4;
/// Gradient norms above this are logged; no clipping is applied.
pub const GRAD_NORM_WARN: f64 = 1e3;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("no gradient for parameter {0}")]
    MissingGrad(String),
    #[error("gradient for {name} has shape {found:?}, parameter has {expected:?}")]
    GradShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("non-finite loss in epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("{}: {source}", path.display())]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_epochs: usize,
    /// Dev evaluations without a GMean improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Allows a learning rate outside `[LR_MIN, LR_MAX]`, including 0.
    pub unsafe_lr: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 512,
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_epochs: 50,
            patience: 5,
            seed: 0,
            unsafe_lr: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.batch_size == 0 || self.patience == 0 || self.max_epochs == 0 {
            return bad("batch_size, patience and max_epochs must be at least 1".into());
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return bad(format!("learning rate {} must be finite and non-negative", self.lr));
        }
        if !self.unsafe_lr && !(LR_MIN..=LR_MAX).contains(&self.lr) {
            return bad(format!(
                "learning rate {} outside [{LR_MIN}, {LR_MAX}]; pass --unsafe-lr to override",
                self.lr
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return bad("adam betas must lie in [0, 1) and eps must be positive".into());
        }
        Ok(())
    }
}

/// First and second moment estimates per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: BTreeMap<String, Tensor> = params.iter().map(|(n, t)| (n.clone(), Tensor::zeros(t.shape()))).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update; embedding pad rows are re-zeroed after.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<(), TrainError> {
    for (name, p) in params.iter() {
        let g = grads.get(name).ok_or_else(|| TrainError::MissingGrad(name.clone()))?;
        if g.shape() != p.shape() {
            return Err(TrainError::GradShape {
                name: name.clone(),
                expected: p.shape().to_vec(),
                found: g.shape().to_vec(),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (name, p) in params.iter_mut() {
        let g = &grads[name];
        let m = state.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape()));
        let v = state.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape()));
        for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
            *mv = cfg.beta1 * *mv + (1.0 - cfg.beta1) * gv;
            *vv = cfg.beta2 * *vv + (1.0 - cfg.beta2) * gv * gv;
            let m_hat = *mv / c1;
            let v_hat = *vv / c2;
            *pv -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    params.zero_pad_rows();
    Ok(())
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub strict: f64,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub gmean: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best dev GMean.
    pub best: Model,
    pub best_epoch: usize,
    pub best_dev: EvalReport,
    pub log: Vec<EpochLog>,
}

/// Scores `model` on `records` with dropout off and closed predictions.
pub fn evaluate(model: &Model, records: &[MentionRecord]) -> Result<EvalReport, TrainError> {
    if records.is_empty() {
        return Err(TrainError::EmptySplit("evaluation"));
    }
    let pred = model.predict(&model.windows(records))?;
    let gold: Vec<_> = records.iter().map(|r| r.labels.clone()).collect();
    Ok(score(&pred, &gold, &model.taxonomy)?)
}

fn epoch_rngs(seed: u64, epoch: usize) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut shuffle = ChaCha8Rng::seed_from_u64(seed);
    shuffle.set_stream(2 * epoch as u64);
    let mut dropout = ChaCha8Rng::seed_from_u64(seed);
    dropout.set_stream(2 * epoch as u64 + 1);
    (shuffle, dropout)
}

fn grad_norm(grads: &BTreeMap<String, Tensor>) -> f64 {
    grads.values().flat_map(|g| g.data()).map(|x| x * x).sum::<f64>().sqrt()
}

/// Trains from `model`'s current parameters. Each epoch shuffles with an
/// RNG keyed by `(seed, epoch)`, keeps the last partial batch, then scores
/// the dev split; training stops after `patience` epochs without a GMean
/// improvement or at `max_epochs`.
pub fn train(
    mut model: Model,
    train_set: &[MentionRecord],
    dev_set: &[MentionRecord],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if dev_set.is_empty() {
        return Err(TrainError::EmptySplit("dev"));
    }
    let examples = model.windows(train_set);
    let mut state = AdamState::new(&model.params);
    let mut log = Vec::new();
    let mut best: Option<(Model, usize, EvalReport)> = None;
    let mut stale = 0;

    for epoch in 1..=cfg.max_epochs {
        let (mut shuffle_rng, mut dropout_rng) = epoch_rngs(cfg.seed, epoch);
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = Batch::new(chunk.iter().map(|&i| &examples[i]))?;
            let (loss, grads) = match model.loss_and_grads(&batch, true, &mut dropout_rng) {
                Err(ModelError::Tensor(TensorError::NonFinite { .. })) => {
                    return Err(TrainError::NonFiniteLoss { epoch, batch: bi })
                }
                other => other?,
            };
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch: bi });
            }
            let norm = grad_norm(&grads);
            if norm > GRAD_NORM_WARN {
                log::warn!("epoch {epoch} batch {bi}: gradient norm {norm:.3e}");
            }
            adam_step(&mut model.params, &grads, &mut state, cfg)?;
            total += loss * chunk.len() as f64;
        }

        let dev = evaluate(&model, dev_set)?;
        let entry = EpochLog {
            epoch,
            train_loss: total / examples.len() as f64,
            strict: dev.strict,
            macro_f1: dev.macro_f1,
            micro_f1: dev.micro_f1,
            gmean: dev.gmean,
        };
        log::info!(
            "epoch {epoch}: loss {:.5} dev strict {:.4} macro {:.4} micro {:.4} gmean {:.4}",
            entry.train_loss,
            dev.strict,
            dev.macro_f1,
            dev.micro_f1,
            dev.gmean
        );
        log.push(entry);
        if best.as_ref().is_none_or(|(_, _, b)| dev.gmean > b.gmean) {
            best = Some((model.clone(), epoch, dev));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                log::info!("no dev improvement for {stale} epochs; stopping");
                break;
            }
        }
    }
    let (best, best_epoch, best_dev) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        best,
        best_epoch,
        best_dev,
        log,
    })
}

pub fn write_log<W: Write>(mut w: W, log: &[EpochLog]) -> std::io::Result<()> {
    for e in log {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_log(path: impl AsRef<Path>, log: &[EpochLog]) -> Result<(), TrainError> {
    let path = path.as_ref();
    let io = |source| TrainError::Io {
        path: path.to_owned(),
        source,
    };
    let mut buf = Vec::new();
    write_log(&mut buf, log).map_err(io)?;
    std::fs::write(path, buf).map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocab, synth_corpus, Channel, SynthConfig};
    use crate::model::{toy_model, EncoderConfig, EncoderKind};
    use crate::tensor::Tape;

    fn params_of(pairs: &[(&str, Tensor)]) -> ModelParams {
        ModelParams::from_map(pairs.iter().map(|(n, t)| (n.to_string(), t.clone())).collect())
    }

    #[test]
    fn first_step_closed_form() {
        let cfg = TrainConfig { lr: 1e-3, unsafe_lr: true, ..Default::default() };
        let mut p = params_of(&[("w", Tensor::scalar(0.0)), ("u", Tensor::scalar(0.0))]);
        let mut st = AdamState::new(&p);
        let grads: BTreeMap<String, Tensor> =
            [("w".to_string(), Tensor::scalar(1.0)), ("u".to_string(), Tensor::scalar(0.0))].into_iter().collect();
        adam_step(&mut p, &grads, &mut st, &cfg).unwrap();
        // m_hat = 1, v_hat = 1: step = lr / (1 + eps)
        let w = p.get("w").unwrap().data()[0];
        assert!((w + 1e-3 / (1.0 + 1e-8)).abs() < 1e-18, "{w}");
        assert_eq!(p.get("u").unwrap().data()[0], 0.0);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn identical_histories_move_identically() {
        let cfg = TrainConfig::default();
        let mut p = params_of(&[("a", Tensor::row(vec![0.3, 0.3])), ("b", Tensor::row(vec![0.3, 0.3]))]);
        let mut st = AdamState::new(&p);
        for k in 0..5 {
            let g = Tensor::row(vec![0.1 * k as f64 - 0.2, 0.1 * k as f64 - 0.2]);
            let grads = [("a".to_string(), g.clone()), ("b".to_string(), g)].into_iter().collect();
            adam_step(&mut p, &grads, &mut st, &cfg).unwrap();
        }
        assert_eq!(p.get("a"), p.get("b"));
        let a = p.get("a").unwrap().data();
        assert_eq!(a[0], a[1]);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut p = params_of(&[("a", Tensor::scalar(1.0))]);
        let mut st = AdamState::new(&p);
        let err = adam_step(&mut p, &BTreeMap::new(), &mut st, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, TrainError::MissingGrad(ref n) if n == "a"));
    }

    #[test]
    fn one_step_decreases_convex_loss() {
        // Logistic regression on separable points, loss = bce(sigmoid(Xw)).
        let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0], vec![-1.0, -1.5], vec![-2.0, -0.5]]).unwrap();
        let t = [1.0, 1.0, 0.0, 0.0];
        let loss_grad = |w: &Tensor| {
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let wv = tape.leaf(w.clone());
            let z = tape.matmul(xv, wv).unwrap();
            let y = tape.sigmoid(z).unwrap();
            let l = tape.bce(y, &t, 1e-12).unwrap();
            tape.backward(l).unwrap();
            (tape.value(l).data()[0], tape.grad(wv).unwrap().clone())
        };
        for lr in [1e-4, 1e-3, 1e-2] {
            let cfg = TrainConfig { lr, unsafe_lr: true, ..Default::default() };
            let mut p = params_of(&[("w", Tensor::matrix(2, 1, vec![-0.3, 0.1]).unwrap())]);
            let mut st = AdamState::new(&p);
            let (before, g) = loss_grad(p.get("w").unwrap());
            adam_step(&mut p, &[("w".to_string(), g)].into_iter().collect(), &mut st, &cfg).unwrap();
            let (after, _) = loss_grad(p.get("w").unwrap());
            assert!(after < before, "lr {lr}: {after} >= {before}");
        }
    }

    #[test]
    fn lr_bounds() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { lr: 1e-3, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { lr: 1e-3, unsafe_lr: true, ..Default::default() }.validate().is_ok());
        assert!(TrainConfig { lr: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { lr: 0.0, unsafe_lr: true, ..Default::default() }.validate().is_ok());
        assert!(TrainConfig { lr: -1e-4, unsafe_lr: true, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
    }

    fn small_run(lr: f64, epochs: usize) -> TrainOutcome {
        let cfg = SynthConfig { train: 60, dev: 20, test: 20, min_per_label: 5, ..Default::default() };
        let c = synth_corpus(&cfg, 2).unwrap();
        let (vocab, pre) = build_vocab(&c.train, None).unwrap();
        let enc = EncoderConfig { word_dim: 8, feature_dim: 4, window: 4, channels: vec![Channel::Typ], ..Default::default() };
        let model = Model::new(enc, c.taxonomy.clone(), vocab, &pre, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let tc = TrainConfig { lr, unsafe_lr: true, batch_size: 16, max_epochs: epochs, patience: epochs, seed: 4, ..Default::default() };
        train(model, &c.train, &c.dev, &tc).unwrap()
    }

    #[test]
    fn zero_lr_keeps_dev_metrics_constant() {
        let out = small_run(0.0, 3);
        assert_eq!(out.log.len(), 3);
        for e in &out.log[1..] {
            assert_eq!((e.strict, e.macro_f1, e.micro_f1, e.gmean), (out.log[0].strict, out.log[0].macro_f1, out.log[0].micro_f1, out.log[0].gmean));
        }
    }

    #[test]
    fn training_is_deterministic_and_keeps_pad_rows_zero() {
        let a = small_run(5e-3, 3);
        let b = small_run(5e-3, 3);
        assert_eq!(a.log, b.log);
        assert_eq!(a.best.to_json(), b.best.to_json());
        assert!(a.best.params.pad_rows_are_zero());
        let mut buf = Vec::new();
        write_log(&mut buf, &a.log).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
    }

    #[test]
    fn report_gmean_is_consistent() {
        let (m, _) = toy_model(EncoderKind::Avg, 0.5, 1);
        let tax = m.taxonomy.clone();
        let rec = MentionRecord {
            tokens: vec!["a".into(), "M".into()],
            start: 1,
            end: 2,
            labels: tax.encode(&["/c"]).unwrap(),
            pos: None,
            ner: None,
            typ: None,
        };
        let r = evaluate(&m, &[rec]).unwrap();
        assert_eq!(r.gmean, crate::metrics::gmean(r.strict, r.macro_f1, r.micro_f1).unwrap());
        assert!(matches!(evaluate(&m, &[]), Err(TrainError::EmptySplit(_))));
    }
}
