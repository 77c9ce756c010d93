use crate::corpus::{Channel, Slot};
use crate::tensor::{Tape, Tensor, TensorError, Var};
use crate::typesys::LabelSet;

use super::ModelError;

/// Probability clamp used by the loss.
pub const LOSS_EPS: f64 = 1e-12;
/// Labels scoring strictly above this are predicted besides the argmax.
pub const THRESHOLD: f64 = 0.5;

/// Token vectors `[n, Dw + Df * |tables|]`: the word row followed by one row
/// per `(channel, table)` pair, in the order given.
pub fn embed(tape: &mut Tape, words: Var, tables: &[(Channel, Var)], slots: &[Slot]) -> Result<Var, TensorError> {
    let ids: Vec<usize> = slots.iter().map(|s| s.word).collect();
    let w = tape.gather_rows(words, &ids)?;
    if tables.is_empty() {
        return Ok(w);
    }
    let mut parts = vec![w];
    for &(c, table) in tables {
        let ids: Vec<usize> = slots.iter().map(|s| s.tags[c.index()]).collect();
        parts.push(tape.gather_rows(table, &ids)?);
    }
    tape.concat(&parts, 1)
}

/// Mean of the unmasked rows of each block of `width` rows. Every block
/// must have at least one unmasked row.
pub fn encode_mention(tape: &mut Tape, x: Var, mask: &[bool], width: usize) -> Result<Var, ModelError> {
    if let Some(i) = mask.chunks(width.max(1)).position(|blk| !blk.iter().any(|&m| m)) {
        return Err(ModelError::EmptyMention { index: i });
    }
    Ok(tape.masked_mean_groups(x, mask, width)?)
}

/// Mean of the unmasked rows per block; an all-pad block gives zeros.
pub fn encode_context_avg(tape: &mut Tape, x: Var, mask: &[bool], width: usize) -> Result<Var, TensorError> {
    tape.masked_mean_groups(x, mask, width)
}

/// LSTM weights: `w_x [D, 4H]`, `w_h [H, 4H]`, `b [1, 4H]`, gates in the
/// order input, forget, cell, output.
#[derive(Debug, Clone, Copy)]
pub struct Lstm {
    pub w_x: Var,
    pub w_h: Var,
    pub b: Var,
}

/// Hidden states of an LSTM run over `width` steps of each example
/// (`x` is example-major `[B*width, D]`). Returns one `[B, H]` state per
/// position, indexed by position. `reverse` runs from the last position to
/// the first. Masked steps carry the previous state unchanged.
pub fn lstm_states(
    tape: &mut Tape,
    x: Var,
    mask: &[bool],
    width: usize,
    p: &Lstm,
    reverse: bool,
) -> Result<Vec<Var>, TensorError> {
    let rows = tape.value(x).rows();
    let b = rows / width;
    let h_size = tape.value(p.w_h).rows();
    let xw = tape.matmul(x, p.w_x)?;
    let mut h = tape.constant(Tensor::zeros(&[b, h_size]));
    let mut c = tape.constant(Tensor::zeros(&[b, h_size]));
    let mut out = vec![h; width];
    let steps: Vec<usize> = if reverse { (0..width).rev().collect() } else { (0..width).collect() };
    for t in steps {
        let idx: Vec<usize> = (0..b).map(|i| i * width + t).collect();
        let live: Vec<f64> = idx.iter().map(|&r| if mask[r] { 1.0 } else { 0.0 }).collect();
        if live.iter().all(|&m| m == 0.0) {
            out[t] = h;
            continue;
        }
        let xt = tape.gather_rows(xw, &idx)?;
        let hw = tape.matmul(h, p.w_h)?;
        let z = tape.add(xt, hw)?;
        let z = tape.add_row(z, p.b)?;
        let gate = |tape: &mut Tape, k: usize| tape.slice(z, 1, k * h_size, (k + 1) * h_size);
        let (zi, zf, zg, zo) = (gate(tape, 0)?, gate(tape, 1)?, gate(tape, 2)?, gate(tape, 3)?);
        let i = tape.sigmoid(zi)?;
        let f = tape.sigmoid(zf)?;
        let g = tape.tanh(zg)?;
        let o = tape.sigmoid(zo)?;
        let fc = tape.mul(f, c)?;
        let ig = tape.mul(i, g)?;
        let c_new = tape.add(fc, ig)?;
        let tc = tape.tanh(c_new)?;
        let h_new = tape.mul(o, tc)?;
        if live.iter().all(|&m| m == 1.0) {
            h = h_new;
            c = c_new;
        } else {
            let m = tape.constant(Tensor::matrix(b, 1, live).expect("b rows"));
            h = blend(tape, h, h_new, m)?;
            c = blend(tape, c, c_new, m)?;
        }
        out[t] = h;
    }
    Ok(out)
}

/// `old + m * (new - old)` with a per-row 0/1 column `m`.
fn blend(tape: &mut Tape, old: Var, new: Var, m: Var) -> Result<Var, TensorError> {
    let d = tape.sub(new, old)?;
    let d = tape.mul_col(d, m)?;
    tape.add(old, d)
}

/// Final LSTM state read toward the mention: the left context runs
/// left-to-right, the right context (`toward_left = true`) right-to-left.
pub fn encode_context_rnn(
    tape: &mut Tape,
    x: Var,
    mask: &[bool],
    width: usize,
    p: &Lstm,
    toward_left: bool,
) -> Result<Var, TensorError> {
    let states = lstm_states(tape, x, mask, width, p, toward_left)?;
    Ok(if toward_left { states[0] } else { states[width - 1] })
}

/// Attention scorer `w · tanh(W_a h)`: `w_a [2H, A]`, `w [A, 1]`.
#[derive(Debug, Clone, Copy)]
pub struct Attention {
    pub w_a: Var,
    pub w: Var,
}

/// Bi-LSTM over one context side followed by self-attention restricted to
/// unmasked positions. Returns `([B, 2H], [B, width] weights)`; an all-pad
/// side yields zero weights and a zero vector.
pub fn encode_context_att(
    tape: &mut Tape,
    x: Var,
    mask: &[bool],
    width: usize,
    fwd: &Lstm,
    bwd: &Lstm,
    att: &Attention,
) -> Result<(Var, Var), TensorError> {
    let rows = tape.value(x).rows();
    let b = rows / width;
    let hf = lstm_states(tape, x, mask, width, fwd, false)?;
    let hb = lstm_states(tape, x, mask, width, bwd, true)?;
    let mut per_t = Vec::with_capacity(width);
    for t in 0..width {
        per_t.push(tape.concat(&[hf[t], hb[t]], 1)?);
    }
    let time_major = tape.concat(&per_t, 0)?;
    let order: Vec<usize> = (0..b).flat_map(|i| (0..width).map(move |t| t * b + i)).collect();
    let states = tape.gather_rows(time_major, &order)?;

    let hidden = tape.matmul(states, att.w_a)?;
    let hidden = tape.tanh(hidden)?;
    let scores = tape.matmul(hidden, att.w)?;
    let scores = tape.reshape(scores, b, width)?;
    let alpha = tape.softmax(scores, Some(mask))?;
    let alpha_col = tape.reshape(alpha, b * width, 1)?;
    let weighted = tape.mul_col(states, alpha_col)?;
    let all = vec![true; b * width];
    let mean = tape.masked_mean_groups(weighted, &all, width)?;
    let v = tape.scale(mean, width as f64)?;
    Ok((v, alpha))
}

/// `sigmoid([v_left, v_right, v_entity] · W_yᵀ)`, one row per example.
pub fn classify(tape: &mut Tape, v_left: Var, v_right: Var, v_entity: Var, w_y: Var) -> Result<Var, TensorError> {
    let v = tape.concat(&[v_left, v_right, v_entity], 1)?;
    let wt = tape.transpose(w_y)?;
    let logits = tape.matmul(v, wt)?;
    tape.sigmoid(logits)
}

/// Binary cross entropy summed over labels, averaged over rows.
pub fn bce_loss(tape: &mut Tape, y: Var, targets: &[f64]) -> Result<Var, TensorError> {
    tape.bce(y, targets, LOSS_EPS)
}

/// The argmax label (lowest index on ties) plus every label scoring
/// strictly above [`THRESHOLD`]. Not ancestor-closed.
pub fn predict(y: &[f64]) -> LabelSet {
    let mut set = LabelSet::empty(y.len());
    let Some(best) = (0..y.len()).reduce(|best, i| if y[i] > y[best] { i } else { best }) else {
        return set;
    };
    set.insert(best);
    for (i, &v) in y.iter().enumerate() {
        if v > THRESHOLD {
            set.insert(i);
        }
    }
    set
}
