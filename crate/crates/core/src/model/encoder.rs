//! Encoder forward pass, cloze evaluation, and the pre-training loss.
//!
//! Batched sequences are packed as rows of one [batch * seq, hidden] matrix.
//! Attention runs over the full packed matrix with a block-diagonal mask, so
//! positions never attend across sequence boundaries or into padding. That
//! keeps every step inside the 2-D primitive set at desk scale.

use std::sync::Arc;

use super::{ClozeItem, ModelParams, PAD_TOKEN};
use crate::diff::{DiffArray, Primitive, Tape};
use crate::error::{Error, Result};
use crate::rng::CounterRng;

/// Fill value for disallowed attention edges. exp(x - max) underflows to zero
/// at this magnitude in f64, so masked keys get exactly zero weight.
const ATTENTION_MASK_FILL: f64 = -1e30;

#[derive(Debug, Clone)]
pub struct SequenceInput {
    pub tokens: Vec<u32>,
    pub segments: Vec<u8>,
}

impl SequenceInput {
    pub fn new(tokens: Vec<u32>, segments: Vec<u8>) -> Self {
        SequenceInput { tokens, segments }
    }
}

/// Packed hidden states for a batch.
pub struct Hidden {
    /// [batch * seq_stride, hidden]
    pub states: DiffArray,
    pub seq_stride: usize,
    pub lens: Vec<usize>,
}

impl Hidden {
    /// Global row index of position `pos` in sequence `seq`.
    pub fn row(&self, seq: usize, pos: usize) -> usize {
        seq * self.seq_stride + pos
    }
}

/// Dropout as masked-fill with an untracked Bernoulli mask plus rescale.
/// `rng = None` (evaluation) leaves the input untouched.
fn dropout(
    tape: &mut Tape,
    x: &DiffArray,
    rate: f64,
    rng: &mut Option<&mut CounterRng>,
) -> Result<DiffArray> {
    let Some(rng) = rng.as_deref_mut() else {
        return Ok(x.clone());
    };
    if rate == 0.0 {
        return Ok(x.clone());
    }
    let mask: Vec<f64> = (0..x.len()).map(|_| if rng.gen_bool(rate) { 1.0 } else { 0.0 }).collect();
    let mask = DiffArray::from_vec(x.shape().to_vec(), mask)?;
    let dropped = tape.apply(Primitive::MaskedFill { fill: 0.0 }, &[x, &mask])?;
    tape.apply(Primitive::Scale { factor: 1.0 / (1.0 - rate) }, &[&dropped])
}

fn linear(tape: &mut Tape, x: &DiffArray, w: &DiffArray, b: &DiffArray) -> Result<DiffArray> {
    let xw = tape.apply(Primitive::MatMul, &[x, w])?;
    tape.apply(Primitive::Add, &[&xw, b])
}

/// Constant per-head column-selection matrices C_h [hidden, head_dim] and
/// their transposes, used to split and re-assemble heads with plain matmuls.
fn head_selectors(hidden: usize, heads: usize) -> Vec<(DiffArray, DiffArray)> {
    let dh = hidden / heads;
    (0..heads)
        .map(|h| {
            let mut sel = vec![0.0f64; hidden * dh];
            let mut sel_t = vec![0.0f64; dh * hidden];
            for j in 0..dh {
                sel[(h * dh + j) * dh + j] = 1.0;
                sel_t[j * hidden + h * dh + j] = 1.0;
            }
            (
                DiffArray::from_vec(vec![hidden, dh], sel).expect("selector shape"),
                DiffArray::from_vec(vec![dh, hidden], sel_t).expect("selector shape"),
            )
        })
        .collect()
}

/// Block-diagonal attention mask over packed rows: 1.0 marks a disallowed
/// (query, key) edge — different sequences, or a padded key.
fn attention_disallow_mask(batch: usize, stride: usize, lens: &[usize]) -> DiffArray {
    let rows = batch * stride;
    let mut mask = vec![1.0f64; rows * rows];
    for (b, &len) in lens.iter().enumerate() {
        for q in 0..stride {
            let qrow = (b * stride + q) * rows;
            for k in 0..len {
                mask[qrow + b * stride + k] = 0.0;
            }
        }
    }
    DiffArray::from_vec(vec![rows, rows], mask).expect("mask shape")
}

/// Encode a batch of sequences into packed hidden states.
pub fn encode_batch(
    params: &ModelParams,
    batch: &[SequenceInput],
    tape: &mut Tape,
    mut dropout_rng: Option<&mut CounterRng>,
) -> Result<Hidden> {
    let cfg = &params.config;
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let stride = batch.iter().map(|s| s.tokens.len()).max().unwrap_or(0);
    if stride == 0 {
        return Err(Error::InvalidArgument("batch of empty sequences".into()));
    }
    if stride > cfg.max_seq_len {
        return Err(Error::InvalidArgument(format!(
            "sequence length {} exceeds model maximum {}",
            stride, cfg.max_seq_len
        )));
    }
    for seq in batch {
        if seq.segments.len() != seq.tokens.len() {
            return Err(Error::InvalidArgument(
                "segment ids and tokens must have equal length".into(),
            ));
        }
    }

    let lens: Vec<usize> = batch.iter().map(|s| s.tokens.len()).collect();
    let rows = batch.len() * stride;

    let mut token_ids = Vec::with_capacity(rows);
    let mut position_ids = Vec::with_capacity(rows);
    let mut segment_ids = Vec::with_capacity(rows);
    for seq in batch {
        for p in 0..stride {
            token_ids.push(*seq.tokens.get(p).unwrap_or(&PAD_TOKEN) as usize);
            position_ids.push(p);
            segment_ids.push(*seq.segments.get(p).unwrap_or(&0) as usize);
        }
    }

    let tok = tape.apply(
        Primitive::EmbeddingGather { indices: Arc::from(token_ids) },
        &[&params.token_embedding],
    )?;
    let pos = tape.apply(
        Primitive::EmbeddingGather { indices: Arc::from(position_ids) },
        &[&params.position_embedding],
    )?;
    let seg = tape.apply(
        Primitive::EmbeddingGather { indices: Arc::from(segment_ids) },
        &[&params.segment_embedding],
    )?;
    let sum = tape.apply(Primitive::Add, &[&tok, &pos])?;
    let sum = tape.apply(Primitive::Add, &[&sum, &seg])?;
    let mut x = tape.apply(
        Primitive::LayerNorm { epsilon: cfg.layer_norm_eps },
        &[&sum, &params.embed_norm_gain, &params.embed_norm_bias],
    )?;
    x = dropout(tape, &x, cfg.dropout, &mut dropout_rng)?;

    let selectors = head_selectors(cfg.hidden, cfg.heads);
    let disallow = attention_disallow_mask(batch.len(), stride, &lens);
    let inv_sqrt_dh = 1.0 / (cfg.head_dim() as f64).sqrt();

    for layer in &params.layers {
        let q = linear(tape, &x, &layer.attn_query_w, &layer.attn_query_b)?;
        let k = linear(tape, &x, &layer.attn_key_w, &layer.attn_key_b)?;
        let v = linear(tape, &x, &layer.attn_value_w, &layer.attn_value_b)?;

        let mut ctx: Option<DiffArray> = None;
        for (sel, sel_t) in &selectors {
            let qh = tape.apply(Primitive::MatMul, &[&q, sel])?;
            let kh = tape.apply(Primitive::MatMul, &[&k, sel])?;
            let vh = tape.apply(Primitive::MatMul, &[&v, sel])?;
            let kh_t = tape.apply(Primitive::Transpose, &[&kh])?;
            let scores = tape.apply(Primitive::MatMul, &[&qh, &kh_t])?;
            let scores = tape.apply(Primitive::Scale { factor: inv_sqrt_dh }, &[&scores])?;
            let scores = tape.apply(
                Primitive::MaskedFill { fill: ATTENTION_MASK_FILL },
                &[&scores, &disallow],
            )?;
            let probs = tape.apply(Primitive::SoftmaxRows, &[&scores])?;
            let probs = dropout(tape, &probs, cfg.dropout, &mut dropout_rng)?;
            let ctx_h = tape.apply(Primitive::MatMul, &[&probs, &vh])?;
            let widened = tape.apply(Primitive::MatMul, &[&ctx_h, sel_t])?;
            ctx = Some(match ctx {
                None => widened,
                Some(acc) => tape.apply(Primitive::Add, &[&acc, &widened])?,
            });
        }
        let ctx = ctx.expect("at least one head");

        let attn_out = linear(tape, &ctx, &layer.attn_output_w, &layer.attn_output_b)?;
        let attn_out = dropout(tape, &attn_out, cfg.dropout, &mut dropout_rng)?;
        let residual = tape.apply(Primitive::Add, &[&x, &attn_out])?;
        x = tape.apply(
            Primitive::LayerNorm { epsilon: cfg.layer_norm_eps },
            &[&residual, &layer.attn_norm_gain, &layer.attn_norm_bias],
        )?;

        let inner = linear(tape, &x, &layer.ff_inner_w, &layer.ff_inner_b)?;
        let inner = tape.apply(Primitive::Gelu, &[&inner])?;
        let outer = linear(tape, &inner, &layer.ff_outer_w, &layer.ff_outer_b)?;
        let outer = dropout(tape, &outer, cfg.dropout, &mut dropout_rng)?;
        let residual = tape.apply(Primitive::Add, &[&x, &outer])?;
        x = tape.apply(
            Primitive::LayerNorm { epsilon: cfg.layer_norm_eps },
            &[&residual, &layer.ff_norm_gain, &layer.ff_norm_bias],
        )?;
    }

    Ok(Hidden { states: x, seq_stride: stride, lens })
}

/// Encode a single sequence. `attention_mask[i] = false` marks padding.
pub fn encode(
    params: &ModelParams,
    tokens: &[u32],
    segments: &[u8],
    attention_mask: &[bool],
    tape: &mut Tape,
    dropout_rng: Option<&mut CounterRng>,
) -> Result<DiffArray> {
    if attention_mask.len() != tokens.len() {
        return Err(Error::InvalidArgument(
            "attention mask length must match token count".into(),
        ));
    }
    // padding is a suffix: effective length = tokens before the first false
    let len = attention_mask.iter().position(|&m| !m).unwrap_or(tokens.len());
    if attention_mask[..len].iter().any(|&m| !m) || attention_mask[len..].iter().any(|&m| m) {
        return Err(Error::InvalidArgument(
            "attention mask must mark a contiguous padding suffix".into(),
        ));
    }
    if len == 0 {
        return Err(Error::InvalidArgument("fully padded sequence".into()));
    }
    let full = SequenceInput::new(tokens.to_vec(), segments.to_vec());
    let hidden = encode_batch(
        params,
        std::slice::from_ref(&SequenceInput::new(
            full.tokens[..len].to_vec(),
            full.segments[..len].to_vec(),
        )),
        tape,
        dropout_rng,
    )?;
    Ok(hidden.states)
}

/// MLM logits [positions, vocab] for the given packed row indices.
fn mlm_logits_at(
    params: &ModelParams,
    hidden: &DiffArray,
    rows: &[usize],
    tape: &mut Tape,
) -> Result<DiffArray> {
    let gathered = tape.apply(
        Primitive::EmbeddingGather { indices: Arc::from(rows.to_vec()) },
        &[hidden],
    )?;
    let t = linear(tape, &gathered, &params.mlm_transform_w, &params.mlm_transform_b)?;
    let t = tape.apply(Primitive::Gelu, &[&t])?;
    let t = tape.apply(
        Primitive::LayerNorm { epsilon: params.config.layer_norm_eps },
        &[&t, &params.mlm_norm_gain, &params.mlm_norm_bias],
    )?;
    let projected = match &params.mlm_output_w {
        Some(w) => tape.apply(Primitive::MatMul, &[&t, w])?,
        None => {
            let tied = tape.apply(Primitive::Transpose, &[&params.token_embedding])?;
            tape.apply(Primitive::MatMul, &[&t, &tied])?
        }
    };
    tape.apply(Primitive::Add, &[&projected, &params.mlm_output_bias])
}

/// Pooled-first-position logits through the tanh pooler and a linear head.
/// Used for sentence-order prediction and for fine-tuned classifiers.
pub fn pooled_logits(
    params: &ModelParams,
    hidden: &DiffArray,
    first_rows: &[usize],
    head_w: &DiffArray,
    head_b: &DiffArray,
    tape: &mut Tape,
) -> Result<DiffArray> {
    let gathered = tape.apply(
        Primitive::EmbeddingGather { indices: Arc::from(first_rows.to_vec()) },
        &[hidden],
    )?;
    let p = linear(tape, &gathered, &params.pooler_w, &params.pooler_b)?;
    let p = tape.apply(Primitive::Tanh, &[&p])?;
    linear(tape, &p, head_w, head_b)
}

/// Raw vocabulary logits [1, vocab] at the mask position of a cloze item.
/// Evaluation mode: no dropout, nothing tracked.
pub fn cloze_logits(params: &ModelParams, item: &ClozeItem) -> Result<DiffArray> {
    if item.mask_position >= item.tokens.len() {
        return Err(Error::InvalidArgument(format!(
            "mask position {} out of bounds for sequence of {} tokens",
            item.mask_position,
            item.tokens.len()
        )));
    }
    let mut tape = Tape::new();
    let seq = SequenceInput::new(item.tokens.clone(), vec![0; item.tokens.len()]);
    let hidden = encode_batch(params, std::slice::from_ref(&seq), &mut tape, None)?;
    let row = hidden.row(0, item.mask_position);
    mlm_logits_at(params, &hidden.states, &[row], &mut tape)
}

/// Full-vocabulary log-probabilities at the mask position.
#[derive(Debug, Clone)]
pub struct ClozeEval {
    pub log_probs: Vec<f64>,
}

impl ClozeEval {
    pub fn log_prob(&self, target: u32) -> Result<f64> {
        self.log_probs
            .get(target as usize)
            .copied()
            .ok_or(Error::IndexOutOfRange {
                op: "cloze-log-prob",
                index: target as usize,
                bound: self.log_probs.len(),
            })
    }

    /// 1-based rank of `target` over the whole vocabulary; ties broken in
    /// favor of the lower token id.
    pub fn rank(&self, target: u32) -> Result<u32> {
        let t = target as usize;
        if t >= self.log_probs.len() {
            return Err(Error::IndexOutOfRange {
                op: "cloze-rank",
                index: t,
                bound: self.log_probs.len(),
            });
        }
        let target_score = self.log_probs[t];
        let mut rank = 1u32;
        for (j, &s) in self.log_probs.iter().enumerate() {
            if s > target_score || (s == target_score && j < t) {
                rank += 1;
            }
        }
        Ok(rank)
    }
}

/// Evaluate a cloze item once, materializing the whole distribution.
pub fn cloze_eval(params: &ModelParams, item: &ClozeItem) -> Result<ClozeEval> {
    let logits = cloze_logits(params, item)?;
    let row = logits.values();
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    Ok(ClozeEval { log_probs: row.iter().map(|v| v - lse).collect() })
}

pub fn cloze_log_prob(params: &ModelParams, item: &ClozeItem, target: u32) -> Result<f64> {
    cloze_eval(params, item)?.log_prob(target)
}

pub fn cloze_rank(params: &ModelParams, item: &ClozeItem, target: u32) -> Result<u32> {
    cloze_eval(params, item)?.rank(target)
}

/// One slot of a training minibatch.
#[derive(Debug, Clone)]
pub struct TrainSequence {
    pub tokens: Vec<u32>,
    pub segments: Vec<u8>,
    /// (position, original token) pairs to predict.
    pub mlm_targets: Vec<(usize, u32)>,
    /// 0 = original order, 1 = swapped; None = no sentence-order example.
    pub sop_label: Option<u8>,
}

pub struct BatchLoss {
    pub loss: DiffArray,
    pub mlm_loss: f64,
    pub sop_loss: f64,
    pub masked_positions: usize,
    pub sop_pairs: usize,
}

/// Masked-token cross-entropy plus sentence-order cross-entropy (unit
/// weights). The MLM term averages over every masked position in the batch.
pub fn batch_loss(
    params: &ModelParams,
    batch: &[TrainSequence],
    tape: &mut Tape,
    mut dropout_rng: Option<&mut CounterRng>,
) -> Result<BatchLoss> {
    let inputs: Vec<SequenceInput> = batch
        .iter()
        .map(|s| SequenceInput::new(s.tokens.clone(), s.segments.clone()))
        .collect();
    let hidden = encode_batch(params, &inputs, tape, dropout_rng.as_deref_mut())?;

    let mut mlm_rows = Vec::new();
    let mut mlm_targets = Vec::new();
    for (b, seq) in batch.iter().enumerate() {
        for &(pos, target) in &seq.mlm_targets {
            if pos >= seq.tokens.len() {
                return Err(Error::InvalidArgument(format!(
                    "mlm target position {} out of bounds (sequence length {})",
                    pos,
                    seq.tokens.len()
                )));
            }
            mlm_rows.push(hidden.row(b, pos));
            mlm_targets.push(target as usize);
        }
    }
    if mlm_rows.is_empty() {
        return Err(Error::InvalidArgument(
            "batch contains no masked positions".into(),
        ));
    }

    let logits = mlm_logits_at(params, &hidden.states, &mlm_rows, tape)?;
    let mlm_ce = tape.apply(
        Primitive::CrossEntropyAtPositions { targets: Arc::from(mlm_targets) },
        &[&logits],
    )?;

    let mut sop_rows = Vec::new();
    let mut sop_labels = Vec::new();
    for (b, seq) in batch.iter().enumerate() {
        if let Some(label) = seq.sop_label {
            sop_rows.push(hidden.row(b, 0));
            sop_labels.push(label as usize);
        }
    }

    let (loss, mlm_val, sop_val, sop_pairs) = if sop_rows.is_empty() {
        (mlm_ce.clone(), mlm_ce.item(), 0.0, 0)
    } else {
        let n_pairs = sop_rows.len();
        let sop_logits = pooled_logits(params, &hidden.states, &sop_rows, &params.sop_w, &params.sop_b, tape)?;
        let sop_ce = tape.apply(
            Primitive::CrossEntropyAtPositions { targets: Arc::from(sop_labels) },
            &[&sop_logits],
        )?;
        let total = tape.apply(Primitive::Add, &[&mlm_ce, &sop_ce])?;
        (total, mlm_ce.item(), sop_ce.item(), n_pairs)
    };

    Ok(BatchLoss {
        loss,
        mlm_loss: mlm_val,
        sop_loss: sop_val,
        masked_positions: mlm_rows.len(),
        sop_pairs,
    })
}
