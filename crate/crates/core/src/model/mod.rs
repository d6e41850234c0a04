//! Miniature bidirectional transformer encoder with a masked-token prediction
//! head and a sentence-order-prediction head.
//!
//! The architecture is the original post-layer-norm encoder family: learned
//! absolute position embeddings, embedding layer norm, per-layer multi-head
//! attention and GELU feed-forward blocks with residual connections, an MLM
//! head (dense + GELU + layer norm + output projection tied to the token
//! embedding by default), and a pooled first-position head for sentence-order
//! prediction.

mod encoder;
#[cfg(test)]
mod tests;

pub use encoder::{
    batch_loss, cloze_eval, cloze_log_prob, cloze_logits, cloze_rank, encode, encode_batch,
    pooled_logits, BatchLoss, ClozeEval, Hidden, SequenceInput, TrainSequence,
};

use serde::{Deserialize, Serialize};

use crate::diff::DiffArray;
use crate::error::{Error, Result};
use crate::rng::CounterRng;

/// Number of reserved special tokens ([PAD], [MASK], [CLS], [SEP]).
pub const SPECIAL_TOKEN_COUNT: usize = 4;
/// Token id used to pad sequences to a common length.
pub const PAD_TOKEN: u32 = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub feed_forward: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub tie_embeddings: bool,
    pub dropout: f64,
    pub init_std: f64,
    pub layer_norm_eps: f64,
}

impl ModelConfig {
    /// Desk-scale default: trains in minutes on a CPU.
    pub fn desk(vocab_size: usize) -> Self {
        ModelConfig {
            layers: 2,
            heads: 4,
            hidden: 128,
            feed_forward: 512,
            vocab_size,
            max_seq_len: 32,
            tie_embeddings: true,
            dropout: 0.1,
            init_std: 0.02,
            layer_norm_eps: 1e-12,
        }
    }

    /// Full-scale reference configuration (12 layers, 12 heads, hidden 768).
    /// Kept for comparison; this crate is not meant to train it.
    pub fn full_scale() -> Self {
        ModelConfig {
            layers: 12,
            heads: 12,
            hidden: 768,
            feed_forward: 3072,
            vocab_size: 30_522,
            max_seq_len: 128,
            tie_embeddings: true,
            dropout: 0.1,
            init_std: 0.02,
            layer_norm_eps: 1e-12,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.heads == 0 || self.hidden == 0 || self.feed_forward == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::Config(format!(
                "hidden size {} not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if self.vocab_size < SPECIAL_TOKEN_COUNT {
            return Err(Error::Config(format!(
                "vocab size {} smaller than the {} special tokens",
                self.vocab_size, SPECIAL_TOKEN_COUNT
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0,1)", self.dropout)));
        }
        if self.layer_norm_eps <= 0.0 {
            return Err(Error::Config("layer_norm_eps must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LayerParams {
    pub attn_query_w: DiffArray,
    pub attn_query_b: DiffArray,
    pub attn_key_w: DiffArray,
    pub attn_key_b: DiffArray,
    pub attn_value_w: DiffArray,
    pub attn_value_b: DiffArray,
    pub attn_output_w: DiffArray,
    pub attn_output_b: DiffArray,
    pub attn_norm_gain: DiffArray,
    pub attn_norm_bias: DiffArray,
    pub ff_inner_w: DiffArray,
    pub ff_inner_b: DiffArray,
    pub ff_outer_w: DiffArray,
    pub ff_outer_b: DiffArray,
    pub ff_norm_gain: DiffArray,
    pub ff_norm_bias: DiffArray,
}

/// All trainable arrays of the model.
///
/// `visit` walks the parameters in a fixed canonical order; the optimizer and
/// the checkpoint format both rely on that order being stable.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub token_embedding: DiffArray,
    pub position_embedding: DiffArray,
    pub segment_embedding: DiffArray,
    pub embed_norm_gain: DiffArray,
    pub embed_norm_bias: DiffArray,
    pub layers: Vec<LayerParams>,
    pub mlm_transform_w: DiffArray,
    pub mlm_transform_b: DiffArray,
    pub mlm_norm_gain: DiffArray,
    pub mlm_norm_bias: DiffArray,
    /// Output projection, present only when embeddings are untied.
    pub mlm_output_w: Option<DiffArray>,
    pub mlm_output_bias: DiffArray,
    pub pooler_w: DiffArray,
    pub pooler_b: DiffArray,
    pub sop_w: DiffArray,
    pub sop_b: DiffArray,
}

impl ModelParams {
    pub fn visit(&self, f: &mut dyn FnMut(&str, &DiffArray)) {
        f("token_embedding", &self.token_embedding);
        f("position_embedding", &self.position_embedding);
        f("segment_embedding", &self.segment_embedding);
        f("embed_norm_gain", &self.embed_norm_gain);
        f("embed_norm_bias", &self.embed_norm_bias);
        for (i, layer) in self.layers.iter().enumerate() {
            let mut each = |suffix: &str, a: &DiffArray| f(&format!("layer{i}.{suffix}"), a);
            each("attn_query_w", &layer.attn_query_w);
            each("attn_query_b", &layer.attn_query_b);
            each("attn_key_w", &layer.attn_key_w);
            each("attn_key_b", &layer.attn_key_b);
            each("attn_value_w", &layer.attn_value_w);
            each("attn_value_b", &layer.attn_value_b);
            each("attn_output_w", &layer.attn_output_w);
            each("attn_output_b", &layer.attn_output_b);
            each("attn_norm_gain", &layer.attn_norm_gain);
            each("attn_norm_bias", &layer.attn_norm_bias);
            each("ff_inner_w", &layer.ff_inner_w);
            each("ff_inner_b", &layer.ff_inner_b);
            each("ff_outer_w", &layer.ff_outer_w);
            each("ff_outer_b", &layer.ff_outer_b);
            each("ff_norm_gain", &layer.ff_norm_gain);
            each("ff_norm_bias", &layer.ff_norm_bias);
        }
        f("mlm_transform_w", &self.mlm_transform_w);
        f("mlm_transform_b", &self.mlm_transform_b);
        f("mlm_norm_gain", &self.mlm_norm_gain);
        f("mlm_norm_bias", &self.mlm_norm_bias);
        if let Some(w) = &self.mlm_output_w {
            f("mlm_output_w", w);
        }
        f("mlm_output_bias", &self.mlm_output_bias);
        f("pooler_w", &self.pooler_w);
        f("pooler_b", &self.pooler_b);
        f("sop_w", &self.sop_w);
        f("sop_b", &self.sop_b);
    }

    /// Rebuild the parameter set by transforming every array. `f` is invoked
    /// in exactly the order `visit` walks.
    pub fn map(&self, f: &mut dyn FnMut(&str, &DiffArray) -> DiffArray) -> ModelParams {
        let token_embedding = f("token_embedding", &self.token_embedding);
        let position_embedding = f("position_embedding", &self.position_embedding);
        let segment_embedding = f("segment_embedding", &self.segment_embedding);
        let embed_norm_gain = f("embed_norm_gain", &self.embed_norm_gain);
        let embed_norm_bias = f("embed_norm_bias", &self.embed_norm_bias);
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut each = |suffix: &str, a: &DiffArray| f(&format!("layer{i}.{suffix}"), a);
            layers.push(LayerParams {
                attn_query_w: each("attn_query_w", &layer.attn_query_w),
                attn_query_b: each("attn_query_b", &layer.attn_query_b),
                attn_key_w: each("attn_key_w", &layer.attn_key_w),
                attn_key_b: each("attn_key_b", &layer.attn_key_b),
                attn_value_w: each("attn_value_w", &layer.attn_value_w),
                attn_value_b: each("attn_value_b", &layer.attn_value_b),
                attn_output_w: each("attn_output_w", &layer.attn_output_w),
                attn_output_b: each("attn_output_b", &layer.attn_output_b),
                attn_norm_gain: each("attn_norm_gain", &layer.attn_norm_gain),
                attn_norm_bias: each("attn_norm_bias", &layer.attn_norm_bias),
                ff_inner_w: each("ff_inner_w", &layer.ff_inner_w),
                ff_inner_b: each("ff_inner_b", &layer.ff_inner_b),
                ff_outer_w: each("ff_outer_w", &layer.ff_outer_w),
                ff_outer_b: each("ff_outer_b", &layer.ff_outer_b),
                ff_norm_gain: each("ff_norm_gain", &layer.ff_norm_gain),
                ff_norm_bias: each("ff_norm_bias", &layer.ff_norm_bias),
            });
        }
        let mlm_transform_w = f("mlm_transform_w", &self.mlm_transform_w);
        let mlm_transform_b = f("mlm_transform_b", &self.mlm_transform_b);
        let mlm_norm_gain = f("mlm_norm_gain", &self.mlm_norm_gain);
        let mlm_norm_bias = f("mlm_norm_bias", &self.mlm_norm_bias);
        let mlm_output_w = self.mlm_output_w.as_ref().map(|w| f("mlm_output_w", w));
        let mlm_output_bias = f("mlm_output_bias", &self.mlm_output_bias);
        let pooler_w = f("pooler_w", &self.pooler_w);
        let pooler_b = f("pooler_b", &self.pooler_b);
        let sop_w = f("sop_w", &self.sop_w);
        let sop_b = f("sop_b", &self.sop_b);
        ModelParams {
            config: self.config.clone(),
            token_embedding,
            position_embedding,
            segment_embedding,
            embed_norm_gain,
            embed_norm_bias,
            layers,
            mlm_transform_w,
            mlm_transform_b,
            mlm_norm_gain,
            mlm_norm_bias,
            mlm_output_w,
            mlm_output_bias,
            pooler_w,
            pooler_b,
            sop_w,
            sop_b,
        }
    }

    /// Tracked view of every parameter on `tape`, in canonical order.
    pub fn tracked(&self, tape: &mut crate::diff::Tape) -> ModelParams {
        self.map(&mut |_, a| tape.leaf(a))
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit(&mut |name, _| names.push(name.to_string()));
        names
    }

    pub fn num_values(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, a| n += a.len());
        n
    }

    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |_, a| ok &= a.is_finite());
        ok
    }
}

/// Draw initial parameters: weights from N(0, init_std^2), biases zero,
/// layer-norm gains one. Deterministic per seed.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = CounterRng::new(seed).fork_named("init");
    let d = config.hidden;
    let ff = config.feed_forward;
    let v = config.vocab_size;

    let mut normal = |shape: &[usize]| {
        let n: usize = shape.iter().product();
        let values: Vec<f64> = (0..n).map(|_| rng.next_normal() * config.init_std).collect();
        DiffArray::from_vec(shape.to_vec(), values).expect("shape/value count agree")
    };

    let mut layers = Vec::with_capacity(config.layers);
    for _ in 0..config.layers {
        layers.push(LayerParams {
            attn_query_w: normal(&[d, d]),
            attn_query_b: DiffArray::zeros(&[d]),
            attn_key_w: normal(&[d, d]),
            attn_key_b: DiffArray::zeros(&[d]),
            attn_value_w: normal(&[d, d]),
            attn_value_b: DiffArray::zeros(&[d]),
            attn_output_w: normal(&[d, d]),
            attn_output_b: DiffArray::zeros(&[d]),
            attn_norm_gain: DiffArray::filled(&[d], 1.0),
            attn_norm_bias: DiffArray::zeros(&[d]),
            ff_inner_w: normal(&[d, ff]),
            ff_inner_b: DiffArray::zeros(&[ff]),
            ff_outer_w: normal(&[ff, d]),
            ff_outer_b: DiffArray::zeros(&[d]),
            ff_norm_gain: DiffArray::filled(&[d], 1.0),
            ff_norm_bias: DiffArray::zeros(&[d]),
        });
    }

    Ok(ModelParams {
        token_embedding: normal(&[v, d]),
        position_embedding: normal(&[config.max_seq_len, d]),
        segment_embedding: normal(&[2, d]),
        embed_norm_gain: DiffArray::filled(&[d], 1.0),
        embed_norm_bias: DiffArray::zeros(&[d]),
        layers,
        mlm_transform_w: normal(&[d, d]),
        mlm_transform_b: DiffArray::zeros(&[d]),
        mlm_norm_gain: DiffArray::filled(&[d], 1.0),
        mlm_norm_bias: DiffArray::zeros(&[d]),
        mlm_output_w: if config.tie_embeddings { None } else { Some(normal(&[d, v])) },
        mlm_output_bias: DiffArray::zeros(&[v]),
        pooler_w: normal(&[d, d]),
        pooler_b: DiffArray::zeros(&[d]),
        sop_w: normal(&[d, 2]),
        sop_b: DiffArray::zeros(&[2]),
        config: config.clone(),
    })
}

/// A cloze probe: one masked position with a correct and a control target.
#[derive(Debug, Clone, PartialEq)]
pub struct ClozeItem {
    pub tokens: Vec<u32>,
    pub mask_position: usize,
    pub correct: u32,
    pub control: u32,
    /// Human-readable template, e.g. "a robin can ___ ."
    pub template: String,
}

impl ClozeItem {
    pub fn validate(&self, mask_token: u32) -> Result<()> {
        let mask_count = self.tokens.iter().filter(|&&t| t == mask_token).count();
        if mask_count != 1 {
            return Err(Error::InvalidArgument(format!(
                "cloze item must contain exactly one mask token, found {mask_count} in `{}`",
                self.template
            )));
        }
        if self.mask_position >= self.tokens.len() || self.tokens[self.mask_position] != mask_token {
            return Err(Error::InvalidArgument(format!(
                "mask position {} does not point at the mask token in `{}`",
                self.mask_position, self.template
            )));
        }
        if self.correct == self.control {
            return Err(Error::InvalidArgument(format!(
                "correct and control targets coincide ({}) in `{}`",
                self.correct, self.template
            )));
        }
        Ok(())
    }
}
