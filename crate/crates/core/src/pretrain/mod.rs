//! Pre-training data pipeline: whole-word masking, sentence-order pairing,
//! and minibatch assembly over the closed-vocabulary corpus.

mod train;
#[cfg(test)]
mod tests;

pub use train::{
    checkpoint_grid, read_loss_log, train, write_loss_log, LossRow, TrainOutcome, TrainRun,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TrainSequence;
use crate::rng::CounterRng;
use crate::world::vocab::{CLS, SEP};
use crate::world::Vocab;

/// Whole-word masking policy. In the closed vocabulary every word is one
/// token, so selecting words and selecting tokens coincide.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskingPolicy {
    pub mask_rate: f64,
    /// Of the selected words: replaced by [MASK] / replaced by a random
    /// content token / kept unchanged.
    pub action_mask: f64,
    pub action_random: f64,
    pub action_keep: f64,
}

impl Default for MaskingPolicy {
    fn default() -> Self {
        MaskingPolicy { mask_rate: 0.15, action_mask: 0.8, action_random: 0.1, action_keep: 0.1 }
    }
}

impl MaskingPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mask_rate) {
            return Err(Error::Config(format!("mask rate {} outside [0,1]", self.mask_rate)));
        }
        let parts = [self.action_mask, self.action_random, self.action_keep];
        if parts.iter().any(|p| *p < 0.0) {
            return Err(Error::Config("action split must be non-negative".into()));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("action split sums to {sum}, expected 1")));
        }
        Ok(())
    }
}

/// Apply the masking policy to a batch of token sequences. Returns the masked
/// sequences and, per sequence, the (position, original token) target map.
///
/// Every non-special word is selected independently at the mask rate. A batch
/// that ends up with zero selected words is re-drawn; if re-drawing cannot
/// help (rate 0), one eligible word is forced as a keep-action target, so the
/// tokens stay unchanged but the loss is defined.
pub fn mask_batch(
    sequences: &[Vec<u32>],
    policy: &MaskingPolicy,
    vocab: &Vocab,
    rng: &mut CounterRng,
) -> Result<(Vec<Vec<u32>>, Vec<Vec<(usize, u32)>>)> {
    policy.validate()?;
    if sequences.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let content_span = vocab.content_ids();
    let n_content = content_span.end - content_span.start;
    if n_content == 0 {
        return Err(Error::InvalidArgument("vocabulary has no content tokens".into()));
    }

    const REDRAW_ATTEMPTS: usize = 16;
    for _ in 0..REDRAW_ATTEMPTS {
        let mut masked = sequences.to_vec();
        let mut targets: Vec<Vec<(usize, u32)>> = vec![Vec::new(); sequences.len()];
        let mut any = false;
        for (s, seq) in sequences.iter().enumerate() {
            for (pos, &token) in seq.iter().enumerate() {
                if vocab.is_special(token) {
                    continue;
                }
                if !rng.gen_bool(policy.mask_rate) {
                    continue;
                }
                any = true;
                targets[s].push((pos, token));
                let action = rng.next_f64();
                if action < policy.action_mask {
                    masked[s][pos] = crate::world::vocab::MASK;
                } else if action < policy.action_mask + policy.action_random {
                    masked[s][pos] = content_span.start + rng.gen_range(n_content as usize) as u32;
                }
                // else: keep the original token
            }
        }
        if any {
            return Ok((masked, targets));
        }
        if policy.mask_rate == 0.0 {
            break;
        }
    }

    // forced fallback: one eligible word as a keep-action target
    let eligible: Vec<(usize, usize)> = sequences
        .iter()
        .enumerate()
        .flat_map(|(s, seq)| {
            seq.iter()
                .enumerate()
                .filter(|(_, t)| !vocab.is_special(**t))
                .map(move |(p, _)| (s, p))
        })
        .collect();
    if eligible.is_empty() {
        return Err(Error::InvalidArgument(
            "no maskable word in the batch (all tokens special)".into(),
        ));
    }
    let (s, p) = eligible[rng.gen_range(eligible.len())];
    let mut targets: Vec<Vec<(usize, u32)>> = vec![Vec::new(); sequences.len()];
    targets[s].push((p, sequences[s][p]));
    Ok((sequences.to_vec(), targets))
}

/// One sentence-order example: two adjacent sentences, possibly swapped.
#[derive(Debug, Clone, PartialEq)]
pub struct SopPair {
    pub first: String,
    pub second: String,
    /// 0 = original order, 1 = swapped.
    pub label: u8,
}

pub(crate) fn make_sop_pairs_with_prob(
    document: &[String],
    rng: &mut CounterRng,
    swap_probability: f64,
) -> Vec<SopPair> {
    if document.len() < 2 {
        return Vec::new();
    }
    document
        .windows(2)
        .map(|w| {
            if rng.gen_bool(swap_probability) {
                SopPair { first: w[1].clone(), second: w[0].clone(), label: 1 }
            } else {
                SopPair { first: w[0].clone(), second: w[1].clone(), label: 0 }
            }
        })
        .collect()
}

/// Adjacent sentence pairs of a document, each swapped with probability 1/2.
/// Single-sentence documents yield no pairs; callers count and report them.
pub fn make_sop_pairs(document: &[String], rng: &mut CounterRng) -> Vec<SopPair> {
    make_sop_pairs_with_prob(document, rng, 0.5)
}

/// Draws training minibatches from a tokenized corpus.
pub struct BatchAssembler {
    /// Tokenized sentences per document.
    documents: Vec<Vec<Vec<u32>>>,
    /// Documents with at least two sentences.
    eligible: Vec<usize>,
    pub skipped_single_sentence_docs: usize,
    seq_len: usize,
    sop_enabled: bool,
    policy: MaskingPolicy,
}

impl BatchAssembler {
    pub fn new(
        documents: &[Vec<String>],
        vocab: &Vocab,
        seq_len: usize,
        policy: MaskingPolicy,
        sop_enabled: bool,
    ) -> Result<Self> {
        policy.validate()?;
        if seq_len < 5 {
            return Err(Error::Config(format!("sequence length {seq_len} too short for a pair")));
        }
        let mut tokenized = Vec::with_capacity(documents.len());
        for doc in documents {
            let mut sents = Vec::with_capacity(doc.len());
            for sentence in doc {
                sents.push(vocab.tokenize(sentence)?);
            }
            tokenized.push(sents);
        }
        let eligible: Vec<usize> = tokenized
            .iter()
            .enumerate()
            .filter(|(_, d)| d.len() >= 2)
            .map(|(i, _)| i)
            .collect();
        if eligible.is_empty() {
            return Err(Error::InvalidArgument(
                "corpus has no document with two or more sentences".into(),
            ));
        }
        let skipped = tokenized.len() - eligible.len();
        Ok(BatchAssembler {
            documents: tokenized,
            eligible,
            skipped_single_sentence_docs: skipped,
            seq_len,
            sop_enabled,
            policy,
        })
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    /// Pack a sentence pair as [CLS] A [SEP] B [SEP] with segment ids 0/1,
    /// truncating the tails if the pair overflows the sequence length.
    fn pack_pair(&self, a: &[u32], b: &[u32]) -> (Vec<u32>, Vec<u8>, u8) {
        let budget = self.seq_len - 3;
        let (mut a_len, mut b_len) = (a.len(), b.len());
        while a_len + b_len > budget {
            if b_len >= a_len && b_len > 1 {
                b_len -= 1;
            } else if a_len > 1 {
                a_len -= 1;
            } else {
                b_len -= 1;
            }
        }
        let mut tokens = Vec::with_capacity(a_len + b_len + 3);
        let mut segments = Vec::with_capacity(a_len + b_len + 3);
        tokens.push(CLS);
        segments.push(0);
        tokens.extend_from_slice(&a[..a_len]);
        segments.extend(std::iter::repeat(0).take(a_len));
        tokens.push(SEP);
        segments.push(0);
        tokens.extend_from_slice(&b[..b_len]);
        segments.extend(std::iter::repeat(1).take(b_len));
        tokens.push(SEP);
        segments.push(1);
        (tokens, segments, (a_len + b_len < a.len() + b.len()) as u8)
    }

    /// Assemble one masked minibatch. Deterministic per rng state.
    pub fn assemble(
        &self,
        batch_size: usize,
        vocab: &Vocab,
        rng: &mut CounterRng,
    ) -> Result<Vec<TrainSequence>> {
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch size 0".into()));
        }
        let mut raw_tokens = Vec::with_capacity(batch_size);
        let mut segments = Vec::with_capacity(batch_size);
        let mut labels = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let doc = &self.documents[self.eligible[rng.gen_range(self.eligible.len())]];
            let pair_idx = rng.gen_range(doc.len() - 1);
            let swap = rng.gen_bool(0.5);
            let (first, second) = if swap {
                (&doc[pair_idx + 1], &doc[pair_idx])
            } else {
                (&doc[pair_idx], &doc[pair_idx + 1])
            };
            let (tokens, segs, _) = self.pack_pair(first, second);
            raw_tokens.push(tokens);
            segments.push(segs);
            labels.push(swap as u8);
        }

        let (masked, targets) = mask_batch(&raw_tokens, &self.policy, vocab, rng)?;
        Ok(masked
            .into_iter()
            .zip(segments)
            .zip(targets)
            .zip(labels)
            .map(|(((tokens, segments), mlm_targets), label)| TrainSequence {
                tokens,
                segments,
                mlm_targets,
                sop_label: self.sop_enabled.then_some(label),
            })
            .collect())
    }
}
