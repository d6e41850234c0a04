//! Premise-injection interventions.
//!
//! At a checkpoint θ_i: replace slots of an ordinary minibatch with premise
//! sentences masked at their predicate, apply exactly one optimizer update to
//! a fresh copy (producing θ_i^x), and measure every supported hypothesis
//! before and after. Interventions never touch the checkpoint itself, on disk
//! or in memory, and every minibatch starts again from θ_i unless cumulative
//! mode is explicitly requested.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diff::Tape;
use crate::error::{Error, Result};
use crate::model::{batch_loss, cloze_eval, ClozeEval, ClozeItem, ModelParams, TrainSequence};
use crate::optim::{adam_step, load_checkpoint, AdamState, Checkpoint};
use crate::pretrain::{BatchAssembler, MaskingPolicy};
use crate::probeset::InferenceExample;
use crate::rng::CounterRng;
use crate::world::Vocab;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PremiseKind {
    SuperStatement,
    ClassRelation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HypothesisKind {
    Super,
    Sub,
    Relation,
}

impl HypothesisKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            HypothesisKind::Super => "super",
            HypothesisKind::Sub => "sub",
            HypothesisKind::Relation => "relation",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "super" => Ok(HypothesisKind::Super),
            "sub" => Ok(HypothesisKind::Sub),
            "relation" => Ok(HypothesisKind::Relation),
            other => Err(Error::InvalidArgument(format!("unknown hypothesis type `{other}`"))),
        }
    }

    pub fn item<'a>(&self, example: &'a InferenceExample) -> &'a ClozeItem {
        match self {
            HypothesisKind::Super => &example.super_statement,
            HypothesisKind::Sub => &example.sub_statement,
            HypothesisKind::Relation => &example.class_relation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TargetKind {
    Correct,
    Control,
}

impl TargetKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TargetKind::Correct => "correct",
            TargetKind::Control => "control",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "correct" => Ok(TargetKind::Correct),
            "control" => Ok(TargetKind::Control),
            other => Err(Error::InvalidArgument(format!("unknown target kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionConfig {
    /// Premises injected per minibatch (K).
    pub premises_per_batch: usize,
    /// Minibatches each example is measured in, per checkpoint (R).
    pub repetitions: usize,
    /// Constant intervention learning rate (decoupled from the schedule).
    /// Zero is allowed for neutrality checks.
    pub lr: f64,
    pub premise: PremiseKind,
    pub hypotheses: Vec<HypothesisKind>,
    pub batch_size: usize,
    pub seq_len: usize,
    /// When set, updates within one checkpoint accumulate instead of
    /// starting from a fresh copy per minibatch. Off by default; priors are
    /// always measured against the untouched checkpoint.
    pub cumulative: bool,
    pub masking: MaskingPolicy,
    pub seed: u64,
}

impl InterventionConfig {
    pub fn desk(seed: u64) -> Self {
        InterventionConfig {
            premises_per_batch: 4,
            repetitions: 5,
            lr: 1e-4,
            premise: PremiseKind::SuperStatement,
            hypotheses: vec![HypothesisKind::Super, HypothesisKind::Sub, HypothesisKind::Relation],
            batch_size: 32,
            seq_len: 20,
            cumulative: false,
            masking: MaskingPolicy::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.premises_per_batch == 0 || self.premises_per_batch > self.batch_size {
            return Err(Error::Config(format!(
                "need 1 <= premises per batch ({}) <= batch size ({})",
                self.premises_per_batch, self.batch_size
            )));
        }
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        if self.lr < 0.0 {
            return Err(Error::Config("intervention learning rate must be >= 0".into()));
        }
        if self.hypotheses.is_empty() {
            return Err(Error::Config("at least one hypothesis type required".into()));
        }
        self.masking.validate()
    }

    fn premise_item<'a>(&self, example: &'a InferenceExample) -> &'a ClozeItem {
        match self.premise {
            PremiseKind::SuperStatement => &example.super_statement,
            PremiseKind::ClassRelation => &example.class_relation,
        }
    }
}

/// One (checkpoint, example, minibatch, hypothesis, target) measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct InterventionRecord {
    pub checkpoint_step: u64,
    pub example_id: u32,
    pub minibatch_id: u32,
    pub hypothesis: HypothesisKind,
    pub target: TargetKind,
    pub prior_logprob: f64,
    pub posterior_logprob: f64,
    pub pmi: f64,
    pub prior_rank: u32,
    pub posterior_rank: u32,
}

/// Replace minibatch slots with premise sequences. Slot positions are a
/// seeded shuffle; the first `premises.len()` shuffled slots are replaced.
/// Injected sequences are masked only at their premise's predicate position,
/// with the correct token as the sole prediction target; the remaining slots
/// keep whatever masking they already carry.
pub fn inject(
    batch: &mut [TrainSequence],
    premises: &[&ClozeItem],
    seq_len: usize,
    rng: &mut CounterRng,
) -> Result<Vec<usize>> {
    if premises.len() > batch.len() {
        return Err(Error::InvalidArgument(format!(
            "{} premises for a batch of {}",
            premises.len(),
            batch.len()
        )));
    }
    for item in premises {
        if item.tokens.len() > seq_len {
            return Err(Error::InvalidArgument(format!(
                "premise `{}` longer than the sequence length {}",
                item.template, seq_len
            )));
        }
    }
    let mut slots: Vec<usize> = (0..batch.len()).collect();
    rng.shuffle(&mut slots);
    let chosen: Vec<usize> = slots.into_iter().take(premises.len()).collect();
    for (&slot, item) in chosen.iter().zip(premises) {
        batch[slot] = TrainSequence {
            tokens: item.tokens.clone(),
            segments: vec![0; item.tokens.len()],
            mlm_targets: vec![(item.mask_position, item.correct)],
            sop_label: None,
        };
    }
    Ok(chosen)
}

/// One optimizer update on a deep copy of the checkpoint. The checkpoint is
/// untouched; the copy starts from the saved optimizer moments and advances
/// them exactly once.
pub fn intervention_step(
    checkpoint: &Checkpoint,
    batch: &[TrainSequence],
    lr: f64,
    dropout_rng: &mut CounterRng,
) -> Result<(ModelParams, AdamState)> {
    let mut adam = checkpoint.adam.clone();
    let mut tape = Tape::new();
    let tracked = checkpoint.params.tracked(&mut tape);
    let out = batch_loss(&tracked, batch, &mut tape, Some(dropout_rng))?;
    if !out.loss.item().is_finite() {
        return Err(Error::NonFiniteLoss { step: checkpoint.step });
    }
    let grads = tape.backward(&out.loss)?;
    let updated = adam_step(&checkpoint.params, &tracked, &grads, &mut adam, lr)?;
    Ok((updated, adam))
}

/// Measure one hypothesis under (θ_i, θ_i^x): both targets, both ranks,
/// pmi = posterior - prior computed exactly once.
pub fn measure(
    prior_params: &ModelParams,
    posterior_params: &ModelParams,
    example: &InferenceExample,
    hypothesis: HypothesisKind,
) -> Result<(InterventionRecord, InterventionRecord)> {
    let item = hypothesis.item(example);
    let prior = cloze_eval(prior_params, item)?;
    let posterior = cloze_eval(posterior_params, item)?;
    records_from_evals(&prior, &posterior, example, hypothesis)
}

fn records_from_evals(
    prior: &ClozeEval,
    posterior: &ClozeEval,
    example: &InferenceExample,
    hypothesis: HypothesisKind,
) -> Result<(InterventionRecord, InterventionRecord)> {
    let item = hypothesis.item(example);
    let build = |target_kind: TargetKind, token: u32| -> Result<InterventionRecord> {
        let prior_logprob = prior.log_prob(token)?;
        let posterior_logprob = posterior.log_prob(token)?;
        Ok(InterventionRecord {
            checkpoint_step: 0,
            example_id: example.id,
            minibatch_id: 0,
            hypothesis,
            target: target_kind,
            prior_logprob,
            posterior_logprob,
            pmi: posterior_logprob - prior_logprob,
            prior_rank: prior.rank(token)?,
            posterior_rank: posterior.rank(token)?,
        })
    };
    Ok((build(TargetKind::Correct, item.correct)?, build(TargetKind::Control, item.control)?))
}

/// The per-checkpoint assignment: minibatch id -> canonical example indices,
/// plus padding slots used to fill the final chunk of a round.
#[derive(Debug, Clone)]
pub struct CampaignPlan {
    /// Canonical (recorded) example indices per minibatch.
    pub minibatches: Vec<Vec<usize>>,
    /// Padding example indices per minibatch (injected but not recorded).
    pub padding: Vec<Vec<usize>>,
    pub padded_slots: usize,
}

impl CampaignPlan {
    /// R rounds; each round shuffles the examples and chunks them into
    /// groups of K. A short final chunk is padded with other examples, which
    /// are injected but never measured, so the bookkeeping invariant (every
    /// example in exactly R distinct minibatches) holds regardless of
    /// divisibility.
    pub fn build(n_examples: usize, k: usize, rounds: usize, rng: &mut CounterRng) -> Result<Self> {
        if n_examples == 0 {
            return Err(Error::InvalidArgument("empty probe set".into()));
        }
        if k > n_examples {
            return Err(Error::Config(format!(
                "premises per batch ({k}) exceeds the probe-set size ({n_examples})"
            )));
        }
        let mut minibatches = Vec::new();
        let mut padding = Vec::new();
        let mut padded_slots = 0;
        for _ in 0..rounds {
            let mut order: Vec<usize> = (0..n_examples).collect();
            rng.shuffle(&mut order);
            for chunk in order.chunks(k) {
                let members = chunk.to_vec();
                let mut pads = Vec::new();
                if members.len() < k {
                    let mut candidates: Vec<usize> =
                        (0..n_examples).filter(|i| !members.contains(i)).collect();
                    rng.shuffle(&mut candidates);
                    pads.extend(candidates.into_iter().take(k - members.len()));
                    padded_slots += pads.len();
                }
                minibatches.push(members);
                padding.push(pads);
            }
        }
        Ok(CampaignPlan { minibatches, padding, padded_slots })
    }
}

#[derive(Debug)]
pub struct CampaignReport {
    pub records: Vec<InterventionRecord>,
    pub padded_slots: usize,
    pub minibatches_per_checkpoint: usize,
}

/// Run the full intervention campaign over a checkpoint series.
///
/// Per checkpoint: priors are evaluated once per (example, hypothesis); a
/// seeded plan places each example's premise into exactly R distinct
/// minibatches; every minibatch intervention starts from a fresh copy of the
/// checkpoint (unless `cumulative`); records stream out ordered by
/// (checkpoint, minibatch, example, hypothesis, target). The per-checkpoint
/// randomness is derived from (seed, checkpoint step), so results do not
/// depend on the order in which checkpoints are evaluated.
pub fn run_campaign(
    checkpoint_paths: &[PathBuf],
    probeset: &[InferenceExample],
    config: &InterventionConfig,
    documents: &[Vec<String>],
    vocab: &Vocab,
) -> Result<CampaignReport> {
    config.validate()?;
    let assembler = BatchAssembler::new(documents, vocab, config.seq_len, config.masking, true)?;
    let root_rng = CounterRng::new(config.seed);

    let mut records = Vec::new();
    let mut padded_slots = 0;
    let mut minibatches_per_checkpoint = 0;

    for path in checkpoint_paths {
        if !path.exists() {
            return Err(Error::MissingFile(format!(
                "checkpoint file {} does not exist",
                path.display()
            )));
        }
        let checkpoint = load_checkpoint(path)?;
        let ckpt_rng = root_rng.fork(checkpoint.step);

        let mut plan_rng = ckpt_rng.fork_named("plan");
        let plan = CampaignPlan::build(
            probeset.len(),
            config.premises_per_batch,
            config.repetitions,
            &mut plan_rng,
        )?;
        padded_slots += plan.padded_slots;
        minibatches_per_checkpoint = plan.minibatches.len();

        // prior distributions, one per (example, hypothesis)
        let mut priors: HashMap<(u32, HypothesisKind), ClozeEval> = HashMap::new();
        for example in probeset {
            for &hyp in &config.hypotheses {
                let eval = cloze_eval(&checkpoint.params, hyp.item(example))?;
                priors.insert((example.id, hyp), eval);
            }
        }

        let mut cumulative_state: Option<(ModelParams, AdamState)> = None;
        for (mb, members) in plan.minibatches.iter().enumerate() {
            let minibatch_id = mb as u32;
            let mut mb_rng = ckpt_rng.fork_named("minibatch").fork(minibatch_id as u64);

            let mut batch = assembler.assemble(config.batch_size, vocab, &mut mb_rng)?;
            let premise_items: Vec<&ClozeItem> = members
                .iter()
                .chain(&plan.padding[mb])
                .map(|&idx| config.premise_item(&probeset[idx]))
                .collect();
            inject(&mut batch, &premise_items, config.seq_len, &mut mb_rng)?;

            let mut dropout_rng = mb_rng.fork_named("dropout");
            let posterior_params = if config.cumulative {
                let base = match cumulative_state.take() {
                    Some((params, adam)) => {
                        Checkpoint { step: checkpoint.step, params, adam, rng: checkpoint.rng }
                    }
                    None => checkpoint.clone(),
                };
                let (params, adam) = intervention_step(&base, &batch, config.lr, &mut dropout_rng)?;
                cumulative_state = Some((params.clone(), adam));
                params
            } else {
                let (params, _) =
                    intervention_step(&checkpoint, &batch, config.lr, &mut dropout_rng)?;
                params
            };

            for &member in members {
                let example = &probeset[member];
                for &hyp in &config.hypotheses {
                    let prior = &priors[&(example.id, hyp)];
                    let posterior = cloze_eval(&posterior_params, hyp.item(example))?;
                    let (mut correct, mut control) =
                        records_from_evals(prior, &posterior, example, hyp)?;
                    for record in [&mut correct, &mut control] {
                        record.checkpoint_step = checkpoint.step;
                        record.minibatch_id = minibatch_id;
                    }
                    records.push(correct);
                    records.push(control);
                }
            }
        }
    }

    Ok(CampaignReport { records, padded_slots, minibatches_per_checkpoint })
}

/// Mean reciprocal rank per (checkpoint step, hypothesis, target kind).
#[derive(Debug, Clone, PartialEq)]
pub struct MrrRow {
    pub checkpoint_step: u64,
    pub hypothesis: HypothesisKind,
    pub target: TargetKind,
    pub prior_mrr: f64,
    pub posterior_mrr: f64,
    pub delta_mrr: f64,
    pub n: usize,
}

pub fn aggregate_mrr(records: &[InterventionRecord]) -> Result<Vec<MrrRow>> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no records to aggregate".into()));
    }
    let mut groups: Vec<((u64, HypothesisKind, TargetKind), Vec<&InterventionRecord>)> = Vec::new();
    for record in records {
        let key = (record.checkpoint_step, record.hypothesis, record.target);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, list)) => list.push(record),
            None => groups.push((key, vec![record])),
        }
    }
    Ok(groups
        .into_iter()
        .map(|((checkpoint_step, hypothesis, target), list)| {
            let n = list.len();
            let prior_mrr =
                list.iter().map(|r| 1.0 / r.prior_rank as f64).sum::<f64>() / n as f64;
            let posterior_mrr =
                list.iter().map(|r| 1.0 / r.posterior_rank as f64).sum::<f64>() / n as f64;
            MrrRow {
                checkpoint_step,
                hypothesis,
                target,
                prior_mrr,
                posterior_mrr,
                delta_mrr: posterior_mrr - prior_mrr,
                n,
            }
        })
        .collect())
}

// -- record CSV ---------------------------------------------------------------

pub const RECORD_HEADER: &str = "checkpoint_step,example_id,minibatch_id,hypothesis_type,target_kind,prior_logprob,posterior_logprob,pmi,prior_rank,posterior_rank";

pub fn write_records(records: &[InterventionRecord], path: &Path) -> Result<()> {
    let mut out = String::from(RECORD_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.checkpoint_step,
            r.example_id,
            r.minibatch_id,
            r.hypothesis.as_str(),
            r.target.as_str(),
            r.prior_logprob,
            r.posterior_logprob,
            r.pmi,
            r.prior_rank,
            r.posterior_rank
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<InterventionRecord>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::MissingFile(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == RECORD_HEADER => {}
        other => {
            return Err(Error::MalformedLine {
                line: 1,
                detail: format!("bad records header: {other:?}"),
            })
        }
    }
    let mut records = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        let [step, example, minibatch, hyp, target, prior, posterior, pmi, prior_rank, posterior_rank] =
            parts.as_slice()
        else {
            return Err(Error::MalformedLine { line: line_no, detail: "expected 10 columns".into() });
        };
        let bad = |what: &str, e: &dyn std::fmt::Display| Error::MalformedLine {
            line: line_no,
            detail: format!("bad {what}: {e}"),
        };
        records.push(InterventionRecord {
            checkpoint_step: step.parse().map_err(|e| bad("checkpoint_step", &e))?,
            example_id: example.parse().map_err(|e| bad("example_id", &e))?,
            minibatch_id: minibatch.parse().map_err(|e| bad("minibatch_id", &e))?,
            hypothesis: HypothesisKind::parse(hyp)?,
            target: TargetKind::parse(target)?,
            prior_logprob: prior.parse().map_err(|e| bad("prior_logprob", &e))?,
            posterior_logprob: posterior.parse().map_err(|e| bad("posterior_logprob", &e))?,
            pmi: pmi.parse().map_err(|e| bad("pmi", &e))?,
            prior_rank: prior_rank.parse().map_err(|e| bad("prior_rank", &e))?,
            posterior_rank: posterior_rank.parse().map_err(|e| bad("posterior_rank", &e))?,
        });
    }
    Ok(records)
}
