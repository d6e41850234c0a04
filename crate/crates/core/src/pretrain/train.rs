//! The pre-training loop: scheduled learning rate, Adam updates, and a
//! checkpoint series including the untrained step-0 model.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{BatchAssembler, MaskingPolicy};
use crate::diff::Tape;
use crate::error::{Error, Result};
use crate::model::{batch_loss, init_params, ModelConfig};
use crate::optim::{
    adam_step, checkpoint_file_name, save_checkpoint, AdamHyper, AdamState, Checkpoint, Schedule,
};
use crate::rng::CounterRng;
use crate::world::Vocab;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub model: ModelConfig,
    pub schedule: Schedule,
    pub adam: AdamHyper,
    pub masking: MaskingPolicy,
    /// Number of optimizer steps to run (may stop before the schedule ends).
    pub steps: u64,
    pub batch_size: usize,
    pub seq_len: usize,
    /// Steps at which to save a checkpoint; step 0 is always included.
    pub checkpoint_steps: Vec<u64>,
    pub sop_enabled: bool,
    pub seed: u64,
}

impl TrainRun {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.schedule.validate()?;
        self.masking.validate()?;
        if self.steps > self.schedule.total_steps {
            return Err(Error::Config(format!(
                "{} training steps exceed the {}-step schedule",
                self.steps, self.schedule.total_steps
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.seq_len > self.model.max_seq_len {
            return Err(Error::Config(format!(
                "sequence length {} exceeds model maximum {}",
                self.seq_len, self.model.max_seq_len
            )));
        }
        let mut prev: Option<u64> = None;
        for &s in &self.checkpoint_steps {
            if let Some(p) = prev {
                if s <= p {
                    return Err(Error::Config("checkpoint steps must be strictly increasing".into()));
                }
            }
            if s > self.steps {
                return Err(Error::Config(format!(
                    "checkpoint step {s} beyond the end of training ({})",
                    self.steps
                )));
            }
            prev = Some(s);
        }
        Ok(())
    }
}

/// Geometric-ish checkpoint grid: step 0, then `count - 1` log-spaced steps
/// from roughly total/40 up to `total`.
pub fn checkpoint_grid(total_steps: u64, count: usize) -> Vec<u64> {
    assert!(count >= 2, "need at least the step-0 and final checkpoints");
    let first = (total_steps / 40).max(1) as f64;
    let last = total_steps as f64;
    let n = count - 1;
    let mut steps = vec![0u64];
    for i in 0..n {
        let t = if n == 1 { 1.0 } else { i as f64 / (n - 1) as f64 };
        let value = (first * (last / first).powf(t)).round() as u64;
        if steps.last() != Some(&value) && value <= total_steps {
            steps.push(value);
        }
    }
    if steps.last() != Some(&total_steps) {
        steps.push(total_steps);
    }
    steps
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossRow {
    pub step: u64,
    pub lr: f64,
    pub mlm_loss: f64,
    pub sop_loss: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub loss_log: Vec<LossRow>,
    pub checkpoint_paths: Vec<PathBuf>,
    pub skipped_single_sentence_docs: usize,
}

pub fn write_loss_log(rows: &[LossRow], path: &Path) -> Result<()> {
    let mut out = String::from("step,lr,mlm_loss,sop_loss\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.step, r.lr, r.mlm_loss, r.sop_loss));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_loss_log(path: &Path) -> Result<Vec<LossRow>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::MissingFile(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let parts: Vec<&str> = line.split(',').collect();
        let [step, lr, mlm, sop] = parts.as_slice() else {
            return Err(Error::MalformedLine { line: i + 1, detail: "expected 4 columns".into() });
        };
        let parse_f = |v: &str, what: &str| {
            v.parse::<f64>().map_err(|e| Error::MalformedLine {
                line: i + 1,
                detail: format!("bad {what}: {e}"),
            })
        };
        rows.push(LossRow {
            step: step.parse().map_err(|e| Error::MalformedLine {
                line: i + 1,
                detail: format!("bad step: {e}"),
            })?,
            lr: parse_f(lr, "lr")?,
            mlm_loss: parse_f(mlm, "mlm_loss")?,
            sop_loss: parse_f(sop, "sop_loss")?,
        });
    }
    Ok(rows)
}

/// Run masked-LM (+ sentence-order) training over the corpus, saving
/// checkpoints at the listed steps. `resume` continues a previous run
/// exactly: the per-step data and dropout streams are derived from the run
/// seed and the absolute step index, so a resumed run replays the very same
/// batches it would have seen without the interruption.
///
/// A non-finite loss aborts with the failing step number; checkpoints
/// already on disk are retained.
pub fn train(
    run: &TrainRun,
    documents: &[Vec<String>],
    vocab: &Vocab,
    checkpoint_dir: &Path,
    resume: Option<Checkpoint>,
) -> Result<TrainOutcome> {
    run.validate()?;
    if vocab.len() != run.model.vocab_size {
        return Err(Error::Config(format!(
            "model vocab size {} does not match vocabulary ({} tokens)",
            run.model.vocab_size,
            vocab.len()
        )));
    }
    std::fs::create_dir_all(checkpoint_dir)?;

    let assembler = BatchAssembler::new(
        documents,
        vocab,
        run.seq_len,
        run.masking,
        run.sop_enabled,
    )?;

    let mut checkpoint_steps = run.checkpoint_steps.clone();
    if checkpoint_steps.first() != Some(&0) {
        checkpoint_steps.insert(0, 0);
    }
    let ckpt_set: std::collections::HashSet<u64> = checkpoint_steps.iter().copied().collect();

    let (mut params, mut adam, master_rng, start_step) = match resume {
        Some(ckpt) => {
            if ckpt.params.config != run.model {
                return Err(Error::Config(
                    "checkpoint model config differs from the run config".into(),
                ));
            }
            (ckpt.params, ckpt.adam, ckpt.rng, ckpt.step)
        }
        None => {
            let params = init_params(&run.model, run.seed)?;
            let adam = AdamState::new(&params, run.adam);
            (params, adam, CounterRng::new(run.seed), 0)
        }
    };

    let mut checkpoint_paths = Vec::new();
    let save_at = |step: u64,
                       params: &crate::model::ModelParams,
                       adam: &AdamState,
                       paths: &mut Vec<PathBuf>|
     -> Result<()> {
        let path = checkpoint_dir.join(checkpoint_file_name(step));
        save_checkpoint(
            &Checkpoint { step, params: params.clone(), adam: adam.clone(), rng: master_rng },
            &path,
        )?;
        paths.push(path);
        Ok(())
    };

    if start_step == 0 && ckpt_set.contains(&0) {
        save_at(0, &params, &adam, &mut checkpoint_paths)?;
    }

    let batch_stream = master_rng.fork_named("batches");
    let dropout_stream = master_rng.fork_named("dropout");

    let mut loss_log = Vec::new();
    for step in (start_step + 1)..=run.steps {
        let lr = run.schedule.lr_at(step)?;
        let mut batch_rng = batch_stream.fork(step);
        let mut dropout_rng = dropout_stream.fork(step);

        let batch = assembler.assemble(run.batch_size, vocab, &mut batch_rng)?;
        let mut tape = Tape::new();
        let tracked = params.tracked(&mut tape);
        let out = batch_loss(&tracked, &batch, &mut tape, Some(&mut dropout_rng))?;
        if !out.loss.item().is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        let grads = tape.backward(&out.loss)?;
        params = adam_step(&params, &tracked, &grads, &mut adam, lr)?;

        loss_log.push(LossRow { step, lr, mlm_loss: out.mlm_loss, sop_loss: out.sop_loss });
        if ckpt_set.contains(&step) {
            save_at(step, &params, &adam, &mut checkpoint_paths)?;
        }
    }

    Ok(TrainOutcome {
        loss_log,
        checkpoint_paths,
        skipped_single_sentence_docs: assembler.skipped_single_sentence_docs,
    })
}
