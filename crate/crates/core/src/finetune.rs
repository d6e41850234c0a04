//! Fine-tuned reasoning classification at desk scale.
//!
//! Two binary tests over sub-statements: the explicit variant supplies both
//! the super-statement and the class-relation as premises; the implicit
//! variant supplies only the super-statement, so deciding truth requires
//! knowledge of the membership relation that is not in the input. Train and
//! test splits use disjoint entities.
//!
//! The classifier head reuses the sentence-order head's slot (pooled first
//! position, dense to 2 classes), freshly initialized per fine-tune, so the
//! whole model trains through the ordinary optimizer path while the
//! pre-training checkpoint stays untouched.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diff::{DiffArray, Tape};
use crate::error::{Error, Result};
use crate::model::{encode_batch, pooled_logits, ModelParams, SequenceInput};
use crate::optim::{adam_step, AdamHyper, AdamState, Checkpoint};
use crate::probeset::sample_control;
use crate::rng::CounterRng;
use crate::world::vocab::{CLS, SEP};
use crate::world::{Statement, TemplateSet, Vocab, World};

#[derive(Debug, Clone, PartialEq)]
pub struct ReasoningExample {
    /// Premise sentences: [super-statement] in the implicit variant,
    /// [class-relation, super-statement] in the explicit variant.
    pub premises: Vec<String>,
    /// Unmasked sub-statement under test.
    pub hypothesis: String,
    pub label: bool,
    pub entity: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Fraction of each class's entities assigned to the training side.
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { train_fraction: 0.5, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct ReasoningSets {
    pub explicit_train: Vec<ReasoningExample>,
    pub explicit_test: Vec<ReasoningExample>,
    pub implicit_train: Vec<ReasoningExample>,
    pub implicit_test: Vec<ReasoningExample>,
}

impl ReasoningSets {
    pub fn train_entities(&self) -> std::collections::HashSet<&str> {
        self.explicit_train.iter().map(|e| e.entity.as_str()).collect()
    }

    pub fn test_entities(&self) -> std::collections::HashSet<&str> {
        self.explicit_test.iter().map(|e| e.entity.as_str()).collect()
    }
}

fn build_examples_for(
    world: &World,
    entity_idx: usize,
    explicit: bool,
    rng: &mut CounterRng,
) -> Result<Vec<ReasoningExample>> {
    let templates = TemplateSet;
    let taxonomy = &world.taxonomy;
    let entity = &taxonomy.entities[entity_idx];
    let class = &taxonomy.classes[entity.class];
    let mut out = Vec::new();
    for property in &class.properties {
        let class_relation = templates.verbalize(&Statement::Membership {
            entity: entity.name.clone(),
            class: class.name.clone(),
        })?;

        // positive: the entailed sub-statement with its true premises; the
        // class-relation goes first so its tokens sit at fixed positions
        let true_super = templates.verbalize(&Statement::Property {
            subject: class.name.clone(),
            relation: property.relation,
            predicate: property.predicate.clone(),
        })?;
        let true_hyp = templates.verbalize(&Statement::Property {
            subject: entity.name.clone(),
            relation: property.relation,
            predicate: property.predicate.clone(),
        })?;
        let premises = if explicit {
            vec![class_relation.clone(), true_super]
        } else {
            vec![true_super]
        };
        out.push(ReasoningExample {
            premises,
            hypothesis: true_hyp,
            label: true,
            entity: entity.name.clone(),
        });

        // negative: a sibling class's property asserted of the same subject
        let control_class_idx = sample_control(taxonomy, entity.class, rng)?;
        let control_class = &taxonomy.classes[control_class_idx];
        let control_property =
            &control_class.properties[rng.gen_range(control_class.properties.len())];
        let false_super = templates.verbalize(&Statement::Property {
            subject: control_class.name.clone(),
            relation: control_property.relation,
            predicate: control_property.predicate.clone(),
        })?;
        let false_hyp = templates.verbalize(&Statement::Property {
            subject: entity.name.clone(),
            relation: control_property.relation,
            predicate: control_property.predicate.clone(),
        })?;
        let premises = if explicit {
            vec![class_relation, false_super]
        } else {
            vec![false_super]
        };
        out.push(ReasoningExample {
            premises,
            hypothesis: false_hyp,
            label: false,
            entity: entity.name.clone(),
        });
    }
    Ok(out)
}

/// Build the four reasoning sets with an entity-disjoint, per-class split and
/// balanced labels (one sibling-class negative per positive).
pub fn build_reasoning_sets(world: &World, split: &SplitSpec) -> Result<ReasoningSets> {
    world.taxonomy.validate()?;
    if !(0.0..=1.0).contains(&split.train_fraction) {
        return Err(Error::Config(format!(
            "train fraction {} outside [0,1]",
            split.train_fraction
        )));
    }
    let rng = CounterRng::new(split.seed);
    let mut train_entities = Vec::new();
    let mut test_entities = Vec::new();
    for class_idx in 0..world.taxonomy.classes.len() {
        let mut members: Vec<usize> = world
            .taxonomy
            .entities
            .iter()
            .enumerate()
            .filter(|(_, e)| e.class == class_idx)
            .map(|(i, _)| i)
            .collect();
        if members.len() < 2 {
            return Err(Error::Config(format!(
                "class `{}` has {} entities; need at least 2 for a disjoint split",
                world.taxonomy.classes[class_idx].name,
                members.len()
            )));
        }
        rng.fork(class_idx as u64).shuffle(&mut members);
        let n_train = ((members.len() as f64 * split.train_fraction).round() as usize)
            .clamp(1, members.len() - 1);
        train_entities.extend_from_slice(&members[..n_train]);
        test_entities.extend_from_slice(&members[n_train..]);
    }

    let mut negative_rng = rng.fork_named("negatives");
    let mut build_set = |entities: &[usize], explicit: bool| -> Result<Vec<ReasoningExample>> {
        let mut set = Vec::new();
        for &idx in entities {
            set.extend(build_examples_for(world, idx, explicit, &mut negative_rng)?);
        }
        Ok(set)
    };

    Ok(ReasoningSets {
        explicit_train: build_set(&train_entities, true)?,
        explicit_test: build_set(&test_entities, true)?,
        implicit_train: build_set(&train_entities, false)?,
        implicit_test: build_set(&test_entities, false)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Dropout rate during fine-tuning. Desk-scale runs take so few steps
    /// that dropout noise dominates; the default disables it.
    pub dropout: f64,
    /// Global-norm gradient clip; 0 disables clipping.
    pub max_grad_norm: f64,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            epochs: 4,
            lr: 3e-4,
            batch_size: 4,
            dropout: 0.0,
            max_grad_norm: 1.0,
            seed: 0,
        }
    }
}

pub struct FinetunedClassifier {
    pub params: ModelParams,
    /// Examples whose premise block was truncated from the left to fit.
    pub truncated_examples: usize,
}

/// Encode premises (segment 0, [SEP]-joined) and the hypothesis (segment 1)
/// as one input. When over the length budget the premise block is truncated
/// from the left.
fn encode_example(
    example: &ReasoningExample,
    vocab: &Vocab,
    max_len: usize,
) -> Result<(SequenceInput, bool)> {
    let mut premise_tokens: Vec<u32> = Vec::new();
    for premise in &example.premises {
        premise_tokens.extend(vocab.tokenize(premise)?);
        premise_tokens.push(SEP);
    }
    let hyp_tokens = vocab.tokenize(&example.hypothesis)?;
    let budget = max_len
        .checked_sub(2 + hyp_tokens.len())
        .ok_or_else(|| Error::InvalidArgument("hypothesis alone exceeds sequence budget".into()))?;
    let truncated = premise_tokens.len() > budget;
    if truncated {
        premise_tokens.drain(..premise_tokens.len() - budget);
    }

    let mut tokens = Vec::with_capacity(2 + premise_tokens.len() + hyp_tokens.len());
    let mut segments = Vec::with_capacity(tokens.capacity());
    tokens.push(CLS);
    segments.push(0u8);
    tokens.extend_from_slice(&premise_tokens);
    segments.extend(std::iter::repeat(0).take(premise_tokens.len()));
    tokens.extend_from_slice(&hyp_tokens);
    segments.extend(std::iter::repeat(1).take(hyp_tokens.len()));
    tokens.push(SEP);
    segments.push(1);
    Ok((SequenceInput::new(tokens, segments), truncated))
}

fn classification_loss(
    params: &ModelParams,
    inputs: &[SequenceInput],
    labels: &[usize],
    tape: &mut Tape,
    dropout_rng: Option<&mut CounterRng>,
) -> Result<(DiffArray, DiffArray)> {
    let hidden = encode_batch(params, inputs, tape, dropout_rng)?;
    let rows: Vec<usize> = (0..inputs.len()).map(|b| hidden.row(b, 0)).collect();
    let logits = pooled_logits(params, &hidden.states, &rows, &params.sop_w, &params.sop_b, tape)?;
    let loss = tape.apply(
        crate::diff::Primitive::CrossEntropyAtPositions {
            targets: std::sync::Arc::from(labels.to_vec()),
        },
        &[&logits],
    )?;
    Ok((loss, logits))
}

/// Fine-tune a copy of the checkpoint on a reasoning set: constant learning
/// rate, fresh optimizer, fresh 2-way head. The checkpoint itself is never
/// modified.
pub fn finetune_classifier(
    checkpoint: &Checkpoint,
    train_set: &[ReasoningExample],
    config: &FinetuneConfig,
    vocab: &Vocab,
) -> Result<FinetunedClassifier> {
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let rng = CounterRng::new(config.seed);

    // fresh head in the sop slot; the fine-tune dropout rate replaces the
    // pre-training rate on this copy only
    let d = checkpoint.params.config.hidden;
    let mut head_rng = rng.fork_named("head");
    let head_w: Vec<f64> = (0..d * 2).map(|_| head_rng.next_normal() * 0.02).collect();
    let mut params = checkpoint.params.clone();
    params.config.dropout = config.dropout;
    params.sop_w = DiffArray::from_vec(vec![d, 2], head_w)?;
    params.sop_b = DiffArray::zeros(&[2]);

    let max_len = params.config.max_seq_len;
    let mut encoded = Vec::with_capacity(train_set.len());
    let mut truncated_examples = 0;
    for example in train_set {
        let (input, truncated) = encode_example(example, vocab, max_len)?;
        truncated_examples += truncated as usize;
        encoded.push((input, example.label as usize));
    }

    let mut adam = AdamState::new(&params, AdamHyper::default());
    let mut epoch_rng = rng.fork_named("epochs");
    for _epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..encoded.len()).collect();
        epoch_rng.shuffle(&mut order);
        let mut dropout_rng = epoch_rng.fork_named("dropout");
        for chunk in order.chunks(config.batch_size) {
            let inputs: Vec<SequenceInput> =
                chunk.iter().map(|&i| encoded[i].0.clone()).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| encoded[i].1).collect();
            let mut tape = Tape::new();
            let tracked = params.tracked(&mut tape);
            let (loss, _) =
                classification_loss(&tracked, &inputs, &labels, &mut tape, Some(&mut dropout_rng))?;
            if !loss.item().is_finite() {
                return Err(Error::NonFiniteLoss { step: adam.step });
            }
            let mut grads = tape.backward(&loss)?;
            if config.max_grad_norm > 0.0 {
                let norm = grads.global_norm();
                if norm > config.max_grad_norm {
                    grads.scale_all(config.max_grad_norm / norm);
                }
            }
            params = adam_step(&params, &tracked, &grads, &mut adam, config.lr)?;
        }
    }

    Ok(FinetunedClassifier { params, truncated_examples })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    /// confusion[actual][predicted], indexed by label as 0/1.
    pub confusion: [[usize; 2]; 2],
    pub n: usize,
}

/// Accuracy of a fine-tuned classifier on a test set (evaluation mode, no
/// dropout; argmax prediction with ties resolved to label 0).
pub fn evaluate_classifier(
    classifier: &FinetunedClassifier,
    test_set: &[ReasoningExample],
    vocab: &Vocab,
) -> Result<EvalReport> {
    if test_set.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    let max_len = classifier.params.config.max_seq_len;
    let mut confusion = [[0usize; 2]; 2];
    for example in test_set {
        let (input, _) = encode_example(example, vocab, max_len)?;
        let mut tape = Tape::new();
        let (_, logits) = classification_loss(
            &classifier.params,
            std::slice::from_ref(&input),
            &[example.label as usize],
            &mut tape,
            None,
        )?;
        let row = logits.values();
        let predicted = usize::from(row[1] > row[0]);
        confusion[example.label as usize][predicted] += 1;
    }
    let n = test_set.len();
    let correct = confusion[0][0] + confusion[1][1];
    Ok(EvalReport { accuracy: correct as f64 / n as f64, confusion, n })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub step: u64,
    pub implicit_accuracy: f64,
    pub explicit_accuracy: f64,
}

/// Fine-tune independently from every checkpoint and evaluate both variants.
pub fn accuracy_vs_checkpoint(
    checkpoint_paths: &[std::path::PathBuf],
    sets: &ReasoningSets,
    config: &FinetuneConfig,
    vocab: &Vocab,
) -> Result<Vec<CurvePoint>> {
    if checkpoint_paths.is_empty() {
        return Err(Error::InvalidArgument("no checkpoints".into()));
    }
    let mut curve = Vec::with_capacity(checkpoint_paths.len());
    for path in checkpoint_paths {
        let checkpoint = crate::optim::load_checkpoint(path)?;
        let implicit = finetune_classifier(&checkpoint, &sets.implicit_train, config, vocab)?;
        let implicit_accuracy =
            evaluate_classifier(&implicit, &sets.implicit_test, vocab)?.accuracy;
        let explicit = finetune_classifier(&checkpoint, &sets.explicit_train, config, vocab)?;
        let explicit_accuracy =
            evaluate_classifier(&explicit, &sets.explicit_test, vocab)?.accuracy;
        curve.push(CurvePoint { step: checkpoint.step, implicit_accuracy, explicit_accuracy });
    }
    curve.sort_by_key(|p| p.step);
    Ok(curve)
}

/// Curve CSV columns: step, implicit accuracy, explicit accuracy.
pub fn write_curve(curve: &[CurvePoint], path: &Path) -> Result<()> {
    let mut out = String::from("step,implicit_acc,explicit_acc\n");
    for p in curve {
        out.push_str(&format!("{},{},{}\n", p.step, p.implicit_accuracy, p.explicit_accuracy));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_curve(path: &Path) -> Result<Vec<CurvePoint>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::MissingFile(format!("{}: {e}", path.display())))?;
    let mut curve = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let parts: Vec<&str> = line.split(',').collect();
        let [step, implicit, explicit] = parts.as_slice() else {
            return Err(Error::MalformedLine { line: i + 1, detail: "expected 3 columns".into() });
        };
        let bad = |what: &str, e: &dyn std::fmt::Display| Error::MalformedLine {
            line: i + 1,
            detail: format!("bad {what}: {e}"),
        };
        curve.push(CurvePoint {
            step: step.parse().map_err(|e| bad("step", &e))?,
            implicit_accuracy: implicit.parse().map_err(|e| bad("implicit_acc", &e))?,
            explicit_accuracy: explicit.parse().map_err(|e| bad("explicit_acc", &e))?,
        });
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::optim::{load_checkpoint, Schedule};
    use crate::oracle;
    use crate::pretrain::{train, MaskingPolicy, TrainRun};
    use crate::world::{sample_corpus, CorpusSpec, World, WorldSpec};

    fn tiny_world(seed: u64) -> World {
        World::generate(
            &WorldSpec {
                classes: 3,
                entities_per_class: 4,
                properties_per_class: 2,
                filler_classes: 2,
                filler_entities_per_class: 2,
                filler_properties_per_class: 1,
            },
            seed,
        )
        .unwrap()
    }

    fn tiny_checkpoint(world: &World, seed: u64) -> (tempfile::TempDir, Checkpoint) {
        let corpus =
            sample_corpus(world, &CorpusSpec { documents: 10, ..CorpusSpec::default() }, seed)
                .unwrap();
        let mut model = ModelConfig::desk(world.vocab.len());
        model.layers = 1;
        model.hidden = 16;
        model.heads = 2;
        model.feed_forward = 32;
        let run = TrainRun {
            model,
            schedule: Schedule { warmup_steps: 1, total_steps: 4, peak_lr: 1e-3 },
            adam: crate::optim::AdamHyper::default(),
            masking: MaskingPolicy::default(),
            steps: 0,
            batch_size: 4,
            seq_len: 20,
            checkpoint_steps: vec![0],
            sop_enabled: true,
            seed,
        };
        let dir = tempfile::tempdir().unwrap();
        let out = train(&run, &corpus.documents, &world.vocab, dir.path(), None).unwrap();
        let ckpt = load_checkpoint(&out.checkpoint_paths[0]).unwrap();
        (dir, ckpt)
    }

    #[test]
    fn split_is_entity_disjoint_and_balanced() {
        let world = tiny_world(1);
        let sets = build_reasoning_sets(&world, &SplitSpec { train_fraction: 0.5, seed: 2 }).unwrap();
        let train = sets.train_entities();
        let test = sets.test_entities();
        assert!(train.is_disjoint(&test));
        assert!(!train.is_empty() && !test.is_empty());

        for set in [
            &sets.explicit_train,
            &sets.explicit_test,
            &sets.implicit_train,
            &sets.implicit_test,
        ] {
            let positives = set.iter().filter(|e| e.label).count();
            assert_eq!(positives * 2, set.len(), "labels not balanced");
        }
        // explicit has 2 premises, implicit 1
        assert!(sets.explicit_train.iter().all(|e| e.premises.len() == 2));
        assert!(sets.implicit_train.iter().all(|e| e.premises.len() == 1));
    }

    #[test]
    fn negatives_are_never_entailed() {
        let world = tiny_world(3);
        let sets = build_reasoning_sets(&world, &SplitSpec::default()).unwrap();
        let memberships: Vec<(String, String)> = world
            .taxonomy
            .membership_triples()
            .into_iter()
            .map(|t| (t.subject, t.object))
            .collect();
        let class_props: Vec<(String, String, String)> = world
            .taxonomy
            .class_triples()
            .into_iter()
            .map(|t| (t.subject, t.relation.as_str().to_string(), t.object))
            .collect();
        let closure = oracle::closure_from_statements(&memberships, &class_props);
        let templates = TemplateSet;
        for example in sets.explicit_train.iter().chain(&sets.implicit_test) {
            let parsed = templates.parse(&example.hypothesis).unwrap();
            let Statement::Property { subject, relation, predicate } = parsed else {
                panic!("hypothesis must be a property statement");
            };
            let entailed =
                closure.contains(&(subject, relation.as_str().to_string(), predicate));
            assert_eq!(entailed, example.label, "label disagrees with entailment");
        }
    }

    #[test]
    fn split_requires_two_entities_per_class() {
        let world = World::generate(
            &WorldSpec { classes: 2, entities_per_class: 1, ..WorldSpec::default() },
            4,
        )
        .unwrap();
        assert!(build_reasoning_sets(&world, &SplitSpec::default()).is_err());
    }

    #[test]
    fn zero_epoch_classifier_is_at_chance() {
        let world = tiny_world(5);
        let (_dir, ckpt) = tiny_checkpoint(&world, 6);
        let sets = build_reasoning_sets(&world, &SplitSpec { train_fraction: 0.5, seed: 7 }).unwrap();
        let config = FinetuneConfig { epochs: 0, ..FinetuneConfig::default() };
        let classifier =
            finetune_classifier(&ckpt, &sets.explicit_train, &config, &world.vocab).unwrap();
        let report = evaluate_classifier(&classifier, &sets.explicit_test, &world.vocab).unwrap();
        let n = report.n as f64;
        let sigma = (n * 0.25).sqrt();
        assert!(
            (report.accuracy * n - 0.5 * n).abs() <= 3.0 * sigma,
            "accuracy {} over {} examples",
            report.accuracy,
            report.n
        );
    }

    #[test]
    fn finetune_is_deterministic_and_nondestructive() {
        let world = tiny_world(8);
        let (dir, ckpt) = tiny_checkpoint(&world, 9);
        let ckpt_path = dir.path().join("ckpt-0.bin");
        let before = std::fs::read(&ckpt_path).unwrap();
        let sets = build_reasoning_sets(&world, &SplitSpec { train_fraction: 0.5, seed: 10 }).unwrap();
        let config = FinetuneConfig { epochs: 1, seed: 11, ..FinetuneConfig::default() };

        let a = finetune_classifier(&ckpt, &sets.explicit_train, &config, &world.vocab).unwrap();
        let b = finetune_classifier(&ckpt, &sets.explicit_train, &config, &world.vocab).unwrap();
        let ra = evaluate_classifier(&a, &sets.explicit_test, &world.vocab).unwrap();
        let rb = evaluate_classifier(&b, &sets.explicit_test, &world.vocab).unwrap();
        assert_eq!(ra, rb);

        // the on-disk checkpoint is untouched by fine-tuning
        assert_eq!(std::fs::read(&ckpt_path).unwrap(), before);
    }

    #[test]
    fn evaluation_matches_hand_counted_confusion() {
        let world = tiny_world(12);
        let (_dir, ckpt) = tiny_checkpoint(&world, 13);
        let sets = build_reasoning_sets(&world, &SplitSpec { train_fraction: 0.5, seed: 14 }).unwrap();
        let subset: Vec<ReasoningExample> = sets.explicit_test.iter().take(20).cloned().collect();
        assert_eq!(subset.len(), 20);
        let config = FinetuneConfig { epochs: 0, ..FinetuneConfig::default() };
        let classifier =
            finetune_classifier(&ckpt, &sets.explicit_train, &config, &world.vocab).unwrap();
        let report = evaluate_classifier(&classifier, &subset, &world.vocab).unwrap();

        // recount by classifying one example at a time
        let mut confusion = [[0usize; 2]; 2];
        for example in &subset {
            let (input, _) = encode_example(example, &world.vocab, ckpt.params.config.max_seq_len).unwrap();
            let mut tape = Tape::new();
            let (_, logits) = classification_loss(
                &classifier.params,
                std::slice::from_ref(&input),
                &[example.label as usize],
                &mut tape,
                None,
            )
            .unwrap();
            let predicted = usize::from(logits.values()[1] > logits.values()[0]);
            confusion[example.label as usize][predicted] += 1;
        }
        assert_eq!(report.confusion, confusion);
        let correct = confusion[0][0] + confusion[1][1];
        assert_eq!(report.accuracy, correct as f64 / 20.0);
        assert_eq!(report.n, 20);

        // all-correct gives accuracy exactly 1.0 by the same formula
        let all_correct = EvalReport { accuracy: 1.0, confusion: [[10, 0], [0, 10]], n: 20 };
        assert_eq!(
            (all_correct.confusion[0][0] + all_correct.confusion[1][1]) as f64 / all_correct.n as f64,
            1.0
        );
    }

    #[test]
    fn truncation_is_counted() {
        let world = tiny_world(15);
        let (_dir, mut ckpt) = tiny_checkpoint(&world, 16);
        // shrink the model's budget so explicit examples cannot fit
        ckpt.params.config.max_seq_len = 14;
        let sets = build_reasoning_sets(&world, &SplitSpec::default()).unwrap();
        let config = FinetuneConfig { epochs: 0, ..FinetuneConfig::default() };
        let classifier =
            finetune_classifier(&ckpt, &sets.explicit_train, &config, &world.vocab).unwrap();
        assert!(classifier.truncated_examples > 0);
    }

    #[test]
    fn curve_csv_round_trip() {
        let curve = vec![
            CurvePoint { step: 0, implicit_accuracy: 0.507, explicit_accuracy: 0.493 },
            CurvePoint { step: 2000, implicit_accuracy: 0.81, explicit_accuracy: 0.97 },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curve.csv");
        write_curve(&curve, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("step,implicit_acc,explicit_acc\n"));
        assert_eq!(read_curve(&path).unwrap(), curve);
    }
}
