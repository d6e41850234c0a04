use super::*;
use crate::model::ModelConfig;
use crate::optim::{load_checkpoint, AdamHyper, Schedule};
use crate::rng::CounterRng;
use crate::world::vocab::MASK;
use crate::world::{sample_corpus, CorpusSpec, Vocab, World, WorldSpec};

fn tiny_world(seed: u64) -> World {
    World::generate(
        &WorldSpec {
            classes: 3,
            entities_per_class: 2,
            properties_per_class: 2,
            filler_classes: 2,
            filler_entities_per_class: 2,
            filler_properties_per_class: 1,
        },
        seed,
    )
    .unwrap()
}

fn word_batch(vocab: &Vocab, n_words: usize) -> Vec<Vec<u32>> {
    // sequences of content tokens bracketed by specials
    let ids: Vec<u32> = vocab.content_ids().collect();
    let mut batch = Vec::new();
    let mut k = 0;
    while k < n_words {
        let take = (n_words - k).min(8);
        let mut seq = vec![crate::world::vocab::CLS];
        for j in 0..take {
            seq.push(ids[(k + j) % ids.len()]);
        }
        seq.push(crate::world::vocab::SEP);
        batch.push(seq);
        k += take;
    }
    batch
}

#[test]
fn mask_rate_zero_leaves_batch_unchanged_with_one_forced_target() {
    let world = tiny_world(1);
    let policy = MaskingPolicy { mask_rate: 0.0, ..MaskingPolicy::default() };
    let batch = word_batch(&world.vocab, 20);
    let mut rng = CounterRng::new(2);
    let (masked, targets) = mask_batch(&batch, &policy, &world.vocab, &mut rng).unwrap();
    assert_eq!(masked, batch);
    let total: usize = targets.iter().map(|t| t.len()).sum();
    assert_eq!(total, 1);
    let (s, (pos, original)) =
        targets.iter().enumerate().find_map(|(s, t)| t.first().map(|&x| (s, x))).unwrap();
    assert_eq!(batch[s][pos], original);
}

#[test]
fn mask_rate_one_with_pure_mask_action_masks_every_word() {
    let world = tiny_world(2);
    let policy =
        MaskingPolicy { mask_rate: 1.0, action_mask: 1.0, action_random: 0.0, action_keep: 0.0 };
    let batch = word_batch(&world.vocab, 30);
    let mut rng = CounterRng::new(3);
    let (masked, targets) = mask_batch(&batch, &policy, &world.vocab, &mut rng).unwrap();
    for (s, seq) in masked.iter().enumerate() {
        for (pos, &token) in seq.iter().enumerate() {
            if world.vocab.is_special(batch[s][pos]) {
                assert_eq!(token, batch[s][pos], "special token altered");
            } else {
                assert_eq!(token, MASK);
                assert!(targets[s].contains(&(pos, batch[s][pos])));
            }
        }
    }
}

#[test]
fn masked_fraction_matches_rate_within_three_sigma() {
    let world = tiny_world(3);
    let policy = MaskingPolicy::default();
    let n_words = 12_000;
    let batch = word_batch(&world.vocab, n_words);
    let mut rng = CounterRng::new(4);
    let (_, targets) = mask_batch(&batch, &policy, &world.vocab, &mut rng).unwrap();
    let selected: usize = targets.iter().map(|t| t.len()).sum();
    let expected = n_words as f64 * policy.mask_rate;
    let sigma = (n_words as f64 * policy.mask_rate * (1.0 - policy.mask_rate)).sqrt();
    assert!(
        (selected as f64 - expected).abs() < 3.0 * sigma,
        "selected {selected}, expected {expected}"
    );
}

#[test]
fn target_map_reconstructs_the_original_batch() {
    let world = tiny_world(4);
    let policy = MaskingPolicy::default();
    let batch = word_batch(&world.vocab, 500);
    let mut rng = CounterRng::new(5);
    let (masked, targets) = mask_batch(&batch, &policy, &world.vocab, &mut rng).unwrap();
    let mut restored = masked;
    for (s, t) in targets.iter().enumerate() {
        for &(pos, original) in t {
            restored[s][pos] = original;
        }
    }
    assert_eq!(restored, batch);
}

#[test]
fn specials_are_never_masked() {
    let world = tiny_world(5);
    let policy =
        MaskingPolicy { mask_rate: 1.0, action_mask: 1.0, action_random: 0.0, action_keep: 0.0 };
    let batch = word_batch(&world.vocab, 100);
    let mut rng = CounterRng::new(6);
    let (_, targets) = mask_batch(&batch, &policy, &world.vocab, &mut rng).unwrap();
    for (s, t) in targets.iter().enumerate() {
        for &(pos, _) in t {
            assert!(!world.vocab.is_special(batch[s][pos]));
        }
    }
}

#[test]
fn invalid_policies_rejected() {
    let bad_rate = MaskingPolicy { mask_rate: 1.5, ..MaskingPolicy::default() };
    assert!(bad_rate.validate().is_err());
    let bad_split =
        MaskingPolicy { mask_rate: 0.15, action_mask: 0.5, action_random: 0.1, action_keep: 0.1 };
    assert!(bad_split.validate().is_err());
}

#[test]
fn sop_pairs_from_documents() {
    let doc = vec!["a b c".to_string(), "d e".to_string()];
    let mut rng = CounterRng::new(7);
    let pairs = make_sop_pairs(&doc, &mut rng);
    assert_eq!(pairs.len(), 1);

    let single = vec!["only one".to_string()];
    assert!(make_sop_pairs(&single, &mut rng).is_empty());

    let three = vec!["s1".to_string(), "s2".to_string(), "s3".to_string()];
    assert_eq!(make_sop_pairs(&three, &mut rng).len(), 2);
}

#[test]
fn sop_swap_probability_extremes() {
    let doc: Vec<String> = (0..6).map(|i| format!("sentence {i}")).collect();
    let mut rng = CounterRng::new(8);
    let no_swap = make_sop_pairs_with_prob(&doc, &mut rng, 0.0);
    assert!(no_swap.iter().all(|p| p.label == 0));
    for (i, p) in no_swap.iter().enumerate() {
        assert_eq!(p.first, doc[i]);
        assert_eq!(p.second, doc[i + 1]);
    }
    let all_swap = make_sop_pairs_with_prob(&doc, &mut rng, 1.0);
    assert!(all_swap.iter().all(|p| p.label == 1));
}

#[test]
fn sop_label_balance_within_three_sigma() {
    let doc: Vec<String> = (0..10_001).map(|i| format!("s {i}")).collect();
    let mut rng = CounterRng::new(9);
    let pairs = make_sop_pairs(&doc, &mut rng);
    let n = pairs.len();
    assert_eq!(n, 10_000);
    let swapped = pairs.iter().filter(|p| p.label == 1).count();
    let sigma = (n as f64 * 0.25).sqrt();
    assert!((swapped as f64 - n as f64 / 2.0).abs() < 3.0 * sigma, "swapped = {swapped}");
}

fn tiny_run(world: &World, steps: u64, seed: u64) -> TrainRun {
    let mut model = ModelConfig::desk(world.vocab.len());
    model.layers = 1;
    model.hidden = 16;
    model.heads = 2;
    model.feed_forward = 32;
    TrainRun {
        model,
        schedule: Schedule { warmup_steps: 2, total_steps: steps.max(4), peak_lr: 1e-3 },
        adam: AdamHyper::default(),
        masking: MaskingPolicy::default(),
        steps,
        batch_size: 4,
        seq_len: 20,
        checkpoint_steps: if steps == 0 { vec![0] } else { vec![0, steps / 2, steps] },
        sop_enabled: true,
        seed,
    }
}

fn tiny_corpus(world: &World, seed: u64) -> Vec<Vec<String>> {
    let spec = CorpusSpec { documents: 12, ..CorpusSpec::default() };
    sample_corpus(world, &spec, seed).unwrap().documents
}

#[test]
fn zero_step_run_saves_only_the_initial_checkpoint() {
    let world = tiny_world(10);
    let docs = tiny_corpus(&world, 1);
    let dir = tempfile::tempdir().unwrap();
    let run = tiny_run(&world, 0, 11);
    let out = train(&run, &docs, &world.vocab, dir.path(), None).unwrap();
    assert_eq!(out.checkpoint_paths.len(), 1);
    assert!(out.checkpoint_paths[0].ends_with("ckpt-0.bin"));
    assert!(out.loss_log.is_empty());
    let ckpt = load_checkpoint(&out.checkpoint_paths[0]).unwrap();
    assert_eq!(ckpt.step, 0);
    assert_eq!(ckpt.adam.step, 0);
}

#[test]
fn training_is_reproducible() {
    let world = tiny_world(11);
    let docs = tiny_corpus(&world, 2);
    let run = tiny_run(&world, 6, 12);
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let a = train(&run, &docs, &world.vocab, dir_a.path(), None).unwrap();
    let b = train(&run, &docs, &world.vocab, dir_b.path(), None).unwrap();
    assert_eq!(a.loss_log, b.loss_log);
    // and the checkpoint files are byte-identical
    for (pa, pb) in a.checkpoint_paths.iter().zip(&b.checkpoint_paths) {
        assert_eq!(std::fs::read(pa).unwrap(), std::fs::read(pb).unwrap());
    }
}

#[test]
fn continuation_equals_straight_training() {
    let world = tiny_world(12);
    let docs = tiny_corpus(&world, 3);
    let dir = tempfile::tempdir().unwrap();

    let straight_run = tiny_run(&world, 6, 13);
    let straight = train(&straight_run, &docs, &world.vocab, dir.path(), None).unwrap();

    let dir2 = tempfile::tempdir().unwrap();
    let mut half = straight_run.clone();
    half.steps = 3;
    half.checkpoint_steps = vec![0, 3];
    let first = train(&half, &docs, &world.vocab, dir2.path(), None).unwrap();
    let ckpt = load_checkpoint(first.checkpoint_paths.last().unwrap()).unwrap();
    let resumed_run = tiny_run(&world, 6, 13);
    let resumed = train(&resumed_run, &docs, &world.vocab, dir2.path(), Some(ckpt)).unwrap();

    let mut combined = first.loss_log.clone();
    combined.extend(resumed.loss_log.clone());
    assert_eq!(combined.len(), straight.loss_log.len());
    for (a, b) in combined.iter().zip(&straight.loss_log) {
        assert_eq!(a.step, b.step);
        assert!((a.mlm_loss - b.mlm_loss).abs() <= 1e-12, "step {}: {} vs {}", a.step, a.mlm_loss, b.mlm_loss);
        assert!((a.sop_loss - b.sop_loss).abs() <= 1e-12);
    }
}

#[test]
fn non_finite_loss_aborts_with_step_number() {
    let world = tiny_world(13);
    let docs = tiny_corpus(&world, 4);
    let dir = tempfile::tempdir().unwrap();
    let run = tiny_run(&world, 2, 14);
    // poison a checkpoint with NaN parameters and resume from it
    let out = train(&tiny_run(&world, 0, 14), &docs, &world.vocab, dir.path(), None).unwrap();
    let mut ckpt = load_checkpoint(&out.checkpoint_paths[0]).unwrap();
    ckpt.params = ckpt.params.map(&mut |name, a| {
        if name == "token_embedding" {
            crate::diff::DiffArray::filled(a.shape(), f64::NAN)
        } else {
            a.clone()
        }
    });
    let err = train(&run, &docs, &world.vocab, dir.path(), Some(ckpt)).unwrap_err();
    assert!(matches!(err, crate::Error::NonFiniteLoss { step: 1 }), "{err}");
}

#[test]
fn loss_log_round_trip() {
    let rows = vec![
        LossRow { step: 1, lr: 5e-4, mlm_loss: 3.25, sop_loss: 0.7e-3 },
        LossRow { step: 2, lr: 1e-3, mlm_loss: 3.0001, sop_loss: 0.69 },
    ];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("loss.csv");
    write_loss_log(&rows, &path).unwrap();
    assert_eq!(read_loss_log(&path).unwrap(), rows);
}

#[test]
fn checkpoint_grid_shape() {
    let grid = checkpoint_grid(2000, 9);
    assert_eq!(grid[0], 0);
    assert_eq!(*grid.last().unwrap(), 2000);
    assert!(grid.windows(2).all(|w| w[0] < w[1]));
    assert!(grid.len() <= 9 + 1);
    // roughly geometric in the interior
    assert!(grid[1] >= 25 && grid[1] <= 100, "{grid:?}");

    let grid = checkpoint_grid(100, 5);
    assert_eq!(grid[0], 0);
    assert_eq!(*grid.last().unwrap(), 100);
}

#[test]
fn pack_pair_truncates_overflow() {
    let world = tiny_world(14);
    let docs = vec![vec![
        "a b c d e f g h i j".replace(' ', " "), // long-ish fake sentences
        "k l m n o p q r s t".to_string(),
    ]];
    // use a vocabulary that contains the letters
    let vocab = Vocab::new("a b c d e f g h i j k l m n o p q r s t".split(' ').map(String::from))
        .unwrap();
    let assembler =
        BatchAssembler::new(&docs, &vocab, 12, MaskingPolicy::default(), true).unwrap();
    let mut rng = CounterRng::new(15);
    let batch = assembler.assemble(3, &vocab, &mut rng).unwrap();
    for seq in &batch {
        assert!(seq.tokens.len() <= 12);
        assert_eq!(seq.tokens[0], crate::world::vocab::CLS);
        assert_eq!(*seq.tokens.last().unwrap(), crate::world::vocab::SEP);
        assert_eq!(seq.tokens.len(), seq.segments.len());
    }
    drop(world);
}
