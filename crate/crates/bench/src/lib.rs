//! Shared fixtures for the criterion benchmarks.

use taxprobe::model::{init_params, ModelConfig, ModelParams, TrainSequence};
use taxprobe::pretrain::{BatchAssembler, MaskingPolicy};
use taxprobe::rng::CounterRng;
use taxprobe::world::{sample_corpus, CorpusSpec, World, WorldSpec};

pub struct BenchFixture {
    pub world: World,
    pub params: ModelParams,
    pub batch: Vec<TrainSequence>,
}

/// Desk-shaped model over a small world with one ready minibatch.
pub fn fixture(batch_size: usize) -> BenchFixture {
    let world = World::generate(&WorldSpec::default(), 7).expect("world generation");
    let corpus =
        sample_corpus(&world, &CorpusSpec { documents: 40, ..CorpusSpec::default() }, 7)
            .expect("corpus sampling");
    let params =
        init_params(&ModelConfig::desk(world.vocab.len()), 7).expect("parameter init");
    let assembler = BatchAssembler::new(
        &corpus.documents,
        &world.vocab,
        20,
        MaskingPolicy::default(),
        true,
    )
    .expect("assembler");
    let mut rng = CounterRng::new(7);
    let batch = assembler.assemble(batch_size, &world.vocab, &mut rng).expect("batch");
    BenchFixture { world, params, batch }
}
