//! Models trained on the synthetic fixtures, for demos and integration tests.

use pico_core::corpus::build_vocabulary;
use pico_core::dner::{train_dner, DnerConfig, DnerModel};
use pico_core::fixtures;
use pico_core::kgraph::GraphEmbedding;
use pico_core::pico::{train_pico, PicoConfig, PicoDataset, PicoModel};

use crate::Result;

/// CNN sentence classifier fitted to the 40-sentence fixture.
pub fn fixture_pico(seed: u64) -> Result<PicoModel> {
    let data = fixtures::pico_fixture();
    let config = PicoConfig {
        epochs: 60,
        seed,
        ..PicoConfig::default()
    };
    let model = PicoModel::new(build_vocabulary(data.tokens(), 1), config);
    let empty = PicoDataset { items: Vec::new() };
    Ok(train_pico(model, &data, &empty)?.model)
}

/// BiLSTM-CRF tagger (half-size layers) trained for a fixed 25 epochs on
/// the demo corpus.
pub fn fixture_dner(graph: Option<GraphEmbedding>, seed: u64) -> Result<DnerModel> {
    let corpus = fixtures::demo_bio_corpus();
    let config = DnerConfig {
        word_dim: 50,
        hidden: 50,
        epochs: 25,
        patience: None,
        seed,
        ..DnerConfig::default()
    };
    let model = DnerModel::new(build_vocabulary(corpus.tokens(), 1), graph, config);
    let empty = pico_core::corpus::BioCorpus { sentences: Vec::new() };
    Ok(train_dner(model, &corpus, &empty)?.model)
}
