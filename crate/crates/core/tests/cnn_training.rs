mod common;

use specblock::cnn_coarse::{train_cnn, CnnConfig, CnnModel, TrainConfig};
use specblock::dataset::synth::SynthConfig;
use specblock::pipeline::{token_samples, PipelineConfig};
use specblock::token_embed::{embed_sequence, train_embeddings, EmbedConfig};
use specblock::Label;

#[test]
fn gradients_match_finite_differences() {
    for seed in [1, 2, 3] {
        let (worst, n) = common::gradient_check(seed, 1e-5);
        assert!(n > 400);
        assert!(worst < 1e-4, "seed {seed}: worst relative error {worst:e}");
    }
}

#[test]
fn small_corpus_training_beats_chance() {
    let pages =
        common::labeled(&common::synth(SynthConfig { n_pages: 12, rows: (3, 8), seed: 5, ..Default::default() }));
    let cfg = PipelineConfig::default();
    let data = token_samples(&pages, 40, &cfg.blacklist).unwrap();
    let corpus: Vec<_> = data.iter().map(|(s, _)| s.clone()).collect();
    let table = train_embeddings(&corpus, &EmbedConfig { dim: 16, epochs: 3, ..Default::default() }).unwrap();
    let arch = CnnConfig { embed_dim: 16, filters: 8, ..Default::default() };
    let train = TrainConfig { learning_rate: 1e-3, epochs: 8, ..Default::default() };
    let model = train_cnn(&data, &table, &arch, &train, None).unwrap();
    let correct = data.iter().filter(|(s, y)| model.predict(&embed_sequence(&table, s)).unwrap().label == *y).count();
    let majority = data.iter().filter(|(_, y)| *y == Label::NonSpec).count();
    assert!(correct > majority, "{correct} correct vs majority baseline {majority} of {}", data.len());
}

#[test]
fn trained_checkpoint_reloads_identically() {
    let pages =
        common::labeled(&common::synth(SynthConfig { n_pages: 4, rows: (3, 5), seed: 9, ..Default::default() }));
    let data = token_samples(&pages, 20, &Default::default()).unwrap();
    let corpus: Vec<_> = data.iter().map(|(s, _)| s.clone()).collect();
    let table = train_embeddings(&corpus, &EmbedConfig { dim: 8, epochs: 1, ..Default::default() }).unwrap();
    let arch = CnnConfig { seq_len: 20, embed_dim: 8, filters: 4, ..Default::default() };
    let model =
        train_cnn(&data, &table, &arch, &TrainConfig { epochs: 2, learning_rate: 1e-3, ..Default::default() }, None)
            .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cnn.txt");
    model.save(&path).unwrap();
    let back = CnnModel::load(&path).unwrap();
    assert_eq!(back.params(), model.params());
    for (s, _) in &data {
        let x = embed_sequence(&table, s);
        assert_eq!(back.predict(&x).unwrap(), model.predict(&x).unwrap());
    }
}
