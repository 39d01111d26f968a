//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use specblock::cnn_coarse::{backward_weighted, CnnConfig, CnnModel};
use specblock::dataset::synth::{generate_synthetic_corpus, SynthConfig, SyntheticPage};
use specblock::matrix::Matrix;
use specblock::pipeline::LabeledPage;
use specblock::Label;

/// Largest relative error between backprop and central differences over
/// every parameter of a small network, with dropout off.
pub fn gradient_check(seed: u64, h: f64) -> (f64, usize) {
    let cfg = CnnConfig { seq_len: 8, embed_dim: 6, filters: 5, width: 4, dropout: 0.4 };
    let mut model = CnnModel::new(cfg.clone(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    {
        let lay = model.layout().clone();
        let p = model.params_mut();
        // non-zero biases so every tensor is exercised
        for l in 0..4 {
            for o in 0..cfg.filters {
                p[lay.conv_bias_index(l, o)] = rng.gen_range(-0.1..0.1);
            }
        }
    }
    let n = cfg.seq_len * cfg.embed_dim;
    let xs: Vec<Matrix> = (0..4)
        .map(|_| Matrix::from_vec(cfg.seq_len, cfg.embed_dim, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()))
        .collect();
    let ys = [Label::Spec, Label::NonSpec, Label::NonSpec, Label::Spec];
    // class weights as used on imbalanced data
    let ws = [2.5, 0.6, 0.6, 2.5];
    let l2 = 1e-3;
    let caches: Vec<_> = xs.iter().map(|x| model.forward_cached(x, None).unwrap()).collect();
    let analytic = backward_weighted(&model, &caches, &ys, &ws, l2).unwrap();
    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let orig = model.params()[i];
        model.params_mut()[i] = orig + h;
        let up = model.weighted_loss(&xs, &ys, &ws, l2).unwrap();
        model.params_mut()[i] = orig - h;
        let down = model.weighted_loss(&xs, &ys, &ws, l2).unwrap();
        model.params_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    (worst, analytic.len())
}

pub fn synth(cfg: SynthConfig) -> Vec<SyntheticPage> {
    generate_synthetic_corpus(&cfg).unwrap()
}

pub fn labeled(pages: &[SyntheticPage]) -> Vec<LabeledPage> {
    pages.iter().map(|p| LabeledPage { doc: p.document().unwrap(), labels: p.labels.clone() }).collect()
}
