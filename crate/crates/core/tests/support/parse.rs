//! Edge-predictor checks: gradients, decoding, toy overfitting and the
//! placeholder round trip.

use conjprop::conllu::Sentence;
use conjprop::embed::{EmbeddingProvider, HashEmbeddings};
use conjprop::optim::AdamWConfig;
use conjprop::parser::{
    decode_scores, delexicalize_corpus, lexicalize_sentence, EdgeScoreModel, EmbeddingStack, Noise,
    TrainConfig, Trainer, PARAM_NAMES,
};
use conjprop::synth::{perturb_enhanced, random_corpus, SynthConfig};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::learn::rel_err;

pub fn random_stack(rng: &mut impl Rng, n: usize, layers: usize, dim: usize) -> EmbeddingStack {
    EmbeddingStack {
        layers: (0..layers)
            .map(|_| Array2::from_shape_fn((n, dim), |_| rng.gen_range(-1.0..1.0)))
            .collect(),
    }
}

/// Model with every parameter drawn at random, including the ones that
/// start at zero.
pub fn random_model(rng: &mut impl Rng, labels: &[&str], layers: usize, dim: usize, hidden: usize) -> EdgeScoreModel {
    let mut m = EdgeScoreModel::new(labels.iter().map(|s| s.to_string()), layers, dim, hidden, rng);
    for slot in m.params.slices_mut() {
        for v in slot.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
    }
    m
}

fn random_gold(rng: &mut impl Rng, n: usize, labels: usize) -> Array2<usize> {
    Array2::from_shape_fn((n + 1, n), |_| if rng.gen_bool(0.4) { rng.gen_range(1..labels) } else { 0 })
}

/// Worst relative error over every parameter of a 3-token, hidden-4,
/// 3-label model, with and without dropout and masking.
pub fn parser_gradient_error(seed: u64) -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 3;
    let mut model = random_model(&mut rng, &["a", "b"], 2, 5, 4);
    assert_eq!(model.labels.len(), 3);
    let stack = random_stack(&mut rng, n, 2, 5);
    let gold = random_gold(&mut rng, n, 3);
    let noisy_cfg = TrainConfig {
        dropout: 0.3,
        layer_dropout: 0.4,
        token_mask: 0.3,
        ..TrainConfig::default()
    };
    let noises = [
        Noise::none(n, 2),
        Noise::sample(n, 2, 4, &noisy_cfg, &mut rng),
        Noise::sample(n, 2, 4, &noisy_cfg, &mut rng),
    ];
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for noise in &noises {
        let (_, g) = model.loss_and_grad(&stack, &gold, noise);
        for p in 0..PARAM_NAMES.len() {
            for k in 0..g.slices()[p].len() {
                let orig = model.params.slices()[p][k];
                model.params.slices_mut()[p][k] = orig + h;
                let up = model.loss(&stack, &gold, noise);
                model.params.slices_mut()[p][k] = orig - h;
                let down = model.loss(&stack, &gold, noise);
                model.params.slices_mut()[p][k] = orig;
                worst = worst.max(rel_err(g.slices()[p][k], (up - down) / (2.0 * h)));
                checked += 1;
            }
        }
    }
    (worst, checked)
}

fn random_probs(rng: &mut impl Rng, n: usize, labels: usize) -> Array3<f64> {
    let none_bias = rng.gen_range(0.0..12.0);
    let mut p = Array3::from_shape_fn((n + 1, n, labels), |(_, _, k)| {
        let z: f64 = rng.gen_range(-3.0..3.0) + if k == 0 { none_bias } else { 0.0 };
        z.exp()
    });
    for mut row in p.lanes_mut(ndarray::Axis(2)) {
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    p
}

/// Every token of every decoded random tensor has an incoming edge.
pub fn check_no_headless(seed: u64, tensors: usize) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = SynthConfig::default();
    let mut fallback_used = 0;
    for t in 0..tensors {
        let s = random_corpus(&mut rng, 1, &cfg).remove(0);
        let labels: Vec<String> = std::iter::once("<none>".to_owned())
            .chain((1..rng.gen_range(2..6)).map(|i| format!("l{}", i)))
            .collect();
        let probs = random_probs(&mut rng, s.tokens.len(), labels.len());
        let out = decode_scores(&probs, &labels, &s);
        for (j, tok) in out.tokens.iter().enumerate() {
            if tok.deps.is_empty() {
                return Err(format!("tensor {}: token {} has no head", t, tok.id));
            }
            let plain = (0..=s.tokens.len())
                .filter(|&i| i != j + 1)
                .any(|i| (1..labels.len()).any(|k| probs[[i, j, k]] > probs[[i, j, 0]]));
            if !plain {
                fallback_used += 1;
            }
        }
    }
    Ok(format!("{} tensors, fallback used for {} tokens", tensors, fallback_used))
}

/// Small corpus of random graphs with placeholder-free labels.
pub fn toy_corpus(seed: u64, count: usize) -> Vec<Sentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = SynthConfig {
        min_tokens: 2,
        max_tokens: 10,
        ..SynthConfig::default()
    };
    random_corpus(&mut rng, count, &cfg)
        .iter()
        .map(|s| perturb_enhanced(&mut rng, s, 0.9, 2))
        .collect()
}

/// Fraction of gold edges whose pair's argmax label is the gold label.
pub fn edge_label_accuracy(model: &EdgeScoreModel, corpus: &[Sentence], provider: &dyn EmbeddingProvider) -> f64 {
    let (mut right, mut total) = (0usize, 0usize);
    for (i, s) in corpus.iter().enumerate() {
        let stack = EmbeddingStack::from_provider(s, i, provider).unwrap();
        let probs = model.score_pairs(&stack).unwrap().probs;
        let gold = model.gold_matrix(s, i).unwrap();
        for ((h, d), &k) in gold.indexed_iter() {
            if k == 0 {
                continue;
            }
            total += 1;
            let row = probs.slice(ndarray::s![h, d, ..]);
            let mut best = 0;
            for l in 1..row.len() {
                if row[l] > row[best] {
                    best = l;
                }
            }
            right += (best == k) as usize;
        }
    }
    right as f64 / total.max(1) as f64
}

pub fn toy_config() -> TrainConfig {
    TrainConfig {
        hidden: 64,
        dropout: 0.0,
        layer_dropout: 0.0,
        token_mask: 0.0,
        batch_size: 5,
        optimizer: AdamWConfig {
            lr: 2e-3,
            ..TrainConfig::default().optimizer
        },
        epochs: 200,
        patience: 5,
        seed: 7,
    }
}

/// Train on 50 toy sentences until 99% of the gold edges are labeled
/// correctly. Returns (epochs used, accuracy).
pub fn toy_overfit(cfg: &TrainConfig) -> (usize, f64) {
    let corpus = toy_corpus(42, 50);
    let provider = HashEmbeddings::new(2, 64, 3);
    let (delex, inventory) = delexicalize_corpus(&corpus);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = EdgeScoreModel::new(inventory, 2, 64, cfg.hidden, &mut rng);
    let mut trainer = Trainer::new(model, cfg.clone());
    let mut acc = 0.0;
    for epoch in 1..=cfg.epochs {
        trainer.train_epoch(&delex, &provider).unwrap();
        if epoch % 5 == 0 || epoch == cfg.epochs {
            acc = edge_label_accuracy(&trainer.model, &delex, &provider);
            if acc >= 0.99 {
                return (epoch, acc);
            }
        }
    }
    (cfg.epochs, acc)
}

/// Fraction of DEPS labels restored by delexicalize-then-lexicalize.
pub fn label_round_trip(corpus: &[Sentence]) -> (f64, usize) {
    let (delex, inventory) = delexicalize_corpus(corpus);
    let (mut same, mut total) = (0usize, 0usize);
    for (orig, d) in corpus.iter().zip(&delex) {
        let back = lexicalize_sentence(d);
        for (a, b) in orig.tokens.iter().zip(&back.tokens) {
            for x in &a.deps {
                total += 1;
                same += b.deps.contains(x) as usize;
            }
        }
    }
    (same as f64 / total.max(1) as f64, inventory.len())
}
