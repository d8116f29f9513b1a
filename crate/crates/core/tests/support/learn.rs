//! Classifier checks: kernel oracle, gradient check and a synthetic
//! propagation task whose gold layer the rule-based converter cannot fully
//! reproduce.

use conjprop::classify::mlp::Mlp;
use conjprop::classify::svm::{KernelConfig, KernelSvm};
use conjprop::classify::{apply, train, training_set, ApplyConfig, ModelKind, PropModel, TrainConfig};
use conjprop::conllu::Sentence;
use conjprop::convert::{convert, ConverterConfig};
use conjprop::eval::score;
use conjprop::synth::{random_corpus, SynthConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Degree-2 polynomial kernel on dense vectors, written out term by term.
pub fn dense_kernel(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
    }
    (dot + 1.0) * (dot + 1.0)
}

pub fn densify(x: &[(u32, f64)], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    for &(i, v) in x {
        out[i as usize] += v;
    }
    out
}

pub fn oracle_decision(m: &KernelSvm, x: &[(u32, f64)], dim: usize) -> f64 {
    let xd = densify(x, dim);
    let mut sum = m.bias;
    for (sv, c) in m.support.iter().zip(&m.coef) {
        sum += c * dense_kernel(&densify(sv, dim), &xd);
    }
    sum
}

pub fn xor_data() -> (Vec<Vec<(u32, f64)>>, Vec<bool>) {
    let x = vec![
        vec![(0, -1.0), (1, -1.0)],
        vec![(0, -1.0), (1, 1.0)],
        vec![(0, 1.0), (1, -1.0)],
        vec![(0, 1.0), (1, 1.0)],
    ];
    (x, vec![false, true, true, false])
}

/// XOR training accuracy, decision recomputation and dual feasibility.
pub fn check_kernel_xor() -> Result<String, String> {
    let (x, y) = xor_data();
    let cfg = KernelConfig {
        c: 10.0,
        ..KernelConfig::default()
    };
    let m = KernelSvm::train(&x, &y, &cfg).map_err(|e| e.to_string())?;
    let correct = x.iter().zip(&y).filter(|(xi, &yi)| m.predict(xi) == yi).count();
    if correct != x.len() {
        return Err(format!("XOR accuracy {}/{}", correct, x.len()));
    }
    let mut max_diff: f64 = 0.0;
    // Grid of points, not only the training set.
    for a in -4..=4 {
        for b in -4..=4 {
            let p = vec![(0, a as f64 / 2.0), (1, b as f64 / 2.0)];
            max_diff = max_diff.max((m.decision(&p) - oracle_decision(&m, &p, 2)).abs());
        }
    }
    if max_diff > 1e-9 {
        return Err(format!("decision differs from recomputation by {:e}", max_diff));
    }
    let balance: f64 = m.coef.iter().sum();
    if balance.abs() > 1e-9 || m.coef.iter().any(|c| c.abs() > cfg.c + 1e-12) {
        return Err("dual constraints violated".into());
    }
    Ok(format!("4/4 correct, max decision deviation {:.1e}", max_diff))
}

/// Largest relative error between analytic and central-difference
/// gradients over every parameter of a small network.
pub fn mlp_gradient_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = Mlp::new(6, &[5, 4], &mut rng);
    let x = vec![(0, 1.0), (2, 0.5), (5, -1.5)];
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for positive in [false, true] {
        let (_, g) = m.loss_and_grad(&x, positive);
        for l in 0..m.weights.len() {
            for idx in 0..m.weights[l].len() {
                let (r, c) = (idx / m.weights[l].ncols(), idx % m.weights[l].ncols());
                let orig = m.weights[l][[r, c]];
                m.weights[l][[r, c]] = orig + h;
                let up = m.loss(&x, positive);
                m.weights[l][[r, c]] = orig - h;
                let down = m.loss(&x, positive);
                m.weights[l][[r, c]] = orig;
                worst = worst.max(rel_err(g.weights[l][[r, c]], (up - down) / (2.0 * h)));
            }
            for k in 0..m.biases[l].len() {
                let orig = m.biases[l][k];
                m.biases[l][k] = orig + h;
                let up = m.loss(&x, positive);
                m.biases[l][k] = orig - h;
                let down = m.loss(&x, positive);
                m.biases[l][k] = orig;
                worst = worst.max(rel_err(g.biases[l][k], (up - down) / (2.0 * h)));
            }
        }
    }
    worst
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-8 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

pub struct PropagationTask {
    pub train_input: Vec<Sentence>,
    pub train_gold: Vec<Sentence>,
    pub test_input: Vec<Sentence>,
    pub test_gold: Vec<Sentence>,
}

/// Random trees whose gold enhanced layer is the fixpoint converter with
/// non-core propagation and the passive/imperative fix.
pub fn propagation_task(seed: u64, train: usize, test: usize) -> PropagationTask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = SynthConfig {
        min_tokens: 4,
        max_tokens: 15,
        ..SynthConfig::default()
    };
    let gold_cfg = ConverterConfig::rbc2_fix();
    let train_input = random_corpus(&mut rng, train, &cfg);
    let test_input = random_corpus(&mut rng, test, &cfg);
    let train_gold = train_input.iter().map(|s| convert(s, &gold_cfg)).collect();
    let test_gold = test_input.iter().map(|s| convert(s, &gold_cfg)).collect();
    PropagationTask {
        train_input,
        train_gold,
        test_input,
        test_gold,
    }
}

pub fn classifier_f1(model: &PropModel, task: &PropagationTask) -> f64 {
    let cfg = ApplyConfig {
        relabel_subjects: true,
        iterate: true,
        ..ApplyConfig::default()
    };
    let out: Vec<Sentence> = task
        .test_input
        .iter()
        .enumerate()
        .map(|(i, s)| apply(model, s, i, None, &cfg).unwrap())
        .collect();
    score(&out, &task.test_gold).unwrap().f1()
}

pub fn rbc_f1(task: &PropagationTask) -> f64 {
    let out: Vec<Sentence> = task.test_input.iter().map(|s| convert(s, &ConverterConfig::rbc())).collect();
    score(&out, &task.test_gold).unwrap().f1()
}

/// Kernel classifier against RBC on held-out synthetic data.
pub fn check_kernel_beats_rbc(seed: u64, train_n: usize, test_n: usize) -> Result<String, String> {
    let task = propagation_task(seed, train_n, test_n);
    let cfg = TrainConfig {
        kind: ModelKind::Kernel,
        ..TrainConfig::default()
    };
    let (inst, feats) = training_set(&task.train_input, &task.train_gold, None, cfg.groups(), &cfg.extract)
        .map_err(|e| e.to_string())?;
    let model = train(&inst, &feats, &cfg).map_err(|e| e.to_string())?;
    let kernel = classifier_f1(&model, &task);
    let rbc = rbc_f1(&task);
    let line = format!(
        "kernel F1 {:.1} vs RBC F1 {:.1} on {} synthetic test sentences ({} training instances)",
        kernel * 100.0,
        rbc * 100.0,
        test_n,
        inst.len()
    );
    if kernel > rbc {
        Ok(line)
    } else {
        Err(line)
    }
}
