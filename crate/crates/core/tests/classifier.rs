mod support;

use std::path::PathBuf;

use conjprop::classify::{
    apply_with, extract_instances, featurize, train, training_set, ApplyConfig, Classifier, ExtractConfig,
    FeatureGroups, KernelConfig, ModelKind, MlpConfig, PropModel, TrainConfig,
};
use conjprop::conllu::{parse_corpus, Node, Sentence, TokenId};
use conjprop::convert::{always_baseline, convert, ConverterConfig};
use conjprop::embed::HashEmbeddings;
use conjprop::graph::{enhanced_edges, Edge};
use conjprop::synth::perturb_enhanced;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::learn;

fn load(name: &str) -> Sentence {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "tests", "data", name].iter().collect();
    parse_corpus(&std::fs::read_to_string(path).unwrap()).unwrap().remove(0)
}

#[test]
fn kernel_solves_xor_and_matches_oracle() {
    learn::check_kernel_xor().unwrap();
}

#[test]
fn mlp_gradients_match_finite_differences() {
    for seed in 0..3 {
        let err = learn::mlp_gradient_error(seed);
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

fn small_task_model(kind: ModelKind, groups: Option<FeatureGroups>) -> (PropModel, learn::PropagationTask) {
    let task = learn::propagation_task(3, 60, 20);
    let cfg = TrainConfig {
        kind,
        groups,
        mlp: MlpConfig {
            hidden: vec![16],
            max_epochs: 5,
            ..MlpConfig::default()
        },
        ..TrainConfig::default()
    };
    let provider = HashEmbeddings::new(2, 4, 9);
    let provider: Option<&dyn conjprop::embed::EmbeddingProvider> =
        if cfg.groups().embeddings { Some(&provider) } else { None };
    let (inst, feats) =
        training_set(&task.train_input, &task.train_gold, provider, cfg.groups(), &cfg.extract).unwrap();
    (train(&inst, &feats, &cfg).unwrap(), task)
}

#[test]
fn trained_kernel_decision_matches_recomputation() {
    let (model, task) = small_task_model(ModelKind::Kernel, None);
    let Classifier::Kernel(svm) = &model.classifier else { panic!() };
    let dim = model.vocab.len();
    let (inst, feats) = training_set(
        &task.test_input,
        &task.test_gold,
        None,
        model.groups,
        &model.extract,
    )
    .unwrap();
    assert!(!inst.is_empty());
    for f in &feats {
        let x = model.encode(f).unwrap();
        let got = model.decision(f).unwrap();
        assert!((got - learn::oracle_decision(svm, &x, dim)).abs() < 1e-9);
    }
}

#[test]
fn models_reload_bit_identically() {
    for kind in [ModelKind::Kernel, ModelKind::Mlp] {
        let (model, task) = small_task_model(kind, None);
        let bytes = model.to_bytes();
        let back = PropModel::from_bytes(&bytes).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.to_bytes(), bytes);
        let provider = HashEmbeddings::new(2, 4, 9);
        let p: Option<&dyn conjprop::embed::EmbeddingProvider> =
            if model.groups.embeddings { Some(&provider) } else { None };
        for (i, s) in task.test_input.iter().enumerate() {
            for inst in extract_instances(s, i, None, &model.extract).unwrap() {
                let f = featurize(&inst, s, p, model.groups).unwrap();
                assert_eq!(model.decision(&f).unwrap().to_bits(), back.decision(&f).unwrap().to_bits());
            }
        }
    }
}

#[test]
fn corrupted_model_is_rejected() {
    let (model, _) = small_task_model(ModelKind::Kernel, None);
    let bytes = model.to_bytes();
    assert!(PropModel::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    assert!(PropModel::from_bytes(&bad).is_err());
}

#[test]
fn ablation_groups_change_dimensions() {
    let (full, _) = small_task_model(ModelKind::Kernel, None);
    let (no_tree, _) = small_task_model(
        ModelKind::Kernel,
        Some(FeatureGroups {
            tree: false,
            ..FeatureGroups::defaults(ModelKind::Kernel)
        }),
    );
    assert!(no_tree.vocab.len() < full.vocab.len());
    assert!(no_tree.vocab.names().all(|n| !n.starts_with("lin=") && !n.starts_with("coord=")));
    let (dense, _) = small_task_model(ModelKind::Mlp, None);
    assert_eq!(dense.dense_dim, 3 * 4);
}

#[test]
fn always_positive_equals_always_baseline() {
    let cfg = ExtractConfig {
        excluded_outgoing: Default::default(),
        include_root: true,
        ..ExtractConfig::default()
    };
    let task = learn::propagation_task(5, 100, 0);
    for (i, s) in task.train_input.iter().enumerate() {
        let out = apply_with(s, i, &cfg, &ApplyConfig::default(), |_| Ok(true)).unwrap();
        assert_eq!(out, always_baseline(s), "sentence {i}");
    }
    for name in ["wrote-published.conllu", "passive-subject.conllu", "imperative-subject.conllu", "shared-subject.conllu"] {
        let s = load(name);
        let out = apply_with(&s, 0, &cfg, &ApplyConfig::default(), |_| Ok(true)).unwrap();
        assert_eq!(out, always_baseline(&s), "{name}");
    }
}

#[test]
fn never_positive_only_seeds() {
    let s = load("wrote-published.conllu");
    let out = apply_with(&s, 0, &ExtractConfig::default(), &ApplyConfig::default(), |_| Ok(false)).unwrap();
    let mut seeded = s.clone();
    conjprop::convert::seed_enhanced(&mut seeded);
    assert_eq!(out, seeded);
}

#[test]
fn wrote_published_kernel_model_propagates_core_arguments() {
    let input = load("wrote-published.conllu");
    let gold = load("wrote-published-gold.conllu");
    let rbc = convert(&input, &ConverterConfig::rbc());
    let cfg = TrainConfig::default();
    let corpus = vec![input.clone(), input.clone(), input.clone()];
    let golds = vec![gold.clone(), gold, rbc];
    let (inst, feats) = training_set(&corpus, &golds, None, cfg.groups(), &cfg.extract).unwrap();
    assert_eq!(inst.len(), 9);
    let model = train(&inst, &feats, &cfg).unwrap();
    let out = conjprop::classify::apply(&model, &input, 0, None, &ApplyConfig::default()).unwrap();
    let e = |h: u32, d: u32, l: &str| Edge::new(Node::Word(TokenId::new(h)), TokenId::new(d), l);
    let enhanced = enhanced_edges(&out);
    assert!(enhanced.contains(&e(7, 4, "nsubj")));
    assert!(enhanced.contains(&e(7, 9, "obj")));
}

#[test]
fn features_ignore_the_enhanced_layer() {
    let task = learn::propagation_task(8, 40, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let provider = HashEmbeddings::new(2, 3, 1);
    let groups = FeatureGroups {
        morphology: true,
        embeddings: true,
        tree: true,
    };
    for (i, s) in task.train_input.iter().enumerate() {
        let other = perturb_enhanced(&mut rng, s, 0.5, 5);
        for inst in extract_instances(s, i, None, &ExtractConfig::default()).unwrap() {
            let a = featurize(&inst, s, Some(&provider), groups).unwrap();
            let b = featurize(&inst, &other, Some(&provider), groups).unwrap();
            assert_eq!(a, b);
        }
    }
}

#[test]
fn passive_gold_label_records_passive_rewrite() {
    let input = load("passive-subject.conllu");
    let gold = convert(&input, &ConverterConfig::rbc2_fix());
    let inst = extract_instances(&input, 0, Some(&gold), &ExtractConfig::default()).unwrap();
    let subj = inst.iter().find(|i| i.target == Node::Word(TokenId::new(1))).unwrap();
    assert_eq!(subj.label, "nsubj:pass");
    assert_eq!(subj.gold, Some(true));
    assert_eq!(subj.gold_label.as_deref(), Some("nsubj"));
}

#[test]
fn kernel_beats_rbc_on_synthetic_task() {
    println!("{}", learn::check_kernel_beats_rbc(11, 150, 100).unwrap());
}

#[test]
fn class_weights_option_trains() {
    let task = learn::propagation_task(2, 40, 0);
    let cfg = TrainConfig {
        kernel: KernelConfig {
            class_weights: true,
            ..KernelConfig::default()
        },
        ..TrainConfig::default()
    };
    let (inst, feats) =
        training_set(&task.train_input, &task.train_gold, None, cfg.groups(), &cfg.extract).unwrap();
    assert!(train(&inst, &feats, &cfg).is_ok());
}
