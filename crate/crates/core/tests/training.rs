use novodiff::inference::DecodeOptions;
use novodiff::losses::LossKind;
use novodiff::spectra::{preprocess, PreprocessConfig};
use novodiff::synth::{generate_corpus, SynthConfig};
use novodiff::training::{corpus_loss, train, validate, TrainConfig};
use novodiff::{Error, ModelBundle64, ModelConfig, Spectrum, Variant, Vocabulary};

fn small() -> ModelConfig {
    ModelConfig {
        model_dim: 32,
        ds_dim: 16,
        max_len: 8,
        ..Default::default()
    }
}

fn corpus(n: usize, seed: u64) -> Vec<Spectrum> {
    let raw = generate_corpus(
        &SynthConfig {
            length_range: [3, 5],
            seed,
            ..Default::default()
        },
        &Vocabulary::toy(),
        n,
    )
    .unwrap();
    raw.iter().map(|s| preprocess(s, &PreprocessConfig::default()).unwrap()).collect()
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        warmup_steps: 2,
        val_interval: 0,
        ..Default::default()
    }
}

#[test]
fn every_variant_overfits_one_example() {
    let one = corpus(1, 3);
    for variant in Variant::ALL {
        let mut m = ModelBundle64::new(variant, small(), Vocabulary::toy()).unwrap();
        let mut cfg = TrainConfig {
            epochs: 500,
            batch_size: 1,
            warmup_steps: 10,
            val_interval: 0,
            ..Default::default()
        };
        cfg.optimizer.learning_rate = 3e-3;
        let h = train(&mut m, &one, &[], &cfg, &DecodeOptions::for_variant(variant)).unwrap();
        let last = h.epochs.last().unwrap();
        assert_eq!(last.steps, 500);
        assert!(last.train_loss < 0.01, "{variant}: final loss {}", last.train_loss);
    }
}

#[test]
fn loss_goes_down() {
    let data = corpus(32, 4);
    for variant in [Variant::Ar, Variant::Dm1] {
        let mut m = ModelBundle64::new(variant, small(), Vocabulary::toy()).unwrap();
        let h = train(&mut m, &data, &[], &quick(6), &DecodeOptions::for_variant(variant)).unwrap();
        let first = h.epochs[0].train_loss;
        let last = h.epochs.last().unwrap().train_loss;
        assert!(last < first, "{variant}: {first} -> {last}");
    }
}

#[test]
fn same_seed_same_history_and_weights() {
    let data = corpus(12, 5);
    for (variant, loss) in [(Variant::Ar, LossKind::CrossEntropy), (Variant::Dm2, LossKind::Dinoiser)] {
        let mut cfg = quick(2);
        cfg.loss.kind = loss;
        cfg.seed = 9;
        let run = || {
            let mut m = ModelBundle64::new(variant, small(), Vocabulary::toy()).unwrap();
            let h = train(&mut m, &data, &data[..4], &TrainConfig { val_interval: 1, ..cfg.clone() }, &DecodeOptions::for_variant(variant)).unwrap();
            (h, m)
        };
        let (h1, m1) = run();
        let (h2, m2) = run();
        assert_eq!(h1, h2);
        for (a, b) in m1.params().iter().zip(m2.params().iter()) {
            let bits = |t: &novodiff::Tensor64| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a.2), bits(b.2), "{variant} {}", a.1);
        }
        cfg.seed = 10;
        let mut m = ModelBundle64::new(variant, small(), Vocabulary::toy()).unwrap();
        let h3 = train(&mut m, &data, &[], &cfg, &DecodeOptions::for_variant(variant)).unwrap();
        assert_ne!(h1.epochs[0].train_loss, h3.epochs[0].train_loss);
    }
}

#[test]
fn validation_leaves_the_model_alone() {
    let data = corpus(6, 6);
    let m = ModelBundle64::new(Variant::Dm1, small(), Vocabulary::toy()).unwrap();
    let before = m.params().clone();
    let cfg = quick(1);
    let opts = DecodeOptions::for_variant(Variant::Dm1);
    let a = validate(&m, &data, &cfg, &opts, None).unwrap();
    let b = validate(&m, &data, &cfg, &opts, None).unwrap();
    assert_eq!(a.loss, b.loss);
    assert_eq!(a.report, b.report);
    assert_eq!(a.loss, corpus_loss(&m, &data, &cfg).unwrap());
    assert!(m.params() == &before);
}

#[test]
fn bad_inputs() {
    let mut m = ModelBundle64::new(Variant::Ar, small(), Vocabulary::toy()).unwrap();
    let opts = DecodeOptions::for_variant(Variant::Ar);
    let err = train(&mut m, &[], &[], &quick(1), &opts).unwrap_err();
    assert!(matches!(err, Error::Domain(_)), "{err}");

    let mut data = corpus(3, 7);
    data[1].annotation = None;
    let err = train(&mut m, &data, &[], &quick(1), &opts).unwrap_err();
    assert!(err.to_string().contains("no annotation"), "{err}");

    let data = corpus(3, 7);
    let err = train(&mut m, &data, &[], &TrainConfig { batch_size: 0, ..quick(1) }, &opts).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}
