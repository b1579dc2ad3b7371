use std::fs;

use novodiff::inference::DecoderKind;
use novodiff::pipeline::{self, Model, RunConfig, VocabularyPreset};
use novodiff::{Error, ModelConfig, Variant};

fn tiny() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.seed = 3;
    cfg.vocabulary.preset = VocabularyPreset::Toy;
    cfg.synth.n_spectra = 40;
    cfg.synth.length_range = [3, 5];
    cfg.model = ModelConfig {
        model_dim: 16,
        heads: 2,
        ds_dim: 8,
        max_len: 8,
        ..Default::default()
    };
    cfg.train.epochs = 1;
    cfg.train.batch_size = 8;
    cfg.train.val_interval = 0;
    cfg
}

#[test]
fn toml_round_trip() {
    let cfg = tiny();
    let text = cfg.to_toml().unwrap();
    assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
}

#[test]
fn config_rejections() {
    for bad in [
        "sed = 1",
        "[model]\nwidth = 3",
        "[train]\nseed = 4",
        "[model]\ndiffusion_steps = 3",
        "[synth]\nlength_range = [6, 3]",
        "[search]\nknapsack_resolution = 0.5",
        "variant = \"ar\"\n[search]\ndecoder = \"diffusion\"",
        "[model]\nmodel_dim = 30\nheads = 4",
    ] {
        let err = RunConfig::from_toml(bad).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{bad:?}: {err}");
    }
    let cfg = RunConfig::from_toml("seed = 5\nvariant = \"dm2\"\n[diffusion]\nsteps = 4").unwrap();
    assert_eq!(cfg.model_config().diffusion_steps, 4);
    assert_eq!(cfg.model_config().seed, 5);
    assert_eq!(cfg.train_config().seed, 5);
    assert_eq!(cfg.decode_options(Variant::Dm2).decoder, DecoderKind::Diffusion);
}

#[test]
fn synth_train_predict_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny();
    let data = dir.path().join("data");
    let manifest = pipeline::synth(&cfg, &data).unwrap();
    let counts: Vec<usize> = manifest.files.iter().map(|f| f.1).collect();
    assert_eq!(counts.iter().sum::<usize>(), 40);
    let again = dir.path().join("again");
    pipeline::synth(&cfg, &again).unwrap();
    for f in ["train.mgf", "val.mgf", "test.mgf"] {
        assert_eq!(fs::read(data.join(f)).unwrap(), fs::read(again.join(f)).unwrap());
    }

    let ckpt = dir.path().join("m").join("dm1.ckpt");
    let (model, history) =
        pipeline::train_model(&cfg, Variant::Dm1, &data.join("train.mgf"), Some(&data.join("val.mgf")), &ckpt).unwrap();
    assert_eq!(history.epochs.len(), 1);
    assert!(pipeline::history_path(&ckpt).exists());
    let loaded = Model::load(&ckpt).unwrap();
    assert_eq!(loaded.params(), model.params());

    let test = pipeline::load_spectra(&data.join("test.mgf"), &cfg, model.vocab()).unwrap();
    let opts = cfg.decode_options(Variant::Dm1);
    let (records, summary) = pipeline::predict(&loaded, &test, &opts, &cfg, 1).unwrap();
    assert_eq!(records.len(), test.len());
    assert_eq!(summary.decoder, DecoderKind::Diffusion);
    let preds = dir.path().join("p.jsonl");
    pipeline::write_predictions(&preds, &records).unwrap();
    assert_eq!(pipeline::read_predictions(&preds).unwrap(), records);

    let out = dir.path().join("r.jsonl");
    let report = pipeline::evaluate_files(&cfg, &preds, &data.join("test.mgf"), &out).unwrap();
    let (direct, _) = pipeline::predict_and_evaluate(&loaded, &test, &opts, &cfg, 1).unwrap();
    assert_eq!(report.summary, direct.summary);

    let c = pipeline::compare_reports(&report, &report).unwrap();
    assert_eq!(c.deltas.aa_recall, 0.0);
    assert!(c.recall_test.is_none() && c.undefined_reason.is_some());

    let mut bad = opts.clone();
    bad.decoder = DecoderKind::Beam;
    assert!(pipeline::predict(&loaded, &test, &bad, &cfg, 1).is_err());
    bad.decoder = DecoderKind::KnapsackBeam;
    let (records, _) = pipeline::predict(&loaded, &test, &bad, &cfg, 1).unwrap();
    assert_eq!(records.len(), test.len());
}
