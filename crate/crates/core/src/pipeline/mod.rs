//! End-to-end commands behind the `novodiff` binary: synthesize a corpus,
//! train, predict, evaluate, compare two reports, and run the full grid.

mod config;
mod grid;

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use config::{DiffusionSection, RunConfig, SearchSection, SynthSection, VocabularyPreset, VocabularySection};
pub use grid::{run_grid, GridOptions, GridReport, GridRow};

use crate::error::{Error, Result};
use crate::inference::{decode_corpus, DecodeOptions, DecoderKind};
use crate::metrics::{compare, evaluate, Comparison, EvalReport, Prediction};
use crate::model::{ModelBundle, Variant};
use crate::peptide::{Peptide, Vocabulary};
use crate::spectra::{preprocess, read_mgf, write_mgf_file, Spectrum};
use crate::synth::{generate_corpus, split_corpus};
use crate::training::{train, History};

pub type Model = ModelBundle<f32>;

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub seed: u64,
    pub n_spectra: usize,
    pub files: Vec<(String, usize)>,
}

/// Write `train.mgf`, `val.mgf`, `test.mgf` and `manifest.json` into `out_dir`.
pub fn synth(cfg: &RunConfig, out_dir: &Path) -> Result<SynthManifest> {
    cfg.validate()?;
    let vocab = cfg.vocab()?;
    let corpus = generate_corpus(&cfg.synth_config(), &vocab, cfg.synth.n_spectra)?;
    let parts = split_corpus(corpus);
    create_dir(out_dir)?;
    let mut files = Vec::new();
    for (name, part) in ["train.mgf", "val.mgf", "test.mgf"].iter().zip(&parts) {
        write_mgf_file(out_dir.join(name), part, &vocab)?;
        files.push((name.to_string(), part.len()));
    }
    let manifest = SynthManifest {
        seed: cfg.seed,
        n_spectra: cfg.synth.n_spectra,
        files,
    };
    let path = out_dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Read and preprocess an MGF file.
pub fn load_spectra(path: &Path, cfg: &RunConfig, vocab: &Vocabulary) -> Result<Vec<Spectrum>> {
    read_mgf(path, vocab)?
        .iter()
        .map(|s| preprocess(s, &cfg.preprocess))
        .collect()
}

/// Train a fresh `variant` bundle; writes the checkpoint and `<checkpoint>.history.jsonl`.
pub fn train_model(
    cfg: &RunConfig,
    variant: Variant,
    train_mgf: &Path,
    val_mgf: Option<&Path>,
    checkpoint: &Path,
) -> Result<(Model, History)> {
    cfg.validate()?;
    let vocab = cfg.vocab()?;
    let train_set = load_spectra(train_mgf, cfg, &vocab)?;
    let val_set = match val_mgf {
        Some(p) => load_spectra(p, cfg, &vocab)?,
        None => Vec::new(),
    };
    let mut model = Model::new(variant, cfg.model_config(), vocab)?;
    let mut decode = cfg.decode_options(variant);
    if decode.decoder == DecoderKind::KnapsackBeam {
        decode.decoder = DecoderKind::default_for(variant);
    }
    let history = train(&mut model, &train_set, &val_set, &cfg.train_config(), &decode)?;
    if let Some(dir) = checkpoint.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    model.save(checkpoint)?;
    history.save(history_path(checkpoint))?;
    Ok((model, history))
}

pub fn history_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".history.jsonl");
    PathBuf::from(s)
}

/// One line of a predictions file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub peptide: Option<String>,
    pub score: Option<f64>,
    pub infeasible: bool,
    pub filtered: bool,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictSummary {
    pub decoder: DecoderKind,
    pub n_spectra: usize,
    pub n_predicted: usize,
    pub mean_seconds: f64,
    pub total_seconds: f64,
}

pub fn predict(
    model: &Model,
    spectra: &[Spectrum],
    opts: &DecodeOptions,
    cfg: &RunConfig,
    jobs: usize,
) -> Result<(Vec<PredictionRecord>, PredictSummary)> {
    opts.decoder.check_variant(model.variant())?;
    let table = if opts.decoder == DecoderKind::KnapsackBeam {
        Some(cfg.knapsack_table(model.vocab())?)
    } else {
        None
    };
    let decoded = decode_corpus(model, spectra, opts, table.as_ref(), jobs)?;
    let records: Vec<PredictionRecord> = spectra
        .iter()
        .zip(&decoded)
        .map(|(s, d)| PredictionRecord {
            id: s.title.clone(),
            peptide: d.peptide.as_ref().map(|p| model.vocab().render(p)),
            score: d.score,
            infeasible: d.infeasible,
            filtered: d.filtered,
            seconds: d.seconds,
        })
        .collect();
    let total: f64 = records.iter().map(|r| r.seconds).sum();
    let summary = PredictSummary {
        decoder: opts.decoder,
        n_spectra: records.len(),
        n_predicted: records.iter().filter(|r| r.peptide.is_some()).count(),
        mean_seconds: if records.is_empty() { 0.0 } else { total / records.len() as f64 },
        total_seconds: total,
    };
    Ok((records, summary))
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Score prediction records against the annotations of `truth`.
pub fn evaluate_predictions(
    records: &[PredictionRecord],
    truth: &[Spectrum],
    vocab: &Vocabulary,
    cfg: &RunConfig,
) -> Result<EvalReport> {
    let predictions = records
        .iter()
        .map(|r| {
            Ok(Prediction {
                id: r.id.clone(),
                peptide: r.peptide.as_deref().map(|p| vocab.parse_sequence(p)).transpose()?,
                score: r.score,
                filtered: r.filtered,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let truths = truth
        .iter()
        .map(|s| {
            let p = s
                .annotation
                .clone()
                .ok_or_else(|| Error::Domain(format!("spectrum {:?} has no SEQ annotation", s.title)))?;
            Ok((s.title.clone(), p))
        })
        .collect::<Result<Vec<(String, Peptide)>>>()?;
    evaluate(&predictions, &truths, vocab, &cfg.metrics)
}

/// Decode and evaluate in memory; the same path `predict` + `evaluate` take.
pub fn predict_and_evaluate(
    model: &Model,
    spectra: &[Spectrum],
    opts: &DecodeOptions,
    cfg: &RunConfig,
    jobs: usize,
) -> Result<(EvalReport, PredictSummary)> {
    let (records, summary) = predict(model, spectra, opts, cfg, jobs)?;
    let report = evaluate_predictions(&records, spectra, model.vocab(), cfg)?;
    Ok((report, summary))
}

/// Compare two saved reports: metric deltas (`b - a`) and a signed-rank test
/// on per-spectrum residue recall.
pub fn compare_reports(a: &EvalReport, b: &EvalReport) -> Result<Comparison> {
    compare(a, b)
}

/// Fixed-width table of the four summary metrics, one row per labelled report.
pub fn format_metrics_table(title: &str, rows: &[(String, &EvalReport)]) -> String {
    let mut out = format!("{title}\n");
    out.push_str(&format!(
        "| {:<34} | {:>17} | {:>16} | {:>12} | {:>9} |\n",
        "Model", "Peptide precision", "Peptide coverage", "AA precision", "AA recall"
    ));
    out.push_str(&format!("|{:-<36}|{:->19}|{:->18}|{:->14}|{:->11}|\n", "", "", "", "", ""));
    for (label, r) in rows {
        let s = &r.summary;
        out.push_str(&format!(
            "| {:<34} | {:>17.3} | {:>16.3} | {:>12.3} | {:>9.3} |\n",
            label, s.peptide_precision, s.peptide_coverage, s.aa_precision, s.aa_recall
        ));
    }
    out
}

pub fn format_comparison(label_a: &str, label_b: &str, c: &Comparison) -> String {
    let d = &c.deltas;
    let mut out = format!("{label_b} vs {label_a}\n");
    out.push_str(&format!("  peptide precision delta {:+.3}\n", d.peptide_precision));
    out.push_str(&format!("  peptide coverage delta  {:+.3}\n", d.peptide_coverage));
    out.push_str(&format!("  aa precision delta      {:+.3}\n", d.aa_precision));
    out.push_str(&format!("  aa recall delta         {:+.3}\n", d.aa_recall));
    match (&c.recall_test, &c.undefined_reason) {
        (Some(w), _) => out.push_str(&format!(
            "  wilcoxon signed-rank on aa recall: statistic {:.1}, n {}, p = {:.3e} ({:?})\n",
            w.statistic, w.n, w.p_value, w.method
        )),
        (None, Some(why)) => out.push_str(&format!("  wilcoxon signed-rank on aa recall: undefined ({why})\n")),
        (None, None) => {}
    }
    out
}

/// Evaluate predictions from a file against an annotated MGF and save the report.
pub fn evaluate_files(cfg: &RunConfig, predictions: &Path, truth_mgf: &Path, out: &Path) -> Result<EvalReport> {
    let vocab = cfg.vocab()?;
    let truth = read_mgf(truth_mgf, &vocab)?;
    let records = read_predictions(predictions)?;
    let report = evaluate_predictions(&records, &truth, &vocab, cfg)?;
    report.save(out)?;
    Ok(report)
}

/// Label used in result tables for a variant/loss pair.
pub fn row_label(variant: Variant, loss: Option<crate::losses::LossKind>) -> String {
    match loss {
        Some(l) => format!("{} + {}", variant.label(), l.label()),
        None => variant.label().to_string(),
    }
}
