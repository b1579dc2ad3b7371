use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    create_dir, format_comparison, format_metrics_table, load_spectra, predict_and_evaluate, row_label,
    RunConfig,
};
use crate::error::{Error, Result};
use crate::inference::DecoderKind;
use crate::losses::LossKind;
use crate::metrics::{compare, Comparison, EvalReport, EvalSummary};
use crate::model::{ModelBundle, Variant};
use crate::training::train;

#[derive(Clone, Debug)]
pub struct GridOptions {
    /// Directory holding `train.mgf`, `val.mgf` and `test.mgf`.
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub jobs: usize,
    pub losses: Vec<LossKind>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub label: String,
    pub variant: Variant,
    pub loss: LossKind,
    pub decoder: DecoderKind,
    pub summary: EvalSummary,
    pub mean_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Overhead {
    pub label: String,
    pub plain_seconds: f64,
    pub knapsack_seconds: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    /// Decoder replacement: every variant with its default decoder.
    pub table1: Vec<GridRow>,
    /// Knapsack beam search for the AR and DS decoders.
    pub table2: Vec<GridRow>,
    /// DM1 and DM2 under each training loss.
    pub table3: Vec<GridRow>,
    pub best_diffusion: String,
    pub comparison: Comparison,
    pub overhead: Vec<Overhead>,
    pub text: String,
}

struct Evaluated {
    row: GridRow,
    report: EvalReport,
}

/// Train every variant/loss pair, decode the test split with each decoder and
/// emit the three result tables plus the best-diffusion vs AR comparison.
pub fn run_grid(cfg: &RunConfig, opts: &GridOptions) -> Result<GridReport> {
    cfg.validate()?;
    if opts.losses.is_empty() {
        return Err(Error::Config("the grid needs at least one loss".into()));
    }
    let vocab = cfg.vocab()?;
    let train_set = load_spectra(&opts.data_dir.join("train.mgf"), cfg, &vocab)?;
    let val_set = load_spectra(&opts.data_dir.join("val.mgf"), cfg, &vocab)?;
    let test_set = load_spectra(&opts.data_dir.join("test.mgf"), cfg, &vocab)?;
    let models_dir = opts.out_dir.join("models");
    let reports_dir = opts.out_dir.join("reports");
    create_dir(&models_dir)?;
    create_dir(&reports_dir)?;

    let mut runs: Vec<(Variant, LossKind)> = vec![(Variant::Ar, LossKind::CrossEntropy), (Variant::Ds, LossKind::CrossEntropy)];
    for v in [Variant::Dm1, Variant::Dm2] {
        if !opts.losses.contains(&LossKind::CrossEntropy) {
            runs.push((v, LossKind::CrossEntropy));
        }
        runs.extend(opts.losses.iter().map(|&l| (v, l)));
    }

    let evaluate_with = |model: &ModelBundle<f32>, label: String, loss: LossKind, decoder: DecoderKind| -> Result<Evaluated> {
        let mut decode = cfg.decode_options(model.variant());
        decode.decoder = decoder;
        let (report, summary) = predict_and_evaluate(model, &test_set, &decode, cfg, opts.jobs)?;
        let variant = model.variant();
        report.save(reports_dir.join(format!("{}-{}-{}.jsonl", variant, loss.name(), decoder.name())))?;
        Ok(Evaluated {
            row: GridRow {
                label,
                variant,
                loss,
                decoder,
                summary: report.summary.clone(),
                mean_seconds: summary.mean_seconds,
            },
            report,
        })
    };

    let mut table1 = Vec::new();
    let mut table2 = Vec::new();
    let mut table3 = Vec::new();
    for (variant, loss) in runs {
        let mut train_cfg = cfg.train_config();
        train_cfg.loss.kind = loss;
        let mut model = ModelBundle::<f32>::new(variant, cfg.model_config(), vocab.clone())?;
        let mut decode = cfg.decode_options(variant);
        decode.decoder = DecoderKind::default_for(variant);
        let history = train(&mut model, &train_set, &val_set, &train_cfg, &decode)?;
        let stem = models_dir.join(format!("{}-{}", variant, loss.name()));
        model.save(stem.with_extension("ckpt"))?;
        history.save(stem.with_extension("history.jsonl"))?;

        let default = DecoderKind::default_for(variant);
        if loss == LossKind::CrossEntropy {
            table1.push(evaluate_with(&model, variant.label().into(), loss, default)?);
            if matches!(variant, Variant::Ar | Variant::Ds) {
                table2.push(evaluate_with(&model, variant.label().into(), loss, DecoderKind::KnapsackBeam)?);
            }
        }
        if matches!(variant, Variant::Dm1 | Variant::Dm2) && opts.losses.contains(&loss) {
            table3.push(evaluate_with(&model, row_label(variant, Some(loss)), loss, default)?);
        }
    }

    let ar = &table1[0];
    let best = table1
        .iter()
        .chain(&table3)
        .filter(|e| e.row.variant.is_diffusion())
        .max_by(|a, b| a.row.summary.aa_recall.total_cmp(&b.row.summary.aa_recall))
        .expect("grid has diffusion rows");
    let comparison = compare(&ar.report, &best.report)?;

    let overhead: Vec<Overhead> = table2
        .iter()
        .map(|k| {
            let plain = table1.iter().find(|e| e.row.variant == k.row.variant).expect("table 1 row");
            Overhead {
                label: k.row.label.clone(),
                plain_seconds: plain.row.mean_seconds,
                knapsack_seconds: k.row.mean_seconds,
                ratio: k.row.mean_seconds / plain.row.mean_seconds.max(f64::MIN_POSITIVE),
            }
        })
        .collect();

    let mut text = String::new();
    text.push_str(&format_metrics_table(
        "Table 1. Replacing the transformer decoder (beam search / denoising)",
        &table_rows(&table1),
    ));
    text.push('\n');
    text.push_str(&format_metrics_table(
        "Table 2. Knapsack beam search",
        &table_rows(&table2),
    ));
    text.push('\n');
    text.push_str(&format_metrics_table("Table 3. Training losses for the diffusion decoders", &table_rows(&table3)));
    text.push('\n');
    text.push_str(&format_comparison(&ar.row.label, &best.row.label, &comparison));
    text.push('\n');
    text.push_str("Knapsack overhead (mean seconds per spectrum)\n");
    for o in &overhead {
        text.push_str(&format!(
            "  {:<14} plain {:.4}s  knapsack {:.4}s  ratio {:.2}x\n",
            o.label, o.plain_seconds, o.knapsack_seconds, o.ratio
        ));
    }

    let report = GridReport {
        table1: table1.iter().map(|e| e.row.clone()).collect(),
        table2: table2.iter().map(|e| e.row.clone()).collect(),
        table3: table3.iter().map(|e| e.row.clone()).collect(),
        best_diffusion: best.row.label.clone(),
        comparison,
        overhead,
        text,
    };
    write_text(&opts.out_dir.join("tables.md"), &report.text)?;
    write_text(&opts.out_dir.join("grid.json"), &serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

fn table_rows(t: &[Evaluated]) -> Vec<(String, &EvalReport)> {
    t.iter().map(|e| (e.row.label.clone(), &e.report)).collect()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
