use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use novodiff::inference::DecoderKind;
use novodiff::losses::LossKind;
use novodiff::metrics::EvalReport;
use novodiff::model::Variant;
use novodiff::pipeline::{self, GridOptions, Model, RunConfig};
use novodiff::Error;

#[derive(Parser)]
#[command(name = "novodiff", version, about = "De novo peptide sequencing with autoregressive and diffusion decoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Clone)]
struct DecodeFlags {
    #[arg(long)]
    decoder: Option<DecoderKind>,
    #[arg(long)]
    beam_width: Option<usize>,
    #[arg(long)]
    tolerance_ppm: Option<f64>,
    /// Cut diffusion outputs at the first STOP token.
    #[arg(long)]
    stop_truncate: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an annotated synthetic corpus split into train/val/test MGF files.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one decoder variant and write its checkpoint and history.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long)]
        loss: Option<LossKind>,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Decode every spectrum of an MGF file.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        decode: DecodeFlags,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Score a predictions file against the annotations of an MGF file.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Metric deltas and a signed-rank test between two evaluation reports.
    Compare {
        baseline: PathBuf,
        candidate: PathBuf,
        /// Also write the comparison as JSON.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train and evaluate every variant, decoder and loss; print the three tables.
    Grid {
        #[command(flatten)]
        common: Common,
        /// Directory with train.mgf, val.mgf and test.mgf.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e.category() {
        "config" => 2,
        "input" => 3,
        "io" => 4,
        "checkpoint" => 5,
        "domain" => 6,
        "training" => 7,
        _ => 8,
    }
}

fn label(p: &Path) -> String {
    p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Synth { common, out } => {
            let cfg = common.load()?;
            let m = pipeline::synth(&cfg, &out)?;
            for (name, n) in &m.files {
                println!("{name}: {n} spectra");
            }
        }
        Command::Train {
            common,
            variant,
            loss,
            train,
            val,
            checkpoint,
            epochs,
        } => {
            let mut cfg = common.load()?;
            if let Some(l) = loss {
                cfg.train.loss.kind = l;
            }
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            let variant = variant.unwrap_or(cfg.variant);
            let (model, history) = pipeline::train_model(&cfg, variant, &train, val.as_deref(), &checkpoint)?;
            for r in &history.epochs {
                eprintln!("epoch {:3} train loss {:.4}{}", r.epoch, r.train_loss, match r.val_loss {
                    Some(v) => format!(" val loss {v:.4}"),
                    None => String::new(),
                });
            }
            let pc = model.param_count();
            println!(
                "{} trained: {} parameters ({} decoder); checkpoint {}",
                variant,
                pc.total(),
                pc.decoder,
                checkpoint.display()
            );
        }
        Command::Predict {
            common,
            checkpoint,
            input,
            output,
            decode,
            jobs,
        } => {
            let mut cfg = common.load()?;
            let model = Model::load(&checkpoint)?;
            if let Some(d) = decode.decoder {
                cfg.search.decoder = Some(d);
            }
            if let Some(w) = decode.beam_width {
                cfg.search.beam_width = w;
            }
            if let Some(t) = decode.tolerance_ppm {
                cfg.search.tolerance_ppm = t;
            }
            cfg.diffusion.stop_truncate |= decode.stop_truncate;
            cfg.variant = model.variant();
            cfg.validate()?;
            let opts = cfg.decode_options(model.variant());
            let spectra = pipeline::load_spectra(&input, &cfg, model.vocab())?;
            let (records, summary) = pipeline::predict(&model, &spectra, &opts, &cfg, jobs)?;
            for r in &records {
                eprintln!("{}\t{:.6}s\t{}", r.id, r.seconds, r.peptide.as_deref().unwrap_or("-"));
            }
            pipeline::write_predictions(&output, &records)?;
            println!(
                "{} decoder: {}/{} spectra predicted, mean {:.6}s per spectrum, total {:.3}s",
                summary.decoder, summary.n_predicted, summary.n_spectra, summary.mean_seconds, summary.total_seconds
            );
        }
        Command::Evaluate {
            common,
            predictions,
            truth,
            output,
        } => {
            let cfg = common.load()?;
            let report = pipeline::evaluate_files(&cfg, &predictions, &truth, &output)?;
            print!("{}", pipeline::format_metrics_table("Evaluation", &[(label(&predictions), &report)]));
            if report.summary.precision_undefined {
                println!("note: no spectrum was predicted; precision metrics are undefined and shown as 0");
            }
        }
        Command::Compare {
            baseline,
            candidate,
            output,
        } => {
            let a = EvalReport::load(&baseline)?;
            let b = EvalReport::load(&candidate)?;
            let c = pipeline::compare_reports(&a, &b)?;
            let (la, lb) = (label(&baseline), label(&candidate));
            print!("{}", pipeline::format_metrics_table("Comparison", &[(la.clone(), &a), (lb.clone(), &b)]));
            print!("{}", pipeline::format_comparison(&la, &lb, &c));
            if let Some(p) = output {
                std::fs::write(&p, serde_json::to_string_pretty(&c)?).map_err(|e| Error::Io { path: p, source: e })?;
            }
        }
        Command::Grid { common, data, out, jobs } => {
            let cfg = common.load()?;
            let report = pipeline::run_grid(
                &cfg,
                &GridOptions {
                    data_dir: data,
                    out_dir: out,
                    jobs,
                    losses: LossKind::ALL.to_vec(),
                },
            )?;
            print!("{}", report.text);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.category());
            ExitCode::from(exit_code(&e))
        }
    }
}
