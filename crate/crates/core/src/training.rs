//! Supervised training: teacher forcing for the AR decoder, masked-token
//! denoising for the diffusion decoders.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::{corrupt, padded_target, NoiseSchedule};
use crate::error::{Error, Result};
use crate::inference::{decode_corpus, to_predictions, DecodeOptions};
use crate::losses::{apply_loss, LossConfig, LossKind, LossPositions};
use crate::metrics::{evaluate, EvalReport, MatchConfig};
use crate::model::ModelBundle;
use crate::nn::{Adam, AdamConfig, Graph, ParamId, Tensor};
use crate::peptide::{Peptide, Token};
use crate::scalar::Scalar;
use crate::search::KnapsackTable;
use crate::spectra::Spectrum;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: LossConfig,
    pub optimizer: AdamConfig,
    /// Linear learning-rate warmup over this many optimizer steps.
    pub warmup_steps: usize,
    /// Cosine-decay the learning rate to this fraction of its peak by the last step.
    pub final_lr_fraction: f64,
    pub seed: u64,
    /// Validate every this many epochs; 0 disables validation.
    pub val_interval: usize,
    pub checkpoint: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 16,
            loss: LossConfig::default(),
            optimizer: AdamConfig {
                learning_rate: 1e-3,
                clip_norm: Some(1.0),
                ..AdamConfig::default()
            },
            warmup_steps: 100,
            final_lr_fraction: 0.1,
            seed: 0,
            val_interval: 1,
            checkpoint: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("train.epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be at least 1".into()));
        }
        if !(self.optimizer.learning_rate > 0.0) {
            return Err(Error::Config("train.optimizer.learning_rate must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.final_lr_fraction) {
            return Err(Error::Config("train.final_lr_fraction must be in [0, 1]".into()));
        }
        self.loss.validate()
    }

    fn learning_rate(&self, step: usize, total: usize) -> f64 {
        let peak = self.optimizer.learning_rate;
        if step < self.warmup_steps {
            return peak * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = total.saturating_sub(self.warmup_steps).max(1) as f64;
        let progress = ((step - self.warmup_steps) as f64 / span).min(1.0);
        let floor = self.final_lr_fraction;
        peak * (floor + (1.0 - floor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_aa_precision: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.epochs {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n").map_err(|e| Error::Config(format!("writing history: {e}")))?;
        }
        w.flush().map_err(|e| Error::Config(format!("writing history: {e}")))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_jsonl(BufWriter::new(f))
    }
}

fn annotation(s: &Spectrum) -> Result<&Peptide> {
    s.annotation
        .as_ref()
        .ok_or_else(|| Error::Domain(format!("spectrum {:?} has no annotation", s.title)))
}

/// Loss of one annotated spectrum, recorded on `g`.
///
/// `sigma` fixes the DINOISER noise scale for the step.
fn example_loss<T: Scalar>(
    g: &mut Graph<'_, T>,
    model: &ModelBundle<T>,
    s: &Spectrum,
    loss: &LossConfig,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<crate::nn::Var> {
    let truth = annotation(s)?;
    let cfg = match loss.kind {
        LossKind::Dinoiser => LossConfig {
            sigma_min: sigma,
            sigma_max: sigma,
            ..loss.clone()
        },
        _ => loss.clone(),
    };
    let mem = model.encode_graph(g, s)?;
    let pm = s.precursor_mass();
    if !model.variant().is_diffusion() {
        let logits = model.ar_graph(g, mem, pm, truth.tokens())?;
        let mut targets = truth.tokens().to_vec();
        targets.push(Token::STOP);
        let rows: Vec<usize> = (0..targets.len()).collect();
        return apply_loss(g, &cfg, logits, &rows, &targets, rng);
    }
    let steps = model.config().diffusion_steps;
    let schedule = NoiseSchedule::new(steps)?;
    let target = padded_target(truth.tokens(), model.config().max_len)?;
    let t = rng.random_range(1..=steps);
    let mut canvas = corrupt(&target, t, &schedule, rng)?;
    let scored = |canvas: &[Token]| -> Vec<usize> {
        (0..target.len())
            .filter(|&i| target[i] != Token::PAD)
            .filter(|&i| loss.positions == LossPositions::All || canvas[i] == Token::MASK)
            .collect()
    };
    let mut rows = scored(&canvas);
    if rows.is_empty() {
        // Nothing masked among scored positions: mask one so the example still trains.
        let candidates: Vec<usize> = (0..target.len()).filter(|&i| target[i] != Token::PAD).collect();
        canvas[candidates[rng.random_range(0..candidates.len())]] = Token::MASK;
        rows = scored(&canvas);
    }
    let logits = model.denoise_graph(g, mem, pm, &canvas, t)?;
    let targets: Vec<Token> = rows.iter().map(|&i| target[i]).collect();
    apply_loss(g, &cfg, logits, &rows, &targets, rng)
}

fn example_rng(seed: u64, epoch: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64 + 1) << 32) | index as u64);
    rng
}

type Grads<T> = Vec<(ParamId, Tensor<T>)>;

fn batch_gradients<T: Scalar>(
    model: &ModelBundle<T>,
    batch: &[(usize, &Spectrum)],
    loss: &LossConfig,
    sigma: f64,
    seed: u64,
    epoch: usize,
) -> Result<(f64, Grads<T>)> {
    let per_example: Vec<Result<(f64, Grads<T>)>> = batch
        .par_iter()
        .map(|&(index, s)| {
            let mut rng = example_rng(seed, epoch, index);
            let mut g = Graph::new(model.params());
            let l = example_loss(&mut g, model, s, loss, sigma, &mut rng)?;
            let value = g.scalar(l).as_f64();
            Ok((value, g.backward(l)?.into_params()))
        })
        .collect();
    // Reduce in batch order so the result does not depend on thread timing.
    let mut dense: Vec<Option<Tensor<T>>> = vec![None; model.params().len()];
    let mut total = 0.0;
    for r in per_example {
        let (value, grads) = r?;
        total += value;
        for (id, t) in grads {
            match &mut dense[id.index()] {
                Some(acc) => {
                    for (a, b) in acc.data_mut().iter_mut().zip(t.data()) {
                        *a += *b;
                    }
                }
                slot => *slot = Some(t),
            }
        }
    }
    let scale = T::one() / T::of(batch.len() as f64);
    let grads = dense
        .into_iter()
        .enumerate()
        .filter_map(|(i, t)| {
            t.map(|mut t| {
                t.data_mut().iter_mut().for_each(|x| *x *= scale);
                (ParamId::from_index(i), t)
            })
        })
        .collect();
    Ok((total / batch.len() as f64, grads))
}

/// Mean loss over `corpus` without touching the parameters. Corruption and
/// noise use a fixed stream so repeated calls agree.
pub fn corpus_loss<T: Scalar>(model: &ModelBundle<T>, corpus: &[Spectrum], cfg: &TrainConfig) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::Domain("cannot compute the loss of an empty corpus".into()));
    }
    let losses: Vec<Result<f64>> = corpus
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = example_rng(cfg.seed ^ 0x5eed, usize::MAX >> 33, i);
            let sigma = 0.5 * (cfg.loss.sigma_min + cfg.loss.sigma_max);
            let mut g = Graph::new(model.params());
            let l = example_loss(&mut g, model, s, &cfg.loss, sigma, &mut rng)?;
            Ok(g.scalar(l).as_f64())
        })
        .collect();
    let mut sum = 0.0;
    for l in losses {
        sum += l?;
    }
    Ok(sum / corpus.len() as f64)
}

pub struct Validation {
    pub loss: f64,
    pub report: EvalReport,
}

/// Loss plus decoded metrics on an annotated corpus; parameters are untouched.
pub fn validate<T: Scalar>(
    model: &ModelBundle<T>,
    corpus: &[Spectrum],
    cfg: &TrainConfig,
    decode: &DecodeOptions,
    table: Option<&KnapsackTable>,
) -> Result<Validation> {
    let loss = corpus_loss(model, corpus, cfg)?;
    let report = evaluate_corpus(model, corpus, decode, table, rayon::current_num_threads())?;
    Ok(Validation { loss, report })
}

/// Decode `corpus` and score it against its annotations.
pub fn evaluate_corpus<T: Scalar>(
    model: &ModelBundle<T>,
    corpus: &[Spectrum],
    decode: &DecodeOptions,
    table: Option<&KnapsackTable>,
    jobs: usize,
) -> Result<EvalReport> {
    let truths: Vec<(String, Peptide)> = corpus
        .iter()
        .map(|s| Ok((s.title.clone(), annotation(s)?.clone())))
        .collect::<Result<_>>()?;
    let decoded = decode_corpus(model, corpus, decode, table, jobs)?;
    evaluate(&to_predictions(corpus, &decoded), &truths, model.vocab(), &MatchConfig::default())
}

/// Train `model` in place on `train_set`; `val_set` may be empty.
pub fn train<T: Scalar>(
    model: &mut ModelBundle<T>,
    train_set: &[Spectrum],
    val_set: &[Spectrum],
    cfg: &TrainConfig,
    decode: &DecodeOptions,
) -> Result<History> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Domain("training corpus is empty".into()));
    }
    for s in train_set.iter().chain(val_set) {
        annotation(s)?;
    }
    let steps_per_epoch = train_set.len().div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let mut adam = Adam::new(cfg.optimizer.clone(), model.params());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut step_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = History::default();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut step_rng);
        let mut epoch_loss = 0.0;
        let mut lr = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let sigma = if cfg.loss.sigma_max > cfg.loss.sigma_min {
                step_rng.random_range(cfg.loss.sigma_min..=cfg.loss.sigma_max)
            } else {
                cfg.loss.sigma_min
            };
            let batch: Vec<(usize, &Spectrum)> = chunk.iter().map(|&i| (i, &train_set[i])).collect();
            let (loss, grads) = batch_gradients(model, &batch, &cfg.loss, sigma, cfg.seed, epoch)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step: b, loss });
            }
            lr = cfg.learning_rate(step, total_steps);
            adam.set_learning_rate(lr);
            adam.step(model.params_mut(), &grads);
            epoch_loss += loss * chunk.len() as f64;
            step += 1;
        }
        if !model.params().all_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                step: steps_per_epoch,
                loss: f64::NAN,
            });
        }
        let validate_now = cfg.val_interval > 0 && !val_set.is_empty() && (epoch + 1) % cfg.val_interval == 0;
        let (val_loss, val_aa_precision) = if validate_now {
            let v = validate(model, val_set, cfg, decode, None)?;
            (Some(v.loss), Some(v.report.summary.aa_precision))
        } else {
            (None, None)
        };
        history.epochs.push(EpochRecord {
            epoch: epoch + 1,
            steps: step,
            learning_rate: lr,
            train_loss: epoch_loss / train_set.len() as f64,
            val_loss,
            val_aa_precision,
        });
        if let Some(path) = &cfg.checkpoint {
            model.save(path)?;
        }
    }
    Ok(history)
}
