//! Absorbing-mask corruption and the confidence-ordered unmasking loop.

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{EncodedSpectrum, ModelBundle};
use crate::peptide::Token;
use crate::scalar::Scalar;

/// Linear keep-probability schedule over `steps` timesteps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NoiseSchedule {
    steps: usize,
}

impl NoiseSchedule {
    pub fn new(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("diffusion.steps must be at least 1".into()));
        }
        Ok(NoiseSchedule { steps })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Probability that a position is still uncorrupted at timestep `t`.
    pub fn keep_prob(&self, t: usize) -> Result<f64> {
        if t > self.steps {
            return Err(Error::Domain(format!("timestep {t} outside [0, {}]", self.steps)));
        }
        Ok(1.0 - t as f64 / self.steps as f64)
    }

    /// Positions committed at each reverse step for a canvas of `len`.
    ///
    /// Never more steps than positions, so every step commits at least one;
    /// the remainder goes to the earliest steps.
    pub fn commit_counts(&self, len: usize) -> Vec<usize> {
        let steps = self.steps.min(len).max(1);
        let (q, r) = (len / steps, len % steps);
        (0..steps).map(|i| q + usize::from(i < r)).collect()
    }

    /// Timestep the denoiser is conditioned on when `masked` of `len` positions are masked.
    pub fn timestep_for(&self, masked: usize, len: usize) -> usize {
        let t = (masked * self.steps).div_ceil(len.max(1));
        t.clamp(1, self.steps)
    }
}

/// Residues, then STOP, then PAD up to `len`.
pub fn padded_target(residues: &[Token], len: usize) -> Result<Vec<Token>> {
    if residues.len() + 1 > len {
        return Err(Error::Domain(format!(
            "peptide of length {} plus STOP does not fit a canvas of {len}",
            residues.len()
        )));
    }
    if residues.iter().any(|t| t.is_special()) {
        return Err(Error::Domain("targets may only contain residues".into()));
    }
    let mut out = residues.to_vec();
    out.push(Token::STOP);
    out.resize(len, Token::PAD);
    Ok(out)
}

/// Replace each position by MASK independently with probability `1 - keep_prob(t)`.
pub fn corrupt<R: Rng>(target: &[Token], t: usize, schedule: &NoiseSchedule, rng: &mut R) -> Result<Vec<Token>> {
    let keep = schedule.keep_prob(t)?;
    Ok(target
        .iter()
        .map(|&tok| if rng.random::<f64>() < keep { tok } else { Token::MASK })
        .collect())
}

/// Anything that maps a partially masked canvas to per-position logits.
pub trait DenoiseScorer {
    fn canvas_len(&self) -> usize;
    fn vocab_size(&self) -> usize;
    /// Row-major `[canvas_len, vocab_size]` logits.
    fn score(&self, canvas: &[Token], t: usize) -> Result<Vec<f64>>;
}

/// A trained diffusion bundle bound to one encoded spectrum.
pub struct ModelDenoiser<'a, T: Scalar> {
    model: &'a ModelBundle<T>,
    enc: &'a EncodedSpectrum<T>,
}

impl<'a, T: Scalar> ModelDenoiser<'a, T> {
    pub fn new(model: &'a ModelBundle<T>, enc: &'a EncodedSpectrum<T>) -> Result<Self> {
        if !model.variant().is_diffusion() {
            return Err(Error::Domain(
                "the ar variant has no denoising loop; use greedy or beam decoding".into(),
            ));
        }
        Ok(ModelDenoiser { model, enc })
    }
}

impl<T: Scalar> DenoiseScorer for ModelDenoiser<'_, T> {
    fn canvas_len(&self) -> usize {
        self.model.config().max_len
    }

    fn vocab_size(&self) -> usize {
        self.model.vocab().len()
    }

    fn score(&self, canvas: &[Token], t: usize) -> Result<Vec<f64>> {
        let logits = self.model.diffusion_denoise(self.enc, canvas, t)?;
        Ok(logits.data().iter().map(|x| x.as_f64()).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Commit {
    pub position: usize,
    pub token: Token,
    pub confidence: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenoiseStep {
    pub t: usize,
    pub masked_before: usize,
    pub commits: Vec<Commit>,
    /// Confidence of every position still masked after this step.
    pub remaining_confidence: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenoiseTrace {
    pub steps: Vec<DenoiseStep>,
    pub canvas: Vec<Token>,
    /// Log-probabilities of each position at the step it was committed.
    pub commit_log_probs: Vec<Vec<f64>>,
}

/// Best non-MASK token and its softmax probability, plus the full log-softmax row.
fn confidence(row: &[f64]) -> (Token, f64, Vec<f64>) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    let log_probs: Vec<f64> = row.iter().map(|x| x - lse).collect();
    let mut best = (Token::PAD, f64::NEG_INFINITY);
    for (i, &lp) in log_probs.iter().enumerate() {
        if i != Token::MASK.index() && lp > best.1 {
            best = (Token(i as u16), lp);
        }
    }
    (best.0, best.1.exp(), log_probs)
}

/// Run the reverse process from an all-MASK canvas, recording every commit.
pub fn denoise_trace(scorer: &dyn DenoiseScorer, schedule: &NoiseSchedule) -> Result<DenoiseTrace> {
    let len = scorer.canvas_len();
    let v = scorer.vocab_size();
    let mut canvas = vec![Token::MASK; len];
    let mut commit_log_probs = vec![Vec::new(); len];
    let mut steps = Vec::new();
    for k in schedule.commit_counts(len) {
        let masked: Vec<usize> = (0..len).filter(|&i| canvas[i] == Token::MASK).collect();
        let t = schedule.timestep_for(masked.len(), len);
        let logits = scorer.score(&canvas, t)?;
        if logits.len() != len * v {
            return Err(Error::Shape {
                op: "denoise",
                left: [len, v],
                right: [logits.len(), 1],
            });
        }
        let mut ranked: Vec<(usize, Token, f64, Vec<f64>)> = masked
            .iter()
            .map(|&i| {
                let (tok, conf, lp) = confidence(&logits[i * v..(i + 1) * v]);
                (i, tok, conf, lp)
            })
            .collect();
        if ranked.iter().any(|r| !r.2.is_finite()) {
            return Err(Error::Domain("denoiser produced non-finite logits".into()));
        }
        // Stable sort keeps lower positions first among equal confidences.
        ranked.sort_by(|a, b| b.2.total_cmp(&a.2));
        let rest = ranked.split_off(k.min(ranked.len()));
        let mut commits = Vec::with_capacity(ranked.len());
        for (i, tok, conf, lp) in ranked {
            canvas[i] = tok;
            commit_log_probs[i] = lp;
            commits.push(Commit {
                position: i,
                token: tok,
                confidence: conf,
            });
        }
        steps.push(DenoiseStep {
            t,
            masked_before: masked.len(),
            commits,
            remaining_confidence: rest.iter().map(|r| (r.0, r.2)).collect(),
        });
    }
    Ok(DenoiseTrace {
        steps,
        canvas,
        commit_log_probs,
    })
}

/// Full canvas, or when `stop_truncate` is set the tokens before the first
/// STOP with trailing PAD removed.
pub fn finalize_canvas(canvas: &[Token], stop_truncate: bool) -> Vec<Token> {
    if !stop_truncate {
        return canvas.to_vec();
    }
    let end = canvas.iter().position(|&t| t == Token::STOP).unwrap_or(canvas.len());
    let mut out = canvas[..end].to_vec();
    while out.last() == Some(&Token::PAD) {
        out.pop();
    }
    out
}

pub fn denoise_loop(scorer: &dyn DenoiseScorer, schedule: &NoiseSchedule, stop_truncate: bool) -> Result<Vec<Token>> {
    let trace = denoise_trace(scorer, schedule)?;
    Ok(finalize_canvas(&trace.canvas, stop_truncate))
}

/// Decode one encoded spectrum with a diffusion bundle.
pub fn decode_diffusion<T: Scalar>(
    model: &ModelBundle<T>,
    enc: &EncodedSpectrum<T>,
    stop_truncate: bool,
) -> Result<Vec<Token>> {
    let scorer = ModelDenoiser::new(model, enc)?;
    let schedule = NoiseSchedule::new(model.config().diffusion_steps)?;
    denoise_loop(&scorer, &schedule, stop_truncate)
}
