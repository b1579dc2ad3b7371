use std::cmp::Ordering;

use super::knapsack::KnapsackTable;
use crate::diffusion::DenoiseTrace;
use crate::error::{Error, Result};
use crate::model::{EncodedSpectrum, ModelBundle};
use crate::peptide::{Peptide, Token, Vocabulary, WATER};
use crate::spectra::Spectrum;
use crate::scalar::Scalar;

/// Next-token log-probabilities given a residue prefix.
pub trait StepScorer {
    fn vocab_size(&self) -> usize;
    /// Longest hypothesis, in residues.
    fn max_len(&self) -> usize;
    /// Log-softmax over the whole vocabulary, specials included.
    fn step_log_probs(&self, prefix: &[Token]) -> Result<Vec<f64>>;
}

pub struct ArScorer<'a, T: Scalar> {
    model: &'a ModelBundle<T>,
    enc: &'a EncodedSpectrum<T>,
}

impl<'a, T: Scalar> ArScorer<'a, T> {
    pub fn new(model: &'a ModelBundle<T>, enc: &'a EncodedSpectrum<T>) -> Result<Self> {
        if model.variant().is_diffusion() {
            return Err(Error::Domain(format!(
                "{} is a diffusion decoder; it decodes with the denoising loop",
                model.variant()
            )));
        }
        Ok(ArScorer { model, enc })
    }
}

pub(crate) fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    row.iter().map(|x| x - lse).collect()
}

impl<T: Scalar> StepScorer for ArScorer<'_, T> {
    fn vocab_size(&self) -> usize {
        self.model.vocab().len()
    }

    fn max_len(&self) -> usize {
        self.model.config().max_len
    }

    fn step_log_probs(&self, prefix: &[Token]) -> Result<Vec<f64>> {
        let logits = self.model.ar_decode_step(self.enc, prefix)?;
        let row: Vec<f64> = logits.iter().map(|x| x.as_f64()).collect();
        Ok(log_softmax(&row))
    }
}

/// Replays the per-position distributions a denoising run committed with, so
/// a diffusion decode can be re-searched left to right under mass constraints.
pub struct TraceScorer {
    log_probs: Vec<Vec<f64>>,
    vocab_size: usize,
}

impl TraceScorer {
    pub fn new(trace: &DenoiseTrace, vocab_size: usize) -> Result<Self> {
        if trace.commit_log_probs.iter().any(|r| r.len() != vocab_size) {
            return Err(Error::Domain("denoise trace does not cover every position".into()));
        }
        Ok(TraceScorer {
            log_probs: trace.commit_log_probs.clone(),
            vocab_size,
        })
    }
}

impl StepScorer for TraceScorer {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn max_len(&self) -> usize {
        self.log_probs.len()
    }

    fn step_log_probs(&self, prefix: &[Token]) -> Result<Vec<f64>> {
        self.log_probs
            .get(prefix.len())
            .cloned()
            .ok_or_else(|| Error::Domain("prefix longer than the canvas".into()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Residues only; STOP is implied by `stopped`.
    pub tokens: Vec<Token>,
    /// Total log-probability, including the STOP step when there was one.
    pub score: f64,
    /// Sum of residue masses in Da (no water).
    pub mass: f64,
    pub stopped: bool,
}

impl Hypothesis {
    fn emitted(&self) -> impl Iterator<Item = Token> + '_ {
        self.tokens.iter().copied().chain(self.stopped.then_some(Token::STOP))
    }
}

/// Higher score first, then lexicographically smaller emitted token ids.
fn rank(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.emitted().cmp(b.emitted()))
}

/// Constraint hook deciding which expansions survive.
trait Expansion {
    fn allow_residue(&self, h: &Hypothesis, mass_after: f64) -> bool;
    fn allow_finish(&self, h: &Hypothesis) -> bool;
}

struct Unconstrained;

impl Expansion for Unconstrained {
    fn allow_residue(&self, _: &Hypothesis, _: f64) -> bool {
        true
    }
    fn allow_finish(&self, _: &Hypothesis) -> bool {
        true
    }
}

fn run_beam(
    scorer: &dyn StepScorer,
    masses: &[f64],
    beam_width: usize,
    rules: &dyn Expansion,
    observer: &mut dyn FnMut(&Hypothesis),
) -> Result<Vec<Hypothesis>> {
    if beam_width == 0 {
        return Err(Error::Config("search.beam_width must be at least 1".into()));
    }
    let v = scorer.vocab_size();
    let max_len = scorer.max_len();
    let mut active = vec![Hypothesis {
        tokens: Vec::new(),
        score: 0.0,
        mass: 0.0,
        stopped: false,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    while !active.is_empty() {
        let mut pool = Vec::new();
        for h in &active {
            let lp = scorer.step_log_probs(&h.tokens)?;
            if lp.len() != v {
                return Err(Error::Shape {
                    op: "beam step",
                    left: [1, v],
                    right: [1, lp.len()],
                });
            }
            if rules.allow_finish(h) {
                pool.push(Hypothesis {
                    tokens: h.tokens.clone(),
                    score: h.score + lp[Token::STOP.index()],
                    mass: h.mass,
                    stopped: true,
                });
            }
            for id in Token::N_SPECIAL..v {
                let mass = h.mass + masses[id];
                if !rules.allow_residue(h, mass) {
                    continue;
                }
                let mut tokens = h.tokens.clone();
                tokens.push(Token(id as u16));
                pool.push(Hypothesis {
                    tokens,
                    score: h.score + lp[id],
                    mass,
                    stopped: false,
                });
            }
        }
        pool.sort_by(rank);
        pool.truncate(beam_width);
        active.clear();
        for h in pool {
            observer(&h);
            if h.stopped {
                finished.push(h);
            } else if h.tokens.len() >= max_len {
                if rules.allow_finish(&h) {
                    finished.push(h);
                }
            } else {
                active.push(h);
            }
        }
    }
    finished.sort_by(rank);
    finished.truncate(beam_width);
    Ok(finished)
}

/// Plain log-probability beam search.
///
/// Hypotheses end on STOP or at `max_len` residues; the result is ranked by
/// score with ties broken by token ids.
pub fn beam_search(scorer: &dyn StepScorer, masses: &[f64], beam_width: usize) -> Result<Vec<Hypothesis>> {
    run_beam(scorer, masses, beam_width, &Unconstrained, &mut |_| {})
}

/// Always take the most probable token (lowest id on ties).
pub fn greedy_decode(scorer: &dyn StepScorer, masses: &[f64]) -> Result<Hypothesis> {
    let v = scorer.vocab_size();
    let mut h = Hypothesis {
        tokens: Vec::new(),
        score: 0.0,
        mass: 0.0,
        stopped: false,
    };
    while h.tokens.len() < scorer.max_len() {
        let lp = scorer.step_log_probs(&h.tokens)?;
        let mut best = Token::STOP.index();
        for id in Token::N_SPECIAL..v {
            if lp[id] > lp[best] {
                best = id;
            }
        }
        h.score += lp[best];
        if best == Token::STOP.index() {
            h.stopped = true;
            break;
        }
        h.tokens.push(Token(best as u16));
        h.mass += masses[best];
    }
    Ok(h)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KnapsackOptions {
    pub tolerance_ppm: f64,
    /// Also require the remaining budget to be reachable by some residue multiset.
    pub suffix_check: bool,
}

impl Default for KnapsackOptions {
    fn default() -> Self {
        KnapsackOptions {
            tolerance_ppm: 30.0,
            suffix_check: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum KnapsackOutcome {
    Found(Vec<Hypothesis>),
    NoFeasibleSequence,
}

struct MassRules<'a> {
    budget: f64,
    tol: f64,
    window: f64,
    table: Option<&'a KnapsackTable>,
}

impl Expansion for MassRules<'_> {
    fn allow_residue(&self, _: &Hypothesis, mass_after: f64) -> bool {
        if mass_after > self.budget + self.tol {
            return false;
        }
        match self.table {
            Some(t) => t.feasible_near(self.budget - mass_after, self.window),
            None => true,
        }
    }

    fn allow_finish(&self, h: &Hypothesis) -> bool {
        (h.mass - self.budget).abs() <= self.tol
    }
}

/// Residue-mass budget of a neutral precursor and its ppm tolerance in Da.
pub fn mass_budget(precursor_mass: f64, tolerance_ppm: f64) -> (f64, f64) {
    let budget = precursor_mass - WATER;
    (budget, budget.abs() * tolerance_ppm * 1e-6)
}

/// Beam search whose expansions must stay within the precursor mass budget
/// (and, with `suffix_check`, leave a reachable remainder); completed
/// hypotheses must hit the budget within tolerance.
///
/// `observer` sees every hypothesis that survives a pruning round.
pub fn knapsack_beam_search(
    scorer: &dyn StepScorer,
    masses: &[f64],
    beam_width: usize,
    precursor_mass: f64,
    table: &KnapsackTable,
    opts: KnapsackOptions,
    observer: &mut dyn FnMut(&Hypothesis),
) -> Result<KnapsackOutcome> {
    if !(opts.tolerance_ppm >= 0.0) {
        return Err(Error::Config("search.tolerance_ppm must be >= 0".into()));
    }
    let (budget, tol) = mass_budget(precursor_mass, opts.tolerance_ppm);
    if budget > table.max_mass() {
        return Err(Error::Domain(format!(
            "precursor residue mass {budget:.4} exceeds the knapsack table range {}",
            table.max_mass()
        )));
    }
    // Each residue is rounded by up to half a cell in the table.
    let window = tol + 8.0 * table.resolution();
    let rules = MassRules {
        budget,
        tol,
        window,
        table: opts.suffix_check.then_some(table),
    };
    let found = run_beam(scorer, masses, beam_width, &rules, observer)?;
    Ok(if found.is_empty() {
        KnapsackOutcome::NoFeasibleSequence
    } else {
        KnapsackOutcome::Found(found)
    })
}

/// Indices of predictions kept / dropped by the precursor m/z ppm filter.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DeltaMassSplit {
    pub kept: Vec<usize>,
    pub dropped: Vec<usize>,
}

/// Keep a prediction iff its theoretical precursor m/z (at the spectrum's
/// charge) is within `tolerance_ppm` of the observed one.
pub fn delta_mass_filter(
    predictions: &[(&Peptide, &Spectrum)],
    vocab: &Vocabulary,
    tolerance_ppm: f64,
) -> Result<DeltaMassSplit> {
    let mut out = DeltaMassSplit::default();
    for (i, (peptide, spectrum)) in predictions.iter().enumerate() {
        if passes_delta_mass(peptide, spectrum, vocab, tolerance_ppm)? {
            out.kept.push(i);
        } else {
            out.dropped.push(i);
        }
    }
    Ok(out)
}

pub fn passes_delta_mass(peptide: &Peptide, spectrum: &Spectrum, vocab: &Vocabulary, tolerance_ppm: f64) -> Result<bool> {
    let mz = vocab.precursor_mz(peptide, spectrum.charge)?;
    let observed = spectrum.precursor_mz;
    Ok((mz - observed).abs() / observed * 1e6 <= tolerance_ppm)
}
