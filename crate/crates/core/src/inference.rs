//! Decoding a spectrum into a peptide with any decoder/variant pairing.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::{denoise_trace, finalize_canvas, ModelDenoiser, NoiseSchedule};
use crate::error::{Error, Result};
use crate::metrics::Prediction;
use crate::model::{ModelBundle, Variant};
use crate::peptide::Peptide;
use crate::scalar::Scalar;
use crate::search::{
    beam_search, greedy_decode, knapsack_beam_search, passes_delta_mass, ArScorer, KnapsackOptions, KnapsackOutcome,
    KnapsackTable, StepScorer, TraceScorer,
};
use crate::spectra::Spectrum;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecoderKind {
    Greedy,
    Beam,
    KnapsackBeam,
    Diffusion,
}

impl DecoderKind {
    pub const ALL: [DecoderKind; 4] = [
        DecoderKind::Greedy,
        DecoderKind::Beam,
        DecoderKind::KnapsackBeam,
        DecoderKind::Diffusion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DecoderKind::Greedy => "greedy",
            DecoderKind::Beam => "beam",
            DecoderKind::KnapsackBeam => "knapsack-beam",
            DecoderKind::Diffusion => "diffusion",
        }
    }

    /// Beam search for the AR decoder, the denoising loop otherwise.
    pub fn default_for(variant: Variant) -> Self {
        if variant.is_diffusion() {
            DecoderKind::Diffusion
        } else {
            DecoderKind::Beam
        }
    }

    pub fn check_variant(self, variant: Variant) -> Result<()> {
        let ok = match self {
            DecoderKind::Greedy | DecoderKind::Beam => !variant.is_diffusion(),
            DecoderKind::Diffusion => variant.is_diffusion(),
            DecoderKind::KnapsackBeam => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("decoder {self} cannot decode the {variant} variant")))
        }
    }
}

impl fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DecoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DecoderKind::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown decoder {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeOptions {
    pub decoder: DecoderKind,
    pub beam_width: usize,
    pub knapsack: KnapsackOptions,
    pub stop_truncate: bool,
    /// Drop predictions whose precursor m/z is off by more than this many ppm.
    pub delta_filter_ppm: Option<f64>,
}

impl DecodeOptions {
    pub fn for_variant(variant: Variant) -> Self {
        DecodeOptions {
            decoder: DecoderKind::default_for(variant),
            beam_width: 5,
            knapsack: KnapsackOptions::default(),
            stop_truncate: false,
            delta_filter_ppm: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub peptide: Option<Peptide>,
    pub score: Option<f64>,
    /// Knapsack search found no sequence matching the precursor.
    pub infeasible: bool,
    /// Removed by the delta-mass filter.
    pub filtered: bool,
    pub seconds: f64,
}

fn best_of(scorer: &dyn StepScorer, masses: &[f64], opts: &DecodeOptions, s: &Spectrum, table: Option<&KnapsackTable>) -> Result<(Option<Peptide>, Option<f64>, bool)> {
    match opts.decoder {
        DecoderKind::Greedy => {
            let h = greedy_decode(scorer, masses)?;
            Ok((Some(Peptide::from_decoded(&h.tokens)), Some(h.score), false))
        }
        DecoderKind::Beam => {
            let hs = beam_search(scorer, masses, opts.beam_width)?;
            Ok(hs
                .first()
                .map_or((None, None, false), |h| (Some(Peptide::from_decoded(&h.tokens)), Some(h.score), false)))
        }
        DecoderKind::KnapsackBeam => {
            let table = table.ok_or_else(|| Error::Config("knapsack-beam decoding needs a knapsack table".into()))?;
            match knapsack_beam_search(
                scorer,
                masses,
                opts.beam_width,
                s.precursor_mass(),
                table,
                opts.knapsack,
                &mut |_| {},
            )? {
                KnapsackOutcome::Found(hs) => Ok((Some(Peptide::from_decoded(&hs[0].tokens)), Some(hs[0].score), false)),
                KnapsackOutcome::NoFeasibleSequence => Ok((None, None, true)),
            }
        }
        DecoderKind::Diffusion => unreachable!("handled by the caller"),
    }
}

/// Decode one preprocessed spectrum.
pub fn decode_spectrum<T: Scalar>(
    model: &ModelBundle<T>,
    s: &Spectrum,
    opts: &DecodeOptions,
    table: Option<&KnapsackTable>,
) -> Result<Decoded> {
    let started = Instant::now();
    opts.decoder.check_variant(model.variant())?;
    let enc = model.encode_spectrum(s)?;
    let masses = model.vocab().mass_table();
    let (peptide, score, infeasible) = if model.variant().is_diffusion() {
        let schedule = NoiseSchedule::new(model.config().diffusion_steps)?;
        let trace = denoise_trace(&ModelDenoiser::new(model, &enc)?, &schedule)?;
        if opts.decoder == DecoderKind::Diffusion {
            let canvas = finalize_canvas(&trace.canvas, opts.stop_truncate);
            let score = trace
                .steps
                .iter()
                .flat_map(|st| &st.commits)
                .map(|c| c.confidence.ln())
                .sum::<f64>();
            (Some(Peptide::from_decoded(&canvas)), Some(score), false)
        } else {
            let scorer = TraceScorer::new(&trace, model.vocab().len())?;
            best_of(&scorer, &masses, opts, s, table)?
        }
    } else {
        let scorer = ArScorer::new(model, &enc)?;
        best_of(&scorer, &masses, opts, s, table)?
    };
    let peptide = peptide.filter(|p| !p.is_empty());
    let mut filtered = false;
    let peptide = match (peptide, opts.delta_filter_ppm) {
        (Some(p), Some(ppm)) if !passes_delta_mass(&p, s, model.vocab(), ppm)? => {
            filtered = true;
            None
        }
        (p, _) => p,
    };
    Ok(Decoded {
        peptide,
        score,
        infeasible,
        filtered,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Decode every spectrum on up to `jobs` threads; output order follows input.
pub fn decode_corpus<T: Scalar>(
    model: &ModelBundle<T>,
    spectra: &[Spectrum],
    opts: &DecodeOptions,
    table: Option<&KnapsackTable>,
    jobs: usize,
) -> Result<Vec<Decoded>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        spectra
            .par_iter()
            .map(|s| decode_spectrum(model, s, opts, table))
            .collect()
    })
}

/// Pair decoder output with spectrum titles for evaluation.
pub fn to_predictions(spectra: &[Spectrum], decoded: &[Decoded]) -> Vec<Prediction> {
    spectra
        .iter()
        .zip(decoded)
        .map(|(s, d)| Prediction {
            id: s.title.clone(),
            peptide: d.peptide.clone(),
            score: d.score,
            filtered: d.filtered,
        })
        .collect()
}
