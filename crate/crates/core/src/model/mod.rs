//! Spectrum encoder and the four decoder variants.

mod config;
mod modules;

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{ModelConfig, Variant};
use modules::{Decoder, Encoder};

use crate::error::{Error, Result};
use crate::nn::{self, Graph, ParamStore, Tensor, Var};
use crate::peptide::{Token, Vocabulary};
use crate::scalar::Scalar;
use crate::spectra::Spectrum;

/// Encoder output for one spectrum, plus the precursor information decoders read.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSpectrum<T> {
    /// `[peaks + 1, model_dim]`; the last row encodes precursor mass and charge.
    pub memory: Tensor<T>,
    /// Neutral precursor mass in Da.
    pub precursor_mass: f64,
    pub charge: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub encoder: usize,
    pub decoder: usize,
}

impl ParamCount {
    pub fn total(&self) -> usize {
        self.encoder + self.decoder
    }
}

/// Encoder, one decoder variant and all trainable parameters.
#[derive(Clone, Debug)]
pub struct ModelBundle<T: Scalar> {
    config: ModelConfig,
    variant: Variant,
    vocab: Vocabulary,
    params: ParamStore<T>,
    encoder: Encoder,
    decoder: Decoder,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    variant: Variant,
    config: ModelConfig,
    vocabulary: Vocabulary,
}

const CHECKPOINT_FORMAT: &str = "novodiff-model";

/// Decoder parameter count of `variant` under `config`, without keeping the weights.
pub fn decoder_param_count(config: &ModelConfig, variant: Variant, vocab_size: usize) -> usize {
    let mut store = ParamStore::<f32>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    Decoder::new(&mut store, config, variant, vocab_size, &mut rng);
    store.total()
}

/// Rejects configurations that break `DS < AR < DM1 < DM2` in decoder size.
pub fn check_param_ordering(config: &ModelConfig, vocab_size: usize) -> Result<[usize; 4]> {
    let counts = Variant::ALL.map(|v| decoder_param_count(config, v, vocab_size));
    let [ar, ds, dm1, dm2] = counts;
    if !(ds < ar && ar < dm1 && dm1 < dm2) {
        return Err(Error::Config(format!(
            "decoder sizes must satisfy DS < AR < DM1 < DM2, got DS={ds} AR={ar} DM1={dm1} DM2={dm2}"
        )));
    }
    Ok(counts)
}

impl<T: Scalar> ModelBundle<T> {
    pub fn new(variant: Variant, config: ModelConfig, vocab: Vocabulary) -> Result<Self> {
        config.validate()?;
        check_param_ordering(&config, vocab.len())?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let encoder = Encoder::new(&mut params, &config, &mut rng);
        let decoder = Decoder::new(&mut params, &config, variant, vocab.len(), &mut rng);
        Ok(ModelBundle {
            config,
            variant,
            vocab,
            params,
            encoder,
            decoder,
        })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn param_count(&self) -> ParamCount {
        ParamCount {
            encoder: self.params.count_with_prefix("encoder."),
            decoder: self.params.count_with_prefix("decoder."),
        }
    }

    /// Same architecture and weights at another precision.
    pub fn cast<U: Scalar>(&self) -> ModelBundle<U> {
        let mut params = ParamStore::new();
        for (_, name, t) in self.params.iter() {
            params.add(name, t.cast());
        }
        ModelBundle {
            config: self.config.clone(),
            variant: self.variant,
            vocab: self.vocab.clone(),
            params,
            encoder: self.encoder.clone(),
            decoder: self.decoder.clone(),
        }
    }

    /// Record the encoder on `g`; returns the memory node.
    pub fn encode_graph(&self, g: &mut Graph<'_, T>, s: &Spectrum) -> Result<Var> {
        if s.peaks.is_empty() {
            return Err(Error::EmptySpectrum(s.title.clone()));
        }
        self.encoder.forward(g, &self.config, s)
    }

    pub fn encode_spectrum(&self, s: &Spectrum) -> Result<EncodedSpectrum<T>> {
        let mut g = Graph::new(&self.params);
        let mem = self.encode_graph(&mut g, s)?;
        Ok(EncodedSpectrum {
            memory: g.tensor(mem),
            precursor_mass: s.precursor_mass(),
            charge: s.charge,
        })
    }

    fn require_ar(&self) -> Result<()> {
        if self.variant != Variant::Ar {
            return Err(Error::Domain(format!(
                "{} is a diffusion decoder; autoregressive decoding needs the ar variant",
                self.variant
            )));
        }
        Ok(())
    }

    fn require_diffusion(&self) -> Result<()> {
        if !self.variant.is_diffusion() {
            return Err(Error::Domain("the ar variant cannot denoise a canvas".into()));
        }
        Ok(())
    }

    /// Teacher-forced AR logits: row `i` scores the token following `tokens[..i]`.
    /// Output shape `[tokens.len() + 1, vocab]`.
    pub fn ar_graph(
        &self,
        g: &mut Graph<'_, T>,
        memory: Var,
        precursor_mass: f64,
        tokens: &[Token],
    ) -> Result<Var> {
        self.require_ar()?;
        if tokens.len() >= self.config.max_len {
            return Err(Error::Domain(format!(
                "prefix of length {} does not fit max_len {}",
                tokens.len(),
                self.config.max_len
            )));
        }
        if tokens.iter().any(|&t| t == Token::MASK || t == Token::PAD || !self.vocab.contains(t)) {
            return Err(Error::Domain("AR prefixes may only hold residues and STOP".into()));
        }
        self.decoder
            .forward_ar(g, &self.config, &self.vocab, memory, precursor_mass, tokens)
    }

    /// Next-token logits after `prefix`.
    pub fn ar_decode_step(&self, enc: &EncodedSpectrum<T>, prefix: &[Token]) -> Result<Vec<T>> {
        let mut g = Graph::new(&self.params);
        let mem = g.constant(enc.memory.clone());
        let logits = self.ar_graph(&mut g, mem, enc.precursor_mass, prefix)?;
        let v = self.vocab.len();
        let last = g.value(logits)[prefix.len() * v..].to_vec();
        Ok(last)
    }

    /// Canvas logits `[max_len, vocab]` at timestep `t`.
    pub fn denoise_graph(
        &self,
        g: &mut Graph<'_, T>,
        memory: Var,
        precursor_mass: f64,
        canvas: &[Token],
        t: usize,
    ) -> Result<Var> {
        self.require_diffusion()?;
        if canvas.len() != self.config.max_len {
            return Err(Error::Domain(format!(
                "canvas length {} differs from max_len {}",
                canvas.len(),
                self.config.max_len
            )));
        }
        if t < 1 || t > self.config.diffusion_steps {
            return Err(Error::Domain(format!(
                "timestep {t} outside [1, {}]",
                self.config.diffusion_steps
            )));
        }
        if let Some(bad) = canvas.iter().find(|t| !self.vocab.contains(**t)) {
            return Err(Error::Domain(format!("token id {} not in vocabulary", bad.0)));
        }
        self.decoder
            .forward_diffusion(g, &self.config, &self.vocab, memory, precursor_mass, canvas, t)
    }

    pub fn diffusion_denoise(&self, enc: &EncodedSpectrum<T>, canvas: &[Token], t: usize) -> Result<Tensor<T>> {
        let mut g = Graph::new(&self.params);
        let mem = g.constant(enc.memory.clone());
        let logits = self.denoise_graph(&mut g, mem, enc.precursor_mass, canvas, t)?;
        Ok(g.tensor(logits))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let header = serde_json::to_value(CheckpointHeader {
            format: CHECKPOINT_FORMAT.into(),
            variant: self.variant,
            config: self.config.clone(),
            vocabulary: self.vocab.clone(),
        })?;
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        nn::write_checkpoint(BufWriter::new(file), &header, &self.params)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let (header, tensors) = nn::read_checkpoint::<T, _>(BufReader::new(file))?;
        let header: CheckpointHeader = serde_json::from_value(header)
            .map_err(|e| Error::Checkpoint(format!("bad model header: {e}")))?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unexpected format {:?}", header.format)));
        }
        let mut bundle = ModelBundle::new(header.variant, header.config, header.vocabulary)?;
        nn::load_into(&mut bundle.params, tensors)?;
        if !bundle.params.all_finite() {
            return Err(Error::Checkpoint("checkpoint holds non-finite parameters".into()));
        }
        Ok(bundle)
    }
}
