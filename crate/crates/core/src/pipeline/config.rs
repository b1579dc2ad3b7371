use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{DecodeOptions, DecoderKind};
use crate::metrics::MatchConfig;
use crate::model::{ModelConfig, Variant};
use crate::peptide::Vocabulary;
use crate::search::{KnapsackOptions, KnapsackTable};
use crate::spectra::PreprocessConfig;
use crate::synth::SynthConfig;
use crate::training::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VocabularyPreset {
    /// Casanovo residue set with its variable modifications.
    Standard,
    /// G, A, S, P, V.
    Toy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabularySection {
    pub preset: VocabularyPreset,
    /// Explicit residue symbols; overrides `preset` when set.
    pub residues: Option<Vec<String>>,
}

impl Default for VocabularySection {
    fn default() -> Self {
        VocabularySection {
            preset: VocabularyPreset::Standard,
            residues: None,
        }
    }
}

impl VocabularySection {
    pub fn build(&self) -> Result<Vocabulary> {
        match &self.residues {
            Some(r) => Vocabulary::with_residues(r),
            None => Ok(match self.preset {
                VocabularyPreset::Standard => Vocabulary::standard(),
                VocabularyPreset::Toy => Vocabulary::toy(),
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    /// Spectra generated before the 80/10/10 split.
    pub n_spectra: usize,
    pub length_range: [usize; 2],
    pub charge_set: Vec<u32>,
    pub noise_peaks: usize,
    pub peak_dropout: f64,
    pub mz_jitter: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let s = SynthConfig::default();
        SynthSection {
            n_spectra: 2500,
            length_range: s.length_range,
            charge_set: s.charge_set,
            noise_peaks: s.noise_peaks,
            peak_dropout: s.peak_dropout,
            mz_jitter: s.mz_jitter,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionSection {
    /// Number of timesteps `T`.
    pub steps: usize,
    /// Cut decoded canvases at the first STOP.
    pub stop_truncate: bool,
}

impl Default for DiffusionSection {
    fn default() -> Self {
        DiffusionSection {
            steps: 10,
            stop_truncate: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSection {
    /// Decoder override; the variant's default when unset.
    pub decoder: Option<DecoderKind>,
    pub beam_width: usize,
    pub tolerance_ppm: f64,
    pub suffix_check: bool,
    pub knapsack_resolution: f64,
    pub knapsack_max_mass: f64,
    /// Where to cache the knapsack table; rebuilt in memory when unset.
    pub knapsack_cache: Option<PathBuf>,
    /// Apply the precursor delta-mass filter with this tolerance.
    pub delta_filter_ppm: Option<f64>,
}

impl Default for SearchSection {
    fn default() -> Self {
        SearchSection {
            decoder: None,
            beam_width: 5,
            tolerance_ppm: 30.0,
            suffix_check: true,
            knapsack_resolution: KnapsackTable::DEFAULT_RESOLUTION,
            knapsack_max_mass: KnapsackTable::DEFAULT_MAX_MASS,
            knapsack_cache: None,
            delta_filter_ppm: None,
        }
    }
}

/// Everything a run needs besides its input files.
///
/// `seed` is the only source of randomness: it seeds the synthetic corpus,
/// parameter initialisation and training. Section-level seeds and
/// `model.diffusion_steps` are derived and must not be set directly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub variant: Variant,
    pub vocabulary: VocabularySection,
    pub preprocess: PreprocessConfig,
    pub synth: SynthSection,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub diffusion: DiffusionSection,
    pub search: SearchSection,
    pub metrics: MatchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            variant: Variant::Ar,
            vocabulary: VocabularySection::default(),
            preprocess: PreprocessConfig::default(),
            synth: SynthSection::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            diffusion: DiffusionSection::default(),
            search: SearchSection::default(),
            metrics: MatchConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.model.seed != 0 || cfg.train.seed != 0 {
            return Err(Error::Config(
                "model.seed and train.seed are derived from the top-level seed; set `seed` instead".into(),
            ));
        }
        if cfg.model.diffusion_steps != ModelConfig::default().diffusion_steps {
            return Err(Error::Config("set diffusion.steps instead of model.diffusion_steps".into()));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.vocabulary.build()?;
        self.preprocess.validate()?;
        self.synth_config().validate()?;
        if self.synth.n_spectra == 0 {
            return Err(Error::Config("synth.n_spectra must be at least 1".into()));
        }
        self.model_config().validate()?;
        self.train_config().validate()?;
        if self.search.beam_width == 0 {
            return Err(Error::Config("search.beam_width must be at least 1".into()));
        }
        if !(self.search.tolerance_ppm >= 0.0) {
            return Err(Error::Config("search.tolerance_ppm must be >= 0".into()));
        }
        if !(self.search.knapsack_resolution > 0.0 && self.search.knapsack_resolution <= 0.01) {
            return Err(Error::Config("search.knapsack_resolution must be in (0, 0.01]".into()));
        }
        if let Some(d) = self.search.decoder {
            d.check_variant(self.variant)?;
        }
        Ok(())
    }

    pub fn vocab(&self) -> Result<Vocabulary> {
        self.vocabulary.build()
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            length_range: self.synth.length_range,
            charge_set: self.synth.charge_set.clone(),
            noise_peaks: self.synth.noise_peaks,
            peak_dropout: self.synth.peak_dropout,
            mz_jitter: self.synth.mz_jitter,
            seed: self.seed,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            diffusion_steps: self.diffusion.steps,
            seed: self.seed,
            ..self.model.clone()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn decode_options(&self, variant: Variant) -> DecodeOptions {
        DecodeOptions {
            decoder: self.search.decoder.unwrap_or(DecoderKind::default_for(variant)),
            beam_width: self.search.beam_width,
            knapsack: KnapsackOptions {
                tolerance_ppm: self.search.tolerance_ppm,
                suffix_check: self.search.suffix_check,
            },
            stop_truncate: self.diffusion.stop_truncate,
            delta_filter_ppm: self.search.delta_filter_ppm,
        }
    }

    pub fn knapsack_table(&self, vocab: &Vocabulary) -> Result<KnapsackTable> {
        let s = &self.search;
        match &s.knapsack_cache {
            Some(p) => KnapsackTable::load_or_build(p, vocab, s.knapsack_resolution, s.knapsack_max_mass),
            None => KnapsackTable::build(vocab, s.knapsack_resolution, s.knapsack_max_mass),
        }
    }
}
