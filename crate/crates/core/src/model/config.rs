use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Decoder architecture attached to the spectrum encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Autoregressive transformer decoder (the baseline).
    Ar,
    /// Small, shallow diffusion denoiser.
    Ds,
    /// Full-size denoiser with an additive timestep embedding.
    Dm1,
    /// DM1 plus timestep-modulated layer norms and a precursor conditioning row.
    Dm2,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Ar, Variant::Ds, Variant::Dm1, Variant::Dm2];

    pub fn is_diffusion(self) -> bool {
        self != Variant::Ar
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Ar => "ar",
            Variant::Ds => "ds",
            Variant::Dm1 => "dm1",
            Variant::Dm2 => "dm2",
        }
    }

    /// Row label used in result tables.
    pub fn label(self) -> &'static str {
        match self {
            Variant::Ar => "Casanovo",
            Variant::Ds => "Casanovo-DS",
            Variant::Dm1 => "Casanovo-DM1",
            Variant::Dm2 => "Casanovo-DM2",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown model variant {s:?} (expected ar, ds, dm1 or dm2)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub model_dim: usize,
    pub heads: usize,
    /// Feed-forward hidden width as a multiple of the layer width.
    pub ff_mult: usize,
    pub encoder_layers: usize,
    pub ar_layers: usize,
    pub ds_layers: usize,
    pub ds_dim: usize,
    pub dm_layers: usize,
    /// Decoder canvas length (diffusion) and maximum decoding steps (AR).
    pub max_len: usize,
    /// Charges above this share the last charge embedding.
    pub max_charge: u32,
    /// Number of diffusion timesteps `T` the denoisers are conditioned on.
    pub diffusion_steps: usize,
    pub mz_wavelengths: (f64, f64),
    pub timestep_wavelengths: (f64, f64),
    pub dropout: f64,
    /// Seed for parameter initialisation.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            model_dim: 64,
            heads: 4,
            ff_mult: 4,
            encoder_layers: 2,
            ar_layers: 2,
            ds_layers: 1,
            ds_dim: 32,
            dm_layers: 2,
            max_len: 10,
            max_charge: 4,
            diffusion_steps: 10,
            mz_wavelengths: (0.001, 10000.0),
            timestep_wavelengths: (3.0, 1000.0),
            dropout: 0.0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn dim(&self, variant: Variant) -> usize {
        match variant {
            Variant::Ds => self.ds_dim,
            _ => self.model_dim,
        }
    }

    pub fn decoder_layers(&self, variant: Variant) -> usize {
        match variant {
            Variant::Ar => self.ar_layers,
            Variant::Ds => self.ds_layers,
            Variant::Dm1 | Variant::Dm2 => self.dm_layers,
        }
    }

    /// Structural checks that do not depend on the vocabulary.
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        for (name, d) in [("model_dim", self.model_dim), ("ds_dim", self.ds_dim)] {
            if d == 0 || d % 2 != 0 {
                return err(format!("model.{name} must be a positive even number, got {d}"));
            }
            if self.heads == 0 || d % self.heads != 0 {
                return err(format!("model.heads ({}) must divide model.{name} ({d})", self.heads));
            }
        }
        if self.ff_mult == 0 {
            return err("model.ff_mult must be at least 1".into());
        }
        if self.encoder_layers == 0 || self.ar_layers == 0 || self.ds_layers == 0 || self.dm_layers == 0 {
            return err("every layer count must be at least 1".into());
        }
        if self.max_len < 2 {
            return err("model.max_len must be at least 2".into());
        }
        if self.max_charge == 0 {
            return err("model.max_charge must be at least 1".into());
        }
        if self.diffusion_steps == 0 {
            return err("model.diffusion_steps must be at least 1".into());
        }
        if self.dropout != 0.0 {
            return err("model.dropout: only 0 is supported".into());
        }
        for (name, (lo, hi)) in [
            ("mz_wavelengths", self.mz_wavelengths),
            ("timestep_wavelengths", self.timestep_wavelengths),
        ] {
            if !(lo > 0.0 && hi >= lo) {
                return err(format!("model.{name} must satisfy 0 < min <= max"));
            }
        }
        Ok(())
    }
}
