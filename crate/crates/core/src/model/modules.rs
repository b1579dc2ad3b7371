use rand::Rng;

use super::config::{ModelConfig, Variant};
use crate::error::Result;
use crate::nn::{
    causal_mask, sinusoidal_embed, sinusoidal_rows, FeedForward, Graph, LayerNorm, Linear,
    MultiHeadAttention, ParamId, ParamStore, Tensor, Var,
};
use crate::peptide::{Token, Vocabulary, WATER};
use crate::scalar::Scalar;
use crate::spectra::Spectrum;

#[derive(Clone, Debug)]
struct EncoderLayer {
    ln1: LayerNorm,
    attn: MultiHeadAttention,
    ln2: LayerNorm,
    ff: FeedForward,
}

/// Peaks as sinusoidal m/z features plus a learned intensity projection,
/// one extra row for precursor mass and charge, then pre-norm self-attention.
#[derive(Clone, Debug)]
pub(super) struct Encoder {
    intensity: Linear,
    charge: ParamId,
    layers: Vec<EncoderLayer>,
    final_ln: LayerNorm,
}

impl Encoder {
    pub(super) fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut R) -> Self {
        let d = cfg.model_dim;
        let intensity = Linear::new(store, "encoder.intensity", 1, d, rng);
        let charge = store.add_uniform("encoder.charge", [cfg.max_charge as usize, d], d, rng);
        let layers = (0..cfg.encoder_layers)
            .map(|i| {
                let p = format!("encoder.layer{i}");
                EncoderLayer {
                    ln1: LayerNorm::new(store, &format!("{p}.ln1"), d),
                    attn: MultiHeadAttention::new(store, &format!("{p}.attn"), d, cfg.heads, rng),
                    ln2: LayerNorm::new(store, &format!("{p}.ln2"), d),
                    ff: FeedForward::new(store, &format!("{p}.ff"), d, d * cfg.ff_mult, rng),
                }
            })
            .collect();
        let final_ln = LayerNorm::new(store, "encoder.final_ln", d);
        Encoder {
            intensity,
            charge,
            layers,
            final_ln,
        }
    }

    pub(super) fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, cfg: &ModelConfig, s: &Spectrum) -> Result<Var> {
        let d = cfg.model_dim;
        let mz: Vec<f64> = s.peaks.iter().map(|p| p.mz).collect();
        let peaks = g.constant(sinusoidal_rows(&mz, d, cfg.mz_wavelengths)?);
        let inten = Tensor::new(
            [s.peaks.len(), 1],
            s.peaks.iter().map(|p| T::of(p.intensity)).collect(),
        )?;
        let inten = g.constant(inten);
        let inten = self.intensity.forward(g, inten)?;
        let peaks = g.add(peaks, inten)?;

        let mass = g.constant(sinusoidal_rows(&[s.precursor_mass()], d, cfg.mz_wavelengths)?);
        let table = g.param(self.charge);
        let z = (s.charge.clamp(1, cfg.max_charge) - 1) as usize;
        let charge = g.embedding(table, &[z])?;
        let precursor = g.add(mass, charge)?;

        let mut x = g.concat_rows(&[peaks, precursor])?;
        for layer in &self.layers {
            let h = layer.ln1.forward(g, x)?;
            let a = layer.attn.forward(g, h, h, None)?;
            x = g.add(x, a)?;
            let h = layer.ln2.forward(g, x)?;
            let f = layer.ff.forward(g, h)?;
            x = g.add(x, f)?;
        }
        self.final_ln.forward(g, x)
    }
}

#[derive(Clone, Debug)]
struct DecoderLayer {
    ln1: LayerNorm,
    self_attn: MultiHeadAttention,
    ln2: LayerNorm,
    cross_attn: MultiHeadAttention,
    ln3: LayerNorm,
    ff: FeedForward,
    /// DM2 only: timestep embedding -> (scale, shift) for the three norms.
    adaln: Option<Linear>,
}

#[derive(Clone, Debug)]
pub(super) struct Decoder {
    variant: Variant,
    dim: usize,
    tok: ParamId,
    pos: ParamId,
    start: Option<ParamId>,
    mem_proj: Option<Linear>,
    time_proj: Option<Linear>,
    precursor_proj: Option<Linear>,
    layers: Vec<DecoderLayer>,
    final_ln: LayerNorm,
    final_adaln: Option<Linear>,
    head: Linear,
}

impl Decoder {
    pub(super) fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        cfg: &ModelConfig,
        variant: Variant,
        vocab_size: usize,
        rng: &mut R,
    ) -> Self {
        let d = cfg.dim(variant);
        let diffusion = variant.is_diffusion();
        let dm2 = variant == Variant::Dm2;
        let tok = store.add_uniform("decoder.tok", [vocab_size, d], d, rng);
        let pos = store.add_uniform("decoder.pos", [cfg.max_len, d], d, rng);
        let start = (!diffusion).then(|| store.add_uniform("decoder.start", [1, d], d, rng));
        let mem_proj = (d != cfg.model_dim)
            .then(|| Linear::new(store, "decoder.mem_proj", cfg.model_dim, d, rng));
        let time_proj = diffusion.then(|| Linear::new(store, "decoder.time_proj", d, d, rng));
        let precursor_proj = dm2.then(|| Linear::new(store, "decoder.precursor_proj", d, d, rng));
        let layers = (0..cfg.decoder_layers(variant))
            .map(|i| {
                let p = format!("decoder.layer{i}");
                DecoderLayer {
                    ln1: LayerNorm::new(store, &format!("{p}.ln1"), d),
                    self_attn: MultiHeadAttention::new(store, &format!("{p}.self_attn"), d, cfg.heads, rng),
                    ln2: LayerNorm::new(store, &format!("{p}.ln2"), d),
                    cross_attn: MultiHeadAttention::new(store, &format!("{p}.cross_attn"), d, cfg.heads, rng),
                    ln3: LayerNorm::new(store, &format!("{p}.ln3"), d),
                    ff: FeedForward::new(store, &format!("{p}.ff"), d, d * cfg.ff_mult, rng),
                    adaln: dm2.then(|| Linear::new(store, &format!("{p}.adaln"), d, 6 * d, rng)),
                }
            })
            .collect();
        let final_ln = LayerNorm::new(store, "decoder.final_ln", d);
        let final_adaln = dm2.then(|| Linear::new(store, "decoder.final_adaln", d, 2 * d, rng));
        let head = Linear::new(store, "decoder.head", d, vocab_size, rng);
        Decoder {
            variant,
            dim: d,
            tok,
            pos,
            start,
            mem_proj,
            time_proj,
            precursor_proj,
            layers,
            final_ln,
            final_adaln,
            head,
        }
    }

    /// Sum of sinusoidal features per row; rows with no known mass get zeros.
    fn mass_features<T: Scalar>(&self, cfg: &ModelConfig, masses: &[[Option<f64>; 2]]) -> Result<Tensor<T>> {
        let d = self.dim;
        let mut data = vec![T::zero(); masses.len() * d];
        for (row, pair) in data.chunks_mut(d).zip(masses) {
            for m in pair.iter().flatten() {
                for (x, v) in row.iter_mut().zip(sinusoidal_embed(*m, d, cfg.mz_wavelengths)?) {
                    *x += T::of(v);
                }
            }
        }
        Tensor::new([masses.len(), d], data)
    }

    fn embed<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        first: Option<Var>,
        tokens: &[Token],
        features: Tensor<T>,
    ) -> Result<Var> {
        let table = g.param(self.tok);
        let ids: Vec<usize> = tokens.iter().map(|t| t.index()).collect();
        let mut x = if ids.is_empty() {
            first.expect("empty decoder input")
        } else {
            let e = g.embedding(table, &ids)?;
            match first {
                Some(f) => g.concat_rows(&[f, e])?,
                None => e,
            }
        };
        let n = g.shape(x)[0];
        let pos_table = g.param(self.pos);
        let positions: Vec<usize> = (0..n).collect();
        let pos = g.embedding(pos_table, &positions)?;
        x = g.add(x, pos)?;
        let f = g.constant(features);
        g.add(x, f)
    }

    fn run_layers<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        mut x: Var,
        memory: Var,
        mask: Option<&Tensor<T>>,
        time: Option<Var>,
    ) -> Result<Var> {
        let d = self.dim;
        for layer in &self.layers {
            let mods = match (&layer.adaln, time) {
                (Some(adaln), Some(te)) => {
                    let m = adaln.forward(g, te)?;
                    let mut parts = Vec::with_capacity(6);
                    for k in 0..6 {
                        parts.push(g.slice_cols(m, k * d, d)?);
                    }
                    Some(parts)
                }
                _ => None,
            };
            let pick = |k: usize| mods.as_ref().map(|p| (p[2 * k], p[2 * k + 1]));

            let h = layer.ln1.forward_modulated(g, x, pick(0))?;
            let a = layer.self_attn.forward(g, h, h, mask)?;
            x = g.add(x, a)?;
            let h = layer.ln2.forward_modulated(g, x, pick(1))?;
            let c = layer.cross_attn.forward(g, h, memory, None)?;
            x = g.add(x, c)?;
            let h = layer.ln3.forward_modulated(g, x, pick(2))?;
            let f = layer.ff.forward(g, h)?;
            x = g.add(x, f)?;
        }
        let final_mod = match (&self.final_adaln, time) {
            (Some(adaln), Some(te)) => {
                let m = adaln.forward(g, te)?;
                Some((g.slice_cols(m, 0, d)?, g.slice_cols(m, d, d)?))
            }
            _ => None,
        };
        let x = self.final_ln.forward_modulated(g, x, final_mod)?;
        self.head.forward(g, x)
    }

    pub(super) fn forward_ar<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        cfg: &ModelConfig,
        vocab: &Vocabulary,
        memory: Var,
        _precursor_mass: f64,
        tokens: &[Token],
    ) -> Result<Var> {
        debug_assert_eq!(self.variant, Variant::Ar);
        let masses = vocab.mass_table();
        let mut prefix = 0.0;
        let mut features = Vec::with_capacity(tokens.len() + 1);
        features.push([Some(0.0), None]);
        for t in tokens {
            prefix += masses[t.index()];
            features.push([Some(prefix), None]);
        }
        let features = self.mass_features(cfg, &features)?;
        let start = g.param(self.start.expect("ar decoder has a start row"));
        let x = self.embed(g, Some(start), tokens, features)?;
        let mask = causal_mask::<T>(tokens.len() + 1);
        self.run_layers(g, x, memory, Some(&mask), None)
    }

    #[allow(clippy::too_many_arguments)]
    pub(super) fn forward_diffusion<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        cfg: &ModelConfig,
        vocab: &Vocabulary,
        memory: Var,
        precursor_mass: f64,
        canvas: &[Token],
        t: usize,
    ) -> Result<Var> {
        let features = self.mass_features(cfg, &canvas_masses(canvas, vocab, precursor_mass))?;
        let x = self.embed(g, None, canvas, features)?;

        let time_proj = self.time_proj.as_ref().expect("diffusion decoder has a time projection");
        let te = g.constant(sinusoidal_rows(&[t as f64], self.dim, cfg.timestep_wavelengths)?);
        let te = time_proj.forward(g, te)?;
        let x = g.add_row(x, te)?;

        let mut memory = match &self.mem_proj {
            Some(p) => p.forward(g, memory)?,
            None => memory,
        };
        if let Some(proj) = &self.precursor_proj {
            let pm = g.constant(sinusoidal_rows(&[precursor_mass], self.dim, cfg.mz_wavelengths)?);
            let row = proj.forward(g, pm)?;
            memory = g.concat_rows(&[memory, row])?;
        }
        self.run_layers(g, x, memory, None, Some(te))
    }
}

/// Mass coordinates a canvas position can infer from committed neighbours:
/// the residue mass before it when everything to its left is unmasked, and
/// `budget - (residue mass after it)` when everything to its right is.
/// Both locate the same b-ion ladder.
fn canvas_masses(canvas: &[Token], vocab: &Vocabulary, precursor_mass: f64) -> Vec<[Option<f64>; 2]> {
    let masses = vocab.mass_table();
    let budget = precursor_mass - WATER;
    let n = canvas.len();
    let mut out = vec![[None, None]; n];
    let mut left = Some(0.0);
    for i in 0..n {
        out[i][0] = left;
        left = match (left, canvas[i]) {
            (Some(m), t) if t != Token::MASK => Some(m + masses[t.index()]),
            _ => None,
        };
    }
    let mut right = Some(0.0);
    for i in (0..n).rev() {
        out[i][1] = right.map(|s| budget - s);
        right = match (right, canvas[i]) {
            (Some(m), t) if t != Token::MASK => Some(m + masses[t.index()]),
            _ => None,
        };
    }
    out
}
