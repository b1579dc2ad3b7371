//! Synthetic annotated spectra: theoretical b/y ladders with optional
//! dropout, m/z jitter and uniform decoy peaks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::peptide::{Peptide, Vocabulary, PROTON, WATER};
use crate::spectra::{Peak, Spectrum};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Inclusive `[min, max]` peptide length.
    pub length_range: [usize; 2],
    pub charge_set: Vec<u32>,
    pub noise_peaks: usize,
    pub peak_dropout: f64,
    /// Standard deviation in Da of Gaussian noise added to fragment m/z.
    pub mz_jitter: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            length_range: [3, 6],
            charge_set: vec![1, 2, 3],
            noise_peaks: 0,
            peak_dropout: 0.0,
            mz_jitter: 0.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.length_range;
        if lo < 1 || lo > hi {
            return Err(Error::Config(format!(
                "synth.length_range [{lo}, {hi}] must satisfy 1 <= min <= max"
            )));
        }
        if self.charge_set.is_empty() || self.charge_set.contains(&0) {
            return Err(Error::Config("synth.charge_set must be non-empty and positive".into()));
        }
        if !(0.0..1.0).contains(&self.peak_dropout) {
            return Err(Error::Config("synth.peak_dropout must lie in [0, 1)".into()));
        }
        if !(self.mz_jitter >= 0.0) {
            return Err(Error::Config("synth.mz_jitter must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Singly charged b and y ions with unit intensity, sorted by m/z.
pub fn theoretical_ions(peptide: &Peptide, vocab: &Vocabulary) -> Result<Vec<Peak>> {
    if peptide.is_empty() {
        return Err(Error::Domain("cannot fragment an empty peptide".into()));
    }
    let masses: Vec<f64> = peptide
        .tokens()
        .iter()
        .map(|&t| vocab.residue_mass(t))
        .collect::<Result<_>>()?;
    let total: f64 = masses.iter().sum();
    let mut ions = Vec::with_capacity(2 * masses.len());
    let mut prefix = 0.0;
    for m in &masses {
        prefix += m;
        ions.push(Peak::new(prefix + PROTON, 1.0));
        // y ion for the complementary suffix (y_n when the prefix is empty).
        ions.push(Peak::new(total - prefix + m + WATER + PROTON, 1.0));
    }
    ions.sort_by(|a, b| a.mz.total_cmp(&b.mz));
    Ok(ions)
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// `n` annotated spectra, a pure function of `(cfg, n)`.
///
/// Spectrum `i` draws from its own ChaCha stream `i`, so corpora of
/// different sizes share their common prefix. Numeric fields are rounded
/// to the six decimals the MGF writer emits.
pub fn generate_corpus(cfg: &SynthConfig, vocab: &Vocabulary, n: usize) -> Result<Vec<Spectrum>> {
    cfg.validate()?;
    if n == 0 {
        return Err(Error::Config("corpus size must be at least 1".into()));
    }
    let residues: Vec<_> = vocab.residue_tokens().collect();
    let jitter = Normal::new(0.0, cfg.mz_jitter).map_err(|e| Error::Config(e.to_string()))?;

    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            let len = rng.random_range(cfg.length_range[0]..=cfg.length_range[1]);
            let tokens = (0..len)
                .map(|_| residues[rng.random_range(0..residues.len())])
                .collect();
            let peptide = Peptide::new(tokens, vocab)?;
            let charge = cfg.charge_set[rng.random_range(0..cfg.charge_set.len())];
            let precursor_mz = vocab.precursor_mz(&peptide, charge)?;

            let mut peaks = Vec::new();
            for ion in theoretical_ions(&peptide, vocab)? {
                if cfg.peak_dropout > 0.0 && rng.random::<f64>() < cfg.peak_dropout {
                    continue;
                }
                let mz = if cfg.mz_jitter > 0.0 {
                    ion.mz + jitter.sample(&mut rng)
                } else {
                    ion.mz
                };
                peaks.push(Peak::new(round6(mz), 1.0));
            }
            let noise_hi = vocab.peptide_mass(&peptide) + PROTON;
            for _ in 0..cfg.noise_peaks {
                let mz = rng.random_range(50.0..noise_hi.max(60.0));
                let intensity = rng.random_range(0.1..1.0);
                peaks.push(Peak::new(round6(mz), round6(intensity)));
            }
            peaks.sort_by(|a, b| a.mz.total_cmp(&b.mz));

            let mut s = Spectrum::new(format!("synth:{}:{}", cfg.seed, i), round6(precursor_mz), charge, peaks);
            s.annotation = Some(peptide);
            Ok(s)
        })
        .collect()
}

/// Which partition a spectrum belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

fn title_hash(title: &str) -> u64 {
    let digest = Sha256::digest(title.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// 80/10/10 split ordered by a hash of each title.
///
/// Spectra are ranked by `sha256(title)`; the first 80% of the ranking goes to
/// train, the next 10% to validation and the rest to test. Within each
/// partition the original corpus order is kept.
pub fn split_corpus(corpus: Vec<Spectrum>) -> [Vec<Spectrum>; 3] {
    let n = corpus.len();
    let mut order: Vec<(u64, usize)> = corpus
        .iter()
        .enumerate()
        .map(|(i, s)| (title_hash(&s.title), i))
        .collect();
    order.sort_unstable();
    let n_train = n * 8 / 10;
    let n_val = n / 10;
    let mut assign = vec![Split::Train; n];
    for (rank, &(_, i)) in order.iter().enumerate() {
        assign[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    let mut parts: [Vec<Spectrum>; 3] = Default::default();
    for (s, split) in corpus.into_iter().zip(assign) {
        parts[split as usize].push(s);
    }
    parts
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn ions_of_ga() {
        let v = Vocabulary::toy();
        let ions = theoretical_ions(&v.parse_sequence("GA").unwrap(), &v).unwrap();
        let mz: Vec<f64> = ions.iter().map(|p| p.mz).collect();
        let expected = [58.028736, 90.054951, 129.065846, 147.076411];
        assert_eq!(mz.len(), 4);
        for (a, b) in mz.iter().zip(expected) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-9);
        }
        assert!(ions.iter().all(|p| p.intensity == 1.0));
    }

    #[test]
    fn ions_of_single_residue() {
        let v = Vocabulary::toy();
        let ions = theoretical_ions(&v.parse_sequence("G").unwrap(), &v).unwrap();
        assert_abs_diff_eq!(ions[0].mz, 58.028736, epsilon = 1e-9);
        assert_abs_diff_eq!(ions[1].mz, 76.039301, epsilon = 1e-9);
        assert!(theoretical_ions(&Peptide::default(), &v).is_err());
    }

    #[test]
    fn largest_y_ion_is_singly_charged_precursor() {
        let v = Vocabulary::toy();
        for s in ["GASPV", "VV", "PAG", "S"] {
            let p = v.parse_sequence(s).unwrap();
            let ions = theoretical_ions(&p, &v).unwrap();
            assert_abs_diff_eq!(
                ions.last().unwrap().mz,
                v.precursor_mz(&p, 1).unwrap(),
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn deterministic_and_bounded() {
        let v = Vocabulary::toy();
        let cfg = SynthConfig { seed: 7, ..Default::default() };
        let a = generate_corpus(&cfg, &v, 1000).unwrap();
        let b = generate_corpus(&cfg, &v, 1000).unwrap();
        assert_eq!(a, b);
        for s in &a {
            let p = s.annotation.as_ref().unwrap();
            assert!((3..=6).contains(&p.len()));
            let mz = v.precursor_mz(p, s.charge).unwrap();
            assert!((mz - s.precursor_mz).abs() < 1e-6);
        }
        let c = generate_corpus(&SynthConfig { seed: 8, ..cfg }, &v, 1000).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn noiseless_peaks_are_the_ladder() {
        let v = Vocabulary::toy();
        let corpus = generate_corpus(&SynthConfig::default(), &v, 50).unwrap();
        for s in &corpus {
            let ions = theoretical_ions(s.annotation.as_ref().unwrap(), &v).unwrap();
            let expected: Vec<Peak> = ions.iter().map(|p| Peak::new(round6(p.mz), 1.0)).collect();
            assert_eq!(s.peaks, expected);
        }
    }

    #[test]
    fn noise_dropout_jitter() {
        let v = Vocabulary::toy();
        let cfg = SynthConfig {
            noise_peaks: 5,
            peak_dropout: 0.2,
            mz_jitter: 0.01,
            ..Default::default()
        };
        let corpus = generate_corpus(&cfg, &v, 100).unwrap();
        assert!(corpus.iter().all(|s| s.peaks.len() >= 5));
        assert!(corpus.iter().all(|s| s.peaks.windows(2).all(|w| w[0].mz <= w[1].mz)));
    }

    #[test]
    fn rejects_bad_config() {
        let v = Vocabulary::toy();
        let bad = SynthConfig { length_range: [5, 2], ..Default::default() };
        assert!(matches!(generate_corpus(&bad, &v, 3), Err(Error::Config(_))));
        let bad = SynthConfig { peak_dropout: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SynthConfig { length_range: [0, 2], ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn split_sizes() {
        let v = Vocabulary::toy();
        let corpus = generate_corpus(&SynthConfig::default(), &v, 1000).unwrap();
        let [train, val, test] = split_corpus(corpus);
        assert_eq!((train.len(), val.len(), test.len()), (800, 100, 100));
    }
}
