use serde::{Deserialize, Serialize};

use super::{Peak, Spectrum};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub max_peaks: usize,
    pub mz_min: f64,
    pub mz_max: f64,
    /// Half-width in Da of the window removed around the precursor m/z.
    pub precursor_exclusion: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            max_peaks: 150,
            mz_min: 50.5,
            mz_max: 2500.0,
            precursor_exclusion: 2.0,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mz_min < self.mz_max) {
            return Err(Error::Config(format!(
                "preprocess.mz_min ({}) must be below mz_max ({})",
                self.mz_min, self.mz_max
            )));
        }
        if self.max_peaks == 0 {
            return Err(Error::Config("preprocess.max_peaks must be at least 1".into()));
        }
        if self.precursor_exclusion < 0.0 {
            return Err(Error::Config("preprocess.precursor_exclusion must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Window, deduplicate around the precursor, keep the most intense peaks,
/// then square-root and L2-normalise intensities. Output peaks are sorted by m/z.
pub fn preprocess(s: &Spectrum, cfg: &PreprocessConfig) -> Result<Spectrum> {
    let mut peaks: Vec<Peak> = s
        .peaks
        .iter()
        .copied()
        .filter(|p| p.mz >= cfg.mz_min && p.mz <= cfg.mz_max)
        .filter(|p| (p.mz - s.precursor_mz).abs() > cfg.precursor_exclusion)
        .collect();

    if peaks.len() > cfg.max_peaks {
        peaks.sort_by(|a, b| {
            b.intensity
                .total_cmp(&a.intensity)
                .then(a.mz.total_cmp(&b.mz))
        });
        peaks.truncate(cfg.max_peaks);
    }
    peaks.sort_by(|a, b| a.mz.total_cmp(&b.mz));

    if peaks.is_empty() {
        return Err(Error::EmptySpectrum(s.title.clone()));
    }

    if !s.normalized {
        for p in &mut peaks {
            p.intensity = p.intensity.sqrt();
        }
        let norm = peaks.iter().map(|p| p.intensity * p.intensity).sum::<f64>().sqrt();
        if norm > 0.0 {
            for p in &mut peaks {
                p.intensity /= norm;
            }
        }
    }

    Ok(Spectrum {
        peaks,
        normalized: true,
        ..s.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spectrum(peaks: Vec<Peak>) -> Spectrum {
        Spectrum::new("t", 1000.0, 2, peaks)
    }

    #[test]
    fn keeps_most_intense() {
        let peaks: Vec<Peak> = (0..200)
            .map(|i| Peak::new(100.0 + i as f64, ((i * 7919) % 200) as f64 + 1.0))
            .collect();
        let out = preprocess(&spectrum(peaks.clone()), &PreprocessConfig::default()).unwrap();
        assert_eq!(out.peaks.len(), 150);
        let mut raw: Vec<f64> = peaks.iter().map(|p| p.intensity).collect();
        raw.sort_by(|a, b| b.total_cmp(a));
        let threshold = raw[149];
        for p in &out.peaks {
            let orig = peaks.iter().find(|q| q.mz == p.mz).unwrap();
            assert!(orig.intensity >= threshold);
        }
    }

    #[test]
    fn unit_norm() {
        let peaks = vec![Peak::new(200.0, 4.0), Peak::new(300.0, 9.0), Peak::new(150.0, 1.0)];
        let out = preprocess(&spectrum(peaks), &PreprocessConfig::default()).unwrap();
        let norm: f64 = out.peaks.iter().map(|p| p.intensity * p.intensity).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
        assert!(out.peaks.windows(2).all(|w| w[0].mz <= w[1].mz));
    }

    #[test]
    fn precursor_peak_only_is_empty() {
        let out = preprocess(&spectrum(vec![Peak::new(1000.0, 5.0)]), &PreprocessConfig::default());
        assert!(matches!(out, Err(Error::EmptySpectrum(_))));
    }

    #[test]
    fn config_validation() {
        let mut cfg = PreprocessConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.mz_min = 3000.0;
        assert!(cfg.validate().is_err());
        let cfg = PreprocessConfig { max_peaks: 0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    proptest! {
        #[test]
        fn idempotent_and_bounded(
            raw in proptest::collection::vec((0.0f64..3000.0, 0.0f64..1e4), 1..400),
            max_peaks in 1usize..200,
        ) {
            let cfg = PreprocessConfig { max_peaks, ..Default::default() };
            let s = spectrum(raw.into_iter().map(|(m, i)| Peak::new(m, i)).collect());
            if let Ok(once) = preprocess(&s, &cfg) {
                prop_assert!(once.peaks.len() <= max_peaks);
                prop_assert!(once.peaks.iter().all(|p| p.mz >= cfg.mz_min && p.mz <= cfg.mz_max));
                let twice = preprocess(&once, &cfg).unwrap();
                prop_assert_eq!(twice, once);
            }
        }
    }
}
