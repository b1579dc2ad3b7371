//! Spectra: the in-memory representation, the annotated MGF subset, and
//! peak-list conditioning.

mod mgf;
mod preprocess;

pub use mgf::{parse_mgf, read_mgf, write_mgf, write_mgf_file};
pub use preprocess::{preprocess, PreprocessConfig};

use crate::peptide::{neutral_mass, Peptide};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Peak {
    pub mz: f64,
    pub intensity: f64,
}

impl Peak {
    pub fn new(mz: f64, intensity: f64) -> Self {
        Peak { mz, intensity }
    }
}

/// One MS/MS observation.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub title: String,
    pub precursor_mz: f64,
    pub charge: u32,
    pub peaks: Vec<Peak>,
    pub annotation: Option<Peptide>,
    pub retention_time: Option<f64>,
    /// Headers other than the recognised ones, kept in file order.
    pub extra_headers: Vec<(String, String)>,
    /// Set once intensities carry the sqrt/L2 transform, so it is not applied twice.
    pub normalized: bool,
}

impl Spectrum {
    pub fn new(title: impl Into<String>, precursor_mz: f64, charge: u32, peaks: Vec<Peak>) -> Self {
        Spectrum {
            title: title.into(),
            precursor_mz,
            charge,
            peaks,
            annotation: None,
            retention_time: None,
            extra_headers: Vec::new(),
            normalized: false,
        }
    }

    /// Neutral precursor mass in Da.
    pub fn precursor_mass(&self) -> f64 {
        neutral_mass(self.precursor_mz, self.charge)
    }
}
