use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::peptide::Vocabulary;

const MAGIC: &[u8; 8] = b"NVDKNAP\0";
const VERSION: u32 = 1;

/// Reachable residue-mass sums on a uniform grid.
///
/// Cell `i` stands for mass `i * resolution`; residue masses are rounded to
/// the grid before the DP, so a cell is set iff it equals a sum of rounded
/// residue cells.
#[derive(Clone, Debug, PartialEq)]
pub struct KnapsackTable {
    resolution: f64,
    max_mass: f64,
    n_cells: usize,
    words: Vec<u64>,
    residue_cells: Vec<usize>,
    fingerprint: [u8; 32],
}

impl KnapsackTable {
    pub const DEFAULT_RESOLUTION: f64 = 0.0005;
    pub const DEFAULT_MAX_MASS: f64 = 4000.0;

    pub fn build(vocab: &Vocabulary, resolution: f64, max_mass: f64) -> Result<Self> {
        let residue_cells = Self::check(vocab, resolution, max_mass)?;
        let n_cells = (max_mass / resolution).floor() as usize + 1;
        let mut words = vec![0u64; n_cells.div_ceil(64)];
        words[0] = 1;
        for &r in &residue_cells {
            if r < 64 {
                for i in r..n_cells {
                    if words[(i - r) / 64] >> ((i - r) % 64) & 1 == 1 {
                        words[i / 64] |= 1 << (i % 64);
                    }
                }
                continue;
            }
            // Bit i |= bit (i - r). With r >= 64 every source word precedes its
            // destination, so a forward sweep already sees updated sources and
            // residues may repeat.
            let (ws, bs) = (r / 64, r % 64);
            for w in ws..words.len() {
                let mut v = words[w - ws] << bs;
                if bs > 0 && w > ws {
                    v |= words[w - ws - 1] >> (64 - bs);
                }
                words[w] |= v;
            }
        }
        if n_cells % 64 != 0 {
            let last = words.len() - 1;
            words[last] &= (1u64 << (n_cells % 64)) - 1;
        }
        Ok(KnapsackTable {
            resolution,
            max_mass,
            n_cells,
            words,
            residue_cells,
            fingerprint: vocab.fingerprint(),
        })
    }

    fn check(vocab: &Vocabulary, resolution: f64, max_mass: f64) -> Result<Vec<usize>> {
        if !(resolution > 0.0 && resolution <= 0.01) {
            return Err(Error::Config(format!(
                "search.knapsack_resolution must be in (0, 0.01] Da, got {resolution}"
            )));
        }
        let masses: Vec<f64> = vocab.residue_tokens().map(|t| vocab.residue_mass(t)).collect::<Result<_>>()?;
        let largest = masses.iter().cloned().fold(0.0, f64::max);
        if !(max_mass >= largest) {
            return Err(Error::Config(format!(
                "search.knapsack_max_mass ({max_mass}) is below the largest residue mass ({largest})"
            )));
        }
        let mut cells: Vec<usize> = masses.iter().map(|m| (m / resolution).round() as usize).collect();
        cells.sort_unstable();
        cells.dedup();
        Ok(cells)
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn max_mass(&self) -> f64 {
        self.max_mass
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    /// Grid cells of the residues, ascending and deduplicated.
    pub fn residue_cells(&self) -> &[usize] {
        &self.residue_cells
    }

    pub fn cell_of(&self, mass: f64) -> usize {
        (mass / self.resolution).round().max(0.0) as usize
    }

    pub fn is_set(&self, cell: usize) -> bool {
        cell < self.n_cells && self.words[cell / 64] >> (cell % 64) & 1 == 1
    }

    pub fn feasible(&self, mass: f64) -> bool {
        mass >= -self.resolution / 2.0 && self.is_set(self.cell_of(mass))
    }

    /// Whether any set cell lies within `tol` Da (plus half a cell) of `mass`.
    pub fn feasible_near(&self, mass: f64, tol: f64) -> bool {
        let lo = ((mass - tol) / self.resolution - 0.5).ceil().max(0.0);
        let hi = ((mass + tol) / self.resolution + 0.5).floor();
        if hi < 0.0 || lo >= self.n_cells as f64 {
            return false;
        }
        let (lo, hi) = (lo as usize, (hi as usize).min(self.n_cells - 1));
        if lo > hi {
            return false;
        }
        let (wl, wh) = (lo / 64, hi / 64);
        for w in wl..=wh {
            let mut v = self.words[w];
            if w == wl {
                v &= u64::MAX << (lo % 64);
            }
            if w == wh && hi % 64 != 63 {
                v &= (1u64 << (hi % 64 + 1)) - 1;
            }
            if v != 0 {
                return true;
            }
        }
        false
    }

    /// Set cells in `[0, n_cells)`, ascending.
    pub fn set_cells(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(w, &word)| {
            let mut v = word;
            std::iter::from_fn(move || {
                if v == 0 {
                    return None;
                }
                let b = v.trailing_zeros() as usize;
                v &= v - 1;
                Some(w * 64 + b)
            })
        })
    }

    pub fn matches(&self, vocab: &Vocabulary, resolution: f64, max_mass: f64) -> bool {
        self.fingerprint == vocab.fingerprint() && self.resolution == resolution && self.max_mass == max_mass
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::Checkpoint(format!("writing knapsack table: {e}"));
        w.write_all(MAGIC).map_err(io)?;
        w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&self.resolution.to_le_bytes()).map_err(io)?;
        w.write_all(&self.max_mass.to_le_bytes()).map_err(io)?;
        w.write_all(&self.fingerprint).map_err(io)?;
        w.write_all(&(self.n_cells as u64).to_le_bytes()).map_err(io)?;
        for word in &self.words {
            w.write_all(&word.to_le_bytes()).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    /// Read a cached table; it must have been built for `vocab`.
    pub fn read_from<R: Read>(mut r: R, vocab: &Vocabulary) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint(format!("knapsack cache: {m}"));
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|e| bad(e.to_string()))?;
        if &magic != MAGIC {
            return Err(bad("not a knapsack table".into()));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4).map_err(|e| bad(e.to_string()))?;
        if u32::from_le_bytes(b4) != VERSION {
            return Err(bad(format!("unsupported version {}", u32::from_le_bytes(b4))));
        }
        let mut f64_field = |r: &mut R| -> Result<f64> {
            r.read_exact(&mut b8).map_err(|e| bad(e.to_string()))?;
            Ok(f64::from_le_bytes(b8))
        };
        let resolution = f64_field(&mut r)?;
        let max_mass = f64_field(&mut r)?;
        let mut fingerprint = [0u8; 32];
        r.read_exact(&mut fingerprint).map_err(|e| bad(e.to_string()))?;
        if fingerprint != vocab.fingerprint() {
            return Err(bad("built for a different vocabulary".into()));
        }
        let residue_cells = Self::check(vocab, resolution, max_mass)?;
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8).map_err(|e| bad(e.to_string()))?;
        let n_cells = u64::from_le_bytes(b8) as usize;
        if n_cells != (max_mass / resolution).floor() as usize + 1 {
            return Err(bad("cell count disagrees with header".into()));
        }
        let mut bytes = vec![0u8; n_cells.div_ceil(64) * 8];
        r.read_exact(&mut bytes).map_err(|e| bad(e.to_string()))?;
        let words = bytes
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(KnapsackTable {
            resolution,
            max_mass,
            n_cells,
            words,
            residue_cells,
            fingerprint,
        })
    }

    /// Load `path` if it holds a matching table, else build and write it.
    pub fn load_or_build(path: impl AsRef<Path>, vocab: &Vocabulary, resolution: f64, max_mass: f64) -> Result<Self> {
        let path = path.as_ref();
        if let Ok(f) = fs::File::open(path) {
            if let Ok(t) = Self::read_from(BufReader::new(f), vocab) {
                if t.matches(vocab, resolution, max_mass) {
                    return Ok(t);
                }
            }
        }
        let table = Self::build(vocab, resolution, max_mass)?;
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("tmp");
        let f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        table.write_to(BufWriter::new(f))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
        Ok(table)
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;

    fn ga() -> Vocabulary {
        Vocabulary::with_residues(&["G", "A"]).unwrap()
    }

    #[test]
    fn small_examples() {
        let t = KnapsackTable::build(&ga(), 0.0005, 500.0).unwrap();
        assert!(t.feasible(0.0));
        assert!(t.feasible(128.05857));
        assert!(t.feasible_near(128.0586, 0.0005));
        assert!(!t.feasible_near(60.0, 0.01));
        assert!(!t.feasible(-1.0));
        assert!(!t.feasible(1000.0));
    }

    #[test]
    fn matches_naive_dp() {
        // Coarse grid and a residue under 64 cells exercises both code paths.
        let v = ga();
        let t = KnapsackTable::build(&v, 0.01, 400.0).unwrap();
        let mut naive = vec![false; t.n_cells()];
        naive[0] = true;
        for i in 0..naive.len() {
            for &r in t.residue_cells() {
                if i >= r && naive[i - r] {
                    naive[i] = true;
                }
            }
        }
        let got: BTreeSet<usize> = t.set_cells().collect();
        let want: BTreeSet<usize> = (0..naive.len()).filter(|&i| naive[i]).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn closure_under_residue_addition() {
        let t = KnapsackTable::build(&Vocabulary::toy(), 0.0005, 800.0).unwrap();
        for c in t.set_cells().take(2000) {
            for &r in t.residue_cells() {
                if c + r < t.n_cells() {
                    assert!(t.is_set(c + r));
                }
            }
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(KnapsackTable::build(&ga(), 0.02, 500.0).is_err());
        assert!(KnapsackTable::build(&ga(), 0.0, 500.0).is_err());
        assert!(KnapsackTable::build(&ga(), 0.001, 60.0).is_err());
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ga.knap");
        let v = ga();
        let built = KnapsackTable::load_or_build(&path, &v, 0.001, 300.0).unwrap();
        let loaded = KnapsackTable::read_from(BufReader::new(fs::File::open(&path).unwrap()), &v).unwrap();
        assert_eq!(built, loaded);
        assert!(KnapsackTable::read_from(BufReader::new(fs::File::open(&path).unwrap()), &Vocabulary::toy()).is_err());
        let rebuilt = KnapsackTable::load_or_build(&path, &v, 0.001, 400.0).unwrap();
        assert_eq!(rebuilt.max_mass(), 400.0);
    }
}
