//! Residue vocabulary, monoisotopic mass arithmetic and the bracketed
//! sequence notation (`PEPM[+15.995]K`).

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Monoisotopic mass of H2O in Da.
pub const WATER: f64 = 18.010565;
/// Mass of a proton in Da.
pub const PROTON: f64 = 1.007276;

/// Physical constants used by every mass computation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MassConstants {
    pub water: f64,
    pub proton: f64,
}

impl MassConstants {
    pub const MONOISOTOPIC: MassConstants = MassConstants {
        water: WATER,
        proton: PROTON,
    };
}

/// Dense token id. Ids `0..3` are the special tokens, residues follow.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Token(pub u16);

impl Token {
    pub const PAD: Token = Token(0);
    pub const STOP: Token = Token(1);
    pub const MASK: Token = Token(2);

    pub const N_SPECIAL: usize = 3;

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }

    #[inline]
    pub fn is_special(self) -> bool {
        self.index() < Self::N_SPECIAL
    }
}

/// A sequence that may contain special tokens (decoder prefixes, canvases).
pub type TokenSequence = Vec<Token>;

struct ResidueDef {
    symbol: &'static str,
    letter: char,
    shift: Option<f64>,
    mass: f64,
}

// Carbamidomethylation of C is fixed, so plain "C" already carries +57.021.
const RESIDUES: &[ResidueDef] = &[
    ResidueDef { symbol: "G", letter: 'G', shift: None, mass: 57.02146 },
    ResidueDef { symbol: "A", letter: 'A', shift: None, mass: 71.03711 },
    ResidueDef { symbol: "S", letter: 'S', shift: None, mass: 87.03203 },
    ResidueDef { symbol: "P", letter: 'P', shift: None, mass: 97.05276 },
    ResidueDef { symbol: "V", letter: 'V', shift: None, mass: 99.06841 },
    ResidueDef { symbol: "T", letter: 'T', shift: None, mass: 101.04768 },
    ResidueDef { symbol: "C", letter: 'C', shift: None, mass: 160.03065 },
    ResidueDef { symbol: "L", letter: 'L', shift: None, mass: 113.08406 },
    ResidueDef { symbol: "I", letter: 'I', shift: None, mass: 113.08406 },
    ResidueDef { symbol: "N", letter: 'N', shift: None, mass: 114.04293 },
    ResidueDef { symbol: "D", letter: 'D', shift: None, mass: 115.02694 },
    ResidueDef { symbol: "Q", letter: 'Q', shift: None, mass: 128.05858 },
    ResidueDef { symbol: "K", letter: 'K', shift: None, mass: 128.09496 },
    ResidueDef { symbol: "E", letter: 'E', shift: None, mass: 129.04259 },
    ResidueDef { symbol: "M", letter: 'M', shift: None, mass: 131.04049 },
    ResidueDef { symbol: "H", letter: 'H', shift: None, mass: 137.05891 },
    ResidueDef { symbol: "F", letter: 'F', shift: None, mass: 147.06841 },
    ResidueDef { symbol: "R", letter: 'R', shift: None, mass: 156.10111 },
    ResidueDef { symbol: "Y", letter: 'Y', shift: None, mass: 163.06333 },
    ResidueDef { symbol: "W", letter: 'W', shift: None, mass: 186.07931 },
    ResidueDef { symbol: "M[+15.995]", letter: 'M', shift: Some(15.99491), mass: 147.03540 },
    ResidueDef { symbol: "N[+0.984]", letter: 'N', shift: Some(0.98402), mass: 115.02695 },
    ResidueDef { symbol: "Q[+0.984]", letter: 'Q', shift: Some(0.98402), mass: 129.04260 },
];

/// Accepted explicit notation for the fixed cysteine modification.
const CARBAMIDOMETHYL: f64 = 57.02146;
/// Maximum deviation between a written mass shift and the tabulated one.
const SHIFT_TOLERANCE: f64 = 0.01;

const SPECIAL_SYMBOLS: [&str; Token::N_SPECIAL] = ["<pad>", "<stop>", "<mask>"];

/// Ordered token alphabet: three special tokens followed by residues.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VocabularySpec", into = "VocabularySpec")]
pub struct Vocabulary {
    residues: Vec<(String, f64)>,
    letters: Vec<char>,
    shifts: Vec<Option<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabularySpec {
    residues: Vec<String>,
}

impl TryFrom<VocabularySpec> for Vocabulary {
    type Error = Error;

    fn try_from(repr: VocabularySpec) -> Result<Self> {
        Vocabulary::with_residues(&repr.residues)
    }
}

impl From<Vocabulary> for VocabularySpec {
    fn from(v: Vocabulary) -> Self {
        VocabularySpec {
            residues: v.residues.into_iter().map(|(s, _)| s).collect(),
        }
    }
}

impl Vocabulary {
    /// The 20 standard residues plus oxidised M and deamidated N/Q.
    pub fn standard() -> Self {
        let symbols: Vec<&str> = RESIDUES.iter().map(|r| r.symbol).collect();
        Self::with_residues(&symbols).expect("built-in residue table is valid")
    }

    /// Five residues with well separated masses, for desk-scale experiments.
    pub fn toy() -> Self {
        Self::with_residues(&["G", "A", "S", "P", "V"]).expect("toy residues are valid")
    }

    /// Build a vocabulary from residue symbols of the built-in table, in the given order.
    pub fn with_residues<S: AsRef<str>>(symbols: &[S]) -> Result<Self> {
        if symbols.is_empty() {
            return Err(Error::Vocabulary("no residues given".into()));
        }
        let mut residues = Vec::with_capacity(symbols.len());
        let mut letters = Vec::with_capacity(symbols.len());
        let mut shifts = Vec::with_capacity(symbols.len());
        for s in symbols {
            let s = s.as_ref();
            let def = RESIDUES
                .iter()
                .find(|r| r.symbol == s)
                .ok_or_else(|| Error::Vocabulary(format!("unknown residue symbol {s:?}")))?;
            if residues.iter().any(|(x, _): &(String, f64)| x == s) {
                return Err(Error::Vocabulary(format!("duplicate residue symbol {s:?}")));
            }
            residues.push((def.symbol.to_string(), def.mass));
            letters.push(def.letter);
            shifts.push(def.shift);
        }
        Ok(Vocabulary {
            residues,
            letters,
            shifts,
        })
    }

    /// Total number of tokens, special tokens included.
    pub fn len(&self) -> usize {
        Token::N_SPECIAL + self.residues.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn n_residues(&self) -> usize {
        self.residues.len()
    }

    /// Residue tokens in id order.
    pub fn residue_tokens(&self) -> impl Iterator<Item = Token> + '_ {
        (0..self.residues.len()).map(|i| Token((i + Token::N_SPECIAL) as u16))
    }

    pub fn contains(&self, token: Token) -> bool {
        token.index() < self.len()
    }

    pub fn symbol(&self, token: Token) -> Result<&str> {
        let i = token.index();
        if i < Token::N_SPECIAL {
            Ok(SPECIAL_SYMBOLS[i])
        } else {
            self.residues
                .get(i - Token::N_SPECIAL)
                .map(|(s, _)| s.as_str())
                .ok_or_else(|| Error::Vocabulary(format!("token id {i} out of range")))
        }
    }

    pub fn token(&self, symbol: &str) -> Result<Token> {
        if let Some(i) = SPECIAL_SYMBOLS.iter().position(|s| *s == symbol) {
            return Ok(Token(i as u16));
        }
        self.residues
            .iter()
            .position(|(s, _)| s == symbol)
            .map(|i| Token((i + Token::N_SPECIAL) as u16))
            .ok_or_else(|| Error::Vocabulary(format!("unknown symbol {symbol:?}")))
    }

    /// Monoisotopic residue mass of `token`.
    pub fn residue_mass(&self, token: Token) -> Result<f64> {
        if token.is_special() {
            return Err(Error::Domain(format!(
                "special token {} has no mass",
                SPECIAL_SYMBOLS[token.index()]
            )));
        }
        self.residues
            .get(token.index() - Token::N_SPECIAL)
            .map(|&(_, m)| m)
            .ok_or_else(|| Error::Vocabulary(format!("token id {} out of range", token.0)))
    }

    /// Residue masses indexed by token id; special tokens map to 0.
    pub fn mass_table(&self) -> Vec<f64> {
        let mut out = vec![0.0; Token::N_SPECIAL];
        out.extend(self.residues.iter().map(|&(_, m)| m));
        out
    }

    /// Stable digest of symbols and masses, used to key on-disk caches.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for (s, m) in &self.residues {
            h.update(s.as_bytes());
            h.update([0u8]);
            h.update(m.to_le_bytes());
        }
        h.finalize().into()
    }

    /// Parse bracketed notation such as `M[+15.995]AC` into a peptide.
    pub fn parse_sequence(&self, text: &str) -> Result<Peptide> {
        let chars: Vec<char> = text.chars().collect();
        let mut tokens = Vec::with_capacity(chars.len());
        let mut i = 0;
        let err = |position: usize, reason: String| Error::Sequence {
            text: text.to_string(),
            position,
            reason,
        };
        while i < chars.len() {
            let letter = chars[i];
            let position = i + 1;
            let mut shift = None;
            i += 1;
            if i < chars.len() && chars[i] == '[' {
                let close = chars[i..]
                    .iter()
                    .position(|&c| c == ']')
                    .ok_or_else(|| err(position, "unterminated modification".into()))?;
                let body: String = chars[i + 1..i + close].iter().collect();
                let value: f64 = body
                    .trim()
                    .parse()
                    .map_err(|_| err(position, format!("bad modification mass {body:?}")))?;
                shift = Some(value);
                i += close + 1;
            }
            let found = (0..self.residues.len()).find(|&k| {
                if self.letters[k] != letter {
                    return false;
                }
                match (shift, self.shifts[k]) {
                    (None, None) => true,
                    (Some(a), Some(b)) => (a - b).abs() <= SHIFT_TOLERANCE,
                    (Some(a), None) => letter == 'C' && (a - CARBAMIDOMETHYL).abs() <= SHIFT_TOLERANCE,
                    (None, Some(_)) => false,
                }
            });
            match found {
                Some(k) => tokens.push(Token((k + Token::N_SPECIAL) as u16)),
                None if shift.is_some() && self.letters.contains(&letter) => {
                    return Err(err(
                        position,
                        format!("unknown modification {:+} on {letter}", shift.unwrap()),
                    ))
                }
                None => return Err(err(position, format!("residue {letter:?} not in vocabulary"))),
            }
        }
        Ok(Peptide { tokens })
    }

    /// Inverse of [`Vocabulary::parse_sequence`].
    pub fn render(&self, peptide: &Peptide) -> String {
        peptide
            .tokens
            .iter()
            .map(|&t| self.symbol(t).unwrap_or("?"))
            .collect()
    }

    /// Neutral monoisotopic mass: residue masses plus one water.
    pub fn peptide_mass(&self, peptide: &Peptide) -> f64 {
        self.residue_sum(&peptide.tokens) + WATER
    }

    /// Sum of residue masses; special and unknown tokens contribute nothing.
    pub fn residue_sum(&self, tokens: &[Token]) -> f64 {
        tokens
            .iter()
            .filter_map(|&t| self.residue_mass(t).ok())
            .sum()
    }

    /// Precursor m/z of `peptide` at `charge`.
    pub fn precursor_mz(&self, peptide: &Peptide, charge: u32) -> Result<f64> {
        if charge == 0 {
            return Err(Error::Domain("charge must be at least 1".into()));
        }
        let z = charge as f64;
        Ok((self.peptide_mass(peptide) + z * PROTON) / z)
    }
}

/// Neutral mass from precursor m/z and charge.
pub fn neutral_mass(precursor_mz: f64, charge: u32) -> f64 {
    (precursor_mz - PROTON) * charge as f64
}

/// A residue-only token sequence.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Peptide {
    tokens: Vec<Token>,
}

impl Peptide {
    /// Wrap `tokens`, rejecting special tokens and ids outside `vocab`.
    pub fn new(tokens: Vec<Token>, vocab: &Vocabulary) -> Result<Self> {
        if let Some(t) = tokens.iter().find(|t| t.is_special() || !vocab.contains(**t)) {
            return Err(Error::Domain(format!("token {} cannot appear in a peptide", t.0)));
        }
        Ok(Peptide { tokens })
    }

    /// Keep only residue tokens of a decoder output.
    pub fn from_decoded(seq: &[Token]) -> Self {
        Peptide {
            tokens: seq.iter().copied().filter(|t| !t.is_special()).collect(),
        }
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl fmt::Display for Peptide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ids: Vec<String> = self.tokens.iter().map(|t| t.0.to_string()).collect();
        write!(f, "[{}]", ids.join(","))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn residue_masses() {
        let v = Vocabulary::standard();
        assert_eq!(v.residue_mass(v.token("G").unwrap()).unwrap(), 57.02146);
        assert_eq!(v.residue_mass(v.token("A").unwrap()).unwrap(), 71.03711);
        assert!(matches!(v.residue_mass(Token::PAD), Err(Error::Domain(_))));
        assert!(matches!(v.residue_mass(Token(999)), Err(Error::Vocabulary(_))));
    }

    #[test]
    fn vocabulary_invariants() {
        let v = Vocabulary::standard();
        assert_eq!(v.len(), 26);
        let mut seen = std::collections::HashSet::new();
        for t in v.residue_tokens() {
            assert!(v.residue_mass(t).unwrap() > 0.0);
            assert!(seen.insert(v.symbol(t).unwrap().to_string()));
        }
        assert!(Vocabulary::with_residues(&["G", "G"]).is_err());
        assert!(Vocabulary::with_residues(&["B"]).is_err());
    }

    #[test]
    fn toy_masses_are_distinct() {
        let v = Vocabulary::toy();
        let masses: Vec<f64> = v.residue_tokens().map(|t| v.residue_mass(t).unwrap()).collect();
        for i in 0..masses.len() {
            for j in i + 1..masses.len() {
                assert!((masses[i] - masses[j]).abs() > 1.0);
            }
        }
    }

    #[test]
    fn peptide_masses() {
        let v = Vocabulary::standard();
        let p = |s: &str| v.parse_sequence(s).unwrap();
        assert_abs_diff_eq!(v.peptide_mass(&p("")), 18.010565, epsilon = 1e-9);
        assert_abs_diff_eq!(v.peptide_mass(&p("G")), 75.032025, epsilon = 1e-9);
        assert_abs_diff_eq!(v.peptide_mass(&p("GA")), 146.069135, epsilon = 1e-9);
    }

    #[test]
    fn precursor_mz_examples() {
        let v = Vocabulary::standard();
        let ga = v.parse_sequence("GA").unwrap();
        assert_abs_diff_eq!(v.precursor_mz(&ga, 1).unwrap(), 147.076411, epsilon = 1e-9);
        assert_abs_diff_eq!(v.precursor_mz(&ga, 2).unwrap(), 74.0418435, epsilon = 1e-9);
        assert_abs_diff_eq!(
            v.precursor_mz(&Peptide::default(), 1).unwrap(),
            19.017841,
            epsilon = 1e-9
        );
        assert!(matches!(v.precursor_mz(&ga, 0), Err(Error::Domain(_))));
    }

    #[test]
    fn parse_examples() {
        let v = Vocabulary::standard();
        let ga = v.parse_sequence("GA").unwrap();
        assert_eq!(ga.tokens(), &[v.token("G").unwrap(), v.token("A").unwrap()]);
        let ox = v.parse_sequence("M[+15.995]A").unwrap();
        assert_eq!(ox.tokens(), &[v.token("M[+15.995]").unwrap(), v.token("A").unwrap()]);
        match v.parse_sequence("GXZ") {
            Err(Error::Sequence { position, .. }) => assert_eq!(position, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        match v.parse_sequence("GM[+3.0]") {
            Err(Error::Sequence { position, .. }) => assert_eq!(position, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert_eq!(
            v.parse_sequence("C[+57.021]").unwrap(),
            v.parse_sequence("C").unwrap()
        );
        assert!(v.parse_sequence("M[+15.995").is_err());
    }

    #[test]
    fn toy_vocabulary_rejects_outside_residues() {
        let v = Vocabulary::toy();
        assert!(v.parse_sequence("GASPV").is_ok());
        assert!(v.parse_sequence("GAK").is_err());
    }

    #[test]
    fn vocabulary_serde() {
        let v = Vocabulary::toy();
        let s = serde_json::to_string(&v).unwrap();
        assert_eq!(s, r#"{"residues":["G","A","S","P","V"]}"#);
        let back: Vocabulary = serde_json::from_str(&s).unwrap();
        assert_eq!(back, v);
    }

    fn arb_peptide() -> impl Strategy<Value = Peptide> {
        let v = Vocabulary::standard();
        let n = v.n_residues() as u16;
        proptest::collection::vec(0..n, 0..30).prop_map(|ids| Peptide {
            tokens: ids.into_iter().map(|i| Token(i + Token::N_SPECIAL as u16)).collect(),
        })
    }

    proptest! {
        #[test]
        fn render_parse_round_trip(p in arb_peptide()) {
            let v = Vocabulary::standard();
            prop_assert_eq!(v.parse_sequence(&v.render(&p)).unwrap(), p);
        }

        #[test]
        fn mass_is_permutation_invariant(p in arb_peptide(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let v = Vocabulary::standard();
            let mut shuffled = p.tokens.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let q = Peptide { tokens: shuffled };
            prop_assert!((v.peptide_mass(&p) - v.peptide_mass(&q)).abs() < 1e-9);
        }

        #[test]
        fn mass_is_additive(a in arb_peptide(), b in arb_peptide()) {
            let v = Vocabulary::standard();
            let mut joined = a.tokens.clone();
            joined.extend_from_slice(&b.tokens);
            let ab = Peptide { tokens: joined };
            let lhs = v.peptide_mass(&ab);
            let rhs = v.peptide_mass(&a) + v.peptide_mass(&b) - WATER;
            prop_assert!((lhs - rhs).abs() < 1e-9);
        }

        #[test]
        fn precursor_mz_inverts(p in arb_peptide(), z in 1u32..6) {
            let v = Vocabulary::standard();
            let mz = v.precursor_mz(&p, z).unwrap();
            let back = mz * z as f64 - z as f64 * PROTON;
            prop_assert!((back - v.peptide_mass(&p)).abs() < 1e-9);
        }
    }
}
