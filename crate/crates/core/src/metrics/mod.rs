//! Peptide- and residue-level accuracy metrics, the JSONL evaluation report
//! and paired comparison of two reports.

mod wilcoxon;

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use wilcoxon::{wilcoxon_signed_rank, PMethod, WilcoxonResult, EXACT_LIMIT};

use crate::error::{Error, Result};
use crate::peptide::{Peptide, Token, Vocabulary};

/// Mass windows for residue matching.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchConfig {
    /// Max difference of cumulative prefix masses, Da.
    pub prefix_tol_da: f64,
    /// Max difference of the paired residue masses, Da.
    pub residue_tol_da: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            prefix_tol_da: 0.5,
            residue_tol_da: 0.1,
        }
    }
}

/// Residues of `pred` matched to `truth` by walking both prefix-mass ladders.
///
/// At each step the prefixes including the current residues are compared;
/// within `prefix_tol_da` both pointers advance (counting a match when the
/// residues agree within `residue_tol_da`), otherwise the lighter side advances.
pub fn match_amino_acids(pred: &[Token], truth: &[Token], vocab: &Vocabulary, cfg: &MatchConfig) -> usize {
    let masses = vocab.mass_table();
    let (mut i, mut j) = (0, 0);
    let (mut cp, mut ct) = (0.0, 0.0);
    let mut matched = 0;
    while i < pred.len() && j < truth.len() {
        let mp = masses[pred[i].index()];
        let mt = masses[truth[j].index()];
        if ((cp + mp) - (ct + mt)).abs() <= cfg.prefix_tol_da {
            if (mp - mt).abs() <= cfg.residue_tol_da {
                matched += 1;
            }
            cp += mp;
            ct += mt;
            i += 1;
            j += 1;
        } else if ct + mt > cp + mp {
            cp += mp;
            i += 1;
        } else {
            ct += mt;
            j += 1;
        }
    }
    matched
}

/// One decoded spectrum. `peptide: None` means nothing was predicted.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub id: String,
    pub peptide: Option<Peptide>,
    pub score: Option<f64>,
    /// Set when a prediction existed but the delta-mass filter removed it.
    pub filtered: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub id: String,
    pub predicted: Option<String>,
    pub truth: String,
    pub matched: usize,
    pub predicted_aa: usize,
    pub truth_aa: usize,
    pub exact: bool,
    #[serde(default)]
    pub filtered: bool,
}

impl MatchRecord {
    pub fn recall(&self) -> f64 {
        if self.truth_aa == 0 {
            0.0
        } else {
            self.matched as f64 / self.truth_aa as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub peptide_precision: f64,
    pub peptide_coverage: f64,
    pub aa_precision: f64,
    pub aa_recall: f64,
    pub n_spectra: usize,
    pub n_predicted: usize,
    pub n_exact: usize,
    pub n_unpredicted: usize,
    pub n_filtered: usize,
    /// No spectrum was predicted; both precisions are reported as 0.
    pub precision_undefined: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub summary: EvalSummary,
    pub records: Vec<MatchRecord>,
}

/// Score `predictions` against every `(id, truth)` pair.
///
/// Empty predicted peptides count as unpredicted. Unpredicted spectra add
/// their residues to the recall denominator only.
pub fn evaluate(
    predictions: &[Prediction],
    truths: &[(String, Peptide)],
    vocab: &Vocabulary,
    cfg: &MatchConfig,
) -> Result<EvalReport> {
    let mut by_id: HashMap<&str, &Prediction> = HashMap::new();
    for p in predictions {
        if by_id.insert(&p.id, p).is_some() {
            return Err(Error::Domain(format!("duplicate prediction for spectrum {:?}", p.id)));
        }
    }
    let mut seen = HashSet::new();
    let mut records = Vec::with_capacity(truths.len());
    for (id, truth) in truths {
        if !seen.insert(id.as_str()) {
            return Err(Error::Domain(format!("spectrum {id:?} appears twice in the truth set")));
        }
        let pred = by_id.get(id.as_str());
        let peptide = pred.and_then(|p| p.peptide.as_ref()).filter(|p| !p.is_empty());
        let matched = peptide.map_or(0, |p| match_amino_acids(p.tokens(), truth.tokens(), vocab, cfg));
        let predicted_aa = peptide.map_or(0, |p| p.len());
        records.push(MatchRecord {
            id: id.clone(),
            predicted: peptide.map(|p| vocab.render(p)),
            truth: vocab.render(truth),
            matched,
            predicted_aa,
            truth_aa: truth.len(),
            exact: peptide.is_some() && matched == predicted_aa && matched == truth.len(),
            filtered: pred.is_some_and(|p| p.filtered),
        });
    }
    if let Some(extra) = by_id.keys().find(|k| !seen.contains(**k)) {
        return Err(Error::Domain(format!("prediction for unknown spectrum {extra:?}")));
    }
    Ok(EvalReport {
        summary: summarize(&records),
        records,
    })
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn summarize(records: &[MatchRecord]) -> EvalSummary {
    let predicted: Vec<&MatchRecord> = records.iter().filter(|r| r.predicted.is_some()).collect();
    let n_exact = predicted.iter().filter(|r| r.exact).count();
    let matched_pred: usize = predicted.iter().map(|r| r.matched).sum();
    let pred_aa: usize = predicted.iter().map(|r| r.predicted_aa).sum();
    let matched_all: usize = records.iter().map(|r| r.matched).sum();
    let truth_aa: usize = records.iter().map(|r| r.truth_aa).sum();
    EvalSummary {
        peptide_precision: ratio(n_exact, predicted.len()),
        peptide_coverage: ratio(predicted.len(), records.len()),
        aa_precision: ratio(matched_pred, pred_aa),
        aa_recall: ratio(matched_all, truth_aa),
        n_spectra: records.len(),
        n_predicted: predicted.len(),
        n_exact,
        n_unpredicted: records.len() - predicted.len(),
        n_filtered: records.iter().filter(|r| r.filtered).count(),
        precision_undefined: predicted.is_empty(),
    }
}

#[derive(Serialize, Deserialize)]
struct SummaryLine {
    summary: EvalSummary,
}

impl EvalReport {
    /// One JSON object per record, then a `{"summary": ...}` line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e: std::io::Error| Error::Config(format!("writing report: {e}"));
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n").map_err(io)?;
        }
        serde_json::to_writer(
            &mut w,
            &SummaryLine {
                summary: self.summary.clone(),
            },
        )?;
        w.write_all(b"\n").map_err(io)?;
        w.flush().map_err(io)
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut records = Vec::new();
        let mut summary = None;
        for (n, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::Config(format!("reading report line {}: {e}", n + 1)))?;
            if line.trim().is_empty() {
                continue;
            }
            if summary.is_some() {
                return Err(Error::Config(format!("report line {}: data after the summary", n + 1)));
            }
            let v: serde_json::Value = serde_json::from_str(&line)?;
            if v.get("summary").is_some() {
                summary = Some(serde_json::from_value::<SummaryLine>(v)?.summary);
            } else {
                records.push(serde_json::from_value(v)?);
            }
        }
        let summary = summary.ok_or_else(|| Error::Config("report has no summary line".into()))?;
        Ok(EvalReport { summary, records })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_jsonl(BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_jsonl(BufReader::new(f))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricDeltas {
    pub peptide_precision: f64,
    pub peptide_coverage: f64,
    pub aa_precision: f64,
    pub aa_recall: f64,
}

/// `b - a` for every summary metric, plus a signed-rank test on per-spectrum recall.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub deltas: MetricDeltas,
    pub recall_test: Option<WilcoxonResult>,
    /// Why `recall_test` is missing, e.g. all paired differences are zero.
    pub undefined_reason: Option<String>,
}

pub fn compare(a: &EvalReport, b: &EvalReport) -> Result<Comparison> {
    let ids_a: HashSet<&str> = a.records.iter().map(|r| r.id.as_str()).collect();
    let ids_b: HashMap<&str, &MatchRecord> = b.records.iter().map(|r| (r.id.as_str(), r)).collect();
    if ids_a.len() != a.records.len() || ids_b.len() != b.records.len() {
        return Err(Error::Domain("report contains duplicate spectrum ids".into()));
    }
    if ids_a.len() != ids_b.len() || ids_a.iter().any(|id| !ids_b.contains_key(id)) {
        return Err(Error::Domain("reports cover different spectrum id sets".into()));
    }
    let ra: Vec<f64> = a.records.iter().map(|r| r.recall()).collect();
    let rb: Vec<f64> = a.records.iter().map(|r| ids_b[r.id.as_str()].recall()).collect();
    let (sa, sb) = (&a.summary, &b.summary);
    let deltas = MetricDeltas {
        peptide_precision: sb.peptide_precision - sa.peptide_precision,
        peptide_coverage: sb.peptide_coverage - sa.peptide_coverage,
        aa_precision: sb.aa_precision - sa.aa_precision,
        aa_recall: sb.aa_recall - sa.aa_recall,
    };
    let (recall_test, undefined_reason) = match wilcoxon_signed_rank(&rb, &ra) {
        Ok(r) => (Some(r), None),
        Err(Error::UndefinedTest(m)) => (None, Some(m)),
        Err(e) => return Err(e),
    };
    Ok(Comparison {
        deltas,
        recall_test,
        undefined_reason,
    })
}
