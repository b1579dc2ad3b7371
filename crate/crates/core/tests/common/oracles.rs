//! Brute-force references for the search and statistics code.

use novodiff::search::StepScorer;
use novodiff::{Token, Vocabulary};

/// Cells reachable by some nonempty-or-empty residue multiset, found by
/// enumerating multisets directly. `out[c]` is true when cell `c` is a sum of
/// rounded residue cells and `c <= max_cell`.
pub fn multiset_cells(vocab: &Vocabulary, resolution: f64, max_cell: usize) -> Vec<bool> {
    let cells: Vec<usize> = vocab
        .residue_tokens()
        .map(|t| (vocab.residue_mass(t).unwrap() / resolution).round() as usize)
        .collect();
    let mut out = vec![false; max_cell + 1];
    fn walk(cells: &[usize], from: usize, sum: usize, max: usize, out: &mut [bool]) {
        out[sum] = true;
        for i in from..cells.len() {
            let next = sum + cells[i];
            if next <= max {
                walk(cells, i, next, max, out);
            }
        }
    }
    walk(&cells, 0, 0, max_cell, &mut out);
    out
}

/// Best complete sequence under `scorer`, by enumerating every residue string.
///
/// Sequences shorter than `max_len` pay for STOP; full-length ones end without
/// it. Ties go to the lexicographically smaller emitted token ids.
pub fn exhaustive_argmax(scorer: &dyn StepScorer) -> (Vec<Token>, bool, f64) {
    let v = scorer.vocab_size();
    let max_len = scorer.max_len();
    let residues: Vec<Token> = (Token::N_SPECIAL..v).map(|i| Token(i as u16)).collect();
    let mut best: Option<(Vec<u16>, Vec<Token>, bool, f64)> = None;
    let mut consider = |tokens: &[Token], stopped: bool, score: f64| {
        let mut emitted: Vec<u16> = tokens.iter().map(|t| t.0).collect();
        if stopped {
            emitted.push(Token::STOP.0);
        }
        let better = match &best {
            None => true,
            Some((e, _, _, s)) => score > *s || (score == *s && emitted < *e),
        };
        if better {
            best = Some((emitted, tokens.to_vec(), stopped, score));
        }
    };
    let mut seqs: Vec<Vec<Token>> = vec![Vec::new()];
    for len in 0..=max_len {
        for seq in &seqs {
            let mut score = 0.0;
            for k in 0..seq.len() {
                score += scorer.step_log_probs(&seq[..k]).unwrap()[seq[k].index()];
            }
            if len < max_len {
                let stop = scorer.step_log_probs(seq).unwrap()[Token::STOP.index()];
                consider(seq, true, score + stop);
            } else {
                consider(seq, false, score);
            }
        }
        seqs = seqs
            .iter()
            .flat_map(|s| {
                residues.iter().map(move |&r| {
                    let mut n = s.clone();
                    n.push(r);
                    n
                })
            })
            .collect();
    }
    let (_, tokens, stopped, score) = best.unwrap();
    (tokens, stopped, score)
}

/// Two-sided signed-rank p-value by enumerating all `2^n` sign assignments.
/// Differences must be nonzero with distinct magnitudes.
pub fn wilcoxon_enumerated(diffs: &[f64]) -> f64 {
    let n = diffs.len();
    let ranks: Vec<u64> = diffs
        .iter()
        .map(|d| 1 + diffs.iter().filter(|e| e.abs() < d.abs()).count() as u64)
        .collect();
    let total: u64 = ranks.iter().sum();
    let w_plus: u64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let observed = w_plus.min(total - w_plus);
    let mut extreme = 0u64;
    for mask in 0u64..(1 << n) {
        let w: u64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if w.min(total - w) <= observed {
            extreme += 1;
        }
    }
    extreme as f64 / (1u64 << n) as f64
}
