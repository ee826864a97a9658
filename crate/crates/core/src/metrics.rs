//! Corpus BLEU, exact match and longest-common-prefix scores over token
//! sequences.

use std::collections::HashMap;
use std::fmt;
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::typed_tree::AstToken;
use crate::vocab::mask_literals;

/// Stand-in for a zero higher-order n-gram precision.
pub const BLEU_EPSILON: f64 = 1e-9;
pub const BLEU_MAX_ORDER: usize = 4;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("{predictions} predictions for {references} references")]
    LengthMismatch { predictions: usize, references: usize },
    #[error("reference {0} is empty")]
    EmptyReference(usize),
}

fn check<S>(preds: &[Vec<S>], refs: &[Vec<S>]) -> Result<(), MetricsError> {
    if preds.len() != refs.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: preds.len(),
            references: refs.len(),
        });
    }
    if refs.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    Ok(())
}

fn ngram_counts<S: Hash + Eq>(seq: &[S], n: usize) -> HashMap<&[S], usize> {
    let mut m = HashMap::new();
    if seq.len() >= n {
        for w in seq.windows(n) {
            *m.entry(w).or_default() += 1;
        }
    }
    m
}

/// Corpus-level BLEU with clipped n-gram precisions for n = 1..4, their
/// geometric mean and a brevity penalty. Orders for which the predictions
/// contain no n-grams at all are left out of the mean. A zero precision at
/// order 2 or above is replaced by [`BLEU_EPSILON`]; a zero unigram
/// precision gives 0.
pub fn bleu<S: Hash + Eq>(preds: &[Vec<S>], refs: &[Vec<S>]) -> Result<f64, MetricsError> {
    check(preds, refs)?;
    let mut log_sum = 0.0;
    let mut orders = 0;
    for n in 1..=BLEU_MAX_ORDER {
        let (mut matched, mut total) = (0usize, 0usize);
        for (p, r) in preds.iter().zip(refs) {
            let rc = ngram_counts(r, n);
            for (g, k) in ngram_counts(p, n) {
                matched += k.min(rc.get(g).copied().unwrap_or(0));
                total += k;
            }
        }
        if total == 0 {
            continue;
        }
        let precision = if matched > 0 {
            matched as f64 / total as f64
        } else if n == 1 {
            return Ok(0.0);
        } else {
            BLEU_EPSILON
        };
        log_sum += precision.ln();
        orders += 1;
    }
    if orders == 0 {
        return Ok(0.0);
    }
    let c: usize = preds.iter().map(Vec::len).sum();
    let r: usize = refs.iter().map(Vec::len).sum();
    let bp = if c < r {
        (1.0 - r as f64 / c as f64).exp()
    } else {
        1.0
    };
    Ok(bp * (log_sum / orders as f64).exp())
}

/// Fraction of predictions identical to their reference.
pub fn exact_match<S: PartialEq>(preds: &[Vec<S>], refs: &[Vec<S>]) -> Result<f64, MetricsError> {
    check(preds, refs)?;
    let hits = preds.iter().zip(refs).filter(|(p, r)| p == r).count();
    Ok(hits as f64 / refs.len() as f64)
}

pub fn lcp<S: PartialEq>(a: &[S], b: &[S]) -> usize {
    a.iter().zip(b).take_while(|(x, y)| x == y).count()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrefixScores {
    pub token_recall: f64,
    pub token_precision: f64,
    pub seq_recall: f64,
    pub seq_precision: f64,
}

/// Longest-common-prefix scores. Token-level scores pool prefix lengths
/// over the corpus; sequence-level scores average per-sample ratios. An
/// empty prediction contributes precision 0.
pub fn prefix_scores<S: PartialEq>(preds: &[Vec<S>], refs: &[Vec<S>]) -> Result<PrefixScores, MetricsError> {
    check(preds, refs)?;
    if let Some(i) = refs.iter().position(Vec::is_empty) {
        return Err(MetricsError::EmptyReference(i));
    }
    let (mut lcp_sum, mut ref_sum, mut pred_sum) = (0usize, 0usize, 0usize);
    let (mut rec, mut prec) = (0.0, 0.0);
    for (p, r) in preds.iter().zip(refs) {
        let l = lcp(p, r);
        lcp_sum += l;
        ref_sum += r.len();
        pred_sum += p.len();
        rec += l as f64 / r.len() as f64;
        if !p.is_empty() {
            prec += l as f64 / p.len() as f64;
        }
    }
    let n = refs.len() as f64;
    Ok(PrefixScores {
        token_recall: lcp_sum as f64 / ref_sum as f64,
        token_precision: if pred_sum == 0 { 0.0 } else { lcp_sum as f64 / pred_sum as f64 },
        seq_recall: rec / n,
        seq_precision: prec / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bleu: f64,
    pub em_accuracy: f64,
    pub seq_recall: f64,
    pub seq_precision: f64,
    pub token_recall: f64,
    pub token_precision: f64,
    pub samples: usize,
    pub masked_literals: bool,
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "samples          {:>8}", self.samples)?;
        writeln!(f, "masked literals  {:>8}", self.masked_literals)?;
        for (name, v) in [
            ("bleu", self.bleu),
            ("exact match", self.em_accuracy),
            ("seq recall", self.seq_recall),
            ("seq precision", self.seq_precision),
            ("token recall", self.token_recall),
            ("token precision", self.token_precision),
        ] {
            writeln!(f, "{name:<16} {v:>8.4}")?;
        }
        Ok(())
    }
}

fn strip_markers(seq: &[AstToken]) -> Vec<AstToken> {
    seq.iter()
        .filter(|t| !matches!(t, AstToken::Sos | AstToken::Eos))
        .cloned()
        .collect()
}

/// All metrics over AST token sequences. `sos`/`eos` are dropped from both
/// sides first; with `mask`, string literals are replaced by their sentinel.
pub fn evaluate(preds: &[Vec<AstToken>], refs: &[Vec<AstToken>], mask: bool) -> Result<EvalReport, MetricsError> {
    let prep = |xs: &[Vec<AstToken>]| -> Vec<Vec<AstToken>> {
        xs.iter()
            .map(|s| {
                let s = strip_markers(s);
                if mask {
                    mask_literals(&s)
                } else {
                    s
                }
            })
            .collect()
    };
    let (p, r) = (prep(preds), prep(refs));
    let prefix = prefix_scores(&p, &r)?;
    Ok(EvalReport {
        bleu: bleu(&p, &r)?,
        em_accuracy: exact_match(&p, &r)?,
        seq_recall: prefix.seq_recall,
        seq_precision: prefix.seq_precision,
        token_recall: prefix.token_recall,
        token_precision: prefix.token_precision,
        samples: r.len(),
        masked_literals: mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::typed_tree::LiteralCategory;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn bleu_reference_points() {
        let x = vec![toks("a b c d e"), toks("f g")];
        assert!((bleu(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(bleu(&[vec![]], &[toks("a b")]).unwrap(), 0.0);
        assert_eq!(bleu::<String>(&[], &[]), Err(MetricsError::EmptyCorpus));
        assert!(bleu(&[toks("a")], &[]).is_err());
    }

    #[test]
    fn brevity_penalty_applies_to_short_output() {
        let got = bleu(&[toks("a b")], &[toks("a b c d")]).unwrap();
        // p1 = p2 = 1; higher orders have no candidate n-grams
        assert!((got - (1.0f64 - 2.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn prefix_edge_cases() {
        let s = prefix_scores(&[vec![]], &[toks("a")]).unwrap();
        assert_eq!((s.seq_precision, s.token_precision, s.seq_recall), (0.0, 0.0, 0.0));
        assert_eq!(
            prefix_scores(&[toks("a")], &[vec![]]),
            Err(MetricsError::EmptyReference(0))
        );
    }

    #[test]
    fn exact_match_counts() {
        let refs: Vec<_> = (0..10).map(|i| vec![i]).collect();
        let preds: Vec<_> = (0..10).map(|i| vec![if i < 3 { i } else { 99 }]).collect();
        assert!((exact_match(&preds, &refs).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn masking_collapses_literal_differences() {
        let seq = |v: &str| {
            vec![
                AstToken::Sos,
                AstToken::node("Str"),
                AstToken::literal(LiteralCategory::String, v),
                AstToken::Eos,
            ]
        };
        let preds = vec![seq("x"), seq("y")];
        let refs = vec![seq("p"), seq("q")];
        assert_eq!(evaluate(&preds, &refs, true).unwrap().em_accuracy, 1.0);
        let plain = evaluate(&preds, &refs, false).unwrap();
        assert_eq!(plain.em_accuracy, 0.0);
        assert_eq!(plain.seq_recall, 0.5);
        assert!(plain.to_string().contains("exact match"));
    }
}
