use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EvalCorpus, MetricError, MetricKind, MetricReport};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChrfOptions {
    pub char_n: usize,
    pub beta: f64,
}

impl Default for ChrfOptions {
    fn default() -> Self {
        Self { char_n: 6, beta: 2.0 }
    }
}

fn char_ngrams(chars: &[char], n: usize) -> HashMap<&[char], u64> {
    let mut counts = HashMap::new();
    if chars.len() >= n {
        for w in chars.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

struct SentenceScore {
    score: f64,
    precision: f64,
    recall: f64,
}

/// Precision is averaged over the orders at which the hypothesis has
/// n-grams, recall over the orders at which the reference has n-grams.
fn score_pair(hyp: &str, reference: &str, opts: &ChrfOptions) -> SentenceScore {
    let h: Vec<char> = hyp.chars().filter(|c| !c.is_whitespace()).collect();
    let r: Vec<char> = reference.chars().filter(|c| !c.is_whitespace()).collect();
    if h.is_empty() && r.is_empty() {
        return SentenceScore { score: 100.0, precision: 1.0, recall: 1.0 };
    }
    let (mut p_sum, mut p_orders, mut r_sum, mut r_orders) = (0.0, 0usize, 0.0, 0usize);
    for n in 1..=opts.char_n {
        let hc = char_ngrams(&h, n);
        let rc = char_ngrams(&r, n);
        let hyp_total: u64 = hc.values().sum();
        let ref_total: u64 = rc.values().sum();
        let matched: u64 = hc.iter().map(|(g, &c)| c.min(rc.get(g).copied().unwrap_or(0))).sum();
        if hyp_total > 0 {
            p_sum += matched as f64 / hyp_total as f64;
            p_orders += 1;
        }
        if ref_total > 0 {
            r_sum += matched as f64 / ref_total as f64;
            r_orders += 1;
        }
    }
    let precision = if p_orders > 0 { p_sum / p_orders as f64 } else { 0.0 };
    let recall = if r_orders > 0 { r_sum / r_orders as f64 } else { 0.0 };
    let b2 = opts.beta * opts.beta;
    let denom = b2 * precision + recall;
    let f = if denom > 0.0 { (1.0 + b2) * precision * recall / denom } else { 0.0 };
    SentenceScore {
        score: (100.0 * f).clamp(0.0, 100.0),
        precision,
        recall,
    }
}

/// chrF of one hypothesis against its best-matching reference, 0..100.
pub fn sentence_chrf(hyp: &str, references: &[String], opts: &ChrfOptions) -> f64 {
    best_reference(hyp, references, opts).score
}

fn best_reference(hyp: &str, references: &[String], opts: &ChrfOptions) -> SentenceScore {
    references
        .iter()
        .map(|r| score_pair(hyp, r, opts))
        .reduce(|best, s| if s.score > best.score { s } else { best })
        .expect("segments carry at least one reference")
}

/// Segment-level chrF macro-averaged over the corpus, 0..100.
pub fn corpus_chrf(corpus: &EvalCorpus, opts: &ChrfOptions) -> Result<MetricReport, MetricError> {
    if corpus.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    if opts.char_n < 1 {
        return Err(MetricError::InvalidParameter("char_n must be at least 1".into()));
    }
    if !(opts.beta > 0.0) || !opts.beta.is_finite() {
        return Err(MetricError::InvalidParameter("beta must be positive".into()));
    }
    let scores: Vec<SentenceScore> = corpus
        .segments()
        .par_iter()
        .map(|s| best_reference(&s.hypothesis, &s.references, opts))
        .collect();
    let n = scores.len() as f64;
    let value = scores.iter().map(|s| s.score).sum::<f64>() / n;
    let mean_precision = scores.iter().map(|s| s.precision).sum::<f64>() / n;
    let mean_recall = scores.iter().map(|s| s.recall).sum::<f64>() / n;
    Ok(MetricReport::new(MetricKind::Chrf, value)
        .detail("char_n", opts.char_n)
        .detail("beta", opts.beta)
        .detail("mean_char_precision", mean_precision)
        .detail("mean_char_recall", mean_recall)
        .detail("segments", scores.len())
        .detail("scale", "0-100"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::Segment;

    #[test]
    fn identity_and_disjoint() {
        let corpus = EvalCorpus::from_pairs([("abc def", "abc def"), ("x", "x")]);
        assert_eq!(corpus_chrf(&corpus, &ChrfOptions::default()).unwrap().value, 100.0);
        let corpus = EvalCorpus::from_pairs([("abc", "xyz")]);
        assert_eq!(corpus_chrf(&corpus, &ChrfOptions::default()).unwrap().value, 0.0);
    }

    #[test]
    fn whitespace_is_ignored() {
        let opts = ChrfOptions::default();
        assert_eq!(sentence_chrf("a b c", &["abc".to_string()], &opts), 100.0);
    }

    #[test]
    fn abcd_vs_abce_by_hand() {
        // n=1: 3/4 both ways; n=2: 2/3; n=3: 1/2; n=4: 0/1; n=5,6: no n-grams
        let p = (0.75 + 2.0 / 3.0 + 0.5 + 0.0) / 4.0;
        let expected = 100.0 * 5.0 * p * p / (4.0 * p + p);
        let got = sentence_chrf("abcd", &["abce".to_string()], &ChrfOptions::default());
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn best_reference_wins() {
        let corpus = EvalCorpus::new(vec![Segment {
            hypothesis: "hello".into(),
            references: vec!["world".into(), "hello".into()],
        }])
        .unwrap();
        assert_eq!(corpus_chrf(&corpus, &ChrfOptions::default()).unwrap().value, 100.0);
    }

    #[test]
    fn empty_hypothesis() {
        let opts = ChrfOptions::default();
        assert_eq!(sentence_chrf("", &["abc".to_string()], &opts), 0.0);
        assert_eq!(sentence_chrf(" ", &["".to_string()], &opts), 100.0);
    }

    #[test]
    fn beta_one_is_symmetric() {
        let opts = ChrfOptions { char_n: 6, beta: 1.0 };
        let a = sentence_chrf("kitten sitting", &["sitting kitten on".to_string()], &opts);
        let b = sentence_chrf("sitting kitten on", &["kitten sitting".to_string()], &opts);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn parameter_errors() {
        let corpus = EvalCorpus::from_pairs([("a", "a")]);
        assert!(corpus_chrf(&corpus, &ChrfOptions { char_n: 0, beta: 2.0 }).is_err());
        assert!(corpus_chrf(&corpus, &ChrfOptions { char_n: 6, beta: 0.0 }).is_err());
        assert!(corpus_chrf(&EvalCorpus::default(), &ChrfOptions::default()).is_err());
    }
}
