use std::collections::HashMap;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EvalCorpus, MetricError, MetricKind, MetricReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tokenizer {
    /// Split on Unicode whitespace.
    #[default]
    Whitespace,
    /// Every non-whitespace character is a token; for scripts without
    /// word-separating spaces.
    Char,
}

impl Tokenizer {
    pub fn tokenize(self, text: &str) -> Vec<String> {
        match self {
            Tokenizer::Whitespace => text.split_whitespace().map(str::to_string).collect(),
            Tokenizer::Char => text.chars().filter(|c| !c.is_whitespace()).map(String::from).collect(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Tokenizer::Whitespace => "whitespace",
            Tokenizer::Char => "char",
        }
    }
}

impl FromStr for Tokenizer {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "whitespace" => Ok(Tokenizer::Whitespace),
            "char" => Ok(Tokenizer::Char),
            other => Err(MetricError::InvalidParameter(format!("unknown tokenizer `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    /// The k-th order with zero matches gets precision 1 / (2^k · hyp n-gram count).
    #[default]
    Exp,
    None,
}

impl Smoothing {
    pub fn as_str(self) -> &'static str {
        match self {
            Smoothing::Exp => "exp",
            Smoothing::None => "none",
        }
    }
}

impl FromStr for Smoothing {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exp" => Ok(Smoothing::Exp),
            "none" => Ok(Smoothing::None),
            other => Err(MetricError::InvalidParameter(format!("unknown smoothing `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BleuOptions {
    pub max_n: usize,
    pub tokenizer: Tokenizer,
    pub smoothing: Smoothing,
}

impl Default for BleuOptions {
    fn default() -> Self {
        Self {
            max_n: 4,
            tokenizer: Tokenizer::Whitespace,
            smoothing: Smoothing::Exp,
        }
    }
}

struct SegmentStats {
    matches: Vec<u64>,
    totals: Vec<u64>,
    hyp_len: u64,
    ref_len: u64,
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

fn segment_stats(hyp: &str, refs: &[String], opts: &BleuOptions) -> SegmentStats {
    let hyp = opts.tokenizer.tokenize(hyp);
    let refs: Vec<Vec<String>> = refs.iter().map(|r| opts.tokenizer.tokenize(r)).collect();
    let mut matches = vec![0; opts.max_n];
    let mut totals = vec![0; opts.max_n];
    for n in 1..=opts.max_n {
        let hyp_counts = ngram_counts(&hyp, n);
        let mut max_ref: HashMap<&[String], u64> = HashMap::new();
        for r in &refs {
            for (gram, c) in ngram_counts(r, n) {
                let slot = max_ref.entry(gram).or_insert(0);
                *slot = (*slot).max(c);
            }
        }
        matches[n - 1] = hyp_counts
            .iter()
            .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
            .sum();
        totals[n - 1] = hyp.len().saturating_sub(n - 1) as u64;
    }
    let hyp_len = hyp.len() as u64;
    // closest reference length; ties go to the shorter one
    let ref_len = refs
        .iter()
        .map(|r| r.len() as u64)
        .min_by_key(|&len| (len.abs_diff(hyp_len), len))
        .unwrap_or(0);
    SegmentStats { matches, totals, hyp_len, ref_len }
}

/// Corpus BLEU in [0, 1]: n-gram matches and counts are pooled over all
/// segments before taking the geometric mean of precisions.
pub fn corpus_bleu(corpus: &EvalCorpus, opts: &BleuOptions) -> Result<MetricReport, MetricError> {
    if corpus.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    if opts.max_n < 1 {
        return Err(MetricError::InvalidParameter("max_n must be at least 1".into()));
    }
    let per_segment: Vec<SegmentStats> = corpus
        .segments()
        .par_iter()
        .map(|s| segment_stats(&s.hypothesis, &s.references, opts))
        .collect();

    let mut matches = vec![0u64; opts.max_n];
    let mut totals = vec![0u64; opts.max_n];
    let (mut hyp_len, mut ref_len) = (0u64, 0u64);
    for s in &per_segment {
        for n in 0..opts.max_n {
            matches[n] += s.matches[n];
            totals[n] += s.totals[n];
        }
        hyp_len += s.hyp_len;
        ref_len += s.ref_len;
    }

    let mut precisions = vec![0.0f64; opts.max_n];
    let mut zero_orders = 0i32;
    for n in 0..opts.max_n {
        if totals[n] == 0 {
            precisions[n] = 0.0;
        } else if matches[n] == 0 {
            precisions[n] = match opts.smoothing {
                Smoothing::Exp => {
                    zero_orders += 1;
                    1.0 / (2f64.powi(zero_orders) * totals[n] as f64)
                }
                Smoothing::None => 0.0,
            };
        } else {
            precisions[n] = matches[n] as f64 / totals[n] as f64;
        }
    }

    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).min(0.0).exp()
    };
    let value = if precisions.iter().any(|&p| p == 0.0) {
        0.0
    } else {
        let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / opts.max_n as f64;
        brevity_penalty * log_mean.exp()
    };

    Ok(MetricReport::new(MetricKind::Bleu, value.clamp(0.0, 1.0))
        .detail("precisions", precisions)
        .detail("matches", matches)
        .detail("totals", totals)
        .detail("brevity_penalty", brevity_penalty)
        .detail("hyp_len", hyp_len)
        .detail("ref_len", ref_len)
        .detail("max_n", opts.max_n)
        .detail("tokenizer", opts.tokenizer.as_str())
        .detail("smoothing", opts.smoothing.as_str())
        .detail("scale", "0-1"))
}
