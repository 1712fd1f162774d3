//! Translation and language-model metrics: corpus BLEU, chrF, perplexity and
//! stage-by-stage comparison tables.

mod bleu;
mod chrf;
mod comparison;
mod perplexity;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use bleu::{corpus_bleu, BleuOptions, Smoothing, Tokenizer};
pub use chrf::{corpus_chrf, sentence_chrf, ChrfOptions};
pub use comparison::{stage_comparison, ComparisonRow, ComparisonTable, Trend};
pub use perplexity::{perplexity, pooled_perplexity};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("corpus has no segments")]
    EmptyCorpus,
    #[error("segment {0} has no references")]
    NoReferences(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("log-likelihood stream is empty")]
    EmptyStream,
    #[error("log-likelihood {value} at position {position} is positive or not finite")]
    InvalidLogLik { position: usize, value: f64 },
    #[error("{path}: line {line}: {reason}")]
    Parse { path: PathBuf, line: usize, reason: String },
    #[error("reference file {path} has {found} lines, hypothesis file has {expected}")]
    LineCountMismatch { path: PathBuf, expected: usize, found: usize },
    #[error("stage `{stage}` reports metrics {found:?}, expected {expected:?}")]
    InconsistentMetrics {
        stage: String,
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub hypothesis: String,
    pub references: Vec<String>,
}

/// Aligned hypothesis/reference segments.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCorpus {
    segments: Vec<Segment>,
}

impl EvalCorpus {
    pub fn new(segments: Vec<Segment>) -> Result<Self, MetricError> {
        if let Some(i) = segments.iter().position(|s| s.references.is_empty()) {
            return Err(MetricError::NoReferences(i));
        }
        Ok(Self { segments })
    }

    /// One reference per hypothesis.
    pub fn from_pairs<H: AsRef<str>, R: AsRef<str>>(pairs: impl IntoIterator<Item = (H, R)>) -> Self {
        Self {
            segments: pairs
                .into_iter()
                .map(|(h, r)| Segment {
                    hypothesis: h.as_ref().to_string(),
                    references: vec![r.as_ref().to_string()],
                })
                .collect(),
        }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Line-aligned hypothesis file plus one or more reference files.
    pub fn from_files(hyp: impl AsRef<Path>, refs: &[PathBuf]) -> Result<Self, MetricError> {
        let hyps = read_lines(hyp.as_ref())?;
        let mut segments: Vec<Segment> = hyps
            .into_iter()
            .map(|h| Segment { hypothesis: h, references: Vec::new() })
            .collect();
        for path in refs {
            let lines = read_lines(path)?;
            if lines.len() != segments.len() {
                return Err(MetricError::LineCountMismatch {
                    path: path.clone(),
                    expected: segments.len(),
                    found: lines.len(),
                });
            }
            for (seg, line) in segments.iter_mut().zip(lines) {
                seg.references.push(line);
            }
        }
        Self::new(segments)
    }
}

fn read_text(path: &Path) -> Result<String, MetricError> {
    fs::read_to_string(path).map_err(|source| MetricError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_lines(path: &Path) -> Result<Vec<String>, MetricError> {
    Ok(read_text(path)?.lines().map(str::to_string).collect())
}

/// Natural-log token probabilities for one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLikStream {
    token_loglik: Vec<f64>,
}

impl LogLikStream {
    pub fn new(token_loglik: Vec<f64>) -> Result<Self, MetricError> {
        if token_loglik.is_empty() {
            return Err(MetricError::EmptyStream);
        }
        for (position, &value) in token_loglik.iter().enumerate() {
            if !(value <= 0.0) || !value.is_finite() {
                return Err(MetricError::InvalidLogLik { position, value });
            }
        }
        Ok(Self { token_loglik })
    }

    pub fn token_loglik(&self) -> &[f64] {
        &self.token_loglik
    }

    pub fn token_count(&self) -> usize {
        self.token_loglik.len()
    }

    pub fn total(&self) -> f64 {
        self.token_loglik.iter().sum()
    }

    /// One document per line, space-separated values.
    pub fn parse_file(path: impl AsRef<Path>) -> Result<Vec<LogLikStream>, MetricError> {
        let path = path.as_ref();
        let text = read_text(path)?;
        let mut docs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let parse_err = |reason: String| MetricError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                reason,
            };
            let values = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| parse_err(format!("`{t}`: {e}"))))
                .collect::<Result<Vec<_>, _>>()?;
            docs.push(LogLikStream::new(values).map_err(|e| parse_err(e.to_string()))?);
        }
        Ok(docs)
    }

    pub fn to_line(&self) -> String {
        self.token_loglik
            .iter()
            .map(|v| format!("{v:?}"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Bleu,
    Chrf,
    Perplexity,
}

impl MetricKind {
    pub fn higher_is_better(self) -> bool {
        !matches!(self, MetricKind::Perplexity)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Bleu => "bleu",
            MetricKind::Chrf => "chrf",
            MetricKind::Perplexity => "perplexity",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Row key in comparison tables; defaults to the kind name.
    pub name: String,
    pub kind: MetricKind,
    pub value: f64,
    pub details: BTreeMap<String, Value>,
}

impl MetricReport {
    pub(crate) fn new(kind: MetricKind, value: f64) -> Self {
        Self {
            name: kind.as_str().to_string(),
            kind,
            value,
            details: BTreeMap::new(),
        }
    }

    pub(crate) fn detail(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.details.insert(key.to_string(), value.into());
        self
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}
