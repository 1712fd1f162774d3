//! Tensor-name classification into layer classes and block indices.
//!
//! The default rule table targets the decoder naming family
//! (`model.embed_tokens.weight`, `model.layers.<i>.mlp.gate_proj.weight`,
//! `lm_head.weight`, ...). Rules are tried in order and the first match wins;
//! names no rule matches become [`LayerClass::Other`].
//!
//! Override files are line based:
//!
//! ```text
//! # comment
//! <regex> <class>
//! ```
//!
//! where `<class>` is one of the snake_case class names (`embedding`,
//! `lm_head`, `attn_q`, ..., `other`).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerClass {
    Embedding,
    LmHead,
    AttnQ,
    AttnK,
    AttnV,
    AttnO,
    MlpGate,
    MlpUp,
    MlpDown,
    Norm,
    Other,
}

impl LayerClass {
    pub const ALL: [LayerClass; 11] = [
        LayerClass::Embedding,
        LayerClass::LmHead,
        LayerClass::AttnQ,
        LayerClass::AttnK,
        LayerClass::AttnV,
        LayerClass::AttnO,
        LayerClass::MlpGate,
        LayerClass::MlpUp,
        LayerClass::MlpDown,
        LayerClass::Norm,
        LayerClass::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LayerClass::Embedding => "embedding",
            LayerClass::LmHead => "lm_head",
            LayerClass::AttnQ => "attn_q",
            LayerClass::AttnK => "attn_k",
            LayerClass::AttnV => "attn_v",
            LayerClass::AttnO => "attn_o",
            LayerClass::MlpGate => "mlp_gate",
            LayerClass::MlpUp => "mlp_up",
            LayerClass::MlpDown => "mlp_down",
            LayerClass::Norm => "norm",
            LayerClass::Other => "other",
        }
    }
}

impl fmt::Display for LayerClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for LayerClass {
    type Err = TaxonomyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LayerClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| TaxonomyError::UnknownClass(s.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("unknown layer class `{0}`")]
    UnknownClass(String),
    #[error("line {line}: {reason}")]
    BadRule { line: usize, reason: String },
}

/// Parsed identity of a tensor.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerKey {
    pub raw_name: String,
    pub block_index: Option<usize>,
    pub layer_class: LayerClass,
}

#[derive(Debug, Clone)]
pub struct Rule {
    pattern: Regex,
    class: LayerClass,
}

impl Rule {
    pub fn new(pattern: &str, class: LayerClass) -> Result<Self, regex::Error> {
        Ok(Self {
            pattern: Regex::new(pattern)?,
            class,
        })
    }

    pub fn pattern(&self) -> &str {
        self.pattern.as_str()
    }

    pub fn class(&self) -> LayerClass {
        self.class
    }
}

/// Ordered rule table; first match wins.
#[derive(Debug, Clone)]
pub struct Taxonomy {
    rules: Vec<Rule>,
}

const DEFAULT_RULES: &[(&str, LayerClass)] = &[
    (r"embed_tokens", LayerClass::Embedding),
    (r"lm_head", LayerClass::LmHead),
    (r"self_attn\.q_proj", LayerClass::AttnQ),
    (r"self_attn\.k_proj", LayerClass::AttnK),
    (r"self_attn\.v_proj", LayerClass::AttnV),
    (r"self_attn\.o_proj", LayerClass::AttnO),
    (r"mlp\.gate_proj", LayerClass::MlpGate),
    (r"mlp\.up_proj", LayerClass::MlpUp),
    (r"mlp\.down_proj", LayerClass::MlpDown),
    (r"norm", LayerClass::Norm),
];

fn block_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?:^|\.)layers\.(\d+)\.").unwrap())
}

impl Default for Taxonomy {
    fn default() -> Self {
        let rules = DEFAULT_RULES
            .iter()
            .map(|(p, c)| Rule::new(p, *c).expect("default patterns compile"))
            .collect();
        Self { rules }
    }
}

impl Taxonomy {
    pub fn from_rules(rules: Vec<Rule>) -> Self {
        Self { rules }
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    /// Parse an override file (see module docs).
    pub fn parse(text: &str) -> Result<Self, TaxonomyError> {
        let mut rules = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (pattern, class) = line.rsplit_once(char::is_whitespace).ok_or_else(|| TaxonomyError::BadRule {
                line: line_no,
                reason: "expected `<pattern> <class>`".into(),
            })?;
            let class: LayerClass = class.parse().map_err(|e: TaxonomyError| TaxonomyError::BadRule {
                line: line_no,
                reason: e.to_string(),
            })?;
            let rule = Rule::new(pattern.trim(), class).map_err(|e| TaxonomyError::BadRule {
                line: line_no,
                reason: e.to_string(),
            })?;
            rules.push(rule);
        }
        Ok(Self { rules })
    }

    pub fn classify(&self, name: &str) -> LayerKey {
        let layer_class = self
            .rules
            .iter()
            .find(|r| r.pattern.is_match(name))
            .map_or(LayerClass::Other, |r| r.class);
        let block_index = block_pattern()
            .captures(name)
            .and_then(|c| c[1].parse().ok());
        LayerKey {
            raw_name: name.to_string(),
            block_index,
            layer_class,
        }
    }
}

/// Classify with the default rule table.
pub fn classify(name: &str) -> LayerKey {
    static DEFAULT: OnceLock<Taxonomy> = OnceLock::new();
    DEFAULT.get_or_init(Taxonomy::default).classify(name)
}

/// Partition keys by class; map iteration follows the enum order.
pub fn group_by_class(keys: &[LayerKey]) -> BTreeMap<LayerClass, Vec<LayerKey>> {
    let mut groups: BTreeMap<LayerClass, Vec<LayerKey>> = BTreeMap::new();
    for key in keys {
        groups.entry(key.layer_class).or_default().push(key.clone());
    }
    groups
}
