use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ToyError;
use crate::metrics::{BleuOptions, ChrfOptions, Smoothing, Tokenizer};

/// Number of reserved special token ids: BOS, EOS and three task separators.
pub const NUM_SPECIALS: u32 = 5;
pub const BOS: u32 = 0;
pub const EOS: u32 = 1;
pub const SEP_INSTRUCT: u32 = 2;
pub const SEP_TRANSLATE: u32 = 3;
pub const SEP_GENERAL: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    /// Number of previous tokens whose embeddings are concatenated.
    pub context_k: usize,
    pub num_blocks: usize,
    pub hidden_dim: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for ToyModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 64,
            embed_dim: 16,
            context_k: 4,
            num_blocks: 6,
            hidden_dim: 32,
            seed: 0,
        }
    }
}

impl ToyModelConfig {
    pub fn input_dim(&self) -> usize {
        self.context_k * self.embed_dim
    }

    pub fn validate(&self) -> Result<(), ToyError> {
        if self.vocab_size < 4 {
            return Err(ToyError::InvalidConfig(format!("vocab_size {} < 4", self.vocab_size)));
        }
        for (name, v) in [
            ("embed_dim", self.embed_dim),
            ("context_k", self.context_k),
            ("num_blocks", self.num_blocks),
            ("hidden_dim", self.hidden_dim),
        ] {
            if v == 0 {
                return Err(ToyError::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        let d_in = self.input_dim();
        self.vocab_size * self.embed_dim
            + self.num_blocks * 3 * self.hidden_dim * d_in
            + self.vocab_size * d_in
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    TargetMonolingual,
    TargetInstruction,
    CrossTranslation,
    AnchorGeneral,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::TargetMonolingual => "target_monolingual",
            TaskKind::TargetInstruction => "target_instruction",
            TaskKind::CrossTranslation => "cross_translation",
            TaskKind::AnchorGeneral => "anchor_general",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Cpt,
    Sft,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Cpt => "cpt",
            Stage::Sft => "sft",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMask {
    AllTokens,
    ResponseOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureEntry {
    pub task: TaskKind,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StagePlan {
    pub stage: Stage,
    pub mixture: Vec<MixtureEntry>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub loss_mask: LossMask,
    #[serde(default = "defaults::weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "defaults::beta1")]
    pub beta1: f64,
    #[serde(default = "defaults::beta2")]
    pub beta2: f64,
    #[serde(default = "defaults::eps")]
    pub eps: f64,
    #[serde(default = "defaults::warmup_frac")]
    pub warmup_frac: f64,
    /// Shuffling seed; overwritten by the experiment seed when loaded from a config.
    #[serde(default)]
    pub seed: u64,
}

mod defaults {
    pub fn weight_decay() -> f64 {
        0.01
    }
    pub fn beta1() -> f64 {
        0.9
    }
    pub fn beta2() -> f64 {
        0.999
    }
    pub fn eps() -> f64 {
        1e-8
    }
    pub fn warmup_frac() -> f64 {
        0.05
    }
}

pub const DEFAULT_CPT_LR: f64 = 1e-2;

impl StagePlan {
    pub fn default_cpt() -> Self {
        Self {
            stage: Stage::Cpt,
            mixture: vec![MixtureEntry { task: TaskKind::TargetMonolingual, weight: 1.0 }],
            epochs: 1,
            learning_rate: DEFAULT_CPT_LR,
            batch_size: 4,
            loss_mask: LossMask::AllTokens,
            weight_decay: defaults::weight_decay(),
            beta1: defaults::beta1(),
            beta2: defaults::beta2(),
            eps: defaults::eps(),
            warmup_frac: defaults::warmup_frac(),
            seed: 0,
        }
    }

    /// 80% target-focused tasks, 20% base-language anchor; a fifth of the CPT
    /// learning rate, two epochs.
    pub fn default_sft() -> Self {
        Self {
            stage: Stage::Sft,
            mixture: vec![
                MixtureEntry { task: TaskKind::TargetInstruction, weight: 0.6 },
                MixtureEntry { task: TaskKind::CrossTranslation, weight: 0.2 },
                MixtureEntry { task: TaskKind::AnchorGeneral, weight: 0.2 },
            ],
            epochs: 2,
            learning_rate: DEFAULT_CPT_LR / 5.0,
            batch_size: 2,
            loss_mask: LossMask::ResponseOnly,
            ..Self::default_cpt()
        }
    }

    pub fn validate(&self) -> Result<(), ToyError> {
        let bad = |msg: String| Err(ToyError::InvalidConfig(format!("{} plan: {msg}", self.stage.as_str())));
        if self.mixture.is_empty() {
            return bad("empty mixture".into());
        }
        if self.mixture.iter().any(|m| !(m.weight > 0.0) || !m.weight.is_finite()) {
            return bad("mixture weights must be positive".into());
        }
        let total: f64 = self.mixture.iter().map(|m| m.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("mixture weights sum to {total}, not 1"));
        }
        let mut tasks: Vec<TaskKind> = self.mixture.iter().map(|m| m.task).collect();
        tasks.sort();
        tasks.dedup();
        if tasks.len() != self.mixture.len() {
            return bad("duplicate task in mixture".into());
        }
        if self.stage == Stage::Cpt {
            if self.loss_mask != LossMask::AllTokens {
                return bad("continual pretraining predicts every token (loss_mask = all_tokens)".into());
            }
            if tasks != [TaskKind::TargetMonolingual] {
                return bad("continual pretraining uses target_monolingual data only".into());
            }
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be positive".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)".into());
        }
        if !(0.0..=1.0).contains(&self.warmup_frac) || self.weight_decay < 0.0 || !(self.eps > 0.0) {
            return bad("warmup_frac, weight_decay or eps out of range".into());
        }
        Ok(())
    }
}

/// Synthetic two-language data: an order-2 Markov "base" language and a
/// "target" language that is its image under a seeded token bijection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticCorpusSpec {
    /// Half-open `[start, end)` token range.
    pub base_range: [u32; 2],
    pub target_range: [u32; 2],
    /// Content tokens per monolingual sequence, drawn uniformly from `[min_len, max_len]`.
    pub min_len: usize,
    pub max_len: usize,
    /// Prompt length for instruction-style samples; translation responses
    /// have the same length, other responses complete a full document.
    pub prompt_len: usize,
    /// Successors with non-zero probability per transition row.
    pub branching: usize,
    pub cpt_size: usize,
    pub sft_size: usize,
    pub heldout_size: usize,
    pub test_size: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SyntheticCorpusSpec {
    fn default() -> Self {
        Self {
            base_range: [8, 36],
            target_range: [36, 64],
            min_len: 32,
            max_len: 64,
            prompt_len: 3,
            branching: 3,
            cpt_size: 2000,
            sft_size: 1000,
            heldout_size: 200,
            test_size: 200,
            seed: 0,
        }
    }
}

impl SyntheticCorpusSpec {
    pub fn base_len(&self) -> usize {
        (self.base_range[1] - self.base_range[0]) as usize
    }

    pub fn target_len(&self) -> usize {
        (self.target_range[1] - self.target_range[0]) as usize
    }

    pub fn validate(&self, vocab_size: usize) -> Result<(), ToyError> {
        let bad = |msg: String| Err(ToyError::InvalidConfig(format!("corpus: {msg}")));
        for (name, [s, e]) in [("base_range", self.base_range), ("target_range", self.target_range)] {
            if s >= e {
                return bad(format!("{name} [{s},{e}) is empty"));
            }
            if s < NUM_SPECIALS {
                return bad(format!("{name} overlaps the {NUM_SPECIALS} special tokens"));
            }
            if e as usize > vocab_size {
                return bad(format!("{name} exceeds vocab_size {vocab_size}"));
            }
        }
        let [bs, be] = self.base_range;
        let [ts, te] = self.target_range;
        if bs < te && ts < be {
            return bad("base_range and target_range overlap".into());
        }
        if self.base_len() != self.target_len() {
            return bad("base and target ranges must have equal size for the translation bijection".into());
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad(format!("invalid length range [{}, {}]", self.min_len, self.max_len));
        }
        if self.prompt_len == 0 {
            return bad("prompt_len must be at least 1".into());
        }
        if self.branching == 0 || self.branching > self.base_len() {
            return bad(format!("branching must be in [1, {}]", self.base_len()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// BLEU order; responses are `prompt_len` tokens long, so higher orders
    /// would have no n-grams at all.
    pub bleu_max_n: usize,
    pub chrf_char_n: usize,
    pub chrf_beta: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { bleu_max_n: 3, chrf_char_n: 6, chrf_beta: 2.0 }
    }
}

impl EvalConfig {
    pub fn bleu(&self) -> BleuOptions {
        BleuOptions {
            max_n: self.bleu_max_n,
            tokenizer: Tokenizer::Whitespace,
            smoothing: Smoothing::Exp,
        }
    }

    pub fn chrf(&self) -> ChrfOptions {
        ChrfOptions { char_n: self.chrf_char_n, beta: self.chrf_beta }
    }
}

/// Everything one pipeline run needs. Serialized as TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default)]
    pub precision: Precision,
    pub model: ToyModelConfig,
    pub corpus: SyntheticCorpusSpec,
    pub cpt: StagePlan,
    pub sft: StagePlan,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut cfg = Self {
            seed: 20251015,
            precision: Precision::F64,
            model: ToyModelConfig::default(),
            corpus: SyntheticCorpusSpec::default(),
            cpt: StagePlan::default_cpt(),
            sft: StagePlan::default_sft(),
            eval: EvalConfig::default(),
        };
        cfg.apply_seed(cfg.seed);
        cfg
    }
}

impl ExperimentConfig {
    /// Route one seed to every random stream.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.model.seed = seed;
        self.corpus.seed = seed;
        self.cpt.seed = seed;
        self.sft.seed = seed;
    }

    pub fn validate(&self) -> Result<(), ToyError> {
        self.model.validate()?;
        self.corpus.validate(self.model.vocab_size)?;
        self.cpt.validate()?;
        self.sft.validate()?;
        if self.cpt.stage != Stage::Cpt || self.sft.stage != Stage::Sft {
            return Err(ToyError::InvalidConfig("[cpt] and [sft] sections must declare their own stage".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, ToyError> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| ToyError::ConfigParse(e.to_string()))?;
        cfg.apply_seed(cfg.seed);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ToyError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| ToyError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
