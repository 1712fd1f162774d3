//! Synthetic two-language corpora.
//!
//! The base language is a seeded order-2 Markov chain with `branching`
//! successors per context. The target language is the image of that chain
//! under a seeded token bijection, so every base sentence has an exact
//! target-language "translation".

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{
    LossMask, StagePlan, SyntheticCorpusSpec, TaskKind, BOS, EOS, SEP_GENERAL, SEP_INSTRUCT, SEP_TRANSLATE,
};
use super::ToyError;

pub(crate) mod streams {
    pub const LANGUAGE: u64 = 1;
    pub const BIJECTION: u64 = 2;
    pub const CPT: u64 = 3;
    pub const SFT: u64 = 4;
    pub const HELDOUT: u64 = 5;
    pub const TEST: u64 = 6;
    pub const SHUFFLE: u64 = 7;
    pub const INIT: u64 = 8;
    pub const GRADCHECK: u64 = 9;
}

/// Independent deterministic random stream per (seed, purpose).
pub(crate) fn stream_rng(seed: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub tokens: Vec<u32>,
    /// First position whose token is predicted (always ≥ 1).
    pub predict_from: usize,
    pub task: TaskKind,
}

impl Sample {
    pub fn predicted_positions(&self) -> std::ops::Range<usize> {
        self.predict_from.max(1)..self.tokens.len()
    }

    fn with_mask(mut self, mask: LossMask) -> Self {
        if mask == LossMask::AllTokens {
            self.predict_from = 1;
        }
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn predicted_tokens(&self) -> usize {
        self.samples.iter().map(|s| s.predicted_positions().len()).sum()
    }

    pub fn count(&self, task: TaskKind) -> usize {
        self.samples.iter().filter(|s| s.task == task).count()
    }

    /// One sample per line: `task predict_from tok tok ...`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.samples {
            out.push_str(s.task.as_str());
            out.push(' ');
            out.push_str(&s.predict_from.to_string());
            for t in &s.tokens {
                out.push(' ');
                out.push_str(&t.to_string());
            }
            out.push('\n');
        }
        out
    }
}

/// Order-2 Markov chain over a contiguous token range.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovLanguage {
    start: u32,
    n: usize,
    /// `n * n` rows of `n` probabilities, indexed by (prev2, prev1).
    table: Vec<f64>,
}

impl MarkovLanguage {
    pub fn random(start: u32, n: usize, branching: usize, rng: &mut impl Rng) -> Self {
        let mut table = vec![0.0; n * n * n];
        let all: Vec<usize> = (0..n).collect();
        for row in table.chunks_exact_mut(n) {
            let succ: Vec<usize> = all.choose_multiple(rng, branching).copied().collect();
            let weights: Vec<f64> = succ.iter().map(|_| rng.gen_range(0.1..1.0)).collect();
            let total: f64 = weights.iter().sum();
            for (&s, w) in succ.iter().zip(&weights) {
                row[s] = w / total;
            }
        }
        Self { start, n, table }
    }

    pub fn contains(&self, tok: u32) -> bool {
        tok >= self.start && ((tok - self.start) as usize) < self.n
    }

    fn idx(&self, tok: u32) -> usize {
        debug_assert!(self.contains(tok));
        (tok - self.start) as usize
    }

    pub fn row(&self, prev2: u32, prev1: u32) -> &[f64] {
        let r = self.idx(prev2) * self.n + self.idx(prev1);
        &self.table[r * self.n..(r + 1) * self.n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.table.chunks_exact(self.n)
    }

    fn draw(&self, row: &[f64], rng: &mut impl Rng) -> u32 {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return self.start + i as u32;
            }
        }
        // rounding slack: last token with mass
        self.start + row.iter().rposition(|&p| p > 0.0).unwrap() as u32
    }

    /// Probability of `tok` following the context (earlier tokens first).
    /// A single-token context uses (t, t); an empty context is uniform.
    pub fn prob(&self, context: &[u32], tok: u32) -> f64 {
        match context {
            [] => 1.0 / self.n as f64,
            [a] => self.row(*a, *a)[self.idx(tok)],
            [.., a, b] => self.row(*a, *b)[self.idx(tok)],
        }
    }

    pub fn sample(&self, len: usize, rng: &mut impl Rng) -> Vec<u32> {
        let mut out = Vec::with_capacity(len);
        if len == 0 {
            return out;
        }
        out.push(self.start + rng.gen_range(0..self.n) as u32);
        self.extend(&mut out, len - 1, rng);
        out
    }

    /// Append `extra` tokens continuing the chain from the end of `seq`.
    pub fn extend(&self, seq: &mut Vec<u32>, extra: usize, rng: &mut impl Rng) {
        for _ in 0..extra {
            let (a, b) = match seq.as_slice() {
                [] => unreachable!("extend needs a seed token"),
                [a] => (*a, *a),
                [.., a, b] => (*a, *b),
            };
            let next = self.draw(self.row(a, b), rng);
            seq.push(next);
        }
    }

    /// The same chain with every token renamed through `map`.
    fn image(&self, target_start: u32, map: &[usize]) -> Self {
        let n = self.n;
        let mut table = vec![0.0; n * n * n];
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    table[(map[a] * n + map[b]) * n + map[c]] = self.table[(a * n + b) * n + c];
                }
            }
        }
        Self { start: target_start, n, table }
    }
}

/// Seeded one-to-one map from base tokens to target tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenBijection {
    base_start: u32,
    target_start: u32,
    forward: Vec<usize>,
    inverse: Vec<usize>,
}

impl TokenBijection {
    pub fn random(base_start: u32, target_start: u32, n: usize, rng: &mut impl Rng) -> Self {
        let mut forward: Vec<usize> = (0..n).collect();
        forward.shuffle(rng);
        let mut inverse = vec![0; n];
        for (i, &f) in forward.iter().enumerate() {
            inverse[f] = i;
        }
        Self { base_start, target_start, forward, inverse }
    }

    pub fn translate(&self, base_tok: u32) -> u32 {
        self.target_start + self.forward[(base_tok - self.base_start) as usize] as u32
    }

    pub fn invert(&self, target_tok: u32) -> u32 {
        self.base_start + self.inverse[(target_tok - self.target_start) as usize] as u32
    }
}

/// Languages, bijection and generators derived from one corpus spec.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    spec: SyntheticCorpusSpec,
    base: MarkovLanguage,
    target: MarkovLanguage,
    bijection: TokenBijection,
}

impl SyntheticWorld {
    pub fn new(spec: &SyntheticCorpusSpec, vocab_size: usize) -> Result<Self, ToyError> {
        spec.validate(vocab_size)?;
        let n = spec.base_len();
        let base = MarkovLanguage::random(
            spec.base_range[0],
            n,
            spec.branching,
            &mut stream_rng(spec.seed, streams::LANGUAGE),
        );
        let bijection = TokenBijection::random(
            spec.base_range[0],
            spec.target_range[0],
            n,
            &mut stream_rng(spec.seed, streams::BIJECTION),
        );
        let target = base.image(spec.target_range[0], &bijection.forward);
        Ok(Self { spec: spec.clone(), base, target, bijection })
    }

    pub fn spec(&self) -> &SyntheticCorpusSpec {
        &self.spec
    }

    pub fn base(&self) -> &MarkovLanguage {
        &self.base
    }

    pub fn target(&self) -> &MarkovLanguage {
        &self.target
    }

    pub fn bijection(&self) -> &TokenBijection {
        &self.bijection
    }

    pub fn translate(&self, base_tokens: &[u32]) -> Vec<u32> {
        base_tokens.iter().map(|&t| self.bijection.translate(t)).collect()
    }

    fn monolingual(&self, lang: &MarkovLanguage, rng: &mut impl Rng) -> Sample {
        let len = rng.gen_range(self.spec.min_len..=self.spec.max_len);
        let mut tokens = vec![BOS];
        tokens.extend(lang.sample(len, rng));
        tokens.push(EOS);
        Sample { tokens, predict_from: 1, task: TaskKind::TargetMonolingual }
    }

    fn instruction(&self, task: TaskKind, rng: &mut impl Rng) -> Sample {
        let m = self.spec.prompt_len;
        let (lang, sep) = match task {
            TaskKind::TargetInstruction => (&self.target, SEP_INSTRUCT),
            TaskKind::CrossTranslation => (&self.base, SEP_TRANSLATE),
            TaskKind::AnchorGeneral => (&self.base, SEP_GENERAL),
            TaskKind::TargetMonolingual => return self.monolingual(&self.target, rng),
        };
        let prompt = lang.sample(m, rng);
        let response = if task == TaskKind::CrossTranslation {
            self.translate(&prompt)
        } else {
            // the prompt opens a document and the response completes it
            let total = rng.gen_range(self.spec.min_len.max(m + 1)..=self.spec.max_len.max(m + 1));
            let mut cont = prompt.clone();
            lang.extend(&mut cont, total - m, rng);
            cont.split_off(m)
        };
        let mut tokens = Vec::with_capacity(m + response.len() + 3);
        tokens.push(BOS);
        tokens.extend_from_slice(&prompt);
        tokens.push(sep);
        let predict_from = tokens.len();
        tokens.extend(response);
        tokens.push(EOS);
        Sample { tokens, predict_from, task }
    }

    /// Training data for one stage. Task counts follow the mixture weights
    /// exactly (largest-remainder rounding); sample order is a seeded shuffle.
    pub fn generate_corpus(&self, plan: &StagePlan) -> Result<Dataset, ToyError> {
        plan.validate()?;
        let (size, tag) = match plan.stage {
            super::config::Stage::Cpt => (self.spec.cpt_size, streams::CPT),
            super::config::Stage::Sft => (self.spec.sft_size, streams::SFT),
        };
        let mut rng = stream_rng(self.spec.seed, tag);
        let weights: Vec<f64> = plan.mixture.iter().map(|m| m.weight).collect();
        let counts = stratified_counts(&weights, size);
        let mut samples = Vec::with_capacity(size);
        for (entry, &count) in plan.mixture.iter().zip(&counts) {
            for _ in 0..count {
                samples.push(self.instruction(entry.task, &mut rng).with_mask(plan.loss_mask));
            }
        }
        samples.shuffle(&mut rng);
        Ok(Dataset { samples })
    }

    /// Held-out target-language documents for perplexity.
    pub fn heldout_target(&self) -> Vec<Sample> {
        let mut rng = stream_rng(self.spec.seed, streams::HELDOUT);
        (0..self.spec.heldout_size).map(|_| self.monolingual(&self.target, &mut rng)).collect()
    }

    /// Base-language prompts with their reference translations.
    pub fn translation_test(&self) -> Vec<(Vec<u32>, Vec<u32>)> {
        let mut rng = stream_rng(self.spec.seed, streams::TEST);
        (0..self.spec.test_size)
            .map(|_| {
                let prompt = self.base.sample(self.spec.prompt_len, &mut rng);
                let reference = self.translate(&prompt);
                (prompt, reference)
            })
            .collect()
    }

    /// Exact conditional log-probabilities of a monolingual target document
    /// under the generating process (length distribution included).
    pub fn true_token_logliks(&self, sample: &Sample) -> Vec<f64> {
        let content = &sample.tokens[1..sample.tokens.len() - 1];
        let (lo, hi) = (self.spec.min_len, self.spec.max_len);
        let mut out = Vec::with_capacity(content.len() + 1);
        for j in 0..=content.len() {
            // probability the document stops after j content tokens, given it reached j
            let stop = if j < lo { 0.0 } else { 1.0 / (hi - j + 1) as f64 };
            if j == content.len() {
                out.push(stop.ln());
            } else {
                let p = self.target.prob(&content[..j], content[j]);
                out.push(((1.0 - stop) * p).ln());
            }
        }
        out
    }

    /// Text form of a token sequence: one character per language token,
    /// space separated; special tokens are dropped.
    pub fn render(&self, tokens: &[u32]) -> String {
        tokens
            .iter()
            .filter_map(|&t| self.render_token(t))
            .map(String::from)
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn render_token(&self, tok: u32) -> Option<char> {
        if self.base.contains(tok) {
            char::from_u32(0x4E00 + (tok - self.spec.base_range[0]))
        } else if self.target.contains(tok) {
            let off = tok - self.spec.target_range[0];
            // Tibetan consonant block, then the private use area
            char::from_u32(if off < 45 { 0x0F40 + off } else { 0xE000 + off })
        } else {
            None
        }
    }
}

/// Split `total` by `weights` with largest-remainder rounding.
pub fn stratified_counts(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(total - assigned) {
        counts[i] += 1;
    }
    counts
}

pub fn generate_corpus(spec: &SyntheticCorpusSpec, vocab_size: usize, plan: &StagePlan) -> Result<Dataset, ToyError> {
    SyntheticWorld::new(spec, vocab_size)?.generate_corpus(plan)
}
