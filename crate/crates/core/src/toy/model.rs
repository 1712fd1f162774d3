//! Fixed-window next-token model.
//!
//! The input is the concatenation of the embeddings of the previous
//! `context_k` tokens (positions before the start are filled with BOS). Each
//! block is a gated feed-forward with a residual connection:
//!
//! ```text
//! x ← x + down · (σ(gate · x) ⊙ (up · x))
//! ```
//!
//! and `lm_head` projects the final state to vocabulary logits. Tensor names
//! follow the decoder convention so the taxonomy classifies every tensor.

use rand::Rng;

use super::config::{ToyModelConfig, BOS};
use super::corpus::{stream_rng, streams, Sample};
use super::ToyError;
use crate::scalar::Scalar;
use crate::tensor_store::{Checkpoint, TensorRecord};

pub const EMBED_NAME: &str = "model.embed_tokens.weight";
pub const LM_HEAD_NAME: &str = "lm_head.weight";

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: [usize; 2],
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape[0] * self.shape[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Names and shapes in model order: embedding, then gate/up/down per block,
/// then the output head.
pub fn param_specs(cfg: &ToyModelConfig) -> Vec<ParamSpec> {
    let d_in = cfg.input_dim();
    let mut specs = vec![ParamSpec { name: EMBED_NAME.into(), shape: [cfg.vocab_size, cfg.embed_dim] }];
    for i in 0..cfg.num_blocks {
        let prefix = format!("model.layers.{i}.mlp");
        specs.push(ParamSpec { name: format!("{prefix}.gate_proj.weight"), shape: [cfg.hidden_dim, d_in] });
        specs.push(ParamSpec { name: format!("{prefix}.up_proj.weight"), shape: [cfg.hidden_dim, d_in] });
        specs.push(ParamSpec { name: format!("{prefix}.down_proj.weight"), shape: [d_in, cfg.hidden_dim] });
    }
    specs.push(ParamSpec { name: LM_HEAD_NAME.into(), shape: [cfg.vocab_size, d_in] });
    specs
}

/// Parameter (or gradient) buffers in model order.
pub type Tensors<T> = Vec<Vec<T>>;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel<T> {
    cfg: ToyModelConfig,
    params: Tensors<T>,
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// y = W x for row-major `W` of shape [rows, cols].
fn matvec<T: Scalar>(w: &[T], x: &[T], y: &mut [T]) {
    let cols = x.len();
    for (r, out) in y.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = T::zero();
        for (a, b) in row.iter().zip(x) {
            acc += *a * *b;
        }
        *out = acc;
    }
}

/// Per-position activations kept for the backward pass.
struct Workspace<T> {
    /// Block inputs; `xs[L]` is the final state.
    xs: Vec<Vec<T>>,
    gates: Vec<Vec<T>>,
    ups: Vec<Vec<T>>,
    acts: Vec<Vec<T>>,
    logits: Vec<T>,
    dx: Vec<T>,
    dx_next: Vec<T>,
    da: Vec<T>,
    dg: Vec<T>,
    du: Vec<T>,
}

impl<T: Scalar> Workspace<T> {
    fn new(cfg: &ToyModelConfig) -> Self {
        let d_in = cfg.input_dim();
        let h = cfg.hidden_dim;
        Self {
            xs: vec![vec![T::zero(); d_in]; cfg.num_blocks + 1],
            gates: vec![vec![T::zero(); h]; cfg.num_blocks],
            ups: vec![vec![T::zero(); h]; cfg.num_blocks],
            acts: vec![vec![T::zero(); h]; cfg.num_blocks],
            logits: vec![T::zero(); cfg.vocab_size],
            dx: vec![T::zero(); d_in],
            dx_next: vec![T::zero(); d_in],
            da: vec![T::zero(); h],
            dg: vec![T::zero(); h],
            du: vec![T::zero(); h],
        }
    }
}

impl<T: Scalar> ToyModel<T> {
    /// Seeded uniform(−s, s) initialization with s = 1/√(row length).
    pub fn new(cfg: &ToyModelConfig) -> Result<Self, ToyError> {
        cfg.validate()?;
        let mut rng = stream_rng(cfg.seed, streams::INIT);
        let params = param_specs(cfg)
            .iter()
            .map(|spec| {
                let s = 1.0 / (spec.shape[1] as f64).sqrt();
                (0..spec.len()).map(|_| T::lit(rng.gen_range(-s..s))).collect()
            })
            .collect();
        Ok(Self { cfg: *cfg, params })
    }

    pub fn config(&self) -> &ToyModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &Tensors<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Tensors<T> {
        &mut self.params
    }

    pub fn zeros_like(&self) -> Tensors<T> {
        self.params.iter().map(|p| vec![T::zero(); p.len()]).collect()
    }

    pub fn embed_index() -> usize {
        0
    }

    pub fn lm_head_index(&self) -> usize {
        1 + 3 * self.cfg.num_blocks
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::new();
        for (spec, values) in param_specs(&self.cfg).into_iter().zip(&self.params) {
            let record = TensorRecord::new(spec.name, spec.shape.to_vec(), values).expect("shapes match by construction");
            ckpt.insert(record).expect("names are unique");
        }
        ckpt.set_meta("model_config", serde_json::to_string(&self.cfg).unwrap());
        ckpt
    }

    /// Rebuild from a checkpoint; stored values are converted to `T`.
    pub fn from_checkpoint(cfg: &ToyModelConfig, ckpt: &Checkpoint) -> Result<Self, ToyError> {
        cfg.validate()?;
        let specs = param_specs(cfg);
        let expected: Vec<&str> = specs.iter().map(|s| s.name.as_str()).collect();
        let unexpected: Vec<String> = ckpt.names().filter(|n| !expected.contains(n)).map(String::from).collect();
        if !unexpected.is_empty() {
            return Err(ToyError::ShapeMismatch(format!("unexpected tensors {unexpected:?}")));
        }
        let mut params = Vec::with_capacity(specs.len());
        for spec in &specs {
            let t = ckpt
                .get(&spec.name)
                .ok_or_else(|| ToyError::ShapeMismatch(format!("missing tensor `{}`", spec.name)))?;
            if t.shape() != spec.shape {
                return Err(ToyError::ShapeMismatch(format!(
                    "tensor `{}` has shape {:?}, config expects {:?}",
                    spec.name,
                    t.shape(),
                    spec.shape
                )));
            }
            params.push(match t.values::<T>() {
                Some(v) => v,
                None => t.to_f64().into_iter().map(T::lit).collect(),
            });
        }
        Ok(Self { cfg: *cfg, params })
    }

    fn window(&self, tokens: &[u32], pos: usize) -> Vec<u32> {
        let k = self.cfg.context_k;
        (0..k)
            .map(|i| {
                let back = k - i;
                if pos >= back { tokens[pos - back] } else { BOS }
            })
            .collect()
    }

    fn forward(&self, window: &[u32], ws: &mut Workspace<T>) {
        let d = self.cfg.embed_dim;
        let embed = &self.params[0];
        for (slot, &tok) in window.iter().enumerate() {
            let row = &embed[tok as usize * d..(tok as usize + 1) * d];
            ws.xs[0][slot * d..(slot + 1) * d].copy_from_slice(row);
        }
        for b in 0..self.cfg.num_blocks {
            let (gate, up, down) = (&self.params[1 + 3 * b], &self.params[2 + 3 * b], &self.params[3 + 3 * b]);
            let (head, tail) = ws.xs.split_at_mut(b + 1);
            let x = &head[b];
            let next = &mut tail[0];
            matvec(gate, x, &mut ws.gates[b]);
            matvec(up, x, &mut ws.ups[b]);
            for (a, (g, u)) in ws.acts[b].iter_mut().zip(ws.gates[b].iter().zip(&ws.ups[b])) {
                *a = sigmoid(*g) * *u;
            }
            matvec(down, &ws.acts[b], next);
            for (n, xi) in next.iter_mut().zip(x) {
                *n += *xi;
            }
        }
        let head = &self.params[self.lm_head_index()];
        matvec(head, &ws.xs[self.cfg.num_blocks], &mut ws.logits);
    }

    /// Returns log-sum-exp of the current logits.
    fn log_normalizer(logits: &[T]) -> T {
        let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
        let sum: T = logits.iter().map(|&l| (l - max).exp()).sum();
        max + sum.ln()
    }

    /// Accumulate `scale · ∂(−log p(target))/∂θ` into `grads`.
    fn backward(&self, window: &[u32], target: u32, scale: T, lse: T, ws: &mut Workspace<T>, grads: &mut Tensors<T>) {
        let cfg = &self.cfg;
        let d_in = cfg.input_dim();
        let h = cfg.hidden_dim;
        let head_idx = self.lm_head_index();

        // dlogits = (softmax − onehot) · scale, stored in place
        for (v, l) in ws.logits.iter_mut().enumerate() {
            let p = (*l - lse).exp();
            let y = if v == target as usize { T::one() } else { T::zero() };
            *l = (p - y) * scale;
        }
        let x_last = &ws.xs[cfg.num_blocks];
        ws.dx.iter_mut().for_each(|v| *v = T::zero());
        {
            let head = &self.params[head_idx];
            let dhead = &mut grads[head_idx];
            for (v, &dl) in ws.logits.iter().enumerate() {
                let row = v * d_in;
                for c in 0..d_in {
                    dhead[row + c] += dl * x_last[c];
                    ws.dx[c] += head[row + c] * dl;
                }
            }
        }

        for b in (0..cfg.num_blocks).rev() {
            let (gi, ui, di) = (1 + 3 * b, 2 + 3 * b, 3 + 3 * b);
            let x = &ws.xs[b];
            let gates = &ws.gates[b];
            let ups = &ws.ups[b];
            let acts = &ws.acts[b];
            {
                let down = &self.params[di];
                let ddown = &mut grads[di];
                ws.da.iter_mut().for_each(|v| *v = T::zero());
                for r in 0..d_in {
                    let dxr = ws.dx[r];
                    let row = r * h;
                    for j in 0..h {
                        ddown[row + j] += dxr * acts[j];
                        ws.da[j] += down[row + j] * dxr;
                    }
                }
            }
            for j in 0..h {
                let s = sigmoid(gates[j]);
                ws.du[j] = ws.da[j] * s;
                ws.dg[j] = ws.da[j] * ups[j] * s * (T::one() - s);
            }
            ws.dx_next.copy_from_slice(&ws.dx);
            {
                let (gate, up) = (&self.params[gi], &self.params[ui]);
                for j in 0..h {
                    let (dg, du) = (ws.dg[j], ws.du[j]);
                    let row = j * d_in;
                    {
                        let dgate = &mut grads[gi];
                        for c in 0..d_in {
                            dgate[row + c] += dg * x[c];
                        }
                    }
                    {
                        let dup = &mut grads[ui];
                        for c in 0..d_in {
                            dup[row + c] += du * x[c];
                        }
                    }
                    for c in 0..d_in {
                        ws.dx_next[c] += gate[row + c] * dg + up[row + c] * du;
                    }
                }
            }
            std::mem::swap(&mut ws.dx, &mut ws.dx_next);
        }

        let d = cfg.embed_dim;
        let dembed = &mut grads[0];
        for (slot, &tok) in window.iter().enumerate() {
            let row = tok as usize * d;
            for e in 0..d {
                dembed[row + e] += ws.dx[slot * d + e];
            }
        }
    }

    /// Mean cross-entropy over every predicted position in `batch`.
    pub fn loss(&self, batch: &[&Sample]) -> T {
        let mut ws = Workspace::new(&self.cfg);
        let mut total = T::zero();
        let mut count = 0usize;
        for s in batch {
            for pos in s.predicted_positions() {
                let window = self.window(&s.tokens, pos);
                self.forward(&window, &mut ws);
                let lse = Self::log_normalizer(&ws.logits);
                total += lse - ws.logits[s.tokens[pos] as usize];
                count += 1;
            }
        }
        if count == 0 {
            return T::zero();
        }
        total / T::lit(count as f64)
    }

    /// Mean cross-entropy and its exact gradient.
    pub fn loss_and_grad(&self, batch: &[&Sample]) -> (T, Tensors<T>) {
        let mut grads = self.zeros_like();
        let count: usize = batch.iter().map(|s| s.predicted_positions().len()).sum();
        if count == 0 {
            return (T::zero(), grads);
        }
        let scale = T::one() / T::lit(count as f64);
        let mut ws = Workspace::new(&self.cfg);
        let mut total = T::zero();
        for s in batch {
            for pos in s.predicted_positions() {
                let window = self.window(&s.tokens, pos);
                let target = s.tokens[pos];
                self.forward(&window, &mut ws);
                let lse = Self::log_normalizer(&ws.logits);
                total += lse - ws.logits[target as usize];
                self.backward(&window, target, scale, lse, &mut ws, &mut grads);
            }
        }
        (total * scale, grads)
    }

    /// Natural-log probability of every predicted token of `sample`.
    pub fn token_logliks(&self, sample: &Sample) -> Vec<f64> {
        let mut ws = Workspace::new(&self.cfg);
        sample
            .predicted_positions()
            .map(|pos| {
                let window = self.window(&sample.tokens, pos);
                self.forward(&window, &mut ws);
                let lse = Self::log_normalizer(&ws.logits);
                let ll = (ws.logits[sample.tokens[pos] as usize] - lse).to_f64().unwrap();
                ll.min(0.0)
            })
            .collect()
    }

    /// Greedy continuation of `context`, stopping after `stop` or `max_new` tokens.
    /// The stop token is not included in the output.
    pub fn greedy(&self, context: &[u32], max_new: usize, stop: u32) -> Vec<u32> {
        let mut ws = Workspace::new(&self.cfg);
        let mut seq = context.to_vec();
        let mut out = Vec::new();
        for _ in 0..max_new {
            let window = self.window(&seq, seq.len());
            self.forward(&window, &mut ws);
            let mut best = 0usize;
            for (i, l) in ws.logits.iter().enumerate() {
                if *l > ws.logits[best] {
                    best = i;
                }
            }
            if best as u32 == stop {
                break;
            }
            seq.push(best as u32);
            out.push(best as u32);
        }
        out
    }
}
