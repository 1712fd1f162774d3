//! Finite-difference verification of the analytic gradients.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{TaskKind, ToyModelConfig, BOS};
use super::corpus::{stream_rng, streams, Sample};
use super::model::{param_specs, ToyModel};
use super::ToyError;

pub const MAX_GRADCHECK_PARAMS: usize = 5_000;
pub const FD_STEP: f64 = 1e-5;
/// Denominator floor for the relative error, so that near-zero gradients are
/// judged on absolute error instead of amplifying finite-difference noise.
pub const REL_ERROR_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    /// `tensor[index]` with the largest error.
    pub worst: String,
    pub params_checked: usize,
    pub loss: f64,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Random sequences over the whole vocabulary, some with a masked prefix.
pub fn random_batch(cfg: &ToyModelConfig, n: usize, rng: &mut impl Rng) -> Vec<Sample> {
    (0..n)
        .map(|_| {
            let len = rng.gen_range(2..=cfg.context_k + 4);
            let mut tokens = vec![BOS];
            tokens.extend((0..len).map(|_| rng.gen_range(0..cfg.vocab_size as u32)));
            let predict_from = rng.gen_range(1..tokens.len());
            Sample { tokens, predict_from, task: TaskKind::TargetMonolingual }
        })
        .collect()
}

/// Central differences on every parameter of `model`.
pub fn gradcheck_batch(model: &ToyModel<f64>, batch: &[Sample], step: f64) -> GradcheckReport {
    let refs: Vec<&Sample> = batch.iter().collect();
    let (loss, analytic) = model.loss_and_grad(&refs);
    let specs = param_specs(model.config());
    let mut probe = model.clone();
    let mut report = GradcheckReport { max_rel_error: 0.0, worst: String::new(), params_checked: 0, loss };
    for (t, spec) in specs.iter().enumerate() {
        for i in 0..spec.len() {
            let orig = probe.params()[t][i];
            probe.params_mut()[t][i] = orig + step;
            let plus = probe.loss(&refs);
            probe.params_mut()[t][i] = orig - step;
            let minus = probe.loss(&refs);
            probe.params_mut()[t][i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let err = relative_error(analytic[t][i], numeric);
            if err > report.max_rel_error || report.worst.is_empty() {
                report.max_rel_error = err.max(report.max_rel_error);
                report.worst = format!("{}[{i}]", spec.name);
            }
            report.params_checked += 1;
        }
    }
    report
}

/// Gradient check of a freshly initialized model on a seeded random batch.
pub fn gradcheck(cfg: &ToyModelConfig) -> Result<GradcheckReport, ToyError> {
    cfg.validate()?;
    if cfg.parameter_count() > MAX_GRADCHECK_PARAMS {
        return Err(ToyError::InvalidConfig(format!(
            "gradcheck needs at most {MAX_GRADCHECK_PARAMS} parameters, config has {}",
            cfg.parameter_count()
        )));
    }
    let model = ToyModel::<f64>::new(cfg)?;
    let batch = random_batch(cfg, 6, &mut stream_rng(cfg.seed, streams::GRADCHECK));
    Ok(gradcheck_batch(&model, &batch, FD_STEP))
}

/// Architecture variants exercised by the gradient-check gate.
pub fn test_matrix() -> Vec<ToyModelConfig> {
    let base = ToyModelConfig { vocab_size: 8, embed_dim: 4, context_k: 2, num_blocks: 2, hidden_dim: 8, seed: 11 };
    vec![
        base,
        ToyModelConfig { num_blocks: 1, ..base },
        ToyModelConfig { context_k: 1, ..base },
        ToyModelConfig { context_k: 4, embed_dim: 3, ..base },
        ToyModelConfig { vocab_size: 4, embed_dim: 2, hidden_dim: 3, ..base },
        ToyModelConfig { vocab_size: 16, embed_dim: 5, context_k: 3, num_blocks: 3, hidden_dim: 6, seed: 5 },
        ToyModelConfig { vocab_size: 12, embed_dim: 2, context_k: 2, num_blocks: 4, hidden_dim: 10, seed: 7 },
    ]
}
