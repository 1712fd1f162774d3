use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::{LossMask, StagePlan, ToyModelConfig};
use super::corpus::{stream_rng, streams, Dataset, Sample};
use super::model::ToyModel;
use super::optim::{AdamW, CosineSchedule};
use super::ToyError;
use crate::scalar::Scalar;
use crate::tensor_store::Checkpoint;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    /// Mean batch loss before the update.
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub losses: Vec<StepLog>,
}

pub fn steps_for(data_len: usize, plan: &StagePlan) -> usize {
    plan.epochs * data_len.div_ceil(plan.batch_size.max(1))
}

/// Train one stage starting from `start`. The input checkpoint is never
/// modified; with zero steps the returned checkpoint is an exact copy.
pub fn train_stage<T: Scalar>(
    start: &Checkpoint,
    cfg: &ToyModelConfig,
    data: &Dataset,
    plan: &StagePlan,
) -> Result<TrainOutcome, ToyError> {
    plan.validate()?;
    let mut model = ToyModel::<T>::from_checkpoint(cfg, start)?;
    let total_steps = steps_for(data.len(), plan);
    if total_steps == 0 {
        return Ok(TrainOutcome { checkpoint: start.clone(), losses: Vec::new() });
    }

    let samples: Vec<Sample> = match plan.loss_mask {
        LossMask::AllTokens => data
            .samples
            .iter()
            .map(|s| Sample { predict_from: 1, ..s.clone() })
            .collect(),
        LossMask::ResponseOnly => data.samples.clone(),
    };
    let schedule = CosineSchedule::new(plan.learning_rate, plan.warmup_frac, total_steps);
    let mut opt = AdamW::new(model.params(), plan.beta1, plan.beta2, plan.eps, plan.weight_decay);
    let stage_tag = match plan.stage {
        super::config::Stage::Cpt => 1u64,
        super::config::Stage::Sft => 2u64,
    };

    let mut losses = Vec::with_capacity(total_steps);
    let mut step = 0usize;
    for epoch in 0..plan.epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut stream_rng(plan.seed, streams::SHUFFLE ^ (stage_tag << 8) ^ ((epoch as u64) << 16)));
        for chunk in order.chunks(plan.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let (loss, grads) = model.loss_and_grad(&batch);
            let loss = loss.to_f64().unwrap_or(f64::NAN);
            if !loss.is_finite() {
                return Err(ToyError::NonFiniteLoss { stage: plan.stage.as_str().into(), step, loss });
            }
            let lr = schedule.lr_at(step);
            opt.step(model.params_mut(), &grads, lr);
            losses.push(StepLog { step, epoch, lr, loss });
            step += 1;
        }
    }

    let mut checkpoint = model.to_checkpoint();
    let prior: usize = start.meta().get("total_steps").and_then(|s| s.parse().ok()).unwrap_or(0);
    let meta = [
        ("stage", plan.stage.as_str().to_string()),
        ("steps", total_steps.to_string()),
        ("total_steps", (prior + total_steps).to_string()),
        ("epochs", plan.epochs.to_string()),
        ("batch_size", plan.batch_size.to_string()),
        ("learning_rate", format!("{:?}", plan.learning_rate)),
        ("beta1", format!("{:?}", plan.beta1)),
        ("beta2", format!("{:?}", plan.beta2)),
        ("eps", format!("{:?}", plan.eps)),
        ("weight_decay", format!("{:?}", plan.weight_decay)),
        ("warmup_frac", format!("{:?}", plan.warmup_frac)),
        ("loss_mask", serde_json::to_value(plan.loss_mask).unwrap().as_str().unwrap().to_string()),
        ("seed", plan.seed.to_string()),
        ("dtype", T::DTYPE.as_str().to_string()),
    ];
    for (k, v) in meta {
        checkpoint.set_meta(k, v);
    }
    Ok(TrainOutcome { checkpoint, losses })
}

pub fn loss_curve_csv(losses: &[StepLog]) -> String {
    let mut out = String::from("step,epoch,lr,loss\n");
    for l in losses {
        out.push_str(&format!("{},{},{:?},{:?}\n", l.step, l.epoch, l.lr, l.loss));
    }
    out
}
