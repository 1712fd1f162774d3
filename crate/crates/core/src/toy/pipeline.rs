//! End-to-end run: build the base model, continue pretraining on target
//! text, fine-tune on the task mixture, then decode the translation test set
//! and score held-out text with every stage.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{EvalConfig, ExperimentConfig, Precision, EOS, SEP_TRANSLATE, BOS};
use super::corpus::SyntheticWorld;
use super::model::ToyModel;
use super::train::{loss_curve_csv, train_stage, StepLog};
use super::ToyError;
use crate::metrics::{corpus_bleu, corpus_chrf, pooled_perplexity, EvalCorpus, LogLikStream, MetricReport, Segment};
use crate::scalar::Scalar;
use crate::tensor_store::{load_checkpoint, save_checkpoint, Checkpoint};

pub const BUNDLE_VERSION: u32 = 1;
pub const BUNDLE_MANIFEST: &str = "bundle.json";
pub const REFERENCE_FILE: &str = "translation.ref.txt";
pub const SOURCE_FILE: &str = "translation.src.txt";

/// Model outputs for one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageEval {
    pub stage: String,
    pub hypotheses: Vec<String>,
    pub logliks: Vec<LogLikStream>,
}

/// Hypothesis, reference and log-likelihood files for every stage, in the
/// plain-text formats the metric commands read.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalBundle {
    pub eval: EvalConfig,
    pub sources: Vec<String>,
    pub references: Vec<String>,
    pub stages: Vec<StageEval>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BundleManifest {
    version: u32,
    eval: EvalConfig,
    sources: String,
    references: String,
    stages: Vec<BundleStage>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BundleStage {
    stage: String,
    hypotheses: String,
    logliks: String,
}

fn hyp_file(stage: &str) -> String {
    format!("translation.{stage}.hyp.txt")
}

fn loglik_file(stage: &str) -> String {
    format!("heldout.{stage}.loglik.txt")
}

fn io_err(path: &Path, e: std::io::Error) -> ToyError {
    ToyError::Io(format!("{}: {e}", path.display()))
}

fn lines_file(lines: &[String]) -> String {
    let mut out = String::new();
    for l in lines {
        out.push_str(l);
        out.push('\n');
    }
    out
}

impl EvalBundle {
    pub fn stage(&self, name: &str) -> Option<&StageEval> {
        self.stages.iter().find(|s| s.stage == name)
    }

    /// Perplexity, BLEU and chrF for every stage, in stage order.
    pub fn stage_metrics(&self) -> Result<Vec<(String, Vec<MetricReport>)>, ToyError> {
        let bleu = self.eval.bleu();
        let chrf = self.eval.chrf();
        self.stages
            .iter()
            .map(|s| {
                let corpus = EvalCorpus::new(
                    s.hypotheses
                        .iter()
                        .zip(&self.references)
                        .map(|(h, r)| Segment { hypothesis: h.clone(), references: vec![r.clone()] })
                        .collect(),
                )?;
                let reports = vec![
                    pooled_perplexity(&s.logliks)?,
                    corpus_bleu(&corpus, &bleu)?,
                    corpus_chrf(&corpus, &chrf)?,
                ];
                Ok((s.stage.clone(), reports))
            })
            .collect()
    }

    pub fn write(&self, dir: &Path) -> Result<(), ToyError> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let put = |name: &str, text: String| {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| io_err(&path, e))
        };
        put(SOURCE_FILE, lines_file(&self.sources))?;
        put(REFERENCE_FILE, lines_file(&self.references))?;
        let mut stages = Vec::new();
        for s in &self.stages {
            put(&hyp_file(&s.stage), lines_file(&s.hypotheses))?;
            let ll: Vec<String> = s.logliks.iter().map(LogLikStream::to_line).collect();
            put(&loglik_file(&s.stage), lines_file(&ll))?;
            stages.push(BundleStage {
                stage: s.stage.clone(),
                hypotheses: hyp_file(&s.stage),
                logliks: loglik_file(&s.stage),
            });
        }
        let manifest = BundleManifest {
            version: BUNDLE_VERSION,
            eval: self.eval,
            sources: SOURCE_FILE.into(),
            references: REFERENCE_FILE.into(),
            stages,
        };
        put(BUNDLE_MANIFEST, serde_json::to_string_pretty(&manifest).unwrap() + "\n")
    }

    /// Read a bundle directory. Stages whose files are missing are skipped.
    pub fn read(dir: &Path) -> Result<Self, ToyError> {
        let read = |name: &str| {
            let path = dir.join(name);
            fs::read_to_string(&path).map_err(|e| io_err(&path, e))
        };
        let manifest: BundleManifest = serde_json::from_str(&read(BUNDLE_MANIFEST)?)
            .map_err(|e| ToyError::Bundle(format!("{BUNDLE_MANIFEST}: {e}")))?;
        if manifest.version != BUNDLE_VERSION {
            return Err(ToyError::Bundle(format!("unsupported bundle version {}", manifest.version)));
        }
        let to_lines = |t: String| t.lines().map(str::to_string).collect::<Vec<_>>();
        let sources = to_lines(read(&manifest.sources)?);
        let references = to_lines(read(&manifest.references)?);
        let mut stages = Vec::new();
        for s in manifest.stages {
            let (hyp, ll) = (dir.join(&s.hypotheses), dir.join(&s.logliks));
            if !hyp.exists() || !ll.exists() {
                continue;
            }
            let hypotheses = to_lines(read(&s.hypotheses)?);
            if hypotheses.len() != references.len() {
                return Err(ToyError::Bundle(format!(
                    "{} has {} lines, references have {}",
                    s.hypotheses,
                    hypotheses.len(),
                    references.len()
                )));
            }
            let logliks = LogLikStream::parse_file(&ll)?;
            stages.push(StageEval { stage: s.stage, hypotheses, logliks });
        }
        Ok(Self { eval: manifest.eval, sources, references, stages })
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub config: ExperimentConfig,
    pub base: Checkpoint,
    pub cpt: Checkpoint,
    pub sft: Checkpoint,
    pub cpt_losses: Vec<StepLog>,
    pub sft_losses: Vec<StepLog>,
    pub bundle: EvalBundle,
}

impl PipelineOutput {
    pub fn stages(&self) -> [(&'static str, &Checkpoint); 3] {
        [("base", &self.base), ("cpt", &self.cpt), ("sft", &self.sft)]
    }

    /// Write checkpoints, loss curves, the resolved config and the eval bundle.
    pub fn write(&self, dir: &Path) -> Result<(), ToyError> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        for (name, ckpt) in self.stages() {
            save_checkpoint(ckpt, dir.join(format!("{name}.safetensors")))?;
        }
        for (name, losses) in [("cpt", &self.cpt_losses), ("sft", &self.sft_losses)] {
            let path = dir.join(format!("{name}_loss.csv"));
            fs::write(&path, loss_curve_csv(losses)).map_err(|e| io_err(&path, e))?;
        }
        let path = dir.join("config.toml");
        fs::write(&path, self.config.to_toml()).map_err(|e| io_err(&path, e))?;
        self.bundle.write(&dir.join("eval"))
    }
}

/// Load whichever stage checkpoints exist in a pipeline output directory.
pub fn load_stage_checkpoints(dir: &Path) -> Result<Vec<(String, Option<Checkpoint>)>, ToyError> {
    ["base", "cpt", "sft"]
        .iter()
        .map(|name| {
            let path = dir.join(format!("{name}.safetensors"));
            let ckpt = if path.exists() { Some(load_checkpoint(&path)?) } else { None };
            Ok((name.to_string(), ckpt))
        })
        .collect()
}

/// Decode the translation prompts and score held-out text with one model.
pub fn evaluate_stage<T: Scalar>(
    stage: &str,
    model: &ToyModel<T>,
    world: &SyntheticWorld,
    prompts: &[Vec<u32>],
    heldout: &[super::corpus::Sample],
) -> Result<StageEval, ToyError> {
    let max_new = world.spec().prompt_len;
    let hypotheses = prompts
        .par_iter()
        .map(|p| {
            let mut ctx = Vec::with_capacity(p.len() + 2);
            ctx.push(BOS);
            ctx.extend_from_slice(p);
            ctx.push(SEP_TRANSLATE);
            world.render(&model.greedy(&ctx, max_new, EOS))
        })
        .collect();
    let logliks = heldout
        .par_iter()
        .map(|s| LogLikStream::new(model.token_logliks(s)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(StageEval { stage: stage.into(), hypotheses, logliks })
}

fn run_typed<T: Scalar>(cfg: &ExperimentConfig) -> Result<PipelineOutput, ToyError> {
    let world = SyntheticWorld::new(&cfg.corpus, cfg.model.vocab_size)?;
    let mut base = ToyModel::<T>::new(&cfg.model)?.to_checkpoint();
    base.set_meta("stage", "base");
    base.set_meta("steps", "0");
    base.set_meta("total_steps", "0");
    base.set_meta("seed", cfg.model.seed.to_string());
    base.set_meta("dtype", T::DTYPE.as_str());

    let cpt_data = world.generate_corpus(&cfg.cpt)?;
    let cpt = train_stage::<T>(&base, &cfg.model, &cpt_data, &cfg.cpt)?;
    let sft_data = world.generate_corpus(&cfg.sft)?;
    let sft = train_stage::<T>(&cpt.checkpoint, &cfg.model, &sft_data, &cfg.sft)?;

    let test = world.translation_test();
    let prompts: Vec<Vec<u32>> = test.iter().map(|(p, _)| p.clone()).collect();
    let heldout = world.heldout_target();
    let mut stages = Vec::new();
    for (name, ckpt) in [("base", &base), ("cpt", &cpt.checkpoint), ("sft", &sft.checkpoint)] {
        let model = ToyModel::<T>::from_checkpoint(&cfg.model, ckpt)?;
        stages.push(evaluate_stage(name, &model, &world, &prompts, &heldout)?);
    }
    let bundle = EvalBundle {
        eval: cfg.eval,
        sources: test.iter().map(|(p, _)| world.render(p)).collect(),
        references: test.iter().map(|(_, r)| world.render(r)).collect(),
        stages,
    };
    Ok(PipelineOutput {
        config: cfg.clone(),
        base,
        cpt: cpt.checkpoint,
        sft: sft.checkpoint,
        cpt_losses: cpt.losses,
        sft_losses: sft.losses,
        bundle,
    })
}

/// Run base → CPT → SFT and evaluate every stage.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<PipelineOutput, ToyError> {
    cfg.validate()?;
    match cfg.precision {
        Precision::F32 => run_typed::<f32>(cfg),
        Precision::F64 => run_typed::<f64>(cfg),
    }
}
