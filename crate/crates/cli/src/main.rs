//! `adaptlab` command-line entry point.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage, 3 malformed input,
//! 4 mismatched inputs.

use std::fmt::Write as _;
use std::io::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use adaptlab::delta::{self, CorrelateOptions, DeltaError, DeltaOptions, DeltaProfile};
use adaptlab::metrics::{
    corpus_bleu, corpus_chrf, pooled_perplexity, BleuOptions, ChrfOptions, EvalCorpus, LogLikStream, MetricError,
    MetricReport,
};
use adaptlab::report::{self as rep, Report, ReportError, RunManifest};
use adaptlab::taxonomy::{Taxonomy, TaxonomyError};
use adaptlab::toy::gradcheck::{gradcheck, test_matrix};
use adaptlab::toy::pipeline::load_stage_checkpoints;
use adaptlab::toy::{
    run_pipeline, train_stage, EvalBundle, ExperimentConfig, Precision, StagePlan, SyntheticWorld, ToyError,
    ToyModel,
};
use adaptlab::{load_checkpoint, save_checkpoint, Checkpoint, StoreError};

const GRADCHECK_TOLERANCE: f64 = 1e-6;

#[derive(Parser)]
#[command(name = "adaptlab", version, about = "Checkpoint delta analysis, MT/LM metrics and a toy adaptation lab")]
struct Cli {
    /// Output format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Seed for every random stream; recorded in the manifest.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
    Text,
}

#[derive(Subcommand)]
enum Command {
    /// Per-tensor L2 delta between two checkpoints.
    Diff(DiffArgs),
    /// Largest components of a delta.
    Rank {
        #[command(flatten)]
        src: ProfileSource,
        #[arg(short, long, default_value_t = 10)]
        k: usize,
    },
    /// Layer class and block of each tensor name.
    Classify {
        /// Checkpoint files, or raw names with `--names`.
        #[arg(required = true)]
        inputs: Vec<String>,
        #[arg(long)]
        names: bool,
        #[arg(long)]
        taxonomy: Option<PathBuf>,
    },
    /// Delta norms grouped by layer class.
    Aggregate {
        #[command(flatten)]
        src: ProfileSource,
    },
    /// Pearson correlation between two delta profiles (JSON from `diff`).
    Correlate {
        profile_a: PathBuf,
        profile_b: PathBuf,
        /// Correlate log norms.
        #[arg(long)]
        log: bool,
        /// Write a scatter chart to this directory.
        #[arg(long)]
        plots: Option<PathBuf>,
    },
    /// Translation and language-model metrics.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Toy two-stage adaptation experiment.
    #[command(subcommand)]
    Toy(ToyCommand),
    /// Combined experiment report for a pipeline output directory.
    Report {
        run_dir: PathBuf,
        /// Eval bundle directory; defaults to `<run_dir>/eval`.
        #[arg(long)]
        bundle: Option<PathBuf>,
        #[arg(short, long, default_value_t = 5)]
        k: usize,
        #[arg(long)]
        log: bool,
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        /// Write SVG charts to this directory.
        #[arg(long)]
        plots: Option<PathBuf>,
    },
}

#[derive(Args)]
struct DiffArgs {
    a: PathBuf,
    b: PathBuf,
    /// Analyze the common name set instead of failing on a mismatch.
    #[arg(long)]
    intersect: bool,
    /// Add the relative-change column.
    #[arg(long)]
    relative: bool,
    #[arg(long)]
    label: Option<String>,
    #[arg(long)]
    taxonomy: Option<PathBuf>,
}

/// Either two checkpoints or one profile JSON.
#[derive(Args)]
struct ProfileSource {
    #[arg(required = true, num_args = 1..=2)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    intersect: bool,
    #[arg(long)]
    taxonomy: Option<PathBuf>,
}

#[derive(Subcommand)]
enum EvalCommand {
    Bleu {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref", required = true)]
        refs: Vec<PathBuf>,
        #[arg(long, default_value = "whitespace")]
        tokenizer: String,
        #[arg(long, default_value_t = 4)]
        max_n: usize,
        #[arg(long, default_value = "exp")]
        smoothing: String,
    },
    Chrf {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref", required = true)]
        refs: Vec<PathBuf>,
        #[arg(long, default_value_t = 6)]
        char_n: usize,
        #[arg(long, default_value_t = 2.0)]
        beta: f64,
    },
    /// Pooled perplexity over log-likelihood files.
    Ppl {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    Cpt,
    Sft,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Cpt,
    Sft,
    Heldout,
}

#[derive(Subcommand)]
enum ToyCommand {
    /// Train one stage.
    Train {
        #[arg(long, value_enum)]
        stage: StageArg,
        /// Starting checkpoint; a fresh seeded model when omitted.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        loss_csv: Option<PathBuf>,
    },
    /// Generate a synthetic corpus split.
    Gen {
        #[arg(long, value_enum)]
        split: Split,
    },
    /// Finite-difference gradient check; the architecture matrix unless
    /// `--config` is given.
    Gradcheck,
    /// Base, CPT and SFT end to end, with evaluation.
    Pipeline {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug)]
enum CliError {
    Runtime(String),
    Usage(String),
    Format(String),
    Mismatch(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Format(_) => 3,
            CliError::Mismatch(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Runtime(m) | CliError::Usage(m) | CliError::Format(m) | CliError::Mismatch(m) => m,
        }
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Io { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Format(e.to_string()),
        }
    }
}

impl From<DeltaError> for CliError {
    fn from(e: DeltaError) -> Self {
        match e {
            DeltaError::NameMismatch { .. } | DeltaError::ShapeMismatch { .. } => CliError::Mismatch(e.to_string()),
            DeltaError::EmptyProfile => CliError::Format(e.to_string()),
        }
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        match e {
            MetricError::InvalidParameter(_) | MetricError::Io { .. } => CliError::Usage(e.to_string()),
            MetricError::LineCountMismatch { .. } | MetricError::InconsistentMetrics { .. } => {
                CliError::Mismatch(e.to_string())
            }
            _ => CliError::Format(e.to_string()),
        }
    }
}

impl From<ToyError> for CliError {
    fn from(e: ToyError) -> Self {
        match e {
            ToyError::Store(e) => e.into(),
            ToyError::Metric(e) => e.into(),
            ToyError::InvalidConfig(_) | ToyError::Io(_) => CliError::Usage(e.to_string()),
            ToyError::ConfigParse(_) | ToyError::Bundle(_) => CliError::Format(e.to_string()),
            ToyError::ShapeMismatch(_) => CliError::Mismatch(e.to_string()),
            ToyError::NonFiniteLoss { .. } => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::Delta(e) => e.into(),
            ReportError::Metric(e) => e.into(),
            ReportError::Toy(e) => e.into(),
            ReportError::Io(m) => CliError::Usage(m),
            ReportError::Csv(e) => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<TaxonomyError> for CliError {
    fn from(e: TaxonomyError) -> Self {
        CliError::Format(format!("taxonomy: {e}"))
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

struct Ctx {
    format: Format,
    seed: Option<u64>,
    config_path: Option<PathBuf>,
    config_text: Option<String>,
}

impl Ctx {
    fn manifest(&self, inputs: &[&Path]) -> Result<RunManifest> {
        let mut m = RunManifest::new(std::env::args().collect()).with_seed(self.seed);
        if let Some(text) = &self.config_text {
            m = m.with_config(text);
        }
        for p in inputs {
            m.add_input(p)?;
        }
        Ok(m)
    }

    fn experiment_config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config_text {
            Some(text) => ExperimentConfig::from_toml(text)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.apply_seed(seed);
        }
        Ok(cfg)
    }

    /// Print a report in the selected format; `text` renders the body.
    fn emit<T: serde::Serialize>(
        &self,
        report: &Report<T>,
        csv: rep::CsvTable,
        text: impl FnOnce() -> String,
    ) -> Result<()> {
        let payload = match self.format {
            Format::Json => report.to_json(),
            Format::Csv => report.to_csv(&csv),
            Format::Text => text(),
        };
        let mut stdout = std::io::stdout().lock();
        match stdout.write_all(payload.as_bytes()).and_then(|_| stdout.flush()) {
            Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::Runtime(format!("stdout: {e}"))),
            _ => Ok(()),
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let config_text = match &cli.config {
        Some(p) => Some(fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?),
        None => None,
    };
    let ctx = Ctx { format: cli.format, seed: cli.seed, config_path: cli.config.clone(), config_text };
    match &cli.command {
        Command::Diff(args) => cmd_diff(&ctx, args),
        Command::Rank { src, k } => cmd_rank(&ctx, src, *k),
        Command::Classify { inputs, names, taxonomy } => cmd_classify(&ctx, inputs, *names, taxonomy.as_deref()),
        Command::Aggregate { src } => cmd_aggregate(&ctx, src),
        Command::Correlate { profile_a, profile_b, log, plots } => {
            cmd_correlate(&ctx, profile_a, profile_b, *log, plots.as_deref())
        }
        Command::Eval(e) => cmd_eval(&ctx, e),
        Command::Toy(t) => cmd_toy(&ctx, t),
        Command::Report { run_dir, bundle, k, log, taxonomy, plots } => {
            cmd_report(&ctx, run_dir, bundle.as_deref(), *k, *log, taxonomy.as_deref(), plots.as_deref())
        }
    }
}

fn load_taxonomy(path: Option<&Path>) -> Result<Option<Taxonomy>> {
    let Some(path) = path else { return Ok(None) };
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    Ok(Some(Taxonomy::parse(&text)?))
}

fn read_profile(path: &Path) -> Result<DeltaProfile> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Format(format!("{}: not a delta profile: {e}", path.display())))
}

fn compute_delta(a: &Path, b: &Path, opts: &DeltaOptions) -> Result<DeltaProfile> {
    let ca = load_checkpoint(a)?;
    let cb = load_checkpoint(b)?;
    let profile = delta::delta_l2_with(&ca, &cb, opts)?;
    if !profile.excluded.is_empty() {
        eprintln!("warning: {} tensors excluded by --intersect", profile.excluded.len());
    }
    Ok(profile)
}

fn profile_from(src: &ProfileSource) -> Result<DeltaProfile> {
    match src.inputs.as_slice() {
        [profile] => read_profile(profile),
        [a, b] => {
            let opts = DeltaOptions { intersect: src.intersect, taxonomy: load_taxonomy(src.taxonomy.as_deref())?, ..Default::default() };
            compute_delta(a, b, &opts)
        }
        _ => Err(CliError::Usage("expected one profile JSON or two checkpoints".into())),
    }
}

fn path_refs(paths: &[PathBuf]) -> Vec<&Path> {
    paths.iter().map(PathBuf::as_path).collect()
}

fn cmd_diff(ctx: &Ctx, args: &DiffArgs) -> Result<()> {
    let opts = DeltaOptions {
        intersect: args.intersect,
        relative: args.relative,
        label: args.label.clone(),
        taxonomy: load_taxonomy(args.taxonomy.as_deref())?,
    };
    let profile = compute_delta(&args.a, &args.b, &opts)?;
    let report = Report::new(rep::DELTA_SCHEMA, ctx.manifest(&[&args.a, &args.b])?, &profile);
    ctx.emit(&report, rep::delta_csv(&profile), || text_profile(&profile))?;
    Ok(())
}

fn cmd_rank(ctx: &Ctx, src: &ProfileSource, k: usize) -> Result<()> {
    if k == 0 {
        return Err(CliError::Usage("k must be at least 1".into()));
    }
    let profile = profile_from(src)?;
    let body = rep::RankBody::new(&profile, k);
    let report = Report::new(rep::RANK_SCHEMA, ctx.manifest(&path_refs(&src.inputs))?, &body);
    ctx.emit(&report, body.csv(), || {
        let mut out = format!("{} top {}\n", body.pair_label, body.k);
        for (i, e) in body.entries.iter().enumerate() {
            let _ = writeln!(out, "{:>3}  {:<48} {:<10} {:.6}", i + 1, e.name, e.class, e.norm);
        }
        out
    })?;
    Ok(())
}

fn cmd_classify(ctx: &Ctx, inputs: &[String], raw_names: bool, taxonomy: Option<&Path>) -> Result<()> {
    let tax = load_taxonomy(taxonomy)?.unwrap_or_default();
    let mut names = Vec::new();
    let mut files = Vec::new();
    if raw_names {
        names.extend(inputs.iter().cloned());
    } else {
        for p in inputs {
            let path = PathBuf::from(p);
            let ckpt = load_checkpoint(&path)?;
            names.extend(ckpt.names().map(str::to_string));
            files.push(path);
        }
    }
    let body = rep::ClassifyBody { entries: names.iter().map(|n| tax.classify(n)).collect() };
    let report = Report::new(rep::CLASSIFY_SCHEMA, ctx.manifest(&path_refs(&files))?, &body);
    ctx.emit(&report, body.csv(), || {
        let mut out = String::new();
        for k in &body.entries {
            let block = k.block_index.map(|b| b.to_string()).unwrap_or_else(|| "-".into());
            let _ = writeln!(out, "{:<48} {:<10} {block}", k.raw_name, k.layer_class);
        }
        out
    })?;
    Ok(())
}

fn cmd_aggregate(ctx: &Ctx, src: &ProfileSource) -> Result<()> {
    let profile = profile_from(src)?;
    let body = rep::AggregateBody::new(&profile);
    let report = Report::new(rep::AGGREGATE_SCHEMA, ctx.manifest(&path_refs(&src.inputs))?, &body);
    ctx.emit(&report, body.csv(), || {
        let mut out = format!("{}\n{:<10} {:>6} {:>14} {:>14}\n", body.pair_label, "class", "count", "norm", "mean");
        for (c, a) in &body.classes {
            let _ = writeln!(out, "{:<10} {:>6} {:>14.6} {:>14.6}", c, a.count, a.norm, a.mean);
        }
        out
    })?;
    Ok(())
}

fn cmd_correlate(ctx: &Ctx, a: &Path, b: &Path, log: bool, plots: Option<&Path>) -> Result<()> {
    let pa = read_profile(a)?;
    let pb = read_profile(b)?;
    let corr = delta::correlate_with(&pa, &pb, CorrelateOptions { log })?;
    if let Some(w) = &corr.warning {
        eprintln!("warning: {w}");
    }
    if let Some(dir) = plots {
        fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
        let path = dir.join("correlation.svg");
        fs::write(&path, rep::svg_scatter("Per-component change correlation", &corr))
            .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    }
    let report = Report::new(rep::CORRELATION_SCHEMA, ctx.manifest(&[a, b])?, &corr);
    ctx.emit(&report, rep::correlation_csv(&corr), || {
        let r = corr.r.map(|r| format!("{r:.6}")).unwrap_or_else(|| "undefined".into());
        format!("{} vs {} ({}): r = {r}, n = {}\n", corr.x_label, corr.y_label, corr.transform, corr.n)
    })?;
    Ok(())
}

fn cmd_eval(ctx: &Ctx, cmd: &EvalCommand) -> Result<()> {
    let (metric, inputs): (MetricReport, Vec<&Path>) = match cmd {
        EvalCommand::Bleu { hyp, refs, tokenizer, max_n, smoothing } => {
            let opts = BleuOptions { max_n: *max_n, tokenizer: tokenizer.parse()?, smoothing: smoothing.parse()? };
            let corpus = EvalCorpus::from_files(hyp, refs)?;
            let mut inputs = vec![hyp.as_path()];
            inputs.extend(path_refs(refs));
            (corpus_bleu(&corpus, &opts)?, inputs)
        }
        EvalCommand::Chrf { hyp, refs, char_n, beta } => {
            let opts = ChrfOptions { char_n: *char_n, beta: *beta };
            let corpus = EvalCorpus::from_files(hyp, refs)?;
            let mut inputs = vec![hyp.as_path()];
            inputs.extend(path_refs(refs));
            (corpus_chrf(&corpus, &opts)?, inputs)
        }
        EvalCommand::Ppl { files } => {
            let mut streams = Vec::new();
            for f in files {
                streams.extend(LogLikStream::parse_file(f)?);
            }
            (pooled_perplexity(&streams)?, path_refs(files))
        }
    };
    let report = Report::new(rep::METRIC_SCHEMA, ctx.manifest(&inputs)?, &metric);
    ctx.emit(&report, rep::metric_csv(&metric), || {
        let mut out = format!("{} {}\n", metric.name, metric.value);
        for (k, v) in &metric.details {
            let _ = writeln!(out, "  {k}: {v}");
        }
        out
    })?;
    Ok(())
}

fn stage_plan(cfg: &ExperimentConfig, stage: StageArg) -> &StagePlan {
    match stage {
        StageArg::Cpt => &cfg.cpt,
        StageArg::Sft => &cfg.sft,
    }
}

fn fresh_base(cfg: &ExperimentConfig) -> Result<Checkpoint> {
    let mut ckpt = match cfg.precision {
        Precision::F32 => ToyModel::<f32>::new(&cfg.model)?.to_checkpoint(),
        Precision::F64 => ToyModel::<f64>::new(&cfg.model)?.to_checkpoint(),
    };
    ckpt.set_meta("stage", "base");
    ckpt.set_meta("steps", "0");
    ckpt.set_meta("total_steps", "0");
    ckpt.set_meta("seed", cfg.seed.to_string());
    Ok(ckpt)
}

fn cmd_toy(ctx: &Ctx, cmd: &ToyCommand) -> Result<()> {
    let config_inputs: Vec<&Path> = ctx.config_path.iter().map(PathBuf::as_path).collect();
    match cmd {
        ToyCommand::Train { stage, init, out, loss_csv } => {
            let cfg = ctx.experiment_config()?;
            let plan = stage_plan(&cfg, *stage);
            let world = SyntheticWorld::new(&cfg.corpus, cfg.model.vocab_size)?;
            let data = world.generate_corpus(plan)?;
            let start = match init {
                Some(p) => load_checkpoint(p)?,
                None => fresh_base(&cfg)?,
            };
            let outcome = match cfg.precision {
                Precision::F32 => train_stage::<f32>(&start, &cfg.model, &data, plan)?,
                Precision::F64 => train_stage::<f64>(&start, &cfg.model, &data, plan)?,
            };
            save_checkpoint(&outcome.checkpoint, out)?;
            if let Some(p) = loss_csv {
                fs::write(p, adaptlab::toy::train::loss_curve_csv(&outcome.losses))
                    .map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?;
            }
            let body = rep::TrainBody {
                stage: plan.stage.as_str().to_string(),
                samples: data.len(),
                steps: outcome.losses.len(),
                initial_loss: outcome.losses.first().map(|l| l.loss),
                final_loss: outcome.losses.last().map(|l| l.loss),
                output: out.display().to_string(),
                losses: outcome.losses,
            };
            let mut inputs = config_inputs;
            inputs.extend(init.as_deref());
            let report = Report::new(rep::TRAIN_SCHEMA, ctx.manifest(&inputs)?, &body);
            ctx.emit(&report, body.csv(), || {
                let fmt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".into());
                format!(
                    "{} stage: {} samples, {} steps, loss {} -> {}, wrote {}\n",
                    body.stage,
                    body.samples,
                    body.steps,
                    fmt(body.initial_loss),
                    fmt(body.final_loss),
                    body.output
                )
            })?;
        }
        ToyCommand::Gen { split } => {
            let cfg = ctx.experiment_config()?;
            let world = SyntheticWorld::new(&cfg.corpus, cfg.model.vocab_size)?;
            let (name, samples) = match split {
                Split::Cpt => ("cpt", world.generate_corpus(&cfg.cpt)?),
                Split::Sft => ("sft", world.generate_corpus(&cfg.sft)?),
                Split::Heldout => ("heldout", adaptlab::toy::Dataset { samples: world.heldout_target() }),
            };
            let body = rep::DatasetBody { split: name.into(), samples };
            let report = Report::new(rep::DATASET_SCHEMA, ctx.manifest(&config_inputs)?, &body);
            ctx.emit(&report, body.csv(), || body.samples.to_text())?;
        }
        ToyCommand::Gradcheck => {
            let configs = match &ctx.config_text {
                Some(_) => vec![ctx.experiment_config()?.model],
                None => test_matrix(),
            };
            let mut cases = Vec::new();
            for mut config in configs {
                if let Some(seed) = ctx.seed {
                    config.seed = seed;
                }
                cases.push(rep::GradcheckCase { config, result: gradcheck(&config)? });
            }
            let body = rep::GradcheckBody::new(cases, GRADCHECK_TOLERANCE);
            let report = Report::new(rep::GRADCHECK_SCHEMA, ctx.manifest(&config_inputs)?, &body);
            ctx.emit(&report, body.csv(), || {
                let mut out = String::new();
                for c in &body.configs {
                    let m = &c.config;
                    let _ = writeln!(
                        out,
                        "V={} d={} k={} L={} h={}: {} params, max rel error {:.3e} at {}",
                        m.vocab_size,
                        m.embed_dim,
                        m.context_k,
                        m.num_blocks,
                        m.hidden_dim,
                        c.result.params_checked,
                        c.result.max_rel_error,
                        c.result.worst
                    );
                }
                let _ = writeln!(out, "{}", if body.passed { "PASS" } else { "FAIL" });
                out
            })?;
            if !body.passed {
                return Err(CliError::Runtime(format!("gradient check exceeded tolerance {GRADCHECK_TOLERANCE:e}")));
            }
        }
        ToyCommand::Pipeline { out } => {
            let cfg = ctx.experiment_config()?;
            let output = run_pipeline(&cfg)?;
            output.write(out)?;
            let body = rep::PipelineBody::new(&output, out)?;
            let manifest = ctx.manifest(&config_inputs)?.with_config(&cfg.to_toml());
            let report = Report::new(rep::PIPELINE_SCHEMA, manifest, &body);
            ctx.emit(&report, body.csv(), || {
                let mut out = format!("wrote {}\n", body.output_dir);
                for sm in &body.metrics {
                    let vals: Vec<String> = sm.reports.iter().map(|r| format!("{} {:.4}", r.name, r.value)).collect();
                    let _ = writeln!(out, "{:<5} {}", sm.stage, vals.join("  "));
                }
                out
            })?;
        }
    }
    Ok(())
}

fn cmd_report(
    ctx: &Ctx,
    run_dir: &Path,
    bundle: Option<&Path>,
    k: usize,
    log: bool,
    taxonomy: Option<&Path>,
    plots: Option<&Path>,
) -> Result<()> {
    if !run_dir.is_dir() {
        return Err(CliError::Usage(format!("{}: not a directory", run_dir.display())));
    }
    if k == 0 {
        return Err(CliError::Usage("k must be at least 1".into()));
    }
    let checkpoints = load_stage_checkpoints(run_dir)?;
    for (stage, c) in &checkpoints {
        if c.is_none() {
            eprintln!("warning: stage `{stage}` absent");
        }
    }
    let bundle_dir = bundle.map(Path::to_path_buf).unwrap_or_else(|| run_dir.join("eval"));
    let bundle = if bundle_dir.is_dir() {
        Some(EvalBundle::read(&bundle_dir)?)
    } else {
        if bundle.is_some() {
            return Err(CliError::Usage(format!("{}: not a directory", bundle_dir.display())));
        }
        eprintln!("warning: no eval bundle at {}", bundle_dir.display());
        None
    };
    let inputs = adaptlab::report::ExperimentInputs {
        checkpoints: checkpoints.iter().map(|(s, c)| (s.clone(), c.as_ref())).collect(),
        bundle: bundle.as_ref(),
        top_k: k,
        taxonomy: load_taxonomy(taxonomy)?,
        log_correlation: log,
    };
    let body = rep::build_experiment_report(&inputs)?;
    if let Some(dir) = plots {
        rep::write_charts(&body, dir)?;
    }
    let mut read: Vec<PathBuf> = ["base", "cpt", "sft"]
        .iter()
        .map(|s| run_dir.join(format!("{s}.safetensors")))
        .filter(|p| p.exists())
        .collect();
    if bundle.is_some() {
        read.push(bundle_dir.clone());
    }
    let mut manifest = ctx.manifest(&path_refs(&read))?;
    if manifest.config_hash.is_none() {
        if let Ok(text) = fs::read_to_string(run_dir.join("config.toml")) {
            manifest = manifest.with_config(&text);
        }
    }
    let report = Report::new(rep::EXPERIMENT_SCHEMA, manifest, &body);
    ctx.emit(&report, body.csv(), || text_experiment(&body))?;
    Ok(())
}

fn text_profile(p: &DeltaProfile) -> String {
    let mut out = format!(
        "{}: {} components, mean {:.6}, median {:.6}, max {:.6}\n",
        p.pair_label, p.total_components, p.stats.mean, p.stats.median, p.stats.max
    );
    for e in &p.entries {
        let block = e.block.map(|b| b.to_string()).unwrap_or_else(|| "-".into());
        let _ = write!(out, "{:<48} {:<10} {:>4} {:>14.6}", e.name, e.class, block, e.norm);
        if let Some(r) = e.relative {
            let _ = write!(out, " {r:>12.6}");
        }
        out.push('\n');
    }
    if !p.excluded.is_empty() {
        let _ = writeln!(out, "excluded: {}", p.excluded.join(", "));
    }
    out
}

fn text_experiment(r: &rep::ExperimentReport) -> String {
    let mut out = String::from("stages\n");
    for s in &r.stages {
        let status = if s.status == rep::Presence::Present { "present" } else { "ABSENT" };
        let steps = s.steps.map(|v| v.to_string()).unwrap_or_else(|| "-".into());
        let _ = writeln!(out, "  {:<5} {status:<8} steps {steps}", s.stage);
    }
    if let Some(table) = &r.metrics.comparison {
        let _ = writeln!(out, "metrics ({})", table.stages.join(" -> "));
        for row in &table.rows {
            let vals: Vec<String> = row.values.iter().map(|v| format!("{v:.4}")).collect();
            let _ = writeln!(out, "  {:<10} {}", row.metric, vals.join("  "));
        }
    } else {
        let _ = writeln!(out, "metrics absent");
    }
    for d in &r.deltas {
        match &d.profile {
            Some(p) => {
                let _ = writeln!(
                    out,
                    "{}: mean {:.6}, median {:.6}, max {:.6}",
                    d.pair, p.stats.mean, p.stats.median, p.stats.max
                );
                for e in d.top_k.iter().flatten() {
                    let _ = writeln!(out, "  {:<48} {:>14.6}", e.name, e.norm);
                }
            }
            None => {
                let _ = writeln!(out, "{}: absent ({})", d.pair, d.absent_stages.join(", "));
            }
        }
    }
    match r.correlation.report.as_ref().and_then(|c| c.r) {
        Some(v) => {
            let _ = writeln!(out, "correlation {} vs {}: r = {v:.6}", r.correlation.x_pair, r.correlation.y_pair);
        }
        None => {
            let _ = writeln!(out, "correlation {} vs {}: undefined", r.correlation.x_pair, r.correlation.y_pair);
        }
    }
    out
}
