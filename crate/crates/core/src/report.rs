//! Report documents: every emitted report carries a [`RunManifest`] and a
//! schema identifier. The JSON layouts are described by the schema files in
//! `schemas/`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::delta::{
    aggregate_by_class, correlate_with, delta_direction_cosine, delta_l2_with, top_k, ClassAggregate,
    CorrelateOptions, CorrelationReport, DeltaEntry, DeltaError, DeltaOptions, DeltaProfile,
};
use crate::metrics::{stage_comparison, ComparisonTable, MetricError, MetricReport};
use crate::taxonomy::{LayerClass, LayerKey, Taxonomy};
use crate::tensor_store::Checkpoint;
use crate::toy::{Dataset, EvalBundle, GradcheckReport, PipelineOutput, StepLog, ToyError};

pub const DELTA_SCHEMA: &str = "adaptlab.delta_profile.v1";
pub const CORRELATION_SCHEMA: &str = "adaptlab.correlation.v1";
pub const RANK_SCHEMA: &str = "adaptlab.rank.v1";
pub const AGGREGATE_SCHEMA: &str = "adaptlab.aggregate.v1";
pub const CLASSIFY_SCHEMA: &str = "adaptlab.classify.v1";
pub const METRIC_SCHEMA: &str = "adaptlab.metric.v1";
pub const EXPERIMENT_SCHEMA: &str = "adaptlab.experiment_report.v1";
pub const GRADCHECK_SCHEMA: &str = "adaptlab.gradcheck.v1";
pub const PIPELINE_SCHEMA: &str = "adaptlab.pipeline.v1";
pub const TRAIN_SCHEMA: &str = "adaptlab.train.v1";
pub const DATASET_SCHEMA: &str = "adaptlab.dataset.v1";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Delta(#[from] DeltaError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Toy(#[from] ToyError),
    #[error("io error: {0}")]
    Io(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Current UTC time, second precision. `SOURCE_DATE_EPOCH` overrides the clock.
pub fn timestamp_now() -> String {
    use chrono::{DateTime, SecondsFormat, Utc};
    let now = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.parse::<i64>().ok())
        .and_then(|secs| DateTime::<Utc>::from_timestamp(secs, 0))
        .unwrap_or_else(Utc::now);
    now.to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// Provenance of one report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command_line: Vec<String>,
    /// SHA-256 of the resolved configuration text, when a config was used.
    pub config_hash: Option<String>,
    /// Input path → SHA-256 of its bytes.
    pub input_digests: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub timestamp: String,
}

impl RunManifest {
    pub fn new(command_line: Vec<String>) -> Self {
        Self {
            command_line,
            config_hash: None,
            input_digests: BTreeMap::new(),
            seed: None,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: timestamp_now(),
        }
    }

    pub fn with_config(mut self, config_text: &str) -> Self {
        self.config_hash = Some(sha256_hex(config_text.as_bytes()));
        self
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }

    pub fn add_input_bytes(&mut self, label: impl Into<String>, bytes: &[u8]) {
        self.input_digests.insert(label.into(), sha256_hex(bytes));
    }

    /// Digest a file, or every file under a directory (sorted, recursive).
    pub fn add_input(&mut self, path: &Path) -> Result<(), ReportError> {
        let io = |e: std::io::Error| ReportError::Io(format!("{}: {e}", path.display()));
        if path.is_dir() {
            let mut entries: Vec<_> = fs::read_dir(path).map_err(io)?.collect::<Result<_, _>>().map_err(io)?;
            entries.sort_by_key(|e| e.path());
            for e in entries {
                self.add_input(&e.path())?;
            }
        } else {
            let bytes = fs::read(path).map_err(io)?;
            self.add_input_bytes(path.display().to_string(), &bytes);
        }
        Ok(())
    }
}

/// A report body together with its schema tag and manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report<T> {
    pub schema: String,
    pub manifest: RunManifest,
    #[serde(flatten)]
    pub body: T,
}

impl<T: Serialize> Report<T> {
    pub fn new(schema: &str, manifest: RunManifest, body: T) -> Self {
        Self { schema: schema.to_string(), manifest, body }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize") + "\n"
    }

    /// CSV with the manifest as a leading `#` comment line.
    pub fn to_csv(&self, table: &CsvTable) -> String {
        let manifest = serde_json::to_string(&self.manifest).expect("manifest serializes");
        format!("# schema: {}\n# manifest: {manifest}\n{}", self.schema, table.render())
    }
}

/// A header plus string rows, rendered with RFC 4180 quoting.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut w = csv::WriterBuilder::new().flexible(false).from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
    }
}

/// Shortest round-trip decimal form.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn delta_csv(profile: &DeltaProfile) -> CsvTable {
    let relative = profile.entries.iter().any(|e| e.relative.is_some());
    let mut header = vec!["name", "class", "block", "norm"];
    if relative {
        header.push("relative");
    }
    let mut t = CsvTable::new(&header);
    for e in &profile.entries {
        let mut row = vec![e.name.clone(), e.class.to_string(), opt(e.block), num(e.norm)];
        if relative {
            row.push(e.relative.map(num).unwrap_or_default());
        }
        t.push(row);
    }
    t
}

pub fn correlation_csv(report: &CorrelationReport) -> CsvTable {
    let mut t = CsvTable::new(&["name", "x", "y"]);
    for p in &report.points {
        t.push(vec![p.name.clone(), num(p.x), num(p.y)]);
    }
    t
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankBody {
    pub pair_label: String,
    pub k: usize,
    pub entries: Vec<DeltaEntry>,
}

impl RankBody {
    pub fn new(profile: &DeltaProfile, k: usize) -> Self {
        Self { pair_label: profile.pair_label.clone(), k, entries: top_k(profile, k).into_iter().cloned().collect() }
    }

    pub fn csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&["rank", "name", "class", "block", "norm"]);
        for (i, e) in self.entries.iter().enumerate() {
            t.push(vec![(i + 1).to_string(), e.name.clone(), e.class.to_string(), opt(e.block), num(e.norm)]);
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateBody {
    pub pair_label: String,
    pub classes: BTreeMap<LayerClass, ClassAggregate>,
}

impl AggregateBody {
    pub fn new(profile: &DeltaProfile) -> Self {
        Self { pair_label: profile.pair_label.clone(), classes: aggregate_by_class(profile) }
    }

    pub fn csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&["class", "norm", "count", "mean"]);
        for (c, a) in &self.classes {
            t.push(vec![c.to_string(), num(a.norm), a.count.to_string(), num(a.mean)]);
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyBody {
    pub entries: Vec<LayerKey>,
}

impl ClassifyBody {
    pub fn csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&["name", "class", "block"]);
        for k in &self.entries {
            t.push(vec![k.raw_name.clone(), k.layer_class.to_string(), opt(k.block_index)]);
        }
        t
    }
}

pub fn metric_csv(report: &MetricReport) -> CsvTable {
    let mut t = CsvTable::new(&["metric", "field", "value"]);
    t.push(vec![report.name.clone(), "value".into(), num(report.value)]);
    for (k, v) in &report.details {
        let v = match v {
            serde_json::Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        t.push(vec![report.name.clone(), k.clone(), v]);
    }
    t
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckBody {
    pub tolerance: f64,
    pub passed: bool,
    pub configs: Vec<GradcheckCase>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckCase {
    pub config: crate::toy::ToyModelConfig,
    pub result: GradcheckReport,
}

impl GradcheckBody {
    pub fn new(configs: Vec<GradcheckCase>, tolerance: f64) -> Self {
        let passed = configs.iter().all(|c| c.result.max_rel_error < tolerance);
        Self { tolerance, passed, configs }
    }

    pub fn csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&[
            "vocab_size", "embed_dim", "context_k", "num_blocks", "hidden_dim", "params", "max_rel_error", "worst",
        ]);
        for c in &self.configs {
            let m = &c.config;
            t.push(vec![
                m.vocab_size.to_string(),
                m.embed_dim.to_string(),
                m.context_k.to_string(),
                m.num_blocks.to_string(),
                m.hidden_dim.to_string(),
                c.result.params_checked.to_string(),
                num(c.result.max_rel_error),
                c.result.worst.clone(),
            ]);
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainBody {
    pub stage: String,
    pub samples: usize,
    pub steps: usize,
    pub initial_loss: Option<f64>,
    pub final_loss: Option<f64>,
    pub output: String,
    pub losses: Vec<StepLog>,
}

impl TrainBody {
    pub fn csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&["step", "epoch", "lr", "loss"]);
        for l in &self.losses {
            t.push(vec![l.step.to_string(), l.epoch.to_string(), num(l.lr), num(l.loss)]);
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetBody {
    pub split: String,
    pub samples: Dataset,
}

impl DatasetBody {
    pub fn csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&["task", "predict_from", "tokens"]);
        for s in &self.samples.samples {
            let toks: Vec<String> = s.tokens.iter().map(|t| t.to_string()).collect();
            t.push(vec![s.task.as_str().into(), s.predict_from.to_string(), toks.join(" ")]);
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineBody {
    pub output_dir: String,
    pub stages: Vec<StageStatus>,
    pub cpt_final_loss: Option<f64>,
    pub sft_final_loss: Option<f64>,
    pub metrics: Vec<StageMetrics>,
}

impl PipelineBody {
    pub fn new(out: &PipelineOutput, output_dir: &Path) -> Result<Self, ReportError> {
        let stages = out.stages().iter().map(|(name, c)| stage_status(name, Some(c))).collect();
        let metrics = out
            .bundle
            .stage_metrics()?
            .into_iter()
            .map(|(stage, reports)| StageMetrics { stage, reports })
            .collect();
        Ok(Self {
            output_dir: output_dir.display().to_string(),
            stages,
            cpt_final_loss: out.cpt_losses.last().map(|l| l.loss),
            sft_final_loss: out.sft_losses.last().map(|l| l.loss),
            metrics,
        })
    }

    pub fn csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&["stage", "metric", "value"]);
        for sm in &self.metrics {
            for r in &sm.reports {
                t.push(vec![sm.stage.clone(), r.name.clone(), num(r.value)]);
            }
        }
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Presence {
    Present,
    Absent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStatus {
    pub stage: String,
    pub status: Presence,
    pub steps: Option<u64>,
    pub total_steps: Option<u64>,
    pub components: Option<usize>,
    pub parameters: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMetrics {
    pub stage: String,
    pub reports: Vec<MetricReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSection {
    pub status: Presence,
    pub absent_stages: Vec<String>,
    pub per_stage: Vec<StageMetrics>,
    pub comparison: Option<ComparisonTable>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockPoint {
    pub block: usize,
    pub norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaSection {
    pub pair: String,
    pub from: String,
    pub to: String,
    pub status: Presence,
    pub absent_stages: Vec<String>,
    pub profile: Option<DeltaProfile>,
    pub class_aggregates: Option<BTreeMap<LayerClass, ClassAggregate>>,
    pub top_k: Option<Vec<DeltaEntry>>,
    /// Per-class norms by block index, for layer-depth plots.
    pub block_series: Option<BTreeMap<LayerClass, Vec<BlockPoint>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSection {
    pub status: Presence,
    pub x_pair: String,
    pub y_pair: String,
    pub report: Option<CorrelationReport>,
    /// Cosine between the concatenated raw update directions of the two
    /// pairs. Not part of the norm-based analysis.
    pub direction_cosine: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub top_k: usize,
    pub stages: Vec<StageStatus>,
    pub metrics: MetricsSection,
    pub deltas: Vec<DeltaSection>,
    pub correlation: CorrelationSection,
}

#[derive(Debug, Clone)]
pub struct ExperimentInputs<'a> {
    /// `(stage, checkpoint)` in pipeline order; `None` marks a missing stage.
    pub checkpoints: Vec<(String, Option<&'a Checkpoint>)>,
    pub bundle: Option<&'a EvalBundle>,
    pub top_k: usize,
    pub taxonomy: Option<Taxonomy>,
    pub log_correlation: bool,
}

pub fn stage_display(stage: &str) -> String {
    match stage {
        "base" => "Base".into(),
        "cpt" | "sft" => stage.to_uppercase(),
        other => other.to_string(),
    }
}

fn meta_u64(c: &Checkpoint, key: &str) -> Option<u64> {
    c.meta().get(key).and_then(|v| v.parse().ok())
}

fn stage_status(name: &str, c: Option<&Checkpoint>) -> StageStatus {
    StageStatus {
        stage: name.to_string(),
        status: if c.is_some() { Presence::Present } else { Presence::Absent },
        steps: c.and_then(|c| meta_u64(c, "steps")),
        total_steps: c.and_then(|c| meta_u64(c, "total_steps")),
        components: c.map(|c| c.component_count()),
        parameters: c.map(|c| c.parameter_count()),
    }
}

fn block_series(profile: &DeltaProfile) -> BTreeMap<LayerClass, Vec<BlockPoint>> {
    let mut out: BTreeMap<LayerClass, Vec<BlockPoint>> = BTreeMap::new();
    for e in &profile.entries {
        if let Some(block) = e.block {
            out.entry(e.class).or_default().push(BlockPoint { block, norm: e.norm });
        }
    }
    for pts in out.values_mut() {
        pts.sort_by_key(|p| p.block);
    }
    out
}

/// Assemble the combined experiment report. Missing stages produce
/// `absent` sections rather than errors.
pub fn build_experiment_report(inputs: &ExperimentInputs) -> Result<ExperimentReport, ReportError> {
    let stages: Vec<StageStatus> = inputs
        .checkpoints
        .iter()
        .map(|(name, c)| stage_status(name, *c))
        .collect();

    let metrics = match inputs.bundle {
        Some(bundle) if !bundle.stages.is_empty() => {
            let per_stage = bundle.stage_metrics()?;
            let comparison = stage_comparison(&per_stage)?;
            let absent_stages = inputs
                .checkpoints
                .iter()
                .map(|(s, _)| s)
                .filter(|s| bundle.stage(s).is_none())
                .cloned()
                .collect();
            MetricsSection {
                status: Presence::Present,
                absent_stages,
                per_stage: per_stage.into_iter().map(|(stage, reports)| StageMetrics { stage, reports }).collect(),
                comparison: Some(comparison),
            }
        }
        _ => MetricsSection {
            status: Presence::Absent,
            absent_stages: inputs.checkpoints.iter().map(|(s, _)| s.clone()).collect(),
            per_stage: Vec::new(),
            comparison: None,
        },
    };

    let lookup = |name: &str| inputs.checkpoints.iter().find(|(s, _)| s == name).and_then(|(_, c)| *c);
    let names: Vec<&str> = inputs.checkpoints.iter().map(|(s, _)| s.as_str()).collect();
    let mut pairs = Vec::new();
    if names.len() >= 2 {
        pairs.push((names[0], names[1]));
    }
    if names.len() >= 3 {
        pairs.push((names[0], names[2]));
        pairs.push((names[1], names[2]));
    }

    let mut deltas = Vec::new();
    let mut profiles: BTreeMap<(String, String), DeltaProfile> = BTreeMap::new();
    for (from, to) in pairs {
        let pair = format!("{}→{}", stage_display(from), stage_display(to));
        let section = match (lookup(from), lookup(to)) {
            (Some(a), Some(b)) => {
                let opts = DeltaOptions { label: Some(pair.clone()), taxonomy: inputs.taxonomy.clone(), ..Default::default() };
                let profile = delta_l2_with(a, b, &opts)?;
                profiles.insert((from.to_string(), to.to_string()), profile.clone());
                DeltaSection {
                    pair,
                    from: from.into(),
                    to: to.into(),
                    status: Presence::Present,
                    absent_stages: Vec::new(),
                    class_aggregates: Some(aggregate_by_class(&profile)),
                    top_k: Some(top_k(&profile, inputs.top_k).into_iter().cloned().collect()),
                    block_series: Some(block_series(&profile)),
                    profile: Some(profile),
                }
            }
            (a, b) => DeltaSection {
                pair,
                from: from.into(),
                to: to.into(),
                status: Presence::Absent,
                absent_stages: [(from, a), (to, b)]
                    .iter()
                    .filter(|(_, c)| c.is_none())
                    .map(|(s, _)| s.to_string())
                    .collect(),
                profile: None,
                class_aggregates: None,
                top_k: None,
                block_series: None,
            },
        };
        deltas.push(section);
    }

    let correlation = if names.len() >= 3 {
        let x = (names[0].to_string(), names[1].to_string());
        let y = (names[1].to_string(), names[2].to_string());
        let x_pair = format!("{}→{}", stage_display(&x.0), stage_display(&x.1));
        let y_pair = format!("{}→{}", stage_display(&y.0), stage_display(&y.1));
        match (profiles.get(&x), profiles.get(&y)) {
            (Some(px), Some(py)) => {
                let report = correlate_with(px, py, CorrelateOptions { log: inputs.log_correlation })?;
                let cosine =
                    delta_direction_cosine(lookup(names[0]).unwrap(), lookup(names[1]).unwrap(), lookup(names[2]).unwrap())?;
                CorrelationSection { status: Presence::Present, x_pair, y_pair, report: Some(report), direction_cosine: cosine }
            }
            _ => CorrelationSection { status: Presence::Absent, x_pair, y_pair, report: None, direction_cosine: None },
        }
    } else {
        CorrelationSection {
            status: Presence::Absent,
            x_pair: String::new(),
            y_pair: String::new(),
            report: None,
            direction_cosine: None,
        }
    };

    Ok(ExperimentReport { top_k: inputs.top_k, stages, metrics, deltas, correlation })
}

impl ExperimentReport {
    /// Long-format table: one row per reported number.
    pub fn csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&["section", "subject", "key", "value"]);
        for s in &self.stages {
            let status = serde_json::to_value(s.status).unwrap().as_str().unwrap().to_string();
            t.push(vec!["stage".into(), s.stage.clone(), "status".into(), status]);
        }
        for sm in &self.metrics.per_stage {
            for r in &sm.reports {
                t.push(vec!["metric".into(), sm.stage.clone(), r.name.clone(), num(r.value)]);
            }
        }
        for d in &self.deltas {
            let Some(p) = &d.profile else {
                t.push(vec!["delta".into(), d.pair.clone(), "status".into(), "absent".into()]);
                continue;
            };
            t.push(vec!["delta_stats".into(), d.pair.clone(), "mean".into(), num(p.stats.mean)]);
            t.push(vec!["delta_stats".into(), d.pair.clone(), "median".into(), num(p.stats.median)]);
            t.push(vec!["delta_stats".into(), d.pair.clone(), "max".into(), num(p.stats.max)]);
            for (c, a) in d.class_aggregates.iter().flatten() {
                t.push(vec!["class_norm".into(), d.pair.clone(), c.to_string(), num(a.norm)]);
            }
            for e in d.top_k.iter().flatten() {
                t.push(vec!["top_k".into(), d.pair.clone(), e.name.clone(), num(e.norm)]);
            }
        }
        match self.correlation.report.as_ref().and_then(|r| r.r) {
            Some(r) => t.push(vec!["correlation".into(), self.correlation.y_pair.clone(), "r".into(), num(r)]),
            None => t.push(vec!["correlation".into(), self.correlation.y_pair.clone(), "r".into(), String::new()]),
        }
        t
    }
}

fn svg_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Horizontal bar chart.
pub fn svg_bar_chart(title: &str, bars: &[(String, f64)]) -> String {
    let row = 18.0;
    let (left, width) = (320.0, 360.0);
    let height = 40.0 + row * bars.len() as f64;
    let max = bars.iter().map(|b| b.1).fold(0.0f64, f64::max).max(f64::MIN_POSITIVE);
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{height}\" font-family=\"monospace\" font-size=\"11\">\n<text x=\"8\" y=\"16\">{}</text>\n",
        left + width + 90.0,
        svg_escape(title)
    );
    for (i, (label, v)) in bars.iter().enumerate() {
        let y = 28.0 + row * i as f64;
        let w = width * v / max;
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text><rect x=\"{left}\" y=\"{y}\" width=\"{w:.2}\" height=\"{}\" fill=\"#4a7ab0\"/><text x=\"{}\" y=\"{}\">{}</text>\n",
            left - 6.0,
            y + 12.0,
            svg_escape(label),
            row - 4.0,
            left + w + 4.0,
            y + 12.0,
            num(*v)
        ));
    }
    out.push_str("</svg>\n");
    out
}

/// Scatter plot of correlation points.
pub fn svg_scatter(title: &str, report: &CorrelationReport) -> String {
    let (size, pad) = (400.0, 40.0);
    let bounds = |f: fn(&crate::delta::CorrelationPoint) -> f64| {
        let lo = report.points.iter().map(f).fold(f64::INFINITY, f64::min);
        let hi = report.points.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        if lo.is_finite() && hi > lo { (lo, hi) } else { (lo.min(0.0), lo.max(0.0) + 1.0) }
    };
    let (x0, x1) = bounds(|p| p.x);
    let (y0, y1) = bounds(|p| p.y);
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{w}\" font-family=\"monospace\" font-size=\"11\">\n<text x=\"8\" y=\"16\">{}</text>\n<text x=\"{pad}\" y=\"{}\">{} (x) vs {} (y), r = {}</text>\n",
        svg_escape(title),
        size + pad + 30.0,
        svg_escape(&report.x_label),
        svg_escape(&report.y_label),
        report.r.map(num).unwrap_or_else(|| "undefined".into()),
        w = size + 2.0 * pad + 20.0,
    );
    out.push_str(&format!(
        "<rect x=\"{pad}\" y=\"{pad}\" width=\"{size}\" height=\"{size}\" fill=\"none\" stroke=\"#888\"/>\n"
    ));
    for p in &report.points {
        let cx = pad + size * (p.x - x0) / (x1 - x0);
        let cy = pad + size * (1.0 - (p.y - y0) / (y1 - y0));
        out.push_str(&format!(
            "<circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"3\" fill=\"#b04a4a\"><title>{}</title></circle>\n",
            svg_escape(&p.name)
        ));
    }
    out.push_str("</svg>\n");
    out
}

/// Chart files for an experiment report: top-k bars per pair, class norms
/// per pair, and the correlation scatter. Returns the written file names.
pub fn write_charts(report: &ExperimentReport, dir: &Path) -> Result<Vec<String>, ReportError> {
    let io = |e: std::io::Error| ReportError::Io(format!("{}: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(io)?;
    let mut written = Vec::new();
    let mut put = |name: String, body: String| -> Result<(), ReportError> {
        fs::write(dir.join(&name), body).map_err(io)?;
        written.push(name);
        Ok(())
    };
    for d in &report.deltas {
        let tag = format!("{}_{}", d.from, d.to);
        if let Some(top) = &d.top_k {
            let bars = top.iter().map(|e| (e.name.clone(), e.norm)).collect::<Vec<_>>();
            put(format!("top_k_{tag}.svg"), svg_bar_chart(&format!("Top changes {}", d.pair), &bars))?;
        }
        if let Some(classes) = &d.class_aggregates {
            let bars = classes.iter().map(|(c, a)| (c.to_string(), a.norm)).collect::<Vec<_>>();
            put(format!("classes_{tag}.svg"), svg_bar_chart(&format!("Change by layer type {}", d.pair), &bars))?;
        }
    }
    if let Some(r) = &report.correlation.report {
        put("correlation.svg".into(), svg_scatter("Per-component change correlation", r))?;
    }
    Ok(written)
}
