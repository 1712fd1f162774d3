//! Per-component L2 deltas between checkpoint pairs, and what is derived from
//! them: summary statistics, top-k rankings, per-class aggregation and
//! cross-profile correlation.
//!
//! Each tensor's sum of squares is accumulated sequentially in f64; tensors
//! may be processed in parallel but results are always merged in canonical
//! name order, so reports are bit-identical regardless of worker count.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats;
use crate::taxonomy::{LayerClass, LayerKey, Taxonomy};
use crate::tensor_store::{Checkpoint, TensorRecord};

#[derive(Debug, Error, PartialEq)]
pub enum DeltaError {
    #[error("checkpoint name sets differ: only in first {only_in_a:?}, only in second {only_in_b:?}")]
    NameMismatch {
        only_in_a: Vec<String>,
        only_in_b: Vec<String>,
    },
    #[error("tensor `{name}` has shape {a:?} in the first checkpoint and {b:?} in the second")]
    ShapeMismatch {
        name: String,
        a: Vec<usize>,
        b: Vec<usize>,
    },
    #[error("profile has no components")]
    EmptyProfile,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaStats {
    pub mean: f64,
    pub median: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaEntry {
    pub name: String,
    pub class: LayerClass,
    pub block: Option<usize>,
    pub norm: f64,
    /// ‖Δ‖ / ‖a‖, only when requested and ‖a‖ > 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relative: Option<f64>,
}

impl DeltaEntry {
    pub fn key(&self) -> LayerKey {
        LayerKey {
            raw_name: self.name.clone(),
            block_index: self.block,
            layer_class: self.class,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaProfile {
    pub pair_label: String,
    pub total_components: usize,
    pub stats: DeltaStats,
    pub entries: Vec<DeltaEntry>,
    /// Names left out under `intersect`; empty otherwise.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub excluded: Vec<String>,
}

impl DeltaProfile {
    /// Build a profile from precomputed entries, filling in the stats.
    pub fn from_entries(pair_label: impl Into<String>, entries: Vec<DeltaEntry>) -> Result<Self, DeltaError> {
        let norms: Vec<f64> = entries.iter().map(|e| e.norm).collect();
        let stats = summarize_norms(&norms)?;
        Ok(Self {
            pair_label: pair_label.into(),
            total_components: entries.len(),
            stats,
            entries,
            excluded: Vec::new(),
        })
    }

    pub fn norms(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.norm).collect()
    }

    pub fn get(&self, name: &str) -> Option<&DeltaEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

#[derive(Debug, Clone, Default)]
pub struct DeltaOptions {
    /// Analyze only the common name set instead of failing on a mismatch.
    pub intersect: bool,
    /// Add the ‖Δ‖/‖a‖ column.
    pub relative: bool,
    pub label: Option<String>,
    pub taxonomy: Option<Taxonomy>,
}

fn stage_label(ckpt: &Checkpoint, fallback: &str) -> String {
    ckpt.meta().get("stage").cloned().unwrap_or_else(|| fallback.to_string())
}

/// Default-option delta.
pub fn delta_l2(a: &Checkpoint, b: &Checkpoint) -> Result<DeltaProfile, DeltaError> {
    delta_l2_with(a, b, &DeltaOptions::default())
}

pub fn delta_l2_with(a: &Checkpoint, b: &Checkpoint, opts: &DeltaOptions) -> Result<DeltaProfile, DeltaError> {
    let names_a: BTreeSet<&str> = a.names().collect();
    let names_b: BTreeSet<&str> = b.names().collect();
    let only_in_a: Vec<String> = names_a.difference(&names_b).map(|s| s.to_string()).collect();
    let only_in_b: Vec<String> = names_b.difference(&names_a).map(|s| s.to_string()).collect();
    if !opts.intersect && (!only_in_a.is_empty() || !only_in_b.is_empty()) {
        return Err(DeltaError::NameMismatch { only_in_a, only_in_b });
    }
    let common: Vec<&str> = names_a.intersection(&names_b).copied().collect();
    for name in &common {
        let (ta, tb) = (a.get(name).unwrap(), b.get(name).unwrap());
        if ta.shape() != tb.shape() {
            return Err(DeltaError::ShapeMismatch {
                name: name.to_string(),
                a: ta.shape().to_vec(),
                b: tb.shape().to_vec(),
            });
        }
    }

    let default_taxonomy = Taxonomy::default();
    let taxonomy = opts.taxonomy.as_ref().unwrap_or(&default_taxonomy);
    let entries: Vec<DeltaEntry> = common
        .par_iter()
        .map(|name| {
            let (ta, tb) = (a.get(name).unwrap(), b.get(name).unwrap());
            let key = taxonomy.classify(name);
            let norm = tensor_delta_norm(ta, tb);
            let relative = if opts.relative {
                let base = tensor_norm(ta);
                (base > 0.0).then(|| norm / base)
            } else {
                None
            };
            DeltaEntry {
                name: key.raw_name,
                class: key.layer_class,
                block: key.block_index,
                norm,
                relative,
            }
        })
        .collect();

    let label = opts.label.clone().unwrap_or_else(|| {
        format!("{}→{}", stage_label(a, "a"), stage_label(b, "b"))
    });
    if entries.is_empty() {
        // nothing to summarize; keep the profile well-formed
        return Ok(DeltaProfile {
            pair_label: label,
            total_components: 0,
            stats: DeltaStats { mean: 0.0, median: 0.0, max: 0.0 },
            entries,
            excluded: only_in_a.into_iter().chain(only_in_b).collect(),
        });
    }
    let mut profile = DeltaProfile::from_entries(label, entries)?;
    profile.excluded = only_in_a.into_iter().chain(only_in_b).collect();
    profile.excluded.sort();
    Ok(profile)
}

/// sqrt(Σ (b − a)²) over widened values, summed in storage order.
pub fn tensor_delta_norm(a: &TensorRecord, b: &TensorRecord) -> f64 {
    let (va, vb) = (a.to_f64(), b.to_f64());
    let mut acc = 0.0f64;
    for (x, y) in va.iter().zip(&vb) {
        let d = y - x;
        acc += d * d;
    }
    acc.sqrt()
}

pub fn tensor_norm(t: &TensorRecord) -> f64 {
    t.to_f64().iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Per-row delta norms of a 2-D tensor (rows = first axis).
pub fn row_delta_norms(a: &TensorRecord, b: &TensorRecord) -> Vec<f64> {
    assert_eq!(a.shape(), b.shape());
    let rows = a.shape().first().copied().unwrap_or(1).max(1);
    let cols = a.len() / rows;
    let (va, vb) = (a.to_f64(), b.to_f64());
    (0..rows)
        .map(|r| {
            let span = r * cols..(r + 1) * cols;
            va[span.clone()]
                .iter()
                .zip(&vb[span])
                .map(|(x, y)| (y - x) * (y - x))
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

fn summarize_norms(norms: &[f64]) -> Result<DeltaStats, DeltaError> {
    Ok(DeltaStats {
        mean: stats::mean(norms).ok_or(DeltaError::EmptyProfile)?,
        median: stats::median(norms).ok_or(DeltaError::EmptyProfile)?,
        max: stats::max(norms).ok_or(DeltaError::EmptyProfile)?,
    })
}

pub fn summarize(profile: &DeltaProfile) -> Result<DeltaStats, DeltaError> {
    summarize_norms(&profile.norms())
}

/// Largest norms first; ties by ascending name.
pub fn top_k(profile: &DeltaProfile, k: usize) -> Vec<&DeltaEntry> {
    let mut sorted: Vec<&DeltaEntry> = profile.entries.iter().collect();
    sorted.sort_by(|x, y| y.norm.total_cmp(&x.norm).then_with(|| x.name.cmp(&y.name)));
    sorted.truncate(k);
    sorted
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassAggregate {
    /// sqrt of the summed squared component norms.
    pub norm: f64,
    pub count: usize,
    pub mean: f64,
}

pub fn aggregate_by_class(profile: &DeltaProfile) -> BTreeMap<LayerClass, ClassAggregate> {
    let mut acc: BTreeMap<LayerClass, (f64, f64, usize)> = BTreeMap::new();
    for e in &profile.entries {
        let slot = acc.entry(e.class).or_insert((0.0, 0.0, 0));
        slot.0 += e.norm * e.norm;
        slot.1 += e.norm;
        slot.2 += 1;
    }
    acc.into_iter()
        .map(|(class, (sq, sum, count))| {
            (
                class,
                ClassAggregate {
                    norm: sq.sqrt(),
                    count,
                    mean: sum / count as f64,
                },
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationPoint {
    pub name: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub x_label: String,
    pub y_label: String,
    /// `raw` or `log`.
    pub transform: String,
    /// `None` when undefined (fewer than two points or zero variance).
    pub r: Option<f64>,
    pub n: usize,
    pub points: Vec<CorrelationPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped: Vec<String>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CorrelateOptions {
    /// Correlate natural-log norms; components with a zero norm on either
    /// side are skipped.
    pub log: bool,
}

pub fn correlate(p1: &DeltaProfile, p2: &DeltaProfile) -> Result<CorrelationReport, DeltaError> {
    correlate_with(p1, p2, CorrelateOptions::default())
}

pub fn correlate_with(
    p1: &DeltaProfile,
    p2: &DeltaProfile,
    opts: CorrelateOptions,
) -> Result<CorrelationReport, DeltaError> {
    let names1: BTreeSet<&str> = p1.entries.iter().map(|e| e.name.as_str()).collect();
    let names2: BTreeSet<&str> = p2.entries.iter().map(|e| e.name.as_str()).collect();
    if names1 != names2 {
        return Err(DeltaError::NameMismatch {
            only_in_a: names1.difference(&names2).map(|s| s.to_string()).collect(),
            only_in_b: names2.difference(&names1).map(|s| s.to_string()).collect(),
        });
    }
    let lookup: BTreeMap<&str, f64> = p2.entries.iter().map(|e| (e.name.as_str(), e.norm)).collect();
    let mut pairs: Vec<(&str, f64, f64)> = p1
        .entries
        .iter()
        .map(|e| (e.name.as_str(), e.norm, lookup[e.name.as_str()]))
        .collect();
    pairs.sort_by(|a, b| a.0.cmp(b.0));

    let mut skipped = Vec::new();
    let points: Vec<CorrelationPoint> = pairs
        .into_iter()
        .filter_map(|(name, x, y)| {
            if opts.log {
                if x <= 0.0 || y <= 0.0 {
                    skipped.push(name.to_string());
                    return None;
                }
                Some(CorrelationPoint { name: name.to_string(), x: x.ln(), y: y.ln() })
            } else {
                Some(CorrelationPoint { name: name.to_string(), x, y })
            }
        })
        .collect();

    let xs: Vec<f64> = points.iter().map(|p| p.x).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.y).collect();
    let r = stats::pearson(&xs, &ys);
    let warning = match r {
        Some(_) => None,
        None if points.len() < 2 => Some(format!("correlation undefined: only {} paired components", points.len())),
        None => Some("correlation undefined: zero variance in at least one profile".to_string()),
    };
    Ok(CorrelationReport {
        x_label: p1.pair_label.clone(),
        y_label: p2.pair_label.clone(),
        transform: if opts.log { "log" } else { "raw" }.to_string(),
        r,
        n: points.len(),
        points,
        warning,
        skipped,
    })
}

/// Cosine similarity between the concatenated raw update directions
/// (mid − first) and (last − mid), in canonical name order. This is an
/// extension beyond the norm-based correlation.
pub fn delta_direction_cosine(
    first: &Checkpoint,
    mid: &Checkpoint,
    last: &Checkpoint,
) -> Result<Option<f64>, DeltaError> {
    // reuse the name/shape checks
    delta_l2(first, mid)?;
    delta_l2(mid, last)?;
    let mut u = Vec::new();
    let mut v = Vec::new();
    for name in first.names() {
        let a = first.get(name).unwrap().to_f64();
        let b = mid.get(name).unwrap().to_f64();
        let c = last.get(name).unwrap().to_f64();
        for i in 0..a.len() {
            u.push(b[i] - a[i]);
            v.push(c[i] - b[i]);
        }
    }
    Ok(stats::cosine(&u, &v))
}
