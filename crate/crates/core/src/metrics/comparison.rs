use serde::{Deserialize, Serialize};

use super::{MetricError, MetricKind, MetricReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trend {
    Improved,
    Regressed,
    NoChange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub metric: String,
    pub kind: MetricKind,
    pub higher_is_better: bool,
    /// One value per stage, in stage order.
    pub values: Vec<f64>,
    /// One flag per adjacent stage pair.
    pub trends: Vec<Trend>,
    /// last / first, when first is non-zero.
    pub ratio: Option<f64>,
    pub monotone_improving: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub stages: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

/// One row per metric, one column per stage. Every stage must report the same
/// metric names in the same order.
pub fn stage_comparison(reports: &[(String, Vec<MetricReport>)]) -> Result<ComparisonTable, MetricError> {
    let stages: Vec<String> = reports.iter().map(|(s, _)| s.clone()).collect();
    let Some((_, first)) = reports.first() else {
        return Ok(ComparisonTable { stages, rows: Vec::new() });
    };
    let expected: Vec<String> = first.iter().map(|r| r.name.clone()).collect();
    for (stage, list) in reports {
        let found: Vec<String> = list.iter().map(|r| r.name.clone()).collect();
        if found != expected {
            return Err(MetricError::InconsistentMetrics {
                stage: stage.clone(),
                expected: expected.clone(),
                found,
            });
        }
    }

    let rows = first
        .iter()
        .enumerate()
        .map(|(i, head)| {
            let values: Vec<f64> = reports.iter().map(|(_, list)| list[i].value).collect();
            let hib = head.kind.higher_is_better();
            let trends: Vec<Trend> = values
                .windows(2)
                .map(|w| {
                    if w[1] == w[0] {
                        Trend::NoChange
                    } else if (w[1] > w[0]) == hib {
                        Trend::Improved
                    } else {
                        Trend::Regressed
                    }
                })
                .collect();
            let ratio = match (values.first(), values.last()) {
                (Some(&a), Some(&b)) if a != 0.0 => Some(b / a),
                _ => None,
            };
            ComparisonRow {
                metric: head.name.clone(),
                kind: head.kind,
                higher_is_better: hib,
                monotone_improving: !trends.is_empty() && trends.iter().all(|t| *t == Trend::Improved),
                values,
                trends,
                ratio,
            }
        })
        .collect();
    Ok(ComparisonTable { stages, rows })
}
