use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::eval::MetricsRow;
use super::grid::GridCell;
use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "run_id,seed,step,group,metric,value";
pub const AGGREGATE_HEADER: &str = "run_id,step,group,metric,mean,std,seeds";
pub const GRID_HEADER: &str = "method,b0,ratio,seed,agent1_value,social_welfare,revenue";

/// Group label of market-wide metrics.
const ALL_GROUPS: &str = "all";

/// The evaluation history of one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct RunHistory {
    pub run_id: String,
    pub seed: u64,
    pub rows: Vec<MetricsRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub run_id: String,
    pub seed: u64,
    pub step: u64,
    pub group: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub run_id: String,
    pub step: u64,
    pub group: String,
    pub metric: String,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single seed.
    pub std: f64,
    pub seeds: usize,
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T], header: &str) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    w.write_record(header.split(','))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_rows<T: DeserializeOwned>(path: &Path, header: &str) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let found: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if found.join(",") != header {
        return Err(Error::Schema(format!(
            "{}: header {:?} differs from {header:?}",
            path.display(),
            found.join(",")
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.deserialize().enumerate() {
        rows.push(rec.map_err(|e| Error::Parse {
            line: i as u64 + 2,
            column: String::new(),
            message: e.to_string(),
        })?);
    }
    Ok(rows)
}

pub fn metric_records(runs: &[RunHistory]) -> Vec<MetricRecord> {
    let mut out = Vec::new();
    for run in runs {
        for row in &run.rows {
            let mut push = |group: &str, metric: &str, value: f64| {
                out.push(MetricRecord {
                    run_id: run.run_id.clone(),
                    seed: run.seed,
                    step: row.step,
                    group: group.to_string(),
                    metric: metric.to_string(),
                    value,
                })
            };
            for (label, v) in row.labels.iter().zip(&row.norm_values) {
                push(label, "norm_value", *v);
            }
            push(ALL_GROUPS, "social_welfare", row.social_welfare);
            push(ALL_GROUPS, "revenue", row.revenue);
        }
    }
    out
}

pub fn write_metrics_csv(path: &Path, runs: &[RunHistory]) -> Result<()> {
    if runs.iter().all(|r| r.rows.is_empty()) {
        return Err(Error::domain("no metrics to report"));
    }
    write_rows(path, &metric_records(runs), METRICS_HEADER)
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricRecord>> {
    read_rows(path, METRICS_HEADER)
}

/// Mean and sample standard deviation over seeds of each
/// `(run_id, step, group, metric)`.
pub fn aggregate(records: &[MetricRecord]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(String, u64, String, String), Vec<f64>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.run_id.clone(), r.step, r.group.clone(), r.metric.clone()))
            .or_default()
            .push(r.value);
    }
    groups
        .into_iter()
        .map(|((run_id, step, group, metric), values)| {
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let std = if values.len() > 1 {
                (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            AggregateRow {
                run_id,
                step,
                group,
                metric,
                mean,
                std,
                seeds: values.len(),
            }
        })
        .collect()
}

pub fn write_aggregate_csv(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    write_rows(path, rows, AGGREGATE_HEADER)
}

pub fn write_grid_csv(path: &Path, cells: &[GridCell]) -> Result<()> {
    write_rows(path, cells, GRID_HEADER)
}

pub fn read_grid_csv(path: &Path) -> Result<Vec<GridCell>> {
    read_rows(path, GRID_HEADER)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(step: u64, a: f64, b: f64, revenue: f64) -> MetricsRow {
        MetricsRow {
            step,
            labels: vec!["CLICK".into(), "CONV".into()],
            norm_values: vec![a, b],
            raw_values: vec![a * 10.0, b * 10.0],
            social_welfare: a + b,
            revenue,
        }
    }

    fn runs() -> Vec<RunHistory> {
        (0..3)
            .map(|s| RunHistory {
                run_id: "mix".into(),
                seed: s,
                rows: vec![row(10, 0.1 * s as f64 + 0.2, 1.0 / 3.0, 1.0 + s as f64)],
            })
            .collect()
    }

    #[test]
    fn metrics_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        write_metrics_csv(&path, &runs()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), METRICS_HEADER);
        let back = read_metrics_csv(&path).unwrap();
        assert_eq!(back, metric_records(&runs()));
        let third = back.iter().find(|r| r.group == "CONV").unwrap();
        assert_eq!(format!("{:.8e}", third.value), format!("{:.8e}", 1.0 / 3.0));
    }

    #[test]
    fn aggregate_uses_sample_std() {
        let agg = aggregate(&metric_records(&runs()));
        let rev = agg.iter().find(|r| r.metric == "revenue").unwrap();
        assert_eq!(rev.seeds, 3);
        assert!((rev.mean - 2.0).abs() < 1e-12);
        assert!((rev.std - 1.0).abs() < 1e-12);

        let single = aggregate(&metric_records(&runs()[..1]));
        assert!(single.iter().all(|r| r.std == 0.0));
    }

    #[test]
    fn grid_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.csv");
        let cells = vec![GridCell {
            method: "mix-il:4".into(),
            b0: 0.25,
            ratio: 0.3,
            seed: 1,
            agent1_value: 12.345678912,
            social_welfare: 30.5,
            revenue: 7.0,
        }];
        write_grid_csv(&path, &cells).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), GRID_HEADER);
        assert_eq!(read_grid_csv(&path).unwrap(), cells);
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let err = write_metrics_csv(Path::new("/nonexistent-dir/x/m.csv"), &runs()).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn wrong_header_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "a,b\n1,2\n").unwrap();
        assert!(matches!(read_grid_csv(&path), Err(Error::Schema(_))));
    }
}
