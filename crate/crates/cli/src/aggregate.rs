//! Cross-seed summary: one row per method, mean and standard error of each
//! seed's round-averaged metric.

use recourse_drift_core::metrics::mean_stderr;

use crate::archive::MetricsTable;

pub const AGGREGATE_METRICS: [&str; 6] = ["stba", "higher_standard", "tar", "ftr", "avg_recourse_cost", "jsd"];

/// Mean of the present values in a column; `None` when all are absent.
pub fn round_average(column: &[Option<f64>]) -> Option<f64> {
    let present: Vec<f64> = column.iter().flatten().copied().collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub method: String,
    pub seeds: usize,
    /// `(mean, stderr)` per entry of [`AGGREGATE_METRICS`], over the seeds
    /// where the metric was present at least once.
    pub cells: Vec<Option<(f64, f64)>>,
}

pub fn aggregate(method: &str, tables: &[MetricsTable]) -> AggregateRow {
    let cells = AGGREGATE_METRICS
        .iter()
        .map(|m| {
            let per_seed: Vec<f64> =
                tables.iter().filter_map(|t| t.column(m).and_then(|c| round_average(&c))).collect();
            mean_stderr(&per_seed)
        })
        .collect();
    AggregateRow { method: method.to_string(), seeds: tables.len(), cells }
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["method".to_string(), "seeds".to_string()];
    for m in AGGREGATE_METRICS {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_stderr"));
    }
    w.write_record(&header).expect("in-memory write");
    for r in rows {
        let mut record = vec![r.method.clone(), r.seeds.to_string()];
        for cell in &r.cells {
            match cell {
                Some((m, s)) => record.extend([m.to_string(), s.to_string()]),
                None => record.extend([String::new(), String::new()]),
            }
        }
        w.write_record(&record).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
}
