//! Metric tables and config hashing.
//!
//! A metric report is a CSV file with the header
//! `metric,value,n_items,config_hash`, one row per metric. Sweeps add the
//! run label and the swept settings in front of those columns.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::Score;

/// First 16 hex digits of the SHA-256 of `value`'s JSON encoding.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let json = serde_json::to_vec(value).map_err(|e| Error::Config(format!("config is not serializable: {e}")))?;
    let digest = Sha256::digest(&json);
    Ok(digest.iter().take(8).map(|b| format!("{b:02x}")).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    #[serde(with = "nan_as_empty")]
    pub value: f64,
    pub n_items: usize,
    pub config_hash: String,
}

impl MetricRow {
    pub fn new(metric: &str, value: f64, n_items: usize, config_hash: &str) -> Self {
        MetricRow {
            metric: metric.to_string(),
            value,
            n_items,
            config_hash: config_hash.to_string(),
        }
    }

    pub fn from_score(metric: &str, score: Score, config_hash: &str) -> Self {
        Self::new(metric, score.value, score.n_items, config_hash)
    }
}

/// One row of a sweep table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub run: String,
    pub task: String,
    pub mode: String,
    pub fusion: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub seed: u64,
    pub metric: String,
    #[serde(with = "nan_as_empty")]
    pub value: f64,
    pub n_items: usize,
    pub config_hash: String,
}

/// Undefined scores are NaN in memory and an empty field on disk.
mod nan_as_empty {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_nan() {
            s.serialize_none()
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_error(path, e))).collect()
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, format!("{other:?}")),
    }
}

pub fn write_metrics(path: &Path, rows: &[MetricRow]) -> Result<()> {
    write_rows(path, rows)
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRow>> {
    read_rows(path)
}

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<()> {
    write_rows(path, rows)
}

pub fn read_sweep(path: &Path) -> Result<Vec<SweepRow>> {
    read_rows(path)
}

/// Fixed-width rendering of a metric table for the terminal.
pub fn render_metrics(rows: &[MetricRow]) -> String {
    let mut out = format!("{:<16} {:>14} {:>8}  {}\n", "metric", "value", "n_items", "config_hash");
    for r in rows {
        out.push_str(&format!(
            "{:<16} {:>14.6} {:>8}  {}\n",
            r.metric, r.value, r.n_items, r.config_hash
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Cfg {
        lr: f64,
        k: usize,
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = config_hash(&Cfg { lr: 0.1, k: 2 }).unwrap();
        assert_eq!(a.len(), 16);
        assert!(a.chars().all(|c| c.is_ascii_hexdigit()));
        assert_eq!(a, config_hash(&Cfg { lr: 0.1, k: 2 }).unwrap());
        assert_ne!(a, config_hash(&Cfg { lr: 0.1, k: 1 }).unwrap());
    }

    #[test]
    fn hash_matches_sha256_prefix() {
        // sha256("{}") = 44136fa355b3678a1146ad16f7e8649e94fb4fc21fe77e8310c060f61caaff8a
        #[derive(Serialize)]
        struct Empty {}
        assert_eq!(config_hash(&Empty {}).unwrap(), "44136fa355b3678a");
    }

    #[test]
    fn metrics_round_trip() {
        let dir = std::env::temp_dir().join(format!("multidecode-report-{}", std::process::id()));
        let path = dir.join("metrics.csv");
        let rows = vec![
            MetricRow::new("mse_y1", 2.5, 1000, "abcd"),
            MetricRow::new("mse_y2", 0.125, 1000, "abcd"),
        ];
        write_metrics(&path, &rows).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("metric,value,n_items,config_hash\n"));
        assert_eq!(read_metrics(&path).unwrap(), rows);
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn undefined_scores_survive_csv_and_json() {
        let row = MetricRow::new("consistency", f64::NAN, 0, "ab");
        let json = serde_json::to_string(&row).unwrap();
        assert!(json.contains("\"value\":null"));
        let back: MetricRow = serde_json::from_str(&json).unwrap();
        assert!(back.value.is_nan());

        let dir = std::env::temp_dir().join(format!("multidecode-report-nan-{}", std::process::id()));
        let path = dir.join("metrics.csv");
        write_metrics(&path, &[row]).unwrap();
        assert_eq!(
            fs::read_to_string(&path).unwrap(),
            "metric,value,n_items,config_hash\nconsistency,,0,ab\n"
        );
        assert!(read_metrics(&path).unwrap()[0].value.is_nan());
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn missing_report_is_io_error() {
        let err = read_metrics(Path::new("/nonexistent/metrics.csv")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
