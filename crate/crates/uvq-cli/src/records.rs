//! Experiment records: the versioned `records.csv` format and the run
//! manifest.  The CSV column order is fixed; `wall_ms` is the only
//! nondeterministic column, everything else is byte-reproducible from the
//! configuration file and master seed.

use std::fs;
use std::path::Path;

use crate::config::{CfgResult, ConfigError};

pub const RECORDS_SCHEMA_LINE: &str = "# uvq records schema v1";
pub const RECORDS_HEADER: &str = "experiment,n,metric,value,stderr,trials,wall_ms";

/// One measured quantity of one experiment at one block length.
#[derive(Clone, Debug)]
pub struct ExperimentRecord {
    pub experiment: String,
    pub n: u64,
    pub metric: String,
    pub value: f64,
    /// `None` renders as an empty field: the metric carries no standard
    /// error (an exact quantity, a quantile, or a count).
    pub stderr: Option<f64>,
    pub trials: u64,
    pub wall_ms: u64,
}

impl ExperimentRecord {
    fn to_csv(&self) -> String {
        debug_assert!(
            !self.experiment.contains(',') && !self.metric.contains(','),
            "record fields must not contain commas"
        );
        format!(
            "{},{},{},{},{},{},{}",
            self.experiment,
            self.n,
            self.metric,
            self.value,
            self.stderr.map(|s| s.to_string()).unwrap_or_default(),
            self.trials,
            self.wall_ms
        )
    }
}

pub fn write_records(path: &Path, records: &[ExperimentRecord]) -> CfgResult<()> {
    let mut out = String::new();
    out.push_str(RECORDS_SCHEMA_LINE);
    out.push('\n');
    out.push_str(RECORDS_HEADER);
    out.push('\n');
    for record in records {
        if !record.value.is_finite() {
            return Err(ConfigError::new(
                "records",
                format!(
                    "{} `{}` at n = {} is not finite",
                    record.experiment, record.metric, record.n
                ),
            ));
        }
        out.push_str(&record.to_csv());
        out.push('\n');
    }
    fs::write(path, out)
        .map_err(|e| ConfigError::new("records", format!("cannot write `{}`: {e}", path.display())))
}

pub fn read_records(path: &Path) -> CfgResult<Vec<ExperimentRecord>> {
    let text = fs::read_to_string(path)
        .map_err(|e| ConfigError::new("records", format!("cannot read `{}`: {e}", path.display())))?;
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    let (_, header) = lines.next().ok_or_else(|| {
        ConfigError::new("records", format!("`{}` has no header row", path.display()))
    })?;
    if header.trim() != RECORDS_HEADER {
        return Err(ConfigError::new(
            "records",
            format!("unexpected header `{}` (expected `{RECORDS_HEADER}`)", header.trim()),
        ));
    }
    let mut records = Vec::new();
    for (index, line) in lines {
        let row = index + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(ConfigError::new(
                format!("records row {row}"),
                format!("{} fields, expected 7", fields.len()),
            ));
        }
        let field_u64 = |what: &str, s: &str| -> CfgResult<u64> {
            s.parse::<u64>().map_err(|_| {
                ConfigError::new(
                    format!("records row {row}"),
                    format!("{what} `{s}` is not an unsigned integer"),
                )
            })
        };
        let field_f64 = |what: &str, s: &str| -> CfgResult<f64> {
            s.parse::<f64>().map_err(|_| {
                ConfigError::new(
                    format!("records row {row}"),
                    format!("{what} `{s}` is not a number"),
                )
            })
        };
        records.push(ExperimentRecord {
            experiment: fields[0].to_string(),
            n: field_u64("n", fields[1])?,
            metric: fields[2].to_string(),
            value: field_f64("value", fields[3])?,
            stderr: if fields[4].is_empty() {
                None
            } else {
                Some(field_f64("stderr", fields[4])?)
            },
            trials: field_u64("trials", fields[5])?,
            wall_ms: field_u64("wall_ms", fields[6])?,
        });
    }
    Ok(records)
}

/// Write the run manifest: ordered `key = value` lines.
pub fn write_manifest(path: &Path, entries: &[(String, String)]) -> CfgResult<()> {
    let mut out = String::new();
    for (key, value) in entries {
        out.push_str(key);
        out.push_str(" = ");
        out.push_str(value);
        out.push('\n');
    }
    fs::write(path, out)
        .map_err(|e| ConfigError::new("manifest", format!("cannot write `{}`: {e}", path.display())))
}

/// Mean, sample standard error (`None` below two values), and count.
pub fn summarize(values: &[f64]) -> (f64, Option<f64>, usize) {
    let count = values.len();
    if count == 0 {
        return (f64::NAN, None, 0);
    }
    let mean = values.iter().sum::<f64>() / count as f64;
    if count < 2 {
        return (mean, None, count);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count as f64 - 1.0);
    (mean, Some((var / count as f64).sqrt()), count)
}

/// Nearest-rank upper quantile of an unsorted sample.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&q) && !values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((sorted.len() as f64) * q).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}
