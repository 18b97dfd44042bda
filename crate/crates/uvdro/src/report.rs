//! Run records and their CSV / JSON-lines encodings.
//!
//! Column order is fixed and floats are written in shortest round-trip
//! form, so equal record sets always produce byte-identical files.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One trained model evaluated on its held-out test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub task: String,
    pub objective: String,
    pub alpha_star: Option<f64>,
    pub q: Option<f64>,
    pub seed: u64,
    pub accuracy: Option<f64>,
    pub log_loss: Option<f64>,
    pub mse: Option<f64>,
    pub relative_weight_x2: Option<f64>,
    pub objective_value: f64,
    /// Zero unless wall-time recording is enabled; timings break
    /// byte-identical reruns.
    pub wall_ms: u64,
    pub shuffle_fraction: Option<f64>,
    pub config_hash: String,
}

impl RunRecord {
    /// Grid coordinates that identify a record up to its seed.
    fn point_key(&self) -> (String, String, OrdF64, OrdF64, OrdF64) {
        (
            self.task.clone(),
            self.objective.clone(),
            OrdF64(self.shuffle_fraction),
            OrdF64(self.alpha_star),
            OrdF64(self.q),
        )
    }
}

/// Total order on optional floats, `None` first.
#[derive(Debug, Clone, Copy, PartialEq)]
struct OrdF64(Option<f64>);

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        match (self.0, other.0) {
            (Some(a), Some(b)) => a.total_cmp(&b),
            (a, b) => a.is_some().cmp(&b.is_some()),
        }
    }
}

/// Orders records by objective, then grid point, then seed. Stable, so
/// ties keep their incoming order.
pub fn sort_records(records: &mut [RunRecord]) {
    records.sort_by(|a, b| {
        let (ta, oa, fa, aa, qa) = a.point_key();
        let (tb, ob, fb, ab, qb) = b.point_key();
        (oa, ta, fa, aa, qa, a.seed).cmp(&(ob, tb, fb, ab, qb, b.seed))
    });
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    Jsonl,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Jsonl => "jsonl",
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub fn write_records(path: &Path, records: &[RunRecord], format: Format) -> Result<()> {
    let mut out = create(path)?;
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(out);
            for r in records {
                w.serialize(r).map_err(|e| Error::csv(path, e))?;
            }
            if records.is_empty() {
                w.write_record(CSV_COLUMNS).map_err(|e| Error::csv(path, e))?;
            }
            w.flush().map_err(|e| Error::io(path, e))
        }
        Format::Jsonl => {
            for r in records {
                let line = serde_json::to_string(r).expect("records serialize");
                writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
            }
            out.flush().map_err(|e| Error::io(path, e))
        }
    }
}

const CSV_COLUMNS: &[&str] = &[
    "task",
    "objective",
    "alpha_star",
    "q",
    "seed",
    "accuracy",
    "log_loss",
    "mse",
    "relative_weight_x2",
    "objective_value",
    "wall_ms",
    "shuffle_fraction",
    "config_hash",
];

pub fn read_records(path: &Path, format: Format) -> Result<Vec<RunRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    match format {
        Format::Csv => csv::Reader::from_reader(file)
            .deserialize()
            .map(|r| r.map_err(|e| Error::csv(path, e)))
            .collect(),
        Format::Jsonl => {
            let mut out = Vec::new();
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let r = serde_json::from_str(&line)
                    .map_err(|e| Error::parse(path, i as u64 + 1, e.to_string()))?;
                out.push(r);
            }
            Ok(out)
        }
    }
}

/// Guesses the format from a file extension; anything but `.jsonl` is CSV.
pub fn format_of(path: &Path) -> Format {
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl") => Format::Jsonl,
        _ => Format::Csv,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Some(Summary { mean, std })
    }
}

/// Per grid point statistics across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub task: String,
    pub objective: String,
    pub alpha_star: Option<f64>,
    pub q: Option<f64>,
    pub shuffle_fraction: Option<f64>,
    pub n_seeds: usize,
    pub accuracy_mean: Option<f64>,
    pub accuracy_std: Option<f64>,
    pub log_loss_mean: Option<f64>,
    pub log_loss_std: Option<f64>,
    pub mse_mean: Option<f64>,
    pub mse_std: Option<f64>,
    pub relative_weight_x2_mean: Option<f64>,
    pub relative_weight_x2_std: Option<f64>,
    pub objective_value_mean: f64,
    pub objective_value_std: f64,
}

pub fn aggregate(records: &[RunRecord]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<_, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        let (t, o, f, a, q) = r.point_key();
        groups.entry((o, t, f, a, q)).or_default().push(r);
    }
    groups
        .into_values()
        .map(|rs| {
            let first = rs[0];
            let stat = |get: fn(&RunRecord) -> Option<f64>| {
                let vals: Option<Vec<f64>> = rs.iter().map(|r| get(r)).collect();
                vals.and_then(|v| Summary::of(&v))
            };
            let acc = stat(|r| r.accuracy);
            let ll = stat(|r| r.log_loss);
            let mse = stat(|r| r.mse);
            let rw = stat(|r| r.relative_weight_x2);
            let obj = stat(|r| Some(r.objective_value)).expect("groups are nonempty");
            AggregateRow {
                task: first.task.clone(),
                objective: first.objective.clone(),
                alpha_star: first.alpha_star,
                q: first.q,
                shuffle_fraction: first.shuffle_fraction,
                n_seeds: rs.len(),
                accuracy_mean: acc.map(|s| s.mean),
                accuracy_std: acc.map(|s| s.std),
                log_loss_mean: ll.map(|s| s.mean),
                log_loss_std: ll.map(|s| s.std),
                mse_mean: mse.map(|s| s.mean),
                mse_std: mse.map(|s| s.std),
                relative_weight_x2_mean: rw.map(|s| s.mean),
                relative_weight_x2_std: rw.map(|s| s.std),
                objective_value_mean: obj.mean,
                objective_value_std: obj.std,
            }
        })
        .collect()
}

pub fn write_aggregate(path: &Path, rows: &[AggregateRow], format: Format) -> Result<()> {
    let mut out = create(path)?;
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(out);
            for r in rows {
                w.serialize(r).map_err(|e| Error::csv(path, e))?;
            }
            w.flush().map_err(|e| Error::io(path, e))
        }
        Format::Jsonl => {
            for r in rows {
                let line = serde_json::to_string(r).expect("rows serialize");
                writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
            }
            out.flush().map_err(|e| Error::io(path, e))
        }
    }
}

/// Writes `records.<ext>` and `aggregate.<ext>` into `dir`, sorted.
pub fn write_report(dir: &Path, records: &[RunRecord], format: Format) -> Result<ReportPaths> {
    let mut sorted = records.to_vec();
    sort_records(&mut sorted);
    let paths = ReportPaths {
        records: dir.join(format!("records.{}", format.extension())),
        aggregate: dir.join(format!("aggregate.{}", format.extension())),
    };
    write_records(&paths.records, &sorted, format)?;
    write_aggregate(&paths.aggregate, &aggregate(&sorted), format)?;
    Ok(paths)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportPaths {
    pub records: PathBuf,
    pub aggregate: PathBuf,
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn record(objective: &str, seed: u64, accuracy: f64) -> RunRecord {
        RunRecord {
            task: "confounded_images".into(),
            objective: objective.into(),
            alpha_star: Some(0.05),
            q: None,
            seed,
            accuracy: Some(accuracy),
            log_loss: Some(0.1 + accuracy / 3.0),
            mse: None,
            relative_weight_x2: None,
            objective_value: 1.0 / 3.0,
            wall_ms: 0,
            shuffle_fraction: None,
            config_hash: "ab12".into(),
        }
    }

    #[test]
    fn two_records_give_header_and_two_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        write_records(
            &path,
            &[record("erm", 0, 0.5), record("erm", 1, 0.6)],
            Format::Csv,
        )
        .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], CSV_COLUMNS.join(","));
        assert!(lines[0].starts_with(
            "task,objective,alpha_star,q,seed,accuracy,log_loss,mse,relative_weight_x2,objective_value,wall_ms"
        ));
    }

    #[test]
    fn empty_csv_still_has_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        write_records(&path, &[], Format::Csv).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap().trim(),
            CSV_COLUMNS.join(",")
        );
    }

    #[test]
    fn formats_round_trip_to_the_same_records() {
        let dir = tempfile::tempdir().unwrap();
        let mut recs = vec![record("uv_dro", 2, 0.1 + 0.2), record("erm", 0, 1e-17)];
        recs[1].mse = Some(f64::MAX);
        recs[1].shuffle_fraction = Some(0.05);
        for format in [Format::Csv, Format::Jsonl] {
            let path = dir.path().join(format!("r.{}", format.extension()));
            write_records(&path, &recs, format).unwrap();
            assert_eq!(read_records(&path, format_of(&path)).unwrap(), recs);
        }
    }

    #[test]
    fn aggregate_of_identical_records_has_zero_std() {
        let rows = aggregate(&[
            record("erm", 0, 0.5),
            record("erm", 1, 0.5),
            record("erm", 2, 0.5),
        ]);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].n_seeds, 3);
        assert_eq!(rows[0].accuracy_mean, Some(0.5));
        assert_eq!(rows[0].accuracy_std, Some(0.0));
        assert_eq!(rows[0].mse_mean, None);
    }

    #[test]
    fn aggregate_splits_grid_points() {
        let mut b = record("erm", 0, 0.2);
        b.alpha_star = Some(0.1);
        let rows = aggregate(&[record("erm", 0, 0.4), b, record("cvar_dro", 0, 0.3)]);
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].objective, "cvar_dro");
    }

    #[test]
    fn sorting_is_by_objective_then_point_then_seed() {
        let mut b = record("erm", 1, 0.0);
        b.alpha_star = Some(0.01);
        let mut recs = vec![
            record("uv_dro", 0, 0.0),
            record("erm", 2, 0.0),
            b,
            record("erm", 0, 0.0),
        ];
        sort_records(&mut recs);
        let keys: Vec<_> = recs
            .iter()
            .map(|r| (r.objective.as_str(), r.alpha_star, r.seed))
            .collect();
        assert_eq!(
            keys,
            [
                ("erm", Some(0.01), 1),
                ("erm", Some(0.05), 0),
                ("erm", Some(0.05), 2),
                ("uv_dro", Some(0.05), 0)
            ]
        );
    }

    #[test]
    fn unwritable_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, "x").unwrap();
        let err = write_report(&blocker.join("sub"), &[record("erm", 0, 0.5)], Format::Csv);
        assert!(matches!(err, Err(Error::Io { .. })));
    }
}
