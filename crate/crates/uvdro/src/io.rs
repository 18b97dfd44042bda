//! CSV formats: labelled feature tables, replicate embeddings of annotations,
//! and the writer used by `generate`.
//!
//! Line numbers in errors count the header as line 1.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};
use uvdro_core::data::Embeddings;
use uvdro_core::{Dataset, Labels, Matrix, UvOracle};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    #[default]
    Classes,
    Real,
}

/// Which columns of a CSV file hold what.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    /// Feature columns in order. Empty means every column except the label
    /// and unmeasured-variable columns.
    #[serde(default)]
    pub feature_columns: Vec<String>,
    pub label_column: String,
    #[serde(default)]
    pub label_kind: LabelKind,
    /// Optional ground-truth unmeasured variable; numeric if every cell
    /// parses as a number, categorical otherwise.
    #[serde(default)]
    pub uv_column: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedDataset {
    pub dataset: Dataset,
    /// Class names by index, in order of first appearance.
    pub class_names: Option<Vec<String>>,
    /// Category names of a categorical unmeasured variable, likewise.
    pub uv_names: Option<Vec<String>>,
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

/// Maps strings to contiguous indices in order of first appearance.
#[derive(Default)]
struct Interner {
    index: HashMap<String, usize>,
    names: Vec<String>,
}

impl Interner {
    fn intern(&mut self, s: &str) -> usize {
        if let Some(&i) = self.index.get(s) {
            return i;
        }
        self.names.push(s.to_owned());
        self.index.insert(s.to_owned(), self.names.len() - 1);
        self.names.len() - 1
    }
}

pub fn load_csv_dataset(path: &Path, schema: &CsvSchema) -> Result<LoadedDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(open(path)?);
    let header = reader.headers().map_err(|e| Error::csv(path, e))?.clone();
    let column = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::parse(path, 1, format!("missing column `{name}`")))
    };
    let label_col = column(&schema.label_column)?;
    let uv_col = schema.uv_column.as_deref().map(column).transpose()?;
    let feature_cols: Vec<usize> = if schema.feature_columns.is_empty() {
        (0..header.len())
            .filter(|&c| c != label_col && Some(c) != uv_col)
            .collect()
    } else {
        schema
            .feature_columns
            .iter()
            .map(|f| column(f))
            .collect::<Result<_>>()?
    };
    if feature_cols.is_empty() {
        return Err(Error::parse(path, 1, "no feature columns"));
    }

    let mut x = Vec::new();
    let mut real_labels = Vec::new();
    let mut classes = Interner::default();
    let mut class_labels = Vec::new();
    let mut uv_cells = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::csv(path, e))?;
        let line = line_of(&record);
        if record.len() != header.len() {
            return Err(Error::parse(
                path,
                line,
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        for &c in &feature_cols {
            let cell = &record[c];
            let v: f64 = cell.parse().map_err(|_| {
                Error::parse(
                    path,
                    line,
                    format!("column `{}`: `{cell}` is not a number", &header[c]),
                )
            })?;
            x.push(v);
        }
        let label = &record[label_col];
        match schema.label_kind {
            LabelKind::Real => real_labels.push(
                label
                    .parse::<f64>()
                    .map_err(|_| Error::parse(path, line, format!("label `{label}` is not a number")))?,
            ),
            LabelKind::Classes => class_labels.push(classes.intern(label)),
        }
        if let Some(c) = uv_col {
            uv_cells.push(record[c].to_owned());
        }
    }
    let n = x.len() / feature_cols.len();
    if n == 0 {
        return Err(Error::parse(path, 2, "no data rows"));
    }
    let features = Matrix::from_vec(n, feature_cols.len(), x)?;
    let (labels, class_names) = match schema.label_kind {
        LabelKind::Real => (Labels::Real(real_labels), None),
        LabelKind::Classes => (
            Labels::Classes {
                labels: class_labels,
                n_classes: classes.names.len().max(2),
            },
            Some(classes.names),
        ),
    };
    let mut dataset = Dataset::new(features, labels)?;
    let mut uv_names = None;
    if uv_col.is_some() {
        let numeric: Option<Vec<f64>> = uv_cells.iter().map(|c| c.parse().ok()).collect();
        let oracle = match numeric {
            Some(v) => UvOracle::Numeric(v),
            None => {
                let mut names = Interner::default();
                let ids = uv_cells.iter().map(|c| names.intern(c)).collect();
                uv_names = Some(names.names);
                UvOracle::Categorical(ids)
            }
        };
        dataset = dataset.with_oracle(oracle)?;
    }
    Ok(LoadedDataset {
        dataset,
        class_names,
        uv_names,
    })
}

/// Reads `example_id,replicate_id,v1,...,vk` rows (with a header) into
/// per-example replicate lists for a dataset of `n` examples. Replicates are
/// ordered by id, so row order in the file does not matter.
pub fn load_embeddings(path: &Path, n: usize) -> Result<Embeddings> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(open(path)?);
    let mut grouped: Vec<BTreeMap<u64, Vec<f64>>> = vec![BTreeMap::new(); n];
    let mut dim = None;
    for record in reader.records() {
        let record = record.map_err(|e| Error::csv(path, e))?;
        let line = line_of(&record);
        if record.len() < 3 {
            return Err(Error::parse(
                path,
                line,
                "need example_id, replicate_id and at least one value",
            ));
        }
        let example: usize = record[0]
            .parse()
            .map_err(|_| Error::parse(path, line, format!("bad example_id `{}`", &record[0])))?;
        let replicate: u64 = record[1]
            .parse()
            .map_err(|_| Error::parse(path, line, format!("bad replicate_id `{}`", &record[1])))?;
        if example >= n {
            return Err(Error::parse(
                path,
                line,
                format!("unknown example_id {example} (dataset has {n} examples)"),
            ));
        }
        let values: Vec<f64> = record
            .iter()
            .skip(2)
            .map(|c| {
                c.parse()
                    .map_err(|_| Error::parse(path, line, format!("`{c}` is not a number")))
            })
            .collect::<Result<_>>()?;
        match dim {
            None => dim = Some(values.len()),
            Some(k) if k != values.len() => {
                return Err(Error::parse(
                    path,
                    line,
                    format!("embedding has {} values, earlier rows have {k}", values.len()),
                ))
            }
            _ => {}
        }
        if grouped[example].insert(replicate, values).is_some() {
            return Err(Error::parse(
                path,
                line,
                format!("duplicate replicate {replicate} for example {example}"),
            ));
        }
    }
    if let Some(missing) = grouped.iter().position(|g| g.is_empty()) {
        return Err(Error::parse(
            path,
            0,
            format!("example {missing} has no embedding"),
        ));
    }
    Ok(grouped.into_iter().map(|g| g.into_values().collect()).collect())
}

/// Writes `x0..x{d-1},label[,uv]`. Class labels are written as indices.
pub fn write_dataset_csv(path: &Path, data: &Dataset) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let mut header: Vec<String> = (0..data.d()).map(|j| format!("x{j}")).collect();
    header.push("label".into());
    if data.uv_oracle.is_some() {
        header.push("uv".into());
    }
    w.write_record(&header).map_err(|e| Error::csv(path, e))?;
    for i in 0..data.n() {
        let mut row: Vec<String> = data.features.row(i).iter().map(|v| v.to_string()).collect();
        row.push(match &data.labels {
            Labels::Real(y) => y[i].to_string(),
            Labels::Classes { labels, .. } => labels[i].to_string(),
        });
        match &data.uv_oracle {
            Some(UvOracle::Numeric(v)) => row.push(v[i].to_string()),
            Some(UvOracle::Categorical(v)) => row.push(format!("g{}", v[i])),
            None => {}
        }
        w.write_record(&row).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
