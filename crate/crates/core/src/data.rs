use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Targets: real values for regression, class indices for classification.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Labels {
    Real(Vec<f64>),
    Classes { labels: Vec<usize>, n_classes: usize },
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Real(v) => v.len(),
            Labels::Classes { labels, .. } => labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of model outputs: 1 for regression, K for K classes.
    pub fn n_outputs(&self) -> usize {
        match self {
            Labels::Real(_) => 1,
            Labels::Classes { n_classes, .. } => *n_classes,
        }
    }

    pub fn select(&self, idx: &[usize]) -> Labels {
        match self {
            Labels::Real(v) => Labels::Real(idx.iter().map(|&i| v[i]).collect()),
            Labels::Classes { labels, n_classes } => Labels::Classes {
                labels: idx.iter().map(|&i| labels[i]).collect(),
                n_classes: *n_classes,
            },
        }
    }
}

/// Ground-truth value of the unmeasured variable, when a simulation knows it.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum UvOracle {
    Numeric(Vec<f64>),
    Categorical(Vec<usize>),
}

impl UvOracle {
    pub fn len(&self) -> usize {
        match self {
            UvOracle::Numeric(v) => v.len(),
            UvOracle::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> UvOracle {
        match self {
            UvOracle::Numeric(v) => UvOracle::Numeric(idx.iter().map(|&i| v[i]).collect()),
            UvOracle::Categorical(v) => UvOracle::Categorical(idx.iter().map(|&i| v[i]).collect()),
        }
    }
}

/// Per-example replicate embeddings of annotations: `[example][replicate][dim]`.
pub type Embeddings = Vec<Vec<Vec<f64>>>;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Labels,
    pub uv_oracle: Option<UvOracle>,
    pub uv_embeddings: Option<Embeddings>,
    /// Group tags (e.g. minority = 1), only used for reporting.
    pub source_flags: Option<Vec<u32>>,
}

impl Dataset {
    /// Builds a dataset without unmeasured-variable information and checks
    /// its invariants.
    pub fn new(features: Matrix, labels: Labels) -> Result<Self> {
        let ds = Dataset {
            features,
            labels,
            uv_oracle: None,
            uv_embeddings: None,
            source_flags: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn with_oracle(mut self, oracle: UvOracle) -> Result<Self> {
        self.uv_oracle = Some(oracle);
        self.validate()?;
        Ok(self)
    }

    pub fn with_embeddings(mut self, emb: Embeddings) -> Result<Self> {
        self.uv_embeddings = Some(emb);
        self.validate()?;
        Ok(self)
    }

    pub fn with_source_flags(mut self, flags: Vec<u32>) -> Result<Self> {
        self.source_flags = Some(flags);
        self.validate()?;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.features.rows()
    }

    pub fn d(&self) -> usize {
        self.features.cols()
    }

    pub fn is_classification(&self) -> bool {
        matches!(self.labels, Labels::Classes { .. })
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if n == 0 {
            return Err(Error::invalid("dataset", "no examples"));
        }
        if self.d() == 0 {
            return Err(Error::invalid("dataset", "feature dimension must be at least 1"));
        }
        if self.labels.len() != n {
            return Err(Error::DimensionMismatch {
                what: "labels",
                expected: n,
                actual: self.labels.len(),
            });
        }
        if let Labels::Classes { labels, n_classes } = &self.labels {
            if *n_classes < 2 {
                return Err(Error::invalid("labels", "need at least 2 classes"));
            }
            if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= *n_classes) {
                return Err(Error::invalid(
                    "labels",
                    format!("example {i} has class {y}, but there are {n_classes} classes"),
                ));
            }
        }
        if let Some(o) = &self.uv_oracle {
            if o.len() != n {
                return Err(Error::DimensionMismatch {
                    what: "uv oracle",
                    expected: n,
                    actual: o.len(),
                });
            }
        }
        if let Some(emb) = &self.uv_embeddings {
            if emb.len() != n {
                return Err(Error::DimensionMismatch {
                    what: "uv embeddings",
                    expected: n,
                    actual: emb.len(),
                });
            }
            let mut dim = None;
            for (i, reps) in emb.iter().enumerate() {
                if reps.is_empty() {
                    return Err(Error::invalid(
                        "uv embeddings",
                        format!("example {i} has no replicate"),
                    ));
                }
                for r in reps {
                    match dim {
                        None => dim = Some(r.len()),
                        Some(k) if k != r.len() => {
                            return Err(Error::DimensionMismatch {
                                what: "embedding dimension",
                                expected: k,
                                actual: r.len(),
                            })
                        }
                        _ => {}
                    }
                }
            }
        }
        if let Some(f) = &self.source_flags {
            if f.len() != n {
                return Err(Error::DimensionMismatch {
                    what: "source flags",
                    expected: n,
                    actual: f.len(),
                });
            }
        }
        Ok(())
    }

    /// Subset of examples, in the given order.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(idx),
            labels: self.labels.select(idx),
            uv_oracle: self.uv_oracle.as_ref().map(|o| o.select(idx)),
            uv_embeddings: self
                .uv_embeddings
                .as_ref()
                .map(|e| idx.iter().map(|&i| e[i].clone()).collect()),
            source_flags: self
                .source_flags
                .as_ref()
                .map(|f| idx.iter().map(|&i| f[i]).collect()),
        }
    }
}
