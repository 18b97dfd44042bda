//! Experiment configuration: one JSON document with a schema version.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use uvdro_core::datagen::{NoiseConvention, PrototypeImageConfig};
use uvdro_core::{Objective, RobustnessConfig, TrainConfig};

use crate::error::{Error, Result};
use crate::io::CsvSchema;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Two-feature regression whose first feature flips sign with `c`.
    MedicalSim,
    /// Image classification where some training images are rotated.
    ConfoundedImages,
    /// Binary classification on a mixture of two sites.
    Tabular,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::MedicalSim => "medical_sim",
            Task::ConfoundedImages => "confounded_images",
            Task::Tabular => "tabular",
        }
    }
}

/// Where the unmeasured-variable distances come from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UvSource {
    /// Ground truth `c` (0/1 metric if categorical, absolute difference if
    /// numeric).
    Oracle,
    /// Replicate annotation embeddings, mean cosine distance.
    Embeddings,
    /// No unmeasured-variable distance: `D_c = 0`.
    None,
    /// Oracle distances with a fraction of examples' values permuted.
    Shuffled { fraction: f64 },
    /// `c` redrawn from its posterior given `x` alone (medical task only).
    Posterior,
}

/// `L`, `alpha` and ridge. Per-objective overrides replace individual fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustnessSettings {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_lipschitz")]
    pub lipschitz: f64,
    #[serde(default)]
    pub ridge: f64,
}

fn default_alpha() -> f64 {
    0.2
}
fn default_lipschitz() -> f64 {
    1.0
}

impl Default for RobustnessSettings {
    fn default() -> Self {
        RobustnessSettings {
            alpha: default_alpha(),
            lipschitz: default_lipschitz(),
            ridge: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustnessOverride {
    pub alpha: Option<f64>,
    pub lipschitz: Option<f64>,
    pub ridge: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    /// Defaults per task when absent.
    pub learning_rate: Option<f64>,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_epsilon")]
    pub adagrad_epsilon: f64,
    #[serde(default)]
    pub convergence_tol: Option<f64>,
    #[serde(default)]
    pub transport_learning_rate: Option<f64>,
}

fn default_steps() -> usize {
    3000
}
fn default_epsilon() -> f64 {
    1e-10
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            learning_rate: None,
            steps: default_steps(),
            adagrad_epsilon: default_epsilon(),
            convergence_tol: None,
            transport_learning_rate: None,
        }
    }
}

/// How the two distance matrices are scaled before they are summed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistanceSettings {
    /// Divide each matrix by its mean off-diagonal entry first, so `L`
    /// means the same thing across tasks and feature scales.
    #[serde(default)]
    pub rescale: bool,
    #[serde(default = "one")]
    pub x_scale: f64,
    #[serde(default = "one")]
    pub c_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for DistanceSettings {
    fn default() -> Self {
        DistanceSettings {
            rescale: false,
            x_scale: 1.0,
            c_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MedicalSettings {
    #[serde(default)]
    pub convention: NoiseConvention,
}

/// Images come from a CSV of flattened pixels, or from the built-in
/// prototype generator when no path is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageSettings {
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default = "default_image_label")]
    pub label_column: String,
    /// Replicate embeddings aligned with the rows of `path`.
    #[serde(default)]
    pub embeddings_path: Option<PathBuf>,
    #[serde(default = "default_side")]
    pub side: usize,
    #[serde(default = "default_n_classes")]
    pub n_classes: usize,
    #[serde(default = "default_density")]
    pub density: f64,
    #[serde(default = "default_pixel_noise")]
    pub pixel_noise: f64,
    #[serde(default)]
    pub label_noise: f64,
    /// Seed of the class prototypes, shared by all replicate seeds.
    #[serde(default)]
    pub prototype_seed: u64,
    #[serde(default = "default_occlusion_prob")]
    pub occlusion_prob: f64,
    #[serde(default = "default_patch")]
    pub occlusion_patch_fraction: f64,
}

fn default_image_label() -> String {
    "label".into()
}
fn default_side() -> usize {
    8
}
fn default_n_classes() -> usize {
    10
}
fn default_density() -> f64 {
    0.3
}
fn default_pixel_noise() -> f64 {
    0.6
}
fn default_occlusion_prob() -> f64 {
    0.1
}
fn default_patch() -> f64 {
    0.25
}

impl Default for ImageSettings {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl ImageSettings {
    pub fn prototype_config(&self, n: usize) -> PrototypeImageConfig {
        PrototypeImageConfig {
            n,
            side: self.side,
            n_classes: self.n_classes,
            density: self.density,
            pixel_noise: self.pixel_noise,
            label_noise: self.label_noise,
            seed: self.prototype_seed,
        }
    }
}

/// Tabular data comes from a CSV whose unmeasured-variable column marks
/// the site, or from the built-in two-site generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabularSettings {
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub schema: Option<CsvSchema>,
    /// Value of the unmeasured-variable column that marks the minority site.
    #[serde(default)]
    pub minority_value: Option<String>,
    #[serde(default)]
    pub embeddings_path: Option<PathBuf>,
    #[serde(default = "default_tabular_d")]
    pub d: usize,
    #[serde(default)]
    pub task_seed: u64,
}

fn default_tabular_d() -> usize {
    27
}

impl Default for TabularSettings {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub task: Task,
    pub objectives: Vec<Objective>,
    #[serde(default)]
    pub robustness: RobustnessSettings,
    #[serde(default)]
    pub overrides: BTreeMap<Objective, RobustnessOverride>,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Minority fraction in training (images, tabular).
    #[serde(default)]
    pub alpha_star: Vec<f64>,
    /// Training flip probability (medical).
    #[serde(default)]
    pub q_train: Vec<f64>,
    /// Test-time flip probability (medical) or rotation probability (images).
    pub q_test: Option<f64>,
    #[serde(default = "default_uv_source")]
    pub uv_source: UvSource,
    /// Examples drawn for training; 80% train, 20% validation.
    #[serde(default = "default_n_train")]
    pub n_train: usize,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    #[serde(default)]
    pub distances: DistanceSettings,
    #[serde(default)]
    pub medical: Option<MedicalSettings>,
    #[serde(default)]
    pub images: Option<ImageSettings>,
    #[serde(default)]
    pub tabular: Option<TabularSettings>,
    /// Off by default: timings make otherwise identical reports differ.
    #[serde(default)]
    pub record_wall_time: bool,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_uv_source() -> UvSource {
    UvSource::Oracle
}
fn default_n_train() -> usize {
    1000
}
fn default_n_test() -> usize {
    2000
}
fn default_output_dir() -> PathBuf {
    "out".into()
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Canonical JSON: struct fields in declaration order, maps sorted.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON. The output
    /// directory is excluded, so moving a run does not change its hash.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        let digest = Sha256::digest(serde_json::to_vec(&canonical).expect("config serializes"));
        hex::encode(&digest[..8])
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.objectives.is_empty() {
            return bad("objectives must not be empty".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        for o in &self.objectives {
            self.robustness_for(*o)?;
        }
        self.train_config(0)?;
        if self.n_train < 5 || self.n_test == 0 {
            return bad("n_train must be at least 5 and n_test positive".into());
        }
        let probs = |name: &str, v: &[f64]| -> Result<()> {
            match v.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                Some(p) => bad(format!("{name} value {p} is not in [0, 1]")),
                None => Ok(()),
            }
        };
        match self.task {
            Task::MedicalSim => {
                if self.q_train.is_empty() {
                    return bad("medical_sim needs a nonempty q_train grid".into());
                }
                probs("q_train", &self.q_train)?;
            }
            Task::ConfoundedImages | Task::Tabular => {
                if self.alpha_star.is_empty() {
                    return bad(format!("{} needs a nonempty alpha_star grid", self.task.name()));
                }
                if let Some(a) = self.alpha_star.iter().find(|a| !(**a > 0.0 && **a <= 1.0)) {
                    return bad(format!("alpha_star value {a} is not in (0, 1]"));
                }
            }
        }
        if let Some(q) = self.q_test {
            probs("q_test", &[q])?;
        }
        match self.uv_source {
            UvSource::Shuffled { fraction } => probs("shuffle fraction", &[fraction])?,
            UvSource::Posterior if self.task != Task::MedicalSim => {
                return bad("uv_source posterior is only defined for medical_sim".into())
            }
            UvSource::Embeddings if self.embeddings_path().is_none() => {
                return bad("uv_source embeddings needs an embeddings_path".into())
            }
            _ => {}
        }
        let d = &self.distances;
        if !(d.x_scale >= 0.0 && d.c_scale >= 0.0 && d.x_scale.is_finite() && d.c_scale.is_finite()) {
            return bad("distance scales must be finite and nonnegative".into());
        }
        if let Some(t) = &self.tabular {
            if t.path.is_some() && (t.schema.is_none() || t.minority_value.is_none()) {
                return bad("tabular.path needs schema and minority_value".into());
            }
        }
        Ok(())
    }

    /// Paths the run will read; they must exist by then.
    pub fn referenced_paths(&self) -> Vec<&Path> {
        let mut out = Vec::new();
        if let Some(i) = &self.images {
            out.extend(i.path.as_deref());
            out.extend(i.embeddings_path.as_deref());
        }
        if let Some(t) = &self.tabular {
            out.extend(t.path.as_deref());
            out.extend(t.embeddings_path.as_deref());
        }
        out
    }

    pub fn check_paths(&self) -> Result<()> {
        match self.referenced_paths().into_iter().find(|p| !p.exists()) {
            Some(p) => Err(Error::Config(format!("{} does not exist", p.display()))),
            None => Ok(()),
        }
    }

    pub fn embeddings_path(&self) -> Option<&Path> {
        match self.task {
            Task::ConfoundedImages => self.images.as_ref()?.embeddings_path.as_deref(),
            Task::Tabular => self.tabular.as_ref()?.embeddings_path.as_deref(),
            Task::MedicalSim => None,
        }
    }

    pub fn robustness_for(&self, objective: Objective) -> Result<RobustnessConfig> {
        let base = self.robustness;
        let o = self.overrides.get(&objective).copied().unwrap_or_default();
        RobustnessConfig::new(
            objective,
            o.alpha.unwrap_or(base.alpha),
            o.lipschitz.unwrap_or(base.lipschitz),
            o.ridge.unwrap_or(base.ridge),
        )
        .map_err(|e| Error::Config(format!("{}: {e}", objective.name())))
    }

    /// Per-task default learning rates: 1e-4 medical, 1e-3 images, 5e-3
    /// tabular.
    pub fn train_config(&self, seed: u64) -> Result<TrainConfig> {
        let t = &self.train;
        let default_lr = match self.task {
            Task::MedicalSim => 1e-4,
            Task::ConfoundedImages => 1e-3,
            Task::Tabular => 5e-3,
        };
        let cfg = TrainConfig {
            learning_rate: t.learning_rate.unwrap_or(default_lr),
            steps: t.steps,
            adagrad_epsilon: t.adagrad_epsilon,
            seed,
            convergence_tol: t.convergence_tol,
            transport_learning_rate: t.transport_learning_rate,
        };
        cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn q_test_or_default(&self) -> f64 {
        self.q_test.unwrap_or(match self.task {
            Task::MedicalSim => 0.8,
            Task::ConfoundedImages | Task::Tabular => 1.0,
        })
    }
}
