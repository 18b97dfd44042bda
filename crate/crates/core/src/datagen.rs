//! Seeded generators for the simulated experiments: the two-feature medical
//! simulation, rotation / occlusion confounds on image vectors, synthetic
//! prototype images, a binary tabular task, and subpopulation mixing.
//!
//! Every generator is a pure function of its config; the same seed gives a
//! bit-identical dataset.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{Dataset, Labels, UvOracle};
use crate::error::{Error, Result};
use crate::math;
use crate::matrix::Matrix;
use crate::rng::{self, SeededRng};

/// How the second argument of `N(mu, s)` is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum NoiseConvention {
    #[default]
    Variance,
    StdDev,
}

impl NoiseConvention {
    pub fn std_dev(self, param: f64) -> f64 {
        match self {
            NoiseConvention::Variance => math::sqrt(param),
            NoiseConvention::StdDev => param,
        }
    }
}

/// `y ~ N(0, 2)`, `c = 1 - 2 Bernoulli(q)`, `x1 = c y`, `x2 = y + e` with
/// `e ~ N(0, 4)`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MedicalSimConfig {
    pub n: usize,
    /// Probability that the reported symptom is flipped (`c = -1`).
    pub q: f64,
    pub seed: u64,
    #[cfg_attr(feature = "serde", serde(default))]
    pub convention: NoiseConvention,
}

pub const MEDICAL_LABEL_PARAM: f64 = 2.0;
pub const MEDICAL_NOISE_PARAM: f64 = 4.0;

fn check_prob(what: &'static str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(what, format!("{p} is not a probability")));
    }
    Ok(())
}

fn normal(sd: f64) -> Normal<f64> {
    // sd is a positive finite constant everywhere this is called
    Normal::new(0.0, sd).expect("valid normal")
}

/// Features `[x1, x2]`, real labels `y`, numeric oracle `c`.
pub fn gen_medical_sim(cfg: &MedicalSimConfig) -> Result<Dataset> {
    check_prob("q", cfg.q)?;
    if cfg.n == 0 {
        return Err(Error::EmptySamples);
    }
    let mut rng = rng::seeded(cfg.seed);
    let y_dist = normal(cfg.convention.std_dev(MEDICAL_LABEL_PARAM));
    let e_dist = normal(cfg.convention.std_dev(MEDICAL_NOISE_PARAM));
    let mut x = Vec::with_capacity(2 * cfg.n);
    let mut ys = Vec::with_capacity(cfg.n);
    let mut cs = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let c = if rng.random_bool(cfg.q) { -1.0 } else { 1.0 };
        let y = y_dist.sample(&mut rng);
        let e = e_dist.sample(&mut rng);
        x.push(c * y);
        x.push(y + e);
        ys.push(y);
        cs.push(c);
    }
    Dataset::new(Matrix::from_vec(cfg.n, 2, x)?, Labels::Real(ys))?.with_oracle(UvOracle::Numeric(cs))
}

fn sq(v: f64) -> f64 {
    v * v
}

/// `P(c = -1 | x1, x2)` under the medical simulation. Since `|x1| = |y|`,
/// only the residual `x2 - c x1` carries information about `c`.
pub fn medical_posterior_flip(x1: f64, x2: f64, q: f64, convention: NoiseConvention) -> f64 {
    let var = {
        let sd = convention.std_dev(MEDICAL_NOISE_PARAM);
        sd * sd
    };
    let log_flip = if q > 0.0 {
        math::ln(q) - sq(x2 + x1) / (2.0 * var)
    } else {
        f64::NEG_INFINITY
    };
    let log_keep = if q < 1.0 {
        math::ln(1.0 - q) - sq(x2 - x1) / (2.0 * var)
    } else {
        f64::NEG_INFINITY
    };
    let m = log_flip.max(log_keep);
    let (a, b) = (math::exp(log_flip - m), math::exp(log_keep - m));
    a / (a + b)
}

/// Draws `c` from `c | x`, ignoring `y`, for every example of a medical
/// simulation dataset. Returns a copy with the oracle replaced.
pub fn resample_medical_c_given_x(
    data: &Dataset,
    q: f64,
    convention: NoiseConvention,
    seed: u64,
) -> Result<Dataset> {
    check_prob("q", q)?;
    if data.d() != 2 {
        return Err(Error::DimensionMismatch {
            what: "medical features",
            expected: 2,
            actual: data.d(),
        });
    }
    let mut rng = rng::seeded(seed);
    let cs = data
        .features
        .iter_rows()
        .map(|r| {
            if rng.random_bool(medical_posterior_flip(r[0], r[1], q, convention)) {
                -1.0
            } else {
                1.0
            }
        })
        .collect();
    let mut out = data.clone();
    out.uv_oracle = Some(UvOracle::Numeric(cs));
    Ok(out)
}

fn check_image(len: usize, side: usize) -> Result<()> {
    if side == 0 || side.checked_mul(side) != Some(len) {
        return Err(Error::invalid(
            "image",
            format!("{len} pixels is not a {side}x{side} image"),
        ));
    }
    Ok(())
}

/// 180 degree rotation of a flattened row-major square image.
pub fn apply_rotation(image: &[f64], side: usize) -> Result<Vec<f64>> {
    check_image(image.len(), side)?;
    Ok(image.iter().rev().copied().collect())
}

/// Side of the square occlusion patch, `ceil(fraction * side)` clamped to
/// `[1, side]`.
pub fn occlusion_patch_side(side: usize, fraction: f64) -> usize {
    (math::ceil(fraction * side as f64) as usize).clamp(1, side)
}

fn occlude(image: &[f64], side: usize, fraction: f64, rng: &mut SeededRng) -> Vec<f64> {
    let p = occlusion_patch_side(side, fraction);
    let top = rng.random_range(0..=side - p);
    let left = rng.random_range(0..=side - p);
    let mut out = image.to_vec();
    for r in top..top + p {
        out[r * side + left..r * side + left + p]
            .iter_mut()
            .for_each(|v| *v = 0.0);
    }
    out
}

/// Zeroes a square patch at a seeded uniform position.
pub fn apply_occlusion(image: &[f64], side: usize, patch_fraction: f64, seed: u64) -> Result<Vec<f64>> {
    check_image(image.len(), side)?;
    check_patch(patch_fraction)?;
    Ok(occlude(image, side, patch_fraction, &mut rng::seeded(seed)))
}

fn check_patch(f: f64) -> Result<()> {
    if !(f > 0.0 && f <= 1.0) {
        return Err(Error::invalid(
            "occlusion_patch_fraction",
            format!("{f} is not in (0, 1]"),
        ));
    }
    Ok(())
}

/// Transform ids stored in the categorical oracle.
pub const TRANSFORM_IDENTITY: usize = 0;
pub const TRANSFORM_ROTATION: usize = 1;
pub const TRANSFORM_OCCLUSION: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TransformConfig {
    pub rotation_prob: f64,
    pub occlusion_prob: f64,
    pub occlusion_patch_fraction: f64,
    pub image_side: usize,
    pub seed: u64,
}

impl TransformConfig {
    pub fn validate(&self) -> Result<()> {
        check_prob("rotation_prob", self.rotation_prob)?;
        check_prob("occlusion_prob", self.occlusion_prob)?;
        if self.rotation_prob + self.occlusion_prob > 1.0 + 1e-12 {
            return Err(Error::invalid(
                "transform",
                "rotation_prob + occlusion_prob exceeds 1",
            ));
        }
        check_patch(self.occlusion_patch_fraction)
    }
}

/// Applies a seeded per-example transform and records it as a categorical
/// oracle. Labels are untouched.
pub fn gen_confounded_classification(base: &Dataset, cfg: &TransformConfig) -> Result<Dataset> {
    cfg.validate()?;
    if !base.is_classification() {
        return Err(Error::invalid("labels", "confounded images need class labels"));
    }
    check_image(base.d(), cfg.image_side)?;
    let mut rng = rng::seeded(cfg.seed);
    let mut features = base.features.clone();
    let mut ids = Vec::with_capacity(base.n());
    for i in 0..base.n() {
        let u: f64 = rng.random();
        let id = if u < cfg.rotation_prob {
            TRANSFORM_ROTATION
        } else if u < cfg.rotation_prob + cfg.occlusion_prob {
            TRANSFORM_OCCLUSION
        } else {
            TRANSFORM_IDENTITY
        };
        let row = features.row_mut(i);
        match id {
            TRANSFORM_ROTATION => row.reverse(),
            TRANSFORM_OCCLUSION => {
                let out = occlude(row, cfg.image_side, cfg.occlusion_patch_fraction, &mut rng);
                row.copy_from_slice(&out);
            }
            _ => {}
        }
        ids.push(id);
    }
    let mut out = base.clone();
    out.features = features;
    out.uv_oracle = Some(UvOracle::Categorical(ids));
    Ok(out)
}

/// Class prototypes on a small square grid plus Gaussian pixel noise: a
/// stand-in for digit images that a linear softmax model can separate,
/// and whose 180 degree rotations look like different images.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PrototypeImageConfig {
    pub n: usize,
    pub side: usize,
    pub n_classes: usize,
    /// Fraction of "on" pixels in each prototype.
    pub density: f64,
    pub pixel_noise: f64,
    /// Probability that a label is replaced by a uniformly random class.
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for PrototypeImageConfig {
    fn default() -> Self {
        PrototypeImageConfig {
            n: 2000,
            side: 8,
            n_classes: 10,
            density: 0.3,
            pixel_noise: 0.6,
            label_noise: 0.0,
            seed: 0,
        }
    }
}

/// Prototypes depend only on `(seed, n_classes, side, density)`, so train
/// and test sets generated with different `n` share them.
pub fn prototypes(cfg: &PrototypeImageConfig) -> Vec<Vec<f64>> {
    let d = cfg.side * cfg.side;
    (0..cfg.n_classes)
        .map(|k| {
            let mut rng = rng::seeded(rng::derive_seed(cfg.seed, 0x5052_4f54 + k as u64));
            (0..d)
                .map(|_| if rng.random_bool(cfg.density) { 1.0 } else { 0.0 })
                .collect()
        })
        .collect()
}

/// Samples images from [`prototypes`]; `sample_seed` drives the draws.
pub fn gen_prototype_images(cfg: &PrototypeImageConfig, sample_seed: u64) -> Result<Dataset> {
    if cfg.n == 0 {
        return Err(Error::EmptySamples);
    }
    if cfg.n_classes < 2 || cfg.side == 0 {
        return Err(Error::invalid(
            "prototype images",
            "need 2+ classes and a positive side",
        ));
    }
    check_prob("density", cfg.density)?;
    check_prob("label_noise", cfg.label_noise)?;
    if !(cfg.pixel_noise >= 0.0) {
        return Err(Error::invalid("pixel_noise", "must be nonnegative"));
    }
    let protos = prototypes(cfg);
    let d = cfg.side * cfg.side;
    let noise = normal(cfg.pixel_noise.max(f64::MIN_POSITIVE));
    let mut rng = rng::seeded(sample_seed);
    let mut x = Vec::with_capacity(cfg.n * d);
    let mut labels = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let k = rng.random_range(0..cfg.n_classes);
        for &p in &protos[k] {
            let e = if cfg.pixel_noise > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };
            x.push(p + e);
        }
        let y = if rng.random_bool(cfg.label_noise) {
            rng.random_range(0..cfg.n_classes)
        } else {
            k
        };
        labels.push(y);
    }
    Dataset::new(
        Matrix::from_vec(cfg.n, d, x)?,
        Labels::Classes {
            labels,
            n_classes: cfg.n_classes,
        },
    )
}

/// Binary outcome over binary indicator features, with a group-specific
/// logistic relationship. Mimics a multi-site tabular dataset whose sites
/// differ in how observations relate to outcomes.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TabularSimConfig {
    pub n: usize,
    pub d: usize,
    /// Group index; groups share half their coefficients.
    pub group: usize,
    /// Seed for the coefficients, shared by every group of one task.
    pub task_seed: u64,
    pub seed: u64,
}

impl Default for TabularSimConfig {
    fn default() -> Self {
        TabularSimConfig {
            n: 2000,
            d: 27,
            group: 0,
            task_seed: 0,
            seed: 0,
        }
    }
}

pub fn gen_tabular_sim(cfg: &TabularSimConfig) -> Result<Dataset> {
    if cfg.n == 0 || cfg.d == 0 {
        return Err(Error::EmptySamples);
    }
    let mut coef_rng = rng::seeded(rng::derive_seed(cfg.task_seed, 0x5441_4200));
    let unit = normal(1.0);
    let shared: Vec<f64> = (0..cfg.d).map(|_| unit.sample(&mut coef_rng)).collect();
    let mut group_rng = rng::seeded(rng::derive_seed(cfg.task_seed, 0x5441_4201 + cfg.group as u64));
    let coef: Vec<f64> = shared
        .iter()
        .enumerate()
        .map(|(j, &s)| {
            if j % 2 == 0 {
                s
            } else {
                2.0 * unit.sample(&mut group_rng)
            }
        })
        .collect();
    let rates: Vec<f64> = (0..cfg.d)
        .map(|_| 0.1 + 0.4 * group_rng.random::<f64>())
        .collect();
    let offset = -0.5 * coef.iter().zip(&rates).map(|(c, r)| c * r).sum::<f64>();

    let mut rng = rng::seeded(cfg.seed);
    let mut x = Vec::with_capacity(cfg.n * cfg.d);
    let mut labels = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let mut z = offset;
        for (&c, &r) in coef.iter().zip(&rates) {
            let v = if rng.random_bool(r) { 1.0 } else { 0.0 };
            z += c * v;
            x.push(v);
        }
        let p = 1.0 / (1.0 + math::exp(-z));
        labels.push(usize::from(rng.random_bool(p)));
    }
    Dataset::new(
        Matrix::from_vec(cfg.n, cfg.d, x)?,
        Labels::Classes { labels, n_classes: 2 },
    )?
    .with_oracle(UvOracle::Categorical(vec![cfg.group; cfg.n]))
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MixtureConfig {
    /// Probability that an example comes from the minority source.
    pub alpha_star: f64,
    pub n: usize,
    pub seed: u64,
}

/// Draws `n` examples with replacement: each from `minority` with
/// probability `alpha_star`, otherwise from `majority`. Source flags are
/// 1 for minority draws.
pub fn mix_subpopulation(majority: &Dataset, minority: &Dataset, cfg: &MixtureConfig) -> Result<Dataset> {
    if !(cfg.alpha_star > 0.0 && cfg.alpha_star <= 1.0) {
        return Err(Error::invalid(
            "alpha_star",
            format!("{} is not in (0, 1]", cfg.alpha_star),
        ));
    }
    if cfg.n == 0 {
        return Err(Error::EmptySamples);
    }
    let both = concat(majority, minority)?;
    let offset = majority.n();
    let mut rng = rng::seeded(cfg.seed);
    let mut idx = Vec::with_capacity(cfg.n);
    let mut flags = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        if rng.random_bool(cfg.alpha_star) {
            idx.push(offset + rng.random_range(0..minority.n()));
            flags.push(1);
        } else {
            idx.push(rng.random_range(0..majority.n()));
            flags.push(0);
        }
    }
    let mut out = both.select(&idx);
    out.source_flags = Some(flags);
    Ok(out)
}

/// Stacks two datasets. Unmeasured-variable information survives only when
/// both sides carry the same kind.
fn concat(a: &Dataset, b: &Dataset) -> Result<Dataset> {
    if a.d() != b.d() {
        return Err(Error::DimensionMismatch {
            what: "mixture source features",
            expected: a.d(),
            actual: b.d(),
        });
    }
    let mut x = a.features.as_slice().to_vec();
    x.extend_from_slice(b.features.as_slice());
    let labels = match (&a.labels, &b.labels) {
        (Labels::Real(p), Labels::Real(q)) => Labels::Real(p.iter().chain(q).copied().collect()),
        (
            Labels::Classes {
                labels: p,
                n_classes: kp,
            },
            Labels::Classes {
                labels: q,
                n_classes: kq,
            },
        ) => Labels::Classes {
            labels: p.iter().chain(q).copied().collect(),
            n_classes: (*kp).max(*kq),
        },
        _ => return Err(Error::invalid("mixture sources", "label types differ")),
    };
    let uv_oracle = match (&a.uv_oracle, &b.uv_oracle) {
        (Some(UvOracle::Numeric(p)), Some(UvOracle::Numeric(q))) => {
            Some(UvOracle::Numeric(p.iter().chain(q).copied().collect()))
        }
        (Some(UvOracle::Categorical(p)), Some(UvOracle::Categorical(q))) => {
            Some(UvOracle::Categorical(p.iter().chain(q).copied().collect()))
        }
        _ => None,
    };
    let uv_embeddings = match (&a.uv_embeddings, &b.uv_embeddings) {
        (Some(p), Some(q)) => Some(p.iter().chain(q).cloned().collect()),
        _ => None,
    };
    let out = Dataset {
        features: Matrix::from_vec(a.n() + b.n(), a.d(), x)?,
        labels,
        uv_oracle,
        uv_embeddings,
        source_flags: None,
    };
    out.validate()?;
    Ok(out)
}
