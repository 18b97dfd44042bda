//! Experiment runner: data splits, distance construction, training and
//! evaluation for every (objective, grid point, seed).

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use uvdro_core::datagen::{
    gen_confounded_classification, gen_medical_sim, gen_prototype_images, gen_tabular_sim, mix_subpopulation,
    resample_medical_c_given_x, MedicalSimConfig, MixtureConfig, TabularSimConfig, TransformConfig,
};
use uvdro_core::distances::{annotation_distance, oracle_distance, pairwise_euclidean, shuffle_distances};
use uvdro_core::model::evaluate;
use uvdro_core::optimizer::train;
use uvdro_core::rng::{derive_seed, seeded};
use uvdro_core::{Dataset, DistanceMatrix, LossKind, Objective, UvOracle};

use crate::config::{ExperimentConfig, Task, UvSource};
use crate::error::{Error, Result};
use crate::io::{load_csv_dataset, load_embeddings, CsvSchema, LabelKind};
use crate::report::{sort_records, RunRecord};

// Stream tags for seed derivation; each use of randomness gets its own.
const STREAM_TRAIN: u64 = 1;
const STREAM_TRANSFORM: u64 = 2;
const STREAM_TEST: u64 = 3;
const STREAM_TEST_TRANSFORM: u64 = 4;
const STREAM_SHUFFLE: u64 = 5;
const STREAM_POSTERIOR: u64 = 6;
const STREAM_PERMUTE: u64 = 7;
const STREAM_MIX: u64 = 8;
const STREAM_MINORITY: u64 = 9;

/// Share of the drawn training examples used for fitting; the rest is
/// held out for validation.
pub const TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub alpha_star: Option<f64>,
    pub q: Option<f64>,
}

impl GridPoint {
    fn describe(&self) -> String {
        match (self.alpha_star, self.q) {
            (Some(a), _) => format!("alpha_star={a}"),
            (None, Some(q)) => format!("q={q}"),
            (None, None) => "default".into(),
        }
    }
}

pub fn grid(cfg: &ExperimentConfig) -> Vec<GridPoint> {
    match cfg.task {
        Task::MedicalSim => cfg
            .q_train
            .iter()
            .map(|&q| GridPoint {
                alpha_star: None,
                q: Some(q),
            })
            .collect(),
        Task::ConfoundedImages | Task::Tabular => cfg
            .alpha_star
            .iter()
            .map(|&a| GridPoint {
                alpha_star: Some(a),
                q: None,
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

/// Splits a pool into train and validation in pool order.
fn split_pool(pool: Dataset) -> (Dataset, Dataset) {
    let n = pool.n();
    let n_train = ((n as f64 * TRAIN_FRACTION).round() as usize).clamp(1, n);
    let train: Vec<usize> = (0..n_train).collect();
    let validation: Vec<usize> = (n_train..n).collect();
    (pool.select(&train), pool.select(&validation))
}

fn permutation(n: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeded(seed));
    idx
}

fn load_with_embeddings(
    path: &Path,
    schema: &CsvSchema,
    embeddings: Option<&Path>,
) -> Result<(Dataset, Option<Vec<String>>)> {
    let loaded = load_csv_dataset(path, schema)?;
    let mut data = loaded.dataset;
    if let Some(e) = embeddings {
        let n = data.n();
        data = data.with_embeddings(load_embeddings(e, n)?)?;
    }
    Ok((data, loaded.uv_names))
}

/// Builds the splits for one grid point and seed. The test split depends on
/// neither the objective nor the unmeasured-variable source.
pub fn build_splits(cfg: &ExperimentConfig, point: GridPoint, seed: u64) -> Result<Splits> {
    let q_test = cfg.q_test_or_default();
    let (pool, test) = match cfg.task {
        Task::MedicalSim => {
            let convention = cfg.medical.map(|m| m.convention).unwrap_or_default();
            let q = point.q.expect("medical grid points carry q");
            let pool = gen_medical_sim(&MedicalSimConfig {
                n: cfg.n_train,
                q,
                seed: derive_seed(seed, STREAM_TRAIN),
                convention,
            })?;
            let test = gen_medical_sim(&MedicalSimConfig {
                n: cfg.n_test,
                q: q_test,
                seed: derive_seed(seed, STREAM_TEST),
                convention,
            })?;
            (pool, test)
        }
        Task::ConfoundedImages => {
            let img = cfg.images.clone().unwrap_or_default();
            let alpha_star = point.alpha_star.expect("image grid points carry alpha_star");
            let (base_pool, base_test) = match &img.path {
                None => (
                    gen_prototype_images(
                        &img.prototype_config(cfg.n_train),
                        derive_seed(seed, STREAM_TRAIN),
                    )?,
                    gen_prototype_images(&img.prototype_config(cfg.n_test), derive_seed(seed, STREAM_TEST))?,
                ),
                Some(path) => {
                    let schema = CsvSchema {
                        feature_columns: vec![],
                        label_column: img.label_column.clone(),
                        label_kind: LabelKind::Classes,
                        uv_column: None,
                    };
                    let (data, _) = load_with_embeddings(path, &schema, img.embeddings_path.as_deref())?;
                    if data.n() < cfg.n_train + cfg.n_test {
                        return Err(Error::Config(format!(
                            "{} has {} rows; n_train + n_test = {}",
                            path.display(),
                            data.n(),
                            cfg.n_train + cfg.n_test
                        )));
                    }
                    let perm = permutation(data.n(), derive_seed(seed, STREAM_PERMUTE));
                    (
                        data.select(&perm[..cfg.n_train]),
                        data.select(&perm[cfg.n_train..cfg.n_train + cfg.n_test]),
                    )
                }
            };
            let transform = TransformConfig {
                rotation_prob: alpha_star,
                occlusion_prob: img.occlusion_prob.min(1.0 - alpha_star),
                occlusion_patch_fraction: img.occlusion_patch_fraction,
                image_side: img.side,
                seed: derive_seed(seed, STREAM_TRANSFORM),
            };
            let pool = gen_confounded_classification(&base_pool, &transform)?;
            let test = gen_confounded_classification(
                &base_test,
                &TransformConfig {
                    rotation_prob: q_test,
                    occlusion_prob: img.occlusion_prob.min(1.0 - q_test),
                    seed: derive_seed(seed, STREAM_TEST_TRANSFORM),
                    ..transform
                },
            )?;
            (pool, test)
        }
        Task::Tabular => {
            let tab = cfg.tabular.clone().unwrap_or_default();
            let alpha_star = point.alpha_star.expect("tabular grid points carry alpha_star");
            let (majority, minority, test) = match &tab.path {
                None => {
                    let site = |group, n, stream| {
                        gen_tabular_sim(&TabularSimConfig {
                            n,
                            d: tab.d,
                            group,
                            task_seed: tab.task_seed,
                            seed: derive_seed(seed, stream),
                        })
                    };
                    (
                        site(0, cfg.n_train, STREAM_TRAIN)?,
                        site(1, cfg.n_train, STREAM_MINORITY)?,
                        site(1, cfg.n_test, STREAM_TEST)?,
                    )
                }
                Some(path) => split_sites(cfg, &tab, path, seed)?,
            };
            let pool = mix_subpopulation(
                &majority,
                &minority,
                &MixtureConfig {
                    alpha_star,
                    n: cfg.n_train,
                    seed: derive_seed(seed, STREAM_MIX),
                },
            )?;
            (pool, test)
        }
    };
    let (train, validation) = split_pool(pool);
    Ok(Splits {
        train,
        validation,
        test,
    })
}

/// Separates a site-labelled CSV into majority rows, minority rows for
/// training, and held-out minority rows for testing.
fn split_sites(
    cfg: &ExperimentConfig,
    tab: &crate::config::TabularSettings,
    path: &Path,
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    let schema = tab.schema.as_ref().expect("validated");
    let minority_value = tab.minority_value.as_deref().expect("validated");
    let (data, uv_names) = load_with_embeddings(path, schema, tab.embeddings_path.as_deref())?;
    let is_minority: Vec<bool> = match (&data.uv_oracle, uv_names) {
        (Some(UvOracle::Categorical(ids)), Some(names)) => {
            let m = names.iter().position(|n| n == minority_value);
            ids.iter().map(|&i| Some(i) == m).collect()
        }
        (Some(UvOracle::Numeric(v)), _) => {
            let m: f64 = minority_value
                .parse()
                .map_err(|_| Error::Config(format!("minority_value `{minority_value}` is not numeric")))?;
            v.iter().map(|&x| x == m).collect()
        }
        _ => return Err(Error::Config("tabular schema needs a uv_column".into())),
    };
    let perm = permutation(data.n(), derive_seed(seed, STREAM_PERMUTE));
    let (mut minority, majority): (Vec<usize>, Vec<usize>) = perm.into_iter().partition(|&i| is_minority[i]);
    if minority.len() < 2 || majority.is_empty() {
        return Err(Error::Config(format!(
            "{}: need at least 2 minority rows and 1 majority row",
            path.display()
        )));
    }
    let n_test = cfg.n_test.min(minority.len() / 2);
    let held_out = minority.split_off(minority.len() - n_test);
    Ok((
        data.select(&majority),
        data.select(&minority),
        data.select(&held_out),
    ))
}

/// Unmeasured-variable distances on the training split, before scaling.
pub fn raw_uv_distances(
    cfg: &ExperimentConfig,
    source: UvSource,
    train: &Dataset,
    point: GridPoint,
    seed: u64,
) -> Result<DistanceMatrix> {
    let oracle = || {
        train
            .uv_oracle
            .as_ref()
            .map(oracle_distance)
            .ok_or_else(|| Error::Config("uv_source needs ground-truth unmeasured variables".into()))
    };
    let embedded = || {
        train
            .uv_embeddings
            .as_ref()
            .ok_or_else(|| Error::Config("uv_source embeddings needs an embeddings file".into()))
            .and_then(|e| Ok(annotation_distance(e)?))
    };
    Ok(match source {
        UvSource::Oracle => oracle()?,
        UvSource::Embeddings => embedded()?,
        UvSource::None => DistanceMatrix::zeros(train.n()),
        UvSource::Shuffled { fraction } => {
            let base = if train.uv_embeddings.is_some() {
                embedded()?
            } else {
                oracle()?
            };
            shuffle_distances(&base, fraction, derive_seed(seed, STREAM_SHUFFLE))?
        }
        UvSource::Posterior => {
            let q = point.q.expect("posterior is validated to the medical task");
            let convention = cfg.medical.map(|m| m.convention).unwrap_or_default();
            let redrawn =
                resample_medical_c_given_x(train, q, convention, derive_seed(seed, STREAM_POSTERIOR))?;
            oracle_distance(redrawn.uv_oracle.as_ref().expect("resampling sets the oracle"))
        }
    })
}

fn prepare(d: DistanceMatrix, rescale: bool, scale: f64) -> DistanceMatrix {
    let d = if rescale { d.rescaled_unit_mean() } else { d };
    if scale == 1.0 {
        d
    } else {
        d.scaled(scale)
    }
}

/// A record that could not be produced, and why.
#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub objective: Objective,
    pub point: GridPoint,
    pub seed: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Outcome {
    pub records: Vec<RunRecord>,
    pub failures: Vec<Failure>,
}

impl Outcome {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }

    fn fail(&mut self, objectives: &[Objective], point: GridPoint, seed: u64, err: &Error) {
        for &objective in objectives {
            let failure = Failure {
                objective,
                point,
                seed,
                reason: err.to_string(),
            };
            log_failure(&failure);
            self.failures.push(failure);
        }
    }
}

fn log_failure(f: &Failure) {
    eprintln!(
        "record failed: objective={} {} seed={}: {}",
        f.objective.name(),
        f.point.describe(),
        f.seed,
        f.reason
    );
}

/// Trains and evaluates every objective on one grid point and seed.
fn run_point(
    cfg: &ExperimentConfig,
    source: UvSource,
    point: GridPoint,
    seed: u64,
    hash: &str,
    out: &mut Outcome,
) {
    let splits = match build_splits(cfg, point, seed) {
        Ok(s) => s,
        Err(e) => return out.fail(&cfg.objectives, point, seed, &e),
    };
    let train_data = &splits.train;
    let kind = LossKind::for_labels(&train_data.labels);
    let needs_transport = cfg.objectives.iter().any(|o| o.uses_transport());
    let needs_c = cfg.objectives.contains(&Objective::UvDro);
    let d_x = needs_transport.then(|| {
        prepare(
            pairwise_euclidean(&train_data.features),
            cfg.distances.rescale,
            cfg.distances.x_scale,
        )
    });
    let d_c = if needs_c {
        match raw_uv_distances(cfg, source, train_data, point, seed) {
            Ok(d) => Some(prepare(d, cfg.distances.rescale, cfg.distances.c_scale)),
            Err(e) => {
                let uv: Vec<Objective> = vec![Objective::UvDro];
                out.fail(&uv, point, seed, &e);
                None
            }
        }
    } else {
        None
    };
    let shuffle_fraction = match source {
        UvSource::Shuffled { fraction } => Some(fraction),
        _ => None,
    };

    for &objective in &cfg.objectives {
        if objective == Objective::UvDro && d_c.is_none() {
            continue;
        }
        let result = (|| -> Result<RunRecord> {
            let rcfg = cfg.robustness_for(objective)?;
            let tcfg = cfg.train_config(seed)?;
            let trace = train(train_data, d_x.as_ref(), d_c.as_ref(), &rcfg, &tcfg, kind)?;
            let m = evaluate(&trace.params, &splits.test, kind)?;
            Ok(RunRecord {
                task: cfg.task.name().into(),
                objective: objective.name().into(),
                alpha_star: point.alpha_star,
                q: point.q,
                seed,
                accuracy: m.accuracy,
                log_loss: m.accuracy.map(|_| m.mean_loss),
                mse: m.mse,
                relative_weight_x2: m.relative_weights.as_ref().and_then(|w| w.get(1).copied()),
                objective_value: *trace.objective.last().expect("at least one step"),
                wall_ms: if cfg.record_wall_time { trace.wall_ms } else { 0 },
                shuffle_fraction,
                config_hash: hash.to_owned(),
            })
        })();
        match result {
            Ok(r) => out.records.push(r),
            Err(e) => out.fail(&[objective], point, seed, &e),
        }
    }
}

/// Runs every grid point, objective and seed. Failed records are logged
/// and reported in the outcome; the others still run. Records come back
/// sorted by objective, grid point and seed.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Outcome> {
    run_with_source(cfg, cfg.uv_source)
}

fn run_with_source(cfg: &ExperimentConfig, source: UvSource) -> Result<Outcome> {
    cfg.validate()?;
    cfg.check_paths()?;
    let hash = cfg.hash();
    let jobs: Vec<(GridPoint, u64)> = grid(cfg)
        .into_iter()
        .flat_map(|p| cfg.seeds.iter().map(move |&s| (p, s)))
        .collect();
    let results = parallel_map(&jobs, |&(point, seed)| {
        let mut out = Outcome::default();
        run_point(cfg, source, point, seed, &hash, &mut out);
        out
    });
    let mut out = Outcome::default();
    for r in results {
        out.records.extend(r.records);
        out.failures.extend(r.failures);
    }
    sort_records(&mut out.records);
    Ok(out)
}

/// Maps `f` over `items` on up to `available_parallelism` threads. Results
/// keep the input order, so output does not depend on scheduling.
fn parallel_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let threads = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(items.len());
    if threads <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let mut slots: Vec<Option<R>> = std::iter::repeat_with(|| None).take(items.len()).collect();
    let done = std::thread::scope(|scope| {
        let workers: Vec<_> = (0..threads)
            .map(|_| {
                scope.spawn(|| {
                    let mut mine = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        if i >= items.len() {
                            return mine;
                        }
                        mine.push((i, f(&items[i])));
                    }
                })
            })
            .collect();
        workers
            .into_iter()
            .flat_map(|w| w.join().expect("worker panicked"))
            .collect::<Vec<_>>()
    });
    for (i, r) in done {
        slots[i] = Some(r);
    }
    slots.into_iter().map(|r| r.expect("every job ran")).collect()
}

pub const DEFAULT_SHUFFLE_FRACTIONS: [f64; 7] = [0.0, 0.05, 0.1, 0.2, 0.5, 0.75, 1.0];

#[derive(Debug, Clone, PartialEq)]
pub struct Ablation {
    pub outcome: Outcome,
    /// Per grid point: Spearman correlation between shuffle fraction and
    /// UV-DRO test accuracy averaged over seeds.
    pub correlations: Vec<(GridPoint, f64)>,
}

impl Ablation {
    pub fn mean_correlation(&self) -> f64 {
        let c: Vec<f64> = self
            .correlations
            .iter()
            .map(|c| c.1)
            .filter(|c| c.is_finite())
            .collect();
        c.iter().sum::<f64>() / c.len() as f64
    }
}

/// Repeats the experiment with the unmeasured-variable distances degraded
/// by each shuffle fraction. Only UV-DRO depends on the fraction, so other
/// objectives are dropped.
pub fn run_shuffle_ablation(cfg: &ExperimentConfig, fractions: &[f64]) -> Result<Ablation> {
    if fractions.is_empty() {
        return Err(Error::Config("shuffle fractions must not be empty".into()));
    }
    if let Some(f) = fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        return Err(Error::Config(format!("shuffle fraction {f} is not in [0, 1]")));
    }
    if !matches!(cfg.uv_source, UvSource::Oracle | UvSource::Embeddings) {
        return Err(Error::Config(
            "shuffle ablation needs uv_source oracle or embeddings".into(),
        ));
    }
    let mut base = cfg.clone();
    base.objectives = vec![Objective::UvDro];
    let mut outcome = Outcome::default();
    for &fraction in fractions {
        let run = run_with_source(&base, UvSource::Shuffled { fraction })?;
        outcome.records.extend(run.records);
        outcome.failures.extend(run.failures);
    }
    sort_records(&mut outcome.records);

    let correlations = grid(&base)
        .into_iter()
        .map(|point| {
            let metric = |f: f64| {
                let vals: Vec<f64> = outcome
                    .records
                    .iter()
                    .filter(|r| {
                        r.shuffle_fraction == Some(f) && r.alpha_star == point.alpha_star && r.q == point.q
                    })
                    .filter_map(|r| r.accuracy.or(r.mse.map(|m| -m)))
                    .collect();
                vals.iter().sum::<f64>() / vals.len() as f64
            };
            let acc: Vec<f64> = fractions.iter().map(|&f| metric(f)).collect();
            (point, spearman(fractions, &acc))
        })
        .collect();
    Ok(Ablation {
        outcome,
        correlations,
    })
}

/// Ranks starting at 1, ties sharing their average rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Pearson correlation of ranks. NaN when either side is constant or has
/// fewer than two values.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "spearman inputs differ in length");
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}
