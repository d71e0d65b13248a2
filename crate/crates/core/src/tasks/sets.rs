use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    mlp_param_count, Dataset, LogisticPayload, MlpPayload, QuadraticPayload, Task, TaskInstance,
    TaskKind,
};
use crate::error::{Error, Result};
use crate::numcore::{DenseVector, Rng};

/// Batching of an image dataset into MLP classification tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSetParams {
    pub batch_size: usize,
    pub n_batches: usize,
    pub inits_per_batch: usize,
    /// Hidden layer widths, e.g. `[20]`.
    pub hidden: Vec<usize>,
    pub x0_scale: f64,
}

impl Default for TaskSetParams {
    fn default() -> Self {
        Self {
            batch_size: 1000,
            n_batches: 60,
            inits_per_batch: 1,
            hidden: vec![20],
            x0_scale: 0.1,
        }
    }
}

const CLASSES: usize = 10;

/// Shuffles `dataset` with a seeded stream, partitions it into disjoint
/// batches and pairs each batch with `inits_per_batch` random initial points.
/// Output order is batch-major.
pub fn make_task_set(
    dataset: &Dataset,
    params: &TaskSetParams,
    seed: u64,
) -> Result<Vec<TaskInstance>> {
    let needed = params.batch_size * params.n_batches;
    if needed > dataset.len() {
        return Err(Error::InsufficientData {
            needed,
            available: dataset.len(),
        });
    }
    if params.batch_size == 0 || params.n_batches == 0 || params.inits_per_batch == 0 {
        return Err(Error::InvalidArgument(
            "task set sizes must be positive".into(),
        ));
    }
    let mut widths = vec![dataset.pixels()];
    widths.extend_from_slice(&params.hidden);
    widths.push(CLASSES);
    let dim = mlp_param_count(&widths);

    let mut rng = Rng::new(seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    rng.shuffle(&mut order);

    let mut out = Vec::with_capacity(params.n_batches * params.inits_per_batch);
    for (b, chunk) in order
        .chunks(params.batch_size)
        .take(params.n_batches)
        .enumerate()
    {
        let mut inputs = Vec::with_capacity(chunk.len() * dataset.pixels());
        for &i in chunk {
            inputs.extend(dataset.image(i).iter().map(|&px| f64::from(px) / 255.0));
        }
        let labels = chunk
            .iter()
            .map(|&i| usize::from(dataset.labels[i]))
            .collect();
        let payload = MlpPayload::new(widths.clone(), Arc::new(inputs), labels)?;
        let task = Arc::new(Task::new(format!("batch{b:03}"), TaskKind::Mlp(payload)));
        for _ in 0..params.inits_per_batch {
            out.push(TaskInstance {
                task: Arc::clone(&task),
                x0: rng.randn(dim, params.x0_scale)?,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    Quadratic,
    Logistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticOptions {
    pub x0_scale: f64,
    /// Logistic: number of samples per task.
    pub samples: usize,
    /// Logistic: ridge coefficient.
    pub l2: f64,
    /// Logistic: standard deviation of the features.
    pub feature_scale: f64,
    /// Quadratic: `A = M'M + ridge I`.
    pub ridge: f64,
}

impl Default for SyntheticOptions {
    fn default() -> Self {
        Self {
            x0_scale: 1.0,
            samples: 100,
            l2: 1e-2,
            feature_scale: 1.0,
            ridge: 1e-3,
        }
    }
}

/// Random SPD quadratics or logistic-regression instances, one initial
/// point each. Quadratics have a standard-normal minimizer and a constant
/// offset that puts their minimum value at 1 so that `f > 0` everywhere.
pub fn make_synthetic_family(
    kind: SyntheticKind,
    n: usize,
    count: usize,
    seed: u64,
    opts: &SyntheticOptions,
) -> Result<Vec<TaskInstance>> {
    if n == 0 {
        return Err(Error::InvalidArgument("task dimension must be >= 1".into()));
    }
    let mut rng = Rng::new(seed);
    (0..count)
        .map(|i| {
            let id = format!("{}-s{seed}-{i:03}", kind_tag(kind));
            let kind = match kind {
                SyntheticKind::Quadratic => {
                    TaskKind::Quadratic(random_quadratic(&mut rng, n, opts.ridge)?)
                }
                SyntheticKind::Logistic => TaskKind::Logistic(random_logistic(&mut rng, n, opts)?),
            };
            Ok(TaskInstance {
                task: Arc::new(Task::new(id, kind)),
                x0: rng.randn(n, opts.x0_scale)?,
            })
        })
        .collect()
}

fn kind_tag(kind: SyntheticKind) -> &'static str {
    match kind {
        SyntheticKind::Quadratic => "quad",
        SyntheticKind::Logistic => "logit",
    }
}

fn random_quadratic(rng: &mut Rng, n: usize, ridge: f64) -> Result<QuadraticPayload> {
    let m = rng.randn(n * n, 1.0 / (n as f64).sqrt())?;
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v: f64 = (0..n).map(|k| m[k * n + i] * m[k * n + j]).sum();
            a[i * n + j] = v;
            a[j * n + i] = v;
        }
        a[i * n + i] += ridge;
    }
    // b = -A x* with x* ~ N(0, I), so the minimizer sits at unit scale
    // however ill-conditioned A is.
    let x_star = rng.randn(n, 1.0)?;
    let b: Vec<f64> = a
        .chunks(n)
        .map(|row| -crate::numcore::dot(row, &x_star))
        .collect();
    let b = DenseVector::new(b)?;
    let centered = QuadraticPayload::new(a.clone(), b.clone(), 0.0)?;
    let offset = 1.0 - centered.min_value()?;
    QuadraticPayload::new(a, b, offset)
}

fn random_logistic(rng: &mut Rng, n: usize, opts: &SyntheticOptions) -> Result<LogisticPayload> {
    let features = rng.randn(opts.samples * n, opts.feature_scale)?;
    // Teacher margins are N(0, 4) regardless of n and the feature scale.
    let teacher: DenseVector = rng.randn(n, 2.0 / (opts.feature_scale * (n as f64).sqrt()))?;
    let labels = features
        .chunks(n)
        .map(|row| {
            let z = crate::numcore::dot(row, &teacher);
            let p = 1.0 / (1.0 + (-z).exp());
            u8::from(rng.uniform(0.0, 1.0) < p)
        })
        .collect();
    LogisticPayload::new(features.into_vec(), n, labels, opts.l2)
}

/// MNIST-shaped stand-in: `count` images of `side x side` pixels, each a
/// noisy copy of a per-class random prototype. Labels cycle through 0..9
/// before shuffling by the same seed.
pub fn synthetic_digits(count: usize, side: usize, seed: u64) -> Result<Dataset> {
    if side == 0 {
        return Err(Error::InvalidArgument("image side must be >= 1".into()));
    }
    let mut rng = Rng::new(seed);
    let pixels = side * side;
    let prototypes: Vec<Vec<f64>> = (0..CLASSES)
        .map(|_| (0..pixels).map(|_| rng.uniform(0.0, 255.0)).collect())
        .collect();
    let mut labels: Vec<u8> = (0..count).map(|i| (i % CLASSES) as u8).collect();
    rng.shuffle(&mut labels);
    let mut images = Vec::with_capacity(count * pixels);
    for &l in &labels {
        for &p in &prototypes[usize::from(l)] {
            images.push((0.7 * p + 0.3 * rng.uniform(0.0, 255.0)).round() as u8);
        }
    }
    Dataset::new(
        side,
        side,
        images,
        labels,
        format!("synthetic-digits(seed={seed})"),
    )
}
