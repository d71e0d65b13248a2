//! JSON experiment configuration.
//!
//! ```json
//! {
//!   "seed": 7,
//!   "train_tasks": {"source": "synthetic", "kind": "logistic", "n": 50, "count": 20},
//!   "test_tasks": {"source": "idx", "images": "data/t10k-images-idx3-ubyte",
//!                  "labels": "data/t10k-labels-idx1-ubyte", "downsample": 8,
//!                  "params": {"batch_size": 100, "n_batches": 5, "inits_per_batch": 1,
//!                             "hidden": [20], "x0_scale": 0.1}},
//!   "train": {"k": 50, "t": 8, "epochs": 50},
//!   "optimizers": [{"kind": "lbfgs_pi", "policy": "policy.json"},
//!                  {"kind": "adam", "lr": 0.03}],
//!   "stop": {"k_max": 800, "grad_eps": 1e-8},
//!   "eps_grid": [1e-4, 1e-6, 1e-8],
//!   "clock": "iterations"
//! }
//! ```
//!
//! Relative paths are resolved against the directory of the config file.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::metrics::Clock;
use super::report::ReportOptions;
use super::run::{OptimizerSpec, StopCriteria, DEFAULT_ADAM_LR, DEFAULT_RMSPROP_LR};
use crate::error::{Error, Result};
use crate::lbfgs::DEFAULT_MEMORY;
use crate::policy::{PolicyParams, DEFAULT_HIDDEN, DEFAULT_TAU_MAX, DEFAULT_TAU_MIN};
use crate::steppers::BtlsConfig;
use crate::tasks::{
    make_synthetic_family, make_task_set, Dataset, SyntheticKind, SyntheticOptions, TaskInstance,
    TaskSetParams,
};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSource {
    Synthetic {
        kind: SyntheticKind,
        n: usize,
        count: usize,
        seed: Option<u64>,
        #[serde(default)]
        options: SyntheticOptions,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        /// Box-average images to `side x side` before building tasks.
        downsample: Option<usize>,
        #[serde(default)]
        params: TaskSetParams,
        seed: Option<u64>,
    },
}

impl TaskSource {
    pub fn build(&self, default_seed: u64) -> Result<Vec<TaskInstance>> {
        match self {
            Self::Synthetic {
                kind,
                n,
                count,
                seed,
                options,
            } => make_synthetic_family(*kind, *n, *count, seed.unwrap_or(default_seed), options),
            Self::Idx {
                images,
                labels,
                downsample,
                params,
                seed,
            } => {
                let mut ds = Dataset::load(images, labels)?;
                if let Some(side) = downsample {
                    ds = ds.downsample(*side)?;
                }
                make_task_set(&ds, params, seed.unwrap_or(default_seed))
            }
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let Self::Idx { images, labels, .. } = self {
            *images = resolve(base, images);
            *labels = resolve(base, labels);
        }
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    LbfgsPi,
    LbfgsBaseline,
    LbfgsBtls,
    Adam,
    Rmsprop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerEntry {
    pub kind: OptimizerKind,
    /// Policy file for `lbfgs_pi`.
    #[serde(default)]
    pub policy: Option<PathBuf>,
    #[serde(default)]
    pub memory: Option<usize>,
    #[serde(default)]
    pub lr: Option<f64>,
    #[serde(default)]
    pub btls: Option<BtlsConfig>,
}

impl OptimizerEntry {
    pub fn new(kind: OptimizerKind) -> Self {
        Self {
            kind,
            policy: None,
            memory: None,
            lr: None,
            btls: None,
        }
    }

    /// `fallback` supplies the policy for `lbfgs_pi` entries without a file.
    pub fn resolve(&self, fallback: Option<&Arc<PolicyParams>>) -> Result<OptimizerSpec> {
        let memory = self.memory.unwrap_or(DEFAULT_MEMORY);
        if memory == 0 {
            return Err(Error::Config("memory must be at least 1".into()));
        }
        let lr = |default: f64| -> Result<f64> {
            let v = self.lr.unwrap_or(default);
            if v > 0.0 && v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Config(format!(
                    "learning rate must be positive, got {v}"
                )))
            }
        };
        Ok(match self.kind {
            OptimizerKind::LbfgsPi => {
                let policy = match (&self.policy, fallback) {
                    (Some(path), _) => Arc::new(PolicyParams::load(path)?),
                    (None, Some(p)) => Arc::clone(p),
                    (None, None) => {
                        return Err(Error::Config("lbfgs_pi needs a policy file".into()))
                    }
                };
                OptimizerSpec::LbfgsPi { policy, memory }
            }
            OptimizerKind::LbfgsBaseline => OptimizerSpec::LbfgsBaseline { memory },
            OptimizerKind::LbfgsBtls => {
                let btls = self.btls.unwrap_or_default();
                btls.validate()?;
                OptimizerSpec::LbfgsBtls { memory, btls }
            }
            OptimizerKind::Adam => OptimizerSpec::Adam {
                lr: lr(DEFAULT_ADAM_LR)?,
            },
            OptimizerKind::Rmsprop => OptimizerSpec::Rmsprop {
                lr: lr(DEFAULT_RMSPROP_LR)?,
            },
        })
    }
}

fn default_optimizers() -> Vec<OptimizerEntry> {
    [
        OptimizerKind::LbfgsPi,
        OptimizerKind::LbfgsBaseline,
        OptimizerKind::LbfgsBtls,
        OptimizerKind::Adam,
        OptimizerKind::Rmsprop,
    ]
    .into_iter()
    .map(OptimizerEntry::new)
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub train_tasks: Option<TaskSource>,
    pub test_tasks: Option<TaskSource>,
    /// Hidden width of a freshly initialized policy.
    pub hidden: usize,
    pub tau_min: f64,
    pub tau_max: f64,
    pub train: TrainConfig,
    /// Start training from this policy instead of a random one.
    pub init_policy: Option<PathBuf>,
    pub optimizers: Vec<OptimizerEntry>,
    pub stop: StopCriteria,
    pub eps_grid: Vec<f64>,
    /// Runs per optimizer excluded from timing aggregates.
    pub warmup: usize,
    pub clock: Clock,
    pub reference: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let report = ReportOptions::default();
        Self {
            seed: 0,
            train_tasks: None,
            test_tasks: None,
            hidden: DEFAULT_HIDDEN,
            tau_min: DEFAULT_TAU_MIN,
            tau_max: DEFAULT_TAU_MAX,
            train: TrainConfig::default(),
            init_policy: None,
            optimizers: default_optimizers(),
            stop: StopCriteria::default(),
            eps_grid: report.eps_grid,
            warmup: 0,
            clock: report.clock,
            reference: report.reference,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        for src in [&mut self.train_tasks, &mut self.test_tasks]
            .into_iter()
            .flatten()
        {
            src.resolve_paths(base);
        }
        if let Some(p) = &mut self.init_policy {
            *p = resolve(base, p);
        }
        for o in &mut self.optimizers {
            if let Some(p) = &mut o.policy {
                *p = resolve(base, p);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.stop.validate()?;
        if self.hidden == 0 || !(self.tau_min < self.tau_max) {
            return Err(Error::Config(
                "need hidden >= 1 and tau_min < tau_max".into(),
            ));
        }
        if self.eps_grid.iter().any(|e| !(*e > 0.0)) {
            return Err(Error::Config("eps_grid entries must be positive".into()));
        }
        Ok(())
    }

    pub fn report_options(&self) -> ReportOptions {
        ReportOptions {
            reference: self.reference.clone(),
            eps_grid: self.eps_grid.clone(),
            clock: self.clock,
        }
    }

    /// Random policy with the configured width and bounds, seeded by `seed`.
    pub fn fresh_policy(&self) -> Result<PolicyParams> {
        let mut rng = crate::numcore::Rng::new(self.seed);
        let mut p = PolicyParams::init_random(self.hidden, &mut rng)?;
        p.tau_min = self.tau_min;
        p.tau_max = self.tau_max;
        p.validate()?;
        Ok(p)
    }
}
