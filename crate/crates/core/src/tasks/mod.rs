//! Inner objectives: quadratics, logistic regression and sigmoid MLP
//! classifiers, plus dataset ingestion and seeded task-set construction.

mod idx;
mod logistic;
mod mlp;
mod quadratic;
mod sets;

use std::sync::Arc;

pub use idx::{
    load_idx, mnist_paths, parse_idx, write_idx, Dataset, IdxArray, IDX_IMAGES_MAGIC,
    IDX_LABELS_MAGIC,
};
pub use logistic::LogisticPayload;
pub use mlp::{mlp_param_count, MlpPayload};
pub use quadratic::QuadraticPayload;
pub use sets::{
    make_synthetic_family, make_task_set, synthetic_digits, SyntheticKind, SyntheticOptions,
    TaskSetParams,
};

use crate::error::{ensure_len, Error, Result};
use crate::numcore::DenseVector;

/// A differentiable objective `f: R^n -> R`.
pub trait Objective: Send + Sync {
    fn dim(&self) -> usize;

    fn value_grad(&self, x: &DenseVector) -> Result<(f64, DenseVector)>;

    fn value(&self, x: &DenseVector) -> Result<f64> {
        self.value_grad(x).map(|(f, _)| f)
    }
}

#[derive(Debug, Clone)]
pub enum TaskKind {
    Quadratic(QuadraticPayload),
    Logistic(LogisticPayload),
    Mlp(MlpPayload),
}

#[derive(Debug, Clone)]
pub struct Task {
    pub id: String,
    pub kind: TaskKind,
}

/// A task paired with its initial point.
#[derive(Debug, Clone)]
pub struct TaskInstance {
    pub task: Arc<Task>,
    pub x0: DenseVector,
}

impl TaskInstance {
    /// Identifier unique within a task set: task id plus initial-point index.
    pub fn label(&self, init: usize) -> String {
        format!("{}#{init}", self.task.id)
    }
}

impl Task {
    pub fn new(id: impl Into<String>, kind: TaskKind) -> Self {
        Self {
            id: id.into(),
            kind,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            TaskKind::Quadratic(_) => "quadratic",
            TaskKind::Logistic(_) => "logistic",
            TaskKind::Mlp(_) => "mlp",
        }
    }
}

impl Objective for Task {
    fn dim(&self) -> usize {
        match &self.kind {
            TaskKind::Quadratic(p) => p.dim(),
            TaskKind::Logistic(p) => p.dim(),
            TaskKind::Mlp(p) => p.dim(),
        }
    }

    fn value_grad(&self, x: &DenseVector) -> Result<(f64, DenseVector)> {
        ensure_len(self.dim(), x.len())?;
        let (f, g) = match &self.kind {
            TaskKind::Quadratic(p) => p.value_grad(x),
            TaskKind::Logistic(p) => p.value_grad(x),
            TaskKind::Mlp(p) => p.value_grad(x),
        };
        check_finite(&self.id, f, &g)?;
        Ok((f, g))
    }

    fn value(&self, x: &DenseVector) -> Result<f64> {
        ensure_len(self.dim(), x.len())?;
        let f = match &self.kind {
            TaskKind::Quadratic(p) => p.value(x),
            TaskKind::Logistic(p) => p.value(x),
            TaskKind::Mlp(p) => p.value(x),
        };
        if !f.is_finite() {
            return Err(Error::NonFinite(format!(
                "objective value of task {}",
                self.id
            )));
        }
        Ok(f)
    }
}

fn check_finite(id: &str, f: f64, g: &DenseVector) -> Result<()> {
    if !f.is_finite() {
        return Err(Error::NonFinite(format!("objective value of task {id}")));
    }
    g.ensure_finite(&format!("gradient of task {id}"))
}
