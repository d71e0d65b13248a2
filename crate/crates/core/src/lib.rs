//! L-BFGS with a learned step-size policy.
//!
//! * [`numcore`]: dense vectors, seeded randomness and a small reverse-mode tape.
//! * [`lbfgs`]: correction-pair history and the two-loop recursion.
//! * [`policy`]: the step-size network mapping `(d, g, s, y)` to `t`.
//! * [`steppers`]: backtracking line search, ADAM, RMSprop, ADADELTA.
//! * [`tasks`]: quadratic, logistic and MLP objectives plus dataset handling.
//! * [`trainer`]: unrolled training of the policy.
//! * [`harness`]: optimizer runs, comparison metrics and reports.
//! * [`gradcheck`]: finite-difference and dense-matrix reference checks.

// `!(x > 0.0)` is used on purpose to reject NaN along with the bound.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod lbfgs;
pub mod numcore;
pub mod policy;
pub mod steppers;
pub mod tasks;
pub mod trainer;

pub use error::{Error, Result};
pub use harness::{OptimizerSpec, RunRecord, StopCriteria};
pub use lbfgs::{Direction, LbfgsHistory};
pub use numcore::{DenseVector, Rng, Tape};
pub use policy::{FeatureVector, PolicyParams, StepDecision};
pub use steppers::BtlsConfig;
pub use tasks::{Objective, Task, TaskInstance, TaskKind};
pub use trainer::{TrainConfig, UnrollResult};
