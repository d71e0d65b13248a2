use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::lbfgs::{LbfgsHistory, DEFAULT_MEMORY};
use crate::numcore::DenseVector;
use crate::policy::PolicyParams;
use crate::steppers::{
    AdamState, Backtracking, BtlsConfig, ConstantStep, PolicyStep, RmsPropState, StepContext,
    StepRule,
};
use crate::tasks::{Objective, TaskInstance};

pub const DEFAULT_ADAM_LR: f64 = 0.03;
pub const DEFAULT_RMSPROP_LR: f64 = 0.01;

/// A fully resolved optimizer.
#[derive(Debug, Clone)]
pub enum OptimizerSpec {
    LbfgsPi {
        policy: Arc<PolicyParams>,
        memory: usize,
    },
    LbfgsBaseline {
        memory: usize,
    },
    LbfgsBtls {
        memory: usize,
        btls: BtlsConfig,
    },
    Adam {
        lr: f64,
    },
    Rmsprop {
        lr: f64,
    },
}

impl OptimizerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            Self::LbfgsPi { .. } => "lbfgs_pi",
            Self::LbfgsBaseline { .. } => "lbfgs_baseline",
            Self::LbfgsBtls { .. } => "lbfgs_btls",
            Self::Adam { .. } => "adam",
            Self::Rmsprop { .. } => "rmsprop",
        }
    }

    pub fn baseline() -> Self {
        Self::LbfgsBaseline {
            memory: DEFAULT_MEMORY,
        }
    }

    pub fn btls() -> Self {
        Self::LbfgsBtls {
            memory: DEFAULT_MEMORY,
            btls: BtlsConfig::default(),
        }
    }

    pub fn policy(params: PolicyParams) -> Self {
        Self::LbfgsPi {
            policy: Arc::new(params),
            memory: DEFAULT_MEMORY,
        }
    }

    pub fn adam() -> Self {
        Self::Adam {
            lr: DEFAULT_ADAM_LR,
        }
    }

    pub fn rmsprop() -> Self {
        Self::Rmsprop {
            lr: DEFAULT_RMSPROP_LR,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StopCriteria {
    pub k_max: usize,
    pub grad_eps: f64,
}

impl Default for StopCriteria {
    fn default() -> Self {
        Self {
            k_max: 800,
            grad_eps: 1e-8,
        }
    }
}

impl StopCriteria {
    pub fn validate(&self) -> Result<()> {
        if self.k_max == 0 || !(self.grad_eps > 0.0) {
            return Err(Error::Config(format!(
                "stop criteria need k_max >= 1 and grad_eps > 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    MaxIter,
    Diverged,
}

/// State at iterate `k` and the step taken from it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub k: usize,
    pub f: f64,
    pub gnorm: f64,
    /// Step size applied at `x_k`; 0 on the final record. First-order
    /// methods report their learning rate.
    pub t_k: f64,
    /// Wall-clock seconds from the start of the run until `x_k` was evaluated.
    pub seconds: f64,
    /// Cumulative objective evaluations up to and including `x_k`.
    pub f_evals: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub task_id: String,
    pub optimizer: String,
    pub iterations: Vec<IterRecord>,
    pub f_star: f64,
    pub f_final: f64,
    pub status: RunStatus,
    /// Excluded from timing aggregates.
    pub warmup: bool,
}

impl RunRecord {
    /// Builds a record from its iterations, deriving `f_star` and `f_final`.
    pub fn from_iterations(
        task_id: impl Into<String>,
        optimizer: impl Into<String>,
        iterations: Vec<IterRecord>,
        status: RunStatus,
    ) -> Self {
        let f_star = iterations.iter().map(|r| r.f).fold(f64::INFINITY, f64::min);
        let f_final = iterations.last().map_or(f64::NAN, |r| r.f);
        Self {
            task_id: task_id.into(),
            optimizer: optimizer.into(),
            iterations,
            f_star,
            f_final,
            status,
            warmup: false,
        }
    }

    pub fn is_well_formed(&self) -> bool {
        let it = &self.iterations;
        !it.is_empty()
            && it
                .iter()
                .enumerate()
                .all(|(i, r)| r.k == i && r.f.is_finite() && r.gnorm >= 0.0)
            && it
                .windows(2)
                .all(|w| w[1].seconds >= w[0].seconds && w[1].f_evals >= w[0].f_evals)
            && it.iter().all(|r| self.f_star <= r.f)
            && self.f_star <= self.f_final
    }
}

enum Method<'a> {
    Lbfgs {
        history: LbfgsHistory,
        rule: Box<dyn StepRule + 'a>,
    },
    Adam(AdamState, f64),
    Rmsprop(RmsPropState, f64),
}

/// Runs `spec` from `x0` until `||g|| < grad_eps` or `k_max` steps.
/// A non-finite value or gradient ends the run with status `Diverged`.
pub fn run_optimizer(
    task: &dyn Objective,
    task_id: &str,
    x0: &DenseVector,
    spec: &OptimizerSpec,
    stop: &StopCriteria,
) -> Result<RunRecord> {
    stop.validate()?;
    ensure_len(task.dim(), x0.len())?;
    let n = x0.len();
    let method = match spec {
        OptimizerSpec::LbfgsPi { policy, memory } => Method::Lbfgs {
            history: LbfgsHistory::new(*memory)?,
            rule: Box::new(PolicyStep(policy.as_ref())),
        },
        OptimizerSpec::LbfgsBaseline { memory } => Method::Lbfgs {
            history: LbfgsHistory::new(*memory)?,
            rule: Box::new(ConstantStep(1.0)),
        },
        OptimizerSpec::LbfgsBtls { memory, btls } => {
            btls.validate()?;
            Method::Lbfgs {
                history: LbfgsHistory::new(*memory)?,
                rule: Box::new(Backtracking(*btls)),
            }
        }
        OptimizerSpec::Adam { lr } => Method::Adam(AdamState::new(n), *lr),
        OptimizerSpec::Rmsprop { lr } => Method::Rmsprop(RmsPropState::new(n), *lr),
    };
    drive(task, task_id, spec.name(), x0, method, stop)
}

/// L-BFGS with a caller-supplied step rule, recorded under `name`.
pub fn run_lbfgs_with_rule(
    task: &dyn Objective,
    task_id: &str,
    name: &str,
    x0: &DenseVector,
    memory: usize,
    rule: &mut dyn StepRule,
    stop: &StopCriteria,
) -> Result<RunRecord> {
    stop.validate()?;
    ensure_len(task.dim(), x0.len())?;
    let method = Method::Lbfgs {
        history: LbfgsHistory::new(memory)?,
        rule: Box::new(rule),
    };
    drive(task, task_id, name, x0, method, stop)
}

fn drive(
    task: &dyn Objective,
    task_id: &str,
    name: &str,
    x0: &DenseVector,
    mut method: Method<'_>,
    stop: &StopCriteria,
) -> Result<RunRecord> {
    let n = x0.len();
    let clock = Instant::now();
    let mut iterations = Vec::with_capacity(stop.k_max.min(100_000) + 1);
    let mut f_evals = 1;
    let (mut f, mut g) = match task.value_grad(x0) {
        Ok(v) => v,
        Err(Error::NonFinite(_)) => {
            return Ok(RunRecord::from_iterations(
                task_id,
                name,
                iterations,
                RunStatus::Diverged,
            ))
        }
        Err(e) => return Err(e),
    };
    let mut x = x0.clone();
    let mut s_prev = DenseVector::zeros(n);
    let mut y_prev = DenseVector::zeros(n);
    let mut k = 0;
    let status = loop {
        let seconds = clock.elapsed().as_secs_f64();
        let gnorm = g.norm2();
        let mut rec = IterRecord {
            k,
            f,
            gnorm,
            t_k: 0.0,
            seconds,
            f_evals,
        };
        if gnorm < stop.grad_eps {
            iterations.push(rec);
            break RunStatus::Converged;
        }
        if k == stop.k_max {
            iterations.push(rec);
            break RunStatus::MaxIter;
        }
        let (x_next, t) = match &mut method {
            Method::Lbfgs { history, rule } => {
                let d = history.two_loop(&g)?.into_inner();
                let ctx = StepContext {
                    objective: task,
                    x: &x,
                    fx: f,
                    g: &g,
                    d: &d,
                    s_prev: &s_prev,
                    y_prev: &y_prev,
                };
                let choice = match rule.choose(&ctx) {
                    Ok(c) => c,
                    Err(Error::NonFinite(_)) => {
                        iterations.push(rec);
                        break RunStatus::Diverged;
                    }
                    Err(e) => return Err(e),
                };
                f_evals += choice.f_evals;
                let mut xn = x.clone();
                xn.axpy(choice.t, &d)?;
                (xn, choice.t)
            }
            Method::Adam(state, lr) => (x.add(&state.update(&g, *lr)?)?, *lr),
            Method::Rmsprop(state, lr) => (x.add(&state.update(&g, *lr)?)?, *lr),
        };
        rec.t_k = t;
        iterations.push(rec);
        if !x_next.is_finite() {
            break RunStatus::Diverged;
        }
        let (f_next, g_next) = match task.value_grad(&x_next) {
            Ok(v) => v,
            Err(Error::NonFinite(_)) => break RunStatus::Diverged,
            Err(e) => return Err(e),
        };
        f_evals += 1;
        if let Method::Lbfgs { history, .. } = &mut method {
            let s = x_next.sub(&x)?;
            let y = g_next.sub(&g)?;
            history.push_pair(s.clone(), y.clone())?;
            s_prev = s;
            y_prev = y;
        }
        x = x_next;
        f = f_next;
        g = g_next;
        k += 1;
    };
    Ok(RunRecord::from_iterations(
        task_id, name, iterations, status,
    ))
}

/// Runs every optimizer on every instance in parallel. Output order is
/// optimizer-major, then instance order. For each optimizer, the first
/// `warmup` runs are flagged.
pub fn run_all(
    instances: &[TaskInstance],
    specs: &[OptimizerSpec],
    stop: &StopCriteria,
    warmup: usize,
) -> Result<Vec<RunRecord>> {
    let jobs: Vec<(usize, usize)> = (0..specs.len())
        .flat_map(|o| (0..instances.len()).map(move |i| (o, i)))
        .collect();
    jobs.par_iter()
        .map(|&(o, i)| {
            let inst = &instances[i];
            let mut rec = run_optimizer(
                inst.task.as_ref(),
                &instance_label(instances, i),
                &inst.x0,
                &specs[o],
                stop,
            )?;
            rec.warmup = i < warmup;
            Ok(rec)
        })
        .collect()
}

/// Task id, suffixed with the initial-point index when a task appears more
/// than once in `instances`.
pub fn instance_label(instances: &[TaskInstance], i: usize) -> String {
    let id = &instances[i].task.id;
    let repeated = instances.iter().filter(|o| o.task.id == *id).count() > 1;
    if repeated {
        let nth = instances[..i].iter().filter(|o| o.task.id == *id).count();
        instances[i].label(nth)
    } else {
        id.clone()
    }
}
