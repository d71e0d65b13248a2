//! Step-size strategies for L-BFGS and first-order update rules.
//!
//! The L-BFGS step rules (constant, backtracking, learned policy) all
//! implement [`StepRule`] so the direction computation stays identical
//! across them. ADAM and RMSprop are the first-order competitors; ADADELTA
//! updates the policy parameters during training.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::numcore::{dot, DenseVector};
use crate::policy::PolicyParams;
use crate::tasks::Objective;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BtlsConfig {
    /// Sufficient-decrease coefficient.
    pub c1: f64,
    /// Contraction factor.
    pub c2: f64,
    pub t_init: f64,
    pub max_backtracks: usize,
}

impl Default for BtlsConfig {
    fn default() -> Self {
        Self {
            c1: 0.25,
            c2: 0.5,
            t_init: 1.0,
            max_backtracks: 50,
        }
    }
}

impl BtlsConfig {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| v > 0.0 && v < 1.0;
        if !in_unit(self.c1) || !in_unit(self.c2) || !(self.t_init > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "BTLS needs 0 < c1, c2 < 1 and t_init > 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BtlsOutcome {
    pub t: f64,
    /// Objective evaluations consumed by the search.
    pub f_evals: usize,
    /// Set when `d` was not a descent direction or no trial step satisfied
    /// the sufficient-decrease condition.
    pub warning: bool,
}

/// Backtracking line search on `f(x + t d) <= f(x) + c1 t g'd`, trying
/// `t_init, c2 t_init, c2^2 t_init, ...`.
pub fn btls(
    objective: &dyn Objective,
    x: &DenseVector,
    fx: f64,
    d: &DenseVector,
    g: &DenseVector,
    cfg: &BtlsConfig,
) -> Result<BtlsOutcome> {
    cfg.validate()?;
    ensure_len(x.len(), d.len())?;
    ensure_len(x.len(), g.len())?;
    let slope = dot(g, d);
    let mut t = cfg.t_init;
    let mut f_evals = 0;
    let mut trial = x.clone();
    for _ in 0..cfg.max_backtracks {
        trial.as_mut_slice().copy_from_slice(x);
        trial.axpy(t, d)?;
        let ft = objective.value(&trial)?;
        f_evals += 1;
        if ft <= fx + cfg.c1 * t * slope {
            return Ok(BtlsOutcome {
                t,
                f_evals,
                warning: !(slope < 0.0),
            });
        }
        t *= cfg.c2;
    }
    if cfg.max_backtracks == 0 {
        return Ok(BtlsOutcome {
            t: cfg.t_init,
            f_evals: 0,
            warning: !(slope < 0.0),
        });
    }
    Ok(BtlsOutcome {
        t,
        f_evals,
        warning: true,
    })
}

/// Everything a step rule may look at when choosing `t_k`.
pub struct StepContext<'a> {
    pub objective: &'a dyn Objective,
    pub x: &'a DenseVector,
    pub fx: f64,
    pub g: &'a DenseVector,
    pub d: &'a DenseVector,
    /// Previous step `x_k - x_{k-1}`, zero at the first iteration.
    pub s_prev: &'a DenseVector,
    /// Previous gradient change, zero at the first iteration.
    pub y_prev: &'a DenseVector,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepChoice {
    pub t: f64,
    pub f_evals: usize,
}

pub trait StepRule {
    fn choose(&mut self, ctx: &StepContext<'_>) -> Result<StepChoice>;
}

impl<R: StepRule + ?Sized> StepRule for &mut R {
    fn choose(&mut self, ctx: &StepContext<'_>) -> Result<StepChoice> {
        (**self).choose(ctx)
    }
}

/// Always returns the same step; `t = 1` is the baseline L-BFGS.
#[derive(Debug, Clone, Copy)]
pub struct ConstantStep(pub f64);

impl StepRule for ConstantStep {
    fn choose(&mut self, _ctx: &StepContext<'_>) -> Result<StepChoice> {
        Ok(StepChoice {
            t: self.0,
            f_evals: 0,
        })
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Backtracking(pub BtlsConfig);

impl StepRule for Backtracking {
    fn choose(&mut self, ctx: &StepContext<'_>) -> Result<StepChoice> {
        let out = btls(ctx.objective, ctx.x, ctx.fx, ctx.d, ctx.g, &self.0)?;
        if out.warning {
            log::debug!("line search fell back to t = {}", out.t);
        }
        Ok(StepChoice {
            t: out.t,
            f_evals: out.f_evals,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PolicyStep<'p>(pub &'p PolicyParams);

impl StepRule for PolicyStep<'_> {
    fn choose(&mut self, ctx: &StepContext<'_>) -> Result<StepChoice> {
        let out = self.0.step(ctx.d, ctx.g, ctx.s_prev, ctx.y_prev)?;
        Ok(StepChoice {
            t: out.t,
            f_evals: 0,
        })
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const RMSPROP_DECAY: f64 = 0.99;
pub const RMSPROP_EPS: f64 = 1e-8;
pub const ADADELTA_DECAY: f64 = 0.95;
pub const ADADELTA_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u32,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn steps(&self) -> u32 {
        self.step
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// Returns `-lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn update(&mut self, g: &DenseVector, lr: f64) -> Result<DenseVector> {
        ensure_len(self.m.len(), g.len())?;
        self.step += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
        let delta = g
            .iter()
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
            .map(|(gi, (m, v))| {
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * gi;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * gi * gi;
                -lr * (*m / bc1) / ((*v / bc2).sqrt() + ADAM_EPS)
            })
            .collect();
        Ok(DenseVector::from_raw(delta))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmsPropState {
    avg: Vec<f64>,
    step: u32,
}

impl RmsPropState {
    pub fn new(n: usize) -> Self {
        Self {
            avg: vec![0.0; n],
            step: 0,
        }
    }

    /// Returns `-lr * g / (sqrt(avg) + eps)`.
    pub fn update(&mut self, g: &DenseVector, lr: f64) -> Result<DenseVector> {
        ensure_len(self.avg.len(), g.len())?;
        self.step += 1;
        let delta = g
            .iter()
            .zip(self.avg.iter_mut())
            .map(|(gi, a)| {
                *a = RMSPROP_DECAY * *a + (1.0 - RMSPROP_DECAY) * gi * gi;
                -lr * gi / (a.sqrt() + RMSPROP_EPS)
            })
            .collect();
        Ok(DenseVector::from_raw(delta))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdadeltaState {
    sq_grad: Vec<f64>,
    sq_delta: Vec<f64>,
    step: u32,
}

impl AdadeltaState {
    pub fn new(n: usize) -> Self {
        Self {
            sq_grad: vec![0.0; n],
            sq_delta: vec![0.0; n],
            step: 0,
        }
    }

    pub fn steps(&self) -> u32 {
        self.step
    }

    /// One ADADELTA step with learning-rate multiplier 1.
    pub fn update(&mut self, grad: &[f64]) -> Result<Vec<f64>> {
        ensure_len(self.sq_grad.len(), grad.len())?;
        self.step += 1;
        Ok(grad
            .iter()
            .zip(self.sq_grad.iter_mut().zip(self.sq_delta.iter_mut()))
            .map(|(gi, (eg, ed))| {
                *eg = ADADELTA_DECAY * *eg + (1.0 - ADADELTA_DECAY) * gi * gi;
                let delta = -((*ed + ADADELTA_EPS).sqrt() / (*eg + ADADELTA_EPS).sqrt()) * gi;
                *ed = ADADELTA_DECAY * *ed + (1.0 - ADADELTA_DECAY) * delta * delta;
                delta
            })
            .collect())
    }
}
