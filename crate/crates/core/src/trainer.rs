//! Truncated backpropagation through time for the policy parameters.
//!
//! An unroll records `K` policy-driven L-BFGS steps on a [`Tape`]. Gradients
//! of the objective are tape constants, as are the gradient differences `y`;
//! the steps `s` are tape nodes, so the parameters influence later directions
//! through the stored pairs and later policy features. Each loss term
//! `f(x_{k+1})` enters as an external node linearized with `g_{k+1}`.

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::lbfgs::{LbfgsHistory, DEFAULT_MEMORY};
use crate::numcore::{norm2, DenseVector, NodeId, Rng, Tape};
use crate::policy::{PolicyNodes, PolicyParams};
use crate::steppers::AdadeltaState;
use crate::tasks::{Objective, TaskInstance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Unroll length.
    pub k: usize,
    /// Outer steps per trajectory.
    pub t: usize,
    pub epochs: usize,
    /// Loss weights, one per unrolled step. Empty means all ones.
    pub weights: Vec<f64>,
    /// A trajectory is restarted once `||g||` falls below this.
    pub resample_eps: f64,
    /// Standard deviation of freshly drawn starting points.
    pub x0_scale: f64,
    pub memory: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 50,
            t: 8,
            epochs: 50,
            weights: Vec::new(),
            resample_eps: 1e-10,
            x0_scale: 1.0,
            memory: DEFAULT_MEMORY,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.t == 0 || self.memory == 0 {
            return Err(Error::Config("k, t and memory must be at least 1".into()));
        }
        if !self.weights.is_empty() && self.weights.len() != self.k {
            return Err(Error::Config(format!(
                "{} weights given for k = {}",
                self.weights.len(),
                self.k
            )));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config(
                "weights must be finite and nonnegative".into(),
            ));
        }
        if !(self.resample_eps >= 0.0) || !(self.x0_scale > 0.0) {
            return Err(Error::Config(
                "resample_eps must be >= 0 and x0_scale > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn resolved_weights(&self) -> Vec<f64> {
        if self.weights.is_empty() {
            vec![1.0; self.k]
        } else {
            self.weights.clone()
        }
    }
}

/// Inner optimizer state carried from one outer step to the next.
#[derive(Debug, Clone)]
pub struct InnerState {
    pub x: DenseVector,
    pub f: f64,
    pub g: DenseVector,
    pub history: LbfgsHistory,
    /// Most recent step and gradient change, accepted into the history or not.
    pub s_prev: DenseVector,
    pub y_prev: DenseVector,
}

impl InnerState {
    pub fn start(task: &dyn Objective, x0: DenseVector, memory: usize) -> Result<Self> {
        ensure_len(task.dim(), x0.len())?;
        let (f, g) = task.value_grad(&x0)?;
        let n = x0.len();
        Ok(Self {
            x: x0,
            f,
            g,
            history: LbfgsHistory::new(memory)?,
            s_prev: DenseVector::zeros(n),
            y_prev: DenseVector::zeros(n),
        })
    }
}

/// What the unroll observed at each step, enough to replay it with the
/// parameters changed but every `g`, `y` and skip decision held fixed.
#[derive(Debug, Clone)]
pub struct UnrollTrace {
    /// Gradients `g_0 .. g_steps`.
    pub grads: Vec<DenseVector>,
    /// Objective values `f_1 .. f_steps`.
    pub values: Vec<f64>,
    /// Iterates `x_1 .. x_steps`.
    pub iterates: Vec<DenseVector>,
    /// Whether the pair of step `k` entered the history.
    pub accepted: Vec<bool>,
    pub steps: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct UnrollResult {
    /// `sum_k w_k f(x_{k+1})`.
    pub loss: f64,
    pub grad_theta: Vec<f64>,
    /// State after the last completed step; the input state when diverged.
    pub state: InnerState,
    pub diverged: bool,
    /// `||g||` dropped below the resample threshold before `K` steps.
    pub converged: bool,
    pub trace: UnrollTrace,
}

struct TapePair {
    s: NodeId,
    y: NodeId,
    rho: NodeId,
}

fn record_two_loop(tape: &mut Tape, pairs: &VecDeque<TapePair>, g: NodeId) -> Result<NodeId> {
    let mut q = g;
    let mut alphas = Vec::with_capacity(pairs.len());
    for p in pairs.iter().rev() {
        let sq = tape.dot(p.s, q)?;
        let alpha = tape.scale(sq, p.rho)?;
        let step = tape.scale(p.y, alpha)?;
        q = tape.sub(q, step)?;
        alphas.push(alpha);
    }
    alphas.reverse();
    let mut r = match pairs.back() {
        Some(p) => {
            let sy = tape.dot(p.s, p.y)?;
            let sy = tape.abs(sy);
            let yy = tape.dot(p.y, p.y)?;
            let inv_yy = tape.recip(yy);
            let gamma = tape.scale(sy, inv_yy)?;
            tape.scale(q, gamma)?
        }
        None => q,
    };
    for (p, alpha) in pairs.iter().zip(alphas) {
        let yr = tape.dot(p.y, r)?;
        let beta = tape.scale(yr, p.rho)?;
        let coef = tape.sub(alpha, beta)?;
        let step = tape.scale(p.s, coef)?;
        r = tape.add(r, step)?;
    }
    Ok(tape.neg(r))
}

fn is_divergence(e: &Error) -> bool {
    matches!(e, Error::NonFinite(_))
}

/// Unrolls `k` steps from `state` and differentiates the weighted loss with
/// respect to the trainable policy entries.
pub fn unroll(
    params: &PolicyParams,
    task: &dyn Objective,
    state: &InnerState,
    k: usize,
    weights: &[f64],
    resample_eps: f64,
) -> Result<UnrollResult> {
    ensure_len(k, weights.len())?;
    ensure_len(task.dim(), state.x.len())?;
    match unroll_inner(params, task, state, k, weights, resample_eps) {
        Err(e) if is_divergence(&e) => {
            log::debug!("unroll diverged: {e}");
            Ok(UnrollResult {
                loss: f64::NAN,
                grad_theta: vec![0.0; params.trainable_len()],
                state: state.clone(),
                diverged: true,
                converged: false,
                trace: UnrollTrace {
                    grads: Vec::new(),
                    values: Vec::new(),
                    iterates: Vec::new(),
                    accepted: Vec::new(),
                    steps: Vec::new(),
                },
            })
        }
        other => other,
    }
}

fn unroll_inner(
    params: &PolicyParams,
    task: &dyn Objective,
    state: &InnerState,
    k: usize,
    weights: &[f64],
    resample_eps: f64,
) -> Result<UnrollResult> {
    let mut tape = Tape::new();
    let theta: PolicyNodes = params.record_params(&mut tape);

    let mut pairs: VecDeque<TapePair> = VecDeque::with_capacity(state.history.memory());
    let mut history = state.history.clone();
    for p in state.history.pairs() {
        let s = tape.constant(p.s.to_vec());
        let y = tape.constant(p.y.to_vec());
        let rho = tape.constant(vec![p.rho]);
        pairs.push_back(TapePair { s, y, rho });
    }

    let mut x = tape.constant(state.x.to_vec());
    let mut g_val = state.g.clone();
    let mut f_val = state.f;
    let mut s_prev = tape.constant(state.s_prev.to_vec());
    let mut y_prev = tape.constant(state.y_prev.to_vec());
    let mut s_prev_val = state.s_prev.clone();
    let mut y_prev_val = state.y_prev.clone();
    let mut loss_terms = Vec::with_capacity(k);
    let mut trace = UnrollTrace {
        grads: vec![g_val.clone()],
        values: Vec::with_capacity(k),
        iterates: Vec::with_capacity(k),
        accepted: Vec::with_capacity(k),
        steps: Vec::with_capacity(k),
    };
    let mut converged = norm2(&g_val) < resample_eps;

    for &w in weights.iter().take(k) {
        if converged {
            break;
        }
        let g = tape.constant(g_val.to_vec());
        let d = record_two_loop(&mut tape, &pairs, g)?;
        let step = params.record_step(&mut tape, &theta, d, g, s_prev, y_prev)?;
        let dx = tape.scale(d, step.t)?;
        let x_next = tape.add(x, dx)?;

        let x_next_val = DenseVector::new(tape.value(x_next).to_vec())
            .map_err(|_| Error::NonFinite("iterate".into()))?;
        let (f_next, g_next) = task.value_grad(&x_next_val)?;
        let term = tape.external(x_next, f_next, g_next.to_vec())?;
        loss_terms.push(tape.scale_const(term, w));

        let s = tape.sub(x_next, x)?;
        let y_val = g_next.sub(&g_val)?;
        let s_val = DenseVector::from_raw(tape.value(s).to_vec());
        let y = tape.constant(y_val.to_vec());
        let accepted = history.push_pair(s_val.clone(), y_val.clone())?;
        if accepted {
            let sy = tape.dot(s, y)?;
            let rho = tape.recip(sy);
            if pairs.len() == history.memory() {
                pairs.pop_front();
            }
            pairs.push_back(TapePair { s, y, rho });
        }

        trace.steps.push(tape.scalar(step.t)?);
        trace.accepted.push(accepted);
        trace.values.push(f_next);
        trace.iterates.push(x_next_val.clone());
        trace.grads.push(g_next.clone());

        x = x_next;
        s_prev = s;
        y_prev = y;
        s_prev_val = s_val;
        y_prev_val = y_val;
        g_val = g_next;
        f_val = f_next;
        converged = norm2(&g_val) < resample_eps;
    }

    let (loss, grad_theta) = if loss_terms.is_empty() {
        (0.0, vec![0.0; params.trainable_len()])
    } else {
        let root = tape.concat(&loss_terms);
        let ones = tape.constant(vec![1.0; loss_terms.len()]);
        let root = tape.dot(root, ones)?;
        let loss = tape.scalar(root)?;
        let adj = tape.backward(root)?;
        (loss, params.flat_gradient(&theta, &adj))
    };
    if !loss.is_finite() || grad_theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("unroll loss or gradient".into()));
    }

    let x_val = DenseVector::from_raw(tape.value(x).to_vec());
    Ok(UnrollResult {
        loss,
        grad_theta,
        state: InnerState {
            x: x_val,
            f: f_val,
            g: g_val,
            history,
            s_prev: s_prev_val,
            y_prev: y_prev_val,
        },
        diverged: false,
        converged,
        trace,
    })
}

/// Weighted loss of `k` policy-driven steps evaluated without a tape.
/// Stops early below `resample_eps` like [`unroll`]; infinite on divergence.
pub fn rollout_loss(
    params: &PolicyParams,
    task: &dyn Objective,
    x0: &DenseVector,
    weights: &[f64],
    memory: usize,
    resample_eps: f64,
) -> Result<f64> {
    let attempt = || -> Result<f64> {
        let mut st = InnerState::start(task, x0.clone(), memory)?;
        let mut loss = 0.0;
        for &w in weights {
            if norm2(&st.g) < resample_eps {
                break;
            }
            let d = st.history.two_loop(&st.g)?.into_inner();
            let t = params.step(&d, &st.g, &st.s_prev, &st.y_prev)?.t;
            let mut x = st.x.clone();
            x.axpy(t, &d)?;
            x.ensure_finite("iterate")?;
            let (f, g) = task.value_grad(&x)?;
            loss += w * f;
            let s = x.sub(&st.x)?;
            let y = g.sub(&st.g)?;
            st.history.push_pair(s.clone(), y.clone())?;
            st = InnerState {
                x,
                f,
                g,
                history: st.history,
                s_prev: s,
                y_prev: y,
            };
        }
        Ok(loss)
    };
    match attempt() {
        Err(e) if is_divergence(&e) => Ok(f64::INFINITY),
        other => other,
    }
}

/// Mean of [`rollout_loss`] over `instances`, each started from its own `x0`.
pub fn mean_unroll_loss(
    params: &PolicyParams,
    instances: &[TaskInstance],
    cfg: &TrainConfig,
) -> Result<f64> {
    if instances.is_empty() {
        return Err(Error::InvalidArgument("empty task set".into()));
    }
    let weights = cfg.resolved_weights();
    let losses: Vec<f64> = instances
        .par_iter()
        .map(|inst| {
            rollout_loss(
                params,
                inst.task.as_ref(),
                &inst.x0,
                &weights,
                cfg.memory,
                cfg.resample_eps,
            )
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// One JSON-lines record per outer step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub epoch: usize,
    pub task_id: String,
    pub outer_step: usize,
    pub loss: Option<f64>,
    pub grad_norm: Option<f64>,
    pub diverged: bool,
    /// `||x||` at the start and end of the unroll, for tracing carry-over.
    pub x_start_norm: f64,
    pub x_end_norm: f64,
    /// The next outer step starts from a freshly drawn point.
    pub resampled: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    pub log: Vec<TrainLogRecord>,
}

/// ADADELTA training over `tasks`, visited in a seeded order each epoch.
/// Every (epoch, task) pair runs one trajectory of `cfg.t` outer steps that
/// carries `x` and the L-BFGS history from one unroll to the next.
pub fn train(
    init: &PolicyParams,
    tasks: &[TaskInstance],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    init.validate()?;
    if tasks.is_empty() {
        return Err(Error::InvalidArgument("empty task set".into()));
    }
    let weights = cfg.resolved_weights();
    let mut params = init.clone();
    let mut flat = params.to_flat();
    let mut outer = AdadeltaState::new(flat.len());
    let mut rng = Rng::new(cfg.seed);
    let mut log = Vec::with_capacity(cfg.epochs * tasks.len() * cfg.t);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..tasks.len()).collect();
        rng.shuffle(&mut order);
        for &ti in &order {
            let task = tasks[ti].task.as_ref();
            let fresh = |rng: &mut Rng| -> Result<InnerState> {
                InnerState::start(task, rng.randn(task.dim(), cfg.x0_scale)?, cfg.memory)
            };
            let mut state = fresh(&mut rng)?;
            for outer_step in 0..cfg.t {
                let res = unroll(&params, task, &state, cfg.k, &weights, cfg.resample_eps)?;
                let x_start_norm = state.x.norm2();
                let resampled = res.diverged || res.converged;
                log.push(TrainLogRecord {
                    epoch,
                    task_id: tasks[ti].task.id.clone(),
                    outer_step,
                    loss: (!res.diverged).then_some(res.loss),
                    grad_norm: (!res.diverged).then(|| norm2(&res.grad_theta)),
                    diverged: res.diverged,
                    x_start_norm,
                    x_end_norm: res.state.x.norm2(),
                    resampled,
                });
                if !res.diverged {
                    let delta = outer.update(&res.grad_theta)?;
                    for (p, d) in flat.iter_mut().zip(&delta) {
                        *p += d;
                    }
                    params.set_flat(&flat)?;
                }
                state = if resampled {
                    fresh(&mut rng)?
                } else {
                    res.state
                };
            }
        }
        log::info!(
            "epoch {epoch}: mean loss {:.6e}",
            epoch_mean(&log, epoch).unwrap_or(f64::NAN)
        );
    }
    Ok(TrainOutcome { params, log })
}

/// Same as [`train`], starting from previously trained parameters.
pub fn warm_start_train(
    pretrained: &PolicyParams,
    tasks: &[TaskInstance],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train(pretrained, tasks, cfg)
}

/// Mean loss of the non-diverged outer steps of one epoch.
pub fn epoch_mean(log: &[TrainLogRecord], epoch: usize) -> Option<f64> {
    let losses: Vec<f64> = log
        .iter()
        .filter(|r| r.epoch == epoch)
        .filter_map(|r| r.loss)
        .collect();
    (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64)
}

pub fn write_log(path: impl AsRef<Path>, log: &[TrainLogRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    for rec in log {
        serde_json::to_writer(&mut out, rec)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<TrainLogRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
