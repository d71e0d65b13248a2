//! Reference computations used to check the fast paths.
//!
//! * [`dense_bfgs_direction`] forms the inverse-Hessian approximation
//!   explicitly and is compared against the two-loop recursion.
//! * [`objective_fd_error`] and [`tape_fd_error`] compare analytic or tape
//!   gradients with central differences.
//! * [`frozen_replay_loss`] re-executes an unroll with every objective
//!   gradient, gradient difference and skip decision held at the values seen
//!   by the original run. Its central differences are the reference for the
//!   unroll gradient.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{ensure_len, Error, Result};
use crate::lbfgs::LbfgsHistory;
use crate::numcore::{dot, DenseVector, NodeId, Rng, Tape};
use crate::policy::{dotln, PolicyParams, DOTLN_EPS, PROJECTION_EPS};
use crate::tasks::{make_synthetic_family, Objective, SyntheticKind, SyntheticOptions};
use crate::trainer::{unroll, InnerState, UnrollResult};

/// `-H g` with `H` built by the dense BFGS inverse update over `pairs`
/// (oldest first), seeded with `gamma I` from the newest pair.
pub fn dense_bfgs_direction(
    pairs: &[(DenseVector, DenseVector)],
    g: &DenseVector,
) -> Result<DenseVector> {
    let n = g.len();
    let gamma = match pairs.last() {
        Some((s, y)) => dot(s, y).abs() / dot(y, y),
        None => 1.0,
    };
    let mut h = DMatrix::<f64>::identity(n, n) * gamma;
    let eye = DMatrix::<f64>::identity(n, n);
    for (s, y) in pairs {
        ensure_len(n, s.len())?;
        ensure_len(n, y.len())?;
        let sv = DVector::from_column_slice(s);
        let yv = DVector::from_column_slice(y);
        let rho = 1.0 / sv.dot(&yv);
        let left = &eye - (&sv * yv.transpose()) * rho;
        let right = &eye - (&yv * sv.transpose()) * rho;
        h = &left * h * &right + (&sv * sv.transpose()) * rho;
    }
    let d = -(h * DVector::from_column_slice(g));
    Ok(DenseVector::from_raw(d.as_slice().to_vec()))
}

/// `max_i |a_i - b_i| / max(|b|_inf, tiny)`.
pub fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let scale = b
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / scale)
        .fold(0.0, f64::max)
}

/// Entrywise relative error with denominator `max(|a_i|, |b_i|, floor)`.
pub fn entrywise_rel_err(analytic: &[f64], reference: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub fn central_difference(
    f: &mut dyn FnMut(&[f64]) -> Result<f64>,
    x: &[f64],
    h: f64,
) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let fp = f(&probe)?;
            probe[i] = x[i] - h;
            let fm = f(&probe)?;
            probe[i] = x[i];
            Ok((fp - fm) / (2.0 * h))
        })
        .collect()
}

/// Worst entrywise relative error between `value_grad` and central
/// differences. Entries far below the gradient's largest entry are compared
/// against `1e-3 |g|_inf` since their differences are mostly roundoff.
pub fn objective_fd_error(obj: &dyn Objective, x: &DenseVector, h: f64) -> Result<f64> {
    let (_, g) = obj.value_grad(x)?;
    let fd = central_difference(&mut |p| obj.value(&DenseVector::new(p.to_vec())?), x, h)?;
    Ok(entrywise_rel_err(&g, &fd, fd_floor(&g)))
}

fn fd_floor(grad: &[f64]) -> f64 {
    let scale = grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    (1e-3 * scale).max(1e-6)
}

/// Worst entrywise relative error between tape adjoints of a scalar function
/// of one leaf and central differences of the same recording, with the same
/// floor as [`objective_fd_error`].
pub fn tape_fd_error(
    build: &dyn Fn(&mut Tape, NodeId) -> Result<NodeId>,
    x: &[f64],
    h: f64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let leaf = tape.leaf(x.to_vec());
    let root = build(&mut tape, leaf)?;
    let adj = tape.backward(root)?.get_or_zeros(leaf, x.len());
    let fd = central_difference(
        &mut |p| {
            let mut t = Tape::new();
            let l = t.leaf(p.to_vec());
            let r = build(&mut t, l)?;
            t.scalar(r)
        },
        x,
        h,
    )?;
    Ok(entrywise_rel_err(&adj, &fd, fd_floor(&adj)))
}

/// Unclipped log-step `u2'u1 / (u2'u2 + eps)`.
pub fn raw_log_step(
    params: &PolicyParams,
    d: &DenseVector,
    g: &DenseVector,
    s: &DenseVector,
    y: &DenseVector,
) -> Result<f64> {
    let u0 = dotln(d, g, s, y, DOTLN_EPS)?;
    let (u1, u2) = params.layers(&u0);
    Ok(dot(&u2, &u1) * (1.0 / (dot(&u2, &u2) + PROJECTION_EPS)))
}

/// Result of replaying an unroll under frozen gradients.
#[derive(Debug, Clone)]
pub struct Replay {
    pub loss: f64,
    /// The part of `loss` that depends on the parameters.
    pub linear: f64,
    /// Smallest distance of any raw log-step to a clip bound.
    pub clip_margin: f64,
}

fn frozen_two_loop(pairs: &[(DenseVector, DenseVector)], g: &DenseVector) -> DenseVector {
    let rho: Vec<f64> = pairs.iter().map(|(s, y)| 1.0 / dot(s, y)).collect();
    let mut q = g.clone();
    let mut alpha = vec![0.0; pairs.len()];
    for i in (0..pairs.len()).rev() {
        alpha[i] = rho[i] * dot(&pairs[i].0, &q);
        q.axpy(-alpha[i], &pairs[i].1)
            .expect("lengths checked by caller");
    }
    let gamma = pairs
        .last()
        .map_or(1.0, |(s, y)| dot(s, y).abs() / dot(y, y));
    let mut r = q.scale(gamma);
    for (i, (s, y)) in pairs.iter().enumerate() {
        let beta = rho[i] * dot(y, &r);
        r.axpy(alpha[i] - beta, s)
            .expect("lengths checked by caller");
    }
    r.scale(-1.0)
}

/// Re-runs the unroll recorded in `base` with parameters `params`. Objective
/// gradients, gradient differences and history decisions come from `base`;
/// each loss term is `f_k + g_k'(x'_k - x_k)`, the linearization the unroll
/// differentiates.
pub fn frozen_replay_loss(
    params: &PolicyParams,
    start: &InnerState,
    base: &UnrollResult,
    weights: &[f64],
) -> Result<Replay> {
    let tr = &base.trace;
    let mut pairs: Vec<(DenseVector, DenseVector)> = start
        .history
        .pairs()
        .map(|p| (p.s.clone(), p.y.clone()))
        .collect();
    let memory = start.history.memory();
    let mut x = start.x.clone();
    let mut s_prev = start.s_prev.clone();
    let mut y_prev = start.y_prev.clone();
    let mut lin = 0.0;
    let mut constant = 0.0;
    let mut margin = f64::INFINITY;
    #[allow(clippy::needless_range_loop)]
    for k in 0..tr.values.len() {
        let g = &tr.grads[k];
        let d = frozen_two_loop(&pairs, g);
        let raw = raw_log_step(params, &d, g, &s_prev, &y_prev)?;
        margin = margin
            .min((raw - params.tau_min).abs())
            .min((raw - params.tau_max).abs());
        let t = params.step(&d, g, &s_prev, &y_prev)?.t;
        let mut x_next = x.clone();
        x_next.axpy(t, &d)?;
        let offset = x_next.sub(&tr.iterates[k])?;
        constant += weights[k] * tr.values[k];
        lin += weights[k] * dot(&tr.grads[k + 1], &offset);
        let s = x_next.sub(&x)?;
        let y = tr.grads[k + 1].sub(g)?;
        if tr.accepted[k] {
            if pairs.len() == memory {
                pairs.remove(0);
            }
            pairs.push((s.clone(), y.clone()));
        }
        x = x_next;
        s_prev = s;
        y_prev = y;
    }
    Ok(Replay {
        loss: constant + lin,
        linear: lin,
        clip_margin: margin,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TbpttCheck {
    pub worst_rel_err: f64,
    pub clip_margin: f64,
    pub loss: f64,
}

/// Compares the unroll gradient with central differences of the frozen
/// replay, perturbing only the replay's linear part so that the constant
/// objective values cancel exactly.
pub fn tbptt_fd_check(
    params: &PolicyParams,
    task: &dyn Objective,
    start: &InnerState,
    k: usize,
    weights: &[f64],
    h: f64,
) -> Result<TbpttCheck> {
    let base = unroll(params, task, start, k, weights, 0.0)?;
    if base.diverged {
        return Err(Error::NonFinite(
            "unroll diverged during gradient check".into(),
        ));
    }
    let replay = frozen_replay_loss(params, start, &base, weights)?;
    let theta = params.to_flat();
    let mut probe = params.clone();
    let fd = central_difference(
        &mut |p| {
            probe.set_flat(p)?;
            Ok(frozen_replay_loss(&probe, start, &base, weights)?.linear)
        },
        &theta,
        h,
    )?;
    let scale = base.grad_theta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(TbpttCheck {
        worst_rel_err: entrywise_rel_err(&base.grad_theta, &fd, (1e-3 * scale).max(1e-10)),
        clip_margin: replay.clip_margin,
        loss: base.loss,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteResult {
    pub name: String,
    pub passed: bool,
    pub cases: usize,
    pub worst: f64,
    pub tolerance: f64,
}

/// Two-loop recursion against the dense BFGS recursion on random histories.
pub fn two_loop_suite(seeds: u64, base_seed: u64) -> Result<SuiteResult> {
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for seed in 0..seeds {
        let mut rng = Rng::new(base_seed.wrapping_add(seed));
        let n = 2 + rng.below(9);
        let m = 1 + rng.below(10);
        let pushes = m + rng.below(4);
        let (hist, pairs) = random_history(&mut rng, n, m, pushes)?;
        let g = rng.randn(n, 1.0)?;
        let d = hist.two_loop(&g)?;
        let oracle = dense_bfgs_direction(&pairs, &g)?;
        worst = worst.max(max_rel_diff(&d, &oracle));
        cases += 1;
    }
    Ok(SuiteResult {
        name: "two_loop_vs_dense_bfgs".into(),
        passed: worst <= 1e-10,
        cases,
        worst,
        tolerance: 1e-10,
    })
}

/// Builds a history from `pushes` random curvature pairs of an SPD matrix
/// and returns it with the retained pairs, oldest first.
pub fn random_history(
    rng: &mut Rng,
    n: usize,
    memory: usize,
    pushes: usize,
) -> Result<(LbfgsHistory, Vec<(DenseVector, DenseVector)>)> {
    let m = rng.randn(n * n, 1.0 / (n as f64).sqrt())?;
    let a = |v: &DenseVector| -> DenseVector {
        let mv: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| m[i * n + j] * v[j]).sum())
            .collect();
        let out = (0..n)
            .map(|j| (0..n).map(|i| m[i * n + j] * mv[i]).sum::<f64>() + 0.1 * v[j])
            .collect();
        DenseVector::from_raw(out)
    };
    let mut hist = LbfgsHistory::new(memory)?;
    for _ in 0..pushes {
        let s = rng.randn(n, 1.0)?;
        let y = a(&s);
        hist.push_pair(s, y)?;
    }
    let pairs = hist.pairs().map(|p| (p.s.clone(), p.y.clone())).collect();
    Ok((hist, pairs))
}

/// Central-difference step for the unroll check. Smaller steps are
/// dominated by roundoff in the replayed loss.
pub const TBPTT_FD_STEP: f64 = 1e-5;

/// Unroll gradients against the frozen replay on 3-dimensional quadratics.
/// Parameter draws whose raw log-steps come within `margin` of a clip bound
/// are redrawn.
pub fn tbptt_suite(draws: usize, seed: u64, margin: f64) -> Result<SuiteResult> {
    let tasks = make_synthetic_family(
        SyntheticKind::Quadratic,
        3,
        draws,
        seed,
        &SyntheticOptions::default(),
    )?;
    let mut rng = Rng::new(seed ^ 0x5eed);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for (i, inst) in tasks.iter().enumerate() {
        let k = 1 + i % 3;
        let weights = vec![1.0; k];
        let start = InnerState::start(inst.task.as_ref(), inst.x0.clone(), 5)?;
        let mut accepted = None;
        for _ in 0..200 {
            let params = PolicyParams::init_random(6, &mut rng)?;
            let base = unroll(&params, inst.task.as_ref(), &start, k, &weights, 0.0)?;
            if base.diverged {
                continue;
            }
            if frozen_replay_loss(&params, &start, &base, &weights)?.clip_margin > margin {
                accepted = Some(params);
                break;
            }
        }
        let params = accepted.ok_or_else(|| {
            Error::InvalidArgument("no parameter draw clear of the clip bounds".into())
        })?;
        let check = tbptt_fd_check(
            &params,
            inst.task.as_ref(),
            &start,
            k,
            &weights,
            TBPTT_FD_STEP,
        )?;
        worst = worst.max(check.worst_rel_err);
        cases += 1;
    }
    Ok(SuiteResult {
        name: "unroll_gradient_vs_frozen_replay".into(),
        passed: worst <= 1e-5,
        cases,
        worst,
        tolerance: 1e-5,
    })
}

/// Objective gradients of the synthetic families against central differences.
pub fn objective_suite(seed: u64) -> Result<SuiteResult> {
    let mut rng = Rng::new(seed);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for kind in [SyntheticKind::Quadratic, SyntheticKind::Logistic] {
        for inst in make_synthetic_family(kind, 8, 4, seed, &SyntheticOptions::default())? {
            for _ in 0..5 {
                let x = rng.randn(8, 1.0)?;
                worst = worst.max(objective_fd_error(inst.task.as_ref(), &x, 1e-6)?);
                cases += 1;
            }
        }
    }
    Ok(SuiteResult {
        name: "objective_gradients".into(),
        passed: worst <= 1e-5,
        cases,
        worst,
        tolerance: 1e-5,
    })
}

/// Every suite above with its default size.
pub fn run_all(seed: u64) -> Result<Vec<SuiteResult>> {
    Ok(vec![
        two_loop_suite(100, seed)?,
        objective_suite(seed)?,
        tbptt_suite(20, seed, 1e-3)?,
    ])
}
