//! The learned step-size policy.
//!
//! Given the L-BFGS direction `d`, the gradient `g` and the previous
//! correction pair `(s, y)`, the policy
//!
//! 1. forms the 4x4 Gram matrix of `[d g s y]`, negates its three
//!    superdiagonal entries and maps every entry through `ln(max(x, eps))`
//!    (the 16 "dotln" features `u0`);
//! 2. applies two parallel affine layers, `u1 = W01 u0 + b01` and
//!    `u2 = W02 u0 + b02`;
//! 3. projects `u1` onto `u2` and clips the scalar to `[tau_min, tau_max]`,
//!    giving the log-step `tau`;
//! 4. returns `t = exp(tau)`.
//!
//! The policy sees its inputs only through inner products, so it does not
//! depend on the problem dimension. A tape-recorded version of the same
//! pipeline is used by the trainer.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::numcore::{dot, DenseVector, NodeId, Rng, Tape};

pub const FEATURES: usize = 16;
pub const DEFAULT_HIDDEN: usize = 6;
pub const DEFAULT_TAU_MIN: f64 = -3.0;
pub const DEFAULT_TAU_MAX: f64 = 0.0;
/// Floor applied before the logarithm in the feature map.
pub const DOTLN_EPS: f64 = 1e-8;
/// Guard added to `u2'u2` in the projection.
pub const PROJECTION_EPS: f64 = 1e-12;
pub const FORMAT_VERSION: u32 = 1;

/// Log-domain Gram features of `(d, g, s, y)`, row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector(pub [f64; FEATURES]);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDecision {
    /// Log-step size, inside `[tau_min, tau_max]`.
    pub tau: f64,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    hidden: usize,
    /// Row-major `hidden x 16`.
    pub w01: Vec<f64>,
    pub b01: Vec<f64>,
    pub w02: Vec<f64>,
    pub b02: Vec<f64>,
    pub tau_min: f64,
    pub tau_max: f64,
}

/// Gram entries of `[d g s y]` with the superdiagonal negated, before the log.
pub fn signed_gram(d: &[f64], g: &[f64], s: &[f64], y: &[f64]) -> Result<[f64; FEATURES]> {
    let n = d.len();
    for v in [g, s, y] {
        ensure_len(n, v.len())?;
    }
    let cols = [d, g, s, y];
    let mut x = [0.0; FEATURES];
    for i in 0..4 {
        for j in i..4 {
            let v = dot(cols[i], cols[j]);
            x[4 * i + j] = v;
            x[4 * j + i] = v;
        }
    }
    for i in 0..3 {
        x[4 * i + i + 1] = -x[4 * i + i + 1];
    }
    Ok(x)
}

pub fn dotln(
    d: &DenseVector,
    g: &DenseVector,
    s_prev: &DenseVector,
    y_prev: &DenseVector,
    eps: f64,
) -> Result<FeatureVector> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "dotln eps must be positive, got {eps}"
        )));
    }
    let mut x = signed_gram(d, g, s_prev, y_prev)?;
    for v in &mut x {
        *v = v.max(eps).ln();
    }
    Ok(FeatureVector(x))
}

/// `clip((u2'u1) / (u2'u2 + 1e-12), tau_min, tau_max)`.
pub fn project_clip(u1: &[f64], u2: &[f64], tau_min: f64, tau_max: f64) -> f64 {
    // Same operation order as the tape recording, so both paths agree bitwise.
    let raw = dot(u2, u1) * (1.0 / (dot(u2, u2) + PROJECTION_EPS));
    raw.max(tau_min).min(tau_max)
}

/// Tape nodes holding the trainable policy parameters.
#[derive(Debug, Clone, Copy)]
pub struct PolicyNodes {
    pub w01: NodeId,
    pub b01: NodeId,
    pub w02: NodeId,
    pub b02: NodeId,
}

/// Tape nodes of one recorded policy evaluation.
#[derive(Debug, Clone, Copy)]
pub struct RecordedStep {
    pub tau: NodeId,
    pub t: NodeId,
}

impl PolicyParams {
    /// All-zero parameters with `hidden` units and default bounds.
    pub fn zeros(hidden: usize) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::InvalidArgument(
                "policy needs at least one hidden unit".into(),
            ));
        }
        Ok(Self {
            hidden,
            w01: vec![0.0; hidden * FEATURES],
            b01: vec![0.0; hidden],
            w02: vec![0.0; hidden * FEATURES],
            b02: vec![0.0; hidden],
            tau_min: DEFAULT_TAU_MIN,
            tau_max: DEFAULT_TAU_MAX,
        })
    }

    /// Training start point: weights i.i.d. normal with standard deviation
    /// 0.1, biases zero except `b02 = e1` so that `u2` is not degenerate.
    pub fn init_random(hidden: usize, rng: &mut Rng) -> Result<Self> {
        let mut p = Self::zeros(hidden)?;
        for w in p.w01.iter_mut().chain(p.w02.iter_mut()) {
            *w = 0.1 * rng.normal();
        }
        p.b02[0] = 1.0;
        Ok(p)
    }

    /// Parameters that make the policy output `cos(phi)`, the cosine between
    /// `d` and `-g`, whenever it lies in `[exp(tau_min), 1]`.
    pub fn cosphi(tau_min: f64) -> Result<Self> {
        let mut p = Self::zeros(1)?;
        p.w01[1] = 1.0; // ln(-d'g)
        p.w01[0] = -0.5; // ln(d'd)
        p.w01[5] = -0.5; // ln(g'g)
        p.b02[0] = 1.0;
        p.tau_min = tau_min;
        p.tau_max = 0.0;
        p.validate()?;
        Ok(p)
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.hidden;
        let shape_ok = h > 0
            && self.w01.len() == h * FEATURES
            && self.w02.len() == h * FEATURES
            && self.b01.len() == h
            && self.b02.len() == h;
        if !shape_ok {
            return Err(Error::PolicyFormat(format!(
                "parameter shapes do not match n_h = {h}"
            )));
        }
        if !(self.tau_min < self.tau_max) {
            return Err(Error::PolicyFormat(format!(
                "tau_m ({}) must be below tau_M ({})",
                self.tau_min, self.tau_max
            )));
        }
        let finite = self
            .w01
            .iter()
            .chain(&self.b01)
            .chain(&self.w02)
            .chain(&self.b02)
            .chain([&self.tau_min, &self.tau_max])
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::PolicyFormat("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn layers(&self, u0: &FeatureVector) -> (Vec<f64>, Vec<f64>) {
        let affine = |w: &[f64], b: &[f64]| -> Vec<f64> {
            (0..self.hidden)
                .map(|i| b[i] + dot(&w[i * FEATURES..(i + 1) * FEATURES], &u0.0))
                .collect()
        };
        (affine(&self.w01, &self.b01), affine(&self.w02, &self.b02))
    }

    pub fn step(
        &self,
        d: &DenseVector,
        g: &DenseVector,
        s_prev: &DenseVector,
        y_prev: &DenseVector,
    ) -> Result<StepDecision> {
        let u0 = dotln(d, g, s_prev, y_prev, DOTLN_EPS)?;
        let (u1, u2) = self.layers(&u0);
        let tau = project_clip(&u1, &u2, self.tau_min, self.tau_max);
        if !tau.is_finite() {
            return Err(Error::NonFinite("policy log-step".into()));
        }
        Ok(StepDecision { tau, t: tau.exp() })
    }

    /// Number of trainable entries (`W01, b01, W02, b02`; the bounds are frozen).
    pub fn trainable_len(&self) -> usize {
        2 * self.hidden * (FEATURES + 1)
    }

    /// Trainable entries in the order `W01, b01, W02, b02`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.trainable_len());
        out.extend_from_slice(&self.w01);
        out.extend_from_slice(&self.b01);
        out.extend_from_slice(&self.w02);
        out.extend_from_slice(&self.b02);
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        ensure_len(self.trainable_len(), flat.len())?;
        let (hw, h) = (self.hidden * FEATURES, self.hidden);
        let (w01, rest) = flat.split_at(hw);
        let (b01, rest) = rest.split_at(h);
        let (w02, b02) = rest.split_at(hw);
        self.w01.copy_from_slice(w01);
        self.b01.copy_from_slice(b01);
        self.w02.copy_from_slice(w02);
        self.b02.copy_from_slice(b02);
        Ok(())
    }

    pub fn record_params(&self, tape: &mut Tape) -> PolicyNodes {
        PolicyNodes {
            w01: tape.leaf(self.w01.clone()),
            b01: tape.leaf(self.b01.clone()),
            w02: tape.leaf(self.w02.clone()),
            b02: tape.leaf(self.b02.clone()),
        }
    }

    /// Gradient w.r.t. the trainable entries, flattened like [`Self::to_flat`].
    pub fn flat_gradient(&self, nodes: &PolicyNodes, adj: &crate::numcore::Adjoints) -> Vec<f64> {
        let (hw, h) = (self.hidden * FEATURES, self.hidden);
        let mut out = adj.get_or_zeros(nodes.w01, hw);
        out.extend(adj.get_or_zeros(nodes.b01, h));
        out.extend(adj.get_or_zeros(nodes.w02, hw));
        out.extend(adj.get_or_zeros(nodes.b02, h));
        out
    }

    /// Records the full pipeline on `tape`. `d, g, s, y` may be leaves,
    /// constants or derived nodes.
    pub fn record_step(
        &self,
        tape: &mut Tape,
        params: &PolicyNodes,
        d: NodeId,
        g: NodeId,
        s: NodeId,
        y: NodeId,
    ) -> Result<RecordedStep> {
        let cols = [d, g, s, y];
        let mut gram = [cols[0]; FEATURES];
        for i in 0..4 {
            for j in i..4 {
                let v = tape.dot(cols[i], cols[j])?;
                gram[4 * i + j] = v;
                gram[4 * j + i] = v;
            }
        }
        for i in 0..3 {
            gram[4 * i + i + 1] = tape.neg(gram[4 * i + i + 1]);
        }
        let x = tape.concat(&gram);
        let floored = tape.max_const(x, DOTLN_EPS);
        let u0 = tape.ln(floored);
        let u1 = tape.affine(params.w01, u0, params.b01, self.hidden, FEATURES)?;
        let u2 = tape.affine(params.w02, u0, params.b02, self.hidden, FEATURES)?;
        let num = tape.dot(u2, u1)?;
        let sq = tape.dot(u2, u2)?;
        let den = tape.constant(vec![PROJECTION_EPS]);
        let den = tape.add(sq, den)?;
        let inv = tape.recip(den);
        let raw = tape.scale(num, inv)?;
        let tau = tape.clip(raw, self.tau_min, self.tau_max)?;
        let t = tape.exp(tau);
        if !tape.scalar(t)?.is_finite() {
            return Err(Error::NonFinite("policy step on tape".into()));
        }
        Ok(RecordedStep { tau, t })
    }

    pub fn to_document(&self) -> PolicyDocument {
        let rows = |w: &[f64]| w.chunks(FEATURES).map(<[f64]>::to_vec).collect();
        PolicyDocument {
            format_version: FORMAT_VERSION,
            n_h: self.hidden,
            tau_m: self.tau_min,
            tau_max: self.tau_max,
            w01: rows(&self.w01),
            b01: self.b01.clone(),
            w02: rows(&self.w02),
            b02: self.b02.clone(),
        }
    }

    pub fn from_document(doc: PolicyDocument) -> Result<Self> {
        if doc.format_version != FORMAT_VERSION {
            return Err(Error::PolicyFormat(format!(
                "unsupported format_version {} (expected {FORMAT_VERSION})",
                doc.format_version
            )));
        }
        let h = doc.n_h;
        let flatten = |name: &str, rows: Vec<Vec<f64>>| -> Result<Vec<f64>> {
            if rows.len() != h || rows.iter().any(|r| r.len() != FEATURES) {
                return Err(Error::PolicyFormat(format!(
                    "{name} must be {h} rows of {FEATURES} entries"
                )));
            }
            Ok(rows.into_iter().flatten().collect())
        };
        let p = Self {
            hidden: h,
            w01: flatten("W01", doc.w01)?,
            b01: doc.b01,
            w02: flatten("W02", doc.w02)?,
            b02: doc.b02,
            tau_min: doc.tau_m,
            tau_max: doc.tau_max,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: PolicyDocument =
            serde_json::from_str(text).map_err(|e| Error::PolicyFormat(e.to_string()))?;
        Self::from_document(doc)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// On-disk policy file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyDocument {
    pub format_version: u32,
    pub n_h: usize,
    pub tau_m: f64,
    #[serde(rename = "tau_M")]
    pub tau_max: f64,
    #[serde(rename = "W01")]
    pub w01: Vec<Vec<f64>>,
    pub b01: Vec<f64>,
    #[serde(rename = "W02")]
    pub w02: Vec<Vec<f64>>,
    pub b02: Vec<f64>,
}
