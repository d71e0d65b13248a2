//! Correction-pair history and the L-BFGS two-loop recursion.
//!
//! Pairs with non-positive curvature `s'y <= 0` are never stored, which keeps
//! every `rho` and the initial scaling `gamma` positive and the implied
//! inverse-Hessian approximation positive definite.

use std::collections::VecDeque;
use std::ops::Deref;

use crate::error::{ensure_len, Error, Result};
use crate::numcore::{axpy, dot, DenseVector};

pub const DEFAULT_MEMORY: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionPair {
    pub s: DenseVector,
    pub y: DenseVector,
    /// `1 / (s'y)`, always positive.
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsHistory {
    memory: usize,
    // Oldest first.
    pairs: VecDeque<CorrectionPair>,
}

/// `d = -H g`; with an empty history this is exactly `-g`.
#[derive(Debug, Clone, PartialEq)]
pub struct Direction(DenseVector);

impl Direction {
    pub fn into_inner(self) -> DenseVector {
        self.0
    }
}

impl Deref for Direction {
    type Target = DenseVector;

    fn deref(&self) -> &DenseVector {
        &self.0
    }
}

impl Default for LbfgsHistory {
    fn default() -> Self {
        Self::new(DEFAULT_MEMORY).expect("default memory is positive")
    }
}

impl LbfgsHistory {
    pub fn new(memory: usize) -> Result<Self> {
        if memory == 0 {
            return Err(Error::InvalidArgument("L-BFGS memory must be >= 1".into()));
        }
        Ok(Self {
            memory,
            pairs: VecDeque::with_capacity(memory),
        })
    }

    pub fn memory(&self) -> usize {
        self.memory
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn clear(&mut self) {
        self.pairs.clear();
    }

    /// Stored pairs, oldest first.
    pub fn pairs(&self) -> impl DoubleEndedIterator<Item = &CorrectionPair> + ExactSizeIterator {
        self.pairs.iter()
    }

    pub fn newest(&self) -> Option<&CorrectionPair> {
        self.pairs.back()
    }

    /// Stores `(s, y)` when `s'y > 0`, evicting the oldest pair if full.
    /// Returns whether the pair was accepted.
    pub fn push_pair(&mut self, s: DenseVector, y: DenseVector) -> Result<bool> {
        ensure_len(s.len(), y.len())?;
        if let Some(p) = self.pairs.back() {
            ensure_len(p.s.len(), s.len())?;
        }
        let sy = dot(&s, &y);
        if !(sy > 0.0) || !sy.is_finite() {
            return Ok(false);
        }
        if self.pairs.len() == self.memory {
            self.pairs.pop_front();
        }
        self.pairs.push_back(CorrectionPair {
            s,
            y,
            rho: 1.0 / sy,
        });
        Ok(true)
    }

    /// `|s'y| / (y'y)` of the newest stored pair, 1 when empty.
    pub fn gamma(&self) -> f64 {
        match self.pairs.back() {
            Some(p) => dot(&p.s, &p.y).abs() / dot(&p.y, &p.y),
            None => 1.0,
        }
    }

    /// Computes `d = -H g` by the two-loop recursion over the stored pairs.
    pub fn two_loop(&self, g: &DenseVector) -> Result<Direction> {
        g.ensure_finite("gradient")?;
        if let Some(p) = self.pairs.back() {
            ensure_len(p.s.len(), g.len())?;
        }
        let mut q = g.as_slice().to_vec();
        let mut alpha = vec![0.0; self.pairs.len()];
        for (i, p) in self.pairs.iter().enumerate().rev() {
            alpha[i] = p.rho * dot(&p.s, &q);
            axpy(-alpha[i], &p.y, &mut q);
        }
        let gamma = self.gamma();
        let mut r: Vec<f64> = q.iter().map(|v| gamma * v).collect();
        for (i, p) in self.pairs.iter().enumerate() {
            let beta = p.rho * dot(&p.y, &r);
            axpy(alpha[i] - beta, &p.s, &mut r);
        }
        r.iter_mut().for_each(|v| *v = -*v);
        Ok(Direction(DenseVector::from_raw(r)))
    }
}
