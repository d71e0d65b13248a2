//! Minimal reverse-mode differentiation over vectors.
//!
//! Every node stores its forward value as a flat `Vec<f64>`; scalars are
//! length-1 vectors. Nodes are appended in evaluation order, so parents
//! always precede children and a single reverse sweep computes all adjoints.
//!
//! Only the primitives needed by the unrolled L-BFGS trainer are provided.
//! Non-smooth primitives (`clip`, `max_const`, `min_const`, `abs`) use the
//! subgradient 1 strictly inside their smooth region and 0 at or beyond a
//! bound.
//!
//! ```
//! use lbfgs_pi::numcore::Tape;
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(vec![1.0, 2.0]);
//! let y = tape.dot(x, x).unwrap();
//! let adj = tape.backward(y).unwrap();
//! assert_eq!(adj.get(x).unwrap(), &[2.0, 4.0]);
//! ```

use crate::error::{ensure_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    /// Differentiable input.
    Leaf,
    /// Input excluded from differentiation.
    Const,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Neg(NodeId),
    ScaleConst(NodeId, f64),
    /// Vector times a scalar node.
    Scale(NodeId, NodeId),
    Recip(NodeId),
    Abs(NodeId),
    Dot(NodeId, NodeId),
    Norm(NodeId),
    Ln(NodeId),
    Exp(NodeId),
    Clip(NodeId, f64, f64),
    /// `w * x + b` with `w` row-major `rows x cols`.
    Affine {
        w: NodeId,
        x: NodeId,
        b: NodeId,
        rows: usize,
        cols: usize,
    },
    Concat(Vec<NodeId>),
    /// Scalar whose value and gradient w.r.t. `x` are supplied from outside.
    External(NodeId, Vec<f64>),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Vec<f64>,
    depends_on_leaf: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints `d(root)/d(node)` indexed by node.
#[derive(Debug, Clone)]
pub struct Adjoints {
    grads: Vec<Option<Vec<f64>>>,
}

impl Adjoints {
    /// `None` when the root does not depend on `id`.
    pub fn get(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    /// Adjoint of `id`, or zeros of length `len` when the root does not depend on it.
    pub fn get_or_zeros(&self, id: NodeId, len: usize) -> Vec<f64> {
        self.get(id).map_or_else(|| vec![0.0; len], <[f64]>::to_vec)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> Result<f64> {
        match self.value(id) {
            [v] => Ok(*v),
            _ => Err(Error::NotScalar(id.0)),
        }
    }

    fn push(&mut self, op: Op, value: Vec<f64>) -> NodeId {
        let depends_on_leaf = match &op {
            Op::Leaf => true,
            Op::Const => false,
            Op::Add(a, b) | Op::Sub(a, b) | Op::Scale(a, b) | Op::Dot(a, b) => {
                self.live(*a) || self.live(*b)
            }
            Op::Neg(a)
            | Op::ScaleConst(a, _)
            | Op::Recip(a)
            | Op::Abs(a)
            | Op::Norm(a)
            | Op::Ln(a)
            | Op::Exp(a)
            | Op::Clip(a, _, _)
            | Op::External(a, _) => self.live(*a),
            Op::Affine { w, x, b, .. } => self.live(*w) || self.live(*x) || self.live(*b),
            Op::Concat(parts) => parts.iter().any(|p| self.live(*p)),
        };
        self.nodes.push(Node {
            op,
            value,
            depends_on_leaf,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn live(&self, id: NodeId) -> bool {
        self.nodes[id.0].depends_on_leaf
    }

    fn scalar_operand(&self, id: NodeId) -> Result<f64> {
        self.scalar(id)
    }

    fn same_len(&self, a: NodeId, b: NodeId) -> Result<()> {
        ensure_len(self.value(a).len(), self.value(b).len())
    }

    pub fn leaf(&mut self, value: Vec<f64>) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn constant(&mut self, value: Vec<f64>) -> NodeId {
        self.push(Op::Const, value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_len(a, b)?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_len(a, b)?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.push(Op::Sub(a, b), v))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).iter().map(|x| -x).collect();
        self.push(Op::Neg(a), v)
    }

    pub fn scale_const(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).iter().map(|x| c * x).collect();
        self.push(Op::ScaleConst(a, c), v)
    }

    /// Vector `v` times scalar node `s`. Also serves as scalar-by-scalar product.
    pub fn scale(&mut self, v: NodeId, s: NodeId) -> Result<NodeId> {
        let c = self.scalar_operand(s)?;
        let out = self.value(v).iter().map(|x| c * x).collect();
        Ok(self.push(Op::Scale(v, s), out))
    }

    pub fn recip(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).iter().map(|x| 1.0 / x).collect();
        self.push(Op::Recip(a), v)
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).iter().map(|x| x.abs()).collect();
        self.push(Op::Abs(a), v)
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_len(a, b)?;
        let v = crate::numcore::vector::dot(self.value(a), self.value(b));
        Ok(self.push(Op::Dot(a, b), vec![v]))
    }

    pub fn norm(&mut self, a: NodeId) -> NodeId {
        let v = crate::numcore::vector::norm2(self.value(a));
        self.push(Op::Norm(a), vec![v])
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).iter().map(|x| x.ln()).collect();
        self.push(Op::Ln(a), v)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).iter().map(|x| x.exp()).collect();
        self.push(Op::Exp(a), v)
    }

    /// Elementwise clamp to `[lo, hi]`; either bound may be infinite.
    pub fn clip(&mut self, a: NodeId, lo: f64, hi: f64) -> Result<NodeId> {
        if lo > hi || lo.is_nan() || hi.is_nan() {
            return Err(Error::InvalidArgument(format!("clip bounds [{lo}, {hi}]")));
        }
        let v = self.value(a).iter().map(|x| x.max(lo).min(hi)).collect();
        Ok(self.push(Op::Clip(a, lo, hi), v))
    }

    /// Elementwise `max(x, c)`.
    pub fn max_const(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).iter().map(|x| x.max(c)).collect();
        self.push(Op::Clip(a, c, f64::INFINITY), v)
    }

    /// Elementwise `min(x, c)`.
    pub fn min_const(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).iter().map(|x| x.min(c)).collect();
        self.push(Op::Clip(a, f64::NEG_INFINITY, c), v)
    }

    /// `w * x + b` where `w` holds a row-major `rows x cols` matrix.
    pub fn affine(
        &mut self,
        w: NodeId,
        x: NodeId,
        b: NodeId,
        rows: usize,
        cols: usize,
    ) -> Result<NodeId> {
        ensure_len(rows * cols, self.value(w).len())?;
        ensure_len(cols, self.value(x).len())?;
        ensure_len(rows, self.value(b).len())?;
        let (wv, xv, bv) = (self.value(w), self.value(x), self.value(b));
        let out = (0..rows)
            .map(|i| bv[i] + crate::numcore::vector::dot(&wv[i * cols..(i + 1) * cols], xv))
            .collect();
        Ok(self.push(
            Op::Affine {
                w,
                x,
                b,
                rows,
                cols,
            },
            out,
        ))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let v = parts
            .iter()
            .flat_map(|p| self.value(*p).iter().copied())
            .collect();
        self.push(Op::Concat(parts.to_vec()), v)
    }

    /// Scalar node with externally supplied `value` and `grad = d(value)/dx`.
    /// Nothing upstream of `x` is differentiated beyond this linearization.
    pub fn external(&mut self, x: NodeId, value: f64, grad: Vec<f64>) -> Result<NodeId> {
        ensure_len(self.value(x).len(), grad.len())?;
        Ok(self.push(Op::External(x, grad), vec![value]))
    }

    /// Reverse sweep from the scalar node `root`.
    pub fn backward(&self, root: NodeId) -> Result<Adjoints> {
        self.scalar(root)?;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            let Some(adj) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if node.depends_on_leaf {
                self.propagate(node, &adj, &mut grads);
            }
            grads[i] = Some(adj);
        }
        Ok(Adjoints { grads })
    }

    fn accumulate<F>(&self, grads: &mut [Option<Vec<f64>>], target: NodeId, f: F)
    where
        F: FnOnce(&mut [f64]),
    {
        if !self.live(target) {
            return;
        }
        let slot = &mut grads[target.0];
        let buf = slot.get_or_insert_with(|| vec![0.0; self.nodes[target.0].value.len()]);
        f(buf);
    }

    fn propagate(&self, node: &Node, adj: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf | Op::Const => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |g| add_into(g, adj, 1.0));
                self.accumulate(grads, *b, |g| add_into(g, adj, 1.0));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |g| add_into(g, adj, 1.0));
                self.accumulate(grads, *b, |g| add_into(g, adj, -1.0));
            }
            Op::Neg(a) => self.accumulate(grads, *a, |g| add_into(g, adj, -1.0)),
            Op::ScaleConst(a, c) => self.accumulate(grads, *a, |g| add_into(g, adj, *c)),
            Op::Scale(v, s) => {
                let c = self.value(*s)[0];
                let vv = self.value(*v);
                self.accumulate(grads, *v, |g| add_into(g, adj, c));
                self.accumulate(grads, *s, |g| g[0] += crate::numcore::vector::dot(adj, vv));
            }
            Op::Recip(a) => {
                let x = self.value(*a);
                self.accumulate(grads, *a, |g| {
                    for ((gi, ai), xi) in g.iter_mut().zip(adj).zip(x) {
                        *gi -= ai / (xi * xi);
                    }
                });
            }
            Op::Abs(a) => {
                let x = self.value(*a);
                self.accumulate(grads, *a, |g| {
                    for ((gi, ai), xi) in g.iter_mut().zip(adj).zip(x) {
                        if *xi > 0.0 {
                            *gi += ai;
                        } else if *xi < 0.0 {
                            *gi -= ai;
                        }
                    }
                });
            }
            Op::Dot(a, b) => {
                let s = adj[0];
                let (av, bv) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, |g| add_into(g, bv, s));
                self.accumulate(grads, *b, |g| add_into(g, av, s));
            }
            Op::Norm(a) => {
                let n = node.value[0];
                let av = self.value(*a);
                if n > 0.0 {
                    self.accumulate(grads, *a, |g| add_into(g, av, adj[0] / n));
                }
            }
            Op::Ln(a) => {
                let x = self.value(*a);
                self.accumulate(grads, *a, |g| {
                    for ((gi, ai), xi) in g.iter_mut().zip(adj).zip(x) {
                        *gi += ai / xi;
                    }
                });
            }
            Op::Exp(a) => {
                let y = &node.value;
                self.accumulate(grads, *a, |g| {
                    for ((gi, ai), yi) in g.iter_mut().zip(adj).zip(y) {
                        *gi += ai * yi;
                    }
                });
            }
            Op::Clip(a, lo, hi) => {
                let x = self.value(*a);
                self.accumulate(grads, *a, |g| {
                    for ((gi, ai), xi) in g.iter_mut().zip(adj).zip(x) {
                        if *xi > *lo && *xi < *hi {
                            *gi += ai;
                        }
                    }
                });
            }
            Op::Affine {
                w,
                x,
                b,
                rows,
                cols,
            } => {
                let (wv, xv) = (self.value(*w), self.value(*x));
                self.accumulate(grads, *w, |g| {
                    for i in 0..*rows {
                        crate::numcore::vector::axpy(adj[i], xv, &mut g[i * cols..(i + 1) * cols]);
                    }
                });
                self.accumulate(grads, *x, |g| {
                    for i in 0..*rows {
                        crate::numcore::vector::axpy(adj[i], &wv[i * cols..(i + 1) * cols], g);
                    }
                });
                self.accumulate(grads, *b, |g| add_into(g, adj, 1.0));
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    let piece = &adj[offset..offset + len];
                    self.accumulate(grads, *p, |g| add_into(g, piece, 1.0));
                    offset += len;
                }
            }
            Op::External(x, grad) => {
                self.accumulate(grads, *x, |g| add_into(g, grad, adj[0]));
            }
        }
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect()
}

fn add_into(dst: &mut [f64], src: &[f64], alpha: f64) {
    crate::numcore::vector::axpy(alpha, src, dst);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Rng;

    #[test]
    fn quadratic_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(vec![1.0, 2.0]);
        let r = t.dot(x, x).unwrap();
        assert_eq!(t.backward(r).unwrap().get(x).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn exp_at_zero() {
        let mut t = Tape::new();
        let c = t.leaf(vec![0.0]);
        let r = t.exp(c);
        assert_eq!(t.backward(r).unwrap().get(c).unwrap(), &[1.0]);
    }

    #[test]
    fn clip_subgradient() {
        for (c, expected) in [
            (-5.0, 0.0),
            (-1.0, 1.0),
            (-3.0, 0.0),
            (0.0, 0.0),
            (2.0, 0.0),
        ] {
            let mut t = Tape::new();
            let x = t.leaf(vec![c]);
            let r = t.clip(x, -3.0, 0.0).unwrap();
            let adj = t.backward(r).unwrap();
            assert_eq!(adj.get_or_zeros(x, 1), vec![expected], "at {c}");
        }
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(vec![1.0, 2.0]);
        assert!(matches!(t.backward(x), Err(Error::NotScalar(_))));
    }

    #[test]
    fn constants_get_no_adjoint() {
        let mut t = Tape::new();
        let x = t.leaf(vec![3.0]);
        let c = t.constant(vec![2.0]);
        let y = t.scale(x, c).unwrap();
        let adj = t.backward(y).unwrap();
        assert_eq!(adj.get(x).unwrap(), &[2.0]);
        assert!(adj.get(c).is_none());
    }

    #[test]
    fn external_linearization() {
        let mut t = Tape::new();
        let x = t.leaf(vec![1.0, 1.0]);
        let two = t.scale_const(x, 2.0);
        let f = t.external(two, 10.0, vec![3.0, -1.0]).unwrap();
        assert_eq!(t.scalar(f).unwrap(), 10.0);
        assert_eq!(t.backward(f).unwrap().get(x).unwrap(), &[6.0, -2.0]);
    }

    #[test]
    fn backward_is_repeatable() {
        let mut rng = Rng::new(3);
        let mut t = Tape::new();
        let x = t.leaf(rng.randn(8, 1.0).unwrap().into_vec());
        let e = t.exp(x);
        let n = t.norm(e);
        let d = t.dot(e, x).unwrap();
        let r = t.scale(n, d).unwrap();
        let a1 = t.backward(r).unwrap().get_or_zeros(x, 8);
        let a2 = t.backward(r).unwrap().get_or_zeros(x, 8);
        assert_eq!(a1, a2);
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let mut t = Tape::new();
        let a = t.leaf(vec![1.0]);
        let b = t.leaf(vec![1.0, 2.0]);
        assert!(t.add(a, b).is_err());
        assert!(t.dot(a, b).is_err());
        assert!(t.affine(b, a, a, 1, 2).is_err());
    }
}
