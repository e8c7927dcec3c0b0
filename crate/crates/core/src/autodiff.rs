//! Reverse-mode automatic differentiation on an append-only tape.
//!
//! Values are vectors (scalars are length-1 vectors). Forward values are
//! computed eagerly when a node is recorded; [`Tape::backward`] walks the
//! nodes once in reverse recording order.
//!
//! The primitive set is deliberately small: add, scale, matvec, tanh, dot,
//! square and constant. Anything else (subtraction, sums, slicing,
//! concatenation) is composed from these. Operations whose derivative is
//! known in closed form but is awkward to trace, such as manifold
//! projection, are recorded with [`Tape::custom`] together with their own
//! vector-Jacobian product.
//!
//! ```
//! use pnode_core::autodiff::{AdjointSeed, Tape};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(vec![3.0, 4.0]);
//! let y = tape.dot(x, x).unwrap();
//! assert_eq!(tape.value(y), &[25.0]);
//! let grads = tape.backward(&AdjointSeed::scalar(y)).unwrap();
//! assert_eq!(grads.wrt(x), vec![6.0, 8.0]);
//! ```

use crate::error::{Error, Result};
use crate::linalg::Vector;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The recordable primitive operations.
#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    /// Elementwise `a + b`.
    Add,
    /// `c * a` for a fixed real `c`.
    Scale(f64),
    /// `M x` where the first input holds `M` row-major with the given shape.
    MatVec { rows: usize, cols: usize },
    /// Elementwise `tanh`.
    Tanh,
    /// Inner product, producing a length-1 node.
    Dot,
    /// Elementwise square.
    Square,
    /// A fixed value that never receives a gradient.
    Constant(Vector),
}

/// Vector-Jacobian product of a custom node: maps the output cotangent to
/// the input cotangent.
pub trait VjpRule {
    fn vjp(&self, cotangent: &[f64]) -> Result<Vector>;
}

impl<F> VjpRule for F
where
    F: Fn(&[f64]) -> Result<Vector>,
{
    fn vjp(&self, cotangent: &[f64]) -> Result<Vector> {
        self(cotangent)
    }
}

enum Op {
    Leaf,
    Constant,
    Add(NodeId, NodeId),
    Scale(NodeId, f64),
    MatVec {
        matrix: NodeId,
        x: NodeId,
        rows: usize,
        cols: usize,
    },
    Tanh(NodeId),
    Dot(NodeId, NodeId),
    Square(NodeId),
    Custom {
        input: NodeId,
        rule: Box<dyn VjpRule>,
    },
}

struct Node {
    op: Op,
    value: Vector,
    needs_grad: bool,
}

/// Output node plus the cotangent to pull back from it.
#[derive(Debug, Clone)]
pub struct AdjointSeed {
    pub node: NodeId,
    pub cotangent: Vector,
}

impl AdjointSeed {
    /// Seed of `1.0` on a scalar node.
    pub fn scalar(node: NodeId) -> Self {
        Self {
            node,
            cotangent: vec![1.0],
        }
    }
}

/// Per-leaf gradients produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    leaves: Vec<Option<Vector>>,
    lens: Vec<usize>,
}

impl Gradients {
    /// Gradient with respect to `leaf`; `None` if the leaf does not
    /// influence the seed (or is not a leaf).
    pub fn get(&self, leaf: NodeId) -> Option<&[f64]> {
        self.leaves.get(leaf.0).and_then(|g| g.as_deref())
    }

    /// Gradient with respect to `leaf`, zero-filled when the leaf is
    /// unreachable from the seed.
    pub fn wrt(&self, leaf: NodeId) -> Vector {
        match self.get(leaf) {
            Some(g) => g.to_vec(),
            None => vec![0.0; self.lens.get(leaf.0).copied().unwrap_or(0)],
        }
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    /// A differentiable input (parameter or state).
    pub fn leaf(&mut self, value: Vector) -> NodeId {
        self.push(Op::Leaf, value, true)
    }

    pub fn constant(&mut self, value: Vector) -> NodeId {
        self.push(Op::Constant, value, false)
    }

    fn push(&mut self, op: Op, value: Vector, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn check(&self, id: NodeId) -> Result<&Node> {
        self.nodes
            .get(id.0)
            .ok_or_else(|| Error::MalformedTape(format!("node {} does not exist", id.0)))
    }

    fn arity(inputs: &[NodeId], n: usize, name: &str) -> Result<()> {
        if inputs.len() != n {
            return Err(Error::MalformedTape(format!(
                "{name} takes {n} input(s), got {}",
                inputs.len()
            )));
        }
        Ok(())
    }

    /// Records `op` applied to `inputs` and evaluates it immediately.
    pub fn record(&mut self, op: Primitive, inputs: &[NodeId]) -> Result<NodeId> {
        for &id in inputs {
            self.check(id)?;
        }
        let needs = inputs.iter().any(|id| self.nodes[id.0].needs_grad);
        match op {
            Primitive::Constant(v) => {
                Self::arity(inputs, 0, "constant")?;
                Ok(self.constant(v))
            }
            Primitive::Add => {
                Self::arity(inputs, 2, "add")?;
                let (a, b) = (self.value(inputs[0]), self.value(inputs[1]));
                if a.len() != b.len() {
                    return Err(Error::DimensionMismatch {
                        context: "tape add",
                        expected: a.len(),
                        found: b.len(),
                    });
                }
                let v = a.iter().zip(b).map(|(x, y)| x + y).collect();
                Ok(self.push(Op::Add(inputs[0], inputs[1]), v, needs))
            }
            Primitive::Scale(c) => {
                Self::arity(inputs, 1, "scale")?;
                let v = self.value(inputs[0]).iter().map(|x| c * x).collect();
                Ok(self.push(Op::Scale(inputs[0], c), v, needs))
            }
            Primitive::MatVec { rows, cols } => {
                Self::arity(inputs, 2, "matvec")?;
                let (m, x) = (self.value(inputs[0]), self.value(inputs[1]));
                if m.len() != rows * cols {
                    return Err(Error::DimensionMismatch {
                        context: "tape matvec matrix storage",
                        expected: rows * cols,
                        found: m.len(),
                    });
                }
                if x.len() != cols {
                    return Err(Error::DimensionMismatch {
                        context: "tape matvec",
                        expected: cols,
                        found: x.len(),
                    });
                }
                let v = (0..rows)
                    .map(|i| crate::linalg::dot(&m[i * cols..(i + 1) * cols], x))
                    .collect();
                Ok(self.push(
                    Op::MatVec {
                        matrix: inputs[0],
                        x: inputs[1],
                        rows,
                        cols,
                    },
                    v,
                    needs,
                ))
            }
            Primitive::Tanh => {
                Self::arity(inputs, 1, "tanh")?;
                let v = self.value(inputs[0]).iter().map(|x| x.tanh()).collect();
                Ok(self.push(Op::Tanh(inputs[0]), v, needs))
            }
            Primitive::Dot => {
                Self::arity(inputs, 2, "dot")?;
                let (a, b) = (self.value(inputs[0]), self.value(inputs[1]));
                if a.len() != b.len() {
                    return Err(Error::DimensionMismatch {
                        context: "tape dot",
                        expected: a.len(),
                        found: b.len(),
                    });
                }
                let v = vec![crate::linalg::dot(a, b)];
                Ok(self.push(Op::Dot(inputs[0], inputs[1]), v, needs))
            }
            Primitive::Square => {
                Self::arity(inputs, 1, "square")?;
                let v = self.value(inputs[0]).iter().map(|x| x * x).collect();
                Ok(self.push(Op::Square(inputs[0]), v, needs))
            }
        }
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Primitive::Add, &[a, b])
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.record(Primitive::Scale(c), &[a])
    }

    /// `a - b`, composed as `a + (-1) b`.
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let nb = self.scale(b, -1.0)?;
        self.add(a, nb)
    }

    pub fn matvec(
        &mut self,
        matrix: NodeId,
        x: NodeId,
        rows: usize,
        cols: usize,
    ) -> Result<NodeId> {
        self.record(Primitive::MatVec { rows, cols }, &[matrix, x])
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Primitive::Tanh, &[a])
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Primitive::Dot, &[a, b])
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Primitive::Square, &[a])
    }

    /// Sum of entries, composed as a dot product with a ones constant.
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let ones = self.constant(vec![1.0; self.value(a).len()]);
        self.dot(a, ones)
    }

    /// Records a node whose value was computed outside the tape, with a
    /// caller-supplied vector-Jacobian product mapping output cotangents
    /// to `input` cotangents.
    pub fn custom(
        &mut self,
        input: NodeId,
        value: Vector,
        rule: impl VjpRule + 'static,
    ) -> Result<NodeId> {
        let needs = self.check(input)?.needs_grad;
        Ok(self.push(
            Op::Custom {
                input,
                rule: Box::new(rule),
            },
            value,
            needs,
        ))
    }

    /// Pulls `seed.cotangent` back to every leaf.
    pub fn backward(&self, seed: &AdjointSeed) -> Result<Gradients> {
        let root = self.check(seed.node)?;
        if root.value.len() != seed.cotangent.len() {
            return Err(Error::DimensionMismatch {
                context: "adjoint seed",
                expected: root.value.len(),
                found: seed.cotangent.len(),
            });
        }
        if !crate::linalg::all_finite(&seed.cotangent) {
            return Err(Error::NonFinite("adjoint seed cotangent".into()));
        }

        let mut adj: Vec<Option<Vector>> = Vec::with_capacity(seed.node.0 + 1);
        adj.resize_with(seed.node.0 + 1, || None);
        adj[seed.node.0] = Some(seed.cotangent.clone());

        fn accumulate(adj: &mut [Option<Vector>], id: NodeId, g: Vector) {
            match &mut adj[id.0] {
                Some(acc) => {
                    for (a, v) in acc.iter_mut().zip(&g) {
                        *a += v;
                    }
                }
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=seed.node.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(c) = adj[idx].take() else { continue };
            let wants = |id: NodeId| self.nodes[id.0].needs_grad;
            match &node.op {
                Op::Leaf | Op::Constant => unreachable!(),
                Op::Add(a, b) => {
                    if wants(*a) {
                        accumulate(&mut adj, *a, c.clone());
                    }
                    if wants(*b) {
                        accumulate(&mut adj, *b, c);
                    }
                }
                Op::Scale(a, s) => {
                    accumulate(&mut adj, *a, c.iter().map(|v| s * v).collect());
                }
                Op::MatVec {
                    matrix,
                    x,
                    rows,
                    cols,
                } => {
                    let m = &self.nodes[matrix.0].value;
                    let xv = &self.nodes[x.0].value;
                    if wants(*x) {
                        let mut gx = vec![0.0; *cols];
                        for i in 0..*rows {
                            crate::linalg::axpy(c[i], &m[i * cols..(i + 1) * cols], &mut gx);
                        }
                        accumulate(&mut adj, *x, gx);
                    }
                    if wants(*matrix) {
                        let mut gm = vec![0.0; rows * cols];
                        for i in 0..*rows {
                            let ci = c[i];
                            for (g, xj) in gm[i * cols..(i + 1) * cols].iter_mut().zip(xv) {
                                *g = ci * xj;
                            }
                        }
                        accumulate(&mut adj, *matrix, gm);
                    }
                }
                Op::Tanh(a) => {
                    let g = node
                        .value
                        .iter()
                        .zip(&c)
                        .map(|(y, ci)| (1.0 - y * y) * ci)
                        .collect();
                    accumulate(&mut adj, *a, g);
                }
                Op::Dot(a, b) => {
                    let s = c[0];
                    if wants(*a) {
                        let g = self.nodes[b.0].value.iter().map(|v| s * v).collect();
                        accumulate(&mut adj, *a, g);
                    }
                    if wants(*b) {
                        let g = self.nodes[a.0].value.iter().map(|v| s * v).collect();
                        accumulate(&mut adj, *b, g);
                    }
                }
                Op::Square(a) => {
                    let g = self.nodes[a.0]
                        .value
                        .iter()
                        .zip(&c)
                        .map(|(x, ci)| 2.0 * x * ci)
                        .collect();
                    accumulate(&mut adj, *a, g);
                }
                Op::Custom { input, rule } => {
                    let g = rule.vjp(&c)?;
                    let expected = self.nodes[input.0].value.len();
                    if g.len() != expected {
                        return Err(Error::DimensionMismatch {
                            context: "custom vjp output",
                            expected,
                            found: g.len(),
                        });
                    }
                    accumulate(&mut adj, *input, g);
                }
            }
        }

        let lens = self.nodes.iter().map(|n| n.value.len()).collect();
        let leaves = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| match n.op {
                Op::Leaf => adj.get_mut(i).and_then(Option::take),
                _ => None,
            })
            .collect();
        Ok(Gradients { leaves, lens })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_examples() {
        let mut t = Tape::new();
        let a = t.leaf(vec![1.0, 2.0]);
        let b = t.leaf(vec![3.0, 4.0]);
        let s = t.record(Primitive::Add, &[a, b]).unwrap();
        assert_eq!(t.value(s), &[4.0, 6.0]);
        let z = t.leaf(vec![0.0]);
        let th = t.record(Primitive::Tanh, &[z]).unwrap();
        assert_eq!(t.value(th), &[0.0]);
        let c = t.leaf(vec![3.0, 4.0]);
        let d = t.record(Primitive::Dot, &[c, c]).unwrap();
        assert_eq!(t.value(d), &[25.0]);
    }

    #[test]
    fn record_rejects_shape_mismatch() {
        let mut t = Tape::new();
        let a = t.leaf(vec![1.0, 2.0]);
        let b = t.leaf(vec![1.0]);
        assert!(t.add(a, b).is_err());
        assert!(t.dot(a, b).is_err());
        assert!(t.matvec(a, b, 1, 1).is_err());
        assert!(t.record(Primitive::Tanh, &[a, b]).is_err());
        assert!(t.record(Primitive::Add, &[a, NodeId(99)]).is_err());
    }

    #[test]
    fn backward_examples() {
        let mut t = Tape::new();
        let x = t.leaf(vec![3.0, 4.0]);
        let y = t.dot(x, x).unwrap();
        let g = t.backward(&AdjointSeed::scalar(y)).unwrap();
        assert_eq!(g.wrt(x), vec![6.0, 8.0]);

        let mut t = Tape::new();
        let x = t.leaf(vec![0.5, -2.0, 7.0]);
        let y = t.sum(x).unwrap();
        let g = t.backward(&AdjointSeed::scalar(y)).unwrap();
        assert_eq!(g.wrt(x), vec![1.0, 1.0, 1.0]);

        let mut t = Tape::new();
        let x = t.leaf(vec![0.0]);
        let y = t.tanh(x).unwrap();
        let g = t.backward(&AdjointSeed::scalar(y)).unwrap();
        assert_eq!(g.wrt(x), vec![1.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        // y = sum(x^2) + 3 sum(x)
        let mut t = Tape::new();
        let x = t.leaf(vec![1.0, -2.0]);
        let sq = t.square(x).unwrap();
        let s1 = t.sum(sq).unwrap();
        let sx = t.sum(x).unwrap();
        let s2 = t.scale(sx, 3.0).unwrap();
        let y = t.add(s1, s2).unwrap();
        let g = t.backward(&AdjointSeed::scalar(y)).unwrap();
        assert_eq!(g.wrt(x), vec![5.0, -1.0]);
    }

    #[test]
    fn matvec_gradients_for_both_operands() {
        let mut t = Tape::new();
        let m = t.leaf(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let x = t.leaf(vec![1.0, -1.0, 2.0]);
        let y = t.matvec(m, x, 2, 3).unwrap();
        assert_eq!(t.value(y), &[5.0, 11.0]);
        let g = t
            .backward(&AdjointSeed {
                node: y,
                cotangent: vec![1.0, 2.0],
            })
            .unwrap();
        assert_eq!(g.wrt(x), vec![9.0, 12.0, 15.0]);
        assert_eq!(g.wrt(m), vec![1.0, -1.0, 2.0, 2.0, -2.0, 4.0]);
    }

    #[test]
    fn custom_rule_is_used() {
        let mut t = Tape::new();
        let x = t.leaf(vec![2.0]);
        let v = vec![t.value(x)[0].exp()];
        let e = v[0];
        let y = t.custom(x, v, move |c: &[f64]| Ok(vec![c[0] * e])).unwrap();
        let g = t.backward(&AdjointSeed::scalar(y)).unwrap();
        assert!((g.wrt(x)[0] - 2.0_f64.exp()).abs() < 1e-15);
    }

    #[test]
    fn constants_and_unreachable_leaves_get_no_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(vec![1.0]);
        let unused = t.leaf(vec![5.0, 5.0]);
        let c = t.constant(vec![2.0]);
        let y = t.dot(x, c).unwrap();
        let g = t.backward(&AdjointSeed::scalar(y)).unwrap();
        assert_eq!(g.get(c), None);
        assert_eq!(g.get(unused), None);
        assert_eq!(g.wrt(unused), vec![0.0, 0.0]);
        assert_eq!(g.wrt(x), vec![2.0]);
    }

    #[test]
    fn backward_validates_seed() {
        let mut t = Tape::new();
        let x = t.leaf(vec![1.0, 2.0]);
        assert!(t.backward(&AdjointSeed::scalar(x)).is_err());
        assert!(t
            .backward(&AdjointSeed {
                node: x,
                cotangent: vec![f64::NAN, 0.0]
            })
            .is_err());
    }
}
