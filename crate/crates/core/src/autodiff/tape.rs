//! Append-only reverse-mode tape over dense 2-D blocks.
//!
//! Every node holds a `rows x cols` matrix. Scalars are `1 x 1` nodes and a
//! batch of vectors is one node with one row per sample, so a whole minibatch
//! goes through a layer as a single fused matrix product. Elementwise binary
//! operations broadcast a `1 x m` row, an `n x 1` column or a `1 x 1` scalar
//! against an `n x m` operand; the backward pass sums the gradient back down to
//! the operand's shape.

use ndarray::{concatenate, s, Array2, Axis, Zip};

use super::AutodiffError;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    Offset(usize),
    Tanh(usize),
    Exp(usize),
    Ln(usize),
    Square(usize),
    MatMul(usize, usize),
    MatMulT(usize, usize),
    SumAll(usize),
    SumCols(usize),
    MeanAll(usize),
    ConcatCols(usize, usize),
}

impl Op {
    fn parents(&self) -> [Option<usize>; 2] {
        match *self {
            Op::Leaf => [None, None],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::MatMul(a, b)
            | Op::MatMulT(a, b)
            | Op::ConcatCols(a, b) => [Some(a), Some(b)],
            Op::Neg(a)
            | Op::Scale(a, _)
            | Op::Offset(a)
            | Op::Tanh(a)
            | Op::Exp(a)
            | Op::Ln(a)
            | Op::Square(a)
            | Op::SumAll(a)
            | Op::SumCols(a)
            | Op::MeanAll(a) => [Some(a), None],
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    tracked: bool,
}

/// Reverse-mode recording of one computation.
///
/// Nodes are only ever appended, so every parent index is smaller than its
/// child and construction order is a topological order.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros when `v` does not influence the output.
    pub fn wrt(&self, v: Var) -> Array2<f64> {
        match self.grads.get(v.0).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => Array2::zeros(self.shapes[v.0]),
        }
    }

    /// Gradient with respect to `v`, flattened row-major.
    pub fn wrt_flat(&self, v: Var) -> Vec<f64> {
        self.wrt(v).iter().copied().collect()
    }
}

fn broadcast_shape(a: (usize, usize), b: (usize, usize)) -> Result<(usize, usize), AutodiffError> {
    let dim = |x: usize, y: usize| -> Option<usize> {
        if x == y {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else if y == 1 {
            Some(x)
        } else {
            None
        }
    };
    match (dim(a.0, b.0), dim(a.1, b.1)) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(AutodiffError::ShapeMismatch {
            op: "broadcast",
            left: a,
            right: b,
        }),
    }
}

/// Sums `g` down to `shape` (the inverse of broadcasting).
fn unbroadcast(g: Array2<f64>, shape: (usize, usize)) -> Array2<f64> {
    let mut g = g;
    if shape.0 == 1 && g.nrows() != 1 {
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if shape.1 == 1 && g.ncols() != 1 {
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    g
}

fn shape_of(a: &Array2<f64>) -> (usize, usize) {
    (a.nrows(), a.ncols())
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

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        let tracked = op
            .parents()
            .iter()
            .flatten()
            .any(|&p| self.nodes[p].tracked);
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable leaf.
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            tracked: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient. Branches built only from constants
    /// are skipped by the backward pass.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            tracked: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), value))
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        shape_of(&self.nodes[v.0].value)
    }

    /// Value of a `1 x 1` node.
    pub fn scalar_value(&self, v: Var) -> Result<f64, AutodiffError> {
        let val = self.value(v);
        if val.dim() != (1, 1) {
            return Err(AutodiffError::NonScalar { shape: val.dim() });
        }
        Ok(val[[0, 0]])
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var, AutodiffError> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let shape = broadcast_shape(shape_of(va), shape_of(vb)).map_err(|_| {
            AutodiffError::ShapeMismatch {
                op: name,
                left: shape_of(va),
                right: shape_of(vb),
            }
        })?;
        let lhs = va.broadcast(shape).expect("checked broadcast");
        let rhs = vb.broadcast(shape).expect("checked broadcast");
        let mut out = Array2::zeros(shape);
        Zip::from(&mut out)
            .and(&lhs)
            .and(&rhs)
            .for_each(|o, &x, &y| *o = f(x, y));
        Ok(self.push(out, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(a, b, "add", Op::Add(a.0, b.0), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(a, b, "sub", Op::Sub(a.0, b.0), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(a, b, "mul", Op::Mul(a.0, b.0), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(a, b, "div", Op::Div(a.0, b.0), |x, y| x / y)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| -x);
        self.push(v, Op::Neg(a.0))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).mapv(|x| x * c);
        self.push(v, Op::Scale(a.0, c))
    }

    /// `a + c` for a constant `c`.
    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).mapv(|x| x + c);
        self.push(v, Op::Offset(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::exp);
        self.push(v, Op::Exp(a.0))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::ln);
        self.push(v, Op::Ln(a.0))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x * x);
        self.push(v, Op::Square(a.0))
    }

    /// Matrix product `a · b`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.nrows() {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                left: shape_of(va),
                right: shape_of(vb),
            });
        }
        let v = va.dot(vb);
        Ok(self.push(v, Op::MatMul(a.0, b.0)))
    }

    /// Matrix product `a · bᵀ`; with `b` a weight matrix stored `out x in`
    /// this is a dense layer applied to the rows of `a`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.ncols() {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul_t",
                left: shape_of(va),
                right: shape_of(vb),
            });
        }
        let v = va.dot(&vb.t());
        Ok(self.push(v, Op::MatMulT(a.0, b.0)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::SumAll(a.0))
    }

    /// Per-row sum, `n x m -> n x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let v = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(v, Op::SumCols(a.0))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let val = self.value(a);
        let n = val.len().max(1) as f64;
        let v = Array2::from_elem((1, 1), val.sum() / n);
        self.push(v, Op::MeanAll(a.0))
    }

    /// Column-wise concatenation `[a | b]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.nrows() != vb.nrows() {
            return Err(AutodiffError::ShapeMismatch {
                op: "concat_cols",
                left: shape_of(va),
                right: shape_of(vb),
            });
        }
        let v = concatenate(Axis(1), &[va.view(), vb.view()]).expect("row counts checked");
        Ok(self.push(v, Op::ConcatCols(a.0, b.0)))
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(AutodiffError::NonScalar { shape });
        }
        Ok(self.pullback(loss, Array2::ones((1, 1))))
    }

    /// Reverse sweep from an arbitrary node with a supplied cotangent, i.e. the
    /// vector-Jacobian product `seedᵀ · ∂out/∂(leaves)`.
    pub fn backward_seeded(&self, out: Var, seed: Array2<f64>) -> Result<Gradients, AutodiffError> {
        let shape = self.shape(out);
        if seed.dim() != shape {
            return Err(AutodiffError::ShapeMismatch {
                op: "backward_seeded",
                left: shape,
                right: seed.dim(),
            });
        }
        Ok(self.pullback(out, seed))
    }

    fn pullback(&self, out: Var, seed: Array2<f64>) -> Gradients {
        let n = out.0 + 1;
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; n];
        grads[out.0] = Some(seed);

        for idx in (0..n).rev() {
            let node = &self.nodes[idx];
            if !node.tracked {
                continue;
            }
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            let mut contributions: [Option<(usize, Array2<f64>)>; 2] = [None, None];
            let val = |i: usize| &self.nodes[i].value;
            let wants = |i: usize| self.nodes[i].tracked;
            match node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    if wants(a) {
                        contributions[0] = Some((a, unbroadcast(g.clone(), val(a).dim())));
                    }
                    if wants(b) {
                        contributions[1] = Some((b, unbroadcast(g, val(b).dim())));
                    }
                }
                Op::Sub(a, b) => {
                    if wants(a) {
                        contributions[0] = Some((a, unbroadcast(g.clone(), val(a).dim())));
                    }
                    if wants(b) {
                        contributions[1] = Some((b, unbroadcast(-g, val(b).dim())));
                    }
                }
                Op::Mul(a, b) => {
                    if wants(a) {
                        let ga = &g * val(b);
                        contributions[0] = Some((a, unbroadcast(ga, val(a).dim())));
                    }
                    if wants(b) {
                        let gb = &g * val(a);
                        contributions[1] = Some((b, unbroadcast(gb, val(b).dim())));
                    }
                }
                Op::Div(a, b) => {
                    if wants(a) {
                        let ga = &g / val(b);
                        contributions[0] = Some((a, unbroadcast(ga, val(a).dim())));
                    }
                    if wants(b) {
                        // d(a/b)/db = -(a/b)/b
                        let gb = -(&g * &node.value) / val(b);
                        contributions[1] = Some((b, unbroadcast(gb, val(b).dim())));
                    }
                }
                Op::Neg(a) => contributions[0] = Some((a, -g)),
                Op::Scale(a, c) => contributions[0] = Some((a, g * c)),
                Op::Offset(a) => contributions[0] = Some((a, g)),
                Op::Tanh(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(&node.value)
                        .for_each(|gi, &y| *gi *= 1.0 - y * y);
                    contributions[0] = Some((a, ga));
                }
                Op::Exp(a) => contributions[0] = Some((a, g * &node.value)),
                Op::Ln(a) => contributions[0] = Some((a, g / val(a))),
                Op::Square(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(val(a))
                        .for_each(|gi, &x| *gi *= 2.0 * x);
                    contributions[0] = Some((a, ga));
                }
                Op::MatMul(a, b) => {
                    if wants(a) {
                        contributions[0] = Some((a, g.dot(&val(b).t())));
                    }
                    if wants(b) {
                        contributions[1] = Some((b, val(a).t().dot(&g)));
                    }
                }
                Op::MatMulT(a, b) => {
                    if wants(a) {
                        contributions[0] = Some((a, g.dot(val(b))));
                    }
                    if wants(b) {
                        contributions[1] = Some((b, g.t().dot(val(a))));
                    }
                }
                Op::SumAll(a) => {
                    let gv = g[[0, 0]];
                    contributions[0] = Some((a, Array2::from_elem(val(a).dim(), gv)));
                }
                Op::SumCols(a) => {
                    let ga = g
                        .broadcast(val(a).dim())
                        .expect("column broadcast")
                        .to_owned();
                    contributions[0] = Some((a, ga));
                }
                Op::MeanAll(a) => {
                    let n = val(a).len().max(1) as f64;
                    contributions[0] = Some((a, Array2::from_elem(val(a).dim(), g[[0, 0]] / n)));
                }
                Op::ConcatCols(a, b) => {
                    let split = val(a).ncols();
                    if wants(a) {
                        contributions[0] = Some((a, g.slice(s![.., ..split]).to_owned()));
                    }
                    if wants(b) {
                        contributions[1] = Some((b, g.slice(s![.., split..]).to_owned()));
                    }
                }
            }
            for (parent, contrib) in contributions.into_iter().flatten() {
                match &mut grads[parent] {
                    Some(acc) => *acc += &contrib,
                    slot @ None => *slot = Some(contrib),
                }
            }
        }

        Gradients {
            grads,
            shapes: self.nodes[..n].iter().map(|nd| nd.value.dim()).collect(),
        }
    }
}
