//! Dense 64-bit tensors with tape-based reverse-mode differentiation.
//!
//! The primitive set is deliberately small: matmul (matrix-matrix and
//! matrix-vector), add, sub, mul, scale, leaky_relu, tanh, sin, sum, mse,
//! l2_norm_sq and masked_mse. That is the closure over every model and loss
//! in this crate. A [`Tape`] is built fresh for each loss evaluation and
//! consumed by a single [`Tape::backward`] call; gradients are then pulled
//! out of the tape and accumulated into the caller's persistent [`Tensor`]s.

use crate::error::{Error, Result};
use rand::Rng;

/// Dense row-major tensor holding values and an optional gradient buffer.
///
/// Tensors are plain owned data. They never alias a tape; tape ops copy leaf
/// values in, and [`Tensor::accumulate_grad_from`] copies gradients back out
/// after a backward pass. Accumulation is additive: calling it twice without
/// [`Tensor::zero_grad`] doubles the gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if values.len() != numel {
            return Err(Error::invalid(format!(
                "tensor shape {:?} implies {} values, got {}",
                shape,
                numel,
                values.len()
            )));
        }
        Ok(Tensor {
            shape,
            values,
            grad: None,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            values: vec![0.0; numel],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            values: vec![v],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn vector(values: Vec<f64>) -> Self {
        Tensor {
            shape: vec![values.len()],
            values,
            grad: None,
            requires_grad: false,
        }
    }

    /// Matrix with entries drawn from U(-bound, bound).
    pub fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut impl Rng) -> Self {
        let values = (0..rows * cols)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        Tensor {
            shape: vec![rows, cols],
            values,
            grad: None,
            requires_grad: false,
        }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn set_values(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.values.len() {
            return Err(Error::invalid(format!(
                "set_values: expected {} values, got {}",
                self.values.len(),
                values.len()
            )));
        }
        self.values.copy_from_slice(values);
        Ok(())
    }

    /// Gradient buffer, present once something has been accumulated.
    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `delta` into this tensor's gradient buffer, allocating it on
    /// first use.
    pub fn accumulate_grad(&mut self, delta: &[f64]) -> Result<()> {
        if delta.len() != self.values.len() {
            return Err(Error::DimMismatch {
                op: "accumulate_grad",
                left: self.shape.clone(),
                right: vec![delta.len()],
            });
        }
        let grad = self.grad.get_or_insert_with(|| vec![0.0; self.values.len()]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
        Ok(())
    }

    /// Pulls the gradient of `var` off a finished tape into this tensor.
    pub fn accumulate_grad_from(&mut self, tape: &Tape, var: Var) -> Result<()> {
        let delta = tape.grad(var)?;
        self.accumulate_grad(delta)
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Identifies a primitive for the adjoint-perturbation check hook.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    MatMul,
    Add,
    Sub,
    Mul,
    Scale,
    LeakyRelu,
    Tanh,
    Sin,
    Sum,
    Mse,
    L2NormSq,
    MaskedMse,
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Scale => "scale",
            OpKind::LeakyRelu => "leaky_relu",
            OpKind::Tanh => "tanh",
            OpKind::Sin => "sin",
            OpKind::Sum => "sum",
            OpKind::Mse => "mse",
            OpKind::L2NormSq => "l2_norm_sq",
            OpKind::MaskedMse => "masked_mse",
        }
    }

    pub fn parse(name: &str) -> Option<OpKind> {
        Some(match name {
            "matmul" => OpKind::MatMul,
            "add" => OpKind::Add,
            "sub" => OpKind::Sub,
            "mul" => OpKind::Mul,
            "scale" => OpKind::Scale,
            "leaky_relu" => OpKind::LeakyRelu,
            "tanh" => OpKind::Tanh,
            "sin" => OpKind::Sin,
            "sum" => OpKind::Sum,
            "mse" => OpKind::Mse,
            "l2_norm_sq" => OpKind::L2NormSq,
            "masked_mse" => OpKind::MaskedMse,
            _ => return None,
        })
    }

    pub fn all() -> &'static [OpKind] {
        &[
            OpKind::MatMul,
            OpKind::Add,
            OpKind::Sub,
            OpKind::Mul,
            OpKind::Scale,
            OpKind::LeakyRelu,
            OpKind::Tanh,
            OpKind::Sin,
            OpKind::Sum,
            OpKind::Mse,
            OpKind::L2NormSq,
            OpKind::MaskedMse,
        ]
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// a: [m,k] x b: [k,n] -> [m,n]
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    /// a: [m,k] x x: [k] -> [m]
    MatVec { a: Var, x: Var, m: usize, k: usize },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, c: f64 },
    LeakyRelu { a: Var, slope: f64 },
    Tanh { a: Var },
    Sin { a: Var },
    Sum { a: Var },
    Mse { pred: Var, target: Var },
    L2NormSq { a: Var },
    MaskedMse { pred: Var, target: Var, mask: Vec<bool>, unmasked: usize },
}

impl Op {
    fn kind(&self) -> Option<OpKind> {
        Some(match self {
            Op::Leaf => return None,
            Op::MatMul { .. } | Op::MatVec { .. } => OpKind::MatMul,
            Op::Add { .. } => OpKind::Add,
            Op::Sub { .. } => OpKind::Sub,
            Op::Mul { .. } => OpKind::Mul,
            Op::Scale { .. } => OpKind::Scale,
            Op::LeakyRelu { .. } => OpKind::LeakyRelu,
            Op::Tanh { .. } => OpKind::Tanh,
            Op::Sin { .. } => OpKind::Sin,
            Op::Sum { .. } => OpKind::Sum,
            Op::Mse { .. } => OpKind::Mse,
            Op::L2NormSq { .. } => OpKind::L2NormSq,
            Op::MaskedMse { .. } => OpKind::MaskedMse,
        })
    }
}

struct Node {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Vec<f64>,
    needs_grad: bool,
    op: Op,
    adjoint_runs: u32,
}

/// Recording tape for one forward/backward cycle.
///
/// Ops are recorded in topological order by construction: every input handle
/// already names an earlier node. [`Tape::backward`] replays the records in
/// reverse, runs each adjoint exactly once, and then marks the tape consumed;
/// a second backward on the same tape is a contract violation.
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
    perturbation: Option<(OpKind, f64)>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            consumed: false,
            perturbation: None,
        }
    }

    /// Verification hook: adds `delta` to every gradient contribution written
    /// by adjoints of the given op. Used by the `check` command to prove the
    /// gradient gate actually fails when an adjoint is wrong.
    pub fn set_adjoint_perturbation(&mut self, kind: OpKind, delta: f64) {
        self.perturbation = Some((kind, delta));
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of non-leaf ops recorded.
    pub fn op_count(&self) -> usize {
        self.nodes.iter().filter(|n| !matches!(n.op, Op::Leaf)).count()
    }

    /// How many times each node's adjoint has run (leaves report 0).
    pub fn adjoint_runs(&self) -> Vec<u32> {
        self.nodes.iter().map(|n| n.adjoint_runs).collect()
    }

    fn push(&mut self, shape: Vec<usize>, values: Vec<f64>, needs_grad: bool, op: Op) -> Var {
        let numel = values.len();
        self.nodes.push(Node {
            shape,
            values,
            grad: vec![0.0; numel],
            needs_grad,
            op,
            adjoint_runs: 0,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    /// Copies a tensor onto the tape, inheriting its `requires_grad` flag.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(
            t.shape().to_vec(),
            t.values().to_vec(),
            t.requires_grad(),
            Op::Leaf,
        )
    }

    /// Copies a tensor onto the tape with gradients disabled, regardless of
    /// the tensor's own flag. Used for frozen parameters.
    pub fn leaf_detached(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.values().to_vec(), false, Op::Leaf)
    }

    pub fn constant(&mut self, shape: Vec<usize>, values: Vec<f64>) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if values.len() != numel {
            return Err(Error::invalid(format!(
                "constant: shape {:?} implies {} values, got {}",
                shape,
                numel,
                values.len()
            )));
        }
        Ok(self.push(shape, values, false, Op::Leaf))
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).values
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    /// Scalar value of a 1-element node.
    pub fn scalar_value(&self, v: Var) -> Result<f64> {
        let n = self.node(v);
        if n.values.len() != 1 {
            return Err(Error::contract(format!(
                "scalar_value on node of shape {:?}",
                n.shape
            )));
        }
        Ok(n.values[0])
    }

    /// Gradient of a node after [`Tape::backward`] has run.
    pub fn grad(&self, v: Var) -> Result<&[f64]> {
        if !self.consumed {
            return Err(Error::contract("grad read before backward"));
        }
        let n = self.node(v);
        if !n.needs_grad {
            return Err(Error::contract(
                "grad requested for a node that does not require gradients",
            ));
        }
        Ok(&n.grad)
    }

    /// Matrix product. Accepts [m,k]x[k,n] -> [m,n] and the matrix-vector
    /// form [m,k]x[k] -> [m].
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ashape, bshape) = (self.node(a).shape.clone(), self.node(b).shape.clone());
        match (ashape.as_slice(), bshape.as_slice()) {
            (&[m, k], &[k2, n]) => {
                if k != k2 {
                    return Err(Error::DimMismatch { op: "matmul", left: ashape, right: bshape });
                }
                let av = &self.node(a).values;
                let bv = &self.node(b).values;
                let mut out = vec![0.0; m * n];
                for i in 0..m {
                    for p in 0..k {
                        let aip = av[i * k + p];
                        for j in 0..n {
                            out[i * n + j] += aip * bv[p * n + j];
                        }
                    }
                }
                let needs = self.node(a).needs_grad || self.node(b).needs_grad;
                Ok(self.push(vec![m, n], out, needs, Op::MatMul { a, b, m, k, n }))
            }
            (&[m, k], &[k2]) => {
                if k != k2 {
                    return Err(Error::DimMismatch { op: "matmul", left: ashape, right: bshape });
                }
                let av = &self.node(a).values;
                let xv = &self.node(b).values;
                let mut out = vec![0.0; m];
                for i in 0..m {
                    let mut acc = 0.0;
                    for p in 0..k {
                        acc += av[i * k + p] * xv[p];
                    }
                    out[i] = acc;
                }
                let needs = self.node(a).needs_grad || self.node(b).needs_grad;
                Ok(self.push(vec![m], out, needs, Op::MatVec { a, x: b, m, k }))
            }
            _ => Err(Error::DimMismatch { op: "matmul", left: ashape, right: bshape }),
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.node(a).shape != self.node(b).shape {
            return Err(Error::DimMismatch {
                op,
                left: self.node(a).shape.clone(),
                right: self.node(b).shape.clone(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out: Vec<f64> = self
            .node(a)
            .values
            .iter()
            .zip(&self.node(b).values)
            .map(|(x, y)| x + y)
            .collect();
        let needs = self.node(a).needs_grad || self.node(b).needs_grad;
        let shape = self.node(a).shape.clone();
        Ok(self.push(shape, out, needs, Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out: Vec<f64> = self
            .node(a)
            .values
            .iter()
            .zip(&self.node(b).values)
            .map(|(x, y)| x - y)
            .collect();
        let needs = self.node(a).needs_grad || self.node(b).needs_grad;
        let shape = self.node(a).shape.clone();
        Ok(self.push(shape, out, needs, Op::Sub { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out: Vec<f64> = self
            .node(a)
            .values
            .iter()
            .zip(&self.node(b).values)
            .map(|(x, y)| x * y)
            .collect();
        let needs = self.node(a).needs_grad || self.node(b).needs_grad;
        let shape = self.node(a).shape.clone();
        Ok(self.push(shape, out, needs, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out: Vec<f64> = self.node(a).values.iter().map(|x| c * x).collect();
        let needs = self.node(a).needs_grad;
        let shape = self.node(a).shape.clone();
        self.push(shape, out, needs, Op::Scale { a, c })
    }

    /// Elementwise max(x, slope*x). Backward multiplies by 1 where x > 0 and
    /// by `slope` elsewhere.
    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        if !(slope >= 0.0) {
            return Err(Error::invalid(format!("leaky_relu slope must be >= 0, got {slope}")));
        }
        let out: Vec<f64> = self
            .node(a)
            .values
            .iter()
            .map(|&x| if x > 0.0 { x } else { slope * x })
            .collect();
        let needs = self.node(a).needs_grad;
        let shape = self.node(a).shape.clone();
        Ok(self.push(shape, out, needs, Op::LeakyRelu { a, slope }))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out: Vec<f64> = self.node(a).values.iter().map(|x| x.tanh()).collect();
        let needs = self.node(a).needs_grad;
        let shape = self.node(a).shape.clone();
        self.push(shape, out, needs, Op::Tanh { a })
    }

    pub fn sin(&mut self, a: Var) -> Var {
        let out: Vec<f64> = self.node(a).values.iter().map(|x| x.sin()).collect();
        let needs = self.node(a).needs_grad;
        let shape = self.node(a).shape.clone();
        self.push(shape, out, needs, Op::Sin { a })
    }

    /// Full reduction to a scalar of shape [1].
    pub fn sum(&mut self, a: Var) -> Var {
        let total: f64 = self.node(a).values.iter().sum();
        let needs = self.node(a).needs_grad;
        self.push(vec![1], vec![total], needs, Op::Sum { a })
    }

    /// Mean squared error: sum((pred-target)^2) / numel.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape("mse", pred, target)?;
        let n = self.node(pred).values.len() as f64;
        let total: f64 = self
            .node(pred)
            .values
            .iter()
            .zip(&self.node(target).values)
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        let needs = self.node(pred).needs_grad || self.node(target).needs_grad;
        Ok(self.push(vec![1], vec![total / n], needs, Op::Mse { pred, target }))
    }

    /// Sum of squares, unnormalized.
    pub fn l2_norm_sq(&mut self, a: Var) -> Var {
        let total: f64 = self.node(a).values.iter().map(|x| x * x).sum();
        let needs = self.node(a).needs_grad;
        self.push(vec![1], vec![total], needs, Op::L2NormSq { a })
    }

    /// Squared error averaged over unmasked entries only. Masked entries
    /// contribute nothing to the value or the gradient.
    pub fn masked_mse(&mut self, pred: Var, target: Var, mask: &[bool]) -> Result<Var> {
        self.same_shape("masked_mse", pred, target)?;
        if mask.len() != self.node(pred).values.len() {
            return Err(Error::DimMismatch {
                op: "masked_mse",
                left: self.node(pred).shape.clone(),
                right: vec![mask.len()],
            });
        }
        let unmasked = mask.iter().filter(|&&m| m).count();
        if unmasked == 0 {
            return Err(Error::invalid("masked_mse: mask excludes every entry"));
        }
        let total: f64 = self
            .node(pred)
            .values
            .iter()
            .zip(&self.node(target).values)
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|((p, t), _)| (p - t) * (p - t))
            .sum();
        let needs = self.node(pred).needs_grad || self.node(target).needs_grad;
        Ok(self.push(
            vec![1],
            vec![total / unmasked as f64],
            needs,
            Op::MaskedMse { pred, target, mask: mask.to_vec(), unmasked },
        ))
    }

    /// Reverse sweep from a scalar loss. Runs every recorded op's adjoint
    /// exactly once, in reverse tape order, accumulating into node gradient
    /// buffers. Consumes the tape: a second call errors.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::contract("backward called twice on one tape"));
        }
        if loss.0 >= self.nodes.len() {
            return Err(Error::contract("backward: loss var is not on this tape"));
        }
        if self.nodes[loss.0].values.len() != 1 {
            return Err(Error::contract(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        self.consumed = true;
        self.nodes[loss.0].grad[0] = 1.0;

        for idx in (0..self.nodes.len()).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let op = self.nodes[idx].op.clone();
            if matches!(op, Op::Leaf) {
                continue;
            }
            let perturb = match (self.perturbation, op.kind()) {
                (Some((k, d)), Some(kind)) if k == kind => d,
                _ => 0.0,
            };
            self.nodes[idx].adjoint_runs += 1;
            let g = self.nodes[idx].grad.clone();
            match op {
                Op::Leaf => unreachable!(),
                Op::MatMul { a, b, m, k, n } => {
                    // dA = g . B^T, dB = A^T . g
                    if self.nodes[a.0].needs_grad {
                        let bv = self.nodes[b.0].values.clone();
                        let da = &mut self.nodes[a.0].grad;
                        for i in 0..m {
                            for p in 0..k {
                                let mut acc = 0.0;
                                for j in 0..n {
                                    acc += g[i * n + j] * bv[p * n + j];
                                }
                                da[i * k + p] += acc + perturb;
                            }
                        }
                    }
                    if self.nodes[b.0].needs_grad {
                        let av = self.nodes[a.0].values.clone();
                        let db = &mut self.nodes[b.0].grad;
                        for p in 0..k {
                            for j in 0..n {
                                let mut acc = 0.0;
                                for i in 0..m {
                                    acc += av[i * k + p] * g[i * n + j];
                                }
                                db[p * n + j] += acc + perturb;
                            }
                        }
                    }
                }
                Op::MatVec { a, x, m, k } => {
                    if self.nodes[a.0].needs_grad {
                        let xv = self.nodes[x.0].values.clone();
                        let da = &mut self.nodes[a.0].grad;
                        for i in 0..m {
                            for p in 0..k {
                                da[i * k + p] += g[i] * xv[p] + perturb;
                            }
                        }
                    }
                    if self.nodes[x.0].needs_grad {
                        let av = self.nodes[a.0].values.clone();
                        let dx = &mut self.nodes[x.0].grad;
                        for p in 0..k {
                            let mut acc = 0.0;
                            for i in 0..m {
                                acc += av[i * k + p] * g[i];
                            }
                            dx[p] += acc + perturb;
                        }
                    }
                }
                Op::Add { a, b } => {
                    for (v, sign) in [(a, 1.0), (b, 1.0)] {
                        if self.nodes[v.0].needs_grad {
                            let dv = &mut self.nodes[v.0].grad;
                            for (d, gi) in dv.iter_mut().zip(&g) {
                                *d += sign * gi + perturb;
                            }
                        }
                    }
                }
                Op::Sub { a, b } => {
                    for (v, sign) in [(a, 1.0), (b, -1.0)] {
                        if self.nodes[v.0].needs_grad {
                            let dv = &mut self.nodes[v.0].grad;
                            for (d, gi) in dv.iter_mut().zip(&g) {
                                *d += sign * gi + perturb;
                            }
                        }
                    }
                }
                Op::Mul { a, b } => {
                    if self.nodes[a.0].needs_grad {
                        let bv = self.nodes[b.0].values.clone();
                        let da = &mut self.nodes[a.0].grad;
                        for i in 0..g.len() {
                            da[i] += g[i] * bv[i] + perturb;
                        }
                    }
                    if self.nodes[b.0].needs_grad {
                        let av = self.nodes[a.0].values.clone();
                        let db = &mut self.nodes[b.0].grad;
                        for i in 0..g.len() {
                            db[i] += g[i] * av[i] + perturb;
                        }
                    }
                }
                Op::Scale { a, c } => {
                    if self.nodes[a.0].needs_grad {
                        let da = &mut self.nodes[a.0].grad;
                        for (d, gi) in da.iter_mut().zip(&g) {
                            *d += c * gi + perturb;
                        }
                    }
                }
                Op::LeakyRelu { a, slope } => {
                    if self.nodes[a.0].needs_grad {
                        let xv = self.nodes[a.0].values.clone();
                        let da = &mut self.nodes[a.0].grad;
                        for i in 0..g.len() {
                            let factor = if xv[i] > 0.0 { 1.0 } else { slope };
                            da[i] += factor * g[i] + perturb;
                        }
                    }
                }
                Op::Tanh { a } => {
                    if self.nodes[a.0].needs_grad {
                        let yv = self.nodes[idx].values.clone();
                        let da = &mut self.nodes[a.0].grad;
                        for i in 0..g.len() {
                            da[i] += (1.0 - yv[i] * yv[i]) * g[i] + perturb;
                        }
                    }
                }
                Op::Sin { a } => {
                    if self.nodes[a.0].needs_grad {
                        let xv = self.nodes[a.0].values.clone();
                        let da = &mut self.nodes[a.0].grad;
                        for i in 0..g.len() {
                            da[i] += xv[i].cos() * g[i] + perturb;
                        }
                    }
                }
                Op::Sum { a } => {
                    if self.nodes[a.0].needs_grad {
                        let da = &mut self.nodes[a.0].grad;
                        for d in da.iter_mut() {
                            *d += g[0] + perturb;
                        }
                    }
                }
                Op::Mse { pred, target } => {
                    let n = self.nodes[pred.0].values.len() as f64;
                    let pv = self.nodes[pred.0].values.clone();
                    let tv = self.nodes[target.0].values.clone();
                    if self.nodes[pred.0].needs_grad {
                        let dp = &mut self.nodes[pred.0].grad;
                        for i in 0..pv.len() {
                            dp[i] += 2.0 * (pv[i] - tv[i]) / n * g[0] + perturb;
                        }
                    }
                    if self.nodes[target.0].needs_grad {
                        let dt = &mut self.nodes[target.0].grad;
                        for i in 0..pv.len() {
                            dt[i] += -2.0 * (pv[i] - tv[i]) / n * g[0] + perturb;
                        }
                    }
                }
                Op::L2NormSq { a } => {
                    if self.nodes[a.0].needs_grad {
                        let xv = self.nodes[a.0].values.clone();
                        let da = &mut self.nodes[a.0].grad;
                        for i in 0..xv.len() {
                            da[i] += 2.0 * xv[i] * g[0] + perturb;
                        }
                    }
                }
                Op::MaskedMse { pred, target, mask, unmasked } => {
                    let n = unmasked as f64;
                    let pv = self.nodes[pred.0].values.clone();
                    let tv = self.nodes[target.0].values.clone();
                    if self.nodes[pred.0].needs_grad {
                        let dp = &mut self.nodes[pred.0].grad;
                        for i in 0..pv.len() {
                            if mask[i] {
                                dp[i] += 2.0 * (pv[i] - tv[i]) / n * g[0] + perturb;
                            }
                        }
                    }
                    if self.nodes[target.0].needs_grad {
                        let dt = &mut self.nodes[target.0].grad;
                        for i in 0..pv.len() {
                            if mask[i] {
                                dt[i] += -2.0 * (pv[i] - tv[i]) / n * g[0] + perturb;
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grad_of(t: &Tensor, build: impl Fn(&mut Tape, Var) -> Var) -> Vec<f64> {
        let mut tape = Tape::new();
        let v = tape.leaf(t);
        let loss = build(&mut tape, v);
        tape.backward(loss).unwrap();
        tape.grad(v).unwrap().to_vec()
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let eye = tape
            .constant(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0])
            .unwrap();
        let m = tape
            .constant(vec![2, 2], vec![3.0, 4.0, 5.0, 6.0])
            .unwrap();
        let out = tape.matmul(eye, m).unwrap();
        assert_eq!(tape.value(out), &[3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn matmul_row_times_column() {
        let mut tape = Tape::new();
        let a = tape.constant(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let b = tape.constant(vec![2, 1], vec![3.0, 4.0]).unwrap();
        let out = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(out), &[11.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(vec![2, 3], vec![0.0; 6]).unwrap();
        let b = tape.constant(vec![2, 2], vec![0.0; 4]).unwrap();
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn leaky_relu_branches() {
        let t = Tensor::vector(vec![2.0, -2.0]);
        let mut tape = Tape::new();
        let v = tape.leaf(&t);
        let out = tape.leaky_relu(v, 0.2).unwrap();
        assert_eq!(tape.value(out), &[2.0, -0.4]);
    }

    #[test]
    fn leaky_relu_rejects_negative_slope() {
        let t = Tensor::vector(vec![1.0]);
        let mut tape = Tape::new();
        let v = tape.leaf(&t);
        assert!(tape.leaky_relu(v, -0.1).is_err());
    }

    #[test]
    fn mse_values() {
        let mut tape = Tape::new();
        let a = tape.constant(vec![2], vec![1.0, 2.0]).unwrap();
        let b = tape.constant(vec![2], vec![1.0, 2.0]).unwrap();
        let zero = tape.mse(a, b).unwrap();
        assert_eq!(tape.scalar_value(zero).unwrap(), 0.0);

        let p = tape.constant(vec![2], vec![0.0, 0.0]).unwrap();
        let t = tape.constant(vec![2], vec![3.0, 4.0]).unwrap();
        let loss = tape.mse(p, t).unwrap();
        assert_eq!(tape.scalar_value(loss).unwrap(), 12.5);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let z = Tensor::vector(vec![1.0, 2.0, 3.0, 4.0, 5.0]).with_grad();
        let g = grad_of(&z, |tape, v| tape.sum(v));
        assert_eq!(g, vec![1.0; 5]);
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let z = Tensor::vector(vec![1.0, 2.0]).with_grad();
        let mut tape = Tape::new();
        let v = tape.leaf(&z);
        let doubled = tape.scale(v, 2.0);
        let err = tape.backward(doubled).unwrap_err();
        assert!(matches!(err, Error::ContractViolation(_)));
    }

    #[test]
    fn backward_twice_on_one_tape_is_an_error() {
        let z = Tensor::vector(vec![1.0]).with_grad();
        let mut tape = Tape::new();
        let v = tape.leaf(&z);
        let loss = tape.sum(v);
        tape.backward(loss).unwrap();
        assert!(tape.backward(loss).is_err());
    }

    #[test]
    fn accumulation_across_fresh_tapes_doubles_grads() {
        let mut z = Tensor::vector(vec![1.0, -2.0, 3.0]).with_grad();
        let mut once = None;
        for pass in 0..2 {
            let mut tape = Tape::new();
            let v = tape.leaf(&z);
            let sq = tape.l2_norm_sq(v);
            tape.backward(sq).unwrap();
            z.accumulate_grad_from(&tape, v).unwrap();
            if pass == 0 {
                once = Some(z.grad().unwrap().to_vec());
            }
        }
        let twice = z.grad().unwrap();
        for (a, b) in once.unwrap().iter().zip(twice) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn adjoints_run_exactly_once() {
        let z = Tensor::vector(vec![0.3, -0.7]).with_grad();
        let mut tape = Tape::new();
        let v = tape.leaf(&z);
        let s = tape.sin(v);
        let t = tape.tanh(s);
        let r = tape.leaky_relu(t, 0.2).unwrap();
        let loss = tape.l2_norm_sq(r);
        tape.backward(loss).unwrap();
        let runs = tape.adjoint_runs();
        // leaf reports 0; every recorded op exactly 1
        assert_eq!(runs, vec![0, 1, 1, 1, 1]);
    }

    #[test]
    fn masked_mse_ignores_masked_entries() {
        let mut tape = Tape::new();
        let yhat = Tensor::vector(vec![1.0, 99.0]).with_grad();
        let p = tape.leaf(&yhat);
        let t = tape.constant(vec![2], vec![1.0, 2.0]).unwrap();
        let loss = tape.masked_mse(p, t, &[true, false]).unwrap();
        assert_eq!(tape.scalar_value(loss).unwrap(), 0.0);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(p).unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn masked_mse_rejects_all_false_mask() {
        let mut tape = Tape::new();
        let a = tape.constant(vec![2], vec![1.0, 2.0]).unwrap();
        let b = tape.constant(vec![2], vec![1.0, 2.0]).unwrap();
        assert!(tape.masked_mse(a, b, &[false, false]).is_err());
    }

    #[test]
    fn adjoint_perturbation_breaks_gradients() {
        let z = Tensor::vector(vec![0.5, 1.5]).with_grad();
        let clean = grad_of(&z, |tape, v| tape.l2_norm_sq(v));
        let mut tape = Tape::new();
        tape.set_adjoint_perturbation(OpKind::L2NormSq, 1e-2);
        let v = tape.leaf(&z);
        let loss = tape.l2_norm_sq(v);
        tape.backward(loss).unwrap();
        let dirty = tape.grad(v).unwrap();
        assert!(clean.iter().zip(dirty).any(|(c, d)| (c - d).abs() > 1e-3));
    }
}
