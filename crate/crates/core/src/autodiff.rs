//! Scalar-tape automatic differentiation.
//!
//! An objective is recorded once onto a [`Tape`] through a [`Tracer`]; every
//! later evaluation replays that tape on fresh inputs. First derivatives come
//! from a single reverse sweep. Second-order products come from a reverse
//! sweep that also carries tangents (forward-over-reverse), so a
//! Hessian-vector product costs a small constant multiple of one evaluation
//! and no Hessian is ever formed symbolically.
//!
//! Objectives must not branch on input values: the tape is a straight-line
//! program and replaying it with other inputs assumes the same structure.

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::Arc;

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AdError {
    #[error("unknown input block `{0}`")]
    UnknownBlock(String),
    #[error("input block `{0}` is missing")]
    MissingBlock(String),
    #[error("input block `{0}` given more than once")]
    DuplicateBlock(String),
    #[error("block `{block}` expects dimension {expected}, got {actual}")]
    DimensionMismatch {
        block: String,
        expected: usize,
        actual: usize,
    },
    #[error("mixed second derivative needs two distinct blocks, got `{0}` twice (use hvp)")]
    SameBlock(String),
    #[error("flat input has length {actual}, tape expects {expected}")]
    FlatLength { expected: usize, actual: usize },
}

/// Operation recorded on a tape node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Op {
    Input,
    Const(f64),
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    /// `c * x`
    Scale(f64),
    /// `x + c`
    Offset(f64),
    Square,
    /// `x^c` for a constant exponent.
    Powf(f64),
    Exp,
    Ln,
    /// n-ary sum over a contiguous run of the operand arena.
    Sum,
}

#[derive(Debug, Clone, Copy)]
struct Node {
    op: Op,
    // Parent indices. For `Sum` these are (start, len) into `operands`.
    lhs: u32,
    rhs: u32,
}

/// A recorded straight-line computation with a single scalar output.
///
/// Nodes are stored in topological order (parents always precede children)
/// and the first `num_inputs` nodes are the input leaves.
#[derive(Debug, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    operands: Vec<u32>,
    num_inputs: usize,
    output: u32,
}

/// Recording context handed to objective bodies.
pub struct Tracer {
    nodes: RefCell<Vec<Node>>,
    operands: RefCell<Vec<u32>>,
}

/// Handle to a node being recorded. Cheap to copy; arithmetic on it appends
/// nodes to the owning [`Tracer`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tracer: &'t Tracer,
    id: u32,
}

impl Tracer {
    fn new() -> Self {
        Tracer {
            nodes: RefCell::new(Vec::new()),
            operands: RefCell::new(Vec::new()),
        }
    }

    fn push(&self, op: Op, lhs: u32, rhs: u32) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = u32::try_from(nodes.len()).expect("tape exceeds u32 node indices");
        nodes.push(Node { op, lhs, rhs });
        Var { tracer: self, id }
    }

    fn input(&self) -> Var<'_> {
        self.push(Op::Input, 0, 0)
    }

    pub fn constant(&self, value: f64) -> Var<'_> {
        self.push(Op::Const(value), 0, 0)
    }

    /// Sum of an arbitrary number of terms; the empty sum records a zero.
    pub fn sum<'t, I>(&'t self, terms: I) -> Var<'t>
    where
        I: IntoIterator<Item = Var<'t>>,
    {
        // Terms may themselves record nodes (and nested sums), so drain the
        // iterator before touching the operand arena.
        let ids: Vec<u32> = terms
            .into_iter()
            .map(|v| {
                debug_assert!(std::ptr::eq(v.tracer, self));
                v.id
            })
            .collect();
        if ids.is_empty() {
            return self.constant(0.0);
        }
        let len = ids.len();
        let start = {
            let mut operands = self.operands.borrow_mut();
            let start = operands.len();
            operands.extend(ids);
            start
        };
        self.push(Op::Sum, start as u32, len as u32)
    }

    /// Inner product of two recorded vectors.
    pub fn dot<'t>(&'t self, a: &[Var<'t>], b: &[Var<'t>]) -> Var<'t> {
        assert_eq!(a.len(), b.len(), "dot of vectors with different lengths");
        self.sum(a.iter().zip(b).map(|(&x, &y)| x * y))
    }

    /// Affine map `coeffs . x + offset` with constant coefficients.
    pub fn affine<'t>(&'t self, coeffs: &[f64], x: &[Var<'t>], offset: f64) -> Var<'t> {
        assert_eq!(coeffs.len(), x.len(), "affine map with mismatched lengths");
        let s = self.sum(coeffs.iter().zip(x).map(|(&c, &v)| v * c));
        if offset == 0.0 {
            s
        } else {
            s + offset
        }
    }
}

impl<'t> Var<'t> {
    fn unary(self, op: Op) -> Var<'t> {
        self.tracer.push(op, self.id, 0)
    }

    fn binary(self, op: Op, other: Var<'t>) -> Var<'t> {
        debug_assert!(std::ptr::eq(self.tracer, other.tracer));
        self.tracer.push(op, self.id, other.id)
    }

    pub fn square(self) -> Var<'t> {
        self.unary(Op::Square)
    }

    pub fn powf(self, exponent: f64) -> Var<'t> {
        if exponent == 2.0 {
            self.square()
        } else {
            self.unary(Op::Powf(exponent))
        }
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Op::Exp)
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(Op::Ln)
    }

    pub fn tracer(&self) -> &'t Tracer {
        self.tracer
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(Op::Add, rhs)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(Op::Sub, rhs)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(Op::Mul, rhs)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(Op::Div, rhs)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.unary(Op::Neg)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Var<'t> {
        self.unary(Op::Offset(rhs))
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Var<'t> {
        self.unary(Op::Offset(-rhs))
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Var<'t> {
        self.unary(Op::Scale(rhs))
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: f64) -> Var<'t> {
        self.unary(Op::Scale(1.0 / rhs))
    }
}

impl<'t> Add<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        rhs + self
    }
}

impl<'t> Sub<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        (-rhs) + self
    }
}

impl<'t> Mul<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        rhs * self
    }
}

impl<'t> Div<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        rhs.unary(Op::Powf(-1.0)) * self
    }
}

impl Tape {
    /// Records `body` over `num_inputs` fresh input leaves.
    pub fn record<F>(num_inputs: usize, body: F) -> Tape
    where
        F: for<'t> FnOnce(&'t Tracer, &[Var<'t>]) -> Var<'t>,
    {
        let tracer = Tracer::new();
        let inputs: Vec<Var<'_>> = (0..num_inputs).map(|_| tracer.input()).collect();
        let output = body(&tracer, &inputs).id;
        drop(inputs);
        Tape {
            nodes: tracer.nodes.into_inner(),
            operands: tracer.operands.into_inner(),
            num_inputs,
            output,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn num_inputs(&self) -> usize {
        self.num_inputs
    }

    /// Replays the tape, returning every node value.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.num_inputs);
        let mut v: Vec<f64> = Vec::with_capacity(self.nodes.len());
        for (k, node) in self.nodes.iter().enumerate() {
            let (a, b) = (node.lhs as usize, node.rhs as usize);
            let value = match node.op {
                Op::Input => x[k],
                Op::Const(c) => c,
                Op::Add => v[a] + v[b],
                Op::Sub => v[a] - v[b],
                Op::Mul => v[a] * v[b],
                Op::Div => v[a] / v[b],
                Op::Neg => -v[a],
                Op::Scale(c) => c * v[a],
                Op::Offset(c) => v[a] + c,
                Op::Square => v[a] * v[a],
                Op::Powf(p) => v[a].powf(p),
                Op::Exp => v[a].exp(),
                Op::Ln => v[a].ln(),
                Op::Sum => self.operands[a..a + b].iter().map(|&j| v[j as usize]).sum(),
            };
            v.push(value);
        }
        v
    }

    pub fn output(&self, values: &[f64]) -> f64 {
        values[self.output as usize]
    }

    /// Directional derivatives of every node along the input direction `dx`.
    pub fn tangent(&self, values: &[f64], dx: &[f64]) -> Vec<f64> {
        assert_eq!(dx.len(), self.num_inputs);
        let v = values;
        let mut t: Vec<f64> = Vec::with_capacity(self.nodes.len());
        for (k, node) in self.nodes.iter().enumerate() {
            let (a, b) = (node.lhs as usize, node.rhs as usize);
            let dot = match node.op {
                Op::Input => dx[k],
                Op::Const(_) => 0.0,
                Op::Add => t[a] + t[b],
                Op::Sub => t[a] - t[b],
                Op::Mul => t[a] * v[b] + v[a] * t[b],
                Op::Div => (t[a] - v[k] * t[b]) / v[b],
                Op::Neg => -t[a],
                Op::Scale(c) => c * t[a],
                Op::Offset(_) => t[a],
                Op::Square => 2.0 * v[a] * t[a],
                Op::Powf(p) => power_slope(v[a], p) * t[a],
                Op::Exp => v[k] * t[a],
                Op::Ln => t[a] / v[a],
                Op::Sum => self.operands[a..a + b].iter().map(|&j| t[j as usize]).sum(),
            };
            t.push(dot);
        }
        t
    }

    /// Values and tangents along `dx` in one sweep; same results as
    /// [`Tape::forward`] followed by [`Tape::tangent`].
    pub fn forward_tangent(&self, x: &[f64], dx: &[f64]) -> (Vec<f64>, Vec<f64>) {
        assert_eq!(x.len(), self.num_inputs);
        assert_eq!(dx.len(), self.num_inputs);
        let n = self.nodes.len();
        let mut v: Vec<f64> = Vec::with_capacity(n);
        let mut t: Vec<f64> = Vec::with_capacity(n);
        for (k, node) in self.nodes.iter().enumerate() {
            let (a, b) = (node.lhs as usize, node.rhs as usize);
            let (value, dot) = match node.op {
                Op::Input => (x[k], dx[k]),
                Op::Const(c) => (c, 0.0),
                Op::Add => (v[a] + v[b], t[a] + t[b]),
                Op::Sub => (v[a] - v[b], t[a] - t[b]),
                Op::Mul => (v[a] * v[b], t[a] * v[b] + v[a] * t[b]),
                Op::Div => {
                    let q = v[a] / v[b];
                    (q, (t[a] - q * t[b]) / v[b])
                }
                Op::Neg => (-v[a], -t[a]),
                Op::Scale(c) => (c * v[a], c * t[a]),
                Op::Offset(c) => (v[a] + c, t[a]),
                Op::Square => (v[a] * v[a], 2.0 * v[a] * t[a]),
                Op::Powf(p) => (v[a].powf(p), power_slope(v[a], p) * t[a]),
                Op::Exp => {
                    let e = v[a].exp();
                    (e, e * t[a])
                }
                Op::Ln => (v[a].ln(), t[a] / v[a]),
                Op::Sum => {
                    let ops = &self.operands[a..a + b];
                    (
                        ops.iter().map(|&j| v[j as usize]).sum(),
                        ops.iter().map(|&j| t[j as usize]).sum(),
                    )
                }
            };
            v.push(value);
            t.push(dot);
        }
        (v, t)
    }

    /// Reverse sweep: adjoints of the output with respect to every input.
    pub fn gradient(&self, values: &[f64]) -> Vec<f64> {
        let v = values;
        let mut adj = vec![0.0; self.nodes.len()];
        adj[self.output as usize] = 1.0;
        for k in (self.num_inputs..self.nodes.len()).rev() {
            let g = adj[k];
            if g == 0.0 {
                continue;
            }
            let node = self.nodes[k];
            let (a, b) = (node.lhs as usize, node.rhs as usize);
            match node.op {
                Op::Input | Op::Const(_) => {}
                Op::Add => {
                    adj[a] += g;
                    adj[b] += g;
                }
                Op::Sub => {
                    adj[a] += g;
                    adj[b] -= g;
                }
                Op::Mul => {
                    adj[a] += g * v[b];
                    adj[b] += g * v[a];
                }
                Op::Div => {
                    adj[a] += g / v[b];
                    adj[b] -= g * v[k] / v[b];
                }
                Op::Neg => adj[a] -= g,
                Op::Scale(c) => adj[a] += g * c,
                Op::Offset(_) => adj[a] += g,
                Op::Square => adj[a] += 2.0 * g * v[a],
                Op::Powf(p) => adj[a] += g * power_slope(v[a], p),
                Op::Exp => adj[a] += g * v[k],
                Op::Ln => adj[a] += g / v[a],
                Op::Sum => {
                    for &j in &self.operands[a..a + b] {
                        adj[j as usize] += g;
                    }
                }
            }
        }
        adj.truncate(self.num_inputs);
        adj
    }

    /// Reverse sweep carrying tangents along `tangents` (from [`Tape::tangent`]).
    ///
    /// Returns `(gradient, hessian * dx)` restricted to the inputs.
    pub fn gradient_and_hvp(&self, values: &[f64], tangents: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (v, t) = (values, tangents);
        let n = self.nodes.len();
        let mut adj = vec![0.0; n];
        let mut adt = vec![0.0; n];
        adj[self.output as usize] = 1.0;
        for k in (self.num_inputs..n).rev() {
            let (g, gd) = (adj[k], adt[k]);
            if g == 0.0 && gd == 0.0 {
                continue;
            }
            let node = self.nodes[k];
            let (a, b) = (node.lhs as usize, node.rhs as usize);
            // For each parent: adj += g * d, adt += gd * d + g * d_dot,
            // where d is the local partial and d_dot its tangent.
            match node.op {
                Op::Input | Op::Const(_) => {}
                Op::Add => {
                    adj[a] += g;
                    adt[a] += gd;
                    adj[b] += g;
                    adt[b] += gd;
                }
                Op::Sub => {
                    adj[a] += g;
                    adt[a] += gd;
                    adj[b] -= g;
                    adt[b] -= gd;
                }
                Op::Mul => {
                    adj[a] += g * v[b];
                    adt[a] += gd * v[b] + g * t[b];
                    adj[b] += g * v[a];
                    adt[b] += gd * v[a] + g * t[a];
                }
                Op::Div => {
                    let inv = 1.0 / v[b];
                    let da = inv;
                    let da_dot = -t[b] * inv * inv;
                    let db = -v[a] * inv * inv;
                    let db_dot = -t[a] * inv * inv + 2.0 * v[a] * t[b] * inv * inv * inv;
                    adj[a] += g * da;
                    adt[a] += gd * da + g * da_dot;
                    adj[b] += g * db;
                    adt[b] += gd * db + g * db_dot;
                }
                Op::Neg => {
                    adj[a] -= g;
                    adt[a] -= gd;
                }
                Op::Scale(c) => {
                    adj[a] += g * c;
                    adt[a] += gd * c;
                }
                Op::Offset(_) => {
                    adj[a] += g;
                    adt[a] += gd;
                }
                Op::Square => {
                    adj[a] += 2.0 * g * v[a];
                    adt[a] += 2.0 * (gd * v[a] + g * t[a]);
                }
                Op::Powf(p) => {
                    let d = power_slope(v[a], p);
                    let d_dot = power_curvature(v[a], p) * t[a];
                    adj[a] += g * d;
                    adt[a] += gd * d + g * d_dot;
                }
                Op::Exp => {
                    adj[a] += g * v[k];
                    adt[a] += gd * v[k] + g * t[k];
                }
                Op::Ln => {
                    let inv = 1.0 / v[a];
                    adj[a] += g * inv;
                    adt[a] += gd * inv - g * t[a] * inv * inv;
                }
                Op::Sum => {
                    for &j in &self.operands[a..a + b] {
                        adj[j as usize] += g;
                        adt[j as usize] += gd;
                    }
                }
            }
        }
        adj.truncate(self.num_inputs);
        adt.truncate(self.num_inputs);
        (adj, adt)
    }
}

// d/dx x^p
fn power_slope(x: f64, p: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else if p == 1.0 {
        1.0
    } else {
        p * x.powf(p - 1.0)
    }
}

// d²/dx² x^p
fn power_curvature(x: f64, p: f64) -> f64 {
    if p == 0.0 || p == 1.0 {
        0.0
    } else if p == 2.0 {
        2.0
    } else {
        p * (p - 1.0) * x.powf(p - 2.0)
    }
}

/// A named input block of a [`ScalarFunction`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockSpec {
    pub name: String,
    pub dim: usize,
    offset: usize,
}

impl BlockSpec {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.dim
    }
}

/// A scalar objective over named input blocks, recorded once onto a tape.
///
/// Cloning is cheap: the tape is shared and never mutated after recording.
#[derive(Debug, Clone)]
pub struct ScalarFunction {
    blocks: Vec<BlockSpec>,
    tape: Arc<Tape>,
}

impl ScalarFunction {
    /// Records `body`, which receives one slice of variables per declared block.
    ///
    /// ```
    /// use stackgrad::autodiff::ScalarFunction;
    /// let f = ScalarFunction::record(&[("x", 3)], |t, b| t.sum(b[0].iter().map(|x| x.square())))
    ///     .unwrap();
    /// let g = f.gradient(&[("x", &[1.0, 2.0, 3.0])], "x").unwrap();
    /// assert_eq!(g, vec![2.0, 4.0, 6.0]);
    /// ```
    pub fn record<F>(blocks: &[(&str, usize)], body: F) -> Result<Self, AdError>
    where
        F: for<'t> FnOnce(&'t Tracer, &[&[Var<'t>]]) -> Var<'t>,
    {
        let mut specs: Vec<BlockSpec> = Vec::with_capacity(blocks.len());
        let mut offset = 0;
        for &(name, dim) in blocks {
            if specs.iter().any(|b| b.name == name) {
                return Err(AdError::DuplicateBlock(name.to_string()));
            }
            specs.push(BlockSpec {
                name: name.to_string(),
                dim,
                offset,
            });
            offset += dim;
        }
        let tape = Tape::record(offset, |tracer, inputs| {
            let split: Vec<&[Var<'_>]> = specs.iter().map(|b| &inputs[b.range()]).collect();
            body(tracer, &split)
        });
        Ok(ScalarFunction {
            blocks: specs,
            tape: Arc::new(tape),
        })
    }

    pub fn blocks(&self) -> &[BlockSpec] {
        &self.blocks
    }

    pub fn block(&self, name: &str) -> Result<&BlockSpec, AdError> {
        self.blocks
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| AdError::UnknownBlock(name.to_string()))
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    /// Total number of scalar inputs across all blocks.
    pub fn input_len(&self) -> usize {
        self.tape.num_inputs()
    }

    /// Packs named inputs into the flat layout used by the tape.
    pub fn pack(&self, inputs: &[(&str, &[f64])]) -> Result<Vec<f64>, AdError> {
        for (i, (name, _)) in inputs.iter().enumerate() {
            if inputs[..i].iter().any(|(other, _)| other == name) {
                return Err(AdError::DuplicateBlock(name.to_string()));
            }
            self.block(name)?;
        }
        let mut flat = vec![0.0; self.input_len()];
        for spec in &self.blocks {
            let (_, values) = inputs
                .iter()
                .find(|(name, _)| *name == spec.name)
                .ok_or_else(|| AdError::MissingBlock(spec.name.clone()))?;
            if values.len() != spec.dim {
                return Err(AdError::DimensionMismatch {
                    block: spec.name.clone(),
                    expected: spec.dim,
                    actual: values.len(),
                });
            }
            flat[spec.range()].copy_from_slice(values);
        }
        Ok(flat)
    }

    /// Replays the tape at named inputs, keeping node values for derivative passes.
    pub fn at(&self, inputs: &[(&str, &[f64])]) -> Result<Evaluation<'_>, AdError> {
        let flat = self.pack(inputs)?;
        Ok(self.at_flat(flat).expect("packed input has the tape length"))
    }

    /// Like [`ScalarFunction::at`] with inputs already in block order.
    pub fn at_flat(&self, point: Vec<f64>) -> Result<Evaluation<'_>, AdError> {
        if point.len() != self.input_len() {
            return Err(AdError::FlatLength {
                expected: self.input_len(),
                actual: point.len(),
            });
        }
        let values = self.tape.forward(&point);
        Ok(Evaluation { func: self, values })
    }

    /// Gradient and `H dx` at a flat point for a direction supported on
    /// `seed_block`, without keeping node values around. Same result as
    /// [`Evaluation::directional_second_order`] in two tape sweeps instead
    /// of three.
    pub fn second_order_at(&self, point: &[f64], seed_block: &str, v: &[f64]) -> Result<(Vec<f64>, Vec<f64>), AdError> {
        if point.len() != self.input_len() {
            return Err(AdError::FlatLength {
                expected: self.input_len(),
                actual: point.len(),
            });
        }
        let spec = self.block(seed_block)?;
        check_dim(spec, v)?;
        let mut dx = vec![0.0; self.input_len()];
        dx[spec.range()].copy_from_slice(v);
        let (values, tangents) = self.tape.forward_tangent(point, &dx);
        Ok(self.tape.gradient_and_hvp(&values, &tangents))
    }

    pub fn evaluate(&self, inputs: &[(&str, &[f64])]) -> Result<f64, AdError> {
        Ok(self.at(inputs)?.value())
    }

    pub fn gradient(&self, inputs: &[(&str, &[f64])], wrt: &str) -> Result<Vec<f64>, AdError> {
        self.at(inputs)?.gradient(wrt)
    }

    pub fn hvp(&self, inputs: &[(&str, &[f64])], wrt: &str, v: &[f64]) -> Result<Vec<f64>, AdError> {
        self.at(inputs)?.hvp(wrt, v)
    }

    pub fn mixed_hvp(
        &self,
        inputs: &[(&str, &[f64])],
        grad_block: &str,
        wrt_block: &str,
        v: &[f64],
    ) -> Result<Vec<f64>, AdError> {
        self.at(inputs)?.mixed_hvp(grad_block, wrt_block, v)
    }

    pub fn hessian_block(
        &self,
        inputs: &[(&str, &[f64])],
        grad_block: &str,
        wrt_block: &str,
    ) -> Result<DMatrix<f64>, AdError> {
        self.at(inputs)?.hessian_block(grad_block, wrt_block)
    }
}

/// A [`ScalarFunction`] replayed at one point.
pub struct Evaluation<'f> {
    func: &'f ScalarFunction,
    values: Vec<f64>,
}

impl<'f> Evaluation<'f> {
    pub fn value(&self) -> f64 {
        self.func.tape.output(&self.values)
    }

    /// Gradient with respect to every input, in flat block order.
    pub fn full_gradient(&self) -> Vec<f64> {
        self.func.tape.gradient(&self.values)
    }

    pub fn gradient(&self, wrt: &str) -> Result<Vec<f64>, AdError> {
        let range = self.func.block(wrt)?.range();
        Ok(self.full_gradient()[range].to_vec())
    }

    /// Full Hessian times a direction supported on `seed_block`, returned in
    /// flat block order together with the full gradient.
    ///
    /// Entry `j` of the result is `sum_i v_i d²f / d x_j d seed_i`, so the slice
    /// for `seed_block` is the hvp and the slice for any other block is the
    /// corresponding mixed product, both from a single pass.
    pub fn directional_second_order(&self, seed_block: &str, v: &[f64]) -> Result<(Vec<f64>, Vec<f64>), AdError> {
        let spec = self.func.block(seed_block)?;
        check_dim(spec, v)?;
        let mut dx = vec![0.0; self.func.input_len()];
        dx[spec.range()].copy_from_slice(v);
        Ok(self.second_order_flat(&dx))
    }

    fn second_order_flat(&self, dx: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let tape = &self.func.tape;
        let tangents = tape.tangent(&self.values, dx);
        tape.gradient_and_hvp(&self.values, &tangents)
    }

    /// `(d²f / d wrt²) v`.
    pub fn hvp(&self, wrt: &str, v: &[f64]) -> Result<Vec<f64>, AdError> {
        let range = self.func.block(wrt)?.range();
        let (_, hv) = self.directional_second_order(wrt, v)?;
        Ok(hv[range].to_vec())
    }

    /// Gradient with respect to `wrt_block` of `<v, d f / d grad_block>`.
    pub fn mixed_hvp(&self, grad_block: &str, wrt_block: &str, v: &[f64]) -> Result<Vec<f64>, AdError> {
        if grad_block == wrt_block {
            return Err(AdError::SameBlock(grad_block.to_string()));
        }
        let range = self.func.block(wrt_block)?.range();
        let (_, hv) = self.directional_second_order(grad_block, v)?;
        Ok(hv[range].to_vec())
    }

    /// Jacobian of `d f / d grad_block` with respect to `wrt_block`: a
    /// `dim(grad_block) x dim(wrt_block)` matrix with entries
    /// `d²f / d grad_i d wrt_j`.
    ///
    /// Assembled from unit-vector products, sweeping over whichever block is
    /// smaller.
    pub fn hessian_block(&self, grad_block: &str, wrt_block: &str) -> Result<DMatrix<f64>, AdError> {
        let g = self.func.block(grad_block)?.clone();
        let w = self.func.block(wrt_block)?.clone();
        let mut out = DMatrix::zeros(g.dim, w.dim);
        let mut dx = vec![0.0; self.func.input_len()];
        if w.dim <= g.dim {
            for j in 0..w.dim {
                dx[w.offset + j] = 1.0;
                let (_, hv) = self.second_order_flat(&dx);
                dx[w.offset + j] = 0.0;
                for i in 0..g.dim {
                    out[(i, j)] = hv[g.offset + i];
                }
            }
        } else {
            for i in 0..g.dim {
                dx[g.offset + i] = 1.0;
                let (_, hv) = self.second_order_flat(&dx);
                dx[g.offset + i] = 0.0;
                for j in 0..w.dim {
                    out[(i, j)] = hv[w.offset + j];
                }
            }
        }
        Ok(out)
    }
}

fn check_dim(spec: &BlockSpec, v: &[f64]) -> Result<(), AdError> {
    if v.len() != spec.dim {
        return Err(AdError::DimensionMismatch {
            block: spec.name.clone(),
            expected: spec.dim,
            actual: v.len(),
        });
    }
    Ok(())
}
