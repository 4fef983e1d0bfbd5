//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] is a tape: every operation appends a node whose parents have
//! smaller indices, so node order is already a topological order and the
//! backward sweep is a single reverse scan. There is no broadcasting; bias
//! terms are expressed as `ones[B,1] · b[1,n]`.

use crate::error::{NisError, Result};

/// Dense row-major tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(NisError::Config(format!(
                "tensor shape {shape:?} has a zero dimension"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(NisError::ShapeMismatch {
                op: "tensor",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// Row-major matrix; panics if `data.len() != rows * cols`.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length");
        Self {
            shape: vec![rows, cols],
            data,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Size of the last axis (1 for scalars).
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Row `i` of a 2-D tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        let cols = self.last_dim();
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(NisError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape,
                rhs: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    fn add_assign(&mut self, other: &Tensor) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpTag {
    Leaf,
    MatMul,
    Add,
    Mul,
    Relu,
    Exp,
    Neg,
    Concat,
    Slice,
    Sum,
    Scale,
    Tanh,
    Abs,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    Exp(Var),
    Neg(Var),
    Concat(Vec<Var>),
    Slice { src: Var, start: usize, end: usize },
    Sum(Var),
    Scale(Var, f64),
    Tanh(Var),
    Abs(Var),
}

impl Op {
    fn tag(&self) -> OpTag {
        match self {
            Op::Leaf => OpTag::Leaf,
            Op::MatMul(..) => OpTag::MatMul,
            Op::Add(..) => OpTag::Add,
            Op::Mul(..) => OpTag::Mul,
            Op::Relu(_) => OpTag::Relu,
            Op::Exp(_) => OpTag::Exp,
            Op::Neg(_) => OpTag::Neg,
            Op::Concat(_) => OpTag::Concat,
            Op::Slice { .. } => OpTag::Slice,
            Op::Sum(_) => OpTag::Sum,
            Op::Scale(..) => OpTag::Scale,
            Op::Tanh(_) => OpTag::Tanh,
            Op::Abs(_) => OpTag::Abs,
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Computation tape.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every node of the graph.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; zeros when `v` does not influence the root.
    pub fn get(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(t) => t.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        match self.grads[v.0].take() {
            Some(t) => t,
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn is_reached(&self, v: Var) -> bool {
        self.grads[v.0].is_some()
    }
}

/// `c[m,n] (+)= a[m,k] · b[k,n]` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert!(c.len() >= m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the slices cover every index reachable through the given
    // dimensions and strides (checked by the callers' shape validation).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Inserts an input or parameter tensor.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    pub fn op_tag(&self, v: Var) -> OpTag {
        self.nodes[v.0].op.tag()
    }

    /// Parents of `v` in the order they were supplied.
    pub fn parents(&self, v: Var) -> Vec<Var> {
        match &self.nodes[v.0].op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Relu(a)
            | Op::Exp(a)
            | Op::Neg(a)
            | Op::Sum(a)
            | Op::Scale(a, _)
            | Op::Tanh(a)
            | Op::Abs(a) => vec![*a],
            Op::Slice { src, .. } => vec![*src],
            Op::Concat(parts) => parts.clone(),
        }
    }

    /// `[m,k]·[k,n] → [m,n]` or `[m,k]·[k] → [m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let mismatch = || NisError::ShapeMismatch {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sa.len() != 2 || sb.is_empty() || sb.len() > 2 || sa[1] != sb[0] {
            return Err(mismatch());
        }
        let (m, k) = (sa[0], sa[1]);
        let n = if sb.len() == 2 { sb[1] } else { 1 };
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            &self.nodes[a.0].value.data,
            k as isize,
            1,
            &self.nodes[b.0].value.data,
            n as isize,
            1,
            &mut out,
            false,
        );
        let shape = if sb.len() == 2 { vec![m, n] } else { vec![m] };
        Ok(self.push(Tensor { shape, data: out }, Op::MatMul(a, b)))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(NisError::ShapeMismatch {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let ta = &self.nodes[a.0].value;
        let tb = &self.nodes[b.0].value;
        Tensor {
            shape: ta.shape.clone(),
            data: ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect(),
        }
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let ta = &self.nodes[a.0].value;
        Tensor {
            shape: ta.shape.clone(),
            data: ta.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.zip_map(a, b, |x, y| x + y);
        Ok(self.push(value, Op::Add(a, b)))
    }

    /// `a - b`, recorded as `add(a, neg(b))`.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let nb = self.neg(b);
        self.add(a, nb)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.zip_map(a, b, |x, y| x * y);
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.map(a, |x| if x > 0.0 { x } else { 0.0 });
        self.push(value, Op::Relu(a))
    }

    /// Elementwise exponential; overflow to infinity is an error.
    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let value = self.map(a, f64::exp);
        if !value.is_finite() {
            return Err(NisError::NumericRange(format!(
                "exp overflowed on a tensor of shape {:?}",
                value.shape
            )));
        }
        Ok(self.push(value, Op::Exp(a)))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let value = self.map(a, |x| -x);
        self.push(value, Op::Neg(a))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.map(a, |x| x * factor);
        self.push(value, Op::Scale(a, factor))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.map(a, f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.map(a, f64::abs);
        self.push(value, Op::Abs(a))
    }

    /// Sum of all entries, as a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.nodes[a.0].value.data.iter().sum();
        self.push(Tensor::scalar(total), Op::Sum(a))
    }

    /// Concatenation along the last axis. All other axes must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| NisError::Config("concat of zero tensors".into()))?;
        let lead = self.shape(first).to_vec();
        if lead.is_empty() {
            return Err(NisError::ShapeMismatch {
                op: "concat",
                lhs: lead,
                rhs: Vec::new(),
            });
        }
        let lead_dims = &lead[..lead.len() - 1];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != lead.len() || &s[..s.len() - 1] != lead_dims {
                return Err(NisError::ShapeMismatch {
                    op: "concat",
                    lhs: lead.clone(),
                    rhs: s.to_vec(),
                });
            }
            widths.push(s[s.len() - 1]);
        }
        let outer: usize = lead_dims.iter().product();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(outer * total);
        for r in 0..outer {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.nodes[p.0].value.data[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead_dims.to_vec();
        shape.push(total);
        Ok(self.push(Tensor { shape, data }, Op::Concat(parts.to_vec())))
    }

    /// Columns `start..end` along the last axis.
    pub fn slice(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let width = s.last().copied().unwrap_or(0);
        if s.is_empty() || start >= end || end > width {
            return Err(NisError::ShapeMismatch {
                op: "slice",
                lhs: s,
                rhs: vec![start, end],
            });
        }
        let outer: usize = s[..s.len() - 1].iter().product();
        let src = &self.nodes[a.0].value.data;
        let mut data = Vec::with_capacity(outer * (end - start));
        for r in 0..outer {
            data.extend_from_slice(&src[r * width + start..r * width + end]);
        }
        let mut shape = s[..s.len() - 1].to_vec();
        shape.push(end - start);
        Ok(self.push(Tensor { shape, data }, Op::Slice { src: a, start, end }))
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_val = self.value(root);
        if root_val.numel() != 1 {
            return Err(NisError::ShapeMismatch {
                op: "backward",
                lhs: root_val.shape.clone(),
                rhs: Vec::new(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::filled(&root_val.shape, 1.0));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, &g);
                    accumulate(&mut grads, *b, &g);
                }
                Op::Neg(a) => {
                    let d = scaled(&g, -1.0);
                    accumulate_owned(&mut grads, *a, d);
                }
                Op::Scale(a, f) => {
                    let d = scaled(&g, *f);
                    accumulate_owned(&mut grads, *a, d);
                }
                Op::Mul(a, b) => {
                    let va = &self.nodes[a.0].value;
                    let vb = &self.nodes[b.0].value;
                    let da = hadamard(&g, vb);
                    let db = hadamard(&g, va);
                    accumulate_owned(&mut grads, *a, da);
                    accumulate_owned(&mut grads, *b, db);
                }
                Op::Relu(a) => {
                    let va = &self.nodes[a.0].value;
                    let mut d = g.clone();
                    for (dv, &x) in d.data.iter_mut().zip(&va.data) {
                        if x <= 0.0 {
                            *dv = 0.0;
                        }
                    }
                    accumulate_owned(&mut grads, *a, d);
                }
                Op::Exp(a) => {
                    let d = hadamard(&g, &node.value);
                    accumulate_owned(&mut grads, *a, d);
                }
                Op::Tanh(a) => {
                    let mut d = g.clone();
                    for (dv, &y) in d.data.iter_mut().zip(&node.value.data) {
                        *dv *= 1.0 - y * y;
                    }
                    accumulate_owned(&mut grads, *a, d);
                }
                Op::Abs(a) => {
                    let va = &self.nodes[a.0].value;
                    let mut d = g.clone();
                    for (dv, &x) in d.data.iter_mut().zip(&va.data) {
                        *dv *= if x > 0.0 {
                            1.0
                        } else if x < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                    }
                    accumulate_owned(&mut grads, *a, d);
                }
                Op::Sum(a) => {
                    let s = &self.nodes[a.0].value.shape;
                    let d = Tensor::filled(s, g.data[0]);
                    accumulate_owned(&mut grads, *a, d);
                }
                Op::Slice { src, start, end } => {
                    let s = &self.nodes[src.0].value.shape;
                    let width = *s.last().unwrap();
                    let w = end - start;
                    let outer = g.data.len() / w;
                    let slot = grads[src.0].get_or_insert_with(|| Tensor::zeros(s));
                    for r in 0..outer {
                        let dst = &mut slot.data[r * width + start..r * width + end];
                        for (d, v) in dst.iter_mut().zip(&g.data[r * w..(r + 1) * w]) {
                            *d += v;
                        }
                    }
                }
                Op::Concat(parts) => {
                    let total = node.value.last_dim();
                    let outer = node.value.numel() / total;
                    let mut offset = 0;
                    for &p in parts {
                        let s = &self.nodes[p.0].value.shape;
                        let w = *s.last().unwrap();
                        let slot = grads[p.0].get_or_insert_with(|| Tensor::zeros(s));
                        for r in 0..outer {
                            let src = &g.data[r * total + offset..r * total + offset + w];
                            for (d, v) in slot.data[r * w..(r + 1) * w].iter_mut().zip(src) {
                                *d += v;
                            }
                        }
                        offset += w;
                    }
                }
                Op::MatMul(a, b) => {
                    let va = &self.nodes[a.0].value;
                    let vb = &self.nodes[b.0].value;
                    let (m, k) = (va.shape[0], va.shape[1]);
                    let n = if vb.shape.len() == 2 { vb.shape[1] } else { 1 };
                    // dA[m,k] = dC[m,n] · B^T
                    {
                        let slot = grads[a.0].get_or_insert_with(|| Tensor::zeros(&va.shape));
                        gemm(
                            m,
                            n,
                            k,
                            &g.data,
                            n as isize,
                            1,
                            &vb.data,
                            1,
                            n as isize,
                            &mut slot.data,
                            true,
                        );
                    }
                    // dB[k,n] = A^T · dC[m,n]
                    {
                        let slot = grads[b.0].get_or_insert_with(|| Tensor::zeros(&vb.shape));
                        gemm(
                            k,
                            m,
                            n,
                            &va.data,
                            1,
                            k as isize,
                            &g.data,
                            n as isize,
                            1,
                            &mut slot.data,
                            true,
                        );
                    }
                }
            }
            // Leaves keep their gradient for the caller.
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape.clone()).collect(),
        })
    }
}

fn scaled(g: &Tensor, f: f64) -> Tensor {
    Tensor {
        shape: g.shape.clone(),
        data: g.data.iter().map(|v| v * f).collect(),
    }
}

fn hadamard(a: &Tensor, b: &Tensor) -> Tensor {
    Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect(),
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: &Tensor) {
    match &mut grads[v.0] {
        Some(t) => t.add_assign(g),
        slot @ None => *slot = Some(g.clone()),
    }
}

fn accumulate_owned(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(t) => t.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Jacobian `∂f_i/∂x_j` of `f: R^n → R^m` at `x`, one backward pass per
/// output row. `f` receives a `[1, n]` input.
pub fn jacobian<F>(f: F, x: &[f64]) -> Result<Tensor>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let n = x.len();
    let mut g = Graph::new();
    let input = g.leaf(Tensor::matrix(1, n, x.to_vec()));
    let out = f(&mut g, input)?;
    let m = g.value(out).numel();
    let oshape = g.shape(out);
    if !(oshape == [m] || oshape == [1, m]) {
        return Err(NisError::ShapeMismatch {
            op: "jacobian",
            lhs: oshape.to_vec(),
            rhs: vec![1, m],
        });
    }
    let mut data = Vec::with_capacity(m * n);
    for i in 0..m {
        let entry = g.slice(out, i, i + 1)?;
        let root = g.sum(entry);
        let grads = g.backward(root)?;
        data.extend_from_slice(grads.get(input).data());
    }
    Ok(Tensor::matrix(m, n, data))
}

/// Per-row Jacobians of a row-independent map evaluated on a batch
/// `xs: [N, n]`. Uses `m` backward passes in total: since row `r` of the
/// output depends only on row `r` of the input, the gradient of the column
/// sum of output `i` restricted to row `r` is row `i` of that sample's
/// Jacobian.
pub fn batched_jacobians<F>(f: F, xs: &Tensor) -> Result<Vec<Tensor>>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    Ok(batched_values_and_jacobians(f, xs)?.1)
}

/// [`batched_jacobians`] that also returns the `[N, m]` outputs.
pub fn batched_values_and_jacobians<F>(f: F, xs: &Tensor) -> Result<(Tensor, Vec<Tensor>)>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    if xs.shape().len() != 2 {
        return Err(NisError::ShapeMismatch {
            op: "batched_jacobians",
            lhs: xs.shape().to_vec(),
            rhs: vec![0, 0],
        });
    }
    let (rows, n) = (xs.shape()[0], xs.shape()[1]);
    let mut g = Graph::new();
    let input = g.leaf(xs.clone());
    let out = f(&mut g, input)?;
    let oshape = g.shape(out).to_vec();
    if oshape.len() != 2 || oshape[0] != rows {
        return Err(NisError::ShapeMismatch {
            op: "batched_jacobians",
            lhs: oshape,
            rhs: vec![rows, 0],
        });
    }
    let m = oshape[1];
    let mut jacs: Vec<Vec<f64>> = vec![Vec::with_capacity(m * n); rows];
    for i in 0..m {
        let col = g.slice(out, i, i + 1)?;
        let root = g.sum(col);
        let grads = g.backward(root)?;
        let gi = grads.get(input);
        for (r, jac) in jacs.iter_mut().enumerate() {
            jac.extend_from_slice(gi.row(r));
        }
    }
    let values = g.value(out).clone();
    Ok((values, jacs.into_iter().map(|d| Tensor::matrix(m, n, d)).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity_vector() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]));
        let x = g.leaf(Tensor::vector(vec![2.0, 3.0]));
        let y = g.matmul(a, x).unwrap();
        assert_eq!(g.value(y).data(), &[2.0, 3.0]);
        assert_eq!(g.shape(y), &[2]);
    }

    #[test]
    fn relu_and_concat() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::vector(vec![-1.0, 2.0]));
        let r = g.relu(a);
        assert_eq!(g.value(r).data(), &[0.0, 2.0]);
        let u = g.leaf(Tensor::vector(vec![1.0, 2.0]));
        let v = g.leaf(Tensor::vector(vec![3.0]));
        let c = g.concat(&[u, v]).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::matrix(2, 3, vec![0.0; 6]));
        let b = g.leaf(Tensor::matrix(2, 3, vec![0.0; 6]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]"), "{err}");
        let c = g.leaf(Tensor::vector(vec![1.0]));
        assert!(g.add(a, c).unwrap_err().to_string().contains("add"));
        assert!(g.slice(c, 0, 2).is_err());
    }

    #[test]
    fn derivative_of_square() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).item(), 6.0);
    }

    #[test]
    fn relu_inactive_branch_has_zero_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(-1.0));
        let y = g.relu(x);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).item(), 0.0);
    }

    #[test]
    fn unreachable_leaf_gets_zero() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(2.0));
        let unused = g.leaf(Tensor::vector(vec![1.0, 1.0]));
        let y = g.scale(x, 4.0);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(unused).data(), &[0.0, 0.0]);
        assert!(!grads.is_reached(unused));
        assert_eq!(grads.get(x).item(), 4.0);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn shared_subexpression_accumulates() {
        // f = sum(exp(x) * exp(x)) → df/dx = 2 exp(2x)
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![0.1, -0.4]));
        let e = g.exp(x).unwrap();
        let p = g.mul(e, e).unwrap();
        let s = g.sum(p);
        let grads = g.backward(s).unwrap();
        let d = grads.get(x);
        for (gv, xv) in d.data().iter().zip([0.1f64, -0.4]) {
            assert!((gv - 2.0 * (2.0 * xv).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn exp_overflow_is_numeric_error() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1000.0]));
        assert!(matches!(g.exp(x), Err(NisError::NumericRange(_))));
    }

    #[test]
    fn jacobian_of_linear_and_constant_maps() {
        let j = jacobian(|g, x| Ok(g.scale(x, 2.0)), &[1.0, 1.0]).unwrap();
        assert_eq!(j.data(), &[2.0, 0.0, 0.0, 2.0]);

        let j = jacobian(
            |g, x| {
                let z = g.scale(x, 0.0);
                let c = g.leaf(Tensor::matrix(1, 2, vec![3.0, -1.0]));
                g.add(z, c)
            },
            &[0.5, 0.7],
        )
        .unwrap();
        assert!(j.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn affine_jacobian_is_exact() {
        let a = Tensor::matrix(3, 2, vec![1.5, -2.0, 0.25, 4.0, -0.5, 0.0]);
        let j = jacobian(
            |g, x| {
                // x[1,2] · A^T
                let wt = g.leaf(Tensor::matrix(2, 3, vec![1.5, 0.25, -0.5, -2.0, 4.0, 0.0]));
                let y = g.matmul(x, wt)?;
                let b = g.leaf(Tensor::matrix(1, 3, vec![1.0, 2.0, 3.0]));
                g.add(y, b)
            },
            &[0.3, -0.9],
        )
        .unwrap();
        assert_eq!(j.shape(), &[3, 2]);
        assert_eq!(j.data(), a.data());
    }

    #[test]
    fn batched_jacobians_match_single() {
        let f = |g: &mut Graph, x: Var| -> Result<Var> {
            let w = g.leaf(Tensor::matrix(2, 2, vec![0.3, -1.2, 0.8, 0.5]));
            let h = g.matmul(x, w)?;
            let t = g.tanh(h);
            let e = g.exp(t)?;
            g.mul(e, x)
        };
        let xs = Tensor::matrix(3, 2, vec![0.1, 0.2, -1.0, 0.4, 2.0, -0.3]);
        let batched = batched_jacobians(f, &xs).unwrap();
        for (r, jb) in batched.iter().enumerate() {
            let js = jacobian(f, xs.row(r)).unwrap();
            for (a, b) in jb.data().iter().zip(js.data()) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }
}
