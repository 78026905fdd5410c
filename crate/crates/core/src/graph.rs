//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation as it is evaluated. Nodes are
//! referenced through copyable [`Var`] handles; complex quantities are carried
//! as a [`ComplexVar`] pair of real nodes, so every complex operation is
//! differentiated as a real linear or bilinear map on `(re, im)`.
//!
//! ```
//! use fsru::graph::Graph;
//! use fsru::tensor::Tensor;
//!
//! let mut g = Graph::new();
//! let x = g.leaf(Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap());
//! let sq = g.mul(x, x).unwrap();
//! let loss = g.sum(sq);
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0, 6.0]);
//! ```

use std::f64::consts::LN_2;

use crate::error::{FsruError, Result};
use crate::fft;
use crate::kernels;
use crate::tensor::{broadcast_zip, reduce_to_shape, split_axis, ComplexTensor, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A complex value stored as two real nodes of equal shape.
#[derive(Clone, Copy, Debug)]
pub struct ComplexVar {
    pub re: Var,
    pub im: Var,
}

struct Node {
    value: Tensor,
    requires_grad: bool,
}

#[derive(Debug)]
enum Op {
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    TransposeLast2(Var),
    Reshape(Var),
    SumAll(Var),
    SumAxis(Var),
    MeanAxis(Var, usize),
    Softmax(Var),
    LogSoftmax(Var),
    MaskedLogSoftmax(Var, Vec<bool>),
    Relu(Var),
    Roll { input: Var, shift: usize, axis: usize },
    Gather { table: Var, ids: Vec<Option<usize>> },
    NormalizeRows(Var),
    Dft { re: Var, im: Var, axis: usize, inverse: bool, scale: f64 },
    AbsSq(Var, Var),
    JsGamma(Var, Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::MatMul(..) => "matmul",
            Op::BatchMatMul(..) => "batch_matmul",
            Op::TransposeLast2(..) => "transpose",
            Op::Reshape(..) => "reshape",
            Op::SumAll(..) => "sum",
            Op::SumAxis(..) => "sum_axis",
            Op::MeanAxis(..) => "mean_axis",
            Op::Softmax(..) => "softmax",
            Op::LogSoftmax(..) => "log_softmax",
            Op::MaskedLogSoftmax(..) => "masked_log_softmax",
            Op::Relu(..) => "relu",
            Op::Roll { .. } => "roll",
            Op::Gather { .. } => "gather",
            Op::NormalizeRows(..) => "normalize_rows",
            Op::Dft { .. } => "dft",
            Op::AbsSq(..) => "abs_sq",
            Op::JsGamma(..) => "js_gamma",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match *self {
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::MatMul(a, b)
            | Op::BatchMatMul(a, b)
            | Op::AbsSq(a, b)
            | Op::JsGamma(a, b) => vec![a, b],
            Op::Dft { re, im, .. } => vec![re, im],
            Op::Scale(a, _)
            | Op::TransposeLast2(a)
            | Op::Reshape(a)
            | Op::SumAll(a)
            | Op::SumAxis(a)
            | Op::MeanAxis(a, _)
            | Op::Softmax(a)
            | Op::LogSoftmax(a)
            | Op::MaskedLogSoftmax(a, _)
            | Op::Relu(a)
            | Op::NormalizeRows(a) => vec![a],
            Op::Roll { input, .. } => vec![input],
            Op::Gather { table, .. } => vec![table],
        }
    }
}

struct Record {
    op: Op,
    outputs: Vec<Var>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a node; `None` if the loss does not depend on it.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of a node, or zeros of `shape` when disconnected.
    pub fn get_or_zeros(&self, var: Var, shape: &[usize]) -> Tensor {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

/// The operation tape. Single-threaded; build one per forward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    records: Vec<Record>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A trainable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, true)
    }

    /// A non-trainable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, false)
    }

    pub fn complex_constant(&mut self, value: ComplexTensor) -> ComplexVar {
        ComplexVar {
            re: self.constant(value.re),
            im: self.constant(value.im),
        }
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn complex_value(&self, var: ComplexVar) -> ComplexTensor {
        ComplexTensor {
            re: self.value(var.re).clone(),
            im: self.value(var.im).clone(),
        }
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Names of the recorded operations in evaluation order.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.records.iter().map(|r| r.op.name()).collect()
    }

    fn push(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, op: Op, values: Vec<Tensor>) -> Vec<Var> {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        let outputs: Vec<Var> = values
            .into_iter()
            .map(|value| self.push(value, requires_grad))
            .collect();
        self.records.push(Record {
            op,
            outputs: outputs.clone(),
        });
        outputs
    }

    fn record1(&mut self, op: Op, value: Tensor) -> Var {
        self.record(op, vec![value])[0]
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = broadcast_zip(self.value(a), self.value(b), |x, y| x + y)?;
        Ok(self.record1(Op::Add(a, b), out))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = broadcast_zip(self.value(a), self.value(b), |x, y| x - y)?;
        Ok(self.record1(Op::Sub(a, b), out))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = broadcast_zip(self.value(a), self.value(b), |x, y| x * y)?;
        Ok(self.record1(Op::Mul(a, b), out))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).map(|v| v * factor);
        self.record1(Op::Scale(a, factor), out)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(0.0));
        self.record1(Op::Relu(a), out)
    }

    // ---- linear algebra ----

    /// `a[.., K] · w[K, N]`; leading axes of `a` are treated as rows.
    pub fn matmul(&mut self, a: Var, w: Var) -> Result<Var> {
        let (ashape, wshape) = (self.shape(a).to_vec(), self.shape(w).to_vec());
        let inner = *ashape.last().unwrap_or(&0);
        if wshape.len() != 2 || ashape.is_empty() || wshape[0] != inner {
            return Err(FsruError::Shape(format!(
                "matmul {ashape:?} x {wshape:?}"
            )));
        }
        let rows = self.value(a).len() / inner.max(1);
        let cols = wshape[1];
        let data = kernels::matmul(self.value(a).data(), self.value(w).data(), rows, inner, cols);
        let mut shape = ashape;
        *shape.last_mut().unwrap() = cols;
        let out = Tensor::new(&shape, data)?;
        Ok(self.record1(Op::MatMul(a, w), out))
    }

    /// Per-batch product `a[B, M, K] · b[B, K, N]`.
    pub fn batch_matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ashape, bshape) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if ashape.len() != 3 || bshape.len() != 3 || ashape[0] != bshape[0] || ashape[2] != bshape[1] {
            return Err(FsruError::Shape(format!(
                "batch_matmul {ashape:?} x {bshape:?}"
            )));
        }
        let (batch, m, k, n) = (ashape[0], ashape[1], ashape[2], bshape[2]);
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(batch * m * n);
        for i in 0..batch {
            data.extend(kernels::matmul(
                &av[i * m * k..(i + 1) * m * k],
                &bv[i * k * n..(i + 1) * k * n],
                m,
                k,
                n,
            ));
        }
        let out = Tensor::new(&[batch, m, n], data)?;
        Ok(self.record1(Op::BatchMatMul(a, b), out))
    }

    /// Swaps the last two axes of a rank-2 or rank-3 tensor.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = transpose_last2(self.value(a))?;
        Ok(self.record1(Op::TransposeLast2(a), out))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        Ok(self.record1(Op::Reshape(a), out))
    }

    // ---- reductions ----

    /// Sum of all elements as a one-element tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.record1(Op::SumAll(a), out)
    }

    /// Sum along `axis`, keeping it with extent 1.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let out = sum_axis(self.value(a), axis)?;
        Ok(self.record1(Op::SumAxis(a), out))
    }

    /// Mean along `axis`, keeping it with extent 1.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let extent = *self.shape(a).get(axis).ok_or_else(|| {
            FsruError::Shape(format!("axis {axis} out of range"))
        })?;
        if extent == 0 {
            return Err(FsruError::Shape("mean over an empty axis".into()));
        }
        let out = sum_axis(self.value(a), axis)?.map(|v| v / extent as f64);
        Ok(self.record1(Op::MeanAxis(a, axis), out))
    }

    // ---- normalisations ----

    /// Softmax along the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let out = softmax_rows(self.value(a));
        self.record1(Op::Softmax(a), out)
    }

    /// Log-softmax along the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let mask = vec![true; self.value(a).len()];
        let out = masked_log_softmax_rows(self.value(a), &mask);
        self.record1(Op::LogSoftmax(a), out)
    }

    /// Log-softmax along the last axis where only entries with `mask` set enter
    /// the normaliser. Masked-out entries produce 0 and receive no gradient.
    pub fn masked_log_softmax(&mut self, a: Var, mask: Vec<bool>) -> Result<Var> {
        if mask.len() != self.value(a).len() {
            return Err(FsruError::Shape(format!(
                "mask of length {} for tensor {:?}",
                mask.len(),
                self.shape(a)
            )));
        }
        let out = masked_log_softmax_rows(self.value(a), &mask);
        Ok(self.record1(Op::MaskedLogSoftmax(a, mask), out))
    }

    /// Scales each row (last axis) to unit Euclidean norm.
    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let cols = *x.shape().last().unwrap_or(&1);
        let mut out = x.clone();
        for row in out.data_mut().chunks_mut(cols.max(1)) {
            let norm = row_norm(row);
            row.iter_mut().for_each(|v| *v /= norm);
        }
        self.record1(Op::NormalizeRows(a), out)
    }

    // ---- sequence ops ----

    /// Circular shift: `out[i] = a[(i - shift) mod L]` along `axis`.
    pub fn roll(&mut self, a: Var, shift: isize, axis: usize) -> Result<Var> {
        let x = self.value(a);
        let extent = *x.shape().get(axis).ok_or_else(|| {
            FsruError::Shape(format!("axis {axis} out of range"))
        })?;
        if extent == 0 {
            return Err(FsruError::EmptyAxis);
        }
        let shift = shift.rem_euclid(extent as isize) as usize;
        let out = roll(x, shift, axis);
        Ok(self.record1(Op::Roll { input: a, shift, axis }, out))
    }

    /// Row lookup: output row `r` is `table[ids[r]]`, or zeros for `None`.
    pub fn gather(&mut self, table: Var, ids: Vec<Option<usize>>, shape: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if t.rank() != 2 {
            return Err(FsruError::Shape(format!("gather table {:?}", t.shape())));
        }
        let (vocab, width) = (t.shape()[0], t.shape()[1]);
        let mut data = vec![0.0; ids.len() * width];
        for (r, id) in ids.iter().enumerate() {
            if let Some(id) = *id {
                if id >= vocab {
                    return Err(FsruError::UnknownToken {
                        id,
                        vocab_size: vocab,
                    });
                }
                data[r * width..(r + 1) * width]
                    .copy_from_slice(&t.data()[id * width..(id + 1) * width]);
            }
        }
        let out = Tensor::new(shape, data)?;
        if *shape.last().unwrap_or(&0) != width {
            return Err(FsruError::Shape(format!(
                "gather output {shape:?} for width {width}"
            )));
        }
        Ok(self.record1(Op::Gather { table, ids }, out))
    }

    // ---- spectral ops ----

    /// Lifts a real node to a complex pair with a zero imaginary part.
    pub fn to_complex(&mut self, a: Var) -> ComplexVar {
        let im = self.constant(Tensor::zeros(self.shape(a)));
        ComplexVar { re: a, im }
    }

    /// Forward DFT along `axis` (unnormalised).
    pub fn dft(&mut self, x: ComplexVar, axis: usize) -> Result<ComplexVar> {
        self.transform(x, axis, false)
    }

    /// Inverse DFT along `axis`, with the `1/L` factor.
    pub fn idft(&mut self, x: ComplexVar, axis: usize) -> Result<ComplexVar> {
        self.transform(x, axis, true)
    }

    fn transform(&mut self, x: ComplexVar, axis: usize, inverse: bool) -> Result<ComplexVar> {
        if self.shape(x.re) != self.shape(x.im) {
            return Err(FsruError::Shape("complex parts differ in shape".into()));
        }
        let extent = *self.shape(x.re).get(axis).ok_or_else(|| {
            FsruError::Shape(format!("axis {axis} out of range"))
        })?;
        if extent == 0 {
            return Err(FsruError::EmptyAxis);
        }
        let scale = if inverse { 1.0 / extent as f64 } else { 1.0 };
        let mut re = self.value(x.re).clone();
        let mut im = self.value(x.im).clone();
        fft::transform_axis(&mut re, &mut im, axis, inverse, scale)?;
        let outs = self.record(
            Op::Dft {
                re: x.re,
                im: x.im,
                axis,
                inverse,
                scale,
            },
            vec![re, im],
        );
        Ok(ComplexVar {
            re: outs[0],
            im: outs[1],
        })
    }

    /// Power spectrum `re² + im²`.
    pub fn abs_sq(&mut self, x: ComplexVar) -> Result<Var> {
        let out = broadcast_zip(self.value(x.re), self.value(x.im), |r, i| r * r + i * i)?;
        Ok(self.record1(Op::AbsSq(x.re, x.im), out))
    }

    /// `(a+jb)(c+jd) = (ac−bd) + j(ad+bc)`, built from real multiplies.
    pub fn complex_mul(&mut self, x: ComplexVar, y: ComplexVar) -> Result<ComplexVar> {
        let ac = self.mul(x.re, y.re)?;
        let bd = self.mul(x.im, y.im)?;
        let ad = self.mul(x.re, y.im)?;
        let bc = self.mul(x.im, y.re)?;
        Ok(ComplexVar {
            re: self.sub(ac, bd)?,
            im: self.add(ad, bc)?,
        })
    }

    // ---- distribution similarity ----

    /// Per-row Jensen–Shannon divergence between `softmax(a)` and `softmax(b)`,
    /// divided by ln 2 and clamped to `[0, 1]`. Output shape is `[rows, 1]`.
    pub fn js_gamma(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() || x.rank() != 2 {
            return Err(FsruError::Shape(format!(
                "js_gamma {:?} vs {:?}",
                x.shape(),
                y.shape()
            )));
        }
        let rows = x.shape()[0];
        let (p, q) = (softmax_rows(x), softmax_rows(y));
        let cols = x.shape()[1];
        let data = (0..rows)
            .map(|r| {
                let range = r * cols..(r + 1) * cols;
                js_divergence(&p.data()[range.clone()], &q.data()[range]) / LN_2
            })
            .map(|g| g.clamp(0.0, 1.0))
            .collect();
        let out = Tensor::new(&[rows, 1], data)?;
        Ok(self.record1(Op::JsGamma(a, b), out))
    }

    // ---- backward ----

    /// Propagates gradients from a one-element `loss` to every node that
    /// requires them. Nodes the loss does not depend on get no entry.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(FsruError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));
        for record in self.records.iter().rev() {
            if record.outputs.iter().all(|o| grads[o.0].is_none()) {
                continue;
            }
            let inputs = record.op.inputs();
            if !inputs.iter().any(|v| self.nodes[v.0].requires_grad) {
                continue;
            }
            let out_grads: Vec<Tensor> = record
                .outputs
                .iter()
                .map(|o| grads[o.0].clone().unwrap_or_else(|| Tensor::zeros(self.shape(*o))))
                .collect();
            let input_grads = self.op_backward(&record.op, &record.outputs, &out_grads)?;
            for (input, g) in inputs.into_iter().zip(input_grads) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn op_backward(&self, op: &Op, outputs: &[Var], g: &[Tensor]) -> Result<Vec<Tensor>> {
        let g0 = &g[0];
        let out0 = || self.value(outputs[0]);
        Ok(match *op {
            Op::Add(a, b) => vec![
                reduce_to_shape(g0, self.shape(a)),
                reduce_to_shape(g0, self.shape(b)),
            ],
            Op::Sub(a, b) => vec![
                reduce_to_shape(g0, self.shape(a)),
                reduce_to_shape(&g0.map(|v| -v), self.shape(b)),
            ],
            Op::Mul(a, b) => {
                let ga = broadcast_zip(g0, self.value(b), |x, y| x * y)?;
                let gb = broadcast_zip(g0, self.value(a), |x, y| x * y)?;
                vec![
                    reduce_to_shape(&ga, self.shape(a)),
                    reduce_to_shape(&gb, self.shape(b)),
                ]
            }
            Op::Scale(_, factor) => vec![g0.map(|v| v * factor)],
            Op::MatMul(a, w) => {
                let (av, wv) = (self.value(a), self.value(w));
                let (inner, cols) = (wv.shape()[0], wv.shape()[1]);
                let rows = av.len() / inner.max(1);
                let ga = kernels::matmul_nt(g0.data(), wv.data(), rows, inner, cols);
                let gw = kernels::matmul_tn(av.data(), g0.data(), rows, inner, cols);
                vec![Tensor::new(av.shape(), ga)?, Tensor::new(wv.shape(), gw)?]
            }
            Op::BatchMatMul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                let (batch, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
                let n = bv.shape()[2];
                let mut ga = Vec::with_capacity(av.len());
                let mut gb = Vec::with_capacity(bv.len());
                for i in 0..batch {
                    let gi = &g0.data()[i * m * n..(i + 1) * m * n];
                    let ai = &av.data()[i * m * k..(i + 1) * m * k];
                    let bi = &bv.data()[i * k * n..(i + 1) * k * n];
                    ga.extend(kernels::matmul_nt(gi, bi, m, k, n));
                    gb.extend(kernels::matmul_tn(ai, gi, m, k, n));
                }
                vec![Tensor::new(av.shape(), ga)?, Tensor::new(bv.shape(), gb)?]
            }
            Op::TransposeLast2(_) => vec![transpose_last2(g0)?],
            Op::Reshape(a) => vec![g0.clone().reshape(self.shape(a))?],
            Op::SumAll(a) => vec![Tensor::full(self.shape(a), g0.data()[0])],
            Op::SumAxis(a) => vec![reduce_to_shape_expand(g0, self.shape(a), 1.0)],
            Op::MeanAxis(a, axis) => {
                let extent = self.shape(a)[axis] as f64;
                vec![reduce_to_shape_expand(g0, self.shape(a), 1.0 / extent)]
            }
            Op::Softmax(_) => {
                let y = out0();
                let cols = *y.shape().last().unwrap_or(&1);
                let mut ga = g0.clone();
                for (grow, yrow) in ga.data_mut().chunks_mut(cols).zip(y.data().chunks(cols)) {
                    let dot: f64 = grow.iter().zip(yrow).map(|(g, y)| g * y).sum();
                    for (gv, &yv) in grow.iter_mut().zip(yrow) {
                        *gv = yv * (*gv - dot);
                    }
                }
                vec![ga]
            }
            Op::LogSoftmax(_) => {
                let y = out0();
                let cols = *y.shape().last().unwrap_or(&1);
                let mut ga = g0.clone();
                for (grow, yrow) in ga.data_mut().chunks_mut(cols).zip(y.data().chunks(cols)) {
                    let total: f64 = grow.iter().sum();
                    for (gv, &yv) in grow.iter_mut().zip(yrow) {
                        *gv -= yv.exp() * total;
                    }
                }
                vec![ga]
            }
            Op::MaskedLogSoftmax(_, ref mask) => {
                let y = out0();
                let cols = *y.shape().last().unwrap_or(&1);
                let mut ga = g0.clone();
                for ((grow, yrow), mrow) in ga
                    .data_mut()
                    .chunks_mut(cols)
                    .zip(y.data().chunks(cols))
                    .zip(mask.chunks(cols))
                {
                    let total: f64 = grow.iter().zip(mrow).filter(|(_, &m)| m).map(|(g, _)| g).sum();
                    for ((gv, &yv), &m) in grow.iter_mut().zip(yrow).zip(mrow) {
                        *gv = if m { *gv - yv.exp() * total } else { 0.0 };
                    }
                }
                vec![ga]
            }
            Op::Relu(a) => {
                let x = self.value(a);
                vec![broadcast_zip(g0, x, |g, x| if x > 0.0 { g } else { 0.0 })?]
            }
            Op::Roll { shift, axis, .. } => {
                let extent = g0.shape()[axis];
                vec![roll(g0, (extent - shift) % extent, axis)]
            }
            Op::Gather { table, ref ids } => {
                let shape = self.shape(table);
                let width = shape[1];
                let mut gt = Tensor::zeros(shape);
                for (r, id) in ids.iter().enumerate() {
                    if let Some(id) = *id {
                        let src = &g0.data()[r * width..(r + 1) * width];
                        for (t, s) in gt.data_mut()[id * width..(id + 1) * width].iter_mut().zip(src) {
                            *t += s;
                        }
                    }
                }
                vec![gt]
            }
            Op::NormalizeRows(a) => {
                let x = self.value(a);
                let y = out0();
                let cols = *x.shape().last().unwrap_or(&1);
                let mut ga = g0.clone();
                for ((grow, yrow), xrow) in ga
                    .data_mut()
                    .chunks_mut(cols)
                    .zip(y.data().chunks(cols))
                    .zip(x.data().chunks(cols))
                {
                    let norm = row_norm(xrow);
                    let dot: f64 = grow.iter().zip(yrow).map(|(g, y)| g * y).sum();
                    for (gv, &yv) in grow.iter_mut().zip(yrow) {
                        *gv = (*gv - yv * dot) / norm;
                    }
                }
                vec![ga]
            }
            Op::Dft {
                axis,
                inverse,
                scale,
                ..
            } => {
                // The adjoint of s·F is s·Fᴴ, the opposite-direction transform.
                let mut re = g[0].clone();
                let mut im = g[1].clone();
                fft::transform_axis(&mut re, &mut im, axis, !inverse, scale)?;
                vec![re, im]
            }
            Op::AbsSq(re, im) => vec![
                broadcast_zip(g0, self.value(re), |g, r| 2.0 * g * r)?,
                broadcast_zip(g0, self.value(im), |g, i| 2.0 * g * i)?,
            ],
            Op::JsGamma(a, b) => {
                let (x, y) = (self.value(a), self.value(b));
                let (p, q) = (softmax_rows(x), softmax_rows(y));
                let cols = x.shape()[1];
                let mut ga = Tensor::zeros(x.shape());
                let mut gb = Tensor::zeros(y.shape());
                for r in 0..x.shape()[0] {
                    let range = r * cols..(r + 1) * cols;
                    let (pr, qr) = (&p.data()[range.clone()], &q.data()[range.clone()]);
                    // The clamp only engages through rounding, so the interior
                    // gradient is used everywhere.
                    let upstream = g0.data()[r] / LN_2;
                    let (dp, dq) = js_grad(pr, qr);
                    softmax_vjp(pr, &dp, upstream, &mut ga.data_mut()[range.clone()]);
                    softmax_vjp(qr, &dq, upstream, &mut gb.data_mut()[range]);
                }
                vec![ga, gb]
            }
        })
    }
}

fn row_norm(row: &[f64]) -> f64 {
    row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12)
}

fn transpose_last2(x: &Tensor) -> Result<Tensor> {
    match *x.shape() {
        [r, c] => Tensor::new(&[c, r], kernels::transpose(x.data(), r, c)),
        [b, r, c] => {
            let mut data = Vec::with_capacity(x.len());
            for i in 0..b {
                data.extend(kernels::transpose(&x.data()[i * r * c..(i + 1) * r * c], r, c));
            }
            Tensor::new(&[b, c, r], data)
        }
        _ => Err(FsruError::Shape(format!("transpose of {:?}", x.shape()))),
    }
}

fn sum_axis(x: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= x.rank() {
        return Err(FsruError::Shape(format!(
            "axis {axis} out of range for {:?}",
            x.shape()
        )));
    }
    let (outer, extent, inner) = split_axis(x.shape(), axis);
    let mut out_shape = x.shape().to_vec();
    out_shape[axis] = 1;
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        for i in 0..extent {
            let src = &x.data()[(o * extent + i) * inner..(o * extent + i + 1) * inner];
            for (d, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                *d += s;
            }
        }
    }
    Tensor::new(&out_shape, out)
}

/// Broadcasts a keep-dim reduction gradient back to `shape`, times `factor`.
fn reduce_to_shape_expand(g: &Tensor, shape: &[usize], factor: f64) -> Tensor {
    let target = Tensor::zeros(shape);
    broadcast_zip(&target, g, |_, gv| gv * factor).expect("keep-dim gradient broadcasts")
}

fn roll(x: &Tensor, shift: usize, axis: usize) -> Tensor {
    let (outer, extent, inner) = split_axis(x.shape(), axis);
    let mut out = Tensor::zeros(x.shape());
    for o in 0..outer {
        for i in 0..extent {
            let dst = (i + shift) % extent;
            let src = &x.data()[(o * extent + i) * inner..(o * extent + i + 1) * inner];
            out.data_mut()[(o * extent + dst) * inner..(o * extent + dst + 1) * inner]
                .copy_from_slice(src);
        }
    }
    out
}

pub(crate) fn softmax_rows(x: &Tensor) -> Tensor {
    let cols = *x.shape().last().unwrap_or(&1);
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(cols.max(1)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    out
}

fn masked_log_softmax_rows(x: &Tensor, mask: &[bool]) -> Tensor {
    let cols = *x.shape().last().unwrap_or(&1);
    let mut out = x.clone();
    for (row, mrow) in out.data_mut().chunks_mut(cols.max(1)).zip(mask.chunks(cols.max(1))) {
        let max = row
            .iter()
            .zip(mrow)
            .filter(|(_, &m)| m)
            .map(|(v, _)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            row.iter_mut().for_each(|v| *v = 0.0);
            continue;
        }
        let lse = max
            + row
                .iter()
                .zip(mrow)
                .filter(|(_, &m)| m)
                .map(|(v, _)| (v - max).exp())
                .sum::<f64>()
                .ln();
        for (v, &m) in row.iter_mut().zip(mrow) {
            *v = if m { *v - lse } else { 0.0 };
        }
    }
    out
}

/// `½ Σ p ln(p/M) + ½ Σ q ln(q/M)` with `M = (p+q)/2` and `0·ln 0 = 0`.
pub(crate) fn js_divergence(p: &[f64], q: &[f64]) -> f64 {
    // Each pair is added before accumulating so that swapping p and q gives
    // bit-identical results.
    let term = |x: f64, mid: f64| if x > 0.0 { x * (x / mid).ln() } else { 0.0 };
    let mut total = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        let mid = 0.5 * (pi + qi);
        total += 0.5 * (term(pi, mid) + term(qi, mid));
    }
    total
}

/// Partial derivatives of the JS divergence with respect to `p` and `q`.
fn js_grad(p: &[f64], q: &[f64]) -> (Vec<f64>, Vec<f64>) {
    p.iter()
        .zip(q)
        .map(|(&pi, &qi)| {
            let mid = 0.5 * (pi + qi);
            let dp = if pi > 0.0 { 0.5 * (pi / mid).ln() } else { 0.0 };
            let dq = if qi > 0.0 { 0.5 * (qi / mid).ln() } else { 0.0 };
            (dp, dq)
        })
        .unzip()
}

/// Accumulates `upstream · Jᵀ du` of the softmax with output `p` into `out`.
fn softmax_vjp(p: &[f64], du: &[f64], upstream: f64, out: &mut [f64]) {
    let dot: f64 = p.iter().zip(du).map(|(a, b)| a * b).sum();
    for ((o, &pi), &d) in out.iter_mut().zip(p).zip(du) {
        *o += upstream * pi * (d - dot);
    }
}
