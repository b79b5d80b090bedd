use std::fmt;

use super::kernels;
use super::{Result, Tensor, TensorError};

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Kinds of recorded operations, used for reporting and fault injection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Conv1d,
    SoftmaxRows,
    Matmul,
    Transpose,
    Add,
    Relu,
    Affine,
    GlobalAvgPoolTime,
    CrossEntropy,
    Sum,
    WeightedSum,
    MaskScale,
    WeightNorm,
}

impl OpKind {
    pub const DIFFERENTIABLE: [OpKind; 13] = [
        OpKind::Conv1d,
        OpKind::SoftmaxRows,
        OpKind::Matmul,
        OpKind::Transpose,
        OpKind::Add,
        OpKind::Relu,
        OpKind::Affine,
        OpKind::GlobalAvgPoolTime,
        OpKind::CrossEntropy,
        OpKind::Sum,
        OpKind::WeightedSum,
        OpKind::MaskScale,
        OpKind::WeightNorm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Conv1d => "conv1d",
            OpKind::SoftmaxRows => "softmax_rows",
            OpKind::Matmul => "matmul",
            OpKind::Transpose => "transpose",
            OpKind::Add => "add",
            OpKind::Relu => "relu",
            OpKind::Affine => "affine",
            OpKind::GlobalAvgPoolTime => "global_avg_pool_time",
            OpKind::CrossEntropy => "cross_entropy",
            OpKind::Sum => "sum",
            OpKind::WeightedSum => "weighted_sum",
            OpKind::MaskScale => "mask_scale",
            OpKind::WeightNorm => "weight_norm",
        }
    }

    pub fn from_name(name: &str) -> Option<OpKind> {
        Self::DIFFERENTIABLE.into_iter().find(|k| k.name() == name)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv1d { input: Var, weight: Var, bias: Var, dilation: usize },
    SoftmaxRows { input: Var },
    Matmul { a: Var, b: Var },
    Transpose { input: Var },
    Add { a: Var, b: Var },
    Relu { input: Var },
    Affine { weight: Var, input: Var, bias: Var },
    GlobalAvgPoolTime { input: Var },
    CrossEntropy { logits: Var, label: usize, probs: Vec<f64> },
    Sum { input: Var },
    WeightedSum { input: Var, weights: Vec<f64> },
    MaskScale { input: Var, mask: Vec<f64> },
    WeightNorm { direction: Var, gain: Var, norms: Vec<f64> },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Conv1d { .. } => OpKind::Conv1d,
            Op::SoftmaxRows { .. } => OpKind::SoftmaxRows,
            Op::Matmul { .. } => OpKind::Matmul,
            Op::Transpose { .. } => OpKind::Transpose,
            Op::Add { .. } => OpKind::Add,
            Op::Relu { .. } => OpKind::Relu,
            Op::Affine { .. } => OpKind::Affine,
            Op::GlobalAvgPoolTime { .. } => OpKind::GlobalAvgPoolTime,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
            Op::Sum { .. } => OpKind::Sum,
            Op::WeightedSum { .. } => OpKind::WeightedSum,
            Op::MaskScale { .. } => OpKind::MaskScale,
            Op::WeightNorm { .. } => OpKind::WeightNorm,
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Linear record of a forward computation. Nodes are appended in
/// evaluation order, so every node's inputs precede it.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
    fault: Option<OpKind>,
}

fn mismatch(op: &'static str, detail: String) -> TensorError {
    TensorError::ShapeMismatch { op, detail }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Makes the backward rule of `kind` deliberately wrong. Only used by
    /// negative-control fixtures of the gradient checker.
    #[doc(hidden)]
    pub fn inject_fault(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input tensor. Its `requires_grad` flag decides whether
    /// backward populates a gradient for it.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let mut tensor = tensor;
        tensor.grad = None;
        self.push(tensor, Op::Leaf)
    }

    /// Records a tensor that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        let mut tensor = tensor;
        tensor.requires_grad = false;
        self.leaf(tensor)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn grad(&self, var: Var) -> Option<&[f64]> {
        self.nodes[var.0].value.grad()
    }

    pub fn op_kind(&self, var: Var) -> OpKind {
        self.nodes[var.0].op.kind()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn needs_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].value.requires_grad)
    }

    fn record(&mut self, shape: Vec<usize>, values: Vec<f64>, inputs: &[Var], op: Op) -> Var {
        let rg = self.needs_grad(inputs);
        self.push(Tensor::from_parts(shape, values, rg), op)
    }

    fn matrix_dims(&self, var: Var, op: &'static str) -> Result<(usize, usize)> {
        match self.value(var).shape() {
            &[r, c] => Ok((r, c)),
            s => Err(mismatch(op, format!("expected a matrix, got shape {s:?}"))),
        }
    }

    /// Dilated causal 1-D convolution over `[C_in × T]` with weight
    /// `[C_out × C_in × k]` and bias `[C_out]`. Output is `[C_out × T]`;
    /// time indices before 0 read as zero.
    pub fn conv1d(&mut self, input: Var, weight: Var, bias: Var, dilation: usize) -> Result<Var> {
        const OP: &str = "conv1d";
        if dilation == 0 {
            return Err(TensorError::InvalidArgument {
                op: OP,
                detail: "dilation must be positive".into(),
            });
        }
        let (c_in, t) = self.matrix_dims(input, OP)?;
        let (c_out, wc_in, k) = match self.value(weight).shape() {
            &[a, b, c] => (a, b, c),
            s => return Err(mismatch(OP, format!("weight must be rank 3, got {s:?}"))),
        };
        if wc_in != c_in {
            return Err(mismatch(
                OP,
                format!("input has {c_in} channels but weight expects {wc_in}"),
            ));
        }
        if self.value(bias).shape() != [c_out] {
            return Err(mismatch(
                OP,
                format!("bias shape {:?}, expected [{c_out}]", self.value(bias).shape()),
            ));
        }
        let out = kernels::conv1d_forward(
            self.value(input).values(),
            self.value(weight).values(),
            self.value(bias).values(),
            c_in,
            c_out,
            k,
            t,
            dilation,
        );
        Ok(self.record(
            vec![c_out, t],
            out,
            &[input, weight, bias],
            Op::Conv1d { input, weight, bias, dilation },
        ))
    }

    pub fn softmax_rows(&mut self, input: Var) -> Result<Var> {
        const OP: &str = "softmax_rows";
        let (r, c) = self.matrix_dims(input, OP)?;
        let x = self.value(input).values();
        if x.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: OP });
        }
        let y = kernels::softmax_rows(x, r, c);
        Ok(self.record(vec![r, c], y, &[input], Op::SoftmaxRows { input }))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        const OP: &str = "matmul";
        let (m, k) = self.matrix_dims(a, OP)?;
        let (k2, n) = self.matrix_dims(b, OP)?;
        if k != k2 {
            return Err(mismatch(OP, format!("[{m}x{k}] · [{k2}x{n}]")));
        }
        let c = kernels::matmul(self.value(a).values(), self.value(b).values(), m, k, n);
        Ok(self.record(vec![m, n], c, &[a, b], Op::Matmul { a, b }))
    }

    pub fn transpose(&mut self, input: Var) -> Result<Var> {
        let (r, c) = self.matrix_dims(input, "transpose")?;
        let y = kernels::transpose(self.value(input).values(), r, c);
        Ok(self.record(vec![c, r], y, &[input], Op::Transpose { input }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(mismatch("add", format!("{sa:?} + {sb:?}")));
        }
        let shape = sa.to_vec();
        let y = self
            .value(a)
            .values()
            .iter()
            .zip(self.value(b).values())
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.record(shape, y, &[a, b], Op::Add { a, b }))
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let shape = x.shape().to_vec();
        let y = x.values().iter().map(|&v| v.max(0.0)).collect();
        Ok(self.record(shape, y, &[input], Op::Relu { input }))
    }

    /// `weight[out × in] · input[in] + bias[out]`.
    pub fn affine(&mut self, weight: Var, input: Var, bias: Var) -> Result<Var> {
        const OP: &str = "affine";
        let (o, i) = self.matrix_dims(weight, OP)?;
        if self.value(input).shape() != [i] {
            return Err(mismatch(
                OP,
                format!("input {:?}, weight expects [{i}]", self.value(input).shape()),
            ));
        }
        if self.value(bias).shape() != [o] {
            return Err(mismatch(
                OP,
                format!("bias {:?}, expected [{o}]", self.value(bias).shape()),
            ));
        }
        let w = self.value(weight).values();
        let x = self.value(input).values();
        let b = self.value(bias).values();
        let y = (0..o)
            .map(|r| b[r] + kernels::dot(&w[r * i..(r + 1) * i], x))
            .collect();
        Ok(self.record(
            vec![o],
            y,
            &[weight, input, bias],
            Op::Affine { weight, input, bias },
        ))
    }

    /// Averages `[C × T]` over time into `[C]`.
    pub fn global_avg_pool_time(&mut self, input: Var) -> Result<Var> {
        let (c, t) = self.matrix_dims(input, "global_avg_pool_time")?;
        let x = self.value(input).values();
        let y = (0..c)
            .map(|r| x[r * t..(r + 1) * t].iter().sum::<f64>() / t as f64)
            .collect();
        Ok(self.record(vec![c], y, &[input], Op::GlobalAvgPoolTime { input }))
    }

    /// `−log softmax(logits)[label]` as a `[1]` tensor.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        const OP: &str = "cross_entropy";
        let z = self.value(logits);
        let m = match z.shape() {
            &[m] => m,
            s => return Err(mismatch(OP, format!("logits must be rank 1, got {s:?}"))),
        };
        if label >= m {
            return Err(TensorError::InvalidArgument {
                op: OP,
                detail: format!("label {label} out of range for {m} classes"),
            });
        }
        let zv = z.values();
        if zv.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: OP });
        }
        let max = zv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        // Subtract before adding the log-sum so huge logits do not cancel.
        let loss = (max - zv[label]) + zv.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let mut probs = vec![0.0; m];
        kernels::softmax_into(zv, &mut probs);
        Ok(self.record(
            vec![1],
            vec![loss],
            &[logits],
            Op::CrossEntropy { logits, label, probs },
        ))
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let s = self.value(input).values().iter().sum();
        Ok(self.record(vec![1], vec![s], &[input], Op::Sum { input }))
    }

    /// `Σ weights ⊙ input` with constant weights.
    pub fn weighted_sum(&mut self, input: Var, weights: Vec<f64>) -> Result<Var> {
        let x = self.value(input).values();
        if weights.len() != x.len() {
            return Err(mismatch(
                "weighted_sum",
                format!("{} weights for {} values", weights.len(), x.len()),
            ));
        }
        let s = kernels::dot(x, &weights);
        Ok(self.record(vec![1], vec![s], &[input], Op::WeightedSum { input, weights }))
    }

    /// Elementwise product with a constant mask (dropout).
    pub fn mask_scale(&mut self, input: Var, mask: Vec<f64>) -> Result<Var> {
        let x = self.value(input);
        if mask.len() != x.numel() {
            return Err(mismatch(
                "mask_scale",
                format!("mask of {} for {} values", mask.len(), x.numel()),
            ));
        }
        let shape = x.shape().to_vec();
        let y = x.values().iter().zip(&mask).map(|(a, b)| a * b).collect();
        Ok(self.record(shape, y, &[input], Op::MaskScale { input, mask }))
    }

    /// `gain[o] · direction[o, ..] / ‖direction[o, ..]‖` per leading index.
    pub fn weight_norm(&mut self, direction: Var, gain: Var) -> Result<Var> {
        const OP: &str = "weight_norm";
        let v = self.value(direction);
        let rows = v.shape()[0];
        if self.value(gain).shape() != [rows] {
            return Err(mismatch(
                OP,
                format!("gain {:?}, expected [{rows}]", self.value(gain).shape()),
            ));
        }
        let per = v.numel() / rows;
        let shape = v.shape().to_vec();
        let g = self.value(gain).values();
        let mut norms = Vec::with_capacity(rows);
        let mut y = Vec::with_capacity(v.numel());
        for (r, chunk) in v.values().chunks(per).enumerate() {
            let n = kernels::dot(chunk, chunk).sqrt();
            if n == 0.0 {
                return Err(TensorError::InvalidArgument {
                    op: OP,
                    detail: format!("direction row {r} has zero norm"),
                });
            }
            norms.push(n);
            y.extend(chunk.iter().map(|x| g[r] * x / n));
        }
        Ok(self.record(
            shape,
            y,
            &[direction, gain],
            Op::WeightNorm { direction, gain, norms },
        ))
    }

    /// Clears gradients so `backward` may run again.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.value.grad = None;
        }
        self.backward_done = false;
    }

    /// Reverse sweep from a single-element `loss`, storing gradients on
    /// every node that requires one.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(TensorError::State(
                "backward already ran; call zero_grad first".into(),
            ));
        }
        if self.value(loss).numel() != 1 {
            return Err(TensorError::State(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.value.requires_grad {
                continue;
            }
            let contributions = self.local_grads(&node.op, &node.value, &g);
            let scale = if self.fault == Some(node.op.kind()) { 1.5 } else { 1.0 };
            for (var, mut dg) in contributions {
                if !self.nodes[var.0].value.requires_grad {
                    continue;
                }
                if scale != 1.0 {
                    dg.iter_mut().for_each(|v| *v *= scale);
                }
                match &mut grads[var.0] {
                    Some(acc) => acc.iter_mut().zip(&dg).for_each(|(a, d)| *a += d),
                    slot @ None => *slot = Some(dg),
                }
            }
            self.nodes[idx].value.set_grad(g);
        }
        self.backward_done = true;
        Ok(())
    }

    fn vals(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.values()
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad
    }

    fn local_grads(&self, op: &Op, out: &Tensor, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        match *op {
            Op::Leaf => Vec::new(),
            Op::Conv1d { input, weight, bias, dilation } => {
                let (c_in, t) = (self.value(input).shape()[0], self.value(input).shape()[1]);
                let ws = self.value(weight).shape();
                let (c_out, k) = (ws[0], ws[2]);
                let (dx, dw, db) = kernels::conv1d_backward(
                    self.vals(input),
                    self.vals(weight),
                    g,
                    c_in,
                    c_out,
                    k,
                    t,
                    dilation,
                );
                vec![(input, dx), (weight, dw), (bias, db)]
            }
            Op::SoftmaxRows { input } => {
                let (r, c) = (out.shape()[0], out.shape()[1]);
                vec![(input, kernels::softmax_rows_backward(out.values(), g, r, c))]
            }
            Op::Matmul { a, b } => {
                let (m, k) = (self.value(a).shape()[0], self.value(a).shape()[1]);
                let n = self.value(b).shape()[1];
                let mut res = Vec::with_capacity(2);
                if self.wants(a) {
                    res.push((a, kernels::matmul_bt(g, self.vals(b), m, n, k)));
                }
                if self.wants(b) {
                    res.push((b, kernels::matmul_at(self.vals(a), g, m, k, n)));
                }
                res
            }
            Op::Transpose { input } => {
                let (r, c) = (out.shape()[0], out.shape()[1]);
                vec![(input, kernels::transpose(g, r, c))]
            }
            Op::Add { a, b } => vec![(a, g.to_vec()), (b, g.to_vec())],
            Op::Relu { input } => {
                let dx = self
                    .vals(input)
                    .iter()
                    .zip(g)
                    .map(|(&x, &gv)| if x > 0.0 { gv } else { 0.0 })
                    .collect();
                vec![(input, dx)]
            }
            Op::Affine { weight, input, bias } => {
                let (o, i) = (self.value(weight).shape()[0], self.value(weight).shape()[1]);
                let x = self.vals(input);
                let w = self.vals(weight);
                let mut dw = vec![0.0; o * i];
                for r in 0..o {
                    for (d, &xv) in dw[r * i..(r + 1) * i].iter_mut().zip(x) {
                        *d = g[r] * xv;
                    }
                }
                let mut dx = vec![0.0; i];
                for r in 0..o {
                    for (d, &wv) in dx.iter_mut().zip(&w[r * i..(r + 1) * i]) {
                        *d += g[r] * wv;
                    }
                }
                vec![(weight, dw), (input, dx), (bias, g.to_vec())]
            }
            Op::GlobalAvgPoolTime { input } => {
                let (c, t) = (self.value(input).shape()[0], self.value(input).shape()[1]);
                let mut dx = vec![0.0; c * t];
                for r in 0..c {
                    dx[r * t..(r + 1) * t].fill(g[r] / t as f64);
                }
                vec![(input, dx)]
            }
            Op::CrossEntropy { logits, label, ref probs } => {
                let mut dz: Vec<f64> = probs.iter().map(|p| p * g[0]).collect();
                dz[label] -= g[0];
                vec![(logits, dz)]
            }
            Op::Sum { input } => vec![(input, vec![g[0]; self.value(input).numel()])],
            Op::WeightedSum { input, ref weights } => {
                vec![(input, weights.iter().map(|w| w * g[0]).collect())]
            }
            Op::MaskScale { input, ref mask } => {
                vec![(input, mask.iter().zip(g).map(|(m, gv)| m * gv).collect())]
            }
            Op::WeightNorm { direction, gain, ref norms } => {
                let v = self.vals(direction);
                let gn = self.vals(gain);
                let per = v.len() / norms.len();
                let mut dv = vec![0.0; v.len()];
                let mut dgain = vec![0.0; norms.len()];
                for (r, &n) in norms.iter().enumerate() {
                    let span = r * per..(r + 1) * per;
                    let vr = &v[span.clone()];
                    let gr = &g[span.clone()];
                    // u = v/n; dgain = u·g; dv = (gain/n)(g − u (u·g))
                    let ug = kernels::dot(vr, gr) / n;
                    dgain[r] = ug;
                    for ((d, &vv), &gv) in dv[span].iter_mut().zip(vr).zip(gr) {
                        *d = gn[r] / n * (gv - vv / n * ug);
                    }
                }
                vec![(direction, dv), (gain, dgain)]
            }
        }
    }
}
