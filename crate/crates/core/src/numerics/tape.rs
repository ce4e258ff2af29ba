//! Reverse-mode differentiation over a recorded op sequence.
//!
//! A [`Tape`] owns every tensor produced during one forward pass. Ops append
//! nodes in execution order, so the record is topologically sorted by
//! construction and [`Tape::backward`] replays it exactly once in reverse.
//!
//! Gradients accumulate on leaves marked `requires_grad` and persist across
//! backward calls until [`Tape::zero_grads`]; interior gradients live only
//! for the duration of one backward sweep. A tensor used several times
//! receives the sum of all path gradients.
//!
//! A tape is single-threaded by design: build, run and differentiate within
//! one thread. Run independent samples on independent tapes.

use super::linalg::{col2im_acc, im2col, matmul_abt_acc, matmul_acc, matmul_atb_acc};
use super::tensor::{broadcast_to, resolve_axis, BroadcastMap, Tensor};
use crate::error::{Error, Result};

/// Handle to a tensor stored on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Forward mode for ops with distinct train/eval behavior (batch norm).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Running statistics owned by a batch-norm layer, updated in train mode.
#[derive(Debug, Clone)]
pub struct BatchNormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
    pub initialized: bool,
}

impl BatchNormState {
    pub fn new(channels: usize, momentum: f64, eps: f64) -> Self {
        BatchNormState {
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum,
            eps,
            initialized: false,
        }
    }
}

enum Op {
    Leaf,
    Conv1d {
        x: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    },
    Pad1d {
        x: Var,
        left: usize,
        right: usize,
    },
    MaxPool1d {
        x: Var,
        /// Flat input index feeding each output element.
        argmax: Vec<usize>,
    },
    BatchNorm1d {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    Dense {
        x: Var,
        weight: Var,
        bias: Var,
    },
    Relu {
        x: Var,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    LogSoftmax {
        x: Var,
        axis: usize,
    },
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    StackLast {
        xs: Vec<Var>,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    MatmulTrailing {
        x: Var,
        weight: Var,
    },
    SwapLastAxes {
        x: Var,
    },
    IndexAxis {
        x: Var,
        axis: usize,
        index: usize,
    },
    GatherLast {
        x: Var,
        indices: Vec<usize>,
    },
    Reshape {
        x: Var,
    },
    Exp {
        x: Var,
    },
    Ln {
        x: Var,
    },
    Powf {
        x: Var,
        exponent: f64,
    },
    AffineScalar {
        x: Var,
        scale: f64,
    },
    Sum {
        x: Var,
    },
    Mean {
        x: Var,
    },
    SumAxis {
        x: Var,
        axis: usize,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    /// Persistent accumulated gradient; leaves only.
    grad: Option<Vec<f64>>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Record an input tensor. Gradients accumulate on it iff `requires_grad`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Reset every accumulated leaf gradient.
    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        debug_assert!(
            value.is_finite(),
            "non-finite value produced by a tape op (node {})",
            self.nodes.len()
        );
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_requires(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    // ----- ops ------------------------------------------------------------

    /// 1-D cross-correlation (no kernel flip) of `x` [C_in, L] or
    /// [B, C_in, L] with `kernel` [C_out, C_in, K] plus `bias` [C_out].
    /// Output length is floor((L + 2*padding - K) / stride) + 1.
    pub fn conv1d(
        &mut self,
        x: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        if stride == 0 {
            return Err(Error::config("conv1d stride must be >= 1"));
        }
        let (batch, c_in, l_in, batched) = conv_input_dims(self.shape(x))?;
        let kshape = self.shape(kernel);
        if kshape.len() != 3 {
            return Err(Error::config(format!(
                "conv1d kernel must be [C_out, C_in, K], got {kshape:?}"
            )));
        }
        let (c_out, kc_in, k) = (kshape[0], kshape[1], kshape[2]);
        if kc_in != c_in {
            return Err(Error::config(format!(
                "conv1d channel mismatch: input has {c_in} channels (shape {:?}), kernel expects {kc_in} (shape {kshape:?})",
                self.shape(x)
            )));
        }
        if self.shape(bias) != [c_out] {
            return Err(Error::config(format!(
                "conv1d bias must be [{c_out}], got {:?}",
                self.shape(bias)
            )));
        }
        if l_in + 2 * padding < k {
            return Err(Error::config(format!(
                "conv1d kernel {k} exceeds padded input length {} (minimum input length {})",
                l_in + 2 * padding,
                k.saturating_sub(2 * padding)
            )));
        }
        let l_out = (l_in + 2 * padding - k) / stride + 1;

        let kdata = self.value(kernel).data();
        let bdata = self.value(bias).data();
        let xdata = self.value(x).data();
        let mut out = vec![0.0; batch * c_out * l_out];
        let mut col = vec![0.0; c_in * k * l_out];
        for b in 0..batch {
            let sample = &xdata[b * c_in * l_in..(b + 1) * c_in * l_in];
            im2col(sample, c_in, l_in, k, stride, padding, l_out, &mut col);
            let dst = &mut out[b * c_out * l_out..(b + 1) * c_out * l_out];
            for (o, row) in dst.chunks_mut(l_out).enumerate() {
                row.fill(bdata[o]);
            }
            matmul_acc(dst, kdata, &col, c_out, c_in * k, l_out);
        }
        let shape = if batched {
            vec![batch, c_out, l_out]
        } else {
            vec![c_out, l_out]
        };
        let value = Tensor::new(shape, out)?;
        let requires = self.any_requires(&[x, kernel, bias]);
        Ok(self.push(
            value,
            Op::Conv1d {
                x,
                kernel,
                bias,
                stride,
                padding,
            },
            requires,
        ))
    }

    /// Zero-pad the time (last) axis.
    pub fn pad1d(&mut self, x: Var, left: usize, right: usize) -> Result<Var> {
        if left == 0 && right == 0 {
            return Ok(x);
        }
        let shape = self.shape(x).to_vec();
        let l = *shape.last().ok_or_else(|| Error::config("pad1d on rank-0"))?;
        let rows: usize = shape[..shape.len() - 1].iter().product();
        let l_new = l + left + right;
        let xdata = self.value(x).data();
        let mut out = vec![0.0; rows * l_new];
        for r in 0..rows {
            out[r * l_new + left..r * l_new + left + l]
                .copy_from_slice(&xdata[r * l..(r + 1) * l]);
        }
        let mut new_shape = shape;
        *new_shape.last_mut().unwrap() = l_new;
        let value = Tensor::new(new_shape, out)?;
        let requires = self.any_requires(&[x]);
        Ok(self.push(value, Op::Pad1d { x, left, right }, requires))
    }

    /// Max pooling over the time axis of [C, L] or [B, C, L]. The backward
    /// pass routes the gradient to the argmax position only, first
    /// occurrence on ties.
    pub fn maxpool1d(&mut self, x: Var, window: usize, stride: usize) -> Result<Var> {
        if window == 0 || stride == 0 {
            return Err(Error::config("maxpool1d window and stride must be >= 1"));
        }
        let shape = self.shape(x).to_vec();
        let l = *shape
            .last()
            .ok_or_else(|| Error::config("maxpool1d on rank-0"))?;
        if window > l {
            return Err(Error::config(format!(
                "maxpool1d window {window} exceeds input length {l}"
            )));
        }
        let rows: usize = shape[..shape.len() - 1].iter().product();
        let l_out = (l - window) / stride + 1;
        let xdata = self.value(x).data();
        let mut out = vec![0.0; rows * l_out];
        let mut argmax = vec![0usize; rows * l_out];
        for r in 0..rows {
            let row = &xdata[r * l..(r + 1) * l];
            for t in 0..l_out {
                let start = t * stride;
                let mut best = row[start];
                let mut best_i = start;
                for (i, &v) in row[start..start + window].iter().enumerate() {
                    if v > best {
                        best = v;
                        best_i = start + i;
                    }
                }
                out[r * l_out + t] = best;
                argmax[r * l_out + t] = r * l + best_i;
            }
        }
        let mut new_shape = shape;
        *new_shape.last_mut().unwrap() = l_out;
        let value = Tensor::new(new_shape, out)?;
        let requires = self.any_requires(&[x]);
        Ok(self.push(value, Op::MaxPool1d { x, argmax }, requires))
    }

    /// Batch normalization of [B, C, L] per channel over (B, L).
    ///
    /// Train mode normalizes with batch statistics and updates the running
    /// statistics as `running = momentum * running + (1 - momentum) * batch`;
    /// eval mode uses the running statistics and errors when none were ever
    /// populated.
    pub fn batchnorm1d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        state: &mut BatchNormState,
        mode: Mode,
    ) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 3 {
            return Err(Error::config(format!(
                "batchnorm1d expects [B, C, L], got {shape:?}"
            )));
        }
        let (b, c, l) = (shape[0], shape[1], shape[2]);
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::config(format!(
                "batchnorm1d gamma/beta must be [{c}], got {:?} and {:?}",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        if state.running_mean.len() != c {
            return Err(Error::config(format!(
                "batchnorm1d state tracks {} channels, input has {c}",
                state.running_mean.len()
            )));
        }
        if state.eps <= 0.0 {
            return Err(Error::config("batchnorm1d eps must be positive"));
        }
        let train = match mode {
            Mode::Train => true,
            Mode::Eval => {
                if !state.initialized {
                    return Err(Error::config("running statistics uninitialized"));
                }
                false
            }
        };

        let xdata = self.value(x).data();
        let n = (b * l) as f64;
        let (mean, var) = if train {
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for bi in 0..b {
                for ci in 0..c {
                    let row = &xdata[(bi * c + ci) * l..(bi * c + ci + 1) * l];
                    mean[ci] += row.iter().sum::<f64>();
                }
            }
            for m in mean.iter_mut() {
                *m /= n;
            }
            for bi in 0..b {
                for ci in 0..c {
                    let row = &xdata[(bi * c + ci) * l..(bi * c + ci + 1) * l];
                    var[ci] += row.iter().map(|v| (v - mean[ci]).powi(2)).sum::<f64>();
                }
            }
            for v in var.iter_mut() {
                *v /= n;
            }
            for ci in 0..c {
                state.running_mean[ci] =
                    state.momentum * state.running_mean[ci] + (1.0 - state.momentum) * mean[ci];
                state.running_var[ci] =
                    state.momentum * state.running_var[ci] + (1.0 - state.momentum) * var[ci];
            }
            state.initialized = true;
            (mean, var)
        } else {
            (state.running_mean.clone(), state.running_var.clone())
        };

        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + state.eps).sqrt()).collect();
        let gdata = self.value(gamma).data();
        let bdata = self.value(beta).data();
        let mut xhat = vec![0.0; xdata.len()];
        let mut out = vec![0.0; xdata.len()];
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * l;
                for t in 0..l {
                    let h = (xdata[base + t] - mean[ci]) * inv_std[ci];
                    xhat[base + t] = h;
                    out[base + t] = gdata[ci] * h + bdata[ci];
                }
            }
        }
        let value = Tensor::new(shape, out)?;
        let requires = self.any_requires(&[x, gamma, beta]);
        Ok(self.push(
            value,
            Op::BatchNorm1d {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            requires,
        ))
    }

    /// Affine map of [B, F_in] (or [F_in]) by `weight` [F_in, F_out] plus
    /// `bias` [F_out].
    pub fn dense(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let xshape = self.shape(x);
        let (batch, f_in, batched) = match xshape.len() {
            1 => (1, xshape[0], false),
            2 => (xshape[0], xshape[1], true),
            _ => {
                return Err(Error::config(format!(
                    "dense expects [B, F_in] or [F_in], got {xshape:?}"
                )))
            }
        };
        let wshape = self.shape(weight);
        if wshape.len() != 2 || wshape[0] != f_in {
            return Err(Error::config(format!(
                "dense dimension mismatch: input {xshape:?} vs weight {wshape:?}"
            )));
        }
        let f_out = wshape[1];
        if self.shape(bias) != [f_out] {
            return Err(Error::config(format!(
                "dense bias must be [{f_out}], got {:?}",
                self.shape(bias)
            )));
        }
        let xdata = self.value(x).data();
        let wdata = self.value(weight).data();
        let bdata = self.value(bias).data();
        let mut out = vec![0.0; batch * f_out];
        for row in out.chunks_mut(f_out) {
            row.copy_from_slice(bdata);
        }
        matmul_acc(&mut out, xdata, wdata, batch, f_in, f_out);
        let shape = if batched {
            vec![batch, f_out]
        } else {
            vec![f_out]
        };
        let value = Tensor::new(shape, out)?;
        let requires = self.any_requires(&[x, weight, bias]);
        Ok(self.push(value, Op::Dense { x, weight, bias }, requires))
    }

    /// Elementwise max(0, x); the subgradient at 0 is taken as 0.
    pub fn relu(&mut self, x: Var) -> Var {
        let value = Tensor::new(
            self.shape(x).to_vec(),
            self.value(x).data().iter().map(|v| v.max(0.0)).collect(),
        )
        .expect("relu preserves finiteness");
        let requires = self.any_requires(&[x]);
        self.push(value, Op::Relu { x }, requires)
    }

    /// Softmax along `axis`, stabilized by max subtraction.
    pub fn softmax(&mut self, x: Var, axis: isize) -> Result<Var> {
        let axis = resolve_axis(axis, self.shape(x).len())?;
        let value = softmax_values(self.value(x), axis, false);
        let requires = self.any_requires(&[x]);
        Ok(self.push(value, Op::Softmax { x, axis }, requires))
    }

    /// Log-softmax along `axis`, stabilized by max subtraction.
    pub fn log_softmax(&mut self, x: Var, axis: isize) -> Result<Var> {
        let axis = resolve_axis(axis, self.shape(x).len())?;
        let value = softmax_values(self.value(x), axis, true);
        let requires = self.any_requires(&[x]);
        Ok(self.push(value, Op::LogSoftmax { x, axis }, requires))
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(&mut self, xs: &[Var], axis: isize) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::config("concat of zero tensors"));
        }
        if xs.len() == 1 {
            return Ok(xs[0]);
        }
        let first = self.shape(xs[0]).to_vec();
        let axis = resolve_axis(axis, first.len())?;
        let mut total = 0usize;
        for &v in xs {
            let s = self.shape(v);
            if s.len() != first.len()
                || s.iter()
                    .zip(&first)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                let shapes: Vec<_> = xs.iter().map(|&v| self.shape(v).to_vec()).collect();
                return Err(Error::config(format!(
                    "concat along axis {axis} of incompatible shapes {shapes:?}"
                )));
            }
            total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = total;
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = vec![0.0; out_shape.iter().product()];
        let mut offset = 0usize;
        for &v in xs {
            let extent = self.shape(v)[axis];
            let data = self.value(v).data();
            for o in 0..outer {
                let src = &data[o * extent * inner..(o + 1) * extent * inner];
                let dst_base = o * total * inner + offset * inner;
                out[dst_base..dst_base + extent * inner].copy_from_slice(src);
            }
            offset += extent;
        }
        let value = Tensor::new(out_shape, out)?;
        let requires = self.any_requires(xs);
        Ok(self.push(
            value,
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
            requires,
        ))
    }

    /// Stack equally shaped tensors along a new trailing axis:
    /// d inputs of shape S become one tensor of shape [S..., d].
    pub fn stack_last(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::config("stack of zero tensors"));
        }
        let base = self.shape(xs[0]).to_vec();
        for &v in &xs[1..] {
            if self.shape(v) != base.as_slice() {
                let shapes: Vec<_> = xs.iter().map(|&v| self.shape(v).to_vec()).collect();
                return Err(Error::config(format!(
                    "stack of unequally shaped tensors {shapes:?}"
                )));
            }
        }
        let d = xs.len();
        let numel: usize = base.iter().product();
        let mut out = vec![0.0; numel * d];
        for (i, &v) in xs.iter().enumerate() {
            for (j, &val) in self.value(v).data().iter().enumerate() {
                out[j * d + i] = val;
            }
        }
        let mut shape = base;
        shape.push(d);
        let value = Tensor::new(shape, out)?;
        let requires = self.any_requires(xs);
        Ok(self.push(value, Op::StackLast { xs: xs.to_vec() }, requires))
    }

    /// Hadamard product; `b` broadcasts to `a`'s shape.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (value, _) = self.broadcast_binary(a, b, |x, y| x * y)?;
        let requires = self.any_requires(&[a, b]);
        Ok(self.push(value, Op::Mul { a, b }, requires))
    }

    /// Elementwise sum; `b` broadcasts to `a`'s shape.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (value, _) = self.broadcast_binary(a, b, |x, y| x + y)?;
        let requires = self.any_requires(&[a, b]);
        Ok(self.push(value, Op::Add { a, b }, requires))
    }

    fn broadcast_binary(
        &self,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Tensor, Vec<usize>)> {
        let ashape = self.shape(a).to_vec();
        let aligned = broadcast_to(&ashape, self.shape(b))?;
        let map = BroadcastMap::new(&ashape, &aligned);
        let adata = self.value(a).data();
        let bdata = self.value(b).data();
        let out: Vec<f64> = if map.is_identity() {
            adata.iter().zip(bdata).map(|(&x, &y)| f(x, y)).collect()
        } else {
            adata
                .iter()
                .enumerate()
                .map(|(i, &x)| f(x, bdata[map.source_index(i)]))
                .collect()
        };
        Ok((Tensor::new(ashape, out)?, aligned))
    }

    /// Contract the trailing axis of `x` [..., d] with `weight` [d, e].
    pub fn matmul_trailing(&mut self, x: Var, weight: Var) -> Result<Var> {
        let xshape = self.shape(x).to_vec();
        let wshape = self.shape(weight).to_vec();
        let d = *xshape
            .last()
            .ok_or_else(|| Error::config("matmul_trailing on rank-0"))?;
        if wshape.len() != 2 || wshape[0] != d {
            return Err(Error::config(format!(
                "matmul_trailing: trailing extent {d} vs weight {wshape:?}"
            )));
        }
        let e = wshape[1];
        let rows = self.value(x).numel() / d;
        let mut out = vec![0.0; rows * e];
        matmul_acc(
            &mut out,
            self.value(x).data(),
            self.value(weight).data(),
            rows,
            d,
            e,
        );
        let mut shape = xshape;
        *shape.last_mut().unwrap() = e;
        let value = Tensor::new(shape, out)?;
        let requires = self.any_requires(&[x, weight]);
        Ok(self.push(value, Op::MatmulTrailing { x, weight }, requires))
    }

    /// Transpose the last two axes.
    pub fn swap_last_axes(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(Error::config(format!(
                "swap_last_axes needs rank >= 2, got {shape:?}"
            )));
        }
        let (r, c) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let outer: usize = shape[..shape.len() - 2].iter().product();
        let data = self.value(x).data();
        let mut out = vec![0.0; data.len()];
        for o in 0..outer {
            let src = &data[o * r * c..(o + 1) * r * c];
            let dst = &mut out[o * r * c..(o + 1) * r * c];
            for i in 0..r {
                for j in 0..c {
                    dst[j * r + i] = src[i * c + j];
                }
            }
        }
        let mut new_shape = shape;
        let n = new_shape.len();
        new_shape.swap(n - 2, n - 1);
        let value = Tensor::new(new_shape, out)?;
        let requires = self.any_requires(&[x]);
        Ok(self.push(value, Op::SwapLastAxes { x }, requires))
    }

    /// Select one index along `axis`, removing that axis.
    pub fn index_axis(&mut self, x: Var, axis: isize, index: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let axis = resolve_axis(axis, shape.len())?;
        if index >= shape[axis] {
            return Err(Error::config(format!(
                "index {index} out of range for axis {axis} of {shape:?}"
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let extent = shape[axis];
        let data = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            let src = o * extent * inner + index * inner;
            out[o * inner..(o + 1) * inner].copy_from_slice(&data[src..src + inner]);
        }
        let mut new_shape = shape;
        new_shape.remove(axis);
        if new_shape.is_empty() {
            new_shape.push(1);
        }
        let value = Tensor::new(new_shape, out)?;
        let requires = self.any_requires(&[x]);
        Ok(self.push(value, Op::IndexAxis { x, axis, index }, requires))
    }

    /// Re-index the trailing axis: out[..., t] = x[..., indices[t]].
    /// Used for nearest-neighbor temporal resampling.
    pub fn gather_last(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let l = *shape
            .last()
            .ok_or_else(|| Error::config("gather_last on rank-0"))?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= l) {
            return Err(Error::config(format!(
                "gather index {bad} out of range for trailing extent {l}"
            )));
        }
        let rows: usize = shape[..shape.len() - 1].iter().product();
        let data = self.value(x).data();
        let m = indices.len();
        let mut out = vec![0.0; rows * m];
        for r in 0..rows {
            let src = &data[r * l..(r + 1) * l];
            let dst = &mut out[r * m..(r + 1) * m];
            for (t, &i) in indices.iter().enumerate() {
                dst[t] = src[i];
            }
        }
        let mut new_shape = shape;
        *new_shape.last_mut().unwrap() = m;
        let value = Tensor::new(new_shape, out)?;
        let requires = self.any_requires(&[x]);
        Ok(self.push(
            value,
            Op::GatherLast {
                x,
                indices: indices.to_vec(),
            },
            requires,
        ))
    }

    /// View the same data under a new shape.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape)?;
        let requires = self.any_requires(&[x]);
        Ok(self.push(value, Op::Reshape { x }, requires))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let value = Tensor::new(
            self.shape(x).to_vec(),
            self.value(x).data().iter().map(|v| v.exp()).collect(),
        )
        .expect("exp of finite inputs stays finite at model scale");
        let requires = self.any_requires(&[x]);
        self.push(value, Op::Exp { x }, requires)
    }

    pub fn ln(&mut self, x: Var) -> Result<Var> {
        if self.value(x).data().iter().any(|&v| v <= 0.0) {
            return Err(Error::numeric("ln of a non-positive value"));
        }
        let value = Tensor::new(
            self.shape(x).to_vec(),
            self.value(x).data().iter().map(|v| v.ln()).collect(),
        )?;
        let requires = self.any_requires(&[x]);
        Ok(self.push(value, Op::Ln { x }, requires))
    }

    /// Elementwise x^p for x >= 0. The derivative at x = 0 is taken as 0
    /// for p > 1 and as p for p == 1.
    pub fn powf(&mut self, x: Var, exponent: f64) -> Result<Var> {
        if self.value(x).data().iter().any(|&v| v < 0.0) {
            return Err(Error::numeric("powf of a negative value"));
        }
        let value = Tensor::new(
            self.shape(x).to_vec(),
            self.value(x)
                .data()
                .iter()
                .map(|v| v.powf(exponent))
                .collect(),
        )?;
        let requires = self.any_requires(&[x]);
        Ok(self.push(value, Op::Powf { x, exponent }, requires))
    }

    /// Elementwise scale * x + shift.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let value = Tensor::new(
            self.shape(x).to_vec(),
            self.value(x)
                .data()
                .iter()
                .map(|v| scale * v + shift)
                .collect(),
        )
        .expect("affine of finite inputs is finite");
        let requires = self.any_requires(&[x]);
        self.push(value, Op::AffineScalar { x, scale }, requires)
    }

    /// Sum of all elements, as a scalar tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let total: f64 = self.value(x).data().iter().sum();
        let requires = self.any_requires(&[x]);
        self.push(Tensor::scalar(total), Op::Sum { x }, requires)
    }

    /// Mean of all elements, as a scalar tensor.
    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel() as f64;
        let total: f64 = self.value(x).data().iter().sum();
        let requires = self.any_requires(&[x]);
        self.push(Tensor::scalar(total / n), Op::Mean { x }, requires)
    }

    /// Sum over one axis, removing it.
    pub fn sum_axis(&mut self, x: Var, axis: isize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let axis = resolve_axis(axis, shape.len())?;
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let extent = shape[axis];
        let data = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for e in 0..extent {
                let base = (o * extent + e) * inner;
                for i in 0..inner {
                    out[o * inner + i] += data[base + i];
                }
            }
        }
        let mut new_shape = shape;
        new_shape.remove(axis);
        if new_shape.is_empty() {
            new_shape.push(1);
        }
        let value = Tensor::new(new_shape, out)?;
        let requires = self.any_requires(&[x]);
        Ok(self.push(value, Op::SumAxis { x, axis }, requires))
    }

    // ----- backward -------------------------------------------------------

    /// Reverse-mode sweep from a scalar loss. Gradients add into the
    /// persistent accumulators of every `requires_grad` leaf; calling twice
    /// without [`Tape::zero_grads`] accumulates both passes.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::config(format!(
                "backward on non-scalar tensor of shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            match &self.nodes[idx].op {
                Op::Leaf => {
                    let node = &mut self.nodes[idx];
                    let slot = node
                        .grad
                        .get_or_insert_with(|| vec![0.0; node.value.numel()]);
                    for (s, g) in slot.iter_mut().zip(&gout) {
                        *s += g;
                    }
                }
                op => {
                    let contributions = self.backward_op(idx, op, &gout);
                    for (var, contrib) in contributions {
                        if !self.nodes[var.0].requires_grad {
                            continue;
                        }
                        let slot = grads[var.0]
                            .get_or_insert_with(|| vec![0.0; self.nodes[var.0].value.numel()]);
                        for (s, g) in slot.iter_mut().zip(&contrib) {
                            *s += g;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn backward_op(&self, idx: usize, op: &Op, gout: &[f64]) -> Vec<(Var, Vec<f64>)> {
        match op {
            Op::Leaf => unreachable!("leaves handled by the caller"),
            Op::Conv1d {
                x,
                kernel,
                bias,
                stride,
                padding,
            } => {
                let (batch, c_in, l_in, _) = conv_input_dims(self.shape(*x)).unwrap();
                let kshape = self.shape(*kernel);
                let (c_out, k) = (kshape[0], kshape[2]);
                let l_out = (l_in + 2 * padding - k) / stride + 1;
                let xdata = self.value(*x).data();
                let kdata = self.value(*kernel).data();
                let mut dx = vec![0.0; xdata.len()];
                let mut dk = vec![0.0; kdata.len()];
                let mut db = vec![0.0; c_out];
                let mut col = vec![0.0; c_in * k * l_out];
                let mut dcol = vec![0.0; c_in * k * l_out];
                for b in 0..batch {
                    let sample = &xdata[b * c_in * l_in..(b + 1) * c_in * l_in];
                    let gslice = &gout[b * c_out * l_out..(b + 1) * c_out * l_out];
                    im2col(sample, c_in, l_in, k, *stride, *padding, l_out, &mut col);
                    // dK += dY * col^T
                    matmul_abt_acc(&mut dk, gslice, &col, c_out, l_out, c_in * k);
                    // dcol = K^T * dY, scattered back onto the sample
                    dcol.fill(0.0);
                    matmul_atb_acc(&mut dcol, kdata, gslice, c_out, c_in * k, l_out);
                    col2im_acc(
                        &dcol,
                        c_in,
                        l_in,
                        k,
                        *stride,
                        *padding,
                        l_out,
                        &mut dx[b * c_in * l_in..(b + 1) * c_in * l_in],
                    );
                    for (o, db_o) in db.iter_mut().enumerate() {
                        *db_o += gslice[o * l_out..(o + 1) * l_out].iter().sum::<f64>();
                    }
                }
                vec![(*x, dx), (*kernel, dk), (*bias, db)]
            }
            Op::Pad1d { x, left, right } => {
                let shape = self.shape(*x);
                let l = *shape.last().unwrap();
                let rows: usize = shape[..shape.len() - 1].iter().product();
                let l_new = l + left + right;
                let mut dx = vec![0.0; rows * l];
                for r in 0..rows {
                    dx[r * l..(r + 1) * l]
                        .copy_from_slice(&gout[r * l_new + left..r * l_new + left + l]);
                }
                vec![(*x, dx)]
            }
            Op::MaxPool1d { x, argmax } => {
                let mut dx = vec![0.0; self.value(*x).numel()];
                for (g, &src) in gout.iter().zip(argmax) {
                    dx[src] += g;
                }
                vec![(*x, dx)]
            }
            Op::BatchNorm1d {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let shape = self.shape(*x);
                let (b, c, l) = (shape[0], shape[1], shape[2]);
                let n = (b * l) as f64;
                let gdata = self.value(*gamma).data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                let mut sum_g = vec![0.0; c];
                let mut sum_gh = vec![0.0; c];
                for bi in 0..b {
                    for ci in 0..c {
                        let base = (bi * c + ci) * l;
                        for t in 0..l {
                            let g = gout[base + t];
                            dbeta[ci] += g;
                            dgamma[ci] += g * xhat[base + t];
                            sum_g[ci] += g;
                            sum_gh[ci] += g * xhat[base + t];
                        }
                    }
                }
                let mut dx = vec![0.0; xhat.len()];
                for bi in 0..b {
                    for ci in 0..c {
                        let base = (bi * c + ci) * l;
                        let scale = gdata[ci] * inv_std[ci];
                        for t in 0..l {
                            let g = gout[base + t];
                            dx[base + t] = if *train {
                                scale * (g - sum_g[ci] / n - xhat[base + t] * sum_gh[ci] / n)
                            } else {
                                scale * g
                            };
                        }
                    }
                }
                vec![(*x, dx), (*gamma, dgamma), (*beta, dbeta)]
            }
            Op::Dense { x, weight, bias } => {
                let xshape = self.shape(*x);
                let (batch, f_in) = if xshape.len() == 1 {
                    (1, xshape[0])
                } else {
                    (xshape[0], xshape[1])
                };
                let f_out = self.shape(*weight)[1];
                let xdata = self.value(*x).data();
                let wdata = self.value(*weight).data();
                let mut dx = vec![0.0; xdata.len()];
                let mut dw = vec![0.0; wdata.len()];
                let mut db = vec![0.0; f_out];
                matmul_abt_acc(&mut dx, gout, wdata, batch, f_out, f_in);
                matmul_atb_acc(&mut dw, xdata, gout, batch, f_in, f_out);
                for row in gout.chunks(f_out) {
                    for (d, g) in db.iter_mut().zip(row) {
                        *d += g;
                    }
                }
                vec![(*x, dx), (*weight, dw), (*bias, db)]
            }
            Op::Relu { x } => {
                let dx = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(gout)
                    .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                    .collect();
                vec![(*x, dx)]
            }
            Op::Softmax { x, axis } => {
                let y = self.value(Var(idx)).data();
                let dx = softmax_backward(y, gout, self.shape(*x), *axis, false);
                vec![(*x, dx)]
            }
            Op::LogSoftmax { x, axis } => {
                let y = self.value(Var(idx)).data();
                let dx = softmax_backward(y, gout, self.shape(*x), *axis, true);
                vec![(*x, dx)]
            }
            Op::Concat { xs, axis } => {
                let out_shape = self.shape(Var(idx));
                let total = out_shape[*axis];
                let outer: usize = out_shape[..*axis].iter().product();
                let inner: usize = out_shape[*axis + 1..].iter().product();
                let mut offset = 0usize;
                let mut contributions = Vec::with_capacity(xs.len());
                for &v in xs {
                    let extent = self.shape(v)[*axis];
                    let mut dv = vec![0.0; self.value(v).numel()];
                    for o in 0..outer {
                        let src_base = o * total * inner + offset * inner;
                        dv[o * extent * inner..(o + 1) * extent * inner]
                            .copy_from_slice(&gout[src_base..src_base + extent * inner]);
                    }
                    offset += extent;
                    contributions.push((v, dv));
                }
                contributions
            }
            Op::StackLast { xs } => {
                let d = xs.len();
                xs.iter()
                    .enumerate()
                    .map(|(i, &v)| {
                        let numel = self.value(v).numel();
                        let mut dv = vec![0.0; numel];
                        for (j, dvj) in dv.iter_mut().enumerate() {
                            *dvj = gout[j * d + i];
                        }
                        (v, dv)
                    })
                    .collect()
            }
            Op::Mul { a, b } => {
                let ashape = self.shape(*a).to_vec();
                let aligned = broadcast_to(&ashape, self.shape(*b)).unwrap();
                let map = BroadcastMap::new(&ashape, &aligned);
                let adata = self.value(*a).data();
                let bdata = self.value(*b).data();
                let mut da = vec![0.0; adata.len()];
                let mut db = vec![0.0; bdata.len()];
                for i in 0..adata.len() {
                    let src = map.source_index(i);
                    da[i] = gout[i] * bdata[src];
                    db[src] += gout[i] * adata[i];
                }
                vec![(*a, da), (*b, db)]
            }
            Op::Add { a, b } => {
                let ashape = self.shape(*a).to_vec();
                let aligned = broadcast_to(&ashape, self.shape(*b)).unwrap();
                let map = BroadcastMap::new(&ashape, &aligned);
                let mut db = vec![0.0; self.value(*b).numel()];
                for (i, &g) in gout.iter().enumerate() {
                    db[map.source_index(i)] += g;
                }
                vec![(*a, gout.to_vec()), (*b, db)]
            }
            Op::MatmulTrailing { x, weight } => {
                let d = *self.shape(*x).last().unwrap();
                let e = self.shape(*weight)[1];
                let rows = self.value(*x).numel() / d;
                let xdata = self.value(*x).data();
                let wdata = self.value(*weight).data();
                let mut dx = vec![0.0; xdata.len()];
                let mut dw = vec![0.0; wdata.len()];
                matmul_abt_acc(&mut dx, gout, wdata, rows, e, d);
                matmul_atb_acc(&mut dw, xdata, gout, rows, d, e);
                vec![(*x, dx), (*weight, dw)]
            }
            Op::SwapLastAxes { x } => {
                let shape = self.shape(Var(idx));
                let (r, c) = (shape[shape.len() - 2], shape[shape.len() - 1]);
                let outer: usize = shape[..shape.len() - 2].iter().product();
                let mut dx = vec![0.0; gout.len()];
                for o in 0..outer {
                    let src = &gout[o * r * c..(o + 1) * r * c];
                    let dst = &mut dx[o * r * c..(o + 1) * r * c];
                    for i in 0..r {
                        for j in 0..c {
                            dst[j * r + i] = src[i * c + j];
                        }
                    }
                }
                vec![(*x, dx)]
            }
            Op::IndexAxis { x, axis, index } => {
                let shape = self.shape(*x);
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[*axis + 1..].iter().product();
                let extent = shape[*axis];
                let mut dx = vec![0.0; self.value(*x).numel()];
                for o in 0..outer {
                    let dst = o * extent * inner + index * inner;
                    dx[dst..dst + inner].copy_from_slice(&gout[o * inner..(o + 1) * inner]);
                }
                vec![(*x, dx)]
            }
            Op::GatherLast { x, indices } => {
                let shape = self.shape(*x);
                let l = *shape.last().unwrap();
                let rows: usize = shape[..shape.len() - 1].iter().product();
                let m = indices.len();
                let mut dx = vec![0.0; rows * l];
                for r in 0..rows {
                    for (t, &i) in indices.iter().enumerate() {
                        dx[r * l + i] += gout[r * m + t];
                    }
                }
                vec![(*x, dx)]
            }
            Op::Reshape { x } => vec![(*x, gout.to_vec())],
            Op::Exp { x } => {
                let y = self.value(Var(idx)).data();
                vec![(*x, y.iter().zip(gout).map(|(&v, &g)| v * g).collect())]
            }
            Op::Ln { x } => {
                let xd = self.value(*x).data();
                vec![(*x, xd.iter().zip(gout).map(|(&v, &g)| g / v).collect())]
            }
            Op::Powf { x, exponent } => {
                let p = *exponent;
                let xd = self.value(*x).data();
                let dx = xd
                    .iter()
                    .zip(gout)
                    .map(|(&v, &g)| {
                        if v == 0.0 {
                            if (p - 1.0).abs() < f64::EPSILON {
                                p * g
                            } else {
                                0.0
                            }
                        } else {
                            p * v.powf(p - 1.0) * g
                        }
                    })
                    .collect();
                vec![(*x, dx)]
            }
            Op::AffineScalar { x, scale } => {
                vec![(*x, gout.iter().map(|&g| g * scale).collect())]
            }
            Op::Sum { x } => {
                vec![(*x, vec![gout[0]; self.value(*x).numel()])]
            }
            Op::Mean { x } => {
                let n = self.value(*x).numel();
                vec![(*x, vec![gout[0] / n as f64; n])]
            }
            Op::SumAxis { x, axis } => {
                let shape = self.shape(*x);
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[*axis + 1..].iter().product();
                let extent = shape[*axis];
                let mut dx = vec![0.0; self.value(*x).numel()];
                for o in 0..outer {
                    for e in 0..extent {
                        let base = (o * extent + e) * inner;
                        dx[base..base + inner]
                            .copy_from_slice(&gout[o * inner..(o + 1) * inner]);
                    }
                }
                vec![(*x, dx)]
            }
        }
    }
}

fn conv_input_dims(shape: &[usize]) -> Result<(usize, usize, usize, bool)> {
    match shape.len() {
        2 => Ok((1, shape[0], shape[1], false)),
        3 => Ok((shape[0], shape[1], shape[2], true)),
        _ => Err(Error::config(format!(
            "conv1d expects [C, L] or [B, C, L], got {shape:?}"
        ))),
    }
}

fn softmax_values(x: &Tensor, axis: usize, log: bool) -> Tensor {
    let shape = x.shape();
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let extent = shape[axis];
    let data = x.data();
    let mut out = vec![0.0; data.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |e: usize| (o * extent + e) * inner + i;
            let mut max = f64::NEG_INFINITY;
            for e in 0..extent {
                max = max.max(data[at(e)]);
            }
            let mut denom = 0.0;
            for e in 0..extent {
                denom += (data[at(e)] - max).exp();
            }
            if log {
                let log_denom = denom.ln();
                for e in 0..extent {
                    out[at(e)] = data[at(e)] - max - log_denom;
                }
            } else {
                for e in 0..extent {
                    out[at(e)] = (data[at(e)] - max).exp() / denom;
                }
            }
        }
    }
    Tensor::new(shape.to_vec(), out).expect("softmax of finite input is finite")
}


fn softmax_backward(y: &[f64], gout: &[f64], shape: &[usize], axis: usize, log: bool) -> Vec<f64> {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let extent = shape[axis];
    let mut dx = vec![0.0; y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |e: usize| (o * extent + e) * inner + i;
            if log {
                // dx = g - softmax(x) * sum(g)
                let gsum: f64 = (0..extent).map(|e| gout[at(e)]).sum();
                for e in 0..extent {
                    dx[at(e)] = gout[at(e)] - y[at(e)].exp() * gsum;
                }
            } else {
                // dx = y * (g - sum(g * y))
                let dot: f64 = (0..extent).map(|e| gout[at(e)] * y[at(e)]).sum();
                for e in 0..extent {
                    dx[at(e)] = y[at(e)] * (gout[at(e)] - dot);
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(tape: &mut Tape, shape: &[usize], data: Vec<f64>, grad: bool) -> Var {
        tape.leaf(Tensor::new(shape.to_vec(), data).unwrap(), grad)
    }

    #[test]
    fn conv_identity_kernel() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[1, 3], vec![1.0, 2.0, 3.0], false);
        let k = leaf(&mut tape, &[1, 1, 1], vec![1.0], false);
        let b = leaf(&mut tape, &[1], vec![0.0], false);
        let y = tape.conv1d(x, k, b, 1, 0).unwrap();
        assert_eq!(tape.value(y).data(),&[1.0, 2.0, 3.0]);
    }

    #[test]
    fn conv_sliding_sum() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[1, 3], vec![1.0, 2.0, 3.0], false);
        let k = leaf(&mut tape, &[1, 1, 2], vec![1.0, 1.0], false);
        let b = leaf(&mut tape, &[1], vec![0.0], false);
        let y = tape.conv1d(x, k, b, 1, 0).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, 5.0]);
    }

    #[test]
    fn conv_output_length_formula() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[1, 2560], vec![0.0; 2560], false);
        let k = leaf(&mut tape, &[1, 1, 64], vec![0.0; 64], false);
        let b = leaf(&mut tape, &[1], vec![0.0], false);
        let y = tape.conv1d(x, k, b, 1, 0).unwrap();
        assert_eq!(tape.shape(y), &[1, 2497]);
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[2, 8], vec![0.0; 16], false);
        let k = leaf(&mut tape, &[1, 3, 2], vec![0.0; 6], false);
        let b = leaf(&mut tape, &[1], vec![0.0], false);
        let err = tape.conv1d(x, k, b, 1, 0).unwrap_err().to_string();
        assert!(err.contains("[2, 8]") && err.contains("[1, 3, 2]"), "{err}");
    }

    #[test]
    fn maxpool_pairwise_and_identity() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[1, 4], vec![1.0, 3.0, 2.0, 5.0], false);
        let y = tape.maxpool1d(x, 2, 2).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, 5.0]);

        let z = leaf(&mut tape, &[1, 1], vec![7.0], false);
        let w = tape.maxpool1d(z, 1, 1).unwrap();
        assert_eq!(tape.value(w).data(), &[7.0]);
        assert!(tape.maxpool1d(z, 2, 1).is_err());
    }

    #[test]
    fn maxpool_tie_routes_to_first_occurrence() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[1, 4], vec![2.0, 2.0, 2.0, 2.0], true);
        let y = tape.maxpool1d(x, 2, 2).unwrap();
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn dense_row_vector_map() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[1, 2], vec![1.0, 0.0], false);
        let w = leaf(&mut tape, &[2, 2], vec![2.0, 3.0, 4.0, 5.0], false);
        let b = leaf(&mut tape, &[2], vec![1.0, 1.0], false);
        let y = tape.dense(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, 4.0]);
    }

    #[test]
    fn dense_identity_and_summation() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[2, 2], vec![1.0, 2.0, 3.0, 4.0], false);
        let eye = leaf(&mut tape, &[2, 2], vec![1.0, 0.0, 0.0, 1.0], false);
        let zero = leaf(&mut tape, &[2], vec![0.0, 0.0], false);
        let y = tape.dense(x, eye, zero).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());

        let ones = leaf(&mut tape, &[2, 1], vec![1.0, 1.0], false);
        let zero1 = leaf(&mut tape, &[1], vec![0.0], false);
        let s = tape.dense(x, ones, zero1).unwrap();
        assert_eq!(tape.value(s).data(), &[3.0, 7.0]);
    }

    #[test]
    fn dense_rejects_dimension_mismatch() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[1, 3], vec![0.0; 3], false);
        let w = leaf(&mut tape, &[2, 2], vec![0.0; 4], false);
        let b = leaf(&mut tape, &[2], vec![0.0; 2], false);
        assert!(tape.dense(x, w, b).is_err());
    }

    #[test]
    fn softmax_symmetry_and_ln3() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[2], vec![4.2, 4.2], false);
        let y = tape.softmax(x, 0).unwrap();
        assert!((tape.value(y).data()[0] - 0.5).abs() < 1e-12);

        let z = leaf(&mut tape, &[2], vec![0.0, 3.0f64.ln()], false);
        let p = tape.softmax(z, 0).unwrap();
        assert!((tape.value(p).data()[0] - 0.25).abs() < 1e-12);
        assert!((tape.value(p).data()[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn softmax_survives_large_inputs() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[2], vec![1000.0, 1000.0], false);
        let y = tape.softmax(x, 0).unwrap();
        assert!((tape.value(y).data()[0] - 0.5).abs() < 1e-12);
        let sums: f64 = tape.value(y).data().iter().sum();
        assert!((sums - 1.0).abs() < 1e-9);
    }

    #[test]
    fn relu_gates_values_and_gradient() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[3], vec![-1.0, 0.0, 2.0], true);
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
        let c = leaf(&mut tape, &[3], vec![5.0, 5.0, 5.0], false);
        let prod = tape.mul(y, c).unwrap();
        let s = tape.sum(prod);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.0, 0.0, 5.0]);
    }

    #[test]
    fn concat_shapes_and_backward_split() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, &[2, 3], vec![1.0; 6], true);
        let b = leaf(&mut tape, &[2, 3], vec![2.0; 6], true);
        let y = tape.concat(&[a, b], 0).unwrap();
        assert_eq!(tape.shape(y), &[4, 3]);

        // Single input passes through as the same node.
        let single = tape.concat(&[a], 0).unwrap();
        assert_eq!(single, a);

        // Backward routes each side its own slice.
        let weights = leaf(
            &mut tape,
            &[4, 3],
            (0..12).map(|i| i as f64).collect(),
            false,
        );
        let prod = tape.mul(y, weights).unwrap();
        let s = tape.sum(prod);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(tape.grad(b).unwrap(), &[6.0, 7.0, 8.0, 9.0, 10.0, 11.0]);
    }

    #[test]
    fn concat_rejects_mismatched_shapes() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, &[2, 3], vec![0.0; 6], false);
        let b = leaf(&mut tape, &[3, 3], vec![0.0; 9], false);
        let err = tape.concat(&[a, b], 1).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[3, 3]"));
    }

    #[test]
    fn mul_identity_and_hand_value() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, &[2], vec![1.0, 2.0], true);
        let ones = leaf(&mut tape, &[2], vec![1.0, 1.0], false);
        let y = tape.mul(a, ones).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0]);

        let b = leaf(&mut tape, &[2], vec![3.0, 4.0], false);
        let z = tape.mul(a, b).unwrap();
        assert_eq!(tape.value(z).data(), &[3.0, 8.0]);

        // grad w.r.t. a equals upstream * b
        let s = tape.sum(z);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[3.0, 4.0]);
    }

    #[test]
    fn mul_broadcast_and_rejection() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, &[2, 3], (1..=6).map(f64::from).collect(), false);
        let b = leaf(&mut tape, &[3], vec![1.0, 10.0, 100.0], false);
        let y = tape.mul(a, b).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 20.0, 300.0, 4.0, 50.0, 600.0]);

        let c = leaf(&mut tape, &[2], vec![0.0; 2], false);
        assert!(tape.mul(a, c).is_err());
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[2, 3], vec![0.5; 6], true);
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn backward_of_square_sum() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[1], vec![3.0], true);
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[2], vec![1.0, 2.0], true);
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn gradients_accumulate_across_paths_and_calls() {
        // Two uses of x sum their path gradients.
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[2], vec![1.0, 2.0], true);
        let doubled = tape.add(x, x).unwrap();
        let s = tape.sum(doubled);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 2.0]);

        // A second backward without reset accumulates on top.
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[4.0, 4.0]);

        tape.zero_grads();
        assert!(tape.grad(x).is_none());
    }

    #[test]
    fn batchnorm_normalizes_per_channel() {
        let mut tape = Tape::new();
        // B=2, C=1, L=2 with values {-1, -1, 1, 1}: already standardized.
        let x = leaf(&mut tape, &[2, 1, 2], vec![-1.0, -1.0, 1.0, 1.0], false);
        let g = leaf(&mut tape, &[1], vec![1.0], false);
        let b = leaf(&mut tape, &[1], vec![0.0], false);
        let mut state = BatchNormState::new(1, 0.9, 1e-9);
        let y = tape
            .batchnorm1d(x, g, b, &mut state, Mode::Train)
            .unwrap();
        for (got, want) in tape.value(y).data().iter().zip([-1.0, -1.0, 1.0, 1.0]) {
            assert!((got - want).abs() < 1e-4);
        }
        assert!(state.initialized);
    }

    #[test]
    fn batchnorm_zero_input_zero_output() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[2, 2, 3], vec![0.0; 12], false);
        let g = leaf(&mut tape, &[2], vec![1.0, 1.0], false);
        let b = leaf(&mut tape, &[2], vec![0.0, 0.0], false);
        let mut state = BatchNormState::new(2, 0.9, 1e-5);
        let y = tape
            .batchnorm1d(x, g, b, &mut state, Mode::Train)
            .unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batchnorm_gamma_zero_means_constant_beta() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[2, 1, 2], vec![0.3, -2.0, 4.0, 1.0], false);
        let g = leaf(&mut tape, &[1], vec![0.0], false);
        let b = leaf(&mut tape, &[1], vec![5.0], false);
        let mut state = BatchNormState::new(1, 0.9, 1e-5);
        let y = tape
            .batchnorm1d(x, g, b, &mut state, Mode::Train)
            .unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn batchnorm_eval_before_train_errors() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[1, 1, 2], vec![0.0; 2], false);
        let g = leaf(&mut tape, &[1], vec![1.0], false);
        let b = leaf(&mut tape, &[1], vec![0.0], false);
        let mut state = BatchNormState::new(1, 0.9, 1e-5);
        let err = tape
            .batchnorm1d(x, g, b, &mut state, Mode::Eval)
            .unwrap_err();
        assert!(err.to_string().contains("running statistics uninitialized"));
    }

    #[test]
    fn pad_and_gather_round_trip() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[1, 3], vec![1.0, 2.0, 3.0], true);
        let padded = tape.pad1d(x, 1, 2).unwrap();
        assert_eq!(tape.value(padded).data(), &[0.0, 1.0, 2.0, 3.0, 0.0, 0.0]);

        let gathered = tape.gather_last(x, &[2, 2, 0]).unwrap();
        assert_eq!(tape.value(gathered).data(), &[3.0, 3.0, 1.0]);
        let s = tape.sum(gathered);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 0.0, 2.0]);
    }

    #[test]
    fn tensor_rejects_non_finite_after_ops() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[1], vec![-1.0], false);
        assert!(tape.ln(x).is_err());
        assert!(tape.powf(x, 2.0).is_err());
    }
}

