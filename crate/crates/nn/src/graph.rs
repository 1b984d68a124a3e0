//! Tape-based reverse-mode autodiff.
//!
//! A [`Graph`] records every operation eagerly: values are computed when the
//! node is created, and [`Graph::backward`] walks the tape in reverse. One
//! graph lives for one forward/backward pass. Parameters enter the tape once
//! per graph, so a network applied several times (recurrent rollouts)
//! accumulates all of its gradient contributions into the same node.

use std::collections::HashMap;

use crate::error::{shape_err, NnError, Result};
use crate::kernels::{self, ConvGeom};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        cols: Vec<f32>,
    },
    ConvT2 {
        x: Var,
        w: Var,
        b: Option<Var>,
        cout: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f32>,
        inv_std: Vec<f32>,
        /// Train mode differentiates through the batch statistics.
        batch_stats: bool,
    },
    Relu(Var),
    MaxPool2 {
        x: Var,
        argmax: Vec<usize>,
    },
    Upsample2(Var),
    Concat(Vec<Var>),
    Slice {
        x: Var,
        start: usize,
    },
    Add(Var, Var),
    Affine {
        x: Var,
        scale: f32,
    },
    MulConst {
        x: Var,
        c: Vec<f32>,
    },
    Clamp {
        x: Var,
        lo: f32,
        hi: f32,
    },
    MaskedL1 {
        pred: Var,
        sign: Vec<f32>,
    },
    WeightedSum {
        x: Var,
        weights: Vec<f32>,
    },
    Mean(Vec<Var>),
}

struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Batch moments observed by a train-mode batch norm, for running-stat updates.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f32>,
    /// Unbiased variance over (N, H, W).
    pub var_unbiased: Vec<f32>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf whose gradient is reported by [`Gradients::get`].
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.param(id).value.clone(), Op::Param, true);
        self.params.insert(id, v);
        v
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, pad: usize) -> Result<Var> {
        let [n, cin, h, wd] = self.value(x).dims4()?;
        let [cout, wcin, kh, kw] = self.value(w).dims4()?;
        if wcin != cin {
            return shape_err(format!("conv2d: input has {cin} channels, weight expects {wcin}"));
        }
        if h + 2 * pad < kh || wd + 2 * pad < kw {
            return shape_err("conv2d: kernel larger than padded input");
        }
        if let Some(b) = b {
            if self.value(b).len() != cout {
                return shape_err(format!("conv2d: bias length {} != {cout}", self.value(b).len()));
            }
        }
        let geom = ConvGeom {
            n,
            cin,
            h,
            w: wd,
            cout,
            kh,
            kw,
            pad,
            oh: h + 2 * pad - kh + 1,
            ow: wd + 2 * pad - kw + 1,
        };
        let (out, cols) = kernels::conv_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &geom,
        );
        let tracked = self.tracked(x) || self.tracked(w) || b.is_some_and(|b| self.tracked(b));
        let value = Tensor::new(&[n, cout, geom.oh, geom.ow], out)?;
        Ok(self.push(value, Op::Conv2d { x, w, b, geom, cols }, tracked))
    }

    /// 2×2 stride-2 transposed convolution; `w` is (Cin, Cout, 2, 2).
    pub fn conv_transpose2(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let dims = self.value(x).dims4()?;
        let [wcin, cout, kh, kw] = self.value(w).dims4()?;
        if wcin != dims[1] || kh != 2 || kw != 2 {
            return shape_err(format!(
                "conv_transpose2: weight {:?} incompatible with input {:?}",
                self.value(w).shape(),
                dims
            ));
        }
        let out = kernels::conv_t2_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            dims,
            cout,
        );
        let tracked = self.tracked(x) || self.tracked(w) || b.is_some_and(|b| self.tracked(b));
        let value = Tensor::new(&[dims[0], cout, 2 * dims[2], 2 * dims[3]], out)?;
        Ok(self.push(value, Op::ConvT2 { x, w, b, cout }, tracked))
    }

    fn check_affine_len(&self, x: Var, gamma: Var, beta: Var) -> Result<[usize; 4]> {
        let dims = self.value(x).dims4()?;
        if self.value(gamma).len() != dims[1] || self.value(beta).len() != dims[1] {
            return shape_err(format!(
                "batchnorm: {} channels, affine lengths {} / {}",
                dims[1],
                self.value(gamma).len(),
                self.value(beta).len()
            ));
        }
        Ok(dims)
    }

    fn normalize(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        inv_std: Vec<f32>,
        batch_stats: bool,
    ) -> Result<Var> {
        let dims = self.value(x).dims4()?;
        let [_, c, h, w] = dims;
        let hw = h * w;
        let xs = self.value(x).data();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![0.0f32; xs.len()];
        let mut out = vec![0.0f32; xs.len()];
        for (i, (&v, (xh, o))) in xs.iter().zip(xhat.iter_mut().zip(out.iter_mut())).enumerate() {
            let ci = (i / hw) % c;
            *xh = ((v as f64 - mean[ci]) * inv_std[ci] as f64) as f32;
            *o = g[ci] * *xh + bt[ci];
        }
        let tracked = self.tracked(x) || self.tracked(gamma) || self.tracked(beta);
        let value = Tensor::new(self.value(x).shape(), out)?;
        Ok(self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
            tracked,
        ))
    }

    /// Batch norm with batch statistics; the caller folds the returned
    /// moments into its running estimates.
    pub fn batchnorm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f32,
    ) -> Result<(Var, BatchStats)> {
        let dims = self.check_affine_len(x, gamma, beta)?;
        let count = dims[0] * dims[2] * dims[3];
        if count < 2 {
            return Err(NnError::DegenerateBatch(format!(
                "N·H·W = {count} in train mode (need ≥ 2)"
            )));
        }
        let (mean, var) = kernels::channel_moments(self.value(x).data(), dims);
        let inv_std: Vec<f32> = var
            .iter()
            .map(|&v| (1.0 / (v + eps as f64).sqrt()) as f32)
            .collect();
        let stats = BatchStats {
            mean: mean.iter().map(|&m| m as f32).collect(),
            var_unbiased: var
                .iter()
                .map(|&v| (v * count as f64 / (count - 1) as f64) as f32)
                .collect(),
        };
        let out = self.normalize(x, gamma, beta, &mean, inv_std, true)?;
        Ok((out, stats))
    }

    /// Batch norm with fixed (running) statistics.
    pub fn batchnorm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f32],
        var: &[f32],
        eps: f32,
    ) -> Result<Var> {
        let dims = self.check_affine_len(x, gamma, beta)?;
        if mean.len() != dims[1] || var.len() != dims[1] {
            return shape_err("batchnorm: running statistics length mismatch");
        }
        let mean: Vec<f64> = mean.iter().map(|&m| m as f64).collect();
        let inv_std = var
            .iter()
            .map(|&v| (1.0 / (v as f64 + eps as f64).sqrt()) as f32)
            .collect();
        self.normalize(x, gamma, beta, &mean, inv_std, false)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = t.data().iter().map(|&v| v.max(0.0)).collect();
        let value = Tensor::new(t.shape(), out).expect("same shape");
        let tracked = self.tracked(x);
        self.push(value, Op::Relu(x), tracked)
    }

    /// 2×2 max pooling, stride 2. Ties route the gradient to the first
    /// maximal element in row-major window order.
    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return shape_err(format!("maxpool2: spatial dims {h}×{w} must be even"));
        }
        let (oh, ow) = (h / 2, w / 2);
        let xs = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = base + 2 * i * w + 2 * j;
                    for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * i + di) * w + 2 * j + dj;
                        if xs[idx] > xs[best] {
                            best = idx;
                        }
                    }
                    out.push(xs[best]);
                    argmax.push(best);
                }
            }
        }
        let tracked = self.tracked(x);
        let value = Tensor::new(&[n, c, oh, ow], out)?;
        Ok(self.push(value, Op::MaxPool2 { x, argmax }, tracked))
    }

    /// Bilinear ×2 upsampling (align-corners false).
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4()?;
        let (ty, tx) = (kernels::upsample_taps(h), kernels::upsample_taps(w));
        let xs = self.value(x).data();
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = vec![0.0f32; n * c * oh * ow];
        for plane in 0..n * c {
            let src = &xs[plane * h * w..(plane + 1) * h * w];
            let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
            for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                    dst[oy * ow + ox] = wy0 * (wx0 * src[y0 * w + x0] + wx1 * src[y0 * w + x1])
                        + wy1 * (wx0 * src[y1 * w + x0] + wx1 * src[y1 * w + x1]);
                }
            }
        }
        let tracked = self.tracked(x);
        let value = Tensor::new(&[n, c, oh, ow], out)?;
        Ok(self.push(value, Op::Upsample2(x), tracked))
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return shape_err("concat: no inputs");
        };
        let [n, _, h, w] = self.value(first).dims4()?;
        let mut total_c = 0;
        for &p in parts {
            let [pn, pc, ph, pw] = self.value(p).dims4()?;
            if (pn, ph, pw) != (n, h, w) {
                return shape_err(format!(
                    "concat: {:?} does not match N={n}, H={h}, W={w}",
                    self.value(p).shape()
                ));
            }
            total_c += pc;
        }
        let hw = h * w;
        let mut out = Vec::with_capacity(n * total_c * hw);
        for ni in 0..n {
            for &p in parts {
                let pc = self.value(p).shape()[1];
                out.extend_from_slice(&self.value(p).data()[ni * pc * hw..(ni + 1) * pc * hw]);
            }
        }
        let tracked = parts.iter().any(|&p| self.tracked(p));
        let value = Tensor::new(&[n, total_c, h, w], out)?;
        Ok(self.push(value, Op::Concat(parts.to_vec()), tracked))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4()?;
        if len == 0 || start + len > c {
            return shape_err(format!("slice: channels {start}..{} of {c}", start + len));
        }
        let hw = h * w;
        let xs = self.value(x).data();
        let mut out = Vec::with_capacity(n * len * hw);
        for ni in 0..n {
            out.extend_from_slice(&xs[(ni * c + start) * hw..(ni * c + start + len) * hw]);
        }
        let tracked = self.tracked(x);
        let value = Tensor::new(&[n, len, h, w], out)?;
        Ok(self.push(value, Op::Slice { x, start }, tracked))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return shape_err(format!(
                "add: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            ));
        }
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::new(self.value(a).shape(), out)?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::Add(a, b), tracked))
    }

    /// `scale·x + shift` element-wise.
    pub fn affine(&mut self, x: Var, scale: f32, shift: f32) -> Var {
        let t = self.value(x);
        let out = t.data().iter().map(|&v| scale * v + shift).collect();
        let value = Tensor::new(t.shape(), out).expect("same shape");
        let tracked = self.tracked(x);
        self.push(value, Op::Affine { x, scale }, tracked)
    }

    /// Element-wise product with a constant tensor of identical shape.
    pub fn mul_const(&mut self, x: Var, c: &Tensor) -> Result<Var> {
        if self.value(x).shape() != c.shape() {
            return shape_err(format!(
                "mul_const: {:?} vs {:?}",
                self.value(x).shape(),
                c.shape()
            ));
        }
        let out = self
            .value(x)
            .data()
            .iter()
            .zip(c.data())
            .map(|(a, b)| a * b)
            .collect();
        let value = Tensor::new(c.shape(), out)?;
        let tracked = self.tracked(x);
        Ok(self.push(
            value,
            Op::MulConst {
                x,
                c: c.data().to_vec(),
            },
            tracked,
        ))
    }

    /// Clamps to `[lo, hi]`; the gradient passes where `lo ≤ x ≤ hi`.
    pub fn clamp(&mut self, x: Var, lo: f32, hi: f32) -> Var {
        let t = self.value(x);
        let out = t.data().iter().map(|&v| v.clamp(lo, hi)).collect();
        let value = Tensor::new(t.shape(), out).expect("same shape");
        let tracked = self.tracked(x);
        self.push(value, Op::Clamp { x, lo, hi }, tracked)
    }

    /// Mean of `|pred − target|` over cells where `mask` is true.
    pub fn masked_l1(&mut self, pred: Var, target: &Tensor, mask: &[bool]) -> Result<Var> {
        let p = self.value(pred);
        if p.shape() != target.shape() || mask.len() != p.len() {
            return shape_err(format!(
                "masked_l1: pred {:?}, target {:?}, mask {}",
                p.shape(),
                target.shape(),
                mask.len()
            ));
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(NnError::EmptyDomain);
        }
        let mut total = 0.0f64;
        let mut sign = vec![0.0f32; p.len()];
        for (i, ((&a, &b), &m)) in p.data().iter().zip(target.data()).zip(mask).enumerate() {
            if m {
                let d = a - b;
                total += d.abs() as f64;
                sign[i] = if d > 0.0 {
                    1.0
                } else if d < 0.0 {
                    -1.0
                } else {
                    0.0
                } / count as f32;
            }
        }
        let tracked = self.tracked(pred);
        let value = Tensor::scalar((total / count as f64) as f32);
        Ok(self.push(value, Op::MaskedL1 { pred, sign }, tracked))
    }

    /// `Σ weights·x` as a scalar, accumulated in f64.
    pub fn weighted_sum(&mut self, x: Var, weights: &[f32]) -> Result<Var> {
        if weights.len() != self.value(x).len() {
            return shape_err("weighted_sum: weight length mismatch");
        }
        let total: f64 = self
            .value(x)
            .data()
            .iter()
            .zip(weights)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum();
        let tracked = self.tracked(x);
        Ok(self.push(
            Tensor::scalar(total as f32),
            Op::WeightedSum {
                x,
                weights: weights.to_vec(),
            },
            tracked,
        ))
    }

    /// Arithmetic mean of scalar nodes.
    pub fn mean(&mut self, scalars: &[Var]) -> Result<Var> {
        if scalars.is_empty() || scalars.iter().any(|&s| self.value(s).len() != 1) {
            return shape_err("mean: expects a non-empty list of scalars");
        }
        let total: f64 = scalars.iter().map(|&s| self.value(s).item() as f64).sum();
        let tracked = scalars.iter().any(|&s| self.tracked(s));
        Ok(self.push(
            Tensor::scalar((total / scalars.len() as f64) as f32),
            Op::Mean(scalars.to_vec()),
            tracked,
        ))
    }

    /// Reverse pass from `root`, seeded with ones.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0; self.value(root).len()]);

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked {
                continue;
            }
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &gout, &mut grads)?;
            grads[idx] = Some(gout);
        }

        let params = self.params.iter().map(|(&id, &v)| (id, v)).collect();
        Ok(Gradients { grads, params })
    }

    fn propagate(&self, node: &Node, g: &[f32], grads: &mut [Option<Vec<f32>>]) -> Result<()> {
        let send = |grads: &mut [Option<Vec<f32>>], v: Var, delta: Vec<f32>| {
            if !self.tracked(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
                slot => *slot = Some(delta),
            }
        };

        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Conv2d { x, w, b, geom, cols } => {
                let res = kernels::conv_backward(g, cols, self.value(*w).data(), geom, self.tracked(*x));
                if let Some(dx) = res.dx {
                    send(grads, *x, dx);
                }
                send(grads, *w, res.dw);
                if let Some(b) = b {
                    send(grads, *b, res.db);
                }
            }
            Op::ConvT2 { x, w, b, cout } => {
                let dims = self.value(*x).dims4()?;
                let res = kernels::conv_t2_backward(
                    g,
                    self.value(*x).data(),
                    self.value(*w).data(),
                    dims,
                    *cout,
                    self.tracked(*x),
                );
                if let Some(dx) = res.dx {
                    send(grads, *x, dx);
                }
                send(grads, *w, res.dw);
                if let Some(b) = b {
                    send(grads, *b, res.db);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let dims = self.value(*x).dims4()?;
                let [_, c, h, w] = dims;
                let hw = h * w;
                let mut dgamma = vec![0.0f64; c];
                let mut dbeta = vec![0.0f64; c];
                for (i, (&d, &xh)) in g.iter().zip(xhat).enumerate() {
                    let ci = (i / hw) % c;
                    dgamma[ci] += d as f64 * xh as f64;
                    dbeta[ci] += d as f64;
                }
                let gam = self.value(*gamma).data();
                if self.tracked(*x) {
                    let dx = if *batch_stats {
                        kernels::batchnorm_backward_input(g, xhat, gam, inv_std, dims)
                    } else {
                        g.iter()
                            .enumerate()
                            .map(|(i, &d)| {
                                let ci = (i / hw) % c;
                                d * gam[ci] * inv_std[ci]
                            })
                            .collect()
                    };
                    send(grads, *x, dx);
                }
                send(grads, *gamma, dgamma.into_iter().map(|v| v as f32).collect());
                send(grads, *beta, dbeta.into_iter().map(|v| v as f32).collect());
            }
            Op::Relu(x) => {
                let dx = g
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(&d, &v)| if v > 0.0 { d } else { 0.0 })
                    .collect();
                send(grads, *x, dx);
            }
            Op::MaxPool2 { x, argmax } => {
                let mut dx = vec![0.0f32; self.value(*x).len()];
                for (&d, &src) in g.iter().zip(argmax) {
                    dx[src] += d;
                }
                send(grads, *x, dx);
            }
            Op::Upsample2(x) => {
                let [n, c, h, w] = self.value(*x).dims4()?;
                let (ty, tx) = (kernels::upsample_taps(h), kernels::upsample_taps(w));
                let (oh, ow) = (2 * h, 2 * w);
                let mut dx = vec![0.0f32; n * c * h * w];
                for plane in 0..n * c {
                    let src = &g[plane * oh * ow..(plane + 1) * oh * ow];
                    let dst = &mut dx[plane * h * w..(plane + 1) * h * w];
                    for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
                        for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                            let d = src[oy * ow + ox];
                            dst[y0 * w + x0] += wy0 * wx0 * d;
                            dst[y0 * w + x1] += wy0 * wx1 * d;
                            dst[y1 * w + x0] += wy1 * wx0 * d;
                            dst[y1 * w + x1] += wy1 * wx1 * d;
                        }
                    }
                }
                send(grads, *x, dx);
            }
            Op::Concat(parts) => {
                let [n, total_c, h, w] = node.value.dims4()?;
                let hw = h * w;
                let mut offset = 0;
                for &p in parts {
                    let pc = self.value(p).shape()[1];
                    if self.tracked(p) {
                        let mut dp = Vec::with_capacity(n * pc * hw);
                        for ni in 0..n {
                            let base = (ni * total_c + offset) * hw;
                            dp.extend_from_slice(&g[base..base + pc * hw]);
                        }
                        send(grads, p, dp);
                    }
                    offset += pc;
                }
            }
            Op::Slice { x, start } => {
                let [n, c, h, w] = self.value(*x).dims4()?;
                let len = node.value.shape()[1];
                let hw = h * w;
                let mut dx = vec![0.0f32; n * c * hw];
                for ni in 0..n {
                    let dst = (ni * c + start) * hw;
                    dx[dst..dst + len * hw].copy_from_slice(&g[ni * len * hw..(ni + 1) * len * hw]);
                }
                send(grads, *x, dx);
            }
            Op::Add(a, b) => {
                send(grads, *a, g.to_vec());
                send(grads, *b, g.to_vec());
            }
            Op::Affine { x, scale } => {
                send(grads, *x, g.iter().map(|&d| d * scale).collect());
            }
            Op::MulConst { x, c } => {
                send(grads, *x, g.iter().zip(c).map(|(&d, &k)| d * k).collect());
            }
            Op::Clamp { x, lo, hi } => {
                let dx = g
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(&d, &v)| if v >= *lo && v <= *hi { d } else { 0.0 })
                    .collect();
                send(grads, *x, dx);
            }
            Op::MaskedL1 { pred, sign } => {
                let s = g[0];
                send(grads, *pred, sign.iter().map(|&v| v * s).collect());
            }
            Op::WeightedSum { x, weights } => {
                let s = g[0];
                send(grads, *x, weights.iter().map(|&v| v * s).collect());
            }
            Op::Mean(parts) => {
                let s = g[0] / parts.len() as f32;
                for &p in parts {
                    send(grads, p, vec![s]);
                }
            }
        }
        Ok(())
    }
}

/// Gradients produced by one reverse pass.
pub struct Gradients {
    grads: Vec<Option<Vec<f32>>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient of a tracked node, if any gradient reached it.
    pub fn get(&self, v: Var) -> Option<&[f32]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds parameter gradients into the store's `grad` buffers.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for &(id, v) in &self.params {
            if let Some(g) = self.get(v) {
                let p = store.param_mut(id);
                p.grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
        }
    }
}
