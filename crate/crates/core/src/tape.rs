//! Reverse-mode automatic differentiation on a linear tape.
//!
//! Every operation appends a node holding its output value. Node ids are
//! assigned in creation order, so the tape is topologically sorted by
//! construction and `backward` is a single reverse sweep.

use crate::error::{Error, Result};
use crate::gemm::{gemm, Layout};
use crate::tensor::{Scalar, Tensor};

/// Batch-norm epsilon.
pub const BN_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Statistics selected for a batch-norm layer.
#[derive(Clone, Copy, Debug)]
pub enum BnMode<'a> {
    /// Normalize with the statistics of the current batch.
    Train,
    /// Normalize with stored running statistics.
    Eval { mean: &'a [f32], var: &'a [f32] },
}

/// Per-channel statistics of one train-mode batch-norm call.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance, the quantity tracked by running statistics.
    pub var_unbiased: Vec<f64>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { input: Var, weight: Var, stride: usize, pad: usize, cols: Vec<f64> },
    Relu { input: Var },
    BatchNorm { input: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64>, batch_stats: bool },
    Add { a: Var, b: Var },
    Crop { input: Var, top: usize, left: usize },
    SpatialMean { input: Var },
    Linear { input: Var, weight: Var, bias: Option<Var> },
    LocalLinear { input: Var, weight: Var, bias: Option<Var> },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
    ClassSum { input: Var, class: usize },
}

#[derive(Debug)]
struct Node<T: Scalar> {
    op: Op,
    value: Tensor<T>,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

/// Records a computation for later differentiation.
#[derive(Debug)]
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    record: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), record: true }
    }

    /// A tape that keeps no backward state; `backward` on it fails.
    pub fn inference() -> Self {
        Tape { nodes: Vec::new(), record: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn needs(&self, var: Var) -> bool {
        self.record && self.nodes[var.0].requires_grad
    }

    fn push(&mut self, op: Op, value: Tensor<T>, requires_grad: bool, name: &'static str) -> Result<Var> {
        value.ensure_finite(name)?;
        self.nodes.push(Node { op, value, requires_grad: requires_grad && self.record });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A constant input (no gradient).
    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(Op::Leaf, value, false, "constant")
    }

    /// A leaf whose gradient is wanted.
    pub fn leaf(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(Op::Leaf, value, true, "leaf")
    }

    /// Cross-correlation of `[N, Cin, H, W]` with `[Cout, Cin, k, k]`, `k ∈ {1, 3}`.
    pub fn conv2d(&mut self, input: Var, weight: Var, stride: usize, pad: usize) -> Result<Var> {
        let (n, cin, h, w) = self.value(input).dims4()?;
        let (cout, wcin, k, k2) = self.value(weight).dims4()?;
        if wcin != cin {
            return Err(Error::Shape(format!("conv2d: input has {} channels, weight expects {}", cin, wcin)));
        }
        if k != k2 || !(k == 1 || k == 3) {
            return Err(Error::Shape(format!("conv2d: unsupported kernel {}x{}", k, k2)));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d: stride must be >= 1".into()));
        }
        if h + 2 * pad < k || w + 2 * pad < k {
            return Err(Error::Shape(format!("conv2d: {}x{} input (pad {}) smaller than kernel {}", h, w, pad, k)));
        }
        let geom = ConvGeom { n, cin, h, w, k, stride, pad, ho: (h + 2 * pad - k) / stride + 1, wo: (w + 2 * pad - k) / stride + 1 };
        let cols = im2col(self.value(input).data(), &geom);
        let wmat = self.value(weight).to_f64_vec();
        let (p, kk) = (geom.ho * geom.wo, cin * k * k);
        let mut out_mat = vec![0.0; cout * n * p];
        gemm(cout, kk, n * p, &wmat, Layout::row_major(kk), &cols, Layout::row_major(n * p), 0.0, &mut out_mat, Layout::row_major(n * p));
        let mut out = Vec::with_capacity(n * cout * p);
        for ni in 0..n {
            for co in 0..cout {
                let row = &out_mat[co * n * p + ni * p..co * n * p + (ni + 1) * p];
                out.extend(row.iter().map(|&v| T::from_f64(v)));
            }
        }
        let value = Tensor::new(&[n, cout, geom.ho, geom.wo], out)?;
        let rg = self.needs(input) || self.needs(weight);
        let cols = if self.record && self.needs(weight) { cols } else { Vec::new() };
        self.push(Op::Conv2d { input, weight, stride, pad, cols }, value, rg, "conv2d")
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let value = self.value(input).map(|v| if v > T::ZERO { v } else { T::ZERO });
        let rg = self.needs(input);
        self.push(Op::Relu { input }, value, rg, "relu")
    }

    /// Per-channel batch normalization of `[N, C, H, W]`.
    ///
    /// In train mode the batch statistics are returned so the caller can
    /// update its running estimates.
    pub fn batch_norm(&mut self, input: Var, gamma: Var, beta: Var, mode: BnMode<'_>) -> Result<(Var, Option<BatchStats>)> {
        let (n, c, h, w) = self.value(input).dims4()?;
        if self.value(gamma).shape() != [c] || self.value(beta).shape() != [c] {
            return Err(Error::Shape(format!("batch_norm: affine parameters must have shape [{}]", c)));
        }
        let hw = h * w;
        let m = n * hw;
        let x = self.value(input).data();
        let g = self.value(gamma).to_f64_vec();
        let b = self.value(beta).to_f64_vec();
        let (mean, var, batch_stats) = match mode {
            BnMode::Train => {
                if m < 2 {
                    return Err(Error::InvalidArgument("batch_norm: train mode needs N*H*W >= 2".into()));
                }
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ci in 0..c {
                    let mut s = 0.0;
                    for ni in 0..n {
                        let base = (ni * c + ci) * hw;
                        s += x[base..base + hw].iter().map(|v| v.to_f64()).sum::<f64>();
                    }
                    let mu = s / m as f64;
                    let mut ss = 0.0;
                    for ni in 0..n {
                        let base = (ni * c + ci) * hw;
                        ss += x[base..base + hw].iter().map(|v| (v.to_f64() - mu).powi(2)).sum::<f64>();
                    }
                    mean[ci] = mu;
                    var[ci] = ss / m as f64;
                }
                (mean, var, true)
            }
            BnMode::Eval { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(Error::Shape("batch_norm: running stats length mismatch".into()));
                }
                (mean.iter().map(|&v| v as f64).collect(), var.iter().map(|&v| v as f64).collect(), false)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let keep = self.record && (self.needs(input) || self.needs(gamma));
        let mut xhat = if keep { vec![0.0; x.len()] } else { Vec::new() };
        let mut out = vec![T::ZERO; x.len()];
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * hw;
                for idx in base..base + hw {
                    let xh = (x[idx].to_f64() - mean[ci]) * inv_std[ci];
                    out[idx] = T::from_f64(g[ci] * xh + b[ci]);
                    if keep {
                        xhat[idx] = xh;
                    }
                }
            }
        }
        let stats = batch_stats.then(|| BatchStats {
            var_unbiased: var.iter().map(|v| v * m as f64 / (m as f64 - 1.0)).collect(),
            mean,
        });
        let value = Tensor::new(&[n, c, h, w], out)?;
        let rg = self.needs(input) || self.needs(gamma) || self.needs(beta);
        let var = self.push(Op::BatchNorm { input, gamma, beta, xhat, inv_std, batch_stats }, value, rg, "batch_norm")?;
        Ok((var, stats))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::Shape(format!("add: {:?} vs {:?}", va.shape(), vb.shape())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| T::from_f64(x.to_f64() + y.to_f64())).collect();
        let value = Tensor::new(va.shape(), data)?;
        let rg = self.needs(a) || self.needs(b);
        self.push(Op::Add { a, b }, value, rg, "add")
    }

    /// Spatial crop of `[N, C, H, W]` to `h × w` at `(top, left)`.
    pub fn crop(&mut self, input: Var, top: usize, left: usize, h: usize, w: usize) -> Result<Var> {
        let value = self.value(input).crop_hw(top, left, h, w)?;
        let rg = self.needs(input);
        self.push(Op::Crop { input, top, left }, value, rg, "crop")
    }

    /// Mean over the spatial dims: `[N, C, H, W] -> [N, C]`.
    pub fn spatial_mean(&mut self, input: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(input).dims4()?;
        let hw = h * w;
        if hw == 0 {
            return Err(Error::Shape("spatial_mean: empty spatial extent".into()));
        }
        let x = self.value(input).data();
        let data = (0..n * c)
            .map(|plane| T::from_f64(x[plane * hw..(plane + 1) * hw].iter().map(|v| v.to_f64()).sum::<f64>() / hw as f64))
            .collect();
        let value = Tensor::new(&[n, c], data)?;
        let rg = self.needs(input);
        self.push(Op::SpatialMean { input }, value, rg, "spatial_mean")
    }

    /// Affine map `[N, D] -> [N, K]` with weight `[K, D]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let (n, d) = dims2(self.value(input))?;
        let (k, wd) = dims2(self.value(weight))?;
        if wd != d {
            return Err(Error::Shape(format!("linear: input dim {} vs weight dim {}", d, wd)));
        }
        let bias_vals = self.bias_values(bias, k)?;
        let x = self.value(input).to_f64_vec();
        let wm = self.value(weight).to_f64_vec();
        let mut y = vec![0.0; n * k];
        for row in y.chunks_mut(k) {
            row.copy_from_slice(&bias_vals);
        }
        gemm(n, d, k, &x, Layout::row_major(d), &wm, Layout::transposed(d), 1.0, &mut y, Layout::row_major(k));
        let value = Tensor::new(&[n, k], y.into_iter().map(T::from_f64).collect())?;
        let rg = self.needs(input) || self.needs(weight) || bias.is_some_and(|b| self.needs(b));
        self.push(Op::Linear { input, weight, bias }, value, rg, "linear")
    }

    /// The same affine map applied independently at every spatial location:
    /// `[N, D, H, W] -> [N, K, H, W]` with weight `[K, D]`.
    pub fn local_linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let (n, d, h, w) = self.value(input).dims4()?;
        let (k, wd) = dims2(self.value(weight))?;
        if wd != d {
            return Err(Error::Shape(format!("local_linear: input dim {} vs weight dim {}", d, wd)));
        }
        let p = h * w;
        let bias_vals = self.bias_values(bias, k)?;
        let x = self.value(input).to_f64_vec();
        let wm = self.value(weight).to_f64_vec();
        let mut y = vec![0.0; n * k * p];
        for ni in 0..n {
            let out = &mut y[ni * k * p..(ni + 1) * k * p];
            for (ki, row) in out.chunks_mut(p).enumerate() {
                row.fill(bias_vals[ki]);
            }
            gemm(k, d, p, &wm, Layout::row_major(d), &x[ni * d * p..(ni + 1) * d * p], Layout::row_major(p), 1.0, out, Layout::row_major(p));
        }
        let value = Tensor::new(&[n, k, h, w], y.into_iter().map(T::from_f64).collect())?;
        let rg = self.needs(input) || self.needs(weight) || bias.is_some_and(|b| self.needs(b));
        self.push(Op::LocalLinear { input, weight, bias }, value, rg, "local_linear")
    }

    /// Mean softmax cross-entropy of `[N, K]` logits against integer labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, k) = dims2(self.value(logits))?;
        if labels.len() != n {
            return Err(Error::Shape(format!("cross_entropy: {} labels for {} rows", labels.len(), n)));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::InvalidArgument(format!("label {} out of range for {} classes", bad, k)));
        }
        let x = self.value(logits).to_f64_vec();
        let mut probs = vec![0.0; n * k];
        let mut loss = 0.0;
        for (ni, &label) in labels.iter().enumerate() {
            let row = &x[ni * k..(ni + 1) * k];
            let (p, lse) = softmax_row(row);
            loss += lse - row[label];
            probs[ni * k..(ni + 1) * k].copy_from_slice(&p);
        }
        let value = Tensor::scalar(T::from_f64(loss / n as f64));
        let rg = self.needs(logits);
        let probs = if rg { probs } else { Vec::new() };
        self.push(Op::CrossEntropy { logits, labels: labels.to_vec(), probs }, value, rg, "softmax_cross_entropy")
    }

    /// Sum over the batch of one column: `[N, K] -> scalar`.
    pub fn class_sum(&mut self, input: Var, class: usize) -> Result<Var> {
        let (n, k) = dims2(self.value(input))?;
        if class >= k {
            return Err(Error::InvalidArgument(format!("class {} out of range for {} classes", class, k)));
        }
        let x = self.value(input).data();
        let s: f64 = (0..n).map(|ni| x[ni * k + class].to_f64()).sum();
        let rg = self.needs(input);
        self.push(Op::ClassSum { input, class }, Tensor::scalar(T::from_f64(s)), rg, "class_sum")
    }

    fn bias_values(&self, bias: Option<Var>, k: usize) -> Result<Vec<f64>> {
        match bias {
            Some(b) => {
                if self.value(b).shape() != [k] {
                    return Err(Error::Shape(format!("bias shape {:?}, expected [{}]", self.value(b).shape(), k)));
                }
                Ok(self.value(b).to_f64_vec())
            }
            None => Ok(vec![0.0; k]),
        }
    }

    /// Gradients of a scalar `root` with respect to every node that requires one.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let shape = self.shape(root);
        if self.value(root).len() != 1 {
            return Err(Error::NonScalarRoot(shape.to_vec()));
        }
        let seed = Tensor::full(shape, T::ONE);
        self.backward_with_seed(root, seed)
    }

    /// Vector-Jacobian product seeded with `seed` at `root`.
    pub fn backward_with_seed(&self, root: Var, seed: Tensor<T>) -> Result<Gradients<T>> {
        if !self.record {
            return Err(Error::InvalidArgument("backward on an inference tape".into()));
        }
        if seed.shape() != self.shape(root) {
            return Err(Error::Shape(format!("seed {:?} vs root {:?}", seed.shape(), self.shape(root))));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(seed);
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            g.ensure_finite("backward")?;
            self.propagate(node, &g, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { input, weight, stride, pad, cols } => {
                let (n, cin, h, w) = self.value(*input).dims4()?;
                let (cout, _, k, _) = self.value(*weight).dims4()?;
                let (_, _, ho, wo) = g.dims4()?;
                let geom = ConvGeom { n, cin, h, w, k, stride: *stride, pad: *pad, ho, wo };
                let (p, kk) = (ho * wo, cin * k * k);
                let mut gmat = vec![0.0; cout * n * p];
                let gd = g.data();
                for ni in 0..n {
                    for co in 0..cout {
                        let src = &gd[(ni * cout + co) * p..(ni * cout + co + 1) * p];
                        let dst = &mut gmat[co * n * p + ni * p..co * n * p + (ni + 1) * p];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d = s.to_f64();
                        }
                    }
                }
                if self.needs(*weight) {
                    let mut gw = vec![0.0; cout * kk];
                    gemm(cout, n * p, kk, &gmat, Layout::row_major(n * p), cols, Layout::transposed(n * p), 0.0, &mut gw, Layout::row_major(kk));
                    accumulate(grads, *weight, from_f64(self.shape(*weight), gw)?);
                }
                if self.needs(*input) {
                    let wmat = self.value(*weight).to_f64_vec();
                    let mut gcols = vec![0.0; kk * n * p];
                    gemm(kk, cout, n * p, &wmat, Layout::transposed(kk), &gmat, Layout::row_major(n * p), 0.0, &mut gcols, Layout::row_major(n * p));
                    let gx = col2im(&gcols, &geom);
                    accumulate(grads, *input, from_f64(self.shape(*input), gx)?);
                }
            }
            Op::Relu { input } => {
                let x = self.value(*input).data();
                let data = g.data().iter().zip(x).map(|(&gv, &xv)| if xv > T::ZERO { gv } else { T::ZERO }).collect();
                accumulate(grads, *input, Tensor::new(g.shape(), data)?);
            }
            Op::BatchNorm { input, gamma, beta, xhat, inv_std, batch_stats } => {
                let (n, c, h, w) = g.dims4()?;
                let hw = h * w;
                let m = (n * hw) as f64;
                let gd = g.data();
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for ni in 0..n {
                    for ci in 0..c {
                        let base = (ni * c + ci) * hw;
                        for idx in base..base + hw {
                            let gv = gd[idx].to_f64();
                            sum_g[ci] += gv;
                            sum_gx[ci] += gv * xhat[idx];
                        }
                    }
                }
                if self.needs(*gamma) {
                    accumulate(grads, *gamma, from_f64(&[c], sum_gx.clone())?);
                }
                if self.needs(*beta) {
                    accumulate(grads, *beta, from_f64(&[c], sum_g.clone())?);
                }
                if self.needs(*input) {
                    let gam = self.value(*gamma).to_f64_vec();
                    let mut gx = vec![0.0; gd.len()];
                    for ni in 0..n {
                        for ci in 0..c {
                            let base = (ni * c + ci) * hw;
                            let scale = gam[ci] * inv_std[ci];
                            for idx in base..base + hw {
                                let gv = gd[idx].to_f64();
                                gx[idx] = if *batch_stats {
                                    scale * (gv - sum_g[ci] / m - xhat[idx] * sum_gx[ci] / m)
                                } else {
                                    scale * gv
                                };
                            }
                        }
                    }
                    accumulate(grads, *input, from_f64(g.shape(), gx)?);
                }
            }
            Op::Add { a, b } => {
                if self.needs(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.needs(*b) {
                    accumulate(grads, *b, g.clone());
                }
            }
            Op::Crop { input, top, left } => {
                let (n, c, h, w) = self.value(*input).dims4()?;
                let (_, _, ch, cw) = g.dims4()?;
                let mut gx = Tensor::<T>::zeros(&[n, c, h, w]);
                let gxd = gx.data_mut();
                for plane in 0..n * c {
                    for y in 0..ch {
                        let src = plane * ch * cw + y * cw;
                        let dst = plane * h * w + (y + top) * w + left;
                        gxd[dst..dst + cw].copy_from_slice(&g.data()[src..src + cw]);
                    }
                }
                accumulate(grads, *input, gx);
            }
            Op::SpatialMean { input } => {
                let (n, c, h, w) = self.value(*input).dims4()?;
                let hw = h * w;
                let mut data = Vec::with_capacity(n * c * hw);
                for &gv in g.data() {
                    let v = T::from_f64(gv.to_f64() / hw as f64);
                    data.extend(std::iter::repeat_n(v, hw));
                }
                accumulate(grads, *input, Tensor::new(&[n, c, h, w], data)?);
            }
            Op::Linear { input, weight, bias } => {
                let (n, d) = dims2(self.value(*input))?;
                let k = g.shape()[1];
                let gm = g.to_f64_vec();
                if self.needs(*weight) {
                    let x = self.value(*input).to_f64_vec();
                    let mut gw = vec![0.0; k * d];
                    gemm(k, n, d, &gm, Layout::transposed(k), &x, Layout::row_major(d), 0.0, &mut gw, Layout::row_major(d));
                    accumulate(grads, *weight, from_f64(&[k, d], gw)?);
                }
                if let Some(b) = bias.filter(|b| self.needs(*b)) {
                    let gb = (0..k).map(|ki| (0..n).map(|ni| gm[ni * k + ki]).sum()).collect();
                    accumulate(grads, b, from_f64(&[k], gb)?);
                }
                if self.needs(*input) {
                    let wm = self.value(*weight).to_f64_vec();
                    let mut gx = vec![0.0; n * d];
                    gemm(n, k, d, &gm, Layout::row_major(k), &wm, Layout::row_major(d), 0.0, &mut gx, Layout::row_major(d));
                    accumulate(grads, *input, from_f64(&[n, d], gx)?);
                }
            }
            Op::LocalLinear { input, weight, bias } => {
                let (n, d, h, w) = self.value(*input).dims4()?;
                let k = g.shape()[1];
                let p = h * w;
                let gm = g.to_f64_vec();
                if self.needs(*weight) {
                    let x = self.value(*input).to_f64_vec();
                    let mut gw = vec![0.0; k * d];
                    for ni in 0..n {
                        gemm(
                            k,
                            p,
                            d,
                            &gm[ni * k * p..(ni + 1) * k * p],
                            Layout::row_major(p),
                            &x[ni * d * p..(ni + 1) * d * p],
                            Layout::transposed(p),
                            1.0,
                            &mut gw,
                            Layout::row_major(d),
                        );
                    }
                    accumulate(grads, *weight, from_f64(&[k, d], gw)?);
                }
                if let Some(b) = bias.filter(|b| self.needs(*b)) {
                    let mut gb = vec![0.0; k];
                    for ni in 0..n {
                        for (ki, acc) in gb.iter_mut().enumerate() {
                            *acc += gm[(ni * k + ki) * p..(ni * k + ki + 1) * p].iter().sum::<f64>();
                        }
                    }
                    accumulate(grads, b, from_f64(&[k], gb)?);
                }
                if self.needs(*input) {
                    let wm = self.value(*weight).to_f64_vec();
                    let mut gx = vec![0.0; n * d * p];
                    for ni in 0..n {
                        gemm(
                            d,
                            k,
                            p,
                            &wm,
                            Layout::transposed(d),
                            &gm[ni * k * p..(ni + 1) * k * p],
                            Layout::row_major(p),
                            0.0,
                            &mut gx[ni * d * p..(ni + 1) * d * p],
                            Layout::row_major(p),
                        );
                    }
                    accumulate(grads, *input, from_f64(&[n, d, h, w], gx)?);
                }
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let (n, k) = dims2(self.value(*logits))?;
                let scale = g.item().to_f64() / n as f64;
                let mut gx = probs.clone();
                for (ni, &label) in labels.iter().enumerate() {
                    gx[ni * k + label] -= 1.0;
                }
                gx.iter_mut().for_each(|v| *v *= scale);
                accumulate(grads, *logits, from_f64(&[n, k], gx)?);
            }
            Op::ClassSum { input, class } => {
                let (n, k) = dims2(self.value(*input))?;
                let mut gx = Tensor::<T>::zeros(&[n, k]);
                let gv = g.item();
                for ni in 0..n {
                    gx.data_mut()[ni * k + class] = gv;
                }
                accumulate(grads, *input, gx);
            }
        }
        Ok(())
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], var: Var, g: Tensor<T>) {
    match &mut grads[var.0] {
        Some(existing) => {
            for (e, v) in existing.data_mut().iter_mut().zip(g.data()) {
                *e = T::from_f64(e.to_f64() + v.to_f64());
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn from_f64<T: Scalar>(shape: &[usize], data: Vec<f64>) -> Result<Tensor<T>> {
    Tensor::new(shape, data.into_iter().map(T::from_f64).collect())
}

fn dims2<T: Scalar>(t: &Tensor<T>) -> Result<(usize, usize)> {
    match t.shape() {
        &[a, b] => Ok((a, b)),
        s => Err(Error::Shape(format!("expected rank-2 tensor, got {:?}", s))),
    }
}

/// Numerically stable softmax of one row; also returns log-sum-exp.
pub fn softmax_row(row: &[f64]) -> (Vec<f64>, f64) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    (exps.iter().map(|e| e / sum).collect(), max + sum.ln())
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

/// Unfold `[N, C, H, W]` into a `[C·k·k, N·Ho·Wo]` matrix.
fn im2col<T: Scalar>(x: &[T], g: &ConvGeom) -> Vec<f64> {
    let p = g.ho * g.wo;
    let ncols = g.n * p;
    let mut cols = vec![0.0; g.cin * g.k * g.k * ncols];
    for ci in 0..g.cin {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let r = (ci * g.k + ky) * g.k + kx;
                let row = &mut cols[r * ncols..(r + 1) * ncols];
                for ni in 0..g.n {
                    let plane = &x[(ni * g.cin + ci) * g.h * g.w..(ni * g.cin + ci + 1) * g.h * g.w];
                    for oy in 0..g.ho {
                        let Some(iy) = (oy * g.stride + ky).checked_sub(g.pad).filter(|&v| v < g.h) else { continue };
                        let dst = &mut row[ni * p + oy * g.wo..ni * p + (oy + 1) * g.wo];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            if let Some(ix) = (ox * g.stride + kx).checked_sub(g.pad).filter(|&v| v < g.w) {
                                *d = plane[iy * g.w + ix].to_f64();
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add columns back into `[N, C, H, W]`.
fn col2im(cols: &[f64], g: &ConvGeom) -> Vec<f64> {
    let p = g.ho * g.wo;
    let ncols = g.n * p;
    let mut x = vec![0.0; g.n * g.cin * g.h * g.w];
    for ci in 0..g.cin {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let r = (ci * g.k + ky) * g.k + kx;
                let row = &cols[r * ncols..(r + 1) * ncols];
                for ni in 0..g.n {
                    let plane = &mut x[(ni * g.cin + ci) * g.h * g.w..(ni * g.cin + ci + 1) * g.h * g.w];
                    for oy in 0..g.ho {
                        let Some(iy) = (oy * g.stride + ky).checked_sub(g.pad).filter(|&v| v < g.h) else { continue };
                        for ox in 0..g.wo {
                            if let Some(ix) = (ox * g.stride + kx).checked_sub(g.pad).filter(|&v| v < g.w) {
                                plane[iy * g.w + ix] += row[ni * p + oy * g.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f32]) -> Tensor<f32> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn one_by_one_conv_scales_pixels() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::full(&[1, 1, 3, 3], 1.0)).unwrap();
        let w = tape.constant(t(&[1, 1, 1, 1], &[2.0])).unwrap();
        let y = tape.conv2d(x, w, 1, 0).unwrap();
        assert_eq!(tape.value(y), &Tensor::full(&[1, 1, 3, 3], 2.0));
    }

    #[test]
    fn impulse_response_reproduces_kernel_flipped() {
        let mut impulse = Tensor::<f32>::zeros(&[1, 1, 3, 3]);
        impulse.data_mut()[4] = 1.0;
        let kernel: Vec<f32> = (1..=9).map(|v| v as f32).collect();
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(impulse).unwrap();
        let w = tape.constant(t(&[1, 1, 3, 3], &kernel)).unwrap();
        let y = tape.conv2d(x, w, 1, 1).unwrap();
        let flipped: Vec<f32> = kernel.iter().rev().copied().collect();
        assert_eq!(tape.value(y).data(), &flipped[..]);
    }

    #[test]
    fn conv_rejects_channel_mismatch_and_big_kernels() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(&[1, 2, 4, 4])).unwrap();
        let w = tape.constant(Tensor::zeros(&[1, 3, 3, 3])).unwrap();
        assert!(matches!(tape.conv2d(x, w, 1, 0), Err(Error::Shape(_))));
        let w5 = tape.constant(Tensor::zeros(&[1, 2, 5, 5])).unwrap();
        assert!(tape.conv2d(x, w5, 1, 0).is_err());
    }

    #[test]
    fn relu_forward_and_gradient() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(t(&[3], &[-1.0, 0.0, 2.0])).unwrap();
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);

        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::full(&[1, 1, 2, 2], -3.0)).unwrap();
        let y = tape.relu(x).unwrap();
        let s = tape.spatial_mean(y).unwrap();
        let l = tape.class_sum(s, 0).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0; 4]);
        assert_eq!(g.get(x).unwrap().data(), &[0.0; 4]);
    }

    #[test]
    fn residual_add_identities() {
        let a = t(&[2, 2], &[1.0, -2.0, 3.5, 0.25]);
        let mut tape = Tape::<f32>::new();
        let va = tape.constant(a.clone()).unwrap();
        let z = tape.constant(Tensor::zeros(&[2, 2])).unwrap();
        let neg = tape.constant(a.map(|v| -v)).unwrap();
        let s = tape.add(va, z).unwrap();
        assert_eq!(tape.value(s), &a);
        let d = tape.add(va, neg).unwrap();
        assert_eq!(tape.value(d), &Tensor::zeros(&[2, 2]));
        let bad = tape.constant(Tensor::zeros(&[4])).unwrap();
        assert!(matches!(tape.add(va, bad), Err(Error::Shape(_))));
    }

    #[test]
    fn spatial_mean_constant_and_single_pixel() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::full(&[2, 3, 4, 5], 1.5)).unwrap();
        let m = tape.spatial_mean(x).unwrap();
        assert_eq!(tape.value(m), &Tensor::full(&[2, 3], 1.5));
        let single = t(&[1, 2, 1, 1], &[0.3, -7.0]);
        let x = tape.constant(single).unwrap();
        let m = tape.spatial_mean(x).unwrap();
        assert_eq!(tape.value(m).data(), &[0.3, -7.0]);
    }

    #[test]
    fn linear_identity_and_zero_weight() {
        let x = t(&[2, 3], &[1.0, 2.0, 3.0, -1.0, 0.5, 4.0]);
        let eye = Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        let mut tape = Tape::<f32>::new();
        let vx = tape.constant(x.clone()).unwrap();
        let vw = tape.constant(eye).unwrap();
        let vb = tape.constant(Tensor::zeros(&[3])).unwrap();
        let y = tape.linear(vx, vw, Some(vb)).unwrap();
        assert_eq!(tape.value(y), &x);

        let zw = tape.constant(Tensor::zeros(&[2, 3])).unwrap();
        let b = tape.constant(t(&[2], &[0.5, -1.0])).unwrap();
        let y = tape.linear(vx, zw, Some(b)).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, -1.0, 0.5, -1.0]);

        let wrong = tape.constant(Tensor::zeros(&[2, 4])).unwrap();
        assert!(matches!(tape.linear(vx, wrong, None), Err(Error::Shape(_))));
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_log_k() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(&[3, 10])).unwrap();
        let l = tape.softmax_cross_entropy(x, &[0, 4, 9]).unwrap();
        assert!((tape.value(l).item() as f64 - 10f64.ln()).abs() < 1e-6);
        let x = tape.constant(t(&[1, 3], &[0.0, 200.0, 0.0])).unwrap();
        let l = tape.softmax_cross_entropy(x, &[1]).unwrap();
        assert!(tape.value(l).item().abs() < 1e-12);
        assert!(tape.softmax_cross_entropy(x, &[3]).is_err());
    }

    #[test]
    fn batch_norm_constant_channel_maps_to_beta() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::full(&[4, 2, 3, 3], 7.0)).unwrap();
        let g = tape.constant(t(&[2], &[1.0, 2.0])).unwrap();
        let b = tape.constant(t(&[2], &[0.5, -0.5])).unwrap();
        let (y, stats) = tape.batch_norm(x, g, b, BnMode::Train).unwrap();
        let v = tape.value(y);
        for (i, &o) in v.data().iter().enumerate() {
            let want = if (i / 9) % 2 == 0 { 0.5 } else { -0.5 };
            assert!((o - want).abs() < 1e-6);
        }
        assert_eq!(stats.unwrap().mean, vec![7.0, 7.0]);
    }

    #[test]
    fn batch_norm_eval_with_init_stats_is_affine_identity() {
        let data: Vec<f32> = (0..8).map(|v| v as f32 - 3.0).collect();
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(t(&[1, 2, 2, 2], &data)).unwrap();
        let g = tape.constant(Tensor::full(&[2], 1.0)).unwrap();
        let b = tape.constant(Tensor::zeros(&[2])).unwrap();
        let (y, stats) = tape.batch_norm(x, g, b, BnMode::Eval { mean: &[0.0, 0.0], var: &[1.0, 1.0] }).unwrap();
        assert!(stats.is_none());
        assert!(tape.value(y).max_abs_diff(tape.value(x)) < 1e-4);
    }

    #[test]
    fn batch_norm_train_rejects_single_value() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(&[1, 1, 1, 1])).unwrap();
        let g = tape.constant(Tensor::full(&[1], 1.0)).unwrap();
        let b = tape.constant(Tensor::zeros(&[1])).unwrap();
        assert!(tape.batch_norm(x, g, b, BnMode::Train).is_err());
    }

    #[test]
    fn backward_needs_scalar_root() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::zeros(&[2, 2])).unwrap();
        let y = tape.relu(x).unwrap();
        assert!(matches!(tape.backward(y), Err(Error::NonScalarRoot(_))));
    }

    #[test]
    fn inference_tape_refuses_backward() {
        let mut tape = Tape::<f32>::inference();
        let x = tape.leaf(Tensor::scalar(1.0)).unwrap();
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn non_finite_outputs_are_errors() {
        let mut tape = Tape::<f32>::new();
        assert!(matches!(tape.leaf(Tensor::scalar(f32::INFINITY)), Err(Error::NonFinite { .. })));
    }
}
