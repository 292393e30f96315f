//! Tape of operations and the reverse sweep.
//!
//! Every op validates shapes when it is recorded and computes its forward
//! value immediately; [`Graph::backward`] then walks the tape in reverse.

use crate::error::{shape_err, NnError, Result};
use crate::kernels::{col2im, im2col, index_table, matmul};
use crate::{Scalar, Tensor};

/// Border handling for same-size convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Zero,
    Reflect,
}

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        padding: Padding,
        cols: Vec<T>,
    },
    Relu(Var),
    AvgPool2(Var),
    Upsample2(Var),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    GlobalAvgPool(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    ChannelMean(Var),
    ChannelStd(Var),
    AffineNormalize {
        x: Var,
        mean: Var,
        std: Var,
        scale: Var,
        shift: Var,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Square(Var),
    Sum(Var),
    L2Norm(Var),
    RowL2Norm(Var),
    MeanSquaredError(Var, Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// A single-use computation graph. Build it, call [`Graph::backward`] once on
/// a scalar, then read gradients with [`Graph::grad`].
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

fn dims4(shape: &[usize], what: &str) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => shape_err(format!("{what}: expected a 4-D tensor, got {shape:?}")),
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<T> {
        &self.nodes[v.0]
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records an input. Only leaves with `requires_grad` collect gradients.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.node(v).value.shape()
    }

    /// Gradient accumulated on `v` by the last [`Graph::backward`] call.
    /// Only leaves keep their gradients after the sweep.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Same-size, stride-1 cross-correlation with an odd square kernel.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, padding: Padding) -> Result<Var> {
        let (n, cin, h, wd) = dims4(self.shape(x), "conv2d input")?;
        let (cout, wcin, kh, kw) = dims4(self.shape(w), "conv2d weight")?;
        if wcin != cin {
            return shape_err(format!(
                "conv2d: input has {cin} channels, weight expects {wcin}"
            ));
        }
        if kh != kw || kh % 2 == 0 {
            return shape_err(format!("conv2d: kernel must be odd and square, got {kh}x{kw}"));
        }
        if self.shape(b) != [cout] {
            return shape_err(format!(
                "conv2d: bias shape {:?}, expected [{cout}]",
                self.shape(b)
            ));
        }
        if padding == Padding::Reflect && (kh / 2 >= h || kh / 2 >= wd) {
            return shape_err(format!(
                "conv2d: reflect padding of {} needs extents > pad, got {h}x{wd}",
                kh / 2
            ));
        }
        let k = kh;
        let hw = h * wd;
        let kk = cin * k * k;
        let ty = index_table(h, k, padding);
        let tx = index_table(wd, k, padding);
        let mut cols = vec![T::zero(); n * kk * hw];
        let mut out = vec![T::zero(); n * cout * hw];
        {
            let xin = self.value(x).data();
            let wt = self.value(w).data();
            let bias = self.value(b).data();
            for s in 0..n {
                let c = &mut cols[s * kk * hw..(s + 1) * kk * hw];
                im2col(&xin[s * cin * hw..(s + 1) * cin * hw], cin, h, wd, k, &ty, &tx, c);
                let o = &mut out[s * cout * hw..(s + 1) * cout * hw];
                for (co, plane) in o.chunks_mut(hw).enumerate() {
                    plane.iter_mut().for_each(|v| *v = bias[co]);
                }
                matmul(false, false, cout, kk, hw, wt, c, T::one(), o);
            }
        }
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        let value = Tensor::from_vec(vec![n, cout, h, wd], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                x,
                w,
                b,
                padding,
                cols,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let data = v.data().iter().map(|&a| a.max(T::zero())).collect();
        let value = Tensor::from_vec(v.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(value, Op::Relu(x), rg)
    }

    /// 2×2 average pooling with stride 2.
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = dims4(self.shape(x), "avg_pool2")?;
        if h % 2 != 0 || w % 2 != 0 {
            return shape_err(format!("avg_pool2 needs even extents, got {h}x{w}"));
        }
        let (oh, ow) = (h / 2, w / 2);
        let src = self.value(x).data();
        let quarter = T::lit(0.25);
        let mut out = vec![T::zero(); n * c * oh * ow];
        for p in 0..n * c {
            let s = &src[p * h * w..(p + 1) * h * w];
            let o = &mut out[p * oh * ow..(p + 1) * oh * ow];
            for y in 0..oh {
                let r0 = &s[2 * y * w..(2 * y + 1) * w];
                let r1 = &s[(2 * y + 1) * w..(2 * y + 2) * w];
                for xo in 0..ow {
                    o[y * ow + xo] =
                        (r0[2 * xo] + r0[2 * xo + 1] + r1[2 * xo] + r1[2 * xo + 1]) * quarter;
                }
            }
        }
        let value = Tensor::from_vec(vec![n, c, oh, ow], out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::AvgPool2(x), rg))
    }

    /// Nearest-neighbour 2× upsampling.
    pub fn upsample_nearest2(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = dims4(self.shape(x), "upsample_nearest2")?;
        let (oh, ow) = (2 * h, 2 * w);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); n * c * oh * ow];
        for p in 0..n * c {
            let s = &src[p * h * w..(p + 1) * h * w];
            let o = &mut out[p * oh * ow..(p + 1) * oh * ow];
            for y in 0..oh {
                for xo in 0..ow {
                    o[y * ow + xo] = s[(y / 2) * w + xo / 2];
                }
            }
        }
        let value = Tensor::from_vec(vec![n, c, oh, ow], out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Upsample2(x), rg))
    }

    /// `x [N, in] · wᵀ [in, out] + b [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (n, fin) = match *self.shape(x) {
            [n, f] => (n, f),
            ref s => return shape_err(format!("linear input must be 2-D, got {s:?}")),
        };
        let (fout, wfin) = match *self.shape(w) {
            [o, i] => (o, i),
            ref s => return shape_err(format!("linear weight must be 2-D, got {s:?}")),
        };
        if wfin != fin || self.shape(b) != [fout] {
            return shape_err(format!(
                "linear: input {:?}, weight {:?}, bias {:?}",
                self.shape(x),
                self.shape(w),
                self.shape(b)
            ));
        }
        let mut out = vec![T::zero(); n * fout];
        {
            let bias = self.value(b).data();
            for row in out.chunks_mut(fout) {
                row.copy_from_slice(bias);
            }
            matmul(
                false,
                true,
                n,
                fin,
                fout,
                self.value(x).data(),
                self.value(w).data(),
                T::one(),
                &mut out,
            );
        }
        let value = Tensor::from_vec(vec![n, fout], out)?;
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(value, Op::Linear { x, w, b }, rg))
    }

    /// Spatial mean: `[N, C, H, W] -> [N, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = dims4(self.shape(x), "global_avg_pool")?;
        let hw = h * w;
        let inv = T::one() / T::lit(hw as f64);
        let data = self
            .value(x)
            .data()
            .chunks(hw)
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        let value = Tensor::from_vec(vec![n, c], data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::GlobalAvgPool(x), rg))
    }

    /// Mean softmax cross-entropy over the batch; `labels[i]` indexes the
    /// class column of row `i`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, k) = match *self.shape(logits) {
            [n, k] => (n, k),
            ref s => return shape_err(format!("cross-entropy logits must be 2-D, got {s:?}")),
        };
        if labels.len() != n {
            return shape_err(format!("{} labels for {n} rows", labels.len()));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= k) {
            return shape_err(format!("label {bad} out of range for {k} classes"));
        }
        let probs = softmax_rows(self.value(logits).data(), k);
        let mut loss = T::zero();
        for (row, &l) in probs.chunks(k).zip(labels) {
            loss -= row[l].max(T::min_positive_value()).ln();
        }
        loss /= T::lit(n as f64);
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Per-sample, per-channel spatial mean: `[N, C, H, W] -> [N, C]`.
    pub fn channel_mean(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = dims4(self.shape(x), "channel_mean")?;
        if h * w == 0 {
            return shape_err("channel_mean over an empty plane");
        }
        let inv = T::one() / T::lit((h * w) as f64);
        let data = self
            .value(x)
            .data()
            .chunks(h * w)
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        let value = Tensor::from_vec(vec![n, c], data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::ChannelMean(x), rg))
    }

    /// Per-sample, per-channel `sqrt(population variance + eps)`.
    pub fn channel_std(&mut self, x: Var, eps: T) -> Result<Var> {
        let (n, c, h, w) = dims4(self.shape(x), "channel_std")?;
        if h * w == 0 {
            return shape_err("channel_std over an empty plane");
        }
        let inv = T::one() / T::lit((h * w) as f64);
        let data = self
            .value(x)
            .data()
            .chunks(h * w)
            .map(|p| {
                let mu = p.iter().copied().sum::<T>() * inv;
                let var = p.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() * inv;
                (var + eps).sqrt()
            })
            .collect();
        let value = Tensor::from_vec(vec![n, c], data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::ChannelStd(x), rg))
    }

    /// `scale · (x − mean) / std + shift`, with the four statistics given per
    /// sample and channel as `[N, C]` tensors.
    pub fn affine_normalize(
        &mut self,
        x: Var,
        mean: Var,
        std: Var,
        scale: Var,
        shift: Var,
    ) -> Result<Var> {
        let (n, c, h, w) = dims4(self.shape(x), "affine_normalize")?;
        for (name, v) in [("mean", mean), ("std", std), ("scale", scale), ("shift", shift)] {
            if self.shape(v) != [n, c] {
                return shape_err(format!(
                    "affine_normalize: {name} has shape {:?}, expected [{n}, {c}]",
                    self.shape(v)
                ));
            }
        }
        let hw = h * w;
        let mut out = vec![T::zero(); n * c * hw];
        {
            let xs = self.value(x).data();
            let (mu, sd, sc, sh) = (
                self.value(mean).data(),
                self.value(std).data(),
                self.value(scale).data(),
                self.value(shift).data(),
            );
            for p in 0..n * c {
                let gain = sc[p] / sd[p];
                for (o, &v) in out[p * hw..(p + 1) * hw].iter_mut().zip(&xs[p * hw..]) {
                    *o = gain * (v - mu[p]) + sh[p];
                }
            }
        }
        let value = Tensor::from_vec(vec![n, c, h, w], out)?;
        let rg = [x, mean, std, scale, shift].iter().any(|&v| self.rg(v));
        Ok(self.push(
            value,
            Op::AffineNormalize {
                x,
                mean,
                std,
                scale,
                shift,
            },
            rg,
        ))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return shape_err(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            ));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::from_vec(va.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let value = self.zip_with(a, b, |p, q| p + q);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let value = self.zip_with(a, b, |p, q| p - q);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let value = self.zip_with(a, b, |p, q| p * q);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let v = self.value(a);
        let data = v.data().iter().map(|&p| p * factor).collect();
        let value = Tensor::from_vec(v.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, factor), rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let data = v.data().iter().map(|&p| p * p).collect();
        let value = Tensor::from_vec(v.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(a);
        self.push(value, Op::Square(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Euclidean norm over every element.
    pub fn l2_norm(&mut self, a: Var) -> Var {
        let s = self
            .value(a)
            .data()
            .iter()
            .map(|&p| p * p)
            .sum::<T>()
            .sqrt();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::L2Norm(a), rg)
    }

    /// Euclidean norm of each row: `[N, K] -> [N]`.
    pub fn row_l2_norm(&mut self, a: Var) -> Result<Var> {
        let k = match *self.shape(a) {
            [_, k] => k,
            ref s => return shape_err(format!("row_l2_norm needs a 2-D tensor, got {s:?}")),
        };
        let data: Vec<T> = self
            .value(a)
            .data()
            .chunks(k.max(1))
            .map(|r| r.iter().map(|&p| p * p).sum::<T>().sqrt())
            .collect();
        let value = Tensor::from_vec(vec![self.shape(a)[0]], data)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::RowL2Norm(a), rg))
    }

    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mse")?;
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let n = T::lit(va.len().max(1) as f64);
        let s = va
            .iter()
            .zip(vb)
            .map(|(&p, &q)| (p - q) * (p - q))
            .sum::<T>()
            / n;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::scalar(s), Op::MeanSquaredError(a, b), rg))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(NnError::Precondition(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            if matches!(self.nodes[i].op, Op::Leaf) {
                self.grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, delta: Vec<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += *d),
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&mut self, i: usize, g: &[T]) {
        let mut updates: Vec<(Var, Vec<T>)> = Vec::new();
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                x,
                w,
                b,
                padding,
                cols,
            } => {
                let (n, cin, h, wd) = dims4(self.shape(*x), "").expect("checked");
                let (cout, _, k, _) = dims4(self.shape(*w), "").expect("checked");
                let hw = h * wd;
                let kk = cin * k * k;
                if self.rg(*b) {
                    let mut db = vec![T::zero(); cout];
                    for s in 0..n {
                        for (co, d) in db.iter_mut().enumerate() {
                            let off = (s * cout + co) * hw;
                            *d += g[off..off + hw].iter().copied().sum::<T>();
                        }
                    }
                    updates.push((*b, db));
                }
                if self.rg(*w) {
                    let mut dw = vec![T::zero(); cout * kk];
                    for s in 0..n {
                        matmul(
                            false,
                            true,
                            cout,
                            hw,
                            kk,
                            &g[s * cout * hw..],
                            &cols[s * kk * hw..],
                            T::one(),
                            &mut dw,
                        );
                    }
                    updates.push((*w, dw));
                }
                if self.rg(*x) {
                    let ty = index_table(h, k, *padding);
                    let tx = index_table(wd, k, *padding);
                    let wt = self.value(*w).data();
                    let mut dx = vec![T::zero(); n * cin * hw];
                    let mut dcols = vec![T::zero(); kk * hw];
                    for s in 0..n {
                        matmul(
                            true,
                            false,
                            kk,
                            cout,
                            hw,
                            wt,
                            &g[s * cout * hw..],
                            T::zero(),
                            &mut dcols,
                        );
                        col2im(
                            &dcols,
                            cin,
                            h,
                            wd,
                            k,
                            &ty,
                            &tx,
                            &mut dx[s * cin * hw..(s + 1) * cin * hw],
                        );
                    }
                    updates.push((*x, dx));
                }
            }
            Op::Relu(x) => {
                let dx = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v > T::zero() { gv } else { T::zero() })
                    .collect();
                updates.push((*x, dx));
            }
            Op::AvgPool2(x) => {
                let (n, c, h, w) = dims4(self.shape(*x), "").expect("checked");
                let (oh, ow) = (h / 2, w / 2);
                let quarter = T::lit(0.25);
                let mut dx = vec![T::zero(); n * c * h * w];
                for p in 0..n * c {
                    let gp = &g[p * oh * ow..(p + 1) * oh * ow];
                    let d = &mut dx[p * h * w..(p + 1) * h * w];
                    for y in 0..h {
                        for xx in 0..w {
                            d[y * w + xx] = gp[(y / 2) * ow + xx / 2] * quarter;
                        }
                    }
                }
                updates.push((*x, dx));
            }
            Op::Upsample2(x) => {
                let (n, c, h, w) = dims4(self.shape(*x), "").expect("checked");
                let (oh, ow) = (2 * h, 2 * w);
                let mut dx = vec![T::zero(); n * c * h * w];
                for p in 0..n * c {
                    let gp = &g[p * oh * ow..(p + 1) * oh * ow];
                    let d = &mut dx[p * h * w..(p + 1) * h * w];
                    for y in 0..oh {
                        for xx in 0..ow {
                            d[(y / 2) * w + xx / 2] += gp[y * ow + xx];
                        }
                    }
                }
                updates.push((*x, dx));
            }
            Op::Linear { x, w, b } => {
                let (n, fin) = (self.shape(*x)[0], self.shape(*x)[1]);
                let fout = self.shape(*w)[0];
                if self.rg(*b) {
                    let mut db = vec![T::zero(); fout];
                    for row in g.chunks(fout) {
                        db.iter_mut().zip(row).for_each(|(d, &r)| *d += r);
                    }
                    updates.push((*b, db));
                }
                if self.rg(*w) {
                    let mut dw = vec![T::zero(); fout * fin];
                    matmul(true, false, fout, n, fin, g, self.value(*x).data(), T::zero(), &mut dw);
                    updates.push((*w, dw));
                }
                if self.rg(*x) {
                    let mut dx = vec![T::zero(); n * fin];
                    matmul(false, false, n, fout, fin, g, self.value(*w).data(), T::zero(), &mut dx);
                    updates.push((*x, dx));
                }
            }
            Op::GlobalAvgPool(x) => {
                let (_, _, h, w) = dims4(self.shape(*x), "").expect("checked");
                let hw = h * w;
                let inv = T::one() / T::lit(hw as f64);
                let mut dx = Vec::with_capacity(g.len() * hw);
                for &gv in g {
                    dx.extend(std::iter::repeat_n(gv * inv, hw));
                }
                updates.push((*x, dx));
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let k = self.shape(*logits)[1];
                let n = labels.len();
                let scale = g[0] / T::lit(n as f64);
                let mut dx = probs.clone();
                for (row, &l) in dx.chunks_mut(k).zip(labels) {
                    row[l] -= T::one();
                    row.iter_mut().for_each(|v| *v *= scale);
                }
                updates.push((*logits, dx));
            }
            Op::ChannelMean(x) => {
                let (_, _, h, w) = dims4(self.shape(*x), "").expect("checked");
                let hw = h * w;
                let inv = T::one() / T::lit(hw as f64);
                let mut dx = Vec::with_capacity(g.len() * hw);
                for &gv in g {
                    dx.extend(std::iter::repeat_n(gv * inv, hw));
                }
                updates.push((*x, dx));
            }
            Op::ChannelStd(x) => {
                let (_, _, h, w) = dims4(self.shape(*x), "").expect("checked");
                let hw = h * w;
                let inv = T::one() / T::lit(hw as f64);
                let sd = node.value.data();
                let xs = self.value(*x).data();
                let mut dx = vec![T::zero(); xs.len()];
                for p in 0..g.len() {
                    let plane = &xs[p * hw..(p + 1) * hw];
                    if sd[p] <= T::zero() {
                        continue;
                    }
                    let mu = plane.iter().copied().sum::<T>() * inv;
                    let coef = g[p] * inv / sd[p];
                    for (d, &v) in dx[p * hw..(p + 1) * hw].iter_mut().zip(plane) {
                        *d = coef * (v - mu);
                    }
                }
                updates.push((*x, dx));
            }
            Op::AffineNormalize {
                x,
                mean,
                std,
                scale,
                shift,
            } => {
                let (n, c, h, w) = dims4(self.shape(*x), "").expect("checked");
                let hw = h * w;
                let xs = self.value(*x).data();
                let mu = self.value(*mean).data();
                let sd = self.value(*std).data();
                let sc = self.value(*scale).data();
                let mut dx = vec![T::zero(); xs.len()];
                let mut dmean = vec![T::zero(); n * c];
                let mut dstd = vec![T::zero(); n * c];
                let mut dscale = vec![T::zero(); n * c];
                let mut dshift = vec![T::zero(); n * c];
                for p in 0..n * c {
                    let gain = sc[p] / sd[p];
                    let (mut sg, mut sgc) = (T::zero(), T::zero());
                    for ((d, &v), &gv) in dx[p * hw..(p + 1) * hw]
                        .iter_mut()
                        .zip(&xs[p * hw..(p + 1) * hw])
                        .zip(&g[p * hw..(p + 1) * hw])
                    {
                        *d = gv * gain;
                        sg += gv;
                        sgc += gv * (v - mu[p]);
                    }
                    dmean[p] = -gain * sg;
                    dstd[p] = -gain * sgc / sd[p];
                    dscale[p] = sgc / sd[p];
                    dshift[p] = sg;
                }
                updates.push((*x, dx));
                updates.push((*mean, dmean));
                updates.push((*std, dstd));
                updates.push((*scale, dscale));
                updates.push((*shift, dshift));
            }
            Op::Add(a, b) => {
                updates.push((*a, g.to_vec()));
                updates.push((*b, g.to_vec()));
            }
            Op::Sub(a, b) => {
                updates.push((*a, g.to_vec()));
                updates.push((*b, g.iter().map(|&v| -v).collect()));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                updates.push((*a, g.iter().zip(vb).map(|(&d, &q)| d * q).collect()));
                updates.push((*b, g.iter().zip(va).map(|(&d, &p)| d * p).collect()));
            }
            Op::Scale(a, f) => {
                updates.push((*a, g.iter().map(|&v| v * *f).collect()));
            }
            Op::Square(a) => {
                let two = T::lit(2.0);
                let dx = self
                    .value(*a)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| two * v * gv)
                    .collect();
                updates.push((*a, dx));
            }
            Op::Sum(a) => {
                updates.push((*a, vec![g[0]; self.value(*a).numel()]));
            }
            Op::L2Norm(a) => {
                let norm = node.value.data()[0];
                let dx = if norm > T::zero() {
                    self.value(*a).data().iter().map(|&v| g[0] * v / norm).collect()
                } else {
                    vec![T::zero(); self.value(*a).numel()]
                };
                updates.push((*a, dx));
            }
            Op::RowL2Norm(a) => {
                let k = self.shape(*a)[1].max(1);
                let norms = node.value.data();
                let mut dx = vec![T::zero(); self.value(*a).numel()];
                for (r, (d, v)) in dx
                    .chunks_mut(k)
                    .zip(self.value(*a).data().chunks(k))
                    .enumerate()
                {
                    if norms[r] > T::zero() {
                        let coef = g[r] / norms[r];
                        d.iter_mut().zip(v).for_each(|(d, &v)| *d = coef * v);
                    }
                }
                updates.push((*a, dx));
            }
            Op::MeanSquaredError(a, b) => {
                let va = self.value(*a).data();
                let vb = self.value(*b).data();
                let coef = T::lit(2.0) * g[0] / T::lit(va.len().max(1) as f64);
                let da: Vec<T> = va.iter().zip(vb).map(|(&p, &q)| coef * (p - q)).collect();
                let db = da.iter().map(|&v| -v).collect();
                updates.push((*a, da));
                updates.push((*b, db));
            }
        }
        for (v, d) in updates {
            self.accumulate(v, d);
        }
    }
}

/// Row-wise softmax of a `[N, K]` matrix, numerically stabilized.
pub(crate) fn softmax_rows<T: Scalar>(logits: &[T], k: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
        let total: T = exps.iter().copied().sum();
        out.extend(exps.into_iter().map(|e| e / total));
    }
    out
}

impl<T: Scalar> Graph<T> {
    /// Row-wise softmax of a recorded `[N, K]` value, outside the tape.
    pub fn softmax_of(&self, logits: Var) -> Result<Vec<T>> {
        match *self.shape(logits) {
            [_, k] => Ok(softmax_rows(self.value(logits).data(), k)),
            ref s => shape_err(format!("softmax needs a 2-D tensor, got {s:?}")),
        }
    }
}
