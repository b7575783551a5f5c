use std::collections::BTreeMap;
use std::sync::Arc;

use crate::scalar::Scalar;
use crate::tensorcore::kernels::{self, Padding};
use crate::tensorcore::{Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Element-wise operation selector for [`Tape::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Pow,
    Clip01,
    Scale,
}

/// Second argument of an element-wise operation.
#[derive(Clone, Copy, Debug)]
pub enum Operand<T> {
    Var(Var),
    Scalar(T),
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    SqL2,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddScalar(Var),
    Scale(Var, T),
    Recip(Var),
    Pow { base: Var, exp: Var },
    PowConst { base: Var, exp: T },
    Clip01(Var),
    Relu(Var),
    Reduce(Var, ReduceOp),
    Gather { src: Var, index: Arc<[Option<u32>]> },
    ChannelAffine { x: Var, m: Var },
    Filter { x: Var, k: Var, padding: Padding },
    Conv { x: Var, w: Var, b: Var },
    MaxPool2 { x: Var, argmax: Vec<u32> },
    GlobalAvgPool(Var),
    Upsample2(Var),
    Concat(Var, Var),
    Linear { x: Var, w: Var, b: Var },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<T> },
    BceDice { logits: Var, mask: Arc<[T]>, smooth: T },
    Standardize { x: Var, mean: Vec<T>, std: Vec<T>, eps: T },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    trainable: bool,
    needs_grad: bool,
}

/// Gradients of a scalar loss with respect to the trainable leaves it depends on.
#[derive(Clone, Debug, Default)]
pub struct Gradients<T> {
    map: BTreeMap<Var, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.map.get(&var)
    }

    pub fn remove(&mut self, var: Var) -> Option<Tensor<T>> {
        self.map.remove(&var)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, &Tensor<T>)> {
        self.map.iter().map(|(v, t)| (*v, t))
    }
}

/// Records tensor operations for reverse-mode differentiation.
///
/// A tape is single-owner; build a fresh one per forward pass.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, expected: &[usize], found: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        expected: expected.to_vec(),
        found: found.to_vec(),
    }
}

/// Interpret `[c,h,w]` as a batch of one.
fn nchw(shape: &[usize], op: &'static str) -> Result<(usize, usize, usize, usize), TensorError> {
    match *shape {
        [n, c, h, w] => Ok((n, c, h, w)),
        [c, h, w] => Ok((1, c, h, w)),
        _ => Err(mismatch(op, &[0, 0, 0, 0], shape)),
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            trainable: false,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Record an input tensor. Trainable leaves receive gradients in [`Tape::backward`].
    pub fn leaf(&mut self, value: Tensor<T>, trainable: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            trainable,
            needs_grad: trainable,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    fn val(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    fn zip_same(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var, TensorError> {
        let (ta, tb) = (self.val(a), self.val(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(name, ta.shape(), tb.shape()));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::new(ta.shape(), data)?;
        Ok(self.push(out, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_same(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_same(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_same(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        let out = self.val(x).map(|v| v + c);
        self.push(out, Op::AddScalar(x), &[x])
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let out = self.val(x).map(|v| v * c);
        self.push(out, Op::Scale(x, c), &[x])
    }

    /// Element-wise reciprocal.
    pub fn recip(&mut self, x: Var) -> Var {
        let out = self.val(x).map(|v| v.recip());
        self.push(out, Op::Recip(x), &[x])
    }

    fn check_pow_domain(base: &Tensor<T>, e: T) -> Result<(), TensorError> {
        if e.fract() != T::zero() && base.data().iter().any(|&v| v < T::zero()) {
            return Err(TensorError::Domain(
                "negative base raised to a fractional exponent",
            ));
        }
        Ok(())
    }

    /// `base ^ exp` with a one-element exponent that may itself be trainable.
    pub fn pow(&mut self, base: Var, exp: Var) -> Result<Var, TensorError> {
        let e = self.val(exp).item()?;
        Self::check_pow_domain(self.val(base), e)?;
        let out = self.val(base).map(|v| v.powf(e));
        Ok(self.push(out, Op::Pow { base, exp }, &[base, exp]))
    }

    pub fn pow_const(&mut self, base: Var, exp: T) -> Result<Var, TensorError> {
        Self::check_pow_domain(self.val(base), exp)?;
        let out = self.val(base).map(|v| v.powf(exp));
        Ok(self.push(out, Op::PowConst { base, exp }, &[base]))
    }

    /// Clamp into `[0, 1]`; the derivative is 1 on the closed interval and 0 outside.
    pub fn clip01(&mut self, x: Var) -> Var {
        let out = self.val(x).map(|v| v.max(T::zero()).min(T::one()));
        self.push(out, Op::Clip01(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.val(x).map(|v| v.max(T::zero()));
        self.push(out, Op::Relu(x), &[x])
    }

    /// Selector-style entry point over the element-wise operations.
    pub fn elementwise(
        &mut self,
        x: Var,
        op: ElementwiseOp,
        operand: Operand<T>,
    ) -> Result<Var, TensorError> {
        match (op, operand) {
            (ElementwiseOp::Add, Operand::Var(y)) => self.add(x, y),
            (ElementwiseOp::Add, Operand::Scalar(c)) => Ok(self.add_scalar(x, c)),
            (ElementwiseOp::Sub, Operand::Var(y)) => self.sub(x, y),
            (ElementwiseOp::Sub, Operand::Scalar(c)) => Ok(self.add_scalar(x, -c)),
            (ElementwiseOp::Mul, Operand::Var(y)) => self.mul(x, y),
            (ElementwiseOp::Mul | ElementwiseOp::Scale, Operand::Scalar(c)) => {
                Ok(self.scale(x, c))
            }
            (ElementwiseOp::Pow, Operand::Var(e)) => self.pow(x, e),
            (ElementwiseOp::Pow, Operand::Scalar(e)) => self.pow_const(x, e),
            (ElementwiseOp::Clip01, _) => Ok(self.clip01(x)),
            (op, _) => Err(TensorError::InvalidOperand(format!("{op:?}"))),
        }
    }

    pub fn reduce(&mut self, x: Var, op: ReduceOp) -> Var {
        let t = self.val(x);
        let v = match op {
            ReduceOp::Sum => t.data().iter().copied().sum::<T>(),
            ReduceOp::Mean => {
                t.data().iter().copied().sum::<T>() / T::lit(t.len().max(1) as f64)
            }
            ReduceOp::SqL2 => t.data().iter().map(|&v| v * v).sum::<T>(),
        };
        self.push(Tensor::scalar(v), Op::Reduce(x, op), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        self.reduce(x, ReduceOp::Sum)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        self.reduce(x, ReduceOp::Mean)
    }

    pub fn sq_l2(&mut self, x: Var) -> Var {
        self.reduce(x, ReduceOp::SqL2)
    }

    /// `out[i] = src[index[i]]`, or zero where the index is `None`.
    pub fn gather(
        &mut self,
        src: Var,
        index: Arc<[Option<u32>]>,
        shape: &[usize],
    ) -> Result<Var, TensorError> {
        let s = self.val(src).data();
        if index.len() != shape.iter().product::<usize>() {
            return Err(mismatch("gather", shape, &[index.len()]));
        }
        if index.iter().flatten().any(|&i| i as usize >= s.len()) {
            return Err(TensorError::IndexOutOfRange);
        }
        let data = index
            .iter()
            .map(|i| i.map_or(T::zero(), |i| s[i as usize]))
            .collect();
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, Op::Gather { src, index }, &[src]))
    }

    /// Per-pixel 3x3 colour transform: `out[:, r] = sum_c m[r, c] * x[:, c]`.
    pub fn channel_affine(&mut self, x: Var, m: Var) -> Result<Var, TensorError> {
        let (n, c, h, w) = nchw(self.val(x).shape(), "channel_affine")?;
        if c != 3 {
            return Err(mismatch("channel_affine", &[n, 3, h, w], self.val(x).shape()));
        }
        if self.val(m).shape() != [3, 3] {
            return Err(mismatch("channel_affine", &[3, 3], self.val(m).shape()));
        }
        let xs = self.val(x).data();
        let ms = self.val(m).data();
        let hw = h * w;
        let mut out = vec![T::zero(); xs.len()];
        for b in 0..n {
            let base = b * 3 * hw;
            for r in 0..3 {
                for ch in 0..3 {
                    let coef = ms[r * 3 + ch];
                    let src = &xs[base + ch * hw..base + (ch + 1) * hw];
                    let dst = &mut out[base + r * hw..base + (r + 1) * hw];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += coef * *s;
                    }
                }
            }
        }
        let shape = self.val(x).shape().to_vec();
        let out = Tensor::new(&shape, out)?;
        Ok(self.push(out, Op::ChannelAffine { x, m }, &[x, m]))
    }

    /// Channel-wise same-size correlation of `x` (`[n,c,h,w]` or `[c,h,w]`) with
    /// an odd `k x k` kernel. A `[k,k]` kernel is shared by every channel; a
    /// `[c,k,k]` kernel holds one kernel per channel.
    pub fn filter2d(&mut self, x: Var, kernel: Var, padding: Padding) -> Result<Var, TensorError> {
        let (n, c, h, w) = nchw(self.val(x).shape(), "filter2d")?;
        let kshape = self.val(kernel).shape().to_vec();
        let (groups, k) = match kshape[..] {
            [a, b] if a == b => (1, a),
            [g, a, b] if a == b && g == c => (g, a),
            _ => return Err(mismatch("filter2d", &[c, 0, 0], &kshape)),
        };
        if k % 2 == 0 {
            return Err(TensorError::EvenKernel(k));
        }
        let rows = kernels::tap_map(h, k, padding);
        let cols = kernels::tap_map(w, k, padding);
        let xs = self.val(x).data();
        let ks = self.val(kernel).data();
        let hw = h * w;
        let mut out = vec![T::zero(); xs.len()];
        for b in 0..n {
            for ch in 0..c {
                let g = if groups == 1 { 0 } else { ch };
                let off = (b * c + ch) * hw;
                kernels::filter_plane(
                    &xs[off..off + hw],
                    &ks[g * k * k..(g + 1) * k * k],
                    k,
                    h,
                    w,
                    &rows,
                    &cols,
                    &mut out[off..off + hw],
                );
            }
        }
        let shape = self.val(x).shape().to_vec();
        let out = Tensor::new(&shape, out)?;
        Ok(self.push(
            out,
            Op::Filter {
                x,
                k: kernel,
                padding,
            },
            &[x, kernel],
        ))
    }

    /// Dense convolution `[n,cin,h,w] * [cout,cin,k,k] + [cout]`, zero padded, stride 1.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var, TensorError> {
        let (n, cin, h, w) = nchw(self.val(x).shape(), "conv2d")?;
        let ws = self.val(weight).shape().to_vec();
        let [cout, wcin, k, k2] = ws[..] else {
            return Err(mismatch("conv2d", &[0, cin, 0, 0], &ws));
        };
        if wcin != cin || k != k2 || self.val(bias).shape() != [cout] {
            return Err(mismatch("conv2d", &[cout, cin, k, k], &ws));
        }
        if k % 2 == 0 {
            return Err(TensorError::EvenKernel(k));
        }
        let xs = self.val(x).data();
        let wv = self.val(weight).data();
        let bv = self.val(bias).data();
        let hw = h * w;
        let mut out = vec![T::zero(); n * cout * hw];
        for b in 0..n {
            kernels::conv_dense(
                &xs[b * cin * hw..(b + 1) * cin * hw],
                wv,
                bv,
                cin,
                cout,
                k,
                h,
                w,
                &mut out[b * cout * hw..(b + 1) * cout * hw],
            );
        }
        let out = Tensor::new(&[n, cout, h, w], out)?;
        Ok(self.push(out, Op::Conv { x, w: weight, b: bias }, &[x, weight, bias]))
    }

    /// 2x2 max pooling with stride 2; ties resolve to the first element in scan order.
    pub fn max_pool2(&mut self, x: Var) -> Result<Var, TensorError> {
        let (n, c, h, w) = nchw(self.val(x).shape(), "max_pool2")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(mismatch("max_pool2", &[n, c, h + h % 2, w + w % 2], &[n, c, h, w]));
        }
        let (oh, ow) = (h / 2, w / 2);
        let xs = self.val(x).data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for p in 0..n * c {
            let base = p * h * w;
            for y in 0..oh {
                for xx in 0..ow {
                    let mut best = base + 2 * y * w + 2 * xx;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * y + dy) * w + 2 * xx + dx;
                        if xs[idx] > xs[best] {
                            best = idx;
                        }
                    }
                    out.push(xs[best]);
                    argmax.push(best as u32);
                }
            }
        }
        let out = Tensor::new(&[n, c, oh, ow], out)?;
        Ok(self.push(out, Op::MaxPool2 { x, argmax }, &[x]))
    }

    /// `[n,c,h,w] -> [n,c]` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var, TensorError> {
        let (n, c, h, w) = nchw(self.val(x).shape(), "global_avg_pool")?;
        let hw = h * w;
        let inv = T::one() / T::lit(hw as f64);
        let out: Vec<T> = self
            .val(x)
            .data()
            .chunks(hw)
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        let out = Tensor::new(&[n, c], out)?;
        Ok(self.push(out, Op::GlobalAvgPool(x), &[x]))
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample2(&mut self, x: Var) -> Result<Var, TensorError> {
        let (n, c, h, w) = nchw(self.val(x).shape(), "upsample2")?;
        let xs = self.val(x).data();
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = vec![T::zero(); n * c * oh * ow];
        for p in 0..n * c {
            for y in 0..oh {
                for xx in 0..ow {
                    out[p * oh * ow + y * ow + xx] = xs[p * h * w + (y / 2) * w + xx / 2];
                }
            }
        }
        let out = Tensor::new(&[n, c, oh, ow], out)?;
        Ok(self.push(out, Op::Upsample2(x), &[x]))
    }

    /// Concatenate along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (n, ca, h, w) = nchw(self.val(a).shape(), "concat")?;
        let (nb, cb, hb, wb) = nchw(self.val(b).shape(), "concat")?;
        if (n, h, w) != (nb, hb, wb) {
            return Err(mismatch("concat", &[n, cb, h, w], &[nb, cb, hb, wb]));
        }
        let hw = h * w;
        let (xa, xb) = (self.val(a).data(), self.val(b).data());
        let mut out = Vec::with_capacity(n * (ca + cb) * hw);
        for i in 0..n {
            out.extend_from_slice(&xa[i * ca * hw..(i + 1) * ca * hw]);
            out.extend_from_slice(&xb[i * cb * hw..(i + 1) * cb * hw]);
        }
        let out = Tensor::new(&[n, ca + cb, h, w], out)?;
        Ok(self.push(out, Op::Concat(a, b), &[a, b]))
    }

    /// `[n,f] x [k,f]^T + [k]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var, TensorError> {
        let xs = self.val(x).shape().to_vec();
        let ws = self.val(weight).shape().to_vec();
        let (&[n, f], &[k, wf]) = (&xs[..], &ws[..]) else {
            return Err(mismatch("linear", &[0, 0], &xs));
        };
        if f != wf || self.val(bias).shape() != [k] {
            return Err(mismatch("linear", &[k, f], &ws));
        }
        let (xv, wv, bv) = (
            self.val(x).data(),
            self.val(weight).data(),
            self.val(bias).data(),
        );
        let mut out = Vec::with_capacity(n * k);
        for i in 0..n {
            let row = &xv[i * f..(i + 1) * f];
            for o in 0..k {
                let wr = &wv[o * f..(o + 1) * f];
                out.push(bv[o] + row.iter().zip(wr).map(|(&a, &b)| a * b).sum::<T>());
            }
        }
        let out = Tensor::new(&[n, k], out)?;
        Ok(self.push(out, Op::Linear { x, w: weight, b: bias }, &[x, weight, bias]))
    }

    /// Mean softmax cross-entropy of `[n,k]` logits against class indices.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var, TensorError> {
        let shape = self.val(logits).shape().to_vec();
        let [n, k] = shape[..] else {
            return Err(mismatch("cross_entropy", &[targets.len(), 0], &shape));
        };
        if n != targets.len() {
            return Err(mismatch("cross_entropy", &[targets.len(), k], &shape));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= k) {
            return Err(TensorError::TargetOutOfRange(t, k));
        }
        let lv = self.val(logits).data();
        let mut probs = Vec::with_capacity(n * k);
        let mut total = T::zero();
        for (i, &t) in targets.iter().enumerate() {
            let row = &lv[i * k..(i + 1) * k];
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let z: T = row.iter().map(|&v| (v - m).exp()).sum();
            let log_z = z.ln() + m;
            total += log_z - row[t];
            probs.extend(row.iter().map(|&v| (v - log_z).exp()));
        }
        let loss = total / T::lit(n.max(1) as f64);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// Binary cross-entropy on logits plus `1 - Dice`, with Dice pooled over the batch.
    pub fn bce_dice(&mut self, logits: Var, mask: Arc<[T]>, smooth: T) -> Result<Var, TensorError> {
        let lv = self.val(logits).data();
        if lv.len() != mask.len() {
            return Err(mismatch("bce_dice", &[mask.len()], &[lv.len()]));
        }
        if mask.iter().any(|&y| y < T::zero() || y > T::one()) {
            return Err(TensorError::Domain("mask values outside [0, 1]"));
        }
        let m = T::lit(lv.len().max(1) as f64);
        let mut bce = T::zero();
        let (mut inter, mut psum, mut ysum) = (T::zero(), T::zero(), T::zero());
        for (&z, &y) in lv.iter().zip(mask.iter()) {
            bce += z.max(T::zero()) - z * y + (-z.abs()).exp().ln_1p();
            let p = sigmoid(z);
            inter += p * y;
            psum += p;
            ysum += y;
        }
        let two = T::lit(2.0);
        let dice = (two * inter + smooth) / (psum + ysum + smooth);
        let loss = bce / m + T::one() - dice;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceDice {
                logits,
                mask,
                smooth,
            },
            &[logits],
        ))
    }

    /// Per-channel standardisation over batch and space: `(x - mean) / (std + eps)`.
    pub fn standardize_channels(&mut self, x: Var, eps: T) -> Result<Var, TensorError> {
        let (n, c, h, w) = nchw(self.val(x).shape(), "standardize")?;
        let hw = h * w;
        let xs = self.val(x).data();
        let count = T::lit((n * hw).max(1) as f64);
        let mut mean = vec![T::zero(); c];
        let mut std = vec![T::zero(); c];
        for ch in 0..c {
            let mut s = T::zero();
            for b in 0..n {
                s += xs[(b * c + ch) * hw..(b * c + ch + 1) * hw].iter().copied().sum::<T>();
            }
            let mu = s / count;
            let mut v = T::zero();
            for b in 0..n {
                for &e in &xs[(b * c + ch) * hw..(b * c + ch + 1) * hw] {
                    v += (e - mu) * (e - mu);
                }
            }
            mean[ch] = mu;
            std[ch] = (v / count).sqrt();
        }
        let mut out = Vec::with_capacity(xs.len());
        for b in 0..n {
            for ch in 0..c {
                let inv = T::one() / (std[ch] + eps);
                out.extend(
                    xs[(b * c + ch) * hw..(b * c + ch + 1) * hw]
                        .iter()
                        .map(|&e| (e - mean[ch]) * inv),
                );
            }
        }
        let shape = self.val(x).shape().to_vec();
        let out = Tensor::new(&shape, out)?;
        Ok(self.push(out, Op::Standardize { x, mean, std, eps }, &[x]))
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Only trainable leaves that `loss` actually depends on appear in the result.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, TensorError> {
        let lv = self.val(loss);
        let l = lv.item()?;
        if !l.is_finite() {
            return Err(TensorError::NonFinite("loss"));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        let mut out = Gradients::default();
        if !self.nodes[loss.0].needs_grad {
            return Ok(out);
        }
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if let Op::Leaf = node.op {
                if node.trainable {
                    out.map
                        .insert(Var(idx), Tensor::new(node.value.shape(), g)?);
                }
                continue;
            }
            self.propagate(idx, &g, &mut grads);
        }
        Ok(out)
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        let zero_like = |v: Var| vec![T::zero(); self.nodes[v.0].value.len()];
        macro_rules! acc {
            ($v:expr, $f:expr) => {{
                let v: Var = $v;
                if self.wants(v) {
                    let slot = grads[v.0].get_or_insert_with(|| zero_like(v));
                    #[allow(clippy::redundant_closure_call)]
                    ($f)(slot.as_mut_slice());
                }
            }};
        }
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc!(*a, |s: &mut [T]| add_into(s, g));
                acc!(*b, |s: &mut [T]| add_into(s, g));
            }
            Op::Sub(a, b) => {
                acc!(*a, |s: &mut [T]| add_into(s, g));
                acc!(*b, |s: &mut [T]| s.iter_mut().zip(g).for_each(|(d, &gv)| *d -= gv));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.val(*a).data(), self.val(*b).data());
                acc!(*a, |s: &mut [T]| {
                    for ((d, &gv), &y) in s.iter_mut().zip(g).zip(vb) {
                        *d += gv * y;
                    }
                });
                acc!(*b, |s: &mut [T]| {
                    for ((d, &gv), &x) in s.iter_mut().zip(g).zip(va) {
                        *d += gv * x;
                    }
                });
            }
            Op::AddScalar(x) => acc!(*x, |s: &mut [T]| add_into(s, g)),
            Op::Scale(x, c) => {
                acc!(*x, |s: &mut [T]| s.iter_mut().zip(g).for_each(|(d, &gv)| *d += gv * *c))
            }
            Op::Recip(x) => {
                let xv = self.val(*x).data();
                acc!(*x, |s: &mut [T]| {
                    for ((d, &gv), &v) in s.iter_mut().zip(g).zip(xv) {
                        *d -= gv / (v * v);
                    }
                });
            }
            Op::Pow { base, exp } => {
                let e = self.val(*exp).data()[0];
                let bv = self.val(*base).data();
                let ov = node.value.data();
                acc!(*base, |s: &mut [T]| pow_base_adjoint(s, g, bv, ov, e));
                acc!(*exp, |s: &mut [T]| {
                    let tiny = T::lit(1e-12);
                    let mut a = T::zero();
                    for ((&gv, &b), &o) in g.iter().zip(bv).zip(ov) {
                        if b > T::zero() {
                            a += gv * o * b.max(tiny).ln();
                        }
                    }
                    s[0] += a;
                });
            }
            Op::PowConst { base, exp } => {
                let bv = self.val(*base).data();
                let ov = node.value.data();
                acc!(*base, |s: &mut [T]| pow_base_adjoint(s, g, bv, ov, *exp));
            }
            Op::Clip01(x) => {
                let xv = self.val(*x).data();
                acc!(*x, |s: &mut [T]| {
                    for ((d, &gv), &v) in s.iter_mut().zip(g).zip(xv) {
                        if v >= T::zero() && v <= T::one() {
                            *d += gv;
                        }
                    }
                });
            }
            Op::Relu(x) => {
                let xv = self.val(*x).data();
                acc!(*x, |s: &mut [T]| {
                    for ((d, &gv), &v) in s.iter_mut().zip(g).zip(xv) {
                        if v > T::zero() {
                            *d += gv;
                        }
                    }
                });
            }
            Op::Reduce(x, op) => {
                let xv = self.val(*x).data();
                let g0 = g[0];
                acc!(*x, |s: &mut [T]| match op {
                    ReduceOp::Sum => s.iter_mut().for_each(|d| *d += g0),
                    ReduceOp::Mean => {
                        let c = g0 / T::lit(xv.len().max(1) as f64);
                        s.iter_mut().for_each(|d| *d += c);
                    }
                    ReduceOp::SqL2 => {
                        let two = T::lit(2.0) * g0;
                        s.iter_mut().zip(xv).for_each(|(d, &v)| *d += two * v);
                    }
                });
            }
            Op::Gather { src, index } => {
                acc!(*src, |s: &mut [T]| {
                    for (i, &gv) in index.iter().zip(g) {
                        if let Some(i) = i {
                            s[*i as usize] += gv;
                        }
                    }
                });
            }
            Op::ChannelAffine { x, m } => {
                let (n, _, h, w) = nchw(self.val(*x).shape(), "").expect("checked in forward");
                let hw = h * w;
                let xv = self.val(*x).data();
                let mv = self.val(*m).data();
                acc!(*x, |s: &mut [T]| {
                    for b in 0..n {
                        let base = b * 3 * hw;
                        for r in 0..3 {
                            for ch in 0..3 {
                                let coef = mv[r * 3 + ch];
                                let gsrc = &g[base + r * hw..base + (r + 1) * hw];
                                let dst = &mut s[base + ch * hw..base + (ch + 1) * hw];
                                for (d, &gv) in dst.iter_mut().zip(gsrc) {
                                    *d += coef * gv;
                                }
                            }
                        }
                    }
                });
                acc!(*m, |s: &mut [T]| {
                    for b in 0..n {
                        let base = b * 3 * hw;
                        for r in 0..3 {
                            for ch in 0..3 {
                                let gsrc = &g[base + r * hw..base + (r + 1) * hw];
                                let xsrc = &xv[base + ch * hw..base + (ch + 1) * hw];
                                s[r * 3 + ch] +=
                                    gsrc.iter().zip(xsrc).map(|(&a, &b)| a * b).sum::<T>();
                            }
                        }
                    }
                });
            }
            Op::Filter { x, k, padding } => {
                let (n, c, h, w) = nchw(self.val(*x).shape(), "").expect("checked in forward");
                let kshape = self.val(*k).shape();
                let ksz = kshape[kshape.len() - 1];
                let groups = if kshape.len() == 2 { 1 } else { kshape[0] };
                let rows = kernels::tap_map(h, ksz, *padding);
                let cols = kernels::tap_map(w, ksz, *padding);
                let xv = self.val(*x).data();
                let kv = self.val(*k).data();
                let hw = h * w;
                let (wx, wk) = (self.wants(*x), self.wants(*k));
                let mut gx = wx.then(|| zero_like(*x));
                let mut gk = wk.then(|| zero_like(*k));
                for b in 0..n {
                    for ch in 0..c {
                        let grp = if groups == 1 { 0 } else { ch };
                        let off = (b * c + ch) * hw;
                        let kk = ksz * ksz;
                        kernels::filter_plane_adjoint(
                            &xv[off..off + hw],
                            &kv[grp * kk..(grp + 1) * kk],
                            &g[off..off + hw],
                            ksz,
                            h,
                            w,
                            &rows,
                            &cols,
                            gx.as_deref_mut().map(|s| &mut s[off..off + hw]),
                            gk.as_deref_mut().map(|s| &mut s[grp * kk..(grp + 1) * kk]),
                        );
                    }
                }
                if let Some(gx) = gx {
                    acc!(*x, |s: &mut [T]| add_into(s, &gx));
                }
                if let Some(gk) = gk {
                    acc!(*k, |s: &mut [T]| add_into(s, &gk));
                }
            }
            Op::Conv { x, w: wt, b: bias } => {
                let (n, cin, h, w) = nchw(self.val(*x).shape(), "").expect("checked in forward");
                let ws = self.val(*wt).shape();
                let (cout, k) = (ws[0], ws[2]);
                let hw = h * w;
                let xv = self.val(*x).data();
                let wv = self.val(*wt).data();
                let mut gx = self.wants(*x).then(|| zero_like(*x));
                let mut gw = self.wants(*wt).then(|| zero_like(*wt));
                let mut gb = self.wants(*bias).then(|| zero_like(*bias));
                for bi in 0..n {
                    kernels::conv_dense_adjoint(
                        &xv[bi * cin * hw..(bi + 1) * cin * hw],
                        wv,
                        &g[bi * cout * hw..(bi + 1) * cout * hw],
                        cin,
                        cout,
                        k,
                        h,
                        w,
                        gx.as_deref_mut().map(|s| &mut s[bi * cin * hw..(bi + 1) * cin * hw]),
                        gw.as_deref_mut(),
                        gb.as_deref_mut(),
                    );
                }
                if let Some(v) = gx {
                    acc!(*x, |s: &mut [T]| add_into(s, &v));
                }
                if let Some(v) = gw {
                    acc!(*wt, |s: &mut [T]| add_into(s, &v));
                }
                if let Some(v) = gb {
                    acc!(*bias, |s: &mut [T]| add_into(s, &v));
                }
            }
            Op::MaxPool2 { x, argmax } => {
                acc!(*x, |s: &mut [T]| {
                    for (&i, &gv) in argmax.iter().zip(g) {
                        s[i as usize] += gv;
                    }
                });
            }
            Op::GlobalAvgPool(x) => {
                let (_, _, h, w) = nchw(self.val(*x).shape(), "").expect("checked in forward");
                let hw = h * w;
                let inv = T::one() / T::lit(hw as f64);
                acc!(*x, |s: &mut [T]| {
                    for (plane, &gv) in s.chunks_mut(hw).zip(g) {
                        plane.iter_mut().for_each(|d| *d += gv * inv);
                    }
                });
            }
            Op::Upsample2(x) => {
                let (n, c, h, w) = nchw(self.val(*x).shape(), "").expect("checked in forward");
                let (oh, ow) = (2 * h, 2 * w);
                acc!(*x, |s: &mut [T]| {
                    for p in 0..n * c {
                        for y in 0..oh {
                            for xx in 0..ow {
                                s[p * h * w + (y / 2) * w + xx / 2] += g[p * oh * ow + y * ow + xx];
                            }
                        }
                    }
                });
            }
            Op::Concat(a, b) => {
                let (n, ca, h, w) = nchw(self.val(*a).shape(), "").expect("checked in forward");
                let cb = nchw(self.val(*b).shape(), "").expect("checked in forward").1;
                let hw = h * w;
                acc!(*a, |s: &mut [T]| {
                    for i in 0..n {
                        let src = &g[i * (ca + cb) * hw..(i * (ca + cb) + ca) * hw];
                        add_into(&mut s[i * ca * hw..(i + 1) * ca * hw], src);
                    }
                });
                acc!(*b, |s: &mut [T]| {
                    for i in 0..n {
                        let src = &g[(i * (ca + cb) + ca) * hw..(i + 1) * (ca + cb) * hw];
                        add_into(&mut s[i * cb * hw..(i + 1) * cb * hw], src);
                    }
                });
            }
            Op::Linear { x, w: wt, b: bias } => {
                let xs = self.val(*x).shape();
                let (n, f) = (xs[0], xs[1]);
                let k = self.val(*bias).len();
                let (xv, wv) = (self.val(*x).data(), self.val(*wt).data());
                acc!(*x, |s: &mut [T]| {
                    for i in 0..n {
                        for o in 0..k {
                            let gv = g[i * k + o];
                            for j in 0..f {
                                s[i * f + j] += gv * wv[o * f + j];
                            }
                        }
                    }
                });
                acc!(*wt, |s: &mut [T]| {
                    for i in 0..n {
                        for o in 0..k {
                            let gv = g[i * k + o];
                            for j in 0..f {
                                s[o * f + j] += gv * xv[i * f + j];
                            }
                        }
                    }
                });
                acc!(*bias, |s: &mut [T]| {
                    for i in 0..n {
                        for o in 0..k {
                            s[o] += g[i * k + o];
                        }
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let n = targets.len();
                let k = probs.len() / n.max(1);
                let c = g[0] / T::lit(n.max(1) as f64);
                acc!(*logits, |s: &mut [T]| {
                    for (i, &t) in targets.iter().enumerate() {
                        for j in 0..k {
                            let onehot = if j == t { T::one() } else { T::zero() };
                            s[i * k + j] += c * (probs[i * k + j] - onehot);
                        }
                    }
                });
            }
            Op::BceDice {
                logits,
                mask,
                smooth,
            } => {
                let lv = self.val(*logits).data();
                let m = T::lit(lv.len().max(1) as f64);
                let (mut inter, mut psum, mut ysum) = (T::zero(), T::zero(), T::zero());
                for (&z, &y) in lv.iter().zip(mask.iter()) {
                    let p = sigmoid(z);
                    inter += p * y;
                    psum += p;
                    ysum += y;
                }
                let two = T::lit(2.0);
                let num = two * inter + *smooth;
                let den = psum + ysum + *smooth;
                acc!(*logits, |s: &mut [T]| {
                    for ((d, &z), &y) in s.iter_mut().zip(lv).zip(mask.iter()) {
                        let p = sigmoid(z);
                        let d_dice_dp = (two * y * den - num) / (den * den);
                        *d += g[0] * ((p - y) / m - d_dice_dp * p * (T::one() - p));
                    }
                });
            }
            Op::Standardize { x, mean, std, eps } => {
                let (n, c, h, w) = nchw(self.val(*x).shape(), "").expect("checked in forward");
                let hw = h * w;
                let xv = self.val(*x).data();
                let count = T::lit((n * hw).max(1) as f64);
                acc!(*x, |s: &mut [T]| {
                    for ch in 0..c {
                        let sd = std[ch] + *eps;
                        let mut gsum = T::zero();
                        let mut gx = T::zero();
                        for b in 0..n {
                            let off = (b * c + ch) * hw;
                            for i in off..off + hw {
                                gsum += g[i];
                                gx += g[i] * (xv[i] - mean[ch]);
                            }
                        }
                        let var_term = if std[ch] > T::zero() {
                            gx / (sd * sd * count * std[ch])
                        } else {
                            T::zero()
                        };
                        for b in 0..n {
                            let off = (b * c + ch) * hw;
                            for i in off..off + hw {
                                s[i] += (g[i] - gsum / count) / sd - (xv[i] - mean[ch]) * var_term;
                            }
                        }
                    }
                });
            }
        }
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}

pub(crate) fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// `d(b^e)/db = e * b^(e-1)`, taken as 0 at `b = 0` for `e < 1` where it is unbounded.
fn pow_base_adjoint<T: Scalar>(s: &mut [T], g: &[T], base: &[T], out: &[T], e: T) {
    for (((d, &gv), &b), &o) in s.iter_mut().zip(g).zip(base).zip(out) {
        let deriv = if b != T::zero() {
            e * o / b
        } else if e == T::one() {
            T::one()
        } else {
            T::zero()
        };
        if deriv.is_finite() {
            *d += gv * deriv;
        }
    }
}
