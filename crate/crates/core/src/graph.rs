//! Reverse-mode automatic differentiation on a linear tape.
//!
//! A [`Graph`] records every operation of one forward pass. Leaves are either
//! trainable (`param`, `input_var`) or constant. [`Graph::backward`] propagates
//! from a scalar output only through nodes that depend on a trainable leaf, so
//! frozen networks cost a forward pass plus input gradients, nothing more.

use crate::kernels::{self, ConvGeom};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Linear { x: Var, w: Var, b: Option<Var> },
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom, out_channels: usize },
    Upsample2 { x: Var },
    AvgPool2 { x: Var },
    LeakyRelu { x: Var, slope: T },
    Tanh { x: Var },
    Softplus { x: Var },
    InstanceNorm { x: Var, inv_std: Vec<T> },
    MulChannels { x: Var, s: Var },
    AddChannels { x: Var, b: Var },
    RepeatBatch { x: Var, n: usize },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, k: T },
    AddScalar { x: Var },
    Square { x: Var },
    Sum { x: Var },
    Reshape { x: Var },
    Gram { x: Var },
    Clamp { x: Var, lo: T, hi: T },
    /// `y[i] = x[idx[i]]` for a permutation `idx`.
    Permute { x: Var, idx: Vec<usize> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    tracked: bool,
}

/// One forward pass worth of recorded operations.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Graph::backward`], indexed by leaf [`Var`].
pub struct Grads<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Grads<T> {
    /// Gradient of a tracked leaf; `None` if the leaf did not influence the output.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::with_capacity(64) }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Scalar value of a single-element node.
    pub fn scalar(&self, v: Var) -> T {
        let t = self.value(v);
        assert_eq!(t.len(), 1, "node is not a scalar: {:?}", t.shape());
        t.data()[0]
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: &Tensor<T>) -> Var {
        self.push(t.clone(), Op::Leaf, true)
    }

    /// Leaf that receives gradients, taking ownership of the value.
    pub fn input_var(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that never receives gradients.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf whose gradient tracking is chosen by the caller.
    pub fn leaf(&mut self, t: &Tensor<T>, trainable: bool) -> Var {
        self.push(t.clone(), Op::Leaf, trainable)
    }

    /// `y = x W^T + b` with `x: [N, in]`, `W: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        let (n, din) = (xv.dim(0), xv.len() / xv.dim(0));
        let dout = wv.dim(0);
        assert_eq!(wv.dim(1), din, "linear: weight {:?} vs input {:?}", wv.shape(), xv.shape());
        let mut y = vec![T::zero(); n * dout];
        if let Some(b) = b {
            let bv = self.value(b).data();
            for row in y.chunks_mut(dout) {
                row.copy_from_slice(bv);
            }
        }
        let beta = if b.is_some() { T::one() } else { T::zero() };
        T::gemm(n, din, dout, T::one(), xv.data(), (din, 1), wv.data(), (1, din), beta, &mut y, (dout, 1));
        let tracked = self.tracked(x) || self.tracked(w) || b.is_some_and(|b| self.tracked(b));
        self.push(Tensor::from_vec(&[n, dout], y), Op::Linear { x, w, b }, tracked)
    }

    /// Square-kernel convolution with zero padding.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let (n, c, h, wd) = self.value(x).dims4();
        let (o, wc, k, k2) = self.value(w).dims4();
        assert_eq!(wc, c, "conv2d: weight expects {wc} channels, input has {c}");
        assert_eq!(k, k2);
        let geom = ConvGeom { channels: c, height: h, width: wd, kernel: k, stride, pad };
        let (oh, ow) = geom.out_hw();
        let y = kernels::conv2d_forward(
            self.value(x).data(),
            n,
            geom,
            self.value(w).data(),
            o,
            b.map(|b| self.value(b).data()),
        );
        let tracked = self.tracked(x) || self.tracked(w) || b.is_some_and(|b| self.tracked(b));
        self.push(Tensor::from_vec(&[n, o, oh, ow], y), Op::Conv2d { x, w, b, geom, out_channels: o }, tracked)
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample2(&mut self, x: Var) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        let src = self.value(x).data();
        let (oh, ow) = (2 * h, 2 * w);
        let mut y = vec![T::zero(); n * c * oh * ow];
        for p in 0..n * c {
            let s = &src[p * h * w..(p + 1) * h * w];
            let d = &mut y[p * oh * ow..(p + 1) * oh * ow];
            for yy in 0..oh {
                for xx in 0..ow {
                    d[yy * ow + xx] = s[(yy / 2) * w + xx / 2];
                }
            }
        }
        let tracked = self.tracked(x);
        self.push(Tensor::from_vec(&[n, c, oh, ow], y), Op::Upsample2 { x }, tracked)
    }

    /// 2x2 average pooling; odd trailing rows/columns are dropped.
    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        let src = self.value(x).data();
        let (oh, ow) = (h / 2, w / 2);
        let quarter = T::from_f64_lossy(0.25);
        let mut y = vec![T::zero(); n * c * oh * ow];
        for p in 0..n * c {
            let s = &src[p * h * w..(p + 1) * h * w];
            let d = &mut y[p * oh * ow..(p + 1) * oh * ow];
            for yy in 0..oh {
                for xx in 0..ow {
                    let i = 2 * yy * w + 2 * xx;
                    d[yy * ow + xx] = (s[i] + s[i + 1] + s[i + w] + s[i + w + 1]) * quarter;
                }
            }
        }
        let tracked = self.tracked(x);
        self.push(Tensor::from_vec(&[n, c, oh, ow], y), Op::AvgPool2 { x }, tracked)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let slope = T::from_f64_lossy(slope);
        let y = self.value(x).map(|v| if v > T::zero() { v } else { v * slope });
        let tracked = self.tracked(x);
        self.push(y, Op::LeakyRelu { x, slope }, tracked)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.leaky_relu(x, 0.0)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v.tanh());
        let tracked = self.tracked(x);
        self.push(y, Op::Tanh { x }, tracked)
    }

    /// Numerically stable `ln(1 + e^x)`.
    pub fn softplus(&mut self, x: Var) -> Var {
        let y = self.value(x).map(softplus);
        let tracked = self.tracked(x);
        self.push(y, Op::Softplus { x }, tracked)
    }

    /// Per-sample, per-channel normalization over the spatial positions.
    pub fn instance_norm(&mut self, x: Var, eps: f64) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        let p = h * w;
        let eps = T::from_f64_lossy(eps);
        let pf = T::from_usize(p).unwrap();
        let src = self.value(x).data();
        let mut y = vec![T::zero(); src.len()];
        let mut inv_std = Vec::with_capacity(n * c);
        for (plane, out) in src.chunks(p).zip(y.chunks_mut(p)) {
            let mean = plane.iter().copied().sum::<T>() / pf;
            let var = plane.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / pf;
            let is = T::one() / (var + eps).sqrt();
            for (o, &v) in out.iter_mut().zip(plane) {
                *o = (v - mean) * is;
            }
            inv_std.push(is);
        }
        let tracked = self.tracked(x);
        self.push(Tensor::from_vec(&[n, c, h, w], y), Op::InstanceNorm { x, inv_std }, tracked)
    }

    /// `y[n,c,:,:] = x[n,c,:,:] * s[n,c]`.
    pub fn mul_channels(&mut self, x: Var, s: Var) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        let sv = self.value(s).data();
        assert_eq!(sv.len(), n * c, "mul_channels: scale shape mismatch");
        let p = h * w;
        let mut y = self.value(x).data().to_vec();
        for (i, plane) in y.chunks_mut(p).enumerate() {
            plane.iter_mut().for_each(|v| *v *= sv[i]);
        }
        let tracked = self.tracked(x) || self.tracked(s);
        self.push(Tensor::from_vec(&[n, c, h, w], y), Op::MulChannels { x, s }, tracked)
    }

    /// `y[n,c,:,:] = x[n,c,:,:] + b[n,c]`.
    pub fn add_channels(&mut self, x: Var, b: Var) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        let bv = self.value(b).data();
        assert_eq!(bv.len(), n * c, "add_channels: bias shape mismatch");
        let p = h * w;
        let mut y = self.value(x).data().to_vec();
        for (i, plane) in y.chunks_mut(p).enumerate() {
            plane.iter_mut().for_each(|v| *v += bv[i]);
        }
        let tracked = self.tracked(x) || self.tracked(b);
        self.push(Tensor::from_vec(&[n, c, h, w], y), Op::AddChannels { x, b }, tracked)
    }

    /// Tiles a batch-1 tensor `n` times along the leading axis.
    pub fn repeat_batch(&mut self, x: Var, n: usize) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.dim(0), 1, "repeat_batch expects a leading dimension of 1");
        let mut shape = xv.shape().to_vec();
        shape[0] = n;
        let mut y = Vec::with_capacity(xv.len() * n);
        for _ in 0..n {
            y.extend_from_slice(xv.data());
        }
        let tracked = self.tracked(x);
        self.push(Tensor::from_vec(&shape, y), Op::RepeatBatch { x, n }, tracked)
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.len(), bv.len(), "elementwise shape mismatch {:?} vs {:?}", av.shape(), bv.shape());
        let y: Vec<T> = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let shape = av.shape().to_vec();
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(Tensor::from_vec(&shape, y), op, tracked)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, Op::Add { a, b }, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, Op::Sub { a, b }, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, Op::Mul { a, b }, |x, y| x * y)
    }

    pub fn scale(&mut self, x: Var, k: T) -> Var {
        let y = self.value(x).map(|v| v * k);
        let tracked = self.tracked(x);
        self.push(y, Op::Scale { x, k }, tracked)
    }

    pub fn add_scalar(&mut self, x: Var, k: T) -> Var {
        let y = self.value(x).map(|v| v + k);
        let tracked = self.tracked(x);
        self.push(y, Op::AddScalar { x }, tracked)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v * v);
        let tracked = self.tracked(x);
        self.push(y, Op::Square { x }, tracked)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let y = Tensor::scalar(self.value(x).sum());
        let tracked = self.tracked(x);
        self.push(y, Op::Sum { x }, tracked)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = T::from_usize(self.value(x).len()).unwrap();
        let s = self.sum(x);
        self.scale(s, T::one() / n)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let y = self.value(x).clone().reshape(shape);
        let tracked = self.tracked(x);
        self.push(y, Op::Reshape { x }, tracked)
    }

    /// Per-sample channel Gram matrix: `[N, C, H, W] -> [N, C, C]`, `G = F F^T`.
    pub fn gram(&mut self, x: Var) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        let p = h * w;
        let src = self.value(x).data();
        let mut y = vec![T::zero(); n * c * c];
        for i in 0..n {
            let f = &src[i * c * p..(i + 1) * c * p];
            T::gemm(c, p, c, T::one(), f, (p, 1), f, (1, p), T::zero(), &mut y[i * c * c..(i + 1) * c * c], (c, 1));
        }
        let tracked = self.tracked(x);
        self.push(Tensor::from_vec(&[n, c, c], y), Op::Gram { x }, tracked)
    }

    /// Clamp with straight gradient inside `[lo, hi]` and zero gradient outside.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let (lo, hi) = (T::from_f64_lossy(lo), T::from_f64_lossy(hi));
        let y = self.value(x).map(|v| v.max(lo).min(hi));
        let tracked = self.tracked(x);
        self.push(y, Op::Clamp { x, lo, hi }, tracked)
    }

    /// Rearranges elements: `y[i] = x[idx[i]]`, where `idx` is a permutation.
    pub fn permute(&mut self, x: Var, shape: &[usize], idx: Vec<usize>) -> Var {
        let src = self.value(x).data();
        assert_eq!(idx.len(), src.len());
        let y = idx.iter().map(|&i| src[i]).collect();
        let tracked = self.tracked(x);
        self.push(Tensor::from_vec(shape, y), Op::Permute { x, idx }, tracked)
    }

    /// Matrix transpose of a `[R, C]` tensor.
    pub fn transpose(&mut self, x: Var) -> Var {
        let (r, c) = (self.value(x).dim(0), self.value(x).dim(1));
        let idx = (0..c).flat_map(|j| (0..r).map(move |i| i * c + j)).collect();
        self.permute(x, &[c, r], idx)
    }

    /// `[O, I, K, K] -> [I, O, K, K]` with both spatial axes reversed: the weight of the
    /// transposed convolution for stride 1.
    pub fn conv_weight_flip(&mut self, w: Var) -> Var {
        let (o, i, k, _) = self.value(w).dims4();
        let mut idx = Vec::with_capacity(o * i * k * k);
        for ci in 0..i {
            for co in 0..o {
                for ky in 0..k {
                    for kx in 0..k {
                        idx.push(((co * i + ci) * k + (k - 1 - ky)) * k + (k - 1 - kx));
                    }
                }
            }
        }
        self.permute(w, &[i, o, k, k], idx)
    }

    /// Reverse sweep from a single-element output.
    pub fn backward(&self, out: Var) -> Grads<T> {
        assert_eq!(self.value(out).len(), 1, "backward needs a scalar output");
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(vec![T::one()]);
        for idx in (0..=out.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = grads[idx].take() else { continue };
            self.backprop_node(node, &dy, &mut grads);
        }
        Grads { grads }
    }

    fn backprop_node(&self, node: &Node<T>, dy: &[T], grads: &mut [Option<Vec<T>>]) {
        let tracked = |v: Var| self.nodes[v.0].tracked;
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let xv = val(*x);
                let wv = val(*w);
                let n = xv.dim(0);
                let din = xv.len() / n;
                let dout = wv.dim(0);
                if tracked(*x) {
                    let mut dx = vec![T::zero(); n * din];
                    T::gemm(n, dout, din, T::one(), dy, (dout, 1), wv.data(), (din, 1), T::zero(), &mut dx, (din, 1));
                    accumulate(grads, *x, dx);
                }
                if tracked(*w) {
                    let mut dw = vec![T::zero(); dout * din];
                    T::gemm(dout, n, din, T::one(), dy, (1, dout), xv.data(), (din, 1), T::zero(), &mut dw, (din, 1));
                    accumulate(grads, *w, dw);
                }
                if let Some(b) = b {
                    if tracked(*b) {
                        let mut db = vec![T::zero(); dout];
                        for row in dy.chunks(dout) {
                            db.iter_mut().zip(row).for_each(|(d, &g)| *d += g);
                        }
                        accumulate(grads, *b, db);
                    }
                }
            }
            Op::Conv2d { x, w, b, geom, out_channels } => {
                let n = val(*x).dim(0);
                let want_db = b.is_some_and(|b| tracked(b));
                let (dx, dw, db) = kernels::conv2d_backward(
                    val(*x).data(),
                    n,
                    *geom,
                    val(*w).data(),
                    *out_channels,
                    dy,
                    tracked(*x),
                    tracked(*w),
                    want_db,
                );
                if let Some(dx) = dx {
                    accumulate(grads, *x, dx);
                }
                if let Some(dw) = dw {
                    accumulate(grads, *w, dw);
                }
                if let (Some(db), Some(b)) = (db, b) {
                    accumulate(grads, *b, db);
                }
            }
            Op::Upsample2 { x } => {
                let (n, c, h, w) = val(*x).dims4();
                let (oh, ow) = (2 * h, 2 * w);
                let mut dx = vec![T::zero(); n * c * h * w];
                for p in 0..n * c {
                    let d = &dy[p * oh * ow..(p + 1) * oh * ow];
                    let s = &mut dx[p * h * w..(p + 1) * h * w];
                    for yy in 0..oh {
                        for xx in 0..ow {
                            s[(yy / 2) * w + xx / 2] += d[yy * ow + xx];
                        }
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::AvgPool2 { x } => {
                let (n, c, h, w) = val(*x).dims4();
                let (oh, ow) = (h / 2, w / 2);
                let quarter = T::from_f64_lossy(0.25);
                let mut dx = vec![T::zero(); n * c * h * w];
                for p in 0..n * c {
                    let d = &dy[p * oh * ow..(p + 1) * oh * ow];
                    let s = &mut dx[p * h * w..(p + 1) * h * w];
                    for yy in 0..oh {
                        for xx in 0..ow {
                            let g = d[yy * ow + xx] * quarter;
                            let i = 2 * yy * w + 2 * xx;
                            s[i] += g;
                            s[i + 1] += g;
                            s[i + w] += g;
                            s[i + w + 1] += g;
                        }
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::LeakyRelu { x, slope } => {
                let dx = val(*x)
                    .data()
                    .iter()
                    .zip(dy)
                    .map(|(&v, &g)| if v > T::zero() { g } else { g * *slope })
                    .collect();
                accumulate(grads, *x, dx);
            }
            Op::Tanh { x: xin } => {
                let dx = node.value.data().iter().zip(dy).map(|(&t, &g)| g * (T::one() - t * t)).collect();
                accumulate(grads, *xin, dx);
            }
            Op::Softplus { x } => {
                let dx = val(*x).data().iter().zip(dy).map(|(&v, &g)| g * sigmoid(v)).collect();
                accumulate(grads, *x, dx);
            }
            Op::InstanceNorm { x, inv_std } => {
                let (_, _, h, w) = val(*x).dims4();
                let p = h * w;
                let pf = T::from_usize(p).unwrap();
                let mut dx = vec![T::zero(); dy.len()];
                for (i, ((xhat, g), out)) in
                    node.value.data().chunks(p).zip(dy.chunks(p)).zip(dx.chunks_mut(p)).enumerate()
                {
                    let mean_g = g.iter().copied().sum::<T>() / pf;
                    let mean_gx = g.iter().zip(xhat).map(|(&a, &b)| a * b).sum::<T>() / pf;
                    for ((o, &gi), &xi) in out.iter_mut().zip(g).zip(xhat) {
                        *o = inv_std[i] * (gi - mean_g - xi * mean_gx);
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::MulChannels { x, s } => {
                let (_, _, h, w) = val(*x).dims4();
                let p = h * w;
                let sv = val(*s).data();
                if tracked(*x) {
                    let mut dx = dy.to_vec();
                    for (i, plane) in dx.chunks_mut(p).enumerate() {
                        plane.iter_mut().for_each(|v| *v *= sv[i]);
                    }
                    accumulate(grads, *x, dx);
                }
                if tracked(*s) {
                    let ds = val(*x)
                        .data()
                        .chunks(p)
                        .zip(dy.chunks(p))
                        .map(|(xp, gp)| xp.iter().zip(gp).map(|(&a, &b)| a * b).sum::<T>())
                        .collect();
                    accumulate(grads, *s, ds);
                }
            }
            Op::AddChannels { x, b } => {
                let (_, _, h, w) = val(*x).dims4();
                let p = h * w;
                if tracked(*x) {
                    accumulate(grads, *x, dy.to_vec());
                }
                if tracked(*b) {
                    let db = dy.chunks(p).map(|gp| gp.iter().copied().sum::<T>()).collect();
                    accumulate(grads, *b, db);
                }
            }
            Op::RepeatBatch { x, n } => {
                let m = val(*x).len();
                let mut dx = vec![T::zero(); m];
                for k in 0..*n {
                    dx.iter_mut().zip(&dy[k * m..(k + 1) * m]).for_each(|(d, &g)| *d += g);
                }
                accumulate(grads, *x, dx);
            }
            Op::Add { a, b } => {
                if tracked(*a) {
                    accumulate(grads, *a, dy.to_vec());
                }
                if tracked(*b) {
                    accumulate(grads, *b, dy.to_vec());
                }
            }
            Op::Sub { a, b } => {
                if tracked(*a) {
                    accumulate(grads, *a, dy.to_vec());
                }
                if tracked(*b) {
                    accumulate(grads, *b, dy.iter().map(|&g| -g).collect());
                }
            }
            Op::Mul { a, b } => {
                if tracked(*a) {
                    let da = dy.iter().zip(val(*b).data()).map(|(&g, &v)| g * v).collect();
                    accumulate(grads, *a, da);
                }
                if tracked(*b) {
                    let db = dy.iter().zip(val(*a).data()).map(|(&g, &v)| g * v).collect();
                    accumulate(grads, *b, db);
                }
            }
            Op::Scale { x, k } => {
                accumulate(grads, *x, dy.iter().map(|&g| g * *k).collect());
            }
            Op::AddScalar { x } | Op::Reshape { x } => {
                accumulate(grads, *x, dy.to_vec());
            }
            Op::Square { x } => {
                let two = T::from_f64_lossy(2.0);
                let dx = val(*x).data().iter().zip(dy).map(|(&v, &g)| two * v * g).collect();
                accumulate(grads, *x, dx);
            }
            Op::Sum { x } => {
                accumulate(grads, *x, vec![dy[0]; val(*x).len()]);
            }
            Op::Gram { x } => {
                let (n, c, h, w) = val(*x).dims4();
                let p = h * w;
                let f = val(*x).data();
                let mut dx = vec![T::zero(); n * c * p];
                let mut sym = vec![T::zero(); c * c];
                for i in 0..n {
                    let g = &dy[i * c * c..(i + 1) * c * c];
                    for r in 0..c {
                        for q in 0..c {
                            sym[r * c + q] = g[r * c + q] + g[q * c + r];
                        }
                    }
                    T::gemm(
                        c,
                        c,
                        p,
                        T::one(),
                        &sym,
                        (c, 1),
                        &f[i * c * p..(i + 1) * c * p],
                        (p, 1),
                        T::zero(),
                        &mut dx[i * c * p..(i + 1) * c * p],
                        (p, 1),
                    );
                }
                accumulate(grads, *x, dx);
            }
            Op::Permute { x, idx } if tracked(*x) => {
                let mut dx = vec![T::zero(); dy.len()];
                for (&i, &g) in idx.iter().zip(dy) {
                    dx[i] = g;
                }
                accumulate(grads, *x, dx);
            }
            Op::Permute { .. } => {}
            Op::Clamp { x, lo, hi } => {
                let dx = val(*x)
                    .data()
                    .iter()
                    .zip(dy)
                    .map(|(&v, &g)| if v >= *lo && v <= *hi { g } else { T::zero() })
                    .collect();
                accumulate(grads, *x, dx);
            }
        }
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}

pub fn softplus<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        v + (-v).exp().ln_1p()
    } else {
        v.exp().ln_1p()
    }
}

pub fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}
