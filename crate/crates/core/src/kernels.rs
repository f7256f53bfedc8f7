//! Raw numeric kernels shared by the autodiff tape and the metrics.

use crate::scalar::Scalar;

/// Geometry of a square-kernel 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        let oh = (self.height + 2 * self.pad - self.kernel) / self.stride + 1;
        let ow = (self.width + 2 * self.pad - self.kernel) / self.stride + 1;
        (oh, ow)
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }
}

/// Unfolds one sample `[C, H, W]` into `[C*k*k, Ho*Wo]` with zero padding.
pub fn im2col<T: Scalar>(x: &[T], g: ConvGeom, cols: &mut [T]) {
    let (oh, ow) = g.out_hw();
    let p = oh * ow;
    debug_assert_eq!(cols.len(), g.col_rows() * p);
    let k = g.kernel;
    for c in 0..g.channels {
        let plane = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= g.height as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, out) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *out = if ix < 0 || ix >= g.width as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into `[C, H, W]`.
pub fn col2im<T: Scalar>(cols: &[T], g: ConvGeom, x: &mut [T]) {
    let (oh, ow) = g.out_hw();
    let p = oh * ow;
    let k = g.kernel;
    for c in 0..g.channels {
        let plane = &mut x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let base = iy as usize * g.width;
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.width {
                            plane[base + ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Forward convolution over a batch `[N, C, H, W]` with weights `[O, C, k, k]`.
pub fn conv2d_forward<T: Scalar>(
    x: &[T],
    n: usize,
    g: ConvGeom,
    weight: &[T],
    out_channels: usize,
    bias: Option<&[T]>,
) -> Vec<T> {
    let (oh, ow) = g.out_hw();
    let p = oh * ow;
    let rows = g.col_rows();
    let in_len = g.channels * g.height * g.width;
    let mut out = vec![T::zero(); n * out_channels * p];
    let mut cols = vec![T::zero(); rows * p];
    for i in 0..n {
        im2col(&x[i * in_len..(i + 1) * in_len], g, &mut cols);
        let y = &mut out[i * out_channels * p..(i + 1) * out_channels * p];
        if let Some(b) = bias {
            for (o, chunk) in y.chunks_mut(p).enumerate() {
                chunk.fill(b[o]);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        T::gemm(out_channels, rows, p, T::one(), weight, (rows, 1), &cols, (p, 1), beta, y, (p, 1));
    }
    out
}

/// Gradients of [`conv2d_forward`]. Returns `(dx, dweight, dbias)` for the requested parts.
#[allow(clippy::too_many_arguments, clippy::type_complexity)]
pub fn conv2d_backward<T: Scalar>(
    x: &[T],
    n: usize,
    g: ConvGeom,
    weight: &[T],
    out_channels: usize,
    dy: &[T],
    want_dx: bool,
    want_dw: bool,
    want_db: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>) {
    let (oh, ow) = g.out_hw();
    let p = oh * ow;
    let rows = g.col_rows();
    let in_len = g.channels * g.height * g.width;
    let mut dx = want_dx.then(|| vec![T::zero(); n * in_len]);
    let mut dw = want_dw.then(|| vec![T::zero(); out_channels * rows]);
    let mut db = want_db.then(|| vec![T::zero(); out_channels]);
    let mut cols = vec![T::zero(); rows * p];
    let mut dcols = if want_dx { vec![T::zero(); rows * p] } else { Vec::new() };
    for i in 0..n {
        let dyi = &dy[i * out_channels * p..(i + 1) * out_channels * p];
        if let Some(db) = db.as_mut() {
            for (o, chunk) in dyi.chunks(p).enumerate() {
                db[o] += chunk.iter().copied().sum::<T>();
            }
        }
        if let Some(dw) = dw.as_mut() {
            im2col(&x[i * in_len..(i + 1) * in_len], g, &mut cols);
            // dW[O, rows] += dY[O, P] * cols^T[P, rows]
            T::gemm(out_channels, p, rows, T::one(), dyi, (p, 1), &cols, (1, p), T::one(), dw, (rows, 1));
        }
        if let Some(dx) = dx.as_mut() {
            // dcols[rows, P] = W^T[rows, O] * dY[O, P]
            T::gemm(rows, out_channels, p, T::one(), weight, (1, rows), dyi, (p, 1), T::zero(), &mut dcols, (p, 1));
            col2im(&dcols, g, &mut dx[i * in_len..(i + 1) * in_len]);
        }
    }
    (dx, dw, db)
}

/// Separable correlation of a single plane with symmetric edge reflection.
pub fn filter_separable(plane: &[f64], h: usize, w: usize, kx: &[f64], ky: &[f64]) -> Vec<f64> {
    let rx = kx.len() / 2;
    let ry = ky.len() / 2;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &k) in kx.iter().enumerate() {
                let xx = reflect(x as isize + i as isize - rx as isize, w);
                acc += k * plane[y * w + xx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &k) in ky.iter().enumerate() {
                let yy = reflect(y as isize + i as isize - ry as isize, h);
                acc += k * tmp[yy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Whole-sample symmetric reflection (`d c b | a b c d | c b a`), repeated as needed.
pub fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}
