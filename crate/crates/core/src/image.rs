//! Planar images in `[-1, 1]`.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A `C x H x W` image stored plane by plane, values nominally in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Image<T = f32> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> Image<T> {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), channels * height * width, "image buffer size mismatch");
        Self { channels, height, width, data }
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: T) -> Self {
        Self::new(channels, height, width, vec![value; channels * height * width])
    }

    /// Builds an image from a per-pixel function returning one value per channel.
    pub fn from_fn(channels: usize, height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(channels, height, width, data)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> T {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: T) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn plane(&self, c: usize) -> &[T] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    /// `S x S` window with top-left corner at `(row, col)`.
    pub fn window(&self, row: usize, col: usize, size: usize) -> Self {
        assert!(row + size <= self.height && col + size <= self.width, "window out of bounds");
        Self::from_fn(self.channels, size, size, |c, y, x| self.get(c, row + y, col + x))
    }

    /// Unweighted channel mean, in `f64`.
    pub fn gray(&self) -> Vec<f64> {
        let n = self.height * self.width;
        let inv = 1.0 / self.channels as f64;
        (0..n)
            .map(|i| (0..self.channels).map(|c| self.data[c * n + i].to_f64_lossy()).sum::<f64>() * inv)
            .collect()
    }

    pub fn channel_mean(&self, c: usize) -> f64 {
        let p = self.plane(c);
        p.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / p.len() as f64
    }

    pub fn min_max(&self) -> (T, T) {
        self.data.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn clamp_unit(&mut self) {
        let one = T::one();
        self.data.iter_mut().for_each(|v| *v = v.max(-one).min(one));
    }

    pub fn cast<U: Scalar>(&self) -> Image<U> {
        Image {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
        }
    }

    /// `[1, C, H, W]` tensor view.
    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::from_vec(&[1, self.channels, self.height, self.width], self.data.clone())
    }

    /// Stacks images of identical shape into `[N, C, H, W]`.
    pub fn batch(images: &[&Image<T>]) -> Tensor<T> {
        let first = images.first().expect("batch of at least one image");
        let mut data = Vec::with_capacity(images.len() * first.data.len());
        for im in images {
            assert!(im.same_shape(first), "batch images must share a shape");
            data.extend_from_slice(&im.data);
        }
        Tensor::from_vec(&[images.len(), first.channels, first.height, first.width], data)
    }

    /// Sample `i` of an `[N, C, H, W]` tensor.
    pub fn from_batch(t: &Tensor<T>, i: usize) -> Self {
        let (_, c, h, w) = t.dims4();
        let n = c * h * w;
        Self::new(c, h, w, t.data()[i * n..(i + 1) * n].to_vec())
    }

    /// Mean squared pixel difference.
    pub fn mse(&self, other: &Self) -> f64 {
        assert!(self.same_shape(other));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| {
                let d = a.to_f64_lossy() - b.to_f64_lossy();
                d * d
            })
            .sum::<f64>()
            / self.data.len() as f64
    }

    /// Horizontal concatenation of equally sized images.
    pub fn hstack(images: &[Image<T>]) -> Self {
        let first = images.first().expect("at least one image");
        let (c, h, w) = (first.channels, first.height, first.width);
        Self::from_fn(c, h, w * images.len(), |ch, y, x| images[x / w].get(ch, y, x % w))
    }

    /// Circular shift by `(dy, dx)` pixels.
    pub fn roll(&self, dy: usize, dx: usize) -> Self {
        let (h, w) = (self.height, self.width);
        Self::from_fn(self.channels, h, w, |c, y, x| self.get(c, (y + h - dy % h) % h, (x + w - dx % w) % w))
    }
}
