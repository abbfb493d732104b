use crate::error::{invalid, Result};
use crate::image::Image;
use crate::scalar::Scalar;

/// Dense batch tensor in channel-major `C×N×H×W` layout.
///
/// Keeping channels outermost lets a convolution write its GEMM output
/// (`out_channels × N·H·W`) straight into the next activation, and makes
/// channel concatenation a plain append.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub c: usize,
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(c: usize, n: usize, h: usize, w: usize) -> Self {
        Self { c, n, h, w, data: vec![T::zero(); c * n * h * w] }
    }

    pub fn from_vec(c: usize, n: usize, h: usize, w: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), c * n * h * w, "tensor buffer length");
        Self { c, n, h, w, data }
    }

    pub fn from_fn(c: usize, n: usize, h: usize, w: usize, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(c * n * h * w);
        for ci in 0..c {
            for ni in 0..n {
                for y in 0..h {
                    for x in 0..w {
                        data.push(f(ci, ni, y, x));
                    }
                }
            }
        }
        Self { c, n, h, w, data }
    }

    #[inline]
    pub fn shape(&self) -> [usize; 4] {
        [self.c, self.n, self.h, self.w]
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.h * self.w
    }

    /// Elements per channel (`N·H·W`).
    #[inline]
    pub fn channel_len(&self) -> usize {
        self.n * self.h * self.w
    }

    #[inline]
    pub fn idx(&self, c: usize, n: usize, y: usize, x: usize) -> usize {
        ((c * self.n + n) * self.h + y) * self.w + x
    }

    #[inline]
    pub fn at(&self, c: usize, n: usize, y: usize, x: usize) -> T {
        self.data[self.idx(c, n, y, x)]
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let len = self.channel_len();
        &self.data[c * len..(c + 1) * len]
    }

    pub fn plane(&self, c: usize, n: usize) -> &[T] {
        let p = self.plane_len();
        let start = (c * self.n + n) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, c: usize, n: usize) -> &mut [T] {
        let p = self.plane_len();
        let start = (c * self.n + n) * p;
        &mut self.data[start..start + p]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape() == other.shape()
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert!(self.same_shape(other), "add: shape mismatch {:?} vs {:?}", self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: T) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stacks same-sized images into an `N`-batch.
    pub fn from_images(images: &[&Image<T>]) -> Result<Self> {
        let first = images.first().ok_or_else(|| invalid("empty image batch"))?;
        let (c, h, w) = first.dims();
        if images.iter().any(|im| im.dims() != (c, h, w)) {
            return Err(invalid("images in a batch must share dimensions"));
        }
        let n = images.len();
        let mut t = Self::zeros(c, n, h, w);
        for (ni, im) in images.iter().enumerate() {
            for ci in 0..c {
                t.plane_mut(ci, ni).copy_from_slice(im.plane(ci));
            }
        }
        Ok(t)
    }

    pub fn from_image(image: &Image<T>) -> Self {
        let (c, h, w) = image.dims();
        Self { c, n: 1, h, w, data: image.data().to_vec() }
    }

    pub fn image(&self, n: usize) -> Image<T> {
        let mut data = Vec::with_capacity(self.c * self.plane_len());
        for ci in 0..self.c {
            data.extend_from_slice(self.plane(ci, n));
        }
        Image::new(self.c, self.h, self.w, data).expect("plane sizes agree")
    }

    pub fn to_images(&self) -> Vec<Image<T>> {
        (0..self.n).map(|n| self.image(n)).collect()
    }

    /// Batch of per-sample vectors stored as `len×N×1×1`.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let len = rows.first().map(Vec::len).ok_or_else(|| invalid("empty vector batch"))?;
        if rows.iter().any(|r| r.len() != len) {
            return Err(invalid("vectors in a batch must share length"));
        }
        Ok(Self::from_fn(len, rows.len(), 1, 1, |c, n, _, _| rows[n][c]))
    }

    /// Inverse of [`Tensor::from_rows`] for `h = w = 1` tensors.
    pub fn rows(&self) -> Vec<Vec<T>> {
        assert_eq!(self.plane_len(), 1, "rows() needs a 1x1 spatial tensor");
        (0..self.n).map(|n| (0..self.c).map(|c| self.at(c, n, 0, 0)).collect()).collect()
    }
}

/// Appends channel blocks; all parts must share `N×H×W`.
pub fn concat_channels<T: Scalar>(parts: &[&Tensor<T>]) -> Tensor<T> {
    let first = parts[0];
    let (n, h, w) = (first.n, first.h, first.w);
    let mut c = 0;
    let mut data = Vec::with_capacity(parts.iter().map(|p| p.data.len()).sum());
    for p in parts {
        assert!(p.n == n && p.h == h && p.w == w, "concat: spatial/batch mismatch");
        c += p.c;
        data.extend_from_slice(&p.data);
    }
    Tensor { c, n, h, w, data }
}

/// Splits a tensor into consecutive channel blocks of the given sizes.
pub fn split_channels<T: Scalar>(t: &Tensor<T>, sizes: &[usize]) -> Vec<Tensor<T>> {
    assert_eq!(sizes.iter().sum::<usize>(), t.c, "split sizes must cover all channels");
    let len = t.channel_len();
    let mut out = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for &s in sizes {
        out.push(Tensor { c: s, n: t.n, h: t.h, w: t.w, data: t.data[start * len..(start + s) * len].to_vec() });
        start += s;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_batch_round_trip() {
        let a = Image::<f32>::from_fn(3, 2, 4, |c, y, x| (c * 8 + y * 4 + x) as f32);
        let b = a.map(|v| -v);
        let t = Tensor::from_images(&[&a, &b]).unwrap();
        assert_eq!(t.shape(), [3, 2, 2, 4]);
        assert_eq!(t.at(1, 1, 1, 2), -b.get(1, 1, 2) * -1.0);
        assert_eq!(t.to_images(), vec![a, b]);
    }

    #[test]
    fn concat_then_split_recovers_parts() {
        let a = Tensor::<f64>::from_fn(2, 3, 2, 2, |c, n, y, x| (c + 10 * n + 100 * y + 1000 * x) as f64);
        let b = Tensor::<f64>::from_fn(1, 3, 2, 2, |_, n, y, x| -((n + y + x) as f64));
        let cat = concat_channels(&[&a, &b]);
        assert_eq!(cat.c, 3);
        let parts = split_channels(&cat, &[2, 1]);
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }

    #[test]
    fn rows_round_trip() {
        let rows = vec![vec![1.0f32, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]];
        let t = Tensor::from_rows(&rows).unwrap();
        assert_eq!(t.shape(), [2, 3, 1, 1]);
        assert_eq!(t.rows(), rows);
    }
}
