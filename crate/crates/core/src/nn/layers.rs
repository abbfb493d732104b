//! Parameter-free layers and the fully connected layer.

use rand::Rng;

use super::conv::{Conv2d, ConvCache};
use super::param::{Module, Param};
use super::tensor::Tensor;
use crate::scalar::Scalar;

/// Negative slope used by every LeakyReLU in the networks.
pub const LEAKY_SLOPE: f64 = 0.1;

pub fn leaky_relu<T: Scalar>(mut x: Tensor<T>, slope: T) -> Tensor<T> {
    for v in &mut x.data {
        if *v < T::zero() {
            *v *= slope;
        }
    }
    x
}

/// Gradient through LeakyReLU given its output (same sign as its input).
pub fn leaky_relu_backward<T: Scalar>(y: &Tensor<T>, mut gy: Tensor<T>, slope: T) -> Tensor<T> {
    assert!(y.same_shape(&gy), "leaky backward: shape mismatch");
    for (g, &v) in gy.data.iter_mut().zip(&y.data) {
        if v < T::zero() {
            *g *= slope;
        }
    }
    gy
}

/// Rearranges `C·s²×N×H×W` into `C×N×sH×sW`.
///
/// Output pixel `(c, y·s+i, x·s+j)` comes from input channel `c·s² + i·s + j`.
pub fn pixel_shuffle<T: Scalar>(x: &Tensor<T>, s: usize) -> Tensor<T> {
    assert_eq!(x.c % (s * s), 0, "pixel shuffle: channels not divisible by s^2");
    let c_out = x.c / (s * s);
    let (oh, ow) = (x.h * s, x.w * s);
    let mut out = Tensor::zeros(c_out, x.n, oh, ow);
    for c in 0..c_out {
        for n in 0..x.n {
            for i in 0..s {
                for j in 0..s {
                    let src = x.plane(c * s * s + i * s + j, n);
                    let dst = out.plane_mut(c, n);
                    for y in 0..x.h {
                        for xx in 0..x.w {
                            dst[(y * s + i) * ow + xx * s + j] = src[y * x.w + xx];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Exact inverse of [`pixel_shuffle`]; also its backward pass.
pub fn pixel_unshuffle<T: Scalar>(y: &Tensor<T>, s: usize) -> Tensor<T> {
    assert!(y.h.is_multiple_of(s) && y.w.is_multiple_of(s), "pixel unshuffle: size not divisible by s");
    let (h, w) = (y.h / s, y.w / s);
    let mut out = Tensor::zeros(y.c * s * s, y.n, h, w);
    for c in 0..y.c {
        for n in 0..y.n {
            let src = y.plane(c, n);
            for i in 0..s {
                for j in 0..s {
                    let dst = out.plane_mut(c * s * s + i * s + j, n);
                    for yy in 0..h {
                        for xx in 0..w {
                            dst[yy * w + xx] = src[(yy * s + i) * y.w + xx * s + j];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Spatial mean per channel and sample: `C×N×H×W → C×N×1×1`.
pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let count = T::from_usize_c(x.plane_len());
    Tensor::from_fn(x.c, x.n, 1, 1, |c, n, _, _| x.plane(c, n).iter().copied().sum::<T>() / count)
}

pub fn global_avg_pool_backward<T: Scalar>(gy: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let inv = T::one() / T::from_usize_c(h * w);
    Tensor::from_fn(gy.c, gy.n, h, w, |c, n, _, _| gy.at(c, n, 0, 0) * inv)
}

/// Replicates `b×N×1×1` codes into spatially constant `b×N×H×W` maps.
pub fn stretch<T: Scalar>(codes: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    assert_eq!(codes.plane_len(), 1, "stretch expects 1x1 spatial codes");
    Tensor::from_fn(codes.c, codes.n, h, w, |c, n, _, _| codes.at(c, n, 0, 0))
}

pub fn stretch_backward<T: Scalar>(g_maps: &Tensor<T>) -> Tensor<T> {
    Tensor::from_fn(g_maps.c, g_maps.n, 1, 1, |c, n, _, _| g_maps.plane(c, n).iter().copied().sum())
}

/// Fully connected layer on `features×N×1×1` tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    inner: Conv2d<T>,
}

pub type LinearCache<T> = ConvCache<T>;

impl<T: Scalar> Linear<T> {
    pub fn new(in_features: usize, out_features: usize, rng: &mut impl Rng) -> Self {
        Self { inner: Conv2d::new(in_features, out_features, 1, 1.0, rng) }
    }

    pub fn in_features(&self) -> usize {
        self.inner.in_channels
    }

    pub fn out_features(&self) -> usize {
        self.inner.out_channels
    }

    fn check(x: &Tensor<T>) {
        assert_eq!(x.plane_len(), 1, "linear layer expects 1x1 spatial input");
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        Self::check(x);
        self.inner.forward(x)
    }

    pub fn forward_train(&self, x: &Tensor<T>) -> (Tensor<T>, LinearCache<T>) {
        Self::check(x);
        self.inner.forward_train(x)
    }

    pub fn backward(&mut self, cache: &LinearCache<T>, gy: &Tensor<T>, input_grad: bool) -> Option<Tensor<T>> {
        self.inner.backward(cache, gy, input_grad)
    }
}

impl<T: Scalar> Module<T> for Linear<T> {
    fn params(&self) -> Vec<&Param<T>> {
        self.inner.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.inner.params_mut()
    }
}
