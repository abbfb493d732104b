use rand::Rng;

use super::param::{Module, Param};
use super::tensor::Tensor;
use crate::scalar::Scalar;

/// Stride-1 "same" convolution with an odd square kernel and zero padding.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    /// `out × (in·k·k)`, row-major.
    pub weight: Param<T>,
    pub bias: Param<T>,
}

/// Saved unfolded input for the backward pass.
#[derive(Clone, Debug)]
pub struct ConvCache<T> {
    cols: Vec<T>,
    in_shape: [usize; 4],
}

impl<T: Scalar> Conv2d<T> {
    /// Kaiming-uniform initialisation for a LeakyReLU(0.1) network, scaled by `gain`.
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, gain: f64, rng: &mut impl Rng) -> Self {
        assert!(kernel % 2 == 1, "kernel size must be odd");
        let fan_in = (in_channels * kernel * kernel) as f64;
        let bound = gain * (6.0 / (1.01 * fan_in)).sqrt();
        Self {
            in_channels,
            out_channels,
            kernel,
            weight: Param::uniform(out_channels * in_channels * kernel * kernel, bound, rng),
            bias: Param::zeros(out_channels),
        }
    }

    fn taps(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn check_input(&self, x: &Tensor<T>) {
        assert_eq!(x.c, self.in_channels, "conv expects {} input channels, got {}", self.in_channels, x.c);
    }

    fn apply(&self, x: &Tensor<T>, cols: &[T]) -> Tensor<T> {
        let cols_n = x.channel_len();
        let mut y = Tensor::zeros(self.out_channels, x.n, x.h, x.w);
        for (o, chunk) in y.data.chunks_mut(cols_n).enumerate() {
            chunk.fill(self.bias.value[o]);
        }
        let k = self.taps();
        T::gemm(
            self.out_channels,
            k,
            cols_n,
            T::one(),
            &self.weight.value,
            k as isize,
            1,
            cols,
            cols_n as isize,
            1,
            T::one(),
            &mut y.data,
            cols_n as isize,
            1,
        );
        y
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        self.check_input(x);
        if self.kernel == 1 {
            return self.apply(x, &x.data);
        }
        let cols = im2col(x, self.kernel);
        self.apply(x, &cols)
    }

    pub fn forward_train(&self, x: &Tensor<T>) -> (Tensor<T>, ConvCache<T>) {
        self.check_input(x);
        let cols = if self.kernel == 1 { x.data.clone() } else { im2col(x, self.kernel) };
        let y = self.apply(x, &cols);
        (y, ConvCache { cols, in_shape: x.shape() })
    }

    /// Accumulates parameter gradients; returns the input gradient when asked.
    pub fn backward(&mut self, cache: &ConvCache<T>, gy: &Tensor<T>, input_grad: bool) -> Option<Tensor<T>> {
        let [c, n, h, w] = cache.in_shape;
        let cols_n = n * h * w;
        assert_eq!(gy.shape(), [self.out_channels, n, h, w], "conv backward: grad shape");
        let k = self.taps();

        // dW += dY · colsᵀ
        T::gemm(
            self.out_channels,
            cols_n,
            k,
            T::one(),
            &gy.data,
            cols_n as isize,
            1,
            &cache.cols,
            1,
            cols_n as isize,
            T::one(),
            &mut self.weight.grad,
            k as isize,
            1,
        );
        for (o, chunk) in gy.data.chunks(cols_n).enumerate() {
            self.bias.grad[o] += chunk.iter().copied().sum::<T>();
        }
        if !input_grad {
            return None;
        }

        // dCols = Wᵀ · dY
        let mut gcols = vec![T::zero(); k * cols_n];
        T::gemm(
            k,
            self.out_channels,
            cols_n,
            T::one(),
            &self.weight.value,
            1,
            k as isize,
            &gy.data,
            cols_n as isize,
            1,
            T::zero(),
            &mut gcols,
            cols_n as isize,
            1,
        );
        if self.kernel == 1 {
            return Some(Tensor::from_vec(c, n, h, w, gcols));
        }
        Some(col2im(&gcols, [c, n, h, w], self.kernel))
    }
}

impl<T: Scalar> Module<T> for Conv2d<T> {
    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

// Valid output-column range for a horizontal tap offset `dx`.
#[inline]
fn valid_range(len: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (len as isize - d).clamp(0, len as isize) as usize;
    (lo.min(hi), hi)
}

/// Unfolds `x` into a `(C·k·k) × (N·H·W)` matrix with zero padding.
pub fn im2col<T: Scalar>(x: &Tensor<T>, k: usize) -> Vec<T> {
    let (n, h, w) = (x.n, x.h, x.w);
    let pad = (k / 2) as isize;
    let cols_n = n * h * w;
    let mut cols = vec![T::zero(); x.c * k * k * cols_n];
    let mut row = 0;
    for c in 0..x.c {
        for ky in 0..k {
            let dy = ky as isize - pad;
            for kx in 0..k {
                let dx = kx as isize - pad;
                let (x_lo, x_hi) = valid_range(w, dx);
                let dst_row = &mut cols[row * cols_n..(row + 1) * cols_n];
                for ni in 0..n {
                    let src = x.plane(c, ni);
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize || x_lo >= x_hi {
                            continue;
                        }
                        let s0 = sy as usize * w;
                        let d0 = (ni * h + y) * w;
                        let sx_lo = (x_lo as isize + dx) as usize;
                        dst_row[d0 + x_lo..d0 + x_hi].copy_from_slice(&src[s0 + sx_lo..s0 + sx_lo + (x_hi - x_lo)]);
                    }
                }
                row += 1;
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input grid.
pub fn col2im<T: Scalar>(cols: &[T], shape: [usize; 4], k: usize) -> Tensor<T> {
    let [c_in, n, h, w] = shape;
    let pad = (k / 2) as isize;
    let cols_n = n * h * w;
    let mut out = Tensor::zeros(c_in, n, h, w);
    let mut row = 0;
    for c in 0..c_in {
        for ky in 0..k {
            let dy = ky as isize - pad;
            for kx in 0..k {
                let dx = kx as isize - pad;
                let (x_lo, x_hi) = valid_range(w, dx);
                let src_row = &cols[row * cols_n..(row + 1) * cols_n];
                for ni in 0..n {
                    let dst = out.plane_mut(c, ni);
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize || x_lo >= x_hi {
                            continue;
                        }
                        let s0 = sy as usize * w;
                        let d0 = (ni * h + y) * w;
                        let sx_lo = (x_lo as isize + dx) as usize;
                        for (o, &g) in
                            dst[s0 + sx_lo..s0 + sx_lo + (x_hi - x_lo)].iter_mut().zip(&src_row[d0 + x_lo..d0 + x_hi])
                        {
                            *o += g;
                        }
                    }
                }
                row += 1;
            }
        }
    }
    out
}
