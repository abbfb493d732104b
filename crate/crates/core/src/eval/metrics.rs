//! PSNR and SSIM on `[0, 1]` images, no border crop.

use crate::error::{invalid, Result};
use crate::image::Image;
use crate::scalar::Scalar;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn check_shapes<T: Scalar>(a: &Image<T>, b: &Image<T>) -> Result<()> {
    if !a.same_shape(b) {
        return Err(invalid(format!("image shapes differ: {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

pub fn mse<T: Scalar>(a: &Image<T>, b: &Image<T>) -> Result<f64> {
    check_shapes(a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.to_f64c() - y.to_f64c();
            d * d
        })
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// `10·log10(1 / MSE)`; identical images give `+∞`.
pub fn psnr<T: Scalar>(a: &Image<T>, b: &Image<T>) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / m).log10())
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w: Vec<f64> = (0..SSIM_WINDOW * SSIM_WINDOW)
        .map(|i| {
            let (y, x) = ((i / SSIM_WINDOW) as f64 - r, (i % SSIM_WINDOW) as f64 - r);
            (-(x * x + y * y) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Mean SSIM over all fully covered 11×11 windows, averaged over channels.
pub fn ssim<T: Scalar>(a: &Image<T>, b: &Image<T>) -> Result<f64> {
    check_shapes(a, b)?;
    let (c, h, w) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(invalid(format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}")));
    }
    let win = gaussian_window();
    let c1 = (K1 * 1.0).powi(2);
    let c2 = (K2 * 1.0).powi(2);
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut total = 0.0;
    for ch in 0..c {
        let pa = a.plane(ch);
        let pb = b.plane(ch);
        let mut acc = 0.0;
        for y in 0..oh {
            for x in 0..ow {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for ky in 0..SSIM_WINDOW {
                    let row = (y + ky) * w + x;
                    for kx in 0..SSIM_WINDOW {
                        let g = win[ky * SSIM_WINDOW + kx];
                        let va = pa[row + kx].to_f64c();
                        let vb = pb[row + kx].to_f64c();
                        ma += g * va;
                        mb += g * vb;
                        saa += g * va * va;
                        sbb += g * vb * vb;
                        sab += g * va * vb;
                    }
                }
                let var_a = saa - ma * ma;
                let var_b = sbb - mb * mb;
                let cov = sab - ma * mb;
                acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
            }
        }
        total += acc / (oh * ow) as f64;
    }
    Ok(total / c as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(seed: usize) -> Image<f64> {
        Image::from_fn(3, 16, 14, |c, y, x| ((c * 3 + y * 5 + x * 7 + seed * 11) % 19) as f64 / 18.0)
    }

    #[test]
    fn psnr_basics() {
        let a = fixture(0);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let base = Image::filled(3, 4, 4, 0.25f64);
        let off = base.map(|v| v + 0.1);
        assert!((psnr(&base, &off).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr(&a, &Image::filled(3, 16, 13, 0.0)).is_err());
    }

    #[test]
    fn psnr_symmetric_and_monotone() {
        let a = fixture(1);
        let b = fixture(2);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        let base = Image::filled(3, 6, 6, 0.5f64);
        let mut last = f64::INFINITY;
        for eps in [0.001, 0.01, 0.05, 0.2] {
            let p = psnr(&base, &base.map(|v| v + eps)).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn ssim_basics() {
        let a = fixture(3);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let neg = a.map(|v| 1.0 - v);
        assert!(ssim(&a, &neg).unwrap() < 0.5);
        let b = fixture(4);
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-15);
        assert!(ssim(&Image::filled(3, 10, 20, 0.5f64), &Image::filled(3, 10, 20, 0.5)).is_err());
    }
}
