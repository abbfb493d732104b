//! Degradation model `LR = (k ⊗ HR)↓s + n` and training-pair synthesis.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, io_err, IkcError, Result};
use crate::image::Image;
use crate::kernels::{BlurKernel, KernelCode, PcaCodec};
use crate::scalar::Scalar;

/// Per-channel 2-D convolution with symmetric (edge-duplicating) padding.
///
/// Output size equals input size. The kernel is applied as a true
/// convolution, so blurring a centred impulse reproduces the kernel itself.
pub fn blur<T: Scalar>(img: &Image<T>, k: &BlurKernel<T>) -> Result<Image<T>> {
    let (c, h, w) = img.dims();
    let size = k.size();
    let r = size / 2;
    if r > h || r > w {
        return Err(invalid(format!("kernel of side {size} exceeds padded {h}x{w} image")));
    }
    let (ph, pw) = (h + 2 * r, w + 2 * r);
    let mut padded = vec![T::zero(); ph * pw];
    let mut out = Image::zeros(c, h, w);
    // Flipped taps turn the inner loop into a correlation over the padded plane.
    let flipped: Vec<T> = k.values().iter().rev().copied().collect();
    for ch in 0..c {
        let plane = img.plane(ch);
        for py in 0..ph {
            let sy = symmetric_index(py as isize - r as isize, h);
            for px in 0..pw {
                let sx = symmetric_index(px as isize - r as isize, w);
                padded[py * pw + px] = plane[sy * w + sx];
            }
        }
        let dst = out.plane_mut(ch);
        for y in 0..h {
            for x in 0..w {
                let mut acc = T::zero();
                for ky in 0..size {
                    let row = &padded[(y + ky) * pw + x..(y + ky) * pw + x + size];
                    let taps = &flipped[ky * size..(ky + 1) * size];
                    for (&a, &b) in row.iter().zip(taps) {
                        acc += a * b;
                    }
                }
                dst[y * w + x] = acc;
            }
        }
    }
    Ok(out)
}

/// Mirror index with edge duplication: `… 1 0 | 0 1 2 … n-1 | n-1 n-2 …`.
fn symmetric_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Keys cubic convolution kernel with `a = -0.5`.
fn cubic(x: f64) -> f64 {
    let ax = x.abs();
    let ax2 = ax * ax;
    let ax3 = ax2 * ax;
    if ax <= 1.0 {
        1.5 * ax3 - 2.5 * ax2 + 1.0
    } else if ax <= 2.0 {
        -0.5 * ax3 + 2.5 * ax2 - 4.0 * ax + 2.0
    } else {
        0.0
    }
}

/// Resampling taps for one axis: `(source indices, normalised weights)` per output sample.
fn contributions(in_len: usize, out_len: usize, scale: f64) -> Vec<(Vec<usize>, Vec<f64>)> {
    let antialias = scale < 1.0;
    let width = if antialias { 4.0 / scale } else { 4.0 };
    let taps = width.ceil() as isize + 2;
    (0..out_len)
        .map(|o| {
            // 1-based pixel-centre convention, as in the common reference resizer.
            let u = (o + 1) as f64 / scale + 0.5 * (1.0 - 1.0 / scale);
            let left = (u - width / 2.0).floor() as isize;
            let mut idx = Vec::with_capacity(taps as usize);
            let mut wts = Vec::with_capacity(taps as usize);
            for t in 0..taps {
                let j = left + t;
                let d = u - j as f64;
                let wt = if antialias { scale * cubic(scale * d) } else { cubic(d) };
                if wt != 0.0 {
                    idx.push(symmetric_index(j - 1, in_len));
                    wts.push(wt);
                }
            }
            let total: f64 = wts.iter().sum();
            wts.iter_mut().for_each(|v| *v /= total);
            (idx, wts)
        })
        .collect()
}

/// Separable bicubic resize by `scale` (output side `ceil(side·scale)`), clamped to `[0,1]`.
pub fn bicubic_resize<T: Scalar>(img: &Image<T>, scale: f64) -> Result<Image<T>> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(invalid(format!("resize scale must be positive, got {scale}")));
    }
    let (_, h, w) = img.dims();
    let oh = ((h as f64 * scale) - 1e-9).ceil() as usize;
    let ow = ((w as f64 * scale) - 1e-9).ceil() as usize;
    if oh == 0 || ow == 0 {
        return Err(invalid(format!("resize of {h}x{w} by {scale} is empty")));
    }
    bicubic_resize_to(img, oh, ow, scale)
}

fn bicubic_resize_to<T: Scalar>(img: &Image<T>, oh: usize, ow: usize, scale: f64) -> Result<Image<T>> {
    let (c, h, w) = img.dims();
    let rows = contributions(h, oh, scale);
    let cols = contributions(w, ow, scale);
    let mut out = Image::zeros(c, oh, ow);
    let mut tmp = vec![0.0f64; oh * w];
    for ch in 0..c {
        let src = img.plane(ch);
        // vertical pass first, as the reference resizer does for downscaling
        for (oy, (idx, wts)) in rows.iter().enumerate() {
            for x in 0..w {
                tmp[oy * w + x] = idx.iter().zip(wts).map(|(&i, &wt)| src[i * w + x].to_f64c() * wt).sum();
            }
        }
        let dst = out.plane_mut(ch);
        for oy in 0..oh {
            for (ox, (idx, wts)) in cols.iter().enumerate() {
                let v: f64 = idx.iter().zip(wts).map(|(&i, &wt)| tmp[oy * w + i] * wt).sum();
                dst[oy * ow + ox] = T::from_f64c(v.clamp(0.0, 1.0));
            }
        }
    }
    Ok(out)
}

/// Keeps the top-left pixel of every `s×s` block.
pub fn direct_downsample<T: Scalar>(img: &Image<T>, s: usize) -> Result<Image<T>> {
    if s < 2 {
        return Err(invalid(format!("direct downsampling factor must be >= 2, got {s}")));
    }
    let (c, h, w) = img.dims();
    if h < s || w < s {
        return Err(invalid(format!("{h}x{w} image is smaller than factor {s}")));
    }
    Ok(Image::from_fn(c, h / s, w / s, |ch, y, x| img.get(ch, y * s, x * s)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Downsampler {
    Bicubic,
    Direct,
}

impl std::str::FromStr for Downsampler {
    type Err = IkcError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bicubic" => Ok(Self::Bicubic),
            "direct" => Ok(Self::Direct),
            other => Err(invalid(format!("unknown downsampler {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DegradationSpec<T> {
    pub scale: usize,
    pub kernel: BlurKernel<T>,
    pub downsampler: Downsampler,
    /// Standard deviation on the 0–255 scale.
    pub noise_sigma_255: f64,
}

impl<T: Scalar> DegradationSpec<T> {
    pub fn new(scale: usize, kernel: BlurKernel<T>, downsampler: Downsampler, noise_sigma_255: f64) -> Result<Self> {
        if !(2..=4).contains(&scale) {
            return Err(invalid(format!("scale must be 2, 3 or 4; got {scale}")));
        }
        if !(noise_sigma_255 >= 0.0) {
            return Err(invalid(format!("noise level must be >= 0, got {noise_sigma_255}")));
        }
        Ok(Self { scale, kernel, downsampler, noise_sigma_255 })
    }

    pub fn gaussian(
        scale: usize,
        sigma: f64,
        kernel_size: usize,
        downsampler: Downsampler,
        noise: f64,
    ) -> Result<Self> {
        Self::new(scale, BlurKernel::<f64>::gaussian(sigma, kernel_size)?.cast(), downsampler, noise)
    }
}

/// Blur, downsample, add Gaussian noise, clamp. Deterministic in `seed`.
pub fn degrade<T: Scalar>(hr: &Image<T>, spec: &DegradationSpec<T>, seed: u64) -> Result<Image<T>> {
    let s = spec.scale;
    if !hr.height().is_multiple_of(s) || !hr.width().is_multiple_of(s) {
        return Err(invalid(format!(
            "HR size {}x{} is not divisible by scale {s}; crop first",
            hr.height(),
            hr.width()
        )));
    }
    let blurred = blur(hr, &spec.kernel)?;
    let mut lr = match spec.downsampler {
        Downsampler::Bicubic => bicubic_resize_to(&blurred, hr.height() / s, hr.width() / s, 1.0 / s as f64)?,
        Downsampler::Direct => direct_downsample(&blurred, s)?,
    };
    if spec.noise_sigma_255 > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma_255 / 255.0).map_err(|e| invalid(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in lr.data_mut() {
            *v += T::from_f64c(normal.sample(&mut rng));
        }
    }
    Ok(lr.clamp01())
}

/// Mean squared 3×3 Laplacian response, a scalar sharpness proxy.
pub fn laplacian_energy<T: Scalar>(img: &Image<T>) -> f64 {
    let (c, h, w) = img.dims();
    if h < 3 || w < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let v = img.get(ch, y - 1, x).to_f64c()
                    + img.get(ch, y + 1, x).to_f64c()
                    + img.get(ch, y, x - 1).to_f64c()
                    + img.get(ch, y, x + 1).to_f64c()
                    - 4.0 * img.get(ch, y, x).to_f64c();
                acc += v * v;
                count += 1;
            }
        }
    }
    acc / count as f64
}

/// One synthesised training example.
#[derive(Clone, Debug)]
pub struct TrainingPair<T> {
    pub lr: Image<T>,
    pub hr: Image<T>,
    pub code: KernelCode<T>,
    pub spec: DegradationSpec<T>,
    pub choices: PairChoices,
}

/// Every random decision behind one pair; a pure function of `(seed, index)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairChoices {
    pub index: u64,
    pub sigma: f64,
    pub image: usize,
    pub top: usize,
    pub left: usize,
    pub flip: bool,
    pub quarter_turns: u8,
    pub noise_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub scale: usize,
    pub width_range: (f64, f64),
    pub patch_size: usize,
    pub noise_sigma_255: f64,
    pub kernel_size: usize,
    pub downsampler: Downsampler,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate<T: Scalar>(&self, codec: Option<&PcaCodec<T>>) -> Result<()> {
        if !(2..=4).contains(&self.scale) {
            return Err(invalid(format!("scale must be 2, 3 or 4; got {}", self.scale)));
        }
        if self.patch_size == 0 || !self.patch_size.is_multiple_of(self.scale) {
            return Err(invalid(format!(
                "patch size {} must be a positive multiple of {}",
                self.patch_size, self.scale
            )));
        }
        let (lo, hi) = self.width_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(invalid(format!("bad width range [{lo}, {hi}]")));
        }
        if let Some(codec) = codec {
            let (clo, chi) = codec.width_range();
            // codec files store the range as f32
            let tol = 1e-6 * chi.max(1.0);
            if lo < clo - tol || hi > chi + tol {
                return Err(invalid(format!("width range [{lo}, {hi}] lies outside the codec's [{clo}, {chi}]")));
            }
            if codec.kernel_size() != self.kernel_size {
                return Err(invalid("kernel size differs from the codec's"));
            }
        }
        Ok(())
    }
}

/// Independent RNG stream for pair `index`; serial and parallel generation agree.
pub fn pair_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draws the random decisions for pair `index` given the usable image sizes.
pub fn sample_choices(cfg: &SynthConfig, sizes: &[(usize, usize)], index: u64) -> Result<PairChoices> {
    let usable: Vec<usize> =
        (0..sizes.len()).filter(|&i| sizes[i].0 >= cfg.patch_size && sizes[i].1 >= cfg.patch_size).collect();
    if usable.is_empty() {
        return Err(IkcError::NoData(format!("no HR image is at least {0}x{0}", cfg.patch_size)));
    }
    let mut rng = pair_rng(cfg.seed, index);
    let (lo, hi) = cfg.width_range;
    let sigma = if hi > lo { rng.random_range(lo..hi) } else { lo };
    let image = usable[rng.random_range(0..usable.len())];
    let (h, w) = sizes[image];
    let top = rng.random_range(0..=h - cfg.patch_size);
    let left = rng.random_range(0..=w - cfg.patch_size);
    let flip = rng.random_bool(0.5);
    let quarter_turns = rng.random_range(0..4u8);
    let noise_seed = rng.random();
    Ok(PairChoices { index, sigma, image, top, left, flip, quarter_turns, noise_seed })
}

/// Builds pair `index`: crop, augment, degrade, encode.
pub fn synth_pair<T: Scalar>(
    cfg: &SynthConfig,
    images: &[Image<T>],
    codec: Option<&PcaCodec<T>>,
    index: u64,
) -> Result<TrainingPair<T>> {
    let sizes: Vec<(usize, usize)> = images.iter().map(|im| (im.height(), im.width())).collect();
    let choices = sample_choices(cfg, &sizes, index)?;
    let mut hr = images[choices.image].crop(choices.top, choices.left, cfg.patch_size, cfg.patch_size)?;
    if choices.flip {
        hr = hr.flip_horizontal();
    }
    hr = hr.rotate90(choices.quarter_turns);
    let spec =
        DegradationSpec::gaussian(cfg.scale, choices.sigma, cfg.kernel_size, cfg.downsampler, cfg.noise_sigma_255)?;
    let lr = degrade(&hr, &spec, choices.noise_seed)?;
    let code = match codec {
        Some(codec) => codec.encode(&spec.kernel)?,
        None => KernelCode::width(T::from_f64c(choices.sigma)),
    };
    Ok(TrainingPair { lr, hr, code, spec, choices })
}

/// Sorted PNG paths in `dir`.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    Ok(paths)
}

/// Loads every PNG in `dir`, skipping (with a warning) images smaller than `min_side`.
pub fn load_hr_dir<T: Scalar>(dir: &Path, min_side: usize) -> Result<Vec<Image<T>>> {
    let paths = list_pngs(dir)?;
    if paths.is_empty() {
        return Err(IkcError::NoData(format!("no PNG images in {}", dir.display())));
    }
    let mut out = Vec::with_capacity(paths.len());
    for p in &paths {
        let img = Image::load_png(p)?;
        if img.height() < min_side || img.width() < min_side {
            log::warn!("skipping {}: smaller than {min_side}x{min_side}", p.display());
            continue;
        }
        out.push(img);
    }
    if out.is_empty() {
        return Err(IkcError::NoData(format!("every image in {} is smaller than the patch", dir.display())));
    }
    Ok(out)
}

/// Lazily generated stream of training pairs from an HR directory.
pub fn synth_dataset<T: Scalar>(
    hr_dir: &Path,
    cfg: SynthConfig,
    count: u64,
    codec: Option<PcaCodec<T>>,
) -> Result<impl Iterator<Item = Result<TrainingPair<T>>>> {
    cfg.validate(codec.as_ref())?;
    let images = load_hr_dir::<T>(hr_dir, cfg.patch_size)?;
    Ok((0..count).map(move |i| synth_pair(&cfg, &images, codec.as_ref(), i)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest};

    fn textured(c: usize, h: usize, w: usize) -> Image<f64> {
        Image::from_fn(c, h, w, |ch, y, x| {
            let v = ((x * 7 + y * 13 + ch * 5) % 17) as f64 / 16.0;
            0.25 + 0.5 * v
        })
    }

    #[test]
    fn delta_blur_is_identity() {
        let img = textured(3, 12, 11);
        let out = blur(&img, &BlurKernel::delta(21).unwrap()).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn blur_preserves_constants() {
        let img = Image::<f64>::filled(3, 24, 24, 0.5);
        let out = blur(&img, &BlurKernel::gaussian(2.0, 21).unwrap()).unwrap();
        assert!(out.data().iter().all(|v| (v - 0.5).abs() < 1e-6));
    }

    #[test]
    fn impulse_response_reproduces_kernel() {
        // Dense oracle: out(y,x) = sum_{i,j} k(i,j) img(y-i+c, x-j+c) on a 41x41 impulse.
        let k = BlurKernel::<f64>::gaussian(1.7, 21).unwrap();
        let mut img = Image::zeros(1, 41, 41);
        img.set(0, 20, 20, 1.0);
        let out = blur(&img, &k).unwrap();
        for i in 0..21 {
            for j in 0..21 {
                let mut want = 0.0;
                for a in 0..21 {
                    for b in 0..21 {
                        let (y, x) = (10 + i as isize - (a as isize - 10), 10 + j as isize - (b as isize - 10));
                        if y == 20 && x == 20 {
                            want += k.get(a, b);
                        }
                    }
                }
                assert!((out.get(0, 10 + i, 10 + j) - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn blur_rejects_oversized_kernel() {
        let img = textured(1, 8, 30);
        assert!(blur(&img, &BlurKernel::gaussian(1.0, 21).unwrap()).is_err());
    }

    #[test]
    fn unit_resize_is_identity() {
        let img = textured(3, 10, 7);
        let out = bicubic_resize(&img, 1.0).unwrap();
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn resize_preserves_constants() {
        let img = Image::<f64>::filled(3, 16, 16, 0.37);
        for s in [0.5, 1.0 / 3.0, 0.25, 2.0] {
            let out = bicubic_resize(&img, s).unwrap();
            assert!(out.data().iter().all(|v| (v - 0.37).abs() < 1e-6));
        }
    }

    #[test]
    fn half_resize_of_ramp_is_ramp() {
        // Interior hand computation: output sample o sits at input coordinate
        // u = 2(o+1) - 0.5 (1-based), so a ramp f(x) = a + b·x maps to
        // a + b·(2o + 0.5) in 0-based input units because the scaled cubic
        // weights reproduce affine functions.
        let (a, b) = (0.1, 0.02);
        let img = Image::from_fn(1, 8, 32, |_, _, x| a + b * x as f64);
        let out = bicubic_resize(&img, 0.5).unwrap();
        assert_eq!(out.dims(), (1, 4, 16));
        for o in 2..14 {
            let want = a + b * (2.0 * o as f64 + 0.5);
            assert!((out.get(0, 1, o) - want).abs() < 1e-3, "o={o}");
        }
    }

    #[test]
    fn direct_downsample_keeps_top_left() {
        let img = Image::from_fn(1, 4, 4, |_, y, x| (y * 4 + x) as f64 / 16.0);
        let out = direct_downsample(&img, 2).unwrap();
        assert_eq!(out.data(), &[0.0, 2.0 / 16.0, 8.0 / 16.0, 10.0 / 16.0]);
        let flat = Image::filled(3, 6, 6, 0.3);
        assert!(direct_downsample(&flat, 3).unwrap().data().iter().all(|&v| v == 0.3));
    }

    #[test]
    fn direct_downsample_checkerboard() {
        // sampled indices are 0,3,6 in each axis; parity of (y+x) at those points
        let img = Image::from_fn(1, 9, 9, |_, y, x| ((y + x) % 2) as f64);
        let out = direct_downsample(&img, 3).unwrap();
        let want: Vec<f64> = (0..3).flat_map(|y| (0..3).map(move |x| ((3 * y + 3 * x) % 2) as f64)).collect();
        assert_eq!(out.data(), &want[..]);
    }

    #[test]
    fn noiseless_delta_degrade_equals_resize() {
        let hr = textured(3, 16, 16);
        let spec = DegradationSpec::new(2, BlurKernel::delta(21).unwrap(), Downsampler::Bicubic, 0.0).unwrap();
        let lr = degrade(&hr, &spec, 7).unwrap();
        let want = bicubic_resize(&hr, 0.5).unwrap();
        for (a, b) in lr.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn noise_mean_within_standard_error() {
        let hr = Image::filled(3, 128, 128, 0.5);
        let spec = DegradationSpec::gaussian(2, 1.0, 21, Downsampler::Bicubic, 15.0).unwrap();
        let lr = degrade(&hr, &spec, 42).unwrap();
        let n = lr.data().len() as f64;
        let bound = 3.0 * (15.0 / 255.0) / n.sqrt();
        assert!((lr.mean() - 0.5).abs() < bound);
    }

    #[test]
    fn degrade_is_deterministic_and_checks_divisibility() {
        let hr = textured(3, 24, 24).cast::<f32>();
        let spec = DegradationSpec::gaussian(3, 1.2, 21, Downsampler::Bicubic, 15.0).unwrap();
        let a = degrade(&hr, &spec, 11).unwrap();
        let b = degrade(&hr, &spec, 11).unwrap();
        assert_eq!(a.data(), b.data());
        let odd = textured(3, 25, 24).cast::<f32>();
        assert!(matches!(degrade(&odd, &spec, 0), Err(IkcError::InvalidParameter(_))));
    }

    #[test]
    fn noiseless_degrade_composes_blur_then_downsample() {
        let hr = textured(3, 24, 24);
        for ds in [Downsampler::Bicubic, Downsampler::Direct] {
            let spec = DegradationSpec::gaussian(2, 1.4, 21, ds, 0.0).unwrap();
            let got = degrade(&hr, &spec, 0).unwrap();
            let blurred = blur(&hr, &spec.kernel).unwrap();
            let want = match ds {
                Downsampler::Bicubic => bicubic_resize(&blurred, 0.5).unwrap(),
                Downsampler::Direct => direct_downsample(&blurred, 2).unwrap().clamp01(),
            };
            assert_eq!(got, want);
        }
    }

    #[test]
    fn growing_blur_reduces_high_frequency_energy() {
        let hr = crate::toyset::toy_image::<f64>(96, 96, 3);
        let mut last = f64::INFINITY;
        for sigma in [0.4, 0.8, 1.2, 1.6, 2.0, 3.0] {
            let spec = DegradationSpec::gaussian(2, sigma, 21, Downsampler::Direct, 0.0).unwrap();
            let e = laplacian_energy(&degrade(&hr, &spec, 0).unwrap());
            assert!(e < last, "sigma {sigma}: {e} >= {last}");
            last = e;
        }
    }

    #[test]
    fn down_then_up_of_smooth_image_is_close() {
        let hr = crate::toyset::toy_image::<f64>(64, 64, 5);
        let smooth = blur(&hr, &BlurKernel::gaussian(3.0, 21).unwrap()).unwrap();
        let back = bicubic_resize(&bicubic_resize(&smooth, 0.5).unwrap(), 2.0).unwrap();
        let mae: f64 =
            back.data().iter().zip(smooth.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / smooth.data().len() as f64;
        assert!(mae < 2e-2, "mae {mae}");
    }

    fn synth_cfg(seed: u64) -> SynthConfig {
        SynthConfig {
            scale: 2,
            width_range: (0.2, 4.0),
            patch_size: 16,
            noise_sigma_255: 0.0,
            kernel_size: 21,
            downsampler: Downsampler::Bicubic,
            seed,
        }
    }

    #[test]
    fn choices_are_reproducible() {
        let cfg = synth_cfg(9);
        let sizes = vec![(40, 50), (20, 20)];
        let a: Vec<_> = (0..100).map(|i| sample_choices(&cfg, &sizes, i).unwrap()).collect();
        let b: Vec<_> = (0..100).map(|i| sample_choices(&cfg, &sizes, i).unwrap()).collect();
        assert_eq!(a, b);
        assert!(a.iter().all(|c| c.sigma >= 0.2 && c.sigma <= 4.0));
    }

    #[test]
    fn width_histogram_is_uniform() {
        let cfg = synth_cfg(2024);
        let sizes = vec![(32, 32)];
        let n = 100_000u64;
        let mut bins = [0u64; 20];
        for i in 0..n {
            let s = sample_choices(&cfg, &sizes, i).unwrap().sigma;
            let b = (((s - 0.2) / 3.8) * 20.0).floor() as usize;
            bins[b.min(19)] += 1;
        }
        let expected = n as f64 / 20.0;
        let chi2: f64 = bins.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
        // chi-square 0.99 quantile with 19 degrees of freedom
        assert!(chi2 < 36.191, "chi2 = {chi2}");
    }

    #[test]
    fn too_small_images_are_no_data() {
        let cfg = synth_cfg(1);
        assert!(matches!(sample_choices(&cfg, &[(8, 8)], 0), Err(IkcError::NoData(_))));
    }

    #[test]
    fn synth_pair_shapes_and_code() {
        let cfg = synth_cfg(3);
        let codec = PcaCodec::<f64>::fit(&crate::kernels::width_grid(0.2, 4.0, 0.1), 21, 4).unwrap();
        let images = vec![textured(3, 40, 40)];
        let pair = synth_pair(&cfg, &images, Some(&codec), 5).unwrap();
        assert_eq!(pair.hr.dims(), (3, 16, 16));
        assert_eq!(pair.lr.dims(), (3, 8, 8));
        assert_eq!(pair.code, codec.encode(&pair.spec.kernel).unwrap());
        let again = synth_pair(&cfg, &images, Some(&codec), 5).unwrap();
        assert_eq!(again.lr, pair.lr);
    }

    #[test]
    fn synth_dataset_reads_directory() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            synth_dataset::<f32>(dir.path(), synth_cfg(0), 3, None).map(|_| ()),
            Err(IkcError::NoData(_))
        ));
        textured(3, 8, 8).save_png(dir.path().join("tiny.png")).unwrap();
        assert!(matches!(
            synth_dataset::<f32>(dir.path(), synth_cfg(0), 3, None).map(|_| ()),
            Err(IkcError::NoData(_))
        ));
        textured(3, 32, 32).save_png(dir.path().join("big.png")).unwrap();
        let empty: Vec<_> = synth_dataset::<f32>(dir.path(), synth_cfg(0), 0, None).unwrap().collect();
        assert!(empty.is_empty());
        let pairs: Vec<_> =
            synth_dataset::<f32>(dir.path(), synth_cfg(0), 3, None).unwrap().collect::<Result<_>>().unwrap();
        assert_eq!(pairs.len(), 3);
        assert!(pairs.iter().all(|p| p.code.kind == crate::kernels::CodeKind::WidthScalar));
    }

    proptest! {
        #[test]
        fn blur_preserves_interior_mean(seed in 0u64..1000, sigma in 0.3f64..3.0) {
            // Constant field plus a bump in the middle: blurred mass stays
            // inside the window, so the window mean is unchanged.
            let mut rng = pair_rng(seed, 0);
            let img = Image::<f64>::from_fn(3, 64, 64, |_, y, x| {
                let inside = (24..40).contains(&y) && (24..40).contains(&x);
                if inside { rng.random_range(0.0..1.0) } else { 0.5 }
            });
            let k = BlurKernel::gaussian(sigma, 21).unwrap();
            let out = blur(&img, &k).unwrap();
            let window_mean = |im: &Image<f64>| {
                let mut acc = 0.0;
                for c in 0..3 { for y in 8..56 { for x in 8..56 { acc += im.get(c, y, x); } } }
                acc / (3.0 * 48.0 * 48.0)
            };
            prop_assert!((window_mean(&out) - window_mean(&img)).abs() < 1e-5);
        }
    }
}
