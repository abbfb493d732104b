//! Isotropic Gaussian blur kernels, the PCA kernel codec and the Gaussian8 sets.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use sha2::{Digest, Sha256};

use crate::error::{invalid, io_err, IkcError, Result};
use crate::scalar::Scalar;

/// Default kernel side length.
pub const DEFAULT_KERNEL_SIZE: usize = 21;
/// Default reduced code dimension.
pub const DEFAULT_CODE_DIM: usize = 10;
/// Unit-sum tolerance for constructed kernels.
pub const UNIT_SUM_TOL: f64 = 1e-8;

const KERNEL_MAGIC: &[u8; 4] = b"IKCK";
const CODEC_MAGIC: &[u8; 4] = b"IKCP";

/// Square, non-negative, unit-sum blur kernel stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct BlurKernel<T> {
    size: usize,
    values: Vec<T>,
}

impl<T: Scalar> BlurKernel<T> {
    /// Validates non-negativity and unit sum (within `tol`).
    pub fn from_values(size: usize, values: Vec<T>, tol: f64) -> Result<Self> {
        if size == 0 || values.len() != size * size {
            return Err(invalid(format!("kernel of side {size} needs {} values, got {}", size * size, values.len())));
        }
        if values.iter().any(|v| !(v.to_f64c() >= 0.0)) {
            return Err(invalid("kernel values must be finite and non-negative"));
        }
        let sum: f64 = values.iter().map(|v| v.to_f64c()).sum();
        if (sum - 1.0).abs() > tol {
            return Err(invalid(format!("kernel sums to {sum}, expected 1")));
        }
        Ok(Self { size, values })
    }

    /// Isotropic Gaussian `exp(-r²/2σ²)` sampled on an odd `size×size` grid and normalised.
    pub fn gaussian(sigma: f64, size: usize) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(invalid(format!("gaussian width must be positive, got {sigma}")));
        }
        if size < 3 || size.is_multiple_of(2) {
            return Err(invalid(format!("kernel side must be odd and >= 3, got {size}")));
        }
        let c = (size / 2) as f64;
        // The 2-D Gaussian is separable; building from one 1-D profile keeps
        // the result exactly symmetric under flips and transposition.
        let profile: Vec<f64> = (0..size)
            .map(|i| {
                let d = i as f64 - c;
                (-(d * d) / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        let mut raw = Vec::with_capacity(size * size);
        for &py in &profile {
            for &px in &profile {
                raw.push(py * px);
            }
        }
        let total: f64 = raw.iter().sum();
        let values = raw.into_iter().map(|v| T::from_f64c(v / total)).collect();
        Ok(Self { size, values })
    }

    /// Identity kernel: a single unit tap at the centre.
    pub fn delta(size: usize) -> Result<Self> {
        if size == 0 || size.is_multiple_of(2) {
            return Err(invalid(format!("kernel side must be odd, got {size}")));
        }
        let mut values = vec![T::zero(); size * size];
        values[(size / 2) * size + size / 2] = T::one();
        Ok(Self { size, values })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.values[row * self.size + col]
    }

    pub fn center(&self) -> T {
        self.get(self.size / 2, self.size / 2)
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().map(|v| v.to_f64c()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> BlurKernel<U> {
        BlurKernel { size: self.size, values: self.values.iter().map(|v| U::from_f64c(v.to_f64c())).collect() }
    }

    /// `IKCK` file: magic, `u32` side length, `l²` little-endian `f32` row-major.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.values.len());
        out.extend_from_slice(KERNEL_MAGIC);
        out.extend_from_slice(&(self.size as u32).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&(v.to_f64c() as f32).to_le_bytes());
        }
        out
    }

    /// Parses an `IKCK` file. Values are re-normalised to undo `f32` rounding.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fmt = |detail: String| IkcError::Format { what: "kernel file", detail };
        if bytes.len() < 8 || &bytes[..4] != KERNEL_MAGIC {
            return Err(fmt("missing IKCK magic".into()));
        }
        let size = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let floats = read_f32s(&bytes[8..]).map_err(fmt)?;
        if floats.len() != size * size {
            return Err(fmt(format!("side {size} needs {} floats, found {}", size * size, floats.len())));
        }
        let total: f64 = floats.iter().map(|&v| v as f64).sum();
        if !(total > 0.0) {
            return Err(fmt("kernel has no positive mass".into()));
        }
        let values = floats.iter().map(|&v| T::from_f64c(v as f64 / total)).collect();
        Self::from_values(size, values, 1e-6)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(io_err(path))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&std::fs::read(path).map_err(io_err(path))?)
    }
}

fn read_f32s(bytes: &[u8]) -> std::result::Result<Vec<f32>, String> {
    if !bytes.len().is_multiple_of(4) {
        return Err(format!("{} trailing bytes", bytes.len() % 4));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
}

/// How a [`KernelCode`] parameterises its kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CodeKind {
    Pca,
    WidthScalar,
}

/// Reduced kernel representation fed to the networks.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelCode<T> {
    pub values: Vec<T>,
    pub kind: CodeKind,
}

impl<T: Scalar> KernelCode<T> {
    pub fn pca(values: Vec<T>) -> Self {
        Self { values, kind: CodeKind::Pca }
    }

    pub fn width(sigma: T) -> Self {
        Self { values: vec![sigma], kind: CodeKind::WidthScalar }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn distance(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| {
                let d = a.to_f64c() - b.to_f64c();
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v.to_f64c().powi(2)).sum::<f64>().sqrt()
    }

    pub fn cast<U: Scalar>(&self) -> KernelCode<U> {
        KernelCode { values: self.values.iter().map(|v| U::from_f64c(v.to_f64c())).collect(), kind: self.kind }
    }
}

/// Reconstruction returned by [`PcaCodec::decode`]. No validity guarantee.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodedKernel<T> {
    pub size: usize,
    pub values: Vec<T>,
}

impl<T: Scalar> DecodedKernel<T> {
    pub fn has_negative(&self) -> bool {
        self.values.iter().any(|&v| v < T::zero())
    }

    pub fn min_value(&self) -> T {
        self.values.iter().copied().fold(T::infinity(), T::min)
    }

    /// `sum - 1`; zero for a perfect reconstruction.
    pub fn sum_deviation(&self) -> f64 {
        self.values.iter().map(|v| v.to_f64c()).sum::<f64>() - 1.0
    }

    pub fn max_abs_diff(&self, k: &BlurKernel<T>) -> f64 {
        self.values.iter().zip(k.values()).map(|(a, b)| (a.to_f64c() - b.to_f64c()).abs()).fold(0.0, f64::max)
    }
}

/// Mean-centred PCA projection `h = M (k - μ)` with orthonormal rows in `M`.
#[derive(Clone, Debug, PartialEq)]
pub struct PcaCodec<T> {
    code_dim: usize,
    kernel_size: usize,
    /// `b × l²`, row-major.
    matrix: Vec<T>,
    mean: Vec<T>,
    width_range: (f64, f64),
}

impl<T: Scalar> PcaCodec<T> {
    /// Fits the top-`b` principal directions of Gaussian kernels at `widths`.
    pub fn fit(widths: &[f64], kernel_size: usize, code_dim: usize) -> Result<Self> {
        if code_dim == 0 {
            return Err(invalid("code dimension must be >= 1"));
        }
        if widths.is_empty() {
            return Err(IkcError::NoData("no sample widths for PCA".into()));
        }
        let dim = kernel_size * kernel_size;
        let mut distinct: Vec<f64> = widths.to_vec();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        let rank = distinct.len().min(dim);
        if code_dim > rank {
            return Err(IkcError::DegenerateBasis { requested: code_dim, rank });
        }

        let samples: Vec<BlurKernel<f64>> =
            widths.iter().map(|&s| BlurKernel::gaussian(s, kernel_size)).collect::<Result<_>>()?;
        let count = samples.len() as f64;
        let mut mean = vec![0.0f64; dim];
        for k in &samples {
            for (m, v) in mean.iter_mut().zip(k.values()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);

        // Covariance via one GEMM over the centred sample matrix.
        let centred = DMatrix::from_fn(samples.len(), dim, |r, c| samples[r].values()[c] - mean[c]);
        let cov = centred.transpose() * &centred / count;
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

        let mut matrix = Vec::with_capacity(code_dim * dim);
        for &idx in order.iter().take(code_dim) {
            let col = eig.eigenvectors.column(idx);
            // Sign convention: largest-magnitude entry positive.
            let pivot = col.iter().copied().fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
            let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
            matrix.extend(col.iter().map(|&v| T::from_f64c(sign * v)));
        }
        let lo = distinct[0];
        let hi = *distinct.last().unwrap();
        Ok(Self {
            code_dim,
            kernel_size,
            matrix,
            mean: mean.into_iter().map(T::from_f64c).collect(),
            width_range: (lo, hi),
        })
    }

    pub fn code_dim(&self) -> usize {
        self.code_dim
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    pub fn matrix(&self) -> &[T] {
        &self.matrix
    }

    pub fn mean(&self) -> &[T] {
        &self.mean
    }

    pub fn width_range(&self) -> (f64, f64) {
        self.width_range
    }

    pub fn row(&self, i: usize) -> &[T] {
        let dim = self.kernel_size * self.kernel_size;
        &self.matrix[i * dim..(i + 1) * dim]
    }

    pub fn encode(&self, k: &BlurKernel<T>) -> Result<KernelCode<T>> {
        if k.size() != self.kernel_size {
            return Err(invalid(format!("kernel side {} does not match codec side {}", k.size(), self.kernel_size)));
        }
        let centred: Vec<T> = k.values().iter().zip(&self.mean).map(|(&v, &m)| v - m).collect();
        let values = (0..self.code_dim).map(|i| self.row(i).iter().zip(&centred).map(|(&a, &b)| a * b).sum()).collect();
        Ok(KernelCode::pca(values))
    }

    pub fn encode_width(&self, sigma: f64) -> Result<KernelCode<T>> {
        self.encode(&BlurKernel::<f64>::gaussian(sigma, self.kernel_size)?.cast())
    }

    pub fn decode(&self, h: &KernelCode<T>) -> Result<DecodedKernel<T>> {
        if h.kind != CodeKind::Pca || h.len() != self.code_dim {
            return Err(invalid(format!("decode needs a length-{} PCA code", self.code_dim)));
        }
        let mut values = self.mean.clone();
        for (i, &hi) in h.values.iter().enumerate() {
            for (v, &m) in values.iter_mut().zip(self.row(i)) {
                *v += m * hi;
            }
        }
        Ok(DecodedKernel { size: self.kernel_size, values })
    }

    pub fn cast<U: Scalar>(&self) -> PcaCodec<U> {
        let conv = |v: &Vec<T>| v.iter().map(|x| U::from_f64c(x.to_f64c())).collect();
        PcaCodec {
            code_dim: self.code_dim,
            kernel_size: self.kernel_size,
            matrix: conv(&self.matrix),
            mean: conv(&self.mean),
            width_range: self.width_range,
        }
    }

    /// `IKCP` file: magic, `u32` b, `u32` l², matrix, mean, width range (all `f32` LE).
    pub fn to_bytes(&self) -> Vec<u8> {
        let dim = self.kernel_size * self.kernel_size;
        let mut out = Vec::with_capacity(12 + 4 * (self.matrix.len() + dim + 2));
        out.extend_from_slice(CODEC_MAGIC);
        out.extend_from_slice(&(self.code_dim as u32).to_le_bytes());
        out.extend_from_slice(&(dim as u32).to_le_bytes());
        for v in self.matrix.iter().chain(&self.mean) {
            out.extend_from_slice(&(v.to_f64c() as f32).to_le_bytes());
        }
        out.extend_from_slice(&(self.width_range.0 as f32).to_le_bytes());
        out.extend_from_slice(&(self.width_range.1 as f32).to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fmt = |detail: String| IkcError::Format { what: "codec file", detail };
        if bytes.len() < 12 || &bytes[..4] != CODEC_MAGIC {
            return Err(fmt("missing IKCP magic".into()));
        }
        let code_dim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let kernel_size = (dim as f64).sqrt().round() as usize;
        if kernel_size * kernel_size != dim || code_dim == 0 {
            return Err(fmt(format!("column count {dim} is not a square")));
        }
        let floats = read_f32s(&bytes[12..]).map_err(fmt)?;
        if floats.len() != code_dim * dim + dim + 2 {
            return Err(fmt(format!("expected {} floats, found {}", code_dim * dim + dim + 2, floats.len())));
        }
        let to_t = |s: &[f32]| s.iter().map(|&v| T::from_f64c(v as f64)).collect::<Vec<T>>();
        let (matrix, rest) = floats.split_at(code_dim * dim);
        let (mean, range) = rest.split_at(dim);
        Ok(Self {
            code_dim,
            kernel_size,
            matrix: to_t(matrix),
            mean: to_t(mean),
            width_range: (range[0] as f64, range[1] as f64),
        })
    }

    /// Hex SHA-256 of the serialised codec; embedded in checkpoints.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(io_err(path))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&std::fs::read(path).map_err(io_err(path))?)
    }
}

/// Training width range `[0.2, s + ...]` for each scale: 2.0, 3.0, 4.0 upper bounds.
pub fn training_width_range(scale: usize) -> Result<(f64, f64)> {
    match scale {
        2 => Ok((0.2, 2.0)),
        3 => Ok((0.2, 3.0)),
        4 => Ok((0.2, 4.0)),
        s => Err(invalid(format!("unsupported scale {s}"))),
    }
}

/// Widths on `[lo, hi]` with `step` spacing, endpoints included.
pub fn width_grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| lo + i as f64 * step).collect()
}

/// Gaussian8 benchmark widths: eight evenly spaced values, endpoints inclusive.
pub fn gaussian8_widths(scale: usize) -> Result<[f64; 8]> {
    let (lo, hi) = match scale {
        2 => (0.80, 1.60),
        3 => (1.35, 2.40),
        4 => (1.80, 3.20),
        s => return Err(invalid(format!("Gaussian8 is defined for scales 2, 3, 4; got {s}"))),
    };
    let mut out = [0.0; 8];
    for (i, w) in out.iter_mut().enumerate() {
        *w = lo + (hi - lo) * i as f64 / 7.0;
    }
    Ok(out)
}

pub fn gaussian8<T: Scalar>(scale: usize, size: usize) -> Result<Vec<BlurKernel<T>>> {
    gaussian8_widths(scale)?.iter().map(|&s| BlurKernel::gaussian(s, size)).collect()
}
