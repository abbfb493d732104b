//! Networks: the conditioned SR network, its ablation baselines, and the
//! kernel predictor / corrector pair.

pub mod checkpoint;
pub mod estimator;
pub mod sftmd;

pub use checkpoint::{
    checkpoint_bytes, load_network, network_from_bytes, save_network, weights_hash, CheckpointHeader, Network,
    WIDTH_SCALAR_FINGERPRINT,
};
pub use estimator::{Corrector, CorrectorConfig, Predictor, PredictorConfig};
pub use sftmd::{Conditioning, Sftmd, SftmdCache, SftmdConfig};

use crate::error::{invalid, Result};
use crate::kernels::KernelCode;
use crate::nn::Tensor;
use crate::scalar::Scalar;

/// Kernel maps for one code: `b×1×H×W`, channel `i` constant at `code[i]`.
pub fn stretch_code<T: Scalar>(code: &KernelCode<T>, height: usize, width: usize) -> Result<Tensor<T>> {
    if height == 0 || width == 0 {
        return Err(invalid("stretch needs a non-empty spatial size"));
    }
    Ok(Tensor::from_fn(code.len(), 1, height, width, |c, _, _, _| code.values[c]))
}

/// Stacks codes into a `b×N×1×1` batch.
pub fn codes_tensor<T: Scalar>(codes: &[KernelCode<T>]) -> Result<Tensor<T>> {
    let rows: Vec<Vec<T>> = codes.iter().map(|c| c.values.clone()).collect();
    Tensor::from_rows(&rows)
}
