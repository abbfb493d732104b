//! Checkpoint container.
//!
//! Layout: `IKCN` magic, `u32` version, `u64` header length, a JSON header,
//! then every parameter tensor in module order as `u64` length followed by
//! little-endian values of the header's dtype.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::estimator::{Corrector, CorrectorConfig, Predictor, PredictorConfig};
use super::sftmd::{Sftmd, SftmdConfig};
use crate::error::{io_err, IkcError, Result};
use crate::nn::Module;
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"IKCN";
const VERSION: u32 = 1;

/// Fingerprint recorded for networks trained on width-scalar codes.
pub const WIDTH_SCALAR_FINGERPRINT: &str = "width-scalar";

/// A network that can be rebuilt from its config.
pub trait Network<T: Scalar>: Module<T> + Sized {
    const KIND: &'static str;
    type Config: Serialize + DeserializeOwned + Clone;

    fn config(&self) -> &Self::Config;
    fn build(config: Self::Config, seed: u64) -> Result<Self>;
}

impl<T: Scalar> Network<T> for Sftmd<T> {
    const KIND: &'static str = "sftmd";
    type Config = SftmdConfig;

    fn config(&self) -> &SftmdConfig {
        &self.config
    }

    fn build(config: SftmdConfig, seed: u64) -> Result<Self> {
        Sftmd::new(config, seed)
    }
}

impl<T: Scalar> Network<T> for Predictor<T> {
    const KIND: &'static str = "predictor";
    type Config = PredictorConfig;

    fn config(&self) -> &PredictorConfig {
        &self.config
    }

    fn build(config: PredictorConfig, seed: u64) -> Result<Self> {
        Predictor::new(config, seed)
    }
}

impl<T: Scalar> Network<T> for Corrector<T> {
    const KIND: &'static str = "corrector";
    type Config = CorrectorConfig;

    fn config(&self) -> &CorrectorConfig {
        &self.config
    }

    fn build(config: CorrectorConfig, seed: u64) -> Result<Self> {
        Corrector::new(config, seed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: String,
    pub dtype: String,
    pub config: serde_json::Value,
    pub codec_fingerprint: String,
    pub step: u64,
    pub param_lengths: Vec<usize>,
}

fn fmt_err(detail: impl Into<String>) -> IkcError {
    IkcError::Format { what: "checkpoint", detail: detail.into() }
}

pub fn checkpoint_bytes<T: Scalar, N: Network<T>>(net: &N, codec_fingerprint: &str, step: u64) -> Vec<u8> {
    let params = net.params();
    let header = CheckpointHeader {
        kind: N::KIND.to_string(),
        dtype: T::DTYPE.to_string(),
        config: serde_json::to_value(net.config()).expect("configs serialise"),
        codec_fingerprint: codec_fingerprint.to_string(),
        step,
        param_lengths: params.iter().map(|p| p.len()).collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serialises");
    let mut out = Vec::with_capacity(16 + json.len() + net.num_params() * T::BYTES + 8 * params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for p in params {
        out.extend_from_slice(&(p.len() as u64).to_le_bytes());
        for &v in &p.value {
            v.write_le(&mut out);
        }
    }
    out
}

pub fn read_header(bytes: &[u8]) -> Result<(CheckpointHeader, usize)> {
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(fmt_err("missing IKCN magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(fmt_err(format!("unsupported version {version}")));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let end = 16usize.checked_add(len).filter(|&e| e <= bytes.len()).ok_or_else(|| fmt_err("truncated header"))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[16..end]).map_err(|e| fmt_err(format!("header: {e}")))?;
    Ok((header, end))
}

/// Rebuilds a network. `expected_fingerprint`, when given, must match the
/// fingerprint stored at save time.
pub fn network_from_bytes<T: Scalar, N: Network<T>>(
    bytes: &[u8],
    expected_fingerprint: Option<&str>,
) -> Result<(N, CheckpointHeader)> {
    let (header, mut pos) = read_header(bytes)?;
    if header.kind != N::KIND {
        return Err(fmt_err(format!("expected a {} checkpoint, found {}", N::KIND, header.kind)));
    }
    if header.dtype != T::DTYPE {
        return Err(fmt_err(format!("checkpoint dtype {} does not match {}", header.dtype, T::DTYPE)));
    }
    if let Some(expected) = expected_fingerprint {
        if expected != header.codec_fingerprint {
            return Err(IkcError::InvalidConfiguration(format!(
                "checkpoint was trained with codec {} but codec {} was supplied",
                header.codec_fingerprint, expected
            )));
        }
    }
    let config: N::Config =
        serde_json::from_value(header.config.clone()).map_err(|e| fmt_err(format!("config: {e}")))?;
    let mut net = N::build(config, 0)?;
    let mut params = net.params_mut();
    if params.len() != header.param_lengths.len() {
        return Err(fmt_err(format!("expected {} tensors, header lists {}", params.len(), header.param_lengths.len())));
    }
    for p in params.iter_mut() {
        let len_bytes = bytes.get(pos..pos + 8).ok_or_else(|| fmt_err("truncated tensor length"))?;
        let len = u64::from_le_bytes(len_bytes.try_into().unwrap()) as usize;
        pos += 8;
        if len != p.len() {
            return Err(fmt_err(format!("tensor of length {len} where {} was expected", p.len())));
        }
        let raw = bytes.get(pos..pos + len * T::BYTES).ok_or_else(|| fmt_err("truncated tensor data"))?;
        for (v, chunk) in p.value.iter_mut().zip(raw.chunks_exact(T::BYTES)) {
            *v = T::read_le(chunk);
        }
        pos += len * T::BYTES;
    }
    if pos != bytes.len() {
        return Err(fmt_err(format!("{} trailing bytes", bytes.len() - pos)));
    }
    Ok((net, header))
}

pub fn save_network<T: Scalar, N: Network<T>>(
    path: impl AsRef<Path>,
    net: &N,
    codec_fingerprint: &str,
    step: u64,
) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    std::fs::write(path, checkpoint_bytes(net, codec_fingerprint, step)).map_err(io_err(path))
}

pub fn load_network<T: Scalar, N: Network<T>>(
    path: impl AsRef<Path>,
    expected_fingerprint: Option<&str>,
) -> Result<(N, CheckpointHeader)> {
    let path = path.as_ref();
    network_from_bytes(&std::fs::read(path).map_err(io_err(path))?, expected_fingerprint)
}

/// Hex SHA-256 over all parameter values; used to prove a network stayed frozen.
pub fn weights_hash<T: Scalar, M: Module<T>>(net: &M) -> String {
    let mut hasher = Sha256::new();
    let mut buf = Vec::new();
    for p in net.params() {
        buf.clear();
        for &v in &p.value {
            v.write_le(&mut buf);
        }
        hasher.update(&buf);
    }
    hex::encode(hasher.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Conditioning;
    use crate::nn::Tensor;

    #[test]
    fn sftmd_round_trip_is_bit_identical() {
        let cfg = SftmdConfig { feature_channels: 8, num_res_blocks: 2, ..SftmdConfig::toy(2, 3) }
            .with_conditioning(Conditioning::DirectConcat);
        let net = Sftmd::<f32>::new(cfg, 9).unwrap();
        let bytes = checkpoint_bytes(&net, "abc", 17);
        let (back, header): (Sftmd<f32>, _) = network_from_bytes(&bytes, Some("abc")).unwrap();
        assert_eq!(header.step, 17);
        assert_eq!(back, net);
        let lr = Tensor::from_fn(3, 1, 5, 6, |c, _, y, x| ((c + y + x) % 4) as f32 / 3.0);
        let codes = Tensor::from_rows(&[vec![0.1, 0.0, -0.3]]).unwrap();
        let a = net.forward(&lr, &codes).unwrap();
        let b = back.forward(&lr, &codes).unwrap();
        assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn rejects_codec_mismatch_and_wrong_kind() {
        let p = Predictor::<f64>::new(PredictorConfig::new(2, 4), 0).unwrap();
        let bytes = checkpoint_bytes(&p, "codec-a", 0);
        assert!(matches!(
            network_from_bytes::<f64, Predictor<f64>>(&bytes, Some("codec-b")),
            Err(IkcError::InvalidConfiguration(_))
        ));
        assert!(network_from_bytes::<f64, Predictor<f64>>(&bytes, None).is_ok());
        assert!(network_from_bytes::<f64, Corrector<f64>>(&bytes, None).is_err());
        assert!(network_from_bytes::<f32, Predictor<f32>>(&bytes, None).is_err());
        assert!(network_from_bytes::<f64, Predictor<f64>>(&bytes[..bytes.len() - 1], None).is_err());
    }

    #[test]
    fn weights_hash_tracks_values() {
        let mut c = Corrector::<f32>::new(CorrectorConfig::new(2, 4), 0).unwrap();
        let before = weights_hash(&c);
        assert_eq!(before, weights_hash(&c.clone()));
        c.fc1.params_mut()[0].value[0] += 1.0;
        assert_ne!(before, weights_hash(&c));
    }
}
