//! Layered run configuration: defaults < TOML file < command-line overrides.

use std::path::Path;

use anyhow::{bail, Context, Result};
use ikc_core::degrade::{Downsampler, SynthConfig};
use ikc_core::kernels::{training_width_range, DEFAULT_KERNEL_SIZE};
use ikc_core::models::{Conditioning, CorrectorConfig, PredictorConfig, SftmdConfig};
use ikc_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

/// Divisible by 2, 3 and 4.
pub const DEFAULT_PATCH: usize = 144;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub scale: usize,
    /// Training width range; defaults to the range for `scale`.
    pub width_min: Option<f64>,
    pub width_max: Option<f64>,
    /// HR patch side; must be a multiple of `scale`.
    pub patch_size: Option<usize>,
    pub noise: f64,
    pub kernel_size: usize,
    pub downsampler: Downsampler,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            scale: 4,
            width_min: None,
            width_max: None,
            patch_size: None,
            noise: 0.0,
            kernel_size: DEFAULT_KERNEL_SIZE,
            downsampler: Downsampler::Bicubic,
        }
    }
}

impl DataSection {
    pub fn width_range(&self) -> Result<(f64, f64)> {
        let (lo, hi) = training_width_range(self.scale)?;
        Ok((self.width_min.unwrap_or(lo), self.width_max.unwrap_or(hi)))
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size.unwrap_or(DEFAULT_PATCH)
    }

    pub fn synth(&self, seed: u64) -> Result<SynthConfig> {
        Ok(SynthConfig {
            scale: self.scale,
            width_range: self.width_range()?,
            patch_size: self.patch_size(),
            noise_sigma_255: self.noise,
            kernel_size: self.kernel_size,
            downsampler: self.downsampler,
            seed,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub feature_channels: usize,
    pub num_res_blocks: usize,
    pub conditioning: Conditioning,
    pub predictor_width: usize,
    pub corrector_width: usize,
    pub corrector_code_width: usize,
    pub corrector_fuse_width: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            feature_channels: 32,
            num_res_blocks: 4,
            conditioning: Conditioning::Sft,
            predictor_width: 64,
            corrector_width: 32,
            corrector_code_width: 64,
            corrector_fuse_width: 64,
        }
    }
}

impl ModelSection {
    pub fn sftmd(&self, scale: usize, code_dim: usize) -> SftmdConfig {
        SftmdConfig {
            feature_channels: self.feature_channels,
            num_res_blocks: self.num_res_blocks,
            scale,
            code_dim,
            conditioning: self.conditioning,
            image_channels: 3,
        }
    }

    pub fn predictor(&self, code_dim: usize) -> PredictorConfig {
        PredictorConfig::new(code_dim, self.predictor_width)
    }

    pub fn corrector(&self, code_dim: usize) -> CorrectorConfig {
        CorrectorConfig {
            code_width: self.corrector_code_width,
            fuse_width: self.corrector_fuse_width,
            ..CorrectorConfig::new(code_dim, self.corrector_width)
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainConfig,
}

/// Recursively overlays `top` onto `base`.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn parse_assignment(s: &str) -> Result<toml::Table> {
    let (key, value) = s.split_once('=').with_context(|| format!("override {s:?} is not KEY=VALUE"))?;
    let value = value.trim();
    let parsed: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {value}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(value.to_string()),
    };
    let mut table = toml::Table::new();
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, parents) = parts.split_last().expect("split yields at least one part");
    table.insert(last.to_string(), parsed);
    for p in parents.iter().rev() {
        let mut outer = toml::Table::new();
        outer.insert(p.to_string(), toml::Value::Table(table));
        table = outer;
    }
    Ok(table)
}

/// Resolves the configuration from defaults, an optional file and `key=value` overrides.
pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut table = toml::Table::try_from(RunConfig::default()).context("serialising defaults")?;
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let file_table: toml::Table = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        merge(&mut table, file_table);
    }
    for o in overrides {
        merge(&mut table, parse_assignment(o)?);
    }
    let cfg: RunConfig = table.try_into().context("invalid configuration")?;
    cfg.train.validate()?;
    if !cfg.data.patch_size().is_multiple_of(cfg.data.scale) {
        bail!("data.patch_size must be a multiple of data.scale");
    }
    Ok(cfg)
}

pub fn to_toml(cfg: &RunConfig) -> String {
    toml::to_string_pretty(cfg).expect("run configs serialise")
}
