//! Subcommand definitions and dispatch.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use clap::Subcommand;
use ikc_core::degrade::Downsampler;
use ikc_core::ikc::CodeBox;
use ikc_core::kernels::{training_width_range, PcaCodec};
use ikc_core::models::{load_network, Corrector, Predictor, Sftmd, WIDTH_SCALAR_FINGERPRINT};

use crate::manifest::Recorder;

mod data;
mod infer;
mod train;

pub use data::{FitCodecArgs, SynthArgs, ToyDataArgs};
pub use infer::{EvalArgs, SuperResolveArgs};
pub use train::{TrainIkcArgs, TrainSftmdArgs};

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit the PCA kernel codec on a grid of Gaussian widths.
    FitCodec(FitCodecArgs),
    /// Write a synthetic LR/HR dataset with a pair manifest.
    Synth(SynthArgs),
    /// Write procedurally generated HR images.
    ToyData(ToyDataArgs),
    /// Pretrain the SR network with ground-truth kernel codes.
    TrainSftmd(TrainSftmdArgs),
    /// Train the predictor and corrector against a frozen SR network.
    TrainIkc(TrainIkcArgs),
    /// Blind super-resolution of one PNG.
    SuperResolve(SuperResolveArgs),
    /// Run an evaluation suite and write reports.
    Eval(EvalArgs),
}

/// Settings shared by every subcommand.
pub struct Context {
    pub data_root: Option<PathBuf>,
    pub deterministic: bool,
}

impl Context {
    /// Resolves a relative data path against the data root.
    pub fn data(&self, path: &Path) -> PathBuf {
        match &self.data_root {
            Some(root) if path.is_relative() => root.join(path),
            _ => path.to_path_buf(),
        }
    }
}

/// `foo.png` → `foo.png.manifest.json`.
fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    path.with_file_name(name)
}

impl Command {
    fn manifest_target(&self) -> (&'static str, PathBuf) {
        match self {
            Command::FitCodec(a) => ("fit-codec", sidecar(&a.out)),
            Command::Synth(a) => ("synth", a.out.join("manifest.json")),
            Command::ToyData(a) => ("toy-data", a.out.join("manifest.json")),
            Command::TrainSftmd(a) => ("train-sftmd", a.common.out.join("manifest.json")),
            Command::TrainIkc(a) => ("train-ikc", a.common.out.join("manifest.json")),
            Command::SuperResolve(a) => ("super-resolve", sidecar(&a.out)),
            Command::Eval(a) => ("eval", a.out.join("manifest.json")),
        }
    }
}

/// Runs `cmd` and always writes its manifest, marked failed on error.
pub fn run(cmd: &Command, ctx: &Context) -> Result<()> {
    let (name, path) = cmd.manifest_target();
    let mut rec = Recorder::new(name, path, ctx.deterministic);
    let outcome = match cmd {
        Command::FitCodec(a) => data::fit_codec(a, &mut rec),
        Command::Synth(a) => data::synth(a, ctx, &mut rec),
        Command::ToyData(a) => data::toy_data(a, &mut rec),
        Command::TrainSftmd(a) => train::train_sftmd(a, ctx, &mut rec),
        Command::TrainIkc(a) => train::train_ikc(a, ctx, &mut rec),
        Command::SuperResolve(a) => infer::super_resolve(a, ctx, &mut rec),
        Command::Eval(a) => infer::eval(a, ctx, &mut rec),
    };
    rec.finish(&outcome)?;
    outcome
}

pub(crate) fn parse_downsampler(s: &str) -> std::result::Result<Downsampler, String> {
    s.parse().map_err(|e: ikc_core::IkcError| e.to_string())
}

pub(crate) fn load_codec(path: &Path, rec: &mut Recorder) -> Result<PcaCodec<f32>> {
    let codec = PcaCodec::<f32>::load(path).with_context(|| format!("loading codec {}", path.display()))?;
    rec.input("codec", path);
    rec.codec(&codec.fingerprint());
    Ok(codec)
}

/// Trained networks plus the code space they were trained in.
pub(crate) struct LoadedModels {
    pub sftmd: Option<Sftmd<f32>>,
    pub predictor: Option<Predictor<f32>>,
    pub corrector: Option<Corrector<f32>>,
    pub codec: Option<PcaCodec<f32>>,
    pub code_box: Option<CodeBox>,
}

impl LoadedModels {
    pub fn load(
        sftmd: Option<&Path>,
        predictor: Option<&Path>,
        corrector: Option<&Path>,
        codec: Option<&Path>,
        scale: usize,
        width_range: Option<(f64, f64)>,
        rec: &mut Recorder,
    ) -> Result<Self> {
        let codec = codec.map(|p| load_codec(p, rec)).transpose()?;
        let fp = codec.as_ref().map_or_else(|| WIDTH_SCALAR_FINGERPRINT.to_string(), |c| c.fingerprint());
        if codec.is_none() {
            rec.codec(&fp);
        }
        fn ckpt<N: ikc_core::models::Network<f32>>(
            path: Option<&Path>,
            name: &str,
            fp: &str,
            rec: &mut Recorder,
        ) -> Result<Option<N>> {
            let Some(path) = path else { return Ok(None) };
            let (net, _) =
                load_network::<f32, N>(path, Some(fp)).with_context(|| format!("loading {}", path.display()))?;
            rec.input(name, path);
            rec.checkpoint(name, path)?;
            Ok(Some(net))
        }
        let sftmd: Option<Sftmd<f32>> = ckpt(sftmd, "sftmd", &fp, rec)?;
        let predictor: Option<Predictor<f32>> = ckpt(predictor, "predictor", &fp, rec)?;
        let corrector: Option<Corrector<f32>> = ckpt(corrector, "corrector", &fp, rec)?;
        if let Some(net) = &sftmd {
            if net.config.scale != scale {
                bail!("SR network was trained for x{}, --scale is {scale}", net.config.scale);
            }
        }
        let range = match (width_range, &codec) {
            (Some(r), _) => r,
            (None, Some(c)) => c.width_range(),
            (None, None) => training_width_range(scale)?,
        };
        let code_box = match &codec {
            Some(c) => CodeBox::from_codec(c, range, 256)?,
            None => CodeBox::width(range),
        };
        Ok(Self { sftmd, predictor, corrector, codec, code_box: Some(code_box) })
    }

    pub fn eval_models(&self) -> ikc_core::eval::EvalModels<'_, f32> {
        ikc_core::eval::EvalModels {
            sftmd: self.sftmd.as_ref(),
            predictor: self.predictor.as_ref(),
            corrector: self.corrector.as_ref(),
            codec: self.codec.as_ref(),
            code_box: self.code_box.as_ref(),
        }
    }
}

pub(crate) fn range_arg(v: &Option<Vec<f64>>) -> Result<Option<(f64, f64)>> {
    match v.as_deref() {
        None => Ok(None),
        Some([lo, hi]) if *lo > 0.0 && lo <= hi => Ok(Some((*lo, *hi))),
        Some(other) => bail!("width range must be two values 0 < LO <= HI, got {other:?}"),
    }
}

pub(crate) fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}
