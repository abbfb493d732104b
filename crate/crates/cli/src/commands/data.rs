use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context as _, Result};
use clap::Args;
use ikc_core::degrade::{synth_dataset, Downsampler, SynthConfig};
use ikc_core::kernels::{training_width_range, width_grid, PcaCodec, DEFAULT_CODE_DIM, DEFAULT_KERNEL_SIZE};
use ikc_core::toyset::write_toy_set;
use serde::Serialize;

use super::{create_dir, load_codec, parse_downsampler, range_arg, Context};
use crate::manifest::Recorder;

#[derive(Args, Debug)]
pub struct FitCodecArgs {
    /// Width range `LO HI`; defaults to the training range for `--scale`.
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    pub widths_range: Option<Vec<f64>>,
    #[arg(long, default_value_t = 4)]
    pub scale: usize,
    /// Number of evenly spaced widths; defaults to a 0.01 grid.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Kernel side length.
    #[arg(long, default_value_t = DEFAULT_KERNEL_SIZE)]
    pub l: usize,
    /// Code dimension.
    #[arg(long, default_value_t = DEFAULT_CODE_DIM)]
    pub b: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct FitCodecConfig {
    widths_range: (f64, f64),
    samples: usize,
    l: usize,
    b: usize,
}

pub fn fit_codec(a: &FitCodecArgs, rec: &mut Recorder) -> Result<()> {
    let (lo, hi) = match range_arg(&a.widths_range)? {
        Some(r) => r,
        None => training_width_range(a.scale)?,
    };
    let widths = match a.samples {
        None => width_grid(lo, hi, 0.01),
        Some(0) => bail!("--samples must be at least 1"),
        Some(1) => vec![lo],
        Some(n) => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    };
    rec.config(FitCodecConfig { widths_range: (lo, hi), samples: widths.len(), l: a.l, b: a.b });
    let codec = PcaCodec::<f32>::fit(&widths, a.l, a.b)?;
    codec.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    rec.codec(&codec.fingerprint());
    rec.output(&a.out);
    log::info!("codec with b={} l={} on {} widths -> {}", a.b, a.l, widths.len(), a.out.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub hr_dir: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub scale: usize,
    #[arg(long)]
    pub width_min: Option<f64>,
    #[arg(long)]
    pub width_max: Option<f64>,
    #[arg(long)]
    pub count: u64,
    /// Noise level on the 0–255 scale.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// HR patch side.
    #[arg(long, default_value_t = crate::config::DEFAULT_PATCH)]
    pub patch_size: usize,
    #[arg(long, default_value_t = DEFAULT_KERNEL_SIZE)]
    pub kernel_size: usize,
    #[arg(long, default_value = "bicubic", value_parser = parse_downsampler)]
    pub downsampler: Downsampler,
    /// Codec for PCA codes; width-scalar codes are written without one.
    #[arg(long)]
    pub codec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct PairRecord {
    index: u64,
    lr: String,
    hr: String,
    sigma: f64,
    scale: usize,
    noise: f64,
    seed: u64,
    noise_seed: u64,
    code: String,
}

#[derive(Serialize)]
struct CodeFile<'a> {
    kind: ikc_core::kernels::CodeKind,
    values: &'a [f32],
}

pub fn synth(a: &SynthArgs, ctx: &Context, rec: &mut Recorder) -> Result<()> {
    let (lo, hi) = training_width_range(a.scale)?;
    let cfg = SynthConfig {
        scale: a.scale,
        width_range: (a.width_min.unwrap_or(lo), a.width_max.unwrap_or(hi)),
        patch_size: a.patch_size,
        noise_sigma_255: a.noise,
        kernel_size: a.kernel_size,
        downsampler: a.downsampler,
        seed: a.seed,
    };
    rec.config(&cfg);
    rec.seed("seed", a.seed);
    let hr_dir = ctx.data(&a.hr_dir);
    rec.input("hr_dir", &hr_dir);
    let codec = a.codec.as_ref().map(|p| load_codec(p, rec)).transpose()?;

    for sub in ["lr", "hr", "codes"] {
        create_dir(&a.out.join(sub))?;
    }
    let pairs_path = a.out.join("pairs.jsonl");
    let mut pairs = std::io::BufWriter::new(
        std::fs::File::create(&pairs_path).with_context(|| format!("creating {}", pairs_path.display()))?,
    );
    rec.output(&pairs_path);
    if a.count > 0 {
        for pair in synth_dataset::<f32>(&hr_dir, cfg.clone(), a.count, codec)? {
            let pair = pair?;
            let name = format!("{:06}", pair.choices.index);
            let lr = format!("lr/{name}.png");
            let hr = format!("hr/{name}.png");
            let code = format!("codes/{name}.json");
            pair.lr.save_png(a.out.join(&lr))?;
            pair.hr.save_png(a.out.join(&hr))?;
            let code_json = serde_json::to_string(&CodeFile { kind: pair.code.kind, values: &pair.code.values })?;
            std::fs::write(a.out.join(&code), code_json)?;
            let record = PairRecord {
                index: pair.choices.index,
                lr,
                hr,
                sigma: pair.choices.sigma,
                scale: a.scale,
                noise: a.noise,
                seed: a.seed,
                noise_seed: pair.choices.noise_seed,
                code,
            };
            writeln!(pairs, "{}", serde_json::to_string(&record)?)?;
        }
        for sub in ["lr", "hr", "codes"] {
            rec.output(&a.out.join(sub));
        }
    } else {
        cfg.validate(codec.as_ref())?;
    }
    pairs.flush()?;
    log::info!("{} pairs -> {}", a.count, a.out.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct ToyDataArgs {
    #[arg(long, default_value_t = 64)]
    pub count: usize,
    #[arg(long, default_value_t = 96)]
    pub height: usize,
    #[arg(long, default_value_t = 96)]
    pub width: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct ToyConfig {
    count: usize,
    height: usize,
    width: usize,
}

pub fn toy_data(a: &ToyDataArgs, rec: &mut Recorder) -> Result<()> {
    rec.config(ToyConfig { count: a.count, height: a.height, width: a.width });
    rec.seed("seed", a.seed);
    write_toy_set(&a.out, a.count, a.height, a.width, a.seed)?;
    for i in 0..a.count {
        rec.output(&a.out.join(format!("toy_{i:04}.png")));
    }
    Ok(())
}
