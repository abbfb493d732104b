use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use clap::{ArgGroup, Args};
use ikc_core::degrade::load_hr_dir;
use ikc_core::models::{load_network, save_network, Corrector, Network, Predictor, Sftmd, WIDTH_SCALAR_FINGERPRINT};
use ikc_core::train::{pretrain_sftmd, train_predictor_corrector, MetricRecord, MetricSink, PairSource};
use ikc_core::IkcError;

use super::{create_dir, load_codec, Context};
use crate::config::{self, RunConfig};
use crate::manifest::Recorder;

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("code").required(true).args(["codec", "width_mode"])))]
pub struct TrainCommon {
    /// TOML file with `[data]`, `[model]` and `[train]` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config value, e.g. `train.steps=500`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub hr_dir: PathBuf,
    #[arg(long)]
    pub codec: Option<PathBuf>,
    /// Condition on the scalar kernel width instead of PCA codes.
    #[arg(long)]
    pub width_mode: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Directory of an earlier run whose checkpoints to continue from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub scale: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr_rate: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainSftmdArgs {
    #[command(flatten)]
    pub common: TrainCommon,
}

#[derive(Args, Debug)]
pub struct TrainIkcArgs {
    #[command(flatten)]
    pub common: TrainCommon,
    /// Pretrained SR network; stays frozen.
    #[arg(long)]
    pub sftmd: PathBuf,
}

/// JSON-lines metric log; zeroes wall time in deterministic mode.
struct MetricsLog {
    out: BufWriter<File>,
    path: PathBuf,
    deterministic: bool,
}

impl MetricSink for MetricsLog {
    fn record(&mut self, rec: &MetricRecord) -> ikc_core::Result<()> {
        let mut rec = rec.clone();
        if self.deterministic {
            rec.wall_ms = 0;
        }
        log::info!("{} step {} loss {:.6}", rec.phase, rec.step, rec.loss);
        let line = serde_json::to_string(&rec).expect("metric records serialise");
        writeln!(self.out, "{line}").map_err(|source| IkcError::Io { path: self.path.clone(), source })
    }
}

struct Session {
    cfg: RunConfig,
    source: PairSource<f32>,
    fingerprint: String,
    log: MetricsLog,
}

fn overrides(a: &TrainCommon) -> Vec<String> {
    let mut out = a.set.clone();
    let mut flag = |key: &str, v: Option<String>| {
        if let Some(v) = v {
            out.push(format!("{key}={v}"));
        }
    };
    flag("train.seed", a.seed.map(|v| v.to_string()));
    flag("train.steps", a.steps.map(|v| v.to_string()));
    flag("data.scale", a.scale.map(|v| v.to_string()));
    flag("train.batch_size", a.batch_size.map(|v| v.to_string()));
    flag("train.lr_rate", a.lr_rate.map(|v| format!("{v:e}")));
    out
}

fn start(a: &TrainCommon, ctx: &Context, rec: &mut Recorder) -> Result<Session> {
    let cfg = config::resolve(a.config.as_deref(), &overrides(a))?;
    rec.config(&cfg);
    rec.seed("seed", cfg.train.seed);
    if let Some(p) = &a.config {
        rec.input("config", p);
    }
    create_dir(&a.out)?;
    let snapshot = a.out.join("config.toml");
    std::fs::write(&snapshot, config::to_toml(&cfg)).with_context(|| format!("writing {}", snapshot.display()))?;
    rec.output(&snapshot);

    let codec = a.codec.as_ref().map(|p| load_codec(p, rec)).transpose()?;
    let synth = cfg.data.synth(cfg.train.seed)?;
    let hr_dir = ctx.data(&a.hr_dir);
    rec.input("hr_dir", &hr_dir);
    let images = load_hr_dir::<f32>(&hr_dir, synth.patch_size)?;
    let mut source = PairSource::new(synth, images, codec)?;
    if let Some(n) = cfg.train.pool_size {
        source = source.with_pool(n)?;
    }
    let fingerprint = source.codec_fingerprint();
    if fingerprint == WIDTH_SCALAR_FINGERPRINT {
        rec.codec(&fingerprint);
    }

    let path = a.out.join("metrics.jsonl");
    let resuming_here = a.resume.as_deref() == Some(a.out.as_path());
    let file =
        if resuming_here { OpenOptions::new().create(true).append(true).open(&path) } else { File::create(&path) }
            .with_context(|| format!("opening {}", path.display()))?;
    rec.output(&path);
    let log = MetricsLog { out: BufWriter::new(file), path, deterministic: ctx.deterministic };
    Ok(Session { cfg, source, fingerprint, log })
}

/// Loads `name` from a resume directory, or builds a fresh network.
fn resume_or_new<N: Network<f32>>(
    resume: Option<&Path>,
    name: &str,
    config: N::Config,
    seed: u64,
    fingerprint: &str,
    rec: &mut Recorder,
) -> Result<(N, u64)>
where
    N::Config: PartialEq + std::fmt::Debug,
{
    let Some(dir) = resume else { return Ok((N::build(config, seed)?, 0)) };
    let path = dir.join(format!("{name}.ckpt"));
    let (net, header) = load_network::<f32, N>(&path, Some(fingerprint))
        .with_context(|| format!("resuming from {}", path.display()))?;
    if net.config() != &config {
        bail!("{} was built with {:?}, the resolved config asks for {:?}", path.display(), net.config(), config);
    }
    rec.input(&format!("resume_{name}"), &path);
    rec.checkpoint(&format!("resume_{name}"), &path)?;
    Ok((net, header.step))
}

pub fn train_sftmd(a: &TrainSftmdArgs, ctx: &Context, rec: &mut Recorder) -> Result<()> {
    let a = &a.common;
    let mut s = start(a, ctx, rec)?;
    let net_cfg = s.cfg.model.sftmd(s.cfg.data.scale, s.source.code_dim());
    let (mut net, start_step) =
        resume_or_new::<Sftmd<f32>>(a.resume.as_deref(), "sftmd", net_cfg, s.cfg.train.seed, &s.fingerprint, rec)?;
    log::info!("training SR network from step {start_step} to {}", s.cfg.train.steps);
    let summary = pretrain_sftmd(&mut net, &s.source, &s.cfg.train, start_step, &mut s.log)?;
    s.log.out.flush()?;
    let path = a.out.join("sftmd.ckpt");
    save_network(&path, &net, &s.fingerprint, summary.final_step.max(start_step))?;
    rec.output(&path);
    rec.checkpoint("sftmd", &path)?;
    Ok(())
}

pub fn train_ikc(a: &TrainIkcArgs, ctx: &Context, rec: &mut Recorder) -> Result<()> {
    let (sftmd_path, a_common) = (&a.sftmd, &a.common);
    let mut s = start(a_common, ctx, rec)?;
    let (sftmd, _) = load_network::<f32, Sftmd<f32>>(sftmd_path, Some(&s.fingerprint))
        .with_context(|| format!("loading {}", sftmd_path.display()))?;
    rec.input("sftmd", sftmd_path);
    rec.checkpoint("sftmd", sftmd_path)?;
    if sftmd.config.scale != s.cfg.data.scale {
        bail!("SR network was trained for x{}, data.scale is {}", sftmd.config.scale, s.cfg.data.scale);
    }
    let b = s.source.code_dim();
    let seed = s.cfg.train.seed;
    let resume = a_common.resume.as_deref();
    let (mut p, p_step) =
        resume_or_new::<Predictor<f32>>(resume, "predictor", s.cfg.model.predictor(b), seed + 1, &s.fingerprint, rec)?;
    let (mut c, c_step) =
        resume_or_new::<Corrector<f32>>(resume, "corrector", s.cfg.model.corrector(b), seed + 2, &s.fingerprint, rec)?;
    if p_step != c_step {
        bail!("predictor and corrector checkpoints are at different steps ({p_step} vs {c_step})");
    }
    log::info!("training predictor and corrector from step {p_step} to {}", s.cfg.train.steps);
    let summary =
        train_predictor_corrector(&sftmd, &s.fingerprint, &mut p, &mut c, &s.source, &s.cfg.train, p_step, &mut s.log)?;
    s.log.out.flush()?;
    let step = summary.final_step.max(p_step);
    let p_path = a_common.out.join("predictor.ckpt");
    let c_path = a_common.out.join("corrector.ckpt");
    save_network(&p_path, &p, &s.fingerprint, step)?;
    save_network(&c_path, &c, &s.fingerprint, step)?;
    for (name, path) in [("predictor", &p_path), ("corrector", &c_path)] {
        rec.output(path);
        rec.checkpoint(name, path)?;
    }
    Ok(())
}
