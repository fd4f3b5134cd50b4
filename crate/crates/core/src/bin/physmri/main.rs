//! `physmri` command-line interface.
//!
//! Exit codes: 0 success, 2 usage or validation error, 3 runtime failure
//! (I/O, or non-convergence under `--strict`).

mod parse;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use physmri::diffusion::{self, DiffusionSchedule, LatentSet, MlpDenoiser, TrainConfig};
use physmri::fusion::{self, DropRule, GaussianFactor};
use physmri::metrics::{self, MsSsimConfig, ReferenceEntry, ValidateConfig};
use physmri::qmap::{self, FitConfig, PhantomSpec};
use physmri::rng::CounterRng;
use physmri::signal::{self, NoiseSpec, SignalOptions};
use physmri::{AcquisitionParams, PropertyMap, SequenceKind, Volume};
use serde::Deserialize;
use serde_json::json;

#[derive(Parser)]
#[command(name = "physmri", version, about = "Physics-based MR contrast synthesis and tissue-property mapping")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rasterize a phantom property map (.pvol)
    Phantom(PhantomArgs),
    /// Synthesize one contrast from a property map
    Synth(SynthArgs),
    /// MAP-fit (PD, T1, T2) maps from co-registered contrasts
    Fit(FitArgs),
    /// Product-of-experts fusion of Gaussian factors (.gauss)
    Fuse(FuseArgs),
    /// Latent diffusion: toy data, training and sampling
    #[command(subcommand)]
    Diffuse(DiffuseCommand),
    /// Compare two volumes: MSE, MAE, PSNR, MS-SSIM
    Metrics(MetricsArgs),
    /// Compare fitted T1/T2 distributions with reference tissue medians
    Validate(ValidateArgs),
}

#[derive(Args)]
struct PhantomArgs {
    /// Built-in preset
    #[arg(long, value_parser = ["brain2d"], conflicts_with = "spec", required_unless_present = "spec")]
    preset: Option<String>,
    /// JSON phantom spec: a list of shapes, or {dims, shapes, background}
    #[arg(long)]
    spec: Option<PathBuf>,
    /// NXxNY[xNZ]
    #[arg(long, value_parser = parse::dims)]
    dims: Option<[usize; 3]>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    props: PathBuf,
    #[arg(long)]
    seq: SequenceKind,
    /// Echo time, seconds
    #[arg(long, value_parser = parse::seconds)]
    te: f64,
    /// Repetition time, seconds
    #[arg(long, value_parser = parse::seconds)]
    tr: f64,
    /// Inversion time, seconds (mprage and flair only)
    #[arg(long, value_parser = parse::seconds)]
    ti: Option<f64>,
    /// Additive Gaussian noise standard deviation
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Store |signal|
    #[arg(long)]
    magnitude: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// FILE:seq,te,tr[,ti] (repeatable)
    #[arg(long = "inputs", num_args = 1.., value_parser = parse::input_binding)]
    inputs: Vec<(String, AcquisitionParams)>,
    /// JSON list of {"file", "seq", "te", "tr", "ti"} as an alternative to --inputs
    #[arg(long)]
    meta: Option<PathBuf>,
    /// Prior weight
    #[arg(long, default_value_t = 1e-2)]
    lambda: f64,
    #[arg(long, default_value_t = 50)]
    max_iterations: u32,
    /// Worker threads (results do not depend on this)
    #[arg(long)]
    threads: Option<usize>,
    /// Exit with code 3 unless every voxel converged
    #[arg(long)]
    strict: bool,
    #[arg(long)]
    out: PathBuf,
    /// Diagnostics JSON (default: <out>.json)
    #[arg(long)]
    diagnostics: Option<PathBuf>,
}

#[derive(Args)]
struct FuseArgs {
    /// Expert factors (.gauss)
    #[arg(required = true)]
    experts: Vec<PathBuf>,
    /// Add a standard-normal prior expert
    #[arg(long)]
    with_prior: bool,
    /// Keep mask, e.g. 1,0,1
    #[arg(long, conflicts_with = "drop_prob")]
    keep: Option<String>,
    /// Drop each expert with this probability (modality dropout)
    #[arg(long)]
    drop_prob: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also draw latent samples from the fused factor (.latn)
    #[arg(long)]
    sample_out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    samples: usize,
}

#[derive(Subcommand)]
enum DiffuseCommand {
    /// Write a two-mode 2-D Gaussian mixture dataset (.latn)
    Mixture {
        #[arg(long, default_value_t = 2048)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an MLP noise predictor on a latent dataset
    Train(TrainArgs),
    /// Ancestral sampling from a trained model
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Hidden widths, e.g. 64,64
    #[arg(long, default_value = "64,64")]
    hidden: String,
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    #[arg(long, default_value_t = 1e-4)]
    beta_start: f64,
    #[arg(long, default_value_t = 2e-2)]
    beta_end: f64,
    #[arg(long, default_value_t = 0.999)]
    ema_decay: f64,
    /// Constant learning rate instead of cosine annealing
    #[arg(long)]
    constant_lr: bool,
    /// Plain MLP output without the Gaussian skip connection
    #[arg(long)]
    no_skip: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch loss CSV (default: <out>.loss.csv)
    #[arg(long)]
    loss_out: Option<PathBuf>,
}

#[derive(Args)]
struct MetricsArgs {
    /// Reference volume
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    /// PSNR peak (default: dynamic range of --a)
    #[arg(long)]
    peak: Option<f64>,
    /// MS-SSIM dynamic range (default: value range of both inputs)
    #[arg(long)]
    data_range: Option<f64>,
    #[arg(long, default_value_t = 5)]
    scales: usize,
    /// JSON report
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    props: PathBuf,
    /// Reference medians JSON (default: bundled WM/GM values)
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    pd_threshold: f64,
    #[arg(long, default_value_t = 64)]
    bins: usize,
    #[arg(long, default_value_t = 0.95)]
    clip_percentile: f64,
    /// Report CSV
    #[arg(long)]
    out: PathBuf,
    /// Histogram CSV prefix (default: <out> without extension); writes _t1.csv and _t2.csv
    #[arg(long)]
    hist_prefix: Option<PathBuf>,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    fn runtime(message: impl Into<String>) -> Self {
        Self { code: 3, message: message.into() }
    }
}

impl From<physmri::Error> for Failure {
    fn from(e: physmri::Error) -> Self {
        match &e {
            physmri::Error::Io(io) if io.kind() != std::io::ErrorKind::NotFound => Failure::runtime(e.to_string()),
            _ => Failure::usage(e.to_string()),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn io_ctx<T>(path: &Path, r: physmri::Result<T>) -> Result<T, Failure> {
    r.map_err(|e| {
        let mut f = Failure::from(e);
        f.message = format!("{}: {}", path.display(), f.message);
        f
    })
}

fn write_text(path: &Path, text: &str) -> CmdResult {
    fs::write(path, text).map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Phantom(a) => phantom(a),
        Command::Synth(a) => synth(a),
        Command::Fit(a) => fit(a),
        Command::Fuse(a) => fuse(a),
        Command::Diffuse(c) => diffuse(c),
        Command::Metrics(a) => metrics_cmd(a),
        Command::Validate(a) => validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn phantom(a: PhantomArgs) -> CmdResult {
    let spec = match (&a.preset, &a.spec) {
        (Some(_), _) => qmap::brain2d(a.dims.unwrap_or([224, 160, 1])),
        (None, Some(path)) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
            parse_phantom_spec(&text, a.dims).map_err(|m| Failure::usage(format!("{}: {m}", path.display())))?
        }
        (None, None) => return Err(Failure::usage("one of --preset or --spec is required")),
    };
    let props = qmap::make_phantom(&spec)?;
    io_ctx(&a.out, props.save(&a.out))?;
    let [nx, ny, nz] = props.dims();
    println!("phantom {nx}x{ny}x{nz}, {} shapes -> {}", spec.shapes.len(), a.out.display());
    Ok(())
}

fn parse_phantom_spec(text: &str, dims: Option<[usize; 3]>) -> Result<PhantomSpec, String> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Doc {
        Full(PhantomSpec),
        Shapes(Vec<qmap::Shape>),
    }
    let doc: Doc = serde_json::from_str(text).map_err(|e| format!("bad phantom spec: {e}"))?;
    Ok(match doc {
        Doc::Full(mut s) => {
            if let Some(d) = dims {
                s.dims = d;
            }
            s
        }
        Doc::Shapes(shapes) => PhantomSpec::new(dims.ok_or("a bare shape list needs --dims")?, shapes),
    })
}

fn synth(a: SynthArgs) -> CmdResult {
    let params = parse::acquisition(a.seq, a.te, a.tr, a.ti).map_err(Failure::usage)?;
    if !(a.noise_sigma >= 0.0 && a.noise_sigma.is_finite()) {
        return Err(Failure::usage(format!("--noise-sigma must be >= 0, got {}", a.noise_sigma)));
    }
    let props = io_ctx(&a.props, PropertyMap::load(&a.props))?;
    let noise = (a.noise_sigma > 0.0).then_some(NoiseSpec { sigma: a.noise_sigma, seed: a.seed });
    let img = signal::synthesize(&props, &params, SignalOptions { magnitude_mode: a.magnitude }, noise)?;
    io_ctx(&a.out, img.save(&a.out))?;
    let mean = img.data().iter().sum::<f64>() / img.data().len() as f64;
    let ti = a.ti.map(|t| format!(" ti={t}")).unwrap_or_default();
    println!("{} te={} tr={}{ti}: mean signal {mean:.6} -> {}", a.seq, a.te, a.tr, a.out.display());
    Ok(())
}

#[derive(Deserialize)]
struct MetaEntry {
    file: PathBuf,
    seq: SequenceKind,
    te: f64,
    tr: f64,
    ti: Option<f64>,
}

fn fit(a: FitArgs) -> CmdResult {
    let mut bindings: Vec<(PathBuf, AcquisitionParams)> =
        a.inputs.iter().map(|(p, acq)| (PathBuf::from(p), *acq)).collect();
    if let Some(meta) = &a.meta {
        let text = fs::read_to_string(meta).map_err(|e| Failure::usage(format!("{}: {e}", meta.display())))?;
        let entries: Vec<MetaEntry> =
            serde_json::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", meta.display())))?;
        let base = meta.parent().unwrap_or(Path::new(""));
        for e in entries {
            let acq = parse::acquisition(e.seq, e.te, e.tr, e.ti).map_err(Failure::usage)?;
            bindings.push((base.join(e.file), acq));
        }
    }
    if bindings.is_empty() {
        return Err(Failure::usage("fit needs at least one input (--inputs or --meta)"));
    }
    let config = FitConfig { prior_weight: a.lambda, max_iterations: a.max_iterations, ..FitConfig::default() };
    config.validate()?;
    let mut images = Vec::with_capacity(bindings.len());
    for (path, acq) in &bindings {
        images.push((io_ctx(path, Volume::load(path))?, *acq));
    }
    let result = match a.threads {
        Some(0) => return Err(Failure::usage("--threads must be >= 1")),
        Some(t) => qmap::fit_volume_with_threads(&images, &config, t)?,
        None => qmap::fit_volume(&images, &config)?,
    };
    io_ctx(&a.out, result.props.save(&a.out))?;
    let diag_path = a.diagnostics.clone().unwrap_or_else(|| with_suffix(&a.out, ".json"));
    let iterations: Vec<f64> = result.iterations.iter().map(|&i| i as f64).collect();
    let diag = json!({
        "voxels": result.converged.len(),
        "inputs": bindings.iter().map(|(p, acq)| json!({"file": p, "params": acq})).collect::<Vec<_>>(),
        "prior_weight": a.lambda,
        "convergence_rate": result.convergence_rate(),
        "median_residual": result.median_residual(),
        "median_iterations": physmri::scaling::median(&iterations),
        "max_iterations": result.iterations.iter().max(),
    });
    write_text(&diag_path, &(serde_json::to_string_pretty(&diag).expect("plain json") + "\n"))?;
    println!(
        "fit {} voxels from {} contrasts: convergence {:.4}, median residual {:.3e} -> {}",
        result.converged.len(),
        images.len(),
        result.convergence_rate(),
        result.median_residual(),
        a.out.display()
    );
    if a.strict && result.convergence_rate() < 1.0 {
        let failed = result.converged.iter().filter(|&&c| !c).count();
        return Err(Failure::runtime(format!("{failed} voxels did not converge (--strict)")));
    }
    Ok(())
}

fn fuse(a: FuseArgs) -> CmdResult {
    let mut experts = Vec::with_capacity(a.experts.len());
    for p in &a.experts {
        experts.push(io_ctx(p, GaussianFactor::load(p))?);
    }
    let rule = match (&a.keep, a.drop_prob) {
        (Some(mask), _) => Some(DropRule::Mask(parse::bool_list(mask).map_err(Failure::usage)?)),
        (None, Some(p)) => Some(DropRule::Random { p, seed: a.seed }),
        (None, None) => None,
    };
    let kept = match &rule {
        Some(r) => fusion::kept_indices(experts.len(), r)?,
        None => (0..experts.len()).collect(),
    };
    let chosen: Vec<GaussianFactor> = kept.iter().map(|&i| experts[i].clone()).collect();
    let fused = fusion::poe_fuse_with_prior(&chosen, a.with_prior)?;
    io_ctx(&a.out, fused.save(&a.out))?;
    println!(
        "fused {} of {} experts{} -> {}",
        kept.len(),
        experts.len(),
        if a.with_prior { " + prior" } else { "" },
        a.out.display()
    );
    let show = |v: &[f64]| v.iter().take(8).map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(", ");
    println!("mean [{}]", show(fused.mean()));
    println!("variance [{}]", show(fused.variance()));
    if let Some(path) = &a.sample_out {
        if a.samples == 0 {
            return Err(Failure::usage("--samples must be >= 1"));
        }
        let mut rng = CounterRng::derive(a.seed, &[1]);
        let draws: Vec<Vec<f64>> = (0..a.samples).map(|_| fusion::sample_with(&fused, &mut rng)).collect();
        io_ctx(path, LatentSet::from_vectors(&draws)?.save(path))?;
        println!("{} latent samples -> {}", a.samples, path.display());
    }
    Ok(())
}

fn diffuse(c: DiffuseCommand) -> CmdResult {
    match c {
        DiffuseCommand::Mixture { count, seed, out } => {
            if count == 0 {
                return Err(Failure::usage("--count must be >= 1"));
            }
            let set = LatentSet::from_vectors(&diffusion::two_mode_mixture(count, seed))?;
            io_ctx(&out, set.save(&out))?;
            println!("{count} mixture samples (modes at ±(2, 2), std 0.5) -> {}", out.display());
        }
        DiffuseCommand::Train(a) => {
            let data = io_ctx(&a.data, LatentSet::load(&a.data))?;
            let schedule = diffusion::make_schedule(a.steps, a.beta_start, a.beta_end)?;
            let config = TrainConfig {
                hidden: parse::usize_list(&a.hidden).map_err(Failure::usage)?,
                epochs: a.epochs,
                batch_size: a.batch_size,
                lr: a.lr,
                ema_decay: a.ema_decay,
                cosine_decay: !a.constant_lr,
                skip: !a.no_skip,
                seed: a.seed,
            };
            let (model, trace) = diffusion::train_toy(&data.vectors(), &schedule, &config)?;
            io_ctx(&a.out, model.save(&a.out))?;
            let loss_path = a.loss_out.clone().unwrap_or_else(|| with_suffix(&a.out, ".loss.csv"));
            let mut csv = String::from("epoch,loss\n");
            for (i, l) in trace.iter().enumerate() {
                csv.push_str(&format!("{},{l}\n", i + 1));
            }
            write_text(&loss_path, &csv)?;
            println!(
                "trained {} epochs on {} vectors: loss {:.5} -> {:.5}; model -> {}",
                trace.len(),
                data.count(),
                trace.first().copied().unwrap_or(f64::NAN),
                trace.last().copied().unwrap_or(f64::NAN),
                a.out.display()
            );
        }
        DiffuseCommand::Sample { model, count, seed, out } => {
            let denoiser = io_ctx(&model, MlpDenoiser::load(&model))?;
            let schedule: &DiffusionSchedule = denoiser.schedule();
            let dim = diffusion::EpsPredictor::dim(&denoiser);
            let samples = diffusion::ddpm_sample(&denoiser, schedule, dim, count, seed)?;
            if samples.is_empty() {
                return Err(Failure::usage("--count must be >= 1"));
            }
            io_ctx(&out, LatentSet::from_vectors(&samples)?.save(&out))?;
            println!("{count} samples of dim {dim} ({} steps) -> {}", schedule.steps(), out.display());
        }
    }
    Ok(())
}

fn metrics_cmd(a: MetricsArgs) -> CmdResult {
    let va = io_ctx(&a.a, Volume::load(&a.a))?;
    let vb = io_ctx(&a.b, Volume::load(&a.b))?;
    let mse = metrics::mse(&va, &vb)?;
    let mae = metrics::mae(&va, &vb)?;
    let psnr = metrics::psnr(&va, &vb, a.peak)?;
    let [nx, ny, _] = va.dims();
    let mut note = None;
    let ms_ssim = if va.channels() != 1 {
        note = Some("MS-SSIM skipped: inputs have more than one channel".to_string());
        None
    } else {
        let mut scales = a.scales;
        while scales > 1 && nx.min(ny) < (11 << (scales - 1)) {
            scales -= 1;
        }
        if scales != a.scales {
            note = Some(format!("MS-SSIM on {nx}x{ny} uses {scales} scales (renormalized weights)"));
        }
        if nx.min(ny) < 11 {
            note = Some(format!("MS-SSIM skipped: {nx}x{ny} is below the 11-pixel window"));
            None
        } else {
            Some(metrics::ms_ssim(&va, &vb, &MsSsimConfig { scales, data_range: a.data_range, ..Default::default() })?)
        }
    };
    let fmt = |v: f64| if v.is_infinite() { "inf".to_string() } else { format!("{v}") };
    println!("MSE={}", fmt(mse));
    println!("MAE={}", fmt(mae));
    println!("PSNR={}", fmt(psnr));
    match ms_ssim {
        Some(v) => println!("MS-SSIM={}", fmt(v)),
        None => println!("MS-SSIM=n/a"),
    }
    if let Some(n) = &note {
        println!("note: {n}");
    }
    if let Some(out) = &a.out {
        // JSON has no infinity; PSNR of identical inputs is written as null.
        let finite = |v: f64| if v.is_finite() { json!(v) } else { json!(null) };
        let report = json!({
            "mse": mse,
            "mae": mae,
            "psnr": finite(psnr),
            "psnr_infinite": psnr.is_infinite(),
            "ms_ssim": ms_ssim,
            "note": note,
        });
        write_text(out, &(serde_json::to_string_pretty(&report).expect("plain json") + "\n"))?;
    }
    Ok(())
}

fn validate(a: ValidateArgs) -> CmdResult {
    let props = io_ctx(&a.props, PropertyMap::load(&a.props))?;
    let reference = match &a.reference {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::usage(format!("{}: {e}", p.display())))?;
            io_ctx(p, ReferenceEntry::parse_list(&text))?
        }
        None => ReferenceEntry::defaults(),
    };
    if !(a.clip_percentile > 0.0 && a.clip_percentile <= 1.0) {
        return Err(Failure::usage(format!("--clip-percentile must be in (0, 1], got {}", a.clip_percentile)));
    }
    let config = ValidateConfig {
        pd_threshold: a.pd_threshold,
        bins: a.bins,
        clip_percentile: a.clip_percentile,
        ..Default::default()
    };
    let report = metrics::validate_properties(&props, &reference, &config)?;
    write_text(&a.out, &report.to_csv())?;
    let prefix = a.hist_prefix.clone().unwrap_or_else(|| a.out.with_extension(""));
    write_text(&with_suffix(&prefix, "_t1.csv"), &report.histogram_t1.to_csv())?;
    write_text(&with_suffix(&prefix, "_t2.csv"), &report.histogram_t2.to_csv())?;
    println!("{} masked voxels", report.masked_voxels);
    for r in &report.rows {
        let fit = r.median_fit.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
        let diff = r.abs_diff.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
        println!(
            "{:<6} {} fit {fit:>8} ref {:>8.4} |diff| {diff:>8} ({} voxels)",
            r.label, r.channel, r.median_ref, r.voxels
        );
    }
    println!("report -> {}", a.out.display());
    Ok(())
}
