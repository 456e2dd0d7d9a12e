//! `primed`: dataset generation, training, scenario evaluation, the full
//! robustness suite and a few inspection helpers.
//!
//! Exit codes: 0 on success, 1 on a usage error, 2 when the work itself fails.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use primed_core::cs::{cs_reconstruct, CsConfig};
use primed_core::eval::{aggregate_rows, evaluate, run_suite, Scenario, SuiteConfig};
use primed_core::figures::{export_panel, export_png};
use primed_core::kspace::{apply_forward_model, zero_fill_recon, Image};
use primed_core::masks::{gen_mask, MaskPattern, MaskSpec};
use primed_core::metrics::image_metrics;
use primed_core::model::{Checkpoint, ModelKind};
use primed_core::phantom::{gen_phantom, make_dataset, DatasetManifest, DatasetSpec, Family, PhantomSample, Split, MANIFEST_FILE};
use primed_core::train::{train_model, TrainConfig};

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Run(#[from] primed_core::Error),
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "primed", version, about = "Mask-conditioned k-space reconstruction toolkit", arg_required_else_help = true)]
struct Cli {
    /// JSON config for the subcommand (dataset spec, train config or suite config).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed override (base seed for data, training seed for models).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (or file, for single-file outputs).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for sample-parallel stages.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a phantom dataset and its manifest.
    GenData,
    /// Train one model configuration.
    Train(TrainArgs),
    /// Evaluate checkpoints on one or more scenarios.
    Eval(EvalArgs),
    /// Run data generation, training, evaluation and reporting end to end.
    Suite,
    /// Print a mask as JSON, optionally writing a PNG preview.
    Mask(MaskArgs),
    /// Compressed-sensing reconstruction of one phantom.
    CsRecon(CsArgs),
    /// Write a dataset sample as PNG.
    ExportPng(ExportArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// fixed, baseline or mask; overrides the config file.
    #[arg(long)]
    kind: Option<ModelKind>,
    /// Dataset manifest; overrides the config file.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Checkpoint files (at most one per model kind).
    #[arg(long = "checkpoint", required = true)]
    checkpoints: Vec<PathBuf>,
    /// Dataset manifest with a test split.
    #[arg(long)]
    dataset: PathBuf,
    /// Scenario names; defaults to the full grid of six.
    #[arg(long = "scenario")]
    scenarios: Vec<String>,
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
}

#[derive(Args, Debug, Clone)]
struct MaskOpts {
    #[arg(long)]
    width: usize,
    #[arg(long = "r", default_value_t = 4)]
    acceleration: u32,
    /// Center fraction; 0.08 at R < 8 and 0.04 otherwise when omitted.
    #[arg(long)]
    cf: Option<f64>,
    #[arg(long, default_value = "random")]
    pattern: MaskPattern,
}

impl MaskOpts {
    fn spec(&self, seed: u64) -> MaskSpec {
        let cf = self.cf.unwrap_or(if self.acceleration >= 8 { 0.04 } else { 0.08 });
        MaskSpec::new(self.width, self.acceleration, cf, self.pattern, seed)
    }
}

#[derive(Args, Debug)]
struct MaskArgs {
    #[command(flatten)]
    mask: MaskOpts,
    /// Write the mask as a square PNG here.
    #[arg(long)]
    preview: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SampleSource {
    /// Dataset manifest to read the sample from.
    #[arg(long, requires = "sample")]
    dataset: Option<PathBuf>,
    #[arg(long)]
    sample: Option<String>,
    /// Generate a phantom of this family instead (seeded by --seed).
    #[arg(long, conflicts_with = "dataset")]
    family: Option<Family>,
    #[arg(long, default_value_t = 64)]
    size: usize,
}

impl SampleSource {
    fn load(&self, seed: u64) -> CliResult<PhantomSample> {
        match (&self.dataset, &self.sample, self.family) {
            (Some(d), Some(id), _) => Ok(DatasetManifest::load(&manifest_path(d))?.load_sample(id)?),
            (None, None, Some(f)) => Ok(gen_phantom(f, self.size, self.size, seed)?),
            _ => Err(CliError::Usage("give --dataset with --sample, or --family".into())),
        }
    }
}

#[derive(Args, Debug)]
struct CsArgs {
    #[command(flatten)]
    source: SampleSource,
    #[arg(long = "r", default_value_t = 4)]
    acceleration: u32,
    #[arg(long)]
    cf: Option<f64>,
    #[arg(long, default_value = "random")]
    pattern: MaskPattern,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    outer_iters: Option<usize>,
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[command(flatten)]
    source: SampleSource,
    /// Draw the pathology boxes in red.
    #[arg(long)]
    boxes: bool,
}

fn manifest_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(MANIFEST_FILE)
    } else {
        p.to_path_buf()
    }
}

fn read_dataset_spec(path: &Path) -> CliResult<DatasetSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| primed_core::Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Run(e.into()))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| primed_core::Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| primed_core::Error::io(path, e))?;
    Ok(())
}

fn out_dir(cli: &Cli, default: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn gen_data(cli: &Cli) -> CliResult<()> {
    let mut spec: DatasetSpec = match &cli.config {
        Some(p) => read_dataset_spec(p)?,
        None => SuiteConfig::desk(0).dataset,
    };
    if let Some(s) = cli.seed {
        spec.base_seed = s;
    }
    let root = out_dir(cli, "data");
    let manifest = make_dataset(&spec, &root)?;
    println!(
        "wrote {} samples and {}",
        manifest.samples.len(),
        root.join(MANIFEST_FILE).display()
    );
    Ok(())
}

fn train(cli: &Cli, args: &TrainArgs) -> CliResult<()> {
    let mut config = match &cli.config {
        Some(p) => TrainConfig::load(p)?,
        None => {
            let kind = args.kind.ok_or_else(|| CliError::Usage("train needs --config or --kind".into()))?;
            let dataset = args
                .dataset
                .clone()
                .ok_or_else(|| CliError::Usage("train needs --config or --dataset".into()))?;
            TrainConfig::standard(kind, dataset, 30, 0)
        }
    };
    if let Some(kind) = args.kind.filter(|k| *k != config.model_kind) {
        config.model_kind = kind;
        config.train_mask = TrainConfig::standard(kind, "", 1, 0).train_mask;
    }
    if let Some(d) = &args.dataset {
        config.dataset = d.clone();
    }
    config.dataset = manifest_path(&config.dataset);
    if let Some(e) = args.epochs {
        config.epochs = e;
    }
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    let out = out_dir(cli, "checkpoints");
    let outcome = train_model(&config, Some(&out))?;
    for e in &outcome.log.epochs {
        println!(
            "epoch {:>3}  train {:.4}  val {}  lr {}",
            e.epoch,
            e.train_loss,
            e.val_loss.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into()),
            e.lr
        );
    }
    if let Some(p) = &outcome.log.best_checkpoint {
        println!("best epoch {:?} -> {}", outcome.log.best_epoch, p.display());
    }
    Ok(())
}

fn eval(cli: &Cli, args: &EvalArgs) -> CliResult<()> {
    let checkpoints = args
        .checkpoints
        .iter()
        .map(|p| Checkpoint::load(p))
        .collect::<primed_core::Result<Vec<_>>>()?;
    let refs: Vec<&Checkpoint> = checkpoints.iter().collect();
    let manifest = DatasetManifest::load(&manifest_path(&args.dataset))?;
    let samples = manifest
        .entries(Split::Test)
        .map(|e| manifest.load_sample(&e.sample_id))
        .collect::<primed_core::Result<Vec<_>>>()?;
    let scenarios = if args.scenarios.is_empty() {
        Scenario::grid()
    } else {
        args.scenarios.iter().map(|n| Scenario::by_name(n)).collect::<primed_core::Result<_>>()?
    };
    let out = out_dir(cli, "eval");
    let metrics = out.join("metrics");
    let mut aggregates = Vec::new();
    let mut comparisons = Vec::new();
    for scenario in &scenarios {
        let report = evaluate(&refs, &samples, scenario, &CsConfig::default(), args.sigma, Some(&metrics))?;
        for (recon, rows) in &report.rows {
            for a in aggregate_rows(rows, None, &scenario.name, *recon) {
                println!(
                    "{:<14} {:<10} {:<7} psnr {}  ssim {}  nmse {}",
                    a.scenario, a.reconstructor, a.region, a.summary.psnr, a.summary.ssim, a.summary.nmse
                );
                aggregates.push(a);
            }
        }
        comparisons.extend(report.comparisons);
    }
    let json = serde_json::json!({ "aggregates": aggregates, "comparisons": comparisons });
    let path = out.join("aggregates.json");
    write_text(&path, &serde_json::to_string_pretty(&json).map_err(|e| CliError::Run(e.into()))?)?;
    println!("wrote {} and {}", metrics.display(), path.display());
    Ok(())
}

fn suite(cli: &Cli) -> CliResult<()> {
    let mut config = match &cli.config {
        Some(p) => SuiteConfig::load(p)?,
        None => SuiteConfig::desk(0),
    };
    if let Some(s) = cli.seed {
        config.dataset.base_seed = s;
    }
    let out = out_dir(cli, "suite");
    let report = run_suite(&config, &out)?;
    for v in &report.verdicts {
        println!("{} {}: {}", if v.pass { "PASS" } else { "FAIL" }, v.clause, v.detail);
    }
    println!("wrote {}", out.join("summary.md").display());
    Ok(())
}

fn mask(cli: &Cli, args: &MaskArgs) -> CliResult<()> {
    let m = gen_mask(&args.mask.spec(cli.seed.unwrap_or(0)))?;
    let text = serde_json::to_string_pretty(&m.to_json()).map_err(|e| CliError::Run(e.into()))?;
    match &cli.out {
        Some(p) => write_text(p, &text)?,
        None => println!("{text}"),
    }
    if let Some(p) = &args.preview {
        let w = m.width();
        let img = Image::from_fn(w, w, |_, c| f64::from(u8::from(m.is_sampled(c))))?;
        export_png(&img, p, &[])?;
    }
    Ok(())
}

fn cs_recon(cli: &Cli, args: &CsArgs) -> CliResult<()> {
    let seed = cli.seed.unwrap_or(0);
    let sample = args.source.load(seed)?;
    let x = &sample.image;
    let opts = MaskOpts {
        width: x.width(),
        acceleration: args.acceleration,
        cf: args.cf,
        pattern: args.pattern,
    };
    let m = gen_mask(&opts.spec(seed))?;
    let k = apply_forward_model(x, &m, args.sigma, seed)?;
    let mut config = CsConfig::default();
    if let Some(l) = args.lambda {
        config.lambda = l;
    }
    if let Some(n) = args.outer_iters {
        config.outer_iters = n;
    }
    let zf = zero_fill_recon(&k);
    let cs = cs_reconstruct(&k, &m, &config)?;
    let json = serde_json::json!({
        "sample": sample.sample_id,
        "mask": m.to_json(),
        "cs": config,
        "zero_fill": image_metrics(&zf, x)?,
        "cs_recon": image_metrics(&cs, x)?,
    });
    println!("{}", serde_json::to_string_pretty(&json).map_err(|e| CliError::Run(e.into()))?);
    if let Some(p) = &cli.out {
        export_panel(&[x, &zf, &cs], p, &[])?;
    }
    Ok(())
}

fn export(cli: &Cli, args: &ExportArgs) -> CliResult<()> {
    let sample = args.source.load(cli.seed.unwrap_or(0))?;
    let path = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.png", if sample.sample_id.is_empty() { "phantom" } else { &sample.sample_id })));
    let boxes = if args.boxes { sample.pathology_boxes.as_slice() } else { &[] };
    export_png(&sample.image, &path, boxes)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn run(cli: &Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    match &cli.command {
        Command::GenData => gen_data(cli),
        Command::Train(a) => train(cli, a),
        Command::Eval(a) => eval(cli, a),
        Command::Suite => suite(cli),
        Command::Mask(a) => mask(cli, a),
        Command::CsRecon(a) => cs_recon(cli, a),
        Command::ExportPng(a) => export(cli, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}\n\nrun `primed --help` for usage");
            ExitCode::from(1)
        }
        Err(CliError::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
