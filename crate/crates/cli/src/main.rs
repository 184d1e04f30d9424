//! `pdan`: inspect, train, run and evaluate super-resolution models.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 validation or
//! verification failure, 3 numeric failure during computation.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pdan_core::arch::{build_network, load_checkpoint, AttentionKind, ModelGraph};
use pdan_core::cost::{network_cost, verify_counts};
use pdan_core::data::{degrade, list_pngs, load_png, save_png, Dataset, DegradationKind, DegradationSpec};
use pdan_core::train::{evaluate, train_in_dir, RunConfig, RunDir, Upscaler};
use pdan_core::Error;

#[derive(Parser)]
#[command(name = "pdan", version, about = "Super-resolution with pyramidal dense blocks and joint attention")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the per-layer parameter and FLOP report and cross-check counts.
    Inspect(InspectArgs),
    /// Train a model into a run directory.
    Train(TrainArgs),
    /// Super-resolve PNG images with a checkpoint.
    Sr(SrArgs),
    /// PSNR/SSIM on the Y channel over a directory or manifest.
    Eval(EvalArgs),
    /// Synthesize LR images with the BI, BD or DN recipe.
    Degrade(DegradeArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// `key = value` config file with dotted keys (model.scale, train.lr0, ...).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted override applied after the config file, e.g. `model.num_blocks=4`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<(RunConfig, String), Error> {
        let text = match &self.config {
            Some(p) => fs::read_to_string(p)?,
            None => String::new(),
        };
        let mut cfg = RunConfig::from_text(&text)?;
        for kv in &self.overrides {
            cfg.apply_override(kv)?;
        }
        Ok((cfg, text))
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Csv,
}

#[derive(Args)]
struct InspectArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    scale: Option<usize>,
    #[arg(long, value_parser = parse_attention)]
    attention: Option<AttentionKind>,
    /// HR side length for FLOPs; defaults to the largest multiple of the scale not above 512.
    #[arg(long)]
    hr_size: Option<usize>,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Run directory for the log, config echo, checkpoints and optimizer state.
    #[arg(long)]
    out: PathBuf,
    /// Continue from the run directory's latest checkpoint.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct SrArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// PNG files or directories of PNGs.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Model,
    Bicubic,
    /// Scores the ground truth against itself.
    Oracle,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of HR PNGs, or a manifest of `hr<TAB>lr` lines.
    benchmark: PathBuf,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "model")]
    mode: Mode,
    /// Required without a checkpoint.
    #[arg(long)]
    scale: Option<usize>,
    #[arg(long, default_value = "bi", value_parser = parse_kind)]
    kind: DegradationKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Border pixels ignored by the metrics; defaults to the scale.
    #[arg(long)]
    shave: Option<usize>,
    /// Write the per-image CSV here instead of stdout.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct DegradeArgs {
    /// A PNG file or a directory of PNGs.
    input: PathBuf,
    /// Output file, or directory when the input is a directory.
    output: PathBuf,
    #[arg(long, default_value = "bi", value_parser = parse_kind)]
    kind: DegradationKind,
    #[arg(long)]
    scale: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_attention(s: &str) -> Result<AttentionKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_kind(s: &str) -> Result<DegradationKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

enum Failure {
    Usage(String),
    Verification(String),
    Numeric(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFinite(_) => Failure::Numeric(e.to_string()),
            Error::Config(_) => Failure::Usage(e.to_string()),
            _ => Failure::Verification(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Verification(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn inspect(args: InspectArgs) -> Outcome {
    let (mut run, _) = args.config.load()?;
    if let Some(s) = args.scale {
        run.model.scale = s;
    }
    if let Some(a) = args.attention {
        run.model.attention = a;
    }
    run.model.validate()?;
    let scale = run.model.scale;
    let hr = args.hr_size.unwrap_or(512 - 512 % scale);
    let report = network_cost(&run.model, hr)?;
    match args.format {
        Format::Table => print!("{}", report.to_table()),
        Format::Csv => print!("{}", report.to_csv()),
    }
    println!("{}", report.summary());
    let verdict = verify_counts(&build_network(&run.model)?, &report);
    if verdict.passed() {
        println!("counts verified: {} parameters", verdict.enumerated_total);
        Ok(())
    } else {
        let first = verdict.first_divergent().map(|m| format!("{m:?}")).unwrap_or_default();
        Err(Failure::Verification(format!(
            "analytic {} vs instantiated {} parameters; first divergence {first}",
            verdict.analytic_total, verdict.enumerated_total
        )))
    }
}

fn load_dataset(path: &Path, spec: &DegradationSpec) -> Result<Dataset, Error> {
    if path.is_dir() {
        Dataset::from_dir(path, spec)
    } else {
        Dataset::from_manifest(path, spec)
    }
}

fn train(args: TrainArgs) -> Outcome {
    let (run, mut text) = args.config.load()?;
    run.validate()?;
    let source = run
        .data
        .train
        .clone()
        .ok_or_else(|| Failure::Usage("data.train is not set".into()))?;
    for kv in &args.config.overrides {
        if text.is_empty() || text.ends_with('\n') {
            text.push_str(&format!("{}\n", kv.replacen('=', " = ", 1)));
        } else {
            text.push_str(&format!("\n{}\n", kv.replacen('=', " = ", 1)));
        }
    }
    let data = load_dataset(&source, &run.data.spec(run.model.scale))?;
    let model = build_network(&run.model)?;
    log::info!("{} training images, {} parameters", data.len(), model.param_count());
    let dir = RunDir::new(&args.out);
    let trainer = train_in_dir(&dir, &text, model, run.train, &data, args.resume)?;
    println!("trained {} steps; checkpoint {}", trainer.step, dir.checkpoint().display());
    Ok(())
}

fn collect_pngs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, Error> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            files.extend(list_pngs(p)?);
        } else {
            files.push(p.clone());
        }
    }
    Ok(files)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn sr(args: SrArgs) -> Outcome {
    let model = load_checkpoint(&args.checkpoint)?;
    let scale = model.config.scale;
    fs::create_dir_all(&args.out)?;
    for file in collect_pngs(&args.inputs)? {
        let lr = load_png(&file)?;
        let out = model.forward(&lr)?;
        let dest = args.out.join(format!("{}_x{scale}.png", stem(&file)));
        save_png(&out, &dest)?;
        println!("{}", dest.display());
    }
    Ok(())
}

fn eval(args: EvalArgs) -> Outcome {
    let model: Option<ModelGraph> = args.checkpoint.as_deref().map(load_checkpoint).transpose()?;
    let scale = match (&model, args.scale) {
        (Some(m), Some(s)) if m.config.scale != s => {
            return Err(Failure::Verification(format!("checkpoint is x{}, --scale is {s}", m.config.scale)))
        }
        (Some(m), _) => m.config.scale,
        (None, Some(s)) => s,
        (None, None) => return Err(Failure::Usage("--scale is required without --checkpoint".into())),
    };
    let upscaler = match (args.mode, &model) {
        (Mode::Model, Some(m)) => Upscaler::Model(m),
        (Mode::Model, None) => return Err(Failure::Usage("model mode needs --checkpoint".into())),
        (Mode::Bicubic, _) => Upscaler::Bicubic,
        (Mode::Oracle, _) => Upscaler::Oracle,
    };
    let spec = DegradationSpec::new(args.kind, scale).with_seed(args.seed);
    let data = load_dataset(&args.benchmark, &spec)?;
    let report = evaluate(upscaler, &data, args.shave.unwrap_or(scale))?;
    let summary = format!(
        "mean psnr {:.4} dB, ssim {:.4} over {} images (bicubic baseline {:.4} dB, {:.4})",
        report.mean_psnr(),
        report.mean_ssim(),
        report.rows.len(),
        report.baseline_mean_psnr(),
        report.baseline_mean_ssim()
    );
    match &args.csv {
        Some(path) => {
            fs::write(path, report.to_csv())?;
            println!("{summary}");
        }
        None => {
            print!("{}", report.to_csv());
            eprintln!("{summary}");
        }
    }
    Ok(())
}

fn degrade_cmd(args: DegradeArgs) -> Outcome {
    if args.kind != DegradationKind::Bi && args.scale != 3 {
        log::warn!("{} is conventionally evaluated at x3 only; proceeding at x{}", args.kind.as_str(), args.scale);
    }
    let spec = DegradationSpec::new(args.kind, args.scale).with_seed(args.seed);
    spec.validate()?;
    let jobs: Vec<(PathBuf, PathBuf)> = if args.input.is_dir() {
        fs::create_dir_all(&args.output)?;
        list_pngs(&args.input)?
            .into_iter()
            .map(|p| {
                let dest = args.output.join(p.file_name().expect("listed files have names"));
                (p, dest)
            })
            .collect()
    } else {
        vec![(args.input.clone(), args.output.clone())]
    };
    if jobs.is_empty() {
        return Err(Error::EmptyDataset(args.input.display().to_string()).into());
    }
    for (i, (src, dest)) in jobs.iter().enumerate() {
        let spec = spec.clone().with_seed(args.seed.wrapping_add(i as u64));
        save_png(&degrade(&load_png(src)?, &spec)?, dest)?;
    }
    Ok(())
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("PDAN_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| Failure::Usage(format!("PDAN_THREADS = '{raw}' is not a thread count")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Usage(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let outcome = configure_threads().and_then(|()| match cli.command {
        Command::Inspect(a) => inspect(a),
        Command::Train(a) => train(a),
        Command::Sr(a) => sr(a),
        Command::Eval(a) => eval(a),
        Command::Degrade(a) => degrade_cmd(a),
    });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Verification(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Numeric(m)) => {
            eprintln!("numeric failure: {m}");
            ExitCode::from(3)
        }
    }
}
