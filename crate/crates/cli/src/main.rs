use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rppg::io::{self, ReferenceInput};
use rppg::pipeline::{self, DumpOptions, ExperimentScore, RunReport, Scenario};
use rppg::{Error, PipelineConfig, Result};

/// Heart rate from face video via CIELAB a* cell signals and spectrogram ridge fitting.
#[derive(Parser, Debug)]
#[command(name = "rppg", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Extract a heart-rate curve from frames and landmarks.
    Extract(ExtractArgs),
    /// Score curves against reference recordings.
    Evaluate(EvaluateArgs),
    /// Write synthetic frames, landmarks, signal and ground truth for a scenario.
    Synth(SynthArgs),
    /// Collect MAEs from run reports into one table.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExtractArgs {
    #[command(flatten)]
    common: Common,
    /// PNG directory or raw frame stream.
    #[arg(long)]
    frames: PathBuf,
    /// Newline-delimited JSON landmark file.
    #[arg(long)]
    landmarks: PathBuf,
    /// Optional reference recording; adds an MAE to the report.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the spectrogram matrix and its axes.
    #[arg(long)]
    dump_spectrogram: bool,
    /// Also write the fitter's window-function map.
    #[arg(long)]
    dump_weights: bool,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    /// Curve CSV (time_seconds,bpm).
    #[arg(long, requires = "reference", conflicts_with = "batch")]
    curve: Option<PathBuf>,
    #[arg(long)]
    reference: Option<PathBuf>,
    /// CSV manifest `experiment,curve,reference` for batch scoring.
    #[arg(long)]
    batch: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    /// const<bpm>, ramp<from>_<to> or spikes<bpm>, e.g. const72.
    scenario: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// report.json files written by extract or evaluate.
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_logging() {
        return fail(&e);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}

fn init_logging() -> Result<()> {
    let level = std::env::var("RPPG_LOG_LEVEL").unwrap_or_else(|_| "warn".into());
    if !["error", "warn", "info", "debug"].contains(&level.as_str()) {
        return Err(Error::Config(format!(
            "RPPG_LOG_LEVEL must be error, warn, info or debug, got `{level}`"
        )));
    }
    env_logger::Builder::new().parse_filters(&level).format_timestamp(None).init();
    Ok(())
}

fn fail(e: &Error) -> ExitCode {
    let message = e.to_string().replace('\\', "\\\\").replace('"', "\\\"");
    eprintln!("error: class={} message=\"{message}\"", e.class());
    ExitCode::from(if e.is_numeric() { 3 } else { 2 })
}

fn load_config(common: &Common) -> Result<PipelineConfig> {
    match &common.config {
        Some(path) => PipelineConfig::load(path),
        None => Ok(PipelineConfig::default()),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Extract(args) => extract(args),
        Command::Evaluate(args) => evaluate(args),
        Command::Synth(args) => synth(args),
        Command::Report(args) => report(args),
    }
}

fn experiment_name(dir: &Path) -> String {
    dir.file_name()
        .map_or_else(|| "experiment".to_string(), |n| n.to_string_lossy().into_owned())
}

fn extract(args: ExtractArgs) -> Result<()> {
    let started = Instant::now();
    let config = load_config(&args.common)?;
    // Parse the reference up front so a bad file fails before the slow part.
    let reference = args.reference.as_deref().map(io::read_reference).transpose()?;
    let result = pipeline::extract_files(&args.frames, &args.landmarks, &config)?;
    let dumps = DumpOptions {
        spectrogram: args.dump_spectrogram,
        weights: args.dump_weights,
    };
    let written = pipeline::write_extract_outputs(&args.out, &result, dumps)?;
    let mut report = RunReport::new("extract", &config).with_extract(&result);
    if let Some(reference) = reference {
        let mae = evaluate_against(&result.curve, &reference, &config, result.frame_rate)?;
        report.experiments.push(ExperimentScore {
            experiment: experiment_name(&args.out),
            mae_bpm: mae,
        });
        report.mean_mae_bpm = Some(mae);
        let rows = [(experiment_name(&args.out), mae)];
        io::write_mae_table(io::create_file(&args.out.join(pipeline::MAE_FILE))?, &rows, None)?;
        println!("mae_bpm={mae:.4}");
    }
    report.runtime_seconds = started.elapsed().as_secs_f64();
    report.write(&args.out)?;
    let fit = report.fit.as_ref().expect("extract report carries fit summary");
    println!(
        "mean_bpm={:.4} windows={} iterations={} converged={}",
        result.curve.mean_bpm(),
        result.curve.len(),
        fit.iterations,
        fit.converged
    );
    for path in written {
        log::info!("wrote {}", path.display());
    }
    Ok(())
}

fn evaluate_against(
    curve: &rppg::HeartRateCurve,
    reference: &ReferenceInput,
    config: &PipelineConfig,
    frame_rate: f64,
) -> Result<f64> {
    let reference = reference.to_curve(&config.stft_for(frame_rate))?;
    rppg::evaluation::curve_mae(curve, &reference)
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let started = Instant::now();
    let config = load_config(&args.common)?;
    let (scores, mean) = match (&args.curve, &args.reference, &args.batch) {
        (Some(curve), Some(reference), None) => {
            let mae = pipeline::evaluate_files(curve, reference, &config)?;
            let name = curve
                .file_stem()
                .map_or_else(|| "experiment".to_string(), |s| s.to_string_lossy().into_owned());
            (
                vec![ExperimentScore {
                    experiment: name,
                    mae_bpm: mae,
                }],
                None,
            )
        }
        (None, _, Some(manifest)) => {
            let (scores, mean) = pipeline::evaluate_batch(manifest, &config)?;
            (scores, Some(mean))
        }
        _ => {
            return Err(Error::Config(
                "evaluate needs --curve with --reference, or --batch".into(),
            ))
        }
    };

    println!("{}", io::MAE_HEADER);
    for s in &scores {
        println!("{},{:.4}", s.experiment, s.mae_bpm);
    }
    if let Some(m) = mean {
        println!("mean,{m:.4}");
    }
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out)?;
        let rows: Vec<(String, f64)> = scores.iter().map(|s| (s.experiment.clone(), s.mae_bpm)).collect();
        io::write_mae_table(io::create_file(&out.join(pipeline::MAE_FILE))?, &rows, mean)?;
        let mut report = RunReport::new("evaluate", &config);
        report.experiments = scores;
        report.mean_mae_bpm = mean;
        report.runtime_seconds = started.elapsed().as_secs_f64();
        report.write(out)?;
    }
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let config = load_config(&args.common)?;
    let scenario = Scenario::parse(&args.scenario, &config)?;
    let written = pipeline::run_synth(&scenario, &config, args.seed, &args.out)?;
    for path in written {
        println!("{}", path.display());
    }
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let mut rows = Vec::new();
    for path in &args.reports {
        let value = RunReport::read(path)?;
        let experiments = value
            .get("experiments")
            .and_then(|e| e.as_array())
            .ok_or_else(|| Error::parse(path, 0, "missing `experiments` array"))?;
        for e in experiments {
            let name = e.get("experiment").and_then(|v| v.as_str());
            let mae = e.get("mae_bpm").and_then(|v| v.as_f64());
            match (name, mae) {
                (Some(n), Some(m)) => rows.push((n.to_string(), m)),
                _ => return Err(Error::parse(path, 0, "experiment entries need `experiment` and `mae_bpm`")),
            }
        }
    }
    let mean = rppg::evaluation::batch_mean(&rows.iter().map(|r| r.1).collect::<Vec<_>>())?;
    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max("experiment".len());
    println!("{:<width$}  mae_bpm", "experiment");
    for (name, mae) in &rows {
        println!("{name:<width$}  {mae:.2}");
    }
    println!("{:<width$}  {mean:.2}", "mean");
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out)?;
        io::write_mae_table(io::create_file(&out.join(pipeline::MAE_FILE))?, &rows, Some(mean))?;
    }
    Ok(())
}
