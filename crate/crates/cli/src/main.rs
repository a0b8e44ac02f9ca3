use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ood_saliency::explainers::TargetClass;
use ood_saliency::io::load_png;
use ood_saliency::metrics::DEFAULT_THRESHOLD;
use ood_saliency::pipeline::{self, RunConfig};
use ood_saliency::{Error, ErrorKind, ExplainerKind};
use tracing_subscriber::EnvFilter;

/// Perturbation saliency maps with inlier-score correction.
///
/// Log verbosity is read from OODSAL_LOG (e.g. `OODSAL_LOG=info`).
#[derive(Parser)]
#[command(name = "oodsal", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Explain one image and write the heatmap, raw map and provenance.
    Explain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        explainer: ExplainerKind,
        #[arg(long)]
        out: PathBuf,
        /// Class to explain; defaults to the top prediction.
        #[arg(long)]
        target: Option<usize>,
    },
    /// Explain and score every image in a manifest.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the inlier-score anchors of an image as JSON.
    Calibrate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        image: PathBuf,
    },
    /// Report maps that mostly reproduce the average perturbation mask.
    DegradationScan {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
    },
    /// Relative gains of report B over report A, row by row.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Validation => 1,
        ErrorKind::Backend => 2,
        ErrorKind::Io => 3,
    }
}

fn stdout_error(e: impl std::fmt::Display) -> Error {
    Error::Io {
        path: PathBuf::from("<stdout>"),
        source: std::io::Error::other(e.to_string()),
    }
}

fn run(command: Command) -> Result<(), Error> {
    let mut stdout = std::io::stdout().lock();
    match command {
        Command::Explain {
            config,
            image,
            explainer,
            out,
            target,
        } => {
            let cfg = RunConfig::from_path(&config)?;
            let models = cfg.load_models()?;
            let img = load_png(&image)?;
            let target = target.map_or(TargetClass::PredictedArgmax, TargetClass::Index);
            let (exp, spec) = pipeline::explain_image(&cfg, &models, img, explainer, target, cfg.seed)?;
            let stem = image_stem(&image);
            let name = format!("{stem}_{}", pipeline::file_stem(explainer));
            pipeline::write_artifacts(&out, &name, &exp, &spec)?;
            if exp.degenerate_warning() {
                eprintln!("warning: degenerate inlier calibration; all inlier scores are 1");
            }
            writeln!(stdout, "{}", out.join(format!("{name}.png")).display()).map_err(stdout_error)?;
        }
        Command::Evaluate { config, manifest, out } => {
            let cfg = RunConfig::from_path(&config)?;
            let summary = pipeline::evaluate(&cfg, &manifest, &out)?;
            eprintln!(
                "processed {} of {} images ({} skipped)",
                summary.processed.len(),
                summary.manifest_size,
                summary.skipped.len()
            );
            writeln!(stdout, "{}", out.join("report.csv").display()).map_err(stdout_error)?;
        }
        Command::Calibrate { config, image } => {
            let cfg = RunConfig::from_path(&config)?;
            let calib = pipeline::calibrate_image(&cfg, &image)?;
            let text = serde_json::to_string_pretty(&calib).map_err(stdout_error)?;
            writeln!(stdout, "{text}").map_err(stdout_error)?;
        }
        Command::DegradationScan {
            config,
            manifest,
            threshold,
        } => {
            let cfg = RunConfig::from_path(&config)?;
            let scan = pipeline::degradation_scan(&cfg, &manifest, threshold)?;
            let mut w = csv::Writer::from_writer(&mut stdout);
            for row in &scan.rows {
                w.serialize(row).map_err(stdout_error)?;
            }
            w.flush().map_err(stdout_error)?;
            for (kind, rate) in scan.rates() {
                eprintln!("{kind}: {:.1}% degraded", rate * 100.0);
            }
            if !scan.skipped.is_empty() {
                eprintln!("{} images skipped", scan.skipped.len());
            }
        }
        Command::Compare { a, b } => {
            let gains = pipeline::compare(&pipeline::read_report(&a)?, &pipeline::read_report(&b)?)?;
            pipeline::write_gains(&gains, &mut stdout).map_err(stdout_error)?;
        }
    }
    Ok(())
}

fn image_stem(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("OODSAL_LOG").unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
