//! `ballast`: batch degradation reports and the tuning service.

mod batch;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use ballast_core::pipeline::Mode;
use clap::{Parser, Subcommand, ValueEnum};

use batch::{collect_inputs, resolve_config, run_batch, Overrides, ReportFormat, UsageError};

#[derive(Parser)]
#[command(name = "ballast", about = "Ballast degradation evaluation from cross-section images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Stitched,
    Averaged,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Stitched => Mode::Stitched,
            ModeArg::Averaged => Mode::Averaged,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Segment images and write overlays plus PDS reports.
    Process {
        /// Image file or directory of PNG/JPEG images.
        #[arg(long)]
        input: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// JSON configuration; missing fields keep their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        gamma: Option<f64>,
        /// Multiplicative brightness gain.
        #[arg(long)]
        brightness: Option<f64>,
        /// Reference image for histogram matching.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Strel radius, one value or top,middle,bottom.
        #[arg(long, value_delimiter = ',')]
        strel: Vec<usize>,
        /// Bilateral spatial sigma in pixels, one value or three.
        #[arg(long = "sigma-s", value_delimiter = ',')]
        sigma_s: Vec<f64>,
        /// Bilateral range sigma in 8-bit units, one value or three.
        #[arg(long = "sigma-r", value_delimiter = ',')]
        sigma_r: Vec<f64>,
        #[arg(long = "convex-threshold")]
        convex_threshold: Option<f64>,
        /// Pixel area of the calibration ball.
        #[arg(long = "ball-area-px")]
        ball_area_px: Option<f64>,
        #[arg(long, value_enum, default_value = "both")]
        report: ReportFormat,
    },
    /// Run the HTTP tuning service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long = "max-upload-mb", default_value_t = 50)]
        max_upload_mb: usize,
        #[arg(long = "session-ttl-sec", default_value_t = 3600)]
        session_ttl_sec: u64,
        /// Directory with the tuner UI bundle.
        #[arg(long = "static-dir")]
        static_dir: Option<PathBuf>,
        /// Keep uploads and configs here so sessions survive a restart.
        #[arg(long = "session-dir")]
        session_dir: Option<PathBuf>,
    },
    /// Print the version.
    Version,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("BALLAST_LOG", "warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Process {
            input,
            out,
            config,
            mode,
            gamma,
            brightness,
            reference,
            strel,
            sigma_s,
            sigma_r,
            convex_threshold,
            ball_area_px,
            report,
        } => {
            let overrides = Overrides {
                mode: mode.map(Mode::from),
                gamma,
                brightness,
                reference,
                strel,
                sigma_s,
                sigma_r,
                convex_threshold,
                ball_area_px,
            };
            let run = || -> Result<usize, UsageError> {
                let cfg = resolve_config(config.as_deref(), &overrides)?;
                let inputs = collect_inputs(&input)?;
                let outcome = run_batch(&inputs, &cfg, &out, report)?;
                log::info!("{} processed, {} failed", outcome.rows.len(), outcome.failures);
                Ok(outcome.failures)
            };
            match run() {
                Ok(0) => ExitCode::SUCCESS,
                Ok(_) => ExitCode::from(1),
                Err(UsageError(msg)) => {
                    eprintln!("error: {msg}");
                    ExitCode::from(2)
                }
            }
        }
        Command::Serve {
            port,
            max_upload_mb,
            session_ttl_sec,
            static_dir,
            session_dir,
        } => {
            let opts = ballast_service::ServeOptions {
                port,
                max_upload_mb,
                session_ttl: Duration::from_secs(session_ttl_sec),
                static_dir,
                session_dir,
            };
            let rt = tokio::runtime::Runtime::new().expect("tokio runtime");
            match rt.block_on(ballast_service::serve(opts)) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            }
        }
        Command::Version => {
            println!("ballast {}", env!("CARGO_PKG_VERSION"));
            ExitCode::SUCCESS
        }
    }
}
