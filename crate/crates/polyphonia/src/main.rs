//! Command-line surface. Exit codes: 0 success, 1 usage error, 2 IO/data
//! error.

use clap::{Parser, Subcommand};
use polyphonia::pipeline::{
    run_composite, run_cqt_pcc, run_edit_pipeline, run_entropy, run_prior, run_separate,
    working_sr_from_env, PriorArgs, SeparateArgs,
};
use polyphonia::prior::PriorKind;
use polyphonia::PolyError;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "polyphonia",
    version,
    about = "Acoustic-prior extraction and attention calibration toolkit",
    after_help = "The working sample rate defaults to 16000 Hz; set POLY_WORKING_SR to override."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split a mixture WAV into vocals/bass/drums/others stems.
    Separate {
        /// Input mixture WAV.
        #[arg(long)]
        input: PathBuf,
        /// Directory receiving the four stem WAVs and manifest.json.
        #[arg(long)]
        out_dir: PathBuf,
        /// Harmonic/percussive hard-mask margin.
        #[arg(long, default_value_t = 3.0)]
        margin: f64,
        /// Bass low-pass cutoff in Hz.
        #[arg(long, default_value_t = 300.0)]
        cutoff: f64,
        /// Bass low-pass filter order.
        #[arg(long, default_value_t = 4)]
        order: usize,
    },
    /// Compute an acoustic prior for a target instrument within a mixture.
    Prior {
        /// Input mixture WAV.
        #[arg(long)]
        mix: PathBuf,
        /// Target instrument label, e.g. "violin" or "male voice".
        #[arg(long)]
        target: String,
        /// Directory of externally separated stems; the naive separator runs
        /// when omitted.
        #[arg(long)]
        stems: Option<PathBuf>,
        /// Prior formula: irm_mel, irm, or norm.
        #[arg(long, default_value = "irm_mel")]
        kind: String,
        /// Output tensor container path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run inversion + calibrated editing from a run config file.
    Run {
        /// Key/value run config (steps, lambda_max, schedule, layers, seed,
        /// prior, mask_span, ...).
        #[arg(long)]
        config: PathBuf,
    },
    /// Analysis metrics.
    Metrics {
        #[command(subcommand)]
        command: MetricsCommand,
    },
    /// Re-derive the per-step entropy CSV from a saved trace directory.
    Entropy {
        /// Trace directory written by `run`.
        #[arg(long)]
        trace: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum MetricsCommand {
    /// Melodic-consistency correlation between two WAV files.
    CqtPcc { a: PathBuf, b: PathBuf },
    /// Harmonic-mean composites over an ingested scores table.
    Composite {
        /// CSV with header method,clap,lpaps,cqt1_pcc.
        #[arg(long)]
        table: PathBuf,
        /// Report directory (defaults to the table's directory).
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), PolyError> {
    let working_sr = working_sr_from_env(std::env::var("POLY_WORKING_SR").ok())?;
    match cli.command {
        Command::Separate {
            input,
            out_dir,
            margin,
            cutoff,
            order,
        } => {
            if margin < 1.0 {
                return Err(PolyError::InvalidInput("margin must be >= 1".into()));
            }
            if order == 0 {
                return Err(PolyError::InvalidInput("order must be >= 1".into()));
            }
            let mut args = SeparateArgs::new(input, out_dir.clone(), working_sr);
            args.margin = margin;
            args.cutoff = cutoff;
            args.order = order;
            run_separate(&args)?;
            println!("wrote stems + manifest.json to {}", out_dir.display());
        }
        Command::Prior {
            mix,
            target,
            stems,
            kind,
            out,
        } => {
            let kind = PriorKind::from_tag(&kind)
                .map_err(|_| PolyError::InvalidInput(format!("invalid --kind {kind:?}")))?;
            run_prior(&PriorArgs {
                mix,
                target,
                stems,
                kind,
                out: out.clone(),
                working_sr,
            })?;
            println!("wrote prior to {}", out.display());
        }
        Command::Run { config } => {
            let manifest = run_edit_pipeline(&config, working_sr)?;
            println!(
                "run complete: {} outputs recorded in manifest",
                manifest.outputs.len()
            );
        }
        Command::Metrics { command } => match command {
            MetricsCommand::CqtPcc { a, b } => {
                println!("{:.6}", run_cqt_pcc(&a, &b)?);
            }
            MetricsCommand::Composite { table, out_dir } => {
                let text = run_composite(&table, out_dir.as_deref())?;
                print!("{text}");
            }
        },
        Command::Entropy { trace, out } => {
            run_entropy(&trace, &out)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // help/version requests are successes; everything else is usage
            let _ = err.print();
            return if err.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
