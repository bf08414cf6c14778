mod check;
mod commands;
mod config;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use pieeg_streamd::RecordFormat;

use crate::check::{probe, DiagnosticChecklist, ProbeResult};
use crate::commands::{RecordOpts, ReplayOpts, ServeOpts, StreamOpts};
use crate::config::CommonArgs;

#[derive(Parser, Debug)]
#[command(
    name = "pieeg",
    version,
    about = "PiEEG acquisition, diagnostics and streaming"
)]
struct Cli {
    /// More log output (repeat for debug level).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

fn parse_duration(s: &str) -> Result<Duration, String> {
    humantime::parse_duration(s).map_err(|e| format!("{e} (examples: 10s, 1m30s, 500ms)"))
}

fn parse_speed(s: &str) -> Result<f64, String> {
    let v: f64 = if s == "max" {
        f64::INFINITY
    } else {
        s.parse()
            .map_err(|_| "expected a positive number or \"max\"".to_string())?
    };
    if v > 0.0 {
        Ok(v)
    } else {
        Err("speed must be positive".into())
    }
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
enum FormatArg {
    Csv,
    Raw,
}

impl From<FormatArg> for RecordFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => RecordFormat::Csv,
            FormatArg::Raw => RecordFormat::Raw,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the board test-point checklist and probe device initialization.
    Check {
        #[command(flatten)]
        common: CommonArgs,
        /// Override the tolerance shown for each test point, in percent.
        #[arg(long, value_name = "PCT")]
        tolerance_pct: Option<f64>,
    },
    /// Print samples (µV) or a 2 Hz summary to the terminal.
    Stream {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_parser = parse_duration)]
        duration: Option<Duration>,
        /// Print rate, drops and per-channel RMS twice a second instead of samples.
        #[arg(long)]
        summary: bool,
        /// Channels to show, 1-based.
        #[arg(long, value_delimiter = ',', value_name = "LIST")]
        channels: Vec<u8>,
        /// Skip the filter chain.
        #[arg(long)]
        unfiltered: bool,
    },
    /// Record unfiltered samples to a CSV or raw frame log.
    Record {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, value_parser = parse_duration)]
        duration: Option<Duration>,
        /// Defaults from the file extension (.csv, .peeg).
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
        /// Start a new file after this many MiB.
        #[arg(long, value_name = "MB")]
        rotate_mb: Option<u64>,
    },
    /// Play back a raw frame log.
    Replay {
        path: PathBuf,
        /// Multiple of real time, or "max".
        #[arg(long, default_value = "1", value_parser = parse_speed)]
        speed: f64,
        /// Only print the final summary.
        #[arg(long)]
        summary: bool,
    },
    /// Run the streaming daemon (WebSocket /stream, GET /healthz).
    Serve {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, env = "PIEEG_LISTEN")]
        listen: Option<SocketAddr>,
        /// Also stream frames over plain TCP.
        #[arg(long, env = "PIEEG_TCP_LISTEN")]
        tcp_listen: Option<SocketAddr>,
        /// Exit after this long instead of waiting for Ctrl-C.
        #[arg(long, value_parser = parse_duration)]
        duration: Option<Duration>,
        /// Wait for a "start" command before acquiring.
        #[arg(long)]
        no_autostart: bool,
    },
    /// Show the register image the configuration programs, or decode values.
    Registers {
        #[command(flatten)]
        common: CommonArgs,
        /// Decode REGISTER=VALUE pairs, e.g. CONFIG1=0x96.
        #[arg(long, value_name = "REG=VAL")]
        decode: Vec<String>,
        /// Print the bring-up command script with its bytes.
        #[arg(long)]
        script: bool,
    },
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Check {
            common,
            tolerance_pct,
        } => {
            let mut cfg = common.resolve()?;
            if let Some(p) = tolerance_pct {
                cfg.diagnostics.tolerance_pct = p;
                cfg.validate()?;
            }
            let pct = cfg.diagnostics.tolerance_pct;
            print!("{}", DiagnosticChecklist::new(pct).render(pct));
            println!();
            let result = probe(&cfg, common.ack_safety);
            println!("{result}");
            Ok(match result {
                ProbeResult::Failed(_) => ExitCode::FAILURE,
                _ => ExitCode::SUCCESS,
            })
        }
        Command::Stream {
            common,
            duration,
            summary,
            channels,
            unfiltered,
        } => {
            let cfg = common.resolve()?;
            commands::stream(
                &cfg,
                common.ack_safety,
                StreamOpts {
                    duration,
                    summary,
                    channels,
                    unfiltered,
                },
            )?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Record {
            common,
            out,
            duration,
            format,
            rotate_mb,
        } => {
            let cfg = common.resolve()?;
            commands::record(
                &cfg,
                common.ack_safety,
                RecordOpts {
                    out,
                    duration,
                    format: format.map(Into::into),
                    rotate_mb,
                },
            )?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Replay {
            path,
            speed,
            summary,
        } => {
            commands::replay_cmd(ReplayOpts {
                path,
                speed,
                summary,
            })?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Serve {
            common,
            listen,
            tcp_listen,
            duration,
            no_autostart,
        } => {
            let cfg = common.resolve()?;
            commands::serve_cmd(
                &cfg,
                common.ack_safety,
                ServeOpts {
                    listen,
                    tcp_listen,
                    duration,
                    no_autostart,
                },
            )?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Registers {
            common,
            decode,
            script,
        } => {
            let cfg = common.resolve()?;
            commands::registers(&cfg, &decode, script)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    // Die quietly when piped into `head` and friends.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
