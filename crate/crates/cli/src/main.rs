use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use banditcat::calibration::CalibrationModel;
use banditcat_cli::commands;
use banditcat_cli::service::{self, AppState, ServiceConfig};
use banditcat_cli::{CliError, RunConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Adaptive test administration: calibration, simulation and a session service.
///
/// Set BANDITCAT_LOG (error, warn, info, debug, trace) to control logging.
#[derive(Parser)]
#[command(name = "banditcat", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    #[value(name = "2pl")]
    TwoPl,
    #[value(name = "3pl")]
    ThreePl,
}

#[derive(Subcommand)]
enum Command {
    /// Fit IRT parameters to probability surfaces and write an item bank
    Calibrate {
        #[command(flatten)]
        common: Common,
        /// Surfaces file (JSON lines); defaults to paths.surfaces
        surfaces: Option<PathBuf>,
        /// Force the response model
        #[arg(long)]
        model: Option<Model>,
    },
    /// Simulate administrations and write a report plus exposure table
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Find the smallest exposure-control gamma meeting a maximum-exposure target
    TuneGamma {
        #[command(flatten)]
        common: Common,
        /// Target maximum exposure in (0, 1]; defaults to tune.target
        #[arg(long)]
        target: Option<f64>,
    },
    /// Serve live sessions over HTTP
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
    /// Summarize a simulation report, optionally paired with a retest report
    Metrics {
        #[command(flatten)]
        common: Common,
        report: PathBuf,
        retest: Option<PathBuf>,
    },
}

fn load(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if common.seed.is_some() {
        cfg.seed = common.seed;
    }
    if let Some(out) = &common.out {
        cfg.paths.out_dir = Some(out.clone());
    }
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(value: &T) {
    let mut out = std::io::stdout().lock();
    let _ = serde_json::to_writer_pretty(&mut out, value);
    let _ = writeln!(out);
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Calibrate { common, surfaces, model } => {
            let cfg = load(&common)?;
            let model = model.map(|m| match m {
                Model::TwoPl => CalibrationModel::TwoPl,
                Model::ThreePl => CalibrationModel::ThreePlFreeC,
            });
            let out = commands::calibrate(&cfg, surfaces.as_deref(), model);
            // the fit summary is printed even when the convergence check fails
            if let Ok(o) = &out {
                let s = &o.bank.summary;
                println!(
                    "calibrated {} items: {} converged, {} flagged, median SSE {}",
                    s.items,
                    s.converged,
                    s.flagged.len(),
                    s.median_sse.map_or("n/a".into(), |m| format!("{m:.3e}"))
                );
                println!("wrote {}", o.bank_path.display());
            }
            out.map(|_| ())
        }
        Command::Simulate { common } => {
            let cfg = load(&common)?;
            let o = commands::simulate(&cfg)?;
            let r = &o.report;
            println!("{} sessions, {} administrations", r.sessions.len(), r.total_administrations());
            for (ty, m) in &r.metrics {
                println!(
                    "{ty}: max exposure {}, rmse {}, correlation {}",
                    fmt_opt(m.max_exposure),
                    fmt_opt(m.rmse),
                    fmt_opt(m.score_correlation)
                );
            }
            println!("wrote {} (sha256 {})", o.report_path.display(), o.determinism_hash);
            Ok(())
        }
        Command::TuneGamma { common, target } => {
            let cfg = load(&common)?;
            let o = commands::tune(&cfg, target)?;
            print_json(&o);
            Ok(())
        }
        Command::Serve { common, addr } => {
            let cfg = load(&common)?;
            let bank = commands::load_bank(&cfg)?;
            let state = AppState::new(ServiceConfig {
                bank: Arc::new(bank),
                blueprint: cfg.blueprint.clone(),
                session: cfg.session(),
                seed: cfg.require_seed()?,
                event_dir: Some(cfg.out_dir().join("events")),
            })?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Runtime(e.to_string()))?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(addr)
                    .await
                    .map_err(|e| CliError::Runtime(format!("cannot bind {addr}: {e}")))?;
                let local = listener.local_addr().map_err(|e| CliError::Runtime(e.to_string()))?;
                println!("listening on http://{local}");
                let _ = std::io::stdout().flush();
                service::serve(listener, state).await.map_err(|e| CliError::Runtime(e.to_string()))
            })
        }
        Command::Metrics { common, report, retest } => {
            let cfg = load(&common)?;
            let summary = commands::metrics_cmd(&report, retest.as_deref(), &cfg.out_dir())?;
            print_json(&summary);
            Ok(())
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |x| format!("{x:.4}"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("BANDITCAT_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.into()
        }
    }
}
