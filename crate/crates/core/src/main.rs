//! Batch driver. Exit codes: 0 success, 1 usage, 2 validation or ingestion,
//! 3 runtime.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use eligo::api::{self, AppState, ServerConfig, DEFAULT_PORT};
use eligo::cohort::CaliperRule;
use eligo::dsl::{parse_spec, CriterionSpec};
use eligo::ehr::{generate_synthetic, load_store_dir, write_store, PatientStore, SyntheticConfig};
use eligo::grid::{grid_size, DEFAULT_MAX_CANDIDATES};
use eligo::metrics::Ties;
use eligo::pipeline::{EvalConfig, DEFAULT_HORIZON_DAYS};
use eligo::results::ResultsTable;
use eligo::session::{report, Session};
use eligo::sweep::{run_sweep, SweepOptions};

#[derive(Parser)]
#[command(name = "eligo", version, about = "Explore eligibility-criteria candidates over EHR-style data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TiesArg {
    Breslow,
    Efron,
}

#[derive(Clone, Copy, ValueEnum)]
enum CaliperArg {
    Mad,
    LogitSd,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset.
    Simulate {
        /// Generator parameters as JSON; omitted fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parse and validate a criteria spec; prints the number of candidates.
    Validate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MAX_CANDIDATES)]
        max_grid: u64,
    },
    /// Evaluate every candidate of a spec and write the results table.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Worker threads; 0 uses all cores.
        #[arg(long, default_value_t = 0)]
        threads: usize,
        #[arg(long, default_value_t = DEFAULT_HORIZON_DAYS)]
        horizon_days: u32,
        #[arg(long, default_value_t = DEFAULT_MAX_CANDIDATES)]
        max_grid: u64,
        #[arg(long, value_enum, default_value = "breslow")]
        ties: TiesArg,
        #[arg(long, value_enum, default_value = "mad")]
        caliper: CaliperArg,
        /// SD multiplier for `--caliper logit-sd`.
        #[arg(long, default_value_t = 0.2)]
        caliper_multiplier: f64,
        /// Extra Cox covariates, comma separated.
        #[arg(long, value_delimiter = ',')]
        cox_covariates: Vec<String>,
        /// Propensity confounders, comma separated; defaults to the data dictionary's list.
        #[arg(long, value_delimiter = ',')]
        confounders: Option<Vec<String>>,
    },
    /// Export a session's stage history as Markdown.
    Report {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        session: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Start the HTTP service.
    Serve {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, env = "ELIGO_PORT", default_value_t = DEFAULT_PORT)]
        port: u16,
        #[arg(long, env = "ELIGO_HOST", default_value = "127.0.0.1")]
        host: IpAddr,
        /// Directory for cached results and sessions.
        #[arg(long, env = "ELIGO_CACHE_DIR")]
        cache_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        threads: usize,
        #[arg(long, default_value_t = DEFAULT_MAX_CANDIDATES)]
        max_grid: u64,
        #[arg(long, default_value_t = DEFAULT_HORIZON_DAYS)]
        horizon_days: u32,
    },
}

enum Failure {
    Validation(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> Failure {
    Failure::Validation(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn read_spec(path: &Path) -> Result<CriterionSpec, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    parse_spec(&text).map_err(|e| invalid(format!("{}:{e}", path.display())))
}

fn load_data(dir: &Path) -> Result<PatientStore, Failure> {
    let (store, counts) = load_store_dir(dir).map_err(invalid)?;
    log::info!("loaded {} patients, {} events, {} lab samples", counts.patients, counts.events, counts.labs);
    Ok(store)
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path).map(BufWriter::new).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Simulate { config, seed, out } => {
            let cfg: SyntheticConfig = match config {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).map_err(|e| invalid(format!("{}: {e}", p.display())))?;
                    serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", p.display())))?
                }
                None => SyntheticConfig::default(),
            };
            let store = generate_synthetic(&cfg, seed).map_err(invalid)?;
            write_store(&store, &out).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
            log::info!("wrote {} patients to {}", store.patients().len(), out.display());
        }
        Command::Validate { spec, max_grid } => {
            let parsed = read_spec(&spec)?;
            let size = grid_size(&parsed);
            if size > u128::from(max_grid) {
                return Err(invalid(format!("grid has {size} candidates, more than the limit of {max_grid}")));
            }
            println!("{size}");
        }
        Command::Evaluate {
            data,
            spec,
            out,
            csv,
            threads,
            horizon_days,
            max_grid,
            ties,
            caliper,
            caliper_multiplier,
            cox_covariates,
            confounders,
        } => {
            let parsed = read_spec(&spec)?;
            let size = grid_size(&parsed);
            if size > u128::from(max_grid) {
                return Err(invalid(format!("grid has {size} candidates, more than the limit of {max_grid}")));
            }
            if !(caliper_multiplier.is_finite() && caliper_multiplier > 0.0) {
                return Err(invalid("--caliper-multiplier must be positive"));
            }
            let store = load_data(&data)?;
            let config = EvalConfig {
                horizon_days,
                ties: match ties {
                    TiesArg::Breslow => Ties::Breslow,
                    TiesArg::Efron => Ties::Efron,
                },
                caliper: match caliper {
                    CaliperArg::Mad => CaliperRule::Mad,
                    CaliperArg::LogitSd => CaliperRule::LogitSd { multiplier: caliper_multiplier },
                },
                cox_covariates,
                confounders,
            };
            let options = SweepOptions { threads, max_candidates: max_grid, keep_details: false };
            let output = run_sweep(&store, &parsed, &config, &options, None).map_err(runtime)?;
            let mut w = create(&out)?;
            output.table.write_json(&mut w).map_err(runtime)?;
            w.flush().map_err(runtime)?;
            if let Some(path) = csv {
                let mut w = create(&path)?;
                output.table.write_csv(&mut w).map_err(runtime)?;
                w.flush().map_err(runtime)?;
            }
            let degenerate = output.table.records.iter().filter(|r| !r.status.is_ok()).count();
            log::info!("evaluated {} candidates ({degenerate} degenerate)", output.table.records.len());
        }
        Command::Report { results, session, out } => {
            let file = File::open(&results).map_err(|e| invalid(format!("{}: {e}", results.display())))?;
            let table = ResultsTable::read_json(BufReader::new(file)).map_err(invalid)?;
            let sess = Session::load(&session).map_err(|e| invalid(format!("{}: {e}", session.display())))?;
            if sess.spec_hash != table.header.spec_hash {
                return Err(invalid(format!(
                    "session is for spec {}, results are for spec {}",
                    sess.spec_hash, table.header.spec_hash
                )));
            }
            let text = report(&sess, Some(&table.header.grid.adjustables));
            std::fs::write(&out, text).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
        }
        Command::Serve { data, port, host, cache_dir, threads, max_grid, horizon_days } => {
            let store = load_data(&data)?;
            let config = ServerConfig {
                eval: EvalConfig { horizon_days, ..EvalConfig::default() },
                max_candidates: max_grid,
                threads,
                cache_dir,
            };
            let state = AppState::new(store, config);
            let rt = tokio::runtime::Runtime::new().map_err(runtime)?;
            rt.block_on(api::serve(state, SocketAddr::new(host, port))).map_err(runtime)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Validation(msg) | Failure::Runtime(msg)) = &f;
            eprintln!("error: {msg}");
            ExitCode::from(f.code())
        }
    }
}
