use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use delaybuf::config::load_config;
use delaybuf::runner::{self, CellFilter};

#[derive(Parser)]
#[command(name = "delaybuf", version, about = "Shared-buffer management simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every cell of the scenario matrix.
    Run {
        config: PathBuf,
        /// Output directory; overrides `output_dir` in the config.
        #[arg(long, env = "DELAYBUF_OUT")]
        out: Option<PathBuf>,
        /// Worker threads; defaults to the number of CPUs.
        #[arg(long)]
        jobs: Option<usize>,
        /// Keep only matching cells, e.g. `scheme=delay-bm` or `load=0.4,0.8`.
        #[arg(long, value_parser = parse_filter)]
        filter: Vec<CellFilter>,
    },
    /// Check persistent-congestion occupancy against the closed-form bounds.
    Verify { config: PathBuf },
    /// Merge per-cell summaries below a results directory.
    Summarize { dir: PathBuf },
}

fn parse_filter(s: &str) -> Result<CellFilter, String> {
    s.parse().map_err(|e: runner::RunnerError| e.to_string())
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), |v| format!("{v:.2}"))
}

const INVALID: u8 = 1;
const FAILED: u8 = 2;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(INVALID)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match cli.command {
        Command::Run {
            config,
            out,
            jobs,
            filter,
        } => {
            let cfg = match load_config(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(INVALID);
                }
            };
            for w in cfg.warnings() {
                eprintln!("warning: {w}");
            }
            let root = out
                .or_else(|| cfg.output_dir.clone())
                .unwrap_or_else(|| PathBuf::from("results").join(&cfg.name));
            let jobs = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            let cells = runner::select_cells(&cfg, &filter).len();
            eprintln!("running {cells} cells on {jobs} threads into {}", root.display());
            match runner::run_matrix(&cfg, &root, jobs, &filter) {
                Ok(report) => {
                    for r in &report.rows {
                        println!(
                            "{} {} seed={} p99 incast={} short={} long={}",
                            r.scheme,
                            r.scenario,
                            r.seed,
                            fmt_opt(r.incast_p99),
                            fmt_opt(r.short_p99),
                            fmt_opt(r.long_p99)
                        );
                    }
                    for f in &report.failures {
                        eprintln!("failed: {}: {}", f.cell.rel_dir().display(), f.message);
                    }
                    if report.failures.is_empty() {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(FAILED)
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(FAILED)
                }
            }
        }
        Command::Verify { config } => {
            let cfg = match load_config(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(INVALID);
                }
            };
            match runner::verify_steady_state(&cfg) {
                Ok(reports) => {
                    for r in &reports {
                        print!("{r}");
                    }
                    if reports.iter().all(|r| r.passed()) {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(FAILED)
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(FAILED)
                }
            }
        }
        Command::Summarize { dir } => match runner::summarize_dir(&dir) {
            Ok(rows) => {
                println!(
                    "merged {} rows into {}",
                    rows.len(),
                    dir.join(runner::SUMMARY_FILE).display()
                );
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(FAILED)
            }
        },
    }
}
