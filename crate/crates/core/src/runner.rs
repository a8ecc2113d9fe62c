//! Scenario-matrix execution, steady-state verification and result merging.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::analytics::{cross_check, CrossCheckReport, Tolerances};
use crate::config::{Cell, ConfigError, RunConfig};
use crate::harness::{self, Granularity, HarnessConfig};
use crate::metrics::{self, MetricsError, SummaryInputs, SummaryRow};
use crate::policy::{BmPolicy, Fraction};
use crate::switch::SwitchError;
use crate::world::{self, WorldError};

pub const SUMMARY_FILE: &str = "summary.csv";
pub const FAILURES_FILE: &str = "failures.txt";
pub const CONFIG_ECHO_FILE: &str = "config.toml";

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Switch(#[from] SwitchError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("packet accounting failed: {0}")]
    Accounting(String),
    #[error("cannot build thread pool: {0}")]
    Pool(String),
    #[error("bad filter `{0}`: expected key=value with key one of scheme, load, burst, buffer, seed")]
    Filter(String),
    #[error("no summary files under {0}")]
    NothingToSummarize(PathBuf),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunnerError + '_ {
    move |source| RunnerError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Restricts a run to matching cells. `scheme=dt,cs` keeps two schemes.
#[derive(Debug, Clone, PartialEq)]
pub struct CellFilter {
    key: FilterKey,
    values: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FilterKey {
    Scheme,
    Load,
    Burst,
    Buffer,
    Seed,
}

impl FromStr for CellFilter {
    type Err = RunnerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || RunnerError::Filter(s.to_string());
        let (k, v) = s.split_once('=').ok_or_else(bad)?;
        let key = match k.trim() {
            "scheme" => FilterKey::Scheme,
            "load" => FilterKey::Load,
            "burst" => FilterKey::Burst,
            "buffer" => FilterKey::Buffer,
            "seed" => FilterKey::Seed,
            _ => return Err(bad()),
        };
        let values: Vec<String> = v
            .split(',')
            .map(|x| x.trim().to_string())
            .filter(|x| !x.is_empty())
            .collect();
        if values.is_empty() {
            return Err(bad());
        }
        Ok(CellFilter { key, values })
    }
}

impl CellFilter {
    pub fn matches(&self, cell: &Cell) -> bool {
        let num = |x: f64| self.values.iter().any(|v| v.parse::<f64>().is_ok_and(|y| y == x));
        match self.key {
            FilterKey::Scheme => self.values.iter().any(|v| v == cell.scheme.name()),
            FilterKey::Load => num(cell.load),
            FilterKey::Burst => num(cell.burst),
            FilterKey::Buffer => self
                .values
                .iter()
                .any(|v| *v == cell.buffer.to_string() || v.parse::<f64>().is_ok_and(|y| y == cell.buffer.kb())),
            FilterKey::Seed => self
                .values
                .iter()
                .any(|v| v.parse::<u64>().is_ok_and(|y| y == cell.seed)),
        }
    }
}

pub fn select_cells(cfg: &RunConfig, filters: &[CellFilter]) -> Vec<Cell> {
    cfg.matrix()
        .into_iter()
        .filter(|c| filters.iter().all(|f| f.matches(c)))
        .collect()
}

/// Runs one cell and writes its CSVs below `root`.
pub fn run_cell(cfg: &RunConfig, cell: &Cell, root: &Path) -> Result<SummaryRow, RunnerError> {
    let world_cfg = cfg.world(cell)?;
    let res = world::run(&world_cfg)?;
    if let Some(e) = res.accounting_errors.first() {
        return Err(RunnerError::Accounting(e.clone()));
    }
    let dir = root.join(cell.rel_dir());
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    metrics::write_flows(&dir.join("flows.csv"), &res.flows.records)?;
    metrics::write_occupancy(&dir.join("occupancy.csv"), &res.occupancy)?;
    metrics::write_drops(&dir.join("drops.csv"), &res.drops)?;
    let scenario = cell.scenario();
    let row = metrics::summarize(&SummaryInputs {
        scheme: cell.scheme.name(),
        scenario: &scenario,
        seed: cell.seed,
        flows: &res.flows,
        occupancy: &res.occupancy,
        mean_throughput_bps: res.throughput_bps,
    });
    metrics::write_summary(&dir.join(SUMMARY_FILE), std::slice::from_ref(&row))?;
    Ok(row)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellFailure {
    pub cell: Cell,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub root: PathBuf,
    /// Summaries of completed cells, in matrix order.
    pub rows: Vec<SummaryRow>,
    pub failures: Vec<CellFailure>,
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = p.downcast_ref::<String>() {
        s.clone()
    } else {
        "panic".into()
    }
}

/// Runs the selected cells on `jobs` threads. A failing cell is recorded
/// and does not stop the others.
pub fn run_matrix(cfg: &RunConfig, root: &Path, jobs: usize, filters: &[CellFilter]) -> Result<RunReport, RunnerError> {
    run_matrix_with(cfg, root, jobs, filters, run_cell)
}

/// As [`run_matrix`] with a custom per-cell body.
pub fn run_matrix_with<F>(
    cfg: &RunConfig,
    root: &Path,
    jobs: usize,
    filters: &[CellFilter],
    body: F,
) -> Result<RunReport, RunnerError>
where
    F: Fn(&RunConfig, &Cell, &Path) -> Result<SummaryRow, RunnerError> + Sync,
{
    fs::create_dir_all(root).map_err(io_err(root))?;
    let echo = root.join(CONFIG_ECHO_FILE);
    fs::write(&echo, cfg.to_toml()).map_err(io_err(&echo))?;
    let cells = select_cells(cfg, filters);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| RunnerError::Pool(e.to_string()))?;
    let outcomes: Vec<Result<SummaryRow, String>> = pool.install(|| {
        cells
            .par_iter()
            .map(
                |cell| match panic::catch_unwind(AssertUnwindSafe(|| body(cfg, cell, root))) {
                    Ok(Ok(row)) => Ok(row),
                    Ok(Err(e)) => Err(e.to_string()),
                    Err(p) => Err(format!("panicked: {}", panic_message(p))),
                },
            )
            .collect()
    });
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (cell, out) in cells.into_iter().zip(outcomes) {
        match out {
            Ok(r) => rows.push(r),
            Err(message) => failures.push(CellFailure { cell, message }),
        }
    }
    metrics::write_summary(&root.join(SUMMARY_FILE), &rows)?;
    let failures_path = root.join(FAILURES_FILE);
    if failures.is_empty() {
        if failures_path.exists() {
            fs::remove_file(&failures_path).map_err(io_err(&failures_path))?;
        }
    } else {
        let text: String = failures
            .iter()
            .map(|f| format!("{}\t{}\n", f.cell.rel_dir().display(), f.message))
            .collect();
        fs::write(&failures_path, text).map_err(io_err(&failures_path))?;
    }
    Ok(RunReport {
        root: root.to_path_buf(),
        rows,
        failures,
    })
}

fn collect_summaries(dir: &Path, root: &Path, out: &mut Vec<PathBuf>) -> Result<(), RunnerError> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .collect::<Result<Vec<_>, _>>()
        .map_err(io_err(dir))?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let path = e.path();
        if path.is_dir() {
            collect_summaries(&path, root, out)?;
        } else if dir != root && e.file_name() == SUMMARY_FILE {
            out.push(path);
        }
    }
    Ok(())
}

/// Merges every per-cell summary below `dir` into `dir/summary.csv`.
pub fn summarize_dir(dir: &Path) -> Result<Vec<SummaryRow>, RunnerError> {
    let mut files = Vec::new();
    collect_summaries(dir, dir, &mut files)?;
    if files.is_empty() {
        return Err(RunnerError::NothingToSummarize(dir.to_path_buf()));
    }
    let mut rows = Vec::new();
    for f in &files {
        rows.extend(metrics::read_summary(f)?);
    }
    rows.sort_by(|a, b| (&a.scheme, &a.scenario, a.seed).cmp(&(&b.scheme, &b.scenario, b.seed)));
    metrics::write_summary(&dir.join(SUMMARY_FILE), &rows)?;
    Ok(rows)
}

/// Saturates one queue in each of two priority classes on a single switch
/// and compares the settled occupancy with the closed-form allocation.
pub fn verify_steady_state(cfg: &RunConfig) -> Result<Vec<CrossCheckReport>, RunnerError> {
    let v = &cfg.verify;
    let port_bps = (v.port_gbps * 1e9).round() as u64;
    let mut modes = Vec::new();
    if v.fluid {
        modes.push((Granularity::Fluid, Tolerances::fluid()));
    }
    if v.packet {
        modes.push((Granularity::Packet, Tolerances::packet()));
    }
    let mut jobs = Vec::new();
    for &kind in &cfg.scheme.names {
        for &a in &v.alphas {
            for &(g, tol) in &modes {
                jobs.push((kind, a, g, tol));
            }
        }
    }
    jobs.into_par_iter()
        .map(|(kind, a, g, tol)| {
            let hi = Fraction::from_f64(a).ok_or_else(|| ConfigError::Invalid {
                key: "verify.alphas".into(),
                msg: format!("{a} is not a non-negative number"),
            })?;
            let alphas = vec![hi, hi * Fraction::new(1, 2)];
            let hcfg = HarnessConfig::congested_queues(
                BmPolicy::new(kind, cfg.scheme.baseline.clone()),
                v.buffer_bytes,
                port_bps,
                alphas,
                &[0, 1],
                g,
            );
            let res = harness::run(&hcfg)?;
            let name = format!("{} alpha={} {:?}", kind.name(), a, g).to_lowercase();
            Ok(cross_check(&name, &res.trace, &hcfg.steady_inputs(), &tol))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{BufferPreset, BufferSize};
    use crate::policy::PolicyKind;

    fn cell(scheme: PolicyKind, load: f64, seed: u64) -> Cell {
        Cell {
            scheme,
            load,
            burst: 0.3,
            buffer: BufferSize::Preset(BufferPreset::Trident2),
            seed,
        }
    }

    #[test]
    fn filters_parse_and_match() {
        let f: CellFilter = "scheme=dt,cs".parse().unwrap();
        assert!(f.matches(&cell(PolicyKind::Dt, 0.4, 1)));
        assert!(!f.matches(&cell(PolicyKind::DelayBm, 0.4, 1)));
        let f: CellFilter = "load=0.4".parse().unwrap();
        assert!(f.matches(&cell(PolicyKind::Dt, 0.4, 1)));
        assert!(!f.matches(&cell(PolicyKind::Dt, 0.2, 1)));
        let f: CellFilter = "buffer=trident2".parse().unwrap();
        assert!(f.matches(&cell(PolicyKind::Dt, 0.4, 1)));
        let f: CellFilter = "buffer=9.6".parse().unwrap();
        assert!(f.matches(&cell(PolicyKind::Dt, 0.4, 1)));
        assert!("speed=1".parse::<CellFilter>().is_err());
        assert!("scheme".parse::<CellFilter>().is_err());
        assert!("scheme=".parse::<CellFilter>().is_err());
    }

    #[test]
    fn filters_combine_conjunctively() {
        let cfg = RunConfig {
            seeds: vec![1, 2, 3],
            ..RunConfig::default()
        };
        let filters = ["scheme=dt".parse().unwrap(), "seed=2,3".parse().unwrap()];
        let cells = select_cells(&cfg, &filters);
        assert_eq!(cells.len(), cfg.sweep.loads.len() * 2);
        assert!(cells.iter().all(|c| c.scheme == PolicyKind::Dt && c.seed >= 2));
    }
}
