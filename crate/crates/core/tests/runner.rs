use std::fs;
use std::path::Path;
use std::process::Command;

use delaybuf::config::{load_config, RunConfig};
use delaybuf::metrics::{read_flows, read_summary};
use delaybuf::runner::{
    run_cell, run_matrix, run_matrix_with, summarize_dir, CellFilter, CONFIG_ECHO_FILE, FAILURES_FILE, SUMMARY_FILE,
};

const SMALL: &str = r#"
name = "small"
seeds = [1, 2]
duration_ms = 60
grace_ms = 40
[scheme]
names = ["delay-bm", "dt"]
[sweep]
loads = [0.3]
"#;

fn small() -> RunConfig {
    RunConfig::parse(SMALL, Path::new("small.toml")).unwrap()
}

#[test]
fn same_config_gives_identical_outputs() {
    let cfg = small();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = run_matrix(&cfg, a.path(), 2, &[]).unwrap();
    let rb = run_matrix(&cfg, b.path(), 1, &[]).unwrap();
    assert!(ra.failures.is_empty(), "{:?}", ra.failures);
    assert_eq!(ra.rows, rb.rows);
    assert_eq!(ra.rows.len(), 4);
    for cell in cfg.matrix() {
        let rel = cell.rel_dir().join("flows.csv");
        let fa = fs::read(a.path().join(&rel)).unwrap();
        let fb = fs::read(b.path().join(&rel)).unwrap();
        assert_eq!(fa, fb, "{}", rel.display());
    }
}

#[test]
fn outputs_are_written_per_cell_and_merged() {
    let cfg = small();
    let dir = tempfile::tempdir().unwrap();
    let report = run_matrix(&cfg, dir.path(), 2, &[]).unwrap();
    for cell in cfg.matrix() {
        let d = dir.path().join(cell.rel_dir());
        for f in ["flows.csv", "occupancy.csv", "drops.csv", SUMMARY_FILE] {
            assert!(d.join(f).is_file(), "{}", d.join(f).display());
        }
        let flows = read_flows(&d.join("flows.csv")).unwrap();
        assert!(!flows.is_empty());
        assert!(flows.iter().all(|f| f.finish_ns >= f.start_ns && f.slowdown > 0.0));
    }
    let merged = read_summary(&dir.path().join(SUMMARY_FILE)).unwrap();
    assert_eq!(merged, report.rows);

    // re-merging from the per-cell files gives the same rows, sorted
    let mut again = summarize_dir(dir.path()).unwrap();
    let mut expected = report.rows.clone();
    expected.sort_by(|a, b| (&a.scheme, &a.scenario, a.seed).cmp(&(&b.scheme, &b.scenario, b.seed)));
    assert_eq!(again.len(), expected.len());
    again.sort_by(|a, b| (&a.scheme, &a.scenario, a.seed).cmp(&(&b.scheme, &b.scenario, b.seed)));
    assert_eq!(again, expected);
}

#[test]
fn effective_config_echo_reloads_to_the_same_config() {
    let cfg = small();
    let dir = tempfile::tempdir().unwrap();
    let filters: Vec<CellFilter> = vec!["seed=1".parse().unwrap()];
    let report = run_matrix(&cfg, dir.path(), 1, &filters).unwrap();
    assert_eq!(report.rows.len(), 2);
    let echoed = load_config(&dir.path().join(CONFIG_ECHO_FILE)).unwrap();
    assert_eq!(echoed, cfg);
}

#[test]
fn a_crashing_cell_does_not_stop_the_others() {
    let cfg = small();
    let dir = tempfile::tempdir().unwrap();
    let report = run_matrix_with(&cfg, dir.path(), 2, &[], |cfg, cell, root| {
        if cell.seed == 2 && cell.scheme.name() == "dt" {
            panic!("injected");
        }
        run_cell(cfg, cell, root)
    })
    .unwrap();
    assert_eq!(report.rows.len(), 3);
    assert_eq!(report.failures.len(), 1);
    assert!(report.failures[0].message.contains("injected"));
    let listed = fs::read_to_string(dir.path().join(FAILURES_FILE)).unwrap();
    assert!(listed.contains("dt") && listed.contains("seed2"), "{listed}");
}

#[test]
fn dropping_cells_leaves_the_others_unchanged() {
    let cfg = small();
    let all = tempfile::tempdir().unwrap();
    let some = tempfile::tempdir().unwrap();
    run_matrix(&cfg, all.path(), 1, &[]).unwrap();
    let filters: Vec<CellFilter> = vec!["scheme=delay-bm".parse().unwrap(), "seed=2".parse().unwrap()];
    let r = run_matrix(&cfg, some.path(), 1, &filters).unwrap();
    assert_eq!(r.rows.len(), 1);
    let cell = cfg
        .matrix()
        .into_iter()
        .find(|c| c.seed == 2 && c.scheme.name() == "delay-bm")
        .unwrap();
    for f in ["flows.csv", "occupancy.csv", "drops.csv", SUMMARY_FILE] {
        let rel = cell.rel_dir().join(f);
        assert_eq!(
            fs::read(all.path().join(&rel)).unwrap(),
            fs::read(some.path().join(&rel)).unwrap()
        );
    }
}

#[test]
fn two_schemes_two_loads_three_seeds_make_twelve_cells() {
    let mut cfg = small();
    cfg.seeds = vec![1, 2, 3];
    cfg.sweep.loads = vec![0.2, 0.3];
    cfg.duration_ms = 20;
    let dir = tempfile::tempdir().unwrap();
    let report = run_matrix(&cfg, dir.path(), 2, &[]).unwrap();
    assert_eq!(report.rows.len(), 12);
    let mut n = 0;
    for cell in cfg.matrix() {
        n += dir.path().join(cell.rel_dir()).join("flows.csv").is_file() as usize;
    }
    assert_eq!(n, 12);
}

#[test]
fn summarize_rejects_an_empty_directory() {
    let dir = tempfile::tempdir().unwrap();
    assert!(summarize_dir(dir.path()).is_err());
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_delaybuf"))
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    let out = dir.path().join("out");

    let st = cli()
        .args([
            "run",
            cfg.to_str().unwrap(),
            "--filter",
            "scheme=dt",
            "--filter",
            "seed=1",
            "--jobs",
            "1",
        ])
        .env("DELAYBUF_OUT", &out)
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(0));
    assert_eq!(read_summary(&out.join(SUMMARY_FILE)).unwrap().len(), 1);

    let st = cli().args(["summarize", out.to_str().unwrap()]).status().unwrap();
    assert_eq!(st.code(), Some(0));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "seeds = []\n").unwrap();
    let o = cli().args(["run", bad.to_str().unwrap()]).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("seeds"));

    let o = cli().args(["run", "/nonexistent/x.toml"]).output().unwrap();
    assert_eq!(o.status.code(), Some(1));

    let st = cli()
        .args(["run", cfg.to_str().unwrap(), "--filter", "nope"])
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(1));

    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let st = cli().args(["summarize", empty.to_str().unwrap()]).status().unwrap();
    assert_eq!(st.code(), Some(2));
}

#[test]
fn cli_verify_passes_for_the_default_checks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("v.toml");
    fs::write(
        &cfg,
        "[scheme]\nnames = [\"delay-bm\", \"abm\"]\n[verify]\nalphas = [0.5, 1.0]\n",
    )
    .unwrap();
    let o = cli().args(["verify", cfg.to_str().unwrap()]).output().unwrap();
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{text}");
    assert!(text.contains("PASS occupancy"));
    assert!(text.contains("not applicable to abm"));
}
