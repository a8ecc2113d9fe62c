use std::path::Path;
use std::process::Command;

const PROGRAM: &str = r#"
#include "delaybuf.h"
#include <stdio.h>

int main(void) {
    uint64_t ns = 0;
    DbsSteadyState ss;
    DbsSummary row;
    DbsConfig *cfg = NULL;
    DbsReport *report = NULL;
    const char *scheme = NULL;
    DbsStatus st = dbs_drain_time_bound_ns(983040, 1, 2, 10000000000ULL, &ns);
    st = dbs_steady_state(983040, 10000000000ULL, 1, 2, 1, &ss);
    st = dbs_config_parse("seeds = [1]", &cfg);
    if (st != DBS_STATUS_OK) { puts(dbs_last_error_message()); }
    st = dbs_report_row(report, 0, &row, &scheme, NULL);
    dbs_report_free(report);
    dbs_config_free(cfg);
    return (int)st + (int)ns;
}
"#;

#[test]
fn generated_header_compiles_as_c() {
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    assert!(include.join("delaybuf.h").is_file());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(&src, PROGRAM).unwrap();
    let Ok(status) = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(&include)
        .arg(&src)
        .status()
    else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    assert!(status.success());
}
