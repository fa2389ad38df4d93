//! Compiles a C program against the generated header and the static library.

use std::path::{Path, PathBuf};
use std::process::Command;

fn manifest() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn header_declares_the_api() {
    let h = std::fs::read_to_string(manifest().join("include/mdiqds.h")).unwrap();
    for sym in [
        "MDIQDS_STATUS_OK = 0",
        "typedef struct MdiqdsScenario MdiqdsScenario",
        "typedef struct MdiqdsReport MdiqdsReport",
        "mdiqds_scenario_from_json(",
        "mdiqds_run(",
        "mdiqds_report_to_json(",
        "mdiqds_report_exit_code(",
        "mdiqds_last_error(void)",
        "mdiqds_string_free(",
        "mdiqds_binomial_tail_log2(",
    ] {
        assert!(h.contains(sym), "header lacks `{sym}`");
    }
}

fn compiler() -> Option<String> {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    Command::new(&cc).arg("--version").output().ok().filter(|o| o.status.success()).map(|_| cc)
}

#[test]
fn c_program_links_and_runs() {
    let Some(cc) = compiler() else {
        eprintln!("no C compiler; skipping");
        return;
    };
    // The test binary sits in target/<profile>/deps, next to the archive
    // cargo builds for it; a plain build leaves one a level up.
    let exe = std::env::current_exe().unwrap();
    let deps = exe.parent().unwrap();
    let lib = [deps, deps.parent().unwrap()]
        .iter()
        .map(|d: &&Path| d.join("libmdiqds_ffi.a"))
        .find(|p| p.exists())
        .expect("libmdiqds_ffi.a next to the test binary");

    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("smoke");
    let st = Command::new(&cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(manifest().join("include"))
        .arg(manifest().join("tests/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(st.success(), "C compile failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "smoke exited {:?}", out.status.code());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.starts_with("exit="), "{stdout}");
}
