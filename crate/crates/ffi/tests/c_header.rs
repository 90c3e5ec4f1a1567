//! Builds a C program against the generated header and the shared library.

mod common;

use std::path::{Path, PathBuf};
use std::process::Command;

fn cc() -> String {
    std::env::var("CC").unwrap_or_else(|_| "cc".into())
}

/// Directory holding the built cdylib, next to the test's tmp dir.
fn lib_dir() -> PathBuf {
    let target = Path::new(env!("CARGO_TARGET_TMPDIR")).parent().unwrap().to_path_buf();
    let profile = if cfg!(debug_assertions) { "debug" } else { "release" };
    target.join(profile)
}

#[test]
fn c_program_scans_through_the_header() {
    if Command::new(cc()).arg("--version").output().is_err() {
        return;
    }
    let lib_dir = lib_dir();
    if !lib_dir.join("libapsrgen_ffi.so").exists() {
        eprintln!("cdylib not found in {}; skipping", lib_dir.display());
        return;
    }
    let crate_dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let tmp = tempfile::tempdir().unwrap();
    let exe = tmp.path().join("smoke");
    let out = Command::new(cc())
        .arg(crate_dir.join("tests/smoke.c"))
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg("-L")
        .arg(&lib_dir)
        .arg("-lapsrgen_ffi")
        .arg(format!("-Wl,-rpath,{}", lib_dir.display()))
        .arg("-o")
        .arg(&exe)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let store = tmp.path().join("rules.jsonl");
    common::write_store(&store);
    let fixtures = common::core_fixtures();
    let run =
        Command::new(&exe).arg(fixtures.join("minidb")).arg(&store).arg(fixtures.join("apps/app")).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), "rules=3 findings=3");
}
