mod common;

use std::ffi::{c_char, CStr, CString};
use std::ptr;

use apsrgen_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

/// Take ownership of a returned string.
unsafe fn take(p: *mut c_char) -> String {
    assert!(!p.is_null());
    let s = CStr::from_ptr(p).to_str().unwrap().to_string();
    apsrgen_string_free(p);
    s
}

unsafe fn last_error() -> String {
    let p = apsrgen_last_error();
    if p.is_null() {
        String::new()
    } else {
        CStr::from_ptr(p).to_string_lossy().into_owned()
    }
}

unsafe fn open_minidb() -> *mut ApsrgenLibrary {
    let dir = c(common::core_fixtures().join("minidb").to_str().unwrap());
    let mut lib = ptr::null_mut();
    assert_eq!(apsrgen_library_open(dir.as_ptr(), &mut lib), ApsrgenStatus::Ok);
    lib
}

#[test]
fn library_listing_and_extraction() {
    unsafe {
        let lib = open_minidb();
        let mut n = 0;
        assert_eq!(apsrgen_library_api_count(lib, &mut n), ApsrgenStatus::Ok);
        assert_eq!(n, 5);
        let mut name = ptr::null_mut();
        assert_eq!(apsrgen_library_api_name(lib, 2, &mut name), ApsrgenStatus::Ok);
        assert_eq!(take(name), "mini_put");
        assert_eq!(apsrgen_library_api_name(lib, 5, &mut name), ApsrgenStatus::OutOfRange);
        assert!(name.is_null());

        let mut json = ptr::null_mut();
        assert_eq!(apsrgen_library_extract_json(lib, c("mini_open").as_ptr(), &mut json), ApsrgenStatus::Ok);
        let record: serde_json::Value = serde_json::from_str(&take(json)).unwrap();
        assert_eq!(record["param_count"], 2);

        assert_eq!(apsrgen_library_extract_json(lib, c("nope").as_ptr(), &mut json), ApsrgenStatus::NotFound);
        assert!(last_error().contains("nope"));
        apsrgen_library_free(lib);
    }
}

#[test]
fn errors_are_reported_per_call() {
    unsafe {
        let mut lib = ptr::null_mut();
        assert_eq!(apsrgen_library_open(ptr::null(), &mut lib), ApsrgenStatus::NullArgument);
        assert!(!last_error().is_empty());
        assert_eq!(apsrgen_library_open(c("/nonexistent/lib").as_ptr(), &mut lib), ApsrgenStatus::Io);
        assert!(lib.is_null());
        let bad = [0xffu8, 0];
        let mut out = ptr::null_mut();
        assert_eq!(apsrgen_classify(bad.as_ptr().cast(), &mut out), ApsrgenStatus::InvalidUtf8);
        assert_eq!(apsrgen_classify(c("must not be NULL").as_ptr(), &mut out), ApsrgenStatus::Ok);
        assert!(apsrgen_last_error().is_null());
        assert_eq!(take(out), "NULL");
        assert_eq!(apsrgen_library_api_count(ptr::null(), ptr::null_mut()), ApsrgenStatus::NullArgument);
        apsrgen_library_free(ptr::null_mut());
        apsrgen_rem_free(ptr::null_mut());
        apsrgen_rules_free(ptr::null_mut());
        apsrgen_string_free(ptr::null_mut());
        assert!(!CStr::from_ptr(apsrgen_version()).to_bytes().is_empty());
    }
}

#[test]
fn report_analysis() {
    let rem_dir = common::core_fixtures().join("rem");
    let text = std::fs::read_to_string(rem_dir.join("reports/put_uaf_a.asan.txt")).unwrap();
    let program = std::fs::read_to_string(rem_dir.join("programs/put_uaf_a.c")).unwrap();
    unsafe {
        let lib = open_minidb();
        let mut r = ptr::null_mut();
        assert_eq!(apsrgen_rem_parse(c(&text).as_ptr(), &mut r), ApsrgenStatus::Ok);
        let mut kind = ptr::null_mut();
        assert_eq!(apsrgen_rem_error_kind(r, &mut kind), ApsrgenStatus::Ok);
        assert_eq!(take(kind), "heap-use-after-free");
        let mut sig = ptr::null_mut();
        assert_eq!(apsrgen_rem_signature(r, lib, &mut sig), ApsrgenStatus::Ok);
        assert!(take(sig).contains("[mini_put]"));
        let mut related = false;
        let prog = c(&program);
        assert_eq!(
            apsrgen_rem_is_api_related(r, lib, c("mini_put").as_ptr(), prog.as_ptr(), &mut related),
            ApsrgenStatus::Ok
        );
        assert!(related);
        assert_eq!(
            apsrgen_rem_is_api_related(r, lib, c("mini_open").as_ptr(), prog.as_ptr(), &mut related),
            ApsrgenStatus::Ok
        );
        assert!(!related);
        apsrgen_rem_free(r);
        apsrgen_library_free(lib);
    }
}

#[test]
fn rules_scan_and_queries() {
    let tmp = tempfile::tempdir().unwrap();
    let store = tmp.path().join("rules.jsonl");
    common::write_store(&store);
    let app = common::core_fixtures().join("apps/app");
    unsafe {
        let lib = open_minidb();
        let mut set = ptr::null_mut();
        assert_eq!(apsrgen_rules_load(c(store.to_str().unwrap()).as_ptr(), lib, &mut set), ApsrgenStatus::Ok);
        let (mut compiled, mut skipped) = (0, 0);
        assert_eq!(apsrgen_rules_count(set, &mut compiled, &mut skipped), ApsrgenStatus::Ok);
        assert_eq!((compiled, skipped), (3, 1));

        let mut findings = ptr::null_mut();
        let mut count = 0;
        assert_eq!(
            apsrgen_scan_dir(set, c(app.to_str().unwrap()).as_ptr(), &mut findings, &mut count),
            ApsrgenStatus::Ok
        );
        assert_eq!(count, 3);
        assert_eq!(take(findings).lines().count(), 3);

        let mut q = ptr::null_mut();
        assert_eq!(apsrgen_rules_emit_query(set, 0, &mut q), ApsrgenStatus::Ok);
        assert!(take(q).contains("import cpp"));
        assert_eq!(apsrgen_rules_emit_query(set, 3, &mut q), ApsrgenStatus::OutOfRange);
        apsrgen_rules_free(set);

        let missing = c(tmp.path().join("none.jsonl").to_str().unwrap());
        assert_eq!(apsrgen_rules_load(missing.as_ptr(), ptr::null(), &mut set), ApsrgenStatus::NotFound);
        apsrgen_library_free(lib);
    }
}
