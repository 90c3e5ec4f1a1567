//! C interface to the rule extraction, report analysis and misuse detection
//! parts of `apsrgen`.
//!
//! Every function returns an [`ApsrgenStatus`]. On failure a message is kept
//! per thread and can be read with [`apsrgen_last_error`]. Strings returned
//! through out-parameters are owned by the caller and must be released with
//! [`apsrgen_string_free`]; handles are released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use apsrgen::corpus::{self, Library, LibraryConfig};
use apsrgen::detect::{self, Compiled, DetectionRule, ScanOptions};
use apsrgen::pipeline::{self, RuleStoreRecord, StoreFilter};
use apsrgen::rem::{self, RuntimeErrorReport};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApsrgenStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    NotFound = 3,
    Io = 4,
    Parse = 5,
    OutOfRange = 6,
    Internal = 7,
}

/// A loaded C library: configuration, parsed sources and symbols.
pub struct ApsrgenLibrary {
    inner: Library,
}

/// One parsed runtime error report.
pub struct ApsrgenRem {
    inner: RuntimeErrorReport,
}

/// Detection rules compiled from a rule store.
pub struct ApsrgenRuleSet {
    rules: Vec<DetectionRule>,
    options: ScanOptions,
    skipped: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(ApsrgenStatus, String);

impl Failure {
    fn new(status: ApsrgenStatus, msg: impl std::fmt::Display) -> Self {
        Failure(status, msg.to_string())
    }
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Run `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> ApsrgenStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ApsrgenStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            ApsrgenStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(ApsrgenStatus::NullArgument, format!("`{name}` is NULL")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure::new(ApsrgenStatus::InvalidUtf8, format!("`{name}` is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::new(ApsrgenStatus::NullArgument, format!("`{name}` is NULL")))
}

fn out_arg<T>(p: *mut T) -> Result<(), Failure> {
    if p.is_null() {
        return Err(Failure::new(ApsrgenStatus::NullArgument, "output pointer is NULL"));
    }
    Ok(())
}

fn to_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).unwrap_or_default().into_raw()
}

fn corpus_failure(e: corpus::CorpusError) -> Failure {
    let status = match &e {
        corpus::CorpusError::Io { .. } => ApsrgenStatus::Io,
        corpus::CorpusError::NotFound(_) | corpus::CorpusError::NotListed(_) => ApsrgenStatus::NotFound,
        _ => ApsrgenStatus::Parse,
    };
    Failure::new(status, e)
}

/// Message for the last failed call on this thread, or NULL. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn apsrgen_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn apsrgen_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Release a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn apsrgen_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Open the library described by `<dir>/library.toml`.
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn apsrgen_library_open(dir: *const c_char, out: *mut *mut ApsrgenLibrary) -> ApsrgenStatus {
    guard(|| {
        out_arg(out)?;
        *out = ptr::null_mut();
        let dir = str_arg(dir, "dir")?;
        let inner = Library::open(Path::new(dir)).map_err(corpus_failure)?;
        *out = Box::into_raw(Box::new(ApsrgenLibrary { inner }));
        Ok(())
    })
}

/// # Safety
/// `lib` must come from [`apsrgen_library_open`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn apsrgen_library_free(lib: *mut ApsrgenLibrary) {
    if !lib.is_null() {
        drop(Box::from_raw(lib));
    }
}

/// Number of APIs listed in the library configuration.
///
/// # Safety
/// `lib` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn apsrgen_library_api_count(lib: *const ApsrgenLibrary, out: *mut usize) -> ApsrgenStatus {
    guard(|| {
        out_arg(out)?;
        *out = handle(lib, "lib")?.inner.config.api_list.len();
        Ok(())
    })
}

/// Name of the listed API at `index`.
///
/// # Safety
/// `lib` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn apsrgen_library_api_name(
    lib: *const ApsrgenLibrary,
    index: usize,
    out: *mut *mut c_char,
) -> ApsrgenStatus {
    guard(|| {
        out_arg(out)?;
        *out = ptr::null_mut();
        let list = &handle(lib, "lib")?.inner.config.api_list;
        let name = list
            .get(index)
            .ok_or_else(|| Failure::new(ApsrgenStatus::OutOfRange, format!("index {index} of {}", list.len())))?;
        *out = to_c_string(name.clone());
        Ok(())
    })
}

/// JSON API record (declaration, body, parameters) for `api`.
///
/// # Safety
/// `lib` must be a live handle, `api` NUL-terminated, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn apsrgen_library_extract_json(
    lib: *const ApsrgenLibrary,
    api: *const c_char,
    out: *mut *mut c_char,
) -> ApsrgenStatus {
    guard(|| {
        out_arg(out)?;
        *out = ptr::null_mut();
        let lib = &handle(lib, "lib")?.inner;
        let api = str_arg(api, "api")?;
        let record = corpus::extract_api_record(&lib.units, &lib.config, api).map_err(corpus_failure)?;
        let json = serde_json::to_string(&record).map_err(|e| Failure::new(ApsrgenStatus::Internal, e))?;
        *out = to_c_string(json);
        Ok(())
    })
}

/// Parse sanitizer or valgrind output. Unrecognized text yields a report of
/// kind `unknown` rather than an error.
///
/// # Safety
/// `text` must be NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn apsrgen_rem_parse(text: *const c_char, out: *mut *mut ApsrgenRem) -> ApsrgenStatus {
    guard(|| {
        out_arg(out)?;
        *out = ptr::null_mut();
        let text = str_arg(text, "text")?;
        *out = Box::into_raw(Box::new(ApsrgenRem { inner: rem::parse_rem(text) }));
        Ok(())
    })
}

/// # Safety
/// `r` must come from [`apsrgen_rem_parse`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn apsrgen_rem_free(r: *mut ApsrgenRem) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// # Safety
/// `r` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn apsrgen_rem_error_kind(r: *const ApsrgenRem, out: *mut *mut c_char) -> ApsrgenStatus {
    guard(|| {
        out_arg(out)?;
        *out = to_c_string(handle(r, "rem")?.inner.error_kind.clone());
        Ok(())
    })
}

/// Normalized signature text used for clustering, relative to the
/// library's symbols.
///
/// # Safety
/// Both handles must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn apsrgen_rem_signature(
    r: *const ApsrgenRem,
    lib: *const ApsrgenLibrary,
    out: *mut *mut c_char,
) -> ApsrgenStatus {
    guard(|| {
        out_arg(out)?;
        let r = &handle(r, "rem")?.inner;
        let lib = &handle(lib, "lib")?.inner;
        *out = to_c_string(rem::normalize_signature(r, &lib.symbols()).to_string());
        Ok(())
    })
}

/// Whether the fault originates inside `api`, entered from the call made
/// by `program_source` (the harness that produced the report).
///
/// # Safety
/// Handles must be live, strings NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn apsrgen_rem_is_api_related(
    r: *const ApsrgenRem,
    lib: *const ApsrgenLibrary,
    api: *const c_char,
    program_source: *const c_char,
    out: *mut bool,
) -> ApsrgenStatus {
    guard(|| {
        out_arg(out)?;
        let r = &handle(r, "rem")?.inner;
        let lib = &handle(lib, "lib")?.inner;
        let api = str_arg(api, "api")?;
        let src = str_arg(program_source, "program_source")?;
        let unit = corpus::parse_c_unit(apsrgen::harness::PROGRAM_FILE, src.as_bytes()).map_err(corpus_failure)?;
        *out = rem::api_relatedness(r, api, &unit, &lib.symbols()).is_related();
        Ok(())
    })
}

/// Category name of a rule sentence.
///
/// # Safety
/// `text` must be NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn apsrgen_classify(text: *const c_char, out: *mut *mut c_char) -> ApsrgenStatus {
    guard(|| {
        out_arg(out)?;
        let text = str_arg(text, "text")?;
        *out = to_c_string(pipeline::classify_text(text).as_str().to_string());
        Ok(())
    })
}

/// Compile the concrete rules of a store. `lib` may be NULL, in which case
/// release APIs must be named in the rule text and no allocator is treated
/// as may-fail.
///
/// # Safety
/// `store_path` must be NUL-terminated, `lib` live or NULL, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn apsrgen_rules_load(
    store_path: *const c_char,
    lib: *const ApsrgenLibrary,
    out: *mut *mut ApsrgenRuleSet,
) -> ApsrgenStatus {
    guard(|| {
        out_arg(out)?;
        *out = ptr::null_mut();
        let path = str_arg(store_path, "store_path")?;
        let path = Path::new(path);
        if !path.exists() {
            return Err(Failure::new(ApsrgenStatus::NotFound, format!("{} does not exist", path.display())));
        }
        let config = match lib.as_ref() {
            Some(l) => l.inner.config.clone(),
            None => LibraryConfig::from_toml("library_id = \"\"\napi_list = []\n", ".").map_err(corpus_failure)?,
        };
        let records = pipeline::load_rules(path, &StoreFilter::default()).map_err(|e| {
            let status = match e {
                pipeline::StoreError::Io { .. } => ApsrgenStatus::Io,
                _ => ApsrgenStatus::Parse,
            };
            Failure::new(status, e)
        })?;
        let mut rules = Vec::new();
        let mut skipped = 0;
        for rec in &records {
            if let RuleStoreRecord::Concrete(c) = rec {
                match detect::compile_rule(&c.rule, &config) {
                    Compiled::Rule(r) => rules.push(r),
                    Compiled::NotCompilable { .. } => skipped += 1,
                }
            }
        }
        let options = ScanOptions { may_fail_allocators: config.may_fail_allocators.iter().cloned().collect() };
        *out = Box::into_raw(Box::new(ApsrgenRuleSet { rules, options, skipped }));
        Ok(())
    })
}

/// # Safety
/// `set` must come from [`apsrgen_rules_load`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn apsrgen_rules_free(set: *mut ApsrgenRuleSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Number of compiled rules, and of concrete rules that did not compile.
///
/// # Safety
/// `set` must be a live handle; either output may be NULL.
#[no_mangle]
pub unsafe extern "C" fn apsrgen_rules_count(
    set: *const ApsrgenRuleSet,
    compiled: *mut usize,
    not_compilable: *mut usize,
) -> ApsrgenStatus {
    guard(|| {
        let set = handle(set, "set")?;
        if let Some(c) = compiled.as_mut() {
            *c = set.rules.len();
        }
        if let Some(n) = not_compilable.as_mut() {
            *n = set.skipped;
        }
        Ok(())
    })
}

/// Query text for the rule at `index`.
///
/// # Safety
/// `set` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn apsrgen_rules_emit_query(
    set: *const ApsrgenRuleSet,
    index: usize,
    out: *mut *mut c_char,
) -> ApsrgenStatus {
    guard(|| {
        out_arg(out)?;
        *out = ptr::null_mut();
        let set = handle(set, "set")?;
        let rule = set
            .rules
            .get(index)
            .ok_or_else(|| Failure::new(ApsrgenStatus::OutOfRange, format!("index {index} of {}", set.rules.len())))?;
        let q = detect::emit_query_file(rule, &set.options).map_err(|e| Failure::new(ApsrgenStatus::Internal, e))?;
        *out = to_c_string(q);
        Ok(())
    })
}

/// Scan every C file under `app_dir`; findings are written as JSON lines
/// and their number stored in `count` when it is not NULL.
///
/// # Safety
/// `set` must be live, `app_dir` NUL-terminated, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn apsrgen_scan_dir(
    set: *const ApsrgenRuleSet,
    app_dir: *const c_char,
    out: *mut *mut c_char,
    count: *mut usize,
) -> ApsrgenStatus {
    guard(|| {
        out_arg(out)?;
        *out = ptr::null_mut();
        let set = handle(set, "set")?;
        let dir = Path::new(str_arg(app_dir, "app_dir")?);
        let units = corpus::parse_tree(dir).map_err(corpus_failure)?;
        let report = detect::scan_application(&units, &set.rules, &set.options);
        if let Some(c) = count.as_mut() {
            *c = report.findings.len();
        }
        *out = to_c_string(report.to_jsonl());
        Ok(())
    })
}
