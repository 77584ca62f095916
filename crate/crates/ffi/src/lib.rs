//! C ABI over the greenwash library.
//!
//! Objects cross the boundary as opaque handles that the caller releases with
//! the matching `_free` function. Every fallible call returns a [`GwStatus`];
//! on failure the message is available from [`gw_last_error`] on the same
//! thread until the next failing call. Panics never unwind into C; they are
//! reported as [`GwStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use greenwash::irt::{self, Classification, IrtConfig, IrtPosterior, ScoreSummary, Stage};
use greenwash::{Error, ErrorCategory, IndicatorMatrix, ItemDescriptor, ItemSource, Response};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GwStatus {
    Ok = 0,
    /// A required pointer was null.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Index or enum value out of range.
    OutOfRange = 3,
    Io = 4,
    /// Malformed input file or text.
    Input = 5,
    /// Well-formed input that breaks a precondition.
    Validation = 6,
    /// Estimation or regression failure.
    Model = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GwClassification {
    Greenwashing = 0,
    NonGreenwashing = 1,
    Unclassified = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GwItemSource {
    Keyword = 0,
    Llm = 1,
    Stance = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GwStage {
    Outcome = 0,
    Missingness = 1,
}

/// Posterior mean and 90% interval.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GwSummary {
    pub mean: f64,
    pub q05: f64,
    pub q95: f64,
}

/// Opaque indicator matrix.
pub struct GwMatrix(IndicatorMatrix);

/// Opaque fitted posterior.
pub struct GwPosterior(IrtPosterior);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(GwStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e.category() {
            ErrorCategory::Io => GwStatus::Io,
            ErrorCategory::Input => GwStatus::Input,
            ErrorCategory::Validation => GwStatus::Validation,
            ErrorCategory::Model => GwStatus::Model,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(GwStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> GwStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GwStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            GwStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(GwStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

fn to_c(s: ScoreSummary) -> GwSummary {
    GwSummary {
        mean: s.mean,
        q05: s.q05,
        q95: s.q95,
    }
}

fn class_to_c(c: Classification) -> GwClassification {
    match c {
        Classification::Greenwashing => GwClassification::Greenwashing,
        Classification::NonGreenwashing => GwClassification::NonGreenwashing,
        Classification::Unclassified => GwClassification::Unclassified,
    }
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gw_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or null. Valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn gw_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Reads a matrix file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gw_matrix_read(path: *const c_char, out: *mut *mut GwMatrix) -> GwStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let m = IndicatorMatrix::read_path(&PathBuf::from(path))?;
        *out = Box::into_raw(Box::new(GwMatrix(m)));
        Ok(())
    })
}

/// Builds a matrix from row-major cells (`0` no, `1` yes, `2` missing).
/// Keyword items may not contain missing cells.
///
/// # Safety
/// `ad_ids` holds `n_ads` strings, `item_keys` and `sources` hold `n_items`
/// entries, `cells` holds `n_ads * n_items` bytes, `out` is valid.
#[no_mangle]
pub unsafe extern "C" fn gw_matrix_new(
    n_ads: usize,
    ad_ids: *const *const c_char,
    n_items: usize,
    item_keys: *const *const c_char,
    sources: *const GwItemSource,
    cells: *const u8,
    out: *mut *mut GwMatrix,
) -> GwStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let len = n_ads
            .checked_mul(n_items)
            .ok_or_else(|| Failure(GwStatus::OutOfRange, "matrix size overflows".into()))?;
        let slice = |p: *const *const c_char, n: usize, what: &str| -> Result<Vec<String>, Failure> {
            if n == 0 {
                return Ok(Vec::new());
            }
            if p.is_null() {
                return Err(null(what));
            }
            std::slice::from_raw_parts(p, n)
                .iter()
                .map(|&s| str_arg(s, what).map(str::to_string))
                .collect()
        };
        let ads = slice(ad_ids, n_ads, "ad_ids")?;
        let keys = slice(item_keys, n_items, "item_keys")?;
        if n_items > 0 && sources.is_null() {
            return Err(null("sources"));
        }
        if len > 0 && cells.is_null() {
            return Err(null("cells"));
        }
        let items = keys
            .into_iter()
            .enumerate()
            .map(|(j, key)| {
                // read as raw bytes: C may pass values outside the enum
                let code = *sources.cast::<u32>().add(j);
                let source = match code {
                    0 => ItemSource::Keyword,
                    1 => ItemSource::Llm,
                    2 => ItemSource::Stance,
                    v => return Err(Failure(GwStatus::OutOfRange, format!("item source {v} for {key}"))),
                };
                Ok(ItemDescriptor {
                    key,
                    source,
                    can_be_missing: source != ItemSource::Keyword,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let raw = if len == 0 { &[][..] } else { std::slice::from_raw_parts(cells, len) };
        let cells = raw
            .iter()
            .map(|&c| match c {
                0 => Ok(Response::No),
                1 => Ok(Response::Yes),
                2 => Ok(Response::Missing),
                v => Err(Failure(GwStatus::OutOfRange, format!("cell value {v}"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let m = IndicatorMatrix::new(ads, items, cells)?;
        *out = Box::into_raw(Box::new(GwMatrix(m)));
        Ok(())
    })
}

/// # Safety
/// `m` must be a live matrix handle or null.
#[no_mangle]
pub unsafe extern "C" fn gw_matrix_n_ads(m: *const GwMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.0.n_ads())
}

/// # Safety
/// `m` must be a live matrix handle or null.
#[no_mangle]
pub unsafe extern "C" fn gw_matrix_n_items(m: *const GwMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.0.n_items())
}

/// # Safety
/// `m` must be a live matrix handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn gw_matrix_write(m: *const GwMatrix, path: *const c_char) -> GwStatus {
    guard(|| {
        let m = handle(m, "matrix")?;
        let path = PathBuf::from(str_arg(path, "path")?);
        let f = std::fs::File::create(&path).map_err(|e| Failure(GwStatus::Io, format!("{}: {e}", path.display())))?;
        m.0.write(std::io::BufWriter::new(f))?;
        Ok(())
    })
}

/// # Safety
/// `m` must come from this library and not be used afterwards. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn gw_matrix_free(m: *mut GwMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Fits the model. `config_toml` holds IRT settings (null for defaults);
/// `seed` overrides its seed.
///
/// # Safety
/// `m` must be a live matrix handle, `config_toml` null or NUL-terminated,
/// `out` valid.
#[no_mangle]
pub unsafe extern "C" fn gw_fit(
    m: *const GwMatrix,
    config_toml: *const c_char,
    seed: u64,
    out: *mut *mut GwPosterior,
) -> GwStatus {
    guard(|| {
        let m = handle(m, "matrix")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let mut config = if config_toml.is_null() {
            IrtConfig::default()
        } else {
            IrtConfig::from_toml(str_arg(config_toml, "config_toml")?)?
        };
        config.seed = seed;
        config.validate()?;
        let p = irt::fit_laplace(&m.0, &config)?;
        *out = Box::into_raw(Box::new(GwPosterior(p)));
        Ok(())
    })
}

/// # Safety
/// `p` must be a live posterior handle or null.
#[no_mangle]
pub unsafe extern "C" fn gw_posterior_n_ads(p: *const GwPosterior) -> usize {
    p.as_ref().map_or(0, |p| p.0.ads.len())
}

/// Score summary and classification of ad `i` (matrix row order).
///
/// # Safety
/// `p` must be a live posterior handle; `out` valid; `class_out` valid or null.
#[no_mangle]
pub unsafe extern "C" fn gw_posterior_score(
    p: *const GwPosterior,
    i: usize,
    out: *mut GwSummary,
    class_out: *mut GwClassification,
) -> GwStatus {
    guard(|| {
        let p = handle(p, "posterior")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let s = *p.0.scores.get(i).ok_or_else(|| {
            Failure(GwStatus::OutOfRange, format!("ad index {i} out of range (n = {})", p.0.scores.len()))
        })?;
        *out = to_c(s);
        if !class_out.is_null() {
            *class_out = class_to_c(irt::classify(&s));
        }
        Ok(())
    })
}

/// Discrimination summary of item `key` in `stage`, a [`GwStage`] value.
///
/// # Safety
/// `p` must be a live posterior handle, `key` NUL-terminated, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn gw_posterior_item(
    p: *const GwPosterior,
    key: *const c_char,
    stage: u32,
    out: *mut GwSummary,
) -> GwStatus {
    guard(|| {
        let p = handle(p, "posterior")?;
        let key = str_arg(key, "key")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let stage = match stage {
            0 => Stage::Outcome,
            1 => Stage::Missingness,
            v => return Err(Failure(GwStatus::OutOfRange, format!("stage {v}"))),
        };
        let item = p
            .0
            .item_summary(key, stage)
            .ok_or_else(|| Failure(GwStatus::OutOfRange, format!("no {} item {key}", stage.as_str())))?;
        *out = to_c(item.discrimination);
        Ok(())
    })
}

/// Writes `scores.tsv`, `items.tsv` and `diagnostics.tsv` into `dir`.
///
/// # Safety
/// `p` must be a live posterior handle and `dir` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn gw_posterior_write(p: *const GwPosterior, dir: *const c_char) -> GwStatus {
    guard(|| {
        let p = handle(p, "posterior")?;
        let dir = PathBuf::from(str_arg(dir, "dir")?);
        irt::write_fit_dir(&p.0, &dir)?;
        Ok(())
    })
}

/// # Safety
/// `p` must come from this library and not be used afterwards. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn gw_posterior_free(p: *mut GwPosterior) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// The three-way rule applied to a posterior summary.
#[no_mangle]
pub extern "C" fn gw_classify(summary: GwSummary) -> GwClassification {
    class_to_c(irt::classify(&ScoreSummary {
        mean: summary.mean,
        q05: summary.q05,
        q95: summary.q95,
    }))
}
