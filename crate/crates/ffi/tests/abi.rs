use std::ffi::{c_char, CStr, CString};
use std::ptr;

use greenwash_ffi::*;

const ITEMS: [&str; 4] = ["natural_gas", "fossil_fuel", "climate", "llm_a"];
const SOURCES: [GwItemSource; 4] = [GwItemSource::Keyword, GwItemSource::Keyword, GwItemSource::Keyword, GwItemSource::Llm];

/// Ads ordered by a latent position; low rows say "fossil fuel", high rows
/// "natural gas", and the annotator item goes missing on every fifth ad.
fn cells(n: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(n * ITEMS.len());
    for i in 0..n {
        let t = i as f64 / (n - 1) as f64;
        out.push(u8::from(t > 0.6 || i % 7 == 0));
        out.push(u8::from(t < 0.4 || i % 11 == 0));
        out.push(u8::from(i % 3 == 0));
        out.push(if i % 5 == 0 { 2 } else { u8::from(t > 0.5) });
    }
    out
}

fn last_error() -> String {
    let p = gw_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn build(n: usize, cells: &[u8]) -> (GwStatus, *mut GwMatrix) {
    let ids: Vec<CString> = (0..n).map(|i| CString::new(format!("ad{i:03}")).unwrap()).collect();
    let id_ptrs: Vec<*const c_char> = ids.iter().map(|c| c.as_ptr()).collect();
    let keys: Vec<CString> = ITEMS.iter().map(|k| CString::new(*k).unwrap()).collect();
    let key_ptrs: Vec<*const c_char> = keys.iter().map(|c| c.as_ptr()).collect();
    let mut m = ptr::null_mut();
    let s = unsafe { gw_matrix_new(n, id_ptrs.as_ptr(), ITEMS.len(), key_ptrs.as_ptr(), SOURCES.as_ptr(), cells.as_ptr(), &mut m) };
    (s, m)
}

#[test]
fn fit_round_trip_through_handles() {
    let n = 60;
    let (s, m) = build(n, &cells(n));
    assert_eq!(s, GwStatus::Ok);
    unsafe {
        assert_eq!((gw_matrix_n_ads(m), gw_matrix_n_items(m)), (n, 4));
        let config = CString::new("draws = 200\n").unwrap();
        let mut p = ptr::null_mut();
        assert_eq!(gw_fit(m, config.as_ptr(), 11, &mut p), GwStatus::Ok);
        assert_eq!(gw_posterior_n_ads(p), n);

        let mut lo = GwSummary { mean: 0.0, q05: 0.0, q95: 0.0 };
        let mut hi = lo;
        let mut class = GwClassification::Unclassified;
        assert_eq!(gw_posterior_score(p, 0, &mut lo, &mut class), GwStatus::Ok);
        assert_eq!(gw_posterior_score(p, n - 1, &mut hi, ptr::null_mut()), GwStatus::Ok);
        assert!(lo.q05 <= lo.mean && lo.mean <= lo.q95);
        // natural gas anchors the positive direction
        assert!(hi.mean > lo.mean, "{hi:?} vs {lo:?}");
        assert_eq!(class, gw_classify(lo));

        let key = CString::new("natural_gas").unwrap();
        let mut item = lo;
        assert_eq!(gw_posterior_item(p, key.as_ptr(), GwStage::Outcome as u32, &mut item), GwStatus::Ok);
        assert!(item.mean > 0.9);
        let llm = CString::new("llm_a").unwrap();
        assert_eq!(gw_posterior_item(p, llm.as_ptr(), GwStage::Missingness as u32, &mut item), GwStatus::Ok);
        assert_eq!(gw_posterior_item(p, key.as_ptr(), 7, &mut item), GwStatus::OutOfRange);

        assert_eq!(gw_posterior_score(p, n, &mut lo, ptr::null_mut()), GwStatus::OutOfRange);
        assert!(last_error().contains("out of range"));

        let dir = tempfile::tempdir().unwrap();
        let d = CString::new(dir.path().to_str().unwrap()).unwrap();
        assert_eq!(gw_posterior_write(p, d.as_ptr()), GwStatus::Ok);
        assert!(dir.path().join("scores.tsv").exists());

        let path = CString::new(dir.path().join("m.tsv").to_str().unwrap()).unwrap();
        assert_eq!(gw_matrix_write(m, path.as_ptr()), GwStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(gw_matrix_read(path.as_ptr(), &mut back), GwStatus::Ok);
        assert_eq!(gw_matrix_n_ads(back), n);

        gw_matrix_free(back);
        gw_posterior_free(p);
        gw_matrix_free(m);
    }
}

#[test]
fn errors_map_to_codes() {
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(gw_matrix_read(ptr::null(), &mut m), GwStatus::NullPointer);
        let missing = CString::new("/nonexistent/greenwash/matrix.tsv").unwrap();
        assert_eq!(gw_matrix_read(missing.as_ptr(), &mut m), GwStatus::Io);
        assert!(m.is_null());

        let dir = tempfile::tempdir().unwrap();
        let junk = dir.path().join("junk.tsv");
        std::fs::write(&junk, "not a matrix\n").unwrap();
        let junk = CString::new(junk.to_str().unwrap()).unwrap();
        assert_eq!(gw_matrix_read(junk.as_ptr(), &mut m), GwStatus::Input);

        let bad = [0xff_u8, 0xfe, 0];
        assert_eq!(gw_matrix_read(bad.as_ptr().cast(), &mut m), GwStatus::InvalidUtf8);

        assert_eq!(gw_fit(ptr::null(), ptr::null(), 0, &mut ptr::null_mut()), GwStatus::NullPointer);
        gw_matrix_free(ptr::null_mut());
        gw_posterior_free(ptr::null_mut());
        assert_eq!(gw_matrix_n_ads(ptr::null()), 0);
    }
    // a keyword item with a missing cell
    let mut c = cells(10);
    c[0] = 2;
    let (s, m) = build(10, &c);
    assert_eq!(s, GwStatus::Validation);
    assert!(m.is_null());
    assert!(last_error().contains("natural_gas"));
    c[0] = 9;
    assert_eq!(build(10, &c).0, GwStatus::OutOfRange);
}

#[test]
fn bad_config_is_rejected() {
    let (s, m) = build(20, &cells(20));
    assert_eq!(s, GwStatus::Ok);
    let config = CString::new("draws = \"many\"\n").unwrap();
    let mut p = ptr::null_mut();
    unsafe {
        let status = gw_fit(m, config.as_ptr(), 0, &mut p);
        assert_ne!(status, GwStatus::Ok);
        assert!(p.is_null());
        gw_matrix_free(m);
    }
}

#[test]
fn classification_rule() {
    let s = |mean, q05, q95| GwSummary { mean, q05, q95 };
    assert_eq!(gw_classify(s(7.05, 3.06, 10.9)), GwClassification::Greenwashing);
    assert_eq!(gw_classify(s(-2.0, -3.0, -0.5)), GwClassification::NonGreenwashing);
    assert_eq!(gw_classify(s(0.1, -1.0, 1.0)), GwClassification::Unclassified);
    let v = unsafe { CStr::from_ptr(gw_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
