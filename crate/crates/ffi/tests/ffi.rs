use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use crossfusion::data::{write_bag, FeatureBag, ScaleFeatures};
use crossfusion::model::{CrossFusion, ModelConfig, Variant};
use crossfusion::survival::{c_index, km_curve, logrank, risk_score};
use crossfusion_ffi::*;

fn bag(d_in: usize, counts: [usize; 3]) -> FeatureBag {
    let scales = counts.map(|n| ScaleFeatures {
        features: (0..n * d_in).map(|i| ((i * 7 % 13) as f32 - 6.0) / 6.0).collect(),
        coords: (0..n as i32).map(|i| [i % 3, i / 3]).collect(),
    });
    FeatureBag { d_in, scales }
}

fn model() -> CrossFusion {
    let cfg = ModelConfig { d_in: 8, d_e: 8, n_heads: 2, ffn_mult: 2, dropout: 0.1, n_bins: 4, variant: Variant::Full };
    CrossFusion::new(cfg, 11).unwrap()
}

fn cpath(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = xf_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn version_matches_package() {
    let v = unsafe { CStr::from_ptr(xf_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn bag_shape_from_file_and_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let b = bag(8, [2, 4, 7]);
    let path = dir.path().join("s.xfbag");
    write_bag(&b, &path).unwrap();

    let mut h = ptr::null_mut();
    assert_eq!(unsafe { xf_bag_read(cpath(&path).as_ptr(), &mut h) }, XfStatus::Ok);
    let (mut d, mut counts) = (0usize, [0usize; 3]);
    assert_eq!(unsafe { xf_bag_shape(h, &mut d, counts.as_mut_ptr()) }, XfStatus::Ok);
    assert_eq!((d, counts), (8, [2, 4, 7]));
    unsafe { xf_bag_free(h) };

    let bytes = b.encode();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { xf_bag_decode(bytes.as_ptr(), bytes.len(), &mut h) }, XfStatus::Ok);
    assert_eq!(unsafe { xf_bag_shape(h, &mut d, counts.as_mut_ptr()) }, XfStatus::Ok);
    assert_eq!(counts, [2, 4, 7]);
    unsafe { xf_bag_free(h) };
}

#[test]
fn bag_errors_map_to_codes() {
    let mut h = ptr::null_mut();
    let junk = b"NOTABAG1";
    assert_eq!(unsafe { xf_bag_decode(junk.as_ptr(), junk.len(), &mut h) }, XfStatus::Format);
    assert!(h.is_null());
    assert!(last_error().contains("byte 0"), "{}", last_error());

    let missing = CString::new("/nonexistent/dir/x.xfbag").unwrap();
    assert_eq!(unsafe { xf_bag_read(missing.as_ptr(), &mut h) }, XfStatus::Io);
    assert!(last_error().contains("x.xfbag"));

    assert_eq!(unsafe { xf_bag_read(ptr::null(), &mut h) }, XfStatus::NullArgument);
    assert_eq!(unsafe { xf_bag_read(missing.as_ptr(), ptr::null_mut()) }, XfStatus::NullArgument);
    unsafe { xf_bag_free(ptr::null_mut()) };
}

#[test]
fn predict_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let m = model();
    let ck = dir.path().join("m.xfckpt");
    m.save(&ck).unwrap();
    let b = bag(8, [3, 5, 9]);
    let bytes = b.encode();
    let want = m.predict(&b).unwrap();

    let (mut mh, mut bh) = (ptr::null_mut(), ptr::null_mut());
    assert_eq!(unsafe { xf_model_load(cpath(&ck).as_ptr(), &mut mh) }, XfStatus::Ok);
    assert_eq!(unsafe { xf_bag_decode(bytes.as_ptr(), bytes.len(), &mut bh) }, XfStatus::Ok);
    let mut n = 0;
    assert_eq!(unsafe { xf_model_n_bins(mh, &mut n) }, XfStatus::Ok);
    assert_eq!(n, 4);

    let (mut hz, mut sv, mut risk) = ([0.0; 4], [0.0; 4], 0.0);
    let st = unsafe { xf_model_predict(mh, bh, hz.as_mut_ptr(), sv.as_mut_ptr(), 4, &mut risk) };
    assert_eq!(st, XfStatus::Ok);
    assert_eq!(hz.to_vec(), want.hazards);
    assert_eq!(sv.to_vec(), want.survival);
    assert_eq!(risk, risk_score(&want.survival));

    let mut only_risk = 0.0;
    let st = unsafe { xf_model_predict(mh, bh, ptr::null_mut(), ptr::null_mut(), 0, &mut only_risk) };
    assert_eq!(st, XfStatus::Ok);
    assert_eq!(only_risk, risk);

    let mut small = [0.0; 3];
    let st = unsafe { xf_model_predict(mh, bh, small.as_mut_ptr(), ptr::null_mut(), 3, ptr::null_mut()) };
    assert_eq!(st, XfStatus::BufferTooSmall);

    let wide = bag(6, [3, 5, 9]).encode();
    let mut wh = ptr::null_mut();
    assert_eq!(unsafe { xf_bag_decode(wide.as_ptr(), wide.len(), &mut wh) }, XfStatus::Ok);
    let st = unsafe { xf_model_predict(mh, wh, hz.as_mut_ptr(), ptr::null_mut(), 4, ptr::null_mut()) };
    assert_eq!(st, XfStatus::InvalidInput);

    unsafe {
        xf_bag_free(wh);
        xf_bag_free(bh);
        xf_model_free(mh);
    }
}

#[test]
fn corrupt_checkpoint_is_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("bad.xfckpt");
    std::fs::write(&ck, b"XFCKPT1 but not really").unwrap();
    let mut mh = ptr::null_mut();
    assert_eq!(unsafe { xf_model_load(cpath(&ck).as_ptr(), &mut mh) }, XfStatus::Format);
    assert!(mh.is_null());
}

const TIMES: [f64; 8] = [1.0, 2.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0];
const EVENTS: [u8; 8] = [1, 1, 0, 1, 0, 1, 1, 0];
const RISK: [f64; 8] = [0.9, 0.5, 0.7, 0.6, 0.2, 0.3, 0.1, 0.0];

fn flags(e: &[u8]) -> Vec<bool> {
    e.iter().map(|&v| v != 0).collect()
}

#[test]
fn statistics_match_library() {
    let mut c = 0.0;
    let st = unsafe { xf_c_index(RISK.as_ptr(), TIMES.as_ptr(), EVENTS.as_ptr(), 8, &mut c) };
    assert_eq!(st, XfStatus::Ok);
    assert_eq!(c, c_index(&RISK, &TIMES, &flags(&EVENTS)).unwrap());

    let want = km_curve(&TIMES, &flags(&EVENTS)).unwrap();
    let (mut t, mut s, mut len) = ([0.0; 8], [0.0; 8], 0);
    let st = unsafe { xf_km(TIMES.as_ptr(), EVENTS.as_ptr(), 8, t.as_mut_ptr(), s.as_mut_ptr(), 8, &mut len) };
    assert_eq!(st, XfStatus::Ok);
    assert_eq!(t[..len], want.times[..]);
    assert_eq!(s[..len], want.survival[..]);

    let st = unsafe { xf_km(TIMES.as_ptr(), EVENTS.as_ptr(), 8, t.as_mut_ptr(), s.as_mut_ptr(), 1, &mut len) };
    assert_eq!(st, XfStatus::BufferTooSmall);
    assert_eq!(len, want.times.len());

    let (mut chi2, mut p) = (0.0, 0.0);
    let st = unsafe {
        xf_logrank(TIMES.as_ptr(), EVENTS.as_ptr(), 4, TIMES[4..].as_ptr(), EVENTS[4..].as_ptr(), 4, &mut chi2, &mut p)
    };
    assert_eq!(st, XfStatus::Ok);
    let lr = logrank(&TIMES[..4], &flags(&EVENTS[..4]), &TIMES[4..], &flags(&EVENTS[4..])).unwrap();
    assert_eq!((chi2, p), (lr.chi2, lr.p));
}

#[test]
fn undefined_statistics_report_undefined() {
    let none = [0u8; 4];
    let (mut c, mut chi2, mut p) = (0.0, 0.0, 0.0);
    let st = unsafe { xf_c_index(RISK.as_ptr(), TIMES.as_ptr(), none.as_ptr(), 4, &mut c) };
    assert_eq!(st, XfStatus::Undefined);
    let st = unsafe { xf_logrank(TIMES.as_ptr(), none.as_ptr(), 4, TIMES.as_ptr(), none.as_ptr(), 4, &mut chi2, &mut p) };
    assert_eq!(st, XfStatus::Undefined);
    let st = unsafe { xf_c_index(ptr::null(), TIMES.as_ptr(), EVENTS.as_ptr(), 4, &mut c) };
    assert_eq!(st, XfStatus::NullArgument);
    assert!(last_error().contains("risk"));
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/crossfusion.h")).unwrap();
    for name in [
        "xf_last_error",
        "xf_version",
        "xf_bag_read",
        "xf_bag_decode",
        "xf_bag_free",
        "xf_bag_shape",
        "xf_model_load",
        "xf_model_free",
        "xf_model_n_bins",
        "xf_model_predict",
        "xf_c_index",
        "xf_km",
        "xf_logrank",
        "typedef struct XfBag XfBag",
        "typedef struct XfModel XfModel",
        "XF_STATUS_BUFFER_TOO_SMALL = 6",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include "crossfusion.h"

int main(void) {
    double t[4] = {1.0, 2.0, 3.0, 4.0};
    uint8_t e[4] = {1, 1, 1, 1};
    double r[4] = {4.0, 3.0, 2.0, 1.0};
    double c = 0.0;
    if (xf_c_index(r, t, e, 4, &c) != XF_STATUS_OK || c != 1.0) return 1;
    XfBag *bag = NULL;
    if (xf_bag_read("/nonexistent.xfbag", &bag) != XF_STATUS_IO) return 2;
    if (xf_last_error() == NULL || bag != NULL) return 3;
    printf("%s\n", xf_version());
    return 0;
}
"#;

fn target_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_static_library() {
    let lib = target_dir().join("libcrossfusion_ffi.a");
    assert!(lib.exists(), "{} not built", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    let exe = dir.path().join("smoke");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(&cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("C compiler");
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), env!("CARGO_PKG_VERSION"));
}
