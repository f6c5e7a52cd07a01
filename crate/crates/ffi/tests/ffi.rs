use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use kgte_ffi::*;

fn manifest() -> CString {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/mini/manifest.json");
    CString::new(p.to_str().unwrap()).unwrap()
}

unsafe fn take(s: *mut std::ffi::c_char) -> String {
    let out = CStr::from_ptr(s).to_str().unwrap().to_owned();
    kgte_string_free(s);
    out
}

unsafe fn last_error() -> String {
    let p = kgte_last_error();
    assert!(!p.is_null());
    CStr::from_ptr(p).to_string_lossy().into_owned()
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(kgte_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn normalize_and_parse() {
    unsafe {
        let mut out = ptr::null_mut();
        let input = CString::new("  Alan_Bean  ").unwrap();
        assert_eq!(kgte_normalize(input.as_ptr(), &mut out), KgteStatus::Ok);
        assert_eq!(take(out), "alan bean");

        let raw = CString::new("1. (Alan_Bean, occupation, Astronaut)\nnoise\n(a, b, c)").unwrap();
        assert_eq!(kgte_parse_triplets_json(raw.as_ptr(), 5, &mut out), KgteStatus::Ok);
        let v: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(v["triplets"][0], serde_json::json!(["alan bean", "occupation", "astronaut"]));
        assert_eq!(v["malformed_lines"], 1);

        assert_eq!(kgte_parse_triplets_json(raw.as_ptr(), 0, &mut out), KgteStatus::InvalidArgument);
        assert!(last_error().contains("max_triplets"));
    }
}

#[test]
fn null_and_utf8_errors() {
    unsafe {
        let mut out = ptr::null_mut();
        assert_eq!(kgte_normalize(ptr::null(), &mut out), KgteStatus::NullPointer);
        let bad = [0xffu8, 0xfe, 0];
        assert_eq!(kgte_normalize(bad.as_ptr().cast(), &mut out), KgteStatus::InvalidUtf8);
        let ok = CString::new("x").unwrap();
        assert_eq!(kgte_normalize(ok.as_ptr(), ptr::null_mut()), KgteStatus::NullPointer);
        // a success clears the error slot
        assert_eq!(kgte_normalize(ok.as_ptr(), &mut out), KgteStatus::Ok);
        kgte_string_free(out);
        assert!(kgte_last_error().is_null());
    }
}

#[test]
fn scoring_through_json() {
    unsafe {
        let pred = CString::new(r#"[[["a","r","b"],["x","r","y"]]]"#).unwrap();
        let gold = CString::new(r#"[[["a","r","b"],["c","r","d"],["e","r","f"]]]"#).unwrap();
        let mut out = ptr::null_mut();
        assert_eq!(kgte_micro_f1_json(pred.as_ptr(), gold.as_ptr(), &mut out), KgteStatus::Ok);
        let v: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(v["f1"], 0.4);

        let short = CString::new("[]").unwrap();
        assert_eq!(kgte_micro_f1_json(pred.as_ptr(), short.as_ptr(), &mut out), KgteStatus::Mismatch);
        let junk = CString::new("{").unwrap();
        assert_eq!(kgte_micro_f1_json(junk.as_ptr(), gold.as_ptr(), &mut out), KgteStatus::Parse);
    }
}

#[test]
fn fits() {
    let xs = [0.0, 1.0, 2.0];
    let ys = [1.0, 3.0, 5.0];
    let mut fit = KgteFit::default();
    let status = unsafe { kgte_linear_fit(xs.as_ptr(), ys.as_ptr(), 3, false, &mut fit) };
    assert_eq!(status, KgteStatus::Ok);
    assert_eq!((fit.slope, fit.intercept, fit.r2, fit.n_points), (2.0, 1.0, 1.0, 3));

    let same = [1.0, 1.0];
    let status = unsafe { kgte_linear_fit(same.as_ptr(), ys.as_ptr(), 2, false, &mut fit) };
    assert_eq!(status, KgteStatus::InvalidArgument);

    assert!((kgte_random_f1_closed_form(0.5, 5, 2) - 0.01).abs() < 1e-15);
    assert!(kgte_random_f1_closed_form(0.5, 0, 2).is_nan());
}

#[test]
fn index_lifecycle() {
    unsafe {
        let mut idx = ptr::null_mut();
        let kind = CString::new("triplet").unwrap();
        assert_eq!(kgte_index_build(manifest().as_ptr(), kind.as_ptr(), 128, &mut idx), KgteStatus::Ok);
        assert_eq!(kgte_index_len(idx), 8);

        let sentence = CString::new("Alan Bean was born in Wheeler, Texas.").unwrap();
        let mut out = ptr::null_mut();
        assert_eq!(kgte_index_retrieve_json(idx, sentence.as_ptr(), 3, &mut out), KgteStatus::Ok);
        let v: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(v["mode"], "triplets");
        assert_eq!(v["items"][0]["item"], serde_json::json!(["alan bean", "birthplace", "wheeler, texas"]));

        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("idx.json").to_str().unwrap()).unwrap();
        assert_eq!(kgte_index_save(idx, path.as_ptr()), KgteStatus::Ok);
        kgte_index_free(idx);

        let mut loaded = ptr::null_mut();
        assert_eq!(kgte_index_load(path.as_ptr(), 64, &mut loaded), KgteStatus::Mismatch);
        assert!(loaded.is_null());
        assert_eq!(kgte_index_load(path.as_ptr(), 128, &mut loaded), KgteStatus::Ok);
        assert_eq!(kgte_index_len(loaded), 8);
        kgte_index_free(loaded);

        assert_eq!(kgte_index_len(ptr::null()), 0);
        kgte_index_free(ptr::null_mut());
        let missing = CString::new("/no/such/manifest.json").unwrap();
        assert_eq!(kgte_index_build(missing.as_ptr(), kind.as_ptr(), 0, &mut idx), KgteStatus::Io);
        let bad_kind = CString::new("graph").unwrap();
        assert_eq!(kgte_index_build(manifest().as_ptr(), bad_kind.as_ptr(), 0, &mut idx), KgteStatus::InvalidArgument);
    }
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "kgte.h"

int main(int argc, char **argv) {
    KgteIndex *idx = NULL;
    if (kgte_index_build(argv[1], "example", 0, &idx) != KGTE_STATUS_OK) {
        fprintf(stderr, "%s\n", kgte_last_error());
        return 1;
    }
    char *json = NULL;
    if (kgte_index_retrieve_json(idx, "Aarhus Airport serves Aarhus.", 1, &json) != KGTE_STATUS_OK) return 2;
    int found = strstr(json, "aarhus airport") != NULL;
    kgte_string_free(json);
    kgte_index_free(idx);
    double xs[] = {0, 1, 2}, ys[] = {1, 3, 5};
    KgteFit fit;
    if (kgte_linear_fit(xs, ys, 3, false, &fit) != KGTE_STATUS_OK || fit.slope != 2.0) return 3;
    printf("%s %d\n", kgte_version(), found);
    return found ? 0 : 4;
}
"#;

#[test]
fn c_program_links_against_static_library() {
    let Ok(cc) = which_cc() else {
        panic!("no C compiler found (tried cc, gcc, clang)");
    };
    // target/<profile>/deps/<test-binary> -> target/<profile>
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap();
    let lib = profile_dir.join("libkgte_ffi.a");
    assert!(lib.exists(), "{} missing", lib.display());

    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let bin = dir.path().join("main");
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let status = Command::new(&cc)
        .arg("-std=c11")
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&bin).arg(manifest().to_str().unwrap()).output().unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), format!("{} 1", env!("CARGO_PKG_VERSION")));
}

fn which_cc() -> Result<String, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if Command::new(cc).arg("--version").output().is_ok() {
            return Ok(cc.to_string());
        }
    }
    Err(())
}
