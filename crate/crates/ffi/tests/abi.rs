use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use varsel_ffi::*;

fn noise(n: usize, seed: u64) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| r.random::<f64>() - 0.5).collect()
}

fn design(n: usize, p: usize) -> *mut VarselDesign {
    let x = noise(n * p, 1);
    let mut d = ptr::null_mut();
    assert_eq!(unsafe { varsel_design_new(n, p, x.as_ptr(), true, &mut d) }, VarselStatus::Ok);
    d
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(varsel_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn select_round_trip() {
    let (n, p) = (50, 6);
    let d = design(n, p);
    assert_eq!(unsafe { (varsel_design_n(d), varsel_design_p(d)) }, (n, p + 1));
    let x = noise(n * p, 1);
    let e = noise(n, 2);
    let y: Vec<f64> = (0..n).map(|i| 20.0 * x[n + i] + 0.1 * e[i]).collect();
    let method = CString::new("fdr").unwrap();
    let mut s = ptr::null_mut();
    let st = unsafe { varsel_select(d, y.as_ptr(), n, method.as_ptr(), ptr::null(), &mut s) };
    assert_eq!(st, VarselStatus::Ok, "{}", last_error());
    let len = unsafe { varsel_selection_len(s) };
    let mut buf = vec![usize::MAX; len];
    assert_eq!(unsafe { varsel_selection_indices(s, buf.as_mut_ptr(), len) }, VarselStatus::Ok);
    assert!(buf.contains(&0) && buf.contains(&2), "{buf:?}");
    if len > 1 {
        assert_eq!(unsafe { varsel_selection_indices(s, buf.as_mut_ptr(), len - 1) }, VarselStatus::BufferTooSmall);
    }
    unsafe {
        varsel_selection_free(s);
        varsel_design_free(d);
    }
}

#[test]
fn errors_are_reported() {
    let mut d = ptr::null_mut();
    assert_eq!(unsafe { varsel_design_new(3, 1, ptr::null(), false, &mut d) }, VarselStatus::NullPointer);
    let zeros = [0.0; 4];
    assert_eq!(unsafe { varsel_design_new(4, 1, zeros.as_ptr(), false, &mut d) }, VarselStatus::Numeric);
    assert!(last_error().contains("zero"), "{}", last_error());

    let d = design(20, 3);
    let y = noise(20, 3);
    let method = CString::new("unknown").unwrap();
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { varsel_select(d, y.as_ptr(), 20, method.as_ptr(), ptr::null(), &mut s) }, VarselStatus::Config);
    let method = CString::new("fdr").unwrap();
    assert_eq!(
        unsafe { varsel_select(d, y.as_ptr(), 19, method.as_ptr(), ptr::null(), &mut s) },
        VarselStatus::InvalidInput
    );
    let mut o = varsel_select_options_default();
    o.alpha = 1.5;
    assert_eq!(unsafe { varsel_select(d, y.as_ptr(), 20, method.as_ptr(), &o, &mut s) }, VarselStatus::InvalidInput);
    unsafe { varsel_design_free(d) };
    unsafe {
        varsel_design_free(ptr::null_mut());
        varsel_selection_free(ptr::null_mut());
        assert_eq!(varsel_design_p(ptr::null()), 0);
    }
}

#[test]
fn kernels() {
    let mut v = 0.0;
    assert_eq!(unsafe { varsel_fisher_sf(2, 2, 3.0, &mut v) }, VarselStatus::Ok);
    assert!((v - 0.25).abs() < 1e-12);
    assert_eq!(unsafe { varsel_fisher_quantile(2, 2, 0.25, &mut v) }, VarselStatus::Ok);
    assert!((v - 3.0).abs() < 1e-9);
    assert_eq!(unsafe { varsel_fisher_sf(0, 2, 3.0, &mut v) }, VarselStatus::InvalidInput);

    let pv = [0.01, 0.04, 0.03, 0.5];
    let mut rej = [9u8; 4];
    assert_eq!(unsafe { varsel_benjamini_hochberg(pv.as_ptr(), 4, 0.2, rej.as_mut_ptr()) }, VarselStatus::Ok);
    assert_eq!(rej, [1, 1, 1, 0]);
    let bad = [1.5];
    assert_eq!(unsafe { varsel_benjamini_hochberg(bad.as_ptr(), 1, 0.05, rej.as_mut_ptr()) }, VarselStatus::InvalidInput);
    assert!(!unsafe { CStr::from_ptr(varsel_version()) }.to_bytes().is_empty());
}

fn find_cc() -> Option<&'static str> {
    ["cc", "gcc", "clang"].into_iter().find(|c| Command::new(c).arg("--version").output().is_ok())
}

#[test]
fn c_program_links_against_header() {
    let Some(cc) = find_cc() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let deps = std::env::current_exe().unwrap().parent().unwrap().to_path_buf();
    let lib = deps.join("libvarsel_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());
    let exe = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("varsel_smoke");
    let status = Command::new(cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(manifest.join("tests/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "smoke exited with {:?}", out.status.code());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}
