//! Exercises the C ABI from Rust and, when a C compiler is present, from C.

use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use dirac_lattice_ffi::*;

fn last_error() -> String {
    let p = dl_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn resolvent_round_trip_through_handles() {
    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(dl_model_new(DL_MODEL_FB_MOD, 2, 1.0, 0.25, &mut model), DlStatus::Ok);
        let mut nu = 0;
        assert_eq!(dl_model_nu(model, &mut nu), DlStatus::Ok);
        assert_eq!(nu, 2);

        let mut lattice = ptr::null_mut();
        assert_eq!(dl_lattice_new(2, 8, 0.25, &mut lattice), DlStatus::Ok);
        let mut f = ptr::null_mut();
        assert_eq!(dl_field_random(lattice, 3, &mut f), DlStatus::Ok);

        let z = DlComplex { re: 0.5, im: 1.0 };
        let mut u = ptr::null_mut();
        assert_eq!(dl_free_resolvent(model, z, f, &mut u), DlStatus::Ok);
        let mut hu = ptr::null_mut();
        assert_eq!(dl_apply_free_dirac(model, u, &mut hu), DlStatus::Ok);

        let mut len = 0;
        assert_eq!(dl_field_len(f, &mut len), DlStatus::Ok);
        assert_eq!(len, 64 * 2);
        let mut fv = vec![DlComplex::default(); len];
        let mut uv = vec![DlComplex::default(); len];
        let mut hv = vec![DlComplex::default(); len];
        assert_eq!(dl_field_values(f, fv.as_mut_ptr(), len), DlStatus::Ok);
        assert_eq!(dl_field_values(u, uv.as_mut_ptr(), len), DlStatus::Ok);
        assert_eq!(dl_field_values(hu, hv.as_mut_ptr(), len), DlStatus::Ok);
        // (H − z)u = f, checked entrywise with complex arithmetic written out.
        let mut worst: f64 = 0.0;
        for k in 0..len {
            let re = hv[k].re - (z.re * uv[k].re - z.im * uv[k].im) - fv[k].re;
            let im = hv[k].im - (z.re * uv[k].im + z.im * uv[k].re) - fv[k].im;
            worst = worst.max(re.hypot(im));
        }
        assert!(worst < 1e-12, "{worst}");

        let mut short = vec![DlComplex::default(); 3];
        assert_eq!(dl_field_values(f, short.as_mut_ptr(), 3), DlStatus::BufferTooSmall);

        for p in [f, u, hu] {
            dl_field_free(p);
        }
        dl_lattice_free(lattice);
        dl_model_free(model);
    }
}

#[test]
fn symbols_and_sweeps() {
    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(dl_model_new(DL_MODEL_S, 1, 0.0, 0.5, &mut model), DlStatus::Ok);
        let xi = [std::f64::consts::PI];
        let mut g = [DlComplex::default(); 4];
        assert_eq!(dl_symbol(model, xi.as_ptr(), 1, g.as_mut_ptr(), 4), DlStatus::Ok);
        // At hξ = π/2 the off-diagonal entry has modulus sin(hξ)/h = 2.
        assert!((g[1].re.hypot(g[1].im) - 2.0).abs() < 1e-12);
        dl_model_free(model);

        let mut fb = ptr::null_mut();
        assert_eq!(dl_model_new(DL_MODEL_FB, 1, 0.0, 0.0625, &mut fb), DlStatus::Ok);
        let hs = [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0];
        let mut vals = [0.0; 4];
        let i = DlComplex { re: 0.0, im: 1.0 };
        assert_eq!(dl_symbol_sweep(fb, i, hs.as_ptr(), 4, 129, vals.as_mut_ptr()), DlStatus::Ok);
        let mut slope = 0.0;
        assert_eq!(dl_fit_loglog(hs.as_ptr(), vals.as_ptr(), 4, &mut slope), DlStatus::Ok);
        assert!((0.9..=1.1).contains(&slope), "{slope}");
        dl_model_free(fb);
    }
}

#[test]
fn errors_are_reported_per_thread() {
    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(dl_model_new(99, 1, 0.0, 0.5, &mut model), DlStatus::InvalidArgument);
        assert!(model.is_null());
        assert!(last_error().contains("unknown model kind 99"));
        std::thread::spawn(|| assert!(dl_last_error_message().is_null())).join().unwrap();

        assert_eq!(dl_model_new(DL_MODEL_FB, 4, 0.0, 0.5, &mut model), DlStatus::InvalidArgument);
        assert_eq!(dl_model_nu(ptr::null(), &mut 0), DlStatus::NullPointer);
        assert_eq!(dl_field_load(ptr::null(), &mut ptr::null_mut()), DlStatus::NullPointer);
        let missing = CString::new("/nonexistent/dir/field.dlat1").unwrap();
        assert_eq!(dl_field_load(missing.as_ptr(), &mut ptr::null_mut()), DlStatus::Io);
        let mut passed = -1;
        assert_eq!(dl_run_criterion(0, &mut passed), DlStatus::InvalidArgument);
        assert_eq!(passed, -1);
        dl_field_free(ptr::null_mut());
    }
}

#[test]
fn snapshots_through_the_abi() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("u.dlat1").to_str().unwrap()).unwrap();
    unsafe {
        let mut lattice = ptr::null_mut();
        assert_eq!(dl_lattice_new(1, 16, 0.1, &mut lattice), DlStatus::Ok);
        let mut f = ptr::null_mut();
        assert_eq!(dl_field_random(lattice, 11, &mut f), DlStatus::Ok);
        assert_eq!(dl_field_save(f, path.as_ptr()), DlStatus::Ok);
        let mut g = ptr::null_mut();
        assert_eq!(dl_field_load(path.as_ptr(), &mut g), DlStatus::Ok);
        let (mut a, mut b) = (0.0, 0.0);
        assert_eq!(dl_field_norm(f, &mut a), DlStatus::Ok);
        assert_eq!(dl_field_norm(g, &mut b), DlStatus::Ok);
        assert_eq!(a, b);
        dl_field_free(f);
        dl_field_free(g);
        dl_lattice_free(lattice);
    }
}

#[test]
fn criterion_from_the_abi() {
    let mut passed = -1;
    assert_eq!(unsafe { dl_run_criterion(8, &mut passed) }, DlStatus::Ok);
    assert_eq!(passed, 1);
}

/// Compiles a small C program against the generated header and static library.
#[test]
fn c_program_links_and_runs() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(|p| p.parent()).unwrap().to_path_buf();
    let lib = profile_dir.join("libdirac_lattice_ffi.a");
    if !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: static library or C compiler unavailable");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include "dirac_lattice.h"
int main(void) {
    DlModel *m = NULL;
    if (dl_model_new(DL_MODEL_S_MOD, 1, 1.0, 0.125, &m) != DL_STATUS_OK) return 1;
    if (dl_model_new(42, 1, 1.0, 0.125, &m) != DL_STATUS_INVALID_ARGUMENT) return 2;
    if (dl_last_error_message() == NULL) return 3;
    DlLattice *lat = NULL;
    DlField *f = NULL, *u = NULL;
    if (dl_lattice_new(1, 32, 0.125, &lat) != DL_STATUS_OK) return 4;
    if (dl_field_random(lat, 5, &f) != DL_STATUS_OK) return 5;
    DlComplex z = {0.0, 1.0};
    if (dl_free_resolvent(m, z, f, &u) != DL_STATUS_OK) return 6;
    double nf = 0, nu = 0;
    dl_field_norm(f, &nf);
    dl_field_norm(u, &nu);
    /* |(H - i)^{-1}| <= 1 for self-adjoint H. */
    if (!(nu <= nf)) return 7;
    printf("%s\n", dl_version());
    dl_field_free(u); dl_field_free(f); dl_lattice_free(lat); dl_model_free(m);
    return 0;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(root.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&bin).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), env!("CARGO_PKG_VERSION"));
}
