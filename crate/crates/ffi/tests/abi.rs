use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use brown_mde_ffi::*;

const CIRCULAR: &str = "breakpoints = [0.0, 1.0]\nvariance = [[1.0]]\ndeformation_re = [0.0]\ndeformation_im = [0.0]\n";

fn last_error() -> String {
    unsafe { CStr::from_ptr(bm_last_error()) }.to_string_lossy().into_owned()
}

fn spec_from(text: &str) -> (BmStatus, *mut BmSpec) {
    let c = CString::new(text).unwrap();
    let mut spec = ptr::null_mut();
    let st = unsafe { bm_spec_from_toml(c.as_ptr(), &mut spec) };
    (st, spec)
}

fn circular_model(n: usize) -> *mut BmModel {
    let (st, spec) = spec_from(CIRCULAR);
    assert_eq!(st, BmStatus::BmOk);
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { bm_model_discretize(spec, n, &mut model) }, BmStatus::BmOk);
    unsafe { bm_spec_free(spec) };
    model
}

#[test]
fn vde_at_the_origin_is_the_golden_ratio() {
    let model = circular_model(8);
    assert_eq!(unsafe { bm_model_n(model) }, 8);
    let (mut v1, mut v2, mut res) = (vec![0.0; 8], vec![0.0; 8], 1.0);
    let st = unsafe { bm_solve_vde(model, 0.0, 0.0, 1.0, v1.as_mut_ptr(), v2.as_mut_ptr(), 8, &mut res) };
    assert_eq!(st, BmStatus::BmOk);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    assert!(v1.iter().chain(&v2).all(|v| (v - g).abs() < 1e-10));
    assert!(res < 1e-10);

    let st = unsafe { bm_solve_vde(model, 0.0, 0.0, 1.0, v1.as_mut_ptr(), v2.as_mut_ptr(), 7, ptr::null_mut()) };
    assert_eq!(st, BmStatus::BmErrDomain);
    assert!(last_error().contains("dyson::solve_vde"));
    unsafe { bm_model_free(model) };
}

#[test]
fn potential_density_and_support_distance() {
    let model = circular_model(4);
    let (mut l, mut err) = (0.0, 0.0);
    assert_eq!(unsafe { bm_log_potential(model, 2.0, 0.0, &mut l, &mut err) }, BmStatus::BmOk);
    assert!((l + 2f64.ln()).abs() < 2e-3, "{l}");

    // quarter-circle law of the singular values at zeta = 0
    let mut rho = 0.0;
    assert_eq!(unsafe { bm_rho_density(model, 0.0, 0.0, 1.0, &mut rho) }, BmStatus::BmOk);
    assert!((rho - 3f64.sqrt() / (2.0 * std::f64::consts::PI)).abs() < 1e-3, "{rho}");

    let mut d = 1.0;
    assert_eq!(unsafe { bm_dist_zero_support(model, 0.3, 0.0, &mut d) }, BmStatus::BmOk);
    assert_eq!(d, 0.0);
    assert_eq!(unsafe { bm_dist_zero_support(model, 2.0, 0.0, &mut d) }, BmStatus::BmOk);
    // lower edge from the double root of u = (u - tau)(|zeta|^2 - u^2)
    let p = ((1.0 + 8.0 * 4.0f64).sqrt() - 1.0) / 2.0;
    let edge = (4.0 - p).sqrt() * (1.0 - 1.0 / p);
    assert!((d - edge).abs() < 5e-3, "{d} vs {edge}");
    unsafe { bm_model_free(model) };
}

#[test]
fn validation_mask_flags_reducible_profiles() {
    let b = [0.0, 0.5, 1.0];
    let s = [1.0, 0.0, 0.0, 1.0];
    let zero = [0.0, 0.0];
    let mut spec = ptr::null_mut();
    let st = unsafe { bm_spec_new(2, b.as_ptr(), s.as_ptr(), zero.as_ptr(), zero.as_ptr(), 0.5, 1.0, &mut spec) };
    assert_eq!(st, BmStatus::BmOk);
    let (mut count, mut mask) = (0usize, 0u32);
    assert_eq!(unsafe { bm_spec_validate(spec, &mut count, &mut mask) }, BmStatus::BmOk);
    assert_eq!(count, 1);
    assert_eq!(mask, BM_VIOLATION_NOT_PRIMITIVE);
    unsafe { bm_spec_free(spec) };

    let (st, spec) = spec_from(CIRCULAR);
    assert_eq!(st, BmStatus::BmOk);
    assert_eq!(unsafe { bm_spec_validate(spec, &mut count, ptr::null_mut()) }, BmStatus::BmOk);
    assert_eq!(count, 0);
    unsafe { bm_spec_free(spec) };
}

#[test]
fn errors_map_to_status_codes() {
    let (st, _) = spec_from("variance = 3");
    assert_eq!(st, BmStatus::BmErrConfig);
    assert!(last_error().contains("profiles::parse"));

    let (st, _) = spec_from("breakpoints = [0.0, 1.0]\nvariance = [[-1.0]]\ndeformation_re = [0.0]\ndeformation_im = [0.0]\n");
    assert_eq!(st, BmStatus::BmErrInvalidSpec);

    let b = [0.0, 0.1, 1.0];
    let s = [1.0; 4];
    let zero = [0.0, 0.0];
    let mut spec = ptr::null_mut();
    assert_eq!(
        unsafe { bm_spec_new(2, b.as_ptr(), s.as_ptr(), zero.as_ptr(), zero.as_ptr(), 0.5, 1.0, &mut spec) },
        BmStatus::BmOk
    );
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { bm_model_discretize(spec, 3, &mut model) }, BmStatus::BmErrBlockUnresolved);
    assert!(model.is_null());
    unsafe { bm_spec_free(spec) };

    assert_eq!(unsafe { bm_spec_validate(ptr::null(), ptr::null_mut(), ptr::null_mut()) }, BmStatus::BmErrNullPointer);
    assert_eq!(unsafe { bm_spec_from_toml(ptr::null(), ptr::null_mut()) }, BmStatus::BmErrNullPointer);
    let mut x = 0.0;
    assert_eq!(unsafe { bm_log_potential(ptr::null(), 0.0, 0.0, &mut x, ptr::null_mut()) }, BmStatus::BmErrNullPointer);
    unsafe {
        bm_spec_free(ptr::null_mut());
        bm_model_free(ptr::null_mut());
    }
}

#[test]
fn full_run_configs_are_accepted() {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../core/configs/twopoint.cfg")).unwrap();
    let (st, spec) = spec_from(&text);
    assert_eq!(st, BmStatus::BmOk, "{}", last_error());
    unsafe { bm_spec_free(spec) };
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/brown_mde.h");
    let Ok(out) = Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c", header])
        .output()
    else {
        eprintln!("no C compiler; skipped");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
