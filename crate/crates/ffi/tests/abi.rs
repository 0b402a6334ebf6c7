use std::ffi::{c_char, CStr, CString};
use std::ptr;

use viscoflow_ffi::*;

const SMALL: &str = r#"{"version": 1, "grid": {"n": 16}, "integration": {"t_final": 0.1}}"#;
const NOISY: &str = r#"{"version": 1, "grid": {"n": 16}, "noise": {"epsilon": 0.5, "seed": 3}, "integration": {"t_final": 0.1}}"#;

fn new_sim(json: &str) -> *mut VfSimulation {
    let c = CString::new(json).unwrap();
    let mut sim = ptr::null_mut();
    let status = unsafe { vf_simulation_new(c.as_ptr(), &mut sim) };
    assert_eq!(status, VfStatus::Ok, "{}", last_error());
    assert!(!sim.is_null());
    sim
}

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 512];
    let n = unsafe { vf_last_error_message(buf.as_mut_ptr(), buf.len()) };
    assert!(n < buf.len());
    unsafe { CStr::from_ptr(buf.as_ptr()) }
        .to_str()
        .unwrap()
        .to_owned()
}

fn get_f64(
    f: unsafe extern "C" fn(*const VfSimulation, *mut f64) -> VfStatus,
    sim: *const VfSimulation,
) -> f64 {
    let mut x = f64::NAN;
    assert_eq!(unsafe { f(sim, &mut x) }, VfStatus::Ok);
    x
}

fn velocity(sim: *const VfSimulation) -> (Vec<f64>, Vec<f64>) {
    let mut n = 0usize;
    assert_eq!(unsafe { vf_simulation_grid_size(sim, &mut n) }, VfStatus::Ok);
    let mut u1 = vec![0.0; n * n];
    let mut u2 = vec![0.0; n * n];
    let status = unsafe { vf_simulation_velocity(sim, u1.as_mut_ptr(), u2.as_mut_ptr(), n * n) };
    assert_eq!(status, VfStatus::Ok);
    (u1, u2)
}

#[test]
fn version_is_package_version() {
    let v = unsafe { CStr::from_ptr(vf_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn null_arguments_are_rejected() {
    let mut sim = ptr::null_mut();
    assert_eq!(
        unsafe { vf_simulation_new(ptr::null(), ptr::null_mut()) },
        VfStatus::NullPointer
    );
    assert_eq!(
        unsafe { vf_simulation_step(ptr::null_mut(), 1) },
        VfStatus::NullPointer
    );
    assert!(last_error().contains("simulation"));
    let mut t = 0.0;
    assert_eq!(
        unsafe { vf_simulation_time(ptr::null(), &mut t) },
        VfStatus::NullPointer
    );
    unsafe { vf_simulation_free(ptr::null_mut()) };
    let c = CString::new(SMALL).unwrap();
    assert_eq!(unsafe { vf_simulation_new(c.as_ptr(), &mut sim) }, VfStatus::Ok);
    assert_eq!(
        unsafe { vf_simulation_time(sim, ptr::null_mut()) },
        VfStatus::NullPointer
    );
    unsafe { vf_simulation_free(sim) };
}

#[test]
fn bad_config_reports_key() {
    let c = CString::new(r#"{"version": 1, "physics": {"viscosity": 1.0}}"#).unwrap();
    let mut sim = ptr::null_mut();
    assert_eq!(
        unsafe { vf_simulation_new(c.as_ptr(), &mut sim) },
        VfStatus::Config
    );
    assert!(sim.is_null());
    assert!(last_error().contains("viscosity"));
}

#[test]
fn invalid_utf8_is_rejected() {
    let bytes = [b'{', 0xff, b'}', 0];
    let mut sim = ptr::null_mut();
    let status = unsafe { vf_simulation_new(bytes.as_ptr().cast(), &mut sim) };
    assert_eq!(status, VfStatus::InvalidUtf8);
}

#[test]
fn error_message_reports_required_size() {
    let c = CString::new("not json").unwrap();
    let mut sim = ptr::null_mut();
    assert_eq!(
        unsafe { vf_simulation_new(c.as_ptr(), &mut sim) },
        VfStatus::Config
    );
    let need = unsafe { vf_last_error_message(ptr::null_mut(), 0) };
    assert!(need > 0);
    let mut tiny = [7 as c_char; 2];
    assert_eq!(unsafe { vf_last_error_message(tiny.as_mut_ptr(), 2) }, need);
    assert_eq!(tiny, [7, 7]);
    assert_eq!(last_error().len(), need);
}

#[test]
fn unforced_steps_advance_time_and_dissipate() {
    let sim = new_sim(SMALL);
    let e0 = get_f64(vf_simulation_energy, sim);
    assert_eq!(unsafe { vf_simulation_step(sim, 50) }, VfStatus::Ok);
    let t = get_f64(vf_simulation_time, sim);
    assert!((t - 0.05).abs() < 1e-12);
    let e1 = get_f64(vf_simulation_energy, sim);
    assert!(e1 > 0.0 && e1.is_finite());
    assert!(e1 < e0 + 1.0);
    assert!(get_f64(vf_simulation_divergence, sim) < 1e-12);
    assert_eq!(get_f64(vf_simulation_ou, sim), 0.0);
    unsafe { vf_simulation_free(sim) };
}

#[test]
fn split_stepping_matches_single_call() {
    let a = new_sim(NOISY);
    let b = new_sim(NOISY);
    assert_eq!(unsafe { vf_simulation_step(a, 40) }, VfStatus::Ok);
    for _ in 0..4 {
        assert_eq!(unsafe { vf_simulation_step(b, 10) }, VfStatus::Ok);
    }
    assert_eq!(get_f64(vf_simulation_ou, a), get_f64(vf_simulation_ou, b));
    assert_ne!(get_f64(vf_simulation_ou, a), 0.0);
    assert_eq!(velocity(a), velocity(b));
    unsafe {
        vf_simulation_free(a);
        vf_simulation_free(b);
    }
}

#[test]
fn stepping_past_noise_path_fails_cleanly() {
    let sim = new_sim(NOISY);
    let status = unsafe { vf_simulation_step(sim, 1000) };
    assert_ne!(status, VfStatus::Ok);
    assert_ne!(status, VfStatus::Panic);
    assert!(!last_error().is_empty());
    assert_eq!(get_f64(vf_simulation_time, sim), 0.0);
    unsafe { vf_simulation_free(sim) };
}

#[test]
fn short_velocity_buffer_is_rejected() {
    let sim = new_sim(SMALL);
    let mut u1 = vec![0.0; 10];
    let mut u2 = vec![0.0; 10];
    let status = unsafe { vf_simulation_velocity(sim, u1.as_mut_ptr(), u2.as_mut_ptr(), 10) };
    assert_eq!(status, VfStatus::BufferTooSmall);
    assert!(last_error().contains("256"));
    unsafe { vf_simulation_free(sim) };
}

#[test]
fn checkpoint_round_trip_resumes_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let file = CString::new(dir.path().join("mid.state").to_str().unwrap()).unwrap();
    let a = new_sim(NOISY);
    assert_eq!(unsafe { vf_simulation_step(a, 20) }, VfStatus::Ok);
    assert_eq!(unsafe { vf_simulation_save(a, file.as_ptr()) }, VfStatus::Ok);
    assert_eq!(unsafe { vf_simulation_step(a, 20) }, VfStatus::Ok);

    let b = new_sim(NOISY);
    assert_eq!(unsafe { vf_simulation_load(b, file.as_ptr()) }, VfStatus::Ok);
    assert!((get_f64(vf_simulation_time, b) - 0.02).abs() < 1e-12);
    assert_eq!(unsafe { vf_simulation_step(b, 20) }, VfStatus::Ok);
    assert_eq!(velocity(a), velocity(b));
    assert_eq!(get_f64(vf_simulation_energy, a), get_f64(vf_simulation_energy, b));

    let missing = CString::new(dir.path().join("none.state").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { vf_simulation_load(b, missing.as_ptr()) }, VfStatus::Io);
    unsafe {
        vf_simulation_free(a);
        vf_simulation_free(b);
    }
}

#[test]
fn header_declares_every_export() {
    let header =
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/viscoflow.h")).unwrap();
    for name in [
        "vf_simulation_new",
        "vf_simulation_free",
        "vf_simulation_step",
        "vf_simulation_time",
        "vf_simulation_energy",
        "vf_simulation_ou",
        "vf_simulation_grid_size",
        "vf_simulation_divergence",
        "vf_simulation_velocity",
        "vf_simulation_save",
        "vf_simulation_load",
        "vf_last_error_message",
        "vf_version",
        "VF_STATUS_BUFFER_TOO_SMALL",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}
