use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use haptic_mpc_ffi::*;

const CONFIG: &str = r#"
name = "ffi"
duration = 1.0
delay = { kind = "fixed", delay = 0.013 }

[model]
kind = "planar_arm"
link_lengths = [0.5, 0.5, 0.3]
initial_joints = [0.3, 0.9, 0.6]

[operator]
kind = "idle"
"#;

fn new_sim(variant: HmVariant, remote: bool) -> *mut HmSimulation {
    let text = CString::new(CONFIG).unwrap();
    let mut sim = ptr::null_mut();
    let st = unsafe { hm_simulation_new(text.as_ptr(), variant, remote, &mut sim) };
    assert_eq!(st, HmStatus::Ok);
    assert!(!sim.is_null());
    sim
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(hm_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn config_errors_are_reported() {
    let bad = CString::new("name = \"x\"\nduration = 1.0\n[model]\nkind = \"planar_arm\"\nlink_lengths = [0.5]\ninitial_joints = [0.1]\n[operator]\nkind = \"idle\"\norientation_weight = 1.0\n").unwrap();
    let mut sim = ptr::null_mut();
    let st = unsafe { hm_simulation_new(bad.as_ptr(), HmVariant::Feedback, false, &mut sim) };
    assert_eq!(st, HmStatus::ConfigError);
    assert!(sim.is_null());
    assert!(last_error().contains("orientation_weight"), "{}", last_error());
}

#[test]
fn null_arguments_are_rejected() {
    let mut sim = ptr::null_mut();
    assert_eq!(
        unsafe { hm_simulation_new(ptr::null(), HmVariant::Feedback, false, &mut sim) },
        HmStatus::NullPointer
    );
    assert_eq!(unsafe { hm_simulation_step(ptr::null_mut(), 0.1) }, HmStatus::NullPointer);
    let mut t = 0.0;
    assert_eq!(unsafe { hm_simulation_time(ptr::null_mut(), &mut t) }, HmStatus::NullPointer);
    unsafe { hm_simulation_free(ptr::null_mut()) };
}

#[test]
fn stepping_advances_the_clock_and_tracks() {
    let sim = new_sim(HmVariant::Feedback, false);
    unsafe {
        assert_eq!(hm_simulation_step(sim, 0.25), HmStatus::Ok);
        let mut t = 0.0;
        assert_eq!(hm_simulation_time(sim, &mut t), HmStatus::Ok);
        assert!((t - 0.25).abs() < 1e-9);
        assert_eq!(hm_simulation_step(sim, -1.0), HmStatus::InvalidArgument);
        assert_eq!(hm_simulation_run_to_end(sim), HmStatus::Ok);
        let mut d = 0usize;
        assert_eq!(hm_simulation_ee_dim(sim, &mut d), HmStatus::Ok);
        assert_eq!(d, 2);
        let (mut ee, mut p, mut v) = ([0.0; 2], [0.0; 2], [0.0; 2]);
        assert_eq!(hm_simulation_ee(sim, ee.as_mut_ptr(), 2), HmStatus::Ok);
        assert_eq!(hm_simulation_target(sim, p.as_mut_ptr(), v.as_mut_ptr(), 2), HmStatus::Ok);
        assert!(((ee[0] - p[0]).powi(2) + (ee[1] - p[1]).powi(2)).sqrt() < 1e-3);
        assert_eq!(hm_simulation_ee(sim, ee.as_mut_ptr(), 1), HmStatus::BufferTooSmall);
        let name = CString::new("replans").unwrap();
        let mut m = 0.0;
        assert_eq!(hm_simulation_metric(sim, name.as_ptr(), &mut m), HmStatus::Ok);
        assert_eq!(m, 70.0);
        let unknown = CString::new("happiness").unwrap();
        assert_eq!(hm_simulation_metric(sim, unknown.as_ptr(), &mut m), HmStatus::InvalidArgument);
        hm_simulation_free(sim);
    }
}

#[test]
fn remote_device_drives_the_target() {
    let sim = new_sim(HmVariant::Feedback, true);
    unsafe {
        let (mut p0, mut v0) = ([0.0; 2], [0.0; 2]);
        hm_simulation_target(sim, p0.as_mut_ptr(), v0.as_mut_ptr(), 2);
        let pos = [0.05, -0.02];
        let vel = [0.0, 0.0];
        assert_eq!(hm_simulation_set_device(sim, pos.as_ptr(), vel.as_ptr(), 2), HmStatus::Ok);
        assert_eq!(hm_simulation_set_device(sim, pos.as_ptr(), vel.as_ptr(), 3), HmStatus::InvalidArgument);
        assert_eq!(hm_simulation_step(sim, 0.01), HmStatus::Ok);
        let (mut p, mut v) = ([0.0; 2], [0.0; 2]);
        hm_simulation_target(sim, p.as_mut_ptr(), v.as_mut_ptr(), 2);
        assert!((p[0] - p0[0] - 0.05).abs() < 1e-12);
        assert!((p[1] - p0[1] + 0.02).abs() < 1e-12);
        assert_eq!(hm_simulation_set_clutch(sim, false), HmStatus::Ok);
        assert_eq!(hm_simulation_set_variant(sim, HmVariant::Baseline), HmStatus::Ok);
        hm_simulation_free(sim);
    }
}

#[test]
fn logs_are_written() {
    let sim = new_sim(HmVariant::FeedForward, false);
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().to_str().unwrap()).unwrap();
    unsafe {
        hm_simulation_run_to_end(sim);
        assert_eq!(hm_simulation_write_log(sim, path.as_ptr()), HmStatus::Ok);
        hm_simulation_free(sim);
    }
    for f in ["log.csv", "solves.csv", "meta.json", "metrics.txt"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(hm_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

fn target_dir() -> PathBuf {
    // tests/… → target/<profile>/deps/<test-binary>
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_the_header() {
    let lib = target_dir().join("libhaptic_mpc_ffi.a");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if !lib.exists() || Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler or static library");
        return;
    }
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let out = Command::new(&cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(manifest.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl"])
        .arg("-o")
        .arg(&exe)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "exit {:?}: {}", run.status.code(), String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok "));
}
