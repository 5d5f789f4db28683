use std::ffi::{c_char, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use crowd_mpc_ffi::*;

fn last_error() -> String {
    let len = unsafe { cm_last_error(ptr::null_mut(), 0) };
    let mut buf = vec![0u8; len + 1];
    unsafe { cm_last_error(buf.as_mut_ptr().cast::<c_char>(), buf.len()) };
    String::from_utf8(buf[..len].to_vec()).unwrap()
}

#[test]
fn qp_box_and_infeasible() {
    // min u0^2 + u1^2 - 2 u0 - 2 u1  s.t.  u0 <= 0.5, u0 + u1 >= 3
    let quad = [1.0, 0.0, 0.0, 1.0];
    let lin = [-1.0, -1.0];
    let g = [-1.0, 0.0, 1.0, 1.0];
    let h = [-0.5, 3.0];
    let mut u = [0.0; 2];
    let mut obj = 0.0;
    let mut iters = 0u32;
    let st = unsafe { cm_qp_solve(2, 2, quad.as_ptr(), lin.as_ptr(), g.as_ptr(), h.as_ptr(), u.as_mut_ptr(), &mut obj, &mut iters) };
    assert_eq!(st, CmStatus::Ok);
    assert!((u[0] - 0.5).abs() < 1e-9 && (u[1] - 2.5).abs() < 1e-9, "{u:?}");
    assert!((obj - (0.25 + 6.25 - 1.0 - 5.0)).abs() < 1e-9);

    // u >= 1 and -u >= 0
    let g = [1.0, -1.0];
    let h = [1.0, 0.0];
    let mut u = [7.0];
    let st = unsafe { cm_qp_solve(1, 2, [1.0].as_ptr(), [0.0].as_ptr(), g.as_ptr(), h.as_ptr(), u.as_mut_ptr(), ptr::null_mut(), ptr::null_mut()) };
    assert_eq!(st, CmStatus::Infeasible);
    assert_eq!(u, [7.0]);
    assert!(last_error().contains("infeasible"));
}

#[test]
fn null_and_bad_arguments_are_reported() {
    let mut u = [0.0];
    let st = unsafe { cm_qp_solve(1, 1, ptr::null(), [0.0].as_ptr(), [1.0].as_ptr(), [0.0].as_ptr(), u.as_mut_ptr(), ptr::null_mut(), ptr::null_mut()) };
    assert_eq!(st, CmStatus::NullPointer);
    // Indefinite Hessian.
    let st = unsafe { cm_qp_solve(1, 0, [-1.0].as_ptr(), [0.0].as_ptr(), ptr::null(), ptr::null(), u.as_mut_ptr(), ptr::null_mut(), ptr::null_mut()) };
    assert_eq!(st, CmStatus::InvalidArgument);
    let st = unsafe { cm_qp_solve(1, 0, [f64::NAN].as_ptr(), [0.0].as_ptr(), ptr::null(), ptr::null(), u.as_mut_ptr(), ptr::null_mut(), ptr::null_mut()) };
    assert_eq!(st, CmStatus::InvalidArgument);

    let mut cfg = ptr::null_mut();
    let text = CString::new("vehicle.colour = 2").unwrap();
    assert_eq!(unsafe { cm_config_parse(text.as_ptr(), &mut cfg) }, CmStatus::Config);
    assert!(cfg.is_null());
    assert!(last_error().contains("colour"));
    let path = CString::new("/nonexistent/crowd.cfg").unwrap();
    assert_ne!(unsafe { cm_config_load(path.as_ptr(), &mut cfg) }, CmStatus::Ok);

    let mut ctrl = ptr::null_mut();
    assert_eq!(unsafe { cm_controller_new(ptr::null(), CmController::Mpc, 4.0, &mut ctrl) }, CmStatus::NullPointer);
    unsafe {
        cm_config_free(ptr::null_mut());
        cm_controller_free(ptr::null_mut());
    }
}

#[test]
fn truncated_error_copy_is_terminated() {
    let text = CString::new("mpc.horizon = 0").unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { cm_config_parse(text.as_ptr(), &mut cfg) }, CmStatus::Config);
    let full = last_error();
    let mut buf = [1 as c_char; 5];
    let n = unsafe { cm_last_error(buf.as_mut_ptr(), buf.len()) };
    assert_eq!(n, full.len());
    assert_eq!(buf[4], 0);
}

#[test]
fn controller_brakes_for_a_wall_and_cruises_otherwise() {
    let cfg = cm_config_default();
    let mut ctrl = ptr::null_mut();
    assert_eq!(unsafe { cm_controller_new(cfg, CmController::Mpc, 4.0, &mut ctrl) }, CmStatus::Ok);
    let mut d = CmDecision::default();
    assert_eq!(unsafe { cm_controller_step(ctrl, 0.0, 4.0, ptr::null(), 0, &mut d) }, CmStatus::Ok);
    assert_eq!(d.from_mpc, 1);
    // Holding 4 m/s against friction on an empty road.
    assert!(d.u > 0.0);

    let wall: Vec<CmPedestrian> = (0..5)
        .map(|i| CmPedestrian {
            x: 10.0,
            y: -1.0 + 0.5 * i as f64,
            vx: 0.0,
            vy: 0.0,
            dest_x: 10.0,
            dest_y: -1.0 + 0.5 * i as f64,
            mass: 70.0,
            radius: 0.3,
            desired_speed: 0.0,
        })
        .collect();
    assert_eq!(unsafe { cm_controller_step(ctrl, 0.0, 4.0, wall.as_ptr(), wall.len(), &mut d) }, CmStatus::Ok);
    assert!(d.u < 0.0, "{d:?}");
    assert!((d.front_gap - 10.0).abs() < 1e-12);

    let mut bad = wall.clone();
    bad[0].mass = -1.0;
    assert_eq!(unsafe { cm_controller_step(ctrl, 0.0, 4.0, bad.as_ptr(), bad.len(), &mut d) }, CmStatus::InvalidArgument);
    assert_eq!(unsafe { cm_controller_step(ctrl, f64::NAN, 4.0, ptr::null(), 0, &mut d) }, CmStatus::InvalidArgument);
    unsafe {
        cm_controller_free(ctrl);
        cm_config_free(cfg);
    }
}

#[test]
fn episode_matches_the_library() {
    let text = CString::new("scenario.time_cap = 40\n").unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { cm_config_parse(text.as_ptr(), &mut cfg) }, CmStatus::Ok);
    let mut out = CmEpisodeSummary::default();
    assert_eq!(unsafe { cm_episode_run(cfg, 10, 5, CmController::Mpc, &mut out) }, CmStatus::Ok);

    let mut rc = crowd_mpc::RunConfig::default();
    rc.scenario.time_cap = 40.0;
    rc.scenario.n_pedestrians = 10;
    let scen = crowd_mpc::harness::generate_scenario(&rc.scenario, 5);
    let rec = crowd_mpc::harness::run_episode(&rc, &scen, crowd_mpc::supervisor::ControllerKind::Mpc, None).unwrap();
    assert_eq!(out.duration, rec.duration);
    assert_eq!(out.steps as usize, rec.rows.len());
    assert_eq!(out.mpc_steps as usize, rec.mpc_steps);
    assert_eq!(out.collided, 0);
    unsafe { cm_config_free(cfg) };
}

// The cdylib next to the test binary is not rebuilt for integration tests, so
// build a fresh one in its own target directory.
fn fresh_library() -> PathBuf {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let target = manifest.join("../../target/c-smoke");
    let status = Command::new(env!("CARGO"))
        .args(["build", "--quiet", "--lib", "-p", "crowd-mpc-ffi", "--target-dir"])
        .arg(&target)
        .status()
        .unwrap();
    assert!(status.success());
    target.join("debug")
}

#[test]
fn header_compiles_and_links_from_c() {
    let lib_dir = fresh_library();
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let src = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/c/smoke.c");
    let tmp = tempfile::tempdir().unwrap();
    let exe = tmp.path().join("smoke");
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&exe)
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg("-L")
        .arg(&lib_dir)
        .arg(format!("-Wl,-rpath,{}", lib_dir.display()))
        .args(["-lcrowd_mpc_ffi", "-lm"])
        .status()
        .expect("a C compiler on PATH");
    assert!(status.success());
    // Cargo's LD_LIBRARY_PATH would win over the rpath and load the stale copy.
    let out = Command::new(&exe).env_remove("LD_LIBRARY_PATH").output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout), "ok\n");
}
