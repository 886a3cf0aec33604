use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use subgoal_critic::keyroom::{generate_layout, solve, LayoutConfig};
use subgoal_critic_ffi::*;

unsafe fn take(s: *mut c_char) -> String {
    let out = CStr::from_ptr(s).to_str().unwrap().to_owned();
    sgc_string_free(s);
    out
}

fn last_error() -> String {
    let p = sgc_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_owned()
}

#[test]
fn solved_episode_through_the_c_api() {
    let seed = 4;
    let plan = solve(&std::sync::Arc::new(generate_layout(seed, &LayoutConfig::default()).unwrap())).unwrap();
    unsafe {
        let mut env = ptr::null_mut();
        assert_eq!(sgc_env_new(seed, &mut env), SgcStatus::Ok);
        let mut events = Vec::new();
        let mut last = SgcStepResult::default();
        for a in &plan {
            assert_eq!(sgc_env_step(env, a.code(), &mut last), SgcStatus::Ok);
            events.push(last.event);
        }
        assert!(last.done);
        assert_eq!(last.task_reward, 1);
        assert_eq!(events.iter().filter(|&&e| e == SGC_EVENT_KEY_PICKED_UP).count(), 1);
        assert_eq!(events.iter().filter(|&&e| e == SGC_EVENT_DOOR_UNLOCKED).count(), 1);

        assert_eq!(sgc_env_step(env, 0, ptr::null_mut()), SgcStatus::EpisodeOver);
        assert!(!last_error().is_empty());

        let name = CString::new("cropped-provided").unwrap();
        let mut text = ptr::null_mut();
        assert_eq!(sgc_env_prompt(env, name.as_ptr(), &mut text), SgcStatus::Ok);
        assert!(take(text).contains("Consider the following subgoals:"));

        assert_eq!(sgc_env_reset(env), SgcStatus::Ok);
        assert_eq!(sgc_env_prompt(env, name.as_ptr(), &mut text), SgcStatus::NoTransition);
        sgc_env_free(env);
    }
}

#[test]
fn render_views() {
    unsafe {
        let mut env = ptr::null_mut();
        assert_eq!(sgc_env_new(0, &mut env), SgcStatus::Ok);
        let mut s = ptr::null_mut();
        assert_eq!(sgc_env_render(env, SGC_VIEW_CROPPED, true, &mut s), SgcStatus::Ok);
        let crop = take(s);
        assert_eq!(crop.lines().count(), 9);
        assert!(crop.contains('@'));
        assert_eq!(sgc_env_render(env, SGC_VIEW_GAMESCREEN, false, &mut s), SgcStatus::Ok);
        assert!(take(s).contains("Dlvl:1"));
        assert_eq!(sgc_env_render(env, 7, true, &mut s), SgcStatus::InvalidArgument);
        assert_eq!(last_error(), "unknown view 7");
        assert_eq!(sgc_env_step(env, 42, ptr::null_mut()), SgcStatus::InvalidArgument);
        sgc_env_free(env);
        sgc_env_free(ptr::null_mut());
        sgc_string_free(ptr::null_mut());
    }
}

#[test]
fn parse_response_as_json() {
    let text = CString::new("Sure.\n{\"pick up the key\": True, \"open the door\": False}").unwrap();
    let mut out = ptr::null_mut();
    let json = unsafe {
        assert_eq!(sgc_parse_response(text.as_ptr(), &mut out), SgcStatus::Ok);
        take(out)
    };
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["status"], "ok");
    assert_eq!(v["flags"]["pick up the key"], true);
    assert_eq!(v["matched"]["open the door"], false);

    let bad = [0xffu8, 0];
    let status = unsafe { sgc_parse_response(bad.as_ptr() as *const c_char, &mut out) };
    assert_eq!(status, SgcStatus::InvalidUtf8);
    let status = unsafe { sgc_parse_response(ptr::null(), &mut out) };
    assert_eq!(status, SgcStatus::NullPointer);
}

#[test]
fn metrics_derive() {
    let mut m = SgcMetrics::default();
    assert_eq!(unsafe { sgc_metrics_derive(3, 5, 1, 1, &mut m) }, SgcStatus::Ok);
    assert!((m.precision - 0.75).abs() < 1e-12);
    assert!((m.recall - 0.75).abs() < 1e-12);
    assert!((m.accuracy - 0.8).abs() < 1e-12);
    assert_eq!(unsafe { sgc_metrics_derive(0, 0, 0, 0, &mut m) }, SgcStatus::Ok);
    assert_eq!(m, SgcMetrics::default());
    assert_eq!(unsafe { sgc_metrics_derive(0, 0, 0, 0, ptr::null_mut()) }, SgcStatus::NullPointer);
}

#[test]
fn version_matches_package() {
    let v = unsafe { CStr::from_ptr(sgc_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_entry_point() {
    let header_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/subgoal_critic.h");
    let header = std::fs::read_to_string(&header_path).unwrap();
    for sym in [
        "sgc_env_new",
        "sgc_env_free",
        "sgc_env_reset",
        "sgc_env_step",
        "sgc_env_render",
        "sgc_env_prompt",
        "sgc_parse_response",
        "sgc_metrics_derive",
        "sgc_string_free",
        "sgc_last_error",
        "sgc_version",
        "typedef struct SgcEnv SgcEnv;",
        "SGC_STATUS_OK = 0",
    ] {
        assert!(header.contains(sym), "missing {sym}");
    }
    // Syntax-check with a C compiler when one is installed.
    let dir = tempfile_dir();
    let src = dir.join("check.c");
    std::fs::write(
        &src,
        format!("#include \"{}\"\nint main(void) {{ return SGC_STATUS_OK; }}\n", header_path.display()),
    )
    .unwrap();
    if let Ok(out) = Command::new("cc").arg("-fsyntax-only").arg("-Wall").arg("-Werror").arg(&src).output() {
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
}

fn tempfile_dir() -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("sgc-ffi-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}
