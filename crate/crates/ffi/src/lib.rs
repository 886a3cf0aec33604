//! C ABI over the core crate.
//!
//! Every entry point returns an [`SgcStatus`]; results come back through
//! out-pointers. Strings handed to the caller are owned by the caller and
//! must be released with [`sgc_string_free`]. On failure a description is
//! available from [`sgc_last_error`] on the same thread until the next call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use subgoal_critic::annotators::{match_canonical, parse_response, CanonicalLexicon, ParseStatus};
use subgoal_critic::keyroom::{
    generate_layout, step, Action, GridLayout, GridState, LayoutConfig, SubgoalEvent, Transition,
};
use subgoal_critic::metrics::{derive, ConfusionCounts};
use subgoal_critic::promptkit::{compose, find_config};
use subgoal_critic::textview::{render, ViewKind};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SgcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    LayoutFailed = 4,
    EpisodeOver = 5,
    NoTransition = 6,
    Panic = 99,
}

/// Subgoal event codes written by [`sgc_env_step`].
pub const SGC_EVENT_NONE: i32 = 0;
pub const SGC_EVENT_KEY_PICKED_UP: i32 = 1;
pub const SGC_EVENT_DOOR_UNLOCKED: i32 = 2;

/// View codes accepted by [`sgc_env_render`].
pub const SGC_VIEW_CROPPED: u32 = 0;
pub const SGC_VIEW_GAMESCREEN: u32 = 1;

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SgcMetrics {
    pub f1: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SgcStepResult {
    pub event: i32,
    pub task_reward: u8,
    pub done: bool,
}

/// Opaque episode handle.
pub struct SgcEnv {
    layout: Arc<GridLayout>,
    state: GridState,
    last: Option<Transition>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn guard(f: impl FnOnce() -> Result<(), (SgcStatus, String)>) -> SgcStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SgcStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SgcStatus::Panic
        }
    }
}

fn null(what: &str) -> (SgcStatus, String) {
    (SgcStatus::NullPointer, format!("{what} is null"))
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (SgcStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|e| (SgcStatus::InvalidUtf8, format!("{what}: {e}")))
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("nul bytes removed").into_raw()
}

fn event_code(e: SubgoalEvent) -> i32 {
    match e {
        SubgoalEvent::None => SGC_EVENT_NONE,
        SubgoalEvent::KeyPickedUp => SGC_EVENT_KEY_PICKED_UP,
        SubgoalEvent::DoorUnlocked => SGC_EVENT_DOOR_UNLOCKED,
    }
}

/// Message from the last failing call on this thread, or null. The pointer
/// stays valid until the next call on this thread; do not free it.
#[no_mangle]
pub extern "C" fn sgc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn sgc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Creates an episode on the layout generated from `seed`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn sgc_env_new(seed: u64, out: *mut *mut SgcEnv) -> SgcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let layout = Arc::new(
            generate_layout(seed, &LayoutConfig::default()).map_err(|e| (SgcStatus::LayoutFailed, e.to_string()))?,
        );
        let env = SgcEnv { state: GridState::initial(Arc::clone(&layout)), layout, last: None };
        *out = Box::into_raw(Box::new(env));
        Ok(())
    })
}

/// Releases a handle from [`sgc_env_new`]. Null is ignored.
///
/// # Safety
/// `env` must come from [`sgc_env_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sgc_env_free(env: *mut SgcEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Restarts the episode on the same layout.
///
/// # Safety
/// `env` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sgc_env_reset(env: *mut SgcEnv) -> SgcStatus {
    guard(|| {
        let env = env.as_mut().ok_or_else(|| null("env"))?;
        env.state = GridState::initial(Arc::clone(&env.layout));
        env.last = None;
        Ok(())
    })
}

/// Applies action `action` (0 north, 1 east, 2 south, 3 west, 4 pickup,
/// 5 apply).
///
/// # Safety
/// `env` must be a live handle; `out` may be null.
#[no_mangle]
pub unsafe extern "C" fn sgc_env_step(env: *mut SgcEnv, action: u8, out: *mut SgcStepResult) -> SgcStatus {
    guard(|| {
        let env = env.as_mut().ok_or_else(|| null("env"))?;
        let action = Action::from_code(action)
            .ok_or_else(|| (SgcStatus::InvalidArgument, format!("unknown action {action}")))?;
        let outcome = step(&env.state, action).map_err(|e| (SgcStatus::EpisodeOver, e.to_string()))?;
        let result = SgcStepResult {
            event: event_code(outcome.event),
            task_reward: outcome.task_reward,
            done: outcome.state.terminated,
        };
        env.last =
            Some(Transition::new(env.state.clone(), action, outcome.state.clone(), outcome.task_reward, outcome.event));
        env.state = outcome.state;
        if let Some(out) = out.as_mut() {
            *out = result;
        }
        Ok(())
    })
}

/// Renders the current state as text.
///
/// # Safety
/// `env` must be a live handle and `out` writable; free the result with
/// [`sgc_string_free`].
#[no_mangle]
pub unsafe extern "C" fn sgc_env_render(
    env: *const SgcEnv,
    view: u32,
    separator: bool,
    out: *mut *mut c_char,
) -> SgcStatus {
    guard(|| {
        let env = env.as_ref().ok_or_else(|| null("env"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let view = match view {
            SGC_VIEW_CROPPED => ViewKind::Cropped,
            SGC_VIEW_GAMESCREEN => ViewKind::GameScreen,
            v => return Err((SgcStatus::InvalidArgument, format!("unknown view {v}"))),
        };
        *out = into_c_string(render(&env.state, view, separator).text());
        Ok(())
    })
}

/// Composes the prompt for the most recent step under a named
/// configuration such as `gamescreen-provided`.
///
/// # Safety
/// `env` must be a live handle, `config_name` a C string and `out`
/// writable; free the result with [`sgc_string_free`].
#[no_mangle]
pub unsafe extern "C" fn sgc_env_prompt(
    env: *const SgcEnv,
    config_name: *const c_char,
    out: *mut *mut c_char,
) -> SgcStatus {
    guard(|| {
        let env = env.as_ref().ok_or_else(|| null("env"))?;
        let name = read_str(config_name, "config_name")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let t = env.last.as_ref().ok_or_else(|| (SgcStatus::NoTransition, "no step taken yet".to_owned()))?;
        let config = find_config(name).map_err(|e| (SgcStatus::InvalidArgument, e.to_string()))?;
        let prompt = compose(&config.spec, t).map_err(|e| (SgcStatus::InvalidArgument, e.to_string()))?;
        *out = into_c_string(prompt.text);
        Ok(())
    })
}

/// Parses an annotator response into JSON:
/// `{"status": "ok"|"partially_parsed"|"unparseable", "flags": {...}, "matched": {...}}`.
///
/// # Safety
/// `text` must be a C string and `out` writable; free the result with
/// [`sgc_string_free`].
#[no_mangle]
pub unsafe extern "C" fn sgc_parse_response(text: *const c_char, out: *mut *mut c_char) -> SgcStatus {
    guard(|| {
        let text = read_str(text, "text")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let (flags, status) = parse_response(text);
        let matched = match_canonical(&flags, &CanonicalLexicon::default());
        let status = match status {
            ParseStatus::Ok => "ok",
            ParseStatus::PartiallyParsed => "partially_parsed",
            ParseStatus::Unparseable => "unparseable",
        };
        let json = serde_json::json!({ "status": status, "flags": flags, "matched": matched });
        *out = into_c_string(json.to_string());
        Ok(())
    })
}

/// F1, accuracy, precision and recall from confusion counts.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sgc_metrics_derive(tp: u64, tn: u64, fp: u64, fn_: u64, out: *mut SgcMetrics) -> SgcStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let d = derive(ConfusionCounts::new(tp, tn, fp, fn_));
        *out = SgcMetrics { f1: d.f1, accuracy: d.accuracy, precision: d.precision, recall: d.recall };
        Ok(())
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sgc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
