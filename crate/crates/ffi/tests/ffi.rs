use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use mira_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn take_string(p: *mut std::ffi::c_char) -> String {
    assert!(!p.is_null(), "{}", last_error());
    let s = unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string();
    unsafe { mira_string_free(p) };
    s
}

fn last_error() -> String {
    let p = mira_last_error();
    if p.is_null() {
        String::new()
    } else {
        unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
    }
}

fn mock_runtime(max_steps: usize) -> *mut MiraRuntime {
    let mut rt = ptr::null_mut();
    assert_eq!(unsafe { mira_runtime_new_mock(max_steps, -1.0, 0, &mut rt) }, MiraStatus::Ok);
    rt
}

fn run(rt: *const MiraRuntime, grid: &str, instruction: &str, id: &str) -> *mut MiraEpisode {
    let mut ep = ptr::null_mut();
    let (instr, id) = (c(instruction), c(id));
    let status = unsafe { mira_runtime_run(rt, grid.as_ptr(), grid.len(), instr.as_ptr(), id.as_ptr(), &mut ep) };
    assert_eq!(status, MiraStatus::Ok, "{}", last_error());
    ep
}

#[test]
fn mock_episode_round_trip() {
    let rt = mock_runtime(5);
    let ep = run(rt, "WWW/WWW/WWW", "make cell (1,1) red, then make cell (3,3) blue", "ffi-1");
    let mut term = MiraTermination::BackendError;
    assert_eq!(unsafe { mira_episode_termination(ep, &mut term) }, MiraStatus::Ok);
    assert_eq!(term, MiraTermination::Stopped);
    assert_eq!(unsafe { mira_episode_step_count(ep) }, 3);
    assert_eq!(unsafe { mira_episode_edit_count(ep) }, 2);
    assert_eq!(take_string(unsafe { mira_episode_step_instruction(ep, 0) }), "set 1 1 R");
    assert_eq!(take_string(unsafe { mira_episode_step_instruction(ep, 2) }), "<Stop>");
    assert!(unsafe { mira_episode_step_instruction(ep, 3) }.is_null());
    assert!(last_error().contains("no step at index 3"));

    let (mut data, mut len) = (ptr::null(), 0usize);
    assert_eq!(unsafe { mira_episode_final_image(ep, &mut data, &mut len) }, MiraStatus::Ok);
    let bytes = unsafe { std::slice::from_raw_parts(data, len) };
    assert_eq!(bytes, b"RWW/WWW/WWB");

    let mut latency = -1.0;
    assert_eq!(unsafe { mira_episode_total_latency(ep, &mut latency) }, MiraStatus::Ok);
    assert!(latency >= 0.0);

    let json = take_string(unsafe { mira_episode_to_json(ep) });
    let schema = c("mira-trajectory/1");
    let doc = c(&json);
    let mut violations = usize::MAX;
    assert_eq!(
        unsafe { mira_validate_json(schema.as_ptr(), doc.as_ptr(), &mut violations) },
        MiraStatus::Ok
    );
    assert_eq!(violations, 0);

    unsafe {
        mira_episode_free(ep);
        mira_runtime_free(rt);
    }
}

#[test]
fn budget_is_reported() {
    let rt = mock_runtime(1);
    let ep = run(rt, "WW/WW", "make cell (1,1) red, then make cell (2,2) green", "ffi-2");
    let mut term = MiraTermination::Stopped;
    unsafe { mira_episode_termination(ep, &mut term) };
    assert_eq!(term, MiraTermination::BudgetExhausted);
    assert_eq!(unsafe { mira_episode_step_count(ep) }, 1);
    unsafe {
        mira_episode_free(ep);
        mira_runtime_free(rt);
    }
}

#[test]
fn store_write_and_read() {
    let dir = tempfile::tempdir().unwrap();
    let path = c(dir.path().join("log.jsonl").to_str().unwrap());
    let mut store = ptr::null_mut();
    assert_eq!(unsafe { mira_store_open(path.as_ptr(), &mut store) }, MiraStatus::Ok);
    let rt = mock_runtime(5);
    let ep = run(rt, "WW/WW", "make cell (2,2) green", "ffi-store");
    assert_eq!(unsafe { mira_store_write(store, ep) }, MiraStatus::Ok);
    assert_eq!(unsafe { mira_store_len(store) }, 1);
    let id = c("ffi-store");
    let stored = take_string(unsafe { mira_store_read_json(store, id.as_ptr()) });
    assert_eq!(stored, take_string(unsafe { mira_episode_to_json(ep) }));

    let missing = c("nope");
    assert!(unsafe { mira_store_read_json(store, missing.as_ptr()) }.is_null());
    assert_eq!(unsafe { mira_store_write(store, ep) }, MiraStatus::InvalidData);
    unsafe {
        mira_episode_free(ep);
        mira_runtime_free(rt);
        mira_store_free(store);
    }
}

#[test]
fn invalid_arguments_map_to_status_codes() {
    let mut rt = ptr::null_mut();
    assert_eq!(unsafe { mira_runtime_new_mock(0, -1.0, 0, &mut rt) }, MiraStatus::InvalidArgument);
    assert!(last_error().contains("max_steps"));
    assert_eq!(unsafe { mira_runtime_new_mock(5, 1.5, 0, &mut rt) }, MiraStatus::InvalidArgument);
    assert_eq!(unsafe { mira_runtime_new_mock(5, -1.0, 0, ptr::null_mut()) }, MiraStatus::NullPointer);

    let rt = mock_runtime(5);
    let mut ep = ptr::null_mut();
    let id = c("x");
    let instr = c("make cell (1,1) red");
    let grid = b"WQ/WW";
    assert_eq!(
        unsafe { mira_runtime_run(rt, grid.as_ptr(), grid.len(), instr.as_ptr(), id.as_ptr(), &mut ep) },
        MiraStatus::InvalidData
    );
    assert_eq!(
        unsafe { mira_runtime_run(rt, b"WW".as_ptr(), 2, ptr::null(), id.as_ptr(), &mut ep) },
        MiraStatus::NullPointer
    );
    let bad_utf8 = [0xffu8, 0];
    assert_eq!(
        unsafe { mira_runtime_run(rt, b"WW".as_ptr(), 2, bad_utf8.as_ptr().cast(), id.as_ptr(), &mut ep) },
        MiraStatus::InvalidUtf8
    );
    assert!(ep.is_null());
    assert_eq!(unsafe { mira_episode_step_count(ptr::null()) }, 0);
    unsafe {
        mira_runtime_free(rt);
        mira_runtime_free(ptr::null_mut());
        mira_string_free(ptr::null_mut());
    }
}

#[test]
fn unreachable_remote_gives_backend_error_episode() {
    let mut rt = ptr::null_mut();
    let url = c("http://127.0.0.1:9");
    assert_eq!(
        unsafe { mira_runtime_new_remote(url.as_ptr(), url.as_ptr(), ptr::null(), 2.0, 5, &mut rt) },
        MiraStatus::Ok
    );
    let ep = run(rt, "WW/WW", "make cell (1,1) red", "remote");
    let mut term = MiraTermination::Stopped;
    unsafe { mira_episode_termination(ep, &mut term) };
    assert_eq!(term, MiraTermination::BackendError);
    unsafe {
        mira_episode_free(ep);
        mira_runtime_free(rt);
    }
}

#[test]
fn grid_scores() {
    let (src, edited, instr) = (c("WWWW/WWWW"), c("RWWW/WWWK"), c("make cell (1,1) red"));
    let mut s = MiraScores::default();
    assert_eq!(
        unsafe { mira_score_grid(src.as_ptr(), edited.as_ptr(), instr.as_ptr(), &mut s) },
        MiraStatus::Ok
    );
    assert_eq!(s.sc, 10.0);
    assert!((s.pq - 10.0 * (1.0 - 1.0 / 8.0)).abs() < 1e-12);
    assert!((s.overall - (s.sc * s.pq).sqrt()).abs() < 1e-12);
}

#[test]
fn validate_counts_violations() {
    let schema = c("scorer-response");
    let doc = c(r#"{"sc": 11, "pq": 5}"#);
    let mut n = 0;
    assert_eq!(
        unsafe { mira_validate_json(schema.as_ptr(), doc.as_ptr(), &mut n) },
        MiraStatus::InvalidData
    );
    assert_eq!(n, 2);
    let unknown = c("no-such-schema");
    assert_eq!(
        unsafe { mira_validate_json(unknown.as_ptr(), doc.as_ptr(), &mut n) },
        MiraStatus::InvalidArgument
    );
}

#[test]
fn header_declares_api_and_compiles() {
    let header_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/mira.h");
    let header = std::fs::read_to_string(&header_path).unwrap();
    for name in [
        "mira_last_error",
        "mira_string_free",
        "mira_runtime_new_mock",
        "mira_runtime_new_remote",
        "mira_runtime_run",
        "mira_episode_termination",
        "mira_episode_final_image",
        "mira_store_open",
        "mira_store_write",
        "mira_score_grid",
        "mira_validate_json",
        "typedef struct MiraRuntime MiraRuntime",
        "MIRA_STATUS_OK = 0",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
    let Ok(status) = Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(&header_path)
        .status()
    else {
        eprintln!("no C compiler found; skipping syntax check");
        return;
    };
    assert!(status.success());
}
