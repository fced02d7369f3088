use std::ffi::{CStr, CString};
use std::ptr;

use abc_core::scenario::{run_scenario, RunOptions, Scenario, FIGURES};
use abc_core::{ConfirmationCertificate, Message};
use abc_ffi::*;

fn figure(name: &str) -> &'static str {
    FIGURES.iter().find(|(n, _)| n.starts_with(name)).expect("shipped fixture").1
}

fn messages(name: &str) -> (Vec<Message>, Vec<(String, ConfirmationCertificate)>) {
    let out = run_scenario(&Scenario::parse(figure(name)).unwrap(), &RunOptions::default()).unwrap();
    (out.messages, out.certificates)
}

fn last_error() -> String {
    let p = abc_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

struct Handle(*mut AbcStore);

impl Drop for Handle {
    fn drop(&mut self) {
        unsafe { abc_store_free(self.0) }
    }
}

fn open(msgs: &[Message]) -> Handle {
    let g = msgs[0].encode();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { abc_store_new(g.as_ptr(), g.len(), &mut h) }, AbcStatus::Ok);
    Handle(h)
}

fn ingest(h: &Handle, m: &Message) -> (AbcStatus, i32) {
    let b = m.encode();
    let mut outcome = -1;
    (unsafe { abc_store_ingest(h.0, b.as_ptr(), b.len(), &mut outcome) }, outcome)
}

fn status(h: &Handle, m: &Message) -> i32 {
    let mut out = -1;
    assert_eq!(unsafe { abc_store_is_confirmed(h.0, m.id().0.as_ptr(), &mut out) }, AbcStatus::Ok);
    out
}

#[test]
fn statuses_match_the_native_run() {
    let (msgs, certs) = messages("fig2");
    let h = open(&msgs);
    for m in &msgs[1..] {
        assert_eq!(ingest(&h, m), (AbcStatus::Ok, ABC_INGEST_ADMITTED));
    }
    let mut n = 0;
    assert_eq!(unsafe { abc_store_len(h.0, &mut n) }, AbcStatus::Ok);
    assert_eq!(n, msgs.len());
    let mut confirmed = 0;
    assert_eq!(unsafe { abc_store_confirmed_count(h.0, &mut confirmed) }, AbcStatus::Ok);
    assert_eq!(confirmed, certs.len());
    for (_, c) in &certs {
        let tx = msgs.iter().find(|m| m.id() == c.tx).unwrap();
        assert_eq!(status(&h, tx), ABC_TX_CONFIRMED);
    }
}

#[test]
fn out_of_order_messages_are_buffered() {
    let (msgs, _) = messages("fig2");
    let h = open(&msgs);
    let last = msgs.last().unwrap();
    assert_eq!(ingest(&h, last), (AbcStatus::Ok, ABC_INGEST_BUFFERED));
    for m in &msgs[1..msgs.len() - 1] {
        assert_eq!(ingest(&h, m).0, AbcStatus::Ok);
    }
    let mut n = 0;
    unsafe { abc_store_len(h.0, &mut n) };
    assert_eq!(n, msgs.len());
}

#[test]
fn certificates_round_trip() {
    let (msgs, certs) = messages("fig3");
    let h = open(&msgs);
    for m in &msgs[1..] {
        ingest(&h, m);
    }
    for (label, c) in &certs {
        let mut buf = AbcBuffer { data: ptr::null_mut(), len: 0 };
        assert_eq!(unsafe { abc_certificate_find(h.0, c.tx.0.as_ptr(), &mut buf) }, AbcStatus::Ok, "{label}");
        let bytes = unsafe { std::slice::from_raw_parts(buf.data, buf.len) }.to_vec();
        unsafe { abc_buffer_free(buf) };
        assert_eq!(unsafe { abc_certificate_verify(h.0, bytes.as_ptr(), bytes.len()) }, AbcStatus::Ok);

        let mut bad = ConfirmationCertificate::decode(&bytes).unwrap();
        bad.signed_sum += 1;
        let bad = bad.encode();
        assert_eq!(unsafe { abc_certificate_verify(h.0, bad.as_ptr(), bad.len()) }, AbcStatus::Invalid);
        assert!(!last_error().is_empty());
    }
}

#[test]
fn unconfirmed_tx_has_no_certificate() {
    let (msgs, certs) = messages("fig2");
    let h = open(&msgs);
    for m in &msgs[1..] {
        ingest(&h, m);
    }
    let tx = msgs
        .iter()
        .find(|m| matches!(m, Message::Transaction(_)) && !certs.iter().any(|(_, c)| c.tx == m.id()))
        .unwrap();
    assert_eq!(status(&h, tx), ABC_TX_UNCONFIRMED);
    let mut buf = AbcBuffer { data: ptr::null_mut(), len: 0 };
    assert_eq!(unsafe { abc_certificate_find(h.0, tx.id().0.as_ptr(), &mut buf) }, AbcStatus::NotFound);
    assert!(buf.data.is_null());
}

#[test]
fn bad_inputs_report_errors() {
    let (msgs, _) = messages("fig2");
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { abc_store_new(ptr::null(), 4, &mut h) }, AbcStatus::NullArgument);
    assert_eq!(unsafe { abc_store_new([1u8, 2, 3].as_ptr(), 3, &mut h) }, AbcStatus::DecodeError);
    assert!(h.is_null());
    let tx = msgs[1].encode();
    assert_eq!(unsafe { abc_store_new(tx.as_ptr(), tx.len(), &mut h) }, AbcStatus::Rejected);
    assert!(last_error().contains("genesis"));

    let store = open(&msgs);
    assert_eq!(unsafe { abc_store_len(store.0, ptr::null_mut()) }, AbcStatus::NullArgument);
    let mut out = 0;
    assert_eq!(unsafe { abc_store_is_confirmed(store.0, [7u8; 32].as_ptr(), &mut out) }, AbcStatus::NotFound);
    // a success clears the previous message
    let mut n = 0;
    assert_eq!(unsafe { abc_store_len(store.0, &mut n) }, AbcStatus::Ok);
    assert!(abc_last_error_message().is_null());
}

#[test]
fn scenario_runner_reports_json() {
    let text = CString::new(figure("fig2")).unwrap();
    let mut code = -1;
    let mut json = ptr::null_mut();
    assert_eq!(unsafe { abc_scenario_run(text.as_ptr(), &mut code, &mut json) }, AbcStatus::Ok);
    assert_eq!(code, 0);
    let report: serde_json::Value = serde_json::from_str(&unsafe { CStr::from_ptr(json) }.to_string_lossy()).unwrap();
    unsafe { abc_string_free(json) };
    assert!(report.is_object());

    let bad = CString::new("abc-scenario 1\nmode dag\ntx label=t1\n").unwrap();
    assert_eq!(unsafe { abc_scenario_run(bad.as_ptr(), &mut code, ptr::null_mut()) }, AbcStatus::ParseError);
    assert!(last_error().contains("line 3"));
}

#[test]
fn header_declares_the_api() {
    let h = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/abc_ffi.h")).unwrap();
    for f in [
        "abc_store_new",
        "abc_store_free",
        "abc_store_ingest",
        "abc_store_is_confirmed",
        "abc_certificate_find",
        "abc_certificate_verify",
        "abc_scenario_run",
        "abc_last_error_message",
        "typedef struct AbcStore AbcStore",
    ] {
        assert!(h.contains(f), "{f}");
    }
}
