//! C interface to the ledger: a store handle that ingests encoded
//! messages and answers confirmation queries, certificate search and
//! verification, and a one-shot scenario runner.
//!
//! Every function returns an [`AbcStatus`]; on failure a description is
//! available from [`abc_last_error_message`] until the next call on the
//! same thread. Memory handed out by the library is released with
//! [`abc_string_free`] or [`abc_buffer_free`], never with `free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use abc_core::confirm::CertificateSearch;
use abc_core::scenario::{run_scenario, RunOptions, Scenario};
use abc_core::{Checker, ConfirmationCertificate, DagStore, Ingest, Message, MessageId, TxStatus};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbcStatus {
    Ok = 0,
    NullArgument = 1,
    /// Bytes are not a canonical encoding.
    DecodeError = 2,
    /// The store refused the message.
    Rejected = 3,
    /// Unknown message, or no certificate exists.
    NotFound = 4,
    /// The search budget ran out before an answer.
    Unresolved = 5,
    /// A certificate failed verification.
    Invalid = 6,
    /// Scenario text did not parse or configure.
    ParseError = 7,
    /// Internal failure; the handle should not be used further.
    Panic = 8,
}

/// Outcome of [`abc_store_ingest`].
pub const ABC_INGEST_ADMITTED: i32 = 0;
pub const ABC_INGEST_BUFFERED: i32 = 1;

/// Values of [`abc_store_is_confirmed`].
pub const ABC_TX_UNCONFIRMED: i32 = 0;
pub const ABC_TX_CONFIRMED: i32 = 1;
pub const ABC_TX_UNRESOLVED: i32 = 2;

/// Opaque store handle.
pub struct AbcStore {
    store: DagStore,
    checker: Checker,
}

/// Bytes owned by the library.
#[repr(C)]
pub struct AbcBuffer {
    pub data: *mut u8,
    pub len: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).ok());
}

fn guard(f: impl FnOnce() -> Result<(), (AbcStatus, String)>) -> AbcStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AbcStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            AbcStatus::Panic
        }
    }
}

fn null() -> (AbcStatus, String) {
    (AbcStatus::NullArgument, "null argument".into())
}

unsafe fn bytes<'a>(data: *const u8, len: usize) -> Result<&'a [u8], (AbcStatus, String)> {
    if data.is_null() {
        if len == 0 {
            return Ok(&[]);
        }
        return Err(null());
    }
    Ok(std::slice::from_raw_parts(data, len))
}

unsafe fn store_mut<'a>(h: *mut AbcStore) -> Result<&'a mut AbcStore, (AbcStatus, String)> {
    h.as_mut().ok_or_else(null)
}

unsafe fn id_arg(id: *const u8) -> Result<MessageId, (AbcStatus, String)> {
    if id.is_null() {
        return Err(null());
    }
    let mut out = [0u8; 32];
    out.copy_from_slice(std::slice::from_raw_parts(id, 32));
    Ok(MessageId(out))
}

fn buffer(v: Vec<u8>) -> AbcBuffer {
    let mut b = v.into_boxed_slice();
    let out = AbcBuffer { data: b.as_mut_ptr(), len: b.len() };
    std::mem::forget(b);
    out
}

/// Creates a store from an encoded genesis message.
///
/// # Safety
/// `genesis` must point to `len` readable bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn abc_store_new(genesis: *const u8, len: usize, out: *mut *mut AbcStore) -> AbcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        *out = ptr::null_mut();
        let msg = Message::decode(bytes(genesis, len)?).map_err(|e| (AbcStatus::DecodeError, e.to_string()))?;
        let Message::Genesis(g) = msg else {
            return Err((AbcStatus::Rejected, format!("expected a genesis, got a {}", msg.kind_name())));
        };
        let store = DagStore::new(g).map_err(|e| (AbcStatus::Rejected, e.to_string()))?;
        *out = Box::into_raw(Box::new(AbcStore { store, checker: Checker::default() }));
        Ok(())
    })
}

/// # Safety
/// `store` must come from [`abc_store_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn abc_store_free(store: *mut AbcStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

/// Ingests one encoded message. `outcome` receives `ABC_INGEST_ADMITTED`
/// or `ABC_INGEST_BUFFERED` (waiting for missing references).
///
/// # Safety
/// `store` must be a live handle, `data` point to `len` readable bytes and
/// `outcome` be writable or null.
#[no_mangle]
pub unsafe extern "C" fn abc_store_ingest(
    store: *mut AbcStore,
    data: *const u8,
    len: usize,
    outcome: *mut i32,
) -> AbcStatus {
    guard(|| {
        let h = store_mut(store)?;
        let r = h.store.ingest_bytes(bytes(data, len)?).map_err(|e| (AbcStatus::DecodeError, e.to_string()))?;
        let code = match r {
            Ingest::Admitted { .. } => ABC_INGEST_ADMITTED,
            Ingest::Buffered { .. } => ABC_INGEST_BUFFERED,
            Ingest::Rejected(reason) => return Err((AbcStatus::Rejected, reason.to_string())),
        };
        if !outcome.is_null() {
            *outcome = code;
        }
        Ok(())
    })
}

/// Number of admitted messages, the genesis included.
///
/// # Safety
/// `store` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn abc_store_len(store: *mut AbcStore, out: *mut usize) -> AbcStatus {
    guard(|| {
        let h = store_mut(store)?;
        *out.as_mut().ok_or_else(null)? = h.store.len();
        Ok(())
    })
}

/// Status of the transaction with the 32-byte id `tx`: one of the
/// `ABC_TX_*` values.
///
/// # Safety
/// `store` must be a live handle, `tx` point to 32 bytes, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn abc_store_is_confirmed(store: *mut AbcStore, tx: *const u8, out: *mut i32) -> AbcStatus {
    guard(|| {
        let h = store_mut(store)?;
        let id = id_arg(tx)?;
        let out = out.as_mut().ok_or_else(null)?;
        let st = h.checker.status(&h.store, &id).map_err(|e| (AbcStatus::NotFound, e.to_string()))?;
        *out = match st {
            TxStatus::Confirmed => ABC_TX_CONFIRMED,
            TxStatus::Unconfirmed => ABC_TX_UNCONFIRMED,
            TxStatus::Unresolved => ABC_TX_UNRESOLVED,
        };
        Ok(())
    })
}

/// Number of confirmed transactions (the genesis not counted).
///
/// # Safety
/// `store` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn abc_store_confirmed_count(store: *mut AbcStore, out: *mut usize) -> AbcStatus {
    guard(|| {
        let h = store_mut(store)?;
        let out = out.as_mut().ok_or_else(null)?;
        let cs = h.checker.confirmed_set(&h.store);
        *out = cs.confirmed.len() - 1;
        Ok(())
    })
}

/// Searches a certificate for `tx` and hands back its encoding.
///
/// # Safety
/// `store` must be a live handle, `tx` point to 32 bytes, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn abc_certificate_find(store: *mut AbcStore, tx: *const u8, out: *mut AbcBuffer) -> AbcStatus {
    guard(|| {
        let h = store_mut(store)?;
        let id = id_arg(tx)?;
        let out = out.as_mut().ok_or_else(null)?;
        *out = AbcBuffer { data: ptr::null_mut(), len: 0 };
        match h.checker.find_certificate(&h.store, &id).map_err(|e| (AbcStatus::NotFound, e.to_string()))? {
            CertificateSearch::Found(c) => {
                *out = buffer(c.encode());
                Ok(())
            }
            CertificateSearch::NotFound => Err((AbcStatus::NotFound, "no certificate exists".into())),
            CertificateSearch::Unresolved => Err((AbcStatus::Unresolved, "search budget exhausted".into())),
        }
    })
}

/// Checks an encoded certificate against the store: `Ok` when it holds,
/// `Invalid` when it does not.
///
/// # Safety
/// `store` must be a live handle and `data` point to `len` readable bytes.
#[no_mangle]
pub unsafe extern "C" fn abc_certificate_verify(store: *mut AbcStore, data: *const u8, len: usize) -> AbcStatus {
    guard(|| {
        let h = store_mut(store)?;
        let cert =
            ConfirmationCertificate::decode(bytes(data, len)?).map_err(|e| (AbcStatus::DecodeError, e.to_string()))?;
        h.checker.verify_certificate(&h.store, &cert).map_err(|e| (AbcStatus::Invalid, e.to_string()))
    })
}

/// Runs scenario text. `exit_code` receives 0 (expectations met), 1
/// (missed) or 3 (invariant violated); `report_json`, if not null, a JSON
/// report to release with [`abc_string_free`].
///
/// # Safety
/// `text` must be a NUL-terminated string; the out pointers writable or null.
#[no_mangle]
pub unsafe extern "C" fn abc_scenario_run(text: *const c_char, exit_code: *mut i32, report_json: *mut *mut c_char) -> AbcStatus {
    guard(|| {
        if text.is_null() {
            return Err(null());
        }
        if !report_json.is_null() {
            *report_json = ptr::null_mut();
        }
        let text = CStr::from_ptr(text).to_str().map_err(|e| (AbcStatus::ParseError, e.to_string()))?;
        let sc = Scenario::parse(text).map_err(|e| (AbcStatus::ParseError, e.to_string()))?;
        let out = run_scenario(&sc, &RunOptions::default()).map_err(|e| (AbcStatus::ParseError, e.to_string()))?;
        if !exit_code.is_null() {
            *exit_code = out.report.exit_code();
        }
        if !report_json.is_null() {
            let json = serde_json::to_string(&out.report).map_err(|e| (AbcStatus::Panic, e.to_string()))?;
            *report_json = CString::new(json).map_err(|e| (AbcStatus::Panic, e.to_string()))?.into_raw();
        }
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library, or be null.
#[no_mangle]
pub unsafe extern "C" fn abc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `b` must come from this library (or be empty) and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn abc_buffer_free(b: AbcBuffer) {
    if !b.data.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(b.data, b.len)));
    }
}

/// Description of the last failure on this thread, or null. Valid until the
/// next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn abc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}
