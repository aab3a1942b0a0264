//! C ABI for the flow-table lookup engine.
//!
//! The engine is an opaque handle created from a line-JSON flow table
//! (the same format the CLI reads). Lookups and updates exchange JSON
//! strings; every call returns an [`RtstStatus`] code, and string
//! outputs are returned through out-parameters that the caller frees
//! with [`rtst_string_free`]. Handles are not thread-safe for writes:
//! concurrent readers or one writer, as with the Rust API.

// pointer validity is the caller's side of the C contract; every entry
// point null-checks before dereferencing
#![allow(clippy::not_unsafe_ptr_arg_deref)]

use std::ffi::{c_char, CStr, CString};
use std::io::BufReader;
use std::ptr;

use rtst::engine::{Engine, UpdateError};
use rtst::io as rio;
use rtst::report::Report;
use rtst::FieldSchema;

/// Opaque engine handle.
pub struct RtstEngine {
    engine: Engine,
}

/// Result codes for every FFI entry point.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum RtstStatus {
    Ok = 0,
    /// a required pointer argument was null
    NullArgument = 1,
    /// an argument was not valid UTF-8
    InvalidUtf8 = 2,
    /// malformed JSON or a value that does not fit the schema
    ParseError = 3,
    /// the table or plan violates a structural invariant
    BuildError = 4,
    /// insertion refused: a same-priority overlapping flow exists
    Refused = 5,
    /// no installed flow matches the update request
    NotFound = 6,
    /// the flow (or its id) is already installed
    AlreadyPresent = 7,
    /// packet does not fit the schema
    PacketError = 8,
}

fn set_out(out: *mut *mut c_char, s: String) {
    if out.is_null() {
        return;
    }
    let c = CString::new(s).unwrap_or_default();
    unsafe { *out = c.into_raw() };
}

unsafe fn arg_str<'a>(p: *const c_char) -> Result<&'a str, RtstStatus> {
    if p.is_null() {
        return Err(RtstStatus::NullArgument);
    }
    unsafe { CStr::from_ptr(p) }.to_str().map_err(|_| RtstStatus::InvalidUtf8)
}

fn load_schema(schema_json: *const c_char) -> Result<FieldSchema, RtstStatus> {
    if schema_json.is_null() {
        return Ok(FieldSchema::openflow_356());
    }
    let text = unsafe { arg_str(schema_json) }?;
    match text {
        "openflow356" => Ok(FieldSchema::openflow_356()),
        "fivetuple104" => Ok(FieldSchema::five_tuple_104()),
        other => serde_json::from_str(other).map_err(|_| RtstStatus::ParseError),
    }
}

/// Builds an engine from a flow table (one JSON flow per line).
///
/// `schema_json` may be null (the 15-field 356-bit default), one of the
/// builtin names `"openflow356"` / `"fivetuple104"`, or a schema JSON
/// object. `target_k` of 0 lets the partitioner choose the group count.
/// On success `*out` owns the engine; free it with [`rtst_engine_free`].
#[no_mangle]
pub extern "C" fn rtst_engine_build(
    table_jsonl: *const c_char,
    schema_json: *const c_char,
    target_k: u32,
    out: *mut *mut RtstEngine,
) -> RtstStatus {
    if out.is_null() {
        return RtstStatus::NullArgument;
    }
    unsafe { *out = ptr::null_mut() };
    let table_text = match unsafe { arg_str(table_jsonl) } {
        Ok(t) => t,
        Err(s) => return s,
    };
    let schema = match load_schema(schema_json) {
        Ok(s) => s,
        Err(s) => return s,
    };
    let table = match rio::read_table(BufReader::new(table_text.as_bytes()), &schema) {
        Ok(t) => t,
        Err(_) => return RtstStatus::ParseError,
    };
    let k = if target_k == 0 { None } else { Some(target_k as usize) };
    match Engine::build_auto(&table, k) {
        Ok(engine) => {
            unsafe { *out = Box::into_raw(Box::new(RtstEngine { engine })) };
            RtstStatus::Ok
        }
        Err(_) => RtstStatus::BuildError,
    }
}

/// Frees an engine handle. Null is a no-op.
#[no_mangle]
pub extern "C" fn rtst_engine_free(engine: *mut RtstEngine) {
    if !engine.is_null() {
        drop(unsafe { Box::from_raw(engine) });
    }
}

/// Classifies one packet (a JSON object with one value per field).
///
/// On success writes a JSON result to `*out_json`:
/// `{"matched": {"flow_id": …, "priority": …, "action": …}}` or
/// `{"matched": null}`.
#[no_mangle]
pub extern "C" fn rtst_engine_classify(
    engine: *const RtstEngine,
    packet_json: *const c_char,
    out_json: *mut *mut c_char,
) -> RtstStatus {
    if engine.is_null() {
        return RtstStatus::NullArgument;
    }
    let engine = unsafe { &(*engine).engine };
    let text = match unsafe { arg_str(packet_json) } {
        Ok(t) => t,
        Err(s) => return s,
    };
    let pkt = match rio::packet_from_line(engine.schema(), text, 1) {
        Ok(p) => p,
        Err(_) => return RtstStatus::ParseError,
    };
    let result = match engine.classify(&pkt) {
        Ok(r) => r,
        Err(_) => return RtstStatus::PacketError,
    };
    let matched = result.best.map(|m| {
        serde_json::json!({
            "flow_id": m.flow_id,
            "priority": m.priority,
            "action": engine.action_name(m.action_token),
        })
    });
    set_out(out_json, serde_json::json!({ "matched": matched }).to_string());
    RtstStatus::Ok
}

/// Applies one update (`{"op": "modify"|"delete"|"insert", "flow": …}`).
///
/// Refused insertions return [`RtstStatus::Refused`] and, when
/// `out_json` is given, `{"conflicting": <flow id>}`.
#[no_mangle]
pub extern "C" fn rtst_engine_update(
    engine: *mut RtstEngine,
    update_json: *const c_char,
    out_json: *mut *mut c_char,
) -> RtstStatus {
    if engine.is_null() {
        return RtstStatus::NullArgument;
    }
    let engine = unsafe { &mut (*engine).engine };
    let text = match unsafe { arg_str(update_json) } {
        Ok(t) => t,
        Err(s) => return s,
    };
    let op = match rio::update_from_line(engine.schema(), text, 1) {
        Ok(op) => op,
        Err(_) => return RtstStatus::ParseError,
    };
    match engine.apply(&op) {
        Ok(applied) => {
            set_out(out_json, serde_json::json!({ "nodes_written": applied.writes.len() }).to_string());
            RtstStatus::Ok
        }
        Err(UpdateError::Refused { conflicting }) => {
            set_out(out_json, serde_json::json!({ "conflicting": conflicting }).to_string());
            RtstStatus::Refused
        }
        Err(UpdateError::NoMatch) => RtstStatus::NotFound,
        Err(UpdateError::AlreadyPresent(_)) | Err(UpdateError::DuplicateId(_)) => {
            RtstStatus::AlreadyPresent
        }
        Err(_) => RtstStatus::ParseError,
    }
}

/// Writes a JSON summary report (flow count, groups, heights, memory)
/// to `*out_json`.
#[no_mangle]
pub extern "C" fn rtst_engine_report(
    engine: *const RtstEngine,
    out_json: *mut *mut c_char,
) -> RtstStatus {
    if engine.is_null() {
        return RtstStatus::NullArgument;
    }
    let engine = unsafe { &(*engine).engine };
    let report = Report::from_engine(engine, None, 337.0);
    match serde_json::to_string(&report) {
        Ok(s) => {
            set_out(out_json, s);
            RtstStatus::Ok
        }
        Err(_) => RtstStatus::ParseError,
    }
}

/// Number of installed (live) flows.
#[no_mangle]
pub extern "C" fn rtst_engine_flow_count(engine: *const RtstEngine) -> u64 {
    if engine.is_null() {
        return 0;
    }
    unsafe { &(*engine).engine }.flow_count() as u64
}

/// Frees a string returned through an out-parameter. Null is a no-op.
#[no_mangle]
pub extern "C" fn rtst_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}
