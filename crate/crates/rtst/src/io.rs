//! Line-JSON file formats: flow tables, packet traces, update traces,
//! group plans and tree dumps.
//!
//! Values are JSON numbers when they fit an u64 and `"0x…"` hex strings
//! otherwise; both forms (plus decimal strings) are accepted on input.
//! One JSON object per line throughout.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::engine::{Engine, UpdateOp};
use crate::flow::{Flow, FlowTable, Packet, Prefix, Wide};
use crate::schema::{FieldKind, FieldSchema};
use crate::tree::Rtst;

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("line {line}: {msg}")]
    Line { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Other(String),
}

fn line_err(line: usize, msg: impl Into<String>) -> ParseError {
    ParseError::Line { line, msg: msg.into() }
}

/// Emits a wide value as a JSON number when possible, hex string otherwise.
pub fn wide_to_json(v: &Wide) -> Value {
    match u64::try_from(v) {
        Ok(n) => Value::from(n),
        Err(_) => Value::from(format!("0x{v:x}")),
    }
}

pub fn wide_from_json(v: &Value) -> Result<Wide, String> {
    match v {
        Value::Number(n) => n
            .as_u64()
            .map(Wide::from)
            .ok_or_else(|| format!("value {n} is not an unsigned integer")),
        Value::String(s) => {
            let (digits, radix) = match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
                Some(hex) => (hex, 16),
                None => (s.as_str(), 10),
            };
            BigUint::parse_bytes(digits.as_bytes(), radix)
                .ok_or_else(|| format!("cannot parse `{s}` as an unsigned integer"))
        }
        other => Err(format!("expected number or string, got {other}")),
    }
}

#[derive(Serialize, Deserialize)]
struct FieldVal {
    value: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    length: Option<u32>,
}

#[derive(Serialize, Deserialize)]
struct FlowLine {
    id: u64,
    priority: u32,
    action: String,
    fields: BTreeMap<String, FieldVal>,
}

pub fn flow_to_line(schema: &FieldSchema, f: &Flow) -> String {
    let mut fields = BTreeMap::new();
    let mut exact_slot = 0usize;
    for (i, def) in schema.fields().iter().enumerate() {
        let fv = match def.kind {
            FieldKind::Prefix => {
                let p = if i == schema.sa_index() { &f.sa } else { &f.da };
                FieldVal { value: wide_to_json(p.value()), length: Some(p.length()) }
            }
            FieldKind::Exact => {
                let v = &f.exact[exact_slot];
                exact_slot += 1;
                FieldVal { value: wide_to_json(v), length: None }
            }
        };
        fields.insert(def.name.clone(), fv);
    }
    serde_json::to_string(&FlowLine {
        id: f.id,
        priority: f.priority,
        action: f.action.clone(),
        fields,
    })
    .expect("flow line serializes")
}

pub fn flow_from_line(schema: &FieldSchema, line: &str, lineno: usize) -> Result<Flow, ParseError> {
    let parsed: FlowLine =
        serde_json::from_str(line).map_err(|e| line_err(lineno, e.to_string()))?;
    let mut sa = None;
    let mut da = None;
    let mut exact = Vec::with_capacity(schema.exact_indices().len());
    for (i, def) in schema.fields().iter().enumerate() {
        let fv = parsed
            .fields
            .get(&def.name)
            .ok_or_else(|| line_err(lineno, format!("missing field `{}`", def.name)))?;
        let value = wide_from_json(&fv.value).map_err(|e| line_err(lineno, e))?;
        match def.kind {
            FieldKind::Prefix => {
                // omitted length means a full-length (exact) prefix
                let length = fv.length.unwrap_or(def.width_bits);
                let p = Prefix::new(value, length, def.width_bits)
                    .map_err(|e| line_err(lineno, format!("field `{}`: {e}", def.name)))?;
                if i == schema.sa_index() {
                    sa = Some(p);
                } else {
                    da = Some(p);
                }
            }
            FieldKind::Exact => {
                if fv.length.is_some() {
                    return Err(line_err(
                        lineno,
                        format!("exact field `{}` must not carry a length", def.name),
                    ));
                }
                exact.push(value);
            }
        }
    }
    let flow = Flow {
        id: parsed.id,
        priority: parsed.priority,
        action: parsed.action,
        sa: sa.expect("schema has an SA field"),
        da: da.expect("schema has a DA field"),
        exact,
    };
    flow.validate(schema).map_err(|e| line_err(lineno, e.to_string()))?;
    Ok(flow)
}

pub fn write_table<W: Write>(w: &mut W, table: &FlowTable) -> Result<(), ParseError> {
    for f in &table.flows {
        writeln!(w, "{}", flow_to_line(&table.schema, f))?;
    }
    Ok(())
}

pub fn read_table<R: BufRead>(r: R, schema: &FieldSchema) -> Result<FlowTable, ParseError> {
    let mut flows = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        flows.push(flow_from_line(schema, &line, i + 1)?);
    }
    FlowTable::new(schema.clone(), flows).map_err(|e| ParseError::Other(e.to_string()))
}

pub fn packet_to_line(schema: &FieldSchema, pkt: &Packet) -> String {
    let map: BTreeMap<&str, Value> = schema
        .fields()
        .iter()
        .zip(&pkt.values)
        .map(|(def, v)| (def.name.as_str(), wide_to_json(v)))
        .collect();
    serde_json::to_string(&map).expect("packet line serializes")
}

pub fn packet_from_line(
    schema: &FieldSchema,
    line: &str,
    lineno: usize,
) -> Result<Packet, ParseError> {
    let map: BTreeMap<String, Value> =
        serde_json::from_str(line).map_err(|e| line_err(lineno, e.to_string()))?;
    let mut values = Vec::with_capacity(schema.field_count());
    for def in schema.fields() {
        let v = map
            .get(&def.name)
            .ok_or_else(|| line_err(lineno, format!("missing field `{}`", def.name)))?;
        values.push(wide_from_json(v).map_err(|e| line_err(lineno, e))?);
    }
    let pkt = Packet { values };
    pkt.validate(schema).map_err(|e| line_err(lineno, e.to_string()))?;
    Ok(pkt)
}

pub fn write_packets<W: Write>(
    w: &mut W,
    schema: &FieldSchema,
    pkts: &[Packet],
) -> Result<(), ParseError> {
    for p in pkts {
        writeln!(w, "{}", packet_to_line(schema, p))?;
    }
    Ok(())
}

pub fn read_packets<R: BufRead>(r: R, schema: &FieldSchema) -> Result<Vec<Packet>, ParseError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(packet_from_line(schema, &line, i + 1)?);
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct UpdateLine {
    op: String,
    flow: Value,
}

pub fn update_to_line(schema: &FieldSchema, op: &UpdateOp) -> String {
    let op_name = match op {
        UpdateOp::Modify(_) => "modify",
        UpdateOp::Delete(_) => "delete",
        UpdateOp::Insert(_) => "insert",
    };
    let flow_json: Value =
        serde_json::from_str(&flow_to_line(schema, op.flow())).expect("flow line is valid JSON");
    serde_json::to_string(&UpdateLine { op: op_name.to_string(), flow: flow_json })
        .expect("update line serializes")
}

pub fn update_from_line(
    schema: &FieldSchema,
    line: &str,
    lineno: usize,
) -> Result<UpdateOp, ParseError> {
    let parsed: UpdateLine =
        serde_json::from_str(line).map_err(|e| line_err(lineno, e.to_string()))?;
    let flow = flow_from_line(schema, &parsed.flow.to_string(), lineno)?;
    match parsed.op.as_str() {
        "modify" => Ok(UpdateOp::Modify(flow)),
        "delete" => Ok(UpdateOp::Delete(flow)),
        "insert" => Ok(UpdateOp::Insert(flow)),
        other => Err(line_err(lineno, format!("unknown op `{other}`"))),
    }
}

pub fn write_updates<W: Write>(
    w: &mut W,
    schema: &FieldSchema,
    ops: &[UpdateOp],
) -> Result<(), ParseError> {
    for op in ops {
        writeln!(w, "{}", update_to_line(schema, op))?;
    }
    Ok(())
}

pub fn read_updates<R: BufRead>(r: R, schema: &FieldSchema) -> Result<Vec<UpdateOp>, ParseError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(update_from_line(schema, &line, i + 1)?);
    }
    Ok(out)
}

// --- tree dumps -------------------------------------------------------

#[derive(Serialize)]
pub struct KeyDump {
    pub lo: Value,
    pub hi: Value,
    pub payload: (u64, u64),
    pub valid: bool,
}

#[derive(Serialize)]
pub struct SlotDump {
    pub slot: u64,
    pub left: KeyDump,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub right: Option<KeyDump>,
}

#[derive(Serialize)]
pub struct TreeDump {
    pub key_width: u32,
    pub roots: u64,
    pub valid_keys: u64,
    pub stored_keys: u64,
    pub levels: Vec<Vec<SlotDump>>,
}

#[derive(Serialize)]
pub struct GroupDump {
    pub group: usize,
    pub sst: TreeDump,
    pub dst: TreeDump,
}

#[derive(Serialize)]
pub struct EngineDump {
    pub k: usize,
    pub flows: usize,
    pub groups: Vec<GroupDump>,
}

pub fn dump_tree(tree: &Rtst) -> TreeDump {
    let levels = tree
        .levels()
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .filter_map(|(slot, node)| {
                    let node = node.as_ref()?;
                    let key = |k: &crate::tree::TreeKey| KeyDump {
                        lo: wide_to_json(&k.range.lo),
                        hi: wide_to_json(&k.range.hi),
                        payload: (k.payload.primary, k.payload.aux),
                        valid: k.valid,
                    };
                    Some(SlotDump {
                        slot: slot as u64,
                        left: key(&node.left),
                        right: node.right.as_ref().map(key),
                    })
                })
                .collect()
        })
        .collect();
    TreeDump {
        key_width: tree.key_width(),
        roots: tree.roots(),
        valid_keys: tree.len(),
        stored_keys: tree.stored_keys(),
        levels,
    }
}

pub fn dump_engine(engine: &Engine) -> EngineDump {
    EngineDump {
        k: engine.group_count(),
        flows: engine.flow_count(),
        groups: engine
            .group_trees()
            .enumerate()
            .map(|(i, (sst, dst))| GroupDump { group: i, sst: dump_tree(sst), dst: dump_tree(dst) })
            .collect(),
    }
}
