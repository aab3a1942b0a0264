//! Header field schemas: which fields a flow matches on, their widths,
//! and whether each is a prefix-match or exact-match field.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SchemaError {
    #[error("schema must contain exactly two prefix fields (source and destination), found {0}")]
    PrefixFieldCount(usize),
    #[error("schema has no fields")]
    Empty,
    #[error("duplicate field name `{0}`")]
    DuplicateField(String),
    #[error("field `{0}` has zero width")]
    ZeroWidth(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    /// High-order bits must equal the stored prefix.
    Prefix,
    /// Full-width equality.
    Exact,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldDef {
    pub name: String,
    pub width_bits: u32,
    pub kind: FieldKind,
}

impl FieldDef {
    pub fn prefix(name: &str, width_bits: u32) -> Self {
        FieldDef { name: name.to_string(), width_bits, kind: FieldKind::Prefix }
    }

    pub fn exact(name: &str, width_bits: u32) -> Self {
        FieldDef { name: name.to_string(), width_bits, kind: FieldKind::Exact }
    }
}

/// An ordered list of match fields. Exactly two fields are prefix-match:
/// the first is the source address (SA), the second the destination
/// address (DA). Everything else is exact-match.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SchemaRepr", into = "SchemaRepr")]
pub struct FieldSchema {
    fields: Vec<FieldDef>,
    sa_index: usize,
    da_index: usize,
    exact_indices: Vec<usize>,
    header_bits: u32,
}

#[derive(Serialize, Deserialize)]
struct SchemaRepr {
    fields: Vec<FieldDef>,
}

impl TryFrom<SchemaRepr> for FieldSchema {
    type Error = SchemaError;
    fn try_from(repr: SchemaRepr) -> Result<Self, SchemaError> {
        FieldSchema::new(repr.fields)
    }
}

impl From<FieldSchema> for SchemaRepr {
    fn from(s: FieldSchema) -> SchemaRepr {
        SchemaRepr { fields: s.fields }
    }
}

impl FieldSchema {
    pub fn new(fields: Vec<FieldDef>) -> Result<Self, SchemaError> {
        if fields.is_empty() {
            return Err(SchemaError::Empty);
        }
        for (i, f) in fields.iter().enumerate() {
            if f.width_bits == 0 {
                return Err(SchemaError::ZeroWidth(f.name.clone()));
            }
            if fields[..i].iter().any(|g| g.name == f.name) {
                return Err(SchemaError::DuplicateField(f.name.clone()));
            }
        }
        let prefix_indices: Vec<usize> = fields
            .iter()
            .enumerate()
            .filter(|(_, f)| f.kind == FieldKind::Prefix)
            .map(|(i, _)| i)
            .collect();
        if prefix_indices.len() != 2 {
            return Err(SchemaError::PrefixFieldCount(prefix_indices.len()));
        }
        let exact_indices = fields
            .iter()
            .enumerate()
            .filter(|(_, f)| f.kind == FieldKind::Exact)
            .map(|(i, _)| i)
            .collect();
        let header_bits = fields.iter().map(|f| f.width_bits).sum();
        Ok(FieldSchema {
            sa_index: prefix_indices[0],
            da_index: prefix_indices[1],
            exact_indices,
            header_bits,
            fields,
        })
    }

    /// 15-field, 356-bit OpenFlow-style header. ip_src/ip_dst are the two
    /// prefix fields; everything else matches exactly.
    pub fn openflow_356() -> Self {
        FieldSchema::new(vec![
            FieldDef::exact("ingress_port", 32),
            FieldDef::exact("metadata", 64),
            FieldDef::exact("eth_src", 48),
            FieldDef::exact("eth_dst", 48),
            FieldDef::exact("eth_type", 16),
            FieldDef::exact("vlan_id", 12),
            FieldDef::exact("vlan_pcp", 3),
            FieldDef::exact("mpls_label", 20),
            FieldDef::exact("mpls_tc", 3),
            FieldDef::prefix("ip_src", 32),
            FieldDef::prefix("ip_dst", 32),
            FieldDef::exact("ip_proto", 8),
            FieldDef::exact("ip_tos", 6),
            FieldDef::exact("l4_src", 16),
            FieldDef::exact("l4_dst", 16),
        ])
        .expect("builtin schema is valid")
    }

    /// Classic 5-tuple, 104 bits.
    pub fn five_tuple_104() -> Self {
        FieldSchema::new(vec![
            FieldDef::prefix("ip_src", 32),
            FieldDef::prefix("ip_dst", 32),
            FieldDef::exact("l4_src", 16),
            FieldDef::exact("l4_dst", 16),
            FieldDef::exact("ip_proto", 8),
        ])
        .expect("builtin schema is valid")
    }

    /// Two prefix fields and nothing else; useful for small tables where
    /// a zero-length prefix acts as a catch-all.
    pub fn two_field(sa_bits: u32, da_bits: u32) -> Self {
        FieldSchema::new(vec![
            FieldDef::prefix("sa", sa_bits),
            FieldDef::prefix("da", da_bits),
        ])
        .expect("builtin schema is valid")
    }

    pub fn fields(&self) -> &[FieldDef] {
        &self.fields
    }

    pub fn field_count(&self) -> usize {
        self.fields.len()
    }

    /// Total header width in bits.
    pub fn header_bits(&self) -> u32 {
        self.header_bits
    }

    pub fn sa_index(&self) -> usize {
        self.sa_index
    }

    pub fn da_index(&self) -> usize {
        self.da_index
    }

    pub fn sa_bits(&self) -> u32 {
        self.fields[self.sa_index].width_bits
    }

    pub fn da_bits(&self) -> u32 {
        self.fields[self.da_index].width_bits
    }

    /// Indices of the exact-match fields, in schema order.
    pub fn exact_indices(&self) -> &[usize] {
        &self.exact_indices
    }

    /// Width of the key that covers everything except the source field:
    /// all exact fields plus the destination prefix.
    pub fn remainder_bits(&self) -> u32 {
        self.header_bits - self.sa_bits()
    }

    pub fn field_index(&self, name: &str) -> Option<usize> {
        self.fields.iter().position(|f| f.name == name)
    }
}
