//! Flows, packets, prefixes and ranges.
//!
//! Field values are arbitrary-width unsigned integers so that schemas may
//! declare fields wider than a machine word, and so that concatenated
//! remainder keys (several hundred bits) use the same arithmetic.

use num_bigint::BigUint;
use thiserror::Error;

use crate::schema::FieldSchema;

/// Arbitrary-width unsigned field value.
pub type Wide = BigUint;

/// `2^bits - 1`.
pub fn all_ones(bits: u32) -> Wide {
    (Wide::from(1u8) << bits) - 1u8
}

/// True iff `v < 2^bits`.
pub fn fits(v: &Wide, bits: u32) -> bool {
    v.bits() <= u64::from(bits)
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FlowError {
    #[error("prefix length {length} exceeds field width {width}")]
    PrefixLength { length: u32, width: u32 },
    #[error("prefix value has bits set below the prefix (width {width}, length {length})")]
    PrefixBits { width: u32, length: u32 },
    #[error("value does not fit in {width} bits")]
    ValueWidth { width: u32 },
    #[error("range lo exceeds hi")]
    RangeOrder,
    #[error("field count {got} does not match schema ({want})")]
    FieldCount { got: usize, want: usize },
    #[error("field width mismatch against schema field `{0}`")]
    SchemaWidth(String),
    #[error("duplicate flow id {0}")]
    DuplicateId(u64),
}

/// A bit-prefix over a `width`-bit field: the top `length` bits of `value`
/// are significant, the rest must be zero.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Prefix {
    value: Wide,
    length: u32,
    width: u32,
}

impl Prefix {
    pub fn new(value: Wide, length: u32, width: u32) -> Result<Self, FlowError> {
        if length > width {
            return Err(FlowError::PrefixLength { length, width });
        }
        if !fits(&value, width) {
            return Err(FlowError::ValueWidth { width });
        }
        let free = width - length;
        if free < width && (&value & all_ones(free)) != Wide::ZERO {
            return Err(FlowError::PrefixBits { width, length });
        }
        if free == width && value != Wide::ZERO {
            // zero-length prefix is the full wildcard; its value must be 0
            return Err(FlowError::PrefixBits { width, length });
        }
        Ok(Prefix { value, length, width })
    }

    /// Full wildcard over a field.
    pub fn any(width: u32) -> Self {
        Prefix { value: Wide::ZERO, length: 0, width }
    }

    /// Exact value: a prefix of full length.
    pub fn exact(value: Wide, width: u32) -> Result<Self, FlowError> {
        Prefix::new(value, width, width)
    }

    pub fn value(&self) -> &Wide {
        &self.value
    }

    pub fn length(&self) -> u32 {
        self.length
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    /// The closed integer interval covered by this prefix:
    /// `[value, value | 2^(width-length) - 1]`.
    pub fn to_range(&self) -> Range {
        let lo = self.value.clone();
        let hi = &self.value | all_ones(self.width - self.length);
        Range { lo, hi, width: self.width }
    }

    pub fn contains(&self, x: &Wide) -> bool {
        let free = self.width - self.length;
        (x >> free) == (&self.value >> free)
    }
}

/// A closed interval `[lo, hi]` over `width`-bit values.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Range {
    pub lo: Wide,
    pub hi: Wide,
    pub width: u32,
}

impl Range {
    pub fn new(lo: Wide, hi: Wide, width: u32) -> Result<Self, FlowError> {
        if lo > hi {
            return Err(FlowError::RangeOrder);
        }
        if !fits(&hi, width) {
            return Err(FlowError::ValueWidth { width });
        }
        Ok(Range { lo, hi, width })
    }

    pub fn point(v: Wide, width: u32) -> Result<Self, FlowError> {
        Range::new(v.clone(), v, width)
    }

    /// Containment is closed on both ends.
    pub fn contains(&self, x: &Wide) -> bool {
        self.lo <= *x && *x <= self.hi
    }

    pub fn overlaps(&self, other: &Range) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }

    /// Number of values covered.
    pub fn size(&self) -> Wide {
        &self.hi - &self.lo + 1u8
    }
}

/// A match rule: two prefix fields, one exact value per remaining schema
/// field, a priority and an opaque action token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Flow {
    pub id: u64,
    pub priority: u32,
    pub action: String,
    pub sa: Prefix,
    pub da: Prefix,
    /// Exact-field values in schema order.
    pub exact: Vec<Wide>,
}

impl Flow {
    /// Validates widths against `schema`.
    pub fn validate(&self, schema: &FieldSchema) -> Result<(), FlowError> {
        if self.exact.len() != schema.exact_indices().len() {
            return Err(FlowError::FieldCount {
                got: self.exact.len(),
                want: schema.exact_indices().len(),
            });
        }
        if self.sa.width() != schema.sa_bits() {
            return Err(FlowError::SchemaWidth("sa".into()));
        }
        if self.da.width() != schema.da_bits() {
            return Err(FlowError::SchemaWidth("da".into()));
        }
        for (slot, &idx) in schema.exact_indices().iter().enumerate() {
            let def = &schema.fields()[idx];
            if !fits(&self.exact[slot], def.width_bits) {
                return Err(FlowError::SchemaWidth(def.name.clone()));
            }
        }
        Ok(())
    }

    /// Same match fields and priority (id and action are ignored);
    /// this is the identity used by the update-time F check.
    pub fn same_match(&self, other: &Flow) -> bool {
        self.priority == other.priority
            && self.sa == other.sa
            && self.da == other.da
            && self.exact == other.exact
    }
}

/// A packet header: one value per schema field, in schema order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Packet {
    pub values: Vec<Wide>,
}

impl Packet {
    pub fn validate(&self, schema: &FieldSchema) -> Result<(), FlowError> {
        if self.values.len() != schema.field_count() {
            return Err(FlowError::FieldCount {
                got: self.values.len(),
                want: schema.field_count(),
            });
        }
        for (v, def) in self.values.iter().zip(schema.fields()) {
            if !fits(v, def.width_bits) {
                return Err(FlowError::SchemaWidth(def.name.clone()));
            }
        }
        Ok(())
    }

    pub fn sa(&self, schema: &FieldSchema) -> &Wide {
        &self.values[schema.sa_index()]
    }

    pub fn da(&self, schema: &FieldSchema) -> &Wide {
        &self.values[schema.da_index()]
    }
}

/// True iff every header field of `pkt` matches `flow`: prefix containment
/// for SA/DA, equality for exact fields.
pub fn flow_matches(schema: &FieldSchema, flow: &Flow, pkt: &Packet) -> Result<bool, FlowError> {
    if pkt.values.len() != schema.field_count() {
        return Err(FlowError::FieldCount {
            got: pkt.values.len(),
            want: schema.field_count(),
        });
    }
    if flow.exact.len() != schema.exact_indices().len() {
        return Err(FlowError::FieldCount {
            got: flow.exact.len(),
            want: schema.exact_indices().len(),
        });
    }
    for (slot, &idx) in schema.exact_indices().iter().enumerate() {
        if flow.exact[slot] != pkt.values[idx] {
            return Ok(false);
        }
    }
    Ok(flow.sa.contains(pkt.sa(schema)) && flow.da.contains(pkt.da(schema)))
}

/// Two flows overlap iff a single packet may match both and the priorities
/// are equal: per-field constraint intersections must all be nonempty.
pub fn overlap_check(f1: &Flow, f2: &Flow) -> bool {
    if f1.priority != f2.priority {
        return false;
    }
    if f1.exact != f2.exact {
        return false;
    }
    f1.sa.to_range().overlaps(&f2.sa.to_range()) && f1.da.to_range().overlaps(&f2.da.to_range())
}

/// A schema plus its flows. Overlap restrictions are enforced when flows
/// are inserted through the engine, not at table construction.
#[derive(Clone, Debug)]
pub struct FlowTable {
    pub schema: FieldSchema,
    pub flows: Vec<Flow>,
}

impl FlowTable {
    pub fn new(schema: FieldSchema, flows: Vec<Flow>) -> Result<Self, FlowError> {
        let mut seen = std::collections::BTreeSet::new();
        for f in &flows {
            f.validate(&schema)?;
            if !seen.insert(f.id) {
                return Err(FlowError::DuplicateId(f.id));
            }
        }
        Ok(FlowTable { schema, flows })
    }

    pub fn len(&self) -> usize {
        self.flows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flows.is_empty()
    }
}
