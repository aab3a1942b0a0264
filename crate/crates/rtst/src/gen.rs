//! Deterministic random table, packet-trace and update-trace generation.
//!
//! Everything derives from a single `u64` seed through a splitmix64
//! stream, so identical configurations produce byte-identical output on
//! every platform.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::engine::UpdateOp;
use crate::flow::{all_ones, overlap_check, Flow, FlowTable, Packet, Prefix, Wide};
use crate::schema::{FieldKind, FieldSchema};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GenError {
    #[error("min prefix length {0} exceeds a prefix field width")]
    MinPrefixLen(u32),
    #[error("cannot draw {want} distinct source prefixes from a {width}-bit field")]
    SaSpaceTooSmall { want: usize, width: u32 },
}

/// splitmix64; small, seedable and stable.
#[derive(Clone, Debug)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, n)`; returns 0 for `n == 0`.
    pub fn below(&mut self, n: u64) -> u64 {
        if n == 0 {
            return 0;
        }
        // modulo bias is irrelevant at the sizes used here
        self.next_u64() % n
    }

    pub fn chance(&mut self, percent: u64) -> bool {
        self.below(100) < percent
    }

    /// Uniform `bits`-wide value.
    pub fn wide_bits(&mut self, bits: u32) -> Wide {
        let mut bytes = Vec::with_capacity(bits.div_ceil(8) as usize);
        let mut left = bits;
        while left > 0 {
            bytes.push((self.next_u64() & 0xff) as u8);
            left = left.saturating_sub(8);
        }
        Wide::from_bytes_le(&bytes) & all_ones(bits)
    }

    /// Uniform in `[0, n)` over wide values; `n` must be nonzero.
    pub fn wide_below(&mut self, n: &Wide) -> Wide {
        let bits = n.bits() as u32;
        self.wide_bits(bits + 8) % n
    }
}

#[derive(Clone, Debug)]
pub struct GenConfig {
    pub schema: FieldSchema,
    pub n_flows: usize,
    pub seed: u64,
    /// Prefix lengths are drawn uniformly from `[min_prefix_len, width]`.
    pub min_prefix_len: u32,
    /// Draw pairwise-disjoint source prefixes (distinct full-length
    /// values) so any group count is feasible downstream.
    pub disjoint_sa: bool,
    pub n_actions: u64,
}

impl GenConfig {
    pub fn new(schema: FieldSchema, n_flows: usize, seed: u64) -> Self {
        GenConfig { schema, n_flows, seed, min_prefix_len: 8, disjoint_sa: false, n_actions: 8 }
    }
}

fn random_prefix(rng: &mut Rng, width: u32, min_len: u32) -> Prefix {
    let span = u64::from(width - min_len) + 1;
    let length = min_len + rng.below(span) as u32;
    let raw = rng.wide_bits(width);
    let value = (raw >> (width - length)) << (width - length);
    Prefix::new(value, length, width).expect("masked value fits")
}

/// Random flows with random priorities, random SA/DA prefix lengths and
/// uniform exact fields.
pub fn generate_table(cfg: &GenConfig) -> Result<FlowTable, GenError> {
    let schema = &cfg.schema;
    let min_len = cfg.min_prefix_len;
    if min_len > schema.sa_bits() || min_len > schema.da_bits() {
        return Err(GenError::MinPrefixLen(min_len));
    }
    if cfg.disjoint_sa
        && schema.sa_bits() < 64
        && (cfg.n_flows as u128) > (1u128 << schema.sa_bits())
    {
        return Err(GenError::SaSpaceTooSmall { want: cfg.n_flows, width: schema.sa_bits() });
    }
    let mut rng = Rng::new(cfg.seed);
    let mut flows = Vec::with_capacity(cfg.n_flows);
    let mut used_sa = BTreeSet::new();
    for id in 0..cfg.n_flows as u64 {
        let sa = if cfg.disjoint_sa {
            loop {
                let v = rng.wide_bits(schema.sa_bits());
                if used_sa.insert(v.clone()) {
                    break Prefix::exact(v, schema.sa_bits()).expect("full-length prefix");
                }
            }
        } else {
            random_prefix(&mut rng, schema.sa_bits(), min_len)
        };
        let da = random_prefix(&mut rng, schema.da_bits(), min_len);
        let exact = schema
            .exact_indices()
            .iter()
            .map(|&i| rng.wide_bits(schema.fields()[i].width_bits))
            .collect();
        flows.push(Flow {
            id,
            priority: rng.below(1 << 16) as u32,
            action: format!("act{}", rng.below(cfg.n_actions)),
            sa,
            da,
            exact,
        });
    }
    Ok(FlowTable::new(schema.clone(), flows).expect("generated ids are unique"))
}

/// Packet trace: half the packets are drawn inside a random flow's match
/// ranges, half are uniform random headers.
pub fn generate_packets(table: &FlowTable, n: usize, seed: u64) -> Vec<Packet> {
    let schema = &table.schema;
    let mut rng = Rng::new(seed ^ 0x7061_636b_6574_7321);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let hit = !table.flows.is_empty() && rng.chance(50);
        let pkt = if hit {
            let f = &table.flows[rng.below(table.flows.len() as u64) as usize];
            let mut values = Vec::with_capacity(schema.field_count());
            let mut exact_slot = 0usize;
            for (i, def) in schema.fields().iter().enumerate() {
                let v = match def.kind {
                    FieldKind::Prefix => {
                        let r = if i == schema.sa_index() {
                            f.sa.to_range()
                        } else {
                            f.da.to_range()
                        };
                        &r.lo + rng.wide_below(&r.size())
                    }
                    FieldKind::Exact => {
                        let v = f.exact[exact_slot].clone();
                        exact_slot += 1;
                        v
                    }
                };
                values.push(v);
            }
            Packet { values }
        } else {
            Packet {
                values: schema
                    .fields()
                    .iter()
                    .map(|def| rng.wide_bits(def.width_bits))
                    .collect(),
            }
        };
        out.push(pkt);
    }
    out
}

/// Update trace: a mix of modifies, deletes, fresh inserts, deliberate
/// same-priority conflicts (which the engine must refuse) and re-inserts
/// of previously deleted flows (which should reuse invalidated slots).
pub fn generate_updates(table: &FlowTable, n_ops: usize, seed: u64) -> Vec<UpdateOp> {
    let schema = &table.schema;
    let mut rng = Rng::new(seed ^ 0x7570_6461_7465_7321);
    let mut live: Vec<Flow> = table.flows.clone();
    let mut dead: Vec<Flow> = Vec::new();
    let mut next_id = table.flows.iter().map(|f| f.id + 1).max().unwrap_or(0);
    let mut ops = Vec::with_capacity(n_ops);

    let fresh = |rng: &mut Rng, next_id: &mut u64| {
        let id = *next_id;
        *next_id += 1;
        Flow {
            id,
            priority: rng.below(1 << 16) as u32,
            action: format!("act{}", rng.below(8)),
            sa: random_prefix(rng, schema.sa_bits(), schema.sa_bits().min(8)),
            da: random_prefix(rng, schema.da_bits(), schema.da_bits().min(8)),
            exact: schema
                .exact_indices()
                .iter()
                .map(|&i| rng.wide_bits(schema.fields()[i].width_bits))
                .collect(),
        }
    };

    for _ in 0..n_ops {
        let roll = rng.below(100);
        if roll < 25 && !live.is_empty() {
            // modify: same match fields, new action
            let i = rng.below(live.len() as u64) as usize;
            let mut f = live[i].clone();
            f.action = format!("act{}", rng.below(8));
            live[i].action = f.action.clone();
            ops.push(UpdateOp::Modify(f));
        } else if roll < 45 && !live.is_empty() {
            let i = rng.below(live.len() as u64) as usize;
            let f = live.remove(i);
            dead.push(f.clone());
            ops.push(UpdateOp::Delete(f));
        } else if roll < 60 && !live.is_empty() {
            // deliberate conflict: widen a live flow's SA by one bit so it
            // overlaps at equal priority without being identical
            let i = rng.below(live.len() as u64) as usize;
            let src = &live[i];
            if src.sa.length() > 0 {
                let mut f = src.clone();
                f.id = next_id;
                next_id += 1;
                let len = src.sa.length() - 1;
                let w = src.sa.width();
                let value = (src.sa.value() >> (w - len.max(1))) << (w - len.max(1));
                let value = if len == 0 { Wide::ZERO } else { value };
                f.sa = Prefix::new(value, len, w).expect("shortened prefix");
                ops.push(UpdateOp::Insert(f));
                continue;
            }
            let f = fresh(&mut rng, &mut next_id);
            if !live.iter().any(|g| overlap_check(g, &f)) {
                live.push(f.clone());
            }
            ops.push(UpdateOp::Insert(f));
        } else if roll < 80 && !dead.is_empty() {
            // resurrect a deleted flow under a new id
            let i = rng.below(dead.len() as u64) as usize;
            let mut f = dead.remove(i);
            f.id = next_id;
            next_id += 1;
            if !live.iter().any(|g| overlap_check(g, &f) || g.same_match(&f)) {
                live.push(f.clone());
            }
            ops.push(UpdateOp::Insert(f));
        } else {
            let f = fresh(&mut rng, &mut next_id);
            if !live.iter().any(|g| overlap_check(g, &f) || g.same_match(&f)) {
                live.push(f.clone());
            }
            ops.push(UpdateOp::Insert(f));
        }
    }
    ops
}
