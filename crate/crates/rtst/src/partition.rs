//! Splits a flow table into groups of pairwise-disjoint flows and derives
//! the key decomposition each group's trees are built over.
//!
//! Within one group, source ranges are pairwise disjoint or identical;
//! flows sharing an identical source prefix must carry pairwise-disjoint
//! remainder keys. That guarantees at most one match per group for any
//! packet, which is what lets the per-group trees resolve a lookup
//! without backtracking.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{Flow, FlowTable, Packet, Range, Wide};
use crate::schema::FieldSchema;
pub use crate::tree::expected_height;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PartitionError {
    #[error("target of {target} groups is infeasible: flow {flow_id} cannot be placed")]
    TargetInfeasible { target: usize, flow_id: u64 },
}

/// Flow-id groups. Every table flow id appears in exactly one group.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupPlan {
    pub k: usize,
    pub groups: Vec<Vec<u64>>,
}

/// The key searched after the source stage: all exact fields concatenated
/// in schema order (high bits), then the destination prefix (low bits).
/// Putting the only wildcarded bits at the bottom keeps the key one
/// contiguous range.
pub fn dst_key(schema: &FieldSchema, flow: &Flow) -> Range {
    let mut base = Wide::ZERO;
    for (slot, _) in schema.exact_indices().iter().enumerate() {
        let width = schema.fields()[schema.exact_indices()[slot]].width_bits;
        base = (base << width) | &flow.exact[slot];
    }
    let da = flow.da.to_range();
    let da_bits = schema.da_bits();
    let lo = (&base << da_bits) | da.lo;
    let hi = (base << da_bits) | da.hi;
    Range::new(lo, hi, schema.remainder_bits()).expect("prefix range is ordered")
}

/// The corresponding point for a packet header.
pub fn dst_point(schema: &FieldSchema, pkt: &Packet) -> Wide {
    let mut acc = Wide::ZERO;
    for &i in schema.exact_indices() {
        acc = (acc << schema.fields()[i].width_bits) | &pkt.values[i];
    }
    (acc << schema.da_bits()) | &pkt.values[schema.da_index()]
}

struct GroupDraft {
    // distinct source ranges, keyed by lo (disjoint ranges have distinct lo)
    sa_spans: BTreeMap<Wide, Wide>,
    classes: BTreeMap<Wide, ClassDraft>,
}

struct ClassDraft {
    sa_hi: Wide,
    // remainder keys in this class, keyed by lo
    dst: BTreeMap<Wide, Wide>,
}

fn range_fits(map: &BTreeMap<Wide, Wide>, lo: &Wide, hi: &Wide) -> bool {
    if let Some((_, prev_hi)) = map.range::<Wide, _>(..=lo).next_back() {
        if prev_hi >= lo {
            return false;
        }
    }
    if let Some((next_lo, _)) = map.range::<Wide, _>(lo.clone()..).next() {
        if next_lo <= hi {
            return false;
        }
    }
    true
}

/// Greedy first-fit partition. Flows are sorted by (SA lo, SA range
/// size); each joins the first group whose invariants it preserves,
/// otherwise a new group opens.
///
/// When `target_k` is given it is both a balancing hint and a hard cap:
/// each group accepts at most `ceil(units / target_k)` distinct source
/// prefixes (so requesting more groups genuinely spreads the table and
/// shrinks tree heights), and if placement would need more than
/// `target_k` groups the partition fails naming the first flow that
/// could not be placed.
pub fn partition(table: &FlowTable, target_k: Option<usize>) -> Result<GroupPlan, PartitionError> {
    let schema = &table.schema;
    let mut order: Vec<(Wide, Wide, &Flow)> = table
        .flows
        .iter()
        .map(|f| {
            let r = f.sa.to_range();
            let size = r.size();
            (r.lo, size, f)
        })
        .collect();
    order.sort_by(|a, b| (&a.0, &a.1, a.2.id).cmp(&(&b.0, &b.1, b.2.id)));

    // distinct source prefixes across the table
    let mut units = std::collections::BTreeSet::new();
    for f in &table.flows {
        units.insert((f.sa.to_range().lo, f.sa.to_range().hi));
    }
    let class_cap = target_k
        .filter(|&k| k > 0)
        .map(|k| units.len().div_ceil(k).max(1));

    let mut groups: Vec<GroupDraft> = Vec::new();
    let mut plan: Vec<Vec<u64>> = Vec::new();

    for (_, _, f) in order {
        let sa = f.sa.to_range();
        let dk = dst_key(schema, f);
        let mut placed = false;
        for (gi, g) in groups.iter_mut().enumerate() {
            match g.classes.get_mut(&sa.lo) {
                Some(class) if class.sa_hi == sa.hi => {
                    // identical source prefix: remainder keys must stay disjoint
                    if range_fits(&class.dst, &dk.lo, &dk.hi) {
                        class.dst.insert(dk.lo.clone(), dk.hi.clone());
                        plan[gi].push(f.id);
                        placed = true;
                        break;
                    }
                }
                Some(_) => {
                    // same lo but different hi means nested prefixes: overlap
                }
                None => {
                    let sa_ok = range_fits(&g.sa_spans, &sa.lo, &sa.hi);
                    let cap_ok = class_cap.is_none_or(|cap| g.classes.len() < cap);
                    if sa_ok && cap_ok {
                        let mut dst = BTreeMap::new();
                        dst.insert(dk.lo.clone(), dk.hi.clone());
                        g.sa_spans.insert(sa.lo.clone(), sa.hi.clone());
                        g.classes.insert(sa.lo.clone(), ClassDraft { sa_hi: sa.hi.clone(), dst });
                        plan[gi].push(f.id);
                        placed = true;
                        break;
                    }
                }
            }
        }
        if !placed {
            if let Some(k) = target_k {
                if groups.len() >= k {
                    return Err(PartitionError::TargetInfeasible { target: k, flow_id: f.id });
                }
            }
            let mut dst = BTreeMap::new();
            dst.insert(dk.lo.clone(), dk.hi.clone());
            let mut classes = BTreeMap::new();
            let mut sa_spans = BTreeMap::new();
            sa_spans.insert(sa.lo.clone(), sa.hi.clone());
            classes.insert(sa.lo.clone(), ClassDraft { sa_hi: sa.hi.clone(), dst });
            groups.push(GroupDraft { sa_spans, classes });
            plan.push(vec![f.id]);
        }
    }

    Ok(GroupPlan { k: plan.len(), groups: plan })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{flow_matches, Prefix};
    use crate::gen::{generate_packets, generate_table, GenConfig};
    use crate::schema::FieldDef;

    fn w(v: u64) -> Wide {
        Wide::from(v)
    }

    fn mini_schema() -> FieldSchema {
        FieldSchema::new(vec![
            FieldDef::prefix("sa", 8),
            FieldDef::exact("proto", 8),
            FieldDef::prefix("da", 4),
        ])
        .unwrap()
    }

    #[test]
    fn dst_key_concatenates_exacts_then_da() {
        // proto=6 (8 bits) then DA prefix 10* over 4 bits -> [0x68, 0x6B]
        let schema = mini_schema();
        let f = Flow {
            id: 0,
            priority: 0,
            action: "a".into(),
            sa: Prefix::any(8),
            da: Prefix::new(w(0b1000), 2, 4).unwrap(),
            exact: vec![w(6)],
        };
        let k = dst_key(&schema, &f);
        assert_eq!((u64::try_from(&k.lo).unwrap(), u64::try_from(&k.hi).unwrap()), (0x68, 0x6B));
        assert_eq!(k.width, 12);

        // independent enumeration: every 4-bit DA matching 10* must land
        // inside the key range, contiguously
        let mut hits = Vec::new();
        for da in 0..16u64 {
            if da >> 2 == 0b10 {
                hits.push(6 << 4 | da);
            }
        }
        assert_eq!(hits, vec![104, 105, 106, 107]);

        // all fields exact -> degenerate point
        let f2 = Flow {
            id: 1,
            priority: 0,
            action: "a".into(),
            sa: Prefix::any(8),
            da: Prefix::exact(w(9), 4).unwrap(),
            exact: vec![w(6)],
        };
        let k2 = dst_key(&schema, &f2);
        assert_eq!(k2.lo, k2.hi);

        // full-wildcard DA spans the whole low field
        let f3 = Flow {
            id: 2,
            priority: 0,
            action: "a".into(),
            sa: Prefix::any(8),
            da: Prefix::any(4),
            exact: vec![w(6)],
        };
        let k3 = dst_key(&schema, &f3);
        assert_eq!(u64::try_from(&k3.lo).unwrap(), 6 << 4);
        assert_eq!(u64::try_from(&k3.hi).unwrap(), 6 << 4 | 15);
    }

    #[test]
    fn dst_key_order_consistency() {
        let schema = mini_schema();
        let mut rng = crate::gen::Rng::new(17);
        let mk = |rng: &mut crate::gen::Rng| {
            let len = rng.below(5) as u32;
            let v = (rng.below(16) >> (4 - len)) << (4 - len);
            Flow {
                id: 0,
                priority: 0,
                action: "a".into(),
                sa: Prefix::any(8),
                da: Prefix::new(w(v), len, 4).unwrap(),
                exact: vec![w(rng.below(256))],
            }
        };
        for _ in 0..2000 {
            let f1 = mk(&mut rng);
            let f2 = mk(&mut rng);
            let (k1, k2) = (dst_key(&schema, &f1), dst_key(&schema, &f2));
            let remainder_eq = f1.exact == f2.exact && f1.da == f2.da;
            if remainder_eq {
                assert_eq!(k1, k2);
            }
            let remainder_disjoint = f1.exact != f2.exact
                || !f1.da.to_range().overlaps(&f2.da.to_range());
            if remainder_disjoint {
                assert!(!k1.overlaps(&k2), "disjoint remainders must give disjoint keys");
            }
        }
    }

    fn flow_sa(id: u64, value: u64, length: u32, proto: u64, da: (u64, u32), prio: u32) -> Flow {
        Flow {
            id,
            priority: prio,
            action: "a".into(),
            sa: Prefix::new(w(value), length, 8).unwrap(),
            da: Prefix::new(w(da.0), da.1, 4).unwrap(),
            exact: vec![w(proto)],
        }
    }

    #[test]
    fn identical_sa_distinct_remainders_is_one_group() {
        let schema = mini_schema();
        let flows = vec![
            flow_sa(0, 0b1100_0000, 4, 6, (0, 4), 1),
            flow_sa(1, 0b1100_0000, 4, 17, (0, 4), 2),
            flow_sa(2, 0b1100_0000, 4, 6, (8, 4), 3),
        ];
        let table = FlowTable::new(schema, flows).unwrap();
        let plan = partition(&table, None).unwrap();
        assert_eq!(plan.k, 1);
    }

    #[test]
    fn nested_sa_prefixes_need_two_groups() {
        let schema = mini_schema();
        let flows = vec![
            flow_sa(0, 0, 1, 6, (0, 4), 1),
            flow_sa(1, 0, 2, 6, (0, 4), 1),
        ];
        let table = FlowTable::new(schema, flows).unwrap();
        let plan = partition(&table, None).unwrap();
        assert_eq!(plan.k, 2);
    }

    #[test]
    fn disjoint_table_packs_into_one_group() {
        let mut cfg = GenConfig::new(FieldSchema::five_tuple_104(), 1024, 5);
        cfg.disjoint_sa = true;
        let table = generate_table(&cfg).unwrap();
        let plan = partition(&table, None).unwrap();
        assert_eq!(plan.k, 1);
        assert_eq!(plan.groups[0].len(), 1024);
        assert_eq!(expected_height(1024), 7);
    }

    #[test]
    fn target_k_spreads_groups() {
        let mut cfg = GenConfig::new(FieldSchema::five_tuple_104(), 243, 5);
        cfg.disjoint_sa = true;
        let table = generate_table(&cfg).unwrap();
        for k in [1usize, 3, 9] {
            let plan = partition(&table, Some(k)).unwrap();
            assert_eq!(plan.k, k);
            let max = plan.groups.iter().map(|g| g.len()).max().unwrap();
            assert_eq!(max, 243usize.div_ceil(k));
        }
    }

    #[test]
    fn infeasible_target_names_a_flow() {
        let schema = mini_schema();
        // three mutually nested prefixes cannot share any group
        let flows = vec![
            flow_sa(0, 0, 1, 6, (0, 4), 1),
            flow_sa(1, 0, 2, 6, (0, 4), 1),
            flow_sa(2, 0, 3, 6, (0, 4), 1),
        ];
        let table = FlowTable::new(schema, flows).unwrap();
        let err = partition(&table, Some(2)).unwrap_err();
        assert!(matches!(err, PartitionError::TargetInfeasible { target: 2, .. }));
    }

    #[test]
    fn partition_is_a_disjoint_cover_and_groups_match_at_most_once() {
        let cfg = GenConfig::new(FieldSchema::five_tuple_104(), 400, 11);
        let table = generate_table(&cfg).unwrap();
        let plan = partition(&table, None).unwrap();

        let mut seen = std::collections::BTreeSet::new();
        for g in &plan.groups {
            for &id in g {
                assert!(seen.insert(id), "flow {id} appears twice");
            }
        }
        assert_eq!(seen.len(), table.len());

        // at most one flow per group matches any packet
        let by_id: std::collections::BTreeMap<u64, &Flow> =
            table.flows.iter().map(|f| (f.id, f)).collect();
        let pkts = generate_packets(&table, 10_000, 12);
        for pkt in &pkts {
            for g in &plan.groups {
                let matches = g
                    .iter()
                    .filter(|id| flow_matches(&table.schema, by_id[id], pkt).unwrap())
                    .count();
                assert!(matches <= 1);
            }
        }
    }
}
