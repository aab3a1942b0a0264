//! Brute-force reference implementations used for equivalence testing.
//!
//! Nothing here shares traversal logic with the tree or the engine: the
//! oracle is linear scans over a flat flow list, kept deliberately slow
//! and obvious.

use crate::flow::{flow_matches, overlap_check, Flow, FlowTable, Packet, Range, Wide};
use crate::schema::FieldSchema;
use crate::tree::Payload;

/// A flat mirror of the flow set: every committed engine update is
/// replayed onto it by the caller.
#[derive(Clone, Debug)]
pub struct OracleTable {
    pub schema: FieldSchema,
    pub flows: Vec<(Flow, bool)>,
}

impl OracleTable {
    pub fn from_table(table: &FlowTable) -> Self {
        OracleTable {
            schema: table.schema.clone(),
            flows: table.flows.iter().map(|f| (f.clone(), true)).collect(),
        }
    }

    pub fn live_count(&self) -> usize {
        self.flows.iter().filter(|(_, live)| *live).count()
    }

    /// Linear scan with `flow_matches`; highest priority wins, ties break
    /// to the lowest flow id.
    pub fn classify(&self, pkt: &Packet) -> Option<(u64, u32)> {
        let mut best: Option<(u64, u32)> = None;
        for (f, live) in &self.flows {
            if !live || !flow_matches(&self.schema, f, pkt).expect("schema-checked flows") {
                continue;
            }
            let better = match best {
                None => true,
                Some((bid, bprio)) => f.priority > bprio || (f.priority == bprio && f.id < bid),
            };
            if better {
                best = Some((f.id, f.priority));
            }
        }
        best
    }

    /// Reference F check: id of a live flow with identical fields and
    /// priority.
    pub fn find_same_match(&self, f: &Flow) -> Option<u64> {
        self.flows
            .iter()
            .filter(|(g, live)| *live && g.same_match(f))
            .map(|(g, _)| g.id)
            .min()
    }

    /// Pairwise overlap scan; lowest conflicting id.
    pub fn overlap(&self, f: &Flow) -> Option<u64> {
        self.flows
            .iter()
            .filter(|(g, live)| *live && overlap_check(g, f))
            .map(|(g, _)| g.id)
            .min()
    }

    pub fn insert(&mut self, f: Flow) {
        self.flows.push((f, true));
    }

    pub fn delete(&mut self, id: u64) {
        for (f, live) in &mut self.flows {
            if f.id == id {
                *live = false;
            }
        }
    }

    pub fn set_action(&mut self, id: u64, action: &str) {
        for (f, live) in &mut self.flows {
            if f.id == id && *live {
                f.action = action.to_string();
            }
        }
    }
}

/// Linear containment scan over a plain range list.
pub fn oracle_search(items: &[(Range, Payload)], key: &Wide) -> Option<Payload> {
    items.iter().find(|(r, _)| r.contains(key)).map(|(_, p)| *p)
}
