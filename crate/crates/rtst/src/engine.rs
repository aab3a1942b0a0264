//! The full classifier: per group one source search tree (SST) over SA
//! ranges whose payloads point at per-prefix destination trees (DSTs)
//! over remainder keys, plus a priority resolver across groups and the
//! update protocol (F check, modify, delete, insert-with-refusal).
//!
//! Each group's per-prefix DSTs live side by side in one multi-root tree
//! so that a group's destination stages share level memories, the same
//! way the pipeline shares stage blocks.
//!
//! DST key payloads pack the flow id into `primary` and
//! `priority << 32 | action_token` into `aux`, so the trees alone carry
//! everything the resolver and the simulator need.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::flow::{overlap_check, Flow, FlowError, FlowTable, Packet, Range, Wide};
use crate::partition::{dst_key, dst_point, GroupPlan};
use crate::schema::FieldSchema;
use crate::tree::{NodeSlot, Payload, Rtst, TraceStep, TreeError};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("plan does not cover the table: {0}")]
    PlanMismatch(String),
    #[error("group {group}: {reason}")]
    InvalidGroup { group: usize, reason: String },
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum UpdateError {
    #[error("an identical flow is already installed as id {0}")]
    AlreadyPresent(u64),
    #[error("flow id {0} is already in use")]
    DuplicateId(u64),
    #[error("insertion refused: overlaps installed flow {conflicting}")]
    Refused { conflicting: u64 },
    #[error("no installed flow matches the request")]
    NoMatch,
    #[error("flow does not fit the schema: {0}")]
    Invalid(String),
}

/// Which tree of a group a write landed in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Section {
    Sst,
    Dst,
}

/// One node written by an update; the simulator turns these into write
/// bubbles.
#[derive(Clone, Debug)]
pub struct NodeWrite {
    pub group: usize,
    pub section: Section,
    pub level: u32,
    pub slot: u64,
    pub node: Option<NodeSlot>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateKind {
    Modify,
    Delete,
    Insert,
}

#[derive(Clone, Debug)]
pub enum UpdateOp {
    Modify(Flow),
    Delete(Flow),
    Insert(Flow),
}

impl UpdateOp {
    pub fn kind(&self) -> UpdateKind {
        match self {
            UpdateOp::Modify(_) => UpdateKind::Modify,
            UpdateOp::Delete(_) => UpdateKind::Delete,
            UpdateOp::Insert(_) => UpdateKind::Insert,
        }
    }

    pub fn flow(&self) -> &Flow {
        match self {
            UpdateOp::Modify(f) | UpdateOp::Delete(f) | UpdateOp::Insert(f) => f,
        }
    }
}

/// Writes performed by one accepted update.
#[derive(Clone, Debug, Default)]
pub struct UpdateApplied {
    pub writes: Vec<NodeWrite>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MatchOutcome {
    pub flow_id: u64,
    pub priority: u32,
    pub action_token: u32,
}

impl MatchOutcome {
    pub fn from_payload(p: Payload) -> Self {
        MatchOutcome {
            flow_id: p.primary,
            priority: (p.aux >> 32) as u32,
            action_token: (p.aux & 0xffff_ffff) as u32,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct ClassifyResult {
    pub best: Option<MatchOutcome>,
    /// Per-group (SST trace, DST trace); populated by
    /// [`Engine::classify_traced`].
    pub per_group_traces: Vec<(Vec<TraceStep>, Vec<TraceStep>)>,
}

struct SaClass {
    sa: Range,
    root: u64,
    live: u64,
    /// every remainder key stored in this class's subtree: lo -> (hi, live)
    dst_keys: BTreeMap<Wide, (Wide, bool)>,
}

struct Group {
    sst: Rtst,
    dst: Rtst,
    classes: BTreeMap<Wide, SaClass>,
}

struct StoredFlow {
    flow: Flow,
    group: usize,
    dst_range: Range,
}

pub struct Engine {
    schema: FieldSchema,
    groups: Vec<Group>,
    flows: BTreeMap<u64, StoredFlow>,
    actions: Vec<String>,
    action_index: BTreeMap<String, u32>,
}

impl Engine {
    /// Builds the engine from a table and a covering group plan: per
    /// group, distinct SA ranges sorted build the SST, and each class's
    /// flows sorted by remainder key build its DST.
    pub fn build(table: &FlowTable, plan: &GroupPlan) -> Result<Self, EngineError> {
        let schema = table.schema.clone();
        let by_id: BTreeMap<u64, &Flow> = table.flows.iter().map(|f| (f.id, f)).collect();
        let mut seen = std::collections::BTreeSet::new();
        for g in &plan.groups {
            for id in g {
                if !by_id.contains_key(id) {
                    return Err(EngineError::PlanMismatch(format!("unknown flow id {id}")));
                }
                if !seen.insert(*id) {
                    return Err(EngineError::PlanMismatch(format!("flow id {id} listed twice")));
                }
            }
        }
        if seen.len() != table.flows.len() {
            return Err(EngineError::PlanMismatch(format!(
                "plan covers {} of {} flows",
                seen.len(),
                table.flows.len()
            )));
        }

        let mut engine = Engine {
            schema,
            groups: Vec::with_capacity(plan.groups.len()),
            flows: BTreeMap::new(),
            actions: Vec::new(),
            action_index: BTreeMap::new(),
        };

        for (gi, ids) in plan.groups.iter().enumerate() {
            // classes keyed by SA range lo; disjoint-or-identical ranges
            // make lo a unique class key
            let mut classes: BTreeMap<Wide, (Range, Vec<&Flow>)> = BTreeMap::new();
            for id in ids {
                let f = by_id[id];
                f.validate(&engine.schema)?;
                let sa = f.sa.to_range();
                match classes.get_mut(&sa.lo) {
                    Some((range, members)) => {
                        if range.hi != sa.hi {
                            return Err(EngineError::InvalidGroup {
                                group: gi,
                                reason: format!("overlapping SA ranges near flow {id}"),
                            });
                        }
                        members.push(f);
                    }
                    None => {
                        classes.insert(sa.lo.clone(), (sa, vec![f]));
                    }
                }
            }
            // SA ranges must be pairwise disjoint
            let spans: Vec<&Range> = classes.values().map(|(r, _)| r).collect();
            for pair in spans.windows(2) {
                if pair[0].hi >= pair[1].lo {
                    return Err(EngineError::InvalidGroup {
                        group: gi,
                        reason: "overlapping SA ranges".into(),
                    });
                }
            }

            let mut sst_items = Vec::with_capacity(classes.len());
            let mut dst_lists = Vec::with_capacity(classes.len());
            let mut class_map = BTreeMap::new();
            for (root, (lo, (sa, members))) in classes.into_iter().enumerate() {
                let root = root as u64;
                sst_items.push((sa.clone(), Payload::new(root, 0)));
                let mut items: Vec<(Range, Payload)> = members
                    .iter()
                    .map(|f| {
                        let r = dst_key(&engine.schema, f);
                        let aux = engine.pack_aux(f);
                        (r, Payload::new(f.id, aux))
                    })
                    .collect();
                items.sort_by(|a, b| a.0.lo.cmp(&b.0.lo));
                for pair in items.windows(2) {
                    if pair[0].0.hi >= pair[1].0.lo {
                        return Err(EngineError::InvalidGroup {
                            group: gi,
                            reason: format!(
                                "overlapping remainder keys under one SA prefix (flows {} and {})",
                                pair[0].1.primary, pair[1].1.primary
                            ),
                        });
                    }
                }
                let mut dst_map = BTreeMap::new();
                for (r, _) in &items {
                    dst_map.insert(r.lo.clone(), (r.hi.clone(), true));
                }
                for f in &members {
                    engine.flows.insert(
                        f.id,
                        StoredFlow {
                            flow: (*f).clone(),
                            group: gi,
                            dst_range: dst_key(&engine.schema, f),
                        },
                    );
                }
                class_map.insert(
                    lo,
                    SaClass { sa, root, live: members.len() as u64, dst_keys: dst_map },
                );
                dst_lists.push(items);
            }

            let sst = Rtst::build_complete(engine.schema.sa_bits(), &sst_items)?;
            let dst = Rtst::build_forest(engine.schema.remainder_bits(), &dst_lists)?;
            engine.groups.push(Group { sst, dst, classes: class_map });
        }
        Ok(engine)
    }

    pub fn build_auto(table: &FlowTable, target_k: Option<usize>) -> Result<Self, EngineError> {
        let plan = crate::partition::partition(table, target_k)
            .map_err(|e| EngineError::PlanMismatch(e.to_string()))?;
        Engine::build(table, &plan)
    }

    fn pack_aux(&mut self, f: &Flow) -> u64 {
        let token = self.intern_action(&f.action);
        (u64::from(f.priority) << 32) | u64::from(token)
    }

    fn intern_action(&mut self, action: &str) -> u32 {
        if let Some(&t) = self.action_index.get(action) {
            return t;
        }
        let t = self.actions.len() as u32;
        self.actions.push(action.to_string());
        self.action_index.insert(action.to_string(), t);
        t
    }

    pub fn action_name(&self, token: u32) -> Option<&str> {
        self.actions.get(token as usize).map(|s| s.as_str())
    }

    pub fn schema(&self) -> &FieldSchema {
        &self.schema
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    pub fn flow_count(&self) -> usize {
        self.flows.len()
    }

    pub fn flow(&self, id: u64) -> Option<&Flow> {
        self.flows.get(&id).map(|s| &s.flow)
    }

    pub fn flows(&self) -> impl Iterator<Item = &Flow> {
        self.flows.values().map(|s| &s.flow)
    }

    /// `(SST, DST)` trees of each group, for the simulator and for dumps.
    pub fn group_trees(&self) -> impl Iterator<Item = (&Rtst, &Rtst)> {
        self.groups.iter().map(|g| (&g.sst, &g.dst))
    }

    /// Max SST and DST heights over the groups: the pipeline's stage
    /// counts.
    pub fn heights(&self) -> (u32, u32) {
        let sst = self.groups.iter().map(|g| g.sst.height()).max().unwrap_or(0);
        let dst = self.groups.iter().map(|g| g.dst.height()).max().unwrap_or(0);
        (sst, dst)
    }

    pub fn per_group_heights(&self) -> Vec<(u32, u32)> {
        self.groups.iter().map(|g| (g.sst.height(), g.dst.height())).collect()
    }

    pub fn prepare(&self, pkt: &Packet) -> Result<(Wide, Wide), FlowError> {
        pkt.validate(&self.schema)?;
        Ok((pkt.sa(&self.schema).clone(), dst_point(&self.schema, pkt)))
    }

    /// Classifies a packet: per group an SST search, then on a source
    /// match a DST search on the packet's remainder point; the best
    /// candidate has maximal priority, ties broken by lowest flow id.
    pub fn classify(&self, pkt: &Packet) -> Result<ClassifyResult, FlowError> {
        let (sa, dstp) = self.prepare(pkt)?;
        let mut best: Option<MatchOutcome> = None;
        for g in &self.groups {
            if let Some(m) = self.classify_group(g, &sa, &dstp) {
                best = Some(match best {
                    None => m,
                    Some(b) => Self::better(b, m),
                });
            }
        }
        Ok(ClassifyResult { best, per_group_traces: Vec::new() })
    }

    /// As [`classify`](Self::classify) but records every visited node.
    pub fn classify_traced(&self, pkt: &Packet) -> Result<ClassifyResult, FlowError> {
        let (sa, dstp) = self.prepare(pkt)?;
        let mut best: Option<MatchOutcome> = None;
        let mut traces = Vec::with_capacity(self.groups.len());
        for g in &self.groups {
            let (sst_hit, sst_trace) = g.sst.search(&sa);
            let mut dst_trace = Vec::new();
            if let Some(p) = sst_hit {
                let (dst_hit, t) = g.dst.search_from(p.primary, &dstp);
                dst_trace = t;
                if let Some(dp) = dst_hit {
                    let m = MatchOutcome::from_payload(dp);
                    best = Some(match best {
                        None => m,
                        Some(b) => Self::better(b, m),
                    });
                }
            }
            traces.push((sst_trace, dst_trace));
        }
        Ok(ClassifyResult { best, per_group_traces: traces })
    }

    fn classify_group(&self, g: &Group, sa: &Wide, dstp: &Wide) -> Option<MatchOutcome> {
        let (sst_hit, _) = g.sst.search(sa);
        let root = sst_hit?.primary;
        let (dst_hit, _) = g.dst.search_from(root, dstp);
        dst_hit.map(MatchOutcome::from_payload)
    }

    fn better(a: MatchOutcome, b: MatchOutcome) -> MatchOutcome {
        if b.priority > a.priority || (b.priority == a.priority && b.flow_id < a.flow_id) {
            b
        } else {
            a
        }
    }

    /// F check: id of an installed flow identical in all fields and
    /// priority.
    pub fn f_check(&self, f: &Flow) -> Option<u64> {
        self.flows
            .values()
            .find(|s| s.flow.same_match(f))
            .map(|s| s.flow.id)
    }

    pub fn apply(&mut self, op: &UpdateOp) -> Result<UpdateApplied, UpdateError> {
        match op {
            UpdateOp::Modify(f) => self.update_modify(f),
            UpdateOp::Delete(f) => self.update_delete(f),
            UpdateOp::Insert(f) => self.update_insert(f),
        }
    }

    /// Replaces the action of the installed flow matching `f`'s fields.
    /// The tree payload is rewritten in place; structure and addresses
    /// are untouched.
    pub fn update_modify(&mut self, f: &Flow) -> Result<UpdateApplied, UpdateError> {
        let id = self.f_check(f).ok_or(UpdateError::NoMatch)?;
        let aux = {
            let token = self.intern_action(&f.action);
            let stored = self.flows.get(&id).expect("f_check hit");
            (u64::from(stored.flow.priority) << 32) | u64::from(token)
        };
        let (group, root, dst_range) = {
            let stored = self.flows.get(&id).expect("f_check hit");
            let class = self.groups[stored.group]
                .classes
                .get(&stored.flow.sa.to_range().lo)
                .expect("stored flow has a class");
            (stored.group, class.root, stored.dst_range.clone())
        };
        let touched = self.groups[group]
            .dst
            .modify_at(root, &dst_range, Payload::new(id, aux))
            .expect("stored flow key is present and valid");
        self.flows.get_mut(&id).unwrap().flow.action = f.action.clone();
        Ok(UpdateApplied { writes: self.collect_writes(group, Section::Dst, &touched) })
    }

    /// Invalidates the flow's remainder key; when the SA prefix has no
    /// remaining live flows the SST entry is invalidated too.
    pub fn update_delete(&mut self, f: &Flow) -> Result<UpdateApplied, UpdateError> {
        let id = self.f_check(f).ok_or(UpdateError::NoMatch)?;
        let stored = self.flows.remove(&id).expect("f_check hit");
        let group = stored.group;
        let sa_lo = stored.flow.sa.to_range().lo;
        let (root, sa_range, live_after) = {
            let class = self.groups[group].classes.get_mut(&sa_lo).expect("class exists");
            class.live -= 1;
            if let Some(entry) = class.dst_keys.get_mut(&stored.dst_range.lo) {
                entry.1 = false;
            }
            (class.root, class.sa.clone(), class.live)
        };
        let mut writes = Vec::new();
        let touched = self.groups[group]
            .dst
            .delete_at(root, &stored.dst_range)
            .expect("stored flow key is present and valid");
        writes.extend(self.collect_writes(group, Section::Dst, &touched));
        if live_after == 0 {
            let touched = self.groups[group]
                .sst
                .delete(&sa_range)
                .expect("class key is present and valid");
            writes.extend(self.collect_writes(group, Section::Sst, &touched));
        }
        Ok(UpdateApplied { writes })
    }

    /// Refuses any same-priority overlap with an installed flow, then
    /// inserts into the first group that keeps its invariants, reusing
    /// invalidated slots where possible; a flow no group admits opens a
    /// new group.
    pub fn update_insert(&mut self, f: &Flow) -> Result<UpdateApplied, UpdateError> {
        f.validate(&self.schema).map_err(|e| UpdateError::Invalid(e.to_string()))?;
        if self.flows.contains_key(&f.id) {
            return Err(UpdateError::DuplicateId(f.id));
        }
        if let Some(id) = self.f_check(f) {
            return Err(UpdateError::AlreadyPresent(id));
        }
        if let Some(conflicting) = self
            .flows
            .values()
            .filter(|s| overlap_check(&s.flow, f))
            .map(|s| s.flow.id)
            .min()
        {
            return Err(UpdateError::Refused { conflicting });
        }

        let sa = f.sa.to_range();
        let dk = dst_key(&self.schema, f);
        let aux = self.pack_aux(f);
        let payload = Payload::new(f.id, aux);

        let target = self
            .groups
            .iter()
            .position(|g| Self::group_admits(g, &sa, &dk));
        let mut writes = Vec::new();
        let group = match target {
            Some(gi) => {
                let (dst_touched, sst_touched) = {
                    let g = &mut self.groups[gi];
                    match g.classes.get_mut(&sa.lo) {
                        Some(class) => {
                            // existing class: insert the remainder key;
                            // revive the SST entry if the class was empty
                            let root = class.root;
                            let was_dead = class.live == 0;
                            class.live += 1;
                            class.dst_keys.retain(|lo, v| {
                                v.1 || !(dk.lo <= v.0 && *lo <= dk.hi)
                            });
                            class.dst_keys.insert(dk.lo.clone(), (dk.hi.clone(), true));
                            let sa_range = class.sa.clone();
                            let dst_touched = g
                                .dst
                                .insert_at(root, dk.clone(), payload)
                                .expect("admission check guarantees the key fits");
                            let sst_touched = if was_dead {
                                g.sst
                                    .insert(sa_range, Payload::new(root, 0))
                                    .expect("reviving an invalidated SST key")
                            } else {
                                Vec::new()
                            };
                            (dst_touched, sst_touched)
                        }
                        None => {
                            // fresh class: new DST root plus a new SST key
                            let root = g.dst.add_root(dk.clone(), payload).expect("width checked");
                            let mut dst_keys = BTreeMap::new();
                            dst_keys.insert(dk.lo.clone(), (dk.hi.clone(), true));
                            g.classes.insert(
                                sa.lo.clone(),
                                SaClass { sa: sa.clone(), root, live: 1, dst_keys },
                            );
                            let sst_touched = g
                                .sst
                                .insert(sa.clone(), Payload::new(root, 0))
                                .expect("admission check guarantees disjoint SA");
                            (vec![(0, root)], sst_touched)
                        }
                    }
                };
                writes.extend(self.collect_writes(gi, Section::Dst, &dst_touched));
                writes.extend(self.collect_writes(gi, Section::Sst, &sst_touched));
                gi
            }
            None => {
                // no group admits the flow: open a new group
                let gi = self.groups.len();
                let sst = Rtst::build_complete(
                    self.schema.sa_bits(),
                    &[(sa.clone(), Payload::new(0, 0))],
                )
                .expect("single key build");
                let dst = Rtst::build_forest(self.schema.remainder_bits(), &[vec![(
                    dk.clone(),
                    payload,
                )]])
                .expect("single key build");
                let mut classes = BTreeMap::new();
                let mut dst_keys = BTreeMap::new();
                dst_keys.insert(dk.lo.clone(), (dk.hi.clone(), true));
                classes.insert(sa.lo.clone(), SaClass { sa: sa.clone(), root: 0, live: 1, dst_keys });
                self.groups.push(Group { sst, dst, classes });
                writes.extend(self.collect_writes(gi, Section::Sst, &[(0, 0)]));
                writes.extend(self.collect_writes(gi, Section::Dst, &[(0, 0)]));
                gi
            }
        };

        self.flows.insert(f.id, StoredFlow { flow: f.clone(), group, dst_range: dk });
        Ok(UpdateApplied { writes })
    }

    /// Whether a group can take a flow without breaking its invariants.
    fn group_admits(g: &Group, sa: &Range, dk: &Range) -> bool {
        match g.classes.get(&sa.lo) {
            Some(class) if class.sa.hi == sa.hi => {
                // identical prefix: the remainder key must be disjoint
                // from live keys and must not straddle a dead stored key
                // (a dead key can only be reused by full containment)
                for (lo, (hi, live)) in &class.dst_keys {
                    if dk.lo > *hi || *lo > dk.hi {
                        continue;
                    }
                    if *live {
                        return false;
                    }
                    if !(*lo <= dk.lo && dk.hi <= *hi) {
                        return false;
                    }
                }
                true
            }
            Some(_) => false, // nested (non-identical, same lo) prefixes overlap
            None => {
                // must be disjoint from every stored class range
                g.classes.values().all(|c| sa.hi < c.sa.lo || c.sa.hi < sa.lo)
            }
        }
    }

    fn collect_writes(&self, group: usize, section: Section, touched: &[(u32, u64)]) -> Vec<NodeWrite> {
        let tree = match section {
            Section::Sst => &self.groups[group].sst,
            Section::Dst => &self.groups[group].dst,
        };
        touched
            .iter()
            .map(|&(level, slot)| NodeWrite {
                group,
                section,
                level,
                slot,
                node: tree.node(level, slot).cloned(),
            })
            .collect()
    }

    /// Engine-level footprint. Data counts each installed flow's full
    /// header width (its SA bits live in the SST, the remainder in a
    /// DST); overhead aggregates the trees' valid bits and level
    /// bookkeeping.
    pub fn memory(&self) -> crate::tree::MemoryFootprint {
        let data_bits = self.flows.len() as u64 * u64::from(self.schema.header_bits());
        let overhead_bits: u64 = self
            .groups
            .iter()
            .map(|g| g.sst.memory().overhead_bits + g.dst.memory().overhead_bits)
            .sum();
        crate::tree::MemoryFootprint {
            data_bytes: data_bits.div_ceil(8),
            overhead_bytes: overhead_bits.div_ceil(8),
            data_bits,
            overhead_bits,
        }
    }
}
