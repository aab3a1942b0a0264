//! Deterministic cycle-level model of the multi-pipeline lookup
//! architecture.
//!
//! Every tree level maps to one pipeline stage; all group pipelines run
//! in parallel and see the same packets. The pipeline is dual-lane: each
//! stage memory is dual-ported, so two packets advance per cycle and a
//! write bubble can patch two nodes per stage. Source stages come first,
//! destination stages second, and a single resolver stage picks the
//! highest-priority match across groups.
//!
//! Stage timing: a slot injected in cycle `t` does stage `s` work in
//! cycle `t + s` and resolver work in cycle `t + D`, so per-packet
//! latency is `D + 1 = h_sst + h_dst + 1` cycles. Within one cycle a
//! stage serves its reads before bubble writes apply, so a packet
//! injected in the same cycle as a bubble still observes pre-update
//! memory; packets injected later see the updated nodes because the
//! bubble writes each stage one cycle ahead of them.

use std::collections::VecDeque;

use serde::Serialize;
use thiserror::Error;

use crate::engine::{Engine, MatchOutcome, NodeWrite, Section};
use crate::flow::{FlowError, Packet, Wide};
use crate::tree::{NodeSlot, Payload, Rtst, StepOutcome};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("write bubble wants {got} writes in stage {stage}; the dual-ported limit is 2")]
    PortLimit { stage: usize, got: usize },
    #[error("write references stage {stage} but the pipeline has {depth} tree stages")]
    StageOutOfRange { stage: usize, depth: usize },
    #[error("write references group {0} which does not exist")]
    NoSuchGroup(usize),
    #[error("a pipeline needs 1 or 2 lanes, not {0}")]
    LaneCount(usize),
    #[error(transparent)]
    Packet(#[from] FlowError),
}

#[derive(Clone, Copy, Debug)]
pub struct SimConfig {
    pub clock_mhz: f64,
    pub lanes: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { clock_mhz: 337.0, lanes: 2 }
    }
}

/// One stage-memory write carried by a bubble.
#[derive(Clone, Debug)]
pub struct BubbleEntry {
    pub group: usize,
    pub stage: usize,
    pub slot: u64,
    pub node: Option<NodeSlot>,
    pub write_enable: bool,
}

/// A pipeline slot that patches stage memories instead of looking up a
/// packet. At most two writes per stage (the memories are dual-ported).
#[derive(Clone, Debug, Default)]
pub struct WriteBubble {
    entries: Vec<BubbleEntry>,
}

impl WriteBubble {
    pub fn new(entries: Vec<BubbleEntry>) -> Self {
        WriteBubble { entries }
    }

    /// Packs the node writes of one engine update into a bubble.
    pub fn from_node_writes(writes: &[NodeWrite], h_sst: u32) -> Self {
        let entries = writes
            .iter()
            .map(|w| BubbleEntry {
                group: w.group,
                stage: match w.section {
                    Section::Sst => w.level as usize,
                    Section::Dst => (h_sst + w.level) as usize,
                },
                slot: w.slot,
                node: w.node.clone(),
                write_enable: true,
            })
            .collect();
        WriteBubble { entries }
    }

    pub fn entries(&self) -> &[BubbleEntry] {
        &self.entries
    }

    /// Highest stage this bubble writes, if any.
    pub fn max_stage(&self) -> Option<usize> {
        self.entries.iter().filter(|e| e.write_enable).map(|e| e.stage).max()
    }
}

#[derive(Clone, Debug)]
enum GroupProgress {
    /// walking the source tree; slot for the current level
    Sst(u64),
    /// source matched; holds the destination root until its stage
    SstDone(u64),
    /// walking the destination tree
    Dst(u64),
    Done(Option<Payload>),
}

#[derive(Clone, Debug)]
struct PacketJob {
    seq: u64,
    injected: u64,
    sa: Wide,
    dstp: Wide,
    groups: Vec<GroupProgress>,
}

#[derive(Clone, Debug)]
enum Slot {
    Empty,
    Packet(PacketJob),
    Bubble(WriteBubble),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SimResult {
    pub seq: u64,
    pub injected_cycle: u64,
    pub resolved_cycle: u64,
    /// inclusive of the injection and resolver cycles
    pub latency_cycles: u64,
    /// (flow id, priority, action token)
    pub matched: Option<(u64, u32, u32)>,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct SimStats {
    pub cycles: u64,
    pub packets_in: u64,
    pub packets_out: u64,
    pub memory_reads: u64,
    pub memory_writes: u64,
    pub bubbles: u64,
    pub latency_min: u64,
    pub latency_max: u64,
    pub latency_sum: u64,
    /// worst per-stage, per-cycle port usage observed
    pub max_stage_reads: u64,
    pub max_stage_writes: u64,
}

impl SimStats {
    pub fn throughput(&self) -> f64 {
        if self.cycles == 0 {
            0.0
        } else {
            self.packets_out as f64 / self.cycles as f64
        }
    }

    pub fn mean_latency(&self) -> f64 {
        if self.packets_out == 0 {
            0.0
        } else {
            self.latency_sum as f64 / self.packets_out as f64
        }
    }

    pub fn projected_mpps(&self, clock_mhz: f64) -> f64 {
        self.throughput() * clock_mhz
    }
}

struct SimGroup {
    sst: Rtst,
    dst: Rtst,
}

pub struct PipelineSim {
    groups: Vec<SimGroup>,
    schema: crate::schema::FieldSchema,
    h_sst: u32,
    h_dst: u32,
    lanes: usize,
    /// `pipe[lane][stage]`, stage `depth()` being the resolver
    pipe: Vec<Vec<Slot>>,
    packet_q: VecDeque<PacketJob>,
    bubble_q: VecDeque<WriteBubble>,
    next_seq: u64,
    cycle: u64,
    stats: SimStats,
    outputs: Vec<SimResult>,
    /// per-cycle port scratch: (reads, writes) per (group, stage)
    ports: Vec<Vec<(u64, u64)>>,
}

impl PipelineSim {
    /// Snapshots the engine's trees into stage memories.
    pub fn from_engine(engine: &Engine, cfg: &SimConfig) -> Result<Self, SimError> {
        if cfg.lanes == 0 || cfg.lanes > 2 {
            return Err(SimError::LaneCount(cfg.lanes));
        }
        let groups: Vec<SimGroup> = engine
            .group_trees()
            .map(|(sst, dst)| SimGroup { sst: sst.clone(), dst: dst.clone() })
            .collect();
        let (h_sst, h_dst) = engine.heights();
        let depth = (h_sst + h_dst) as usize;
        let ports = groups.iter().map(|_| vec![(0, 0); depth]).collect();
        Ok(PipelineSim {
            schema: engine.schema().clone(),
            groups,
            h_sst,
            h_dst,
            lanes: cfg.lanes,
            pipe: vec![vec![Slot::Empty; depth + 1]; cfg.lanes],
            packet_q: VecDeque::new(),
            bubble_q: VecDeque::new(),
            next_seq: 0,
            cycle: 0,
            stats: SimStats::default(),
            outputs: Vec::new(),
            ports,
        })
    }

    /// Replaces the stage memories with the engine's current trees.
    /// Used after a re-provision; the pipeline must be drained.
    pub fn reload_from_engine(&mut self, engine: &Engine) {
        self.groups = engine
            .group_trees()
            .map(|(sst, dst)| SimGroup { sst: sst.clone(), dst: dst.clone() })
            .collect();
        let (h_sst, h_dst) = engine.heights();
        self.ensure_depth(h_sst, h_dst);
    }

    /// Tree stages; the resolver adds one cycle after them.
    pub fn depth(&self) -> usize {
        (self.h_sst + self.h_dst) as usize
    }

    pub fn heights(&self) -> (u32, u32) {
        (self.h_sst, self.h_dst)
    }

    /// Latency every packet experiences: one cycle per tree stage plus
    /// the resolver.
    pub fn latency_cycles(&self) -> u64 {
        u64::from(self.h_sst) + u64::from(self.h_dst) + 1
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn stats(&self) -> &SimStats {
        &self.stats
    }

    pub fn outputs(&self) -> &[SimResult] {
        &self.outputs
    }

    pub fn enqueue_packet(&mut self, pkt: &Packet) -> Result<u64, SimError> {
        pkt.validate(&self.schema)?;
        let sa = pkt.sa(&self.schema).clone();
        let dstp = crate::partition::dst_point(&self.schema, pkt);
        let seq = self.next_seq;
        self.next_seq += 1;
        self.packet_q.push_back(PacketJob {
            seq,
            injected: 0,
            sa,
            dstp,
            groups: vec![GroupProgress::Sst(0); self.groups.len()],
        });
        Ok(seq)
    }

    /// Queues a bubble; it takes the next lane-0 slot. One bubble enters
    /// per cycle, so queued bubbles ride consecutive slots.
    pub fn enqueue_bubble(&mut self, bubble: WriteBubble) -> Result<(), SimError> {
        let depth = self.depth();
        let mut per_stage = std::collections::BTreeMap::new();
        for e in bubble.entries() {
            if e.group >= self.groups.len() {
                return Err(SimError::NoSuchGroup(e.group));
            }
            if e.stage >= depth {
                return Err(SimError::StageOutOfRange { stage: e.stage, depth });
            }
            if e.write_enable {
                *per_stage.entry(e.stage).or_insert(0usize) += 1;
            }
        }
        if let Some((&stage, &got)) = per_stage.iter().find(|&(_, &c)| c > 2) {
            return Err(SimError::PortLimit { stage, got });
        }
        self.bubble_q.push_back(bubble);
        Ok(())
    }

    /// Grows the pipeline when updates deepen a tree. Only legal while
    /// nothing is in flight.
    pub fn ensure_depth(&mut self, h_sst: u32, h_dst: u32) {
        if self.h_sst >= h_sst && self.h_dst >= h_dst {
            return;
        }
        assert!(
            self.pipe.iter().all(|lane| lane.iter().all(|s| matches!(s, Slot::Empty))),
            "pipeline must be drained before re-provisioning"
        );
        self.h_sst = self.h_sst.max(h_sst);
        self.h_dst = self.h_dst.max(h_dst);
        let depth = self.depth();
        for lane in &mut self.pipe {
            lane.clear();
            lane.resize(depth + 1, Slot::Empty);
        }
        for p in &mut self.ports {
            p.clear();
            p.resize(depth, (0, 0));
        }
    }

    pub fn pending(&self) -> bool {
        !self.packet_q.is_empty()
            || !self.bubble_q.is_empty()
            || self
                .pipe
                .iter()
                .any(|lane| lane.iter().any(|s| !matches!(s, Slot::Empty)))
    }

    /// One clock cycle: shift every lane one stage, inject new slots, let
    /// every tree stage compare-and-forward both lanes (reads before
    /// bubble writes), and resolve finished packets.
    pub fn advance(&mut self) {
        let depth = self.depth();

        // shift; the resolver slot completed last cycle and drains out
        for lane in &mut self.pipe {
            for s in (1..=depth).rev() {
                lane[s] = std::mem::replace(&mut lane[s - 1], Slot::Empty);
            }
        }

        // inject: a queued bubble takes lane 0, packets fill the rest
        let mut lane0_used = false;
        if let Some(b) = self.bubble_q.pop_front() {
            self.pipe[0][0] = Slot::Bubble(b);
            self.stats.bubbles += 1;
            lane0_used = true;
        }
        for lane in 0..self.lanes {
            if lane == 0 && lane0_used {
                continue;
            }
            if let Some(mut job) = self.packet_q.pop_front() {
                job.injected = self.cycle;
                self.stats.packets_in += 1;
                self.pipe[lane][0] = Slot::Packet(job);
            }
        }

        // stage work
        for g in &mut self.ports {
            for p in g.iter_mut() {
                *p = (0, 0);
            }
        }
        for s in 0..depth {
            for lane in 0..self.lanes {
                if let Slot::Packet(job) = &mut self.pipe[lane][s] {
                    Self::packet_stage(
                        &self.groups,
                        self.h_sst,
                        s,
                        job,
                        &mut self.ports,
                        &mut self.stats,
                    );
                }
            }
            for lane in 0..self.lanes {
                let writes: Vec<BubbleEntry> = if let Slot::Bubble(b) = &self.pipe[lane][s] {
                    b.entries()
                        .iter()
                        .filter(|e| e.stage == s && e.write_enable)
                        .cloned()
                        .collect()
                } else {
                    continue;
                };
                for e in writes {
                    let group = &mut self.groups[e.group];
                    let (tree, level) = if (e.stage as u32) < self.h_sst {
                        (&mut group.sst, e.stage as u32)
                    } else {
                        (&mut group.dst, e.stage as u32 - self.h_sst)
                    };
                    tree.write_slot(level, e.slot, e.node);
                    self.stats.memory_writes += 1;
                    let port = &mut self.ports[e.group][s];
                    port.1 += 1;
                    self.stats.max_stage_writes = self.stats.max_stage_writes.max(port.1);
                    debug_assert!(port.1 <= 2, "dual-ported stage write limit");
                }
            }
        }

        // resolver: one extra cycle after the tree stages
        for lane in 0..self.lanes {
            if let Slot::Packet(job) = &self.pipe[lane][depth] {
                let mut best: Option<MatchOutcome> = None;
                for g in &job.groups {
                    let payload = match g {
                        GroupProgress::Done(Some(p)) => *p,
                        _ => continue,
                    };
                    let m = MatchOutcome::from_payload(payload);
                    best = Some(match best {
                        None => m,
                        Some(b) => {
                            if m.priority > b.priority
                                || (m.priority == b.priority && m.flow_id < b.flow_id)
                            {
                                m
                            } else {
                                b
                            }
                        }
                    });
                }
                let latency = self.cycle - job.injected + 1;
                self.stats.packets_out += 1;
                self.stats.latency_sum += latency;
                self.stats.latency_max = self.stats.latency_max.max(latency);
                self.stats.latency_min = if self.stats.packets_out == 1 {
                    latency
                } else {
                    self.stats.latency_min.min(latency)
                };
                self.outputs.push(SimResult {
                    seq: job.seq,
                    injected_cycle: job.injected,
                    resolved_cycle: self.cycle,
                    latency_cycles: latency,
                    matched: best.map(|m| (m.flow_id, m.priority, m.action_token)),
                });
            }
        }

        self.cycle += 1;
        self.stats.cycles = self.cycle;
    }

    fn packet_stage(
        groups: &[SimGroup],
        h_sst: u32,
        stage: usize,
        job: &mut PacketJob,
        ports: &mut [Vec<(u64, u64)>],
        stats: &mut SimStats,
    ) {
        let stage_u = stage as u32;
        for (gi, g) in groups.iter().enumerate() {
            let progress = &mut job.groups[gi];
            if stage_u < h_sst {
                let GroupProgress::Sst(slot) = *progress else { continue };
                match g.sst.step(stage_u, slot, &job.sa) {
                    StepOutcome::Absent => *progress = GroupProgress::Done(None),
                    StepOutcome::Match { payload, .. } => {
                        Self::count_read(ports, stats, gi, stage);
                        *progress = GroupProgress::SstDone(payload.primary);
                    }
                    StepOutcome::Descend { branch } => {
                        Self::count_read(ports, stats, gi, stage);
                        *progress =
                            GroupProgress::Sst(3 * slot + branch.offset().expect("descend"));
                    }
                }
            } else {
                // first destination stage: matched source walks hand over
                if stage_u == h_sst {
                    match *progress {
                        GroupProgress::SstDone(root) => *progress = GroupProgress::Dst(root),
                        // an SST walk that never resolved within the SST
                        // stages is a miss
                        GroupProgress::Sst(_) => *progress = GroupProgress::Done(None),
                        _ => {}
                    }
                }
                let GroupProgress::Dst(slot) = *progress else { continue };
                let level = stage_u - h_sst;
                match g.dst.step(level, slot, &job.dstp) {
                    StepOutcome::Absent => *progress = GroupProgress::Done(None),
                    StepOutcome::Match { payload, .. } => {
                        Self::count_read(ports, stats, gi, stage);
                        *progress = GroupProgress::Done(Some(payload));
                    }
                    StepOutcome::Descend { branch } => {
                        Self::count_read(ports, stats, gi, stage);
                        *progress =
                            GroupProgress::Dst(3 * slot + branch.offset().expect("descend"));
                    }
                }
            }
        }
    }

    fn count_read(ports: &mut [Vec<(u64, u64)>], stats: &mut SimStats, group: usize, stage: usize) {
        stats.memory_reads += 1;
        let port = &mut ports[group][stage];
        port.0 += 1;
        stats.max_stage_reads = stats.max_stage_reads.max(port.0);
        debug_assert!(port.0 <= 2, "dual-ported stage read limit");
    }

    /// Advances until queues and lanes are empty; returns cycles spent.
    pub fn run_until_drained(&mut self) -> u64 {
        let start = self.cycle;
        while self.pending() {
            self.advance();
        }
        self.cycle - start
    }

    #[cfg(test)]
    fn tree_images(&self) -> Vec<Vec<u8>> {
        self.groups
            .iter()
            .flat_map(|g| [g.sst.serialize(), g.dst.serialize()])
            .collect()
    }
}
