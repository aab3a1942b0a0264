//! Benchmark reports: memory, heights, latency and throughput of one
//! engine/simulator run, plus static reference figures for competing
//! schemes.

use serde::Serialize;

use crate::engine::{Engine, UpdateError, UpdateOp};
use crate::flow::{FlowTable, Packet};
use crate::oracle::OracleTable;
use crate::sim::{PipelineSim, SimConfig, SimError, SimStats, WriteBubble};

/// Published figures for other hardware classification schemes, included
/// in reports for context. These are reported reference numbers, not
/// measurements made by this tool.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ReferenceFigure {
    pub approach: &'static str,
    pub clock_mhz: f64,
    pub pipeline_stages: Option<u32>,
    pub bytes_per_flow_104: Option<f64>,
    pub bytes_per_flow_356: Option<f64>,
    pub source: &'static str,
}

pub const REFERENCE_FIGURES: &[ReferenceFigure] = &[
    ReferenceFigure {
        approach: "TCAM",
        clock_mhz: 360.0,
        pipeline_stages: Some(1),
        bytes_per_flow_104: Some(13.0),
        bytes_per_flow_356: Some(44.5),
        source: "reported",
    },
    ReferenceFigure {
        approach: "FSBV",
        clock_mhz: 167.0,
        pipeline_stages: Some(7),
        bytes_per_flow_104: Some(29.0),
        bytes_per_flow_356: Some(99.23),
        source: "reported",
    },
    ReferenceFigure {
        approach: "StrideBV",
        clock_mhz: 105.0,
        pipeline_stages: Some(89),
        bytes_per_flow_104: Some(156.0),
        bytes_per_flow_356: Some(534.0),
        source: "reported",
    },
    ReferenceFigure {
        approach: "decision-tree",
        clock_mhz: 125.0,
        pipeline_stages: Some(16),
        bytes_per_flow_104: None,
        bytes_per_flow_356: None,
        source: "reported",
    },
    ReferenceFigure {
        approach: "BV-pipelined",
        clock_mhz: 324.0,
        pipeline_stages: None,
        bytes_per_flow_104: None,
        bytes_per_flow_356: None,
        source: "reported",
    },
];

#[derive(Clone, Debug, Serialize)]
pub struct Heights {
    pub sst: u32,
    pub dst: u32,
    pub per_group: Vec<(u32, u32)>,
}

#[derive(Clone, Debug, Serialize)]
pub struct MemorySummary {
    pub data_bytes: u64,
    pub overhead_bytes: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub n: usize,
    pub k: usize,
    pub header_bits: u32,
    pub heights: Heights,
    /// stage count plus one resolver cycle
    pub latency_cycles: u64,
    pub throughput_pkts_per_cycle: f64,
    pub clock_mhz: f64,
    pub projected_mpps: f64,
    pub data_bytes_per_flow: f64,
    pub overhead_bytes_per_flow: f64,
    pub memory: MemorySummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimStats>,
    pub reference_comparisons: &'static [ReferenceFigure],
}

impl Report {
    pub fn from_engine(engine: &Engine, sim: Option<&SimStats>, clock_mhz: f64) -> Self {
        let (h_sst, h_dst) = engine.heights();
        let mem = engine.memory();
        let flows = engine.flow_count().max(1) as f64;
        let throughput = sim.map(|s| s.throughput()).unwrap_or(0.0);
        Report {
            n: engine.flow_count(),
            k: engine.group_count(),
            header_bits: engine.schema().header_bits(),
            heights: Heights { sst: h_sst, dst: h_dst, per_group: engine.per_group_heights() },
            latency_cycles: u64::from(h_sst) + u64::from(h_dst) + 1,
            throughput_pkts_per_cycle: throughput,
            clock_mhz,
            projected_mpps: throughput * clock_mhz,
            data_bytes_per_flow: mem.data_bits as f64 / 8.0 / flows,
            overhead_bytes_per_flow: mem.overhead_bits as f64 / 8.0 / flows,
            memory: MemorySummary { data_bytes: mem.data_bytes, overhead_bytes: mem.overhead_bytes },
            sim: sim.cloned(),
            reference_comparisons: REFERENCE_FIGURES,
        }
    }

    pub fn csv_header() -> &'static str {
        "n,k,h_sst,h_dst,latency_cycles,throughput_pkts_per_cycle,projected_mpps,data_bytes_per_flow,overhead_bytes_per_flow"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.6},{:.3},{:.3},{:.3}",
            self.n,
            self.k,
            self.heights.sst,
            self.heights.dst,
            self.latency_cycles,
            self.throughput_pkts_per_cycle,
            self.projected_mpps,
            self.data_bytes_per_flow,
            self.overhead_bytes_per_flow
        )
    }
}

/// Outcome of one replayed update.
#[derive(Clone, Debug, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case", tag = "outcome")]
pub enum OpOutcome {
    Applied { nodes_written: usize },
    Refused { conflicting: u64 },
    Rejected { reason: String },
}

/// Applies a trace of updates to the engine, recording per-op outcomes.
pub fn replay_updates(engine: &mut Engine, ops: &[UpdateOp]) -> Vec<OpOutcome> {
    ops.iter()
        .map(|op| match engine.apply(op) {
            Ok(applied) => OpOutcome::Applied { nodes_written: applied.writes.len() },
            Err(UpdateError::Refused { conflicting }) => OpOutcome::Refused { conflicting },
            Err(e) => OpOutcome::Rejected { reason: e.to_string() },
        })
        .collect()
}

/// Replays updates through the oracle's own accept/refuse logic; the
/// engine outcomes must agree, which the acceptance suite asserts.
pub fn oracle_replay(oracle: &mut OracleTable, ops: &[UpdateOp]) -> Vec<OpOutcome> {
    ops.iter()
        .map(|op| match op {
            UpdateOp::Modify(f) => match oracle.find_same_match(f) {
                Some(id) => {
                    oracle.set_action(id, &f.action);
                    OpOutcome::Applied { nodes_written: 0 }
                }
                None => OpOutcome::Rejected { reason: "no match".into() },
            },
            UpdateOp::Delete(f) => match oracle.find_same_match(f) {
                Some(id) => {
                    oracle.delete(id);
                    OpOutcome::Applied { nodes_written: 0 }
                }
                None => OpOutcome::Rejected { reason: "no match".into() },
            },
            UpdateOp::Insert(f) => {
                if oracle.find_same_match(f).is_some() {
                    OpOutcome::Rejected { reason: "already present".into() }
                } else if let Some(conflicting) = oracle.overlap(f) {
                    OpOutcome::Refused { conflicting }
                } else {
                    oracle.insert(f.clone());
                    OpOutcome::Applied { nodes_written: 0 }
                }
            }
        })
        .collect()
}

/// Builds the engine, streams the packet trace through the simulator
/// (updates, when given, ride write bubbles spread across the stream)
/// and assembles the report.
pub fn bench(
    table: &FlowTable,
    packets: &[Packet],
    updates: &[UpdateOp],
    target_k: Option<usize>,
    cfg: &SimConfig,
) -> Result<(Report, Engine), BenchError> {
    let mut engine = Engine::build_auto(table, target_k)?;
    let mut sim = PipelineSim::from_engine(&engine, cfg)?;

    if updates.is_empty() {
        for p in packets {
            sim.enqueue_packet(p)?;
        }
        sim.run_until_drained();
    } else {
        // spread updates evenly through the packet stream
        let spacing = packets.len().div_ceil(updates.len() + 1).max(1);
        let mut next_update = 0usize;
        for (i, p) in packets.iter().enumerate() {
            if i % spacing == 0 && i > 0 && next_update < updates.len() {
                apply_as_bubble(&mut engine, &mut sim, &updates[next_update])?;
                next_update += 1;
            }
            sim.enqueue_packet(p)?;
        }
        while next_update < updates.len() {
            apply_as_bubble(&mut engine, &mut sim, &updates[next_update])?;
            next_update += 1;
        }
        sim.run_until_drained();
    }

    let stats = sim.stats().clone();
    let report = Report::from_engine(&engine, Some(&stats), cfg.clock_mhz);
    Ok((report, engine))
}

fn apply_as_bubble(
    engine: &mut Engine,
    sim: &mut PipelineSim,
    op: &UpdateOp,
) -> Result<(), BenchError> {
    let applied = match engine.apply(op) {
        Ok(a) => a,
        // refusals and misses write nothing; the stream continues
        Err(_) => return Ok(()),
    };
    let (h_sst, h_dst) = engine.heights();
    let (s_sst, s_dst) = sim.heights();
    if h_sst > s_sst || h_dst > s_dst {
        // the update deepened a tree: drain and re-provision the pipeline
        sim.run_until_drained();
        sim.reload_from_engine(engine);
        return Ok(());
    }
    let bubble = WriteBubble::from_node_writes(&applied.writes, s_sst);
    sim.enqueue_bubble(bubble)?;
    Ok(())
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Engine(#[from] crate::engine::EngineError),
    #[error(transparent)]
    Sim(#[from] SimError),
}
